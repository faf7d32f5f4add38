use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::{check_shapes, SolveResult};
use crate::dictionary::Dictionary;
use crate::error::{Error, Result};
use crate::geometry::{ComplexSignal, SparseCode};
use crate::linalg;

/// Residual norm, relative to `‖s‖`, at which selection stops early.
const RESIDUAL_STOP: f64 = 1e-10;

/// `|R_kk| / ‖atom‖` below which a newly added atom is treated as dependent.
const RANK_TOL: f64 = 1e-10;

/// Least squares on the selected columns through a Householder QR.
/// Returns `None` when the last column is numerically dependent on the others.
fn solve_support(a: &DMatrix<Complex64>, support: &[usize], s: &[Complex64]) -> Option<Vec<Complex64>> {
    let rows = a.nrows();
    let k = support.len();
    let mut sub = DMatrix::zeros(rows, k);
    for (dst, &j) in support.iter().enumerate() {
        sub.column_mut(dst).copy_from(&a.column(j));
    }
    let new_norm = sub.column(k - 1).norm();
    let qr = sub.qr();
    let r = qr.r();
    if r[(k - 1, k - 1)].norm() <= RANK_TOL * new_norm {
        return None;
    }
    let rhs = qr.q().adjoint() * DVector::from_column_slice(s);
    let coef = r.solve_upper_triangular(&rhs)?;
    Some(coef.iter().copied().collect())
}

/// Orthogonal matching pursuit with at most `k_atoms` atoms.
///
/// Atoms are picked by normalized correlation with the residual, lowest
/// index first on ties, and the coefficients are refit on the whole support
/// after every pick.
pub fn omp_solve(d: &Dictionary, s: &ComplexSignal, k_atoms: usize) -> Result<SolveResult> {
    omp_solve_traced(d, s, k_atoms, false)
}

pub fn omp_solve_traced(d: &Dictionary, s: &ComplexSignal, k_atoms: usize, capture: bool) -> Result<SolveResult> {
    check_shapes(d, None, Some(s))?;
    let cols = d.cols();
    if k_atoms == 0 || k_atoms > cols {
        return Err(Error::invalid(format!("k_atoms must lie in [1, {cols}], got {k_atoms}")));
    }
    let start = Instant::now();
    let a = d.matrix();
    let sv = s.values();
    let s_norm = s.norm();
    let norms: Vec<f64> = (0..cols).map(|j| linalg::norm(d.column(j))).collect();

    let mut available: Vec<bool> = norms.iter().map(|&n| n > 0.0).collect();
    let mut support: Vec<usize> = Vec::with_capacity(k_atoms);
    let mut coef: Vec<Complex64> = Vec::new();
    let mut dropped = Vec::new();
    let mut residual = sv.to_vec();
    let mut corr = vec![Complex64::new(0.0, 0.0); cols];
    let mut trace = Vec::new();
    let mut recons = Vec::new();

    while support.len() < k_atoms && linalg::norm(&residual) > RESIDUAL_STOP * s_norm {
        linalg::adjoint_matvec_into(a, &residual, &mut corr);
        let mut best: Option<(usize, f64)> = None;
        for j in 0..cols {
            if !available[j] {
                continue;
            }
            let score = corr[j].norm() / norms[j];
            if best.is_none_or(|(_, b)| score > b) {
                best = Some((j, score));
            }
        }
        let Some((j, _)) = best else { break };
        available[j] = false;
        support.push(j);
        match solve_support(a, &support, sv) {
            Some(c) => coef = c,
            None => {
                support.pop();
                dropped.push(j);
                continue;
            }
        }
        let mut fit = vec![Complex64::new(0.0, 0.0); d.rows()];
        for (&idx, &c) in support.iter().zip(&coef) {
            for (f, &v) in fit.iter_mut().zip(d.column(idx)) {
                *f += v * c;
            }
        }
        for ((r, &si), f) in residual.iter_mut().zip(sv).zip(&fit) {
            *r = si - f;
        }
        if capture {
            trace.push(scatter(&support, &coef, d.grid_dims())?);
            recons.push(ComplexSignal::new(fit, d.signal_layout(), d.sample_dims())?);
        }
    }

    let code = scatter(&support, &coef, d.grid_dims())?;
    let objective = linalg::norm_sqr(&residual);
    Ok(SolveResult {
        code,
        trace,
        reconstructions: recons,
        objective,
        iterations: support.len(),
        wall_time: start.elapsed().as_secs_f64(),
        dropped_atoms: dropped,
    })
}

fn scatter(support: &[usize], coef: &[Complex64], grid_dims: (usize, usize)) -> Result<SparseCode> {
    let mut z = SparseCode::zeros(grid_dims);
    for (&j, &c) in support.iter().zip(coef) {
        z.values_mut()[j] = c;
    }
    Ok(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::{build_freq_dictionary, signal_to_image_domain, to_image_domain, Domain};
    use crate::forward::{random_scene, scene_to_sparse_code, synthesize_echo, SceneSpec};
    use crate::geometry::{RadarGeometry, SignalLayout};

    fn image_dict(g: &RadarGeometry) -> Dictionary {
        to_image_domain(&build_freq_dictionary(g).unwrap(), g).unwrap()
    }

    fn column_signal(d: &Dictionary, j: usize, amp: Complex64) -> ComplexSignal {
        let v = d.column(j).iter().map(|x| x * amp).collect();
        ComplexSignal::new(v, d.signal_layout(), d.sample_dims()).unwrap()
    }

    #[test]
    fn one_sparse_exact() {
        let g = RadarGeometry::benchmark(8).unwrap();
        let d = image_dict(&g);
        let amp = Complex64::new(2.0, -1.0);
        let s = column_signal(&d, 27, amp);
        let res = omp_solve(&d, &s, 5).unwrap();
        assert_eq!(res.iterations, 1);
        assert!((res.code.values()[27] - amp).norm() <= 1e-9 * amp.norm());
        assert!(res.objective <= 1e-18 * s.norm_sqr());
    }

    #[test]
    fn zero_signal_selects_nothing() {
        let g = RadarGeometry::benchmark(6).unwrap();
        let d = image_dict(&g);
        let res = omp_solve(&d, &ComplexSignal::zeros(SignalLayout::ImageDomain, (6, 6)), 3).unwrap();
        assert_eq!(res.iterations, 0);
        assert!(res.code.values().iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn atom_count_bounds() {
        let g = RadarGeometry::benchmark(4).unwrap();
        let d = image_dict(&g);
        let s = column_signal(&d, 0, Complex64::new(1.0, 0.0));
        assert!(omp_solve(&d, &s, 0).is_err());
        assert!(omp_solve(&d, &s, 17).is_err());
    }

    #[test]
    fn ties_break_to_lowest_index() {
        let m = DMatrix::from_row_slice(2, 3, &[
            Complex64::new(1.0, 0.0), Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0),
            Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0),
        ]);
        let d = Dictionary::from_parts(m, Domain::Image, 0);
        let s = ComplexSignal::new(vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)], SignalLayout::ImageDomain, (2, 1)).unwrap();
        let res = omp_solve(&d, &s, 1).unwrap();
        assert_eq!(res.code.values()[0], Complex64::new(1.0, 0.0));
        assert_eq!(res.code.values()[1], Complex64::new(0.0, 0.0));
    }

    #[test]
    fn duplicate_atom_is_dropped() {
        let c = |re| Complex64::new(re, 0.0);
        // columns 0 and 1 are parallel; column 2 is independent
        let m = DMatrix::from_row_slice(3, 3, &[
            c(1.0), c(2.0), c(0.0),
            c(1.0), c(2.0), c(0.0),
            c(0.0), c(0.0), c(1.0),
        ]);
        let d = Dictionary::from_parts(m, Domain::Image, 0);
        let s = ComplexSignal::new(vec![c(1.0), c(1.0), c(0.5)], SignalLayout::ImageDomain, (3, 1)).unwrap();
        let res = omp_solve(&d, &s, 3).unwrap();
        assert!(res.dropped_atoms.is_empty() || res.dropped_atoms == vec![1]);
        assert!(res.objective < 1e-20);
        // force the parallel column to be considered after its twin
        let s = ComplexSignal::new(vec![c(1.0), c(0.9), c(0.0)], SignalLayout::ImageDomain, (3, 1)).unwrap();
        let res = omp_solve(&d, &s, 3).unwrap();
        assert_eq!(res.dropped_atoms, vec![1]);
        assert_eq!(res.iterations, 2);
    }

    #[test]
    fn residual_orthogonal_to_support() {
        let g = RadarGeometry::matched(10e9, 1e9, 12, 12, 10, 10).unwrap();
        let d = image_dict(&g);
        let spec = SceneSpec { n_centers: 6, snr_db: Some(15.0), ..SceneSpec::default() };
        let scene = random_scene(&g, &spec, 9).unwrap();
        let s = signal_to_image_domain(&synthesize_echo(&scene).unwrap(), &g).unwrap();
        let res = omp_solve_traced(&d, &s, 10, true).unwrap();
        for (code, recon) in res.trace.iter().zip(&res.reconstructions) {
            let resid: Vec<_> = s.values().iter().zip(recon.values()).map(|(a, b)| a - b).collect();
            for (j, v) in code.values().iter().enumerate() {
                if v.norm() > 0.0 {
                    let ip = linalg::dotc(d.column(j), &resid);
                    assert!(ip.norm() <= 1e-8 * s.norm(), "atom {j}: {}", ip.norm());
                }
            }
        }
    }

    #[test]
    fn three_sparse_support_recovery() {
        let g = RadarGeometry::benchmark(16).unwrap();
        let d = image_dict(&g);
        let spec = SceneSpec { n_centers: 3, min_separation: 4, ..SceneSpec::default() };
        let scene = random_scene(&g, &spec, 21).unwrap();
        let truth = scene_to_sparse_code(&scene).unwrap();
        let s = signal_to_image_domain(&synthesize_echo(&scene).unwrap(), &g).unwrap();
        let res = omp_solve(&d, &s, 3).unwrap();
        let support = |z: &SparseCode| -> Vec<usize> {
            (0..z.len()).filter(|&i| z.values()[i].norm() > 1e-9).collect()
        };
        assert_eq!(support(&res.code), support(&truth));

        // brute-force best 3-column fit over the 20 most correlated atoms
        let corr = linalg::adjoint_matvec(d.matrix(), s.values());
        let mut idx: Vec<usize> = (0..corr.len()).collect();
        idx.sort_by(|&i, &j| corr[j].norm().partial_cmp(&corr[i].norm()).unwrap().then(i.cmp(&j)));
        let cand = &idx[..20];
        let mut best = (f64::INFINITY, vec![]);
        for a in 0..20 {
            for b in a + 1..20 {
                for c in b + 1..20 {
                    let mut sup = vec![cand[a], cand[b], cand[c]];
                    sup.sort();
                    let coef = solve_support(d.matrix(), &sup, s.values()).unwrap();
                    let mut r = s.values().to_vec();
                    for (&j, &cf) in sup.iter().zip(&coef) {
                        for (ri, v) in r.iter_mut().zip(d.column(j)) {
                            *ri -= v * cf;
                        }
                    }
                    let err = linalg::norm_sqr(&r);
                    if err < best.0 {
                        best = (err, sup);
                    }
                }
            }
        }
        assert_eq!(best.1, support(&truth));
    }
}
