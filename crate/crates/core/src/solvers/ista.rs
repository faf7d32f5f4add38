use std::time::Instant;

use nalgebra::DMatrix;
use num_complex::Complex64;

use super::{check_shapes, SolveResult, SolverConfig, UnfoldedParams, DEFAULT_LAMBDA};
use crate::dictionary::Dictionary;
use crate::error::{Error, Result};
use crate::geometry::{shrink, ComplexSignal, SparseCode};
use crate::linalg;

/// Objective growth (relative to the zero-code objective) treated as divergence.
const DIVERGENCE_FACTOR: f64 = 1e6;

/// `Φz − s` into `out`.
fn residual(a: &DMatrix<Complex64>, z: &[Complex64], s: &[Complex64], out: &mut [Complex64]) {
    linalg::matvec_into(a, z, out);
    for (o, si) in out.iter_mut().zip(s) {
        *o -= si;
    }
}

/// One shrinkage stage: `z ← S_ρ(z − t Φᴴ r)` with `r = Φz − s` precomputed.
fn stage(a: &DMatrix<Complex64>, z: &mut [Complex64], resid: &[Complex64], grad: &mut [Complex64], t: f64, rho: f64) {
    linalg::adjoint_matvec_into(a, resid, grad);
    for (zi, gi) in z.iter_mut().zip(grad.iter()) {
        *zi = shrink(*zi - gi * t, rho);
    }
}

fn l1(z: &[Complex64]) -> f64 {
    z.iter().map(|v| v.norm()).sum()
}

fn check_step(t: f64, rho: f64) -> Result<()> {
    if !(t.is_finite() && t > 0.0) {
        return Err(Error::invalid(format!("step size {t} must be finite and positive")));
    }
    if !(rho.is_finite() && rho >= 0.0) {
        return Err(Error::invalid(format!("threshold {rho} must be finite and nonnegative")));
    }
    Ok(())
}

/// Fixed-parameter ISTA from `z = 0`.
///
/// Stops after `cfg.max_iters` iterations or once the relative objective
/// change drops to `cfg.tol` (`0` runs every iteration). The objective uses `cfg.lambda`; the shrinkage
/// uses `rho` as given.
pub fn ista_solve(d: &Dictionary, s: &ComplexSignal, cfg: &SolverConfig, t: f64, rho: f64) -> Result<SolveResult> {
    check_shapes(d, None, Some(s))?;
    check_step(t, rho)?;
    cfg.validate()?;
    let start = Instant::now();
    let a = d.matrix();
    let grid = d.cols();
    let mut z = vec![Complex64::new(0.0, 0.0); grid];
    let mut r = vec![Complex64::new(0.0, 0.0); d.rows()];
    let mut grad = vec![Complex64::new(0.0, 0.0); grid];
    residual(a, &z, s.values(), &mut r);
    let initial = linalg::norm_sqr(&r);
    let mut objective = initial;

    let grid_dims = d.grid_dims();
    let mut trace = Vec::new();
    let mut recons = Vec::new();
    let mut iterations = 0;
    while iterations < cfg.max_iters {
        stage(a, &mut z, &r, &mut grad, t, rho);
        residual(a, &z, s.values(), &mut r);
        iterations += 1;
        let next = linalg::norm_sqr(&r) + cfg.lambda * l1(&z);
        if !next.is_finite() || (initial > 0.0 && next > DIVERGENCE_FACTOR * initial) {
            return Err(Error::Divergence(format!(
                "ISTA objective reached {next:e} after {iterations} iterations with step size t = {t}; \
                 the step must not exceed 1/L for the dictionary"
            )));
        }
        if cfg.capture_trace {
            let code = SparseCode::new(z.clone(), grid_dims)?;
            let recon: Vec<Complex64> = r.iter().zip(s.values()).map(|(ri, si)| ri + si).collect();
            recons.push(ComplexSignal::new(recon, d.signal_layout(), d.sample_dims())?);
            trace.push(code);
        }
        let change = (objective - next).abs();
        objective = next;
        if cfg.tol > 0.0 && change <= cfg.tol * objective.abs() {
            break;
        }
    }
    Ok(SolveResult {
        code: SparseCode::new(z, grid_dims)?,
        trace,
        reconstructions: recons,
        objective,
        iterations,
        wall_time: start.elapsed().as_secs_f64(),
        dropped_atoms: Vec::new(),
    })
}

/// `N` unfolded stages with per-stage step and threshold; the reported
/// objective uses the default λ.
pub fn unfolded_ista_solve(d: &Dictionary, s: &ComplexSignal, params: &UnfoldedParams, capture: bool) -> Result<SolveResult> {
    unfolded_ista_solve_with(d, s, params, capture, DEFAULT_LAMBDA)
}

pub fn unfolded_ista_solve_with(
    d: &Dictionary,
    s: &ComplexSignal,
    params: &UnfoldedParams,
    capture: bool,
    lambda: f64,
) -> Result<SolveResult> {
    check_shapes(d, None, Some(s))?;
    params.validate()?;
    let start = Instant::now();
    let a = d.matrix();
    let grid = d.cols();
    let grid_dims = d.grid_dims();
    let mut z = vec![Complex64::new(0.0, 0.0); grid];
    let mut r = vec![Complex64::new(0.0, 0.0); d.rows()];
    let mut grad = vec![Complex64::new(0.0, 0.0); grid];
    let mut trace = Vec::new();
    let mut recons = Vec::new();
    for (&t, &rho) in params.step_sizes().iter().zip(params.thresholds()) {
        residual(a, &z, s.values(), &mut r);
        stage(a, &mut z, &r, &mut grad, t, rho);
        if capture {
            trace.push(SparseCode::new(z.clone(), grid_dims)?);
            recons.push(ComplexSignal::new(linalg::matvec(a, &z), d.signal_layout(), d.sample_dims())?);
        }
    }
    residual(a, &z, s.values(), &mut r);
    let objective = linalg::norm_sqr(&r) + lambda * l1(&z);
    Ok(SolveResult {
        code: SparseCode::new(z, grid_dims)?,
        trace,
        reconstructions: recons,
        objective,
        iterations: params.n_stages(),
        wall_time: start.elapsed().as_secs_f64(),
        dropped_atoms: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::{build_freq_dictionary, to_image_domain};
    use crate::forward::{random_scene, scene_to_sparse_code, synthesize_echo, SceneSpec};
    use crate::geometry::RadarGeometry;
    use crate::dictionary::signal_to_image_domain;
    use crate::linalg::spectral_norm_sqr;
    use crate::solvers::lasso_objective;

    fn setup(n_grid: usize, seed: u64, k: usize) -> (Dictionary, ComplexSignal, SparseCode) {
        let g = RadarGeometry::matched(10e9, 1e9, 12, 12, n_grid, n_grid).unwrap();
        let d = to_image_domain(&build_freq_dictionary(&g).unwrap(), &g).unwrap();
        let spec = SceneSpec { n_centers: k, ..SceneSpec::default() };
        let scene = random_scene(&g, &spec, seed).unwrap();
        let s = signal_to_image_domain(&synthesize_echo(&scene).unwrap(), &g).unwrap();
        (d, s, scene_to_sparse_code(&scene).unwrap())
    }

    #[test]
    fn zero_signal_is_a_fixed_point() {
        let (d, s, _) = setup(6, 1, 1);
        let zero = ComplexSignal::zeros(s.layout(), s.dims());
        let res = ista_solve(&d, &zero, &SolverConfig::default(), 0.001, 0.0).unwrap();
        assert_eq!(res.iterations, 1);
        assert!(res.code.values().iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn least_squares_converges_with_safe_step() {
        let (d, s, _) = setup(6, 2, 1);
        let l = spectral_norm_sqr(d.matrix(), 1000, 1e-12);
        let cfg = SolverConfig { max_iters: 500, tol: 0.0, lambda: 0.0, ..SolverConfig::default() };
        let res = ista_solve(&d, &s, &cfg, 0.9 / l, 0.0).unwrap();
        let recon = crate::solvers::reconstruct(&d, &res.code).unwrap();
        let rel = linalg::rel_error(recon.values(), s.values());
        assert!(rel <= 1e-3, "relative residual {rel}");
    }

    #[test]
    fn objective_is_monotone_for_safe_step() {
        for seed in 0..10 {
            let (d, s, _) = setup(6, 100 + seed, 3);
            let l = spectral_norm_sqr(d.matrix(), 1000, 1e-12);
            let t = 1.0 / l;
            let cfg = SolverConfig { max_iters: 60, tol: 0.0, lambda: 5.0, capture_trace: true, ..SolverConfig::default() };
            let res = ista_solve(&d, &s, &cfg, t, t * cfg.lambda / 2.0).unwrap();
            let mut prev = s.norm_sqr();
            for z in &res.trace {
                let obj = lasso_objective(&d, z, &s, cfg.lambda).unwrap();
                assert!(obj <= prev + 1e-10 * prev.max(1.0), "seed {seed}: {obj} > {prev}");
                prev = obj;
            }
        }
    }

    #[test]
    fn oversized_step_diverges() {
        let (d, s, _) = setup(6, 3, 2);
        let err = ista_solve(&d, &s, &SolverConfig::default(), 0.5, 0.0).unwrap_err();
        match err {
            Error::Divergence(msg) => assert!(msg.contains("t = 0.5")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn constant_unfolding_equals_truncated_ista() {
        // few samples keep the default step below 1/L
        let g = RadarGeometry::matched(10e9, 1e9, 4, 4, 4, 4).unwrap();
        let d = to_image_domain(&build_freq_dictionary(&g).unwrap(), &g).unwrap();
        assert!(0.01 * spectral_norm_sqr(d.matrix(), 1000, 1e-12) < 1.0);
        let scene = random_scene(&g, &SceneSpec { n_centers: 2, ..SceneSpec::default() }, 4).unwrap();
        let s = signal_to_image_domain(&synthesize_echo(&scene).unwrap(), &g).unwrap();
        let cfg = SolverConfig { max_iters: 3, tol: 0.0, ..SolverConfig::default() };
        let fixed = ista_solve(&d, &s, &cfg, 0.01, 0.005).unwrap();
        let unfolded = unfolded_ista_solve(&d, &s, &UnfoldedParams::default(), false).unwrap();
        assert_eq!(fixed.iterations, 3);
        assert_eq!(unfolded.iterations, 3);
        assert!(linalg::rel_error(unfolded.code.values(), fixed.code.values()) <= 1e-12);
    }

    #[test]
    fn large_thresholds_zero_everything() {
        let (d, s, _) = setup(6, 5, 3);
        let params = UnfoldedParams::constant(3, 1e-3, 1e9).unwrap();
        let res = unfolded_ista_solve(&d, &s, &params, true).unwrap();
        assert!(res.code.values().iter().all(|v| v.norm() == 0.0));
        assert_eq!(res.trace.len(), 3);
        assert_eq!(res.reconstructions.len(), 3);
    }

    #[test]
    fn tuned_unfolding_finds_single_atom() {
        let (d, s, truth) = setup(8, 6, 1);
        let true_idx = truth.values().iter().position(|v| v.norm() > 0.0).unwrap();
        // exhaustive correlation oracle
        let corr = linalg::adjoint_matvec(d.matrix(), s.values());
        let oracle = (0..corr.len())
            .max_by(|&i, &j| corr[i].norm().partial_cmp(&corr[j].norm()).unwrap())
            .unwrap();
        assert_eq!(oracle, true_idx);
        let l = spectral_norm_sqr(d.matrix(), 1000, 1e-12);
        let params = UnfoldedParams::new(vec![0.9 / l; 3], vec![0.05, 0.02, 0.01]).unwrap();
        let res = unfolded_ista_solve(&d, &s, &params, false).unwrap();
        assert!(res.code.values()[true_idx].norm() > 0.0);
    }

    #[test]
    fn rejects_bad_arguments() {
        let (d, s, _) = setup(4, 7, 1);
        let cfg = SolverConfig::default();
        assert!(ista_solve(&d, &s, &cfg, 0.0, 0.1).is_err());
        assert!(ista_solve(&d, &s, &cfg, 0.1, -0.1).is_err());
        let short = ComplexSignal::zeros(s.layout(), (2, 2));
        assert!(ista_solve(&d, &short, &cfg, 0.1, 0.1).is_err());
    }
}
