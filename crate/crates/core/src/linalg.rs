//! Dense complex kernels over column-major matrices.

use nalgebra::DMatrix;
use num_complex::Complex64;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// `A x`, skipping zero entries of `x`.
pub fn matvec(a: &DMatrix<Complex64>, x: &[Complex64]) -> Vec<Complex64> {
    let rows = a.nrows();
    let mut out = vec![ZERO; rows];
    matvec_into(a, x, &mut out);
    out
}

pub fn matvec_into(a: &DMatrix<Complex64>, x: &[Complex64], out: &mut [Complex64]) {
    let rows = a.nrows();
    debug_assert_eq!(x.len(), a.ncols());
    out.iter_mut().for_each(|v| *v = ZERO);
    for (col, &xj) in a.as_slice().chunks_exact(rows).zip(x) {
        if xj == ZERO {
            continue;
        }
        for (o, &aij) in out.iter_mut().zip(col) {
            *o += aij * xj;
        }
    }
}

/// `Aᴴ r`.
pub fn adjoint_matvec(a: &DMatrix<Complex64>, r: &[Complex64]) -> Vec<Complex64> {
    let mut out = vec![ZERO; a.ncols()];
    adjoint_matvec_into(a, r, &mut out);
    out
}

pub fn adjoint_matvec_into(a: &DMatrix<Complex64>, r: &[Complex64], out: &mut [Complex64]) {
    let rows = a.nrows();
    debug_assert_eq!(r.len(), rows);
    for (o, col) in out.iter_mut().zip(a.as_slice().chunks_exact(rows)) {
        *o = dotc(col, r);
    }
}

/// `Σ conj(a_i) b_i`.
#[inline]
pub fn dotc(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    let (mut re, mut im) = (0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        re += x.re * y.re + x.im * y.im;
        im += x.re * y.im - x.im * y.re;
    }
    Complex64::new(re, im)
}

pub fn norm_sqr(v: &[Complex64]) -> f64 {
    v.iter().map(|x| x.norm_sqr()).sum()
}

pub fn norm(v: &[Complex64]) -> f64 {
    norm_sqr(v).sqrt()
}

/// `‖a − b‖ / ‖b‖`, or the absolute error when `b` is zero.
pub fn rel_error(a: &[Complex64], b: &[Complex64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
    let scale = norm(b);
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

/// Largest eigenvalue of `AᴴA` by power iteration.
pub fn spectral_norm_sqr(a: &DMatrix<Complex64>, max_iters: usize, tol: f64) -> f64 {
    let n = a.ncols();
    if n == 0 || a.nrows() == 0 {
        return 0.0;
    }
    // deterministic, non-degenerate start
    let mut v: Vec<Complex64> = (0..n)
        .map(|i| Complex64::new(1.0 + (i % 7) as f64 * 0.1, (i % 3) as f64 * 0.05))
        .collect();
    let mut scale = norm(&v);
    v.iter_mut().for_each(|x| *x /= scale);
    let mut estimate = 0.0;
    for _ in 0..max_iters {
        let av = matvec(a, &v);
        let mut w = adjoint_matvec(a, &av);
        scale = norm(&w);
        if scale == 0.0 {
            return 0.0;
        }
        w.iter_mut().for_each(|x| *x /= scale);
        v = w;
        let converged = (scale - estimate).abs() <= tol * scale;
        estimate = scale;
        if converged {
            break;
        }
    }
    estimate
}

/// `AᴴA`.
pub fn gram(a: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let n = a.ncols();
    let rows = a.nrows();
    let cols: Vec<&[Complex64]> = a.as_slice().chunks_exact(rows.max(1)).collect();
    let mut g = DMatrix::from_element(n, n, ZERO);
    for j in 0..n {
        for i in 0..=j {
            let v = dotc(cols[i], cols[j]);
            g[(i, j)] = v;
            g[(j, i)] = v.conj();
        }
    }
    g
}
