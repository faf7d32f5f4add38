use std::time::Instant;

use num_complex::Complex64;

use super::{check_shapes, SolveResult, SolverConfig};
use crate::dictionary::Dictionary;
use crate::error::{Error, Result};
use crate::geometry::{shrink, ComplexSignal, SparseCode};
use crate::linalg;

const BLOWUP: f64 = 1e6;

/// Damped complex AMP with a soft-threshold denoiser.
///
/// Runs on the column-normalized dictionary `A = Φ D⁻¹`. Each iteration
/// thresholds `x + Aᴴr` at `amp_threshold_scale · ‖r‖/√m`, adds the complex
/// Onsager term `r · (1/m) Σ (1 − θ / 2|vᵢ|)` over surviving entries, and
/// blends both messages with `amp_damping` (1 = undamped).
pub fn amp_solve(d: &Dictionary, s: &ComplexSignal, cfg: &SolverConfig) -> Result<SolveResult> {
    check_shapes(d, None, Some(s))?;
    cfg.validate()?;
    let start = Instant::now();
    let a = d.matrix();
    let (m, n) = (d.rows(), d.cols());
    let y = s.values();
    let y_norm = s.norm();
    let norms: Vec<f64> = (0..n).map(|j| linalg::norm(d.column(j))).collect();
    let inv: Vec<f64> = norms.iter().map(|&c| if c > 0.0 { 1.0 / c } else { 0.0 }).collect();
    let beta = cfg.amp_damping;
    let zero = Complex64::new(0.0, 0.0);

    let mut x = vec![zero; n];
    let mut r = y.to_vec();
    let mut corr = vec![zero; n];
    let mut fit = vec![zero; m];
    let mut scaled = vec![zero; n];
    let mut trace = Vec::new();
    let mut recons = Vec::new();
    let mut iterations = 0;

    while iterations < cfg.max_iters {
        iterations += 1;
        linalg::adjoint_matvec_into(a, &r, &mut corr);
        let theta = cfg.amp_threshold_scale * linalg::norm(&r) / (m as f64).sqrt();
        let mut onsager = 0.0;
        let mut x_new = vec![zero; n];
        for j in 0..n {
            let v = x[j] + corr[j] * inv[j];
            let mag = v.norm();
            if mag > theta {
                onsager += 1.0 - theta / (2.0 * mag);
            }
            x_new[j] = shrink(v, theta);
        }
        onsager /= m as f64;

        for j in 0..n {
            scaled[j] = x_new[j] * inv[j];
        }
        linalg::matvec_into(a, &scaled, &mut fit);
        let mut change = 0.0;
        let mut size = 0.0;
        for j in 0..n {
            let next = x[j] * (1.0 - beta) + x_new[j] * beta;
            change += (next - x[j]).norm_sqr();
            size += next.norm_sqr();
            x[j] = next;
        }
        for i in 0..m {
            let r_new = y[i] - fit[i] + r[i] * onsager;
            r[i] = r[i] * (1.0 - beta) + r_new * beta;
        }

        let r_norm = linalg::norm(&r);
        if !r_norm.is_finite() || !size.is_finite() || r_norm > BLOWUP * y_norm.max(f64::MIN_POSITIVE) {
            return Err(Error::Divergence(format!(
                "AMP residual norm reached {r_norm:e} after {iterations} iterations with damping {beta}; \
                 AMP is unstable on non-i.i.d. dictionaries, try a smaller damping value (slower updates)"
            )));
        }
        if cfg.capture_trace {
            let z = to_code(&x, &inv, d.grid_dims())?;
            recons.push(ComplexSignal::new(linalg::matvec(a, z.values()), d.signal_layout(), d.sample_dims())?);
            trace.push(z);
        }
        if cfg.tol > 0.0 && change.sqrt() <= cfg.tol * size.sqrt() {
            break;
        }
    }

    let code = to_code(&x, &inv, d.grid_dims())?;
    let mut resid = linalg::matvec(a, code.values());
    for (ri, yi) in resid.iter_mut().zip(y) {
        *ri -= yi;
    }
    let objective = linalg::norm_sqr(&resid) + cfg.lambda * code.l1_norm();
    Ok(SolveResult {
        code,
        trace,
        reconstructions: recons,
        objective,
        iterations,
        wall_time: start.elapsed().as_secs_f64(),
        dropped_atoms: Vec::new(),
    })
}

fn to_code(x: &[Complex64], inv: &[f64], grid_dims: (usize, usize)) -> Result<SparseCode> {
    SparseCode::new(x.iter().zip(inv).map(|(v, s)| v * *s).collect(), grid_dims)
}
