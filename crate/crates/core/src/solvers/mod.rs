//! Sparse solvers over an image-domain dictionary.
//!
//! [`ista_solve`] and [`unfolded_ista_solve`] share one stage kernel, so a
//! constant-parameter unfolding reproduces truncated ISTA bit for bit.

mod amp;
mod ista;
mod omp;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dictionary::Dictionary;
use crate::error::{Error, Result};
use crate::geometry::{ComplexSignal, SparseCode};
use crate::linalg;

pub use amp::amp_solve;
pub use ista::{ista_solve, unfolded_ista_solve, unfolded_ista_solve_with};
pub use omp::omp_solve;

pub const DEFAULT_LAMBDA: f64 = 300.0;
pub const DEFAULT_STEP: f64 = 0.01;
pub const DEFAULT_THRESHOLD: f64 = 0.005;
pub const DEFAULT_STAGES: usize = 3;
pub const DEFAULT_OMP_ATOMS: usize = 40;
pub const DEFAULT_AMP_DAMPING: f64 = 0.01;

/// Magnitude above which a coefficient counts as nonzero in summaries.
pub const NNZ_THRESHOLD: f64 = 1e-6;

/// Per-stage step sizes and thresholds of the unfolded network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnfoldedParams {
    #[serde(rename = "t")]
    step_sizes: Vec<f64>,
    #[serde(rename = "rho")]
    thresholds: Vec<f64>,
}

impl UnfoldedParams {
    pub fn new(step_sizes: Vec<f64>, thresholds: Vec<f64>) -> Result<Self> {
        let p = UnfoldedParams {
            step_sizes,
            thresholds,
        };
        p.validate()?;
        Ok(p)
    }

    /// `n` stages all using step `t` and threshold `rho`.
    pub fn constant(n: usize, t: f64, rho: f64) -> Result<Self> {
        Self::new(vec![t; n], vec![rho; n])
    }

    pub fn validate(&self) -> Result<()> {
        if self.step_sizes.len() != self.thresholds.len() {
            return Err(Error::invalid(format!(
                "{} step sizes but {} thresholds",
                self.step_sizes.len(),
                self.thresholds.len()
            )));
        }
        if self.step_sizes.is_empty() {
            return Err(Error::invalid("unfolding needs at least one stage"));
        }
        if let Some(t) = self.step_sizes.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
            return Err(Error::invalid(format!("step size {t} must be finite and positive")));
        }
        if let Some(r) = self.thresholds.iter().find(|r| !(r.is_finite() && **r >= 0.0)) {
            return Err(Error::invalid(format!("threshold {r} must be finite and nonnegative")));
        }
        Ok(())
    }

    pub fn n_stages(&self) -> usize {
        self.step_sizes.len()
    }

    pub fn step_sizes(&self) -> &[f64] {
        &self.step_sizes
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    /// Flat view: step sizes first, then thresholds.
    pub fn get(&self, index: usize) -> f64 {
        let n = self.n_stages();
        if index < n {
            self.step_sizes[index]
        } else {
            self.thresholds[index - n]
        }
    }

    /// Set a flat-indexed parameter without validation.
    pub fn set(&mut self, index: usize, value: f64) {
        let n = self.n_stages();
        if index < n {
            self.step_sizes[index] = value;
        } else {
            self.thresholds[index - n] = value;
        }
    }

    pub fn n_params(&self) -> usize {
        2 * self.n_stages()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: UnfoldedParams = serde_json::from_str(text)?;
        p.validate()?;
        Ok(p)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

impl Default for UnfoldedParams {
    fn default() -> Self {
        Self::constant(DEFAULT_STAGES, DEFAULT_STEP, DEFAULT_THRESHOLD).expect("defaults are valid")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub lambda: f64,
    pub max_iters: usize,
    /// Relative objective (ISTA) or iterate (AMP) change that ends a run;
    /// `0` disables early stopping.
    pub tol: f64,
    pub omp_k: usize,
    pub amp_damping: f64,
    /// AMP threshold as a multiple of the residual standard deviation.
    pub amp_threshold_scale: f64,
    pub capture_trace: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            lambda: DEFAULT_LAMBDA,
            max_iters: 500,
            tol: 1e-8,
            omp_k: DEFAULT_OMP_ATOMS,
            amp_damping: DEFAULT_AMP_DAMPING,
            amp_threshold_scale: 1.5,
            capture_trace: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid("lambda must be finite and nonnegative"));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::invalid("tol must be nonnegative"));
        }
        if !(self.amp_damping > 0.0 && self.amp_damping <= 1.0) {
            return Err(Error::invalid("amp_damping must lie in (0, 1]"));
        }
        if !(self.amp_threshold_scale >= 0.0 && self.amp_threshold_scale.is_finite()) {
            return Err(Error::invalid("amp_threshold_scale must be finite and nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub code: SparseCode,
    /// Per-iteration codes, when captured.
    pub trace: Vec<SparseCode>,
    /// `Φ z⁽ᵏ⁾` for every captured code.
    pub reconstructions: Vec<ComplexSignal>,
    pub objective: f64,
    pub iterations: usize,
    pub wall_time: f64,
    /// OMP atoms discarded because they made the support rank deficient.
    pub dropped_atoms: Vec<usize>,
}

impl SolveResult {
    pub fn nnz(&self) -> usize {
        self.code.count_above(NNZ_THRESHOLD)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Ista,
    Unfolded,
    Omp,
    Amp,
}

impl SolverKind {
    pub const ALL: [SolverKind; 4] = [SolverKind::Ista, SolverKind::Unfolded, SolverKind::Omp, SolverKind::Amp];

    pub fn name(self) -> &'static str {
        match self {
            SolverKind::Ista => "ista",
            SolverKind::Unfolded => "unfolded",
            SolverKind::Omp => "omp",
            SolverKind::Amp => "amp",
        }
    }
}

impl std::fmt::Display for SolverKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for SolverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SolverKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown solver {s:?}; expected ista, unfolded, omp or amp")))
    }
}

/// A solver together with everything it needs besides the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "solver", rename_all = "lowercase")]
pub enum SolverSpec {
    Ista { config: SolverConfig, step: f64, threshold: f64 },
    Unfolded { params: UnfoldedParams, lambda: f64 },
    Omp { k_atoms: usize },
    Amp { config: SolverConfig },
}

impl SolverSpec {
    pub fn kind(&self) -> SolverKind {
        match self {
            SolverSpec::Ista { .. } => SolverKind::Ista,
            SolverSpec::Unfolded { .. } => SolverKind::Unfolded,
            SolverSpec::Omp { .. } => SolverKind::Omp,
            SolverSpec::Amp { .. } => SolverKind::Amp,
        }
    }

    pub fn solve(&self, d: &Dictionary, s: &ComplexSignal) -> Result<SolveResult> {
        match self {
            SolverSpec::Ista { config, step, threshold } => ista_solve(d, s, config, *step, *threshold),
            SolverSpec::Unfolded { params, lambda } => unfolded_ista_solve_with(d, s, params, false, *lambda),
            SolverSpec::Omp { k_atoms } => omp_solve(d, s, *k_atoms),
            SolverSpec::Amp { config } => amp_solve(d, s, config),
        }
    }
}

pub(crate) fn check_shapes(d: &Dictionary, z_len: Option<usize>, s: Option<&ComplexSignal>) -> Result<()> {
    if let Some(n) = z_len {
        if n != d.cols() {
            return Err(Error::invalid(format!(
                "code has {n} entries but the dictionary has {} columns",
                d.cols()
            )));
        }
    }
    if let Some(s) = s {
        if s.len() != d.rows() {
            return Err(Error::invalid(format!(
                "signal has {} samples but the dictionary has {} rows",
                s.len(),
                d.rows()
            )));
        }
    }
    Ok(())
}

/// `‖Φz − s‖² + λ Σ|zᵢ|`.
pub fn lasso_objective(d: &Dictionary, z: &SparseCode, s: &ComplexSignal, lambda: f64) -> Result<f64> {
    check_shapes(d, Some(z.len()), Some(s))?;
    let mut r = linalg::matvec(d.matrix(), z.values());
    for (ri, si) in r.iter_mut().zip(s.values()) {
        *ri -= si;
    }
    Ok(linalg::norm_sqr(&r) + lambda * z.l1_norm())
}

/// `‖s − Φz⁽ᴺ⁾‖² + λ‖z⁽ᴺ⁾‖₁`, the loss the unfolding is trained on.
pub fn reconstruction_loss(d: &Dictionary, z_final: &SparseCode, s: &ComplexSignal, lambda: f64) -> Result<f64> {
    lasso_objective(d, z_final, s, lambda)
}

pub fn reconstruct(d: &Dictionary, z: &SparseCode) -> Result<ComplexSignal> {
    check_shapes(d, Some(z.len()), None)?;
    ComplexSignal::new(
        linalg::matvec(d.matrix(), z.values()),
        d.signal_layout(),
        d.sample_dims(),
    )
}

/// `γ_{N+1} s + Σ γᵢ ŝ⁽ⁱ⁾` with caller-supplied weights.
pub fn aggregate_reconstructions(
    s: &ComplexSignal,
    recon_trace: &[ComplexSignal],
    gammas: &[f64],
) -> Result<ComplexSignal> {
    if gammas.len() != recon_trace.len() + 1 {
        return Err(Error::invalid(format!(
            "{} weights for {} reconstructions plus the input",
            gammas.len(),
            recon_trace.len()
        )));
    }
    if let Some(bad) = recon_trace.iter().find(|r| r.len() != s.len()) {
        return Err(Error::invalid(format!(
            "reconstruction has {} samples, input has {}",
            bad.len(),
            s.len()
        )));
    }
    let last = gammas[recon_trace.len()];
    let mut out: Vec<Complex64> = s.values().iter().map(|v| v * last).collect();
    for (recon, &g) in recon_trace.iter().zip(gammas) {
        for (o, v) in out.iter_mut().zip(recon.values()) {
            *o += v * g;
        }
    }
    ComplexSignal::new(out, s.layout(), s.dims())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::Domain;
    use crate::geometry::SignalLayout;
    use nalgebra::DMatrix;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn toy() -> Dictionary {
        let m = DMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.0, 1.0), c(2.0, 0.0), c(1.0, -1.0)]);
        Dictionary::from_parts(m, Domain::Image, 0)
    }

    fn sig(v: Vec<Complex64>) -> ComplexSignal {
        let n = v.len();
        ComplexSignal::new(v, SignalLayout::ImageDomain, (n, 1)).unwrap()
    }

    #[test]
    fn objective_examples() {
        let d = toy();
        let s = sig(vec![c(1.0, 1.0), c(0.0, -2.0)]);
        let zero = SparseCode::zeros((2, 1));
        assert_eq!(lasso_objective(&d, &zero, &s, 300.0).unwrap(), s.norm_sqr());

        let z = SparseCode::new(vec![c(1.0, 0.0), c(0.0, 1.0)], (2, 1)).unwrap();
        let exact = reconstruct(&d, &z).unwrap();
        assert_eq!(lasso_objective(&d, &z, &exact, 0.0).unwrap(), 0.0);

        // Φz = [1 + i·i, 2 + (1−i)i] = [0, 3 + i]; minus s = [−1 − i, 3 + 3i]
        // ‖·‖² = 2 + 18 = 20; λ‖z‖₁ = 0.5·2 = 1
        let obj = lasso_objective(&d, &z, &s, 0.5).unwrap();
        assert!((obj - 21.0).abs() < 1e-14);
        assert_eq!(reconstruction_loss(&d, &z, &s, 0.5).unwrap(), obj);
        assert_eq!(reconstruction_loss(&d, &zero, &s, 300.0).unwrap(), s.norm_sqr());
    }

    #[test]
    fn reconstruct_examples() {
        let d = toy();
        let zero = SparseCode::zeros((2, 1));
        assert!(reconstruct(&d, &zero).unwrap().values().iter().all(|v| v.norm() == 0.0));
        let one_hot = SparseCode::new(vec![c(0.0, 0.0), c(1.0, 0.0)], (2, 1)).unwrap();
        assert_eq!(reconstruct(&d, &one_hot).unwrap().values(), d.column(1));
        let z = SparseCode::new(vec![c(2.0, 1.0), c(-1.0, 0.5)], (2, 1)).unwrap();
        // [1·(2+i) + i·(−1+0.5i), 2·(2+i) + (1−i)(−1+0.5i)] = [1.5, 3.5 + 3.5i]
        let r = reconstruct(&d, &z).unwrap();
        assert!((r.values()[0] - c(1.5, 0.0)).norm() < 1e-15);
        assert!((r.values()[1] - c(3.5, 3.5)).norm() < 1e-15);
        assert!(reconstruct(&d, &SparseCode::zeros((3, 1))).is_err());
    }

    #[test]
    fn aggregation_examples() {
        let s = sig(vec![c(1.0, 0.0), c(0.0, 1.0)]);
        let r1 = sig(vec![c(2.0, 0.0), c(0.0, 0.0)]);
        let r2 = sig(vec![c(0.0, 3.0), c(1.0, 1.0)]);
        let trace = vec![r1.clone(), r2.clone()];
        assert_eq!(aggregate_reconstructions(&s, &trace, &[0.0, 0.0, 1.0]).unwrap(), s);
        assert_eq!(aggregate_reconstructions(&s, &trace, &[0.0, 1.0, 0.0]).unwrap(), r2);
        let doubled = aggregate_reconstructions(&s, std::slice::from_ref(&s), &[1.0, 1.0]).unwrap();
        assert_eq!(doubled.values(), &[c(2.0, 0.0), c(0.0, 2.0)]);
        assert!(aggregate_reconstructions(&s, &trace, &[1.0, 1.0]).is_err());
    }

    #[test]
    fn params_json() {
        let p = UnfoldedParams::default();
        let text = p.to_json().unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["t"], serde_json::json!([0.01, 0.01, 0.01]));
        assert_eq!(v["rho"], serde_json::json!([0.005, 0.005, 0.005]));
        assert_eq!(UnfoldedParams::from_json(&text).unwrap(), p);
        assert!(UnfoldedParams::from_json(r#"{"t": [0.1], "rho": [-1.0]}"#).is_err());
        assert!(UnfoldedParams::from_json(r#"{"t": [0.0], "rho": [0.0]}"#).is_err());
        assert!(UnfoldedParams::from_json(r#"{"t": [0.1, 0.1], "rho": [0.0]}"#).is_err());
    }

    #[test]
    fn solver_names_round_trip() {
        for k in SolverKind::ALL {
            assert_eq!(k.name().parse::<SolverKind>().unwrap(), k);
        }
        assert!("fista".parse::<SolverKind>().is_err());
        let spec = SolverSpec::Omp { k_atoms: 7 };
        let v: serde_json::Value = serde_json::to_value(&spec).unwrap();
        assert_eq!(v["solver"], "omp");
        assert_eq!(spec.kind(), SolverKind::Omp);
    }
}
