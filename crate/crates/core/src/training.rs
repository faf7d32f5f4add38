//! Finite-difference training of the unfolded-ISTA step sizes and thresholds.
//!
//! The loss of a parameter set is the mean over the training signals of
//! `‖Φz⁽ᴺ⁾ − s‖² + λ‖z⁽ᴺ⁾‖₁`, where `z⁽ᴺ⁾` is the output of the unfolding.
//! Every evaluation runs the whole batch at once through the Gram matrix
//! `G = ΦᴴΦ`, with `Φᴴr = Gz − Φᴴs` and
//! `‖Φz − s‖² = ‖s‖² − 2Re(zᴴΦᴴs) + zᴴGz`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dictionary::Dictionary;
use crate::error::{Error, Result};
use crate::geometry::ComplexSignal;
use crate::solvers::{check_shapes, UnfoldedParams, DEFAULT_LAMBDA};

/// Smallest base magnitude for the finite-difference step.
const FD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub fd_rel_step: f64,
    pub lambda: f64,
    /// Lower bound enforced on every step size after an update.
    pub min_step: f64,
    /// Full-batch descent is deterministic; the seed is carried for run records.
    pub seed: u64,
}

/// The defaults suit image-domain dictionaries of about a thousand unit
/// modulus atoms, where the loss gradient in `t` reaches 1e13 at the
/// default step size.
impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-13,
            epochs: 200,
            fd_rel_step: 1e-4,
            lambda: DEFAULT_LAMBDA,
            min_step: 1e-4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::invalid(format!("learning_rate {} must be finite and nonnegative", self.learning_rate)));
        }
        if !(self.fd_rel_step.is_finite() && self.fd_rel_step > 0.0) {
            return Err(Error::invalid(format!("fd_rel_step {} must be finite and positive", self.fd_rel_step)));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::invalid(format!("lambda {} must be finite and nonnegative", self.lambda)));
        }
        if !(self.min_step.is_finite() && self.min_step > 0.0) {
            return Err(Error::invalid(format!("min_step {} must be finite and positive", self.min_step)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    #[serde(rename = "initial")]
    pub initial_params: UnfoldedParams,
    #[serde(rename = "final")]
    pub final_params: UnfoldedParams,
    /// Mean loss at the start of each epoch, before its update.
    pub loss_history: Vec<f64>,
    pub initial_loss: f64,
    pub final_loss: f64,
    /// `final_loss ≤ initial_loss`.
    pub improved: bool,
}

impl TrainReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// A batch of codes or Gram products, split into real and imaginary parts
/// (`n_atoms × n_signals`).
#[derive(Debug, Clone)]
struct Batch {
    re: DMatrix<f64>,
    im: DMatrix<f64>,
}

impl Batch {
    fn zeros(rows: usize, cols: usize) -> Self {
        Batch {
            re: DMatrix::zeros(rows, cols),
            im: DMatrix::zeros(rows, cols),
        }
    }
}

/// State after `k` stages: the code and its Gram product.
#[derive(Debug, Clone)]
struct StageState {
    z: Batch,
    gz: Batch,
}

/// Batched loss of the unfolding over a fixed training set.
#[derive(Debug, Clone)]
pub struct LossModel {
    g: Batch,
    b: Batch,
    s_energy: Vec<f64>,
    lambda: f64,
}

impl LossModel {
    pub fn new(d: &Dictionary, train_set: &[ComplexSignal], lambda: f64) -> Result<Self> {
        if train_set.is_empty() {
            return Err(Error::invalid("training set is empty"));
        }
        for s in train_set {
            check_shapes(d, None, Some(s))?;
        }
        let (rows, n) = (d.rows(), d.cols());
        let a = d.matrix();
        let ar = DMatrix::from_fn(rows, n, |i, j| a[(i, j)].re);
        let ai = DMatrix::from_fn(rows, n, |i, j| a[(i, j)].im);
        let g = Batch {
            re: ar.tr_mul(&ar) + ai.tr_mul(&ai),
            im: ar.tr_mul(&ai) - ai.tr_mul(&ar),
        };
        let sr = DMatrix::from_fn(rows, train_set.len(), |i, k| train_set[k].values()[i].re);
        let si = DMatrix::from_fn(rows, train_set.len(), |i, k| train_set[k].values()[i].im);
        let b = Batch {
            re: ar.tr_mul(&sr) + ai.tr_mul(&si),
            im: ar.tr_mul(&si) - ai.tr_mul(&sr),
        };
        Ok(LossModel {
            g,
            b,
            s_energy: train_set.iter().map(|s| s.norm_sqr()).collect(),
            lambda,
        })
    }

    pub fn n_signals(&self) -> usize {
        self.s_energy.len()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    fn gram_product(&self, z: &Batch) -> Batch {
        let mut out = Batch::zeros(z.re.nrows(), z.re.ncols());
        out.re.gemm(1.0, &self.g.re, &z.re, 0.0);
        out.re.gemm(-1.0, &self.g.im, &z.im, 1.0);
        out.im.gemm(1.0, &self.g.re, &z.im, 0.0);
        out.im.gemm(1.0, &self.g.im, &z.re, 1.0);
        out
    }

    /// `z ← S_ρ(z − t(Gz − b))` for every signal.
    fn stage(&self, state: &StageState, t: f64, rho: f64) -> Batch {
        let mut z = Batch::zeros(state.z.re.nrows(), state.z.re.ncols());
        let inputs = state.z.re.iter().zip(state.z.im.iter()).zip(state.gz.re.iter().zip(state.gz.im.iter()));
        let bs = self.b.re.iter().zip(self.b.im.iter());
        let outs = z.re.iter_mut().zip(z.im.iter_mut());
        for ((((zr, zi), (gr, gi)), (br, bi)), (or, oi)) in inputs.zip(bs).zip(outs) {
            let vr = zr - t * (gr - br);
            let vi = zi - t * (gi - bi);
            let mag = vr.hypot(vi);
            if mag > rho {
                let k = (mag - rho) / mag;
                *or = vr * k;
                *oi = vi * k;
            }
        }
        z
    }

    fn mean_loss(&self, state: &StageState) -> f64 {
        let n = state.z.re.nrows();
        let mut total = 0.0;
        for (k, energy) in self.s_energy.iter().enumerate() {
            let (zr, zi) = (state.z.re.column(k), state.z.im.column(k));
            let (gr, gi) = (state.gz.re.column(k), state.gz.im.column(k));
            let (br, bi) = (self.b.re.column(k), self.b.im.column(k));
            let mut cross = 0.0;
            let mut quad = 0.0;
            let mut l1 = 0.0;
            for i in 0..n {
                cross += zr[i] * br[i] + zi[i] * bi[i];
                quad += zr[i] * gr[i] + zi[i] * gi[i];
                l1 += zr[i].hypot(zi[i]);
            }
            total += energy - 2.0 * cross + quad + self.lambda * l1;
        }
        total / self.n_signals() as f64
    }

    fn initial_state(&self) -> StageState {
        let (n, b) = (self.b.re.nrows(), self.b.re.ncols());
        StageState {
            z: Batch::zeros(n, b),
            gz: Batch::zeros(n, b),
        }
    }

    /// Runs the stages from `start` onward and returns the states after
    /// each of them (`states[k]` is the state before stage `start + k`).
    fn run_from(&self, params: &UnfoldedParams, start: usize, state: StageState) -> Vec<StageState> {
        let mut states = vec![state];
        for k in start..params.n_stages() {
            let prev = states.last().expect("nonempty");
            let z = self.stage(prev, params.step_sizes()[k], params.thresholds()[k]);
            let gz = self.gram_product(&z);
            states.push(StageState { z, gz });
        }
        states
    }

    /// Mean loss at `params`.
    pub fn loss(&self, params: &UnfoldedParams) -> Result<f64> {
        params.validate()?;
        let states = self.run_from(params, 0, self.initial_state());
        Ok(self.mean_loss(states.last().expect("nonempty")))
    }

    /// Final codes of the unfolding, one per signal.
    pub fn codes(&self, params: &UnfoldedParams) -> Result<Vec<Vec<crate::Complex64>>> {
        params.validate()?;
        let states = self.run_from(params, 0, self.initial_state());
        let last = &states.last().expect("nonempty").z;
        Ok((0..self.n_signals())
            .map(|k| {
                last.re
                    .column(k)
                    .iter()
                    .zip(last.im.column(k).iter())
                    .map(|(&r, &i)| crate::Complex64::new(r, i))
                    .collect()
            })
            .collect())
    }

    /// Loss and finite-difference gradient for all parameters. A perturbation
    /// of stage `k` reuses the unperturbed states before it.
    pub fn loss_and_gradient(&self, params: &UnfoldedParams, rel_step: f64) -> Result<(f64, Vec<f64>)> {
        params.validate()?;
        let base = self.run_from(params, 0, self.initial_state());
        let loss = self.mean_loss(base.last().expect("nonempty"));
        let n_stages = params.n_stages();
        let mut grad = Vec::with_capacity(params.n_params());
        for idx in 0..params.n_params() {
            let stage = idx % n_stages;
            let g = fd_gradient_with(
                |p| {
                    let states = self.run_from(p, stage, base[stage].clone());
                    Ok(self.mean_loss(states.last().expect("nonempty")))
                },
                params,
                idx,
                rel_step,
            )?;
            grad.push(g);
        }
        Ok((loss, grad))
    }
}

fn is_step(params: &UnfoldedParams, idx: usize) -> bool {
    idx < params.n_stages()
}

/// Finite-difference derivative of `loss` with respect to parameter `idx`
/// (steps first, then thresholds).
///
/// Central difference with `h = rel_step · max(|θ|, 1e-6)`. When `θ − h`
/// leaves the feasible set (`t ≤ 0` or `ρ < 0`) a forward difference is used.
pub fn fd_gradient_with<F>(mut loss: F, params: &UnfoldedParams, idx: usize, rel_step: f64) -> Result<f64>
where
    F: FnMut(&UnfoldedParams) -> Result<f64>,
{
    if idx >= params.n_params() {
        return Err(Error::invalid(format!(
            "parameter index {idx} out of range for {} parameters",
            params.n_params()
        )));
    }
    if !(rel_step.is_finite() && rel_step > 0.0) {
        return Err(Error::invalid(format!("relative step {rel_step} must be finite and positive")));
    }
    let theta = params.get(idx);
    let h = rel_step * theta.abs().max(FD_FLOOR);
    let lower = theta - h;
    let feasible = if is_step(params, idx) { lower > 0.0 } else { lower >= 0.0 };
    let mut probe = params.clone();
    probe.set(idx, theta + h);
    let up = loss(&probe)?;
    if feasible {
        probe.set(idx, lower);
        let down = loss(&probe)?;
        Ok((up - down) / (2.0 * h))
    } else {
        Ok((up - loss(params)?) / h)
    }
}

/// Finite-difference derivative of the mean loss at the default λ.
pub fn fd_gradient(
    d: &Dictionary,
    train_set: &[ComplexSignal],
    params: &UnfoldedParams,
    param_index: usize,
    fd_rel_step: f64,
) -> Result<f64> {
    let model = LossModel::new(d, train_set, DEFAULT_LAMBDA)?;
    fd_gradient_with(|p| model.loss(p), params, param_index, fd_rel_step)
}

/// Projected gradient descent on the mean loss, starting from `init`.
pub fn train_unfolded(
    d: &Dictionary,
    train_set: &[ComplexSignal],
    init: &UnfoldedParams,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    init.validate()?;
    let model = LossModel::new(d, train_set, cfg.lambda)?;
    train_with_model(&model, init, cfg)
}

pub fn train_with_model(model: &LossModel, init: &UnfoldedParams, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let n_stages = init.n_stages();
    let mut params = init.clone();
    let mut last_good = init.clone();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let (loss, grad) = model.loss_and_gradient(&params, cfg.fd_rel_step)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::TrainingDiverged { epoch, last_good });
        }
        history.push(loss);
        last_good = params.clone();
        for (idx, g) in grad.iter().enumerate() {
            let next = params.get(idx) - cfg.learning_rate * g;
            let floor = if idx < n_stages { cfg.min_step } else { 0.0 };
            params.set(idx, next.max(floor));
        }
    }
    let initial_loss = match history.first() {
        Some(&l) => l,
        None => model.loss(init)?,
    };
    let final_loss = model.loss(&params)?;
    if !final_loss.is_finite() {
        return Err(Error::TrainingDiverged { epoch: cfg.epochs, last_good });
    }
    Ok(TrainReport {
        initial_params: init.clone(),
        final_params: params,
        loss_history: history,
        initial_loss,
        final_loss,
        improved: final_loss <= initial_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::{build_freq_dictionary, signal_to_image_domain, to_image_domain};
    use crate::forward::{random_scene, synthesize_echo, SceneSpec};
    use crate::geometry::{RadarGeometry, SignalLayout};
    use crate::linalg::spectral_norm_sqr;
    use crate::solvers::{reconstruction_loss, unfolded_ista_solve_with};

    fn problem(n: usize, count: usize, seed: u64) -> (Dictionary, Vec<ComplexSignal>) {
        let g = RadarGeometry::benchmark(n).unwrap();
        let d = to_image_domain(&build_freq_dictionary(&g).unwrap(), &g).unwrap();
        let spec = SceneSpec { n_centers: 3, snr_db: Some(20.0), ..SceneSpec::default() };
        let set = (0..count as u64)
            .map(|i| {
                let scene = random_scene(&g, &spec, seed + i).unwrap();
                signal_to_image_domain(&synthesize_echo(&scene).unwrap(), &g).unwrap()
            })
            .collect();
        (d, set)
    }

    fn safe_params(d: &Dictionary) -> UnfoldedParams {
        let l = spectral_norm_sqr(d.matrix(), 1000, 1e-12);
        UnfoldedParams::new(vec![0.5 / l, 0.8 / l, 0.9 / l], vec![0.02, 0.05, 0.1]).unwrap()
    }

    #[test]
    fn batched_loss_matches_solver() {
        let (d, set) = problem(8, 4, 1);
        let params = safe_params(&d);
        let model = LossModel::new(&d, &set, 300.0).unwrap();
        let mut expected = 0.0;
        for s in &set {
            let res = unfolded_ista_solve_with(&d, s, &params, false, 300.0).unwrap();
            expected += reconstruction_loss(&d, &res.code, s, 300.0).unwrap();
        }
        expected /= set.len() as f64;
        let got = model.loss(&params).unwrap();
        assert!((got - expected).abs() <= 1e-9 * expected, "{got} vs {expected}");
    }

    #[test]
    fn empty_set_rejected() {
        let (d, _) = problem(4, 1, 0);
        let err = train_unfolded(&d, &[], &UnfoldedParams::default(), &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    #[test]
    fn zero_signals_leave_params_unchanged() {
        let (d, _) = problem(6, 1, 0);
        let zeros = vec![ComplexSignal::zeros(SignalLayout::ImageDomain, (6, 6)); 3];
        let init = UnfoldedParams::default();
        for idx in 0..init.n_params() {
            assert!(fd_gradient(&d, &zeros, &init, idx, 1e-4).unwrap().abs() <= 1e-10);
        }
        let cfg = TrainConfig { epochs: 5, learning_rate: 1e-3, ..TrainConfig::default() };
        let report = train_unfolded(&d, &zeros, &init, &cfg).unwrap();
        for idx in 0..init.n_params() {
            assert!((report.final_params.get(idx) - init.get(idx)).abs() <= 1e-8);
        }
    }

    #[test]
    fn zero_learning_rate_returns_init() {
        let (d, set) = problem(6, 2, 3);
        let init = UnfoldedParams::default();
        let cfg = TrainConfig { epochs: 1, learning_rate: 0.0, ..TrainConfig::default() };
        let report = train_unfolded(&d, &set, &init, &cfg).unwrap();
        assert_eq!(report.final_params, init);
        assert_eq!(report.loss_history.len(), 1);
    }

    #[test]
    fn zero_epochs_returns_init() {
        let (d, set) = problem(6, 2, 3);
        let cfg = TrainConfig { epochs: 0, ..TrainConfig::default() };
        let report = train_unfolded(&d, &set, &UnfoldedParams::default(), &cfg).unwrap();
        assert_eq!(report.final_params, UnfoldedParams::default());
        assert!(report.loss_history.is_empty());
        assert_eq!(report.initial_loss, report.final_loss);
    }

    #[test]
    fn quadratic_probe_slope() {
        let params = UnfoldedParams::new(vec![0.3, 0.7], vec![0.2, 1.5]).unwrap();
        // L = Σ cᵢ (θᵢ − aᵢ)², slope 2cᵢ(θᵢ − aᵢ)
        let a = [0.1, -0.4, 2.0, 0.5];
        let c = [3.0, 0.5, 1.25, 7.0];
        let probe = |p: &UnfoldedParams| -> Result<f64> {
            Ok((0..4).map(|i| c[i] * (p.get(i) - a[i]).powi(2)).sum())
        };
        for idx in 0..4 {
            let g = fd_gradient_with(probe, &params, idx, 1e-4).unwrap();
            let exact = 2.0 * c[idx] * (params.get(idx) - a[idx]);
            assert!((g - exact).abs() <= 1e-8 * exact.abs().max(1.0), "idx {idx}: {g} vs {exact}");
        }
    }

    #[test]
    fn forward_difference_at_zero_threshold() {
        let params = UnfoldedParams::new(vec![0.3], vec![0.0]).unwrap();
        let mut seen = Vec::new();
        let g = fd_gradient_with(
            |p| {
                seen.push(p.get(1));
                Ok(2.0 * p.get(1))
            },
            &params,
            1,
            1e-4,
        )
        .unwrap();
        assert!(seen.iter().all(|&r| r >= 0.0));
        assert!((g - 2.0).abs() <= 1e-6);
    }

    #[test]
    fn gradient_agrees_with_five_point_stencil() {
        let (d, set) = problem(8, 3, 11);
        let params = safe_params(&d);
        let model = LossModel::new(&d, &set, 300.0).unwrap();
        let (_, grad) = model.loss_and_gradient(&params, 1e-4).unwrap();
        assert_eq!(grad.len(), params.n_params());
        for (idx, &g) in grad.iter().enumerate() {
            let theta = params.get(idx);
            let h = 1e-3 * theta;
            let at = |delta: f64| {
                let mut p = params.clone();
                p.set(idx, theta + delta);
                model.loss(&p).unwrap()
            };
            let stencil = (-at(2.0 * h) + 8.0 * at(h) - 8.0 * at(-h) + at(-2.0 * h)) / (12.0 * h);
            let rel = (g - stencil).abs() / stencil.abs().max(1e-12);
            assert!(rel <= 1e-3, "idx {idx}: fd {g} stencil {stencil}");
        }
    }

    #[test]
    fn projection_keeps_parameters_feasible() {
        let (d, set) = problem(6, 2, 5);
        let cfg = TrainConfig { epochs: 4, learning_rate: 1.0, min_step: 1e-5, ..TrainConfig::default() };
        let report = train_unfolded(&d, &set, &UnfoldedParams::default(), &cfg).unwrap();
        let p = &report.final_params;
        assert!(p.step_sizes().iter().all(|&t| t >= 1e-5));
        assert!(p.thresholds().iter().all(|&r| r >= 0.0));
        assert!(report.loss_history.iter().all(|l| l.is_finite()));
    }

    #[test]
    fn training_is_reproducible_and_improves() {
        let (d, set) = problem(8, 4, 21);
        let l = spectral_norm_sqr(d.matrix(), 1000, 1e-12);
        let init = UnfoldedParams::constant(3, 0.5 / l, 0.01).unwrap();
        let cfg = TrainConfig { epochs: 20, learning_rate: 1e-11, min_step: 1e-4 / l, ..TrainConfig::default() };
        let a = train_unfolded(&d, &set, &init, &cfg).unwrap();
        let b = train_unfolded(&d, &set, &init, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.loss_history.len(), 20);
        assert!(a.improved, "{} -> {}", a.initial_loss, a.final_loss);
    }

    #[test]
    fn report_json_keys() {
        let report = TrainReport {
            initial_params: UnfoldedParams::default(),
            final_params: UnfoldedParams::default(),
            loss_history: vec![1.0],
            initial_loss: 1.0,
            final_loss: 1.0,
            improved: true,
        };
        let v: serde_json::Value = serde_json::from_str(&report.to_json().unwrap()).unwrap();
        assert!(v["initial"]["t"].is_array());
        assert!(v["final"]["rho"].is_array());
        assert_eq!(v["loss_history"][0], 1.0);
    }
}
