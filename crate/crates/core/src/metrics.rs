//! Reconstruction quality, support recovery and solver timing.

use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dictionary::Dictionary;
use crate::error::{Error, Result};
use crate::forward::{locate_node, Scene};
use crate::geometry::{ComplexSignal, SparseCode};
use crate::solvers::{reconstruct, SolverSpec};

/// Reported in place of an infinite PSNR.
pub const PSNR_CAP_DB: f64 = 300.0;

/// Default detection threshold as a fraction of `max |z|`.
pub const DEFAULT_MAGNITUDE_FRACTION: f64 = 0.05;

pub const DEFAULT_POSITION_TOL: usize = 1;

/// PSNR of the magnitude images, `20 log10(max|ref| / rmse)`, capped at
/// [`PSNR_CAP_DB`].
pub fn psnr(reference: &ComplexSignal, estimate: &ComplexSignal) -> Result<f64> {
    if reference.dims() != estimate.dims() {
        return Err(Error::invalid(format!(
            "reference is {:?} but estimate is {:?}",
            reference.dims(),
            estimate.dims()
        )));
    }
    let peak = reference.values().iter().map(|v| v.norm()).fold(0.0, f64::max);
    if peak == 0.0 {
        return Err(Error::UndefinedMetric("PSNR of an all-zero reference".into()));
    }
    let sse: f64 = reference
        .values()
        .iter()
        .zip(estimate.values())
        .map(|(r, e)| (r.norm() - e.norm()).powi(2))
        .sum();
    let rmse = (sse / reference.len() as f64).sqrt();
    if rmse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((20.0 * (peak / rmse).log10()).min(PSNR_CAP_DB))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    /// Grid index of the true scatterer.
    pub true_index: usize,
    pub recovered_index: usize,
    pub amplitude_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportMatchReport {
    pub precision: f64,
    pub recall: f64,
    pub matched_pairs: Vec<MatchedPair>,
    pub magnitude_threshold: f64,
    pub position_tolerance: usize,
    /// No entry exceeded the threshold; precision is then reported as 1.
    pub no_detections: bool,
}

pub fn default_magnitude_threshold(z: &SparseCode) -> f64 {
    DEFAULT_MAGNITUDE_FRACTION * z.max_abs()
}

/// Greedy one-to-one matching of detections (`|zᵢ| > magnitude_threshold`)
/// to true scatterers within `position_tol` cells (Chebyshev distance).
///
/// Candidate pairs are taken closest first; ties are broken by grid index,
/// so the result does not depend on the order of the scene's centers.
/// Centers on the same node are merged, as in the sparse-code view.
pub fn support_match(
    truth: &Scene,
    z: &SparseCode,
    magnitude_threshold: f64,
    position_tol: usize,
) -> Result<SupportMatchReport> {
    let geom = &truth.geometry;
    if z.grid_dims() != (geom.n_x, geom.n_y) {
        return Err(Error::invalid(format!(
            "code grid {:?} does not match the scene grid {:?}",
            z.grid_dims(),
            (geom.n_x, geom.n_y)
        )));
    }
    let n_y = geom.n_y;
    let mut true_nodes: BTreeMap<usize, crate::Complex64> = BTreeMap::new();
    for c in &truth.centers {
        let (m, n) = locate_node(geom, c)?;
        *true_nodes.entry(m * n_y + n).or_default() += c.amplitude;
    }
    let detections: Vec<usize> = (0..z.len()).filter(|&i| z.values()[i].norm() > magnitude_threshold).collect();

    let cell = |i: usize| ((i / n_y) as i64, (i % n_y) as i64);
    let mut candidates = Vec::new();
    for &t in true_nodes.keys() {
        let (tm, tn) = cell(t);
        for &r in &detections {
            let (rm, rn) = cell(r);
            let (dm, dn) = ((tm - rm).unsigned_abs(), (tn - rn).unsigned_abs());
            if dm.max(dn) as usize <= position_tol {
                candidates.push((dm.max(dn), dm * dm + dn * dn, t, r));
            }
        }
    }
    candidates.sort_unstable();
    let mut used_true = std::collections::BTreeSet::new();
    let mut used_rec = std::collections::BTreeSet::new();
    let mut pairs = Vec::new();
    for (_, _, t, r) in candidates {
        if used_true.contains(&t) || used_rec.contains(&r) {
            continue;
        }
        used_true.insert(t);
        used_rec.insert(r);
        let a = true_nodes[&t];
        let err = (z.values()[r] - a).norm();
        pairs.push(MatchedPair {
            true_index: t,
            recovered_index: r,
            amplitude_rel_error: if a.norm() > 0.0 { err / a.norm() } else { err },
        });
    }
    pairs.sort_by_key(|p| p.true_index);
    let matched = pairs.len() as f64;
    let no_detections = detections.is_empty();
    Ok(SupportMatchReport {
        precision: if no_detections { 1.0 } else { matched / detections.len() as f64 },
        recall: if true_nodes.is_empty() { 1.0 } else { matched / true_nodes.len() as f64 },
        matched_pairs: pairs,
        magnitude_threshold,
        position_tolerance: position_tol,
        no_detections,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsnrRow {
    pub signal_id: usize,
    pub solver: String,
    pub psnr_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub solver: String,
    pub mean_s: f64,
    pub std_s: f64,
    pub mean_psnr_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportRow {
    pub scene_id: usize,
    pub solver: String,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchFailure {
    pub signal_id: usize,
    pub solver: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    /// One row per solver; statistics cover the successful runs only.
    pub timing: Vec<TimingRow>,
    pub psnr: Vec<PsnrRow>,
    pub failures: Vec<BenchFailure>,
    /// Signals ran concurrently, so the timings include contention.
    pub contended: bool,
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Runs every solver on every signal and compares `Φz` against the matching
/// reference image. Solvers run one after another; signals run one at a time
/// unless `parallel` is set.
pub fn bench_solvers(
    d: &Dictionary,
    signals: &[ComplexSignal],
    references: &[ComplexSignal],
    solvers: &[SolverSpec],
    parallel: bool,
) -> Result<BenchReport> {
    if signals.is_empty() || solvers.is_empty() {
        return Err(Error::invalid("benchmark needs at least one signal and one solver"));
    }
    if references.len() != signals.len() {
        return Err(Error::invalid(format!(
            "{} references for {} signals",
            references.len(),
            signals.len()
        )));
    }
    let run_one = |spec: &SolverSpec, s: &ComplexSignal, reference: &ComplexSignal| -> Result<(f64, f64)> {
        let start = Instant::now();
        let res = spec.solve(d, s)?;
        let elapsed = start.elapsed().as_secs_f64();
        Ok((elapsed, psnr(reference, &reconstruct(d, &res.code)?)?))
    };
    let mut report = BenchReport {
        timing: Vec::new(),
        psnr: Vec::new(),
        failures: Vec::new(),
        contended: parallel,
    };
    for spec in solvers {
        let name = spec.kind().name().to_string();
        let outcomes: Vec<Result<(f64, f64)>> = if parallel {
            signals.par_iter().zip(references).map(|(s, r)| run_one(spec, s, r)).collect()
        } else {
            signals.iter().zip(references).map(|(s, r)| run_one(spec, s, r)).collect()
        };
        let mut times = Vec::new();
        let mut psnrs = Vec::new();
        for (signal_id, outcome) in outcomes.into_iter().enumerate() {
            match outcome {
                Ok((t, p)) => {
                    times.push(t);
                    psnrs.push(p);
                    report.psnr.push(PsnrRow { signal_id, solver: name.clone(), psnr_db: p });
                }
                Err(e) => report.failures.push(BenchFailure {
                    signal_id,
                    solver: name.clone(),
                    message: e.to_string(),
                }),
            }
        }
        let (mean_s, std_s) = mean_std(&times);
        report.timing.push(TimingRow {
            solver: name,
            mean_s,
            std_s,
            mean_psnr_db: mean_std(&psnrs).0,
        });
    }
    Ok(report)
}

/// Serializes rows as CSV with a header taken from the field names.
pub fn to_csv<T: Serialize>(rows: &[T], header: &[&str]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.serialize(row)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io("<csv>", e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub const PSNR_HEADER: [&str; 3] = ["signal_id", "solver", "psnr_db"];
pub const TIMING_HEADER: [&str; 4] = ["solver", "mean_s", "std_s", "mean_psnr_db"];
pub const SUPPORT_HEADER: [&str; 4] = ["scene_id", "solver", "precision", "recall"];
