//! Command implementations behind the `sarsc` tool.
//!
//! Files written by each command:
//!
//! | command | outputs |
//! |---------|---------|
//! | gen     | `scene_NNNN.json`, `echo_NNNN.csig` |
//! | dict    | `<cache>/freq_<hash>.scdt`, `<cache>/image_<hash>.scdt` |
//! | solve   | `<solver>/code_NNNN.csig`, `recon_NNNN.csig`, `result_NNNN.json`, `support.csv` |
//! | train   | `params.json`, `train_report.json` |
//! | eval    | `psnr.csv`, `support.csv` |
//! | bench   | `timing.csv`, `psnr.csv`, `failures.json` |
//! | sweep   | `sweep.csv` |
//!
//! Every output directory also receives `manifest.json` with the command,
//! its full configuration, the tool version and SHA-256 digests of the
//! inputs. Codes and reconstructions are image-domain signals; echoes are
//! frequency-domain signals.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dictionary::{build_freq_dictionary, signal_to_image_domain, to_image_domain, Dictionary, Domain};
use crate::error::{Error, Result};
use crate::forward::{random_scene, synthesize_echo, Scene, SceneSpec};
use crate::geometry::{ComplexSignal, RadarGeometry, SparseCode};
use crate::io;
use crate::linalg::spectral_norm_sqr;
use crate::metrics::{
    bench_solvers, default_magnitude_threshold, mean_std, psnr, support_match, to_csv, PsnrRow, SupportRow,
    DEFAULT_POSITION_TOL, PSNR_HEADER, SUPPORT_HEADER, TIMING_HEADER,
};
use crate::solvers::{
    reconstruct, SolverConfig, SolverKind, SolverSpec, UnfoldedParams, DEFAULT_LAMBDA, DEFAULT_OMP_ATOMS,
    DEFAULT_STAGES, DEFAULT_STEP, DEFAULT_THRESHOLD,
};
use crate::training::{train_unfolded, TrainConfig, TrainReport};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Environment variable naming the dictionary cache directory.
pub const CACHE_ENV: &str = "SARSC_CACHE_DIR";

pub const DEFAULT_CACHE_DIR: &str = "sarsc-cache";

/// Safety factor applied to `1/L` for the ISTA step when none is given.
pub const ISTA_STEP_FRACTION: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputRecord {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub tool_version: String,
    pub command: String,
    pub geometry_hash: String,
    pub inputs: Vec<InputRecord>,
    pub config: serde_json::Value,
    pub outputs: Vec<String>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn input_record(path: &Path) -> Result<InputRecord> {
    Ok(InputRecord {
        path: path.display().to_string(),
        sha256: sha256_hex(&io::read_file(path)?),
    })
}

fn write_manifest<C: Serialize>(
    dir: &Path,
    command: &str,
    geom: &RadarGeometry,
    inputs: &[PathBuf],
    config: &C,
    mut outputs: Vec<String>,
) -> Result<()> {
    outputs.sort();
    let manifest = Manifest {
        tool: "sarsc".into(),
        tool_version: TOOL_VERSION.into(),
        command: command.into(),
        geometry_hash: format!("{:016x}", geom.hash64()),
        inputs: inputs.iter().map(|p| input_record(p)).collect::<Result<_>>()?,
        config: serde_json::to_value(config)?,
        outputs,
    };
    io::write_json(&dir.join("manifest.json"), &manifest)
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Precondition(format!("input file {} does not exist", path.display())))
    }
}

fn require_dir(path: &Path) -> Result<()> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(Error::Precondition(format!("input directory {} does not exist", path.display())))
    }
}

pub fn load_geometry(path: &Path) -> Result<RadarGeometry> {
    RadarGeometry::from_json(&io::read_text(path)?)
}

pub fn scene_path(dir: &Path, id: usize) -> PathBuf {
    dir.join(format!("scene_{id:04}.json"))
}

pub fn echo_path(dir: &Path, id: usize) -> PathBuf {
    dir.join(format!("echo_{id:04}.csig"))
}

/// Ids of the `scene_NNNN.json` files in `dir`, ascending; each must have
/// its echo file beside it.
pub fn list_scenes(dir: &Path) -> Result<Vec<usize>> {
    require_dir(dir)?;
    let mut ids = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let name = entry.map_err(|e| Error::io(dir, e))?.file_name();
        let name = name.to_string_lossy();
        if let Some(id) = name
            .strip_prefix("scene_")
            .and_then(|r| r.strip_suffix(".json"))
            .and_then(|d| d.parse::<usize>().ok())
        {
            ids.push(id);
        }
    }
    ids.sort_unstable();
    if ids.is_empty() {
        return Err(Error::Precondition(format!("no scene_NNNN.json files in {}", dir.display())));
    }
    for &id in &ids {
        require_file(&echo_path(dir, id))?;
    }
    Ok(ids)
}

/// A scene, its measured echo and the image-domain views of both.
#[derive(Debug, Clone)]
pub struct LoadedScene {
    pub id: usize,
    pub scene: Scene,
    /// Image-domain signal of the stored (possibly noisy) echo.
    pub signal: ComplexSignal,
    /// Image-domain signal of the noiseless echo.
    pub clean: ComplexSignal,
}

pub fn load_scenes(dir: &Path, geom: &RadarGeometry) -> Result<(Vec<LoadedScene>, Vec<PathBuf>)> {
    let ids = list_scenes(dir)?;
    let expected = geom.hash64();
    let mut out = Vec::with_capacity(ids.len());
    let mut files = Vec::with_capacity(2 * ids.len());
    for id in ids {
        let sp = scene_path(dir, id);
        let ep = echo_path(dir, id);
        let scene = Scene::from_json(&io::read_text(&sp)?)?;
        let found = scene.geometry.hash64();
        if found != expected {
            return Err(Error::HashMismatch { path: sp, expected, found });
        }
        let echo = io::read_csig(&ep)?;
        echo.check_echo(geom)?;
        out.push(LoadedScene {
            id,
            signal: signal_to_image_domain(&echo, geom)?,
            clean: signal_to_image_domain(&synthesize_echo(&scene.noiseless())?, geom)?,
            scene,
        });
        files.push(sp);
        files.push(ep);
    }
    Ok((out, files))
}

// ---------------------------------------------------------------- gen

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenOptions {
    pub geometry: PathBuf,
    pub out: PathBuf,
    pub count: usize,
    pub n_centers: usize,
    pub snr_db: Option<f64>,
    pub amplitude_range: (f64, f64),
    pub min_separation: usize,
    /// Scene `i` is drawn with seed `seed + i`.
    pub seed: u64,
}

impl GenOptions {
    pub fn new(geometry: PathBuf, out: PathBuf) -> Self {
        let spec = SceneSpec::default();
        GenOptions {
            geometry,
            out,
            count: 1,
            n_centers: spec.n_centers,
            snr_db: spec.snr_db,
            amplitude_range: spec.amplitude_range,
            min_separation: spec.min_separation,
            seed: 0,
        }
    }
}

pub fn cmd_gen(opts: &GenOptions) -> Result<Vec<usize>> {
    require_file(&opts.geometry)?;
    let geom = load_geometry(&opts.geometry)?;
    let spec = SceneSpec {
        n_centers: opts.n_centers,
        snr_db: opts.snr_db,
        amplitude_range: opts.amplitude_range,
        min_separation: opts.min_separation,
    };
    let mut outputs = Vec::new();
    let mut ids = Vec::with_capacity(opts.count);
    for id in 0..opts.count {
        let scene = random_scene(&geom, &spec, opts.seed.wrapping_add(id as u64))?;
        let echo = synthesize_echo(&scene)?;
        let sp = scene_path(&opts.out, id);
        let ep = echo_path(&opts.out, id);
        let mut text = scene.to_json()?;
        text.push('\n');
        io::write_file(&sp, text.as_bytes())?;
        io::write_csig(&ep, &echo)?;
        outputs.push(file_name(&sp));
        outputs.push(file_name(&ep));
        ids.push(id);
    }
    write_manifest(&opts.out, "gen", &geom, std::slice::from_ref(&opts.geometry), opts, outputs)?;
    Ok(ids)
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

// ---------------------------------------------------------------- dict

/// The flag wins, then `SARSC_CACHE_DIR`, then `./sarsc-cache`.
pub fn resolve_cache_dir(flag: Option<&Path>) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    match std::env::var_os(CACHE_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => PathBuf::from(DEFAULT_CACHE_DIR),
    }
}

pub fn dict_paths(cache_dir: &Path, geom: &RadarGeometry) -> (PathBuf, PathBuf) {
    let h = geom.hash64();
    (
        cache_dir.join(format!("freq_{h:016x}.scdt")),
        cache_dir.join(format!("image_{h:016x}.scdt")),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DictOutcome {
    pub freq_path: PathBuf,
    pub image_path: PathBuf,
    pub cache_hit: bool,
    pub warnings: Vec<String>,
}

fn load_cached(path: &Path, geom: &RadarGeometry, domain: Domain, warnings: &mut Vec<String>) -> Option<Dictionary> {
    if !path.exists() {
        return None;
    }
    match io::read_scdt(path, geom) {
        Ok(d) if d.domain() == domain => Some(d),
        Ok(_) => {
            warnings.push(format!("{} holds the wrong domain; rebuilding", path.display()));
            None
        }
        Err(e) => {
            warnings.push(format!("{} is unusable ({e}); rebuilding", path.display()));
            None
        }
    }
}

/// Loads the image-domain dictionary for `geom` from the cache, rebuilding
/// and rewriting both cache files when either is missing or invalid.
pub fn ensure_dictionaries(geom: &RadarGeometry, cache_dir: &Path) -> Result<(Dictionary, DictOutcome)> {
    let (freq_path, image_path) = dict_paths(cache_dir, geom);
    let mut warnings = Vec::new();
    let freq = load_cached(&freq_path, geom, Domain::Frequency, &mut warnings);
    let image = load_cached(&image_path, geom, Domain::Image, &mut warnings);
    let (image, cache_hit) = match (freq, image) {
        (Some(_), Some(image)) => (image, true),
        _ => {
            let freq = build_freq_dictionary(geom)?;
            let image = to_image_domain(&freq, geom)?;
            io::write_scdt(&freq_path, &freq)?;
            io::write_scdt(&image_path, &image)?;
            (image, false)
        }
    };
    Ok((
        image,
        DictOutcome {
            freq_path,
            image_path,
            cache_hit,
            warnings,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DictOptions {
    pub geometry: PathBuf,
    pub cache_dir: Option<PathBuf>,
}

pub fn cmd_dict(opts: &DictOptions) -> Result<DictOutcome> {
    require_file(&opts.geometry)?;
    let geom = load_geometry(&opts.geometry)?;
    let cache = resolve_cache_dir(opts.cache_dir.as_deref());
    let (_, outcome) = ensure_dictionaries(&geom, &cache)?;
    let outputs = vec![file_name(&outcome.freq_path), file_name(&outcome.image_path)];
    let config = serde_json::json!({ "options": opts, "cache_dir": cache });
    write_manifest(&cache, "dict", &geom, std::slice::from_ref(&opts.geometry), &config, outputs)?;
    Ok(outcome)
}

// ---------------------------------------------------------------- solvers

/// Solver settings shared by `solve`, `bench` and `sweep`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub lambda: f64,
    pub stages: usize,
    pub atoms: usize,
    /// ISTA step; `0.9 / ‖Φ‖²` when absent.
    pub step: Option<f64>,
    /// ISTA threshold; `step · λ / 2` when absent.
    pub threshold: Option<f64>,
    pub max_iters: usize,
    pub tol: f64,
    /// Unfolded parameters; constant defaults with `stages` stages when absent.
    pub params: Option<PathBuf>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        let cfg = SolverConfig::default();
        SolverOptions {
            lambda: DEFAULT_LAMBDA,
            stages: DEFAULT_STAGES,
            atoms: DEFAULT_OMP_ATOMS,
            step: None,
            threshold: None,
            max_iters: cfg.max_iters,
            tol: cfg.tol,
            params: None,
        }
    }
}

pub fn ista_default_step(d: &Dictionary) -> f64 {
    ISTA_STEP_FRACTION / spectral_norm_sqr(d.matrix(), 500, 1e-10)
}

pub fn load_params(opts: &SolverOptions) -> Result<UnfoldedParams> {
    match &opts.params {
        Some(p) => UnfoldedParams::from_json(&io::read_text(p)?),
        None => UnfoldedParams::constant(opts.stages, DEFAULT_STEP, DEFAULT_THRESHOLD),
    }
}

pub fn solver_spec(kind: SolverKind, d: &Dictionary, opts: &SolverOptions) -> Result<SolverSpec> {
    let config = SolverConfig {
        lambda: opts.lambda,
        max_iters: opts.max_iters,
        tol: opts.tol,
        omp_k: opts.atoms,
        ..SolverConfig::default()
    };
    config.validate()?;
    Ok(match kind {
        SolverKind::Ista => {
            let step = match opts.step {
                Some(t) => t,
                None => ista_default_step(d),
            };
            let threshold = opts.threshold.unwrap_or(step * opts.lambda / 2.0);
            SolverSpec::Ista { config, step, threshold }
        }
        SolverKind::Unfolded => SolverSpec::Unfolded {
            params: load_params(opts)?,
            lambda: opts.lambda,
        },
        SolverKind::Omp => SolverSpec::Omp { k_atoms: opts.atoms },
        SolverKind::Amp => SolverSpec::Amp { config },
    })
}

fn solver_inputs(opts: &SolverOptions, kinds: &[SolverKind]) -> Vec<PathBuf> {
    match &opts.params {
        Some(p) if kinds.contains(&SolverKind::Unfolded) => vec![p.clone()],
        _ => Vec::new(),
    }
}

// ---------------------------------------------------------------- solve

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultSummary {
    pub objective: f64,
    pub iterations: usize,
    pub wall_time: f64,
    pub nnz: usize,
    pub dropped_atoms: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub geometry: PathBuf,
    pub scenes: PathBuf,
    pub cache_dir: Option<PathBuf>,
    pub solver: SolverKind,
    pub solver_options: SolverOptions,
    pub jobs: usize,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOutcome {
    pub out_dir: PathBuf,
    pub support: Vec<SupportRow>,
    pub warnings: Vec<String>,
}

fn run_pool<T, F>(jobs: usize, n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    if jobs <= 1 {
        return (0..n).map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Resource(format!("thread pool: {e}")))?;
    pool.install(|| (0..n).into_par_iter().map(f).collect())
}

pub fn cmd_solve(opts: &SolveOptions) -> Result<SolveOutcome> {
    require_file(&opts.geometry)?;
    if let Some(p) = &opts.solver_options.params {
        require_file(p)?;
    }
    let geom = load_geometry(&opts.geometry)?;
    let (scenes, mut inputs) = load_scenes(&opts.scenes, &geom)?;
    let cache = resolve_cache_dir(opts.cache_dir.as_deref());
    let (d, dict) = ensure_dictionaries(&geom, &cache)?;
    let spec = solver_spec(opts.solver, &d, &opts.solver_options)?;
    let out_dir = opts.out.join(opts.solver.name());

    let results = run_pool(opts.jobs, scenes.len(), |i| spec.solve(&d, &scenes[i].signal))?;
    let mut outputs = Vec::new();
    let mut support = Vec::with_capacity(scenes.len());
    for (ls, res) in scenes.iter().zip(&results) {
        let code_path = out_dir.join(format!("code_{:04}.csig", ls.id));
        let recon_path = out_dir.join(format!("recon_{:04}.csig", ls.id));
        let result_path = out_dir.join(format!("result_{:04}.json", ls.id));
        io::write_csig(&code_path, &res.code.to_signal())?;
        io::write_csig(&recon_path, &reconstruct(&d, &res.code)?)?;
        let summary = ResultSummary {
            objective: res.objective,
            iterations: res.iterations,
            wall_time: res.wall_time,
            nnz: res.nnz(),
            dropped_atoms: res.dropped_atoms.clone(),
        };
        io::write_json(&result_path, &summary)?;
        outputs.extend([file_name(&code_path), file_name(&recon_path), file_name(&result_path)]);
        support.push(support_row(ls, &res.code, opts.solver)?);
    }
    io::write_file(&out_dir.join("support.csv"), to_csv(&support, &SUPPORT_HEADER)?.as_bytes())?;
    outputs.push("support.csv".into());

    inputs.insert(0, opts.geometry.clone());
    inputs.extend(solver_inputs(&opts.solver_options, &[opts.solver]));
    let config = serde_json::json!({ "options": opts, "resolved_solver": spec, "cache_dir": cache });
    write_manifest(&out_dir, "solve", &geom, &inputs, &config, outputs)?;
    Ok(SolveOutcome {
        out_dir,
        support,
        warnings: dict.warnings,
    })
}

fn support_row(ls: &LoadedScene, code: &SparseCode, solver: SolverKind) -> Result<SupportRow> {
    let rep = support_match(&ls.scene, code, default_magnitude_threshold(code), DEFAULT_POSITION_TOL)?;
    Ok(SupportRow {
        scene_id: ls.id,
        solver: solver.name().into(),
        precision: rep.precision,
        recall: rep.recall,
    })
}

// ---------------------------------------------------------------- train

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub geometry: PathBuf,
    pub scenes: PathBuf,
    pub cache_dir: Option<PathBuf>,
    /// Starting parameters; constant defaults with `stages` stages when absent.
    pub params: Option<PathBuf>,
    pub stages: usize,
    pub config: TrainConfig,
    pub out: PathBuf,
}

pub fn cmd_train(opts: &TrainOptions) -> Result<TrainReport> {
    require_file(&opts.geometry)?;
    if let Some(p) = &opts.params {
        require_file(p)?;
    }
    opts.config.validate()?;
    let geom = load_geometry(&opts.geometry)?;
    let (scenes, mut inputs) = load_scenes(&opts.scenes, &geom)?;
    let cache = resolve_cache_dir(opts.cache_dir.as_deref());
    let (d, _) = ensure_dictionaries(&geom, &cache)?;
    let init = load_params(&SolverOptions {
        params: opts.params.clone(),
        stages: opts.stages,
        ..SolverOptions::default()
    })?;
    let signals: Vec<ComplexSignal> = scenes.into_iter().map(|s| s.signal).collect();
    let report = train_unfolded(&d, &signals, &init, &opts.config)?;
    let mut params_text = report.final_params.to_json()?;
    params_text.push('\n');
    io::write_file(&opts.out.join("params.json"), params_text.as_bytes())?;
    io::write_json(&opts.out.join("train_report.json"), &report)?;
    inputs.insert(0, opts.geometry.clone());
    inputs.extend(opts.params.iter().cloned());
    write_manifest(
        &opts.out,
        "train",
        &geom,
        &inputs,
        opts,
        vec!["params.json".into(), "train_report.json".into()],
    )?;
    Ok(report)
}

// ---------------------------------------------------------------- eval

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub geometry: PathBuf,
    pub scenes: PathBuf,
    /// Output directory of `solve`; every `<solver>/` subdirectory found is scored.
    pub results: PathBuf,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutcome {
    pub psnr: Vec<PsnrRow>,
    pub support: Vec<SupportRow>,
}

/// PSNR of each stored reconstruction against the noiseless scene image,
/// and support recovery of each stored code.
pub fn cmd_eval(opts: &EvalOptions) -> Result<EvalOutcome> {
    require_file(&opts.geometry)?;
    require_dir(&opts.results)?;
    let geom = load_geometry(&opts.geometry)?;
    let (scenes, mut inputs) = load_scenes(&opts.scenes, &geom)?;
    let kinds: Vec<SolverKind> = SolverKind::ALL
        .into_iter()
        .filter(|k| opts.results.join(k.name()).is_dir())
        .collect();
    if kinds.is_empty() {
        return Err(Error::Precondition(format!("no solver output directories in {}", opts.results.display())));
    }
    let mut psnr_rows = Vec::new();
    let mut support_rows = Vec::new();
    for kind in kinds {
        let dir = opts.results.join(kind.name());
        for ls in &scenes {
            let recon_path = dir.join(format!("recon_{:04}.csig", ls.id));
            let code_path = dir.join(format!("code_{:04}.csig", ls.id));
            require_file(&recon_path)?;
            require_file(&code_path)?;
            let recon = io::read_csig(&recon_path)?;
            let code_signal = io::read_csig(&code_path)?;
            if code_signal.dims() != (geom.n_x, geom.n_y) {
                return Err(Error::Format {
                    kind: "CSIG",
                    reason: format!("{} is {:?}, expected the grid shape", code_path.display(), code_signal.dims()),
                });
            }
            let code = SparseCode::new(code_signal.into_values(), (geom.n_x, geom.n_y))?;
            psnr_rows.push(PsnrRow {
                signal_id: ls.id,
                solver: kind.name().into(),
                psnr_db: psnr(&ls.clean, &recon)?,
            });
            support_rows.push(support_row(ls, &code, kind)?);
            inputs.push(recon_path);
            inputs.push(code_path);
        }
    }
    io::write_file(&opts.out.join("psnr.csv"), to_csv(&psnr_rows, &PSNR_HEADER)?.as_bytes())?;
    io::write_file(&opts.out.join("support.csv"), to_csv(&support_rows, &SUPPORT_HEADER)?.as_bytes())?;
    inputs.insert(0, opts.geometry.clone());
    write_manifest(
        &opts.out,
        "eval",
        &geom,
        &inputs,
        opts,
        vec!["psnr.csv".into(), "support.csv".into()],
    )?;
    Ok(EvalOutcome {
        psnr: psnr_rows,
        support: support_rows,
    })
}

// ---------------------------------------------------------------- bench

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchOptions {
    pub geometry: PathBuf,
    pub scenes: PathBuf,
    pub cache_dir: Option<PathBuf>,
    pub solvers: Vec<SolverKind>,
    pub solver_options: SolverOptions,
    /// Run signals concurrently; timings are then marked as contended.
    pub parallel: bool,
    pub out: PathBuf,
}

pub fn cmd_bench(opts: &BenchOptions) -> Result<crate::metrics::BenchReport> {
    require_file(&opts.geometry)?;
    if let Some(p) = &opts.solver_options.params {
        require_file(p)?;
    }
    let geom = load_geometry(&opts.geometry)?;
    let (scenes, mut inputs) = load_scenes(&opts.scenes, &geom)?;
    let cache = resolve_cache_dir(opts.cache_dir.as_deref());
    let (d, _) = ensure_dictionaries(&geom, &cache)?;
    let specs = opts
        .solvers
        .iter()
        .map(|&k| solver_spec(k, &d, &opts.solver_options))
        .collect::<Result<Vec<_>>>()?;
    let signals: Vec<ComplexSignal> = scenes.iter().map(|s| s.signal.clone()).collect();
    let references: Vec<ComplexSignal> = scenes.iter().map(|s| s.clean.clone()).collect();
    let mut report = bench_solvers(&d, &signals, &references, &specs, opts.parallel)?;
    // rows carry the scene id rather than the batch position
    for row in &mut report.psnr {
        row.signal_id = scenes[row.signal_id].id;
    }
    for f in &mut report.failures {
        f.signal_id = scenes[f.signal_id].id;
    }
    io::write_file(&opts.out.join("timing.csv"), to_csv(&report.timing, &TIMING_HEADER)?.as_bytes())?;
    io::write_file(&opts.out.join("psnr.csv"), to_csv(&report.psnr, &PSNR_HEADER)?.as_bytes())?;
    io::write_json(&opts.out.join("failures.json"), &report.failures)?;
    inputs.insert(0, opts.geometry.clone());
    inputs.extend(solver_inputs(&opts.solver_options, &opts.solvers));
    let config = serde_json::json!({ "options": opts, "resolved_solvers": specs, "cache_dir": cache });
    write_manifest(
        &opts.out,
        "bench",
        &geom,
        &inputs,
        &config,
        vec!["timing.csv".into(), "psnr.csv".into(), "failures.json".into()],
    )?;
    Ok(report)
}

// ---------------------------------------------------------------- sweep

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub mean_psnr_db: f64,
    pub mean_nnz: f64,
}

pub const SWEEP_HEADER: [&str; 3] = ["lambda", "mean_psnr_db", "mean_nnz"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOptions {
    pub geometry: PathBuf,
    pub scenes: PathBuf,
    pub cache_dir: Option<PathBuf>,
    pub lambdas: Vec<f64>,
    /// `lambda`, `step` and `threshold` are ignored; each λ uses the default
    /// step and `step · λ / 2`.
    pub solver_options: SolverOptions,
    pub out: PathBuf,
}

/// ISTA reconstruction quality and sparsity across a list of λ values.
pub fn cmd_sweep(opts: &SweepOptions) -> Result<Vec<SweepRow>> {
    require_file(&opts.geometry)?;
    if opts.lambdas.is_empty() {
        return Err(Error::invalid("sweep needs at least one lambda"));
    }
    let geom = load_geometry(&opts.geometry)?;
    let (scenes, mut inputs) = load_scenes(&opts.scenes, &geom)?;
    let cache = resolve_cache_dir(opts.cache_dir.as_deref());
    let (d, _) = ensure_dictionaries(&geom, &cache)?;
    let step = ista_default_step(&d);
    let mut rows = Vec::with_capacity(opts.lambdas.len());
    for &lambda in &opts.lambdas {
        let so = SolverOptions {
            lambda,
            step: Some(step),
            threshold: None,
            ..opts.solver_options.clone()
        };
        let spec = solver_spec(SolverKind::Ista, &d, &so)?;
        let mut psnrs = Vec::new();
        let mut nnz = Vec::new();
        for ls in &scenes {
            let res = spec.solve(&d, &ls.signal)?;
            psnrs.push(psnr(&ls.clean, &reconstruct(&d, &res.code)?)?);
            nnz.push(res.nnz() as f64);
        }
        rows.push(SweepRow {
            lambda,
            mean_psnr_db: mean_std(&psnrs).0,
            mean_nnz: mean_std(&nnz).0,
        });
    }
    io::write_file(&opts.out.join("sweep.csv"), to_csv(&rows, &SWEEP_HEADER)?.as_bytes())?;
    inputs.insert(0, opts.geometry.clone());
    write_manifest(&opts.out, "sweep", &geom, &inputs, opts, vec!["sweep.csv".into()])?;
    Ok(rows)
}
