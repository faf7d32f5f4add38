//! `sarsc`: scattering-center extraction pipelines.
//!
//! Exit codes: 0 success, 2 usage, 3 invalid or missing data, 4 numerical failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sarsc_core::geometry::RadarGeometry;
use sarsc_core::io;
use sarsc_core::pipeline::{
    cmd_bench, cmd_dict, cmd_eval, cmd_gen, cmd_solve, cmd_sweep, cmd_train, BenchOptions, DictOptions, EvalOptions,
    GenOptions, SolveOptions, SolverOptions, SweepOptions, TrainOptions,
};
use sarsc_core::solvers::SolverKind;
use sarsc_core::training::TrainConfig;
use sarsc_core::Error;

const EXIT_DATA: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

#[derive(Parser)]
#[command(name = "sarsc", version, about = "SAR scattering-center extraction by sparse coding")]
struct Cli {
    /// Print progress details to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a square benchmark geometry.
    Geometry {
        #[arg(long, default_value_t = 32)]
        benchmark: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate random on-grid scenes and their echoes.
    Gen(GenArgs),
    /// Build or reuse the cached dictionaries for a geometry.
    Dict {
        #[arg(long)]
        geometry: PathBuf,
        #[arg(long)]
        dict_cache: Option<PathBuf>,
    },
    /// Recover sparse codes for every scene with one solver.
    Solve(SolveArgs),
    /// Fit unfolded step sizes and thresholds on a scene set.
    Train(TrainArgs),
    /// Score stored solver outputs against the scenes.
    Eval {
        #[arg(long)]
        geometry: PathBuf,
        #[arg(long)]
        scenes: PathBuf,
        /// Output directory of `solve`.
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Time and score several solvers on the same scenes.
    Bench(BenchArgs),
    /// ISTA quality and sparsity across a list of lambda values.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    geometry: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    count: usize,
    /// Scatterers per scene.
    #[arg(long)]
    centers: Option<usize>,
    /// Echo SNR in dB; noiseless when absent.
    #[arg(long)]
    snr: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct InputArgs {
    #[arg(long)]
    geometry: PathBuf,
    #[arg(long)]
    scenes: PathBuf,
    #[arg(long)]
    dict_cache: Option<PathBuf>,
}

#[derive(Args)]
struct SolverArgs {
    #[arg(long)]
    lambda: Option<f64>,
    /// Unfolded stage count when `--params` is absent.
    #[arg(long)]
    stages: Option<usize>,
    /// OMP atom budget.
    #[arg(long)]
    atoms: Option<usize>,
    /// ISTA step; 0.9 / ||D||^2 when absent.
    #[arg(long)]
    step: Option<f64>,
    /// ISTA threshold; step * lambda / 2 when absent.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    /// Early-stopping tolerance; 0 runs every iteration.
    #[arg(long)]
    tol: Option<f64>,
    /// Unfolded parameters as written by `train`.
    #[arg(long)]
    params: Option<PathBuf>,
}

impl SolverArgs {
    fn options(&self) -> SolverOptions {
        let mut o = SolverOptions::default();
        if let Some(v) = self.lambda {
            o.lambda = v;
        }
        if let Some(v) = self.stages {
            o.stages = v;
        }
        if let Some(v) = self.atoms {
            o.atoms = v;
        }
        if let Some(v) = self.max_iters {
            o.max_iters = v;
        }
        if let Some(v) = self.tol {
            o.tol = v;
        }
        o.step = self.step;
        o.threshold = self.threshold;
        o.params = self.params.clone();
        o
    }
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    solver: SolverKind,
    #[command(flatten)]
    solver_args: SolverArgs,
    /// Worker threads; 1 solves scenes in order.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Initial parameters; constant defaults when absent.
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long, default_value_t = sarsc_core::solvers::DEFAULT_STAGES)]
    stages: usize,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    min_step: Option<f64>,
    #[arg(long)]
    fd_rel_step: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Solvers to compare; all of them when absent.
    #[arg(long, value_delimiter = ',')]
    solver: Vec<SolverKind>,
    #[command(flatten)]
    solver_args: SolverArgs,
    /// Solve signals concurrently; timings are then marked contended.
    #[arg(long)]
    parallel: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, value_delimiter = ',', required = true)]
    lambdas: Vec<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

fn run(cli: Cli) -> sarsc_core::Result<()> {
    let verbose = cli.verbose;
    match cli.command {
        Command::Geometry { benchmark, out } => {
            let geom = RadarGeometry::benchmark(benchmark)?;
            let mut text = geom.to_json()?;
            text.push('\n');
            io::write_file(&out, text.as_bytes())?;
        }
        Command::Gen(a) => {
            let mut opts = GenOptions::new(a.geometry, a.out);
            opts.count = a.count;
            opts.snr_db = a.snr;
            opts.seed = a.seed;
            if let Some(n) = a.centers {
                opts.n_centers = n;
            }
            let ids = cmd_gen(&opts)?;
            if verbose {
                eprintln!("wrote {} scenes to {}", ids.len(), opts.out.display());
            }
        }
        Command::Dict { geometry, dict_cache } => {
            let outcome = cmd_dict(&DictOptions {
                geometry,
                cache_dir: dict_cache,
            })?;
            warn_all(&outcome.warnings);
            let state = if outcome.cache_hit { "hit" } else { "built" };
            println!("cache {state}: {}", outcome.freq_path.display());
            println!("cache {state}: {}", outcome.image_path.display());
        }
        Command::Solve(a) => {
            let outcome = cmd_solve(&SolveOptions {
                geometry: a.input.geometry,
                scenes: a.input.scenes,
                cache_dir: a.input.dict_cache,
                solver: a.solver,
                solver_options: a.solver_args.options(),
                jobs: a.jobs,
                out: a.out,
            })?;
            warn_all(&outcome.warnings);
            if verbose {
                for r in &outcome.support {
                    eprintln!("scene {}: precision {:.3} recall {:.3}", r.scene_id, r.precision, r.recall);
                }
            }
        }
        Command::Train(a) => {
            let mut config = TrainConfig::default();
            if let Some(v) = a.lambda {
                config.lambda = v;
            }
            if let Some(v) = a.epochs {
                config.epochs = v;
            }
            if let Some(v) = a.learning_rate {
                config.learning_rate = v;
            }
            if let Some(v) = a.min_step {
                config.min_step = v;
            }
            if let Some(v) = a.fd_rel_step {
                config.fd_rel_step = v;
            }
            if let Some(v) = a.seed {
                config.seed = v;
            }
            let report = cmd_train(&TrainOptions {
                geometry: a.input.geometry,
                scenes: a.input.scenes,
                cache_dir: a.input.dict_cache,
                params: a.params,
                stages: a.stages,
                config,
                out: a.out,
            })?;
            if !report.improved {
                eprintln!("warning: training did not lower the loss");
            }
            if verbose {
                eprintln!("loss {:.6e} -> {:.6e}", report.initial_loss, report.final_loss);
            }
        }
        Command::Eval {
            geometry,
            scenes,
            results,
            out,
        } => {
            let outcome = cmd_eval(&EvalOptions {
                geometry,
                scenes,
                results,
                out,
            })?;
            if verbose {
                eprintln!("{} psnr rows, {} support rows", outcome.psnr.len(), outcome.support.len());
            }
        }
        Command::Bench(a) => {
            let solvers = if a.solver.is_empty() {
                SolverKind::ALL.to_vec()
            } else {
                a.solver
            };
            let report = cmd_bench(&BenchOptions {
                geometry: a.input.geometry,
                scenes: a.input.scenes,
                cache_dir: a.input.dict_cache,
                solvers,
                solver_options: a.solver_args.options(),
                parallel: a.parallel,
                out: a.out,
            })?;
            for f in &report.failures {
                eprintln!("warning: {} failed on scene {}: {}", f.solver, f.signal_id, f.message);
            }
            for t in &report.timing {
                println!("{:<9} {:>10.6} s  {:>8.2} dB", t.solver, t.mean_s, t.mean_psnr_db);
            }
        }
        Command::Sweep(a) => {
            let mut solver_options = SolverOptions::default();
            if let Some(v) = a.max_iters {
                solver_options.max_iters = v;
            }
            if let Some(v) = a.tol {
                solver_options.tol = v;
            }
            let rows = cmd_sweep(&SweepOptions {
                geometry: a.input.geometry,
                scenes: a.input.scenes,
                cache_dir: a.input.dict_cache,
                lambdas: a.lambdas,
                solver_options,
                out: a.out,
            })?;
            for r in &rows {
                println!("{:>12} {:>8.2} dB {:>8.1} nnz", r.lambda, r.mean_psnr_db, r.mean_nnz);
            }
        }
    }
    Ok(())
}

fn warn_all(warnings: &[String]) {
    for w in warnings {
        eprintln!("warning: {w}");
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_DATA
    }
}

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
