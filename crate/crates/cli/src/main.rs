//! `twocontact`: classify, map, simulate and sweep two-contact equilibria.
//!
//! Exit codes: 0 stable, 1 unstable, 2 input error, 3 degenerate or
//! inconclusive, 4 no equilibrium. `map`, `simulate` and `sweep` exit 0 on
//! success.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use twocontact::biped::BipedSpec;
use twocontact::io::{
    exit_code, load_biped, load_config, ClassifyReport, SimulationSummary, EXIT_INPUT,
};
use twocontact::poincare::{analyze, build_map, GridSpec, ZodReturnMap};
use twocontact::simulator::{foot_lift, simulate, SimOptions};
use twocontact::sweep::{curves_to_csv, growth_curves, run_sweep, SweepGrid};
use twocontact::{build_tableau, Configuration, ContactState};

#[derive(Parser)]
#[command(name = "twocontact", version, about)]
struct Cli {
    /// Worker threads for parallel sampling (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Classify the equilibrium of a configuration; prints a JSON report.
    Classify {
        config: PathBuf,
        #[command(flatten)]
        grid: GridArgs,
        /// Write the report here instead of stdout.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Sample the return map R(φ) and growth map G(φ) as CSV.
    Map {
        config: PathBuf,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Simulate the zero-order dynamics from a perturbed equilibrium.
    Simulate(SimulateArgs),
    /// Sweep the biped's centre of mass and write per-μ1 verdict CSVs and
    /// growth-rate curves.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct GridArgs {
    /// Uniform samples of φ.
    #[arg(long, default_value_t = 2001)]
    samples: usize,
    /// Extra samples between neighbours flagged for refinement.
    #[arg(long, default_value_t = 10)]
    refine: usize,
    /// Distance of the outermost grid samples from ±π/2, rad.
    #[arg(long, default_value_t = 1e-3)]
    edge: f64,
}

impl GridArgs {
    fn spec(&self) -> GridSpec {
        GridSpec {
            n: self.samples,
            refine: self.refine,
            edge: self.edge,
            ..GridSpec::default()
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    config: PathBuf,
    /// Contact lifted in the initial state (1 or 2).
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=2))]
    foot: u8,
    /// Initial lift of that contact, mm.
    #[arg(long, default_value_t = 0.1)]
    lift_mm: f64,
    /// Instead of a foot lift, simulate this many random perturbations of
    /// scale `lift_mm` and write only their summaries.
    #[arg(long)]
    random: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10.0)]
    t_max: f64,
    #[arg(long, default_value_t = 200_000)]
    max_events: usize,
    #[arg(long, default_value_t = 10.0)]
    divergence_factor: f64,
    /// Relative tolerance for simultaneous events.
    #[arg(long, default_value_t = 1e-9)]
    rel_time_tol: f64,
    /// Relative tolerance for zero velocities.
    #[arg(long, default_value_t = 1e-11)]
    rel_vel_tol: f64,
    /// Stop at Zeno points instead of continuing from the limit state.
    #[arg(long)]
    no_zeno_projection: bool,
    /// Extra trajectory rows every this many seconds.
    #[arg(long)]
    sample_period: Option<f64>,
    #[arg(short, long, default_value = "out")]
    output_dir: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    /// Biped geometry (JSON); built-in defaults otherwise.
    #[arg(long)]
    biped: Option<PathBuf>,
    /// Leg lengths (rows), mm.
    #[arg(long, value_delimiter = ',', default_values_t = [90.0, 100.0, 110.0, 120.0, 130.0])]
    legs_mm: Vec<f64>,
    /// Positions of the movable cylinder (columns), mm.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_values_t = (0..13).map(|k| -60.0 + 10.0 * k as f64).collect::<Vec<_>>())]
    positions_mm: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.28, 0.315, 0.35])]
    mu1: Vec<f64>,
    /// Leg length of the growth-rate curves, mm.
    #[arg(long, default_value_t = 110.0)]
    curve_leg_mm: f64,
    /// Range and step of the cylinder position along the curves, mm.
    #[arg(long, allow_hyphen_values = true, default_value_t = -60.0)]
    curve_from_mm: f64,
    #[arg(long, allow_hyphen_values = true, default_value_t = 100.0)]
    curve_to_mm: f64,
    #[arg(long, default_value_t = 2.5)]
    curve_step_mm: f64,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(short, long, default_value = "out")]
    output_dir: PathBuf,
}

/// Failure that maps to the input-error exit code.
struct InputFailure(String);

impl<E: std::fmt::Display> From<E> for InputFailure {
    fn from(e: E) -> Self {
        InputFailure(e.to_string())
    }
}

fn read(path: &Path) -> Result<String, InputFailure> {
    fs::read_to_string(path).map_err(|e| InputFailure(format!("{}: {e}", path.display())))
}

fn read_config(path: &Path) -> Result<(Option<String>, Configuration), InputFailure> {
    let text = read(path)?;
    let (file, cfg) =
        load_config(&text).map_err(|e| InputFailure(format!("{}: {e}", path.display())))?;
    Ok((file.name, cfg))
}

fn write(path: &Path, text: &str) -> Result<(), InputFailure> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(path, text).map_err(|e| InputFailure(format!("{}: {e}", path.display())))
}

fn emit(output: &Option<PathBuf>, text: &str) -> Result<(), InputFailure> {
    match output {
        Some(p) => write(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn classify(config: &Path, grid: &GridArgs, output: &Option<PathBuf>) -> Result<i32, InputFailure> {
    let (name, cfg) = read_config(config)?;
    let rep = analyze(&cfg, &grid.spec())?;
    let report = ClassifyReport::new(name, &cfg, &rep);
    emit(output, &(serde_json::to_string_pretty(&report)? + "\n"))?;
    Ok(exit_code(rep.verdict.verdict))
}

fn map(config: &Path, grid: &GridArgs, output: &Option<PathBuf>) -> Result<i32, InputFailure> {
    let (_, cfg) = read_config(config)?;
    let map = build_map(&ZodReturnMap::new(build_tableau(&cfg)?), &grid.spec());
    emit(output, &map.to_csv())?;
    Ok(0)
}

/// Random admissible perturbation: gaps in `[0, scale]`, velocities of the
/// matching free-fall order.
fn random_perturbation(rng: &mut ChaCha8Rng, scale: f64, cfg: &Configuration) -> ContactState {
    let v = (2.0 * cfg.f_ex / cfg.m * scale).sqrt();
    ContactState::new(
        [rng.gen_range(0.0..=scale), rng.gen_range(0.0..=scale), 0.0],
        std::array::from_fn(|_| rng.gen_range(-v..=v)),
    )
}

fn simulate_cmd(a: &SimulateArgs) -> Result<i32, InputFailure> {
    let (_, cfg) = read_config(&a.config)?;
    let opts = SimOptions {
        t_max: a.t_max,
        max_events: a.max_events,
        divergence_factor: a.divergence_factor,
        rel_time_tol: a.rel_time_tol,
        rel_vel_tol: a.rel_vel_tol,
        project_zeno: !a.no_zeno_projection,
        ..SimOptions::default()
    };
    let lift = a.lift_mm * 1e-3;
    if let Some(n) = a.random {
        let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
        let mut runs = Vec::with_capacity(n);
        for k in 0..n {
            let init = random_perturbation(&mut rng, lift, &cfg);
            let result = match simulate(&cfg, &init, &opts) {
                Ok(traj) => serde_json::json!({
                    "run": k,
                    "initial": init,
                    "summary": SimulationSummary::new(&traj),
                }),
                Err(e) => serde_json::json!({ "run": k, "initial": init, "error": e.to_string() }),
            };
            runs.push(result);
        }
        write(
            &a.output_dir.join("batch.json"),
            &(serde_json::to_string_pretty(&runs)? + "\n"),
        )?;
        return Ok(0);
    }
    let traj = simulate(&cfg, &foot_lift(a.foot as usize - 1, lift), &opts)?;
    write(&a.output_dir.join("trajectory.csv"), &traj.to_csv(a.sample_period))?;
    write(
        &a.output_dir.join("summary.json"),
        &(serde_json::to_string_pretty(&SimulationSummary::new(&traj))? + "\n"),
    )?;
    Ok(0)
}

fn sweep_cmd(a: &SweepArgs) -> Result<i32, InputFailure> {
    let base = match &a.biped {
        Some(p) => load_biped(&read(p)?).map_err(|e| InputFailure(format!("{}: {e}", p.display())))?,
        None => BipedSpec::default(),
    };
    if a.curve_step_mm <= 0.0 || a.curve_to_mm < a.curve_from_mm {
        return Err(InputFailure("curve range must be increasing with a positive step".into()));
    }
    let grid = SweepGrid {
        leg_lengths: a.legs_mm.iter().map(|v| v * 1e-3).collect(),
        cylinder_positions: a.positions_mm.iter().map(|v| v * 1e-3).collect(),
    };
    let rg = a.grid.spec();
    for result in run_sweep(&base, &grid, &a.mu1, &rg) {
        write(
            &a.output_dir.join(format!("sweep_mu1_{}.csv", result.mu1)),
            &result.to_csv(),
        )?;
    }
    let steps = ((a.curve_to_mm - a.curve_from_mm) / a.curve_step_mm + 1e-9).floor() as usize;
    let positions: Vec<f64> = (0..=steps)
        .map(|k| (a.curve_from_mm + a.curve_step_mm * k as f64) * 1e-3)
        .collect();
    let curves = growth_curves(&base, a.curve_leg_mm * 1e-3, &positions, &a.mu1, &rg);
    write(&a.output_dir.join("growth.csv"), &curves_to_csv(&curves))?;
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_INPUT as u8);
        }
    }
    let result = match &cli.command {
        Command::Classify { config, grid, output } => classify(config, grid, output),
        Command::Map { config, grid, output } => map(config, grid, output),
        Command::Simulate(a) => simulate_cmd(a),
        Command::Sweep(a) => sweep_cmd(a),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(InputFailure(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_INPUT as u8)
        }
    }
}
