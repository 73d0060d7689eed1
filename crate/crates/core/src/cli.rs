//! Command-line front end: argument parsing, run orchestration and artifact
//! emission. All numeric CSV cells print through the f64 `Display` impl
//! (shortest round-trip form), which keeps artifacts byte-stable across runs
//! with equal seeds.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{parse_config, RunConfig};
use crate::encoding::ControlGrid;
use crate::error::{Error, Result};
use crate::metrology::{
    analytic_gradient, exact_qfi_of_controls, finite_difference_gradient, noon_fidelity,
};
use crate::noise::NoiseModel;
use crate::optimizer::{
    derive_seed, error_budget, random_initial_controls, run_grape, run_grape_exp, run_hqc_grape,
    Mode, OptimizationTrace, Problem,
};
use crate::quantum::{Axis, DensityMatrix};
use crate::sensor::Sensor;

#[derive(Debug, Parser)]
#[command(
    name = "qfi-grape",
    version,
    about = "Pulse optimization for two-qubit frequency metrology on a simulated sensor"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the requested optimization modes and write trace artifacts.
    Run(RunArgs),
    /// Compare measured, analytic and finite-difference gradients.
    GradientCheck(GradientCheckArgs),
    /// QFI loss per error source, in isolation and cumulatively.
    ErrorBudget(BudgetArgs),
    /// QFI of a fixed pulse as one noise parameter sweeps a range.
    NoiseSweep(SweepArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// Path to a JSON run configuration.
    #[arg(long, value_name = "PATH", conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in configuration (available: paper-2q).
    #[arg(long, value_name = "NAME")]
    preset: Option<String>,
    /// Root seed; overrides the config's optimizer.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for artifacts.
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Sensor runs per reported QFI statistic; overrides the config.
    #[arg(long)]
    repeats: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    All,
    Grape,
    GrapeExp,
    HqcGrape,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Which modes to run; `all` means every mode listed in the config.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
}

#[derive(Debug, Args)]
struct GradientCheckArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Central-difference step, rad/s.
    #[arg(long, default_value_t = 1e-3)]
    fd_step: f64,
}

#[derive(Debug, Args)]
struct BudgetArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Controls JSON to analyze; omitted, a fresh GRAPE run supplies one.
    #[arg(long, value_name = "PATH")]
    controls: Option<PathBuf>,
    /// Monte Carlo trials for stochastic error sources.
    #[arg(long, default_value_t = 1000)]
    trials: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SweepParam {
    /// Relative pulse amplitude fluctuation, 0 to 0.1.
    PulseFluctuation,
    /// Readout Gaussian sigma, 0 to 1e-3.
    ReadoutSigma,
    /// Multiplier on the configured T1 times, 0.25 to 4.
    T1Scale,
    /// Multiplier on the configured T2 times, 0.25 to 4.
    T2Scale,
    /// Initial-state fidelity, 0.995 to 1.
    InitialStateFidelity,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, value_enum)]
    param: SweepParam,
    /// Grid points across the sweep range.
    #[arg(long, default_value_t = 11)]
    points: usize,
    /// Sensor evaluations per grid point.
    #[arg(long, default_value_t = 200)]
    trials: usize,
    /// Controls JSON to evaluate; omitted, a fresh GRAPE run supplies one.
    #[arg(long, value_name = "PATH")]
    controls: Option<PathBuf>,
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::GradientCheck(args) => cmd_gradient_check(args),
        Command::ErrorBudget(args) => cmd_error_budget(args),
        Command::NoiseSweep(args) => cmd_noise_sweep(args),
    }
}

fn load_config(common: &CommonArgs) -> Result<RunConfig> {
    let mut config = match (&common.config, &common.preset) {
        (Some(path), None) => parse_config(path)?,
        (None, Some(name)) => RunConfig::preset(name)?,
        _ => {
            return Err(Error::Config(
                "exactly one of --config or --preset is required".into(),
            ))
        }
    };
    if let Some(seed) = common.seed {
        config.optimizer.seed = seed;
    }
    if let Some(repeats) = common.repeats {
        if repeats == 0 {
            return Err(Error::Config("repeats must be at least 1".into()));
        }
        config.repeats = repeats;
    }
    config.validate()?;
    Ok(config)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// The pinned trace schema. One row per objective decision, the initial
/// point first; `qfi_std_over_repeats` is zero wherever the mode reports
/// exact values or single measurements.
pub fn trace_csv(trace: &OptimizationTrace) -> String {
    let mut out = String::from(
        "iteration,qfi,qfi_std_over_repeats,grad_norm,lambda,accepted,cumulative_evolutions\n",
    );
    for row in &trace.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            row.iteration,
            row.qfi,
            row.qfi_std,
            row.grad_norm,
            row.lambda,
            row.accepted,
            row.cumulative_evolutions
        ));
    }
    out
}

#[derive(Debug, Serialize, Deserialize)]
struct ControlsLineFile {
    qubit: usize,
    axis: Axis,
    amplitudes: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ControlsFile {
    total_time: f64,
    dt: f64,
    a_max: f64,
    lines: Vec<ControlsLineFile>,
}

pub fn controls_json(config: &RunConfig, u: &ControlGrid) -> String {
    let lines: Vec<ControlsLineFile> = config
        .control_lines
        .iter()
        .enumerate()
        .map(|(k, line)| ControlsLineFile {
            qubit: line.qubit,
            axis: line.axis,
            amplitudes: (0..u.m()).map(|s| u.get(k, s)).collect(),
        })
        .collect();
    let file = ControlsFile {
        total_time: u.total_time(),
        dt: u.dt(),
        a_max: u.a_max(),
        lines,
    };
    serde_json::to_string_pretty(&file).expect("controls serialize")
}

pub fn read_controls(path: &Path, config: &RunConfig) -> Result<ControlGrid> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read controls {}: {e}", path.display())))?;
    let file: ControlsFile = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("invalid controls file: {e}")))?;
    if file.lines.len() != config.control_lines.len() {
        return Err(Error::Config(format!(
            "controls file has {} lines, config expects {}",
            file.lines.len(),
            config.control_lines.len()
        )));
    }
    let m = file
        .lines
        .first()
        .map(|l| l.amplitudes.len())
        .ok_or_else(|| Error::Config("controls file has no lines".into()))?;
    let mut amplitudes = Vec::with_capacity(file.lines.len() * m);
    for (line, expected) in file.lines.iter().zip(&config.control_lines) {
        if line.qubit != expected.qubit || line.axis != expected.axis {
            return Err(Error::Config(format!(
                "controls line ({}, {}) does not match config line ({}, {})",
                line.qubit, line.axis, expected.qubit, expected.axis
            )));
        }
        if line.amplitudes.len() != m {
            return Err(Error::Config("controls lines have unequal lengths".into()));
        }
        amplitudes.extend_from_slice(&line.amplitudes);
    }
    let grid = ControlGrid::new(
        config.control_lines.len(),
        m,
        file.total_time,
        file.a_max,
        amplitudes,
    )?;
    if (file.dt - grid.dt()).abs() > 1e-9 * grid.dt().abs().max(1e-300) {
        return Err(Error::Config(format!(
            "controls dt {} is inconsistent with total_time/{m}",
            file.dt
        )));
    }
    Ok(grid)
}

pub fn state_json(rho: &DensityMatrix) -> String {
    let m = rho.matrix();
    let rows: Vec<Vec<serde_json::Value>> = (0..rho.dim())
        .map(|i| {
            (0..rho.dim())
                .map(|j| json!({"re": m[(i, j)].re, "im": m[(i, j)].im}))
                .collect()
        })
        .collect();
    serde_json::to_string_pretty(&json!({"dim": rho.dim(), "matrix": rows}))
        .expect("state serializes")
}

/// Deterministic noiseless final state of a pulse; what the optimizer was
/// steering toward, free of any noise realization.
fn expected_final_state(problem: &Problem, u: &ControlGrid) -> Result<DensityMatrix> {
    crate::encoding::propagate(
        &problem.hamiltonian,
        &problem.control_specs,
        u,
        &problem.probe,
    )
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let config = load_config(&args.common)?;
    let problem = config.problem()?;
    let modes: Vec<Mode> = match args.mode {
        None | Some(ModeArg::All) => config.modes.clone(),
        Some(ModeArg::Grape) => vec![Mode::Grape],
        Some(ModeArg::GrapeExp) => vec![Mode::GrapeExp],
        Some(ModeArg::HqcGrape) => vec![Mode::HqcGrape],
    };
    let mut deduped: Vec<Mode> = Vec::new();
    for mode in modes {
        if !deduped.contains(&mode) {
            deduped.push(mode);
        }
    }

    let need_grape = deduped
        .iter()
        .any(|m| matches!(m, Mode::Grape | Mode::GrapeExp));
    let grape_trace = if need_grape {
        Some(run_grape(&problem, &config.optimizer)?)
    } else {
        None
    };

    let out = &args.common.out;
    std::fs::create_dir_all(out)?;
    let mut summary_modes = serde_json::Map::new();
    for mode in &deduped {
        let trace = match mode {
            Mode::Grape => grape_trace.clone().expect("grape requested"),
            Mode::GrapeExp => run_grape_exp(
                &problem,
                &config.noise,
                grape_trace.as_ref().expect("grape requested"),
                config.optimizer.seed,
                config.repeats,
            )?,
            Mode::HqcGrape => {
                run_hqc_grape(&problem, &config.noise, &config.optimizer, config.repeats)?
            }
        };
        let state = expected_final_state(&problem, &trace.final_controls)?;
        let noon = noon_fidelity(&state)?;
        write_text(&out.join(format!("{mode}.trace.csv")), &trace_csv(&trace))?;
        write_text(
            &out.join(format!("{mode}.controls.json")),
            &controls_json(&config, &trace.final_controls),
        )?;
        write_text(&out.join(format!("{mode}.state.json")), &state_json(&state))?;
        let accepted_iterations = trace.accepted_rows().count() - 1;
        println!(
            "{mode}: final QFI {:.6} ± {:.6} after {} accepted iterations, {} evolutions, restart {}, NOON fidelity {:.4}",
            trace.final_qfi,
            trace.final_qfi_std,
            accepted_iterations,
            trace.final_row().cumulative_evolutions,
            trace.restart_index,
            noon
        );
        summary_modes.insert(
            mode.as_str().to_string(),
            json!({
                "final_qfi_mean": trace.final_qfi,
                "final_qfi_std": trace.final_qfi_std,
                "noon_fidelity": noon,
                "accepted_iterations": accepted_iterations,
                "cumulative_evolutions": trace.final_row().cumulative_evolutions,
                "restart_index": trace.restart_index,
            }),
        );
    }

    let summary = json!({
        "seed": config.optimizer.seed,
        "repeats": config.repeats,
        "modes": summary_modes,
    });
    write_text(
        &out.join("summary.json"),
        &serde_json::to_string_pretty(&summary).expect("summary serializes"),
    )?;
    write_text(&out.join("config.json"), &config.to_json())?;
    Ok(())
}

fn norm_of(entries: &[f64]) -> f64 {
    entries.iter().map(|e| e * e).sum::<f64>().sqrt()
}

fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let nb = norm_of(b);
    if nb > 0.0 {
        diff / nb
    } else if norm_of(a) > 0.0 {
        diff / norm_of(a)
    } else {
        0.0
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = norm_of(a);
    let nb = norm_of(b);
    if na == 0.0 && nb == 0.0 {
        return 1.0;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
}

fn cmd_gradient_check(args: GradientCheckArgs) -> Result<()> {
    let config = load_config(&args.common)?;
    let problem = config.problem()?;
    if !(args.fd_step > 0.0) {
        return Err(Error::Config("fd-step must be positive".into()));
    }
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(derive_seed(
        config.optimizer.seed,
        "init",
        0,
    ));
    let u = random_initial_controls(
        problem.k(),
        problem.slices,
        problem.total_time,
        problem.a_max,
        config.optimizer.init_amplitude_bound,
        &mut rng,
    )?;
    let t_total = problem.total_time;
    let inv_t2 = if t_total > 0.0 { 1.0 / (t_total * t_total) } else { 0.0 };
    let dh = problem.hamiltonian.dh_domega();

    // measured (rotation-insertion) vs analytic on the same pulse
    let analytic = analytic_gradient(
        &problem.hamiltonian,
        &problem.control_specs,
        &u,
        &problem.probe,
        dh,
    )?
    .scaled(inv_t2);
    let mut sensor = Sensor::new(problem.sensor_config(&NoiseModel::default())?, 0);
    let first = sensor.measure_qfi(&u)?;
    let measured = sensor
        .measure_gradient(&u, first.p00 - first.p11)?
        .scaled(inv_t2);
    let max_dev = analytic
        .entries()
        .iter()
        .zip(measured.entries())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0_f64, f64::max);
    println!("pulse: {} lines x {} slices, T = {} s", u.k(), u.m(), t_total);
    println!("rotation-insertion vs analytic, max |dev| (normalized units): {max_dev:e}");

    // the analytic form is exact only in the dt -> 0 limit; refining the
    // grid at fixed T shows the finite-difference deviation shrinking
    println!("analytic vs central finite differences (step {} rad/s):", args.fd_step);
    println!("{:>8} {:>14} {:>12}", "slices", "rel_l2", "cosine");
    for factor in [1usize, 2, 4, 8] {
        let fine = u.refined(factor)?;
        let analytic_fine = analytic_gradient(
            &problem.hamiltonian,
            &problem.control_specs,
            &fine,
            &problem.probe,
            dh,
        )?
        .scaled(inv_t2);
        let h = &problem.hamiltonian;
        let specs = &problem.control_specs;
        let probe = &problem.probe;
        let fd = finite_difference_gradient(
            |grid| {
                exact_qfi_of_controls(h, specs, grid, probe, dh)
                    .expect("objective evaluates")
                    .normalized
            },
            &fine,
            args.fd_step,
        )?;
        println!(
            "{:>8} {:>14.6e} {:>12.6}",
            fine.m(),
            rel_l2(analytic_fine.entries(), fd.entries()),
            cosine(analytic_fine.entries(), fd.entries())
        );
    }

    // zero pulse: both gradients vanish identically
    let zeros = ControlGrid::zeros(problem.k(), problem.slices, t_total, problem.a_max)?;
    let analytic_zero = analytic_gradient(
        &problem.hamiltonian,
        &problem.control_specs,
        &zeros,
        &problem.probe,
        dh,
    )?
    .scaled(inv_t2);
    let fd_zero = finite_difference_gradient(
        |grid| {
            exact_qfi_of_controls(&problem.hamiltonian, &problem.control_specs, grid, &problem.probe, dh)
                .expect("objective evaluates")
                .normalized
        },
        &zeros,
        args.fd_step,
    )?;
    println!(
        "zero pulse: analytic norm {:e}, finite-difference norm {:e}, rel_l2 {}",
        analytic_zero.norm(),
        fd_zero.norm(),
        rel_l2(analytic_zero.entries(), fd_zero.entries())
    );
    Ok(())
}

fn obtain_controls(
    controls: &Option<PathBuf>,
    config: &RunConfig,
    problem: &Problem,
) -> Result<ControlGrid> {
    match controls {
        Some(path) => read_controls(path, config),
        None => {
            eprintln!("no --controls given; optimizing a pulse first");
            Ok(run_grape(problem, &config.optimizer)?.final_controls)
        }
    }
}

fn cmd_error_budget(args: BudgetArgs) -> Result<()> {
    let config = load_config(&args.common)?;
    let problem = config.problem()?;
    if config.noise.is_noiseless() {
        return Err(Error::Config(
            "the configured noise model is empty; there is no budget to compute".into(),
        ));
    }
    let controls = obtain_controls(&args.controls, &config, &problem)?;
    let budget = error_budget(
        &problem,
        &config.noise,
        &controls,
        config.optimizer.seed,
        args.trials,
    )?;

    println!("ideal QFI: {:.6}", budget.ideal_qfi);
    println!(
        "{:<16} {:>10} {:>10} {:>10} {:>10}",
        "source", "qfi", "qfi_std", "drop", "drop_std"
    );
    let mut csv = String::from("section,label,qfi,qfi_std,drop,drop_std\n");
    for (section, rows) in [("isolated", &budget.isolated), ("cumulative", &budget.cumulative)] {
        println!("[{section}]");
        for row in rows {
            println!(
                "{:<16} {:>10.6} {:>10.6} {:>10.6} {:>10.6}",
                row.label, row.qfi, row.qfi_std, row.drop, row.drop_std
            );
            csv.push_str(&format!(
                "{},{},{},{},{},{}\n",
                section, row.label, row.qfi, row.qfi_std, row.drop, row.drop_std
            ));
        }
    }
    std::fs::create_dir_all(&args.common.out)?;
    write_text(&args.common.out.join("budget.csv"), &csv)?;
    println!(
        "Monte Carlo trials per stochastic row: {}",
        budget.monte_carlo_trials
    );
    Ok(())
}

fn sweep_range(param: SweepParam) -> (f64, f64) {
    match param {
        SweepParam::PulseFluctuation => (0.0, 0.1),
        SweepParam::ReadoutSigma => (0.0, 1e-3),
        SweepParam::T1Scale => (0.25, 4.0),
        SweepParam::T2Scale => (0.25, 4.0),
        SweepParam::InitialStateFidelity => (0.995, 1.0),
    }
}

fn sweep_noise(base: &NoiseModel, param: SweepParam, value: f64) -> Result<NoiseModel> {
    let mut noise = base.clone();
    match param {
        SweepParam::PulseFluctuation => noise.pulse_fluctuation = Some(value),
        SweepParam::ReadoutSigma => noise.readout_sigma = Some(value),
        SweepParam::InitialStateFidelity => noise.initial_state_fidelity = Some(value),
        SweepParam::T1Scale | SweepParam::T2Scale => {
            let Some(relax) = noise.relaxation.as_mut() else {
                return Err(Error::Config(
                    "t1-scale/t2-scale sweeps need a relaxation block in the config".into(),
                ));
            };
            let times = if param == SweepParam::T1Scale {
                &mut relax.t1
            } else {
                &mut relax.t2
            };
            for t in times.iter_mut() {
                *t *= value;
            }
        }
    }
    Ok(noise)
}

fn cmd_noise_sweep(args: SweepArgs) -> Result<()> {
    let config = load_config(&args.common)?;
    let problem = config.problem()?;
    if args.points == 0 {
        return Err(Error::Config("points must be at least 1".into()));
    }
    if args.trials == 0 {
        return Err(Error::Config("trials must be at least 1".into()));
    }
    let controls = obtain_controls(&args.controls, &config, &problem)?;
    let (lo, hi) = sweep_range(args.param);
    let mut csv = String::from("param_value,qfi_mean,qfi_std\n");
    println!("{:>14} {:>12} {:>12}", "param_value", "qfi_mean", "qfi_std");
    for i in 0..args.points {
        let value = if args.points == 1 {
            lo
        } else {
            lo + (hi - lo) * i as f64 / (args.points - 1) as f64
        };
        let noise = sweep_noise(&config.noise, args.param, value)?;
        let sensor_config = problem.sensor_config(&noise)?;
        let mut samples = Vec::with_capacity(args.trials);
        for trial in 0..args.trials {
            let seed = derive_seed(
                config.optimizer.seed,
                "sweep",
                (i * 1_000_003 + trial) as u64,
            );
            let mut sensor = Sensor::new(sensor_config.clone(), seed);
            samples.push(sensor.measure_qfi(&controls)?.qfi_normalized);
        }
        let (mean, std) = crate::optimizer::mean_std(&samples);
        println!("{value:>14.6e} {mean:>12.6} {std:>12.6}");
        csv.push_str(&format!("{value},{mean},{std}\n"));
    }
    std::fs::create_dir_all(&args.common.out)?;
    write_text(&args.common.out.join("sweep.csv"), &csv)?;
    Ok(())
}
