//! Gradient-ascent loops over the control grid and the error-budget analysis.
//!
//! Three modes share one ascent skeleton. `run_grape` optimizes against the
//! exact noiseless model with the analytic gradient. `run_hqc_grape` runs the
//! same loop but takes both objective and gradient from a (typically noisy)
//! sensor, i.e. the closed-loop setting. `run_grape_exp` replays a finished
//! GRAPE trace's accepted pulses on a noisy sensor without feedback.
//!
//! Step sizes follow a backtracking rule: a candidate that does not strictly
//! improve the (measured) objective halves the step and retries; rejected
//! candidates are logged as trace rows but do not consume an iteration index.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::encoding::{ControlGrid, ControlHamiltonianSpec, EncodingHamiltonian};
use crate::error::{Error, Result};
use crate::metrology::{analytic_gradient, GradientGrid};
use crate::noise::NoiseModel;
use crate::quantum::DensityMatrix;
use crate::sensor::{Sensor, SensorConfig};

/// Stable stream derivation: one root seed fans out into named, indexed
/// streams (splitmix64 over the tag bytes and index).
pub fn derive_seed(root: u64, tag: &str, idx: u64) -> u64 {
    fn splitmix64(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E3779B97F4A7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^ (z >> 31)
    }
    let mut h = splitmix64(root);
    for &b in tag.as_bytes() {
        h = splitmix64(h ^ u64::from(b));
    }
    splitmix64(h ^ idx)
}

/// What λ starts from at each new iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LambdaPolicy {
    /// Every iteration starts from lambda0.
    #[default]
    Reset,
    /// Every iteration starts from the last accepted λ.
    Carry,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Grape,
    GrapeExp,
    HqcGrape,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Grape => "grape",
            Mode::GrapeExp => "grape-exp",
            Mode::HqcGrape => "hqc-grape",
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grape" => Ok(Mode::Grape),
            "grape-exp" => Ok(Mode::GrapeExp),
            "hqc-grape" => Ok(Mode::HqcGrape),
            other => Err(Error::Config(format!(
                "unknown mode '{other}' (expected grape, grape-exp or hqc-grape)"
            ))),
        }
    }
}

fn default_max_iterations() -> usize {
    10
}
fn default_lambda0() -> f64 {
    5000.0
}
fn default_backtrack_factor() -> f64 {
    0.5
}
fn default_max_backtracks() -> usize {
    20
}
fn default_restarts() -> usize {
    10
}
fn default_init_amplitude_bound() -> f64 {
    2.0 * std::f64::consts::PI * 50.0
}
fn default_seed() -> u64 {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    /// Accepted updates per restart.
    pub max_iterations: usize,
    /// Step size in normalized-QFI units per (rad/s).
    pub lambda0: f64,
    pub backtrack_factor: f64,
    /// λ reductions allowed within one iteration before giving up.
    pub max_backtracks: usize,
    /// Stop when the (normalized) gradient norm falls below this; 0 disables.
    pub grad_norm_stop: f64,
    pub restarts: usize,
    /// Uniform bound for the random initial amplitudes, rad/s.
    pub init_amplitude_bound: f64,
    pub lambda_policy: LambdaPolicy,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_iterations: default_max_iterations(),
            lambda0: default_lambda0(),
            backtrack_factor: default_backtrack_factor(),
            max_backtracks: default_max_backtracks(),
            grad_norm_stop: 0.0,
            restarts: default_restarts(),
            init_amplitude_bound: default_init_amplitude_bound(),
            lambda_policy: LambdaPolicy::Reset,
            seed: default_seed(),
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        if !(self.lambda0 > 0.0) {
            return Err(Error::Config(format!(
                "lambda0 must be positive, got {}",
                self.lambda0
            )));
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return Err(Error::Config(format!(
                "backtrack_factor must lie in (0, 1), got {}",
                self.backtrack_factor
            )));
        }
        if !(self.grad_norm_stop >= 0.0) {
            return Err(Error::Config("grad_norm_stop must be non-negative".into()));
        }
        if self.restarts == 0 {
            return Err(Error::Config("restarts must be at least 1".into()));
        }
        if !(self.init_amplitude_bound >= 0.0) {
            return Err(Error::Config(
                "init_amplitude_bound must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// The physical optimization problem: system, probe, grid geometry.
#[derive(Debug, Clone)]
pub struct Problem {
    pub hamiltonian: EncodingHamiltonian,
    pub control_specs: Vec<ControlHamiltonianSpec>,
    pub probe: DensityMatrix,
    pub total_time: f64,
    pub slices: usize,
    pub a_max: f64,
}

impl Problem {
    /// The coupled-pair reference system: Ω = 2π·50 rad/s, J = 214.5 Hz,
    /// T = 9 ms over 6 slices, x/y drives on both qubits, |00⟩ probe.
    pub fn two_qubit_reference() -> Self {
        Self {
            hamiltonian: EncodingHamiltonian::two_qubit(2.0 * std::f64::consts::PI * 50.0, 214.5),
            control_specs: crate::encoding::default_control_specs(),
            probe: DensityMatrix::basis_state(0, 2),
            total_time: 9e-3,
            slices: 6,
            a_max: crate::encoding::default_amplitude_bound(),
        }
    }

    pub fn k(&self) -> usize {
        self.control_specs.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.slices == 0 {
            return Err(Error::Config("at least one slice is required".into()));
        }
        if !(self.total_time >= 0.0) {
            return Err(Error::Config("total_time must be non-negative".into()));
        }
        if !(self.a_max > 0.0) {
            return Err(Error::Config("a_max must be positive".into()));
        }
        if self.control_specs.is_empty() {
            return Err(Error::Config("at least one control line is required".into()));
        }
        if self.probe.dim() != self.hamiltonian.dim() {
            return Err(Error::Dimension(
                "probe dimension does not match the Hamiltonian".into(),
            ));
        }
        Ok(())
    }

    pub fn sensor_config(&self, noise: &NoiseModel) -> Result<SensorConfig> {
        SensorConfig::new(
            self.hamiltonian.clone(),
            self.control_specs.clone(),
            noise.clone(),
            self.probe.clone(),
        )
    }
}

/// One trace line. `qfi`/`qfi_std` are the reported statistics for the row's
/// controls; `grad_norm` and `lambda` describe the step that produced the row
/// (zero/zero for the initial row). Rejected candidates appear with
/// `accepted = false` and repeat the iteration index they were attempted in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub qfi: f64,
    pub qfi_std: f64,
    pub grad_norm: f64,
    pub lambda: f64,
    pub accepted: bool,
    pub cumulative_evolutions: u64,
}

#[derive(Debug, Clone)]
pub struct OptimizationTrace {
    pub mode: Mode,
    pub rows: Vec<TraceRow>,
    /// Accepted controls: initial grid plus one snapshot per accepted update.
    pub snapshots: Vec<ControlGrid>,
    pub final_controls: ControlGrid,
    pub final_qfi: f64,
    pub final_qfi_std: f64,
    /// Which restart won the best-of selection.
    pub restart_index: usize,
    /// Amplitude clips applied during ascent steps.
    pub clip_events: u64,
}

impl OptimizationTrace {
    pub fn final_row(&self) -> &TraceRow {
        self.rows.last().expect("traces always hold the initial row")
    }

    pub fn accepted_rows(&self) -> impl Iterator<Item = &TraceRow> {
        self.rows.iter().filter(|r| r.accepted)
    }
}

/// Entries i.i.d. Uniform(−bound, bound).
pub fn random_initial_controls<R: Rng + ?Sized>(
    k: usize,
    m: usize,
    total_time: f64,
    a_max: f64,
    bound: f64,
    rng: &mut R,
) -> Result<ControlGrid> {
    if bound > a_max {
        return Err(Error::Config(format!(
            "initial amplitude bound {bound} exceeds the grid bound {a_max}"
        )));
    }
    if bound == 0.0 {
        return ControlGrid::zeros(k, m, total_time, a_max);
    }
    let dist = Uniform::new_inclusive(-bound, bound).map_err(|e| Error::Config(e.to_string()))?;
    let amps: Vec<f64> = (0..k * m).map(|_| dist.sample(rng)).collect();
    ControlGrid::new(k, m, total_time, a_max, amps)
}

/// u + λ·g elementwise, clipped to the grid's amplitude bound. Each clipped
/// entry increments `clip_events`.
pub fn gradient_ascent_step(
    u: &ControlGrid,
    g: &GradientGrid,
    lambda: f64,
    clip_events: &mut u64,
) -> Result<ControlGrid> {
    if g.k() != u.k() || g.m() != u.m() {
        return Err(Error::Dimension(format!(
            "gradient shape {}x{} does not match grid {}x{}",
            g.k(),
            g.m(),
            u.k(),
            u.m()
        )));
    }
    let bound = u.a_max();
    let amps: Vec<f64> = u
        .amplitudes()
        .iter()
        .zip(g.entries())
        .map(|(a, grad)| {
            let raw = a + lambda * grad;
            if raw.abs() > bound {
                *clip_events += 1;
                raw.clamp(-bound, bound)
            } else {
                raw
            }
        })
        .collect();
    ControlGrid::new(u.k(), u.m(), u.total_time(), bound, amps)
}

pub(crate) fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    // identical samples have zero spread; the formula below would round
    if values.iter().all(|v| *v == values[0]) {
        return (values[0], 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

fn report_qfi(sensor: &mut Sensor, u: &ControlGrid, repeats: usize) -> Result<(f64, f64)> {
    let mut values = Vec::with_capacity(repeats);
    for _ in 0..repeats.max(1) {
        values.push(sensor.measure_qfi(u)?.qfi_normalized);
    }
    Ok(mean_std(&values))
}

/// How one restart sources its objective and gradient.
enum GradientSource<'a> {
    Analytic {
        hamiltonian: &'a EncodingHamiltonian,
        specs: &'a [ControlHamiltonianSpec],
        probe: &'a DensityMatrix,
    },
    /// Rotation insertions on the optimizing sensor itself.
    Measured,
}

struct RestartOutcome {
    rows: Vec<TraceRow>,
    snapshots: Vec<ControlGrid>,
    final_qfi: f64,
    final_qfi_std: f64,
    clip_events: u64,
}

/// The shared ascent loop. `sensor` supplies the accept/reject objective;
/// `reporter` (when given) supplies the per-row reported statistics over
/// `repeats` runs, otherwise rows carry the decision values with zero std.
#[allow(clippy::too_many_arguments)]
fn ascend(
    opt: &OptimizerConfig,
    u0: ControlGrid,
    sensor: &mut Sensor,
    mut reporter: Option<&mut Sensor>,
    repeats: usize,
    source: GradientSource<'_>,
) -> Result<RestartOutcome> {
    let t_total = u0.total_time();
    let inv_t2 = if t_total > 0.0 {
        1.0 / (t_total * t_total)
    } else {
        0.0
    };
    let mut u = u0;
    let first = sensor.measure_qfi(&u)?;
    let mut f_ref = first.qfi_normalized;
    let mut d_ref = first.p00 - first.p11;
    let (row_qfi, row_std) = match reporter.as_deref_mut() {
        Some(rep) => report_qfi(rep, &u, repeats)?,
        None => (f_ref, 0.0),
    };
    let mut rows = vec![TraceRow {
        iteration: 0,
        qfi: row_qfi,
        qfi_std: row_std,
        grad_norm: 0.0,
        lambda: 0.0,
        accepted: true,
        cumulative_evolutions: sensor.evolutions_used(),
    }];
    let mut snapshots = vec![u.clone()];
    let mut clip_events = 0u64;
    let mut carried_lambda = opt.lambda0;

    for iteration in 1..=opt.max_iterations {
        let g_raw = match source {
            GradientSource::Analytic {
                hamiltonian,
                specs,
                probe,
            } => analytic_gradient(hamiltonian, specs, &u, probe, hamiltonian.dh_domega())?,
            GradientSource::Measured => sensor.measure_gradient(&u, d_ref)?,
        };
        // steps operate in normalized-QFI units; raw entries carry T²
        let g_step = g_raw.scaled(inv_t2);
        let grad_norm = g_step.norm();
        if opt.grad_norm_stop > 0.0 && grad_norm < opt.grad_norm_stop {
            break;
        }
        let mut lambda = match opt.lambda_policy {
            LambdaPolicy::Reset => opt.lambda0,
            LambdaPolicy::Carry => carried_lambda,
        };
        let mut accepted = None;
        for _attempt in 0..=opt.max_backtracks {
            let candidate = gradient_ascent_step(&u, &g_step, lambda, &mut clip_events)?;
            let rec = sensor.measure_qfi(&candidate)?;
            if rec.qfi_normalized > f_ref {
                accepted = Some((candidate, rec));
                break;
            }
            rows.push(TraceRow {
                iteration,
                qfi: rec.qfi_normalized,
                qfi_std: 0.0,
                grad_norm,
                lambda,
                accepted: false,
                cumulative_evolutions: sensor.evolutions_used(),
            });
            lambda *= opt.backtrack_factor;
        }
        let Some((candidate, rec)) = accepted else {
            // step sizes exhausted; no improvement along this gradient
            break;
        };
        u = candidate;
        f_ref = rec.qfi_normalized;
        d_ref = rec.p00 - rec.p11;
        carried_lambda = lambda;
        let (row_qfi, row_std) = match reporter.as_deref_mut() {
            Some(rep) => report_qfi(rep, &u, repeats)?,
            None => (f_ref, 0.0),
        };
        rows.push(TraceRow {
            iteration,
            qfi: row_qfi,
            qfi_std: row_std,
            grad_norm,
            lambda,
            accepted: true,
            cumulative_evolutions: sensor.evolutions_used(),
        });
        snapshots.push(u.clone());
    }

    let last = *rows.last().expect("initial row always present");
    Ok(RestartOutcome {
        rows,
        snapshots,
        final_qfi: last.qfi,
        final_qfi_std: last.qfi_std,
        clip_events,
    })
}

fn best_of_restarts<F>(problem: &Problem, opt: &OptimizerConfig, mut run_one: F) -> Result<OptimizationTrace>
where
    F: FnMut(usize, ControlGrid) -> Result<(Mode, RestartOutcome)>,
{
    problem.validate()?;
    opt.validate()?;
    let mut best: Option<OptimizationTrace> = None;
    for restart in 0..opt.restarts {
        let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(opt.seed, "init", restart as u64));
        let u0 = random_initial_controls(
            problem.k(),
            problem.slices,
            problem.total_time,
            problem.a_max,
            opt.init_amplitude_bound,
            &mut init_rng,
        )?;
        let (mode, outcome) = run_one(restart, u0)?;
        let trace = OptimizationTrace {
            mode,
            final_controls: outcome
                .snapshots
                .last()
                .expect("initial snapshot always present")
                .clone(),
            final_qfi: outcome.final_qfi,
            final_qfi_std: outcome.final_qfi_std,
            restart_index: restart,
            clip_events: outcome.clip_events,
            rows: outcome.rows,
            snapshots: outcome.snapshots,
        };
        let better = match &best {
            Some(current) => trace.final_qfi > current.final_qfi,
            None => true,
        };
        if better {
            best = Some(trace);
        }
    }
    Ok(best.expect("restarts >= 1"))
}

/// Open-loop GRAPE: exact objective, analytic gradient, no noise anywhere.
pub fn run_grape(problem: &Problem, opt: &OptimizerConfig) -> Result<OptimizationTrace> {
    let noiseless = NoiseModel::default();
    best_of_restarts(problem, opt, |restart, u0| {
        let mut sensor = Sensor::new(
            problem.sensor_config(&noiseless)?,
            derive_seed(opt.seed, "grape", restart as u64),
        );
        let outcome = ascend(
            opt,
            u0,
            &mut sensor,
            None,
            1,
            GradientSource::Analytic {
                hamiltonian: &problem.hamiltonian,
                specs: &problem.control_specs,
                probe: &problem.probe,
            },
        )?;
        Ok((Mode::Grape, outcome))
    })
}

/// Closed-loop ascent: objective and gradient both measured on a noisy
/// sensor. Initial controls share the GRAPE streams so runs with equal seeds
/// start from identical pulses. Reported rows come from a separate sensor so
/// reporting repeats never perturb the optimization stream or the counter.
pub fn run_hqc_grape(
    problem: &Problem,
    noise: &NoiseModel,
    opt: &OptimizerConfig,
    repeats: usize,
) -> Result<OptimizationTrace> {
    best_of_restarts(problem, opt, |restart, u0| {
        let mut optimizing = Sensor::new(
            problem.sensor_config(noise)?,
            derive_seed(opt.seed, "hqc-opt", restart as u64),
        );
        let mut reporting = Sensor::new(
            problem.sensor_config(noise)?,
            derive_seed(opt.seed, "hqc-rep", restart as u64),
        );
        let outcome = ascend(
            opt,
            u0,
            &mut optimizing,
            Some(&mut reporting),
            repeats,
            GradientSource::Measured,
        )?;
        Ok((Mode::HqcGrape, outcome))
    })
}

/// Open-loop replay: each accepted GRAPE pulse is measured `repeats` times on
/// a noisy sensor. Iteration indices, gradient norms, λ and acceptance flags
/// are copied from the source trace; only the QFI statistics are re-measured.
pub fn run_grape_exp(
    problem: &Problem,
    noise: &NoiseModel,
    grape: &OptimizationTrace,
    root_seed: u64,
    repeats: usize,
) -> Result<OptimizationTrace> {
    problem.validate()?;
    if grape.snapshots.is_empty() {
        return Err(Error::Config("source trace has no control snapshots".into()));
    }
    let accepted: Vec<&TraceRow> = grape.rows.iter().filter(|r| r.accepted).collect();
    if accepted.len() != grape.snapshots.len() {
        return Err(Error::Config(format!(
            "source trace is inconsistent: {} accepted rows vs {} snapshots",
            accepted.len(),
            grape.snapshots.len()
        )));
    }
    let mut sensor = Sensor::new(
        problem.sensor_config(noise)?,
        derive_seed(root_seed, "exp-rep", grape.restart_index as u64),
    );
    let mut rows = Vec::with_capacity(accepted.len());
    for (src, snapshot) in accepted.iter().zip(&grape.snapshots) {
        let (qfi, qfi_std) = report_qfi(&mut sensor, snapshot, repeats)?;
        rows.push(TraceRow {
            iteration: src.iteration,
            qfi,
            qfi_std,
            grad_norm: src.grad_norm,
            lambda: src.lambda,
            accepted: true,
            cumulative_evolutions: sensor.evolutions_used(),
        });
    }
    let last = *rows.last().expect("at least the initial row");
    Ok(OptimizationTrace {
        mode: Mode::GrapeExp,
        rows,
        snapshots: grape.snapshots.clone(),
        final_controls: grape.final_controls.clone(),
        final_qfi: last.qfi,
        final_qfi_std: last.qfi_std,
        restart_index: grape.restart_index,
        clip_events: 0,
    })
}

/// One line of the error budget.
#[derive(Debug, Clone, Serialize)]
pub struct BudgetRow {
    pub label: String,
    pub qfi: f64,
    pub qfi_std: f64,
    /// Ideal QFI minus this row's QFI (mean for Monte Carlo rows).
    pub drop: f64,
    pub drop_std: f64,
}

/// QFI of a fixed pulse under each error source in isolation and under the
/// cumulative stack, in the fixed order initial-state → decoherence → pulse
/// fluctuation → readout.
#[derive(Debug, Clone, Serialize)]
pub struct ErrorBudget {
    pub ideal_qfi: f64,
    pub isolated: Vec<BudgetRow>,
    pub cumulative: Vec<BudgetRow>,
    pub monte_carlo_trials: usize,
}

fn deterministic_qfi(problem: &Problem, noise: &NoiseModel, u: &ControlGrid) -> Result<f64> {
    // no stochastic source enabled; any seed gives the same value
    let mut sensor = Sensor::new(problem.sensor_config(noise)?, 0);
    Ok(sensor.measure_qfi(u)?.qfi_normalized)
}

fn monte_carlo_qfi(
    problem: &Problem,
    noise: &NoiseModel,
    u: &ControlGrid,
    seed: u64,
    tag: &str,
    trials: usize,
) -> Result<(f64, f64)> {
    let config = problem.sensor_config(noise)?;
    let mut values = Vec::with_capacity(trials);
    for trial in 0..trials {
        let mut sensor = Sensor::new(config.clone(), derive_seed(seed, tag, trial as u64));
        values.push(sensor.measure_qfi(u)?.qfi_normalized);
    }
    Ok(mean_std(&values))
}

pub fn error_budget(
    problem: &Problem,
    noise: &NoiseModel,
    controls: &ControlGrid,
    seed: u64,
    trials: usize,
) -> Result<ErrorBudget> {
    problem.validate()?;
    if trials == 0 {
        return Err(Error::Config("at least one Monte Carlo trial is required".into()));
    }
    let ideal = deterministic_qfi(problem, &NoiseModel::default(), controls)?;
    let mut isolated = Vec::new();
    let mut cumulative = vec![BudgetRow {
        label: "ideal".into(),
        qfi: ideal,
        qfi_std: 0.0,
        drop: 0.0,
        drop_std: 0.0,
    }];
    let mut stack = NoiseModel::default();

    if let Some(f) = noise.initial_state_fidelity {
        let only = NoiseModel {
            initial_state_fidelity: Some(f),
            ..NoiseModel::default()
        };
        let qfi = deterministic_qfi(problem, &only, controls)?;
        isolated.push(BudgetRow {
            label: "initial-state".into(),
            qfi,
            qfi_std: 0.0,
            drop: ideal - qfi,
            drop_std: 0.0,
        });
        stack.initial_state_fidelity = Some(f);
        let qfi = deterministic_qfi(problem, &stack, controls)?;
        cumulative.push(BudgetRow {
            label: "+initial-state".into(),
            qfi,
            qfi_std: 0.0,
            drop: ideal - qfi,
            drop_std: 0.0,
        });
    }

    if let Some(relax) = &noise.relaxation {
        let only = NoiseModel {
            relaxation: Some(relax.clone()),
            ..NoiseModel::default()
        };
        let qfi = deterministic_qfi(problem, &only, controls)?;
        isolated.push(BudgetRow {
            label: "decoherence".into(),
            qfi,
            qfi_std: 0.0,
            drop: ideal - qfi,
            drop_std: 0.0,
        });
        stack.relaxation = Some(relax.clone());
        let qfi = deterministic_qfi(problem, &stack, controls)?;
        cumulative.push(BudgetRow {
            label: "+decoherence".into(),
            qfi,
            qfi_std: 0.0,
            drop: ideal - qfi,
            drop_std: 0.0,
        });
    }

    if let Some(frac) = noise.pulse_fluctuation {
        let only = NoiseModel {
            pulse_fluctuation: Some(frac),
            ..NoiseModel::default()
        };
        let (mean, std) = monte_carlo_qfi(problem, &only, controls, seed, "mc-pulse", trials)?;
        isolated.push(BudgetRow {
            label: "pulse".into(),
            qfi: mean,
            qfi_std: std,
            drop: ideal - mean,
            drop_std: std,
        });
        stack.pulse_fluctuation = Some(frac);
        let (mean, std) = monte_carlo_qfi(problem, &stack, controls, seed, "mc-stack-pulse", trials)?;
        cumulative.push(BudgetRow {
            label: "+pulse".into(),
            qfi: mean,
            qfi_std: std,
            drop: ideal - mean,
            drop_std: std,
        });
    }

    if let Some(sigma) = noise.readout_sigma {
        // analytic propagation through F = 4(p00+p11) − 4(p00−p11)²:
        // E[F̂] − F = −8σ² from the quadratic term; the linearized standard
        // deviation is σ·√((4−8d)² + (4+8d)²) with d = p00 − p11
        let bias = 8.0 * sigma * sigma;
        let mut exact = Sensor::new(problem.sensor_config(&NoiseModel::default())?, 0);
        let rec = exact.measure_qfi(controls)?;
        let d = rec.p00 - rec.p11;
        let lin_std = sigma * ((4.0 - 8.0 * d).powi(2) + (4.0 + 8.0 * d).powi(2)).sqrt();
        isolated.push(BudgetRow {
            label: "readout".into(),
            qfi: ideal - bias,
            qfi_std: lin_std,
            drop: bias,
            drop_std: lin_std,
        });
        stack.readout_sigma = Some(sigma);
        let (mean, std) = monte_carlo_qfi(problem, &stack, controls, seed, "mc-stack-full", trials)?;
        cumulative.push(BudgetRow {
            label: "+readout".into(),
            qfi: mean,
            qfi_std: std,
            drop: ideal - mean,
            drop_std: std,
        });
    }

    Ok(ErrorBudget {
        ideal_qfi: ideal,
        isolated,
        cumulative,
        monte_carlo_trials: trials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::RelaxationParams;

    fn full_noise() -> NoiseModel {
        NoiseModel {
            relaxation: Some(RelaxationParams {
                t1: vec![18.5, 9.9],
                t2: vec![0.3, 3.3],
                gad_p: 0.5,
            }),
            pulse_fluctuation: Some(0.05),
            initial_state_fidelity: Some(0.9986),
            readout_sigma: Some(1e-4),
        }
    }

    fn quick_opt(restarts: usize, iterations: usize, seed: u64) -> OptimizerConfig {
        OptimizerConfig {
            max_iterations: iterations,
            restarts,
            seed,
            ..OptimizerConfig::default()
        }
    }

    #[test]
    fn seed_derivation_is_stable_and_separating() {
        let a = derive_seed(42, "init", 0);
        assert_eq!(a, derive_seed(42, "init", 0));
        assert_ne!(a, derive_seed(42, "init", 1));
        assert_ne!(a, derive_seed(42, "hqc-opt", 0));
        assert_ne!(a, derive_seed(43, "init", 0));
    }

    #[test]
    fn initial_controls_respect_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = random_initial_controls(4, 6, 9e-3, 1600.0, 314.0, &mut rng).unwrap();
        assert!(u.amplitudes().iter().all(|a| a.abs() <= 314.0));
        let z = random_initial_controls(4, 6, 9e-3, 1600.0, 0.0, &mut rng).unwrap();
        assert!(z.amplitudes().iter().all(|&a| a == 0.0));
        assert!(random_initial_controls(4, 6, 9e-3, 100.0, 314.0, &mut rng).is_err());
        let mut r1 = ChaCha8Rng::seed_from_u64(9);
        let mut r2 = ChaCha8Rng::seed_from_u64(9);
        assert_eq!(
            random_initial_controls(4, 6, 9e-3, 1600.0, 314.0, &mut r1).unwrap(),
            random_initial_controls(4, 6, 9e-3, 1600.0, 314.0, &mut r2).unwrap()
        );
    }

    #[test]
    fn ascent_step_arithmetic_and_clipping() {
        let u = ControlGrid::new(1, 1, 1.0, 10.0, vec![1.0]).unwrap();
        let g = GradientGrid::new(1, 1, vec![2.0]).unwrap();
        let mut clips = 0;
        let stepped = gradient_ascent_step(&u, &g, 0.5, &mut clips).unwrap();
        assert_eq!(stepped.amplitudes(), &[2.0]);
        assert_eq!(clips, 0);
        let unchanged = gradient_ascent_step(&u, &g, 0.0, &mut clips).unwrap();
        assert_eq!(unchanged.amplitudes(), u.amplitudes());
        let zero_g = GradientGrid::new(1, 1, vec![0.0]).unwrap();
        let same = gradient_ascent_step(&u, &zero_g, 5.0, &mut clips).unwrap();
        assert_eq!(same.amplitudes(), u.amplitudes());
        let clipped = gradient_ascent_step(&u, &g, 100.0, &mut clips).unwrap();
        assert_eq!(clipped.amplitudes(), &[10.0]);
        assert_eq!(clips, 1);
        let wrong_shape = GradientGrid::new(2, 1, vec![1.0, 1.0]).unwrap();
        assert!(gradient_ascent_step(&u, &wrong_shape, 1.0, &mut clips).is_err());
    }

    #[test]
    fn grape_ascends_and_is_deterministic() {
        let problem = Problem::two_qubit_reference();
        let opt = quick_opt(2, 6, 7);
        let trace = run_grape(&problem, &opt).unwrap();
        assert_eq!(trace.mode, Mode::Grape);
        assert_eq!(trace.rows[0].iteration, 0);
        assert_eq!(trace.rows[0].cumulative_evolutions, 1);
        assert!(trace.rows[0].accepted);
        let accepted: Vec<&TraceRow> = trace.accepted_rows().collect();
        assert_eq!(accepted.len(), trace.snapshots.len());
        for pair in accepted.windows(2) {
            assert!(pair[1].qfi > pair[0].qfi, "accepted QFI must increase");
            assert_eq!(pair[1].iteration, pair[0].iteration + 1);
        }
        assert!(trace.final_qfi > accepted[0].qfi);
        let again = run_grape(&problem, &opt).unwrap();
        assert_eq!(trace.rows, again.rows);
        assert_eq!(trace.final_controls.amplitudes(), again.final_controls.amplitudes());
    }

    #[test]
    fn noiseless_closed_loop_matches_open_loop() {
        let problem = Problem::two_qubit_reference();
        let opt = quick_opt(1, 5, 11);
        let grape = run_grape(&problem, &opt).unwrap();
        let hqc = run_hqc_grape(&problem, &NoiseModel::default(), &opt, 3).unwrap();
        assert_eq!(grape.rows.len(), hqc.rows.len());
        for (a, b) in grape.rows.iter().zip(&hqc.rows) {
            assert_eq!(a.iteration, b.iteration);
            assert_eq!(a.accepted, b.accepted);
            assert!((a.qfi - b.qfi).abs() <= 1e-9, "qfi {} vs {}", a.qfi, b.qfi);
            assert_eq!(b.qfi_std, 0.0);
        }
    }

    #[test]
    fn closed_loop_counter_accounting() {
        let problem = Problem::two_qubit_reference();
        let opt = quick_opt(1, 4, 3);
        let trace = run_hqc_grape(&problem, &full_noise(), &opt, 2).unwrap();
        assert_eq!(trace.rows[0].cumulative_evolutions, 1);
        // between consecutive rows: 48 gradient evolutions before the first
        // candidate of an iteration, plus 1 per candidate try
        let mut prev_accepted_cum = trace.rows[0].cumulative_evolutions;
        let mut rejected_since = 0u64;
        for row in &trace.rows[1..] {
            if row.accepted {
                let spent = row.cumulative_evolutions - prev_accepted_cum;
                assert_eq!(spent, 48 + 1 + rejected_since, "row {:?}", row);
                prev_accepted_cum = row.cumulative_evolutions;
                rejected_since = 0;
            } else {
                rejected_since += 1;
            }
        }
    }

    #[test]
    fn replay_of_noiseless_trace_matches_source() {
        let problem = Problem::two_qubit_reference();
        let opt = quick_opt(1, 5, 13);
        let grape = run_grape(&problem, &opt).unwrap();
        let exp = run_grape_exp(&problem, &NoiseModel::default(), &grape, opt.seed, 4).unwrap();
        assert_eq!(exp.mode, Mode::GrapeExp);
        let accepted: Vec<&TraceRow> = grape.accepted_rows().collect();
        assert_eq!(exp.rows.len(), accepted.len());
        for (replayed, src) in exp.rows.iter().zip(accepted) {
            assert_eq!(replayed.iteration, src.iteration);
            assert_eq!(replayed.lambda, src.lambda);
            assert_eq!(replayed.grad_norm, src.grad_norm);
            assert!((replayed.qfi - src.qfi).abs() <= 1e-9);
            assert_eq!(replayed.qfi_std, 0.0);
        }
    }

    #[test]
    fn noisy_replay_degrades_qfi() {
        let problem = Problem::two_qubit_reference();
        let opt = quick_opt(2, 8, 17);
        let grape = run_grape(&problem, &opt).unwrap();
        let exp = run_grape_exp(&problem, &full_noise(), &grape, opt.seed, 5).unwrap();
        assert!(exp.final_qfi < grape.final_qfi);
        assert!(exp.final_qfi_std >= 0.0);
    }

    #[test]
    fn gradient_norm_stop_halts_immediately() {
        let problem = Problem::two_qubit_reference();
        let mut opt = quick_opt(1, 10, 19);
        opt.grad_norm_stop = 1e9;
        let trace = run_grape(&problem, &opt).unwrap();
        assert_eq!(trace.rows.len(), 1);
        assert_eq!(trace.snapshots.len(), 1);
    }

    #[test]
    fn lambda_column_reflects_backtracking() {
        let problem = Problem::two_qubit_reference();
        let opt = quick_opt(1, 6, 23);
        let trace = run_hqc_grape(&problem, &full_noise(), &opt, 1).unwrap();
        for row in &trace.rows[1..] {
            // λ is always λ0 times a power of the backtrack factor
            let ratio = row.lambda / opt.lambda0;
            let log = ratio.log2();
            assert!((log - log.round()).abs() < 1e-12, "lambda {}", row.lambda);
            assert!(row.lambda <= opt.lambda0 + 1e-12);
        }
        // rejected rows repeat their iteration index before the accepted one
        for pair in trace.rows.windows(2) {
            if !pair[0].accepted {
                assert!(pair[1].iteration == pair[0].iteration);
                assert!(pair[1].lambda <= pair[0].lambda / 2.0 + 1e-12 || pair[1].accepted);
            }
        }
    }

    #[test]
    fn budget_rows_and_additivity() {
        let problem = Problem::two_qubit_reference();
        let opt = quick_opt(2, 8, 29);
        let grape = run_grape(&problem, &opt).unwrap();
        let budget = error_budget(&problem, &full_noise(), &grape.final_controls, 5, 60).unwrap();
        assert_eq!(budget.isolated.len(), 4);
        assert_eq!(budget.cumulative.len(), 5);
        assert!(budget.ideal_qfi > 3.5);
        for row in &budget.isolated {
            assert!(row.qfi <= budget.ideal_qfi + 1e-9, "{}", row.label);
            assert!(row.drop >= -1e-9, "{}", row.label);
        }
        let min_isolated = budget
            .isolated
            .iter()
            .map(|r| r.qfi)
            .fold(f64::INFINITY, f64::min);
        let final_cumulative = budget.cumulative.last().unwrap().qfi;
        assert!(final_cumulative <= min_isolated + 0.02);
        // cumulative drops grow along the stack within statistical noise
        for pair in budget.cumulative.windows(2) {
            assert!(pair[1].drop >= pair[0].drop - 0.01);
        }
    }

    #[test]
    fn mode_strings_round_trip() {
        for mode in [Mode::Grape, Mode::GrapeExp, Mode::HqcGrape] {
            let s = mode.as_str();
            let parsed: Mode = s.parse().unwrap();
            assert_eq!(parsed, mode);
            let json = serde_json::to_string(&mode).unwrap();
            assert_eq!(json, format!("\"{s}\""));
        }
        assert!("grape_exp".parse::<Mode>().is_err());
    }

    #[test]
    fn optimizer_config_validation() {
        let mut cfg = OptimizerConfig::default();
        cfg.validate().unwrap();
        cfg.lambda0 = 0.0;
        assert!(cfg.validate().is_err());
        cfg = OptimizerConfig::default();
        cfg.backtrack_factor = 1.0;
        assert!(cfg.validate().is_err());
        cfg = OptimizerConfig::default();
        cfg.restarts = 0;
        assert!(cfg.validate().is_err());
        let parsed: OptimizerConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(parsed, OptimizerConfig::default());
        assert!(serde_json::from_str::<OptimizerConfig>("{\"bogus\": 1}").is_err());
    }
}
