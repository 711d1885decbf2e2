//! Command implementations for the `setflight` binary.
//!
//! Each command writes its files and returns the console text, so the same
//! code path is exercised by the binary and by in-process tests.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use setflight_core::fixedpoint::{OverflowMode, QFormat, DEFAULT_ACCUM_BITS, DEFAULT_WORD_BITS};
use setflight_core::formats::{
    policy_from_json, policy_to_json, quantized_from_json, quantized_to_json, report_to_json,
    scenario_from_json, trajectory_csv_string,
};
use setflight_core::quantizer::{calibrate_fraction_bits, quantize_policy, CalibrationConfig};
use setflight_core::simharness::{
    builtin_scenario, compare_controllers, compute_metrics, run_closed_loop, BaselineGains,
    Controller, ControllerKind, DivergenceReport, Scenario, TrackingMetrics, BUILTIN_SCENARIOS,
};
use setflight_core::{DeepsetsPolicy, ObservationRanges, QuantizedPolicy, SimError};

pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "setflight",
    version,
    about = "Fixed-point deepsets flight-control toolkit"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sweep fractional-bit counts and report the float-vs-fixed error for each.
    Calibrate(CalibrateArgs),
    /// Convert a float weight file to integer raws at a given n.
    Quantize(QuantizeArgs),
    /// Fly a scenario closed loop and write the trajectory CSV.
    Simulate(SimulateArgs),
    /// Fly the float policy and compare another controller against it.
    Compare(CompareArgs),
    /// Write a weight file with seeded uniform [-1, 1] parameters.
    RandomWeights(RandomWeightsArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ControllerArg {
    Baseline,
    Float,
    Fixed,
}

impl From<ControllerArg> for ControllerKind {
    fn from(c: ControllerArg) -> Self {
        match c {
            ControllerArg::Baseline => ControllerKind::Baseline,
            ControllerArg::Float => ControllerKind::DeepsetsFloat,
            ControllerArg::Fixed => ControllerKind::DeepsetsFixed,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct WidthArgs {
    #[arg(long, default_value_t = DEFAULT_WORD_BITS)]
    pub word_bits: u32,
    #[arg(long, default_value_t = DEFAULT_ACCUM_BITS)]
    pub accum_bits: u32,
    /// Clamp on overflow instead of failing.
    #[arg(long)]
    pub saturate: bool,
}

impl WidthArgs {
    fn format(&self, n: u32) -> Result<QFormat, CliError> {
        let mode = if self.saturate {
            OverflowMode::Saturate
        } else {
            OverflowMode::Error
        };
        QFormat::with_widths(n, self.word_bits, self.accum_bits)
            .map(|f| f.with_overflow(mode))
            .map_err(CliError::validation)
    }
}

#[derive(Debug, Clone, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    #[arg(long, default_value_t = 1)]
    pub n_min: u32,
    #[arg(long, default_value_t = 14)]
    pub n_max: u32,
    #[command(flatten)]
    pub widths: WidthArgs,
    /// Report file (JSON).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct QuantizeArgs {
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub n: u32,
    #[command(flatten)]
    pub widths: WidthArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// Built-in scenario name or path to a scenario file.
    #[arg(long)]
    pub scenario: String,
    /// Float weight file; for `--controller fixed` without `--n`, a quantized file.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Overrides the scenario's controller.
    #[arg(long, value_enum)]
    pub controller: Option<ControllerArg>,
    #[arg(long)]
    pub n: Option<u32>,
    #[command(flatten)]
    pub widths: WidthArgs,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub duration: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Trajectory CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub scenario: String,
    #[arg(long)]
    pub n: Option<u32>,
    /// Controller compared against the float policy.
    #[arg(long, value_enum, default_value = "fixed")]
    pub controller: ControllerArg,
    #[command(flatten)]
    pub widths: WidthArgs,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub duration: Option<f64>,
    /// Directory for primary.csv, candidate.csv and divergence.csv.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct RandomWeightsArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad flags, malformed or inconsistent input files.
    Validation,
    /// Inputs were fine but the computation failed.
    Runtime,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ErrorKind,
    pub error: anyhow::Error,
}

impl CliError {
    pub fn validation(msg: impl Into<anyhow::Error>) -> Self {
        Self {
            kind: ErrorKind::Validation,
            error: msg.into(),
        }
    }

    fn validation_msg(msg: String) -> Self {
        Self::validation(anyhow::anyhow!(msg))
    }

    pub fn runtime(msg: impl Into<anyhow::Error>) -> Self {
        Self {
            kind: ErrorKind::Runtime,
            error: msg.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            ErrorKind::Validation => EXIT_VALIDATION,
            ErrorKind::Runtime => EXIT_RUNTIME,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.error)
    }
}

impl From<String> for CliError {
    fn from(msg: String) -> Self {
        Self::validation_msg(msg)
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path)
        .map_err(|e| CliError::validation_msg(format!("cannot read {}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text)
        .map_err(|e| CliError::runtime(anyhow::anyhow!("cannot write {}: {e}", path.display())))
}

fn load_policy(path: &Path) -> Result<DeepsetsPolicy, CliError> {
    policy_from_json(&read(path)?)
        .map_err(|e| CliError::validation_msg(format!("{}: {e}", path.display())))
}

fn load_quantized(path: &Path) -> Result<QuantizedPolicy, CliError> {
    quantized_from_json(&read(path)?)
        .map_err(|e| CliError::validation_msg(format!("{}: {e}", path.display())))
}

/// Built-in name or scenario file path.
pub fn load_scenario(spec: &str) -> Result<Scenario, CliError> {
    if let Some(s) = builtin_scenario(spec) {
        return Ok(s);
    }
    let path = Path::new(spec);
    if !path.exists() {
        return Err(CliError::validation_msg(format!(
            "unknown scenario {spec:?}: not a file and not one of {BUILTIN_SCENARIOS:?}"
        )));
    }
    scenario_from_json(&read(path)?)
        .map_err(|e| CliError::validation_msg(format!("{}: {e}", path.display())))
}

fn apply_overrides(
    scn: &mut Scenario,
    dt: Option<f64>,
    duration: Option<f64>,
) -> Result<(), CliError> {
    if let Some(dt) = dt {
        scn.dt = dt;
    }
    if let Some(d) = duration {
        scn.max_duration = d;
    }
    scn.validate().map_err(CliError::validation)
}

fn sim_error(e: SimError) -> CliError {
    match e {
        SimError::InvalidScenario(_) => CliError::validation(e),
        _ => CliError::runtime(e),
    }
}

pub fn run(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::Calibrate(a) => cmd_calibrate(&a),
        Command::Quantize(a) => cmd_quantize(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Compare(a) => cmd_compare(&a),
        Command::RandomWeights(a) => cmd_random_weights(&a),
    }
}

pub fn cmd_calibrate(a: &CalibrateArgs) -> Result<String, CliError> {
    let policy = load_policy(&a.weights)?;
    if a.samples == 0 {
        return Err(CliError::validation_msg(
            "--samples must be at least 1".into(),
        ));
    }
    let config = CalibrationConfig {
        seed: a.seed,
        sample_count: a.samples,
        n_min: a.n_min,
        n_max: a.n_max,
        format: a.widths.format(1)?,
        ranges: ObservationRanges::default(),
    };
    let report = calibrate_fraction_bits(&policy, &config).map_err(|e| match e {
        setflight_core::QuantizeError::SweepRange { .. } => CliError::validation(e),
        _ => CliError::runtime(e),
    })?;
    if let Some(out) = &a.out {
        write(out, &report_to_json(&report))?;
    }
    let mut text = String::new();
    writeln!(text, "{:>4}  {:>24}", "n", "max_abs_error").unwrap();
    for (n, err) in &report.per_n {
        let shown = if err.is_finite() {
            format!("{err:.6e}")
        } else {
            "overflow".to_string()
        };
        let mark = if *n == report.selected_n {
            "  <- selected"
        } else {
            ""
        };
        writeln!(text, "{n:>4}  {shown:>24}{mark}").unwrap();
    }
    writeln!(
        text,
        "selected n = {} (max error {:e}, {} samples, seed {})",
        report.selected_n,
        report.selected_error(),
        report.sample_count,
        report.seed
    )
    .unwrap();
    Ok(text)
}

pub fn cmd_quantize(a: &QuantizeArgs) -> Result<String, CliError> {
    let policy = load_policy(&a.weights)?;
    let format = a.widths.format(a.n)?;
    let qp = quantize_policy(&policy, format).map_err(CliError::runtime)?;
    write(&a.out, &quantized_to_json(&qp))?;
    Ok(format!("wrote {} at {}\n", a.out.display(), format))
}

/// Resolve the controller a command should fly; `policy`/`quantized` hold
/// whatever had to be loaded.
fn resolve_policies(
    kind: ControllerKind,
    weights: Option<&Path>,
    n: Option<u32>,
    widths: &WidthArgs,
) -> Result<(Option<DeepsetsPolicy>, Option<QuantizedPolicy>), CliError> {
    match kind {
        ControllerKind::Baseline => Ok((None, None)),
        ControllerKind::DeepsetsFloat => {
            let path = weights.ok_or_else(|| {
                CliError::validation_msg("the float controller needs --weights".into())
            })?;
            Ok((Some(load_policy(path)?), None))
        }
        ControllerKind::DeepsetsFixed => {
            let path = weights.ok_or_else(|| {
                CliError::validation_msg("the fixed controller needs --weights".into())
            })?;
            match n {
                Some(n) => {
                    let policy = load_policy(path)?;
                    let qp =
                        quantize_policy(&policy, widths.format(n)?).map_err(CliError::runtime)?;
                    Ok((Some(policy), Some(qp)))
                }
                None => Ok((
                    None,
                    Some(load_quantized(path).map_err(|e| {
                        CliError::validation_msg(format!(
                            "{e} (pass --n to quantize a float weight file)"
                        ))
                    })?),
                )),
            }
        }
    }
}

fn controller_for<'a>(
    kind: ControllerKind,
    policy: &'a Option<DeepsetsPolicy>,
    quantized: &'a Option<QuantizedPolicy>,
) -> Controller<'a> {
    match kind {
        ControllerKind::Baseline => Controller::Baseline(BaselineGains::default()),
        ControllerKind::DeepsetsFloat => Controller::Float(policy.as_ref().unwrap()),
        ControllerKind::DeepsetsFixed => Controller::Fixed(quantized.as_ref().unwrap()),
    }
}

pub fn format_metrics(m: &TrackingMetrics) -> String {
    let mut text = String::new();
    writeln!(text, "rms_position_error: {:.6} m", m.rms_position_error).unwrap();
    writeln!(text, "max_deviation: {:.6} m", m.max_deviation).unwrap();
    for (i, t) in m.arrival_times.iter().enumerate() {
        match t {
            Some(t) => writeln!(text, "arrival[{}]: {t:.2} s", i + 1).unwrap(),
            None => writeln!(text, "arrival[{}]: not reached", i + 1).unwrap(),
        }
    }
    writeln!(text, "completed: {}", m.completed).unwrap();
    text
}

pub fn cmd_simulate(a: &SimulateArgs) -> Result<String, CliError> {
    let mut scn = load_scenario(&a.scenario)?;
    if let Some(c) = a.controller {
        scn.controller = c.into();
    }
    if let Some(seed) = a.seed {
        scn.seed = seed;
    }
    apply_overrides(&mut scn, a.dt, a.duration)?;
    let (policy, quantized) =
        resolve_policies(scn.controller, a.weights.as_deref(), a.n, &a.widths)?;
    let controller = controller_for(scn.controller, &policy, &quantized);

    let (log, failure) = match run_closed_loop(&scn, &controller) {
        Ok(log) => (log, None),
        Err(e) => match e.partial_log() {
            Some(log) => (log.clone(), Some(e)),
            None => return Err(sim_error(e)),
        },
    };
    if let Some(out) = &a.out {
        write(out, &trajectory_csv_string(&log.records))?;
    }
    if let Some(e) = failure {
        return Err(CliError::runtime(e));
    }
    let metrics = compute_metrics(&log, &scn).map_err(sim_error)?;
    let mut text = format!(
        "scenario: {} ({} ticks, dt {} s)\n",
        scn.name,
        log.records.len(),
        scn.dt
    );
    text += &format_metrics(&metrics);
    writeln!(text, "out_of_bounds: {}", log.out_of_bounds).unwrap();
    Ok(text)
}

pub fn divergence_csv(report: &DivergenceReport) -> String {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut text = String::from("t,action_error,in_envelope,position_divergence\n");
    for t in &report.ticks {
        writeln!(
            text,
            "{},{},{},{}",
            t.t,
            opt(t.action_error),
            t.in_envelope as u8,
            opt(t.position_divergence)
        )
        .unwrap();
    }
    text
}

pub fn cmd_compare(a: &CompareArgs) -> Result<String, CliError> {
    let mut scn = load_scenario(&a.scenario)?;
    apply_overrides(&mut scn, a.dt, a.duration)?;
    let policy = load_policy(&a.weights)?;
    let candidate_kind: ControllerKind = a.controller.into();
    let quantized = match candidate_kind {
        ControllerKind::DeepsetsFixed => {
            let n = a.n.ok_or_else(|| {
                CliError::validation_msg("comparing against fixed needs --n".into())
            })?;
            Some(quantize_policy(&policy, a.widths.format(n)?).map_err(CliError::runtime)?)
        }
        _ => None,
    };
    let policy = Some(policy);
    let primary = Controller::Float(policy.as_ref().unwrap());
    let candidate = controller_for(candidate_kind, &policy, &quantized);
    let report = compare_controllers(&scn, &primary, &candidate, &ObservationRanges::default())
        .map_err(sim_error)?;

    if let Some(dir) = &a.out {
        fs::create_dir_all(dir).map_err(|e| {
            CliError::runtime(anyhow::anyhow!("cannot create {}: {e}", dir.display()))
        })?;
        write(
            &dir.join("primary.csv"),
            &trajectory_csv_string(&report.primary_log.records),
        )?;
        write(
            &dir.join("candidate.csv"),
            &trajectory_csv_string(&report.candidate_log.records),
        )?;
        write(&dir.join("divergence.csv"), &divergence_csv(&report))?;
    }

    let mut text = String::new();
    writeln!(
        text,
        "scenario: {} ({} ticks)",
        scn.name,
        report.ticks.len()
    )
    .unwrap();
    writeln!(text, "candidate: {:?}", candidate_kind).unwrap();
    writeln!(text, "max_action_error: {:e}", report.max_action_error()).unwrap();
    writeln!(
        text,
        "max_action_error_in_envelope: {:e} ({} in-envelope ticks)",
        report.max_action_error_in_envelope(),
        report.in_envelope_ticks()
    )
    .unwrap();
    writeln!(text, "candidate_failed_ticks: {}", report.failed_ticks()).unwrap();
    writeln!(
        text,
        "max_position_divergence: {:e} m",
        report.max_divergence()
    )
    .unwrap();
    if let Some(d) = report.final_divergence() {
        writeln!(text, "final_position_divergence: {d:e} m").unwrap();
    }
    if let Some(f) = &report.primary_failure {
        writeln!(text, "primary_run_stopped: {f}").unwrap();
    }
    if let Some(f) = &report.candidate_failure {
        writeln!(text, "candidate_run_stopped: {f}").unwrap();
    }
    Ok(text)
}

pub fn cmd_random_weights(a: &RandomWeightsArgs) -> Result<String, CliError> {
    let policy = DeepsetsPolicy::random(a.seed);
    let meta = BTreeMap::from([(
        "source".to_string(),
        format!("uniform [-1, 1], seed {}", a.seed),
    )]);
    write(&a.out, &policy_to_json(&policy, &meta))?;
    Ok(format!("wrote {}\n", a.out.display()))
}
