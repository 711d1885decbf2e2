//! Closed-loop episodes: observation, controller, motor mix, dynamics.
//!
//! Scenarios are ordered setpoint lists inside a flight-area box. The
//! vehicle advances to the next setpoint after it has been within
//! `arrival_radius` and then dwelled for the setpoint's dwell time, or when
//! the setpoint's optional timeout expires.

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{motor_mix, step, DynamicsError, QuadrotorParams, QuadrotorState};
use crate::network::{action_to_motor, motor_to_action, ActionVec, DeepsetsPolicy, MotorCommand};
use crate::observation::{build_self_observation, SelfObservation, WorldSnapshot};
use crate::quantizer::{max_component_error, ObservationRanges, QuantizeError, QuantizedPolicy};

pub const DEFAULT_ARRIVAL_RADIUS: f64 = 0.1;
pub const DEFAULT_DWELL: f64 = 1.0;
pub const DEFAULT_DT: f64 = 0.01;
pub const SCENARIO_SCHEMA_VERSION: u32 = 1;

const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("episode aborted at t={t}: {diagnostic}")]
    NonFinite {
        t: f64,
        diagnostic: String,
        log: Box<TrajectoryLog>,
    },
    #[error("controller failed at t={t}: {source}")]
    Controller {
        t: f64,
        #[source]
        source: QuantizeError,
        log: Box<TrajectoryLog>,
    },
    #[error("cannot compute metrics of an empty log")]
    EmptyLog,
}

impl SimError {
    /// Records logged before the failure, if any.
    pub fn partial_log(&self) -> Option<&TrajectoryLog> {
        match self {
            SimError::NonFinite { log, .. } | SimError::Controller { log, .. } => Some(log),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ControllerKind {
    #[serde(rename = "baseline")]
    Baseline,
    #[serde(rename = "deepsets-float", alias = "float")]
    DeepsetsFloat,
    #[serde(rename = "deepsets-fixed", alias = "fixed")]
    DeepsetsFixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlightArea {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl FlightArea {
    /// 6.5 m x 4.5 m x 2.7 m, centered in x and y, floor at z = 0.
    pub fn lab() -> Self {
        Self {
            min: [-3.25, -2.25, 0.0],
            max: [3.25, 2.25, 2.7],
        }
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| self.min[i] <= p[i] && p[i] <= self.max[i])
    }
}

fn default_dwell() -> f64 {
    DEFAULT_DWELL
}

fn default_arrival_radius() -> f64 {
    DEFAULT_ARRIVAL_RADIUS
}

fn default_schema() -> u32 {
    SCENARIO_SCHEMA_VERSION
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Setpoint {
    pub position: [f64; 3],
    /// Seconds to hold after first arrival.
    #[serde(default = "default_dwell")]
    pub dwell: f64,
    /// Advance after this many seconds even without arriving.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeout: Option<f64>,
}

impl Setpoint {
    pub fn at(position: [f64; 3]) -> Self {
        Self {
            position,
            dwell: DEFAULT_DWELL,
            timeout: None,
        }
    }

    pub fn vector(&self) -> Vector3<f64> {
        Vector3::from(self.position)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    pub name: String,
    pub start: [f64; 3],
    pub setpoints: Vec<Setpoint>,
    pub bounds: FlightArea,
    pub dt: f64,
    pub max_duration: f64,
    #[serde(default = "default_arrival_radius")]
    pub arrival_radius: f64,
    pub controller: ControllerKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub params: QuadrotorParams,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidScenario(m));
        if self.schema_version != SCENARIO_SCHEMA_VERSION {
            return bad(format!(
                "unsupported schema version {}",
                self.schema_version
            ));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.max_duration >= 0.0 && self.max_duration.is_finite()) {
            return bad(format!(
                "max_duration must be >= 0, got {}",
                self.max_duration
            ));
        }
        if !(self.arrival_radius > 0.0 && self.arrival_radius.is_finite()) {
            return bad(format!(
                "arrival_radius must be positive, got {}",
                self.arrival_radius
            ));
        }
        if (0..3).any(|i| {
            self.bounds.min[i].partial_cmp(&self.bounds.max[i]) != Some(std::cmp::Ordering::Less)
        }) {
            return bad("bounds must have min < max on every axis".into());
        }
        if !self.bounds.contains(&Vector3::from(self.start)) {
            return bad(format!("start {:?} outside bounds", self.start));
        }
        if self.setpoints.is_empty() {
            return bad("at least one setpoint is required".into());
        }
        for (i, sp) in self.setpoints.iter().enumerate() {
            if !self.bounds.contains(&sp.vector()) {
                return bad(format!("setpoint {i} {:?} outside bounds", sp.position));
            }
            if !(sp.dwell >= 0.0 && sp.dwell.is_finite()) {
                return bad(format!("setpoint {i} has invalid dwell {}", sp.dwell));
            }
            if sp.timeout.is_some_and(|t| !(t > 0.0 && t.is_finite())) {
                return bad(format!("setpoint {i} has invalid timeout"));
            }
            if i > 0 && self.setpoints[i - 1].position == sp.position {
                return bad(format!("setpoint {i} repeats setpoint {}", i - 1));
            }
        }
        self.params
            .validate()
            .map_err(|e: DynamicsError| SimError::InvalidScenario(e.to_string()))
    }

    pub fn setpoint_positions(&self) -> Vec<Vector3<f64>> {
        self.setpoints.iter().map(Setpoint::vector).collect()
    }
}

/// Built-in scenarios shipped with the crate.
pub const BUILTIN_SCENARIOS: [&str; 3] = ["directions", "rectangle", "spiral"];

pub fn builtin_scenario(name: &str) -> Option<Scenario> {
    let text = match name {
        "directions" => include_str!("../scenarios/directions.json"),
        "rectangle" => include_str!("../scenarios/rectangle.json"),
        "spiral" => include_str!("../scenarios/spiral.json"),
        _ => return None,
    };
    Some(serde_json::from_str(text).expect("built-in scenario files are valid"))
}

/// Four setpoints placed in different directions from the start.
pub fn scenario_directions() -> Scenario {
    builtin_scenario("directions").unwrap()
}

/// Closed rectangle: five waypoints, the last one back at the first.
pub fn scenario_rectangle() -> Scenario {
    builtin_scenario("rectangle").unwrap()
}

/// Converging ascending helix from the room center, ending 0.8 m above the start.
pub fn scenario_spiral() -> Scenario {
    builtin_scenario("spiral").unwrap()
}

/// Cascaded position/attitude controller used to validate the harness
/// without trained weights.
///
/// Position: `v_des = (kp/kd) e` limited to `max_speed`, then
/// `a_des = kd (v_des - v)` with lateral and vertical limits. Attitude:
/// geometric SO(3) error toward the thrust direction at zero yaw, PD in
/// body rates plus gyroscopic compensation. Thrust and torques go through
/// the inverse mixing matrix and are clipped per motor.
///
/// Gains were tuned once on the rectangle scenario at the default
/// parameters and dt = 0.01 s, then frozen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineGains {
    pub kp: f64,
    pub kd: f64,
    pub kp_z: f64,
    pub kd_z: f64,
    pub max_speed: f64,
    pub max_lateral_accel: f64,
    pub max_vertical_accel: f64,
    /// Attitude stiffness (rad/s^2 per rad) for roll/pitch and yaw.
    pub k_attitude: [f64; 3],
    /// Rate damping (1/s) for roll/pitch and yaw.
    pub k_rate: [f64; 3],
}

impl Default for BaselineGains {
    fn default() -> Self {
        Self {
            kp: 4.0,
            kd: 4.0,
            kp_z: 6.0,
            kd_z: 5.0,
            max_speed: 1.0,
            max_lateral_accel: 3.0,
            max_vertical_accel: 4.0,
            k_attitude: [400.0, 400.0, 100.0],
            k_rate: [40.0, 40.0, 20.0],
        }
    }
}

fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

fn clamp_norm(v: Vector3<f64>, max: f64) -> Vector3<f64> {
    let n = v.norm();
    if n > max {
        v * (max / n)
    } else {
        v
    }
}

/// Baseline controller state-feedback law.
#[derive(Debug, Clone)]
pub struct BaselineController {
    gains: BaselineGains,
    params: QuadrotorParams,
    allocation: Matrix4<f64>,
}

impl BaselineController {
    pub fn new(gains: BaselineGains, params: &QuadrotorParams) -> Self {
        let allocation = params
            .mixing_matrix()
            .try_inverse()
            .expect("validated motor layout is invertible");
        Self {
            gains,
            params: params.clone(),
            allocation,
        }
    }

    pub fn command(&self, state: &QuadrotorState, setpoint: &Vector3<f64>) -> MotorCommand {
        let g = &self.gains;
        let p = &self.params;
        let err = setpoint - state.position;

        let v_des_xy = clamp_norm(Vector3::new(err.x, err.y, 0.0) * (g.kp / g.kd), g.max_speed);
        let v_des_z = (err.z * g.kp_z / g.kd_z).clamp(-g.max_speed, g.max_speed);
        let a_xy = clamp_norm(
            (v_des_xy - Vector3::new(state.velocity.x, state.velocity.y, 0.0)) * g.kd,
            g.max_lateral_accel,
        );
        let a_z = (g.kd_z * (v_des_z - state.velocity.z))
            .clamp(-g.max_vertical_accel, g.max_vertical_accel);
        let force = (Vector3::new(a_xy.x, a_xy.y, a_z) - p.gravity()) * p.mass;

        let body_z = state.rotation.column(2).into_owned();
        let collective = force.dot(&body_z).max(0.0);

        let z_des = if force.norm() > 0.0 {
            force.normalize()
        } else {
            Vector3::z()
        };
        let y_des = z_des.cross(&Vector3::x()).normalize();
        let x_des = y_des.cross(&z_des);
        let r_des = Matrix3::from_columns(&[x_des, y_des, z_des]);

        let r = &state.rotation;
        let e_rot = vee(&(r_des.transpose() * r - r.transpose() * r_des)) * 0.5;
        let omega = state.angular_velocity;
        let inertia = Vector3::from(p.inertia);
        let k_att = Vector3::from(g.k_attitude);
        let k_rate = Vector3::from(g.k_rate);
        let ang_accel = -k_att.component_mul(&e_rot) - k_rate.component_mul(&omega);
        let torque =
            inertia.component_mul(&ang_accel) + omega.cross(&inertia.component_mul(&omega));

        let thrusts = self.allocation * Vector4::new(collective, torque.x, torque.y, torque.z);
        MotorCommand([0, 1, 2, 3].map(|i| (thrusts[i] / p.max_motor_thrust).clamp(0.0, 1.0)))
    }
}

pub fn baseline_controller(
    state: &QuadrotorState,
    setpoint: &Vector3<f64>,
    params: &QuadrotorParams,
) -> MotorCommand {
    BaselineController::new(BaselineGains::default(), params).command(state, setpoint)
}

/// What drives the motors during an episode.
#[derive(Debug, Clone, Copy)]
pub enum Controller<'a> {
    Baseline(BaselineGains),
    Float(&'a DeepsetsPolicy),
    Fixed(&'a QuantizedPolicy),
}

impl Controller<'_> {
    pub fn kind(&self) -> ControllerKind {
        match self {
            Controller::Baseline(_) => ControllerKind::Baseline,
            Controller::Float(_) => ControllerKind::DeepsetsFloat,
            Controller::Fixed(_) => ControllerKind::DeepsetsFixed,
        }
    }
}

/// Controller bound to one vehicle's parameters.
struct ActiveController<'a> {
    controller: Controller<'a>,
    baseline: Option<BaselineController>,
}

impl<'a> ActiveController<'a> {
    fn new(controller: Controller<'a>, params: &QuadrotorParams) -> Self {
        let baseline = match controller {
            Controller::Baseline(gains) => Some(BaselineController::new(gains, params)),
            _ => None,
        };
        Self {
            controller,
            baseline,
        }
    }

    fn act(
        &self,
        state: &QuadrotorState,
        setpoint: &Vector3<f64>,
    ) -> Result<(ActionVec, MotorCommand), QuantizeError> {
        let obs = || solo_observation(state, setpoint);
        match self.controller {
            Controller::Baseline(_) => {
                let motor = self.baseline.as_ref().unwrap().command(state, setpoint);
                Ok((motor_to_action(&motor), motor))
            }
            Controller::Float(p) => {
                let a = p.forward(&obs(), &[]);
                Ok((a, action_to_motor(&a)))
            }
            Controller::Fixed(qp) => {
                let a = qp.forward_observation(&obs(), &[])?;
                Ok((a, action_to_motor(&a)))
            }
        }
    }
}

/// Self observation of a lone vehicle flying toward `setpoint`.
pub fn solo_observation(state: &QuadrotorState, setpoint: &Vector3<f64>) -> SelfObservation {
    build_self_observation(&WorldSnapshot::solo(*state, *setpoint), 0).expect("index 0 exists")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRecord {
    pub t: f64,
    pub state: QuadrotorState,
    pub setpoint: Vector3<f64>,
    pub action: [f64; 4],
    pub motor: [f64; 4],
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryLog {
    pub dt: f64,
    pub records: Vec<LogRecord>,
    /// The final setpoint was reached and held for its dwell.
    pub completed: bool,
    /// Some logged position left the flight area.
    pub out_of_bounds: bool,
}

struct Schedule<'s> {
    setpoints: &'s [Setpoint],
    radius: f64,
    index: usize,
    activated_at: f64,
    arrived_at: Option<f64>,
}

enum Advance {
    Continue,
    Completed,
    Expired,
}

impl<'s> Schedule<'s> {
    fn current(&self) -> Vector3<f64> {
        self.setpoints[self.index].vector()
    }

    fn update(&mut self, t: f64, position: &Vector3<f64>) -> Advance {
        let sp = self.setpoints[self.index];
        let last = self.index + 1 == self.setpoints.len();
        if self.arrived_at.is_none() && (position - sp.vector()).norm() <= self.radius {
            self.arrived_at = Some(t);
        }
        let dwelled = self
            .arrived_at
            .is_some_and(|a| t - a >= sp.dwell - TIME_EPS);
        let expired = sp
            .timeout
            .is_some_and(|limit| t - self.activated_at >= limit - TIME_EPS);
        if dwelled || expired {
            if last {
                return if dwelled {
                    Advance::Completed
                } else {
                    Advance::Expired
                };
            }
            self.index += 1;
            self.activated_at = t;
            self.arrived_at = None;
        }
        Advance::Continue
    }
}

/// Run one episode, calling `observe` on every logged record.
pub fn run_closed_loop_with<F>(
    scn: &Scenario,
    controller: &Controller,
    mut observe: F,
) -> Result<TrajectoryLog, SimError>
where
    F: FnMut(&LogRecord),
{
    scn.validate()?;
    let params = &scn.params;
    let active = ActiveController::new(*controller, params);
    let mut schedule = Schedule {
        setpoints: &scn.setpoints,
        radius: scn.arrival_radius,
        index: 0,
        activated_at: 0.0,
        arrived_at: None,
    };
    let mut log = TrajectoryLog {
        dt: scn.dt,
        records: Vec::new(),
        completed: false,
        out_of_bounds: false,
    };
    let mut state = QuadrotorState::at_rest(Vector3::from(scn.start));

    for k in 0u64.. {
        let t = k as f64 * scn.dt;
        let outcome = schedule.update(t, &state.position);
        let setpoint = schedule.current();
        let (action, motor) = match active.act(&state, &setpoint) {
            Ok(out) => out,
            Err(source) => {
                return Err(SimError::Controller {
                    t,
                    source,
                    log: Box::new(log),
                })
            }
        };
        let record = LogRecord {
            t,
            state,
            setpoint,
            action: action.0,
            motor: motor.0,
        };
        observe(&record);
        log.out_of_bounds |= !scn.bounds.contains(&state.position);
        log.records.push(record);

        match outcome {
            Advance::Completed => {
                log.completed = true;
                break;
            }
            Advance::Expired => break,
            Advance::Continue => {}
        }
        if (k + 1) as f64 * scn.dt > scn.max_duration + TIME_EPS {
            break;
        }
        state = match step(&state, &motor_mix(&motor, params), params, scn.dt) {
            Ok(s) => s,
            Err(e) => {
                return Err(SimError::NonFinite {
                    t,
                    diagnostic: e.to_string(),
                    log: Box::new(log),
                })
            }
        };
    }
    Ok(log)
}

pub fn run_closed_loop(scn: &Scenario, controller: &Controller) -> Result<TrajectoryLog, SimError> {
    run_closed_loop_with(scn, controller, |_| {})
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackingMetrics {
    pub rms_position_error: f64,
    pub max_deviation: f64,
    /// First time within the arrival radius of each setpoint while it was active.
    pub arrival_times: Vec<Option<f64>>,
    pub completed: bool,
}

/// Closest point to `p` on the segment `a..b`.
pub fn closest_on_segment(p: &Vector3<f64>, a: &Vector3<f64>, b: &Vector3<f64>) -> Vector3<f64> {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return *a;
    }
    let s = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    a + ab * s
}

/// Index of the active setpoint for every record, recovered from the
/// logged setpoint positions.
pub fn active_indices(records: &[LogRecord], scn: &Scenario) -> Vec<usize> {
    let targets = scn.setpoint_positions();
    let mut idx = 0;
    records
        .iter()
        .map(|r| {
            while idx + 1 < targets.len() && r.setpoint != targets[idx] {
                idx += 1;
            }
            idx
        })
        .collect()
}

/// Deviation from the piecewise-linear path start -> setpoint 1 -> ... ,
/// measured against the segment leading to the active setpoint.
pub fn compute_metrics(log: &TrajectoryLog, scn: &Scenario) -> Result<TrackingMetrics, SimError> {
    if log.records.is_empty() {
        return Err(SimError::EmptyLog);
    }
    let targets = scn.setpoint_positions();
    let start = Vector3::from(scn.start);
    let indices = active_indices(&log.records, scn);
    let mut arrival_times = vec![None; targets.len()];
    let mut sum_sq = 0.0;
    let mut max_dev: f64 = 0.0;
    for (record, &i) in log.records.iter().zip(&indices) {
        let from = if i == 0 { start } else { targets[i - 1] };
        let p = record.state.position;
        let d = (p - closest_on_segment(&p, &from, &targets[i])).norm();
        sum_sq += d * d;
        max_dev = max_dev.max(d);
        if arrival_times[i].is_none() && (p - targets[i]).norm() <= scn.arrival_radius {
            arrival_times[i] = Some(record.t);
        }
    }
    let rms = (sum_sq / log.records.len() as f64).sqrt().min(max_dev);
    Ok(TrackingMetrics {
        rms_position_error: rms,
        max_deviation: max_dev,
        completed: arrival_times.iter().all(Option::is_some),
        arrival_times,
    })
}

/// One tick of a controller comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceTick {
    pub t: f64,
    /// `max_i |a_primary - a_candidate|` on the primary run's observation;
    /// `None` if the candidate failed (overflow).
    pub action_error: Option<f64>,
    pub in_envelope: bool,
    /// Position distance between the two closed-loop runs.
    pub position_divergence: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceReport {
    pub ticks: Vec<DivergenceTick>,
    pub primary_log: TrajectoryLog,
    pub candidate_log: TrajectoryLog,
    /// Why the primary run stopped early, if it did; `ticks` end there.
    pub primary_failure: Option<String>,
    /// Why the candidate's own closed-loop run stopped early, if it did.
    pub candidate_failure: Option<String>,
}

impl DivergenceReport {
    pub fn max_action_error(&self) -> f64 {
        self.ticks
            .iter()
            .filter_map(|t| t.action_error)
            .fold(0.0, f64::max)
    }

    pub fn max_action_error_in_envelope(&self) -> f64 {
        self.ticks
            .iter()
            .filter(|t| t.in_envelope)
            .map(|t| t.action_error.unwrap_or(f64::INFINITY))
            .fold(0.0, f64::max)
    }

    pub fn in_envelope_ticks(&self) -> usize {
        self.ticks.iter().filter(|t| t.in_envelope).count()
    }

    pub fn failed_ticks(&self) -> usize {
        self.ticks
            .iter()
            .filter(|t| t.action_error.is_none())
            .count()
    }

    pub fn max_divergence(&self) -> f64 {
        self.ticks
            .iter()
            .filter_map(|t| t.position_divergence)
            .fold(0.0, f64::max)
    }

    pub fn final_divergence(&self) -> Option<f64> {
        self.ticks.iter().rev().find_map(|t| t.position_divergence)
    }
}

/// Fly `primary` closed loop, evaluating `candidate` on every observation
/// the primary sees, then fly `candidate` closed loop on its own and
/// measure how far the two trajectories drift apart.
pub fn compare_controllers(
    scn: &Scenario,
    primary: &Controller,
    candidate: &Controller,
    envelope: &ObservationRanges,
) -> Result<DivergenceReport, SimError> {
    scn.validate()?;
    let shadow = ActiveController::new(*candidate, &scn.params);
    let mut ticks = Vec::new();
    let primary_run = run_closed_loop_with(scn, primary, |r| {
        let obs = solo_observation(&r.state, &r.setpoint);
        let action_error = shadow
            .act(&r.state, &r.setpoint)
            .ok()
            .map(|(a, _)| max_component_error(&ActionVec(r.action), &a));
        ticks.push(DivergenceTick {
            t: r.t,
            action_error,
            in_envelope: envelope.contains(&obs, &[]),
            position_divergence: None,
        });
    });
    let (primary_log, primary_failure) = split_failure(primary_run)?;
    let (candidate_log, candidate_failure) = split_failure(run_closed_loop(scn, candidate))?;
    for (tick, (a, b)) in ticks
        .iter_mut()
        .zip(primary_log.records.iter().zip(&candidate_log.records))
    {
        tick.position_divergence = Some((a.state.position - b.state.position).norm());
    }
    Ok(DivergenceReport {
        ticks,
        primary_log,
        candidate_log,
        primary_failure,
        candidate_failure,
    })
}

/// Keep the partial log of an aborted episode; only errors without one propagate.
fn split_failure(
    run: Result<TrajectoryLog, SimError>,
) -> Result<(TrajectoryLog, Option<String>), SimError> {
    match run {
        Ok(log) => Ok((log, None)),
        Err(e) => match e.partial_log() {
            Some(log) => Ok((log.clone(), Some(e.to_string()))),
            None => Err(e),
        },
    }
}

/// Float policy as primary, its quantized copy as candidate.
pub fn compare_float_fixed(
    p: &DeepsetsPolicy,
    qp: &QuantizedPolicy,
    scn: &Scenario,
    envelope: &ObservationRanges,
) -> Result<DivergenceReport, SimError> {
    compare_controllers(scn, &Controller::Float(p), &Controller::Fixed(qp), envelope)
}
