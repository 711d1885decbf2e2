//! Fixed-point deepsets flight control.
//!
//! - [`fixedpoint`]: integer arithmetic with a uniform fractional-bit count
//! - [`network`]: the deepsets policy on the floating-point path
//! - [`quantizer`]: policy conversion, integer-only inference, calibration of `n`
//! - [`dynamics`]: rigid-body quadrotor model and motor mixing
//! - [`observation`]: self and neighbor observation vectors
//! - [`simharness`]: closed-loop episodes, scenarios, tracking metrics
//! - [`formats`]: weight, report, scenario and trajectory files

pub mod dynamics;
pub mod fixedpoint;
pub mod formats;
pub mod network;
pub mod observation;
pub mod quantizer;
pub mod simharness;

pub use dynamics::{
    hover_command, motor_mix, step, DynamicsError, QuadrotorParams, QuadrotorState, WrenchBody,
};
pub use fixedpoint::{
    dequantize_scalar, q_add, q_dot, q_dot_bias, q_mean, q_mul, q_relu, quantize_scalar,
    FixedPointError, OverflowMode, QFormat, QScalar, QVector,
};
pub use formats::FormatError;
pub use network::{
    action_to_motor, deepsets_forward_float, mlp_forward_float, ActionVec, Activation,
    DeepsetsPolicy, Layer, Mlp, MotorCommand, NetworkError,
};
pub use observation::{
    build_neighbor_observations, build_self_observation, NeighborObservation, SelfObservation,
    WorldSnapshot,
};
pub use quantizer::{
    calibrate_fraction_bits, deepsets_forward_fixed, quantize_policy, sample_observations,
    CalibrationConfig, CalibrationReport, ObservationRanges, QuantizeError, QuantizedPolicy,
};
pub use simharness::{
    compare_controllers, compare_float_fixed, compute_metrics, run_closed_loop, Controller,
    ControllerKind, DivergenceReport, Scenario, SimError, TrackingMetrics, TrajectoryLog,
};
