//! Rigid-body quadrotor model.
//!
//! World frame is z-up. The body frame has x forward, y left, z up; thrust
//! acts along body +z. Integration is semi-implicit Euler with an SO(3)
//! exponential-map attitude update, so the rotation matrix stays
//! orthonormal to machine precision.

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::MotorCommand;

pub const STANDARD_GRAVITY: f64 = 9.81;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DynamicsError {
    #[error("non-finite state after step: {0}")]
    NonFinite(String),
    #[error("time step must be positive and finite, got {0}")]
    BadTimeStep(f64),
    #[error("hover needs {needed:.6} N but four motors give at most {available:.6} N")]
    InfeasibleHover { needed: f64, available: f64 },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

/// One rotor: position in the body xy plane and the sign of its reaction
/// torque about body z.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Motor {
    pub x: f64,
    pub y: f64,
    pub spin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadrotorParams {
    pub mass: f64,
    /// Diagonal of the body inertia matrix.
    pub inertia: [f64; 3],
    pub gravity: [f64; 3],
    pub arm_length: f64,
    pub max_motor_thrust: f64,
    pub torque_coefficient: f64,
    /// Rotor geometry; the X layout from `arm_length` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub motor_layout: Option<[Motor; 4]>,
}

impl Default for QuadrotorParams {
    /// Nominal nano-quadrotor values.
    fn default() -> Self {
        Self {
            mass: 0.033,
            inertia: [1.4e-5, 1.4e-5, 2.2e-5],
            gravity: [0.0, 0.0, -STANDARD_GRAVITY],
            arm_length: 0.046,
            max_motor_thrust: 0.15,
            torque_coefficient: 0.006,
            motor_layout: None,
        }
    }
}

/// X layout, motors numbered clockwise from front-right as seen from above.
/// Diagonal pairs share a spin direction.
pub fn x_layout(arm_length: f64) -> [Motor; 4] {
    let d = arm_length / std::f64::consts::SQRT_2;
    [
        Motor {
            x: d,
            y: -d,
            spin: 1.0,
        },
        Motor {
            x: -d,
            y: -d,
            spin: -1.0,
        },
        Motor {
            x: -d,
            y: d,
            spin: 1.0,
        },
        Motor {
            x: d,
            y: d,
            spin: -1.0,
        },
    ]
}

impl QuadrotorParams {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        let bad = |m: &str| Err(DynamicsError::InvalidParams(m.to_string()));
        let all_finite = [
            self.mass,
            self.arm_length,
            self.max_motor_thrust,
            self.torque_coefficient,
        ]
        .iter()
        .chain(&self.inertia)
        .chain(&self.gravity)
        .all(|v| v.is_finite());
        if !all_finite {
            return bad("parameters must be finite");
        }
        if self.mass <= 0.0 {
            return bad("mass must be positive");
        }
        if self.inertia.iter().any(|&i| i <= 0.0) {
            return bad("inertia entries must be positive");
        }
        if self.max_motor_thrust <= 0.0 {
            return bad("max_motor_thrust must be positive");
        }
        if self.mixing_matrix().try_inverse().is_none() {
            return bad("motor layout cannot produce independent thrust and torques");
        }
        Ok(())
    }

    pub fn layout(&self) -> [Motor; 4] {
        self.motor_layout
            .unwrap_or_else(|| x_layout(self.arm_length))
    }

    pub fn gravity(&self) -> Vector3<f64> {
        Vector3::from(self.gravity)
    }

    /// Maps per-motor thrust (N) to `(f_z, tau_x, tau_y, tau_z)`.
    pub fn mixing_matrix(&self) -> Matrix4<f64> {
        let layout = self.layout();
        let mut m = Matrix4::zeros();
        for (i, motor) in layout.iter().enumerate() {
            m[(0, i)] = 1.0;
            // r x (0, 0, T) = (y T, -x T, 0)
            m[(1, i)] = motor.y;
            m[(2, i)] = -motor.x;
            m[(3, i)] = self.torque_coefficient * motor.spin;
        }
        m
    }
}

/// Body thrust `(0, 0, f_z)` and torque, both in the body frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WrenchBody {
    pub thrust: f64,
    pub torque: Vector3<f64>,
}

impl WrenchBody {
    pub fn force(&self) -> Vector3<f64> {
        Vector3::new(0.0, 0.0, self.thrust)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadrotorState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    /// Body-to-world rotation.
    pub rotation: Matrix3<f64>,
    /// Body-frame angular velocity.
    pub angular_velocity: Vector3<f64>,
}

impl QuadrotorState {
    pub fn at_rest(position: Vector3<f64>) -> Self {
        Self {
            position,
            velocity: Vector3::zeros(),
            rotation: Matrix3::identity(),
            angular_velocity: Vector3::zeros(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.velocity.iter().all(|v| v.is_finite())
            && self.rotation.iter().all(|v| v.is_finite())
            && self.angular_velocity.iter().all(|v| v.is_finite())
    }

    /// `max |R^T R - I|` entry.
    pub fn orthonormality_error(&self) -> f64 {
        orthonormality_error(&self.rotation)
    }
}

pub fn orthonormality_error(r: &Matrix3<f64>) -> f64 {
    (r.transpose() * r - Matrix3::identity()).amax()
}

pub fn skew(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Rodrigues' formula for `exp(phi_x)`.
pub fn so3_exp(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let k = skew(phi);
    let (a, b) = if theta2 < 1e-8 {
        // Taylor terms; the next ones are below 1e-17.
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        let theta = theta2.sqrt();
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Matrix3::identity() + k * a + k * k * b
}

pub fn motor_mix(cmd: &MotorCommand, params: &QuadrotorParams) -> WrenchBody {
    let thrusts = Vector4::from(cmd.0) * params.max_motor_thrust;
    let w = params.mixing_matrix() * thrusts;
    WrenchBody {
        thrust: w[0],
        torque: Vector3::new(w[1], w[2], w[3]),
    }
}

/// One semi-implicit Euler step.
pub fn step(
    s: &QuadrotorState,
    w: &WrenchBody,
    params: &QuadrotorParams,
    dt: f64,
) -> Result<QuadrotorState, DynamicsError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(DynamicsError::BadTimeStep(dt));
    }
    let inertia = Vector3::from(params.inertia);
    let accel = params.gravity() + s.rotation * w.force() / params.mass;
    let omega = s.angular_velocity;
    let gyro = omega.cross(&inertia.component_mul(&omega));
    let omega_dot = (w.torque - gyro).component_div(&inertia);

    let velocity = s.velocity + accel * dt;
    let position = s.position + velocity * dt;
    let angular_velocity = omega + omega_dot * dt;
    let rotation = s.rotation * so3_exp(&(angular_velocity * dt));

    let next = QuadrotorState {
        position,
        velocity,
        rotation,
        angular_velocity,
    };
    if !next.is_finite() {
        return Err(DynamicsError::NonFinite(format!(
            "position {:?} velocity {:?} omega {:?}",
            next.position.as_slice(),
            next.velocity.as_slice(),
            next.angular_velocity.as_slice()
        )));
    }
    Ok(next)
}

/// Equal per-motor command whose total thrust balances gravity.
pub fn hover_command(params: &QuadrotorParams) -> Result<MotorCommand, DynamicsError> {
    let needed = params.mass * params.gravity().norm();
    let available = 4.0 * params.max_motor_thrust;
    if needed > available {
        return Err(DynamicsError::InfeasibleHover { needed, available });
    }
    Ok(MotorCommand([needed / available; 4]))
}
