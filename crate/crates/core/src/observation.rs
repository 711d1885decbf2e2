//! Self and neighbor observation vectors built from world state.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::dynamics::QuadrotorState;

pub const SELF_OBS_DIM: usize = 18;
pub const NEIGHBOR_OBS_DIM: usize = 6;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ObservationError {
    #[error("quadrotor index {index} out of range (world has {len})")]
    Index { index: usize, len: usize },
}

/// `(p - p_target, v, row-major R, omega)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelfObservation(pub [f64; SELF_OBS_DIM]);

/// `(p_self - p_other, v_self - v_other)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborObservation(pub [f64; NEIGHBOR_OBS_DIM]);

impl SelfObservation {
    pub fn new(
        rel_position: &Vector3<f64>,
        velocity: &Vector3<f64>,
        rotation: &Matrix3<f64>,
        angular_velocity: &Vector3<f64>,
    ) -> Self {
        let mut obs = [0.0; SELF_OBS_DIM];
        obs[0..3].copy_from_slice(rel_position.as_slice());
        obs[3..6].copy_from_slice(velocity.as_slice());
        for row in 0..3 {
            for col in 0..3 {
                obs[6 + 3 * row + col] = rotation[(row, col)];
            }
        }
        obs[15..18].copy_from_slice(angular_velocity.as_slice());
        Self(obs)
    }

    pub fn rel_position(&self) -> Vector3<f64> {
        Vector3::from_column_slice(&self.0[0..3])
    }

    pub fn velocity(&self) -> Vector3<f64> {
        Vector3::from_column_slice(&self.0[3..6])
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        Matrix3::from_row_slice(&self.0[6..15])
    }

    pub fn angular_velocity(&self) -> Vector3<f64> {
        Vector3::from_column_slice(&self.0[15..18])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl NeighborObservation {
    pub fn new(rel_position: &Vector3<f64>, rel_velocity: &Vector3<f64>) -> Self {
        let mut obs = [0.0; NEIGHBOR_OBS_DIM];
        obs[0..3].copy_from_slice(rel_position.as_slice());
        obs[3..6].copy_from_slice(rel_velocity.as_slice());
        Self(obs)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// One vehicle as seen by the observation builder.
#[derive(Debug, Clone, PartialEq)]
pub struct Vehicle {
    pub state: QuadrotorState,
    pub target: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct WorldSnapshot {
    pub vehicles: Vec<Vehicle>,
}

impl WorldSnapshot {
    pub fn solo(state: QuadrotorState, target: Vector3<f64>) -> Self {
        Self {
            vehicles: vec![Vehicle { state, target }],
        }
    }

    fn vehicle(&self, q: usize) -> Result<&Vehicle, ObservationError> {
        self.vehicles.get(q).ok_or(ObservationError::Index {
            index: q,
            len: self.vehicles.len(),
        })
    }
}

pub fn build_self_observation(
    world: &WorldSnapshot,
    q: usize,
) -> Result<SelfObservation, ObservationError> {
    let me = world.vehicle(q)?;
    let s = &me.state;
    Ok(SelfObservation::new(
        &(s.position - me.target),
        &s.velocity,
        &s.rotation,
        &s.angular_velocity,
    ))
}

/// Up to `k` nearest neighbors of `q`, nearest first. Equal distances keep
/// ascending vehicle index.
pub fn build_neighbor_observations(
    world: &WorldSnapshot,
    q: usize,
    k: usize,
) -> Result<Vec<NeighborObservation>, ObservationError> {
    let me = &world.vehicle(q)?.state;
    let mut others: Vec<(f64, usize)> = world
        .vehicles
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != q)
        .map(|(i, v)| ((me.position - v.state.position).norm(), i))
        .collect();
    // Stable sort on distance alone keeps index order for ties.
    others.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(others
        .into_iter()
        .take(k)
        .map(|(_, i)| {
            let other = &world.vehicles[i].state;
            NeighborObservation::new(
                &(me.position - other.position),
                &(me.velocity - other.velocity),
            )
        })
        .collect())
}
