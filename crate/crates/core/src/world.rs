//! Gates, obstacles, and their prescribed motions.
//!
//! Gate centers and obstacle centers follow simple time-parameterized motions
//! that the planner can query for position and velocity at any absolute time.
//! Obstacles are ellipsoids stored through their shape matrix
//! `H = R·diag(a⁻², b⁻², c⁻²)·Rᵀ`, so the point-in-ellipsoid test and the
//! clearance penalty both reduce to one quadratic form.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TrajError};

/// Prescribed rigid motion of a world feature's center.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Motion {
    /// Fixed at `position`.
    Static { position: Vector3<f64> },
    /// `position(t) = start + velocity · t`.
    Linear {
        start: Vector3<f64>,
        velocity: Vector3<f64>,
    },
    /// Harmonic oscillation along `axis` about `center`:
    /// `position(t) = center + axis · amplitude · sin(ω t + phase)`.
    Sinusoid {
        center: Vector3<f64>,
        axis: Vector3<f64>,
        amplitude: f64,
        angular_frequency: f64,
        phase: f64,
    },
}

impl Motion {
    pub fn position(&self, t: f64) -> Vector3<f64> {
        match self {
            Motion::Static { position } => *position,
            Motion::Linear { start, velocity } => start + velocity * t,
            Motion::Sinusoid {
                center,
                axis,
                amplitude,
                angular_frequency,
                phase,
            } => center + axis * (amplitude * (angular_frequency * t + phase).sin()),
        }
    }

    pub fn velocity(&self, t: f64) -> Vector3<f64> {
        match self {
            Motion::Static { .. } => Vector3::zeros(),
            Motion::Linear { velocity, .. } => *velocity,
            Motion::Sinusoid {
                axis,
                amplitude,
                angular_frequency,
                phase,
                ..
            } => axis * (amplitude * angular_frequency * (angular_frequency * t + phase).cos()),
        }
    }

    /// Time-free representative location (oscillation center, line start).
    pub fn nominal(&self) -> Vector3<f64> {
        match self {
            Motion::Static { position } => *position,
            Motion::Linear { start, .. } => *start,
            Motion::Sinusoid { center, .. } => *center,
        }
    }

    pub fn is_static(&self) -> bool {
        match self {
            Motion::Static { .. } => true,
            Motion::Linear { velocity, .. } => velocity.norm() == 0.0,
            Motion::Sinusoid {
                amplitude,
                angular_frequency,
                ..
            } => *amplitude == 0.0 || *angular_frequency == 0.0,
        }
    }

    /// Repetition period of the motion, if it has one.
    pub fn period(&self) -> Option<f64> {
        match self {
            Motion::Sinusoid {
                amplitude,
                angular_frequency,
                ..
            } if *amplitude != 0.0 && *angular_frequency != 0.0 => {
                Some(std::f64::consts::TAU / angular_frequency.abs())
            }
            _ => None,
        }
    }

    /// First time at or after `after` at which the motion sits at an
    /// excursion extreme (only periodic motions have one).
    pub fn next_extreme(&self, after: f64) -> Option<f64> {
        use std::f64::consts::{FRAC_PI_2, PI};
        match self {
            Motion::Sinusoid {
                amplitude,
                angular_frequency,
                phase,
                ..
            } if *amplitude != 0.0 && *angular_frequency != 0.0 => {
                let w = angular_frequency.abs();
                let k = ((after * w + phase - FRAC_PI_2) / PI).ceil();
                Some((FRAC_PI_2 - phase + k * PI) / w)
            }
            _ => None,
        }
    }
}

/// A circular gate the vehicle must pass through at its crossing time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GateModel {
    pub motion: Motion,
    /// Aperture radius, used for seeding and reporting (m).
    pub radius: f64,
}

impl GateModel {
    pub fn center(&self, t: f64) -> Vector3<f64> {
        self.motion.position(t)
    }

    pub fn center_velocity(&self, t: f64) -> Vector3<f64> {
        self.motion.velocity(t)
    }
}

/// Moving ellipsoidal keep-out region.
#[derive(Debug, Clone)]
pub struct EllipsoidObstacle {
    semi_axes: Vector3<f64>,
    orientation: Matrix3<f64>,
    shape: Matrix3<f64>,
    pub motion: Motion,
}

const ORTHONORMAL_TOL: f64 = 1e-9;

impl EllipsoidObstacle {
    /// Builds the obstacle, validating `semi_axes > 0` and that `orientation`
    /// is a proper rotation.
    pub fn new(
        semi_axes: Vector3<f64>,
        orientation: Matrix3<f64>,
        motion: Motion,
    ) -> Result<Self> {
        if !semi_axes.iter().all(|a| a.is_finite() && *a > 0.0) {
            return Err(TrajError::InvalidConfig(format!(
                "ellipsoid semi-axes must be positive, got {:?}",
                semi_axes.as_slice()
            )));
        }
        let defect = (orientation.transpose() * orientation - Matrix3::identity()).norm();
        if defect > ORTHONORMAL_TOL || (orientation.determinant() - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(TrajError::InvalidConfig(format!(
                "ellipsoid orientation is not a rotation (orthonormality defect {defect:.2e})"
            )));
        }
        let inv_sq = Matrix3::from_diagonal(&semi_axes.map(|a| 1.0 / (a * a)));
        let shape = orientation * inv_sq * orientation.transpose();
        Ok(Self {
            semi_axes,
            orientation,
            shape,
            motion,
        })
    }

    pub fn axis_aligned(semi_axes: Vector3<f64>, motion: Motion) -> Result<Self> {
        Self::new(semi_axes, Matrix3::identity(), motion)
    }

    pub fn semi_axes(&self) -> &Vector3<f64> {
        &self.semi_axes
    }

    pub fn orientation(&self) -> &Matrix3<f64> {
        &self.orientation
    }

    /// Shape matrix `H`; the surface is `(p − c)ᵀ H (p − c) = 1`.
    pub fn shape(&self) -> &Matrix3<f64> {
        &self.shape
    }

    pub fn center(&self, t: f64) -> Vector3<f64> {
        self.motion.position(t)
    }

    pub fn center_velocity(&self, t: f64) -> Vector3<f64> {
        self.motion.velocity(t)
    }

    /// Quadratic form `(p − c(t))ᵀ H (p − c(t))`: < 1 inside, 1 on the surface.
    pub fn quadratic_form(&self, point: &Vector3<f64>, t: f64) -> f64 {
        let d = point - self.center(t);
        (self.shape * d).dot(&d)
    }

    pub fn contains(&self, point: &Vector3<f64>, t: f64) -> bool {
        self.quadratic_form(point, t) <= 1.0
    }

    /// Largest semi-axis, for seeding detours around the obstacle.
    pub fn max_semi_axis(&self) -> f64 {
        self.semi_axes.max()
    }
}

/// Attitude window at one gate: the body z-axis must stay aligned with
/// `desired_axis` while passing through.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GapSpec {
    /// Which gate the window brackets (0-based).
    pub gate_index: usize,
    /// Required thrust-axis direction (unit).
    pub desired_axis: Vector3<f64>,
    /// Allowed squared chordal distance `‖R·e₃ − desired_axis‖²`.
    pub tolerance: f64,
    /// Half-width of the bracketing window, in constraint-sample steps.
    pub sample_range: usize,
}

impl GapSpec {
    pub fn new(
        gate_index: usize,
        desired_axis: Vector3<f64>,
        tolerance: f64,
        sample_range: usize,
    ) -> Result<Self> {
        let norm = desired_axis.norm();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(TrajError::InvalidConfig(
                "gap axis must be a nonzero vector".into(),
            ));
        }
        if !(tolerance > 0.0 && tolerance < 4.0) {
            return Err(TrajError::InvalidConfig(format!(
                "gap tolerance must lie in (0, 4) (squared chordal distance), got {tolerance}"
            )));
        }
        Ok(Self {
            gate_index,
            desired_axis: desired_axis / norm,
            tolerance,
            sample_range,
        })
    }
}

/// Everything the planner needs to know about the race environment.
#[derive(Debug, Clone, Default)]
pub struct WorldModel {
    pub gates: Vec<GateModel>,
    pub obstacles: Vec<EllipsoidObstacle>,
}
