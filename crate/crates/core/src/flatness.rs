//! Differential-flatness map under an isotropic linear-drag model.
//!
//! The net thrust vector is `τ = a + g·e₃ + k_d·v`; its norm is the mass-
//! normalized collective thrust and its direction the body z-axis. Yaw is
//! fixed to zero: the body x-axis completes the frame by projecting the world
//! x-axis orthogonally to the body z-axis (falling back to the world y-axis
//! when the two nearly align), and the z body-rate component is zero by
//! convention. Everything downstream needs analytic first derivatives, so the
//! map also returns the Jacobians of thrust, body rates, and the body z-axis
//! with respect to velocity, acceleration, and jerk.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TrajError};

/// Thrust direction is undefined below this net-thrust norm (free fall).
pub const THRUST_SINGULARITY: f64 = 1e-6;

const AXIS_FALLBACK: f64 = 1e-6;

/// Substitute drag model: thrust must additionally cancel `k_d · v`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DragModel {
    /// Isotropic linear drag coefficient `k_d ≥ 0` (1/s).
    pub drag_coeff: f64,
    /// Gravitational acceleration (m/s²), acting along `−e₃`.
    pub gravity: f64,
}

impl Default for DragModel {
    fn default() -> Self {
        Self {
            drag_coeff: 0.0,
            gravity: 9.81,
        }
    }
}

/// Flat outputs at one trajectory point.
#[derive(Debug, Clone)]
pub struct FlatOutput {
    /// Mass-normalized collective thrust `f = ‖τ‖` (m/s²).
    pub thrust: f64,
    /// Body rates `(ω_x, ω_y, 0)` in the body frame (rad/s).
    pub body_rate: Vector3<f64>,
    /// World-from-body rotation; third column is the thrust direction.
    pub rotation: Matrix3<f64>,
}

impl FlatOutput {
    pub fn body_z(&self) -> Vector3<f64> {
        self.rotation.column(2).into()
    }
}

/// Per-input gradients of one scalar or vector quantity.
#[derive(Debug, Clone)]
pub struct InputGrads<T> {
    pub by_vel: T,
    pub by_acc: T,
    pub by_jerk: T,
}

/// Flat outputs plus all first derivatives needed by the penalty functionals.
#[derive(Debug, Clone)]
pub struct FlatJacobians {
    pub output: FlatOutput,
    pub thrust: InputGrads<Vector3<f64>>,
    pub rate_x: InputGrads<Vector3<f64>>,
    pub rate_y: InputGrads<Vector3<f64>>,
    /// Jacobians of the body z-axis: `d(z_B) = J · d(input)`.
    pub body_z: InputGrads<Matrix3<f64>>,
}

fn frame_from_thrust(tau: &Vector3<f64>) -> Result<(f64, Vector3<f64>, Vector3<f64>, Vector3<f64>, Vector3<f64>, f64)> {
    let f = tau.norm();
    if !(f.is_finite() && f >= THRUST_SINGULARITY) {
        return Err(TrajError::DegenerateThrust {
            norm: f,
            min: THRUST_SINGULARITY,
        });
    }
    let z = tau / f;
    // project the world x-axis orthogonally to z; fall back to the world
    // y-axis when z is (anti)parallel to x
    let mut xc = Vector3::x();
    let mut alpha = &xc - z * z.dot(&xc);
    let mut an = alpha.norm();
    if an < AXIS_FALLBACK {
        xc = Vector3::y();
        alpha = &xc - z * z.dot(&xc);
        an = alpha.norm();
    }
    let x_b = alpha / an;
    let y_b = z.cross(&x_b);
    Ok((f, z, x_b, y_b, xc, an))
}

/// Flat map alone: thrust, body rates, attitude.
pub fn flat_map(
    vel: &Vector3<f64>,
    acc: &Vector3<f64>,
    jerk: &Vector3<f64>,
    drag: &DragModel,
) -> Result<FlatOutput> {
    let tau = acc + Vector3::z() * drag.gravity + vel * drag.drag_coeff;
    let (f, z, x_b, y_b, _, _) = frame_from_thrust(&tau)?;
    let tau_dot = jerk + acc * drag.drag_coeff;
    // x_b, y_b ⊥ z, so the projector in ż = (I − zzᵀ)τ̇/f drops out
    let body_rate = Vector3::new(-y_b.dot(&tau_dot) / f, x_b.dot(&tau_dot) / f, 0.0);
    let rotation = Matrix3::from_columns(&[x_b, y_b, z]);
    Ok(FlatOutput {
        thrust: f,
        body_rate,
        rotation,
    })
}

/// Flat map with analytic Jacobians with respect to `(v, a, j)`.
pub fn flat_map_grad(
    vel: &Vector3<f64>,
    acc: &Vector3<f64>,
    jerk: &Vector3<f64>,
    drag: &DragModel,
) -> Result<FlatJacobians> {
    let kd = drag.drag_coeff;
    let tau = acc + Vector3::z() * drag.gravity + vel * kd;
    let (f, z, x_b, y_b, xc, an) = frame_from_thrust(&tau)?;
    let tau_dot = jerk + acc * kd;
    let omega_x = -y_b.dot(&tau_dot) / f;
    let omega_y = x_b.dot(&tau_dot) / f;

    let eye = Matrix3::identity();
    // ∂z/∂τ and the frame-completion chain ∂x_b/∂τ, ∂y_b/∂τ
    let p = (eye - z * z.transpose()) / f;
    let a_alpha = -(z * xc.transpose() + eye * z.dot(&xc));
    let jx = (eye - x_b * x_b.transpose()) / an * a_alpha * p;
    let jy = z.cross_matrix() * jx - x_b.cross_matrix() * p;

    // rate partials with respect to τ and τ̇
    let rate_y_tau = jx.transpose() * tau_dot / f - z * (omega_y / f);
    let rate_x_tau = -(jy.transpose() * tau_dot) / f - z * (omega_x / f);
    let rate_x_taudot = -y_b / f;
    let rate_y_taudot = x_b / f;

    // chain: τ = a + g·e₃ + k_d·v, τ̇ = j + k_d·a
    let output = FlatOutput {
        thrust: f,
        body_rate: Vector3::new(omega_x, omega_y, 0.0),
        rotation: Matrix3::from_columns(&[x_b, y_b, z]),
    };
    Ok(FlatJacobians {
        output,
        thrust: InputGrads {
            by_vel: z * kd,
            by_acc: z,
            by_jerk: Vector3::zeros(),
        },
        rate_x: InputGrads {
            by_vel: rate_x_tau * kd,
            by_acc: rate_x_tau + rate_x_taudot * kd,
            by_jerk: rate_x_taudot,
        },
        rate_y: InputGrads {
            by_vel: rate_y_tau * kd,
            by_acc: rate_y_tau + rate_y_taudot * kd,
            by_jerk: rate_y_taudot,
        },
        body_z: InputGrads {
            by_vel: p * kd,
            by_acc: p,
            by_jerk: Matrix3::zeros(),
        },
    })
}
