//! Cost functionals over segmented polynomial trajectories.
//!
//! Two pieces: the closed-form control-effort (s-th-derivative energy) plus
//! weighted total time, and the sampled penalty functional that turns
//! actuator limits, attitude-window alignment, and moving-obstacle clearance
//! into smooth terms. Both return their value together with exact gradients
//! with respect to every piece-coefficient matrix and every segment duration,
//! in the per-segment layout the spline backprop consumes.
//!
//! Penalty transcription: segment `n` of duration `T_n` is sampled at the
//! `κ+1` uniform times `t_j = (j/κ)·T_n`; each violated constraint `G > 0`
//! contributes `λ·(T_n/κ)·ω̄_j·G³` with trapezoid weights `ω̄`. The cubic
//! hinge keeps the functional twice continuously differentiable.

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TrajError};
use crate::flatness::{flat_map, flat_map_grad, DragModel};
use crate::poly::{basis_deriv, PolynomialPiece};
use crate::world::{EllipsoidObstacle, GapSpec};

/// Multipliers for the individual penalty terms.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PenaltyWeights {
    pub thrust: f64,
    pub body_rate: f64,
    pub gap: f64,
    pub obstacle: f64,
}

impl Default for PenaltyWeights {
    fn default() -> Self {
        Self {
            thrust: 1e2,
            body_rate: 1e2,
            gap: 1e4,
            obstacle: 1e4,
        }
    }
}

/// Mass-normalized actuator envelope.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ActuatorLimits {
    /// Lowest admissible collective thrust (m/s²).
    pub thrust_min: f64,
    /// Highest admissible collective thrust (m/s²).
    pub thrust_max: f64,
    /// Body-rate norm bound (rad/s).
    pub body_rate_max: f64,
}

impl Default for ActuatorLimits {
    fn default() -> Self {
        Self {
            thrust_min: 2.0,
            thrust_max: 20.0,
            body_rate_max: 10.0,
        }
    }
}

impl ActuatorLimits {
    /// Thrust window as (midpoint, half-width): the constraint is
    /// `(f − mid)² ≤ radius²`.
    pub fn thrust_mid_radius(&self) -> (f64, f64) {
        (
            0.5 * (self.thrust_max + self.thrust_min),
            0.5 * (self.thrust_max - self.thrust_min),
        )
    }
}

/// Everything the penalty functional needs besides the trajectory itself.
#[derive(Debug, Clone)]
pub struct PenaltyConfig {
    pub weights: PenaltyWeights,
    pub limits: ActuatorLimits,
    /// Constraint-sample intervals per segment (κ).
    pub samples_per_segment: usize,
    /// Keep-out threshold on the ellipsoid quadratic form; 1 is the surface,
    /// larger values demand clearance.
    pub obstacle_clearance: f64,
    /// Optional attitude window bracketing one gate crossing.
    pub gap: Option<GapSpec>,
    pub drag: DragModel,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        Self {
            weights: PenaltyWeights::default(),
            limits: ActuatorLimits::default(),
            samples_per_segment: 16,
            obstacle_clearance: 1.0,
            gap: None,
            drag: DragModel::default(),
        }
    }
}

impl PenaltyConfig {
    pub fn validate(&self) -> Result<()> {
        let w = &self.weights;
        for (name, v) in [
            ("thrust", w.thrust),
            ("body_rate", w.body_rate),
            ("gap", w.gap),
            ("obstacle", w.obstacle),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(TrajError::InvalidConfig(format!(
                    "penalty weight `{name}` must be finite and non-negative, got {v}"
                )));
            }
        }
        if self.samples_per_segment == 0 {
            return Err(TrajError::InvalidConfig(
                "samples_per_segment must be at least 1".into(),
            ));
        }
        let l = &self.limits;
        if !(l.thrust_min >= 0.0 && l.thrust_min < l.thrust_max) {
            return Err(TrajError::InvalidConfig(format!(
                "thrust limits must satisfy 0 ≤ min < max, got [{}, {}]",
                l.thrust_min, l.thrust_max
            )));
        }
        if !(l.body_rate_max > 0.0) {
            return Err(TrajError::InvalidConfig(format!(
                "body_rate_max must be positive, got {}",
                l.body_rate_max
            )));
        }
        if !(self.obstacle_clearance > 0.0) {
            return Err(TrajError::InvalidConfig(format!(
                "obstacle_clearance must be positive, got {}",
                self.obstacle_clearance
            )));
        }
        if !(self.drag.drag_coeff >= 0.0) {
            return Err(TrajError::InvalidConfig(format!(
                "drag coefficient must be non-negative, got {}",
                self.drag.drag_coeff
            )));
        }
        Ok(())
    }
}

/// A cost value with gradients in the per-segment spline layout:
/// `by_coeffs[n]` is the gradient with respect to segment `n`'s stacked
/// coefficient matrix, `by_times[n]` with respect to its total duration.
#[derive(Debug, Clone)]
pub struct TrajectoryCost {
    pub value: f64,
    pub by_coeffs: Vec<DMatrix<f64>>,
    pub by_times: DVector<f64>,
}

impl TrajectoryCost {
    pub fn zeros_like(segments: &[Vec<PolynomialPiece>]) -> Result<Self> {
        let by_coeffs = segments
            .iter()
            .map(|pieces| {
                let rows: usize = pieces.iter().map(|p| p.coeffs().nrows()).sum();
                let dim = pieces.first().map_or(0, |p| p.dim());
                if dim != 3 {
                    return Err(TrajError::DimensionMismatch {
                        what: "trajectory dimension",
                        expected: 3,
                        actual: dim,
                    });
                }
                Ok(DMatrix::zeros(rows, dim))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            value: 0.0,
            by_coeffs,
            by_times: DVector::zeros(segments.len()),
        })
    }

    /// Adds another cost (value and all gradients) into this one.
    pub fn merge(&mut self, other: &TrajectoryCost) {
        debug_assert_eq!(self.by_coeffs.len(), other.by_coeffs.len());
        self.value += other.value;
        for (mine, theirs) in self.by_coeffs.iter_mut().zip(&other.by_coeffs) {
            *mine += theirs;
        }
        self.by_times += &other.by_times;
    }
}

fn vec3(v: DVector<f64>) -> Vector3<f64> {
    Vector3::new(v[0], v[1], v[2])
}

fn falling_factorial(p: usize, s: usize) -> f64 {
    (p - s + 1..=p).map(|k| k as f64).product()
}

fn smoothness_order(pieces: &[PolynomialPiece]) -> Result<usize> {
    let degree = pieces
        .first()
        .ok_or(TrajError::DimensionMismatch {
            what: "segment piece count",
            expected: 1,
            actual: 0,
        })?
        .degree();
    if degree % 2 == 0 {
        return Err(TrajError::InvalidConfig(format!(
            "smoothness energy needs odd polynomial degree, got {degree}"
        )));
    }
    Ok((degree + 1) / 2)
}

/// Integrated squared s-th derivative plus `time_weight · total_duration`,
/// with exact gradients.
pub fn control_effort_cost(
    segments: &[Vec<PolynomialPiece>],
    time_weight: f64,
) -> Result<TrajectoryCost> {
    let mut cost = TrajectoryCost::zeros_like(segments)?;
    for (n, pieces) in segments.iter().enumerate() {
        let s = smoothness_order(pieces)?;
        let degree = 2 * s - 1;
        let m = pieces.len() as f64;
        let mut dh_sum = 0.0;
        let mut row0 = 0;
        for piece in pieces {
            let h = piece.duration();
            let c = piece.coeffs();
            for p in s..=degree {
                let fp = falling_factorial(p, s);
                for q in s..=degree {
                    let pow = (p + q - 2 * s + 1) as i32;
                    let integral = fp * falling_factorial(q, s) * h.powi(pow) / pow as f64;
                    cost.value += integral * c.row(p).dot(&c.row(q));
                    for col in 0..c.ncols() {
                        cost.by_coeffs[n][(row0 + p, col)] += 2.0 * integral * c[(q, col)];
                    }
                }
            }
            dh_sum += piece.eval(h, s).norm_squared();
            row0 += c.nrows();
        }
        let seg_t = pieces[0].duration() * m;
        cost.value += time_weight * seg_t;
        cost.by_times[n] = dh_sum / m + time_weight;
    }
    Ok(cost)
}

struct HingeAccumulator {
    value: f64,
    quad_time: f64,
    /// Gradients with respect to position, velocity, acceleration, jerk.
    by_derivative: [Vector3<f64>; 4],
    by_abs_time: f64,
}

impl HingeAccumulator {
    fn new() -> Self {
        Self {
            value: 0.0,
            quad_time: 0.0,
            by_derivative: [Vector3::zeros(); 4],
            by_abs_time: 0.0,
        }
    }

    /// Registers one violated constraint; returns the multiplier for its
    /// gradient chain, or `None` when inactive.
    fn activate(&mut self, g: f64, lambda: f64, seg_t: f64, kappa: f64, wbar: f64) -> Option<f64> {
        if !(g > 0.0) {
            return None;
        }
        let cubed = g * g * g;
        self.value += lambda * (seg_t / kappa) * wbar * cubed;
        self.quad_time += lambda * (wbar / kappa) * cubed;
        Some(lambda * (seg_t / kappa) * wbar * 3.0 * g * g)
    }

    fn is_zero(&self) -> bool {
        self.value == 0.0
            && self.by_abs_time == 0.0
            && self.by_derivative.iter().all(|v| *v == Vector3::zeros())
    }
}

/// True when sample `j/denominator` of segment `n` lies inside the attitude
/// window bracketing `gap.gate_index`'s crossing. The window half-width is
/// `sample_range / κ` of a segment, so any sampling density sees the same
/// time interval.
fn in_gap_window(gap: &GapSpec, kappa: usize, n: usize, j: usize, denominator: usize) -> bool {
    if n == gap.gate_index {
        j * kappa >= denominator * kappa.saturating_sub(gap.sample_range)
    } else if n == gap.gate_index + 1 {
        j * kappa <= denominator * gap.sample_range
    } else {
        false
    }
}

/// Sampled penalty functional over actuator limits, the optional attitude
/// window, and moving ellipsoidal obstacles.
///
/// `start_time` anchors segment 0; obstacle centers are queried at absolute
/// sample times, so durations of earlier segments shift later samples.
pub fn penalty_cost(
    segments: &[Vec<PolynomialPiece>],
    start_time: f64,
    obstacles: &[EllipsoidObstacle],
    config: &PenaltyConfig,
) -> Result<TrajectoryCost> {
    config.validate()?;
    let mut cost = TrajectoryCost::zeros_like(segments)?;
    let kappa = config.samples_per_segment;
    let (f_mid, f_rad) = config.limits.thrust_mid_radius();
    let rate_sq = config.limits.body_rate_max * config.limits.body_rate_max;
    let mut seg_start = start_time;
    for (n, pieces) in segments.iter().enumerate() {
        let m = pieces.len();
        let degree = pieces[0].degree();
        let seg_t = pieces[0].duration() * m as f64;
        for j in 0..=kappa {
            let wbar = if j == 0 || j == kappa { 0.5 } else { 1.0 };
            let i = ((j * m) / kappa).min(m - 1);
            // exact sample offset into piece i, as a fraction of T_n
            let theta = (j * m - i * kappa) as f64 / ((kappa * m) as f64);
            let t_p = seg_t * theta;
            let piece = &pieces[i];
            let ders: Vec<Vector3<f64>> = (0..=4).map(|k| vec3(piece.eval(t_p, k))).collect();
            let t_abs = seg_start + seg_t * (j as f64 / kappa as f64);

            let mut acc = HingeAccumulator::new();
            let in_gap = config
                .gap
                .as_ref()
                .map_or(false, |gap| in_gap_window(gap, kappa, n, j, kappa));
            let w = &config.weights;
            let need_flat =
                w.thrust > 0.0 || w.body_rate > 0.0 || (in_gap && w.gap > 0.0);
            if need_flat {
                let fg = flat_map_grad(&ders[1], &ders[2], &ders[3], &config.drag)?;
                if w.thrust > 0.0 {
                    let df = fg.output.thrust - f_mid;
                    let g = df * df - f_rad * f_rad;
                    if let Some(mul) = acc.activate(g, w.thrust, seg_t, kappa as f64, wbar) {
                        let chain = mul * 2.0 * df;
                        acc.by_derivative[1] += fg.thrust.by_vel * chain;
                        acc.by_derivative[2] += fg.thrust.by_acc * chain;
                    }
                }
                if w.body_rate > 0.0 {
                    let rate = fg.output.body_rate;
                    let g = rate.norm_squared() - rate_sq;
                    if let Some(mul) = acc.activate(g, w.body_rate, seg_t, kappa as f64, wbar) {
                        let (cx, cy) = (mul * 2.0 * rate.x, mul * 2.0 * rate.y);
                        acc.by_derivative[1] += fg.rate_x.by_vel * cx + fg.rate_y.by_vel * cy;
                        acc.by_derivative[2] += fg.rate_x.by_acc * cx + fg.rate_y.by_acc * cy;
                        acc.by_derivative[3] += fg.rate_x.by_jerk * cx + fg.rate_y.by_jerk * cy;
                    }
                }
                if in_gap && w.gap > 0.0 {
                    let gap = config.gap.as_ref().expect("window implies gap");
                    let dz = fg.output.body_z() - gap.desired_axis;
                    let g = dz.norm_squared() - gap.tolerance;
                    if let Some(mul) = acc.activate(g, w.gap, seg_t, kappa as f64, wbar) {
                        let dz_chain = dz * (2.0 * mul);
                        acc.by_derivative[1] += fg.body_z.by_vel.transpose() * dz_chain;
                        acc.by_derivative[2] += fg.body_z.by_acc.transpose() * dz_chain;
                    }
                }
            }
            if w.obstacle > 0.0 {
                for obs in obstacles {
                    let d = ders[0] - obs.center(t_abs);
                    let hd = obs.shape() * d;
                    let g = config.obstacle_clearance - hd.dot(&d);
                    if let Some(mul) = acc.activate(g, w.obstacle, seg_t, kappa as f64, wbar) {
                        acc.by_derivative[0] -= hd * (2.0 * mul);
                        acc.by_abs_time += mul * 2.0 * hd.dot(&obs.center_velocity(t_abs));
                    }
                }
            }

            if acc.is_zero() {
                continue;
            }
            cost.value += acc.value;
            let mut block = cost.by_coeffs[n].rows_mut(i * (degree + 1), degree + 1);
            let mut by_t = acc.quad_time;
            for (k, grad) in acc.by_derivative.iter().enumerate() {
                if *grad != Vector3::zeros() {
                    let beta = basis_deriv(t_p, degree, k);
                    for (r, b) in beta.iter().enumerate() {
                        for c in 0..3 {
                            block[(r, c)] += b * grad[c];
                        }
                    }
                    // sample time scales with T_n: dt_p/dT_n = θ
                    by_t += grad.dot(&ders[k + 1]) * theta;
                }
            }
            by_t += acc.by_abs_time * (j as f64 / kappa as f64);
            cost.by_times[n] += by_t;
            // durations of earlier segments shift this sample's absolute time
            for k in 0..n {
                cost.by_times[k] += acc.by_abs_time;
            }
        }
        seg_start += seg_t;
    }
    Ok(cost)
}

/// Worst-case constraint residuals over a dense audit grid, in native units
/// (thrust m/s², rates rad/s) plus the raw constraint-function maxima.
#[derive(Debug, Clone, Copy)]
pub struct ResidualReport {
    /// max over samples of `thrust_min − f` (positive ⇒ violated).
    pub thrust_low: f64,
    /// max of `f − thrust_max`.
    pub thrust_high: f64,
    /// max of `‖ω‖ − body_rate_max`.
    pub body_rate: f64,
    /// max of `‖z_B − desired‖² − tolerance` inside the attitude window.
    pub gap: f64,
    /// max of `clearance − (p−c)ᵀH(p−c)` over obstacles.
    pub obstacle: f64,
    /// Largest raw hinge argument `max(G, 0)` across every constraint type.
    pub max_hinge: f64,
}

impl ResidualReport {
    fn empty() -> Self {
        Self {
            thrust_low: f64::NEG_INFINITY,
            thrust_high: f64::NEG_INFINITY,
            body_rate: f64::NEG_INFINITY,
            gap: f64::NEG_INFINITY,
            obstacle: f64::NEG_INFINITY,
            max_hinge: 0.0,
        }
    }
}

/// Evaluates the constraint set on `audit_samples` intervals per segment
/// (independent of the optimizer's sample count) and reports worst residuals.
pub fn residual_report(
    segments: &[Vec<PolynomialPiece>],
    start_time: f64,
    obstacles: &[EllipsoidObstacle],
    config: &PenaltyConfig,
    audit_samples: usize,
) -> Result<ResidualReport> {
    config.validate()?;
    if audit_samples == 0 {
        return Err(TrajError::InvalidConfig(
            "audit_samples must be at least 1".into(),
        ));
    }
    let mut rep = ResidualReport::empty();
    let (_, f_rad) = config.limits.thrust_mid_radius();
    let mut seg_start = start_time;
    for (n, pieces) in segments.iter().enumerate() {
        let m = pieces.len();
        let seg_t = pieces[0].duration() * m as f64;
        for j in 0..=audit_samples {
            let i = ((j * m) / audit_samples).min(m - 1);
            let theta = (j * m - i * audit_samples) as f64 / ((audit_samples * m) as f64);
            let t_p = seg_t * theta;
            let piece = &pieces[i];
            let pos = vec3(piece.eval(t_p, 0));
            let vel = vec3(piece.eval(t_p, 1));
            let acc = vec3(piece.eval(t_p, 2));
            let jerk = vec3(piece.eval(t_p, 3));
            let t_abs = seg_start + seg_t * (j as f64 / audit_samples as f64);

            match flat_map(&vel, &acc, &jerk, &config.drag) {
                Ok(out) => {
                    let f = out.thrust;
                    rep.thrust_low = rep.thrust_low.max(config.limits.thrust_min - f);
                    rep.thrust_high = rep.thrust_high.max(f - config.limits.thrust_max);
                    let wn = out.body_rate.norm();
                    rep.body_rate = rep.body_rate.max(wn - config.limits.body_rate_max);
                    let (f_mid, _) = config.limits.thrust_mid_radius();
                    let df = f - f_mid;
                    rep.max_hinge = rep.max_hinge.max(df * df - f_rad * f_rad);
                    rep.max_hinge = rep
                        .max_hinge
                        .max(wn * wn - config.limits.body_rate_max.powi(2));
                    if let Some(gap) = &config.gap {
                        if in_gap_window(gap, config.samples_per_segment, n, j, audit_samples) {
                            let g = (out.body_z() - gap.desired_axis).norm_squared()
                                - gap.tolerance;
                            rep.gap = rep.gap.max(g);
                            rep.max_hinge = rep.max_hinge.max(g);
                        }
                    }
                }
                Err(TrajError::DegenerateThrust { norm, .. }) => {
                    // free fall: thrust far below any floor, rates undefined
                    rep.thrust_low = rep.thrust_low.max(config.limits.thrust_min - norm);
                    rep.body_rate = f64::INFINITY;
                    rep.max_hinge = f64::INFINITY;
                }
                Err(e) => return Err(e),
            }
            for obs in obstacles {
                let g = config.obstacle_clearance - obs.quadratic_form(&pos, t_abs);
                rep.obstacle = rep.obstacle.max(g);
                rep.max_hinge = rep.max_hinge.max(g);
            }
        }
        seg_start += seg_t;
    }
    Ok(rep)
}
