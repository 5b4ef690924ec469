//! Receding-horizon minimum-time planning through moving gates.
//!
//! The decision variables are per-segment log-durations, free derivatives at
//! each gate crossing, free intermediate waypoints inside each segment, and —
//! in soft gate mode — the crossing positions themselves. In hard mode each
//! crossing position is *defined* as the gate center evaluated at the
//! crossing time, so gate motion feeds back into the duration gradients
//! through the chain rule rather than through a constraint.
//!
//! On top of the single-horizon optimizer sit three helpers: a closed-form
//! global reference through all gate centers, a multi-topology search that
//! seeds detours on both sides of the most intrusive obstacle, and a
//! replanner that slides the window along the track under a latency budget.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Vector3};

use crate::costs::{control_effort_cost, penalty_cost, residual_report, PenaltyConfig, ResidualReport};
use crate::error::{Result, TrajError};
use crate::lbfgs::{minimize, LbfgsConfig, StopReason};
use crate::poly::{PolynomialPiece, SegmentedTrajectory};
use crate::uniform::UniformMincoCache;
use crate::world::{EllipsoidObstacle, GateModel};

/// How gate crossings are enforced.
#[derive(Debug, Clone, Copy)]
pub enum GateMode {
    /// Crossing positions are pinned to the moving gate centers exactly.
    Hard,
    /// Crossing positions are free, pulled toward the centers by a quadratic
    /// penalty with this weight.
    Soft { weight: f64 },
}

#[derive(Debug, Clone)]
pub struct PlannerConfig {
    /// Smoothness order `s`; splines have degree `2s − 1`.
    pub order: usize,
    /// Pieces per segment (same for every segment of the window).
    pub pieces_per_segment: usize,
    pub penalty: PenaltyConfig,
    /// Weight on total time in the objective.
    pub time_weight: f64,
    pub gate_mode: GateMode,
    pub lbfgs: LbfgsConfig,
    /// Fixed derivatives (3×(s−1), orders 1..s−1) at the final crossing;
    /// `None` leaves them free.
    pub terminal_derivatives: Option<DMatrix<f64>>,
    /// Largest acceptable constraint-function value for a plan to count as
    /// feasible.
    pub feasibility_tolerance: f64,
    /// Extra lateral margin beyond an obstacle's largest semi-axis when
    /// seeding detour topologies.
    pub topology_clearance: f64,
    /// Total-duration guess for the initial candidate; derived from chord
    /// lengths at a nominal speed when absent.
    pub initial_total_time: Option<f64>,
    /// Candidate optimizations run on this many worker threads.
    pub threads: usize,
    /// Dense audit resolution (samples per segment) for residual reports.
    pub audit_samples: usize,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            order: 3,
            pieces_per_segment: 2,
            penalty: PenaltyConfig::default(),
            time_weight: 50.0,
            gate_mode: GateMode::Hard,
            lbfgs: LbfgsConfig::default(),
            terminal_derivatives: None,
            feasibility_tolerance: 1e-4,
            topology_clearance: 0.3,
            initial_total_time: None,
            threads: 1,
            audit_samples: 128,
        }
    }
}

/// Speed used to turn chord lengths into duration guesses when the caller
/// gives no total time.
const SEED_SPEED: f64 = 2.0;
/// Durations are kept above this floor in seeds and warm starts (s).
const MIN_SEGMENT_TIME: f64 = 1e-2;
/// Per-iteration ‖Δx‖ cap while optimizing detour candidates, small enough
/// that a single accepted step cannot clear the ridge between two local
/// basins of a moving-gate landscape.
const DETOUR_STEP_CAP: f64 = 0.05;

/// Shape bookkeeping for packing decision variables into a flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VariableLayout {
    pub segments: usize,
    pub order: usize,
    pub pieces: usize,
    pub soft: bool,
    pub terminal_free: bool,
}

impl VariableLayout {
    pub fn dim(&self) -> usize {
        let deriv_sets = if self.terminal_free {
            self.segments
        } else {
            self.segments - 1
        };
        self.segments
            + deriv_sets * 3 * (self.order - 1)
            + self.segments * 3 * (self.pieces - 1)
            + if self.soft { 3 * self.segments } else { 0 }
    }
}

/// One point in the planner's search space (also used for its gradients,
/// which share every shape).
#[derive(Debug, Clone)]
pub struct DecisionVariables {
    /// Log of each segment duration.
    pub log_times: DVector<f64>,
    /// Derivatives of orders `1..s−1` (3×(s−1)) at each crossing; the last
    /// entry is the terminal crossing and is ignored when the configuration
    /// fixes terminal derivatives.
    pub junction_derivs: Vec<DMatrix<f64>>,
    /// Free interior waypoints per segment, 3×(pieces−1).
    pub waypoints: Vec<DMatrix<f64>>,
    /// Crossing positions, present only in soft gate mode.
    pub free_positions: Option<Vec<Vector3<f64>>>,
}

impl DecisionVariables {
    pub fn zeros(layout: &VariableLayout) -> Self {
        Self {
            log_times: DVector::zeros(layout.segments),
            junction_derivs: vec![DMatrix::zeros(3, layout.order - 1); layout.segments],
            waypoints: vec![DMatrix::zeros(3, layout.pieces - 1); layout.segments],
            free_positions: layout
                .soft
                .then(|| vec![Vector3::zeros(); layout.segments]),
        }
    }

    pub fn pack(&self, layout: &VariableLayout) -> DVector<f64> {
        let mut out = Vec::with_capacity(layout.dim());
        out.extend(self.log_times.iter());
        let deriv_sets = if layout.terminal_free {
            layout.segments
        } else {
            layout.segments - 1
        };
        for d in &self.junction_derivs[..deriv_sets] {
            out.extend(d.iter());
        }
        for w in &self.waypoints {
            out.extend(w.iter());
        }
        if let Some(ps) = &self.free_positions {
            for p in ps {
                out.extend(p.iter());
            }
        }
        DVector::from_vec(out)
    }

    /// Overwrites the packed fields from `x`, leaving fixed fields (e.g.
    /// pinned terminal derivatives) untouched.
    pub fn unpack_into(&mut self, layout: &VariableLayout, x: &DVector<f64>) {
        debug_assert_eq!(x.len(), layout.dim());
        let mut at = 0usize;
        let mut take = |len: usize| {
            let slice = x.as_slice()[at..at + len].to_vec();
            at += len;
            slice
        };
        self.log_times
            .copy_from_slice(&take(layout.segments));
        let deriv_sets = if layout.terminal_free {
            layout.segments
        } else {
            layout.segments - 1
        };
        for d in self.junction_derivs[..deriv_sets].iter_mut() {
            let vals = take(3 * (layout.order - 1));
            d.copy_from_slice(&vals);
        }
        for w in self.waypoints.iter_mut() {
            let len = 3 * (layout.pieces - 1);
            if len > 0 {
                w.copy_from_slice(&take(len));
            }
        }
        if let Some(ps) = &mut self.free_positions {
            for p in ps.iter_mut() {
                p.copy_from_slice(&take(3));
            }
        }
    }

    pub fn durations(&self) -> Vec<f64> {
        self.log_times.iter().map(|t| t.exp()).collect()
    }
}

/// Shared factorization store, keyed by (order, pieces).
#[derive(Default)]
pub struct CachePool {
    map: HashMap<(usize, usize), Arc<UniformMincoCache>>,
}

impl CachePool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&mut self, order: usize, pieces: usize) -> Result<Arc<UniformMincoCache>> {
        if let Some(c) = self.map.get(&(order, pieces)) {
            return Ok(c.clone());
        }
        let cache = Arc::new(UniformMincoCache::new(order, pieces)?);
        self.map.insert((order, pieces), cache.clone());
        Ok(cache)
    }
}

/// Outcome of one horizon optimization.
#[derive(Debug, Clone)]
pub struct PlanResult {
    pub trajectory: SegmentedTrajectory,
    pub variables: DecisionVariables,
    /// Absolute times at which each gate of the window is crossed.
    pub crossing_times: Vec<f64>,
    pub total_time: f64,
    pub cost: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub stop: StopReason,
    pub residuals: ResidualReport,
    /// Distance between each crossing and its gate center at crossing time.
    pub gate_errors: Vec<f64>,
    /// True when this is a previous plan served because a fresh one missed
    /// its deadline or failed.
    pub stale: bool,
}

impl PlanResult {
    pub fn is_feasible(&self, tolerance: f64) -> bool {
        self.residuals.max_hinge <= tolerance
    }
}

pub struct Planner {
    start_state: DMatrix<f64>,
    start_time: f64,
    gates: Vec<GateModel>,
    obstacles: Vec<EllipsoidObstacle>,
    config: PlannerConfig,
    cache: Arc<UniformMincoCache>,
}

struct ForwardPass {
    times: Vec<f64>,
    crossings: Vec<f64>,
    positions: Vec<Vector3<f64>>,
    boundaries: Vec<(DMatrix<f64>, DMatrix<f64>)>,
    coeffs: Vec<DMatrix<f64>>,
    segments: Vec<Vec<PolynomialPiece>>,
}

impl Planner {
    pub fn new(
        start_state: DMatrix<f64>,
        start_time: f64,
        gates: Vec<GateModel>,
        obstacles: Vec<EllipsoidObstacle>,
        config: PlannerConfig,
        pool: &mut CachePool,
    ) -> Result<Self> {
        if gates.is_empty() {
            return Err(TrajError::InvalidConfig(
                "planner needs at least one gate".into(),
            ));
        }
        if config.order < 2 {
            return Err(TrajError::InvalidConfig(format!(
                "smoothness order must be at least 2, got {}",
                config.order
            )));
        }
        if start_state.nrows() != 3 || start_state.ncols() != config.order {
            return Err(TrajError::DimensionMismatch {
                what: "start state shape",
                expected: 3 * config.order,
                actual: start_state.nrows() * start_state.ncols(),
            });
        }
        if let Some(td) = &config.terminal_derivatives {
            if td.nrows() != 3 || td.ncols() != config.order - 1 {
                return Err(TrajError::DimensionMismatch {
                    what: "terminal derivative shape",
                    expected: 3 * (config.order - 1),
                    actual: td.nrows() * td.ncols(),
                });
            }
        }
        config.penalty.validate()?;
        let cache = pool.get(config.order, config.pieces_per_segment)?;
        Ok(Self {
            start_state,
            start_time,
            gates,
            obstacles,
            config,
            cache,
        })
    }

    pub fn layout(&self) -> VariableLayout {
        VariableLayout {
            segments: self.gates.len(),
            order: self.config.order,
            pieces: self.config.pieces_per_segment,
            soft: matches!(self.config.gate_mode, GateMode::Soft { .. }),
            terminal_free: self.config.terminal_derivatives.is_none(),
        }
    }

    pub fn config(&self) -> &PlannerConfig {
        &self.config
    }

    pub fn gates(&self) -> &[GateModel] {
        &self.gates
    }

    fn soft_weight(&self) -> Option<f64> {
        match self.config.gate_mode {
            GateMode::Hard => None,
            GateMode::Soft { weight } => Some(weight),
        }
    }

    /// Derivative block (orders 1..s−1) used at the end of segment `n`.
    fn end_derivs<'v>(&'v self, vars: &'v DecisionVariables, n: usize) -> &'v DMatrix<f64> {
        if n + 1 == self.gates.len() {
            self.config
                .terminal_derivatives
                .as_ref()
                .unwrap_or(&vars.junction_derivs[n])
        } else {
            &vars.junction_derivs[n]
        }
    }

    fn forward(&self, vars: &DecisionVariables) -> Result<ForwardPass> {
        let n_seg = self.gates.len();
        let s = self.config.order;
        let times = vars.durations();
        for t in &times {
            if !(t.is_finite() && *t > 0.0) {
                return Err(TrajError::InvalidDuration { duration: *t });
            }
        }
        let mut crossings = Vec::with_capacity(n_seg);
        let mut acc = self.start_time;
        for t in &times {
            acc += t;
            crossings.push(acc);
        }
        let positions: Vec<Vector3<f64>> = match &vars.free_positions {
            Some(ps) => ps.clone(),
            None => self
                .gates
                .iter()
                .zip(&crossings)
                .map(|(g, t)| g.center(*t))
                .collect(),
        };

        let mut boundaries = Vec::with_capacity(n_seg);
        let mut coeffs = Vec::with_capacity(n_seg);
        let mut segments = Vec::with_capacity(n_seg);
        for n in 0..n_seg {
            let bs = if n == 0 {
                self.start_state.clone()
            } else {
                boundary_matrix(&positions[n - 1], &vars.junction_derivs[n - 1], s)
            };
            let be = boundary_matrix(&positions[n], self.end_derivs(vars, n), s);
            let c = self.cache.solve(times[n], &bs, &be, &vars.waypoints[n])?;
            segments.push(self.cache.segment_pieces(&c, times[n])?);
            coeffs.push(c);
            boundaries.push((bs, be));
        }
        Ok(ForwardPass {
            times,
            crossings,
            positions,
            boundaries,
            coeffs,
            segments,
        })
    }

    /// Objective value and gradient, in decision-variable shape.
    pub fn evaluate(&self, vars: &DecisionVariables) -> Result<(f64, DecisionVariables)> {
        let n_seg = self.gates.len();
        let s = self.config.order;
        let fp = self.forward(vars)?;

        let mut cost = control_effort_cost(&fp.segments, self.config.time_weight)?;
        cost.merge(&penalty_cost(
            &fp.segments,
            self.start_time,
            &self.obstacles,
            &self.config.penalty,
        )?);

        // soft-mode pull toward the moving centers
        let mut soft_errors: Vec<Vector3<f64>> = Vec::new();
        if let Some(weight) = self.soft_weight() {
            for n in 0..n_seg {
                let e = fp.positions[n] - self.gates[n].center(fp.crossings[n]);
                cost.value += weight * e.norm_squared();
                soft_errors.push(e);
            }
        }

        let mut grads = DecisionVariables::zeros(&self.layout());
        let mut d_time = vec![0.0; n_seg];
        let mut d_position = vec![Vector3::zeros(); n_seg];
        let terminal_free = self.config.terminal_derivatives.is_none();

        for n in 0..n_seg {
            let (bs, be) = &fp.boundaries[n];
            let g = self.cache.backprop(
                fp.times[n],
                bs,
                be,
                &fp.coeffs[n],
                &cost.by_coeffs[n],
                cost.by_times[n],
            )?;
            d_time[n] += g.by_time;
            if n > 0 {
                d_position[n - 1] += vec3(g.by_boundary_start.column(0));
                grads.junction_derivs[n - 1] += g.by_boundary_start.columns(1, s - 1);
            }
            d_position[n] += vec3(g.by_boundary_end.column(0));
            if n + 1 < n_seg || terminal_free {
                grads.junction_derivs[n] += g.by_boundary_end.columns(1, s - 1);
            }
            grads.waypoints[n] = g.by_waypoints;
        }

        // crossing positions: either functions of time (hard) or variables
        // pulled by the soft penalty; both couple gate motion to durations
        if let Some(weight) = self.soft_weight() {
            let out_positions = grads.free_positions.as_mut().expect("soft layout");
            for n in 0..n_seg {
                out_positions[n] = d_position[n] + soft_errors[n] * (2.0 * weight);
                let gdot = self.gates[n].center_velocity(fp.crossings[n]);
                let dt = -2.0 * weight * soft_errors[n].dot(&gdot);
                for item in d_time.iter_mut().take(n + 1) {
                    *item += dt;
                }
            }
        } else {
            for n in 0..n_seg {
                let gdot = self.gates[n].center_velocity(fp.crossings[n]);
                let dt = d_position[n].dot(&gdot);
                for item in d_time.iter_mut().take(n + 1) {
                    *item += dt;
                }
            }
        }

        for n in 0..n_seg {
            grads.log_times[n] = d_time[n] * fp.times[n];
        }
        Ok((cost.value, grads))
    }

    pub fn build_trajectory(&self, vars: &DecisionVariables) -> Result<SegmentedTrajectory> {
        let fp = self.forward(vars)?;
        SegmentedTrajectory::new(self.start_time, fp.segments)
    }

    /// Straight-chord seed: durations from chord lengths, junction velocities
    /// from central differences, waypoints on the chords. Crossing-time
    /// estimates are refined once so moving gates are met where they will be,
    /// not where they started.
    pub fn default_initial(&self) -> Result<DecisionVariables> {
        let n_seg = self.gates.len();
        let start_pos = vec3(self.start_state.column(0));

        let mut positions: Vec<Vector3<f64>> = self
            .gates
            .iter()
            .map(|g| g.center(self.start_time))
            .collect();
        let mut times = vec![MIN_SEGMENT_TIME; n_seg];
        for _pass in 0..2 {
            let mut chords = Vec::with_capacity(n_seg);
            let mut prev = start_pos;
            for p in &positions {
                chords.push((p - prev).norm().max(1e-3));
                prev = *p;
            }
            let total_chord: f64 = chords.iter().sum();
            let total_time = self
                .config
                .initial_total_time
                .unwrap_or(total_chord / SEED_SPEED);
            for n in 0..n_seg {
                times[n] = (total_time * chords[n] / total_chord).max(MIN_SEGMENT_TIME);
            }
            // re-estimate where each moving gate will actually be
            let mut acc = self.start_time;
            for n in 0..n_seg {
                acc += times[n];
                positions[n] = self.gates[n].center(acc);
            }
        }

        let layout = self.layout();
        let mut vars = DecisionVariables::zeros(&layout);
        for n in 0..n_seg {
            vars.log_times[n] = times[n].ln();
        }
        // chord-based crossing velocities (higher orders stay zero)
        for n in 0..n_seg {
            let before = if n == 0 { start_pos } else { positions[n - 1] };
            let (after, span) = if n + 1 < n_seg {
                (positions[n + 1], times[n] + times[n + 1])
            } else {
                (positions[n], times[n])
            };
            let vel = (after - before) / span.max(MIN_SEGMENT_TIME);
            vars.junction_derivs[n].column_mut(0).copy_from(&vel);
        }
        let m = self.config.pieces_per_segment;
        for n in 0..n_seg {
            let from = if n == 0 { start_pos } else { positions[n - 1] };
            for i in 1..m {
                let alpha = i as f64 / m as f64;
                let p = from + (positions[n] - from) * alpha;
                vars.waypoints[n].column_mut(i - 1).copy_from(&p);
            }
        }
        if let Some(ps) = &mut vars.free_positions {
            ps.copy_from_slice(&positions);
        }
        Ok(vars)
    }

    /// Warm start from a previous trajectory: durations from its crossing
    /// times, derivatives and waypoints read off the curve itself. Gates
    /// beyond the trajectory's reach fall back to chord estimates.
    pub fn initial_from_trajectory(
        &self,
        traj: &SegmentedTrajectory,
        crossing_times: &[f64],
    ) -> Result<DecisionVariables> {
        let n_seg = self.gates.len();
        let s = self.config.order;
        let m = self.config.pieces_per_segment;
        let layout = self.layout();
        let mut vars = DecisionVariables::zeros(&layout);
        let end = traj.end_time();

        let mut prev_t = self.start_time;
        let mut prev_pos = vec3(self.start_state.column(0));
        for n in 0..n_seg {
            let known = crossing_times.get(n).copied().filter(|t| *t <= end + 1e-9);
            let (t_n, p_n) = match known {
                Some(t) => {
                    let t = t.max(prev_t + MIN_SEGMENT_TIME);
                    (t, traj.eval3(t.min(end), 0)?)
                }
                None => {
                    // slid-in gate: extend along the chord at seed speed
                    let target = self.gates[n].center(prev_t);
                    let dt = ((target - prev_pos).norm() / SEED_SPEED).max(MIN_SEGMENT_TIME);
                    (prev_t + dt, self.gates[n].center(prev_t + dt))
                }
            };
            vars.log_times[n] = (t_n - prev_t).ln();
            for k in 1..s {
                let d = if t_n <= end {
                    traj.eval3(t_n, k)?
                } else if k == 1 {
                    (p_n - prev_pos) / (t_n - prev_t)
                } else {
                    Vector3::zeros()
                };
                vars.junction_derivs[n].column_mut(k - 1).copy_from(&d);
            }
            for i in 1..m {
                let alpha = i as f64 / m as f64;
                let t = prev_t + (t_n - prev_t) * alpha;
                let p = if t <= end {
                    traj.eval3(t, 0)?
                } else {
                    prev_pos + (p_n - prev_pos) * alpha
                };
                vars.waypoints[n].column_mut(i - 1).copy_from(&p);
            }
            if let Some(ps) = &mut vars.free_positions {
                ps[n] = p_n;
            }
            prev_t = t_n;
            prev_pos = p_n;
        }
        Ok(vars)
    }

    /// Runs the solver from `initial` and audits the result.
    pub fn optimize(&self, initial: DecisionVariables) -> Result<PlanResult> {
        self.optimize_with(initial, &self.config.lbfgs)
    }

    fn optimize_with(
        &self,
        initial: DecisionVariables,
        lbfgs: &LbfgsConfig,
    ) -> Result<PlanResult> {
        let layout = self.layout();
        let x0 = initial.pack(&layout);
        let mut work = initial.clone();
        let objective = |x: &DVector<f64>, g: &mut DVector<f64>| -> Result<f64> {
            work.unpack_into(&layout, x);
            let (value, grads) = self.evaluate(&work)?;
            g.copy_from(&grads.pack(&layout));
            Ok(value)
        };
        let (x_best, report) = minimize(objective, x0, lbfgs)?;
        let mut best = initial;
        best.unpack_into(&layout, &x_best);
        self.finish(best, report.cost, report.iterations, report.evaluations, report.reason)
    }

    fn finish(
        &self,
        vars: DecisionVariables,
        cost: f64,
        iterations: usize,
        evaluations: usize,
        stop: StopReason,
    ) -> Result<PlanResult> {
        let fp = self.forward(&vars)?;
        let residuals = residual_report(
            &fp.segments,
            self.start_time,
            &self.obstacles,
            &self.config.penalty,
            self.config.audit_samples,
        )?;
        let gate_errors = (0..self.gates.len())
            .map(|n| (fp.positions[n] - self.gates[n].center(fp.crossings[n])).norm())
            .collect();
        let total_time = fp.times.iter().sum();
        let trajectory = SegmentedTrajectory::new(self.start_time, fp.segments)?;
        Ok(PlanResult {
            trajectory,
            variables: vars,
            crossing_times: fp.crossings,
            total_time,
            cost,
            iterations,
            evaluations,
            stop,
            residuals,
            gate_errors,
            stale: false,
        })
    }

    /// Optimizes the seed plus lateral detours on both sides of the most
    /// intrusive obstacle, then keeps the fastest feasible candidate.
    pub fn plan_multi_topology(&self) -> Result<TopologyOutcome> {
        let seed = self.default_initial()?;
        let mut candidates = vec![(String::from("seed"), seed.clone())];
        if let Some(block) = self.most_intrusive_obstacle(&seed)? {
            candidates.extend(self.detour_candidates(&seed, &block));
        }

        if std::env::var_os("RACETRAJ_DEBUG_CANDIDATES").is_some() {
            for (label, vars) in &candidates {
                let (c, _) = self.evaluate(vars)?;
                eprintln!(
                    "[debug] {label}: initial cost {c:.3}, durations {:?}",
                    vars.durations()
                );
            }
        }
        let results = self.optimize_candidates(candidates)?;
        let mut reports = Vec::with_capacity(results.len());
        let mut plans = Vec::with_capacity(results.len());
        for (label, outcome) in results {
            match outcome {
                Ok(plan) => {
                    if std::env::var_os("RACETRAJ_DEBUG_CANDIDATES").is_some() {
                        let traj = &plan.trajectory;
                        for (oi, obs) in self.obstacles.iter().enumerate() {
                            let mut tmin = traj.start_time();
                            let mut qmin = f64::INFINITY;
                            for j in 0..=512 {
                                let t = traj.start_time()
                                    + traj.total_duration() * j as f64 / 512.0;
                                let q = obs.quadratic_form(&traj.eval3(t, 0)?, t);
                                if q < qmin {
                                    qmin = q;
                                    tmin = t;
                                }
                            }
                            let p = traj.eval3(tmin, 0)?;
                            let c = obs.center(tmin);
                            let cx = obs.motion.nominal().x;
                            let mut tx = traj.start_time();
                            let mut dxmin = f64::INFINITY;
                            for j in 0..=512 {
                                let t = traj.start_time()
                                    + traj.total_duration() * j as f64 / 512.0;
                                let dx = (traj.eval3(t, 0)?.x - cx).abs();
                                if dx < dxmin {
                                    dxmin = dx;
                                    tx = t;
                                }
                            }
                            let py = traj.eval3(tx, 0)?.y;
                            eprintln!(
                                "[debug] {label}: T {:.3}, catches {:?}, obs{oi} min qform {qmin:.3} at t {tmin:.3} path y {:.3} obs y {:.3}; corridor t {tx:.3} path y {py:.3} obs y {:.3}",
                                plan.total_time, plan.crossing_times, p.y, c.y, obs.center(tx).y
                            );
                        }
                    }
                    // Seeds that fall into the basin another seed already
                    // reached converge to the same optimum; keep one copy.
                    let duplicate = plans.iter().flatten().any(|kept: &PlanResult| {
                        let dt = (kept.total_time - plan.total_time).abs();
                        let dc = (kept.cost - plan.cost).abs();
                        dt <= 5e-3 * kept.total_time.max(1.0)
                            && dc <= 5e-3 * kept.cost.abs().max(1.0)
                    });
                    if duplicate {
                        continue;
                    }
                    reports.push(CandidateReport {
                        label,
                        total_time: plan.total_time,
                        cost: plan.cost,
                        max_hinge: plan.residuals.max_hinge,
                        arc_length: plan.trajectory.arc_length(512)?,
                        feasible: plan.is_feasible(self.config.feasibility_tolerance),
                    });
                    plans.push(Some(plan));
                }
                Err(err) => {
                    reports.push(CandidateReport {
                        label: format!("{label} (failed: {err})"),
                        total_time: f64::INFINITY,
                        cost: f64::INFINITY,
                        max_hinge: f64::INFINITY,
                        arc_length: f64::NAN,
                        feasible: false,
                    });
                    plans.push(None);
                }
            }
        }

        match select_fastest_feasible(&reports) {
            Some(idx) => Ok(TopologyOutcome {
                selected: plans[idx].take().expect("feasible implies a plan"),
                selected_index: idx,
                candidates: reports,
            }),
            None => {
                let summary = reports
                    .iter()
                    .map(|r| {
                        format!(
                            "{}: time {:.3}s, worst constraint {:.3e}",
                            r.label, r.total_time, r.max_hinge
                        )
                    })
                    .collect::<Vec<_>>()
                    .join("; ");
                Err(TrajError::NoFeasibleCandidate { summary })
            }
        }
    }

    fn optimize_candidates(
        &self,
        candidates: Vec<(String, DecisionVariables)>,
    ) -> Result<Vec<(String, Result<PlanResult>)>> {
        // Detours are asked to settle in the basin they were aimed at, so
        // their iterations are kept short enough not to hop the cost ridges
        // separating neighbouring basins. The seed keeps the caller's cap.
        let mut capped = self.config.lbfgs.clone();
        capped.max_step = capped.max_step.min(DETOUR_STEP_CAP);
        let pick = |label: &str| -> &LbfgsConfig {
            if label == "seed" {
                &self.config.lbfgs
            } else {
                &capped
            }
        };
        if self.config.threads <= 1 || candidates.len() <= 1 {
            return Ok(candidates
                .into_iter()
                .map(|(label, vars)| {
                    let result = self.optimize_with(vars, pick(&label));
                    (label, result)
                })
                .collect());
        }
        let results = std::thread::scope(|scope| {
            let handles: Vec<_> = candidates
                .into_iter()
                .map(|(label, vars)| {
                    let config = pick(&label).clone();
                    let handle = scope.spawn(move || self.optimize_with(vars, &config));
                    (label, handle)
                })
                .collect();
            handles
                .into_iter()
                .map(|(label, h)| (label, h.join().expect("candidate worker panicked")))
                .collect::<Vec<_>>()
        });
        Ok(results)
    }

    /// Finds the obstacle the seed path cuts deepest into, with where along
    /// the path the worst intrusion happens.
    fn most_intrusive_obstacle(&self, seed: &DecisionVariables) -> Result<Option<Intrusion>> {
        if self.obstacles.is_empty() || self.config.pieces_per_segment < 2 {
            return Ok(None);
        }
        let traj = self.build_trajectory(seed)?;
        let samples = 64 * traj.segment_count();
        let mut worst: Option<Intrusion> = None;
        for j in 0..=samples {
            let t = traj.start_time() + traj.total_duration() * j as f64 / samples as f64;
            let t = t.min(traj.end_time());
            let p = traj.eval3(t, 0)?;
            for (idx, obs) in self.obstacles.iter().enumerate() {
                let q = obs.quadratic_form(&p, t);
                if worst.as_ref().map_or(true, |w| q < w.quadratic_form) {
                    worst = Some(Intrusion {
                        obstacle: idx,
                        time: t,
                        quadratic_form: q,
                    });
                }
            }
        }
        // Even a shallow approach is worth routing around: with moving
        // obstacles the optimizer may pull the path into the sweep, so the
        // closest approach anchors detours whenever an obstacle exists.
        Ok(worst)
    }

    /// Four candidates displacing the waypoint nearest the intrusion to
    /// either side of the obstacle along two lateral axes.
    fn detour_candidates(
        &self,
        seed: &DecisionVariables,
        block: &Intrusion,
    ) -> Vec<(String, DecisionVariables)> {
        let obs = &self.obstacles[block.obstacle];
        let radius = obs.max_semi_axis() * self.config.penalty.obstacle_clearance.sqrt()
            + self.config.topology_clearance;

        // segment containing the intrusion, from seed crossing times
        let times = seed.durations();
        let mut seg = 0;
        let mut acc = self.start_time;
        for (n, t) in times.iter().enumerate() {
            if block.time <= acc + t || n == times.len() - 1 {
                seg = n;
                break;
            }
            acc += t;
        }
        let frac = ((block.time - acc) / times[seg]).clamp(0.0, 1.0);
        let m = self.config.pieces_per_segment;
        let wp_idx = ((frac * m as f64).round() as usize).clamp(1, m - 1) - 1;

        // lateral frame perpendicular to the local path tangent
        let tangent = {
            let from = if seg == 0 {
                vec3(self.start_state.column(0))
            } else if let Some(ps) = &seed.free_positions {
                ps[seg - 1]
            } else {
                self.gates[seg - 1].center(acc)
            };
            let to = if let Some(ps) = &seed.free_positions {
                ps[seg]
            } else {
                self.gates[seg].center(acc + times[seg])
            };
            let chord = to - from;
            if chord.norm() < 1e-9 {
                Vector3::x()
            } else {
                chord.normalize()
            }
        };
        let mut side = tangent.cross(&Vector3::z());
        if side.norm() < 1e-6 {
            side = tangent.cross(&Vector3::y());
        }
        let side = side.normalize();
        let up = tangent.cross(&side).normalize();

        // The bend must also be flyable: stretch the knot times until the
        // acceleration the kink asks for fits comfortably inside the thrust
        // envelope, else the penalty on the raw candidate dwarfs everything.
        let piece_time = times[seg] / m as f64;
        let lift = self.config.penalty.limits.thrust_max - self.config.penalty.drag.gravity;
        let accel_budget = 0.5 * lift.max(1.0);
        let needed = (8.0 * radius / accel_budget).sqrt();
        let stretch = (needed / piece_time).max(1.0).ln();

        // A periodic obstacle clears the corridor once per half cycle, at
        // alternating extremes of its sweep. Aim each candidate's initial
        // pass at a different upcoming opening by delaying only the segments
        // upstream of the intrusion; inflating the rest would just be slack
        // for the optimizer to squeeze back out. The sideways pair takes the
        // openings on its own side and the vertical pair, which can settle
        // onto either side, probes the two after those.
        let period = obs.motion.period().unwrap_or(0.0);
        let upstream = seg.max(1);
        let reach: f64 = times.iter().take(upstream).sum::<f64>() * stretch.exp();
        let pass = block.time * stretch.exp();
        let opening = obs.motion.next_extreme(pass).unwrap_or(pass);
        let waits = [1.0, 0.5, 2.0, 1.5];

        [side, -side, up, -up]
            .into_iter()
            .zip(waits)
            .enumerate()
            .map(|(k, (dir, wait))| {
                let mut vars = seed.clone();
                let base = vars.waypoints[seg].column(wp_idx).clone_owned();
                vars.waypoints[seg]
                    .column_mut(wp_idx)
                    .copy_from(&(base + dir * radius));
                vars.log_times.add_scalar_mut(stretch);
                let delay = opening + wait * period - pass;
                let spread = (1.0 + delay.max(0.0) / reach).ln();
                for n in 0..upstream {
                    vars.log_times[n] += spread;
                }
                (format!("detour-{k}"), vars)
            })
            .collect()
    }
}

struct Intrusion {
    obstacle: usize,
    time: f64,
    quadratic_form: f64,
}

/// Per-candidate summary from a multi-topology search.
#[derive(Debug, Clone)]
pub struct CandidateReport {
    pub label: String,
    pub total_time: f64,
    pub cost: f64,
    pub max_hinge: f64,
    pub arc_length: f64,
    pub feasible: bool,
}

#[derive(Debug)]
pub struct TopologyOutcome {
    pub selected: PlanResult,
    pub selected_index: usize,
    pub candidates: Vec<CandidateReport>,
}

/// Index of the fastest feasible candidate; independent of ordering.
pub fn select_fastest_feasible(candidates: &[CandidateReport]) -> Option<usize> {
    candidates
        .iter()
        .enumerate()
        .filter(|(_, c)| c.feasible && c.total_time.is_finite())
        .min_by(|(_, a), (_, b)| a.total_time.total_cmp(&b.total_time))
        .map(|(idx, _)| idx)
}

fn vec3(view: nalgebra::DVectorView<'_, f64>) -> Vector3<f64> {
    Vector3::new(view[0], view[1], view[2])
}

fn boundary_matrix(position: &Vector3<f64>, derivs: &DMatrix<f64>, order: usize) -> DMatrix<f64> {
    let mut b = DMatrix::zeros(3, order);
    b.column_mut(0).copy_from(position);
    b.columns_mut(1, order - 1).copy_from(derivs);
    b
}

/// Closed-form reference through every gate's nominal center: one segment
/// whose interior waypoints are the centers, flown in `total_time`.
pub fn plan_global(
    start_state: &DMatrix<f64>,
    end_state: &DMatrix<f64>,
    start_time: f64,
    total_time: f64,
    gates: &[GateModel],
    order: usize,
    pool: &mut CachePool,
) -> Result<SegmentedTrajectory> {
    let pieces = gates.len() + 1;
    let cache = pool.get(order, pieces)?;
    let mut waypoints = DMatrix::zeros(3, gates.len());
    for (i, gate) in gates.iter().enumerate() {
        waypoints
            .column_mut(i)
            .copy_from(&gate.motion.nominal());
    }
    let coeffs = cache.solve(total_time, start_state, end_state, &waypoints)?;
    let segment = cache.segment_pieces(&coeffs, total_time)?;
    SegmentedTrajectory::new(start_time, vec![segment])
}

/// Receding-horizon wrapper: keeps the last plan, slides the gate window as
/// crossings pass, and serves the previous trajectory (flagged stale) when a
/// fresh solve fails.
pub struct Replanner {
    track: Vec<GateModel>,
    obstacles: Vec<EllipsoidObstacle>,
    config: PlannerConfig,
    horizon: usize,
    next_gate: usize,
    current: Option<PlanResult>,
    pool: CachePool,
}

/// One replanning step's outcome.
#[derive(Debug)]
pub enum ReplanStep {
    Plan(Box<PlanResult>),
    /// Every gate on the track has been crossed.
    Finished,
}

impl Replanner {
    pub fn new(
        track: Vec<GateModel>,
        obstacles: Vec<EllipsoidObstacle>,
        config: PlannerConfig,
        horizon: usize,
    ) -> Result<Self> {
        if horizon == 0 {
            return Err(TrajError::InvalidConfig("horizon must be at least 1".into()));
        }
        Ok(Self {
            track,
            obstacles,
            config,
            horizon,
            next_gate: 0,
            current: None,
            pool: CachePool::new(),
        })
    }

    pub fn current_plan(&self) -> Option<&PlanResult> {
        self.current.as_ref()
    }

    pub fn gates_remaining(&self) -> usize {
        self.track.len() - self.next_gate
    }

    /// Advances the window past crossings that are behind `now`, then
    /// replans from `state` (3×s derivative matrix at time `now`).
    pub fn step(&mut self, now: f64, state: &DMatrix<f64>) -> Result<ReplanStep> {
        if let Some(plan) = &self.current {
            let mut crossed = 0;
            for t in &plan.crossing_times {
                if *t <= now {
                    crossed += 1;
                }
            }
            self.next_gate = (self.next_gate + crossed).min(self.track.len());
        }
        if self.next_gate >= self.track.len() {
            return Ok(ReplanStep::Finished);
        }
        let window_end = (self.next_gate + self.horizon).min(self.track.len());
        let window = self.track[self.next_gate..window_end].to_vec();

        let planner = Planner::new(
            state.clone(),
            now,
            window,
            self.obstacles.clone(),
            self.config.clone(),
            &mut self.pool,
        )?;
        let initial = match &self.current {
            Some(plan) => {
                // crossing times of still-pending gates from the last plan
                let pending: Vec<f64> = plan
                    .crossing_times
                    .iter()
                    .copied()
                    .filter(|t| *t > now)
                    .collect();
                planner.initial_from_trajectory(&plan.trajectory, &pending)?
            }
            None => self.global_seed(&planner, now, state)?,
        };
        match planner.optimize(initial) {
            Ok(result) => {
                self.current = Some(result.clone());
                Ok(ReplanStep::Plan(Box::new(result)))
            }
            Err(err) => match &self.current {
                Some(previous) => {
                    let mut stale = previous.clone();
                    stale.stale = true;
                    Ok(ReplanStep::Plan(Box::new(stale)))
                }
                None => Err(err),
            },
        }
    }

    /// First-plan seed: thread every remaining track gate with one smooth
    /// reference curve and read the window's variables off it. Richer than
    /// the chord seed because it already bends toward the gates beyond the
    /// window.
    fn global_seed(
        &mut self,
        planner: &Planner,
        now: f64,
        state: &DMatrix<f64>,
    ) -> Result<DecisionVariables> {
        let remaining = &self.track[self.next_gate..];
        let mut end_state = DMatrix::zeros(3, self.config.order);
        let last = remaining
            .last()
            .expect("window checked nonempty before seeding");
        end_state.column_mut(0).copy_from(&last.motion.nominal());

        let total_time = self.config.initial_total_time.unwrap_or_else(|| {
            let mut prev = vec3(state.column(0));
            let mut chord = 0.0;
            for g in remaining {
                let c = g.motion.nominal();
                chord += (c - prev).norm();
                prev = c;
            }
            (chord / SEED_SPEED).max(MIN_SEGMENT_TIME)
        });
        let global = plan_global(
            state,
            &end_state,
            now,
            total_time,
            remaining,
            self.config.order,
            &mut self.pool,
        )?;
        let crossings: Vec<f64> = (0..planner.gates().len())
            .map(|i| now + total_time * (i + 1) as f64 / (remaining.len() + 1) as f64)
            .collect();
        planner.initial_from_trajectory(&global, &crossings)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costs::{ActuatorLimits, PenaltyWeights};
    use crate::flatness::DragModel;
    use crate::world::{GapSpec, Motion};
    use approx::assert_relative_eq;

    fn start_state(pos: Vector3<f64>, vel: Vector3<f64>, order: usize) -> DMatrix<f64> {
        let mut s = DMatrix::zeros(3, order);
        s.column_mut(0).copy_from(&pos);
        s.column_mut(1).copy_from(&vel);
        s
    }

    fn moving_world() -> (Vec<GateModel>, Vec<EllipsoidObstacle>) {
        let gates = vec![
            GateModel {
                motion: Motion::Sinusoid {
                    center: Vector3::new(4.0, 0.0, 1.5),
                    axis: Vector3::y(),
                    amplitude: 0.8,
                    angular_frequency: 1.3,
                    phase: 0.4,
                },
                radius: 0.5,
            },
            GateModel {
                motion: Motion::Linear {
                    start: Vector3::new(8.0, 1.0, 1.0),
                    velocity: Vector3::new(0.0, -0.3, 0.1),
                },
                radius: 0.5,
            },
        ];
        let obstacles = vec![EllipsoidObstacle::axis_aligned(
            Vector3::new(0.8, 0.8, 0.8),
            Motion::Sinusoid {
                center: Vector3::new(6.0, 0.3, 1.2),
                axis: Vector3::x(),
                amplitude: 0.5,
                angular_frequency: 0.9,
                phase: 0.0,
            },
        )
        .unwrap()];
        (gates, obstacles)
    }

    fn test_config(gate_mode: GateMode) -> PlannerConfig {
        PlannerConfig {
            order: 3,
            pieces_per_segment: 2,
            penalty: PenaltyConfig {
                weights: PenaltyWeights {
                    thrust: 50.0,
                    body_rate: 50.0,
                    gap: 100.0,
                    obstacle: 1000.0,
                },
                limits: ActuatorLimits {
                    thrust_min: 4.0,
                    thrust_max: 16.0,
                    body_rate_max: 4.0,
                },
                samples_per_segment: 8,
                obstacle_clearance: 1.2,
                gap: Some(GapSpec::new(0, Vector3::z(), 0.4, 2).unwrap()),
                drag: DragModel {
                    drag_coeff: 0.1,
                    gravity: 9.81,
                },
            },
            time_weight: 30.0,
            gate_mode,
            initial_total_time: Some(5.0),
            ..PlannerConfig::default()
        }
    }

    fn perturbed_initial(planner: &Planner) -> DecisionVariables {
        // knock the seed off any symmetric stationary point
        let layout = planner.layout();
        let mut vars = planner.default_initial().unwrap();
        let x = vars.pack(&layout);
        let bumped = DVector::from_iterator(
            x.len(),
            x.iter()
                .enumerate()
                .map(|(i, v)| v + 0.05 * ((i * 7 % 11) as f64 / 11.0 - 0.4)),
        );
        vars.unpack_into(&layout, &bumped);
        vars
    }

    fn check_gradient(mode: GateMode) {
        let (gates, obstacles) = moving_world();
        let mut pool = CachePool::new();
        let planner = Planner::new(
            start_state(Vector3::new(0.0, 0.0, 1.0), Vector3::new(1.0, 0.0, 0.0), 3),
            0.5,
            gates,
            obstacles,
            test_config(mode),
            &mut pool,
        )
        .unwrap();
        let layout = planner.layout();
        let vars = perturbed_initial(&planner);
        let (value, grads) = planner.evaluate(&vars).unwrap();
        assert!(value.is_finite() && value > 0.0);
        let g = grads.pack(&layout);
        let x0 = vars.pack(&layout);
        let mut work = vars.clone();
        let eps = 1e-6;
        for i in 0..x0.len() {
            let mut xp = x0.clone();
            xp[i] += eps;
            work.unpack_into(&layout, &xp);
            let up = planner.evaluate(&work).unwrap().0;
            let mut xm = x0.clone();
            xm[i] -= eps;
            work.unpack_into(&layout, &xm);
            let dn = planner.evaluate(&work).unwrap().0;
            let fd = (up - dn) / (2.0 * eps);
            assert!(
                (g[i] - fd).abs() <= 1e-4 * fd.abs().max(1.0),
                "coordinate {i}: analytic {} vs fd {}",
                g[i],
                fd
            );
        }
    }

    #[test]
    fn hard_mode_gradient_matches_finite_differences() {
        check_gradient(GateMode::Hard);
    }

    #[test]
    fn soft_mode_gradient_matches_finite_differences() {
        check_gradient(GateMode::Soft { weight: 100.0 });
    }

    #[test]
    fn hard_gates_are_pinned_exactly_at_arbitrary_variables() {
        let (gates, obstacles) = moving_world();
        let mut pool = CachePool::new();
        let planner = Planner::new(
            start_state(Vector3::zeros(), Vector3::x(), 3),
            0.0,
            gates.clone(),
            obstacles,
            test_config(GateMode::Hard),
            &mut pool,
        )
        .unwrap();
        let vars = perturbed_initial(&planner);
        let traj = planner.build_trajectory(&vars).unwrap();
        let times = vars.durations();
        let mut t = 0.0;
        for (n, dt) in times.iter().enumerate() {
            t += dt;
            let crossing = traj.eval3(t, 0).unwrap();
            let center = gates[n].center(t);
            assert!(
                (crossing - center).norm() <= 1e-6,
                "gate {n} missed by {}",
                (crossing - center).norm()
            );
        }
    }

    #[test]
    fn straight_line_cruise_is_already_optimal() {
        // matched start/terminal velocity along collinear static gates with
        // zero time weight: the seed is the unconstrained minimum
        let gates = vec![
            GateModel {
                motion: Motion::Static {
                    position: Vector3::new(2.0, 0.0, 1.0),
                },
                radius: 0.4,
            },
            GateModel {
                motion: Motion::Static {
                    position: Vector3::new(4.0, 0.0, 1.0),
                },
                radius: 0.4,
            },
        ];
        let vel = Vector3::new(1.0, 0.0, 0.0);
        let mut terminal = DMatrix::zeros(3, 2);
        terminal.column_mut(0).copy_from(&vel);
        let config = PlannerConfig {
            time_weight: 0.0,
            terminal_derivatives: Some(terminal),
            initial_total_time: Some(4.0),
            penalty: PenaltyConfig {
                weights: PenaltyWeights {
                    thrust: 1.0,
                    body_rate: 1.0,
                    gap: 0.0,
                    obstacle: 0.0,
                },
                ..PenaltyConfig::default()
            },
            ..PlannerConfig::default()
        };
        let mut pool = CachePool::new();
        let planner = Planner::new(
            start_state(Vector3::new(0.0, 0.0, 1.0), vel, 3),
            0.0,
            gates,
            vec![],
            config,
            &mut pool,
        )
        .unwrap();
        let initial = planner.default_initial().unwrap();
        let result = planner.optimize(initial).unwrap();
        assert!(
            result.iterations <= 5,
            "took {} iterations from an optimal seed",
            result.iterations
        );
        assert!(result.cost <= 1e-9, "cost {}", result.cost);
    }

    #[test]
    fn optimizer_reduces_cost_and_stays_feasible_on_the_moving_scenario() {
        let (gates, obstacles) = moving_world();
        let mut config = test_config(GateMode::Hard);
        // dense enough that the solver cannot thread between sample points
        config.penalty.samples_per_segment = 24;
        config.penalty.weights.obstacle = 4e4;
        let mut pool = CachePool::new();
        let planner = Planner::new(
            start_state(Vector3::new(0.0, 0.0, 1.0), Vector3::new(1.0, 0.0, 0.0), 3),
            0.0,
            gates,
            obstacles.clone(),
            config,
            &mut pool,
        )
        .unwrap();
        let initial = planner.default_initial().unwrap();
        let (initial_cost, _) = planner.evaluate(&initial).unwrap();
        let result = planner.optimize(initial).unwrap();
        assert!(result.cost < initial_cost);
        assert!(result.gate_errors.iter().all(|e| *e <= 1e-6));
        // finite penalty weights leave a small dent in the clearance shell;
        // the shell margin (1.2 vs the physical surface at 1) must absorb it
        assert!(
            result.residuals.max_hinge <= 0.1,
            "constraints badly violated: {:?}",
            result.residuals
        );
        let traj = &result.trajectory;
        for j in 0..=512 {
            let t = traj.start_time() + traj.total_duration() * j as f64 / 512.0;
            let p = traj.eval3(t.min(traj.end_time()), 0).unwrap();
            for obs in &obstacles {
                assert!(
                    obs.quadratic_form(&p, t) >= 1.0,
                    "collision at t = {t:.3}"
                );
            }
        }
    }

    #[test]
    fn fastest_feasible_selection_is_permutation_invariant() {
        let report = |time: f64, feasible: bool| CandidateReport {
            label: format!("t{time}"),
            total_time: time,
            cost: time,
            max_hinge: if feasible { 0.0 } else { 1.0 },
            arc_length: 1.0,
            feasible,
        };
        let base = vec![
            report(3.82, true),
            report(3.79, true),
            report(5.60, true),
            report(4.38, false),
        ];
        // every rotation picks the same winner by value
        for shift in 0..base.len() {
            let mut rotated = base.clone();
            rotated.rotate_left(shift);
            let idx = select_fastest_feasible(&rotated).unwrap();
            assert_relative_eq!(rotated[idx].total_time, 3.79);
        }
        let infeasible = vec![report(1.0, false), report(2.0, false)];
        assert!(select_fastest_feasible(&infeasible).is_none());
    }

    #[test]
    fn global_reference_threads_all_nominal_centers() {
        let (gates, _) = moving_world();
        let mut pool = CachePool::new();
        let start = start_state(Vector3::zeros(), Vector3::x(), 3);
        let mut end = DMatrix::zeros(3, 3);
        end.column_mut(0).copy_from(&Vector3::new(12.0, 0.0, 1.0));
        let total = 6.0;
        let traj = plan_global(&start, &end, 1.0, total, &gates, 3, &mut pool).unwrap();
        assert_relative_eq!(traj.total_duration(), total, max_relative = 1e-12);
        // centers are hit at the uniform interior knots
        let pieces = gates.len() + 1;
        for (i, gate) in gates.iter().enumerate() {
            let t = 1.0 + total * (i + 1) as f64 / pieces as f64;
            let p = traj.eval3(t, 0).unwrap();
            assert!((p - gate.motion.nominal()).norm() <= 1e-9);
        }
        let terminal = traj.eval3(1.0 + total, 0).unwrap();
        assert!((terminal - Vector3::new(12.0, 0.0, 1.0)).norm() <= 1e-9);
    }

    #[test]
    fn global_reference_seed_starts_cheaper_than_the_chord_seed() {
        // zigzag track: the chord seed kinks at every junction, while the
        // global reference threads the same centers smoothly
        let gates: Vec<GateModel> = [
            Vector3::new(3.0, 1.4, 1.2),
            Vector3::new(6.0, -1.4, 1.6),
            Vector3::new(9.0, 1.4, 1.2),
        ]
        .into_iter()
        .map(|position| GateModel {
            motion: Motion::Static { position },
            radius: 0.6,
        })
        .collect();
        let start = start_state(Vector3::new(0.0, 0.0, 1.2), Vector3::x(), 3);
        let mut pool = CachePool::new();
        let planner = Planner::new(
            start.clone(),
            0.0,
            gates.clone(),
            vec![],
            test_config(GateMode::Hard),
            &mut pool,
        )
        .unwrap();

        let chord = planner.default_initial().unwrap();
        let (chord_cost, _) = planner.evaluate(&chord).unwrap();

        let total: f64 = chord.durations().iter().sum();
        let mut end = DMatrix::zeros(3, 3);
        end.column_mut(0)
            .copy_from(&gates.last().unwrap().motion.nominal());
        let global = plan_global(&start, &end, 0.0, total, &gates, 3, &mut pool).unwrap();
        let crossings: Vec<f64> = (0..gates.len())
            .map(|i| total * (i + 1) as f64 / (gates.len() + 1) as f64)
            .collect();
        let seeded = planner.initial_from_trajectory(&global, &crossings).unwrap();
        let (global_cost, _) = planner.evaluate(&seeded).unwrap();

        assert!(
            global_cost < chord_cost,
            "global seed {global_cost} should beat chord seed {chord_cost}"
        );
    }

    #[test]
    fn replanner_is_self_consistent_without_world_changes() {
        let (gates, obstacles) = moving_world();
        let mut config = test_config(GateMode::Hard);
        config.lbfgs.max_iterations = 400;
        let mut rp = Replanner::new(gates, obstacles, config, 2).unwrap();
        let state = start_state(Vector3::new(0.0, 0.0, 1.0), Vector3::new(1.0, 0.0, 0.0), 3);
        let first = match rp.step(0.0, &state).unwrap() {
            ReplanStep::Plan(p) => p,
            ReplanStep::Finished => panic!("track not finished"),
        };
        assert!(!first.stale);
        // step again from a point slightly along the planned trajectory
        let dt = 0.05;
        let mut next_state = DMatrix::zeros(3, 3);
        for k in 0..3 {
            next_state
                .column_mut(k)
                .copy_from(&first.trajectory.eval3(dt, k).unwrap());
        }
        // the warm start must reproduce the previous optimum's cost: the tail
        // of an optimal plan is optimal for the tail problem, so re-reading
        // the curve should land essentially where the last solve ended
        let mut pool = CachePool::new();
        let probe = Planner::new(
            next_state.clone(),
            dt,
            rp.track.clone(),
            rp.obstacles.clone(),
            rp.config.clone(),
            &mut pool,
        )
        .unwrap();
        let warm = probe
            .initial_from_trajectory(&first.trajectory, &first.crossing_times)
            .unwrap();
        let (warm_cost, _) = probe.evaluate(&warm).unwrap();
        assert!(
            (warm_cost - first.cost).abs() <= 0.1 * first.cost,
            "warm start cost {warm_cost} far from previous optimum {}",
            first.cost
        );
        let second = match rp.step(dt, &next_state).unwrap() {
            ReplanStep::Plan(p) => p,
            ReplanStep::Finished => panic!("track not finished"),
        };
        assert!(!second.stale);
        // re-solving only improves on the warm start
        assert!(second.cost <= warm_cost + 1e-9);
        // the flat time valley and moving gates allow small drift between
        // re-solves, but nothing qualitative
        for (a, b) in first.crossing_times.iter().zip(&second.crossing_times) {
            assert!((a - b).abs() <= 0.1, "crossing drifted from {a} to {b}");
        }
        let horizon_end = second.trajectory.end_time().min(first.trajectory.end_time());
        let mut worst: f64 = 0.0;
        let mut t = dt;
        while t < horizon_end {
            let a = first.trajectory.eval3(t, 0).unwrap();
            let b = second.trajectory.eval3(t, 0).unwrap();
            worst = worst.max((a - b).norm());
            t += 0.05;
        }
        assert!(worst <= 0.25, "plans diverged by {worst} m");
        // crossing the first gate must slide the window forward
        let t_after = second.crossing_times[0] + 1e-6;
        let mut state_after = DMatrix::zeros(3, 3);
        for k in 0..3 {
            state_after
                .column_mut(k)
                .copy_from(&second.trajectory.eval3(t_after.min(second.trajectory.end_time()), k).unwrap());
        }
        let remaining_before = rp.gates_remaining();
        let _ = rp.step(t_after, &state_after).unwrap();
        assert!(rp.gates_remaining() < remaining_before);
    }

    #[test]
    fn pack_unpack_round_trips_in_every_mode() {
        for (soft, terminal_free) in [(false, true), (true, true), (false, false), (true, false)] {
            let layout = VariableLayout {
                segments: 3,
                order: 3,
                pieces: 4,
                soft,
                terminal_free,
            };
            let mut vars = DecisionVariables::zeros(&layout);
            let dim = layout.dim();
            let x = DVector::from_iterator(dim, (0..dim).map(|i| i as f64 * 0.1 - 1.0));
            vars.unpack_into(&layout, &x);
            let back = vars.pack(&layout);
            assert_eq!(back, x, "round trip failed for soft={soft} terminal_free={terminal_free}");
        }
    }
}
