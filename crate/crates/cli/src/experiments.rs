//! Experiment runners behind the command-line verbs: representation timing,
//! gate-constraint sweeps, topology studies, and the closed replanning loop.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use racetraj::lbfgs::StopReason;
use racetraj::minco::{self, MincoProblem};
use racetraj::planner::{
    CachePool, GateMode, PlanResult, Planner, ReplanStep, TopologyOutcome,
};
use racetraj::scenario::Scenario;
use racetraj::uniform::UniformMincoCache;
use racetraj::Result;

pub fn median(mut values: Vec<f64>) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    values[values.len() / 2]
}

// ---------------------------------------------------------------- timing

/// One cell of the representation-timing sweep.
#[derive(Debug, Clone)]
pub struct TimingCell {
    pub segments: usize,
    pub pieces: usize,
    /// Median one-iteration cost (solve + gradient pullback), microseconds.
    pub uniform_us: f64,
    pub general_us: f64,
    pub reduction_pct: f64,
}

struct SegmentData {
    general: MincoProblem,
    grad_coeffs: DMatrix<f64>,
    zero_times: Vec<f64>,
}

/// Compares the per-iteration cost of the cached equal-duration representation
/// against re-assembling and re-factorizing the general mapping, over the
/// (segments, pieces) grid. Both paths solve identical problems.
pub fn run_timing_sweep(seed: u64, reps: usize) -> Result<Vec<TimingCell>> {
    let order = 3;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cells = Vec::new();
    for segments in 2..=5 {
        for pieces in [2usize, 4, 6, 8, 10] {
            cells.push(time_cell(order, segments, pieces, reps, &mut rng)?);
        }
    }
    Ok(cells)
}

fn time_cell(
    order: usize,
    segments: usize,
    pieces: usize,
    reps: usize,
    rng: &mut ChaCha8Rng,
) -> Result<TimingCell> {
    let cache = UniformMincoCache::new(order, pieces)?;
    let total_time = rng.gen_range(2.0..4.0);
    let h = total_time / pieces as f64;
    let data: Vec<SegmentData> = (0..segments)
        .map(|_| {
            let boundary_start = DMatrix::from_fn(3, order, |_, _| rng.gen_range(-1.0..1.0));
            let boundary_end = DMatrix::from_fn(3, order, |_, _| rng.gen_range(-1.0..1.0));
            let waypoints = DMatrix::from_fn(3, pieces - 1, |_, _| rng.gen_range(-3.0..3.0));
            let grad_coeffs =
                DMatrix::from_fn(2 * order * pieces, 3, |_, _| rng.gen_range(-1.0..1.0));
            SegmentData {
                general: MincoProblem {
                    order,
                    times: vec![h; pieces],
                    boundary_start,
                    boundary_end,
                    waypoints,
                },
                grad_coeffs,
                zero_times: vec![0.0; pieces],
            }
        })
        .collect();

    let time_uniform = |data: &[SegmentData]| -> Result<f64> {
        let t0 = Instant::now();
        for d in data {
            let coeffs = cache.solve(
                total_time,
                &d.general.boundary_start,
                &d.general.boundary_end,
                &d.general.waypoints,
            )?;
            cache.backprop(
                total_time,
                &d.general.boundary_start,
                &d.general.boundary_end,
                &coeffs,
                &d.grad_coeffs,
                0.7,
            )?;
        }
        Ok(t0.elapsed().as_secs_f64())
    };
    let time_general = |data: &[SegmentData]| -> Result<f64> {
        let t0 = Instant::now();
        for d in data {
            let solution = minco::solve(&d.general)?;
            solution.backprop(&d.grad_coeffs, &d.zero_times)?;
        }
        Ok(t0.elapsed().as_secs_f64())
    };

    // warm up both paths, then interleave measurements so system noise lands
    // on each side equally
    time_uniform(&data)?;
    time_general(&data)?;
    let mut uniform = Vec::with_capacity(reps);
    let mut general = Vec::with_capacity(reps);
    for rep in 0..reps {
        if rep % 2 == 0 {
            general.push(time_general(&data)?);
            uniform.push(time_uniform(&data)?);
        } else {
            uniform.push(time_uniform(&data)?);
            general.push(time_general(&data)?);
        }
    }
    let uniform_us = median(uniform) * 1e6;
    let general_us = median(general) * 1e6;
    Ok(TimingCell {
        segments,
        pieces,
        uniform_us,
        general_us,
        reduction_pct: (general_us - uniform_us) / general_us * 100.0,
    })
}

// ------------------------------------------------------------- gate sweep

#[derive(Debug, Clone)]
pub struct GateSweepRow {
    /// "hard" (crossings pinned) or "soft" (quadratic pull).
    pub method: &'static str,
    pub time_weight: f64,
    /// Pull weight for soft rows; NaN on hard rows.
    pub gate_weight: f64,
    pub mean_gate_distance: f64,
    pub max_gate_distance: f64,
    pub flight_time: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Runs the scenario's window under both gate treatments over a grid of time
/// weights (hard) and pull weights (soft).
pub fn run_gate_sweep(
    scenario: &Scenario,
    time_weights: &[f64],
    gate_weights: &[f64],
) -> Result<Vec<GateSweepRow>> {
    let mut pool = CachePool::new();
    let mut rows = Vec::new();
    for &rho in time_weights {
        rows.push(gate_cell(scenario, rho, None, &mut pool)?);
        for &lambda in gate_weights {
            rows.push(gate_cell(scenario, rho, Some(lambda), &mut pool)?);
        }
    }
    Ok(rows)
}

fn gate_cell(
    scenario: &Scenario,
    time_weight: f64,
    soft_weight: Option<f64>,
    pool: &mut CachePool,
) -> Result<GateSweepRow> {
    let mut config = scenario.config.clone();
    config.time_weight = time_weight;
    config.gate_mode = match soft_weight {
        None => GateMode::Hard,
        Some(weight) => GateMode::Soft { weight },
    };
    let planner = Planner::new(
        scenario.start_state.clone(),
        scenario.start_time,
        scenario.gates[..scenario.horizon].to_vec(),
        scenario.obstacles.clone(),
        config,
        pool,
    )?;
    let initial = planner.default_initial()?;
    let result = planner.optimize(initial)?;
    let n = result.gate_errors.len() as f64;
    Ok(GateSweepRow {
        method: if soft_weight.is_some() { "soft" } else { "hard" },
        time_weight,
        gate_weight: soft_weight.unwrap_or(f64::NAN),
        mean_gate_distance: result.gate_errors.iter().sum::<f64>() / n,
        max_gate_distance: result.gate_errors.iter().cloned().fold(0.0, f64::max),
        flight_time: result.total_time,
        iterations: result.iterations,
        converged: is_converged(result.stop),
    })
}

pub fn is_converged(stop: StopReason) -> bool {
    matches!(
        stop,
        StopReason::GradientTolerance | StopReason::CostTolerance | StopReason::LineSearchStalled
    )
}

// --------------------------------------------------------------- topology

pub fn run_topology_study(scenario: &Scenario) -> Result<TopologyOutcome> {
    let mut pool = CachePool::new();
    let planner = scenario.planner(&mut pool)?;
    planner.plan_multi_topology()
}

// -------------------------------------------------------------- plan once

/// Single plan over the scenario's first window; uses the multi-topology
/// search whenever obstacles are present.
pub fn run_plan(scenario: &Scenario) -> Result<(PlanResult, Option<TopologyOutcome>)> {
    let mut pool = CachePool::new();
    let planner = scenario.planner(&mut pool)?;
    if scenario.obstacles.is_empty() {
        let initial = planner.default_initial()?;
        Ok((planner.optimize(initial)?, None))
    } else {
        let outcome = planner.plan_multi_topology()?;
        Ok((outcome.selected.clone(), Some(outcome)))
    }
}

// -------------------------------------------------------------- replan sim

#[derive(Debug, Clone)]
pub struct ReplanRecord {
    pub step: usize,
    pub now: f64,
    pub latency_ms: f64,
    pub iterations: usize,
    pub stale: bool,
    pub max_hinge: f64,
}

#[derive(Debug, Clone)]
pub struct CrossingRecord {
    /// Track index of the crossed gate.
    pub gate: usize,
    pub time: f64,
    /// Distance between the flown trajectory and the gate center at crossing.
    pub distance: f64,
}

#[derive(Debug, Clone)]
pub struct ReplanSummary {
    pub records: Vec<ReplanRecord>,
    pub crossings: Vec<CrossingRecord>,
    /// True when every track gate was crossed before the step budget ran out.
    pub finished: bool,
}

impl ReplanSummary {
    pub fn median_latency_ms(&self) -> f64 {
        median(self.records.iter().map(|r| r.latency_ms).collect())
    }

    pub fn worst_crossing_distance(&self) -> f64 {
        self.crossings
            .iter()
            .map(|c| c.distance)
            .fold(0.0, f64::max)
    }

    pub fn stale_steps(&self) -> usize {
        self.records.iter().filter(|r| r.stale).count()
    }
}

/// Closed-loop noiseless simulation: the vehicle flies the latest plan
/// exactly; the window replans at the scenario's rate until the track is
/// done or `max_steps` elapse. Gate crossings are audited against the true
/// gate motion at the moment they happen.
pub fn run_replan_sim(scenario: &Scenario, max_steps: usize) -> Result<ReplanSummary> {
    let mut rp = scenario.replanner()?;
    let order = scenario.config.order;
    let dt = 1.0 / scenario.replan_rate_hz;
    let mut now = scenario.start_time;
    let mut state = scenario.start_state.clone();
    let mut records = Vec::new();
    let mut crossings = Vec::new();
    let mut finished = false;

    for step in 0..max_steps {
        let t0 = Instant::now();
        let outcome = rp.step(now, &state)?;
        let latency_ms = t0.elapsed().as_secs_f64() * 1e3;
        let plan = match outcome {
            ReplanStep::Finished => {
                finished = true;
                break;
            }
            ReplanStep::Plan(p) => p,
        };
        let window_start = scenario.gates.len() - rp.gates_remaining();
        records.push(ReplanRecord {
            step,
            now,
            latency_ms,
            iterations: plan.iterations,
            stale: plan.stale,
            max_hinge: plan.residuals.max_hinge,
        });

        // fly one tick of the fresh plan, auditing crossings as they pass
        let next = now + dt;
        for (i, tc) in plan.crossing_times.iter().enumerate() {
            if now < *tc && *tc <= next {
                let gate = window_start + i;
                let p = plan
                    .trajectory
                    .eval3(tc.min(plan.trajectory.end_time()), 0)?;
                crossings.push(CrossingRecord {
                    gate,
                    time: *tc,
                    distance: (p - scenario.gates[gate].center(*tc)).norm(),
                });
            }
        }
        now = next;
        let t_eval = now.min(plan.trajectory.end_time());
        for k in 0..order {
            state.column_mut(k).copy_from(&plan.trajectory.eval3(t_eval, k)?);
        }
    }

    Ok(ReplanSummary {
        records,
        crossings,
        finished,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn timing_sweep_covers_the_grid_and_keeps_problems_identical() {
        let cells = run_timing_sweep(11, 9).unwrap();
        assert_eq!(cells.len(), 20);
        let mut seen = std::collections::BTreeSet::new();
        for c in &cells {
            assert!((2..=5).contains(&c.segments));
            assert!([2, 4, 6, 8, 10].contains(&c.pieces));
            assert!(c.uniform_us > 0.0 && c.general_us > 0.0);
            seen.insert((c.segments, c.pieces));
        }
        assert_eq!(seen.len(), 20);
    }

    #[test]
    fn median_handles_odd_even_and_empty() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 3.0);
        assert!(median(vec![]).is_nan());
    }
}
