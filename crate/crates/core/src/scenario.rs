//! JSON scenario files: world description plus solver settings in one
//! document, validated into ready-to-run planner inputs.
//!
//! Most planner fields are optional and fall back to sensible defaults, so a
//! minimal scenario is just a name, a start position, and a gate list. All
//! indices (e.g. the attitude-window gate) are zero-based, matching the order
//! of the `gates` array.

use std::time::Duration;

use nalgebra::{DMatrix, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::costs::{ActuatorLimits, PenaltyConfig, PenaltyWeights};
use crate::error::{Result, TrajError};
use crate::flatness::DragModel;
use crate::lbfgs::LbfgsConfig;
use crate::planner::{CachePool, GateMode, Planner, PlannerConfig, Replanner};
use crate::world::{EllipsoidObstacle, GapSpec, GateModel, Motion};

/// Raw file schema. Unknown keys are rejected so typos fail loudly instead
/// of silently running with defaults.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    pub start: StartSpec,
    pub gates: Vec<GateSpec>,
    #[serde(default)]
    pub obstacles: Vec<ObstacleSpec>,
    #[serde(default)]
    pub gap: Option<GapFileSpec>,
    #[serde(default)]
    pub planner: PlannerSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartSpec {
    pub position: [f64; 3],
    #[serde(default)]
    pub velocity: [f64; 3],
    #[serde(default)]
    pub acceleration: [f64; 3],
    #[serde(default)]
    pub jerk: [f64; 3],
    #[serde(default)]
    pub time: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GateSpec {
    pub radius: f64,
    pub motion: Motion,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleSpec {
    pub semi_axes: [f64; 3],
    /// Roll/pitch/yaw of the ellipsoid frame (rad).
    #[serde(default)]
    pub rpy: [f64; 3],
    pub motion: Motion,
}

/// Attitude window over one crossing, `gate` indexing into `gates`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GapFileSpec {
    pub gate: usize,
    pub axis: [f64; 3],
    pub tolerance: f64,
    /// Window half-width, in sample intervals of one segment.
    pub samples: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlannerSpec {
    pub order: usize,
    /// Gates per planning window; absent means the whole track at once.
    pub horizon: Option<usize>,
    pub pieces: usize,
    /// Constraint-sample intervals per segment.
    pub samples: usize,
    pub audit_samples: usize,
    pub time_weight: f64,
    pub weights: PenaltyWeights,
    pub limits: ActuatorLimits,
    pub obstacle_clearance: f64,
    pub drag_coeff: f64,
    pub gravity: f64,
    pub gate_mode: GateModeSpec,
    pub initial_total_time: Option<f64>,
    pub feasibility_tolerance: f64,
    pub topology_clearance: f64,
    pub threads: usize,
    pub lbfgs: LbfgsSpec,
    /// Per-replan compute budget; unlimited when absent.
    pub deadline_ms: Option<f64>,
    pub replan_rate_hz: f64,
    /// Fixes the velocity at the final crossing (higher orders zero);
    /// absent leaves the terminal derivatives free.
    pub terminal_velocity: Option<[f64; 3]>,
}

impl Default for PlannerSpec {
    fn default() -> Self {
        Self {
            order: 3,
            horizon: None,
            pieces: 2,
            samples: 16,
            audit_samples: 128,
            time_weight: 30.0,
            weights: PenaltyWeights::default(),
            limits: ActuatorLimits::default(),
            obstacle_clearance: 1.0,
            drag_coeff: 0.0,
            gravity: 9.81,
            gate_mode: GateModeSpec::Hard,
            initial_total_time: None,
            feasibility_tolerance: 1e-4,
            topology_clearance: 0.3,
            threads: 1,
            lbfgs: LbfgsSpec::default(),
            deadline_ms: None,
            replan_rate_hz: 20.0,
            terminal_velocity: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateModeSpec {
    Hard,
    Soft { weight: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LbfgsSpec {
    pub memory: usize,
    pub max_iterations: usize,
    pub grad_tolerance: f64,
    pub relative_cost_tolerance: f64,
}

impl Default for LbfgsSpec {
    fn default() -> Self {
        let c = LbfgsConfig::default();
        Self {
            memory: c.memory,
            max_iterations: c.max_iterations,
            grad_tolerance: c.grad_tolerance,
            relative_cost_tolerance: c.relative_cost_tolerance,
        }
    }
}

/// A validated scenario, ready to hand to the planner.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub start_time: f64,
    /// Start state, 3×order (position, velocity, ... columns).
    pub start_state: DMatrix<f64>,
    pub gates: Vec<GateModel>,
    pub obstacles: Vec<EllipsoidObstacle>,
    pub config: PlannerConfig,
    pub horizon: usize,
    pub replan_rate_hz: f64,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let file: ScenarioFile = serde_json::from_str(text)
            .map_err(|e| TrajError::InvalidConfig(format!("scenario parse error: {e}")))?;
        Self::from_file_spec(file)
    }

    pub fn from_file_spec(file: ScenarioFile) -> Result<Self> {
        let p = &file.planner;
        if p.order < 2 {
            return Err(TrajError::InvalidConfig(format!(
                "smoothness order must be at least 2, got {}",
                p.order
            )));
        }
        if file.gates.is_empty() {
            return Err(TrajError::InvalidConfig(
                "scenario needs at least one gate".into(),
            ));
        }
        for (i, g) in file.gates.iter().enumerate() {
            if !(g.radius.is_finite() && g.radius > 0.0) {
                return Err(TrajError::InvalidConfig(format!(
                    "gate {i} radius must be positive, got {}",
                    g.radius
                )));
            }
        }
        if p.replan_rate_hz <= 0.0 {
            return Err(TrajError::InvalidConfig(format!(
                "replan rate must be positive, got {}",
                p.replan_rate_hz
            )));
        }

        let gates: Vec<GateModel> = file
            .gates
            .iter()
            .map(|g| GateModel {
                motion: g.motion.clone(),
                radius: g.radius,
            })
            .collect();

        let obstacles: Vec<EllipsoidObstacle> = file
            .obstacles
            .iter()
            .map(|o| {
                let rot = Rotation3::from_euler_angles(o.rpy[0], o.rpy[1], o.rpy[2]);
                EllipsoidObstacle::new(
                    Vector3::from(o.semi_axes),
                    *rot.matrix(),
                    o.motion.clone(),
                )
            })
            .collect::<Result<_>>()?;

        let gap = file
            .gap
            .as_ref()
            .map(|g| {
                if g.gate >= gates.len() {
                    return Err(TrajError::InvalidConfig(format!(
                        "gap references gate {} but there are only {}",
                        g.gate,
                        gates.len()
                    )));
                }
                GapSpec::new(g.gate, Vector3::from(g.axis), g.tolerance, g.samples)
            })
            .transpose()?;

        let mut start_state = DMatrix::zeros(3, p.order);
        let start_cols = [
            file.start.position,
            file.start.velocity,
            file.start.acceleration,
            file.start.jerk,
        ];
        for (k, col) in start_cols.iter().enumerate().take(p.order) {
            start_state.column_mut(k).copy_from(&Vector3::from(*col));
        }

        let terminal_derivatives = p.terminal_velocity.map(|v| {
            let mut td = DMatrix::zeros(3, p.order - 1);
            td.column_mut(0).copy_from(&Vector3::from(v));
            td
        });

        let penalty = PenaltyConfig {
            weights: p.weights,
            limits: p.limits,
            samples_per_segment: p.samples,
            obstacle_clearance: p.obstacle_clearance,
            gap,
            drag: DragModel {
                drag_coeff: p.drag_coeff,
                gravity: p.gravity,
            },
        };
        penalty.validate()?;

        let config = PlannerConfig {
            order: p.order,
            pieces_per_segment: p.pieces,
            penalty,
            time_weight: p.time_weight,
            gate_mode: match p.gate_mode {
                GateModeSpec::Hard => GateMode::Hard,
                GateModeSpec::Soft { weight } => GateMode::Soft { weight },
            },
            lbfgs: LbfgsConfig {
                memory: p.lbfgs.memory,
                max_iterations: p.lbfgs.max_iterations,
                grad_tolerance: p.lbfgs.grad_tolerance,
                relative_cost_tolerance: p.lbfgs.relative_cost_tolerance,
                time_limit: p
                    .deadline_ms
                    .map(|ms| Duration::from_secs_f64((ms * 1e-3).max(0.0))),
                ..LbfgsConfig::default()
            },
            terminal_derivatives,
            feasibility_tolerance: p.feasibility_tolerance,
            topology_clearance: p.topology_clearance,
            initial_total_time: p.initial_total_time,
            threads: p.threads.max(1),
            audit_samples: p.audit_samples,
        };

        let horizon = match p.horizon {
            Some(0) => {
                return Err(TrajError::InvalidConfig(
                    "horizon must be at least 1 gate".into(),
                ))
            }
            Some(h) => h.min(gates.len()),
            None => gates.len(),
        };

        Ok(Self {
            name: file.name,
            start_time: file.start.time,
            start_state,
            gates,
            obstacles,
            config,
            horizon,
            replan_rate_hz: p.replan_rate_hz,
        })
    }

    /// Planner over the first window of the track.
    pub fn planner(&self, pool: &mut CachePool) -> Result<Planner> {
        let window = self.gates[..self.horizon.min(self.gates.len())].to_vec();
        Planner::new(
            self.start_state.clone(),
            self.start_time,
            window,
            self.obstacles.clone(),
            self.config.clone(),
            pool,
        )
    }

    pub fn replanner(&self) -> Result<Replanner> {
        Replanner::new(
            self.gates.clone(),
            self.obstacles.clone(),
            self.config.clone(),
            self.horizon,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const FULL: &str = r#"{
        "name": "test-track",
        "start": {
            "position": [0.0, 0.0, 1.0],
            "velocity": [1.0, 0.0, 0.0],
            "time": 0.25
        },
        "gates": [
            { "radius": 0.5, "motion": { "type": "static", "position": [4.0, 0.0, 1.0] } },
            { "radius": 0.6, "motion": { "type": "sinusoid", "center": [8.0, 1.0, 1.5],
                "axis": [0.0, 1.0, 0.0], "amplitude": 0.8, "angular_frequency": 2.5, "phase": 0.1 } },
            { "radius": 0.5, "motion": { "type": "linear", "start": [12.0, 0.0, 1.0],
                "velocity": [0.0, -0.4, 0.0] } }
        ],
        "obstacles": [
            { "semi_axes": [0.5, 1.0, 0.75], "rpy": [0.0, 0.0, 0.7853981633974483],
              "motion": { "type": "linear", "start": [6.0, 0.5, 1.2], "velocity": [0.0, -0.2, 0.0] } }
        ],
        "gap": { "gate": 1, "axis": [0.0, 0.0, 2.0], "tolerance": 0.4, "samples": 2 },
        "planner": {
            "order": 3,
            "horizon": 2,
            "pieces": 4,
            "samples": 12,
            "time_weight": 80.0,
            "weights": { "thrust": 100.0, "body_rate": 100.0, "gap": 10000.0, "obstacle": 10000.0 },
            "limits": { "thrust_min": 4.0, "thrust_max": 17.0, "body_rate_max": 6.0 },
            "obstacle_clearance": 1.3,
            "drag_coeff": 0.12,
            "gate_mode": { "soft": { "weight": 250.0 } },
            "initial_total_time": 6.0,
            "threads": 2,
            "lbfgs": { "max_iterations": 120 },
            "deadline_ms": 40.0,
            "terminal_velocity": [2.0, 0.0, 0.0]
        }
    }"#;

    #[test]
    fn full_scenario_parses_into_planner_inputs() {
        let sc = Scenario::from_json(FULL).unwrap();
        assert_eq!(sc.name, "test-track");
        assert_relative_eq!(sc.start_time, 0.25);
        assert_eq!(sc.start_state.ncols(), 3);
        assert_relative_eq!(sc.start_state[(0, 1)], 1.0);
        assert_eq!(sc.gates.len(), 3);
        assert_eq!(sc.horizon, 2);
        // the rotated obstacle's quadratic form matches a hand-built frame
        let obs = &sc.obstacles[0];
        let along_rotated_x = Vector3::new(0.5 / 2f64.sqrt(), 0.5 / 2f64.sqrt(), 0.0);
        let surface = obs.center(0.0) + along_rotated_x;
        assert_relative_eq!(obs.quadratic_form(&surface, 0.0), 1.0, max_relative = 1e-12);
        // gap axis is normalized, window half-width carried through
        let gap = sc.config.penalty.gap.as_ref().unwrap();
        assert_eq!(gap.gate_index, 1);
        assert_relative_eq!(gap.desired_axis.norm(), 1.0, max_relative = 1e-15);
        assert_eq!(gap.sample_range, 2);
        // solver settings threaded through
        assert_eq!(sc.config.lbfgs.max_iterations, 120);
        assert_eq!(
            sc.config.lbfgs.time_limit,
            Some(Duration::from_millis(40))
        );
        assert!(matches!(
            sc.config.gate_mode,
            GateMode::Soft { weight } if weight == 250.0
        ));
        let td = sc.config.terminal_derivatives.as_ref().unwrap();
        assert_relative_eq!(td[(0, 0)], 2.0);
        assert_relative_eq!(sc.config.penalty.drag.drag_coeff, 0.12);
        assert_eq!(sc.config.penalty.samples_per_segment, 12);
        assert_eq!(sc.config.threads, 2);
    }

    #[test]
    fn minimal_scenario_gets_defaults() {
        let sc = Scenario::from_json(
            r#"{
                "name": "minimal",
                "start": { "position": [0.0, 0.0, 1.0] },
                "gates": [
                    { "radius": 0.5, "motion": { "type": "static", "position": [3.0, 0.0, 1.0] } }
                ]
            }"#,
        )
        .unwrap();
        assert_eq!(sc.horizon, 1);
        assert_eq!(sc.config.order, 3);
        assert_eq!(sc.config.pieces_per_segment, 2);
        assert!(sc.config.terminal_derivatives.is_none());
        assert!(sc.config.penalty.gap.is_none());
        assert!(matches!(sc.config.gate_mode, GateMode::Hard));
        assert_relative_eq!(sc.config.penalty.drag.gravity, 9.81);
        assert_relative_eq!(sc.start_state.column(1).norm(), 0.0);
        assert!(sc.config.lbfgs.time_limit.is_none());
    }

    #[test]
    fn builds_a_working_planner_and_replanner() {
        let sc = Scenario::from_json(FULL).unwrap();
        let mut pool = CachePool::new();
        let planner = sc.planner(&mut pool).unwrap();
        assert_eq!(planner.gates().len(), 2);
        let vars = planner.default_initial().unwrap();
        let (cost, _) = planner.evaluate(&vars).unwrap();
        assert!(cost.is_finite() && cost > 0.0);
        assert!(sc.replanner().is_ok());
    }

    #[test]
    fn bad_inputs_are_rejected_with_context() {
        let reject = |json: &str, needle: &str| {
            let err = Scenario::from_json(json).unwrap_err();
            let msg = err.to_string();
            assert!(
                msg.contains(needle),
                "expected {needle:?} in error: {msg}"
            );
        };
        reject(
            r#"{ "name": "x", "start": { "position": [0,0,0] }, "gates": [] }"#,
            "at least one gate",
        );
        reject(
            r#"{ "name": "x", "start": { "position": [0,0,0] },
                "gates": [{ "radius": 0.0, "motion": { "type": "static", "position": [1,0,0] } }] }"#,
            "radius",
        );
        reject(
            r#"{ "name": "x", "start": { "position": [0,0,0] },
                "gates": [{ "radius": 0.5, "motion": { "type": "static", "position": [1,0,0] } }],
                "gap": { "gate": 3, "axis": [0,0,1], "tolerance": 0.4, "samples": 1 } }"#,
            "gap references gate 3",
        );
        reject(
            r#"{ "name": "x", "start": { "position": [0,0,0] },
                "gates": [{ "radius": 0.5, "motion": { "type": "static", "position": [1,0,0] } }],
                "planner": { "order": 1 } }"#,
            "order",
        );
        // typos in keys fail instead of silently using defaults
        reject(
            r#"{ "name": "x", "start": { "position": [0,0,0] },
                "gates": [{ "radius": 0.5, "motion": { "type": "static", "position": [1,0,0] } }],
                "planner": { "sample": 8 } }"#,
            "unknown field",
        );
        reject(
            r#"{ "name": "x", "start": { "position": [0,0,0] },
                "gates": [{ "radius": 0.5, "motion": { "type": "static", "position": [1,0,0] } }],
                "obstacles": [{ "semi_axes": [0.0, 1.0, 1.0],
                    "motion": { "type": "static", "position": [2,0,0] } }] }"#,
            "semi-axes",
        );
    }

    #[test]
    fn scenario_file_round_trips_through_json() {
        let sc: ScenarioFile = serde_json::from_str(FULL).unwrap();
        let text = serde_json::to_string_pretty(&sc).unwrap();
        let back = Scenario::from_json(&text).unwrap();
        assert_eq!(back.name, "test-track");
        assert_eq!(back.gates.len(), 3);
        assert_eq!(back.config.lbfgs.max_iterations, 120);
    }
}
