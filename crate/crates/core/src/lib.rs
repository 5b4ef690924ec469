//! Minimum-time polynomial trajectory optimization through static and moving gates.
//!
//! The library is organized bottom-up:
//!
//! * [`poly`] — power-basis polynomial pieces and piecewise trajectories,
//! * [`banded`] — banded LU with partial pivoting (the linear-algebra core),
//! * [`minco`] — minimum-control-effort spline mapping from waypoints/times
//!   to polynomial coefficients, with adjoint-based gradient propagation,
//! * [`uniform`] — the time-uniform variant that factorizes the spline system
//!   once per piece count and reuses it for every duration,
//! * [`flatness`] — differential-flatness map from trajectory derivatives to
//!   thrust, body rates and attitude under a linear-drag model,
//! * [`world`] — gates, ellipsoidal obstacles and their motion models,
//! * [`costs`] — smoothness cost and sampled penalty functionals with
//!   analytic gradients,
//! * [`lbfgs`] — a small L-BFGS optimizer with strong-Wolfe line search,
//! * [`planner`] — the receding-horizon gate planner: hard gate-through
//!   elimination, multi-topology candidate search, global seeding, replanning,
//! * [`scenario`] — JSON scenario loading,
//! * [`export`] — CSV/gnuplot output.

pub mod banded;
pub mod costs;
pub mod error;
pub mod export;
pub mod flatness;
pub mod lbfgs;
pub mod minco;
pub mod planner;
pub mod poly;
pub mod scenario;
pub mod uniform;
pub mod world;

pub use error::{Result, TrajError};
