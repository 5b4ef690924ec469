//! Limited-memory BFGS with a strong-Wolfe line search.
//!
//! The objective is a fallible closure: trial points where it returns an
//! error or a non-finite value are treated as infinitely bad, so the line
//! search backs away from them instead of aborting the whole solve. Only a
//! non-finite cost at the *initial* iterate is a hard error. Accepted steps
//! are monotone; if the line search stalls the solver returns the best
//! iterate seen so far with a status flag rather than failing.

use std::collections::VecDeque;
use std::time::{Duration, Instant};

use nalgebra::DVector;

use crate::error::{Result, TrajError};

#[derive(Debug, Clone)]
pub struct LbfgsConfig {
    /// Number of curvature pairs kept for the inverse-Hessian model.
    pub memory: usize,
    pub max_iterations: usize,
    /// Stop when the gradient's max-norm drops below this.
    pub grad_tolerance: f64,
    /// Stop when one step changes the cost by less than
    /// `relative_cost_tolerance · max(1, |cost|)`.
    pub relative_cost_tolerance: f64,
    /// Armijo (sufficient-decrease) constant.
    pub wolfe_c1: f64,
    /// Curvature constant.
    pub wolfe_c2: f64,
    /// Objective evaluations allowed within one line search.
    pub max_line_search_evals: usize,
    /// Longest move one iteration may make, as ‖Δx‖. Keeps an aggressive
    /// bracketing expansion from leaping into flat far-away valleys.
    pub max_step: f64,
    /// Optional wall-clock budget checked once per iteration.
    pub time_limit: Option<Duration>,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            memory: 10,
            max_iterations: 300,
            grad_tolerance: 1e-6,
            relative_cost_tolerance: 1e-10,
            wolfe_c1: 1e-4,
            wolfe_c2: 0.9,
            max_line_search_evals: 40,
            max_step: 10.0,
            time_limit: None,
        }
    }
}

/// Why the solver stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    GradientTolerance,
    CostTolerance,
    MaxIterations,
    /// No strong-Wolfe point found; the best iterate seen was returned.
    LineSearchStalled,
    TimeLimit,
}

#[derive(Debug, Clone)]
pub struct Report {
    pub cost: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub reason: StopReason,
    /// Cost after each accepted step, starting with the initial cost.
    pub cost_history: Vec<f64>,
}

struct Trial {
    cost: f64,
    x: DVector<f64>,
    grad: DVector<f64>,
}

/// Minimizes `f`, which writes the gradient into its second argument and
/// returns the cost.
pub fn minimize<F>(
    mut f: F,
    x0: DVector<f64>,
    config: &LbfgsConfig,
) -> Result<(DVector<f64>, Report)>
where
    F: FnMut(&DVector<f64>, &mut DVector<f64>) -> Result<f64>,
{
    let n = x0.len();
    let start = Instant::now();
    let mut evaluations = 0usize;

    let mut x = x0;
    let mut grad = DVector::zeros(n);
    let cost = f(&x, &mut grad)?;
    evaluations += 1;
    if !cost.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(TrajError::NonFiniteCost { iteration: 0 });
    }
    let mut cost = cost;
    let mut history = vec![cost];

    // fallible probe: None stands in for +∞ (error or non-finite trial)
    let mut probe = |x: &DVector<f64>, g: &mut DVector<f64>, evals: &mut usize| -> Option<f64> {
        *evals += 1;
        match f(x, g) {
            Ok(v) if v.is_finite() && g.iter().all(|c| c.is_finite()) => Some(v),
            _ => None,
        }
    };

    let mut s_hist: VecDeque<DVector<f64>> = VecDeque::new();
    let mut y_hist: VecDeque<DVector<f64>> = VecDeque::new();
    let mut rho_hist: VecDeque<f64> = VecDeque::new();

    let mut reason = StopReason::MaxIterations;
    let mut iterations = 0usize;

    for iter in 0..config.max_iterations {
        if grad.amax() <= config.grad_tolerance {
            reason = StopReason::GradientTolerance;
            break;
        }
        if let Some(limit) = config.time_limit {
            if start.elapsed() >= limit {
                reason = StopReason::TimeLimit;
                break;
            }
        }
        iterations = iter + 1;

        // two-loop recursion for d = −H·g
        let mut d = -grad.clone();
        let k = s_hist.len();
        let mut alphas = vec![0.0; k];
        for i in (0..k).rev() {
            let a = rho_hist[i] * s_hist[i].dot(&d);
            alphas[i] = a;
            d.axpy(-a, &y_hist[i], 1.0);
        }
        if let (Some(s), Some(y)) = (s_hist.back(), y_hist.back()) {
            d *= s.dot(y) / y.dot(y);
        }
        for i in 0..k {
            let b = rho_hist[i] * y_hist[i].dot(&d);
            d.axpy(alphas[i] - b, &s_hist[i], 1.0);
        }

        let mut slope0 = grad.dot(&d);
        if slope0 >= 0.0 {
            // model lost descent; restart from steepest descent
            d = -grad.clone();
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
            slope0 = grad.dot(&d);
        }

        match line_search(
            &mut probe,
            &x,
            &d,
            cost,
            slope0,
            config,
            &mut evaluations,
        ) {
            Some(tr) => {
                let s = &tr.x - &x;
                let y = &tr.grad - &grad;
                let sy = s.dot(&y);
                if sy > 1e-10 * s.norm() * y.norm() {
                    if s_hist.len() == config.memory {
                        s_hist.pop_front();
                        y_hist.pop_front();
                        rho_hist.pop_front();
                    }
                    s_hist.push_back(s);
                    y_hist.push_back(y);
                    rho_hist.push_back(1.0 / sy);
                }
                let drop = cost - tr.cost;
                x = tr.x;
                grad = tr.grad;
                cost = tr.cost;
                history.push(cost);
                if drop <= config.relative_cost_tolerance * cost.abs().max(1.0) {
                    reason = StopReason::CostTolerance;
                    break;
                }
            }
            None => {
                reason = StopReason::LineSearchStalled;
                break;
            }
        }
    }
    if reason == StopReason::MaxIterations && grad.amax() <= config.grad_tolerance {
        reason = StopReason::GradientTolerance;
    }

    Ok((
        x,
        Report {
            cost,
            grad_norm: grad.amax(),
            iterations,
            evaluations,
            reason,
            cost_history: history,
        },
    ))
}

/// Strong-Wolfe search along `d`. Returns the accepted trial, or — when no
/// Wolfe point turns up within the budget — the best strictly improving
/// trial seen, or `None` if every trial failed to improve.
fn line_search<P>(
    probe: &mut P,
    x: &DVector<f64>,
    d: &DVector<f64>,
    cost0: f64,
    slope0: f64,
    config: &LbfgsConfig,
    evaluations: &mut usize,
) -> Option<Trial>
where
    P: FnMut(&DVector<f64>, &mut DVector<f64>, &mut usize) -> Option<f64>,
{
    let mut budget = config.max_line_search_evals;
    let mut best: Option<Trial> = None;
    let mut grad_buf = DVector::zeros(x.len());

    let mut eval_at = |alpha: f64,
                       budget: &mut usize,
                       best: &mut Option<Trial>,
                       grad_buf: &mut DVector<f64>,
                       evaluations: &mut usize|
     -> Option<(f64, f64)> {
        if *budget == 0 {
            return None;
        }
        *budget -= 1;
        let xt = x + d * alpha;
        let cost = probe(&xt, grad_buf, evaluations)?;
        let slope = grad_buf.dot(d);
        if cost < cost0 && best.as_ref().map_or(true, |b| cost < b.cost) {
            *best = Some(Trial {
                cost,
                x: xt,
                grad: grad_buf.clone(),
            });
        }
        Some((cost, slope))
    };

    let armijo = |alpha: f64, cost: f64| cost <= cost0 + config.wolfe_c1 * alpha * slope0;
    let curvature = |slope: f64| slope.abs() <= config.wolfe_c2 * slope0.abs();

    // bracketing phase
    let alpha_cap = if config.max_step.is_finite() {
        config.max_step / d.norm().max(f64::MIN_POSITIVE)
    } else {
        f64::INFINITY
    };
    let mut alpha_prev = 0.0;
    let mut cost_prev = cost0;
    let mut alpha = 1.0f64.min(alpha_cap);
    let mut bracket: Option<(f64, f64, f64)> = None; // (lo, cost_lo, hi)
    for round in 0..config.max_line_search_evals {
        match eval_at(alpha, &mut budget, &mut best, &mut grad_buf, evaluations) {
            Some((cost, slope)) => {
                if !armijo(alpha, cost) || (round > 0 && cost >= cost_prev) {
                    bracket = Some((alpha_prev, cost_prev, alpha));
                    break;
                }
                if curvature(slope) {
                    // Armijo held too, so this trial is the best seen
                    return best;
                }
                if slope >= 0.0 {
                    bracket = Some((alpha, cost, alpha_prev));
                    break;
                }
                if alpha >= alpha_cap {
                    // improving but capped: take what we have
                    return best;
                }
                alpha_prev = alpha;
                cost_prev = cost;
                alpha = (alpha * 2.0).min(alpha_cap);
            }
            None => {
                if budget == 0 {
                    return best;
                }
                // failed trial: bisect back toward the last good point
                bracket = Some((alpha_prev, cost_prev, alpha));
                break;
            }
        }
    }
    let (mut lo, mut cost_lo, mut hi) = bracket?;

    // zoom phase: bisection with the standard interval update
    while budget > 0 {
        let mid = 0.5 * (lo + hi);
        if (hi - lo).abs() <= 1e-16 * lo.abs().max(1.0) {
            break;
        }
        match eval_at(mid, &mut budget, &mut best, &mut grad_buf, evaluations) {
            Some((cost, slope)) => {
                if !armijo(mid, cost) || cost >= cost_lo {
                    hi = mid;
                } else {
                    if curvature(slope) {
                        return best;
                    }
                    if slope * (hi - lo) >= 0.0 {
                        hi = lo;
                    }
                    lo = mid;
                    cost_lo = cost;
                }
            }
            None => {
                hi = mid;
            }
        }
    }
    best
}
