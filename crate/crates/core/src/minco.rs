//! Minimum-control-effort spline mapping.
//!
//! Given boundary derivatives, interior waypoints, and per-piece durations,
//! the unique spline of degree `2s−1` that minimizes `∫‖σ⁽ˢ⁾‖²` subject to
//! those pins is the solution of one banded linear system `A(T)·C = b`: `s`
//! boundary rows at each end plus, per interior junction, one waypoint pin and
//! continuity of derivative orders `0..2s−2`. Ordering the junction block as
//! `[pin, continuity ascending]` keeps the bandwidths at `(s+1, s−1)`.
//!
//! Gradients of any scalar objective are pulled back through the solve with a
//! single transposed solve against the stored factorization (adjoint method):
//! no inverse is ever formed, and the whole pipeline stays linear in the
//! number of pieces.

use nalgebra::{DMatrix, DVector};

use crate::banded::{BandedLu, BandedMatrix};
use crate::error::{Result, TrajError};
use crate::poly::{basis_deriv, PolynomialPiece, SegmentedTrajectory};

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

/// Inputs of the spline mapping: derivative orders `0..s−1` are pinned at both
/// ends (one column per order), positions at the `M−1` interior junctions.
#[derive(Debug, Clone)]
pub struct MincoProblem {
    /// Control order `s` (3 = minimum jerk, 4 = minimum snap).
    pub order: usize,
    /// Piece durations, length `M ≥ 1`.
    pub times: Vec<f64>,
    /// `m × s`, column `k` is the `k`-th derivative at the start.
    pub boundary_start: DMatrix<f64>,
    /// `m × s`, same convention at the end.
    pub boundary_end: DMatrix<f64>,
    /// `m × (M−1)` interior junction positions.
    pub waypoints: DMatrix<f64>,
}

impl MincoProblem {
    pub fn piece_count(&self) -> usize {
        self.times.len()
    }

    pub fn dim(&self) -> usize {
        self.boundary_start.nrows()
    }

    /// Row/column count of the assembled system: `2·M·s`.
    pub fn system_size(&self) -> usize {
        2 * self.piece_count() * self.order
    }

    pub fn validate(&self) -> Result<()> {
        if self.order < 2 {
            return Err(TrajError::InvalidConfig(format!(
                "control order must be ≥ 2, got {}",
                self.order
            )));
        }
        if self.times.is_empty() {
            return Err(TrajError::InvalidConfig("need at least one piece".into()));
        }
        for &t in &self.times {
            if !(t.is_finite() && t > 0.0) {
                return Err(TrajError::InvalidDuration { duration: t });
            }
        }
        let m = self.dim();
        if m == 0 {
            return Err(TrajError::DimensionMismatch {
                what: "spline dimension",
                expected: 1,
                actual: 0,
            });
        }
        if self.boundary_start.ncols() != self.order {
            return Err(TrajError::DimensionMismatch {
                what: "start boundary columns",
                expected: self.order,
                actual: self.boundary_start.ncols(),
            });
        }
        if self.boundary_end.nrows() != m || self.boundary_end.ncols() != self.order {
            return Err(TrajError::DimensionMismatch {
                what: "end boundary shape",
                expected: m * self.order,
                actual: self.boundary_end.nrows() * self.boundary_end.ncols(),
            });
        }
        if self.waypoints.ncols() != self.piece_count() - 1
            || (self.waypoints.ncols() > 0 && self.waypoints.nrows() != m)
        {
            return Err(TrajError::DimensionMismatch {
                what: "waypoint columns",
                expected: self.piece_count() - 1,
                actual: self.waypoints.ncols(),
            });
        }
        Ok(())
    }
}

/// Build the banded system matrix for the given order and piece durations.
pub fn assemble_matrix(order: usize, times: &[f64]) -> BandedMatrix {
    let s = order;
    let d = 2 * s - 1; // polynomial degree
    let m_pieces = times.len();
    let n = 2 * m_pieces * s;
    let mut a = BandedMatrix::zeros(n, s + 1, s - 1);

    for k in 0..s {
        a.set(k, k, factorial(k));
    }
    for (j, &t) in times.iter().enumerate().take(m_pieces - 1) {
        let base = s + 2 * s * j;
        let col0 = 2 * s * j;
        let beta0 = basis_deriv(t, d, 0);
        for p in 0..=d {
            a.set(base, col0 + p, beta0[p]);
        }
        for k in 0..=2 * s - 2 {
            let row = base + 1 + k;
            let beta = basis_deriv(t, d, k);
            for p in k..=d {
                a.set(row, col0 + p, beta[p]);
            }
            a.set(row, col0 + 2 * s + k, -factorial(k));
        }
    }
    let t_last = times[m_pieces - 1];
    let base = n - s;
    let col0 = 2 * s * (m_pieces - 1);
    for k in 0..s {
        let beta = basis_deriv(t_last, d, k);
        for p in k..=d {
            a.set(base + k, col0 + p, beta[p]);
        }
    }
    a
}

/// Right-hand side paired with [`assemble_matrix`]; independent of durations.
pub fn assemble_rhs(
    order: usize,
    pieces: usize,
    boundary_start: &DMatrix<f64>,
    boundary_end: &DMatrix<f64>,
    waypoints: &DMatrix<f64>,
) -> DMatrix<f64> {
    let s = order;
    let m = boundary_start.nrows();
    let n = 2 * pieces * s;
    let mut b = DMatrix::zeros(n, m);
    for k in 0..s {
        b.row_mut(k).copy_from(&boundary_start.column(k).transpose());
        b.row_mut(n - s + k)
            .copy_from(&boundary_end.column(k).transpose());
    }
    for j in 0..pieces - 1 {
        b.row_mut(s + 2 * s * j)
            .copy_from(&waypoints.column(j).transpose());
    }
    b
}

/// Assembled (unfactorized) system for a problem.
pub fn assemble(p: &MincoProblem) -> Result<(BandedMatrix, DMatrix<f64>)> {
    p.validate()?;
    Ok((
        assemble_matrix(p.order, &p.times),
        assemble_rhs(
            p.order,
            p.piece_count(),
            &p.boundary_start,
            &p.boundary_end,
            &p.waypoints,
        ),
    ))
}

/// Gradients of a scalar objective with respect to every mapping input.
#[derive(Debug, Clone)]
pub struct MincoGradients {
    pub by_boundary_start: DMatrix<f64>,
    pub by_boundary_end: DMatrix<f64>,
    pub by_waypoints: DMatrix<f64>,
    pub by_times: Vec<f64>,
}

/// Solved spline: coefficients plus the factorization kept for adjoint passes.
#[derive(Debug)]
pub struct MincoSolution {
    order: usize,
    times: Vec<f64>,
    coeffs: DMatrix<f64>,
    lu: BandedLu,
}

/// Assemble, factorize and solve the mapping for `p`.
pub fn solve(p: &MincoProblem) -> Result<MincoSolution> {
    let (a, b) = assemble(p)?;
    let lu = a.factorize()?;
    let mut coeffs = b;
    lu.solve_in_place(&mut coeffs);
    Ok(MincoSolution {
        order: p.order,
        times: p.times.clone(),
        coeffs,
        lu,
    })
}

impl MincoSolution {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn dim(&self) -> usize {
        self.coeffs.ncols()
    }

    pub fn piece_count(&self) -> usize {
        self.times.len()
    }

    /// Stacked coefficients, `2s` rows per piece, powers ascending.
    pub fn coeffs(&self) -> &DMatrix<f64> {
        &self.coeffs
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn piece(&self, i: usize) -> Result<PolynomialPiece> {
        let s2 = 2 * self.order;
        PolynomialPiece::new(self.coeffs.rows(s2 * i, s2).into_owned(), self.times[i])
    }

    /// View the spline as a trajectory (one piece per segment, so arbitrary
    /// per-piece durations remain representable).
    pub fn to_trajectory(&self, start_time: f64) -> Result<SegmentedTrajectory> {
        let segs = (0..self.piece_count())
            .map(|i| Ok(vec![self.piece(i)?]))
            .collect::<Result<Vec<_>>>()?;
        SegmentedTrajectory::new(start_time, segs)
    }

    /// Derivative `order` of piece `i` at its local time `t`.
    fn piece_deriv(&self, i: usize, t: f64, order: usize) -> DVector<f64> {
        let s2 = 2 * self.order;
        let beta = basis_deriv(t, s2 - 1, order);
        self.coeffs.rows(s2 * i, s2).tr_mul(&beta)
    }

    /// Pull a coefficient-space gradient (plus any explicit per-piece duration
    /// gradient) back to the mapping inputs via one transposed banded solve.
    pub fn backprop(
        &self,
        grad_coeffs: &DMatrix<f64>,
        grad_times: &[f64],
    ) -> Result<MincoGradients> {
        let s = self.order;
        let m_pieces = self.piece_count();
        let n = 2 * m_pieces * s;
        let m = self.dim();
        if grad_coeffs.nrows() != n || grad_coeffs.ncols() != m {
            return Err(TrajError::DimensionMismatch {
                what: "coefficient gradient shape",
                expected: n * m,
                actual: grad_coeffs.nrows() * grad_coeffs.ncols(),
            });
        }
        if grad_times.len() != m_pieces {
            return Err(TrajError::DimensionMismatch {
                what: "duration gradient length",
                expected: m_pieces,
                actual: grad_times.len(),
            });
        }

        let mut adj = grad_coeffs.clone();
        self.lu.solve_transpose_in_place(&mut adj);

        let mut by_boundary_start = DMatrix::zeros(m, s);
        let mut by_boundary_end = DMatrix::zeros(m, s);
        for k in 0..s {
            by_boundary_start.set_column(k, &adj.row(k).transpose());
            by_boundary_end.set_column(k, &adj.row(n - s + k).transpose());
        }
        let mut by_waypoints = DMatrix::zeros(m, m_pieces.saturating_sub(1));
        for j in 0..m_pieces - 1 {
            by_waypoints.set_column(j, &adj.row(s + 2 * s * j).transpose());
        }

        // rows containing β(T_i) shift with T_i: row of constraint order k
        // contributes −⟨λ_row, σᵢ^(k+1)(T_i)⟩
        let mut by_times = Vec::with_capacity(m_pieces);
        for i in 0..m_pieces {
            let t = self.times[i];
            let mut acc = 0.0;
            if i + 1 < m_pieces {
                let base = s + 2 * s * i;
                acc += adj.row(base).dot(&self.piece_deriv(i, t, 1).transpose());
                for k in 0..=2 * s - 2 {
                    acc += adj
                        .row(base + 1 + k)
                        .dot(&self.piece_deriv(i, t, k + 1).transpose());
                }
            } else {
                for k in 0..s {
                    acc += adj
                        .row(n - s + k)
                        .dot(&self.piece_deriv(i, t, k + 1).transpose());
                }
            }
            by_times.push(grad_times[i] - acc);
        }

        Ok(MincoGradients {
            by_boundary_start,
            by_boundary_end,
            by_waypoints,
            by_times,
        })
    }
}
