//! Power-basis polynomial pieces and piecewise-polynomial trajectories.
//!
//! A piece of degree `D` stores its coefficients as a `(D+1) × m` matrix whose
//! row `k` multiplies `t^k`; evaluating the `k`-th derivative contracts the
//! coefficients against the derivative of the monomial basis. Trajectories are
//! ordered lists of segments, each segment being a list of pieces that share a
//! single duration (segments are re-fit as a block, so equal piece durations
//! are an invariant, not a coincidence).

use nalgebra::{DMatrix, DVector, Vector3};

use crate::error::{Result, TrajError};

/// Monomial basis `(1, x, x², …, x^degree)`.
pub fn basis(x: f64, degree: usize) -> DVector<f64> {
    basis_deriv(x, degree, 0)
}

/// `order`-th derivative of the monomial basis at `x`.
///
/// Entry `j` is `j·(j−1)···(j−order+1) · x^(j−order)` for `j ≥ order` and zero
/// below; `order > degree` yields the zero vector.
pub fn basis_deriv(x: f64, degree: usize, order: usize) -> DVector<f64> {
    let mut v = DVector::zeros(degree + 1);
    if order > degree {
        return v;
    }
    // falling factorial (j)_order, advanced incrementally over j
    let mut coeff: f64 = (1..=order).map(|i| i as f64).product();
    let mut xp = 1.0;
    for j in order..=degree {
        v[j] = coeff * xp;
        coeff = coeff * (j + 1) as f64 / (j + 1 - order) as f64;
        xp *= x;
    }
    v
}

/// One polynomial piece over a local time interval `[0, duration]`.
#[derive(Debug, Clone)]
pub struct PolynomialPiece {
    /// `(degree+1) × m`; row `k` multiplies `t^k`.
    coeffs: DMatrix<f64>,
    duration: f64,
}

impl PolynomialPiece {
    pub fn new(coeffs: DMatrix<f64>, duration: f64) -> Result<Self> {
        if !(duration.is_finite() && duration > 0.0) {
            return Err(TrajError::InvalidDuration { duration });
        }
        if coeffs.nrows() == 0 || coeffs.ncols() == 0 {
            return Err(TrajError::DimensionMismatch {
                what: "piece coefficients",
                expected: 1,
                actual: 0,
            });
        }
        Ok(Self { coeffs, duration })
    }

    pub fn degree(&self) -> usize {
        self.coeffs.nrows() - 1
    }

    pub fn dim(&self) -> usize {
        self.coeffs.ncols()
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn coeffs(&self) -> &DMatrix<f64> {
        &self.coeffs
    }

    /// `order`-th derivative at piece-local time `t` (not range-checked; the
    /// trajectory wrapper owns domain checks).
    pub fn eval(&self, t: f64, order: usize) -> DVector<f64> {
        let b = basis_deriv(t, self.degree(), order);
        self.coeffs.tr_mul(&b)
    }
}

/// Piecewise-polynomial trajectory: segments of equal-duration pieces laid out
/// consecutively from `start_time`.
#[derive(Debug, Clone)]
pub struct SegmentedTrajectory {
    start_time: f64,
    segments: Vec<Vec<PolynomialPiece>>,
}

impl SegmentedTrajectory {
    /// Equal piece durations within each segment are enforced to a relative
    /// 1e-9; dimensional/degree consistency across all pieces is required.
    pub fn new(start_time: f64, segments: Vec<Vec<PolynomialPiece>>) -> Result<Self> {
        if segments.is_empty() || segments.iter().any(|s| s.is_empty()) {
            return Err(TrajError::InvalidConfig(
                "trajectory needs at least one non-empty segment".into(),
            ));
        }
        let dim = segments[0][0].dim();
        let degree = segments[0][0].degree();
        for seg in &segments {
            let h = seg[0].duration();
            for p in seg {
                if p.dim() != dim {
                    return Err(TrajError::DimensionMismatch {
                        what: "piece dimension",
                        expected: dim,
                        actual: p.dim(),
                    });
                }
                if p.degree() != degree {
                    return Err(TrajError::DimensionMismatch {
                        what: "piece degree",
                        expected: degree,
                        actual: p.degree(),
                    });
                }
                if (p.duration() - h).abs() > 1e-9 * h.max(1.0) {
                    return Err(TrajError::InvalidConfig(format!(
                        "pieces within a segment must share one duration ({} vs {})",
                        p.duration(),
                        h
                    )));
                }
            }
        }
        Ok(Self {
            start_time,
            segments,
        })
    }

    pub fn dim(&self) -> usize {
        self.segments[0][0].dim()
    }

    pub fn degree(&self) -> usize {
        self.segments[0][0].degree()
    }

    pub fn start_time(&self) -> f64 {
        self.start_time
    }

    pub fn end_time(&self) -> f64 {
        self.start_time + self.total_duration()
    }

    pub fn total_duration(&self) -> f64 {
        self.segments
            .iter()
            .map(|s| s[0].duration() * s.len() as f64)
            .sum()
    }

    pub fn segment_count(&self) -> usize {
        self.segments.len()
    }

    pub fn segments(&self) -> &[Vec<PolynomialPiece>] {
        &self.segments
    }

    pub fn segment_duration(&self, n: usize) -> f64 {
        self.segments[n][0].duration() * self.segments[n].len() as f64
    }

    pub fn segment_durations(&self) -> Vec<f64> {
        (0..self.segments.len())
            .map(|n| self.segment_duration(n))
            .collect()
    }

    /// Absolute times at which segments end (the gate-crossing times for
    /// planner-produced trajectories).
    pub fn segment_end_times(&self) -> Vec<f64> {
        let mut t = self.start_time;
        self.segments
            .iter()
            .map(|s| {
                t += s[0].duration() * s.len() as f64;
                t
            })
            .collect()
    }

    /// `order`-th derivative at absolute time `t`. Exactly at an interior
    /// junction the right-hand piece wins; the trajectory end evaluates the
    /// last piece at its full duration.
    pub fn eval(&self, t: f64, order: usize) -> Result<DVector<f64>> {
        let (piece, local) = self.locate(t)?;
        Ok(piece.eval(local, order))
    }

    /// Derivatives `0..=max_order` at `t`, one column per order.
    pub fn derivatives(&self, t: f64, max_order: usize) -> Result<DMatrix<f64>> {
        let (piece, local) = self.locate(t)?;
        let mut out = DMatrix::zeros(self.dim(), max_order + 1);
        for k in 0..=max_order {
            out.set_column(k, &piece.eval(local, k));
        }
        Ok(out)
    }

    /// Convenience for 3-D trajectories.
    pub fn eval3(&self, t: f64, order: usize) -> Result<Vector3<f64>> {
        let v = self.eval(t, order)?;
        if v.len() != 3 {
            return Err(TrajError::DimensionMismatch {
                what: "trajectory dimension",
                expected: 3,
                actual: v.len(),
            });
        }
        Ok(Vector3::new(v[0], v[1], v[2]))
    }

    fn locate(&self, t: f64) -> Result<(&PolynomialPiece, f64)> {
        let t_end = self.end_time();
        if !t.is_finite() || t < self.start_time || t > t_end {
            return Err(TrajError::TimeOutOfRange {
                t,
                t_start: self.start_time,
                t_end,
            });
        }
        let mut seg_start = self.start_time;
        for (n, seg) in self.segments.iter().enumerate() {
            let seg_dur = seg[0].duration() * seg.len() as f64;
            let seg_end = seg_start + seg_dur;
            // ties resolve rightward except at the very end of the trajectory
            let last_seg = n + 1 == self.segments.len();
            if t < seg_end || (last_seg && t <= seg_end) {
                let local = t - seg_start;
                let h = seg[0].duration();
                // boundary k·h compared against multiples, not accumulated sums,
                // so an exact junction timestamp lands on the right-hand piece
                let mut idx = 0usize;
                while idx + 1 < seg.len() && local >= (idx + 1) as f64 * h {
                    idx += 1;
                }
                let mut local_piece = local - idx as f64 * h;
                if last_seg && idx == seg.len() - 1 && local_piece > h {
                    local_piece = h; // guard accumulated round-off at the end
                }
                return Ok((&seg[idx], local_piece));
            }
            seg_start = seg_end;
        }
        unreachable!("locate: range was checked above")
    }

    /// Arc length of the position curve by trapezoidal sampling of `‖σ′‖`.
    pub fn arc_length(&self, samples: usize) -> Result<f64> {
        let n = samples.max(2);
        let t0 = self.start_time;
        let dt = self.total_duration() / n as f64;
        let mut sum = 0.0;
        for j in 0..=n {
            let t = if j == n { self.end_time() } else { t0 + j as f64 * dt };
            let w = if j == 0 || j == n { 0.5 } else { 1.0 };
            sum += w * self.eval(t, 1)?.norm();
        }
        Ok(sum * dt)
    }
}
