//! Time-uniform spline solving with a cached factorization.
//!
//! When every piece of a segment shares one duration `h = T/M`, the spline
//! system can be solved on the normalized time axis where each piece spans
//! `[0, 1]`: the system matrix becomes `A(1)`, which depends only on `(s, M)`
//! and is factorized once. A concrete duration enters purely through diagonal
//! temporal scalings — boundary derivative `k` is multiplied by `h^k` on the
//! way in, and coefficient row `k` by `h^{−k}` on the way out. Re-solving for
//! a new duration therefore costs two banded triangular solves and two
//! diagonal scalings instead of a fresh factorization, and the same holds for
//! the adjoint pass; the duration gradient needs one extra inner product per
//! channel.

use nalgebra::DMatrix;

use crate::banded::BandedLu;
use crate::error::{Result, TrajError};
use crate::minco::{assemble_matrix, assemble_rhs};
use crate::poly::PolynomialPiece;

/// Powers `(1, x, x², …, x^{len−1})` — the diagonal of a temporal scaling.
pub fn scale_powers(x: f64, len: usize) -> Vec<f64> {
    let mut v = Vec::with_capacity(len);
    let mut acc = 1.0;
    for _ in 0..len {
        v.push(acc);
        acc *= x;
    }
    v
}

/// Gradients of a scalar objective with respect to the uniform-segment inputs.
#[derive(Debug, Clone)]
pub struct UniformGradients {
    pub by_boundary_start: DMatrix<f64>,
    pub by_boundary_end: DMatrix<f64>,
    pub by_waypoints: DMatrix<f64>,
    /// Total derivative with respect to the segment duration.
    pub by_time: f64,
}

/// Factorized normalized system for a fixed `(order, pieces)` pair.
#[derive(Debug)]
pub struct UniformMincoCache {
    order: usize,
    pieces: usize,
    lu: BandedLu,
}

impl UniformMincoCache {
    pub fn new(order: usize, pieces: usize) -> Result<Self> {
        if order < 2 {
            return Err(TrajError::InvalidConfig(format!(
                "control order must be ≥ 2, got {order}"
            )));
        }
        if pieces == 0 {
            return Err(TrajError::InvalidConfig("need at least one piece".into()));
        }
        let a = assemble_matrix(order, &vec![1.0; pieces]);
        Ok(Self {
            order,
            pieces,
            lu: a.factorize()?,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn pieces(&self) -> usize {
        self.pieces
    }

    pub fn system_size(&self) -> usize {
        2 * self.order * self.pieces
    }

    fn check_inputs(
        &self,
        total_time: f64,
        boundary_start: &DMatrix<f64>,
        boundary_end: &DMatrix<f64>,
        waypoints: Option<&DMatrix<f64>>,
    ) -> Result<usize> {
        if !(total_time.is_finite() && total_time > 0.0) {
            return Err(TrajError::InvalidDuration {
                duration: total_time,
            });
        }
        let m = boundary_start.nrows();
        if boundary_start.ncols() != self.order || boundary_end.ncols() != self.order {
            return Err(TrajError::DimensionMismatch {
                what: "boundary columns",
                expected: self.order,
                actual: boundary_start.ncols().max(boundary_end.ncols()),
            });
        }
        if boundary_end.nrows() != m {
            return Err(TrajError::DimensionMismatch {
                what: "boundary rows",
                expected: m,
                actual: boundary_end.nrows(),
            });
        }
        if let Some(w) = waypoints {
            if w.ncols() != self.pieces - 1 || (w.ncols() > 0 && w.nrows() != m) {
                return Err(TrajError::DimensionMismatch {
                    what: "waypoint shape",
                    expected: m * (self.pieces - 1),
                    actual: w.nrows() * w.ncols(),
                });
            }
        }
        Ok(m)
    }

    /// Solve for the real-time coefficients of a segment of duration
    /// `total_time` (each piece spans `total_time / pieces`).
    pub fn solve(
        &self,
        total_time: f64,
        boundary_start: &DMatrix<f64>,
        boundary_end: &DMatrix<f64>,
        waypoints: &DMatrix<f64>,
    ) -> Result<DMatrix<f64>> {
        self.check_inputs(total_time, boundary_start, boundary_end, Some(waypoints))?;
        let s = self.order;
        let h = total_time / self.pieces as f64;

        // normalize boundary derivatives: order k picks up h^k
        let hp = scale_powers(h, s);
        let mut bs = boundary_start.clone();
        let mut be = boundary_end.clone();
        for k in 1..s {
            bs.column_mut(k).scale_mut(hp[k]);
            be.column_mut(k).scale_mut(hp[k]);
        }

        let mut coeffs = assemble_rhs(s, self.pieces, &bs, &be, waypoints);
        self.lu.solve_in_place(&mut coeffs);

        // denormalize: coefficient row of power k picks up h^{−k}
        let inv = scale_powers(1.0 / h, 2 * s);
        for i in 0..self.pieces {
            for k in 1..2 * s {
                coeffs.row_mut(2 * s * i + k).scale_mut(inv[k]);
            }
        }
        Ok(coeffs)
    }

    /// Split solved coefficients into equal-duration pieces.
    pub fn segment_pieces(
        &self,
        coeffs: &DMatrix<f64>,
        total_time: f64,
    ) -> Result<Vec<PolynomialPiece>> {
        let s2 = 2 * self.order;
        let h = total_time / self.pieces as f64;
        (0..self.pieces)
            .map(|i| PolynomialPiece::new(coeffs.rows(s2 * i, s2).into_owned(), h))
            .collect()
    }

    /// Adjoint pass of [`UniformMincoCache::solve`].
    ///
    /// `grad_coeffs` is the objective gradient with respect to the real-time
    /// coefficients returned by `solve`; `grad_time` is the explicit partial
    /// with respect to the duration holding those coefficients fixed. The
    /// result combines three duration channels: the explicit partial, the
    /// `h^{−k}` coefficient rescaling, and the `h^k` boundary normalization.
    pub fn backprop(
        &self,
        total_time: f64,
        boundary_start: &DMatrix<f64>,
        boundary_end: &DMatrix<f64>,
        coeffs: &DMatrix<f64>,
        grad_coeffs: &DMatrix<f64>,
        grad_time: f64,
    ) -> Result<UniformGradients> {
        let m = self.check_inputs(total_time, boundary_start, boundary_end, None)?;
        let s = self.order;
        let n = self.system_size();
        if grad_coeffs.nrows() != n || grad_coeffs.ncols() != m || coeffs.shape() != grad_coeffs.shape() {
            return Err(TrajError::DimensionMismatch {
                what: "coefficient gradient shape",
                expected: n * m,
                actual: grad_coeffs.nrows() * grad_coeffs.ncols(),
            });
        }
        let h = total_time / self.pieces as f64;

        // gradient w.r.t. normalized coefficients carries the same h^{−k}
        // row scaling as the coefficients themselves
        let inv = scale_powers(1.0 / h, 2 * s);
        let mut adj = grad_coeffs.clone();
        for i in 0..self.pieces {
            for k in 1..2 * s {
                adj.row_mut(2 * s * i + k).scale_mut(inv[k]);
            }
        }
        self.lu.solve_transpose_in_place(&mut adj);

        let hp = scale_powers(h, s);
        let mut by_boundary_start = DMatrix::zeros(m, s);
        let mut by_boundary_end = DMatrix::zeros(m, s);
        for k in 0..s {
            by_boundary_start.set_column(k, &(adj.row(k).transpose() * hp[k]));
            by_boundary_end.set_column(k, &(adj.row(n - s + k).transpose() * hp[k]));
        }
        let mut by_waypoints = DMatrix::zeros(m, self.pieces - 1);
        for j in 0..self.pieces - 1 {
            by_waypoints.set_column(j, &adj.row(s + 2 * s * j).transpose());
        }

        // duration channels through h = T/M
        let mut dh = 0.0;
        // (a) row rescaling: ∂ĉ_k/∂h = −(k/h)·ĉ_k with normalized coeffs fixed
        for i in 0..self.pieces {
            for k in 1..2 * s {
                let r = 2 * s * i + k;
                dh -= k as f64 / h * grad_coeffs.row(r).dot(&coeffs.row(r));
            }
        }
        // (b) boundary normalization: ∂(h^k z_k)/∂h = k·h^{k−1}·z_k
        for k in 1..s {
            let f = k as f64 * hp[k - 1];
            dh += f * adj.row(k).dot(&boundary_start.column(k).transpose());
            dh += f * adj.row(n - s + k).dot(&boundary_end.column(k).transpose());
        }

        Ok(UniformGradients {
            by_boundary_start,
            by_boundary_end,
            by_waypoints,
            by_time: grad_time + dh / self.pieces as f64,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::minco::{self, MincoProblem};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn scale_powers_basics() {
        assert_eq!(scale_powers(2.0, 4), vec![1.0, 2.0, 4.0, 8.0]);
        assert_eq!(scale_powers(1.0, 3), vec![1.0; 3]);
        assert!(scale_powers(0.5, 1) == vec![1.0]);
    }

    #[test]
    fn scale_then_inverse_scale_is_identity() {
        // round trip of the temporal scaling at machine precision
        let x = 1.7;
        let fwd = scale_powers(x, 8);
        let bwd = scale_powers(1.0 / x, 8);
        for k in 0..8 {
            assert_relative_eq!(fwd[k] * bwd[k], 1.0, max_relative = 1e-13);
        }
    }

    fn random_inputs(
        rng: &mut ChaCha8Rng,
        s: usize,
        pieces: usize,
        m: usize,
    ) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        (
            DMatrix::from_fn(m, s, |_, _| rng.gen_range(-2.0..2.0)),
            DMatrix::from_fn(m, s, |_, _| rng.gen_range(-2.0..2.0)),
            DMatrix::from_fn(m, pieces - 1, |_, _| rng.gen_range(-3.0..3.0)),
        )
    }

    fn equivalent_general(
        s: usize,
        pieces: usize,
        total_time: f64,
        bs: &DMatrix<f64>,
        be: &DMatrix<f64>,
        wp: &DMatrix<f64>,
    ) -> MincoProblem {
        MincoProblem {
            order: s,
            times: vec![total_time / pieces as f64; pieces],
            boundary_start: bs.clone(),
            boundary_end: be.clone(),
            waypoints: wp.clone(),
        }
    }

    #[test]
    fn unit_piece_duration_reduces_to_general_solve() {
        // T = M ⇒ h = 1: the scalings are identities
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (bs, be, wp) = random_inputs(&mut rng, 3, 4, 3);
        let cache = UniformMincoCache::new(3, 4).unwrap();
        let c_uniform = cache.solve(4.0, &bs, &be, &wp).unwrap();
        let general = minco::solve(&equivalent_general(3, 4, 4.0, &bs, &be, &wp)).unwrap();
        assert!((&c_uniform - general.coeffs()).amax() <= 1e-12);
    }

    #[test]
    fn coefficients_match_general_solve_for_arbitrary_duration() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for trial in 0..40 {
            let s = if rng.gen_bool(0.5) { 3 } else { 4 };
            let pieces = rng.gen_range(2..=8);
            let total: f64 = rng.gen_range(0.5..6.0);
            let (bs, be, wp) = random_inputs(&mut rng, s, pieces, 3);
            let cache = UniformMincoCache::new(s, pieces).unwrap();
            let c_uniform = cache.solve(total, &bs, &be, &wp).unwrap();
            let general =
                minco::solve(&equivalent_general(s, pieces, total, &bs, &be, &wp)).unwrap();
            let scale = general.coeffs().amax().max(1.0);
            let diff = (&c_uniform - general.coeffs()).amax();
            assert!(
                diff <= 1e-9 * scale,
                "trial {trial}: rel diff {}",
                diff / scale
            );
        }
    }

    #[test]
    fn one_cache_serves_many_durations() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let cache = UniformMincoCache::new(3, 5).unwrap();
        for &total in &[0.7, 2.0, 9.5] {
            let (bs, be, wp) = random_inputs(&mut rng, 3, 5, 3);
            let c = cache.solve(total, &bs, &be, &wp).unwrap();
            let general =
                minco::solve(&equivalent_general(3, 5, total, &bs, &be, &wp)).unwrap();
            assert!((&c - general.coeffs()).amax() <= 1e-9 * general.coeffs().amax().max(1.0));
        }
    }

    #[test]
    fn waypoints_hit_at_uniform_fractions() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (bs, be, wp) = random_inputs(&mut rng, 3, 4, 3);
        let total = 3.3;
        let cache = UniformMincoCache::new(3, 4).unwrap();
        let coeffs = cache.solve(total, &bs, &be, &wp).unwrap();
        let pieces = cache.segment_pieces(&coeffs, total).unwrap();
        let h = total / 4.0;
        for j in 0..3 {
            let pos = pieces[j].eval(h, 0);
            assert!((pos - wp.column(j)).amax() <= 1e-9);
        }
    }

    #[test]
    fn rejects_nonpositive_total_time() {
        let cache = UniformMincoCache::new(3, 3).unwrap();
        let z = DMatrix::zeros(3, 3);
        let w = DMatrix::zeros(3, 2);
        assert!(matches!(
            cache.solve(0.0, &z, &z, &w),
            Err(TrajError::InvalidDuration { .. })
        ));
    }

    #[test]
    fn backprop_gradients_match_general_backprop() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for _ in 0..20 {
            let s = if rng.gen_bool(0.5) { 3 } else { 4 };
            let pieces = rng.gen_range(2..=6);
            let total: f64 = rng.gen_range(0.8..5.0);
            let (bs, be, wp) = random_inputs(&mut rng, s, pieces, 3);
            let n = 2 * s * pieces;
            let w_c = DMatrix::from_fn(n, 3, |_, _| rng.gen_range(-1.0..1.0));
            let g_t: f64 = rng.gen_range(-1.0..1.0);

            let cache = UniformMincoCache::new(s, pieces).unwrap();
            let coeffs = cache.solve(total, &bs, &be, &wp).unwrap();
            let ug = cache
                .backprop(total, &bs, &be, &coeffs, &w_c, g_t)
                .unwrap();

            let general =
                minco::solve(&equivalent_general(s, pieces, total, &bs, &be, &wp)).unwrap();
            // the same explicit time sensitivity, expressed per piece
            let gg = general
                .backprop(&w_c, &vec![g_t; pieces])
                .unwrap();
            // chain rule through T̂ᵢ = T/M: total derivative is the piece mean
            let dt_general: f64 = gg.by_times.iter().sum::<f64>() / pieces as f64;

            assert!((&ug.by_boundary_start - &gg.by_boundary_start).amax() <= 1e-6);
            assert!((&ug.by_boundary_end - &gg.by_boundary_end).amax() <= 1e-6);
            assert!((&ug.by_waypoints - &gg.by_waypoints).amax() <= 1e-6);
            assert!(
                (ug.by_time - dt_general).abs() <= 1e-6 * dt_general.abs().max(1.0),
                "time gradient {} vs {}",
                ug.by_time,
                dt_general
            );
        }
    }

    #[test]
    fn backprop_duration_gradient_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        for _ in 0..10 {
            let (bs, be, wp) = random_inputs(&mut rng, 3, 4, 3);
            let total: f64 = rng.gen_range(1.0..4.0);
            let w_c = DMatrix::from_fn(24, 3, |_, _| rng.gen_range(-1.0..1.0));
            let cache = UniformMincoCache::new(3, 4).unwrap();

            let f = |t: f64| cache.solve(t, &bs, &be, &wp).unwrap().dot(&w_c);
            let h = 1e-6;
            let fd = (f(total + h) - f(total - h)) / (2.0 * h);

            let coeffs = cache.solve(total, &bs, &be, &wp).unwrap();
            let ug = cache.backprop(total, &bs, &be, &coeffs, &w_c, 0.0).unwrap();
            assert!(
                (ug.by_time - fd).abs() <= 1e-5 * fd.abs().max(1.0),
                "dF/dT {} vs fd {}",
                ug.by_time,
                fd
            );
        }
    }

    #[test]
    fn boundary_gradient_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(66);
        let (bs, be, wp) = random_inputs(&mut rng, 3, 3, 3);
        let total = 2.4;
        let w_c = DMatrix::from_fn(18, 3, |_, _| rng.gen_range(-1.0..1.0));
        let cache = UniformMincoCache::new(3, 3).unwrap();
        let coeffs = cache.solve(total, &bs, &be, &wp).unwrap();
        let ug = cache.backprop(total, &bs, &be, &coeffs, &w_c, 0.0).unwrap();

        let h = 1e-6;
        for r in 0..3 {
            for c in 0..3 {
                let mut p = bs.clone();
                let mut m = bs.clone();
                p[(r, c)] += h;
                m[(r, c)] -= h;
                let fd = (cache.solve(total, &p, &be, &wp).unwrap().dot(&w_c)
                    - cache.solve(total, &m, &be, &wp).unwrap().dot(&w_c))
                    / (2.0 * h);
                assert!(
                    (ug.by_boundary_start[(r, c)] - fd).abs() <= 1e-5 * fd.abs().max(1.0),
                    "start[{r},{c}]"
                );
            }
        }
    }
}
