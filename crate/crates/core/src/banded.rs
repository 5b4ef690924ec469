//! Banded LU factorization with partial pivoting.
//!
//! Storage follows the LAPACK band convention: entry `(i, j)` lives at band
//! row `kl + ku + i − j`, and the extra `kl` rows on top hold the fill-in that
//! row interchanges can create, so `U` may grow to bandwidth `kl + ku`. Both
//! the factorization and the two triangular solves run in time linear in the
//! matrix size for fixed bandwidths, which is what makes the spline mapping
//! linear in the number of pieces.

use nalgebra::DMatrix;

use crate::error::{Result, TrajError};

/// Banded matrix builder; consumed by [`BandedMatrix::factorize`].
#[derive(Debug, Clone)]
pub struct BandedMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    /// `(2kl + ku + 1) × n`, row-major.
    data: Vec<f64>,
}

impl BandedMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        assert!(n > 0, "empty system");
        Self {
            n,
            kl,
            ku,
            data: vec![0.0; (2 * kl + ku + 1) * n],
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn lower_bandwidth(&self) -> usize {
        self.kl
    }

    pub fn upper_bandwidth(&self) -> usize {
        self.ku
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        (self.kl + self.ku + i - j) * self.n + j
    }

    #[inline]
    fn in_band(&self, i: usize, j: usize) -> bool {
        i < self.n && j < self.n && i + self.ku >= j && j + self.kl >= i
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        // reads inside the fill-in band are valid (they are zero before
        // factorization), anything wider is structurally zero
        if i < self.n && j < self.n && i + self.ku + self.kl >= j && j + self.kl >= i {
            self.data[self.slot(i, j)]
        } else {
            0.0
        }
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        assert!(
            self.in_band(i, j),
            "entry ({i}, {j}) outside band kl={} ku={} n={}",
            self.kl,
            self.ku,
            self.n
        );
        let s = self.slot(i, j);
        self.data[s] = value;
    }

    pub fn add(&mut self, i: usize, j: usize, value: f64) {
        assert!(
            self.in_band(i, j),
            "entry ({i}, {j}) outside band kl={} ku={} n={}",
            self.kl,
            self.ku,
            self.n
        );
        let s = self.slot(i, j);
        self.data[s] += value;
    }

    /// Dense copy (tests and small-scale debugging only).
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            let jlo = i.saturating_sub(self.kl);
            let jhi = (i + self.ku).min(self.n - 1);
            for j in jlo..=jhi {
                m[(i, j)] = self.data[self.slot(i, j)];
            }
        }
        m
    }

    /// PLU factorization with row partial pivoting, in place.
    pub fn factorize(mut self) -> Result<BandedLu> {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        let scale = self
            .data
            .iter()
            .fold(0.0f64, |acc, v| acc.max(v.abs()))
            .max(f64::MIN_POSITIVE);
        let tiny = f64::EPSILON * scale;
        let mut ipiv = vec![0usize; n];
        for k in 0..n {
            let imax = (k + kl).min(n - 1);
            let mut piv = k;
            let mut piv_abs = self.data[self.slot(k, k)].abs();
            for i in k + 1..=imax {
                let a = self.data[self.slot(i, k)].abs();
                if a > piv_abs {
                    piv_abs = a;
                    piv = i;
                }
            }
            if !(piv_abs > tiny) || !piv_abs.is_finite() {
                return Err(TrajError::SingularSystem { pivot: k });
            }
            ipiv[k] = piv;
            let jhi = (k + ku + kl).min(n - 1);
            if piv != k {
                for j in k..=jhi {
                    let (a, b) = (self.slot(k, j), self.slot(piv, j));
                    self.data.swap(a, b);
                }
            }
            let pivot = self.data[self.slot(k, k)];
            for i in k + 1..=imax {
                let lik = self.slot(i, k);
                let l = self.data[lik] / pivot;
                self.data[lik] = l;
                if l != 0.0 {
                    for j in k + 1..=jhi {
                        let ks = self.slot(k, j);
                        let is = self.slot(i, j);
                        self.data[is] -= l * self.data[ks];
                    }
                }
            }
        }
        Ok(BandedLu { mat: self, ipiv })
    }
}

/// Factorized banded system: `P·A = L·U` with the multipliers stored in the
/// lower band and `U` (bandwidth `kl + ku`) in the upper band.
#[derive(Debug, Clone)]
pub struct BandedLu {
    mat: BandedMatrix,
    ipiv: Vec<usize>,
}

impl BandedLu {
    pub fn size(&self) -> usize {
        self.mat.n
    }

    /// Solve `A·X = B` in place, one column at a time.
    pub fn solve_in_place(&self, rhs: &mut DMatrix<f64>) {
        let (n, kl) = (self.mat.n, self.mat.kl);
        let ubw = self.mat.kl + self.mat.ku;
        let m = rhs.ncols();
        for c in 0..m {
            // P·b, then L⁻¹ interleaved
            for k in 0..n {
                let piv = self.ipiv[k];
                if piv != k {
                    rhs.swap((k, c), (piv, c));
                }
                let bk = rhs[(k, c)];
                if bk != 0.0 {
                    let imax = (k + kl).min(n - 1);
                    for i in k + 1..=imax {
                        rhs[(i, c)] -= self.mat.data[self.mat.slot(i, k)] * bk;
                    }
                }
            }
            // U⁻¹
            for i in (0..n).rev() {
                let jhi = (i + ubw).min(n - 1);
                let mut acc = rhs[(i, c)];
                for j in i + 1..=jhi {
                    acc -= self.mat.data[self.mat.slot(i, j)] * rhs[(j, c)];
                }
                rhs[(i, c)] = acc / self.mat.data[self.mat.slot(i, i)];
            }
        }
    }

    /// Solve `Aᵀ·X = B` in place (the adjoint pass of gradient propagation).
    pub fn solve_transpose_in_place(&self, rhs: &mut DMatrix<f64>) {
        let (n, kl) = (self.mat.n, self.mat.kl);
        let ubw = self.mat.kl + self.mat.ku;
        let m = rhs.ncols();
        for c in 0..m {
            // Uᵀ is lower triangular: forward substitution
            for i in 0..n {
                let jlo = i.saturating_sub(ubw);
                let mut acc = rhs[(i, c)];
                for j in jlo..i {
                    acc -= self.mat.data[self.mat.slot(j, i)] * rhs[(j, c)];
                }
                rhs[(i, c)] = acc / self.mat.data[self.mat.slot(i, i)];
            }
            // Lᵀ (unit upper), then undo the interchanges in reverse order
            for k in (0..n).rev() {
                let imax = (k + kl).min(n - 1);
                let mut acc = rhs[(k, c)];
                for i in k + 1..=imax {
                    acc -= self.mat.data[self.mat.slot(i, k)] * rhs[(i, c)];
                }
                rhs[(k, c)] = acc;
                let piv = self.ipiv[k];
                if piv != k {
                    rhs.swap((k, c), (piv, c));
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_banded(n: usize, kl: usize, ku: usize, seed: u64) -> BandedMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = BandedMatrix::zeros(n, kl, ku);
        for i in 0..n {
            let jlo = i.saturating_sub(kl);
            let jhi = (i + ku).min(n - 1);
            for j in jlo..=jhi {
                b.set(i, j, rng.gen_range(-1.0..1.0));
            }
            // diagonal boost keeps the random systems comfortably regular
            b.add(i, i, 3.0);
        }
        b
    }

    #[test]
    fn get_set_roundtrip_and_outside_band_reads_zero() {
        let mut b = BandedMatrix::zeros(6, 2, 1);
        b.set(3, 2, 4.5);
        assert_eq!(b.get(3, 2), 4.5);
        assert_eq!(b.get(0, 5), 0.0);
    }

    #[test]
    #[should_panic(expected = "outside band")]
    fn set_outside_band_panics() {
        let mut b = BandedMatrix::zeros(6, 1, 1);
        b.set(0, 4, 1.0);
    }

    #[test]
    fn solve_matches_dense_lu() {
        for seed in 0..20u64 {
            let n = 24;
            let b = random_banded(n, 4, 2, seed);
            let dense = b.to_dense();
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let rhs = DMatrix::from_fn(n, 3, |_, _| rng.gen_range(-1.0..1.0));

            let lu = b.factorize().unwrap();
            let mut x = rhs.clone();
            lu.solve_in_place(&mut x);

            let x_dense = dense.clone().lu().solve(&rhs).unwrap();
            assert!(
                (&x - &x_dense).amax() <= 1e-10,
                "seed {seed}: banded vs dense diff {}",
                (&x - &x_dense).amax()
            );
            // and the residual itself
            assert!((dense * &x - &rhs).amax() <= 1e-10);
        }
    }

    #[test]
    fn transpose_solve_matches_dense() {
        for seed in 0..20u64 {
            let n = 30;
            let b = random_banded(n, 3, 5, seed);
            let dense_t = b.to_dense().transpose();
            let mut rng = ChaCha8Rng::seed_from_u64(2000 + seed);
            let rhs = DMatrix::from_fn(n, 2, |_, _| rng.gen_range(-1.0..1.0));

            let lu = b.factorize().unwrap();
            let mut x = rhs.clone();
            lu.solve_transpose_in_place(&mut x);

            let x_dense = dense_t.clone().lu().solve(&rhs).unwrap();
            assert!(
                (&x - &x_dense).amax() <= 1e-10,
                "seed {seed}: diff {}",
                (&x - &x_dense).amax()
            );
            assert!((dense_t * &x - &rhs).amax() <= 1e-10);
        }
    }

    #[test]
    fn pivoting_handles_zero_leading_diagonal() {
        // first diagonal entry zero forces an interchange immediately
        let mut b = BandedMatrix::zeros(4, 1, 1);
        b.set(0, 0, 0.0);
        b.set(0, 1, 2.0);
        b.set(1, 0, 1.0);
        b.set(1, 1, 1.0);
        b.set(1, 2, 1.0);
        b.set(2, 1, 3.0);
        b.set(2, 2, 1.0);
        b.set(2, 3, 1.0);
        b.set(3, 2, 1.0);
        b.set(3, 3, 2.0);
        let dense = b.to_dense();
        let rhs = DMatrix::from_column_slice(4, 1, &[1.0, 2.0, 3.0, 4.0]);
        let lu = b.factorize().unwrap();
        let mut x = rhs.clone();
        lu.solve_in_place(&mut x);
        assert!((dense * &x - &rhs).amax() <= 1e-12);
    }

    #[test]
    fn singular_system_reports_pivot_column() {
        // two identical rows ⇒ exact rank deficiency
        let mut b = BandedMatrix::zeros(3, 2, 2);
        for j in 0..3 {
            b.set(0, j, 1.0 + j as f64);
            b.set(1, j, 1.0 + j as f64);
            b.set(2, j, if j == 2 { 5.0 } else { 0.0 });
        }
        match b.factorize() {
            Err(TrajError::SingularSystem { pivot }) => assert_eq!(pivot, 1),
            other => panic!("expected singular error, got {other:?}"),
        }
    }

    #[test]
    fn factorization_is_deterministic() {
        let b = random_banded(40, 4, 4, 99);
        let lu1 = b.clone().factorize().unwrap();
        let lu2 = b.factorize().unwrap();
        assert_eq!(lu1.mat.data, lu2.mat.data);
        assert_eq!(lu1.ipiv, lu2.ipiv);
    }
}
