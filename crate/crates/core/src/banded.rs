//! General band matrices with an LU factorization (partial pivoting).
//!
//! Block operators on a 1-D grid are stored node-major (`index = k * m + i`
//! for node `k` and component `i`), which keeps both the diffusion stencil and
//! the pointwise reaction coupling inside a band of half-width `m`.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BandError {
    #[error("matrix is singular (zero pivot in column {column})")]
    Singular { column: usize },
}

/// Square `n x n` matrix with `kl` sub- and `ku` super-diagonals.
#[derive(Debug, Clone, PartialEq)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = kl + ku + 1;
        BandMatrix {
            n,
            kl,
            ku,
            width,
            data: vec![0.0; n * width],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = BandMatrix::zeros(n, 0, 0);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_dense(a: &nalgebra::DMatrix<f64>) -> Self {
        let n = a.nrows();
        assert_eq!(n, a.ncols(), "matrix must be square");
        let b = n.saturating_sub(1);
        let mut m = BandMatrix::zeros(n, b, b);
        for i in 0..n {
            for j in 0..n {
                m.set(i, j, a[(i, j)]);
            }
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn lower_bandwidth(&self) -> usize {
        self.kl
    }

    pub fn upper_bandwidth(&self) -> usize {
        self.ku
    }

    pub fn in_band(&self, i: usize, j: usize) -> bool {
        i < self.n && j < self.n && j + self.kl >= i && j <= i + self.ku
    }

    fn slot(&self, i: usize, j: usize) -> usize {
        i * self.width + (j + self.kl - i)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if self.in_band(i, j) {
            self.data[self.slot(i, j)]
        } else {
            0.0
        }
    }

    /// Panics when `(i, j)` lies outside the band.
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        assert!(self.in_band(i, j), "({i}, {j}) outside band");
        let s = self.slot(i, j);
        self.data[s] = v;
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(self.in_band(i, j), "({i}, {j}) outside band");
        let s = self.slot(i, j);
        self.data[s] += v;
    }

    /// Column range stored for row `i`.
    pub fn row_range(&self, i: usize) -> std::ops::Range<usize> {
        i.saturating_sub(self.kl)..(i + self.ku + 1).min(self.n)
    }

    pub fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate().take(self.n) {
            let mut s = 0.0;
            for j in self.row_range(i) {
                s += self.data[self.slot(i, j)] * x[j];
            }
            *yi = s;
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.apply_into(x, &mut y);
        y
    }

    pub fn scale(&mut self, c: f64) {
        self.data.iter_mut().for_each(|v| *v *= c);
    }

    pub fn add_diagonal(&mut self, c: f64) {
        for i in 0..self.n {
            self.add(i, i, c);
        }
    }

    /// `self + c * other`; bandwidths are widened as needed.
    pub fn plus_scaled(&self, c: f64, other: &BandMatrix) -> BandMatrix {
        assert_eq!(self.n, other.n);
        let mut out = BandMatrix::zeros(self.n, self.kl.max(other.kl), self.ku.max(other.ku));
        for (m, f) in [(self, 1.0), (other, c)] {
            for i in 0..m.n {
                for j in m.row_range(i) {
                    out.add(i, j, f * m.get(i, j));
                }
            }
        }
        out
    }

    pub fn max_row_sum(&self) -> f64 {
        (0..self.n)
            .map(|i| self.row_range(i).map(|j| self.get(i, j)).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs_row_sum(&self) -> f64 {
        (0..self.n)
            .map(|i| self.row_range(i).map(|j| self.get(i, j).abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Smallest off-diagonal entry (`+inf` for 1x1).
    pub fn min_off_diagonal(&self) -> (f64, Option<(usize, usize)>) {
        let mut best = (f64::INFINITY, None);
        for i in 0..self.n {
            for j in self.row_range(i) {
                if i != j {
                    let v = self.get(i, j);
                    if v < best.0 {
                        best = (v, Some((i, j)));
                    }
                }
            }
        }
        best
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }

    /// For a matrix with nonpositive off-diagonal entries (a Z-matrix): true
    /// iff it is a nonsingular M-matrix, i.e. Gaussian elimination without
    /// pivoting meets only positive pivots.
    pub fn is_nonsingular_m_matrix(&self) -> bool {
        let mut a = self.clone();
        for k in 0..a.n {
            let pivot = a.get(k, k);
            if !(pivot > 0.0) {
                return false;
            }
            let last = (k + a.kl).min(a.n - 1);
            let last_col = (k + a.ku).min(a.n - 1);
            for i in k + 1..=last {
                let l = a.get(i, k) / pivot;
                if l == 0.0 {
                    continue;
                }
                for j in k + 1..=last_col {
                    let v = a.get(k, j);
                    if v != 0.0 && a.in_band(i, j) {
                        a.add(i, j, -l * v);
                    }
                }
            }
        }
        true
    }

    pub fn factor(&self) -> Result<BandLu, BandError> {
        BandLu::new(self)
    }
}

/// LU factors with row interchanges, laid out as in LAPACK `gbtrf`: the upper
/// factor gains `kl` extra super-diagonals from pivoting.
#[derive(Debug, Clone)]
pub struct BandLu {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
    pivots: Vec<usize>,
}

impl BandLu {
    fn new(a: &BandMatrix) -> Result<Self, BandError> {
        let n = a.n;
        let kl = a.kl;
        let ku = a.ku + a.kl;
        let width = 2 * kl + a.ku + 1;
        let mut lu = BandLu {
            n,
            kl,
            ku,
            width,
            data: vec![0.0; n * width],
            pivots: vec![0; n],
        };
        for i in 0..n {
            for j in a.row_range(i) {
                let s = lu.slot(i, j);
                lu.data[s] = a.get(i, j);
            }
        }
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = lu.data[lu.slot(k, k)].abs();
            for i in k + 1..=last_row {
                let v = lu.data[lu.slot(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            lu.pivots[k] = p;
            if best == 0.0 || !best.is_finite() {
                return Err(BandError::Singular { column: k });
            }
            let last_col = (k + ku).min(n - 1);
            if p != k {
                for j in k..=last_col {
                    let (sk, sp) = (lu.slot(k, j), lu.slot(p, j));
                    lu.data.swap(sk, sp);
                }
            }
            let pivot = lu.data[lu.slot(k, k)];
            for i in k + 1..=last_row {
                let sik = lu.slot(i, k);
                let l = lu.data[sik] / pivot;
                lu.data[sik] = l;
                if l == 0.0 {
                    continue;
                }
                for j in k + 1..=last_col {
                    let v = lu.data[lu.slot(k, j)];
                    let sij = lu.slot(i, j);
                    lu.data[sij] -= l * v;
                }
            }
        }
        Ok(lu)
    }

    fn slot(&self, i: usize, j: usize) -> usize {
        i * self.width + (j + self.kl - i)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Overwrite `b` with the solution of `A x = b`.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            if bk != 0.0 {
                for i in k + 1..=(k + self.kl).min(n - 1) {
                    b[i] -= self.data[self.slot(i, k)] * bk;
                }
            }
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for j in i + 1..=(i + self.ku).min(n - 1) {
                s -= self.data[self.slot(i, j)] * b[j];
            }
            b[i] = s / self.data[self.slot(i, i)];
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_band(n: usize, kl: usize, ku: usize, seed: u64) -> BandMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = BandMatrix::zeros(n, kl, ku);
        for i in 0..n {
            for j in a.row_range(i) {
                a.set(i, j, rng.random_range(-1.0..1.0));
            }
        }
        a
    }

    #[test]
    fn lu_matches_dense_solve() {
        for (n, kl, ku, seed) in [(1, 0, 0, 1), (7, 1, 1, 2), (40, 3, 2, 3), (33, 2, 4, 4)] {
            let a = random_band(n, kl, ku, seed);
            let b: Vec<f64> = (0..n).map(|i| (i as f64).sin() + 0.5).collect();
            let x = a.factor().unwrap().solve(&b);
            let r = a.apply(&x);
            for (ri, bi) in r.iter().zip(&b) {
                assert!((ri - bi).abs() < 1e-9, "n={n}: {ri} vs {bi}");
            }
        }
    }

    #[test]
    fn detects_singularity() {
        let mut a = BandMatrix::zeros(3, 1, 1);
        a.set(0, 0, 1.0);
        a.set(0, 1, 1.0);
        a.set(1, 0, 1.0);
        a.set(1, 1, 1.0);
        a.set(2, 2, 1.0);
        assert!(matches!(a.factor(), Err(BandError::Singular { .. })));
    }

    #[test]
    fn m_matrix_test() {
        // -(Neumann Laplacian) is singular; adding a positive shift fixes it
        let g = crate::grid::Grid::unit(9).unwrap();
        let lap = g.laplacian(1.0);
        let mut a = BandMatrix::zeros(9, 1, 1);
        for i in 0..9 {
            for j in a.row_range(i) {
                a.set(i, j, -lap.get(i, j));
            }
        }
        assert!(!a.is_nonsingular_m_matrix());
        a.add_diagonal(1e-3);
        assert!(a.is_nonsingular_m_matrix());
    }
}
