//! Dense square matrices in row-major `f64` storage.
//!
//! Queries rarely exceed a few hundred documents, so everything is a flat
//! `Vec<f64>` with no sparsity or blocking.

use std::fmt;

/// A dense J×J matrix of finite reals.
///
/// Used both for the nonnegative pre-Sinkhorn output of the parameterization
/// and for the (near-)doubly-stochastic marginal matrix Π.
#[derive(Clone, PartialEq)]
pub struct SquareMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    /// All-zero matrix of dimension `n`.
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![0.0; n * n] }
    }

    /// Matrix filled with a constant.
    pub fn filled(n: usize, value: f64) -> Self {
        Self { n, data: vec![value; n * n] }
    }

    /// Identity matrix.
    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Build from row slices. Panics if the rows are ragged or not square.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for row in rows {
            assert_eq!(row.len(), n, "rows must form a square matrix");
            data.extend_from_slice(row);
        }
        Self { n, data }
    }

    /// Build from a flat row-major vector of length `n * n`.
    pub fn from_vec(n: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), n * n, "flat data must have length n*n");
        Self { n, data }
    }

    /// The permutation matrix S with `S[(s[k], k)] = 1`, where `s[k]` is the
    /// document at rank `k`.
    pub fn from_permutation(ranks: &[usize]) -> Self {
        let n = ranks.len();
        let mut m = Self::zeros(n);
        for (k, &j) in ranks.iter().enumerate() {
            m[(j, k)] = 1.0;
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.data[j * self.n..(j + 1) * self.n]
    }

    pub fn row_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.n..(j + 1) * self.n]
    }

    pub fn row_sum(&self, j: usize) -> f64 {
        self.row(j).iter().sum()
    }

    pub fn col_sum(&self, k: usize) -> f64 {
        (0..self.n).map(|j| self[(j, k)]).sum()
    }

    /// Flat row-major view of the entries.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.data.iter().copied()
    }

    /// True if every entry is finite.
    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Entrywise `self + c`.
    pub fn add_scalar(&self, c: f64) -> Self {
        Self { n: self.n, data: self.data.iter().map(|x| x + c).collect() }
    }

    /// Entrywise `self * c`.
    pub fn scale(&self, c: f64) -> Self {
        Self { n: self.n, data: self.data.iter().map(|x| x * c).collect() }
    }

    /// Largest absolute entrywise difference to `other`.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.n, other.n);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl std::ops::Index<(usize, usize)> for SquareMatrix {
    type Output = f64;
    fn index(&self, (j, k): (usize, usize)) -> &f64 {
        &self.data[j * self.n + k]
    }
}

impl std::ops::IndexMut<(usize, usize)> for SquareMatrix {
    fn index_mut(&mut self, (j, k): (usize, usize)) -> &mut f64 {
        &mut self.data[j * self.n + k]
    }
}

impl fmt::Debug for SquareMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "SquareMatrix({}x{}) [", self.n, self.n)?;
        for j in 0..self.n {
            writeln!(f, "  {:?}", self.row(j))?;
        }
        write!(f, "]")
    }
}
