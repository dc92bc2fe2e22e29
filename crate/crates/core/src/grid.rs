//! Square row-major grids used for phases, fields and patterns.

use serde::{Deserialize, Serialize};

/// A square `n x n` grid stored row-major. Row index is the slow axis and is
/// treated as the y coordinate throughout the crate; column index is x.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid<T> {
    n: usize,
    data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn filled(n: usize, value: T) -> Self {
        Grid {
            n,
            data: vec![value; n * n],
        }
    }
}

impl<T> Grid<T> {
    pub fn from_vec(n: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), n * n, "grid data must be n*n");
        Grid { n, data }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> &T {
        &self.data[row * self.n + col]
    }

    #[inline]
    pub fn at_mut(&mut self, row: usize, col: usize) -> &mut T {
        &mut self.data[row * self.n + col]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn map<U, F: FnMut(&T) -> U>(&self, f: F) -> Grid<U> {
        Grid {
            n: self.n,
            data: self.data.iter().map(f).collect(),
        }
    }

    /// Physical coordinate of a sample index for an even grid centred at
    /// index `n/2`, so the centre sample maps to 0.
    #[inline]
    pub fn coord(&self, index: usize, pitch: f64) -> f64 {
        (index as f64 - (self.n / 2) as f64) * pitch
    }
}

impl Grid<f64> {
    pub fn zeros(n: usize) -> Self {
        Grid::filled(n, 0.0)
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / (self.data.len() as f64)
    }

    /// Centred crop of the middle `m x m` sub-grid; `m` and `n` must share
    /// parity so sample centres stay aligned.
    pub fn crop_centered(&self, m: usize) -> Grid<f64> {
        assert!(m <= self.n);
        let off = (self.n - m) / 2;
        let mut out = Grid::zeros(m);
        for r in 0..m {
            for c in 0..m {
                *out.at_mut(r, c) = *self.at(r + off, c + off);
            }
        }
        out
    }
}
