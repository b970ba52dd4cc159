//! Compressed sparse row matrices assembled from local element blocks.

use std::fmt::Write as _;

use rayon::prelude::*;

/// A dense local block `rows x cols` (row-major) scattered into global
/// indices, together with the triangles that own it.
#[derive(Debug, Clone)]
pub struct Patch {
    pub owners: Vec<usize>,
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    pub values: Vec<f64>,
}

impl Patch {
    pub fn new(owners: Vec<usize>, rows: Vec<usize>, cols: Vec<usize>) -> Self {
        let values = vec![0.0; rows.len() * cols.len()];
        Self { owners, rows, cols, values }
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let n = self.cols.len();
        self.values[i * n + j] += v;
    }

    /// `x_rows^T P y_cols`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        let n = self.cols.len();
        self.rows
            .iter()
            .enumerate()
            .map(|(i, &r)| {
                let row = &self.values[i * n..(i + 1) * n];
                x[r] * row.iter().zip(&self.cols).map(|(v, &c)| v * y[c]).sum::<f64>()
            })
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self { nrows, ncols, indptr: vec![0; nrows + 1], indices: Vec::new(), values: Vec::new() }
    }

    /// Sum duplicate `(row, col, value)` entries. The summation order is the
    /// input order within each entry, so the result is deterministic.
    pub fn from_triplets(nrows: usize, ncols: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut indptr = vec![0; nrows + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            assert!(r < nrows && c < ncols, "entry ({r}, {c}) outside {nrows}x{ncols}");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                indices.push(c);
                values.push(v);
                indptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..nrows {
            indptr[r + 1] += indptr[r];
        }
        Self { nrows, ncols, indptr, indices, values }
    }

    pub fn from_patches(nrows: usize, ncols: usize, patches: &[Patch]) -> Self {
        let n: usize = patches.iter().map(|p| p.values.len()).sum();
        let mut triplets = Vec::with_capacity(n);
        for p in patches {
            let nc = p.cols.len();
            for (i, &r) in p.rows.iter().enumerate() {
                for (j, &c) in p.cols.iter().enumerate() {
                    triplets.push((r, c, p.values[i * nc + j]));
                }
            }
        }
        Self::from_triplets(nrows, ncols, triplets)
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows)
            .flat_map(move |r| (self.indptr[r]..self.indptr[r + 1]).map(move |k| (r, self.indices[k], self.values[k])))
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let row = &self.indices[self.indptr[r]..self.indptr[r + 1]];
        match row.binary_search(&c) {
            Ok(k) => self.values[self.indptr[r] + k],
            Err(_) => 0.0,
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        (0..self.nrows)
            .into_par_iter()
            .map(|r| (self.indptr[r]..self.indptr[r + 1]).map(|k| self.values[k] * x[self.indices[k]]).sum())
            .collect()
    }

    /// `y^T A x`.
    pub fn bilinear(&self, y: &[f64], x: &[f64]) -> f64 {
        self.matvec(x).iter().zip(y).map(|(a, b)| a * b).sum()
    }

    pub fn quadratic(&self, x: &[f64]) -> f64 {
        self.bilinear(x, x)
    }

    pub fn transpose(&self) -> Self {
        let triplets = self.iter().map(|(r, c, v)| (c, r, v)).collect();
        Self::from_triplets(self.ncols, self.nrows, triplets)
    }

    pub fn scaled(&self, a: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= a);
        out
    }

    /// `a * self + b * other`.
    pub fn add(&self, a: f64, other: &Self, b: f64) -> Self {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let triplets =
            self.iter().map(|(r, c, v)| (r, c, a * v)).chain(other.iter().map(|(r, c, v)| (r, c, b * v))).collect();
        Self::from_triplets(self.nrows, self.ncols, triplets)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `max |A - A^T|`.
    pub fn asymmetry(&self) -> f64 {
        if self.nrows != self.ncols {
            return f64::INFINITY;
        }
        self.iter().map(|(r, c, v)| (v - self.get(c, r)).abs()).fold(0.0, f64::max)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for (r, c, v) in self.iter() {
            d[r][c] += v;
        }
        d
    }

    /// MatrixMarket coordinate format (1-based indices).
    pub fn to_matrix_market(&self) -> String {
        let mut s = String::from("%%MatrixMarket matrix coordinate real general\n");
        writeln!(s, "{} {} {}", self.nrows, self.ncols, self.nnz()).unwrap();
        for (r, c, v) in self.iter() {
            writeln!(s, "{} {} {:.17e}", r + 1, c + 1, v).unwrap();
        }
        s
    }
}
