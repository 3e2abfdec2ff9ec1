//! Sparse row-major matrix used for network weights.
//!
//! The constructed networks are block-structured with many structural
//! zeros (parallel branches, identity channels), so only present entries
//! are stored. An absent entry is a fixed zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sparse matrix with entries sorted by (row, col).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseMatrix {
    pub rows: usize,
    pub cols: usize,
    /// (row, col, value) triplets, sorted lexicographically, no duplicates.
    pub entries: Vec<(u32, u32, f64)>,
}

impl SparseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        SparseMatrix {
            rows,
            cols,
            entries: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        SparseMatrix {
            rows: n,
            cols: n,
            entries: (0..n as u32).map(|i| (i, i, 1.0)).collect(),
        }
    }

    /// Build from triplets; sorts and checks bounds/duplicates.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        mut entries: Vec<(u32, u32, f64)>,
    ) -> Result<Self> {
        entries.sort_by_key(|&(r, c, _)| (r, c));
        for w in entries.windows(2) {
            if w[0].0 == w[1].0 && w[0].1 == w[1].1 {
                return Err(Error::InvalidParam(format!(
                    "duplicate matrix entry at ({}, {})",
                    w[0].0, w[0].1
                )));
            }
        }
        if let Some(&(r, c, _)) = entries
            .iter()
            .find(|&&(r, c, _)| r as usize >= rows || c as usize >= cols)
        {
            return Err(Error::InvalidParam(format!(
                "matrix entry ({r}, {c}) out of bounds for {rows}x{cols}"
            )));
        }
        Ok(SparseMatrix {
            rows,
            cols,
            entries,
        })
    }

    /// Dense row-major construction; zero entries are dropped.
    pub fn from_dense(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::DimMismatch("ragged dense matrix".into()));
        }
        let entries = rows
            .iter()
            .enumerate()
            .flat_map(|(i, row)| {
                row.iter()
                    .enumerate()
                    .filter(|(_, &v)| v != 0.0)
                    .map(move |(j, &v)| (i as u32, j as u32, v))
            })
            .collect();
        SparseMatrix::from_triplets(r, c, entries)
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn get(&self, row: u32, col: u32) -> f64 {
        match self.entries.binary_search_by_key(&(row, col), |&(r, c, _)| (r, c)) {
            Ok(i) => self.entries[i].2,
            Err(_) => 0.0,
        }
    }

    /// y += A x, with y.len() == rows and x.len() == cols.
    pub fn addmul_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(y.len(), self.rows);
        for &(r, c, v) in &self.entries {
            y[r as usize] += v * x[c as usize];
        }
    }

    /// Matrix product self * other.
    pub fn matmul(&self, other: &SparseMatrix) -> Result<SparseMatrix> {
        if self.cols != other.rows {
            return Err(Error::DimMismatch(format!(
                "matmul {}x{} * {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        // Index other's rows for direct lookup.
        let mut row_start = vec![0usize; other.rows + 1];
        for &(r, _, _) in &other.entries {
            row_start[r as usize + 1] += 1;
        }
        for i in 0..other.rows {
            row_start[i + 1] += row_start[i];
        }
        let mut acc: Vec<(u32, u32, f64)> = Vec::new();
        let mut row_vals: Vec<f64> = vec![0.0; other.cols];
        let mut touched: Vec<u32> = Vec::new();
        let mut i = 0;
        while i < self.entries.len() {
            let row = self.entries[i].0;
            while i < self.entries.len() && self.entries[i].0 == row {
                let (_, k, v) = self.entries[i];
                let (lo, hi) = (row_start[k as usize], row_start[k as usize + 1]);
                for &(_, j, w) in &other.entries[lo..hi] {
                    if row_vals[j as usize] == 0.0 && !touched.contains(&j) {
                        touched.push(j);
                    }
                    row_vals[j as usize] += v * w;
                }
                i += 1;
            }
            touched.sort_unstable();
            for &j in &touched {
                let val = row_vals[j as usize];
                if val != 0.0 {
                    acc.push((row, j, val));
                }
                row_vals[j as usize] = 0.0;
            }
            touched.clear();
        }
        Ok(SparseMatrix {
            rows: self.rows,
            cols: other.cols,
            entries: acc,
        })
    }

    /// self * x for a dense vector.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.rows];
        self.addmul_into(x, &mut y);
        y
    }

    /// True if every column holds at most one entry and that entry is 1.0.
    ///
    /// Composition through such a map is a pure re-routing of units, which
    /// lets entry metadata (tunability, share groups) survive fusion.
    pub fn is_unit_routing(&self) -> bool {
        let mut seen = vec![false; self.cols];
        for &(_, c, v) in &self.entries {
            if v != 1.0 || seen[c as usize] {
                return false;
            }
            seen[c as usize] = true;
        }
        true
    }

    pub fn max_abs(&self) -> f64 {
        self.entries
            .iter()
            .map(|&(_, _, v)| v.abs())
            .fold(0.0, f64::max)
    }

    pub fn validate(&self) -> Result<()> {
        for w in self.entries.windows(2) {
            if (w[0].0, w[0].1) >= (w[1].0, w[1].1) {
                return Err(Error::InvalidNet("matrix entries unsorted".into()));
            }
        }
        if self
            .entries
            .iter()
            .any(|&(r, c, _)| r as usize >= self.rows || c as usize >= self.cols)
        {
            return Err(Error::InvalidNet("matrix entry out of bounds".into()));
        }
        if self.entries.iter().any(|&(_, _, v)| !v.is_finite()) {
            return Err(Error::InvalidNet("non-finite matrix entry".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_matches_dense() {
        let a = SparseMatrix::from_dense(&[vec![1.0, 2.0], vec![0.0, -1.0]]).unwrap();
        let b = SparseMatrix::from_dense(&[vec![3.0, 0.0, 1.0], vec![1.0, 1.0, 0.0]]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.mul_vec(&[1.0, 1.0, 1.0]), vec![8.0, -2.0]);
        assert_eq!(c.get(0, 0), 5.0);
        assert_eq!(c.get(0, 1), 2.0);
        assert_eq!(c.get(0, 2), 1.0);
        assert_eq!(c.get(1, 0), -1.0);
        assert_eq!(c.get(1, 1), -1.0);
    }

    #[test]
    fn routing_detection() {
        let routing =
            SparseMatrix::from_triplets(3, 2, vec![(0, 0, 1.0), (2, 1, 1.0)]).unwrap();
        assert!(routing.is_unit_routing());
        let not_routing =
            SparseMatrix::from_triplets(3, 2, vec![(0, 0, 0.5), (2, 1, 1.0)]).unwrap();
        assert!(!not_routing.is_unit_routing());
        let dup_col =
            SparseMatrix::from_triplets(3, 1, vec![(0, 0, 1.0), (2, 0, 1.0)]).unwrap();
        assert!(!dup_col.is_unit_routing());
    }

    #[test]
    fn duplicate_entries_rejected() {
        let r = SparseMatrix::from_triplets(2, 2, vec![(0, 0, 1.0), (0, 0, 2.0)]);
        assert!(r.is_err());
    }
}
