//! Compressed sparse row matrices for the infection-rate matrix `B` and
//! the splitting/spectral iterations built on top of it.

/// Sparse matrix in CSR layout. All stored entries are strictly positive in
/// this crate (infection rates), but the type itself does not assume a sign.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds an `n x n` matrix from (row, col, value) triplets.
    /// Duplicate coordinates are summed.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut entries: Vec<(usize, usize, f64)> = triplets.to_vec();
        entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut merged: Vec<(usize, usize, f64)> = Vec::with_capacity(entries.len());
        for (r, c, v) in entries {
            assert!(r < n && c < n, "triplet index out of range");
            match merged.last_mut() {
                Some(last) if last.0 == r && last.1 == c => last.2 += v,
                _ => merged.push((r, c, v)),
            }
        }
        let mut row_ptr = vec![0usize; n + 1];
        for &(r, _, _) in &merged {
            row_ptr[r + 1] += 1;
        }
        for r in 0..n {
            row_ptr[r + 1] += row_ptr[r];
        }
        let col_idx = merged.iter().map(|e| e.1).collect();
        let values = merged.iter().map(|e| e.2).collect();
        CsrMatrix { n, row_ptr, col_idx, values }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Iterator over the (col, value) pairs of one row.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        self.col_idx[lo..hi].iter().copied().zip(self.values[lo..hi].iter().copied())
    }

    /// y = A x
    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        debug_assert_eq!(y.len(), self.n);
        for i in 0..self.n {
            let mut acc = 0.0;
            for (j, v) in self.row(i) {
                acc += v * x[j];
            }
            y[i] = acc;
        }
    }

    /// Returns A x as a fresh vector.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.mul_vec(x, &mut y);
        y
    }

    /// Row sums, i.e. A·1.
    pub fn row_sums(&self) -> Vec<f64> {
        let ones = vec![1.0; self.n];
        self.apply(&ones)
    }

    /// Explicit transpose (CSR of Aᵀ).
    pub fn transpose(&self) -> CsrMatrix {
        let mut triplets = Vec::with_capacity(self.nnz());
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                triplets.push((j, i, v));
            }
        }
        CsrMatrix::from_triplets(self.n, &triplets)
    }

    /// All stored entries as (row, col, value) triplets in row-major order.
    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.nnz());
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                out.push((i, j, v));
            }
        }
        out
    }

    /// Dense copy, row-major. Intended for small test problems.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut dense = vec![0.0; self.n * self.n];
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                dense[i * self.n + j] += v;
            }
        }
        dense
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mul_and_transpose() {
        // [[0, 2], [3, 0]]
        let a = CsrMatrix::from_triplets(2, &[(0, 1, 2.0), (1, 0, 3.0)]);
        assert_eq!(a.apply(&[1.0, 1.0]), vec![2.0, 3.0]);
        let at = a.transpose();
        assert_eq!(at.apply(&[1.0, 0.0]), vec![0.0, 2.0]);
        assert_eq!(a.row_sums(), vec![2.0, 3.0]);
    }

    #[test]
    fn duplicate_triplets_are_summed() {
        let a = CsrMatrix::from_triplets(2, &[(0, 1, 2.0), (0, 1, 0.5)]);
        assert_eq!(a.nnz(), 1);
        assert_eq!(a.apply(&[0.0, 1.0]), vec![2.5, 0.0]);
    }

    #[test]
    fn empty_rows() {
        let a = CsrMatrix::from_triplets(3, &[(2, 0, 1.0)]);
        assert_eq!(a.apply(&[1.0, 1.0, 1.0]), vec![0.0, 0.0, 1.0]);
    }
}
