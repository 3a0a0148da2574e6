//! Compressed sparse storage for design matrices.
//!
//! The canonical form is column-oriented ([`SparseDesignMatrix`]): contrasts
//! and column statistics walk columns. Row-oriented accumulation (normal
//! equations, residuals) uses the [`DesignRows`] transpose, produced once.

/// Sparse matrix in compressed sparse column form. Row indices within each
/// column are strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseDesignMatrix {
    n_rows: usize,
    n_cols: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<u32>,
    values: Vec<f64>,
}

impl SparseDesignMatrix {
    pub fn from_columns(n_rows: usize, columns: Vec<(Vec<u32>, Vec<f64>)>) -> Self {
        let n_cols = columns.len();
        let nnz: usize = columns.iter().map(|(r, _)| r.len()).sum();
        let mut col_ptr = Vec::with_capacity(n_cols + 1);
        let mut row_idx = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        col_ptr.push(0);
        for (rows, vals) in columns {
            debug_assert_eq!(rows.len(), vals.len());
            debug_assert!(rows.windows(2).all(|w| w[0] < w[1]));
            row_idx.extend_from_slice(&rows);
            values.extend_from_slice(&vals);
            col_ptr.push(row_idx.len());
        }
        Self {
            n_rows,
            n_cols,
            col_ptr,
            row_idx,
            values,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.row_idx.len()
    }

    /// Fill fraction, nnz / (rows · cols).
    pub fn density(&self) -> f64 {
        if self.n_rows == 0 || self.n_cols == 0 {
            return 0.0;
        }
        self.nnz() as f64 / (self.n_rows as f64 * self.n_cols as f64)
    }

    /// Row indices and values of column `j`.
    pub fn col(&self, j: usize) -> (&[u32], &[f64]) {
        let span = self.col_ptr[j]..self.col_ptr[j + 1];
        (&self.row_idx[span.clone()], &self.values[span])
    }

    /// Heap bytes held by the index and value arrays.
    pub fn heap_bytes(&self) -> usize {
        self.col_ptr.len() * size_of::<usize>()
            + self.row_idx.len() * size_of::<u32>()
            + self.values.len() * size_of::<f64>()
    }

    /// Transposes into row-major form. One O(nnz) pass.
    pub fn to_rows(&self) -> DesignRows {
        let mut row_counts = vec![0usize; self.n_rows + 1];
        for &r in &self.row_idx {
            row_counts[r as usize + 1] += 1;
        }
        for i in 0..self.n_rows {
            row_counts[i + 1] += row_counts[i];
        }
        let row_ptr = row_counts.clone();
        let mut cursor = row_counts;
        let mut col_idx = vec![0u32; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for j in 0..self.n_cols {
            let (rows, vals) = self.col(j);
            for (&r, &v) in rows.iter().zip(vals) {
                let at = cursor[r as usize];
                col_idx[at] = j as u32;
                values[at] = v;
                cursor[r as usize] += 1;
            }
        }
        DesignRows {
            n_rows: self.n_rows,
            n_cols: self.n_cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Dense row-major copy; test and oracle use only.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_rows * self.n_cols];
        for j in 0..self.n_cols {
            let (rows, vals) = self.col(j);
            for (&r, &v) in rows.iter().zip(vals) {
                out[r as usize * self.n_cols + j] = v;
            }
        }
        out
    }
}

/// Sparse matrix in compressed sparse row form; the transpose view used by
/// row-streaming kernels. Column indices within a row are strictly
/// increasing.
#[derive(Debug, Clone)]
pub struct DesignRows {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    values: Vec<f64>,
}

impl DesignRows {
    pub fn from_rows(n_cols: usize, rows: Vec<(Vec<u32>, Vec<f64>)>) -> Self {
        let n_rows = rows.len();
        let nnz: usize = rows.iter().map(|(c, _)| c.len()).sum();
        let mut row_ptr = Vec::with_capacity(n_rows + 1);
        let mut col_idx = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        row_ptr.push(0);
        for (cols, vals) in rows {
            debug_assert_eq!(cols.len(), vals.len());
            debug_assert!(cols.windows(2).all(|w| w[0] < w[1]));
            col_idx.extend_from_slice(&cols);
            values.extend_from_slice(&vals);
            row_ptr.push(col_idx.len());
        }
        Self {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[span.clone()], &self.values[span])
    }

    /// xᵀβ for one row against a dense coefficient vector.
    pub fn row_dot(&self, i: usize, beta: &[f64]) -> f64 {
        let (cols, vals) = self.row(i);
        let mut s = 0.0;
        for (&c, &v) in cols.iter().zip(vals) {
            s += v * beta[c as usize];
        }
        s
    }

    pub fn heap_bytes(&self) -> usize {
        self.row_ptr.len() * size_of::<usize>()
            + self.col_idx.len() * size_of::<u32>()
            + self.values.len() * size_of::<f64>()
    }
}
