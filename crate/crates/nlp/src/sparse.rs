//! Coordinate-format sparse matrices used at the problem/solver boundary.

/// Sparse matrix in coordinate (triplet) form. Duplicate entries are summed
/// when the matrix is compressed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Triplets {
    pub nrows: usize,
    pub ncols: usize,
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl Triplets {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            ..Default::default()
        }
    }

    pub fn with_capacity(nrows: usize, ncols: usize, cap: usize) -> Self {
        Self {
            nrows,
            ncols,
            rows: Vec::with_capacity(cap),
            cols: Vec::with_capacity(cap),
            vals: Vec::with_capacity(cap),
        }
    }

    #[inline]
    pub fn push(&mut self, row: usize, col: usize, val: f64) {
        debug_assert!(
            row < self.nrows && col < self.ncols,
            "({row}, {col}) out of range"
        );
        self.rows.push(row);
        self.cols.push(col);
        self.vals.push(val);
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.rows
            .iter()
            .zip(&self.cols)
            .zip(&self.vals)
            .map(|((&r, &c), &v)| (r, c, v))
    }

    /// y += A x
    pub fn mul_add(&self, x: &[f64], y: &mut [f64]) {
        for (r, c, v) in self.iter() {
            y[r] += v * x[c];
        }
    }

    /// y += Aᵀ x
    pub fn tmul_add(&self, x: &[f64], y: &mut [f64]) {
        for (r, c, v) in self.iter() {
            y[c] += v * x[r];
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for (r, c, v) in self.iter() {
            d[r][c] += v;
        }
        d
    }

    /// Row-compressed copy with duplicates summed.
    pub fn to_csr(&self) -> Csr {
        let mut counts = vec![0usize; self.nrows + 1];
        for &r in &self.rows {
            counts[r + 1] += 1;
        }
        for i in 0..self.nrows {
            counts[i + 1] += counts[i];
        }
        let mut next = counts.clone();
        let mut cols = vec![0usize; self.nnz()];
        let mut vals = vec![0.0; self.nnz()];
        for (r, c, v) in self.iter() {
            let k = next[r];
            cols[k] = c;
            vals[k] = v;
            next[r] += 1;
        }
        // sort within rows and merge duplicates
        let mut ptr = vec![0usize; self.nrows + 1];
        let mut out_cols = Vec::with_capacity(cols.len());
        let mut out_vals = Vec::with_capacity(vals.len());
        let mut buf: Vec<(usize, f64)> = Vec::new();
        for r in 0..self.nrows {
            buf.clear();
            buf.extend((counts[r]..counts[r + 1]).map(|k| (cols[k], vals[k])));
            buf.sort_unstable_by_key(|e| e.0);
            for &(c, v) in &buf {
                match out_cols.last() {
                    Some(&last) if out_cols.len() > ptr[r] && last == c => {
                        *out_vals.last_mut().unwrap() += v;
                    }
                    _ => {
                        out_cols.push(c);
                        out_vals.push(v);
                    }
                }
            }
            ptr[r + 1] = out_cols.len();
        }
        Csr {
            nrows: self.nrows,
            ncols: self.ncols,
            ptr,
            cols: out_cols,
            vals: out_vals,
        }
    }
}

/// Compressed sparse rows, sorted and duplicate-free.
#[derive(Debug, Clone)]
pub struct Csr {
    pub nrows: usize,
    pub ncols: usize,
    pub ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl Csr {
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.ptr[i], self.ptr[i + 1]);
        self.cols[a..b]
            .iter()
            .copied()
            .zip(self.vals[a..b].iter().copied())
    }

    /// y = A x
    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        (0..self.nrows)
            .map(|i| self.row(i).map(|(c, v)| v * x[c]).sum())
            .collect()
    }

    /// y += Aᵀ x
    pub fn tmul_add(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.nrows {
            let xi = x[i];
            if xi != 0.0 {
                for (c, v) in self.row(i) {
                    y[c] += v * xi;
                }
            }
        }
    }
}
