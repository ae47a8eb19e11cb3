//! Sparse symmetric LDLᵀ factorization without pivoting.
//!
//! The factorization follows the up-looking elimination-tree scheme used for
//! quasi-definite systems. A fill-reducing approximate minimum degree ordering
//! is computed once per sparsity pattern; numeric refactorizations reuse it.
//! Because `D` is diagonal, the inertia of the input matrix is read directly
//! from the signs of its entries (Sylvester's law of inertia), which is what
//! the interior-point inertia correction relies on.

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::sparse::linalg::amd;
use faer::sparse::SymbolicSparseColMatRef;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LdlError {
    #[error("zero or non-finite pivot at column {0}")]
    ZeroPivot(usize),
    #[error("matrix pattern does not match the symbolic analysis")]
    PatternMismatch,
    #[error("fill-reducing ordering failed: {0}")]
    Ordering(String),
}

/// Symmetric matrix stored as its upper triangle in compressed columns
/// (sorted rows, no duplicates).
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricMatrix {
    pub n: usize,
    pub col_ptr: Vec<usize>,
    pub row_idx: Vec<usize>,
    pub vals: Vec<f64>,
}

impl SymmetricMatrix {
    /// Builds the upper triangle from entries given in either triangle;
    /// `(i, j)` and `(j, i)` address the same entry and duplicates are summed.
    pub fn from_entries(n: usize, entries: impl IntoIterator<Item = (usize, usize, f64)>) -> Self {
        let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for (i, j, v) in entries {
            let (r, c) = if i <= j { (i, j) } else { (j, i) };
            cols[c].push((r, v));
        }
        let mut col_ptr = Vec::with_capacity(n + 1);
        let mut row_idx = Vec::new();
        let mut vals = Vec::new();
        col_ptr.push(0);
        for mut col in cols {
            col.sort_unstable_by_key(|e| e.0);
            let start = row_idx.len();
            for (r, v) in col {
                if row_idx.len() > start && *row_idx.last().unwrap() == r {
                    *vals.last_mut().unwrap() += v;
                } else {
                    row_idx.push(r);
                    vals.push(v);
                }
            }
            col_ptr.push(row_idx.len());
        }
        Self {
            n,
            col_ptr,
            row_idx,
            vals,
        }
    }

    /// y = A x using both triangles.
    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for j in 0..self.n {
            for p in self.col_ptr[j]..self.col_ptr[j + 1] {
                let i = self.row_idx[p];
                let v = self.vals[p];
                y[i] += v * x[j];
                if i != j {
                    y[j] += v * x[i];
                }
            }
        }
        y
    }

    pub fn same_pattern(&self, other: &Self) -> bool {
        self.n == other.n && self.col_ptr == other.col_ptr && self.row_idx == other.row_idx
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Inertia {
    pub positive: usize,
    pub negative: usize,
    pub zero: usize,
}

/// Ordering and elimination tree for one sparsity pattern.
#[derive(Debug, Clone)]
pub struct LdlSymbolic {
    n: usize,
    pattern_col_ptr: Vec<usize>,
    pattern_row_idx: Vec<usize>,
    /// perm[new] = old
    perm: Vec<usize>,
    // permuted upper pattern
    pcol_ptr: Vec<usize>,
    prow_idx: Vec<usize>,
    /// original value index -> permuted value slot
    map: Vec<usize>,
    etree: Vec<Option<usize>>,
    lp: Vec<usize>,
}

impl LdlSymbolic {
    pub fn analyze(a: &SymmetricMatrix) -> Result<Self, LdlError> {
        let n = a.n;
        let mut perm = vec![0usize; n];
        let mut iperm = vec![0usize; n];
        if n > 0 {
            let sym = SymbolicSparseColMatRef::new_checked(n, n, &a.col_ptr, None, &a.row_idx);
            let mut mem = MemBuffer::new(amd::order_maybe_unsorted_scratch::<usize>(n, a.row_idx.len()));
            amd::order_maybe_unsorted(
                &mut perm,
                &mut iperm,
                sym,
                amd::Control::default(),
                MemStack::new(&mut mem),
            )
            .map_err(|e| LdlError::Ordering(format!("{e:?}")))?;
        }

        // permuted upper pattern
        let mut counts = vec![0usize; n + 1];
        for j in 0..n {
            for p in a.col_ptr[j]..a.col_ptr[j + 1] {
                let (pi, pj) = (iperm[a.row_idx[p]], iperm[j]);
                counts[pi.max(pj) + 1] += 1;
            }
        }
        for j in 0..n {
            counts[j + 1] += counts[j];
        }
        let pcol_ptr = counts.clone();
        let mut next = counts;
        let nnz = a.row_idx.len();
        let mut prow_idx = vec![0usize; nnz];
        let mut map = vec![0usize; nnz];
        for j in 0..n {
            for p in a.col_ptr[j]..a.col_ptr[j + 1] {
                let (pi, pj) = (iperm[a.row_idx[p]], iperm[j]);
                let c = pi.max(pj);
                let slot = next[c];
                prow_idx[slot] = pi.min(pj);
                map[p] = slot;
                next[c] += 1;
            }
        }

        // elimination tree and column counts of L
        let mut etree = vec![None; n];
        let mut lnz = vec![0usize; n];
        let mut work = vec![usize::MAX; n];
        for j in 0..n {
            work[j] = j;
            for p in pcol_ptr[j]..pcol_ptr[j + 1] {
                let mut i = prow_idx[p];
                while work[i] != j {
                    if etree[i].is_none() {
                        etree[i] = Some(j);
                    }
                    lnz[i] += 1;
                    work[i] = j;
                    i = etree[i].expect("set above");
                }
            }
        }
        let mut lp = vec![0usize; n + 1];
        for i in 0..n {
            lp[i + 1] = lp[i] + lnz[i];
        }

        Ok(Self {
            n,
            pattern_col_ptr: a.col_ptr.clone(),
            pattern_row_idx: a.row_idx.clone(),
            perm,
            pcol_ptr,
            prow_idx,
            map,
            etree,
            lp,
        })
    }

    pub fn matches(&self, a: &SymmetricMatrix) -> bool {
        self.n == a.n && self.pattern_col_ptr == a.col_ptr && self.pattern_row_idx == a.row_idx
    }

    pub fn factor(&self, a: &SymmetricMatrix) -> Result<LdlFactor, LdlError> {
        if !self.matches(a) {
            return Err(LdlError::PatternMismatch);
        }
        let n = self.n;
        let mut ax = vec![0.0; a.vals.len()];
        for (p, &v) in a.vals.iter().enumerate() {
            ax[self.map[p]] = v;
        }

        let lnnz = self.lp[n];
        let mut li = vec![0usize; lnnz];
        let mut lx = vec![0.0; lnnz];
        let mut d = vec![0.0; n];
        let mut y = vec![0.0; n];
        let mut marked = vec![false; n];
        let mut yidx = vec![0usize; n];
        let mut elim = vec![0usize; n];
        let mut next_space: Vec<usize> = self.lp[..n].to_vec();

        for k in 0..n {
            let mut nnz_y = 0usize;
            d[k] = 0.0;
            for p in self.pcol_ptr[k]..self.pcol_ptr[k + 1] {
                let b = self.prow_idx[p];
                if b == k {
                    d[k] += ax[p];
                    continue;
                }
                y[b] += ax[p];
                if !marked[b] {
                    marked[b] = true;
                    elim[0] = b;
                    let mut ne = 1usize;
                    let mut nx = self.etree[b];
                    while let Some(i) = nx {
                        if i >= k || marked[i] {
                            break;
                        }
                        marked[i] = true;
                        elim[ne] = i;
                        ne += 1;
                        nx = self.etree[i];
                    }
                    while ne > 0 {
                        ne -= 1;
                        yidx[nnz_y] = elim[ne];
                        nnz_y += 1;
                    }
                }
            }
            for t in (0..nnz_y).rev() {
                let c = yidx[t];
                let yc = y[c];
                let end = next_space[c];
                for q in self.lp[c]..end {
                    y[li[q]] -= lx[q] * yc;
                }
                li[end] = k;
                let l = yc / d[c];
                lx[end] = l;
                d[k] -= yc * l;
                next_space[c] += 1;
                y[c] = 0.0;
                marked[c] = false;
            }
            if d[k] == 0.0 || !d[k].is_finite() {
                return Err(LdlError::ZeroPivot(self.perm[k]));
            }
        }

        Ok(LdlFactor {
            n,
            perm: self.perm.clone(),
            lp: self.lp.clone(),
            li,
            lx,
            d,
        })
    }
}

/// Numeric factor `P A Pᵀ = L D Lᵀ`.
#[derive(Debug, Clone)]
pub struct LdlFactor {
    n: usize,
    perm: Vec<usize>,
    lp: Vec<usize>,
    li: Vec<usize>,
    lx: Vec<f64>,
    d: Vec<f64>,
}

impl LdlFactor {
    pub fn inertia(&self) -> Inertia {
        let mut out = Inertia {
            positive: 0,
            negative: 0,
            zero: 0,
        };
        for &v in &self.d {
            if v > 0.0 {
                out.positive += 1;
            } else if v < 0.0 {
                out.negative += 1;
            } else {
                out.zero += 1;
            }
        }
        out
    }

    /// Solves `A x = b`, overwriting `b` with `x`.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let xi = x[i];
            for q in self.lp[i]..self.lp[i + 1] {
                x[self.li[q]] -= self.lx[q] * xi;
            }
        }
        for i in 0..n {
            x[i] /= self.d[i];
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for q in self.lp[i]..self.lp[i + 1] {
                s -= self.lx[q] * x[self.li[q]];
            }
            x[i] = s;
        }
        for (k, &p) in self.perm.iter().enumerate() {
            b[p] = x[k];
        }
    }
}

/// One-shot convenience: analyze, factor and solve.
pub fn solve(a: &SymmetricMatrix, b: &mut [f64]) -> Result<Inertia, LdlError> {
    let f = LdlSymbolic::analyze(a)?.factor(a)?;
    f.solve_in_place(b);
    Ok(f.inertia())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dense_mul(a: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
        a.iter()
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    #[test]
    fn quasi_definite_kkt() {
        // [2 0 1; 0 3 1; 1 1 -1e-8]
        let a = SymmetricMatrix::from_entries(
            3,
            vec![(0, 0, 2.0), (1, 1, 3.0), (2, 0, 1.0), (1, 2, 1.0), (2, 2, -1e-8)],
        );
        let mut b = vec![1.0, 2.0, 3.0];
        let inertia = solve(&a, &mut b).unwrap();
        assert_eq!(
            inertia,
            Inertia {
                positive: 2,
                negative: 1,
                zero: 0
            }
        );
        let r = a.mul(&b);
        for (ri, bi) in r.iter().zip([1.0, 2.0, 3.0]) {
            assert!((ri - bi).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_pivot_is_reported() {
        let a = SymmetricMatrix::from_entries(2, vec![(0, 0, 0.0), (1, 1, 1.0)]);
        let r = LdlSymbolic::analyze(&a).unwrap().factor(&a);
        assert!(matches!(r, Err(LdlError::ZeroPivot(0))));
    }

    #[test]
    fn pattern_mismatch() {
        let a = SymmetricMatrix::from_entries(2, vec![(0, 0, 1.0), (1, 1, 1.0)]);
        let b = SymmetricMatrix::from_entries(2, vec![(0, 0, 1.0), (0, 1, 0.5), (1, 1, 1.0)]);
        let s = LdlSymbolic::analyze(&a).unwrap();
        assert!(matches!(s.factor(&b), Err(LdlError::PatternMismatch)));
    }

    proptest! {
        // random sparse SPD matrices: residual of the solve is small and the
        // inertia is all-positive
        #[test]
        fn spd_solve_residual(n in 1usize..25, seed in 0u64..1000) {
            let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let mut rnd = || { s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407); ((s >> 11) as f64) / ((1u64 << 53) as f64) - 0.5 };
            let mut dense = vec![vec![0.0; n]; n];
            let mut entries = Vec::new();
            for i in 0..n {
                for j in 0..i {
                    if rnd() > 0.2 {
                        let v = rnd();
                        dense[i][j] += v;
                        dense[j][i] += v;
                        entries.push((i, j, v));
                    }
                }
            }
            for i in 0..n {
                let rowsum: f64 = dense[i].iter().map(|v| v.abs()).sum();
                let v = rowsum + 1.0 + rnd().abs();
                dense[i][i] = v;
                entries.push((i, i, v));
            }
            let a = SymmetricMatrix::from_entries(n, entries);
            let rhs: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
            let mut x = rhs.clone();
            let inertia = solve(&a, &mut x).unwrap();
            prop_assert_eq!(inertia.positive, n);
            let r = dense_mul(&dense, &x);
            for (ri, bi) in r.iter().zip(&rhs) {
                prop_assert!((ri - bi).abs() < 1e-10);
            }
        }
    }
}
