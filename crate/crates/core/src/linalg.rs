//! Dense symmetric linear algebra sized for normal equations: packed
//! lower-triangle storage, Cholesky factorization with rank-deficiency
//! diagnostics, inverses, sandwich products, and quadratic forms.
//!
//! Design matrices here are tall and thin, so everything in this module is
//! O(p²) memory for p columns and never touches n.

use crate::error::{Error, Result};

/// Symmetric p×p matrix stored as the packed lower triangle, row-major:
/// entry (i, j) with i ≥ j lives at `i(i+1)/2 + j`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    n: usize,
    data: Vec<f64>,
}

#[inline]
pub(crate) fn pidx(i: usize, j: usize) -> usize {
    debug_assert!(i >= j);
    i * (i + 1) / 2 + j
}

/// Number of packed entries for an n×n symmetric matrix.
pub fn packed_len(n: usize) -> usize {
    n * (n + 1) / 2
}

impl SymMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; packed_len(n)],
        }
    }

    pub fn from_packed(n: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), packed_len(n));
        Self { n, data }
    }

    pub fn order(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        self.data[pidx(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        self.data[pidx(i, j)] = v;
    }

    #[inline]
    pub fn add_at(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        self.data[pidx(i, j)] += v;
    }

    /// Principal submatrix over the given indices, in the given order.
    pub fn submatrix(&self, idx: &[usize]) -> SymMatrix {
        let mut out = SymMatrix::zeros(idx.len());
        for (i, &gi) in idx.iter().enumerate() {
            for (j, &gj) in idx.iter().enumerate().take(i + 1) {
                out.data[pidx(i, j)] = self.get(gi, gj);
            }
        }
        out
    }

    pub fn packed(&self) -> &[f64] {
        &self.data
    }

    pub fn packed_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn scaled(&self, s: f64) -> SymMatrix {
        let mut out = self.clone();
        out.scale(s);
        out
    }

    /// Adds `s` to every diagonal entry.
    pub fn add_diagonal(&mut self, s: f64) {
        for i in 0..self.n {
            self.data[pidx(i, i)] += s;
        }
    }

    pub fn max_diagonal(&self) -> f64 {
        (0..self.n)
            .map(|i| self.data[pidx(i, i)])
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// y = Sx for a dense vector x.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            let row = &self.data[pidx(i, 0)..=pidx(i, i)];
            let mut acc = 0.0;
            for (j, &l) in row.iter().enumerate() {
                acc += l * x[j];
                if j < i {
                    y[j] += l * x[i];
                }
            }
            y[i] += acc;
        }
        y
    }

    /// xᵀSx restricted to the nonzero support of x, given as parallel
    /// index/value slices. Cost is O(k²) for k nonzeros.
    pub fn quad_form_sparse(&self, idx: &[usize], vals: &[f64]) -> f64 {
        debug_assert_eq!(idx.len(), vals.len());
        let mut total = 0.0;
        for (a, &ia) in idx.iter().enumerate() {
            let va = vals[a];
            total += va * va * self.get(ia, ia);
            for b in 0..a {
                total += 2.0 * va * vals[b] * self.get(ia, idx[b]);
            }
        }
        total
    }
}

/// Why a factorization failed: the columns whose pivots collapsed and, for
/// each, the earlier columns they are linear combinations of.
#[derive(Debug, Clone)]
pub struct RankFailure {
    /// Columns with non-positive pivot, in factorization order.
    pub deficient: Vec<usize>,
    /// For each deficient column, the columns it depends on.
    pub dependencies: Vec<Vec<usize>>,
}

impl RankFailure {
    /// Every column implicated in the collapse: deficient columns plus their
    /// dependency sets, sorted and deduplicated.
    pub fn involved(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self.deficient.clone();
        for deps in &self.dependencies {
            all.extend_from_slice(deps);
        }
        all.sort_unstable();
        all.dedup();
        all
    }

    pub fn into_error(self, names: &[String]) -> Error {
        Error::RankDeficient {
            columns: self
                .involved()
                .into_iter()
                .map(|i| names.get(i).cloned().unwrap_or_else(|| format!("col{i}")))
                .collect(),
        }
    }
}

/// Relative pivot threshold: a pivot below this fraction of the largest
/// initial diagonal entry is treated as an exact linear dependence.
pub const PIVOT_REL_TOL: f64 = 1e-12;

/// Lower-triangular Cholesky factor of a positive-definite [`SymMatrix`].
#[derive(Debug, Clone)]
pub struct Cholesky {
    n: usize,
    l: Vec<f64>,
}

impl Cholesky {
    /// Factors A = LLᵀ. Fails with a [`RankFailure`] naming every involved
    /// column if any pivot falls below `PIVOT_REL_TOL` times the largest
    /// initial diagonal entry.
    pub fn factor(a: &SymMatrix) -> std::result::Result<Cholesky, RankFailure> {
        let n = a.n;
        let tol = PIVOT_REL_TOL * a.max_diagonal().max(f64::MIN_POSITIVE);
        let mut l = a.data.clone();
        let mut excluded = vec![false; n];
        let mut deficient = Vec::new();
        let mut dependencies = Vec::new();

        for i in 0..n {
            for j in 0..=i {
                let mut s = l[pidx(i, j)];
                // Row i of L against row j of L, both already final.
                for k in 0..j {
                    s -= l[pidx(i, k)] * l[pidx(j, k)];
                }
                if j < i {
                    l[pidx(i, j)] = if excluded[j] { 0.0 } else { s / l[pidx(j, j)] };
                } else if s > tol {
                    l[pidx(i, i)] = s.sqrt();
                } else {
                    excluded[i] = true;
                    deficient.push(i);
                    dependencies.push(dependency_support(&l, &excluded, i));
                    l[pidx(i, i)] = 0.0;
                    // Zero the row so later columns see this one as absent.
                    for k in 0..i {
                        l[pidx(i, k)] = 0.0;
                    }
                }
            }
        }

        if deficient.is_empty() {
            Ok(Cholesky { n, l })
        } else {
            Err(RankFailure {
                deficient,
                dependencies,
            })
        }
    }

    pub fn order(&self) -> usize {
        self.n
    }

    /// Solves LLᵀx = b in place.
    pub fn solve_in_place(&self, x: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        // Forward: Ly = b; row i of L is contiguous in the packed layout.
        for i in 0..self.n {
            let row = &self.l[pidx(i, 0)..=pidx(i, i)];
            let s: f64 = row[..i].iter().zip(&x[..i]).map(|(l, v)| l * v).sum();
            x[i] = (x[i] - s) / row[i];
        }
        // Backward: Lᵀx = y.
        for i in (0..self.n).rev() {
            let row = &self.l[pidx(i, 0)..=pidx(i, i)];
            let xi = x[i] / row[i];
            x[i] = xi;
            for (v, l) in x[..i].iter_mut().zip(row) {
                *v -= l * xi;
            }
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    /// Solves against `m` right-hand sides stored column-major in `b`.
    pub fn solve_columns_in_place(&self, b: &mut [f64]) {
        assert_eq!(b.len() % self.n, 0);
        for col in b.chunks_exact_mut(self.n) {
            self.solve_in_place(col);
        }
    }

    /// (LLᵀ)⁻¹ as a packed symmetric matrix.
    pub fn inverse(&self) -> SymMatrix {
        let n = self.n;
        let mut inv = SymMatrix::zeros(n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e.fill(0.0);
            e[j] = 1.0;
            self.solve_in_place(&mut e);
            for (i, &ei) in e.iter().enumerate().skip(j) {
                inv.data[pidx(i, j)] = ei;
            }
        }
        inv
    }
}

/// Coefficients expressing column `col` of the original matrix as a linear
/// combination of preceding columns, thresholded to a support set.
fn dependency_support(l: &[f64], excluded: &[bool], col: usize) -> Vec<usize> {
    // Row `col` of L (before zeroing) solves L_lead · y = A[0..col, col];
    // back-substituting Lᵀ a = y yields the combination coefficients.
    let mut a: Vec<f64> = (0..col).map(|k| l[pidx(col, k)]).collect();
    for k in (0..col).rev() {
        if excluded[k] || l[pidx(k, k)] == 0.0 {
            a[k] = 0.0;
            continue;
        }
        a[k] /= l[pidx(k, k)];
        let ak = a[k];
        for r in 0..k {
            a[r] -= l[pidx(k, r)] * ak;
        }
    }
    let max = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max == 0.0 {
        return Vec::new();
    }
    (0..col).filter(|&k| a[k].abs() > 1e-8 * max).collect()
}

/// B · M · B for symmetric B and M (the covariance sandwich). The result is
/// symmetrized to absorb last-bit roundoff asymmetry.
pub fn sandwich(b: &SymMatrix, m: &SymMatrix) -> SymMatrix {
    let n = b.n;
    assert_eq!(m.n, n);
    // T = M · B, dense row-major.
    let mut t = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for k in 0..n {
                s += m.get(i, k) * b.get(k, j);
            }
            t[i * n + j] = s;
        }
    }
    // S = B · T, lower triangle only, then symmetrize B·M·B = (B·M·B)ᵀ.
    let mut out = SymMatrix::zeros(n);
    for i in 0..n {
        for j in 0..=i {
            let mut sij = 0.0;
            let mut sji = 0.0;
            for k in 0..n {
                sij += b.get(i, k) * t[k * n + j];
                sji += b.get(j, k) * t[k * n + i];
            }
            out.data[pidx(i, j)] = 0.5 * (sij + sji);
        }
    }
    out
}

/// Solves the dense system AX = B by Gauss–Jordan elimination with partial
/// pivoting. `a` is n×n row-major and is destroyed; `b` holds `nrhs`
/// column-major right-hand sides and receives the solution.
///
/// This is the reference path used by oracles; it shares no code with
/// [`Cholesky`].
pub fn gauss_solve(a: &mut [f64], n: usize, b: &mut [f64], nrhs: usize) -> Result<()> {
    assert_eq!(a.len(), n * n);
    assert_eq!(b.len(), n * nrhs);
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&r, &s| a[r * n + col].abs().total_cmp(&a[s * n + col].abs()))
            .unwrap();
        let pivot = a[pivot_row * n + col];
        if pivot.abs() < 1e-12 {
            return Err(Error::RankDeficient {
                columns: vec![format!("col{col}")],
            });
        }
        if pivot_row != col {
            for k in 0..n {
                a.swap(col * n + k, pivot_row * n + k);
            }
            for r in 0..nrhs {
                b.swap(r * n + col, r * n + pivot_row);
            }
        }
        let inv = 1.0 / a[col * n + col];
        for k in 0..n {
            a[col * n + k] *= inv;
        }
        for r in 0..nrhs {
            b[r * n + col] *= inv;
        }
        for row in 0..n {
            if row == col {
                continue;
            }
            let factor = a[row * n + col];
            if factor == 0.0 {
                continue;
            }
            for k in 0..n {
                a[row * n + k] -= factor * a[col * n + k];
            }
            for r in 0..nrhs {
                b[r * n + row] -= factor * b[r * n + col];
            }
        }
    }
    Ok(())
}
