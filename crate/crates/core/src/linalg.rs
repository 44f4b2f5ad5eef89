//! Sparse matrix storage and direct factorization for the Stokes saddle-point
//! systems, plus the small dense kernels used by assembly.
//!
//! Storage is CSR built from triplets with duplicate summation; all assembled
//! entries are kept (drop tolerance 0). Factorization is delegated to faer's
//! sparse LU, which pivots deterministically, so repeated runs on one
//! platform are bit-stable.

use faer::prelude::SpSolver;
use faer::sparse::SparseColMat;
use faer::Mat;

use crate::{Error, Result};

/// Assembled bilinear form in compressed sparse row layout.
#[derive(Debug, Clone)]
pub struct SparseOperator {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseOperator {
    /// Build from triplets, summing duplicates. Entry order is normalized to
    /// sorted CSR, so assembly order does not affect the stored matrix.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self> {
        let mut entries: Vec<(usize, usize, f64)> = Vec::with_capacity(triplets.len());
        for &(r, c, v) in triplets {
            if r >= nrows || c >= ncols {
                return Err(Error::DimensionMismatch(format!(
                    "triplet ({r}, {c}) outside {nrows}x{ncols}"
                )));
            }
            if !v.is_finite() {
                return Err(Error::DimensionMismatch(format!(
                    "non-finite entry at ({r}, {c})"
                )));
            }
            entries.push((r, c, v));
        }
        entries.sort_by_key(|&(r, c, _)| (r, c));
        let mut indptr = vec![0usize; nrows + 1];
        let mut indices: Vec<usize> = Vec::with_capacity(entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(entries.len());
        let mut prev: Option<(usize, usize)> = None;
        for &(r, c, v) in &entries {
            if prev == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                indices.push(c);
                values.push(v);
                indptr[r + 1] = values.len();
                prev = Some((r, c));
            }
        }
        // Empty rows inherit the running offset.
        for r in 0..nrows {
            if indptr[r + 1] < indptr[r] {
                indptr[r + 1] = indptr[r];
            }
        }
        Ok(Self {
            nrows,
            ncols,
            indptr,
            indices,
            values,
        })
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Iterate stored entries as `(row, col, value)` in CSR order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |r| {
            (self.indptr[r]..self.indptr[r + 1]).map(move |p| (r, self.indices[p], self.values[p]))
        })
    }

    /// `y = A x`.
    pub fn spmv(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.ncols {
            return Err(Error::DimensionMismatch(format!(
                "spmv: vector length {} does not match {} columns",
                x.len(),
                self.ncols
            )));
        }
        let mut y = vec![0.0; self.nrows];
        for r in 0..self.nrows {
            let mut acc = 0.0;
            for p in self.indptr[r]..self.indptr[r + 1] {
                acc += self.values[p] * x[self.indices[p]];
            }
            y[r] = acc;
        }
        Ok(y)
    }

    /// Quadratic form `xᵀ A y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        let ay = self.spmv(y)?;
        if x.len() != self.nrows {
            return Err(Error::DimensionMismatch(
                "bilinear: left vector length mismatch".into(),
            ));
        }
        Ok(x.iter().zip(&ay).map(|(a, b)| a * b).sum())
    }

    /// Maximum relative asymmetry `max |A - Aᵀ| / max |A|` (tests and
    /// invariant checks; 0 for an exactly symmetric matrix).
    pub fn asymmetry(&self) -> f64 {
        let mut dense = std::collections::HashMap::new();
        for (r, c, v) in self.entries() {
            *dense.entry((r, c)).or_insert(0.0) += v;
        }
        let mut max_abs = 0.0f64;
        let mut max_diff = 0.0f64;
        for (&(r, c), &v) in &dense {
            max_abs = max_abs.max(v.abs());
            let vt = dense.get(&(c, r)).copied().unwrap_or(0.0);
            max_diff = max_diff.max((v - vt).abs());
        }
        if max_abs == 0.0 {
            0.0
        } else {
            max_diff / max_abs
        }
    }

    fn to_faer(&self) -> Result<SparseColMat<usize, f64>> {
        let trips: Vec<(usize, usize, f64)> = self.entries().collect();
        SparseColMat::try_new_from_triplets(self.nrows, self.ncols, &trips)
            .map_err(|e| Error::SingularSystem(format!("sparse conversion failed: {e:?}")))
    }
}

/// LU factorization of a square [`SparseOperator`].
pub struct LuFactor {
    lu: faer::sparse::linalg::solvers::Lu<usize, f64>,
    n: usize,
}

/// Factor a square sparse matrix.
pub fn factor(a: &SparseOperator) -> Result<LuFactor> {
    if a.nrows != a.ncols {
        return Err(Error::DimensionMismatch(format!(
            "factor: matrix is {}x{}",
            a.nrows, a.ncols
        )));
    }
    let lu = a
        .to_faer()?
        .sp_lu()
        .map_err(|e| Error::SingularSystem(format!("LU factorization failed: {e:?}")))?;
    Ok(LuFactor { lu, n: a.nrows })
}

impl LuFactor {
    /// Back-substitute; rejects non-finite results (zero pivots surface as
    /// inf/nan rather than a factorization error).
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.n {
            return Err(Error::DimensionMismatch(
                "solve: right-hand side length mismatch".into(),
            ));
        }
        let rhs = Mat::<f64>::from_fn(self.n, 1, |i, _| b[i]);
        let x = self.lu.solve(&rhs);
        let out: Vec<f64> = (0..self.n).map(|i| x[(i, 0)]).collect();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularSystem(
                "solve produced non-finite values".into(),
            ));
        }
        Ok(out)
    }
}

/// Factor and solve, verifying a relative residual of at most `1e-10`.
pub fn factor_solve(a: &SparseOperator, b: &[f64]) -> Result<Vec<f64>> {
    let f = factor(a)?;
    let x = f.solve(b)?;
    let r = a.spmv(&x)?;
    let bnorm = norm2(b);
    let rnorm = norm2(&r.iter().zip(b).map(|(ri, bi)| ri - bi).collect::<Vec<_>>());
    let scale = if bnorm > 0.0 { bnorm } else { 1.0 };
    if rnorm > 1e-10 * scale {
        return Err(Error::SolveAccuracy(format!(
            "relative residual {:.3e} exceeds 1e-10",
            rnorm / scale
        )));
    }
    Ok(x)
}

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
