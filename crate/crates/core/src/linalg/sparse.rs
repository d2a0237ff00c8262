//! Compressed-column sparse matrices and reusable factorizations.
//!
//! Storage and the numeric kernels (product, transpose, LU, Cholesky) come
//! from `rsparse`; this module adds triplet assembly with duplicate
//! summation and factor objects that can be applied to many right-hand sides.

use rsparse::data::{Nmrc, Sprs, Symb};

/// Below this dimension the fill-reducing ordering is skipped.
const NATURAL_ORDER_BELOW: usize = 8;

/// Relative pivot size under which a factorization is reported as singular.
const PIVOT_RTOL: f64 = 1e-14;

/// Coordinate-format builder. Duplicate entries are summed on conversion.
#[derive(Debug, Clone)]
pub struct Triplets {
    nrows: usize,
    ncols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl Triplets {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            entries: Vec::new(),
        }
    }

    pub fn with_capacity(nrows: usize, ncols: usize, cap: usize) -> Self {
        Self {
            nrows,
            ncols,
            entries: Vec::with_capacity(cap),
        }
    }

    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.nrows && col < self.ncols);
        if value != 0.0 {
            self.entries.push((row, col, value));
        }
    }

    pub fn to_csc(&self) -> CscMatrix {
        let mut entries = self.entries.clone();
        entries.sort_unstable_by_key(|&(r, c, _)| (c, r));
        let mut p = vec![0isize; self.ncols + 1];
        let mut i = Vec::with_capacity(entries.len());
        let mut x = Vec::with_capacity(entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in entries {
            if last == Some((r, c)) {
                *x.last_mut().expect("entry present") += v;
                continue;
            }
            last = Some((r, c));
            i.push(r);
            x.push(v);
            p[c + 1] += 1;
        }
        for c in 0..self.ncols {
            p[c + 1] += p[c];
        }
        CscMatrix {
            inner: Sprs {
                nzmax: x.len(),
                m: self.nrows,
                n: self.ncols,
                p,
                i,
                x,
            },
        }
    }
}

/// Sparse matrix in compressed-column form.
#[derive(Debug, Clone)]
pub struct CscMatrix {
    inner: Sprs<f64>,
}

impl CscMatrix {
    fn from_sprs(inner: Sprs<f64>) -> Self {
        Self { inner }
    }

    pub fn nrows(&self) -> usize {
        self.inner.m
    }

    pub fn ncols(&self) -> usize {
        self.inner.n
    }

    pub fn nnz(&self) -> usize {
        self.inner.p[self.inner.n] as usize
    }

    /// Iterate the stored entries of column `col` as `(row, value)`.
    pub fn column(&self, col: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let start = self.inner.p[col] as usize;
        let end = self.inner.p[col + 1] as usize;
        (start..end).map(move |k| (self.inner.i[k], self.inner.x[k]))
    }

    /// Iterate all stored entries as `(row, col, value)`.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.ncols()).flat_map(move |c| self.column(c).map(move |(r, v)| (r, c, v)))
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.column(col).filter(|&(r, _)| r == row).map(|(_, v)| v).sum()
    }

    /// `A x`
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols(), "mul_vec dimension");
        let mut y = vec![0.0; self.nrows()];
        for (c, &xc) in x.iter().enumerate() {
            if xc == 0.0 {
                continue;
            }
            for (r, v) in self.column(c) {
                y[r] += v * xc;
            }
        }
        y
    }

    /// `Aᵀ y`
    pub fn tmul_vec(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.nrows(), "tmul_vec dimension");
        (0..self.ncols())
            .map(|c| self.column(c).map(|(r, v)| v * y[r]).sum())
            .collect()
    }

    pub fn transpose(&self) -> CscMatrix {
        CscMatrix::from_sprs(rsparse::transpose(&self.inner))
    }

    /// `A Aᵀ`
    pub fn gram(&self) -> CscMatrix {
        let at = rsparse::transpose(&self.inner);
        CscMatrix::from_sprs(rsparse::multiply(&self.inner, &at))
    }

    /// `self · other`
    pub fn mul_mat(&self, other: &CscMatrix) -> CscMatrix {
        assert_eq!(self.ncols(), other.nrows(), "product dimensions");
        CscMatrix::from_sprs(rsparse::multiply(&self.inner, &other.inner))
    }

    /// Stack `self` on top of `other` (same column count).
    pub fn vstack(&self, other: &CscMatrix) -> CscMatrix {
        assert_eq!(self.ncols(), other.ncols(), "vstack column count");
        let offset = self.nrows();
        let mut t = Triplets::with_capacity(self.nrows() + other.nrows(), self.ncols(), self.nnz() + other.nnz());
        for (r, c, v) in self.entries() {
            t.push(r, c, v);
        }
        for (r, c, v) in other.entries() {
            t.push(r + offset, c, v);
        }
        t.to_csc()
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut d = nalgebra::DMatrix::zeros(self.nrows(), self.ncols());
        for (r, c, v) in self.entries() {
            d[(r, c)] += v;
        }
        d
    }

    fn ordering(&self, amd_order: i8) -> i8 {
        if self.ncols() < NATURAL_ORDER_BELOW {
            -1
        } else {
            amd_order
        }
    }
}

/// The factorization could not be completed (zero or negligible pivot).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Singular;

/// Sparse LU with partial pivoting, reusable across right-hand sides.
#[derive(Debug, Clone)]
pub struct SparseLu {
    n: usize,
    symbolic: Symb,
    numeric: Nmrc<f64>,
}

impl SparseLu {
    pub fn factor(a: &CscMatrix) -> Result<Self, Singular> {
        assert_eq!(a.nrows(), a.ncols(), "LU needs a square matrix");
        let n = a.ncols();
        if n == 0 {
            return Ok(Self {
                n,
                symbolic: Symb::new(),
                numeric: Nmrc::new(),
            });
        }
        let mut symbolic = rsparse::sqr(&a.inner, a.ordering(1), false);
        let numeric = rsparse::lu(&a.inner, &mut symbolic, 1.0).map_err(|_| Singular)?;
        let diag = upper_diagonal(&numeric.u);
        let max = diag.iter().fold(0.0f64, |m, d| m.max(d.abs()));
        let min = diag.iter().fold(f64::INFINITY, |m, d| m.min(d.abs()));
        if !(max > 0.0) || min <= PIVOT_RTOL * max || !min.is_finite() {
            return Err(Singular);
        }
        Ok(Self { n, symbolic, numeric })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n, "LU solve dimension");
        if self.n == 0 {
            return Vec::new();
        }
        let mut x = vec![0.0; self.n];
        match &self.numeric.pinv {
            Some(pinv) => {
                for k in 0..self.n {
                    x[pinv[k] as usize] = b[k];
                }
            }
            None => x.copy_from_slice(b),
        }
        rsparse::lsolve(&self.numeric.l, &mut x);
        rsparse::usolve(&self.numeric.u, &mut x);
        match &self.symbolic.q {
            Some(q) => {
                let mut out = vec![0.0; self.n];
                for k in 0..self.n {
                    out[q[k] as usize] = x[k];
                }
                out
            }
            None => x,
        }
    }
}

fn upper_diagonal(u: &Sprs<f64>) -> Vec<f64> {
    (0..u.n)
        .map(|c| {
            let (s, e) = (u.p[c] as usize, u.p[c + 1] as usize);
            (s..e).filter(|&k| u.i[k] == c).map(|k| u.x[k]).sum::<f64>()
        })
        .collect()
}

/// Sparse Cholesky `P A Pᵀ = L Lᵀ` of a symmetric positive definite matrix.
#[derive(Debug, Clone)]
pub struct SparseCholesky {
    n: usize,
    symbolic: Symb,
    numeric: Nmrc<f64>,
}

impl SparseCholesky {
    pub fn factor(a: &CscMatrix) -> Result<Self, Singular> {
        assert_eq!(a.nrows(), a.ncols(), "Cholesky needs a square matrix");
        let n = a.ncols();
        if n == 0 {
            return Ok(Self {
                n,
                symbolic: Symb::new(),
                numeric: Nmrc::new(),
            });
        }
        let mut symbolic = rsparse::schol(&a.inner, a.ordering(0));
        let numeric = rsparse::chol(&a.inner, &mut symbolic).map_err(|_| Singular)?;
        let l = &numeric.l;
        let diag: Vec<f64> = (0..n).map(|c| l.x[l.p[c] as usize]).collect();
        let max = diag.iter().fold(0.0f64, |m, d| m.max(d.abs()));
        let min = diag.iter().fold(f64::INFINITY, |m, d| m.min(d.abs()));
        // diag(L) holds square roots of pivots
        if !(max > 0.0) || min * min <= PIVOT_RTOL * max * max || !min.is_finite() {
            return Err(Singular);
        }
        Ok(Self { n, symbolic, numeric })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n, "Cholesky solve dimension");
        if self.n == 0 {
            return Vec::new();
        }
        let mut x = vec![0.0; self.n];
        match &self.symbolic.pinv {
            Some(pinv) => {
                for k in 0..self.n {
                    x[pinv[k] as usize] = b[k];
                }
            }
            None => x.copy_from_slice(b),
        }
        rsparse::lsolve(&self.numeric.l, &mut x);
        rsparse::ltsolve(&self.numeric.l, &mut x);
        match &self.symbolic.pinv {
            Some(pinv) => (0..self.n).map(|k| x[pinv[k] as usize]).collect(),
            None => x,
        }
    }
}
