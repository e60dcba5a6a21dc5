//! Symmetric sparse matrices and a reusable sparse Cholesky factorization.
//!
//! Matrices are stored as the lower triangle in compressed-column form with
//! sorted row indices. Factorizations go through faer's supernodal Cholesky
//! with either a caller-provided fill-reducing ordering (nested dissection for
//! grid-structured systems) or faer's AMD.

use std::sync::Arc;

use faer::sparse::linalg::cholesky::{
    factorize_symbolic_cholesky, LltRef, SymbolicCholesky, SymmetricOrdering,
};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};
use faer::{MatMut, Par, Side};
use faer::dyn_stack::{MemBuffer, MemStack};
use faer::perm::PermRef;

use crate::error::{Error, Result};

/// Lower triangle of a symmetric matrix in CSC form.
#[derive(Clone, Debug, PartialEq)]
pub struct SymCsc {
    pub n: usize,
    pub col_ptr: Vec<usize>,
    pub row_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl SymCsc {
    /// Builds from `(row, col, value)` triplets of the full or lower matrix;
    /// entries above the diagonal are mirrored and duplicates are summed.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut lower: Vec<(usize, usize, f64)> = triplets
            .iter()
            .filter(|t| t.0 != usize::MAX)
            .map(|&(r, c, v)| if r >= c { (c, r, v) } else { (r, c, v) })
            .collect();
        lower.sort_by_key(|a| (a.0, a.1));
        let mut col_ptr = vec![0usize; n + 1];
        let mut row_idx = Vec::with_capacity(lower.len());
        let mut values = Vec::with_capacity(lower.len());
        let mut last: Option<(usize, usize)> = None;
        for (c, r, v) in lower {
            if last == Some((c, r)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            last = Some((c, r));
            row_idx.push(r);
            values.push(v);
            col_ptr[c + 1] += 1;
        }
        for c in 0..n {
            col_ptr[c + 1] += col_ptr[c];
        }
        Self { n, col_ptr, row_idx, values }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n)
            .map(|c| {
                let start = self.col_ptr[c];
                if start < self.col_ptr[c + 1] && self.row_idx[start] == c {
                    self.values[start]
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// `y = A x` using the symmetric structure.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for c in 0..self.n {
            for k in self.col_ptr[c]..self.col_ptr[c + 1] {
                let r = self.row_idx[k];
                let v = self.values[k];
                y[r] += v * x[c];
                if r != c {
                    y[c] += v * x[r];
                }
            }
        }
        y
    }

    /// Symmetric diagonal scaling `D A D`.
    pub fn scaled(&self, d: &[f64]) -> Self {
        let mut out = self.clone();
        for c in 0..self.n {
            for k in self.col_ptr[c]..self.col_ptr[c + 1] {
                out.values[k] *= d[self.row_idx[k]] * d[c];
            }
        }
        out
    }

    fn symbolic(&self) -> SymbolicSparseColMatRef<'_, usize> {
        SymbolicSparseColMatRef::new_checked(self.n, self.n, &self.col_ptr, None, &self.row_idx)
    }

    fn as_faer(&self) -> SparseColMatRef<'_, usize, f64> {
        SparseColMatRef::new(self.symbolic(), &self.values)
    }
}

/// Fill-reducing ordering choice for a symbolic factorization.
#[derive(Clone, Debug)]
pub enum Ordering {
    Amd,
    /// `order[k]` is the original index eliminated at step `k`.
    Custom(Vec<usize>),
}

/// Symbolic Cholesky analysis, shareable between matrices with the same pattern.
#[derive(Clone, Debug)]
pub struct SymbolicFactor {
    inner: Arc<SymbolicCholesky<usize>>,
    n: usize,
}

impl SymbolicFactor {
    pub fn analyze(a: &SymCsc, ordering: &Ordering) -> Result<Self> {
        let fail = |e: faer::sparse::FaerError| Error::FactorizationFailure {
            n: a.n,
            reason: format!("{e:?}"),
        };
        let inner = match ordering {
            Ordering::Amd => factorize_symbolic_cholesky(
                a.symbolic(),
                Side::Lower,
                SymmetricOrdering::Amd,
                Default::default(),
            )
            .map_err(fail)?,
            Ordering::Custom(order) => {
                if order.len() != a.n {
                    return Err(Error::DimensionMismatch { expected: a.n, got: order.len() });
                }
                let mut inverse = vec![0usize; a.n];
                for (k, &i) in order.iter().enumerate() {
                    inverse[i] = k;
                }
                let perm = PermRef::new_checked(order, &inverse, a.n);
                factorize_symbolic_cholesky(
                    a.symbolic(),
                    Side::Lower,
                    SymmetricOrdering::Custom(perm),
                    Default::default(),
                )
                .map_err(fail)?
            }
        };
        Ok(Self { inner: Arc::new(inner), n: a.n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of stored entries of the Cholesky factor.
    pub fn factor_len(&self) -> usize {
        self.inner.len_val()
    }
}

/// Numeric `L L^T` factorization that can be reused for any number of
/// right-hand sides.
#[derive(Clone, Debug)]
pub struct SparseCholesky {
    symbolic: SymbolicFactor,
    values: Vec<f64>,
}

impl SparseCholesky {
    pub fn new(a: &SymCsc, ordering: &Ordering) -> Result<Self> {
        let symbolic = SymbolicFactor::analyze(a, ordering)?;
        Self::with_symbolic(symbolic, a)
    }

    pub fn with_symbolic(symbolic: SymbolicFactor, a: &SymCsc) -> Result<Self> {
        if symbolic.n != a.n {
            return Err(Error::DimensionMismatch { expected: symbolic.n, got: a.n });
        }
        let inner = &symbolic.inner;
        let mut values = vec![0.0; inner.len_val()];
        let mut mem = MemBuffer::new(
            inner.factorize_numeric_llt_scratch::<f64>(Par::Seq, Default::default()),
        );
        inner
            .factorize_numeric_llt::<f64>(
                &mut values,
                a.as_faer(),
                Side::Lower,
                Default::default(),
                Par::Seq,
                MemStack::new(&mut mem),
                Default::default(),
            )
            .map_err(|e| Error::FactorizationFailure { n: a.n, reason: format!("{e:?}") })?;
        Ok(Self { symbolic, values })
    }

    pub fn n(&self) -> usize {
        self.symbolic.n
    }

    pub fn symbolic(&self) -> &SymbolicFactor {
        &self.symbolic
    }

    /// Solves in place for a column-major block of right-hand sides.
    pub fn solve_block(&self, rhs: &mut [f64], ncols: usize) {
        let n = self.n();
        assert_eq!(rhs.len(), n * ncols);
        if n == 0 || ncols == 0 {
            return;
        }
        let inner = &self.symbolic.inner;
        let mut mem = MemBuffer::new(inner.solve_in_place_scratch::<f64>(ncols, Par::Seq));
        let mat = MatMut::from_column_major_slice_mut(rhs, n, ncols);
        LltRef::new(inner, &self.values).solve_in_place_with_conj(
            faer::Conj::No,
            mat,
            Par::Seq,
            MemStack::new(&mut mem),
        );
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_block(&mut x, 1);
        x
    }
}

/// Nested-dissection elimination order for the nodes of a rectangular block
/// `[0, nx] x [0, ny]` (row-major node ids). `keep(x, y)` selects the nodes
/// that are unknowns and `id(x, y)` returns their index. Separators are single
/// grid lines, which split the 9-point Q1 stencil.
pub fn nested_dissection<K, I>(nx: usize, ny: usize, keep: K, id: I) -> Vec<usize>
where
    K: Fn(usize, usize) -> bool,
    I: Fn(usize, usize) -> usize,
{
    let mut order = Vec::new();
    dissect(0, nx, 0, ny, &keep, &id, &mut order);
    order
}

fn dissect<K, I>(x0: usize, x1: usize, y0: usize, y1: usize, keep: &K, id: &I, out: &mut Vec<usize>)
where
    K: Fn(usize, usize) -> bool,
    I: Fn(usize, usize) -> usize,
{
    let w = x1 - x0 + 1;
    let h = y1 - y0 + 1;
    if w * h <= 64 || (w < 3 && h < 3) {
        for y in y0..=y1 {
            for x in x0..=x1 {
                if keep(x, y) {
                    out.push(id(x, y));
                }
            }
        }
        return;
    }
    if w >= h && w >= 3 {
        let mid = x0 + (w - 1) / 2;
        dissect(x0, mid - 1, y0, y1, keep, id, out);
        dissect(mid + 1, x1, y0, y1, keep, id, out);
        for y in y0..=y1 {
            if keep(mid, y) {
                out.push(id(mid, y));
            }
        }
    } else {
        let mid = y0 + (h - 1) / 2;
        dissect(x0, x1, y0, mid - 1, keep, id, out);
        dissect(x0, x1, mid + 1, y1, keep, id, out);
        for x in x0..=x1 {
            if keep(x, mid) {
                out.push(id(x, mid));
            }
        }
    }
}
