use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, MatRef};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Compressed sparse row matrix.
///
/// Only the matrix-vector contract matters to callers; the storage layout is
/// an implementation detail.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix<T> {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<T>,
}

impl<T: Real> CsrMatrix<T> {
    /// Assembles from `(row, col, value)` triplets. Duplicates are summed and
    /// explicit zeros are kept out of the pattern.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, T)]) -> Self {
        let mut sorted: Vec<(usize, usize, T)> = triplets.to_vec();
        sorted.sort_by_key(|a| (a.0, a.1));

        let mut row_ptr = vec![0usize; nrows + 1];
        let mut col_idx = Vec::with_capacity(sorted.len());
        let mut values: Vec<T> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for &(i, j, v) in &sorted {
            assert!(i < nrows && j < ncols, "triplet ({i},{j}) out of bounds");
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(j);
                values.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..nrows {
            row_ptr[i + 1] += row_ptr[i];
        }
        let mut m = Self {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        };
        m.prune();
        m
    }

    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            row_ptr: vec![0; nrows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        let t: Vec<_> = (0..n).map(|i| (i, i, T::one())).collect();
        Self::from_triplets(n, n, &t)
    }

    fn prune(&mut self) {
        let mut row_ptr = vec![0usize; self.nrows + 1];
        let mut col_idx = Vec::with_capacity(self.col_idx.len());
        let mut values = Vec::with_capacity(self.values.len());
        for i in 0..self.nrows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                if self.values[k] != T::zero() {
                    col_idx.push(self.col_idx[k]);
                    values.push(self.values[k]);
                }
            }
            row_ptr[i + 1] = col_idx.len();
        }
        self.row_ptr = row_ptr;
        self.col_idx = col_idx;
        self.values = values;
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

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        (0..self.nrows).flat_map(move |i| {
            (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |k| (i, self.col_idx[k], self.values[k]))
        })
    }

    /// `y = A x`
    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        let mut y = vec![T::zero(); self.nrows];
        self.matvec_acc(T::one(), x, &mut y);
        y
    }

    /// `y += alpha * A x`
    pub fn matvec_acc(&self, alpha: T, x: &[T], y: &mut [T]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(y.len(), self.nrows);
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = T::zero();
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            *yi += alpha * acc;
        }
    }

    /// Dense product `A B` for a dense right-hand side.
    pub fn mul_dense(&self, b: MatRef<'_, T>) -> Mat<T> {
        assert_eq!(b.nrows(), self.ncols);
        let mut out = Mat::<T>::zeros(self.nrows, b.ncols());
        let mut xcol = vec![T::zero(); self.ncols];
        for j in 0..b.ncols() {
            for (i, x) in xcol.iter_mut().enumerate() {
                *x = b[(i, j)];
            }
            let ycol = out.col_as_slice_mut(j);
            self.matvec_acc(T::one(), &xcol, ycol);
        }
        out
    }

    pub fn to_dense(&self) -> Mat<T> {
        let mut d = Mat::<T>::zeros(self.nrows, self.ncols);
        for (i, j, v) in self.triplets() {
            d[(i, j)] += v;
        }
        d
    }

    /// `sum_k c_k M_k` over matrices of identical shape.
    pub fn linear_combination(terms: &[(T, &CsrMatrix<T>)]) -> Result<Self> {
        let (first_c, first) = terms.first().ok_or(Error::Empty("linear combination"))?;
        let _ = first_c;
        let mut trip = Vec::new();
        for (c, m) in terms {
            if m.nrows != first.nrows || m.ncols != first.ncols {
                return Err(Error::Dimension {
                    context: "sparse linear combination",
                    expected: first.nrows,
                    found: m.nrows,
                });
            }
            trip.extend(m.triplets().map(|(i, j, v)| (i, j, *c * v)));
        }
        Ok(Self::from_triplets(first.nrows, first.ncols, &trip))
    }

    pub fn to_faer(&self) -> Result<SparseColMat<usize, T>> {
        let trip: Vec<Triplet<usize, usize, T>> = self
            .triplets()
            .map(|(i, j, v)| Triplet::new(i, j, v))
            .collect();
        SparseColMat::try_new_from_triplets(self.nrows, self.ncols, &trip)
            .map_err(|e| Error::Decomposition(format!("sparse assembly: {e:?}")))
    }
}
