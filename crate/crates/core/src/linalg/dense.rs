use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::{householder, qr, svd};
use faer::{get_global_parallelism, Mat, MatMut, MatRef};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Householder QR of a tall matrix, factored in place so that the input
/// buffer is reused for the reflectors.
pub struct HouseholderQr<T> {
    reflectors: Mat<T>,
    coeff: Mat<T>,
    r: Mat<T>,
}

impl<T: Real> HouseholderQr<T> {
    /// Factors `a` (`m x n`, `m >= n`), consuming it.
    pub fn factor(mut a: Mat<T>) -> Self {
        let (m, n) = a.shape();
        assert!(m >= n, "HouseholderQr expects a tall matrix ({m}x{n})");
        let par = get_global_parallelism();
        let bs = qr::no_pivoting::factor::recommended_block_size::<T>(m, n);
        let mut coeff = Mat::<T>::zeros(bs, n);
        if n > 0 {
            qr::no_pivoting::factor::qr_in_place(
                a.as_mut(),
                coeff.as_mut(),
                par,
                MemStack::new(&mut MemBuffer::new(
                    qr::no_pivoting::factor::qr_in_place_scratch::<T>(m, n, bs, par, Default::default()),
                )),
                Default::default(),
            );
        }
        let mut r = Mat::<T>::zeros(n, n);
        for j in 0..n {
            for i in 0..=j {
                r[(i, j)] = a[(i, j)];
            }
            a[(j, j)] = T::one();
            for i in 0..j {
                a[(i, j)] = T::zero();
            }
        }
        Self {
            reflectors: a,
            coeff,
            r,
        }
    }

    /// Upper-triangular factor (`n x n`).
    pub fn r(&self) -> MatRef<'_, T> {
        self.r.as_ref()
    }

    /// Overwrites `b` with `Q^T b`.
    pub fn apply_qt(&self, b: MatMut<'_, T>) {
        if self.r.ncols() == 0 {
            return;
        }
        let par = get_global_parallelism();
        let ncols = b.ncols();
        householder::apply_block_householder_sequence_transpose_on_the_left_in_place_with_conj(
            self.reflectors.as_ref(),
            self.coeff.as_ref(),
            faer::Conj::No,
            b,
            par,
            MemStack::new(&mut MemBuffer::new(
                householder::apply_block_householder_sequence_transpose_on_the_left_in_place_scratch::<T>(
                    self.reflectors.nrows(),
                    self.coeff.nrows(),
                    ncols,
                ),
            )),
        );
    }
}

/// Full singular value decomposition of a small or moderate matrix.
pub struct Svd<T> {
    pub u: Mat<T>,
    pub s: Vec<T>,
    pub v: Mat<T>,
}

pub fn thin_svd<T: Real>(a: MatRef<'_, T>) -> Result<Svd<T>> {
    let (m, n) = a.shape();
    let k = m.min(n);
    if k == 0 {
        return Ok(Svd {
            u: Mat::zeros(m, 0),
            s: Vec::new(),
            v: Mat::zeros(n, 0),
        });
    }
    let par = get_global_parallelism();
    let mut u = Mat::<T>::zeros(m, k);
    let mut v = Mat::<T>::zeros(n, k);
    let mut s = faer::diag::Diag::<T>::zeros(k);
    svd::svd(
        a,
        s.as_mut(),
        Some(u.as_mut()),
        Some(v.as_mut()),
        par,
        MemStack::new(&mut MemBuffer::new(svd::svd_scratch::<T>(
            m,
            n,
            svd::ComputeSvdVectors::Thin,
            svd::ComputeSvdVectors::Thin,
            par,
            Default::default(),
        ))),
        Default::default(),
    )
    .map_err(|e| Error::Decomposition(format!("svd: {e:?}")))?;
    let s = (0..k).map(|i| s.column_vector()[i]).collect();
    Ok(Svd { u, s, v })
}

/// Left singular vectors and singular values of `a`, sorted descending.
///
/// Wide inputs are first compressed with a QR factorization of `a^T`, so the
/// right singular vectors are never formed. Each returned column has its
/// largest-magnitude entry positive.
pub fn left_svd<T: Real>(a: MatRef<'_, T>) -> Result<(Mat<T>, Vec<T>)> {
    let (m, n) = a.shape();
    let k = m.min(n);
    if k == 0 {
        return Ok((Mat::zeros(m, 0), Vec::new()));
    }
    let par = get_global_parallelism();
    let mut u = Mat::<T>::zeros(m, k);
    let mut s = faer::diag::Diag::<T>::zeros(k);
    let scratch = |rows: usize, cols: usize| {
        MemBuffer::new(svd::svd_scratch::<T>(
            rows,
            cols,
            svd::ComputeSvdVectors::Thin,
            svd::ComputeSvdVectors::No,
            par,
            Default::default(),
        ))
    };
    if n > 2 * m {
        let at = a.transpose().to_owned();
        let qr = HouseholderQr::factor(at);
        // a = R^T Q^T, so the left singular vectors of a are those of R^T.
        let rt = qr.r().transpose().to_owned();
        drop(qr);
        svd::svd(
            rt.as_ref(),
            s.as_mut(),
            Some(u.as_mut()),
            None,
            par,
            MemStack::new(&mut scratch(m, m)),
            Default::default(),
        )
    } else {
        svd::svd(
            a,
            s.as_mut(),
            Some(u.as_mut()),
            None,
            par,
            MemStack::new(&mut scratch(m, n)),
            Default::default(),
        )
    }
    .map_err(|e| Error::Decomposition(format!("svd: {e:?}")))?;
    fix_signs(&mut u);
    let s = (0..k).map(|i| s.column_vector()[i]).collect();
    Ok((u, s))
}

/// Flips each column so that its largest-magnitude entry is positive.
pub fn fix_signs<T: Real>(u: &mut Mat<T>) {
    for j in 0..u.ncols() {
        let col = u.col_as_slice_mut(j);
        let mut best = 0usize;
        let mut best_abs = T::zero();
        for (i, x) in col.iter().enumerate() {
            let a = num_traits::Float::abs(*x);
            if a > best_abs {
                best_abs = a;
                best = i;
            }
        }
        if col.get(best).is_some_and(|x| *x < T::zero()) {
            for x in col.iter_mut() {
                *x = -*x;
            }
        }
    }
}

/// `||V^T V - I||_F`
pub fn orthonormality_defect<T: Real>(v: MatRef<'_, T>) -> T {
    let g = v.transpose() * v;
    let mut acc = T::zero();
    for j in 0..g.ncols() {
        for i in 0..g.nrows() {
            let d = if i == j { g[(i, j)] - T::one() } else { g[(i, j)] };
            acc += d * d;
        }
    }
    acc.sqrt()
}

pub fn frobenius<T: Real>(a: MatRef<'_, T>) -> T {
    a.norm_l2()
}

/// Horizontal concatenation `[a, b]`.
pub fn hcat<T: Real>(a: MatRef<'_, T>, b: MatRef<'_, T>) -> Mat<T> {
    assert_eq!(a.nrows(), b.nrows());
    let mut out = Mat::<T>::zeros(a.nrows(), a.ncols() + b.ncols());
    out.as_mut().subcols_mut(0, a.ncols()).copy_from(a);
    out.as_mut().subcols_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

pub fn all_finite<T: Real>(a: MatRef<'_, T>) -> bool {
    (0..a.ncols()).all(|j| (0..a.nrows()).all(|i| num_traits::Float::is_finite(a[(i, j)])))
}
