//! Quadratic manifolds: compressed Kronecker products, the regularized fit of
//! the quadratic map and the encoder/decoder pair.

use std::ops::Range;

use faer::{Mat, MatRef};

use crate::error::{Error, Result};
use crate::linalg::dense::thin_svd;
use crate::linalg::HouseholderQr;
use crate::scalar::Real;
use crate::snapshots::{LinearBasis, SnapshotSet};

/// Tag stored alongside persisted maps so the column order can be checked.
pub const ORDERING_TAG: &str = "utri-rowmajor-v1";

/// Row-major upper-triangular ordering of the unique products `s_i s_j`,
/// `i <= j` (0-based here).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompressedIndex {
    r: usize,
    pairs: Vec<(usize, usize)>,
}

impl CompressedIndex {
    pub fn new(r: usize) -> Self {
        let pairs = (0..r).flat_map(|i| (i..r).map(move |j| (i, j))).collect();
        Self { r, pairs }
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn q(&self) -> usize {
        self.pairs.len()
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }
}

pub fn q_of(r: usize) -> usize {
    r * (r + 1) / 2
}

/// Compressed Kronecker product `s ⊗~ s`.
pub fn ckron<T: Real>(s: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); q_of(s.len())];
    ckron_into(s, &mut out);
    out
}

pub fn ckron_into<T: Real>(s: &[T], out: &mut [T]) {
    debug_assert_eq!(out.len(), q_of(s.len()));
    let mut k = 0;
    for i in 0..s.len() {
        let si = s[i];
        for &sj in &s[i..] {
            out[k] = si * sj;
            k += 1;
        }
    }
}

/// Column-wise compressed products of the reduced states (`q x l`).
pub fn build_w<T: Real>(states: MatRef<'_, T>) -> Mat<T> {
    let (r, l) = states.shape();
    let mut w = Mat::<T>::zeros(q_of(r), l);
    let mut s = vec![T::zero(); r];
    for j in 0..l {
        for (i, x) in s.iter_mut().enumerate() {
            *x = states[(i, j)];
        }
        ckron_into(&s, w.col_as_slice_mut(j));
    }
    w
}

/// `W^T` built directly (`l x q`).
fn build_wt<T: Real>(states: MatRef<'_, T>) -> Mat<T> {
    let (r, l) = states.shape();
    let mut wt = Mat::<T>::zeros(l, q_of(r));
    let mut k = 0;
    for i in 0..r {
        for j in i..r {
            let col = wt.col_as_slice_mut(k);
            for (t, c) in col.iter_mut().enumerate() {
                *c = states[(i, t)] * states[(j, t)];
            }
            k += 1;
        }
    }
    wt
}

/// Tikhonov problem `min ||A X - B||_F^2 + lambda^2 ||X||_F^2` with the
/// factorization of `A` shared across values of `lambda`.
///
/// Tall `A` is reduced by a Householder QR to its `q x q` triangle, with
/// `Q^T` applied to `B` block by block; the small core is then diagonalized
/// once by an SVD.
pub struct TikhonovFactor<T> {
    /// Right singular vectors of the core (`q x k`).
    v: Mat<T>,
    sigma: Vec<T>,
    /// `U^T C` for the core's left singular vectors `U` (`k x n_b`).
    g: Mat<T>,
    g_row_sq: Vec<T>,
    /// Part of `||B||^2` outside the range of `Q`.
    outside_sq: T,
}

impl<T: Real> TikhonovFactor<T> {
    pub fn new(a: Mat<T>, b: MatRef<'_, T>) -> Result<Self> {
        if a.nrows() != b.nrows() {
            return Err(Error::Dimension {
                context: "tikhonov right-hand side",
                expected: a.nrows(),
                found: b.nrows(),
            });
        }
        Self::from_blocks(a, b.ncols(), |cols| b.subcols(cols.start, cols.len()).to_owned())
    }

    /// Builds the factor with `B` supplied in column blocks, so that `B`
    /// never has to be held in full.
    pub fn from_blocks(a: Mat<T>, n_b: usize, mut block: impl FnMut(Range<usize>) -> Mat<T>) -> Result<Self> {
        if !crate::linalg::dense::all_finite(a.as_ref()) {
            return Err(Error::Decomposition("tikhonov matrix has non-finite entries".into()));
        }
        let (l, q) = a.shape();
        let width = (32usize << 20).checked_div(l.max(1)).unwrap_or(1).clamp(1, n_b.max(1));
        let mut outside_sq = T::zero();
        let (core, c) = if l >= q {
            let qr = HouseholderQr::factor(a);
            let mut c = Mat::<T>::zeros(q, n_b);
            let mut start = 0;
            while start < n_b {
                let cols = start..(start + width).min(n_b);
                let mut blk = block(cols.clone());
                check_block(&blk, l, cols.len())?;
                qr.apply_qt(blk.as_mut());
                c.as_mut().subcols_mut(cols.start, cols.len()).copy_from(blk.as_ref().subrows(0, q));
                let tail = blk.as_ref().subrows(q, l - q).norm_l2();
                outside_sq += tail * tail;
                start = cols.end;
            }
            (qr.r().to_owned(), c)
        } else {
            let mut c = Mat::<T>::zeros(l, n_b);
            let mut start = 0;
            while start < n_b {
                let cols = start..(start + width).min(n_b);
                let blk = block(cols.clone());
                check_block(&blk, l, cols.len())?;
                c.as_mut().subcols_mut(cols.start, cols.len()).copy_from(&blk);
                start = cols.end;
            }
            (a, c)
        };
        let svd = thin_svd(core.as_ref())?;
        let g = svd.u.transpose() * &c;
        let g_row_sq = (0..g.nrows())
            .map(|i| {
                let mut acc = T::zero();
                for j in 0..g.ncols() {
                    acc += g[(i, j)] * g[(i, j)];
                }
                acc
            })
            .collect();
        // The core's U is square, so C lies entirely in its range.
        Ok(Self {
            v: svd.v,
            sigma: svd.s,
            g,
            g_row_sq,
            outside_sq,
        })
    }

    pub fn singular_values(&self) -> &[T] {
        &self.sigma
    }

    fn filter(&self, lambda: T) -> Vec<T> {
        let l2 = lambda * lambda;
        self.sigma
            .iter()
            .map(|&s| {
                let d = s * s + l2;
                if d > T::zero() {
                    s / d
                } else {
                    T::zero()
                }
            })
            .collect()
    }

    /// `||B - A X_lambda||_F`
    pub fn residual(&self, lambda: T) -> T {
        let f = self.filter(lambda);
        let mut acc = self.outside_sq;
        for (i, (&s, &fi)) in self.sigma.iter().zip(&f).enumerate() {
            let keep = T::one() - s * fi;
            acc += keep * keep * self.g_row_sq[i];
        }
        acc.sqrt()
    }

    /// Returns `X^T` (`n_b x q`) and the residual norm.
    pub fn solve_transposed(&self, lambda: T) -> (Mat<T>, T) {
        let f = self.filter(lambda);
        let (k, n_b) = self.g.shape();
        let scaled_gt = Mat::<T>::from_fn(n_b, k, |j, i| self.g[(i, j)] * f[i]);
        let xt = scaled_gt * self.v.transpose();
        (xt, self.residual(lambda))
    }

    /// Returns `X` (`q x n_b`) and the residual norm.
    pub fn solve(&self, lambda: T) -> (Mat<T>, T) {
        let (xt, res) = self.solve_transposed(lambda);
        (xt.transpose().to_owned(), res)
    }
}

fn check_block<T: Real>(blk: &Mat<T>, rows: usize, cols: usize) -> Result<()> {
    if blk.nrows() != rows || blk.ncols() != cols {
        return Err(Error::Dimension {
            context: "tikhonov block",
            expected: rows,
            found: blk.nrows(),
        });
    }
    Ok(())
}

/// Filtered-SVD Tikhonov solution: returns `h = X^T` and `||b - a X||_F`.
pub fn fit_tikhonov<T: Real>(a: MatRef<'_, T>, b: MatRef<'_, T>, lambda: T) -> Result<(Mat<T>, T)> {
    if lambda < T::zero() {
        return Err(Error::Config(format!("negative regularization parameter {lambda}")));
    }
    let factor = TikhonovFactor::new(a.to_owned(), b)?;
    Ok(factor.solve_transposed(lambda))
}

/// Quadratic correction `H` of the decoder `V s + H (s ⊗~ s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticMap<T> {
    pub h: Mat<T>,
    pub lambda: T,
    pub index: CompressedIndex,
    /// Fingerprint of the basis the map was fitted against.
    pub basis_fingerprint: u64,
}

impl<T: Real> QuadraticMap<T> {
    pub fn zeros(basis: &LinearBasis<T>, lambda: T) -> Self {
        Self {
            h: Mat::zeros(basis.n(), q_of(basis.r())),
            lambda,
            index: CompressedIndex::new(basis.r()),
            basis_fingerprint: basis.fingerprint(),
        }
    }

    pub fn q(&self) -> usize {
        self.index.q()
    }

    pub fn is_zero(&self) -> bool {
        (0..self.h.ncols()).all(|j| self.h.col_as_slice(j).iter().all(|x| *x == T::zero()))
    }

    /// Checks that the map belongs to `basis`.
    pub fn check_basis(&self, basis: &LinearBasis<T>) -> Result<()> {
        if self.h.nrows() != basis.n() || self.index.r() != basis.r() || self.h.ncols() != self.index.q() {
            return Err(Error::Provenance(format!(
                "map is {}x{} for r={}, basis is {}x{}",
                self.h.nrows(),
                self.h.ncols(),
                self.index.r(),
                basis.n(),
                basis.r()
            )));
        }
        if self.basis_fingerprint != basis.fingerprint() {
            return Err(Error::Provenance("basis fingerprint differs".into()));
        }
        Ok(())
    }
}

/// Fits quadratic maps for many regularization parameters from one
/// factorization.
pub struct QuadMapFitter<T> {
    factor: TikhonovFactor<T>,
    basis: LinearBasis<T>,
    fingerprint: u64,
    projection_error_norm: T,
}

impl<T: Real> QuadMapFitter<T> {
    pub fn new(basis: &LinearBasis<T>, data: MatRef<'_, T>) -> Result<Self> {
        if data.nrows() != basis.n() {
            return Err(Error::Dimension {
                context: "quadratic map snapshots",
                expected: basis.n(),
                found: data.nrows(),
            });
        }
        let v = basis.as_ref();
        let reduced = v.transpose() * data;
        let wt = build_wt(reduced.as_ref());
        let mut e_sq = T::zero();
        let factor = TikhonovFactor::from_blocks(wt, data.nrows(), |rows| {
            // Rows of E = S - V (V^T S), transposed.
            let s_blk = data.subrows(rows.start, rows.len());
            let v_blk = v.subrows(rows.start, rows.len());
            let blk = s_blk.transpose() - reduced.transpose() * v_blk.transpose();
            let nrm = blk.norm_l2();
            e_sq += nrm * nrm;
            blk
        })?;
        Ok(Self {
            factor,
            basis: basis.clone(),
            fingerprint: basis.fingerprint(),
            projection_error_norm: e_sq.sqrt(),
        })
    }

    /// `||E||_F` of the snapshots the fitter was built from.
    pub fn projection_error_norm(&self) -> T {
        self.projection_error_norm
    }

    pub fn residual(&self, lambda: T) -> T {
        self.factor.residual(lambda)
    }

    /// Returns the fitted map and `E_lambda = ||E^T - W^T H^T||_F`.
    pub fn fit(&self, lambda: T) -> Result<(QuadraticMap<T>, T)> {
        if lambda < T::zero() || !lambda.is_finite() {
            return Err(Error::Config(format!("invalid regularization parameter {lambda}")));
        }
        let (mut h, res) = self.factor.solve_transposed(lambda);
        // Remove the roundoff component of H inside span(V).
        let v = self.basis.as_ref();
        if h.ncols() > 0 {
            let c = v.transpose() * &h;
            h -= v * c;
        }
        if !crate::linalg::dense::all_finite(h.as_ref()) {
            return Err(Error::Decomposition("quadratic map has non-finite entries".into()));
        }
        Ok((
            QuadraticMap {
                h,
                lambda,
                index: CompressedIndex::new(self.basis.r()),
                basis_fingerprint: self.fingerprint,
            },
            res,
        ))
    }
}

/// Fits `H` to the snapshots for one regularization parameter.
pub fn fit_quadmap<T: Real>(
    basis: &LinearBasis<T>,
    set: &SnapshotSet<T>,
    lambda: T,
) -> Result<(QuadraticMap<T>, T)> {
    QuadMapFitter::new(basis, set.data.as_ref())?.fit(lambda)
}

/// `V^T u`
pub fn encode<T: Real>(basis: &LinearBasis<T>, u: &[T]) -> Vec<T> {
    let v = basis.as_ref();
    (0..basis.r())
        .map(|k| {
            let col = v.col(k);
            let mut acc = T::zero();
            for (i, x) in u.iter().enumerate() {
                acc += col[i] * *x;
            }
            acc
        })
        .collect()
}

/// `V^T U` for a block of states.
pub fn encode_matrix<T: Real>(basis: &LinearBasis<T>, u: MatRef<'_, T>) -> Mat<T> {
    basis.as_ref().transpose() * u
}

/// `V s + H (s ⊗~ s)`; `map = None` gives the linear decoder.
pub fn decode<T: Real>(basis: &LinearBasis<T>, map: Option<&QuadraticMap<T>>, s: &[T]) -> Vec<T> {
    let col = Mat::<T>::from_fn(s.len(), 1, |i, _| s[i]);
    decode_matrix(basis, map, col.as_ref()).col_as_slice(0).to_vec()
}

/// Column-wise decoder for a block of reduced states (`r x k`).
pub fn decode_matrix<T: Real>(basis: &LinearBasis<T>, map: Option<&QuadraticMap<T>>, states: MatRef<'_, T>) -> Mat<T> {
    let mut out = basis.as_ref() * states;
    if let Some(m) = map {
        if m.h.ncols() > 0 {
            let w = build_w(states);
            out += &m.h * &w;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(m: usize, n: usize, seed: u64) -> Mat<f64> {
        let mut x = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        Mat::from_fn(m, n, |_, _| {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((x >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
    }

    #[test]
    fn ckron_examples() {
        assert_eq!(ckron(&[1.0, 0.0, 0.0]), vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(ckron(&[1.0, 2.0]), vec![1.0, 2.0, 4.0]);
        assert_eq!(CompressedIndex::new(3).pairs(), &[(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)]);
    }

    #[test]
    fn build_w_single_column() {
        let s = Mat::<f64>::from_fn(2, 1, |i, _| (i + 1) as f64);
        let w = build_w(s.as_ref());
        assert_eq!(w.col_as_slice(0), &[1.0, 2.0, 4.0]);
        let z = build_w(Mat::<f64>::zeros(3, 2).as_ref());
        assert!(z.norm_l2() == 0.0);
    }

    #[test]
    fn wt_is_transpose_of_w() {
        let s = sample(4, 7, 3);
        assert_eq!(build_wt(s.as_ref()), build_w(s.as_ref()).transpose().to_owned());
    }

    #[test]
    fn identity_filter() {
        let a = Mat::<f64>::identity(4, 4);
        let b = sample(4, 3, 1);
        let (h, _) = fit_tikhonov(a.as_ref(), b.as_ref(), 0.5).unwrap();
        for i in 0..4 {
            for j in 0..3 {
                assert!((h[(j, i)] - b[(i, j)] / 1.25).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn unregularized_square_solve() {
        let a = sample(5, 5, 9) + Mat::<f64>::identity(5, 5) * 3.0;
        let b = sample(5, 2, 4);
        let (h, res) = fit_tikhonov(a.as_ref(), b.as_ref(), 0.0).unwrap();
        let x = h.transpose().to_owned();
        assert!((&a * &x - &b).norm_l2() < 1e-12);
        assert!(res < 1e-12);
    }

    #[test]
    fn residual_formula_matches_direct_evaluation() {
        for (l, q) in [(12, 5), (4, 9)] {
            let a = sample(l, q, 2);
            let b = sample(l, 3, 5);
            for lambda in [0.0, 0.1, 2.0] {
                let (h, res) = fit_tikhonov(a.as_ref(), b.as_ref(), lambda).unwrap();
                let direct = (&b - &a * h.transpose()).norm_l2();
                assert!((res - direct).abs() < 1e-11 * (1.0 + direct), "{l}x{q} {lambda}");
            }
        }
    }

    #[test]
    fn huge_lambda_kills_map() {
        let s = sample(8, 20, 11);
        let set = SnapshotSet {
            data: s.clone(),
            columns_meta: (0..20).map(|t| (0, t)).collect(),
            stride: 1,
        };
        let (basis, _) = crate::snapshots::pod(s.as_ref(), 2).unwrap();
        let (map, _) = fit_quadmap(&basis, &set, 1e12).unwrap();
        let e = crate::snapshots::projection_error(s.as_ref(), &basis).unwrap();
        let w = build_w((basis.as_ref().transpose() * &s).as_ref());
        assert!(map.h.norm_l2() <= 1e-6 * e.norm_l2() / w.norm_l2());
    }

    #[test]
    fn decode_matches_loop() {
        let v = crate::snapshots::pod(sample(6, 6, 1).as_ref(), 3).unwrap().0;
        let mut map = QuadraticMap::zeros(&v, 0.0);
        map.h = sample(6, 6, 2);
        let s = [0.3, -1.2, 0.5];
        let got = decode(&v, Some(&map), &s);
        let k = ckron(&s);
        for i in 0..6 {
            let mut want = 0.0;
            for j in 0..3 {
                want += v.columns[(i, j)] * s[j];
            }
            for j in 0..6 {
                want += map.h[(i, j)] * k[j];
            }
            assert!((got[i] - want).abs() < 1e-14);
        }
        assert_eq!(decode(&v, Some(&map), &[0.0; 3]), vec![0.0; 6]);
    }

    #[test]
    fn encode_column_gives_unit_vector() {
        let v = crate::snapshots::pod(sample(6, 4, 7).as_ref(), 3).unwrap().0;
        let e = encode(&v, v.columns.col_as_slice(1));
        assert!((e[1] - 1.0).abs() < 1e-14 && e[0].abs() < 1e-14 && e[2].abs() < 1e-14);
    }

    #[test]
    fn provenance_is_checked() {
        let v = crate::snapshots::pod(sample(6, 4, 7).as_ref(), 3).unwrap().0;
        let w = crate::snapshots::pod(sample(6, 4, 8).as_ref(), 3).unwrap().0;
        let map = QuadraticMap::zeros(&v, 1.0);
        assert!(map.check_basis(&v).is_ok());
        assert!(matches!(map.check_basis(&w), Err(Error::Provenance(_))));
    }
}
