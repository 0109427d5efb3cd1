//! Snapshot matrices and POD bases.

use faer::{Mat, MatRef};

use crate::error::{Error, Result};
use crate::linalg::{left_svd, orthonormality_defect};
use crate::models::Trajectory;
use crate::scalar::Real;

/// Column-sampled trajectories with `(parameter index, time index)` tags.
#[derive(Debug, Clone)]
pub struct SnapshotSet<T> {
    pub data: Mat<T>,
    pub columns_meta: Vec<(usize, usize)>,
    pub stride: usize,
}

impl<T: Real> SnapshotSet<T> {
    pub fn empty(n: usize, stride: usize) -> Self {
        Self {
            data: Mat::zeros(n, 0),
            columns_meta: Vec::new(),
            stride,
        }
    }

    /// Samples `u^0, u^stride, ..., u^{N_T}` from a trajectory.
    pub fn collect(traj: &Trajectory<T>, stride: usize, param_index: usize) -> Result<Self> {
        let (data, meta) = sample(traj, stride, param_index)?;
        Ok(Self {
            data,
            columns_meta: meta,
            stride,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.data.ncols()
    }

    /// Returns a new set with the sampled trajectory appended.
    pub fn append(&self, traj: &Trajectory<T>, param_index: usize) -> Result<Self> {
        let mut out = self.clone();
        out.push(traj, param_index)?;
        Ok(out)
    }

    /// In-place variant of [`SnapshotSet::append`].
    pub fn push(&mut self, traj: &Trajectory<T>, param_index: usize) -> Result<()> {
        if traj.states.nrows() != self.n_rows() {
            return Err(Error::Dimension {
                context: "snapshot append",
                expected: self.n_rows(),
                found: traj.states.nrows(),
            });
        }
        let (block, meta) = sample(traj, self.stride, param_index)?;
        self.data = crate::linalg::dense::hcat(self.data.as_ref(), block.as_ref());
        self.columns_meta.extend(meta);
        Ok(())
    }

    /// Distinct parameter indices in order of first appearance.
    pub fn param_indices(&self) -> Vec<usize> {
        let mut out: Vec<usize> = Vec::new();
        for &(p, _) in &self.columns_meta {
            if out.last() != Some(&p) && !out.contains(&p) {
                out.push(p);
            }
        }
        out
    }
}

fn sample<T: Real>(traj: &Trajectory<T>, stride: usize, param_index: usize) -> Result<(Mat<T>, Vec<(usize, usize)>)> {
    let n_t = traj.n_steps();
    if stride == 0 || !n_t.is_multiple_of(stride) {
        return Err(Error::Stride { stride, n_steps: n_t });
    }
    let times: Vec<usize> = (0..=n_t).step_by(stride).collect();
    let data = Mat::from_fn(traj.states.nrows(), times.len(), |i, j| traj.states[(i, times[j])]);
    Ok((data, times.into_iter().map(|t| (param_index, t)).collect()))
}

/// Orthonormal basis stored column-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearBasis<T> {
    pub columns: Mat<T>,
}

impl<T: Real> LinearBasis<T> {
    pub fn empty(n: usize) -> Self {
        Self {
            columns: Mat::zeros(n, 0),
        }
    }

    /// Wraps `columns`, checking orthonormality.
    pub fn from_columns(columns: Mat<T>) -> Result<Self> {
        let defect = orthonormality_defect(columns.as_ref()).as_f64();
        let tol = if std::mem::size_of::<T>() == 4 { 1e-4 } else { 1e-10 };
        if defect > tol {
            return Err(Error::Decomposition(format!(
                "basis columns are not orthonormal (defect {defect:.3e})"
            )));
        }
        Ok(Self { columns })
    }

    pub fn r(&self) -> usize {
        self.columns.ncols()
    }

    pub fn n(&self) -> usize {
        self.columns.nrows()
    }

    pub fn as_ref(&self) -> MatRef<'_, T> {
        self.columns.as_ref()
    }

    /// Leading `r` columns.
    pub fn truncate(&self, r: usize) -> Self {
        Self {
            columns: self.columns.as_ref().subcols(0, r.min(self.r())).to_owned(),
        }
    }

    /// 64-bit fingerprint of the basis entries, used to tie a quadratic map
    /// to the basis it was fitted against.
    pub fn fingerprint(&self) -> u64 {
        use std::hash::Hasher;
        let mut h = twox_hash::XxHash64::with_seed(0);
        h.write_u64(self.n() as u64);
        h.write_u64(self.r() as u64);
        for j in 0..self.r() {
            for x in self.columns.col_as_slice(j) {
                h.write_u64(x.as_f64().to_bits());
            }
        }
        h.finish()
    }
}

/// Leading `r` left singular vectors of `data` and all its singular values.
pub fn pod<T: Real>(data: MatRef<'_, T>, r: usize) -> Result<(LinearBasis<T>, Vec<T>)> {
    let available = data.nrows().min(data.ncols());
    if r == 0 || r > available {
        return Err(Error::Rank { requested: r, available });
    }
    let (u, s) = left_svd(data)?;
    let tol = s[0] * T::epsilon() * T::from_count(data.nrows().max(data.ncols()));
    if s[r - 1] <= tol {
        let numerical = s.iter().take_while(|&&x| x > tol).count();
        return Err(Error::Rank {
            requested: r,
            available: numerical,
        });
    }
    let basis = LinearBasis {
        columns: u.as_ref().subcols(0, r).to_owned(),
    };
    Ok((basis, s))
}

/// `(I - V V^T) S`
pub fn projection_error<T: Real>(data: MatRef<'_, T>, basis: &LinearBasis<T>) -> Result<Mat<T>> {
    if data.nrows() != basis.n() {
        return Err(Error::Dimension {
            context: "projection error",
            expected: basis.n(),
            found: data.nrows(),
        });
    }
    if basis.r() == 0 {
        return Ok(data.to_owned());
    }
    let v = basis.as_ref();
    let coeffs = v.transpose() * data;
    Ok(data - v * &coeffs)
}
