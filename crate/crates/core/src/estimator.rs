//! Residual-based error estimator and greedy parameter selection.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::models::{AffineModel, ParamVector};
use crate::quadmanifold::{decode_matrix, QuadraticMap};
use crate::rom::{galerkin_reduce, solve_batch, ReducedOperators, ReducedTrajectory, SolveOptions};
use crate::scalar::Real;
use crate::snapshots::LinearBasis;

/// Estimator value assigned to unstable reduced solutions.
pub const PENALTY: f64 = 1e30;

/// One-step residual norms `||r^j||`, `j = 1..N_T`, of the decoded reduced
/// trajectory in the full-order one-step form (explicit Euler, with the
/// implicit part on the left for semi-implicit schemes and the second-order
/// correction for Lax-Wendroff).
pub fn residual_norms<T: Real>(
    model: &AffineModel<T>,
    basis: &LinearBasis<T>,
    map: Option<&QuadraticMap<T>>,
    mu: &ParamVector<T>,
    rt: &ReducedTrajectory<T>,
) -> Result<Vec<T>> {
    if !rt.stable {
        return Err(Error::Unstable {
            first_bad_step: rt.first_bad_step,
        });
    }
    let u = decode_matrix(basis, map, rt.states.as_ref());
    let alphas = model.coefficients(mu);
    let n_t = rt.n_steps();
    let mut prev = model.explicit_update(&alphas, u.col_as_slice(0), model.time(0));
    let mut out = Vec::with_capacity(n_t);
    for j in 1..=n_t {
        let lhs = model.implicit_lhs(&alphas, u.col_as_slice(j), model.time(j));
        let mut acc = T::zero();
        for (a, b) in lhs.iter().zip(&prev) {
            let d = *a - *b;
            acc += d * d;
        }
        out.push(acc.sqrt());
        if j < n_t {
            prev = model.explicit_update(&alphas, u.col_as_slice(j), model.time(j));
        }
    }
    Ok(out)
}

/// `sqrt(sum_j ||r^j||^2)`, or [`PENALTY`] for an unstable trajectory.
pub fn estimate<T: Real>(
    model: &AffineModel<T>,
    basis: &LinearBasis<T>,
    map: Option<&QuadraticMap<T>>,
    mu: &ParamVector<T>,
    rt: &ReducedTrajectory<T>,
) -> Result<f64> {
    if !rt.stable {
        return Ok(PENALTY);
    }
    let r = residual_norms(model, basis, map, mu, rt)?;
    Ok(r.iter().map(|x| x.as_f64() * x.as_f64()).sum::<f64>().sqrt())
}

/// Estimator values over a training set.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorReport {
    pub values: Vec<f64>,
    pub argmax_index: usize,
    pub penalty_used: bool,
}

impl EstimatorReport {
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("training set"));
        }
        let mut argmax = 0;
        for (k, &v) in values.iter().enumerate() {
            // strict comparison keeps the lowest index on ties
            if v > values[argmax] {
                argmax = k;
            }
        }
        let penalty_used = values.iter().any(|&v| v >= PENALTY);
        Ok(Self {
            values,
            argmax_index: argmax,
            penalty_used,
        })
    }

    pub fn max(&self) -> f64 {
        self.values[self.argmax_index]
    }
}

/// Solves the reduced model over `params` and evaluates the estimator for
/// each. With `abort_on_unstable`, the sweep stops at the first unstable
/// solve and every value is reported as [`PENALTY`].
pub fn estimate_all<T: Real>(
    model: &AffineModel<T>,
    ops: &ReducedOperators<T>,
    basis: &LinearBasis<T>,
    map: Option<&QuadraticMap<T>>,
    params: &[ParamVector<T>],
    abort_on_unstable: bool,
) -> Result<Vec<f64>> {
    let rts = solve_batch(model, ops, basis, map, params, SolveOptions { abort_on_unstable })?;
    if abort_on_unstable && rts.iter().any(|rt| !rt.stable) {
        return Ok(vec![PENALTY; params.len()]);
    }
    params
        .par_iter()
        .zip(rts.par_iter())
        .map(|(mu, rt)| estimate(model, basis, map, mu, rt))
        .collect()
}

/// Evaluates the estimator over the training set and picks its maximizer
/// (lowest index on ties).
pub fn select_parameter<T: Real>(
    model: &AffineModel<T>,
    basis: &LinearBasis<T>,
    map: Option<&QuadraticMap<T>>,
    training_set: &[ParamVector<T>],
) -> Result<EstimatorReport> {
    if training_set.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let ops = galerkin_reduce(model, basis, map)?;
    EstimatorReport::from_values(estimate_all(model, &ops, basis, map, training_set, false)?)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use faer::Mat;

    use super::*;
    use crate::linalg::CsrMatrix;
    use crate::models::{Coefficient, ParamBox, TimeScheme};
    use crate::rom::solve_rom;

    fn toy3() -> AffineModel<f64> {
        let a = CsrMatrix::from_triplets(3, 3, &[(0, 0, -1.0), (0, 1, 0.5), (1, 1, -0.2), (2, 1, 1.0), (2, 2, -0.3)]);
        AffineModel::linear(
            vec![(a, Coefficient::Linear { index: 0, scale: 1.0 })],
            vec![0.1, 0.0, 0.2],
            Arc::new(|mu: &ParamVector<f64>| vec![1.0, mu.values[0], -0.5]),
            0.05,
            8,
            TimeScheme::ExplicitEuler,
            ParamBox::new(vec![0.0], vec![2.0]),
        )
        .unwrap()
    }

    #[test]
    fn exact_trajectory_has_zero_residual() {
        let m = toy3();
        let mu = ParamVector::scalar(1.2);
        let v = LinearBasis::from_columns(Mat::identity(3, 3)).unwrap();
        let rt = solve_rom(&m, &v, None, &mu).unwrap();
        let r = residual_norms(&m, &v, None, &mu, &rt).unwrap();
        assert_eq!(r.len(), 8);
        assert!(r.iter().all(|&x| x <= 1e-12));
        assert!(estimate(&m, &v, None, &mu, &rt).unwrap() <= 1e-12);
    }

    #[test]
    fn hand_computed_residual_for_one_dimensional_basis() {
        let m = toy3();
        let mu = ParamVector::scalar(1.0);
        let v = LinearBasis::from_columns(Mat::from_fn(3, 1, |i, _| if i == 0 { 1.0 } else { 0.0 })).unwrap();
        let rt = solve_rom(&m, &v, None, &mu).unwrap();
        // s' = -s + 0.1, s0 = 1
        let s1 = 1.0 + 0.05 * (-1.0 + 0.1);
        assert!((rt.states[(0, 1)] - s1).abs() < 1e-15);
        // r^1 = u1 - u0 - dt (A u0 + f), u = (s, 0, 0)
        let r1 = [s1 - 1.0 - 0.05 * (-1.0 + 0.1), 0.0, -0.05 * 0.2];
        let want = (r1.iter().map(|x| x * x).sum::<f64>()).sqrt();
        let got = residual_norms(&m, &v, None, &mu, &rt).unwrap();
        assert!((got[0] - want).abs() < 1e-15);
    }

    #[test]
    fn penalty_for_unstable() {
        let m = toy3();
        let v = LinearBasis::from_columns(Mat::identity(3, 3)).unwrap();
        let mut rt = solve_rom(&m, &v, None, &ParamVector::scalar(1.0)).unwrap();
        rt.stable = false;
        assert_eq!(estimate(&m, &v, None, &rt.param.clone(), &rt).unwrap(), PENALTY);
    }

    #[test]
    fn argmax_ties_pick_lowest_index() {
        let r = EstimatorReport::from_values(vec![1.0, 3.0, 3.0, 2.0]).unwrap();
        assert_eq!(r.argmax_index, 1);
        assert!(!r.penalty_used);
        assert!(EstimatorReport::from_values(vec![]).is_err());
    }

    #[test]
    fn selects_parameter_outside_the_span() {
        // u' = mu A u with A e1 = e2: only mu > 0 leaves span{e1}.
        let a = CsrMatrix::from_triplets(3, 3, &[(1, 0, 1.0)]);
        let m = AffineModel::linear(
            vec![(a, Coefficient::Linear { index: 0, scale: 1.0 })],
            vec![0.0; 3],
            Arc::new(|_: &ParamVector<f64>| vec![1.0, 0.0, 0.0]),
            0.1,
            5,
            TimeScheme::ExplicitEuler,
            ParamBox::new(vec![0.0], vec![1.0]),
        )
        .unwrap();
        let v = LinearBasis::from_columns(Mat::from_fn(3, 1, |i, _| if i == 0 { 1.0 } else { 0.0 })).unwrap();
        let train = vec![ParamVector::scalar(0.0), ParamVector::scalar(1.0)];
        let rep = select_parameter(&m, &v, None, &train).unwrap();
        assert_eq!(rep.argmax_index, 1);
        assert!(rep.values[0] < 1e-14);
        assert!(rep.values[1] > 0.0);
    }
}
