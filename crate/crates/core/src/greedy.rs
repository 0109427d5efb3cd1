//! POD-Greedy basis growth, double-greedy selection of the regularization
//! parameter and the hierarchical greedy driver.

use std::time::Instant;

use faer::{Mat, MatRef};
use log::{debug, info, warn};

use crate::error::{Error, Result};
use crate::estimator::{estimate_all, EstimatorReport, PENALTY};
use crate::linalg::left_svd;
use crate::models::{AffineModel, ParamVector};
use crate::quadmanifold::{QuadMapFitter, QuadraticMap};
use crate::rom::{galerkin_reduce, reconstruct, solve_batch, SolveOptions};
use crate::scalar::Real;
use crate::snapshots::{pod, LinearBasis, SnapshotSet};

/// Basis increment per greedy iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Increment {
    Fixed(usize),
    /// Smallest number of modes capturing at least this fraction of the
    /// projection-error energy.
    Energy(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitialParam {
    Midpoint,
    Index(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GreedyConfig {
    pub m_max: usize,
    pub r0: usize,
    pub increment: Increment,
    pub l_sam: usize,
    pub lambda_set: Vec<f64>,
    pub n_lambda: usize,
    pub tolerance: f64,
    pub initial_param: InitialParam,
    /// Optional cap on the basis size; the loop stops once it is reached.
    pub r_max: Option<usize>,
}

impl Default for GreedyConfig {
    fn default() -> Self {
        Self {
            m_max: 30,
            r0: 1,
            increment: Increment::Fixed(2),
            l_sam: 1,
            lambda_set: lambda_grid(-6.0, 0.5, 6.0),
            n_lambda: 2,
            tolerance: 0.0,
            initial_param: InitialParam::Midpoint,
            r_max: None,
        }
    }
}

impl GreedyConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.r0 == 0 {
            return bad("r0 must be at least 1".into());
        }
        if self.l_sam == 0 {
            return bad("l_sam must be at least 1".into());
        }
        match self.increment {
            Increment::Fixed(0) => return bad("basis increment must be at least 1".into()),
            Increment::Energy(p) if !(p > 0.0 && p < 1.0) => {
                return bad(format!("energy threshold {p} must lie in (0, 1)"))
            }
            _ => {}
        }
        if self.lambda_set.is_empty() || self.lambda_set.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return bad("lambda set must be nonempty, finite and nonnegative".into());
        }
        if self.n_lambda == 0 || self.n_lambda > self.lambda_set.len() {
            return bad(format!(
                "n_lambda = {} must lie in 1..={}",
                self.n_lambda,
                self.lambda_set.len()
            ));
        }
        Ok(())
    }
}

/// `10^start, 10^(start+step), ..., 10^stop`.
pub fn lambda_grid(start: f64, step: f64, stop: f64) -> Vec<f64> {
    let n = ((stop - start) / step + 1e-9).floor() as usize + 1;
    (0..n).map(|k| 10f64.powf(start + step * k as f64)).collect()
}

/// Number of leading modes whose squared singular values reach `fraction`
/// of the total.
pub fn energy_rank<T: Real>(sigma: &[T], fraction: f64) -> usize {
    let total: f64 = sigma.iter().map(|s| s.as_f64() * s.as_f64()).sum();
    if total == 0.0 {
        return 0;
    }
    let mut acc = 0.0;
    for (k, s) in sigma.iter().enumerate() {
        acc += s.as_f64() * s.as_f64();
        if acc / total >= fraction {
            return k + 1;
        }
    }
    sigma.len()
}

/// Appends the leading modes of the projection error of `snapshots` onto
/// `basis`. Returns the new basis and the number of modes added.
pub fn pod_greedy_step<T: Real>(
    basis: &LinearBasis<T>,
    snapshots: MatRef<'_, T>,
    increment: Increment,
) -> Result<(LinearBasis<T>, usize)> {
    let e = crate::snapshots::projection_error(snapshots, basis)?;
    let scale = snapshots.norm_l2();
    let tiny = T::lit(1e-12) * scale;
    if scale == T::zero() || e.norm_l2() <= tiny {
        info!("projection error is numerically zero; basis unchanged at r = {}", basis.r());
        return Ok((basis.clone(), 0));
    }
    let (u, sigma) = left_svd(e.as_ref())?;
    let numerical = sigma.iter().take_while(|&&s| s > tiny).count();
    let wanted = match increment {
        Increment::Fixed(k) => k,
        Increment::Energy(p) => energy_rank(&sigma, p),
    };
    let k = wanted.min(numerical).min(basis.n() - basis.r());
    if k < wanted {
        warn!("basis increment reduced from {wanted} to {k} by the rank of the projection error");
    }
    let mut cols = basis.columns.clone();
    let mut added = 0;
    for c in 0..k {
        let mut z = u.col(c).to_owned();
        // two projection passes against everything accepted so far
        for _ in 0..2 {
            let coeff = cols.transpose() * &z;
            z -= &cols * &coeff;
        }
        let nrm = z.norm_l2();
        if nrm <= T::lit(1e-8) {
            continue;
        }
        z /= faer::Scale(nrm);
        let mut grown = Mat::<T>::zeros(cols.nrows(), cols.ncols() + 1);
        grown.as_mut().subcols_mut(0, cols.ncols()).copy_from(&cols);
        grown.as_mut().col_mut(cols.ncols()).copy_from(&z);
        cols = grown;
        added += 1;
    }
    let mut new_part = cols.as_ref().subcols(basis.r(), added).to_owned();
    crate::linalg::dense::fix_signs(&mut new_part);
    cols.as_mut().subcols_mut(basis.r(), added).copy_from(&new_part);
    Ok((LinearBasis::from_columns(cols)?, added))
}

/// Outcome of the double-greedy selection.
#[derive(Debug, Clone)]
pub struct LambdaSelection<T> {
    pub lambda: f64,
    pub map: QuadraticMap<T>,
    /// Worst-case training estimator per candidate ([`PENALTY`] if unstable).
    pub stage1: Vec<f64>,
    pub shortlist: Vec<usize>,
    /// True ROM error on the selected parameters per shortlisted candidate.
    pub stage2: Vec<(usize, f64)>,
    pub degenerate: bool,
    /// Training estimator values for the chosen candidate, when complete.
    pub estimator_values: Option<Vec<f64>>,
}

/// Two-stage choice of the regularization parameter: shortlist by the
/// worst-case training estimator, then pick the smallest true ROM error on
/// the parameters whose snapshots are in `snapshots`.
#[allow(clippy::too_many_arguments)]
pub fn double_greedy_lambda<T: Real>(
    model: &AffineModel<T>,
    basis: &LinearBasis<T>,
    fitter: &QuadMapFitter<T>,
    snapshots: &SnapshotSet<T>,
    selected: &[usize],
    training_set: &[ParamVector<T>],
    lambda_set: &[f64],
    n_lambda: usize,
) -> Result<LambdaSelection<T>> {
    if lambda_set.is_empty() {
        return Err(Error::Empty("lambda set"));
    }
    let mut stage1 = Vec::with_capacity(lambda_set.len());
    let mut values: Vec<Option<Vec<f64>>> = Vec::with_capacity(lambda_set.len());
    let mut maps: Vec<Option<QuadraticMap<T>>> = Vec::with_capacity(lambda_set.len());
    for &lambda in lambda_set {
        let (map, _) = fitter.fit(T::lit(lambda))?;
        let ops = galerkin_reduce(model, basis, Some(&map))?;
        let est = estimate_all(model, &ops, basis, Some(&map), training_set, true)?;
        let worst = est.iter().cloned().fold(0.0f64, f64::max);
        debug!("stage 1: lambda = {lambda:.3e}, worst estimator = {worst:.4e}");
        stage1.push(worst);
        let stable = worst < PENALTY;
        values.push(stable.then_some(est));
        maps.push(stable.then_some(map));
    }

    let mut order: Vec<usize> = (0..lambda_set.len()).filter(|&i| stage1[i] < PENALTY).collect();
    if order.is_empty() {
        let k = (0..lambda_set.len())
            .max_by(|&a, &b| lambda_set[a].total_cmp(&lambda_set[b]).then(b.cmp(&a)))
            .expect("nonempty");
        warn!(
            "every regularization candidate produced an unstable reduced model; falling back to lambda = {:e}",
            lambda_set[k]
        );
        let (map, _) = fitter.fit(T::lit(lambda_set[k]))?;
        return Ok(LambdaSelection {
            lambda: lambda_set[k],
            map,
            stage1,
            shortlist: Vec::new(),
            stage2: Vec::new(),
            degenerate: true,
            estimator_values: None,
        });
    }
    // stable sort keeps the earlier candidate on ties
    order.sort_by(|&a, &b| stage1[a].total_cmp(&stage1[b]));
    order.truncate(n_lambda);

    let mut params: Vec<ParamVector<T>> = Vec::with_capacity(selected.len());
    let mut unique: Vec<usize> = Vec::new();
    for &p in selected {
        if !unique.contains(&p) {
            unique.push(p);
            params.push(training_set[p].clone());
        }
    }
    let mut stage2 = Vec::with_capacity(order.len());
    for &i in &order {
        let map = maps[i].as_ref().expect("stable candidate has a map");
        let err = true_rom_error(model, basis, map, snapshots, &unique, &params)?;
        debug!("stage 2: lambda = {:.3e}, ROM error = {err:.4e}", lambda_set[i]);
        stage2.push((i, err));
    }
    let &(best, _) = stage2
        .iter()
        .min_by(|a, b| {
            a.1.total_cmp(&b.1)
                .then(lambda_set[a.0].total_cmp(&lambda_set[b.0]))
        })
        .expect("nonempty shortlist");
    Ok(LambdaSelection {
        lambda: lambda_set[best],
        map: maps[best].take().expect("stable candidate has a map"),
        stage1,
        shortlist: order,
        stage2,
        degenerate: false,
        estimator_values: values[best].take(),
    })
}

/// `||S - decode(S_r)||_F` with the reduced solutions sampled like `S`.
fn true_rom_error<T: Real>(
    model: &AffineModel<T>,
    basis: &LinearBasis<T>,
    map: &QuadraticMap<T>,
    snapshots: &SnapshotSet<T>,
    unique: &[usize],
    params: &[ParamVector<T>],
) -> Result<f64> {
    let ops = galerkin_reduce(model, basis, Some(map))?;
    let rts = solve_batch(model, &ops, basis, Some(map), params, SolveOptions::default())?;
    let mut acc = 0.0;
    for (p, rt) in unique.iter().zip(&rts) {
        if !rt.stable {
            return Ok(f64::INFINITY);
        }
        let approx = reconstruct(basis, Some(map), rt, snapshots.stride)?;
        let cols: Vec<usize> = snapshots
            .columns_meta
            .iter()
            .enumerate()
            .filter(|(_, m)| m.0 == *p)
            .map(|(c, _)| c)
            .collect();
        // a reselected parameter contributes its columns once per selection
        for (k, &c) in cols.iter().enumerate() {
            let d = snapshots.data.col(c) - approx.col(k % approx.ncols());
            let n = d.norm_l2().as_f64();
            acc += n * n;
        }
    }
    Ok(acc.sqrt())
}

/// Per-iteration record of a greedy run.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub m: usize,
    pub r: usize,
    /// Training index of the parameter added at this iteration.
    pub mu_selected_index: usize,
    pub lambda: Option<f64>,
    pub estimator_max: f64,
    pub estimator_argmax: usize,
    pub wall_time_s: f64,
    pub stage1: Vec<f64>,
    pub degenerate: bool,
    pub fom_solves: usize,
}

/// Output of a greedy run.
#[derive(Debug, Clone)]
pub struct GreedyLog<T> {
    pub records: Vec<IterationRecord>,
    pub basis: LinearBasis<T>,
    pub map: Option<QuadraticMap<T>>,
    pub snapshot_meta: Vec<(usize, usize)>,
    pub selected: Vec<usize>,
    pub fom_solves: usize,
}

/// State handed to the per-iteration observer.
pub struct GreedyState<'a, T> {
    pub record: &'a IterationRecord,
    pub basis: &'a LinearBasis<T>,
    pub map: Option<&'a QuadraticMap<T>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GreedyMode {
    Quadratic,
    Linear,
}

pub fn initial_index(config: &GreedyConfig, n_train: usize) -> Result<usize> {
    match config.initial_param {
        InitialParam::Midpoint => Ok(n_train.div_ceil(2) - 1),
        InitialParam::Index(k) if k < n_train => Ok(k),
        InitialParam::Index(k) => Err(Error::Config(format!(
            "initial parameter index {k} outside the training set of size {n_train}"
        ))),
    }
}

/// Hierarchical greedy construction of a quadratic-manifold ROM.
pub fn run_greedy<T: Real>(
    model: &AffineModel<T>,
    training_set: &[ParamVector<T>],
    config: &GreedyConfig,
) -> Result<GreedyLog<T>> {
    run_greedy_with(model, training_set, config, GreedyMode::Quadratic, |_| Ok(()))
}

/// Greedy construction of a linear ROM (no quadratic map).
pub fn run_greedy_linear<T: Real>(
    model: &AffineModel<T>,
    training_set: &[ParamVector<T>],
    config: &GreedyConfig,
) -> Result<GreedyLog<T>> {
    run_greedy_with(model, training_set, config, GreedyMode::Linear, |_| Ok(()))
}

/// Greedy driver with an observer called after every iteration record.
pub fn run_greedy_with<T: Real>(
    model: &AffineModel<T>,
    training_set: &[ParamVector<T>],
    config: &GreedyConfig,
    mode: GreedyMode,
    mut observer: impl FnMut(&GreedyState<'_, T>) -> Result<()>,
) -> Result<GreedyLog<T>> {
    config.validate()?;
    if training_set.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let start = Instant::now();
    let first = initial_index(config, training_set.len())?;
    let traj = model.solve_fom(&training_set[first])?;
    let mut fom_solves = 1;
    let mut snapshots = SnapshotSet::collect(&traj, config.l_sam, first)?;
    drop(traj);
    let r0 = config.r0.min(snapshots.n_rows()).min(snapshots.n_cols());
    let (mut basis, _) = pod(snapshots.data.as_ref(), r0)?;
    let mut selected = vec![first];
    let mut records = Vec::new();
    let mut m = 0;
    loop {
        let (map, lambda, stage1, degenerate, known) = match mode {
            GreedyMode::Quadratic => {
                let fitter = QuadMapFitter::new(&basis, snapshots.data.as_ref())?;
                let sel = double_greedy_lambda(
                    model,
                    &basis,
                    &fitter,
                    &snapshots,
                    &selected,
                    training_set,
                    &config.lambda_set,
                    config.n_lambda,
                )?;
                (Some(sel.map), Some(sel.lambda), sel.stage1, sel.degenerate, sel.estimator_values)
            }
            GreedyMode::Linear => (None, None, Vec::new(), false, None),
        };
        let values = match known {
            Some(v) => v,
            None => {
                let ops = galerkin_reduce(model, &basis, map.as_ref())?;
                estimate_all(model, &ops, &basis, map.as_ref(), training_set, false)?
            }
        };
        let report = EstimatorReport::from_values(values)?;
        let record = IterationRecord {
            m,
            r: basis.r(),
            mu_selected_index: *selected.last().expect("nonempty"),
            lambda,
            estimator_max: report.max(),
            estimator_argmax: report.argmax_index,
            wall_time_s: start.elapsed().as_secs_f64(),
            stage1,
            degenerate,
            fom_solves,
        };
        info!(
            "iteration {m}: r = {}, lambda = {:?}, max estimator = {:.4e}, next = {}",
            record.r, record.lambda, record.estimator_max, record.estimator_argmax
        );
        observer(&GreedyState {
            record: &record,
            basis: &basis,
            map: map.as_ref(),
        })?;
        records.push(record);

        let capped = config.r_max.is_some_and(|cap| basis.r() >= cap);
        if m >= config.m_max || report.max() <= config.tolerance || capped {
            return Ok(GreedyLog {
                records,
                basis,
                map,
                snapshot_meta: snapshots.columns_meta,
                selected,
                fom_solves,
            });
        }
        let next = report.argmax_index;
        let traj = model.solve_fom(&training_set[next])?;
        fom_solves += 1;
        let block = SnapshotSet::collect(&traj, config.l_sam, next)?;
        drop(traj);
        let increment = match (config.increment, config.r_max) {
            (Increment::Fixed(k), Some(cap)) => Increment::Fixed(k.min(cap.saturating_sub(basis.r()).max(1))),
            (inc, _) => inc,
        };
        let (grown, added) = pod_greedy_step(&basis, block.data.as_ref(), increment)?;
        basis = grown;
        debug!("added {added} modes");
        snapshots.data = crate::linalg::dense::hcat(snapshots.data.as_ref(), block.data.as_ref());
        snapshots.columns_meta.extend(block.columns_meta);
        selected.push(next);
        m += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dense::orthonormality_defect;

    #[test]
    fn lambda_grid_endpoints() {
        let g = lambda_grid(-6.0, 0.5, 6.0);
        assert_eq!(g.len(), 25);
        assert!((g[0] - 1e-6).abs() < 1e-20);
        assert!((g[24] - 1e6).abs() < 1e-6);
        assert_eq!(lambda_grid(-5.0, 1.0, 0.0).len(), 6);
    }

    #[test]
    fn energy_rank_from_spectrum() {
        let s: Vec<f64> = [0.5f64, 0.3, 0.2].iter().map(|x| x.sqrt()).collect();
        assert_eq!(energy_rank(&s, 0.7), 2);
        assert_eq!(energy_rank(&s, 0.5), 1);
        assert_eq!(energy_rank(&s, 0.9), 3);
    }

    #[test]
    fn empty_basis_captures_rank_two_snapshots() {
        let s = Mat::<f64>::from_fn(5, 4, |i, j| (i as f64) * (j as f64 + 1.0) + (j % 2) as f64);
        let (b, added) = pod_greedy_step(&LinearBasis::empty(5), s.as_ref(), Increment::Fixed(2)).unwrap();
        assert_eq!(added, 2);
        let e = crate::snapshots::projection_error(s.as_ref(), &b).unwrap();
        assert!(e.norm_l2() < 1e-12 * s.norm_l2());
    }

    #[test]
    fn snapshots_in_span_leave_basis_unchanged() {
        let s = Mat::<f64>::from_fn(5, 4, |i, j| (i as f64 + 1.0) * (j as f64 + 1.0));
        let (b, _) = pod(s.as_ref(), 1).unwrap();
        let (b2, added) = pod_greedy_step(&b, s.as_ref(), Increment::Fixed(2)).unwrap();
        assert_eq!(added, 0);
        assert_eq!(b2, b);
    }

    #[test]
    fn growth_keeps_orthonormality() {
        let mut b = LinearBasis::<f64>::empty(30);
        for k in 0..6 {
            let s = Mat::<f64>::from_fn(30, 10, |i, j| ((i * (k + 2) + j * 7) as f64 * 0.37).sin());
            b = pod_greedy_step(&b, s.as_ref(), Increment::Fixed(3)).unwrap().0;
            assert!(orthonormality_defect(b.as_ref()) < 1e-10);
        }
    }

    #[test]
    fn midpoint_index() {
        let c = GreedyConfig::default();
        assert_eq!(initial_index(&c, 41).unwrap(), 20);
        assert_eq!(initial_index(&c, 21).unwrap(), 10);
        assert_eq!(initial_index(&c, 4).unwrap(), 1);
        let c = GreedyConfig {
            initial_param: InitialParam::Index(9),
            ..GreedyConfig::default()
        };
        assert!(initial_index(&c, 4).is_err());
    }

    #[test]
    fn config_validation() {
        let ok = GreedyConfig::default();
        assert!(ok.validate().is_ok());
        for bad in [
            GreedyConfig { n_lambda: 30, ..ok.clone() },
            GreedyConfig { r0: 0, ..ok.clone() },
            GreedyConfig { increment: Increment::Energy(1.0), ..ok.clone() },
            GreedyConfig { lambda_set: vec![], ..ok.clone() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
    }
}
