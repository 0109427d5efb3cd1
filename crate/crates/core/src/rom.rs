//! Galerkin reduced operators and reduced time integration.
//!
//! The reduced scheme mirrors the full-order one: Lax–Wendroff models use the
//! projected Lax–Wendroff map `s + V^T (dt a A + dt^2/2 a^2 L) u_hat`, RK4
//! models use RK4, and the semi-implicit model keeps its implicit linear part
//! implicit while every quadratic term is explicit.

use faer::linalg::matmul::matmul;
use faer::linalg::solvers::{PartialPivLu, Solve};
use faer::{Accum, Mat, MatRef, Par};

use crate::error::{Error, Result};
use crate::models::{AffineModel, ParamVector, TimeScheme};
use crate::quadmanifold::{build_w, decode_matrix, encode_matrix, QuadraticMap};
use crate::scalar::Real;
use crate::snapshots::LinearBasis;

/// A reduced state is declared unstable once any entry exceeds
/// `BLOWUP_FACTOR * (1 + ||s^0||)`.
pub const BLOWUP_FACTOR: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RomMode {
    Linear,
    Quadratic,
}

/// Projected operators of one (basis, map) pair.
#[derive(Debug, Clone)]
pub struct ReducedOperators<T> {
    pub r: usize,
    pub q: usize,
    pub a_hat: Vec<Mat<T>>,
    /// Empty in linear mode.
    pub b_hat: Vec<Mat<T>>,
    pub f_hat: Vec<T>,
    pub boundary_hat: Vec<Option<Vec<T>>>,
    /// `(V^T L V, V^T L H)` for Lax–Wendroff models.
    pub second_order: Option<(Mat<T>, Option<Mat<T>>)>,
    pub mode: RomMode,
    pub nonlinear: bool,
}

/// Galerkin projection of the model's affine terms onto `basis` (and `map`).
pub fn galerkin_reduce<T: Real>(
    model: &AffineModel<T>,
    basis: &LinearBasis<T>,
    map: Option<&QuadraticMap<T>>,
) -> Result<ReducedOperators<T>> {
    if basis.n() != model.n_dof {
        return Err(Error::Dimension {
            context: "galerkin basis",
            expected: model.n_dof,
            found: basis.n(),
        });
    }
    if let Some(m) = map {
        m.check_basis(basis)?;
    }
    let v = basis.as_ref();
    let vt = v.transpose();
    let r = basis.r();
    let q = map.map_or(0, |m| m.q());
    let f_hat = crate::quadmanifold::encode(basis, &model.forcing);
    let mode = if map.is_some() { RomMode::Quadratic } else { RomMode::Linear };
    if model.is_nonlinear() {
        return Ok(ReducedOperators {
            r,
            q,
            a_hat: Vec::new(),
            b_hat: Vec::new(),
            f_hat,
            boundary_hat: Vec::new(),
            second_order: None,
            mode,
            nonlinear: true,
        });
    }
    let mut a_hat = Vec::with_capacity(model.terms.len());
    let mut b_hat = Vec::new();
    let mut boundary_hat = Vec::with_capacity(model.terms.len());
    for term in &model.terms {
        a_hat.push(vt * term.operator.mul_dense(v));
        if let Some(m) = map {
            b_hat.push(vt * term.operator.mul_dense(m.h.as_ref()));
        }
        boundary_hat.push(term.boundary.as_ref().map(|b| crate::quadmanifold::encode(basis, b)));
    }
    let second_order = match &model.scheme {
        TimeScheme::LaxWendroff { second_order, .. } => Some((
            vt * second_order.mul_dense(v),
            map.map(|m| vt * second_order.mul_dense(m.h.as_ref())),
        )),
        _ => None,
    };
    Ok(ReducedOperators {
        r,
        q,
        a_hat,
        b_hat,
        f_hat,
        boundary_hat,
        second_order,
        mode,
        nonlinear: false,
    })
}

/// Reduced trajectory; columns after an instability are left at zero.
#[derive(Debug, Clone)]
pub struct ReducedTrajectory<T> {
    pub states: Mat<T>,
    pub param: ParamVector<T>,
    pub stable: bool,
    pub first_bad_step: Option<usize>,
}

impl<T: Real> ReducedTrajectory<T> {
    pub fn n_steps(&self) -> usize {
        self.states.ncols() - 1
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SolveOptions {
    /// Stop the whole batch as soon as any member becomes unstable.
    pub abort_on_unstable: bool,
}

/// Solves the reduced model at one parameter.
pub fn solve_rom<T: Real>(
    model: &AffineModel<T>,
    basis: &LinearBasis<T>,
    map: Option<&QuadraticMap<T>>,
    mu: &ParamVector<T>,
) -> Result<ReducedTrajectory<T>> {
    let ops = galerkin_reduce(model, basis, map)?;
    let mut out = solve_batch(model, &ops, basis, map, std::slice::from_ref(mu), SolveOptions::default())?;
    Ok(out.pop().expect("one trajectory"))
}

/// Solves the reduced model at several parameters. Parameters sharing the
/// same coefficient values are integrated together as columns of one block.
pub fn solve_batch<T: Real>(
    model: &AffineModel<T>,
    ops: &ReducedOperators<T>,
    basis: &LinearBasis<T>,
    map: Option<&QuadraticMap<T>>,
    params: &[ParamVector<T>],
    opts: SolveOptions,
) -> Result<Vec<ReducedTrajectory<T>>> {
    let mut groups: Vec<(Vec<T>, Vec<usize>)> = Vec::new();
    for (k, mu) in params.iter().enumerate() {
        model.param_box.check(mu)?;
        let alphas = model.coefficients(mu);
        match groups.iter_mut().find(|(a, _)| *a == alphas) {
            Some((_, members)) => members.push(k),
            None => groups.push((alphas, vec![k])),
        }
    }
    let mut out: Vec<Option<ReducedTrajectory<T>>> = vec![None; params.len()];
    let mut aborted = false;
    for (alphas, members) in groups {
        let mut s0 = Mat::<T>::zeros(ops.r, members.len());
        for (c, &k) in members.iter().enumerate() {
            let u0 = model.initial_state(&params[k])?;
            let u0 = Mat::<T>::from_fn(u0.len(), 1, |i, _| u0[i]);
            s0.as_mut().col_mut(c).copy_from(encode_matrix(basis, u0.as_ref()).col(0));
        }
        let result = if aborted {
            None
        } else {
            let stepper = GroupStepper::new(model, ops, basis, map, &alphas)?;
            Some(stepper.integrate(s0.as_ref(), opts))
        };
        for (c, &k) in members.iter().enumerate() {
            let rt = match &result {
                Some((states, bad)) => ReducedTrajectory {
                    states: states[c].clone(),
                    param: params[k].clone(),
                    stable: bad[c].is_none(),
                    first_bad_step: bad[c],
                },
                None => ReducedTrajectory {
                    states: Mat::zeros(ops.r, model.n_steps + 1),
                    param: params[k].clone(),
                    stable: false,
                    first_bad_step: Some(0),
                },
            };
            if !rt.stable && opts.abort_on_unstable {
                aborted = true;
            }
            out[k] = Some(rt);
        }
    }
    Ok(out.into_iter().map(|x| x.expect("every parameter solved")).collect())
}

/// Per-coefficient-vector reduced integrator.
struct GroupStepper<'a, T: Real> {
    model: &'a AffineModel<T>,
    basis: &'a LinearBasis<T>,
    map: Option<&'a QuadraticMap<T>>,
    f_hat: Vec<T>,
    /// Explicit linear increment (already scaled by dt for one-step forms).
    lin: Mat<T>,
    quad: Option<Mat<T>>,
    b_explicit: Vec<T>,
    b_implicit: Vec<T>,
    lu: Option<PartialPivLu<T>>,
}

fn combine<T: Real>(mats: &[Mat<T>], weights: &[T], keep: impl Fn(usize) -> bool, rows: usize, cols: usize) -> Mat<T> {
    let mut out = Mat::<T>::zeros(rows, cols);
    for (i, m) in mats.iter().enumerate() {
        if keep(i) {
            out += m * faer::Scale(weights[i]);
        }
    }
    out
}

impl<'a, T: Real> GroupStepper<'a, T> {
    fn new(
        model: &'a AffineModel<T>,
        ops: &ReducedOperators<T>,
        basis: &'a LinearBasis<T>,
        map: Option<&'a QuadraticMap<T>>,
        alphas: &[T],
    ) -> Result<Self> {
        let (r, q) = (ops.r, ops.q);
        let dt = model.dt;
        let implicit: Vec<usize> = match &model.scheme {
            TimeScheme::SemiImplicit { implicit_terms } => implicit_terms.clone(),
            _ => Vec::new(),
        };
        let is_imp = |i: usize| implicit.contains(&i);
        let mut lin = combine(&ops.a_hat, alphas, |i| !is_imp(i), r, r);
        let mut quad = (!ops.b_hat.is_empty()).then(|| combine(&ops.b_hat, alphas, |_| true, r, q));
        let mut b_explicit = vec![T::zero(); r];
        let mut b_implicit = vec![T::zero(); r];
        for (i, b) in ops.boundary_hat.iter().enumerate() {
            if let Some(b) = b {
                let target = if is_imp(i) { &mut b_implicit } else { &mut b_explicit };
                for (t, x) in target.iter_mut().zip(b) {
                    *t += alphas[i] * *x;
                }
            }
        }
        let mut lu = None;
        match &model.scheme {
            TimeScheme::Rk4 => {}
            TimeScheme::ExplicitEuler | TimeScheme::SemiImplicit { .. } => {
                lin *= faer::Scale(dt);
                if let Some(qm) = quad.as_mut() {
                    *qm *= faer::Scale(dt);
                }
                if !implicit.is_empty() {
                    let a_imp = combine(&ops.a_hat, alphas, is_imp, r, r);
                    let m = Mat::<T>::identity(r, r) - a_imp * faer::Scale(dt);
                    lu = Some(m.partial_piv_lu());
                }
            }
            TimeScheme::LaxWendroff { velocity_term, .. } => {
                let a = alphas[*velocity_term];
                let c2 = T::lit(0.5) * dt * dt * a * a;
                lin *= faer::Scale(dt);
                if let Some((l_hat, lb_hat)) = &ops.second_order {
                    lin += l_hat * faer::Scale(c2);
                    if let (Some(qm), Some(lb)) = (quad.as_mut(), lb_hat) {
                        *qm *= faer::Scale(dt);
                        *qm += lb * faer::Scale(c2);
                    }
                }
            }
        }
        Ok(Self {
            model,
            basis,
            map,
            f_hat: ops.f_hat.clone(),
            lin,
            quad,
            b_explicit,
            b_implicit,
            lu,
        })
    }

    /// `dst = lin S + quad W(S)` (without the affine shift).
    fn apply_operators(&self, s: MatRef<'_, T>, dst: &mut Mat<T>) {
        matmul(dst.as_mut(), Accum::Replace, self.lin.as_ref(), s, T::one(), Par::Seq);
        if let Some(qm) = &self.quad {
            let w = build_w(s);
            matmul(dst.as_mut(), Accum::Add, qm.as_ref(), w.as_ref(), T::one(), Par::Seq);
        }
    }

    fn add_shift(&self, dst: &mut Mat<T>, scale: T, t: T, include_implicit: bool) {
        let g = self.model.boundary_profile.eval(t);
        for c in 0..dst.ncols() {
            let col = dst.col_as_slice_mut(c);
            for i in 0..col.len() {
                let mut v = self.f_hat[i] + g * self.b_explicit[i];
                if include_implicit {
                    v += g * self.b_implicit[i];
                }
                col[i] += scale * v;
            }
        }
    }

    /// Continuous reduced right-hand side at time `t`.
    fn rhs(&self, s: MatRef<'_, T>, t: T) -> Mat<T> {
        let mut out = Mat::<T>::zeros(s.nrows(), s.ncols());
        if self.model.is_nonlinear() {
            let u = decode_matrix(self.basis, self.map, s);
            let f = self.model.nonlinear.as_ref().expect("nonlinear model");
            let mut fu = Mat::<T>::zeros(u.nrows(), u.ncols());
            for c in 0..u.ncols() {
                f.eval(u.col_as_slice(c), fu.col_as_slice_mut(c));
            }
            matmul(out.as_mut(), Accum::Replace, self.basis.as_ref().transpose(), fu.as_ref(), T::one(), Par::Seq);
        } else {
            self.apply_operators(s, &mut out);
        }
        self.add_shift(&mut out, T::one(), t, true);
        out
    }

    fn step(&self, s: MatRef<'_, T>, step: usize) -> Mat<T> {
        let dt = self.model.dt;
        let t = self.model.time(step);
        match &self.model.scheme {
            TimeScheme::Rk4 => {
                let half = T::lit(0.5);
                let k1 = self.rhs(s, t);
                let k2 = self.rhs((s + &k1 * faer::Scale(half * dt)).as_ref(), t + half * dt);
                let k3 = self.rhs((s + &k2 * faer::Scale(half * dt)).as_ref(), t + half * dt);
                let k4 = self.rhs((s + &k3 * faer::Scale(dt)).as_ref(), t + dt);
                let two = T::lit(2.0);
                let sixth = dt / T::lit(6.0);
                Mat::from_fn(s.nrows(), s.ncols(), |i, j| {
                    s[(i, j)] + sixth * (k1[(i, j)] + two * (k2[(i, j)] + k3[(i, j)]) + k4[(i, j)])
                })
            }
            _ => {
                let mut inc = Mat::<T>::zeros(s.nrows(), s.ncols());
                self.apply_operators(s, &mut inc);
                let mut next = s.to_owned();
                next += &inc;
                self.add_shift(&mut next, dt, t, false);
                if let Some(lu) = &self.lu {
                    let g = self.model.boundary_profile.eval(t + dt);
                    for c in 0..next.ncols() {
                        let col = next.col_as_slice_mut(c);
                        for i in 0..col.len() {
                            col[i] += dt * g * self.b_implicit[i];
                        }
                    }
                    lu.solve_in_place(next.as_mut());
                }
                next
            }
        }
    }

    /// Integrates every column of `s0`; returns per-column trajectories and
    /// first unstable step.
    fn integrate(&self, s0: MatRef<'_, T>, opts: SolveOptions) -> (Vec<Mat<T>>, Vec<Option<usize>>) {
        let (r, b) = s0.shape();
        let n_t = self.model.n_steps;
        let mut traj: Vec<Mat<T>> = (0..b).map(|_| Mat::zeros(r, n_t + 1)).collect();
        let mut bad: Vec<Option<usize>> = vec![None; b];
        let limits: Vec<T> = (0..b)
            .map(|c| T::lit(BLOWUP_FACTOR) * (T::one() + s0.col(c).norm_l2()))
            .collect();
        for c in 0..b {
            traj[c].as_mut().col_mut(0).copy_from(s0.col(c));
        }
        let mut active: Vec<usize> = (0..b).collect();
        let mut s = s0.to_owned();
        for j in 1..=n_t {
            let next = self.step(s.as_ref(), j - 1);
            let mut keep = Vec::with_capacity(active.len());
            for (c, &orig) in active.iter().enumerate() {
                let col = next.col_as_slice(c);
                if col.iter().all(|x| x.is_finite() && x.abs() <= limits[orig]) {
                    keep.push(c);
                    traj[orig].as_mut().col_mut(j).copy_from(next.col(c));
                } else {
                    bad[orig] = Some(j);
                }
            }
            if keep.len() < active.len() {
                if opts.abort_on_unstable {
                    for &orig in &active {
                        if bad[orig].is_none() {
                            bad[orig] = Some(j);
                        }
                    }
                    break;
                }
                s = Mat::from_fn(r, keep.len(), |i, c| next[(i, keep[c])]);
                active = keep.iter().map(|&c| active[c]).collect();
                if active.is_empty() {
                    break;
                }
            } else {
                s = next;
            }
        }
        (traj, bad)
    }
}

/// Decodes the reduced states at times `0, stride, ..., N_T`.
pub fn reconstruct<T: Real>(
    basis: &LinearBasis<T>,
    map: Option<&QuadraticMap<T>>,
    rt: &ReducedTrajectory<T>,
    stride: usize,
) -> Result<Mat<T>> {
    if !rt.stable {
        return Err(Error::Unstable {
            first_bad_step: rt.first_bad_step,
        });
    }
    let n_t = rt.n_steps();
    if stride == 0 || !n_t.is_multiple_of(stride) {
        return Err(Error::Stride { stride, n_steps: n_t });
    }
    let cols: Vec<usize> = (0..=n_t).step_by(stride).collect();
    let sampled = Mat::from_fn(rt.states.nrows(), cols.len(), |i, j| rt.states[(i, cols[j])]);
    Ok(decode_matrix(basis, map, sampled.as_ref()))
}
