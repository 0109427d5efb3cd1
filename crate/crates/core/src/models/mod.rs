//! Affine-parametric full-order models and their time integrators.
//!
//! A model evolves `du/dt = sum_i alpha_i(mu) (A_i u + g(t) b_i) + f`, where
//! `b_i` are optional boundary-lifting vectors modulated by a scalar time
//! profile `g`, or `du/dt = F(u) + f` for the nonlinear case.

mod benchmarks;

pub use benchmarks::{build_benchmark, CaseId, Overrides};

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use faer::sparse::linalg::solvers::Lu;
use faer::{Mat, MatRef};

use crate::error::{Error, Result};
use crate::linalg::CsrMatrix;
use crate::scalar::Real;

/// A point of the parameter domain.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector<T> {
    pub values: Vec<T>,
}

impl<T: Real> ParamVector<T> {
    pub fn new(values: Vec<T>) -> Self {
        Self { values }
    }

    pub fn scalar(x: T) -> Self {
        Self { values: vec![x] }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.as_f64()).collect()
    }
}

/// Axis-aligned parameter box.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBox<T> {
    pub lower: Vec<T>,
    pub upper: Vec<T>,
}

impl<T: Real> ParamBox<T> {
    pub fn new(lower: Vec<T>, upper: Vec<T>) -> Self {
        assert_eq!(lower.len(), upper.len());
        Self { lower, upper }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn check(&self, mu: &ParamVector<T>) -> Result<()> {
        // Relative slack absorbs rounding in generated parameter grids.
        let inside = mu.values.len() == self.dim()
            && mu.values.iter().enumerate().all(|(k, &v)| {
                let slack = T::lit(1e-12) * (T::one() + self.upper[k].abs());
                v >= self.lower[k] - slack && v <= self.upper[k] + slack
            });
        if inside {
            Ok(())
        } else {
            Err(Error::ParameterOutOfRange {
                value: mu.to_f64(),
                lower: self.lower.iter().map(|v| v.as_f64()).collect(),
                upper: self.upper.iter().map(|v| v.as_f64()).collect(),
            })
        }
    }
}

/// Parameter-dependent scalar coefficient `alpha_i(mu)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Coefficient {
    Constant(f64),
    /// `scale * mu[index]`
    Linear { index: usize, scale: f64 },
}

impl Coefficient {
    pub fn eval<T: Real>(&self, mu: &ParamVector<T>) -> T {
        match *self {
            Coefficient::Constant(c) => T::lit(c),
            Coefficient::Linear { index, scale } => T::lit(scale) * mu.values[index],
        }
    }
}

/// Scalar time modulation of the boundary-lifting vectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimeProfile {
    Constant,
    /// `exp(-rate * t)`
    ExpDecay { rate: f64 },
}

impl TimeProfile {
    pub fn eval<T: Real>(&self, t: T) -> T {
        match *self {
            TimeProfile::Constant => T::one(),
            TimeProfile::ExpDecay { rate } => (-(T::lit(rate)) * t).exp(),
        }
    }
}

/// One affine term `alpha(mu) (A u + g(t) b)`.
#[derive(Debug, Clone)]
pub struct AffineTerm<T> {
    pub operator: CsrMatrix<T>,
    pub coeff: Coefficient,
    pub boundary: Option<Vec<T>>,
}

/// Nonlinear right-hand side `u -> F(u)`.
pub trait NonlinearRhs<T>: Send + Sync + fmt::Debug {
    fn eval(&self, u: &[T], out: &mut [T]);
}

pub type InitialCondition<T> = Arc<dyn Fn(&ParamVector<T>) -> Vec<T> + Send + Sync>;

/// Time discretization of the full-order model.
#[derive(Debug, Clone)]
pub enum TimeScheme<T> {
    ExplicitEuler,
    /// `u + dt a A u + dt^2/2 a^2 L u`, with `a` the coefficient of
    /// `velocity_term` and `L` a compact second-difference operator.
    LaxWendroff {
        second_order: CsrMatrix<T>,
        velocity_term: usize,
    },
    Rk4,
    /// Explicit Euler on every term except `implicit_terms`, which are taken
    /// implicitly (backward Euler) from a pre-factorized sparse system.
    SemiImplicit { implicit_terms: Vec<usize> },
}

impl<T> TimeScheme<T> {
    pub fn name(&self) -> &'static str {
        match self {
            TimeScheme::ExplicitEuler => "explicit-euler",
            TimeScheme::LaxWendroff { .. } => "lax-wendroff",
            TimeScheme::Rk4 => "rk4",
            TimeScheme::SemiImplicit { .. } => "explicit-euler-semi-implicit-diffusion",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    Periodic,
    Dirichlet,
    /// No spatial structure (toy models).
    None,
}

/// Semi-discrete affine-parametric full-order model.
#[derive(Clone)]
pub struct AffineModel<T> {
    pub case: Option<CaseId>,
    pub n_dof: usize,
    pub terms: Vec<AffineTerm<T>>,
    pub forcing: Vec<T>,
    pub boundary_profile: TimeProfile,
    pub initial_condition: InitialCondition<T>,
    pub dt: T,
    pub n_steps: usize,
    pub scheme: TimeScheme<T>,
    pub nonlinear: Option<Arc<dyn NonlinearRhs<T>>>,
    pub boundary: Boundary,
    pub param_box: ParamBox<T>,
    /// Free-form description recorded in run outputs (grid sizes, boundary
    /// data, CFL numbers).
    pub description: BTreeMap<String, String>,
}

impl<T: Real> fmt::Debug for AffineModel<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AffineModel")
            .field("case", &self.case)
            .field("n_dof", &self.n_dof)
            .field("n_terms", &self.terms.len())
            .field("dt", &self.dt)
            .field("n_steps", &self.n_steps)
            .field("scheme", &self.scheme.name())
            .field("nonlinear", &self.nonlinear.is_some())
            .field("boundary", &self.boundary)
            .finish()
    }
}

/// Full-order trajectory; column `j` is the state at `t_j = j dt`.
#[derive(Debug, Clone)]
pub struct Trajectory<T> {
    pub states: Mat<T>,
    pub param: ParamVector<T>,
}

impl<T: Real> Trajectory<T> {
    pub fn n_steps(&self) -> usize {
        self.states.ncols() - 1
    }

    /// Columns `1..=N_T`, the solution matrix used by the error metric.
    pub fn solution_matrix(&self) -> MatRef<'_, T> {
        self.states.as_ref().subcols(1, self.states.ncols() - 1)
    }
}

impl<T: Real> AffineModel<T> {
    /// Toy constructor for a linear model without boundary lifting.
    pub fn linear(
        operators: Vec<(CsrMatrix<T>, Coefficient)>,
        forcing: Vec<T>,
        initial_condition: InitialCondition<T>,
        dt: T,
        n_steps: usize,
        scheme: TimeScheme<T>,
        param_box: ParamBox<T>,
    ) -> Result<Self> {
        let n = forcing.len();
        for (a, _) in &operators {
            if a.nrows() != n || a.ncols() != n {
                return Err(Error::Dimension {
                    context: "affine operator",
                    expected: n,
                    found: a.nrows(),
                });
            }
        }
        Ok(Self {
            case: None,
            n_dof: n,
            terms: operators
                .into_iter()
                .map(|(operator, coeff)| AffineTerm {
                    operator,
                    coeff,
                    boundary: None,
                })
                .collect(),
            forcing,
            boundary_profile: TimeProfile::Constant,
            initial_condition,
            dt,
            n_steps,
            scheme,
            nonlinear: None,
            boundary: Boundary::None,
            param_box,
            description: BTreeMap::new(),
        })
    }

    pub fn is_nonlinear(&self) -> bool {
        self.nonlinear.is_some()
    }

    pub fn final_time(&self) -> T {
        self.dt * T::from_count(self.n_steps)
    }

    pub fn time(&self, step: usize) -> T {
        self.dt * T::from_count(step)
    }

    pub fn coefficients(&self, mu: &ParamVector<T>) -> Vec<T> {
        self.terms.iter().map(|t| t.coeff.eval(mu)).collect()
    }

    pub fn has_boundary_terms(&self) -> bool {
        self.terms.iter().any(|t| t.boundary.is_some())
    }

    pub fn initial_state(&self, mu: &ParamVector<T>) -> Result<Vec<T>> {
        self.param_box.check(mu)?;
        let u0 = (self.initial_condition)(mu);
        if u0.len() != self.n_dof {
            return Err(Error::Dimension {
                context: "initial condition",
                expected: self.n_dof,
                found: u0.len(),
            });
        }
        Ok(u0)
    }

    /// Semi-discrete right-hand side at `t = 0`.
    pub fn apply_rhs(&self, mu: &ParamVector<T>, u: &[T]) -> Result<Vec<T>> {
        self.apply_rhs_at(mu, u, T::zero())
    }

    pub fn apply_rhs_at(&self, mu: &ParamVector<T>, u: &[T], t: T) -> Result<Vec<T>> {
        if u.len() != self.n_dof {
            return Err(Error::Dimension {
                context: "apply_rhs state",
                expected: self.n_dof,
                found: u.len(),
            });
        }
        let mut out = self.forcing.clone();
        self.add_dynamics(&self.coefficients(mu), u, t, None, &mut out);
        Ok(out)
    }

    /// Adds `sum_{i in subset} alpha_i (A_i u + g(t) b_i)` (or `F(u)`) to `out`.
    fn add_dynamics(&self, alphas: &[T], u: &[T], t: T, subset: Option<&dyn Fn(usize) -> bool>, out: &mut [T]) {
        if let Some(f) = &self.nonlinear {
            let mut tmp = vec![T::zero(); self.n_dof];
            f.eval(u, &mut tmp);
            for (o, v) in out.iter_mut().zip(&tmp) {
                *o += *v;
            }
        }
        let g = self.boundary_profile.eval(t);
        for (i, term) in self.terms.iter().enumerate() {
            if subset.is_some_and(|keep| !keep(i)) {
                continue;
            }
            term.operator.matvec_acc(alphas[i], u, out);
            if let Some(b) = &term.boundary {
                let s = alphas[i] * g;
                for (o, v) in out.iter_mut().zip(b) {
                    *o += s * *v;
                }
            }
        }
    }

    /// Integrates the model with its own time scheme.
    pub fn solve_fom(&self, mu: &ParamVector<T>) -> Result<Trajectory<T>> {
        let u0 = self.initial_state(mu)?;
        let stepper = FomStepper::new(self, mu)?;
        let n = self.n_dof;
        let mut states = Mat::<T>::zeros(n, self.n_steps + 1);
        states.col_as_slice_mut(0).copy_from_slice(&u0);
        let mut u = u0;
        for j in 1..=self.n_steps {
            u = stepper.step(&u, j - 1);
            if !u.iter().all(|x| x.is_finite()) {
                return Err(Error::NonFinite { step: j });
            }
            states.col_as_slice_mut(j).copy_from_slice(&u);
        }
        Ok(Trajectory {
            states,
            param: mu.clone(),
        })
    }

    /// One step of the full-order scheme from `u` at step index `step`.
    pub fn fom_step(&self, mu: &ParamVector<T>, u: &[T], step: usize) -> Result<Vec<T>> {
        Ok(FomStepper::new(self, mu)?.step(u, step))
    }

    /// Applies the left-hand operator of the scheme's one-step residual,
    /// `u - dt * sum_{implicit} alpha_i (A_i u + g(t) b_i)`; identity for
    /// explicit schemes.
    pub(crate) fn implicit_lhs(&self, alphas: &[T], u: &[T], t: T) -> Vec<T> {
        let mut out = u.to_vec();
        if let TimeScheme::SemiImplicit { implicit_terms } = &self.scheme {
            let mut acc = vec![T::zero(); self.n_dof];
            self.add_dynamics(alphas, u, t, Some(&|i| implicit_terms.contains(&i)), &mut acc);
            for (o, a) in out.iter_mut().zip(&acc) {
                *o -= self.dt * *a;
            }
        }
        out
    }

    /// Explicit part of the residual right-hand side,
    /// `u + dt * (explicit dynamics(u, t) + f)`, plus the second-order
    /// correction for Lax-Wendroff so that the residual of an exact
    /// full-order step is zero.
    pub(crate) fn explicit_update(&self, alphas: &[T], u: &[T], t: T) -> Vec<T> {
        let mut acc = self.forcing.clone();
        match &self.scheme {
            TimeScheme::SemiImplicit { implicit_terms } => {
                self.add_dynamics(alphas, u, t, Some(&|i| !implicit_terms.contains(&i)), &mut acc)
            }
            _ => self.add_dynamics(alphas, u, t, None, &mut acc),
        }
        let mut out: Vec<T> = u.iter().zip(&acc).map(|(x, a)| *x + self.dt * *a).collect();
        if let TimeScheme::LaxWendroff {
            second_order,
            velocity_term,
        } = &self.scheme
        {
            let a = alphas[*velocity_term];
            second_order.matvec_acc(T::lit(0.5) * self.dt * self.dt * a * a, u, &mut out);
        }
        out
    }
}

/// Per-parameter integrator with the affine combination and any implicit
/// factorization precomputed.
struct FomStepper<'m, T: Real> {
    model: &'m AffineModel<T>,
    alphas: Vec<T>,
    explicit_op: Option<CsrMatrix<T>>,
    implicit: Option<Lu<usize, T>>,
}

impl<'m, T: Real> FomStepper<'m, T> {
    fn new(model: &'m AffineModel<T>, mu: &ParamVector<T>) -> Result<Self> {
        model.param_box.check(mu)?;
        let alphas = model.coefficients(mu);
        let combine = |keep: &dyn Fn(usize) -> bool| -> Result<Option<CsrMatrix<T>>> {
            let terms: Vec<(T, &CsrMatrix<T>)> = model
                .terms
                .iter()
                .enumerate()
                .filter(|(i, _)| keep(*i))
                .map(|(i, t)| (alphas[i], &t.operator))
                .collect();
            if terms.is_empty() {
                Ok(None)
            } else {
                CsrMatrix::linear_combination(&terms).map(Some)
            }
        };
        let (explicit_op, implicit) = match &model.scheme {
            TimeScheme::SemiImplicit { implicit_terms } => {
                let exp = combine(&|i| !implicit_terms.contains(&i))?;
                let imp = combine(&|i| implicit_terms.contains(&i))?;
                let lu = match imp {
                    Some(a) => {
                        let eye = CsrMatrix::identity(model.n_dof);
                        let m = CsrMatrix::linear_combination(&[(T::one(), &eye), (-model.dt, &a)])?;
                        let lu = m
                            .to_faer()?
                            .sp_lu()
                            .map_err(|e| Error::Decomposition(format!("sparse LU: {e:?}")))?;
                        Some(lu)
                    }
                    None => None,
                };
                (exp, lu)
            }
            _ => (combine(&|_| true)?, None),
        };
        Ok(Self {
            model,
            alphas,
            explicit_op,
            implicit,
        })
    }

    fn rhs(&self, u: &[T], t: T, out: &mut [T]) {
        let m = self.model;
        out.copy_from_slice(&m.forcing);
        if let Some(f) = &m.nonlinear {
            let mut tmp = vec![T::zero(); m.n_dof];
            f.eval(u, &mut tmp);
            for (o, v) in out.iter_mut().zip(&tmp) {
                *o += *v;
            }
        }
        if let Some(a) = &self.explicit_op {
            a.matvec_acc(T::one(), u, out);
        }
        self.add_boundary(t, |i| !self.is_implicit(i), out);
    }

    fn is_implicit(&self, i: usize) -> bool {
        matches!(&self.model.scheme, TimeScheme::SemiImplicit { implicit_terms } if implicit_terms.contains(&i))
    }

    fn add_boundary(&self, t: T, keep: impl Fn(usize) -> bool, out: &mut [T]) {
        let g = self.model.boundary_profile.eval(t);
        for (i, term) in self.model.terms.iter().enumerate() {
            if let (true, Some(b)) = (keep(i), &term.boundary) {
                let s = self.alphas[i] * g;
                for (o, v) in out.iter_mut().zip(b) {
                    *o += s * *v;
                }
            }
        }
    }

    fn step(&self, u: &[T], step: usize) -> Vec<T> {
        let m = self.model;
        let n = m.n_dof;
        let dt = m.dt;
        let t = m.time(step);
        let mut k1 = vec![T::zero(); n];
        match &m.scheme {
            TimeScheme::ExplicitEuler => {
                self.rhs(u, t, &mut k1);
                u.iter().zip(&k1).map(|(x, k)| *x + dt * *k).collect()
            }
            TimeScheme::LaxWendroff {
                second_order,
                velocity_term,
            } => {
                self.rhs(u, t, &mut k1);
                let a = self.alphas[*velocity_term];
                let mut out: Vec<T> = u.iter().zip(&k1).map(|(x, k)| *x + dt * *k).collect();
                second_order.matvec_acc(T::lit(0.5) * dt * dt * a * a, u, &mut out);
                out
            }
            TimeScheme::Rk4 => {
                let half = T::lit(0.5);
                let mut k2 = vec![T::zero(); n];
                let mut k3 = vec![T::zero(); n];
                let mut k4 = vec![T::zero(); n];
                let mut tmp = vec![T::zero(); n];
                self.rhs(u, t, &mut k1);
                for i in 0..n {
                    tmp[i] = u[i] + half * dt * k1[i];
                }
                self.rhs(&tmp, t + half * dt, &mut k2);
                for i in 0..n {
                    tmp[i] = u[i] + half * dt * k2[i];
                }
                self.rhs(&tmp, t + half * dt, &mut k3);
                for i in 0..n {
                    tmp[i] = u[i] + dt * k3[i];
                }
                self.rhs(&tmp, t + dt, &mut k4);
                let sixth = dt / T::lit(6.0);
                (0..n)
                    .map(|i| u[i] + sixth * (k1[i] + T::lit(2.0) * (k2[i] + k3[i]) + k4[i]))
                    .collect()
            }
            TimeScheme::SemiImplicit { .. } => {
                self.rhs(u, t, &mut k1);
                let mut rhs: Vec<T> = u.iter().zip(&k1).map(|(x, k)| *x + dt * *k).collect();
                let mut lifted = vec![T::zero(); n];
                self.add_boundary(t + dt, |i| self.is_implicit(i), &mut lifted);
                for (r, l) in rhs.iter_mut().zip(&lifted) {
                    *r += dt * *l;
                }
                match &self.implicit {
                    Some(lu) => {
                        use faer::linalg::solvers::Solve;
                        let mut col = Mat::<T>::from_fn(n, 1, |i, _| rhs[i]);
                        lu.solve_in_place(col.as_mut());
                        col.col_as_slice(0).to_vec()
                    }
                    None => rhs,
                }
            }
        }
    }
}
