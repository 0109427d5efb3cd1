use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use super::{
    AffineModel, AffineTerm, Boundary, Coefficient, NonlinearRhs, ParamBox, ParamVector, TimeProfile,
    TimeScheme,
};
use crate::error::{Error, Result};
use crate::linalg::CsrMatrix;
use crate::scalar::Real;

/// Benchmark identifiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CaseId {
    TransportC1,
    TransportC2,
    TransportC3,
    AcousticWave,
    AdvDiff,
    Burgers,
}

impl CaseId {
    pub const ALL: [CaseId; 6] = [
        CaseId::TransportC1,
        CaseId::TransportC2,
        CaseId::TransportC3,
        CaseId::AcousticWave,
        CaseId::AdvDiff,
        CaseId::Burgers,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            CaseId::TransportC1 => "transport_c1",
            CaseId::TransportC2 => "transport_c2",
            CaseId::TransportC3 => "transport_c3",
            CaseId::AcousticWave => "acoustic_wave",
            CaseId::AdvDiff => "adv_diff",
            CaseId::Burgers => "burgers",
        }
    }

    pub fn is_transport(&self) -> bool {
        matches!(self, CaseId::TransportC1 | CaseId::TransportC2 | CaseId::TransportC3)
    }

    /// Grid size and step count used by the default (full-resolution) model.
    pub fn default_resolution(&self) -> (usize, usize) {
        match self {
            CaseId::TransportC1 | CaseId::TransportC2 | CaseId::TransportC3 => (2000, 4000),
            CaseId::AcousticWave => (500, 1200),
            CaseId::AdvDiff => (64, 256),
            CaseId::Burgers => (2000, 4000),
        }
    }

    /// Reduced resolution for quick runs; holds the CFL number fixed.
    pub fn desk_overrides(&self) -> Overrides {
        match self {
            CaseId::TransportC1 | CaseId::TransportC2 | CaseId::TransportC3 => Overrides::new(500, 1000),
            CaseId::AcousticWave => Overrides::new(100, 240),
            CaseId::AdvDiff => Overrides::default(),
            CaseId::Burgers => Overrides::new(500, 1000),
        }
    }
}

impl fmt::Display for CaseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CaseId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CaseId::ALL
            .iter()
            .copied()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::UnknownCase(s.to_string()))
    }
}

/// Resolution overrides. `n` is the grid size per direction (the number of
/// cells along `x1` for `adv_diff`). When only `n` is given, `n_t` is scaled
/// with it so the CFL number is unchanged.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Overrides {
    pub n: Option<usize>,
    pub n_t: Option<usize>,
}

impl Overrides {
    pub fn new(n: usize, n_t: usize) -> Self {
        Self {
            n: Some(n),
            n_t: Some(n_t),
        }
    }

    fn resolve(&self, case: CaseId) -> Result<(usize, usize)> {
        let (n0, nt0) = case.default_resolution();
        let n = self.n.unwrap_or(n0);
        let n_t = match (self.n, self.n_t) {
            (_, Some(nt)) => nt,
            (Some(n), None) => ((nt0 as f64) * (n as f64) / (n0 as f64)).round() as usize,
            (None, None) => nt0,
        };
        if n < 2 || n_t == 0 {
            return Err(Error::Config(format!("{case}: degenerate resolution n={n}, n_t={n_t}")));
        }
        Ok((n, n_t))
    }
}

fn check_cfl(case: CaseId, number: &'static str, value: f64, limit: f64) -> Result<()> {
    if value > limit * (1.0 + 1e-12) {
        Err(Error::Cfl {
            case: case.to_string(),
            number,
            value,
            limit,
        })
    } else {
        Ok(())
    }
}

/// Builds one of the benchmark models.
pub fn build_benchmark<T: Real>(case: CaseId, overrides: Overrides) -> Result<AffineModel<T>> {
    let (n, n_t) = overrides.resolve(case)?;
    let mut model = match case {
        CaseId::TransportC1 | CaseId::TransportC2 | CaseId::TransportC3 => transport(case, n, n_t)?,
        CaseId::AcousticWave => acoustic(n, n_t)?,
        CaseId::AdvDiff => adv_diff(n, n_t)?,
        CaseId::Burgers => burgers(n, n_t)?,
    };
    model.case = Some(case);
    model.description.insert("case".into(), case.to_string());
    model.description.insert("n_steps".into(), n_t.to_string());
    model.description.insert("n_dof".into(), model.n_dof.to_string());
    model.description.insert("scheme".into(), model.scheme.name().into());
    Ok(model)
}

fn periodic(i: isize, n: usize) -> usize {
    i.rem_euclid(n as isize) as usize
}

/// Central first difference and compact second difference on a periodic
/// 1-D grid.
fn periodic_1d_ops<T: Real>(n: usize, dx: f64) -> (CsrMatrix<T>, CsrMatrix<T>) {
    let mut d = Vec::with_capacity(2 * n);
    let mut l = Vec::with_capacity(3 * n);
    let c1 = T::lit(0.5 / dx);
    let c2 = T::lit(1.0 / (dx * dx));
    for i in 0..n {
        let ip = periodic(i as isize + 1, n);
        let im = periodic(i as isize - 1, n);
        d.push((i, ip, c1));
        d.push((i, im, -c1));
        l.push((i, im, c2));
        l.push((i, i, -T::lit(2.0) * c2));
        l.push((i, ip, c2));
    }
    (CsrMatrix::from_triplets(n, n, &d), CsrMatrix::from_triplets(n, n, &l))
}

fn gaussian_pulse(x: f64, center: f64, sigma: f64) -> f64 {
    // Images at +-1 keep the pulse periodic on the unit interval.
    let norm = 1.0 / ((2.0 * PI).sqrt() * sigma);
    (-1..=1)
        .map(|k| {
            let d = x - center + k as f64;
            norm * (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .sum()
}

fn transport<T: Real>(case: CaseId, n: usize, n_t: usize) -> Result<AffineModel<T>> {
    let final_time = 0.1;
    let dx = 1.0 / n as f64;
    let dt = final_time / n_t as f64;
    let (lo, hi, velocity) = match case {
        CaseId::TransportC1 => (0.05, 0.25, Coefficient::Constant(10.0)),
        CaseId::TransportC2 => (0.01, 0.1, Coefficient::Constant(10.0)),
        _ => (1.0, 10.0, Coefficient::Linear { index: 0, scale: 1.0 }),
    };
    let c_max = if case == CaseId::TransportC3 { hi } else { 10.0 };
    let cfl = c_max * dt / dx;
    check_cfl(case, "c*dt/dx", cfl, 1.0)?;

    let (d, l) = periodic_1d_ops::<T>(n, dx);
    let minus_d = CsrMatrix::linear_combination(&[(-T::one(), &d)])?;
    let ic: super::InitialCondition<T> = Arc::new(move |mu: &ParamVector<T>| {
        let p = mu.values[0].as_f64();
        let (center, sigma) = match case {
            CaseId::TransportC1 => (p, 0.01),
            CaseId::TransportC2 => (0.5, p),
            _ => (0.5, 0.01),
        };
        (0..n)
            .map(|i| T::lit(gaussian_pulse(i as f64 * dx, center, sigma)))
            .collect()
    });
    let mut description = BTreeMap::new();
    description.insert("domain".into(), "[0,1) periodic".into());
    description.insert("final_time".into(), format!("{final_time}"));
    description.insert("cfl".into(), format!("{cfl}"));
    Ok(AffineModel {
        case: None,
        n_dof: n,
        terms: vec![AffineTerm {
            operator: minus_d,
            coeff: velocity,
            boundary: None,
        }],
        forcing: vec![T::zero(); n],
        boundary_profile: TimeProfile::Constant,
        initial_condition: ic,
        dt: T::lit(dt),
        n_steps: n_t,
        scheme: TimeScheme::LaxWendroff {
            second_order: l,
            velocity_term: 0,
        },
        nonlinear: None,
        boundary: Boundary::Periodic,
        param_box: ParamBox::new(vec![T::lit(lo)], vec![T::lit(hi)]),
        description,
    })
}

fn acoustic<T: Real>(m: usize, n_t: usize) -> Result<AffineModel<T>> {
    let case = CaseId::AcousticWave;
    let final_time = 6.0;
    let dx = 8.0 / m as f64;
    let dt = final_time / n_t as f64;
    let cfl = dt / dx;
    check_cfl(case, "dt/dx", cfl, 2.0)?;

    let cells = m * m;
    let idx = |i: isize, j: isize| periodic(i, m) + m * periodic(j, m);
    let c = T::lit(0.5 / dx);
    let mut trip = Vec::with_capacity(8 * cells);
    for j in 0..m as isize {
        for i in 0..m as isize {
            let k = idx(i, j);
            // d/dx1 and d/dx2 central stencils
            let (e, w) = (idx(i + 1, j), idx(i - 1, j));
            let (nn, s) = (idx(i, j + 1), idx(i, j - 1));
            // rho' = -(D1 v1 + D2 v2)
            trip.push((k, cells + e, -c));
            trip.push((k, cells + w, c));
            trip.push((k, 2 * cells + nn, -c));
            trip.push((k, 2 * cells + s, c));
            // v1' = -D1 rho, v2' = -D2 rho
            trip.push((cells + k, e, -c));
            trip.push((cells + k, w, c));
            trip.push((2 * cells + k, nn, -c));
            trip.push((2 * cells + k, s, c));
        }
    }
    let n = 3 * cells;
    let op = CsrMatrix::from_triplets(n, n, &trip);
    let ic: super::InitialCondition<T> = Arc::new(move |mu: &ParamVector<T>| {
        let a = mu.values[0].as_f64() + 6.0;
        let mut u = vec![T::zero(); n];
        for j in 0..m {
            for i in 0..m {
                let x1 = -4.0 + i as f64 * dx;
                let x2 = -4.0 + j as f64 * dx;
                u[i + m * j] = T::lit((-a * a * ((x1 - 2.0).powi(2) + (x2 - 2.0).powi(2))).exp());
            }
        }
        u
    });
    let mut description = BTreeMap::new();
    description.insert("domain".into(), "[-4,4)^2 periodic".into());
    description.insert("grid".into(), format!("{m}x{m}"));
    description.insert("state".into(), "rho,v1,v2 stacked".into());
    description.insert("final_time".into(), format!("{final_time}"));
    description.insert("cfl".into(), format!("{cfl}"));
    Ok(AffineModel {
        case: None,
        n_dof: n,
        terms: vec![AffineTerm {
            operator: op,
            coeff: Coefficient::Constant(1.0),
            boundary: None,
        }],
        forcing: vec![T::zero(); n],
        boundary_profile: TimeProfile::Constant,
        initial_condition: ic,
        dt: T::lit(dt),
        n_steps: n_t,
        scheme: TimeScheme::Rk4,
        nonlinear: None,
        boundary: Boundary::Periodic,
        param_box: ParamBox::new(vec![T::zero()], vec![T::one()]),
        description,
    })
}

/// Inflow profile on the top edge.
fn inflow_shape(x1: f64) -> f64 {
    if (x1 - 0.5).abs() <= 0.5 {
        (PI * (x1 - 0.5)).cos().powi(2)
    } else {
        0.0
    }
}

fn adv_diff<T: Real>(nx: usize, n_t: usize) -> Result<AffineModel<T>> {
    let case = CaseId::AdvDiff;
    if !nx.is_multiple_of(2) {
        return Err(Error::Config(format!("adv_diff: n={nx} must be even")));
    }
    let ny = nx / 2;
    let h = 2.0 / nx as f64;
    let final_time = 1.0;
    let dt = final_time / n_t as f64;
    let xc = |i: usize| (i as f64 + 0.5) * h;
    let w1 = |x2: f64| 0.2 * (1.0 - x2 * x2);
    let w2 = |x1: f64| -0.5 * (4.0 - x1 * x1);

    let mut worst = 0.0f64;
    for j in 0..ny {
        for i in 0..nx {
            worst = worst.max(w1(xc(j)).abs() / h + w2(xc(i)).abs() / h);
        }
    }
    let cfl = worst * dt;
    check_cfl(case, "dt*(|w1|+|w2|)/h", cfl, 1.0)?;

    let n = nx * ny;
    let k = |i: usize, j: usize| i + nx * j;
    let inv_h = 1.0 / h;
    let inv_h2 = inv_h * inv_h;

    // Horizontal upwind (w1 >= 0): face flux takes the left cell value.
    let mut a1 = Vec::new();
    for j in 0..ny {
        let w = w1(xc(j));
        for i in 0..nx {
            // outgoing flux through the right face
            a1.push((k(i, j), k(i, j), T::lit(-w * inv_h)));
            if i > 0 {
                a1.push((k(i, j), k(i - 1, j), T::lit(w * inv_h)));
            }
        }
    }

    // Vertical upwind (w2 < 0): face flux takes the upper cell value; the
    // top edge is the inflow boundary.
    let mut a2 = Vec::new();
    let mut b2 = vec![T::zero(); n];
    for i in 0..nx {
        let w = w2(xc(i));
        for j in 0..ny {
            // flux through the bottom face uses this cell
            a2.push((k(i, j), k(i, j), T::lit(w * inv_h)));
            if j + 1 < ny {
                a2.push((k(i, j), k(i, j + 1), T::lit(-w * inv_h)));
            } else {
                b2[k(i, j)] = T::lit(-w * inv_h * inflow_shape(xc(i)));
            }
        }
    }

    // Five-point Laplacian with Dirichlet data at half-cell distance.
    let mut a3 = Vec::new();
    let mut b3 = vec![T::zero(); n];
    for j in 0..ny {
        for i in 0..nx {
            let c = k(i, j);
            let mut diag = 0.0;
            let neighbours = [
                (i > 0).then(|| k(i - 1, j)),
                (i + 1 < nx).then(|| k(i + 1, j)),
                (j > 0).then(|| k(i, j - 1)),
                (j + 1 < ny).then(|| k(i, j + 1)),
            ];
            for nb in neighbours {
                match nb {
                    Some(m) => {
                        a3.push((c, m, T::lit(inv_h2)));
                        diag -= inv_h2;
                    }
                    None => diag -= 2.0 * inv_h2,
                }
            }
            a3.push((c, c, T::lit(diag)));
            if j + 1 == ny {
                b3[c] = T::lit(2.0 * inv_h2 * inflow_shape(xc(i)));
            }
        }
    }

    let mut description = BTreeMap::new();
    description.insert("domain".into(), "(0,2)x(0,1)".into());
    description.insert("grid".into(), format!("{nx}x{ny}"));
    description.insert(
        "boundary_data".into(),
        "g_D((x1,1),t)=exp(-2t)cos^2(pi(x1-1/2)) for |x1-1/2|<=1/2 on the inflow (top) edge, zero elsewhere".into(),
    );
    description.insert("initial_condition".into(), "zero".into());
    description.insert("final_time".into(), format!("{final_time}"));
    description.insert("cfl".into(), format!("{cfl}"));
    Ok(AffineModel {
        case: None,
        n_dof: n,
        terms: vec![
            AffineTerm {
                operator: CsrMatrix::from_triplets(n, n, &a1),
                coeff: Coefficient::Linear { index: 0, scale: 1.0 },
                boundary: None,
            },
            AffineTerm {
                operator: CsrMatrix::from_triplets(n, n, &a2),
                coeff: Coefficient::Constant(1.0),
                boundary: Some(b2),
            },
            AffineTerm {
                operator: CsrMatrix::from_triplets(n, n, &a3),
                coeff: Coefficient::Linear { index: 1, scale: 0.03 },
                boundary: Some(b3),
            },
        ],
        forcing: vec![T::zero(); n],
        boundary_profile: TimeProfile::ExpDecay { rate: 2.0 },
        initial_condition: Arc::new(move |_: &ParamVector<T>| vec![T::zero(); n]),
        dt: T::lit(dt),
        n_steps: n_t,
        scheme: TimeScheme::SemiImplicit {
            implicit_terms: vec![2],
        },
        nonlinear: None,
        boundary: Boundary::Dirichlet,
        param_box: ParamBox::new(vec![T::zero(); 2], vec![T::one(); 2]),
        description,
    })
}

/// Conservative central flux form of viscous Burgers on a periodic grid.
#[derive(Debug, Clone)]
pub struct BurgersFlux {
    pub dx: f64,
    pub nu: f64,
}

impl<T: Real> NonlinearRhs<T> for BurgersFlux {
    fn eval(&self, u: &[T], out: &mut [T]) {
        let n = u.len();
        let a = T::lit(1.0 / (4.0 * self.dx));
        let b = T::lit(self.nu / (self.dx * self.dx));
        let two = T::lit(2.0);
        for i in 0..n {
            let up = u[if i + 1 == n { 0 } else { i + 1 }];
            let um = u[if i == 0 { n - 1 } else { i - 1 }];
            out[i] = -a * (up * up - um * um) + b * (up - two * u[i] + um);
        }
    }
}

fn burgers<T: Real>(n: usize, n_t: usize) -> Result<AffineModel<T>> {
    let case = CaseId::Burgers;
    let nu = 8e-4;
    let final_time = 1.0;
    let dx = 2.0 / n as f64;
    let dt = final_time / n_t as f64;
    let u_max = 1.3;
    let cfl = dt * (u_max / dx + 4.0 * nu / (dx * dx));
    check_cfl(case, "dt*(u_max/dx+4nu/dx^2)", cfl, 2.5)?;

    let ic: super::InitialCondition<T> = Arc::new(move |mu: &ParamVector<T>| {
        let s = mu.values[0].as_f64();
        (0..n)
            .map(|i| {
                let x = -1.0 + i as f64 * dx;
                T::lit(0.3 * (-s * s * (x + 0.5).powi(2)).exp() + 1.0)
            })
            .collect()
    });
    let mut description = BTreeMap::new();
    description.insert("domain".into(), "[-1,1) periodic".into());
    description.insert("nu".into(), format!("{nu}"));
    description.insert("final_time".into(), format!("{final_time}"));
    description.insert("cfl".into(), format!("{cfl}"));
    Ok(AffineModel {
        case: None,
        n_dof: n,
        terms: Vec::new(),
        forcing: vec![T::zero(); n],
        boundary_profile: TimeProfile::Constant,
        initial_condition: ic,
        dt: T::lit(dt),
        n_steps: n_t,
        scheme: TimeScheme::Rk4,
        nonlinear: Some(Arc::new(BurgersFlux { dx, nu })),
        boundary: Boundary::Periodic,
        param_box: ParamBox::new(vec![T::lit(10.0)], vec![T::lit(15.0)]),
        description,
    })
}
