//! Relative errors, test-set evaluation and the CSV row schema.

use faer::{Mat, MatRef};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::models::{AffineModel, ParamVector, Trajectory};
use crate::quadmanifold::{decode_matrix, encode_matrix, QuadraticMap};
use crate::rom::{galerkin_reduce, solve_batch, ReducedTrajectory, SolveOptions};
use crate::scalar::Real;
use crate::snapshots::LinearBasis;

/// Columns decoded at once when comparing long trajectories.
const DECODE_BLOCK: usize = 256;

/// `||U - approx||_F / ||U||_F` over the solution matrix (steps `1..=N_T`).
pub fn relative_error<T: Real>(fom: &Trajectory<T>, approx: MatRef<'_, T>) -> Result<f64> {
    let u = fom.solution_matrix();
    if approx.nrows() != u.nrows() || approx.ncols() != u.ncols() {
        return Err(Error::Dimension {
            context: "relative_error",
            expected: u.ncols(),
            found: approx.ncols(),
        });
    }
    let den = u.norm_l2().as_f64();
    if den == 0.0 {
        return Err(Error::Empty("full-order solution (zero norm)"));
    }
    Ok((u - approx).norm_l2().as_f64() / den)
}

/// Relative error of the decoded reduced states `states` (`r x (N_T+1)`),
/// computed blockwise without materializing the full decoded matrix.
pub fn decoded_relative_error<T: Real>(
    fom: &Trajectory<T>,
    basis: &LinearBasis<T>,
    map: Option<&QuadraticMap<T>>,
    states: MatRef<'_, T>,
) -> Result<f64> {
    let u = fom.solution_matrix();
    if states.ncols() != u.ncols() + 1 {
        return Err(Error::Dimension {
            context: "decoded_relative_error",
            expected: u.ncols() + 1,
            found: states.ncols(),
        });
    }
    let den = u.norm_l2().as_f64();
    if den == 0.0 {
        return Err(Error::Empty("full-order solution (zero norm)"));
    }
    let mut num = 0.0;
    let mut start = 0;
    while start < u.ncols() {
        let len = DECODE_BLOCK.min(u.ncols() - start);
        let dec = decode_matrix(basis, map, states.subcols(start + 1, len));
        let d = (u.subcols(start, len) - &dec).norm_l2().as_f64();
        num += d * d;
        start += len;
    }
    Ok(num.sqrt() / den)
}

/// Errors of one test parameter; `f64::INFINITY` marks an unstable ROM.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VariantErrors {
    pub qm_rom: f64,
    pub qm_recon: f64,
    pub lin_rom: f64,
    pub lin_recon: f64,
}

impl VariantErrors {
    /// Arithmetic mean per variant; any infinite entry makes the mean
    /// infinite.
    pub fn mean(rows: &[VariantErrors]) -> VariantErrors {
        let m = rows.len().max(1) as f64;
        let avg = |f: fn(&VariantErrors) -> f64| rows.iter().map(f).sum::<f64>() / m;
        VariantErrors {
            qm_rom: avg(|v| v.qm_rom),
            qm_recon: avg(|v| v.qm_recon),
            lin_rom: avg(|v| v.lin_rom),
            lin_recon: avg(|v| v.lin_recon),
        }
    }

    pub fn any_unstable(&self) -> bool {
        !(self.qm_rom.is_finite() && self.lin_rom.is_finite())
    }
}

/// Full-order reference trajectories of a testing set.
pub struct TestTruth<T> {
    pub params: Vec<ParamVector<T>>,
    pub trajectories: Vec<Trajectory<T>>,
}

impl<T: Real> TestTruth<T> {
    pub fn compute(model: &AffineModel<T>, params: Vec<ParamVector<T>>) -> Result<Self> {
        let trajectories = params.par_iter().map(|mu| model.solve_fom(mu)).collect::<Result<Vec<_>>>()?;
        Ok(Self { params, trajectories })
    }
}

fn rom_errors<T: Real>(
    model: &AffineModel<T>,
    basis: &LinearBasis<T>,
    map: Option<&QuadraticMap<T>>,
    truth: &TestTruth<T>,
) -> Result<Vec<f64>> {
    let ops = galerkin_reduce(model, basis, map)?;
    let rts = solve_batch(model, &ops, basis, map, &truth.params, SolveOptions::default())?;
    rts.par_iter()
        .zip(truth.trajectories.par_iter())
        .map(|(rt, fom): (&ReducedTrajectory<T>, _)| {
            if rt.stable {
                decoded_relative_error(fom, basis, map, rt.states.as_ref())
            } else {
                Ok(f64::INFINITY)
            }
        })
        .collect()
}

fn recon_errors<T: Real>(
    basis: &LinearBasis<T>,
    map: Option<&QuadraticMap<T>>,
    truth: &TestTruth<T>,
) -> Result<Vec<f64>> {
    truth
        .trajectories
        .par_iter()
        .map(|fom| {
            let s: Mat<T> = encode_matrix(basis, fom.states.as_ref());
            decoded_relative_error(fom, basis, map, s.as_ref())
        })
        .collect()
}

/// Per-parameter errors of the four variants. Without a map, or with an
/// all-zero map, the quadratic columns are the linear ones.
pub fn evaluate_testset<T: Real>(
    model: &AffineModel<T>,
    basis: &LinearBasis<T>,
    map: Option<&QuadraticMap<T>>,
    truth: &TestTruth<T>,
) -> Result<Vec<VariantErrors>> {
    if truth.params.is_empty() {
        return Err(Error::Empty("testing set"));
    }
    if let Some(m) = map {
        m.check_basis(basis)?;
    }
    let lin_rom = rom_errors(model, basis, None, truth)?;
    let lin_recon = recon_errors(basis, None, truth)?;
    let (qm_rom, qm_recon) = match map {
        Some(m) if !m.is_zero() => (rom_errors(model, basis, map, truth)?, recon_errors(basis, map, truth)?),
        _ => (lin_rom.clone(), lin_recon.clone()),
    };
    Ok((0..truth.params.len())
        .map(|k| VariantErrors {
            qm_rom: qm_rom[k],
            qm_recon: qm_recon[k],
            lin_rom: lin_rom[k],
            lin_recon: lin_recon[k],
        })
        .collect())
}

pub const CSV_HEADER: &str =
    "r,err_qm_rom,err_qm_recon,err_lin_rom,err_lin_recon,estimator_max,lambda_selected,mu_selected_index,wall_time_s";

/// One line of a results table. Empty optional fields are written blank.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub r: usize,
    pub errors: VariantErrors,
    pub estimator_max: Option<f64>,
    pub lambda_selected: Option<f64>,
    pub mu_selected_index: Option<usize>,
    pub wall_time_s: f64,
}

pub fn fmt_real(x: f64) -> String {
    if x.is_infinite() && x > 0.0 {
        "inf".to_string()
    } else {
        format!("{x:.10e}")
    }
}

fn parse_real(s: &str) -> Result<f64> {
    if s == "inf" {
        return Ok(f64::INFINITY);
    }
    s.parse().map_err(|_| Error::Format {
        path: "csv".into(),
        reason: format!("`{s}` is not a number"),
    })
}

impl ResultRow {
    pub fn to_csv(&self) -> String {
        let opt = |x: Option<f64>| x.map(fmt_real).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{:.6}",
            self.r,
            fmt_real(self.errors.qm_rom),
            fmt_real(self.errors.qm_recon),
            fmt_real(self.errors.lin_rom),
            fmt_real(self.errors.lin_recon),
            opt(self.estimator_max),
            opt(self.lambda_selected),
            self.mu_selected_index.map(|k| k.to_string()).unwrap_or_default(),
            self.wall_time_s
        )
    }

    pub fn from_csv(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 9 {
            return Err(Error::Format {
                path: "csv".into(),
                reason: format!("expected 9 fields, found {}", f.len()),
            });
        }
        let opt = |s: &str| if s.is_empty() { Ok(None) } else { parse_real(s).map(Some) };
        Ok(Self {
            r: f[0].parse().map_err(|_| Error::Format {
                path: "csv".into(),
                reason: format!("bad r `{}`", f[0]),
            })?,
            errors: VariantErrors {
                qm_rom: parse_real(f[1])?,
                qm_recon: parse_real(f[2])?,
                lin_rom: parse_real(f[3])?,
                lin_recon: parse_real(f[4])?,
            },
            estimator_max: opt(f[5])?,
            lambda_selected: opt(f[6])?,
            mu_selected_index: if f[7].is_empty() { None } else { f[7].parse().ok() },
            wall_time_s: parse_real(f[8])?,
        })
    }
}

/// Renders rows under [`CSV_HEADER`].
pub fn rows_to_csv(rows: &[ResultRow]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for row in rows {
        s.push_str(&row.to_csv());
        s.push('\n');
    }
    s
}

pub fn rows_from_csv(text: &str) -> Result<Vec<ResultRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == CSV_HEADER => {}
        _ => {
            return Err(Error::Format {
                path: "csv".into(),
                reason: "unexpected header".into(),
            })
        }
    }
    lines.filter(|l| !l.trim().is_empty()).map(ResultRow::from_csv).collect()
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut out = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0;
            for &k in &idx[i..=j] {
                out[k] = avg;
            }
            i = j + 1;
        }
        out
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj(cols: &[[f64; 2]]) -> Trajectory<f64> {
        Trajectory {
            states: Mat::from_fn(2, cols.len(), |i, j| cols[j][i]),
            param: ParamVector::scalar(0.0),
        }
    }

    #[test]
    fn relative_error_trivial_cases() {
        let t = traj(&[[9.0, 9.0], [1.0, 2.0], [3.0, -1.0]]);
        let u = t.solution_matrix().to_owned();
        assert_eq!(relative_error(&t, u.as_ref()).unwrap(), 0.0);
        assert_eq!(relative_error(&t, Mat::zeros(2, 2).as_ref()).unwrap(), 1.0);
    }

    #[test]
    fn relative_error_hand_oracle() {
        // U = [[3,0],[4,0]] as solution columns; approx misses nothing in
        // the (zero) second column and scales the first by one half.
        let t = traj(&[[0.0, 0.0], [3.0, 4.0], [0.0, 0.0]]);
        let approx = Mat::from_fn(2, 2, |i, j| if j == 0 { [1.5, 2.0][i] } else { 0.0 });
        assert!((relative_error(&t, approx.as_ref()).unwrap() - 0.5).abs() < 1e-15);
        // wrong second column: ||(0,0),(1,1)|| / 5
        let approx = Mat::from_fn(2, 2, |i, j| if j == 0 { [3.0, 4.0][i] } else { 1.0 });
        assert!((relative_error(&t, approx.as_ref()).unwrap() - 2f64.sqrt() / 5.0).abs() < 1e-15);
    }

    #[test]
    fn zero_reference_is_an_error() {
        let t = traj(&[[1.0, 1.0], [0.0, 0.0]]);
        assert!(relative_error(&t, Mat::zeros(2, 1).as_ref()).is_err());
    }

    #[test]
    fn csv_round_trip_with_inf_and_blanks() {
        let row = ResultRow {
            r: 7,
            errors: VariantErrors {
                qm_rom: f64::INFINITY,
                qm_recon: 0.125,
                lin_rom: 3.0e-2,
                lin_recon: 1.0e-3,
            },
            estimator_max: None,
            lambda_selected: Some(1e4),
            mu_selected_index: Some(3),
            wall_time_s: 1.5,
        };
        let text = rows_to_csv(std::slice::from_ref(&row));
        assert!(text.starts_with(CSV_HEADER));
        assert!(text.contains(",inf,"));
        assert_eq!(rows_from_csv(&text).unwrap(), vec![row]);
    }

    #[test]
    fn mean_propagates_inf() {
        let a = VariantErrors {
            qm_rom: 1.0,
            qm_recon: 1.0,
            lin_rom: 1.0,
            lin_recon: 1.0,
        };
        let b = VariantErrors {
            qm_rom: f64::INFINITY,
            ..a
        };
        let m = VariantErrors::mean(&[a, b]);
        assert!(m.qm_rom.is_infinite());
        assert_eq!(m.lin_rom, 1.0);
        assert!(m.any_unstable());
    }

    #[test]
    fn spearman_basic() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-15);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-15);
        assert_eq!(spearman(&[1.0, 1.0], &[1.0, 2.0]), 0.0);
    }
}
