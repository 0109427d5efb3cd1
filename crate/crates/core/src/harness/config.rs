//! Flat `key = value` experiment configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Parameter sets are
//! written per axis as `lo:hi:count`, tensor axes separated by ` x `; lists
//! are comma separated; a lambda set may also be written `10^a:step:b`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::greedy::{lambda_grid, GreedyConfig, Increment, InitialParam};
use crate::models::{CaseId, Overrides, ParamVector};
use crate::scalar::Real;

/// Uniform tensor grid of parameters; the first axis varies slowest.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSetSpec {
    pub axes: Vec<(f64, f64, usize)>,
}

impl ParamSetSpec {
    pub fn generate<T: Real>(&self) -> Vec<ParamVector<T>> {
        let axes: Vec<Vec<f64>> = self.axes.iter().map(|&(lo, hi, n)| linspace(lo, hi, n)).collect();
        let mut out = vec![Vec::new()];
        for axis in &axes {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    axis.iter().map(move |&x| {
                        let mut p = prefix.clone();
                        p.push(x);
                        p
                    })
                })
                .collect();
        }
        out.into_iter()
            .map(|v| ParamVector::new(v.into_iter().map(T::lit).collect()))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.2).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl FromStr for ParamSetSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let axes = s
            .split(" x ")
            .map(|axis| {
                let parts: Vec<&str> = axis.trim().split(':').collect();
                if parts.len() != 3 {
                    return Err(Error::Config(format!("parameter axis `{axis}` is not lo:hi:count")));
                }
                let lo = parse_f64(parts[0])?;
                let hi = parse_f64(parts[1])?;
                let n: usize = parts[2]
                    .trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("bad count in `{axis}`")))?;
                if n == 0 || hi < lo {
                    return Err(Error::Config(format!("empty parameter axis `{axis}`")));
                }
                Ok((lo, hi, n))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { axes })
    }
}

impl std::fmt::Display for ParamSetSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.axes.iter().map(|(a, b, n)| format!("{a}:{b}:{n}")).collect();
        f.write_str(&parts.join(" x "))
    }
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n)
        .map(|k| if k + 1 == n { hi } else { lo + (hi - lo) * k as f64 / (n - 1) as f64 })
        .collect()
}

fn parse_f64(s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::Config(format!("`{s}` is not a number")))
}

fn parse_list<V: FromStr>(s: &str) -> Result<Vec<V>> {
    s.split(',')
        .filter(|x| !x.trim().is_empty())
        .map(|x| {
            x.trim()
                .parse::<V>()
                .map_err(|_| Error::Config(format!("bad list entry `{x}`")))
        })
        .collect()
}

/// `10^a:step:b` or a comma-separated list.
pub fn parse_lambda_set(s: &str) -> Result<Vec<f64>> {
    if let Some(rest) = s.trim().strip_prefix("10^") {
        let p: Vec<&str> = rest.split(':').collect();
        if p.len() != 3 {
            return Err(Error::Config(format!("lambda range `{s}` is not 10^a:step:b")));
        }
        let (a, step, b) = (parse_f64(p[0])?, parse_f64(p[1])?, parse_f64(p[2])?);
        if step <= 0.0 || b < a {
            return Err(Error::Config(format!("empty lambda range `{s}`")));
        }
        Ok(lambda_grid(a, step, b))
    } else {
        parse_list(s)
    }
}

/// Full description of one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub case: CaseId,
    pub overrides: Overrides,
    pub desk_scale: bool,
    pub train: ParamSetSpec,
    pub test: ParamSetSpec,
    pub greedy: GreedyConfig,
    pub out: Option<PathBuf>,
    /// Reserved; the pipeline is deterministic.
    pub seed: u64,
    pub sweep_r: Vec<usize>,
    pub sweep_lambda: Vec<f64>,
    pub timing_r_qm: usize,
    pub timing_r_lin: usize,
    pub timing_mu: Option<Vec<f64>>,
    pub timing_repeats: usize,
    /// Parameter for `fom-solve`.
    pub mu: Option<Vec<f64>>,
    /// Trained bundle read by `evaluate`.
    pub bundle: Option<PathBuf>,
    pub timing_qm_bundle: Option<PathBuf>,
    pub timing_lin_bundle: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Defaults for a case, matching the checked-in configuration files.
    pub fn paper_defaults(case: CaseId) -> Self {
        let spec = |s: &str| s.parse::<ParamSetSpec>().expect("valid default");
        let base = GreedyConfig::default();
        let (train, test, greedy) = match case {
            CaseId::TransportC1 | CaseId::TransportC2 | CaseId::TransportC3 => {
                let (train, test, n_lambda) = match case {
                    CaseId::TransportC1 => ("0.05:0.25:41", "0.0524:0.226:5", 2),
                    CaseId::TransportC2 => ("0.01:0.1:41", "0.0113:0.0973:5", 3),
                    _ => ("1:10:41", "1.013:9.973:5", 4),
                };
                (
                    spec(train),
                    spec(test),
                    GreedyConfig {
                        m_max: 31,
                        r0: 1,
                        increment: Increment::Fixed(2),
                        l_sam: 2,
                        lambda_set: lambda_grid(-6.0, 0.5, 6.0),
                        n_lambda,
                        ..base
                    },
                )
            }
            CaseId::AcousticWave => (
                spec("0:1:21"),
                spec("0.0053:0.953:5"),
                GreedyConfig {
                    m_max: 25,
                    r0: 1,
                    increment: Increment::Fixed(2),
                    l_sam: 5,
                    lambda_set: lambda_grid(-3.0, 1.0, 3.0),
                    n_lambda: 2,
                    ..base
                },
            ),
            CaseId::AdvDiff => (
                spec("0:1:7 x 0:1:7"),
                spec("0.19:0.95:21 x 0.21:0.88:5"),
                GreedyConfig {
                    m_max: 81,
                    r0: 1,
                    increment: Increment::Fixed(1),
                    l_sam: 1,
                    lambda_set: lambda_grid(-5.0, 1.0, 0.0),
                    n_lambda: 1,
                    ..base
                },
            ),
            CaseId::Burgers => (
                spec("10:15:21"),
                spec("10.123:14.953:5"),
                GreedyConfig {
                    m_max: 30,
                    r0: 1,
                    increment: Increment::Fixed(2),
                    l_sam: 2,
                    lambda_set: lambda_grid(-6.0, 0.5, 6.0),
                    n_lambda: 2,
                    ..base
                },
            ),
        };
        Self {
            case,
            overrides: Overrides::default(),
            desk_scale: false,
            train,
            test,
            greedy,
            out: None,
            seed: 0,
            sweep_r: vec![1, 3, 5, 10, 20, 30, 40, 50, 60],
            sweep_lambda: vec![1e-6, 1e4, 1e6],
            timing_r_qm: 27,
            timing_r_lin: 82,
            timing_mu: None,
            timing_repeats: 21,
            mu: None,
            bundle: None,
            timing_qm_bundle: None,
            timing_lin_bundle: None,
        }
    }

    /// Overrides actually used to build the model.
    pub fn effective_overrides(&self) -> Overrides {
        if self.desk_scale && self.overrides == Overrides::default() {
            self.case.desk_overrides()
        } else {
            self.overrides
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Parses configuration text. `case` is required; every other key
    /// defaults to the case's paper setting.
    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            if kv.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key `{}`", lineno + 1, k.trim())));
            }
        }
        let case: CaseId = kv
            .remove("case")
            .ok_or_else(|| Error::Config("missing key `case`".into()))?
            .parse()?;
        let mut cfg = Self::paper_defaults(case);
        cfg.apply(kv)?;
        Ok(cfg)
    }

    /// Applies `key = value` overrides on top of the current values.
    pub fn apply(&mut self, kv: BTreeMap<String, String>) -> Result<()> {
        let usize_of = |k: &str, v: &str| -> Result<usize> {
            v.parse().map_err(|_| Error::Config(format!("`{k}` must be a nonnegative integer, got `{v}`")))
        };
        for (k, v) in kv {
            let v = v.as_str();
            match k.as_str() {
                "case" => self.case = v.parse()?,
                "n" => self.overrides.n = Some(usize_of(&k, v)?),
                "n_t" => self.overrides.n_t = Some(usize_of(&k, v)?),
                "desk_scale" => self.desk_scale = parse_bool(&k, v)?,
                "train" => self.train = v.parse()?,
                "test" => self.test = v.parse()?,
                "m_max" => self.greedy.m_max = usize_of(&k, v)?,
                "r0" => self.greedy.r0 = usize_of(&k, v)?,
                "n_incre" => self.greedy.increment = Increment::Fixed(usize_of(&k, v)?),
                "n_per" => self.greedy.increment = Increment::Energy(parse_f64(v)?),
                "l_sam" => self.greedy.l_sam = usize_of(&k, v)?,
                "lambda_set" => self.greedy.lambda_set = parse_lambda_set(v)?,
                "n_lambda" => self.greedy.n_lambda = usize_of(&k, v)?,
                "tolerance" => self.greedy.tolerance = parse_f64(v)?,
                "r_max" => self.greedy.r_max = if v == "none" { None } else { Some(usize_of(&k, v)?) },
                "initial_param" => {
                    self.greedy.initial_param = if v == "midpoint" {
                        InitialParam::Midpoint
                    } else {
                        InitialParam::Index(usize_of(&k, v)?)
                    }
                }
                "out" => self.out = Some(PathBuf::from(v)),
                "seed" => self.seed = v.parse().map_err(|_| Error::Config(format!("bad seed `{v}`")))?,
                "sweep_r" => self.sweep_r = parse_list(v)?,
                "sweep_lambda" => self.sweep_lambda = parse_lambda_set(v)?,
                "timing_r_qm" => self.timing_r_qm = usize_of(&k, v)?,
                "timing_r_lin" => self.timing_r_lin = usize_of(&k, v)?,
                "timing_mu" => self.timing_mu = Some(parse_list(v)?),
                "timing_repeats" => self.timing_repeats = usize_of(&k, v)?.max(1),
                "mu" => self.mu = Some(parse_list(v)?),
                "bundle" => self.bundle = Some(PathBuf::from(v)),
                "timing_qm_bundle" => self.timing_qm_bundle = Some(PathBuf::from(v)),
                "timing_lin_bundle" => self.timing_lin_bundle = Some(PathBuf::from(v)),
                other => return Err(Error::Config(format!("unknown key `{other}`"))),
            }
        }
        self.greedy.validate()?;
        if self.train.is_empty() || self.test.is_empty() {
            return Err(Error::Config("training and testing sets must be nonempty".into()));
        }
        Ok(())
    }

    /// Serializes back to the flat format; parsing the result reproduces
    /// `self`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        let join = |xs: &[f64]| xs.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(",");
        put("case", self.case.to_string());
        if let Some(n) = self.overrides.n {
            put("n", n.to_string());
        }
        if let Some(n) = self.overrides.n_t {
            put("n_t", n.to_string());
        }
        put("desk_scale", self.desk_scale.to_string());
        put("train", self.train.to_string());
        put("test", self.test.to_string());
        put("m_max", self.greedy.m_max.to_string());
        put("r0", self.greedy.r0.to_string());
        match self.greedy.increment {
            Increment::Fixed(k) => put("n_incre", k.to_string()),
            Increment::Energy(p) => put("n_per", format!("{p}")),
        }
        put("l_sam", self.greedy.l_sam.to_string());
        put("lambda_set", join(&self.greedy.lambda_set));
        put("n_lambda", self.greedy.n_lambda.to_string());
        put("tolerance", format!("{:e}", self.greedy.tolerance));
        put(
            "r_max",
            self.greedy.r_max.map_or("none".to_string(), |r| r.to_string()),
        );
        put(
            "initial_param",
            match self.greedy.initial_param {
                InitialParam::Midpoint => "midpoint".to_string(),
                InitialParam::Index(k) => k.to_string(),
            },
        );
        if let Some(o) = &self.out {
            put("out", o.display().to_string());
        }
        put("seed", self.seed.to_string());
        put(
            "sweep_r",
            self.sweep_r.iter().map(|r| r.to_string()).collect::<Vec<_>>().join(","),
        );
        put("sweep_lambda", join(&self.sweep_lambda));
        put("timing_r_qm", self.timing_r_qm.to_string());
        put("timing_r_lin", self.timing_r_lin.to_string());
        if let Some(mu) = &self.timing_mu {
            put("timing_mu", join(mu));
        }
        put("timing_repeats", self.timing_repeats.to_string());
        if let Some(mu) = &self.mu {
            put("mu", join(mu));
        }
        for (k, p) in [
            ("bundle", &self.bundle),
            ("timing_qm_bundle", &self.timing_qm_bundle),
            ("timing_lin_bundle", &self.timing_lin_bundle),
        ] {
            if let Some(p) = p {
                put(k, p.display().to_string());
            }
        }
        s
    }
}

fn parse_bool(k: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("`{k}` must be true or false, got `{v}`"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_config() {
        let c = ExperimentConfig::parse("case = transport_c1\n").unwrap();
        assert_eq!(c, ExperimentConfig::paper_defaults(CaseId::TransportC1));
        assert_eq!(c.train.len(), 41);
        assert_eq!(c.greedy.lambda_set.len(), 25);
    }

    #[test]
    fn text_round_trip() {
        let mut c = ExperimentConfig::paper_defaults(CaseId::AdvDiff);
        c.overrides = Overrides::new(16, 64);
        c.greedy.r_max = Some(12);
        c.mu = Some(vec![0.5, 0.25]);
        let back = ExperimentConfig::parse(&c.to_text()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn tensor_grid_order() {
        let s: ParamSetSpec = "0:1:2 x 10:30:3".parse().unwrap();
        let p = s.generate::<f64>();
        assert_eq!(p.len(), 6);
        assert_eq!(p[0].values, vec![0.0, 10.0]);
        assert_eq!(p[1].values, vec![0.0, 20.0]);
        assert_eq!(p[5].values, vec![1.0, 30.0]);
    }

    #[test]
    fn linspace_endpoints_exact() {
        let v = linspace(0.0524, 0.226, 5);
        assert_eq!(v[0], 0.0524);
        assert_eq!(v[4], 0.226);
    }

    #[test]
    fn lambda_range_syntax() {
        assert_eq!(parse_lambda_set("10^-5:1:0").unwrap().len(), 6);
        assert_eq!(parse_lambda_set("1e-6, 1e4").unwrap(), vec![1e-6, 1e4]);
    }

    #[test]
    fn rejects_bad_input() {
        for text in [
            "n = 3\n",
            "case = heat\n",
            "case = burgers\nbogus = 1\n",
            "case = burgers\nn_lambda = 99\n",
            "case = burgers\nr0 = x\n",
            "case = burgers\ncase = burgers\n",
            "case = burgers\njust words\n",
        ] {
            assert!(ExperimentConfig::parse(text).is_err(), "{text}");
        }
    }
}
