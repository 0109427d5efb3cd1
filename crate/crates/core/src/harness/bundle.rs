//! Trained-model bundles: a directory holding `manifest.txt`, `V.qmat`,
//! `H.qmat` and `log.csv`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use faer::Mat;

use super::qmat::{read_qmat_as, write_atomic, write_qmat, CHECKSUM_ALGORITHM};
use crate::error::{Error, Result};
use crate::models::{CaseId, Overrides};
use crate::quadmanifold::{q_of, CompressedIndex, QuadraticMap, ORDERING_TAG};
use crate::scalar::Real;
use crate::snapshots::LinearBasis;

pub const BUNDLE_VERSION: &str = "1";
pub const FILES: &str = "V.qmat,H.qmat,log.csv";

/// Everything needed to rebuild and run a trained ROM.
#[derive(Debug, Clone)]
pub struct Bundle<T> {
    pub case: CaseId,
    pub overrides: Overrides,
    pub basis: LinearBasis<T>,
    /// `None` for a linear ROM (stored as an `N x 0` matrix).
    pub map: Option<QuadraticMap<T>>,
    pub log_csv: String,
}

impl<T: Real> Bundle<T> {
    pub fn r(&self) -> usize {
        self.basis.r()
    }
}

fn manifest_text<T: Real>(b: &Bundle<T>) -> String {
    let mut kv: Vec<(&str, String)> = vec![
        ("version", BUNDLE_VERSION.into()),
        ("case", b.case.to_string()),
        ("mode", if b.map.is_some() { "quadratic" } else { "linear" }.into()),
        ("n", b.basis.n().to_string()),
        ("r", b.basis.r().to_string()),
        ("q", b.map.as_ref().map_or(0, |m| m.q()).to_string()),
        (
            "lambda",
            b.map.as_ref().map_or("none".into(), |m| format!("{:e}", m.lambda.as_f64())),
        ),
        ("ordering", ORDERING_TAG.into()),
        ("checksum", CHECKSUM_ALGORITHM.into()),
        ("basis_fingerprint", format!("{:016x}", b.basis.fingerprint())),
        ("files", FILES.into()),
    ];
    if let Some(n) = b.overrides.n {
        kv.push(("grid_n", n.to_string()));
    }
    if let Some(n) = b.overrides.n_t {
        kv.push(("grid_n_t", n.to_string()));
    }
    kv.into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

pub fn save_bundle<T: Real>(dir: &Path, b: &Bundle<T>) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_qmat(&dir.join("V.qmat"), b.basis.as_ref())?;
    match &b.map {
        Some(m) => {
            m.check_basis(&b.basis)?;
            write_qmat(&dir.join("H.qmat"), m.h.as_ref())?;
        }
        None => write_qmat(&dir.join("H.qmat"), Mat::<T>::zeros(b.basis.n(), 0).as_ref())?,
    }
    write_atomic(&dir.join("log.csv"), b.log_csv.as_bytes())?;
    // the manifest goes last so a complete manifest implies complete files
    write_atomic(&dir.join("manifest.txt"), manifest_text(b).as_bytes())
}

fn parse_manifest(text: &str, path: &str) -> Result<BTreeMap<String, String>> {
    let mut kv = BTreeMap::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Format {
            path: path.into(),
            reason: format!("manifest line `{line}` is not key=value"),
        })?;
        kv.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(kv)
}

pub fn load_bundle<T: Real>(dir: &Path) -> Result<Bundle<T>> {
    let mpath = dir.join("manifest.txt");
    let mname = mpath.display().to_string();
    let kv = parse_manifest(&fs::read_to_string(&mpath)?, &mname)?;
    let get = |k: &str| kv.get(k).map(String::as_str).ok_or_else(|| Error::MissingField(k.to_string()));
    let num = |k: &str| -> Result<usize> {
        get(k)?.parse().map_err(|_| Error::Format {
            path: mname.clone(),
            reason: format!("`{k}` is not an integer"),
        })
    };
    let version = get("version")?;
    if version != BUNDLE_VERSION {
        return Err(Error::Version {
            expected: BUNDLE_VERSION.into(),
            found: version.into(),
        });
    }
    let ordering = get("ordering")?;
    if ordering != ORDERING_TAG {
        return Err(Error::Version {
            expected: ORDERING_TAG.into(),
            found: ordering.into(),
        });
    }
    let algo = get("checksum")?;
    if algo != CHECKSUM_ALGORITHM {
        return Err(Error::Version {
            expected: CHECKSUM_ALGORITHM.into(),
            found: algo.into(),
        });
    }
    let files = get("files")?;
    for f in files.split(',') {
        if !dir.join(f).is_file() {
            return Err(Error::MissingField(format!("file {f}")));
        }
    }
    let case: CaseId = get("case")?.parse()?;
    let (r, q) = (num("r")?, num("q")?);
    let lambda = get("lambda")?;
    let overrides = Overrides {
        n: kv.get("grid_n").and_then(|v| v.parse().ok()),
        n_t: kv.get("grid_n_t").and_then(|v| v.parse().ok()),
    };

    let v: Mat<T> = read_qmat_as(&dir.join("V.qmat"))?;
    if v.ncols() != r {
        return Err(Error::Dimension {
            context: "bundle basis columns",
            expected: r,
            found: v.ncols(),
        });
    }
    let basis = LinearBasis::from_columns(v)?;
    if let Some(fp) = kv.get("basis_fingerprint") {
        let got = format!("{:016x}", basis.fingerprint());
        if *fp != got {
            return Err(Error::Provenance(format!("stored fingerprint {fp}, loaded basis {got}")));
        }
    }
    let h: Mat<T> = read_qmat_as(&dir.join("H.qmat"))?;
    if h.nrows() != basis.n() || h.ncols() != q {
        return Err(Error::Dimension {
            context: "bundle quadratic map",
            expected: q,
            found: h.ncols(),
        });
    }
    let map = if lambda == "none" {
        if q != 0 {
            return Err(Error::Format {
                path: mname,
                reason: "lambda=none but the map is nonempty".into(),
            });
        }
        None
    } else {
        let lambda: f64 = lambda.parse().map_err(|_| Error::Format {
            path: mname.clone(),
            reason: format!("bad lambda `{lambda}`"),
        })?;
        if q != q_of(r) {
            return Err(Error::Dimension {
                context: "bundle q = r(r+1)/2",
                expected: q_of(r),
                found: q,
            });
        }
        Some(QuadraticMap {
            h,
            lambda: T::lit(lambda),
            index: CompressedIndex::new(r),
            basis_fingerprint: basis.fingerprint(),
        })
    };
    let log_csv = fs::read_to_string(dir.join("log.csv"))?;
    Ok(Bundle {
        case,
        overrides,
        basis,
        map,
        log_csv,
    })
}
