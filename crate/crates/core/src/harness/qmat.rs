//! `QMAT v1` binary matrix files.
//!
//! Layout: ASCII header `QMAT v1 <rows> <cols>\n`, little-endian `f64`
//! values in column-major order, then the XXH64 (seed 0) of everything
//! before it as 8 little-endian bytes. The checksum covers the header too,
//! so a damaged header is reported as a checksum failure.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use faer::{Mat, MatRef};
use twox_hash::XxHash64;

use crate::error::{Error, Result};
use crate::scalar::Real;

pub const MAGIC: &str = "QMAT";
pub const VERSION: &str = "v1";
pub const CHECKSUM_ALGORITHM: &str = "xxh64";

pub fn checksum(bytes: &[u8]) -> u64 {
    XxHash64::oneshot(0, bytes)
}

/// Encodes a matrix as a QMAT byte buffer.
pub fn to_bytes<T: Real>(m: MatRef<'_, T>) -> Vec<u8> {
    let header = format!("{MAGIC} {VERSION} {} {}\n", m.nrows(), m.ncols());
    let mut buf = Vec::with_capacity(header.len() + 8 * m.nrows() * m.ncols() + 8);
    buf.extend_from_slice(header.as_bytes());
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            buf.extend_from_slice(&m[(i, j)].as_f64().to_le_bytes());
        }
    }
    let sum = checksum(&buf);
    buf.extend_from_slice(&sum.to_le_bytes());
    buf
}

/// Decodes a QMAT buffer; `path` only labels errors.
pub fn from_bytes(bytes: &[u8], path: &str) -> Result<Mat<f64>> {
    let fmt = |reason: String| Error::Format {
        path: path.to_string(),
        reason,
    };
    let nl = bytes
        .iter()
        .take(128)
        .position(|&b| b == b'\n')
        .ok_or_else(|| fmt("missing header line".into()))?;
    if bytes.len() < nl + 1 + 8 {
        return Err(fmt("file truncated before checksum".into()));
    }
    let body_end = bytes.len() - 8;
    let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| fmt("header is not ASCII".into()))?;
    let fields: Vec<&str> = header.split(' ').collect();
    let dims: Option<(usize, usize)> = match fields.as_slice() {
        [_, _, r, c] => r.parse().ok().zip(c.parse().ok()),
        _ => None,
    };
    let stored = u64::from_le_bytes(bytes[body_end..].try_into().expect("8 bytes"));
    let computed = checksum(&bytes[..body_end]);
    if stored != computed {
        // a payload shorter than the header promises is reported as truncation
        let expected_len = dims.and_then(|(r, c)| r.checked_mul(c)).and_then(|rc| rc.checked_mul(8));
        if let Some(len) = expected_len {
            if body_end < nl + 1 + len {
                return Err(fmt(format!(
                    "payload truncated: expected {} bytes, found {}",
                    len,
                    body_end.saturating_sub(nl + 1)
                )));
            }
        }
        return Err(Error::Checksum {
            path: path.to_string(),
            stored,
            computed,
        });
    }
    if fields.first() != Some(&MAGIC) {
        return Err(fmt(format!("bad magic in header `{header}`")));
    }
    if let Some(v) = fields.get(1) {
        if *v != VERSION {
            return Err(Error::Version {
                expected: VERSION.into(),
                found: v.to_string(),
            });
        }
    }
    let (rows, cols) = dims.ok_or_else(|| fmt(format!("bad header `{header}`")))?;
    let payload = &bytes[nl + 1..body_end];
    if payload.len() != rows * cols * 8 {
        return Err(fmt(format!(
            "payload has {} bytes, header implies {}",
            payload.len(),
            rows * cols * 8
        )));
    }
    Ok(Mat::from_fn(rows, cols, |i, j| {
        let k = 8 * (i + rows * j);
        f64::from_le_bytes(payload[k..k + 8].try_into().expect("8 bytes"))
    }))
}

/// Writes `bytes` to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp_name = path.file_name().map(|s| s.to_os_string()).unwrap_or_default();
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp: PathBuf = path.with_file_name(tmp_name);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_qmat<T: Real>(path: &Path, m: MatRef<'_, T>) -> Result<()> {
    write_atomic(path, &to_bytes(m))
}

pub fn read_qmat(path: &Path) -> Result<Mat<f64>> {
    let bytes = fs::read(path)?;
    from_bytes(&bytes, &path.display().to_string())
}

/// Reads a QMAT file into scalar type `T`.
pub fn read_qmat_as<T: Real>(path: &Path) -> Result<Mat<T>> {
    let m = read_qmat(path)?;
    Ok(Mat::from_fn(m.nrows(), m.ncols(), |i, j| T::lit(m[(i, j)])))
}
