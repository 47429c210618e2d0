//! ESCD distance-matrix files.
//!
//! Binary layout, all little-endian, no padding:
//!
//! | bytes        | content                                   |
//! |--------------|-------------------------------------------|
//! | 4            | magic `ESCD`                              |
//! | 4            | `u32` version, currently 1                |
//! | 4            | `u32` n (rows)                            |
//! | 4            | `u32` k (anchors)                         |
//! | 8·3·k        | `f64` anchor coordinates, row-major       |
//! | 8·n·k        | `f64` distances, row-major                |
//!
//! The text form starts with `# escd v1 n=<n> k=<k>`, then `k` lines
//! `A x y z`, then `n` comma-separated distance rows.

use std::fs;
use std::path::Path;

use nalgebra::Point3;

use super::matrix::DistanceMatrix;
use crate::error::{Error, Result};
use crate::io::fmt_f64;

pub const MAGIC: &[u8; 4] = b"ESCD";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

pub fn to_bytes(m: &DistanceMatrix) -> Result<Vec<u8>> {
    let n = u32::try_from(m.rows())
        .map_err(|_| Error::InvalidArgument("too many rows for ESCD".into()))?;
    let k = u32::try_from(m.cols())
        .map_err(|_| Error::InvalidArgument("too many anchors for ESCD".into()))?;
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * (3 * m.cols() + m.values().len()));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&n.to_le_bytes());
    out.extend_from_slice(&k.to_le_bytes());
    for a in m.anchors() {
        for c in a.coords.iter() {
            out.extend_from_slice(&c.to_le_bytes());
        }
    }
    for v in m.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.bytes.len() - self.offset < n {
            return Err(Error::Format {
                offset: self.offset as u64,
                reason: format!(
                    "truncated {what}: need {n} bytes, {} left",
                    self.bytes.len() - self.offset
                ),
            });
        }
        let s = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<DistanceMatrix> {
    let mut cur = Cursor { bytes, offset: 0 };
    if cur.take(4, "magic")? != MAGIC {
        return Err(Error::Format {
            offset: 0,
            reason: "bad magic, expected ESCD".into(),
        });
    }
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(Error::Format {
            offset: 4,
            reason: format!("unsupported version {version}"),
        });
    }
    let n = cur.u32("row count")? as usize;
    let k = cur.u32("anchor count")? as usize;
    let expected = (k as u128 * 3 + n as u128 * k as u128) * 8 + HEADER_LEN as u128;
    if (bytes.len() as u128) < expected {
        return Err(Error::Format {
            offset: bytes.len() as u64,
            reason: format!("truncated: expected {expected} bytes, file has {}", bytes.len()),
        });
    }
    if (bytes.len() as u128) > expected {
        return Err(Error::Format {
            offset: expected as u64,
            reason: format!("{} trailing bytes", bytes.len() as u128 - expected),
        });
    }
    let mut anchors = Vec::with_capacity(k);
    for _ in 0..k {
        let x = cur.f64("anchor")?;
        let y = cur.f64("anchor")?;
        let z = cur.f64("anchor")?;
        anchors.push(Point3::new(x, y, z));
    }
    let mut values = Vec::with_capacity(n * k);
    for _ in 0..n * k {
        let off = cur.offset;
        let v = cur.f64("distance")?;
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::Format {
                offset: off as u64,
                reason: format!("distance {v} is not finite and nonnegative"),
            });
        }
        values.push(v);
    }
    DistanceMatrix::new(values, n, anchors)
}

pub fn to_text(m: &DistanceMatrix) -> String {
    let mut out = format!("# escd v1 n={} k={}\n", m.rows(), m.cols());
    for a in m.anchors() {
        out.push_str(&format!("A {} {} {}\n", fmt_f64(a.x), fmt_f64(a.y), fmt_f64(a.z)));
    }
    for row in m.iter_rows() {
        let cells: Vec<String> = row.iter().map(|v| fmt_f64(*v)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn from_text(text: &str) -> Result<DistanceMatrix> {
    let perr = |line: usize, reason: String| Error::Parse { line, reason };
    let mut lines = text
        .split('\n')
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r').trim()))
        .filter(|(_, l)| !l.is_empty());
    let (ln, header) = lines.next().ok_or_else(|| perr(1, "empty file".into()))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    let (n, k) = match fields.as_slice() {
        ["#", "escd", "v1", n, k] => {
            let parse = |s: &str, key: &str| {
                s.strip_prefix(key)
                    .and_then(|v| v.parse::<usize>().ok())
                    .ok_or_else(|| perr(ln, format!("bad header field {s:?}")))
            };
            (parse(n, "n=")?, parse(k, "k=")?)
        }
        _ => return Err(perr(ln, "expected header '# escd v1 n=<n> k=<k>'".into())),
    };
    let mut anchors = Vec::with_capacity(k);
    for _ in 0..k {
        let (ln, line) = lines.next().ok_or_else(|| perr(ln, "missing anchor line".into()))?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 4 || toks[0] != "A" {
            return Err(perr(ln, "expected 'A x y z'".into()));
        }
        let c: Vec<f64> = toks[1..]
            .iter()
            .map(|t| t.parse::<f64>().map_err(|_| perr(ln, format!("non-numeric value {t:?}"))))
            .collect::<Result<_>>()?;
        anchors.push(Point3::new(c[0], c[1], c[2]));
    }
    let mut values = Vec::with_capacity(n * k);
    let mut rows = 0;
    for (ln, line) in lines {
        if line.starts_with('#') {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|t| {
                let t = t.trim();
                t.parse::<f64>().map_err(|_| perr(ln, format!("non-numeric value {t:?}")))
            })
            .collect::<Result<_>>()?;
        if row.len() != k {
            return Err(perr(ln, format!("expected {k} values, found {}", row.len())));
        }
        values.extend(row);
        rows += 1;
    }
    if rows != n {
        return Err(perr(0, format!("header says n={n} but {rows} rows follow")));
    }
    DistanceMatrix::new(values, n, anchors)
}

fn is_text_path(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()),
        Some(e) if e.eq_ignore_ascii_case("csv") || e.eq_ignore_ascii_case("txt")
    )
}

/// Writes binary ESCD, or the text form for `.csv`/`.txt` paths.
pub fn write_escd(m: &DistanceMatrix, path: &Path) -> Result<()> {
    let bytes = if is_text_path(path) {
        to_text(m).into_bytes()
    } else {
        to_bytes(m)?
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_escd(path: &Path) -> Result<DistanceMatrix> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if is_text_path(path) {
        let text = String::from_utf8(bytes).map_err(|e| Error::Parse {
            line: 0,
            reason: e.to_string(),
        })?;
        from_text(&text)
    } else {
        from_bytes(&bytes)
    }
}
