//! XYZ and PLY point cloud readers and writers.
//!
//! XYZ: one point per line, `x y z` or `x y z nx ny nz`, whitespace
//! separated, `#` comment lines ignored, LF or CRLF line endings.
//!
//! PLY: `ascii 1.0` and `binary_little_endian 1.0`. Only the `vertex`
//! element's `x y z` and optional `nx ny nz` properties are read; everything
//! else is skipped.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{Point3, Vector3};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    Xyz,
    Ply,
}

impl CloudFormat {
    /// Guess from the file extension; anything other than `.ply` is XYZ.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("ply") => CloudFormat::Ply,
            _ => CloudFormat::Xyz,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PlyEncoding {
    #[default]
    Ascii,
    BinaryLittleEndian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SaveWarning {
    /// The target format cannot hold normals.
    NormalsDropped,
}

pub fn load_cloud(path: &Path, format: CloudFormat) -> Result<PointCloud> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    match format {
        CloudFormat::Xyz => {
            let text = String::from_utf8(bytes).map_err(|e| Error::Parse {
                line: 0,
                reason: format!("not valid UTF-8: {e}"),
            })?;
            parse_xyz(&text)
        }
        CloudFormat::Ply => parse_ply(&bytes),
    }
}

pub fn save_cloud(cloud: &PointCloud, path: &Path, format: CloudFormat) -> Result<Vec<SaveWarning>> {
    save_cloud_with(cloud, path, format, PlyEncoding::default())
}

pub fn save_cloud_with(
    cloud: &PointCloud,
    path: &Path,
    format: CloudFormat,
    encoding: PlyEncoding,
) -> Result<Vec<SaveWarning>> {
    let mut warnings = Vec::new();
    let bytes = match format {
        CloudFormat::Xyz => {
            if cloud.normals().is_some() {
                log::warn!("xyz output drops normals: {}", path.display());
                warnings.push(SaveWarning::NormalsDropped);
            }
            write_xyz(cloud, None)
        }
        CloudFormat::Ply => write_ply(cloud, encoding),
    };
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&bytes)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))?;
    Ok(warnings)
}

/// Formats a float with 17 significant digits, enough to round-trip exactly.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub(crate) fn write_xyz(cloud: &PointCloud, header: Option<&str>) -> Vec<u8> {
    let mut out = String::with_capacity(cloud.len() * 72);
    if let Some(h) = header {
        out.push_str(h);
        out.push('\n');
    }
    for p in cloud.points() {
        out.push_str(&format!("{} {} {}\n", fmt_f64(p.x), fmt_f64(p.y), fmt_f64(p.z)));
    }
    out.into_bytes()
}

pub fn parse_xyz(text: &str) -> Result<PointCloud> {
    let mut points = Vec::new();
    let mut normals = Vec::new();
    let mut with_normals: Option<bool> = None;
    for (lineno, raw) in text.split('\n').enumerate() {
        let line = raw.strip_suffix('\r').unwrap_or(raw).trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let line_no = lineno + 1;
        let fields: Vec<f64> = line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>().map_err(|_| Error::Parse {
                    line: line_no,
                    reason: format!("non-numeric value {tok:?}"),
                })
            })
            .collect::<Result<_>>()?;
        if let Some(bad) = fields.iter().find(|v| !v.is_finite()) {
            return Err(Error::Parse {
                line: line_no,
                reason: format!("non-finite value {bad}"),
            });
        }
        let has_normal = match fields.len() {
            3 => false,
            6 => true,
            n => {
                return Err(Error::Parse {
                    line: line_no,
                    reason: format!("expected 3 or 6 values, found {n}"),
                })
            }
        };
        match with_normals {
            None => with_normals = Some(has_normal),
            Some(prev) if prev != has_normal => {
                return Err(Error::Parse {
                    line: line_no,
                    reason: "inconsistent column count".into(),
                })
            }
            _ => {}
        }
        points.push(Point3::new(fields[0], fields[1], fields[2]));
        if has_normal {
            normals.push(Vector3::new(fields[3], fields[4], fields[5]));
        }
    }
    if points.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let cloud = PointCloud::new(points)?;
    if with_normals == Some(true) {
        cloud.set_normals(normals)
    } else {
        Ok(cloud)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ScalarType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarType {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => ScalarType::I8,
            "uchar" | "uint8" => ScalarType::U8,
            "short" | "int16" => ScalarType::I16,
            "ushort" | "uint16" => ScalarType::U16,
            "int" | "int32" => ScalarType::I32,
            "uint" | "uint32" => ScalarType::U32,
            "float" | "float32" => ScalarType::F32,
            "double" | "float64" => ScalarType::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            ScalarType::I8 | ScalarType::U8 => 1,
            ScalarType::I16 | ScalarType::U16 => 2,
            ScalarType::I32 | ScalarType::U32 | ScalarType::F32 => 4,
            ScalarType::F64 => 8,
        }
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            ScalarType::I8 => b[0] as i8 as f64,
            ScalarType::U8 => b[0] as f64,
            ScalarType::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            ScalarType::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            ScalarType::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            ScalarType::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            ScalarType::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            ScalarType::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar { name: String, ty: ScalarType },
    List { count: ScalarType, item: ScalarType },
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

fn parse_ply(bytes: &[u8]) -> Result<PointCloud> {
    // Header is ASCII, terminated by an `end_header` line.
    let mut pos = 0;
    let next_line = |pos: &mut usize| -> Option<String> {
        if *pos >= bytes.len() {
            return None;
        }
        let end = bytes[*pos..]
            .iter()
            .position(|&b| b == b'\n')
            .map(|i| *pos + i)
            .unwrap_or(bytes.len());
        let line = String::from_utf8_lossy(&bytes[*pos..end])
            .trim_end_matches('\r')
            .to_string();
        *pos = (end + 1).min(bytes.len());
        Some(line)
    };
    let perr = |line: usize, reason: &str| Error::Parse {
        line,
        reason: reason.to_string(),
    };

    let first = next_line(&mut pos).ok_or(Error::EmptyCloud)?;
    if first.trim() != "ply" {
        return Err(perr(1, "missing 'ply' magic"));
    }
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    let mut line_idx = 1;
    loop {
        let line = next_line(&mut pos).ok_or_else(|| perr(line_idx + 1, "missing end_header"))?;
        line_idx += 1;
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            [] => {}
            ["comment", ..] | ["obj_info", ..] => {}
            ["format", fmt, _version] => {
                encoding = Some(match *fmt {
                    "ascii" => PlyEncoding::Ascii,
                    "binary_little_endian" => PlyEncoding::BinaryLittleEndian,
                    other => {
                        return Err(perr(line_idx, &format!("unsupported format {other}")))
                    }
                })
            }
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| perr(line_idx, "bad element count"))?,
                props: Vec::new(),
            }),
            ["property", "list", count, item, _name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| perr(line_idx, "property before element"))?;
                el.props.push(Property::List {
                    count: ScalarType::parse(count)
                        .ok_or_else(|| perr(line_idx, "unknown list count type"))?,
                    item: ScalarType::parse(item)
                        .ok_or_else(|| perr(line_idx, "unknown list item type"))?,
                });
            }
            ["property", ty, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| perr(line_idx, "property before element"))?;
                el.props.push(Property::Scalar {
                    name: name.to_string(),
                    ty: ScalarType::parse(ty)
                        .ok_or_else(|| perr(line_idx, &format!("unknown type {ty}")))?,
                });
            }
            ["end_header"] => break,
            _ => return Err(perr(line_idx, &format!("unrecognized header line {line:?}"))),
        }
    }
    let header_lines = line_idx;
    let encoding = encoding.ok_or_else(|| perr(header_lines, "missing format line"))?;

    let vertex_pos = elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| perr(header_lines, "no vertex element"))?;
    let vertex = &elements[vertex_pos];
    let slot = |name: &str| {
        vertex
            .props
            .iter()
            .position(|p| matches!(p, Property::Scalar { name: n, .. } if n == name))
    };
    let xyz = [slot("x"), slot("y"), slot("z")];
    let nrm = [slot("nx"), slot("ny"), slot("nz")];
    if xyz.iter().any(Option::is_none) {
        return Err(perr(header_lines, "vertex element lacks x, y or z"));
    }
    let xyz = xyz.map(Option::unwrap);
    let has_normals = nrm.iter().all(Option::is_some);
    let nrm = nrm.map(|s| s.unwrap_or(0));

    let mut points = Vec::with_capacity(vertex.count);
    let mut normals = Vec::new();

    match encoding {
        PlyEncoding::Ascii => {
            let body = String::from_utf8_lossy(&bytes[pos..]);
            let mut lines = body
                .split('\n')
                .enumerate()
                .map(|(i, l)| (header_lines + i + 1, l.trim_end_matches('\r').trim()))
                .filter(|(_, l)| !l.is_empty());
            for (ei, el) in elements.iter().enumerate() {
                for _ in 0..el.count {
                    let (ln, line) = lines
                        .next()
                        .ok_or_else(|| perr(header_lines, "unexpected end of data"))?;
                    if ei != vertex_pos {
                        continue;
                    }
                    let vals: Vec<f64> = line
                        .split_whitespace()
                        .map(|t| t.parse::<f64>().map_err(|_| perr(ln, &format!("non-numeric value {t:?}"))))
                        .collect::<Result<_>>()?;
                    // Vertex element with list properties is unusual; only
                    // scalar layouts are supported for ascii vertex rows.
                    if vals.len() < el.props.len() {
                        return Err(perr(ln, "too few values in vertex row"));
                    }
                    points.push(Point3::new(vals[xyz[0]], vals[xyz[1]], vals[xyz[2]]));
                    if has_normals {
                        normals.push(Vector3::new(vals[nrm[0]], vals[nrm[1]], vals[nrm[2]]));
                    }
                }
            }
        }
        PlyEncoding::BinaryLittleEndian => {
            let mut off = pos;
            let take = |off: &mut usize, n: usize| -> Result<&[u8]> {
                if *off + n > bytes.len() {
                    return Err(Error::Format {
                        offset: *off as u64,
                        reason: "truncated binary PLY body".into(),
                    });
                }
                let s = &bytes[*off..*off + n];
                *off += n;
                Ok(s)
            };
            for (ei, el) in elements.iter().enumerate() {
                for _ in 0..el.count {
                    let mut vals = Vec::with_capacity(el.props.len());
                    for p in &el.props {
                        match p {
                            Property::Scalar { ty, .. } => {
                                vals.push(ty.read_le(take(&mut off, ty.size())?));
                            }
                            Property::List { count, item } => {
                                let n = count.read_le(take(&mut off, count.size())?);
                                if !(n >= 0.0) {
                                    return Err(Error::Format {
                                        offset: off as u64,
                                        reason: "negative list length".into(),
                                    });
                                }
                                take(&mut off, n as usize * item.size())?;
                                vals.push(f64::NAN);
                            }
                        }
                    }
                    if ei == vertex_pos {
                        points.push(Point3::new(vals[xyz[0]], vals[xyz[1]], vals[xyz[2]]));
                        if has_normals {
                            normals.push(Vector3::new(vals[nrm[0]], vals[nrm[1]], vals[nrm[2]]));
                        }
                    }
                }
            }
        }
    }
    if points.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if points.iter().any(|p| !p.coords.iter().all(|c| c.is_finite())) {
        return Err(perr(header_lines, "non-finite vertex coordinate"));
    }
    let cloud = PointCloud::new(points)?;
    if has_normals {
        // Single-precision files carry normals that are unit only to ~1e-7.
        let normals = normals
            .into_iter()
            .map(|n| {
                let len = n.norm();
                if (len - 1.0).abs() > crate::cloud::UNIT_NORMAL_TOL && len > 0.0 && len.is_finite() {
                    n / len
                } else {
                    n
                }
            })
            .collect();
        cloud.set_normals(normals)
    } else {
        Ok(cloud)
    }
}

fn write_ply(cloud: &PointCloud, encoding: PlyEncoding) -> Vec<u8> {
    let mut header = String::from("ply\n");
    header.push_str(match encoding {
        PlyEncoding::Ascii => "format ascii 1.0\n",
        PlyEncoding::BinaryLittleEndian => "format binary_little_endian 1.0\n",
    });
    header.push_str(&format!("element vertex {}\n", cloud.len()));
    for p in ["x", "y", "z"] {
        header.push_str(&format!("property double {p}\n"));
    }
    if cloud.normals().is_some() {
        for p in ["nx", "ny", "nz"] {
            header.push_str(&format!("property double {p}\n"));
        }
    }
    header.push_str("end_header\n");
    let mut out = header.into_bytes();
    for (i, p) in cloud.points().iter().enumerate() {
        let mut row: Vec<f64> = vec![p.x, p.y, p.z];
        if let Some(ns) = cloud.normals() {
            row.extend(ns[i].iter());
        }
        match encoding {
            PlyEncoding::Ascii => {
                let line: Vec<String> = row.iter().map(|v| fmt_f64(*v)).collect();
                out.extend_from_slice(line.join(" ").as_bytes());
                out.push(b'\n');
            }
            PlyEncoding::BinaryLittleEndian => {
                for v in row {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
    }
    out
}
