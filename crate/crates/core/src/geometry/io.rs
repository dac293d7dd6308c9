//! XYZ and ASCII PLY readers/writers.
//!
//! XYZ: one point per line, three whitespace-separated decimals, `#` starts a
//! comment line. PLY: ASCII only; the `vertex` element's `x`, `y`, `z`
//! properties are read and everything else is skipped. Writers emit 17
//! significant digits so a save/load round trip is bit-exact.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{Point3, PointCloud};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CloudFormat {
    Xyz,
    PlyAscii,
}

impl CloudFormat {
    /// Picks a format from the file extension; anything but `.ply` is XYZ.
    pub fn from_path(path: &Path) -> CloudFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("ply") => CloudFormat::PlyAscii,
            _ => CloudFormat::Xyz,
        }
    }
}

pub fn load_cloud(path: impl AsRef<Path>, format: CloudFormat) -> Result<PointCloud> {
    let cloud = load_cloud_allow_empty(path, format)?;
    if cloud.is_empty() {
        return Err(Error::EmptyFile);
    }
    Ok(cloud)
}

/// Like [`load_cloud`] but returns an empty cloud instead of failing when the
/// file holds no points.
pub fn load_cloud_allow_empty(path: impl AsRef<Path>, format: CloudFormat) -> Result<PointCloud> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let points = match format {
        CloudFormat::Xyz => parse_xyz(&text)?,
        CloudFormat::PlyAscii => parse_ply(&text)?,
    };
    PointCloud::new(points)
}

pub fn save_cloud(path: impl AsRef<Path>, cloud: &PointCloud, format: CloudFormat) -> Result<()> {
    let path = path.as_ref();
    let text = match format {
        CloudFormat::Xyz => write_xyz(cloud),
        CloudFormat::PlyAscii => write_ply(cloud),
    };
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn parse_float(tok: &str, line: usize) -> Result<f64> {
    let v: f64 = tok.parse().map_err(|_| Error::Parse {
        line,
        message: format!("`{tok}` is not a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line,
            message: format!("non-finite coordinate `{tok}`"),
        });
    }
    Ok(v)
}

pub(crate) fn parse_xyz(text: &str) -> Result<Vec<Point3>> {
    let mut points = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("expected 3 fields, found {}", fields.len()),
            });
        }
        points.push([
            parse_float(fields[0], i + 1)?,
            parse_float(fields[1], i + 1)?,
            parse_float(fields[2], i + 1)?,
        ]);
    }
    Ok(points)
}

struct PlyElement {
    name: String,
    count: usize,
    properties: Vec<String>,
}

pub(crate) fn parse_ply(text: &str) -> Result<Vec<Point3>> {
    let mut lines = text.lines().enumerate();
    let bad = |line: usize, message: &str| Error::Parse {
        line,
        message: message.to_string(),
    };

    match lines.next() {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err(bad(1, "missing `ply` magic")),
    }

    let mut elements: Vec<PlyElement> = Vec::new();
    let mut saw_format = false;
    loop {
        let (i, raw) = lines
            .next()
            .ok_or_else(|| bad(0, "unexpected end of header"))?;
        let toks: Vec<&str> = raw.split_whitespace().collect();
        match toks.first().copied() {
            Some("end_header") => break,
            Some("format") => {
                if toks.get(1) != Some(&"ascii") {
                    return Err(bad(i + 1, "only ASCII PLY is supported"));
                }
                saw_format = true;
            }
            Some("comment") | Some("obj_info") | None => {}
            Some("element") => {
                if toks.len() != 3 {
                    return Err(bad(i + 1, "malformed element line"));
                }
                let count = toks[2]
                    .parse()
                    .map_err(|_| bad(i + 1, "element count is not an integer"))?;
                elements.push(PlyElement {
                    name: toks[1].to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| bad(i + 1, "property before any element"))?;
                let name = toks
                    .last()
                    .filter(|_| toks.len() >= 3)
                    .ok_or_else(|| bad(i + 1, "malformed property line"))?;
                el.properties.push(name.to_string());
            }
            Some(other) => return Err(bad(i + 1, &format!("unknown header keyword `{other}`"))),
        }
    }
    if !saw_format {
        return Err(bad(1, "missing format line"));
    }

    let mut points = Vec::new();
    for el in &elements {
        let is_vertex = el.name == "vertex";
        let col = |n: &str| el.properties.iter().position(|p| p == n);
        let cols = if is_vertex {
            match (col("x"), col("y"), col("z")) {
                (Some(x), Some(y), Some(z)) => Some([x, y, z]),
                _ => return Err(bad(0, "vertex element lacks x/y/z properties")),
            }
        } else {
            None
        };
        for _ in 0..el.count {
            let (i, raw) = lines
                .next()
                .ok_or_else(|| bad(0, &format!("truncated `{}` element data", el.name)))?;
            if let Some(cols) = cols {
                let toks: Vec<&str> = raw.split_whitespace().collect();
                if toks.len() < el.properties.len() {
                    return Err(bad(
                        i + 1,
                        &format!(
                            "expected {} vertex fields, found {}",
                            el.properties.len(),
                            toks.len()
                        ),
                    ));
                }
                points.push([
                    parse_float(toks[cols[0]], i + 1)?,
                    parse_float(toks[cols[1]], i + 1)?,
                    parse_float(toks[cols[2]], i + 1)?,
                ]);
            }
        }
    }
    Ok(points)
}

fn write_xyz(cloud: &PointCloud) -> String {
    let mut s = String::with_capacity(cloud.len() * 72);
    for p in cloud.iter() {
        let _ = writeln!(s, "{:.16e} {:.16e} {:.16e}", p[0], p[1], p[2]);
    }
    s
}

fn write_ply(cloud: &PointCloud) -> String {
    let mut s = String::with_capacity(cloud.len() * 72 + 128);
    let _ = write!(
        s,
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nend_header\n",
        cloud.len()
    );
    s.push_str(&write_xyz(cloud));
    s
}
