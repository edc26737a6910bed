//! ASCII PLY reading and writing.
//!
//! Accepted grammar (see `docs/formats.md`):
//!
//! ```text
//! ply
//! format ascii 1.0
//! { comment ... | obj_info ... }
//! element vertex <N>
//! property <numeric type> x | y | z | nx | ny | nz | <other>
//! { element <name> <M> / property ... }      (other elements are skipped)
//! end_header
//! <one whitespace separated row per element instance>
//! ```
//!
//! Binary encodings are rejected with [`PlyError::UnsupportedEncoding`].

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::cloud::{CloudError, PointCloud};
use crate::Vec3;

#[derive(Debug, Error)]
pub enum PlyError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("unsupported PLY encoding `{0}`; only ascii is read")]
    UnsupportedEncoding(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("vertex row {row} missing (header declares {declared} vertices)")]
    MissingRow { row: usize, declared: usize },
    #[error(transparent)]
    Cloud(#[from] CloudError),
}

fn parse_err(line: usize, message: impl Into<String>) -> PlyError {
    PlyError::Parse {
        line,
        message: message.into(),
    }
}

#[derive(Debug)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<String>,
}

const NUMERIC_TYPES: &[&str] = &[
    "char", "uchar", "short", "ushort", "int", "uint", "float", "double", "int8", "uint8",
    "int16", "uint16", "int32", "uint32", "float32", "float64",
];

pub fn load_ply(path: impl AsRef<Path>) -> Result<PointCloud, PlyError> {
    let text = fs::read(path.as_ref())?;
    // Binary bodies are not valid UTF-8 in general; check the header first.
    let header_end = text
        .windows(b"end_header".len())
        .position(|w| w == b"end_header")
        .unwrap_or(text.len());
    let header = String::from_utf8_lossy(&text[..header_end]);
    if let Some(format) = header.lines().find(|l| l.trim_start().starts_with("format")) {
        let encoding = format.split_whitespace().nth(1).unwrap_or("");
        if encoding != "ascii" {
            return Err(PlyError::UnsupportedEncoding(encoding.to_string()));
        }
    }
    let text = String::from_utf8(text).map_err(|_| parse_err(0, "file is not valid UTF-8"))?;
    parse_ply(&text)
}

pub fn parse_ply(text: &str) -> Result<PointCloud, PlyError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));

    match lines.next() {
        Some((_, l)) if l.trim() == "ply" => {}
        Some((n, _)) => return Err(parse_err(n, "missing `ply` magic")),
        None => return Err(parse_err(1, "empty file")),
    }

    let mut elements: Vec<Element> = Vec::new();
    let mut saw_format = false;
    let mut header_done = false;
    for (n, line) in lines.by_ref() {
        let mut tok = line.split_whitespace();
        match tok.next() {
            None | Some("comment") | Some("obj_info") => {}
            Some("format") => {
                let encoding = tok.next().unwrap_or("");
                if encoding != "ascii" {
                    return Err(PlyError::UnsupportedEncoding(encoding.to_string()));
                }
                saw_format = true;
            }
            Some("element") => {
                let name = tok.next().ok_or_else(|| parse_err(n, "element without name"))?;
                let count = tok
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| parse_err(n, "element count is not an integer"))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| parse_err(n, "property before any element"))?;
                let ty = tok.next().ok_or_else(|| parse_err(n, "property without type"))?;
                let name = if ty == "list" {
                    tok.nth(2)
                } else if NUMERIC_TYPES.contains(&ty) {
                    tok.next()
                } else {
                    return Err(parse_err(n, format!("unknown property type `{ty}`")));
                };
                let name = name.ok_or_else(|| parse_err(n, "property without name"))?;
                element.properties.push(if ty == "list" {
                    format!("list:{name}")
                } else {
                    name.to_string()
                });
            }
            Some("end_header") => {
                header_done = true;
                break;
            }
            Some(other) => return Err(parse_err(n, format!("unexpected header keyword `{other}`"))),
        }
    }
    if !saw_format {
        return Err(parse_err(1, "missing format line"));
    }
    if !header_done {
        return Err(parse_err(text.lines().count(), "missing end_header"));
    }

    let vertex = elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| parse_err(1, "no vertex element"))?;
    let props = &elements[vertex].properties;
    let column = |name: &str| props.iter().position(|p| p == name);
    let (x, y, z) = match (column("x"), column("y"), column("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return Err(parse_err(1, "vertex element lacks x, y, z properties")),
    };
    if props.iter().any(|p| p.starts_with("list:")) {
        return Err(parse_err(1, "list properties on vertices are not supported"));
    }
    let normal_cols = match (column("nx"), column("ny"), column("nz")) {
        (Some(a), Some(b), Some(c)) => Some((a, b, c)),
        _ => None,
    };

    let mut rows = lines.filter(|(_, l)| !l.trim().is_empty());
    for e in &elements[..vertex] {
        for _ in 0..e.count {
            rows.next();
        }
    }

    let declared = elements[vertex].count;
    let mut points = Vec::with_capacity(declared);
    let mut normals = normal_cols.map(|_| Vec::with_capacity(declared));
    let mut values = Vec::with_capacity(props.len());
    for row in 1..=declared {
        let (n, line) = rows.next().ok_or(PlyError::MissingRow { row, declared })?;
        values.clear();
        for t in line.split_whitespace() {
            values.push(
                t.parse::<f64>()
                    .map_err(|_| parse_err(n, format!("vertex row {row}: `{t}` is not a number")))?,
            );
        }
        if values.len() < props.len() {
            return Err(parse_err(
                n,
                format!("vertex row {row}: expected {} values, found {}", props.len(), values.len()),
            ));
        }
        points.push(Vec3::new(values[x], values[y], values[z]));
        if let (Some(out), Some((a, b, c))) = (normals.as_mut(), normal_cols) {
            out.push(Vec3::new(values[a], values[b], values[c]));
        }
    }
    Ok(PointCloud::with_normals(points, normals)?)
}

/// Serializes a cloud as ASCII PLY. Coordinates use the shortest decimal
/// that reads back to the same `f64`.
pub fn to_ply_string(cloud: &PointCloud) -> String {
    let mut out = String::new();
    out.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(out, "comment frame_id {}", cloud.frame_id());
    let _ = writeln!(out, "element vertex {}", cloud.len());
    out.push_str("property double x\nproperty double y\nproperty double z\n");
    if cloud.normals().is_some() {
        out.push_str("property double nx\nproperty double ny\nproperty double nz\n");
    }
    out.push_str("end_header\n");
    for (i, p) in cloud.points().iter().enumerate() {
        let _ = write!(out, "{} {} {}", p.x, p.y, p.z);
        if let Some(normals) = cloud.normals() {
            let n = normals[i];
            let _ = write!(out, " {} {} {}", n.x, n.y, n.z);
        }
        out.push('\n');
    }
    out
}

pub fn save_ply(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<(), PlyError> {
    fs::write(path, to_ply_string(cloud))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const TRIANGLE: &str = "ply\nformat ascii 1.0\ncomment test\nelement vertex 3\n\
        property float x\nproperty float y\nproperty float z\nend_header\n\
        0 0 0\n1 0 0\n0 1 0\n";

    #[test]
    fn reads_three_vertices() {
        let c = parse_ply(TRIANGLE).unwrap();
        assert_eq!(c.len(), 3);
        assert!(c.normals().is_none());
        assert_eq!(c.point(1), Vec3::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn reads_normals_and_ignores_extra_properties() {
        let text = "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\n\
            property float z\nproperty uchar red\nproperty float nx\nproperty float ny\nproperty float nz\n\
            element face 1\nproperty list uchar int vertex_indices\nend_header\n\
            0 0 0 255 0 0 1\n1 2 3 7 0 0 1\n3 0 1 2\n";
        let c = parse_ply(text).unwrap();
        assert_eq!(c.len(), 2);
        let normals = c.normals().unwrap();
        assert!(normals.iter().all(|n| *n == Vec3::new(0.0, 0.0, 1.0)));
        assert_eq!(c.point(1), Vec3::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn skips_elements_declared_before_vertices() {
        let text = "ply\nformat ascii 1.0\nelement camera 1\nproperty float f\n\
            element vertex 1\nproperty double x\nproperty double y\nproperty double z\nend_header\n\
            35.0\n4 5 6\n";
        assert_eq!(parse_ply(text).unwrap().point(0), Vec3::new(4.0, 5.0, 6.0));
    }

    #[test]
    fn missing_row_is_named() {
        let text = "ply\nformat ascii 1.0\nelement vertex 5\nproperty float x\nproperty float y\n\
            property float z\nend_header\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n";
        match parse_ply(text) {
            Err(PlyError::MissingRow { row: 5, declared: 5 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_row_reports_line() {
        let text = TRIANGLE.replace("1 0 0\n", "1 zero 0\n");
        match parse_ply(&text) {
            Err(PlyError::Parse { line: 10, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn binary_is_rejected() {
        let text = TRIANGLE.replace("format ascii 1.0", "format binary_little_endian 1.0");
        assert!(matches!(parse_ply(&text), Err(PlyError::UnsupportedEncoding(e)) if e == "binary_little_endian"));
    }

    #[test]
    fn binary_file_is_rejected_before_utf8_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.ply");
        let mut bytes = b"ply\nformat binary_little_endian 1.0\nelement vertex 1\nproperty float x\n\
            property float y\nproperty float z\nend_header\n"
            .to_vec();
        bytes.extend_from_slice(&[0xff, 0xfe, 0x00, 0x80, 0, 0, 0, 0, 0, 0, 0, 0]);
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(load_ply(&path), Err(PlyError::UnsupportedEncoding(_))));
    }

    #[test]
    fn missing_xyz_is_an_error() {
        let text = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nend_header\n0 0\n";
        assert!(matches!(parse_ply(text), Err(PlyError::Parse { .. })));
    }
}
