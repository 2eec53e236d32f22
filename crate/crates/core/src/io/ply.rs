use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::labelgen::{Point, PointCloud, TriangleMesh};

fn header(vertices: usize, faces: Option<usize>) -> String {
    let mut h = format!(
        "ply\nformat ascii 1.0\nelement vertex {vertices}\nproperty double x\nproperty double y\nproperty double z\n"
    );
    if let Some(f) = faces {
        let _ = write!(h, "element face {f}\nproperty list uchar int vertex_indices\n");
    }
    h.push_str("end_header\n");
    h
}

fn push_points(out: &mut String, points: &[Point]) {
    for p in points {
        let _ = writeln!(out, "{} {} {}", p.x, p.y, p.z);
    }
}

pub fn write_mesh_ply(mesh: &TriangleMesh, path: &Path) -> Result<()> {
    let mut out = header(mesh.vertices.len(), Some(mesh.triangles.len()));
    push_points(&mut out, &mesh.vertices);
    for [a, b, c] in &mesh.triangles {
        let _ = writeln!(out, "3 {a} {b} {c}");
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn write_points_ply(cloud: &PointCloud, path: &Path) -> Result<()> {
    let mut out = header(cloud.len(), None);
    push_points(&mut out, &cloud.points);
    fs::write(path, out)?;
    Ok(())
}

struct Ply {
    vertices: Vec<Point>,
    faces: Vec<Vec<usize>>,
}

fn parse(path: &Path) -> Result<Ply> {
    let text = fs::read_to_string(path)?;
    let bad = |what: String| Error::Parse(format!("{}: {what}", path.display()));
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(bad("missing ply magic".into()));
    }
    // (name, count, property names) per element, in file order
    let mut elements: Vec<(String, usize, Vec<String>)> = Vec::new();
    loop {
        let line = lines.next().ok_or_else(|| bad("missing end_header".into()))?.trim();
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            ["end_header"] => break,
            ["format", "ascii", _] => {}
            ["format", f, ..] => return Err(bad(format!("unsupported format {f}"))),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, n] => {
                let n = n.parse().map_err(|_| bad(format!("element count {n}")))?;
                elements.push((name.to_string(), n, Vec::new()));
            }
            ["property", .., name] => elements
                .last_mut()
                .ok_or_else(|| bad("property before element".into()))?
                .2
                .push(name.to_string()),
            _ => return Err(bad(format!("unexpected header line {line:?}"))),
        }
    }
    let mut ply = Ply {
        vertices: Vec::new(),
        faces: Vec::new(),
    };
    for (name, n, props) in &elements {
        for _ in 0..*n {
            let line = lines.next().ok_or_else(|| bad(format!("truncated {name} data")))?;
            let tok: Vec<&str> = line.split_whitespace().collect();
            match name.as_str() {
                "vertex" => {
                    let coord = |axis: &str| -> Result<f64> {
                        let i = props.iter().position(|p| p == axis).ok_or_else(|| bad(format!("no {axis} property")))?;
                        tok.get(i)
                            .and_then(|t| t.parse().ok())
                            .ok_or_else(|| bad(format!("bad vertex line {line:?}")))
                    };
                    ply.vertices.push(Point::new(coord("x")?, coord("y")?, coord("z")?));
                }
                "face" => {
                    let idx: Vec<usize> = tok
                        .iter()
                        .map(|t| t.parse().map_err(|_| bad(format!("bad face line {line:?}"))))
                        .collect::<Result<_>>()?;
                    match idx.split_first() {
                        Some((&k, rest)) if rest.len() == k => ply.faces.push(rest.to_vec()),
                        _ => return Err(bad(format!("bad face line {line:?}"))),
                    }
                }
                _ => {}
            }
        }
    }
    Ok(ply)
}

pub fn read_points_ply(path: &Path) -> Result<PointCloud> {
    Ok(PointCloud::new(parse(path)?.vertices))
}

/// Polygons with more than three corners are fanned into triangles.
pub fn read_mesh_ply(path: &Path) -> Result<TriangleMesh> {
    let ply = parse(path)?;
    let mut tris = Vec::new();
    for f in &ply.faces {
        if f.len() < 3 {
            return Err(Error::Parse(format!("{}: face with {} corners", path.display(), f.len())));
        }
        for i in 1..f.len() - 1 {
            tris.push([f[0], f[i], f[i + 1]]);
        }
    }
    TriangleMesh::new(ply.vertices, tris)
}
