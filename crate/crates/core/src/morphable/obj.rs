//! Minimal Wavefront OBJ support: `v x y z` and triangular `f i j k`
//! (1-based, optional `/vt/vn` suffixes are ignored). Grouping, material and
//! texture statements are skipped.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;

use super::Mesh;
use crate::error::{read_to_string, write_string, Error, Result};

const IGNORED: &[&str] = &["vn", "vt", "o", "g", "s", "usemtl", "mtllib", "l"];

pub fn parse_obj(text: &str, origin: &str) -> Result<Mesh> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let mut face_lines = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line_no = ln + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut toks = line.split_whitespace();
        let kw = toks.next().unwrap_or_default();
        let rest: Vec<&str> = toks.collect();
        match kw {
            "v" => {
                // a 4th (w) or colour components may follow; only xyz is read
                if rest.len() < 3 {
                    return Err(Error::parse(origin, line_no, "vertex needs 3 coordinates"));
                }
                let mut c = [0.0; 3];
                for (k, tok) in rest[..3].iter().enumerate() {
                    c[k] = tok
                        .parse()
                        .map_err(|_| Error::parse(origin, line_no, format!("bad coordinate {tok:?}")))?;
                }
                vertices.push(Vector3::new(c[0], c[1], c[2]));
            }
            "f" => {
                if rest.len() != 3 {
                    return Err(Error::parse(
                        origin,
                        line_no,
                        format!("only triangles are supported, got {} corners", rest.len()),
                    ));
                }
                let mut f = [0usize; 3];
                for (k, tok) in rest.iter().enumerate() {
                    let idx = tok.split('/').next().unwrap_or("");
                    let i: usize = idx
                        .parse()
                        .map_err(|_| Error::parse(origin, line_no, format!("bad face index {tok:?}")))?;
                    if i == 0 {
                        return Err(Error::parse(origin, line_no, "face indices are 1-based"));
                    }
                    f[k] = i - 1;
                }
                faces.push(f);
                face_lines.push(line_no);
            }
            k if IGNORED.contains(&k) => {}
            other => {
                return Err(Error::parse(
                    origin,
                    line_no,
                    format!("unsupported statement {other:?}"),
                ));
            }
        }
    }
    for (f, &line_no) in faces.iter().zip(&face_lines) {
        if let Some(&bad) = f.iter().find(|&&i| i >= vertices.len()) {
            return Err(Error::parse(
                origin,
                line_no,
                format!("face index {} out of range ({} vertices)", bad + 1, vertices.len()),
            ));
        }
    }
    Ok(Mesh {
        vertices,
        faces,
        normals: None,
    })
}

pub fn write_obj(mesh: &Mesh) -> String {
    let mut s = String::with_capacity(mesh.vertices.len() * 40 + mesh.faces.len() * 20);
    for v in &mesh.vertices {
        let _ = writeln!(s, "v {} {} {}", v.x, v.y, v.z);
    }
    for f in &mesh.faces {
        let _ = writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    s
}

pub fn load_obj(path: &Path) -> Result<Mesh> {
    parse_obj(&read_to_string(path)?, &path.display().to_string())
}

pub fn save_obj(mesh: &Mesh, path: &Path) -> Result<()> {
    write_string(path, &write_obj(mesh))
}
