//! Plain-text morphable basis and coefficient files.
//!
//! Basis grammar (blank lines and `#` comments ignored):
//!
//! ```text
//! basis <N> <P>
//! mean
//! <N lines: x y z>
//! column 0
//! <N lines: x y z>
//! ...
//! column <P-1>
//! <N lines: x y z>
//! faces <F>
//! <F lines: i j k, 0-based>
//! landmarks
//! <68 vertex indices, any whitespace layout>
//! ```
//!
//! The `faces` and `landmarks` sections are optional. Coefficient files hold
//! one value per line.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::{parse_numbers, CoeffRole, MorphableBasis, ShapeCoefficients};
use crate::error::{read_to_string, write_string, Error, Result};

#[derive(PartialEq)]
enum Section {
    Header,
    Mean,
    Column(usize),
    Faces,
    Landmarks,
}

pub fn parse_basis(text: &str, origin: &str) -> Result<MorphableBasis> {
    let mut dims: Option<(usize, usize)> = None;
    let mut section = Section::Header;
    let mut mean = Vec::new();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut faces = Vec::new();
    let mut landmarks: Option<Vec<usize>> = None;

    for (ln, raw) in text.lines().enumerate() {
        let line_no = ln + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        let bad = |msg: String| Error::parse(origin, line_no, msg);
        match toks[0] {
            "basis" => {
                if toks.len() != 3 || dims.is_some() {
                    return Err(bad("expected a single `basis <N> <P>` header".into()));
                }
                let n = toks[1].parse().map_err(|_| bad("bad vertex count".into()))?;
                let p = toks[2].parse().map_err(|_| bad("bad coefficient count".into()))?;
                dims = Some((n, p));
                columns = vec![Vec::new(); p];
                continue;
            }
            "mean" => {
                section = Section::Mean;
                continue;
            }
            "column" => {
                let k: usize = toks
                    .get(1)
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| bad("column needs an index".into()))?;
                if k >= columns.len() {
                    return Err(bad(format!("column {k} beyond declared count {}", columns.len())));
                }
                section = Section::Column(k);
                continue;
            }
            "faces" => {
                section = Section::Faces;
                continue;
            }
            "landmarks" => {
                section = Section::Landmarks;
                landmarks = Some(Vec::new());
                continue;
            }
            _ => {}
        }
        if dims.is_none() {
            return Err(bad("data before `basis` header".into()));
        }
        match section {
            Section::Header => return Err(bad("data outside any section".into())),
            Section::Mean | Section::Column(_) => {
                if toks.len() != 3 {
                    return Err(bad(format!("expected `x y z`, got {} values", toks.len())));
                }
                let target = match section {
                    Section::Mean => &mut mean,
                    Section::Column(k) => &mut columns[k],
                    _ => unreachable!(),
                };
                for t in toks {
                    target.push(t.parse().map_err(|_| bad(format!("not a number: {t:?}")))?);
                }
            }
            Section::Faces => {
                if toks.len() != 3 {
                    return Err(bad("face needs 3 indices".into()));
                }
                let mut f = [0usize; 3];
                for (k, t) in toks.iter().enumerate() {
                    f[k] = t.parse().map_err(|_| bad(format!("bad face index {t:?}")))?;
                }
                faces.push(f);
            }
            Section::Landmarks => {
                let lms = landmarks.as_mut().expect("landmark section open");
                for t in toks {
                    lms.push(t.parse().map_err(|_| bad(format!("bad landmark index {t:?}")))?);
                }
            }
        }
    }

    let (n, p) = dims.ok_or_else(|| Error::parse(origin, 0, "missing `basis` header"))?;
    if mean.len() != 3 * n {
        return Err(Error::parse(
            origin,
            0,
            format!("mean has {} values, expected {}", mean.len(), 3 * n),
        ));
    }
    for (k, c) in columns.iter().enumerate() {
        if c.len() != 3 * n {
            return Err(Error::parse(
                origin,
                0,
                format!("column {k} has {} values, expected {}", c.len(), 3 * n),
            ));
        }
    }
    let basis = DMatrix::from_fn(3 * n, p, |r, c| columns[c][r]);
    MorphableBasis::new(DVector::from_vec(mean), basis, faces, landmarks)
}

pub fn write_basis(b: &MorphableBasis) -> String {
    let n = b.vertex_count();
    let mut s = String::new();
    let _ = writeln!(s, "basis {} {}", n, b.coeff_count());
    let write_block = |s: &mut String, data: &[f64]| {
        for c in data.chunks_exact(3) {
            let _ = writeln!(s, "{} {} {}", c[0], c[1], c[2]);
        }
    };
    s.push_str("mean\n");
    write_block(&mut s, b.mean_shape().as_slice());
    for k in 0..b.coeff_count() {
        let _ = writeln!(s, "column {k}");
        let col: Vec<f64> = b.basis().column(k).iter().copied().collect();
        write_block(&mut s, &col);
    }
    if !b.faces().is_empty() {
        let _ = writeln!(s, "faces {}", b.faces().len());
        for f in b.faces() {
            let _ = writeln!(s, "{} {} {}", f[0], f[1], f[2]);
        }
    }
    if let Some(lms) = b.landmark_indices() {
        s.push_str("landmarks\n");
        for chunk in lms.chunks(17) {
            let line: Vec<String> = chunk.iter().map(|i| i.to_string()).collect();
            s.push_str(&line.join(" "));
            s.push('\n');
        }
    }
    s
}

pub fn load_basis(path: &Path) -> Result<MorphableBasis> {
    parse_basis(&read_to_string(path)?, &path.display().to_string())
}

pub fn save_basis(b: &MorphableBasis, path: &Path) -> Result<()> {
    write_string(path, &write_basis(b))
}

pub fn load_coefficients(path: &Path, role: CoeffRole) -> Result<ShapeCoefficients> {
    let text = read_to_string(path)?;
    let values = parse_numbers(&text, &path.display().to_string())?;
    Ok(ShapeCoefficients::new(DVector::from_vec(values), role))
}

pub fn save_coefficients(c: &ShapeCoefficients, path: &Path) -> Result<()> {
    let mut s = String::new();
    for v in c.values.iter() {
        let _ = writeln!(s, "{v}");
    }
    write_string(path, &s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::morphable::synthetic::SyntheticFace;

    #[test]
    fn synthetic_basis_roundtrip_is_exact() {
        let b = SyntheticFace {
            cols: 15,
            rows: 17,
            coeff_count: 4,
            ..Default::default()
        }
        .build()
        .unwrap()
        .basis;
        let back = parse_basis(&write_basis(&b), "b.txt").unwrap();
        assert_eq!(back, b);
    }

    #[test]
    fn tiny_basis_without_optional_sections() {
        let text = "# two vertices\nbasis 2 1\nmean\n0 0 0\n1 0 0\ncolumn 0\n1 0 0\n0 1 0\n";
        let b = parse_basis(text, "t").unwrap();
        assert_eq!(b.vertex_count(), 2);
        assert_eq!(b.coeff_count(), 1);
        assert!(b.landmark_indices().is_none());
    }

    #[test]
    fn truncated_data_is_reported() {
        let err = parse_basis("basis 2 1\nmean\n0 0 0\ncolumn 0\n1 0 0\n0 1 0\n", "t").unwrap_err();
        assert!(err.to_string().contains("mean"), "{err}");
        let err = parse_basis("basis 1 1\nmean\n0 0\n", "t").unwrap_err();
        assert!(err.to_string().contains("t:3"), "{err}");
    }

    #[test]
    fn coefficients_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.txt");
        let c = ShapeCoefficients::new(DVector::from_vec(vec![0.1, -2.5, 3e-9]), CoeffRole::GroundTruth);
        save_coefficients(&c, &p).unwrap();
        assert_eq!(load_coefficients(&p, CoeffRole::GroundTruth).unwrap(), c);
    }
}
