//! Minimal triangle-OBJ reading for custom topology builds.

use std::path::Path;

use crate::error::{CliError, Result};

pub fn parse_obj(text: &str, origin: &str) -> Result<(Vec<[f64; 3]>, Vec<[u32; 3]>)> {
    let mut verts = Vec::new();
    let mut faces = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let mut p = [0.0; 3];
                for slot in p.iter_mut() {
                    *slot = it
                        .next()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| {
                            CliError::Validation(format!("{origin}:{}: bad vertex", ln + 1))
                        })?;
                }
                verts.push(p);
            }
            Some("f") => {
                let mut f = [0u32; 3];
                for slot in f.iter_mut() {
                    let tok = it.next().ok_or_else(|| {
                        CliError::Validation(format!("{origin}:{}: triangles only", ln + 1))
                    })?;
                    let idx: u32 = tok
                        .split('/')
                        .next()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| {
                            CliError::Validation(format!("{origin}:{}: bad face", ln + 1))
                        })?;
                    if idx == 0 {
                        return Err(CliError::Validation(format!(
                            "{origin}:{}: OBJ indices are 1-based",
                            ln + 1
                        )));
                    }
                    *slot = idx - 1;
                }
                if it.next().is_some() {
                    return Err(CliError::Validation(format!(
                        "{origin}:{}: non-triangular face",
                        ln + 1
                    )));
                }
                faces.push(f);
            }
            _ => {}
        }
    }
    if let Some(f) = faces
        .iter()
        .find(|f| f.iter().any(|&v| v as usize >= verts.len()))
    {
        return Err(CliError::Validation(format!(
            "{origin}: face {f:?} indexes past the {} vertices",
            verts.len()
        )));
    }
    Ok((verts, faces))
}

pub fn parse_obj_file(path: &Path) -> Result<(Vec<[f64; 3]>, Vec<[u32; 3]>)> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_obj(&text, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_vertices_and_triangles() {
        let (v, f) = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n", "mem").unwrap();
        assert_eq!(v.len(), 3);
        assert_eq!(f, vec![[0, 1, 2]]);
    }

    #[test]
    fn accepts_slash_attributes_and_rejects_quads() {
        let (_, f) = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1/1 2/2 3/3\n", "mem").unwrap();
        assert_eq!(f, vec![[0, 1, 2]]);
        assert!(parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nv 1 1 0\nf 1 2 3 4\n", "mem").is_err());
        assert!(parse_obj("v 0 0 0\nf 1 2 9\n", "mem").is_err());
    }
}
