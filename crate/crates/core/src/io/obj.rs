use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::mesh::TriMesh;

pub fn load_obj(path: &Path) -> Result<TriMesh> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_obj(&text, path)
}

/// Parses `v` and `f` records of an ASCII OBJ; polygons are fan-triangulated
/// and other records ignored. `path` only labels errors.
pub fn parse_obj(text: &str, path: &Path) -> Result<TriMesh> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut vertices = Vec::new();
    let mut polygons: Vec<(usize, Vec<i64>)> = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        let mut fields = content.split_whitespace();
        match fields.next() {
            Some("v") => {
                let coords: Vec<f64> = fields
                    .map(|f| f.parse::<f64>().map_err(|_| err(line, format!("bad vertex coordinate `{f}`"))))
                    .collect::<Result<_>>()?;
                if !(3..=4).contains(&coords.len()) || coords.iter().any(|c| !c.is_finite()) {
                    return Err(err(line, "vertex needs 3 finite coordinates".into()));
                }
                vertices.push(Vector3::new(coords[0], coords[1], coords[2]));
            }
            Some("f") => {
                let idx: Vec<i64> = fields
                    .map(|f| {
                        let head = f.split('/').next().unwrap_or("");
                        head.parse::<i64>()
                            .ok()
                            .filter(|&i| i != 0)
                            .ok_or_else(|| err(line, format!("bad face index `{f}`")))
                    })
                    .collect::<Result<_>>()?;
                if idx.len() < 3 {
                    return Err(err(line, "face needs at least 3 vertices".into()));
                }
                // negative indices refer to vertices read so far
                let resolved = idx
                    .iter()
                    .map(|&i| if i < 0 { vertices.len() as i64 + i + 1 } else { i })
                    .collect();
                polygons.push((line, resolved));
            }
            _ => {}
        }
    }
    let mut faces = Vec::new();
    for (line, poly) in polygons {
        let idx: Vec<u32> = poly
            .iter()
            .map(|&i| {
                if i >= 1 && i as usize <= vertices.len() {
                    Ok((i - 1) as u32)
                } else {
                    Err(err(line, format!("face index {i} out of range 1..={}", vertices.len())))
                }
            })
            .collect::<Result<_>>()?;
        for k in 1..idx.len() - 1 {
            faces.push([idx[0], idx[k], idx[k + 1]]);
        }
    }
    Ok(TriMesh {
        vertices,
        faces,
        angles: None,
        parts: None,
    })
}
