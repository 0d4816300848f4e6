//! Wavefront OBJ reader: `v` (optionally with RGB), `vn`, triangular `f`.

use crate::error::{Error, Result};
use crate::geom::Vec3;

use super::RawMesh;

fn parse_floats(toks: &[&str], line: usize) -> Result<Vec<f64>> {
    toks.iter()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::parse(format!("line {line}"), format!("`{t}` is not a number")))
        })
        .collect()
}

fn resolve(idx: &str, count: usize, line: usize) -> Result<usize> {
    let i: i64 = idx
        .parse()
        .map_err(|_| Error::parse(format!("line {line}"), format!("bad index `{idx}`")))?;
    let resolved = if i > 0 { i - 1 } else { count as i64 + i };
    if i == 0 || resolved < 0 || resolved as usize >= count {
        return Err(Error::parse(format!("line {line}"), format!("index {i} out of range")));
    }
    Ok(resolved as usize)
}

pub(super) fn read_obj(bytes: &[u8]) -> Result<RawMesh> {
    let text = std::str::from_utf8(bytes).map_err(|_| Error::parse("file", "OBJ is not utf-8"))?;
    let mut mesh = RawMesh::default();
    let mut colors = Vec::new();
    let mut vns: Vec<Vec3> = Vec::new();
    // (vertex, normal) links gathered from face corners.
    let mut links: Vec<(usize, usize)> = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line_no = ln + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.first().copied() {
            Some("v") => {
                let vals = parse_floats(&toks[1..], line_no)?;
                match vals.len() {
                    3 | 4 => colors.push(None),
                    6 => colors.push(Some(Vec3::new(vals[3], vals[4], vals[5]))),
                    n => {
                        return Err(Error::parse(
                            format!("line {line_no}"),
                            format!("vertex with {n} values"),
                        ))
                    }
                }
                mesh.vertices.push(Vec3::new(vals[0], vals[1], vals[2]));
            }
            Some("vn") => {
                let vals = parse_floats(&toks[1..], line_no)?;
                if vals.len() != 3 {
                    return Err(Error::parse(format!("line {line_no}"), "normal needs 3 values"));
                }
                vns.push(Vec3::new(vals[0], vals[1], vals[2]));
            }
            Some("f") => {
                if toks.len() != 4 {
                    return Err(Error::parse(
                        format!("line {line_no}"),
                        format!("only triangular faces are supported, got {} corners", toks.len() - 1),
                    ));
                }
                let mut face = [0usize; 3];
                for (k, corner) in toks[1..].iter().enumerate() {
                    let parts: Vec<&str> = corner.split('/').collect();
                    face[k] = resolve(parts[0], mesh.vertices.len(), line_no)?;
                    if let Some(n) = parts.get(2).filter(|s| !s.is_empty()) {
                        links.push((face[k], resolve(n, vns.len(), line_no)?));
                    }
                }
                mesh.faces.push(face);
            }
            _ => {}
        }
    }
    if colors.iter().any(Option::is_some) {
        mesh.colors = colors
            .into_iter()
            .map(|c| c.unwrap_or(Vec3::repeat(0.5)))
            .collect();
    }
    if !links.is_empty() {
        let mut acc = vec![Vec3::zeros(); mesh.vertices.len()];
        for (v, n) in links {
            acc[v] += vns[n];
        }
        // Vertices without a linked normal get zeros and are filled in later.
        mesh.normals = acc;
    }
    Ok(mesh)
}
