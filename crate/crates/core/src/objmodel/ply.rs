//! PLY reader (ascii and binary little-endian) and binary writer.

use crate::error::{Error, Result};
use crate::geom::Vec3;

use super::RawMesh;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn is_integer(self) -> bool {
        !matches!(self, Scalar::F32 | Scalar::F64)
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar(Scalar, String),
    List(Scalar, Scalar, String),
}

impl Property {
    fn name(&self) -> &str {
        match self {
            Property::Scalar(_, n) | Property::List(_, _, n) => n,
        }
    }
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Format {
    Ascii,
    BinaryLe,
}

struct Header {
    format: Format,
    elements: Vec<Element>,
    body_offset: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let mut offset = 0;
    let mut line_no = 0;
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let rest = &bytes[offset..];
        let Some(end) = rest.iter().position(|&b| b == b'\n') else {
            return Err(Error::parse(
                format!("byte {}", bytes.len()),
                "header ended before `end_header`",
            ));
        };
        line_no += 1;
        let line = std::str::from_utf8(&rest[..end])
            .map_err(|_| Error::parse(format!("line {line_no}"), "header is not utf-8"))?
            .trim();
        offset += end + 1;
        let loc = || format!("line {line_no}");
        let toks: Vec<&str> = line.split_whitespace().collect();
        if line_no == 1 {
            if line != "ply" {
                return Err(Error::parse(loc(), "missing `ply` magic"));
            }
            continue;
        }
        match toks.first().copied() {
            None | Some("comment") | Some("obj_info") => {}
            Some("format") => {
                format = Some(match toks.get(1).copied() {
                    Some("ascii") => Format::Ascii,
                    Some("binary_little_endian") => Format::BinaryLe,
                    other => {
                        return Err(Error::parse(loc(), format!("unsupported format {other:?}")))
                    }
                });
            }
            Some("element") => {
                if toks.len() != 3 {
                    return Err(Error::parse(loc(), "malformed element line"));
                }
                let count = toks[2]
                    .parse()
                    .map_err(|_| Error::parse(loc(), "bad element count"))?;
                elements.push(Element {
                    name: toks[1].to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| Error::parse(loc(), "property before any element"))?;
                let prop = if toks.get(1) == Some(&"list") {
                    if toks.len() != 5 {
                        return Err(Error::parse(loc(), "malformed list property"));
                    }
                    let c = Scalar::parse(toks[2]).ok_or_else(|| Error::parse(loc(), "bad type"))?;
                    let i = Scalar::parse(toks[3]).ok_or_else(|| Error::parse(loc(), "bad type"))?;
                    if !c.is_integer() {
                        return Err(Error::parse(loc(), "list count must be an integer type"));
                    }
                    Property::List(c, i, toks[4].to_string())
                } else {
                    if toks.len() != 3 {
                        return Err(Error::parse(loc(), "malformed property"));
                    }
                    let t = Scalar::parse(toks[1]).ok_or_else(|| Error::parse(loc(), "bad type"))?;
                    Property::Scalar(t, toks[2].to_string())
                };
                el.properties.push(prop);
            }
            Some("end_header") => break,
            Some(other) => return Err(Error::parse(loc(), format!("unknown keyword `{other}`"))),
        }
    }
    let format = format.ok_or_else(|| Error::parse("header", "missing format line"))?;
    Ok(Header {
        format,
        elements,
        body_offset: offset,
    })
}

trait ValueSource {
    fn next(&mut self, ty: Scalar, what: &dyn Fn() -> String) -> Result<f64>;
}

struct BinarySource<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl ValueSource for BinarySource<'_> {
    fn next(&mut self, ty: Scalar, what: &dyn Fn() -> String) -> Result<f64> {
        let n = ty.size();
        if self.offset + n > self.bytes.len() {
            return Err(Error::parse(
                format!("byte {}", self.offset),
                format!("unexpected end of data reading {}", what()),
            ));
        }
        let b = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(match ty {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes(b.try_into().unwrap()),
        })
    }
}

struct AsciiSource<'a> {
    text: &'a str,
    pos: usize,
    line: usize,
}

impl ValueSource for AsciiSource<'_> {
    fn next(&mut self, _ty: Scalar, what: &dyn Fn() -> String) -> Result<f64> {
        let bytes = self.text.as_bytes();
        while self.pos < bytes.len() && bytes[self.pos].is_ascii_whitespace() {
            if bytes[self.pos] == b'\n' {
                self.line += 1;
            }
            self.pos += 1;
        }
        let start = self.pos;
        while self.pos < bytes.len() && !bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::parse(
                format!("line {}", self.line),
                format!("unexpected end of data reading {}", what()),
            ));
        }
        self.text[start..self.pos].parse::<f64>().map_err(|_| {
            Error::parse(
                format!("line {}", self.line),
                format!("`{}` is not a number ({})", &self.text[start..self.pos], what()),
            )
        })
    }
}

pub(super) fn read_ply(bytes: &[u8]) -> Result<RawMesh> {
    let header = parse_header(bytes)?;
    let body = &bytes[header.body_offset..];
    match header.format {
        Format::BinaryLe => {
            let mut src = BinarySource {
                bytes,
                offset: header.body_offset,
            };
            read_body(&header, &mut src)
        }
        Format::Ascii => {
            let text = std::str::from_utf8(body)
                .map_err(|_| Error::parse("body", "ascii body is not utf-8"))?;
            let header_lines = bytes[..header.body_offset].iter().filter(|&&b| b == b'\n').count();
            let mut src = AsciiSource {
                text,
                pos: 0,
                line: header_lines + 1,
            };
            read_body(&header, &mut src)
        }
    }
}

fn read_body(header: &Header, src: &mut dyn ValueSource) -> Result<RawMesh> {
    let mut mesh = RawMesh::default();
    for el in &header.elements {
        let is_vertex = el.name == "vertex";
        let is_face = el.name == "face";
        if is_vertex {
            for axis in ["x", "y", "z"] {
                if !el.properties.iter().any(|p| p.name() == axis) {
                    return Err(Error::parse("header", format!("vertex element lacks `{axis}`")));
                }
            }
        }
        let has_normals = ["nx", "ny", "nz"]
            .iter()
            .all(|n| el.properties.iter().any(|p| p.name() == *n));
        let has_colors = ["red", "green", "blue"]
            .iter()
            .all(|n| el.properties.iter().any(|p| p.name() == *n));
        for row in 0..el.count {
            let mut pos = [0.0; 3];
            let mut nrm = [0.0; 3];
            let mut rgb = [0.0; 3];
            let mut face: Vec<usize> = Vec::new();
            for prop in &el.properties {
                let what = || format!("element `{}` #{} property `{}`", el.name, row, prop.name());
                match prop {
                    Property::Scalar(ty, name) => {
                        let v = src.next(*ty, &what)?;
                        if is_vertex {
                            let color = if ty.is_integer() { v / 255.0 } else { v };
                            match name.as_str() {
                                "x" => pos[0] = v,
                                "y" => pos[1] = v,
                                "z" => pos[2] = v,
                                "nx" => nrm[0] = v,
                                "ny" => nrm[1] = v,
                                "nz" => nrm[2] = v,
                                "red" => rgb[0] = color,
                                "green" => rgb[1] = color,
                                "blue" => rgb[2] = color,
                                _ => {}
                            }
                        }
                    }
                    Property::List(cty, ity, name) => {
                        let n = src.next(*cty, &what)?;
                        if n < 0.0 {
                            return Err(Error::parse(what(), "negative list length"));
                        }
                        for _ in 0..n as usize {
                            let v = src.next(*ity, &what)?;
                            if is_face && (name == "vertex_indices" || name == "vertex_index") {
                                if v < 0.0 {
                                    return Err(Error::parse(what(), "negative vertex index"));
                                }
                                face.push(v as usize);
                            }
                        }
                    }
                }
            }
            if is_vertex {
                mesh.vertices.push(Vec3::from(pos));
                if has_normals {
                    mesh.normals.push(Vec3::from(nrm));
                }
                if has_colors {
                    mesh.colors.push(Vec3::from(rgb));
                }
            } else if is_face {
                if face.len() < 3 {
                    return Err(Error::parse(
                        format!("face #{row}"),
                        "face with fewer than three vertices",
                    ));
                }
                // Fan-triangulate polygons.
                for k in 1..face.len() - 1 {
                    mesh.faces.push([face[0], face[k], face[k + 1]]);
                }
            }
        }
    }
    Ok(mesh)
}

/// Binary little-endian PLY with float positions/normals and uchar colors.
pub fn write_ply(
    vertices: &[Vec3],
    normals: &[Vec3],
    colors_rgb: &[Vec3],
    faces: &[[u32; 3]],
) -> Vec<u8> {
    let mut out = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\n\
         property float x\nproperty float y\nproperty float z\n\
         property float nx\nproperty float ny\nproperty float nz\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\n\
         element face {}\nproperty list uchar int vertex_indices\nend_header\n",
        vertices.len(),
        faces.len()
    )
    .into_bytes();
    for i in 0..vertices.len() {
        for v in vertices[i].iter().chain(normals[i].iter()) {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        for c in colors_rgb[i].iter() {
            out.push((c.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    for f in faces {
        out.push(3);
        for &i in f {
            out.extend_from_slice(&(i as i32).to_le_bytes());
        }
    }
    out
}
