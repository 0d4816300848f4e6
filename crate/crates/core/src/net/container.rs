//! Binary tensor container: `ZPHW`, u16 version, u16-prefixed tag, u32
//! tensor count, then per tensor a u16-prefixed name, u8 rank, u32 extents
//! and little-endian f32 values.

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"ZPHW";
pub const CONTAINER_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Container(format!(
                "shape {shape:?} holds {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub tag: String,
    pub tensors: Vec<(String, Tensor)>,
}

impl Container {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

pub fn write_container(c: &Container) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
    let tag = c.tag.as_bytes();
    let tag_len: u16 = tag
        .len()
        .try_into()
        .map_err(|_| Error::Container("tag longer than 65535 bytes".into()))?;
    out.extend_from_slice(&tag_len.to_le_bytes());
    out.extend_from_slice(tag);
    out.extend_from_slice(&(c.tensors.len() as u32).to_le_bytes());
    let mut seen = std::collections::HashSet::new();
    for (name, t) in &c.tensors {
        if !seen.insert(name.as_str()) {
            return Err(Error::Container(format!("duplicate tensor `{name}`")));
        }
        let n = name.as_bytes();
        let n_len: u16 = n
            .len()
            .try_into()
            .map_err(|_| Error::Container(format!("tensor name `{name}` too long")))?;
        if t.shape.len() > u8::MAX as usize || t.shape.iter().product::<usize>() != t.data.len() {
            return Err(Error::Container(format!("tensor `{name}` has an inconsistent shape")));
        }
        out.extend_from_slice(&n_len.to_le_bytes());
        out.extend_from_slice(n);
        out.push(t.shape.len() as u8);
        for &d in &t.shape {
            let d: u32 = d
                .try_into()
                .map_err(|_| Error::Container(format!("tensor `{name}` extent too large")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &dyn Fn() -> String) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Container(format!(
                "truncated at byte {} while reading {}",
                self.bytes.len(),
                what()
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &dyn Fn() -> String) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &dyn Fn() -> String) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn read_container(bytes: &[u8]) -> Result<Container> {
    let mut r = Reader { bytes, pos: 0 };
    let header = || "header".to_string();
    if r.take(4, &header)? != MAGIC {
        return Err(Error::Container("bad magic, expected `ZPHW`".into()));
    }
    let version = r.u16(&header)?;
    if version != CONTAINER_VERSION {
        return Err(Error::Container(format!(
            "unsupported version {version}, expected {CONTAINER_VERSION}"
        )));
    }
    let tag_len = r.u16(&header)? as usize;
    let tag = std::str::from_utf8(r.take(tag_len, &header)?)
        .map_err(|_| Error::Container("tag is not utf-8".into()))?
        .to_string();
    let count = r.u32(&header)? as usize;
    let mut tensors = Vec::with_capacity(count.min(4096));
    for i in 0..count {
        let idx = || format!("tensor #{i}");
        let n_len = r.u16(&idx)? as usize;
        let name = std::str::from_utf8(r.take(n_len, &idx)?)
            .map_err(|_| Error::Container(format!("tensor #{i} name is not utf-8")))?
            .to_string();
        let named = || format!("tensor `{name}`");
        let ndim = r.take(1, &named)?[0] as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32(&named)? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::Container(format!("{} is too large", named())))?, &named)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if tensors.iter().any(|(m, _): &(String, Tensor)| *m == name) {
            return Err(Error::Container(format!("duplicate tensor `{name}`")));
        }
        tensors.push((name, Tensor { shape, data }));
    }
    if r.pos != bytes.len() {
        return Err(Error::Container(format!(
            "{} trailing bytes after the last tensor",
            bytes.len() - r.pos
        )));
    }
    Ok(Container { tag, tensors })
}
