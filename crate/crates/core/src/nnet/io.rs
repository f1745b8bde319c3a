//! Binary containers.
//!
//! Model file layout (all integers u32 little-endian):
//!
//! ```text
//! "V2SM" | version=1 | input_len | class_count | flags (bit 0: frozen)
//! | layer_count | per layer: name_len, name (UTF-8), op_kind, ndims, dims...
//! | payload: f64 LE values of every layer in descriptor order
//! ```

use std::path::Path;

use super::{ParamSet, Tensor};
use crate::{Error, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"V2SM";
pub const VERSION: u32 = 1;
const FLAG_FROZEN: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum OpKind {
    Conv1d = 1,
    Dense = 2,
    Attention = 3,
    Reprogram = 4,
}

impl OpKind {
    fn from_code(code: u32) -> Result<Self> {
        Ok(match code {
            1 => OpKind::Conv1d,
            2 => OpKind::Dense,
            3 => OpKind::Attention,
            4 => OpKind::Reprogram,
            other => return Err(Error::Corrupt(format!("unknown op kind {other}"))),
        })
    }
}

/// One parameter tensor of the architecture.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerDesc {
    pub name: String,
    pub kind: OpKind,
    pub dims: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchDescriptor {
    pub input_len: u32,
    pub class_count: u32,
    pub frozen: bool,
    pub layers: Vec<LayerDesc>,
}

#[derive(Default)]
pub(crate) struct ByteWriter {
    pub buf: Vec<u8>,
}

impl ByteWriter {
    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.bytes(s.as_bytes());
    }
}

pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Corrupt(format!(
                "truncated: needed {n} bytes at offset {}, file has {}",
                self.pos,
                self.buf.len()
            ))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Corrupt("name is not UTF-8".into()))
    }

    /// Checks magic and version.
    pub fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        let found = self.take(4)?;
        if found != magic {
            return Err(Error::BadMagic {
                expected: String::from_utf8_lossy(magic).into_owned(),
                found: String::from_utf8_lossy(found).into_owned(),
            });
        }
        let version = self.u32()?;
        if version != VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        Ok(())
    }

    pub fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Corrupt(format!(
                "{} trailing bytes after payload",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

pub(crate) fn write_layers(w: &mut ByteWriter, layers: &[LayerDesc]) {
    w.u32(layers.len() as u32);
    for l in layers {
        w.str(&l.name);
        w.u32(l.kind as u32);
        w.u32(l.dims.len() as u32);
        for d in &l.dims {
            w.u32(*d);
        }
    }
}

pub(crate) fn read_layers(r: &mut ByteReader) -> Result<Vec<LayerDesc>> {
    let n = r.u32()? as usize;
    let mut layers = Vec::with_capacity(n.min(1024));
    for _ in 0..n {
        let name = r.str()?;
        let kind = OpKind::from_code(r.u32()?)?;
        let ndims = r.u32()? as usize;
        let dims = (0..ndims).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        layers.push(LayerDesc { name, kind, dims });
    }
    Ok(layers)
}

/// Checks that `params` line up with `layers` name by name and shape by shape.
pub(crate) fn check_alignment(params: &ParamSet, layers: &[LayerDesc]) -> Result<()> {
    if params.len() != layers.len() {
        return Err(Error::Shape(format!(
            "descriptor lists {} layers, parameter set has {}",
            layers.len(),
            params.len()
        )));
    }
    for ((name, t), l) in params.iter().zip(layers) {
        let dims: Vec<u32> = t.shape().iter().map(|&d| d as u32).collect();
        if name != l.name || dims != l.dims {
            return Err(Error::Shape(format!(
                "parameter {name:?} {dims:?} does not match descriptor {:?} {:?}",
                l.name, l.dims
            )));
        }
    }
    Ok(())
}

pub(crate) fn write_payload(w: &mut ByteWriter, params: &ParamSet) {
    for t in params.tensors() {
        for v in t.data() {
            w.f64(*v);
        }
    }
}

pub(crate) fn read_payload(r: &mut ByteReader, layers: &[LayerDesc]) -> Result<ParamSet> {
    let mut params = ParamSet::new();
    for l in layers {
        let shape: Vec<usize> = l.dims.iter().map(|&d| d as usize).collect();
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::Corrupt("layer too large".into()))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        params.push(l.name.clone(), Tensor::new(shape, data)?)?;
    }
    Ok(params)
}

pub fn encode_model(params: &ParamSet, desc: &ArchDescriptor) -> Result<Vec<u8>> {
    check_alignment(params, &desc.layers)?;
    let mut w = ByteWriter::default();
    w.bytes(MODEL_MAGIC);
    w.u32(VERSION);
    w.u32(desc.input_len);
    w.u32(desc.class_count);
    w.u32(if desc.frozen { FLAG_FROZEN } else { 0 });
    write_layers(&mut w, &desc.layers);
    write_payload(&mut w, params);
    Ok(w.buf)
}

pub fn decode_model(bytes: &[u8]) -> Result<(ParamSet, ArchDescriptor)> {
    let mut r = ByteReader::new(bytes);
    r.header(MODEL_MAGIC)?;
    let input_len = r.u32()?;
    let class_count = r.u32()?;
    let flags = r.u32()?;
    let layers = read_layers(&mut r)?;
    let mut params = read_payload(&mut r, &layers)?;
    r.finish()?;
    let frozen = flags & FLAG_FROZEN != 0;
    if frozen {
        params.freeze();
    }
    Ok((
        params,
        ArchDescriptor {
            input_len,
            class_count,
            frozen,
            layers,
        },
    ))
}

pub fn save_model(params: &ParamSet, desc: &ArchDescriptor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_model(params, desc)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<(ParamSet, ArchDescriptor)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes)
}
