//! Checkpoint container.
//!
//! ```text
//! "WRSN" | version: u32 | config_len: u64 | config text (UTF-8)
//! entry_count: u32
//! per entry: name_len: u32 | name | kind: u8 | ndim: u8 | dims: u64 * ndim | offset: u64 | len: u64
//! data section: raw little-endian payloads, offsets relative to its start
//! ```
//!
//! All integers are little-endian.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::layers::{Layer, Param, StateVisitor};
use crate::residual::{Network, ResidualWeight};
use crate::tensor::{DType, Element, Rng, RngState, Tensor};

pub const MAGIC: &[u8; 4] = b"WRSN";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EntryKind {
    F32,
    F64,
    Bytes,
}

impl EntryKind {
    fn code(self) -> u8 {
        match self {
            EntryKind::F32 => 0,
            EntryKind::F64 => 1,
            EntryKind::Bytes => 2,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(EntryKind::F32),
            1 => Ok(EntryKind::F64),
            2 => Ok(EntryKind::Bytes),
            _ => Err(Error::Checkpoint(format!("unknown entry kind {code}"))),
        }
    }

    fn size(self) -> usize {
        match self {
            EntryKind::F32 => 4,
            EntryKind::F64 => 8,
            EntryKind::Bytes => 1,
        }
    }

    fn of(dtype: DType) -> Self {
        match dtype {
            DType::F32 => EntryKind::F32,
            DType::F64 => EntryKind::F64,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub name: String,
    pub kind: EntryKind,
    pub shape: Vec<usize>,
    pub bytes: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Checkpoint {
    pub config_text: String,
    pub entries: Vec<Entry>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Checkpoint("length overflow".into()))
    }
}

impl Checkpoint {
    pub fn new(config_text: impl Into<String>) -> Self {
        Checkpoint {
            config_text: config_text.into(),
            entries: Vec::new(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.config_text.len() as u64).to_le_bytes());
        out.extend_from_slice(self.config_text.as_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        let mut offset = 0u64;
        for e in &self.entries {
            out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.push(e.kind.code());
            out.push(e.shape.len() as u8);
            for &d in &e.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            out.extend_from_slice(&offset.to_le_bytes());
            out.extend_from_slice(&(e.bytes.len() as u64).to_le_bytes());
            offset += e.bytes.len() as u64;
        }
        for e in &self.entries {
            out.extend_from_slice(&e.bytes);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("bad magic bytes".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {version}, expected {VERSION}"
            )));
        }
        let config_len = r.len()?;
        let config_text = String::from_utf8(r.take(config_len)?.to_vec())
            .map_err(|_| Error::Checkpoint("config text is not UTF-8".into()))?;
        let count = r.u32()? as usize;
        let mut manifest = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::Checkpoint("entry name is not UTF-8".into()))?;
            let kind = EntryKind::from_code(r.u8()?)?;
            let ndim = r.u8()? as usize;
            let shape = (0..ndim).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
            let offset = r.len()?;
            let len = r.len()?;
            let expected = shape.iter().product::<usize>() * kind.size();
            if len != expected {
                return Err(Error::Checkpoint(format!(
                    "entry {name}: {len} bytes for shape {shape:?}, expected {expected}"
                )));
            }
            manifest.push((name, kind, shape, offset, len));
        }
        let data = &bytes[r.pos..];
        let entries = manifest
            .into_iter()
            .map(|(name, kind, shape, offset, len)| {
                let payload = offset
                    .checked_add(len)
                    .and_then(|end| data.get(offset..end))
                    .ok_or_else(|| Error::Checkpoint(format!("entry {name} lies outside the file")))?;
                Ok(Entry {
                    name,
                    kind,
                    shape,
                    bytes: payload.to_vec(),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Checkpoint {
            config_text,
            entries,
        })
    }

    /// Writes through a temporary file so a failed write leaves no partial checkpoint.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes())?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::MissingFile {
                path: path.to_path_buf(),
            });
        }
        Self::from_bytes(&fs::read(path)?)
    }

    pub fn get(&self, name: &str) -> Result<&Entry> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("missing entry {name}")))
    }

    pub fn push_tensor<T: Element>(&mut self, name: &str, t: &Tensor<T>) {
        let mut bytes = Vec::new();
        T::write_le(t.data(), &mut bytes);
        self.entries.push(Entry {
            name: name.to_string(),
            kind: EntryKind::of(T::DTYPE),
            shape: t.shape().to_vec(),
            bytes,
        });
    }

    pub fn tensor<T: Element>(&self, name: &str) -> Result<Tensor<T>> {
        let e = self.get(name)?;
        if e.kind != EntryKind::of(T::DTYPE) {
            return Err(Error::Checkpoint(format!(
                "entry {name} is {:?}, expected {}",
                e.kind,
                T::DTYPE.name()
            )));
        }
        Tensor::from_vec(&e.shape, T::read_le(&e.bytes))
    }

    pub fn push_f64s(&mut self, name: &str, values: &[f64]) {
        let mut bytes = Vec::new();
        f64::write_le(values, &mut bytes);
        self.entries.push(Entry {
            name: name.to_string(),
            kind: EntryKind::F64,
            shape: vec![values.len()],
            bytes,
        });
    }

    pub fn f64s(&self, name: &str) -> Result<Vec<f64>> {
        let e = self.get(name)?;
        if e.kind != EntryKind::F64 || e.shape.len() != 1 {
            return Err(Error::Checkpoint(format!("entry {name} is not an f64 vector")));
        }
        Ok(f64::read_le(&e.bytes))
    }

    pub fn push_bytes(&mut self, name: &str, bytes: Vec<u8>) {
        self.entries.push(Entry {
            name: name.to_string(),
            kind: EntryKind::Bytes,
            shape: vec![bytes.len()],
            bytes,
        });
    }

    pub fn bytes(&self, name: &str) -> Result<&[u8]> {
        let e = self.get(name)?;
        if e.kind != EntryKind::Bytes {
            return Err(Error::Checkpoint(format!("entry {name} is not raw bytes")));
        }
        Ok(&e.bytes)
    }

    pub fn push_u64(&mut self, name: &str, v: u64) {
        self.push_bytes(name, v.to_le_bytes().to_vec());
    }

    pub fn u64(&self, name: &str) -> Result<u64> {
        let b = self.bytes(name)?;
        b.try_into()
            .map(u64::from_le_bytes)
            .map_err(|_| Error::Checkpoint(format!("entry {name} is not a u64")))
    }

    /// Appends every parameter, velocity, running statistic, residual weight and RNG state of `net`.
    pub fn capture<T: Element>(&mut self, net: &mut Network<T>) {
        struct Capture<'a>(&'a mut Checkpoint);
        impl<T: Element> StateVisitor<T> for Capture<'_> {
            fn param(&mut self, name: &str, p: &mut Param<T>) {
                self.0.push_tensor(&format!("{name}.value"), &p.value);
                self.0.push_tensor(&format!("{name}.velocity"), &p.velocity);
            }
            fn buffer(&mut self, name: &str, b: &mut Tensor<T>) {
                self.0.push_tensor(name, b);
            }
            fn rng(&mut self, name: &str, rng: &mut Rng) {
                self.0.push_bytes(name, rng.state().to_bytes());
            }
            fn residual_weight(&mut self, name: &str, w: &mut ResidualWeight) {
                self.0.push_f64s(name, &[w.value, w.velocity]);
            }
        }
        net.visit("", &mut Capture(self));
    }

    /// Overwrites the state of `net` with the matching entries; every piece of state must be present.
    pub fn restore<T: Element>(&self, net: &mut Network<T>) -> Result<()> {
        struct Restore<'a> {
            ckpt: &'a Checkpoint,
            error: Option<Error>,
        }
        impl Restore<'_> {
            fn load<T: Element>(&mut self, name: &str, into: &mut Tensor<T>) {
                if self.error.is_some() {
                    return;
                }
                match self.ckpt.tensor::<T>(name) {
                    Ok(t) if t.shape() == into.shape() => *into = t,
                    Ok(t) => {
                        self.error = Some(Error::Checkpoint(format!(
                            "entry {name} has shape {:?}, network expects {:?}",
                            t.shape(),
                            into.shape()
                        )))
                    }
                    Err(e) => self.error = Some(e),
                }
            }
        }
        impl<T: Element> StateVisitor<T> for Restore<'_> {
            fn param(&mut self, name: &str, p: &mut Param<T>) {
                self.load(&format!("{name}.value"), &mut p.value);
                self.load(&format!("{name}.velocity"), &mut p.velocity);
            }
            fn buffer(&mut self, name: &str, b: &mut Tensor<T>) {
                self.load(name, b);
            }
            fn rng(&mut self, name: &str, rng: &mut Rng) {
                if self.error.is_some() {
                    return;
                }
                match self.ckpt.bytes(name).map(RngState::from_bytes) {
                    Ok(Some(state)) => *rng = Rng::from_state(state),
                    Ok(None) => self.error = Some(Error::Checkpoint(format!("entry {name} is not an RNG state"))),
                    Err(e) => self.error = Some(e),
                }
            }
            fn residual_weight(&mut self, name: &str, w: &mut ResidualWeight) {
                if self.error.is_some() {
                    return;
                }
                match self.ckpt.f64s(name) {
                    Ok(v) if v.len() == 2 => {
                        w.value = v[0];
                        w.velocity = v[1];
                    }
                    Ok(_) => self.error = Some(Error::Checkpoint(format!("entry {name} needs value and velocity"))),
                    Err(e) => self.error = Some(e),
                }
            }
        }
        let mut r = Restore {
            ckpt: self,
            error: None,
        };
        net.visit("", &mut r);
        match r.error {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }
}
