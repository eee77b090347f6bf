use std::io::{Read, Write};

use super::tensor::Tensor;
use super::NnError;

pub const VCM_MAGIC: [u8; 4] = *b"VCM1";
pub const VCM_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Named parameter tensors in registration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Panics on a duplicate name; layouts are built by code, not data.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(self.id(&name).is_none(), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn fill(&mut self, value: f64) {
        for t in &mut self.values {
            t.data_mut().fill(value);
        }
    }

    /// Copies values from `other` by name. Every parameter of `self` must be
    /// present in `other` with the same shape, and vice versa.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<(), NnError> {
        if other.len() != self.len() {
            return Err(NnError::Checkpoint(format!(
                "expected {} parameters, found {}",
                self.len(),
                other.len()
            )));
        }
        for (name, dst) in self.names.iter().zip(&mut self.values) {
            let src = other
                .id(name)
                .map(|id| other.get(id))
                .ok_or_else(|| NnError::Checkpoint(format!("missing parameter `{name}`")))?;
            if src.shape() != dst.shape() {
                return Err(NnError::Checkpoint(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    src.shape(),
                    dst.shape()
                )));
            }
            *dst = src.clone();
        }
        Ok(())
    }
}

pub fn write_checkpoint<W: Write>(store: &ParamStore, mut sink: W) -> Result<(), NnError> {
    let mut buf = Vec::with_capacity(12 + store.scalar_count() * 8);
    buf.extend_from_slice(&VCM_MAGIC);
    buf.extend_from_slice(&VCM_VERSION.to_le_bytes());
    buf.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, t) in store.names.iter().zip(&store.values) {
        let len = u16::try_from(name.len())
            .map_err(|_| NnError::Checkpoint(format!("name too long: {name}")))?;
        buf.extend_from_slice(&len.to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(t.rank() as u8);
        for &e in t.shape() {
            buf.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    sink.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        if self.buf.len() - self.pos < n {
            return Err(NnError::Checkpoint(format!(
                "truncated at byte {} (need {n} more)",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn read_checkpoint<R: Read>(mut source: R) -> Result<ParamStore, NnError> {
    let mut buf = Vec::new();
    source.read_to_end(&mut buf)?;
    let mut cur = Cursor { buf: &buf, pos: 0 };
    let magic: [u8; 4] = cur.take(4)?.try_into().unwrap();
    if magic != VCM_MAGIC {
        return Err(NnError::BadMagic(magic));
    }
    let version = cur.u32()?;
    if version != VCM_VERSION {
        return Err(NnError::UnsupportedVersion(version));
    }
    let n = cur.u32()? as usize;
    let mut store = ParamStore::new();
    for _ in 0..n {
        let len = u16::from_le_bytes(cur.take(2)?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(cur.take(len)?)
            .map_err(|_| NnError::Checkpoint("parameter name is not UTF-8".into()))?
            .to_owned();
        if store.id(&name).is_some() {
            return Err(NnError::Checkpoint(format!("duplicate parameter `{name}`")));
        }
        let rank = cur.take(1)?[0] as usize;
        let shape = (0..rank)
            .map(|_| cur.u32().map(|e| e as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let count = shape.iter().product::<usize>();
        let data = cur
            .take(count.checked_mul(8).ok_or_else(|| NnError::Checkpoint("extent overflow".into()))?)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| NnError::Checkpoint(e.to_string()))?;
        store.add(name, t);
    }
    if cur.pos != buf.len() {
        return Err(NnError::Checkpoint(format!(
            "{} trailing bytes",
            buf.len() - cur.pos
        )));
    }
    Ok(store)
}
