//! Binary checkpoint container.
//!
//! ```text
//! "SYMGNN01"
//! u32 length, UTF-8 config JSON
//! u32 record count
//! per record: u8 kind (0 parameter, 1 buffer), u32 name length, name,
//!             u32 ndim, u32 extents..., f32 values...
//! ```
//!
//! All integers and floats are little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::real::Real;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"SYMGNN01";

#[derive(Clone, Debug)]
pub struct Record {
    pub name: String,
    pub trainable: bool,
    pub value: Tensor<f32>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: String,
    pub records: Vec<Record>,
}

impl Checkpoint {
    pub fn from_store<T: Real>(config: String, store: &ParamStore<T>) -> Self {
        let records = store
            .iter()
            .map(|(_, p)| Record {
                name: p.name.clone(),
                trainable: p.trainable,
                value: p.value.cast(),
            })
            .collect();
        Self { config, records }
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        write_u32(w, self.config.len())?;
        w.write_all(self.config.as_bytes())?;
        write_u32(w, self.records.len())?;
        for r in &self.records {
            w.write_all(&[u8::from(!r.trainable)])?;
            write_u32(w, r.name.len())?;
            w.write_all(r.name.as_bytes())?;
            write_u32(w, r.value.ndim())?;
            for &d in r.value.shape() {
                write_u32(w, d)?;
            }
            for v in r.value.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != MAGIC {
            return Err(bad("bad magic"));
        }
        let len = read_u32(r)?;
        let config = String::from_utf8(read_bytes(r, len)?).map_err(|_| bad("config is not UTF-8"))?;
        let count = read_u32(r)?;
        let mut records = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let kind = read_bytes(r, 1)?[0];
            if kind > 1 {
                return Err(bad(&format!("unknown record kind {kind}")));
            }
            let len = read_u32(r)?;
            let name = String::from_utf8(read_bytes(r, len)?).map_err(|_| bad("name is not UTF-8"))?;
            let ndim = read_u32(r)?;
            let shape = (0..ndim).map(|_| read_u32(r)).collect::<Result<Vec<_>>>()?;
            let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| bad("shape overflow"))?;
            let raw = read_bytes(r, n * 4)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let value = Tensor::new(&shape, data).map_err(|e| bad(&format!("record `{name}`: {e}")))?;
            records.push(Record { name, trainable: kind == 0, value });
        }
        Ok(Self { config, records })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }

    /// Copies every record into the same-named entry of `store`. The record
    /// set must match the store exactly.
    pub fn restore_into<T: Real>(&self, store: &mut ParamStore<T>) -> Result<()> {
        if self.records.len() != store.len() {
            return Err(bad(&format!(
                "{} records for a model with {} tensors",
                self.records.len(),
                store.len()
            )));
        }
        for r in &self.records {
            let id = store.id(&r.name).ok_or_else(|| Error::UnknownParameter(r.name.clone()))?;
            let dst = store.value_mut(id);
            if dst.shape() != r.value.shape() {
                return Err(Error::shapes("checkpoint", dst.shape(), r.value.shape()));
            }
            *dst = r.value.cast();
        }
        Ok(())
    }
}

fn bad(msg: &str) -> Error {
    Error::Checkpoint(msg.to_string())
}

fn write_u32(w: &mut impl Write, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| bad("length exceeds u32"))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| bad("truncated"))?;
    Ok(u32::from_le_bytes(b) as usize)
}

fn read_bytes(r: &mut impl Read, n: usize) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    r.take(n as u64).read_to_end(&mut out)?;
    if out.len() != n {
        return Err(bad("truncated"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_in_memory() {
        let mut store = ParamStore::<f64>::new();
        store.add("a.W", Tensor::from_fn(&[2, 3], |i| i as f64 * 0.5)).unwrap();
        store.add_buffer("a.bn.mean", Tensor::full(&[3], -1.25)).unwrap();
        let ck = Checkpoint::from_store("{\"x\":1}".into(), &store);
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..8], MAGIC);
        let back = Checkpoint::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back.config, "{\"x\":1}");
        assert!(!back.records[1].trainable);
        let mut fresh = ParamStore::<f64>::new();
        fresh.add("a.W", Tensor::zeros(&[2, 3])).unwrap();
        fresh.add_buffer("a.bn.mean", Tensor::zeros(&[3])).unwrap();
        back.restore_into(&mut fresh).unwrap();
        assert_eq!(fresh.by_name("a.W").unwrap().value.data(), store.by_name("a.W").unwrap().value.data());
    }

    #[test]
    fn rejects_garbage() {
        assert!(Checkpoint::read_from(&mut &b"NOTACKPT"[..]).is_err());
        let mut buf = Vec::new();
        Checkpoint { config: String::new(), records: vec![] }.write_to(&mut buf).unwrap();
        buf.truncate(10);
        assert!(Checkpoint::read_from(&mut buf.as_slice()).is_err());
    }
}
