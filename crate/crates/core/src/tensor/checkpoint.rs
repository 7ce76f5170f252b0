//! Binary parameter checkpoints.
//!
//! Layout (little-endian): the 8 magic bytes `CCDMCKPT`, a `u32` version,
//! then a run of entries until end of file. Each entry is a `u16` name
//! length, the UTF-8 name, a `u8` rank, one `u32` per dimension and the
//! `f32` data. Parameters come first in name order; the optimizer state
//! follows as entries named `adam.m/<name>`, `adam.v/<name>` and a rank-0
//! `adam.step` holding the step counter.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CCDMCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

const M_PREFIX: &str = "adam.m/";
const V_PREFIX: &str = "adam.v/";
const STEP_NAME: &str = "adam.step";

fn write_entry(w: &mut impl Write, name: &str, shape: &[usize], data: &[f32]) -> Result<()> {
    let len = u16::try_from(name.len())
        .map_err(|_| Error::Format(format!("parameter name too long: {name}")))?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    let rank = u8::try_from(shape.len())
        .map_err(|_| Error::Format(format!("rank too large for {name}")))?;
    w.write_all(&[rank])?;
    for &d in shape {
        let d = u32::try_from(d)
            .map_err(|_| Error::Format(format!("dimension too large for {name}")))?;
        w.write_all(&d.to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(data.len() * 4);
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn write_checkpoint(store: &ParamStore, w: &mut impl Write) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    for (name, p) in store.iter() {
        write_entry(w, name, p.tensor.shape(), p.tensor.data())?;
    }
    for (name, p) in store.iter() {
        write_entry(w, &format!("{M_PREFIX}{name}"), p.tensor.shape(), &p.m)?;
        write_entry(w, &format!("{V_PREFIX}{name}"), p.tensor.shape(), &p.v)?;
    }
    write_entry(w, STEP_NAME, &[], &[store.step() as f32])?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format("checkpoint truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(
            self.take(2)?.try_into().expect("2 bytes"),
        ))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<ParamStore> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let mut cur = Cursor { buf: &buf, pos: 0 };
    if cur.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = cur.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let mut entries: BTreeMap<String, Tensor> = BTreeMap::new();
    let mut order = Vec::new();
    while cur.pos < buf.len() {
        let len = cur.u16()? as usize;
        let name = std::str::from_utf8(cur.take(len)?)
            .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?
            .to_string();
        let rank = cur.u8()? as usize;
        let shape = (0..rank)
            .map(|_| cur.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let data = cur
            .take(numel * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        order.push(name.clone());
        if entries
            .insert(name.clone(), Tensor::new(shape, data)?)
            .is_some()
        {
            return Err(Error::Format(format!("duplicate entry `{name}`")));
        }
    }

    let mut store = ParamStore::new();
    for name in order
        .iter()
        .filter(|n| !n.starts_with(M_PREFIX) && !n.starts_with(V_PREFIX) && *n != STEP_NAME)
    {
        let tensor = entries[name].clone();
        let n = tensor.numel();
        let m = entries
            .get(&format!("{M_PREFIX}{name}"))
            .map(|t| t.data().to_vec())
            .unwrap_or_else(|| vec![0.0; n]);
        let v = entries
            .get(&format!("{V_PREFIX}{name}"))
            .map(|t| t.data().to_vec())
            .unwrap_or_else(|| vec![0.0; n]);
        store.insert_with_state(name.clone(), tensor, m, v)?;
    }
    if let Some(step) = entries.get(STEP_NAME) {
        store.set_step(step.item() as u64);
    }
    Ok(store)
}
