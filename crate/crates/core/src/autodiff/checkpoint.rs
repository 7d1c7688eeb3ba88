//! "RLNA1" parameter container: the magic, then one record per tensor
//! (`u32` name length, UTF-8 name, `u32` rank, `u32` dims, `f32` data), all
//! little-endian, until the end of the buffer.
//!
//! Trainable flags are not stored. Tensors whose name ends in `.meta` hold
//! layout records and come back frozen; everything else comes back trainable.

use alloc::string::String;
use alloc::vec::Vec;

use super::{ParamSet, Tensor};
use crate::{Error, Result};

pub const MAGIC: &[u8; 5] = b"RLNA1";

const MAX_RANK: usize = 8;

pub fn encode(set: &ParamSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(MAGIC.len() + 4 * set.numel() + 64 * set.len());
    out.extend_from_slice(MAGIC);
    for (_, name, t) in set.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for d in t.shape() {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::invalid("checkpoint", alloc::format!("truncated {what} at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

pub fn decode(buf: &[u8]) -> Result<ParamSet> {
    if !buf.starts_with(MAGIC) {
        return Err(Error::invalid("checkpoint", "missing RLNA1 magic"));
    }
    let mut r = Reader { buf, pos: MAGIC.len() };
    let mut set = ParamSet::new();
    while r.pos < buf.len() {
        let n = r.u32("name length")?;
        let name = String::from_utf8(r.take(n, "name")?.to_vec()).map_err(|_| Error::invalid("checkpoint", "name is not UTF-8"))?;
        if set.find(&name).is_some() {
            return Err(Error::invalid("checkpoint", alloc::format!("duplicate tensor `{name}`")));
        }
        let rank = r.u32("rank")?;
        if rank > MAX_RANK {
            return Err(Error::invalid("checkpoint", alloc::format!("tensor `{name}` has rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("dims")?);
        }
        let len = shape.iter().try_fold(1usize, |a, d| a.checked_mul(*d));
        let bytes = len.and_then(|l| l.checked_mul(4)).ok_or_else(|| Error::invalid("checkpoint", "tensor size overflows"))?;
        let data: Vec<f32> = r.take(bytes, "tensor data")?.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        let id = set.add(&name, Tensor::new(&shape, data)?);
        if name.ends_with(".meta") {
            set.get_mut(id).set_requires_grad(false);
        }
    }
    Ok(set)
}
