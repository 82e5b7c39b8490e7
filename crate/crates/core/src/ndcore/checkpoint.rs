//! Flat binary encoding of named tensors.
//!
//! Layout (all integers `u32` little-endian):
//!
//! ```text
//! count
//! repeated count times:
//!     name_len, name bytes (UTF-8), rank, dims[rank], values (f64 LE, row-major)
//! ```

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::tensor::{Params, Tensor};
use crate::error::{Error, Result};

pub fn encode(params: &Params) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
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
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::contract(format!("checkpoint truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

pub fn decode(bytes: &[u8]) -> Result<Params> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let count = r.u32()?;
    let mut params = Params::new();
    for _ in 0..count {
        let name_len = r.u32()?;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::contract("checkpoint tensor name is not UTF-8"))?;
        let rank = r.u32()?;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.u32()?);
        }
        let n = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
        let n = n.ok_or_else(|| Error::contract("checkpoint tensor too large"))?;
        let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::contract("checkpoint tensor too large"))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]))
            .collect();
        params.push(name, Tensor::new(shape, data)?)?;
    }
    if r.pos != bytes.len() {
        return Err(Error::contract(format!("{} trailing bytes after checkpoint", bytes.len() - r.pos)));
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn layout_is_exact() {
        let mut p = Params::new();
        p.push("ab", Tensor::new(vec![1, 2], vec![1.0, -0.5]).unwrap()).unwrap();
        let bytes = encode(&p);
        let mut expect = Vec::new();
        expect.extend_from_slice(&1u32.to_le_bytes());
        expect.extend_from_slice(&2u32.to_le_bytes());
        expect.extend_from_slice(b"ab");
        expect.extend_from_slice(&2u32.to_le_bytes());
        expect.extend_from_slice(&1u32.to_le_bytes());
        expect.extend_from_slice(&2u32.to_le_bytes());
        expect.extend_from_slice(&1.0f64.to_le_bytes());
        expect.extend_from_slice(&(-0.5f64).to_le_bytes());
        assert_eq!(bytes, expect);
        assert_eq!(decode(&bytes).unwrap(), p);
    }

    #[test]
    fn truncated_input_is_rejected() {
        let mut p = Params::new();
        p.push("w", Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap()).unwrap();
        let bytes = encode(&p);
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode(&extra).is_err());
    }
}
