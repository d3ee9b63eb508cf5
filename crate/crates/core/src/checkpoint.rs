//! Flat tensor archive.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    7 bytes   "CMAVIT1"
//! count    u32       number of records
//! record*  name_len u32 | name UTF-8 | ndim u32 | dims u64×ndim | payload f64×Π dims
//! ```
//!
//! Payload values are stored as their IEEE-754 bit patterns, so a
//! write/read cycle is bit-exact.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 7] = b"CMAVIT1";

pub fn encode<'a>(records: impl IntoIterator<Item = (&'a str, &'a Tensor)>) -> Vec<u8> {
    let records: Vec<_> = records.into_iter().collect();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for (name, t) in records {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
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
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Data(format!("archive truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Data("missing CMAVIT1 header".into()));
    }
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|e| Error::Data(format!("record name is not UTF-8: {e}")))?
            .to_owned();
        let ndim = r.u32()? as usize;
        let shape = (0..ndim)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Data(format!("record `{name}` is too large")))?;
        let payload = r.take(n.checked_mul(8).ok_or_else(|| Error::Data("overflow".into()))?)?;
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| Error::Data(format!("record `{name}`: {e}")))?;
        out.push((name, t));
    }
    if r.pos != bytes.len() {
        return Err(Error::Data("trailing bytes after last record".into()));
    }
    Ok(out)
}

pub fn save<'a>(path: &Path, records: impl IntoIterator<Item = (&'a str, &'a Tensor)>) -> Result<()> {
    std::fs::write(path, encode(records)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_and_layout() {
        let t = Tensor::new(vec![1, 2], vec![1.0, -0.0]).unwrap();
        let bytes = encode([("w", &t)]);
        assert_eq!(&bytes[..7], b"CMAVIT1");
        assert_eq!(bytes.len(), 7 + 4 + 4 + 1 + 4 + 16 + 16);
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode(b"CMAVIT2\0\0\0\0").is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            names in proptest::collection::vec("[a-zé.0-9]{1,12}", 1..5),
            bits in proptest::collection::vec(any::<u64>(), 1..40),
        ) {
            let tensors: Vec<Tensor> = names.iter().enumerate().map(|(i, _)| {
                let n = 1 + (i * 7) % bits.len();
                let data = bits.iter().cycle().skip(i).take(n).map(|&b| f64::from_bits(b)).collect();
                Tensor::new(vec![n], data).unwrap()
            }).collect();
            let bytes = encode(names.iter().map(String::as_str).zip(&tensors));
            let back = decode(&bytes).unwrap();
            prop_assert_eq!(back.len(), tensors.len());
            for ((n, t), (bn, bt)) in names.iter().zip(&tensors).zip(&back) {
                prop_assert_eq!(n, bn);
                prop_assert_eq!(t.shape(), bt.shape());
                let a: Vec<u64> = t.data().iter().map(|v| v.to_bits()).collect();
                let b: Vec<u64> = bt.data().iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(a, b);
            }
            prop_assert_eq!(encode(back.iter().map(|(n, t)| (n.as_str(), t))), bytes);
        }
    }
}
