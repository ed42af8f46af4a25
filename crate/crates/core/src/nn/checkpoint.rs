//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      4 bytes   b"WBCK"
//! version    u32       1
//! digest     32 bytes  SHA-256 of the network spec JSON
//! count      u32       number of records
//! record*    name_len u32, name (UTF-8), ndim u32, dims u32 x ndim,
//!            values f32 x product(dims)
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const MAGIC: &[u8; 4] = b"WBCK";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub digest: [u8; 32],
    pub records: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn from_named<'a, T: Real + 'a>(
        digest: [u8; 32],
        named: impl IntoIterator<Item = (String, &'a Tensor<T>)>,
    ) -> Self {
        Checkpoint {
            digest,
            records: named.into_iter().map(|(n, t)| (n, t.cast())).collect(),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.digest);
        out.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        for (name, t) in &self.records {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let mut digest = [0u8; 32];
        read_exact(&mut r, &mut digest)?;
        let count = read_u32(&mut r)? as usize;
        let mut records = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let len = read_u32(&mut r)? as usize;
            let mut name = vec![0u8; len];
            read_exact(&mut r, &mut name)?;
            let name = String::from_utf8(name).map_err(|_| Error::Checkpoint("record name is not UTF-8".into()))?;
            let ndim = read_u32(&mut r)? as usize;
            let shape = (0..ndim).map(|_| read_u32(&mut r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            if n * 4 > r.len() {
                return Err(Error::Checkpoint(format!("record {name} truncated")));
            }
            let data = (0..n)
                .map(|_| {
                    let mut b = [0u8; 4];
                    read_exact(&mut r, &mut b).map(|_| f32::from_le_bytes(b))
                })
                .collect::<Result<Vec<_>>>()?;
            let tensor = Tensor::from_vec(&shape, data).map_err(|e| Error::Checkpoint(e.to_string()))?;
            records.push((name, tensor));
        }
        if !r.is_empty() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", r.len())));
        }
        Ok(Checkpoint { digest, records })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }

    /// Copies records into `targets` by name, checking digest and shapes.
    pub fn restore<T: Real>(&self, digest: [u8; 32], targets: Vec<(String, &mut Tensor<T>)>) -> Result<()> {
        if digest != self.digest {
            return Err(Error::Checkpoint("network spec digest mismatch".into()));
        }
        if targets.len() != self.records.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} records, checkpoint has {}",
                targets.len(),
                self.records.len()
            )));
        }
        for ((name, dst), (rname, src)) in targets.into_iter().zip(&self.records) {
            if &name != rname || dst.shape() != src.shape() {
                return Err(Error::Checkpoint(format!(
                    "record {rname} {:?} does not match {name} {:?}",
                    src.shape(),
                    dst.shape()
                )));
            }
            *dst = src.cast();
        }
        Ok(())
    }
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|_| Error::Checkpoint("unexpected end of data".into()))
}

fn read_u32(r: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    proptest! {
        #[test]
        fn encode_decode_is_bit_exact(
            bits in proptest::collection::vec(any::<u32>(), 1..40),
            name in "[a-z.0-9]{1,12}",
        ) {
            let data: Vec<f32> = bits.iter().map(|&b| f32::from_bits(b)).collect();
            let t = Tensor::<f32>::from_vec(&[data.len()], data).unwrap();
            let ck = Checkpoint { digest: [7; 32], records: vec![(name, t)] };
            let bytes = ck.encode();
            let back = Checkpoint::decode(&bytes).unwrap();
            prop_assert_eq!(back.encode(), bytes);
        }
    }

    #[test]
    fn truncated_input_is_rejected() {
        let t = Tensor::<f32>::from_vec(&[2], vec![1.0, 2.0]).unwrap();
        let bytes = Checkpoint {
            digest: [0; 32],
            records: vec![("w".into(), t)],
        }
        .encode();
        assert!(Checkpoint::decode(&bytes[..bytes.len() - 1]).is_err());
        assert!(Checkpoint::decode(b"XXXX").is_err());
    }
}
