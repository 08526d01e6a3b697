use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{AutodiffError, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"KNWEIGHT";
const VERSION: u32 = 1;

/// Named trainable tensors of a model, in declaration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor and returns its index.
    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> usize {
        self.names.push(name.into());
        self.tensors.push(tensor);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn tensor(&self, idx: usize) -> &Tensor {
        &self.tensors[idx]
    }

    pub fn tensor_mut(&mut self, idx: usize) -> &mut Tensor {
        &mut self.tensors[idx]
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.names[idx]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// FNV-1a over names, shapes and the raw bits of every value.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for b in bytes {
                h ^= u64::from(*b);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        for (name, t) in self.iter() {
            eat(name.as_bytes());
            for &e in t.shape() {
                eat(&(e as u64).to_le_bytes());
            }
            for v in t.data() {
                eat(&v.to_bits().to_le_bytes());
            }
        }
        h
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    /// Writes the flat binary weight format: magic, version, tensor count,
    /// then per tensor its name, rank, extents and little-endian values.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.len() as u32).to_le_bytes())?;
        for (name, t) in self.iter() {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.rank() as u32).to_le_bytes())?;
            for &e in t.shape() {
                w.write_all(&(e as u64).to_le_bytes())?;
            }
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(AutodiffError::Format("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(AutodiffError::Format(format!(
                "unsupported version {version}"
            )));
        }
        let count = read_u32(&mut r)? as usize;
        let mut set = ParamSet::new();
        for _ in 0..count {
            let name_len = read_u32(&mut r)? as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|e| AutodiffError::Format(e.to_string()))?;
            let rank = read_u32(&mut r)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                shape.push(u64::from_le_bytes(b) as usize);
            }
            let numel: usize = shape.iter().product();
            let mut data = Vec::with_capacity(numel);
            for _ in 0..numel {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                data.push(f64::from_le_bytes(b));
            }
            set.add(name, Tensor::new(shape, data)?);
        }
        Ok(set)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }

    /// Copies values from `other`, which must hold the same names and shapes.
    pub fn assign(&mut self, other: &ParamSet) -> Result<()> {
        if self.names != other.names {
            return Err(AutodiffError::Format("parameter names differ".into()));
        }
        for (dst, src) in self.tensors.iter_mut().zip(&other.tensors) {
            if dst.shape() != src.shape() {
                return Err(crate::error::mismatch("assign", dst.shape(), src.shape()));
            }
            dst.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_magic() {
        let err = ParamSet::read_from(&b"NOTMAGIC\x01\0\0\0\0\0\0\0"[..]).unwrap_err();
        assert!(matches!(err, AutodiffError::Format(_)));
    }

    #[test]
    fn header_layout() {
        let mut p = ParamSet::new();
        p.add("w", Tensor::new([2], vec![1.5, -2.0]).unwrap());
        let mut buf = Vec::new();
        p.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..8], MAGIC);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(buf[12..16].try_into().unwrap()), 1);
        // name len, name, rank, one extent, two values
        assert_eq!(buf.len(), 16 + 4 + 1 + 4 + 8 + 16);
        assert_eq!(
            f64::from_le_bytes(buf[buf.len() - 8..].try_into().unwrap()),
            -2.0
        );
    }

    #[test]
    fn checksum_tracks_values() {
        let mut p = ParamSet::new();
        p.add("a", Tensor::zeros([3]));
        let c0 = p.checksum();
        p.tensor_mut(0).data_mut()[1] = 1e-300;
        assert_ne!(c0, p.checksum());
    }
}
