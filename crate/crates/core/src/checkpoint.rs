//! Binary checkpoint container.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "R2CG"
//! 4       4     u32 format version (1)
//! 8       4     u32 Taylor order Q of the generators
//! 12      8     u64 topology hash (first 8 bytes of SHA-256 over model array names and shapes)
//! 20      4     u32 completed epochs
//! 24      8     u64 optimizer step count
//! 32      4     u32 config length L
//! 36      L     UTF-8 JSON training configuration
//! ..      4     u32 array count
//! then per array:
//!         4     u32 name length, followed by the UTF-8 name
//!         4     u32 rank r, followed by r × u32 extents
//!         4·n   f32 values, n = product of extents
//! ```
//!
//! Model arrays are keyed `g.*`, `f.*`, `dx.*`, `dy.*`; optimizer moments are
//! stored as `adam.m.<name>` and `adam.v.<name>`.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"R2CG";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub q: u32,
    pub epoch: u32,
    pub step: u64,
    pub config_json: String,
    pub arrays: Vec<(String, Tensor<f32>)>,
}

/// Hash over the names and shapes of model (non-optimizer) arrays.
pub fn topology_hash<'a>(arrays: impl IntoIterator<Item = (&'a str, &'a [usize])>) -> u64 {
    let mut h = Sha256::new();
    for (name, shape) in arrays {
        if name.starts_with("adam.") {
            continue;
        }
        h.update((name.len() as u32).to_le_bytes());
        h.update(name.as_bytes());
        h.update((shape.len() as u32).to_le_bytes());
        for &d in shape {
            h.update((d as u32).to_le_bytes());
        }
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 has 32 bytes"))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}

impl Checkpoint {
    pub fn topology_hash(&self) -> u64 {
        topology_hash(self.arrays.iter().map(|(n, t)| (n.as_str(), t.shape())))
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.arrays.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.q.to_le_bytes());
        out.extend_from_slice(&self.topology_hash().to_le_bytes());
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&(self.config_json.len() as u32).to_le_bytes());
        out.extend_from_slice(self.config_json.as_bytes());
        out.extend_from_slice(&(self.arrays.len() as u32).to_le_bytes());
        for (name, t) in &self.arrays {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let q = r.u32()?;
        let hash = r.u64()?;
        let epoch = r.u32()?;
        let step = r.u64()?;
        let config_json = r.string()?;
        let n = r.u32()? as usize;
        let mut arrays = Vec::with_capacity(n);
        for _ in 0..n {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            let raw = r.take(numel * 4)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            arrays.push((name, Tensor::from_vec(&shape, data)?));
        }
        if r.pos != buf.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", buf.len() - r.pos)));
        }
        let ckpt = Self { q, epoch, step, config_json, arrays };
        if ckpt.topology_hash() != hash {
            return Err(Error::Checkpoint("topology hash mismatch".into()));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint {
            q: 3,
            epoch: 2,
            step: 17,
            config_json: "{\"a\":1}".into(),
            arrays: vec![
                ("g.down1.weight".into(), Tensor::from_vec(&[1, 2], vec![0.5, -1.25]).unwrap()),
                ("adam.m.g.down1.weight".into(), Tensor::from_vec(&[1, 2], vec![1e-3, 0.0]).unwrap()),
            ],
        }
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let bytes = sample().to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, sample());
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(&bytes[..4], b"R2CG");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 3);
    }

    #[test]
    fn corruption_is_detected() {
        let mut bytes = sample().to_bytes();
        bytes[0] = b'X';
        assert!(Checkpoint::from_bytes(&bytes).is_err());
        let bytes = sample().to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bytes = sample().to_bytes();
        bytes[12] ^= 0xff;
        assert!(Checkpoint::from_bytes(&bytes).is_err());
    }

    #[test]
    fn optimizer_arrays_do_not_change_topology() {
        let mut a = sample();
        let h = a.topology_hash();
        a.arrays.pop();
        assert_eq!(a.topology_hash(), h);
    }
}
