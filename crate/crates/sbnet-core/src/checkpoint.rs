//! Binary checkpoint container.
//!
//! Layout: magic `SBNT`, format version (u32 LE), then one record per tensor
//! in parameter-registration order: name length (u32 LE), UTF-8 name, dtype
//! code (u32 LE, 0 = f32), rank (u32 LE), dims (u32 LE each), raw
//! little-endian payload. Buffers (running statistics) are stored alongside
//! trainable tensors so a reload reproduces inference bit-exactly.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::params::ParamSet;

pub const MAGIC: &[u8; 4] = b"SBNT";
pub const VERSION: u32 = 1;
const DTYPE_F32: u32 = 0;

pub fn save(ps: &ParamSet<f32>, path: &Path) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    for (_, entry) in ps.entries() {
        let name = entry.name.as_bytes();
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name);
        buf.extend_from_slice(&DTYPE_F32.to_le_bytes());
        let shape = entry.value.shape();
        buf.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in entry.value.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint(format!(
                "truncated: wanted {} bytes at offset {}, file has {}",
                n,
                self.pos,
                self.buf.len()
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Loads a checkpoint into an existing parameter set. The set must contain
/// exactly the stored tensor names with matching shapes; values are restored
/// bit-exactly.
pub fn load_into(ps: &mut ParamSet<f32>, path: &Path) -> Result<()> {
    let buf = fs::read(path)?;
    let mut r = Reader { buf: &buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic, not a checkpoint".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version}, expected {VERSION}"
        )));
    }
    let mut seen: Vec<String> = Vec::new();
    while r.pos < buf.len() {
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let dtype = r.u32()?;
        if dtype != DTYPE_F32 {
            return Err(Error::Checkpoint(format!(
                "unknown dtype code {dtype} for '{name}'"
            )));
        }
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let n: usize = shape.iter().product();
        let payload = r.take(n * 4)?;
        let id = ps.lookup(&name).ok_or_else(|| {
            Error::Checkpoint(format!("checkpoint tensor '{name}' unknown to this model"))
        })?;
        if ps.get(id).shape() != shape.as_slice() {
            return Err(Error::Checkpoint(format!(
                "shape mismatch for '{name}': checkpoint {:?} vs model {:?}",
                shape,
                ps.get(id).shape()
            )));
        }
        let data = ps.get_mut(id).data_mut();
        for (i, chunk) in payload.chunks_exact(4).enumerate() {
            data[i] = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        }
        seen.push(name);
    }
    if r.pos != buf.len() {
        return Err(Error::Checkpoint("trailing bytes after last record".into()));
    }
    if seen.len() != ps.len() {
        let missing: Vec<String> = ps
            .entries()
            .map(|(_, e)| e.name.clone())
            .filter(|n| !seen.contains(n))
            .collect();
        return Err(Error::Checkpoint(format!(
            "checkpoint covers {} of {} model tensors; missing: {}",
            seen.len(),
            ps.len(),
            missing.join(", ")
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::TensorBase;
    use rand::SeedableRng;

    fn sample_set() -> ParamSet<f32> {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(7);
        let mut ps = ParamSet::new();
        ps.add_kaiming("a.w", &[3, 4], 3, &mut rng).unwrap();
        ps.add_kaiming("b.w", &[2, 2, 3, 3], 18, &mut rng).unwrap();
        ps.add("bn.running_var", TensorBase::filled(&[2], 1.0), false)
            .unwrap();
        ps
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.sbnt");
        let ps = sample_set();
        save(&ps, &path).unwrap();
        let mut restored = sample_set();
        // Perturb, then restore.
        restored.get_mut(crate::params::ParamId(0)).data_mut()[0] = 99.0;
        load_into(&mut restored, &path).unwrap();
        for ((_, a), (_, b)) in ps.entries().zip(restored.entries()) {
            assert_eq!(a.name, b.name);
            let ab: Vec<u32> = a.value.data().iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u32> = b.value.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(ab, bb, "tensor {} not bit-identical", a.name);
        }
    }

    #[test]
    fn bad_magic_and_truncation_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.sbnt");
        let ps = sample_set();
        save(&ps, &path).unwrap();

        let mut bytes = fs::read(&path).unwrap();
        bytes[0] = b'X';
        fs::write(&path, &bytes).unwrap();
        let mut target = sample_set();
        assert!(load_into(&mut target, &path).is_err());

        save(&ps, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 2]).unwrap();
        assert!(load_into(&mut target, &path).is_err());
    }

    #[test]
    fn missing_and_unknown_tensors_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.sbnt");
        save(&sample_set(), &path).unwrap();

        // Model with an extra tensor: checkpoint is missing it.
        let mut bigger = sample_set();
        bigger.add("c.w", TensorBase::zeros(&[1]), true).unwrap();
        let err = load_into(&mut bigger, &path).unwrap_err().to_string();
        assert!(err.contains("c.w"), "error was: {err}");

        // Model missing a tensor the checkpoint has.
        let mut smaller = ParamSet::new();
        smaller.add("a.w", TensorBase::zeros(&[3, 4]), true).unwrap();
        assert!(load_into(&mut smaller, &path).is_err());
    }
}
