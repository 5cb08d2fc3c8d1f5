use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::tape::ParamStore;
use super::tensor::Tensor;
use super::NnError;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"SNCK";

/// Decoded checkpoint contents.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config_hash: u64,
    pub params: Vec<(String, Tensor)>,
    pub config_text: String,
}

impl Checkpoint {
    /// Copies values into `store`, which must hold exactly the same names and
    /// shapes, after checking the config hash.
    pub fn load_into(&self, store: &mut ParamStore, expected_hash: u64) -> Result<(), NnError> {
        if self.config_hash != expected_hash {
            return Err(NnError::Checkpoint(format!(
                "config hash {:016x} does not match model {:016x}",
                self.config_hash, expected_hash
            )));
        }
        if self.params.len() != store.len() {
            return Err(NnError::Checkpoint(format!(
                "checkpoint has {} parameters, model has {}",
                self.params.len(),
                store.len()
            )));
        }
        for (name, t) in &self.params {
            let id = store
                .id(name)
                .ok_or_else(|| NnError::Checkpoint(format!("unknown parameter {name}")))?;
            let p = store.get_mut(id);
            if p.value.shape != t.shape {
                return Err(NnError::Checkpoint(format!(
                    "{name}: shape {:?} vs model {:?}",
                    t.shape, p.value.shape
                )));
            }
            p.value.data.clone_from(&t.data);
        }
        Ok(())
    }
}

pub fn encode_checkpoint(store: &ParamStore, config_hash: u64, config_text: &str) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&config_hash.to_le_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for p in store.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.value.shape.len() as u32).to_le_bytes());
        for &d in &p.value.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &p.value.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.extend_from_slice(&(config_text.len() as u32).to_le_bytes());
    out.extend_from_slice(config_text.as_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        if self.buf.len() - self.pos < n {
            return Err(NnError::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, NnError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String, NnError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| NnError::Checkpoint("name is not UTF-8".into()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, NnError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(NnError::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(NnError::Checkpoint(format!("unsupported version {version}")));
    }
    let config_hash = r.u64()?;
    let count = r.u32()? as usize;
    let mut params = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let name = r.string()?;
        let ndim = r.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim.min(8));
        for _ in 0..ndim {
            shape.push(r.u64()? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(8).ok_or_else(|| NnError::Checkpoint("shape overflow".into()))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        params.push((name, Tensor { shape, data }));
    }
    let config_text = r.string()?;
    if r.pos != bytes.len() {
        return Err(NnError::Checkpoint("trailing bytes".into()));
    }
    Ok(Checkpoint {
        config_hash,
        params,
        config_text,
    })
}
