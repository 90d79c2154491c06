//! Binary checkpoint: `DMEP`, u32 version, u32 tensor count, then per tensor
//! u32 name length, UTF-8 name, u32 rank (2), u32 rows, u32 cols and the
//! f64 payload. All integers and floats little-endian.

use std::fs;
use std::path::Path;

use dme_nn::Matrix;

use super::params::{PlannerDims, PlannerParams};
use super::PlannerError;

pub const MAGIC: &[u8; 4] = b"DMEP";
pub const VERSION: u32 = 1;

const HEADS_TENSOR: &str = "meta.heads";
const MAX_LEN_TENSOR: &str = "meta.max_text_len";

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_tensor(buf: &mut Vec<u8>, name: &str, m: &Matrix) {
    put_u32(buf, name.len() as u32);
    buf.extend_from_slice(name.as_bytes());
    put_u32(buf, 2);
    put_u32(buf, m.rows() as u32);
    put_u32(buf, m.cols() as u32);
    for v in m.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serializes the trainable tensors plus two 1×1 metadata tensors carrying
/// the head count and positional table length.
pub fn to_bytes(params: &PlannerParams) -> Vec<u8> {
    let tensors = params.tensors();
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, VERSION);
    put_u32(&mut buf, (tensors.len() + 2) as u32);
    put_tensor(&mut buf, HEADS_TENSOR, &Matrix::scalar(params.dims.heads as f64));
    put_tensor(
        &mut buf,
        MAX_LEN_TENSOR,
        &Matrix::scalar(params.dims.max_text_len as f64),
    );
    for (name, m) in tensors {
        put_tensor(&mut buf, &name, m);
    }
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], PlannerError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| PlannerError::Checkpoint(format!("truncated file at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, PlannerError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<PlannerParams, PlannerError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(PlannerError::Checkpoint("bad magic, not a planner checkpoint".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(PlannerError::Checkpoint(format!("unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    let mut named = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| PlannerError::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()?;
        if rank != 2 {
            return Err(PlannerError::Checkpoint(format!(
                "tensor {name}: rank {rank}, expected 2"
            )));
        }
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let payload = r.take(rows * cols * 8)?;
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let m =
            Matrix::from_vec(rows, cols, data).map_err(|e| PlannerError::Checkpoint(format!("tensor {name}: {e}")))?;
        named.push((name, m));
    }
    if r.pos != bytes.len() {
        return Err(PlannerError::Checkpoint(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    let mut meta = |key: &str| -> Result<usize, PlannerError> {
        let i = named
            .iter()
            .position(|(n, _)| n == key)
            .ok_or_else(|| PlannerError::Checkpoint(format!("missing tensor {key}")))?;
        let (_, m) = named.remove(i);
        Ok(m.data()[0] as usize)
    };
    let heads = meta(HEADS_TENSOR)?;
    let max_text_len = meta(MAX_LEN_TENSOR)?;
    let shape_of = |key: &str| named.iter().find(|(n, _)| n == key).map(|(_, m)| m.shape());
    let (channels, model_dim) =
        shape_of("proj.weight").ok_or_else(|| PlannerError::Checkpoint("missing tensor proj.weight".into()))?;
    let (_, hidden) =
        shape_of("ff1.weight").ok_or_else(|| PlannerError::Checkpoint("missing tensor ff1.weight".into()))?;
    let dims = PlannerDims {
        channels,
        model_dim,
        heads,
        hidden,
        max_text_len,
    };
    PlannerParams::from_named(dims, named)
}

pub fn save(params: &PlannerParams, path: impl AsRef<Path>) -> Result<(), PlannerError> {
    fs::write(path, to_bytes(params))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<PlannerParams, PlannerError> {
    from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let p = PlannerParams::init(PlannerDims::default(), 40, 3).unwrap();
        let bytes = to_bytes(&p);
        assert_eq!(&bytes[..4], b"DMEP");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(from_bytes(&bytes).unwrap(), p);
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let p = PlannerParams::init(PlannerDims::default(), 10, 3).unwrap();
        let bytes = to_bytes(&p);
        assert!(from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(from_bytes(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(from_bytes(&extra).is_err());
    }
}
