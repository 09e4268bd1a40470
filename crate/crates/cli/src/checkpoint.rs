//! Binary model checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic           4 bytes, "MDGC"
//! format version  u32, currently 1
//! arch length     u32, byte length of the architecture JSON
//! arch JSON       UTF-8 serialization of the architecture
//! tensor count    u32
//! per tensor:
//!   name length   u32
//!   name          UTF-8
//!   rank          u8
//!   dims          u32 × rank
//!   data          f64 × product(dims)
//! ```
//!
//! Every parameter and running statistic is stored in the model's canonical
//! visitation order, so save → load → save reproduces the bytes exactly.
//! Loading validates magic, version, and every tensor's name and shape
//! against the embedded architecture; truncated or oversized files are
//! rejected with the byte offset and the tensor being read.

use std::path::Path;

use mdgc_core::model::{ArchitectureConfig, Model};
use mdgc_core::{Error, Result, Tensor};

use crate::fsio::atomic_write;

pub const MAGIC: [u8; 4] = *b"MDGC";
pub const VERSION: u32 = 1;

fn corrupt(offset: usize, message: String) -> Error {
    Error::Checkpoint { offset, message }
}

/// Serializes the model to checkpoint bytes.
pub fn to_bytes(model: &Model) -> Result<Vec<u8>> {
    let arch = serde_json::to_string(model.config())
        .map_err(|e| Error::InvalidArchitecture(format!("architecture not serializable: {e}")))?;
    let tensors = model.named_tensors();

    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&u32_of(arch.len(), "architecture JSON length")?.to_le_bytes());
    out.extend_from_slice(arch.as_bytes());
    out.extend_from_slice(&u32_of(tensors.len(), "tensor count")?.to_le_bytes());
    for (name, tensor, _) in tensors {
        out.extend_from_slice(&u32_of(name.len(), "tensor name length")?.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let rank = tensor.rank();
        if rank > u8::MAX as usize {
            return Err(Error::InvalidArchitecture(format!(
                "tensor {name:?} has rank {rank}, beyond the format's limit"
            )));
        }
        out.push(rank as u8);
        for &dim in tensor.shape() {
            out.extend_from_slice(&u32_of(dim, "tensor dimension")?.to_le_bytes());
        }
        for &x in tensor.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

fn u32_of(value: usize, what: &str) -> Result<u32> {
    u32::try_from(value)
        .map_err(|_| Error::InvalidArchitecture(format!("{what} {value} exceeds the u32 format field")))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let remaining = self.bytes.len() - self.pos;
        if remaining < n {
            return Err(corrupt(
                self.pos,
                format!("truncated while reading {what}: need {n} bytes, {remaining} left"),
            ));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
}

/// Reconstructs a model from checkpoint bytes.
pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader { bytes, pos: 0 };

    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(corrupt(0, format!("bad magic {magic:?}, expected {MAGIC:?}")));
    }
    let version = r.u32("format version")?;
    if version != VERSION {
        return Err(corrupt(
            4,
            format!("unsupported format version {version}, expected {VERSION}"),
        ));
    }

    let arch_len = r.u32("architecture length")? as usize;
    let arch_offset = r.pos;
    let arch_bytes = r.take(arch_len, "architecture JSON")?;
    let arch_text = std::str::from_utf8(arch_bytes)
        .map_err(|e| corrupt(arch_offset, format!("architecture JSON is not UTF-8: {e}")))?;
    let arch: ArchitectureConfig = serde_json::from_str(arch_text)
        .map_err(|e| corrupt(arch_offset, format!("architecture JSON does not parse: {e}")))?;

    let count = r.u32("tensor count")? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u32("tensor name length")? as usize;
        let name_offset = r.pos;
        let name_bytes = r.take(name_len, "tensor name")?;
        let name = std::str::from_utf8(name_bytes)
            .map_err(|e| corrupt(name_offset, format!("tensor name is not UTF-8: {e}")))?
            .to_string();
        let rank = r.u8(&format!("rank of tensor {name:?}"))? as usize;
        let mut shape = Vec::with_capacity(rank);
        let mut len = 1usize;
        for axis in 0..rank {
            let dim = r.u32(&format!("dimension {axis} of tensor {name:?}"))? as usize;
            len = len.checked_mul(dim).ok_or_else(|| {
                corrupt(r.pos, format!("tensor {name:?} dimensions overflow"))
            })?;
            shape.push(dim);
        }
        let byte_len = len.checked_mul(8).ok_or_else(|| {
            corrupt(r.pos, format!("tensor {name:?} dimensions overflow"))
        })?;
        let data_offset = r.pos;
        // Reading before allocating bounds the allocation by the file size
        // even when a corrupt header claims an enormous tensor.
        let raw = r.take(byte_len, &format!("data for tensor {name:?}"))?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|chunk| f64::from_le_bytes(chunk.try_into().expect("8-byte chunk")))
            .collect();
        let tensor = Tensor::new(&shape, data).map_err(|e| {
            corrupt(data_offset, format!("tensor {name:?} is malformed: {e}"))
        })?;
        tensors.push((name, tensor));
    }
    if r.pos != bytes.len() {
        return Err(corrupt(
            r.pos,
            format!("{} trailing bytes after the last tensor", bytes.len() - r.pos),
        ));
    }

    let mut model = Model::zeroed(arch)?;
    model.set_named_tensors(tensors).map_err(|e| {
        corrupt(0, format!("tensors do not match the embedded architecture: {e}"))
    })?;
    Ok(model)
}

/// Writes a checkpoint file atomically.
pub fn save(path: &Path, model: &Model) -> Result<()> {
    atomic_write(path, &to_bytes(model)?)
}

/// Loads a checkpoint file.
pub fn load(path: &Path) -> Result<Model> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes).map_err(|e| match e {
        Error::Checkpoint { offset, message } => Error::Checkpoint {
            offset,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use mdgc_core::zoo::preset;
    use mdgc_core::Rng;

    fn small_model() -> Model {
        let config = preset("cnn6-tiny").unwrap();
        Model::init(config, &mut Rng::new(11)).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact_and_stable() {
        let model = small_model();
        let bytes = to_bytes(&model).unwrap();
        let loaded = from_bytes(&bytes).unwrap();
        assert_eq!(loaded.config(), model.config());
        let again = to_bytes(&loaded).unwrap();
        assert_eq!(bytes, again, "save -> load -> save must reproduce bytes");
        for ((name_a, a, _), (name_b, b, _)) in
            model.named_tensors().iter().zip(loaded.named_tensors().iter())
        {
            assert_eq!(name_a, name_b);
            assert_eq!(a.shape(), b.shape());
            let same = a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits());
            assert!(same, "tensor {name_a} changed across the round trip");
        }
    }

    #[test]
    fn flipped_header_byte_reports_bad_magic() {
        let mut bytes = to_bytes(&small_model()).unwrap();
        bytes[0] ^= 0xFF;
        let err = from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("bad magic"), "{err}");
    }

    #[test]
    fn wrong_version_is_rejected() {
        let mut bytes = to_bytes(&small_model()).unwrap();
        bytes[4] = 2;
        let err = from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("unsupported format version 2"), "{err}");
    }

    #[test]
    fn truncation_names_the_tensor_being_read() {
        let model = small_model();
        let bytes = to_bytes(&model).unwrap();
        let cut = &bytes[..bytes.len() - 8];
        let err = from_bytes(cut).unwrap_err();
        let message = err.to_string();
        let last = model.named_tensors().last().unwrap().0.clone();
        assert!(
            message.contains(&format!("{last:?}")),
            "expected {last:?} in: {message}"
        );
        assert!(message.contains("truncated"), "{message}");
    }

    #[test]
    fn trailing_bytes_are_rejected() {
        let mut bytes = to_bytes(&small_model()).unwrap();
        bytes.push(0);
        let err = from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("trailing"), "{err}");
    }

    #[test]
    fn tensor_name_mismatch_is_rejected() {
        let model = small_model();
        let mut bytes = to_bytes(&model).unwrap();
        // Corrupt the first byte of the first tensor's name: locate it right
        // after magic + version + arch blob + tensor count.
        let arch_len =
            u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize;
        let name_start = 12 + arch_len + 4 + 4;
        bytes[name_start] = b'z';
        let err = from_bytes(&bytes).unwrap_err();
        assert!(
            err.to_string().contains("do not match the embedded architecture"),
            "{err}"
        );
    }
}
