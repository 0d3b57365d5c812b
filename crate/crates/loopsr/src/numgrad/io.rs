//! Parameter checkpoint format.
//!
//! Layout: magic "LSRW", version u32, tensor count u32, then per tensor
//! (name length u32, name bytes, rank u32, dims u32 each, row-major f64
//! little-endian payload).

use std::path::Path;

use crate::fileio::{BinReader, BinWriter, FormatError};

use super::params::ParamSet;
use super::Tensor;

pub const WEIGHTS_MAGIC: [u8; 4] = *b"LSRW";
pub const WEIGHTS_VERSION: u32 = 1;

pub fn save_params(path: &Path, params: &ParamSet) -> Result<(), FormatError> {
    let mut w = BinWriter::create(path, WEIGHTS_MAGIC, WEIGHTS_VERSION)?;
    w.put_u32(params.len() as u32)?;
    for (name, tensor) in params.iter() {
        w.put_u32(name.len() as u32)?;
        w.put_bytes(name.as_bytes())?;
        w.put_u32(tensor.shape().len() as u32)?;
        for &d in tensor.shape() {
            w.put_u32(d as u32)?;
        }
        w.put_f64_slice(tensor.values())?;
    }
    w.finish()
}

pub fn load_params(path: &Path) -> Result<ParamSet, FormatError> {
    let mut r = BinReader::open(path, WEIGHTS_MAGIC, WEIGHTS_VERSION)?;
    let count = r.get_u32("tensor count")?;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let name_len = r.get_u32("name length")? as usize;
        let name = r.get_string(name_len, "tensor name")?;
        let rank = r.get_u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.get_u32("dim")? as usize);
        }
        let numel: usize = shape.iter().product();
        let values = r.get_f64_vec(numel, "tensor payload")?;
        let tensor = Tensor::new(shape, values)
            .map_err(|e| FormatError::Corrupt(format!("tensor {name}: {e}")))?;
        params
            .insert(&name, tensor)
            .map_err(|e| FormatError::Corrupt(format!("{e}")))?;
    }
    r.expect_eof()?;
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use std::fs;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("loopsr-io-tests");
        fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = Rng::seed_from(1);
        let mut params = ParamSet::new();
        params.insert_affine("layer0", 7, 5, &mut rng).unwrap();
        params.insert_affine("layer1", 5, 3, &mut rng).unwrap();
        params
            .insert("log_std", Tensor::vector(vec![-0.51, 0.25]))
            .unwrap();

        let path = tmp("roundtrip.lsrw");
        save_params(&path, &params).unwrap();
        let loaded = load_params(&path).unwrap();

        assert_eq!(params.len(), loaded.len());
        for ((n0, t0), (n1, t1)) in params.iter().zip(loaded.iter()) {
            assert_eq!(n0, n1);
            assert_eq!(t0.shape(), t1.shape());
            for (a, b) in t0.values().iter().zip(t1.values()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn bad_magic_is_distinct_error() {
        let path = tmp("badmagic.lsrw");
        fs::write(&path, b"NOPE\x01\x00\x00\x00\x00\x00\x00\x00").unwrap();
        match load_params(&path) {
            Err(FormatError::BadMagic { .. }) => {}
            other => panic!("expected BadMagic, got {other:?}"),
        }
    }

    #[test]
    fn bad_version_is_distinct_error() {
        let path = tmp("badversion.lsrw");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"LSRW");
        bytes.extend_from_slice(&99u32.to_le_bytes());
        bytes.extend_from_slice(&0u32.to_le_bytes());
        fs::write(&path, bytes).unwrap();
        match load_params(&path) {
            Err(FormatError::BadVersion { found: 99, .. }) => {}
            other => panic!("expected BadVersion, got {other:?}"),
        }
    }

    #[test]
    fn truncation_is_distinct_error() {
        let mut rng = Rng::seed_from(2);
        let mut params = ParamSet::new();
        params.insert_affine("a", 4, 4, &mut rng).unwrap();
        let path = tmp("trunc.lsrw");
        save_params(&path, &params).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 9]).unwrap();
        match load_params(&path) {
            Err(FormatError::Truncated { .. }) => {}
            other => panic!("expected Truncated, got {other:?}"),
        }
    }
}
