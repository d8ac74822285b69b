//! Binary model checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "BFL1" | u32 descriptor length | descriptor (TOML) | u64 param count | f32 × count
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{Arch, ModelParams};

pub const MAGIC: &[u8; 4] = b"BFL1";

/// Bytes preceding the parameter block for a given architecture.
pub fn header_len(arch: &Arch) -> usize {
    MAGIC.len() + 4 + arch.descriptor().len() + 8
}

pub fn encode(params: &ModelParams) -> Vec<u8> {
    let desc = params.arch.descriptor();
    let mut out = Vec::with_capacity(header_len(&params.arch) + 4 * params.flat.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(desc.len() as u32).to_le_bytes());
    out.extend_from_slice(desc.as_bytes());
    out.extend_from_slice(&(params.flat.len() as u64).to_le_bytes());
    for &p in &params.flat {
        out.extend_from_slice(&(p as f32).to_le_bytes());
    }
    out
}

fn take<'a>(bytes: &mut &'a [u8], n: usize, what: &str) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(Error::Checkpoint(format!("truncated while reading {what}")));
    }
    let (head, tail) = bytes.split_at(n);
    *bytes = tail;
    Ok(head)
}

pub fn decode(mut bytes: &[u8]) -> Result<ModelParams> {
    let b = &mut bytes;
    if take(b, 4, "magic")? != MAGIC {
        return Err(Error::Checkpoint("bad magic; not a BFL1 checkpoint".into()));
    }
    let len = u32::from_le_bytes(take(b, 4, "descriptor length")?.try_into().expect("4 bytes")) as usize;
    let desc = std::str::from_utf8(take(b, len, "descriptor")?)
        .map_err(|e| Error::Checkpoint(format!("descriptor is not UTF-8: {e}")))?;
    let arch: Arch = toml::from_str(desc).map_err(|e| Error::Checkpoint(format!("bad descriptor: {e}")))?;
    let count = u64::from_le_bytes(take(b, 8, "parameter count")?.try_into().expect("8 bytes")) as usize;
    if count != arch.param_count() {
        return Err(Error::Checkpoint(format!(
            "descriptor implies {} parameters, header says {count}",
            arch.param_count()
        )));
    }
    let body = take(b, 4 * count, "parameters")?;
    if !b.is_empty() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", b.len())));
    }
    let flat = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    ModelParams::from_flat(arch, flat)
}

pub fn save(params: &ModelParams, path: &Path) -> Result<u64> {
    let bytes = encode(params);
    fs::write(path, &bytes)?;
    Ok(bytes.len() as u64)
}

pub fn load(path: &Path) -> Result<ModelParams> {
    decode(&fs::read(path)?)
}

/// Size of the parameter block in a checkpoint file.
pub fn param_bytes(path: &Path) -> Result<u64> {
    let total = fs::metadata(path)?.len();
    let params = load(path)?;
    Ok(total - header_len(&params.arch) as u64)
}

/// Rounds every parameter through `f32`, matching what a checkpoint stores.
pub fn quantize(params: &ModelParams) -> ModelParams {
    ModelParams {
        arch: params.arch.clone(),
        flat: params.flat.iter().map(|&p| p as f32 as f64).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init;

    #[test]
    fn round_trip_is_f32_exact() {
        for arch in [Arch::default_mlp(16), Arch::default_gnn(4, 4)] {
            let p = init(&arch, 3);
            let back = decode(&encode(&p)).unwrap();
            assert_eq!(back, quantize(&p));
            assert_eq!(decode(&encode(&back)).unwrap(), back);
        }
    }

    #[test]
    fn layout_is_as_documented() {
        let arch = Arch::default_mlp(16);
        let p = init(&arch, 1);
        let bytes = encode(&p);
        assert_eq!(&bytes[..4], b"BFL1");
        let len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let desc = std::str::from_utf8(&bytes[8..8 + len]).unwrap();
        assert!(desc.contains("kind = \"mlp\""));
        let count = u64::from_le_bytes(bytes[8 + len..16 + len].try_into().unwrap());
        assert_eq!(count as usize, arch.param_count());
        assert_eq!(bytes.len() - header_len(&arch), 4 * arch.param_count());
        let first = f32::from_le_bytes(bytes[16 + len..20 + len].try_into().unwrap());
        assert_eq!(first, p.flat[0] as f32);
    }

    #[test]
    fn param_bytes_is_file_minus_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bfl");
        let p = init(&Arch::default_gnn(4, 4), 2);
        let total = save(&p, &path).unwrap();
        assert_eq!(param_bytes(&path).unwrap(), 4 * p.param_count() as u64);
        assert_eq!(total, std::fs::metadata(&path).unwrap().len());
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let p = init(&Arch::default_mlp(16), 1);
        let bytes = encode(&p);
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode(&extra).is_err());
        assert!(decode(&bytes[..6]).is_err());
    }
}
