//! Binary checkpoint format ("EEFL1").
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "EEFL1" | u32 version | u64 config fingerprint | u64 created round
//! u32 segment count
//! per segment: u32 name len | name bytes | u32 ndims | u64 * ndims dims
//!              u64 element count | f64 * count row-major payload
//! ```
//!
//! Payloads are raw IEEE-754 bit patterns, so save -> load -> save is
//! byte-identical.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::params::{ParamSet, Segment, SegmentId};

const MAGIC: &[u8; 5] = b"EEFL1";
const VERSION: u32 = 1;

pub fn write_to<W: Write>(mut w: W, params: &ParamSet, config_fingerprint: u64) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&config_fingerprint.to_le_bytes())?;
    w.write_all(&params.created_round.to_le_bytes())?;
    w.write_all(&(params.segments().len() as u32).to_le_bytes())?;
    for seg in params.segments() {
        let name = seg.id.name();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(seg.shape.len() as u32).to_le_bytes())?;
        for &d in &seg.shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        w.write_all(&(seg.data.len() as u64).to_le_bytes())?;
        for &x in &seg.data {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_exact<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    Ok(u32::from_le_bytes(read_exact::<_, 4>(r)?))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    Ok(u64::from_le_bytes(read_exact::<_, 8>(r)?))
}

pub fn read_from<R: Read>(mut r: R) -> Result<(ParamSet, u64)> {
    let magic = read_exact::<_, 5>(&mut r)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic; not an EEFL1 file".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version} (expected {VERSION})"
        )));
    }
    let fingerprint = read_u64(&mut r)?;
    let created_round = read_u64(&mut r)?;
    let count = read_u32(&mut r)? as usize;

    let mut segments = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        if name_len > 4096 {
            return Err(Error::Checkpoint(format!(
                "implausible name length {name_len}"
            )));
        }
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Checkpoint("segment name is not UTF-8".into()))?;
        let id = SegmentId::parse(&name)?;

        let ndims = read_u32(&mut r)? as usize;
        if ndims > 8 {
            return Err(Error::Checkpoint(format!("implausible rank {ndims}")));
        }
        let mut shape = Vec::with_capacity(ndims);
        for _ in 0..ndims {
            shape.push(read_u64(&mut r)? as usize);
        }
        let len = read_u64(&mut r)? as usize;
        if len != shape.iter().product::<usize>() {
            return Err(Error::Checkpoint(format!(
                "segment `{name}`: element count {len} does not match shape {shape:?}"
            )));
        }
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(f64::from_le_bytes(read_exact::<_, 8>(&mut r)?));
        }
        segments.push(Segment { id, shape, data });
    }

    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Checkpoint(
            "trailing bytes after last segment".into(),
        ));
    }

    let mut params = ParamSet::from_segments(segments);
    params.created_round = created_round;
    Ok((params, fingerprint))
}

pub fn save(path: &Path, params: &ParamSet, config_fingerprint: u64) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    write_to(&mut w, params, config_fingerprint)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(ParamSet, u64)> {
    let file = File::open(path)?;
    read_from(BufReader::new(file))
}

/// Load and require the checkpoint to match `expected_fingerprint`.
pub fn load_matching(path: &Path, expected_fingerprint: u64) -> Result<ParamSet> {
    let (params, fingerprint) = load(path)?;
    if fingerprint != expected_fingerprint {
        return Err(Error::Checkpoint(format!(
            "checkpoint fingerprint {fingerprint:#018x} does not match configuration {expected_fingerprint:#018x}"
        )));
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_model, ModelConfig};

    #[test]
    fn round_trip_is_bitwise_exact() {
        let config = ModelConfig::desk_scale();
        let mut params = init_model(&config).unwrap();
        params.created_round = 17;
        let fp = config.fingerprint();

        let mut bytes = Vec::new();
        write_to(&mut bytes, &params, fp).unwrap();
        let (loaded, loaded_fp) = read_from(bytes.as_slice()).unwrap();
        assert_eq!(loaded_fp, fp);
        assert_eq!(loaded.created_round, 17);
        assert_eq!(loaded, params);

        let mut again = Vec::new();
        write_to(&mut again, &loaded, loaded_fp).unwrap();
        assert_eq!(bytes, again);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.eefl1");
        let config = ModelConfig::desk_scale();
        let params = init_model(&config).unwrap();
        save(&path, &params, config.fingerprint()).unwrap();
        let loaded = load_matching(&path, config.fingerprint()).unwrap();
        assert_eq!(loaded, params);
    }

    #[test]
    fn rejects_bad_magic_and_mismatched_fingerprint() {
        let config = ModelConfig::desk_scale();
        let params = init_model(&config).unwrap();
        let mut bytes = Vec::new();
        write_to(&mut bytes, &params, 1).unwrap();

        let mut corrupted = bytes.clone();
        corrupted[0] = b'X';
        assert!(read_from(corrupted.as_slice()).is_err());

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.eefl1");
        save(&path, &params, 1).unwrap();
        assert!(load_matching(&path, 2).is_err());
    }

    #[test]
    fn rejects_truncation_and_trailing_garbage() {
        let config = ModelConfig::desk_scale();
        let params = init_model(&config).unwrap();
        let mut bytes = Vec::new();
        write_to(&mut bytes, &params, 0).unwrap();

        let truncated = &bytes[..bytes.len() - 3];
        assert!(read_from(truncated).is_err());

        let mut padded = bytes.clone();
        padded.push(0);
        assert!(read_from(padded.as_slice()).is_err());
    }
}
