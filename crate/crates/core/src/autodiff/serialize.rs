//! Single-file parameter bundle: a JSON manifest followed by a binary
//! parameter section. All integers and floats are little-endian.
//!
//! ```text
//! magic        4 bytes   "CXPB"
//! version      u32       1
//! manifest_len u64
//! manifest     manifest_len bytes of UTF-8 JSON
//! count        u32       number of parameters
//! per parameter:
//!   name_len   u32
//!   name       name_len bytes UTF-8
//!   ndim       u32
//!   dims       ndim × u64
//!   trainable  u8 (0 or 1)
//!   payload    product(dims) × f64
//! ```

use std::io::{Read, Write};

use crate::autodiff::{ParamSet, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CXPB";
pub const VERSION: u32 = 1;

pub fn write_bundle<W: Write>(
    mut w: W,
    manifest: &serde_json::Value,
    params: &ParamSet,
) -> Result<()> {
    let manifest = serde_json::to_vec(manifest)?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(manifest.len() as u64).to_le_bytes())?;
    w.write_all(&manifest)?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for p in params.entries() {
        let name = p.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&(p.value.shape().len() as u32).to_le_bytes())?;
        for d in p.value.shape() {
            w.write_all(&(*d as u64).to_le_bytes())?;
        }
        w.write_all(&[p.trainable as u8])?;
        let mut buf = Vec::with_capacity(p.value.len() * 8);
        for v in p.value.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_bundle<R: Read>(mut r: R) -> Result<(serde_json::Value, ParamSet)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let mlen = read_u64(&mut r)? as usize;
    let mut manifest = vec![0u8; mlen];
    r.read_exact(&mut manifest)?;
    let manifest: serde_json::Value = serde_json::from_slice(&manifest)?;
    let count = read_u32(&mut r)?;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let nlen = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; nlen];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| Error::Format(e.to_string()))?;
        let ndim = read_u32(&mut r)? as usize;
        let dims = (0..ndim)
            .map(|_| read_u64(&mut r).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)?;
        let numel: usize = dims.iter().product();
        let mut raw = vec![0u8; numel * 8];
        r.read_exact(&mut raw)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if params.id(&name).is_some() {
            return Err(Error::Format(format!("duplicate parameter {name}")));
        }
        params.insert(name, Tensor::new(dims, data)?, flag[0] != 0);
    }
    Ok((manifest, params))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundle_round_trip_is_bitwise() {
        let mut ps = ParamSet::new();
        ps.insert(
            "a",
            Tensor::new(vec![2, 2], vec![1.0, -0.0, f64::MIN_POSITIVE, 3.5]).unwrap(),
            true,
        );
        ps.insert("b.c", Tensor::row(vec![0.1, 0.2, 0.3]), false);
        let manifest = serde_json::json!({"kind": "test", "n": 3});
        let mut buf = Vec::new();
        write_bundle(&mut buf, &manifest, &ps).unwrap();
        let (m2, ps2) = read_bundle(buf.as_slice()).unwrap();
        assert_eq!(m2, manifest);
        assert_eq!(ps2.content_hash(), ps.content_hash());
        assert!(!ps2.entries()[1].trainable);
        assert_eq!(
            ps2.entries()[0].value.data()[1].to_bits(),
            (-0.0f64).to_bits()
        );
    }

    #[test]
    fn truncated_and_foreign_files_rejected() {
        let mut buf = Vec::new();
        write_bundle(&mut buf, &serde_json::json!({}), &ParamSet::new()).unwrap();
        assert!(read_bundle(&buf[..buf.len() - 1]).is_err());
        assert!(matches!(
            read_bundle(&b"NOPE0000"[..]),
            Err(Error::Format(_))
        ));
    }
}
