//! Persisted counterfactual datasets.
//!
//! Little-endian layout:
//!
//! ```text
//! magic  b"CFCF"
//! u32    version (1)
//! u32    config-hash length, then the hash bytes
//! u32    m
//! u32    count
//! count x { i32 y, i32 y_cf, f64 s, m x f64 x, m x f64 x_cf, m x f64 latent }
//! ```

use std::fs;
use std::path::Path;

use crate::cf_engine::CounterfactualPair;
use crate::error::{Error, Result};

pub const CF_MAGIC: &[u8; 4] = b"CFCF";
pub const CF_VERSION: u32 = 1;

pub fn encode_pairs(config_hash: &str, pairs: &[CounterfactualPair]) -> Result<Vec<u8>> {
    let m = pairs.first().map_or(0, |p| p.x.len());
    let mut buf = Vec::new();
    buf.extend_from_slice(CF_MAGIC);
    buf.extend_from_slice(&CF_VERSION.to_le_bytes());
    buf.extend_from_slice(&(config_hash.len() as u32).to_le_bytes());
    buf.extend_from_slice(config_hash.as_bytes());
    buf.extend_from_slice(&(m as u32).to_le_bytes());
    buf.extend_from_slice(&(pairs.len() as u32).to_le_bytes());
    for p in pairs {
        if p.x.len() != m || p.x_cf.len() != m || p.latent.len() != m {
            return Err(Error::Shape {
                op: "encode_pairs",
                expected: vec![m, m, m],
                got: vec![p.x.len(), p.x_cf.len(), p.latent.len()],
            });
        }
        buf.extend_from_slice(&(p.y as i32).to_le_bytes());
        buf.extend_from_slice(&(p.y_cf as i32).to_le_bytes());
        buf.extend_from_slice(&p.s.to_le_bytes());
        for v in p.x.iter().chain(&p.x_cf).chain(&p.latent) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(buf)
}

/// Returns the producing config hash and the pairs.
pub fn decode_pairs(bytes: &[u8], path: &Path) -> Result<(String, Vec<CounterfactualPair>)> {
    let mut pos = 0usize;
    let bad = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    let mut take = |n: usize| -> Result<&[u8]> {
        if pos + n > bytes.len() {
            return Err(bad(format!("truncated at byte {pos}")));
        }
        pos += n;
        Ok(&bytes[pos - n..pos])
    };
    if take(4)? != CF_MAGIC {
        return Err(bad("bad magic".into()));
    }
    let u32_of = |b: &[u8]| u32::from_le_bytes(b.try_into().unwrap());
    let version = u32_of(take(4)?);
    if version != CF_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let hlen = u32_of(take(4)?) as usize;
    let hash = String::from_utf8(take(hlen)?.to_vec()).map_err(|_| bad("config hash is not UTF-8".into()))?;
    let m = u32_of(take(4)?) as usize;
    let count = u32_of(take(4)?) as usize;
    let mut pairs = Vec::with_capacity(count);
    for _ in 0..count {
        let y = i32::from_le_bytes(take(4)?.try_into().unwrap());
        let y_cf = i32::from_le_bytes(take(4)?.try_into().unwrap());
        if y < 0 || y_cf < 0 {
            return Err(bad(format!("negative label {y} / {y_cf}")));
        }
        let s = f64::from_le_bytes(take(8)?.try_into().unwrap());
        let mut vecs = Vec::with_capacity(3);
        for _ in 0..3 {
            let raw = take(8 * m)?;
            vecs.push(
                raw.chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect::<Vec<f64>>(),
            );
        }
        let latent = vecs.pop().expect("three vectors");
        let x_cf = vecs.pop().expect("three vectors");
        let x = vecs.pop().expect("three vectors");
        pairs.push(CounterfactualPair {
            x,
            y: y as usize,
            y_cf: y_cf as usize,
            x_cf,
            s,
            latent,
            x_cf_true: None,
        });
    }
    if pos != bytes.len() {
        return Err(bad(format!("{} trailing bytes", bytes.len() - pos)));
    }
    Ok((hash, pairs))
}

pub fn write_pairs(path: &Path, config_hash: &str, pairs: &[CounterfactualPair]) -> Result<()> {
    fs::write(path, encode_pairs(config_hash, pairs)?)?;
    Ok(())
}

pub fn read_pairs(path: &Path) -> Result<(String, Vec<CounterfactualPair>)> {
    decode_pairs(&fs::read(path)?, path)
}
