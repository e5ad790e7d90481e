//! Dataset persistence.
//!
//! Binary layout, little-endian throughout:
//!
//! ```text
//! magic  b"CFDS"
//! u32    version (1)
//! u32    K (number of classes)
//! u32    m (image dimension)
//! u32    count
//! count x { i32 y, 4 x f64 n, m x f64 u_x, m x f64 x }
//! ```
//!
//! A sidecar `<file>.manifest` holds `key = value` lines describing the spec,
//! seed and producing configuration.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::image::{ScmSample, ScmSpec, STYLE_DIM};
use crate::error::{Error, Result};

pub const DATASET_MAGIC: &[u8; 4] = b"CFDS";
pub const DATASET_VERSION: u32 = 1;

pub fn encode_samples(spec: &ScmSpec, samples: &[ScmSample]) -> Result<Vec<u8>> {
    let m = spec.image_dim;
    let mut buf = Vec::with_capacity(20 + samples.len() * (4 + 8 * (STYLE_DIM + 2 * m)));
    buf.extend_from_slice(DATASET_MAGIC);
    buf.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    buf.extend_from_slice(&(spec.num_classes as u32).to_le_bytes());
    buf.extend_from_slice(&(m as u32).to_le_bytes());
    buf.extend_from_slice(&(samples.len() as u32).to_le_bytes());
    for s in samples {
        if s.n.len() != STYLE_DIM || s.u_x.len() != m || s.x.len() != m {
            return Err(Error::Shape {
                op: "encode_samples",
                expected: vec![STYLE_DIM, m, m],
                got: vec![s.n.len(), s.u_x.len(), s.x.len()],
            });
        }
        buf.extend_from_slice(&(s.y as i32).to_le_bytes());
        for v in s.n.iter().chain(&s.u_x).chain(&s.x) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(buf)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format {
                path: self.path.to_path_buf(),
                reason: format!("truncated at byte {}", self.pos),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(8 * n)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

/// Decodes a dataset; returns `(K, m, samples)`.
pub fn decode_samples(bytes: &[u8], path: &Path) -> Result<(usize, usize, Vec<ScmSample>)> {
    let bad = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(4)? != DATASET_MAGIC {
        return Err(bad("bad magic".into()));
    }
    let version = r.u32()?;
    if version != DATASET_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let k = r.u32()? as usize;
    let m = r.u32()? as usize;
    let count = r.u32()? as usize;
    let mut samples = Vec::with_capacity(count);
    for _ in 0..count {
        let y = r.i32()?;
        if y < 0 || y as usize >= k {
            return Err(bad(format!("label {y} out of range")));
        }
        let n = r.f64s(STYLE_DIM)?;
        let u_x = r.f64s(m)?;
        let x = r.f64s(m)?;
        samples.push(ScmSample {
            y: y as usize,
            n,
            u_x,
            u_y: None,
            u_n: None,
            x,
        });
    }
    if r.pos != bytes.len() {
        return Err(bad(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok((k, m, samples))
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}

/// Writes the dataset file and its manifest. `extra` entries are appended to
/// the manifest after the spec fields.
pub fn write_dataset(
    path: &Path,
    spec: &ScmSpec,
    samples: &[ScmSample],
    seed: u64,
    extra: &[(&str, String)],
) -> Result<()> {
    let bytes = encode_samples(spec, samples)?;
    fs::write(path, bytes)?;
    let mut w = BufWriter::new(fs::File::create(manifest_path(path))?);
    writeln!(w, "format = CFDS")?;
    writeln!(w, "version = {DATASET_VERSION}")?;
    writeln!(w, "num_classes = {}", spec.num_classes)?;
    writeln!(w, "image_dim = {}", spec.image_dim)?;
    writeln!(w, "count = {}", samples.len())?;
    writeln!(w, "sigma_x = {}", spec.sigma_x)?;
    writeln!(w, "intensity_min = {}", spec.intensity_range.0)?;
    writeln!(w, "intensity_max = {}", spec.intensity_range.1)?;
    writeln!(w, "seed = {seed}")?;
    for (k, v) in extra {
        writeln!(w, "{k} = {v}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<(usize, usize, Vec<ScmSample>)> {
    let bytes = fs::read(path)?;
    decode_samples(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scm::image::sample_scm;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn encode_decode_is_bit_exact(seeds in prop::collection::vec(any::<u64>(), 0..6)) {
            let spec = ScmSpec::default();
            let samples: Vec<ScmSample> = seeds.iter().map(|&s| {
                let mut x = sample_scm(&spec, s).unwrap();
                x.u_y = None;
                x.u_n = None;
                x
            }).collect();
            let bytes = encode_samples(&spec, &samples).unwrap();
            let (k, m, back) = decode_samples(&bytes, Path::new("mem")).unwrap();
            prop_assert_eq!(k, spec.num_classes);
            prop_assert_eq!(m, spec.image_dim);
            prop_assert_eq!(encode_samples(&spec, &back).unwrap(), bytes);
            prop_assert_eq!(back, samples);
        }
    }

    #[test]
    fn header_layout() {
        let spec = ScmSpec::default();
        let s = sample_scm(&spec, 0).unwrap();
        let bytes = encode_samples(&spec, &[s.clone()]).unwrap();
        assert_eq!(&bytes[..4], b"CFDS");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 6);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 256);
        assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 1);
        assert_eq!(i32::from_le_bytes(bytes[20..24].try_into().unwrap()), s.y as i32);
        assert_eq!(bytes.len(), 20 + 4 + 8 * (4 + 512));
    }

    #[test]
    fn rejects_corruption() {
        let spec = ScmSpec::default();
        let bytes = encode_samples(&spec, &[sample_scm(&spec, 0).unwrap()]).unwrap();
        let p = Path::new("mem");
        assert!(decode_samples(&bytes[..bytes.len() - 1], p).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_samples(&bad, p).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(decode_samples(&extra, p).is_err());
    }
}
