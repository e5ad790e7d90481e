//! Image dumps as binary 8-bit portable graymaps.

use std::fs;
use std::path::Path;

use super::generate::CounterfactualPair;
use crate::error::{contract, Result};
use crate::scm::glyph::SIDE;

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Encodes `[0, 1]` pixels, row-major `height x width`, as a P5 graymap.
/// A non-empty `comment` becomes a `#` line after the magic number.
pub fn encode_pgm(pixels: &[f64], width: usize, height: usize, comment: &str) -> Result<Vec<u8>> {
    if pixels.len() != width * height {
        return contract(format!("{} pixels for a {width}x{height} image", pixels.len()));
    }
    if comment.contains('\n') {
        return contract("graymap comments must be a single line");
    }
    let mut out = b"P5\n".to_vec();
    if !comment.is_empty() {
        out.extend_from_slice(format!("# {comment}\n").as_bytes());
    }
    out.extend_from_slice(format!("{width} {height}\n255\n").as_bytes());
    out.extend(pixels.iter().map(|v| to_byte(*v)));
    Ok(out)
}

/// Factual, counterfactual and difference panels side by side, separated by
/// one-pixel white columns. The difference is drawn as `0.5 + (x_cf - x) / 2`.
pub fn triplet_pixels(pair: &CounterfactualPair) -> Result<(Vec<f64>, usize, usize)> {
    if pair.x.len() != SIDE * SIDE || pair.x_cf.len() != SIDE * SIDE {
        return contract(format!("triplet dump needs {SIDE}x{SIDE} images"));
    }
    let width = 3 * SIDE + 2;
    let mut px = vec![1.0; width * SIDE];
    for r in 0..SIDE {
        for c in 0..SIDE {
            let i = r * SIDE + c;
            px[r * width + c] = pair.x[i];
            px[r * width + SIDE + 1 + c] = pair.x_cf[i];
            px[r * width + 2 * SIDE + 2 + c] = 0.5 + 0.5 * (pair.x_cf[i] - pair.x[i]);
        }
    }
    Ok((px, width, SIDE))
}

pub fn write_triplet(path: &Path, pair: &CounterfactualPair, comment: &str) -> Result<()> {
    let (px, w, h) = triplet_pixels(pair)?;
    fs::write(path, encode_pgm(&px, w, h, comment)?)?;
    Ok(())
}
