//! Binary image encoding: 24-bit PPM (P6) for rendered RGB frames and
//! 8-bit PGM (P5) for heatmaps, plus a small parser used to verify
//! round-trips.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::{real, Real};
use crate::tensor::Tensor;

fn quantize<S: Real>(v: S) -> u8 {
    let clamped = v.max(S::zero()).min(S::one());
    (clamped * real::<S>(255.0))
        .round()
        .to_u64()
        .unwrap_or(0)
        .min(255) as u8
}

/// Encode an `[height, width, 3]` tensor of unit-range channel values as a
/// binary PPM (P6, maxval 255).
pub fn ppm_bytes<S: Real>(image: &Tensor<S>) -> Result<Vec<u8>> {
    let shape = image.shape();
    if shape.len() != 3 || shape[2] != 3 {
        return Err(Error::ShapeMismatch(format!(
            "PPM needs an [h, w, 3] image, got {shape:?}"
        )));
    }
    let (h, w) = (shape[0], shape[1]);
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(h * w * 3);
    for &v in image.data() {
        out.push(quantize(v));
    }
    Ok(out)
}

pub fn write_ppm<S: Real>(path: &Path, image: &Tensor<S>) -> Result<()> {
    fs::write(path, ppm_bytes(image)?)?;
    Ok(())
}

/// Encode a `rows x cols` grid of non-negative values as a binary PGM
/// (P5, maxval 255). When `rescale` is set the values are divided by
/// their maximum first, so the hottest cell maps to 255; an all-zero grid
/// stays black.
pub fn pgm_bytes<S: Real>(rows: usize, cols: usize, values: &[S], rescale: bool) -> Result<Vec<u8>> {
    if values.len() != rows * cols {
        return Err(Error::ShapeMismatch(format!(
            "expected {rows}x{cols} = {} values, got {}",
            rows * cols,
            values.len()
        )));
    }
    let scale = if rescale {
        let mut max = S::zero();
        for &v in values {
            if !v.is_finite() || v < S::zero() {
                return Err(Error::InvalidInput(
                    "PGM rescaling needs finite non-negative values".into(),
                ));
            }
            max = max.max(v);
        }
        if max > S::zero() {
            S::one() / max
        } else {
            S::one()
        }
    } else {
        S::one()
    };
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    out.reserve(rows * cols);
    for &v in values {
        out.push(quantize(v * scale));
    }
    Ok(out)
}

pub fn write_pgm<S: Real>(
    path: &Path,
    rows: usize,
    cols: usize,
    values: &[S],
    rescale: bool,
) -> Result<()> {
    fs::write(path, pgm_bytes(rows, cols, values, rescale)?)?;
    Ok(())
}

/// A decoded binary PNM frame; `channels` is 3 for P6 and 1 for P5.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PnmImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub pixels: Vec<u8>,
}

/// Parse a binary PPM/PGM with maxval 255. Header whitespace and
/// `#` comments are accepted per the format.
pub fn parse_pnm(bytes: &[u8]) -> Result<PnmImage> {
    let mut pos = 0usize;
    let mut next_token = |bytes: &[u8]| -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Parse("truncated PNM header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = next_token(bytes)?;
    let channels = match magic.as_str() {
        "P6" => 3,
        "P5" => 1,
        other => return Err(Error::Parse(format!("unsupported PNM magic `{other}`"))),
    };
    let width: usize = next_token(bytes)?
        .parse()
        .map_err(|e| Error::Parse(format!("bad PNM width: {e}")))?;
    let height: usize = next_token(bytes)?
        .parse()
        .map_err(|e| Error::Parse(format!("bad PNM height: {e}")))?;
    let maxval: usize = next_token(bytes)?
        .parse()
        .map_err(|e| Error::Parse(format!("bad PNM maxval: {e}")))?;
    if maxval != 255 {
        return Err(Error::Parse(format!("unsupported PNM maxval {maxval}")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let need = width * height * channels;
    if bytes.len() < pos || bytes.len() - pos != need {
        return Err(Error::Parse(format!(
            "PNM raster has {} bytes, expected {need}",
            bytes.len().saturating_sub(pos)
        )));
    }
    Ok(PnmImage {
        width,
        height,
        channels,
        pixels: bytes[pos..].to_vec(),
    })
}
