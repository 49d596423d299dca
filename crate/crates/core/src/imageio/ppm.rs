//! Binary PPM (magic `P6`), maxval 255 only.
//!
//! Header grammar: `P6`, then width, height and maxval as ASCII decimals
//! separated by whitespace, with `#`-to-end-of-line comments allowed wherever
//! whitespace is. Exactly one whitespace byte separates the maxval from the
//! pixel bytes.

use std::path::Path;

use crate::error::Result;
use crate::tensor::Tensor;

use super::{read_bytes, write_bytes, Cursor};

/// Reads an 8-bit RGB image into a planar `[3, H, W]` tensor scaled to
/// `[0, 1]` (divide by 255).
pub fn read_ppm(path: &Path) -> Result<Tensor<f32>> {
    let bytes = read_bytes(path)?;
    let mut cur = Cursor {
        bytes: &bytes,
        pos: 0,
        path,
        allow_comments: true,
    };
    if !bytes.starts_with(b"P6") {
        return Err(cur.err("not a binary PPM (magic `P6` missing)"));
    }
    cur.pos = 2;
    let w = cur.decimal("width")?;
    let h = cur.decimal("height")?;
    let maxval = cur.decimal("maxval")?;
    if maxval != 255 {
        return Err(cur.err(format!("unsupported maxval {maxval}, expected 255")));
    }
    if w == 0 || h == 0 {
        return Err(cur.err("zero image dimension"));
    }
    cur.data_separator()?;
    let need = 3 * w * h;
    let data = &bytes[cur.pos.min(bytes.len())..];
    if data.len() < need {
        cur.pos = bytes.len();
        return Err(cur.err(format!(
            "pixel data truncated: need {need} bytes, have {}",
            data.len()
        )));
    }
    // Interleaved rows top-to-bottom on disk → planar channels.
    let mut out = vec![0.0f32; need];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                out[c * h * w + y * w + x] =
                    data[(y * w + x) * 3 + c] as f32 / 255.0;
            }
        }
    }
    Ok(Tensor::from_vec([3, h, w], out))
}

/// Writes a `[3, H, W]` tensor with values in `[0, 1]` as binary PPM,
/// rounding to the nearest 8-bit level. Values outside `[0, 1]` are clamped.
pub fn write_ppm(path: &Path, image: &Tensor<f32>) -> Result<()> {
    let s = image.shape();
    assert_eq!(s.len(), 3, "expected [3, H, W]");
    assert_eq!(s[0], 3, "expected 3 channels");
    let (h, w) = (s[1], s[2]);
    let mut bytes = format!("P6\n{w} {h}\n255\n").into_bytes();
    let plane = h * w;
    let data = image.data();
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let v = data[c * plane + y * w + x].clamp(0.0, 1.0);
                bytes.push((v * 255.0).round() as u8);
            }
        }
    }
    write_bytes(path, &bytes)
}
