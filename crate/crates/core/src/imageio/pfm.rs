//! PFM: uncompressed 32-bit float RGB.
//!
//! Layout: magic `PF`, width, height, then a scale float whose *sign* encodes
//! endianness (negative → little-endian). Pixel rows run **bottom to top**,
//! interleaved RGB within a row. The magnitude of the scale factor is
//! ignored on read — absolute radiometric calibration carries no meaning for
//! the data in this project — and written as `-1.0`.
//!
//! Writes refuse non-finite values: an HDR result containing NaN or ±∞ is a
//! numerical failure upstream, and silently persisting it would launder the
//! bug into the file.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{read_bytes, write_bytes, Cursor};

/// Reads a color PFM into a planar `[3, H, W]` tensor (top row first).
pub fn read_pfm(path: &Path) -> Result<Tensor<f32>> {
    let bytes = read_bytes(path)?;
    let mut cur = Cursor {
        bytes: &bytes,
        pos: 0,
        path,
        allow_comments: false,
    };
    if bytes.starts_with(b"Pf") {
        return Err(cur.err("grayscale PFM not supported, expected color magic `PF`"));
    }
    if !bytes.starts_with(b"PF") {
        return Err(cur.err("not a PFM (magic `PF` missing)"));
    }
    cur.pos = 2;
    let w = cur.decimal("width")?;
    let h = cur.decimal("height")?;
    let scale = cur.float("scale")?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(cur.err(format!("bad scale {scale}: must be finite and nonzero")));
    }
    if w == 0 || h == 0 {
        return Err(cur.err("zero image dimension"));
    }
    cur.data_separator()?;
    let little_endian = scale < 0.0;
    let need = 12 * w * h;
    let data = &bytes[cur.pos..];
    if data.len() < need {
        cur.pos = bytes.len();
        return Err(cur.err(format!(
            "pixel data truncated: need {need} bytes, have {}",
            data.len()
        )));
    }
    let mut out = vec![0.0f32; 3 * w * h];
    for file_row in 0..h {
        let y = h - 1 - file_row; // bottom row comes first on disk
        for x in 0..w {
            for c in 0..3 {
                let o = (file_row * w + x) * 12 + c * 4;
                let raw: [u8; 4] = data[o..o + 4].try_into().unwrap();
                out[c * h * w + y * w + x] = if little_endian {
                    f32::from_le_bytes(raw)
                } else {
                    f32::from_be_bytes(raw)
                };
            }
        }
    }
    Ok(Tensor::from_vec([3, h, w], out))
}

/// Writes a `[3, H, W]` tensor as little-endian color PFM. Round trips
/// through [`read_pfm`] are bit-identical. Non-finite values are an error.
pub fn write_pfm(path: &Path, image: &Tensor<f32>) -> Result<()> {
    let s = image.shape();
    assert_eq!(s.len(), 3, "expected [3, H, W]");
    assert_eq!(s[0], 3, "expected 3 channels");
    let (h, w) = (s[1], s[2]);
    let data = image.data();
    let plane = h * w;
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        let (c, rest) = (i / plane, i % plane);
        return Err(Error::Numerical(format!(
            "refusing to write non-finite value {} at channel {c}, pixel ({}, {}) of {}",
            data[i],
            rest / w,
            rest % w,
            path.display(),
        )));
    }
    let mut bytes = format!("PF\n{w} {h}\n-1.0\n").into_bytes();
    for file_row in 0..h {
        let y = h - 1 - file_row;
        for x in 0..w {
            for c in 0..3 {
                bytes.extend_from_slice(&data[c * plane + y * w + x].to_le_bytes());
            }
        }
    }
    write_bytes(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::{rng_from, uniform};
    use proptest::prelude::*;

    fn tmp(name: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(name);
        (dir, path)
    }

    fn bits(t: &Tensor<f32>) -> Vec<u32> {
        t.iter().map(|v| v.to_bits()).collect()
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let mut rng = rng_from(5);
        let img: Tensor<f32> = uniform([3, 4, 6], -3.0, 40.0, &mut rng);
        let (_dir, path) = tmp("rt.pfm");
        write_pfm(&path, &img).unwrap();
        let back = read_pfm(&path).unwrap();
        assert_eq!(back.shape(), img.shape());
        assert_eq!(bits(&back), bits(&img));
    }

    #[test]
    fn subnormals_and_zeros_survive() {
        let img = Tensor::from_vec(
            [3, 1, 1],
            vec![0.0f32, f32::MIN_POSITIVE / 8.0, -1.0e-39],
        );
        let (_dir, path) = tmp("sub.pfm");
        write_pfm(&path, &img).unwrap();
        assert_eq!(bits(&read_pfm(&path).unwrap()), bits(&img));
    }

    #[test]
    fn big_endian_files_are_read() {
        let (_dir, path) = tmp("be.pfm");
        let mut bytes = b"PF\n1 1\n1.0\n".to_vec();
        for v in [1.5f32, -2.0, 0.25] {
            bytes.extend_from_slice(&v.to_be_bytes());
        }
        std::fs::write(&path, bytes).unwrap();
        let img = read_pfm(&path).unwrap();
        assert_eq!(img.data(), &[1.5, -2.0, 0.25]);
    }

    #[test]
    fn rows_are_stored_bottom_to_top() {
        // 1×2 image: top pixel 10, bottom pixel 20 (all channels alike).
        let img = Tensor::from_vec([3, 2, 1], vec![10.0f32, 20.0, 10.0, 20.0, 10.0, 20.0]);
        let (_dir, path) = tmp("flip.pfm");
        write_pfm(&path, &img).unwrap();
        let raw = std::fs::read(&path).unwrap();
        let header = b"PF\n1 2\n-1.0\n".len();
        let first = f32::from_le_bytes(raw[header..header + 4].try_into().unwrap());
        assert_eq!(first, 20.0, "bottom row must come first in the file");
        assert_eq!(bits(&read_pfm(&path).unwrap()), bits(&img));
    }

    #[test]
    fn nan_write_is_refused() {
        let img = Tensor::from_vec([3, 1, 1], vec![1.0f32, f32::NAN, 0.0]);
        let (_dir, path) = tmp("nan.pfm");
        match write_pfm(&path, &img) {
            Err(Error::Numerical(msg)) => {
                assert!(msg.contains("channel 1"), "{msg}");
                assert!(!path.exists(), "no partial file may be left behind");
            }
            other => panic!("expected numerical error, got {other:?}"),
        }
    }

    #[test]
    fn grayscale_magic_is_rejected() {
        let (_dir, path) = tmp("gray.pfm");
        std::fs::write(&path, b"Pf\n1 1\n-1.0\n\0\0\0\0").unwrap();
        let err = read_pfm(&path).unwrap_err();
        assert!(err.to_string().contains("grayscale"), "{err}");
    }

    #[test]
    fn truncated_data_reports_offset() {
        let (_dir, path) = tmp("short.pfm");
        let mut bytes = b"PF\n2 1\n-1.0\n".to_vec();
        bytes.extend_from_slice(&[0; 10]); // 10 of 24 bytes
        let len = bytes.len();
        std::fs::write(&path, bytes).unwrap();
        match read_pfm(&path) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, len),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn prop_round_trip_exact_bits(
            w in 1usize..5,
            h in 1usize..5,
            seed in 0u64..1000,
        ) {
            let mut rng = rng_from(seed);
            let img: Tensor<f32> = uniform([3, h, w], -1.0e6, 1.0e6, &mut rng);
            let (_dir, path) = tmp("prop.pfm");
            write_pfm(&path, &img).unwrap();
            prop_assert_eq!(bits(&read_pfm(&path).unwrap()), bits(&img));
        }
    }
}
