//! Image file I/O.
//!
//! Two formats, both chosen for having headers a human can read in a hex
//! dump:
//!
//! * **PPM (P6)** — 8-bit RGB, used for the LDR exposures. Values map to
//!   `[0, 1]` by dividing by 255.
//! * **PFM** — 32-bit float RGB, used for HDR radiance maps. Round trips are
//!   bit-identical.
//!
//! Disk pixels are interleaved RGB; tensors in this crate are planar
//! `[3, H, W]`. The conversion happens here and nowhere else. Both readers
//! report malformed files with the byte offset where parsing stopped.

mod pfm;
mod ppm;

pub use pfm::{read_pfm, write_pfm};
pub use ppm::{read_ppm, write_ppm};

use std::path::Path;

use crate::error::{Error, Result};
use crate::ops::mu_law_tensor;
use crate::tensor::Tensor;

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Header tokenizer shared by both parsers: ASCII tokens separated by
/// whitespace, with optional `#`-to-newline comments (PPM allows them, PFM
/// does not).
pub(crate) struct Cursor<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
    pub path: &'a Path,
    pub allow_comments: bool,
}

impl<'a> Cursor<'a> {
    pub fn err(&self, msg: impl Into<String>) -> Error {
        Error::format(self.path, self.pos, msg)
    }

    pub fn skip_separators(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' && self.allow_comments {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else {
                break;
            }
        }
    }

    fn token(&mut self, what: &str) -> Result<&'a str> {
        self.skip_separators();
        let start = self.pos;
        while self
            .bytes
            .get(self.pos)
            .is_some_and(|b| !b.is_ascii_whitespace())
        {
            self.pos += 1;
        }
        if self.pos == start {
            return Err(self.err(format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .map_err(|_| Error::format(self.path, start, format!("{what} is not ASCII")))
    }

    pub fn decimal(&mut self, what: &str) -> Result<usize> {
        let tok = self.token(what)?;
        tok.parse()
            .map_err(|_| self.err(format!("bad {what} `{tok}`")))
    }

    pub fn float(&mut self, what: &str) -> Result<f32> {
        let tok = self.token(what)?;
        tok.parse()
            .map_err(|_| self.err(format!("bad {what} `{tok}`")))
    }

    /// Consumes the single whitespace byte that separates header from pixel
    /// data.
    pub fn data_separator(&mut self) -> Result<()> {
        match self.bytes.get(self.pos) {
            Some(b) if b.is_ascii_whitespace() => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(self.err("expected single whitespace before pixel data")),
        }
    }
}

/// Replicates a single-channel `[1, H, W]` map to `[3, H, W]` so it can be
/// written as an RGB image for inspection.
pub fn gray_to_rgb(t: &Tensor<f32>) -> Tensor<f32> {
    let s = t.shape();
    assert_eq!(s.len(), 3);
    assert_eq!(s[0], 1, "expected a single-channel map");
    let (h, w) = (s[1], s[2]);
    Tensor::from_fn([3, h, w], |i| t.data()[i % (h * w)])
}

/// Display transform for an HDR map: normalize by the image maximum, compress
/// with the μ-law curve used throughout training, clamp to `[0, 1]`.
///
/// This is for previews only — quantitative comparisons go through the
/// metrics module, which never normalizes an image by its own maximum.
pub fn tonemap_preview(hdr: &Tensor<f32>) -> Tensor<f32> {
    let peak = hdr.max_value().max(1e-12);
    let scaled = hdr.map(|v| (v / peak).clamp(0.0, 1.0));
    mu_law_tensor(&scaled, 5000.0)
}
