//! Image quality metrics: PSNR and SSIM, in tonemapped and linear variants.
//!
//! The evaluation protocol for an HDR prediction against ground truth:
//!
//! 1. Normalize **both** images by the ground truth's maximum (never by the
//!    prediction's own maximum — that would let a dim prediction grade
//!    itself on a curve) and clamp to `[0, 1]`.
//! 2. *Linear* scores compare those directly; *tonemapped* scores compare
//!    them after μ-law compression, which weights the dark regions the way
//!    a display does.
//!
//! Identical images score `PSNR = +∞` and `SSIM = 1` exactly.

use crate::error::{Error, Result};
use crate::ops::{mu_law_tensor, MU};
use crate::tensor::Tensor;

/// SSIM window diameter.
pub const SSIM_WINDOW: usize = 11;
/// Standard deviation of the Gaussian window.
pub const SSIM_SIGMA: f64 = 1.5;
/// Luminance stabilizer `C1 = (K1·L)²` with `K1 = 0.01`, `L = 1`.
pub const SSIM_C1: f64 = 1e-4;
/// Contrast stabilizer `C2 = (K2·L)²` with `K2 = 0.03`, `L = 1`.
pub const SSIM_C2: f64 = 9e-4;

pub fn mse(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape(), "mse shapes differ");
    let n = a.numel() as f64;
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n
}

/// Peak signal-to-noise ratio in dB; `+∞` for identical inputs.
pub fn psnr(a: &Tensor<f64>, b: &Tensor<f64>, peak: f64) -> f64 {
    let e = mse(a, b);
    if e == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / e).log10()
    }
}

/// Normalized 1-D Gaussian window.
fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Valid-mode separable filtering of one `h × w` plane: rows then columns.
fn filter_valid(plane: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let r = k.len();
    let (oh, ow) = (h - r + 1, w - r + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            let mut s = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                s += plane[y * w + x + i] * kv;
            }
            rows[y * ow + x] = s;
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            let mut s = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                s += rows[(y + i) * ow + x] * kv;
            }
            out[y * ow + x] = s;
        }
    }
    out
}

/// Mean structural similarity over valid 11×11 windows, averaged across
/// channels. Inputs are `[C, H, W]` in `[0, 1]` with `H, W ≥ 11`.
pub fn ssim(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    let s = a.shape();
    assert_eq!(s, b.shape(), "ssim shapes differ");
    assert_eq!(s.len(), 3, "expected [C, H, W]");
    let (c, h, w) = (s[0], s[1], s[2]);
    assert!(
        h >= SSIM_WINDOW && w >= SSIM_WINDOW,
        "image {h}×{w} smaller than the {SSIM_WINDOW}×{SSIM_WINDOW} window"
    );
    let k = gaussian_window();
    let plane = h * w;
    let mut total = 0.0;
    for ch in 0..c {
        let x = &a.data()[ch * plane..(ch + 1) * plane];
        let y = &b.data()[ch * plane..(ch + 1) * plane];
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(y).map(|(p, q)| p * q).collect();
        let mx = filter_valid(x, h, w, &k);
        let my = filter_valid(y, h, w, &k);
        let mxx = filter_valid(&xx, h, w, &k);
        let myy = filter_valid(&yy, h, w, &k);
        let mxy = filter_valid(&xy, h, w, &k);
        let mut acc = 0.0;
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = mxx[i] - ux * ux;
            let vy = myy[i] - uy * uy;
            let cxy = mxy[i] - ux * uy;
            acc += (2.0 * ux * uy + SSIM_C1) * (2.0 * cxy + SSIM_C2)
                / ((ux * ux + uy * uy + SSIM_C1) * (vx + vy + SSIM_C2));
        }
        total += acc / mx.len() as f64;
    }
    total / c as f64
}

/// The four scores reported by evaluation: tonemapped and linear PSNR/SSIM.
#[derive(Debug, Clone, Copy)]
pub struct EvalScores {
    pub psnr_t: f64,
    pub ssim_t: f64,
    pub psnr_l: f64,
    pub ssim_l: f64,
}

/// Scores a predicted HDR image against ground truth per the protocol in the
/// module docs. Errors if shapes differ or the image is smaller than the
/// SSIM window.
pub fn evaluate(pred: &Tensor<f64>, gt: &Tensor<f64>) -> Result<EvalScores> {
    if pred.shape() != gt.shape() {
        return Err(Error::Validation(format!(
            "prediction shape {:?} does not match ground truth {:?}",
            pred.shape(),
            gt.shape()
        )));
    }
    let s = gt.shape();
    if s.len() != 3 || s[1] < SSIM_WINDOW || s[2] < SSIM_WINDOW {
        return Err(Error::Validation(format!(
            "evaluation needs [C, H, W] images at least {SSIM_WINDOW} pixels on a side, got {s:?}"
        )));
    }
    let peak = gt.max_value().max(1e-12);
    let norm = |t: &Tensor<f64>| t.map(|v| (v / peak).clamp(0.0, 1.0));
    let (p, g) = (norm(pred), norm(gt));
    let (pt, gtt) = (mu_law_tensor(&p, MU), mu_law_tensor(&g, MU));
    Ok(EvalScores {
        psnr_t: psnr(&pt, &gtt, 1.0),
        ssim_t: ssim(&pt, &gtt),
        psnr_l: psnr(&p, &g, 1.0),
        ssim_l: ssim(&p, &g),
    })
}
