//! Brute-force reference implementations of the four structured ops, plus
//! seeded sweep drivers that compare them against the fast graph ops on
//! random instances.
//!
//! Everything here is written as plain nested loops straight from the
//! operator definitions, sharing no lowering code (im2col, GEMM, chunking)
//! with the implementations under test, so agreement is meaningful evidence
//! and not two copies of the same mistake.

use hdrfuse_core::ops::{
    bilinear_sample, contextual_attention, conv2d, deform_conv, ConvSpec, GRID, TAPS,
};
use hdrfuse_core::{Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const NORM_EPS: f64 = 1e-8;
const DEGENERATE_EPS: f64 = 1e-6;

/// Outcome of one sweep: how many random instances ran and the worst
/// elementwise disagreement seen across all of them.
pub struct OracleReport {
    pub instances: usize,
    pub max_abs_err: f64,
}

// ---------------------------------------------------------------------------
// Naive operators
// ---------------------------------------------------------------------------

/// Direct five-loop convolution with zero padding, stride and dilation.
/// `out[co, oy, ox] = b[co] + Σ w[co, ci, ky, kx] · x[ci, oy·s + ky·d − p, ox·s + kx·d − p]`.
pub fn naive_conv2d(
    x: &Tensor<f64>,
    weight: &Tensor<f64>,
    bias: &Tensor<f64>,
    spec: ConvSpec,
) -> Tensor<f64> {
    let (c_in, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (c_out, kh, kw) = (weight.shape()[0], weight.shape()[2], weight.shape()[3]);
    let span_h = spec.dilation * (kh - 1) + 1;
    let span_w = spec.dilation * (kw - 1) + 1;
    let oh = (h + 2 * spec.padding - span_h) / spec.stride + 1;
    let ow = (w + 2 * spec.padding - span_w) / spec.stride + 1;
    let (xd, wd, bd) = (x.data(), weight.data(), bias.data());
    let mut out = vec![0.0; c_out * oh * ow];
    for co in 0..c_out {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = bd[co];
                for ci in 0..c_in {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (oy * spec.stride + ky * spec.dilation) as isize
                                - spec.padding as isize;
                            let ix = (ox * spec.stride + kx * spec.dilation) as isize
                                - spec.padding as isize;
                            if iy < 0 || iy >= h as isize || ix < 0 || ix >= w as isize {
                                continue;
                            }
                            acc += wd[((co * c_in + ci) * kh + ky) * kw + kx]
                                * xd[(ci * h + iy as usize) * w + ix as usize];
                        }
                    }
                }
                out[(co * oh + oy) * ow + ox] = acc;
            }
        }
    }
    Tensor::from_vec([c_out, oh, ow], out)
}

/// One bilinear read from a single channel plane, zero outside the image.
fn sample_plane(plane: &[f64], h: usize, w: usize, y: f64, x: f64) -> f64 {
    let y0f = y.floor();
    let x0f = x.floor();
    let (ty, tx) = (y - y0f, x - x0f);
    let (y0, x0) = (y0f as isize, x0f as isize);
    let at = |yy: isize, xx: isize| -> f64 {
        if yy >= 0 && (yy as usize) < h && xx >= 0 && (xx as usize) < w {
            plane[yy as usize * w + xx as usize]
        } else {
            0.0
        }
    };
    (1.0 - ty) * ((1.0 - tx) * at(y0, x0) + tx * at(y0, x0 + 1))
        + ty * ((1.0 - tx) * at(y0 + 1, x0) + tx * at(y0 + 1, x0 + 1))
}

/// Loops-only bilinear sampling of `f: [C, H, W]` at `points: [N, 2]`
/// (rows are `(y, x)`), producing `[C, N]`.
pub fn naive_bilinear(f: &Tensor<f64>, points: &Tensor<f64>) -> Tensor<f64> {
    let (c, h, w) = (f.shape()[0], f.shape()[1], f.shape()[2]);
    let n = points.shape()[0];
    let (fd, pd) = (f.data(), points.data());
    let mut out = vec![0.0; c * n];
    for i in 0..n {
        for ch in 0..c {
            out[ch * n + i] = sample_plane(
                &fd[ch * h * w..(ch + 1) * h * w],
                h,
                w,
                pd[2 * i],
                pd[2 * i + 1],
            );
        }
    }
    Tensor::from_vec([c, n], out)
}

/// Loops-only pixel-adaptive deformable convolution. Per output pixel `p`,
/// tap `n` of the regular 3×3 grid reads `f` at `p + rₙ + Δₙ(p)` bilinearly
/// and scales it by `kernels[n, p]`; the kernel is shared across channels.
pub fn naive_deform(
    f: &Tensor<f64>,
    kernels: &Tensor<f64>,
    offsets: &Tensor<f64>,
) -> Tensor<f64> {
    let (c, h, w) = (f.shape()[0], f.shape()[1], f.shape()[2]);
    let plane = h * w;
    let (fd, kd, od) = (f.data(), kernels.data(), offsets.data());
    let mut out = vec![0.0; c * plane];
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            for (n, (ry, rx)) in GRID.iter().enumerate() {
                let sy = (y as isize + ry) as f64 + od[2 * n * plane + p];
                let sx = (x as isize + rx) as f64 + od[(2 * n + 1) * plane + p];
                let weight = kd[n * plane + p];
                for ch in 0..c {
                    out[ch * plane + p] += weight
                        * sample_plane(&fd[ch * plane..(ch + 1) * plane], h, w, sy, sx);
                }
            }
        }
    }
    Tensor::from_vec([c, h, w], out)
}

/// Loops-only soft contextual attention over 3×3 patches.
///
/// All-pairs cosine similarity between interior patches (ε added to each
/// norm), softmax over sources with temperature `lambda`, weights scaled by
/// `1 − mask` at the source center, weighted patch sum pasted back at the
/// query center, overlaps averaged by coverage count. A fully saturated mask
/// short-circuits to zeros, mirroring the fast op.
pub fn naive_attention(f: &Tensor<f64>, mask: &Tensor<f64>, lambda: f64) -> Tensor<f64> {
    let (c, h, w) = (f.shape()[0], f.shape()[1], f.shape()[2]);
    let (gh, gw) = (h - 2, w - 2);
    let nq = gh * gw;
    let pk = c * TAPS;
    let (fd, md) = (f.data(), mask.data());
    let center = |s: usize| -> (usize, usize) { (s / gw + 1, s % gw + 1) };

    let u: Vec<f64> = (0..nq)
        .map(|s| {
            let (cy, cx) = center(s);
            1.0 - md[cy * w + cx]
        })
        .collect();
    if u.iter().sum::<f64>() < DEGENERATE_EPS {
        return Tensor::zeros([c, h, w]);
    }

    let mut patches = vec![vec![0.0f64; pk]; nq];
    for (s, row) in patches.iter_mut().enumerate() {
        let (cy, cx) = center(s);
        for ch in 0..c {
            for (n, (dy, dx)) in GRID.iter().enumerate() {
                let iy = (cy as isize + dy) as usize;
                let ix = (cx as isize + dx) as usize;
                row[ch * TAPS + n] = fd[(ch * h + iy) * w + ix];
            }
        }
    }
    let norms: Vec<f64> = patches
        .iter()
        .map(|p| p.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();

    let mut cov = vec![0u32; h * w];
    for s in 0..nq {
        let (cy, cx) = center(s);
        for (dy, dx) in GRID {
            cov[(cy as isize + dy) as usize * w + (cx as isize + dx) as usize] += 1;
        }
    }

    let mut acc = vec![0.0f64; c * h * w];
    for q in 0..nq {
        let scores: Vec<f64> = (0..nq)
            .map(|s| {
                let dot: f64 = patches[q]
                    .iter()
                    .zip(&patches[s])
                    .map(|(a, b)| a * b)
                    .sum();
                lambda * dot / ((norms[q] + NORM_EPS) * (norms[s] + NORM_EPS))
            })
            .collect();
        let peak = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|v| (v - peak).exp()).collect();
        let z: f64 = exps.iter().sum();
        let beta: Vec<f64> = exps.iter().zip(&u).map(|(e, uv)| e / z * uv).collect();

        let mut recon = vec![0.0f64; pk];
        for s in 0..nq {
            let b = beta[s];
            if b == 0.0 {
                continue;
            }
            for (r, pv) in recon.iter_mut().zip(&patches[s]) {
                *r += b * pv;
            }
        }
        let (cy, cx) = center(q);
        for ch in 0..c {
            for (n, (dy, dx)) in GRID.iter().enumerate() {
                let iy = (cy as isize + dy) as usize;
                let ix = (cx as isize + dx) as usize;
                acc[(ch * h + iy) * w + ix] += recon[ch * TAPS + n];
            }
        }
    }
    for ch in 0..c {
        for p in 0..h * w {
            acc[ch * h * w + p] /= f64::from(cov[p]);
        }
    }
    Tensor::from_vec([c, h, w], acc)
}

// ---------------------------------------------------------------------------
// Sweep drivers
// ---------------------------------------------------------------------------

fn rand_tensor(
    shape: impl Into<Vec<usize>>,
    rng: &mut ChaCha8Rng,
    lo: f64,
    hi: f64,
) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "oracle produced a different element count");
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn conv_oracle_sweep(instances: usize, seed: u64) -> OracleReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_err = 0.0f64;
    for _ in 0..instances {
        let c_in = rng.random_range(1..=4usize);
        let c_out = rng.random_range(1..=4usize);
        let kernel = [1usize, 3][rng.random_range(0..2usize)];
        let spec = ConvSpec {
            stride: rng.random_range(1..=2usize),
            dilation: rng.random_range(1..=2usize),
            padding: rng.random_range(0..=2usize),
        };
        // The input plus padding must cover the dilated kernel span.
        let span = spec.dilation * (kernel - 1) + 1;
        let min_side = span.saturating_sub(2 * spec.padding).max(1);
        let h = rng.random_range(min_side..=16);
        let w = rng.random_range(min_side..=16);
        let x = rand_tensor([c_in, h, w], &mut rng, -1.0, 1.0);
        let wt = rand_tensor([c_out, c_in, kernel, kernel], &mut rng, -1.0, 1.0);
        let b = rand_tensor([c_out], &mut rng, -1.0, 1.0);
        let got = conv2d(
            &Var::constant(x.clone()),
            &Var::constant(wt.clone()),
            &Var::constant(b.clone()),
            spec,
        );
        let want = naive_conv2d(&x, &wt, &b, spec);
        assert_eq!(got.shape(), want.shape());
        max_err = max_err.max(max_abs_diff(got.value().data(), want.data()));
    }
    OracleReport {
        instances,
        max_abs_err: max_err,
    }
}

pub fn bilinear_oracle_sweep(instances: usize, seed: u64) -> OracleReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_err = 0.0f64;
    for _ in 0..instances {
        let c = rng.random_range(1..=4usize);
        let h = rng.random_range(2..=16usize);
        let w = rng.random_range(2..=16usize);
        let n = rng.random_range(1..=40usize);
        let f = rand_tensor([c, h, w], &mut rng, -1.0, 1.0);
        // Points roam past the borders to exercise the zero exterior, and one
        // in five snaps to the integer lattice to hit exact-corner paths.
        let points = Tensor::from_fn([n, 2], |i| {
            let limit = if i % 2 == 0 { h as f64 } else { w as f64 };
            let v = rng.random_range(-2.0..limit + 1.0);
            if rng.random_range(0..5usize) == 0 {
                v.round()
            } else {
                v
            }
        });
        let got = bilinear_sample(&Var::constant(f.clone()), &Var::constant(points.clone()));
        let want = naive_bilinear(&f, &points);
        assert_eq!(got.shape(), want.shape());
        max_err = max_err.max(max_abs_diff(got.value().data(), want.data()));
    }
    OracleReport {
        instances,
        max_abs_err: max_err,
    }
}

pub fn deform_oracle_sweep(instances: usize, seed: u64) -> OracleReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_err = 0.0f64;
    for _ in 0..instances {
        let c = rng.random_range(1..=4usize);
        let h = rng.random_range(2..=16usize);
        let w = rng.random_range(2..=16usize);
        let f = rand_tensor([c, h, w], &mut rng, -1.0, 1.0);
        let kernels = rand_tensor([TAPS, h, w], &mut rng, -1.0, 1.0);
        let offsets = rand_tensor([2 * TAPS, h, w], &mut rng, -2.5, 2.5);
        let got = deform_conv(
            &Var::constant(f.clone()),
            &Var::constant(kernels.clone()),
            &Var::constant(offsets.clone()),
        );
        let want = naive_deform(&f, &kernels, &offsets);
        assert_eq!(got.shape(), want.shape());
        max_err = max_err.max(max_abs_diff(got.value().data(), want.data()));
    }
    OracleReport {
        instances,
        max_abs_err: max_err,
    }
}

pub fn attention_oracle_sweep(instances: usize, seed: u64) -> OracleReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_err = 0.0f64;
    for _ in 0..instances {
        let c = rng.random_range(1..=4usize);
        let h = rng.random_range(3..=12usize);
        let w = rng.random_range(3..=12usize);
        let lambda = rng.random_range(0.5..10.0);
        let f = rand_tensor([c, h, w], &mut rng, -1.0, 1.0);
        let mask = rand_tensor([1, h, w], &mut rng, 0.0, 1.0);
        let got = contextual_attention(
            &Var::constant(f.clone()),
            &Var::constant(mask.clone()),
            lambda,
        );
        let want = naive_attention(&f, &mask, lambda);
        assert_eq!(got.shape(), want.shape());
        max_err = max_err.max(max_abs_diff(got.value().data(), want.data()));
    }
    OracleReport {
        instances,
        max_abs_err: max_err,
    }
}
