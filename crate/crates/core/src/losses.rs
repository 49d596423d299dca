//! Training losses.
//!
//! The hybrid objective scores an HDR prediction with four terms:
//!
//! * **reconstruction** — mean absolute difference after μ-law tone mapping,
//!   so dark-region errors are not drowned out by bright pixels;
//! * **color** — one minus the mean per-pixel cosine between predicted and
//!   true RGB vectors, in linear radiance. Pure hue/saturation error,
//!   insensitive to intensity;
//! * **perceptual** — mean absolute difference of features from a small
//!   *fixed random-weight* convolutional pyramid. Random features preserve
//!   enough geometry to penalize structural artifacts, and a seeded
//!   extractor keeps the whole system self-contained and deterministic;
//! * **total variation** — joint mean of neighbor differences, discouraging
//!   speckle in hallucinated content.
//!
//! Terms with a zero weight are skipped entirely — not computed and
//! contributing exactly nothing to the gradient.

use crate::graph::{make_node, BackwardRule, Var};
use crate::init::{derive_seed, he_conv, rng_from};
use crate::ops::{self, ConvSpec, MU};
use crate::tensor::{Scalar, Tensor};

/// Per-term weights for the hybrid objective.
#[derive(Debug, Clone, Copy)]
pub struct LossWeights {
    pub recon: f64,
    pub color: f64,
    pub perceptual: f64,
    pub tv: f64,
}

impl LossWeights {
    /// Weights for the two intermediate outputs (coarse and refined).
    pub fn intermediate() -> Self {
        LossWeights {
            recon: 1.0,
            color: 1.0,
            perceptual: 0.001,
            tv: 0.1,
        }
    }

    /// The completed output trains on reconstruction alone.
    pub fn final_output() -> Self {
        LossWeights {
            recon: 1.0,
            color: 0.0,
            perceptual: 0.0,
            tv: 0.0,
        }
    }
}

/// Unweighted values of each term, for logging. Skipped terms report 0.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossBreakdown {
    pub recon: f64,
    pub color: f64,
    pub perceptual: f64,
    pub tv: f64,
    pub weighted_total: f64,
}

/// Mean absolute difference of μ-law tonemapped images. Negative inputs are
/// clamped to zero first — radiance is non-negative by construction, and the
/// log inside the tone curve must never see values below `-1/μ`.
pub fn reconstruction<E: Scalar>(pred_hdr: &Var<E>, gt_hdr: &Var<E>) -> Var<E> {
    let p = ops::mu_law(&ops::relu(pred_hdr), MU);
    let g = ops::mu_law(&ops::relu(gt_hdr), MU);
    ops::mean(&ops::abs(&ops::sub(&p, &g)))
}

/// `1 − mean_p cos(pred_p, gt_p)` over per-pixel RGB vectors in linear
/// radiance. The denominator is stabilized as `‖a‖·‖b‖ + ε`; a zero vector
/// on either side scores cosine 0 for that pixel.
pub fn color_similarity<E: Scalar>(pred: &Var<E>, gt: &Var<E>) -> Var<E> {
    let s = pred.value().shape().to_vec();
    assert_eq!(s, gt.value().shape(), "color loss shapes differ");
    assert_eq!(s.len(), 3, "expected [3, H, W]");
    assert_eq!(s[0], 3, "color loss needs RGB");
    let plane = s[1] * s[2];
    let (a, b) = (pred.value().clone(), gt.value().clone());
    let mut acc = 0.0f64;
    for p in 0..plane {
        let (mut sab, mut saa, mut sbb) = (0.0f64, 0.0, 0.0);
        for c in 0..3 {
            let av = a.data()[c * plane + p].as_f64();
            let bv = b.data()[c * plane + p].as_f64();
            sab += av * bv;
            saa += av * av;
            sbb += bv * bv;
        }
        acc += sab / (saa.sqrt() * sbb.sqrt() + COLOR_EPS);
    }
    let loss = 1.0 - acc / plane as f64;
    make_node(
        Tensor::scalar(E::from_f64(loss)),
        vec![pred.clone(), gt.clone()],
        Box::new(ColorBack { plane }),
    )
}

/// Stabilizer added to the product of norms in the cosine.
pub const COLOR_EPS: f64 = 1e-8;

struct ColorBack {
    plane: usize,
}

impl<E: Scalar> BackwardRule<E> for ColorBack {
    fn name(&self) -> &'static str {
        "color_similarity"
    }
    fn backward(&self, grad_out: &Tensor<E>, parents: &[Var<E>]) {
        let g = grad_out.data()[0].as_f64();
        let plane = self.plane;
        let a = parents[0].value();
        let b = parents[1].value();
        let scale = -g / plane as f64; // d(1 − mean)/d cos_p
        let mut da = vec![0.0f64; 3 * plane];
        let mut db = vec![0.0f64; 3 * plane];
        for p in 0..plane {
            let mut av = [0.0f64; 3];
            let mut bv = [0.0f64; 3];
            for c in 0..3 {
                av[c] = a.data()[c * plane + p].as_f64();
                bv[c] = b.data()[c * plane + p].as_f64();
            }
            let sab: f64 = (0..3).map(|c| av[c] * bv[c]).sum();
            let na = (0..3).map(|c| av[c] * av[c]).sum::<f64>().sqrt();
            let nb = (0..3).map(|c| bv[c] * bv[c]).sum::<f64>().sqrt();
            let d = na * nb + COLOR_EPS;
            for c in 0..3 {
                // ∂cos/∂a = b/d − (a·b)·‖b‖·â/d²; the radial part vanishes
                // for a zero vector (the cosine is flat there).
                let radial_a = if na > 0.0 {
                    sab * nb * av[c] / (na * d * d)
                } else {
                    0.0
                };
                da[c * plane + p] = scale * (bv[c] / d - radial_a);
                let radial_b = if nb > 0.0 {
                    sab * na * bv[c] / (nb * d * d)
                } else {
                    0.0
                };
                db[c * plane + p] = scale * (av[c] / d - radial_b);
            }
        }
        let shape = a.shape().to_vec();
        parents[0].accumulate_grad(&Tensor::from_vec(
            shape.clone(),
            da.into_iter().map(E::from_f64).collect(),
        ));
        parents[1].accumulate_grad(&Tensor::from_vec(
            shape,
            db.into_iter().map(E::from_f64).collect(),
        ));
    }
}

/// Joint-mean total variation: `(Σ|∂x| + Σ|∂y|) / (n_x + n_y)` over forward
/// differences.
pub fn total_variation<E: Scalar>(x: &Var<E>) -> Var<E> {
    let s = x.value().shape().to_vec();
    assert_eq!(s.len(), 3, "expected [C, H, W]");
    let (c, h, w) = (s[0], s[1], s[2]);
    let nx = c * h * (w - 1);
    let ny = c * (h - 1) * w;
    let sx = ops::sum(&ops::abs(&ops::diff_x(x)));
    let sy = ops::sum(&ops::abs(&ops::diff_y(x)));
    ops::linear_combination(&[
        (1.0 / (nx + ny) as f64, sx),
        (1.0 / (nx + ny) as f64, sy),
    ])
}

/// Widths of the three feature blocks.
pub const PERCEPTUAL_WIDTHS: [usize; 3] = [8, 16, 32];

/// A fixed random-weight convolutional pyramid: three 3×3 conv + relu blocks
/// with 2× average-pool between them. Weights are He-initialized from a seed
/// and never trained.
pub struct PerceptualExtractor<E: Scalar> {
    layers: Vec<(Var<E>, Var<E>)>,
}

impl<E: Scalar> PerceptualExtractor<E> {
    pub fn from_seed(seed: u64) -> Self {
        let mut layers = Vec::new();
        let mut c_in = 3;
        for (i, &width) in PERCEPTUAL_WIDTHS.iter().enumerate() {
            let mut rng = rng_from(derive_seed(seed, i as u64));
            let w = Var::constant(he_conv(width, c_in, 3, 3, &mut rng));
            let b = Var::constant(Tensor::zeros([width]));
            layers.push((w, b));
            c_in = width;
        }
        PerceptualExtractor { layers }
    }

    /// Feature maps after each block's relu. Input `[3, H, W]` with `H`, `W`
    /// divisible by 4 (two poolings).
    pub fn features(&self, x: &Var<E>) -> Vec<Var<E>> {
        let mut taps = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for (i, (w, b)) in self.layers.iter().enumerate() {
            if i > 0 {
                cur = ops::avg_pool(&cur, 2, 2);
            }
            cur = ops::relu(&ops::conv2d(&cur, w, b, ConvSpec::same(3, 1)));
            taps.push(cur.clone());
        }
        taps
    }
}

/// Mean absolute feature difference, averaged over the three blocks.
/// Computed on tonemapped images so the random features see bounded inputs.
pub fn perceptual<E: Scalar>(
    extractor: &PerceptualExtractor<E>,
    pred_hdr: &Var<E>,
    gt_hdr: &Var<E>,
) -> Var<E> {
    let p = ops::mu_law(&ops::relu(pred_hdr), MU);
    let g = ops::mu_law(&ops::relu(gt_hdr), MU);
    let fp = extractor.features(&p);
    let fg = extractor.features(&g);
    let terms: Vec<(f64, Var<E>)> = fp
        .iter()
        .zip(&fg)
        .map(|(a, b)| {
            (
                1.0 / fp.len() as f64,
                ops::mean(&ops::abs(&ops::sub(a, b))),
            )
        })
        .collect();
    ops::linear_combination(&terms)
}

/// Weighted sum of the four terms. Zero-weight terms must be absent
/// (`None`); nonzero-weight terms must be present.
pub fn combine<E: Scalar>(
    w: &LossWeights,
    recon: Option<&Var<E>>,
    color: Option<&Var<E>>,
    perceptual: Option<&Var<E>>,
    tv: Option<&Var<E>>,
) -> Var<E> {
    let mut terms = Vec::new();
    for (weight, term, name) in [
        (w.recon, recon, "recon"),
        (w.color, color, "color"),
        (w.perceptual, perceptual, "perceptual"),
        (w.tv, tv, "tv"),
    ] {
        match (weight != 0.0, term) {
            (true, Some(t)) => terms.push((weight, t.clone())),
            (false, None) => {}
            (present, _) => panic!(
                "loss term `{name}`: weight {} but term {}",
                weight,
                if present { "missing" } else { "supplied" }
            ),
        }
    }
    ops::linear_combination(&terms)
}

/// Evaluates the hybrid loss of one predicted image against ground truth,
/// computing only the terms its weights enable.
pub fn hybrid<E: Scalar>(
    pred_hdr: &Var<E>,
    gt_hdr: &Var<E>,
    w: &LossWeights,
    extractor: Option<&PerceptualExtractor<E>>,
) -> (Var<E>, LossBreakdown) {
    let recon = (w.recon != 0.0).then(|| reconstruction(pred_hdr, gt_hdr));
    let color = (w.color != 0.0).then(|| color_similarity(pred_hdr, gt_hdr));
    let perc = (w.perceptual != 0.0).then(|| {
        let e = extractor.expect("perceptual weight set but no extractor supplied");
        perceptual(e, pred_hdr, gt_hdr)
    });
    let tv = (w.tv != 0.0).then(|| total_variation(&ops::mu_law(&ops::relu(pred_hdr), MU)));
    let total = combine(w, recon.as_ref(), color.as_ref(), perc.as_ref(), tv.as_ref());
    let scalar = |v: &Option<Var<E>>| v.as_ref().map_or(0.0, |t| t.value().item().as_f64());
    let breakdown = LossBreakdown {
        recon: scalar(&recon),
        color: scalar(&color),
        perceptual: scalar(&perc),
        tv: scalar(&tv),
        weighted_total: total.value().item().as_f64(),
    };
    (total, breakdown)
}
