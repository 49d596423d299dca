//! Merging adjusted exposures and hallucinating what no exposure saw.
//!
//! The three adjusted feature maps are merged by a 1×1 conv and residual
//! trunk into a **coarse** radiance estimate plus a soft mask marking pixels
//! the merge could not resolve (saturated in every usable exposure, or
//! ghosted). A second stage repairs those pixels two ways at once:
//!
//! * a *refinement* branch of dilated convs grows the receptive field and
//!   re-predicts radiance locally;
//! * a *hallucination* branch copies feature patches from well-exposed
//!   regions into masked ones via contextual attention.
//!
//! Their combination yields the **fine** estimate; the final output takes
//! the fine value where the mask is high and keeps the coarse value
//! elsewhere, so hallucination can never degrade pixels the merge already
//! got right.

use rand_chacha::ChaCha8Rng;

use crate::graph::Var;
use crate::ops::{self, AttentionStats};
use crate::tensor::{Scalar, Tensor};

use super::params::{Binding, ConvLayer, ParamSet, ResBlock};

/// How the completion mask is produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MaskMode {
    /// Learned: sigmoid of a conv head, sharpened by `mask_sharpness`.
    Soft,
    /// Ablation: 1 where the coarse estimate's channel-max reaches `tau`,
    /// else 0, with no gradient through the mask.
    Hard { tau: f64 },
}

#[derive(Debug, Clone)]
pub struct Mahn {
    merge: ConvLayer,
    trunk: [ResBlock; 3],
    coarse_head: ConvLayer,
    mask_head: ConvLayer,
    refine: [ConvLayer; 3],
    hall_pre: ConvLayer,
    hall_post: ConvLayer,
    fine_head: ConvLayer,
}

/// All intermediate and final products of one merge.
pub struct MahnOut<E: Scalar> {
    pub coarse: Var<E>,
    pub fine: Var<E>,
    pub completed: Var<E>,
    pub mask: Var<E>,
    pub attention: AttentionStats,
}

impl Mahn {
    /// `width` is the per-exposure feature width; the trunk runs at twice
    /// that.
    pub fn new<E: Scalar>(
        ps: &mut ParamSet<E>,
        prefix: &str,
        width: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let c = width;
        let t = 2 * c;
        Mahn {
            merge: ConvLayer::new(ps, &format!("{prefix}.merge"), 3 * c, t, 1, 1, rng),
            trunk: [
                ResBlock::new(ps, &format!("{prefix}.res0"), t, rng),
                ResBlock::new(ps, &format!("{prefix}.res1"), t, rng),
                ResBlock::new(ps, &format!("{prefix}.res2"), t, rng),
            ],
            coarse_head: ConvLayer::new(ps, &format!("{prefix}.coarse"), t, 3, 3, 1, rng),
            mask_head: ConvLayer::new(ps, &format!("{prefix}.mask"), t, 1, 3, 1, rng),
            refine: [
                ConvLayer::new(ps, &format!("{prefix}.refine0"), t, t, 3, 1, rng),
                ConvLayer::new(ps, &format!("{prefix}.refine1"), t, t, 3, 2, rng),
                ConvLayer::new(ps, &format!("{prefix}.refine2"), t, t, 3, 4, rng),
            ],
            hall_pre: ConvLayer::new(ps, &format!("{prefix}.hall_pre"), t, c, 3, 1, rng),
            hall_post: ConvLayer::new(ps, &format!("{prefix}.hall_post"), c, c, 3, 1, rng),
            fine_head: ConvLayer::new(ps, &format!("{prefix}.fine"), t + c, 3, 3, 1, rng),
        }
    }

    pub fn forward<E: Scalar>(
        &self,
        bind: &Binding<E>,
        features: &[Var<E>; 3],
        mask_mode: MaskMode,
        mask_sharpness: f64,
        attention_temperature: f64,
    ) -> MahnOut<E> {
        let x = ops::concat_channels(features.as_slice());
        let mut t = ops::relu(&self.merge.apply(bind, &x));
        for block in &self.trunk {
            t = block.apply(bind, &t);
        }
        // Radiance is non-negative by construction; relu also keeps the
        // μ-law in the loss away from negative inputs.
        let coarse = ops::relu(&self.coarse_head.apply(bind, &t));
        let mask = match mask_mode {
            MaskMode::Soft => ops::sigmoid(&ops::affine(
                &self.mask_head.apply(bind, &t),
                mask_sharpness,
                0.0,
            )),
            MaskMode::Hard { tau } => Var::constant(hard_mask(coarse.value(), tau)),
        };

        let mut r = t.clone();
        for conv in &self.refine {
            r = ops::relu(&conv.apply(bind, &r));
        }

        let h = ops::relu(&self.hall_pre.apply(bind, &t));
        let (borrowed, attention) =
            ops::contextual_attention_with_stats(&h, &mask, attention_temperature);
        let a = ops::relu(&self.hall_post.apply(bind, &borrowed));

        let fine = ops::relu(
            &self.fine_head.apply(bind, &ops::concat_channels(&[r, a])),
        );
        let completed = ops::complete(&coarse, &fine, &mask);
        MahnOut {
            coarse,
            fine,
            completed,
            mask,
            attention,
        }
    }
}

/// Saturation-threshold mask: 1 where any channel of `coarse` reaches `tau`.
/// Produces a plain tensor — by design no gradient flows through it.
pub fn hard_mask<E: Scalar>(coarse: &Tensor<E>, tau: f64) -> Tensor<E> {
    let s = coarse.shape();
    assert_eq!(s.len(), 3, "expected [C, H, W]");
    let (c, h, w) = (s[0], s[1], s[2]);
    let plane = h * w;
    let tau = E::from_f64(tau);
    Tensor::from_fn([1, h, w], |p| {
        let saturated = (0..c).any(|ch| coarse.data()[ch * plane + p] >= tau);
        if saturated {
            E::one()
        } else {
            E::zero()
        }
    })
}
