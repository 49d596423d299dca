//! Brightness adjustment: aligning one exposure's features to the reference.
//!
//! Each exposure is encoded by a two-branch feature extractor. The reference
//! branch looks only at the reference exposure; the source branch looks at
//! the exposure being adjusted but is steered toward the reference by
//! concatenating the reference branch's features at every depth. From the
//! fused deepest features, two heads predict a per-pixel resampling of the
//! source feature map: a 3×3 kernel field and a per-tap offset field, applied
//! with [`crate::ops::deform_conv`]. Motion between the exposures is thereby
//! undone in feature space, without any explicit flow supervision.
//!
//! The heads start neutral: zero offsets and a one-hot center-tap kernel, so
//! an untrained network passes source features through unchanged rather than
//! scrambling them.

use rand_chacha::ChaCha8Rng;

use crate::graph::Var;
use crate::ops::{self, TAPS};
use crate::tensor::{Scalar, Tensor};

use super::params::{Binding, ConvLayer, ParamSet};

/// One exposure's adjustment network.
#[derive(Debug, Clone)]
pub struct Ban {
    src: [ConvLayer; 3],
    reference: [ConvLayer; 3],
    kernel_head: (ConvLayer, ConvLayer),
    offset_head: (ConvLayer, ConvLayer),
}

/// Everything a [`Ban`] produces for one exposure.
pub struct BanOut<E: Scalar> {
    /// Adjusted source feature map, `[width, H, W]`.
    pub feature: Var<E>,
    /// Predicted kernel field `[9, H, W]`.
    pub kernels: Var<E>,
    /// Predicted offset field `[18, H, W]` (Δy, Δx per tap).
    pub offsets: Var<E>,
}

impl Ban {
    /// `in_channels` counts one exposure's stacked input channels.
    pub fn new<E: Scalar>(
        ps: &mut ParamSet<E>,
        prefix: &str,
        in_channels: usize,
        width: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let c = width;
        let src = [
            ConvLayer::new(ps, &format!("{prefix}.src0"), in_channels, c, 3, 1, rng),
            ConvLayer::new(ps, &format!("{prefix}.src1"), 2 * c, c, 3, 1, rng),
            ConvLayer::new(ps, &format!("{prefix}.src2"), 2 * c, c, 3, 1, rng),
        ];
        let reference = [
            ConvLayer::new(ps, &format!("{prefix}.ref0"), in_channels, c, 3, 1, rng),
            ConvLayer::new(ps, &format!("{prefix}.ref1"), c, c, 3, 1, rng),
            ConvLayer::new(ps, &format!("{prefix}.ref2"), c, c, 3, 1, rng),
        ];
        // Center-tap one-hot: the kernel head's initial output resamples
        // identically.
        let mut center = Tensor::zeros([TAPS]);
        center.make_mut()[TAPS / 2] = E::one();
        let kernel_head = (
            ConvLayer::new(ps, &format!("{prefix}.kern0"), 2 * c, c, 3, 1, rng),
            ConvLayer::constant_init(ps, &format!("{prefix}.kern1"), c, 3, center),
        );
        let offset_head = (
            ConvLayer::new(ps, &format!("{prefix}.off0"), 2 * c, c, 3, 1, rng),
            ConvLayer::constant_init(
                ps,
                &format!("{prefix}.off1"),
                c,
                3,
                Tensor::zeros([2 * TAPS]),
            ),
        );
        Ban {
            src,
            reference,
            kernel_head,
            offset_head,
        }
    }

    /// Adjusts `x_src` toward `x_ref`. With `motion_compensation` off the
    /// deformable resampling is skipped entirely (ablation switch); the
    /// kernel and offset fields are still predicted and returned.
    pub fn forward<E: Scalar>(
        &self,
        bind: &Binding<E>,
        x_src: &Var<E>,
        x_ref: &Var<E>,
        motion_compensation: bool,
    ) -> BanOut<E> {
        let r1 = ops::relu(&self.reference[0].apply(bind, x_ref));
        let r2 = ops::relu(&self.reference[1].apply(bind, &r1));
        let r3 = ops::relu(&self.reference[2].apply(bind, &r2));

        let s1 = ops::relu(&self.src[0].apply(bind, x_src));
        let s2 = ops::relu(
            &self.src[1].apply(bind, &ops::concat_channels(&[s1, r1])),
        );
        let s3 = ops::relu(
            &self.src[2].apply(bind, &ops::concat_channels(&[s2, r2])),
        );

        let fused = ops::concat_channels(&[r3, s3.clone()]);
        let kernels = self
            .kernel_head
            .1
            .apply(bind, &ops::relu(&self.kernel_head.0.apply(bind, &fused)));
        let offsets = self
            .offset_head
            .1
            .apply(bind, &ops::relu(&self.offset_head.0.apply(bind, &fused)));

        let feature = if motion_compensation {
            ops::deform_conv(&s3, &kernels, &offsets)
        } else {
            s3
        };
        BanOut {
            feature,
            kernels,
            offsets,
        }
    }
}
