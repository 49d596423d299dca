//! The full fusion network: three brightness-adjustment networks feeding a
//! merge-and-hallucination network.
//!
//! Input is a bracketed triple of exposures, shortest first, each stacked
//! with its linearized radiance into six channels (see
//! [`crate::radiometry::six_channel`]). The middle exposure is the
//! reference: the output is aligned to its viewpoint and moment. Every
//! weight lives in a caller-owned [`ParamSet`], so training, checkpointing
//! and inference all move through the same two structures.

mod ban;
mod mahn;
mod params;

pub use ban::{Ban, BanOut};
pub use mahn::{hard_mask, Mahn, MahnOut, MaskMode};
pub use params::{Binding, ConvLayer, ParamId, ParamSet, ResBlock};

use crate::graph::Var;
use crate::init::{derive_seed, rng_from};
use crate::ops::AttentionStats;
use crate::tensor::Scalar;

/// Channels in one exposure's network input (LDR RGB + linearized RGB).
pub const INPUT_CHANNELS: usize = 6;

/// Architecture and behavior switches. Everything here is persisted in
/// checkpoints; a loaded model reproduces its outputs exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    /// Per-exposure feature width; the merge trunk runs at twice this.
    pub width: usize,
    /// Apply the predicted deformable resampling (true) or pass source
    /// features through unadjusted (ablation).
    pub motion_compensation: bool,
    /// Soft learned completion mask, or the hard-threshold ablation.
    pub mask_mode: MaskMode,
    /// Sharpening factor applied inside the mask sigmoid.
    pub mask_sharpness: f64,
    /// Softmax temperature of the contextual attention.
    pub attention_temperature: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            width: 16,
            motion_compensation: true,
            mask_mode: MaskMode::Soft,
            mask_sharpness: 3.0,
            attention_temperature: 10.0,
        }
    }
}

/// The assembled network. Weights live in the [`ParamSet`] created alongside.
#[derive(Debug, Clone)]
pub struct HdrPipeline {
    pub config: ModelConfig,
    bans: [Ban; 3],
    mahn: Mahn,
}

/// Outputs of one forward pass.
pub struct PipelineOut<E: Scalar> {
    /// First-stage merged radiance, `[3, H, W]`.
    pub coarse: Var<E>,
    /// Refined and hallucinated radiance, `[3, H, W]`.
    pub fine: Var<E>,
    /// Mask-blended final radiance, `[3, H, W]`.
    pub completed: Var<E>,
    /// Completion mask, `[1, H, W]`.
    pub mask: Var<E>,
    /// Adjusted per-exposure features, each `[width, H, W]`.
    pub features: [Var<E>; 3],
    pub attention: AttentionStats,
}

impl HdrPipeline {
    /// Builds the network, registering freshly initialized weights into a
    /// new [`ParamSet`]. The same seed always yields the same weights.
    pub fn init<E: Scalar>(config: ModelConfig, seed: u64) -> (Self, ParamSet<E>) {
        let mut ps = ParamSet::new();
        let bans = std::array::from_fn(|i| {
            let mut rng = rng_from(derive_seed(seed, i as u64));
            Ban::new(
                &mut ps,
                &format!("ban{i}"),
                INPUT_CHANNELS,
                config.width,
                &mut rng,
            )
        });
        let mut rng = rng_from(derive_seed(seed, 3));
        let mahn = Mahn::new(&mut ps, "mahn", config.width, &mut rng);
        (
            HdrPipeline {
                config,
                bans,
                mahn,
            },
            ps,
        )
    }

    /// Rebuilds the layer structure for an existing parameter set (used when
    /// loading a checkpoint). Registration order and names must match
    /// [`HdrPipeline::init`]; the caller then overwrites the tensors.
    pub fn with_params<E: Scalar>(config: ModelConfig) -> (Self, ParamSet<E>) {
        // Seed is irrelevant: every tensor is about to be replaced.
        Self::init(config, 0)
    }

    /// Runs the network on one bracketed triple of six-channel inputs,
    /// ordered shortest exposure first; `inputs[1]` is the reference.
    pub fn forward<E: Scalar>(
        &self,
        bind: &Binding<E>,
        inputs: &[Var<E>; 3],
    ) -> PipelineOut<E> {
        let reference = &inputs[1];
        let outs: [BanOut<E>; 3] = std::array::from_fn(|i| {
            self.bans[i].forward(
                bind,
                &inputs[i],
                reference,
                self.config.motion_compensation,
            )
        });
        let features: [Var<E>; 3] = std::array::from_fn(|i| outs[i].feature.clone());
        let m = self.mahn.forward(
            bind,
            &features,
            self.config.mask_mode,
            self.config.mask_sharpness,
            self.config.attention_temperature,
        );
        PipelineOut {
            coarse: m.coarse,
            fine: m.fine,
            completed: m.completed,
            mask: m.mask,
            features,
            attention: m.attention,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::uniform;
    use crate::ops;
    use crate::tensor::Tensor;

    fn random_inputs(h: usize, w: usize, seed: u64) -> [Var<f64>; 3] {
        let mut rng = rng_from(seed);
        std::array::from_fn(|_| {
            Var::constant(uniform([INPUT_CHANNELS, h, w], 0.0, 1.0, &mut rng))
        })
    }

    #[test]
    fn forward_shapes_are_consistent() {
        let cfg = ModelConfig {
            width: 4,
            ..ModelConfig::default()
        };
        let (net, ps) = HdrPipeline::init::<f64>(cfg, 11);
        let bind = ps.bind();
        let out = net.forward(&bind, &random_inputs(10, 12, 0));
        assert_eq!(out.completed.shape(), &[3, 10, 12]);
        assert_eq!(out.mask.shape(), &[1, 10, 12]);
        for f in &out.features {
            assert_eq!(f.shape(), &[4, 10, 12]);
        }
    }

    #[test]
    fn same_seed_reproduces_the_same_network_bit_for_bit() {
        let cfg = ModelConfig {
            width: 4,
            ..ModelConfig::default()
        };
        let (n1, p1) = HdrPipeline::init::<f64>(cfg, 5);
        let (n2, p2) = HdrPipeline::init::<f64>(cfg, 5);
        let inputs = random_inputs(8, 8, 1);
        let o1 = n1.forward(&p1.bind(), &inputs);
        let o2 = n2.forward(&p2.bind(), &inputs);
        assert_eq!(
            o1.completed.value().data(),
            o2.completed.value().data()
        );
        // A different seed must give different weights.
        let (n3, p3) = HdrPipeline::init::<f64>(cfg, 6);
        let o3 = n3.forward(&p3.bind(), &inputs);
        assert_ne!(
            o1.completed.value().data(),
            o3.completed.value().data()
        );
    }

    #[test]
    fn parameter_budget_matches_the_frozen_snapshot() {
        let (_, ps) = HdrPipeline::init::<f64>(ModelConfig::default(), 0);
        // Hand-tallied for width 16: 3 adjustment networks of 28 811 each,
        // merge network 94 199. A mismatch means the architecture changed —
        // update deliberately or fix the regression.
        assert_eq!(ps.total_scalars(), 3 * 28_811 + 94_199);
    }

    #[test]
    fn training_gradient_reaches_every_parameter() {
        let cfg = ModelConfig {
            width: 3,
            ..ModelConfig::default()
        };
        let (net, ps) = HdrPipeline::init::<f64>(cfg, 2);
        let bind = ps.bind();
        let out = net.forward(&bind, &random_inputs(8, 8, 4));
        let loss = ops::linear_combination(&[
            (1.0, ops::mean(&ops::mul(&out.coarse, &out.coarse))),
            (1.0, ops::mean(&ops::mul(&out.fine, &out.fine))),
            (1.0, ops::mean(&ops::mul(&out.completed, &out.completed))),
        ]);
        loss.backward();
        for id in ps.ids() {
            assert!(
                bind.grad(id).is_some(),
                "no gradient for `{}`",
                ps.name(id)
            );
        }
    }

    #[test]
    fn disabling_motion_compensation_changes_the_output() {
        let base = ModelConfig {
            width: 4,
            ..ModelConfig::default()
        };
        let off = ModelConfig {
            motion_compensation: false,
            ..base
        };
        let (n1, p1) = HdrPipeline::init::<f64>(base, 9);
        let (n2, p2) = HdrPipeline::init::<f64>(off, 9);
        let inputs = random_inputs(8, 8, 2);
        let o1 = n1.forward(&p1.bind(), &inputs);
        let o2 = n2.forward(&p2.bind(), &inputs);
        // Same weights, different wiring. At the neutral initialization the
        // resampling is exactly identity, so we first train the offset head
        // away from neutral… cheaper: perturb its bias directly.
        assert_eq!(o1.completed.value().data(), o2.completed.value().data());
        let mut p1m = p1.clone();
        for id in p1m.ids().collect::<Vec<_>>() {
            if p1m.name(id) == "ban0.off1.b" {
                p1m.update(id, Tensor::full([18], 0.4));
            }
        }
        let o1b = n1.forward(&p1m.bind(), &inputs);
        assert_ne!(o1b.completed.value().data(), o1.completed.value().data());
    }
}
