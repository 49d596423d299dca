//! Differentiable operations on [`crate::graph::Var`] handles.
//!
//! Construction functions compute the forward value eagerly and attach the
//! backward rule; see [`crate::graph`] for how the graph behaves.

mod attention;
mod bilinear;
mod conv;
mod deform;
mod elementwise;
mod reduce;
mod structure;

pub use attention::{contextual_attention, contextual_attention_with_stats, AttentionStats};
pub use bilinear::bilinear_sample;
pub use conv::{conv2d, residual_block, ConvSpec};
pub use deform::{deform_conv, GRID, TAPS};
pub use elementwise::{
    abs, add, affine, linear_combination, mu_law, mu_law_tensor, mul, relu, sigmoid, sub, MU,
};
pub use reduce::{mean, softmax_last, sum};
pub use structure::{avg_pool, complete, concat_channels, diff_x, diff_y};
