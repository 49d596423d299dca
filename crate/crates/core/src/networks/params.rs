//! Parameter storage and the layer/graph boundary.
//!
//! Weights live as plain tensors in a [`ParamSet`], keyed by stable
//! hierarchical names (`ban0.src1.w`, …). Each training iteration binds the
//! set into fresh graph leaves ([`Binding`]), runs forward/backward through
//! those, harvests gradients by index, and writes updated tensors back. The
//! graph never owns the parameters, so stale autodiff state cannot leak
//! between iterations and checkpointing is a plain name → tensor dump.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::Var;
use crate::init::he_conv;
use crate::ops::{self, ConvSpec};
use crate::tensor::{Scalar, Tensor};

/// Index of one parameter tensor within its [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

#[derive(Debug, Clone)]
pub struct ParamSet<E: Scalar> {
    names: Vec<String>,
    tensors: Vec<Tensor<E>>,
}

impl<E: Scalar> Default for ParamSet<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Scalar> ParamSet<E> {
    pub fn new() -> Self {
        ParamSet {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    /// Registers a tensor under a unique name and returns its handle.
    pub fn register(&mut self, name: impl Into<String>, init: Tensor<E>) -> ParamId {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "duplicate parameter name `{name}`"
        );
        self.names.push(name);
        self.tensors.push(init);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar values across all parameters.
    pub fn total_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.numel()).sum()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor<E> {
        &self.tensors[id.0]
    }

    /// Replaces a parameter's value. The shape is part of the architecture
    /// and must not change.
    pub fn update(&mut self, id: ParamId, value: Tensor<E>) {
        assert_eq!(
            self.tensors[id.0].shape(),
            value.shape(),
            "update changes shape of `{}`",
            self.names[id.0]
        );
        self.tensors[id.0] = value;
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &Tensor<E>)> {
        self.names.iter().map(|n| n.as_str()).zip(self.tensors.iter())
    }

    /// Overwrites every parameter from `entries`, requiring an exact match
    /// of names and shapes (no extras, no omissions). Order in `entries` is
    /// irrelevant.
    pub fn load_entries(&mut self, entries: &[(String, Tensor<E>)]) -> Result<()> {
        if entries.len() != self.tensors.len() {
            return Err(Error::Validation(format!(
                "checkpoint has {} tensors, model expects {}",
                entries.len(),
                self.tensors.len()
            )));
        }
        for (name, value) in entries {
            let idx = self
                .names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| {
                    Error::Validation(format!("checkpoint tensor `{name}` not in model"))
                })?;
            if self.tensors[idx].shape() != value.shape() {
                return Err(Error::Validation(format!(
                    "checkpoint tensor `{name}` has shape {:?}, model expects {:?}",
                    value.shape(),
                    self.tensors[idx].shape()
                )));
            }
            self.tensors[idx] = value.clone();
        }
        Ok(())
    }

    /// Creates fresh graph leaves for one forward/backward pass.
    pub fn bind(&self) -> Binding<E> {
        Binding {
            vars: self.tensors.iter().cloned().map(Var::param).collect(),
        }
    }

    /// Creates leaves that request no gradients. With every input constant
    /// the graph folds each intermediate to a plain value, so inference
    /// through a frozen binding retains no activation history.
    pub fn bind_frozen(&self) -> Binding<E> {
        Binding {
            vars: self.tensors.iter().cloned().map(Var::constant).collect(),
        }
    }
}

/// The graph-side view of a [`ParamSet`] for a single iteration.
pub struct Binding<E: Scalar> {
    vars: Vec<Var<E>>,
}

impl<E: Scalar> Binding<E> {
    pub fn var(&self, id: ParamId) -> &Var<E> {
        &self.vars[id.0]
    }

    /// Gradient harvested after `backward()`; `None` when the parameter
    /// never entered the graph.
    pub fn grad(&self, id: ParamId) -> Option<Tensor<E>> {
        self.vars[id.0].grad()
    }
}

/// A conv layer: weight + bias in the set, geometry in the struct.
#[derive(Debug, Clone)]
pub struct ConvLayer {
    w: ParamId,
    b: ParamId,
    spec: ConvSpec,
}

impl ConvLayer {
    /// He-initialized weights, zero bias, `same` padding.
    pub fn new<E: Scalar>(
        ps: &mut ParamSet<E>,
        prefix: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        dilation: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let w = ps.register(format!("{prefix}.w"), he_conv(c_out, c_in, kernel, kernel, rng));
        let b = ps.register(format!("{prefix}.b"), Tensor::zeros([c_out]));
        ConvLayer {
            w,
            b,
            spec: ConvSpec::same(kernel, dilation),
        }
    }

    /// Zero weights with a caller-chosen bias: the layer starts out constant,
    /// emitting exactly `bias` at every position. Used for prediction heads
    /// that must begin at a known neutral output.
    pub fn constant_init<E: Scalar>(
        ps: &mut ParamSet<E>,
        prefix: &str,
        c_in: usize,
        kernel: usize,
        bias: Tensor<E>,
    ) -> Self {
        let c_out = bias.numel();
        let w = ps.register(
            format!("{prefix}.w"),
            Tensor::zeros([c_out, c_in, kernel, kernel]),
        );
        let b = ps.register(format!("{prefix}.b"), bias);
        ConvLayer {
            w,
            b,
            spec: ConvSpec::same(kernel, 1),
        }
    }

    pub fn apply<E: Scalar>(&self, bind: &Binding<E>, x: &Var<E>) -> Var<E> {
        ops::conv2d(x, bind.var(self.w), bind.var(self.b), self.spec)
    }
}

/// Two 3×3 convs with a skip connection around them.
#[derive(Debug, Clone)]
pub struct ResBlock {
    c1: ConvLayer,
    c2: ConvLayer,
}

impl ResBlock {
    pub fn new<E: Scalar>(
        ps: &mut ParamSet<E>,
        prefix: &str,
        channels: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        ResBlock {
            c1: ConvLayer::new(ps, &format!("{prefix}.c1"), channels, channels, 3, 1, rng),
            c2: ConvLayer::new(ps, &format!("{prefix}.c2"), channels, channels, 3, 1, rng),
        }
    }

    pub fn apply<E: Scalar>(&self, bind: &Binding<E>, x: &Var<E>) -> Var<E> {
        ops::residual_block(
            x,
            bind.var(self.c1.w),
            bind.var(self.c1.b),
            bind.var(self.c2.w),
            bind.var(self.c2.b),
        )
    }
}
