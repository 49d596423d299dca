//! Pointwise differentiable ops.
//!
//! Kink conventions, chosen once and relied on by the finite-difference
//! tests (which perturb their fixtures away from the kinks):
//! `relu'(0) = 0`, `abs'(0) = 0`.

use crate::graph::{make_node, BackwardRule, Var};
use crate::tensor::{Scalar, Tensor};

pub fn add<E: Scalar>(a: &Var<E>, b: &Var<E>) -> Var<E> {
    let value = a.value().zip_map(b.value(), |x, y| x + y);
    make_node(value, vec![a.clone(), b.clone()], Box::new(AddBack))
}

struct AddBack;
impl<E: Scalar> BackwardRule<E> for AddBack {
    fn name(&self) -> &'static str {
        "add"
    }
    fn backward(&self, grad_out: &Tensor<E>, parents: &[Var<E>]) {
        parents[0].accumulate_grad(grad_out);
        parents[1].accumulate_grad(grad_out);
    }
}

pub fn sub<E: Scalar>(a: &Var<E>, b: &Var<E>) -> Var<E> {
    let value = a.value().zip_map(b.value(), |x, y| x - y);
    make_node(value, vec![a.clone(), b.clone()], Box::new(SubBack))
}

struct SubBack;
impl<E: Scalar> BackwardRule<E> for SubBack {
    fn name(&self) -> &'static str {
        "sub"
    }
    fn backward(&self, grad_out: &Tensor<E>, parents: &[Var<E>]) {
        parents[0].accumulate_grad(grad_out);
        parents[1].accumulate_grad(&grad_out.map(|g| -g));
    }
}

/// Elementwise (Hadamard) product.
pub fn mul<E: Scalar>(a: &Var<E>, b: &Var<E>) -> Var<E> {
    let value = a.value().zip_map(b.value(), |x, y| x * y);
    make_node(value, vec![a.clone(), b.clone()], Box::new(MulBack))
}

struct MulBack;
impl<E: Scalar> BackwardRule<E> for MulBack {
    fn name(&self) -> &'static str {
        "mul"
    }
    fn backward(&self, grad_out: &Tensor<E>, parents: &[Var<E>]) {
        if parents[0].needs_grad() {
            parents[0].accumulate_grad(&grad_out.zip_map(parents[1].value(), |g, y| g * y));
        }
        if parents[1].needs_grad() {
            parents[1].accumulate_grad(&grad_out.zip_map(parents[0].value(), |g, x| g * x));
        }
    }
}

/// `scale · x + shift`, both constants. Covers negation, `1 − x`, and plain
/// scalar adds without extra node types.
pub fn affine<E: Scalar>(a: &Var<E>, scale: f64, shift: f64) -> Var<E> {
    let (s, c) = (E::from_f64(scale), E::from_f64(shift));
    let value = a.value().map(|x| s * x + c);
    make_node(value, vec![a.clone()], Box::new(AffineBack { scale: s }))
}

struct AffineBack<E> {
    scale: E,
}
impl<E: Scalar> BackwardRule<E> for AffineBack<E> {
    fn name(&self) -> &'static str {
        "affine"
    }
    fn backward(&self, grad_out: &Tensor<E>, parents: &[Var<E>]) {
        parents[0].accumulate_grad(&grad_out.map(|g| g * self.scale));
    }
}

pub fn relu<E: Scalar>(a: &Var<E>) -> Var<E> {
    let zero = E::zero();
    let value = a.value().map(|x| x.max(zero));
    make_node(value, vec![a.clone()], Box::new(ReluBack))
}

struct ReluBack;
impl<E: Scalar> BackwardRule<E> for ReluBack {
    fn name(&self) -> &'static str {
        "relu"
    }
    fn backward(&self, grad_out: &Tensor<E>, parents: &[Var<E>]) {
        let x = parents[0].value();
        parents[0].accumulate_grad(&grad_out.zip_map(x, |g, v| {
            if v > E::zero() {
                g
            } else {
                E::zero()
            }
        }));
    }
}

pub fn abs<E: Scalar>(a: &Var<E>) -> Var<E> {
    let value = a.value().map(|x| x.abs());
    make_node(value, vec![a.clone()], Box::new(AbsBack))
}

struct AbsBack;
impl<E: Scalar> BackwardRule<E> for AbsBack {
    fn name(&self) -> &'static str {
        "abs"
    }
    fn backward(&self, grad_out: &Tensor<E>, parents: &[Var<E>]) {
        let x = parents[0].value();
        parents[0].accumulate_grad(&grad_out.zip_map(x, |g, v| {
            if v > E::zero() {
                g
            } else if v < E::zero() {
                -g
            } else {
                E::zero()
            }
        }));
    }
}

/// Numerically stable logistic function.
pub fn sigmoid<E: Scalar>(a: &Var<E>) -> Var<E> {
    let value = a.value().map(sigmoid_scalar);
    let saved = value.clone();
    make_node(value, vec![a.clone()], Box::new(SigmoidBack { out: saved }))
}

pub(crate) fn sigmoid_scalar<E: Scalar>(x: E) -> E {
    let one = E::one();
    if x >= E::zero() {
        one / (one + (-x).exp())
    } else {
        let e = x.exp();
        e / (one + e)
    }
}

struct SigmoidBack<E: Scalar> {
    out: Tensor<E>,
}
impl<E: Scalar> BackwardRule<E> for SigmoidBack<E> {
    fn name(&self) -> &'static str {
        "sigmoid"
    }
    fn backward(&self, grad_out: &Tensor<E>, parents: &[Var<E>]) {
        let one = E::one();
        parents[0].accumulate_grad(&grad_out.zip_map(&self.out, |g, s| g * s * (one - s)));
    }
}

/// Compression strength used for tone mapping throughout training and
/// evaluation.
pub const MU: f64 = 5000.0;

/// μ-law range compressor `T(h) = ln(1 + μh) / ln(1 + μ)`, mapping `[0, 1]`
/// onto `[0, 1]` with detail pushed toward the dark end. Inputs must be
/// non-negative (clamp upstream).
pub fn mu_law<E: Scalar>(a: &Var<E>, mu: f64) -> Var<E> {
    let m = E::from_f64(mu);
    let denom = E::from_f64((1.0 + mu).ln());
    let value = a.value().map(|h| (E::one() + m * h).ln() / denom);
    make_node(value, vec![a.clone()], Box::new(MuLawBack { mu: m, denom }))
}

/// Same compressor on a plain tensor, for metrics and previews.
pub fn mu_law_tensor<E: Scalar>(t: &Tensor<E>, mu: f64) -> Tensor<E> {
    let m = E::from_f64(mu);
    let denom = E::from_f64((1.0 + mu).ln());
    t.map(|h| (E::one() + m * h).ln() / denom)
}

struct MuLawBack<E: Scalar> {
    mu: E,
    denom: E,
}
impl<E: Scalar> BackwardRule<E> for MuLawBack<E> {
    fn name(&self) -> &'static str {
        "mu_law"
    }
    fn backward(&self, grad_out: &Tensor<E>, parents: &[Var<E>]) {
        let x = parents[0].value();
        let (mu, denom) = (self.mu, self.denom);
        parents[0]
            .accumulate_grad(&grad_out.zip_map(x, |g, h| g * mu / ((E::one() + mu * h) * denom)));
    }
}

/// `Σᵢ cᵢ·termᵢ` over scalar terms — the loss combiner. Terms with
/// coefficient exactly zero contribute nothing, bit for bit.
pub fn linear_combination<E: Scalar>(terms: &[(f64, Var<E>)]) -> Var<E> {
    assert!(!terms.is_empty(), "empty linear combination");
    let mut acc = E::zero();
    for (c, t) in terms {
        assert!(
            t.value().is_scalar(),
            "linear_combination over non-scalar term of shape {:?}",
            t.shape()
        );
        acc = acc + E::from_f64(*c) * t.value().item();
    }
    let coeffs: Vec<E> = terms.iter().map(|(c, _)| E::from_f64(*c)).collect();
    let parents: Vec<Var<E>> = terms.iter().map(|(_, t)| t.clone()).collect();
    make_node(
        Tensor::scalar(acc),
        parents,
        Box::new(LinCombBack { coeffs }),
    )
}

struct LinCombBack<E> {
    coeffs: Vec<E>,
}
impl<E: Scalar> BackwardRule<E> for LinCombBack<E> {
    fn name(&self) -> &'static str {
        "linear_combination"
    }
    fn backward(&self, grad_out: &Tensor<E>, parents: &[Var<E>]) {
        let g = grad_out.item();
        for (coeff, parent) in self.coeffs.iter().zip(parents) {
            parent.accumulate_grad(&Tensor::scalar(g * *coeff));
        }
    }
}
