//! Reductions and softmax.

use crate::graph::{make_node, BackwardRule, Var};
use crate::tensor::{Scalar, Tensor};

pub fn sum<E: Scalar>(a: &Var<E>) -> Var<E> {
    let total = a.value().iter().fold(E::zero(), |acc, &v| acc + v);
    make_node(Tensor::scalar(total), vec![a.clone()], Box::new(SumBack))
}

struct SumBack;
impl<E: Scalar> BackwardRule<E> for SumBack {
    fn name(&self) -> &'static str {
        "sum"
    }
    fn backward(&self, grad_out: &Tensor<E>, parents: &[Var<E>]) {
        let g = grad_out.item();
        parents[0].accumulate_grad(&Tensor::full(parents[0].shape().to_vec(), g));
    }
}

pub fn mean<E: Scalar>(a: &Var<E>) -> Var<E> {
    let n = a.value().numel();
    assert!(n > 0, "mean of empty tensor");
    let total = a.value().iter().fold(E::zero(), |acc, &v| acc + v);
    let inv = E::one() / E::from_f64(n as f64);
    make_node(
        Tensor::scalar(total * inv),
        vec![a.clone()],
        Box::new(MeanBack { inv }),
    )
}

struct MeanBack<E> {
    inv: E,
}
impl<E: Scalar> BackwardRule<E> for MeanBack<E> {
    fn name(&self) -> &'static str {
        "mean"
    }
    fn backward(&self, grad_out: &Tensor<E>, parents: &[Var<E>]) {
        let g = grad_out.item() * self.inv;
        parents[0].accumulate_grad(&Tensor::full(parents[0].shape().to_vec(), g));
    }
}

/// Softmax along the last axis, max-subtracted for stability. Works on any
/// rank ≥ 1; every slice along the last axis sums to one.
pub fn softmax_last<E: Scalar>(a: &Var<E>) -> Var<E> {
    let shape = a.shape().to_vec();
    assert!(!shape.is_empty(), "softmax needs rank >= 1");
    let cols = *shape.last().unwrap();
    assert!(cols > 0, "softmax over empty axis");
    let rows = a.value().numel() / cols;
    let mut out = vec![E::zero(); rows * cols];
    softmax_rows(a.value().data(), &mut out, rows, cols);
    let value = Tensor::from_vec(shape, out);
    let saved = value.clone();
    make_node(
        value,
        vec![a.clone()],
        Box::new(SoftmaxBack { out: saved, cols }),
    )
}

/// Row-wise softmax kernel shared with the attention op.
pub(crate) fn softmax_rows<E: Scalar>(input: &[E], out: &mut [E], rows: usize, cols: usize) {
    for r in 0..rows {
        let row = &input[r * cols..(r + 1) * cols];
        let out_row = &mut out[r * cols..(r + 1) * cols];
        let max = row.iter().fold(E::neg_infinity(), |m, &v| m.max(v));
        let mut total = E::zero();
        for (o, &v) in out_row.iter_mut().zip(row) {
            let e = (v - max).exp();
            *o = e;
            total = total + e;
        }
        let inv = E::one() / total;
        for o in out_row.iter_mut() {
            *o = *o * inv;
        }
    }
}

struct SoftmaxBack<E: Scalar> {
    out: Tensor<E>,
    cols: usize,
}
impl<E: Scalar> BackwardRule<E> for SoftmaxBack<E> {
    fn name(&self) -> &'static str {
        "softmax"
    }
    fn backward(&self, grad_out: &Tensor<E>, parents: &[Var<E>]) {
        let cols = self.cols;
        let rows = self.out.numel() / cols;
        let s = self.out.data();
        let g = grad_out.data();
        let mut dx = vec![E::zero(); rows * cols];
        for r in 0..rows {
            let lo = r * cols;
            let hi = lo + cols;
            let mut dot = E::zero();
            for i in lo..hi {
                dot = dot + g[i] * s[i];
            }
            for i in lo..hi {
                dx[i] = s[i] * (g[i] - dot);
            }
        }
        parents[0].accumulate_grad(&Tensor::from_vec(parents[0].shape().to_vec(), dx));
    }
}
