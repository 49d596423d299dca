//! 2-D convolution over `[C, H, W]` tensors with zero padding, stride and
//! dilation, plus the residual block built from it.
//!
//! Forward lowers to im2col + GEMM; backward reuses the same lowering
//! (weight gradient is `G · colsᵀ`, input gradient is `Wᵀ · G` folded back
//! through col2im). The column matrix is recomputed in the backward pass
//! rather than saved — at the sizes this crate trains at, the extra im2col is
//! cheaper than holding one column buffer per layer for the whole graph.

use crate::graph::{make_node, BackwardRule, Var};
use crate::tensor::{gemm_nn, gemm_nt, gemm_tn, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub dilation: usize,
    pub padding: usize,
}

impl ConvSpec {
    /// Stride-1 convolution padded so the output matches the input size
    /// (odd kernels only).
    pub fn same(kernel: usize, dilation: usize) -> Self {
        assert!(kernel % 2 == 1, "same-padding needs an odd kernel");
        ConvSpec {
            stride: 1,
            dilation,
            padding: dilation * (kernel - 1) / 2,
        }
    }

    pub fn unit() -> Self {
        ConvSpec {
            stride: 1,
            dilation: 1,
            padding: 0,
        }
    }

    fn out_dim(&self, input: usize, kernel: usize) -> usize {
        let span = self.dilation * (kernel - 1) + 1;
        assert!(
            input + 2 * self.padding >= span,
            "conv input {input} (+2·{}) smaller than kernel span {span}",
            self.padding
        );
        (input + 2 * self.padding - span) / self.stride + 1
    }
}

fn im2col<E: Scalar>(
    x: &[E],
    c_in: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    spec: ConvSpec,
    oh: usize,
    ow: usize,
) -> Vec<E> {
    let mut cols = vec![E::zero(); c_in * kh * kw * oh * ow];
    let plane = oh * ow;
    for ci in 0..c_in {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = ((ci * kh + ky) * kw + kx) * plane;
                for oy in 0..oh {
                    let iy = (oy * spec.stride + ky * spec.dilation) as isize
                        - spec.padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src_row = ci * h * w + iy as usize * w;
                    for ox in 0..ow {
                        let ix = (ox * spec.stride + kx * spec.dilation) as isize
                            - spec.padding as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        cols[row + oy * ow + ox] = x[src_row + ix as usize];
                    }
                }
            }
        }
    }
    cols
}

fn col2im<E: Scalar>(
    dcols: &[E],
    c_in: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    spec: ConvSpec,
    oh: usize,
    ow: usize,
) -> Vec<E> {
    let mut dx = vec![E::zero(); c_in * h * w];
    let plane = oh * ow;
    for ci in 0..c_in {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = ((ci * kh + ky) * kw + kx) * plane;
                for oy in 0..oh {
                    let iy = (oy * spec.stride + ky * spec.dilation) as isize
                        - spec.padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_row = ci * h * w + iy as usize * w;
                    for ox in 0..ow {
                        let ix = (ox * spec.stride + kx * spec.dilation) as isize
                            - spec.padding as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        dx[dst_row + ix as usize] =
                            dx[dst_row + ix as usize] + dcols[row + oy * ow + ox];
                    }
                }
            }
        }
    }
    dx
}

/// `x: [C_in, H, W]`, `weight: [C_out, C_in, kh, kw]`, `bias: [C_out]`.
pub fn conv2d<E: Scalar>(x: &Var<E>, weight: &Var<E>, bias: &Var<E>, spec: ConvSpec) -> Var<E> {
    let xs = x.shape();
    let ws = weight.shape();
    assert_eq!(xs.len(), 3, "conv input must be [C, H, W], got {xs:?}");
    assert_eq!(ws.len(), 4, "conv weight must be [Co, Ci, kh, kw], got {ws:?}");
    let (c_in, h, w) = (xs[0], xs[1], xs[2]);
    let (c_out, kh, kw) = (ws[0], ws[2], ws[3]);
    assert_eq!(ws[1], c_in, "weight expects {} input channels, x has {c_in}", ws[1]);
    assert_eq!(bias.shape(), &[c_out], "bias must be [C_out]");

    let oh = spec.out_dim(h, kh);
    let ow = spec.out_dim(w, kw);
    let plane = oh * ow;
    let k = c_in * kh * kw;

    let cols = im2col(x.value().data(), c_in, h, w, kh, kw, spec, oh, ow);
    let mut out = vec![E::zero(); c_out * plane];
    gemm_nn(c_out, k, plane, weight.value().data(), &cols, &mut out);
    let bd = bias.value().data();
    for co in 0..c_out {
        let b = bd[co];
        for v in &mut out[co * plane..(co + 1) * plane] {
            *v = *v + b;
        }
    }

    make_node(
        Tensor::from_vec([c_out, oh, ow], out),
        vec![x.clone(), weight.clone(), bias.clone()],
        Box::new(ConvBack { spec }),
    )
}

struct ConvBack {
    spec: ConvSpec,
}
impl<E: Scalar> BackwardRule<E> for ConvBack {
    fn name(&self) -> &'static str {
        "conv2d"
    }
    fn backward(&self, grad_out: &Tensor<E>, parents: &[Var<E>]) {
        let (x, weight, bias) = (&parents[0], &parents[1], &parents[2]);
        let xs = x.shape();
        let ws = weight.shape();
        let (c_in, h, w) = (xs[0], xs[1], xs[2]);
        let (c_out, kh, kw) = (ws[0], ws[2], ws[3]);
        let os = grad_out.shape();
        let (oh, ow) = (os[1], os[2]);
        let plane = oh * ow;
        let k = c_in * kh * kw;
        let g = grad_out.data();

        if bias.needs_grad() {
            let mut db = vec![E::zero(); c_out];
            for co in 0..c_out {
                let mut acc = E::zero();
                for &v in &g[co * plane..(co + 1) * plane] {
                    acc = acc + v;
                }
                db[co] = acc;
            }
            bias.accumulate_grad(&Tensor::from_vec([c_out], db));
        }

        if weight.needs_grad() {
            let cols = im2col(x.value().data(), c_in, h, w, kh, kw, self.spec, oh, ow);
            let mut dw = vec![E::zero(); c_out * k];
            // dW[c_out × k] = G[c_out × plane] · cols[k × plane]ᵀ
            gemm_nt(c_out, plane, k, g, &cols, &mut dw);
            weight.accumulate_grad(&Tensor::from_vec([c_out, c_in, kh, kw], dw));
        }

        if x.needs_grad() {
            let mut dcols = vec![E::zero(); k * plane];
            // dcols[k × plane] = W[c_out × k]ᵀ · G[c_out × plane]
            gemm_tn(k, c_out, plane, weight.value().data(), g, &mut dcols);
            let dx = col2im(&dcols, c_in, h, w, kh, kw, self.spec, oh, ow);
            x.accumulate_grad(&Tensor::from_vec([c_in, h, w], dx));
        }
    }
}

/// `x + conv(relu(conv(x)))`, both convs 3×3 same-padded, channel-preserving.
pub fn residual_block<E: Scalar>(
    x: &Var<E>,
    w1: &Var<E>,
    b1: &Var<E>,
    w2: &Var<E>,
    b2: &Var<E>,
) -> Var<E> {
    let spec = ConvSpec::same(3, 1);
    let inner = crate::ops::relu(&conv2d(x, w1, b1, spec));
    let outer = conv2d(&inner, w2, b2, spec);
    crate::ops::add(x, &outer)
}
