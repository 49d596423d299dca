//! Shape-rearranging ops on `[C, H, W]` tensors: concatenation, forward
//! differences, average pooling, and the coarse/fine completion blend.

use crate::graph::{make_node, BackwardRule, Var};
use crate::tensor::{Scalar, Tensor};

fn chw(shape: &[usize]) -> (usize, usize, usize) {
    assert_eq!(shape.len(), 3, "expected [C, H, W] tensor, got {shape:?}");
    (shape[0], shape[1], shape[2])
}

/// Concatenates along the channel axis; spatial dims must agree.
pub fn concat_channels<E: Scalar>(parts: &[Var<E>]) -> Var<E> {
    assert!(!parts.is_empty(), "concat of zero tensors");
    let (_, h, w) = chw(parts[0].shape());
    let mut channels = Vec::with_capacity(parts.len());
    let mut total_c = 0;
    for p in parts {
        let (c, ph, pw) = chw(p.shape());
        assert_eq!((ph, pw), (h, w), "concat spatial mismatch");
        channels.push(c);
        total_c += c;
    }
    let mut data = Vec::with_capacity(total_c * h * w);
    for p in parts {
        data.extend_from_slice(p.value().data());
    }
    make_node(
        Tensor::from_vec([total_c, h, w], data),
        parts.to_vec(),
        Box::new(ConcatBack { channels, plane: h * w }),
    )
}

struct ConcatBack {
    channels: Vec<usize>,
    plane: usize,
}
impl<E: Scalar> BackwardRule<E> for ConcatBack {
    fn name(&self) -> &'static str {
        "concat_channels"
    }
    fn backward(&self, grad_out: &Tensor<E>, parents: &[Var<E>]) {
        let g = grad_out.data();
        let mut offset = 0;
        for (c, parent) in self.channels.iter().zip(parents) {
            let len = c * self.plane;
            if parent.needs_grad() {
                let slice = g[offset..offset + len].to_vec();
                parent.accumulate_grad(&Tensor::from_vec(parent.shape().to_vec(), slice));
            }
            offset += len;
        }
    }
}

/// Forward differences along x: `out[c,y,x] = a[c,y,x+1] − a[c,y,x]`,
/// shape `[C, H, W−1]`.
pub fn diff_x<E: Scalar>(a: &Var<E>) -> Var<E> {
    let (c, h, w) = chw(a.shape());
    assert!(w >= 2, "diff_x needs width >= 2");
    let src = a.value().data();
    let mut out = Vec::with_capacity(c * h * (w - 1));
    for ch in 0..c {
        for y in 0..h {
            let row = ch * h * w + y * w;
            for x in 0..w - 1 {
                out.push(src[row + x + 1] - src[row + x]);
            }
        }
    }
    make_node(
        Tensor::from_vec([c, h, w - 1], out),
        vec![a.clone()],
        Box::new(DiffXBack),
    )
}

struct DiffXBack;
impl<E: Scalar> BackwardRule<E> for DiffXBack {
    fn name(&self) -> &'static str {
        "diff_x"
    }
    fn backward(&self, grad_out: &Tensor<E>, parents: &[Var<E>]) {
        let (c, h, w) = chw(parents[0].shape());
        let g = grad_out.data();
        let mut dx = vec![E::zero(); c * h * w];
        for ch in 0..c {
            for y in 0..h {
                let row = ch * h * w + y * w;
                let grow = ch * h * (w - 1) + y * (w - 1);
                for x in 0..w - 1 {
                    let gv = g[grow + x];
                    dx[row + x + 1] = dx[row + x + 1] + gv;
                    dx[row + x] = dx[row + x] - gv;
                }
            }
        }
        parents[0].accumulate_grad(&Tensor::from_vec([c, h, w], dx));
    }
}

/// Forward differences along y: `out[c,y,x] = a[c,y+1,x] − a[c,y,x]`,
/// shape `[C, H−1, W]`.
pub fn diff_y<E: Scalar>(a: &Var<E>) -> Var<E> {
    let (c, h, w) = chw(a.shape());
    assert!(h >= 2, "diff_y needs height >= 2");
    let src = a.value().data();
    let mut out = Vec::with_capacity(c * (h - 1) * w);
    for ch in 0..c {
        for y in 0..h - 1 {
            let row = ch * h * w + y * w;
            for x in 0..w {
                out.push(src[row + w + x] - src[row + x]);
            }
        }
    }
    make_node(
        Tensor::from_vec([c, h - 1, w], out),
        vec![a.clone()],
        Box::new(DiffYBack),
    )
}

struct DiffYBack;
impl<E: Scalar> BackwardRule<E> for DiffYBack {
    fn name(&self) -> &'static str {
        "diff_y"
    }
    fn backward(&self, grad_out: &Tensor<E>, parents: &[Var<E>]) {
        let (c, h, w) = chw(parents[0].shape());
        let g = grad_out.data();
        let mut dx = vec![E::zero(); c * h * w];
        for ch in 0..c {
            for y in 0..h - 1 {
                let row = ch * h * w + y * w;
                let grow = ch * (h - 1) * w + y * w;
                for x in 0..w {
                    let gv = g[grow + x];
                    dx[row + w + x] = dx[row + w + x] + gv;
                    dx[row + x] = dx[row + x] - gv;
                }
            }
        }
        parents[0].accumulate_grad(&Tensor::from_vec([c, h, w], dx));
    }
}

/// Mean pooling by integer factors `(fy, fx)`; dims must divide evenly.
pub fn avg_pool<E: Scalar>(a: &Var<E>, fy: usize, fx: usize) -> Var<E> {
    let (c, h, w) = chw(a.shape());
    assert!(fy > 0 && fx > 0, "pool factors must be positive");
    assert!(
        h % fy == 0 && w % fx == 0,
        "avg_pool {h}x{w} not divisible by {fy}x{fx}"
    );
    let (oh, ow) = (h / fy, w / fx);
    let inv = E::one() / E::from_f64((fy * fx) as f64);
    let src = a.value().data();
    let mut out = vec![E::zero(); c * oh * ow];
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = E::zero();
                for iy in 0..fy {
                    for ix in 0..fx {
                        acc = acc + src[ch * h * w + (oy * fy + iy) * w + ox * fx + ix];
                    }
                }
                out[ch * oh * ow + oy * ow + ox] = acc * inv;
            }
        }
    }
    make_node(
        Tensor::from_vec([c, oh, ow], out),
        vec![a.clone()],
        Box::new(AvgPoolBack { fy, fx }),
    )
}

struct AvgPoolBack {
    fy: usize,
    fx: usize,
}
impl<E: Scalar> BackwardRule<E> for AvgPoolBack {
    fn name(&self) -> &'static str {
        "avg_pool"
    }
    fn backward(&self, grad_out: &Tensor<E>, parents: &[Var<E>]) {
        let (c, h, w) = chw(parents[0].shape());
        let (fy, fx) = (self.fy, self.fx);
        let (oh, ow) = (h / fy, w / fx);
        let inv = E::one() / E::from_f64((fy * fx) as f64);
        let g = grad_out.data();
        let mut dx = vec![E::zero(); c * h * w];
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let gv = g[ch * oh * ow + oy * ow + ox] * inv;
                    for iy in 0..fy {
                        for ix in 0..fx {
                            dx[ch * h * w + (oy * fy + iy) * w + ox * fx + ix] = gv;
                        }
                    }
                }
            }
        }
        parents[0].accumulate_grad(&Tensor::from_vec([c, h, w], dx));
    }
}

/// Completion blend: `out = (1 − m) ⊙ coarse + m ⊙ fine`, with the
/// single-channel mask broadcast across the channels of the two inputs.
/// Differentiable in all three arguments (`∂out/∂m = fine − coarse`).
pub fn complete<E: Scalar>(coarse: &Var<E>, fine: &Var<E>, mask: &Var<E>) -> Var<E> {
    let (c, h, w) = chw(coarse.shape());
    assert_eq!(coarse.shape(), fine.shape(), "coarse/fine shape mismatch");
    assert_eq!(mask.shape(), &[1, h, w], "mask must be [1, H, W]");
    let plane = h * w;
    let (cd, fd, md) = (coarse.value().data(), fine.value().data(), mask.value().data());
    let one = E::one();
    let mut out = vec![E::zero(); c * plane];
    for ch in 0..c {
        for p in 0..plane {
            let m = md[p];
            out[ch * plane + p] = (one - m) * cd[ch * plane + p] + m * fd[ch * plane + p];
        }
    }
    make_node(
        Tensor::from_vec([c, h, w], out),
        vec![coarse.clone(), fine.clone(), mask.clone()],
        Box::new(CompleteBack),
    )
}

struct CompleteBack;
impl<E: Scalar> BackwardRule<E> for CompleteBack {
    fn name(&self) -> &'static str {
        "complete"
    }
    fn backward(&self, grad_out: &Tensor<E>, parents: &[Var<E>]) {
        let (coarse, fine, mask) = (&parents[0], &parents[1], &parents[2]);
        let (c, h, w) = chw(coarse.shape());
        let plane = h * w;
        let g = grad_out.data();
        let md = mask.value().data();
        let one = E::one();
        if coarse.needs_grad() {
            let mut d = vec![E::zero(); c * plane];
            for ch in 0..c {
                for p in 0..plane {
                    d[ch * plane + p] = g[ch * plane + p] * (one - md[p]);
                }
            }
            coarse.accumulate_grad(&Tensor::from_vec([c, h, w], d));
        }
        if fine.needs_grad() {
            let mut d = vec![E::zero(); c * plane];
            for ch in 0..c {
                for p in 0..plane {
                    d[ch * plane + p] = g[ch * plane + p] * md[p];
                }
            }
            fine.accumulate_grad(&Tensor::from_vec([c, h, w], d));
        }
        if mask.needs_grad() {
            let (cd, fd) = (coarse.value().data(), fine.value().data());
            let mut d = vec![E::zero(); plane];
            for ch in 0..c {
                for p in 0..plane {
                    d[p] = d[p] + g[ch * plane + p] * (fd[ch * plane + p] - cd[ch * plane + p]);
                }
            }
            mask.accumulate_grad(&Tensor::from_vec([1, h, w], d));
        }
    }
}
