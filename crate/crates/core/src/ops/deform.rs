//! Pixel-adaptive deformable 3×3 convolution.
//!
//! Every output position `p` owns a predicted 3×3 kernel (nine scalars,
//! shared across channels) and nine predicted 2-D offsets. Tap `n` of the
//! regular grid `R = {−1,0,1}²` reads the feature map at
//! `p + r_n + Δp_n` by bilinear interpolation (zero outside), scales it by
//! the kernel value, and the nine taps sum:
//!
//! `out[c, p] = Σₙ K[n, p] · F[c, p + rₙ + Δₙ(p)]`
//!
//! With all offsets zero the sampling grid is exactly the regular one and the
//! op degenerates to a spatially-varying ordinary convolution — the offset
//! head of the network is zero-initialized for precisely this reason.

use crate::graph::{make_node, BackwardRule, Var};
use crate::ops::bilinear::Corners;
use crate::tensor::{Scalar, Tensor};

pub const TAPS: usize = 9;

/// Regular 3×3 grid in row-major order: `(−1,−1), (−1,0), …, (1,1)`.
pub const GRID: [(isize, isize); TAPS] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 0),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

/// `f: [C, H, W]`, `kernels: [9, H, W]`, `offsets: [18, H, W]` with channels
/// `2n`/`2n+1` holding `(Δy, Δx)` for tap `n`. Output `[C, H, W]`.
pub fn deform_conv<E: Scalar>(f: &Var<E>, kernels: &Var<E>, offsets: &Var<E>) -> Var<E> {
    let fs = f.shape();
    assert_eq!(fs.len(), 3, "features must be [C, H, W]");
    let (c, h, w) = (fs[0], fs[1], fs[2]);
    assert_eq!(kernels.shape(), &[TAPS, h, w], "kernels must be [9, H, W]");
    assert_eq!(offsets.shape(), &[2 * TAPS, h, w], "offsets must be [18, H, W]");

    let plane = h * w;
    let fd = f.value().data();
    let kd = kernels.value().data();
    let od = offsets.value().data();
    let mut out = vec![E::zero(); c * plane];
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            for n in 0..TAPS {
                let weight = kd[n * plane + p];
                let (ry, rx) = GRID[n];
                let sy = E::from_f64((y as isize + ry) as f64) + od[2 * n * plane + p];
                let sx = E::from_f64((x as isize + rx) as f64) + od[(2 * n + 1) * plane + p];
                let corners = Corners::at(sy, sx);
                for ch in 0..c {
                    let v = corners.value(&fd[ch * plane..(ch + 1) * plane], h, w);
                    out[ch * plane + p] = out[ch * plane + p] + weight * v;
                }
            }
        }
    }

    make_node(
        Tensor::from_vec([c, h, w], out),
        vec![f.clone(), kernels.clone(), offsets.clone()],
        Box::new(DeformBack),
    )
}

struct DeformBack;
impl<E: Scalar> BackwardRule<E> for DeformBack {
    fn name(&self) -> &'static str {
        "deform_conv"
    }
    fn backward(&self, grad_out: &Tensor<E>, parents: &[Var<E>]) {
        let (f, kernels, offsets) = (&parents[0], &parents[1], &parents[2]);
        let fs = f.shape();
        let (c, h, w) = (fs[0], fs[1], fs[2]);
        let plane = h * w;
        let fd = f.value().data();
        let kd = kernels.value().data();
        let od = offsets.value().data();
        let g = grad_out.data();

        let mut df = vec![E::zero(); c * plane];
        let mut dk = vec![E::zero(); TAPS * plane];
        let mut doff = vec![E::zero(); 2 * TAPS * plane];
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                for n in 0..TAPS {
                    let weight = kd[n * plane + p];
                    let (ry, rx) = GRID[n];
                    let sy = E::from_f64((y as isize + ry) as f64) + od[2 * n * plane + p];
                    let sx = E::from_f64((x as isize + rx) as f64) + od[(2 * n + 1) * plane + p];
                    let corners = Corners::at(sy, sx);
                    let mut dk_acc = E::zero();
                    let mut dy_acc = E::zero();
                    let mut dx_acc = E::zero();
                    for ch in 0..c {
                        let gv = g[ch * plane + p];
                        let fplane = &fd[ch * plane..(ch + 1) * plane];
                        if kernels.needs_grad() {
                            dk_acc = dk_acc + gv * corners.value(fplane, h, w);
                        }
                        if f.needs_grad() {
                            corners.scatter(
                                &mut df[ch * plane..(ch + 1) * plane],
                                h,
                                w,
                                gv * weight,
                            );
                        }
                        if offsets.needs_grad() {
                            let (dvy, dvx) = corners.position_grad(fplane, h, w);
                            dy_acc = dy_acc + gv * weight * dvy;
                            dx_acc = dx_acc + gv * weight * dvx;
                        }
                    }
                    dk[n * plane + p] = dk_acc;
                    doff[2 * n * plane + p] = dy_acc;
                    doff[(2 * n + 1) * plane + p] = dx_acc;
                }
            }
        }
        if f.needs_grad() {
            f.accumulate_grad(&Tensor::from_vec([c, h, w], df));
        }
        if kernels.needs_grad() {
            kernels.accumulate_grad(&Tensor::from_vec([TAPS, h, w], dk));
        }
        if offsets.needs_grad() {
            offsets.accumulate_grad(&Tensor::from_vec([2 * TAPS, h, w], doff));
        }
    }
}
