//! Bilinear sampling at fractional coordinates with a zero exterior.
//!
//! The image is treated as a lattice extended by zeros outside
//! `[0, H−1] × [0, W−1]`; interpolation is over the four surrounding lattice
//! points, any out-of-bounds corner contributing zero. The resulting function
//! is continuous everywhere and piecewise-bilinear, with kinks only on
//! integer grid lines — gradient-check fixtures keep sample points off those
//! lines.

use crate::graph::{make_node, BackwardRule, Var};
use crate::tensor::{Scalar, Tensor};

/// Corner geometry of one sample point, shared by value and gradient code.
#[derive(Clone, Copy)]
pub(crate) struct Corners {
    pub y0: isize,
    pub x0: isize,
    pub ty: f64,
    pub tx: f64,
}

impl Corners {
    pub fn at<E: Scalar>(y: E, x: E) -> Self {
        let yf = y.as_f64();
        let xf = x.as_f64();
        let y0 = yf.floor();
        let x0 = xf.floor();
        Corners {
            y0: y0 as isize,
            x0: x0 as isize,
            ty: yf - y0,
            tx: xf - x0,
        }
    }

    #[inline]
    fn fetch<E: Scalar>(plane: &[E], h: usize, w: usize, y: isize, x: isize) -> E {
        if y >= 0 && (y as usize) < h && x >= 0 && (x as usize) < w {
            plane[y as usize * w + x as usize]
        } else {
            E::zero()
        }
    }

    /// Interpolated value on one channel plane.
    pub fn value<E: Scalar>(&self, plane: &[E], h: usize, w: usize) -> E {
        let v00 = Self::fetch(plane, h, w, self.y0, self.x0);
        let v01 = Self::fetch(plane, h, w, self.y0, self.x0 + 1);
        let v10 = Self::fetch(plane, h, w, self.y0 + 1, self.x0);
        let v11 = Self::fetch(plane, h, w, self.y0 + 1, self.x0 + 1);
        let ty = E::from_f64(self.ty);
        let tx = E::from_f64(self.tx);
        let one = E::one();
        (one - ty) * ((one - tx) * v00 + tx * v01) + ty * ((one - tx) * v10 + tx * v11)
    }

    /// (∂value/∂y, ∂value/∂x) on one channel plane.
    pub fn position_grad<E: Scalar>(&self, plane: &[E], h: usize, w: usize) -> (E, E) {
        let v00 = Self::fetch(plane, h, w, self.y0, self.x0);
        let v01 = Self::fetch(plane, h, w, self.y0, self.x0 + 1);
        let v10 = Self::fetch(plane, h, w, self.y0 + 1, self.x0);
        let v11 = Self::fetch(plane, h, w, self.y0 + 1, self.x0 + 1);
        let ty = E::from_f64(self.ty);
        let tx = E::from_f64(self.tx);
        let one = E::one();
        let dy = (one - tx) * (v10 - v00) + tx * (v11 - v01);
        let dx = (one - ty) * (v01 - v00) + ty * (v11 - v10);
        (dy, dx)
    }

    /// Adds `g`-weighted corner contributions into `dplane` (the adjoint of
    /// `value`); out-of-bounds corners are dropped, matching the zero exterior.
    pub fn scatter<E: Scalar>(&self, dplane: &mut [E], h: usize, w: usize, g: E) {
        let ty = E::from_f64(self.ty);
        let tx = E::from_f64(self.tx);
        let one = E::one();
        let mut put = |y: isize, x: isize, weight: E| {
            if y >= 0 && (y as usize) < h && x >= 0 && (x as usize) < w {
                let i = y as usize * w + x as usize;
                dplane[i] = dplane[i] + g * weight;
            }
        };
        put(self.y0, self.x0, (one - ty) * (one - tx));
        put(self.y0, self.x0 + 1, (one - ty) * tx);
        put(self.y0 + 1, self.x0, ty * (one - tx));
        put(self.y0 + 1, self.x0 + 1, ty * tx);
    }
}

/// Samples `f: [C, H, W]` at `points: [N, 2]` (row = `(y, x)`), giving
/// `[C, N]`. Differentiable in the image and in the sample positions.
pub fn bilinear_sample<E: Scalar>(f: &Var<E>, points: &Var<E>) -> Var<E> {
    let fs = f.shape();
    assert_eq!(fs.len(), 3, "image must be [C, H, W]");
    let ps = points.shape();
    assert!(
        ps.len() == 2 && ps[1] == 2,
        "points must be [N, 2] of (y, x), got {ps:?}"
    );
    let (c, h, w) = (fs[0], fs[1], fs[2]);
    let n = ps[0];
    let fd = f.value().data();
    let pd = points.value().data();
    let mut out = vec![E::zero(); c * n];
    for i in 0..n {
        let corners = Corners::at(pd[2 * i], pd[2 * i + 1]);
        for ch in 0..c {
            out[ch * n + i] = corners.value(&fd[ch * h * w..(ch + 1) * h * w], h, w);
        }
    }
    make_node(
        Tensor::from_vec([c, n], out),
        vec![f.clone(), points.clone()],
        Box::new(BilinearBack),
    )
}

struct BilinearBack;
impl<E: Scalar> BackwardRule<E> for BilinearBack {
    fn name(&self) -> &'static str {
        "bilinear_sample"
    }
    fn backward(&self, grad_out: &Tensor<E>, parents: &[Var<E>]) {
        let (f, points) = (&parents[0], &parents[1]);
        let fs = f.shape();
        let (c, h, w) = (fs[0], fs[1], fs[2]);
        let n = points.shape()[0];
        let fd = f.value().data();
        let pd = points.value().data();
        let g = grad_out.data();

        let mut df = vec![E::zero(); c * h * w];
        let mut dp = vec![E::zero(); n * 2];
        for i in 0..n {
            let corners = Corners::at(pd[2 * i], pd[2 * i + 1]);
            for ch in 0..c {
                let gv = g[ch * n + i];
                if gv == E::zero() {
                    continue;
                }
                let plane = &fd[ch * h * w..(ch + 1) * h * w];
                if f.needs_grad() {
                    corners.scatter(&mut df[ch * h * w..(ch + 1) * h * w], h, w, gv);
                }
                if points.needs_grad() {
                    let (dy, dx) = corners.position_grad(plane, h, w);
                    dp[2 * i] = dp[2 * i] + gv * dy;
                    dp[2 * i + 1] = dp[2 * i + 1] + gv * dx;
                }
            }
        }
        if f.needs_grad() {
            f.accumulate_grad(&Tensor::from_vec([c, h, w], df));
        }
        if points.needs_grad() {
            points.accumulate_grad(&Tensor::from_vec([n, 2], dp));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image() -> Var<f64> {
        // 1×2×2 plane: [[1, 2], [3, 4]]
        Var::param(Tensor::from_vec([1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]))
    }

    fn sample_one(f: &Var<f64>, y: f64, x: f64) -> f64 {
        let p = Var::constant(Tensor::from_vec([1, 2], vec![y, x]));
        bilinear_sample(f, &p).value().data()[0]
    }

    #[test]
    fn lattice_points_return_exact_values() {
        let f = image();
        assert_eq!(sample_one(&f, 0.0, 0.0), 1.0);
        assert_eq!(sample_one(&f, 1.0, 1.0), 4.0);
    }

    #[test]
    fn center_of_cell_averages_corners() {
        let f = image();
        assert_eq!(sample_one(&f, 0.5, 0.5), 2.5);
    }

    #[test]
    fn outside_decays_linearly_to_zero() {
        let f = image();
        // Half a pixel above the top edge: only the (0,0)/(0,1) corners are
        // in bounds, each at half weight.
        assert_eq!(sample_one(&f, -0.5, 0.0), 0.5);
        // A full pixel out: everything out of bounds.
        assert_eq!(sample_one(&f, -1.0, 0.0), 0.0);
        assert_eq!(sample_one(&f, 5.0, 5.0), 0.0);
    }

    #[test]
    fn image_gradient_scatters_corner_weights() {
        let f = image();
        let p = Var::constant(Tensor::from_vec([1, 2], vec![0.25, 0.75]));
        let out = bilinear_sample(&f, &p);
        crate::ops::sum(&out).backward();
        let g = f.grad().unwrap();
        let expect = [0.75 * 0.25, 0.75 * 0.75, 0.25 * 0.25, 0.25 * 0.75];
        for (got, want) in g.data().iter().zip(expect) {
            assert!((got - want).abs() < 1e-15);
        }
    }
}
