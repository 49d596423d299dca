//! Geometric augmentation and batch assembly.
//!
//! The fusion task is equivariant under the eight axis-aligned symmetries
//! of the square (rotations by multiples of 90° and mirror images), so
//! training samples are transformed by a random element of that group.
//! Crucially the *same* element is applied to all three exposures and the
//! ground truth of an example, keeping them geometrically consistent.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::{Scalar, Tensor};

use super::Scene;

/// One of the eight axis-aligned symmetries of the square: rotate
/// counter-clockwise by `rot` quarter turns, then mirror horizontally if
/// `flip` is set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dihedral {
    pub rot: u8,
    pub flip: bool,
}

impl Dihedral {
    pub const IDENTITY: Dihedral = Dihedral {
        rot: 0,
        flip: false,
    };

    /// All eight group elements, identity first.
    pub fn all() -> [Dihedral; 8] {
        std::array::from_fn(|i| Dihedral {
            rot: (i % 4) as u8,
            flip: i >= 4,
        })
    }

    /// The element that undoes this one.
    ///
    /// A pure rotation is undone by the complementary rotation. When a
    /// flip follows the rotation, the combined map is an involution
    /// (reflections are their own inverse), so the element undoes itself.
    pub fn inverse(self) -> Dihedral {
        if self.flip {
            self
        } else {
            Dihedral {
                rot: (4 - self.rot) % 4,
                flip: false,
            }
        }
    }

    /// Uniformly random group element.
    pub fn random(rng: &mut ChaCha8Rng) -> Dihedral {
        Dihedral {
            rot: rng.random_range(0..4u8),
            flip: rng.random(),
        }
    }
}

/// Applies `d` to a `[C, H, W]` tensor. Odd rotations swap the two
/// spatial extents.
pub fn apply_dihedral<E: Scalar>(t: &Tensor<E>, d: Dihedral) -> Tensor<E> {
    let shape = t.shape();
    assert_eq!(shape.len(), 3, "expected [C, H, W], got {shape:?}");
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    // Output extents after `rot` quarter turns.
    let (oh, ow) = if d.rot % 2 == 0 { (h, w) } else { (w, h) };
    let mut out = Vec::with_capacity(c * oh * ow);
    let src = t.data();
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for y in 0..oh {
            for x in 0..ow {
                // Mirror first in output coordinates, then invert the
                // rotation to find the source pixel.
                let xm = if d.flip { ow - 1 - x } else { x };
                let (sy, sx) = match d.rot % 4 {
                    0 => (y, xm),
                    // 90° CCW: out(y, x) = in(x, W-1-y)
                    1 => (xm, w - 1 - y),
                    2 => (h - 1 - y, w - 1 - xm),
                    _ => (h - 1 - xm, y),
                };
                out.push(plane[sy * w + sx]);
            }
        }
    }
    Tensor::from_vec([c, oh, ow], out)
}

/// Crops a `[C, H, W]` tensor to a `size`×`size` square at `(y0, x0)`.
pub fn crop<E: Scalar>(t: &Tensor<E>, y0: usize, x0: usize, size: usize) -> Tensor<E> {
    let shape = t.shape();
    assert_eq!(shape.len(), 3, "expected [C, H, W], got {shape:?}");
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    assert!(
        y0 + size <= h && x0 + size <= w,
        "crop {size} at ({y0}, {x0}) exceeds {h}x{w}"
    );
    let src = t.data();
    let mut out = Vec::with_capacity(c * size * size);
    for ch in 0..c {
        for y in 0..size {
            let row = ch * h * w + (y0 + y) * w + x0;
            out.extend_from_slice(&src[row..row + size]);
        }
    }
    Tensor::from_vec([c, size, size], out)
}

/// Crops every image of a scene with the same window.
pub fn crop_scene<E: Scalar>(scene: &Scene<E>, y0: usize, x0: usize, size: usize) -> Scene<E> {
    Scene {
        ldrs: std::array::from_fn(|i| crop(&scene.ldrs[i], y0, x0, size)),
        times: scene.times,
        gt: crop(&scene.gt, y0, x0, size),
    }
}

/// Crops a uniformly random `size`×`size` window out of the scene.
pub fn sample_patch<E: Scalar>(scene: &Scene<E>, size: usize, rng: &mut ChaCha8Rng) -> Scene<E> {
    let (h, w) = (scene.height(), scene.width());
    assert!(size <= h && size <= w, "patch {size} exceeds scene {h}x{w}");
    let y0 = rng.random_range(0..=h - size);
    let x0 = rng.random_range(0..=w - size);
    crop_scene(scene, y0, x0, size)
}

/// One training example: the three six-channel input stacks and the
/// target radiance, all geometrically consistent.
#[derive(Debug, Clone)]
pub struct TrainExample<E: Scalar> {
    pub inputs: [Tensor<E>; 3],
    pub gt: Tensor<E>,
}

/// Turns a scene into a training example under symmetry `d`.
pub fn example_from_scene<E: Scalar>(scene: &Scene<E>, d: Dihedral) -> TrainExample<E> {
    let transformed = Scene {
        ldrs: std::array::from_fn(|i| apply_dihedral(&scene.ldrs[i], d)),
        times: scene.times,
        gt: apply_dihedral(&scene.gt, d),
    };
    TrainExample {
        inputs: transformed.inputs(),
        gt: transformed.gt,
    }
}

/// Assembles a batch of augmented patches. Three out of every four slots
/// draw from the `dynamic` pool and the fourth from the motion-free
/// `still` pool, so the networks keep seeing evidence that static scenes
/// need no compensation. Scene choice, window and symmetry all come from
/// `rng`, so a seeded generator reproduces the batch bit for bit.
pub fn make_batch<E: Scalar>(
    dynamic: &[Scene<E>],
    still: &[Scene<E>],
    batch: usize,
    patch: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<TrainExample<E>> {
    assert!(!dynamic.is_empty(), "no dynamic scenes");
    assert!(!still.is_empty(), "no still scenes");
    (0..batch)
        .map(|i| {
            let pool = if i % 4 == 3 { still } else { dynamic };
            let scene = &pool[rng.random_range(0..pool.len())];
            let window = sample_patch(scene, patch, rng);
            example_from_scene(&window, Dihedral::random(rng))
        })
        .collect()
}
