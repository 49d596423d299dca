//! Self-contained synthetic scenes.
//!
//! Real bracketed captures with aligned ground truth are expensive; these
//! generated scenes let the whole system train and be tested end to end
//! with no external data. Each scene is a smooth high-dynamic-range
//! background — spanning exactly two decades of radiance — with a bright
//! textured sprite sliding across it in integer steps between exposures.
//! The sprite supplies motion (ghosts, if fusion ignores it); the dynamic
//! range guarantees the long exposure saturates part of every frame, so
//! hallucination has real work to do.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::radiometry::expose;
use crate::tensor::{Scalar, Tensor};

use super::Scene;

/// Darkest background radiance after normalization.
pub const RADIANCE_FLOOR: f64 = 0.02;
/// Brightest background radiance after normalization (two decades up).
pub const RADIANCE_CEIL: f64 = 2.0;

#[derive(Debug, Clone)]
pub struct SynthConfig {
    /// Image side in pixels (scenes are square).
    pub size: usize,
    /// Maximum sprite translation per exposure step, in pixels.
    pub motion_px: i64,
    /// Exposure times, shortest first.
    pub times: [f64; 3],
    /// Sprite side as a fraction of the image side.
    pub sprite_frac: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            size: 48,
            motion_px: 3,
            times: [0.25, 1.0, 4.0],
            sprite_frac: 0.35,
        }
    }
}

impl SynthConfig {
    /// Sprite side in pixels implied by the config.
    pub fn sprite_side(&self) -> usize {
        ((self.size as f64 * self.sprite_frac) as usize).max(4)
    }

    /// Checks that a scene of these dimensions can exist: the sprite and
    /// its whole motion range must fit inside the image, and the exposure
    /// times must be positive and strictly increasing.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Validation(msg));
        if self.size < 2 {
            return bad(format!("image side must be at least 2, got {}", self.size));
        }
        if self.motion_px < 0 {
            return bad(format!(
                "motion budget must be non-negative, got {}",
                self.motion_px
            ));
        }
        if !(self.sprite_frac > 0.0 && self.sprite_frac < 1.0) {
            return bad(format!(
                "sprite_frac must lie in (0, 1), got {}",
                self.sprite_frac
            ));
        }
        let side = self.sprite_side();
        let margin = 2 * self.motion_px.unsigned_abs() as usize;
        if side + margin >= self.size {
            return bad(format!(
                "a {side}px sprite moving up to {}px cannot fit a {}px image",
                self.motion_px, self.size
            ));
        }
        if !(self.times[0] > 0.0 && self.times[0] < self.times[1] && self.times[1] < self.times[2])
        {
            return bad(format!(
                "exposure times must be positive and strictly increasing, got {:?}",
                self.times
            ));
        }
        Ok(())
    }
}

/// A smooth random radiance field, `[3, size, size]`. Each channel is
/// low-resolution noise bilinearly upsampled, then exponentiated and
/// normalized *in log space* so its minimum is exactly [`RADIANCE_FLOOR`]
/// and its maximum exactly [`RADIANCE_CEIL`].
pub fn smooth_radiance_field<E: Scalar>(size: usize, rng: &mut ChaCha8Rng) -> Tensor<E> {
    assert!(size >= 2);
    let grid = (size / 8).max(2) + 1;
    let mut data = Vec::with_capacity(3 * size * size);
    for _ in 0..3 {
        let noise: Vec<f64> = (0..grid * grid)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let scale = (grid - 1) as f64 / (size - 1) as f64;
        let mut chan = Vec::with_capacity(size * size);
        for y in 0..size {
            for x in 0..size {
                let (gy, gx) = (y as f64 * scale, x as f64 * scale);
                let (y0, x0) = (gy.floor() as usize, gx.floor() as usize);
                let (y1, x1) = ((y0 + 1).min(grid - 1), (x0 + 1).min(grid - 1));
                let (ty, tx) = (gy - y0 as f64, gx - x0 as f64);
                let v = noise[y0 * grid + x0] * (1.0 - ty) * (1.0 - tx)
                    + noise[y0 * grid + x1] * (1.0 - ty) * tx
                    + noise[y1 * grid + x0] * ty * (1.0 - tx)
                    + noise[y1 * grid + x1] * ty * tx;
                chan.push(v);
            }
        }
        let lo = chan.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = chan.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let span = (hi - lo).max(1e-12);
        let (log_lo, log_hi) = (RADIANCE_FLOOR.ln(), RADIANCE_CEIL.ln());
        for v in chan {
            let u = (v - lo) / span;
            data.push(E::from_f64((log_lo + u * (log_hi - log_lo)).exp()));
        }
    }
    Tensor::from_vec([3, size, size], data)
}

/// Pastes `sprite` into `field` at integer position `(y, x)` (top-left).
fn paste<E: Scalar>(field: &mut Tensor<E>, sprite: &Tensor<E>, y: usize, x: usize) {
    let (h, w) = (field.shape()[1], field.shape()[2]);
    let (sh, sw) = (sprite.shape()[1], sprite.shape()[2]);
    assert!(y + sh <= h && x + sw <= w, "sprite out of bounds");
    let data = field.make_mut();
    for c in 0..3 {
        for sy in 0..sh {
            for sx in 0..sw {
                data[c * h * w + (y + sy) * w + (x + sx)] =
                    sprite.data()[c * sh * sw + sy * sw + sx];
            }
        }
    }
}

/// Generates one dynamic scene. The ground truth is the middle frame's
/// radiance; the other frames see the sprite displaced by ± one motion
/// step, so fusing them naively ghosts.
pub fn synth_dynamic_scene<E: Scalar>(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Scene<E> {
    if let Err(e) = cfg.validate() {
        panic!("{e}");
    }
    let s = cfg.size;
    let background: Tensor<E> = smooth_radiance_field(s, rng);
    let side = cfg.sprite_side();
    // Bright textured sprite: log-uniform radiance in the upper decade.
    let sprite = Tensor::from_fn([3, side, side], |_| {
        E::from_f64((rng.random_range(0.2f64.ln()..RADIANCE_CEIL.ln())).exp())
    });
    // Motion step. With a nonzero budget the zero vector is rerolled so
    // the frames really differ; a zero budget deliberately produces a
    // motionless scene.
    let m = cfg.motion_px;
    let (dy, dx) = if m == 0 {
        (0, 0)
    } else {
        loop {
            let d = (rng.random_range(-m..=m), rng.random_range(-m..=m));
            if d != (0, 0) {
                break d;
            }
        }
    };
    // Middle-frame position chosen so all three positions stay in bounds.
    let margin = m.unsigned_abs() as usize;
    let lo = margin as i64;
    let hi = (s - side - margin) as i64;
    let cy = rng.random_range(lo..=hi);
    let cx = rng.random_range(lo..=hi);

    let mut frames: Vec<Tensor<E>> = Vec::with_capacity(3);
    for f in 0..3i64 {
        let mut radiance = background.clone();
        paste(
            &mut radiance,
            &sprite,
            (cy + (f - 1) * dy) as usize,
            (cx + (f - 1) * dx) as usize,
        );
        frames.push(radiance);
    }
    let gt = frames[1].clone();
    let ldrs: [Tensor<E>; 3] = std::array::from_fn(|i| expose(&frames[i], cfg.times[i]));
    Scene {
        ldrs,
        times: cfg.times,
        gt,
    }
}

/// A motion-free scene: every exposure sees `gt` itself. Mixing these into
/// training teaches the adjustment networks that "no motion" must map to
/// "no resampling".
pub fn make_static_scene<E: Scalar>(gt: &Tensor<E>, times: [f64; 3]) -> Scene<E> {
    let ldrs: [Tensor<E>; 3] = std::array::from_fn(|i| expose(gt, times[i]));
    Scene {
        ldrs,
        times,
        gt: gt.clone(),
    }
}
