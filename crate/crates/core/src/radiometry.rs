//! Radiometric model tying LDR exposures to HDR radiance.
//!
//! A camera with exposure time `t` and gamma curve `γ` maps scene radiance
//! `H` to the stored value `I = clip((H·t)^{1/γ})`; inverting the curve and
//! dividing the exposure back out recovers radiance from a non-saturated
//! pixel: `H = I^γ / t`. Saturated pixels are exactly why several exposures
//! are fused — a single short exposure caps recoverable radiance at `1/t`.
//!
//! These run on plain tensors (data preparation, not differentiated); the
//! network consumes each exposure as a six-channel stack of the LDR values
//! and their linearized radiance.

use crate::tensor::{Scalar, Tensor};

/// Display-referred gamma used for all synthetic exposures.
pub const GAMMA: f64 = 2.2;

/// Simulates exposing radiance `hdr` for time `t`: `clip((H·t)^{1/γ})`.
pub fn expose<E: Scalar>(hdr: &Tensor<E>, t: f64) -> Tensor<E> {
    let inv_gamma = E::from_f64(1.0 / GAMMA);
    let t = E::from_f64(t);
    hdr.map(|h| {
        (h * t)
            .max(E::zero())
            .powf(inv_gamma)
            .min(E::one())
    })
}

/// Recovers radiance from an LDR exposure: `I^γ / t`. Saturated pixels come
/// back as `1/t`, the brightest radiance the exposure can represent.
pub fn linearize<E: Scalar>(ldr: &Tensor<E>, t: f64) -> Tensor<E> {
    let gamma = E::from_f64(GAMMA);
    let inv_t = E::from_f64(1.0 / t);
    ldr.map(|i| i.powf(gamma) * inv_t)
}

/// Stacks an LDR exposure with its linearized radiance: `[3,H,W] → [6,H,W]`,
/// LDR channels first. This is the per-exposure network input.
pub fn six_channel<E: Scalar>(ldr: &Tensor<E>, t: f64) -> Tensor<E> {
    let s = ldr.shape();
    assert_eq!(s.len(), 3, "expected [3, H, W]");
    assert_eq!(s[0], 3, "expected 3 channels");
    let lin = linearize(ldr, t);
    let plane = s[1] * s[2];
    let mut out = Vec::with_capacity(6 * plane);
    out.extend_from_slice(ldr.data());
    out.extend_from_slice(lin.data());
    Tensor::from_vec([6, s[1], s[2]], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::{rng_from, uniform};
    use proptest::prelude::*;

    #[test]
    fn linearize_matches_hand_computed_value() {
        // 0.5^2.2 / 4 = 0.054409410…
        let ldr = Tensor::scalar(0.5f64);
        let h = linearize(&ldr, 4.0);
        assert!((h.item() - 0.054409410).abs() < 1e-8);
    }

    #[test]
    fn expose_matches_hand_computed_value() {
        // (0.25·1)^(1/2.2) = 0.532520545…
        let hdr = Tensor::scalar(0.25f64);
        let i = expose(&hdr, 1.0);
        assert!((i.item() - 0.532520545).abs() < 1e-8);
    }

    #[test]
    fn round_trip_recovers_radiance_below_saturation() {
        let mut rng = rng_from(2);
        for &t in &[0.25, 1.0, 4.0] {
            // Radiance strictly below the saturation point 1/t.
            let hdr: Tensor<f64> = uniform([3, 4, 4], 0.0, 0.99 / t, &mut rng);
            let back = linearize(&expose(&hdr, t), t);
            for (a, b) in hdr.iter().zip(back.iter()) {
                assert!((a - b).abs() < 1e-6, "{a} vs {b} at t={t}");
            }
        }
    }

    #[test]
    fn saturation_caps_recovered_radiance_at_inverse_exposure() {
        let hdr = Tensor::from_vec([1, 1, 2], vec![5.0f64, 100.0]);
        let t = 4.0;
        let back = linearize(&expose(&hdr, t), t);
        for v in back.iter() {
            assert!((v - 0.25).abs() < 1e-12, "cap must be 1/t, got {v}");
        }
    }

    #[test]
    fn six_channel_stacks_ldr_then_radiance() {
        let mut rng = rng_from(3);
        let ldr: Tensor<f64> = uniform([3, 2, 3], 0.0, 1.0, &mut rng);
        let x = six_channel(&ldr, 0.25);
        assert_eq!(x.shape(), &[6, 2, 3]);
        assert_eq!(&x.data()[..18], ldr.data());
        assert_eq!(&x.data()[18..], linearize(&ldr, 0.25).data());
    }

    proptest! {
        #[test]
        fn prop_expose_is_monotone_and_bounded(
            a in 0.0f64..10.0,
            b in 0.0f64..10.0,
            t in prop::sample::select(vec![0.25, 1.0, 4.0]),
        ) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let e = expose(&Tensor::from_vec([2], vec![lo, hi]), t);
            prop_assert!(e.data()[0] <= e.data()[1]);
            prop_assert!(e.data()[1] <= 1.0);
            prop_assert!(e.data()[0] >= 0.0);
        }

        #[test]
        fn prop_round_trip_below_saturation(
            h in 0.001f64..0.2,
            t in prop::sample::select(vec![0.25, 1.0, 4.0]),
        ) {
            let back = linearize(&expose(&Tensor::scalar(h), t), t);
            prop_assert!((back.item() - h).abs() < 1e-6);
        }
    }
}
