//! Finite-difference verification of backward rules.
//!
//! [`grad_check`] compares the gradients produced by [`Var::backward`]
//! against central differences on a scalar-valued function of leaf tensors.
//! [`registry`] enumerates every differentiable op in the crate with seeded
//! test instances; the CLI `gradcheck` command and the test suite both drive
//! that list, so adding an op without registering it here shows up as a
//! coverage gap in review, not a silent hole.
//!
//! Everything here runs at `f64`. Fixtures are constructed to stay away from
//! the few non-smooth points the ops have (relu/abs at 0, bilinear sampling
//! on integer grid lines) — see the per-op builders.

use crate::graph::Var;
use crate::init::{derive_seed, rng_from, uniform};
use crate::ops;
use crate::tensor::Tensor;

/// Central-difference step. With f64 round-off this balances truncation and
/// cancellation error for functions with O(1) curvature.
pub const STEP: f64 = 1e-5;

/// Relative-error acceptance threshold for a single op.
pub const TOL: f64 = 1e-4;

/// Relative error with a floor that keeps tiny gradients from being compared
/// at full relative precision.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// One element whose analytic and numeric gradients disagree (or are NaN).
#[derive(Debug, Clone)]
pub struct Mismatch {
    pub input: usize,
    pub element: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
    pub worst: Vec<Mismatch>,
}

impl GradCheckReport {
    pub fn pass(&self) -> bool {
        self.worst.is_empty()
    }
}

/// Checks `f`'s gradients with respect to every entry of every input.
///
/// `f` must return a scalar; callers that want to check a tensor-valued op
/// reduce it against a fixed random projection first (see [`OpInstance`]).
pub fn grad_check(
    f: &dyn Fn(&[Var<f64>]) -> Var<f64>,
    inputs: &[Tensor<f64>],
    step: f64,
    tol: f64,
) -> GradCheckReport {
    let leaves: Vec<Var<f64>> = inputs.iter().map(|t| Var::param(t.clone())).collect();
    let out = f(&leaves);
    assert!(out.value().is_scalar(), "grad_check target must be scalar");
    out.backward();
    let analytic: Vec<Option<Tensor<f64>>> = leaves.iter().map(|l| l.grad()).collect();

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        checked: 0,
        worst: Vec::new(),
    };

    for (i, input) in inputs.iter().enumerate() {
        for e in 0..input.numel() {
            let numeric = {
                let eval = |delta: f64| -> f64 {
                    let mut shifted: Vec<Var<f64>> =
                        inputs.iter().map(|t| Var::param(t.clone())).collect();
                    let mut t = input.clone();
                    t.make_mut()[e] += delta;
                    shifted[i] = Var::param(t);
                    f(&shifted).value().item()
                };
                (eval(step) - eval(-step)) / (2.0 * step)
            };
            let a = analytic[i]
                .as_ref()
                .map(|g| g.data()[e])
                .unwrap_or(0.0);
            let rel = rel_err(a, numeric);
            report.checked += 1;
            if !a.is_finite() || !numeric.is_finite() || rel > tol {
                report.worst.push(Mismatch {
                    input: i,
                    element: e,
                    analytic: a,
                    numeric,
                    rel,
                });
            }
            if rel.is_finite() && rel > report.max_rel_err {
                report.max_rel_err = rel;
            }
        }
    }
    // Keep only the most egregious few; full dumps drown the signal.
    report
        .worst
        .sort_by(|a, b| b.rel.partial_cmp(&a.rel).unwrap_or(std::cmp::Ordering::Equal));
    report.worst.truncate(8);
    report
}

/// A concrete grad-check problem: a scalar function of some input tensors.
pub struct OpInstance {
    pub f: Box<dyn Fn(&[Var<f64>]) -> Var<f64>>,
    pub inputs: Vec<Tensor<f64>>,
}

impl OpInstance {
    /// Wraps a tensor-valued op as `sum(op(x) ⊙ R)` with a fixed random
    /// projection `R`, so every output element influences the scalar.
    fn projected(
        seed: u64,
        inputs: Vec<Tensor<f64>>,
        op: impl Fn(&[Var<f64>]) -> Var<f64> + 'static,
    ) -> Self {
        OpInstance {
            inputs,
            f: Box::new(move |vars| {
                let out = op(vars);
                let mut rng = rng_from(derive_seed(seed, 0xBEEF));
                let proj: Tensor<f64> =
                    uniform(out.shape().to_vec(), -1.0, 1.0, &mut rng);
                ops::sum(&ops::mul(&out, &Var::constant(proj)))
            }),
        }
    }
}

/// A differentiable op with a builder for seeded random instances.
pub struct RegisteredOp {
    pub name: &'static str,
    pub build: fn(u64) -> OpInstance,
}

/// Runs `instances` seeded checks of one registered op.
pub fn check_op(op: &RegisteredOp, instances: usize) -> GradCheckReport {
    let mut merged = GradCheckReport {
        max_rel_err: 0.0,
        checked: 0,
        worst: Vec::new(),
    };
    for k in 0..instances {
        let inst = (op.build)(derive_seed(0x5EED, k as u64));
        let r = grad_check(inst.f.as_ref(), &inst.inputs, STEP, TOL);
        merged.max_rel_err = merged.max_rel_err.max(r.max_rel_err);
        merged.checked += r.checked;
        merged.worst.extend(r.worst);
    }
    merged.worst.truncate(8);
    merged
}

// ── Instance builders ────────────────────────────────────────────────────────

/// Uniform in `[0.1, 1.0] ∪ [−1.0, −0.1]`: bounded away from zero so relu and
/// abs fixtures sit clear of their kinks even after the ±step perturbation.
fn away_from_zero(shape: &[usize], rng: &mut rand_chacha::ChaCha8Rng) -> Tensor<f64> {
    use rand::Rng;
    Tensor::from_fn(shape.to_vec(), |_| {
        let mag = rng.random_range(0.1..1.0);
        if rng.random_bool(0.5) {
            mag
        } else {
            -mag
        }
    })
}

fn binary_ew(seed: u64, op: fn(&Var<f64>, &Var<f64>) -> Var<f64>) -> OpInstance {
    let mut rng = rng_from(seed);
    let a = uniform([3, 4], -1.0, 1.0, &mut rng);
    let b = uniform([3, 4], -1.0, 1.0, &mut rng);
    OpInstance::projected(seed, vec![a, b], move |v| op(&v[0], &v[1]))
}

fn unary_ew(seed: u64, op: fn(&Var<f64>) -> Var<f64>) -> OpInstance {
    let mut rng = rng_from(seed);
    let a = away_from_zero(&[3, 5], &mut rng);
    OpInstance::projected(seed, vec![a], move |v| op(&v[0]))
}

fn conv_instance(seed: u64, spec: ops::ConvSpec, kernel: usize) -> OpInstance {
    let mut rng = rng_from(seed);
    let (ci, co) = (2, 3);
    let x = uniform([ci, 7, 6], -1.0, 1.0, &mut rng);
    let w = uniform([co, ci, kernel, kernel], -0.8, 0.8, &mut rng);
    let b = uniform([co], -0.5, 0.5, &mut rng);
    OpInstance::projected(seed, vec![x, w, b], move |v| {
        ops::conv2d(&v[0], &v[1], &v[2], spec)
    })
}

/// The full registry. Order is the order the CLI prints.
pub fn registry() -> Vec<RegisteredOp> {
    vec![
        RegisteredOp {
            name: "add",
            build: |s| binary_ew(s, |a, b| ops::add(a, b)),
        },
        RegisteredOp {
            name: "sub",
            build: |s| binary_ew(s, |a, b| ops::sub(a, b)),
        },
        RegisteredOp {
            name: "mul",
            build: |s| binary_ew(s, |a, b| ops::mul(a, b)),
        },
        RegisteredOp {
            name: "affine",
            build: |s| unary_ew(s, |a| ops::affine(a, -2.5, 0.75)),
        },
        RegisteredOp {
            name: "relu",
            build: |s| unary_ew(s, |a| ops::relu(a)),
        },
        RegisteredOp {
            name: "abs",
            build: |s| unary_ew(s, |a| ops::abs(a)),
        },
        RegisteredOp {
            name: "sigmoid",
            build: |s| unary_ew(s, |a| ops::sigmoid(a)),
        },
        RegisteredOp {
            name: "mu_law",
            build: |s| {
                let mut rng = rng_from(s);
                let a = uniform([4, 4], 0.01, 1.5, &mut rng);
                OpInstance::projected(s, vec![a], |v| ops::mu_law(&v[0], 5000.0))
            },
        },
        RegisteredOp {
            name: "softmax",
            build: |s| {
                let mut rng = rng_from(s);
                let a = uniform([3, 5], -2.0, 2.0, &mut rng);
                OpInstance::projected(s, vec![a], |v| ops::softmax_last(&v[0]))
            },
        },
        RegisteredOp {
            name: "sum",
            build: |s| {
                let mut rng = rng_from(s);
                let a = uniform([2, 3, 3], -1.0, 1.0, &mut rng);
                OpInstance {
                    inputs: vec![a],
                    f: Box::new(|v| ops::sum(&v[0])),
                }
            },
        },
        RegisteredOp {
            name: "mean",
            build: |s| {
                let mut rng = rng_from(s);
                let a = uniform([2, 3, 3], -1.0, 1.0, &mut rng);
                OpInstance {
                    inputs: vec![a],
                    f: Box::new(|v| ops::mean(&v[0])),
                }
            },
        },
        RegisteredOp {
            name: "concat_channels",
            build: |s| {
                let mut rng = rng_from(s);
                let a = uniform([2, 3, 4], -1.0, 1.0, &mut rng);
                let b = uniform([3, 3, 4], -1.0, 1.0, &mut rng);
                OpInstance::projected(s, vec![a, b], |v| {
                    ops::concat_channels(&[v[0].clone(), v[1].clone()])
                })
            },
        },
        RegisteredOp {
            name: "diff_x",
            build: |s| {
                let mut rng = rng_from(s);
                let a = uniform([2, 4, 5], -1.0, 1.0, &mut rng);
                OpInstance::projected(s, vec![a], |v| ops::diff_x(&v[0]))
            },
        },
        RegisteredOp {
            name: "diff_y",
            build: |s| {
                let mut rng = rng_from(s);
                let a = uniform([2, 5, 4], -1.0, 1.0, &mut rng);
                OpInstance::projected(s, vec![a], |v| ops::diff_y(&v[0]))
            },
        },
        RegisteredOp {
            name: "avg_pool",
            build: |s| {
                let mut rng = rng_from(s);
                let a = uniform([2, 4, 6], -1.0, 1.0, &mut rng);
                OpInstance::projected(s, vec![a], |v| ops::avg_pool(&v[0], 2, 2))
            },
        },
        RegisteredOp {
            name: "linear_combination",
            build: |s| {
                use rand::Rng;
                let mut rng = rng_from(s);
                let mut draw = || Tensor::scalar(rng.random_range(-1.0..1.0));
                let (t1, t2, t3) = (draw(), draw(), draw());
                OpInstance {
                    inputs: vec![t1, t2, t3],
                    f: Box::new(|v| {
                        ops::linear_combination(&[
                            (1.0, v[0].clone()),
                            (0.1, v[1].clone()),
                            (0.0, v[2].clone()),
                        ])
                    }),
                }
            },
        },
        RegisteredOp {
            name: "conv2d",
            build: |s| conv_instance(s, ops::ConvSpec::same(3, 1), 3),
        },
        RegisteredOp {
            name: "conv2d_strided",
            build: |s| {
                conv_instance(
                    s,
                    ops::ConvSpec {
                        stride: 2,
                        dilation: 1,
                        padding: 1,
                    },
                    3,
                )
            },
        },
        RegisteredOp {
            name: "conv2d_dilated",
            build: |s| conv_instance(s, ops::ConvSpec::same(3, 2), 3),
        },
        RegisteredOp {
            name: "residual_block",
            build: |s| {
                let mut rng = rng_from(s);
                let c = 2;
                let x = uniform([c, 5, 5], -1.0, 1.0, &mut rng);
                let w1 = uniform([c, c, 3, 3], -0.5, 0.5, &mut rng);
                let b1 = uniform([c], -0.2, 0.2, &mut rng);
                let w2 = uniform([c, c, 3, 3], -0.5, 0.5, &mut rng);
                let b2 = uniform([c], -0.2, 0.2, &mut rng);
                OpInstance::projected(s, vec![x, w1, b1, w2, b2], |v| {
                    ops::residual_block(&v[0], &v[1], &v[2], &v[3], &v[4])
                })
            },
        },
        RegisteredOp {
            name: "bilinear_sample",
            build: |s| {
                let mut rng = rng_from(s);
                let f = uniform([2, 5, 5], -1.0, 1.0, &mut rng);
                // Fractional parts in [0.2, 0.8]: a ±step probe cannot cross
                // an integer grid line, where interpolation kinks.
                let pts = off_lattice_points(12, 5, 5, &mut rng);
                OpInstance::projected(s, vec![f, pts], |v| {
                    ops::bilinear_sample(&v[0], &v[1])
                })
            },
        },
        RegisteredOp {
            name: "deform_conv",
            build: |s| {
                let mut rng = rng_from(s);
                let f = uniform([2, 5, 5], -1.0, 1.0, &mut rng);
                let k = uniform([9, 5, 5], -0.5, 0.5, &mut rng);
                // Offsets with fractional part well inside the cell, same
                // off-lattice reasoning as bilinear_sample.
                let off = Tensor::from_fn([18, 5, 5], |_| {
                    use rand::Rng;
                    let whole = rng.random_range(-2..2) as f64;
                    whole + rng.random_range(0.25..0.75)
                });
                OpInstance::projected(s, vec![f, k, off], |v| {
                    ops::deform_conv(&v[0], &v[1], &v[2])
                })
            },
        },
        RegisteredOp {
            name: "contextual_attention",
            build: |s| {
                let mut rng = rng_from(s);
                let f = uniform([2, 5, 5], -1.0, 1.0, &mut rng);
                let m = uniform([1, 5, 5], 0.05, 0.95, &mut rng);
                OpInstance::projected(s, vec![f, m], |v| {
                    ops::contextual_attention(&v[0], &v[1], 10.0)
                })
            },
        },
        RegisteredOp {
            name: "complete",
            build: |s| {
                let mut rng = rng_from(s);
                let coarse = uniform([3, 4, 4], 0.0, 2.0, &mut rng);
                let fine = uniform([3, 4, 4], 0.0, 2.0, &mut rng);
                let m = uniform([1, 4, 4], 0.05, 0.95, &mut rng);
                OpInstance::projected(s, vec![coarse, fine, m], |v| {
                    ops::complete(&v[0], &v[1], &v[2])
                })
            },
        },
        RegisteredOp {
            name: "loss_reconstruction",
            build: |s| {
                let mut rng = rng_from(s);
                // Strictly positive: reconstruction clamps at zero, and a
                // fixture on the clamp boundary would probe the relu kink.
                let p = uniform([3, 4, 4], 0.05, 2.0, &mut rng);
                let g = uniform([3, 4, 4], 0.05, 2.0, &mut rng);
                OpInstance {
                    inputs: vec![p, g],
                    f: Box::new(|v| crate::losses::reconstruction(&v[0], &v[1])),
                }
            },
        },
        RegisteredOp {
            name: "loss_color",
            build: |s| {
                let mut rng = rng_from(s);
                // Norms bounded away from zero, where the cosine flattens.
                let p = uniform([3, 4, 4], 0.2, 2.0, &mut rng);
                let g = uniform([3, 4, 4], 0.2, 2.0, &mut rng);
                OpInstance {
                    inputs: vec![p, g],
                    f: Box::new(|v| crate::losses::color_similarity(&v[0], &v[1])),
                }
            },
        },
        RegisteredOp {
            name: "loss_total_variation",
            build: |s| {
                let mut rng = rng_from(s);
                let x = uniform([2, 5, 4], -1.0, 1.0, &mut rng);
                OpInstance {
                    inputs: vec![x],
                    f: Box::new(|v| crate::losses::total_variation(&v[0])),
                }
            },
        },
        RegisteredOp {
            name: "loss_perceptual",
            build: |s| {
                let mut rng = rng_from(s);
                let p = uniform([3, 8, 8], 0.05, 1.5, &mut rng);
                let g = uniform([3, 8, 8], 0.05, 1.5, &mut rng);
                OpInstance {
                    inputs: vec![p, g],
                    f: Box::new(move |v| {
                        let e = crate::losses::PerceptualExtractor::from_seed(s);
                        crate::losses::perceptual(&e, &v[0], &v[1])
                    }),
                }
            },
        },
    ]
}

/// Sample points with fractional parts in `[0.2, 0.8]`, some deliberately
/// outside the image to exercise the zero exterior.
fn off_lattice_points(
    n: usize,
    h: usize,
    w: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Tensor<f64> {
    use rand::Rng;
    Tensor::from_fn([n, 2], |i| {
        let limit = if i % 2 == 0 { h } else { w } as i64;
        let whole = rng.random_range(-2..limit + 1) as f64;
        whole + rng.random_range(0.2..0.8)
    })
}
