//! Deterministic end-to-end training.
//!
//! One optimizer step works through a seeded batch: sample patches, run
//! the pipeline forward, score all three outputs (the blended result with
//! the final-output weights, the coarse and hallucinated intermediates
//! with the intermediate weights), backpropagate the batch-mean total and
//! apply a bias-corrected Adam update. Everything downstream of the seed —
//! batches, initialization, the feature extractor — is derived from it,
//! so a run in double precision reproduces bit for bit.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::checkpoint::save_model;
use crate::dataset::{make_batch, make_static_scene, Scene, TrainExample};
use crate::error::{Error, Result};
use crate::graph::Var;
use crate::init::{derive_seed, rng_from};
use crate::losses::{hybrid, LossWeights, PerceptualExtractor};
use crate::metrics::{evaluate, EvalScores};
use crate::networks::{HdrPipeline, MaskMode, ModelConfig, ParamId, ParamSet};
use crate::ops;
use crate::tensor::{Scalar, Tensor};

/// Seed-stream tags: model init, batch sampling, feature extractor.
const SEED_MODEL: u64 = 1;
const SEED_BATCH: u64 = 2;
const SEED_PERCEPTUAL: u64 = 3;

/// Numeric type a run computes in. Double precision is the reproducibility
/// contract; single precision roughly halves time and memory when bitwise
/// replay does not matter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn name(self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }
}

/// Full description of a training run. Parsed from line-oriented
/// `key = value` text (`#` starts a comment); unknown keys are errors, so
/// typos fail loudly instead of training with a silently ignored setting.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub iterations: usize,
    pub checkpoint_every: usize,
    pub seed: u64,
    pub precision: Precision,
    pub width: usize,
    pub patch: usize,
    /// Optional global gradient-norm ceiling; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub motion_compensation: bool,
    pub mask_hard: bool,
    pub mask_tau: f64,
    pub mask_sharpness: f64,
    pub attention_temperature: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            batch: 16,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            iterations: 2000,
            checkpoint_every: 500,
            seed: 0,
            precision: Precision::F64,
            width: 16,
            patch: 32,
            clip_norm: None,
            motion_compensation: true,
            mask_hard: false,
            mask_tau: 0.9,
            mask_sharpness: 3.0,
            attention_temperature: 10.0,
        }
    }
}

impl TrainConfig {
    /// Desk-scale preset that memorizes a handful of small scenes in
    /// minutes on one CPU core. The learning rate is raised from the
    /// full-scale default because tiny data converges far below 2000
    /// iterations at 10⁻⁴, and the patch is shrunk to keep a 2000-
    /// iteration run well under half an hour.
    pub fn overfit() -> Self {
        TrainConfig {
            lr: 1e-3,
            batch: 4,
            patch: 24,
            ..TrainConfig::default()
        }
    }

    pub fn parse(text: &str) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let n = idx + 1;
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Validation(format!("config line {n}: expected `key = value`, got `{raw}`"))
            })?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "lr" => cfg.lr = num(key, value, n)?,
                "batch" => cfg.batch = num(key, value, n)?,
                "beta1" => cfg.beta1 = num(key, value, n)?,
                "beta2" => cfg.beta2 = num(key, value, n)?,
                "eps" => cfg.eps = num(key, value, n)?,
                "iterations" => cfg.iterations = num(key, value, n)?,
                "checkpoint_every" => cfg.checkpoint_every = num(key, value, n)?,
                "seed" => cfg.seed = num(key, value, n)?,
                "precision" => {
                    cfg.precision = match value {
                        "f32" => Precision::F32,
                        "f64" => Precision::F64,
                        _ => {
                            return Err(Error::Validation(format!(
                                "config line {n}: `precision` must be f32 or f64, got `{value}`"
                            )))
                        }
                    }
                }
                "width" => cfg.width = num(key, value, n)?,
                "patch" => cfg.patch = num(key, value, n)?,
                "clip_norm" => {
                    cfg.clip_norm = match value {
                        "none" => None,
                        _ => Some(num(key, value, n)?),
                    }
                }
                "motion_compensation" => cfg.motion_compensation = flag(key, value, n)?,
                "mask_mode" => {
                    cfg.mask_hard = match value {
                        "soft" => false,
                        "hard" => true,
                        _ => {
                            return Err(Error::Validation(format!(
                                "config line {n}: `mask_mode` must be soft or hard, got `{value}`"
                            )))
                        }
                    }
                }
                "mask_tau" => cfg.mask_tau = num(key, value, n)?,
                "mask_sharpness" => cfg.mask_sharpness = num(key, value, n)?,
                "attention_temperature" => cfg.attention_temperature = num(key, value, n)?,
                // The tonemap normalizes by log(1+μ). The key exists so a
                // config stating a different convention fails loudly
                // instead of being reinterpreted.
                "tonemap_denominator" => {
                    if value != "mu" {
                        return Err(Error::Validation(format!(
                            "config line {n}: only `tonemap_denominator = mu` is supported, \
                             got `{value}`"
                        )));
                    }
                }
                _ => {
                    return Err(Error::Validation(format!(
                        "config line {n}: unknown key `{key}`"
                    )))
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<TrainConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        TrainConfig::parse(&text)
    }

    /// The config in the exact grammar [`TrainConfig::parse`] accepts.
    pub fn to_text(&self) -> String {
        let clip = match self.clip_norm {
            None => "none".to_string(),
            Some(c) => c.to_string(),
        };
        format!(
            "lr = {}\nbatch = {}\nbeta1 = {}\nbeta2 = {}\neps = {}\niterations = {}\n\
             checkpoint_every = {}\nseed = {}\nprecision = {}\nwidth = {}\npatch = {}\n\
             clip_norm = {}\nmotion_compensation = {}\nmask_mode = {}\nmask_tau = {}\n\
             mask_sharpness = {}\nattention_temperature = {}\ntonemap_denominator = mu\n",
            self.lr,
            self.batch,
            self.beta1,
            self.beta2,
            self.eps,
            self.iterations,
            self.checkpoint_every,
            self.seed,
            self.precision.name(),
            self.width,
            self.patch,
            clip,
            self.motion_compensation,
            if self.mask_hard { "hard" } else { "soft" },
            self.mask_tau,
            self.mask_sharpness,
            self.attention_temperature,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Validation(msg));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive and finite, got {}", self.lr));
        }
        if self.batch == 0 || self.batch % 4 != 0 {
            return bad(format!(
                "batch must be a positive multiple of 4 (3:1 dynamic/static mix), got {}",
                self.batch
            ));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if !(self.eps > 0.0) {
            return bad(format!("eps must be positive, got {}", self.eps));
        }
        if self.checkpoint_every == 0 {
            return bad("checkpoint_every must be positive".to_string());
        }
        if self.width == 0 {
            return bad("width must be positive".to_string());
        }
        if self.patch < 8 {
            return bad(format!(
                "patch must be at least 8 (the feature pyramid halves it twice), got {}",
                self.patch
            ));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return bad(format!("clip_norm must be positive or `none`, got {c}"));
            }
        }
        if !(self.mask_tau > 0.0 && self.mask_tau < 1.0) {
            return bad(format!("mask_tau must lie in (0, 1), got {}", self.mask_tau));
        }
        if !(self.mask_sharpness > 0.0) {
            return bad(format!(
                "mask_sharpness must be positive, got {}",
                self.mask_sharpness
            ));
        }
        if !(self.attention_temperature > 0.0) {
            return bad(format!(
                "attention_temperature must be positive, got {}",
                self.attention_temperature
            ));
        }
        Ok(())
    }

    /// The architecture settings this run trains.
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            width: self.width,
            motion_compensation: self.motion_compensation,
            mask_mode: if self.mask_hard {
                MaskMode::Hard {
                    tau: self.mask_tau,
                }
            } else {
                MaskMode::Soft
            },
            mask_sharpness: self.mask_sharpness,
            attention_temperature: self.attention_temperature,
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, value: &str, line: usize) -> Result<T> {
    value.parse().map_err(|_| {
        Error::Validation(format!(
            "config line {line}: `{key}` expects a number, got `{value}`"
        ))
    })
}

fn flag(key: &str, value: &str, line: usize) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Validation(format!(
            "config line {line}: `{key}` expects true or false, got `{value}`"
        ))),
    }
}

/// Bias-corrected Adam over one parameter set. Moments are stored in the
/// run's precision; the per-element update is computed in double.
pub struct Adam<E: Scalar> {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    clip_norm: Option<f64>,
    step: u64,
    m: Vec<Tensor<E>>,
    v: Vec<Tensor<E>>,
}

impl<E: Scalar> Adam<E> {
    pub fn new(cfg: &TrainConfig, params: &ParamSet<E>) -> Self {
        let zeros: Vec<Tensor<E>> = params
            .ids()
            .map(|id| Tensor::zeros(params.tensor(id).shape().to_vec()))
            .collect();
        Adam {
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            clip_norm: cfg.clip_norm,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update. `grads` pairs positionally with the parameter
    /// set's id order; `None` means the parameter never entered the graph
    /// this iteration and is treated as a zero gradient.
    pub fn step(&mut self, params: &mut ParamSet<E>, grads: &[Option<Tensor<E>>]) -> Result<()> {
        let ids: Vec<ParamId> = params.ids().collect();
        assert_eq!(ids.len(), grads.len(), "one gradient slot per parameter");
        assert_eq!(
            ids.len(),
            self.m.len(),
            "optimizer was built for a different parameter set"
        );
        for (i, id) in ids.iter().enumerate() {
            if let Some(g) = &grads[i] {
                assert_eq!(
                    g.shape(),
                    params.tensor(*id).shape(),
                    "gradient shape mismatch for `{}`",
                    params.name(*id)
                );
                if g.iter().any(|v| !v.as_f64().is_finite()) {
                    return Err(Error::Numerical(format!(
                        "non-finite gradient for parameter `{}`",
                        params.name(*id)
                    )));
                }
            }
        }
        let scale = match self.clip_norm {
            None => 1.0,
            Some(ceiling) => {
                let sq: f64 = grads
                    .iter()
                    .flatten()
                    .flat_map(|g| g.iter())
                    .map(|v| {
                        let x = v.as_f64();
                        x * x
                    })
                    .sum();
                let norm = sq.sqrt();
                if norm > ceiling {
                    ceiling / norm
                } else {
                    1.0
                }
            }
        };
        self.step += 1;
        let bias1 = 1.0 - self.beta1.powi(self.step as i32);
        let bias2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, id) in ids.iter().enumerate() {
            let mut p = params.tensor(*id).clone();
            let pd = p.make_mut();
            let md = self.m[i].make_mut();
            let vd = self.v[i].make_mut();
            let gd = grads[i].as_ref().map(|g| g.data());
            for k in 0..pd.len() {
                let g = scale * gd.map_or(0.0, |d| d[k].as_f64());
                let m = self.beta1 * md[k].as_f64() + (1.0 - self.beta1) * g;
                let v = self.beta2 * vd[k].as_f64() + (1.0 - self.beta2) * g * g;
                md[k] = E::from_f64(m);
                vd[k] = E::from_f64(v);
                let update = self.lr * (m / bias1) / ((v / bias2).sqrt() + self.eps);
                pd[k] = E::from_f64(pd[k].as_f64() - update);
            }
            params.update(*id, p);
        }
        Ok(())
    }
}

/// One row of the loss curve: batch-mean weighted losses of the three
/// scored outputs and their sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRow {
    pub iter: usize,
    pub total: f64,
    pub coarse: f64,
    pub fine: f64,
    pub completed: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub curve: Vec<LossRow>,
    pub checkpoint: PathBuf,
    pub curve_path: PathBuf,
    pub iterations_run: usize,
}

/// Means of consecutive disjoint `window`-row chunks of the total loss;
/// a trailing partial chunk is dropped. A healthy run's means do not
/// increase from one window to the next.
pub fn windowed_means(curve: &[LossRow], window: usize) -> Vec<f64> {
    assert!(window > 0);
    curve
        .chunks(window)
        .filter(|c| c.len() == window)
        .map(|c| c.iter().map(|r| r.total).sum::<f64>() / window as f64)
        .collect()
}

/// Trains on `scenes` and writes `checkpoint.bin` plus `curve.csv` under
/// `out`. The motion-free quarter of every batch is synthesized from the
/// scenes' own ground truths, so callers supply dynamic scenes only.
///
/// The checkpoint is written before the first iteration (a zero-iteration
/// run checkpoints the initialization), refreshed every
/// `checkpoint_every` iterations and at the end. A non-finite loss or
/// gradient aborts with the iteration index; the file on disk then still
/// holds the last completed checkpoint.
pub fn train<E: Scalar>(cfg: &TrainConfig, scenes: &[Scene<E>], out: &Path) -> Result<TrainOutcome> {
    cfg.validate()?;
    if scenes.is_empty() {
        return Err(Error::Validation("no training scenes supplied".to_string()));
    }
    for (i, s) in scenes.iter().enumerate() {
        if s.height() < cfg.patch || s.width() < cfg.patch {
            return Err(Error::Validation(format!(
                "scene {i} is {}x{}, smaller than the {} patch",
                s.height(),
                s.width(),
                cfg.patch
            )));
        }
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let checkpoint = out.join("checkpoint.bin");
    let curve_path = out.join("curve.csv");

    let model_cfg = cfg.model_config();
    let (pipeline, mut params) =
        HdrPipeline::init::<E>(model_cfg, derive_seed(cfg.seed, SEED_MODEL));
    let extractor = PerceptualExtractor::<E>::from_seed(derive_seed(cfg.seed, SEED_PERCEPTUAL));
    let mut batch_rng = rng_from(derive_seed(cfg.seed, SEED_BATCH));
    let mut adam = Adam::new(cfg, &params);
    let still: Vec<Scene<E>> = scenes
        .iter()
        .map(|s| make_static_scene(&s.gt, s.times))
        .collect();

    let mut csv = fs::File::create(&curve_path)
        .map(std::io::BufWriter::new)
        .map_err(|e| Error::io(&curve_path, e))?;
    let csv_err = |e: std::io::Error| Error::io(&curve_path, e);
    writeln!(csv, "iter,loss_total,loss_coarse,loss_fine,loss_final").map_err(csv_err)?;
    save_model(&checkpoint, &model_cfg, &params)?;

    let ids: Vec<ParamId> = params.ids().collect();
    let mut curve = Vec::with_capacity(cfg.iterations);
    for iter in 1..=cfg.iterations {
        let batch = make_batch(scenes, &still, cfg.batch, cfg.patch, &mut batch_rng);
        let mut grads: Vec<Option<Tensor<E>>> = vec![None; ids.len()];
        let mut row = LossRow {
            iter,
            total: 0.0,
            coarse: 0.0,
            fine: 0.0,
            completed: 0.0,
        };
        for ex in &batch {
            let (lc, lf, lz) = example_pass(&pipeline, &params, &extractor, ex, &mut grads, cfg.batch);
            row.coarse += lc / cfg.batch as f64;
            row.fine += lf / cfg.batch as f64;
            row.completed += lz / cfg.batch as f64;
        }
        row.total = row.coarse + row.fine + row.completed;
        if !row.total.is_finite() {
            csv.flush().map_err(csv_err)?;
            return Err(Error::Numerical(format!(
                "non-finite loss at iteration {iter}; last checkpoint retained at {}",
                checkpoint.display()
            )));
        }
        adam.step(&mut params, &grads).map_err(|e| match e {
            Error::Numerical(msg) => Error::Numerical(format!("iteration {iter}: {msg}")),
            other => other,
        })?;
        writeln!(
            csv,
            "{},{},{},{},{}",
            row.iter, row.total, row.coarse, row.fine, row.completed
        )
        .map_err(csv_err)?;
        curve.push(row);
        if iter % cfg.checkpoint_every == 0 {
            csv.flush().map_err(csv_err)?;
            save_model(&checkpoint, &model_cfg, &params)?;
        }
    }
    csv.flush().map_err(csv_err)?;
    save_model(&checkpoint, &model_cfg, &params)?;
    Ok(TrainOutcome {
        curve,
        checkpoint,
        curve_path,
        iterations_run: cfg.iterations,
    })
}

/// Forward/backward for one example; returns the three weighted losses
/// and accumulates parameter gradients of `total/batch` into `grads`.
fn example_pass<E: Scalar>(
    pipeline: &HdrPipeline,
    params: &ParamSet<E>,
    extractor: &PerceptualExtractor<E>,
    ex: &TrainExample<E>,
    grads: &mut [Option<Tensor<E>>],
    batch: usize,
) -> (f64, f64, f64) {
    let bind = params.bind();
    let inputs: [Var<E>; 3] = std::array::from_fn(|i| Var::constant(ex.inputs[i].clone()));
    let out = pipeline.forward(&bind, &inputs);
    let gt = Var::constant(ex.gt.clone());
    let intermediate = LossWeights::intermediate();
    let (lc, bc) = hybrid(&out.coarse, &gt, &intermediate, Some(extractor));
    let (lf, bf) = hybrid(&out.fine, &gt, &intermediate, Some(extractor));
    let (lz, bz) = hybrid(&out.completed, &gt, &LossWeights::final_output(), None);
    let sum = ops::add(&ops::add(&lc, &lf), &lz);
    let mean_share = ops::affine(&sum, 1.0 / batch as f64, 0.0);
    mean_share.backward();
    for (slot, id) in grads.iter_mut().zip(params.ids()) {
        if let Some(g) = bind.grad(id) {
            match slot {
                Some(acc) => {
                    let a = acc.make_mut();
                    for (x, y) in a.iter_mut().zip(g.iter()) {
                        *x = *x + *y;
                    }
                }
                None => *slot = Some(g),
            }
        }
    }
    (
        bc.weighted_total,
        bf.weighted_total,
        bz.weighted_total,
    )
}

/// Inference products for one scene, as plain tensors.
#[derive(Debug, Clone)]
pub struct InferenceOut<E: Scalar> {
    /// Final blended radiance, `[3, H, W]`.
    pub hdr: Tensor<E>,
    /// Merge-stage radiance before hallucinated content is blended in.
    pub coarse: Tensor<E>,
    /// Saturation mask, `[1, H, W]`.
    pub mask: Tensor<E>,
}

/// Runs the pipeline on a full scene without building a gradient graph.
pub fn infer<E: Scalar>(
    pipeline: &HdrPipeline,
    params: &ParamSet<E>,
    scene: &Scene<E>,
) -> InferenceOut<E> {
    let bind = params.bind_frozen();
    let stacks = scene.inputs();
    let inputs: [Var<E>; 3] = std::array::from_fn(|i| Var::constant(stacks[i].clone()));
    let out = pipeline.forward(&bind, &inputs);
    InferenceOut {
        hdr: out.completed.value().clone(),
        coarse: out.coarse.value().clone(),
        mask: out.mask.value().clone(),
    }
}

/// Full-image quality of a model over a scene list, averaged per metric.
pub fn evaluate_scenes<E: Scalar>(
    pipeline: &HdrPipeline,
    params: &ParamSet<E>,
    scenes: &[Scene<E>],
) -> Result<EvalScores> {
    assert!(!scenes.is_empty(), "no scenes to evaluate");
    let mut sums = EvalScores {
        psnr_t: 0.0,
        ssim_t: 0.0,
        psnr_l: 0.0,
        ssim_l: 0.0,
    };
    for scene in scenes {
        let out = infer(pipeline, params, scene);
        let s = evaluate(&out.hdr.cast::<f64>(), &scene.gt.cast::<f64>())?;
        sums.psnr_t += s.psnr_t / scenes.len() as f64;
        sums.ssim_t += s.ssim_t / scenes.len() as f64;
        sums.psnr_l += s.psnr_l / scenes.len() as f64;
        sums.ssim_l += s.ssim_l / scenes.len() as f64;
    }
    Ok(sums)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checkpoint::load_model;
    use crate::dataset::{synth_dynamic_scene, SynthConfig};
    use crate::tensor::Tensor;
    use rand::Rng;
    use tempfile::TempDir;

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            batch: 4,
            iterations: 2,
            checkpoint_every: 100,
            width: 4,
            patch: 12,
            ..TrainConfig::default()
        }
    }

    fn tiny_scenes(n: usize, seed: u64) -> Vec<Scene<f64>> {
        let cfg = SynthConfig {
            size: 24,
            motion_px: 2,
            ..SynthConfig::default()
        };
        let mut rng = rng_from(seed);
        (0..n).map(|_| synth_dynamic_scene(&cfg, &mut rng)).collect()
    }

    #[test]
    fn config_text_round_trips() {
        let cfg = TrainConfig::default();
        assert_eq!(TrainConfig::parse(&cfg.to_text()).unwrap(), cfg);
        let custom = TrainConfig {
            lr: 0.003,
            batch: 8,
            precision: Precision::F32,
            clip_norm: Some(5.0),
            mask_hard: true,
            mask_tau: 0.8,
            ..TrainConfig::default()
        };
        assert_eq!(TrainConfig::parse(&custom.to_text()).unwrap(), custom);
    }

    #[test]
    fn config_accepts_comments_and_blank_lines() {
        let text = "# a run\n\nlr = 0.01   # raised\nbatch = 8\n";
        let cfg = TrainConfig::parse(text).unwrap();
        assert_eq!(cfg.lr, 0.01);
        assert_eq!(cfg.batch, 8);
        assert_eq!(cfg.width, TrainConfig::default().width);
    }

    #[test]
    fn config_rejects_unknown_keys_and_bad_values() {
        let reject = |text: &str, needle: &str| {
            let err = TrainConfig::parse(text).unwrap_err().to_string();
            assert!(err.contains(needle), "`{err}` missing `{needle}`");
        };
        reject("bogus = 1\n", "bogus");
        reject("lr\n", "key = value");
        reject("lr = fast\n", "expects a number");
        reject("precision = f16\n", "f32 or f64");
        reject("batch = 6\n", "multiple of 4");
        reject("lr = -0.1\n", "positive");
        reject("mask_tau = 1.5\n", "(0, 1)");
        reject("tonemap_denominator = h\n", "mu");
        reject("clip_norm = -2\n", "positive");
    }

    #[test]
    fn adam_first_step_moves_by_the_learning_rate() {
        let mut ps: ParamSet<f64> = ParamSet::new();
        let id = ps.register("p", Tensor::from_vec([3], vec![1.0, -2.0, 0.5]));
        let cfg = TrainConfig::default();
        let mut adam = Adam::new(&cfg, &ps);
        let g = Tensor::from_vec([3], vec![1.0, 1.0, 1.0]);
        adam.step(&mut ps, &[Some(g)]).unwrap();
        // First step with unit gradient: both corrected moments are 1, so
        // the update is lr/(1+eps) regardless of the gradient's scale.
        let expect = 1.0 - cfg.lr / (1.0 + cfg.eps);
        assert!((ps.tensor(id).data()[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn adam_zero_gradient_changes_nothing() {
        let mut ps: ParamSet<f64> = ParamSet::new();
        let id = ps.register("p", Tensor::from_vec([2], vec![0.3, -0.7]));
        let before = ps.tensor(id).clone();
        let mut adam = Adam::new(&TrainConfig::default(), &ps);
        adam.step(&mut ps, &[Some(Tensor::zeros([2]))]).unwrap();
        adam.step(&mut ps, &[None]).unwrap();
        assert_eq!(ps.tensor(id).data(), before.data());
        assert_eq!(adam.step_count(), 2);
    }

    #[test]
    fn adam_matches_a_scalar_oracle_over_ten_steps() {
        let n = 5;
        let mut rng = rng_from(77);
        let start: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut ps: ParamSet<f64> = ParamSet::new();
        let id = ps.register("p", Tensor::from_vec([n], start.clone()));
        let cfg = TrainConfig {
            lr: 0.01,
            ..TrainConfig::default()
        };
        let mut adam = Adam::new(&cfg, &ps);

        // Independent per-element reference maintained with plain floats.
        let (mut p, mut m, mut v) = (start, vec![0.0; n], vec![0.0; n]);
        for t in 1..=10 {
            let g: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            adam.step(&mut ps, &[Some(Tensor::from_vec([n], g.clone()))])
                .unwrap();
            for k in 0..n {
                m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
                v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
                let mh = m[k] / (1.0 - cfg.beta1.powi(t));
                let vh = v[k] / (1.0 - cfg.beta2.powi(t));
                p[k] -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
            }
            for k in 0..n {
                assert!(
                    (ps.tensor(id).data()[k] - p[k]).abs() < 1e-10,
                    "step {t} element {k}: {} vs {}",
                    ps.tensor(id).data()[k],
                    p[k]
                );
            }
        }
    }

    #[test]
    fn adam_clips_the_global_gradient_norm() {
        // Adam normalizes per element, so a single uniformly scaled step
        // is nearly invisible; clipping shows up once a clipped and an
        // unclipped step mix in the moment averages. Run two steps whose
        // norms straddle the ceiling and compare against an uncapped run.
        let run = |clip: Option<f64>| {
            let mut ps: ParamSet<f64> = ParamSet::new();
            let id = ps.register("p", Tensor::zeros([2]));
            let cfg = TrainConfig {
                lr: 0.1,
                clip_norm: clip,
                ..TrainConfig::default()
            };
            let mut adam = Adam::new(&cfg, &ps);
            // Norm 5 (clipped to 1 when capped), then norm 0.14 (never).
            adam.step(&mut ps, &[Some(Tensor::from_vec([2], vec![3.0, 4.0]))])
                .unwrap();
            adam.step(&mut ps, &[Some(Tensor::from_vec([2], vec![0.1, 0.1]))])
                .unwrap();
            ps.tensor(id).data().to_vec()
        };
        let capped = run(Some(1.0));
        let free = run(None);
        let gap = (capped[0] - free[0]).abs();
        assert!(gap > 1e-4, "clipping never engaged: {capped:?} vs {free:?}");
        // A ceiling above every norm is a no-op.
        assert_eq!(run(Some(100.0)), free);
    }

    #[test]
    fn adam_rejects_non_finite_gradients_by_name() {
        let mut ps: ParamSet<f64> = ParamSet::new();
        ps.register("encoder.w", Tensor::zeros([2]));
        let mut adam = Adam::new(&TrainConfig::default(), &ps);
        let g = Tensor::from_vec([2], vec![1.0, f64::NAN]);
        let err = adam.step(&mut ps, &[Some(g)]).unwrap_err().to_string();
        assert!(err.contains("encoder.w"), "{err}");
    }

    #[test]
    fn zero_iterations_checkpoints_the_initialization() {
        let dir = TempDir::new().unwrap();
        let cfg = TrainConfig {
            iterations: 0,
            ..tiny_cfg()
        };
        let scenes = tiny_scenes(1, 5);
        let outcome = train(&cfg, &scenes, dir.path()).unwrap();
        assert_eq!(outcome.iterations_run, 0);
        assert!(outcome.curve.is_empty());

        let (_, loaded) = load_model::<f64>(&outcome.checkpoint).unwrap();
        let (_, fresh) = HdrPipeline::init::<f64>(
            cfg.model_config(),
            derive_seed(cfg.seed, SEED_MODEL),
        );
        for (id_l, id_f) in loaded.ids().zip(fresh.ids()) {
            assert_eq!(loaded.tensor(id_l).data(), fresh.tensor(id_f).data());
        }
        let csv = fs::read_to_string(&outcome.curve_path).unwrap();
        assert_eq!(csv, "iter,loss_total,loss_coarse,loss_fine,loss_final\n");
    }

    #[test]
    fn training_runs_deterministically_and_logs_every_iteration() {
        let cfg = tiny_cfg();
        let scenes = tiny_scenes(2, 6);
        let (d1, d2) = (TempDir::new().unwrap(), TempDir::new().unwrap());
        let a = train(&cfg, &scenes, d1.path()).unwrap();
        let b = train(&cfg, &scenes, d2.path()).unwrap();
        assert_eq!(
            fs::read(&a.checkpoint).unwrap(),
            fs::read(&b.checkpoint).unwrap(),
            "same seed must reproduce the checkpoint bit for bit"
        );
        assert_eq!(
            fs::read_to_string(&a.curve_path).unwrap(),
            fs::read_to_string(&b.curve_path).unwrap()
        );
        assert_eq!(a.curve.len(), 2);
        assert_eq!(a.curve[0].iter, 1);
        assert_eq!(a.curve[1].iter, 2);
        for row in &a.curve {
            assert!(row.total.is_finite() && row.total > 0.0);
            let sum = row.coarse + row.fine + row.completed;
            assert!((row.total - sum).abs() < 1e-12);
        }
        // The parameters actually moved.
        let (_, trained) = load_model::<f64>(&a.checkpoint).unwrap();
        let (_, fresh) = HdrPipeline::init::<f64>(
            cfg.model_config(),
            derive_seed(cfg.seed, SEED_MODEL),
        );
        let moved = trained
            .ids()
            .zip(fresh.ids())
            .any(|(t, f)| trained.tensor(t).data() != fresh.tensor(f).data());
        assert!(moved, "two iterations left every parameter untouched");
    }

    #[test]
    fn different_seeds_produce_different_checkpoints() {
        let scenes = tiny_scenes(1, 7);
        let (d1, d2) = (TempDir::new().unwrap(), TempDir::new().unwrap());
        let a = train(&tiny_cfg(), &scenes, d1.path()).unwrap();
        let b = train(
            &TrainConfig {
                seed: 9,
                ..tiny_cfg()
            },
            &scenes,
            d2.path(),
        )
        .unwrap();
        assert_ne!(fs::read(&a.checkpoint).unwrap(), fs::read(&b.checkpoint).unwrap());
    }

    #[test]
    fn corrupt_input_aborts_with_the_iteration_and_keeps_the_checkpoint() {
        let dir = TempDir::new().unwrap();
        let cfg = TrainConfig {
            iterations: 5,
            ..tiny_cfg()
        };
        let mut scenes = tiny_scenes(1, 8);
        // An infinite target defeats every loss term's clamping (the
        // rectifier would silently zero a NaN), so the very first batch
        // must produce a non-finite total and abort.
        for v in scenes[0].gt.make_mut() {
            *v = f64::INFINITY;
        }
        let err = train(&cfg, &scenes, dir.path()).unwrap_err().to_string();
        assert!(err.contains("iteration 1"), "{err}");
        // The pre-loop checkpoint survived and still loads.
        let (_, loaded) = load_model::<f64>(&dir.path().join("checkpoint.bin")).unwrap();
        assert!(loaded.total_scalars() > 0);
    }

    #[test]
    fn curve_windows_average_correctly() {
        let rows: Vec<LossRow> = (0..7)
            .map(|i| LossRow {
                iter: i + 1,
                total: (7 - i) as f64,
                coarse: 0.0,
                fine: 0.0,
                completed: 0.0,
            })
            .collect();
        // Totals 7..1; windows of 3: (7+6+5)/3 = 6 and (4+3+2)/3 = 3; the
        // final row is a partial window and is dropped.
        assert_eq!(windowed_means(&rows, 3), vec![6.0, 3.0]);
    }

    #[test]
    fn inference_matches_a_gradient_forward_pass() {
        let cfg = tiny_cfg();
        let scenes = tiny_scenes(1, 10);
        let (pipeline, params) = HdrPipeline::init::<f64>(
            cfg.model_config(),
            derive_seed(cfg.seed, SEED_MODEL),
        );
        let out = infer(&pipeline, &params, &scenes[0]);

        let bind = params.bind();
        let stacks = scenes[0].inputs();
        let inputs: [Var<f64>; 3] =
            std::array::from_fn(|i| Var::constant(stacks[i].clone()));
        let graph_out = pipeline.forward(&bind, &inputs);
        assert_eq!(out.hdr.data(), graph_out.completed.value().data());
        assert_eq!(out.mask.data(), graph_out.mask.value().data());
        assert!(out.mask.iter().all(|&m| m > 0.0 && m < 1.0));
    }

    #[test]
    #[ignore]
    fn overfit_probe() {
        let cfg = TrainConfig::overfit();
        let mut rng = rng_from(5);
        let scenes: Vec<Scene<f64>> = (0..4)
            .map(|_| synth_dynamic_scene(&SynthConfig::default(), &mut rng))
            .collect();
        let dir = TempDir::new().unwrap();
        let t0 = std::time::Instant::now();
        let outcome = train(&cfg, &scenes, dir.path()).unwrap();
        let mins = t0.elapsed().as_secs_f64() / 60.0;
        let (pipeline, params) = load_model::<f64>(&outcome.checkpoint).unwrap();
        let scores = evaluate_scenes(&pipeline, &params, &scenes).unwrap();
        eprintln!("wall clock {mins:.1} min");
        eprintln!("windowed means {:?}", windowed_means(&outcome.curve, 500));
        eprintln!("train-set scores {scores:?}");
    }

    #[test]
    #[ignore]
    fn timing_probe() {
        for (patch, width, iters) in [(32usize, 16usize, 3usize), (24, 16, 3), (16, 16, 5)] {
            let cfg = TrainConfig {
                batch: 4,
                iterations: iters,
                checkpoint_every: 10_000,
                width,
                patch,
                ..TrainConfig::overfit()
            };
            let mut rng = rng_from(5);
            let scenes: Vec<Scene<f64>> = (0..4)
                .map(|_| synth_dynamic_scene(&SynthConfig::default(), &mut rng))
                .collect();
            let dir = TempDir::new().unwrap();
            let t0 = std::time::Instant::now();
            train(&cfg, &scenes, dir.path()).unwrap();
            let dt = t0.elapsed().as_secs_f64() / iters as f64;
            eprintln!("patch {patch} width {width}: {dt:.3} s/iter -> 2000 iters = {:.1} min", dt * 2000.0 / 60.0);
        }
    }

    #[test]
    fn evaluation_scores_are_finite_on_fresh_models() {
        let cfg = tiny_cfg();
        let scenes = tiny_scenes(2, 11);
        let (pipeline, params) = HdrPipeline::init::<f64>(
            cfg.model_config(),
            derive_seed(cfg.seed, SEED_MODEL),
        );
        let scores = evaluate_scenes(&pipeline, &params, &scenes).unwrap();
        assert!(scores.psnr_t.is_finite());
        assert!(scores.ssim_t > -1.0 && scores.ssim_t <= 1.0);
    }
}
