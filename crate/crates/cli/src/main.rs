//! Batch command surface for the fusion pipeline.
//!
//! Every command reads and writes plain files — PPM/PFM images, a
//! line-oriented config, CSV curves — and exits with a code that states
//! what kind of thing went wrong: `0` success, `1` command-line misuse,
//! `2` unreadable or invalid inputs, `3` numerical failure. Commands that
//! produce files also drop a `manifest.txt` beside them recording the
//! invocation, so any output directory explains how to reproduce itself.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};

use hdrfuse_core::checkpoint::{load_model, read_entries, CONFIG_PREFIX};
use hdrfuse_core::dataset::{load_scene, save_scene, synth_dynamic_scene, Scene, SynthConfig};
use hdrfuse_core::error::Error;
use hdrfuse_core::gradcheck::{check_op, registry};
use hdrfuse_core::imageio::{gray_to_rgb, read_pfm, tonemap_preview, write_pfm, write_ppm};
use hdrfuse_core::init::rng_from;
use hdrfuse_core::metrics::evaluate;
use hdrfuse_core::tensor::{Dtype, Scalar};
use hdrfuse_core::trainer::{self, infer, Precision, TrainConfig};

#[derive(Parser)]
#[command(
    name = "hdrfuse",
    version,
    about = "Ghost-free fusion of bracketed exposures into HDR radiance"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic bracketed scenes with aligned ground truth
    Synth {
        /// Directory that receives one subdirectory per scene
        #[arg(long)]
        out: PathBuf,
        /// Number of scenes
        #[arg(long, default_value_t = 4)]
        scenes: usize,
        /// Square image side in pixels
        #[arg(long, default_value_t = 48)]
        size: usize,
        /// Maximum sprite shift per exposure step, in pixels (0 = static)
        #[arg(long, default_value_t = 3)]
        motion: i64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a model on a directory of scenes
    Train {
        /// Directory whose subdirectories are scenes
        #[arg(long)]
        data: PathBuf,
        /// `key = value` config file; defaults apply when omitted
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory for checkpoint.bin and curve.csv
        #[arg(long)]
        out: PathBuf,
    },
    /// Fuse one scene into HDR radiance with a trained model
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        /// Scene directory (three exposures + exposure times)
        #[arg(long)]
        scene: PathBuf,
        /// Output directory for hdr.pfm, coarse.pfm, mask.pfm, preview.ppm
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a predicted radiance map against ground truth
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
    },
    /// Verify analytic gradients against central finite differences
    Gradcheck {
        /// Check a single op by name instead of the whole registry
        #[arg(long)]
        op: Option<String>,
    },
}

/// Failures at the command layer, separated from core errors so misuse
/// of the command line maps to its own exit code.
enum CliError {
    Usage(String),
    Core(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "{msg}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(Error::Numerical(_)) => 3,
            CliError::Core(_) => 2,
        }
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests arrive as "errors" but are not.
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth {
            out,
            scenes,
            size,
            motion,
            seed,
        } => cmd_synth(&out, scenes, size, motion, seed),
        Command::Train { data, config, out } => cmd_train(&data, config.as_deref(), &out),
        Command::Infer { ckpt, scene, out } => cmd_infer(&ckpt, &scene, &out),
        Command::Eval { pred, gt } => cmd_eval(&pred, &gt),
        Command::Gradcheck { op } => cmd_gradcheck(op.as_deref()),
    }
}

/// Writes `manifest.txt` into `dir`: the exact invocation, tool version,
/// seed, elapsed time, and the settings block the run used.
fn write_manifest(
    dir: &Path,
    seed: Option<u64>,
    settings: &str,
    started: Instant,
) -> Result<(), Error> {
    let argv: Vec<String> = std::env::args().collect();
    let seed_line = match seed {
        Some(s) => s.to_string(),
        None => "none".to_string(),
    };
    let indented: String = settings
        .lines()
        .map(|l| format!("  {l}\n"))
        .collect();
    let text = format!(
        "command: {}\nversion: {}\nseed: {}\nwall_clock_seconds: {:.3}\nsettings:\n{}",
        argv.join(" "),
        env!("CARGO_PKG_VERSION"),
        seed_line,
        started.elapsed().as_secs_f64(),
        indented,
    );
    let path = dir.join("manifest.txt");
    fs::write(&path, text).map_err(|e| Error::io(path, e))
}

fn cmd_synth(
    out: &Path,
    scenes: usize,
    size: usize,
    motion: i64,
    seed: u64,
) -> Result<(), CliError> {
    let started = Instant::now();
    if scenes == 0 {
        return Err(CliError::Usage("--scenes must be at least 1".to_string()));
    }
    let cfg = SynthConfig {
        size,
        motion_px: motion,
        ..SynthConfig::default()
    };
    cfg.validate()?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut rng = rng_from(seed);
    for i in 0..scenes {
        let scene: Scene<f64> = synth_dynamic_scene(&cfg, &mut rng);
        save_scene(&out.join(format!("scene_{i:03}")), &scene)?;
    }
    let settings = format!(
        "scenes = {scenes}\nsize = {size}\nmotion = {motion}\nsprite_frac = {}\ntimes = {} {} {}",
        cfg.sprite_frac, cfg.times[0], cfg.times[1], cfg.times[2],
    );
    write_manifest(out, Some(seed), &settings, started)?;
    Ok(())
}

/// Subdirectories of `data` that look like scenes, in name order so runs
/// are independent of directory-listing order.
fn scene_dirs(data: &Path) -> Result<Vec<PathBuf>, Error> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(data)
        .map_err(|e| Error::io(data, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.join("exposures.txt").is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Validation(format!(
            "no scene directories (containing exposures.txt) under {}",
            data.display()
        )));
    }
    Ok(dirs)
}

fn cmd_train(data: &Path, config: Option<&Path>, out: &Path) -> Result<(), CliError> {
    let started = Instant::now();
    let cfg = match config {
        Some(path) => TrainConfig::load(path)?,
        None => TrainConfig::default(),
    };
    let dirs = scene_dirs(data)?;
    match cfg.precision {
        Precision::F64 => train_in::<f64>(&cfg, &dirs, out)?,
        Precision::F32 => train_in::<f32>(&cfg, &dirs, out)?,
    }
    write_manifest(out, Some(cfg.seed), &cfg.to_text(), started)?;
    Ok(())
}

fn train_in<E: Scalar>(cfg: &TrainConfig, dirs: &[PathBuf], out: &Path) -> Result<(), Error> {
    let scenes = dirs
        .iter()
        .map(|d| load_scene::<E>(d))
        .collect::<Result<Vec<_>, _>>()?;
    let outcome = trainer::train(cfg, &scenes, out)?;
    eprintln!(
        "trained {} iterations; checkpoint {}; curve {}",
        outcome.iterations_run,
        outcome.checkpoint.display(),
        outcome.curve_path.display(),
    );
    Ok(())
}

fn cmd_infer(ckpt: &Path, scene: &Path, out: &Path) -> Result<(), CliError> {
    let started = Instant::now();
    // The checkpoint knows its own numeric type; dispatch on the first
    // parameter entry rather than asking the user.
    let entries = read_entries(ckpt)?;
    let dtype = entries
        .iter()
        .find(|e| !e.name.starts_with(CONFIG_PREFIX))
        .map(|e| e.dtype)
        .ok_or_else(|| Error::Validation(format!("{} contains no parameters", ckpt.display())))?;
    match dtype {
        Dtype::F64 => infer_in::<f64>(ckpt, scene, out)?,
        Dtype::F32 => infer_in::<f32>(ckpt, scene, out)?,
    }
    write_manifest(out, None, &format!("checkpoint = {}", ckpt.display()), started)?;
    Ok(())
}

fn infer_in<E: Scalar>(ckpt: &Path, scene_dir: &Path, out: &Path) -> Result<(), Error> {
    let (pipeline, params) = load_model::<E>(ckpt)?;
    let scene = load_scene::<E>(scene_dir)?;
    let result = infer(&pipeline, &params, &scene);
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_pfm(&out.join("hdr.pfm"), &result.hdr.cast::<f32>())?;
    write_pfm(&out.join("coarse.pfm"), &result.coarse.cast::<f32>())?;
    write_pfm(&out.join("mask.pfm"), &gray_to_rgb(&result.mask.cast::<f32>()))?;
    write_ppm(
        &out.join("preview.ppm"),
        &tonemap_preview(&result.hdr.cast::<f32>()),
    )?;
    Ok(())
}

fn cmd_eval(pred: &Path, gt: &Path) -> Result<(), CliError> {
    let p = read_pfm(pred)?.cast::<f64>();
    let g = read_pfm(gt)?.cast::<f64>();
    let s = evaluate(&p, &g)?;
    // `{:?}` keeps a trailing `.0` on round numbers and prints infinity
    // as `inf`, so identical images score exactly `inf 1.0 inf 1.0`.
    println!("{:?} {:?} {:?} {:?}", s.psnr_t, s.ssim_t, s.psnr_l, s.ssim_l);
    Ok(())
}


fn cmd_gradcheck(op: Option<&str>) -> Result<(), CliError> {
    let all = registry();
    let selected: Vec<_> = match op {
        None => all.iter().collect(),
        Some(name) => {
            let hits: Vec<_> = all.iter().filter(|r| r.name == name).collect();
            if hits.is_empty() {
                let known: Vec<&str> = all.iter().map(|r| r.name).collect();
                return Err(CliError::Usage(format!(
                    "unknown op `{name}`; known ops: {}",
                    known.join(", ")
                )));
            }
            hits
        }
    };
    let mut failures = 0usize;
    for r in selected {
        let report = check_op(r, 3);
        let verdict = if report.pass() { "ok  " } else { "FAIL" };
        println!(
            "{verdict} {:<24} {:>6} elements, max rel err {:.3e}",
            r.name, report.checked, report.max_rel_err
        );
        if !report.pass() {
            failures += 1;
        }
    }
    if failures > 0 {
        return Err(CliError::Core(Error::Numerical(format!(
            "{failures} op(s) failed the gradient check"
        ))));
    }
    Ok(())
}
