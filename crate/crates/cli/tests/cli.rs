//! End-to-end tests of the installed command surface: every command is
//! exercised through a real child process, so argument handling, exit
//! codes, and on-disk layouts are verified exactly as a user sees them.

use std::fs;
use std::path::Path;
use std::process::Command;

use hdrfuse_core::dataset::load_scene;
use hdrfuse_core::imageio::{read_pfm, read_ppm};
use hdrfuse_core::radiometry::expose;
use tempfile::TempDir;

fn hdrfuse() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hdrfuse"))
}

/// Runs the binary expecting success; returns stdout.
fn run_ok(args: &[&str]) -> String {
    let out = hdrfuse().args(args).output().unwrap();
    assert!(
        out.status.success(),
        "`hdrfuse {}` failed\nstderr: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Runs the binary expecting failure; returns (exit code, stderr).
fn run_fail(args: &[&str]) -> (i32, String) {
    let out = hdrfuse().args(args).output().unwrap();
    assert!(
        !out.status.success(),
        "`hdrfuse {}` unexpectedly succeeded",
        args.join(" ")
    );
    (
        out.status.code().expect("killed by signal"),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn synth(dir: &Path, scenes: usize, size: usize, motion: i64, seed: u64) {
    run_ok(&[
        "synth",
        "--out",
        dir.to_str().unwrap(),
        "--scenes",
        &scenes.to_string(),
        "--size",
        &size.to_string(),
        "--motion",
        &motion.to_string(),
        "--seed",
        &seed.to_string(),
    ]);
}

const SCENE_FILES: [&str; 5] = ["ldr_0.ppm", "ldr_1.ppm", "ldr_2.ppm", "exposures.txt", "gt.pfm"];

#[test]
fn synth_writes_the_documented_layout() {
    let dir = TempDir::new().unwrap();
    synth(dir.path(), 2, 32, 2, 7);
    for scene in ["scene_000", "scene_001"] {
        for file in SCENE_FILES {
            let p = dir.path().join(scene).join(file);
            assert!(p.is_file(), "missing {}", p.display());
        }
    }
    let manifest = fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
    assert!(manifest.contains("seed: 7"), "{manifest}");
    assert!(manifest.contains("command: "), "{manifest}");
}

#[test]
fn synth_is_byte_reproducible_per_seed() {
    let (a, b, c) = (TempDir::new().unwrap(), TempDir::new().unwrap(), TempDir::new().unwrap());
    synth(a.path(), 2, 32, 2, 9);
    synth(b.path(), 2, 32, 2, 9);
    synth(c.path(), 2, 32, 2, 10);
    for scene in ["scene_000", "scene_001"] {
        for file in SCENE_FILES {
            let bytes_a = fs::read(a.path().join(scene).join(file)).unwrap();
            let bytes_b = fs::read(b.path().join(scene).join(file)).unwrap();
            assert_eq!(bytes_a, bytes_b, "{scene}/{file} differs across runs");
        }
    }
    // A different seed must not reproduce the scene images.
    let gt_a = fs::read(a.path().join("scene_000/gt.pfm")).unwrap();
    let gt_c = fs::read(c.path().join("scene_000/gt.pfm")).unwrap();
    assert_ne!(gt_a, gt_c);
}

#[test]
fn synth_with_zero_motion_produces_static_scenes() {
    let dir = TempDir::new().unwrap();
    synth(dir.path(), 2, 32, 0, 3);
    // Quantization allows up to half a step (plus a possible one-step
    // boundary flip from the f32 disk round trip); real motion moves
    // sprite pixels by orders of magnitude more.
    let quantum = 1.0f32 / 255.0;
    for scene_name in ["scene_000", "scene_001"] {
        let scene = load_scene::<f32>(&dir.path().join(scene_name)).unwrap();
        for i in 0..3 {
            let expected = expose(&scene.gt, scene.times[i]);
            let worst = scene.ldrs[i]
                .iter()
                .zip(expected.iter())
                .map(|(&have, &want)| {
                    let q = (want.clamp(0.0, 1.0) * 255.0).round() / 255.0;
                    (have - q).abs()
                })
                .fold(0.0f32, f32::max);
            assert!(
                worst <= quantum,
                "{scene_name} exposure {i}: worst deviation {worst}"
            );
        }
    }
}

#[test]
fn synth_rejects_impossible_geometry() {
    let dir = TempDir::new().unwrap();
    let (code, err) = run_fail(&[
        "synth",
        "--out",
        dir.path().to_str().unwrap(),
        "--size",
        "12",
        "--motion",
        "6",
    ]);
    assert_eq!(code, 2, "{err}");
    assert!(err.contains("cannot fit"), "{err}");
}

fn write_tiny_config(path: &Path, seed: u64) {
    fs::write(
        path,
        format!("iterations = 2\nbatch = 4\nwidth = 4\npatch = 12\nseed = {seed}\n"),
    )
    .unwrap();
}

#[test]
fn train_is_deterministic_and_writes_all_artifacts() {
    let data = TempDir::new().unwrap();
    synth(data.path(), 2, 24, 2, 11);
    let cfg = data.path().join("train.cfg");
    write_tiny_config(&cfg, 0);

    let (run_a, run_b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    for run in [&run_a, &run_b] {
        run_ok(&[
            "train",
            "--data",
            data.path().to_str().unwrap(),
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            run.path().to_str().unwrap(),
        ]);
    }
    for file in ["checkpoint.bin", "curve.csv", "manifest.txt"] {
        assert!(run_a.path().join(file).is_file(), "missing {file}");
    }
    assert_eq!(
        fs::read(run_a.path().join("checkpoint.bin")).unwrap(),
        fs::read(run_b.path().join("checkpoint.bin")).unwrap(),
        "same seed, same data: checkpoints must match bit for bit"
    );
    assert_eq!(
        fs::read(run_a.path().join("curve.csv")).unwrap(),
        fs::read(run_b.path().join("curve.csv")).unwrap()
    );
    let curve = fs::read_to_string(run_a.path().join("curve.csv")).unwrap();
    let mut lines = curve.lines();
    assert_eq!(
        lines.next(),
        Some("iter,loss_total,loss_coarse,loss_fine,loss_final")
    );
    assert_eq!(lines.count(), 2);
}

#[test]
fn infer_then_eval_composes_without_manual_steps() {
    let data = TempDir::new().unwrap();
    synth(data.path(), 1, 24, 2, 13);
    let cfg = data.path().join("train.cfg");
    write_tiny_config(&cfg, 0);
    let run = TempDir::new().unwrap();
    run_ok(&[
        "train",
        "--data",
        data.path().to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        run.path().to_str().unwrap(),
    ]);

    let fused = TempDir::new().unwrap();
    let scene = data.path().join("scene_000");
    run_ok(&[
        "infer",
        "--ckpt",
        run.path().join("checkpoint.bin").to_str().unwrap(),
        "--scene",
        scene.to_str().unwrap(),
        "--out",
        fused.path().to_str().unwrap(),
    ]);
    for file in ["hdr.pfm", "coarse.pfm", "mask.pfm", "preview.ppm", "manifest.txt"] {
        assert!(fused.path().join(file).is_file(), "missing {file}");
    }
    // The soft saturation mask is a probability map.
    let mask = read_pfm(&fused.path().join("mask.pfm")).unwrap();
    assert!(mask.iter().all(|&m| m > 0.0 && m < 1.0));
    // The preview must be a valid image of the scene's dimensions.
    let preview = read_ppm(&fused.path().join("preview.ppm")).unwrap();
    assert_eq!(preview.shape(), &[3, 24, 24]);

    let stdout = run_ok(&[
        "eval",
        "--pred",
        fused.path().join("hdr.pfm").to_str().unwrap(),
        "--gt",
        scene.join("gt.pfm").to_str().unwrap(),
    ]);
    let fields: Vec<f64> = stdout
        .split_whitespace()
        .map(|t| t.parse().unwrap())
        .collect();
    assert_eq!(fields.len(), 4, "stdout: {stdout}");
    assert!(fields.iter().all(|v| v.is_finite()), "stdout: {stdout}");
}

#[test]
fn eval_scores_identical_images_with_the_exact_sentinel() {
    let data = TempDir::new().unwrap();
    synth(data.path(), 1, 24, 2, 15);
    let gt = data.path().join("scene_000/gt.pfm");
    let stdout = run_ok(&["eval", "--pred", gt.to_str().unwrap(), "--gt", gt.to_str().unwrap()]);
    assert_eq!(stdout, "inf 1.0 inf 1.0\n");
}

#[test]
fn gradcheck_accepts_known_ops_and_rejects_unknown_ones() {
    let stdout = run_ok(&["gradcheck", "--op", "mu_law"]);
    assert!(stdout.contains("ok"), "{stdout}");
    assert!(stdout.contains("mu_law"), "{stdout}");
    let (code, err) = run_fail(&["gradcheck", "--op", "definitely_not_an_op"]);
    assert_eq!(code, 1, "{err}");
    assert!(err.contains("known ops"), "{err}");
}

#[test]
fn usage_errors_exit_one() {
    let (code, _) = run_fail(&["train"]);
    assert_eq!(code, 1);
    let (code, _) = run_fail(&["no-such-command"]);
    assert_eq!(code, 1);
}

#[test]
fn unreadable_or_malformed_inputs_exit_two() {
    let dir = TempDir::new().unwrap();
    let (code, _) = run_fail(&[
        "eval",
        "--pred",
        dir.path().join("missing.pfm").to_str().unwrap(),
        "--gt",
        dir.path().join("missing.pfm").to_str().unwrap(),
    ]);
    assert_eq!(code, 2);

    // A checkpoint that is not a checkpoint.
    let fake = dir.path().join("fake.bin");
    fs::write(&fake, b"not a checkpoint at all").unwrap();
    let scenes = TempDir::new().unwrap();
    synth(scenes.path(), 1, 24, 2, 17);
    let (code, err) = run_fail(&[
        "infer",
        "--ckpt",
        fake.to_str().unwrap(),
        "--scene",
        scenes.path().join("scene_000").to_str().unwrap(),
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(code, 2, "{err}");

    // A config with an unknown key.
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "learning_rate = 0.1\n").unwrap();
    let (code, err) = run_fail(&[
        "train",
        "--data",
        scenes.path().to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("run").to_str().unwrap(),
    ]);
    assert_eq!(code, 2, "{err}");
    assert!(err.contains("unknown key"), "{err}");
}
