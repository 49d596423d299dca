//! Scenes on disk and in memory.
//!
//! A *scene* is one training or evaluation unit: three bracketed LDR
//! exposures of the same view, their exposure times, and the ground-truth
//! HDR radiance aligned to the middle exposure. On disk a scene is a
//! directory:
//!
//! ```text
//! scene/
//!   ldr_0.ppm      shortest exposure
//!   ldr_1.ppm      middle exposure (reference)
//!   ldr_2.ppm      longest exposure
//!   exposures.txt  three exposure times, or `ev` plus three stop values
//!   gt.pfm         ground-truth radiance
//! ```
//!
//! `exposures.txt` holds either three whitespace-separated positive floats
//! (`0.25 1 4`), or the token `ev` followed by three exposure biases in
//! stops (`ev -2 0 2` means times `2⁻², 2⁰, 2²`). Times must be strictly
//! increasing — the fusion convention is shortest first.

mod augment;
mod synth;

pub use augment::{
    apply_dihedral, crop, crop_scene, example_from_scene, make_batch, sample_patch, Dihedral,
    TrainExample,
};
pub use synth::{make_static_scene, smooth_radiance_field, synth_dynamic_scene, SynthConfig};

use std::path::Path;

use crate::error::{Error, Result};
use crate::imageio::{read_pfm, read_ppm, write_pfm, write_ppm};
use crate::radiometry::six_channel;
use crate::tensor::{Scalar, Tensor};

/// One bracketed triple with ground truth. Images are planar `[3, H, W]`.
#[derive(Debug, Clone)]
pub struct Scene<E: Scalar> {
    pub ldrs: [Tensor<E>; 3],
    pub times: [f64; 3],
    pub gt: Tensor<E>,
}

impl<E: Scalar> Scene<E> {
    pub fn height(&self) -> usize {
        self.gt.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.gt.shape()[2]
    }

    /// The network input: each exposure stacked with its linearized
    /// radiance.
    pub fn inputs(&self) -> [Tensor<E>; 3] {
        std::array::from_fn(|i| six_channel(&self.ldrs[i], self.times[i]))
    }
}

fn parse_exposures(path: &Path) -> Result<[f64; 3]> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut tokens = text.split_whitespace();
    let first = tokens.next().ok_or_else(|| {
        Error::Validation(format!("{}: empty exposure file", path.display()))
    })?;
    let (stops, head) = if first == "ev" {
        (true, None)
    } else {
        (false, Some(first))
    };
    let mut values: Vec<f64> = Vec::new();
    for tok in head.into_iter().chain(tokens) {
        let v: f64 = tok.parse().map_err(|_| {
            Error::Validation(format!(
                "{}: bad exposure value `{tok}`",
                path.display()
            ))
        })?;
        values.push(if stops { v.exp2() } else { v });
    }
    if values.len() != 3 {
        return Err(Error::Validation(format!(
            "{}: expected 3 exposures, found {}",
            path.display(),
            values.len()
        )));
    }
    let t: [f64; 3] = [values[0], values[1], values[2]];
    if !(t[0] > 0.0 && t[0] < t[1] && t[1] < t[2]) {
        return Err(Error::Validation(format!(
            "{}: exposure times must be positive and strictly increasing, got {t:?}",
            path.display()
        )));
    }
    Ok(t)
}

/// Loads and validates one scene directory.
pub fn load_scene<E: Scalar>(dir: &Path) -> Result<Scene<E>> {
    let times = parse_exposures(&dir.join("exposures.txt"))?;
    let ldrs: [Tensor<E>; 3] = [
        read_ppm(&dir.join("ldr_0.ppm"))?.cast(),
        read_ppm(&dir.join("ldr_1.ppm"))?.cast(),
        read_ppm(&dir.join("ldr_2.ppm"))?.cast(),
    ];
    let gt: Tensor<E> = read_pfm(&dir.join("gt.pfm"))?.cast();
    for (i, l) in ldrs.iter().enumerate() {
        if l.shape() != gt.shape() {
            return Err(Error::Validation(format!(
                "{}: ldr_{i} is {:?} but gt is {:?}",
                dir.display(),
                l.shape(),
                gt.shape()
            )));
        }
    }
    if !gt.all_finite() {
        return Err(Error::Validation(format!(
            "{}: ground truth contains non-finite values",
            dir.display()
        )));
    }
    Ok(Scene { ldrs, times, gt })
}

/// Writes a scene directory (creating it if needed). LDR values are
/// quantized to 8 bits by the PPM writer; the ground truth stays exact.
pub fn save_scene<E: Scalar>(dir: &Path, scene: &Scene<E>) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, l) in scene.ldrs.iter().enumerate() {
        write_ppm(&dir.join(format!("ldr_{i}.ppm")), &l.cast())?;
    }
    let t = scene.times;
    std::fs::write(
        dir.join("exposures.txt"),
        format!("{} {} {}\n", t[0], t[1], t[2]),
    )
    .map_err(|e| Error::io(dir, e))?;
    write_pfm(&dir.join("gt.pfm"), &scene.gt.cast())
}
