//! Procedural hyperspectral scenes.
//!
//! Each scene is a sum of Gaussian blobs over a smooth background. Every blob
//! carries its own broad Gaussian spectrum, so neighbouring bands are strongly
//! correlated while distinct objects stay spectrally separable.

use std::path::{Path, PathBuf};

use ndarray::Array3;
use rand::Rng;

use super::manifest::{DatasetManifest, EntryKind, ManifestEntry, Role};
use super::{save_cube, save_mask};
use crate::cassi::{default_wavelengths, CodedMask, HsiCube};
use crate::{stream_rng, Error, Result};

const MASK_STREAM: u64 = u64::MAX;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub seed: u64,
    /// Total scene count, validation scenes included.
    pub scenes: usize,
    /// Trailing scenes assigned to the `val` split.
    pub val_scenes: usize,
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub shift_step: usize,
}

impl SynthSpec {
    pub fn new(seed: u64, scenes: usize, height: usize, width: usize, bands: usize) -> Self {
        Self {
            seed,
            scenes,
            val_scenes: 1.min(scenes.saturating_sub(1)),
            height,
            width,
            bands,
            shift_step: 2,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.scenes == 0 || self.height == 0 || self.width == 0 || self.bands == 0 {
            return Err(Error::Config(format!(
                "synthetic dataset needs positive extents, got {} scenes of {}×{}×{}",
                self.scenes, self.height, self.width, self.bands
            )));
        }
        if self.val_scenes > self.scenes {
            return Err(Error::Config(format!("{} validation scenes out of {}", self.val_scenes, self.scenes)));
        }
        Ok(())
    }

    /// Scene `i` of the dataset without touching the filesystem.
    pub fn scene(&self, i: usize) -> HsiCube {
        synth_cube(&mut stream_rng(self.seed, i as u64), self.height, self.width, self.bands)
    }

    pub fn mask(&self) -> CodedMask {
        CodedMask::random_binary(self.height, self.width, self.shift_step, 0.5, &mut stream_rng(self.seed, MASK_STREAM))
    }
}

/// One random scene with values in `[0, 1]` and peak exactly 1.
pub fn synth_cube<R: Rng + ?Sized>(rng: &mut R, h: usize, w: usize, bands: usize) -> HsiCube {
    let n_blobs = rng.random_range(4..=8);
    let scale = h.max(w) as f64;
    // background: a tilted plane with a flat, dim spectrum
    let (gx, gy) = (rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
    let bg_level = rng.random_range(0.05..0.2);
    let mut data = Array3::<f64>::zeros((h, w, bands));
    for ((i, j, _), v) in data.indexed_iter_mut() {
        let t = 0.5 + gy * (i as f64 / scale - 0.5) + gx * (j as f64 / scale - 0.5);
        *v = bg_level * t.clamp(0.0, 1.0);
    }
    let lambda = |n: usize| if bands == 1 { 0.5 } else { n as f64 / (bands - 1) as f64 };
    for _ in 0..n_blobs {
        let (ci, cj) = (rng.random_range(0.0..h as f64), rng.random_range(0.0..w as f64));
        let radius = rng.random_range(0.08..0.3) * scale;
        let amp = rng.random_range(0.3..1.0);
        let (mu, width) = (rng.random_range(-0.2..1.2), rng.random_range(0.3..0.7));
        let spectrum: Vec<f64> = (0..bands).map(|n| (-((lambda(n) - mu) / width).powi(2) / 2.0).exp()).collect();
        for i in 0..h {
            for j in 0..w {
                let r2 = ((i as f64 - ci).powi(2) + (j as f64 - cj).powi(2)) / (radius * radius);
                let s = amp * (-r2 / 2.0).exp();
                if s < 1e-8 {
                    continue;
                }
                for (n, &e) in spectrum.iter().enumerate() {
                    data[[i, j, n]] += s * e;
                }
            }
        }
    }
    let peak = data.fold(0.0f64, |m, &v| m.max(v));
    if peak > 0.0 {
        data.mapv_inplace(|v| (v / peak).clamp(0.0, 1.0));
    }
    HsiCube::with_wavelengths(data, default_wavelengths(bands)).expect("generated cube is valid")
}

/// Writes `scene{i}.hsc`, `mask.hsc` and `manifest.toml` under `dir` and
/// returns the manifest path.
pub fn synth_dataset(spec: &SynthSpec, dir: impl AsRef<Path>) -> Result<PathBuf> {
    spec.validate()?;
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(spec.scenes + 1);
    for i in 0..spec.scenes {
        let name = format!("scene{i}.hsc");
        save_cube(dir.join(&name), &spec.scene(i))?;
        let role = if i >= spec.scenes - spec.val_scenes { Role::Val } else { Role::Train };
        entries.push(ManifestEntry {
            path: name.into(),
            role: Some(role),
            kind: EntryKind::Cube,
        });
    }
    save_mask(dir.join("mask.hsc"), &spec.mask())?;
    entries.push(ManifestEntry {
        path: "mask.hsc".into(),
        role: None,
        kind: EntryKind::Mask,
    });
    let manifest = DatasetManifest {
        shift_step: spec.shift_step,
        wavelengths: default_wavelengths(spec.bands),
        entries,
    };
    let path = dir.join("manifest.toml");
    std::fs::write(&path, manifest.to_toml()).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
