//! End-to-end training of an [`UnfoldingNet`]: ℓ1 loss on random crops,
//! Adam with per-step cosine annealing, dihedral augmentation, per-epoch
//! validation and checkpoints.
//!
//! Every step draws its data from `stream_rng(seed, 2·step)` and its
//! drop-path masks from `stream_rng(seed, 2·step + 1)`, so a run resumed from
//! a checkpoint continues bit-exactly.

mod augment;
mod optim;

pub use augment::{augment, Dihedral};
pub use optim::{cosine_lr, Adam, AdamConfig};

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cassi::{apply_phi_t, forward, forward_with_noise, unshift_cube, CodedMask, HsiCube, Measurement, NoiseSpec, SensingOperator};
use crate::data_io::{Checkpoint, Dataset, Role};
use crate::metrics::{psnr, ssim};
use crate::nn::{DType, Graph, ParamStore, Real, Tensor};
use crate::unfolding::{SensingBatch, UnfoldConfig, UnfoldingNet};
use crate::{seeded_rng, stream_rng, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub adam: AdamConfig,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub batch_size: usize,
    pub crop: usize,
    pub seed: u64,
    pub precision: DType,
    /// `(encoder/decoder, bottleneck)` rates; `None` picks them from the
    /// stage count.
    pub drop_path: Option<(f64, f64)>,
    pub augment: bool,
    /// Shot noise applied to every simulated measurement.
    pub noise_bits: Option<u32>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 4e-4,
            adam: AdamConfig::default(),
            epochs: 10,
            steps_per_epoch: 50,
            batch_size: 4,
            crop: 32,
            seed: 0,
            precision: DType::F32,
            drop_path: None,
            augment: true,
            noise_bits: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("learning rate must be finite and nonnegative, got {}", self.lr)));
        }
        if self.batch_size == 0 || self.crop == 0 || self.steps_per_epoch == 0 {
            return Err(Error::Config(format!(
                "batch size, crop and steps per epoch must be positive, got {}, {}, {}",
                self.batch_size, self.crop, self.steps_per_epoch
            )));
        }
        if let Some((a, b)) = self.drop_path {
            if !(0.0..1.0).contains(&a) || !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("drop-path rates must lie in [0, 1), got ({a}, {b})")));
            }
        }
        Ok(())
    }

    pub fn total_steps(&self) -> usize {
        self.epochs * self.steps_per_epoch
    }

    fn noise(&self) -> Option<NoiseSpec> {
        self.noise_bits.map(|bits| NoiseSpec::Shot { bits })
    }
}

/// Mean absolute error over all elements.
pub fn l1_loss(pred: &HsiCube, target: &HsiCube) -> Result<f64> {
    if pred.dim() != target.dim() {
        return Err(Error::shape("l1_loss", format!("prediction {:?} vs target {:?}", pred.dim(), target.dim())));
    }
    let n = pred.data().len() as f64;
    Ok(pred.data().iter().zip(target.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / n)
}

/// Ground-truth cubes and the masks they are imaged through.
#[derive(Clone, Debug)]
pub struct TrainData {
    pub train: Vec<HsiCube>,
    pub val: Vec<HsiCube>,
    pub train_mask: CodedMask,
    pub val_mask: CodedMask,
}

impl TrainData {
    pub fn from_dataset(ds: &Dataset) -> Result<Self> {
        let train: Vec<_> = ds.scenes(Role::Train).map(|s| s.cube.clone()).collect();
        if train.is_empty() {
            return Err(Error::Config("dataset has no training scenes".into()));
        }
        let val: Vec<_> = ds.scenes(Role::Val).map(|s| s.cube.clone()).collect();
        let val_mask = if val.is_empty() { ds.mask_for(Role::Train)? } else { ds.mask_for(Role::Val)? };
        Ok(Self {
            train,
            val,
            train_mask: ds.mask_for(Role::Train)?.clone(),
            val_mask: val_mask.clone(),
        })
    }
}

fn simulate<R: Rng + ?Sized>(cube: &HsiCube, mask: &CodedMask, noise: Option<NoiseSpec>, rng: &mut R) -> Result<(Measurement, SensingOperator)> {
    let (h, w, n) = cube.dim();
    let mask = mask.crop(0, 0, h, w)?;
    let y = match noise {
        Some(spec) => forward_with_noise(cube, &mask, spec, rng)?,
        None => forward(cube, &mask)?,
    };
    Ok((y, SensingOperator::new(&mask, n)?))
}

/// Stream index for the noise of evaluation scene `i`; disjoint from the
/// training streams.
fn eval_stream(i: usize) -> u64 {
    u64::MAX - i as u64
}

/// Averages over a set of scenes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub l1: f64,
    pub psnr: f64,
    pub ssim: f64,
}

fn average(per_scene: &[(HsiCube, &HsiCube)]) -> Result<EvalMetrics> {
    let (mut l1, mut p, mut s) = (0.0, 0.0, 0.0);
    for (rec, gt) in per_scene {
        l1 += l1_loss(rec, gt)?;
        p += psnr(gt, rec, 1.0)?;
        s += ssim(gt, rec)?;
    }
    let n = per_scene.len().max(1) as f64;
    Ok(EvalMetrics {
        l1: l1 / n,
        psnr: p / n,
        ssim: s / n,
    })
}

/// Metrics of the unsheared `Φᵀy` against each cube, with the measurement
/// noise a trainer with `cfg` would use for evaluation.
pub fn adjoint_baseline(cubes: &[HsiCube], mask: &CodedMask, cfg: &TrainConfig) -> Result<EvalMetrics> {
    let recs = cubes
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let (y, op) = simulate(c, mask, cfg.noise(), &mut stream_rng(cfg.seed, eval_stream(i)))?;
            Ok((unshift_cube(&apply_phi_t(&y, &op)?), c))
        })
        .collect::<Result<Vec<_>>>()?;
    average(&recs)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub train_l1: f64,
    pub val_psnr: Option<f64>,
    pub val_ssim: Option<f64>,
}

/// Model, parameters and optimiser state of one training run.
#[derive(Clone, Debug)]
pub struct Trainer<T: Real> {
    pub model: UnfoldConfig,
    pub config: TrainConfig,
    pub net: UnfoldingNet,
    pub store: ParamStore<T>,
    pub adam: Adam<T>,
    /// Completed optimiser steps.
    pub step: usize,
    pub epoch: usize,
    pub best_val_psnr: Option<f64>,
}

impl<T: Real> Trainer<T> {
    /// The model actually built: `model` with the drop-path rates of `cfg`.
    pub fn effective_model(model: &UnfoldConfig, cfg: &TrainConfig) -> UnfoldConfig {
        let mut m = model.clone();
        m.denoiser = match cfg.drop_path {
            Some((a, b)) => {
                m.denoiser.drop_path = a;
                m.denoiser.bottleneck_drop_path = b;
                m.denoiser
            }
            None => m.denoiser.with_drop_path_for_stages(m.stages),
        };
        m
    }

    pub fn new(model: &UnfoldConfig, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if cfg.precision != T::DTYPE {
            return Err(Error::Config(format!("trainer precision {:?} but config asks for {:?}", T::DTYPE, cfg.precision)));
        }
        let model = Self::effective_model(model, cfg);
        let mut store = ParamStore::new();
        let net = UnfoldingNet::new(&mut store, &model, &mut seeded_rng(cfg.seed))?;
        let adam = Adam::new(&store, cfg.adam)?;
        Ok(Self {
            model,
            config: cfg.clone(),
            net,
            store,
            adam,
            step: 0,
            epoch: 0,
            best_val_psnr: None,
        })
    }

    /// Continues the run saved in `ckpt`. The saved model must match
    /// `model` after drop-path resolution.
    pub fn resume(model: &UnfoldConfig, cfg: &TrainConfig, ckpt: &Checkpoint) -> Result<Self> {
        let mut t = Self::new(model, cfg)?;
        let saved = checkpoint_model(ckpt)?;
        if saved != t.model {
            return Err(Error::Config(format!(
                "checkpoint model {} differs from configured model {}",
                serde_json::to_string(&saved).unwrap_or_default(),
                serde_json::to_string(&t.model).unwrap_or_default()
            )));
        }
        ckpt.load_params("model/", &mut t.store)?;
        let meta = &ckpt.metadata;
        let field = |k: &str| meta.get(k).and_then(|v| v.as_u64()).ok_or_else(|| Error::Config(format!("checkpoint metadata lacks `{k}`")));
        t.adam.load_from(ckpt, &t.store, field("adam_t")?)?;
        t.step = field("step")? as usize;
        t.epoch = field("epoch")? as usize;
        t.best_val_psnr = meta.get("best_val_psnr").and_then(|v| v.as_f64());
        Ok(t)
    }

    /// Batch for step `step`: random crops of random training scenes with
    /// the mask region underneath each crop.
    pub fn sample(&self, data: &TrainData, step: usize) -> Result<(SensingBatch<T>, Tensor<T>)> {
        let cfg = &self.config;
        let c = cfg.crop;
        let mut rng = stream_rng(cfg.seed, 2 * step as u64);
        let mut samples = Vec::with_capacity(cfg.batch_size);
        let mut targets = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            let cube = &data.train[rng.random_range(0..data.train.len())];
            let (h, w, _) = cube.dim();
            let (mh, mw) = data.train_mask.dim();
            if h.min(mh) < c || w.min(mw) < c {
                return Err(Error::Config(format!("crop {c} exceeds scene {h}×{w} or mask {mh}×{mw}")));
            }
            let top = rng.random_range(0..=h.min(mh) - c);
            let left = rng.random_range(0..=w.min(mw) - c);
            let mut crop = cube.crop(top, left, c, c)?;
            if cfg.augment {
                crop = augment(&crop, &mut rng)?;
            }
            let mask = data.train_mask.crop(top, left, c, c)?;
            samples.push(simulate(&crop, &mask, cfg.noise(), &mut rng)?);
            targets.push(crop.to_tensor::<T>());
        }
        let refs: Vec<_> = samples.iter().map(|(y, op)| (y, op)).collect();
        let batch = SensingBatch::new(&refs)?;
        let data = targets.into_iter().flat_map(|t| t.into_data()).collect();
        let target = Tensor::from_vec(vec![cfg.batch_size, c, c, self.model.bands], data)?;
        Ok((batch, target))
    }

    /// ℓ1 loss of the current parameters on `batch`.
    fn loss_and_tape(&self, batch: &SensingBatch<T>, target: &Tensor<T>, step: usize) -> Result<(f64, crate::nn::Tape<T>, crate::nn::Var)> {
        let mut g = Graph::train(&self.store, stream_rng(self.config.seed, 2 * step as u64 + 1));
        let trace = self.net.forward(&mut g, batch)?;
        let out = g.unshear(trace.output, batch.shift_step, batch.width)?;
        let tgt = g.constant(target.clone());
        let loss = g.l1_loss(out, tgt)?;
        let value = g.value(loss).item()?.to_f64_lossy();
        Ok((value, g.into_tape(), loss))
    }

    /// One optimiser step; returns the loss before the update.
    pub fn train_step(&mut self, data: &TrainData) -> Result<f64> {
        let step = self.step;
        let (batch, target) = self.sample(data, step)?;
        let (loss, tape, var) = self.loss_and_tape(&batch, &target, step)?;
        if !loss.is_finite() {
            return Err(Error::NanLoss { step });
        }
        self.store.zero_grad();
        tape.backward(var, &mut self.store)?;
        let lr = cosine_lr(step, self.config.total_steps(), self.config.lr);
        self.adam.step(&mut self.store, lr);
        self.step += 1;
        Ok(loss)
    }

    pub fn reconstruct(&self, cube: &HsiCube, mask: &CodedMask, noise_stream: u64) -> Result<HsiCube> {
        let (y, op) = simulate(cube, mask, self.config.noise(), &mut stream_rng(self.config.seed, noise_stream))?;
        Ok(unshift_cube(&self.net.reconstruct(&self.store, &y, &op)?))
    }

    /// Evaluation-mode metrics on full scenes.
    pub fn evaluate(&self, cubes: &[HsiCube], mask: &CodedMask) -> Result<EvalMetrics> {
        let recs = cubes
            .iter()
            .enumerate()
            .map(|(i, c)| Ok((self.reconstruct(c, mask, eval_stream(i))?, c)))
            .collect::<Result<Vec<_>>>()?;
        average(&recs)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut ckpt = Checkpoint::new(serde_json::json!({
            "model": self.model,
            "train": self.config,
            "precision": T::DTYPE,
            "step": self.step,
            "epoch": self.epoch,
            "adam_t": self.adam.t,
            "best_val_psnr": self.best_val_psnr,
        }));
        ckpt.push_params("model/", &self.store);
        self.adam.save_into(&mut ckpt, &self.store);
        ckpt
    }
}

/// Model configuration recorded in a checkpoint.
pub fn checkpoint_model(ckpt: &Checkpoint) -> Result<UnfoldConfig> {
    let m = ckpt.metadata.get("model").ok_or_else(|| Error::Config("checkpoint metadata lacks `model`".into()))?;
    serde_json::from_value(m.clone()).map_err(|e| Error::Config(format!("checkpoint model config: {e}")))
}

/// Rebuilds the network stored in `ckpt` with its parameters widened to f64.
pub fn load_model(ckpt: &Checkpoint) -> Result<(UnfoldingNet, ParamStore<f64>)> {
    fn build<T: Real>(model: &UnfoldConfig, ckpt: &Checkpoint) -> Result<(UnfoldingNet, ParamStore<f64>)> {
        let mut store = ParamStore::<T>::new();
        let net = UnfoldingNet::new(&mut store, model, &mut seeded_rng(0))?;
        ckpt.load_params("model/", &mut store)?;
        if store.len() != ckpt.records.iter().filter(|(n, _)| n.starts_with("model/")).count() {
            return Err(Error::Config("checkpoint holds parameters the model does not have".into()));
        }
        Ok((net, store.cast()))
    }
    let model = checkpoint_model(ckpt)?;
    let precision: DType = match ckpt.metadata.get("precision") {
        Some(v) => serde_json::from_value(v.clone()).map_err(|e| Error::Config(format!("checkpoint precision: {e}")))?,
        None => ckpt.records.first().map_or(DType::F64, |(_, c)| c.dtype()),
    };
    match precision {
        DType::F32 => build::<f32>(&model, ckpt),
        DType::F64 => build::<f64>(&model, ckpt),
    }
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub epochs: Vec<EpochLog>,
    /// Loss before each optimiser step of this run.
    pub step_losses: Vec<f64>,
    pub best_val_psnr: Option<f64>,
    pub best_checkpoint: PathBuf,
    pub last_checkpoint: PathBuf,
    pub log: PathBuf,
    pub net: UnfoldingNet,
    pub params: ParamStore<f64>,
}

pub const LOG_HEADER: &str = "epoch,step,lr,train_l1,val_psnr,val_ssim";

/// Runs (or resumes) training and writes `metrics.csv`, `best.hsck` and
/// `last.hsck` under `out_dir`.
pub fn train_loop(model: &UnfoldConfig, data: &TrainData, cfg: &TrainConfig, out_dir: &Path, resume: Option<&Checkpoint>) -> Result<TrainReport> {
    match cfg.precision {
        DType::F32 => run::<f32>(model, data, cfg, out_dir, resume),
        DType::F64 => run::<f64>(model, data, cfg, out_dir, resume),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.6}"))
}

fn run<T: Real>(model: &UnfoldConfig, data: &TrainData, cfg: &TrainConfig, out_dir: &Path, resume: Option<&Checkpoint>) -> Result<TrainReport> {
    if data.train.is_empty() {
        return Err(Error::Config("no training scenes".into()));
    }
    let mut tr = match resume {
        Some(c) => Trainer::<T>::resume(model, cfg, c)?,
        None => Trainer::<T>::new(model, cfg)?,
    };
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let log = out_dir.join("metrics.csv");
    let best = out_dir.join("best.hsck");
    let last = out_dir.join("last.hsck");
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(resume.is_some())
        .write(true)
        .truncate(resume.is_none())
        .open(&log)
        .map_err(|e| Error::io(&log, e))?;
    if resume.is_none() || file.metadata().map(|m| m.len() == 0).unwrap_or(true) {
        writeln!(file, "{LOG_HEADER}").map_err(|e| Error::io(&log, e))?;
    }
    let mut epochs = Vec::new();
    let mut step_losses = Vec::new();
    if tr.epoch == 0 && cfg.epochs == 0 {
        let c = tr.checkpoint();
        c.save(&best)?;
        c.save(&last)?;
    }
    while tr.epoch < cfg.epochs {
        let mut sum = 0.0;
        for _ in 0..cfg.steps_per_epoch {
            let loss = tr.train_step(data)?;
            step_losses.push(loss);
            sum += loss;
        }
        tr.epoch += 1;
        let val = if data.val.is_empty() { None } else { Some(tr.evaluate(&data.val, &data.val_mask)?) };
        let entry = EpochLog {
            epoch: tr.epoch,
            step: tr.step,
            lr: cosine_lr(tr.step - 1, cfg.total_steps(), cfg.lr),
            train_l1: sum / cfg.steps_per_epoch as f64,
            val_psnr: val.map(|v| v.psnr),
            val_ssim: val.map(|v| v.ssim),
        };
        log::info!(
            "epoch {} step {} lr {:.3e} l1 {:.5} val psnr {}",
            entry.epoch,
            entry.step,
            entry.lr,
            entry.train_l1,
            opt(entry.val_psnr)
        );
        writeln!(
            file,
            "{},{},{:e},{:.8},{},{}",
            entry.epoch,
            entry.step,
            entry.lr,
            entry.train_l1,
            opt(entry.val_psnr),
            opt(entry.val_ssim)
        )
        .map_err(|e| Error::io(&log, e))?;
        let improved = match (entry.val_psnr, tr.best_val_psnr) {
            (Some(p), Some(b)) => p > b,
            (Some(_), None) => true,
            (None, _) => true,
        };
        if improved {
            tr.best_val_psnr = entry.val_psnr.or(tr.best_val_psnr);
            tr.checkpoint().save(&best)?;
        }
        tr.checkpoint().save(&last)?;
        epochs.push(entry);
    }
    if !best.exists() {
        tr.checkpoint().save(&best)?;
    }
    Ok(TrainReport {
        epochs,
        step_losses,
        best_val_psnr: tr.best_val_psnr,
        best_checkpoint: best,
        last_checkpoint: last,
        log,
        net: tr.net.clone(),
        params: tr.store.cast(),
    })
}
