//! Command-line front end: `simulate`, `reconstruct`, `train`, `verify`.
//!
//! Settings come from an optional TOML file (`--config`) and are overridden
//! by flags. The data set defaults to `$HSI_UNFOLD_DATA/manifest.toml`.
//!
//! ```toml
//! data = "data/manifest.toml"
//! seed = 3
//! preset = "tiny"          # or "full"
//!
//! [model]                  # overrides of the preset
//! stages = 3
//! framework = "r2admm"
//!
//! [train]
//! epochs = 5
//! lr = 0.01
//!
//! [reconstruct]
//! framework = "admm"
//! prior = "tv"
//! stages = 40
//! tau = 0.5
//! lambda = 0.05
//!
//! [simulate]
//! noise_bits = 11
//! ```

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::cassi::{apply_phi_t, forward, forward_with_noise, unshift_cube, HsiCube, Measurement, NoiseSpec, SensingOperator, ShearedCube};
use crate::data_io::{load_measurement, save_cube, save_measurement, synth_dataset, Checkpoint, Dataset, Role, Scene, SynthSpec};
use crate::denoisers::{Denoiser, FfnVariant, Identity, SoftThreshold, TvDenoiser};
use crate::metrics::{psnr, ssim};
use crate::nn::{DType, Graph};
use crate::training::{load_model, train_loop, TrainConfig, TrainData};
use crate::unfolding::{run_unfold, write_diagnostics_csv, FrameworkKind, SensingBatch, StageDiagnostics, StageParams, UnfoldConfig, UnfoldOptions};
use crate::verify::{run_suite, Suite};
use crate::{stream_rng, Error, Result};

/// Environment variable naming the default data directory.
pub const DATA_ENV: &str = "HSI_UNFOLD_DATA";

#[derive(Debug, Parser)]
#[command(name = "hsi-unfold", version, about = "Snapshot spectral imaging: simulate, reconstruct, train, verify")]
pub struct Cli {
    /// Seed for every random draw (noise, initialisation, batches).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// TOML settings file; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate coded measurements for every scene of a data set.
    Simulate(SimulateArgs),
    /// Reconstruct cubes with a classical solver or a trained checkpoint.
    Reconstruct(ReconstructArgs),
    /// Train an unfolded network.
    Train(TrainArgs),
    /// Run a self-check suite: adjoint, gradcheck, oracle, equivalence or all.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Manifest file, or a directory holding `manifest.toml`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Restrict to one split (train, val, test).
    #[arg(long)]
    pub split: Option<String>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// Shot-noise bit depth; noiseless when absent.
    #[arg(long)]
    pub noise_bits: Option<u32>,
    /// Write a synthetic data set of this many scenes into `--out` first.
    #[arg(long)]
    pub generate: Option<usize>,
    /// Spatial size of generated scenes.
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    /// Band count of generated scenes.
    #[arg(long, default_value_t = 4)]
    pub bands: usize,
    /// Dispersion step of generated data sets.
    #[arg(long, default_value_t = 2)]
    pub shift_step: usize,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// Directory of `<scene>.y.hsc` files written by `simulate`; measurements
    /// are simulated on the fly otherwise.
    #[arg(long)]
    pub measurements: Option<PathBuf>,
    /// Trained network; without it a classical solver runs.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// hqs, admm, r2admm, gap or plain.
    #[arg(long)]
    pub framework: Option<String>,
    /// Classical prior: tv, soft or identity.
    #[arg(long)]
    pub prior: Option<String>,
    #[arg(long)]
    pub stages: Option<usize>,
    /// Penalty τ (α = τ).
    #[arg(long)]
    pub tau: Option<f64>,
    /// Regularisation weight λ (β = τ/λ).
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Dual relaxation γ for r2admm.
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub noise_bits: Option<u32>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// tiny or full model preset.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub steps_per_epoch: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub crop: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub stages: Option<usize>,
    /// hqs, admm, r2admm, gap or plain.
    #[arg(long)]
    pub framework: Option<String>,
    #[arg(long)]
    pub kernel_size: Option<usize>,
    /// full, none, no-dw or pw-only.
    #[arg(long)]
    pub ffn: Option<String>,
    /// Drop-path rate, `R` for both or `R,B` for encoder/decoder and bottleneck.
    #[arg(long)]
    pub drop_path: Option<String>,
    /// f32 or f64.
    #[arg(long)]
    pub precision: Option<String>,
    #[arg(long)]
    pub noise_bits: Option<u32>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    pub suite: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Tiny,
    Full,
}

impl Preset {
    fn model(self) -> UnfoldConfig {
        match self {
            Preset::Tiny => UnfoldConfig::tiny(FrameworkKind::R2Admm, 1),
            Preset::Full => UnfoldConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Prior {
    Tv,
    Soft,
    Identity,
}

/// Classical solver settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconstructConfig {
    pub framework: FrameworkKind,
    pub prior: Prior,
    pub stages: usize,
    pub tau: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub tv_iters: usize,
    pub noise_bits: Option<u32>,
}

impl Default for ReconstructConfig {
    fn default() -> Self {
        Self {
            framework: FrameworkKind::Admm,
            prior: Prior::Tv,
            stages: 40,
            tau: 0.5,
            lambda: 0.05,
            gamma: 1.0,
            tv_iters: 30,
            noise_bits: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub noise_bits: Option<u32>,
}

/// Contents of a `--config` file.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub data: Option<PathBuf>,
    pub seed: Option<u64>,
    pub preset: Option<Preset>,
    pub model: Option<toml::Table>,
    pub train: Option<toml::Table>,
    pub reconstruct: Option<toml::Table>,
    pub simulate: Option<toml::Table>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// `base` with the keys of `over` replaced, recursing into tables.
fn merge(base: &mut toml::Table, over: &toml::Table) {
    for (k, v) in over {
        match (base.get_mut(k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

fn layered<T: Clone + Serialize + serde::de::DeserializeOwned>(base: &T, over: Option<&toml::Table>, section: &str) -> Result<T> {
    let Some(over) = over else { return Ok(base.clone()) };
    let mut table = toml::Table::try_from(base).map_err(|e| Error::Config(format!("[{section}]: {e}")))?;
    merge(&mut table, over);
    toml::Value::Table(table).try_into().map_err(|e| Error::Config(format!("[{section}]: {e}")))
}

fn parse_framework(s: &str) -> Result<FrameworkKind> {
    s.parse()
}

fn parse_ffn(s: &str) -> Result<FfnVariant> {
    s.parse().map_err(|_| Error::Usage(format!("unknown FFN variant `{s}`; valid values: full, none, no-dw, pw-only")))
}

fn parse_prior(s: &str) -> Result<Prior> {
    match s {
        "tv" => Ok(Prior::Tv),
        "soft" => Ok(Prior::Soft),
        "identity" => Ok(Prior::Identity),
        _ => Err(Error::Usage(format!("unknown prior `{s}`; valid values: tv, soft, identity"))),
    }
}

fn parse_precision(s: &str) -> Result<DType> {
    match s {
        "f32" => Ok(DType::F32),
        "f64" => Ok(DType::F64),
        _ => Err(Error::Usage(format!("unknown precision `{s}`; valid values: f32, f64"))),
    }
}

fn parse_preset(s: &str) -> Result<Preset> {
    match s {
        "tiny" => Ok(Preset::Tiny),
        "full" => Ok(Preset::Full),
        _ => Err(Error::Usage(format!("unknown preset `{s}`; valid values: tiny, full"))),
    }
}

fn parse_split(s: &str) -> Result<Role> {
    Role::ALL
        .into_iter()
        .find(|r| r.to_string() == s)
        .ok_or_else(|| Error::Usage(format!("unknown split `{s}`; valid values: train, val, test")))
}

fn parse_drop_path(s: &str) -> Result<(f64, f64)> {
    let bad = || Error::Usage(format!("bad drop-path `{s}`; expected R or R,B"));
    let parts: Vec<f64> = s.split(',').map(|p| p.trim().parse::<f64>().map_err(|_| bad())).collect::<Result<_>>()?;
    match parts[..] {
        [r] => Ok((r, r)),
        [r, b] => Ok((r, b)),
        _ => Err(bad()),
    }
}

fn resolve_data(flag: Option<&Path>, file: &FileConfig) -> Result<PathBuf> {
    let path = match flag.map(Path::to_path_buf).or_else(|| file.data.clone()) {
        Some(p) => p,
        None => match std::env::var_os(DATA_ENV) {
            Some(dir) => PathBuf::from(dir),
            None => return Err(Error::Usage(format!("no data set given: pass --data or set {DATA_ENV}"))),
        },
    };
    Ok(if path.is_dir() { path.join("manifest.toml") } else { path })
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Measurement and operator for one scene, the noise drawn from
/// `stream_rng(seed, scene index)`.
fn measure(ds: &Dataset, scene: &Scene, index: usize, noise_bits: Option<u32>, seed: u64) -> Result<(Measurement, SensingOperator)> {
    let (h, w, n) = scene.cube.dim();
    let mask = ds.mask_for(scene.role)?.crop(0, 0, h, w)?;
    let y = match noise_bits {
        Some(bits) => forward_with_noise(&scene.cube, &mask, NoiseSpec::Shot { bits }, &mut stream_rng(seed, index as u64))?,
        None => forward(&scene.cube, &mask)?,
    };
    Ok((y, SensingOperator::new(&mask, n)?))
}

/// Parses `args` and runs the command, writing reports to `out` and
/// diagnostics to `err`. Returns the process exit code.
pub fn run_from<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = if code == 0 { write!(out, "{}", e.render()) } else { write!(err, "{}", e.render()) };
            return code;
        }
    };
    match run(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let seed = cli.seed.or(file.seed).unwrap_or(0);
    match &cli.command {
        Command::Simulate(a) => simulate(a, &file, seed, out),
        Command::Reconstruct(a) => reconstruct(a, &file, seed, out),
        Command::Train(a) => train(a, &file, seed, out),
        Command::Verify(a) => verify(a, seed, out),
    }
}

fn io_err(e: std::io::Error) -> Error {
    Error::io("<output>", e)
}

fn simulate(a: &SimulateArgs, file: &FileConfig, seed: u64, out: &mut dyn Write) -> Result<()> {
    let cfg: SimulateConfig = layered(&SimulateConfig::default(), file.simulate.as_ref(), "simulate")?;
    let noise_bits = a.noise_bits.or(cfg.noise_bits);
    create_dir(&a.out)?;
    let manifest = match a.generate {
        Some(scenes) => {
            let spec = SynthSpec {
                shift_step: a.shift_step,
                ..SynthSpec::new(seed, scenes, a.size, a.size, a.bands)
            };
            let p = synth_dataset(&spec, &a.out)?;
            writeln!(out, "generated {scenes} scenes in {}", a.out.display()).map_err(io_err)?;
            p
        }
        None => resolve_data(a.data.data.as_deref(), file)?,
    };
    let ds = Dataset::load(&manifest)?;
    let split = a.data.split.as_deref().map(parse_split).transpose()?;
    for (i, scene) in ds.scenes.iter().enumerate() {
        if split.is_some_and(|r| r != scene.role) {
            continue;
        }
        let (y, _) = measure(&ds, scene, i, noise_bits, seed)?;
        let path = a.out.join(format!("{}.y.hsc", scene.name));
        save_measurement(&path, &y)?;
        let (h, w) = y.dim();
        writeln!(out, "{} ({}) -> {} [{h}×{w}]", scene.name, scene.role, path.display()).map_err(io_err)?;
    }
    Ok(())
}

struct Outcome {
    output: ShearedCube,
    diagnostics: Vec<StageDiagnostics>,
}

fn classical(cfg: &ReconstructConfig, y: &Measurement, op: &SensingOperator, gt: &HsiCube) -> Result<Outcome> {
    if !(cfg.tau > 0.0) || !(cfg.lambda > 0.0) {
        return Err(Error::Config(format!("need τ > 0 and λ > 0, got τ = {}, λ = {}", cfg.tau, cfg.lambda)));
    }
    let den: Box<dyn Denoiser> = match cfg.prior {
        Prior::Tv => Box::new(TvDenoiser { iters: cfg.tv_iters }),
        Prior::Soft => Box::new(SoftThreshold),
        Prior::Identity => Box::new(Identity),
    };
    let params = StageParams::constant(cfg.stages, cfg.tau, cfg.tau / cfg.lambda, cfg.gamma);
    let opts = UnfoldOptions {
        record_trajectory: false,
        ground_truth: Some(gt),
    };
    let r = run_unfold(cfg.framework, cfg.stages, std::slice::from_ref(&den), y, op, &params, apply_phi_t(y, op)?, opts)?;
    Ok(Outcome {
        output: r.output,
        diagnostics: r.diagnostics,
    })
}

fn learned(net: &crate::unfolding::UnfoldingNet, store: &crate::nn::ParamStore<f64>, y: &Measurement, op: &SensingOperator, gt: &HsiCube) -> Result<Outcome> {
    let batch = SensingBatch::<f64>::new(&[(y, op)])?;
    let mut g = Graph::eval(store);
    let trace = net.forward(&mut g, &batch)?;
    let d = op.shift_step();
    let mut diagnostics = Vec::with_capacity(trace.stages.len());
    for (i, &(x, z)) in trace.stages.iter().enumerate() {
        let x = ShearedCube::from_tensor(g.value(x), 0, d)?;
        let z = ShearedCube::from_tensor(g.value(z), 0, d)?;
        diagnostics.push(StageDiagnostics {
            stage: i,
            primal_residual: crate::unfolding::distance(&x, &z),
            psnr: Some(psnr(gt, &unshift_cube(&z), 1.0)?),
        });
    }
    Ok(Outcome {
        output: ShearedCube::from_tensor(g.value(trace.output), 0, d)?,
        diagnostics,
    })
}

fn reconstruct(a: &ReconstructArgs, file: &FileConfig, seed: u64, out: &mut dyn Write) -> Result<()> {
    let mut cfg: ReconstructConfig = layered(&ReconstructConfig::default(), file.reconstruct.as_ref(), "reconstruct")?;
    if let Some(f) = &a.framework {
        cfg.framework = parse_framework(f)?;
    }
    if let Some(p) = &a.prior {
        cfg.prior = parse_prior(p)?;
    }
    cfg.stages = a.stages.unwrap_or(cfg.stages);
    cfg.tau = a.tau.unwrap_or(cfg.tau);
    cfg.lambda = a.lambda.unwrap_or(cfg.lambda);
    cfg.gamma = a.gamma.unwrap_or(cfg.gamma);
    cfg.noise_bits = a.noise_bits.or(cfg.noise_bits);

    let ds = Dataset::load(resolve_data(a.data.data.as_deref(), file)?)?;
    let split = a.data.split.as_deref().map(parse_split).transpose()?;
    let model = match &a.checkpoint {
        Some(path) => {
            let (net, store) = load_model(&Checkpoint::load(path)?)?;
            let m = &net.config;
            if let Some(k) = a.stages {
                if k != m.stages {
                    return Err(Error::Config(format!("stage count: checkpoint has {}, requested {k}", m.stages)));
                }
            }
            if let Some(f) = &a.framework {
                let f = parse_framework(f)?;
                if f != m.framework {
                    return Err(Error::Config(format!("framework: checkpoint has {}, requested {f}", m.framework)));
                }
            }
            if m.bands != ds.bands() {
                return Err(Error::Config(format!("channels: checkpoint has {}, data set has {}", m.bands, ds.bands())));
            }
            if m.shift_step != ds.shift_step() {
                return Err(Error::Config(format!("shift step: checkpoint has {}, data set has {}", m.shift_step, ds.shift_step())));
            }
            Some((net, store))
        }
        None => None,
    };

    if split.is_some_and(|r| ds.scenes(r).next().is_none()) {
        return Err(Error::Usage(format!("split `{}` has no scenes", a.data.split.as_deref().unwrap_or_default())));
    }
    create_dir(&a.out)?;
    let mut metrics = String::from("scene,psnr,ssim\n");
    for (i, scene) in ds.scenes.iter().enumerate() {
        if split.is_some_and(|r| r != scene.role) {
            continue;
        }
        let (mut y, op) = measure(&ds, scene, i, cfg.noise_bits, seed)?;
        if let Some(dir) = &a.measurements {
            y = load_measurement(dir.join(format!("{}.y.hsc", scene.name)))?;
        }
        let result = match &model {
            Some((net, store)) => learned(net, store, &y, &op, &scene.cube),
            None => classical(&cfg, &y, &op, &scene.cube),
        }
        .inspect_err(|e| log::error!("{}: {e}", scene.name))?;
        let rec = unshift_cube(&result.output);
        let rec = HsiCube::with_wavelengths(rec.into_data(), scene.cube.wavelengths().to_vec())?;
        save_cube(a.out.join(format!("{}.hsc", scene.name)), &rec)?;
        let mut csv = Vec::new();
        write_diagnostics_csv(&mut csv, &result.diagnostics).map_err(io_err)?;
        write_file(&a.out.join(format!("{}.diagnostics.csv", scene.name)), &String::from_utf8_lossy(&csv))?;
        let (p, s) = (psnr(&scene.cube, &rec, 1.0)?, ssim(&scene.cube, &rec)?);
        metrics.push_str(&format!("{},{p:.6},{s:.6}\n", scene.name));
        writeln!(out, "{}: PSNR {p:.2} dB, SSIM {s:.4}", scene.name).map_err(io_err)?;
    }
    write_file(&a.out.join("metrics.csv"), &metrics)
}

fn train(a: &TrainArgs, file: &FileConfig, seed: u64, out: &mut dyn Write) -> Result<()> {
    let preset = match &a.preset {
        Some(p) => parse_preset(p)?,
        None => file.preset.unwrap_or(Preset::Tiny),
    };
    let ds = Dataset::load(resolve_data(a.data.data.as_deref(), file)?)?;
    let mut model: UnfoldConfig = layered(&preset.model(), file.model.as_ref(), "model")?;
    let mut tcfg: TrainConfig = layered(&TrainConfig::default(), file.train.as_ref(), "train")?;
    model.bands = ds.bands();
    model.shift_step = ds.shift_step();
    if let Some(f) = &a.framework {
        model.framework = parse_framework(f)?;
    }
    model.stages = a.stages.unwrap_or(model.stages);
    model.denoiser.kernel_size = a.kernel_size.unwrap_or(model.denoiser.kernel_size);
    if let Some(f) = &a.ffn {
        model.denoiser.ffn = parse_ffn(f)?;
    }
    tcfg.seed = seed;
    tcfg.epochs = a.epochs.unwrap_or(tcfg.epochs);
    tcfg.steps_per_epoch = a.steps_per_epoch.unwrap_or(tcfg.steps_per_epoch);
    tcfg.batch_size = a.batch_size.unwrap_or(tcfg.batch_size);
    tcfg.crop = a.crop.unwrap_or(tcfg.crop);
    tcfg.lr = a.lr.unwrap_or(tcfg.lr);
    tcfg.noise_bits = a.noise_bits.or(tcfg.noise_bits);
    if let Some(d) = &a.drop_path {
        tcfg.drop_path = Some(parse_drop_path(d)?);
    }
    if let Some(p) = &a.precision {
        tcfg.precision = parse_precision(p)?;
    }
    model.validate()?;
    let data = TrainData::from_dataset(&ds)?;
    let resume = a.resume.as_deref().map(Checkpoint::load).transpose()?;
    let report = train_loop(&model, &data, &tcfg, &a.out, resume.as_ref())?;
    for e in &report.epochs {
        let val = e.val_psnr.map_or_else(|| "-".to_string(), |p| format!("{p:.2} dB"));
        writeln!(out, "epoch {} step {} lr {:.2e} train ℓ1 {:.5} val PSNR {val}", e.epoch, e.step, e.lr, e.train_l1).map_err(io_err)?;
    }
    writeln!(
        out,
        "{} parameters; checkpoints {} and {}",
        report.params.num_scalars(),
        report.best_checkpoint.display(),
        report.last_checkpoint.display()
    )
    .map_err(io_err)
}

fn verify(a: &VerifyArgs, seed: u64, out: &mut dyn Write) -> Result<()> {
    let suites: Vec<Suite> = if a.suite == "all" { Suite::ALL.to_vec() } else { vec![a.suite.parse()?] };
    let mut failed = Vec::new();
    for s in suites {
        let report = run_suite(s, seed)?;
        writeln!(out, "{report}").map_err(io_err)?;
        if !report.passed() {
            failed.push(s.as_str());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Verification(failed.join(", ")))
    }
}

/// Entry point of the binary.
pub fn main() -> i32 {
    let args: Vec<OsString> = std::env::args_os().collect();
    let verbosity = args.iter().filter_map(|a| a.to_str()).fold(0, |n, a| match a {
        "-v" | "--verbose" => n + 1,
        "-vv" => n + 2,
        _ => n,
    });
    let level = ["warn", "info", "debug"][verbosity.min(2)];
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    run_from(args, &mut std::io::stdout(), &mut std::io::stderr())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn merge_replaces_leaves_and_keeps_siblings() {
        let mut base: toml::Table = toml::from_str("a = 1\n[t]\nx = 1\ny = 2\n").unwrap();
        let over: toml::Table = toml::from_str("[t]\ny = 5\n").unwrap();
        merge(&mut base, &over);
        assert_eq!(base["a"].as_integer(), Some(1));
        assert_eq!(base["t"]["x"].as_integer(), Some(1));
        assert_eq!(base["t"]["y"].as_integer(), Some(5));
    }

    #[test]
    fn model_section_overrides_the_preset() {
        let over: toml::Table = toml::from_str("stages = 3\nframework = \"admm\"\n[denoiser]\nkernel_size = 5\n").unwrap();
        let m: UnfoldConfig = layered(&Preset::Tiny.model(), Some(&over), "model").unwrap();
        assert_eq!((m.stages, m.framework, m.denoiser.kernel_size), (3, FrameworkKind::Admm, 5));
        assert_eq!(m.denoiser.channels, 8);
        let bad: toml::Table = toml::from_str("stagez = 3\n").unwrap();
        let e = layered(&Preset::Tiny.model(), Some(&bad), "model").unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn train_section_with_optional_fields() {
        let over: toml::Table = toml::from_str("epochs = 2\nnoise_bits = 11\ndrop_path = [0.1, 0.2]\nprecision = \"f64\"\n").unwrap();
        let t: TrainConfig = layered(&TrainConfig::default(), Some(&over), "train").unwrap();
        assert_eq!((t.epochs, t.noise_bits, t.drop_path, t.precision), (2, Some(11), Some((0.1, 0.2)), DType::F64));
        assert_eq!(t.batch_size, TrainConfig::default().batch_size);
    }

    #[test]
    fn drop_path_forms() {
        assert_eq!(parse_drop_path("0.1").unwrap(), (0.1, 0.1));
        assert_eq!(parse_drop_path("0.1, 0.3").unwrap(), (0.1, 0.3));
        assert!(parse_drop_path("a").is_err());
        assert!(parse_drop_path("0.1,0.2,0.3").is_err());
    }

    #[test]
    fn split_and_prior_names() {
        assert_eq!(parse_split("val").unwrap(), Role::Val);
        assert_eq!(parse_split("dev").unwrap_err().exit_code(), 2);
        assert_eq!(parse_prior("soft").unwrap(), Prior::Soft);
        assert!(parse_prior("bm3d").unwrap_err().to_string().contains("tv, soft, identity"));
    }

    #[test]
    fn help_goes_to_stdout() {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        assert_eq!(run_from(["hsi-unfold", "--help"], &mut out, &mut err), 0);
        assert!(String::from_utf8(out).unwrap().contains("reconstruct"));
        assert!(err.is_empty());
        let (mut out, mut err) = (Vec::new(), Vec::new());
        assert_eq!(run_from(["hsi-unfold", "verify", "nope"], &mut out, &mut err), 2);
        assert!(String::from_utf8(err).unwrap().contains("adjoint"));
    }
}
