//! Trains a one-stage tiny model on synthetic 32×32×4 scenes and compares
//! the held-out PSNR against the plain `Φᵀy` estimate.
//!
//! ```text
//! cargo run --release --example train_tiny -- [steps] [lr]
//! ```

use hsi_unfold::data_io::SynthSpec;
use hsi_unfold::nn::DType;
use hsi_unfold::training::{adjoint_baseline, l1_loss, train_loop, TrainConfig, TrainData, Trainer};
use hsi_unfold::unfolding::{FrameworkKind, UnfoldConfig};

fn main() -> hsi_unfold::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().map_or(500, |s| s.parse().expect("steps"));
    let lr: f64 = args.next().map_or(1e-2, |s| s.parse().expect("lr"));

    let spec = SynthSpec::new(7, 9, 32, 32, 4);
    let mask = spec.mask();
    let data = TrainData {
        train: (0..8).map(|i| spec.scene(i)).collect(),
        val: vec![spec.scene(8)],
        train_mask: mask.clone(),
        val_mask: mask,
    };
    let model = UnfoldConfig::tiny(FrameworkKind::R2Admm, 1);
    let cfg = TrainConfig {
        lr,
        epochs: 5,
        steps_per_epoch: steps / 5,
        batch_size: 2,
        crop: 32,
        seed: 1,
        precision: DType::F32,
        ..TrainConfig::default()
    };

    let init = Trainer::<f32>::new(&model, &cfg)?;
    let fit = |t: &Trainer<f32>| -> hsi_unfold::Result<f64> {
        let mut sum = 0.0;
        for (i, c) in data.train.iter().enumerate() {
            sum += l1_loss(&t.reconstruct(c, &data.train_mask, i as u64 + 1000)?, c)?;
        }
        Ok(sum / data.train.len() as f64)
    };
    let l1_before = fit(&init)?;
    let baseline = adjoint_baseline(&data.val, &data.val_mask, &cfg)?;
    let start = std::time::Instant::now();
    let out = tempfile_dir();
    let report = train_loop(&model, &data, &cfg, &out, None)?;
    for e in &report.epochs {
        println!("epoch {} step {} l1 {:.4} val psnr {:.2} dB", e.epoch, e.step, e.train_l1, e.val_psnr.unwrap_or(f64::NAN));
    }
    let mut trained = init.clone();
    trained.store = report.params.cast();
    let l1_after = fit(&trained)?;
    let val = trained.evaluate(&data.val, &data.val_mask)?;
    println!("Φᵀy baseline  {:.2} dB", baseline.psnr);
    println!("trained       {:.2} dB (SSIM {:.3})", val.psnr, val.ssim);
    println!("train ℓ1      {l1_before:.4} -> {l1_after:.4}");
    println!("{:.1} s, checkpoints in {}", start.elapsed().as_secs_f64(), out.display());
    Ok(())
}

fn tempfile_dir() -> std::path::PathBuf {
    let dir = std::env::temp_dir().join("hsi-unfold-train-tiny");
    std::fs::create_dir_all(&dir).expect("temp dir");
    dir
}
