//! Fixed-parameter solvers on one noisy synthetic scene: each framework with
//! a total-variation prior, plus ADMM with soft thresholding.
//!
//! ```text
//! cargo run --release --example classical_reconstruction -- [iters] [tau] [lambda]
//! ```

use hsi_unfold::cassi::{apply_phi_t, forward_with_noise, unshift_cube, NoiseSpec, SensingOperator};
use hsi_unfold::data_io::SynthSpec;
use hsi_unfold::denoisers::{Denoiser, SoftThreshold, TvDenoiser};
use hsi_unfold::metrics::{psnr, ssim};
use hsi_unfold::unfolding::{classical_solve, FrameworkKind, UnfoldOptions};
use hsi_unfold::seeded_rng;

fn main() -> hsi_unfold::Result<()> {
    let mut args = std::env::args().skip(1);
    let iters: usize = args.next().map_or(40, |s| s.parse().expect("iters"));
    let tau: f64 = args.next().map_or(0.5, |s| s.parse().expect("tau"));
    let lam: f64 = args.next().map_or(0.05, |s| s.parse().expect("lambda"));

    let spec = SynthSpec::new(21, 1, 48, 48, 6);
    let (cube, mask) = (spec.scene(0), spec.mask());
    let op = SensingOperator::new(&mask, cube.bands())?;
    let y = forward_with_noise(&cube, &mask, NoiseSpec::Shot { bits: 11 }, &mut seeded_rng(0))?;

    let z0 = unshift_cube(&apply_phi_t(&y, &op)?);
    println!("{:<8} {:<6} {:>9} {:>7}", "solver", "prior", "PSNR", "SSIM");
    println!("{:<8} {:<6} {:>6.2} dB {:>7.4}", "Φᵀy", "-", psnr(&cube, &z0, 1.0)?, ssim(&cube, &z0)?);

    let tv = TvDenoiser { iters: 30 };
    let runs: [(FrameworkKind, &str, &dyn Denoiser); 5] = [
        (FrameworkKind::Hqs, "tv", &tv),
        (FrameworkKind::Admm, "tv", &tv),
        (FrameworkKind::R2Admm, "tv", &tv),
        (FrameworkKind::Gap, "tv", &tv),
        (FrameworkKind::Admm, "soft", &SoftThreshold),
    ];
    for (kind, name, prior) in runs {
        let out = classical_solve(kind, &y, &op, &prior, tau, lam, iters, UnfoldOptions { record_trajectory: false, ground_truth: Some(&cube) })?;
        let rec = unshift_cube(&out.output);
        let last = out.diagnostics.last().map_or(0.0, |d| d.primal_residual);
        println!("{:<8} {name:<6} {:>6.2} dB {:>7.4}   ‖x − z‖ = {last:.2e}", kind.as_str(), psnr(&cube, &rec, 1.0)?, ssim(&cube, &rec)?);
    }
    Ok(())
}
