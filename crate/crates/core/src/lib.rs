//! Coded-aperture snapshot spectral imaging (CASSI) toolkit.
//!
//! The crate is organised bottom-up:
//!
//! - [`nn`]: dense channel-last tensors, a reverse-mode tape and the layer
//!   primitives needed by the learned components.
//! - [`cassi`]: the single-disperser forward model and the matrix-free
//!   sensing operator `Φ` / `Φᵀ` together with the diagonal of `ΦΦᵀ`.
//! - [`denoisers`]: analytic proximal operators (soft threshold, total
//!   variation) and the convolutional-modulation U-Net (CMFormer).
//! - [`unfolding`]: HQS, ADMM, GAP and residual-adaptive ADMM loops, both as
//!   fixed-parameter solvers and as a trainable unfolded network.
//! - [`training`], [`metrics`], [`data_io`]: the desk-scale training recipe,
//!   PSNR/SSIM, and on-disk formats.
//! - [`verify`] and [`cli`]: self-checking suites and the command-line front end.

pub mod cassi;
pub mod cli;
pub mod data_io;
pub mod denoisers;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod training;
pub mod unfolding;
pub mod verify;

pub use error::{Error, Result};

/// Deterministic generator used everywhere a seed is accepted.
pub type SeededRng = rand_chacha::ChaCha8Rng;

/// Builds a [`SeededRng`] from a seed.
pub fn seeded_rng(seed: u64) -> SeededRng {
    use rand::SeedableRng;
    SeededRng::seed_from_u64(seed)
}

/// Derives an independent generator for `(seed, stream)` pairs, e.g. one per
/// training step, so that any step can be replayed in isolation.
pub fn stream_rng(seed: u64, stream: u64) -> SeededRng {
    let mut rng = seeded_rng(seed);
    rng.set_stream(stream);
    rng
}
