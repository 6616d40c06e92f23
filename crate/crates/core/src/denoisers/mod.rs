//! Priors `D(v, β)` plugged into the unfolding loop.
//!
//! `β = τ/λ` is the noise-level cue. Analytic proximal operators map it to
//! their own strength (`θ = λ/(2τ) = 1/(2β)`); the learned CMFormer receives
//! it as an extra constant input channel.

mod analytic;
mod cmformer;

pub use analytic::{soft_threshold, total_variation, tv_denoise, tv_objective, Identity, SoftThreshold, TvDenoiser};
pub use cmformer::{drop_path_rates, Cab, CmFormer, CmFormerConfig, CmFormerDenoiser, Cmb, Ffn, FfnVariant};

use crate::cassi::ShearedCube;
use crate::nn::ParamInfo;
use crate::Result;

/// A prior step on the sheared cube; the output has the input's extents.
pub trait Denoiser {
    fn apply(&self, v: &ShearedCube, beta: f64) -> Result<ShearedCube>;

    /// Learnable tensors in a stable order; empty for analytic priors.
    fn parameters(&self) -> Vec<ParamInfo> {
        Vec::new()
    }

    fn name(&self) -> &str;
}

impl<D: Denoiser + ?Sized> Denoiser for &D {
    fn apply(&self, v: &ShearedCube, beta: f64) -> Result<ShearedCube> {
        (**self).apply(v, beta)
    }

    fn parameters(&self) -> Vec<ParamInfo> {
        (**self).parameters()
    }

    fn name(&self) -> &str {
        (**self).name()
    }
}

impl<D: Denoiser + ?Sized> Denoiser for Box<D> {
    fn apply(&self, v: &ShearedCube, beta: f64) -> Result<ShearedCube> {
        (**self).apply(v, beta)
    }

    fn parameters(&self) -> Vec<ParamInfo> {
        (**self).parameters()
    }

    fn name(&self) -> &str {
        (**self).name()
    }
}

pub(crate) fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta.is_finite() {
        Ok(())
    } else {
        Err(crate::Error::Domain(format!("denoiser strength β must be positive and finite, got {beta}")))
    }
}
