use ndarray::{Array2, ArrayView2, Axis, Zip};

use super::{check_beta, Denoiser};
use crate::cassi::ShearedCube;
use crate::{Error, Result};

/// Passes its input through; useful for limit checks of the solvers.
#[derive(Clone, Copy, Debug, Default)]
pub struct Identity;

impl Denoiser for Identity {
    fn apply(&self, v: &ShearedCube, _beta: f64) -> Result<ShearedCube> {
        Ok(v.clone())
    }

    fn name(&self) -> &str {
        "identity"
    }
}

/// `sign(v)·max(|v| − θ, 0)`.
pub fn soft_threshold(v: &ShearedCube, theta: f64) -> Result<ShearedCube> {
    if !(theta >= 0.0) {
        return Err(Error::Domain(format!("threshold must be nonnegative, got {theta}")));
    }
    Ok(v.map(|x| x.signum() * (x.abs() - theta).max(0.0)))
}

/// Prox of the ℓ1 norm: minimises `τ‖z−v‖² + λ‖z‖₁` with `β = τ/λ`.
#[derive(Clone, Copy, Debug, Default)]
pub struct SoftThreshold;

impl SoftThreshold {
    pub fn theta(beta: f64) -> f64 {
        0.5 / beta
    }
}

impl Denoiser for SoftThreshold {
    fn apply(&self, v: &ShearedCube, beta: f64) -> Result<ShearedCube> {
        check_beta(beta)?;
        soft_threshold(v, Self::theta(beta))
    }

    fn name(&self) -> &str {
        "soft-threshold"
    }
}

/// Isotropic total-variation prox solved with Chambolle's dual projection,
/// band by band. The weight is `1/(2β)`.
#[derive(Clone, Copy, Debug)]
pub struct TvDenoiser {
    pub iters: usize,
}

impl Default for TvDenoiser {
    fn default() -> Self {
        Self { iters: 50 }
    }
}

impl Denoiser for TvDenoiser {
    fn apply(&self, v: &ShearedCube, beta: f64) -> Result<ShearedCube> {
        check_beta(beta)?;
        tv_denoise(v, 0.5 / beta, self.iters)
    }

    fn name(&self) -> &str {
        "tv"
    }
}

fn grad(u: ArrayView2<f64>) -> (Array2<f64>, Array2<f64>) {
    let (h, w) = u.dim();
    let mut gx = Array2::zeros((h, w));
    let mut gy = Array2::zeros((h, w));
    for i in 0..h {
        for j in 0..w {
            if i + 1 < h {
                gy[[i, j]] = u[[i + 1, j]] - u[[i, j]];
            }
            if j + 1 < w {
                gx[[i, j]] = u[[i, j + 1]] - u[[i, j]];
            }
        }
    }
    (gx, gy)
}

// negative adjoint of `grad`
fn div(px: &Array2<f64>, py: &Array2<f64>) -> Array2<f64> {
    let (h, w) = px.dim();
    Array2::from_shape_fn((h, w), |(i, j)| {
        let mut d = 0.0;
        if j + 1 < w {
            d += px[[i, j]];
        }
        if j > 0 {
            d -= px[[i, j - 1]];
        }
        if i + 1 < h {
            d += py[[i, j]];
        }
        if i > 0 {
            d -= py[[i - 1, j]];
        }
        d
    })
}

fn tv_band(v: ArrayView2<f64>, weight: f64, iters: usize) -> Array2<f64> {
    const STEP: f64 = 0.25;
    let (h, w) = v.dim();
    let mut px = Array2::zeros((h, w));
    let mut py = Array2::zeros((h, w));
    for _ in 0..iters {
        let z = &v - &(div(&px, &py) * weight);
        let (gx, gy) = grad(z.view());
        Zip::from(&mut px).and(&mut py).and(&gx).and(&gy).for_each(|px, py, &gx, &gy| {
            let norm = 1.0 + STEP / weight * (gx * gx + gy * gy).sqrt();
            *px = (*px - STEP / weight * gx) / norm;
            *py = (*py - STEP / weight * gy) / norm;
        });
    }
    &v - &(div(&px, &py) * weight)
}

/// Approximately minimises `½‖z − v‖² + weight·TV(z)` for each band.
pub fn tv_denoise(v: &ShearedCube, weight: f64, iters: usize) -> Result<ShearedCube> {
    if !(weight >= 0.0) {
        return Err(Error::Domain(format!("TV weight must be nonnegative, got {weight}")));
    }
    if iters == 0 {
        return Err(Error::Config("TV denoising needs at least one iteration".into()));
    }
    if weight == 0.0 {
        return Ok(v.clone());
    }
    let mut out = v.data().clone();
    for (mut dst, src) in out.axis_iter_mut(Axis(2)).zip(v.data().axis_iter(Axis(2))) {
        dst.assign(&tv_band(src, weight, iters));
    }
    Ok(v.with_data(out))
}

/// Isotropic total variation summed over bands.
pub fn total_variation(z: &ShearedCube) -> f64 {
    z.data()
        .axis_iter(Axis(2))
        .map(|band| {
            let (gx, gy) = grad(band);
            Zip::from(&gx).and(&gy).fold(0.0, |acc, &a, &b| acc + (a * a + b * b).sqrt())
        })
        .sum()
}

/// `½‖z − v‖² + weight·TV(z)`.
pub fn tv_objective(v: &ShearedCube, z: &ShearedCube, weight: f64) -> f64 {
    let fid: f64 = Zip::from(v.data()).and(z.data()).fold(0.0, |acc, &a, &b| acc + (a - b) * (a - b));
    0.5 * fid + weight * total_variation(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use rand::Rng;

    fn cube(vals: &[f64]) -> ShearedCube {
        ShearedCube::new(Array3::from_shape_vec((1, vals.len(), 1), vals.to_vec()).unwrap(), 0).unwrap()
    }

    #[test]
    fn soft_threshold_examples() {
        let v = cube(&[0.5, -0.1, -0.7]);
        assert_eq!(soft_threshold(&v, 0.0).unwrap(), v);
        let out = soft_threshold(&v, 0.2).unwrap();
        let got = out.data().iter().copied().collect::<Vec<_>>();
        assert!((got[0] - 0.3).abs() < 1e-15);
        assert_eq!(got[1], 0.0);
        assert!((got[2] + 0.5).abs() < 1e-15);
    }

    #[test]
    fn soft_threshold_matches_grid_search() {
        let mut rng = crate::seeded_rng(3);
        for _ in 0..20 {
            let v: f64 = rng.random_range(-2.0..2.0);
            let (tau, lam): (f64, f64) = (rng.random_range(0.2..3.0), rng.random_range(0.0..2.0));
            let obj = |z: f64| tau * (z - v).powi(2) + lam * z.abs();
            let prox = SoftThreshold.apply(&cube(&[v]), tau / lam.max(1e-300)).unwrap().data()[[0, 0, 0]];
            let best = (-40_000..=40_000).map(|i| i as f64 * 1e-4).fold(f64::INFINITY, |m, z| m.min(obj(z)));
            assert!(obj(prox) <= best + 1e-9, "v={v} prox={prox}");
        }
    }

    #[test]
    fn soft_threshold_rejects_bad_beta() {
        assert!(SoftThreshold.apply(&cube(&[1.0]), 0.0).is_err());
        assert!(soft_threshold(&cube(&[1.0]), -1.0).is_err());
    }

    #[test]
    fn tv_identities() {
        let mut rng = crate::seeded_rng(4);
        let v = ShearedCube::new(Array3::from_shape_simple_fn((5, 7, 2), || rng.random()), 1).unwrap();
        assert_eq!(tv_denoise(&v, 0.0, 10).unwrap(), v);
        let c = ShearedCube::new(Array3::from_elem((5, 7, 2), 0.3), 1).unwrap();
        let out = tv_denoise(&c, 0.5, 30).unwrap();
        assert!(out.data().iter().all(|&x| (x - 0.3).abs() < 1e-14));
        assert!(tv_denoise(&v, 0.1, 0).is_err());
    }

    #[test]
    fn tv_lowers_objective() {
        let mut rng = crate::seeded_rng(8);
        let v = ShearedCube::new(Array3::from_shape_simple_fn((12, 14, 2), || rng.random()), 1).unwrap();
        for weight in [0.05, 0.2, 1.0] {
            let z = tv_denoise(&v, weight, 100).unwrap();
            assert!(tv_objective(&v, &z, weight) <= tv_objective(&v, &v, weight));
            assert!(total_variation(&z) < total_variation(&v));
        }
    }

    #[test]
    fn div_is_negative_adjoint_of_grad() {
        let mut rng = crate::seeded_rng(1);
        let u = Array2::from_shape_simple_fn((4, 6), || rng.random::<f64>());
        let px = Array2::from_shape_simple_fn((4, 6), || rng.random::<f64>());
        let py = Array2::from_shape_simple_fn((4, 6), || rng.random::<f64>());
        let (gx, gy) = grad(u.view());
        let lhs = (&gx * &px).sum() + (&gy * &py).sum();
        let rhs = -(&u * &div(&px, &py)).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
