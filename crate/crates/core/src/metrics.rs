//! Reconstruction quality: band-averaged PSNR and SSIM.

use ndarray::{Array2, ArrayView2, Axis, Zip};

use crate::cassi::HsiCube;
use crate::{Error, Result};

/// Returned for a band with zero error.
pub const PSNR_CAP_DB: f64 = 100.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn check_pair(op: &'static str, a: &HsiCube, b: &HsiCube) -> Result<()> {
    let (x, y) = (a.dim(), b.dim());
    for (axis, e, f) in [("H", x.0, y.0), ("W", x.1, y.1), ("bands", x.2, y.2)] {
        if e != f {
            return Err(Error::dim(op, axis, e, f));
        }
    }
    Ok(())
}

/// `10·log10(peak²/MSE)` for every band, capped at [`PSNR_CAP_DB`].
pub fn psnr_per_band(reference: &HsiCube, test: &HsiCube, peak: f64) -> Result<Vec<f64>> {
    check_pair("psnr", reference, test)?;
    if !(peak > 0.0) {
        return Err(Error::Domain(format!("PSNR peak must be positive, got {peak}")));
    }
    Ok(reference
        .data()
        .axis_iter(Axis(2))
        .zip(test.data().axis_iter(Axis(2)))
        .map(|(a, b)| {
            let mse = Zip::from(a).and(b).fold(0.0, |s, &x, &y| s + (x - y) * (x - y)) / a.len() as f64;
            if mse == 0.0 {
                PSNR_CAP_DB
            } else {
                (10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB)
            }
        })
        .collect())
}

/// Mean of [`psnr_per_band`].
pub fn psnr(reference: &HsiCube, test: &HsiCube, peak: f64) -> Result<f64> {
    let bands = psnr_per_band(reference, test, peak)?;
    Ok(bands.iter().sum::<f64>() / bands.len() as f64)
}

fn gaussian(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (0..size).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

// separable "valid" filtering
fn filter(img: &Array2<f64>, k: &[f64]) -> Array2<f64> {
    let (h, w) = img.dim();
    let n = k.len();
    let (oh, ow) = (h + 1 - n, w + 1 - n);
    let rows = Array2::from_shape_fn((h, ow), |(i, j)| (0..n).map(|t| k[t] * img[[i, j + t]]).sum::<f64>());
    Array2::from_shape_fn((oh, ow), |(i, j)| (0..n).map(|t| k[t] * rows[[i + t, j]]).sum::<f64>())
}

/// Mean SSIM over valid windows of one band (data range 1). Images smaller
/// than the window shrink it to the smaller extent.
pub fn ssim_band(a: ArrayView2<f64>, b: ArrayView2<f64>) -> f64 {
    let (h, w) = a.dim();
    let size = SSIM_WINDOW.min(h).min(w);
    let k = gaussian(size, SSIM_SIGMA);
    let (a, b) = (a.to_owned(), b.to_owned());
    let mu_a = filter(&a, &k);
    let mu_b = filter(&b, &k);
    let aa = filter(&(&a * &a), &k);
    let bb = filter(&(&b * &b), &k);
    let ab = filter(&(&a * &b), &k);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut total = 0.0;
    Zip::from(&mu_a).and(&mu_b).and(&aa).and(&bb).and(&ab).for_each(|&ma, &mb, &saa, &sbb, &sab| {
        let var_a = saa - ma * ma;
        let var_b = sbb - mb * mb;
        let cov = sab - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
    });
    total / mu_a.len() as f64
}

/// Single-scale SSIM (Gaussian window 11, σ = 1.5, K = (0.01, 0.03)) averaged
/// over bands.
pub fn ssim(reference: &HsiCube, test: &HsiCube) -> Result<f64> {
    check_pair("ssim", reference, test)?;
    let n = reference.bands();
    let total: f64 = (0..n).map(|b| ssim_band(reference.band(b), test.band(b))).sum();
    Ok(total / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use rand::Rng;

    fn random_cube(h: usize, w: usize, n: usize, seed: u64) -> HsiCube {
        let mut rng = crate::seeded_rng(seed);
        HsiCube::new(Array3::from_shape_simple_fn((h, w, n), || rng.random())).unwrap()
    }

    #[test]
    fn psnr_examples() {
        let a = random_cube(8, 8, 3, 1);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), PSNR_CAP_DB);
        let zero = HsiCube::zeros(8, 8, 3);
        let off = HsiCube::new(Array3::from_elem((8, 8, 3), 0.1)).unwrap();
        assert!((psnr(&zero, &off, 1.0).unwrap() - 20.0).abs() < 1e-9);
        assert!(matches!(psnr(&a, &HsiCube::zeros(8, 7, 3), 1.0), Err(Error::Dimension { .. })));
    }

    #[test]
    fn psnr_direct_formula_and_symmetry() {
        for seed in 0..5 {
            let (a, b) = (random_cube(6, 5, 2, seed), random_cube(6, 5, 2, seed + 100));
            let mut expected = 0.0;
            for band in 0..2 {
                let mut mse = 0.0;
                for i in 0..6 {
                    for j in 0..5 {
                        mse += (a.data()[[i, j, band]] - b.data()[[i, j, band]]).powi(2);
                    }
                }
                expected += 10.0 * (30.0 / mse).log10() / 2.0;
            }
            let got = psnr(&a, &b, 1.0).unwrap();
            assert!((got - expected).abs() < 1e-10);
            assert_eq!(got, psnr(&b, &a, 1.0).unwrap());
        }
    }

    #[test]
    fn psnr_decreases_with_noise() {
        let a = random_cube(16, 16, 2, 3);
        let mut rng = crate::seeded_rng(4);
        let noise = Array3::from_shape_simple_fn((16, 16, 2), || rng.random_range(-1.0..1.0));
        let ladder: Vec<f64> = [0.01, 0.02, 0.05, 0.1, 0.2]
            .iter()
            .map(|amp| psnr(&a, &HsiCube::new(a.data() + &(&noise * *amp)).unwrap(), 1.0).unwrap())
            .collect();
        assert!(ladder.windows(2).all(|w| w[0] > w[1]), "{ladder:?}");
    }

    #[test]
    fn ssim_identical_is_exactly_one() {
        let a = random_cube(20, 17, 3, 5);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn ssim_inverted_pattern_is_negative() {
        let a = HsiCube::new(Array3::from_shape_fn((16, 16, 1), |(i, j, _)| ((i + j) % 2) as f64)).unwrap();
        let inv = HsiCube::new(a.data().mapv(|v| 1.0 - v)).unwrap();
        assert!(ssim(&a, &inv).unwrap() < 0.0);
    }

    #[test]
    fn ssim_matches_direct_single_window() {
        // 11×11 band: exactly one valid window
        let (a, b) = (random_cube(11, 11, 1, 6), random_cube(11, 11, 1, 7));
        let c = 5.0;
        let mut wsum = 0.0;
        let mut weights = [[0.0; 11]; 11];
        for (i, row) in weights.iter_mut().enumerate() {
            for (j, w) in row.iter_mut().enumerate() {
                *w = (-((i as f64 - c).powi(2) + (j as f64 - c).powi(2)) / (2.0 * 1.5 * 1.5)).exp();
                wsum += *w;
            }
        }
        let (mut ma, mut mb) = (0.0, 0.0);
        for i in 0..11 {
            for j in 0..11 {
                let w = weights[i][j] / wsum;
                ma += w * a.data()[[i, j, 0]];
                mb += w * b.data()[[i, j, 0]];
            }
        }
        let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
        for i in 0..11 {
            for j in 0..11 {
                let w = weights[i][j] / wsum;
                let (x, y) = (a.data()[[i, j, 0]] - ma, b.data()[[i, j, 0]] - mb);
                va += w * x * x;
                vb += w * y * y;
                cov += w * x * y;
            }
        }
        let (c1, c2) = (1e-4, 9e-4);
        let expected = (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        let got = ssim(&a, &b).unwrap();
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }

    #[test]
    fn ssim_symmetric_and_bounded() {
        for seed in 0..10 {
            let (a, b) = (random_cube(13, 15, 2, seed), random_cube(13, 15, 2, seed + 50));
            let s = ssim(&a, &b).unwrap();
            assert_eq!(s, ssim(&b, &a).unwrap());
            assert!((-1.0..=1.0).contains(&s));
        }
        let small = random_cube(5, 7, 1, 9);
        assert_eq!(ssim(&small, &small).unwrap(), 1.0);
    }
}
