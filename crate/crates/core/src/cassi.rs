//! Single-disperser CASSI forward model.
//!
//! A cube `F` (H×W×Nλ) is modulated by a coded mask `M*`, sheared by `d`
//! pixels per band along the width and integrated over bands onto an
//! `H×(W+d(Nλ−1))` detector. In vectorised form `y = Φx + n` where `x` is
//! the sheared cube and `Φ = [diag(M₁), …, diag(M_Nλ)]` with `Mₙ` the mask
//! shifted like band `n`. Everything here is matrix-free.

use ndarray::{s, Array2, Array3, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Poisson};

use crate::nn::{Real, Tensor};
use crate::{Error, Result};

/// First and last nominal band centre (nm) for the default labels.
pub const DEFAULT_WAVELENGTH_RANGE: (f64, f64) = (450.0, 650.0);

/// `n` evenly spaced labels across [`DEFAULT_WAVELENGTH_RANGE`].
pub fn default_wavelengths(n: usize) -> Vec<f64> {
    let (lo, hi) = DEFAULT_WAVELENGTH_RANGE;
    match n {
        0 => vec![],
        1 => vec![(lo + hi) / 2.0],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Width of the detector for a `width`-column scene with `bands` bands.
pub fn sheared_width(width: usize, bands: usize, d: usize) -> usize {
    width + d * bands.saturating_sub(1)
}

/// Hyperspectral cube `H×W×Nλ`.
#[derive(Clone, Debug, PartialEq)]
pub struct HsiCube {
    data: Array3<f64>,
    wavelengths: Vec<f64>,
}

impl HsiCube {
    pub fn new(data: Array3<f64>) -> Result<Self> {
        let n = data.dim().2;
        Self::with_wavelengths(data, default_wavelengths(n))
    }

    pub fn with_wavelengths(data: Array3<f64>, wavelengths: Vec<f64>) -> Result<Self> {
        let (h, w, n) = data.dim();
        if h == 0 || w == 0 || n == 0 {
            return Err(Error::shape("HsiCube", format!("extents must be positive, got {h}×{w}×{n}")));
        }
        if wavelengths.len() != n {
            return Err(Error::dim("HsiCube", "wavelengths", n, wavelengths.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("cube contains non-finite values".into()));
        }
        Ok(Self { data, wavelengths })
    }

    pub fn zeros(h: usize, w: usize, bands: usize) -> Self {
        Self::new(Array3::zeros((h, w, bands))).expect("positive extents")
    }

    /// `(H, W, Nλ)`.
    pub fn dim(&self) -> (usize, usize, usize) {
        self.data.dim()
    }

    pub fn bands(&self) -> usize {
        self.data.dim().2
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array3<f64> {
        self.data
    }

    pub fn wavelengths(&self) -> &[f64] {
        &self.wavelengths
    }

    pub fn band(&self, n: usize) -> ArrayView2<'_, f64> {
        self.data.index_axis(Axis(2), n)
    }

    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Result<Self> {
        let (ch, cw, _) = self.dim();
        if top + h > ch || left + w > cw {
            return Err(Error::shape("crop", format!("window {h}×{w} at ({top},{left}) exceeds {ch}×{cw}")));
        }
        Self::with_wavelengths(
            self.data.slice(s![top..top + h, left..left + w, ..]).to_owned(),
            self.wavelengths.clone(),
        )
    }

    /// `1×H×W×Nλ` tensor.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        let (h, w, n) = self.dim();
        let data = self.data.iter().map(|&v| T::lit(v)).collect();
        Tensor::from_vec(vec![1, h, w, n], data).expect("consistent extents")
    }
}

/// Dispersed cube `H×(W+d(Nλ−1))×Nλ`; band `n` occupies columns
/// `d·n..d·n+W`.
#[derive(Clone, Debug, PartialEq)]
pub struct ShearedCube {
    data: Array3<f64>,
    shift_step: usize,
}

impl ShearedCube {
    pub fn new(data: Array3<f64>, shift_step: usize) -> Result<Self> {
        let (h, ws, n) = data.dim();
        if h == 0 || n == 0 || ws < 1 + shift_step * (n - 1) {
            return Err(Error::shape(
                "ShearedCube",
                format!("{h}×{ws}×{n} cannot hold {n} bands sheared by {shift_step}"),
            ));
        }
        Ok(Self { data, shift_step })
    }

    pub fn zeros(h: usize, width: usize, bands: usize, d: usize) -> Self {
        Self {
            data: Array3::zeros((h, sheared_width(width, bands, d), bands)),
            shift_step: d,
        }
    }

    pub fn dim(&self) -> (usize, usize, usize) {
        self.data.dim()
    }

    pub fn shift_step(&self) -> usize {
        self.shift_step
    }

    /// Width of the unsheared scene.
    pub fn width(&self) -> usize {
        let (_, ws, n) = self.dim();
        ws - self.shift_step * (n - 1)
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Array3<f64> {
        &mut self.data
    }

    pub fn into_data(self) -> Array3<f64> {
        self.data
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            data: self.data.mapv(f),
            shift_step: self.shift_step,
        }
    }

    pub(crate) fn with_data(&self, data: Array3<f64>) -> Self {
        debug_assert_eq!(data.dim(), self.data.dim());
        Self {
            data,
            shift_step: self.shift_step,
        }
    }

    pub fn check_same_extents(&self, other: &Self, op: &'static str) -> Result<()> {
        let (a, b) = (self.dim(), other.dim());
        for (axis, x, y) in [("H", a.0, b.0), ("W", a.1, b.1), ("bands", a.2, b.2)] {
            if x != y {
                return Err(Error::dim(op, axis, x, y));
            }
        }
        Ok(())
    }

    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        let (h, w, n) = self.dim();
        let data = self.data.iter().map(|&v| T::lit(v)).collect();
        Tensor::from_vec(vec![1, h, w, n], data).expect("consistent extents")
    }

    /// Reads sample `index` of an `N×H×W×C` tensor.
    pub fn from_tensor<T: Real>(t: &Tensor<T>, index: usize, shift_step: usize) -> Result<Self> {
        let [n, h, w, c] = t.dims4("ShearedCube::from_tensor")?;
        if index >= n {
            return Err(Error::dim("ShearedCube::from_tensor", "N", index + 1, n));
        }
        let len = h * w * c;
        let vals: Vec<f64> = t.data()[index * len..(index + 1) * len].iter().map(|v| v.to_f64_lossy()).collect();
        Self::new(Array3::from_shape_vec((h, w, c), vals).expect("len"), shift_step)
    }
}

/// Coded aperture `M*` with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CodedMask {
    base: Array2<f64>,
    shift_step: usize,
}

impl CodedMask {
    pub fn new(base: Array2<f64>, shift_step: usize) -> Result<Self> {
        let (h, w) = base.dim();
        if h == 0 || w == 0 {
            return Err(Error::shape("CodedMask", "extents must be positive"));
        }
        if let Some(v) = base.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Domain(format!("mask value {v} outside [0, 1]")));
        }
        Ok(Self { base, shift_step })
    }

    /// Bernoulli(`p`) binary mask.
    pub fn random_binary<R: Rng + ?Sized>(h: usize, w: usize, shift_step: usize, p: f64, rng: &mut R) -> Self {
        let base = Array2::from_shape_simple_fn((h, w), || if rng.random::<f64>() < p { 1.0 } else { 0.0 });
        Self { base, shift_step }
    }

    pub fn base(&self) -> &Array2<f64> {
        &self.base
    }

    pub fn shift_step(&self) -> usize {
        self.shift_step
    }

    pub fn dim(&self) -> (usize, usize) {
        self.base.dim()
    }

    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Result<Self> {
        let (mh, mw) = self.dim();
        if top + h > mh || left + w > mw {
            return Err(Error::shape("mask crop", format!("window {h}×{w} at ({top},{left}) exceeds {mh}×{mw}")));
        }
        Self::new(self.base.slice(s![top..top + h, left..left + w]).to_owned(), self.shift_step)
    }
}

/// Matrix-free `Φ` with the diagonal `δ` of `ΦΦᵀ`.
#[derive(Clone, Debug, PartialEq)]
pub struct SensingOperator {
    shifted_mask: Array3<f64>,
    delta: Array2<f64>,
    shift_step: usize,
    width: usize,
}

impl SensingOperator {
    pub fn new(mask: &CodedMask, bands: usize) -> Result<Self> {
        if bands == 0 {
            return Err(Error::shape("SensingOperator", "at least one band is required"));
        }
        let (h, w) = mask.dim();
        let d = mask.shift_step;
        let ws = sheared_width(w, bands, d);
        let mut shifted = Array3::zeros((h, ws, bands));
        for n in 0..bands {
            shifted.slice_mut(s![.., d * n..d * n + w, n]).assign(&mask.base);
        }
        let delta = shifted.map_axis(Axis(2), |m| m.iter().map(|v| v * v).sum());
        Ok(Self {
            shifted_mask: shifted,
            delta,
            shift_step: d,
            width: w,
        })
    }

    pub fn shifted_mask(&self) -> &Array3<f64> {
        &self.shifted_mask
    }

    /// `δ(p) = Σₙ Mₙ(p)²`, the diagonal of `ΦΦᵀ`.
    pub fn delta(&self) -> &Array2<f64> {
        &self.delta
    }

    pub fn shift_step(&self) -> usize {
        self.shift_step
    }

    /// Unsheared scene width `W`.
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bands(&self) -> usize {
        self.shifted_mask.dim().2
    }

    /// `(H, W + d(Nλ−1))`.
    pub fn measurement_dim(&self) -> (usize, usize) {
        self.delta.dim()
    }

    /// `(H, W + d(Nλ−1), Nλ)`.
    pub fn sheared_dim(&self) -> (usize, usize, usize) {
        self.shifted_mask.dim()
    }

    pub(crate) fn check_sheared(&self, x: &ShearedCube, op: &'static str) -> Result<()> {
        let (h, ws, n) = self.sheared_dim();
        let (xh, xw, xn) = x.dim();
        for (axis, e, f) in [("H", h, xh), ("W", ws, xw), ("bands", n, xn)] {
            if e != f {
                return Err(Error::dim(op, axis, e, f));
            }
        }
        Ok(())
    }

    pub(crate) fn check_measurement(&self, y: &Measurement, op: &'static str) -> Result<()> {
        let (h, ws) = self.measurement_dim();
        let (yh, yw) = y.data.dim();
        if h != yh {
            return Err(Error::dim(op, "H", h, yh));
        }
        if ws != yw {
            return Err(Error::dim(op, "W", ws, yw));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum NoiseSpec {
    /// Poisson photon noise at a detector depth of `bits`.
    Shot { bits: u32 },
}

/// Detector image `H×(W+d(Nλ−1))`.
#[derive(Clone, Debug, PartialEq)]
pub struct Measurement {
    data: Array2<f64>,
    noise: Option<NoiseSpec>,
}

impl Measurement {
    pub fn new(data: Array2<f64>) -> Self {
        Self { data, noise: None }
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array2<f64> {
        self.data
    }

    pub fn noise(&self) -> Option<NoiseSpec> {
        self.noise
    }

    pub fn dim(&self) -> (usize, usize) {
        self.data.dim()
    }

    /// `1×H×W'×1` tensor.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        let (h, w) = self.dim();
        let data = self.data.iter().map(|&v| T::lit(v)).collect();
        Tensor::from_vec(vec![1, h, w, 1], data).expect("consistent extents")
    }
}

/// Shears `cube` by `d` columns per band.
pub fn shift_cube(cube: &HsiCube, d: usize) -> ShearedCube {
    let (h, w, n) = cube.dim();
    let mut out = ShearedCube::zeros(h, w, n, d);
    for b in 0..n {
        out.data.slice_mut(s![.., d * b..d * b + w, b]).assign(&cube.band(b));
    }
    out
}

/// Inverse of [`shift_cube`] (default wavelength labels).
pub fn unshift_cube(sheared: &ShearedCube) -> HsiCube {
    let (h, _, n) = sheared.dim();
    let (d, w) = (sheared.shift_step, sheared.width());
    let mut out = Array3::zeros((h, w, n));
    for b in 0..n {
        out.slice_mut(s![.., .., b]).assign(&sheared.data.slice(s![.., d * b..d * b + w, b]));
    }
    HsiCube::new(out).expect("positive extents")
}

/// `F′(:,:,n) = F(:,:,n) ⊙ M*`.
pub fn modulate(cube: &HsiCube, mask: &CodedMask) -> Result<HsiCube> {
    let (h, w, _) = cube.dim();
    let (mh, mw) = mask.dim();
    if (h, w) != (mh, mw) {
        return Err(if h != mh { Error::dim("modulate", "H", h, mh) } else { Error::dim("modulate", "W", w, mw) });
    }
    let mut data = cube.data.clone();
    for mut band in data.axis_iter_mut(Axis(2)) {
        band *= &mask.base;
    }
    HsiCube::with_wavelengths(data, cube.wavelengths.clone())
}

/// `Y(p) = Σₙ F″(p, n)`.
pub fn integrate(sheared: &ShearedCube) -> Measurement {
    Measurement::new(sheared.data.sum_axis(Axis(2)))
}

/// Noiseless `y = Φx` for the cube seen through `mask`.
pub fn forward(cube: &HsiCube, mask: &CodedMask) -> Result<Measurement> {
    let modulated = modulate(cube, mask)?;
    Ok(integrate(&shift_cube(&modulated, mask.shift_step)))
}

pub fn forward_with_noise<R: Rng + ?Sized>(cube: &HsiCube, mask: &CodedMask, noise: NoiseSpec, rng: &mut R) -> Result<Measurement> {
    let clean = forward(cube, mask)?;
    match noise {
        NoiseSpec::Shot { bits } => add_shot_noise(&clean, bits, rng),
    }
}

/// `Φx = Σₙ Mₙ ⊙ xₙ`.
pub fn apply_phi(x: &ShearedCube, op: &SensingOperator) -> Result<Measurement> {
    op.check_sheared(x, "apply_phi")?;
    let prod = &x.data * &op.shifted_mask;
    Ok(Measurement::new(prod.sum_axis(Axis(2))))
}

/// `(Φᵀy)ₙ = Mₙ ⊙ y`.
pub fn apply_phi_t(y: &Measurement, op: &SensingOperator) -> Result<ShearedCube> {
    op.check_measurement(y, "apply_phi_t")?;
    let mut out = op.shifted_mask.clone();
    for mut band in out.axis_iter_mut(Axis(2)) {
        band *= &y.data;
    }
    Ok(ShearedCube {
        data: out,
        shift_step: op.shift_step,
    })
}

/// Diagonal of `ΦΦᵀ`.
pub fn phi_diag(op: &SensingOperator) -> Array2<f64> {
    op.delta.clone()
}

/// Scales `y` so its peak maps to `2^bits − 1` counts, draws a Poisson count
/// per pixel and scales back.
pub fn add_shot_noise<R: Rng + ?Sized>(y: &Measurement, bits: u32, rng: &mut R) -> Result<Measurement> {
    if bits == 0 || bits > 52 {
        return Err(Error::Config(format!("shot-noise depth must be 1..=52 bits, got {bits}")));
    }
    if let Some(v) = y.data.iter().find(|v| **v < 0.0 || !v.is_finite()) {
        return Err(Error::Domain(format!("shot noise needs a nonnegative measurement, found {v}")));
    }
    let peak = y.data.iter().fold(0.0f64, |m, &v| m.max(v));
    let mut out = Array2::zeros(y.data.dim());
    if peak > 0.0 {
        let scale = ((1u64 << bits) - 1) as f64 / peak;
        Zip::from(&mut out).and(&y.data).for_each(|o, &v| {
            let lambda = v * scale;
            *o = if lambda > 0.0 {
                Poisson::new(lambda).expect("positive rate").sample(rng) / scale
            } else {
                0.0
            };
        });
    }
    Ok(Measurement {
        data: out,
        noise: Some(NoiseSpec::Shot { bits }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array};

    fn example_cube() -> HsiCube {
        // H=1, W=2, Nλ=2 with band0=[1,2], band1=[3,4]
        let mut data = Array3::zeros((1, 2, 2));
        data[[0, 0, 0]] = 1.0;
        data[[0, 1, 0]] = 2.0;
        data[[0, 0, 1]] = 3.0;
        data[[0, 1, 1]] = 4.0;
        HsiCube::new(data).unwrap()
    }

    #[test]
    fn shift_example() {
        let s = shift_cube(&example_cube(), 1);
        assert_eq!(s.dim(), (1, 3, 2));
        assert_eq!(s.data().slice(s![0, .., 0]).to_vec(), vec![1.0, 2.0, 0.0]);
        assert_eq!(s.data().slice(s![0, .., 1]).to_vec(), vec![0.0, 3.0, 4.0]);
        assert_eq!(unshift_cube(&s), example_cube());
    }

    #[test]
    fn shift_by_zero_single_band_is_copy() {
        let cube = HsiCube::new(Array::from_shape_fn((3, 4, 1), |(i, j, _)| (i * 4 + j) as f64)).unwrap();
        let s = shift_cube(&cube, 0);
        assert_eq!(s.data(), cube.data());
    }

    #[test]
    fn integrate_example_with_unit_mask() {
        let mask = CodedMask::new(Array2::ones((1, 2)), 1).unwrap();
        let y = forward(&example_cube(), &mask).unwrap();
        assert_eq!(y.data().row(0).to_vec(), vec![1.0, 5.0, 4.0]);
    }

    #[test]
    fn modulate_identities() {
        let cube = example_cube();
        let ones = CodedMask::new(Array2::ones((1, 2)), 1).unwrap();
        assert_eq!(modulate(&cube, &ones).unwrap(), cube);
        let zeros = CodedMask::new(Array2::zeros((1, 2)), 1).unwrap();
        assert!(modulate(&cube, &zeros).unwrap().data().iter().all(|&v| v == 0.0));
        let wrong = CodedMask::new(Array2::ones((2, 2)), 1).unwrap();
        assert!(matches!(modulate(&cube, &wrong), Err(Error::Dimension { .. })));
    }

    #[test]
    fn delta_example() {
        let (m1, m2) = (0.3, 0.8);
        let mask = CodedMask::new(array![[m1, m2]], 1).unwrap();
        let op = SensingOperator::new(&mask, 2).unwrap();
        let d = phi_diag(&op);
        assert_eq!(d.row(0).to_vec(), vec![m1 * m1, m2 * m2 + m1 * m1, m2 * m2]);
    }

    #[test]
    fn binary_single_band_delta_equals_mask() {
        let mut rng = crate::seeded_rng(5);
        let mask = CodedMask::random_binary(6, 5, 2, 0.5, &mut rng);
        let op = SensingOperator::new(&mask, 1).unwrap();
        assert_eq!(&phi_diag(&op), mask.base());
    }

    #[test]
    fn unit_mask_single_band_phi_is_identity() {
        let mask = CodedMask::new(Array2::ones((3, 3)), 1).unwrap();
        let op = SensingOperator::new(&mask, 1).unwrap();
        let x = ShearedCube::new(Array::from_shape_fn((3, 3, 1), |(i, j, _)| (i + 2 * j) as f64), 1).unwrap();
        let y = apply_phi(&x, &op).unwrap();
        assert_eq!(y.data(), &x.data().index_axis(Axis(2), 0));
        assert_eq!(apply_phi_t(&y, &op).unwrap(), x);
    }

    #[test]
    fn mask_values_validated() {
        assert!(matches!(CodedMask::new(array![[0.5, 1.5]], 1), Err(Error::Domain(_))));
    }

    #[test]
    fn zero_cube_measures_zero_even_with_noise() {
        let mut rng = crate::seeded_rng(2);
        let mask = CodedMask::random_binary(4, 4, 1, 0.5, &mut rng);
        let y = forward_with_noise(&HsiCube::zeros(4, 4, 3), &mask, NoiseSpec::Shot { bits: 11 }, &mut rng).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        assert_eq!(y.noise(), Some(NoiseSpec::Shot { bits: 11 }));
    }

    #[test]
    fn shot_noise_rejects_negative() {
        let y = Measurement::new(array![[0.5, -0.1]]);
        let mut rng = crate::seeded_rng(0);
        assert!(matches!(add_shot_noise(&y, 11, &mut rng), Err(Error::Domain(_))));
    }

    #[test]
    fn shot_noise_moments() {
        // pixel 1 is the peak (2047 counts); pixel 0 has a mean of ~204.7 counts
        let y = Measurement::new(array![[0.1, 1.0]]);
        let scale = 2047.0;
        let mut rng = crate::seeded_rng(99);
        let draws = 10_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..draws {
            let noisy = add_shot_noise(&y, 11, &mut rng).unwrap();
            let v = noisy.data()[[0, 0]];
            s += v;
            s2 += (v * scale) * (v * scale);
        }
        let mean = s / draws as f64;
        assert!((mean - 0.1).abs() / 0.1 < 0.01, "mean {mean}");
        let mu = mean * scale;
        let var = s2 / draws as f64 - mu * mu;
        let expected = 0.1 * scale;
        assert!((var - expected).abs() / expected < 0.05, "variance {var} vs {expected}");
    }
}
