//! Files on disk: HSC1 tensors, checkpoints, manifests, PNG previews and a
//! procedural dataset generator.

mod container;
mod manifest;
mod synth;

pub use container::{load_container, save_container, Checkpoint, Container, Payload, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, TENSOR_MAGIC};
pub use manifest::{Dataset, DatasetManifest, EntryKind, ManifestEntry, Role, Scene};
pub use synth::{synth_cube, synth_dataset, SynthSpec};

use std::path::Path;

use crate::cassi::{CodedMask, HsiCube, Measurement, ShearedCube};
use crate::{Error, Result};

pub fn save_cube(path: impl AsRef<Path>, cube: &HsiCube) -> Result<()> {
    let (h, w, n) = cube.dim();
    let data: Vec<f64> = cube.data().iter().copied().collect();
    save_container(path, &Container::from_slice(&[h, w, n], &data)?)
}

pub fn load_cube(path: impl AsRef<Path>) -> Result<HsiCube> {
    HsiCube::new(load_container(path)?.to_array3()?)
}

pub fn save_sheared(path: impl AsRef<Path>, cube: &ShearedCube) -> Result<()> {
    let (h, w, n) = cube.dim();
    let data: Vec<f64> = cube.data().iter().copied().collect();
    save_container(path, &Container::from_slice(&[h, w, n], &data)?)
}

pub fn save_mask(path: impl AsRef<Path>, mask: &CodedMask) -> Result<()> {
    let (h, w) = mask.dim();
    let data: Vec<f64> = mask.base().iter().copied().collect();
    save_container(path, &Container::from_slice(&[h, w], &data)?)
}

pub fn load_mask(path: impl AsRef<Path>, shift_step: usize) -> Result<CodedMask> {
    CodedMask::new(load_container(path)?.to_array2()?, shift_step)
}

pub fn save_measurement(path: impl AsRef<Path>, y: &Measurement) -> Result<()> {
    let (h, w) = y.dim();
    let data: Vec<f64> = y.data().iter().copied().collect();
    save_container(path, &Container::from_slice(&[h, w], &data)?)
}

pub fn load_measurement(path: impl AsRef<Path>) -> Result<Measurement> {
    Ok(Measurement::new(load_container(path)?.to_array2()?))
}

/// Writes bands `rgb` as an 8-bit PNG, mapping `[0, 1]` linearly to
/// `[0, 255]` with clamping.
pub fn export_false_color(cube: &HsiCube, rgb: [usize; 3], path: impl AsRef<Path>) -> Result<()> {
    let n = cube.bands();
    if let Some(b) = rgb.iter().find(|&&b| b >= n) {
        return Err(Error::shape("export_false_color", format!("band {b} out of range for {n} bands")));
    }
    let img = false_color(cube, rgb);
    let path = path.as_ref();
    img.save_with_format(path, image::ImageFormat::Png).map_err(|e| Error::Image(format!("{}: {e}", path.display())))
}

pub fn false_color(cube: &HsiCube, rgb: [usize; 3]) -> image::RgbImage {
    let (h, w, _) = cube.dim();
    let to8 = |v: f64| if v.is_nan() { 0 } else { (v.clamp(0.0, 1.0) * 255.0).round() as u8 };
    image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let px = |b: usize| to8(cube.data()[[y as usize, x as usize, b]]);
        image::Rgb([px(rgb[0]), px(rgb[1]), px(rgb[2])])
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    #[test]
    fn false_color_mapping() {
        let mut data = Array3::zeros((2, 3, 4));
        data[[0, 0, 0]] = 1.0;
        data[[0, 1, 1]] = 1.5;
        data[[1, 2, 2]] = -0.2;
        data[[1, 1, 3]] = 0.5;
        let cube = HsiCube::new(data).unwrap();
        let img = false_color(&cube, [0, 1, 3]);
        assert_eq!(img.get_pixel(0, 0).0, [255, 0, 0]);
        assert_eq!(img.get_pixel(1, 0).0, [0, 255, 0]);
        assert_eq!(img.get_pixel(1, 1).0, [0, 0, 128]);
        assert_eq!(false_color(&HsiCube::zeros(3, 3, 3), [0, 1, 2]).pixels().map(|p| p.0).max(), Some([0, 0, 0]));
    }

    #[test]
    fn png_export_and_band_check() {
        let dir = tempfile::tempdir().unwrap();
        let cube = HsiCube::new(Array3::from_elem((4, 5, 3), 1.0)).unwrap();
        let path = dir.path().join("rgb.png");
        export_false_color(&cube, [2, 1, 0], &path).unwrap();
        let back = image::open(&path).unwrap().to_rgb8();
        assert_eq!(back.dimensions(), (5, 4));
        assert!(back.pixels().all(|p| p.0 == [255, 255, 255]));
        assert!(export_false_color(&cube, [0, 1, 3], dir.path().join("x.png")).is_err());
    }

    #[test]
    fn cube_and_mask_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = crate::seeded_rng(1);
        let cube = synth_cube(&mut rng, 6, 7, 3);
        save_cube(dir.path().join("c.hsc"), &cube).unwrap();
        assert_eq!(load_cube(dir.path().join("c.hsc")).unwrap().data(), cube.data());
        let mask = CodedMask::random_binary(6, 7, 2, 0.5, &mut rng);
        save_mask(dir.path().join("m.hsc"), &mask).unwrap();
        assert_eq!(load_mask(dir.path().join("m.hsc"), 2).unwrap(), mask);
        assert!(matches!(load_cube(dir.path().join("m.hsc")), Err(Error::Shape { .. })));
        std::fs::write(dir.path().join("empty.hsc"), b"").unwrap();
        assert!(matches!(load_cube(dir.path().join("empty.hsc")), Err(Error::Format { offset: 0, .. })));
    }
}
