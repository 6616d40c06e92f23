use ndarray::{s, ArrayView3};
use rand::Rng;

use crate::cassi::HsiCube;
use crate::{Error, Result};

/// Element of the dihedral group of the square: an optional horizontal flip
/// followed by `rot` quarter turns counter-clockwise.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Dihedral {
    pub flip: bool,
    pub rot: u8,
}

impl Dihedral {
    pub const IDENTITY: Dihedral = Dihedral { flip: false, rot: 0 };

    pub fn all() -> impl Iterator<Item = Dihedral> {
        (0..8u8).map(|k| Dihedral { flip: k >= 4, rot: k % 4 })
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let k: u8 = rng.random_range(0..8);
        Dihedral { flip: k >= 4, rot: k % 4 }
    }

    pub fn apply(self, cube: &HsiCube) -> Result<HsiCube> {
        let (h, w, _) = cube.dim();
        if self.rot % 2 == 1 && h != w {
            return Err(Error::Config(format!("quarter-turn rotation needs a square cube, got {h}×{w}")));
        }
        let mut v: ArrayView3<f64> = cube.data().view();
        if self.flip {
            v = v.slice_move(s![.., ..;-1, ..]);
        }
        for _ in 0..self.rot {
            // counter-clockwise: out[i, j] = in[j, w-1-i]
            v.swap_axes(0, 1);
            v = v.slice_move(s![..;-1, .., ..]);
        }
        HsiCube::with_wavelengths(v.as_standard_layout().to_owned(), cube.wavelengths().to_vec())
    }
}

/// One of the 8 dihedral transforms of a square cube, drawn uniformly and
/// applied to every band alike.
pub fn augment<R: Rng + ?Sized>(cube: &HsiCube, rng: &mut R) -> Result<HsiCube> {
    let (h, w, _) = cube.dim();
    if h != w {
        return Err(Error::Config(format!("augmentation needs a square crop, got {h}×{w}")));
    }
    Dihedral::random(rng).apply(cube)
}
