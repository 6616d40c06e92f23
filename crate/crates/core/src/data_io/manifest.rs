//! TOML dataset manifests.
//!
//! ```toml
//! shift_step = 2
//! wavelengths = [450.0, 516.7, 583.3, 650.0]
//!
//! [[entries]]
//! path = "scene0.hsc"
//! role = "train"
//! kind = "cube"
//!
//! [[entries]]
//! path = "mask.hsc"
//! kind = "mask"        # no role: shared by every split
//! ```
//!
//! Paths are relative to the manifest's directory. Either one mask without
//! a role is given, or exactly one mask per split that has cubes.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{load_cube, load_mask};
use crate::cassi::{CodedMask, HsiCube};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Val,
    Test,
}

impl Role {
    pub const ALL: [Role; 3] = [Role::Train, Role::Val, Role::Test];
}

impl std::fmt::Display for Role {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Role::Train => "train",
            Role::Val => "val",
            Role::Test => "test",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntryKind {
    Cube,
    Mask,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<Role>,
    pub kind: EntryKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub shift_step: usize,
    pub wavelengths: Vec<f64>,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let m: Self = toml::from_str(text).map_err(|e| Error::Manifest {
            path: origin.to_path_buf(),
            msg: e.to_string(),
        })?;
        m.check_structure(origin)?;
        Ok(m)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serialises")
    }

    fn check_structure(&self, origin: &Path) -> Result<()> {
        let fail = |msg: String| Error::Manifest {
            path: origin.to_path_buf(),
            msg,
        };
        if self.wavelengths.is_empty() {
            return Err(fail("no wavelength labels".into()));
        }
        for e in &self.entries {
            if e.kind == EntryKind::Cube && e.role.is_none() {
                return Err(fail(format!("cube {} has no role", e.path.display())));
            }
        }
        let masks: Vec<_> = self.entries.iter().filter(|e| e.kind == EntryKind::Mask).collect();
        let global = masks.iter().filter(|e| e.role.is_none()).count();
        if global > 1 {
            return Err(fail(format!("{global} global masks; at most one is allowed")));
        }
        if global == 1 && masks.len() > 1 {
            return Err(fail("a global mask cannot be combined with per-split masks".into()));
        }
        for role in Role::ALL {
            let cubes = self.entries.iter().any(|e| e.kind == EntryKind::Cube && e.role == Some(role));
            let n = masks.iter().filter(|e| e.role == Some(role)).count();
            if n > 1 {
                return Err(fail(format!("{n} masks for split {role}")));
            }
            if cubes && global == 0 && n == 0 {
                return Err(fail(format!("split {role} has cubes but no mask")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Scene {
    /// File stem, e.g. `scene3`.
    pub name: String,
    pub role: Role,
    pub cube: HsiCube,
}

/// A manifest with every file loaded, in manifest order.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub root: PathBuf,
    pub scenes: Vec<Scene>,
    global_mask: Option<CodedMask>,
    split_masks: Vec<(Role, CodedMask)>,
}

impl Dataset {
    pub fn load(manifest_path: impl AsRef<Path>) -> Result<Self> {
        let path = manifest_path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Manifest {
            path: path.to_path_buf(),
            msg: format!("cannot read manifest: {e}"),
        })?;
        let manifest = DatasetManifest::parse(&text, path)?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let wrap = |entry: &ManifestEntry, e: Error| Error::Manifest {
            path: path.to_path_buf(),
            msg: format!("{} {}: {e}", if entry.kind == EntryKind::Mask { "mask" } else { "cube" }, entry.path.display()),
        };
        let bands = manifest.wavelengths.len();
        let mut scenes = Vec::new();
        let (mut global_mask, mut split_masks) = (None, Vec::new());
        for entry in &manifest.entries {
            let file = root.join(&entry.path);
            match entry.kind {
                EntryKind::Cube => {
                    let cube = load_cube(&file).map_err(|e| wrap(entry, e))?;
                    if cube.bands() != bands {
                        return Err(wrap(entry, Error::dim("manifest", "bands", bands, cube.bands())));
                    }
                    let cube = HsiCube::with_wavelengths(cube.into_data(), manifest.wavelengths.clone()).map_err(|e| wrap(entry, e))?;
                    let name = entry.path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                    scenes.push(Scene {
                        name,
                        role: entry.role.expect("checked"),
                        cube,
                    });
                }
                EntryKind::Mask => {
                    let mask = load_mask(&file, manifest.shift_step).map_err(|e| wrap(entry, e))?;
                    match entry.role {
                        None => global_mask = Some(mask),
                        Some(r) => split_masks.push((r, mask)),
                    }
                }
            }
        }
        let ds = Self {
            manifest,
            root,
            scenes,
            global_mask,
            split_masks,
        };
        for s in &ds.scenes {
            let (h, w, _) = s.cube.dim();
            let (mh, mw) = ds.mask_for(s.role)?.dim();
            if mh < h || mw < w {
                return Err(Error::Manifest {
                    path: path.to_path_buf(),
                    msg: format!("mask {mh}×{mw} is smaller than cube {} ({h}×{w})", s.name),
                });
            }
        }
        Ok(ds)
    }

    pub fn scenes(&self, role: Role) -> impl Iterator<Item = &Scene> {
        self.scenes.iter().filter(move |s| s.role == role)
    }

    pub fn mask_for(&self, role: Role) -> Result<&CodedMask> {
        self.split_masks
            .iter()
            .find(|(r, _)| *r == role)
            .map(|(_, m)| m)
            .or(self.global_mask.as_ref())
            .ok_or_else(|| Error::Config(format!("no mask for split {role}")))
    }

    pub fn shift_step(&self) -> usize {
        self.manifest.shift_step
    }

    pub fn bands(&self) -> usize {
        self.manifest.wavelengths.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<DatasetManifest> {
        DatasetManifest::parse(text, Path::new("m.toml"))
    }

    #[test]
    fn mask_rules() {
        let head = "shift_step = 2\nwavelengths = [450.0, 650.0]\n";
        let cube = "[[entries]]\npath = \"a.hsc\"\nrole = \"train\"\nkind = \"cube\"\n";
        let gmask = "[[entries]]\npath = \"m.hsc\"\nkind = \"mask\"\n";
        let tmask = "[[entries]]\npath = \"t.hsc\"\nrole = \"train\"\nkind = \"mask\"\n";
        assert!(parse(&format!("{head}{cube}{gmask}")).is_ok());
        assert!(parse(&format!("{head}{cube}{tmask}")).is_ok());
        for bad in [format!("{head}{cube}"), format!("{head}{cube}{gmask}{tmask}"), format!("{head}{cube}{tmask}{tmask}")] {
            let err = parse(&bad).unwrap_err();
            assert!(matches!(err, Error::Manifest { .. }));
            assert_eq!(err.exit_code(), 2);
        }
        assert!(parse(&format!("{head}{cube}{gmask}bogus = 1\n")).is_err());
    }

    #[test]
    fn manifest_round_trips_through_toml() {
        let m = DatasetManifest {
            shift_step: 1,
            wavelengths: vec![500.0, 600.0],
            entries: vec![
                ManifestEntry { path: "x.hsc".into(), role: Some(Role::Val), kind: EntryKind::Cube },
                ManifestEntry { path: "m.hsc".into(), role: None, kind: EntryKind::Mask },
            ],
        };
        assert_eq!(parse(&m.to_toml()).unwrap(), m);
    }
}
