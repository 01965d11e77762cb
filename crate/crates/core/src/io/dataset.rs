//! Dataset directories: a JSON manifest listing image files in code order.

use super::image_io::{read_image, write_image};
use crate::error::{DataError, Error, Result};
use crate::image::{Image, ImageSet};
use crate::scenes::Scene;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const MANIFEST_VERSION: u32 = 1;
pub const TRAIN_MANIFEST: &str = "manifest.json";
pub const HELDOUT_MANIFEST: &str = "heldout.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative to the manifest's directory.
    pub path: String,
    pub view_tag: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub width: usize,
    pub height: usize,
    pub images: Vec<ManifestEntry>,
}

/// Where a held-out frame sits between two trained codes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterpTag {
    pub i: usize,
    pub j: usize,
    pub t: f64,
}

impl InterpTag {
    /// Parses `interp:<i>:<j>:<t>`.
    pub fn parse(tag: &str) -> Option<Self> {
        let mut parts = tag.strip_prefix("interp:")?.split(':');
        let i = parts.next()?.parse().ok()?;
        let j = parts.next()?.parse().ok()?;
        let t = parts.next()?.parse().ok()?;
        parts.next().is_none().then_some(Self { i, j, t })
    }

    pub fn format(&self) -> String {
        format!("interp:{}:{}:{}", self.i, self.j, self.t)
    }
}

fn manifest_err(path: &Path, reason: impl ToString) -> Error {
    DataError::Manifest {
        path: path.display().to_string(),
        reason: reason.to_string(),
    }
    .into()
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::Data(DataError::MissingFile {
            entry: path.display().to_string(),
        }),
        _ => Error::io(path, e),
    })?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| manifest_err(path, e))?;
    if manifest.version != MANIFEST_VERSION {
        return Err(manifest_err(path, format!("unsupported version {}", manifest.version)));
    }
    if manifest.images.is_empty() {
        return Err(manifest_err(path, "no images listed"));
    }
    Ok(manifest)
}

pub fn write_manifest(path: impl AsRef<Path>, manifest: &Manifest) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Decodes every image a manifest lists, checking each against the declared
/// size.
pub fn load_entries(manifest_path: impl AsRef<Path>) -> Result<(Manifest, Vec<Image>)> {
    let manifest_path = manifest_path.as_ref();
    let manifest = read_manifest(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let mut images = Vec::with_capacity(manifest.images.len());
    for entry in &manifest.images {
        let img = read_image(dir.join(&entry.path)).map_err(|e| match e {
            Error::Data(DataError::MissingFile { .. }) => DataError::MissingFile {
                entry: entry.path.clone(),
            }
            .into(),
            other => other,
        })?;
        if img.dims() != (manifest.height, manifest.width) {
            return Err(DataError::DimensionMismatch {
                entry: entry.path.clone(),
                width: img.width(),
                height: img.height(),
                expected_width: manifest.width,
                expected_height: manifest.height,
            }
            .into());
        }
        images.push(img);
    }
    Ok((manifest, images))
}

/// Loads a training set; manifest order is code order.
pub fn load_dataset(manifest_path: impl AsRef<Path>) -> Result<ImageSet> {
    let (_, images) = load_entries(manifest_path)?;
    ImageSet::new(images)
}

/// Writes the scene's views plus held-out in-between frames at
/// `t ∈ {0.25, 0.5, 0.75}` for each adjacent pair. Returns the two
/// manifest paths.
pub fn export_scene(scene: &Scene, dir: impl AsRef<Path>) -> Result<(PathBuf, PathBuf)> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let spec = scene.spec();
    let mut train = Manifest {
        version: MANIFEST_VERSION,
        width: spec.width,
        height: spec.height,
        images: Vec::new(),
    };
    let mut heldout = Manifest { images: Vec::new(), ..train.clone() };
    for k in 0..spec.n_views {
        let name = format!("view_{k:03}.png");
        write_image(dir.join(&name), scene.view(k))?;
        train.images.push(ManifestEntry {
            path: name,
            view_tag: format!("view:{k}"),
        });
    }
    for i in 0..spec.n_views.saturating_sub(1) {
        for t in [0.25, 0.5, 0.75] {
            let tag = InterpTag { i, j: i + 1, t };
            let name = format!("interp_{i:03}_{:03}_{:03}.png", i + 1, (t * 100.0) as u32);
            write_image(dir.join(&name), &scene.render_at(i as f64 + t))?;
            heldout.images.push(ManifestEntry {
                path: name,
                view_tag: tag.format(),
            });
        }
    }
    let (train_path, heldout_path) = (dir.join(TRAIN_MANIFEST), dir.join(HELDOUT_MANIFEST));
    write_manifest(&train_path, &train)?;
    write_manifest(&heldout_path, &heldout)?;
    Ok((train_path, heldout_path))
}
