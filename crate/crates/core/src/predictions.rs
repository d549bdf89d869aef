//! Prediction document schemas and their resolution against a manifest.
//!
//! Real and fake images of a semantic pair share a uid, and several fakes of
//! one uid may come from different generators, so predictions are resolved
//! on `(uid, role, generator)`. Localization predictions target fakes only;
//! their `generator` may be omitted when the uid has a single fake.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::annotation::{ArtifactCategory, Manifest, Role};
use crate::attention::Heatmap;
use crate::error::{Error, Result};
use crate::formats;
use crate::raster::{Region, RleMask};

pub(crate) fn from_json<T: DeserializeOwned>(bytes: &[u8]) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    serde_path_to_error::deserialize(de).map_err(|e| Error::Schema {
        path: e.path().to_string(),
        message: e.into_inner().to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AjPrediction {
    pub uid: String,
    #[serde(default)]
    pub generator: Option<String>,
    pub role: Role,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Role>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AjPredictionFile {
    pub predictions: Vec<AjPrediction>,
}

pub fn parse_aj_predictions(bytes: &[u8]) -> Result<Vec<AjPrediction>> {
    let file: AjPredictionFile = from_json(bytes)?;
    for (i, p) in file.predictions.iter().enumerate() {
        match (p.score, p.label) {
            (Some(s), None) if (0.0..=1.0).contains(&s) => {}
            (Some(s), None) => {
                return Err(Error::Schema {
                    path: format!("predictions[{i}].score"),
                    message: format!("score {s} outside [0, 1]"),
                })
            }
            (None, Some(_)) => {}
            _ => {
                return Err(Error::Schema {
                    path: format!("predictions[{i}]"),
                    message: "exactly one of `score` or `label` is required".into(),
                })
            }
        }
    }
    Ok(file.predictions)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PadPredictionEntry {
    pub uid: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<String>,
    pub masks: BTreeMap<String, RleMask>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PadPredictionFile {
    pub predictions: Vec<PadPredictionEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaPadPredictionEntry {
    pub uid: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<RleMask>,
    /// Path to an `XHM1` heatmap, relative to the prediction document.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heatmap: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaPadPredictionFile {
    pub predictions: Vec<CaPadPredictionEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceEntry {
    #[serde(default)]
    pub category: Option<String>,
    pub region: Region,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstancePredictionEntry {
    pub uid: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<String>,
    pub instances: Vec<InstanceEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstancePredictionFile {
    pub predictions: Vec<InstancePredictionEntry>,
}

/// One localized instance prediction, category-agnostic when `category` is `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct InstancePrediction {
    pub category: Option<ArtifactCategory>,
    pub region: Region,
}

/// Per-category predicted masks for one fake image; absent categories are empty.
pub type PadPrediction = BTreeMap<ArtifactCategory, RleMask>;

#[derive(Debug, Clone, PartialEq)]
pub enum CaPadPrediction {
    Mask(RleMask),
    Heatmap(Heatmap),
}

/// Predictions keyed by the index of the image they target in `Manifest::images`.
pub type ByImage<T> = BTreeMap<usize, T>;

/// Index over the manifest for resolving prediction keys.
pub struct ImageIndex<'a> {
    manifest: &'a Manifest,
    by_uid: HashMap<&'a str, Vec<usize>>,
}

impl<'a> ImageIndex<'a> {
    pub fn new(manifest: &'a Manifest) -> Self {
        let mut by_uid: HashMap<&str, Vec<usize>> = HashMap::new();
        for (i, r) in manifest.images.iter().enumerate() {
            by_uid.entry(r.uid.as_str()).or_default().push(i);
        }
        Self { manifest, by_uid }
    }

    /// Exact `(uid, role, generator)` lookup.
    pub fn find(&self, uid: &str, role: Role, generator: Option<&str>) -> Option<usize> {
        self.by_uid.get(uid)?.iter().copied().find(|&i| {
            let r = &self.manifest.images[i];
            r.role == role && r.generator.as_deref() == generator
        })
    }

    /// Resolves a localization prediction to a fake image.
    pub fn resolve_fake(&self, uid: &str, generator: Option<&str>) -> Result<usize> {
        let fakes: Vec<usize> = self
            .by_uid
            .get(uid)
            .map(|v| {
                v.iter()
                    .copied()
                    .filter(|&i| self.manifest.images[i].is_fake())
                    .collect()
            })
            .unwrap_or_default();
        match generator {
            Some(g) => fakes
                .into_iter()
                .find(|&i| self.manifest.images[i].generator.as_deref() == Some(g))
                .ok_or_else(|| Error::UnknownUid(format!("{uid}/fake/{g}"))),
            None => match fakes.as_slice() {
                [only] => Ok(*only),
                [] => Err(Error::UnknownUid(uid.to_string())),
                _ => Err(Error::InvalidArgument(format!(
                    "uid `{uid}` has {} fake images; the prediction must name its generator",
                    fakes.len()
                ))),
            },
        }
    }
}

fn insert_unique<T>(map: &mut ByImage<T>, idx: usize, value: T, manifest: &Manifest) -> Result<()> {
    if map.insert(idx, value).is_some() {
        return Err(Error::InvalidArgument(format!(
            "more than one prediction for {}",
            manifest.images[idx].label()
        )));
    }
    Ok(())
}

fn category(name: &str, path: impl FnOnce() -> String) -> Result<ArtifactCategory> {
    ArtifactCategory::from_name(name).ok_or_else(|| Error::Schema {
        path: path(),
        message: format!("unknown category `{name}`"),
    })
}

pub fn parse_pad_predictions(bytes: &[u8], manifest: &Manifest) -> Result<ByImage<PadPrediction>> {
    let file: PadPredictionFile = from_json(bytes)?;
    let index = ImageIndex::new(manifest);
    let mut out = ByImage::new();
    for (i, entry) in file.predictions.into_iter().enumerate() {
        let idx = index.resolve_fake(&entry.uid, entry.generator.as_deref())?;
        let mut masks = PadPrediction::new();
        for (name, rle) in entry.masks {
            let cat = category(&name, || format!("predictions[{i}].masks.{name}"))?;
            masks.insert(cat, rle);
        }
        insert_unique(&mut out, idx, masks, manifest)?;
    }
    Ok(out)
}

/// Parses a category-agnostic prediction document; heatmap references are
/// loaded relative to `base_dir`.
pub fn parse_ca_pad_predictions(
    bytes: &[u8],
    manifest: &Manifest,
    base_dir: &Path,
) -> Result<ByImage<CaPadPrediction>> {
    let file: CaPadPredictionFile = from_json(bytes)?;
    let index = ImageIndex::new(manifest);
    let mut out = ByImage::new();
    for (i, entry) in file.predictions.into_iter().enumerate() {
        let idx = index.resolve_fake(&entry.uid, entry.generator.as_deref())?;
        let pred = match (entry.mask, entry.heatmap) {
            (Some(rle), None) => CaPadPrediction::Mask(rle),
            (None, Some(rel)) => {
                let path: PathBuf = base_dir.join(rel);
                let bytes = std::fs::read(&path)
                    .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
                CaPadPrediction::Heatmap(formats::read_heatmap(&bytes)?)
            }
            _ => {
                return Err(Error::Schema {
                    path: format!("predictions[{i}]"),
                    message: "exactly one of `mask` or `heatmap` is required".into(),
                })
            }
        };
        insert_unique(&mut out, idx, pred, manifest)?;
    }
    Ok(out)
}

pub fn parse_instance_predictions(
    bytes: &[u8],
    manifest: &Manifest,
) -> Result<ByImage<Vec<InstancePrediction>>> {
    let file: InstancePredictionFile = from_json(bytes)?;
    let index = ImageIndex::new(manifest);
    let mut out = ByImage::new();
    for (i, entry) in file.predictions.into_iter().enumerate() {
        let idx = index.resolve_fake(&entry.uid, entry.generator.as_deref())?;
        let mut instances = Vec::with_capacity(entry.instances.len());
        for (j, inst) in entry.instances.into_iter().enumerate() {
            let category = match inst.category {
                Some(name) => Some(category(&name, || {
                    format!("predictions[{i}].instances[{j}].category")
                })?),
                None => None,
            };
            instances.push(InstancePrediction {
                category,
                region: inst.region,
            });
        }
        insert_unique(&mut out, idx, instances, manifest)?;
    }
    Ok(out)
}
