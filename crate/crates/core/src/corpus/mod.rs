//! Labelled image corpus: generation, versioned storage, stratified splits
//! and training-time augmentation.
//!
//! A store directory looks like
//!
//! ```text
//! images/<id>.ppm          binary P6 pixels, written once
//! versions/v00001.jsonl    manifest, one {id,label,source,path} line per image
//! versions/v00001.json     DatasetVersion summary (digest, per-class counts)
//! ```
//!
//! Versions are append-only: a new version's manifest is its parent's
//! manifest followed by the added lines, and old files are never rewritten.

mod augment;
mod split;
pub mod synthetic;

pub use augment::{augment, AugmentationSpec};
pub use split::{stratified_split, SplitSpec, Splits};
pub use synthetic::{standard_spec, Shape, SyntheticClass, SyntheticCorpusSpec};

use crate::image::{ImageError, RgbImage};
use crate::taxonomy::TaxonomyError;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("invalid corpus spec: {0}")]
    InvalidSpec(String),
    #[error("class {label} has {count} images, at least 3 are needed to stratify")]
    ClassTooSmall { label: String, count: usize },
    #[error("invalid split spec: {0}")]
    InvalidSplit(String),
    #[error("invalid augmentation spec: {0}")]
    InvalidAugmentation(String),
    #[error("crop size {crop} exceeds image side {side}")]
    CropTooLarge { crop: usize, side: usize },
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
    #[error("duplicate image id {0:?}")]
    DuplicateImage(String),
    #[error("unknown dataset version {0}")]
    UnknownVersion(u32),
    #[error("image {id} is {actual_w}x{actual_h}, corpus images are {expected}x{expected}")]
    Dimensions {
        id: String,
        expected: usize,
        actual_w: usize,
        actual_h: usize,
    },
    #[error("manifest digest mismatch for version {version}: stored {stored}, computed {computed}")]
    DigestMismatch {
        version: u32,
        stored: String,
        computed: String,
    },
    #[error("store at {0} already holds a corpus")]
    StoreNotEmpty(PathBuf),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        source: std::io::Error,
    },
    #[error("corrupt store file {path}: {message}")]
    Corrupt { path: PathBuf, message: String },
}

type Result<T> = std::result::Result<T, CorpusError>;

fn io_err(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> CorpusError {
    let context = context.into();
    move |source| CorpusError::Io { context, source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordSource {
    Synthetic,
    Annotation,
    External,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub id: String,
    pub visual_food_id: String,
    pub pixels: RgbImage,
    pub source: RecordSource,
    pub version_added: u32,
}

impl ImageRecord {
    pub fn manifest_entry(&self) -> ManifestEntry {
        ManifestEntry {
            id: self.id.clone(),
            label: self.visual_food_id.clone(),
            source: self.source,
            path: image_path(&self.id),
        }
    }
}

/// One manifest line. Field order is the canonical serialization order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub label: String,
    pub source: RecordSource,
    pub path: String,
}

impl ManifestEntry {
    pub fn canonical_line(&self) -> String {
        let mut line = serde_json::to_string(self).expect("manifest entry serializes");
        line.push('\n');
        line
    }
}

pub fn image_path(id: &str) -> String {
    format!("images/{id}.ppm")
}

/// SHA-256 over the concatenated canonical manifest lines, lowercase hex.
pub fn manifest_digest(entries: &[ManifestEntry]) -> String {
    let mut hasher = Sha256::new();
    for e in entries {
        hasher.update(e.canonical_line().as_bytes());
    }
    hex::encode(hasher.finalize())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetVersion {
    pub version: u32,
    pub parent: Option<u32>,
    pub manifest_digest: String,
    pub per_class_counts: BTreeMap<String, usize>,
}

impl DatasetVersion {
    pub fn from_entries(version: u32, parent: Option<u32>, entries: &[ManifestEntry]) -> Self {
        DatasetVersion {
            version,
            parent,
            manifest_digest: manifest_digest(entries),
            per_class_counts: histogram(entries),
        }
    }

    pub fn total(&self) -> usize {
        self.per_class_counts.values().sum()
    }
}

fn histogram(entries: &[ManifestEntry]) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for e in entries {
        *counts.entry(e.label.clone()).or_insert(0) += 1;
    }
    counts
}

/// An image to be added by [`CorpusStore::merge_annotations`].
#[derive(Debug, Clone)]
pub struct NewImage {
    pub id: String,
    pub label: String,
    pub pixels: RgbImage,
    pub source: RecordSource,
}

pub struct CorpusStore {
    root: PathBuf,
    image_size: usize,
}

#[derive(Serialize, Deserialize)]
struct StoreMeta {
    image_size: usize,
}

impl CorpusStore {
    /// Opens (creating if needed) a store. `image_size` is taken from the
    /// existing store metadata when present.
    pub fn open(root: impl Into<PathBuf>, image_size: usize) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(root.join("images")).map_err(io_err("create images dir"))?;
        fs::create_dir_all(root.join("versions")).map_err(io_err("create versions dir"))?;
        let meta_path = root.join("store.json");
        let image_size = if meta_path.exists() {
            let text = fs::read_to_string(&meta_path).map_err(io_err("read store.json"))?;
            let meta: StoreMeta = serde_json::from_str(&text).map_err(|e| CorpusError::Corrupt {
                path: meta_path.clone(),
                message: e.to_string(),
            })?;
            meta.image_size
        } else {
            let text = serde_json::to_string(&StoreMeta { image_size }).expect("meta");
            fs::write(&meta_path, text).map_err(io_err("write store.json"))?;
            image_size
        };
        Ok(CorpusStore { root, image_size })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn image_size(&self) -> usize {
        self.image_size
    }

    fn manifest_path(&self, version: u32) -> PathBuf {
        self.root.join("versions").join(format!("v{version:05}.jsonl"))
    }

    fn summary_path(&self, version: u32) -> PathBuf {
        self.root.join("versions").join(format!("v{version:05}.json"))
    }

    pub fn versions(&self) -> Result<Vec<u32>> {
        let mut out = Vec::new();
        for entry in fs::read_dir(self.root.join("versions")).map_err(io_err("list versions"))? {
            let name = entry.map_err(io_err("list versions"))?.file_name();
            let name = name.to_string_lossy();
            if let Some(num) = name.strip_prefix('v').and_then(|s| s.strip_suffix(".json")) {
                if let Ok(v) = num.parse() {
                    out.push(v);
                }
            }
        }
        out.sort_unstable();
        Ok(out)
    }

    pub fn latest(&self) -> Result<Option<u32>> {
        Ok(self.versions()?.last().copied())
    }

    /// Renders the synthetic corpus into an empty store as version 1.
    pub fn generate_synthetic(&self, spec: &SyntheticCorpusSpec) -> Result<DatasetVersion> {
        if self.latest()?.is_some() {
            return Err(CorpusError::StoreNotEmpty(self.root.clone()));
        }
        if spec.image_size != self.image_size {
            return Err(CorpusError::InvalidSpec(format!(
                "spec image_size {} differs from store image size {}",
                spec.image_size, self.image_size
            )));
        }
        let (_, records) = synthetic::generate(spec)?;
        self.write_version(1, None, Vec::new(), &records)
    }

    fn write_version(
        &self,
        version: u32,
        parent: Option<u32>,
        mut entries: Vec<ManifestEntry>,
        added: &[ImageRecord],
    ) -> Result<DatasetVersion> {
        for r in added {
            let path = self.root.join(image_path(&r.id));
            fs::write(&path, r.pixels.to_ppm()).map_err(io_err(format!("write {}", path.display())))?;
            entries.push(r.manifest_entry());
        }
        let summary = DatasetVersion::from_entries(version, parent, &entries);
        let manifest: String = entries.iter().map(|e| e.canonical_line()).collect();
        // manifest first: a summary file marks the version as complete
        fs::write(self.manifest_path(version), manifest).map_err(io_err("write manifest"))?;
        fs::write(
            self.summary_path(version),
            serde_json::to_string_pretty(&summary).expect("summary serializes"),
        )
        .map_err(io_err("write version summary"))?;
        Ok(summary)
    }

    /// Reads a version summary and checks it against its manifest.
    pub fn load_version(&self, version: u32) -> Result<DatasetVersion> {
        let path = self.summary_path(version);
        if !path.exists() {
            return Err(CorpusError::UnknownVersion(version));
        }
        let text = fs::read_to_string(&path).map_err(io_err("read version summary"))?;
        let summary: DatasetVersion = serde_json::from_str(&text).map_err(|e| CorpusError::Corrupt {
            path: path.clone(),
            message: e.to_string(),
        })?;
        let entries = self.manifest(version)?;
        let computed = manifest_digest(&entries);
        if computed != summary.manifest_digest {
            return Err(CorpusError::DigestMismatch {
                version,
                stored: summary.manifest_digest,
                computed,
            });
        }
        if histogram(&entries) != summary.per_class_counts {
            return Err(CorpusError::Corrupt {
                path,
                message: "per-class counts disagree with manifest".into(),
            });
        }
        Ok(summary)
    }

    pub fn manifest(&self, version: u32) -> Result<Vec<ManifestEntry>> {
        let path = self.manifest_path(version);
        if !path.exists() {
            return Err(CorpusError::UnknownVersion(version));
        }
        let text = fs::read_to_string(&path).map_err(io_err("read manifest"))?;
        text.lines()
            .filter(|l| !l.is_empty())
            .map(|l| {
                serde_json::from_str(l).map_err(|e| CorpusError::Corrupt {
                    path: path.clone(),
                    message: e.to_string(),
                })
            })
            .collect()
    }

    pub fn class_histogram(&self, version: u32) -> Result<BTreeMap<String, usize>> {
        Ok(self.load_version(version)?.per_class_counts)
    }

    pub fn load_image(&self, entry: &ManifestEntry) -> Result<RgbImage> {
        let path = self.root.join(&entry.path);
        let bytes = fs::read(&path).map_err(io_err(format!("read {}", path.display())))?;
        Ok(RgbImage::from_ppm(&bytes)?)
    }

    /// All records of a version with pixels and the version each was added in.
    pub fn load_records(&self, version: u32) -> Result<Vec<ImageRecord>> {
        self.load_version(version)?;
        let entries = self.manifest(version)?;
        // ancestor chain, oldest first, with cumulative sizes
        let mut chain = Vec::new();
        let mut cursor = Some(version);
        while let Some(v) = cursor {
            let summary = if v == version {
                self.load_version(v)?
            } else {
                self.read_summary(v)?
            };
            chain.push((v, summary.total()));
            cursor = summary.parent;
        }
        chain.reverse();
        entries
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let version_added = chain
                    .iter()
                    .find(|(_, total)| i < *total)
                    .map(|(v, _)| *v)
                    .unwrap_or(version);
                Ok(ImageRecord {
                    id: e.id.clone(),
                    visual_food_id: e.label.clone(),
                    pixels: self.load_image(e)?,
                    source: e.source,
                    version_added,
                })
            })
            .collect()
    }

    fn read_summary(&self, version: u32) -> Result<DatasetVersion> {
        let path = self.summary_path(version);
        let text = fs::read_to_string(&path).map_err(|_| CorpusError::UnknownVersion(version))?;
        serde_json::from_str(&text).map_err(|e| CorpusError::Corrupt {
            path,
            message: e.to_string(),
        })
    }

    /// New version = `base` plus `images`; `base` stays readable unchanged.
    /// The new version number is one past the latest existing version.
    pub fn merge_annotations(
        &self,
        base: u32,
        images: Vec<NewImage>,
        label_space: &BTreeSet<String>,
    ) -> Result<DatasetVersion> {
        self.load_version(base)?;
        let entries = self.manifest(base)?;
        let mut ids: BTreeSet<String> = entries.iter().map(|e| e.id.clone()).collect();
        for img in &images {
            if !label_space.contains(&img.label) {
                return Err(CorpusError::UnknownLabel(img.label.clone()));
            }
            if !ids.insert(img.id.clone()) || self.root.join(image_path(&img.id)).exists() {
                return Err(CorpusError::DuplicateImage(img.id.clone()));
            }
            if img.pixels.width() != self.image_size || img.pixels.height() != self.image_size {
                return Err(CorpusError::Dimensions {
                    id: img.id.clone(),
                    expected: self.image_size,
                    actual_w: img.pixels.width(),
                    actual_h: img.pixels.height(),
                });
            }
        }
        let version = self.latest()?.unwrap_or(0) + 1;
        let records: Vec<ImageRecord> = images
            .into_iter()
            .map(|img| ImageRecord {
                id: img.id,
                visual_food_id: img.label,
                pixels: img.pixels,
                source: img.source,
                version_added: version,
            })
            .collect();
        self.write_version(version, Some(base), entries, &records)
    }
}
