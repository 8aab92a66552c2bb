//! On-disk layout: one JSON header line, then `param_count` little-endian
//! f64 values. The header's `param_digest` is the SHA-256 of those bytes.

use super::predict::prob_rows;
use super::train::EpochMetrics;
use super::{predict::image_tensor, LossConfig, ModelConfig, ModelError, Network, Tensor};
use crate::image::RgbImage;
use crate::taxonomy::{Taxonomy, NON_FOOD_ID};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeSet;
use std::path::Path;

pub const CHECKPOINT_FORMAT: &str = "foodai-checkpoint-v1";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub dataset_version: Option<u32>,
    pub seed: u64,
    pub loss: Option<LossConfig>,
    pub epochs_run: usize,
    /// Epoch whose parameters were kept (0 = initialization).
    pub best_epoch: usize,
    pub history: Vec<EpochMetrics>,
}

impl TrainingMetadata {
    /// Metrics of the kept epoch.
    pub fn final_metrics(&self) -> Option<&EpochMetrics> {
        self.history.iter().find(|m| m.epoch == self.best_epoch)
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    config: ModelConfig,
    label_space: Vec<String>,
    metadata: TrainingMetadata,
    param_count: usize,
    param_digest: String,
}

/// Trained parameters plus everything needed to serve them.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    config: ModelConfig,
    label_space: Vec<String>,
    parameters: Vec<f64>,
    metadata: TrainingMetadata,
    network: Network,
    digest: String,
}

fn param_bytes(params: &[f64]) -> Vec<u8> {
    params.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Checkpoint {
    pub fn new(
        config: ModelConfig,
        label_space: Vec<String>,
        parameters: Vec<f64>,
        metadata: TrainingMetadata,
    ) -> Result<Self, ModelError> {
        let network = Network::new(&config)?;
        if parameters.len() != network.parameter_count() {
            return Err(ModelError::Checkpoint(format!(
                "{} parameters for a model with {}",
                parameters.len(),
                network.parameter_count()
            )));
        }
        check_label_space(&label_space, config.num_classes)?;
        let digest = sha256_hex(&param_bytes(&parameters));
        Ok(Checkpoint {
            config,
            label_space,
            parameters,
            metadata,
            network,
            digest,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn label_space(&self) -> &[String] {
        &self.label_space
    }

    pub fn parameters(&self) -> &[f64] {
        &self.parameters
    }

    pub fn metadata(&self) -> &TrainingMetadata {
        &self.metadata
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    /// SHA-256 hex of the little-endian parameter bytes.
    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn non_food_index(&self) -> usize {
        self.label_space
            .iter()
            .position(|l| l == NON_FOOD_ID)
            .expect("label space validated at construction")
    }

    pub fn forward(&self, batch: &Tensor) -> Result<Tensor, ModelError> {
        self.network.forward(&self.parameters, batch)
    }

    /// Softmax rows for a batch of images.
    pub fn probabilities(&self, images: &[&RgbImage]) -> Result<Vec<Vec<f64>>, ModelError> {
        let batch = image_tensor(images, self.config.input)?;
        Ok(prob_rows(&self.forward(&batch)?))
    }

    /// Every label must be a current visual food or map to one through the
    /// remap log, and every current visual food must be covered.
    pub fn check_taxonomy(&self, taxonomy: &Taxonomy) -> Result<(), ModelError> {
        let mut covered = BTreeSet::new();
        for label in &self.label_space {
            match taxonomy.resolve_label(label) {
                Some(current) => {
                    covered.insert(current);
                }
                None => {
                    return Err(ModelError::Checkpoint(format!("label {label:?} is not in the taxonomy")));
                }
            }
        }
        let missing: Vec<String> = taxonomy.label_space().into_iter().filter(|l| !covered.contains(l)).collect();
        if !missing.is_empty() {
            return Err(ModelError::Checkpoint(format!("taxonomy classes without model output: {missing:?}")));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            format: CHECKPOINT_FORMAT.to_string(),
            config: self.config.clone(),
            label_space: self.label_space.clone(),
            metadata: self.metadata.clone(),
            param_count: self.parameters.len(),
            param_digest: self.digest.clone(),
        };
        let mut out = serde_json::to_vec(&header).expect("header serializes");
        out.push(b'\n');
        out.extend(param_bytes(&self.parameters));
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let bad = |m: String| ModelError::Checkpoint(m);
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("missing header line".into()))?;
        let header: Header = serde_json::from_slice(&bytes[..nl]).map_err(|e| bad(format!("header: {e}")))?;
        if header.format != CHECKPOINT_FORMAT {
            return Err(bad(format!("unsupported format {:?}", header.format)));
        }
        let body = &bytes[nl + 1..];
        if body.len() != header.param_count * 8 {
            return Err(bad(format!(
                "header declares {} parameters, body holds {} bytes",
                header.param_count,
                body.len()
            )));
        }
        let actual = sha256_hex(body);
        if actual != header.param_digest {
            return Err(ModelError::DigestMismatch {
                expected: header.param_digest,
                actual,
            });
        }
        let params = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Checkpoint::new(header.config, header.label_space, params, header.metadata)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        std::fs::write(path, self.to_bytes()).map_err(|source| ModelError::Io {
            context: format!("writing {}", path.display()),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let bytes = std::fs::read(path).map_err(|source| ModelError::Io {
            context: format!("reading {}", path.display()),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

fn check_label_space(labels: &[String], num_classes: usize) -> Result<(), ModelError> {
    if labels.len() != num_classes {
        return Err(ModelError::Checkpoint(format!(
            "label space has {} entries, model has {num_classes} outputs",
            labels.len()
        )));
    }
    let unique: BTreeSet<&String> = labels.iter().collect();
    if unique.len() != labels.len() {
        return Err(ModelError::Checkpoint("duplicate labels in label space".into()));
    }
    if !unique.iter().any(|l| l.as_str() == NON_FOOD_ID) {
        return Err(ModelError::Checkpoint(format!("label space lacks the {NON_FOOD_ID} class")));
    }
    Ok(())
}
