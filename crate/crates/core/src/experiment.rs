//! Cross-entropy vs focal loss on the imbalanced synthetic corpus.

use crate::corpus::synthetic::generate;
use crate::corpus::{
    standard_spec, stratified_split, AugmentationSpec, CorpusError, ImageRecord, SplitSpec, Splits, SyntheticCorpusSpec,
};
use crate::evaluation::{evaluate, EvalError};
use crate::model::{train, FocalLossConfig, LossConfig, ModelConfig, ModelError, TrainConfig, TrainData, DEFAULT_GAMMA};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use crate::taxonomy::Taxonomy;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Builds label-indexed training data for the given ids.
pub fn labeled_subset(
    records: &[ImageRecord],
    ids: &[String],
    label_space: &[String],
) -> Result<TrainData, ExperimentError> {
    let by_id: HashMap<&str, &ImageRecord> = records.iter().map(|r| (r.id.as_str(), r)).collect();
    let index: HashMap<&str, usize> = label_space.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    let mut data = TrainData::default();
    for id in ids {
        let rec = by_id
            .get(id.as_str())
            .ok_or_else(|| CorpusError::InvalidSplit(format!("unknown image id {id}")))?;
        let label = *index
            .get(rec.visual_food_id.as_str())
            .ok_or_else(|| CorpusError::UnknownLabel(rec.visual_food_id.clone()))?;
        data.images.push(rec.pixels.clone());
        data.labels.push(label);
    }
    Ok(data)
}

/// A stored split turned into model inputs over the taxonomy's label space.
#[derive(Debug, Clone)]
pub struct SplitData {
    pub label_space: Vec<String>,
    pub train: TrainData,
    pub val: TrainData,
    pub test: TrainData,
}

/// Labels retired by taxonomy merges are mapped to their current visual
/// food before indexing.
pub fn split_data(records: &[ImageRecord], splits: &Splits, taxonomy: &Taxonomy) -> Result<SplitData, ExperimentError> {
    let label_space = taxonomy.label_space();
    let relabelled = records
        .iter()
        .map(|r| {
            let current = taxonomy
                .resolve_label(&r.visual_food_id)
                .ok_or_else(|| CorpusError::UnknownLabel(r.visual_food_id.clone()))?;
            Ok(ImageRecord {
                visual_food_id: current,
                ..r.clone()
            })
        })
        .collect::<Result<Vec<_>, CorpusError>>()?;
    Ok(SplitData {
        train: labeled_subset(&relabelled, &splits.train, &label_space)?,
        val: labeled_subset(&relabelled, &splits.val, &label_space)?,
        test: labeled_subset(&relabelled, &splits.test, &label_space)?,
        label_space,
    })
}

/// Class counts of `data`, indexed like the label space.
pub fn class_counts(data: &TrainData, num_classes: usize) -> Vec<usize> {
    let mut counts = vec![0usize; num_classes];
    for &l in &data.labels {
        counts[l] += 1;
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImbalanceExperiment {
    pub corpus: SyntheticCorpusSpec,
    /// Each seed drives the split, initialization and batch order.
    pub seeds: Vec<u64>,
    pub split: (f64, f64, f64),
    pub channels: [usize; 2],
    pub se_gate: bool,
    pub gamma: f64,
    /// Template; `seed` and `loss` are set per run.
    pub train: TrainConfig,
}

impl Default for ImbalanceExperiment {
    fn default() -> Self {
        ImbalanceExperiment {
            corpus: standard_spec(7),
            seeds: (0..5).collect(),
            split: (0.6, 0.2, 0.2),
            channels: [8, 16],
            se_gate: true,
            gamma: DEFAULT_GAMMA,
            train: TrainConfig {
                epochs: 30,
                batch_size: 32,
                learning_rate: 0.03,
                momentum: 0.9,
                seed: 0,
                loss: LossConfig::CrossEntropy,
                augmentation: AugmentationSpec::disabled(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    /// "cross_entropy" or "focal".
    pub loss: String,
    pub top1: f64,
    pub min_recall: f64,
    pub per_class_recall: BTreeMap<String, f64>,
    pub best_epoch: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub runs: Vec<RunResult>,
    pub ce_mean_top1: f64,
    pub focal_mean_top1: f64,
    /// Mean over seeds of each run's minimum per-class test recall.
    pub ce_mean_min_recall: f64,
    pub focal_mean_min_recall: f64,
}

impl ExperimentSummary {
    fn from_runs(runs: Vec<RunResult>) -> Self {
        let mean = |loss: &str, f: fn(&RunResult) -> f64| {
            let v: Vec<f64> = runs.iter().filter(|r| r.loss == loss).map(f).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        ExperimentSummary {
            ce_mean_top1: mean("cross_entropy", |r| r.top1),
            focal_mean_top1: mean("focal", |r| r.top1),
            ce_mean_min_recall: mean("cross_entropy", |r| r.min_recall),
            focal_mean_min_recall: mean("focal", |r| r.min_recall),
            runs,
        }
    }

    pub fn min_recall_holds(&self) -> bool {
        self.focal_mean_min_recall >= self.ce_mean_min_recall
    }

    /// Focal top-1 within `points` percentage points of cross-entropy.
    pub fn top1_within(&self, points: f64) -> bool {
        (self.focal_mean_top1 - self.ce_mean_top1).abs() * 100.0 <= points
    }
}

impl ImbalanceExperiment {
    /// Trains a cross-entropy and a focal model per seed and scores both on
    /// the test split. `progress` is called after every run.
    pub fn run(&self, mut progress: impl FnMut(&RunResult)) -> Result<ExperimentSummary, ExperimentError> {
        let (version, records) = generate(&self.corpus)?;
        let label_space: Vec<String> = version.per_class_counts.keys().cloned().collect();
        let entries: Vec<_> = records.iter().map(|r| r.manifest_entry()).collect();
        let model = ModelConfig::conv_net(
            (self.corpus.image_size, self.corpus.image_size, 3),
            label_space.len(),
            self.channels,
            self.se_gate,
        );
        let mut runs = Vec::new();
        for &seed in &self.seeds {
            let (tr, va, te) = self.split;
            let splits = stratified_split(&entries, &SplitSpec::new(tr, va, te, seed))?;
            let train_set = labeled_subset(&records, &splits.train, &label_space)?;
            let val = labeled_subset(&records, &splits.val, &label_space)?;
            let test = labeled_subset(&records, &splits.test, &label_space)?;
            let counts = class_counts(&train_set, label_space.len());
            let losses = [
                ("cross_entropy", LossConfig::CrossEntropy),
                ("focal", LossConfig::Focal(FocalLossConfig::inverse_frequency(&counts, self.gamma)?)),
            ];
            for (name, loss) in losses {
                let start = Instant::now();
                let cfg = TrainConfig {
                    seed,
                    loss,
                    ..self.train.clone()
                };
                let ck = train(&model, &cfg, label_space.clone(), &train_set, &val, Some(version.version))?;
                let report = evaluate(&ck, &test.images, &test.labels, Some(version.version))?;
                let run = RunResult {
                    seed,
                    loss: name.to_string(),
                    top1: report.top1,
                    min_recall: report.min_recall().unwrap_or(0.0),
                    per_class_recall: report.per_class_recall,
                    best_epoch: ck.metadata().best_epoch,
                    seconds: start.elapsed().as_secs_f64(),
                };
                progress(&run);
                runs.push(run);
            }
        }
        Ok(ExperimentSummary::from_runs(runs))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synthetic::generate;
    use crate::corpus::{Shape, SyntheticClass};

    fn spec() -> SyntheticCorpusSpec {
        let class = |id: &str, count| SyntheticClass {
            id: id.into(),
            super_category: "noodles".into(),
            count,
            shape: Shape::Circle,
            base_hue: 10.0,
            hue_jitter: 5.0,
        };
        SyntheticCorpusSpec {
            classes: vec![class("mee_kuah", 5), class("mee_rebus", 10)],
            confusable_pairs: vec![],
            non_food_count: 5,
            image_size: 8,
            seed: 1,
        }
    }

    #[test]
    fn split_data_follows_merges() {
        let spec = spec();
        let (_, records) = generate(&spec).unwrap();
        let mut tax = spec.taxonomy().unwrap();
        let entries: Vec<_> = records.iter().map(|r| r.manifest_entry()).collect();
        let splits = stratified_split(&entries, &SplitSpec::new(0.6, 0.2, 0.2, 3)).unwrap();

        let data = split_data(&records, &splits, &tax).unwrap();
        assert_eq!(data.label_space, ["mee_kuah", "mee_rebus", "non_food"]);
        assert_eq!(class_counts(&data.train, 3), [3, 6, 3]);
        let total = data.train.len() + data.val.len() + data.test.len();
        assert_eq!(total, 20);

        let merged = tax.merge_visual_foods("mee_kuah", "mee_rebus", "mee soup").unwrap();
        let data = split_data(&records, &splits, &tax).unwrap();
        assert_eq!(data.label_space.len(), 2);
        let idx = data.label_space.iter().position(|l| *l == merged.id).unwrap();
        assert_eq!(class_counts(&data.train, 2)[idx], 9);
    }

    #[test]
    fn unknown_labels_are_rejected() {
        let (_, records) = generate(&spec()).unwrap();
        let entries: Vec<_> = records.iter().map(|r| r.manifest_entry()).collect();
        let splits = stratified_split(&entries, &SplitSpec::new(0.6, 0.2, 0.2, 3)).unwrap();
        let tax = Taxonomy::new();
        assert!(matches!(
            split_data(&records, &splits, &tax),
            Err(ExperimentError::Corpus(CorpusError::UnknownLabel(_)))
        ));
    }
}
