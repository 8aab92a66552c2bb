//! Top-k accuracy, per-class recall, confusion analysis and throughput.

use crate::image::RgbImage;
use crate::model::{rank_indices, Checkpoint, ModelError};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::{Duration, Instant};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("k must be at least 1")]
    InvalidK,
    #[error("{0}")]
    Shape(String),
    #[error("n_worst {requested} exceeds the {available} evaluated classes")]
    TooManyRequested { requested: usize, available: usize },
    #[error("threshold {0} outside (0, 1]")]
    InvalidThreshold(f64),
    #[error("no images to evaluate")]
    Empty,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// True when `label` is among the `k` best entries of `scores` under the
/// shared ranking rule.
pub fn in_topk(scores: &[f64], label: usize, k: usize) -> bool {
    rank_indices(scores).iter().take(k).any(|&i| i == label)
}

/// Fraction of rows whose label ranks within the top `k`.
pub fn topk_accuracy(scores: &[Vec<f64>], labels: &[usize], k: usize) -> Result<f64, EvalError> {
    if k == 0 {
        return Err(EvalError::InvalidK);
    }
    if scores.len() != labels.len() {
        return Err(EvalError::Shape(format!("{} score rows for {} labels", scores.len(), labels.len())));
    }
    if scores.is_empty() {
        return Err(EvalError::Empty);
    }
    if let Some((i, _)) = scores.iter().zip(labels).enumerate().find(|(_, (row, &l))| l >= row.len()) {
        return Err(EvalError::Shape(format!("row {i}: label out of range")));
    }
    let hits = scores
        .iter()
        .zip(labels)
        .filter(|(row, &l)| in_topk(row, l, k))
        .count();
    Ok(hits as f64 / scores.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub top1: f64,
    pub top5: f64,
    pub count: usize,
    /// Top-1 recall of every class with at least one instance.
    pub per_class_recall: BTreeMap<String, f64>,
    /// true label → predicted label → count.
    pub confusion: BTreeMap<String, BTreeMap<String, usize>>,
    pub dataset_version: Option<u32>,
    pub checkpoint_digest: String,
}

impl EvalReport {
    /// Builds the report from score rows over `label_space`.
    pub fn from_scores(
        label_space: &[String],
        scores: &[Vec<f64>],
        labels: &[usize],
        dataset_version: Option<u32>,
        checkpoint_digest: &str,
    ) -> Result<Self, EvalError> {
        if let Some(row) = scores.iter().find(|r| r.len() != label_space.len()) {
            return Err(EvalError::Shape(format!(
                "score row of length {} for {} labels",
                row.len(),
                label_space.len()
            )));
        }
        let top1 = topk_accuracy(scores, labels, 1)?;
        let top5 = topk_accuracy(scores, labels, 5)?;
        let mut confusion: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
        for (row, &l) in scores.iter().zip(labels) {
            let pred = rank_indices(row)[0];
            *confusion
                .entry(label_space[l].clone())
                .or_default()
                .entry(label_space[pred].clone())
                .or_default() += 1;
        }
        let per_class_recall = confusion
            .iter()
            .map(|(c, row)| {
                let total: usize = row.values().sum();
                (c.clone(), row.get(c).copied().unwrap_or(0) as f64 / total as f64)
            })
            .collect();
        Ok(EvalReport {
            top1,
            top5,
            count: labels.len(),
            per_class_recall,
            confusion,
            dataset_version,
            checkpoint_digest: checkpoint_digest.to_string(),
        })
    }

    /// Instances of `class` in the evaluated set.
    pub fn instances(&self, class: &str) -> usize {
        self.confusion.get(class).map(|r| r.values().sum()).unwrap_or(0)
    }

    /// Most frequent wrong prediction for `class` with its count; ties go to
    /// the smaller class id.
    pub fn most_common_error(&self, class: &str) -> Option<(&str, usize)> {
        let row = self.confusion.get(class)?;
        let mut best: Option<(&str, usize)> = None;
        for (pred, &n) in row {
            if pred != class && n > 0 && best.is_none_or(|(_, b)| n > b) {
                best = Some((pred.as_str(), n));
            }
        }
        best
    }

    pub fn min_recall(&self) -> Option<f64> {
        self.per_class_recall.values().copied().reduce(f64::min)
    }
}

/// Classifies `images` with `checkpoint` and reports against `labels`
/// (indices into the checkpoint's label space).
pub fn evaluate(
    checkpoint: &Checkpoint,
    images: &[RgbImage],
    labels: &[usize],
    dataset_version: Option<u32>,
) -> Result<EvalReport, EvalError> {
    let mut scores = Vec::with_capacity(images.len());
    for chunk in images.chunks(64) {
        let refs: Vec<&RgbImage> = chunk.iter().collect();
        scores.extend(checkpoint.probabilities(&refs)?);
    }
    EvalReport::from_scores(checkpoint.label_space(), &scores, labels, dataset_version, checkpoint.digest())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionEntry {
    pub visual_food: String,
    pub recall: f64,
    pub most_common_incorrect: String,
    /// Share of this class's instances predicted as `most_common_incorrect`.
    pub confused_fraction: f64,
}

/// The `n_worst` lowest-recall classes (ties by class id) that have at
/// least one wrong prediction, each with its most common wrong label.
pub fn confusion_report(report: &EvalReport, n_worst: usize) -> Result<Vec<ConfusionEntry>, EvalError> {
    let available = report.per_class_recall.len();
    if n_worst > available {
        return Err(EvalError::TooManyRequested {
            requested: n_worst,
            available,
        });
    }
    let mut classes: Vec<(&String, f64)> = report.per_class_recall.iter().map(|(c, &r)| (c, r)).collect();
    // BTreeMap order already sorts by id, so a stable sort keeps id ties
    classes.sort_by(|a, b| a.1.total_cmp(&b.1));
    Ok(classes
        .into_iter()
        .take(n_worst)
        .filter_map(|(class, recall)| {
            let (target, n) = report.most_common_error(class)?;
            Some(ConfusionEntry {
                visual_food: class.clone(),
                recall,
                most_common_incorrect: target.to_string(),
                confused_fraction: n as f64 / report.instances(class) as f64,
            })
        })
        .collect())
}

/// Pairs `(A, B)`, `A < B`, each the other's most common error with both
/// confused fractions at least `threshold`.
pub fn merge_candidates(report: &EvalReport, threshold: f64) -> Result<Vec<(String, String)>, EvalError> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(EvalError::InvalidThreshold(threshold));
    }
    let fraction_ok = |class: &str, n: usize| n as f64 / report.instances(class) as f64 >= threshold;
    let mut out = Vec::new();
    for a in report.confusion.keys() {
        let Some((b, n_ab)) = report.most_common_error(a) else {
            continue;
        };
        if a.as_str() >= b {
            continue;
        }
        if let Some((back, n_ba)) = report.most_common_error(b) {
            if back == a && fraction_ok(a, n_ab) && fraction_ok(b, n_ba) {
                out.push((a.clone(), b.to_string()));
            }
        }
    }
    Ok(out)
}

/// Anything that scores a batch of decoded images.
pub trait BatchClassifier {
    fn classify_batch(&self, images: &[&RgbImage]) -> Result<Vec<Vec<f64>>, ModelError>;
}

impl BatchClassifier for Checkpoint {
    fn classify_batch(&self, images: &[&RgbImage]) -> Result<Vec<Vec<f64>>, ModelError> {
        self.probabilities(images)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThroughputReport {
    pub images_per_second: f64,
    pub batch_size: usize,
    pub image_count: usize,
    pub wall_seconds: f64,
}

/// Wall-clock rate of `model` over `images` in batches; only the
/// classification calls are timed.
pub fn measure_throughput(
    model: &dyn BatchClassifier,
    images: &[RgbImage],
    batch_size: usize,
) -> Result<ThroughputReport, EvalError> {
    if images.is_empty() {
        return Err(EvalError::Empty);
    }
    if batch_size == 0 {
        return Err(EvalError::Shape("batch_size must be at least 1".into()));
    }
    let mut elapsed = Duration::ZERO;
    for chunk in images.chunks(batch_size) {
        let refs: Vec<&RgbImage> = chunk.iter().collect();
        let start = Instant::now();
        let out = model.classify_batch(&refs)?;
        elapsed += start.elapsed();
        std::hint::black_box(out);
    }
    let wall_seconds = elapsed.as_secs_f64().max(f64::MIN_POSITIVE);
    Ok(ThroughputReport {
        images_per_second: images.len() as f64 / wall_seconds,
        batch_size,
        image_count: images.len(),
        wall_seconds,
    })
}

/// Plain-text table in the layout of a top-k accuracy summary.
pub fn format_eval_table(report: &EvalReport, throughput: Option<&ThroughputReport>) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<24} {:>14} {:>14} {:>16}", "Checkpoint", "Top-1 Accuracy", "Top-5 Accuracy", "Images/second");
    let digest: String = report.checkpoint_digest.chars().take(12).collect();
    let rate = throughput.map_or("-".to_string(), |t| format!("{:.1}", t.images_per_second));
    let _ = writeln!(s, "{:<24} {:>14.4} {:>14.4} {:>16}", digest, report.top1, report.top5, rate);
    s
}

/// Plain-text table of difficult classes.
pub fn format_confusion_table(entries: &[ConfusionEntry]) -> String {
    if entries.is_empty() {
        return "no incorrect predictions\n".to_string();
    }
    let mut s = String::new();
    let _ = writeln!(s, "{:<24} {:>8}  {}", "Visual food", "Recall", "Most common incorrect prediction");
    for e in entries {
        let _ = writeln!(s, "{:<24} {:>8.2}  {}", e.visual_food, e.recall, e.most_common_incorrect);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn labels(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    /// Score rows that predict `pred` for each sample.
    fn one_hot(n_classes: usize, preds: &[usize]) -> Vec<Vec<f64>> {
        preds
            .iter()
            .map(|&p| (0..n_classes).map(|c| if c == p { 1.0 } else { 0.0 }).collect())
            .collect()
    }

    #[test]
    fn hand_ranked_fixture() {
        // true label (0) ranks 1st, 3rd and 7th
        let rows = vec![
            vec![0.9, 0.05, 0.03, 0.02, 0.0, 0.0, 0.0, 0.0],
            vec![0.2, 0.4, 0.3, 0.1, 0.0, 0.0, 0.0, 0.0],
            vec![0.02, 0.2, 0.2, 0.2, 0.2, 0.1, 0.08, 0.0],
        ];
        let labels = [0, 0, 0];
        assert!((topk_accuracy(&rows, &labels, 1).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!((topk_accuracy(&rows, &labels, 5).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(topk_accuracy(&rows, &labels, 8).unwrap(), 1.0);
        assert!(matches!(topk_accuracy(&rows, &labels, 0), Err(EvalError::InvalidK)));
    }

    #[test]
    fn perfect_scores() {
        let rows = one_hot(4, &[0, 1, 2, 3, 1]);
        assert_eq!(topk_accuracy(&rows, &[0, 1, 2, 3, 1], 1).unwrap(), 1.0);
    }

    fn table3_fixture() -> EvalReport {
        // mee_kuah: 100 instances, 42 right, 40 -> mee_rebus, 18 spread
        let names = labels(&["laksa", "mee_kuah", "mee_rebus", "non_food"]);
        let mut preds = vec![];
        let mut truth = vec![];
        let mut push = |t: usize, p: usize, n: usize| {
            for _ in 0..n {
                truth.push(t);
                preds.push(p);
            }
        };
        push(1, 1, 42);
        push(1, 2, 40);
        push(1, 0, 10);
        push(1, 3, 8);
        push(2, 2, 50);
        push(2, 1, 30);
        push(2, 0, 20);
        push(0, 0, 50);
        push(3, 3, 20);
        EvalReport::from_scores(&names, &one_hot(4, &preds), &truth, Some(3), "d").unwrap()
    }

    #[test]
    fn table3_shaped_report() {
        let r = table3_fixture();
        let entries = confusion_report(&r, 2).unwrap();
        assert_eq!(entries[0].visual_food, "mee_kuah");
        assert!((entries[0].recall - 0.42).abs() < 1e-15);
        assert_eq!(entries[0].most_common_incorrect, "mee_rebus");
        assert_eq!(entries[1].visual_food, "mee_rebus");
        assert_eq!(entries[1].most_common_incorrect, "mee_kuah");
        assert!(confusion_report(&r, 5).is_err());
        assert_eq!(merge_candidates(&r, 0.3).unwrap(), vec![("mee_kuah".to_string(), "mee_rebus".to_string())]);
        assert!(merge_candidates(&r, 0.35).unwrap().is_empty(), "mee_rebus only sends 30% back");
        assert!(merge_candidates(&r, 1.0).unwrap().is_empty());
        assert!(merge_candidates(&r, 0.0).is_err());
    }

    #[test]
    fn diagonal_confusion_has_no_entries() {
        let names = labels(&["a", "b", "non_food"]);
        let r = EvalReport::from_scores(&names, &one_hot(3, &[0, 1, 2]), &[0, 1, 2], None, "d").unwrap();
        assert!(confusion_report(&r, 3).unwrap().is_empty());
        assert!(r.per_class_recall.values().all(|&v| v == 1.0));
        assert_eq!(format_confusion_table(&[]), "no incorrect predictions\n");
    }

    #[test]
    fn asymmetric_confusion_is_not_a_candidate() {
        // a -> b, b -> c, c -> b
        let names = labels(&["a", "b", "c"]);
        let truth = [0, 0, 1, 1, 2, 2];
        let preds = [1, 1, 2, 2, 1, 1];
        let r = EvalReport::from_scores(&names, &one_hot(3, &preds), &truth, None, "d").unwrap();
        assert_eq!(merge_candidates(&r, 0.5).unwrap(), vec![("b".to_string(), "c".to_string())]);
        let truth = [0, 0, 1, 1, 2, 2];
        let preds = [1, 1, 2, 2, 0, 0];
        let r = EvalReport::from_scores(&names, &one_hot(3, &preds), &truth, None, "d").unwrap();
        assert!(merge_candidates(&r, 0.1).unwrap().is_empty());
    }

    #[test]
    fn report_invariants_on_random_scores() {
        let mut rng = Rng::new(5);
        let names: Vec<String> = (0..7).map(|i| format!("c{i}")).collect();
        let rows: Vec<Vec<f64>> = (0..200).map(|_| (0..7).map(|_| rng.next_f64()).collect()).collect();
        let truth: Vec<usize> = (0..200).map(|_| rng.below(7) as usize).collect();
        let r = EvalReport::from_scores(&names, &rows, &truth, None, "d").unwrap();
        assert!(r.top1 <= r.top5);
        for (c, recall) in &r.per_class_recall {
            let row = &r.confusion[c];
            let total: usize = row.values().sum();
            assert_eq!(total, truth.iter().filter(|&&t| names[t] == *c).count());
            assert_eq!(*recall, row.get(c).copied().unwrap_or(0) as f64 / total as f64);
        }
        let mut prev = 0.0;
        for k in 1..=7 {
            let acc = topk_accuracy(&rows, &truth, k).unwrap();
            assert!(acc >= prev);
            prev = acc;
        }
    }

    struct Sleepy(Duration);

    impl BatchClassifier for Sleepy {
        fn classify_batch(&self, images: &[&RgbImage]) -> Result<Vec<Vec<f64>>, ModelError> {
            std::thread::sleep(self.0 * images.len() as u32);
            Ok(vec![vec![1.0]; images.len()])
        }
    }

    #[test]
    fn throughput_identity_and_errors() {
        let imgs = vec![RgbImage::new(2, 2); 10];
        let t = measure_throughput(&Sleepy(Duration::from_millis(1)), &imgs, 4).unwrap();
        assert_eq!(t.image_count, 10);
        assert_eq!(t.batch_size, 4);
        assert!((t.images_per_second * t.wall_seconds - 10.0).abs() < 1e-9);
        assert!(measure_throughput(&Sleepy(Duration::ZERO), &[], 4).is_err());
    }
}
