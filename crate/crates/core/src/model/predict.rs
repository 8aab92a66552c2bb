use super::{softmax_row, Checkpoint, ModelError, Tensor};
use crate::image::RgbImage;
use std::cmp::Ordering;

/// Indices ordered by descending score, ties by ascending index.
///
/// NaN sorts after every number.
pub fn rank_indices(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| rank_cmp(scores[a], scores[b]).then(a.cmp(&b)));
    idx
}

fn rank_cmp(a: f64, b: f64) -> Ordering {
    match (a.is_nan(), b.is_nan()) {
        (true, true) => Ordering::Equal,
        (true, false) => Ordering::Greater,
        (false, true) => Ordering::Less,
        _ => b.partial_cmp(&a).unwrap_or(Ordering::Equal),
    }
}

/// Pixel scaling used by training and inference: `v / 255 - 0.5`.
pub(crate) fn normalize_pixel(v: u8) -> f64 {
    v as f64 / 255.0 - 0.5
}

/// Stacks images into an `(N, H, W, 3)` input tensor.
pub fn image_tensor(images: &[&RgbImage], input: (usize, usize, usize)) -> Result<Tensor, ModelError> {
    let (h, w, c) = input;
    if c != 3 {
        return Err(ModelError::Shape(format!("model expects {c} channels, images have 3")));
    }
    let mut data = Vec::with_capacity(images.len() * h * w * c);
    for img in images {
        if img.width() != w || img.height() != h {
            return Err(ModelError::Shape(format!(
                "image is {}x{}, model expects {w}x{h}",
                img.width(),
                img.height()
            )));
        }
        data.extend(img.as_raw().iter().map(|&v| normalize_pixel(v)));
    }
    Tensor::new(vec![images.len(), h, w, c], data)
}

/// Top `k` labels with softmax scores, best first.
pub fn predict_topk(checkpoint: &Checkpoint, image: &RgbImage, k: usize) -> Result<Vec<(String, f64)>, ModelError> {
    if k == 0 {
        return Err(ModelError::Shape("k must be at least 1".into()));
    }
    let probs = checkpoint.probabilities(&[image])?;
    Ok(topk_from_probs(checkpoint.label_space(), &probs[0], k))
}

pub(crate) fn topk_from_probs(labels: &[String], probs: &[f64], k: usize) -> Vec<(String, f64)> {
    rank_indices(probs)
        .into_iter()
        .take(k)
        .map(|i| (labels[i].clone(), probs[i]))
        .collect()
}

/// Softmax probabilities for a batch of logits rows.
pub(crate) fn prob_rows(logits: &Tensor) -> Vec<Vec<f64>> {
    logits.iter_rows().map(softmax_row).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Activation, LayerSpec, ModelConfig, TrainingMetadata};
    use crate::rng::Rng;
    use proptest::prelude::*;

    fn zero_checkpoint(classes: usize) -> Checkpoint {
        let cfg = ModelConfig {
            input: (4, 4, 3),
            layers: vec![LayerSpec::Dense {
                units: classes,
                activation: Activation::Identity,
            }],
            num_classes: classes,
        };
        let n = cfg.parameter_count().unwrap();
        let mut labels: Vec<String> = (1..classes).map(|i| format!("c{i}")).collect();
        labels.insert(0, "non_food".into());
        Checkpoint::new(cfg, labels, vec![0.0; n], TrainingMetadata::default()).unwrap()
    }

    #[test]
    fn uniform_logits_follow_label_order() {
        let ck = zero_checkpoint(5);
        let img = RgbImage::filled(4, 4, [10, 20, 30]);
        let top = predict_topk(&ck, &img, 3).unwrap();
        let names: Vec<&str> = top.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, ["non_food", "c1", "c2"]);
        for (_, s) in &top {
            assert!((s - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn full_k_is_permutation() {
        let ck = zero_checkpoint(4);
        let img = RgbImage::filled(4, 4, [1, 2, 3]);
        let mut names: Vec<String> = predict_topk(&ck, &img, 10).unwrap().into_iter().map(|p| p.0).collect();
        assert_eq!(names.len(), 4);
        names.sort();
        let mut expected = ck.label_space().to_vec();
        expected.sort();
        assert_eq!(names, expected);
        assert!(predict_topk(&ck, &img, 0).is_err());
        assert!(predict_topk(&ck, &RgbImage::filled(5, 4, [0; 3]), 1).is_err());
    }

    fn brute_rank(scores: &[f64]) -> Vec<usize> {
        // position of i = number of entries ranked ahead of it
        let mut out = vec![0; scores.len()];
        for i in 0..scores.len() {
            let ahead = (0..scores.len())
                .filter(|&j| scores[j] > scores[i] || (scores[j] == scores[i] && j < i))
                .count();
            out[ahead] = i;
        }
        out
    }

    #[test]
    fn rank_matches_brute_force_on_random_rows() {
        let mut rng = Rng::new(99);
        for _ in 0..1000 {
            let n = 1 + rng.below(15) as usize;
            // coarse values force plenty of ties
            let row: Vec<f64> = (0..n).map(|_| rng.below(6) as f64 / 5.0).collect();
            assert_eq!(rank_indices(&row), brute_rank(&row));
        }
    }

    proptest! {
        #[test]
        fn ranking_is_descending(row in proptest::collection::vec(-5.0f64..5.0, 1..30)) {
            let r = rank_indices(&row);
            for w in r.windows(2) {
                prop_assert!(row[w[0]] > row[w[1]] || (row[w[0]] == row[w[1]] && w[0] < w[1]));
            }
        }
    }
}
