use super::{CorpusError, ManifestEntry};
use crate::rng::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train: f64, val: f64, test: f64, seed: u64) -> Self {
        SplitSpec {
            train,
            val,
            test,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let fr = [self.train, self.val, self.test];
        if fr.iter().any(|f| !(*f > 0.0 && *f < 1.0)) {
            return Err(CorpusError::InvalidSplit("each fraction must lie in (0, 1)".into()));
        }
        if (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(CorpusError::InvalidSplit("fractions must sum to 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

/// Per-class split sizes by largest remainder: each split gets
/// `floor(f * n)` and the leftover images go to the splits with the largest
/// fractional parts, ties ordered by `tie_order`.
fn allocate(n: usize, fractions: [f64; 3], tie_order: [usize; 3]) -> [usize; 3] {
    let exact = fractions.map(|f| f * n as f64);
    // absorb representation error such as 0.7 * 10 = 6.999...
    let mut sizes = exact.map(|x| (x + 1e-9).floor() as usize);
    let mut left = n - sizes.iter().sum::<usize>();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let fa = exact[a] - sizes[a] as f64;
        let fb = exact[b] - sizes[b] as f64;
        fb.total_cmp(&fa).then(tie_order[a].cmp(&tie_order[b]))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        sizes[i] += 1;
        left -= 1;
    }
    sizes
}

/// Stratified train/val/test split. Classes are visited in label order;
/// within a class, ids are sorted and then shuffled with a per-class stream
/// of the split seed. Output lists are sorted by id.
pub fn stratified_split(entries: &[ManifestEntry], spec: &SplitSpec) -> Result<Splits, CorpusError> {
    spec.validate()?;
    let mut by_class: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for e in entries {
        by_class.entry(e.label.as_str()).or_default().push(e.id.as_str());
    }
    let mut out = Splits::default();
    for (ci, (label, ids)) in by_class.iter_mut().enumerate() {
        if ids.len() < 3 {
            return Err(CorpusError::ClassTooSmall {
                label: label.to_string(),
                count: ids.len(),
            });
        }
        ids.sort_unstable();
        let mut rng = Rng::derive(spec.seed, ci as u64);
        rng.shuffle(ids);
        let mut tie = [0usize, 1, 2];
        rng.shuffle(&mut tie);
        let [n_train, n_val, _] = allocate(ids.len(), [spec.train, spec.val, spec.test], tie);
        for (i, id) in ids.iter().enumerate() {
            let bucket = if i < n_train {
                &mut out.train
            } else if i < n_train + n_val {
                &mut out.val
            } else {
                &mut out.test
            };
            bucket.push(id.to_string());
        }
    }
    out.train.sort();
    out.val.sort();
    out.test.sort();
    Ok(out)
}
