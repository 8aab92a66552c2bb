//! Classify/feedback contract shared by the service, analytics and CLI:
//! response building, API keys, query and feedback records, qids.

use crate::model::rank_indices;
use crate::rng::{mix64, Rng};
use crate::taxonomy::{Taxonomy, NON_FOOD_ID};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use thiserror::Error;

/// Wire names of a classify response, in serialization order.
pub const RESPONSE_FIELDS: [&str; 7] = [
    "food_result",
    "food_results_by_category",
    "non_food",
    "qid",
    "status_code",
    "status_msg",
    "time_cost",
];

/// Entries kept in each ranked list of a response.
pub const RESULT_LIMIT: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredName {
    pub name: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyResponse {
    pub food_result: Vec<ScoredName>,
    pub food_results_by_category: Vec<ScoredName>,
    pub non_food: bool,
    pub qid: String,
    pub status_code: u16,
    pub status_msg: String,
    /// Inference wall time in seconds.
    pub time_cost: f64,
}

/// Body of every non-200 reply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub status_code: u16,
    pub status_msg: String,
}

/// Ranked visual foods and categories for one probability row.
///
/// Labels retired by taxonomy merges are mapped to their current visual
/// food and their probabilities pooled. `non_food` is decided on the raw
/// argmax; the non-food class never appears in either list.
pub fn build_response(
    label_space: &[String],
    probs: &[f64],
    taxonomy: &Taxonomy,
    qid: String,
    time_cost: f64,
) -> ClassifyResponse {
    let argmax = rank_indices(probs)[0];
    let non_food = label_space[argmax] == NON_FOOD_ID;

    let mut names: Vec<String> = Vec::new();
    let mut pooled: Vec<f64> = Vec::new();
    for (label, &p) in label_space.iter().zip(probs) {
        let current = taxonomy.resolve_label(label).unwrap_or_else(|| label.clone());
        match names.iter().position(|n| *n == current) {
            Some(i) => pooled[i] += p,
            None => {
                names.push(current);
                pooled.push(p);
            }
        }
    }
    let food_result: Vec<ScoredName> = rank_indices(&pooled)
        .into_iter()
        .filter(|&i| names[i] != NON_FOOD_ID)
        .take(RESULT_LIMIT)
        .map(|i| ScoredName {
            name: names[i].clone(),
            score: pooled[i],
        })
        .collect();

    let mut categories: BTreeMap<String, f64> = BTreeMap::new();
    for (name, &p) in names.iter().zip(&pooled) {
        for (cat, w) in taxonomy.category_weights(name) {
            *categories.entry(cat).or_default() += p * w;
        }
    }
    let cat_names: Vec<String> = categories.keys().cloned().collect();
    let cat_scores: Vec<f64> = categories.values().copied().collect();
    let food_results_by_category = rank_indices(&cat_scores)
        .into_iter()
        .take(RESULT_LIMIT)
        .map(|i| ScoredName {
            name: cat_names[i].clone(),
            score: cat_scores[i],
        })
        .collect();

    ClassifyResponse {
        food_result,
        food_results_by_category,
        non_food,
        qid,
        status_code: 200,
        status_msg: "OK".to_string(),
        time_cost,
    }
}

/// Opaque 32-hex query ids: a per-process prefix and a mixed counter.
#[derive(Debug)]
pub struct QidGenerator {
    prefix: u64,
    counter: AtomicU64,
}

impl QidGenerator {
    /// Reproducible sequence for a fixed seed.
    pub fn seeded(seed: u64) -> Self {
        QidGenerator {
            prefix: Rng::derive(seed, 0x9d1).next_u64(),
            counter: AtomicU64::new(0),
        }
    }

    /// Prefix drawn from the clock and process id.
    pub fn from_entropy() -> Self {
        let nanos = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_nanos() as u64)
            .unwrap_or(0);
        Self::seeded(nanos ^ ((std::process::id() as u64) << 32))
    }

    pub fn next_qid(&self) -> String {
        let n = self.counter.fetch_add(1, Ordering::Relaxed);
        format!("{:016x}{:016x}", self.prefix, mix64(n))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyStatus {
    Pending,
    Approved,
    Revoked,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiKey {
    pub key: String,
    pub organization: String,
    pub status: KeyStatus,
}

#[derive(Debug, Error)]
pub enum KeyError {
    #[error("organization must not be empty")]
    EmptyOrganization,
    #[error("unknown API key")]
    Unknown,
    #[error("API key is {0:?}, not approved")]
    NotApproved(KeyStatus),
    #[error("{context}: {source}")]
    Io {
        context: String,
        source: std::io::Error,
    },
    #[error("corrupt key store {path}: {source}")]
    Corrupt { path: PathBuf, source: serde_json::Error },
}

/// API keys persisted as one JSON array, rewritten atomically on change.
#[derive(Debug)]
pub struct KeyStore {
    path: PathBuf,
    keys: BTreeMap<String, ApiKey>,
    rng: Rng,
}

impl KeyStore {
    /// Opens or creates the store. `seed` drives key generation.
    pub fn open(path: impl Into<PathBuf>, seed: u64) -> Result<Self, KeyError> {
        let path = path.into();
        let keys = match std::fs::read_to_string(&path) {
            Ok(text) => {
                let list: Vec<ApiKey> = serde_json::from_str(&text).map_err(|source| KeyError::Corrupt {
                    path: path.clone(),
                    source,
                })?;
                list.into_iter().map(|k| (k.key.clone(), k)).collect()
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => BTreeMap::new(),
            Err(source) => {
                return Err(KeyError::Io {
                    context: format!("reading {}", path.display()),
                    source,
                })
            }
        };
        // fold existing keys in so a reopened store does not replay them
        let rng = Rng::new(seed ^ mix64(keys.len() as u64));
        Ok(KeyStore { path, keys, rng })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn persist(&self) -> Result<(), KeyError> {
        let list: Vec<&ApiKey> = self.keys.values().collect();
        let text = serde_json::to_string_pretty(&list).expect("keys serialize");
        let io = |source| KeyError::Io {
            context: format!("writing {}", self.path.display()),
            source,
        };
        if let Some(dir) = self.path.parent() {
            std::fs::create_dir_all(dir).map_err(io)?;
        }
        let tmp = self.path.with_extension("json.tmp");
        std::fs::write(&tmp, text).map_err(io)?;
        std::fs::rename(&tmp, &self.path).map_err(io)
    }

    pub fn register(&mut self, organization: &str) -> Result<ApiKey, KeyError> {
        let organization = organization.trim();
        if organization.is_empty() {
            return Err(KeyError::EmptyOrganization);
        }
        let key = loop {
            let k = format!("{:016x}{:016x}", self.rng.next_u64(), self.rng.next_u64());
            if !self.keys.contains_key(&k) {
                break k;
            }
        };
        let api_key = ApiKey {
            key: key.clone(),
            organization: organization.to_string(),
            status: KeyStatus::Pending,
        };
        self.keys.insert(key, api_key.clone());
        self.persist()?;
        Ok(api_key)
    }

    fn set_status(&mut self, key: &str, status: KeyStatus) -> Result<ApiKey, KeyError> {
        let entry = self.keys.get_mut(key).ok_or(KeyError::Unknown)?;
        entry.status = status;
        let out = entry.clone();
        self.persist()?;
        Ok(out)
    }

    pub fn approve(&mut self, key: &str) -> Result<ApiKey, KeyError> {
        self.set_status(key, KeyStatus::Approved)
    }

    pub fn revoke(&mut self, key: &str) -> Result<ApiKey, KeyError> {
        self.set_status(key, KeyStatus::Revoked)
    }

    pub fn get(&self, key: &str) -> Option<&ApiKey> {
        self.keys.get(key)
    }

    pub fn list(&self) -> impl Iterator<Item = &ApiKey> {
        self.keys.values()
    }

    /// Succeeds only for approved keys.
    pub fn authorize(&self, key: &str) -> Result<&ApiKey, KeyError> {
        let k = self.keys.get(key).ok_or(KeyError::Unknown)?;
        match k.status {
            KeyStatus::Approved => Ok(k),
            other => Err(KeyError::NotApproved(other)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub qid: String,
    /// UTC seconds.
    pub timestamp: i64,
    pub api_key: String,
    /// Stored image, relative to the storage root.
    pub image_ref: String,
    pub response: ClassifyResponse,
}

impl QueryRecord {
    pub fn top1(&self) -> Option<&str> {
        self.response.food_result.first().map(|s| s.name.as_str())
    }

    /// Whether `label` is within the first `k` food results.
    pub fn in_topk(&self, label: &str, k: usize) -> bool {
        self.response.food_result.iter().take(k).any(|s| s.name == label)
    }
}

/// Query challenge categories used when triaging user photos.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ChallengeTag {
    /// Easy to classify.
    A,
    /// Inter-class similarity.
    B,
    /// Intra-class diversity.
    C,
    /// Incomplete food.
    D,
    /// Non-food.
    E,
    /// Poorly taken photo.
    F,
    /// Multiple food items.
    G,
    /// Unknown food.
    H,
}

impl std::str::FromStr for ChallengeTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s.trim().to_ascii_uppercase().as_str() {
            "A" => ChallengeTag::A,
            "B" => ChallengeTag::B,
            "C" => ChallengeTag::C,
            "D" => ChallengeTag::D,
            "E" => ChallengeTag::E,
            "F" => ChallengeTag::F,
            "G" => ChallengeTag::G,
            "H" => ChallengeTag::H,
            _ => return Err(format!("challenge tag must be one of A-H, got {s:?}")),
        })
    }
}

/// A user's correction: a label-space id, or free text outside it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FeedbackLabel {
    VisualFood(String),
    Other(Option<String>),
}

impl FeedbackLabel {
    /// Accepts `other`, `other:<text>` or an id present in `labels`.
    pub fn parse(raw: &str, labels: &[String]) -> Result<Self, String> {
        let raw = raw.trim();
        if raw == "other" {
            return Ok(FeedbackLabel::Other(None));
        }
        if let Some(text) = raw.strip_prefix("other:") {
            let text = text.trim();
            return Ok(FeedbackLabel::Other((!text.is_empty()).then(|| text.to_string())));
        }
        if labels.iter().any(|l| l == raw) {
            Ok(FeedbackLabel::VisualFood(raw.to_string()))
        } else {
            Err(format!("unknown label {raw:?}; use a visual food id or other[:text]"))
        }
    }

    pub fn as_wire(&self) -> String {
        match self {
            FeedbackLabel::VisualFood(id) => id.clone(),
            FeedbackLabel::Other(None) => "other".into(),
            FeedbackLabel::Other(Some(t)) => format!("other:{t}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackRecord {
    pub qid: String,
    /// Visual food id, `other` or `other:<text>`.
    pub chosen_label: String,
    pub challenge_tag: Option<ChallengeTag>,
    /// UTC seconds.
    pub timestamp: i64,
}

/// Latest feedback per qid: greatest timestamp, later log position on ties.
pub fn latest_feedback(feedback: &[FeedbackRecord]) -> BTreeMap<&str, &FeedbackRecord> {
    let mut out: BTreeMap<&str, &FeedbackRecord> = BTreeMap::new();
    for f in feedback {
        match out.get(f.qid.as_str()) {
            Some(prev) if prev.timestamp > f.timestamp => {}
            _ => {
                out.insert(f.qid.as_str(), f);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn taxonomy() -> Taxonomy {
        let mut t = Taxonomy::new();
        let noodles = t.add_super_category("Noodles").unwrap();
        let drinks = t.add_super_category("Beverages").unwrap();
        t.add_food_item("mee rebus", &noodles.id, None).unwrap();
        t.add_food_item("mee kuah", &noodles.id, None).unwrap();
        t.add_food_item("kopi o", &drinks.id, None).unwrap();
        t
    }

    fn labels() -> Vec<String> {
        vec!["kopi_o".into(), "mee_kuah".into(), "mee_rebus".into(), "non_food".into()]
    }

    #[test]
    fn response_lists_and_categories() {
        let tax = taxonomy();
        let r = build_response(&labels(), &[0.1, 0.2, 0.3, 0.4], &tax, "q".into(), 0.01);
        assert!(r.non_food);
        let names: Vec<&str> = r.food_result.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(names, ["mee_rebus", "mee_kuah", "kopi_o"]);
        assert_eq!(r.food_results_by_category[0].name, "noodles");
        assert!((r.food_results_by_category[0].score - 0.5).abs() < 1e-12);
        assert!((r.food_results_by_category[1].score - 0.1).abs() < 1e-12);
        let v = serde_json::to_value(&r).unwrap();
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(|k| k.as_str()).collect();
        let mut expected = RESPONSE_FIELDS.to_vec();
        expected.sort();
        let mut got = keys.clone();
        got.sort();
        assert_eq!(got, expected);
    }

    #[test]
    fn merged_labels_are_pooled() {
        let mut tax = taxonomy();
        tax.merge_visual_foods("mee_kuah", "mee_rebus", "mee rebus kuah").unwrap();
        let r = build_response(&labels(), &[0.3, 0.2, 0.25, 0.25], &tax, "q".into(), 0.0);
        assert!(!r.non_food);
        assert_eq!(r.food_result[0].name, "mee_rebus_kuah");
        assert!((r.food_result[0].score - 0.45).abs() < 1e-12);
        assert_eq!(r.food_result.len(), 2);
    }

    #[test]
    fn qids_are_unique_and_reproducible() {
        let a = QidGenerator::seeded(3);
        let b = QidGenerator::seeded(3);
        let qa: Vec<String> = (0..1000).map(|_| a.next_qid()).collect();
        let qb: Vec<String> = (0..1000).map(|_| b.next_qid()).collect();
        assert_eq!(qa, qb);
        assert_eq!(qa.iter().collect::<HashSet<_>>().len(), 1000);
        assert!(qa.iter().all(|q| q.len() == 32 && q.chars().all(|c| c.is_ascii_hexdigit())));
    }

    #[test]
    fn key_lifecycle_persists() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("keys.json");
        let mut store = KeyStore::open(&path, 1).unwrap();
        let k = store.register("Clinic").unwrap();
        assert_eq!(k.key.len(), 32);
        assert!(matches!(store.authorize(&k.key), Err(KeyError::NotApproved(KeyStatus::Pending))));
        store.approve(&k.key).unwrap();
        assert!(store.authorize(&k.key).is_ok());
        assert!(matches!(store.approve("0123"), Err(KeyError::Unknown)));
        assert!(store.register("  ").is_err());

        let mut reopened = KeyStore::open(&path, 1).unwrap();
        assert!(reopened.authorize(&k.key).is_ok());
        let k2 = reopened.register("Other").unwrap();
        assert_ne!(k2.key, k.key);
        reopened.revoke(&k.key).unwrap();
        assert!(reopened.authorize(&k.key).is_err());
    }

    #[test]
    fn feedback_labels() {
        let l = labels();
        assert_eq!(FeedbackLabel::parse("kopi_o", &l).unwrap(), FeedbackLabel::VisualFood("kopi_o".into()));
        assert_eq!(FeedbackLabel::parse("other", &l).unwrap(), FeedbackLabel::Other(None));
        assert_eq!(
            FeedbackLabel::parse("other:durian puff", &l).unwrap().as_wire(),
            "other:durian puff"
        );
        assert!(FeedbackLabel::parse("pizza", &l).is_err());
        assert!("Z".parse::<ChallengeTag>().is_err());
        assert_eq!("g".parse::<ChallengeTag>().unwrap(), ChallengeTag::G);
    }

    #[test]
    fn latest_feedback_wins() {
        let f = |qid: &str, label: &str, ts| FeedbackRecord {
            qid: qid.into(),
            chosen_label: label.into(),
            challenge_tag: None,
            timestamp: ts,
        };
        let log = vec![f("a", "x", 10), f("b", "y", 5), f("a", "z", 10), f("b", "w", 4)];
        let latest = latest_feedback(&log);
        assert_eq!(latest["a"].chosen_label, "z");
        assert_eq!(latest["b"].chosen_label, "y");
    }
}
