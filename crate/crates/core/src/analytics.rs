//! Production metrics over the query and feedback logs.

use crate::api::{latest_feedback, FeedbackRecord, QueryRecord};
use chrono::{DateTime, FixedOffset, NaiveDate, Timelike, Utc};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnalyticsError {
    #[error("invalid window {0:?}: expected <start>/<end> with RFC 3339 times or dates")]
    Window(String),
    #[error("invalid time zone {0:?}: expected UTC or an offset like +08:00")]
    TimeZone(String),
    #[error("threshold {0} outside [0, 1]")]
    Threshold(f64),
}

/// Half-open `[start, end)` in UTC seconds; either bound may be open.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start: Option<i64>,
    pub end: Option<i64>,
}

fn parse_instant(s: &str) -> Option<i64> {
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.timestamp());
    }
    let d = NaiveDate::parse_from_str(s, "%Y-%m-%d").ok()?;
    Some(d.and_hms_opt(0, 0, 0)?.and_utc().timestamp())
}

impl Window {
    pub fn all() -> Self {
        Window::default()
    }

    /// ISO 8601 interval `<start>/<end>`; `..` or an empty side leaves it
    /// open, and `all` or an empty string means unbounded.
    pub fn parse(s: &str) -> Result<Self, AnalyticsError> {
        let s = s.trim();
        if s.is_empty() || s == "all" {
            return Ok(Window::all());
        }
        let err = || AnalyticsError::Window(s.to_string());
        let (a, b) = s.split_once('/').ok_or_else(err)?;
        let side = |t: &str| -> Result<Option<i64>, AnalyticsError> {
            let t = t.trim();
            if t.is_empty() || t == ".." {
                Ok(None)
            } else {
                parse_instant(t).map(Some).ok_or_else(err)
            }
        };
        let w = Window {
            start: side(a)?,
            end: side(b)?,
        };
        if let (Some(x), Some(y)) = (w.start, w.end) {
            if x > y {
                return Err(err());
            }
        }
        Ok(w)
    }

    pub fn contains(&self, t: i64) -> bool {
        self.start.is_none_or(|s| t >= s) && self.end.is_none_or(|e| t < e)
    }

    pub fn describe(&self) -> String {
        let fmt = |t: Option<i64>| {
            t.and_then(|t| DateTime::<Utc>::from_timestamp(t, 0))
                .map(|d| d.to_rfc3339())
                .unwrap_or_else(|| "..".to_string())
        };
        format!("{}/{}", fmt(self.start), fmt(self.end))
    }
}

/// `UTC`, `Z` or a fixed offset such as `+08:00`.
pub fn parse_time_zone(s: &str) -> Result<FixedOffset, AnalyticsError> {
    let t = s.trim();
    if t.eq_ignore_ascii_case("utc") || t == "Z" {
        return Ok(FixedOffset::east_opt(0).expect("zero offset"));
    }
    t.parse::<FixedOffset>()
        .map_err(|_| AnalyticsError::TimeZone(s.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductionAccuracy {
    pub window: String,
    pub feedback_count: usize,
    /// `None` when there is no feedback in the window.
    pub top1: Option<f64>,
    pub top5: Option<f64>,
}

/// Pairs of (latest feedback, its query) whose feedback falls in `window`.
fn joined<'a>(
    queries: &'a [QueryRecord],
    feedback: &'a [FeedbackRecord],
    window: &Window,
) -> Vec<(&'a FeedbackRecord, &'a QueryRecord)> {
    let by_qid: HashMap<&str, &QueryRecord> = queries.iter().map(|q| (q.qid.as_str(), q)).collect();
    latest_feedback(feedback)
        .into_values()
        .filter(|f| window.contains(f.timestamp))
        .filter_map(|f| by_qid.get(f.qid.as_str()).map(|q| (f, *q)))
        .collect()
}

/// Top-1/top-5 agreement between users' chosen labels and the served
/// ranking, using the latest feedback per query.
pub fn feedback_accuracy(queries: &[QueryRecord], feedback: &[FeedbackRecord], window: &Window) -> ProductionAccuracy {
    let pairs = joined(queries, feedback, window);
    let n = pairs.len();
    let frac = |hits: usize| (n > 0).then(|| hits as f64 / n as f64);
    let top1 = pairs.iter().filter(|(f, q)| q.in_topk(&f.chosen_label, 1)).count();
    let top5 = pairs.iter().filter(|(f, q)| q.in_topk(&f.chosen_label, 5)).count();
    ProductionAccuracy {
        window: window.describe(),
        feedback_count: n,
        top1: frac(top1),
        top5: frac(top5),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsageHistogram {
    /// Query counts per local hour 0..24.
    pub buckets: Vec<u64>,
    pub total: u64,
    pub utc_offset: String,
}

pub fn usage_histogram(queries: &[QueryRecord], window: &Window, tz: FixedOffset) -> UsageHistogram {
    let mut buckets = vec![0u64; 24];
    for q in queries.iter().filter(|q| window.contains(q.timestamp)) {
        if let Some(t) = DateTime::<Utc>::from_timestamp(q.timestamp, 0) {
            buckets[t.with_timezone(&tz).hour() as usize] += 1;
        }
    }
    UsageHistogram {
        total: buckets.iter().sum(),
        buckets,
        utc_offset: tz.to_string(),
    }
}

/// Hours whose count exceeds mean + 1 population standard deviation.
/// Adjacent such hours (wrapping at midnight) form one peak, reported at
/// its busiest hour, earliest on ties. Result is ascending.
pub fn detect_peaks(hist: &UsageHistogram) -> Vec<u32> {
    let b = &hist.buckets;
    let n = b.len();
    if n == 0 {
        return Vec::new();
    }
    let mean = b.iter().sum::<u64>() as f64 / n as f64;
    let var = b.iter().map(|&c| (c as f64 - mean).powi(2)).sum::<f64>() / n as f64;
    let threshold = mean + var.sqrt();
    let above: Vec<bool> = b.iter().map(|&c| c as f64 > threshold).collect();
    if above.iter().all(|&a| a) || !above.iter().any(|&a| a) {
        return Vec::new();
    }
    // start scanning just after a quiet hour so no run wraps
    let start = (0..n).find(|&h| !above[h]).expect("some hour is quiet") + 1;
    let mut peaks = Vec::new();
    let mut run: Option<usize> = None;
    for step in 0..n {
        let h = (start + step) % n;
        if above[h] {
            run = Some(match run {
                Some(best) if b[best] > b[h] || (b[best] == b[h] && best < h) => best,
                _ => h,
            });
        } else if let Some(best) = run.take() {
            peaks.push(best as u32);
        }
    }
    if let Some(best) = run {
        peaks.push(best as u32);
    }
    peaks.sort_unstable();
    peaks
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseStudy {
    pub label: String,
    pub queries: usize,
    pub top1: f64,
    pub top5: f64,
    /// Most frequent served top-1 for this label, smallest name on ties.
    pub most_common_top1: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CaseStudyThresholds {
    pub min_queries: usize,
    pub top5_floor: f64,
    pub top1_ceiling: f64,
}

impl Default for CaseStudyThresholds {
    fn default() -> Self {
        CaseStudyThresholds {
            min_queries: 10,
            top5_floor: 0.8,
            top1_ceiling: 0.4,
        }
    }
}

/// Feedback labels that the model usually ranks in the top 5 but rarely
/// first. Free-text `other` labels are skipped.
pub fn low_top1_high_top5(
    queries: &[QueryRecord],
    feedback: &[FeedbackRecord],
    window: &Window,
    t: &CaseStudyThresholds,
) -> Result<Vec<CaseStudy>, AnalyticsError> {
    for v in [t.top5_floor, t.top1_ceiling] {
        if !(0.0..=1.0).contains(&v) {
            return Err(AnalyticsError::Threshold(v));
        }
    }
    #[derive(Default)]
    struct Acc<'a> {
        n: usize,
        top1: usize,
        top5: usize,
        served: BTreeMap<&'a str, usize>,
    }
    let mut by_label: BTreeMap<&str, Acc> = BTreeMap::new();
    for (f, q) in joined(queries, feedback, window) {
        let label = f.chosen_label.as_str();
        if label == "other" || label.starts_with("other:") {
            continue;
        }
        let acc = by_label.entry(label).or_default();
        acc.n += 1;
        acc.top1 += q.in_topk(label, 1) as usize;
        acc.top5 += q.in_topk(label, 5) as usize;
        if let Some(first) = q.top1() {
            *acc.served.entry(first).or_default() += 1;
        }
    }
    Ok(by_label
        .into_iter()
        .filter(|(_, a)| a.n >= t.min_queries && a.n > 0)
        .filter_map(|(label, a)| {
            let top1 = a.top1 as f64 / a.n as f64;
            let top5 = a.top5 as f64 / a.n as f64;
            if top5 < t.top5_floor || top1 > t.top1_ceiling {
                return None;
            }
            let mut best: Option<(&str, usize)> = None;
            for (&name, &c) in &a.served {
                if best.is_none_or(|(_, b)| c > b) {
                    best = Some((name, c));
                }
            }
            Some(CaseStudy {
                label: label.to_string(),
                queries: a.n,
                top1,
                top5,
                most_common_top1: best.map(|b| b.0.to_string()).unwrap_or_default(),
            })
        })
        .collect())
}
