//! Deterministic stand-in for a crawled food photo corpus.
//!
//! Each food class is a coloured shape prototype on a noisy pale
//! background. Confusable classes share a shape and sit at nearby hues so
//! their renderings overlap. Non-food images are pure noise or colour
//! gradients.

use super::{CorpusError, DatasetVersion, ImageRecord, RecordSource};
use crate::image::RgbImage;
use crate::rng::Rng;
use crate::taxonomy::{Taxonomy, NON_FOOD_ID};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Circle,
    Square,
    Triangle,
    Stripes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticClass {
    /// Visual food id the images are labelled with.
    pub id: String,
    /// Super category used when a matching taxonomy is built.
    #[serde(default = "default_category")]
    pub super_category: String,
    pub count: usize,
    pub shape: Shape,
    /// Degrees in [0, 360).
    pub base_hue: f64,
    /// Half-width of the uniform hue perturbation, degrees.
    pub hue_jitter: f64,
}

fn default_category() -> String {
    "synthetic".to_string()
}

fn default_size() -> usize {
    32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCorpusSpec {
    pub classes: Vec<SyntheticClass>,
    #[serde(default)]
    pub confusable_pairs: Vec<(String, String)>,
    /// Images in the non-food class; 0 leaves it empty.
    #[serde(default)]
    pub non_food_count: usize,
    #[serde(default = "default_size")]
    pub image_size: usize,
    pub seed: u64,
}

impl SyntheticCorpusSpec {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.classes.is_empty() {
            return Err(CorpusError::InvalidSpec("no classes".into()));
        }
        if self.image_size < 8 {
            return Err(CorpusError::InvalidSpec("image_size must be >= 8".into()));
        }
        let mut ids = BTreeSet::new();
        for c in &self.classes {
            if c.count == 0 {
                return Err(CorpusError::InvalidSpec(format!("class {} has count 0", c.id)));
            }
            if c.id == NON_FOOD_ID {
                return Err(CorpusError::InvalidSpec(
                    "non-food is configured through non_food_count".into(),
                ));
            }
            if !ids.insert(c.id.as_str()) {
                return Err(CorpusError::InvalidSpec(format!("duplicate class {}", c.id)));
            }
            if !(0.0..=180.0).contains(&c.hue_jitter) {
                return Err(CorpusError::InvalidSpec(format!("hue_jitter of {}", c.id)));
            }
        }
        for (a, b) in &self.confusable_pairs {
            let ca = self.class(a);
            let cb = self.class(b);
            let (Some(ca), Some(cb)) = (ca, cb) else {
                return Err(CorpusError::InvalidSpec(format!(
                    "confusable pair ({a}, {b}) references an unlisted class"
                )));
            };
            if ca.shape != cb.shape {
                return Err(CorpusError::InvalidSpec(format!(
                    "confusable pair ({a}, {b}) must share a shape"
                )));
            }
            if hue_distance(ca.base_hue, cb.base_hue) > ca.hue_jitter + cb.hue_jitter {
                return Err(CorpusError::InvalidSpec(format!(
                    "confusable pair ({a}, {b}) hue ranges do not overlap"
                )));
            }
        }
        Ok(())
    }

    fn class(&self, id: &str) -> Option<&SyntheticClass> {
        self.classes.iter().find(|c| c.id == id)
    }

    /// Taxonomy with one super category per distinct `super_category`, one
    /// item and singleton visual food per class, plus the non-food sentinel.
    pub fn taxonomy(&self) -> Result<Taxonomy, CorpusError> {
        let mut tax = Taxonomy::new();
        for c in &self.classes {
            let cat = crate::taxonomy::slugify(&c.super_category);
            if tax.super_category(&cat).is_none() {
                tax.add_super_category(&c.super_category)?;
            }
            let item = tax.add_food_item(&c.id, &cat, None)?;
            if item.visual_food_id != c.id {
                return Err(CorpusError::InvalidSpec(format!(
                    "class id {:?} is not a snake_case slug",
                    c.id
                )));
            }
        }
        Ok(tax)
    }
}

/// The imbalanced 12-class corpus used by the focal-loss experiment:
/// 11 food classes plus non-food, counts 15 to 200 (ratio 13.3, mirroring
/// 174 vs 2,312 images per class) and two confusable pairs in which the
/// minority member is the one at risk.
pub fn standard_spec(seed: u64) -> SyntheticCorpusSpec {
    let class = |id: &str, cat: &str, count, shape, hue: f64, jitter: f64| SyntheticClass {
        id: id.to_string(),
        super_category: cat.to_string(),
        count,
        shape,
        base_hue: hue,
        hue_jitter: jitter,
    };
    SyntheticCorpusSpec {
        classes: vec![
            class("chicken_rice", "rice", 200, Shape::Circle, 45.0, 6.0),
            class("nasi_lemak", "rice", 120, Shape::Circle, 130.0, 6.0),
            class("mee_rebus", "noodles", 160, Shape::Triangle, 30.0, 8.0),
            class("mee_kuah", "noodles", 15, Shape::Triangle, 40.0, 8.0),
            class("kopi_o", "beverages", 140, Shape::Square, 20.0, 6.0),
            class("teh_c", "beverages", 20, Shape::Square, 30.0, 6.0),
            class("laksa", "noodles", 90, Shape::Stripes, 10.0, 6.0),
            class("satay", "grill", 60, Shape::Stripes, 210.0, 6.0),
            class("kaya_toast", "bread", 45, Shape::Square, 100.0, 6.0),
            class("chendol", "desserts", 30, Shape::Triangle, 160.0, 6.0),
            class("ice_kacang", "desserts", 25, Shape::Circle, 300.0, 6.0),
        ],
        confusable_pairs: vec![
            ("mee_rebus".into(), "mee_kuah".into()),
            ("kopi_o".into(), "teh_c".into()),
        ],
        non_food_count: 80,
        image_size: 32,
        seed,
    }
}

pub(crate) fn hue_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

/// HSV (h in degrees, s and v in [0,1]) to 8-bit RGB.
pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let h = h.rem_euclid(360.0) / 60.0;
    let c = v * s;
    let x = c * (1.0 - ((h % 2.0) - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    let q = |u: f64| ((u + m) * 255.0).round().clamp(0.0, 255.0) as u8;
    [q(r), q(g), q(b)]
}

fn clamp_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// One rendered food image. `rng` should be dedicated to this image.
pub fn render_food(class: &SyntheticClass, size: usize, rng: &mut Rng) -> RgbImage {
    let s = size as f64;
    let bg_level = rng.uniform(150.0, 230.0);
    let bg_tint = [rng.uniform(-12.0, 12.0), rng.uniform(-12.0, 12.0), rng.uniform(-12.0, 12.0)];
    let hue = class.base_hue + rng.uniform(-class.hue_jitter, class.hue_jitter);
    let fg = hsv_to_rgb(hue, rng.uniform(0.6, 0.9), rng.uniform(0.6, 0.95));
    let fg_dark = [fg[0] / 2, fg[1] / 2, fg[2] / 2];
    let cx = s / 2.0 + rng.uniform(-s / 8.0, s / 8.0);
    let cy = s / 2.0 + rng.uniform(-s / 8.0, s / 8.0);
    let r = s * rng.uniform(0.22, 0.34);
    let period = rng.uniform(3.0, 5.0);

    let mut img = RgbImage::new(size, size);
    for y in 0..size {
        for x in 0..size {
            let dx = x as f64 + 0.5 - cx;
            let dy = y as f64 + 0.5 - cy;
            let paint = match class.shape {
                Shape::Circle => (dx * dx + dy * dy <= r * r).then_some(fg),
                Shape::Square => (dx.abs() <= 0.85 * r && dy.abs() <= 0.85 * r).then_some(fg),
                Shape::Triangle => {
                    // apex up, base at cy + r/2
                    let top = -r;
                    let bottom = 0.5 * r;
                    let inside = dy >= top && dy <= bottom && {
                        let half = (dy - top) / (bottom - top) * r * 0.9;
                        dx.abs() <= half
                    };
                    inside.then_some(fg)
                }
                Shape::Stripes => (dx.abs() <= r && dy.abs() <= r).then(|| {
                    if ((dx + dy + 2.0 * s) / period).floor() as i64 % 2 == 0 {
                        fg
                    } else {
                        fg_dark
                    }
                }),
            };
            let noise = rng.normal() * 6.0;
            let px = match paint {
                Some(c) => [
                    clamp_u8(c[0] as f64 + noise),
                    clamp_u8(c[1] as f64 + noise),
                    clamp_u8(c[2] as f64 + noise),
                ],
                None => [
                    clamp_u8(bg_level + bg_tint[0] + noise),
                    clamp_u8(bg_level + bg_tint[1] + noise),
                    clamp_u8(bg_level + bg_tint[2] + noise),
                ],
            };
            img.put(x, y, px);
        }
    }
    img
}

/// Non-food image: even indices are uniform noise, odd ones a linear
/// gradient between two random colours.
pub fn render_non_food(index: usize, size: usize, rng: &mut Rng) -> RgbImage {
    let mut img = RgbImage::new(size, size);
    if index % 2 == 0 {
        for y in 0..size {
            for x in 0..size {
                let v = rng.next_u64();
                img.put(x, y, [v as u8, (v >> 8) as u8, (v >> 16) as u8]);
            }
        }
    } else {
        let from = [rng.uniform(0.0, 255.0), rng.uniform(0.0, 255.0), rng.uniform(0.0, 255.0)];
        let to = [rng.uniform(0.0, 255.0), rng.uniform(0.0, 255.0), rng.uniform(0.0, 255.0)];
        let angle = rng.uniform(0.0, std::f64::consts::TAU);
        let (dx, dy) = (angle.cos(), angle.sin());
        let half = size as f64 / 2.0;
        for y in 0..size {
            for x in 0..size {
                let proj = ((x as f64 - half) * dx + (y as f64 - half) * dy) / (half * 1.5);
                let t = (proj * 0.5 + 0.5).clamp(0.0, 1.0);
                let noise = rng.normal() * 3.0;
                img.put(
                    x,
                    y,
                    [
                        clamp_u8(from[0] + (to[0] - from[0]) * t + noise),
                        clamp_u8(from[1] + (to[1] - from[1]) * t + noise),
                        clamp_u8(from[2] + (to[2] - from[2]) * t + noise),
                    ],
                );
            }
        }
    }
    img
}

/// Image id for the `index`-th synthetic image of `label`.
pub fn synthetic_image_id(label: &str, index: usize) -> String {
    format!("{label}_{index:05}")
}

/// Renders every image of the spec in memory as version 1.
pub fn generate(spec: &SyntheticCorpusSpec) -> Result<(DatasetVersion, Vec<ImageRecord>), CorpusError> {
    spec.validate()?;
    let mut records = Vec::new();
    for (ci, class) in spec.classes.iter().enumerate() {
        for i in 0..class.count {
            let mut rng = Rng::derive(spec.seed, ((ci as u64) << 32) | i as u64);
            records.push(ImageRecord {
                id: synthetic_image_id(&class.id, i),
                visual_food_id: class.id.clone(),
                pixels: render_food(class, spec.image_size, &mut rng),
                source: RecordSource::Synthetic,
                version_added: 1,
            });
        }
    }
    for i in 0..spec.non_food_count {
        let mut rng = Rng::derive(spec.seed, (u32::MAX as u64) << 32 | i as u64);
        records.push(ImageRecord {
            id: synthetic_image_id(NON_FOOD_ID, i),
            visual_food_id: NON_FOOD_ID.to_string(),
            pixels: render_non_food(i, spec.image_size, &mut rng),
            source: RecordSource::Synthetic,
            version_added: 1,
        });
    }
    let entries: Vec<_> = records.iter().map(|r| r.manifest_entry()).collect();
    let version = DatasetVersion::from_entries(1, None, &entries);
    Ok((version, records))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn twelve_class_spec() -> SyntheticCorpusSpec {
        let shapes = [Shape::Circle, Shape::Square, Shape::Triangle, Shape::Stripes];
        SyntheticCorpusSpec {
            classes: (0..12)
                .map(|i| SyntheticClass {
                    id: format!("class_{i}"),
                    super_category: "test".into(),
                    count: 20 + i * 280 / 11,
                    shape: shapes[i % 4],
                    base_hue: i as f64 * 30.0,
                    hue_jitter: 5.0,
                })
                .collect(),
            confusable_pairs: vec![],
            non_food_count: 0,
            image_size: 16,
            seed: 3,
        }
    }

    #[test]
    fn counts_read_back_from_manifest() {
        let (version, records) = generate(&twelve_class_spec()).unwrap();
        let min = version.per_class_counts.values().min().unwrap();
        let max = version.per_class_counts.values().max().unwrap();
        assert_eq!((*min, *max), (20, 300));
        assert_eq!(records.len(), version.total());
    }

    #[test]
    fn same_seed_same_digest_and_pixels() {
        let spec = standard_spec(11);
        let (a, ra) = generate(&spec).unwrap();
        let (b, rb) = generate(&spec).unwrap();
        assert_eq!(a.manifest_digest, b.manifest_digest);
        assert!(ra.iter().zip(&rb).all(|(x, y)| x.pixels == y.pixels));
        let (_, rc) = generate(&standard_spec(12)).unwrap();
        assert!(ra.iter().zip(&rc).any(|(x, y)| x.pixels != y.pixels));
    }

    #[test]
    fn standard_spec_mirrors_imbalance_ratio() {
        let spec = standard_spec(0);
        spec.validate().unwrap();
        let counts: Vec<usize> = spec.classes.iter().map(|c| c.count).collect();
        let min = *counts.iter().min().unwrap();
        let max = *counts.iter().max().unwrap().max(&spec.non_food_count);
        assert_eq!((min, max), (15, 200));
        assert!(((max as f64 / min as f64) - 2312.0 / 174.0).abs() < 0.05);
        assert_eq!(spec.classes.len() + 1, 12);
    }

    #[test]
    fn invalid_specs() {
        let mut spec = twelve_class_spec();
        spec.classes.clear();
        assert!(generate(&spec).is_err());

        let mut spec = twelve_class_spec();
        spec.classes[3].count = 0;
        assert!(generate(&spec).is_err());

        let mut spec = twelve_class_spec();
        spec.confusable_pairs.push(("class_0".into(), "class_1".into()));
        assert!(spec.validate().is_err(), "different shapes");

        let mut spec = twelve_class_spec();
        spec.confusable_pairs.push(("class_0".into(), "class_4".into()));
        assert!(spec.validate().is_err(), "hues too far apart");

        let mut spec = twelve_class_spec();
        spec.confusable_pairs.push(("class_0".into(), "ghost".into()));
        assert!(spec.validate().is_err());
    }

    #[test]
    fn confusable_pairs_render_closer_than_other_classes() {
        // mean colour distance between class centroids
        let spec = standard_spec(5);
        let (_, records) = generate(&spec).unwrap();
        let centroid = |label: &str| {
            let imgs: Vec<_> = records.iter().filter(|r| r.visual_food_id == label).collect();
            let mut acc = vec![0.0; 3];
            for r in &imgs {
                for px in r.pixels.as_raw().chunks_exact(3) {
                    for c in 0..3 {
                        acc[c] += px[c] as f64;
                    }
                }
            }
            let n = (imgs.len() * 32 * 32) as f64;
            acc.iter().map(|v| v / n).collect::<Vec<_>>()
        };
        let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
        let rebus = centroid("mee_rebus");
        let kuah = centroid("mee_kuah");
        let chendol = centroid("chendol");
        assert!(dist(&rebus, &kuah) < dist(&rebus, &chendol));
    }

    #[test]
    fn taxonomy_matches_classes() {
        let spec = standard_spec(0);
        let tax = spec.taxonomy().unwrap();
        assert_eq!(tax.label_space().len(), 12);
        assert!(tax.visual_food("mee_kuah").is_some());
        assert!(tax.super_category("noodles").is_some());
    }

    #[test]
    fn hsv_primaries() {
        assert_eq!(hsv_to_rgb(0.0, 1.0, 1.0), [255, 0, 0]);
        assert_eq!(hsv_to_rgb(120.0, 1.0, 1.0), [0, 255, 0]);
        assert_eq!(hsv_to_rgb(240.0, 1.0, 1.0), [0, 0, 255]);
        assert_eq!(hsv_to_rgb(77.0, 0.0, 0.5), [128, 128, 128]);
    }
}
