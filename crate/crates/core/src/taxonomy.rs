//! Super category → food item → visual food hierarchy.
//!
//! Visual foods are the model's label space. Items that cannot be told apart
//! from a photo share one visual food; clients refine a predicted visual food
//! back to its member items. One visual food, `non_food`, is a permanent
//! sentinel with no members.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use thiserror::Error;

pub const NON_FOOD_ID: &str = "non_food";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TaxonomyError {
    #[error("name {0:?} does not produce a valid id")]
    InvalidName(String),
    #[error("unknown super category {0:?}")]
    UnknownCategory(String),
    #[error("unknown food item {0:?}")]
    UnknownItem(String),
    #[error("unknown visual food {0:?}")]
    UnknownVisualFood(String),
    #[error("duplicate name {0:?}")]
    DuplicateName(String),
    #[error("merge needs at least one item")]
    EmptyMerge,
    #[error("cannot merge visual food {0:?} with itself")]
    SelfMerge(String),
    #[error("the non-food class cannot be merged or hold items")]
    NonFoodMerge,
    #[error("taxonomy invariant violated: {0}")]
    Invariant(String),
    #[error("taxonomy document: {0}")]
    Format(String),
    #[error("taxonomy io: {0}")]
    Io(String),
}

type Result<T> = std::result::Result<T, TaxonomyError>;

/// Lowercase snake_case slug: runs of non-alphanumerics collapse to `_`.
pub fn slugify(name: &str) -> String {
    let mut out = String::with_capacity(name.len());
    let mut pending_sep = false;
    for ch in name.chars() {
        if ch.is_ascii_alphanumeric() {
            if pending_sep && !out.is_empty() {
                out.push('_');
            }
            pending_sep = false;
            out.push(ch.to_ascii_lowercase());
        } else {
            pending_sep = true;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuperCategory {
    pub id: String,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoodItem {
    pub id: String,
    pub name: String,
    pub super_category_id: String,
    pub visual_food_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisualFood {
    pub id: String,
    pub name: String,
    pub member_item_ids: BTreeSet<String>,
    pub is_non_food: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeKind {
    Items,
    VisualFoods,
}

/// A retired visual food id and the id its labels move to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemapEntry {
    pub from: String,
    pub to: String,
    pub kind: MergeKind,
}

/// On-disk layout; arrays sorted by id so documents diff cleanly.
#[derive(Serialize, Deserialize)]
struct TaxonomyDocument {
    super_categories: Vec<SuperCategory>,
    food_items: Vec<FoodItem>,
    visual_foods: Vec<VisualFood>,
    remap_log: Vec<RemapEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Taxonomy {
    super_categories: BTreeMap<String, SuperCategory>,
    food_items: BTreeMap<String, FoodItem>,
    visual_foods: BTreeMap<String, VisualFood>,
    remap_log: Vec<RemapEntry>,
}

impl Default for Taxonomy {
    fn default() -> Self {
        Self::new()
    }
}

impl Taxonomy {
    pub fn new() -> Self {
        let mut visual_foods = BTreeMap::new();
        visual_foods.insert(
            NON_FOOD_ID.to_string(),
            VisualFood {
                id: NON_FOOD_ID.to_string(),
                name: NON_FOOD_ID.to_string(),
                member_item_ids: BTreeSet::new(),
                is_non_food: true,
            },
        );
        Taxonomy {
            super_categories: BTreeMap::new(),
            food_items: BTreeMap::new(),
            visual_foods,
            remap_log: Vec::new(),
        }
    }

    pub fn super_categories(&self) -> impl Iterator<Item = &SuperCategory> {
        self.super_categories.values()
    }

    pub fn food_items(&self) -> impl Iterator<Item = &FoodItem> {
        self.food_items.values()
    }

    pub fn visual_foods(&self) -> impl Iterator<Item = &VisualFood> {
        self.visual_foods.values()
    }

    pub fn super_category(&self, id: &str) -> Option<&SuperCategory> {
        self.super_categories.get(id)
    }

    pub fn food_item(&self, id: &str) -> Option<&FoodItem> {
        self.food_items.get(id)
    }

    pub fn visual_food(&self, id: &str) -> Option<&VisualFood> {
        self.visual_foods.get(id)
    }

    pub fn remap_log(&self) -> &[RemapEntry] {
        &self.remap_log
    }

    pub fn item_count(&self) -> usize {
        self.food_items.len()
    }

    pub fn visual_food_count(&self) -> usize {
        self.visual_foods.len()
    }

    /// Visual food ids in ascending order, `non_food` included.
    pub fn label_space(&self) -> Vec<String> {
        self.visual_foods.keys().cloned().collect()
    }

    pub fn add_super_category(&mut self, name: &str) -> Result<SuperCategory> {
        let id = slugify(name);
        if id.is_empty() {
            return Err(TaxonomyError::InvalidName(name.to_string()));
        }
        if self.super_categories.contains_key(&id) {
            return Err(TaxonomyError::DuplicateName(name.to_string()));
        }
        let cat = SuperCategory {
            id: id.clone(),
            name: name.to_string(),
        };
        self.super_categories.insert(id, cat.clone());
        Ok(cat)
    }

    /// Adds an item under `super_category_id`. Without an explicit visual
    /// food the item gets a singleton visual food named after it.
    pub fn add_food_item(
        &mut self,
        name: &str,
        super_category_id: &str,
        visual_food_id: Option<&str>,
    ) -> Result<FoodItem> {
        if !self.super_categories.contains_key(super_category_id) {
            return Err(TaxonomyError::UnknownCategory(super_category_id.to_string()));
        }
        let slug = slugify(name);
        if slug.is_empty() {
            return Err(TaxonomyError::InvalidName(name.to_string()));
        }
        let clash_in_category = self
            .food_items
            .values()
            .any(|it| it.super_category_id == super_category_id && slugify(&it.name) == slug);
        if clash_in_category {
            return Err(TaxonomyError::DuplicateName(name.to_string()));
        }
        let id = if self.food_items.contains_key(&slug) {
            let qualified = format!("{super_category_id}_{slug}");
            if self.food_items.contains_key(&qualified) {
                return Err(TaxonomyError::DuplicateName(name.to_string()));
            }
            qualified
        } else {
            slug
        };

        let vf_id = match visual_food_id {
            Some(vf) => {
                let target = self
                    .visual_foods
                    .get(vf)
                    .ok_or_else(|| TaxonomyError::UnknownVisualFood(vf.to_string()))?;
                if target.is_non_food {
                    return Err(TaxonomyError::NonFoodMerge);
                }
                vf.to_string()
            }
            None => {
                let vf_id = self.fresh_visual_food_id(&id);
                self.visual_foods.insert(
                    vf_id.clone(),
                    VisualFood {
                        id: vf_id.clone(),
                        name: name.to_string(),
                        member_item_ids: BTreeSet::new(),
                        is_non_food: false,
                    },
                );
                vf_id
            }
        };
        self.visual_foods
            .get_mut(&vf_id)
            .expect("visual food present")
            .member_item_ids
            .insert(id.clone());
        let item = FoodItem {
            id: id.clone(),
            name: name.to_string(),
            super_category_id: super_category_id.to_string(),
            visual_food_id: vf_id,
        };
        self.food_items.insert(id, item.clone());
        Ok(item)
    }

    fn fresh_visual_food_id(&self, base: &str) -> String {
        if !self.visual_foods.contains_key(base) {
            return base.to_string();
        }
        (2..)
            .map(|n| format!("{base}_{n}"))
            .find(|candidate| !self.visual_foods.contains_key(candidate))
            .expect("unbounded suffix search")
    }

    /// Moves the listed items into a new visual food called `name`. Visual
    /// foods left without members are retired and remapped to the new one.
    pub fn merge_items_into_visual_food(
        &mut self,
        item_ids: &[&str],
        name: &str,
    ) -> Result<VisualFood> {
        if item_ids.is_empty() {
            return Err(TaxonomyError::EmptyMerge);
        }
        let items: BTreeSet<String> = item_ids.iter().map(|s| s.to_string()).collect();
        for id in &items {
            if !self.food_items.contains_key(id) {
                return Err(TaxonomyError::UnknownItem(id.clone()));
            }
        }
        let new_id = slugify(name);
        if new_id.is_empty() {
            return Err(TaxonomyError::InvalidName(name.to_string()));
        }

        // visual foods that lose every member are retired
        let sources: BTreeSet<String> = items
            .iter()
            .map(|id| self.food_items[id].visual_food_id.clone())
            .collect();
        let emptied: BTreeSet<String> = sources
            .iter()
            .filter(|vf| {
                self.visual_foods[*vf]
                    .member_item_ids
                    .iter()
                    .all(|m| items.contains(m))
            })
            .cloned()
            .collect();
        self.check_name_free(&new_id, name, &emptied)?;

        for vf in &sources {
            let entry = self.visual_foods.get_mut(vf).expect("source visual food");
            entry.member_item_ids.retain(|m| !items.contains(m));
        }
        for vf in &emptied {
            self.visual_foods.remove(vf);
        }
        for id in &items {
            self.food_items.get_mut(id).expect("item").visual_food_id = new_id.clone();
        }
        let merged = VisualFood {
            id: new_id.clone(),
            name: name.to_string(),
            member_item_ids: items,
            is_non_food: false,
        };
        self.visual_foods.insert(new_id.clone(), merged.clone());
        for vf in emptied {
            self.remap_log.push(RemapEntry {
                from: vf,
                to: new_id.clone(),
                kind: MergeKind::Items,
            });
        }
        Ok(merged)
    }

    /// Unions two visual foods under `name`; both old ids are retired and
    /// recorded in the remap log.
    pub fn merge_visual_foods(&mut self, vf_a: &str, vf_b: &str, name: &str) -> Result<VisualFood> {
        if vf_a == vf_b {
            return Err(TaxonomyError::SelfMerge(vf_a.to_string()));
        }
        for vf in [vf_a, vf_b] {
            let entry = self
                .visual_foods
                .get(vf)
                .ok_or_else(|| TaxonomyError::UnknownVisualFood(vf.to_string()))?;
            if entry.is_non_food {
                return Err(TaxonomyError::NonFoodMerge);
            }
        }
        let new_id = slugify(name);
        if new_id.is_empty() {
            return Err(TaxonomyError::InvalidName(name.to_string()));
        }
        let retired: BTreeSet<String> = [vf_a.to_string(), vf_b.to_string()].into();
        self.check_name_free(&new_id, name, &retired)?;

        let a = self.visual_foods.remove(vf_a).expect("checked");
        let b = self.visual_foods.remove(vf_b).expect("checked");
        let members: BTreeSet<String> = a.member_item_ids.union(&b.member_item_ids).cloned().collect();
        for id in &members {
            self.food_items.get_mut(id).expect("member item").visual_food_id = new_id.clone();
        }
        let merged = VisualFood {
            id: new_id.clone(),
            name: name.to_string(),
            member_item_ids: members,
            is_non_food: false,
        };
        self.visual_foods.insert(new_id.clone(), merged.clone());
        for from in [vf_a, vf_b] {
            self.remap_log.push(RemapEntry {
                from: from.to_string(),
                to: new_id.clone(),
                kind: MergeKind::VisualFoods,
            });
        }
        Ok(merged)
    }

    fn check_name_free(&self, new_id: &str, name: &str, retiring: &BTreeSet<String>) -> Result<()> {
        let clash = self.visual_foods.values().any(|vf| {
            !retiring.contains(&vf.id) && (vf.id == new_id || slugify(&vf.name) == new_id)
        });
        if clash {
            return Err(TaxonomyError::DuplicateName(name.to_string()));
        }
        Ok(())
    }

    /// Member items of a predicted visual food, sorted by name. The non-food
    /// class resolves to an empty list.
    pub fn resolve_prediction_to_items(&self, visual_food_id: &str) -> Result<Vec<FoodItem>> {
        let vf = self
            .visual_foods
            .get(visual_food_id)
            .ok_or_else(|| TaxonomyError::UnknownVisualFood(visual_food_id.to_string()))?;
        let mut items: Vec<FoodItem> = vf
            .member_item_ids
            .iter()
            .map(|id| self.food_items[id].clone())
            .collect();
        items.sort_by(|a, b| a.name.cmp(&b.name).then_with(|| a.id.cmp(&b.id)));
        Ok(items)
    }

    /// Maps a label from any earlier label space to the current one by
    /// following the remap log. Returns `None` for labels never seen.
    pub fn resolve_label(&self, label: &str) -> Option<String> {
        let mut current = label.to_string();
        for _ in 0..=self.remap_log.len() {
            if self.visual_foods.contains_key(&current) {
                return Some(current);
            }
            let next = self
                .remap_log
                .iter()
                .rev()
                .find(|e| e.from == current && e.to != current)?;
            current = next.to.clone();
        }
        None
    }

    /// Every retired id mapped to its current visual food.
    pub fn relabel_map(&self) -> BTreeMap<String, String> {
        self.remap_log
            .iter()
            .filter(|e| !self.visual_foods.contains_key(&e.from) || e.from == e.to)
            .filter_map(|e| self.resolve_label(&e.from).map(|to| (e.from.clone(), to)))
            .collect()
    }

    /// Share of a visual food's probability mass attributed to each super
    /// category, proportional to member item counts.
    pub fn category_weights(&self, visual_food_id: &str) -> Vec<(String, f64)> {
        let Some(vf) = self.visual_foods.get(visual_food_id) else {
            return Vec::new();
        };
        if vf.member_item_ids.is_empty() {
            return Vec::new();
        }
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for id in &vf.member_item_ids {
            *counts
                .entry(self.food_items[id].super_category_id.as_str())
                .or_default() += 1;
        }
        let total = vf.member_item_ids.len() as f64;
        counts
            .into_iter()
            .map(|(cat, n)| (cat.to_string(), n as f64 / total))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(TaxonomyError::Invariant(msg));
        let non_food: Vec<_> = self.visual_foods.values().filter(|v| v.is_non_food).collect();
        if non_food.len() != 1 || non_food[0].id != NON_FOOD_ID {
            return fail("exactly one non-food visual food with id non_food".into());
        }
        if !non_food[0].member_item_ids.is_empty() {
            return fail("non-food class has members".into());
        }
        let mut seen = BTreeSet::new();
        for vf in self.visual_foods.values() {
            if !vf.is_non_food && vf.member_item_ids.is_empty() {
                return fail(format!("visual food {} has no members", vf.id));
            }
            for m in &vf.member_item_ids {
                if !seen.insert(m.clone()) {
                    return fail(format!("item {m} in two visual foods"));
                }
                match self.food_items.get(m) {
                    Some(item) if item.visual_food_id == vf.id => {}
                    _ => return fail(format!("member {m} of {} does not point back", vf.id)),
                }
            }
        }
        if seen.len() != self.food_items.len() {
            return fail("some items belong to no visual food".into());
        }
        for item in self.food_items.values() {
            if !self.super_categories.contains_key(&item.super_category_id) {
                return fail(format!("item {} references missing category", item.id));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let doc = TaxonomyDocument {
            super_categories: self.super_categories.values().cloned().collect(),
            food_items: self.food_items.values().cloned().collect(),
            visual_foods: self.visual_foods.values().cloned().collect(),
            remap_log: self.remap_log.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("taxonomy serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: TaxonomyDocument =
            serde_json::from_str(text).map_err(|e| TaxonomyError::Format(e.to_string()))?;
        let mut tax = Taxonomy {
            super_categories: BTreeMap::new(),
            food_items: BTreeMap::new(),
            visual_foods: BTreeMap::new(),
            remap_log: doc.remap_log,
        };
        for c in doc.super_categories {
            if tax.super_categories.insert(c.id.clone(), c).is_some() {
                return Err(TaxonomyError::Format("duplicate super category id".into()));
            }
        }
        for it in doc.food_items {
            if tax.food_items.insert(it.id.clone(), it).is_some() {
                return Err(TaxonomyError::Format("duplicate food item id".into()));
            }
        }
        for vf in doc.visual_foods {
            if tax.visual_foods.insert(vf.id.clone(), vf).is_some() {
                return Err(TaxonomyError::Format("duplicate visual food id".into()));
            }
        }
        tax.validate()?;
        Ok(tax)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| TaxonomyError::Io(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| TaxonomyError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}
