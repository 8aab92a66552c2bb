//! Annotation management: managers create, stock and assign tasks,
//! annotators review candidate images, managers confirm selections into a
//! new dataset version.
//!
//! Every mutation is an event appended to `tasks.jsonl`; task state is the
//! replay of that log.

use crate::corpus::synthetic::render_food;
use crate::corpus::{CorpusError, CorpusStore, DatasetVersion, NewImage, RecordSource, Shape, SyntheticClass};
use crate::image::RgbImage;
use crate::jsonl::{read_all, JsonlError, JsonlWriter};
use crate::rng::{mix64, Rng};
use crate::taxonomy::slugify;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Side of the square review thumbnails.
pub const THUMBNAIL_SIZE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Manager,
    Annotator,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Actor {
    pub id: String,
    pub role: Role,
}

impl Actor {
    pub fn manager(id: &str) -> Self {
        Actor {
            id: id.to_string(),
            role: Role::Manager,
        }
    }

    pub fn annotator(id: &str) -> Self {
        Actor {
            id: id.to_string(),
            role: Role::Annotator,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Draft,
    Assigned,
    Submitted,
    Confirmed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operation {
    Create,
    FetchCandidates,
    Assign,
    Annotate,
    Submit,
    Confirm,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateImage {
    pub id: String,
    pub keyword: String,
    /// Thumbnail PNG, relative to the FAMS directory.
    pub thumbnail_ref: String,
    /// Provider reference for the full-resolution image.
    pub full_ref: String,
    pub selected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationTask {
    pub id: String,
    pub keywords: Vec<String>,
    pub count_per_keyword: usize,
    /// Visual food the confirmed images are labelled with.
    pub label: String,
    pub created_by: String,
    pub assignee: Option<String>,
    pub status: TaskStatus,
    pub candidates: Vec<CandidateImage>,
    /// Keywords for which the source returned fewer than requested.
    pub shortfall: BTreeMap<String, usize>,
    /// Incremented by every event; writers pass the value they last saw.
    pub stamp: u64,
    pub confirmed_version: Option<u32>,
    pub notes: Vec<String>,
}

impl AnnotationTask {
    pub fn selected_count(&self) -> usize {
        self.candidates.iter().filter(|c| c.selected).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    Created {
        keywords: Vec<String>,
        count_per_keyword: usize,
        label: String,
    },
    CandidatesFetched {
        candidates: Vec<CandidateImage>,
        shortfall: BTreeMap<String, usize>,
    },
    Assigned {
        assignee: String,
    },
    SelectionsUpdated {
        changes: BTreeMap<String, bool>,
    },
    Submitted {
        selected: usize,
    },
    ConfirmFailed {
        note: String,
    },
    Confirmed {
        version: u32,
        added: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskEvent {
    pub task_id: String,
    /// Task stamp after this event.
    pub stamp: u64,
    pub actor: Actor,
    /// UTC seconds.
    pub timestamp: i64,
    pub event: EventKind,
}

#[derive(Debug, Error)]
pub enum FamsError {
    #[error("{role:?} {actor} may not {op:?}")]
    Permission { actor: String, role: Role, op: Operation },
    #[error("{op:?} is not allowed while the task is {status:?}")]
    InvalidState { status: TaskStatus, op: Operation },
    #[error("only the assignee may {0:?}")]
    NotAssignee(Operation),
    #[error("unknown task {0}")]
    UnknownTask(String),
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
    #[error("unknown candidate {0}")]
    UnknownCandidate(String),
    #[error("{0}")]
    Validation(String),
    #[error("stale write: task is at stamp {actual}, request was based on {expected}")]
    Stale { expected: u64, actual: u64 },
    #[error("image source unavailable: {0}")]
    SourceUnavailable(String),
    #[error("cannot resolve full-resolution image {0}")]
    Unresolvable(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Log(#[from] JsonlError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        source: std::io::Error,
    },
}

/// Who may run `op` in `status`. Assignee checks happen separately.
pub fn allowed(op: Operation, role: Role, status: Option<TaskStatus>) -> bool {
    use Operation::*;
    use TaskStatus::*;
    match (op, role, status) {
        (Create, Role::Manager, None) => true,
        (FetchCandidates, Role::Manager, Some(Draft | Assigned)) => true,
        (Assign, Role::Manager, Some(Draft)) => true,
        (Annotate | Submit, Role::Annotator, Some(Assigned)) => true,
        (Confirm, Role::Manager, Some(Submitted)) => true,
        _ => false,
    }
}

/// Source of candidate images for a keyword.
pub trait ImageProvider {
    /// Up to `limit` full-resolution references for `keyword`, in a
    /// deterministic order.
    fn search(&self, keyword: &str, limit: usize) -> Result<Vec<String>, FamsError>;
    fn fetch(&self, full_ref: &str) -> Result<RgbImage, FamsError>;
}

/// Images from a local directory: `<root>/<keyword slug>/` when that
/// folder exists, otherwise `<root>` itself. Files are listed by name and,
/// with a seed, shuffled by a keyword-specific stream.
#[derive(Debug, Clone)]
pub struct DirectoryProvider {
    pub root: PathBuf,
    pub seed: Option<u64>,
}

fn is_image_file(p: &Path) -> bool {
    matches!(
        p.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref(),
        Some("png" | "ppm" | "pnm" | "pgm" | "pbm")
    )
}

fn keyword_stream(keyword: &str) -> u64 {
    keyword.bytes().fold(0u64, |h, b| mix64(h ^ b as u64))
}

impl ImageProvider for DirectoryProvider {
    fn search(&self, keyword: &str, limit: usize) -> Result<Vec<String>, FamsError> {
        if !self.root.is_dir() {
            return Err(FamsError::SourceUnavailable(format!("{} is not a directory", self.root.display())));
        }
        let sub = self.root.join(slugify(keyword));
        let dir = if sub.is_dir() { sub } else { self.root.clone() };
        let listing = fs::read_dir(&dir).map_err(|e| FamsError::SourceUnavailable(format!("{}: {e}", dir.display())))?;
        let mut files: Vec<String> = listing
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && is_image_file(p))
            .filter_map(|p| p.strip_prefix(&self.root).ok().map(|r| r.to_string_lossy().into_owned()))
            .collect();
        files.sort();
        if let Some(seed) = self.seed {
            Rng::derive(seed, keyword_stream(keyword)).shuffle(&mut files);
        }
        files.truncate(limit);
        Ok(files)
    }

    fn fetch(&self, full_ref: &str) -> Result<RgbImage, FamsError> {
        let path = self.root.join(full_ref);
        let bytes = fs::read(&path).map_err(|_| FamsError::Unresolvable(full_ref.to_string()))?;
        RgbImage::decode(&bytes).map_err(|_| FamsError::Unresolvable(full_ref.to_string()))
    }
}

/// Renders food-like images on demand; each keyword has `available`
/// images with a keyword-derived shape and hue.
#[derive(Debug, Clone)]
pub struct SyntheticProvider {
    pub seed: u64,
    pub available: usize,
    pub image_size: usize,
}

impl SyntheticProvider {
    fn class_for(&self, keyword: &str) -> SyntheticClass {
        let h = keyword_stream(keyword);
        let shapes = [Shape::Circle, Shape::Square, Shape::Triangle, Shape::Stripes];
        SyntheticClass {
            id: slugify(keyword),
            super_category: "synthetic".into(),
            count: self.available,
            shape: shapes[(h % 4) as usize],
            base_hue: (h >> 8) as f64 % 360.0,
            hue_jitter: 8.0,
        }
    }
}

impl ImageProvider for SyntheticProvider {
    fn search(&self, keyword: &str, limit: usize) -> Result<Vec<String>, FamsError> {
        let slug = slugify(keyword);
        Ok((0..self.available.min(limit)).map(|i| format!("synthetic:{slug}:{i}")).collect())
    }

    fn fetch(&self, full_ref: &str) -> Result<RgbImage, FamsError> {
        let bad = || FamsError::Unresolvable(full_ref.to_string());
        let rest = full_ref.strip_prefix("synthetic:").ok_or_else(bad)?;
        let (slug, idx) = rest.rsplit_once(':').ok_or_else(bad)?;
        let idx: usize = idx.parse().map_err(|_| bad())?;
        if idx >= self.available {
            return Err(bad());
        }
        let class = self.class_for(slug);
        let mut rng = Rng::derive(self.seed, keyword_stream(slug) ^ idx as u64);
        Ok(render_food(&class, self.image_size, &mut rng))
    }
}

/// Event log plus the replayed task table.
#[derive(Debug)]
pub struct FamsStore {
    dir: PathBuf,
    log: JsonlWriter,
    tasks: BTreeMap<String, AnnotationTask>,
    events: Vec<TaskEvent>,
}

fn now() -> i64 {
    chrono::Utc::now().timestamp()
}

impl FamsStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, FamsError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|source| FamsError::Io {
            context: format!("creating {}", dir.display()),
            source,
        })?;
        let log_path = dir.join("tasks.jsonl");
        let events: Vec<TaskEvent> = read_all(&log_path)?;
        let mut tasks = BTreeMap::new();
        for e in &events {
            apply(&mut tasks, e);
        }
        Ok(FamsStore {
            log: JsonlWriter::open(log_path)?,
            dir,
            tasks,
            events,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn task(&self, id: &str) -> Result<&AnnotationTask, FamsError> {
        self.tasks.get(id).ok_or_else(|| FamsError::UnknownTask(id.to_string()))
    }

    pub fn tasks(&self) -> impl Iterator<Item = &AnnotationTask> {
        self.tasks.values()
    }

    /// Tasks assigned to `annotator`.
    pub fn tasks_for(&self, annotator: &str) -> Vec<&AnnotationTask> {
        self.tasks.values().filter(|t| t.assignee.as_deref() == Some(annotator)).collect()
    }

    pub fn events(&self) -> &[TaskEvent] {
        &self.events
    }

    fn record(&mut self, task_id: &str, actor: &Actor, event: EventKind) -> Result<&AnnotationTask, FamsError> {
        let stamp = self.tasks.get(task_id).map_or(1, |t| t.stamp + 1);
        let e = TaskEvent {
            task_id: task_id.to_string(),
            stamp,
            actor: actor.clone(),
            timestamp: now(),
            event,
        };
        self.log.append(&e)?;
        apply(&mut self.tasks, &e);
        self.events.push(e);
        Ok(&self.tasks[task_id])
    }

    /// Checks role, state, assignee and stamp for `op` on an existing task.
    fn guard(&self, id: &str, actor: &Actor, op: Operation, stamp: Option<u64>) -> Result<&AnnotationTask, FamsError> {
        let task = self.task(id)?;
        if let Some(expected) = stamp {
            if expected != task.stamp {
                return Err(FamsError::Stale {
                    expected,
                    actual: task.stamp,
                });
            }
        }
        if !allowed(op, actor.role, Some(TaskStatus::Draft))
            && !allowed(op, actor.role, Some(TaskStatus::Assigned))
            && !allowed(op, actor.role, Some(TaskStatus::Submitted))
        {
            return Err(FamsError::Permission {
                actor: actor.id.clone(),
                role: actor.role,
                op,
            });
        }
        if !allowed(op, actor.role, Some(task.status)) {
            return Err(FamsError::InvalidState { status: task.status, op });
        }
        if matches!(op, Operation::Annotate | Operation::Submit) && task.assignee.as_deref() != Some(actor.id.as_str()) {
            return Err(FamsError::NotAssignee(op));
        }
        Ok(task)
    }

    pub fn create_task(
        &mut self,
        actor: &Actor,
        keywords: &[String],
        count_per_keyword: usize,
        label: &str,
        labels: &BTreeSet<String>,
    ) -> Result<&AnnotationTask, FamsError> {
        if !allowed(Operation::Create, actor.role, None) {
            return Err(FamsError::Permission {
                actor: actor.id.clone(),
                role: actor.role,
                op: Operation::Create,
            });
        }
        let keywords: Vec<String> = keywords.iter().map(|k| k.trim().to_string()).collect();
        if keywords.is_empty() || keywords.iter().any(|k| k.is_empty()) {
            return Err(FamsError::Validation("keywords must be a non-empty list of non-blank strings".into()));
        }
        if count_per_keyword == 0 {
            return Err(FamsError::Validation("count per keyword must be at least 1".into()));
        }
        if !labels.contains(label) {
            return Err(FamsError::UnknownLabel(label.to_string()));
        }
        let id = format!("t{:05}", self.tasks.len() + 1);
        self.record(
            &id,
            actor,
            EventKind::Created {
                keywords,
                count_per_keyword,
                label: label.to_string(),
            },
        )
    }

    /// Replaces the candidate list from `source`. Thumbnails are written
    /// before the event so the list appears all at once.
    pub fn fetch_candidates(
        &mut self,
        id: &str,
        actor: &Actor,
        source: &dyn ImageProvider,
        stamp: Option<u64>,
    ) -> Result<&AnnotationTask, FamsError> {
        let task = self.guard(id, actor, Operation::FetchCandidates, stamp)?.clone();
        let thumb_dir = self.dir.join("thumbs").join(id).join(format!("s{}", task.stamp + 1));
        fs::create_dir_all(&thumb_dir).map_err(|source| FamsError::Io {
            context: format!("creating {}", thumb_dir.display()),
            source,
        })?;
        let mut candidates = Vec::new();
        let mut shortfall = BTreeMap::new();
        for keyword in &task.keywords {
            let refs = source.search(keyword, task.count_per_keyword)?;
            if refs.len() < task.count_per_keyword {
                shortfall.insert(keyword.clone(), task.count_per_keyword - refs.len());
            }
            for full_ref in refs {
                let image = source.fetch(&full_ref)?;
                let cid = format!("c{:04}", candidates.len() + 1);
                let thumb = image.box_downsample(THUMBNAIL_SIZE, THUMBNAIL_SIZE);
                let file = thumb_dir.join(format!("{cid}.png"));
                fs::write(&file, thumb.to_png()).map_err(|source| FamsError::Io {
                    context: format!("writing {}", file.display()),
                    source,
                })?;
                candidates.push(CandidateImage {
                    thumbnail_ref: file
                        .strip_prefix(&self.dir)
                        .expect("thumbnail under store dir")
                        .to_string_lossy()
                        .into_owned(),
                    id: cid,
                    keyword: keyword.clone(),
                    full_ref,
                    selected: true,
                });
            }
        }
        self.record(id, actor, EventKind::CandidatesFetched { candidates, shortfall })
    }

    pub fn assign(&mut self, id: &str, actor: &Actor, annotator: &str, stamp: Option<u64>) -> Result<&AnnotationTask, FamsError> {
        self.guard(id, actor, Operation::Assign, stamp)?;
        if annotator.trim().is_empty() {
            return Err(FamsError::Validation("annotator id must not be empty".into()));
        }
        self.record(
            id,
            actor,
            EventKind::Assigned {
                assignee: annotator.trim().to_string(),
            },
        )
    }

    /// Sets selection flags; candidates not mentioned keep theirs.
    pub fn annotate(
        &mut self,
        id: &str,
        actor: &Actor,
        changes: &BTreeMap<String, bool>,
        stamp: Option<u64>,
    ) -> Result<&AnnotationTask, FamsError> {
        let task = self.guard(id, actor, Operation::Annotate, stamp)?;
        if let Some(unknown) = changes.keys().find(|c| !task.candidates.iter().any(|x| &x.id == *c)) {
            return Err(FamsError::UnknownCandidate(unknown.clone()));
        }
        self.record(id, actor, EventKind::SelectionsUpdated { changes: changes.clone() })
    }

    pub fn submit(&mut self, id: &str, actor: &Actor, stamp: Option<u64>) -> Result<&AnnotationTask, FamsError> {
        let selected = self.guard(id, actor, Operation::Submit, stamp)?.selected_count();
        self.record(id, actor, EventKind::Submitted { selected })
    }

    /// Downloads every selected candidate and merges them into a new
    /// version on top of the corpus's latest one. If any image cannot be
    /// resolved the task stays submitted with a note.
    pub fn confirm(
        &mut self,
        id: &str,
        actor: &Actor,
        source: &dyn ImageProvider,
        corpus: &CorpusStore,
        labels: &BTreeSet<String>,
        stamp: Option<u64>,
    ) -> Result<DatasetVersion, FamsError> {
        let task = self.guard(id, actor, Operation::Confirm, stamp)?.clone();
        let mut images = Vec::new();
        for c in task.candidates.iter().filter(|c| c.selected) {
            let pixels = match source.fetch(&c.full_ref) {
                Ok(img) => img,
                Err(e) => {
                    self.record(id, actor, EventKind::ConfirmFailed { note: e.to_string() })?;
                    return Err(e);
                }
            };
            let size = corpus.image_size();
            let pixels = if pixels.width() == size && pixels.height() == size {
                pixels
            } else {
                pixels.resize_nearest(size, size)
            };
            images.push(NewImage {
                id: format!("fams_{}_{}", task.id, c.id),
                label: task.label.clone(),
                pixels,
                source: RecordSource::Annotation,
            });
        }
        let base = corpus
            .latest()?
            .ok_or_else(|| FamsError::Validation("corpus has no version to extend".into()))?;
        let added = images.len();
        let version = match corpus.merge_annotations(base, images, labels) {
            Ok(v) => v,
            Err(e) => {
                self.record(id, actor, EventKind::ConfirmFailed { note: e.to_string() })?;
                return Err(e.into());
            }
        };
        self.record(
            id,
            actor,
            EventKind::Confirmed {
                version: version.version,
                added,
            },
        )?;
        Ok(version)
    }
}

fn apply(tasks: &mut BTreeMap<String, AnnotationTask>, e: &TaskEvent) {
    if let EventKind::Created {
        keywords,
        count_per_keyword,
        label,
    } = &e.event
    {
        tasks.insert(
            e.task_id.clone(),
            AnnotationTask {
                id: e.task_id.clone(),
                keywords: keywords.clone(),
                count_per_keyword: *count_per_keyword,
                label: label.clone(),
                created_by: e.actor.id.clone(),
                assignee: None,
                status: TaskStatus::Draft,
                candidates: Vec::new(),
                shortfall: BTreeMap::new(),
                stamp: e.stamp,
                confirmed_version: None,
                notes: Vec::new(),
            },
        );
        return;
    }
    let Some(task) = tasks.get_mut(&e.task_id) else {
        return;
    };
    task.stamp = e.stamp;
    match &e.event {
        EventKind::Created { .. } => unreachable!("handled above"),
        EventKind::CandidatesFetched { candidates, shortfall } => {
            task.candidates = candidates.clone();
            task.shortfall = shortfall.clone();
            if candidates.is_empty() {
                task.notes.push("no candidates found".into());
            }
        }
        EventKind::Assigned { assignee } => {
            task.assignee = Some(assignee.clone());
            task.status = TaskStatus::Assigned;
        }
        EventKind::SelectionsUpdated { changes } => {
            for c in &mut task.candidates {
                if let Some(&sel) = changes.get(&c.id) {
                    c.selected = sel;
                }
            }
        }
        EventKind::Submitted { .. } => task.status = TaskStatus::Submitted,
        EventKind::ConfirmFailed { note } => task.notes.push(note.clone()),
        EventKind::Confirmed { version, .. } => {
            task.status = TaskStatus::Confirmed;
            task.confirmed_version = Some(*version);
        }
    }
}
