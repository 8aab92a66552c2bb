use foodai_core::api::{KeyError, KeyStore, QidGenerator, QueryRecord};
use foodai_core::config::{Config, FamsUser, Layout, SourceConfig};
use foodai_core::corpus::{CorpusError, CorpusStore};
use foodai_core::fams::{DirectoryProvider, FamsError, FamsStore, ImageProvider, SyntheticProvider};
use foodai_core::jsonl::{read_all, JsonlError, JsonlWriter};
use foodai_core::model::{Checkpoint, ModelError};
use foodai_core::taxonomy::{Taxonomy, TaxonomyError};
use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::sync::{Arc, Mutex};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StartupError {
    #[error("loading checkpoint: {0}")]
    Checkpoint(#[from] ModelError),
    #[error("loading taxonomy: {0}")]
    Taxonomy(#[from] TaxonomyError),
    #[error("checkpoint does not match the taxonomy: {0}")]
    LabelSpace(ModelError),
    #[error("opening key store: {0}")]
    Keys(#[from] KeyError),
    #[error("opening logs: {0}")]
    Log(#[from] JsonlError),
    #[error("opening annotation store: {0}")]
    Fams(#[from] FamsError),
    #[error("opening corpus: {0}")]
    Corpus(#[from] CorpusError),
    #[error("binding {0}: {1}")]
    Bind(String, std::io::Error),
}

/// Called after a query is persisted and before its response is sent. An
/// `Err` aborts the request with a 500, as a crash at that point would.
pub type FaultHook = Arc<dyn Fn(&QueryRecord) -> Result<(), String> + Send + Sync>;

pub struct AppState {
    pub checkpoint: Arc<Checkpoint>,
    pub taxonomy: Taxonomy,
    pub layout: Layout,
    pub keys: Mutex<KeyStore>,
    pub queries: JsonlWriter,
    pub feedback: JsonlWriter,
    pub known_qids: Mutex<HashSet<String>>,
    pub qids: QidGenerator,
    pub fault_hook: Option<FaultHook>,
    pub http: reqwest::Client,
    pub fams: Mutex<FamsStore>,
    pub fams_users: BTreeMap<String, FamsUser>,
    pub source: Box<dyn ImageProvider + Send + Sync>,
    pub corpus: CorpusStore,
}

impl AppState {
    /// Reads the checkpoint and taxonomy, checks they agree, and opens the
    /// stores under the storage root.
    pub fn load(config: &Config) -> Result<Self, StartupError> {
        let layout = config.layout();
        let checkpoint = Checkpoint::load(&config.checkpoint_path())?;
        let taxonomy = Taxonomy::load(&layout.taxonomy())?;
        checkpoint.check_taxonomy(&taxonomy).map_err(StartupError::LabelSpace)?;
        let keys = KeyStore::open(layout.keys(), config.seed)?;
        let known: HashSet<String> = read_all::<QueryRecord>(&layout.queries())?
            .into_iter()
            .map(|q| q.qid)
            .collect();
        let image_size = checkpoint.config().input.0;
        let source: Box<dyn ImageProvider + Send + Sync> = match &config.fams.source {
            SourceConfig::Synthetic { available } => Box::new(SyntheticProvider {
                seed: config.seed,
                available: *available,
                image_size,
            }),
            SourceConfig::Directory { path, seed } => Box::new(DirectoryProvider {
                root: path.clone(),
                seed: *seed,
            }),
        };
        Ok(AppState {
            queries: JsonlWriter::open(layout.queries())?,
            feedback: JsonlWriter::open(layout.feedback())?,
            fams: Mutex::new(FamsStore::open(layout.fams_dir())?),
            corpus: CorpusStore::open(layout.corpus_dir(), image_size)?,
            known_qids: Mutex::new(known),
            qids: match config.qid_seed {
                Some(s) => QidGenerator::seeded(s),
                None => QidGenerator::from_entropy(),
            },
            checkpoint: Arc::new(checkpoint),
            taxonomy,
            layout,
            keys: Mutex::new(keys),
            fault_hook: None,
            http: reqwest::Client::builder()
                .timeout(std::time::Duration::from_secs(10))
                .build()
                .expect("http client"),
            fams_users: config.fams.users.clone(),
            source,
        })
    }

    pub fn with_fault_hook(mut self, hook: FaultHook) -> Self {
        self.fault_hook = Some(hook);
        self
    }

    /// Current visual food ids.
    pub fn labels(&self) -> BTreeSet<String> {
        self.taxonomy.label_space().into_iter().collect()
    }
}
