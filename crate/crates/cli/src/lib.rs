//! Subcommands of the `foodai` binary. Each one loads what it needs from
//! the storage root, calls one library operation and returns its result as
//! JSON plus an optional plain-text rendering.

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use foodai_core::analytics::{
    detect_peaks, feedback_accuracy, low_top1_high_top5, parse_time_zone, usage_histogram, Window,
};
use foodai_core::api::{FeedbackRecord, KeyStore, QueryRecord};
use foodai_core::config::{Config, Layout};
use foodai_core::corpus::{standard_spec, stratified_split, AugmentationSpec, CorpusStore, SplitSpec, Splits, SyntheticCorpusSpec};
use foodai_core::evaluation::{
    confusion_report, evaluate, format_confusion_table, format_eval_table, measure_throughput, merge_candidates,
};
use foodai_core::experiment::{class_counts, split_data, SplitData};
use foodai_core::fams::{Actor, FamsStore, ImageProvider};
use foodai_core::jsonl::read_all;
use foodai_core::model::{train, Checkpoint, FocalLossConfig, LossConfig, ModelConfig, TrainConfig};
use foodai_core::taxonomy::Taxonomy;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(Debug, Parser)]
#[command(name = "foodai", version, about = "Food image recognition: data, training, serving and reports")]
pub struct Cli {
    /// TOML config file. Falls back to $FOODAI_CONFIG, then built-in defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured storage root.
    #[arg(long, global = true)]
    pub root: Option<PathBuf>,
    /// Print a plain-text table instead of JSON.
    #[arg(long, global = true)]
    pub pretty: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus as dataset version 1 and its taxonomy.
    GenCorpus {
        /// JSON corpus spec; the built-in imbalanced spec when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Overrides the spec seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Stratified train/val/test split of a dataset version.
    Split {
        #[arg(long)]
        version: Option<u32>,
        #[arg(long, default_value_t = 0.6)]
        train: f64,
        #[arg(long, default_value_t = 0.2)]
        val: f64,
        #[arg(long, default_value_t = 0.2)]
        test: f64,
        /// Defaults to the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a model on a stored split and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one part of a stored split.
    Eval(EvalArgs),
    /// Run the HTTP service.
    Serve {
        /// Overrides the configured listen address.
        #[arg(long)]
        listen: Option<String>,
    },
    /// Manage API keys.
    Keys {
        #[command(subcommand)]
        action: KeysCommand,
    },
    /// Reports over the query and feedback logs, or over a checkpoint.
    Report {
        #[command(subcommand)]
        report: ReportCommand,
    },
    /// Administer annotation tasks.
    Fams {
        #[command(subcommand)]
        action: FamsCommand,
    },
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Dataset version; the latest when omitted.
    #[arg(long)]
    pub version: Option<u32>,
    /// Seed of the stored split; defaults to the config seed.
    #[arg(long)]
    pub split_seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LossKind {
    CrossEntropy,
    Focal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AlphaKind {
    /// Per-class weight proportional to 1 / train count.
    InverseFrequency,
    Uniform,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value = "cross-entropy")]
    pub loss: LossKind,
    #[arg(long, default_value_t = 2.0)]
    pub gamma: f64,
    #[arg(long, value_enum, default_value = "inverse-frequency")]
    pub alpha: AlphaKind,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.03)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    /// Defaults to the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Widths of the two conv stages.
    #[arg(long, value_delimiter = ',', default_values_t = [8, 16])]
    pub channels: Vec<usize>,
    #[arg(long)]
    pub no_se_gate: bool,
    /// Random crop, rotation and contrast during training.
    #[arg(long)]
    pub augment: bool,
    /// Checkpoint path; defaults to the configured one.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Subset {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Defaults to the configured checkpoint.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    pub subset: Subset,
    /// Also time inference at this batch size.
    #[arg(long)]
    pub throughput_batch: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum KeysCommand {
    /// Register a pending key for an organization.
    Create {
        #[arg(long)]
        org: String,
    },
    Approve { key: String },
    Revoke { key: String },
    List,
}

#[derive(Debug, Subcommand)]
pub enum ReportCommand {
    /// Top-1/top-5 of served predictions against user feedback.
    Accuracy {
        /// ISO 8601 interval such as 2024-01-01/2024-02-01; `..` leaves a side open.
        #[arg(long, default_value = "all")]
        window: String,
    },
    /// Queries per hour of day and the peak hours.
    Usage {
        #[arg(long, default_value = "all")]
        window: String,
        /// Fixed UTC offset; defaults to the configured time zone.
        #[arg(long)]
        tz: Option<String>,
    },
    /// Labels with high top-5 but low top-1 accuracy in production.
    CaseStudies {
        #[arg(long, default_value = "all")]
        window: String,
        #[arg(long)]
        min_queries: Option<usize>,
        #[arg(long)]
        top5_floor: Option<f64>,
        #[arg(long)]
        top1_ceiling: Option<f64>,
    },
    /// Lowest-recall classes and their most common wrong prediction.
    Confusion {
        #[command(flatten)]
        eval: EvalArgs,
        #[arg(long, default_value_t = 10)]
        worst: usize,
        /// Also list class pairs confused at least this often.
        #[arg(long)]
        merge_threshold: Option<f64>,
    },
}

#[derive(Debug, Subcommand)]
pub enum FamsCommand {
    /// Create a task and fetch its candidates from the configured source.
    CreateTask {
        /// Configured manager id acting on the task.
        #[arg(long = "as")]
        user: String,
        #[arg(long = "keyword", required = true)]
        keywords: Vec<String>,
        #[arg(long, default_value_t = 50)]
        count: usize,
        #[arg(long)]
        label: String,
    },
    List {
        #[arg(long)]
        assignee: Option<String>,
    },
    Assign {
        task: String,
        #[arg(long = "as")]
        user: String,
        #[arg(long)]
        annotator: String,
    },
    /// Ingest the selected images of a submitted task as a new dataset version.
    Confirm {
        task: String,
        #[arg(long = "as")]
        user: String,
    },
}

/// Result of a subcommand.
#[derive(Debug, Clone)]
pub struct Output {
    pub json: Value,
    pub text: Option<String>,
}

impl Output {
    fn json(value: impl Serialize) -> Result<Self> {
        Ok(Output {
            json: serde_json::to_value(value)?,
            text: None,
        })
    }

    fn with_text(mut self, text: String) -> Self {
        self.text = Some(text);
        self
    }

    /// What the binary prints: the text rendering under `--pretty` when
    /// there is one, JSON otherwise.
    pub fn render(&self, pretty: bool) -> String {
        match (&self.text, pretty) {
            (Some(t), true) => t.clone(),
            _ => {
                let mut s = serde_json::to_string_pretty(&self.json).expect("json value");
                s.push('\n');
                s
            }
        }
    }
}

/// The split file written by `split` and read by `train` and `eval`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredSplit {
    pub dataset_version: u32,
    pub spec: SplitSpec,
    pub splits: Splits,
}

pub fn resolve_config(cli: &Cli) -> Result<Config> {
    let mut config = Config::resolve(cli.config.as_deref())?;
    if let Some(root) = &cli.root {
        config.storage_root = root.clone();
    }
    Ok(config)
}

pub fn run(cli: &Cli) -> Result<Output> {
    let config = resolve_config(cli)?;
    match &cli.command {
        Command::GenCorpus { spec, seed } => gen_corpus(&config, spec.as_deref(), *seed),
        Command::Split {
            version,
            train,
            val,
            test,
            seed,
        } => split(&config, *version, SplitSpec::new(*train, *val, *test, seed.unwrap_or(config.seed))),
        Command::Train(args) => train_cmd(&config, args),
        Command::Eval(args) => eval_cmd(&config, args),
        Command::Serve { listen } => {
            let mut config = config;
            if let Some(l) = listen {
                config.listen = l.clone();
            }
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(foodai_service::serve(config))?;
            Output::json(json!({"stopped": true}))
        }
        Command::Keys { action } => keys(&config, action),
        Command::Report { report } => report_cmd(&config, report),
        Command::Fams { action } => fams(&config, action),
    }
}

fn gen_corpus(config: &Config, spec_path: Option<&Path>, seed: Option<u64>) -> Result<Output> {
    let mut spec: SyntheticCorpusSpec = match spec_path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => standard_spec(seed.unwrap_or(config.seed)),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    let layout = config.layout();
    let taxonomy = spec.taxonomy()?;
    let store = CorpusStore::open(layout.corpus_dir(), spec.image_size)?;
    let version = store.generate_synthetic(&spec)?;
    taxonomy.save(&layout.taxonomy())?;
    let mut text = format!(
        "dataset version {}: {} images, manifest {}\n",
        version.version,
        version.total(),
        version.manifest_digest
    );
    for (label, n) in &version.per_class_counts {
        let _ = writeln!(text, "  {label:<24} {n:>6}");
    }
    Ok(Output::json(&version)?.with_text(text))
}

fn open_corpus(layout: &Layout) -> Result<CorpusStore> {
    let dir = layout.corpus_dir();
    if !dir.join("store.json").exists() {
        bail!("no corpus under {}; run `foodai gen-corpus` first", dir.display());
    }
    Ok(CorpusStore::open(dir, 0)?)
}

fn version_or_latest(store: &CorpusStore, version: Option<u32>) -> Result<u32> {
    match version {
        Some(v) => Ok(v),
        None => store.latest()?.ok_or_else(|| anyhow!("the corpus has no dataset versions")),
    }
}

fn split(config: &Config, version: Option<u32>, spec: SplitSpec) -> Result<Output> {
    let layout = config.layout();
    let store = open_corpus(&layout)?;
    let version = version_or_latest(&store, version)?;
    let splits = stratified_split(&store.manifest(version)?, &spec)?;
    let stored = StoredSplit {
        dataset_version: version,
        spec,
        splits,
    };
    let path = layout.split(version, spec.seed);
    std::fs::create_dir_all(path.parent().expect("split dir"))?;
    std::fs::write(&path, serde_json::to_string_pretty(&stored)?)?;
    let counts = json!({
        "path": path,
        "dataset_version": version,
        "seed": spec.seed,
        "train": stored.splits.train.len(),
        "val": stored.splits.val.len(),
        "test": stored.splits.test.len(),
    });
    let text = format!(
        "v{version} seed {}: train {} / val {} / test {} -> {}\n",
        spec.seed,
        stored.splits.train.len(),
        stored.splits.val.len(),
        stored.splits.test.len(),
        path.display()
    );
    Ok(Output::json(counts)?.with_text(text))
}

/// Loads a stored split and the corpus records it refers to.
fn load_split_data(config: &Config, data: &DataArgs) -> Result<(u32, SplitData)> {
    let layout = config.layout();
    let store = open_corpus(&layout)?;
    let version = version_or_latest(&store, data.version)?;
    let seed = data.split_seed.unwrap_or(config.seed);
    let path = layout.split(version, seed);
    let text = std::fs::read_to_string(&path).with_context(|| {
        format!(
            "no split for version {version} seed {seed} at {}; run `foodai split` first",
            path.display()
        )
    })?;
    let stored: StoredSplit = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let taxonomy = Taxonomy::load(&layout.taxonomy())?;
    let records = store.load_records(version)?;
    Ok((version, split_data(&records, &stored.splits, &taxonomy)?))
}

fn train_cmd(config: &Config, args: &TrainArgs) -> Result<Output> {
    let [c1, c2] = args.channels[..] else {
        bail!("--channels takes two comma-separated widths");
    };
    let (version, data) = load_split_data(config, &args.data)?;
    let n = data.label_space.len();
    let loss = match args.loss {
        LossKind::CrossEntropy => LossConfig::CrossEntropy,
        LossKind::Focal => LossConfig::Focal(match args.alpha {
            AlphaKind::InverseFrequency => FocalLossConfig::inverse_frequency(&class_counts(&data.train, n), args.gamma)?,
            AlphaKind::Uniform => FocalLossConfig::uniform(n, args.gamma),
        }),
    };
    let size = data
        .train
        .images
        .first()
        .map(|i| i.width())
        .ok_or_else(|| anyhow!("the training split is empty"))?;
    let model = ModelConfig::conv_net((size, size, 3), n, [c1, c2], !args.no_se_gate);
    let cfg = TrainConfig {
        epochs: args.epochs,
        batch_size: args.batch_size,
        learning_rate: args.lr,
        momentum: args.momentum,
        seed: args.seed.unwrap_or(config.seed),
        loss,
        augmentation: if args.augment {
            AugmentationSpec::default()
        } else {
            AugmentationSpec::disabled()
        },
    };
    let ck = train(&model, &cfg, data.label_space.clone(), &data.train, &data.val, Some(version))?;
    let out = args.out.clone().unwrap_or_else(|| config.checkpoint_path());
    if let Some(dir) = out.parent() {
        std::fs::create_dir_all(dir)?;
    }
    ck.save(&out)?;
    let meta = ck.metadata();
    let mut text = format!("checkpoint {} ({})\n", out.display(), ck.digest());
    let _ = writeln!(text, "{:>5} {:>10} {:>9} {:>10} {:>9}", "epoch", "train_loss", "train_top1", "val_loss", "val_top1");
    for m in &meta.history {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
        let mark = if m.epoch == meta.best_epoch { " *" } else { "" };
        let _ = writeln!(
            text,
            "{:>5} {:>10.4} {:>9.4} {:>10} {:>9}{mark}",
            m.epoch,
            m.train_loss,
            m.train_top1,
            opt(m.val_loss),
            opt(m.val_top1)
        );
    }
    Ok(Output::json(json!({
        "checkpoint": out,
        "digest": ck.digest(),
        "dataset_version": version,
        "label_space": ck.label_space(),
        "best_epoch": meta.best_epoch,
        "final": meta.final_metrics(),
        "history": meta.history,
    }))?
    .with_text(text))
}

fn subset(data: SplitData, which: Subset) -> foodai_core::model::TrainData {
    match which {
        Subset::Train => data.train,
        Subset::Val => data.val,
        Subset::Test => data.test,
    }
}

fn load_checkpoint(config: &Config, path: Option<&Path>, data: &SplitData) -> Result<Checkpoint> {
    let path = path.map(Path::to_path_buf).unwrap_or_else(|| config.checkpoint_path());
    let ck = Checkpoint::load(&path).with_context(|| format!("loading {}", path.display()))?;
    if ck.label_space() != data.label_space.as_slice() {
        bail!(
            "checkpoint labels {:?} differ from the taxonomy's {:?}; retrain after taxonomy changes",
            ck.label_space(),
            data.label_space
        );
    }
    Ok(ck)
}

fn eval_cmd(config: &Config, args: &EvalArgs) -> Result<Output> {
    let (version, data) = load_split_data(config, &args.data)?;
    let ck = load_checkpoint(config, args.checkpoint.as_deref(), &data)?;
    let part = subset(data, args.subset);
    let report = evaluate(&ck, &part.images, &part.labels, Some(version))?;
    let throughput = match args.throughput_batch {
        Some(b) => Some(measure_throughput(&ck, &part.images, b)?),
        None => None,
    };
    let text = format_eval_table(&report, throughput.as_ref());
    let mut value = serde_json::to_value(&report)?;
    if let Some(t) = &throughput {
        value["throughput"] = serde_json::to_value(t)?;
    }
    Ok(Output { json: value, text: None }.with_text(text))
}

fn keys(config: &Config, action: &KeysCommand) -> Result<Output> {
    let mut store = KeyStore::open(config.layout().keys(), config.seed)?;
    let key = match action {
        KeysCommand::Create { org } => store.register(org)?,
        KeysCommand::Approve { key } => store.approve(key)?,
        KeysCommand::Revoke { key } => store.revoke(key)?,
        KeysCommand::List => {
            let all: Vec<_> = store.list().cloned().collect();
            let mut text = String::new();
            for k in &all {
                let _ = writeln!(text, "{}  {:<9} {}", k.key, format!("{:?}", k.status).to_lowercase(), k.organization);
            }
            return Ok(Output::json(&all)?.with_text(text));
        }
    };
    let text = format!("{}  {:?}  {}\n", key.key, key.status, key.organization);
    Ok(Output::json(&key)?.with_text(text))
}

fn logs(config: &Config) -> Result<(Vec<QueryRecord>, Vec<FeedbackRecord>)> {
    let layout = config.layout();
    Ok((read_all(&layout.queries())?, read_all(&layout.feedback())?))
}

fn report_cmd(config: &Config, report: &ReportCommand) -> Result<Output> {
    match report {
        ReportCommand::Accuracy { window } => {
            let (q, f) = logs(config)?;
            let acc = feedback_accuracy(&q, &f, &Window::parse(window)?);
            let pct = |v: Option<f64>| v.map(|x| format!("{:.2}%", x * 100.0)).unwrap_or_else(|| "n/a".into());
            let text = format!(
                "window {}\nfeedback {}\ntop-1 {}\ntop-5 {}\n",
                acc.window,
                acc.feedback_count,
                pct(acc.top1),
                pct(acc.top5)
            );
            Ok(Output::json(&acc)?.with_text(text))
        }
        ReportCommand::Usage { window, tz } => {
            let (q, _) = logs(config)?;
            let offset = parse_time_zone(tz.as_deref().unwrap_or(&config.time_zone))?;
            let hist = usage_histogram(&q, &Window::parse(window)?, offset);
            let peaks = detect_peaks(&hist);
            let max = hist.buckets.iter().copied().max().unwrap_or(0).max(1);
            let mut text = format!("{} queries, UTC{}\n", hist.total, hist.utc_offset);
            for (h, n) in hist.buckets.iter().enumerate() {
                let bar = "#".repeat((*n * 40 / max) as usize);
                let mark = if peaks.contains(&(h as u32)) { " peak" } else { "" };
                let _ = writeln!(text, "{h:02}:00 {n:>7} {bar}{mark}");
            }
            Ok(Output::json(json!({"histogram": hist, "peaks": peaks}))?.with_text(text))
        }
        ReportCommand::CaseStudies {
            window,
            min_queries,
            top5_floor,
            top1_ceiling,
        } => {
            let (q, f) = logs(config)?;
            let mut t = config.case_studies;
            if let Some(v) = min_queries {
                t.min_queries = *v;
            }
            if let Some(v) = top5_floor {
                t.top5_floor = *v;
            }
            if let Some(v) = top1_ceiling {
                t.top1_ceiling = *v;
            }
            let cases = low_top1_high_top5(&q, &f, &Window::parse(window)?, &t)?;
            let mut text = format!(
                "{:<28} {:>7} {:>7} {:>7}  most common top-1\n",
                "label", "queries", "top-1", "top-5"
            );
            for c in &cases {
                let _ = writeln!(
                    text,
                    "{:<28} {:>7} {:>7.3} {:>7.3}  {}",
                    c.label, c.queries, c.top1, c.top5, c.most_common_top1
                );
            }
            Ok(Output::json(&cases)?.with_text(text))
        }
        ReportCommand::Confusion {
            eval,
            worst,
            merge_threshold,
        } => {
            let (version, data) = load_split_data(config, &eval.data)?;
            let ck = load_checkpoint(config, eval.checkpoint.as_deref(), &data)?;
            let part = subset(data, eval.subset);
            let report = evaluate(&ck, &part.images, &part.labels, Some(version))?;
            let entries = confusion_report(&report, *worst)?;
            let mut text = format_confusion_table(&entries);
            let mut value = json!({"entries": entries});
            if let Some(t) = merge_threshold {
                let pairs = merge_candidates(&report, *t)?;
                for (a, b) in &pairs {
                    let _ = writeln!(text, "merge candidate: {a} -> {b}");
                }
                value["merge_candidates"] = serde_json::to_value(pairs)?;
            }
            Ok(Output::json(value)?.with_text(text))
        }
    }
}

fn fams_actor(config: &Config, id: &str) -> Result<Actor> {
    let user = config
        .fams
        .users
        .values()
        .find(|u| u.id == id)
        .ok_or_else(|| anyhow!("{id} is not a configured annotation user"))?;
    Ok(Actor {
        id: user.id.clone(),
        role: user.role,
    })
}

fn provider(config: &Config, image_size: usize) -> Box<dyn ImageProvider> {
    use foodai_core::config::SourceConfig;
    use foodai_core::fams::{DirectoryProvider, SyntheticProvider};
    match &config.fams.source {
        SourceConfig::Synthetic { available } => Box::new(SyntheticProvider {
            seed: config.seed,
            available: *available,
            image_size,
        }),
        SourceConfig::Directory { path, seed } => Box::new(DirectoryProvider {
            root: path.clone(),
            seed: *seed,
        }),
    }
}

fn task_line(t: &foodai_core::fams::AnnotationTask) -> String {
    format!(
        "{}  {:<9} {:<20} {:>3}/{:<3} {}\n",
        t.id,
        format!("{:?}", t.status).to_lowercase(),
        t.label,
        t.selected_count(),
        t.candidates.len(),
        t.assignee.as_deref().unwrap_or("-")
    )
}

fn fams(config: &Config, action: &FamsCommand) -> Result<Output> {
    let layout = config.layout();
    let mut store = FamsStore::open(layout.fams_dir())?;
    match action {
        FamsCommand::CreateTask {
            user,
            keywords,
            count,
            label,
        } => {
            let actor = fams_actor(config, user)?;
            let taxonomy = Taxonomy::load(&layout.taxonomy())?;
            let labels = taxonomy.label_space().into_iter().collect();
            let corpus = open_corpus(&layout)?;
            let id = store.create_task(&actor, keywords, *count, label, &labels)?.id.clone();
            let source = provider(config, corpus.image_size());
            let task = store.fetch_candidates(&id, &actor, source.as_ref(), None)?;
            Ok(Output::json(task)?.with_text(task_line(task)))
        }
        FamsCommand::List { assignee } => {
            let tasks: Vec<_> = store
                .tasks()
                .filter(|t| assignee.is_none() || t.assignee == *assignee)
                .collect();
            let text: String = tasks.iter().map(|t| task_line(t)).collect();
            Ok(Output::json(&tasks)?.with_text(text))
        }
        FamsCommand::Assign { task, user, annotator } => {
            let actor = fams_actor(config, user)?;
            let t = store.assign(task, &actor, annotator, None)?;
            Ok(Output::json(t)?.with_text(task_line(t)))
        }
        FamsCommand::Confirm { task, user } => {
            let actor = fams_actor(config, user)?;
            let taxonomy = Taxonomy::load(&layout.taxonomy())?;
            let labels = taxonomy.label_space().into_iter().collect();
            let corpus = open_corpus(&layout)?;
            let source = provider(config, corpus.image_size());
            let version = store.confirm(task, &actor, source.as_ref(), &corpus, &labels, None)?;
            let text = format!(
                "{task} confirmed: dataset version {} ({} images, manifest {})\n",
                version.version,
                version.total(),
                version.manifest_digest
            );
            Ok(Output::json(json!({"task": store.task(task)?, "version": version}))?.with_text(text))
        }
    }
}
