//! Shared fixture: a tiny corpus, taxonomy and untrained checkpoint under a
//! temp dir, plus helpers to run the router on an ephemeral port.
#![allow(dead_code)]

use foodai_core::api::KeyStore;
use foodai_core::config::{Config, FamsUser, SourceConfig};
use foodai_core::corpus::{CorpusStore, Shape, SyntheticClass, SyntheticCorpusSpec};
use foodai_core::fams::Role;
use foodai_core::image::RgbImage;
use foodai_core::model::{Checkpoint, ModelConfig, Network, TrainingMetadata};
use foodai_core::rng::Rng;
use foodai_service::{router, AppState, FaultHook};
use std::sync::Arc;
use tempfile::TempDir;

pub const IMAGE_SIZE: usize = 12;
pub const MANAGER_KEY: &str = "manager-key";
pub const ANNOTATOR_KEY: &str = "annotator-key";
pub const OTHER_ANNOTATOR_KEY: &str = "other-annotator-key";

pub struct Fixture {
    pub dir: TempDir,
    pub config: Config,
    pub key: String,
    pub pending_key: String,
    pub revoked_key: String,
}

pub fn spec() -> SyntheticCorpusSpec {
    let class = |id: &str, cat: &str, shape, hue| SyntheticClass {
        id: id.into(),
        super_category: cat.into(),
        count: 4,
        shape,
        base_hue: hue,
        hue_jitter: 5.0,
    };
    SyntheticCorpusSpec {
        classes: vec![
            class("chicken_rice", "rice", Shape::Circle, 40.0),
            class("laksa", "noodles", Shape::Stripes, 10.0),
            class("satay", "grill", Shape::Stripes, 200.0),
            class("kopi_o", "beverages", Shape::Square, 20.0),
        ],
        confusable_pairs: vec![],
        non_food_count: 4,
        image_size: IMAGE_SIZE,
        seed: 3,
    }
}

impl Fixture {
    pub fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let mut config = Config {
            storage_root: dir.path().join("data"),
            seed: 11,
            qid_seed: Some(5),
            ..Config::default()
        };
        config.fams.source = SourceConfig::Synthetic { available: 60 };
        for (key, id, role) in [
            (MANAGER_KEY, "maria", Role::Manager),
            (ANNOTATOR_KEY, "ann", Role::Annotator),
            (OTHER_ANNOTATOR_KEY, "otto", Role::Annotator),
        ] {
            config.fams.users.insert(key.into(), FamsUser { id: id.into(), role });
        }
        let layout = config.layout();
        let spec = spec();
        let corpus = CorpusStore::open(layout.corpus_dir(), IMAGE_SIZE).unwrap();
        corpus.generate_synthetic(&spec).unwrap();
        let taxonomy = spec.taxonomy().unwrap();
        taxonomy.save(&layout.taxonomy()).unwrap();

        let labels = taxonomy.label_space();
        let model = ModelConfig::conv_net((IMAGE_SIZE, IMAGE_SIZE, 3), labels.len(), [4, 4], true);
        let params = Network::new(&model).unwrap().init_parameters(&mut Rng::new(1));
        let meta = TrainingMetadata {
            dataset_version: Some(1),
            ..TrainingMetadata::default()
        };
        let ck = Checkpoint::new(model, labels, params, meta).unwrap();
        let ck_path = config.checkpoint_path();
        std::fs::create_dir_all(ck_path.parent().unwrap()).unwrap();
        ck.save(&ck_path).unwrap();

        let mut keys = KeyStore::open(layout.keys(), 1).unwrap();
        let key = keys.register("hawker centre app").unwrap().key;
        keys.approve(&key).unwrap();
        let pending_key = keys.register("waiting org").unwrap().key;
        let revoked_key = keys.register("former org").unwrap().key;
        keys.approve(&revoked_key).unwrap();
        keys.revoke(&revoked_key).unwrap();
        Fixture {
            dir,
            config,
            key,
            pending_key,
            revoked_key,
        }
    }

    pub fn state(&self) -> AppState {
        AppState::load(&self.config).unwrap()
    }

    pub async fn start(&self, hook: Option<FaultHook>) -> Server {
        let mut state = self.state();
        if let Some(h) = hook {
            state = state.with_fault_hook(h);
        }
        Server::start(router(Arc::new(state))).await
    }
}

pub struct Server {
    pub base: String,
    handle: tokio::task::JoinHandle<()>,
}

impl Server {
    pub async fn start(app: axum::Router) -> Server {
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        let handle = tokio::spawn(async move {
            axum::serve(listener, app).await.unwrap();
        });
        Server {
            base: format!("http://{addr}"),
            handle,
        }
    }

    pub fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        self.handle.abort();
    }
}

/// Serves `/img.png` with the given bytes and `/missing` as 404.
pub async fn image_host(png: Vec<u8>) -> Server {
    use axum::routing::get;
    let app = axum::Router::new().route(
        "/img.png",
        get(move || {
            let png = png.clone();
            async move { ([("content-type", "image/png")], png) }
        }),
    );
    Server::start(app).await
}

pub fn sample_image(seed: u64) -> RgbImage {
    let mut rng = Rng::new(seed);
    let mut img = RgbImage::new(IMAGE_SIZE, IMAGE_SIZE);
    for y in 0..IMAGE_SIZE {
        for x in 0..IMAGE_SIZE {
            img.put(x, y, [rng.below(256) as u8, rng.below(256) as u8, rng.below(256) as u8]);
        }
    }
    img
}

pub fn client() -> reqwest::Client {
    reqwest::Client::new()
}

pub async fn json(resp: reqwest::Response) -> (u16, serde_json::Value) {
    let status = resp.status().as_u16();
    let bytes = resp.bytes().await.unwrap();
    let value = serde_json::from_slice(&bytes).unwrap_or(serde_json::Value::Null);
    (status, value)
}

pub async fn get(url: &str, query: &[(&str, &str)]) -> (u16, serde_json::Value) {
    json(client().get(url).query(query).send().await.unwrap()).await
}

pub async fn post_json(url: &str, key: Option<&str>, body: &serde_json::Value) -> (u16, serde_json::Value) {
    let mut req = client()
        .post(url)
        .header("content-type", "application/json")
        .body(serde_json::to_vec(body).unwrap());
    if let Some(k) = key {
        req = req.header(foodai_service::KEY_HEADER, k);
    }
    json(req.send().await.unwrap()).await
}

pub async fn get_with_key(url: &str, key: &str) -> (u16, serde_json::Value) {
    json(client().get(url).header(foodai_service::KEY_HEADER, key).send().await.unwrap()).await
}
