mod common;

use base64::Engine;
use common::*;
use foodai_core::corpus::CorpusStore;
use serde_json::{json, Value};

async fn create(srv: &Server, key: &str, count: usize) -> (u16, Value) {
    post_json(
        &srv.url("/fams/tasks"),
        Some(key),
        &json!({"keywords": ["char kway teow"], "count_per_keyword": count, "label": "laksa"}),
    )
    .await
}

#[tokio::test]
async fn full_workflow_adds_selected_images() {
    let fx = Fixture::new();
    let srv = fx.start(None).await;

    let (s, task) = create(&srv, MANAGER_KEY, 50).await;
    assert_eq!(s, 201, "{task}");
    let id = task["id"].as_str().unwrap().to_string();
    assert_eq!(task["status"], "draft");
    assert_eq!(task["candidates"].as_array().unwrap().len(), 50);

    let (s, task) = post_json(&srv.url(&format!("/fams/tasks/{id}/assign")), Some(MANAGER_KEY), &json!({"annotator": "ann"})).await;
    assert_eq!(s, 200, "{task}");
    assert_eq!(task["status"], "assigned");

    let (s, listed) = get_with_key(&srv.url("/fams/tasks"), ANNOTATOR_KEY).await;
    assert_eq!(s, 200);
    assert_eq!(listed.as_array().unwrap().len(), 1);
    let (_, listed) = get_with_key(&srv.url("/fams/tasks"), OTHER_ANNOTATOR_KEY).await;
    assert!(listed.as_array().unwrap().is_empty());
    let (_, listed) = get_with_key(&srv.url("/fams/tasks?assignee=ann"), MANAGER_KEY).await;
    assert_eq!(listed.as_array().unwrap().len(), 1);
    let (_, listed) = get_with_key(&srv.url("/fams/tasks?assignee=otto"), MANAGER_KEY).await;
    assert!(listed.as_array().unwrap().is_empty());

    let (s, cands) = get_with_key(&srv.url(&format!("/fams/tasks/{id}/candidates")), ANNOTATOR_KEY).await;
    assert_eq!(s, 200);
    let cands = cands["candidates"].as_array().unwrap().clone();
    assert_eq!(cands.len(), 50);
    for c in &cands {
        let png = base64::engine::general_purpose::STANDARD
            .decode(c["thumbnail"].as_str().unwrap())
            .unwrap();
        let thumb = foodai_core::image::RgbImage::decode(&png).unwrap();
        assert_eq!((thumb.width(), thumb.height()), (8, 8));
    }

    let rejected: serde_json::Map<String, Value> = cands[..3]
        .iter()
        .map(|c| (c["id"].as_str().unwrap().to_string(), json!(false)))
        .collect();
    let (s, task) = post_json(
        &srv.url(&format!("/fams/tasks/{id}/selections")),
        Some(ANNOTATOR_KEY),
        &json!({"selections": rejected}),
    )
    .await;
    assert_eq!(s, 200, "{task}");
    let (s, task) = post_json(&srv.url(&format!("/fams/tasks/{id}/submit")), Some(ANNOTATOR_KEY), &json!({})).await;
    assert_eq!(s, 200, "{task}");
    assert_eq!(task["status"], "submitted");

    let corpus = CorpusStore::open(fx.config.layout().corpus_dir(), IMAGE_SIZE).unwrap();
    let before = corpus.load_version(1).unwrap();
    let (s, reply) = post_json(&srv.url(&format!("/fams/tasks/{id}/confirm")), Some(MANAGER_KEY), &json!({})).await;
    assert_eq!(s, 200, "{reply}");
    assert_eq!(reply["version"], 2);
    assert_eq!(reply["task"]["status"], "confirmed");
    let after = corpus.load_version(2).unwrap();
    assert_eq!(after.total(), before.total() + 47);
    assert_eq!(after.per_class_counts["laksa"], before.per_class_counts["laksa"] + 47);
    assert_eq!(after.manifest_digest, reply["manifest_digest"].as_str().unwrap());
}

#[tokio::test]
async fn status_codes() {
    let fx = Fixture::new();
    let srv = fx.start(None).await;
    let (s, _) = create(&srv, ANNOTATOR_KEY, 5).await;
    assert_eq!(s, 403);
    let (s, _) = create(&srv, "who", 5).await;
    assert_eq!(s, 401);
    let (s, _) = json(client().get(srv.url("/fams/tasks")).send().await.unwrap()).await;
    assert_eq!(s, 401);
    let (s, _) = post_json(
        &srv.url("/fams/tasks"),
        Some(MANAGER_KEY),
        &json!({"keywords": ["x"], "count_per_keyword": 5, "label": "pizza"}),
    )
    .await;
    assert_eq!(s, 400);
    let (s, _) = get_with_key(&srv.url("/fams/tasks/t09999"), MANAGER_KEY).await;
    assert_eq!(s, 404);

    let (_, task) = create(&srv, MANAGER_KEY, 5).await;
    let id = task["id"].as_str().unwrap().to_string();
    let stamp = task["stamp"].as_u64().unwrap();
    let url = |p: &str| srv.url(&format!("/fams/tasks/{id}/{p}"));

    let (s, _) = post_json(&url("submit"), Some(ANNOTATOR_KEY), &json!({})).await;
    assert_eq!(s, 409, "submit before assignment");
    let (s, _) = post_json(&url("confirm"), Some(MANAGER_KEY), &json!({})).await;
    assert_eq!(s, 409, "confirm a draft");
    let (s, _) = post_json(&url("assign"), Some(MANAGER_KEY), &json!({"annotator": "ann", "stamp": stamp - 1})).await;
    assert_eq!(s, 409, "stale stamp");
    let (s, _) = post_json(&url("assign"), Some(MANAGER_KEY), &json!({"annotator": "ann", "stamp": stamp})).await;
    assert_eq!(s, 200);

    let (s, _) = get_with_key(&srv.url(&format!("/fams/tasks/{id}")), OTHER_ANNOTATOR_KEY).await;
    assert_eq!(s, 403);
    let (s, _) = post_json(&url("selections"), Some(OTHER_ANNOTATOR_KEY), &json!({"selections": {"c0001": false}})).await;
    assert_eq!(s, 403, "not the assignee");
    let (s, _) = post_json(&url("selections"), Some(ANNOTATOR_KEY), &json!({"selections": {"c9999": false}})).await;
    assert_eq!(s, 400, "unknown candidate");
    let (s, _) = post_json(&url("selections"), Some(MANAGER_KEY), &json!({"selections": {"c0001": false}})).await;
    assert_eq!(s, 403, "managers do not annotate");
    let (s, _) = post_json(&url("submit"), Some(ANNOTATOR_KEY), &json!({})).await;
    assert_eq!(s, 200);
    let (s, _) = post_json(&url("submit"), Some(ANNOTATOR_KEY), &json!({})).await;
    assert_eq!(s, 409, "already submitted");
}

#[tokio::test]
async fn unavailable_source_leaves_a_draft() {
    let mut fx = Fixture::new();
    let missing = fx.dir.path().join("no-such-dir");
    fx.config.fams.source = foodai_core::config::SourceConfig::Directory {
        path: missing.clone(),
        seed: None,
    };
    let srv = fx.start(None).await;
    let (s, body) = create(&srv, MANAGER_KEY, 5).await;
    assert_eq!(s, 503, "{body}");
    let (_, listed) = get_with_key(&srv.url("/fams/tasks"), MANAGER_KEY).await;
    let task = &listed.as_array().unwrap()[0];
    assert_eq!(task["status"], "draft");
    assert!(task["candidates"].as_array().unwrap().is_empty());

    // once the folder exists the fetch can be retried
    std::fs::create_dir_all(&missing).unwrap();
    for i in 0..3 {
        std::fs::write(missing.join(format!("{i}.png")), sample_image(i).to_png()).unwrap();
    }
    let id = task["id"].as_str().unwrap();
    let (s, task) = post_json(&srv.url(&format!("/fams/tasks/{id}/fetch")), Some(MANAGER_KEY), &json!({})).await;
    assert_eq!(s, 200, "{task}");
    assert_eq!(task["candidates"].as_array().unwrap().len(), 3);
    assert_eq!(task["shortfall"]["char kway teow"], 2);
}
