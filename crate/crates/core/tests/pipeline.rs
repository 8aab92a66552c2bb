use foodai_core::api::build_response;
use foodai_core::corpus::{
    manifest_digest, stratified_split, AugmentationSpec, CorpusStore, NewImage, RecordSource, Shape, SplitSpec,
    SyntheticClass, SyntheticCorpusSpec,
};
use foodai_core::evaluation::{confusion_report, evaluate, merge_candidates};
use foodai_core::experiment::split_data;
use foodai_core::model::{train, Checkpoint, FocalLossConfig, LossConfig, ModelConfig, TrainConfig};
use std::collections::BTreeSet;

fn spec() -> SyntheticCorpusSpec {
    let class = |id: &str, cat: &str, shape, hue| SyntheticClass {
        id: id.into(),
        super_category: cat.into(),
        count: 20,
        shape,
        base_hue: hue,
        hue_jitter: 5.0,
    };
    SyntheticCorpusSpec {
        classes: vec![
            class("chicken_rice", "rice", Shape::Circle, 45.0),
            class("mee_rebus", "noodles", Shape::Triangle, 30.0),
            class("mee_kuah", "noodles", Shape::Triangle, 36.0),
            class("kopi_o", "beverages", Shape::Square, 200.0),
        ],
        confusable_pairs: vec![("mee_rebus".into(), "mee_kuah".into())],
        non_food_count: 20,
        image_size: 12,
        seed: 4,
    }
}

fn train_config(loss: LossConfig) -> TrainConfig {
    TrainConfig {
        epochs: 25,
        batch_size: 16,
        learning_rate: 0.03,
        momentum: 0.9,
        seed: 3,
        loss,
        augmentation: AugmentationSpec::disabled(),
    }
}

#[test]
fn corpus_to_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    let spec = spec();
    let store = CorpusStore::open(dir.path().join("corpus"), spec.image_size).unwrap();
    let v1 = store.generate_synthetic(&spec).unwrap();
    let taxonomy = spec.taxonomy().unwrap();
    let records = store.load_records(1).unwrap();
    let splits = stratified_split(&store.manifest(1).unwrap(), &SplitSpec::new(0.6, 0.2, 0.2, 9)).unwrap();
    let data = split_data(&records, &splits, &taxonomy).unwrap();
    assert_eq!(data.train.len() + data.val.len() + data.test.len(), v1.total());

    let model = ModelConfig::conv_net((12, 12, 3), data.label_space.len(), [4, 8], true);
    let focal = LossConfig::Focal(FocalLossConfig::uniform(data.label_space.len(), 2.0));
    let ck = train(&model, &train_config(focal.clone()), data.label_space.clone(), &data.train, &data.val, Some(1)).unwrap();
    let again = train(&model, &train_config(focal), data.label_space.clone(), &data.train, &data.val, Some(1)).unwrap();
    assert_eq!(ck.to_bytes(), again.to_bytes());

    let path = dir.path().join("model.ckpt");
    ck.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded.to_bytes(), ck.to_bytes());
    loaded.check_taxonomy(&taxonomy).unwrap();

    let report = evaluate(&loaded, &data.test.images, &data.test.labels, Some(1)).unwrap();
    assert_eq!(report.count, data.test.len());
    assert!(report.top1 > 0.5, "top-1 {}", report.top1);
    assert!(report.top1 <= report.top5);
    let worst = confusion_report(&report, report.per_class_recall.len()).unwrap();
    assert!(worst.windows(2).all(|w| w[0].recall <= w[1].recall));
    for (a, b) in merge_candidates(&report, 0.1).unwrap() {
        assert!(a < b);
    }
}

#[test]
fn merged_taxonomy_relabels_training_and_serving() {
    let dir = tempfile::tempdir().unwrap();
    let spec = spec();
    let store = CorpusStore::open(dir.path().join("corpus"), spec.image_size).unwrap();
    store.generate_synthetic(&spec).unwrap();
    let old = spec.taxonomy().unwrap();
    let mut merged = old.clone();
    let vf = merged.merge_visual_foods("mee_rebus", "mee_kuah", "mee rebus kuah").unwrap();

    let records = store.load_records(1).unwrap();
    let splits = stratified_split(&store.manifest(1).unwrap(), &SplitSpec::new(0.6, 0.2, 0.2, 1)).unwrap();
    let data = split_data(&records, &splits, &merged).unwrap();
    assert_eq!(data.label_space.len(), old.label_space().len() - 1);
    let idx = data.label_space.iter().position(|l| *l == vf.id).unwrap();
    let merged_train = data.train.labels.iter().filter(|&&l| l == idx).count();
    assert_eq!(merged_train, 24);

    // a checkpoint over the old label space still serves under the new one
    let model = ModelConfig::conv_net((12, 12, 3), old.label_space().len(), [4, 4], false);
    let old_data = split_data(&records, &splits, &old).unwrap();
    let ck = train(&model, &train_config(LossConfig::CrossEntropy), old.label_space(), &old_data.train, &old_data.val, Some(1)).unwrap();
    ck.check_taxonomy(&merged).unwrap();
    let probs = ck.probabilities(&[&records[0].pixels]).unwrap().remove(0);
    let resp = build_response(ck.label_space(), &probs, &merged, "q".into(), 0.0);
    let names: BTreeSet<&str> = resp.food_result.iter().map(|s| s.name.as_str()).collect();
    assert!(names.contains(vf.id.as_str()));
    assert!(!names.contains("mee_rebus") && !names.contains("mee_kuah"));
    let pooled = resp.food_result.iter().find(|s| s.name == vf.id).unwrap().score;
    let i = |l: &str| ck.label_space().iter().position(|x| x == l).unwrap();
    assert!((pooled - probs[i("mee_rebus")] - probs[i("mee_kuah")]).abs() < 1e-12);
}

#[test]
fn historical_versions_are_immutable() {
    let dir = tempfile::tempdir().unwrap();
    let spec = spec();
    let store = CorpusStore::open(dir.path().join("corpus"), spec.image_size).unwrap();
    let v1 = store.generate_synthetic(&spec).unwrap();
    let labels: BTreeSet<String> = spec.taxonomy().unwrap().label_space().into_iter().collect();
    let extra = |i: usize| NewImage {
        id: format!("extra_{i}"),
        label: "kopi_o".into(),
        pixels: store.load_records(1).unwrap()[i].pixels.clone(),
        source: RecordSource::Annotation,
    };
    let v2 = store.merge_annotations(1, vec![extra(0), extra(1)], &labels).unwrap();
    let v3 = store.merge_annotations(2, vec![extra(2)], &labels).unwrap();
    assert_eq!(v2.total(), v1.total() + 2);
    assert_eq!(v3.total(), v1.total() + 3);
    assert_eq!(store.load_version(1).unwrap(), v1);
    assert_eq!(manifest_digest(&store.manifest(1).unwrap()), v1.manifest_digest);
    assert_eq!(manifest_digest(&store.manifest(2).unwrap()), v2.manifest_digest);
    assert_eq!(store.versions().unwrap(), vec![1, 2, 3]);
}
