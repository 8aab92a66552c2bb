mod common;

use common::*;
use foodai_core::model::ModelError;
use foodai_core::taxonomy::Taxonomy;
use foodai_service::{AppState, StartupError};

#[test]
fn tampered_checkpoint_is_refused() {
    let fx = Fixture::new();
    let path = fx.config.checkpoint_path();
    let mut bytes = std::fs::read(&path).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 0x01;
    std::fs::write(&path, bytes).unwrap();
    match AppState::load(&fx.config) {
        Err(StartupError::Checkpoint(ModelError::DigestMismatch { .. })) => {}
        other => panic!("expected digest mismatch, got {:?}", other.err()),
    }
}

#[test]
fn label_space_must_cover_the_taxonomy() {
    let fx = Fixture::new();
    let layout = fx.config.layout();
    let mut tax = Taxonomy::load(&layout.taxonomy()).unwrap();
    tax.add_food_item("Roti Prata", "grill", None).unwrap();
    tax.save(&layout.taxonomy()).unwrap();
    assert!(matches!(AppState::load(&fx.config), Err(StartupError::LabelSpace(_))));
}

#[test]
fn merged_labels_still_load() {
    let fx = Fixture::new();
    let layout = fx.config.layout();
    let mut tax = Taxonomy::load(&layout.taxonomy()).unwrap();
    tax.merge_visual_foods("laksa", "satay", "laksa or satay").unwrap();
    tax.save(&layout.taxonomy()).unwrap();
    let state = AppState::load(&fx.config).unwrap();
    assert_eq!(state.labels().len(), 4);
}

#[test]
fn missing_checkpoint_is_an_error() {
    let fx = Fixture::new();
    std::fs::remove_file(fx.config.checkpoint_path()).unwrap();
    assert!(matches!(AppState::load(&fx.config), Err(StartupError::Checkpoint(_))));
}
