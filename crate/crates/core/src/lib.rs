//! Food image recognition pipeline: label taxonomy, versioned synthetic
//! corpus, a from-scratch convolutional classifier trained with focal loss,
//! evaluation metrics, the classify/feedback service contract, production
//! analytics and the annotation management workflow.

pub mod analytics;
pub mod api;
pub mod config;
pub mod corpus;
pub mod evaluation;
pub mod experiment;
pub mod fams;
pub mod image;
pub mod jsonl;
pub mod model;
pub mod rng;
pub mod taxonomy;
