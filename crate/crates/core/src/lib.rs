//! Multimodal classification of citizen reports about urban micro-events.
//!
//! The crate turns reports (text, image features, location, timestamp) plus
//! context tables (geo objects, historical events, hourly weather) into
//! per-modality feature blocks, learns node2vec embeddings over a multimodal
//! graph, and trains early, late and hybrid fusion classifiers on top.
//!
//! ```
//! use urbanfuse::eval::{confusion, f1_report};
//!
//! let labels = vec!["a".to_string(), "b".to_string()];
//! let cm = confusion(&[0, 0, 1], &[0, 1, 1], &labels).unwrap();
//! let report = f1_report(&cm).unwrap();
//! assert!((report.weighted_f1 - 2.0 / 3.0).abs() < 1e-12);
//! ```

pub mod classify;
pub mod dataset;
pub mod embed;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod geo;
pub mod graph;
pub mod ingest;
pub mod matrix;
pub mod pipeline;
pub mod rng;
pub mod synth;
pub mod temporal;
pub mod text;

pub use dataset::{BlockKind, Dataset, FeatureBlock, LabelTaxonomy, Report, Target};
pub use error::{Error, Result};
pub use matrix::Matrix;
