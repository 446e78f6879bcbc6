//! Citation-proximity pipeline: collaboration-network distances, semantic
//! similarity, and prestige features feeding a logistic citation-link model.
//!
//! The crate is organized as a chain of stages. [`corpus`] ingests authors,
//! documents, and citation links. [`graph`] builds the co-authorship network
//! and measures distances over it. [`semantics`] handles document embeddings
//! and cosine similarity. [`pairs`] assembles labelled document-pair datasets
//! with normalized features. [`model`] fits the logistic link model, and
//! [`effects`] turns fits into marginal effects and prediction grids.
//! [`report`] renders tables and figures, and [`synth`] generates synthetic
//! corpora with known ground truth for validation.

pub mod corpus;
pub mod effects;
pub mod error;
pub mod fsutil;
pub mod graph;
pub mod model;
pub mod pairs;
pub mod report;
pub mod rng;
pub mod semantics;
pub mod stats;
pub mod synth;

pub use error::{Error, ErrorClass, Result};
