//! Supervised-learning toolkit for predicting the priority and danger level of
//! police calls-for-service from temporal, categorical and spatial features.
//!
//! The crate is organised as a pipeline:
//!
//! * [`ingest`] parses calls-for-service CSV exports, deduplicates them and
//!   resolves coordinates through a pluggable [`ingest::Geocoder`].
//! * [`featurize`] turns cleaned records into a [`featurize::FeatureTable`].
//! * [`classic`], [`trees`] and [`neural`] hold the learners.
//! * [`tuning`] runs randomized hyperparameter search with k-fold CV.
//! * [`eval`] computes confusion matrices, per-class reports and ROC/AUC.
//! * [`synth`] generates calls with a known danger probability.
//! * [`pipeline`] persists models and drives the `crimecast` CLI.

pub mod classic;
pub mod error;
pub mod eval;
pub mod featurize;
pub mod ingest;
pub mod neural;
pub mod pipeline;
pub mod seed;
pub mod synth;
pub mod trees;
pub mod tuning;

pub use error::{Error, Result};
