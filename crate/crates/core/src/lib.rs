//! Predicting which news community will be interested in an article from its
//! content alone.
//!
//! The pipeline runs corpus ingestion ([`corpus`]), text primitives
//! ([`textproc`]), the seven feature groups ([`features`]), from-scratch
//! classifiers ([`model`]), ROC/AUC experiments ([`evaluate`]), the
//! hierarchical-binary cascade ([`hierarchy`]) and a planted-signal corpus
//! generator ([`synth`]).

pub mod corpus;
pub mod error;
pub mod evaluate;
pub mod features;
pub mod hierarchy;
pub mod model;
pub mod synth;
pub mod textproc;

pub use error::{Error, Result};
