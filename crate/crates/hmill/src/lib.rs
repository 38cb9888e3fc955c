//! Hierarchical multi-instance learning on tree-structured samples.
//!
//! The crate builds models that mirror the structure of the data they
//! process. A corpus of JSON documents is summarized into a schema
//! ([`schema`]), the schema is turned into an extractor that maps documents
//! to sample trees of array, bag and product nodes ([`encode`], [`data`]),
//! and a model tree of the same shape is reflected from the extractor and
//! trained end-to-end with a tree-structured backward pass ([`model`],
//! [`train`]). The same machinery drives message-passing inference over
//! interaction graphs ([`graph`]), with a score-propagation baseline and
//! blacklist-style evaluation ([`metrics`]).

pub mod agg;
pub mod data;
pub mod encode;
pub mod graph;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod schema;
pub mod train;

mod error;

pub use error::{Error, Result};
