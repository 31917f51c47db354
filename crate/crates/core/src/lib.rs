//! Range membership inference: test whether a model was trained on *any*
//! record inside a range (masked columns, word-level Hamming ball, or a curated
//! candidate pool) rather than on one exact point.
//!
//! The pipeline samples an attack set inside each range, scores every sample
//! with a point membership attack (LOSS or offline RMIA), and aggregates the
//! scores with a one-sided trimmed mean. [`eval`] measures range-level attack
//! power and [`game_sim`] provides a synthetic challenger for end-to-end runs.

pub mod dataset;
pub mod error;
pub mod eval;
pub mod files;
pub mod game_sim;
pub mod model;
pub mod pipeline;
pub mod range_engine;
pub mod rng;
pub mod samplers;
pub mod scorers;
pub mod signals;

pub use dataset::{load_candidate_manifest, load_dataset_manifest, Dataset};
pub use error::{Error, Result};
pub use model::{DataRecord, Payload, RangeFn, RangeId, RangeLabel, RangeQuery, RecordId, Schema, Split, TrimConfig};
pub use signals::{SignalMatrix, SignalSidecar};
