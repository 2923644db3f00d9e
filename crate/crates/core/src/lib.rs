//! Group identification with transitional hypergraph convolution and
//! cross-view self-supervision.
//!
//! Pipeline: [`graph`] ingests edge lists and builds the three incidence
//! structures, [`model`] runs the linear forward pass, [`objectives`] holds
//! the losses and their analytic gradients, [`training`] optimizes, and
//! [`evaluation`] ranks groups and computes the analysis statistics.

pub mod cli;
pub mod equivalence;
pub mod error;
pub mod evaluation;
pub mod graph;
pub mod model;
pub mod objectives;
pub mod pipeline;
pub mod sparse;
pub mod training;

pub use error::{Error, Result};
pub use graph::{InteractionGraph, SplitGraph, SyntheticSpec};
pub use model::{Checkpoint, EmbeddingTable, Hyperparams, ScoreView, Variant};
pub use training::{train, TrainConfig, TrainHistory};
