//! Offline-trained manipulation skills for a kinematic kitchen world:
//! scripted demonstration collection, offline actor-critic skill
//! training, an effect-annotated skill graph with a breadth-first
//! planner, a state-to-skill classifier, and the combined
//! classify/plan/execute pipeline.

pub mod catalog;
pub mod classifier;
pub mod collect;
pub mod error;
pub mod graph;
pub mod orl;
pub mod pipeline;
pub mod nn;
pub mod quat;
pub mod sim;

pub use error::{Error, Result};
