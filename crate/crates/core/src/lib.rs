//! Value-based control with coarse-to-fine action discretization and action
//! sequences: a distributional critic over per-level bin choices, temporal
//! ensembling of overlapping predicted sequences, a mixed demo/online replay
//! store, and small closed-loop environments to exercise the whole loop.

pub mod autodiff;
pub mod c2f;
pub mod critic;
pub mod envs;
pub mod error;
pub mod executor;
pub mod learning;
pub mod replay;

pub use error::{CoreError, Result};
