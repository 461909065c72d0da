//! Experiment orchestration around the cqn-as core: run configuration,
//! the training loop, evaluation, demo management, ablation sweeps, the
//! return-to-go regression study, CSV logs and SVG learning curves.

pub mod config;
pub mod demos;
pub mod log;
pub mod rtg;
pub mod run;
pub mod seeds;
pub mod svg;
pub mod sweep;
