//! LoopSR-style lifelong policy adaptation at desk scale.
//!
//! The crate wires together a 1-D parametric locomotion simulator, PPO
//! pretraining under domain randomization, a transformer trajectory
//! encoder with retrieval + decoding heads for environment identification,
//! the adaptation loop that reconstructs the deployment environment in
//! simulation and keeps training, and a tabular verifier for the
//! value-discrepancy decomposition behind the approach.
//!
//! Start from the `examples/` directory: each example exercises one major
//! capability end to end. The `loopsr` binary exposes the same pipelines
//! as subcommands (`pretrain`, `adapt`, `eval`, `theory`, `ablate`).

pub mod cli;
pub mod fileio;
pub mod latentstore;
pub mod loopctl;
pub mod mdpgap;
pub mod terrasim;
pub mod trajcodec;
pub mod util;
pub mod numgrad;
pub mod ppo;
pub mod rng;
