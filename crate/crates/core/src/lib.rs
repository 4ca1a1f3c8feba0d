//! Federated fine-tuning of low-rank adapters for code translation.
//!
//! The crate is organised bottom-up:
//!
//! - [`adapters`]: LoRA factor pairs, dense weight matrices and the FLAD container.
//! - [`aggregation`]: FedAvg factor averaging and FLoRA stacking.
//! - [`toytrainer`]: a V×V logit-map translation model trained through its adapter.
//! - [`federation`]: the round loop, submission validation and best-round selection.
//! - [`metrics`]: BLEU, METEOR, ROUGE-L and CodeBLEU.
//! - [`corpus`]: translation-pair ingestion, partitioning and length statistics.
//! - [`stats`]: exact Mann-Whitney U and Wilcoxon signed-rank tests.

pub mod adapters;
pub mod aggregation;
pub mod corpus;
pub mod error;
pub mod federation;
pub mod metrics;
pub mod stats;
pub mod toytrainer;

pub use error::{Error, Result};
