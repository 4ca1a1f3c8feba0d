//! Low-rank adapters and the dense matrices they decompose.
//!
//! A [`LoraAdapter`] holds the factor pair `A` (m×r) and `B` (r×n) for one
//! weight slot. Its update to the frozen base weight is `(alpha / r) · A·B`.
//! [`AdapterSet`] groups one adapter per slot with a shared rank and alpha, and
//! is the unit written to and read from FLAD files.

mod flad;
mod lora;
mod matrix;

pub use flad::{
    read_adapter_bytes, read_adapter_bytes_unvalidated, read_adapter_file, write_adapter_bytes,
    write_adapter_file, Checksum, FLAD_MAGIC, FLAD_VERSION,
};
pub use lora::{delta, merge, new_adapter, AdapterSet, LoraAdapter, DEFAULT_ALPHA, DEFAULT_RANK};
pub use matrix::WeightMatrix;
