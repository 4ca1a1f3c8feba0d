//! HTTP coordinator for round-based adapter federation.
//!
//! Clients register, upload one FLAD file per round, and download the
//! aggregate once every registered client's upload has been accepted.

pub mod client;
pub mod error;
pub mod server;
pub mod session;

pub use client::{AggregateReply, CoordinatorClient};
pub use error::CoordinatorError;
pub use server::{router, serve, spawn, Coordinator};
pub use session::{
    Registration, RoundStatus, RoundSummary, Session, SessionManifest, SessionStatus, SubmitOutcome,
};

pub const CHECKSUM_HEADER: &str = "x-checksum-sha256";
