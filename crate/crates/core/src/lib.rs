//! Discrete-event simulator for satellite-assisted vehicular networks that
//! store key messages on an RSU-hosted proof-of-work blockchain.

pub mod blockchain;
pub mod channel;
pub mod cli;
pub mod config;
pub mod connectivity;
pub mod engine;
pub mod metrics;
pub mod mobility;
pub mod satellite;
pub mod sim;
pub mod sweep;
