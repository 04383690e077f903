//! Host side of the naming service: TCP endpoints for replicas, the
//! experiment runner in real and virtual time, and the CSV and snapshot file
//! formats.

pub mod cli;
pub mod csvio;
pub mod runner;
pub mod scenarios;
pub mod snapshot;
pub mod transport;
