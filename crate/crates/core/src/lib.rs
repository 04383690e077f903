//! Core of an eventually consistent naming service for fog data platforms.
//!
//! Configuration (nodes, keygroups, permissions, node organization) is kept
//! in state-based last-write-wins element sets and reconciled by push-pull
//! gossip, so every client operation is served from local state. A
//! majority-ack store is included as the strongly consistent baseline, and a
//! deterministic discrete-event network drives both under delay and
//! partition schedules.
//!
//! The crate is `no_std` and needs only `alloc`. Protocol logic is written as
//! sans-IO [`actor::Actor`]s; `fogreg` supplies the socket runtime, files and
//! CLI.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod actor;
pub mod bench;
pub mod codec;
pub mod lww;
pub mod peers;
pub mod proto;
pub mod quorum;
pub mod registry;
pub mod replica;
pub mod sim;
pub mod timestamp;

pub use lww::{Join, LwwElementSet, LwwEntry};
pub use registry::{Action, ConfigSets, KeygroupConfig, NodeRecord, RegistryError, RegistryState};
pub use timestamp::{ReplicaClock, ReplicaId, Timestamp};
