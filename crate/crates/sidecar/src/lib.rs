//! A decentralized sidecar runtime for projected endpoint programs.
//!
//! Each node runs one role of a choreography per session, multiplexing
//! sessions over a framed TCP protocol whose headers carry the session
//! id, choreography id, sender id, and per-pair sequence number. The
//! default mode gives at-most-once execution with buffering for
//! reordered messages and deadline-based reclamation; the fault-
//! tolerant mode adds a durable inbox/outbox, journaled idempotent
//! transaction commits, failure broadcast with reverse-order
//! compensation, and restart-and-replay recovery from the write-ahead
//! log.

pub mod config;
pub mod demo;
pub mod harness;
pub mod node;
pub mod store;
pub mod wire;

pub use config::{load_config, ChorRegistration, NodeConfig, Timeouts};
pub use node::{spawn, spawn_with_listener, NodeError, NodeHandle, Snapshot};
pub use store::{read_wal, DurableStore, KillSwitch, Mode, SessionStatus, StoreError, WalRecord};
pub use wire::{Frame, FrameKind, WireError};
