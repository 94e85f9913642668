//! Deterministic simulation and verification of strongly stabilizing protocols
//! in the link-register model with Byzantine processes.
//!
//! Two protocols are provided: spanning-tree construction (`ss_st`) and tree
//! orientation (`ss_to`). The [`engine`] executes them under a fair daemon
//! against an [`adversary`]; [`analysis`] measures disruptions and checks the
//! containment bounds, exactly on small instances via [`analysis::oracle`].

pub mod adversary;
pub mod analysis;
pub mod engine;
pub mod gen;
pub mod init;
pub mod protocol;
pub mod scenario;
pub mod ss_st;
pub mod ss_to;
pub mod sweep;
pub mod topology;
pub mod trace;

pub use protocol::{ProcessState, ProtocolKind, RegisterValue};
pub use topology::{ProcessId, Topology, TopologyMode};
