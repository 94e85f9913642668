//! Guarded-command protocols over link registers.
//!
//! A protocol only ever sees a [`LocalView`]: its own variables, its degree and
//! the registers on its incident links, indexed by local neighbor number. No
//! process identifiers or global structure leak into guards or actions.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::Configuration;
use crate::topology::{ProcessId, Topology, TopologyMode};

pub type Level = i64;

/// Contents of one link register `r_{v,u}`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RegisterValue {
    pub r_prnt: bool,
    pub r_level: Level,
}

impl RegisterValue {
    pub const fn new(r_prnt: bool, r_level: Level) -> Self {
        Self { r_prnt, r_level }
    }
}

/// Process variables. `prnt` is a local neighbor number (1-based); 0 means no parent.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ProcessState {
    pub prnt: usize,
    pub level: Level,
}

impl ProcessState {
    pub const fn new(prnt: usize, level: Level) -> Self {
        Self { prnt, level }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ActionLabel {
    GA0,
    GA1,
    GA2,
    GA3,
}

impl fmt::Display for ActionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ActionLabel::GA0 => "GA0",
            ActionLabel::GA1 => "GA1",
            ActionLabel::GA2 => "GA2",
            ActionLabel::GA3 => "GA3",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Root,
    NonRoot,
}

/// What a process may observe when evaluating guards.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LocalView {
    pub state: ProcessState,
    pub degree: usize,
    /// `inputs[k-1]` holds `r_{N(k), v}`.
    pub inputs: Vec<RegisterValue>,
    /// `outputs[k-1]` holds `r_{v, N(k)}`.
    pub outputs: Vec<RegisterValue>,
}

impl LocalView {
    /// Input register from the k-th neighbor (1-based).
    pub fn input(&self, k: usize) -> RegisterValue {
        self.inputs[k - 1]
    }

    pub fn output(&self, k: usize) -> RegisterValue {
        self.outputs[k - 1]
    }

    pub fn parent_is_valid(&self) -> bool {
        (1..=self.degree).contains(&self.state.prnt)
    }

    /// True iff every output register agrees with the process variables.
    pub fn outputs_consistent(&self) -> bool {
        self.outputs == consistent_outputs(self.state, self.degree)
    }
}

/// The new process state and the new values of all its output registers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LocalEffect {
    pub state: ProcessState,
    pub outputs: Vec<RegisterValue>,
}

impl LocalEffect {
    pub fn from_state(state: ProcessState, degree: usize) -> Self {
        Self {
            state,
            outputs: consistent_outputs(state, degree),
        }
    }
}

/// Register contents that match the variables: `(true, level)` toward the parent,
/// `(false, level)` toward everyone else.
pub fn consistent_outputs(state: ProcessState, degree: usize) -> Vec<RegisterValue> {
    (1..=degree)
        .map(|k| RegisterValue::new(k == state.prnt, state.level))
        .collect()
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ActionError {
    #[error("{0} fired while its guard is false")]
    GuardViolated(ActionLabel),
    #[error("{0} is not an action of this role")]
    UnknownAction(ActionLabel),
    #[error("level arithmetic overflowed")]
    LevelOverflow,
}

/// A protocol given as guard predicates and action bodies per role.
pub trait GuardedProtocol: Send + Sync {
    fn kind(&self) -> ProtocolKind;

    /// Labels whose guards hold, in declaration order.
    fn enabled(&self, view: &LocalView, role: Role) -> Vec<ActionLabel>;

    fn execute(&self, action: ActionLabel, view: &LocalView, role: Role) -> Result<LocalEffect, ActionError>;

    /// Whether an output variable differs between two states of the same process.
    fn o_variables_differ(&self, before: &ProcessState, after: &ProcessState) -> bool;

    /// The per-process specification predicate.
    fn spec(&self, v: ProcessId, config: &Configuration, topo: &Topology) -> bool;

    /// Whether a correct process may hold `state`.
    fn state_in_domain(&self, state: &ProcessState, degree: usize, role: Role) -> bool;

    /// Whether guards read the `r_prnt` bit of input registers.
    fn reads_input_prnt(&self) -> bool;

    fn topology_mode(&self) -> TopologyMode;

    /// Shortcut for stability decisions the protocol can answer structurally.
    fn stability_hint(&self, _config: &Configuration, _topo: &Topology, _radius: usize) -> Option<bool> {
        None
    }

    fn name(&self) -> &'static str {
        self.kind().name()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProtocolKind {
    #[serde(rename = "ss-st")]
    SsSt,
    #[serde(rename = "ss-to")]
    SsTo,
}

impl ProtocolKind {
    pub fn name(self) -> &'static str {
        match self {
            ProtocolKind::SsSt => "ss-st",
            ProtocolKind::SsTo => "ss-to",
        }
    }

    pub fn protocol(self) -> &'static dyn GuardedProtocol {
        match self {
            ProtocolKind::SsSt => &crate::ss_st::SsSt,
            ProtocolKind::SsTo => &crate::ss_to::SsTo,
        }
    }
}

impl fmt::Display for ProtocolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProtocolKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ss-st" => Ok(ProtocolKind::SsSt),
            "ss-to" => Ok(ProtocolKind::SsTo),
            other => Err(format!("unknown protocol `{other}` (expected ss-st or ss-to)")),
        }
    }
}
