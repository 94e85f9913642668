//! Execution of guarded protocols over link registers.
//!
//! A run is strictly sequential: at every step the daemon picks the activated
//! set, Byzantine members ask the adversary what to write, correct members
//! fire their (unique) enabled action, and all effects are computed from the
//! same configuration before being merged.

mod check;
mod daemon;
mod state;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use check::{check_fairness, check_locality, check_replay, check_simultaneity, check_trace, Violation};
pub use daemon::{Daemon, DaemonKind, DaemonMode};
pub use state::{
    any_correct_enabled, apply_step, enabled_action, evaluate_guards, local_effect, make_step, role_of,
    ByzWrite, Configuration, Step,
};

use crate::adversary::{Adversary, AdversaryContext, ByzAction};
use crate::protocol::{ActionError, ActionLabel, GuardedProtocol};
use crate::topology::{ProcessId, Topology};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EngineError {
    #[error("activated set is empty")]
    EmptyActivation,
    #[error("process id {0} does not exist")]
    UnknownProcess(usize),
    #[error("process {0} activated twice in one step")]
    DuplicateActivation(ProcessId),
    #[error("Byzantine write recorded for correct process {0}")]
    ByzWriteForCorrect(ProcessId),
    #[error("action recorded for Byzantine process {0}")]
    ActionForByzantine(ProcessId),
    #[error("process {0} has an entry but was not activated")]
    NotActivated(ProcessId),
    #[error("activated correct process {0} has no action entry")]
    MissingAction(ProcessId),
    #[error("{action} recorded for disabled process {process}")]
    ActionForDisabled { process: ProcessId, action: ActionLabel },
    #[error("process {process} should fire {expected}, recorded {recorded:?}")]
    WrongAction {
        process: ProcessId,
        expected: ActionLabel,
        recorded: Option<ActionLabel>,
    },
    #[error("guards of process {process} are not mutually exclusive: {labels:?}")]
    OverlappingGuards { process: ProcessId, labels: Vec<ActionLabel> },
    #[error("action of process {process} failed: {source}")]
    Action { process: ProcessId, source: ActionError },
    #[error("malformed configuration: {0}")]
    Malformed(String),
    #[error("invalid daemon: {0}")]
    Daemon(String),
    #[error("adversary: {0}")]
    Adversary(String),
}

/// When a run stops.
pub struct StopCondition<'a> {
    pub max_steps: usize,
    /// Stop once no correct process is enabled and the adversary has pledged silence.
    pub quiescence: bool,
    pub predicate: Option<Box<dyn Fn(&Configuration) -> bool + 'a>>,
}

impl StopCondition<'_> {
    pub fn steps(max_steps: usize) -> Self {
        Self {
            max_steps,
            quiescence: true,
            predicate: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    MaxSteps,
    Quiescent,
    Predicate,
}

/// A finite execution prefix: `configs.len() == steps.len() + 1`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionTrace {
    pub configs: Vec<Configuration>,
    pub steps: Vec<Step>,
    /// Configuration indices at which each completed round ends.
    pub round_ends: Vec<usize>,
    pub stop: StopReason,
}

impl ExecutionTrace {
    pub fn initial(&self) -> &Configuration {
        &self.configs[0]
    }

    pub fn last(&self) -> &Configuration {
        self.configs.last().expect("trace is never empty")
    }

    /// Number of the round during which configuration `index` is reached (0 for the initial one).
    pub fn round_of(&self, index: usize) -> usize {
        round_of(&self.round_ends, index)
    }
}

pub fn round_of(round_ends: &[usize], index: usize) -> usize {
    if index == 0 {
        0
    } else {
        round_ends.partition_point(|&e| e < index) + 1
    }
}

/// Indices (into the configuration sequence) where each round ends: the first
/// prefix whose activated sets cover every correct process, then recursively on
/// the suffix. A trailing partial round is dropped.
pub fn round_boundaries(steps: &[Step], topo: &Topology) -> Vec<usize> {
    let correct: Vec<bool> = topo.processes().map(|v| !topo.is_byzantine(v)).collect();
    round_boundaries_for(steps.iter().map(|s| s.activated.as_slice()), &correct)
}

pub fn round_boundaries_for<'a>(activated: impl IntoIterator<Item = &'a [ProcessId]>, correct: &[bool]) -> Vec<usize> {
    let total = correct.iter().filter(|&&c| c).count();
    let mut ends = Vec::new();
    if total == 0 {
        return ends;
    }
    let mut covered = vec![false; correct.len()];
    let mut count = 0;
    for (i, set) in activated.into_iter().enumerate() {
        for v in set {
            if correct[v.0] && !covered[v.0] {
                covered[v.0] = true;
                count += 1;
            }
        }
        if count == total {
            ends.push(i + 1);
            covered.iter_mut().for_each(|c| *c = false);
            count = 0;
        }
    }
    ends
}

/// Runs `protocol` from `init` until `stop` triggers.
pub fn run(
    topo: &Topology,
    protocol: &dyn GuardedProtocol,
    adversary: &mut dyn Adversary,
    daemon: &mut Daemon,
    init: Configuration,
    stop: &StopCondition<'_>,
) -> Result<ExecutionTrace, EngineError> {
    init.check_well_formed(topo, protocol)?;
    let mut configs = vec![init];
    let mut steps: Vec<Step> = Vec::new();
    let reason = loop {
        let current = configs.last().unwrap();
        if let Some(pred) = &stop.predicate {
            if pred(current) {
                break StopReason::Predicate;
            }
        }
        if stop.quiescence && adversary.is_silent_forever() && !any_correct_enabled(current, topo, protocol)? {
            break StopReason::Quiescent;
        }
        if steps.len() >= stop.max_steps {
            break StopReason::MaxSteps;
        }
        let ctx = AdversaryContext {
            topo,
            protocol,
            config: current,
            step: steps.len(),
        };
        let proposal = adversary.propose(&ctx)?;
        let activated = daemon.choose(steps.len(), topo, proposal.as_deref());
        let mut writes = Vec::new();
        for &v in &activated {
            if topo.is_byzantine(v) {
                if let ByzAction::Write(w) = adversary.act(&ctx, v)? {
                    writes.push((v, w));
                }
            }
        }
        let step = make_step(current, activated, writes, topo, protocol)?;
        let next = apply_step(current, &step, topo, protocol)?;
        steps.push(step);
        configs.push(next);
    };
    let round_ends = round_boundaries(&steps, topo);
    Ok(ExecutionTrace {
        configs,
        steps,
        round_ends,
        stop: reason,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversary::Silent;
    use crate::protocol::{ProcessState, ProtocolKind};
    use crate::topology::TopologyMode;

    fn ids(v: &[usize]) -> Vec<ProcessId> {
        v.iter().map(|&i| ProcessId(i)).collect()
    }

    #[test]
    fn round_boundary_examples() {
        let a = ids(&[0]);
        let b = ids(&[1]);
        let ab = ids(&[0, 1]);
        let correct = [true, true];
        let sets = [a.as_slice(), b.as_slice(), ab.as_slice()];
        assert_eq!(round_boundaries_for(sets, &correct)[0], 2);
        let sets = [ab.as_slice(), ab.as_slice()];
        assert_eq!(round_boundaries_for(sets, &correct), vec![1, 2]);
        let correct3 = [true, true, true];
        let sets = [a.as_slice(), b.as_slice(), a.as_slice(), b.as_slice()];
        assert!(round_boundaries_for(sets, &correct3).is_empty());
    }

    #[test]
    fn round_of_counts_partial_rounds() {
        let ends = [2, 5];
        assert_eq!(round_of(&ends, 0), 0);
        assert_eq!(round_of(&ends, 1), 1);
        assert_eq!(round_of(&ends, 2), 1);
        assert_eq!(round_of(&ends, 3), 2);
        assert_eq!(round_of(&ends, 6), 3);
    }

    fn two_node() -> Topology {
        Topology::build(2, &[(0, 1)], Some(0), &[], 0, TopologyMode::SpanningTree).unwrap()
    }

    #[test]
    fn legitimate_start_is_quiescent() {
        let t = two_node();
        let p = ProtocolKind::SsSt.protocol();
        let init = Configuration::consistent(&t, vec![ProcessState::new(0, 0), ProcessState::new(1, 1)]);
        let mut d = Daemon::new(DaemonKind::Distributed, DaemonMode::Neutral, 4, 1, &t).unwrap();
        let trace = run(&t, p, &mut Silent, &mut d, init, &StopCondition::steps(100)).unwrap();
        assert_eq!(trace.configs.len(), 1);
        assert_eq!(trace.stop, StopReason::Quiescent);
    }

    #[test]
    fn two_node_recovers_from_bad_level() {
        // Hand replay: a has prnt=1 (the root) but level 5, so GA1 fires once:
        // prnt := next(1) = 1, level := 0 + 1.
        let t = two_node();
        let p = ProtocolKind::SsSt.protocol();
        let init = Configuration::consistent(&t, vec![ProcessState::new(0, 0), ProcessState::new(1, 5)]);
        let mut d = Daemon::new(DaemonKind::Central, DaemonMode::Neutral, 2, 9, &t).unwrap();
        let trace = run(&t, p, &mut Silent, &mut d, init, &StopCondition::steps(100)).unwrap();
        assert_eq!(trace.stop, StopReason::Quiescent);
        assert_eq!(trace.last().states[1], ProcessState::new(1, 1));
        let fired: Vec<_> = trace.steps.iter().filter_map(|s| s.fired_by(ProcessId(1))).collect();
        assert_eq!(fired, vec![ActionLabel::GA1]);
    }

    #[test]
    fn max_steps_and_predicate_stop() {
        let t = two_node();
        let p = ProtocolKind::SsSt.protocol();
        let init = Configuration::consistent(&t, vec![ProcessState::new(0, 3), ProcessState::new(0, 5)]);
        let mut d = Daemon::new(DaemonKind::Central, DaemonMode::Neutral, 2, 9, &t).unwrap();
        let trace = run(&t, p, &mut Silent, &mut d, init.clone(), &StopCondition::steps(0)).unwrap();
        assert_eq!(trace.stop, StopReason::MaxSteps);
        let stop = StopCondition {
            max_steps: 100,
            quiescence: false,
            predicate: Some(Box::new(|c: &Configuration| c.states[0].level == 0)),
        };
        let mut d = Daemon::new(DaemonKind::Central, DaemonMode::Neutral, 2, 9, &t).unwrap();
        let trace = run(&t, p, &mut Silent, &mut d, init, &stop).unwrap();
        assert_eq!(trace.stop, StopReason::Predicate);
        assert_eq!(trace.last().states[0].level, 0);
    }
}
