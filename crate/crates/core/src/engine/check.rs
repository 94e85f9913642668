//! Trace-level checks of the execution semantics.

use std::fmt;

use super::state::{apply_step, Step};
use super::ExecutionTrace;
use crate::protocol::GuardedProtocol;
use crate::topology::Topology;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub check: &'static str,
    pub step: usize,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at step {}: {}", self.check, self.step, self.detail)
    }
}

fn violation(check: &'static str, step: usize, detail: impl Into<String>) -> Violation {
    Violation {
        check,
        step,
        detail: detail.into(),
    }
}

/// `configs[i+1] == apply_step(configs[i], steps[i])` for every i.
pub fn check_replay(trace: &ExecutionTrace, topo: &Topology, protocol: &dyn GuardedProtocol) -> Vec<Violation> {
    let mut out = Vec::new();
    if trace.configs.len() != trace.steps.len() + 1 {
        out.push(violation("replay", 0, "configs and steps lengths disagree"));
        return out;
    }
    for (i, step) in trace.steps.iter().enumerate() {
        match apply_step(&trace.configs[i], step, topo, protocol) {
            Ok(next) if next == trace.configs[i + 1] => {}
            Ok(_) => out.push(violation("replay", i, "recomputed configuration differs")),
            Err(e) => out.push(violation("replay", i, e.to_string())),
        }
    }
    out
}

/// Only activated processes' states and output registers change.
pub fn check_locality(trace: &ExecutionTrace, topo: &Topology) -> Vec<Violation> {
    let mut out = Vec::new();
    for (i, step) in trace.steps.iter().enumerate() {
        let (a, b) = (&trace.configs[i], &trace.configs[i + 1]);
        for v in topo.processes() {
            if step.activated.binary_search(&v).is_ok() {
                continue;
            }
            if a.states[v.0] != b.states[v.0] || a.registers[v.0] != b.registers[v.0] {
                out.push(violation("locality", i, format!("non-activated {v} changed")));
            }
        }
    }
    out
}

fn singleton(step: &Step, v: crate::topology::ProcessId) -> Step {
    Step {
        activated: vec![v],
        fired: step.fired.iter().filter(|(u, _)| *u == v).cloned().collect(),
        byz_writes: step.byz_writes.iter().filter(|(u, _)| *u == v).cloned().collect(),
    }
}

/// The joint step equals merging each member's effect computed alone against
/// the same pre-step configuration.
pub fn check_simultaneity(trace: &ExecutionTrace, topo: &Topology, protocol: &dyn GuardedProtocol) -> Vec<Violation> {
    let mut out = Vec::new();
    for (i, step) in trace.steps.iter().enumerate() {
        let before = &trace.configs[i];
        let mut merged = before.clone();
        for &v in &step.activated {
            match apply_step(before, &singleton(step, v), topo, protocol) {
                Ok(alone) => {
                    merged.states[v.0] = alone.states[v.0];
                    merged.registers[v.0] = alone.registers[v.0].clone();
                }
                Err(e) => {
                    out.push(violation("simultaneity", i, e.to_string()));
                }
            }
        }
        if merged != trace.configs[i + 1] {
            out.push(violation("simultaneity", i, "merged singleton effects differ from the joint step"));
        }
    }
    out
}

/// Every window of `bound` consecutive steps activates every correct process.
pub fn check_fairness(trace: &ExecutionTrace, topo: &Topology, bound: usize) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut last_seen: Vec<Option<usize>> = vec![None; topo.n()];
    for (i, step) in trace.steps.iter().enumerate() {
        for v in &step.activated {
            last_seen[v.0] = Some(i);
        }
        if i + 1 < bound {
            continue;
        }
        let window_start = i + 1 - bound;
        for v in topo.correct() {
            if last_seen[v.0].is_none_or(|s| s < window_start) {
                out.push(violation(
                    "fairness",
                    i,
                    format!("{v} not activated in steps {window_start}..={i}"),
                ));
            }
        }
    }
    out
}

/// All engine invariants on one trace.
pub fn check_trace(
    trace: &ExecutionTrace,
    topo: &Topology,
    protocol: &dyn GuardedProtocol,
    bound: usize,
) -> Vec<Violation> {
    let mut out = check_replay(trace, topo, protocol);
    out.extend(check_locality(trace, topo));
    out.extend(check_simultaneity(trace, topo, protocol));
    out.extend(check_fairness(trace, topo, bound));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{Configuration, StopReason};
    use crate::protocol::{ProcessState, ProtocolKind};
    use crate::topology::{ProcessId, TopologyMode};

    #[test]
    fn tampered_traces_are_caught() {
        let t = Topology::build(3, &[(0, 1), (1, 2)], Some(0), &[], 3, TopologyMode::SpanningTree).unwrap();
        let p = ProtocolKind::SsSt.protocol();
        let c0 = Configuration::consistent(&t, vec![ProcessState::new(0, 0), ProcessState::new(0, 4), ProcessState::new(0, 4)]);
        let step = crate::engine::make_step(&c0, vec![ProcessId(1)], vec![], &t, p).unwrap();
        let c1 = apply_step(&c0, &step, &t, p).unwrap();
        let good = ExecutionTrace {
            configs: vec![c0.clone(), c1.clone()],
            steps: vec![step.clone()],
            round_ends: vec![],
            stop: StopReason::MaxSteps,
        };
        assert!(check_replay(&good, &t, p).is_empty());
        assert!(check_locality(&good, &t).is_empty());
        assert!(check_simultaneity(&good, &t, p).is_empty());
        assert_eq!(check_fairness(&good, &t, 1).len(), 2);

        let mut bad = good.clone();
        bad.configs[1].states[2].level = 77;
        assert!(!check_replay(&bad, &t, p).is_empty());
        assert!(!check_locality(&bad, &t).is_empty());
        assert!(!check_simultaneity(&bad, &t, p).is_empty());
    }
}
