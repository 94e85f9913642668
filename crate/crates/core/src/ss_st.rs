//! Spanning-tree construction with round-robin parent selection.
//!
//! A non-root process that finds its level inconsistent with its parent's does
//! not look for a better parent; it moves to the next neighbor in its local
//! order. A lying neighbor can therefore capture it only once per full cycle.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::engine::{Configuration, Violation};
use crate::engine::ExecutionTrace;
use crate::protocol::{
    ActionError, ActionLabel, GuardedProtocol, LocalEffect, LocalView, ProcessState, ProtocolKind,
    RegisterValue, Role,
};
use crate::topology::{ProcessId, Topology, TopologyMode};

#[derive(Clone, Copy, Debug, Default)]
pub struct SsSt;

/// `next_v(k) = (k mod Δ_v) + 1`.
pub fn next(k: usize, degree: usize) -> usize {
    (k % degree) + 1
}

pub fn pred0(view: &LocalView) -> bool {
    view.state.prnt != 0
        || view.state.level != 0
        || view.outputs.iter().any(|r| *r != RegisterValue::new(false, 0))
}

pub fn pred1(view: &LocalView) -> bool {
    if !view.parent_is_valid() {
        return true;
    }
    let parent = view.input(view.state.prnt).r_level;
    parent.checked_add(1) != Some(view.state.level)
}

/// Some output register disagrees with `(prnt, level)`.
pub fn pred2(view: &LocalView) -> bool {
    !view.outputs_consistent()
}

fn ga0(view: &LocalView) -> LocalEffect {
    LocalEffect::from_state(ProcessState::new(0, 0), view.degree)
}

fn ga1(view: &LocalView) -> Result<LocalEffect, ActionError> {
    let prnt = next(view.state.prnt, view.degree);
    let level = view
        .input(prnt)
        .r_level
        .checked_add(1)
        .ok_or(ActionError::LevelOverflow)?;
    Ok(LocalEffect::from_state(ProcessState::new(prnt, level), view.degree))
}

fn ga2(view: &LocalView) -> LocalEffect {
    LocalEffect::from_state(view.state, view.degree)
}

impl GuardedProtocol for SsSt {
    fn kind(&self) -> ProtocolKind {
        ProtocolKind::SsSt
    }

    fn enabled(&self, view: &LocalView, role: Role) -> Vec<ActionLabel> {
        let mut out = Vec::new();
        match role {
            Role::Root => {
                if pred0(view) {
                    out.push(ActionLabel::GA0);
                }
            }
            Role::NonRoot => {
                let p1 = pred1(view);
                if p1 {
                    out.push(ActionLabel::GA1);
                }
                if !p1 && pred2(view) {
                    out.push(ActionLabel::GA2);
                }
            }
        }
        out
    }

    fn execute(&self, action: ActionLabel, view: &LocalView, role: Role) -> Result<LocalEffect, ActionError> {
        match (role, action) {
            (Role::Root, ActionLabel::GA0) if pred0(view) => Ok(ga0(view)),
            (Role::NonRoot, ActionLabel::GA1) if pred1(view) => ga1(view),
            (Role::NonRoot, ActionLabel::GA2) if !pred1(view) && pred2(view) => Ok(ga2(view)),
            (Role::Root, ActionLabel::GA0) | (Role::NonRoot, ActionLabel::GA1 | ActionLabel::GA2) => {
                Err(ActionError::GuardViolated(action))
            }
            _ => Err(ActionError::UnknownAction(action)),
        }
    }

    fn o_variables_differ(&self, before: &ProcessState, after: &ProcessState) -> bool {
        before != after
    }

    fn spec(&self, v: ProcessId, config: &Configuration, topo: &Topology) -> bool {
        spec_st(v, config, topo)
    }

    fn state_in_domain(&self, _state: &ProcessState, _degree: usize, _role: Role) -> bool {
        // prnt and level are unconstrained before the first action.
        true
    }

    fn reads_input_prnt(&self) -> bool {
        false
    }

    fn topology_mode(&self) -> TopologyMode {
        TopologyMode::SpanningTree
    }
}

/// Root: `prnt = 0` and `level = 0`. Non-root: a valid parent whose level is one
/// less, or a Byzantine parent.
pub fn spec_st(v: ProcessId, config: &Configuration, topo: &Topology) -> bool {
    let s = config.state(v);
    if topo.is_root(v) {
        return s.prnt == 0 && s.level == 0;
    }
    match config.parent(topo, v) {
        None => false,
        Some(p) => topo.is_byzantine(p) || config.state(p).level.checked_add(1) == Some(s.level),
    }
}

/// Membership in the legitimate set: the root is reset and every correct
/// non-root has a valid parent whose level is exactly one less. A Byzantine
/// parent's level is the one it exposes in the register read by the child,
/// since its variables are invisible to correct processes.
pub fn in_lc(config: &Configuration, topo: &Topology) -> bool {
    topo.correct().all(|v| {
        let s = config.state(v);
        if topo.is_root(v) {
            return s.prnt == 0 && s.level == 0;
        }
        match config.parent(topo, v) {
            None => false,
            Some(p) => {
                let parent_level = if topo.is_byzantine(p) {
                    config.input(topo, v, s.prnt).r_level
                } else {
                    config.state(p).level
                };
                parent_level.checked_add(1) == Some(s.level)
            }
        }
    })
}

/// [`in_lc`] with every correct process's registers reflecting its variables.
pub fn in_lc_settled(config: &Configuration, topo: &Topology) -> bool {
    in_lc(config, topo) && topo.correct().all(|v| config.outputs_consistent(topo, v))
}

/// A random member of the legitimate set with settled registers. Correct
/// processes attach one at a time to an already attached neighbor (the root or
/// any Byzantine process seeds the attached set), so the parent relation among
/// correct processes is acyclic.
pub fn random_lc(topo: &Topology, rng: &mut impl Rng) -> Configuration {
    let n = topo.n();
    let level_cap = 2 * n as i64;
    let mut states = vec![ProcessState::default(); n];
    let mut attached = vec![false; n];
    for &b in topo.byzantine() {
        states[b.0] = ProcessState::new(rng.gen_range(0..=topo.degree(b)), rng.gen_range(0..=level_cap));
        attached[b.0] = true;
    }
    if let Some(r) = topo.root() {
        attached[r.0] = true;
    }
    loop {
        let frontier: Vec<ProcessId> = topo
            .correct()
            .filter(|v| !attached[v.0] && topo.neighbors(*v).iter().any(|u| attached[u.0]))
            .collect();
        let Some(&v) = frontier.choose(rng) else { break };
        let options: Vec<usize> = (1..=topo.degree(v))
            .filter(|&k| attached[topo.neighbors(v)[k - 1].0])
            .collect();
        let k = *options.choose(rng).unwrap();
        let p = topo.neighbors(v)[k - 1];
        states[v.0] = ProcessState::new(k, states[p.0].level + 1);
        attached[v.0] = true;
    }
    let mut config = Configuration::consistent(topo, states);
    for &b in topo.byzantine() {
        let level = config.states[b.0].level;
        for r in config.registers[b.0].iter_mut() {
            *r = RegisterValue::new(rng.gen_bool(0.5), level);
        }
    }
    config
}

/// Every GA1 firing advances `prnt` by exactly one position in the local
/// round-robin order, so a process revisits a given neighbor only after Δ_v
/// firings.
pub fn check_round_robin(trace: &ExecutionTrace, topo: &Topology) -> Vec<Violation> {
    let mut out = Vec::new();
    for (i, step) in trace.steps.iter().enumerate() {
        for (v, a) in &step.fired {
            let before = trace.configs[i].state(*v);
            let after = trace.configs[i + 1].state(*v);
            let ok = match a {
                Some(ActionLabel::GA1) => after.prnt == next(before.prnt, topo.degree(*v)),
                Some(ActionLabel::GA0) => after.prnt == 0,
                _ => after.prnt == before.prnt,
            };
            if !ok {
                out.push(Violation {
                    check: "round-robin",
                    step: i,
                    detail: format!("{v} moved prnt {} -> {} by {a:?}", before.prnt, after.prnt),
                });
            }
        }
    }
    out
}
