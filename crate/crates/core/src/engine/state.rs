use serde::{Deserialize, Serialize};

use super::EngineError;
use crate::protocol::{
    ActionLabel, GuardedProtocol, LocalEffect, LocalView, ProcessState, RegisterValue, Role,
};
use crate::topology::{ProcessId, Topology};

/// Every process state plus every link register.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Configuration {
    pub states: Vec<ProcessState>,
    /// `registers[v][k-1]` is `r_{v, N_v(k)}`, written by `v`.
    pub registers: Vec<Vec<RegisterValue>>,
}

impl Configuration {
    /// Builds a configuration whose registers all agree with `states`.
    pub fn consistent(topo: &Topology, states: Vec<ProcessState>) -> Self {
        let registers = topo
            .processes()
            .map(|v| crate::protocol::consistent_outputs(states[v.0], topo.degree(v)))
            .collect();
        Self { states, registers }
    }

    pub fn state(&self, v: ProcessId) -> ProcessState {
        self.states[v.0]
    }

    /// Register `r_{v,u}` where `u` is the k-th neighbor of `v` (1-based).
    pub fn register(&self, v: ProcessId, k: usize) -> RegisterValue {
        self.registers[v.0][k - 1]
    }

    /// Register read by `v` from its k-th neighbor: `r_{N_v(k), v}`.
    pub fn input(&self, topo: &Topology, v: ProcessId, k: usize) -> RegisterValue {
        let u = topo.neighbors(v)[k - 1];
        self.registers[u.0][topo.mirror(v, k - 1)]
    }

    pub fn view(&self, topo: &Topology, v: ProcessId) -> LocalView {
        let degree = topo.degree(v);
        LocalView {
            state: self.states[v.0],
            degree,
            inputs: (1..=degree).map(|k| self.input(topo, v, k)).collect(),
            outputs: self.registers[v.0].clone(),
        }
    }

    /// The neighbor designated by `prnt_v`, if `prnt_v` is a valid local index.
    pub fn parent(&self, topo: &Topology, v: ProcessId) -> Option<ProcessId> {
        let p = self.states[v.0].prnt;
        topo.neighbors(v).get(p.wrapping_sub(1)).copied()
    }

    pub fn outputs_consistent(&self, topo: &Topology, v: ProcessId) -> bool {
        self.registers[v.0] == crate::protocol::consistent_outputs(self.states[v.0], topo.degree(v))
    }

    /// Checks shape against the topology: one state per process, one register per directed edge.
    pub fn check_shape(&self, topo: &Topology) -> Result<(), EngineError> {
        if self.states.len() != topo.n() || self.registers.len() != topo.n() {
            return Err(EngineError::Malformed(format!(
                "expected {} processes, got {} states and {} register rows",
                topo.n(),
                self.states.len(),
                self.registers.len()
            )));
        }
        for v in topo.processes() {
            if self.registers[v.0].len() != topo.degree(v) {
                return Err(EngineError::Malformed(format!(
                    "process {v} has {} output registers, degree {}",
                    self.registers[v.0].len(),
                    topo.degree(v)
                )));
            }
        }
        Ok(())
    }

    /// Shape check plus the protocol's domain check on correct processes.
    pub fn check_well_formed(&self, topo: &Topology, protocol: &dyn GuardedProtocol) -> Result<(), EngineError> {
        self.check_shape(topo)?;
        for v in topo.correct() {
            if !protocol.state_in_domain(&self.states[v.0], topo.degree(v), role_of(topo, v)) {
                return Err(EngineError::Malformed(format!(
                    "state {:?} of {v} outside the {} domain",
                    self.states[v.0],
                    protocol.name()
                )));
            }
        }
        Ok(())
    }
}

/// Arbitrary writes by one activated Byzantine process.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ByzWrite {
    pub state: ProcessState,
    pub outputs: Vec<RegisterValue>,
}

/// One transition `rho --R--> rho'`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    /// Activated processes, sorted.
    pub activated: Vec<ProcessId>,
    /// For each activated correct process, the action it fired (`None` when disabled).
    pub fired: Vec<(ProcessId, Option<ActionLabel>)>,
    /// Writes by activated Byzantine processes; a silent one has no entry.
    pub byz_writes: Vec<(ProcessId, ByzWrite)>,
}

impl Step {
    pub fn fired_by(&self, v: ProcessId) -> Option<ActionLabel> {
        self.fired.iter().find(|(u, _)| *u == v).and_then(|(_, a)| *a)
    }
}

pub fn role_of(topo: &Topology, v: ProcessId) -> Role {
    if topo.is_root(v) {
        Role::Root
    } else {
        Role::NonRoot
    }
}

/// Labels whose guards hold on `view`, in declaration order.
pub fn evaluate_guards(view: &LocalView, role: Role, protocol: &dyn GuardedProtocol) -> Vec<ActionLabel> {
    protocol.enabled(view, role)
}

/// The action a correct process fires if activated in `config`.
pub fn enabled_action(
    config: &Configuration,
    topo: &Topology,
    protocol: &dyn GuardedProtocol,
    v: ProcessId,
) -> Result<Option<ActionLabel>, EngineError> {
    let view = config.view(topo, v);
    let labels = evaluate_guards(&view, role_of(topo, v), protocol);
    if labels.len() > 1 {
        return Err(EngineError::OverlappingGuards { process: v, labels });
    }
    Ok(labels.first().copied())
}

pub fn any_correct_enabled(
    config: &Configuration,
    topo: &Topology,
    protocol: &dyn GuardedProtocol,
) -> Result<bool, EngineError> {
    for v in topo.correct() {
        if enabled_action(config, topo, protocol, v)?.is_some() {
            return Ok(true);
        }
    }
    Ok(false)
}

/// Effect of `v` firing `action` against `config`.
pub fn local_effect(
    config: &Configuration,
    topo: &Topology,
    protocol: &dyn GuardedProtocol,
    v: ProcessId,
    action: ActionLabel,
) -> Result<LocalEffect, EngineError> {
    let view = config.view(topo, v);
    protocol
        .execute(action, &view, role_of(topo, v))
        .map_err(|source| EngineError::Action { process: v, source })
}

/// Validates `step` against `config` and returns each process's new state and outputs,
/// all computed from `config`.
pub(crate) fn step_effects(
    config: &Configuration,
    step: &Step,
    topo: &Topology,
    protocol: &dyn GuardedProtocol,
) -> Result<Vec<(ProcessId, LocalEffect)>, EngineError> {
    if step.activated.is_empty() {
        return Err(EngineError::EmptyActivation);
    }
    let mut activated = vec![false; topo.n()];
    for &v in &step.activated {
        if v.0 >= topo.n() {
            return Err(EngineError::UnknownProcess(v.0));
        }
        if std::mem::replace(&mut activated[v.0], true) {
            return Err(EngineError::DuplicateActivation(v));
        }
    }
    for (v, _) in &step.byz_writes {
        if !topo.is_byzantine(*v) {
            return Err(EngineError::ByzWriteForCorrect(*v));
        }
        if !activated[v.0] {
            return Err(EngineError::NotActivated(*v));
        }
    }
    for (v, _) in &step.fired {
        if topo.is_byzantine(*v) {
            return Err(EngineError::ActionForByzantine(*v));
        }
        if !activated[v.0] {
            return Err(EngineError::NotActivated(*v));
        }
    }

    let mut effects = Vec::with_capacity(step.activated.len());
    for &v in &step.activated {
        if topo.is_byzantine(v) {
            if let Some((_, w)) = step.byz_writes.iter().find(|(u, _)| *u == v) {
                if w.outputs.len() != topo.degree(v) {
                    return Err(EngineError::Malformed(format!(
                        "Byzantine write for {v} has {} registers, degree {}",
                        w.outputs.len(),
                        topo.degree(v)
                    )));
                }
                effects.push((
                    v,
                    LocalEffect {
                        state: w.state,
                        outputs: w.outputs.clone(),
                    },
                ));
            }
            continue;
        }
        let recorded = step
            .fired
            .iter()
            .find(|(u, _)| *u == v)
            .map(|(_, a)| *a)
            .ok_or(EngineError::MissingAction(v))?;
        let expected = enabled_action(config, topo, protocol, v)?;
        match (expected, recorded) {
            (None, None) => {}
            (None, Some(a)) => return Err(EngineError::ActionForDisabled { process: v, action: a }),
            (Some(e), r) if r != Some(e) => {
                return Err(EngineError::WrongAction {
                    process: v,
                    expected: e,
                    recorded: r,
                })
            }
            (Some(e), _) => effects.push((v, local_effect(config, topo, protocol, v, e)?)),
        }
    }
    Ok(effects)
}

/// Applies one atomic step. Every activated process computes its effect from
/// `config`; the effects are then merged.
pub fn apply_step(
    config: &Configuration,
    step: &Step,
    topo: &Topology,
    protocol: &dyn GuardedProtocol,
) -> Result<Configuration, EngineError> {
    let effects = step_effects(config, step, topo, protocol)?;
    let mut next = config.clone();
    for (v, effect) in effects {
        next.states[v.0] = effect.state;
        next.registers[v.0] = effect.outputs;
    }
    Ok(next)
}

/// Builds the step record for activating `activated` in `config`, filling in
/// the fired actions of correct processes.
pub fn make_step(
    config: &Configuration,
    mut activated: Vec<ProcessId>,
    byz_writes: Vec<(ProcessId, ByzWrite)>,
    topo: &Topology,
    protocol: &dyn GuardedProtocol,
) -> Result<Step, EngineError> {
    activated.sort_unstable();
    activated.dedup();
    let mut fired = Vec::new();
    for &v in &activated {
        if !topo.is_byzantine(v) {
            fired.push((v, enabled_action(config, topo, protocol, v)?));
        }
    }
    Ok(Step {
        activated,
        fired,
        byz_writes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::ProtocolKind;
    use crate::topology::TopologyMode;

    fn path3() -> Topology {
        Topology::with_neighbor_order(
            3,
            &[(0, 1), (1, 2)],
            vec![vec![1], vec![0, 2], vec![1]],
            Some(0),
            &[2],
            TopologyMode::SpanningTree,
        )
        .unwrap()
    }

    #[test]
    fn input_reads_mirror_register() {
        let t = path3();
        let mut c = Configuration::consistent(&t, vec![ProcessState::new(0, 0); 3]);
        c.registers[2][0] = RegisterValue::new(true, 9);
        assert_eq!(c.input(&t, ProcessId(1), 2), RegisterValue::new(true, 9));
        assert_eq!(c.view(&t, ProcessId(1)).inputs[1].r_level, 9);
    }

    #[test]
    fn apply_step_rejects_bad_steps() {
        let t = path3();
        let p = ProtocolKind::SsSt.protocol();
        let c = Configuration::consistent(&t, vec![ProcessState::new(0, 0); 3]);
        let empty = Step::default();
        assert_eq!(apply_step(&c, &empty, &t, p).unwrap_err(), EngineError::EmptyActivation);

        let write = ByzWrite {
            state: ProcessState::new(0, 0),
            outputs: vec![RegisterValue::default(); 2],
        };
        let bad = Step {
            activated: vec![ProcessId(1)],
            fired: vec![],
            byz_writes: vec![(ProcessId(1), write)],
        };
        assert_eq!(
            apply_step(&c, &bad, &t, p).unwrap_err(),
            EngineError::ByzWriteForCorrect(ProcessId(1))
        );

        // Root quiescent: recording GA0 is an error.
        let bad = Step {
            activated: vec![ProcessId(0)],
            fired: vec![(ProcessId(0), Some(ActionLabel::GA0))],
            byz_writes: vec![],
        };
        assert!(matches!(
            apply_step(&c, &bad, &t, p).unwrap_err(),
            EngineError::ActionForDisabled { .. }
        ));
    }

    #[test]
    fn byzantine_write_touches_only_its_registers() {
        let t = path3();
        let p = ProtocolKind::SsSt.protocol();
        let c = Configuration::consistent(&t, vec![ProcessState::new(0, 0), ProcessState::new(1, 1), ProcessState::new(1, 0)]);
        let write = ByzWrite {
            state: ProcessState::new(1, 999),
            outputs: vec![RegisterValue::new(false, 999)],
        };
        let step = Step {
            activated: vec![ProcessId(2)],
            fired: vec![],
            byz_writes: vec![(ProcessId(2), write)],
        };
        let next = apply_step(&c, &step, &t, p).unwrap();
        assert_eq!(next.states[0], c.states[0]);
        assert_eq!(next.states[1], c.states[1]);
        assert_eq!(next.registers[0], c.registers[0]);
        assert_eq!(next.registers[1], c.registers[1]);
        assert_eq!(next.registers[2][0].r_level, 999);
        assert_eq!(next.states[2].level, 999);
    }
}
