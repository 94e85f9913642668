//! Tree orientation in anonymous trees.
//!
//! Levels only grow. A process adopts any neighbor showing a strictly larger
//! level, and two neighbors with equal levels that do not point at each other
//! are resolved by one of them adopting the other and stepping its level up.

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::engine::{Configuration, ExecutionTrace, Violation};
use crate::protocol::{
    ActionError, ActionLabel, GuardedProtocol, LocalEffect, LocalView, ProcessState, ProtocolKind, RegisterValue, Role,
};
use crate::topology::{ProcessId, Topology, TopologyMode};

#[derive(Clone, Copy, Debug, Default)]
pub struct SsTo;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SubtreeClass {
    C1,
    C2,
    Neither,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LegitimacyError {
    #[error("expected {expected} Byzantine processes, topology has {found}")]
    ByzantineCount { expected: usize, found: usize },
    #[error("{0} is not in a component of the tree without the Byzantine process")]
    NotAComponent(ProcessId),
}

pub fn pred1(view: &LocalView) -> bool {
    view.inputs.iter().any(|r| r.r_level > view.state.level)
}

fn pred2_choice(view: &LocalView) -> Option<usize> {
    (1..=view.degree)
        .filter(|&k| k != view.state.prnt)
        .find(|&k| {
            let r = view.input(k);
            r.r_level == view.state.level && !r.r_prnt
        })
}

pub fn pred2(view: &LocalView) -> bool {
    pred2_choice(view).is_some()
}

pub fn pred3(view: &LocalView) -> bool {
    !view.outputs_consistent()
}

/// Lowest neighbor index among those showing the maximal input level.
fn ga1_choice(view: &LocalView) -> (usize, i64) {
    let mut best = (1, view.input(1).r_level);
    for k in 2..=view.degree {
        let l = view.input(k).r_level;
        if l > best.1 {
            best = (k, l);
        }
    }
    best
}

impl GuardedProtocol for SsTo {
    fn kind(&self) -> ProtocolKind {
        ProtocolKind::SsTo
    }

    fn enabled(&self, view: &LocalView, _role: Role) -> Vec<ActionLabel> {
        let p1 = pred1(view);
        let p2 = pred2(view);
        let mut out = Vec::new();
        if p1 {
            out.push(ActionLabel::GA1);
        }
        if !p1 && p2 {
            out.push(ActionLabel::GA2);
        }
        if !p1 && !p2 && pred3(view) {
            out.push(ActionLabel::GA3);
        }
        out
    }

    fn execute(&self, action: ActionLabel, view: &LocalView, role: Role) -> Result<LocalEffect, ActionError> {
        if !self.enabled(view, role).contains(&action) {
            return Err(match action {
                ActionLabel::GA0 => ActionError::UnknownAction(action),
                _ => ActionError::GuardViolated(action),
            });
        }
        let state = match action {
            ActionLabel::GA1 => {
                let (k, level) = ga1_choice(view);
                ProcessState::new(k, level)
            }
            ActionLabel::GA2 => {
                let k = pred2_choice(view).expect("guard checked");
                let level = view.state.level.checked_add(1).ok_or(ActionError::LevelOverflow)?;
                ProcessState::new(k, level)
            }
            ActionLabel::GA3 => view.state,
            ActionLabel::GA0 => unreachable!(),
        };
        Ok(LocalEffect::from_state(state, view.degree))
    }

    fn o_variables_differ(&self, before: &ProcessState, after: &ProcessState) -> bool {
        before.prnt != after.prnt
    }

    fn spec(&self, v: ProcessId, config: &Configuration, topo: &Topology) -> bool {
        spec_to(v, config, topo)
    }

    fn state_in_domain(&self, state: &ProcessState, degree: usize, _role: Role) -> bool {
        (1..=degree).contains(&state.prnt)
    }

    fn reads_input_prnt(&self) -> bool {
        true
    }

    fn topology_mode(&self) -> TopologyMode {
        TopologyMode::TreeOrientation
    }

    fn stability_hint(&self, config: &Configuration, topo: &Topology, _radius: usize) -> Option<bool> {
        // A settled configuration in LC0 (fault-free) or LC2 (one Byzantine
        // process) never sees a correct prnt change, whatever the Byzantine
        // process does. Stability at radius 0 implies it at every larger radius.
        if !topo.correct().all(|v| config.outputs_consistent(topo, v)) {
            return None;
        }
        let legit = match topo.f() {
            0 => in_lc0(config, topo).ok(),
            1 => in_lc2(config, topo).ok(),
            _ => None,
        };
        legit.and_then(|b| b.then_some(true))
    }
}

/// For every neighbor `u`: `v` points at `u`, `u` points at `v`, or `u` is Byzantine.
pub fn spec_to(v: ProcessId, config: &Configuration, topo: &Topology) -> bool {
    let pv = config.parent(topo, v);
    topo.neighbors(v)
        .iter()
        .all(|&u| pv == Some(u) || config.parent(topo, u) == Some(v) || topo.is_byzantine(u))
}

fn single_byzantine(topo: &Topology) -> Result<ProcessId, LegitimacyError> {
    match topo.f() {
        1 => Ok(*topo.byzantine().iter().next().unwrap()),
        found => Err(LegitimacyError::ByzantineCount { expected: 1, found }),
    }
}

/// Classifies one connected component of the tree without its Byzantine process.
pub fn classify_subtree(
    config: &Configuration,
    topo: &Topology,
    component: &[ProcessId],
) -> Result<SubtreeClass, LegitimacyError> {
    let z = single_byzantine(topo)?;
    let mut inside = vec![false; topo.n()];
    for &v in component {
        if v == z || v.0 >= topo.n() {
            return Err(LegitimacyError::NotAComponent(v));
        }
        inside[v.0] = true;
    }
    if !component.iter().all(|&v| spec_to(v, config, topo)) {
        return Ok(SubtreeClass::Neither);
    }
    let dist = topo.bfs(&[z], |_| true);
    let y = component.iter().copied().find(|&v| topo.neighbors(v).contains(&z));
    let Some(y) = y else {
        return Err(LegitimacyError::NotAComponent(component[0]));
    };
    let level = |v: ProcessId| config.state(v).level;
    let c1 = config.parent(topo, y) == Some(z)
        && component.iter().all(|&w| {
            topo.neighbors(w)
                .iter()
                .filter(|x| inside[x.0] && dist[x.0] > dist[w.0])
                .all(|&x| level(w) >= level(x))
        });
    if c1 {
        return Ok(SubtreeClass::C1);
    }
    let l0 = level(component[0]);
    if component.iter().all(|&v| level(v) == l0) {
        Ok(SubtreeClass::C2)
    } else {
        Ok(SubtreeClass::Neither)
    }
}

/// Fault-free: spec everywhere and one common level.
pub fn in_lc0(config: &Configuration, topo: &Topology) -> Result<bool, LegitimacyError> {
    if topo.f() != 0 {
        return Err(LegitimacyError::ByzantineCount {
            expected: 0,
            found: topo.f(),
        });
    }
    let l0 = config.states[0].level;
    Ok(topo.processes().all(|v| spec_to(v, config, topo) && config.state(v).level == l0))
}

fn classes(config: &Configuration, topo: &Topology) -> Result<Vec<SubtreeClass>, LegitimacyError> {
    let z = single_byzantine(topo)?;
    topo.components_without(z)
        .iter()
        .map(|c| classify_subtree(config, topo, c))
        .collect()
}

pub fn in_lc1(config: &Configuration, topo: &Topology) -> Result<bool, LegitimacyError> {
    Ok(classes(config, topo)?.iter().all(|c| *c != SubtreeClass::Neither))
}

pub fn in_lc2(config: &Configuration, topo: &Topology) -> Result<bool, LegitimacyError> {
    Ok(classes(config, topo)?.iter().all(|c| *c == SubtreeClass::C1))
}

/// LC0 when fault-free, LC1 with one Byzantine process; false otherwise.
pub fn in_legitimate_set(config: &Configuration, topo: &Topology) -> bool {
    match topo.f() {
        0 => in_lc0(config, topo).unwrap_or(false),
        1 => in_lc1(config, topo).unwrap_or(false),
        _ => false,
    }
}

/// Points every process of `nodes` toward `target` (a member or a neighbor of
/// the set) along the unique tree path.
fn orient_toward(topo: &Topology, states: &mut [ProcessState], nodes: &[ProcessId], target: ProcessId) {
    let mut member = vec![false; topo.n()];
    for v in nodes {
        member[v.0] = true;
    }
    member[target.0] = true;
    let dist = topo.bfs(&[target], |v| member[v.0]);
    for &v in nodes {
        if v == target {
            continue;
        }
        let k = (1..=topo.degree(v))
            .find(|&k| {
                let u = topo.neighbors(v)[k - 1];
                member[u.0] && dist[u.0].is_some() && dist[u.0] < dist[v.0]
            })
            .expect("tree path exists");
        states[v.0].prnt = k;
    }
}

fn random_root_link(topo: &Topology, nodes: &[ProcessId], states: &mut [ProcessState], rng: &mut impl Rng) {
    let mut member = vec![false; topo.n()];
    for v in nodes {
        member[v.0] = true;
    }
    let links: Vec<(ProcessId, ProcessId)> = topo
        .edges()
        .iter()
        .copied()
        .filter(|(a, b)| member[a.0] && member[b.0])
        .collect();
    let &(a, b) = links.choose(rng).expect("component has an edge");
    orient_toward(topo, states, nodes, a);
    states[a.0].prnt = topo.local_index(a, b).unwrap();
}

/// A random fault-free legitimate configuration: a random root link, every
/// other process pointing toward it, one common level.
pub fn random_lc0(topo: &Topology, rng: &mut impl Rng) -> Configuration {
    let level = rng.gen_range(0..=2 * topo.n() as i64);
    let mut states = vec![ProcessState::new(1, level); topo.n()];
    let all: Vec<ProcessId> = topo.processes().collect();
    random_root_link(topo, &all, &mut states, rng);
    Configuration::consistent(topo, states)
}

fn c1_component(topo: &Topology, z: ProcessId, comp: &[ProcessId], states: &mut [ProcessState], rng: &mut impl Rng) {
    let n = topo.n() as i64;
    orient_toward(topo, states, comp, z);
    let mut member = vec![false; topo.n()];
    for v in comp {
        member[v.0] = true;
    }
    member[z.0] = true;
    let dist = topo.bfs(&[z], |v| member[v.0]);
    let mut order = comp.to_vec();
    order.sort_by_key(|v| dist[v.0]);
    for v in order {
        let p = topo.neighbors(v)[states[v.0].prnt - 1];
        states[v.0].level = if p == z {
            rng.gen_range(n..=2 * n)
        } else {
            states[p.0].level - rng.gen_range(0..=1)
        };
    }
}

fn byz_noise(topo: &Topology, config: &mut Configuration, z: ProcessId, rng: &mut impl Rng) {
    let cap = 2 * topo.n() as i64;
    config.states[z.0] = ProcessState::new(rng.gen_range(1..=topo.degree(z)), rng.gen_range(0..=cap));
    for r in config.registers[z.0].iter_mut() {
        *r = RegisterValue::new(rng.gen_bool(0.5), rng.gen_range(0..=cap));
    }
}

/// A random LC2 configuration: every component points at the Byzantine
/// process with levels non-increasing away from it. Byzantine state and
/// registers are random.
pub fn random_lc2(topo: &Topology, rng: &mut impl Rng) -> Result<Configuration, LegitimacyError> {
    let z = single_byzantine(topo)?;
    let mut states = vec![ProcessState::new(1, 0); topo.n()];
    for comp in topo.components_without(z) {
        c1_component(topo, z, &comp, &mut states, rng);
    }
    let mut c = Configuration::consistent(topo, states);
    byz_noise(topo, &mut c, z, rng);
    Ok(c)
}

/// A random LC1 configuration: each component independently C1 or C2.
pub fn random_lc1(topo: &Topology, rng: &mut impl Rng) -> Result<Configuration, LegitimacyError> {
    let z = single_byzantine(topo)?;
    let mut states = vec![ProcessState::new(1, 0); topo.n()];
    for comp in topo.components_without(z) {
        if comp.len() >= 2 && rng.gen_bool(0.5) {
            let level = rng.gen_range(0..=2 * topo.n() as i64);
            for v in &comp {
                states[v.0].level = level;
            }
            random_root_link(topo, &comp, &mut states, rng);
        } else {
            c1_component(topo, z, &comp, &mut states, rng);
        }
    }
    let mut c = Configuration::consistent(topo, states);
    byz_noise(topo, &mut c, z, rng);
    Ok(c)
}

/// Correct levels never decrease from one configuration to the next.
pub fn check_level_monotone(trace: &ExecutionTrace, topo: &Topology) -> Vec<Violation> {
    let mut out = Vec::new();
    for (i, w) in trace.configs.windows(2).enumerate() {
        for v in topo.correct() {
            if w[1].state(v).level < w[0].state(v).level {
                out.push(Violation {
                    check: "level-monotone",
                    step: i,
                    detail: format!("{v} level {} -> {}", w[0].state(v).level, w[1].state(v).level),
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{apply_step, make_step};
    use crate::protocol::consistent_outputs;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn view(state: ProcessState, inputs: Vec<RegisterValue>) -> LocalView {
        let degree = inputs.len();
        LocalView {
            state,
            degree,
            inputs,
            outputs: consistent_outputs(state, degree),
        }
    }

    #[test]
    fn guards() {
        let v = view(ProcessState::new(1, 3), vec![RegisterValue::new(false, 9), RegisterValue::new(false, 1)]);
        assert!(pred1(&v));
        assert_eq!(SsTo.enabled(&v, Role::NonRoot), vec![ActionLabel::GA1]);

        let v = view(ProcessState::new(1, 3), vec![RegisterValue::new(true, 3), RegisterValue::new(false, 3)]);
        assert!(!pred1(&v));
        assert!(pred2(&v));
        assert_eq!(SsTo.enabled(&v, Role::NonRoot), vec![ActionLabel::GA2]);

        let v = view(ProcessState::new(1, 3), vec![RegisterValue::new(false, 3), RegisterValue::new(true, 3)]);
        assert!(!pred2(&v), "the parent and a child never trigger GA2");
        assert!(!pred3(&v));
        assert!(SsTo.enabled(&v, Role::NonRoot).is_empty());
    }

    #[test]
    fn ga1_takes_the_max_with_lowest_index() {
        let v = view(
            ProcessState::new(1, 3),
            vec![RegisterValue::new(false, 2), RegisterValue::new(false, 5), RegisterValue::new(true, 5)],
        );
        let eff = SsTo.execute(ActionLabel::GA1, &v, Role::NonRoot).unwrap();
        assert_eq!(eff.state, ProcessState::new(2, 5));
        assert_eq!(eff.outputs[1], RegisterValue::new(true, 5));
        assert_eq!(eff.outputs[2], RegisterValue::new(false, 5));
    }

    fn chain3() -> Topology {
        Topology::with_neighbor_order(
            3,
            &[(0, 1), (1, 2)],
            vec![vec![1], vec![0, 2], vec![1]],
            None,
            &[],
            TopologyMode::TreeOrientation,
        )
        .unwrap()
    }

    /// u-v-w with prnt_v = w and u showing v's level with r_prnt false: v
    /// adopts u and increments. Traced by hand against the action bodies.
    #[test]
    fn ga2_on_three_chain() {
        let t = chain3();
        let c = Configuration::consistent(&t, vec![ProcessState::new(1, 4), ProcessState::new(2, 4), ProcessState::new(1, 4)]);
        let v = ProcessId(1);
        // u's register toward v: u points at v, so r_prnt would be true. Make u point away.
        let mut c = c;
        c.registers[0][0] = RegisterValue::new(false, 4);
        assert_eq!(crate::engine::enabled_action(&c, &t, &SsTo, v).unwrap(), Some(ActionLabel::GA2));
        let step = make_step(&c, vec![v], vec![], &t, &SsTo).unwrap();
        let next = apply_step(&c, &step, &t, &SsTo).unwrap();
        assert_eq!(next.state(v), ProcessState::new(1, 5));
    }

    #[test]
    fn two_node_root_link_is_quiet() {
        let t = Topology::build(2, &[(0, 1)], None, &[], 0, TopologyMode::TreeOrientation).unwrap();
        let c = Configuration::consistent(&t, vec![ProcessState::new(1, 4); 2]);
        assert!(in_lc0(&c, &t).unwrap());
        for v in t.processes() {
            assert!(SsTo.enabled(&c.view(&t, v), Role::NonRoot).is_empty());
        }
    }

    #[test]
    fn spec_examples() {
        let t = chain3();
        // 0 -> 1 <- 2 with 1 -> 0: root link (0,1).
        let c = Configuration::consistent(&t, vec![ProcessState::new(1, 0), ProcessState::new(1, 0), ProcessState::new(1, 0)]);
        assert!(t.processes().all(|v| spec_to(v, &c, &t)));
        // 1 -> 0 and 2 -> 1 but 0 -> 1 ... make 1 and 2 point away from each other.
        let c = Configuration::consistent(&t, vec![ProcessState::new(1, 0), ProcessState::new(1, 0), ProcessState::new(1, 0)]);
        let mut c2 = c.clone();
        c2.states[2].prnt = 1;
        c2.states[1].prnt = 1;
        assert!(spec_to(ProcessId(2), &c2, &t));
        let t4 = Topology::with_neighbor_order(
            4,
            &[(0, 1), (1, 2), (2, 3)],
            vec![vec![1], vec![0, 2], vec![1, 3], vec![2]],
            None,
            &[],
            TopologyMode::TreeOrientation,
        )
        .unwrap();
        // 1 -> 0 and 2 -> 3: the link (1,2) has both ends pointing away.
        let c = Configuration::consistent(&t4, vec![ProcessState::new(1, 0), ProcessState::new(1, 0), ProcessState::new(2, 0), ProcessState::new(1, 0)]);
        assert!(!spec_to(ProcessId(1), &c, &t4));
        assert!(!spec_to(ProcessId(2), &c, &t4));
        // Only neighbor Byzantine.
        let tb = Topology::build(2, &[(0, 1)], None, &[1], 0, TopologyMode::TreeOrientation).unwrap();
        let c = Configuration::consistent(&tb, vec![ProcessState::new(1, 0); 2]);
        assert!(spec_to(ProcessId(0), &c, &tb));
    }

    fn star_with_byz_center() -> Topology {
        // z = 0 with three branches: 1, 2-3, 4-5-6.
        Topology::build(
            7,
            &[(0, 1), (0, 2), (2, 3), (0, 4), (4, 5), (5, 6)],
            None,
            &[0],
            7,
            TopologyMode::TreeOrientation,
        )
        .unwrap()
    }

    #[test]
    fn subtree_classes() {
        let t = star_with_byz_center();
        let z = ProcessId(0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = random_lc2(&t, &mut rng).unwrap();
        assert!(in_lc2(&c, &t).unwrap());
        assert!(in_lc1(&c, &t).unwrap());
        for comp in t.components_without(z) {
            assert_eq!(classify_subtree(&c, &t, &comp).unwrap(), SubtreeClass::C1);
        }

        // Turn the 4-5-6 branch into C2: root link (5,6), all level 7.
        let mut c = c;
        let k = |a: usize, b: usize| t.local_index(ProcessId(a), ProcessId(b)).unwrap();
        c.states[4] = ProcessState::new(k(4, 5), 7);
        c.states[5] = ProcessState::new(k(5, 6), 7);
        c.states[6] = ProcessState::new(k(6, 5), 7);
        let branch = vec![ProcessId(4), ProcessId(5), ProcessId(6)];
        assert_eq!(classify_subtree(&c, &t, &branch).unwrap(), SubtreeClass::C2);
        assert!(in_lc1(&c, &t).unwrap());
        assert!(!in_lc2(&c, &t).unwrap());

        c.states[6].level = 8;
        assert_eq!(classify_subtree(&c, &t, &branch).unwrap(), SubtreeClass::Neither);
        assert!(!in_lc1(&c, &t).unwrap());

        assert!(matches!(in_lc0(&c, &t), Err(LegitimacyError::ByzantineCount { .. })));
        let free = Topology::build(2, &[(0, 1)], None, &[], 0, TopologyMode::TreeOrientation).unwrap();
        assert!(in_lc1(&Configuration::consistent(&free, vec![ProcessState::new(1, 0); 2]), &free).is_err());
    }

    #[test]
    fn generators_land_in_their_sets_and_lc0_is_quiet() {
        let t = Topology::build(
            8,
            &[(0, 1), (1, 2), (1, 3), (3, 4), (4, 5), (4, 6), (6, 7)],
            None,
            &[],
            2,
            TopologyMode::TreeOrientation,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..30 {
            let c = random_lc0(&t, &mut rng);
            assert!(in_lc0(&c, &t).unwrap());
            assert!(t.processes().all(|v| SsTo.enabled(&c.view(&t, v), Role::NonRoot).is_empty()));
        }
        let t = star_with_byz_center();
        for _ in 0..30 {
            let c = random_lc1(&t, &mut rng).unwrap();
            assert!(in_lc1(&c, &t).unwrap());
            let c = random_lc2(&t, &mut rng).unwrap();
            assert!(in_lc2(&c, &t).unwrap());
            assert_eq!(SsTo.stability_hint(&c, &t, 0), Some(true));
        }
    }
}
