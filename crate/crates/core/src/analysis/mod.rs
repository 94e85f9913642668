//! Containment measurements over execution traces.

pub mod oracle;

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::engine::{local_effect, enabled_action, Configuration, EngineError, ExecutionTrace};
use crate::protocol::{GuardedProtocol, LocalEffect, ProtocolKind};
use crate::topology::{ProcessId, Topology};
use crate::{ss_st, ss_to};

/// Correct processes farther than `c` hops from every Byzantine process.
pub fn c_correct_set(topo: &Topology, c: usize) -> Vec<ProcessId> {
    let dist = topo.distance_to_byzantine();
    topo.correct().filter(|v| dist[v.0].is_none_or(|d| d > c)).collect()
}

pub fn c_correct_mask(topo: &Topology, c: usize) -> Vec<bool> {
    let mut mask = vec![false; topo.n()];
    for v in c_correct_set(topo, c) {
        mask[v.0] = true;
    }
    mask
}

pub fn is_c_legitimate(config: &Configuration, topo: &Topology, radius: usize, protocol: &dyn GuardedProtocol) -> bool {
    c_correct_set(topo, radius)
        .into_iter()
        .all(|v| protocol.spec(v, config, topo))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stability {
    Stable,
    NotStable,
    /// The search budget ran out. Callers treat this as not stable.
    Unknown,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StabilityBudget {
    pub max_states: usize,
    /// Largest number of simultaneously enabled processes whose subsets are enumerated.
    pub max_enabled: usize,
}

impl Default for StabilityBudget {
    fn default() -> Self {
        Self {
            max_states: 20_000,
            max_enabled: 10,
        }
    }
}

fn enabled_effects(
    config: &Configuration,
    topo: &Topology,
    protocol: &dyn GuardedProtocol,
) -> Result<Vec<(ProcessId, LocalEffect)>, EngineError> {
    let mut out = Vec::new();
    for v in topo.correct() {
        if let Some(a) = enabled_action(config, topo, protocol, v)? {
            out.push((v, local_effect(config, topo, protocol, v, a)?));
        }
    }
    Ok(out)
}

/// Whether any execution in which Byzantine processes stay silent can change an
/// O-variable of a `radius`-correct process. Explores every nonempty subset of
/// enabled correct processes from each reachable configuration.
pub fn is_c_stable(
    config: &Configuration,
    topo: &Topology,
    radius: usize,
    protocol: &dyn GuardedProtocol,
    budget: StabilityBudget,
) -> Result<Stability, EngineError> {
    let mask = c_correct_mask(topo, radius);
    is_stable_masked(config, topo, &mask, radius, protocol, budget)
}

pub(crate) fn is_stable_masked(
    config: &Configuration,
    topo: &Topology,
    mask: &[bool],
    radius: usize,
    protocol: &dyn GuardedProtocol,
    budget: StabilityBudget,
) -> Result<Stability, EngineError> {
    if protocol.stability_hint(config, topo, radius) == Some(true) {
        return Ok(Stability::Stable);
    }
    let mut seen: HashSet<Configuration> = HashSet::new();
    let mut queue = VecDeque::new();
    seen.insert(config.clone());
    queue.push_back(config.clone());
    while let Some(cur) = queue.pop_front() {
        let effects = enabled_effects(&cur, topo, protocol)?;
        if effects
            .iter()
            .any(|(v, e)| mask[v.0] && protocol.o_variables_differ(&cur.states[v.0], &e.state))
        {
            return Ok(Stability::NotStable);
        }
        if effects.is_empty() {
            continue;
        }
        if effects.len() > budget.max_enabled {
            return Ok(Stability::Unknown);
        }
        for subset in 1u64..(1u64 << effects.len()) {
            let mut next = cur.clone();
            for (i, (v, e)) in effects.iter().enumerate() {
                if subset & (1 << i) != 0 {
                    next.states[v.0] = e.state;
                    next.registers[v.0] = e.outputs.clone();
                }
            }
            if seen.insert(next.clone()) {
                if seen.len() > budget.max_states {
                    return Ok(Stability::Unknown);
                }
                queue.push_back(next);
            }
        }
    }
    Ok(Stability::Stable)
}

/// One c-disruption: a window between two anchors (configurations that are
/// c-legitimate and c-stable) containing at least one O-variable change by a
/// c-correct process.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisruptionRecord {
    pub start_index: usize,
    pub end_index: usize,
    pub o_var_changes: BTreeMap<ProcessId, usize>,
}

impl DisruptionRecord {
    pub fn total_changes(&self) -> usize {
        self.o_var_changes.values().sum()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DisruptionScan {
    pub records: Vec<DisruptionRecord>,
    /// Start of a window that never closed before the trace ended.
    pub unclosed: Option<usize>,
    pub first_anchor: Option<usize>,
    /// Legitimate configurations whose stability search ran out of budget.
    pub unknown_stability: usize,
}

/// Anchor classification with memoization over identical configurations.
pub struct AnchorOracle<'a> {
    topo: &'a Topology,
    protocol: &'a dyn GuardedProtocol,
    radius: usize,
    mask: Vec<bool>,
    budget: StabilityBudget,
    cache: HashMap<Configuration, Stability>,
    pub unknown: usize,
}

impl<'a> AnchorOracle<'a> {
    pub fn new(topo: &'a Topology, protocol: &'a dyn GuardedProtocol, radius: usize, budget: StabilityBudget) -> Self {
        Self {
            topo,
            protocol,
            radius,
            mask: c_correct_mask(topo, radius),
            budget,
            cache: HashMap::new(),
            unknown: 0,
        }
    }

    pub fn is_anchor(&mut self, config: &Configuration) -> Result<bool, EngineError> {
        if !self
            .topo
            .processes()
            .filter(|v| self.mask[v.0])
            .all(|v| self.protocol.spec(v, config, self.topo))
        {
            return Ok(false);
        }
        let s = match self.cache.get(config) {
            Some(s) => *s,
            None => {
                let s = is_stable_masked(config, self.topo, &self.mask, self.radius, self.protocol, self.budget)?;
                if s == Stability::Unknown {
                    self.unknown += 1;
                }
                self.cache.insert(config.clone(), s);
                s
            }
        };
        Ok(s == Stability::Stable)
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }
}

/// c-correct processes whose O-variables differ between two configurations.
pub fn o_var_changers(
    before: &Configuration,
    after: &Configuration,
    mask: &[bool],
    protocol: &dyn GuardedProtocol,
) -> Vec<ProcessId> {
    (0..mask.len())
        .filter(|&i| mask[i] && protocol.o_variables_differ(&before.states[i], &after.states[i]))
        .map(ProcessId)
        .collect()
}

/// Scans `trace` from configuration `from` on. A window opens at the last anchor
/// preceding a c-correct O-variable change and closes at the next anchor.
/// Changes before the first anchor open nothing.
pub fn find_disruptions(
    trace: &ExecutionTrace,
    topo: &Topology,
    radius: usize,
    protocol: &dyn GuardedProtocol,
    from: usize,
    budget: StabilityBudget,
) -> Result<DisruptionScan, EngineError> {
    let mut anchors = AnchorOracle::new(topo, protocol, radius, budget);
    let mut scan = DisruptionScan::default();
    let mut last_anchor: Option<usize> = None;
    let mut open: Option<DisruptionRecord> = None;
    for i in from..trace.configs.len() {
        let anchor = anchors.is_anchor(&trace.configs[i])?;
        if anchor {
            scan.first_anchor.get_or_insert(i);
            if let Some(mut rec) = open.take() {
                rec.end_index = i;
                scan.records.push(rec);
            }
            last_anchor = Some(i);
        }
        if i + 1 == trace.configs.len() {
            break;
        }
        let changed = o_var_changers(&trace.configs[i], &trace.configs[i + 1], anchors.mask(), protocol);
        if changed.is_empty() {
            continue;
        }
        if open.is_none() {
            if let Some(a) = last_anchor {
                open = Some(DisruptionRecord {
                    start_index: a,
                    end_index: a,
                    o_var_changes: BTreeMap::new(),
                });
                last_anchor = None;
            }
        }
        if let Some(rec) = open.as_mut() {
            for v in changed {
                *rec.o_var_changes.entry(v).or_insert(0) += 1;
            }
        }
    }
    scan.unclosed = open.map(|r| r.start_index);
    scan.unknown_stability = anchors.unknown;
    Ok(scan)
}

/// Quantities a bound can be stated over.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Observable {
    /// Closed disruptions starting at or after the reference configuration.
    Disruptions,
    /// Largest per-process O-variable change count from the reference configuration on.
    MaxProcessChanges,
    /// Round in which the reference configuration is first reached.
    ReferenceRound,
    /// Round after which no correct process changes state or registers.
    SettleRound,
    /// Rounds containing a configuration outside the protocol's legitimate set.
    IllegitimateRounds,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundSpec {
    pub name: String,
    pub observable: Observable,
    pub limit: u64,
}

impl BoundSpec {
    pub fn new(name: &str, observable: Observable, limit: u64) -> Self {
        Self {
            name: name.to_string(),
            observable,
            limit,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub name: String,
    pub limit: u64,
    pub observed: Option<u64>,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContainmentReport {
    pub protocol: String,
    pub c: usize,
    pub n: usize,
    pub f: usize,
    pub steps: usize,
    pub completed_rounds: usize,
    pub reference_index: Option<usize>,
    pub reference_round: Option<usize>,
    pub stabilization_index: Option<usize>,
    pub stabilization_round: Option<usize>,
    pub never_stabilized: bool,
    pub disruptions: Vec<DisruptionRecord>,
    pub unclosed_disruption: Option<usize>,
    pub per_process_changes: BTreeMap<ProcessId, usize>,
    pub max_process_changes: usize,
    pub unknown_stability: usize,
    pub bounds_checked: Vec<BoundCheck>,
}

impl ContainmentReport {
    pub fn all_pass(&self) -> bool {
        self.bounds_checked.iter().all(|b| b.pass)
    }

    pub fn disruption_count(&self) -> usize {
        self.disruptions.len()
    }

    /// Proposition check: disruptions never exceed n times the per-process change count.
    pub fn proposition_holds(&self) -> bool {
        self.disruptions.len() <= self.n * self.max_process_changes
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// The protocol's own legitimate set, when it has one for this Byzantine count.
pub fn in_legitimate_set(kind: ProtocolKind, config: &Configuration, topo: &Topology) -> Option<bool> {
    match kind {
        ProtocolKind::SsSt => Some(ss_st::in_lc(config, topo)),
        ProtocolKind::SsTo => match topo.f() {
            0 => ss_to::in_lc0(config, topo).ok(),
            1 => ss_to::in_lc1(config, topo).ok(),
            _ => None,
        },
    }
}

/// Legitimate-set membership with every correct process's registers reflecting
/// its variables. Counting starts here.
pub fn is_reference(kind: ProtocolKind, config: &Configuration, topo: &Topology) -> Option<bool> {
    in_legitimate_set(kind, config, topo).map(|b| b && topo.correct().all(|v| config.outputs_consistent(topo, v)))
}

pub fn pow_sat(base: u64, exp: usize) -> u64 {
    let mut acc: u64 = 1;
    for _ in 0..exp {
        acc = acc.saturating_mul(base);
    }
    acc
}

/// Bound formulas from the correct-subgraph metrics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Limits {
    pub n: usize,
    pub f: usize,
    pub max_degree: usize,
    pub d: usize,
    pub byz_degree: usize,
}

impl Limits {
    pub fn of(topo: &Topology) -> Self {
        let m = topo.correct_metrics();
        Self {
            n: topo.n(),
            f: topo.f(),
            max_degree: topo.max_degree(),
            d: m.diameter.unwrap_or(0),
            byz_degree: topo.byzantine().iter().map(|&b| topo.degree(b)).max().unwrap_or(0),
        }
    }

    /// Δ^d.
    pub fn delta_pow_d(&self) -> u64 {
        pow_sat(self.max_degree as u64, self.d)
    }

    /// fΔ^d.
    pub fn st_disruptions(&self) -> u64 {
        (self.f as u64).saturating_mul(self.delta_pow_d())
    }

    /// 4(n-f)Δ^d.
    pub fn st_rounds(&self) -> u64 {
        4u64.saturating_mul((self.n - self.f) as u64).saturating_mul(self.delta_pow_d())
    }

    /// 2d+2.
    pub fn to_fault_free_rounds(&self) -> u64 {
        2 * self.d as u64 + 2
    }
}

/// Rounds allowed per process to reach LC1 with one Byzantine process.
pub const TO_LC1_ROUNDS_PER_PROCESS: u64 = 4;
/// Rounds per process allowed outside LC0/LC1 over a whole run.
pub const TO_ILLEGITIMATE_ROUNDS_PER_PROCESS: u64 = 8;
/// Multiplier on (n-f)Δ^d for ss-ST stabilization.
pub const ST_ROUNDS_FACTOR: u64 = 4;

/// The bounds the paper's results imply for this protocol and topology.
pub fn default_bounds(kind: ProtocolKind, topo: &Topology) -> Vec<BoundSpec> {
    let l = Limits::of(topo);
    match kind {
        ProtocolKind::SsSt => vec![
            BoundSpec::new("disruptions <= f*D^d", Observable::Disruptions, l.st_disruptions()),
            BoundSpec::new("changes <= D^d", Observable::MaxProcessChanges, l.delta_pow_d()),
            BoundSpec::new("rounds <= 4(n-f)D^d", Observable::ReferenceRound, l.st_rounds()),
        ],
        ProtocolKind::SsTo => match l.f {
            0 => vec![
                BoundSpec::new("disruptions <= 0", Observable::Disruptions, 0),
                BoundSpec::new("lc0 rounds <= 2d+2", Observable::ReferenceRound, l.to_fault_free_rounds()),
                BoundSpec::new("settle rounds <= 2d+2", Observable::SettleRound, l.to_fault_free_rounds()),
            ],
            1 => vec![
                BoundSpec::new("disruptions <= Dz", Observable::Disruptions, l.byz_degree as u64),
                BoundSpec::new("changes <= 1", Observable::MaxProcessChanges, 1),
                BoundSpec::new(
                    "lc1 rounds <= 4n",
                    Observable::ReferenceRound,
                    TO_LC1_ROUNDS_PER_PROCESS * l.n as u64,
                ),
                BoundSpec::new(
                    "illegitimate rounds <= 8n",
                    Observable::IllegitimateRounds,
                    TO_ILLEGITIMATE_ROUNDS_PER_PROCESS * l.n as u64,
                ),
            ],
            _ => vec![],
        },
    }
}

fn settle_index(trace: &ExecutionTrace, topo: &Topology) -> usize {
    let last = trace.last();
    let mut i = trace.configs.len() - 1;
    while i > 0 {
        let prev = &trace.configs[i - 1];
        let same = topo
            .correct()
            .all(|v| prev.states[v.0] == last.states[v.0] && prev.registers[v.0] == last.registers[v.0]);
        if !same {
            break;
        }
        i -= 1;
    }
    i
}

fn illegitimate_rounds(trace: &ExecutionTrace, topo: &Topology, kind: ProtocolKind) -> Option<u64> {
    let mut rounds = HashSet::new();
    for (i, c) in trace.configs.iter().enumerate() {
        if !in_legitimate_set(kind, c, topo)? {
            rounds.insert(trace.round_of(i).max(1));
        }
    }
    Some(rounds.len() as u64)
}

/// Measures a trace and checks `bounds` plus the disruptions-versus-changes proposition.
pub fn verify_containment(
    trace: &ExecutionTrace,
    topo: &Topology,
    protocol: &dyn GuardedProtocol,
    radius: usize,
    bounds: &[BoundSpec],
    budget: StabilityBudget,
) -> Result<ContainmentReport, EngineError> {
    let kind = protocol.kind();
    let mask = c_correct_mask(topo, radius);
    let whole = find_disruptions(trace, topo, radius, protocol, 0, budget)?;
    let reference_index = match is_reference(kind, trace.initial(), topo) {
        Some(_) => trace
            .configs
            .iter()
            .position(|c| is_reference(kind, c, topo) == Some(true)),
        None => whole.first_anchor,
    };
    let (records, unclosed, unknown) = match reference_index {
        Some(r) => {
            let scan = find_disruptions(trace, topo, radius, protocol, r, budget)?;
            (scan.records, scan.unclosed, scan.unknown_stability + whole.unknown_stability)
        }
        None => (Vec::new(), None, whole.unknown_stability),
    };

    let mut per_process: BTreeMap<ProcessId, usize> = topo
        .processes()
        .filter(|v| mask[v.0])
        .map(|v| (v, 0))
        .collect();
    if let Some(r) = reference_index {
        for w in trace.configs[r..].windows(2) {
            for v in o_var_changers(&w[0], &w[1], &mask, protocol) {
                *per_process.get_mut(&v).unwrap() += 1;
            }
        }
    }
    let max_changes = per_process.values().copied().max().unwrap_or(0);

    let observe = |o: Observable| -> Option<u64> {
        match o {
            Observable::Disruptions => Some(records.len() as u64),
            Observable::MaxProcessChanges => Some(max_changes as u64),
            Observable::ReferenceRound => reference_index.map(|i| trace.round_of(i) as u64),
            Observable::SettleRound => Some(trace.round_of(settle_index(trace, topo)) as u64),
            Observable::IllegitimateRounds => illegitimate_rounds(trace, topo, kind),
        }
    };
    let mut checks: Vec<BoundCheck> = bounds
        .iter()
        .map(|b| {
            let observed = observe(b.observable);
            BoundCheck {
                name: b.name.clone(),
                limit: b.limit,
                observed,
                pass: observed.is_some_and(|o| o <= b.limit),
            }
        })
        .collect();
    let prop_limit = (topo.n() * max_changes) as u64;
    checks.push(BoundCheck {
        name: "t <= n*k".into(),
        limit: prop_limit,
        observed: Some(records.len() as u64),
        pass: records.len() as u64 <= prop_limit,
    });

    Ok(ContainmentReport {
        protocol: kind.name().to_string(),
        c: radius,
        n: topo.n(),
        f: topo.f(),
        steps: trace.steps.len(),
        completed_rounds: trace.round_ends.len(),
        reference_index,
        reference_round: reference_index.map(|i| trace.round_of(i)),
        stabilization_index: whole.first_anchor,
        stabilization_round: whole.first_anchor.map(|i| trace.round_of(i)),
        never_stabilized: whole.first_anchor.is_none(),
        disruptions: records,
        unclosed_disruption: unclosed,
        per_process_changes: per_process,
        max_process_changes: max_changes,
        unknown_stability: unknown,
        bounds_checked: checks,
    })
}

/// Per-process action counts after configuration `from`, checked against Δ^δ
/// where δ is the hop distance from the root inside the correct subgraph.
pub fn st_action_bound_violations(trace: &ExecutionTrace, topo: &Topology, from: usize) -> Vec<(ProcessId, usize, u64)> {
    let depth = topo.correct_depths_from_root();
    let delta = topo.max_degree() as u64;
    let mut count = vec![0usize; topo.n()];
    for step in &trace.steps[from.min(trace.steps.len())..] {
        for (v, a) in &step.fired {
            if a.is_some() {
                count[v.0] += 1;
            }
        }
    }
    topo.correct()
        .filter_map(|v| {
            let limit = pow_sat(delta, depth[v.0].unwrap_or(0));
            (count[v.0] as u64 > limit).then_some((v, count[v.0], limit))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{apply_step, make_step, ByzWrite, StopReason};
    use crate::protocol::{ProcessState, RegisterValue};
    use crate::ss_to::SsTo;
    use crate::topology::TopologyMode;

    fn path5(byz: &[usize]) -> Topology {
        Topology::build(5, &[(0, 1), (1, 2), (2, 3), (3, 4)], None, byz, 0, TopologyMode::TreeOrientation).unwrap()
    }

    #[test]
    fn c_correct_examples() {
        let t = path5(&[0]);
        assert_eq!(c_correct_set(&t, 1), vec![ProcessId(2), ProcessId(3), ProcessId(4)]);
        assert_eq!(c_correct_set(&t, 0).len(), 4);
        let t = path5(&[]);
        assert_eq!(c_correct_set(&t, 3).len(), 5);
    }

    #[test]
    fn legitimacy_examples() {
        let all_byz = Topology::build(2, &[(0, 1)], None, &[0, 1], 0, TopologyMode::General).unwrap();
        let c = Configuration::consistent(&all_byz, vec![ProcessState::new(1, 0); 2]);
        assert!(is_c_legitimate(&c, &all_byz, 0, &SsTo));

        let t = Topology::with_neighbor_order(
            4,
            &[(0, 1), (1, 2), (2, 3)],
            vec![vec![1], vec![0, 2], vec![1, 3], vec![2]],
            None,
            &[],
            TopologyMode::TreeOrientation,
        )
        .unwrap();
        let c = Configuration::consistent(
            &t,
            vec![ProcessState::new(1, 0), ProcessState::new(1, 0), ProcessState::new(2, 0), ProcessState::new(1, 0)],
        );
        assert!(!is_c_legitimate(&c, &t, 0, &SsTo));
    }

    fn chain3_to() -> Topology {
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

    #[test]
    fn stability_examples() {
        let t = chain3_to();
        let lc0 = Configuration::consistent(&t, vec![ProcessState::new(1, 2), ProcessState::new(1, 2), ProcessState::new(1, 2)]);
        assert_eq!(is_c_stable(&lc0, &t, 0, &SsTo, StabilityBudget::default()).unwrap(), Stability::Stable);
        // GA2 enabled at the middle process.
        let mut c = Configuration::consistent(&t, vec![ProcessState::new(1, 4), ProcessState::new(2, 4), ProcessState::new(1, 4)]);
        c.registers[0][0] = RegisterValue::new(false, 4);
        assert_eq!(is_c_stable(&c, &t, 0, &SsTo, StabilityBudget::default()).unwrap(), Stability::NotStable);
        let tiny = StabilityBudget {
            max_states: 1,
            max_enabled: 0,
        };
        let lvl = Configuration::consistent(&t, vec![ProcessState::new(1, 0), ProcessState::new(1, 5), ProcessState::new(1, 5)]);
        // Process 0 is enabled by GA1 and would change prnt? It has one neighbor, so prnt stays 1:
        // the search must continue and then runs out of budget.
        assert_eq!(is_c_stable(&lvl, &t, 0, &SsTo, tiny).unwrap(), Stability::Unknown);
    }

    fn synthetic(configs: Vec<Configuration>) -> ExecutionTrace {
        ExecutionTrace {
            steps: vec![Default::default(); configs.len() - 1],
            configs,
            round_ends: vec![],
            stop: StopReason::MaxSteps,
        }
    }

    #[test]
    fn disruption_windows() {
        // Fault-free 3-chain. Moving the middle pointer to the other side
        // moves the root link and is itself legitimate and stable, so each
        // move is a window of its own. Raising the middle level as well
        // leaves a configuration that is not stable.
        let t = Topology::build(3, &[(0, 1), (1, 2)], None, &[], 0, TopologyMode::TreeOrientation).unwrap();
        let legit = crate::ss_to::random_lc0(&t, &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(1));
        let quiet = synthetic(vec![legit.clone(), legit.clone()]);
        let scan = find_disruptions(&quiet, &t, 0, &SsTo, 0, StabilityBudget::default()).unwrap();
        assert!(scan.records.is_empty());
        assert_eq!(scan.first_anchor, Some(0));

        let v = t.processes().find(|&v| t.degree(v) == 2).unwrap();
        let mut moved = legit.clone();
        moved.states[v.0].prnt = 3 - moved.states[v.0].prnt;
        moved.registers[v.0] = crate::protocol::consistent_outputs(moved.states[v.0], 2);
        let tr = synthetic(vec![legit.clone(), moved.clone(), legit.clone()]);
        let scan = find_disruptions(&tr, &t, 0, &SsTo, 0, StabilityBudget::default()).unwrap();
        let spans: Vec<(usize, usize)> = scan.records.iter().map(|r| (r.start_index, r.end_index)).collect();
        assert_eq!(spans, vec![(0, 1), (1, 2)]);

        // Middle points right with a lower level: legitimate, but GA1 would
        // move its pointer back to the left.
        let t = chain3_to();
        let legit = Configuration::consistent(&t, vec![ProcessState::new(1, 4); 3]);
        let broken = Configuration::consistent(&t, vec![ProcessState::new(1, 4), ProcessState::new(2, 3), ProcessState::new(1, 4)]);
        assert!(is_c_legitimate(&broken, &t, 0, &SsTo));
        let tr = synthetic(vec![legit.clone(), broken, legit.clone()]);
        let scan = find_disruptions(&tr, &t, 0, &SsTo, 0, StabilityBudget::default()).unwrap();
        assert_eq!(scan.records.len(), 1);
        assert_eq!((scan.records[0].start_index, scan.records[0].end_index), (0, 2));
        assert_eq!(scan.records[0].total_changes(), 2);

        let open = synthetic(vec![legit.clone(), tr.configs[1].clone()]);
        let scan = find_disruptions(&open, &t, 0, &SsTo, 0, StabilityBudget::default()).unwrap();
        assert!(scan.records.is_empty());
        assert_eq!(scan.unclosed, Some(0));
    }

    #[test]
    fn byzantine_write_can_open_a_window() {
        // z - y - x with z Byzantine, everything pointing at z (LC2). z keeps
        // quiet; x and y stay put, so no window opens.
        let t = Topology::with_neighbor_order(
            3,
            &[(0, 1), (1, 2)],
            vec![vec![1], vec![0, 2], vec![1]],
            None,
            &[0],
            TopologyMode::TreeOrientation,
        )
        .unwrap();
        let c = Configuration::consistent(&t, vec![ProcessState::new(1, 9), ProcessState::new(1, 5), ProcessState::new(1, 5)]);
        assert!(crate::ss_to::in_lc2(&c, &t).unwrap());
        let w = ByzWrite {
            state: ProcessState::new(1, 20),
            outputs: vec![RegisterValue::new(false, 20)],
        };
        let s = make_step(&c, vec![ProcessId(0)], vec![(ProcessId(0), w)], &t, &SsTo).unwrap();
        let c1 = apply_step(&c, &s, &t, &SsTo).unwrap();
        let s = make_step(&c1, vec![ProcessId(1)], vec![], &t, &SsTo).unwrap();
        let c2 = apply_step(&c1, &s, &t, &SsTo).unwrap();
        assert_eq!(c2.states[1], ProcessState::new(1, 20));
        let tr = synthetic(vec![c, c1, c2]);
        let scan = find_disruptions(&tr, &t, 0, &SsTo, 0, StabilityBudget::default()).unwrap();
        assert!(scan.records.is_empty());
    }

    #[test]
    fn limits_arithmetic() {
        let t = Topology::build(3, &[(0, 1), (1, 2)], Some(0), &[2], 0, TopologyMode::SpanningTree).unwrap();
        let l = Limits::of(&t);
        assert_eq!((l.f, l.max_degree, l.d), (1, 2, 1));
        assert_eq!(l.st_disruptions(), 2);
        assert_eq!(pow_sat(3, 50), u64::MAX);
    }
}
