//! Exhaustive exploration of small instances under the central daemon.
//!
//! Byzantine processes may write any value from a bounded domain whenever they
//! are activated. Configurations are interned as flat integer vectors; the
//! transition graph is never stored, successors are recomputed on demand.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::ops::ControlFlow;
use std::str::FromStr;

use indexmap::IndexSet;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{c_correct_mask, is_stable_masked, Limits, Stability, StabilityBudget};
use crate::engine::{enabled_action, local_effect, ByzWrite, Configuration, EngineError};
use crate::protocol::{consistent_outputs, GuardedProtocol, Level, ProcessState, ProtocolKind, RegisterValue};
use crate::topology::{ProcessId, Topology};
use crate::{ss_st, ss_to};

pub const DEFAULT_CAP: usize = 4;
pub const DEFAULT_MAX_STATES: usize = 3_000_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OracleError {
    #[error("instance has {n} processes, oracle cap is {cap}")]
    TooLarge { n: usize, cap: usize },
    #[error("state space exceeded {limit} configurations")]
    StateSpace { limit: usize },
    #[error("stability of an explored configuration is undecided within the search budget")]
    UndecidedStability,
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Property {
    ConvergesTo,
    WorstDisruptions,
}

impl FromStr for Property {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "converges-to" => Ok(Property::ConvergesTo),
            "worst-disruptions" => Ok(Property::WorstDisruptions),
            other => Err(format!("unknown property `{other}` (expected converges-to or worst-disruptions)")),
        }
    }
}

/// How initial register contents of correct processes are enumerated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitRegisters {
    /// Registers reflect the variables.
    Consistent,
    /// Every register value in the domain.
    Arbitrary,
    /// Arbitrary when the initial set stays under `max_states`, else consistent.
    Auto,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OracleOptions {
    pub cap: usize,
    /// Levels range over `[0, level_bound]`; `None` means `2n`.
    pub level_bound: Option<Level>,
    pub radius: usize,
    pub max_states: usize,
    pub init_registers: InitRegisters,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            cap: DEFAULT_CAP,
            level_bound: None,
            radius: 0,
            max_states: DEFAULT_MAX_STATES,
            init_registers: InitRegisters::Auto,
        }
    }
}

impl OracleOptions {
    fn level_bound(&self, topo: &Topology) -> Level {
        self.level_bound.unwrap_or(2 * topo.n() as Level)
    }
}

/// Worst case over all explored executions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Worst {
    Bounded(u64),
    Unbounded,
}

impl Worst {
    pub fn within(self, limit: u64) -> bool {
        matches!(self, Worst::Bounded(v) if v <= limit)
    }
}

impl fmt::Display for Worst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Worst::Bounded(v) => write!(f, "{v}"),
            Worst::Unbounded => f.write_str("unbounded"),
        }
    }
}

/// One central-daemon step: the activated process and, for a Byzantine one, its write.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Move {
    pub process: ProcessId,
    pub write: Option<ByzWrite>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorstPath {
    pub start: Configuration,
    pub moves: Vec<Move>,
    pub value: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvergenceVerdict {
    /// Every execution in which each correct process is activated infinitely
    /// often reaches the target set.
    pub converges: bool,
    /// Every execution in which each correct process that is enabled infinitely
    /// often also executes infinitely often reaches the target set.
    pub converges_strongly_fair: bool,
    pub initial_states: usize,
    pub explored: usize,
    pub init_registers: InitRegisters,
    pub level_bound: Level,
    /// A configuration on an activation-fair cycle that avoids the target set.
    pub witness: Option<Configuration>,
    /// A configuration on a strongly fair cycle that avoids the target set.
    pub strong_witness: Option<Configuration>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisruptionVerdict {
    pub c: usize,
    pub level_bound: Level,
    pub starts: usize,
    pub explored: usize,
    pub disruptions: Worst,
    pub per_process: BTreeMap<ProcessId, Worst>,
    pub max_process_changes: Worst,
    pub witness: Option<WorstPath>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleVerdict {
    Convergence(ConvergenceVerdict),
    Disruptions(DisruptionVerdict),
}

impl OracleVerdict {
    /// Human-readable summary with the bound formulas for this instance.
    pub fn summary(&self, kind: ProtocolKind, topo: &Topology) -> String {
        let l = Limits::of(topo);
        match self {
            OracleVerdict::Convergence(v) => {
                let target = match (kind, topo.f()) {
                    (ProtocolKind::SsSt, _) => "lc",
                    (ProtocolKind::SsTo, 0) => "lc0",
                    _ => "lc1",
                };
                let yes = |b: bool| if b { "yes" } else { "no" };
                let scope = if v.converges {
                    format!("all initial states reach {target}")
                } else {
                    format!("some fair execution never reaches {target}")
                };
                format!(
                    "converges: {} ({scope}; {} starts, {} explored, levels <= {}); under strong fairness: {}",
                    yes(v.converges),
                    v.initial_states,
                    v.explored,
                    v.level_bound,
                    yes(v.converges_strongly_fair)
                )
            }
            OracleVerdict::Disruptions(v) => {
                let (t, k) = match kind {
                    ProtocolKind::SsSt => (l.st_disruptions(), l.delta_pow_d()),
                    ProtocolKind::SsTo => (l.byz_degree as u64, 1),
                };
                format!(
                    "worst disruptions: {} (bound {}), worst per-process changes: {} (bound {}), {} starts, {} explored",
                    v.disruptions, t, v.max_process_changes, k, v.starts, v.explored
                )
            }
        }
    }
}

/// Interned configurations plus the bounded Byzantine write domain.
struct Space<'a> {
    topo: &'a Topology,
    protocol: &'a dyn GuardedProtocol,
    degrees: Vec<usize>,
    /// Per process: write options (empty for correct processes).
    writes: Vec<Vec<ByzWrite>>,
    /// Byzantine writes keep the current state when true.
    frozen_byz_state: bool,
    set: IndexSet<Box<[i32]>>,
    max_states: usize,
    mask: Vec<bool>,
}

struct Succ {
    to: u32,
    process: ProcessId,
    write: Option<u32>,
    /// A correct process that was enabled and executed an action.
    fired: bool,
    /// Bit i set when c-correct process i changed its O-variables.
    changed: u64,
}

fn narrow(x: i64) -> Result<i32, OracleError> {
    i32::try_from(x).map_err(|_| OracleError::Unsupported(format!("level {x} outside the oracle encoding")))
}

fn register_domain(bound: Level, with_prnt: bool) -> Vec<RegisterValue> {
    let bits: &[bool] = if with_prnt { &[false, true] } else { &[false] };
    bits.iter()
        .flat_map(|&b| (0..=bound).map(move |l| RegisterValue::new(b, l)))
        .collect()
}

/// Calls `f` on every index vector in the product of `sizes`.
fn for_each_product<E>(sizes: &[usize], mut f: impl FnMut(&[usize]) -> Result<(), E>) -> Result<(), E> {
    if sizes.contains(&0) {
        return Ok(());
    }
    let mut idx = vec![0usize; sizes.len()];
    loop {
        f(&idx)?;
        let mut i = 0;
        loop {
            if i == sizes.len() {
                return Ok(());
            }
            idx[i] += 1;
            if idx[i] < sizes[i] {
                break;
            }
            idx[i] = 0;
            i += 1;
        }
    }
}

fn register_vectors(domain: &[RegisterValue], degree: usize) -> Vec<Vec<RegisterValue>> {
    let mut out = Vec::new();
    let _ = for_each_product::<()>(&vec![domain.len(); degree], |ix| {
        out.push(ix.iter().map(|&i| domain[i]).collect());
        Ok(())
    });
    out
}

fn product_size(sizes: impl IntoIterator<Item = usize>) -> u128 {
    sizes.into_iter().fold(1u128, |a, s| a.saturating_mul(s as u128))
}

impl<'a> Space<'a> {
    fn new(
        topo: &'a Topology,
        protocol: &'a dyn GuardedProtocol,
        bound: Level,
        uniform: bool,
        radius: usize,
        max_states: usize,
    ) -> Self {
        let degrees: Vec<usize> = topo.processes().map(|v| topo.degree(v)).collect();
        let domain = register_domain(bound, protocol.reads_input_prnt());
        let writes = topo
            .processes()
            .map(|v| {
                if !topo.is_byzantine(v) {
                    return Vec::new();
                }
                if uniform {
                    (0..=bound)
                        .map(|l| ByzWrite {
                            state: ProcessState::new(0, l),
                            outputs: vec![RegisterValue::new(false, l); degrees[v.0]],
                        })
                        .collect()
                } else {
                    register_vectors(&domain, degrees[v.0])
                        .into_iter()
                        .map(|outputs| ByzWrite {
                            state: ProcessState::default(),
                            outputs,
                        })
                        .collect()
                }
            })
            .collect();
        Self {
            topo,
            protocol,
            degrees,
            writes,
            frozen_byz_state: !uniform,
            set: IndexSet::new(),
            max_states,
            mask: c_correct_mask(topo, radius),
        }
    }

    fn encode(&self, c: &Configuration) -> Result<Box<[i32]>, OracleError> {
        let mut out = Vec::with_capacity(self.topo.n() * 6);
        for (s, regs) in c.states.iter().zip(&c.registers) {
            out.push(s.prnt as i32);
            out.push(narrow(s.level)?);
            for r in regs {
                out.push(r.r_prnt as i32);
                out.push(narrow(r.r_level)?);
            }
        }
        Ok(out.into_boxed_slice())
    }

    fn decode(&self, id: u32) -> Configuration {
        let raw = &self.set[id as usize];
        let mut pos = 0;
        let mut states = Vec::with_capacity(self.degrees.len());
        let mut registers = Vec::with_capacity(self.degrees.len());
        for &deg in &self.degrees {
            states.push(ProcessState::new(raw[pos] as usize, raw[pos + 1] as Level));
            pos += 2;
            let mut regs = Vec::with_capacity(deg);
            for _ in 0..deg {
                regs.push(RegisterValue::new(raw[pos] != 0, raw[pos + 1] as Level));
                pos += 2;
            }
            registers.push(regs);
        }
        Configuration { states, registers }
    }

    fn intern(&mut self, c: &Configuration) -> Result<u32, OracleError> {
        let key = self.encode(c)?;
        let (id, fresh) = self.set.insert_full(key);
        if fresh && self.set.len() > self.max_states {
            return Err(OracleError::StateSpace { limit: self.max_states });
        }
        Ok(id as u32)
    }

    fn write_for(&self, c: &Configuration, b: ProcessId, w: u32) -> ByzWrite {
        let mut write = self.writes[b.0][w as usize].clone();
        write.state = if self.frozen_byz_state {
            c.states[b.0]
        } else {
            ProcessState::new(c.states[b.0].prnt, write.state.level)
        };
        write
    }

    fn changed_mask(&self, a: &Configuration, b: &Configuration) -> u64 {
        let mut m = 0u64;
        for i in 0..self.topo.n() {
            if self.mask[i] && self.protocol.o_variables_differ(&a.states[i], &b.states[i]) {
                m |= 1 << i;
            }
        }
        m
    }

    fn successors(&mut self, id: u32) -> Result<Vec<Succ>, OracleError> {
        let c = self.decode(id);
        let mut out = Vec::new();
        for v in self.topo.processes() {
            if self.topo.is_byzantine(v) {
                for w in 0..self.writes[v.0].len() as u32 {
                    let write = self.write_for(&c, v, w);
                    let mut next = c.clone();
                    next.states[v.0] = write.state;
                    next.registers[v.0] = write.outputs;
                    let to = self.intern(&next)?;
                    out.push(Succ {
                        to,
                        process: v,
                        write: Some(w),
                        fired: false,
                        changed: 0,
                    });
                }
                continue;
            }
            let (to, fired, changed) = match enabled_action(&c, self.topo, self.protocol, v)? {
                None => (id, false, 0),
                Some(a) => {
                    let e = local_effect(&c, self.topo, self.protocol, v, a)?;
                    let mut next = c.clone();
                    next.states[v.0] = e.state;
                    next.registers[v.0] = e.outputs;
                    let changed = self.changed_mask(&c, &next);
                    (self.intern(&next)?, true, changed)
                }
            };
            out.push(Succ {
                to,
                process: v,
                write: None,
                fired,
                changed,
            });
        }
        Ok(out)
    }

    fn to_move(&self, from: u32, s: &Succ) -> Move {
        let c = self.decode(from);
        Move {
            process: s.process,
            write: s.write.map(|w| self.write_for(&c, s.process, w)),
        }
    }
}

#[derive(Clone, Copy)]
struct Edge {
    to: u64,
    reward: u64,
    /// Index into the source node's successor list.
    label: usize,
}

trait Graph {
    fn edges(&mut self, node: u64) -> Result<Vec<Edge>, OracleError>;
}

const UNSEEN: u32 = u32::MAX;

/// Tarjan's algorithm, iterative. `on_scc` sees each component after every
/// component reachable from it.
struct Tarjan {
    index: Vec<u32>,
    low: Vec<u32>,
    on_stack: Vec<bool>,
    scc_of: Vec<u32>,
    sccs: u32,
}

impl Tarjan {
    fn new() -> Self {
        Self {
            index: Vec::new(),
            low: Vec::new(),
            on_stack: Vec::new(),
            scc_of: Vec::new(),
            sccs: 0,
        }
    }

    fn grow(&mut self, node: u64) {
        let need = node as usize + 1;
        if self.index.len() < need {
            self.index.resize(need, UNSEEN);
            self.low.resize(need, UNSEEN);
            self.on_stack.resize(need, false);
            self.scc_of.resize(need, UNSEEN);
        }
    }

    fn scc(&self, node: u64) -> u32 {
        self.scc_of.get(node as usize).copied().unwrap_or(UNSEEN)
    }

    fn run<G: Graph>(
        &mut self,
        g: &mut G,
        starts: &[u64],
        mut on_scc: impl FnMut(&mut G, &Tarjan, &[u64], u32) -> Result<ControlFlow<()>, OracleError>,
    ) -> Result<ControlFlow<()>, OracleError> {
        let mut counter = 0u32;
        let mut stack: Vec<u64> = Vec::new();
        for &s in starts {
            self.grow(s);
            if self.index[s as usize] != UNSEEN {
                continue;
            }
            let mut call: Vec<(u64, Vec<Edge>, usize)> = Vec::new();
            self.index[s as usize] = counter;
            self.low[s as usize] = counter;
            counter += 1;
            stack.push(s);
            self.on_stack[s as usize] = true;
            call.push((s, g.edges(s)?, 0));
            while let Some(frame) = call.last_mut() {
                let v = frame.0;
                if frame.2 < frame.1.len() {
                    let w = frame.1[frame.2].to;
                    frame.2 += 1;
                    self.grow(w);
                    if self.index[w as usize] == UNSEEN {
                        self.index[w as usize] = counter;
                        self.low[w as usize] = counter;
                        counter += 1;
                        stack.push(w);
                        self.on_stack[w as usize] = true;
                        let edges = g.edges(w)?;
                        call.push((w, edges, 0));
                    } else if self.on_stack[w as usize] {
                        let lw = self.index[w as usize];
                        let lv = &mut self.low[v as usize];
                        *lv = (*lv).min(lw);
                    }
                    continue;
                }
                call.pop();
                if let Some(parent) = call.last() {
                    let lv = self.low[v as usize];
                    let lp = &mut self.low[parent.0 as usize];
                    *lp = (*lp).min(lv);
                }
                if self.low[v as usize] == self.index[v as usize] {
                    let mut members = Vec::new();
                    loop {
                        let w = stack.pop().unwrap();
                        self.on_stack[w as usize] = false;
                        self.scc_of[w as usize] = self.sccs;
                        members.push(w);
                        if w == v {
                            break;
                        }
                    }
                    let id = self.sccs;
                    self.sccs += 1;
                    if on_scc(g, self, &members, id)?.is_break() {
                        return Ok(ControlFlow::Break(()));
                    }
                }
            }
        }
        Ok(ControlFlow::Continue(()))
    }
}

/// Longest total reward from each node, or `None` when a positive-reward cycle is reachable.
struct LongestPath {
    tarjan: Tarjan,
    best: Vec<u64>,
    unbounded: bool,
}

fn longest_path<G: Graph>(g: &mut G, starts: &[u64]) -> Result<LongestPath, OracleError> {
    let mut tarjan = Tarjan::new();
    let mut best: Vec<u64> = Vec::new();
    let mut unbounded = false;
    let _ = tarjan.run(g, starts, |g, t, members, id| {
        let mut value = 0u64;
        for &m in members {
            for e in g.edges(m)? {
                let s = t.scc(e.to);
                if s == id {
                    if e.reward > 0 {
                        unbounded = true;
                        return Ok(ControlFlow::Break(()));
                    }
                } else {
                    value = value.max(e.reward + best[s as usize]);
                }
            }
        }
        best.push(value);
        Ok(ControlFlow::Continue(()))
    })?;
    Ok(LongestPath { tarjan, best, unbounded })
}

impl LongestPath {
    fn value(&self, node: u64) -> u64 {
        self.best[self.tarjan.scc(node) as usize]
    }

    /// Edges of a path from `start` that collects the optimal reward.
    fn path<G: Graph>(&self, g: &mut G, start: u64) -> Result<Vec<(u64, Edge)>, OracleError> {
        let mut out = Vec::new();
        let mut cur = start;
        loop {
            let s = self.tarjan.scc(cur);
            let target = self.best[s as usize];
            if target == 0 {
                return Ok(out);
            }
            let mut parent: BTreeMap<u64, (u64, Edge)> = BTreeMap::new();
            let mut queue = VecDeque::from([cur]);
            let mut seen = std::collections::HashSet::from([cur]);
            let mut exit = None;
            'bfs: while let Some(x) = queue.pop_front() {
                for e in g.edges(x)? {
                    let t = self.tarjan.scc(e.to);
                    if t == s {
                        if seen.insert(e.to) {
                            parent.insert(e.to, (x, e));
                            queue.push_back(e.to);
                        }
                    } else if e.reward + self.best[t as usize] == target {
                        exit = Some((x, e));
                        break 'bfs;
                    }
                }
            }
            let (x, e) = exit.expect("optimal exit edge exists");
            let mut inner = Vec::new();
            let mut y = x;
            while y != cur {
                let (p, pe) = parent[&y];
                inner.push((p, pe));
                y = p;
            }
            inner.reverse();
            out.extend(inner);
            out.push((x, e));
            cur = e.to;
        }
    }
}

const PRE: u64 = 0;
const ARMED: u64 = 1;
const OPEN: u64 = 2;

/// Configurations paired with the disruption-window state on arrival.
struct WindowGraph<'a, 'b> {
    space: &'b mut Space<'a>,
    anchors: Vec<u8>,
    budget: StabilityBudget,
    radius: usize,
}

impl WindowGraph<'_, '_> {
    fn anchor(&mut self, id: u32) -> Result<bool, OracleError> {
        let i = id as usize;
        if self.anchors.len() <= i {
            self.anchors.resize(i + 1, 0);
        }
        if self.anchors[i] == 0 {
            let c = self.space.decode(id);
            let topo = self.space.topo;
            let legit = (0..topo.n())
                .filter(|&v| self.space.mask[v])
                .all(|v| self.space.protocol.spec(ProcessId(v), &c, topo));
            let a = legit
                && match is_stable_masked(&c, topo, &self.space.mask, self.radius, self.space.protocol, self.budget)? {
                    Stability::Stable => true,
                    Stability::NotStable => false,
                    Stability::Unknown => return Err(OracleError::UndecidedStability),
                };
            self.anchors[i] = if a { 2 } else { 1 };
        }
        Ok(self.anchors[i] == 2)
    }

    fn start_node(&mut self, id: u32) -> Result<u64, OracleError> {
        Ok(id as u64 * 3 + if self.anchor(id)? { ARMED } else { PRE })
    }
}

impl Graph for WindowGraph<'_, '_> {
    fn edges(&mut self, node: u64) -> Result<Vec<Edge>, OracleError> {
        let (id, mode) = ((node / 3) as u32, node % 3);
        let succ = self.space.successors(id)?;
        let mut out = Vec::with_capacity(succ.len());
        for (label, s) in succ.iter().enumerate() {
            let m1 = if mode == ARMED && s.changed != 0 { OPEN } else { mode };
            let (reward, m2) = if self.anchor(s.to)? {
                ((m1 == OPEN) as u64, ARMED)
            } else {
                (0, m1)
            };
            out.push(Edge {
                to: s.to as u64 * 3 + m2,
                reward,
                label,
            });
        }
        Ok(out)
    }
}

/// Configurations only; reward 1 whenever process `who` changes an O-variable.
struct ChangeGraph<'a, 'b> {
    space: &'b mut Space<'a>,
    who: usize,
}

impl Graph for ChangeGraph<'_, '_> {
    fn edges(&mut self, node: u64) -> Result<Vec<Edge>, OracleError> {
        let who = self.who;
        Ok(self
            .space
            .successors(node as u32)?
            .iter()
            .enumerate()
            .map(|(label, s)| Edge {
                to: s.to as u64,
                reward: (s.changed >> who) & 1,
                label,
            })
            .collect())
    }
}

/// Plain transition graph; targets are absorbing.
struct ReachGraph<'a, 'b> {
    space: &'b mut Space<'a>,
    target: fn(&Configuration, &Topology) -> bool,
    is_target: Vec<u8>,
    last_succ: Option<(u32, Vec<Succ>)>,
}

impl ReachGraph<'_, '_> {
    fn target(&mut self, id: u32) -> bool {
        let i = id as usize;
        if self.is_target.len() <= i {
            self.is_target.resize(i + 1, 0);
        }
        if self.is_target[i] == 0 {
            let c = self.space.decode(id);
            self.is_target[i] = if (self.target)(&c, self.space.topo) { 2 } else { 1 };
        }
        self.is_target[i] == 2
    }

    fn succ(&mut self, id: u32) -> Result<&[Succ], OracleError> {
        if self.last_succ.as_ref().map(|(i, _)| *i) != Some(id) {
            let s = if self.target(id) { Vec::new() } else { self.space.successors(id)? };
            self.last_succ = Some((id, s));
        }
        Ok(&self.last_succ.as_ref().unwrap().1)
    }
}

impl Graph for ReachGraph<'_, '_> {
    fn edges(&mut self, node: u64) -> Result<Vec<Edge>, OracleError> {
        Ok(self
            .succ(node as u32)?
            .iter()
            .enumerate()
            .map(|(label, s)| Edge {
                to: s.to as u64,
                reward: 0,
                label,
            })
            .collect())
    }
}

fn check_cap(topo: &Topology, opts: &OracleOptions) -> Result<(), OracleError> {
    if topo.n() > opts.cap {
        return Err(OracleError::TooLarge { n: topo.n(), cap: opts.cap });
    }
    if topo.n() > 63 {
        return Err(OracleError::Unsupported("more than 63 processes".into()));
    }
    Ok(())
}

fn lc_target(kind: ProtocolKind, topo: &Topology) -> Result<fn(&Configuration, &Topology) -> bool, OracleError> {
    Ok(match (kind, topo.f()) {
        (ProtocolKind::SsSt, _) => ss_st::in_lc,
        (ProtocolKind::SsTo, 0) => |c, t| ss_to::in_lc0(c, t).unwrap_or(false),
        (ProtocolKind::SsTo, 1) => |c, t| ss_to::in_lc1(c, t).unwrap_or(false),
        (ProtocolKind::SsTo, f) => {
            return Err(OracleError::Unsupported(format!(
                "ss-to has no legitimate set with {f} Byzantine processes"
            )))
        }
    })
}

fn prnt_range(kind: ProtocolKind, degree: usize) -> std::ops::RangeInclusive<usize> {
    match kind {
        ProtocolKind::SsSt => 0..=degree,
        ProtocolKind::SsTo => 1..=degree.max(1),
    }
}

/// Exhaustive convergence check: from every initial configuration in the
/// bounded domain, every fair execution reaches the protocol's legitimate set.
/// Byzantine ss-ST processes write a uniform level into their variable and
/// registers; Byzantine ss-TO processes write registers freely.
pub fn check_convergence(
    topo: &Topology,
    kind: ProtocolKind,
    opts: &OracleOptions,
) -> Result<ConvergenceVerdict, OracleError> {
    check_cap(topo, opts)?;
    let protocol = kind.protocol();
    let bound = opts.level_bound(topo);
    let target = lc_target(kind, topo)?;
    let uniform = kind == ProtocolKind::SsSt;
    let mut space = Space::new(topo, protocol, bound, uniform, opts.radius, opts.max_states);

    let reg_domain = register_domain(bound, true);
    let states_of = |v: ProcessId| -> Vec<ProcessState> {
        prnt_range(kind, topo.degree(v))
            .flat_map(|p| (0..=bound).map(move |l| ProcessState::new(p, l)))
            .collect()
    };
    let count = |arbitrary: bool| -> u128 {
        product_size(topo.processes().map(|v| {
            if topo.is_byzantine(v) {
                space.writes[v.0].len()
            } else if arbitrary {
                states_of(v).len() * reg_domain.len().pow(topo.degree(v) as u32)
            } else {
                states_of(v).len()
            }
        }))
    };
    let arbitrary = match opts.init_registers {
        InitRegisters::Consistent => false,
        InitRegisters::Arbitrary => true,
        InitRegisters::Auto => count(true) <= (opts.max_states / 4) as u128,
    };
    if count(arbitrary) > opts.max_states as u128 {
        return Err(OracleError::StateSpace { limit: opts.max_states });
    }

    // Per-process options: (state, registers) pairs.
    let options: Vec<Vec<(ProcessState, Vec<RegisterValue>)>> = topo
        .processes()
        .map(|v| {
            if topo.is_byzantine(v) {
                let base = ProcessState::new(prnt_range(kind, topo.degree(v)).start().to_owned(), 0);
                return space.writes[v.0]
                    .iter()
                    .map(|w| {
                        let s = if uniform { ProcessState::new(0, w.state.level) } else { base };
                        (s, w.outputs.clone())
                    })
                    .collect();
            }
            let deg = topo.degree(v);
            states_of(v)
                .into_iter()
                .flat_map(|s| {
                    if arbitrary {
                        register_vectors(&reg_domain, deg).into_iter().map(|r| (s, r)).collect::<Vec<_>>()
                    } else {
                        vec![(s, consistent_outputs(s, deg))]
                    }
                })
                .collect()
        })
        .collect();
    let sizes: Vec<usize> = options.iter().map(Vec::len).collect();
    let mut starts = Vec::new();
    for_each_product(&sizes, |ix| {
        let c = Configuration {
            states: ix.iter().enumerate().map(|(v, &i)| options[v][i].0).collect(),
            registers: ix.iter().enumerate().map(|(v, &i)| options[v][i].1.clone()).collect(),
        };
        starts.push(space.intern(&c)? as u64);
        Ok::<(), OracleError>(())
    })?;
    let initial_states = starts.len();

    let correct: Vec<ProcessId> = topo.correct().collect();
    let mut witness = None;
    let mut strong_witness = None;
    let mut g = ReachGraph {
        space: &mut space,
        target,
        is_target: Vec::new(),
        last_succ: None,
    };
    let _ = Tarjan::new().run(&mut g, &starts, |g, t, members, id| {
        if members.len() == 1 && g.target(members[0] as u32) {
            return Ok(ControlFlow::Continue(()));
        }
        let local_of: std::collections::HashMap<u64, usize> =
            members.iter().enumerate().map(|(i, &m)| (m, i)).collect();
        let mut local = Local {
            adj: Vec::with_capacity(members.len()),
            alive: vec![true; members.len()],
        };
        for &m in members {
            let mut row = Vec::new();
            for s in g.succ(m as u32)? {
                let to = if t.scc(s.to as u64) == id { Some(local_of[&(s.to as u64)]) } else { None };
                row.push((to, s.process, s.fired));
            }
            local.adj.push(row);
        }
        let all: Vec<usize> = (0..members.len()).collect();
        if witness.is_none() && activation_fair(&local, &all, &correct, topo.n()) {
            witness = Some(g.space.decode(members[0] as u32));
        }
        if strong_witness.is_none() {
            if let Some(i) = strongly_fair_cycle(&mut local, all, &correct, topo.n())? {
                strong_witness = Some(g.space.decode(members[i] as u32));
            }
        }
        Ok(if witness.is_some() && strong_witness.is_some() {
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        })
    })?;
    Ok(ConvergenceVerdict {
        converges: witness.is_none(),
        converges_strongly_fair: strong_witness.is_none(),
        initial_states,
        explored: space.set.len(),
        init_registers: if arbitrary {
            InitRegisters::Arbitrary
        } else {
            InitRegisters::Consistent
        },
        level_bound: bound,
        witness,
        strong_witness,
    })
}

/// One strongly connected component with edges leaving it cut off
/// (`None` targets).
struct Local {
    adj: Vec<Vec<(Option<usize>, ProcessId, bool)>>,
    alive: Vec<bool>,
}

impl Graph for Local {
    fn edges(&mut self, node: u64) -> Result<Vec<Edge>, OracleError> {
        let alive = &self.alive;
        Ok(self.adj[node as usize]
            .iter()
            .enumerate()
            .filter_map(|(label, &(to, _, _))| to.filter(|&t| alive[t]).map(|t| (label, t)))
            .map(|(label, t)| Edge {
                to: t as u64,
                reward: 0,
                label,
            })
            .collect())
    }
}

/// Whether the component `nodes` (strongly connected among themselves) has a
/// cycle activating every correct process.
fn activation_fair(local: &Local, nodes: &[usize], correct: &[ProcessId], n: usize) -> bool {
    let mut inside = vec![false; n];
    let mut cyclic = false;
    for &m in nodes {
        for &(to, p, _) in &local.adj[m] {
            if to.is_some_and(|t| local.alive[t]) {
                cyclic = true;
                inside[p.0] = true;
            }
        }
    }
    cyclic && correct.iter().all(|v| inside[v.0])
}

/// Searches `nodes` for a cycle on which every correct process is activated and
/// every correct process enabled somewhere on it also executes on it. Returns a
/// node of such a cycle.
fn strongly_fair_cycle(
    local: &mut Local,
    nodes: Vec<usize>,
    correct: &[ProcessId],
    n: usize,
) -> Result<Option<usize>, OracleError> {
    let starts: Vec<u64> = nodes.iter().map(|&i| i as u64).collect();
    let mut comps: Vec<Vec<usize>> = Vec::new();
    let _ = Tarjan::new().run(local, &starts, |_, _, members, _| {
        comps.push(members.iter().map(|&m| m as usize).collect());
        Ok(ControlFlow::Continue(()))
    })?;
    for comp in comps {
        let mut in_comp = vec![false; local.adj.len()];
        for &m in &comp {
            in_comp[m] = true;
        }
        let inside = |to: Option<usize>| to.is_some_and(|t| in_comp[t] && local.alive[t]);
        let mut enabled = vec![false; n];
        let mut executes = vec![false; n];
        for &m in &comp {
            for &(to, p, fired) in &local.adj[m] {
                if fired {
                    enabled[p.0] = true;
                    if inside(to) {
                        executes[p.0] = true;
                    }
                }
            }
        }
        let bad: Vec<ProcessId> = correct
            .iter()
            .copied()
            .filter(|v| enabled[v.0] && !executes[v.0])
            .collect();
        if bad.is_empty() {
            if activation_fair(local, &comp, correct, n) {
                return Ok(Some(comp[0]));
            }
            continue;
        }
        let mut rest = Vec::new();
        for &m in &comp {
            if local.adj[m].iter().any(|&(_, p, fired)| fired && bad.contains(&p)) {
                local.alive[m] = false;
            } else {
                rest.push(m);
            }
        }
        if !rest.is_empty() {
            if let Some(w) = strongly_fair_cycle(local, rest, correct, n)? {
                return Ok(Some(w));
            }
        }
    }
    Ok(None)
}

/// Every member of the protocol's legitimate set (LC for ss-ST, LC0 or LC1 for
/// ss-TO) within the level domain whose correct registers reflect the variables.
/// Byzantine registers range over every value the legitimate set allows.
pub fn reference_starts(topo: &Topology, kind: ProtocolKind, bound: Level) -> Result<Vec<Configuration>, OracleError> {
    let target = lc_target(kind, topo)?;
    let n = topo.n();
    let correct: Vec<ProcessId> = topo.correct().collect();
    let byz: Vec<ProcessId> = topo.byzantine().iter().copied().collect();
    let mut states_list: Vec<Vec<ProcessState>> = Vec::new();
    match kind {
        ProtocolKind::SsSt => {
            // Byzantine levels and parent pointers determine the correct levels.
            let nonroot: Vec<ProcessId> = correct.iter().copied().filter(|v| !topo.is_root(*v)).collect();
            let mut sizes: Vec<usize> = byz.iter().map(|_| bound as usize + 1).collect();
            sizes.extend(nonroot.iter().map(|v| topo.degree(*v)));
            for_each_product::<()>(&sizes, |ix| {
                let mut states = vec![ProcessState::default(); n];
                let mut known = vec![false; n];
                for (i, b) in byz.iter().enumerate() {
                    states[b.0] = ProcessState::new(0, ix[i] as Level);
                    known[b.0] = true;
                }
                if let Some(r) = topo.root() {
                    known[r.0] = true;
                }
                for (j, v) in nonroot.iter().enumerate() {
                    states[v.0].prnt = ix[byz.len() + j] + 1;
                }
                for _ in 0..n {
                    for v in &nonroot {
                        if !known[v.0] {
                            let p = topo.neighbors(*v)[states[v.0].prnt - 1];
                            if known[p.0] {
                                states[v.0].level = states[p.0].level + 1;
                                known[v.0] = true;
                            }
                        }
                    }
                }
                if known.iter().all(|&k| k) {
                    states_list.push(states);
                }
                Ok(())
            })
            .ok();
        }
        ProtocolKind::SsTo => {
            let sizes: Vec<usize> = correct
                .iter()
                .map(|v| topo.degree(*v) * (bound as usize + 1))
                .collect();
            for_each_product::<()>(&sizes, |ix| {
                let mut states = vec![ProcessState::new(1, 0); n];
                for (j, v) in correct.iter().enumerate() {
                    let per = bound as usize + 1;
                    states[v.0] = ProcessState::new(ix[j] / per + 1, (ix[j] % per) as Level);
                }
                states_list.push(states);
                Ok(())
            })
            .ok();
        }
    }
    let domain = register_domain(bound, kind.protocol().reads_input_prnt());
    let byz_regs: Vec<Vec<Vec<RegisterValue>>> =
        byz.iter().map(|b| register_vectors(&domain, topo.degree(*b))).collect();
    let mut out = Vec::new();
    for states in states_list {
        let base = Configuration::consistent(topo, states);
        if !target(&base, topo) {
            continue;
        }
        for_each_product::<()>(&byz_regs.iter().map(Vec::len).collect::<Vec<_>>(), |ix| {
            let mut c = base.clone();
            for (i, b) in byz.iter().enumerate() {
                c.registers[b.0] = byz_regs[i][ix[i]].clone();
            }
            if target(&c, topo) {
                out.push(c);
            }
            Ok(())
        })
        .ok();
    }
    Ok(out)
}

const ORACLE_STABILITY: StabilityBudget = StabilityBudget {
    max_states: 1_000_000,
    max_enabled: 20,
};

/// Exact worst-case c-disruption count and per-process O-variable change
/// counts over every execution from every reference configuration.
pub fn worst_disruptions(
    topo: &Topology,
    kind: ProtocolKind,
    opts: &OracleOptions,
) -> Result<DisruptionVerdict, OracleError> {
    check_cap(topo, opts)?;
    let bound = opts.level_bound(topo);
    let starts = reference_starts(topo, kind, bound)?;
    worst_from(topo, kind, opts, &starts, true)
}

/// Worst-case disruption path from one configuration, for scripted adversaries.
pub fn worst_path_from(
    topo: &Topology,
    kind: ProtocolKind,
    opts: &OracleOptions,
    start: &Configuration,
) -> Result<WorstPath, OracleError> {
    check_cap(topo, opts)?;
    let v = worst_from(topo, kind, opts, std::slice::from_ref(start), false)?;
    v.witness.ok_or(OracleError::Unsupported("unbounded disruptions have no finite worst path".into()))
}

fn worst_from(
    topo: &Topology,
    kind: ProtocolKind,
    opts: &OracleOptions,
    starts: &[Configuration],
    per_process: bool,
) -> Result<DisruptionVerdict, OracleError> {
    let protocol = kind.protocol();
    let bound = opts.level_bound(topo);
    let mut space = Space::new(topo, protocol, bound, false, opts.radius, opts.max_states);
    let ids: Vec<u32> = starts.iter().map(|c| space.intern(c)).collect::<Result<_, _>>()?;

    let (disruptions, witness) = {
        let mut g = WindowGraph {
            space: &mut space,
            anchors: Vec::new(),
            budget: ORACLE_STABILITY,
            radius: opts.radius,
        };
        let nodes: Vec<u64> = ids.iter().map(|&i| g.start_node(i)).collect::<Result<_, _>>()?;
        let lp = longest_path(&mut g, &nodes)?;
        if lp.unbounded {
            (Worst::Unbounded, None)
        } else {
            let (bi, &best_node) = nodes
                .iter()
                .enumerate()
                .max_by_key(|(i, n)| (lp.value(**n), std::cmp::Reverse(*i)))
                .expect("at least one start");
            let value = lp.value(best_node);
            let mut moves = Vec::new();
            for (from, e) in lp.path(&mut g, best_node)? {
                let cfg = (from / 3) as u32;
                let succ = g.space.successors(cfg)?;
                moves.push(g.space.to_move(cfg, &succ[e.label]));
            }
            (
                Worst::Bounded(value),
                Some(WorstPath {
                    start: starts[bi].clone(),
                    moves,
                    value,
                }),
            )
        }
    };

    let mut per = BTreeMap::new();
    if per_process {
        let mask = space.mask.clone();
        for who in (0..topo.n()).filter(|&i| mask[i]) {
            let mut g = ChangeGraph { space: &mut space, who };
            let nodes: Vec<u64> = ids.iter().map(|&i| i as u64).collect();
            let lp = longest_path(&mut g, &nodes)?;
            let w = if lp.unbounded {
                Worst::Unbounded
            } else {
                Worst::Bounded(nodes.iter().map(|&n| lp.value(n)).max().unwrap_or(0))
            };
            per.insert(ProcessId(who), w);
        }
    }
    let max_process_changes = per.values().copied().fold(Worst::Bounded(0), |a, w| match (a, w) {
        (Worst::Bounded(x), Worst::Bounded(y)) => Worst::Bounded(x.max(y)),
        _ => Worst::Unbounded,
    });
    Ok(DisruptionVerdict {
        c: opts.radius,
        level_bound: bound,
        starts: starts.len(),
        explored: space.set.len(),
        disruptions,
        per_process: per,
        max_process_changes,
        witness,
    })
}

/// Dispatches on `property`.
pub fn brute_force_verify(
    topo: &Topology,
    kind: ProtocolKind,
    property: Property,
    opts: &OracleOptions,
) -> Result<OracleVerdict, OracleError> {
    match property {
        Property::ConvergesTo => check_convergence(topo, kind, opts).map(OracleVerdict::Convergence),
        Property::WorstDisruptions => worst_disruptions(topo, kind, opts).map(OracleVerdict::Disruptions),
    }
}
