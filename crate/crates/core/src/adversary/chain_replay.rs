use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Adversary, AdversaryContext, ByzAction, Silent};
use crate::engine::{
    enabled_action, local_effect, run, ByzWrite, Configuration, Daemon, DaemonKind, DaemonMode, EngineError,
    StopCondition,
};
use crate::protocol::{consistent_outputs, GuardedProtocol, ProcessState};
use crate::ss_to;
use crate::topology::{ProcessId, Topology, TopologyMode};

/// Attempts at finding a replay segment that moves an interior pointer before giving up.
const SEGMENT_ATTEMPTS: usize = 8;

/// Chain v1 - ... - vn with Byzantine endpoints. Whenever the correct interior
/// is quiet, the adversary builds the 3n-chain made of a copy of the chain, a
/// reversed copy and another copy, runs it fault-free to a legitimate
/// configuration, picks a copy whose interior changed a pointer and replays
/// that copy on the real chain: interior steps are proposed to the daemon and
/// the endpoints write exactly what the copy's end processes wrote. The real
/// chain ends up indistinguishable from the chosen copy, so it re-stabilizes
/// after at least one interior pointer moved. Then it starts over.
pub struct ChainReplay {
    order: Vec<ProcessId>,
    rng: ChaCha8Rng,
    script: VecDeque<Scripted>,
    expect: Option<Configuration>,
    pending: Option<Scripted>,
    segments: usize,
    desyncs: usize,
    gave_up: bool,
}

#[derive(Clone, Debug)]
struct Scripted {
    process: ProcessId,
    write: Option<ByzWrite>,
}

impl ChainReplay {
    pub fn new(topo: &Topology) -> Result<Self, String> {
        Self::with_seed(topo, 0)
    }

    pub fn with_seed(topo: &Topology, seed: u64) -> Result<Self, String> {
        let n = topo.n();
        if n < 3 || !topo.is_tree() || topo.processes().any(|v| topo.degree(v) > 2) {
            return Err("topology must be a chain of at least 3 processes".into());
        }
        let ends: Vec<ProcessId> = topo.processes().filter(|&v| topo.degree(v) == 1).collect();
        if ends.len() != 2 || topo.byzantine().iter().copied().collect::<Vec<_>>() != ends {
            return Err("exactly the two chain endpoints must be Byzantine".into());
        }
        let mut order = vec![ends[0]];
        while order.len() < n {
            let last = *order.last().unwrap();
            let next = topo
                .neighbors(last)
                .iter()
                .copied()
                .find(|u| order.len() < 2 || *u != order[order.len() - 2])
                .ok_or("chain is disconnected")?;
            order.push(next);
        }
        Ok(Self {
            order,
            rng: ChaCha8Rng::seed_from_u64(seed),
            script: VecDeque::new(),
            expect: None,
            pending: None,
            segments: 0,
            desyncs: 0,
            gave_up: false,
        })
    }

    /// Replay segments started so far.
    pub fn segments(&self) -> usize {
        self.segments
    }

    /// Segments abandoned because the daemon departed from the script.
    pub fn desyncs(&self) -> usize {
        self.desyncs
    }

    /// Builds the script for one segment starting from `config`, or `None`
    /// when no copy's interior changed a pointer.
    fn build_segment(
        &mut self,
        config: &Configuration,
        topo: &Topology,
        protocol: &dyn GuardedProtocol,
    ) -> Result<Option<VecDeque<Scripted>>, EngineError> {
        let n = self.order.len();
        let (long, init) = triple_chain(&self.order, config, topo)
            .map_err(|e| EngineError::Adversary(format!("chain construction failed: {e}")))?;
        let mut daemon = Daemon::new(DaemonKind::Central, DaemonMode::Neutral, 3 * n, self.rng.gen(), &long)?;
        let stop = StopCondition::steps(400 * n * n);
        let trace = run(&long, protocol, &mut Silent, &mut daemon, init, &stop)?;
        if !ss_to::in_lc0(trace.last(), &long).unwrap_or(false) {
            return Ok(None);
        }
        let interior_moved = |copy: usize| {
            (1..n - 1).any(|j| {
                let p = copy * n + j;
                trace.configs.windows(2).any(|w| w[0].states[p].prnt != w[1].states[p].prnt)
            })
        };
        let Some(copy) = (0..3).find(|&c| interior_moved(c)) else {
            return Ok(None);
        };
        let mut script = VecDeque::new();
        for (i, step) in trace.steps.iter().enumerate() {
            let p = step.activated[0].0;
            if p / n != copy {
                continue;
            }
            let j = original_index(p, n);
            let v = self.order[j];
            if j == 0 || j == n - 1 {
                let after = &trace.configs[i + 1];
                let deg = topo.degree(v);
                let mut state = after.states[p];
                if state.prnt > deg {
                    state.prnt = 1;
                }
                script.push_back(Scripted {
                    process: v,
                    write: Some(ByzWrite {
                        state,
                        outputs: after.registers[p][..deg].to_vec(),
                    }),
                });
            } else {
                script.push_back(Scripted {
                    process: v,
                    write: None,
                });
            }
        }
        Ok(Some(script))
    }
}

/// Position p of the 3n-chain holds a copy of order[original_index(p)].
fn original_index(p: usize, n: usize) -> usize {
    let (copy, j) = (p / n, p % n);
    if copy == 1 {
        n - 1 - j
    } else {
        j
    }
}

/// The copy | reversed copy | copy chain with local neighbor indices preserved,
/// so every copied process sees its registers under the same indices. Junction
/// links get the next free index at the copied endpoints.
fn triple_chain(
    order: &[ProcessId],
    config: &Configuration,
    topo: &Topology,
) -> Result<(Topology, Configuration), String> {
    let n = order.len();
    let m = 3 * n;
    let position = |copy: usize, j: usize| if copy == 1 { copy * n + (n - 1 - j) } else { copy * n + j };
    let index_of = |v: ProcessId| order.iter().position(|&u| u == v).unwrap();
    let mut neighbor_order = vec![Vec::new(); m];
    let mut edges = Vec::new();
    for p in 0..m {
        let copy = p / n;
        let v = order[original_index(p, n)];
        for &u in topo.neighbors(v) {
            let q = position(copy, index_of(u));
            neighbor_order[p].push(q);
            if p < q {
                edges.push((p, q));
            }
        }
    }
    for &(a, b) in &[(n - 1, n), (2 * n - 1, 2 * n)] {
        neighbor_order[a].push(b);
        neighbor_order[b].push(a);
        edges.push((a, b));
    }
    let long = Topology::with_neighbor_order(m, &edges, neighbor_order, None, &[], TopologyMode::TreeOrientation)
        .map_err(|e| e.to_string())?;
    let mut states = Vec::with_capacity(m);
    let mut registers = Vec::with_capacity(m);
    for p in 0..m {
        let v = order[original_index(p, n)];
        let deg = long.degree(ProcessId(p));
        let mut s: ProcessState = config.state(v);
        if s.prnt == 0 || s.prnt > deg {
            s.prnt = 1;
        }
        let mut regs = config.registers[v.0].clone();
        let full = consistent_outputs(s, deg);
        regs.extend_from_slice(&full[regs.len()..]);
        states.push(s);
        registers.push(regs);
    }
    Ok((long, Configuration { states, registers }))
}

impl Adversary for ChainReplay {
    fn name(&self) -> &str {
        "chain-replay"
    }

    fn propose(&mut self, ctx: &AdversaryContext<'_>) -> Result<Option<Vec<ProcessId>>, EngineError> {
        self.pending = None;
        if self.gave_up {
            return Ok(None);
        }
        if let Some(expect) = &self.expect {
            if expect != ctx.config {
                self.desyncs += 1;
                self.script.clear();
                self.expect = None;
            }
        }
        if self.script.is_empty() {
            self.expect = None;
            // Let the interior settle first.
            if let Some(v) = ctx
                .topo
                .correct()
                .find(|&v| matches!(enabled_action(ctx.config, ctx.topo, ctx.protocol, v), Ok(Some(_))))
            {
                return Ok(Some(vec![v]));
            }
            let mut found = None;
            for _ in 0..SEGMENT_ATTEMPTS {
                if let Some(s) = self.build_segment(ctx.config, ctx.topo, ctx.protocol)? {
                    found = Some(s);
                    break;
                }
            }
            match found {
                Some(s) => {
                    self.script = s;
                    self.segments += 1;
                }
                None => {
                    self.gave_up = true;
                    return Ok(None);
                }
            }
        }
        let Some(next) = self.script.pop_front() else {
            return Ok(None);
        };
        let mut after = ctx.config.clone();
        let v = next.process;
        match &next.write {
            Some(w) => {
                after.states[v.0] = w.state;
                after.registers[v.0] = w.outputs.clone();
            }
            None => {
                if let Some(a) = enabled_action(ctx.config, ctx.topo, ctx.protocol, v)? {
                    let e = local_effect(ctx.config, ctx.topo, ctx.protocol, v, a)?;
                    after.states[v.0] = e.state;
                    after.registers[v.0] = e.outputs;
                }
            }
        }
        self.expect = Some(after);
        self.pending = Some(next.clone());
        Ok(Some(vec![v]))
    }

    fn act(&mut self, _ctx: &AdversaryContext<'_>, byz: ProcessId) -> Result<ByzAction, EngineError> {
        Ok(match &self.pending {
            Some(Scripted {
                process,
                write: Some(w),
            }) if *process == byz => ByzAction::Write(w.clone()),
            _ => ByzAction::Silent,
        })
    }

    fn is_silent_forever(&self) -> bool {
        self.gave_up
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(n: usize) -> Topology {
        let edges: Vec<(usize, usize)> = (0..n - 1).map(|i| (i, i + 1)).collect();
        Topology::build(n, &edges, None, &[0, n - 1], 3, TopologyMode::TreeOrientation).unwrap()
    }

    #[test]
    fn rejects_other_shapes() {
        let star = Topology::build(4, &[(0, 1), (0, 2), (0, 3)], None, &[1, 2], 0, TopologyMode::TreeOrientation).unwrap();
        assert!(ChainReplay::new(&star).is_err());
        let inner = Topology::build(4, &[(0, 1), (1, 2), (2, 3)], None, &[0, 2], 0, TopologyMode::TreeOrientation).unwrap();
        assert!(ChainReplay::new(&inner).is_err());
        assert!(ChainReplay::new(&chain(5)).is_ok());
    }

    #[test]
    fn triple_chain_preserves_views() {
        let t = chain(4);
        let a = ChainReplay::new(&t).unwrap();
        let c = Configuration::consistent(
            &t,
            vec![ProcessState::new(1, 3), ProcessState::new(2, 1), ProcessState::new(1, 4), ProcessState::new(1, 0)],
        );
        let (long, init) = triple_chain(&a.order, &c, &t).unwrap();
        assert_eq!(long.n(), 12);
        assert!(long.is_tree());
        for p in 0..12 {
            let v = a.order[original_index(p, 4)];
            if t.is_byzantine(v) {
                continue;
            }
            assert_eq!(init.view(&long, ProcessId(p)), c.view(&t, v), "position {p}");
        }
    }
}
