use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Adversary, AdversaryContext, ByzAction};
use crate::analysis::oracle::{self, Move, OracleOptions};
use crate::engine::{enabled_action, local_effect, ByzWrite, Configuration, EngineError};
use crate::protocol::{GuardedProtocol, Level, ProtocolKind, RegisterValue};
use crate::topology::{ProcessId, Topology};

/// Replans allowed after the daemon departs from the script.
const MAX_REPLANS: usize = 32;

/// Maximizes 0-disruptions. On instances within the oracle cap it replays the
/// exact worst path found by exhaustive search, proposing one process per step
/// and replanning whenever the daemon departs from the script. Larger instances
/// fall back to a greedy per-register choice scored by a bounded lookahead.
pub struct MaxDamage {
    kind: ProtocolKind,
    depth: usize,
    exhaustive: bool,
    rng: ChaCha8Rng,
    script: Option<Script>,
    replans: usize,
    pending: Option<Move>,
    done: bool,
}

struct Script {
    moves: Vec<Move>,
    pos: usize,
    expect: Configuration,
}

impl MaxDamage {
    pub fn new(topo: &Topology, kind: ProtocolKind, depth: usize, seed: u64, oracle_cap: usize) -> Self {
        Self {
            kind,
            depth: depth.max(1),
            exhaustive: topo.n() <= oracle_cap,
            rng: ChaCha8Rng::seed_from_u64(seed),
            script: None,
            replans: 0,
            pending: None,
            done: false,
        }
    }

    /// Starts from a precomputed worst path instead of searching on first use.
    pub fn with_script(mut self, path: oracle::WorstPath) -> Self {
        self.script = Some(Script {
            moves: path.moves,
            pos: 0,
            expect: path.start,
        });
        self
    }

    /// Number of times the script had to be recomputed.
    pub fn replans(&self) -> usize {
        self.replans
    }

    fn plan(&mut self, ctx: &AdversaryContext<'_>) -> Result<(), EngineError> {
        let opts = OracleOptions {
            cap: usize::MAX,
            ..OracleOptions::default()
        };
        match oracle::worst_path_from(ctx.topo, self.kind, &opts, ctx.config) {
            Ok(path) => {
                self.script = Some(Script {
                    moves: path.moves,
                    pos: 0,
                    expect: path.start,
                });
            }
            Err(oracle::OracleError::Engine(e)) => return Err(e),
            Err(_) => {
                self.exhaustive = false;
                self.script = None;
            }
        }
        Ok(())
    }

    fn scripted(&mut self, ctx: &AdversaryContext<'_>) -> Result<Option<Vec<ProcessId>>, EngineError> {
        let in_sync = self.script.as_ref().is_some_and(|s| &s.expect == ctx.config);
        if !in_sync {
            if self.script.is_some() && self.replans >= MAX_REPLANS {
                self.done = true;
                return Ok(None);
            }
            if self.script.is_some() {
                self.replans += 1;
            }
            self.plan(ctx)?;
            if !self.exhaustive {
                return Ok(None);
            }
        }
        let script = self.script.as_mut().unwrap();
        let Some(mv) = script.moves.get(script.pos).cloned() else {
            self.done = true;
            return Ok(None);
        };
        script.pos += 1;
        script.expect = apply_move(ctx.config, ctx.topo, ctx.protocol, &mv)?;
        let proposal = vec![mv.process];
        self.pending = Some(mv);
        Ok(Some(proposal))
    }

    fn greedy(&mut self, ctx: &AdversaryContext<'_>, byz: ProcessId) -> Result<ByzAction, EngineError> {
        let deg = ctx.topo.degree(byz);
        let mut write = ByzWrite {
            state: ctx.config.state(byz),
            outputs: ctx.config.registers[byz.0].clone(),
        };
        for k in 0..deg {
            let mut options = candidates(ctx, byz, k);
            options.shuffle(&mut self.rng);
            let mut best: Option<(usize, RegisterValue)> = None;
            for r in options {
                let mut trial = write.clone();
                trial.outputs[k] = r;
                let mut c = ctx.config.clone();
                c.states[byz.0] = trial.state;
                c.registers[byz.0] = trial.outputs;
                let score = lookahead_changes(&c, ctx.topo, ctx.protocol, self.depth)?;
                if best.is_none_or(|(s, _)| score > s) {
                    best = Some((score, r));
                }
            }
            if let Some((_, r)) = best {
                write.outputs[k] = r;
            }
        }
        if let Some(l) = write.outputs.iter().map(|r| r.r_level).max() {
            write.state.level = l;
        }
        Ok(ByzAction::Write(write))
    }
}

fn apply_move(
    config: &Configuration,
    topo: &Topology,
    protocol: &dyn GuardedProtocol,
    mv: &Move,
) -> Result<Configuration, EngineError> {
    let mut next = config.clone();
    let v = mv.process;
    match &mv.write {
        Some(w) => {
            next.states[v.0] = w.state;
            next.registers[v.0] = w.outputs.clone();
        }
        None => {
            if let Some(a) = enabled_action(config, topo, protocol, v)? {
                let e = local_effect(config, topo, protocol, v, a)?;
                next.states[v.0] = e.state;
                next.registers[v.0] = e.outputs;
            }
        }
    }
    Ok(next)
}

/// Register values worth trying toward the neighbor behind register `k`.
fn candidates(ctx: &AdversaryContext<'_>, byz: ProcessId, k: usize) -> Vec<RegisterValue> {
    let u = ctx.topo.neighbors(byz)[k];
    let lu = ctx.config.state(u).level;
    let max_in: Level = (1..=ctx.topo.degree(byz))
        .map(|j| ctx.config.input(ctx.topo, byz, j).r_level)
        .max()
        .unwrap_or(0);
    let mut levels = vec![0, lu.saturating_sub(1), lu, lu.saturating_add(1), max_in.saturating_add(1)];
    levels.retain(|l| *l >= 0);
    levels.sort_unstable();
    levels.dedup();
    let bits: &[bool] = if ctx.protocol.reads_input_prnt() { &[false, true] } else { &[false] };
    bits.iter()
        .flat_map(|&b| levels.iter().map(move |&l| RegisterValue::new(b, l)))
        .collect()
}

/// O-variable changes by correct processes over `depth` synchronous steps
/// with Byzantine processes silent.
fn lookahead_changes(
    config: &Configuration,
    topo: &Topology,
    protocol: &dyn GuardedProtocol,
    depth: usize,
) -> Result<usize, EngineError> {
    let mut cur = config.clone();
    let mut changes = 0;
    for _ in 0..depth {
        let mut next = cur.clone();
        let mut moved = false;
        for v in topo.correct() {
            if let Some(a) = enabled_action(&cur, topo, protocol, v)? {
                let e = local_effect(&cur, topo, protocol, v, a)?;
                if protocol.o_variables_differ(&cur.states[v.0], &e.state) {
                    changes += 1;
                }
                next.states[v.0] = e.state;
                next.registers[v.0] = e.outputs;
                moved = true;
            }
        }
        if !moved {
            break;
        }
        cur = next;
    }
    Ok(changes)
}

impl Adversary for MaxDamage {
    fn name(&self) -> &str {
        "max-damage"
    }

    fn propose(&mut self, ctx: &AdversaryContext<'_>) -> Result<Option<Vec<ProcessId>>, EngineError> {
        self.pending = None;
        if self.done || !self.exhaustive {
            return Ok(None);
        }
        self.scripted(ctx)
    }

    fn act(&mut self, ctx: &AdversaryContext<'_>, byz: ProcessId) -> Result<ByzAction, EngineError> {
        if self.done {
            return Ok(ByzAction::Silent);
        }
        if self.exhaustive {
            return Ok(match &self.pending {
                Some(Move {
                    process,
                    write: Some(w),
                }) if *process == byz => ByzAction::Write(w.clone()),
                _ => ByzAction::Silent,
            });
        }
        self.greedy(ctx, byz)
    }

    fn is_silent_forever(&self) -> bool {
        self.done
    }
}
