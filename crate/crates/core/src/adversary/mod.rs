//! Byzantine strategies.
//!
//! An adversary sees the whole configuration and, for each activated Byzantine
//! process, either stays silent or writes that process's state and all its
//! output registers. The engine rejects anything else.

mod chain_replay;
mod max_damage;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

pub use chain_replay::ChainReplay;
pub use max_damage::MaxDamage;

use crate::engine::{ByzWrite, Configuration, EngineError};
use crate::protocol::{GuardedProtocol, Level, ProcessState, ProtocolKind, RegisterValue};
use crate::topology::{ProcessId, Topology};

/// What an adversary may look at when deciding.
#[derive(Clone, Copy)]
pub struct AdversaryContext<'a> {
    pub topo: &'a Topology,
    pub protocol: &'a dyn GuardedProtocol,
    pub config: &'a Configuration,
    pub step: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ByzAction {
    Silent,
    Write(ByzWrite),
}

pub trait Adversary: Send {
    fn name(&self) -> &str;

    /// Activated set the adversary would like next. Only a hostile daemon
    /// listens, and only within the fairness bound.
    fn propose(&mut self, _ctx: &AdversaryContext<'_>) -> Result<Option<Vec<ProcessId>>, EngineError> {
        Ok(None)
    }

    fn act(&mut self, ctx: &AdversaryContext<'_>, byz: ProcessId) -> Result<ByzAction, EngineError>;

    /// True once the adversary will never write again.
    fn is_silent_forever(&self) -> bool {
        false
    }
}

/// Writes `level` to the state and to every output register, with `r_prnt = false`.
pub fn uniform_write(config: &Configuration, byz: ProcessId, level: Level) -> ByzWrite {
    ByzWrite {
        state: ProcessState::new(config.state(byz).prnt, level),
        outputs: vec![RegisterValue::new(false, level); config.registers[byz.0].len()],
    }
}

/// Never writes: the Byzantine process looks like a frozen correct one.
#[derive(Clone, Copy, Debug, Default)]
pub struct Silent;

impl Adversary for Silent {
    fn name(&self) -> &str {
        "silent"
    }

    fn act(&mut self, _ctx: &AdversaryContext<'_>, _byz: ProcessId) -> Result<ByzAction, EngineError> {
        Ok(ByzAction::Silent)
    }

    fn is_silent_forever(&self) -> bool {
        true
    }
}

/// Claims to be a root: state `(0, 0)` and `(false, 0)` on every register,
/// written on the first activation and left in place.
#[derive(Clone, Debug, Default)]
pub struct FakeRoot {
    done: Vec<ProcessId>,
    pending: usize,
}

impl FakeRoot {
    pub fn new(topo: &Topology) -> Self {
        Self {
            done: Vec::new(),
            pending: topo.f(),
        }
    }
}

impl Adversary for FakeRoot {
    fn name(&self) -> &str {
        "fake-root"
    }

    fn act(&mut self, ctx: &AdversaryContext<'_>, byz: ProcessId) -> Result<ByzAction, EngineError> {
        if self.done.contains(&byz) {
            return Ok(ByzAction::Silent);
        }
        self.done.push(byz);
        self.pending = self.pending.saturating_sub(1);
        Ok(ByzAction::Write(ByzWrite {
            state: ProcessState::new(0, 0),
            outputs: vec![RegisterValue::new(false, 0); ctx.topo.degree(byz)],
        }))
    }

    fn is_silent_forever(&self) -> bool {
        self.pending == 0
    }
}

/// Raises the advertised level by `step` on every activation, optionally only
/// `budget` times per Byzantine process.
#[derive(Clone, Debug)]
pub struct LevelInflation {
    step: Level,
    budget: Option<usize>,
    used: BTreeMap<ProcessId, usize>,
    byz: usize,
}

impl LevelInflation {
    pub fn new(topo: &Topology, step: Level, budget: Option<usize>) -> Self {
        Self {
            step,
            budget,
            used: BTreeMap::new(),
            byz: topo.f(),
        }
    }
}

impl Adversary for LevelInflation {
    fn name(&self) -> &str {
        "level-inflation"
    }

    fn act(&mut self, ctx: &AdversaryContext<'_>, byz: ProcessId) -> Result<ByzAction, EngineError> {
        let used = self.used.entry(byz).or_insert(0);
        if self.budget.is_some_and(|b| *used >= b) {
            return Ok(ByzAction::Silent);
        }
        *used += 1;
        let current = ctx.config.registers[byz.0]
            .iter()
            .map(|r| r.r_level)
            .chain(std::iter::once(ctx.config.state(byz).level))
            .max()
            .unwrap_or(0);
        let level = current
            .checked_add(self.step)
            .ok_or_else(|| EngineError::Adversary("level inflation overflowed".into()))?;
        Ok(ByzAction::Write(uniform_write(ctx.config, byz, level)))
    }

    fn is_silent_forever(&self) -> bool {
        match self.budget {
            Some(b) => self.used.len() == self.byz && self.used.values().all(|&u| u >= b),
            None => self.byz == 0,
        }
    }
}

/// Alternates between advertising level 0 and one more than the largest level
/// it can see, switching every `period` activations.
#[derive(Clone, Debug)]
pub struct Oscillate {
    period: usize,
    count: BTreeMap<ProcessId, usize>,
}

impl Oscillate {
    pub fn new(period: usize) -> Self {
        Self {
            period: period.max(1),
            count: BTreeMap::new(),
        }
    }
}

impl Adversary for Oscillate {
    fn name(&self) -> &str {
        "oscillate"
    }

    fn act(&mut self, ctx: &AdversaryContext<'_>, byz: ProcessId) -> Result<ByzAction, EngineError> {
        let c = self.count.entry(byz).or_insert(0);
        let high = (*c / self.period) % 2 == 1;
        *c += 1;
        let level = if high {
            let seen = (1..=ctx.topo.degree(byz))
                .map(|k| ctx.config.input(ctx.topo, byz, k).r_level)
                .max()
                .unwrap_or(0);
            seen.checked_add(1)
                .ok_or_else(|| EngineError::Adversary("oscillation overflowed".into()))?
        } else {
            0
        };
        Ok(ByzAction::Write(uniform_write(ctx.config, byz, level)))
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AdversaryError {
    #[error("unknown adversary `{0}`")]
    Unknown(String),
    #[error("bad parameter `{key}` for {name}: {msg}")]
    Param { name: String, key: String, msg: String },
    #[error("{name} does not apply here: {msg}")]
    Unsupported { name: String, msg: String },
}

/// A strategy name plus `key=value` parameters, e.g. `level-inflation step=2`.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct AdversarySpec {
    pub name: String,
    pub params: BTreeMap<String, String>,
}

impl FromStr for AdversarySpec {
    type Err = AdversaryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut words = s.split_whitespace();
        let name = words.next().unwrap_or("silent").to_string();
        let mut params = BTreeMap::new();
        for w in words {
            let (k, v) = w.split_once('=').ok_or_else(|| AdversaryError::Param {
                name: name.clone(),
                key: w.to_string(),
                msg: "expected key=value".into(),
            })?;
            params.insert(k.to_string(), v.to_string());
        }
        Ok(Self { name, params })
    }
}

impl fmt::Display for AdversarySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)?;
        for (k, v) in &self.params {
            write!(f, " {k}={v}")?;
        }
        Ok(())
    }
}

impl AdversarySpec {
    pub fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            params: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.params.insert(key.to_string(), value.to_string());
        self
    }

    fn param<T: FromStr>(&self, key: &str) -> Result<Option<T>, AdversaryError> {
        self.params
            .get(key)
            .map(|v| {
                v.parse().map_err(|_| AdversaryError::Param {
                    name: self.name.clone(),
                    key: key.to_string(),
                    msg: format!("cannot parse `{v}`"),
                })
            })
            .transpose()
    }

    fn check_keys(&self, allowed: &[&str]) -> Result<(), AdversaryError> {
        match self.params.keys().find(|k| !allowed.contains(&k.as_str())) {
            Some(k) => Err(AdversaryError::Param {
                name: self.name.clone(),
                key: k.clone(),
                msg: "unknown parameter".into(),
            }),
            None => Ok(()),
        }
    }

    /// Whether this strategy needs the daemon to follow its proposals.
    pub fn wants_hostile_daemon(&self) -> bool {
        matches!(self.name.as_str(), "chain-replay" | "max-damage")
    }
}

/// Everything a strategy may need at construction time.
#[derive(Clone, Copy)]
pub struct AdversarySetup<'a> {
    pub topo: &'a Topology,
    pub protocol: ProtocolKind,
    pub seed: u64,
    /// Largest instance on which `max-damage` uses the exhaustive search.
    pub oracle_cap: usize,
}

pub fn build_adversary(spec: &AdversarySpec, setup: &AdversarySetup<'_>) -> Result<Box<dyn Adversary>, AdversaryError> {
    match spec.name.as_str() {
        "silent" => {
            spec.check_keys(&[])?;
            Ok(Box::new(Silent))
        }
        "fake-root" => {
            spec.check_keys(&[])?;
            Ok(Box::new(FakeRoot::new(setup.topo)))
        }
        "level-inflation" => {
            spec.check_keys(&["step", "budget"])?;
            let step: Level = spec.param("step")?.unwrap_or(1);
            Ok(Box::new(LevelInflation::new(setup.topo, step, spec.param("budget")?)))
        }
        "oscillate" => {
            spec.check_keys(&["period"])?;
            Ok(Box::new(Oscillate::new(spec.param("period")?.unwrap_or(1))))
        }
        "chain-replay" => {
            spec.check_keys(&[])?;
            if setup.protocol != ProtocolKind::SsTo {
                return Err(AdversaryError::Unsupported {
                    name: spec.name.clone(),
                    msg: "only defined for ss-to".into(),
                });
            }
            Ok(Box::new(ChainReplay::with_seed(setup.topo, setup.seed).map_err(|msg| AdversaryError::Unsupported {
                name: spec.name.clone(),
                msg,
            })?))
        }
        "max-damage" => {
            spec.check_keys(&["depth"])?;
            let depth = spec.param("depth")?.unwrap_or(2);
            Ok(Box::new(MaxDamage::new(setup.topo, setup.protocol, depth, setup.seed, setup.oracle_cap)))
        }
        other => Err(AdversaryError::Unknown(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{apply_step, make_step, run, Daemon, DaemonKind, DaemonMode, StopCondition};
    use crate::topology::TopologyMode;

    #[test]
    fn spec_round_trip() {
        let s: AdversarySpec = "level-inflation step=3 budget=4".parse().unwrap();
        assert_eq!(s.name, "level-inflation");
        assert_eq!(s.params["step"], "3");
        assert_eq!(s.to_string(), "level-inflation budget=4 step=3");
        assert!("oscillate period".parse::<AdversarySpec>().is_err());
    }

    fn path_with_byz_leaf() -> Topology {
        Topology::build(3, &[(0, 1), (1, 2)], Some(0), &[2], 1, TopologyMode::SpanningTree).unwrap()
    }

    #[test]
    fn bad_specs_are_rejected() {
        let t = path_with_byz_leaf();
        let setup = AdversarySetup {
            topo: &t,
            protocol: ProtocolKind::SsSt,
            seed: 0,
            oracle_cap: 4,
        };
        assert!(matches!(
            build_adversary(&AdversarySpec::new("teleport"), &setup),
            Err(AdversaryError::Unknown(_))
        ));
        assert!(build_adversary(&"oscillate period=x".parse().unwrap(), &setup).is_err());
        assert!(build_adversary(&"silent foo=1".parse().unwrap(), &setup).is_err());
        assert!(build_adversary(&AdversarySpec::new("chain-replay"), &setup).is_err());
    }

    #[test]
    fn writes_touching_correct_processes_are_rejected() {
        let t = path_with_byz_leaf();
        let p = ProtocolKind::SsSt.protocol();
        let c = Configuration::consistent(&t, vec![ProcessState::default(); 3]);
        let w = uniform_write(&c, ProcessId(1), 5);
        let err = make_step(&c, vec![ProcessId(1)], vec![(ProcessId(1), w)], &t, p)
            .and_then(|s| apply_step(&c, &s, &t, p))
            .unwrap_err();
        assert_eq!(err, EngineError::ByzWriteForCorrect(ProcessId(1)));
    }

    #[test]
    fn fake_root_writes_once_then_pledges_silence() {
        let t = path_with_byz_leaf();
        let p = ProtocolKind::SsSt.protocol();
        let mut a = FakeRoot::new(&t);
        assert!(!a.is_silent_forever());
        let init = Configuration::consistent(&t, vec![ProcessState::new(0, 0), ProcessState::new(1, 1), ProcessState::new(1, 6)]);
        let mut d = Daemon::new(DaemonKind::Distributed, DaemonMode::Neutral, 6, 2, &t).unwrap();
        let trace = run(&t, p, &mut a, &mut d, init, &StopCondition::steps(500)).unwrap();
        assert!(a.is_silent_forever());
        assert_eq!(trace.stop, crate::engine::StopReason::Quiescent);
        assert_eq!(trace.last().states[2], ProcessState::new(0, 0));
        assert!(crate::ss_st::in_lc(trace.last(), &t));
    }

    #[test]
    fn inflation_and_oscillation_keep_state_and_registers_in_step() {
        let t = path_with_byz_leaf();
        let p = ProtocolKind::SsSt.protocol();
        let c = Configuration::consistent(&t, vec![ProcessState::new(0, 0), ProcessState::new(1, 1), ProcessState::new(1, 2)]);
        let ctx = AdversaryContext {
            topo: &t,
            protocol: p,
            config: &c,
            step: 0,
        };
        let mut inf = LevelInflation::new(&t, 3, Some(1));
        let ByzAction::Write(w) = inf.act(&ctx, ProcessId(2)).unwrap() else { panic!() };
        assert_eq!(w.state.level, 5);
        assert!(w.outputs.iter().all(|r| r.r_level == 5));
        assert_eq!(inf.act(&ctx, ProcessId(2)).unwrap(), ByzAction::Silent);
        assert!(inf.is_silent_forever());

        let mut osc = Oscillate::new(1);
        let levels: Vec<Level> = (0..4)
            .map(|_| match osc.act(&ctx, ProcessId(2)).unwrap() {
                ByzAction::Write(w) => w.state.level,
                ByzAction::Silent => -1,
            })
            .collect();
        assert_eq!(levels, vec![0, 2, 0, 2]);
    }
}
