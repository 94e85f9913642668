//! Scenario files: everything that determines one run.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversary::{build_adversary, AdversaryError, AdversarySetup, AdversarySpec};
use crate::analysis::oracle::DEFAULT_CAP;
use crate::analysis::{default_bounds, verify_containment, BoundSpec, ContainmentReport, StabilityBudget};
use crate::engine::{
    check_trace, run, Configuration, Daemon, DaemonKind, DaemonMode, EngineError, ExecutionTrace, StopCondition,
    Violation,
};
use crate::init::{self, InitError, InitMode};
use crate::protocol::ProtocolKind;
use crate::topology::{Topology, TopologyError, TopologySpec};

/// Environment variable replacing the scenario's master seed.
pub const SEED_ENV: &str = "STRONGSTAB_SEED";

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("scenario syntax: {0}")]
    Syntax(#[from] toml::de::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("topology: {0}")]
    Topology(#[from] TopologyError),
    #[error("initial configuration: {0}")]
    Init(#[from] InitError),
    #[error("adversary: {0}")]
    Adversary(#[from] AdversaryError),
    #[error("engine: {0}")]
    Engine(#[from] EngineError),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    topology: String,
    protocol: String,
    #[serde(default)]
    daemon: RawDaemon,
    #[serde(default = "default_init")]
    init: String,
    #[serde(default = "default_adversary")]
    adversary: String,
    max_steps: usize,
    #[serde(default)]
    c: usize,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    seeds: RawSeeds,
    bounds: Option<Vec<BoundSpec>>,
    oracle_cap: Option<usize>,
    corpus: Option<String>,
}

fn default_init() -> String {
    "arbitrary".into()
}

fn default_adversary() -> String {
    "silent".into()
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDaemon {
    kind: Option<DaemonKind>,
    mode: Option<DaemonMode>,
    bound: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSeeds {
    daemon: Option<u64>,
    init: Option<u64>,
    adversary: Option<u64>,
    neighbor: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub master: u64,
    pub daemon: u64,
    pub init: u64,
    pub adversary: u64,
    pub neighbor: u64,
}

impl Seeds {
    /// Component seeds drawn from the master seed.
    pub fn derive(master: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(master);
        Self {
            master,
            daemon: rng.gen(),
            init: rng.gen(),
            adversary: rng.gen(),
            neighbor: rng.gen(),
        }
    }
}

/// A validated scenario.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Scenario {
    pub topology: TopologySpec,
    pub protocol: ProtocolKind,
    pub daemon_kind: DaemonKind,
    /// `None` picks hostile for strategies that steer the daemon, neutral otherwise.
    pub daemon_mode: Option<DaemonMode>,
    /// `None` means 2n, or 3n for chain replay.
    pub fairness_bound: Option<usize>,
    #[serde(serialize_with = "as_display")]
    pub init: InitMode,
    #[serde(serialize_with = "as_display")]
    pub adversary: AdversarySpec,
    pub max_steps: usize,
    pub radius: usize,
    pub seeds: Seeds,
    /// `None` checks the protocol's default bounds.
    pub bounds: Option<Vec<BoundSpec>>,
    pub oracle_cap: usize,
    pub corpus: Option<PathBuf>,
}

fn as_display<T: std::fmt::Display, S: serde::Serializer>(v: &T, s: S) -> Result<S::Ok, S::Error> {
    s.collect_str(v)
}

/// Everything a run produces.
pub struct RunOutcome {
    pub topology: Topology,
    pub trace: ExecutionTrace,
    pub report: ContainmentReport,
    pub fairness_bound: usize,
    pub daemon_mode: DaemonMode,
    /// Engine invariant violations found on the trace; empty on a correct engine.
    pub violations: Vec<Violation>,
}

impl Scenario {
    /// A scenario with defaults around an in-memory topology.
    pub fn new(topology: TopologySpec, protocol: ProtocolKind, max_steps: usize, seed: u64) -> Self {
        Self {
            topology,
            protocol,
            daemon_kind: DaemonKind::Distributed,
            daemon_mode: None,
            fairness_bound: None,
            init: InitMode::Arbitrary,
            adversary: AdversarySpec::new("silent"),
            max_steps,
            radius: 0,
            seeds: Seeds::derive(seed),
            bounds: None,
            oracle_cap: DEFAULT_CAP,
            corpus: None,
        }
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = read(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// Parses scenario TOML; relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, ScenarioError> {
        let raw: RawScenario = toml::from_str(text)?;
        let protocol: ProtocolKind = raw.protocol.parse().map_err(ScenarioError::Invalid)?;
        let topo_path = base.join(&raw.topology);
        let topology = TopologySpec::parse(&read(&topo_path)?)?;
        let derived = Seeds::derive(raw.seed);
        let seeds = Seeds {
            master: raw.seed,
            daemon: raw.seeds.daemon.unwrap_or(derived.daemon),
            init: raw.seeds.init.unwrap_or(derived.init),
            adversary: raw.seeds.adversary.unwrap_or(derived.adversary),
            neighbor: raw.seeds.neighbor.unwrap_or(derived.neighbor),
        };
        let scenario = Self {
            topology,
            protocol,
            daemon_kind: raw.daemon.kind.unwrap_or(DaemonKind::Distributed),
            daemon_mode: raw.daemon.mode,
            fairness_bound: raw.daemon.bound,
            init: raw.init.parse()?,
            adversary: raw.adversary.parse()?,
            max_steps: raw.max_steps,
            radius: raw.c,
            seeds,
            bounds: raw.bounds,
            oracle_cap: raw.oracle_cap.unwrap_or(DEFAULT_CAP),
            corpus: Some(base.join(raw.corpus.as_deref().unwrap_or("init"))),
        };
        scenario.build_topology()?;
        Ok(scenario)
    }

    /// Replaces the master seed and re-derives every component seed from it.
    pub fn override_seed(&mut self, master: u64) {
        self.seeds = Seeds::derive(master);
    }

    /// Applies `STRONGSTAB_SEED` when set.
    pub fn apply_env_seed(&mut self) -> Result<(), ScenarioError> {
        match std::env::var(SEED_ENV) {
            Ok(v) => {
                let master = v
                    .trim()
                    .parse()
                    .map_err(|_| ScenarioError::Invalid(format!("{SEED_ENV}=`{v}` is not an unsigned integer")))?;
                self.override_seed(master);
                Ok(())
            }
            Err(_) => Ok(()),
        }
    }

    /// Builds and validates the topology for the protocol's structural mode.
    pub fn build_topology(&self) -> Result<Topology, ScenarioError> {
        Ok(self
            .topology
            .build(self.seeds.neighbor, self.protocol.protocol().topology_mode())?)
    }

    pub fn resolved_bound(&self, topo: &Topology) -> usize {
        self.fairness_bound.unwrap_or_else(|| {
            let factor = if self.adversary.name == "chain-replay" { 3 } else { 2 };
            (factor * topo.n()).max(1)
        })
    }

    pub fn resolved_mode(&self) -> DaemonMode {
        self.daemon_mode.unwrap_or(if self.adversary.wants_hostile_daemon() {
            DaemonMode::Hostile
        } else {
            DaemonMode::Neutral
        })
    }

    pub fn initial_configuration(&self, topo: &Topology) -> Result<Configuration, ScenarioError> {
        Ok(match &self.init {
            InitMode::Arbitrary => init::arbitrary(topo, self.protocol, self.seeds.init),
            InitMode::Legitimate => init::legitimate(topo, self.protocol, self.seeds.init)?,
            InitMode::Adversarial(name) => init::adversarial(name, topo, self.protocol, self.corpus.as_deref())?,
        })
    }

    pub fn resolved_bounds(&self, topo: &Topology) -> Vec<BoundSpec> {
        self.bounds.clone().unwrap_or_else(|| default_bounds(self.protocol, topo))
    }

    /// Runs the scenario, measures the trace and checks engine invariants on it.
    pub fn execute(&self) -> Result<RunOutcome, ScenarioError> {
        let topo = self.build_topology()?;
        let protocol = self.protocol.protocol();
        let init = self.initial_configuration(&topo)?;
        let bound = self.resolved_bound(&topo);
        let mode = self.resolved_mode();
        let mut daemon = Daemon::new(self.daemon_kind, mode, bound, self.seeds.daemon, &topo)?;
        let setup = AdversarySetup {
            topo: &topo,
            protocol: self.protocol,
            seed: self.seeds.adversary,
            oracle_cap: self.oracle_cap,
        };
        let mut adversary = build_adversary(&self.adversary, &setup)?;
        let trace = run(
            &topo,
            protocol,
            adversary.as_mut(),
            &mut daemon,
            init,
            &StopCondition::steps(self.max_steps),
        )?;
        let bounds = self.resolved_bounds(&topo);
        let report = verify_containment(&trace, &topo, protocol, self.radius, &bounds, StabilityBudget::default())?;
        let violations = check_trace(&trace, &topo, protocol, bound);
        Ok(RunOutcome {
            topology: topo,
            trace,
            report,
            fairness_bound: bound,
            daemon_mode: mode,
            violations,
        })
    }
}

fn read(path: &Path) -> Result<String, ScenarioError> {
    std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn write_files(dir: &Path, topo: &str, scenario: &str) -> PathBuf {
        fs::write(dir.join("t.topo"), topo).unwrap();
        let p = dir.join("s.toml");
        fs::write(&p, scenario).unwrap();
        p
    }

    fn tmpdir(tag: &str) -> PathBuf {
        let d = std::env::temp_dir().join(format!("strongstab-scenario-{tag}-{}", std::process::id()));
        fs::create_dir_all(&d).unwrap();
        d
    }

    #[test]
    fn parses_and_runs() {
        let d = tmpdir("ok");
        let p = write_files(
            &d,
            "n 3\nroot 0\nedge 0 1\nedge 1 2\n",
            "topology = \"t.topo\"\nprotocol = \"ss-st\"\nmax_steps = 500\nseed = 4\n[daemon]\nkind = \"central\"\n",
        );
        let s = Scenario::load(&p).unwrap();
        assert_eq!(s.daemon_kind, DaemonKind::Central);
        assert_eq!(s.seeds, Seeds::derive(4));
        let a = s.execute().unwrap();
        let b = s.execute().unwrap();
        assert_eq!(a.trace, b.trace);
        assert!(a.report.all_pass());
        assert!(a.violations.is_empty());
        assert_eq!(a.fairness_bound, 6);
    }

    #[test]
    fn explicit_seeds_and_override() {
        let d = tmpdir("seeds");
        let p = write_files(
            &d,
            "n 2\nedge 0 1\n",
            "topology = \"t.topo\"\nprotocol = \"ss-to\"\nmax_steps = 10\nseed = 1\n[seeds]\ndaemon = 77\n",
        );
        let mut s = Scenario::load(&p).unwrap();
        assert_eq!(s.seeds.daemon, 77);
        assert_eq!(s.seeds.init, Seeds::derive(1).init);
        s.override_seed(9);
        assert_eq!(s.seeds, Seeds::derive(9));
    }

    #[test]
    fn invalid_combinations_are_rejected() {
        let d = tmpdir("bad");
        let cycle = "n 3\nedge 0 1\nedge 1 2\nedge 0 2\n";
        let p = write_files(&d, cycle, "topology = \"t.topo\"\nprotocol = \"ss-to\"\nmax_steps = 10\n");
        assert!(matches!(Scenario::load(&p), Err(ScenarioError::Topology(_))));
        let p = write_files(&d, "n 2\nedge 0 1\n", "topology = \"t.topo\"\nprotocol = \"ss-st\"\nmax_steps = 10\n");
        assert!(matches!(Scenario::load(&p), Err(ScenarioError::Topology(_))));
        let p = write_files(&d, "n 2\nedge 0 1\n", "topology = \"t.topo\"\nprotocol = \"ss-xx\"\nmax_steps = 10\n");
        assert!(matches!(Scenario::load(&p), Err(ScenarioError::Invalid(_))));
        let p = write_files(&d, "n 2\nedge 0 1\n", "topology = \"t.topo\"\nprotocol = \"ss-to\"\nmax_step = 10\n");
        assert!(matches!(Scenario::load(&p), Err(ScenarioError::Syntax(_))));
    }
}
