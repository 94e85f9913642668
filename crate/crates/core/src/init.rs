//! Initial configurations: seeded arbitrary ones, legitimate ones, and named
//! adversarial ones (built-in shapes or `.cfg` files from a corpus directory).

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::engine::Configuration;
use crate::protocol::{Level, ProcessState, ProtocolKind, RegisterValue};
use crate::topology::{ProcessId, Topology};
use crate::{ss_st, ss_to};

#[derive(Debug, Error)]
pub enum InitError {
    #[error("unknown init mode `{0}` (expected arbitrary, legitimate or adversarial:<name>)")]
    UnknownMode(String),
    #[error("no legitimate generator for {protocol} with f = {f}")]
    NoLegitimateSet { protocol: ProtocolKind, f: usize },
    #[error("unknown adversarial configuration `{0}`")]
    UnknownNamed(String),
    #[error("configuration line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// How a scenario picks its initial configuration.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum InitMode {
    Arbitrary,
    Legitimate,
    Adversarial(String),
}

impl FromStr for InitMode {
    type Err = InitError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "arbitrary" => Ok(InitMode::Arbitrary),
            "legitimate" => Ok(InitMode::Legitimate),
            other => match other.strip_prefix("adversarial:") {
                Some(name) if !name.is_empty() => Ok(InitMode::Adversarial(name.to_string())),
                _ => Err(InitError::UnknownMode(other.to_string())),
            },
        }
    }
}

impl fmt::Display for InitMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitMode::Arbitrary => f.write_str("arbitrary"),
            InitMode::Legitimate => f.write_str("legitimate"),
            InitMode::Adversarial(n) => write!(f, "adversarial:{n}"),
        }
    }
}

/// Upper end of the level domain used for arbitrary values.
pub fn level_cap(topo: &Topology) -> Level {
    2 * topo.n() as Level
}

/// Uniform over the bounded domain: levels in [0, 2n], registers independent
/// of the variables. ss-ST pointers range over 0..=Δ_v+1 so that invalid
/// pointers occur; ss-TO pointers designate a neighbor.
pub fn arbitrary(topo: &Topology, kind: ProtocolKind, seed: u64) -> Configuration {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cap = level_cap(topo);
    let mut states = Vec::with_capacity(topo.n());
    let mut registers = Vec::with_capacity(topo.n());
    for v in topo.processes() {
        let deg = topo.degree(v);
        let prnt = match kind {
            ProtocolKind::SsSt => rng.gen_range(0..=deg + 1),
            ProtocolKind::SsTo => rng.gen_range(1..=deg),
        };
        states.push(ProcessState::new(prnt, rng.gen_range(0..=cap)));
        registers.push(
            (0..deg)
                .map(|_| RegisterValue::new(rng.gen_bool(0.5), rng.gen_range(0..=cap)))
                .collect(),
        );
    }
    Configuration { states, registers }
}

/// A random member of the protocol's legitimate set.
pub fn legitimate(topo: &Topology, kind: ProtocolKind, seed: u64) -> Result<Configuration, InitError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let none = || InitError::NoLegitimateSet { protocol: kind, f: topo.f() };
    match kind {
        ProtocolKind::SsSt => Ok(ss_st::random_lc(topo, &mut rng)),
        ProtocolKind::SsTo => match topo.f() {
            0 => Ok(ss_to::random_lc0(topo, &mut rng)),
            1 => ss_to::random_lc1(topo, &mut rng).map_err(|_| none()),
            _ => Err(none()),
        },
    }
}

/// Names accepted by [`builtin`].
pub const BUILTIN_NAMES: &[&str] = &["max-levels", "zero", "stale-registers", "lc2"];

/// Shapes that make sense on any topology.
pub fn builtin(name: &str, topo: &Topology, kind: ProtocolKind) -> Result<Option<Configuration>, InitError> {
    let cap = level_cap(topo);
    let config = match name {
        // Every pointer on the first neighbor with the largest level in the domain.
        "max-levels" => Configuration::consistent(topo, vec![ProcessState::new(1, cap); topo.n()]),
        "zero" => {
            let prnt = if kind == ProtocolKind::SsTo { 1 } else { 0 };
            Configuration::consistent(topo, vec![ProcessState::new(prnt, 0); topo.n()])
        }
        // Legitimate variables behind registers that all claim the top level.
        "stale-registers" => {
            let mut c = legitimate(topo, kind, 0)?;
            for regs in &mut c.registers {
                for r in regs.iter_mut() {
                    *r = RegisterValue::new(true, cap);
                }
            }
            c
        }
        "lc2" => {
            if kind != ProtocolKind::SsTo {
                return Err(InitError::NoLegitimateSet { protocol: kind, f: topo.f() });
            }
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            ss_to::random_lc2(topo, &mut rng).map_err(|_| InitError::NoLegitimateSet { protocol: kind, f: topo.f() })?
        }
        _ => return Ok(None),
    };
    Ok(Some(config))
}

/// A built-in shape, or `<corpus>/<name>.cfg`.
pub fn adversarial(
    name: &str,
    topo: &Topology,
    kind: ProtocolKind,
    corpus: Option<&Path>,
) -> Result<Configuration, InitError> {
    if let Some(c) = builtin(name, topo, kind)? {
        return Ok(c);
    }
    let Some(dir) = corpus else {
        return Err(InitError::UnknownNamed(name.to_string()));
    };
    let path = dir.join(format!("{name}.cfg"));
    if !path.is_file() {
        return Err(InitError::UnknownNamed(name.to_string()));
    }
    let text = std::fs::read_to_string(&path).map_err(|source| InitError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_config(&text, topo)
}

/// Parses the configuration format: `state <id> <prnt> <level>` for every
/// process, then optional `reg <id> <k> <0|1> <level>` lines overriding
/// register k (1-based) of a process. Registers not listed reflect the state.
/// `#` starts a comment.
pub fn parse_config(text: &str, topo: &Topology) -> Result<Configuration, InitError> {
    let mut states: Vec<Option<ProcessState>> = vec![None; topo.n()];
    let mut overrides = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| InitError::Parse { line: i + 1, msg };
        let words: Vec<&str> = line.split_whitespace().collect();
        let num = |w: &str| w.parse::<i64>().map_err(|_| err(format!("bad integer `{w}`")));
        let id = |w: &str| -> Result<usize, InitError> {
            let v = num(w)?;
            if v < 0 || v as usize >= topo.n() {
                return Err(err(format!("process {v} out of range")));
            }
            Ok(v as usize)
        };
        match words.as_slice() {
            ["state", v, p, l] => {
                let p = num(p)?;
                if p < 0 {
                    return Err(err("negative prnt".into()));
                }
                states[id(v)?] = Some(ProcessState::new(p as usize, num(l)?));
            }
            ["reg", v, k, b, l] => {
                let v = id(v)?;
                let k = num(k)?;
                if k < 1 || k as usize > topo.degree(ProcessId(v)) {
                    return Err(err(format!("register index {k} out of range for process {v}")));
                }
                let b = match *b {
                    "0" | "false" => false,
                    "1" | "true" => true,
                    other => return Err(err(format!("bad boolean `{other}`"))),
                };
                overrides.push((v, k as usize, RegisterValue::new(b, num(l)?)));
            }
            _ => return Err(err(format!("cannot parse `{line}`"))),
        }
    }
    let states: Vec<ProcessState> = states
        .into_iter()
        .enumerate()
        .map(|(v, s)| {
            s.ok_or(InitError::Parse {
                line: 0,
                msg: format!("no state for process {v}"),
            })
        })
        .collect::<Result<_, _>>()?;
    let mut config = Configuration::consistent(topo, states);
    for (v, k, r) in overrides {
        config.registers[v][k - 1] = r;
    }
    Ok(config)
}

/// Inverse of [`parse_config`]; registers are always listed.
pub fn render_config(config: &Configuration) -> String {
    let mut out = String::new();
    for (v, s) in config.states.iter().enumerate() {
        out.push_str(&format!("state {v} {} {}\n", s.prnt, s.level));
    }
    for (v, regs) in config.registers.iter().enumerate() {
        for (k, r) in regs.iter().enumerate() {
            out.push_str(&format!("reg {v} {} {} {}\n", k + 1, u8::from(r.r_prnt), r.r_level));
        }
    }
    out
}
