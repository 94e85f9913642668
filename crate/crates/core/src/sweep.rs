//! Parameter sweeps: many seeded runs over a grid, reduced to one CSV row per
//! (n, f, adversary) cell.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Deserialize;

use crate::adversary::AdversarySpec;
use crate::analysis::{ContainmentReport, Observable};
use crate::engine::{DaemonKind, DaemonMode};
use crate::gen::{self, Family};
use crate::init::InitMode;
use crate::protocol::ProtocolKind;
use crate::scenario::{Scenario, ScenarioError};
use crate::topology::TopologySpec;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    protocol: String,
    family: Option<Family>,
    topology: Option<String>,
    #[serde(default)]
    sizes: Vec<usize>,
    #[serde(default)]
    byzantine: Vec<usize>,
    #[serde(default = "default_adversaries")]
    adversaries: Vec<String>,
    #[serde(default = "default_init")]
    init: String,
    replications: usize,
    max_steps: usize,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    c: usize,
    daemon: Option<DaemonKind>,
    mode: Option<DaemonMode>,
    bound_factor: Option<usize>,
}

fn default_adversaries() -> Vec<String> {
    vec!["silent".into()]
}

fn default_init() -> String {
    "arbitrary".into()
}

/// Where sweep topologies come from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Source {
    Family(Family),
    /// A fixed graph and root; the Byzantine set is drawn per replication.
    Fixed(TopologySpec),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Grid {
    pub protocol: ProtocolKind,
    pub source: Source,
    pub sizes: Vec<usize>,
    pub byzantine: Vec<usize>,
    pub adversaries: Vec<AdversarySpec>,
    pub init: InitMode,
    pub replications: usize,
    pub max_steps: usize,
    pub seed: u64,
    pub radius: usize,
    pub daemon: DaemonKind,
    pub mode: Option<DaemonMode>,
    /// B = factor * n; `None` keeps the scenario default.
    pub bound_factor: Option<usize>,
}

impl Grid {
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self, ScenarioError> {
        let raw: RawGrid = toml::from_str(text)?;
        let protocol: ProtocolKind = raw.protocol.parse().map_err(ScenarioError::Invalid)?;
        let (source, sizes) = match (raw.family, raw.topology) {
            (Some(f), None) => (Source::Family(f), raw.sizes),
            (None, Some(p)) => {
                let path = base.join(p);
                let text = std::fs::read_to_string(&path).map_err(|source| ScenarioError::Io {
                    path: path.display().to_string(),
                    source,
                })?;
                let spec = TopologySpec::parse(&text)?;
                let n = spec.n;
                (Source::Fixed(spec), vec![n])
            }
            _ => return Err(ScenarioError::Invalid("give exactly one of `family` and `topology`".into())),
        };
        let adversaries = raw
            .adversaries
            .iter()
            .map(|a| a.parse())
            .collect::<Result<Vec<AdversarySpec>, _>>()?;
        Ok(Self {
            protocol,
            source,
            sizes,
            byzantine: if raw.byzantine.is_empty() { vec![0] } else { raw.byzantine },
            adversaries,
            init: raw.init.parse()?,
            replications: raw.replications,
            max_steps: raw.max_steps,
            seed: raw.seed,
            radius: raw.c,
            daemon: raw.daemon.unwrap_or(DaemonKind::Distributed),
            mode: raw.mode,
            bound_factor: raw.bound_factor,
        })
    }

    fn cells(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        for &n in &self.sizes {
            for &f in &self.byzantine {
                for a in 0..self.adversaries.len() {
                    out.push((n, f, a));
                }
            }
        }
        out
    }

    fn scenario(&self, n: usize, f: usize, adversary: usize, rep: usize) -> Result<Option<Scenario>, ScenarioError> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        // Distinct stream per (n, f, adversary, replication).
        rng.set_stream(((n as u64) << 48) ^ ((f as u64) << 40) ^ ((adversary as u64) << 32) ^ rep as u64);
        let rooted = self.protocol == ProtocolKind::SsSt;
        let spec = match &self.source {
            Source::Family(family) => gen::instance(*family, n, f, rooted, &mut rng),
            Source::Fixed(base) => gen::pick_byzantine(base.n, &base.edges, f, base.root, &mut rng).map(|byzantine| {
                TopologySpec {
                    byzantine,
                    ..base.clone()
                }
            }),
        };
        let Some(spec) = spec else {
            return Ok(None);
        };
        let mut s = Scenario::new(spec, self.protocol, self.max_steps, rng.gen());
        s.daemon_kind = self.daemon;
        s.daemon_mode = self.mode;
        s.fairness_bound = self.bound_factor.map(|k| (k * n).max(1));
        s.init = self.init.clone();
        s.adversary = self.adversaries[adversary].clone();
        s.radius = self.radius;
        Ok(Some(s))
    }
}

/// One aggregated row.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Row {
    pub protocol: String,
    pub n: usize,
    pub f: usize,
    pub adversary: String,
    pub runs: usize,
    /// Replications for which no admissible topology was found.
    pub skipped: usize,
    pub never_stabilized: usize,
    pub max_disruptions: usize,
    pub disruption_limit: Option<u64>,
    pub max_changes: usize,
    pub change_limit: Option<u64>,
    pub max_rounds: Option<u64>,
    pub round_limit: Option<u64>,
    /// Runs in which some checked bound failed.
    pub violations: usize,
}

fn limit_of(report: &ContainmentReport, bounds: &[crate::analysis::BoundSpec], o: Observable) -> Option<(Option<u64>, u64)> {
    bounds.iter().position(|b| b.observable == o).map(|i| {
        let c = &report.bounds_checked[i];
        (c.observed, c.limit)
    })
}

fn fold_min(acc: Option<u64>, x: Option<u64>) -> Option<u64> {
    match (acc, x) {
        (Some(a), Some(b)) => Some(a.min(b)),
        (a, b) => a.or(b),
    }
}

pub const CSV_HEADER: &str = "protocol,n,f,adversary,runs,skipped,never_stabilized,max_disruptions,disruption_limit,max_changes,change_limit,max_rounds,round_limit,violations";

impl Row {
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<u64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.protocol,
            self.n,
            self.f,
            self.adversary.replace(',', ";"),
            self.runs,
            self.skipped,
            self.never_stabilized,
            self.max_disruptions,
            opt(self.disruption_limit),
            self.max_changes,
            opt(self.change_limit),
            opt(self.max_rounds),
            opt(self.round_limit),
            self.violations
        )
    }
}

/// Runs every replication of every cell in parallel, then reduces per cell.
pub fn run_grid(grid: &Grid) -> Result<Vec<Row>, ScenarioError> {
    let jobs: Vec<(usize, usize, usize, usize)> = grid
        .cells()
        .into_iter()
        .flat_map(|(n, f, a)| (0..grid.replications).map(move |r| (n, f, a, r)))
        .collect();
    let results: Vec<Option<(ContainmentReport, Vec<crate::analysis::BoundSpec>)>> = jobs
        .par_iter()
        .map(|&(n, f, a, r)| {
            let Some(s) = grid.scenario(n, f, a, r)? else {
                return Ok(None);
            };
            let out = s.execute()?;
            let bounds = s.resolved_bounds(&out.topology);
            Ok(Some((out.report, bounds)))
        })
        .collect::<Result<_, ScenarioError>>()?;

    let mut rows: Vec<Row> = Vec::new();
    for (&(n, f, a, _), res) in jobs.iter().zip(results) {
        let adversary = grid.adversaries[a].to_string();
        if rows.last().is_none_or(|r| (r.n, r.f, &r.adversary) != (n, f, &adversary)) {
            rows.push(Row {
                protocol: grid.protocol.name().to_string(),
                n,
                f,
                adversary,
                ..Row::default()
            });
        }
        let row = rows.last_mut().unwrap();
        let Some((report, bounds)) = res else {
            row.skipped += 1;
            continue;
        };
        row.runs += 1;
        row.never_stabilized += usize::from(report.never_stabilized);
        row.violations += usize::from(!report.all_pass());
        row.max_disruptions = row.max_disruptions.max(report.disruption_count());
        row.max_changes = row.max_changes.max(report.max_process_changes);
        if let Some((_, l)) = limit_of(&report, &bounds, Observable::Disruptions) {
            row.disruption_limit = fold_min(row.disruption_limit, Some(l));
        }
        if let Some((_, l)) = limit_of(&report, &bounds, Observable::MaxProcessChanges) {
            row.change_limit = fold_min(row.change_limit, Some(l));
        }
        let rounds = limit_of(&report, &bounds, Observable::SettleRound)
            .or_else(|| limit_of(&report, &bounds, Observable::ReferenceRound));
        if let Some((obs, l)) = rounds {
            row.round_limit = fold_min(row.round_limit, Some(l));
            if let Some(o) = obs {
                row.max_rounds = Some(row.max_rounds.map_or(o, |m| m.max(o)));
            }
        }
    }
    Ok(rows)
}

pub fn to_csv(rows: &[Row]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_csv());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_grid_gives_header_only() {
        let g = Grid::parse(
            "protocol = \"ss-to\"\nfamily = \"random-tree\"\nsizes = []\nreplications = 5\nmax_steps = 10\n",
            Path::new("."),
        )
        .unwrap();
        let rows = run_grid(&g).unwrap();
        assert!(rows.is_empty());
        assert_eq!(to_csv(&rows), format!("{CSV_HEADER}\n"));
    }

    #[test]
    fn small_grid_is_deterministic() {
        let g = Grid::parse(
            "protocol = \"ss-to\"\nfamily = \"random-tree\"\nsizes = [4, 6]\nreplications = 6\nmax_steps = 3000\nseed = 3\n",
            Path::new("."),
        )
        .unwrap();
        let a = run_grid(&g).unwrap();
        assert_eq!(a, run_grid(&g).unwrap());
        assert_eq!(a.len(), 2);
        for r in &a {
            assert_eq!(r.runs, 6);
            assert_eq!(r.violations, 0, "{r:?}");
            assert!(r.max_rounds.unwrap() <= r.round_limit.unwrap());
        }
    }

    #[test]
    fn grid_rejects_ambiguous_source() {
        assert!(Grid::parse("protocol = \"ss-to\"\nreplications = 1\nmax_steps = 1\n", Path::new(".")).is_err());
    }
}
