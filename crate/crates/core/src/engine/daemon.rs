use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EngineError;
use crate::topology::{ProcessId, Topology};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DaemonKind {
    /// Any nonempty subset per step.
    Distributed,
    /// Exactly one process per step.
    Central,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DaemonMode {
    /// Seeded random choice within the fairness bound.
    Neutral,
    /// The adversary's proposal is honored when it fits the fairness bound;
    /// otherwise Byzantine processes are favored and correct ones delayed.
    Hostile,
}

/// Bounded-delay scheduler: every correct process is activated at least once in
/// every window of `bound` consecutive steps.
#[derive(Clone, Debug)]
pub struct Daemon {
    kind: DaemonKind,
    mode: DaemonMode,
    bound: usize,
    rng: ChaCha8Rng,
    /// Last step index by which each correct process must be activated.
    deadline: Vec<Option<usize>>,
}

impl Daemon {
    pub fn new(
        kind: DaemonKind,
        mode: DaemonMode,
        bound: usize,
        seed: u64,
        topo: &Topology,
    ) -> Result<Self, EngineError> {
        if bound == 0 {
            return Err(EngineError::Daemon("fairness bound must be positive".into()));
        }
        let correct = topo.correct().count();
        if kind == DaemonKind::Central && bound < correct {
            return Err(EngineError::Daemon(format!(
                "central daemon cannot activate {correct} correct processes within {bound} steps"
            )));
        }
        let deadline = topo
            .processes()
            .map(|v| (!topo.is_byzantine(v)).then_some(bound - 1))
            .collect();
        Ok(Self {
            kind,
            mode,
            bound,
            rng: ChaCha8Rng::seed_from_u64(seed),
            deadline,
        })
    }

    pub fn kind(&self) -> DaemonKind {
        self.kind
    }

    pub fn mode(&self) -> DaemonMode {
        self.mode
    }

    pub fn fairness_bound(&self) -> usize {
        self.bound
    }

    /// Picks the activated set for step `step`, sorted.
    pub fn choose(&mut self, step: usize, topo: &Topology, proposal: Option<&[ProcessId]>) -> Vec<ProcessId> {
        let mut set = match self.kind {
            DaemonKind::Central => vec![self.choose_central(step, topo, proposal)],
            DaemonKind::Distributed => self.choose_distributed(step, topo, proposal),
        };
        set.sort_unstable();
        set.dedup();
        for v in &set {
            if let Some(d) = self.deadline[v.0].as_mut() {
                *d = step + self.bound;
            }
        }
        set
    }

    fn choose_central(&mut self, step: usize, topo: &Topology, proposal: Option<&[ProcessId]>) -> ProcessId {
        // Earliest-deadline-first whenever some prefix of the deadline order is tight.
        let mut pending: Vec<(usize, ProcessId)> = self
            .deadline
            .iter()
            .enumerate()
            .filter_map(|(i, d)| d.map(|d| (d, ProcessId(i))))
            .collect();
        pending.sort_unstable();
        let tight = pending.iter().enumerate().any(|(j, (d, _))| *d <= step + j);
        if tight {
            return pending[0].1;
        }
        if let Some(&v) = proposal.and_then(|p| p.first()) {
            return v;
        }
        let byz: Vec<ProcessId> = topo.byzantine().iter().copied().collect();
        if self.mode == DaemonMode::Hostile && !byz.is_empty() {
            return *byz.choose(&mut self.rng).unwrap();
        }
        ProcessId(self.rng.gen_range(0..topo.n()))
    }

    fn choose_distributed(&mut self, step: usize, topo: &Topology, proposal: Option<&[ProcessId]>) -> Vec<ProcessId> {
        let forced = self
            .deadline
            .iter()
            .enumerate()
            .filter(|(_, d)| **d == Some(step))
            .map(|(i, _)| ProcessId(i));
        let mut set: Vec<ProcessId> = forced.collect();
        match (self.mode, proposal) {
            (DaemonMode::Hostile, Some(p)) if !p.is_empty() => set.extend_from_slice(p),
            (DaemonMode::Hostile, _) => {
                set.extend(topo.byzantine().iter().copied());
                for v in topo.correct() {
                    if self.rng.gen_ratio(1, 4) {
                        set.push(v);
                    }
                }
            }
            (DaemonMode::Neutral, _) => {
                for v in topo.processes() {
                    if self.rng.gen_bool(0.5) {
                        set.push(v);
                    }
                }
            }
        }
        if set.is_empty() {
            set.push(ProcessId(self.rng.gen_range(0..topo.n())));
        }
        set
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::TopologyMode;

    fn windows_ok(sets: &[Vec<ProcessId>], correct: &[ProcessId], bound: usize) -> bool {
        sets.windows(bound)
            .all(|w| correct.iter().all(|v| w.iter().any(|s| s.contains(v))))
    }

    #[test]
    fn fairness_window_holds_for_both_kinds_and_modes() {
        let t = Topology::build(4, &[(0, 1), (1, 2), (2, 3)], None, &[3], 5, TopologyMode::General).unwrap();
        let correct: Vec<ProcessId> = t.correct().collect();
        for kind in [DaemonKind::Central, DaemonKind::Distributed] {
            for mode in [DaemonMode::Neutral, DaemonMode::Hostile] {
                for seed in 0..20 {
                    let mut d = Daemon::new(kind, mode, 4, seed, &t).unwrap();
                    let sets: Vec<_> = (0..200).map(|i| d.choose(i, &t, None)).collect();
                    assert!(windows_ok(&sets, &correct, 4), "{kind:?} {mode:?} {seed}");
                    if kind == DaemonKind::Central {
                        assert!(sets.iter().all(|s| s.len() == 1));
                    }
                    assert!(sets.iter().all(|s| !s.is_empty()));
                }
            }
        }
    }

    #[test]
    fn central_with_a_hostile_proposal_stays_fair() {
        let t = Topology::build(4, &[(0, 1), (1, 2), (2, 3)], None, &[3], 5, TopologyMode::General).unwrap();
        let correct: Vec<ProcessId> = t.correct().collect();
        let mut d = Daemon::new(DaemonKind::Central, DaemonMode::Hostile, 3, 1, &t).unwrap();
        let sets: Vec<_> = (0..100).map(|i| d.choose(i, &t, Some(&[ProcessId(3)]))).collect();
        assert!(windows_ok(&sets, &correct, 3));
    }

    #[test]
    fn rejects_infeasible_bounds() {
        let t = Topology::build(3, &[(0, 1), (1, 2)], None, &[], 0, TopologyMode::General).unwrap();
        assert!(Daemon::new(DaemonKind::Central, DaemonMode::Neutral, 2, 0, &t).is_err());
        assert!(Daemon::new(DaemonKind::Distributed, DaemonMode::Neutral, 0, 0, &t).is_err());
        assert!(Daemon::new(DaemonKind::Distributed, DaemonMode::Neutral, 1, 0, &t).is_ok());
    }
}
