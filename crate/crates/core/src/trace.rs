//! Line-delimited JSON traces: a header, one record per step, an end record.
//! Step records carry the full state vector after the step and only the
//! registers that changed, so a trace file can be replayed and re-checked.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{
    check_trace, round_boundaries, ByzWrite, Configuration, DaemonKind, DaemonMode, ExecutionTrace, Step, StopReason,
    Violation,
};
use crate::protocol::{ActionLabel, ProcessState, ProtocolKind, RegisterValue};
use crate::topology::{ProcessId, Topology, TopologyError};

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("trace line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("trace topology: {0}")]
    Topology(#[from] TopologyError),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Header {
    pub protocol: ProtocolKind,
    pub n: usize,
    pub root: Option<usize>,
    pub byzantine: Vec<usize>,
    pub edges: Vec<(usize, usize)>,
    /// `neighbor_order[v][k-1]` is the k-th neighbor of v.
    pub neighbor_order: Vec<Vec<usize>>,
    pub daemon_kind: DaemonKind,
    pub daemon_mode: DaemonMode,
    pub fairness_bound: usize,
    pub initial: Configuration,
}

impl Header {
    pub fn new(
        topo: &Topology,
        protocol: ProtocolKind,
        daemon: (DaemonKind, DaemonMode, usize),
        initial: &Configuration,
    ) -> Self {
        Self {
            protocol,
            n: topo.n(),
            root: topo.root().map(|r| r.0),
            byzantine: topo.byzantine().iter().map(|b| b.0).collect(),
            edges: topo.edges().iter().map(|(a, b)| (a.0, b.0)).collect(),
            neighbor_order: topo
                .processes()
                .map(|v| topo.neighbors(v).iter().map(|u| u.0).collect())
                .collect(),
            daemon_kind: daemon.0,
            daemon_mode: daemon.1,
            fairness_bound: daemon.2,
            initial: initial.clone(),
        }
    }

    pub fn topology(&self) -> Result<Topology, TopologyError> {
        Topology::with_neighbor_order(
            self.n,
            &self.edges,
            self.neighbor_order.clone(),
            self.root,
            &self.byzantine,
            self.protocol.protocol().topology_mode(),
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub activated: Vec<usize>,
    pub fired: Vec<(usize, Option<ActionLabel>)>,
    pub byz_writes: Vec<(usize, ByzWrite)>,
    pub states: Vec<ProcessState>,
    /// `(v, k, value)`: register k (1-based) of v changed to `value`.
    pub register_diffs: Vec<(usize, usize, RegisterValue)>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndRecord {
    pub stop: StopReason,
    pub round_ends: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Record {
    Header(Box<Header>),
    Step(StepRecord),
    End(EndRecord),
}

fn step_record(index: usize, step: &Step, before: &Configuration, after: &Configuration) -> StepRecord {
    let mut register_diffs = Vec::new();
    for (v, (old, new)) in before.registers.iter().zip(&after.registers).enumerate() {
        for (k, (a, b)) in old.iter().zip(new).enumerate() {
            if a != b {
                register_diffs.push((v, k + 1, *b));
            }
        }
    }
    StepRecord {
        step: index,
        activated: step.activated.iter().map(|v| v.0).collect(),
        fired: step.fired.iter().map(|(v, a)| (v.0, *a)).collect(),
        byz_writes: step.byz_writes.iter().map(|(v, w)| (v.0, w.clone())).collect(),
        states: after.states.clone(),
        register_diffs,
    }
}

/// Writes `trace` as JSON lines.
pub fn write_trace(out: &mut impl Write, header: &Header, trace: &ExecutionTrace) -> Result<(), TraceError> {
    let mut line = |r: &Record| -> Result<(), TraceError> {
        serde_json::to_writer(&mut *out, r).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
        Ok(())
    };
    line(&Record::Header(Box::new(header.clone())))?;
    for (i, step) in trace.steps.iter().enumerate() {
        line(&Record::Step(step_record(i, step, &trace.configs[i], &trace.configs[i + 1])))?;
    }
    line(&Record::End(EndRecord {
        stop: trace.stop,
        round_ends: trace.round_ends.clone(),
    }))
}

/// Reads a trace written by [`write_trace`], rebuilding every configuration.
pub fn read_trace(input: impl BufRead) -> Result<(Header, ExecutionTrace), TraceError> {
    let mut header: Option<Header> = None;
    let mut configs: Vec<Configuration> = Vec::new();
    let mut steps = Vec::new();
    let mut end: Option<EndRecord> = None;
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let fail = |msg: String| TraceError::Format { line: i + 1, msg };
        if line.trim().is_empty() {
            continue;
        }
        if end.is_some() {
            return Err(fail("record after the end record".into()));
        }
        let record: Record = serde_json::from_str(&line).map_err(|e| fail(e.to_string()))?;
        match record {
            Record::Header(h) => {
                if header.is_some() {
                    return Err(fail("second header".into()));
                }
                configs.push(h.initial.clone());
                header = Some(*h);
            }
            Record::Step(s) => {
                let prev = configs.last().ok_or_else(|| fail("step before header".into()))?;
                if s.step != steps.len() {
                    return Err(fail(format!("expected step {}, found {}", steps.len(), s.step)));
                }
                if s.states.len() != prev.states.len() {
                    return Err(fail("state vector has the wrong length".into()));
                }
                let mut next = Configuration {
                    states: s.states,
                    registers: prev.registers.clone(),
                };
                for (v, k, r) in s.register_diffs {
                    let slot = next
                        .registers
                        .get_mut(v)
                        .and_then(|regs| regs.get_mut(k.wrapping_sub(1)))
                        .ok_or_else(|| fail(format!("no register {k} at process {v}")))?;
                    *slot = r;
                }
                configs.push(next);
                steps.push(Step {
                    activated: s.activated.into_iter().map(ProcessId).collect(),
                    fired: s.fired.into_iter().map(|(v, a)| (ProcessId(v), a)).collect(),
                    byz_writes: s.byz_writes.into_iter().map(|(v, w)| (ProcessId(v), w)).collect(),
                });
            }
            Record::End(e) => end = Some(e),
        }
    }
    let header = header.ok_or(TraceError::Format {
        line: 0,
        msg: "missing header".into(),
    })?;
    let end = end.ok_or(TraceError::Format {
        line: 0,
        msg: "missing end record".into(),
    })?;
    Ok((
        header,
        ExecutionTrace {
            configs,
            steps,
            round_ends: end.round_ends,
            stop: end.stop,
        },
    ))
}

/// Re-executes every step of a stored trace and re-checks the engine invariants.
pub fn verify_stored(header: &Header, trace: &ExecutionTrace) -> Result<Vec<Violation>, TraceError> {
    let topo = header.topology()?;
    let protocol = header.protocol.protocol();
    let mut out = Vec::new();
    if let Err(e) = trace.initial().check_well_formed(&topo, protocol) {
        out.push(Violation {
            check: "well-formed",
            step: 0,
            detail: e.to_string(),
        });
        return Ok(out);
    }
    out.extend(check_trace(trace, &topo, protocol, header.fairness_bound));
    if round_boundaries(&trace.steps, &topo) != trace.round_ends {
        out.push(Violation {
            check: "rounds",
            step: trace.steps.len(),
            detail: "recorded round ends differ from the recomputed ones".into(),
        });
    }
    Ok(out)
}
