//! The communication graph: anonymous processes, locally numbered neighbors,
//! an optional root and a Byzantine subset.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Simulator-side process identifier. Protocol code never sees it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProcessId(pub usize);

impl ProcessId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for ProcessId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

/// Which structural constraints a topology must satisfy.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TopologyMode {
    /// Connected simple graph, nothing else.
    General,
    /// Rooted construction: root present and correct, correct processes connected.
    SpanningTree,
    /// Orientation: the graph is a tree and no root is designated.
    TreeOrientation,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TopologyError {
    #[error("edge list is empty")]
    NoEdges,
    #[error("process id {0} out of range for n = {1}")]
    IdOutOfRange(usize, usize),
    #[error("self-loop at process {0}")]
    SelfLoop(usize),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),
    #[error("graph is disconnected")]
    Disconnected,
    #[error("root process {0} is marked Byzantine")]
    RootByzantine(usize),
    #[error("a root process is required in spanning-tree mode")]
    MissingRoot,
    #[error("tree-orientation mode forbids a root")]
    UnexpectedRoot,
    #[error("tree-orientation mode requires a tree, got {edges} edges on {n} processes")]
    NotATree { n: usize, edges: usize },
    #[error("correct processes do not form a connected subgraph")]
    CorrectSubgraphDisconnected,
    #[error("neighbor index {k} out of range for process {v} of degree {degree}")]
    NeighborIndexOutOfRange { v: usize, k: usize, degree: usize },
    #[error("neighbor order of process {0} is not a permutation of its adjacency set")]
    BadNeighborOrder(usize),
    #[error("topology file line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Connectivity and diameter of the subgraph induced by correct processes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CorrectSubgraphMetrics {
    pub connected: bool,
    /// Hop diameter; `None` when the correct subgraph is disconnected or empty.
    pub diameter: Option<usize>,
    pub f: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    n: usize,
    edges: Vec<(ProcessId, ProcessId)>,
    neighbors: Vec<Vec<ProcessId>>,
    /// `mirror[v][i]` is the 0-based position of `v` in the neighbor list of `neighbors[v][i]`.
    mirror: Vec<Vec<usize>>,
    root: Option<ProcessId>,
    byzantine: BTreeSet<ProcessId>,
    is_byz: Vec<bool>,
}

impl Topology {
    /// Builds a topology, shuffling each process's local neighbor order with `neighbor_seed`.
    pub fn build(
        n: usize,
        edges: &[(usize, usize)],
        root: Option<usize>,
        byzantine: &[usize],
        neighbor_seed: u64,
        mode: TopologyMode,
    ) -> Result<Self, TopologyError> {
        let adjacency = adjacency(n, edges)?;
        let mut rng = ChaCha8Rng::seed_from_u64(neighbor_seed);
        let order = adjacency
            .into_iter()
            .map(|mut adj| {
                adj.shuffle(&mut rng);
                adj
            })
            .collect();
        Self::with_neighbor_order(n, edges, order, root, byzantine, mode)
    }

    /// Builds a topology from an explicit neighbor order (`order[v]` lists v's neighbors, k-th at index k-1).
    pub fn with_neighbor_order(
        n: usize,
        edges: &[(usize, usize)],
        order: Vec<Vec<usize>>,
        root: Option<usize>,
        byzantine: &[usize],
        mode: TopologyMode,
    ) -> Result<Self, TopologyError> {
        let adjacency = adjacency(n, edges)?;
        if order.len() != n {
            return Err(TopologyError::BadNeighborOrder(order.len().min(n)));
        }
        for (v, (given, adj)) in order.iter().zip(&adjacency).enumerate() {
            let mut a = given.clone();
            let mut b = adj.clone();
            a.sort_unstable();
            b.sort_unstable();
            if a != b {
                return Err(TopologyError::BadNeighborOrder(v));
            }
        }
        for &b in byzantine {
            if b >= n {
                return Err(TopologyError::IdOutOfRange(b, n));
            }
        }
        if let Some(r) = root {
            if r >= n {
                return Err(TopologyError::IdOutOfRange(r, n));
            }
        }

        let neighbors: Vec<Vec<ProcessId>> = order
            .iter()
            .map(|ns| ns.iter().map(|&u| ProcessId(u)).collect())
            .collect();
        let mirror = neighbors
            .iter()
            .enumerate()
            .map(|(v, ns)| {
                ns.iter()
                    .map(|u| {
                        neighbors[u.0]
                            .iter()
                            .position(|w| w.0 == v)
                            .expect("adjacency is symmetric")
                    })
                    .collect()
            })
            .collect();
        let mut norm: Vec<(ProcessId, ProcessId)> = edges
            .iter()
            .map(|&(a, b)| (ProcessId(a.min(b)), ProcessId(a.max(b))))
            .collect();
        norm.sort_unstable();
        let byz: BTreeSet<ProcessId> = byzantine.iter().map(|&b| ProcessId(b)).collect();
        let mut is_byz = vec![false; n];
        for b in &byz {
            is_byz[b.0] = true;
        }

        let topo = Topology {
            n,
            edges: norm,
            neighbors,
            mirror,
            root: root.map(ProcessId),
            byzantine: byz,
            is_byz,
        };
        topo.validate(mode)?;
        Ok(topo)
    }

    fn validate(&self, mode: TopologyMode) -> Result<(), TopologyError> {
        if !self.is_connected(|_| true) {
            return Err(TopologyError::Disconnected);
        }
        match mode {
            TopologyMode::General => {}
            TopologyMode::SpanningTree => {
                let root = self.root.ok_or(TopologyError::MissingRoot)?;
                if self.is_byz[root.0] {
                    return Err(TopologyError::RootByzantine(root.0));
                }
                if !self.is_connected(|v| !self.is_byz[v.0]) {
                    return Err(TopologyError::CorrectSubgraphDisconnected);
                }
            }
            TopologyMode::TreeOrientation => {
                if self.root.is_some() {
                    return Err(TopologyError::UnexpectedRoot);
                }
                if self.edges.len() + 1 != self.n {
                    return Err(TopologyError::NotATree {
                        n: self.n,
                        edges: self.edges.len(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn processes(&self) -> impl Iterator<Item = ProcessId> + '_ {
        (0..self.n).map(ProcessId)
    }

    pub fn edges(&self) -> &[(ProcessId, ProcessId)] {
        &self.edges
    }

    pub fn root(&self) -> Option<ProcessId> {
        self.root
    }

    pub fn byzantine(&self) -> &BTreeSet<ProcessId> {
        &self.byzantine
    }

    pub fn is_byzantine(&self, v: ProcessId) -> bool {
        self.is_byz[v.0]
    }

    pub fn is_root(&self, v: ProcessId) -> bool {
        self.root == Some(v)
    }

    pub fn correct(&self) -> impl Iterator<Item = ProcessId> + '_ {
        self.processes().filter(move |v| !self.is_byz[v.0])
    }

    pub fn f(&self) -> usize {
        self.byzantine.len()
    }

    pub fn degree(&self, v: ProcessId) -> usize {
        self.neighbors[v.0].len()
    }

    /// Maximum degree over all processes.
    pub fn max_degree(&self) -> usize {
        self.neighbors.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Local neighbor order of `v`; entry `k-1` is the k-th neighbor.
    pub fn neighbors(&self, v: ProcessId) -> &[ProcessId] {
        &self.neighbors[v.0]
    }

    /// The k-th neighbor of `v`, `k` being 1-based.
    pub fn kth_neighbor(&self, v: ProcessId, k: usize) -> Result<ProcessId, TopologyError> {
        let ns = &self.neighbors[v.0];
        if k == 0 || k > ns.len() {
            return Err(TopologyError::NeighborIndexOutOfRange {
                v: v.0,
                k,
                degree: ns.len(),
            });
        }
        Ok(ns[k - 1])
    }

    /// 1-based local index of `u` among the neighbors of `v`.
    pub fn local_index(&self, v: ProcessId, u: ProcessId) -> Option<usize> {
        self.neighbors[v.0].iter().position(|&w| w == u).map(|i| i + 1)
    }

    /// 0-based position of `v` in the neighbor list of its `i`-th (0-based) neighbor.
    pub fn mirror(&self, v: ProcessId, i: usize) -> usize {
        self.mirror[v.0][i]
    }

    pub fn is_tree(&self) -> bool {
        self.edges.len() + 1 == self.n
    }

    fn is_connected(&self, keep: impl Fn(ProcessId) -> bool) -> bool {
        let kept: Vec<ProcessId> = self.processes().filter(|&v| keep(v)).collect();
        let Some(&start) = kept.first() else {
            return true;
        };
        let dist = self.bfs(&[start], &keep);
        kept.iter().all(|v| dist[v.0].is_some())
    }

    /// Multi-source BFS restricted to processes accepted by `keep`.
    pub fn bfs(&self, sources: &[ProcessId], keep: impl Fn(ProcessId) -> bool) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.n];
        let mut queue = VecDeque::new();
        for &s in sources {
            if keep(s) && dist[s.0].is_none() {
                dist[s.0] = Some(0);
                queue.push_back(s);
            }
        }
        while let Some(v) = queue.pop_front() {
            let d = dist[v.0].unwrap();
            for &u in &self.neighbors[v.0] {
                if dist[u.0].is_none() && keep(u) {
                    dist[u.0] = Some(d + 1);
                    queue.push_back(u);
                }
            }
        }
        dist
    }

    /// Connectivity and hop diameter of the correct-process subgraph.
    pub fn correct_metrics(&self) -> CorrectSubgraphMetrics {
        let correct: Vec<ProcessId> = self.correct().collect();
        let keep = |v: ProcessId| !self.is_byz[v.0];
        let mut connected = true;
        let mut diameter = 0;
        for &s in &correct {
            let dist = self.bfs(&[s], keep);
            for &t in &correct {
                match dist[t.0] {
                    Some(d) => diameter = diameter.max(d),
                    None => connected = false,
                }
            }
            if !connected {
                break;
            }
        }
        CorrectSubgraphMetrics {
            connected,
            diameter: (connected && !correct.is_empty()).then_some(diameter),
            f: self.byzantine.len(),
        }
    }

    /// Hop diameter of the whole graph.
    pub fn diameter(&self) -> usize {
        self.processes()
            .map(|s| self.bfs(&[s], |_| true).into_iter().flatten().max().unwrap_or(0))
            .max()
            .unwrap_or(0)
    }

    /// Distance from every process to the nearest Byzantine process; `None` is infinity.
    pub fn distance_to_byzantine(&self) -> Vec<Option<usize>> {
        let sources: Vec<ProcessId> = self.byzantine.iter().copied().collect();
        self.bfs(&sources, |_| true)
    }

    /// Hop depth of each correct process from the root inside the correct subgraph.
    pub fn correct_depths_from_root(&self) -> Vec<Option<usize>> {
        match self.root {
            Some(r) => self.bfs(&[r], |v| !self.is_byz[v.0]),
            None => vec![None; self.n],
        }
    }

    /// Connected components of the graph with `removed` deleted, each sorted.
    pub fn components_without(&self, removed: ProcessId) -> Vec<Vec<ProcessId>> {
        let mut seen = vec![false; self.n];
        seen[removed.0] = true;
        let mut out = Vec::new();
        for v in self.processes() {
            if seen[v.0] {
                continue;
            }
            let dist = self.bfs(&[v], |u| u != removed);
            let mut comp: Vec<ProcessId> = self
                .processes()
                .filter(|u| dist[u.0].is_some())
                .collect();
            comp.sort_unstable();
            for u in &comp {
                seen[u.0] = true;
            }
            out.push(comp);
        }
        out
    }
}

fn adjacency(n: usize, edges: &[(usize, usize)]) -> Result<Vec<Vec<usize>>, TopologyError> {
    if edges.is_empty() {
        return Err(TopologyError::NoEdges);
    }
    let mut adj = vec![Vec::new(); n];
    let mut seen = BTreeSet::new();
    for &(a, b) in edges {
        if a >= n {
            return Err(TopologyError::IdOutOfRange(a, n));
        }
        if b >= n {
            return Err(TopologyError::IdOutOfRange(b, n));
        }
        if a == b {
            return Err(TopologyError::SelfLoop(a));
        }
        if !seen.insert((a.min(b), a.max(b))) {
            return Err(TopologyError::DuplicateEdge(a, b));
        }
        adj[a].push(b);
        adj[b].push(a);
    }
    for list in &mut adj {
        list.sort_unstable();
    }
    Ok(adj)
}

/// Parsed contents of a topology file, before neighbor orders are drawn.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopologySpec {
    pub n: usize,
    pub root: Option<usize>,
    pub byzantine: Vec<usize>,
    pub edges: Vec<(usize, usize)>,
}

impl TopologySpec {
    /// Parses the line format: `n <count>`, optional `root <id>`, optional
    /// `byz <id>...`, then `edge <u> <v>` lines. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, TopologyError> {
        let mut spec = TopologySpec::default();
        let mut have_n = false;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: &str| TopologyError::Parse {
                line: line_no,
                msg: msg.to_string(),
            };
            let mut words = line.split_whitespace();
            let keyword = words.next().unwrap();
            let nums: Vec<usize> = words
                .map(|w| w.parse::<usize>().map_err(|_| err(&format!("bad integer `{w}`"))))
                .collect::<Result<_, _>>()?;
            match keyword {
                "n" => {
                    if nums.len() != 1 {
                        return Err(err("`n` takes exactly one value"));
                    }
                    spec.n = nums[0];
                    have_n = true;
                }
                "root" => {
                    if nums.len() != 1 {
                        return Err(err("`root` takes exactly one value"));
                    }
                    spec.root = Some(nums[0]);
                }
                "byz" => spec.byzantine.extend(nums),
                "edge" => {
                    if nums.len() != 2 {
                        return Err(err("`edge` takes exactly two values"));
                    }
                    spec.edges.push((nums[0], nums[1]));
                }
                other => return Err(err(&format!("unknown keyword `{other}`"))),
            }
        }
        if !have_n {
            return Err(TopologyError::Parse {
                line: 0,
                msg: "missing `n` header".into(),
            });
        }
        Ok(spec)
    }

    pub fn build(&self, neighbor_seed: u64, mode: TopologyMode) -> Result<Topology, TopologyError> {
        Topology::build(self.n, &self.edges, self.root, &self.byzantine, neighbor_seed, mode)
    }

    pub fn render(&self) -> String {
        let mut out = format!("n {}\n", self.n);
        if let Some(r) = self.root {
            out.push_str(&format!("root {r}\n"));
        }
        if !self.byzantine.is_empty() {
            let ids: Vec<String> = self.byzantine.iter().map(|b| b.to_string()).collect();
            out.push_str(&format!("byz {}\n", ids.join(" ")));
        }
        for (u, v) in &self.edges {
            out.push_str(&format!("edge {u} {v}\n"));
        }
        out
    }
}
