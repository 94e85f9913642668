//! Seeded random topologies for sweeps and property tests.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::topology::TopologySpec;

/// Uniform random attachment tree on `n` processes.
pub fn random_tree(n: usize, rng: &mut impl Rng) -> Vec<(usize, usize)> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    (1..n)
        .map(|i| {
            let a = order[rng.gen_range(0..i)];
            let b = order[i];
            (a.min(b), a.max(b))
        })
        .collect()
}

/// A random tree plus up to `extra` additional distinct edges.
pub fn random_graph(n: usize, extra: usize, rng: &mut impl Rng) -> Vec<(usize, usize)> {
    let mut edges = random_tree(n, rng);
    let mut missing: Vec<(usize, usize)> = (0..n)
        .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
        .filter(|e| !edges.contains(e))
        .collect();
    missing.shuffle(rng);
    edges.extend(missing.into_iter().take(extra));
    edges
}

pub fn path(n: usize) -> Vec<(usize, usize)> {
    (0..n.saturating_sub(1)).map(|i| (i, i + 1)).collect()
}

/// Process 0 is the center.
pub fn star(n: usize) -> Vec<(usize, usize)> {
    (1..n).map(|i| (0, i)).collect()
}

fn correct_connected(n: usize, edges: &[(usize, usize)], byz: &[usize]) -> bool {
    let keep = |v: usize| !byz.contains(&v);
    let Some(start) = (0..n).find(|&v| keep(v)) else {
        return false;
    };
    let mut seen = vec![false; n];
    seen[start] = true;
    let mut stack = vec![start];
    while let Some(v) = stack.pop() {
        for &(a, b) in edges {
            let u = if a == v {
                b
            } else if b == v {
                a
            } else {
                continue;
            };
            if keep(u) && !seen[u] {
                seen[u] = true;
                stack.push(u);
            }
        }
    }
    (0..n).filter(|&v| keep(v)).all(|v| seen[v])
}

/// Picks `f` Byzantine processes distinct from `root` such that the correct
/// processes stay connected. `None` after a bounded number of attempts.
pub fn pick_byzantine(
    n: usize,
    edges: &[(usize, usize)],
    f: usize,
    root: Option<usize>,
    rng: &mut impl Rng,
) -> Option<Vec<usize>> {
    let candidates: Vec<usize> = (0..n).filter(|&v| Some(v) != root).collect();
    if f > candidates.len() || f >= n {
        return None;
    }
    for _ in 0..200 {
        let mut byz: Vec<usize> = candidates.choose_multiple(rng, f).copied().collect();
        byz.sort_unstable();
        if correct_connected(n, edges, &byz) {
            return Some(byz);
        }
    }
    None
}

/// Topology families available to sweeps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Path,
    Star,
    RandomTree,
    RandomGraph,
}

/// A spec for `family` on `n` processes with `f` Byzantine processes. Rooted
/// families put the root at a random correct process.
pub fn instance(family: Family, n: usize, f: usize, rooted: bool, rng: &mut impl Rng) -> Option<TopologySpec> {
    let edges = match family {
        Family::Path => path(n),
        Family::Star => star(n),
        Family::RandomTree => random_tree(n, rng),
        Family::RandomGraph => random_graph(n, n / 2, rng),
    };
    for _ in 0..20 {
        let root = rooted.then(|| rng.gen_range(0..n));
        if let Some(byzantine) = pick_byzantine(n, &edges, f, root, rng) {
            return Some(TopologySpec { n, root, byzantine, edges });
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::TopologyMode;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn trees_and_graphs_build() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in 2..20 {
            let t = random_tree(n, &mut rng);
            assert_eq!(t.len(), n - 1);
            TopologySpec { n, root: None, byzantine: vec![], edges: t }
                .build(0, TopologyMode::TreeOrientation)
                .unwrap();
            let g = random_graph(n, 3, &mut rng);
            assert!(g.len() >= n - 1);
            TopologySpec { n, root: Some(0), byzantine: vec![], edges: g }
                .build(0, TopologyMode::SpanningTree)
                .unwrap();
        }
    }

    #[test]
    fn byzantine_choice_keeps_correct_connected() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        // The center of a star can never be Byzantine here.
        for _ in 0..20 {
            let b = pick_byzantine(6, &star(6), 2, None, &mut rng).unwrap();
            assert!(!b.contains(&0));
        }
        assert!(pick_byzantine(3, &path(3), 1, Some(0), &mut rng).is_some());
        assert_eq!(pick_byzantine(3, &path(3), 3, None, &mut rng), None);
        for family in [Family::Path, Family::Star, Family::RandomTree, Family::RandomGraph] {
            let spec = instance(family, 8, 2, true, &mut rng).unwrap();
            spec.build(1, TopologyMode::SpanningTree).unwrap();
        }
    }
}
