use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use rand::Rng;

use crate::ids::{NodeId, Tick};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Link {
    pub a: NodeId,
    pub b: NodeId,
    pub latency: Tick,
}

/// Undirected graph with per-link latencies.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Topology {
    adjacency: BTreeMap<NodeId, BTreeMap<NodeId, Tick>>,
}

/// Shortest route found by a flood: cumulative latency, hop count and the
/// node sequence from the flood origin.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Path {
    pub latency: Tick,
    pub nodes: Vec<NodeId>,
}

impl Path {
    pub fn hops(&self) -> usize {
        self.nodes.len() - 1
    }
}

impl Topology {
    /// Builds the graph, returning every structural problem found.
    pub fn new<N, L>(nodes: N, links: L) -> Result<Self, Vec<String>>
    where
        N: IntoIterator<Item = NodeId>,
        L: IntoIterator<Item = Link>,
    {
        let mut adjacency: BTreeMap<NodeId, BTreeMap<NodeId, Tick>> = BTreeMap::new();
        let mut problems = Vec::new();
        for n in nodes {
            if adjacency.insert(n.clone(), BTreeMap::new()).is_some() {
                problems.push(format!("topology.nodes: duplicate node {n}"));
            }
        }
        for link in links {
            let label = format!("{}-{}", link.a, link.b);
            if link.a == link.b {
                problems.push(format!("topology.edges: self-link on {}", link.a));
                continue;
            }
            if link.latency == 0 {
                problems.push(format!("topology.edges: link {label} needs a positive latency"));
            }
            let mut known = true;
            for end in [&link.a, &link.b] {
                if !adjacency.contains_key(end) {
                    problems.push(format!("topology.edges: link {label} references unknown node {end}"));
                    known = false;
                }
            }
            if !known {
                continue;
            }
            adjacency.get_mut(&link.a).unwrap().insert(link.b.clone(), link.latency);
            adjacency.get_mut(&link.b).unwrap().insert(link.a, link.latency);
        }
        if problems.is_empty() {
            Ok(Topology { adjacency })
        } else {
            Err(problems)
        }
    }

    /// Connected random graph on `n` nodes named `n0`, `n1`, … (zero padded)
    /// with unit latencies and roughly `degree` average degree.
    pub fn random_connected(n: usize, degree: usize, seed: u64) -> Self {
        let width = n.saturating_sub(1).to_string().len();
        let ids: Vec<NodeId> = (0..n).map(|i| NodeId::new(format!("n{i:0width$}"))).collect();
        let mut rng = rng::stream(seed, "topology");
        let mut edges: BTreeSet<(usize, usize)> = BTreeSet::new();
        for i in 1..n {
            let j = rng.gen_range(0..i);
            edges.insert((j, i));
        }
        let max_edges = n * n.saturating_sub(1) / 2;
        let target = (n * degree / 2).min(max_edges);
        while edges.len() < target {
            let a = rng.gen_range(0..n);
            let b = rng.gen_range(0..n);
            if a != b {
                edges.insert((a.min(b), a.max(b)));
            }
        }
        let links = edges.into_iter().map(|(a, b)| Link {
            a: ids[a].clone(),
            b: ids[b].clone(),
            latency: 1,
        });
        Topology::new(ids.clone(), links).expect("generated topology is well formed")
    }

    pub fn nodes(&self) -> impl Iterator<Item = &NodeId> {
        self.adjacency.keys()
    }

    pub fn len(&self) -> usize {
        self.adjacency.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adjacency.is_empty()
    }

    pub fn contains(&self, id: &NodeId) -> bool {
        self.adjacency.contains_key(id)
    }

    pub fn neighbors(&self, id: &NodeId) -> impl Iterator<Item = (&NodeId, Tick)> {
        self.adjacency
            .get(id)
            .into_iter()
            .flat_map(|m| m.iter().map(|(n, l)| (n, *l)))
    }

    pub fn latency(&self, a: &NodeId, b: &NodeId) -> Option<Tick> {
        self.adjacency.get(a).and_then(|m| m.get(b)).copied()
    }

    pub fn links(&self) -> Vec<Link> {
        let mut out = Vec::new();
        for (a, m) in &self.adjacency {
            for (b, l) in m {
                if a < b {
                    out.push(Link {
                        a: a.clone(),
                        b: b.clone(),
                        latency: *l,
                    });
                }
            }
        }
        out
    }

    pub fn max_latency(&self) -> Tick {
        self.adjacency
            .values()
            .flat_map(|m| m.values().copied())
            .max()
            .unwrap_or(0)
    }

    pub fn is_connected(&self) -> bool {
        let Some(start) = self.adjacency.keys().next() else {
            return true;
        };
        let mut seen = BTreeSet::from([start]);
        let mut stack = vec![start];
        while let Some(n) = stack.pop() {
            for (m, _) in self.neighbors(n) {
                if seen.insert(m) {
                    stack.push(m);
                }
            }
        }
        seen.len() == self.adjacency.len()
    }

    /// First-arrival flood from `origin`.
    ///
    /// Every node that `can_enter` admits may be reached; only those that
    /// `can_relay` also admits propagate the flood further. Ties on
    /// (latency, hops) resolve through the lowest node id.
    pub fn flood<E, R>(&self, origin: &NodeId, can_enter: E, can_relay: R) -> BTreeMap<NodeId, Path>
    where
        E: Fn(&NodeId) -> bool,
        R: Fn(&NodeId) -> bool,
    {
        let mut best: BTreeMap<NodeId, (Tick, usize, Option<NodeId>)> = BTreeMap::new();
        let mut settled: BTreeSet<NodeId> = BTreeSet::new();
        let mut heap = BinaryHeap::new();
        best.insert(origin.clone(), (0, 0, None));
        heap.push(Reverse((0, 0usize, origin.clone())));
        while let Some(Reverse((lat, hops, node))) = heap.pop() {
            if !settled.insert(node.clone()) {
                continue;
            }
            if &node != origin && !can_relay(&node) {
                continue;
            }
            for (next, l) in self.neighbors(&node) {
                if settled.contains(next) || !can_enter(next) {
                    continue;
                }
                let cand = (lat + l, hops + 1);
                let better = match best.get(next) {
                    None => true,
                    Some(&(bl, bh, _)) => cand < (bl, bh),
                };
                if better {
                    best.insert(next.clone(), (cand.0, cand.1, Some(node.clone())));
                    heap.push(Reverse((cand.0, cand.1, next.clone())));
                }
            }
        }
        let mut out = BTreeMap::new();
        for (id, (lat, _, _)) in &best {
            let mut nodes = vec![id.clone()];
            let mut cur = id;
            while let Some((_, _, Some(prev))) = best.get(cur) {
                nodes.push(prev.clone());
                cur = prev;
            }
            nodes.reverse();
            out.insert(id.clone(), Path { latency: *lat, nodes });
        }
        out
    }
}
