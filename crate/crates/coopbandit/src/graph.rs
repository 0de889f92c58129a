//! Communication graphs: construction, independence numbers, and the
//! center assignment (centers, partition, hop distances, masses) used by
//! the center-based policies.

use std::collections::BTreeSet;
use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Undirected connected agent graph with a uniform per-edge delay.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommGraph {
    n: usize,
    adj: Vec<Vec<usize>>,
    edge_delay: u64,
}

impl CommGraph {
    /// Builds a graph from an explicit edge list. Validates symmetry (edges
    /// are stored both ways), absence of self-loops, connectivity, and d >= 1.
    pub fn new(n: usize, edges: &[(usize, usize)], edge_delay: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::parameter("graph needs at least one agent"));
        }
        if edge_delay < 1 {
            return Err(Error::parameter("edge delay must be at least 1"));
        }
        let mut adj = vec![Vec::new(); n];
        let mut seen = BTreeSet::new();
        for &(u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::parameter(format!("edge ({u},{v}) out of range")));
            }
            if u == v {
                return Err(Error::parameter(format!("self-loop at agent {u}")));
            }
            let key = (u.min(v), u.max(v));
            if !seen.insert(key) {
                return Err(Error::parameter(format!("duplicate edge ({u},{v})")));
            }
            adj[u].push(v);
            adj[v].push(u);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        let graph = CommGraph { n, adj, edge_delay };
        if !graph.is_connected() {
            return Err(Error::parameter("graph is not connected"));
        }
        Ok(graph)
    }

    pub fn n_agents(&self) -> usize {
        self.n
    }

    pub fn edge_delay(&self) -> u64 {
        self.edge_delay
    }

    /// Returns the same graph with a different edge delay.
    pub fn with_edge_delay(mut self, d: u64) -> Result<Self> {
        if d < 1 {
            return Err(Error::parameter("edge delay must be at least 1"));
        }
        self.edge_delay = d;
        Ok(self)
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adj[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adj[v].len()
    }

    /// The closed neighborhood: v's neighbors plus v itself, sorted.
    pub fn closed_neighborhood(&self, v: usize) -> Result<Vec<usize>> {
        if v >= self.n {
            return Err(Error::parameter(format!("agent id {v} out of range")));
        }
        let mut out = self.adj[v].clone();
        let pos = out.partition_point(|&u| u < v);
        out.insert(pos, v);
        Ok(out)
    }

    /// |N(v)| = degree + 1.
    pub fn closed_neighborhood_size(&self, v: usize) -> usize {
        self.adj[v].len() + 1
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Edges as (u, v) pairs with u < v, in lexicographic order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.edge_count());
        for u in 0..self.n {
            for &v in &self.adj[u] {
                if u < v {
                    out.push((u, v));
                }
            }
        }
        out
    }

    fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = queue.pop_front() {
            for &v in &self.adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    queue.push_back(v);
                }
            }
        }
        count == self.n
    }

    /// BFS distances from `src`; the graph is connected so every entry is
    /// finite.
    pub fn bfs_distances(&self, src: usize) -> Vec<u64> {
        let mut dist = vec![u64::MAX; self.n];
        dist[src] = 0;
        let mut queue = VecDeque::from([src]);
        while let Some(u) = queue.pop_front() {
            for &v in &self.adj[u] {
                if dist[v] == u64::MAX {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// Serializes to the edge-list text format: first line "N d", then one
    /// "u v" line per edge with u < v, lexicographically ordered.
    pub fn to_edge_list_string(&self) -> String {
        let mut out = format!("{} {}\n", self.n, self.edge_delay);
        for (u, v) in self.edges() {
            out.push_str(&format!("{u} {v}\n"));
        }
        out
    }

    pub fn from_edge_list_str(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::parameter("empty edge list"))?;
        let mut parts = header.split_whitespace();
        let n: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::parameter("bad edge-list header"))?;
        let d: u64 = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::parameter("bad edge-list header"))?;
        let mut edges = Vec::new();
        for line in lines {
            let mut it = line.split_whitespace();
            let u: usize = it
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::parameter(format!("bad edge line: {line}")))?;
            let v: usize = it
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::parameter(format!("bad edge line: {line}")))?;
            edges.push((u, v));
        }
        CommGraph::new(n, &edges, d)
    }
}

/// Builds a connected r-regular graph on `n` nodes via the pairing
/// (configuration) model: stubs are shuffled and paired; outcomes with
/// self-loops, multi-edges, or disconnected components are rejected and the
/// attempt restarts with the seed incremented.
pub fn build_regular(n: usize, r: usize, seed: u64) -> Result<CommGraph> {
    if r < 2 || r >= n {
        return Err(Error::parameter(format!(
            "r-regular graph needs 2 <= r < N, got r={r}, N={n}"
        )));
    }
    if !(r * n).is_multiple_of(2) {
        return Err(Error::parameter(format!(
            "r-regular graph needs r*N even, got r={r}, N={n}"
        )));
    }
    let mut attempt_seed = seed;
    loop {
        if let Some(graph) = try_pairing(n, r, attempt_seed) {
            return Ok(graph);
        }
        attempt_seed = attempt_seed.wrapping_add(1);
    }
}

fn try_pairing(n: usize, r: usize, seed: u64) -> Option<CommGraph> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stubs: Vec<usize> = (0..n).flat_map(|v| std::iter::repeat_n(v, r)).collect();
    stubs.shuffle(&mut rng);
    let mut edges = Vec::with_capacity(n * r / 2);
    let mut seen = BTreeSet::new();
    for pair in stubs.chunks(2) {
        let (u, v) = (pair[0], pair[1]);
        if u == v {
            return None;
        }
        if !seen.insert((u.min(v), u.max(v))) {
            return None;
        }
        edges.push((u, v));
    }
    CommGraph::new(n, &edges, 1).ok()
}

/// Star graph: node 0 is the hub, adjacent to every other node.
pub fn build_star(n: usize) -> Result<CommGraph> {
    if n < 2 {
        return Err(Error::parameter(format!(
            "star graph needs N >= 2, got {n}"
        )));
    }
    let edges: Vec<(usize, usize)> = (1..n).map(|v| (0, v)).collect();
    CommGraph::new(n, &edges, 1)
}

/// An Erdős–Rényi sample together with the edge probability used and the
/// number of resampling attempts needed to reach a connected outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct ErdosRenyiGraph {
    pub graph: CommGraph,
    pub edge_prob: f64,
    pub attempts: u32,
}

/// Erdős–Rényi random graph with edge probability p = 2 ln(N) / N, resampled
/// (incrementing the seed) until connected. Resampling conditions the
/// distribution on connectivity instead of distorting it with patch edges.
pub fn build_erdos_renyi(n: usize, seed: u64) -> Result<ErdosRenyiGraph> {
    if n < 2 {
        return Err(Error::parameter(format!(
            "Erdős–Rényi graph needs N >= 2, got {n}"
        )));
    }
    let p = 2.0 * (n as f64).ln() / n as f64;
    let mut attempts = 0u32;
    let mut attempt_seed = seed;
    loop {
        attempts += 1;
        let mut rng = ChaCha8Rng::seed_from_u64(attempt_seed);
        let mut edges = Vec::new();
        for u in 0..n {
            for v in (u + 1)..n {
                if rng.random::<f64>() < p {
                    edges.push((u, v));
                }
            }
        }
        if let Ok(graph) = CommGraph::new(n, &edges, 1) {
            return Ok(ErdosRenyiGraph {
                graph,
                edge_prob: p,
                attempts,
            });
        }
        attempt_seed = attempt_seed.wrapping_add(1);
    }
}

/// Independence number, exact up to this many nodes; larger graphs fall back
/// to a greedy lower bound flagged as approximate.
pub const EXACT_INDEPENDENCE_LIMIT: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IndependenceNumber {
    pub value: usize,
    /// False when the value is the greedy lower bound rather than the exact
    /// maximum.
    pub exact: bool,
}

/// Size of a maximum independent set. Exact branch-and-bound for
/// N <= [`EXACT_INDEPENDENCE_LIMIT`], greedy minimum-degree lower bound
/// beyond that.
pub fn independence_number(graph: &CommGraph) -> IndependenceNumber {
    if graph.n_agents() <= EXACT_INDEPENDENCE_LIMIT {
        IndependenceNumber {
            value: exact_mis(graph),
            exact: true,
        }
    } else {
        IndependenceNumber {
            value: greedy_mis(graph),
            exact: false,
        }
    }
}

/// Greedy lower bound: repeatedly take a minimum-degree vertex and delete its
/// closed neighborhood.
pub fn greedy_mis(graph: &CommGraph) -> usize {
    let n = graph.n_agents();
    let mut alive = vec![true; n];
    let mut degree: Vec<usize> = (0..n).map(|v| graph.degree(v)).collect();
    let mut remaining = n;
    let mut size = 0;
    while remaining > 0 {
        let v = (0..n)
            .filter(|&v| alive[v])
            .min_by_key(|&v| (degree[v], v))
            .expect("remaining > 0");
        size += 1;
        let mut removed = vec![v];
        removed.extend(graph.neighbors(v).iter().copied().filter(|&u| alive[u]));
        for &u in &removed {
            alive[u] = false;
            remaining -= 1;
            for &w in graph.neighbors(u) {
                if alive[w] {
                    degree[w] -= 1;
                }
            }
        }
    }
    size
}

fn exact_mis(graph: &CommGraph) -> usize {
    let n = graph.n_agents();
    debug_assert!(n <= 64);
    let masks: Vec<u64> = (0..n)
        .map(|v| {
            graph
                .neighbors(v)
                .iter()
                .fold(0u64, |acc, &u| acc | (1u64 << u))
        })
        .collect();
    let mut best = 0usize;
    let full = if n == 64 { u64::MAX } else { (1u64 << n) - 1 };
    mis_branch(&masks, full, 0, &mut best);
    best
}

fn mis_branch(masks: &[u64], mut cand: u64, current: usize, best: &mut usize) {
    // Degree-0 candidates always join the independent set.
    let mut current = current;
    loop {
        let mut advanced = false;
        let mut scan = cand;
        while scan != 0 {
            let v = scan.trailing_zeros() as usize;
            scan &= scan - 1;
            if masks[v] & cand == 0 {
                current += 1;
                cand &= !(1u64 << v);
                advanced = true;
            }
        }
        if !advanced {
            break;
        }
    }
    if cand == 0 {
        *best = (*best).max(current);
        return;
    }
    if current + cand.count_ones() as usize <= *best {
        return;
    }
    // Branch on the candidate with the most candidate neighbors.
    let mut pivot = usize::MAX;
    let mut pivot_deg = 0;
    let mut scan = cand;
    while scan != 0 {
        let v = scan.trailing_zeros() as usize;
        scan &= scan - 1;
        let deg = (masks[v] & cand).count_ones();
        if pivot == usize::MAX || deg > pivot_deg {
            pivot = v;
            pivot_deg = deg;
        }
    }
    let bit = 1u64 << pivot;
    mis_branch(masks, cand & !masks[pivot] & !bit, current + 1, best);
    mis_branch(masks, cand & !bit, current, best);
}

/// Centers, the partition of agents into per-center components, hop
/// distances, relay parents, and the per-agent masses.
#[derive(Debug, Clone, PartialEq)]
pub struct CenterAssignment {
    centers: BTreeSet<usize>,
    center_of: Vec<usize>,
    dist: Vec<u64>,
    mass: Vec<f64>,
    /// For each non-center, a neighbor one hop closer to the same center;
    /// the relay chain every follower copies its distribution through.
    parent: Vec<Option<usize>>,
}

impl CenterAssignment {
    pub fn centers(&self) -> impl Iterator<Item = usize> + '_ {
        self.centers.iter().copied()
    }

    pub fn center_count(&self) -> usize {
        self.centers.len()
    }

    pub fn is_center(&self, v: usize) -> bool {
        self.centers.contains(&v)
    }

    pub fn center_of(&self, v: usize) -> usize {
        self.center_of[v]
    }

    /// Hop distance from v to its assigned center.
    pub fn dist(&self, v: usize) -> u64 {
        self.dist[v]
    }

    /// M(c) = min{|N(c)|, K} at centers; M(v) = e^(-d(v)/6) * M(C(v))
    /// elsewhere.
    pub fn mass(&self, v: usize) -> f64 {
        self.mass[v]
    }

    /// The neighbor a follower relays its center's distribution through.
    pub fn relay_parent(&self, v: usize) -> Option<usize> {
        self.parent[v]
    }
}

/// Maximum assignment radius for a K-arm problem.
pub fn assignment_radius(k_arms: usize) -> u64 {
    ((6.0 * (k_arms as f64).ln()).ceil() as u64).max(1)
}

/// Selects centers and builds the assignment:
///
/// 1. Greedy ball-growing fixes the center set: repeatedly pick the
///    unassigned node of maximum degree (lowest id on ties) as a center and
///    mark every unassigned node within BFS radius R = max(1, ceil(6 ln K)).
/// 2. Every node is then assigned to its nearest center (lowest center id on
///    ties), which makes dist(v) the true shortest-path distance and
///    guarantees each non-center has a neighbor one hop closer inside the
///    same component, so relay chains are always well formed.
/// 3. A repair loop promotes any agent whose mass falls below
///    (1/e) * min{|N(v)|, K} to a center and recomputes the assignment.
pub fn select_centers(graph: &CommGraph, k_arms: usize) -> Result<CenterAssignment> {
    if k_arms < 2 {
        return Err(Error::parameter("center selection needs K >= 2"));
    }
    let n = graph.n_agents();
    let radius = assignment_radius(k_arms);

    // Phase 1: pick the center set by greedy ball-growing.
    let mut centers: BTreeSet<usize> = BTreeSet::new();
    let mut assigned = vec![false; n];
    let mut remaining = n;
    while remaining > 0 {
        let c = (0..n)
            .filter(|&v| !assigned[v])
            .max_by_key(|&v| (graph.degree(v), usize::MAX - v))
            .expect("remaining > 0");
        centers.insert(c);
        for (v, &d) in graph.bfs_distances(c).iter().enumerate() {
            if d <= radius && !assigned[v] {
                assigned[v] = true;
                remaining -= 1;
            }
        }
    }

    // Phases 2-3: assign to nearest centers; promote until the mass bound
    // holds everywhere. Terminates because every promotion adds a center.
    loop {
        let assignment = assign_to_nearest(graph, &centers, k_arms);
        let violator = (0..n).find(|&v| {
            let bound =
                (graph.closed_neighborhood_size(v).min(k_arms)) as f64 / std::f64::consts::E;
            assignment.mass[v] < bound
        });
        match violator {
            Some(v) => {
                centers.insert(v);
            }
            None => {
                debug_assert!(assignment.dist.iter().all(|&d| d <= radius));
                return Ok(assignment);
            }
        }
    }
}

fn assign_to_nearest(
    graph: &CommGraph,
    centers: &BTreeSet<usize>,
    k_arms: usize,
) -> CenterAssignment {
    let n = graph.n_agents();
    let mut center_of = vec![usize::MAX; n];
    let mut dist = vec![u64::MAX; n];
    // Per-center BFS keeps the tie-break explicit: nearest center wins, and
    // the lowest center id wins ties. Iterating centers in ascending order
    // with a strict `<` comparison realizes exactly that.
    for &c in centers {
        for (v, &d) in graph.bfs_distances(c).iter().enumerate() {
            if d < dist[v] {
                dist[v] = d;
                center_of[v] = c;
            }
        }
    }
    let mut mass = vec![0.0; n];
    for v in 0..n {
        let c = center_of[v];
        let center_mass = graph.closed_neighborhood_size(c).min(k_arms) as f64;
        mass[v] = (-(dist[v] as f64) / 6.0).exp() * center_mass;
    }
    let mut parent = vec![None; n];
    for v in 0..n {
        if dist[v] == 0 {
            continue;
        }
        // A neighbor one hop closer to the same center always exists under
        // the nearest-center rule; pick the smallest id for determinism.
        let p = graph
            .neighbors(v)
            .iter()
            .copied()
            .find(|&u| center_of[u] == center_of[v] && dist[u] + 1 == dist[v]);
        debug_assert!(p.is_some(), "relay parent missing for agent {v}");
        parent[v] = p;
    }
    CenterAssignment {
        centers: centers.clone(),
        center_of,
        dist,
        mass,
        parent,
    }
}
