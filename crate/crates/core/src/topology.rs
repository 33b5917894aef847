//! Directed communication graph shared by agent coupling and gossip routing.
//!
//! Agents are indexed `0..V` in memory; the edge-list text format uses
//! 1-based ids.

use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{param_err, Error, Result};
use crate::rng::{stream, Domain};

/// Maximum number of deletion attempts per seed before giving up.
pub const REPAIR_BUDGET: usize = 1000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirectedNetwork {
    num_agents: usize,
    /// Sorted, deduplicated `(from, to)` pairs. Self-loops allowed.
    edges: Vec<(usize, usize)>,
    seed: u64,
    predecessors: Vec<Vec<usize>>,
    successors: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborSets {
    pub predecessors: Vec<usize>,
    pub successors: Vec<usize>,
    /// Number of predecessors (`J_v`).
    pub degree: usize,
    /// Network-wide maximum predecessor count (`J_max`), at least 1.
    pub max_degree: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegreeStats {
    /// `E / V`, equal to both the mean in-degree and the mean out-degree.
    pub mean_out_degree: f64,
    /// Largest number of distinct neighbours (in or out) of any agent.
    pub max_neighbors: usize,
    pub min_neighbors: usize,
}

impl DirectedNetwork {
    /// Builds a network from raw edges without checking connectivity.
    pub fn from_edges(num_agents: usize, edges: impl IntoIterator<Item = (usize, usize)>, seed: u64) -> Result<Self> {
        if num_agents == 0 {
            return param_err("network needs at least one agent");
        }
        let set: BTreeSet<(usize, usize)> = edges.into_iter().collect();
        if let Some(&(a, b)) = set.iter().find(|&&(a, b)| a >= num_agents || b >= num_agents) {
            return param_err(format!("edge ({a},{b}) out of range for {num_agents} agents"));
        }
        let edges: Vec<_> = set.into_iter().collect();
        let mut predecessors = vec![Vec::new(); num_agents];
        let mut successors = vec![Vec::new(); num_agents];
        for &(a, b) in &edges {
            if a != b {
                successors[a].push(b);
                predecessors[b].push(a);
            }
        }
        for list in predecessors.iter_mut().chain(successors.iter_mut()) {
            list.sort_unstable();
        }
        Ok(Self { num_agents, edges, seed, predecessors, successors })
    }

    /// Directed chain `0 -> 1 -> ... -> V-1`.
    pub fn chain(num_agents: usize) -> Result<Self> {
        Self::from_edges(num_agents, (1..num_agents).map(|v| (v - 1, v)), 0)
    }

    /// Directed ring `v -> v+1 mod V`.
    pub fn ring(num_agents: usize) -> Result<Self> {
        Self::from_edges(num_agents, (0..num_agents).map(|v| (v, (v + 1) % num_agents)).filter(|(a, b)| a != b), 0)
    }

    /// Bidirectional ring plus finger chords `v -> v + 2^k` for `2 <= 2^k < V`.
    pub fn ring_with_chords(num_agents: usize) -> Result<Self> {
        let v_n = num_agents;
        let mut edges = Vec::new();
        for v in 0..v_n {
            if v_n > 1 {
                edges.push((v, (v + 1) % v_n));
                edges.push(((v + 1) % v_n, v));
            }
            let mut hop = 2;
            while hop < v_n {
                edges.push((v, (v + hop) % v_n));
                hop *= 2;
            }
        }
        Self::from_edges(v_n, edges.into_iter().filter(|(a, b)| a != b), 0)
    }

    pub fn complete(num_agents: usize) -> Result<Self> {
        let edges = (0..num_agents).flat_map(|a| (0..num_agents).filter(move |&b| b != a).map(move |b| (a, b)));
        Self::from_edges(num_agents, edges, 0)
    }

    pub fn num_agents(&self) -> usize {
        self.num_agents
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn predecessors(&self, v: usize) -> &[usize] {
        &self.predecessors[v]
    }

    pub fn successors(&self, v: usize) -> &[usize] {
        &self.successors[v]
    }

    /// `J_max`: the largest predecessor count, floored at 1 so that
    /// `ceil(M / J_max)` is always defined.
    pub fn max_degree(&self) -> usize {
        self.predecessors.iter().map(Vec::len).max().unwrap_or(0).max(1)
    }

    pub fn neighbor_sets(&self, v: usize) -> Result<NeighborSets> {
        if v >= self.num_agents {
            return param_err(format!("agent {v} out of range (V = {})", self.num_agents));
        }
        Ok(NeighborSets {
            predecessors: self.predecessors[v].clone(),
            successors: self.successors[v].clone(),
            degree: self.predecessors[v].len(),
            max_degree: self.max_degree(),
        })
    }

    /// Edge-agent adjacency: entry `(v, j)` is 1 iff `j` is a successor of `v`.
    pub fn adjacency_matrix(&self) -> Vec<Vec<u8>> {
        let mut a = vec![vec![0u8; self.num_agents]; self.num_agents];
        for (v, succ) in self.successors.iter().enumerate() {
            for &j in succ {
                a[v][j] = 1;
            }
        }
        a
    }

    fn reachable_count(adj: &[Vec<usize>], start: usize) -> usize {
        let mut seen = vec![false; adj.len()];
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        let mut count = 1;
        while let Some(u) = queue.pop_front() {
            for &w in &adj[u] {
                if !seen[w] {
                    seen[w] = true;
                    count += 1;
                    queue.push_back(w);
                }
            }
        }
        count
    }

    pub fn is_strongly_connected(&self) -> bool {
        let n = self.num_agents;
        n == 1
            || (Self::reachable_count(&self.successors, 0) == n && Self::reachable_count(&self.predecessors, 0) == n)
    }

    /// Checks the structural invariants every generated network must satisfy.
    pub fn validate(&self) -> Result<()> {
        if self.num_agents == 1 {
            return Ok(());
        }
        if let Some(v) = (0..self.num_agents).find(|&v| self.successors[v].is_empty() || self.predecessors[v].is_empty()) {
            return Err(Error::Parameter(format!("agent {v} lacks an in- or out-neighbour")));
        }
        if !self.is_strongly_connected() {
            return Err(Error::Parameter("network is not strongly connected".into()));
        }
        Ok(())
    }

    pub fn degree_stats(&self) -> DegreeStats {
        let neighbor_counts: Vec<usize> = (0..self.num_agents)
            .map(|v| {
                let mut s: BTreeSet<usize> = self.predecessors[v].iter().copied().collect();
                s.extend(self.successors[v].iter().copied());
                s.len()
            })
            .collect();
        DegreeStats {
            mean_out_degree: self.edges.iter().filter(|(a, b)| a != b).count() as f64 / self.num_agents as f64,
            max_neighbors: neighbor_counts.iter().copied().max().unwrap_or(0),
            min_neighbors: neighbor_counts.iter().copied().min().unwrap_or(0),
        }
    }

    pub fn to_edge_list(&self) -> String {
        let mut out = format!("{} {} {}\n", self.num_agents, self.edges.len(), self.seed);
        for &(a, b) in &self.edges {
            let _ = writeln!(out, "{} {}", a + 1, b + 1);
        }
        out
    }

    pub fn from_edge_list(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header = lines.next().ok_or_else(|| Error::Parameter("empty edge list".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 3 {
            return param_err(format!("edge-list header must be `V E seed`, got `{header}`"));
        }
        let parse = |s: &str| s.parse::<u64>().map_err(|e| Error::Parameter(format!("bad integer `{s}`: {e}")));
        let (num_agents, num_edges, seed) = (parse(fields[0])? as usize, parse(fields[1])? as usize, parse(fields[2])?);
        let mut edges = Vec::with_capacity(num_edges);
        for line in lines {
            let pair: Vec<&str> = line.split_whitespace().collect();
            if pair.len() != 2 {
                return param_err(format!("edge line must be `from to`, got `{line}`"));
            }
            let (a, b) = (parse(pair[0])? as usize, parse(pair[1])? as usize);
            if a == 0 || b == 0 {
                return param_err("edge-list ids are 1-based");
            }
            edges.push((a - 1, b - 1));
        }
        let net = Self::from_edges(num_agents, edges, seed)?;
        if net.num_edges() != num_edges {
            return param_err(format!("header declares {num_edges} edges, found {}", net.num_edges()));
        }
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_edge_list())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_edge_list(&std::fs::read_to_string(path)?)
    }
}

/// Undirected Barabási–Albert preferential attachment graph, as a sorted edge list.
///
/// Starts from a star on `attach + 1` nodes; every later node links to
/// `attach` distinct existing nodes sampled proportionally to degree.
fn ba_undirected(num_agents: usize, attach: usize, rng: &mut impl Rng) -> Vec<(usize, usize)> {
    let mut edges: Vec<(usize, usize)> = (1..=attach).map(|j| (0, j)).collect();
    // each node appears once per incident edge
    let mut repeated: Vec<usize> = edges.iter().flat_map(|&(a, b)| [a, b]).collect();
    for new in (attach + 1)..num_agents {
        let mut targets = BTreeSet::new();
        while targets.len() < attach {
            targets.insert(repeated[rng.gen_range(0..repeated.len())]);
        }
        for t in targets {
            edges.push((t, new));
            repeated.push(t);
            repeated.push(new);
        }
    }
    edges
}

/// Directed scale-free network: BA graph with every link made bidirectional,
/// after which one direction of a random `deletion_fraction` of the links is
/// removed. A deletion that would leave an agent without an in- or
/// out-neighbour is skipped; if the result is not strongly connected the
/// deletion pass is redrawn, up to [`REPAIR_BUDGET`] times.
pub fn generate_ba_directed(num_agents: usize, attach: usize, deletion_fraction: f64, seed: u64) -> Result<DirectedNetwork> {
    if attach < 1 || num_agents <= attach {
        return param_err(format!("need num_agents > attach >= 1 (got {num_agents}, {attach})"));
    }
    if !(0.0..1.0).contains(&deletion_fraction) {
        return param_err(format!("deletion fraction {deletion_fraction} outside [0, 1)"));
    }
    let mut rng = stream(seed, Domain::Topology, 0, 0);
    let undirected = ba_undirected(num_agents, attach, &mut rng);
    let n_delete = (deletion_fraction * undirected.len() as f64).round() as usize;

    for attempt in 0..REPAIR_BUDGET {
        let mut rng = stream(seed, Domain::Topology, 1, attempt as u64);
        let mut out_deg = vec![0usize; num_agents];
        let mut in_deg = vec![0usize; num_agents];
        for &(a, b) in &undirected {
            out_deg[a] += 1;
            out_deg[b] += 1;
            in_deg[a] += 1;
            in_deg[b] += 1;
        }
        let mut order: Vec<usize> = (0..undirected.len()).collect();
        order.shuffle(&mut rng);
        let mut removed = BTreeSet::new();
        for &k in order.iter().take(n_delete) {
            let (a, b) = undirected[k];
            let (from, to) = if rng.gen_bool(0.5) { (a, b) } else { (b, a) };
            if out_deg[from] > 1 && in_deg[to] > 1 {
                out_deg[from] -= 1;
                in_deg[to] -= 1;
                removed.insert((from, to));
            }
        }
        let edges = undirected
            .iter()
            .flat_map(|&(a, b)| [(a, b), (b, a)])
            .filter(|e| !removed.contains(e));
        let net = DirectedNetwork::from_edges(num_agents, edges, seed)?;
        if net.validate().is_ok() {
            return Ok(net);
        }
    }
    Err(Error::Construction {
        budget: REPAIR_BUDGET,
        reason: format!("no strongly connected deletion pattern for V={num_agents}, attach={attach}"),
    })
}

/// Deletion fraction whose expected `E / V` equals `target_mean_out_degree`
/// for a BA graph with the given size.
pub fn deletion_for_mean_degree(num_agents: usize, attach: usize, target_mean_out_degree: f64) -> f64 {
    let links = (attach + (num_agents - attach - 1) * attach) as f64;
    let full = 2.0 * links / num_agents as f64;
    ((full - target_mean_out_degree) * num_agents as f64 / links).clamp(0.0, 0.999)
}
