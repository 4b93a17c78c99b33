use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// On-disk topology description. Either an undirected edge list or a full
/// adjacency matrix may be given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyFile {
    pub node_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<[usize; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adjacency: Option<Vec<Vec<u8>>>,
}

/// Connected undirected sensor graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    adjacency: Vec<Vec<bool>>,
    neighbors: Vec<Vec<usize>>,
}

impl Topology {
    pub fn from_edges(node_count: usize, edges: &[[usize; 2]]) -> Result<Self> {
        let mut adjacency = vec![vec![false; node_count]; node_count];
        for &[a, b] in edges {
            if a >= node_count || b >= node_count {
                return Err(Error::Topology(format!("edge ({a}, {b}) outside 0..{node_count}")));
            }
            if a == b {
                return Err(Error::Topology(format!("self loop at node {a}")));
            }
            adjacency[a][b] = true;
            adjacency[b][a] = true;
        }
        Self::from_adjacency(adjacency)
    }

    pub fn from_adjacency(adjacency: Vec<Vec<bool>>) -> Result<Self> {
        let n = adjacency.len();
        if n == 0 {
            return Err(Error::Topology("graph has no nodes".into()));
        }
        for (i, row) in adjacency.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Topology(format!("adjacency row {i} has length {}", row.len())));
            }
            if row[i] {
                return Err(Error::Topology(format!("self loop at node {i}")));
            }
            for j in 0..n {
                if row[j] != adjacency[j][i] {
                    return Err(Error::Topology(format!("adjacency not symmetric at ({i}, {j})")));
                }
            }
        }
        let neighbors = adjacency
            .iter()
            .map(|row| (0..n).filter(|&j| row[j]).collect())
            .collect();
        let t = Self { adjacency, neighbors };
        if t.hop_distances(0).iter().any(Option::is_none) {
            return Err(Error::Topology("graph is not connected".into()));
        }
        Ok(t)
    }

    pub fn from_file_spec(spec: &TopologyFile) -> Result<Self> {
        match (&spec.edges, &spec.adjacency) {
            (Some(edges), None) => Self::from_edges(spec.node_count, edges),
            (None, Some(adj)) => {
                if adj.len() != spec.node_count {
                    return Err(Error::Topology("adjacency size differs from node_count".into()));
                }
                Self::from_adjacency(adj.iter().map(|r| r.iter().map(|&v| v != 0).collect()).collect())
            }
            (None, None) if spec.node_count == 1 => Self::from_edges(1, &[]),
            _ => Err(Error::Topology("give exactly one of `edges` or `adjacency`".into())),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: TopologyFile =
            serde_json::from_str(text).map_err(|e| Error::Topology(format!("bad topology JSON: {e}")))?;
        Self::from_file_spec(&spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Topology(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_file_spec(&self) -> TopologyFile {
        let mut edges = Vec::new();
        for (a, ns) in self.neighbors.iter().enumerate() {
            edges.extend(ns.iter().filter(|&&b| b > a).map(|&b| [a, b]));
        }
        TopologyFile {
            node_count: self.node_count(),
            edges: Some(edges),
            adjacency: None,
        }
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn is_adjacent(&self, a: usize, b: usize) -> bool {
        self.adjacency[a][b]
    }

    /// Neighbors of `s`, excluding `s`.
    pub fn neighbors(&self, s: usize) -> &[usize] {
        &self.neighbors[s]
    }

    /// `S_s`: neighbors of `s` and `s` itself, ascending.
    pub fn closed_neighborhood(&self, s: usize) -> Vec<usize> {
        let mut v = self.neighbors[s].clone();
        v.push(s);
        v.sort_unstable();
        v
    }

    fn hop_distances(&self, s: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.node_count()];
        dist[s] = Some(0);
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            let d = dist[u].expect("queued nodes have a distance");
            for &v in &self.neighbors[u] {
                if dist[v].is_none() {
                    dist[v] = Some(d + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// Nodes within `hops` of `s`, ascending.
    pub fn hop_neighborhood(&self, s: usize, hops: usize) -> Vec<usize> {
        self.hop_distances(s)
            .iter()
            .enumerate()
            .filter(|(_, d)| d.is_some_and(|d| d <= hops))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn diameter(&self) -> usize {
        (0..self.node_count())
            .map(|s| self.hop_distances(s).iter().flatten().copied().max().unwrap_or(0))
            .max()
            .unwrap_or(0)
    }

    /// The default 12-sensor network: a 3 x 4 grid with four diagonals.
    pub fn default_twelve() -> Self {
        let mut edges = Vec::new();
        for r in 0..3 {
            for c in 0..4 {
                let i = r * 4 + c;
                if c < 3 {
                    edges.push([i, i + 1]);
                }
                if r < 2 {
                    edges.push([i, i + 4]);
                }
            }
        }
        edges.extend([[0, 5], [6, 11], [3, 6], [5, 8]]);
        Self::from_edges(12, &edges).expect("default grid is connected")
    }
}

/// Metropolis fusion weights at node `s`: `1 / max(|S_s|, |S_r|)` for each
/// neighbor `r`, the remainder on `s` itself. Returned in ascending node
/// order.
pub fn metropolis_weights(topology: &Topology, s: usize) -> Vec<(usize, f64)> {
    let size_s = topology.neighbors(s).len() + 1;
    let mut out: Vec<(usize, f64)> = topology
        .neighbors(s)
        .iter()
        .map(|&r| (r, 1.0 / size_s.max(topology.neighbors(r).len() + 1) as f64))
        .collect();
    let self_weight = 1.0 - out.iter().map(|(_, w)| w).sum::<f64>();
    out.push((s, self_weight));
    out.sort_by_key(|&(r, _)| r);
    out
}
