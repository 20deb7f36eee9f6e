use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How to generate a topology.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TopologyKind {
    /// Agent `k` links to `k-1` and `k+1` (mod N).
    Ring,
    Complete,
    /// Uniform points in the unit square, linked when within `radius`.
    RandomGeometric {
        radius: f64,
    },
    /// User-supplied symmetric adjacency (row-major, N×N).
    Explicit {
        adjacency: Vec<Vec<bool>>,
    },
}

/// Undirected connected graph with self-loops on every agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    n_agents: usize,
    adjacency: Vec<bool>,
    /// Node positions for geometric graphs, kept for plotting and export.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    positions: Option<Vec<[f64; 2]>>,
}

impl Topology {
    /// Validates an explicit adjacency. Self-loops are added when missing.
    pub fn from_adjacency(adjacency: &[Vec<bool>]) -> Result<Self> {
        let n = adjacency.len();
        if n == 0 {
            return Err(Error::validation("topology must have at least one agent"));
        }
        let mut flat = vec![false; n * n];
        for (k, row) in adjacency.iter().enumerate() {
            if row.len() != n {
                return Err(Error::validation(format!(
                    "adjacency row {k} has length {} but N = {n}",
                    row.len()
                )));
            }
            for (l, &e) in row.iter().enumerate() {
                flat[k * n + l] = e;
            }
        }
        for k in 0..n {
            flat[k * n + k] = true;
        }
        let topo = Topology {
            n_agents: n,
            adjacency: flat,
            positions: None,
        };
        topo.validate()?;
        Ok(topo)
    }

    fn validate(&self) -> Result<()> {
        let n = self.n_agents;
        for k in 0..n {
            if !self.linked(k, k) {
                return Err(Error::validation(format!(
                    "agent {k} is not in its own neighborhood"
                )));
            }
            for l in 0..n {
                if self.linked(k, l) != self.linked(l, k) {
                    return Err(Error::validation(format!(
                        "adjacency is not symmetric: ({k},{l}) differs from ({l},{k})"
                    )));
                }
            }
        }
        if !self.is_connected() {
            return Err(Error::validation("topology is not connected"));
        }
        Ok(())
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn linked(&self, k: usize, l: usize) -> bool {
        self.adjacency[k * self.n_agents + l]
    }

    /// Neighborhood of `k`, including `k` itself, in increasing order.
    pub fn neighbors(&self, k: usize) -> Vec<usize> {
        (0..self.n_agents).filter(|&l| self.linked(k, l)).collect()
    }

    /// Neighborhood size `n_k` (counts the self-loop).
    pub fn degree(&self, k: usize) -> usize {
        (0..self.n_agents).filter(|&l| self.linked(k, l)).count()
    }

    pub fn adjacency_rows(&self) -> Vec<Vec<bool>> {
        (0..self.n_agents)
            .map(|k| (0..self.n_agents).map(|l| self.linked(k, l)).collect())
            .collect()
    }

    pub fn positions(&self) -> Option<&[[f64; 2]]> {
        self.positions.as_deref()
    }

    /// Number of undirected links, excluding self-loops.
    pub fn edge_count(&self) -> usize {
        let n = self.n_agents;
        (0..n)
            .flat_map(|k| (k + 1..n).map(move |l| (k, l)))
            .filter(|&(k, l)| self.linked(k, l))
            .count()
    }

    pub fn is_connected(&self) -> bool {
        let n = self.n_agents;
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(k) = queue.pop_front() {
            for l in 0..n {
                if self.linked(k, l) && !seen[l] {
                    seen[l] = true;
                    queue.push_back(l);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// Builds a topology of the requested kind. `seed` is only used by random kinds.
pub fn build_topology(kind: &TopologyKind, n: usize, seed: u64) -> Result<Topology> {
    if n == 0 {
        return Err(Error::validation("topology must have at least one agent"));
    }
    match kind {
        TopologyKind::Ring => {
            let mut adj = vec![vec![false; n]; n];
            for (k, row) in adj.iter_mut().enumerate() {
                row[k] = true;
                row[(k + 1) % n] = true;
                row[(k + n - 1) % n] = true;
            }
            Topology::from_adjacency(&adj)
        }
        TopologyKind::Complete => Topology::from_adjacency(&vec![vec![true; n]; n]),
        TopologyKind::RandomGeometric { radius } => random_geometric(n, *radius, seed),
        TopologyKind::Explicit { adjacency } => {
            if adjacency.len() != n {
                return Err(Error::validation(format!(
                    "explicit adjacency has {} rows but N = {n}",
                    adjacency.len()
                )));
            }
            Topology::from_adjacency(adjacency)
        }
    }
}

fn random_geometric(n: usize, radius: f64, seed: u64) -> Result<Topology> {
    if !(radius > 0.0 && radius <= std::f64::consts::SQRT_2) {
        return Err(Error::validation(format!(
            "random_geometric radius must lie in (0, sqrt(2)], got {radius}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<[f64; 2]> = (0..n)
        .map(|_| [rng.random::<f64>(), rng.random::<f64>()])
        .collect();
    let mut r = radius;
    loop {
        let adj: Vec<Vec<bool>> = (0..n)
            .map(|k| {
                (0..n)
                    .map(|l| {
                        let dx = points[k][0] - points[l][0];
                        let dy = points[k][1] - points[l][1];
                        (dx * dx + dy * dy).sqrt() <= r
                    })
                    .collect()
            })
            .collect();
        let mut topo = Topology {
            n_agents: n,
            adjacency: adj.into_iter().flatten().collect(),
            positions: Some(points.clone()),
        };
        if topo.is_connected() {
            topo.positions = Some(points);
            return Ok(topo);
        }
        // Any two points of the unit square are within sqrt(2), so this terminates.
        r = (r * 1.1).min(std::f64::consts::SQRT_2);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ring_of_three_is_complete() {
        let t = build_topology(&TopologyKind::Ring, 3, 0).unwrap();
        let c = build_topology(&TopologyKind::Complete, 3, 0).unwrap();
        assert_eq!(t, c);
    }

    #[test]
    fn single_agent() {
        let t = build_topology(&TopologyKind::Complete, 1, 0).unwrap();
        assert_eq!(t.adjacency_rows(), vec![vec![true]]);
        assert_eq!(t.neighbors(0), vec![0]);
    }

    #[test]
    fn asymmetric_explicit_rejected() {
        let adj = vec![vec![true, true], vec![false, true]];
        let err = Topology::from_adjacency(&adj).unwrap_err();
        assert!(err.to_string().contains("symmetric"), "{err}");
    }

    #[test]
    fn disconnected_explicit_rejected() {
        let adj = vec![vec![true, false], vec![false, true]];
        let err = Topology::from_adjacency(&adj).unwrap_err();
        assert!(err.to_string().contains("connected"), "{err}");
    }

    #[test]
    fn bad_radius_rejected() {
        assert!(build_topology(&TopologyKind::RandomGeometric { radius: 0.0 }, 4, 1).is_err());
        assert!(build_topology(&TopologyKind::RandomGeometric { radius: 1.5 }, 4, 1).is_err());
    }

    #[test]
    fn ring_neighbors() {
        let t = build_topology(&TopologyKind::Ring, 5, 0).unwrap();
        assert_eq!(t.neighbors(0), vec![0, 1, 4]);
        assert_eq!(t.degree(2), 3);
        assert_eq!(t.edge_count(), 5);
    }
}
