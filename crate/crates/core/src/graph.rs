//! Communication-graph matrices for the decentralized allocator.
//!
//! The allocator mixes dual variables through `W = I - (1/tau) L`, where
//! `L = D - A` is the graph Laplacian. `W` is doubly stochastic for any
//! `tau != 0` and symmetric for undirected graphs; `tau > lambda_max(L)/2`
//! keeps the mixing stable.

use nalgebra::{DMatrix, SymmetricEigen};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("graph must have at least one node")]
    EmptyGraph,
    #[error("edge ({0}, {1}) references a node outside 1..={2}")]
    NodeOutOfRange(usize, usize, usize),
    #[error("self-loop on node {0} is not allowed")]
    SelfLoop(usize),
    #[error("graph is disconnected (no spanning tree)")]
    DisconnectedGraph,
    #[error("tau = {tau} must exceed lambda_max(L)/2 = {half_lambda_max}")]
    BadTau { tau: f64, half_lambda_max: f64 },
}

/// Adjacency, degree, Laplacian and mixing matrices of an undirected
/// communication graph. Immutable after construction; safe to share
/// read-only across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphTopology {
    pub n_nodes: usize,
    /// Normalized unordered edges, 0-based.
    pub edges: Vec<(usize, usize)>,
    pub adjacency: DMatrix<f64>,
    pub degree: DMatrix<f64>,
    pub laplacian: DMatrix<f64>,
    pub tau: f64,
    pub weight: DMatrix<f64>,
    lambda_max: f64,
}

/// Builds the topology from 1-based node pairs. Node indices are 1-based
/// in configs and converted here; everything downstream is 0-based.
///
/// When `tau` is absent it defaults to `lambda_max(L)` (clamped to 1.0 for
/// an edgeless single node), which keeps the spectrum of `W` inside [0, 1].
pub fn build_topology(
    edges: &[(usize, usize)],
    n_nodes: usize,
    tau: Option<f64>,
) -> Result<GraphTopology, GraphError> {
    if n_nodes == 0 {
        return Err(GraphError::EmptyGraph);
    }
    let mut normalized: Vec<(usize, usize)> = Vec::with_capacity(edges.len());
    for &(a, b) in edges {
        if a == b {
            return Err(GraphError::SelfLoop(a));
        }
        if a < 1 || a > n_nodes || b < 1 || b > n_nodes {
            return Err(GraphError::NodeOutOfRange(a, b, n_nodes));
        }
        let (lo, hi) = if a < b { (a - 1, b - 1) } else { (b - 1, a - 1) };
        if !normalized.contains(&(lo, hi)) {
            normalized.push((lo, hi));
        }
    }
    normalized.sort_unstable();

    let n = n_nodes;
    let mut adjacency = DMatrix::<f64>::zeros(n, n);
    for &(a, b) in &normalized {
        adjacency[(a, b)] = 1.0;
        adjacency[(b, a)] = 1.0;
    }
    let mut degree = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        degree[(i, i)] = adjacency.row(i).sum();
    }
    let laplacian = &degree - &adjacency;

    if !is_connected(&normalized, n) {
        return Err(GraphError::DisconnectedGraph);
    }

    let lambda_max = largest_eigenvalue(&laplacian);
    let tau = match tau {
        Some(t) => {
            if t <= 0.5 * lambda_max || t <= 0.0 {
                return Err(GraphError::BadTau {
                    tau: t,
                    half_lambda_max: 0.5 * lambda_max,
                });
            }
            t
        }
        // lambda_max = 0 only for the edgeless single node; any tau > 0 works.
        None => {
            if lambda_max > 0.0 {
                lambda_max
            } else {
                1.0
            }
        }
    };

    let weight = DMatrix::<f64>::identity(n, n) - &laplacian / tau;

    Ok(GraphTopology {
        n_nodes: n,
        edges: normalized,
        adjacency,
        degree,
        laplacian,
        tau,
        weight,
        lambda_max,
    })
}

/// Largest eigenvalue of the Laplacian (deterministic symmetric solve).
pub fn spectral_radius_check(topology: &GraphTopology) -> f64 {
    topology.lambda_max
}

impl GraphTopology {
    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }
}

fn largest_eigenvalue(sym: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(sym.clone());
    eig.eigenvalues.iter().cloned().fold(f64::MIN, f64::max)
}

fn is_connected(edges: &[(usize, usize)], n: usize) -> bool {
    // Breadth-first search from node 0.
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut seen = vec![false; n];
    let mut queue = std::collections::VecDeque::new();
    seen[0] = true;
    queue.push_back(0);
    let mut count = 1;
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                count += 1;
                queue.push_back(v);
            }
        }
    }
    count == n
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn path3(tau: Option<f64>) -> GraphTopology {
        build_topology(&[(1, 2), (2, 3)], 3, tau).unwrap()
    }

    #[test]
    fn path_graph_matrices_match_hand_values() {
        let topo = path3(Some(3.0));
        let a_expect = [[0.0, 1.0, 0.0], [1.0, 0.0, 1.0], [0.0, 1.0, 0.0]];
        let d_expect = [[1.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 1.0]];
        let w_expect = [
            [2.0 / 3.0, 1.0 / 3.0, 0.0],
            [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
            [0.0, 1.0 / 3.0, 2.0 / 3.0],
        ];
        for r in 0..3 {
            for c in 0..3 {
                assert_eq!(topo.adjacency[(r, c)], a_expect[r][c]);
                assert_eq!(topo.degree[(r, c)], d_expect[r][c]);
                assert_abs_diff_eq!(topo.weight[(r, c)], w_expect[r][c], epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn two_node_graph_mixes_equally() {
        let topo = build_topology(&[(1, 2)], 2, Some(2.0)).unwrap();
        assert_eq!(topo.laplacian[(0, 0)], 1.0);
        assert_eq!(topo.laplacian[(0, 1)], -1.0);
        for r in 0..2 {
            for c in 0..2 {
                assert_abs_diff_eq!(topo.weight[(r, c)], 0.5, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn triangle_graph_mixes_uniformly() {
        // L of K3 has lambda_max = 3; I - L/3 has every entry 1/3.
        let topo = build_topology(&[(1, 2), (2, 3), (1, 3)], 3, Some(3.0)).unwrap();
        for r in 0..3 {
            for c in 0..3 {
                assert_abs_diff_eq!(topo.weight[(r, c)], 1.0 / 3.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn spectral_radius_known_values() {
        // Path 1-2-3: eigenvalues of L are {0, 1, 3}.
        assert_abs_diff_eq!(spectral_radius_check(&path3(None)), 3.0, epsilon = 1e-9);
        let k2 = build_topology(&[(1, 2)], 2, None).unwrap();
        assert_abs_diff_eq!(spectral_radius_check(&k2), 2.0, epsilon = 1e-9);
        let k3 = build_topology(&[(1, 2), (2, 3), (1, 3)], 3, None).unwrap();
        assert_abs_diff_eq!(spectral_radius_check(&k3), 3.0, epsilon = 1e-9);
    }

    #[test]
    fn default_tau_is_lambda_max() {
        let topo = path3(None);
        assert_abs_diff_eq!(topo.tau, 3.0, epsilon = 1e-9);
        // Edgeless single node: lambda_max = 0, default tau falls back to 1.
        let single = build_topology(&[], 1, None).unwrap();
        assert_eq!(single.tau, 1.0);
        assert_eq!(single.weight[(0, 0)], 1.0);
    }

    #[test]
    fn disconnected_graph_is_rejected() {
        let err = build_topology(&[(1, 2)], 3, None).unwrap_err();
        assert_eq!(err, GraphError::DisconnectedGraph);
    }

    #[test]
    fn bad_tau_is_rejected() {
        // Path graph: lambda_max = 3, so tau must exceed 1.5. The exact
        // boundary is subject to eigensolver roundoff, so test either side.
        assert!(matches!(
            build_topology(&[(1, 2), (2, 3)], 3, Some(1.4)),
            Err(GraphError::BadTau { .. })
        ));
        assert!(matches!(
            build_topology(&[(1, 2), (2, 3)], 3, Some(-1.0)),
            Err(GraphError::BadTau { .. })
        ));
        assert!(build_topology(&[(1, 2), (2, 3)], 3, Some(1.6)).is_ok());
    }

    #[test]
    fn bad_edges_are_rejected() {
        assert!(matches!(
            build_topology(&[(1, 4)], 3, None),
            Err(GraphError::NodeOutOfRange(1, 4, 3))
        ));
        assert!(matches!(
            build_topology(&[(2, 2)], 3, None),
            Err(GraphError::SelfLoop(2))
        ));
    }

    #[test]
    fn laplacian_rows_sum_to_zero_exactly() {
        let topo = path3(None);
        for r in 0..3 {
            assert_eq!(topo.laplacian.row(r).sum(), 0.0);
        }
    }
}
