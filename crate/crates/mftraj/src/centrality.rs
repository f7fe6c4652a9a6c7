//! Six per-agent centrality measures over the frame graphs.
//!
//! Degree is cumulative across the observation window (each frame adds
//! the current neighbor count). Closeness and eigenvector use the
//! distance-weighted adjacency; betweenness counts hop-count shortest
//! paths on the edge set; power and Katz are truncated walk-count series
//! on the binarized adjacency. The series truncation `K_MAX_DEFAULT` is
//! where factorial/geometric decay pushes the tail below 1e-3 of the
//! head for graphs at this scale.

use std::collections::VecDeque;

use crate::error::{MftrajError, Result};
use crate::graph::ProximityGraph;

pub const K_MAX_DEFAULT: usize = 6;
pub const KATZ_ALPHA_FRAC_DEFAULT: f64 = 0.9;
pub const KATZ_BETA_DEFAULT: f64 = 0.5;

/// Eigenvalues below this are treated as an empty spectrum.
const LAMBDA_FLOOR: f64 = 1e-9;
const POWER_ITER_TOL: f64 = 1e-10;
const POWER_ITER_MAX: usize = 500;

/// Cumulative degree series for one agent across the window.
///
/// `J^t = |N^t| + J^{t-1}` with `J` before the first frame defined as 0;
/// frames where the agent is absent contribute a neighbor count of 0, so
/// the series is non-decreasing.
pub fn degree_centrality(series: &[ProximityGraph], agent: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(series.len());
    let mut acc = 0.0;
    for graph in series {
        if let Some(node) = graph.node_index_of(agent) {
            acc += graph.node_neighbors(node).len() as f64;
        }
        out.push(acc);
    }
    out
}

/// Instantaneous per-frame neighbor count (configuration escape hatch
/// for the cumulative form above).
pub fn instantaneous_degree(series: &[ProximityGraph], agent: usize) -> Vec<f64> {
    series
        .iter()
        .map(|graph| {
            graph
                .node_index_of(agent)
                .map_or(0.0, |node| graph.node_neighbors(node).len() as f64)
        })
        .collect()
}

fn node_of(graph: &ProximityGraph, agent: usize) -> Result<usize> {
    graph.node_index_of(agent).ok_or_else(|| {
        MftrajError::Bounds(format!(
            "agent {} is not a node of the frame-{} graph",
            agent, graph.frame
        ))
    })
}

/// `(|N_i| - 1) / sum of distances to neighbors`; 0 when the agent has
/// at most one neighbor (the continuous completion of 0/d and 0/0).
pub fn closeness_centrality(graph: &ProximityGraph, agent: usize) -> Result<f64> {
    let node = node_of(graph, agent)?;
    let neighbors = graph.node_neighbors(node);
    if neighbors.len() <= 1 {
        return Ok(0.0);
    }
    let total: f64 = neighbors.iter().map(|&j| graph.weight(node, j)).sum();
    Ok((neighbors.len() as f64 - 1.0) / total)
}

/// Weighted-degree over the dominant eigenvalue: the sum of edge weights
/// at the agent divided by the largest-magnitude eigenvalue of the
/// frame's adjacency. Returns 0 on an edgeless graph.
pub fn eigenvector_centrality(graph: &ProximityGraph, agent: usize) -> Result<f64> {
    let node = node_of(graph, agent)?;
    let lambda = dominant_eigenvalue(graph.adjacency(), graph.node_count())
        .map_err(|msg| numeric_with_dump(graph, msg))?;
    if lambda < LAMBDA_FLOOR {
        return Ok(0.0);
    }
    let row_sum: f64 = (0..graph.node_count()).map(|j| graph.weight(node, j)).sum();
    Ok(row_sum / lambda)
}

/// Fraction of hop-count shortest paths passing through the agent,
/// summed over unordered node pairs that exclude it. Disconnected pairs
/// contribute 0.
pub fn betweenness_centrality(graph: &ProximityGraph, agent: usize) -> Result<f64> {
    let node = node_of(graph, agent)?;
    Ok(betweenness_all(graph)[node])
}

/// Brandes accumulation for every node of one frame graph.
pub fn betweenness_all(graph: &ProximityGraph) -> Vec<f64> {
    let n = graph.node_count();
    let adj: Vec<Vec<usize>> = (0..n).map(|i| graph.node_neighbors(i)).collect();
    let mut score = vec![0.0; n];

    for s in 0..n {
        let mut stack = Vec::with_capacity(n);
        let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut sigma = vec![0.0; n];
        let mut dist = vec![-1i64; n];
        sigma[s] = 1.0;
        dist[s] = 0;
        let mut queue = VecDeque::new();
        queue.push_back(s);
        while let Some(v) = queue.pop_front() {
            stack.push(v);
            for &w in &adj[v] {
                if dist[w] < 0 {
                    dist[w] = dist[v] + 1;
                    queue.push_back(w);
                }
                if dist[w] == dist[v] + 1 {
                    sigma[w] += sigma[v];
                    preds[w].push(v);
                }
            }
        }
        let mut delta = vec![0.0; n];
        while let Some(w) = stack.pop() {
            for &v in &preds[w] {
                delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w]);
            }
            if w != s {
                score[w] += delta[w];
            }
        }
    }

    // undirected: every unordered pair was counted from both endpoints
    for v in &mut score {
        *v /= 2.0;
    }
    score
}

/// Truncated self-returning-walk series `sum_{k=1..K} (A^k)_ii / k!`
/// on the binarized adjacency.
pub fn power_centrality(graph: &ProximityGraph, agent: usize, k_max: usize) -> Result<f64> {
    let node = node_of(graph, agent)?;
    Ok(power_all(graph, k_max)[node])
}

pub fn power_all(graph: &ProximityGraph, k_max: usize) -> Vec<f64> {
    let n = graph.node_count();
    let a = graph.binarized();
    let mut powk = a.clone(); // A^1
    let mut out = vec![0.0; n];
    let mut factorial = 1.0;
    for k in 1..=k_max {
        factorial *= k as f64;
        for i in 0..n {
            out[i] += powk[i * n + i] / factorial;
        }
        if k < k_max {
            powk = mat_mul(&powk, &a, n);
        }
    }
    out
}

/// Truncated Katz series `sum_{k=1..K} [ alpha^k * rowsum(A^k)_i + beta^k ]`
/// with `alpha = alpha_frac / lambda_max` on the binarized adjacency,
/// honoring the constraint `alpha < 1 / lambda_max`. On an edgeless
/// graph alpha is 0 and only the beta series remains.
pub fn katz_centrality(
    graph: &ProximityGraph,
    agent: usize,
    k_max: usize,
    alpha_frac: f64,
    beta: f64,
) -> Result<f64> {
    let node = node_of(graph, agent)?;
    Ok(katz_all(graph, k_max, alpha_frac, beta)?[node])
}

pub fn katz_all(
    graph: &ProximityGraph,
    k_max: usize,
    alpha_frac: f64,
    beta: f64,
) -> Result<Vec<f64>> {
    let n = graph.node_count();
    let a = graph.binarized();
    let lambda = dominant_eigenvalue(&a, n).map_err(|msg| numeric_with_dump(graph, msg))?;
    let alpha = if lambda < LAMBDA_FLOOR { 0.0 } else { alpha_frac / lambda };

    let mut out = vec![0.0; n];
    let mut powk = a.clone();
    let mut alpha_k = 1.0;
    let mut beta_k = 1.0;
    for k in 1..=k_max {
        alpha_k *= alpha;
        beta_k *= beta;
        for i in 0..n {
            let row_sum: f64 = powk[i * n..(i + 1) * n].iter().sum();
            out[i] += alpha_k * row_sum + beta_k;
        }
        if k < k_max {
            powk = mat_mul(&powk, &a, n);
        }
    }
    Ok(out)
}

/// Largest-magnitude eigenvalue of a symmetric non-negative matrix via
/// shifted power iteration. The Gershgorin shift makes the dominant
/// eigenvalue strictly separated even on bipartite spectra.
pub fn dominant_eigenvalue(matrix: &[f64], n: usize) -> std::result::Result<f64, String> {
    if n == 0 {
        return Ok(0.0);
    }
    let max_row_sum = (0..n)
        .map(|i| matrix[i * n..(i + 1) * n].iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    if max_row_sum < LAMBDA_FLOOR {
        return Ok(0.0);
    }
    let shift = 1.0 + max_row_sum;

    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let mut lambda_prev = f64::INFINITY;
    for _ in 0..POWER_ITER_MAX {
        // w = (A + shift I) v
        let mut w = vec![0.0; n];
        for i in 0..n {
            let mut acc = shift * v[i];
            let row = &matrix[i * n..(i + 1) * n];
            for (j, &aij) in row.iter().enumerate() {
                acc += aij * v[j];
            }
            w[i] = acc;
        }
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Ok(0.0);
        }
        for x in &mut w {
            *x /= norm;
        }
        // Rayleigh quotient of the shifted matrix
        let mut rq = 0.0;
        for i in 0..n {
            let row = &matrix[i * n..(i + 1) * n];
            let mut acc = shift * w[i];
            for (j, &aij) in row.iter().enumerate() {
                acc += aij * w[j];
            }
            rq += w[i] * acc;
        }
        let lambda = rq - shift;
        if (lambda - lambda_prev).abs() < POWER_ITER_TOL * lambda.abs().max(1.0) {
            return Ok(lambda.max(0.0));
        }
        lambda_prev = lambda;
        v = w;
    }
    Err(format!(
        "power iteration did not converge in {} iterations",
        POWER_ITER_MAX
    ))
}

fn numeric_with_dump(graph: &ProximityGraph, msg: String) -> MftrajError {
    MftrajError::Numeric(format!(
        "{}; frame {} adjacency ({} nodes): {:?}",
        msg,
        graph.frame,
        graph.node_count(),
        graph.adjacency()
    ))
}

fn mat_mul(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * n];
    for i in 0..n {
        for l in 0..n {
            let av = a[i * n + l];
            if av != 0.0 {
                for j in 0..n {
                    c[i * n + j] += av * b[l * n + j];
                }
            }
        }
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_graph;
    use crate::scene::Point;

    fn graph_from(points: &[(f64, f64)], r: f64) -> ProximityGraph {
        let positions: Vec<(Point, bool)> =
            points.iter().map(|&(x, y)| (Point::new(x, y), true)).collect();
        build_graph(&positions, 0, r).unwrap()
    }

    #[test]
    fn degree_accumulates_over_adjacent_frames() {
        // two agents within radius on 3 consecutive frames -> 1, 2, 3
        let g = graph_from(&[(0.0, 0.0), (1.0, 0.0)], 2.0);
        let series = vec![g.clone(), g.clone(), g];
        assert_eq!(degree_centrality(&series, 0), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn degree_of_isolated_agent_stays_zero() {
        let g = graph_from(&[(0.0, 0.0), (100.0, 0.0)], 1.0);
        let series = vec![g.clone(), g.clone(), g];
        assert_eq!(degree_centrality(&series, 0), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn degree_recursion_with_varying_counts() {
        // neighbor counts 2, 0, 1 -> cumulative 2, 2, 3
        let g2 = graph_from(&[(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)], 2.0);
        let g0 = graph_from(&[(0.0, 0.0), (50.0, 0.0), (0.0, 50.0)], 2.0);
        let g1 = graph_from(&[(0.0, 0.0), (1.0, 0.0), (0.0, 50.0)], 2.0);
        let series = vec![g2, g0, g1];
        assert_eq!(degree_centrality(&series, 0), vec![2.0, 2.0, 3.0]);
    }

    #[test]
    fn closeness_direct_substitution() {
        // neighbors at distances 1 and 2 -> (2-1)/3 = 1/3
        let g = graph_from(&[(0.0, 0.0), (1.0, 0.0), (-2.0, 0.0)], 2.5);
        let c = closeness_centrality(&g, 0).unwrap();
        assert!((c - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn closeness_degenerate_cases() {
        let isolated = graph_from(&[(0.0, 0.0), (100.0, 0.0)], 1.0);
        assert_eq!(closeness_centrality(&isolated, 0).unwrap(), 0.0);
        // one neighbor at distance 5 -> numerator (1-1) = 0
        let single = graph_from(&[(0.0, 0.0), (5.0, 0.0)], 10.0);
        assert_eq!(closeness_centrality(&single, 0).unwrap(), 0.0);
    }

    #[test]
    fn eigenvector_two_nodes_unit_distance() {
        // A = [[0,1],[1,0]]: lambda = 1, row sums = 1 -> 1.0 for both
        let g = graph_from(&[(0.0, 0.0), (1.0, 0.0)], 2.0);
        assert!((eigenvector_centrality(&g, 0).unwrap() - 1.0).abs() < 1e-9);
        assert!((eigenvector_centrality(&g, 1).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn eigenvector_empty_graph_is_zero() {
        let g = graph_from(&[(0.0, 0.0), (100.0, 0.0)], 1.0);
        assert_eq!(eigenvector_centrality(&g, 0).unwrap(), 0.0);
    }

    /// Hub at the origin with 3 leaves at unit distance, 120 degrees
    /// apart so no leaf pair is within radius.
    fn star_graph(r: f64) -> ProximityGraph {
        let h = 3.0_f64.sqrt() / 2.0;
        graph_from(&[(0.0, 0.0), (1.0, 0.0), (-0.5, h), (-0.5, -h)], r)
    }

    #[test]
    fn eigenvector_star_hub() {
        // spectrum of the star adjacency is {±sqrt(3), 0, 0}, so the hub
        // value is 3/sqrt(3)
        let g = star_graph(1.2);
        let hub = eigenvector_centrality(&g, 0).unwrap();
        assert!((hub - 3.0 / 3.0_f64.sqrt()).abs() < 1e-8, "hub {}", hub);
    }

    #[test]
    fn betweenness_path_middle_node() {
        let g = graph_from(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)], 1.5);
        assert!((betweenness_centrality(&g, 1).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(betweenness_centrality(&g, 0).unwrap(), 0.0);
    }

    #[test]
    fn betweenness_complete_graph_is_zero() {
        let g = graph_from(&[(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)], 2.0);
        for agent in 0..4 {
            assert_eq!(betweenness_centrality(&g, agent).unwrap(), 0.0);
        }
    }

    #[test]
    fn betweenness_four_cycle() {
        // unit square with radius 1.2: edges are the four sides only.
        // For node 1 the lone contributing pair is its two opposite
        // corners with two equal-length paths, one through node 1 -> 1/2.
        let g = graph_from(&[(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)], 1.2);
        assert!((betweenness_centrality(&g, 1).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn power_isolated_node_is_zero() {
        let g = graph_from(&[(0.0, 0.0), (100.0, 0.0)], 1.0);
        assert_eq!(power_centrality(&g, 0, 6).unwrap(), 0.0);
    }

    #[test]
    fn power_two_node_closed_walks() {
        // (A^k)_00 = 1 for even k: 1/2! + 1/4! + 1/6! = 391/720
        let g = graph_from(&[(0.0, 0.0), (1.0, 0.0)], 2.0);
        let expected = 1.0 / 2.0 + 1.0 / 24.0 + 1.0 / 720.0;
        assert!((power_centrality(&g, 0, 6).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn power_triangle_k2() {
        // triangle: (A^2)_ii = 2 -> 2/2! = 1
        let g = graph_from(&[(0.0, 0.0), (1.0, 0.0), (0.5, 0.8)], 1.5);
        assert!((power_centrality(&g, 0, 2).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn katz_empty_graph_is_beta_series() {
        // sum_{k=1..6} 0.5^k = 0.984375 exactly
        let g = graph_from(&[(0.0, 0.0), (100.0, 0.0)], 1.0);
        let v = katz_centrality(&g, 0, 6, 0.9, 0.5).unwrap();
        assert_eq!(v, 0.984375);
    }

    #[test]
    fn katz_two_node_series() {
        // lambda = 1, alpha = 0.9, row sums of A^k are all 1:
        // sum 0.9^k (k=1..6) = 4.217031 plus beta series 0.984375.
        let g = graph_from(&[(0.0, 0.0), (1.0, 0.0)], 2.0);
        let v = katz_centrality(&g, 0, 6, 0.9, 0.5).unwrap();
        assert!((v - 5.201406).abs() < 1e-9, "katz {}", v);
    }

    #[test]
    fn katz_zero_alpha_is_pure_beta() {
        let g = graph_from(&[(0.0, 0.0), (1.0, 0.0)], 2.0);
        let v = katz_centrality(&g, 0, 6, 0.0, 0.5).unwrap();
        assert_eq!(v, 0.984375);
    }

    #[test]
    fn dominant_eigenvalue_matches_known_spectra() {
        // 2-node unit edge: lambda = 1
        let g = graph_from(&[(0.0, 0.0), (1.0, 0.0)], 2.0);
        let l = dominant_eigenvalue(g.adjacency(), 2).unwrap();
        assert!((l - 1.0).abs() < 1e-10);
        // star with 3 unit leaves: lambda = sqrt(3)
        let s = star_graph(1.2);
        let b = s.binarized();
        let l = dominant_eigenvalue(&b, 4).unwrap();
        assert!((l - 3.0_f64.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn centralities_invariant_under_rigid_motion() {
        let pts = [(0.0, 0.0), (2.0, 1.0), (4.0, -1.0), (1.0, 3.0)];
        let (c, s) = (0.6_f64.cos(), 0.6_f64.sin());
        let moved: Vec<(f64, f64)> = pts
            .iter()
            .map(|&(x, y)| (c * x - s * y + 10.0, s * x + c * y - 7.0))
            .collect();
        let g1 = graph_from(&pts, 6.0);
        let g2 = graph_from(&moved, 6.0);
        for agent in 0..4 {
            assert!(
                (closeness_centrality(&g1, agent).unwrap()
                    - closeness_centrality(&g2, agent).unwrap())
                .abs()
                    < 1e-9
            );
            assert!(
                (eigenvector_centrality(&g1, agent).unwrap()
                    - eigenvector_centrality(&g2, agent).unwrap())
                .abs()
                    < 1e-9
            );
            assert!(
                (betweenness_centrality(&g1, agent).unwrap()
                    - betweenness_centrality(&g2, agent).unwrap())
                .abs()
                    < 1e-9
            );
        }
    }
}
