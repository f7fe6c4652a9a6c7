//! Per-frame dynamic geometric graphs over agent positions.
//!
//! Agents within Euclidean radius `r` of each other are connected; edge
//! weights are the distances themselves, giving a symmetric,
//! zero-diagonal adjacency matrix per frame. Agents invalid at a frame
//! are excluded from that frame's graph entirely.

use crate::error::{MftrajError, Result};
use crate::scene::{Point, TrajectoryScene};

/// Default interaction radius in meters.
pub const DEFAULT_RADIUS_M: f64 = 30.0;

/// Coincident agents would get weight 0, indistinguishable from no edge;
/// an edge within radius is floored to this weight instead.
pub const MIN_EDGE_WEIGHT: f64 = 1e-6;

/// Distance-weighted geometric graph for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ProximityGraph {
    pub frame: usize,
    /// Agent indices present and valid at this frame (0 = target).
    pub node_ids: Vec<usize>,
    pub radius_m: f64,
    adjacency: Vec<f64>,
}

impl ProximityGraph {
    pub fn node_count(&self) -> usize {
        self.node_ids.len()
    }

    /// Edge weight between two nodes, addressed by node index.
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.adjacency[i * self.node_count() + j]
    }

    /// Dense adjacency in node-index space, row-major.
    pub fn adjacency(&self) -> &[f64] {
        &self.adjacency
    }

    /// Position of an agent in this frame's node list.
    pub fn node_index_of(&self, agent: usize) -> Option<usize> {
        self.node_ids.iter().position(|&a| a == agent)
    }

    /// Adjacency with weights replaced by 1 (edge) / 0 (no edge).
    pub fn binarized(&self) -> Vec<f64> {
        self.adjacency
            .iter()
            .map(|&w| if w > 0.0 { 1.0 } else { 0.0 })
            .collect()
    }

    /// Node indices adjacent to node `i`.
    pub fn node_neighbors(&self, i: usize) -> Vec<usize> {
        (0..self.node_count())
            .filter(|&j| self.weight(i, j) > 0.0)
            .collect()
    }
}

/// Builds one frame's graph from agent positions with validity flags.
///
/// Nodes are the valid agents; an edge joins nodes whose distance is at
/// most `radius_m`, weighted by that distance (floored at
/// [`MIN_EDGE_WEIGHT`] for coincident agents).
pub fn build_graph(
    positions: &[(Point, bool)],
    frame: usize,
    radius_m: f64,
) -> Result<ProximityGraph> {
    if radius_m <= 0.0 {
        return Err(MftrajError::Input(format!(
            "radius must be positive, got {}",
            radius_m
        )));
    }
    let node_ids: Vec<usize> = positions
        .iter()
        .enumerate()
        .filter_map(|(i, (_, valid))| valid.then_some(i))
        .collect();
    if node_ids.is_empty() {
        return Err(MftrajError::Input(format!(
            "no valid positions at frame {}",
            frame
        )));
    }
    for &agent in &node_ids {
        let p = positions[agent].0;
        if !p.x.is_finite() || !p.y.is_finite() {
            return Err(MftrajError::Input(format!(
                "non-finite coordinate for agent {} at frame {}",
                agent, frame
            )));
        }
    }

    let n = node_ids.len();
    let mut adjacency = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = positions[node_ids[i]].0.distance(&positions[node_ids[j]].0);
            if d <= radius_m {
                let w = d.max(MIN_EDGE_WEIGHT);
                adjacency[i * n + j] = w;
                adjacency[j * n + i] = w;
            }
        }
    }

    Ok(ProximityGraph {
        frame,
        node_ids,
        radius_m,
        adjacency,
    })
}

/// One graph per history frame. Node sets may differ across frames as
/// agents enter and leave; node ids preserve the scene's agent indexing.
pub fn graph_series(scene: &TrajectoryScene, radius_m: f64) -> Result<Vec<ProximityGraph>> {
    (0..scene.history_len())
        .map(|frame| build_graph(&scene.positions_at(frame), frame, radius_m))
        .collect()
}

/// Debug dump of per-frame adjacencies:
/// `scene_id, frame, i, j, weight` for every nonzero entry (agent
/// indices, upper triangle).
pub fn write_adjacency_csv(
    path: impl AsRef<std::path::Path>,
    entries: &[(String, Vec<ProximityGraph>)],
) -> Result<()> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path.as_ref())?);
    writeln!(w, "scene_id,frame,i,j,weight")?;
    for (scene_id, graphs) in entries {
        for g in graphs {
            for i in 0..g.node_count() {
                for j in (i + 1)..g.node_count() {
                    let weight = g.weight(i, j);
                    if weight > 0.0 {
                        writeln!(
                            w,
                            "{},{},{},{},{}",
                            scene_id, g.frame, g.node_ids[i], g.node_ids[j], weight
                        )?;
                    }
                }
            }
        }
    }
    Ok(())
}

/// Agent indices adjacent to agent `i` in this graph.
pub fn neighbor_set(graph: &ProximityGraph, agent: usize) -> Result<Vec<usize>> {
    let node = graph.node_index_of(agent).ok_or_else(|| {
        MftrajError::Bounds(format!(
            "agent {} is not a node of the frame-{} graph",
            agent, graph.frame
        ))
    })?;
    Ok(graph
        .node_neighbors(node)
        .into_iter()
        .map(|j| graph.node_ids[j])
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all_valid(points: &[(f64, f64)]) -> Vec<(Point, bool)> {
        points.iter().map(|&(x, y)| (Point::new(x, y), true)).collect()
    }

    #[test]
    fn three_agents_radius_two() {
        // distances: 0-1 = 1, 1-2 = 4, 0-2 = 5; only (0,1) within r = 2
        let g = build_graph(&all_valid(&[(0.0, 0.0), (1.0, 0.0), (5.0, 0.0)]), 0, 2.0).unwrap();
        assert_eq!(g.weight(0, 1), 1.0);
        assert_eq!(g.weight(1, 0), 1.0);
        assert_eq!(g.weight(0, 2), 0.0);
        assert_eq!(g.weight(1, 2), 0.0);
        assert_eq!(g.weight(0, 0), 0.0);
    }

    #[test]
    fn single_agent_is_one_by_one_zero() {
        let g = build_graph(&all_valid(&[(3.0, 4.0)]), 0, 5.0).unwrap();
        assert_eq!(g.node_count(), 1);
        assert_eq!(g.adjacency(), &[0.0]);
    }

    #[test]
    fn coincident_agents_get_floored_weight() {
        let g = build_graph(&all_valid(&[(1.0, 1.0), (1.0, 1.0)]), 0, 5.0).unwrap();
        assert_eq!(g.weight(0, 1), MIN_EDGE_WEIGHT);
    }

    #[test]
    fn non_finite_coordinate_is_input_error() {
        let err = build_graph(&all_valid(&[(f64::NAN, 0.0), (1.0, 0.0)]), 0, 5.0).unwrap_err();
        assert!(matches!(err, MftrajError::Input(_)));
    }

    #[test]
    fn invalid_agents_are_excluded() {
        let positions = vec![
            (Point::new(0.0, 0.0), true),
            (Point::new(1.0, 0.0), false),
            (Point::new(2.0, 0.0), true),
        ];
        let g = build_graph(&positions, 3, 10.0).unwrap();
        assert_eq!(g.node_ids, vec![0, 2]);
        assert_eq!(g.weight(0, 1), 2.0); // distance 0 <-> 2
        assert_eq!(g.node_index_of(1), None);
    }

    #[test]
    fn neighbor_set_on_path_graph() {
        let g = build_graph(&all_valid(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)]), 0, 1.5).unwrap();
        assert_eq!(neighbor_set(&g, 1).unwrap(), vec![0, 2]);
        assert_eq!(neighbor_set(&g, 0).unwrap(), vec![1]);
    }

    #[test]
    fn neighbor_set_isolated_is_empty() {
        let g = build_graph(&all_valid(&[(0.0, 0.0), (100.0, 0.0)]), 0, 1.0).unwrap();
        assert!(neighbor_set(&g, 0).unwrap().is_empty());
    }

    #[test]
    fn neighbor_set_unknown_agent_is_bounds_error() {
        let g = build_graph(&all_valid(&[(0.0, 0.0)]), 0, 1.0).unwrap();
        assert!(matches!(neighbor_set(&g, 5), Err(MftrajError::Bounds(_))));
    }

    #[test]
    fn complete_four_node_graph() {
        let g = build_graph(
            &all_valid(&[(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)]),
            0,
            2.0,
        )
        .unwrap();
        assert_eq!(neighbor_set(&g, 0).unwrap().len(), 3);
    }

    #[test]
    fn edge_set_monotone_in_radius() {
        let pts = all_valid(&[(0.0, 0.0), (2.0, 0.0), (5.0, 1.0), (9.0, 3.0)]);
        let small = build_graph(&pts, 0, 3.0).unwrap();
        let large = build_graph(&pts, 0, 8.0).unwrap();
        for i in 0..small.node_count() {
            for j in 0..small.node_count() {
                if small.weight(i, j) > 0.0 {
                    assert!(large.weight(i, j) > 0.0);
                }
            }
        }
    }

    #[test]
    fn permutation_equivariance() {
        let pts = [(0.0, 0.0), (2.0, 1.0), (4.0, -1.0), (1.0, 3.0)];
        let g = build_graph(&all_valid(&pts), 0, 6.0).unwrap();
        let perm = [2usize, 0, 3, 1]; // permuted[i] = pts[perm[i]]
        let permuted: Vec<(f64, f64)> = perm.iter().map(|&p| pts[p]).collect();
        let gp = build_graph(&all_valid(&permuted), 0, 6.0).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(gp.weight(i, j), g.weight(perm[i], perm[j]));
            }
        }
    }
}
