//! Behavior criteria and the per-agent behavior feature tensor.
//!
//! For every agent and frame, six centrality measures are reduced to
//! three 6-vectors: magnitudes (BMI), first-difference rates (BTI), and
//! second-difference curvatures (BCI), stacked into an 18-wide feature
//! row. Differences are backward in time and zero-padded at the window
//! start. Features are standardized per column with statistics collected
//! over the training split before entering the behavior encoder.

use crate::centrality::{
    betweenness_all, closeness_centrality, degree_centrality, eigenvector_centrality,
    instantaneous_degree, katz_all, power_all, K_MAX_DEFAULT, KATZ_ALPHA_FRAC_DEFAULT,
    KATZ_BETA_DEFAULT,
};
use crate::error::Result;
use crate::graph::{graph_series, ProximityGraph};
use crate::scene::TrajectoryScene;

pub const CENTRALITY_DIM: usize = 6;
pub const BEHAVIOR_DIM: usize = 3 * CENTRALITY_DIM;

/// The six per-frame centrality values for one agent.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CentralityVector {
    pub degree: f64,
    pub closeness: f64,
    pub eigenvector: f64,
    pub betweenness: f64,
    pub power: f64,
    pub katz: f64,
}

impl CentralityVector {
    pub fn as_array(&self) -> [f64; CENTRALITY_DIM] {
        [
            self.degree,
            self.closeness,
            self.eigenvector,
            self.betweenness,
            self.power,
            self.katz,
        ]
    }
}

/// Knobs for the centrality computation.
#[derive(Debug, Clone)]
pub struct BehaviorConfig {
    pub k_max: usize,
    pub katz_alpha_frac: f64,
    pub katz_beta: f64,
    /// Use the per-frame neighbor count instead of the cumulative
    /// degree recursion.
    pub instantaneous_degree: bool,
}

impl Default for BehaviorConfig {
    fn default() -> Self {
        Self {
            k_max: K_MAX_DEFAULT,
            katz_alpha_frac: KATZ_ALPHA_FRAC_DEFAULT,
            katz_beta: KATZ_BETA_DEFAULT,
            instantaneous_degree: false,
        }
    }
}

/// Centrality series for one agent across the window's graphs.
///
/// Degree follows its cumulative recursion through absent frames; the
/// other five measures are zero on frames where the agent is absent.
pub fn centrality_series(
    graphs: &[ProximityGraph],
    agent: usize,
    cfg: &BehaviorConfig,
) -> Result<Vec<CentralityVector>> {
    let degree = if cfg.instantaneous_degree {
        instantaneous_degree(graphs, agent)
    } else {
        degree_centrality(graphs, agent)
    };

    let mut out = Vec::with_capacity(graphs.len());
    for (t, graph) in graphs.iter().enumerate() {
        let mut v = CentralityVector {
            degree: degree[t],
            ..Default::default()
        };
        if let Some(node) = graph.node_index_of(agent) {
            v.closeness = closeness_centrality(graph, agent)?;
            v.eigenvector = eigenvector_centrality(graph, agent)?;
            v.betweenness = betweenness_all(graph)[node];
            v.power = power_all(graph, cfg.k_max)[node];
            v.katz = katz_all(graph, cfg.k_max, cfg.katz_alpha_frac, cfg.katz_beta)?[node];
        }
        out.push(v);
    }
    Ok(out)
}

/// BMI/BTI/BCI rows for one agent: `|J|`, `|dJ|/dt`, `|d2J|/dt^2` by
/// backward differences, zero-padded on the first one and two frames.
pub fn behavior_criteria(series: &[CentralityVector], dt: f64) -> Vec<[f64; BEHAVIOR_DIM]> {
    let rows: Vec<[f64; CENTRALITY_DIM]> = series.iter().map(|v| v.as_array()).collect();
    let mut out = Vec::with_capacity(rows.len());
    for t in 0..rows.len() {
        let mut feat = [0.0; BEHAVIOR_DIM];
        for c in 0..CENTRALITY_DIM {
            feat[c] = rows[t][c].abs();
            if t >= 1 {
                feat[CENTRALITY_DIM + c] = ((rows[t][c] - rows[t - 1][c]) / dt).abs();
            }
            if t >= 2 {
                feat[2 * CENTRALITY_DIM + c] =
                    ((rows[t][c] - 2.0 * rows[t - 1][c] + rows[t - 2][c]) / (dt * dt)).abs();
            }
        }
        out.push(feat);
    }
    out
}

/// Raw (unstandardized) behavior feature tensor
/// `[agents, frames, 18]`; row 0 is the target. Agents absent from a
/// frame get a zero row at that frame.
#[derive(Debug, Clone, PartialEq)]
pub struct BehaviorTensor {
    pub agents: usize,
    pub frames: usize,
    data: Vec<f64>,
}

impl BehaviorTensor {
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, agent: usize, frame: usize) -> &[f64] {
        let base = (agent * self.frames + frame) * BEHAVIOR_DIM;
        &self.data[base..base + BEHAVIOR_DIM]
    }
}

pub fn behavior_tensor(
    scene: &TrajectoryScene,
    radius_m: f64,
    cfg: &BehaviorConfig,
) -> Result<BehaviorTensor> {
    let graphs = graph_series(scene, radius_m)?;
    let agents = scene.agent_count() + 1;
    let frames = scene.history_len();
    let dt = scene.frame_dt();
    let mut data = vec![0.0; agents * frames * BEHAVIOR_DIM];

    for agent in 0..agents {
        let series = centrality_series(&graphs, agent, cfg)?;
        let rows = behavior_criteria(&series, dt);
        for (t, row) in rows.iter().enumerate() {
            // absent agents contribute zero rows, whatever the running
            // degree recursion says
            let present = agent == 0 || scene.agent_histories[agent - 1].valid[t];
            if present {
                let base = (agent * frames + t) * BEHAVIOR_DIM;
                data[base..base + BEHAVIOR_DIM].copy_from_slice(row);
            }
        }
    }

    Ok(BehaviorTensor { agents, frames, data })
}

/// Per-feature zero-mean / unit-variance transform.
///
/// Statistics are collected once over the training split and then frozen
/// (they ship inside the checkpoint); without this the cumulative degree
/// feature grows without bound over the window.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: [f64; BEHAVIOR_DIM],
    pub std: [f64; BEHAVIOR_DIM],
}

impl Default for Standardizer {
    fn default() -> Self {
        Self::identity()
    }
}

impl Standardizer {
    pub fn identity() -> Self {
        Self {
            mean: [0.0; BEHAVIOR_DIM],
            std: [1.0; BEHAVIOR_DIM],
        }
    }

    /// Single-pass fit over every agent-frame row of the given tensors.
    pub fn fit(tensors: &[BehaviorTensor]) -> Self {
        let mut count = 0.0;
        let mut mean = [0.0; BEHAVIOR_DIM];
        let mut m2 = [0.0; BEHAVIOR_DIM];
        for t in tensors {
            for row in t.data.chunks(BEHAVIOR_DIM) {
                count += 1.0;
                for (c, &v) in row.iter().enumerate() {
                    let delta = v - mean[c];
                    mean[c] += delta / count;
                    m2[c] += delta * (v - mean[c]);
                }
            }
        }
        let mut std = [1.0; BEHAVIOR_DIM];
        if count > 1.0 {
            for c in 0..BEHAVIOR_DIM {
                // constant features standardize to zero; floor keeps the
                // division well-defined
                std[c] = (m2[c] / count).sqrt().max(1e-8);
            }
        }
        Self { mean, std }
    }

    pub fn apply(&self, tensor: &BehaviorTensor) -> BehaviorTensor {
        let mut out = tensor.clone();
        for row in out.data.chunks_mut(BEHAVIOR_DIM) {
            for (c, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean[c]) / self.std[c];
            }
        }
        out
    }
}

/// Writes tensors as CSV for inspection: one row per agent-frame with
/// the 18 feature columns.
pub fn write_feature_csv(
    path: impl AsRef<std::path::Path>,
    entries: &[(String, BehaviorTensor)],
) -> Result<()> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path.as_ref())?);
    write!(w, "scene_id,agent,frame")?;
    for kind in ["bmi", "bti", "bci"] {
        for name in ["degree", "closeness", "eigenvector", "betweenness", "power", "katz"] {
            write!(w, ",{}_{}", kind, name)?;
        }
    }
    writeln!(w)?;
    for (scene_id, tensor) in entries {
        for agent in 0..tensor.agents {
            for frame in 0..tensor.frames {
                write!(w, "{},{},{}", scene_id, agent, frame)?;
                for v in tensor.row(agent, frame) {
                    write!(w, ",{}", v)?;
                }
                writeln!(w)?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{AgentTrack, Point};

    fn constant_vec(value: f64) -> CentralityVector {
        CentralityVector {
            degree: value,
            closeness: value,
            eigenvector: value,
            betweenness: value,
            power: value,
            katz: value,
        }
    }

    #[test]
    fn criteria_of_constant_series() {
        let series = vec![constant_vec(5.0); 4];
        let rows = behavior_criteria(&series, 1.0);
        for row in &rows {
            for c in 0..CENTRALITY_DIM {
                assert_eq!(row[c], 5.0);
                assert_eq!(row[CENTRALITY_DIM + c], 0.0);
                assert_eq!(row[2 * CENTRALITY_DIM + c], 0.0);
            }
        }
    }

    #[test]
    fn criteria_of_linear_ramp() {
        // J(t) = 2t: gradient 2 from t >= 1, curvature 0 from t >= 2
        let series: Vec<CentralityVector> =
            (0..5).map(|t| constant_vec(2.0 * t as f64)).collect();
        let rows = behavior_criteria(&series, 1.0);
        for (t, row) in rows.iter().enumerate() {
            if t >= 1 {
                assert_eq!(row[CENTRALITY_DIM], 2.0);
            }
            if t >= 2 {
                assert_eq!(row[2 * CENTRALITY_DIM], 0.0);
            }
        }
    }

    #[test]
    fn criteria_of_quadratic() {
        // J(t) = t^2: second backward difference is exactly 2 from t >= 2
        let series: Vec<CentralityVector> =
            (0..6).map(|t| constant_vec((t * t) as f64)).collect();
        let rows = behavior_criteria(&series, 1.0);
        for (t, row) in rows.iter().enumerate().skip(2) {
            let _ = t;
            assert_eq!(row[2 * CENTRALITY_DIM], 2.0);
        }
    }

    fn two_agent_scene() -> TrajectoryScene {
        let frames = 20;
        TrajectoryScene {
            scene_id: "b".into(),
            sample_rate_hz: 10.0,
            start_frame: 0,
            target_id: "veh0".into(),
            target_history: (0..frames).map(|i| Point::new(i as f64, 0.0)).collect(),
            agent_histories: vec![
                AgentTrack {
                    agent_id: "veh1".into(),
                    points: (0..frames).map(|i| Point::new(i as f64, 3.0)).collect(),
                    valid: vec![true; frames],
                },
                AgentTrack {
                    agent_id: "veh2".into(),
                    points: (0..frames).map(|i| Point::new(i as f64, -3.0)).collect(),
                    valid: vec![true; frames],
                },
            ],
            target_future: None,
        }
    }

    #[test]
    fn tensor_shape_contract() {
        let scene = two_agent_scene();
        let t = behavior_tensor(&scene, 30.0, &BehaviorConfig::default()).unwrap();
        assert_eq!(t.agents, 3);
        assert_eq!(t.frames, 20);
        assert_eq!(t.data().len(), 3 * 20 * BEHAVIOR_DIM);
    }

    #[test]
    fn permuting_agents_permutes_rows() {
        let scene = two_agent_scene();
        let mut swapped = scene.clone();
        swapped.agent_histories.swap(0, 1);
        let t1 = behavior_tensor(&scene, 30.0, &BehaviorConfig::default()).unwrap();
        let t2 = behavior_tensor(&swapped, 30.0, &BehaviorConfig::default()).unwrap();
        assert_eq!(t1.row(0, 5), t2.row(0, 5)); // target row unchanged
        assert_eq!(t1.row(1, 5), t2.row(2, 5));
        assert_eq!(t1.row(2, 5), t2.row(1, 5));
    }

    #[test]
    fn absent_frames_get_zero_rows() {
        let mut scene = two_agent_scene();
        scene.agent_histories[0].valid[3] = false;
        let t = behavior_tensor(&scene, 30.0, &BehaviorConfig::default()).unwrap();
        assert!(t.row(1, 3).iter().all(|&v| v == 0.0));
        assert!(t.row(1, 4).iter().any(|&v| v != 0.0));
    }

    #[test]
    fn target_only_static_scene_standardizes_to_zero() {
        let scene = TrajectoryScene {
            scene_id: "solo".into(),
            sample_rate_hz: 10.0,
            start_frame: 0,
            target_id: "veh0".into(),
            target_history: vec![Point::new(1.0, 2.0); 10],
            agent_histories: vec![],
            target_future: None,
        };
        let raw = behavior_tensor(&scene, 30.0, &BehaviorConfig::default()).unwrap();
        let std = Standardizer::fit(std::slice::from_ref(&raw));
        let out = std.apply(&raw);
        // every feature is constant over the window, so the standardized
        // tensor is exactly zero
        assert!(out.data().iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn degree_series_is_non_decreasing() {
        let scene = two_agent_scene();
        let graphs = graph_series(&scene, 30.0).unwrap();
        for agent in 0..3 {
            let d = degree_centrality(&graphs, agent);
            for w in d.windows(2) {
                assert!(w[1] >= w[0]);
            }
        }
    }
}
