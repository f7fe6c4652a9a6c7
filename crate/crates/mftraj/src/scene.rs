//! Trajectory scene model: observation windows, frame drops, imputation.
//!
//! A scene is one prediction instance: the target vehicle's history, the
//! surrounding agents' histories with per-frame validity flags, and (for
//! training and evaluation) the target's ground-truth future. Scenes are
//! immutable after construction; every operation returns a new scene.

use crate::error::{MftrajError, Result};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// 2-D position in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// One surrounding agent's track over the scene's frame range.
///
/// Frames where the agent was not observed (entered late, left early,
/// or synthetic drops) are flagged invalid rather than removed, so all
/// tracks in a scene share the same frame indexing.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentTrack {
    pub agent_id: String,
    pub points: Vec<Point>,
    pub valid: Vec<bool>,
}

impl AgentTrack {
    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}

/// One prediction instance.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryScene {
    pub scene_id: String,
    pub sample_rate_hz: f64,
    /// Absolute frame index of `target_history[0]`; preserved so that
    /// windows cut from the same recording keep their original timing.
    pub start_frame: i64,
    pub target_id: String,
    pub target_history: Vec<Point>,
    pub agent_histories: Vec<AgentTrack>,
    /// Ground-truth future of the target; absent in inference mode.
    pub target_future: Option<Vec<Point>>,
}

impl TrajectoryScene {
    /// Number of history frames (the observation window).
    pub fn history_len(&self) -> usize {
        self.target_history.len()
    }

    /// Number of surrounding agents `n` (the target is not counted).
    pub fn agent_count(&self) -> usize {
        self.agent_histories.len()
    }

    pub fn future_len(&self) -> usize {
        self.target_future.as_ref().map_or(0, |f| f.len())
    }

    /// Timestamp of history frame `i` in seconds.
    pub fn timestamp(&self, i: usize) -> f64 {
        (self.start_frame + i as i64) as f64 / self.sample_rate_hz
    }

    /// Seconds between consecutive frames.
    pub fn frame_dt(&self) -> f64 {
        1.0 / self.sample_rate_hz
    }

    pub fn last_observed_position(&self) -> Point {
        *self.target_history.last().expect("non-empty history")
    }

    /// Positions of target (index 0) and agents at one history frame,
    /// with validity flags.
    pub fn positions_at(&self, frame: usize) -> Vec<(Point, bool)> {
        let mut out = Vec::with_capacity(1 + self.agent_histories.len());
        out.push((self.target_history[frame], true));
        for a in &self.agent_histories {
            out.push((a.points[frame], a.valid[frame]));
        }
        out
    }

    /// Structural invariants: positive rate, non-empty history, agent
    /// tracks covering the same frame range.
    pub fn validate(&self) -> Result<()> {
        if self.sample_rate_hz <= 0.0 {
            return Err(MftrajError::Timing {
                scene: self.scene_id.clone(),
                msg: format!("sample rate {} must be positive", self.sample_rate_hz),
            });
        }
        if self.target_history.is_empty() {
            return Err(MftrajError::Schema {
                scene: self.scene_id.clone(),
                msg: "empty target history".into(),
            });
        }
        for a in &self.agent_histories {
            if a.points.len() != self.target_history.len() || a.valid.len() != a.points.len() {
                return Err(MftrajError::Schema {
                    scene: self.scene_id.clone(),
                    msg: format!(
                        "agent '{}' covers {} frames, target covers {}",
                        a.agent_id,
                        a.points.len(),
                        self.target_history.len()
                    ),
                });
            }
        }
        Ok(())
    }

    /// Rigid translation of every position (histories and future).
    pub fn translated(&self, dx: f64, dy: f64) -> TrajectoryScene {
        let shift = |p: &Point| Point::new(p.x + dx, p.y + dy);
        TrajectoryScene {
            scene_id: self.scene_id.clone(),
            sample_rate_hz: self.sample_rate_hz,
            start_frame: self.start_frame,
            target_id: self.target_id.clone(),
            target_history: self.target_history.iter().map(shift).collect(),
            agent_histories: self
                .agent_histories
                .iter()
                .map(|a| AgentTrack {
                    agent_id: a.agent_id.clone(),
                    points: a.points.iter().map(shift).collect(),
                    valid: a.valid.clone(),
                })
                .collect(),
            target_future: self
                .target_future
                .as_ref()
                .map(|f| f.iter().map(shift).collect()),
        }
    }
}

/// Per-frame observation flags for the target and each agent
/// (true = observed).
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationMask {
    pub target: Vec<bool>,
    pub agents: Vec<Vec<bool>>,
}

impl ObservationMask {
    /// Fully-observed mask matching the scene's layout.
    pub fn all_observed(scene: &TrajectoryScene) -> Self {
        Self {
            target: vec![true; scene.history_len()],
            agents: scene
                .agent_histories
                .iter()
                .map(|a| vec![true; a.points.len()])
                .collect(),
        }
    }

    pub fn dropped_target_frames(&self) -> usize {
        self.target.iter().filter(|v| !**v).count()
    }
}

/// Splits a track-only scene into an observation window and a future
/// horizon. The scene must carry exactly `history + future` frames.
pub fn split_history_future(
    scene: &TrajectoryScene,
    history: usize,
    future: usize,
) -> Result<TrajectoryScene> {
    if scene.target_future.is_some() {
        return Err(MftrajError::Input(format!(
            "scene '{}' is already split",
            scene.scene_id
        )));
    }
    if scene.history_len() != history + future {
        return Err(MftrajError::Input(format!(
            "scene '{}' has {} frames, expected {} + {}",
            scene.scene_id,
            scene.history_len(),
            history,
            future
        )));
    }
    let windows = segment(scene, history, future, history + future);
    windows.into_iter().next().ok_or_else(|| {
        MftrajError::Input(format!("scene '{}' could not be windowed", scene.scene_id))
    })
}

/// Cuts sliding observation/prediction windows out of a longer track.
///
/// Each window spans `history + future` consecutive frames; window k
/// starts at frame `k * stride`. Tracks shorter than one window yield an
/// empty list. Agents are re-clipped per window and dropped when fewer
/// than two of their history frames are valid.
pub fn segment(
    scene: &TrajectoryScene,
    history: usize,
    future: usize,
    stride: usize,
) -> Vec<TrajectoryScene> {
    let window = history + future;
    let len = scene.history_len();
    if window == 0 || stride == 0 || len < window {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut start = 0;
    let mut index = 0;
    while start + window <= len {
        let hist_range = start..start + history;
        let fut_range = start + history..start + window;
        let agents: Vec<AgentTrack> = scene
            .agent_histories
            .iter()
            .filter_map(|a| {
                let track = AgentTrack {
                    agent_id: a.agent_id.clone(),
                    points: a.points[hist_range.clone()].to_vec(),
                    valid: a.valid[hist_range.clone()].to_vec(),
                };
                (track.valid_count() >= 2).then_some(track)
            })
            .collect();
        out.push(TrajectoryScene {
            scene_id: format!("{}#w{}", scene.scene_id, index),
            sample_rate_hz: scene.sample_rate_hz,
            start_frame: scene.start_frame + start as i64,
            target_id: scene.target_id.clone(),
            target_history: scene.target_history[hist_range].to_vec(),
            agent_histories: agents,
            target_future: Some(scene.target_history[fut_range].to_vec()),
        });
        start += stride;
        index += 1;
    }
    out
}

/// Flags `k` interior target-history frames as unobserved.
///
/// Frames are chosen uniformly without replacement among indices
/// `1..len-1`; the first and last frames stay observed so linear
/// imputation always brackets. Dropped coordinates are overwritten with
/// NaN so stale values cannot leak into downstream features. The result
/// is deterministic for a given seed.
pub fn drop_frames(
    scene: &TrajectoryScene,
    k: usize,
    seed: u64,
) -> Result<(TrajectoryScene, ObservationMask)> {
    drop_frames_scoped(scene, k, seed, false)
}

/// [`drop_frames`] extended to also drop `k` interior frames from every
/// surrounding agent (within each agent's own valid span).
pub fn drop_frames_scoped(
    scene: &TrajectoryScene,
    k: usize,
    seed: u64,
    all_agents: bool,
) -> Result<(TrajectoryScene, ObservationMask)> {
    let len = scene.history_len();
    if len < 2 && k > 0 {
        return Err(MftrajError::Bounds(format!(
            "cannot drop from a {}-frame history",
            len
        )));
    }
    let interior = len.saturating_sub(2);
    if k > interior {
        return Err(MftrajError::Bounds(format!(
            "drop count {} exceeds {} interior frames",
            k, interior
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dropped = scene.clone();
    let mut mask = ObservationMask::all_observed(scene);

    for &idx in &sample_without_replacement(&mut rng, 1..len - 1, k) {
        mask.target[idx] = false;
        dropped.target_history[idx] = Point::new(f64::NAN, f64::NAN);
    }

    if all_agents {
        for (a_idx, agent) in dropped.agent_histories.iter_mut().enumerate() {
            let valid_idx: Vec<usize> = (0..len).filter(|&i| agent.valid[i]).collect();
            if valid_idx.len() < 3 {
                continue;
            }
            // protect the agent's own first and last valid frames
            let candidates = &valid_idx[1..valid_idx.len() - 1];
            let take = k.min(candidates.len());
            for &pos in &sample_without_replacement(&mut rng, 0..candidates.len(), take) {
                let frame = candidates[pos];
                mask.agents[a_idx][frame] = false;
                agent.points[frame] = Point::new(f64::NAN, f64::NAN);
            }
        }
    }

    Ok((dropped, mask))
}

fn sample_without_replacement(
    rng: &mut ChaCha8Rng,
    range: std::ops::Range<usize>,
    k: usize,
) -> Vec<usize> {
    let mut pool: Vec<usize> = range.collect();
    for i in 0..k {
        let j = rng.gen_range(i..pool.len());
        pool.swap(i, j);
    }
    pool.truncate(k);
    pool
}

/// Reconstructs unobserved frames by linear interpolation between the
/// nearest observed frames on each side. Observed frames are unchanged;
/// frame count and timestamps are preserved exactly.
pub fn impute_linear(
    scene: &TrajectoryScene,
    mask: &ObservationMask,
) -> Result<TrajectoryScene> {
    let len = scene.history_len();
    if mask.target.len() != len {
        return Err(MftrajError::Input(format!(
            "mask covers {} frames, scene has {}",
            mask.target.len(),
            len
        )));
    }
    if len > 0 && (!mask.target[0] || !mask.target[len - 1]) {
        return Err(MftrajError::Input(
            "first and last target frames must be observed".into(),
        ));
    }

    let mut out = scene.clone();
    interpolate_track(&mut out.target_history, &mask.target, None);

    for (a_idx, agent) in out.agent_histories.iter_mut().enumerate() {
        if let Some(agent_mask) = mask.agents.get(a_idx) {
            // only fill frames inside the agent's valid span
            let observed: Vec<bool> = agent_mask
                .iter()
                .zip(&agent.valid)
                .map(|(m, v)| *m && *v)
                .collect();
            interpolate_track(&mut agent.points, &observed, Some(&agent.valid));
        }
    }

    Ok(out)
}

/// Fills unobserved entries bracketed by observed ones. `span`, when
/// given, restricts filling to frames flagged valid (agents keep their
/// entering/leaving gaps).
fn interpolate_track(points: &mut [Point], observed: &[bool], span: Option<&[bool]>) {
    let n = points.len();
    for i in 0..n {
        if observed[i] || span.is_some_and(|s| !s[i]) {
            continue;
        }
        let prev = (0..i).rev().find(|&j| observed[j]);
        let next = (i + 1..n).find(|&j| observed[j]);
        if let (Some(p), Some(q)) = (prev, next) {
            let w = (i - p) as f64 / (q - p) as f64;
            points[i] = Point::new(
                points[p].x + (points[q].x - points[p].x) * w,
                points[p].y + (points[q].y - points[p].y) * w,
            );
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn track_scene(n_frames: usize) -> TrajectoryScene {
        TrajectoryScene {
            scene_id: "t".into(),
            sample_rate_hz: 10.0,
            start_frame: 0,
            target_id: "veh0".into(),
            target_history: (0..n_frames)
                .map(|i| Point::new(i as f64 * 0.5, i as f64 * 0.25))
                .collect(),
            agent_histories: vec![],
            target_future: None,
        }
    }

    #[test]
    fn segment_fifty_frame_track_one_window() {
        let windows = segment(&track_scene(50), 20, 30, 50);
        assert_eq!(windows.len(), 1);
        assert_eq!(windows[0].history_len(), 20);
        assert_eq!(windows[0].future_len(), 30);
    }

    #[test]
    fn segment_track_too_short_is_empty() {
        assert!(segment(&track_scene(49), 20, 30, 50).is_empty());
    }

    #[test]
    fn segment_windows_do_not_mix_observation_and_prediction() {
        let windows = segment(&track_scene(100), 20, 30, 25);
        for w in &windows {
            let last_hist = *w.target_history.last().unwrap();
            let first_fut = w.target_future.as_ref().unwrap()[0];
            // consecutive frames of the same underlying track
            assert!((first_fut.x - last_hist.x - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn drop_zero_frames_keeps_mask_true() {
        let scene = track_scene(20);
        let (dropped, mask) = drop_frames(&scene, 0, 7).unwrap();
        assert!(mask.target.iter().all(|v| *v));
        assert_eq!(dropped.target_history, scene.target_history);
    }

    #[test]
    fn drop_three_of_twenty_protects_ends() {
        let scene = track_scene(20);
        let (_, mask) = drop_frames(&scene, 3, 7).unwrap();
        assert_eq!(mask.dropped_target_frames(), 3);
        assert!(mask.target[0] && mask.target[19]);
    }

    #[test]
    fn drop_is_deterministic_under_seed() {
        let scene = track_scene(20);
        let (_, m1) = drop_frames(&scene, 5, 42).unwrap();
        let (_, m2) = drop_frames(&scene, 5, 42).unwrap();
        assert_eq!(m1, m2);
    }

    #[test]
    fn drop_too_many_is_bounds_error() {
        let scene = track_scene(20);
        assert!(matches!(
            drop_frames(&scene, 19, 0),
            Err(MftrajError::Bounds(_))
        ));
    }

    #[test]
    fn impute_midpoint() {
        let mut scene = track_scene(3);
        scene.target_history = vec![
            Point::new(0.0, 0.0),
            Point::new(999.0, 999.0),
            Point::new(2.0, 2.0),
        ];
        let mask = ObservationMask {
            target: vec![true, false, true],
            agents: vec![],
        };
        let imputed = impute_linear(&scene, &mask).unwrap();
        assert_eq!(imputed.target_history[1], Point::new(1.0, 1.0));
    }

    #[test]
    fn impute_two_gap_linear() {
        let mut scene = track_scene(4);
        scene.target_history = vec![
            Point::new(0.0, 0.0),
            Point::new(f64::NAN, f64::NAN),
            Point::new(f64::NAN, f64::NAN),
            Point::new(3.0, 0.0),
        ];
        let mask = ObservationMask {
            target: vec![true, false, false, true],
            agents: vec![],
        };
        let imputed = impute_linear(&scene, &mask).unwrap();
        assert_eq!(imputed.target_history[1], Point::new(1.0, 0.0));
        assert_eq!(imputed.target_history[2], Point::new(2.0, 0.0));
    }

    #[test]
    fn impute_without_gaps_is_identity() {
        let scene = track_scene(10);
        let mask = ObservationMask::all_observed(&scene);
        let imputed = impute_linear(&scene, &mask).unwrap();
        assert_eq!(imputed.target_history, scene.target_history);
    }

    #[test]
    fn drop_then_impute_reconstructs_affine_exactly() {
        // x = 0.5 * frame, y = 0.25 * frame: dyadic values interpolate
        // with no rounding at all.
        let scene = track_scene(20);
        for k in [3usize, 5, 8, 10] {
            for seed in 0..20u64 {
                let (dropped, mask) = drop_frames(&scene, k, seed).unwrap();
                let imputed = impute_linear(&dropped, &mask).unwrap();
                assert_eq!(imputed.target_history, scene.target_history);
            }
        }
    }

    #[test]
    fn drop_then_impute_preserves_frame_count() {
        let scene = track_scene(20);
        let (dropped, mask) = drop_frames(&scene, 6, 3).unwrap();
        let imputed = impute_linear(&dropped, &mask).unwrap();
        assert_eq!(imputed.history_len(), scene.history_len());
        for i in 0..scene.history_len() {
            assert_eq!(imputed.timestamp(i), scene.timestamp(i));
        }
    }
}
