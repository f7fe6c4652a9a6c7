//! Synthetic traffic scenarios for desk-scale training and evaluation.
//!
//! Four kinematically smooth scenario kinds with seeded randomization:
//! straight driving, lane changes (lateral sigmoid), car following
//! (follower speed coupled to the leader gap), and merges. Positions get
//! additive Gaussian noise with configurable sigma (default 0.05 m);
//! generation is deterministic for a given spec and seed.

use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{MftrajError, Result};
use crate::rng::{next_normal, rng_for_indexed};
use crate::scene::{AgentTrack, Point, TrajectoryScene};

pub const DEFAULT_NOISE_STD: f64 = 0.05;
pub const LANE_WIDTH_M: f64 = 3.5;
/// Sigmoid steepness (1/s) for lane-change and merge maneuvers. At 4.0
/// the lateral offset settles to within 2e-4 of its amplitude over a
/// 5-second window centered on the maneuver.
pub const LANE_CHANGE_STEEPNESS: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioKind {
    ConstantVelocity,
    LaneChange,
    CarFollow,
    Merge,
}

impl ScenarioKind {
    pub fn name(&self) -> &'static str {
        match self {
            ScenarioKind::ConstantVelocity => "constant_velocity",
            ScenarioKind::LaneChange => "lane_change",
            ScenarioKind::CarFollow => "car_follow",
            ScenarioKind::Merge => "merge",
        }
    }
}

impl FromStr for ScenarioKind {
    type Err = MftrajError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant_velocity" => Ok(ScenarioKind::ConstantVelocity),
            "lane_change" => Ok(ScenarioKind::LaneChange),
            "car_follow" => Ok(ScenarioKind::CarFollow),
            "merge" => Ok(ScenarioKind::Merge),
            other => Err(MftrajError::Config(format!(
                "unknown scenario kind '{}' (expected constant_velocity, lane_change, car_follow, or merge)",
                other
            ))),
        }
    }
}

/// Generation request: kind, counts, and the root seed.
#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub kind: ScenarioKind,
    pub scenes: usize,
    pub frames: usize,
    pub sample_rate_hz: f64,
    pub noise_std: f64,
    pub seed: u64,
}

// ---- deterministic track primitives ----------------------------------------

/// Straight track at constant velocity.
pub fn constant_velocity_track(
    start: Point,
    velocity: (f64, f64),
    rate_hz: f64,
    frames: usize,
) -> Vec<Point> {
    (0..frames)
        .map(|i| {
            let t = i as f64 / rate_hz;
            Point::new(start.x + velocity.0 * t, start.y + velocity.1 * t)
        })
        .collect()
}

/// Forward motion at constant speed plus a lateral sigmoid offset of the
/// given amplitude centered at `center_s`.
pub fn lane_change_track(
    start: Point,
    speed: f64,
    amplitude: f64,
    center_s: f64,
    rate_hz: f64,
    frames: usize,
) -> Vec<Point> {
    (0..frames)
        .map(|i| {
            let t = i as f64 / rate_hz;
            let lateral = amplitude / (1.0 + (-LANE_CHANGE_STEEPNESS * (t - center_s)).exp());
            Point::new(start.x + speed * t, start.y + lateral)
        })
        .collect()
}

/// Leader/follower pair: the follower accelerates toward a desired gap
/// behind the leader. Returns (leader, follower) tracks.
pub fn car_follow_tracks(
    leader_start: Point,
    leader_speed: f64,
    follower_gap: f64,
    desired_gap: f64,
    rate_hz: f64,
    frames: usize,
) -> (Vec<Point>, Vec<Point>) {
    let dt = 1.0 / rate_hz;
    let mut leader = Vec::with_capacity(frames);
    let mut follower = Vec::with_capacity(frames);
    let mut lx = leader_start.x;
    let mut fx = leader_start.x - follower_gap;
    let mut fv = leader_speed;
    const KP: f64 = 0.6; // gap gain (1/s^2)
    const KD: f64 = 1.2; // closing-speed gain (1/s)
    for _ in 0..frames {
        leader.push(Point::new(lx, leader_start.y));
        follower.push(Point::new(fx, leader_start.y));
        let gap = lx - fx;
        let accel = (KP * (gap - desired_gap) + KD * (leader_speed - fv)).clamp(-4.0, 3.0);
        fv += accel * dt;
        fx += fv * dt;
        lx += leader_speed * dt;
    }
    (leader, follower)
}

// ---- scene assembly ---------------------------------------------------------

/// Generates the requested scenes. The target is always track index 0;
/// surrounding agents are fully observed over the window. Scenes come
/// out unsplit (all frames are history); split them downstream.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<TrajectoryScene>> {
    if spec.sample_rate_hz <= 0.0 {
        return Err(MftrajError::Config("sample rate must be positive".into()));
    }
    if spec.frames < 2 && spec.scenes > 0 {
        return Err(MftrajError::Config("need at least 2 frames per scene".into()));
    }
    (0..spec.scenes)
        .map(|i| {
            let mut rng = rng_for_indexed(spec.seed, "synthetic", i as u64);
            let (target, agents) = build_tracks(spec, &mut rng);
            let mut scene = TrajectoryScene {
                scene_id: format!("{}-{:05}", spec.kind.name(), i),
                sample_rate_hz: spec.sample_rate_hz,
                start_frame: 0,
                target_id: "veh0".into(),
                target_history: target,
                agent_histories: agents
                    .into_iter()
                    .enumerate()
                    .map(|(k, points)| {
                        let n = points.len();
                        AgentTrack {
                            agent_id: format!("veh{}", k + 1),
                            points,
                            valid: vec![true; n],
                        }
                    })
                    .collect(),
                target_future: None,
            };
            apply_noise(&mut scene, spec.noise_std, &mut rng);
            Ok(scene)
        })
        .collect()
}

fn build_tracks(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> (Vec<Point>, Vec<Vec<Point>>) {
    let rate = spec.sample_rate_hz;
    let frames = spec.frames;
    let duration = frames as f64 / rate;
    let speed = rng.gen_range(8.0..14.0);
    let x0 = rng.gen_range(-5.0..5.0);

    match spec.kind {
        ScenarioKind::ConstantVelocity => {
            let heading: f64 = rng.gen_range(-0.05..0.05);
            let target = constant_velocity_track(
                Point::new(x0, 0.0),
                (speed * heading.cos(), speed * heading.sin()),
                rate,
                frames,
            );
            let ahead = constant_velocity_track(
                Point::new(x0 + rng.gen_range(10.0..20.0), 0.0),
                (speed * rng.gen_range(0.9..1.1), 0.0),
                rate,
                frames,
            );
            let side = constant_velocity_track(
                Point::new(x0 + rng.gen_range(-8.0..8.0), LANE_WIDTH_M),
                (speed * rng.gen_range(0.9..1.1), 0.0),
                rate,
                frames,
            );
            (target, vec![ahead, side])
        }
        ScenarioKind::LaneChange => {
            let dir = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let center = duration * rng.gen_range(0.4..0.6);
            let target = lane_change_track(
                Point::new(x0, 0.0),
                speed,
                dir * LANE_WIDTH_M,
                center,
                rate,
                frames,
            );
            // a car ahead in the origin lane motivates the maneuver
            let ahead = constant_velocity_track(
                Point::new(x0 + rng.gen_range(8.0..14.0), 0.0),
                (speed * rng.gen_range(0.6..0.8), 0.0),
                rate,
                frames,
            );
            let dest_lane = constant_velocity_track(
                Point::new(x0 - rng.gen_range(5.0..15.0), dir * LANE_WIDTH_M),
                (speed * rng.gen_range(0.9..1.05), 0.0),
                rate,
                frames,
            );
            (target, vec![ahead, dest_lane])
        }
        ScenarioKind::CarFollow => {
            let gap0 = rng.gen_range(6.0..18.0);
            let (leader, follower) = car_follow_tracks(
                Point::new(x0 + gap0, 0.0),
                speed,
                gap0,
                10.0,
                rate,
                frames,
            );
            let side = constant_velocity_track(
                Point::new(x0 + rng.gen_range(-10.0..10.0), -LANE_WIDTH_M),
                (speed * rng.gen_range(0.9..1.1), 0.0),
                rate,
                frames,
            );
            (follower, vec![leader, side])
        }
        ScenarioKind::Merge => {
            let center = duration * rng.gen_range(0.35..0.55);
            // target merges from the ramp lane into the main lane
            let target = lane_change_track(
                Point::new(x0, -LANE_WIDTH_M),
                speed,
                LANE_WIDTH_M,
                center,
                rate,
                frames,
            );
            let main_ahead = constant_velocity_track(
                Point::new(x0 + rng.gen_range(12.0..20.0), 0.0),
                (speed * rng.gen_range(0.95..1.1), 0.0),
                rate,
                frames,
            );
            let main_behind = constant_velocity_track(
                Point::new(x0 - rng.gen_range(8.0..16.0), 0.0),
                (speed * rng.gen_range(0.9..1.05), 0.0),
                rate,
                frames,
            );
            (target, vec![main_ahead, main_behind])
        }
    }
}

fn apply_noise(scene: &mut TrajectoryScene, std: f64, rng: &mut ChaCha8Rng) {
    if std <= 0.0 {
        return;
    }
    let mut jitter = |points: &mut Vec<Point>| {
        for p in points {
            p.x += std * next_normal(rng);
            p.y += std * next_normal(rng);
        }
    };
    jitter(&mut scene.target_history);
    for a in &mut scene.agent_histories {
        jitter(&mut a.points);
    }
}
