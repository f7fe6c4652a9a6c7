//! Scene CSV ingestion and serialization.
//!
//! The canonical interchange format is a headered CSV with columns
//! `scene_id, frame, agent_id, role (target|agent), x, y`, positions in
//! meters. Exactly one agent per scene is marked `target`. Floats are
//! written with shortest round-trip precision, so save -> load -> save
//! is byte-stable.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{MftrajError, Result};
use crate::scene::{AgentTrack, ObservationMask, Point, TrajectoryScene};

/// Column-name mapping for scene CSV files.
#[derive(Debug, Clone)]
pub struct CsvSchema {
    pub scene_id: String,
    pub frame: String,
    pub agent_id: String,
    pub role: String,
    pub x: String,
    pub y: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            scene_id: "scene_id".into(),
            frame: "frame".into(),
            agent_id: "agent_id".into(),
            role: "role".into(),
            x: "x".into(),
            y: "y".into(),
        }
    }
}

struct RawRow {
    line: usize,
    frame: i64,
    agent_id: String,
    is_target: bool,
    x: f64,
    y: f64,
}

/// Loads scenes from a CSV file.
///
/// Rows are grouped by scene, frames sorted, and each scene's frame
/// range is fixed by its target track, which must have one row per frame
/// (uniform spacing). Agents are clipped to that range with validity
/// flags; agents with fewer than two valid frames are excluded. Scene
/// order follows first appearance in the file. The loaded track is all
/// history; use [`crate::scene::segment`] or
/// [`crate::scene::split_history_future`] to produce prediction windows.
pub fn load_scenes(
    path: impl AsRef<Path>,
    schema: &CsvSchema,
    sample_rate_hz: f64,
) -> Result<Vec<TrajectoryScene>> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| MftrajError::Input(format!("cannot open {}: {}", path.display(), e)))?;

    let headers = reader.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| MftrajError::Config(format!("column '{}' not found in {}", name, path.display())))
    };
    let c_scene = col(&schema.scene_id)?;
    let c_frame = col(&schema.frame)?;
    let c_agent = col(&schema.agent_id)?;
    let c_role = col(&schema.role)?;
    let c_x = col(&schema.x)?;
    let c_y = col(&schema.y)?;

    // scene id -> rows, preserving first-appearance order
    let mut order: Vec<String> = Vec::new();
    let mut rows_by_scene: std::collections::HashMap<String, Vec<RawRow>> =
        std::collections::HashMap::new();

    for record in reader.records() {
        let record = record?;
        let line = record
            .position()
            .map(|p| p.line() as usize)
            .unwrap_or(0);
        let field = |idx: usize| -> Result<&str> {
            record.get(idx).ok_or_else(|| MftrajError::Parse {
                line,
                msg: format!("missing field {}", idx),
            })
        };
        let parse_f = |idx: usize, name: &str| -> Result<f64> {
            field(idx)?.trim().parse::<f64>().map_err(|e| MftrajError::Parse {
                line,
                msg: format!("bad {} value '{}': {}", name, record.get(idx).unwrap_or(""), e),
            })
        };
        let scene_id = field(c_scene)?.to_string();
        let frame = field(c_frame)?.trim().parse::<i64>().map_err(|e| MftrajError::Parse {
            line,
            msg: format!("bad frame value '{}': {}", record.get(c_frame).unwrap_or(""), e),
        })?;
        let agent_id = field(c_agent)?.to_string();
        let is_target = match field(c_role)?.trim() {
            "target" => true,
            "agent" => false,
            other => {
                return Err(MftrajError::Parse {
                    line,
                    msg: format!("role must be 'target' or 'agent', got '{}'", other),
                })
            }
        };
        let x = parse_f(c_x, "x")?;
        let y = parse_f(c_y, "y")?;

        if !rows_by_scene.contains_key(&scene_id) {
            order.push(scene_id.clone());
        }
        rows_by_scene.entry(scene_id).or_default().push(RawRow {
            line,
            frame,
            agent_id,
            is_target,
            x,
            y,
        });
    }

    let mut scenes = Vec::with_capacity(order.len());
    for scene_id in order {
        let rows = rows_by_scene.remove(&scene_id).expect("scene present");
        scenes.push(assemble_scene(scene_id, rows, sample_rate_hz)?);
    }
    Ok(scenes)
}

fn assemble_scene(
    scene_id: String,
    rows: Vec<RawRow>,
    sample_rate_hz: f64,
) -> Result<TrajectoryScene> {
    let mut seen: HashSet<(String, i64)> = HashSet::new();
    for r in &rows {
        if !seen.insert((r.agent_id.clone(), r.frame)) {
            return Err(MftrajError::Parse {
                line: r.line,
                msg: format!(
                    "duplicate row for scene '{}', agent '{}', frame {}",
                    scene_id, r.agent_id, r.frame
                ),
            });
        }
    }

    let target_ids: HashSet<&str> = rows
        .iter()
        .filter(|r| r.is_target)
        .map(|r| r.agent_id.as_str())
        .collect();
    let target_id = match target_ids.len() {
        0 => {
            return Err(MftrajError::Schema {
                scene: scene_id,
                msg: "no agent marked as target".into(),
            })
        }
        1 => target_ids.into_iter().next().unwrap().to_string(),
        n => {
            return Err(MftrajError::Schema {
                scene: scene_id,
                msg: format!("{} agents marked as target, expected exactly one", n),
            })
        }
    };

    let mut target_rows: Vec<&RawRow> = rows.iter().filter(|r| r.agent_id == target_id).collect();
    target_rows.sort_by_key(|r| r.frame);
    let start_frame = target_rows.first().unwrap().frame;
    let end_frame = target_rows.last().unwrap().frame;
    let len = (end_frame - start_frame + 1) as usize;
    if target_rows.len() != len {
        return Err(MftrajError::Timing {
            scene: scene_id,
            msg: format!(
                "target covers frames {}..={} but has {} rows (non-uniform spacing)",
                start_frame,
                end_frame,
                target_rows.len()
            ),
        });
    }
    let target_history: Vec<Point> = target_rows.iter().map(|r| Point::new(r.x, r.y)).collect();

    // agents keyed in first-appearance order
    let mut agent_order: Vec<String> = Vec::new();
    for r in &rows {
        if r.agent_id != target_id && !agent_order.contains(&r.agent_id) {
            agent_order.push(r.agent_id.clone());
        }
    }

    let mut agent_histories = Vec::new();
    for aid in agent_order {
        let mut points = vec![Point::new(0.0, 0.0); len];
        let mut valid = vec![false; len];
        for r in rows.iter().filter(|r| r.agent_id == aid) {
            if r.frame < start_frame || r.frame > end_frame {
                continue; // outside the target's window
            }
            let i = (r.frame - start_frame) as usize;
            points[i] = Point::new(r.x, r.y);
            valid[i] = true;
        }
        let track = AgentTrack { agent_id: aid, points, valid };
        if track.valid_count() >= 2 {
            agent_histories.push(track);
        }
    }

    let scene = TrajectoryScene {
        scene_id,
        sample_rate_hz,
        start_frame,
        target_id,
        target_history,
        agent_histories,
        target_future: None,
    };
    scene.validate()?;
    Ok(scene)
}

/// Serializes scenes back to the canonical CSV layout.
///
/// A split scene's future frames are written as continued target rows,
/// so the file reloads as one continuous track.
pub fn save_scenes(path: impl AsRef<Path>, scenes: &[TrajectoryScene]) -> Result<()> {
    let file = File::create(path.as_ref())?;
    let mut w = BufWriter::new(file);
    writeln!(w, "scene_id,frame,agent_id,role,x,y")?;
    for scene in scenes {
        for (i, p) in scene.target_history.iter().enumerate() {
            let frame = scene.start_frame + i as i64;
            writeln!(
                w,
                "{},{},{},target,{},{}",
                scene.scene_id, frame, scene.target_id, p.x, p.y
            )?;
        }
        if let Some(future) = &scene.target_future {
            let base = scene.start_frame + scene.history_len() as i64;
            for (i, p) in future.iter().enumerate() {
                writeln!(
                    w,
                    "{},{},{},target,{},{}",
                    scene.scene_id,
                    base + i as i64,
                    scene.target_id,
                    p.x,
                    p.y
                )?;
            }
        }
        for agent in &scene.agent_histories {
            for (i, (p, valid)) in agent.points.iter().zip(&agent.valid).enumerate() {
                if *valid {
                    let frame = scene.start_frame + i as i64;
                    writeln!(
                        w,
                        "{},{},{},agent,{},{}",
                        scene.scene_id, frame, agent.agent_id, p.x, p.y
                    )?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes the observation-mask sidecar: one row per agent per frame,
/// `scene_id, agent_id, frame, observed(0|1)`.
pub fn save_mask_sidecar(
    path: impl AsRef<Path>,
    entries: &[(&TrajectoryScene, &ObservationMask)],
) -> Result<()> {
    let file = File::create(path.as_ref())?;
    let mut w = BufWriter::new(file);
    writeln!(w, "scene_id,agent_id,frame,observed")?;
    for (scene, mask) in entries {
        for (i, obs) in mask.target.iter().enumerate() {
            writeln!(
                w,
                "{},{},{},{}",
                scene.scene_id,
                scene.target_id,
                scene.start_frame + i as i64,
                u8::from(*obs)
            )?;
        }
        for (a, agent) in scene.agent_histories.iter().enumerate() {
            if let Some(flags) = mask.agents.get(a) {
                for (i, obs) in flags.iter().enumerate() {
                    writeln!(
                        w,
                        "{},{},{},{}",
                        scene.scene_id,
                        agent.agent_id,
                        scene.start_frame + i as i64,
                        u8::from(*obs)
                    )?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}
