//! Evaluation harness: plain metrics, the missing-data robustness
//! sweep, and the component ablation matrix.
//!
//! The sweep drops k interior history frames per scene, reconstructs
//! them by linear interpolation, and evaluates a complete-data model on
//! the degraded inputs, averaging metrics over several drop seeds. The
//! `retrain` variant instead trains a fresh model per drop count on
//! equally degraded training data. The ablation matrix trains six model
//! variants (A through F) with identical budgets on a deterministic
//! 80/20 split and reports test metrics per variant.

use std::io::Write;

use crate::error::{MftrajError, Result};
use crate::metrics::{metric_report, MetricReport};
use crate::model::{MfTrajModel, ModelConfig};
use crate::rng::split_seed_indexed;
use crate::scene::{drop_frames_scoped, impute_linear, Point, TrajectoryScene};
use crate::train::train;

/// One labeled row of a report table (a drop count or a model variant).
#[derive(Debug, Clone)]
pub struct ReportRow {
    pub label: String,
    pub report: MetricReport,
}

/// Eval-mode predictions for a scene set, split over the model's
/// configured worker count with order-preserving reassembly.
pub fn predict_batch(model: &MfTrajModel, scenes: &[TrajectoryScene]) -> Result<Vec<Vec<Point>>> {
    let workers = model.config.workers.max(1).min(scenes.len().max(1));
    if workers <= 1 {
        return scenes.iter().map(|s| model.predict(s)).collect();
    }
    let chunk_size = scenes.len().div_ceil(workers);
    let chunk_results: Vec<Result<Vec<Vec<Point>>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = scenes
            .chunks(chunk_size)
            .map(|chunk| scope.spawn(move || chunk.iter().map(|s| model.predict(s)).collect()))
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(scenes.len());
    for chunk in chunk_results {
        out.extend(chunk?);
    }
    Ok(out)
}

fn futures_of(scenes: &[TrajectoryScene]) -> Result<Vec<Vec<Point>>> {
    scenes
        .iter()
        .map(|s| {
            s.target_future.clone().ok_or_else(|| {
                MftrajError::Input(format!("scene '{}' has no ground-truth future", s.scene_id))
            })
        })
        .collect()
}

/// Plain evaluation of a model on complete inputs.
pub fn evaluate(model: &MfTrajModel, scenes: &[TrajectoryScene]) -> Result<MetricReport> {
    let preds = predict_batch(model, scenes)?;
    let gts = futures_of(scenes)?;
    metric_report(&preds, &gts, model.config.sample_rate_hz)
}

/// Applies the drop-k protocol to one scene: k interior history frames
/// removed, then linear imputation.
pub fn degrade_scene(
    scene: &TrajectoryScene,
    k: usize,
    drop_seed: u64,
    all_agents: bool,
) -> Result<TrajectoryScene> {
    if k == 0 {
        return Ok(scene.clone());
    }
    let (dropped, mask) = drop_frames_scoped(scene, k, drop_seed, all_agents)?;
    impute_linear(&dropped, &mask)
}

fn degraded_set(
    scenes: &[TrajectoryScene],
    k: usize,
    sweep_seed: u64,
    all_agents: bool,
) -> Result<Vec<TrajectoryScene>> {
    scenes
        .iter()
        .enumerate()
        .map(|(i, s)| degrade_scene(s, k, split_seed_indexed(sweep_seed, "drop", i as u64), all_agents))
        .collect()
}

fn mean_reports(reports: &[MetricReport]) -> MetricReport {
    let n = reports.len() as f64;
    let horizons = &reports[0].rmse_by_horizon;
    let rmse: Vec<(f64, f64)> = horizons
        .iter()
        .enumerate()
        .map(|(i, (h, _))| (*h, reports.iter().map(|r| r.rmse_by_horizon[i].1).sum::<f64>() / n))
        .collect();
    MetricReport {
        min_ade_m: reports.iter().map(|r| r.min_ade_m).sum::<f64>() / n,
        min_fde_m: reports.iter().map(|r| r.min_fde_m).sum::<f64>() / n,
        miss_rate: reports.iter().map(|r| r.miss_rate).sum::<f64>() / n,
        rmse_by_horizon: rmse,
        scene_count: reports[0].scene_count,
    }
}

/// Missing-data robustness sweep: one row per drop count, metrics
/// averaged over the given drop seeds.
pub fn robustness_sweep(
    model: &MfTrajModel,
    scenes: &[TrajectoryScene],
    drops: &[usize],
    seeds: &[u64],
) -> Result<Vec<ReportRow>> {
    if scenes.is_empty() || seeds.is_empty() {
        return Err(MftrajError::Input("sweep needs scenes and seeds".into()));
    }
    let max_drop = drops.iter().copied().max().unwrap_or(0);
    if model.config.history_frames < max_drop + 2 {
        return Err(MftrajError::Bounds(format!(
            "history of {} frames cannot absorb {} drops",
            model.config.history_frames, max_drop
        )));
    }
    let gts = futures_of(scenes)?;
    let mut rows = Vec::with_capacity(drops.len());
    for &k in drops {
        let mut per_seed = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let degraded = degraded_set(scenes, k, seed, model.config.drop_all_agents)?;
            let preds = predict_batch(model, &degraded)?;
            per_seed.push(metric_report(&preds, &gts, model.config.sample_rate_hz)?);
        }
        rows.push(ReportRow {
            label: format!("drop{}", k),
            report: mean_reports(&per_seed),
        });
    }
    Ok(rows)
}

/// Sweep variant that retrains per drop count: the training split is
/// degraded with the same protocol before training, then the model is
/// scored on degraded test inputs.
pub fn robustness_sweep_retrain(
    base: &ModelConfig,
    train_scenes: &[TrajectoryScene],
    test_scenes: &[TrajectoryScene],
    drops: &[usize],
    seeds: &[u64],
) -> Result<Vec<ReportRow>> {
    let gts = futures_of(test_scenes)?;
    let mut rows = Vec::with_capacity(drops.len());
    for &k in drops {
        let degraded_train = degraded_set(train_scenes, k, base.seed, base.drop_all_agents)?;
        let mut model = MfTrajModel::new(base.clone())?;
        train(&mut model, &degraded_train, &[])?;
        let mut per_seed = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let degraded = degraded_set(test_scenes, k, seed, base.drop_all_agents)?;
            let preds = predict_batch(&model, &degraded)?;
            per_seed.push(metric_report(&preds, &gts, base.sample_rate_hz)?);
        }
        rows.push(ReportRow {
            label: format!("drop{}", k),
            report: mean_reports(&per_seed),
        });
    }
    Ok(rows)
}

/// Deterministic 80/20 split by scene-id hash (stable across runs and
/// platforms).
pub fn split_train_test(scenes: &[TrajectoryScene]) -> (Vec<TrajectoryScene>, Vec<TrajectoryScene>) {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for s in scenes {
        if fnv1a(&s.scene_id) % 5 == 4 {
            test.push(s.clone());
        } else {
            train.push(s.clone());
        }
    }
    (train, test)
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in s.as_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    h
}

/// The six ablation variants derived from a base configuration.
pub fn ablation_configs(base: &ModelConfig) -> Vec<(char, ModelConfig)> {
    let mut variants = Vec::new();
    for label in ['A', 'B', 'C', 'D', 'E', 'F'] {
        let mut cfg = base.clone();
        match label {
            'A' => cfg.disable_behavior = true,
            'B' => cfg.absolute_coords = true,
            'C' => {
                cfg.disable_interaction = true;
                cfg.disable_linformer = true;
            }
            'D' => cfg.disable_linformer = true,
            'E' => cfg.plain_gcn = true,
            _ => {}
        }
        variants.push((label, cfg));
    }
    variants
}

/// Trains and evaluates models A through F with identical budgets on a
/// deterministic 80/20 split of the dataset. Returns one row per model.
pub fn ablation_matrix(scenes: &[TrajectoryScene], base: &ModelConfig) -> Result<Vec<ReportRow>> {
    let (train_set, test_set) = split_train_test(scenes);
    if train_set.is_empty() || test_set.is_empty() {
        return Err(MftrajError::Input(format!(
            "ablation split needs both sides populated, got {} train / {} test",
            train_set.len(),
            test_set.len()
        )));
    }
    let mut rows = Vec::with_capacity(6);
    for (label, cfg) in ablation_configs(base) {
        log::info!("ablation model {}: training {} epochs", label, cfg.epochs);
        let mut model = MfTrajModel::new(cfg)?;
        train(&mut model, &train_set, &[])?;
        let report = evaluate(&model, &test_set)?;
        rows.push(ReportRow {
            label: label.to_string(),
            report,
        });
    }
    Ok(rows)
}

/// Writes a report table:
/// `model_or_drop, min_ade, min_fde, miss_rate, rmse_1s..rmse_5s, scene_count`.
/// Horizons the prediction window does not reach stay empty.
pub fn write_report_csv(path: impl AsRef<std::path::Path>, rows: &[ReportRow]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path.as_ref())?);
    writeln!(
        w,
        "model_or_drop,min_ade,min_fde,miss_rate,rmse_1s,rmse_2s,rmse_3s,rmse_4s,rmse_5s,scene_count"
    )?;
    for row in rows {
        write!(
            w,
            "{},{},{},{}",
            row.label, row.report.min_ade_m, row.report.min_fde_m, row.report.miss_rate
        )?;
        for h in 1..=5 {
            let v = row
                .report
                .rmse_by_horizon
                .iter()
                .find(|(s, _)| (*s - h as f64).abs() < 1e-9)
                .map(|(_, v)| v.to_string())
                .unwrap_or_default();
            write!(w, ",{}", v)?;
        }
        writeln!(w, ",{}", row.report.scene_count)?;
    }
    w.flush()?;
    Ok(())
}
