//! Displacement-error metrics for single-candidate forecasts.
//!
//! With one trajectory candidate per scene, minADE and minFDE reduce to
//! plain ADE/FDE. Miss rate counts scenes whose final-step error exceeds
//! a 2 m threshold (motion-forecasting challenge convention). RMSE is
//! reported per prediction horizon: the mean of squared errors over both
//! coordinates and all scenes at the frame closest to the horizon, then
//! the square root.

use crate::error::{MftrajError, Result};
use crate::scene::Point;

/// Endpoint-error threshold defining a missed prediction.
pub const MISS_THRESHOLD_M: f64 = 2.0;

/// Aggregated metrics over a scene set.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub min_ade_m: f64,
    pub min_fde_m: f64,
    /// Fraction of scenes in `[0, 1]`.
    pub miss_rate: f64,
    /// `(horizon seconds, rmse meters)`, ascending by horizon.
    pub rmse_by_horizon: Vec<(f64, f64)>,
    pub scene_count: usize,
}

impl MetricReport {
    pub fn is_valid(&self) -> bool {
        self.min_ade_m.is_finite()
            && self.min_ade_m >= 0.0
            && self.min_fde_m.is_finite()
            && self.min_fde_m >= 0.0
            && (0.0..=1.0).contains(&self.miss_rate)
            && self.rmse_by_horizon.iter().all(|(_, v)| v.is_finite() && *v >= 0.0)
    }
}

fn check_shapes(pred: &[Point], gt: &[Point]) -> Result<()> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(MftrajError::Input(format!(
            "prediction has {} steps, ground truth {}",
            pred.len(),
            gt.len()
        )));
    }
    Ok(())
}

/// Mean Euclidean error over all prediction steps.
pub fn ade(pred: &[Point], gt: &[Point]) -> Result<f64> {
    check_shapes(pred, gt)?;
    let total: f64 = pred.iter().zip(gt).map(|(p, g)| p.distance(g)).sum();
    Ok(total / pred.len() as f64)
}

/// Euclidean error at the final step.
pub fn fde(pred: &[Point], gt: &[Point]) -> Result<f64> {
    check_shapes(pred, gt)?;
    Ok(pred.last().unwrap().distance(gt.last().unwrap()))
}

/// Fraction of scenes whose endpoint error exceeds `threshold_m`.
pub fn miss_rate(preds: &[Vec<Point>], gts: &[Vec<Point>], threshold_m: f64) -> Result<f64> {
    if preds.is_empty() || preds.len() != gts.len() {
        return Err(MftrajError::Input(format!(
            "miss rate needs matching non-empty sets, got {} and {}",
            preds.len(),
            gts.len()
        )));
    }
    let mut missed = 0usize;
    for (p, g) in preds.iter().zip(gts) {
        if fde(p, g)? > threshold_m {
            missed += 1;
        }
    }
    Ok(missed as f64 / preds.len() as f64)
}

/// RMSE at each requested horizon (seconds). A horizon maps to the
/// closest prediction step; horizons beyond the prediction window are a
/// bounds error. Both coordinates of every scene enter the mean of
/// squares.
pub fn rmse_by_horizon(
    preds: &[Vec<Point>],
    gts: &[Vec<Point>],
    sample_rate_hz: f64,
    horizons_s: &[f64],
) -> Result<Vec<(f64, f64)>> {
    if preds.is_empty() || preds.len() != gts.len() {
        return Err(MftrajError::Input("rmse needs matching non-empty sets".into()));
    }
    let t_f = preds[0].len();
    let mut out = Vec::with_capacity(horizons_s.len());
    for &h in horizons_s {
        let step = (h * sample_rate_hz).round() as usize;
        if step == 0 || step > t_f {
            return Err(MftrajError::Bounds(format!(
                "horizon {} s maps to step {}, outside 1..={}",
                h, step, t_f
            )));
        }
        let idx = step - 1;
        let mut sq_sum = 0.0;
        for (p, g) in preds.iter().zip(gts) {
            check_shapes(p, g)?;
            let dx = p[idx].x - g[idx].x;
            let dy = p[idx].y - g[idx].y;
            sq_sum += dx * dx + dy * dy;
        }
        let mean_sq = sq_sum / (2.0 * preds.len() as f64);
        out.push((h, mean_sq.sqrt()));
    }
    Ok(out)
}

/// Whole-second horizons that fit inside the prediction window.
pub fn default_horizons(sample_rate_hz: f64, future_frames: usize) -> Vec<f64> {
    let max_s = future_frames as f64 / sample_rate_hz;
    (1..=5)
        .map(|s| s as f64)
        .filter(|&s| s * sample_rate_hz <= future_frames as f64 && s <= max_s)
        .collect()
}

/// Full report over a prediction set.
pub fn metric_report(
    preds: &[Vec<Point>],
    gts: &[Vec<Point>],
    sample_rate_hz: f64,
) -> Result<MetricReport> {
    if preds.is_empty() || preds.len() != gts.len() {
        return Err(MftrajError::Input("metrics need matching non-empty sets".into()));
    }
    let mut ade_sum = 0.0;
    let mut fde_sum = 0.0;
    for (p, g) in preds.iter().zip(gts) {
        ade_sum += ade(p, g)?;
        fde_sum += fde(p, g)?;
    }
    let horizons = default_horizons(sample_rate_hz, preds[0].len());
    Ok(MetricReport {
        min_ade_m: ade_sum / preds.len() as f64,
        min_fde_m: fde_sum / preds.len() as f64,
        miss_rate: miss_rate(preds, gts, MISS_THRESHOLD_M)?,
        rmse_by_horizon: rmse_by_horizon(preds, gts, sample_rate_hz, &horizons)?,
        scene_count: preds.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(v: &[(f64, f64)]) -> Vec<Point> {
        v.iter().map(|&(x, y)| Point::new(x, y)).collect()
    }

    #[test]
    fn exact_prediction_scores_zero() {
        let gt = pts(&[(0.0, 0.0), (1.0, 1.0), (2.0, 2.0)]);
        assert_eq!(ade(&gt, &gt).unwrap(), 0.0);
        assert_eq!(fde(&gt, &gt).unwrap(), 0.0);
    }

    #[test]
    fn constant_offset_scores_offset() {
        let gt = pts(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)]);
        let pred = pts(&[(0.0, 1.0), (1.0, 1.0), (2.0, 1.0)]);
        assert_eq!(ade(&pred, &gt).unwrap(), 1.0);
        assert_eq!(fde(&pred, &gt).unwrap(), 1.0);
    }

    #[test]
    fn linearly_growing_error() {
        // error 0.1 * step over 30 steps: ade = mean(0.1..3.0) = 1.55
        let gt: Vec<Point> = (0..30).map(|_| Point::new(0.0, 0.0)).collect();
        let pred: Vec<Point> = (0..30).map(|i| Point::new(0.1 * (i + 1) as f64, 0.0)).collect();
        assert!((ade(&pred, &gt).unwrap() - 1.55).abs() < 1e-12);
        assert!((fde(&pred, &gt).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn miss_rate_threshold_rule() {
        let gts = vec![pts(&[(0.0, 0.0)]); 3];
        let preds = vec![
            pts(&[(1.0, 0.0)]),
            pts(&[(2.5, 0.0)]),
            pts(&[(3.0, 0.0)]),
        ];
        let mr = miss_rate(&preds, &gts, 2.0).unwrap();
        assert!((mr - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(miss_rate(&preds, &gts, f64::INFINITY).unwrap(), 0.0);
        // monotone non-increasing in the threshold
        let lo = miss_rate(&preds, &gts, 0.5).unwrap();
        assert!(lo >= mr);
    }

    #[test]
    fn miss_rate_of_empty_set_is_input_error() {
        assert!(matches!(
            miss_rate(&[], &[], 2.0),
            Err(MftrajError::Input(_))
        ));
    }

    #[test]
    fn rmse_constant_offset() {
        // offset (3,4) at every step: sqrt((9+16)/2) per horizon
        let gt: Vec<Point> = (0..30).map(|i| Point::new(i as f64, 0.0)).collect();
        let pred: Vec<Point> = gt.iter().map(|p| Point::new(p.x + 3.0, p.y + 4.0)).collect();
        let rmse = rmse_by_horizon(&[pred], &[gt], 10.0, &[1.0, 2.0, 3.0]).unwrap();
        for (_, v) in rmse {
            assert!((v - 12.5_f64.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn rmse_error_only_at_one_horizon() {
        let gt: Vec<Point> = (0..50).map(|_| Point::new(0.0, 0.0)).collect();
        let mut pred = gt.clone();
        pred[49] = Point::new(5.0, 0.0); // only the 5 s frame at 10 Hz
        let rmse =
            rmse_by_horizon(&[pred], &[gt], 10.0, &[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        for (h, v) in rmse {
            if h < 5.0 {
                assert_eq!(v, 0.0);
            } else {
                assert!((v - (25.0 / 2.0_f64).sqrt()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn horizon_beyond_window_is_bounds_error() {
        let gt = vec![pts(&[(0.0, 0.0); 10])];
        assert!(matches!(
            rmse_by_horizon(&gt, &gt, 10.0, &[2.0]),
            Err(MftrajError::Bounds(_))
        ));
    }

    #[test]
    fn metrics_invariant_under_translation() {
        let gt = pts(&[(0.0, 0.0), (1.0, 1.0), (2.0, 0.5)]);
        let pred = pts(&[(0.3, 0.1), (1.5, 0.8), (2.2, 0.9)]);
        let shift = |v: &[Point]| -> Vec<Point> {
            v.iter().map(|p| Point::new(p.x + 40.0, p.y - 13.0)).collect()
        };
        assert!((ade(&pred, &gt).unwrap() - ade(&shift(&pred), &shift(&gt)).unwrap()).abs() < 1e-12);
        assert!((fde(&pred, &gt).unwrap() - fde(&shift(&pred), &shift(&gt)).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn single_scene_final_horizon_matches_endpoint_rms() {
        let gt = pts(&[(0.0, 0.0), (0.0, 0.0)]);
        let pred = pts(&[(0.0, 0.0), (3.0, 4.0)]);
        let rmse = rmse_by_horizon(&[pred.clone()], &[gt.clone()], 10.0, &[0.2]).unwrap();
        let expected = ((9.0 + 16.0) / 2.0_f64).sqrt();
        assert!((rmse[0].1 - expected).abs() < 1e-12);
    }

    #[test]
    fn default_horizons_clip_to_window() {
        assert_eq!(default_horizons(10.0, 30), vec![1.0, 2.0, 3.0]);
        assert_eq!(default_horizons(5.0, 20), vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(default_horizons(10.0, 50), vec![1.0, 2.0, 3.0, 4.0, 5.0]);
    }
}
