//! Trajectory similarity metrics and episode scores.
//!
//! Distances are computed on trajectories normalized to the unit square
//! (pixel coordinates divided by 1000).

use serde::Serialize;
use thiserror::Error;

use crate::geometry::{resample_polyline, Pixel, IMAGE_SCALE};
use crate::model::Trace;
use crate::orchestrator::EpisodeLog;
use crate::sim::AttachmentKind;

pub const DEFAULT_RMSE_POINTS: usize = 64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("trajectory is empty")]
    EmptyTrajectory,
    #[error("coordinate {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("rmse needs at least 2 resampling points, got {0}")]
    TooFewSamples(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormTrajectory {
    points: Vec<(f64, f64)>,
}

impl NormTrajectory {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self, MetricError> {
        if points.is_empty() {
            return Err(MetricError::EmptyTrajectory);
        }
        for &(x, y) in &points {
            for v in [x, y] {
                if !(0.0..=1.0).contains(&v) {
                    return Err(MetricError::OutOfRange(v));
                }
            }
        }
        Ok(Self { points })
    }

    pub fn from_pixels(pixels: &[Pixel]) -> Result<Self, MetricError> {
        let s = f64::from(IMAGE_SCALE);
        Self::new(
            pixels
                .iter()
                .map(|p| (f64::from(p.x) / s, f64::from(p.y) / s))
                .collect(),
        )
    }

    pub fn from_trace(trace: &Trace) -> Self {
        Self::from_pixels(trace.waypoints()).expect("trace pixels are in frame")
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

/// Discrete Fréchet distance, O(|a|·|b|) dynamic program over a single row.
pub fn dfd(a: &NormTrajectory, b: &NormTrajectory) -> f64 {
    let (p, q) = (a.points(), b.points());
    let mut row = vec![0.0f64; q.len()];
    for (i, &pi) in p.iter().enumerate() {
        let mut diag = 0.0f64;
        for (j, &qj) in q.iter().enumerate() {
            let d = dist(pi, qj);
            let best = match (i, j) {
                (0, 0) => 0.0,
                (0, _) => row[j - 1],
                (_, 0) => row[0],
                _ => diag.min(row[j]).min(row[j - 1]),
            };
            diag = row[j];
            row[j] = d.max(best);
        }
    }
    row[q.len() - 1]
}

fn directed_hausdorff(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    a.iter()
        .map(|&p| b.iter().map(|&q| dist(p, q)).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max)
}

pub fn hausdorff(a: &NormTrajectory, b: &NormTrajectory) -> f64 {
    directed_hausdorff(a.points(), b.points()).max(directed_hausdorff(b.points(), a.points()))
}

/// Root-mean-square distance after resampling both trajectories to `samples`
/// points equally spaced in arc length.
pub fn rmse(a: &NormTrajectory, b: &NormTrajectory, samples: usize) -> Result<f64, MetricError> {
    if samples < 2 {
        return Err(MetricError::TooFewSamples(samples));
    }
    let ra = resample_polyline(a.points(), samples);
    let rb = resample_polyline(b.points(), samples);
    let sum: f64 = ra
        .iter()
        .zip(&rb)
        .map(|(&p, &q)| {
            let d = dist(p, q);
            d * d
        })
        .sum();
    Ok((sum / samples as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrajectoryScores {
    pub dfd: f64,
    pub hausdorff: f64,
    pub rmse: f64,
}

pub fn score_pair(predicted: &NormTrajectory, reference: &NormTrajectory, samples: usize) -> Result<TrajectoryScores, MetricError> {
    Ok(TrajectoryScores {
        dfd: dfd(predicted, reference),
        hausdorff: hausdorff(predicted, reference),
        rmse: rmse(predicted, reference, samples)?,
    })
}

/// Fraction of plan primitives the final observation shows as done.
pub fn progress_score(log: &EpisodeLog) -> f64 {
    let k = log.config.instruction.len();
    if k == 0 {
        return 1.0;
    }
    log.ground_truth_progress().split_index() as f64 / k as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IntentionScore {
    pub value: f64,
    pub attempts: usize,
    pub on_target: usize,
    /// Set when the episode contains no grasp attempt; `value` is then 0.
    pub no_attempts: bool,
}

/// Fraction of grasp attempts (successful or slipped) made on the object the
/// active subtask was targeting.
pub fn intention_score(log: &EpisodeLog) -> IntentionScore {
    let mut attempts = 0;
    let mut on_target = 0;
    for ev in &log.events {
        if !matches!(ev.kind, AttachmentKind::Grasp | AttachmentKind::Slip) {
            continue;
        }
        attempts += 1;
        // event at frame f was caused by the step recorded at frame f - 1
        let intended = ev
            .frame
            .checked_sub(1)
            .and_then(|f| log.steps.iter().rev().find(|s| s.frame == f))
            .map(|s| s.subtask.target());
        if intended == Some(&ev.object) {
            on_target += 1;
        }
    }
    IntentionScore {
        value: if attempts == 0 { 0.0 } else { on_target as f64 / attempts as f64 },
        attempts,
        on_target,
        no_attempts: attempts == 0,
    }
}

/// 95% z value used by [`wilson_interval`] callers.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Wilson score interval for a binomial proportion `p` observed over `n` trials.
pub fn wilson_interval(p: f64, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((center - half).max(0.0), (center + half).min(1.0))
}
