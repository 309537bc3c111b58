//! Trace-following executor.
//!
//! Pure-pursuit over the trace polyline: aim at the first waypoint at least
//! `lookahead_px` of arc length ahead of the gripper's nearest trace point.
//! Once that waypoint would pass the subtask's goal (its object, or its
//! destination for `place`), aim at the goal pixel itself so the gripper ends
//! on the interaction point even when resampling cut the corner.

use serde::{Deserialize, Serialize};

use crate::geometry::{cumulative_arc_length, first_within, project_onto_polyline, slice_polyline, truncate_polyline, Pixel, PixelProjection, Point2};
use crate::model::{Observation, Primitive, Trace, Verb};
use crate::sim::{Action, GripperCmd, SimParams};

const ROUNDING_MARGIN_PX: f64 = std::f64::consts::SQRT_2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExecutorConfig {
    pub lookahead_px: f64,
    /// Meters per step per pixel of tracking error.
    pub gain: f64,
    pub v_max: f64,
    pub grasp_trigger_px: f64,
    pub place_trigger_px: f64,
    pub projection: PixelProjection,
}

impl Default for ExecutorConfig {
    fn default() -> Self {
        Self::for_sim(PixelProjection::default(), &SimParams::default())
    }
}

impl ExecutorConfig {
    /// Default tracking gains with trigger radii and speed limit taken from the simulator.
    /// Trigger radii are shrunk by the worst-case rounding of two pixel
    /// positions (√2 px) so a command issued on pixel evidence always lands
    /// inside the simulator's radius.
    pub fn for_sim(projection: PixelProjection, params: &SimParams) -> Self {
        Self {
            lookahead_px: 50.0,
            gain: 0.0005,
            v_max: params.v_max,
            grasp_trigger_px: projection.length_to_pixels(params.grasp_radius) - ROUNDING_MARGIN_PX,
            place_trigger_px: projection.length_to_pixels(params.place_tolerance) - ROUNDING_MARGIN_PX,
            projection,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.lookahead_px > 0.0 && self.gain > 0.0 && self.v_max > 0.0
    }
}

/// Pixel the subtask has to reach, if it can be located.
pub fn goal_pixel(obs: &Observation, subtask: &Primitive, projection: &PixelProjection) -> Option<Pixel> {
    match subtask.destination() {
        Some(d) => Some(projection.to_pixel(d.to_meters())),
        None => obs.object(subtask.target()).map(|o| o.px),
    }
}

/// How much farther than its nearest approach a trace may pass a goal and
/// still be taken to arrive there.
pub const GOAL_CAPTURE_PX: f64 = 50.0;

/// Arc length at which the trace first reaches `goal`.
///
/// Resampling can cut the corner at a goal by up to one waypoint spacing, and a
/// later leg may then pass closer than the leg that was aimed at it. The last
/// waypoint before the corner still lies on the straight leg toward the goal,
/// less than one spacing away, so the first point within the longest segment
/// length (or [`GOAL_CAPTURE_PX`] past the nearest approach, if farther) ends
/// a prefix that never loops back over itself.
pub fn goal_arc(points: &[(f64, f64)], goal: Pixel) -> Option<f64> {
    let (_, nearest) = project_onto_polyline(points, goal.as_f64())?;
    let spacing = points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1))
        .fold(0.0, f64::max);
    first_within(points, goal.as_f64(), (nearest + GOAL_CAPTURE_PX).max(spacing + ROUNDING_MARGIN_PX))
}

/// Arc length of the trace point nearest to the gripper.
pub fn trace_progress(trace: &Trace, at: Pixel) -> f64 {
    project_onto_polyline(&trace.as_f64(), at.as_f64()).map_or(0.0, |(s, _)| s)
}

/// Picks the pixel the gripper should steer toward.
///
/// Progress is measured on the trace prefix that ends where the trace first
/// reaches the subtask goal, so legs meant for later subtasks are ignored.
pub fn aim_point(obs: &Observation, subtask: &Primitive, trace: &Trace, cfg: &ExecutorConfig) -> Pixel {
    let pts = trace.as_f64();
    let arc = cumulative_arc_length(&pts);
    let gripper = obs.gripper_px();
    let goal = goal_pixel(obs, subtask, &cfg.projection);
    let s_goal = goal
        .and_then(|g| goal_arc(&pts, g))
        .unwrap_or(f64::INFINITY);
    let prefix = truncate_polyline(&pts, s_goal);
    let s = project_onto_polyline(&prefix, gripper.as_f64()).map_or(0.0, |(s, _)| s);
    let idx = arc
        .iter()
        .position(|&a| a >= s + cfg.lookahead_px)
        .unwrap_or(pts.len() - 1);
    match goal {
        Some(goal) if arc[idx] >= s_goal => goal,
        _ => trace.waypoints()[idx],
    }
}

/// Cuts one multi-subtask trace into consecutive pieces, one per subtask,
/// ending where the rest of the trace first reaches each subtask's goal.
/// Goals are located in `obs`; the last piece runs to the end of the trace.
pub fn split_trace(trace: &Trace, obs: &Observation, subtasks: &[Primitive], projection: &PixelProjection) -> Vec<Trace> {
    let pts = trace.as_f64();
    let total = *cumulative_arc_length(&pts).last().unwrap_or(&0.0);
    let mut from = 0.0;
    let mut pieces = Vec::with_capacity(subtasks.len());
    for (k, subtask) in subtasks.iter().enumerate() {
        let to = if k + 1 == subtasks.len() {
            total
        } else {
            let rest = slice_polyline(&pts, from, total);
            goal_pixel(obs, subtask, projection)
                .and_then(|g| goal_arc(&rest, g))
                .map_or(from, |s| from + s)
        };
        let mut px: Vec<Pixel> = Vec::new();
        for (x, y) in slice_polyline(&pts, from, to) {
            let p = Pixel::round_from(x, y);
            if px.last() != Some(&p) {
                px.push(p);
            }
        }
        if px.len() < 2 {
            px.push(px[0]);
        }
        pieces.push(Trace::new(px).expect("slice of a valid trace stays in frame"));
        from = to;
    }
    pieces
}

pub fn act(obs: &Observation, subtask: &Primitive, trace: &Trace, cfg: &ExecutorConfig) -> Action {
    let gripper = obs.gripper_px();
    let aim = aim_point(obs, subtask, trace, cfg);
    let (mut vx, mut vy) = (
        cfg.gain * f64::from(aim.x - gripper.x),
        cfg.gain * f64::from(aim.y - gripper.y),
    );
    let peak = vx.abs().max(vy.abs());
    if peak > cfg.v_max {
        let k = cfg.v_max / peak;
        vx *= k;
        vy *= k;
    }

    let dist = goal_pixel(obs, subtask, &cfg.projection).map(|g| g.distance(gripper));
    let gripper_cmd = match (subtask.verb(), dist) {
        (Verb::Grasp, Some(d)) if d <= cfg.grasp_trigger_px => GripperCmd::CloseGrasp,
        (Verb::Place | Verb::Drop, Some(d)) if d <= cfg.place_trigger_px => GripperCmd::OpenRelease,
        _ => GripperCmd::Hold,
    };
    Action {
        velocity: Point2::new(vx, vy),
        gripper_cmd,
    }
}

pub trait Executor: Send + Sync {
    fn name(&self) -> &str;
    fn act(&self, obs: &Observation, subtask: &Primitive, trace: &Trace) -> Action;
}

#[derive(Debug, Clone, Default)]
pub struct PurePursuit {
    pub config: ExecutorConfig,
}

impl PurePursuit {
    pub const NAME: &'static str = "pure_pursuit";
}

impl Executor for PurePursuit {
    fn name(&self) -> &str {
        Self::NAME
    }

    fn act(&self, obs: &Observation, subtask: &Primitive, trace: &Trace) -> Action {
        act(obs, subtask, trace, &self.config)
    }
}

pub fn executor_by_name(name: &str, config: ExecutorConfig) -> Option<Box<dyn Executor>> {
    match name {
        PurePursuit::NAME => Some(Box::new(PurePursuit { config })),
        _ => None,
    }
}
