//! Task manager: predicts the completed/remaining split and the remaining
//! trace from the current observation and the textual memory.

use thiserror::Error;

use crate::geometry::{resample_polyline, Pixel, PixelProjection};
use crate::memory::{describe, parse_memory, MemoryError};
use crate::model::{ModelError, Observation, Plan, PlanState, Primitive, Trace, Verb};

pub const DEFAULT_WAYPOINTS: usize = 8;

#[derive(Debug, Error)]
pub enum ManagerError {
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error("no remaining primitives to build a trace for")]
    EmptyPlan,
    #[error("trace needs at least 2 waypoints, asked for {0}")]
    TooFewWaypoints(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// What the manager is told about the task: the ordered plan and the
/// camera calibration needed to place destinations in the image.
#[derive(Debug, Clone, PartialEq)]
pub struct Instruction {
    pub plan: Plan,
    pub projection: PixelProjection,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ManagerOutput {
    pub plan: PlanState,
    /// Present iff `plan.remaining` is non-empty; starts at the gripper pixel.
    pub trace: Option<Trace>,
    /// Description of `plan.remaining[0]`, present iff it exists.
    pub subtask_text: Option<String>,
}

pub trait TaskManager: Send + Sync {
    fn name(&self) -> &str;

    /// Must depend only on its arguments.
    fn plan(&self, instruction: &Instruction, obs: &Observation, memory: &str) -> Result<ManagerOutput, ManagerError>;
}

fn is_complete(p: &Primitive, obs: &Observation) -> bool {
    let o = p.target();
    match p.verb() {
        Verb::Grasp => obs.is_held(o) || obs.at_destination(o),
        Verb::Place | Verb::Push => obs.at_destination(o) && !obs.is_held(o),
        Verb::Drop => !obs.is_held(o),
        Verb::Open | Verb::Close => false,
    }
}

fn is_revoked(p: &Primitive, obs: &Observation) -> bool {
    p.verb() == Verb::Grasp && !obs.is_held(p.target()) && !obs.at_destination(p.target())
}

/// Moves the split forward while the observation shows the next primitive is
/// done. A completed `Grasp` whose evidence has vanished is moved back to
/// `remaining` together with everything after it.
pub fn detect_progress(obs: &Observation, prior: &PlanState) -> PlanState {
    let steps: Vec<Primitive> = prior
        .completed()
        .iter()
        .chain(prior.remaining())
        .cloned()
        .collect();
    let mut k = prior
        .completed()
        .iter()
        .position(|p| is_revoked(p, obs))
        .unwrap_or(prior.split_index());
    while k < steps.len() && is_complete(&steps[k], obs) {
        k += 1;
    }
    let (done, rest) = steps.split_at(k);
    PlanState::from_parts(done.to_vec(), rest.to_vec())
}

fn key_pixel(p: &Primitive, obs: &Observation, projection: &PixelProjection) -> Vec<Pixel> {
    let mut pts = Vec::with_capacity(2);
    if let Some(o) = obs.object(p.target()) {
        pts.push(o.px);
    }
    if let Some(d) = p.destination() {
        pts.push(projection.to_pixel(d.to_meters()));
    }
    pts
}

/// Resamples a pixel polyline to `count` waypoints; both endpoints are kept exactly.
pub fn resample_pixels(path: &[Pixel], count: usize) -> Result<Trace, ManagerError> {
    if count < 2 {
        return Err(ManagerError::TooFewWaypoints(count));
    }
    let pts: Vec<(f64, f64)> = path.iter().map(|p| p.as_f64()).collect();
    let waypoints = resample_polyline(&pts, count)
        .into_iter()
        .map(|(x, y)| Pixel::round_from(x, y))
        .collect();
    Ok(Trace::new(waypoints)?)
}

/// Path from the gripper through the target (and destination) of every
/// remaining primitive, resampled to `waypoints` points.
pub fn build_trace(
    obs: &Observation,
    remaining: &[Primitive],
    waypoints: usize,
    projection: &PixelProjection,
) -> Result<Trace, ManagerError> {
    if remaining.is_empty() {
        return Err(ManagerError::EmptyPlan);
    }
    let mut path = vec![obs.gripper_px()];
    for p in remaining {
        for px in key_pixel(p, obs, projection) {
            if path.last() != Some(&px) {
                path.push(px);
            }
        }
    }
    resample_pixels(&path, waypoints)
}

/// Rule-based manager that reads progress off the observation.
#[derive(Debug, Clone)]
pub struct ScriptedManager {
    pub waypoints: usize,
}

impl Default for ScriptedManager {
    fn default() -> Self {
        Self {
            waypoints: DEFAULT_WAYPOINTS,
        }
    }
}

impl ScriptedManager {
    pub const NAME: &'static str = "scripted";
}

impl TaskManager for ScriptedManager {
    fn name(&self) -> &str {
        Self::NAME
    }

    fn plan(&self, instruction: &Instruction, obs: &Observation, memory: &str) -> Result<ManagerOutput, ManagerError> {
        let objects: Vec<&str> = obs.object_ids().map(|o| o.as_str()).collect();
        let recalled = parse_memory(memory, &objects)?;
        let k = recalled.split_index();
        let consistent = k <= instruction.plan.len()
            && recalled
                .completed()
                .iter()
                .zip(instruction.plan.steps())
                .all(|(a, b)| a.same_action(b));
        if !consistent {
            return Err(MemoryError::Malformed(
                "completed primitives are not a prefix of the instruction plan".into(),
            )
            .into());
        }

        let mut state = detect_progress(obs, &instruction.plan.split(k));
        if let (Some(held), Some(next)) = (obs.held(), state.next()) {
            if next.verb() == Verb::Grasp && next.target() != held {
                let drop = Primitive::new(0, Verb::Drop, held.clone(), None)?;
                state = state.with_recovery(drop);
            }
        }

        let (trace, subtask_text) = match state.next() {
            Some(next) => (
                Some(build_trace(obs, state.remaining(), self.waypoints, &instruction.projection)?),
                Some(describe(next)),
            ),
            None => (None, None),
        };
        Ok(ManagerOutput {
            plan: state,
            trace,
            subtask_text,
        })
    }
}

/// Looks up a manager implementation by its registered name.
pub fn manager_by_name(name: &str, waypoints: usize) -> Option<Box<dyn TaskManager>> {
    match name {
        ScriptedManager::NAME => Some(Box::new(ScriptedManager { waypoints })),
        _ => None,
    }
}
