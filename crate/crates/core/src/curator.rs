//! Turns episode logs into manager supervision: primitive segmentation from
//! the attachment event stream, per-frame (memory, split, remaining trace)
//! samples, and synthesized wrong-object recovery samples.

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Pixel;
use crate::manager::{resample_pixels, ManagerError};
use crate::memory::render_memory;
use crate::model::{ModelError, ObjectId, Observation, PlanState, Primitive, Trace, Verb};
use crate::orchestrator::EpisodeLog;
use crate::sim::AttachmentKind;

pub const SUPERVISION_SCHEMA: u32 = 1;
pub const DEFAULT_STRIDE: u64 = 10;

#[derive(Debug, Error)]
pub enum CuratorError {
    #[error("event {kind:?} on {object} at frame {frame} does not match plan step {index}")]
    EventPlanMismatch {
        frame: u64,
        object: ObjectId,
        kind: AttachmentKind,
        index: usize,
    },
    #[error("episode completed {found} of {expected} primitives")]
    IncompleteEpisode { found: usize, expected: usize },
    #[error("no grasp followed by a place of the same object")]
    NoGraspPlacePair,
    #[error("scene has no other graspable object to substitute for {0}")]
    NoAlternativeObject(ObjectId),
    #[error("stride must be >= 1")]
    ZeroStride,
    #[error("frame {0} is not in the log")]
    MissingFrame(u64),
    #[error(transparent)]
    Trace(#[from] ManagerError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Frames `t_start..=t_end` belonging to one primitive. `t_end` is the first
/// frame showing the primitive's contact change.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrimitiveSpan {
    pub primitive: Primitive,
    pub t_start: u64,
    pub t_end: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupervisionSample {
    pub schema: u32,
    pub episode_seed: u64,
    pub frame: u64,
    /// The frame the manager would see (rewritten for recovery samples).
    pub observation: Observation,
    pub memory_text: String,
    pub target_plan: PlanState,
    /// Absent on terminal samples.
    pub target_trace: Option<Trace>,
    pub recovery: bool,
    pub terminal: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
}

impl EpisodeLog {
    /// Observation at `frame`, including the final one.
    pub fn observation_at(&self, frame: u64) -> Option<&Observation> {
        match self.steps.get(frame as usize) {
            Some(s) if s.frame == frame => Some(&s.observation),
            _ if frame == self.frames() => Some(&self.final_observation),
            _ => None,
        }
    }

    fn gripper_track(&self, from: u64, to: u64) -> Result<Vec<Pixel>, CuratorError> {
        let mut track: Vec<Pixel> = Vec::with_capacity((to - from + 1) as usize);
        for f in from..=to {
            let px = self.observation_at(f).ok_or(CuratorError::MissingFrame(f))?.gripper_px();
            track.push(px);
        }
        Ok(track)
    }
}

/// Maps grasp/release events to plan primitives in order.
///
/// Attempts that leave no lasting change produce no span: slips, a release
/// short of the destination (the grasp before it is undone and its frames
/// join the next span) and a grasp of an object other than the planned one
/// up to its release.
pub fn segment(log: &EpisodeLog) -> Result<Vec<PrimitiveSpan>, CuratorError> {
    let plan = log.config.instruction.steps();
    let mut spans: Vec<PrimitiveSpan> = Vec::new();
    let mut start = 0;
    let mut off_plan: Option<&ObjectId> = None;
    for ev in log.events.iter().filter(|e| e.kind != AttachmentKind::Slip) {
        let index = spans.len();
        let mismatch = || CuratorError::EventPlanMismatch {
            frame: ev.frame,
            object: ev.object.clone(),
            kind: ev.kind,
            index,
        };
        if let Some(held) = off_plan {
            if ev.kind == AttachmentKind::Release && &ev.object == held {
                off_plan = None;
                continue;
            }
            return Err(mismatch());
        }
        let p = plan.get(index).ok_or_else(mismatch)?;
        let on_target = &ev.object == p.target();
        let placed = || {
            log.observation_at(ev.frame)
                .is_some_and(|o| o.at_destination(p.target()))
        };
        match (p.verb(), ev.kind) {
            (Verb::Grasp, AttachmentKind::Grasp) if !on_target => {
                off_plan = Some(&ev.object);
                continue;
            }
            (Verb::Grasp, AttachmentKind::Grasp) | (Verb::Drop, AttachmentKind::Release) if on_target => {}
            (Verb::Place, AttachmentKind::Release) if on_target && placed() => {}
            (Verb::Place, AttachmentKind::Release) if on_target => {
                let undone = spans.pop().filter(|s| s.primitive.verb() == Verb::Grasp).ok_or_else(mismatch)?;
                start = undone.t_start;
                continue;
            }
            _ => return Err(mismatch()),
        }
        spans.push(PrimitiveSpan {
            primitive: p.clone(),
            t_start: start,
            t_end: ev.frame,
        });
        start = ev.frame + 1;
    }
    Ok(spans)
}

fn split_at(spans: &[PrimitiveSpan], frame: u64) -> usize {
    spans.iter().take_while(|s| s.t_end <= frame).count()
}

/// One sample every `stride` frames up to the end of the last primitive, plus
/// a terminal sample at that end frame.
pub fn extract_samples(
    log: &EpisodeLog,
    spans: &[PrimitiveSpan],
    stride: u64,
    waypoints: usize,
) -> Result<Vec<SupervisionSample>, CuratorError> {
    if stride == 0 {
        return Err(CuratorError::ZeroStride);
    }
    let plan = &log.config.instruction;
    if spans.len() != plan.len() || plan.is_empty() {
        return Err(CuratorError::IncompleteEpisode {
            found: spans.len(),
            expected: plan.len(),
        });
    }
    let end = spans[spans.len() - 1].t_end;
    let mut frames: Vec<u64> = (0..=end).step_by(stride as usize).collect();
    if frames.last() != Some(&end) {
        frames.push(end);
    }

    frames
        .into_iter()
        .map(|t| {
            let k = split_at(spans, t);
            let before = if t == 0 { 0 } else { split_at(spans, t - 1) };
            let target_plan = plan.split(k);
            let terminal = target_plan.is_done();
            let target_trace = if terminal {
                None
            } else {
                Some(resample_pixels(&log.gripper_track(t, end)?, waypoints)?)
            };
            Ok(SupervisionSample {
                schema: SUPERVISION_SCHEMA,
                episode_seed: log.config.seed,
                frame: t,
                observation: log.observation_at(t).ok_or(CuratorError::MissingFrame(t))?.clone(),
                memory_text: render_memory(&plan.split(before)),
                target_plan,
                target_trace,
                recovery: false,
                terminal,
                image: None,
            })
        })
        .collect()
}

/// Builds a recovery sample at the frame right after a successful grasp by
/// pretending a different graspable object was picked up. The target plan
/// drops the wrong object, then resumes the original grasp; the trace goes
/// gripper → wrong object's position → correct object → rest of the episode.
pub fn synthesize_failure<R: Rng + ?Sized>(
    log: &EpisodeLog,
    spans: &[PrimitiveSpan],
    waypoints: usize,
    rng: &mut R,
) -> Result<SupervisionSample, CuratorError> {
    let pairs: Vec<usize> = spans
        .windows(2)
        .enumerate()
        .filter(|(_, w)| {
            w[0].primitive.verb() == Verb::Grasp
                && w[1].primitive.verb() == Verb::Place
                && w[0].primitive.target() == w[1].primitive.target()
        })
        .map(|(j, _)| j)
        .collect();
    let &j = pairs.choose(rng).ok_or(CuratorError::NoGraspPlacePair)?;
    let grasped = spans[j].primitive.target().clone();
    let alternatives: Vec<&ObjectId> = log
        .scene
        .objects
        .iter()
        .filter(|o| o.graspable && o.id != grasped)
        .map(|o| &o.id)
        .collect();
    let wrong = (*alternatives
        .choose(rng)
        .ok_or_else(|| CuratorError::NoAlternativeObject(grasped.clone()))?)
    .clone();

    let frame = spans[j].t_end;
    let actual = log.observation_at(frame).ok_or(CuratorError::MissingFrame(frame))?;
    let before = log
        .observation_at(frame.saturating_sub(1))
        .ok_or(CuratorError::MissingFrame(frame.saturating_sub(1)))?;
    let correct_px = before.object(&grasped).map_or(actual.gripper_px(), |o| o.px);
    let drop_px = actual.object(&wrong).map_or(actual.gripper_px(), |o| o.px);
    let observation = actual.with_held(wrong.clone(), correct_px)?;

    let plan = &log.config.instruction;
    let drop = Primitive::new(0, Verb::Drop, wrong, None)?;
    let target_plan = plan.split(j).with_recovery(drop);

    let end = spans[spans.len() - 1].t_end;
    let mut path = vec![actual.gripper_px(), drop_px, correct_px];
    if end > frame {
        path.extend(log.gripper_track(frame + 1, end)?);
    }
    path.dedup();

    Ok(SupervisionSample {
        schema: SUPERVISION_SCHEMA,
        episode_seed: log.config.seed,
        frame,
        observation,
        memory_text: render_memory(&plan.split(j)),
        target_plan,
        target_trace: Some(resample_pixels(&path, waypoints)?),
        recovery: true,
        terminal: false,
        image: None,
    })
}
