//! Deterministic 2D tabletop simulator with grasp-slip failure injection.
//!
//! The gripper is a point that moves by a clipped velocity each step and can
//! rigidly carry one graspable object. Randomness is drawn only when a
//! `CloseGrasp` engages an object, always three draws per attempt, so two runs
//! with the same seed see the same slip outcome for the n-th attempt.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{PixelProjection, Point2, Workspace};
use crate::model::{ModelError, ObjectId, ObjectView, Observation, Plan, Primitive, Verb};

pub const SCENE_SCHEMA: u32 = 1;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("unsupported scene schema {0}, expected {SCENE_SCHEMA}")]
    Schema(u32),
    #[error("workspace bounds are empty or not finite")]
    Workspace,
    #[error("duplicate object id {0}")]
    DuplicateObject(ObjectId),
    #[error("{what} at ({}, {}) lies outside the workspace", .at.x, .at.y)]
    OutOfBounds { what: String, at: Point2 },
    #[error("plan references unknown object {0}")]
    UnknownObject(ObjectId),
    #[error("plan grasps non-graspable object {0}")]
    NotGraspable(ObjectId),
    #[error("the simulator cannot execute `{0}` primitives")]
    UnsupportedVerb(Verb),
    #[error("object {0} has more than one destination in the plan")]
    MultipleDestinations(ObjectId),
    #[error("invalid failure config: {0}")]
    Failure(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("scene json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Simulator constants, all in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    pub grasp_radius: f64,
    pub place_tolerance: f64,
    pub v_max: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            grasp_radius: 0.02,
            place_tolerance: 0.03,
            v_max: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FailureConfig {
    pub p_slip: f64,
    pub drop_radius: f64,
}

impl Default for FailureConfig {
    fn default() -> Self {
        Self {
            p_slip: 0.0,
            drop_radius: 0.05,
        }
    }
}

impl FailureConfig {
    pub fn validate(&self) -> Result<(), SceneError> {
        if !(0.0..=1.0).contains(&self.p_slip) {
            return Err(SceneError::Failure(format!("p_slip {} not in [0, 1]", self.p_slip)));
        }
        if !(self.drop_radius >= 0.0 && self.drop_radius.is_finite()) {
            return Err(SceneError::Failure(format!(
                "drop_radius {} must be finite and >= 0",
                self.drop_radius
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GripperCmd {
    #[default]
    Hold,
    CloseGrasp,
    OpenRelease,
}

/// Velocity command in meters per step plus a gripper command.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Action {
    pub velocity: Point2,
    pub gripper_cmd: GripperCmd,
}

impl Action {
    pub fn hold() -> Self {
        Self::default()
    }

    /// Clips each velocity component to `[-v_max, v_max]`; non-finite components become zero.
    pub fn clipped(self, v_max: f64) -> Self {
        let clip = |v: f64| if v.is_finite() { v.clamp(-v_max, v_max) } else { 0.0 };
        Self {
            velocity: Point2::new(clip(self.velocity.x), clip(self.velocity.y)),
            gripper_cmd: self.gripper_cmd,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub id: ObjectId,
    pub pos: Point2,
    #[serde(default = "yes")]
    pub graspable: bool,
}

fn yes() -> bool {
    true
}

/// Scene description file (JSON, `schema: 1`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SceneRepr", into = "SceneRepr")]
pub struct Scene {
    pub workspace: Workspace,
    pub gripper: Point2,
    pub objects: Vec<SceneObject>,
    pub plan: Plan,
    pub seed: u64,
    pub failure: FailureConfig,
    pub params: SimParams,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneRepr {
    schema: u32,
    #[serde(default)]
    workspace: Workspace,
    #[serde(default)]
    gripper: Option<Point2>,
    objects: Vec<SceneObject>,
    plan: Vec<Primitive>,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    failure: FailureConfig,
    #[serde(default)]
    params: SimParams,
}

impl TryFrom<SceneRepr> for Scene {
    type Error = SceneError;
    fn try_from(r: SceneRepr) -> Result<Self, Self::Error> {
        if r.schema != SCENE_SCHEMA {
            return Err(SceneError::Schema(r.schema));
        }
        let scene = Scene {
            gripper: r.gripper.unwrap_or_else(|| r.workspace.center()),
            workspace: r.workspace,
            objects: r.objects,
            plan: Plan::new(r.plan),
            seed: r.seed,
            failure: r.failure,
            params: r.params,
        };
        scene.validate()?;
        Ok(scene)
    }
}

impl From<Scene> for SceneRepr {
    fn from(s: Scene) -> Self {
        SceneRepr {
            schema: SCENE_SCHEMA,
            workspace: s.workspace,
            gripper: Some(s.gripper),
            objects: s.objects,
            plan: s.plan.into(),
            seed: s.seed,
            failure: s.failure,
            params: s.params,
        }
    }
}

impl Scene {
    pub fn from_json(text: &str) -> Result<Self, SceneError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn object(&self, id: &ObjectId) -> Option<&SceneObject> {
        self.objects.iter().find(|o| &o.id == id)
    }

    pub fn object_ids(&self) -> Vec<String> {
        self.objects.iter().map(|o| o.id.to_string()).collect()
    }

    pub fn projection(&self) -> PixelProjection {
        self.workspace.projection()
    }

    /// Checks that `plan` only references objects in this scene and only uses
    /// primitives the simulator can execute.
    pub fn check_plan(&self, plan: &Plan) -> Result<(), SceneError> {
        let mut placed = BTreeSet::new();
        for p in plan.steps() {
            let obj = self
                .object(p.target())
                .ok_or_else(|| SceneError::UnknownObject(p.target().clone()))?;
            match p.verb() {
                Verb::Grasp if !obj.graspable => {
                    return Err(SceneError::NotGraspable(obj.id.clone()))
                }
                Verb::Grasp | Verb::Drop => {}
                Verb::Place => {
                    if !placed.insert(p.target().clone()) {
                        return Err(SceneError::MultipleDestinations(p.target().clone()));
                    }
                }
                v @ (Verb::Push | Verb::Open | Verb::Close) => {
                    return Err(SceneError::UnsupportedVerb(v))
                }
            }
            if let Some(d) = p.destination() {
                let at = d.to_meters();
                if !self.workspace.contains(at) {
                    return Err(SceneError::OutOfBounds {
                        what: format!("destination of {}", p.target()),
                        at,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if !self.workspace.is_valid() {
            return Err(SceneError::Workspace);
        }
        self.failure.validate()?;
        if !self.workspace.contains(self.gripper) {
            return Err(SceneError::OutOfBounds {
                what: "gripper".into(),
                at: self.gripper,
            });
        }
        let mut seen = BTreeSet::new();
        for o in &self.objects {
            if !seen.insert(&o.id) {
                return Err(SceneError::DuplicateObject(o.id.clone()));
            }
            if !self.workspace.contains(o.pos) {
                return Err(SceneError::OutOfBounds {
                    what: format!("object {}", o.id),
                    at: o.pos,
                });
            }
        }
        self.check_plan(&self.plan)
    }

    /// Final destination of each object that the plan places somewhere.
    pub fn destinations(&self) -> BTreeMap<ObjectId, Point2> {
        self.plan
            .steps()
            .iter()
            .filter_map(|p| p.destination().map(|d| (p.target().clone(), d.to_meters())))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectState {
    pub pos: Point2,
    pub graspable: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttachmentKind {
    Grasp,
    Release,
    Slip,
}

/// A change of contact state. `frame` is the first frame whose observation shows the change.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttachmentEvent {
    pub frame: u64,
    pub object: ObjectId,
    pub kind: AttachmentKind,
}

#[derive(Debug, Clone)]
pub struct WorldState {
    frame: u64,
    gripper: Point2,
    gripper_closed: bool,
    objects: BTreeMap<ObjectId, ObjectState>,
    attachment: Option<ObjectId>,
    destinations: BTreeMap<ObjectId, Point2>,
    workspace: Workspace,
    params: SimParams,
    rng: ChaCha8Rng,
}

impl WorldState {
    pub fn new(scene: &Scene, seed: u64) -> Self {
        Self {
            frame: 0,
            gripper: scene.gripper,
            gripper_closed: false,
            objects: scene
                .objects
                .iter()
                .map(|o| {
                    (
                        o.id.clone(),
                        ObjectState {
                            pos: o.pos,
                            graspable: o.graspable,
                        },
                    )
                })
                .collect(),
            attachment: None,
            destinations: scene.destinations(),
            workspace: scene.workspace,
            params: scene.params,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn frame(&self) -> u64 {
        self.frame
    }

    pub fn gripper(&self) -> Point2 {
        self.gripper
    }

    pub fn gripper_closed(&self) -> bool {
        self.gripper_closed
    }

    pub fn attachment(&self) -> Option<&ObjectId> {
        self.attachment.as_ref()
    }

    pub fn objects(&self) -> &BTreeMap<ObjectId, ObjectState> {
        &self.objects
    }

    pub fn params(&self) -> &SimParams {
        &self.params
    }

    pub fn workspace(&self) -> &Workspace {
        &self.workspace
    }

    fn at_destination(&self, id: &ObjectId, pos: Point2) -> bool {
        self.destinations
            .get(id)
            .is_some_and(|d| d.distance(pos) <= self.params.place_tolerance)
    }

    pub fn observe(&self) -> Observation {
        let proj = self.workspace.projection();
        let objects = self
            .objects
            .iter()
            .map(|(id, o)| {
                (
                    id.clone(),
                    ObjectView {
                        px: proj.to_pixel(o.pos),
                        graspable: o.graspable,
                        at_destination: self.at_destination(id, o.pos),
                    },
                )
            })
            .collect();
        Observation::new(
            self.frame,
            proj.to_pixel(self.gripper),
            objects,
            self.attachment.clone(),
        )
        .expect("world state projects into a valid observation")
    }

    fn nearest_graspable(&self) -> Option<ObjectId> {
        self.objects
            .iter()
            .filter(|(_, o)| o.graspable)
            .map(|(id, o)| (id, o.pos.distance(self.gripper)))
            .filter(|(_, d)| *d <= self.params.grasp_radius)
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(id, _)| id.clone())
    }

    /// Advances one frame. Motion is applied first, then the gripper command
    /// is evaluated at the new gripper position.
    pub fn step(&mut self, action: Action, failure: &FailureConfig) -> (Observation, Option<AttachmentEvent>) {
        let action = action.clipped(self.params.v_max);
        self.gripper = self.workspace.clamp(Point2::new(
            self.gripper.x + action.velocity.x,
            self.gripper.y + action.velocity.y,
        ));
        self.frame += 1;
        if let Some(id) = &self.attachment {
            if let Some(o) = self.objects.get_mut(id) {
                o.pos = self.gripper;
            }
        }

        let event = match action.gripper_cmd {
            GripperCmd::Hold => None,
            GripperCmd::CloseGrasp => {
                self.gripper_closed = true;
                self.try_grasp(failure)
            }
            GripperCmd::OpenRelease => {
                self.gripper_closed = false;
                self.attachment.take().map(|object| AttachmentEvent {
                    frame: self.frame,
                    object,
                    kind: AttachmentKind::Release,
                })
            }
        };
        (self.observe(), event)
    }

    fn try_grasp(&mut self, failure: &FailureConfig) -> Option<AttachmentEvent> {
        if self.attachment.is_some() {
            return None;
        }
        let id = self.nearest_graspable()?;
        let u: f64 = self.rng.random();
        let r = failure.drop_radius * self.rng.random::<f64>().sqrt();
        let theta = TAU * self.rng.random::<f64>();
        let obj = self.objects.get_mut(&id).expect("nearest object exists");
        let kind = if u < failure.p_slip {
            obj.pos = self.workspace.clamp(Point2::new(
                obj.pos.x + r * theta.cos(),
                obj.pos.y + r * theta.sin(),
            ));
            AttachmentKind::Slip
        } else {
            obj.pos = self.gripper;
            self.attachment = Some(id.clone());
            AttachmentKind::Grasp
        };
        Some(AttachmentEvent {
            frame: self.frame,
            object: id,
            kind,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Pixel;

    pub(crate) fn two_object_scene() -> Scene {
        Scene::from_json(
            r#"{
                "schema": 1,
                "gripper": [0.5, 0.5],
                "objects": [
                    {"id": "cup", "pos": [0.2, 0.3]},
                    {"id": "sponge", "pos": [0.7, 0.3]}
                ],
                "plan": [
                    {"verb": "grasp", "target": "cup"},
                    {"verb": "place", "target": "cup", "destination": [0.2, 0.8]}
                ]
            }"#,
        )
        .unwrap()
    }

    fn moved(v: (f64, f64), cmd: GripperCmd) -> Action {
        Action {
            velocity: Point2::new(v.0, v.1),
            gripper_cmd: cmd,
        }
    }

    #[test]
    fn identity_action_keeps_state() {
        let scene = two_object_scene();
        let mut w = WorldState::new(&scene, 1);
        let before = w.observe();
        let (after, ev) = w.step(Action::hold(), &FailureConfig::default());
        assert!(ev.is_none());
        assert_eq!(after.frame(), before.frame() + 1);
        assert_eq!(after.gripper_px(), before.gripper_px());
        assert_eq!(after.objects(), before.objects());
        assert_eq!(after.held(), before.held());
    }

    #[test]
    fn corners_and_center_project_exactly() {
        let mut scene = two_object_scene();
        for (g, px) in [
            ((0.0, 0.0), (0, 0)),
            ((1.0, 1.0), (1000, 1000)),
            ((0.5, 0.5), (500, 500)),
        ] {
            scene.gripper = Point2::new(g.0, g.1);
            let obs = WorldState::new(&scene, 0).observe();
            assert_eq!(obs.gripper_px(), Pixel::new(px.0, px.1));
        }
    }

    #[test]
    fn velocity_is_clipped_and_position_clamped() {
        let scene = two_object_scene();
        let mut w = WorldState::new(&scene, 0);
        w.step(moved((1.0, -0.01), GripperCmd::Hold), &FailureConfig::default());
        assert_eq!(w.gripper(), Point2::new(0.55, 0.49));
        for _ in 0..20 {
            w.step(moved((0.05, 0.0), GripperCmd::Hold), &FailureConfig::default());
        }
        assert_eq!(w.gripper().x, 1.0);
    }

    #[test]
    fn grasp_out_of_range_does_not_attach() {
        let scene = two_object_scene();
        let mut w = WorldState::new(&scene, 0);
        let (obs, ev) = w.step(moved((0.0, 0.0), GripperCmd::CloseGrasp), &FailureConfig::default());
        assert!(ev.is_none());
        assert!(obs.held().is_none());
    }

    #[test]
    fn grasp_in_range_attaches_and_carries() {
        let mut scene = two_object_scene();
        scene.gripper = Point2::new(0.21, 0.3);
        let mut w = WorldState::new(&scene, 0);
        let (obs, ev) = w.step(Action { velocity: Point2::default(), gripper_cmd: GripperCmd::CloseGrasp }, &FailureConfig::default());
        let ev = ev.unwrap();
        assert_eq!(ev.kind, AttachmentKind::Grasp);
        assert_eq!(ev.frame, 1);
        assert_eq!(obs.held().unwrap().as_str(), "cup");
        w.step(moved((0.0, 0.05), GripperCmd::Hold), &FailureConfig::default());
        let cup = &w.objects()[&ObjectId::new("cup").unwrap()];
        assert_eq!(cup.pos, w.gripper());
        let (obs, ev) = w.step(moved((0.0, 0.0), GripperCmd::OpenRelease), &FailureConfig::default());
        assert_eq!(ev.unwrap().kind, AttachmentKind::Release);
        assert!(obs.held().is_none());
    }

    #[test]
    fn certain_slip_never_attaches() {
        let mut scene = two_object_scene();
        scene.gripper = Point2::new(0.2, 0.3);
        let failure = FailureConfig {
            p_slip: 1.0,
            drop_radius: 0.01,
        };
        for seed in 0..100 {
            let mut w = WorldState::new(&scene, seed);
            let before = w.objects()[&ObjectId::new("cup").unwrap()].pos;
            let (obs, ev) = w.step(moved((0.0, 0.0), GripperCmd::CloseGrasp), &failure);
            assert_eq!(ev.unwrap().kind, AttachmentKind::Slip);
            assert!(obs.held().is_none());
            let after = w.objects()[&ObjectId::new("cup").unwrap()].pos;
            assert_ne!(before, after);
            assert!(before.distance(after) <= 0.01 + 1e-12);
        }
    }

    #[test]
    fn at_destination_flag() {
        let mut scene = two_object_scene();
        scene.objects[0].pos = Point2::new(0.2, 0.78);
        let obs = WorldState::new(&scene, 0).observe();
        assert!(obs.at_destination(&ObjectId::new("cup").unwrap()));
        assert!(!obs.at_destination(&ObjectId::new("sponge").unwrap()));
    }

    #[test]
    fn same_seed_same_rollout() {
        let mut scene = two_object_scene();
        scene.gripper = Point2::new(0.2, 0.3);
        let failure = FailureConfig { p_slip: 0.5, drop_radius: 0.015 };
        let run = |seed| {
            let mut w = WorldState::new(&scene, seed);
            (0..50)
                .map(|i| {
                    let cmd = if i % 3 == 0 { GripperCmd::CloseGrasp } else { GripperCmd::OpenRelease };
                    w.step(moved((0.001, -0.001), cmd), &failure)
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(run(9), run(9));
    }

    #[test]
    fn scene_validation_errors() {
        let base = r#"{"schema": 1, "objects": [{"id": "cup", "pos": [0.2, 0.3]}], "plan": PLAN}"#;
        let bad = |plan: &str| Scene::from_json(&base.replace("PLAN", plan)).unwrap_err().to_string();
        assert!(bad(r#"[{"verb": "grasp", "target": "mug"}]"#).contains("unknown object"));
        assert!(bad(r#"[{"verb": "open", "target": "cup"}]"#).contains("cannot execute"));
        assert!(bad(r#"[{"verb": "place", "target": "cup", "destination": [2.0, 0.0]}]"#).contains("outside"));
        assert!(Scene::from_json(r#"{"schema": 2, "objects": [], "plan": []}"#).is_err());
    }
}
