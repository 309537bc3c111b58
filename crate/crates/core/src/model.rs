//! Domain types shared across the planner, executor, simulator and curator.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Pixel, Point2};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid object id {0:?}: expected [A-Za-z0-9_-]+")]
    InvalidObjectId(String),
    #[error("{verb} requires a destination")]
    MissingDestination { verb: Verb },
    #[error("{verb} does not take a destination")]
    UnexpectedDestination { verb: Verb },
    #[error("destination coordinate {0} is not finite")]
    NonFiniteDestination(f64),
    #[error("trace needs at least 2 waypoints, got {0}")]
    TraceTooShort(usize),
    #[error("pixel ({}, {}) outside [0, 1000]", .0.x, .0.y)]
    PixelOutOfRange(Pixel),
    #[error("held object {0} is not in the observation")]
    UnknownHeld(ObjectId),
    #[error("primitive ids must be positional: expected {expected}, found {found}")]
    NonPositionalId { expected: u32, found: u32 },
    #[error("completed and remaining share primitive id {0}")]
    DuplicateId(u32),
}

/// Identifier of a scene object. Restricted to `[A-Za-z0-9_-]+` so it can be
/// embedded in memory text without quoting.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ObjectId(String);

impl ObjectId {
    pub fn new(id: impl Into<String>) -> Result<Self, ModelError> {
        let id = id.into();
        let ok = !id.is_empty()
            && id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
        if ok {
            Ok(Self(id))
        } else {
            Err(ModelError::InvalidObjectId(id))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for ObjectId {
    type Error = ModelError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        Self::new(s)
    }
}

impl From<ObjectId> for String {
    fn from(id: ObjectId) -> Self {
        id.0
    }
}

impl fmt::Display for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::borrow::Borrow<str> for ObjectId {
    fn borrow(&self) -> &str {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verb {
    Grasp,
    Place,
    Push,
    Open,
    Close,
    Drop,
}

impl Verb {
    pub const ALL: [Verb; 6] = [
        Verb::Grasp,
        Verb::Place,
        Verb::Push,
        Verb::Open,
        Verb::Close,
        Verb::Drop,
    ];

    pub fn takes_destination(self) -> bool {
        matches!(self, Verb::Place | Verb::Push)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Verb::Grasp => "grasp",
            Verb::Place => "place",
            Verb::Push => "push",
            Verb::Open => "open",
            Verb::Close => "close",
            Verb::Drop => "drop",
        }
    }

    pub fn parse(s: &str) -> Option<Verb> {
        Verb::ALL.into_iter().find(|v| v.as_str() == s)
    }
}

impl fmt::Display for Verb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A workspace destination, stored on a 1 mm grid so its textual form
/// (meters, 3 decimals) parses back to the identical value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "[f64; 2]", into = "[f64; 2]")]
pub struct Destination {
    x_mm: i64,
    y_mm: i64,
}

impl Destination {
    pub const fn from_mm(x_mm: i64, y_mm: i64) -> Self {
        Self { x_mm, y_mm }
    }

    /// Rounds meters onto the millimeter grid.
    pub fn from_meters(x: f64, y: f64) -> Result<Self, ModelError> {
        for v in [x, y] {
            if !v.is_finite() {
                return Err(ModelError::NonFiniteDestination(v));
            }
        }
        Ok(Self {
            x_mm: (x * 1000.0).round() as i64,
            y_mm: (y * 1000.0).round() as i64,
        })
    }

    pub fn mm(self) -> (i64, i64) {
        (self.x_mm, self.y_mm)
    }

    pub fn to_meters(self) -> Point2 {
        Point2::new(self.x_mm as f64 / 1000.0, self.y_mm as f64 / 1000.0)
    }
}

impl TryFrom<[f64; 2]> for Destination {
    type Error = ModelError;
    fn try_from([x, y]: [f64; 2]) -> Result<Self, Self::Error> {
        Self::from_meters(x, y)
    }
}

impl From<Destination> for [f64; 2] {
    fn from(d: Destination) -> Self {
        let p = d.to_meters();
        [p.x, p.y]
    }
}

/// An atomic interaction primitive. The id is the primitive's position in the
/// ordered sequence it belongs to.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "PrimitiveRepr", into = "PrimitiveRepr")]
pub struct Primitive {
    id: u32,
    verb: Verb,
    target: ObjectId,
    destination: Option<Destination>,
}

#[derive(Serialize, Deserialize)]
struct PrimitiveRepr {
    #[serde(default)]
    id: u32,
    verb: Verb,
    target: ObjectId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    destination: Option<Destination>,
}

impl TryFrom<PrimitiveRepr> for Primitive {
    type Error = ModelError;
    fn try_from(r: PrimitiveRepr) -> Result<Self, Self::Error> {
        Primitive::new(r.id, r.verb, r.target, r.destination)
    }
}

impl From<Primitive> for PrimitiveRepr {
    fn from(p: Primitive) -> Self {
        PrimitiveRepr {
            id: p.id,
            verb: p.verb,
            target: p.target,
            destination: p.destination,
        }
    }
}

impl Primitive {
    pub fn new(
        id: u32,
        verb: Verb,
        target: ObjectId,
        destination: Option<Destination>,
    ) -> Result<Self, ModelError> {
        match (verb.takes_destination(), destination.is_some()) {
            (true, false) => return Err(ModelError::MissingDestination { verb }),
            (false, true) => return Err(ModelError::UnexpectedDestination { verb }),
            _ => {}
        }
        Ok(Self {
            id,
            verb,
            target,
            destination,
        })
    }

    pub fn id(&self) -> u32 {
        self.id
    }

    pub fn verb(&self) -> Verb {
        self.verb
    }

    pub fn target(&self) -> &ObjectId {
        &self.target
    }

    pub fn destination(&self) -> Option<Destination> {
        self.destination
    }

    pub fn with_id(mut self, id: u32) -> Self {
        self.id = id;
        self
    }

    /// Equality ignoring the positional id.
    pub fn same_action(&self, other: &Primitive) -> bool {
        self.verb == other.verb && self.target == other.target && self.destination == other.destination
    }
}

fn renumber(steps: impl IntoIterator<Item = Primitive>, start: u32) -> Vec<Primitive> {
    steps
        .into_iter()
        .zip(start..)
        .map(|(p, id)| p.with_id(id))
        .collect()
}

/// The full ordered primitive sequence of an episode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Primitive>", into = "Vec<Primitive>")]
pub struct Plan(Vec<Primitive>);

impl Plan {
    /// Builds a plan, assigning positional ids.
    pub fn new(steps: impl IntoIterator<Item = Primitive>) -> Self {
        Plan(renumber(steps, 0))
    }

    pub fn steps(&self) -> &[Primitive] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Splits into the first `k` completed primitives and the rest; `k` is clamped to the plan length.
    pub fn split(&self, k: usize) -> PlanState {
        let k = k.min(self.0.len());
        PlanState {
            completed: self.0[..k].to_vec(),
            remaining: self.0[k..].to_vec(),
        }
    }
}

impl TryFrom<Vec<Primitive>> for Plan {
    type Error = ModelError;
    fn try_from(steps: Vec<Primitive>) -> Result<Self, Self::Error> {
        for (expected, p) in (0u32..).zip(&steps) {
            if p.id != expected {
                return Err(ModelError::NonPositionalId {
                    expected,
                    found: p.id,
                });
            }
        }
        Ok(Plan(steps))
    }
}

impl From<Plan> for Vec<Primitive> {
    fn from(p: Plan) -> Self {
        p.0
    }
}

/// Completed prefix and remaining suffix of a plan.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "PlanStateRepr", into = "PlanStateRepr")]
pub struct PlanState {
    completed: Vec<Primitive>,
    remaining: Vec<Primitive>,
}

#[derive(Serialize, Deserialize)]
struct PlanStateRepr {
    completed: Vec<Primitive>,
    remaining: Vec<Primitive>,
}

impl TryFrom<PlanStateRepr> for PlanState {
    type Error = ModelError;
    fn try_from(r: PlanStateRepr) -> Result<Self, Self::Error> {
        let mut seen = std::collections::BTreeSet::new();
        for p in r.completed.iter().chain(&r.remaining) {
            if !seen.insert(p.id) {
                return Err(ModelError::DuplicateId(p.id));
            }
        }
        Ok(PlanState {
            completed: r.completed,
            remaining: r.remaining,
        })
    }
}

impl From<PlanState> for PlanStateRepr {
    fn from(s: PlanState) -> Self {
        PlanStateRepr {
            completed: s.completed,
            remaining: s.remaining,
        }
    }
}

impl PlanState {
    /// Builds a state from completed and remaining sequences, assigning
    /// positional ids across `completed ++ remaining`.
    pub fn from_parts(
        completed: impl IntoIterator<Item = Primitive>,
        remaining: impl IntoIterator<Item = Primitive>,
    ) -> Self {
        let completed = renumber(completed, 0);
        let remaining = renumber(remaining, completed.len() as u32);
        PlanState {
            completed,
            remaining,
        }
    }

    pub fn completed(&self) -> &[Primitive] {
        &self.completed
    }

    pub fn remaining(&self) -> &[Primitive] {
        &self.remaining
    }

    /// Index of the current primitive, i.e. the number of completed ones.
    pub fn split_index(&self) -> usize {
        self.completed.len()
    }

    pub fn next(&self) -> Option<&Primitive> {
        self.remaining.first()
    }

    pub fn is_done(&self) -> bool {
        self.remaining.is_empty()
    }

    /// True when `completed ++ remaining` is exactly `plan`, ids included.
    pub fn is_split_of(&self, plan: &Plan) -> bool {
        self.completed.len() + self.remaining.len() == plan.len()
            && self
                .completed
                .iter()
                .chain(&self.remaining)
                .eq(plan.steps().iter())
    }

    /// Returns a copy with `primitive` inserted at the head of `remaining`.
    pub fn with_recovery(&self, primitive: Primitive) -> PlanState {
        PlanState::from_parts(
            self.completed.iter().cloned(),
            std::iter::once(primitive).chain(self.remaining.iter().cloned()),
        )
    }

    /// Strips a leading recovery `Drop` that is not part of `plan` and checks
    /// the remainder is a split of `plan`.
    pub fn nominal_split_of(&self, plan: &Plan) -> bool {
        if self.is_split_of(plan) {
            return true;
        }
        let k = self.completed.len();
        match self.remaining.first() {
            Some(head) if head.verb == Verb::Drop => {
                let planned = plan.steps().get(k).is_some_and(|p| p.same_action(head));
                !planned && PlanState::from_parts(self.completed.clone(), self.remaining[1..].to_vec())
                    .is_split_of(plan)
            }
            _ => false,
        }
    }
}

/// An ordered list of image-frame waypoints with at least two entries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Pixel>", into = "Vec<Pixel>")]
pub struct Trace {
    waypoints: Vec<Pixel>,
}

impl Trace {
    pub fn new(waypoints: Vec<Pixel>) -> Result<Self, ModelError> {
        if waypoints.len() < 2 {
            return Err(ModelError::TraceTooShort(waypoints.len()));
        }
        if let Some(p) = waypoints.iter().find(|p| !p.in_frame()) {
            return Err(ModelError::PixelOutOfRange(*p));
        }
        Ok(Self { waypoints })
    }

    pub fn waypoints(&self) -> &[Pixel] {
        &self.waypoints
    }

    pub fn head(&self) -> Pixel {
        self.waypoints[0]
    }

    pub fn last(&self) -> Pixel {
        self.waypoints[self.waypoints.len() - 1]
    }

    pub fn as_f64(&self) -> Vec<(f64, f64)> {
        self.waypoints.iter().map(|p| p.as_f64()).collect()
    }
}

impl TryFrom<Vec<Pixel>> for Trace {
    type Error = ModelError;
    fn try_from(w: Vec<Pixel>) -> Result<Self, Self::Error> {
        Trace::new(w)
    }
}

impl From<Trace> for Vec<Pixel> {
    fn from(t: Trace) -> Self {
        t.waypoints
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectView {
    pub px: Pixel,
    pub graspable: bool,
    pub at_destination: bool,
}

/// What a single camera frame shows: gripper and object pixels, destination
/// flags and the grasped object.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "ObservationRepr", into = "ObservationRepr")]
pub struct Observation {
    frame: u64,
    gripper_px: Pixel,
    objects: BTreeMap<ObjectId, ObjectView>,
    held: Option<ObjectId>,
}

#[derive(Serialize, Deserialize)]
struct ObservationRepr {
    frame: u64,
    gripper_px: Pixel,
    objects: BTreeMap<ObjectId, ObjectView>,
    held: Option<ObjectId>,
}

impl TryFrom<ObservationRepr> for Observation {
    type Error = ModelError;
    fn try_from(r: ObservationRepr) -> Result<Self, Self::Error> {
        Observation::new(r.frame, r.gripper_px, r.objects, r.held)
    }
}

impl From<Observation> for ObservationRepr {
    fn from(o: Observation) -> Self {
        ObservationRepr {
            frame: o.frame,
            gripper_px: o.gripper_px,
            objects: o.objects,
            held: o.held,
        }
    }
}

impl Observation {
    pub fn new(
        frame: u64,
        gripper_px: Pixel,
        objects: BTreeMap<ObjectId, ObjectView>,
        held: Option<ObjectId>,
    ) -> Result<Self, ModelError> {
        if !gripper_px.in_frame() {
            return Err(ModelError::PixelOutOfRange(gripper_px));
        }
        if let Some(v) = objects.values().find(|v| !v.px.in_frame()) {
            return Err(ModelError::PixelOutOfRange(v.px));
        }
        if let Some(h) = &held {
            if !objects.contains_key(h) {
                return Err(ModelError::UnknownHeld(h.clone()));
            }
        }
        Ok(Self {
            frame,
            gripper_px,
            objects,
            held,
        })
    }

    pub fn frame(&self) -> u64 {
        self.frame
    }

    pub fn gripper_px(&self) -> Pixel {
        self.gripper_px
    }

    pub fn objects(&self) -> &BTreeMap<ObjectId, ObjectView> {
        &self.objects
    }

    pub fn object(&self, id: &ObjectId) -> Option<&ObjectView> {
        self.objects.get(id)
    }

    pub fn held(&self) -> Option<&ObjectId> {
        self.held.as_ref()
    }

    pub fn is_held(&self, id: &ObjectId) -> bool {
        self.held.as_ref() == Some(id)
    }

    pub fn at_destination(&self, id: &ObjectId) -> bool {
        self.objects.get(id).is_some_and(|o| o.at_destination)
    }

    pub fn object_ids(&self) -> impl Iterator<Item = &ObjectId> {
        self.objects.keys()
    }

    /// Copy with the held object replaced, moving the new one under the gripper.
    /// The previously held object, if any, is moved to `release_at`.
    pub fn with_held(&self, held: ObjectId, release_at: Pixel) -> Result<Self, ModelError> {
        let mut objects = self.objects.clone();
        if let Some(prev) = &self.held {
            if let Some(v) = objects.get_mut(prev) {
                v.px = release_at;
            }
        }
        match objects.get_mut(&held) {
            Some(v) => v.px = self.gripper_px,
            None => return Err(ModelError::UnknownHeld(held)),
        }
        Observation::new(self.frame, self.gripper_px, objects, Some(held))
    }
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;

    pub fn oid(s: &str) -> ObjectId {
        ObjectId::new(s).unwrap()
    }

    pub fn grasp(target: &str) -> Primitive {
        Primitive::new(0, Verb::Grasp, oid(target), None).unwrap()
    }

    pub fn place(target: &str, x: f64, y: f64) -> Primitive {
        Primitive::new(
            0,
            Verb::Place,
            oid(target),
            Some(Destination::from_meters(x, y).unwrap()),
        )
        .unwrap()
    }

    pub fn drop_(target: &str) -> Primitive {
        Primitive::new(0, Verb::Drop, oid(target), None).unwrap()
    }

    pub fn view(x: i32, y: i32, at_destination: bool) -> ObjectView {
        ObjectView {
            px: Pixel::new(x, y),
            graspable: true,
            at_destination,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::test_support::*;
    use super::*;

    #[test]
    fn destination_presence_matches_verb() {
        assert!(matches!(
            Primitive::new(0, Verb::Place, oid("cup"), None),
            Err(ModelError::MissingDestination { .. })
        ));
        let d = Destination::from_mm(1, 2);
        assert!(matches!(
            Primitive::new(0, Verb::Grasp, oid("cup"), Some(d)),
            Err(ModelError::UnexpectedDestination { .. })
        ));
        assert!(Primitive::new(0, Verb::Push, oid("cup"), Some(d)).is_ok());
    }

    #[test]
    fn object_ids_are_restricted() {
        assert!(ObjectId::new("red_cup-2").is_ok());
        for bad in ["", "a b", "cup;", "x|y", "(c)"] {
            assert!(ObjectId::new(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn split_preserves_plan() {
        let plan = Plan::new([grasp("cup"), place("cup", 0.4, 0.2), grasp("box")]);
        for k in 0..=plan.len() {
            let s = plan.split(k);
            assert_eq!(s.split_index(), k);
            assert_eq!(s.completed().len() + s.remaining().len(), plan.len());
            assert!(s.is_split_of(&plan));
        }
    }

    #[test]
    fn recovery_state_is_nominal_after_stripping_drop() {
        let plan = Plan::new([grasp("cup"), place("cup", 0.4, 0.2)]);
        let rec = plan.split(0).with_recovery(drop_("sponge"));
        assert!(!rec.is_split_of(&plan));
        assert!(rec.nominal_split_of(&plan));
        assert_eq!(rec.remaining()[0].verb(), Verb::Drop);
    }

    #[test]
    fn trace_rejects_short_or_out_of_range() {
        assert!(matches!(
            Trace::new(vec![Pixel::new(0, 0)]),
            Err(ModelError::TraceTooShort(1))
        ));
        assert!(matches!(
            Trace::new(vec![Pixel::new(0, 0), Pixel::new(1001, 3)]),
            Err(ModelError::PixelOutOfRange(_))
        ));
    }

    #[test]
    fn observation_rejects_unknown_held() {
        let err = Observation::new(0, Pixel::new(1, 1), BTreeMap::new(), Some(oid("cup")));
        assert!(matches!(err, Err(ModelError::UnknownHeld(_))));
    }

    #[test]
    fn plan_json_requires_positional_ids() {
        let ok: Plan = serde_json::from_str(r#"[{"id":0,"verb":"grasp","target":"cup"}]"#).unwrap();
        assert_eq!(ok.len(), 1);
        let bad = serde_json::from_str::<Plan>(r#"[{"id":3,"verb":"grasp","target":"cup"}]"#);
        assert!(bad.is_err());
    }
}
