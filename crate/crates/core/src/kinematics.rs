//! Articulated templates and forward kinematics.
//!
//! Objects are trees of parts connected by revolute or prismatic joints whose
//! anchors and axes live in the template's canonical frame. Humans are bound to
//! a ball-jointed skeleton; each part follows one bone.
//!
//! Posing an object applies, for every part, the composition
//! `root ∘ joint(parent chain) ∘ scale-about-anchor`, so joint anchors and axes
//! are carried along by the root (and ancestor) transforms before the joint
//! motion is applied.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;

use nalgebra::{Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sq::{quat_wxyz, Superquadric};

/// `x -> scale * R x + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Similarity {
    pub scale: f64,
    #[serde(with = "quat_wxyz")]
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Similarity {
    fn default() -> Self {
        Self::identity()
    }
}

impl Similarity {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn rigid(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            scale: 1.0,
            rotation,
            translation,
        }
    }

    /// Rotation by `rotation` about the point `pivot`.
    pub fn rotation_about(pivot: &Vector3<f64>, rotation: UnitQuaternion<f64>) -> Self {
        Self::rigid(rotation, pivot - rotation * pivot)
    }

    /// Uniform scaling about `pivot`.
    pub fn scaling_about(pivot: &Vector3<f64>, scale: f64) -> Self {
        Self {
            scale,
            rotation: UnitQuaternion::identity(),
            translation: pivot * (1.0 - scale),
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p * self.scale + self.translation
    }

    pub fn apply_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v * self.scale
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Similarity) -> Similarity {
        Similarity {
            scale: self.scale * other.scale,
            rotation: self.rotation * other.rotation,
            translation: self.apply(&other.translation),
        }
    }

    pub fn inverse(&self) -> Similarity {
        let rotation = self.rotation.inverse();
        Similarity {
            scale: 1.0 / self.scale,
            rotation,
            translation: -(rotation * self.translation) / self.scale,
        }
    }

    pub fn apply_sq(&self, sq: &Superquadric) -> Superquadric {
        let mut out = *sq;
        out.shape.alpha = sq.shape.alpha.map(|a| a * self.scale);
        out.translation = self.apply(&sq.translation);
        out.rotation = self.rotation * sq.rotation;
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointKind {
    Revolute,
    Prismatic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointSpec {
    pub id: String,
    pub kind: JointKind,
    pub anchor: Vector3<f64>,
    pub axis: Vector3<f64>,
    pub parent: String,
    pub child: String,
    /// Radians for revolute joints, meters for prismatic ones.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limits: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityKind {
    Human,
    Object,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplatePart {
    pub id: String,
    pub name: String,
    pub sq: Superquadric,
    /// Skeleton joint the part follows (humans only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bone: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonJoint {
    pub name: String,
    #[serde(default)]
    pub parent: Option<String>,
    /// Rest position in the canonical frame.
    pub position: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArticulatedTemplate {
    pub name: String,
    pub kind: EntityKind,
    pub root: String,
    pub parts: Vec<TemplatePart>,
    #[serde(default)]
    pub joints: Vec<JointSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skeleton: Vec<SkeletonJoint>,
}

/// Per-instance deformation state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenePose {
    #[serde(with = "quat_wxyz")]
    pub root_rotation: UnitQuaternion<f64>,
    pub root_translation: Vector3<f64>,
    pub root_scale: f64,
    /// Local scale of individual parts, applied about their joint anchor.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub part_scales: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub joint_states: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty", with = "quat_map")]
    pub human_joint_rotations: BTreeMap<String, UnitQuaternion<f64>>,
}

impl Default for ScenePose {
    fn default() -> Self {
        Self {
            root_rotation: UnitQuaternion::identity(),
            root_translation: Vector3::zeros(),
            root_scale: 1.0,
            part_scales: BTreeMap::new(),
            joint_states: BTreeMap::new(),
            human_joint_rotations: BTreeMap::new(),
        }
    }
}

impl ScenePose {
    pub fn root(&self) -> Similarity {
        Similarity {
            scale: self.root_scale,
            rotation: self.root_rotation,
            translation: self.root_translation,
        }
    }

    /// Left-composes a global similarity onto the root.
    pub fn transformed(&self, g: &Similarity) -> ScenePose {
        let root = g.compose(&self.root());
        ScenePose {
            root_rotation: root.rotation,
            root_translation: root.translation,
            root_scale: root.scale,
            ..self.clone()
        }
    }
}

/// Serde adapter for maps of `[w, x, y, z]` quaternions.
pub mod quat_map {
    use std::collections::BTreeMap;

    use nalgebra::{Quaternion, UnitQuaternion};
    use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &BTreeMap<String, UnitQuaternion<f64>>, s: S) -> Result<S::Ok, S::Error> {
        m.iter()
            .map(|(k, q)| (k, [q.w, q.i, q.j, q.k]))
            .collect::<BTreeMap<_, _>>()
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<String, UnitQuaternion<f64>>, D::Error> {
        BTreeMap::<String, [f64; 4]>::deserialize(d)?
            .into_iter()
            .map(|(k, [w, x, y, z])| {
                let q = Quaternion::new(w, x, y, z);
                let n = q.norm();
                if !n.is_finite() || n < 1e-6 {
                    return Err(D::Error::custom(format!("degenerate quaternion for `{k}`")));
                }
                let q = if (n - 1.0).abs() <= 1e-12 {
                    UnitQuaternion::new_unchecked(q)
                } else {
                    UnitQuaternion::from_quaternion(q)
                };
                Ok((k, q))
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LimitMode {
    /// Out-of-limit joint states are an error.
    #[default]
    Strict,
    /// Out-of-limit joint states are clamped.
    Clamp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosedJoint {
    pub id: String,
    pub kind: JointKind,
    pub anchor: Vector3<f64>,
    pub axis: Vector3<f64>,
    pub state: f64,
    pub child: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limits: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub label: String,
    pub position: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosedPart {
    pub id: String,
    pub sq: Superquadric,
    /// Canonical-to-world transform of the part.
    pub transform: Similarity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosedEntity {
    pub kind: EntityKind,
    pub parts: Vec<PosedPart>,
    pub joints: Vec<PosedJoint>,
    pub keypoints: Vec<Keypoint>,
}

impl PosedEntity {
    pub fn superquadrics(&self) -> Vec<Superquadric> {
        self.parts.iter().map(|p| p.sq).collect()
    }

    /// The entity moved by a global similarity.
    pub fn transformed(&self, g: &Similarity) -> PosedEntity {
        PosedEntity {
            kind: self.kind,
            parts: self
                .parts
                .iter()
                .map(|p| PosedPart {
                    id: p.id.clone(),
                    sq: g.apply_sq(&p.sq),
                    transform: g.compose(&p.transform),
                })
                .collect(),
            joints: self
                .joints
                .iter()
                .map(|j| PosedJoint {
                    anchor: g.apply(&j.anchor),
                    axis: (g.rotation * j.axis).normalize(),
                    ..j.clone()
                })
                .collect(),
            keypoints: self
                .keypoints
                .iter()
                .map(|k| Keypoint {
                    label: k.label.clone(),
                    position: g.apply(&k.position),
                })
                .collect(),
        }
    }
}

fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w <= -PI {
        w + 2.0 * PI
    } else {
        w
    }
}

fn rotation_about_axis(axis: &Vector3<f64>, angle: f64) -> UnitQuaternion<f64> {
    UnitQuaternion::from_axis_angle(&Unit::new_normalize(*axis), angle)
}

/// Rigid motion of a joint whose anchor and axis are given in the frame the
/// motion acts in.
pub fn joint_transform(kind: JointKind, anchor: &Vector3<f64>, axis: &Vector3<f64>, state: f64) -> Result<Similarity> {
    if !state.is_finite() {
        return Err(Error::Domain(format!("non-finite joint state {state}")));
    }
    Ok(match kind {
        JointKind::Revolute => Similarity::rotation_about(anchor, rotation_about_axis(axis, state)),
        JointKind::Prismatic => Similarity::rigid(UnitQuaternion::identity(), axis * state),
    })
}

impl JointSpec {
    pub fn validate(&self) -> Result<()> {
        let n = self.axis.norm();
        if !((n - 1.0).abs() <= 1e-9) {
            return Err(Error::Domain(format!("joint `{}` axis norm {n} is not 1", self.id)));
        }
        if !self.anchor.iter().all(|c| c.is_finite()) {
            return Err(Error::Domain(format!("joint `{}` anchor is not finite", self.id)));
        }
        if let Some([lo, hi]) = self.limits {
            if !(lo <= hi) {
                return Err(Error::Domain(format!("joint `{}` limits [{lo}, {hi}] are inverted", self.id)));
            }
        }
        Ok(())
    }

    /// Applies the limit policy to a raw state.
    pub fn resolve_state(&self, state: f64, mode: LimitMode) -> Result<f64> {
        if !state.is_finite() {
            return Err(Error::Domain(format!("joint `{}` state is not finite", self.id)));
        }
        match self.limits {
            Some([lo, hi]) if state < lo || state > hi => match mode {
                LimitMode::Strict => Err(Error::JointLimit {
                    joint: self.id.clone(),
                    state,
                    min: lo,
                    max: hi,
                }),
                LimitMode::Clamp => Ok(state.clamp(lo, hi)),
            },
            Some(_) => Ok(state),
            None if self.kind == JointKind::Revolute => Ok(wrap_angle(state)),
            None => Ok(state),
        }
    }

    /// Extent of the limit interval, used to normalize prismatic offsets.
    pub fn range(&self) -> Option<f64> {
        self.limits.map(|[lo, hi]| hi - lo)
    }
}

impl ArticulatedTemplate {
    pub fn part_index(&self, id: &str) -> Option<usize> {
        self.parts.iter().position(|p| p.id == id)
    }

    pub fn joint(&self, id: &str) -> Option<&JointSpec> {
        self.joints.iter().find(|j| j.id == id)
    }

    /// Joint whose child is `part`.
    pub fn parent_joint(&self, part: &str) -> Option<&JointSpec> {
        self.joints.iter().find(|j| j.child == part)
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = HashMap::new();
        for (i, p) in self.parts.iter().enumerate() {
            if ids.insert(p.id.as_str(), i).is_some() {
                return Err(Error::Schema(format!("duplicate part id `{}`", p.id)));
            }
            p.sq.validate()?;
        }
        if !ids.contains_key(self.root.as_str()) {
            return Err(Error::Schema(format!("root part `{}` does not exist", self.root)));
        }
        let mut parent_of: HashMap<&str, &str> = HashMap::new();
        let mut joint_ids = HashMap::new();
        for j in &self.joints {
            j.validate()?;
            if joint_ids.insert(j.id.as_str(), ()).is_some() {
                return Err(Error::Schema(format!("duplicate joint id `{}`", j.id)));
            }
            for end in [&j.parent, &j.child] {
                if !ids.contains_key(end.as_str()) {
                    return Err(Error::Schema(format!("joint `{}` references unknown part `{end}`", j.id)));
                }
            }
            if j.child == self.root {
                return Err(Error::Schema(format!("joint `{}` has the root as child", j.id)));
            }
            if parent_of.insert(&j.child, &j.parent).is_some() {
                return Err(Error::Schema(format!("part `{}` has two parent joints", j.child)));
            }
        }
        match self.kind {
            EntityKind::Object => {
                for p in &self.parts {
                    // walk to the root; a cycle or a dangling part never reaches it
                    let mut cur = p.id.as_str();
                    let mut steps = 0;
                    while cur != self.root {
                        cur = parent_of
                            .get(cur)
                            .ok_or_else(|| Error::Schema(format!("part `{}` is not connected to the root", p.id)))?;
                        steps += 1;
                        if steps > self.parts.len() {
                            return Err(Error::Schema("joint graph contains a cycle".into()));
                        }
                    }
                }
            }
            EntityKind::Human => {
                if !self.joints.is_empty() {
                    return Err(Error::Schema("human templates articulate through the skeleton".into()));
                }
                let names: HashMap<&str, usize> =
                    self.skeleton.iter().enumerate().map(|(i, j)| (j.name.as_str(), i)).collect();
                if names.len() != self.skeleton.len() || self.skeleton.is_empty() {
                    return Err(Error::Schema("skeleton joint names must be unique and non-empty".into()));
                }
                for (i, j) in self.skeleton.iter().enumerate() {
                    match &j.parent {
                        None if i != 0 => {
                            return Err(Error::Schema(format!("skeleton joint `{}` has no parent", j.name)))
                        }
                        Some(p) if names.get(p.as_str()).is_none_or(|&pi| pi >= i) => {
                            return Err(Error::Schema(format!(
                                "skeleton joint `{}` must follow its parent `{p}`",
                                j.name
                            )))
                        }
                        _ => {}
                    }
                }
                for p in &self.parts {
                    let bone = p
                        .bone
                        .as_deref()
                        .ok_or_else(|| Error::Schema(format!("human part `{}` has no bone", p.id)))?;
                    if !names.contains_key(bone) {
                        return Err(Error::Schema(format!("part `{}` references unknown bone `{bone}`", p.id)));
                    }
                }
            }
        }
        Ok(())
    }

    /// Checks that every id mentioned by `pose` exists in this template.
    pub fn check_pose(&self, pose: &ScenePose) -> Result<()> {
        if !(pose.root_scale > 0.0 && pose.root_scale.is_finite()) {
            return Err(Error::Domain(format!("root scale {} must be positive", pose.root_scale)));
        }
        for (id, s) in &pose.part_scales {
            if self.part_index(id).is_none() {
                return Err(Error::Schema(format!("pose scales unknown part `{id}`")));
            }
            if !(*s > 0.0 && s.is_finite()) {
                return Err(Error::Domain(format!("part `{id}` scale {s} must be positive")));
            }
        }
        for id in pose.joint_states.keys() {
            if self.joint(id).is_none() {
                return Err(Error::Schema(format!("pose references unknown joint `{id}`")));
            }
        }
        for id in pose.human_joint_rotations.keys() {
            if self.kind != EntityKind::Human {
                return Err(Error::Schema(format!("human joint rotation `{id}` on an object template")));
            }
            if !self.skeleton.iter().any(|j| &j.name == id) {
                return Err(Error::Schema(format!("pose references unknown skeleton joint `{id}`")));
            }
        }
        Ok(())
    }

    /// Pose that leaves the template in its canonical configuration.
    pub fn rest_pose(&self) -> ScenePose {
        ScenePose {
            joint_states: self.joints.iter().map(|j| (j.id.clone(), 0.0)).collect(),
            ..Default::default()
        }
    }
}

/// Poses a template; joint limits are enforced strictly.
pub fn forward_kinematics(template: &ArticulatedTemplate, pose: &ScenePose) -> Result<PosedEntity> {
    forward_kinematics_with(template, pose, LimitMode::Strict)
}

pub fn forward_kinematics_with(template: &ArticulatedTemplate, pose: &ScenePose, mode: LimitMode) -> Result<PosedEntity> {
    template.check_pose(pose)?;
    match template.kind {
        EntityKind::Object => object_fk(template, pose, mode),
        EntityKind::Human => human_fk(template, pose),
    }
}

fn part_scale(pose: &ScenePose, id: &str) -> f64 {
    pose.part_scales.get(id).copied().unwrap_or(1.0)
}

fn object_fk(template: &ArticulatedTemplate, pose: &ScenePose, mode: LimitMode) -> Result<PosedEntity> {
    let root = pose.root();
    // rigid (unscaled by the part itself) transform that carries each part
    let mut carried: HashMap<&str, Similarity> = HashMap::new();
    carried.insert(template.root.as_str(), root);
    let mut joints = Vec::with_capacity(template.joints.len());
    let mut resolved: HashMap<&str, f64> = HashMap::new();
    for j in &template.joints {
        let raw = pose.joint_states.get(&j.id).copied().unwrap_or(0.0);
        resolved.insert(j.id.as_str(), j.resolve_state(raw, mode)?);
    }
    // parents before children: repeat until every part is placed
    let mut pending: Vec<&JointSpec> = template.joints.iter().collect();
    while !pending.is_empty() {
        let before = pending.len();
        pending.retain(|j| {
            let Some(parent) = carried.get(j.parent.as_str()).copied() else {
                return true;
            };
            let state = resolved[j.id.as_str()];
            let motion = joint_transform(j.kind, &j.anchor, &j.axis, state).expect("finite state");
            carried.insert(j.child.as_str(), parent.compose(&motion));
            false
        });
        if pending.len() == before {
            return Err(Error::Schema("joint graph is not a tree rooted at the root part".into()));
        }
    }
    for j in &template.joints {
        let parent = carried[j.parent.as_str()];
        joints.push(PosedJoint {
            id: j.id.clone(),
            kind: j.kind,
            anchor: parent.apply(&j.anchor),
            axis: (parent.rotation * j.axis).normalize(),
            state: resolved[j.id.as_str()],
            child: j.child.clone(),
            limits: j.limits,
        });
    }
    let parts: Vec<PosedPart> = template
        .parts
        .iter()
        .map(|p| {
            let base = carried[p.id.as_str()];
            let s = part_scale(pose, &p.id);
            let transform = if s == 1.0 {
                base
            } else {
                let pivot = template
                    .parent_joint(&p.id)
                    .map(|j| j.anchor)
                    .unwrap_or(p.sq.translation);
                base.compose(&Similarity::scaling_about(&pivot, s))
            };
            PosedPart {
                id: p.id.clone(),
                sq: transform.apply_sq(&p.sq),
                transform,
            }
        })
        .collect();
    let keypoints = parts
        .iter()
        .map(|p| Keypoint {
            label: p.id.clone(),
            position: p.sq.translation,
        })
        .collect();
    Ok(PosedEntity {
        kind: EntityKind::Object,
        parts,
        joints,
        keypoints,
    })
}

fn human_fk(template: &ArticulatedTemplate, pose: &ScenePose) -> Result<PosedEntity> {
    let root = pose.root();
    let mut global: Vec<Similarity> = Vec::with_capacity(template.skeleton.len());
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut keypoints = Vec::with_capacity(template.skeleton.len());
    for (i, j) in template.skeleton.iter().enumerate() {
        let parent = match &j.parent {
            Some(p) => global[index[p.as_str()]],
            None => root,
        };
        let local = pose
            .human_joint_rotations
            .get(&j.name)
            .copied()
            .unwrap_or_else(UnitQuaternion::identity);
        global.push(parent.compose(&Similarity::rotation_about(&j.position, local)));
        index.insert(j.name.as_str(), i);
        keypoints.push(Keypoint {
            label: j.name.clone(),
            position: parent.apply(&j.position),
        });
    }
    let parts = template
        .parts
        .iter()
        .map(|p| {
            let bone = index[p.bone.as_deref().expect("validated template")];
            let s = part_scale(pose, &p.id);
            let transform = if s == 1.0 {
                global[bone]
            } else {
                global[bone].compose(&Similarity::scaling_about(&template.skeleton[bone].position, s))
            };
            PosedPart {
                id: p.id.clone(),
                sq: transform.apply_sq(&p.sq),
                transform,
            }
        })
        .collect();
    Ok(PosedEntity {
        kind: EntityKind::Human,
        parts,
        joints: Vec::new(),
        keypoints,
    })
}

/// World-space centres of every part, in template order.
pub fn part_centers(entity: &PosedEntity) -> Vec<Vector3<f64>> {
    entity.parts.iter().map(|p| p.sq.translation).collect()
}

/// World positions of the skeleton joints of a posed human.
pub fn human_keypoints(entity: &PosedEntity) -> Result<Vec<Keypoint>> {
    if entity.kind != EntityKind::Human {
        return Err(Error::Kind { expected: "human" });
    }
    Ok(entity.keypoints.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::templates::{builtin_object, human_template};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn pose_with(states: &[(&str, f64)]) -> ScenePose {
        ScenePose {
            joint_states: states.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            ..Default::default()
        }
    }

    #[test]
    fn rest_pose_is_canonical() {
        for name in ["laptop", "door", "storage", "drawer"] {
            let t = builtin_object(name).unwrap();
            let e = forward_kinematics(&t, &t.rest_pose()).unwrap();
            for (posed, part) in e.parts.iter().zip(&t.parts) {
                assert_eq!(posed.sq, part.sq);
            }
        }
    }

    #[test]
    fn revolute_round_trip() {
        let t = builtin_object("laptop").unwrap();
        let open = forward_kinematics(&t, &pose_with(&[("hinge", 1.2)])).unwrap();
        let lid = t.part_index("lid").unwrap();
        let back = open.parts[lid].transform.compose(
            &joint_transform(JointKind::Revolute, &t.joints[0].anchor, &t.joints[0].axis, -1.2).unwrap(),
        );
        let p = Vector3::new(0.1, -0.05, 0.03);
        assert!((back.apply(&p) - p).norm() < 1e-9);
    }

    #[test]
    fn door_quarter_turn() {
        let t = builtin_object("door").unwrap();
        let j = &t.joints[0];
        assert_eq!(j.axis, Vector3::z());
        assert_eq!(j.anchor, Vector3::zeros());
        let e = forward_kinematics(&t, &pose_with(&[(j.id.as_str(), FRAC_PI_2)])).unwrap();
        let leaf = t.part_index(&j.child).unwrap();
        let p = e.parts[leaf].transform.apply(&Vector3::new(1.0, 0.0, 0.0));
        assert!((p - Vector3::new(0.0, 1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn joint_transform_examples() {
        let a = Vector3::new(0.3, -1.0, 2.0);
        let id = joint_transform(JointKind::Revolute, &a, &Vector3::x(), 0.0).unwrap();
        assert!((id.apply(&Vector3::new(1.0, 2.0, 3.0)) - Vector3::new(1.0, 2.0, 3.0)).norm() < 1e-15);
        let t = joint_transform(JointKind::Prismatic, &a, &Vector3::z(), 0.3).unwrap();
        assert_eq!(t.translation, Vector3::new(0.0, 0.0, 0.3));
        let full = joint_transform(JointKind::Revolute, &a, &Vector3::y(), 2.0 * PI).unwrap();
        let p = Vector3::new(-4.0, 0.5, 1.0);
        assert!((full.apply(&p) - p).norm() < 1e-9);
        assert!(joint_transform(JointKind::Revolute, &a, &Vector3::y(), f64::NAN).is_err());
    }

    #[test]
    fn limits_are_enforced_or_clamped() {
        let t = builtin_object("laptop").unwrap();
        let [_, hi] = t.joints[0].limits.unwrap();
        let pose = pose_with(&[("hinge", hi + 0.5)]);
        assert!(matches!(forward_kinematics(&t, &pose), Err(Error::JointLimit { .. })));
        let e = forward_kinematics_with(&t, &pose, LimitMode::Clamp).unwrap();
        assert_eq!(e.joints[0].state, hi);
    }

    #[test]
    fn unlimited_revolute_wraps() {
        let j = JointSpec {
            id: "j".into(),
            kind: JointKind::Revolute,
            anchor: Vector3::zeros(),
            axis: Vector3::z(),
            parent: "a".into(),
            child: "b".into(),
            limits: None,
        };
        assert_relative_eq!(j.resolve_state(3.0 * PI, LimitMode::Strict).unwrap(), PI, epsilon = 1e-12);
        assert_relative_eq!(j.resolve_state(-PI, LimitMode::Strict).unwrap(), PI, epsilon = 1e-12);
        assert_relative_eq!(j.resolve_state(0.5, LimitMode::Strict).unwrap(), 0.5);
    }

    #[test]
    fn unknown_ids_are_schema_errors() {
        let t = builtin_object("laptop").unwrap();
        assert!(matches!(forward_kinematics(&t, &pose_with(&[("nope", 0.1)])), Err(Error::Schema(_))));
        let mut p = ScenePose::default();
        p.part_scales.insert("ghost".into(), 1.1);
        assert!(matches!(forward_kinematics(&t, &p), Err(Error::Schema(_))));
    }

    #[test]
    fn part_center_examples() {
        let t = builtin_object("laptop").unwrap();
        let c0 = part_centers(&forward_kinematics(&t, &t.rest_pose()).unwrap());
        let canon: Vec<_> = t.parts.iter().map(|p| p.sq.translation).collect();
        assert_eq!(c0, canon);

        let shifted = ScenePose {
            root_translation: Vector3::new(0.0, 0.0, 2.0),
            ..t.rest_pose()
        };
        let c1 = part_centers(&forward_kinematics(&t, &shifted).unwrap());
        for (a, b) in c1.iter().zip(&canon) {
            assert!((a - b - Vector3::new(0.0, 0.0, 2.0)).norm() < 1e-12);
        }

        // lid centre by hand: rotate (centre - anchor) about the hinge axis by 90 degrees
        let j = &t.joints[0];
        let lid = t.part_index("lid").unwrap();
        let c = part_centers(&forward_kinematics(&t, &pose_with(&[("hinge", FRAC_PI_2)])).unwrap())[lid];
        let d = t.parts[lid].sq.translation - j.anchor;
        let (u, v) = (j.axis, d);
        let rotated = v * 0.0 + u.cross(&v) * 1.0 + u * u.dot(&v) * (1.0 - 0.0);
        assert!((c - (j.anchor + rotated)).norm() < 1e-12);
    }

    #[test]
    fn human_keypoint_examples() {
        let t = human_template();
        let rest = forward_kinematics(&t, &ScenePose::default()).unwrap();
        let kp = human_keypoints(&rest).unwrap();
        for (k, j) in kp.iter().zip(&t.skeleton) {
            assert_eq!(k.label, j.name);
            assert!((k.position - j.position).norm() < 1e-12);
        }

        let moved = ScenePose {
            root_translation: Vector3::new(1.0, 0.0, 0.0),
            ..Default::default()
        };
        for (a, b) in human_keypoints(&forward_kinematics(&t, &moved).unwrap()).unwrap().iter().zip(&kp) {
            assert!((a.position - b.position - Vector3::x()).norm() < 1e-12);
        }

        // shoulder rotated 90 degrees about +z: chain shoulder -> elbow -> wrist by hand
        let mut p = ScenePose::default();
        p.human_joint_rotations
            .insert("left_shoulder".into(), UnitQuaternion::from_axis_angle(&Vector3::z_axis(), FRAC_PI_2));
        let e = forward_kinematics(&t, &p).unwrap();
        let pos = |name: &str| t.skeleton.iter().find(|j| j.name == name).unwrap().position;
        let s = pos("left_shoulder");
        let w = pos("left_wrist");
        let d = w - s;
        let expect = s + Vector3::new(-d.y, d.x, d.z);
        let got = e.keypoints.iter().find(|k| k.label == "left_wrist").unwrap().position;
        assert!((got - expect).norm() < 1e-12, "{got:?} vs {expect:?}");

        let obj = forward_kinematics(&builtin_object("door").unwrap(), &ScenePose::default()).unwrap();
        assert!(matches!(human_keypoints(&obj), Err(Error::Kind { .. })));
    }

    #[test]
    fn sibling_joints_do_not_interact() {
        let t = builtin_object("storage").unwrap();
        assert!(t.joints.len() >= 2);
        let a = forward_kinematics(&t, &t.rest_pose()).unwrap();
        let b = forward_kinematics(&t, &pose_with(&[(t.joints[0].id.as_str(), 0.7)])).unwrap();
        let other = t.part_index(&t.joints[1].child).unwrap();
        assert_eq!(a.parts[other], b.parts[other]);
    }

    #[test]
    fn leaf_scale_keeps_anchor_fixed() {
        let t = builtin_object("laptop").unwrap();
        let mut p = pose_with(&[("hinge", 0.8)]);
        p.part_scales.insert("lid".into(), 1.5);
        let e = forward_kinematics(&t, &p).unwrap();
        let lid = t.part_index("lid").unwrap();
        let anchor = t.joints[0].anchor;
        assert!((e.parts[lid].transform.apply(&anchor) - e.joints[0].anchor).norm() < 1e-12);
        assert_relative_eq!(e.parts[lid].sq.shape.alpha[0], 1.5 * t.parts[lid].sq.shape.alpha[0], epsilon = 1e-12);
    }

    fn arb_similarity() -> impl Strategy<Value = Similarity> {
        (
            0.2f64..3.0,
            [-3.0f64..3.0, -1.5..1.5, -3.0..3.0],
            [-5.0f64..5.0, -5.0..5.0, -5.0..5.0],
        )
            .prop_map(|(s, r, t)| Similarity {
                scale: s,
                rotation: UnitQuaternion::from_euler_angles(r[0], r[1], r[2]),
                translation: Vector3::from(t),
            })
    }

    proptest! {
        #[test]
        fn rigid_composition(g in arb_similarity(), root in arb_similarity(), state in -1.0f64..1.0, idx in 0usize..18) {
            let names = crate::templates::OBJECT_CATEGORIES;
            let t = builtin_object(names[idx]).unwrap();
            let mut pose = ScenePose {
                root_rotation: root.rotation,
                root_translation: root.translation,
                root_scale: root.scale,
                ..t.rest_pose()
            };
            for j in &t.joints {
                let v = match j.limits { Some([lo, hi]) => lo + (hi - lo) * (state + 1.0) / 2.0, None => state };
                pose.joint_states.insert(j.id.clone(), v);
            }
            let a = forward_kinematics(&t, &pose).unwrap();
            let b = forward_kinematics(&t, &pose.transformed(&g)).unwrap();
            for (pa, pb) in a.parts.iter().zip(&b.parts) {
                let moved = g.apply_sq(&pa.sq);
                prop_assert!((moved.translation - pb.sq.translation).norm() < 1e-9);
                prop_assert!(moved.rotation.angle_to(&pb.sq.rotation) < 1e-9);
                for k in 0..3 {
                    prop_assert!((moved.shape.alpha[k] - pb.sq.shape.alpha[k]).abs() < 1e-9);
                    prop_assert!(pb.sq.shape.alpha[k] > 0.0);
                }
            }
            let again = forward_kinematics(&t, &pose).unwrap();
            prop_assert_eq!(a, again);
        }

        #[test]
        fn human_rigid_composition(g in arb_similarity(), angles in proptest::collection::vec([-1.0f64..1.0, -1.0..1.0, -1.0..1.0], 24)) {
            let t = human_template();
            let mut pose = ScenePose::default();
            for (j, a) in t.skeleton.iter().zip(&angles) {
                pose.human_joint_rotations.insert(j.name.clone(), UnitQuaternion::from_euler_angles(a[0], a[1], a[2]));
            }
            let a = forward_kinematics(&t, &pose).unwrap();
            let b = forward_kinematics(&t, &pose.transformed(&g)).unwrap();
            for (ka, kb) in a.keypoints.iter().zip(&b.keypoints) {
                prop_assert!((g.apply(&ka.position) - kb.position).norm() < 1e-9);
            }
        }
    }
}
