//! Synthetic scenes with known ground truth, and pose perturbations.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{Unit, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::scene::{GroundTruth, HumanEntry, ImageRef, ObjectEntry, Provenance, Scene, SCENE_SCHEMA};
use crate::kinematics::{forward_kinematics_with, ArticulatedTemplate, JointKind, LimitMode, PosedEntity, ScenePose};
use crate::losses::{interpenetration_loss, penetration_of_points};
use crate::render::{entity_meshes, Camera};
use crate::templates::{builtin_object, human_template};

/// Categories placed at hand height rather than on the floor.
pub const HANDHELD: [&str; 4] = ["book", "big_scissors", "laptop", "pizza_box"];

pub const SYNTHETIC_CAMERA: Camera = Camera {
    fx: 300.0,
    fy: 300.0,
    cx: 128.0,
    cy: 128.0,
    width: 256,
    height: 256,
};

fn bounds(entity: &PosedEntity) -> Result<(Vector3<f64>, Vector3<f64>)> {
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for m in entity_meshes(entity, 1, 16)? {
        for v in &m.mesh.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
    }
    Ok((lo, hi))
}

fn random_unit(rng: &mut ChaCha8Rng) -> Unit<Vector3<f64>> {
    loop {
        let v = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return Unit::new_normalize(v);
        }
    }
}

/// Builds a scene with a random human pose and a random object state placed
/// beside the human. Both entries and the ground truth hold the same poses.
pub fn synthetic_scene(category: &str, id: &str, seed: u64) -> Result<Scene> {
    let object_t = builtin_object(category)?;
    let human_t = human_template();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let up = Vector3::y_axis();

    let mut human = human_t.rest_pose();
    human.root_rotation = UnitQuaternion::from_axis_angle(&up, rng.random_range(-0.5..0.5))
        * UnitQuaternion::from_axis_angle(&Vector3::x_axis(), PI);
    for j in human_t.skeleton.iter().skip(1) {
        let axis = random_unit(&mut rng);
        human
            .human_joint_rotations
            .insert(j.name.clone(), UnitQuaternion::from_axis_angle(&axis, rng.random_range(0.0..0.2)));
    }

    let mut object = object_t.rest_pose();
    object.root_rotation = UnitQuaternion::from_axis_angle(&up, rng.random_range(-0.7..0.7))
        * UnitQuaternion::from_axis_angle(&Vector3::x_axis(), FRAC_PI_2);
    for j in &object_t.joints {
        let state = match j.limits {
            Some([lo, hi]) => lo + rng.random_range(0.2..0.8) * (hi - lo),
            None => rng.random_range(-1.0..1.0),
        };
        object.joint_states.insert(j.id.clone(), state);
    }

    // camera y points down, so the floor is at the largest y
    let (h_lo, h_hi) = bounds(&forward_kinematics_with(&human_t, &human, LimitMode::Clamp)?)?;
    let (o_lo, o_hi) = bounds(&forward_kinematics_with(&object_t, &object, LimitMode::Clamp)?)?;
    let floor = 0.0;
    human.root_translation = Vector3::new(-h_hi.x, floor - h_hi.y, -0.5 * (h_lo.z + h_hi.z));
    let gap = rng.random_range(0.05..0.2);
    let lift = if HANDHELD.contains(&category) { 0.45 * (h_hi.y - h_lo.y) } else { 0.0 };
    object.root_translation = Vector3::new(gap - o_lo.x, floor - lift - o_hi.y, -0.5 * (o_lo.z + o_hi.z));

    // centre the pair and back off until it fits the view
    let lo = (h_lo + human.root_translation).inf(&(o_lo + object.root_translation));
    let hi = (h_hi + human.root_translation).sup(&(o_hi + object.root_translation));
    let centre = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let tan = SYNTHETIC_CAMERA.cx / SYNTHETIC_CAMERA.fx;
    let depth = (half.x.max(half.y) / (0.8 * tan) + half.z).max(3.5) + rng.random_range(0.0..0.5);
    let shift = Vector3::new(-centre.x, -centre.y, depth - centre.z);
    human.root_translation += shift;
    object.root_translation += shift;

    let posed_h = forward_kinematics_with(&human_t, &human, LimitMode::Clamp)?;
    for _ in 0..20 {
        let posed_o = forward_kinematics_with(&object_t, &object, LimitMode::Clamp)?;
        if interpenetration_loss(&posed_o, &posed_h, 200, seed) == 0.0 {
            return Ok(Scene {
                schema: SCENE_SCHEMA.into(),
                id: id.into(),
                image: ImageRef {
                    path: format!("images/{id}.png"),
                    width: SYNTHETIC_CAMERA.width,
                    height: SYNTHETIC_CAMERA.height,
                },
                camera: SYNTHETIC_CAMERA,
                human: HumanEntry {
                    template: human_t.name.clone(),
                    pose: human.clone(),
                },
                object: ObjectEntry {
                    template: object_t.name.clone(),
                    category: category.into(),
                    pose: object.clone(),
                },
                gt: Some(GroundTruth { human, object }),
                provenance: Provenance::Synthetic,
            });
        }
        object.root_translation.x += 0.05;
    }
    Err(Error::Domain(format!("could not separate the {category} from the human")))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbBounds {
    /// Largest root rotation, radians.
    pub rotation: f64,
    /// Largest root translation, metres.
    pub translation: f64,
    /// Largest revolute joint offset, radians.
    pub joint: f64,
    /// Largest prismatic offset as a fraction of the joint range.
    pub prismatic: f64,
}

impl Default for PerturbBounds {
    fn default() -> Self {
        Self {
            rotation: 15f64.to_radians(),
            translation: 0.2,
            joint: 20f64.to_radians(),
            prismatic: 0.2,
        }
    }
}

/// Random object pose within `bounds` of `pose`. The root is rotated about
/// the posed bounding-box centre so that rotation does not also translate.
pub fn perturb_object(template: &ArticulatedTemplate, pose: &ScenePose, bounds_: &PerturbBounds, seed: u64) -> Result<ScenePose> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = bounds(&forward_kinematics_with(template, pose, LimitMode::Clamp)?)?;
    let centre = 0.5 * (lo + hi);
    let rot = UnitQuaternion::from_axis_angle(&random_unit(&mut rng), rng.random_range(0.0..=bounds_.rotation));
    let mut out = pose.clone();
    out.root_rotation = rot * pose.root_rotation;
    out.root_translation = rot * (pose.root_translation - centre) + centre;
    out.root_translation += random_unit(&mut rng).into_inner() * rng.random_range(0.0..=bounds_.translation);
    for j in &template.joints {
        let max = match (j.kind, j.range()) {
            (JointKind::Revolute, _) => bounds_.joint,
            (JointKind::Prismatic, Some(r)) => bounds_.prismatic * r,
            (JointKind::Prismatic, None) => bounds_.prismatic,
        };
        let s = pose.joint_states.get(&j.id).copied().unwrap_or(0.0) + rng.random_range(-max..=max);
        out.joint_states.insert(j.id.clone(), j.resolve_state(s, LimitMode::Clamp)?);
    }
    Ok(out)
}

/// Fraction of object surface points that lie inside the human, for checks.
pub fn penetrating(object: &PosedEntity, human: &PosedEntity, n: usize, seed: u64) -> bool {
    let pts: Vec<_> = object
        .parts
        .iter()
        .enumerate()
        .flat_map(|(k, p)| crate::surface::sample_points(&p.sq, n, seed + k as u64))
        .collect();
    penetration_of_points(&pts, human) > 0.0
}
