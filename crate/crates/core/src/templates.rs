//! Built-in templates: a primitive-composed human in T-pose and one
//! articulated object per dataset category.
//!
//! The human uses a y-up frame (feet at y = 0, head top at 1.75 m, the
//! subject's left along +x, facing +z). Objects use a z-up frame standing on
//! z = 0 with the front facing -y.

use nalgebra::{UnitQuaternion, Vector3};

use crate::error::{Error, Result};
use crate::kinematics::{ArticulatedTemplate, EntityKind, JointKind, JointSpec, SkeletonJoint, TemplatePart};
use crate::sq::{ShapeParams, Superquadric};

/// Height of the built-in human, used by the centimetre reporting convention.
pub const HUMAN_HEIGHT: f64 = 1.75;

pub const OBJECT_CATEGORIES: [&str; 18] = [
    "door",
    "refrigerator",
    "microwave",
    "trashcan",
    "cardboard",
    "drawer",
    "car_trunk",
    "car_hood",
    "washing_machine",
    "oven",
    "dishwasher",
    "storage",
    "murphy_bed",
    "book",
    "car_door",
    "big_scissors",
    "laptop",
    "pizza_box",
];

/// SMPL joint names and parents, in SMPL order.
pub const SMPL_JOINTS: [(&str, Option<&str>); 24] = [
    ("pelvis", None),
    ("left_hip", Some("pelvis")),
    ("right_hip", Some("pelvis")),
    ("spine1", Some("pelvis")),
    ("left_knee", Some("left_hip")),
    ("right_knee", Some("right_hip")),
    ("spine2", Some("spine1")),
    ("left_ankle", Some("left_knee")),
    ("right_ankle", Some("right_knee")),
    ("spine3", Some("spine2")),
    ("left_foot", Some("left_ankle")),
    ("right_foot", Some("right_ankle")),
    ("neck", Some("spine3")),
    ("left_collar", Some("spine3")),
    ("right_collar", Some("spine3")),
    ("head", Some("neck")),
    ("left_shoulder", Some("left_collar")),
    ("right_shoulder", Some("right_collar")),
    ("left_elbow", Some("left_shoulder")),
    ("right_elbow", Some("right_shoulder")),
    ("left_wrist", Some("left_elbow")),
    ("right_wrist", Some("right_elbow")),
    ("left_hand", Some("left_wrist")),
    ("right_hand", Some("right_wrist")),
];

fn smpl_rest_position(name: &str) -> Vector3<f64> {
    let (x, y, z) = match name {
        "pelvis" => (0.0, 0.95, 0.0),
        "left_hip" => (0.09, 0.86, 0.0),
        "spine1" => (0.0, 1.06, -0.01),
        "left_knee" => (0.10, 0.49, 0.0),
        "spine2" => (0.0, 1.19, 0.0),
        "left_ankle" => (0.10, 0.08, -0.03),
        "spine3" => (0.0, 1.25, 0.01),
        "left_foot" => (0.11, 0.02, 0.10),
        "neck" => (0.0, 1.47, -0.01),
        "left_collar" => (0.07, 1.40, 0.0),
        "head" => (0.0, 1.55, 0.02),
        "left_shoulder" => (0.18, 1.42, 0.0),
        "left_elbow" => (0.44, 1.42, 0.0),
        "left_wrist" => (0.69, 1.42, 0.0),
        "left_hand" => (0.77, 1.42, 0.0),
        other => {
            let mirrored = other.strip_prefix("right_").map(|s| format!("left_{s}"));
            let p = smpl_rest_position(mirrored.as_deref().expect("known joint"));
            return Vector3::new(-p.x, p.y, p.z);
        }
    };
    Vector3::new(x, y, z)
}

/// Superquadric whose local z runs from `a` to `b`, with cross-section radii
/// `rx`, `ry`.
fn limb(a: Vector3<f64>, b: Vector3<f64>, rx: f64, ry: f64, eps: [f64; 2]) -> Superquadric {
    let d = b - a;
    let rotation = UnitQuaternion::rotation_between(&Vector3::z(), &d).unwrap_or_else(UnitQuaternion::identity);
    Superquadric::new(
        ShapeParams::new([rx, ry, d.norm() / 2.0], eps).expect("valid limb"),
        (a + b) / 2.0,
        rotation,
    )
}

fn blob(center: Vector3<f64>, alpha: [f64; 3], eps: [f64; 2]) -> Superquadric {
    Superquadric::new(
        ShapeParams::new(alpha, eps).expect("valid part"),
        center,
        UnitQuaternion::identity(),
    )
}

/// The built-in human template.
pub fn human_template() -> ArticulatedTemplate {
    let p = smpl_rest_position;
    let v = Vector3::new;
    let round = [0.8, 0.8];
    let mut parts: Vec<(String, String, Superquadric)> = [
        ("pelvis", "pelvis", blob(v(0.0, 0.93, 0.0), [0.16, 0.10, 0.11], [0.6, 0.8])),
        ("spine1", "abdomen", blob(v(0.0, 1.12, 0.0), [0.14, 0.08, 0.10], [0.6, 0.8])),
        ("spine2", "chest", blob(v(0.0, 1.24, 0.01), [0.16, 0.08, 0.11], [0.6, 0.8])),
        ("spine3", "upper_chest", blob(v(0.0, 1.35, 0.0), [0.17, 0.08, 0.10], [0.6, 0.8])),
        ("neck", "neck", limb(p("neck"), p("head"), 0.05, 0.05, [1.0, 1.0])),
        ("head", "head", blob(v(0.0, 1.64, 0.02), [0.08, 0.11, 0.10], [0.9, 0.9])),
    ]
    .into_iter()
    .map(|(b, n, sq)| (b.to_string(), n.to_string(), sq))
    .collect();
    for side in ["left", "right"] {
        let j = |n: &str| p(&format!("{side}_{n}"));
        let outward = j("hand").x.signum();
        let toe = j("foot") + v(0.0, 0.0, 0.08);
        let heel = j("ankle") + v(0.0, -0.05, -0.06);
        let segments = [
            ("shoulder", "upper_arm", limb(j("shoulder"), j("elbow"), 0.045, 0.045, round)),
            ("elbow", "forearm", limb(j("elbow"), j("wrist"), 0.035, 0.035, round)),
            ("wrist", "hand", limb(j("wrist"), j("hand") + v(0.04 * outward, 0.0, 0.0), 0.045, 0.018, [0.5, 0.6])),
            ("hip", "thigh", limb(j("hip"), j("knee"), 0.07, 0.07, round)),
            ("knee", "calf", limb(j("knee"), j("ankle"), 0.05, 0.05, round)),
            ("ankle", "foot", limb(heel, toe, 0.045, 0.03, [0.4, 0.6])),
        ];
        parts.extend(
            segments
                .into_iter()
                .map(|(bone, name, sq)| (format!("{side}_{bone}"), format!("{side}_{name}"), sq)),
        );
    }
    ArticulatedTemplate {
        name: "human".into(),
        kind: EntityKind::Human,
        root: "pelvis".into(),
        parts: parts
            .into_iter()
            .map(|(bone, name, sq)| TemplatePart {
                id: name.clone(),
                name,
                sq,
                bone: Some(bone),
            })
            .collect(),
        joints: Vec::new(),
        skeleton: SMPL_JOINTS
            .iter()
            .map(|(name, parent)| SkeletonJoint {
                name: name.to_string(),
                parent: parent.map(str::to_string),
                position: p(name),
            })
            .collect(),
    }
}

struct Leaf {
    id: &'static str,
    center: [f64; 3],
    alpha: [f64; 3],
    eps: [f64; 2],
    kind: JointKind,
    anchor: [f64; 3],
    axis: [f64; 3],
    limits: [f64; 2],
}

fn object(
    name: &str,
    root_id: &str,
    center: [f64; 3],
    alpha: [f64; 3],
    eps: [f64; 2],
    leaves: &[Leaf],
) -> ArticulatedTemplate {
    let mut parts = vec![TemplatePart {
        id: root_id.into(),
        name: root_id.into(),
        sq: blob(Vector3::from(center), alpha, eps),
        bone: None,
    }];
    let mut joints = Vec::new();
    for (i, l) in leaves.iter().enumerate() {
        parts.push(TemplatePart {
            id: l.id.into(),
            name: l.id.into(),
            sq: blob(Vector3::from(l.center), l.alpha, l.eps),
            bone: None,
        });
        joints.push(JointSpec {
            id: if leaves.len() == 1 { "hinge".into() } else { format!("hinge_{i}") },
            kind: l.kind,
            anchor: Vector3::from(l.anchor),
            axis: Vector3::from(l.axis),
            parent: root_id.into(),
            child: l.id.into(),
            limits: Some(l.limits),
        });
    }
    ArticulatedTemplate {
        name: name.into(),
        kind: EntityKind::Object,
        root: root_id.into(),
        parts,
        joints,
        skeleton: Vec::new(),
    }
}

const BOX: [f64; 2] = [0.1, 0.1];
const SOFT_BOX: [f64; 2] = [0.2, 0.2];
const CYLINDER: [f64; 2] = [0.1, 1.0];

/// Built-in template for a dataset category.
pub fn builtin_object(category: &str) -> Result<ArticulatedTemplate> {
    use JointKind::{Prismatic, Revolute};
    let rev = |id, center, alpha, eps, anchor, axis, limits| Leaf {
        id,
        center,
        alpha,
        eps,
        kind: Revolute,
        anchor,
        axis,
        limits,
    };
    let t = match category {
        "door" => object(
            "door",
            "frame",
            [-0.05, 0.0, 1.0],
            [0.05, 0.06, 1.05],
            BOX,
            &[rev("panel", [0.45, 0.0, 1.0], [0.45, 0.02, 1.0], BOX, [0.0; 3], [0.0, 0.0, 1.0], [-2.0, 2.0])],
        ),
        "refrigerator" => object(
            "refrigerator",
            "body",
            [0.0, 0.0, 0.9],
            [0.4, 0.35, 0.9],
            SOFT_BOX,
            &[rev("door", [0.0, -0.38, 0.9], [0.4, 0.03, 0.88], SOFT_BOX, [0.4, -0.38, 0.0], [0.0, 0.0, 1.0], [0.0, 2.0])],
        ),
        "microwave" => object(
            "microwave",
            "body",
            [0.0, 0.0, 0.15],
            [0.25, 0.18, 0.15],
            SOFT_BOX,
            &[rev("door", [0.0, -0.195, 0.15], [0.25, 0.015, 0.14], SOFT_BOX, [-0.25, -0.195, 0.0], [0.0, 0.0, -1.0], [0.0, 2.0])],
        ),
        "trashcan" => object(
            "trashcan",
            "bin",
            [0.0, 0.0, 0.3],
            [0.15, 0.15, 0.3],
            CYLINDER,
            &[rev("lid", [0.0, 0.0, 0.62], [0.16, 0.16, 0.02], CYLINDER, [0.0, 0.16, 0.6], [-1.0, 0.0, 0.0], [0.0, 1.9])],
        ),
        "cardboard" => object(
            "cardboard",
            "box",
            [0.0, 0.0, 0.15],
            [0.2, 0.15, 0.15],
            BOX,
            &[rev("flap", [0.0, 0.075, 0.305], [0.2, 0.075, 0.005], BOX, [0.0, 0.15, 0.3], [-1.0, 0.0, 0.0], [0.0, 3.0])],
        ),
        "drawer" => object(
            "drawer",
            "cabinet",
            [0.0, 0.0, 0.2],
            [0.3, 0.25, 0.2],
            BOX,
            &[Leaf {
                id: "drawer",
                center: [0.0, -0.04, 0.25],
                alpha: [0.27, 0.22, 0.08],
                eps: BOX,
                kind: Prismatic,
                anchor: [0.0, -0.25, 0.25],
                axis: [0.0, -1.0, 0.0],
                limits: [0.0, 0.4],
            }],
        ),
        "car_trunk" => object(
            "car_trunk",
            "body",
            [0.0, 0.0, 0.5],
            [0.9, 0.6, 0.5],
            SOFT_BOX,
            &[rev("trunk", [0.0, -0.4, 1.03], [0.8, 0.4, 0.03], SOFT_BOX, [0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, 1.6])],
        ),
        "car_hood" => object(
            "car_hood",
            "body",
            [0.0, 0.0, 0.5],
            [0.9, 0.6, 0.5],
            SOFT_BOX,
            &[rev("hood", [0.0, 0.4, 1.03], [0.8, 0.4, 0.03], SOFT_BOX, [0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.6])],
        ),
        "washing_machine" => object(
            "washing_machine",
            "body",
            [0.0, 0.0, 0.42],
            [0.3, 0.3, 0.42],
            SOFT_BOX,
            &[rev("door", [0.0, -0.32, 0.5], [0.16, 0.02, 0.16], [1.0, 1.0], [-0.16, -0.32, 0.5], [0.0, 0.0, -1.0], [0.0, 2.0])],
        ),
        "oven" => object(
            "oven",
            "body",
            [0.0, 0.0, 0.45],
            [0.3, 0.3, 0.45],
            SOFT_BOX,
            &[rev("door", [0.0, -0.32, 0.5], [0.3, 0.02, 0.2], SOFT_BOX, [0.0, -0.32, 0.3], [1.0, 0.0, 0.0], [0.0, 1.6])],
        ),
        "dishwasher" => object(
            "dishwasher",
            "body",
            [0.0, 0.0, 0.42],
            [0.3, 0.3, 0.42],
            SOFT_BOX,
            &[rev("door", [0.0, -0.32, 0.44], [0.3, 0.02, 0.38], SOFT_BOX, [0.0, -0.32, 0.06], [1.0, 0.0, 0.0], [0.0, 1.6])],
        ),
        "storage" => object(
            "storage",
            "cabinet",
            [0.0, 0.0, 0.6],
            [0.4, 0.25, 0.6],
            SOFT_BOX,
            &[
                rev("left_door", [-0.2, -0.265, 0.6], [0.2, 0.015, 0.58], SOFT_BOX, [-0.4, -0.265, 0.0], [0.0, 0.0, -1.0], [0.0, 2.0]),
                rev("right_door", [0.2, -0.265, 0.6], [0.2, 0.015, 0.58], SOFT_BOX, [0.4, -0.265, 0.0], [0.0, 0.0, 1.0], [0.0, 2.0]),
            ],
        ),
        "murphy_bed" => object(
            "murphy_bed",
            "cabinet",
            [0.0, 0.0, 1.0],
            [0.8, 0.15, 1.0],
            BOX,
            &[rev("bed", [0.0, -0.27, 1.0], [0.75, 0.1, 0.95], SOFT_BOX, [0.0, -0.27, 0.05], [1.0, 0.0, 0.0], [0.0, 1.6])],
        ),
        "book" => object(
            "book",
            "back_cover",
            [0.1, 0.0, 0.01],
            [0.1, 0.15, 0.01],
            BOX,
            &[rev("front_cover", [0.1, 0.0, 0.03], [0.1, 0.15, 0.01], BOX, [0.0, 0.0, 0.02], [0.0, -1.0, 0.0], [0.0, 3.1])],
        ),
        "car_door" => object(
            "car_door",
            "body",
            [0.0, 0.0, 0.7],
            [1.2, 0.8, 0.6],
            SOFT_BOX,
            &[rev("door", [0.0, -0.83, 0.8], [0.5, 0.03, 0.4], SOFT_BOX, [0.5, -0.83, 0.8], [0.0, 0.0, 1.0], [0.0, 1.4])],
        ),
        "big_scissors" => object(
            "big_scissors",
            "lower_blade",
            [0.15, 0.0, 0.0],
            [0.3, 0.02, 0.005],
            [0.5, 0.3],
            &[rev("upper_blade", [0.15, 0.0, 0.01], [0.3, 0.02, 0.005], [0.5, 0.3], [0.0, 0.0, 0.005], [0.0, 0.0, 1.0], [-1.2, 1.2])],
        ),
        "laptop" => object(
            "laptop",
            "base",
            [0.0, 0.0, 0.01],
            [0.17, 0.12, 0.01],
            SOFT_BOX,
            &[rev("lid", [0.0, 0.0, 0.025], [0.17, 0.12, 0.005], SOFT_BOX, [0.0, 0.12, 0.02], [-1.0, 0.0, 0.0], [0.0, 2.2])],
        ),
        "pizza_box" => object(
            "pizza_box",
            "base",
            [0.0, 0.0, 0.02],
            [0.2, 0.2, 0.02],
            BOX,
            &[rev("lid", [0.0, 0.0, 0.045], [0.2, 0.2, 0.005], BOX, [0.0, 0.2, 0.04], [-1.0, 0.0, 0.0], [0.0, 2.0])],
        ),
        other => return Err(Error::Schema(format!("no built-in template for category `{other}`"))),
    };
    Ok(t)
}

/// Template by name: `human` or an object category.
pub fn builtin(name: &str) -> Result<ArticulatedTemplate> {
    if name == "human" {
        Ok(human_template())
    } else {
        builtin_object(name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{forward_kinematics, ScenePose};

    #[test]
    fn all_templates_validate() {
        human_template().validate().unwrap();
        for c in OBJECT_CATEGORIES {
            let t = builtin_object(c).unwrap();
            t.validate().unwrap();
            assert!(t.parts.len() >= 2, "{c}");
        }
        assert!(builtin_object("spaceship").is_err());
    }

    #[test]
    fn human_proportions() {
        let t = human_template();
        assert_eq!(t.skeleton.len(), 24);
        let e = forward_kinematics(&t, &ScenePose::default()).unwrap();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for p in &e.parts {
            let m = crate::mesh::tessellate(&p.sq, 16).unwrap();
            let (a, b) = m.bounds().unwrap();
            lo = lo.min(a.y);
            hi = hi.max(b.y);
        }
        assert!((hi - HUMAN_HEIGHT).abs() < 0.01, "top {hi}");
        assert!(lo.abs() < 0.03, "bottom {lo}");
    }

    #[test]
    fn leaves_open_away_from_the_root() {
        // opening any revolute joint halfway must not sink the leaf centre into the root
        for c in OBJECT_CATEGORIES {
            let t = builtin_object(c).unwrap();
            let root = &t.parts[0].sq;
            let mut pose = t.rest_pose();
            for j in &t.joints {
                let [lo, hi] = j.limits.unwrap();
                let state = match j.kind {
                    JointKind::Revolute => lo + 0.5 * (hi - lo),
                    JointKind::Prismatic => hi,
                };
                pose.joint_states.insert(j.id.clone(), state);
            }
            let e = forward_kinematics(&t, &pose).unwrap();
            for p in &e.parts[1..] {
                assert!(root.implicit_world(&p.sq.translation) > 1.0, "{c}: {} inside root", p.id);
            }
        }
    }
}
