use std::path::Path;

use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{ArticulatedTemplate, LimitMode, ScenePose};

use super::scene::{from_value, parse_json, repair_quaternions};

/// Largest allowed discrepancy between a replayed and a recorded pose.
pub const REPLAY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UhOpKind {
    Rotate,
    Translate,
    Scale,
    JointAdjust,
}

/// One annotation operation. `target` is `root`, a part id (Scale) or a
/// joint id (JointAdjust). `delta` is a rotation vector for Rotate, an offset
/// for Translate, a factor for Scale and a state increment for JointAdjust.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UhOp {
    pub op: UhOpKind,
    pub target: String,
    pub delta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub scene_id: String,
    pub annotator: String,
    pub timestamp: String,
    pub final_pose: ScenePose,
    pub ops: Vec<UhOp>,
}

pub fn parse_record(text: &str) -> Result<AnnotationRecord> {
    let mut value = parse_json(text)?;
    let mut warnings = Vec::new();
    repair_quaternions(&mut value, "", &mut warnings)?;
    for w in warnings {
        log::warn!("annotation: {w}");
    }
    from_value(value)
}

pub fn load_record(path: &Path) -> Result<AnnotationRecord> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_record(&text)
}

fn vec3(op: &UhOp) -> Result<Vector3<f64>> {
    match op.delta[..] {
        [x, y, z] if x.is_finite() && y.is_finite() && z.is_finite() => Ok(Vector3::new(x, y, z)),
        _ => Err(Error::Domain(format!("{:?} expects 3 finite components", op.op))),
    }
}

fn scalar(op: &UhOp) -> Result<f64> {
    match op.delta[..] {
        [v] if v.is_finite() => Ok(v),
        _ => Err(Error::Domain(format!("{:?} expects 1 finite component", op.op))),
    }
}

/// Applies one operation to `pose`.
pub fn apply_op(template: &ArticulatedTemplate, pose: &mut ScenePose, op: &UhOp) -> Result<()> {
    let root_only = || {
        if op.target == "root" {
            Ok(())
        } else {
            Err(Error::Schema(format!("{:?} applies to `root`, not `{}`", op.op, op.target)))
        }
    };
    match op.op {
        UhOpKind::Rotate => {
            root_only()?;
            pose.root_rotation = UnitQuaternion::from_scaled_axis(vec3(op)?) * pose.root_rotation;
        }
        UhOpKind::Translate => {
            root_only()?;
            pose.root_translation += vec3(op)?;
        }
        UhOpKind::Scale => {
            let s = scalar(op)?;
            if s <= 0.0 {
                return Err(Error::Domain("scale factor must be positive".into()));
            }
            if op.target == "root" {
                pose.root_scale *= s;
            } else if template.part_index(&op.target).is_some() {
                *pose.part_scales.entry(op.target.clone()).or_insert(1.0) *= s;
            } else {
                return Err(Error::Schema(format!("unknown part `{}`", op.target)));
            }
        }
        UhOpKind::JointAdjust => {
            let joint = template
                .joint(&op.target)
                .ok_or_else(|| Error::Schema(format!("unknown joint `{}`", op.target)))?;
            let state = pose.joint_states.get(&joint.id).copied().unwrap_or(0.0) + scalar(op)?;
            pose.joint_states
                .insert(joint.id.clone(), joint.resolve_state(state, LimitMode::Clamp)?);
        }
    }
    Ok(())
}

/// Replays `ops` from the template's canonical state.
pub fn replay(template: &ArticulatedTemplate, ops: &[UhOp]) -> Result<ScenePose> {
    let mut pose = template.rest_pose();
    for op in ops {
        apply_op(template, &mut pose, op)?;
    }
    Ok(pose)
}

/// Largest component-wise discrepancy between two poses: rotation angle,
/// translation, scales and joint states (absent entries take their neutral
/// values).
pub fn pose_discrepancy(a: &ScenePose, b: &ScenePose) -> f64 {
    let mut worst = a.root_rotation.angle_to(&b.root_rotation);
    worst = worst.max((a.root_translation - b.root_translation).amax());
    worst = worst.max((a.root_scale - b.root_scale).abs());
    let keys = |x: &std::collections::BTreeMap<String, f64>, y: &std::collections::BTreeMap<String, f64>| {
        x.keys().chain(y.keys()).cloned().collect::<std::collections::BTreeSet<_>>()
    };
    for k in keys(&a.part_scales, &b.part_scales) {
        let (x, y) = (a.part_scales.get(&k).unwrap_or(&1.0), b.part_scales.get(&k).unwrap_or(&1.0));
        worst = worst.max((x - y).abs());
    }
    for k in keys(&a.joint_states, &b.joint_states) {
        let (x, y) = (a.joint_states.get(&k).unwrap_or(&0.0), b.joint_states.get(&k).unwrap_or(&0.0));
        worst = worst.max((x - y).abs());
    }
    let names: std::collections::BTreeSet<&String> =
        a.human_joint_rotations.keys().chain(b.human_joint_rotations.keys()).collect();
    for k in names {
        let id = UnitQuaternion::identity();
        let (x, y) = (
            a.human_joint_rotations.get(k).unwrap_or(&id),
            b.human_joint_rotations.get(k).unwrap_or(&id),
        );
        worst = worst.max(x.angle_to(y));
    }
    worst
}

/// Checks that the record's log replays to its final pose.
pub fn verify_record(template: &ArticulatedTemplate, record: &AnnotationRecord) -> Result<()> {
    template.check_pose(&record.final_pose)?;
    let replayed = replay(template, &record.ops)?;
    let d = pose_discrepancy(&replayed, &record.final_pose);
    if d <= REPLAY_TOL {
        Ok(())
    } else {
        Err(Error::ReplayMismatch(d))
    }
}
