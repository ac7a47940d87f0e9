use std::path::{Path, PathBuf};

use log::warn;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::kinematics::{ArticulatedTemplate, EntityKind, ScenePose};
use crate::render::Camera;
use crate::templates::{builtin, OBJECT_CATEGORIES};

use super::fs::atomic_write;

pub const SCENE_SCHEMA: &str = "p3haoi-scene/1";
pub const TEMPLATE_SCHEMA: &str = "p3haoi-template/1";
/// Quaternions whose norm is off by at most this much are renormalized with
/// a warning; larger deviations are rejected.
pub const QUATERNION_REPAIR_TOL: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRef {
    pub path: String,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanEntry {
    pub template: String,
    pub pose: ScenePose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectEntry {
    pub template: String,
    pub category: String,
    pub pose: ScenePose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub human: ScenePose,
    pub object: ScenePose,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Real,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub schema: String,
    pub id: String,
    pub image: ImageRef,
    pub camera: Camera,
    pub human: HumanEntry,
    pub object: ObjectEntry,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt: Option<GroundTruth>,
    pub provenance: Provenance,
}

fn pointer_escape(s: &str) -> String {
    s.replace('~', "~0").replace('/', "~1")
}

fn to_pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        match seg {
            Segment::Seq { index } => out.push_str(&format!("/{index}")),
            Segment::Map { key } => out.push_str(&format!("/{}", pointer_escape(key))),
            Segment::Enum { variant } => out.push_str(&format!("/{}", pointer_escape(variant))),
            Segment::Unknown => out.push_str("/?"),
        }
    }
    out
}

/// Deserializes with errors located by JSON pointer. Missing fields are
/// reported at the pointer of the missing member.
pub(crate) fn from_value<T: DeserializeOwned>(value: Value) -> Result<T> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let mut pointer = to_pointer(e.path());
        let message = e.inner().to_string();
        if let Some(field) = message.strip_prefix("missing field `").and_then(|m| m.split('`').next()) {
            pointer.push('/');
            pointer.push_str(&pointer_escape(field));
        }
        Error::doc(pointer, message)
    })
}

pub(crate) fn parse_json(text: &str) -> Result<Value> {
    serde_json::from_str(text).map_err(|e| Error::doc("", format!("malformed JSON: {e}")))
}

fn check_schema(value: &Value, expected: &str) -> Result<()> {
    match value.get("schema") {
        Some(Value::String(s)) if s == expected => Ok(()),
        Some(Value::String(s)) => Err(Error::doc("/schema", format!("unsupported schema `{s}`, expected `{expected}`"))),
        Some(_) => Err(Error::doc("/schema", "schema must be a string")),
        None => Err(Error::doc("/schema", "missing field `schema`")),
    }
}

/// Renormalizes slightly non-unit quaternions in place. Quaternions are the
/// values of `rotation`/`root_rotation` members and of
/// `human_joint_rotations` maps.
pub(crate) fn repair_quaternions(value: &mut Value, pointer: &str, warnings: &mut Vec<String>) -> Result<()> {
    fn fix(v: &mut Value, pointer: &str, warnings: &mut Vec<String>) -> Result<()> {
        let Some(arr) = v.as_array_mut() else { return Ok(()) };
        let nums: Option<Vec<f64>> = arr.iter().map(Value::as_f64).collect();
        let Some(nums) = nums.filter(|n| n.len() == 4) else { return Ok(()) };
        let norm = nums.iter().map(|c| c * c).sum::<f64>().sqrt();
        let off = (norm - 1.0).abs();
        if off <= 1e-9 {
            return Ok(());
        }
        if !(off <= QUATERNION_REPAIR_TOL) {
            return Err(Error::doc(pointer, format!("quaternion norm {norm} is too far from 1")));
        }
        warnings.push(format!("{pointer}: quaternion norm {norm:.6} renormalized"));
        for (slot, c) in arr.iter_mut().zip(&nums) {
            *slot = serde_json::json!(c / norm);
        }
        Ok(())
    }
    match value {
        Value::Object(map) => {
            for (key, child) in map.iter_mut() {
                let p = format!("{pointer}/{}", pointer_escape(key));
                match key.as_str() {
                    "rotation" | "root_rotation" => fix(child, &p, warnings)?,
                    "human_joint_rotations" => {
                        if let Value::Object(joints) = child {
                            for (name, q) in joints.iter_mut() {
                                fix(q, &format!("{p}/{}", pointer_escape(name)), warnings)?;
                            }
                        }
                    }
                    _ => repair_quaternions(child, &p, warnings)?,
                }
            }
        }
        Value::Array(items) => {
            for (i, child) in items.iter_mut().enumerate() {
                repair_quaternions(child, &format!("{pointer}/{i}"), warnings)?;
            }
        }
        _ => {}
    }
    Ok(())
}

fn check_pose_values(pose: &ScenePose, pointer: &str) -> Result<()> {
    if !(pose.root_scale > 0.0 && pose.root_scale.is_finite()) {
        return Err(Error::doc(format!("{pointer}/root_scale"), "root scale must be positive"));
    }
    if !pose.root_translation.iter().all(|c| c.is_finite()) {
        return Err(Error::doc(format!("{pointer}/root_translation"), "translation must be finite"));
    }
    for (k, s) in &pose.part_scales {
        if !(*s > 0.0 && s.is_finite()) {
            return Err(Error::doc(format!("{pointer}/part_scales/{}", pointer_escape(k)), "part scale must be positive"));
        }
    }
    for (k, s) in &pose.joint_states {
        if !s.is_finite() {
            return Err(Error::doc(format!("{pointer}/joint_states/{}", pointer_escape(k)), "joint state must be finite"));
        }
    }
    Ok(())
}

impl Scene {
    /// Checks the invariants that do not need template resolution.
    pub fn validate(&self) -> Result<()> {
        if self.schema != SCENE_SCHEMA {
            return Err(Error::doc("/schema", format!("unsupported schema `{}`", self.schema)));
        }
        if self.id.is_empty() {
            return Err(Error::doc("/id", "scene id must not be empty"));
        }
        if self.image.width == 0 || self.image.height == 0 {
            return Err(Error::doc("/image", "image size must be at least 1x1"));
        }
        self.camera
            .validate()
            .map_err(|e| Error::doc("/camera", e.to_string()))?;
        let cat = self.object.category.as_str();
        if cat != "custom" && !OBJECT_CATEGORIES.contains(&cat) {
            return Err(Error::doc("/object/category", format!("unknown category `{cat}`")));
        }
        check_pose_values(&self.human.pose, "/human/pose")?;
        check_pose_values(&self.object.pose, "/object/pose")?;
        if let Some(gt) = &self.gt {
            check_pose_values(&gt.human, "/gt/human")?;
            check_pose_values(&gt.object, "/gt/object")?;
        }
        Ok(())
    }

    /// Resolves both templates and checks every pose against them.
    pub fn resolve(&self, library: &TemplateLibrary) -> Result<(ArticulatedTemplate, ArticulatedTemplate)> {
        let human = library
            .resolve(&self.human.template)
            .map_err(|e| Error::doc("/human/template", e.to_string()))?;
        let object = library
            .resolve(&self.object.template)
            .map_err(|e| Error::doc("/object/template", e.to_string()))?;
        if human.kind != EntityKind::Human {
            return Err(Error::doc("/human/template", "not a human template"));
        }
        if object.kind != EntityKind::Object {
            return Err(Error::doc("/object/template", "not an object template"));
        }
        let check = |t: &ArticulatedTemplate, pose: &ScenePose, at: &str| {
            t.check_pose(pose).map_err(|e| Error::doc(at, e.to_string()))
        };
        check(&human, &self.human.pose, "/human/pose")?;
        check(&object, &self.object.pose, "/object/pose")?;
        if let Some(gt) = &self.gt {
            check(&human, &gt.human, "/gt/human")?;
            check(&object, &gt.object, "/gt/object")?;
        }
        Ok((human, object))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene serializes")
    }
}

/// Parses a scene document, returning it with any repair warnings.
pub fn parse_scene(text: &str) -> Result<(Scene, Vec<String>)> {
    let mut value = parse_json(text)?;
    check_schema(&value, SCENE_SCHEMA)?;
    let mut warnings = Vec::new();
    repair_quaternions(&mut value, "", &mut warnings)?;
    let scene: Scene = from_value(value)?;
    scene.validate()?;
    Ok((scene, warnings))
}

/// Parses a standalone pose with the same quaternion repair as scene files.
pub fn parse_pose(text: &str) -> Result<(ScenePose, Vec<String>)> {
    let mut value = parse_json(text)?;
    let mut warnings = Vec::new();
    repair_quaternions(&mut value, "", &mut warnings)?;
    Ok((from_value(value)?, warnings))
}

pub fn load_scene(path: &Path) -> Result<Scene> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (scene, warnings) = parse_scene(&text)?;
    for w in warnings {
        warn!("{}: {w}", path.display());
    }
    Ok(scene)
}

pub fn save_scene(scene: &Scene, path: &Path) -> Result<()> {
    scene.validate()?;
    atomic_write(path, scene.to_json().as_bytes())
}

#[derive(Serialize, Deserialize)]
struct TemplateDoc {
    schema: String,
    #[serde(flatten)]
    template: ArticulatedTemplate,
}

pub fn parse_template(text: &str) -> Result<ArticulatedTemplate> {
    let mut value = parse_json(text)?;
    check_schema(&value, TEMPLATE_SCHEMA)?;
    let mut warnings = Vec::new();
    repair_quaternions(&mut value, "", &mut warnings)?;
    for w in warnings {
        warn!("template: {w}");
    }
    let doc: TemplateDoc = from_value(value)?;
    doc.template.validate()?;
    Ok(doc.template)
}

pub fn template_to_json(template: &ArticulatedTemplate) -> String {
    serde_json::to_string_pretty(&TemplateDoc {
        schema: TEMPLATE_SCHEMA.into(),
        template: template.clone(),
    })
    .expect("template serializes")
}

pub fn load_template(path: &Path) -> Result<ArticulatedTemplate> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_template(&text)
}

pub fn save_template(template: &ArticulatedTemplate, path: &Path) -> Result<()> {
    template.validate()?;
    atomic_write(path, template_to_json(template).as_bytes())
}

/// Resolves template references: a `.json` path relative to one of the
/// search directories, `<dir>/<name>.json`, or a built-in name.
#[derive(Debug, Clone, Default)]
pub struct TemplateLibrary {
    pub dirs: Vec<PathBuf>,
}

impl TemplateLibrary {
    pub fn new(dirs: Vec<PathBuf>) -> Self {
        Self { dirs }
    }

    pub fn resolve(&self, name: &str) -> Result<ArticulatedTemplate> {
        let file = if name.ends_with(".json") {
            name.to_string()
        } else {
            format!("{name}.json")
        };
        for dir in &self.dirs {
            let candidate = dir.join(&file);
            if candidate.is_file() {
                return load_template(&candidate);
            }
        }
        if Path::new(name).is_absolute() && Path::new(name).is_file() {
            return load_template(Path::new(name));
        }
        builtin(name).map_err(|_| Error::Schema(format!("template `{name}` not found")))
    }
}
