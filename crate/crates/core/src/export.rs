//! Scene-level image export and template geometry for clients.

use std::path::Path;
use std::str::FromStr;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::scene::{Scene, TemplateLibrary};
use crate::kinematics::{forward_kinematics_with, ArticulatedTemplate, LimitMode, ScenePose};
use crate::mesh::tessellate;
use crate::render::{overlay_png, render_entities, DEFAULT_TESSELLATION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RenderMode {
    Mask,
    Iuv,
    Overlay,
}

impl FromStr for RenderMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mask" => Ok(Self::Mask),
            "iuv" => Ok(Self::Iuv),
            "overlay" => Ok(Self::Overlay),
            other => Err(Error::Domain(format!("unknown render mode `{other}`"))),
        }
    }
}

/// Renders the scene at its camera resolution. `object_pose` replaces the
/// stored object pose; overlays use the scene image resolved against
/// `base_dir` when it exists.
pub fn render_scene_png(
    scene: &Scene,
    library: &TemplateLibrary,
    object_pose: Option<&ScenePose>,
    mode: RenderMode,
    base_dir: &Path,
) -> Result<Vec<u8>> {
    let (human_t, object_t) = scene.resolve(library)?;
    let object_pose = object_pose.unwrap_or(&scene.object.pose);
    object_t.check_pose(object_pose)?;
    let human = forward_kinematics_with(&human_t, &scene.human.pose, LimitMode::Clamp)?;
    let object = forward_kinematics_with(&object_t, object_pose, LimitMode::Clamp)?;
    let frame = render_entities(&[&human, &object], &scene.camera, DEFAULT_TESSELLATION)?;
    match mode {
        RenderMode::Mask => frame.mask.to_png(),
        RenderMode::Iuv => frame.iuv.to_png(),
        RenderMode::Overlay => {
            let path = base_dir.join(&scene.image.path);
            let background = if path.is_file() {
                Some(
                    image::open(&path)
                        .map_err(|e| Error::Domain(format!("cannot read {}: {e}", path.display())))?
                        .to_rgb8(),
                )
            } else {
                None
            };
            overlay_png(&frame.mask, background.as_ref())
        }
    }
}

/// Template-frame mesh of one part.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartGeometry {
    pub id: String,
    pub vertices: Vec<Vector3<f64>>,
    pub faces: Vec<[u32; 3]>,
}

pub fn template_geometry(template: &ArticulatedTemplate, resolution: usize) -> Result<Vec<PartGeometry>> {
    template
        .parts
        .iter()
        .map(|p| {
            let m = tessellate(&p.sq, resolution)?;
            Ok(PartGeometry {
                id: p.id.clone(),
                vertices: m.vertices,
                faces: m.faces,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::MaskMap;
    use crate::synthetic::synthetic_scene;

    #[test]
    fn pose_override_changes_only_the_object() {
        let s = synthetic_scene("laptop", "l", 2).unwrap();
        let lib = TemplateLibrary::new(vec![]);
        let dir = Path::new(".");
        let base = render_scene_png(&s, &lib, None, RenderMode::Mask, dir).unwrap();
        assert_eq!(render_scene_png(&s, &lib, Some(&s.object.pose), RenderMode::Mask, dir).unwrap(), base);
        let mut moved = s.object.pose.clone();
        moved.root_translation.x += 0.2;
        let other = render_scene_png(&s, &lib, Some(&moved), RenderMode::Mask, dir).unwrap();
        let (a, b) = (MaskMap::from_png(&base).unwrap(), MaskMap::from_png(&other).unwrap());
        assert_eq!((1..=18).map(|l| a.count(l)).sum::<usize>(), (1..=18).map(|l| b.count(l)).sum::<usize>());
        assert_ne!(a, b);
        assert!(render_scene_png(&s, &lib, None, RenderMode::Overlay, dir).is_ok());
        assert!("depth".parse::<RenderMode>().is_err());
    }

    #[test]
    fn geometry_per_part() {
        let t = crate::templates::builtin_object("storage").unwrap();
        let g = template_geometry(&t, 8).unwrap();
        assert_eq!(g.len(), t.parts.len());
        assert!(g.iter().all(|p| !p.faces.is_empty()));
    }
}
