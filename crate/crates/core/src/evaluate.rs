//! Scene-level loss evaluation: poses both entities, renders them and
//! compares against ground-truth targets.

use std::collections::BTreeMap;

use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::chamfer::chamfer_distance;
use crate::error::{Error, Result};
use crate::kinematics::{forward_kinematics_with, ArticulatedTemplate, LimitMode, PosedEntity, ScenePose};
use crate::losses::{
    entity_sample_angles, hoi_loss, iuv_loss, joint_angle_human, joint_angle_object, keypoint_2d_loss, keypoint_l1,
    mask_loss, penetration_of_points, points_at_angles, total_loss, LossReport, LossTerms, LossWeights,
};
use crate::render::{composite, rasterize, Camera, Frame, TemplateMeshes, DEFAULT_RENDER_SIZE, DEFAULT_TESSELLATION};
use crate::surface::sample_angles;
use crate::templates::HUMAN_HEIGHT;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Long side of the supervision renders, in pixels.
    pub render_size: u32,
    pub tessellation: usize,
    /// Surface samples per entity for the Chamfer term.
    pub surface_samples: usize,
    /// Surface samples per object part for the interpenetration term.
    pub interp_samples: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            render_size: DEFAULT_RENDER_SIZE,
            tessellation: DEFAULT_TESSELLATION,
            surface_samples: 1000,
            interp_samples: 200,
            seed: 0,
        }
    }
}

/// Converts a length in metres to centimetres under the convention that the
/// human is 175 cm tall.
pub fn to_centimetres(metres: f64) -> f64 {
    metres * 175.0 / HUMAN_HEIGHT
}

/// Posed state of one entity with everything the losses read from it.
#[derive(Debug, Clone)]
pub struct EntityState {
    pub pose: ScenePose,
    pub entity: PosedEntity,
    pub frame: Frame,
    pub surface: Vec<Vector3<f64>>,
}

/// Targets derived from a ground-truth pose pair.
#[derive(Debug, Clone)]
pub struct Targets {
    pub human: EntityState,
    pub object: EntityState,
    pub frame: Frame,
    human_rotations: BTreeMap<String, UnitQuaternion<f64>>,
}

/// Templates, camera and cached geometry for one scene.
#[derive(Debug, Clone)]
pub struct SceneModel {
    pub human: ArticulatedTemplate,
    pub object: ArticulatedTemplate,
    /// Camera at supervision resolution.
    pub camera: Camera,
    pub config: EvalConfig,
    human_meshes: TemplateMeshes,
    object_meshes: TemplateMeshes,
    human_angles: Vec<Vec<(f64, f64)>>,
    object_angles: Vec<Vec<(f64, f64)>>,
    interp_angles: Vec<Vec<(f64, f64)>>,
    num_parts: u16,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Human,
    Object,
}

impl SceneModel {
    pub fn new(human: ArticulatedTemplate, object: ArticulatedTemplate, camera: &Camera, config: EvalConfig) -> Result<Self> {
        camera.validate()?;
        let rest_h = forward_kinematics_with(&human, &human.rest_pose(), LimitMode::Clamp)?;
        let rest_o = forward_kinematics_with(&object, &object.rest_pose(), LimitMode::Clamp)?;
        let interp_angles = rest_o
            .parts
            .iter()
            .enumerate()
            .map(|(k, p)| sample_angles(&p.sq, config.interp_samples, config.seed.wrapping_add(k as u64)))
            .collect();
        let num_parts = u16::try_from(human.parts.len() + object.parts.len())
            .map_err(|_| Error::Label("too many parts".into()))?;
        Ok(Self {
            human_meshes: TemplateMeshes::new(&human, config.tessellation)?,
            object_meshes: TemplateMeshes::new(&object, config.tessellation)?,
            human_angles: entity_sample_angles(&rest_h, config.surface_samples, config.seed),
            object_angles: entity_sample_angles(&rest_o, config.surface_samples, config.seed.wrapping_add(1000)),
            interp_angles,
            camera: camera.with_long_side(config.render_size),
            human,
            object,
            config,
            num_parts,
        })
    }

    pub fn num_parts(&self) -> u16 {
        self.num_parts
    }

    fn state(&self, role: Role, pose: &ScenePose) -> Result<EntityState> {
        let (template, meshes, angles, first) = match role {
            Role::Human => (&self.human, &self.human_meshes, &self.human_angles, 1),
            Role::Object => (&self.object, &self.object_meshes, &self.object_angles, 1 + self.human.parts.len() as u16),
        };
        let entity = forward_kinematics_with(template, pose, LimitMode::Clamp)?;
        let meshes = meshes.pose(&entity, first);
        let frame = rasterize(&meshes.iter().collect::<Vec<_>>(), &self.camera);
        Ok(EntityState {
            pose: pose.clone(),
            surface: points_at_angles(&entity, angles),
            entity,
            frame,
        })
    }

    pub fn human_state(&self, pose: &ScenePose) -> Result<EntityState> {
        self.state(Role::Human, pose)
    }

    pub fn object_state(&self, pose: &ScenePose) -> Result<EntityState> {
        self.state(Role::Object, pose)
    }

    /// Renders the composed scene at supervision resolution.
    pub fn render(&self, human: &EntityState, object: &EntityState) -> Frame {
        composite(&[&human.frame, &object.frame])
    }

    fn full_rotations(&self, pose: &ScenePose) -> BTreeMap<String, UnitQuaternion<f64>> {
        self.human
            .skeleton
            .iter()
            .map(|j| {
                let q = pose.human_joint_rotations.get(&j.name).copied().unwrap_or_else(UnitQuaternion::identity);
                (j.name.clone(), q)
            })
            .collect()
    }

    pub fn targets(&self, human: &ScenePose, object: &ScenePose) -> Result<Targets> {
        let h = self.human_state(human)?;
        let o = self.object_state(object)?;
        Ok(Targets {
            frame: self.render(&h, &o),
            human_rotations: self.full_rotations(human),
            human: h,
            object: o,
        })
    }

    /// Object surface points at which interpenetration is measured.
    pub fn interp_points(&self, object: &PosedEntity) -> Vec<Vector3<f64>> {
        points_at_angles(object, &self.interp_angles)
    }

    /// Evaluates the loss terms. Terms whose weight is zero in `only` are
    /// skipped and reported as 0.
    pub fn terms(&self, targets: &Targets, human: &EntityState, object: &EntityState, only: Option<&LossWeights>) -> Result<LossTerms> {
        let on = |w: fn(&LossWeights) -> f64| only.is_none_or(|ws| w(ws) > 0.0);
        let mut t = LossTerms::default();
        if on(|w| w.w_mask) || on(|w| w.w_iuv) {
            let frame = self.render(human, object);
            if on(|w| w.w_mask) {
                t.mask = mask_loss(&frame.mask, &targets.frame.mask)?;
            }
            if on(|w| w.w_iuv) {
                (t.iuv_ce, t.iuv_uv) = iuv_loss(&frame.iuv, &targets.frame.iuv, self.num_parts)?;
            }
        }
        if on(|w| w.w_kp3d) {
            t.kp3d = keypoint_l1(&human.entity.keypoints, &targets.human.entity.keypoints)?
                + keypoint_l1(&object.entity.keypoints, &targets.object.entity.keypoints)?;
        }
        if on(|w| w.w_angle) {
            t.angle = joint_angle_object(&object.entity, &targets.object.entity)?
                + joint_angle_human(&self.full_rotations(&human.pose), &targets.human_rotations)?;
        }
        if on(|w| w.w_surface) {
            t.surface = chamfer_distance(&human.surface, &targets.human.surface)?
                + chamfer_distance(&object.surface, &targets.object.surface)?;
        }
        if on(|w| w.w_hoi) {
            t.hoi = hoi_loss(
                &targets.human.entity.keypoints,
                &targets.object.entity.keypoints,
                &human.entity.keypoints,
                &object.entity.keypoints,
            )?;
        }
        if on(|w| w.w_interp) {
            t.interp = penetration_of_points(&self.interp_points(&object.entity), &human.entity);
        }
        if on(|w| w.w_kp2d) {
            t.kp2d = keypoint_2d_loss(&object.entity.keypoints, &targets.object.entity.keypoints, &self.camera)?;
        }
        Ok(t)
    }

    pub fn report(&self, targets: &Targets, human: &ScenePose, object: &ScenePose, weights: &LossWeights) -> Result<LossReport> {
        let (h, o) = (self.human_state(human)?, self.object_state(object)?);
        total_loss(&self.terms(targets, &h, &o, None)?, weights)
    }

    /// Object surface Chamfer against the targets, in metres.
    pub fn object_chamfer(&self, targets: &Targets, object: &ScenePose) -> Result<f64> {
        chamfer_distance(&self.object_state(object)?.surface, &targets.object.surface)
    }
}
