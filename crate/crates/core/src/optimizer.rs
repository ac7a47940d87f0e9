//! Staged per-scene pose optimization with finite-difference gradients.
//!
//! Free parameters are encoded relative to the pose at the start of a stage:
//! rotation increments as rotation vectors (left-multiplied), scales in log
//! space, translations as offsets and joint states raw.

use log::warn;
use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluate::{EntityState, EvalConfig, SceneModel, Targets};
use crate::io::scene::{Scene, TemplateLibrary};
use crate::kinematics::{ArticulatedTemplate, EntityKind, JointKind, LimitMode, ScenePose};
use crate::losses::{total_loss, LossReport, LossWeights};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FreeParams {
    Human,
    Object,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub name: String,
    pub free: FreeParams,
    pub weights: LossWeights,
    pub max_iters: usize,
    /// Relative objective improvement over the window below which the stage
    /// is considered stable.
    pub tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSchedule {
    pub stages: Vec<Stage>,
}

impl StageSchedule {
    /// Human only, object only, then both with the interaction terms on.
    pub fn default3() -> Self {
        let base = LossWeights::default();
        let joint = LossWeights {
            w_hoi: 1.0,
            w_interp: 1.0,
            ..base
        };
        let stage = |name: &str, free, weights, max_iters| Stage {
            name: name.into(),
            free,
            weights,
            max_iters,
            tol: 1e-4,
        };
        Self {
            stages: vec![
                stage("human", FreeParams::Human, base, 30),
                stage("object", FreeParams::Object, base, 150),
                stage("joint", FreeParams::Both, joint, 30),
            ],
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "default3" => Ok(Self::default3()),
            other => Err(Error::Domain(format!("unknown schedule `{other}`"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::Domain("a schedule needs at least one stage".into()));
        }
        for s in &self.stages {
            s.weights.validate()?;
            if !(s.tol >= 0.0 && s.tol.is_finite()) {
                return Err(Error::Domain(format!("stage `{}` tolerance must be non-negative", s.name)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub fd_step: f64,
    /// Largest difference step tried when the line search fails at `fd_step`.
    pub fd_step_max: f64,
    /// Iterations over which stage stability is judged.
    pub window: usize,
    /// Largest infinity-norm step tried by the line search.
    pub max_step: f64,
    pub armijo: f64,
    pub max_backtracks: usize,
    pub eval: EvalConfig,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            fd_step: 1e-4,
            fd_step_max: 1e-2,
            window: 10,
            max_step: 0.1,
            armijo: 1e-4,
            max_backtracks: 12,
            eval: EvalConfig::default(),
        }
    }
}

/// Central differences; components whose probes are not finite are set to 0.
pub fn finite_diff_gradient<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], h: f64) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(Error::Domain("finite-difference step must be positive".into()));
    }
    let mut probe = x.to_vec();
    let mut g = vec![0.0; x.len()];
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let plus = f(&probe);
        probe[i] = x[i] - h;
        let minus = f(&probe);
        probe[i] = x[i];
        if plus.is_finite() && minus.is_finite() {
            g[i] = (plus - minus) / (2.0 * h);
        } else {
            warn!("non-finite objective at probe of component {i}; gradient component set to 0");
        }
    }
    Ok(g)
}

/// Number of encoded parameters for one entity.
pub fn entity_dim(template: &ArticulatedTemplate) -> usize {
    7 + match template.kind {
        EntityKind::Object => template.joints.len(),
        EntityKind::Human => 3 * template.skeleton.len().saturating_sub(1),
    }
}

fn rotvec(x: &[f64]) -> UnitQuaternion<f64> {
    UnitQuaternion::from_scaled_axis(Vector3::new(x[0], x[1], x[2]))
}

/// Encodes `pose` relative to `reference`. Only joint states are absolute.
pub fn encode(template: &ArticulatedTemplate, reference: &ScenePose, pose: &ScenePose) -> Vec<f64> {
    let mut x = Vec::with_capacity(entity_dim(template));
    x.extend_from_slice((pose.root_rotation * reference.root_rotation.inverse()).scaled_axis().as_slice());
    x.extend_from_slice((pose.root_translation - reference.root_translation).as_slice());
    x.push((pose.root_scale / reference.root_scale).ln());
    match template.kind {
        EntityKind::Object => {
            for j in &template.joints {
                x.push(pose.joint_states.get(&j.id).copied().unwrap_or(0.0));
            }
        }
        EntityKind::Human => {
            let id = UnitQuaternion::identity();
            for j in template.skeleton.iter().skip(1) {
                let q = pose.human_joint_rotations.get(&j.name).unwrap_or(&id);
                let r = reference.human_joint_rotations.get(&j.name).unwrap_or(&id);
                x.extend_from_slice((q * r.inverse()).scaled_axis().as_slice());
            }
        }
    }
    x
}

/// Inverse of [`encode`]. Joint states are clamped into their limits.
pub fn decode(template: &ArticulatedTemplate, reference: &ScenePose, x: &[f64]) -> Result<ScenePose> {
    if x.len() != entity_dim(template) || x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("parameter vector has the wrong size or is not finite".into()));
    }
    let mut pose = reference.clone();
    if x[..3].iter().any(|v| *v != 0.0) {
        pose.root_rotation = rotvec(&x[0..3]) * reference.root_rotation;
    }
    pose.root_translation = reference.root_translation + Vector3::new(x[3], x[4], x[5]);
    if x[6] != 0.0 {
        pose.root_scale = reference.root_scale * x[6].exp();
    }
    match template.kind {
        EntityKind::Object => {
            for (j, v) in template.joints.iter().zip(&x[7..]) {
                let state = match (j.kind, j.limits) {
                    (JointKind::Revolute, None) => *v,
                    _ => j.resolve_state(*v, LimitMode::Clamp)?,
                };
                pose.joint_states.insert(j.id.clone(), state);
            }
        }
        EntityKind::Human => {
            for (k, j) in template.skeleton.iter().skip(1).enumerate() {
                let d = &x[7 + 3 * k..10 + 3 * k];
                if d.iter().any(|v| *v != 0.0) {
                    let r = reference
                        .human_joint_rotations
                        .get(&j.name)
                        .copied()
                        .unwrap_or_else(UnitQuaternion::identity);
                    pose.human_joint_rotations.insert(j.name.clone(), rotvec(d) * r);
                }
            }
        }
    }
    Ok(pose)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub name: String,
    pub iterations: usize,
    /// Weighted objective at the start and after every accepted step.
    pub trace: Vec<f64>,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeReport {
    pub stages: Vec<StageReport>,
    pub initial: LossReport,
    #[serde(rename = "final")]
    pub final_report: LossReport,
    /// Object surface Chamfer to the targets, metres.
    pub object_chamfer: f64,
}

/// Current poses of both entities.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseState {
    pub human: ScenePose,
    pub object: ScenePose,
}

struct StageObjective<'a> {
    model: &'a SceneModel,
    targets: &'a Targets,
    stage: &'a Stage,
    reference: PoseState,
    human_dim: usize,
    frozen_human: Option<EntityState>,
    frozen_object: Option<EntityState>,
}

impl StageObjective<'_> {
    fn split<'x>(&self, x: &'x [f64]) -> (Option<&'x [f64]>, Option<&'x [f64]>) {
        match self.stage.free {
            FreeParams::Human => (Some(x), None),
            FreeParams::Object => (None, Some(x)),
            FreeParams::Both => (Some(&x[..self.human_dim]), Some(&x[self.human_dim..])),
        }
    }

    fn poses(&self, x: &[f64]) -> Result<PoseState> {
        let (h, o) = self.split(x);
        Ok(PoseState {
            human: match h {
                Some(h) => decode(&self.model.human, &self.reference.human, h)?,
                None => self.reference.human.clone(),
            },
            object: match o {
                Some(o) => decode(&self.model.object, &self.reference.object, o)?,
                None => self.reference.object.clone(),
            },
        })
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        let p = self.poses(x)?;
        let h_owned;
        let human = match &self.frozen_human {
            Some(s) => s,
            None => {
                h_owned = self.model.human_state(&p.human)?;
                &h_owned
            }
        };
        let o_owned;
        let object = match &self.frozen_object {
            Some(s) => s,
            None => {
                o_owned = self.model.object_state(&p.object)?;
                &o_owned
            }
        };
        let terms = self.model.terms(self.targets, human, object, Some(&self.stage.weights))?;
        Ok(total_loss(&terms, &self.stage.weights)?.total)
    }

    fn value_or_nan(&self, x: &[f64]) -> f64 {
        self.value(x).unwrap_or(f64::NAN)
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Runs one stage from `state`, updating only the stage's free entity.
pub fn optimize_stage(
    model: &SceneModel,
    targets: &Targets,
    state: &mut PoseState,
    stage: &Stage,
    config: &OptimizerConfig,
) -> Result<StageReport> {
    stage.weights.validate()?;
    let objective = StageObjective {
        model,
        targets,
        stage,
        reference: state.clone(),
        human_dim: entity_dim(&model.human),
        frozen_human: match stage.free {
            FreeParams::Object => Some(model.human_state(&state.human)?),
            _ => None,
        },
        frozen_object: match stage.free {
            FreeParams::Human => Some(model.object_state(&state.object)?),
            _ => None,
        },
    };
    let dim = match stage.free {
        FreeParams::Human => entity_dim(&model.human),
        FreeParams::Object => entity_dim(&model.object),
        FreeParams::Both => entity_dim(&model.human) + entity_dim(&model.object),
    };
    let mut x = vec![0.0; dim];
    if stage.free != FreeParams::Human {
        let off = if stage.free == FreeParams::Both { objective.human_dim } else { 0 };
        let enc = encode(&model.object, &state.object, &state.object);
        x[off..].copy_from_slice(&enc);
    }
    let mut f = objective.value(&x)?;
    if !f.is_finite() {
        let terms = model.terms(
            targets,
            &model.human_state(&state.human)?,
            &model.object_state(&state.object)?,
            Some(&stage.weights),
        )?;
        let bad = terms.named().iter().find(|(_, v)| !v.is_finite()).map_or("total", |(n, _)| *n);
        return Err(Error::Numerical(format!("objective term `{bad}` is not finite at the initial point")));
    }
    let mut trace = vec![f];
    let mut iterations = 0;
    let mut converged = stage.max_iters == 0;
    let mut accepted_any = false;
    let mut h = config.fd_step;
    let mut g = if stage.max_iters > 0 {
        finite_diff_gradient(|p| objective.value_or_nan(p), &x, h)?
    } else {
        Vec::new()
    };
    let mut alpha = config.max_step / inf_norm(&g).max(1e-300);

    while iterations < stage.max_iters {
        let gmax = inf_norm(&g);
        if gmax == 0.0 {
            if h * 10.0 <= config.fd_step_max * (1.0 + 1e-9) {
                h *= 10.0;
                g = finite_diff_gradient(|p| objective.value_or_nan(p), &x, h)?;
                alpha = config.max_step / inf_norm(&g).max(1e-300);
                continue;
            }
            converged = true;
            break;
        }
        let g2: f64 = g.iter().map(|v| v * v).sum();
        let mut step = alpha.min(config.max_step / gmax);
        let mut accepted = None;
        for _ in 0..config.max_backtracks {
            let trial: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi - step * gi).collect();
            let ft = objective.value_or_nan(&trial);
            if ft.is_finite() && ft < f && ft <= f - config.armijo * step * g2 {
                accepted = Some((trial, ft));
                break;
            }
            step *= 0.5;
        }
        let Some((trial, ft)) = accepted else {
            if alpha < config.max_step / gmax {
                // retry once from the largest step before declaring convergence
                alpha = config.max_step / gmax;
                continue;
            }
            if h * 10.0 <= config.fd_step_max * (1.0 + 1e-9) {
                // rendered terms are piecewise constant at small steps
                h *= 10.0;
                g = finite_diff_gradient(|p| objective.value_or_nan(p), &x, h)?;
                alpha = config.max_step / inf_norm(&g).max(1e-300);
                continue;
            }
            converged = true;
            break;
        };
        h = config.fd_step;
        let g_new = finite_diff_gradient(|p| objective.value_or_nan(p), &trial, h)?;
        let s: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let ss: f64 = s.iter().map(|v| v * v).sum();
        alpha = if sy > 0.0 { ss / sy } else { 2.0 * step };
        x = trial;
        f = ft;
        g = g_new;
        iterations += 1;
        accepted_any = true;
        trace.push(f);
        if trace.len() > config.window {
            let old = trace[trace.len() - 1 - config.window];
            if old - f <= stage.tol * old.abs() {
                converged = true;
                break;
            }
        }
    }
    if accepted_any {
        *state = objective.poses(&x)?;
    }
    Ok(StageReport {
        name: stage.name.clone(),
        iterations,
        trace,
        converged,
    })
}

/// Runs every stage in order from the scene's stored poses against the
/// scene's ground truth.
pub fn optimize_poses(
    model: &SceneModel,
    targets: &Targets,
    start: &PoseState,
    schedule: &StageSchedule,
    config: &OptimizerConfig,
) -> Result<(PoseState, OptimizeReport)> {
    schedule.validate()?;
    let final_weights = schedule.stages.last().expect("validated").weights;
    let initial = model.report(targets, &start.human, &start.object, &final_weights)?;
    let mut state = start.clone();
    let mut stages = Vec::with_capacity(schedule.stages.len());
    for stage in &schedule.stages {
        stages.push(optimize_stage(model, targets, &mut state, stage, config)?);
    }
    let final_report = model.report(targets, &state.human, &state.object, &final_weights)?;
    let object_chamfer = model.object_chamfer(targets, &state.object)?;
    Ok((
        state,
        OptimizeReport {
            stages,
            initial,
            final_report,
            object_chamfer,
        },
    ))
}

/// Loads templates, builds targets from the scene's ground truth and runs the
/// schedule.
pub fn optimize_scene(
    scene: &Scene,
    library: &TemplateLibrary,
    schedule: &StageSchedule,
    config: &OptimizerConfig,
) -> Result<(Scene, OptimizeReport)> {
    let (human_t, object_t) = scene.resolve(library)?;
    let gt = scene
        .gt
        .as_ref()
        .ok_or_else(|| Error::doc("/gt", "optimization needs ground-truth targets"))?;
    let model = SceneModel::new(human_t, object_t, &scene.camera, config.eval)?;
    let targets = model.targets(&gt.human, &gt.object)?;
    let start = PoseState {
        human: scene.human.pose.clone(),
        object: scene.object.pose.clone(),
    };
    let (state, report) = optimize_poses(&model, &targets, &start, schedule, config)?;
    let mut out = scene.clone();
    out.human.pose = state.human;
    out.object.pose = state.object;
    Ok((out, report))
}

/// Per-iteration trace as CSV rows `stage,iteration,objective`.
pub fn trace_csv(report: &OptimizeReport) -> String {
    let mut out = String::from("stage,iteration,objective\n");
    for s in &report.stages {
        for (i, v) in s.trace.iter().enumerate() {
            out.push_str(&format!("{},{},{}\n", s.name, i, v));
        }
    }
    out
}
