//! Loss terms comparing a predicted scene state with ground truth.

use std::collections::{BTreeMap, HashMap};

use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::chamfer::chamfer_distance;
use crate::error::{Error, Result};
use crate::kinematics::{JointKind, Keypoint, PosedEntity};
use crate::mesh::tessellate;
use crate::render::{Camera, IuvMap, MaskMap, Projection};
use crate::surface::sample_angles;

/// Label smoothing applied to hard rendered I maps.
pub const IUV_SMOOTHING: f64 = 1e-3;
/// Bound on the cross-entropy of identical maps, `2 eps ln(1/eps)`.
pub const IUV_CE_FLOOR: f64 = 2.0 * IUV_SMOOTHING * 6.907_755_278_982_137;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub w_mask: f64,
    pub w_kp3d: f64,
    pub w_angle: f64,
    pub w_surface: f64,
    pub w_iuv: f64,
    pub w_hoi: f64,
    pub w_interp: f64,
    /// 2D object keypoints; off unless explicitly enabled.
    pub w_kp2d: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w_mask: 1.0,
            w_kp3d: 1.0,
            w_angle: 1.0,
            w_surface: 1.0,
            w_iuv: 1.0,
            w_hoi: 0.0,
            w_interp: 0.0,
            w_kp2d: 0.0,
        }
    }
}

impl LossWeights {
    pub fn zero() -> Self {
        Self {
            w_mask: 0.0,
            w_kp3d: 0.0,
            w_angle: 0.0,
            w_surface: 0.0,
            w_iuv: 0.0,
            w_hoi: 0.0,
            w_interp: 0.0,
            w_kp2d: 0.0,
        }
    }

    fn as_array(&self) -> [f64; 8] {
        [
            self.w_mask,
            self.w_kp3d,
            self.w_angle,
            self.w_surface,
            self.w_iuv,
            self.w_hoi,
            self.w_interp,
            self.w_kp2d,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if self.as_array().iter().all(|w| w.is_finite() && *w >= 0.0) {
            Ok(())
        } else {
            Err(Error::Domain("loss weights must be finite and non-negative".into()))
        }
    }
}

/// Unweighted term values. `iuv_ce` and `iuv_uv` share `w_iuv`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub mask: f64,
    pub kp3d: f64,
    pub angle: f64,
    pub surface: f64,
    pub iuv_ce: f64,
    pub iuv_uv: f64,
    pub hoi: f64,
    pub interp: f64,
    pub kp2d: f64,
}

impl LossTerms {
    pub fn named(&self) -> [(&'static str, f64); 9] {
        [
            ("mask", self.mask),
            ("kp3d", self.kp3d),
            ("angle", self.angle),
            ("surface", self.surface),
            ("iuv_ce", self.iuv_ce),
            ("iuv_uv", self.iuv_uv),
            ("hoi", self.hoi),
            ("interp", self.interp),
            ("kp2d", self.kp2d),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub terms: LossTerms,
    pub weights: LossWeights,
    pub total: f64,
}

pub fn total_loss(terms: &LossTerms, weights: &LossWeights) -> Result<LossReport> {
    weights.validate()?;
    if let Some((name, _)) = terms.named().iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::Numerical(format!("loss term {name} is not finite")));
    }
    let w = weights;
    let total = w.w_mask * terms.mask
        + w.w_kp3d * terms.kp3d
        + w.w_angle * terms.angle
        + w.w_surface * terms.surface
        + w.w_iuv * (terms.iuv_ce + terms.iuv_uv)
        + w.w_hoi * terms.hoi
        + w.w_interp * terms.interp
        + w.w_kp2d * terms.kp2d;
    Ok(LossReport {
        terms: *terms,
        weights: *weights,
        total,
    })
}

fn same_size(a: (u32, u32), b: (u32, u32)) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::Dimension(format!("{}x{} vs {}x{}", a.0, a.1, b.0, b.1)))
    }
}

/// Mean squared difference of the binary masks of one part.
pub fn mask_mse(pred: &MaskMap, gt: &MaskMap, part: u16) -> Result<f64> {
    same_size((pred.width, pred.height), (gt.width, gt.height))?;
    let n = pred.data.len().max(1) as f64;
    let diff = pred.data.iter().zip(&gt.data).filter(|(p, g)| (**p == part) != (**g == part)).count();
    Ok(diff as f64 / n)
}

/// `mask_mse` summed over every foreground part id.
pub fn mask_loss(pred: &MaskMap, gt: &MaskMap) -> Result<f64> {
    same_size((pred.width, pred.height), (gt.width, gt.height))?;
    let n = pred.data.len().max(1) as f64;
    let wrong: usize = pred
        .data
        .iter()
        .zip(&gt.data)
        .filter(|(p, g)| p != g)
        .map(|(p, g)| (*p != 0) as usize + (*g != 0) as usize)
        .sum();
    Ok(wrong as f64 / n)
}

fn match_labels<'a>(pred: &'a [Keypoint], gt: &'a [Keypoint]) -> Result<Vec<(&'a Keypoint, &'a Keypoint)>> {
    let index: HashMap<&str, &Keypoint> = gt.iter().map(|k| (k.label.as_str(), k)).collect();
    if index.len() != gt.len() || pred.len() != gt.len() {
        return Err(Error::Label("keypoint label sets differ".into()));
    }
    pred.iter()
        .map(|p| {
            index
                .get(p.label.as_str())
                .map(|g| (p, *g))
                .ok_or_else(|| Error::Label(format!("keypoint {} has no counterpart", p.label)))
        })
        .collect()
}

/// Mean absolute per-coordinate difference of matched keypoints.
pub fn keypoint_l1(pred: &[Keypoint], gt: &[Keypoint]) -> Result<f64> {
    let pairs = match_labels(pred, gt)?;
    if pairs.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = pairs.iter().map(|(p, g)| (p.position - g.position).abs().sum()).sum();
    Ok(sum / (3 * pairs.len()) as f64)
}

/// `1 - cos` between two non-zero vectors, exactly 0 for parallel equal directions.
fn one_minus_cos(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    0.5 * (a / a.norm() - b / b.norm()).norm_squared()
}

fn leaf_direction(entity: &PosedEntity, joint: usize) -> Result<Vector3<f64>> {
    let j = &entity.joints[joint];
    let leaf = entity
        .parts
        .iter()
        .find(|p| p.id == j.child)
        .ok_or_else(|| Error::Schema(format!("joint {} has no child part {}", j.id, j.child)))?;
    let d = leaf.sq.translation - j.anchor;
    if d.norm() < 1e-12 {
        return Err(Error::DegenerateGeometry(format!("leaf {} centre coincides with its anchor", j.child)));
    }
    Ok(d)
}

/// Mean over joints of `1 - cos` between anchor-to-leaf directions; prismatic
/// joints contribute `|state difference| / range`.
pub fn joint_angle_object(pred: &PosedEntity, gt: &PosedEntity) -> Result<f64> {
    if pred.joints.len() != gt.joints.len() || pred.joints.iter().zip(&gt.joints).any(|(a, b)| a.id != b.id) {
        return Err(Error::Label("entities come from different templates".into()));
    }
    if pred.joints.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for (k, (pj, gj)) in pred.joints.iter().zip(&gt.joints).enumerate() {
        sum += match pj.kind {
            JointKind::Revolute => {
                let (a, b) = (leaf_direction(pred, k)?, leaf_direction(gt, k)?);
                one_minus_cos(&a, &b)
            }
            JointKind::Prismatic => {
                let range = gj.limits.map_or(1.0, |[lo, hi]| (hi - lo).max(1e-12));
                (pj.state - gj.state).abs() / range
            }
        };
    }
    Ok(sum / pred.joints.len() as f64)
}

/// Rotation angle between two unit quaternions; exactly 0 for equal inputs.
pub fn geodesic_angle(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>) -> f64 {
    let (a, mut b) = (a.coords, b.coords);
    if a.dot(&b) < 0.0 {
        b = -b;
    }
    4.0 * (a - b).norm().atan2((a + b).norm())
}

/// Mean squared geodesic angle between matched joint rotations.
pub fn joint_angle_human(
    pred: &BTreeMap<String, UnitQuaternion<f64>>,
    gt: &BTreeMap<String, UnitQuaternion<f64>>,
) -> Result<f64> {
    if pred.len() != gt.len() || pred.keys().zip(gt.keys()).any(|(a, b)| a != b) {
        return Err(Error::Label("human joint sets differ".into()));
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = pred.iter().map(|(k, q)| geodesic_angle(q, &gt[k]).powi(2)).sum();
    Ok(sum / pred.len() as f64)
}

/// Canonical-size area estimate used to spread samples over parts.
fn part_area(entity: &PosedEntity, k: usize) -> f64 {
    tessellate(&entity.parts[k].sq, 16).map_or(0.0, |m| m.surface_area())
}

/// Splits `n` proportionally to `weights` (largest remainder).
pub fn allocate(n: usize, weights: &[f64]) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    if weights.is_empty() || !(total > 0.0) {
        let mut out = vec![0; weights.len()];
        if let Some(first) = out.first_mut() {
            *first = n;
        }
        return out;
    }
    let exact: Vec<f64> = weights.iter().map(|w| n as f64 * w / total).collect();
    let mut out: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let missing = n - out.iter().sum::<usize>();
    for &k in order.iter().take(missing) {
        out[k] += 1;
    }
    out
}

/// Surface angles for every part of an entity, `n` in total, spread by area.
pub fn entity_sample_angles(entity: &PosedEntity, n: usize, seed: u64) -> Vec<Vec<(f64, f64)>> {
    let areas: Vec<f64> = (0..entity.parts.len()).map(|k| part_area(entity, k)).collect();
    allocate(n, &areas)
        .into_iter()
        .enumerate()
        .map(|(k, m)| sample_angles(&entity.parts[k].sq, m, seed.wrapping_add(k as u64)))
        .collect()
}

/// World points at precomputed per-part angles.
pub fn points_at_angles(entity: &PosedEntity, angles: &[Vec<(f64, f64)>]) -> Vec<Vector3<f64>> {
    entity
        .parts
        .iter()
        .zip(angles)
        .flat_map(|(p, a)| a.iter().map(move |(eta, omega)| p.sq.to_world(&p.sq.shape.point_at(*eta, *omega))))
        .collect()
}

/// `n` world-frame points spread over the whole entity surface.
pub fn entity_surface_points(entity: &PosedEntity, n: usize, seed: u64) -> Vec<Vector3<f64>> {
    points_at_angles(entity, &entity_sample_angles(entity, n, seed))
}

/// Chamfer distance between `n` surface samples of each entity, drawn with a
/// shared seed.
pub fn surface_vertices_loss(pred: &PosedEntity, gt: &PosedEntity, n: usize, seed: u64) -> Result<f64> {
    if pred.kind != gt.kind {
        return Err(Error::Kind {
            expected: match gt.kind {
                crate::kinematics::EntityKind::Human => "human",
                crate::kinematics::EntityKind::Object => "object",
            },
        });
    }
    chamfer_distance(&entity_surface_points(pred, n, seed), &entity_surface_points(gt, n, seed))
}

/// Cross-entropy of the I channel against smoothed one-hot predictions, and
/// mean `|du| + |dv|` over pixels where both maps agree on a foreground part.
pub fn iuv_loss(pred: &IuvMap, gt: &IuvMap, num_parts: u16) -> Result<(f64, f64)> {
    same_size((pred.width, pred.height), (gt.width, gt.height))?;
    if num_parts == 0 {
        return Err(Error::Label("at least one part is required".into()));
    }
    if let Some(bad) = pred.i.iter().chain(&gt.i).find(|&&i| i > num_parts) {
        return Err(Error::Label(format!("I value {bad} exceeds part count {num_parts}")));
    }
    let hit = -(1.0 - IUV_SMOOTHING).ln();
    let miss = -(IUV_SMOOTHING / num_parts as f64).ln();
    let n = pred.i.len().max(1) as f64;
    let wrong = pred.i.iter().zip(&gt.i).filter(|(p, g)| p != g).count() as f64;
    let ce = ((n - wrong) * hit + wrong * miss) / n;

    let mut uv = 0.0;
    let mut agree = 0usize;
    for k in 0..pred.i.len() {
        if pred.i[k] != 0 && pred.i[k] == gt.i[k] {
            uv += (pred.u[k] - gt.u[k]).abs() as f64 + (pred.v[k] - gt.v[k]).abs() as f64;
            agree += 1;
        }
    }
    Ok((ce, if agree == 0 { 0.0 } else { uv / agree as f64 }))
}

/// Mean `1 - cos` between every human-to-object keypoint vector of the
/// prediction and of the ground truth. Zero vectors contribute 0.
pub fn hoi_loss(
    human_gt: &[Keypoint],
    object_gt: &[Keypoint],
    human_pred: &[Keypoint],
    object_pred: &[Keypoint],
) -> Result<f64> {
    let hp = match_labels(human_pred, human_gt)?;
    let op = match_labels(object_pred, object_gt)?;
    if hp.is_empty() || op.is_empty() {
        return Err(Error::Label("HOI loss needs at least one keypoint per entity".into()));
    }
    let mut sum = 0.0;
    for (hpred, hgt) in &hp {
        for (opred, ogt) in &op {
            let v = hgt.position - ogt.position;
            let v_hat = hpred.position - opred.position;
            if v.norm() > 0.0 && v_hat.norm() > 0.0 {
                sum += one_minus_cos(&v, &v_hat);
            }
        }
    }
    Ok(sum / (hp.len() * op.len()) as f64)
}

/// Penetration of world points into the human: per point the deepest
/// `max(0, 1 - f)` over the human's primitives, averaged.
pub fn penetration_of_points(points: &[Vector3<f64>], human: &PosedEntity) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let bounds: Vec<f64> = human
        .parts
        .iter()
        .map(|p| Vector3::from(p.sq.shape.alpha).norm())
        .collect();
    let mut sum = 0.0;
    for x in points {
        let mut worst = 0.0f64;
        for (p, r) in human.parts.iter().zip(&bounds) {
            if (x - p.sq.translation).norm() >= *r {
                continue;
            }
            worst = worst.max(1.0 - p.sq.implicit_world(x));
        }
        sum += worst;
    }
    sum / points.len() as f64
}

/// Samples `n` points on every object part and measures how deep they sit
/// inside the human primitives.
pub fn interpenetration_loss(object: &PosedEntity, human: &PosedEntity, n: usize, seed: u64) -> f64 {
    let points: Vec<Vector3<f64>> = object
        .parts
        .iter()
        .enumerate()
        .flat_map(|(k, p)| crate::surface::sample_points(&p.sq, n, seed.wrapping_add(k as u64)))
        .collect();
    penetration_of_points(&points, human)
}

/// Mean L1 distance between projected object part centres, in units of the
/// image's long side. Centres behind the camera are skipped.
pub fn keypoint_2d_loss(pred: &[Keypoint], gt: &[Keypoint], camera: &Camera) -> Result<f64> {
    let pairs = match_labels(pred, gt)?;
    let scale = camera.width.max(camera.height) as f64;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (p, g) in pairs {
        if let (Projection::Pixel(pu, pv), Projection::Pixel(gu, gv)) = (camera.project(&p.position), camera.project(&g.position)) {
            sum += ((pu - gu).abs() + (pv - gv).abs()) / scale;
            n += 1;
        }
    }
    Ok(if n == 0 { 0.0 } else { sum / (2 * n) as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{forward_kinematics, EntityKind, PosedPart, ScenePose, Similarity};
    use crate::sq::{ShapeParams, Superquadric};
    use crate::templates::builtin_object;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn kp(label: &str, x: f64, y: f64, z: f64) -> Keypoint {
        Keypoint {
            label: label.into(),
            position: Vector3::new(x, y, z),
        }
    }

    fn mask(data: Vec<u16>) -> MaskMap {
        MaskMap {
            width: data.len() as u32,
            height: 1,
            data,
        }
    }

    #[test]
    fn mask_examples() {
        let a = mask(vec![1, 1, 0, 0]);
        assert_eq!(mask_mse(&a, &a, 1).unwrap(), 0.0);
        assert_eq!(mask_mse(&mask(vec![1; 4]), &mask(vec![0; 4]), 1).unwrap(), 1.0);
        assert_eq!(mask_mse(&mask(vec![1, 1, 0, 0]), &mask(vec![1, 0, 1, 0]), 1).unwrap(), 0.5);
        assert!(mask_mse(&a, &mask(vec![0; 3]), 1).is_err());
        let p = mask(vec![1, 2, 0, 2]);
        let g = mask(vec![2, 2, 1, 0]);
        let by_part = mask_mse(&p, &g, 1).unwrap() + mask_mse(&p, &g, 2).unwrap();
        assert_relative_eq!(mask_loss(&p, &g).unwrap(), by_part);
    }

    #[test]
    fn keypoint_examples() {
        let a = vec![kp("a", 0.0, 0.0, 0.0), kp("b", 1.0, 2.0, 3.0)];
        assert_eq!(keypoint_l1(&a, &a).unwrap(), 0.0);
        assert_relative_eq!(keypoint_l1(&[kp("a", 0.3, 0.0, 0.0)], &[kp("a", 0.0, 0.0, 0.0)]).unwrap(), 0.1);
        let shifted: Vec<Keypoint> = a.iter().map(|k| Keypoint { label: k.label.clone(), position: k.position.add_scalar(0.1) }).collect();
        assert_relative_eq!(keypoint_l1(&shifted, &a).unwrap(), 0.1, epsilon = 1e-12);
        assert!(keypoint_l1(&[kp("x", 0.0, 0.0, 0.0)], &[kp("a", 0.0, 0.0, 0.0)]).is_err());
    }

    #[test]
    fn object_angle_examples() {
        let door = builtin_object("door").unwrap();
        let at = |s: f64| {
            let mut p = ScenePose::default();
            p.joint_states.insert("hinge".into(), s);
            forward_kinematics(&door, &p).unwrap()
        };
        let gt = at(0.0);
        assert_eq!(joint_angle_object(&gt, &gt).unwrap(), 0.0);
        let d0 = leaf_direction(&gt, 0).unwrap();
        let axis = gt.joints[0].axis;
        let expect = |t: f64| {
            let d1 = UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_normalize(axis), t) * d0;
            1.0 - d0.dot(&d1) / (d0.norm() * d1.norm())
        };
        assert_relative_eq!(joint_angle_object(&at(0.7), &gt).unwrap(), expect(0.7), epsilon = 1e-12);

        let drawer = builtin_object("drawer").unwrap();
        let mut p = ScenePose::default();
        p.joint_states.insert("hinge".into(), 0.2);
        let open = forward_kinematics(&drawer, &p).unwrap();
        let shut = forward_kinematics(&drawer, &ScenePose::default()).unwrap();
        assert_relative_eq!(joint_angle_object(&open, &shut).unwrap(), 0.2 / 0.4, epsilon = 1e-12);
    }

    fn two_point_entity(anchor: Vector3<f64>, centre: Vector3<f64>) -> PosedEntity {
        let part = |id: &str, c: Vector3<f64>| PosedPart {
            id: id.into(),
            sq: Superquadric::new(ShapeParams::sphere(0.1), c, UnitQuaternion::identity()),
            transform: Similarity::identity(),
        };
        PosedEntity {
            kind: EntityKind::Object,
            parts: vec![part("root", Vector3::zeros()), part("leaf", centre)],
            joints: vec![crate::kinematics::PosedJoint {
                id: "j".into(),
                kind: JointKind::Revolute,
                anchor,
                axis: Vector3::z(),
                state: 0.0,
                child: "leaf".into(),
                limits: None,
            }],
            keypoints: vec![],
        }
    }

    #[test]
    fn object_angle_directions() {
        let gt = two_point_entity(Vector3::zeros(), Vector3::x());
        let ortho = two_point_entity(Vector3::zeros(), Vector3::y() * 3.0);
        let anti = two_point_entity(Vector3::zeros(), -Vector3::x() * 0.5);
        let longer = two_point_entity(Vector3::zeros(), Vector3::x() * 7.0);
        assert_relative_eq!(joint_angle_object(&ortho, &gt).unwrap(), 1.0, epsilon = 1e-15);
        assert_relative_eq!(joint_angle_object(&anti, &gt).unwrap(), 2.0, epsilon = 1e-15);
        assert_eq!(joint_angle_object(&longer, &gt).unwrap(), 0.0);
        let degenerate = two_point_entity(Vector3::x(), Vector3::x());
        assert!(matches!(joint_angle_object(&degenerate, &gt), Err(Error::DegenerateGeometry(_))));
    }

    #[test]
    fn human_angle_examples() {
        let q = |a: f64| UnitQuaternion::from_axis_angle(&Vector3::y_axis(), a);
        let m = |qs: &[UnitQuaternion<f64>]| -> BTreeMap<String, UnitQuaternion<f64>> {
            qs.iter().enumerate().map(|(i, q)| (format!("j{i}"), *q)).collect()
        };
        let a = m(&[q(0.3), q(-1.0)]);
        assert_eq!(joint_angle_human(&a, &a).unwrap(), 0.0);
        assert_relative_eq!(joint_angle_human(&m(&[q(PI)]), &m(&[q(0.0)])).unwrap(), PI * PI, epsilon = 1e-9);
        let neg: BTreeMap<_, _> = a
            .iter()
            .map(|(k, v)| (k.clone(), UnitQuaternion::new_unchecked(-v.into_inner())))
            .collect();
        assert!(joint_angle_human(&neg, &a).unwrap() < 1e-14);
        assert!(joint_angle_human(&m(&[q(0.0)]), &a).is_err());
    }

    #[test]
    fn total_examples() {
        let terms = LossTerms {
            mask: 2.0,
            kp3d: 3.0,
            hoi: 0.5,
            ..Default::default()
        };
        assert_eq!(total_loss(&terms, &LossWeights::zero()).unwrap().total, 0.0);
        let only = LossWeights { w_hoi: 1.0, ..LossWeights::zero() };
        assert_eq!(total_loss(&terms, &only).unwrap().total, 0.5);
        let two = LossWeights {
            w_mask: 1.0,
            w_kp3d: 1.0,
            ..LossWeights::zero()
        };
        let r = total_loss(&terms, &two).unwrap();
        assert_eq!(r.total, 5.0);
        assert_eq!(r.terms, terms);
        assert!(total_loss(&terms, &LossWeights { w_mask: -1.0, ..two }).is_err());
    }

    #[test]
    fn iuv_examples() {
        let map = |i: Vec<u16>, u: f32, v: f32| IuvMap {
            width: i.len() as u32,
            height: 1,
            u: i.iter().map(|&k| if k == 0 { 0.0 } else { u }).collect(),
            v: i.iter().map(|&k| if k == 0 { 0.0 } else { v }).collect(),
            i,
        };
        let a = map(vec![1, 2, 0, 1], 0.25, 0.5);
        let (ce, uv) = iuv_loss(&a, &a, 2).unwrap();
        assert!(ce <= IUV_CE_FLOOR && ce > 0.0);
        assert_eq!(uv, 0.0);
        let b = map(vec![1, 2, 0, 1], 0.5, 0.75);
        assert_relative_eq!(iuv_loss(&b, &a, 2).unwrap().1, 0.5, epsilon = 1e-7);
        let (ce, uv) = iuv_loss(&map(vec![1, 1], 0.1, 0.1), &map(vec![2, 2], 0.9, 0.9), 2).unwrap();
        assert_eq!(uv, 0.0);
        assert_relative_eq!(ce, -(IUV_SMOOTHING / 2.0).ln(), epsilon = 1e-12);
        assert!(iuv_loss(&map(vec![3], 0.0, 0.0), &a, 2).is_err());
    }

    #[test]
    fn hoi_examples() {
        let h = vec![kp("a", 0.0, 1.0, 0.0), kp("b", 0.3, 1.5, 0.2)];
        let o = vec![kp("lid", 1.0, 0.0, 0.0), kp("base", 1.0, 0.0, 0.5)];
        assert_eq!(hoi_loss(&h, &o, &h, &o).unwrap(), 0.0);
        // mirror every vector through the origin
        let flip = |ks: &[Keypoint]| -> Vec<Keypoint> {
            ks.iter().map(|k| Keypoint { label: k.label.clone(), position: -k.position }).collect()
        };
        assert_relative_eq!(hoi_loss(&h, &o, &flip(&h), &flip(&o)).unwrap(), 2.0, epsilon = 1e-12);
        // every vector orthogonal: 2D vectors rotated by 90 degrees
        let h2 = vec![kp("a", 0.0, 0.0, 0.0)];
        let o2 = vec![kp("p", 1.0, 0.0, 0.0), kp("q", 0.0, 1.0, 0.0)];
        let o2_hat = vec![kp("p", 0.0, 1.0, 0.0), kp("q", -1.0, 0.0, 0.0)];
        assert_relative_eq!(hoi_loss(&h2, &o2, &h2, &o2_hat).unwrap(), 1.0, epsilon = 1e-12);
        assert!(hoi_loss(&h, &o, &h2, &o).is_err());
    }

    #[test]
    fn surface_loss_examples() {
        let door = builtin_object("door").unwrap();
        let gt = forward_kinematics(&door, &ScenePose::default()).unwrap();
        assert!(surface_vertices_loss(&gt, &gt, 500, 3).unwrap() < 1e-9);

        let tiny = |t: Vector3<f64>| PosedEntity {
            kind: EntityKind::Object,
            parts: vec![PosedPart {
                id: "s".into(),
                sq: Superquadric::new(ShapeParams::sphere(0.005), t, UnitQuaternion::identity()),
                transform: Similarity::identity(),
            }],
            joints: vec![],
            keypoints: vec![],
        };
        let d = surface_vertices_loss(&tiny(Vector3::x()), &tiny(Vector3::zeros()), 2000, 0).unwrap();
        assert!((d - 1.0).abs() < 0.02, "{d}");
    }

    #[test]
    fn allocation_is_exact() {
        assert_eq!(allocate(10, &[1.0, 1.0, 1.0]).iter().sum::<usize>(), 10);
        assert_eq!(allocate(10, &[3.0, 1.0]), vec![8, 2]);
        assert_eq!(allocate(5, &[0.0, 0.0]), vec![5, 0]);
    }

    #[test]
    fn penetration_examples() {
        let human = |c: Vector3<f64>| PosedEntity {
            kind: EntityKind::Human,
            parts: vec![PosedPart {
                id: "torso".into(),
                sq: Superquadric::new(ShapeParams::sphere(1.0), c, UnitQuaternion::identity()),
                transform: Similarity::identity(),
            }],
            joints: vec![],
            keypoints: vec![],
        };
        let h = human(Vector3::zeros());
        assert_eq!(penetration_of_points(&[Vector3::zeros()], &h), 1.0);
        assert_eq!(penetration_of_points(&[Vector3::new(2.0, 0.0, 0.0)], &h), 0.0);
        let door = builtin_object("door").unwrap();
        let far = forward_kinematics(&door, &ScenePose { root_translation: Vector3::new(10.0, 0.0, 0.0), ..Default::default() }).unwrap();
        assert_eq!(interpenetration_loss(&far, &h, 200, 0), 0.0);
    }
}
