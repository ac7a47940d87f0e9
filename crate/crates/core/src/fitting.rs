//! Fitting a single superquadric to a point set by minimizing Chamfer distance.
//!
//! The point set is normalized (centroid, RMS radius), a handful of starting
//! shapes is built from its principal-axes frame, and each start is refined by
//! L-BFGS on the Chamfer distance between surface samples of the candidate and
//! the points. Gradients are analytic: the surface samples are kept at fixed
//! `(eta, omega)` within a segment, so every sample is a smooth function of the
//! eleven parameters and the Chamfer gradient is propagated through the
//! explicit surface map.
//!
//! All starts are first run on a coarse subsample; the best
//! [`FitConfig::refine_starts`] are then refined at full resolution.

use nalgebra::{Matrix3, Rotation3, SymmetricEigen, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::chamfer::{chamfer_distance, chamfer_with_gradient, NearestIndex};
use crate::error::{Error, Result};
use crate::mesh::TriMesh;
use crate::optim::{lbfgs, LbfgsConfig, Objective};
use crate::sq::{signed_pow, ShapeParams, Superquadric, EPS_MAX, EPS_MIN};
use crate::surface::{sample_angles, sample_points};

pub use crate::chamfer::chamfer_distance as chamfer;

/// Minimum number of points accepted by the fitter.
pub const MIN_POINTS: usize = 16;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitConfig {
    pub n_samples: usize,
    pub n_starts: usize,
    pub max_iters: usize,
    /// Infinity-norm step size below which a segment is considered converged.
    pub param_tol: f64,
    /// Relative objective decrease below which a segment is converged; also
    /// the tie window when comparing starts.
    pub objective_tol: f64,
    pub seed: u64,
    /// Sizes of the coarse stage.
    pub coarse_samples: usize,
    pub coarse_iters: usize,
    /// Number of starts carried from the coarse stage into refinement.
    pub refine_starts: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            n_samples: 2000,
            n_starts: 8,
            max_iters: 300,
            param_tol: 1e-9,
            objective_tol: 1e-6,
            seed: 0,
            coarse_samples: 400,
            coarse_iters: 60,
            refine_starts: 2,
        }
    }
}

impl FitConfig {
    fn validate(&self) -> Result<()> {
        if self.n_samples == 0 || self.n_starts == 0 || self.max_iters == 0 {
            return Err(Error::Domain("fit counts must be >= 1".into()));
        }
        if !(self.param_tol > 0.0 && self.objective_tol > 0.0) {
            return Err(Error::Domain("fit tolerances must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub sq: Superquadric,
    /// Chamfer distance between fresh surface samples of `sq` and the points.
    pub residual: f64,
    pub iterations: usize,
    pub start_index: usize,
    pub converged: bool,
    /// Accepted objective values of the winning start, one list per sampling
    /// segment. Each list is non-increasing.
    pub trace: Vec<Vec<f64>>,
}

/// Similarity mapping the caller's frame to the normalized fitting frame.
#[derive(Debug, Clone, Copy)]
struct Normalization {
    center: Vector3<f64>,
    scale: f64,
}

impl Normalization {
    fn of(points: &[Vector3<f64>]) -> Self {
        let n = points.len() as f64;
        let center = points.iter().sum::<Vector3<f64>>() / n;
        let rms = (points.iter().map(|p| (p - center).norm_squared()).sum::<f64>() / n).sqrt();
        Self {
            center,
            scale: if rms > 0.0 { rms } else { 1.0 },
        }
    }

    fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        (p - self.center) / self.scale
    }

    fn restore(&self, sq: &Superquadric) -> Superquadric {
        Superquadric {
            shape: ShapeParams {
                alpha: sq.shape.alpha.map(|a| a * self.scale),
                eps: sq.shape.eps,
            },
            translation: sq.translation * self.scale + self.center,
            rotation: sq.rotation,
        }
    }
}

fn check_points(points: &[Vector3<f64>]) -> Result<()> {
    if points.len() < MIN_POINTS {
        return Err(Error::Domain(format!(
            "need at least {MIN_POINTS} points, got {}",
            points.len()
        )));
    }
    if !points.iter().all(|p| p.iter().all(|c| c.is_finite())) {
        return Err(Error::Domain("non-finite point coordinates".into()));
    }
    Ok(())
}

/// Principal-axes frame: rotation whose columns are the axes (largest
/// variance first) and the centroid. `None` when the set is coplanar.
fn principal_frame(points: &[Vector3<f64>]) -> (Vector3<f64>, Option<Rotation3<f64>>) {
    let n = points.len() as f64;
    let c = points.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - c;
        cov += d * d.transpose();
    }
    cov /= n;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let largest = eig.eigenvalues[order[0]];
    if !(eig.eigenvalues[order[2]] > 1e-9 * largest.max(1e-300)) || largest <= 0.0 {
        return (c, None);
    }
    let x = eig.eigenvectors.column(order[0]).into_owned();
    let y = eig.eigenvectors.column(order[1]).into_owned();
    let z = x.cross(&y);
    (c, Some(Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[x, y, z]))))
}

fn half_extents(points: &[Vector3<f64>], center: &Vector3<f64>, rot: &Rotation3<f64>) -> [f64; 3] {
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for p in points {
        let q = rot.inverse_transform_vector(&(p - center));
        lo = lo.inf(&q);
        hi = hi.sup(&q);
    }
    let ext = (hi - lo) * 0.5;
    let floor = 1e-3 * ext.max().max(1e-12);
    [ext.x.max(floor), ext.y.max(floor), ext.z.max(floor)]
}

/// Starting shapes for the fitter, ordered deterministically.
///
/// Each candidate sits at the centroid, oriented along the principal axes,
/// with half-lengths from the per-axis extents. Shapes cover the exponent
/// pairs `{0.3, 1.0}^2`; for the mixed pairs every principal axis is tried as
/// the superquadric's z axis. A coplanar set falls back to the axis-aligned
/// box frame.
pub fn init_candidates(points: &[Vector3<f64>], n_starts: usize) -> Result<Vec<Superquadric>> {
    check_points(points)?;
    let (center, frame) = principal_frame(points);
    let rot = frame.unwrap_or_else(|| {
        log::warn!("degenerate point set (coplanar within 1e-9); using the axis-aligned frame");
        Rotation3::identity()
    });
    let base = half_extents(points, &center, &rot);

    // (eps, which principal axis becomes local z)
    let mut specs: Vec<([f64; 2], usize)> = vec![([1.0, 1.0], 2), ([0.3, 0.3], 2)];
    for eps in [[0.3, 1.0], [1.0, 0.3]] {
        for z_axis in [2, 0, 1] {
            specs.push((eps, z_axis));
        }
    }
    Ok(specs
        .into_iter()
        .cycle()
        .take(n_starts.max(1))
        .map(|(eps, z_axis)| {
            let (xa, ya) = ((z_axis + 1) % 3, (z_axis + 2) % 3);
            let m = rot.matrix();
            let local = Matrix3::from_columns(&[
                m.column(xa).into_owned(),
                m.column(ya).into_owned(),
                m.column(z_axis).into_owned(),
            ]);
            let rotation = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(local));
            Superquadric::new(
                ShapeParams {
                    alpha: [base[xa], base[ya], base[z_axis]],
                    eps,
                },
                center,
                rotation,
            )
        })
        .collect())
}

/// Parameter layout: `[ln a1, ln a2, ln a3, e1, e2, tx, ty, tz, rx, ry, rz]`,
/// the last three a rotation increment applied on the left of `reference`.
struct SurfaceFit<'a> {
    trig: Vec<[f64; 4]>,
    target: &'a NearestIndex<'a>,
    target_points: &'a [Vector3<f64>],
    reference: UnitQuaternion<f64>,
}

const N_PARAMS: usize = 11;

fn encode(sq: &Superquadric) -> Vec<f64> {
    let a = sq.shape.alpha;
    let [e1, e2] = sq.shape.eps;
    let t = sq.translation;
    vec![a[0].ln(), a[1].ln(), a[2].ln(), e1, e2, t.x, t.y, t.z, 0.0, 0.0, 0.0]
}

fn decode(x: &[f64], reference: &UnitQuaternion<f64>) -> Superquadric {
    Superquadric {
        shape: ShapeParams {
            alpha: [x[0].exp(), x[1].exp(), x[2].exp()],
            eps: [x[3].clamp(EPS_MIN, EPS_MAX), x[4].clamp(EPS_MIN, EPS_MAX)],
        },
        translation: Vector3::new(x[5], x[6], x[7]),
        rotation: UnitQuaternion::from_scaled_axis(Vector3::new(x[8], x[9], x[10])) * reference,
    }
}

#[inline]
fn spow_and_log(v: f64, e: f64) -> (f64, f64) {
    if v == 0.0 {
        (0.0, 0.0)
    } else {
        let p = signed_pow(v, e);
        (p, p * v.abs().ln())
    }
}

impl<'a> SurfaceFit<'a> {
    fn new(
        angles: &[(f64, f64)],
        target: &'a NearestIndex<'a>,
        target_points: &'a [Vector3<f64>],
        reference: UnitQuaternion<f64>,
    ) -> Self {
        let trig = angles
            .iter()
            .map(|&(eta, omega)| {
                let (se, ce) = eta.sin_cos();
                let (so, co) = omega.sin_cos();
                [ce, se, co, so]
            })
            .collect();
        Self {
            trig,
            target,
            target_points,
            reference,
        }
    }
}

impl Objective for SurfaceFit<'_> {
    fn value_and_gradient(&mut self, x: &[f64]) -> (f64, Vec<f64>) {
        let sq = decode(x, &self.reference);
        let alpha = Vector3::from(sq.shape.alpha);
        let [e1, e2] = sq.shape.eps;
        let rot = sq.rotation.to_rotation_matrix();
        let n = self.trig.len();
        let mut local = Vec::with_capacity(n);
        let mut d_e1 = Vec::with_capacity(n);
        let mut d_e2 = Vec::with_capacity(n);
        let mut world = Vec::with_capacity(n);
        for &[ce, se, co, so] in &self.trig {
            let (c_eta, dc_eta) = spow_and_log(ce, e1);
            let (s_eta, ds_eta) = spow_and_log(se, e1);
            let (c_om, dc_om) = spow_and_log(co, e2);
            let (s_om, ds_om) = spow_and_log(so, e2);
            let u = Vector3::new(c_eta * c_om, c_eta * s_om, s_eta);
            d_e1.push(Vector3::new(dc_eta * c_om, dc_eta * s_om, ds_eta).component_mul(&alpha));
            d_e2.push(Vector3::new(c_eta * dc_om, c_eta * ds_om, 0.0).component_mul(&alpha));
            let c = u.component_mul(&alpha);
            world.push(rot * c + sq.translation);
            local.push(c);
        }
        let (value, grad_pts) = chamfer_with_gradient(&world, self.target, self.target_points);
        let mut g = vec![0.0; N_PARAMS];
        for k in 0..n {
            let gw = grad_pts[k];
            let h = rot.inverse_transform_vector(&gw);
            g[0] += h.x * local[k].x;
            g[1] += h.y * local[k].y;
            g[2] += h.z * local[k].z;
            g[3] += h.dot(&d_e1[k]);
            g[4] += h.dot(&d_e2[k]);
            g[5] += gw.x;
            g[6] += gw.y;
            g[7] += gw.z;
            let torque = (world[k] - sq.translation).cross(&gw);
            g[8] += torque.x;
            g[9] += torque.y;
            g[10] += torque.z;
        }
        (value, g)
    }

    fn project(&self, x: &mut [f64]) {
        x[3] = x[3].clamp(EPS_MIN, EPS_MAX);
        x[4] = x[4].clamp(EPS_MIN, EPS_MAX);
    }

    fn accept(&mut self, x: &mut [f64]) {
        let inc = Vector3::new(x[8], x[9], x[10]);
        self.reference = UnitQuaternion::from_scaled_axis(inc) * self.reference;
        x[8] = 0.0;
        x[9] = 0.0;
        x[10] = 0.0;
    }
}

struct StartRun {
    sq: Superquadric,
    objective: f64,
    iterations: usize,
    converged: bool,
    trace: Vec<Vec<f64>>,
}

/// Refines one start, re-drawing the surface samples every `segment` iterations.
#[allow(clippy::too_many_arguments)]
fn refine(
    start: &Superquadric,
    target: &NearestIndex,
    target_points: &[Vector3<f64>],
    n_samples: usize,
    max_iters: usize,
    segment: usize,
    config: &FitConfig,
    seed: u64,
) -> StartRun {
    let mut sq = *start;
    let mut iterations = 0;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut objective = f64::INFINITY;
    let mut round = 0u64;
    while iterations < max_iters {
        let angles = sample_angles(&sq, n_samples, seed.wrapping_add(round));
        round += 1;
        let mut fit = SurfaceFit::new(&angles, target, target_points, sq.rotation);
        let cfg = LbfgsConfig {
            max_iters: segment.min(max_iters - iterations),
            rel_tol: config.objective_tol,
            ..Default::default()
        };
        let x0 = encode(&sq);
        let m = lbfgs(&mut fit, &x0, &cfg);
        let moved = x0
            .iter()
            .zip(&m.x)
            .take(8)
            .fold(0.0f64, |a, (p, q)| a.max((p - q).abs()))
            .max(fit.reference.angle_to(&sq.rotation));
        sq = decode(&m.x, &fit.reference);
        iterations += m.iterations;
        objective = m.value;
        trace.push(m.trace);
        if m.converged && (m.iterations < cfg.max_iters || moved < config.param_tol) {
            converged = true;
            break;
        }
    }
    StartRun {
        sq,
        objective,
        iterations,
        converged,
        trace,
    }
}

fn subsample(points: &[Vector3<f64>], n: usize) -> Vec<Vector3<f64>> {
    if points.len() <= n {
        return points.to_vec();
    }
    let stride = points.len() as f64 / n as f64;
    (0..n).map(|i| points[(i as f64 * stride) as usize]).collect()
}

/// Fits one superquadric to `points`.
pub fn fit_superquadric(points: &[Vector3<f64>], config: &FitConfig) -> Result<FitResult> {
    config.validate()?;
    check_points(points)?;
    let norm = Normalization::of(points);
    let normalized: Vec<Vector3<f64>> = points.iter().map(|p| norm.apply(p)).collect();
    let starts = init_candidates(&normalized, config.n_starts)?;

    // coarse pass over every start
    let coarse_pts = subsample(&normalized, config.coarse_samples.max(MIN_POINTS));
    let coarse_index = NearestIndex::new(&coarse_pts);
    let coarse_n = config.coarse_samples.clamp(MIN_POINTS, config.n_samples.max(MIN_POINTS));
    let mut coarse: Vec<(usize, StartRun)> = starts
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let run = refine(
                s,
                &coarse_index,
                &coarse_pts,
                coarse_n,
                config.coarse_iters.min(config.max_iters),
                config.coarse_iters,
                config,
                config.seed.wrapping_add(1000 * i as u64),
            );
            (i, run)
        })
        .collect();
    coarse.sort_by(|a, b| a.1.objective.total_cmp(&b.1.objective).then(a.0.cmp(&b.0)));
    coarse.truncate(config.refine_starts.max(1));
    coarse.sort_by_key(|c| c.0);

    let index = NearestIndex::new(&normalized);
    let mut best: Option<FitResult> = None;
    for (i, c) in coarse {
        let run = refine(
            &c.sq,
            &index,
            &normalized,
            config.n_samples,
            config.max_iters.saturating_sub(c.iterations).max(1),
            60,
            config,
            config.seed.wrapping_add(1000 * i as u64 + 500),
        );
        let sq = norm.restore(&run.sq);
        let residual = chamfer_distance(&sample_points(&sq, config.n_samples, config.seed), points)?;
        let candidate = FitResult {
            sq,
            residual,
            iterations: c.iterations + run.iterations,
            start_index: i,
            converged: run.converged,
            trace: c.trace.into_iter().chain(run.trace).collect(),
        };
        let better = match &best {
            None => true,
            Some(b) => residual < b.residual - config.objective_tol * b.residual,
        };
        if better {
            best = Some(candidate);
        }
    }
    best.ok_or_else(|| Error::Numerical("no fit candidates".into()))
}

/// Fits one superquadric per pre-segmented part mesh, sampling
/// `config.n_samples` points from each surface.
pub fn fit_parts(parts: &[(String, TriMesh)], config: &FitConfig) -> Result<Vec<(String, FitResult)>> {
    parts
        .iter()
        .enumerate()
        .map(|(k, (id, mesh))| {
            mesh.validate()?;
            let points = mesh.sample_points(config.n_samples, config.seed.wrapping_add(k as u64))?;
            Ok((id.clone(), fit_superquadric(&points, config)?))
        })
        .collect()
}
