//! Independent superquadric geometry: inside tests and Monte-Carlo volumes.

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Plain-parameter superquadric, written out independently of the library.
#[derive(Debug, Clone, Copy)]
pub struct Primitive {
    pub alpha: [f64; 3],
    pub eps: [f64; 2],
    pub center: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
}

impl Primitive {
    pub fn from_sq(sq: &sqkit::sq::Superquadric) -> Self {
        Self {
            alpha: sq.shape.alpha,
            eps: sq.shape.eps,
            center: sq.translation,
            rotation: sq.rotation,
        }
    }

    /// Inside-outside function evaluated at a world point.
    pub fn inside_outside(&self, world: &Vector3<f64>) -> f64 {
        let p = self.rotation.inverse() * (world - self.center);
        let [a, b, c] = self.alpha;
        let [e1, e2] = self.eps;
        let xy = (p.x / a).abs().powf(2.0 / e2) + (p.y / b).abs().powf(2.0 / e2);
        xy.powf(e2 / e1) + (p.z / c).abs().powf(2.0 / e1)
    }

    pub fn bounding_radius(&self) -> f64 {
        // the box |x|<=a etc. always contains the shape for eps <= 2
        Vector3::from(self.alpha).norm()
    }
}

/// Rejection-sampled points inside a primitive.
pub fn interior_points(p: &Primitive, n: usize, seed: u64) -> Vec<Vector3<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [a, b, c] = p.alpha;
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let local = Vector3::new(
            rng.random_range(-a..=a),
            rng.random_range(-b..=b),
            rng.random_range(-c..=c),
        );
        let world = p.rotation * local + p.center;
        if p.inside_outside(&world) <= 1.0 {
            out.push(world);
        }
    }
    out
}

/// Monte-Carlo estimate of the mean over `samples` of
/// `max_h max(0, 1 - f_h(x))`.
pub fn mean_penetration(samples: &[Vector3<f64>], humans: &[Primitive]) -> f64 {
    samples
        .iter()
        .map(|x| humans.iter().map(|h| (1.0 - h.inside_outside(x)).max(0.0)).fold(0.0, f64::max))
        .sum::<f64>()
        / samples.len() as f64
}

/// Area-uniform points on a sphere, by normalizing Gaussian vectors.
pub fn sphere_surface_points(center: Vector3<f64>, radius: f64, n: usize, seed: u64) -> Vec<Vector3<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gauss = || {
        // Box-Muller
        let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
        let v: f64 = rng.random();
        (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos()
    };
    (0..n)
        .map(|_| {
            let d = Vector3::new(gauss(), gauss(), gauss()).normalize();
            center + d * radius
        })
        .collect()
}

/// Mean penetration of `n` near-uniform surface points per object part into
/// the human primitives, from dense tessellations.
pub fn penetration_oracle(object: &[sqkit::sq::Superquadric], human: &[sqkit::sq::Superquadric], n: usize, seed: u64) -> f64 {
    let humans: Vec<Primitive> = human.iter().map(Primitive::from_sq).collect();
    let mut samples = Vec::with_capacity(n * object.len());
    for (k, part) in object.iter().enumerate() {
        let mesh = sqkit::mesh::tessellate(part, 200).expect("valid resolution");
        samples.extend(crate::mesh_points(&mesh, n, seed + k as u64));
    }
    mean_penetration(&samples, &humans)
}
