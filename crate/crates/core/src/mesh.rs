//! Triangle meshes and superquadric tessellation.

use std::collections::HashSet;
use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::sq::Superquadric;
use crate::surface::{warp_eta, warp_omega};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Vector3<f64>>,
    pub faces: Vec<[u32; 3]>,
    /// Per-vertex `(eta, omega)` when tessellated from a superquadric.
    pub angles: Option<Vec<[f64; 2]>>,
    /// Per-vertex part index when assembled from several parts.
    pub parts: Option<Vec<u32>>,
}

impl TriMesh {
    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len() as u32;
        for (i, f) in self.faces.iter().enumerate() {
            if f.iter().any(|&v| v >= n) {
                return Err(Error::Domain(format!("face {i} references vertex out of range")));
            }
        }
        Ok(())
    }

    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.faces[f].map(|i| self.vertices[i as usize]);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    pub fn edge_count(&self) -> usize {
        let mut edges = HashSet::new();
        for f in &self.faces {
            for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                edges.insert((a.min(b), a.max(b)));
            }
        }
        edges.len()
    }

    pub fn euler_characteristic(&self) -> i64 {
        self.vertices.len() as i64 - self.edge_count() as i64 + self.faces.len() as i64
    }

    /// Axis-aligned bounds `(min, max)`.
    pub fn bounds(&self) -> Option<(Vector3<f64>, Vector3<f64>)> {
        let first = *self.vertices.first()?;
        Some(self.vertices.iter().fold((first, first), |(lo, hi), v| (lo.inf(v), hi.sup(v))))
    }

    /// Area-weighted random points on the faces.
    pub fn sample_points(&self, n: usize, seed: u64) -> Result<Vec<Vector3<f64>>> {
        let mut cumulative = Vec::with_capacity(self.faces.len());
        let mut total = 0.0;
        for f in 0..self.faces.len() {
            total += self.face_area(f);
            cumulative.push(total);
        }
        if !(total > 0.0) {
            return Err(Error::DegenerateGeometry("mesh has zero surface area".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok((0..n)
            .map(|_| {
                let t = rng.random::<f64>() * total;
                let f = cumulative.partition_point(|&c| c < t).min(self.faces.len() - 1);
                let [a, b, c] = self.faces[f].map(|i| self.vertices[i as usize]);
                let (mut u, mut v): (f64, f64) = (rng.random(), rng.random());
                if u + v > 1.0 {
                    u = 1.0 - u;
                    v = 1.0 - v;
                }
                a + (b - a) * u + (c - a) * v
            })
            .collect())
    }

    /// Appends another mesh, tagging its vertices with `part`.
    pub fn append(&mut self, other: &TriMesh, part: u32) {
        let base = self.vertices.len() as u32;
        let had_parts = self.parts.is_some() || self.vertices.is_empty();
        self.vertices.extend_from_slice(&other.vertices);
        self.faces
            .extend(other.faces.iter().map(|f| f.map(|i| i + base)));
        match (&mut self.angles, &other.angles) {
            (Some(a), Some(b)) => a.extend_from_slice(b),
            (None, Some(b)) if base == 0 => self.angles = Some(b.clone()),
            _ => self.angles = None,
        }
        if had_parts {
            self.parts
                .get_or_insert_with(Vec::new)
                .extend(std::iter::repeat_n(part, other.vertices.len()));
        }
    }
}

/// Tessellates a superquadric over a warped `(eta, omega)` grid.
///
/// Layout: vertex 0 is the south pole, then `resolution - 1` rings of
/// `resolution` vertices from south to north, then the north pole. The ring
/// column `k` sits at warped longitude `-pi + 2 pi k / resolution`, so the
/// seam between the last column and column 0 is at `omega = +-pi`. Faces are
/// wound counter-clockwise seen from outside.
pub fn tessellate(sq: &Superquadric, resolution: usize) -> Result<TriMesh> {
    if resolution < 8 {
        return Err(Error::Domain(format!("tessellation resolution {resolution} < 8")));
    }
    let r = resolution;
    let [e1, e2] = sq.shape.eps;
    let mut vertices = Vec::with_capacity(2 + (r - 1) * r);
    let mut angles = Vec::with_capacity(vertices.capacity());
    let mut push = |eta: f64, omega: f64| {
        vertices.push(sq.to_world(&sq.shape.point_at(eta, omega)));
        angles.push([eta, omega]);
    };
    push(-FRAC_PI_2, 0.0);
    let omegas: Vec<f64> = (0..r)
        .map(|k| warp_omega(-PI + 2.0 * PI * k as f64 / r as f64, e2))
        .collect();
    for i in 1..r {
        let eta = warp_eta(-FRAC_PI_2 + PI * i as f64 / r as f64, e1);
        for &omega in &omegas {
            push(eta, omega);
        }
    }
    push(FRAC_PI_2, 0.0);

    let ring = |i: usize, k: usize| (1 + (i - 1) * r + k % r) as u32;
    let south = 0u32;
    let north = (1 + (r - 1) * r) as u32;
    let mut faces = Vec::with_capacity(2 * r * (r - 1));
    for k in 0..r {
        faces.push([south, ring(1, k + 1), ring(1, k)]);
    }
    for i in 1..r - 1 {
        for k in 0..r {
            faces.push([ring(i, k), ring(i, k + 1), ring(i + 1, k + 1)]);
            faces.push([ring(i, k), ring(i + 1, k + 1), ring(i + 1, k)]);
        }
    }
    for k in 0..r {
        faces.push([ring(r - 1, k), ring(r - 1, k + 1), north]);
    }
    Ok(TriMesh {
        vertices,
        faces,
        angles: Some(angles),
        parts: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sq::ShapeParams;
    use nalgebra::UnitQuaternion;

    #[test]
    fn sphere_area() {
        let m = tessellate(&Superquadric::canonical(ShapeParams::sphere(1.0)), 64).unwrap();
        let a = m.surface_area();
        assert!((a - 4.0 * PI).abs() / (4.0 * PI) < 0.02, "area {a}");
    }

    #[test]
    fn closed_genus_zero() {
        for (eps, res) in [([1.0, 1.0], 8), ([0.1, 0.1], 9), ([1.9, 0.3], 16), ([0.5, 1.5], 48)] {
            let sq = Superquadric::new(
                ShapeParams::new([1.0, 2.0, 0.5], eps).unwrap(),
                Vector3::new(1.0, 2.0, 3.0),
                UnitQuaternion::from_euler_angles(0.1, 0.2, 0.3),
            );
            let m = tessellate(&sq, res).unwrap();
            m.validate().unwrap();
            assert_eq!(m.euler_characteristic(), 2);
            assert_eq!(m.faces.len(), 2 * res * (res - 1));
            for f in 0..m.faces.len() {
                assert!(m.face_area(f) > 0.0, "degenerate face {f} for eps {eps:?}");
            }
        }
    }

    #[test]
    fn outward_winding() {
        let m = tessellate(&Superquadric::canonical(ShapeParams::sphere(1.0)), 12).unwrap();
        for f in &m.faces {
            let [a, b, c] = f.map(|i| m.vertices[i as usize]);
            let n = (b - a).cross(&(c - a));
            assert!(n.dot(&((a + b + c) / 3.0)) > 0.0);
        }
    }

    #[test]
    fn extremal_bounds() {
        let sq = Superquadric::canonical(ShapeParams::new([1.0, 2.0, 3.0], [1.0, 1.0]).unwrap());
        let (lo, hi) = tessellate(&sq, 64).unwrap().bounds().unwrap();
        assert!((hi - Vector3::new(1.0, 2.0, 3.0)).amax() < 1e-3);
        assert!((lo + Vector3::new(1.0, 2.0, 3.0)).amax() < 1e-3);
    }

    #[test]
    fn rejects_low_resolution() {
        assert!(tessellate(&Superquadric::canonical(ShapeParams::sphere(1.0)), 7).is_err());
    }

    #[test]
    fn mesh_sampling_stays_on_faces() {
        let m = tessellate(&Superquadric::canonical(ShapeParams::sphere(1.0)), 32).unwrap();
        let pts = m.sample_points(500, 1).unwrap();
        assert!(pts.iter().all(|p| p.norm() <= 1.0 + 1e-12 && p.norm() > 0.98));
    }
}
