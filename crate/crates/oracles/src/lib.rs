//! Reference computations for tests. Everything here is deliberately simple
//! and shares no numerical code with the library beyond the data types.

use std::num::NonZero;

use kiddo::{ImmutableKdTree, SquaredEuclidean};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sqkit::mesh::TriMesh;

pub mod geometry;

/// Closest point on triangle `abc` to `p` (Voronoi-region walk).
pub fn closest_on_triangle(p: &Vector3<f64>, a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>) -> Vector3<f64> {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && d4 - d3 >= 0.0 && d5 - d6 >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}

/// Mean distance from `points` to the triangle surface of `mesh`. Candidate
/// triangles are the 16 with the nearest centroids, so the result is an upper
/// bound that is tight for fine, well-shaped meshes.
pub fn mean_distance_to_mesh(mesh: &TriMesh, points: &[Vector3<f64>]) -> f64 {
    let corners = |f: &[u32; 3]| f.map(|i| mesh.vertices[i as usize]);
    let centroids: Vec<[f64; 3]> = mesh
        .faces
        .iter()
        .map(|f| {
            let [a, b, c] = corners(f);
            let m = (a + b + c) / 3.0;
            [m.x, m.y, m.z]
        })
        .collect();
    let tree: ImmutableKdTree<f64, 3> = ImmutableKdTree::new_from_slice(&centroids).expect("finite mesh");
    let k = NonZero::new(16.min(mesh.faces.len())).expect("non-empty mesh");
    let total: f64 = points
        .iter()
        .map(|p| {
            tree.query(&[p.x, p.y, p.z])
                .nearest_n::<SquaredEuclidean<f64>>(k)
                .execute()
                .into_iter()
                .map(|hit| {
                    let [a, b, c] = corners(&mesh.faces[hit.item as usize]);
                    (closest_on_triangle(p, &a, &b, &c) - p).norm()
                })
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    total / points.len() as f64
}

/// Brute-force symmetric Chamfer distance.
pub fn chamfer_brute(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> f64 {
    let one_way = |from: &[Vector3<f64>], to: &[Vector3<f64>]| {
        from.iter()
            .map(|p| to.iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min))
            .sum::<f64>()
            / from.len() as f64
    };
    0.5 * (one_way(a, b) + one_way(b, a))
}

/// Uniform random points on a triangle mesh.
pub fn mesh_points(mesh: &TriMesh, n: usize, seed: u64) -> Vec<Vector3<f64>> {
    let areas: Vec<f64> = mesh
        .faces
        .iter()
        .map(|f| {
            let [a, b, c] = f.map(|i| mesh.vertices[i as usize]);
            0.5 * (b - a).cross(&(c - a)).norm()
        })
        .collect();
    let cumulative: Vec<f64> = areas
        .iter()
        .scan(0.0, |acc, a| {
            *acc += a;
            Some(*acc)
        })
        .collect();
    let total = *cumulative.last().expect("non-empty mesh");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let t = rng.random::<f64>() * total;
            let f = cumulative.partition_point(|&c| c < t).min(areas.len() - 1);
            let [a, b, c] = mesh.faces[f].map(|i| mesh.vertices[i as usize]);
            let (r1, r2): (f64, f64) = (rng.random(), rng.random());
            let s = r1.sqrt();
            a * (1.0 - s) + b * (s * (1.0 - r2)) + c * (s * r2)
        })
        .collect()
}

/// Symmetric surface-to-surface Chamfer distance between two superquadrics,
/// measured between fine tessellations: points drawn on each mesh are
/// projected onto the other.
pub fn surface_chamfer(a: &sqkit::sq::Superquadric, b: &sqkit::sq::Superquadric) -> f64 {
    let ma = sqkit::mesh::tessellate(a, 200).expect("valid resolution");
    let mb = sqkit::mesh::tessellate(b, 200).expect("valid resolution");
    0.5 * (mean_distance_to_mesh(&mb, &mesh_points(&ma, 5000, 11)) + mean_distance_to_mesh(&ma, &mesh_points(&mb, 5000, 12)))
}
