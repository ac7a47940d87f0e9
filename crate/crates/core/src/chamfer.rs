//! Symmetric Chamfer distance and nearest-neighbour queries.

use kiddo::{ImmutableKdTree, SquaredEuclidean};
use nalgebra::Vector3;

use crate::error::{Error, Result};

/// Point sets at or below this size are searched by brute force.
pub const BRUTE_FORCE_MAX: usize = 512;

/// Exact nearest-neighbour index over a fixed point set.
pub struct NearestIndex<'a> {
    points: &'a [Vector3<f64>],
    tree: Option<ImmutableKdTree<f64, 3>>,
}

impl<'a> NearestIndex<'a> {
    pub fn new(points: &'a [Vector3<f64>]) -> Self {
        let tree = (points.len() > BRUTE_FORCE_MAX).then(|| {
            let raw: Vec<[f64; 3]> = points.iter().map(|p| [p.x, p.y, p.z]).collect();
            ImmutableKdTree::new_from_slice(&raw).expect("finite points")
        });
        Self { points, tree }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index and squared distance of the nearest stored point.
    #[inline]
    pub fn nearest(&self, q: &Vector3<f64>) -> (usize, f64) {
        match &self.tree {
            Some(tree) => {
                let hit = tree.query(&[q.x, q.y, q.z]).nearest_one::<SquaredEuclidean<f64>>().execute();
                (hit.item as usize, hit.distance)
            }
            None => {
                let mut best = (0, f64::INFINITY);
                for (i, p) in self.points.iter().enumerate() {
                    let d = (p - q).norm_squared();
                    if d < best.1 {
                        best = (i, d);
                    }
                }
                best
            }
        }
    }
}

fn check(set: &[Vector3<f64>], name: &str) -> Result<()> {
    if set.is_empty() {
        return Err(Error::Domain(format!("chamfer distance of empty point set {name}")));
    }
    if !set.iter().all(|p| p.iter().all(|c| c.is_finite())) {
        return Err(Error::Domain(format!("non-finite point in set {name}")));
    }
    Ok(())
}

fn mean_nearest(from: &[Vector3<f64>], to: &NearestIndex) -> f64 {
    from.iter().map(|p| to.nearest(p).1.sqrt()).sum::<f64>() / from.len() as f64
}

/// `0.5 * (mean_a min_b |a - b| + mean_b min_a |b - a|)`, unsquared.
pub fn chamfer_distance(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> Result<f64> {
    check(a, "A")?;
    check(b, "B")?;
    let (ia, ib) = (NearestIndex::new(a), NearestIndex::new(b));
    Ok(0.5 * (mean_nearest(a, &ib) + mean_nearest(b, &ia)))
}

/// Chamfer distance against a pre-indexed target, with its gradient with
/// respect to every point of the moving set.
pub fn chamfer_with_gradient(
    moving: &[Vector3<f64>],
    target: &NearestIndex,
    target_points: &[Vector3<f64>],
) -> (f64, Vec<Vector3<f64>>) {
    let wa = 0.5 / moving.len() as f64;
    let wb = 0.5 / target_points.len() as f64;
    let mut grad = vec![Vector3::zeros(); moving.len()];
    let mut forward = 0.0;
    for (g, p) in grad.iter_mut().zip(moving) {
        let (j, d2) = target.nearest(p);
        if d2 > 0.0 {
            let d = d2.sqrt();
            forward += d;
            *g += (p - target_points[j]) * (wa / d);
        }
    }
    let moving_index = NearestIndex::new(moving);
    let mut backward = 0.0;
    for q in target_points {
        let (i, d2) = moving_index.nearest(q);
        if d2 > 0.0 {
            let d = d2.sqrt();
            backward += d;
            grad[i] += (moving[i] - q) * (wb / d);
        }
    }
    (
        0.5 * (forward / moving.len() as f64 + backward / target_points.len() as f64),
        grad,
    )
}
