use nalgebra::{UnitQuaternion, Vector3};
use proptest::prelude::*;
use sq_oracles::surface_chamfer;
use sqkit::chamfer::chamfer_distance;
use sqkit::fitting::{fit_superquadric, FitConfig};
use sqkit::sq::{ShapeParams, Superquadric};
use sqkit::surface::sample_points;

fn cube_corners() -> Vec<Vector3<f64>> {
    (0..16)
        .map(|i| {
            let s = |bit: usize| if i & bit == 0 { -1.0 } else { 1.0 };
            Vector3::new(s(1), s(2), s(4))
        })
        .collect()
}

#[test]
fn recovers_a_known_superquadric() {
    let truth = Superquadric::new(
        ShapeParams::new([1.0, 0.5, 2.0], [0.8, 1.2]).unwrap(),
        Vector3::new(0.3, -0.2, 0.5),
        UnitQuaternion::from_euler_angles(0.5, -0.3, 1.1),
    );
    let points = sample_points(&truth, 2000, 3);
    let fit = fit_superquadric(&points, &FitConfig::default()).unwrap();
    assert!(surface_chamfer(&fit.sq, &truth) <= 0.01 * 2.0);
    // the residual is bounded by the sampling floor of the generating surface
    let floor = chamfer_distance(&sample_points(&truth, 2000, 0), &points).unwrap();
    assert!(fit.residual <= 1.5 * floor, "residual {} floor {floor}", fit.residual);
    assert!(fit.residual >= 0.0);
}

#[test]
fn sphere_samples_give_unit_sphere() {
    let points = sample_points(&Superquadric::canonical(ShapeParams::sphere(1.0)), 2000, 5);
    let fit = fit_superquadric(&points, &FitConfig::default()).unwrap();
    for a in fit.sq.shape.alpha {
        assert!((a - 1.0).abs() <= 0.02, "{:?}", fit.sq.shape);
    }
}

fn corner_objective(eps: [f64; 2], scale: f64) -> f64 {
    let sq = Superquadric::canonical(ShapeParams::new([scale; 3], eps).unwrap());
    chamfer_distance(&sample_points(&sq, 8000, 1), &cube_corners()).unwrap()
}

#[test]
fn cube_corners_push_exponents_to_the_floor() {
    let fit = fit_superquadric(&cube_corners(), &FitConfig::default()).unwrap();
    let [e1, e2] = fit.sq.shape.eps;
    assert!(e1 <= 0.15 && e2 <= 0.15, "eps {:?}", fit.sq.shape.eps);

    // brute-force grid: the best exponents on the grid sit on the lower clamp
    let grid: Vec<f64> = (0..10).map(|i| 0.1 + 0.2 * i as f64).collect();
    let mut best = (f64::INFINITY, [0.0; 2]);
    for &e1 in &grid {
        for &e2 in &grid {
            let v = (0..=20)
                .map(|k| corner_objective([e1, e2], 0.95 + 0.01 * k as f64))
                .fold(f64::INFINITY, f64::min);
            if v < best.0 {
                best = (v, [e1, e2]);
            }
        }
    }
    assert_eq!(best.1, [0.1, 0.1]);
}

#[test]
fn traces_are_monotone_per_segment() {
    let truth = Superquadric::new(
        ShapeParams::new([0.4, 0.9, 0.6], [0.3, 1.5]).unwrap(),
        Vector3::new(1.0, 2.0, -1.0),
        UnitQuaternion::from_euler_angles(1.0, 0.2, -0.7),
    );
    let fit = fit_superquadric(&sample_points(&truth, 1500, 8), &FitConfig::default()).unwrap();
    assert!(!fit.trace.is_empty());
    for segment in &fit.trace {
        assert!(segment.windows(2).all(|w| w[1] <= w[0]));
    }
}

#[test]
fn fitting_is_deterministic() {
    let truth = Superquadric::canonical(ShapeParams::new([0.5, 1.0, 0.7], [0.6, 0.9]).unwrap());
    let points = sample_points(&truth, 800, 2);
    let cfg = FitConfig::default();
    let a = fit_superquadric(&points, &cfg).unwrap();
    let b = fit_superquadric(&points, &cfg).unwrap();
    assert_eq!(a.sq, b.sq);
    assert_eq!(a.residual, b.residual);
    assert_eq!(a.start_index, b.start_index);
}

#[test]
fn exhausted_budget_returns_best_so_far() {
    let truth = Superquadric::canonical(ShapeParams::new([0.5, 1.0, 0.7], [0.6, 0.9]).unwrap());
    let cfg = FitConfig {
        max_iters: 2,
        ..Default::default()
    };
    let fit = fit_superquadric(&sample_points(&truth, 500, 2), &cfg).unwrap();
    assert!(!fit.converged);
    assert!(fit.residual.is_finite());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4))]

    #[test]
    fn fit_is_rigidly_equivariant(
        angles in [-3.0f64..3.0, -1.5..1.5, -3.0..3.0],
        t in [-2.0f64..2.0, -2.0..2.0, -2.0..2.0],
    ) {
        let truth = Superquadric::new(
            ShapeParams::new([0.6, 1.1, 0.8], [0.7, 1.2]).unwrap(),
            Vector3::new(0.1, 0.0, -0.2),
            UnitQuaternion::from_euler_angles(0.3, 0.1, 0.0),
        );
        let points = sample_points(&truth, 2000, 4);
        let g = UnitQuaternion::from_euler_angles(angles[0], angles[1], angles[2]);
        let tv = Vector3::from(t);
        let moved: Vec<_> = points.iter().map(|p| g * p + tv).collect();
        let cfg = FitConfig::default();
        let base = fit_superquadric(&points, &cfg).unwrap().sq;
        let fit = fit_superquadric(&moved, &cfg).unwrap().sq;
        let base_moved = Superquadric::new(base.shape, g * base.translation + tv, g * base.rotation);
        prop_assert!(surface_chamfer(&fit, &base_moved) <= 0.01 * 1.1);
    }
}
