//! The superquadric primitive.
//!
//! A superquadric has five intrinsic parameters, the half-lengths
//! `alpha = (a1, a2, a3)` and the shape exponents `eps = (e1, e2)`, plus a pose
//! (translation and unit quaternion), eleven numbers in total. The canonical
//! inside-outside function is
//!
//! ```text
//! f(x) = (|x/a1|^(2/e2) + |y/a2|^(2/e2))^(e2/e1) + |z/a3|^(2/e1)
//! ```
//!
//! with `f = 1` on the surface, `f < 1` inside and `f > 1` outside. The explicit
//! surface map uses signed powers so that every octant is covered:
//!
//! ```text
//! r(eta, omega) = (a1 C(eta,e1) C(omega,e2), a2 C(eta,e1) S(omega,e2), a3 S(eta,e1))
//! ```

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower clamp for the shape exponents.
pub const EPS_MIN: f64 = 0.1;
/// Upper clamp for the shape exponents.
pub const EPS_MAX: f64 = 1.9;
/// Default tolerance used by [`classify_point`].
pub const SURFACE_TOL: f64 = 1e-6;

/// `sign(v) |v|^e`.
#[inline]
pub fn signed_pow(v: f64, e: f64) -> f64 {
    if v == 0.0 {
        0.0
    } else {
        v.signum() * v.abs().powf(e)
    }
}

/// Intrinsic parameters: size and shape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeParams {
    pub alpha: [f64; 3],
    pub eps: [f64; 2],
}

impl ShapeParams {
    /// Builds a shape, clamping the exponents into `[EPS_MIN, EPS_MAX]`.
    pub fn new(alpha: [f64; 3], eps: [f64; 2]) -> Result<Self> {
        if alpha.iter().any(|a| !a.is_finite() || *a <= 0.0) {
            return Err(Error::Domain(format!("alpha must be positive, got {alpha:?}")));
        }
        if eps.iter().any(|e| !e.is_finite()) {
            return Err(Error::Domain(format!("non-finite eps {eps:?}")));
        }
        Ok(Self {
            alpha,
            eps: [eps[0].clamp(EPS_MIN, EPS_MAX), eps[1].clamp(EPS_MIN, EPS_MAX)],
        })
    }

    pub fn sphere(radius: f64) -> Self {
        Self {
            alpha: [radius; 3],
            eps: [1.0, 1.0],
        }
    }

    pub fn max_alpha(&self) -> f64 {
        self.alpha[0].max(self.alpha[1]).max(self.alpha[2])
    }

    /// Unchecked inside-outside function.
    #[inline]
    pub fn implicit(&self, p: &Vector3<f64>) -> f64 {
        let [a1, a2, a3] = self.alpha;
        let [e1, e2] = self.eps;
        let xy = (p.x / a1).abs().powf(2.0 / e2) + (p.y / a2).abs().powf(2.0 / e2);
        xy.powf(e2 / e1) + (p.z / a3).abs().powf(2.0 / e1)
    }

    /// Gradient of the inside-outside function.
    pub fn implicit_gradient(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let [a1, a2, a3] = self.alpha;
        let [e1, e2] = self.eps;
        let (ux, uy, uz) = ((p.x / a1).abs(), (p.y / a2).abs(), (p.z / a3).abs());
        let xy = ux.powf(2.0 / e2) + uy.powf(2.0 / e2);
        let (gx, gy) = if xy > 0.0 {
            let outer = (2.0 / e1) * xy.powf(e2 / e1 - 1.0);
            (
                outer * ux.powf(2.0 / e2 - 1.0) * p.x.signum() / a1,
                outer * uy.powf(2.0 / e2 - 1.0) * p.y.signum() / a2,
            )
        } else {
            (0.0, 0.0)
        };
        let gz = if uz > 0.0 {
            (2.0 / e1) * uz.powf(2.0 / e1 - 1.0) * p.z.signum() / a3
        } else {
            0.0
        };
        Vector3::new(gx, gy, gz)
    }

    /// Unchecked explicit surface map.
    #[inline]
    pub fn point_at(&self, eta: f64, omega: f64) -> Vector3<f64> {
        let [a1, a2, a3] = self.alpha;
        let [e1, e2] = self.eps;
        let (se, ce) = eta.sin_cos();
        let (so, co) = omega.sin_cos();
        let ce = signed_pow(ce, e1);
        Vector3::new(
            a1 * ce * signed_pow(co, e2),
            a2 * ce * signed_pow(so, e2),
            a3 * signed_pow(se, e1),
        )
    }
}

/// Evaluates the inside-outside function at a canonical-frame point.
pub fn implicit_value(point: &Vector3<f64>, shape: &ShapeParams) -> Result<f64> {
    if !point.iter().all(|c| c.is_finite()) {
        return Err(Error::Domain(format!("non-finite point {point:?}")));
    }
    Ok(shape.implicit(point))
}

/// Evaluates the explicit surface map.
pub fn explicit_point(eta: f64, omega: f64, shape: &ShapeParams) -> Result<Vector3<f64>> {
    const SLACK: f64 = 1e-12;
    if !(eta.is_finite() && eta.abs() <= FRAC_PI_2 + SLACK) {
        return Err(Error::Domain(format!("eta {eta} outside [-pi/2, pi/2]")));
    }
    if !(omega.is_finite() && omega.abs() <= PI + SLACK) {
        return Err(Error::Domain(format!("omega {omega} outside [-pi, pi]")));
    }
    Ok(shape.point_at(eta, omega))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Classification {
    Inside,
    OnSurface,
    Outside,
}

/// A posed superquadric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Superquadric {
    #[serde(flatten)]
    pub shape: ShapeParams,
    pub translation: Vector3<f64>,
    #[serde(with = "quat_wxyz")]
    pub rotation: UnitQuaternion<f64>,
}

impl Superquadric {
    pub fn new(shape: ShapeParams, translation: Vector3<f64>, rotation: UnitQuaternion<f64>) -> Self {
        Self {
            shape,
            translation,
            rotation,
        }
    }

    /// Canonically posed superquadric (identity rotation, zero translation).
    pub fn canonical(shape: ShapeParams) -> Self {
        Self::new(shape, Vector3::zeros(), UnitQuaternion::identity())
    }

    /// Builds from the flat 11-vector `[a1 a2 a3 e1 e2 t1 t2 t3 q1 q2 q3 q4]`
    /// with the quaternion scalar first.
    pub fn from_params(p: &[f64; 12]) -> Result<Self> {
        let shape = ShapeParams::new([p[0], p[1], p[2]], [p[3], p[4]])?;
        let q = unit_quaternion([p[8], p[9], p[10], p[11]])?;
        Ok(Self::new(shape, Vector3::new(p[5], p[6], p[7]), q))
    }

    pub fn to_world(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn world_to_canonical(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.inverse_transform_vector(&(p - self.translation))
    }

    /// Inside-outside value of a world-frame point.
    pub fn implicit_world(&self, p: &Vector3<f64>) -> f64 {
        self.shape.implicit(&self.world_to_canonical(p))
    }

    pub fn validate(&self) -> Result<()> {
        ShapeParams::new(self.shape.alpha, self.shape.eps)?;
        if !self.translation.iter().all(|c| c.is_finite()) {
            return Err(Error::Domain("non-finite translation".into()));
        }
        Ok(())
    }
}

/// Classifies a world-frame point against a posed superquadric.
pub fn classify_point(point: &Vector3<f64>, sq: &Superquadric, tol: f64) -> Result<Classification> {
    if !(tol > 0.0) {
        return Err(Error::Domain(format!("tolerance must be positive, got {tol}")));
    }
    let f = implicit_value(&sq.world_to_canonical(point), &sq.shape)?;
    Ok(if (f - 1.0).abs() <= tol {
        Classification::OnSurface
    } else if f < 1.0 {
        Classification::Inside
    } else {
        Classification::Outside
    })
}

/// Builds a unit quaternion from `[w, x, y, z]`.
///
/// Inputs within 1e-3 of unit norm are normalized silently; anything shorter
/// than 1e-6 is rejected.
pub fn unit_quaternion(wxyz: [f64; 4]) -> Result<UnitQuaternion<f64>> {
    let q = Quaternion::new(wxyz[0], wxyz[1], wxyz[2], wxyz[3]);
    let n = q.norm();
    if !n.is_finite() || n < 1e-6 {
        return Err(Error::DegenerateQuaternion(n));
    }
    if (n - 1.0).abs() > 1e-3 {
        return Err(Error::Domain(format!("quaternion norm {n} is not within 1e-3 of unit")));
    }
    Ok(UnitQuaternion::from_quaternion(q))
}

/// Rotation matrix of a quaternion given scalar-first.
pub fn quat_to_rotation(wxyz: [f64; 4]) -> Result<Matrix3<f64>> {
    Ok(unit_quaternion(wxyz)?.to_rotation_matrix().into_inner())
}

pub fn quat_to_wxyz(q: &UnitQuaternion<f64>) -> [f64; 4] {
    [q.w, q.i, q.j, q.k]
}

/// Serde adapter writing unit quaternions as `[w, x, y, z]`.
pub mod quat_wxyz {
    use nalgebra::{Quaternion, UnitQuaternion};
    use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(q: &UnitQuaternion<f64>, s: S) -> Result<S::Ok, S::Error> {
        [q.w, q.i, q.j, q.k].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<UnitQuaternion<f64>, D::Error> {
        let [w, x, y, z] = <[f64; 4]>::deserialize(d)?;
        let q = Quaternion::new(w, x, y, z);
        let n = q.norm();
        if !n.is_finite() || n < 1e-6 {
            return Err(D::Error::custom(format!("degenerate quaternion (norm {n:.3e})")));
        }
        // keep already-unit values bit-exact so save/load is a fixpoint
        if (n - 1.0).abs() <= 1e-12 {
            Ok(UnitQuaternion::new_unchecked(q))
        } else {
            Ok(UnitQuaternion::from_quaternion(q))
        }
    }
}
