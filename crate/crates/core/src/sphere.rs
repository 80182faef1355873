//! Intrinsic geometry of the unit sphere S² with the round metric.
//!
//! Points are Bloch vectors of pure qubit states. Tangent vectors are stored
//! extrinsically as 3-vectors orthogonal to their base point, and the
//! Levi-Civita connection is the tangential projection of the ambient
//! derivative.

use nalgebra::Vector3;

use crate::error::{Error, Result};

/// Below this angle the sinc-type factors switch to their series expansions.
const SERIES_ANGLE: f64 = 1e-6;

/// Dot products at or below `-1 + ANTIPODAL_CUTOFF` count as antipodal.
pub const ANTIPODAL_CUTOFF: f64 = 1e-9;

/// Tolerance for the jet consistency checks of [`covariant_acceleration`].
pub const JET_TOLERANCE: f64 = 1e-6;

/// A point on the unit sphere (pure qubit state).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlochVector(Vector3<f64>);

impl BlochVector {
    /// Normalizes `(x, y, z)`. Panics on the zero vector.
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self::from_vector(Vector3::new(x, y, z))
    }

    pub fn from_vector(v: Vector3<f64>) -> Self {
        Self::try_from_vector(v).expect("Bloch vector must be nonzero and finite")
    }

    pub fn try_from_vector(v: Vector3<f64>) -> Result<Self> {
        let norm = v.norm();
        if !norm.is_finite() || norm == 0.0 {
            return Err(Error::InvalidArgument(format!(
                "cannot normalize {v:?} onto the sphere"
            )));
        }
        Ok(Self(v / norm))
    }

    /// North pole, the |0⟩ state.
    pub fn north() -> Self {
        Self(Vector3::z())
    }

    /// South pole, the |1⟩ state.
    pub fn south() -> Self {
        Self(-Vector3::z())
    }

    /// Point at polar angle `theta` from +z and azimuth `phi`.
    pub fn from_spherical(theta: f64, phi: f64) -> Self {
        Self::new(
            theta.sin() * phi.cos(),
            theta.sin() * phi.sin(),
            theta.cos(),
        )
    }

    pub fn x(&self) -> f64 {
        self.0.x
    }

    pub fn y(&self) -> f64 {
        self.0.y
    }

    pub fn z(&self) -> f64 {
        self.0.z
    }

    pub fn as_vector(&self) -> &Vector3<f64> {
        &self.0
    }

    pub fn to_vector(self) -> Vector3<f64> {
        self.0
    }

    pub fn dot(&self, other: &BlochVector) -> f64 {
        self.0.dot(&other.0)
    }

    pub fn antipode(&self) -> Self {
        Self(-self.0)
    }
}

/// A vector in the tangent plane of `base`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TangentVector {
    pub base: BlochVector,
    pub vec: Vector3<f64>,
}

impl TangentVector {
    /// Projects `vec` onto the tangent plane at `base`.
    pub fn new(base: BlochVector, vec: Vector3<f64>) -> Self {
        Self {
            base,
            vec: project_tangent(&base, &vec),
        }
    }

    pub fn zero(base: BlochVector) -> Self {
        Self {
            base,
            vec: Vector3::zeros(),
        }
    }

    pub fn norm(&self) -> f64 {
        self.vec.norm()
    }
}

/// Position and its first three time derivatives, `(n, v, a, j)`.
///
/// `n` is kept as a raw ambient vector so that extrinsic integrators can
/// exhibit drift off the sphere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentedState {
    pub n: Vector3<f64>,
    pub v: Vector3<f64>,
    pub a: Vector3<f64>,
    pub j: Vector3<f64>,
}

impl AugmentedState {
    pub fn new(n: Vector3<f64>, v: Vector3<f64>, a: Vector3<f64>, j: Vector3<f64>) -> Self {
        Self { n, v, a, j }
    }

    /// Builds a jet of a curve on the sphere from tangential data.
    ///
    /// The tangential parts of `v`, `a` and `j` are kept and the normal
    /// parts are completed from the identities obtained by differentiating
    /// ‖n‖² = 1: n·v = 0, n·a = −‖v‖², n·j = −3 v·a.
    pub fn on_sphere(n: BlochVector, v: Vector3<f64>, a: Vector3<f64>, j: Vector3<f64>) -> Self {
        let nv = *n.as_vector();
        let v = project_tangent(&n, &v);
        let a = project_tangent(&n, &a) - v.norm_squared() * nv;
        let j = project_tangent(&n, &j) - 3.0 * v.dot(&a) * nv;
        Self { n: nv, v, a, j }
    }

    /// Jet of a point at rest.
    pub fn at_rest(n: BlochVector) -> Self {
        Self::on_sphere(n, Vector3::zeros(), Vector3::zeros(), Vector3::zeros())
    }

    /// Violations of n·v = 0 and n·a = −‖v‖².
    pub fn consistency_defects(&self) -> (f64, f64) {
        (
            self.n.dot(&self.v).abs(),
            (self.n.dot(&self.a) + self.v.norm_squared()).abs(),
        )
    }

    pub(crate) fn axpy(&self, h: f64, d: &AugmentedState) -> AugmentedState {
        AugmentedState {
            n: self.n + d.n * h,
            v: self.v + d.v * h,
            a: self.a + d.a * h,
            j: self.j + d.j * h,
        }
    }
}

/// Orthogonal projection `(I − n nᵀ) w` onto the tangent plane at `n`.
pub fn project_tangent(n: &BlochVector, w: &Vector3<f64>) -> Vector3<f64> {
    let n = n.as_vector();
    w - n * n.dot(w)
}

/// Great-circle distance in `[0, π]`.
pub fn geodesic_distance(n: &BlochVector, m: &BlochVector) -> f64 {
    let a = n.as_vector();
    let b = m.as_vector();
    let cos = a.dot(b).clamp(-1.0, 1.0);
    let sin = a.cross(b).norm();
    sin.atan2(cos)
}

/// Riemannian exponential: follow the great circle through `n` with initial
/// velocity `v` for unit time.
pub fn exp_map(n: &BlochVector, v: &TangentVector) -> BlochVector {
    let theta = v.vec.norm();
    let sinc = if theta < SERIES_ANGLE {
        1.0 - theta * theta / 6.0
    } else {
        theta.sin() / theta
    };
    BlochVector::from_vector(n.as_vector() * theta.cos() + v.vec * sinc)
}

/// Riemannian logarithm; undefined at the antipode.
pub fn log_map(n: &BlochVector, m: &BlochVector) -> Result<TangentVector> {
    let dot = n.dot(m);
    if dot <= -1.0 + ANTIPODAL_CUTOFF {
        return Err(Error::AntipodalPoints { dot });
    }
    let w = m.as_vector() - n.as_vector() * dot;
    let sin = w.norm();
    let theta = geodesic_distance(n, m);
    let scale = if theta < SERIES_ANGLE {
        1.0 + theta * theta / 6.0
    } else {
        theta / sin
    };
    Ok(TangentVector {
        base: *n,
        vec: w * scale,
    })
}

/// Covariant acceleration `D_t ṅ = n̈ + ‖ṅ‖² n` of a curve with jet `(n, v, a)`.
pub fn covariant_acceleration(
    n: &BlochVector,
    v: &Vector3<f64>,
    a: &Vector3<f64>,
) -> Result<Vector3<f64>> {
    let nv = n.as_vector();
    let speed2 = v.norm_squared();
    let tangency = nv.dot(v);
    if tangency.abs() > JET_TOLERANCE {
        return Err(Error::InconsistentJet(format!("n·v = {tangency}")));
    }
    let normal = nv.dot(a) + speed2;
    if normal.abs() > JET_TOLERANCE {
        return Err(Error::InconsistentJet(format!("n·a + ‖v‖² = {normal}")));
    }
    Ok(a + nv * speed2)
}

/// Riemann curvature of the unit sphere, `R(a, b)c = (b·c)a − (a·c)b`.
pub fn curvature_op(a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>) -> Vector3<f64> {
    a * b.dot(c) - b * a.dot(c)
}

/// Constant-speed great-circle interpolation from `n0` (t = 0) to `n1` (t = 1).
pub fn slerp(n0: &BlochVector, n1: &BlochVector, t: f64) -> Result<BlochVector> {
    let log = log_map(n0, n1)?;
    Ok(exp_map(
        n0,
        &TangentVector {
            base: *n0,
            vec: log.vec * t,
        },
    ))
}
