//! SU(2) as unit quaternions.
//!
//! The quaternion `(w, x, y, z)` stands for `U = w·I − i(x σ_x + y σ_y + z σ_z)`,
//! so the Hamilton product is matrix multiplication and `U (v·σ) U†` is the
//! usual right-handed quaternion rotation. Lie-algebra coordinates `ω ∈ ℝ³`
//! stand for `X = −(i/2) ω·σ`.

use nalgebra::{Matrix3, Quaternion, Vector3};

use crate::error::{Error, Result};
use crate::sphere::{BlochVector, ANTIPODAL_CUTOFF};

/// Algebra coordinates `ω` of `X = −(i/2) ω·σ`.
pub type AlgebraVector = Vector3<f64>;

/// Largest SO(3) rotation angle an increment may have and still be inverted
/// through the Cayley map.
pub const CHART_LIMIT: f64 = std::f64::consts::PI - 1e-6;

/// Target accuracy of the fiber solve in [`reconstruct_with_momentum`].
const LIFT_TOLERANCE: f64 = 1e-11;
/// Accuracy accepted when the fiber solve stalls before [`LIFT_TOLERANCE`].
const LIFT_ACCEPT: f64 = 1e-9;

/// Compositions between renormalizations in [`reconstruct`].
pub const RENORMALIZE_EVERY: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitaryQubit(Quaternion<f64>);

impl UnitaryQubit {
    pub fn identity() -> Self {
        Self(Quaternion::identity())
    }

    /// Normalizes `(w, x, y, z)`; the input must be nonzero.
    pub fn from_quaternion(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self(Quaternion::new(w, x, y, z).normalize())
    }

    /// `exp(−(i/2) angle a·σ)` for a unit axis `a`, i.e. rotation by `angle` about `a`.
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let a = axis.normalize();
        let (s, c) = (angle / 2.0).sin_cos();
        Self(Quaternion::new(c, s * a.x, s * a.y, s * a.z))
    }

    /// Group exponential of algebra coordinates.
    pub fn exp(omega: &AlgebraVector) -> Self {
        let angle = omega.norm();
        if angle < 1e-12 {
            let h = omega / 2.0;
            return Self::from_quaternion(1.0, h.x, h.y, h.z);
        }
        Self::from_axis_angle(omega, angle)
    }

    /// Principal logarithm: the `ω` with `exp(ω) = self` and `|ω| ∈ [0, 2π)`.
    pub fn log(&self) -> AlgebraVector {
        let v = self.0.imag();
        let s = v.norm();
        if s < 1e-300 {
            return Vector3::zeros();
        }
        let angle = 2.0 * s.atan2(self.0.w);
        v * (angle / s)
    }

    pub fn quaternion(&self) -> &Quaternion<f64> {
        &self.0
    }

    pub fn w(&self) -> f64 {
        self.0.w
    }

    pub fn vector_part(&self) -> Vector3<f64> {
        self.0.imag()
    }

    pub fn compose(&self, other: &UnitaryQubit) -> UnitaryQubit {
        Self(self.0 * other.0)
    }

    pub fn inverse(&self) -> UnitaryQubit {
        Self(self.0.conjugate())
    }

    /// Rescales onto the unit sphere of quaternions (polar correction).
    pub fn renormalized(&self) -> UnitaryQubit {
        Self(self.0.normalize())
    }

    /// `|U†U − I|` expressed through the quaternion norm.
    pub fn unitarity_defect(&self) -> f64 {
        (self.0.norm_squared() - 1.0).abs()
    }

    /// SO(3) rotation angle in `[0, π]` of the adjoint action.
    pub fn rotation_angle(&self) -> f64 {
        2.0 * self.0.imag().norm().atan2(self.0.w.abs())
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        let (w, x, y, z) = (self.0.w, self.0.i, self.0.j, self.0.k);
        Matrix3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        )
    }
}

impl std::ops::Mul for UnitaryQubit {
    type Output = UnitaryQubit;
    fn mul(self, rhs: UnitaryQubit) -> UnitaryQubit {
        self.compose(&rhs)
    }
}

/// Cayley retraction `(I − (h/2)X)⁻¹(I + (h/2)X)` with `X = −(i/2)ω·σ`.
///
/// With `s = hω/4` this is the quaternion `(1 − |s|², 2s)/(1 + |s|²)`, a
/// rotation about `ω` by `4·atan(h|ω|/4)`.
pub fn cayley(omega: &AlgebraVector, h: f64) -> UnitaryQubit {
    let s = omega * (h / 4.0);
    let s2 = s.norm_squared();
    let d = 1.0 + s2;
    UnitaryQubit(Quaternion::new(
        (1.0 - s2) / d,
        2.0 * s.x / d,
        2.0 * s.y / d,
        2.0 * s.z / d,
    ))
}

/// Inverse of [`cayley`]; `index` is only used for error reporting.
///
/// Fails with `ChartOverflow` once the increment's rotation angle reaches
/// [`CHART_LIMIT`].
pub fn cayley_inverse(w: &UnitaryQubit, h: f64, index: usize) -> Result<AlgebraVector> {
    let q = w.quaternion();
    let angle = 2.0 * q.imag().norm().atan2(q.w);
    if !(angle < CHART_LIMIT) {
        return Err(Error::ChartOverflow { index, angle });
    }
    let s = q.imag() / (1.0 + q.w);
    Ok(s * (4.0 / h))
}

/// Increment generators `ω_k = cay⁻¹(U_k⁻¹U_{k+1})/h`.
pub fn generators(unitaries: &[UnitaryQubit], h: f64) -> Result<Vec<AlgebraVector>> {
    unitaries
        .windows(2)
        .enumerate()
        .map(|(k, p)| cayley_inverse(&p[0].inverse().compose(&p[1]), h, k))
        .collect()
}

fn hat(s: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -s.z, s.y, s.z, 0.0, -s.x, -s.y, s.x, 0.0)
}

/// `∂ω/∂ζ` when the increment `cay(hω)` is perturbed on the right by `exp(εζ)`.
pub fn cayley_right_jacobian(omega: &AlgebraVector, h: f64) -> Matrix3<f64> {
    let s = omega * (h / 4.0);
    (Matrix3::identity() * (1.0 - s.norm_squared()) + hat(&s) * 2.0 + s * s.transpose() * 2.0) / h
}

/// `∂ω/∂ζ` when the increment `cay(hω)` is perturbed on the left by `exp(εζ)`.
pub fn cayley_left_jacobian(omega: &AlgebraVector, h: f64) -> Matrix3<f64> {
    let s = omega * (h / 4.0);
    (Matrix3::identity() * (1.0 - s.norm_squared()) - hat(&s) * 2.0 + s * s.transpose() * 2.0) / h
}

/// `U (v·σ) U†` read back as a 3-vector.
pub fn adjoint_rotate(u: &UnitaryQubit, v: &Vector3<f64>) -> Vector3<f64> {
    let q = u.quaternion();
    let w = q.w;
    let r = q.imag();
    let t = r.cross(v) * 2.0;
    v + t * w + r.cross(&t)
}

/// Bloch vector of `U|0⟩`, where `|0⟩` is the +z eigenstate.
pub fn project_bloch(u: &UnitaryQubit) -> BlochVector {
    BlochVector::from_vector(adjoint_rotate(u, &Vector3::z()))
}

/// Fubini–Study distance `arccos |⟨ψ, φ⟩|` between the pure states of two Bloch vectors.
pub fn fs_distance(n: &BlochVector, m: &BlochVector) -> f64 {
    crate::sphere::geodesic_distance(n, m) / 2.0
}

/// Element of SU(2) whose adjoint action takes `a` to `b` along the shortest arc.
///
/// Antipodal inputs rotate by π about an axis orthogonal to `a`, chosen
/// deterministically.
pub fn shortest_arc(a: &BlochVector, b: &BlochVector) -> UnitaryQubit {
    let (av, bv) = (a.as_vector(), b.as_vector());
    let c = av.cross(bv);
    let s = c.norm();
    let angle = s.atan2(av.dot(bv));
    if s < 1e-15 {
        if angle < 1.0 {
            return UnitaryQubit::identity();
        }
        let helper = if av.x.abs() < 0.9 {
            Vector3::x()
        } else {
            Vector3::y()
        };
        let axis = helper - av * helper.dot(av);
        return UnitaryQubit::from_axis_angle(&axis, std::f64::consts::PI);
    }
    UnitaryQubit::from_axis_angle(&c, angle)
}

/// Minimal lift of a Bloch vector: rotation from +z along the shortest arc.
///
/// The south pole lifts to `(0, 1, 0, 0)`, a half turn about e_x.
pub fn lift(n: &BlochVector) -> UnitaryQubit {
    shortest_arc(&BlochVector::north(), n)
}

/// Smallest generator `ω` (horizontal, `ω ⊥ e_z` in the body frame) with
/// `project_bloch(U·cay(ω, h)) = target`.
pub fn minimal_generator(
    u: &UnitaryQubit,
    target: &BlochVector,
    h: f64,
    step: usize,
) -> Result<AlgebraVector> {
    let m = adjoint_rotate(&u.inverse(), target.as_vector());
    let axis = Vector3::z().cross(&m);
    let s = axis.norm();
    if m.z <= -1.0 + ANTIPODAL_CUTOFF {
        return Err(Error::NonliftableStep { step });
    }
    if s < 1e-300 {
        return Ok(Vector3::zeros());
    }
    let angle = s.atan2(m.z);
    Ok(axis * ((4.0 / h) * (angle / 4.0).tan() / s))
}

/// `U_{k+1} = U_k · cay(ω_k, h)` starting from `u0`.
pub fn reconstruct(u0: &UnitaryQubit, omegas: &[AlgebraVector], h: f64) -> Vec<UnitaryQubit> {
    let mut out = Vec::with_capacity(omegas.len() + 1);
    let mut u = *u0;
    out.push(u);
    for (k, omega) in omegas.iter().enumerate() {
        u = u.compose(&cayley(omega, h));
        if (k + 1) % RENORMALIZE_EVERY == 0 {
            u = u.renormalized();
        }
        out.push(u);
    }
    out
}

/// Discrete axial momentum at cut `j`.
///
/// `u_j = U_j`, `w_prev`, `w_j`, `w_next` are `ω_{j−1}, ω_j, ω_{j+1}`. The value is
/// `e_z · R(U_j) B(ω_j) (μ_{j+1} − μ_j)/h` with `B = h ∂ω/∂ζ` for right
/// perturbations and `μ_i = (ω_i − ω_{i−1})/h`. Along critical points of the
/// discrete action with an axially symmetric potential it does not depend on `j`.
pub fn axial_momentum(
    u_j: &UnitaryQubit,
    w_prev: &AlgebraVector,
    w_j: &AlgebraVector,
    w_next: &AlgebraVector,
    h: f64,
) -> f64 {
    let mu_j = (w_j - w_prev) / h;
    let mu_next = (w_next - w_j) / h;
    let body = cayley_right_jacobian(w_j, h) * (mu_next - mu_j);
    adjoint_rotate(u_j, &body).z
}

/// Lifts a Bloch trajectory so that the discrete axial momentum equals `jz`.
///
/// The first unitary and the first two generators take the minimal lift; every
/// later generator is chosen in its isotropy fiber by a scalar Newton solve,
/// starting from the minimal-norm member.
pub fn reconstruct_with_momentum(
    bloch: &[BlochVector],
    jz: f64,
    h: f64,
) -> Result<Vec<UnitaryQubit>> {
    if bloch.is_empty() {
        return Err(Error::InvalidArgument("empty Bloch trajectory".into()));
    }
    let mut us = vec![lift(&bloch[0])];
    let mut omegas: Vec<AlgebraVector> = Vec::with_capacity(bloch.len());
    for (k, target) in bloch.iter().enumerate().skip(1) {
        let step = k - 1;
        let u = us[step];
        let w_min = minimal_generator(&u, target, h, step)?;
        let omega = if step < 2 {
            w_min
        } else {
            let base = cayley(&w_min, h);
            let j = step - 1;
            let (u_j, w_prev, w_j) = (us[j], omegas[j - 1], omegas[j]);
            let omega_of = |phi: f64| -> Result<AlgebraVector> {
                let inc = base.compose(&UnitaryQubit::from_axis_angle(&Vector3::z(), phi));
                cayley_inverse(&inc, h, step).map_err(|_| Error::NonliftableStep { step })
            };
            let defect = |phi: f64| -> Result<f64> {
                Ok(axial_momentum(&u_j, &w_prev, &w_j, &omega_of(phi)?, h) - jz)
            };
            let mut phi = 0.0;
            let mut f = defect(phi)?;
            let scale = jz.abs().max(1.0);
            let mut iter = 0;
            while f.abs() > LIFT_TOLERANCE * scale {
                iter += 1;
                if iter > 60 {
                    return Err(Error::NonliftableStep { step });
                }
                let eps = 1e-6;
                let df = (defect(phi + eps)? - defect(phi - eps)?) / (2.0 * eps);
                if df == 0.0 || !df.is_finite() {
                    return Err(Error::NonliftableStep { step });
                }
                let mut delta = -f / df;
                // damp to keep the increment inside the chart
                let mut accepted = false;
                for _ in 0..30 {
                    if let Ok(fn_) = defect(phi + delta) {
                        if fn_.abs() < f.abs() || delta.abs() < 1e-15 {
                            phi += delta;
                            f = fn_;
                            accepted = true;
                            break;
                        }
                    }
                    delta /= 2.0;
                }
                if !accepted {
                    // stalled at the rounding floor
                    if f.abs() <= LIFT_ACCEPT * scale {
                        break;
                    }
                    return Err(Error::NonliftableStep { step });
                }
            }
            omega_of(phi)?
        };
        let mut next = u.compose(&cayley(&omega, h));
        if k % RENORMALIZE_EVERY == 0 {
            next = next.renormalized();
        }
        omegas.push(omega);
        us.push(next);
    }
    Ok(us)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use num_complex::Complex64 as C;
    use proptest::prelude::*;

    type M2 = [[C; 2]; 2];

    fn matrix(u: &UnitaryQubit) -> M2 {
        let q = u.quaternion();
        let i = C::i();
        [
            [C::from(q.w) - i * q.k, -i * q.i - q.j],
            [-i * q.i + q.j, C::from(q.w) + i * q.k],
        ]
    }

    fn mul(a: &M2, b: &M2) -> M2 {
        let mut c = [[C::from(0.0); 2]; 2];
        for r in 0..2 {
            for s in 0..2 {
                c[r][s] = a[r][0] * b[0][s] + a[r][1] * b[1][s];
            }
        }
        c
    }

    fn dagger(a: &M2) -> M2 {
        [
            [a[0][0].conj(), a[1][0].conj()],
            [a[0][1].conj(), a[1][1].conj()],
        ]
    }

    /// `U (v·σ) U†` by explicit complex matrix products.
    fn conjugate(u: &UnitaryQubit, v: &Vector3<f64>) -> Vector3<f64> {
        let i = C::i();
        let m = [
            [C::from(v.z), v.x - i * v.y],
            [v.x + i * v.y, C::from(-v.z)],
        ];
        let um = matrix(u);
        let r = mul(&mul(&um, &m), &dagger(&um));
        Vector3::new(r[1][0].re, r[1][0].im, r[0][0].re)
    }

    /// Cayley map computed from its matrix definition.
    fn cayley_matrix(omega: &Vector3<f64>, h: f64) -> M2 {
        let i = C::i();
        let x = [
            [-i * omega.z / 2.0, (-i * omega.x - omega.y) / 2.0],
            [(-i * omega.x + omega.y) / 2.0, i * omega.z / 2.0],
        ];
        let one = C::from(1.0);
        let a = [
            [one - x[0][0] * h / 2.0, -x[0][1] * h / 2.0],
            [-x[1][0] * h / 2.0, one - x[1][1] * h / 2.0],
        ];
        let b = [
            [one + x[0][0] * h / 2.0, x[0][1] * h / 2.0],
            [x[1][0] * h / 2.0, one + x[1][1] * h / 2.0],
        ];
        let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
        let inv = [
            [a[1][1] / det, -a[0][1] / det],
            [-a[1][0] / det, a[0][0] / det],
        ];
        mul(&inv, &b)
    }

    fn vec3() -> impl Strategy<Value = Vector3<f64>> {
        (-3.0..3.0f64, -3.0..3.0f64, -3.0..3.0f64).prop_map(|(x, y, z)| Vector3::new(x, y, z))
    }

    fn unitary() -> impl Strategy<Value = UnitaryQubit> {
        (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
            .prop_filter("nonzero", |(a, b, c, d)| {
                a * a + b * b + c * c + d * d > 1e-2
            })
            .prop_map(|(a, b, c, d)| UnitaryQubit::from_quaternion(a, b, c, d))
    }

    fn unit() -> impl Strategy<Value = BlochVector> {
        vec3()
            .prop_filter("nonzero", |v| v.norm() > 1e-2)
            .prop_map(BlochVector::from_vector)
    }

    #[test]
    fn cayley_of_zero_is_identity() {
        assert_eq!(cayley(&Vector3::zeros(), 0.3), UnitaryQubit::identity());
    }

    #[test]
    fn cayley_matches_matrix_definition() {
        let omega = Vector3::new(0.7, -1.3, 2.1);
        let h = 0.4;
        let direct = cayley_matrix(&omega, h);
        let ours = matrix(&cayley(&omega, h));
        for r in 0..2 {
            for s in 0..2 {
                assert!((direct[r][s] - ours[r][s]).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn cayley_angle_about_z() {
        let (w, h) = (3.0, 0.5);
        let rotated = conjugate(&cayley(&Vector3::new(0.0, 0.0, w), h), &Vector3::x());
        let angle = rotated.y.atan2(rotated.x);
        assert_abs_diff_eq!(angle, 4.0 * (h * w / 4.0).atan(), epsilon = 1e-14);
        assert_abs_diff_eq!(rotated.z, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn half_turn_examples() {
        let u = cayley(&Vector3::new(0.0, 0.0, std::f64::consts::PI), 1.0);
        let v = adjoint_rotate(&u, &Vector3::x());
        assert_abs_diff_eq!(v.z, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(v.norm(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(v, conjugate(&u, &Vector3::x()), epsilon = 1e-14);

        let u = cayley(&Vector3::new(0.0, std::f64::consts::PI, 0.0), 1.0);
        let n = project_bloch(&u);
        assert_abs_diff_eq!(n.y(), 0.0, epsilon = 1e-15);
        let angle = 4.0 * (std::f64::consts::PI / 4.0).atan();
        assert_abs_diff_eq!(n.x(), angle.sin(), epsilon = 1e-14);
        assert_abs_diff_eq!(n.z(), angle.cos(), epsilon = 1e-14);
    }

    #[test]
    fn identity_projects_to_north() {
        assert_eq!(
            project_bloch(&UnitaryQubit::identity()).to_vector(),
            Vector3::z()
        );
        assert_eq!(
            adjoint_rotate(&UnitaryQubit::identity(), &Vector3::new(1.0, 2.0, 3.0)),
            Vector3::new(1.0, 2.0, 3.0)
        );
    }

    #[test]
    fn fs_distance_examples() {
        let n = BlochVector::new(0.3, -0.2, 0.9);
        assert_eq!(fs_distance(&n, &n), 0.0);
        assert_abs_diff_eq!(
            fs_distance(&n, &n.antipode()),
            std::f64::consts::FRAC_PI_2,
            epsilon = 1e-12
        );
    }

    #[test]
    fn reconstruct_examples() {
        let u0 = UnitaryQubit::from_quaternion(0.3, 0.1, -0.5, 0.2);
        let us = reconstruct(&u0, &[Vector3::zeros(); 4], 0.1);
        assert_eq!(us.len(), 5);
        assert!(us.iter().all(|u| *u == u0));

        let omegas = vec![Vector3::new(0.0, 0.0, 2.5); 7];
        for pole in [UnitaryQubit::identity(), lift(&BlochVector::south())] {
            let n0 = project_bloch(&pole);
            for u in reconstruct(&pole, &omegas, 0.1) {
                assert_abs_diff_eq!(
                    project_bloch(&u).to_vector(),
                    n0.to_vector(),
                    epsilon = 1e-15
                );
            }
        }
    }

    #[test]
    fn long_reconstruction_stays_unitary() {
        let omegas: Vec<_> = (0..1000)
            .map(|k| Vector3::new((k as f64 * 0.1).sin(), 1.0, 0.3))
            .collect();
        for u in reconstruct(&UnitaryQubit::identity(), &omegas, 0.01) {
            assert!(u.unitarity_defect() < 1e-10);
        }
    }

    #[test]
    fn south_pole_lift() {
        let u = lift(&BlochVector::south());
        assert_abs_diff_eq!(u.w(), 0.0, epsilon = 1e-16);
        assert_abs_diff_eq!(u.vector_part(), Vector3::x(), epsilon = 1e-16);
    }

    #[test]
    fn momentum_lift_at_pole_is_trivial() {
        let bloch = vec![BlochVector::north(); 8];
        let us = reconstruct_with_momentum(&bloch, 0.0, 0.1).unwrap();
        for w in generators(&us, 0.1).unwrap() {
            assert!(w.norm() < 1e-12);
        }
    }

    #[test]
    fn momentum_lift_of_great_circle() {
        let (h, step) = (0.05, 0.04);
        let bloch: Vec<_> = (0..20)
            .map(|k| BlochVector::new((k as f64 * step).cos(), (k as f64 * step).sin(), 0.0))
            .collect();
        let us = reconstruct_with_momentum(&bloch, 0.0, h).unwrap();
        let omegas = generators(&us, h).unwrap();
        // the rotation axis e_z expressed in the body frame of U_0
        let axis = adjoint_rotate(&us[0].inverse(), &Vector3::z());
        let expected = axis * ((4.0 / h) * (step / 4.0).tan());
        for w in &omegas {
            assert_abs_diff_eq!(*w, expected, epsilon = 1e-9);
        }
        for (u, n) in us.iter().zip(&bloch) {
            assert_abs_diff_eq!(project_bloch(u).to_vector(), n.to_vector(), epsilon = 1e-12);
        }
    }

    #[test]
    fn momentum_lift_hits_requested_value() {
        let h = 0.1;
        let bloch: Vec<_> = (0..15)
            .map(|k| {
                let t = k as f64 * h;
                BlochVector::from_spherical(1.0 + 0.3 * t * t, 0.5 * t + 0.2 * t * t * t)
            })
            .collect();
        let jz = 0.05;
        let us = reconstruct_with_momentum(&bloch, jz, h).unwrap();
        let omegas = generators(&us, h).unwrap();
        for j in 1..omegas.len() - 1 {
            let m = axial_momentum(&us[j], &omegas[j - 1], &omegas[j], &omegas[j + 1], h);
            assert_abs_diff_eq!(m, jz, epsilon = 1e-8);
        }
        for (u, n) in us.iter().zip(&bloch) {
            assert_abs_diff_eq!(project_bloch(u).to_vector(), n.to_vector(), epsilon = 1e-8);
        }
    }

    #[test]
    fn chart_overflow_is_reported() {
        let w = UnitaryQubit::from_axis_angle(&Vector3::x(), std::f64::consts::PI);
        assert!(matches!(
            cayley_inverse(&w, 0.1, 3),
            Err(Error::ChartOverflow { index: 3, .. })
        ));
    }

    #[test]
    fn cayley_jacobians_match_finite_differences() {
        let (omega, h, eps) = (Vector3::new(0.8, -2.0, 1.1), 0.3, 1e-6);
        let w = cayley(&omega, h);
        let right = cayley_right_jacobian(&omega, h);
        let left = cayley_left_jacobian(&omega, h);
        for i in 0..3 {
            let e = Vector3::ith(i, eps);
            let d = |p: UnitaryQubit, m: UnitaryQubit| {
                (cayley_inverse(&p, h, 0).unwrap() - cayley_inverse(&m, h, 0).unwrap())
                    / (2.0 * eps)
            };
            let dr = d(w * UnitaryQubit::exp(&e), w * UnitaryQubit::exp(&-e));
            let dl = d(UnitaryQubit::exp(&e) * w, UnitaryQubit::exp(&-e) * w);
            assert_abs_diff_eq!(dr, right.column(i).into_owned(), epsilon = 1e-7);
            assert_abs_diff_eq!(dl, left.column(i).into_owned(), epsilon = 1e-7);
        }
        assert_abs_diff_eq!(right.transpose(), left, epsilon = 1e-15);
    }

    proptest! {
        #[test]
        fn cayley_is_symmetric(omega in vec3(), h in 0.01..1.0f64) {
            let p = cayley(&omega, h) * cayley(&-omega, h);
            prop_assert!((p.quaternion() - Quaternion::identity()).norm() < 1e-12);
        }

        #[test]
        fn cayley_inverse_round_trip(omega in vec3(), h in 0.01..0.5f64) {
            let back = cayley_inverse(&cayley(&omega, h), h, 0).unwrap();
            prop_assert!((back - omega).norm() < 1e-11 * (1.0 + omega.norm()));
        }

        #[test]
        fn adjoint_matches_conjugation(u in unitary(), v in vec3()) {
            prop_assert!((adjoint_rotate(&u, &v) - conjugate(&u, &v)).norm() < 1e-12 * (1.0 + v.norm()));
        }

        #[test]
        fn adjoint_is_homomorphism(a in unitary(), b in unitary(), v in vec3()) {
            let lhs = adjoint_rotate(&(a * b), &v);
            let rhs = adjoint_rotate(&a, &adjoint_rotate(&b, &v));
            prop_assert!((lhs - rhs).norm() < 1e-12 * (1.0 + v.norm()));
        }

        #[test]
        fn rotation_is_special_orthogonal(u in unitary()) {
            let r = u.rotation_matrix();
            prop_assert!((r.transpose() * r - Matrix3::identity()).norm() < 1e-12);
            prop_assert!((r.determinant() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn associativity(a in unitary(), b in unitary(), c in unitary()) {
            let l = (a * b) * c;
            let r = a * (b * c);
            prop_assert!((l.quaternion() - r.quaternion()).norm() < 1e-12);
        }

        #[test]
        fn inverse_round_trip(a in unitary()) {
            prop_assert!(((a * a.inverse()).quaternion() - Quaternion::identity()).norm() < 1e-12);
        }

        #[test]
        fn projection_is_right_invariant(u in unitary(), theta in -6.0..6.0f64) {
            let k = UnitaryQubit::from_axis_angle(&Vector3::z(), theta);
            let a = project_bloch(&u).to_vector();
            let b = project_bloch(&(u * k)).to_vector();
            prop_assert!((a - b).norm() < 1e-12);
        }

        #[test]
        fn projection_is_equivariant(g in unitary(), u in unitary()) {
            let a = project_bloch(&(g * u)).to_vector();
            let b = adjoint_rotate(&g, project_bloch(&u).as_vector());
            prop_assert!((a - b).norm() < 1e-12);
        }

        #[test]
        fn fs_is_half_geodesic(n in unit(), m in unit()) {
            let d = crate::sphere::geodesic_distance(&n, &m);
            prop_assert!((2.0 * fs_distance(&n, &m) - d).abs() < 1e-12);
        }

        #[test]
        fn reconstruction_projects_by_rotation(u0 in unitary(), a in vec3(), b in vec3(), c in vec3()) {
            let h = 0.2;
            let omegas = [a, b, c];
            let us = reconstruct(&u0, &omegas, h);
            let mut n = project_bloch(&u0).to_vector();
            let mut u = u0;
            for (k, w) in omegas.iter().enumerate() {
                // world-frame increment U_k cay U_k⁻¹
                let g = u * cayley(w, h) * u.inverse();
                n = adjoint_rotate(&g, &n);
                u = us[k + 1];
                prop_assert!((project_bloch(&u).to_vector() - n).norm() < 1e-12);
            }
        }

        #[test]
        fn exp_log_round_trip(omega in vec3()) {
            let back = UnitaryQubit::exp(&omega).log();
            prop_assert!((back - omega).norm() < 1e-11);
        }
    }
}
