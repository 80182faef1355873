//! Obstacle-avoidance potentials on the Bloch sphere.
//!
//! Every variant is a function of the dot products `u_i = n·p_i` with the
//! obstacle centers, which also defines its extension to a neighbourhood of
//! the sphere in ℝ³. Euclidean gradients are gradients of that extension;
//! Riemannian gradients are their tangential projections.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sphere::{geodesic_distance, project_tangent, BlochVector, TangentVector};

/// Minimum distance (radians) from ±center at which the chain rule through
/// `arccos` is still evaluated.
pub const SINGULARITY_RADIUS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// `τ / (1 + (θ/D)^{2N})` with θ the geodesic distance to the center.
    Point,
    /// `τ / (1 + ((1 − n_z)/D)^{2N})`, depends on `n_z` only.
    Axial,
    /// Sum of point terms over several centers.
    Cover,
    /// `e^τ exp(−1 / (1 − (θ/D)^{2N}))` inside the cap, zero outside.
    Bump,
}

/// Parameters of an obstacle potential.
#[derive(Debug, Clone, PartialEq)]
pub struct ObstacleSpec {
    tau: f64,
    d_radius: f64,
    sharpness: u32,
    centers: Vec<BlochVector>,
    variant: Variant,
}

/// Euclidean and Riemannian gradients at a point of the sphere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PotentialGradient {
    pub euclidean: Vector3<f64>,
    pub riemannian: TangentVector,
}

impl ObstacleSpec {
    pub fn new(
        variant: Variant,
        tau: f64,
        d_radius: f64,
        sharpness: u32,
        centers: Vec<BlochVector>,
    ) -> Result<Self> {
        let mut problems = Vec::new();
        if !(tau > 0.0 && tau.is_finite()) {
            problems.push(format!("tau must be positive, got {tau}"));
        }
        if !(d_radius > 0.0 && d_radius < std::f64::consts::PI) {
            problems.push(format!("d_radius must lie in (0, π), got {d_radius}"));
        }
        if sharpness < 1 {
            problems.push("sharpness must be at least 1".to_string());
        }
        if centers.is_empty() {
            problems.push("at least one center is required".to_string());
        }
        match variant {
            Variant::Point | Variant::Bump if centers.len() != 1 => {
                problems.push(format!("{variant:?} variant needs exactly one center"));
            }
            Variant::Axial => {
                if centers.len() != 1 {
                    problems.push("axial variant needs exactly one center".to_string());
                } else if (centers[0].to_vector() - Vector3::z()).norm() > 1e-12 {
                    problems.push("axial variant requires center (0, 0, 1)".to_string());
                }
            }
            _ => {}
        }
        if !problems.is_empty() {
            return Err(Error::Validation(problems));
        }
        Ok(Self {
            tau,
            d_radius,
            sharpness,
            centers,
            variant,
        })
    }

    pub fn point(tau: f64, d_radius: f64, sharpness: u32, center: BlochVector) -> Result<Self> {
        Self::new(Variant::Point, tau, d_radius, sharpness, vec![center])
    }

    pub fn axial(tau: f64, d_radius: f64, sharpness: u32) -> Result<Self> {
        Self::new(
            Variant::Axial,
            tau,
            d_radius,
            sharpness,
            vec![BlochVector::north()],
        )
    }

    pub fn cover(
        tau: f64,
        d_radius: f64,
        sharpness: u32,
        centers: Vec<BlochVector>,
    ) -> Result<Self> {
        Self::new(Variant::Cover, tau, d_radius, sharpness, centers)
    }

    pub fn bump(tau: f64, d_radius: f64, sharpness: u32, center: BlochVector) -> Result<Self> {
        Self::new(Variant::Bump, tau, d_radius, sharpness, vec![center])
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn d_radius(&self) -> f64 {
        self.d_radius
    }

    pub fn sharpness(&self) -> u32 {
        self.sharpness
    }

    pub fn centers(&self) -> &[BlochVector] {
        &self.centers
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    /// Same spec with every center mapped through `f`.
    ///
    /// The axial invariant is not re-checked, so rotating an axial spec is
    /// only meaningful for rotations about e_z.
    pub fn map_centers(&self, f: impl Fn(&BlochVector) -> BlochVector) -> Self {
        Self {
            centers: self.centers.iter().map(f).collect(),
            ..self.clone()
        }
    }

    fn exponent(&self) -> i32 {
        2 * self.sharpness as i32
    }

    /// Radial profile `τ / (1 + (s/D)^{2N})`.
    fn profile(&self, s: f64) -> f64 {
        self.tau / (1.0 + (s / self.d_radius).powi(self.exponent()))
    }

    /// `d/ds` of the radial profile.
    fn profile_derivative(&self, s: f64) -> f64 {
        let two_n = self.exponent();
        let r = (s / self.d_radius).powi(two_n);
        -self.tau * (two_n as f64) / self.d_radius.powi(two_n) * s.powi(two_n - 1)
            / ((1.0 + r) * (1.0 + r))
    }

    fn bump_value(&self, theta: f64) -> f64 {
        if theta >= self.d_radius {
            return 0.0;
        }
        let y = 1.0 - (theta / self.d_radius).powi(self.exponent());
        self.tau.exp() * (-1.0 / y).exp()
    }

    fn bump_derivative(&self, theta: f64) -> f64 {
        if theta >= self.d_radius {
            return 0.0;
        }
        let two_n = self.exponent();
        let y = 1.0 - (theta / self.d_radius).powi(two_n);
        let dy = -(two_n as f64) * theta.powi(two_n - 1) / self.d_radius.powi(two_n);
        self.bump_value(theta) * dy / (y * y)
    }
}

fn arccos_clamped(u: f64) -> f64 {
    u.clamp(-1.0, 1.0).acos()
}

/// Value of the potential's extension at an arbitrary point of ℝ³.
///
/// On the sphere this equals [`potential_value`].
pub fn potential_value_ambient(spec: &ObstacleSpec, x: &Vector3<f64>) -> f64 {
    match spec.variant {
        Variant::Axial => spec.profile(1.0 - x.z),
        Variant::Point | Variant::Cover => spec
            .centers
            .iter()
            .map(|c| spec.profile(arccos_clamped(x.dot(c.as_vector()))))
            .sum(),
        Variant::Bump => spec.bump_value(arccos_clamped(x.dot(spec.centers[0].as_vector()))),
    }
}

pub fn potential_value(spec: &ObstacleSpec, n: &BlochVector) -> f64 {
    potential_value_ambient(spec, n.as_vector())
}

/// Gradient of one arccos-based term: `f'(θ) ∇θ` with `∇θ = −c / √(1 − u²)`.
fn arccos_term_gradient(
    n: &BlochVector,
    center: &BlochVector,
    derivative: impl Fn(f64) -> f64,
    support: Option<f64>,
) -> Result<Vector3<f64>> {
    let theta = geodesic_distance(n, center);
    if let Some(radius) = support {
        if theta >= radius {
            return Ok(Vector3::zeros());
        }
    }
    let u = n.dot(center);
    if !(SINGULARITY_RADIUS..=std::f64::consts::PI - SINGULARITY_RADIUS).contains(&theta) {
        return Err(Error::GradientSingularity { u });
    }
    let theta = arccos_clamped(u);
    let grad_theta = -center.as_vector() / (1.0 - u * u).sqrt();
    Ok(grad_theta * derivative(theta))
}

pub fn potential_gradient(spec: &ObstacleSpec, n: &BlochVector) -> Result<PotentialGradient> {
    let euclidean = match spec.variant {
        Variant::Axial => -Vector3::z() * spec.profile_derivative(1.0 - n.z()),
        Variant::Point | Variant::Cover => {
            let mut g = Vector3::zeros();
            for c in &spec.centers {
                g += arccos_term_gradient(n, c, |t| spec.profile_derivative(t), None)?;
            }
            g
        }
        Variant::Bump => arccos_term_gradient(
            n,
            &spec.centers[0],
            |t| spec.bump_derivative(t),
            Some(spec.d_radius),
        )?,
    };
    Ok(PotentialGradient {
        euclidean,
        riemannian: TangentVector::new(*n, euclidean),
    })
}

/// Whether `n` is strictly within `margin` of some center.
pub fn is_inside_forbidden(spec: &ObstacleSpec, n: &BlochVector, margin: f64) -> bool {
    spec.centers
        .iter()
        .any(|c| geodesic_distance(n, c) < margin)
}

/// Smallest geodesic distance from `n` to any obstacle center.
pub fn clearance(spec: &ObstacleSpec, n: &BlochVector) -> f64 {
    spec.centers
        .iter()
        .map(|c| geodesic_distance(n, c))
        .fold(f64::INFINITY, f64::min)
}

/// `n × ∇V(n)`, the torque of the obstacle force about the origin.
pub fn torque(spec: &ObstacleSpec, n: &BlochVector) -> Result<Vector3<f64>> {
    let g = potential_gradient(spec, n)?;
    Ok(n.as_vector().cross(&project_tangent(n, &g.euclidean)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn point() -> ObstacleSpec {
        ObstacleSpec::point(1.0, 0.393, 2, BlochVector::north()).unwrap()
    }

    #[test]
    fn point_profile_examples() {
        let spec = point();
        assert_eq!(potential_value(&spec, &BlochVector::north()), 1.0);
        let at_d = BlochVector::from_spherical(0.393, 0.7);
        assert_abs_diff_eq!(potential_value(&spec, &at_d), 0.5, epsilon = 1e-12);
        let at_2d = BlochVector::from_spherical(2.0 * 0.393, 0.0);
        assert_abs_diff_eq!(potential_value(&spec, &at_2d), 1.0 / 17.0, epsilon = 1e-12);
    }

    #[test]
    fn grad_theta_at_equator() {
        // u = 0 so ∇θ = −n⋆ and ∇V = f'(π/2) ∇θ
        let spec = ObstacleSpec::point(30.0, 0.35, 6, BlochVector::north()).unwrap();
        let g = potential_gradient(&spec, &BlochVector::new(1.0, 0.0, 0.0)).unwrap();
        let fp = spec.profile_derivative(std::f64::consts::FRAC_PI_2);
        assert_abs_diff_eq!(g.euclidean, -Vector3::z() * fp, epsilon = 1e-15);
    }

    #[test]
    fn profile_slope_at_radius() {
        let spec = ObstacleSpec::point(30.0, 0.35, 6, BlochVector::north()).unwrap();
        let expected = -30.0 * 6.0 / (2.0 * 0.35);
        assert_abs_diff_eq!(spec.profile_derivative(0.35), expected, epsilon = 1e-10);
    }

    #[test]
    fn singular_points_are_errors() {
        let spec = point();
        assert!(matches!(
            potential_gradient(&spec, &BlochVector::north()),
            Err(Error::GradientSingularity { .. })
        ));
        assert!(matches!(
            potential_gradient(&spec, &BlochVector::south()),
            Err(Error::GradientSingularity { .. })
        ));
        let axial = ObstacleSpec::axial(30.0, 0.35, 6).unwrap();
        assert!(potential_gradient(&axial, &BlochVector::north()).is_ok());
    }

    #[test]
    fn forbidden_region_membership() {
        let spec = ObstacleSpec::point(30.0, 0.35, 6, BlochVector::north()).unwrap();
        assert!(is_inside_forbidden(&spec, &BlochVector::north(), 1e-3));
        let on_boundary = BlochVector::from_spherical(0.35, 1.0);
        assert!(!is_inside_forbidden(
            &spec,
            &on_boundary,
            geodesic_distance(&on_boundary, &BlochVector::north())
        ));
        assert!(is_inside_forbidden(
            &spec,
            &BlochVector::from_spherical(0.175, 1.0),
            0.35
        ));
    }

    #[test]
    fn validation_rejects_bad_specs() {
        assert!(matches!(
            ObstacleSpec::point(-1.0, 0.35, 6, BlochVector::north()),
            Err(Error::Validation(_))
        ));
        assert!(ObstacleSpec::point(1.0, 4.0, 6, BlochVector::north()).is_err());
        assert!(ObstacleSpec::point(1.0, 0.3, 0, BlochVector::north()).is_err());
        assert!(
            ObstacleSpec::new(Variant::Axial, 1.0, 0.3, 2, vec![BlochVector::south()]).is_err()
        );
        assert!(ObstacleSpec::cover(1.0, 0.3, 2, vec![]).is_err());
    }

    #[test]
    fn bump_vanishes_outside_support() {
        let spec = ObstacleSpec::bump(2.0, 0.4, 2, BlochVector::north()).unwrap();
        let outside = BlochVector::from_spherical(0.5, 0.3);
        assert_eq!(potential_value(&spec, &outside), 0.0);
        let g = potential_gradient(&spec, &outside).unwrap();
        assert_eq!(g.euclidean, Vector3::zeros());
        let inside = BlochVector::from_spherical(0.2, 0.3);
        let r = (0.2f64 / 0.4).powi(4);
        assert_abs_diff_eq!(
            potential_value(&spec, &inside),
            2.0f64.exp() * (-1.0 / (1.0 - r)).exp(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn axial_gradient_at_south_pole_is_along_axis() {
        let spec = ObstacleSpec::axial(30.0, 0.35, 6).unwrap();
        let g = potential_gradient(&spec, &BlochVector::south()).unwrap();
        assert_eq!(g.euclidean.x, 0.0);
        assert_eq!(g.euclidean.y, 0.0);
        assert!(g.riemannian.vec.norm() < 1e-300);
    }

    #[test]
    fn monotone_point_barrier() {
        let spec = ObstacleSpec::point(30.0, 0.35, 6, BlochVector::north()).unwrap();
        let mut last = f64::INFINITY;
        for i in 1..400 {
            let theta = i as f64 * std::f64::consts::PI / 400.0;
            let val = potential_value(&spec, &BlochVector::from_spherical(theta, 0.0));
            assert!(val <= last, "increasing at θ = {theta}");
            last = val;
        }
    }

    #[test]
    fn avoidance_family_limit() {
        let inside = BlochVector::from_spherical(0.3, 0.0);
        let outside = BlochVector::from_spherical(0.4, 0.0);
        let spec = ObstacleSpec::point(1.0, 0.35, 200, BlochVector::north()).unwrap();
        assert!(potential_value(&spec, &inside) > 1.0 - 1e-9);
        assert!(potential_value(&spec, &outside) < 1e-9);
    }
}
