//! Continuous obstacle-avoiding cubics as a first-order ODE on the jet
//! `(n, v, a, j)`, an extrinsic RK4 integrator and the axial momentum map.

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::potential::{potential_gradient, ObstacleSpec};
use crate::sphere::{AugmentedState, BlochVector};

/// Hard cap on RK4 step counts.
pub const MAX_RK4_STEPS: u64 = 10_000_000;

/// A sampled jet trajectory with uniform step `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct CubicJetTrajectory {
    pub h: f64,
    pub states: Vec<AugmentedState>,
    pub potential: Option<ObstacleSpec>,
}

fn project(n: &Vector3<f64>, w: &Vector3<f64>) -> Vector3<f64> {
    w - n * n.dot(w)
}

/// Time derivative `(v, a, j, F)` of the jet.
///
/// The tangential part of `F` is the cubic equation solved for the fourth
/// derivative. Its normal part, `−(3‖a‖² + 4 v·j)`, is what keeps `‖n‖ = 1`
/// and the derived identities invariant under the exact flow.
pub fn cubic_rhs(s: &AugmentedState, spec: Option<&ObstacleSpec>) -> Result<AugmentedState> {
    let (n, v, a, j) = (&s.n, &s.v, &s.a, &s.j);
    let grad = match spec {
        Some(spec) => {
            let unit = BlochVector::try_from_vector(*n)?;
            potential_gradient(spec, &unit)?.euclidean
        }
        None => Vector3::zeros(),
    };
    let vv = v.norm_squared();
    let va = v.dot(a);
    let bracket = a * (2.0 * vv) + v * (4.0 * va) + n * a.norm_squared() + grad;
    let normal = 3.0 * a.norm_squared() + 4.0 * v.dot(j);
    let f = -project(n, &bracket) - n * normal;
    Ok(AugmentedState::new(*v, *a, *j, f))
}

/// Number of uniform steps covering `[0, t_final]`, checking divisibility.
pub fn step_count(t_final: f64, h: f64) -> Result<usize> {
    if !(t_final > 0.0 && h > 0.0 && t_final.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "need T > 0 and h > 0, got T = {t_final}, h = {h}"
        )));
    }
    let ratio = t_final / h;
    if ratio > MAX_RK4_STEPS as f64 {
        return Err(Error::StepCountOverflow {
            steps: ratio.ceil() as u64,
            limit: MAX_RK4_STEPS,
        });
    }
    let steps = ratio.round();
    if (steps - ratio).abs() > 1e-9 * ratio.max(1.0) || steps < 1.0 {
        return Err(Error::InvalidArgument(format!(
            "T / h = {ratio} is not an integer"
        )));
    }
    Ok(steps as usize)
}

/// Classical RK4 in ℝ¹² without any projection back to the sphere.
pub fn rk4_integrate(
    s0: &AugmentedState,
    spec: Option<&ObstacleSpec>,
    t_final: f64,
    h: f64,
) -> Result<CubicJetTrajectory> {
    let steps = step_count(t_final, h)?;
    let mut states = Vec::with_capacity(steps + 1);
    let mut s = *s0;
    states.push(s);
    for _ in 0..steps {
        let k1 = cubic_rhs(&s, spec)?;
        let k2 = cubic_rhs(&s.axpy(h / 2.0, &k1), spec)?;
        let k3 = cubic_rhs(&s.axpy(h / 2.0, &k2), spec)?;
        let k4 = cubic_rhs(&s.axpy(h, &k3), spec)?;
        s = AugmentedState::new(
            s.n + (k1.n + k2.n * 2.0 + k3.n * 2.0 + k4.n) * (h / 6.0),
            s.v + (k1.v + k2.v * 2.0 + k3.v * 2.0 + k4.v) * (h / 6.0),
            s.a + (k1.a + k2.a * 2.0 + k3.a * 2.0 + k4.a) * (h / 6.0),
            s.j + (k1.j + k2.j * 2.0 + k3.j * 2.0 + k4.j) * (h / 6.0),
        );
        states.push(s);
    }
    Ok(CubicJetTrajectory {
        h,
        states,
        potential: spec.cloned(),
    })
}

/// Second-order momentum map for rotations about e_z.
///
/// `⟨P(n)(j + 2(v·a)n + ‖v‖²v), e_z×n⟩ − ⟨a + ‖v‖²n, P(n)(e_z×v)⟩`
pub fn continuous_momentum_jz(s: &AugmentedState) -> f64 {
    let (n, v, a, j) = (&s.n, &s.v, &s.a, &s.j);
    let ez = Vector3::z();
    let vv = v.norm_squared();
    let d_dt_acc = project(n, &(j + n * (2.0 * v.dot(a)) + v * vv));
    let acc = a + n * vv;
    d_dt_acc.dot(&ez.cross(n)) - acc.dot(&project(n, &ez.cross(v)))
}

/// Per-sample `|‖n_k‖ − 1|`.
pub fn constraint_drift(traj: &CubicJetTrajectory) -> Vec<f64> {
    traj.states
        .iter()
        .map(|s| (s.n.norm() - 1.0).abs())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn great_circle() -> AugmentedState {
        AugmentedState::new(Vector3::x(), Vector3::y(), -Vector3::x(), -Vector3::y())
    }

    fn generic() -> AugmentedState {
        AugmentedState::on_sphere(
            BlochVector::new(0.3, -0.4, -0.8),
            Vector3::new(0.5, 0.7, -0.1),
            Vector3::new(-0.2, 0.3, 0.4),
            Vector3::new(0.1, -0.6, 0.2),
        )
    }

    #[test]
    fn great_circle_is_a_solution() {
        let d = cubic_rhs(&great_circle(), None).unwrap();
        assert_eq!(d.j, Vector3::x());
        assert_eq!(d.n, Vector3::y());
    }

    #[test]
    fn rest_point_is_fixed() {
        let s = AugmentedState::at_rest(BlochVector::new(0.2, 0.3, 0.9));
        let d = cubic_rhs(&s, None).unwrap();
        assert_eq!(
            d,
            AugmentedState::new(
                Vector3::zeros(),
                Vector3::zeros(),
                Vector3::zeros(),
                Vector3::zeros()
            )
        );
    }

    #[test]
    fn south_pole_is_equilibrium_of_axial_barrier() {
        let spec = ObstacleSpec::axial(30.0, 0.35, 6).unwrap();
        let g = potential_gradient(&spec, &BlochVector::south())
            .unwrap()
            .euclidean;
        assert_eq!(g.x, 0.0);
        assert_eq!(g.y, 0.0);
        let d = cubic_rhs(&AugmentedState::at_rest(BlochVector::south()), Some(&spec)).unwrap();
        assert_eq!(d.j, Vector3::zeros());
    }

    #[test]
    fn great_circle_closes_after_full_turn() {
        let traj = rk4_integrate(
            &great_circle(),
            None,
            2.0 * std::f64::consts::PI,
            2.0 * std::f64::consts::PI / 6283.0,
        )
        .unwrap();
        let end = traj.states.last().unwrap();
        assert!((end.n - Vector3::x()).norm() < 1e-9);
    }

    #[test]
    fn zero_jet_stays_put() {
        let s = AugmentedState::at_rest(BlochVector::new(0.0, 0.6, 0.8));
        let traj = rk4_integrate(&s, None, 1.0, 0.1).unwrap();
        assert_eq!(traj.states.len(), 11);
        assert!(traj.states.iter().all(|x| *x == s));
    }

    #[test]
    fn rk4_is_fourth_order() {
        let end = |h: f64| {
            rk4_integrate(&generic(), None, 1.0, h)
                .unwrap()
                .states
                .last()
                .unwrap()
                .n
        };
        let (a, b, c) = (end(0.1), end(0.05), end(0.025));
        let ratio = (a - b).norm() / (b - c).norm();
        assert!((ratio - 16.0).abs() < 1.5, "ratio {ratio}");
    }

    #[test]
    fn step_count_rules() {
        assert_eq!(step_count(1.0, 0.01).unwrap(), 100);
        assert!(matches!(
            step_count(1.0, 0.3),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            step_count(1.0, 1e-8),
            Err(Error::StepCountOverflow { .. })
        ));
    }

    #[test]
    fn momentum_examples() {
        let s = AugmentedState::at_rest(BlochVector::new(0.6, 0.0, 0.8));
        assert_eq!(continuous_momentum_jz(&s), 0.0);
        assert_abs_diff_eq!(
            continuous_momentum_jz(&great_circle()),
            0.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn momentum_is_conserved_with_axial_barrier() {
        let spec = ObstacleSpec::axial(30.0, 0.35, 6).unwrap();
        let traj = rk4_integrate(&generic(), Some(&spec), 0.5, 1e-3).unwrap();
        let j0 = continuous_momentum_jz(&traj.states[0]);
        assert!(j0.abs() > 1e-2);
        for s in &traj.states {
            assert_abs_diff_eq!(continuous_momentum_jz(s), j0, epsilon = 1e-8);
        }
    }

    #[test]
    fn momentum_is_not_conserved_with_off_axis_barrier() {
        let spec = ObstacleSpec::point(30.0, 0.35, 6, BlochVector::new(1.0, 0.0, 0.0)).unwrap();
        let traj = rk4_integrate(&generic(), Some(&spec), 0.5, 1e-3).unwrap();
        let j0 = continuous_momentum_jz(&traj.states[0]);
        let drift = traj
            .states
            .iter()
            .map(|s| (continuous_momentum_jz(s) - j0).abs())
            .fold(0.0, f64::max);
        assert!(drift > 1e-6);
    }

    #[test]
    fn tangency_is_preserved_to_integration_accuracy() {
        let traj = rk4_integrate(&generic(), None, 1.0, 1e-3).unwrap();
        for s in &traj.states {
            let (d1, d2) = s.consistency_defects();
            assert!(d1 < 1e-10 && d2 < 1e-10);
        }
    }

    #[test]
    fn drift_of_normalized_samples_is_zero() {
        let traj = CubicJetTrajectory {
            h: 0.1,
            states: vec![great_circle(); 3],
            potential: None,
        };
        assert_eq!(constraint_drift(&traj), vec![0.0; 3]);
    }
}
