//! Second-order variational integrator on SU(2).
//!
//! A trajectory is a sequence `U_0 … U_K` with increments
//! `U_{k+1} = U_k cay(ω_k, h)`. Discrete accelerations are
//! `μ_c = (ω_c − ω_{c−1})/h` for `c = 1 … K−1`, and the action is
//! `Σ_c (h/2)|μ_c|² + h V(n_c)`, optionally plus a terminal cost on `n_K`.
//!
//! Residuals are body-frame gradients of the action scaled by `h`, taken
//! with respect to perturbations `U_k → U_k exp(ζ)`.

mod solver;

pub use solver::{
    initial_guess, solve_bvp, solve_bvp_with, BoundaryData, RightBoundary, SolverOptions,
    SolverReport,
};

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::potential::{potential_gradient, potential_value, ObstacleSpec};
use crate::sphere::{geodesic_distance, project_tangent, BlochVector};
use crate::su2::{
    adjoint_rotate, axial_momentum, cayley_inverse, cayley_left_jacobian, cayley_right_jacobian,
    fs_distance, generators, project_bloch, AlgebraVector, UnitaryQubit,
};

/// Quadratic penalty `α · fs_distance(n, target)²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TerminalCost {
    pub alpha: f64,
    pub target: BlochVector,
}

impl TerminalCost {
    pub fn value(&self, n: &BlochVector) -> f64 {
        let d = fs_distance(n, &self.target);
        self.alpha * d * d
    }

    /// Tangential gradient `−(α/2)(θ/sin θ) P(n) t` with `θ` the round distance.
    pub fn gradient(&self, n: &BlochVector) -> Result<Vector3<f64>> {
        let theta = geodesic_distance(n, &self.target);
        let sin = n.as_vector().cross(self.target.as_vector()).norm();
        let ratio = if theta < 1e-6 {
            1.0 + theta * theta / 6.0
        } else if sin < 1e-12 {
            return Err(Error::GradientSingularity {
                u: n.dot(&self.target),
            });
        } else {
            theta / sin
        };
        Ok(project_tangent(n, self.target.as_vector()) * (-0.5 * self.alpha * ratio))
    }
}

/// Unitaries with their increments and Bloch projections.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteTrajectory {
    pub h: f64,
    pub unitaries: Vec<UnitaryQubit>,
    pub generators: Vec<AlgebraVector>,
    pub bloch: Vec<BlochVector>,
}

impl DiscreteTrajectory {
    pub fn from_unitaries(unitaries: Vec<UnitaryQubit>, h: f64) -> Result<Self> {
        if unitaries.is_empty() {
            return Err(Error::InvalidArgument("empty trajectory".into()));
        }
        let generators = generators(&unitaries, h)?;
        let bloch = unitaries.iter().map(project_bloch).collect();
        Ok(Self {
            h,
            unitaries,
            generators,
            bloch,
        })
    }

    /// Number of steps `K`.
    pub fn steps(&self) -> usize {
        self.unitaries.len() - 1
    }

    /// `max_k |‖n_k‖ − 1|` of the cached projections.
    pub fn max_constraint_error(&self) -> f64 {
        self.bloch
            .iter()
            .map(|n| (n.as_vector().norm() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Ingredients of a discrete action.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionModel {
    pub h: f64,
    pub potential: Option<ObstacleSpec>,
    pub terminal: Option<TerminalCost>,
}

impl ActionModel {
    pub fn new(h: f64, potential: Option<&ObstacleSpec>) -> Self {
        Self {
            h,
            potential: potential.cloned(),
            terminal: None,
        }
    }

    pub fn with_terminal(mut self, terminal: TerminalCost) -> Self {
        self.terminal = Some(terminal);
        self
    }

    fn v(&self, n: &BlochVector) -> f64 {
        self.potential
            .as_ref()
            .map_or(0.0, |s| potential_value(s, n))
    }

    /// Full discrete action, including the terminal cost if any.
    pub fn action(&self, us: &[UnitaryQubit]) -> Result<f64> {
        let h = self.h;
        let k_steps = us.len() - 1;
        let omegas = generators(us, h)?;
        let mut total = 0.0;
        for c in 1..k_steps {
            let mu = (omegas[c] - omegas[c - 1]) / h;
            total += 0.5 * h * mu.norm_squared() + h * self.v(&project_bloch(&us[c]));
        }
        if let Some(t) = &self.terminal {
            total += t.value(&project_bloch(&us[k_steps]));
        }
        Ok(total)
    }

    /// First discrete Lagrangian term (center 1).
    pub fn first_stage_cost(&self, us: &[UnitaryQubit]) -> Result<f64> {
        discrete_lagrangian(&us[0], &us[1], &us[2], self.potential.as_ref(), self.h)
    }

    /// `h` times the body-frame gradient of [`Self::action`] at index `k`.
    ///
    /// Reads only `U_{k−2} … U_{k+2}`.
    pub fn residual_at(&self, us: &[UnitaryQubit], k: usize) -> Result<Vector3<f64>> {
        let h = self.h;
        let k_steps = us.len() - 1;
        // ω_i for i in k−2 ..= k+1, clipped to 0 ..= K−1
        let lo = k.saturating_sub(2);
        let hi = (k + 1).min(k_steps - 1);
        let mut omega = [Vector3::zeros(); 4];
        for i in lo..=hi {
            let w = us[i].inverse().compose(&us[i + 1]);
            omega[i + 2 - k] = cayley_inverse(&w, h, i)?;
        }
        let w_at = |i: usize| omega[i + 2 - k];
        let mu = |c: usize| -> Vector3<f64> {
            if c >= 1 && c < k_steps {
                (w_at(c) - w_at(c - 1)) / h
            } else {
                Vector3::zeros()
            }
        };
        // ∂S/∂ω_j
        let a = |j: usize| mu(j) - mu(j + 1);
        let mut g = Vector3::zeros();
        if k >= 1 {
            g += cayley_left_jacobian(&w_at(k - 1), h) * a(k - 1);
        }
        if k < k_steps {
            g -= cayley_right_jacobian(&w_at(k), h) * a(k);
        }
        let inv = us[k].inverse();
        if k >= 1 && k < k_steps {
            if let Some(spec) = &self.potential {
                let grad = potential_gradient(spec, &project_bloch(&us[k]))?.euclidean;
                g += Vector3::z().cross(&adjoint_rotate(&inv, &grad)) * h;
            }
        }
        if k == k_steps {
            if let Some(t) = &self.terminal {
                let grad = t.gradient(&project_bloch(&us[k]))?;
                g += Vector3::z().cross(&adjoint_rotate(&inv, &grad));
            }
        }
        Ok(g * h)
    }

    /// Residuals at every index `0 … K`.
    pub fn residuals(&self, us: &[UnitaryQubit]) -> Result<Vec<Vector3<f64>>> {
        (0..us.len()).map(|k| self.residual_at(us, k)).collect()
    }
}

/// `(U_0, U_1)` for a curve leaving `n0` with tangent velocity `v0`.
///
/// `U_0` is the shortest-arc lift of `n0`; the first increment is horizontal
/// and moves the Bloch vector by the geodesic step `exp_{n0}(h v0)`.
pub fn lift_initial_pair(
    n0: &BlochVector,
    v0: &Vector3<f64>,
    h: f64,
) -> (UnitaryQubit, UnitaryQubit) {
    let u0 = crate::su2::lift(n0);
    let v = project_tangent(n0, v0);
    let speed = v.norm();
    if speed == 0.0 {
        return (u0, u0);
    }
    let axis_world = n0.as_vector().cross(&v) / speed;
    let axis = adjoint_rotate(&u0.inverse(), &axis_world);
    let omega = axis * ((4.0 / h) * (h * speed / 4.0).tan());
    (u0, u0.compose(&crate::su2::cayley(&omega, h)))
}

/// `(h/2)|(ω_b − ω_a)/h|² + h V(n_b)` for the triple `(U_a, U_b, U_c)`.
pub fn discrete_lagrangian(
    ua: &UnitaryQubit,
    ub: &UnitaryQubit,
    uc: &UnitaryQubit,
    spec: Option<&ObstacleSpec>,
    h: f64,
) -> Result<f64> {
    let wa = cayley_inverse(&ua.inverse().compose(ub), h, 0)?;
    let wb = cayley_inverse(&ub.inverse().compose(uc), h, 1)?;
    let mu = (wb - wa) / h;
    let v = spec.map_or(0.0, |s| potential_value(s, &project_bloch(ub)));
    Ok(0.5 * h * mu.norm_squared() + h * v)
}

/// Sum of [`discrete_lagrangian`] over all interior triples.
pub fn discrete_action(traj: &DiscreteTrajectory, spec: Option<&ObstacleSpec>) -> Result<f64> {
    ActionModel::new(traj.h, spec).action(&traj.unitaries)
}

/// Euler–Lagrange residual at the middle of five consecutive unitaries.
///
/// Vanishes exactly at critical points of the action; its world-frame z
/// component is `h` times the jump of [`discrete_momentum_jz`] across the
/// middle index.
pub fn del_residual(
    window: &[UnitaryQubit; 5],
    spec: Option<&ObstacleSpec>,
    h: f64,
) -> Result<Vector3<f64>> {
    ActionModel::new(h, spec).residual_at(window, 2)
}

/// Small-step form `μ_{k+1} − 2μ_k + μ_{k−1} + h² e_z × (R_kᵀ ∇V(n_k))`.
///
/// Drops the coadjoint rotation of the exact residual, so it agrees with
/// [`del_residual`] to `O(h)` only while consecutive generators stay nearly
/// parallel. Kept as a cheap diagnostic; the solvers use the exact form.
pub fn vectorial_residual(
    window: &[UnitaryQubit; 5],
    spec: Option<&ObstacleSpec>,
    h: f64,
) -> Result<Vector3<f64>> {
    let omegas = generators(window, h)?;
    let mu: Vec<_> = omegas.windows(2).map(|w| (w[1] - w[0]) / h).collect();
    let mut r = mu[2] - mu[1] * 2.0 + mu[0];
    if let Some(spec) = spec {
        let grad = potential_gradient(spec, &project_bloch(&window[2]))?.euclidean;
        r += Vector3::z().cross(&adjoint_rotate(&window[2].inverse(), &grad)) * (h * h);
    }
    Ok(r)
}

/// Discrete axial momentum at every cut `j = 1 … K−2`.
///
/// Constant along critical points when the potential is axially symmetric.
pub fn discrete_momentum_jz(traj: &DiscreteTrajectory) -> Vec<f64> {
    let (us, w, h) = (&traj.unitaries, &traj.generators, traj.h);
    (1..traj.steps().saturating_sub(1))
        .map(|j| axial_momentum(&us[j], &w[j - 1], &w[j], &w[j + 1], h))
        .collect()
}

/// Largest distance of the momentum sequence from its mean.
pub fn momentum_spread(jz: &[f64]) -> f64 {
    if jz.is_empty() {
        return 0.0;
    }
    let mean = jz.iter().sum::<f64>() / jz.len() as f64;
    jz.iter().map(|j| (j - mean).abs()).fold(0.0, f64::max)
}
