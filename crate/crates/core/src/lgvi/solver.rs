//! Damped Newton solver for discrete boundary-value problems, with
//! Gauss–Seidel sweeps as a fallback.

use nalgebra::{DMatrix, DVector, Vector3};

use super::{discrete_momentum_jz, ActionModel, DiscreteTrajectory, TerminalCost};
use crate::error::{Error, Result};
use crate::potential::ObstacleSpec;
use crate::sphere::BlochVector;
use crate::su2::{project_bloch, shortest_arc, UnitaryQubit};

/// Pinned and free data at the right end of the trajectory.
#[derive(Debug, Clone, PartialEq)]
pub enum RightBoundary {
    /// `U_{K−1}` and `U_K` fixed: position and discrete velocity prescribed.
    Fixed {
        u_km1: UnitaryQubit,
        u_k: UnitaryQubit,
    },
    /// Final Bloch vector prescribed, final velocity free.
    FreeVelocity { end: BlochVector },
    /// Both right-end unitaries free, with a terminal cost on `n_K`.
    Free { terminal: TerminalCost },
}

/// `U_0`, `U_1` and the right-end condition.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryData {
    pub u0: UnitaryQubit,
    pub u1: UnitaryQubit,
    pub right: RightBoundary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    /// Convergence threshold on the largest residual component.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub max_halvings: usize,
    /// Step of the central differences used for the Jacobian.
    pub fd_step: f64,
    /// Extra Newton steps taken after convergence while they still help.
    pub polish_steps: usize,
    pub gauss_seidel_sweeps: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-9,
            max_iterations: 200,
            max_halvings: 50,
            fd_step: 1e-6,
            polish_steps: 3,
            gauss_seidel_sweeps: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverReport {
    /// Newton steps taken until the tolerance was met (or the budget ran out).
    pub iterations: usize,
    /// Further Newton steps taken after convergence to reach the rounding floor.
    pub polish_iterations: usize,
    /// Largest residual component over the free coordinates.
    pub residual_norm: f64,
    pub action: f64,
    pub converged: bool,
    pub momentum_jz: Vec<f64>,
    /// Action after the initial guess and after every accepted step.
    pub action_history: Vec<f64>,
    /// Whether every accepted step kept the action from increasing.
    pub action_monotone: bool,
    pub gauss_seidel_sweeps: usize,
}

/// Slack allowed on the action when checking a step does not increase it.
const ACTION_SLACK: f64 = 1e-12;
const ARMIJO: f64 = 1e-4;

#[derive(Debug, Clone, Copy)]
enum Dof {
    Free,
    Fiber,
}

struct Problem {
    model: ActionModel,
    /// Free indices with their degrees of freedom.
    free: Vec<(usize, Dof)>,
    /// Offset of each free index in the stacked vector, by trajectory index.
    offset: Vec<Option<usize>>,
    dim: usize,
}

fn dof_dirs(d: Dof) -> &'static [usize] {
    match d {
        Dof::Free => &[0, 1, 2],
        Dof::Fiber => &[2],
    }
}

impl Problem {
    fn new(model: ActionModel, k_steps: usize, right: &RightBoundary) -> Self {
        let mut free: Vec<(usize, Dof)> = (2..=k_steps - 2).map(|k| (k, Dof::Free)).collect();
        match right {
            RightBoundary::Fixed { .. } => {}
            RightBoundary::FreeVelocity { .. } => {
                free.push((k_steps - 1, Dof::Free));
                free.push((k_steps, Dof::Fiber));
            }
            RightBoundary::Free { .. } => {
                free.push((k_steps - 1, Dof::Free));
                free.push((k_steps, Dof::Free));
            }
        }
        let mut offset = vec![None; k_steps + 1];
        let mut dim = 0;
        for (k, d) in &free {
            offset[*k] = Some(dim);
            dim += dof_dirs(*d).len();
        }
        Self {
            model,
            free,
            offset,
            dim,
        }
    }

    fn residual(&self, us: &[UnitaryQubit]) -> Result<DVector<f64>> {
        let mut r = DVector::zeros(self.dim);
        for (k, d) in &self.free {
            let rk = self.model.residual_at(us, *k)?;
            let off = self.offset[*k].unwrap();
            for (i, axis) in dof_dirs(*d).iter().enumerate() {
                r[off + i] = rk[*axis];
            }
        }
        Ok(r)
    }

    fn apply(&self, us: &[UnitaryQubit], delta: &DVector<f64>, scale: f64) -> Vec<UnitaryQubit> {
        let mut out = us.to_vec();
        for (k, d) in &self.free {
            let off = self.offset[*k].unwrap();
            let mut z = Vector3::zeros();
            for (i, axis) in dof_dirs(*d).iter().enumerate() {
                z[*axis] = delta[off + i] * scale;
            }
            out[*k] = us[*k].compose(&UnitaryQubit::exp(&z));
        }
        out
    }

    /// Central-difference Jacobian; a perturbation at `k` only touches the
    /// residuals at `k−2 … k+2`.
    fn jacobian(&self, us: &[UnitaryQubit], eps: f64) -> Result<DMatrix<f64>> {
        let n = self.dim;
        let k_steps = us.len() - 1;
        let mut jac = DMatrix::zeros(n, n);
        let mut work = us.to_vec();
        for (k, d) in &self.free {
            let col0 = self.offset[*k].unwrap();
            for (ci, axis) in dof_dirs(*d).iter().enumerate() {
                let e = Vector3::ith(*axis, eps);
                let rows = |work: &[UnitaryQubit]| -> Result<Vec<(usize, Vector3<f64>)>> {
                    let lo = k.saturating_sub(2);
                    let hi = (k + 2).min(k_steps);
                    (lo..=hi)
                        .filter(|j| self.offset[*j].is_some())
                        .map(|j| Ok((j, self.model.residual_at(work, j)?)))
                        .collect()
                };
                work[*k] = us[*k].compose(&UnitaryQubit::exp(&e));
                let plus = rows(&work)?;
                work[*k] = us[*k].compose(&UnitaryQubit::exp(&-e));
                let minus = rows(&work)?;
                work[*k] = us[*k];
                for ((j, rp), (_, rm)) in plus.iter().zip(&minus) {
                    let row0 = self.offset[*j].unwrap();
                    let dj = self.free.iter().find(|(i, _)| i == j).unwrap().1;
                    for (ri, ax) in dof_dirs(dj).iter().enumerate() {
                        jac[(row0 + ri, col0 + ci)] = (rp[*ax] - rm[*ax]) / (2.0 * eps);
                    }
                }
            }
        }
        Ok(jac)
    }
}

fn max_abs(r: &DVector<f64>) -> f64 {
    r.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Default starting trajectory for the given boundary data.
///
/// Interior unitaries follow the one-parameter subgroup from `U_1` to the
/// right-end unitary. With a free final velocity the right end is guessed by
/// carrying `U_1` along the shortest arc to the prescribed Bloch vector; with
/// a terminal cost the first increment is repeated.
pub fn initial_guess(boundary: &BoundaryData, k_steps: usize) -> Vec<UnitaryQubit> {
    let mut us = vec![boundary.u0; k_steps + 1];
    us[1] = boundary.u1;
    let (last_index, last) = match &boundary.right {
        RightBoundary::Fixed { u_km1, u_k } => {
            us[k_steps] = *u_k;
            (k_steps - 1, *u_km1)
        }
        RightBoundary::FreeVelocity { end } => {
            let n1 = project_bloch(&boundary.u1);
            (k_steps, shortest_arc(&n1, end).compose(&boundary.u1))
        }
        RightBoundary::Free { .. } => {
            let w = boundary.u0.inverse().compose(&boundary.u1);
            for k in 2..=k_steps {
                us[k] = us[k - 1].compose(&w);
            }
            return us;
        }
    };
    let log = boundary.u1.inverse().compose(&last).log();
    let span = (last_index - 1) as f64;
    for (k, u) in us.iter_mut().enumerate().take(last_index).skip(2) {
        let t = (k - 1) as f64 / span;
        *u = boundary.u1.compose(&UnitaryQubit::exp(&(log * t)));
    }
    us[last_index] = last;
    us
}

fn pin(boundary: &BoundaryData, us: &mut [UnitaryQubit]) {
    let k_steps = us.len() - 1;
    us[0] = boundary.u0;
    us[1] = boundary.u1;
    if let RightBoundary::Fixed { u_km1, u_k } = &boundary.right {
        us[k_steps - 1] = *u_km1;
        us[k_steps] = *u_k;
    }
}

/// [`solve_bvp_with`] under default options.
pub fn solve_bvp(
    boundary: &BoundaryData,
    k_steps: usize,
    spec: Option<&ObstacleSpec>,
    h: f64,
    init: Option<&DiscreteTrajectory>,
) -> Result<(DiscreteTrajectory, SolverReport)> {
    solve_bvp_with(boundary, k_steps, spec, h, init, &SolverOptions::default())
}

/// Solves for a critical point of the discrete action with the given
/// boundary data.
///
/// Non-convergence is reported through `SolverReport::converged`; the best
/// iterate is returned. Chart overflow at the starting point is a hard error.
pub fn solve_bvp_with(
    boundary: &BoundaryData,
    k_steps: usize,
    spec: Option<&ObstacleSpec>,
    h: f64,
    init: Option<&DiscreteTrajectory>,
    opts: &SolverOptions,
) -> Result<(DiscreteTrajectory, SolverReport)> {
    if k_steps < 5 {
        return Err(Error::InvalidArgument(format!("need K ≥ 5, got {k_steps}")));
    }
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("need h > 0, got {h}")));
    }
    let mut model = ActionModel::new(h, spec);
    if let RightBoundary::Free { terminal } = &boundary.right {
        model = model.with_terminal(*terminal);
    }
    let mut us = match init {
        Some(t) => {
            if t.unitaries.len() != k_steps + 1 {
                return Err(Error::InvalidArgument(format!(
                    "initial trajectory has {} points, expected {}",
                    t.unitaries.len(),
                    k_steps + 1
                )));
            }
            t.unitaries.clone()
        }
        None => initial_guess(boundary, k_steps),
    };
    pin(boundary, &mut us);
    if let RightBoundary::FreeVelocity { end } = &boundary.right {
        // keep the prescribed Bloch vector exactly
        let n = project_bloch(&us[k_steps]);
        us[k_steps] = shortest_arc(&n, end).compose(&us[k_steps]);
    }

    let problem = Problem::new(model, k_steps, &boundary.right);
    let mut state = NewtonState::start(&problem, us)?;
    state.newton(&problem, opts);
    if !state.converged(opts) {
        state.gauss_seidel(&problem, opts);
        state.newton(&problem, opts);
    }
    let converged = state.converged(opts);
    let traj = DiscreteTrajectory::from_unitaries(state.us, h)?;
    let report = SolverReport {
        iterations: state.iterations,
        polish_iterations: state.polish,
        residual_norm: state.res_max,
        action: state.action,
        converged,
        momentum_jz: discrete_momentum_jz(&traj),
        action_history: state.action_history,
        action_monotone: state.monotone,
        gauss_seidel_sweeps: state.sweeps,
    };
    Ok((traj, report))
}

struct NewtonState {
    us: Vec<UnitaryQubit>,
    r: DVector<f64>,
    res_max: f64,
    action: f64,
    iterations: usize,
    polish: usize,
    sweeps: usize,
    action_history: Vec<f64>,
    monotone: bool,
}

impl NewtonState {
    fn start(problem: &Problem, us: Vec<UnitaryQubit>) -> Result<Self> {
        let r = problem.residual(&us)?;
        let action = problem.model.action(&us)?;
        Ok(Self {
            res_max: max_abs(&r),
            r,
            action,
            us,
            iterations: 0,
            polish: 0,
            sweeps: 0,
            action_history: vec![action],
            monotone: true,
        })
    }

    fn converged(&self, opts: &SolverOptions) -> bool {
        self.res_max <= opts.tolerance
    }

    fn evaluate(problem: &Problem, us: &[UnitaryQubit]) -> Option<(DVector<f64>, f64)> {
        let r = problem.residual(us).ok()?;
        let a = problem.model.action(us).ok()?;
        if r.iter().all(|x| x.is_finite()) && a.is_finite() {
            Some((r, a))
        } else {
            None
        }
    }

    fn accept(&mut self, us: Vec<UnitaryQubit>, r: DVector<f64>, action: f64) {
        if action > self.action + ACTION_SLACK {
            self.monotone = false;
        }
        self.res_max = max_abs(&r);
        self.r = r;
        self.action = action;
        self.us = us;
        self.action_history.push(action);
    }

    fn newton(&mut self, problem: &Problem, opts: &SolverOptions) {
        while self.iterations < opts.max_iterations {
            if self.converged(opts) {
                while self.polish < opts.polish_steps && self.polish_step(problem, opts) {
                    self.polish += 1;
                }
                return;
            }
            let Some(delta) = self.direction(problem, opts) else {
                return;
            };
            self.iterations += 1;
            if !self.line_search(problem, &delta, opts) {
                return;
            }
        }
    }

    fn direction(&self, problem: &Problem, opts: &SolverOptions) -> Option<DVector<f64>> {
        let jac = problem.jacobian(&self.us, opts.fd_step).ok()?;
        let delta = jac.lu().solve(&(-&self.r))?;
        delta.iter().all(|x| x.is_finite()).then_some(delta)
    }

    /// Full Newton step kept only if it lowers the largest residual.
    fn polish_step(&mut self, problem: &Problem, opts: &SolverOptions) -> bool {
        let Some(delta) = self.direction(problem, opts) else {
            return false;
        };
        let trial = problem.apply(&self.us, &delta, 1.0);
        match Self::evaluate(problem, &trial) {
            Some((r, a)) if max_abs(&r) < 0.5 * self.res_max => {
                self.accept(trial, r, a);
                true
            }
            _ => false,
        }
    }

    /// Armijo backtracking on ‖r‖². Steps that also keep the action from
    /// increasing are preferred; if none exists the residual-only step is
    /// taken and the loss of monotonicity is recorded.
    fn line_search(
        &mut self,
        problem: &Problem,
        delta: &DVector<f64>,
        opts: &SolverOptions,
    ) -> bool {
        let f0 = self.r.norm_squared();
        let mut alpha = 1.0;
        let mut fallback: Option<(Vec<UnitaryQubit>, DVector<f64>, f64)> = None;
        for _ in 0..=opts.max_halvings {
            let trial = problem.apply(&self.us, delta, alpha);
            if let Some((r, a)) = Self::evaluate(problem, &trial) {
                if r.norm_squared() <= f0 * (1.0 - 2.0 * ARMIJO * alpha) {
                    if a <= self.action + ACTION_SLACK {
                        self.accept(trial, r, a);
                        return true;
                    }
                    if fallback.is_none() {
                        fallback = Some((trial, r, a));
                    }
                }
            }
            alpha *= 0.5;
        }
        match fallback {
            Some((us, r, a)) => {
                self.accept(us, r, a);
                true
            }
            None => false,
        }
    }

    /// Sweeps of local Newton solves on one index at a time.
    fn gauss_seidel(&mut self, problem: &Problem, opts: &SolverOptions) {
        let eps = opts.fd_step;
        for _ in 0..opts.gauss_seidel_sweeps {
            self.sweeps += 1;
            for (k, d) in &problem.free {
                let dirs = dof_dirs(*d);
                let local = |us: &[UnitaryQubit]| -> Option<DVector<f64>> {
                    let r = problem.model.residual_at(us, *k).ok()?;
                    Some(DVector::from_iterator(
                        dirs.len(),
                        dirs.iter().map(|a| r[*a]),
                    ))
                };
                for _ in 0..3 {
                    let Some(r0) = local(&self.us) else { break };
                    let m = dirs.len();
                    let mut jac = DMatrix::zeros(m, m);
                    let mut work = self.us.clone();
                    let mut ok = true;
                    for (c, axis) in dirs.iter().enumerate() {
                        let e = Vector3::ith(*axis, eps);
                        work[*k] = self.us[*k].compose(&UnitaryQubit::exp(&e));
                        let p = local(&work);
                        work[*k] = self.us[*k].compose(&UnitaryQubit::exp(&-e));
                        let q = local(&work);
                        work[*k] = self.us[*k];
                        match (p, q) {
                            (Some(p), Some(q)) => jac.set_column(c, &((p - q) / (2.0 * eps))),
                            _ => ok = false,
                        }
                    }
                    if !ok {
                        break;
                    }
                    let Some(step) = jac.lu().solve(&(-&r0)) else {
                        break;
                    };
                    let mut alpha = 1.0;
                    let mut moved = false;
                    for _ in 0..20 {
                        let mut z = Vector3::zeros();
                        for (c, axis) in dirs.iter().enumerate() {
                            z[*axis] = step[c] * alpha;
                        }
                        work[*k] = self.us[*k].compose(&UnitaryQubit::exp(&z));
                        if let Some(r1) = local(&work) {
                            if r1.norm() < r0.norm() {
                                self.us[*k] = work[*k];
                                moved = true;
                                break;
                            }
                        }
                        work[*k] = self.us[*k];
                        alpha *= 0.5;
                    }
                    if !moved {
                        break;
                    }
                }
            }
            if let Some((r, a)) = Self::evaluate(problem, &self.us) {
                let us = self.us.clone();
                self.accept(us, r, a);
            }
            if self.converged(opts) {
                return;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::su2::cayley;

    fn geodesic_boundary(
        w: Vector3<f64>,
        h: f64,
        k_steps: usize,
    ) -> (BoundaryData, Vec<UnitaryQubit>) {
        let mut us = vec![UnitaryQubit::from_quaternion(0.9, 0.1, -0.3, 0.2)];
        for _ in 0..k_steps {
            let next = *us.last().unwrap() * cayley(&w, h);
            us.push(next);
        }
        let b = BoundaryData {
            u0: us[0],
            u1: us[1],
            right: RightBoundary::Fixed {
                u_km1: us[k_steps - 1],
                u_k: us[k_steps],
            },
        };
        (b, us)
    }

    #[test]
    fn discrete_geodesic_is_recovered() {
        let (h, k) = (0.1, 8);
        let (b, exact) = geodesic_boundary(Vector3::new(1.0, -2.0, 0.0), h, k);
        let (traj, report) = solve_bvp(&b, k, None, h, None).unwrap();
        assert!(report.converged);
        assert!(report.residual_norm <= 1e-12);
        for (u, e) in traj.unitaries.iter().zip(&exact) {
            assert!((u.quaternion() - e.quaternion()).norm() < 1e-10);
        }
        assert_eq!(traj.unitaries[0], b.u0);
        assert_eq!(traj.unitaries[k], exact[k]);
    }

    #[test]
    fn perturbed_start_converges_and_descends() {
        let (h, k) = (0.1, 10);
        let (b, exact) = geodesic_boundary(Vector3::new(0.5, 1.5, 0.0), h, k);
        let mut start = exact.clone();
        for (i, u) in start.iter_mut().enumerate().skip(2).take(k - 3) {
            *u = *u * UnitaryQubit::exp(&Vector3::new(0.03 * i as f64, -0.02, 0.04));
        }
        let init = DiscreteTrajectory::from_unitaries(start, h).unwrap();
        let (_, report) = solve_bvp(&b, k, None, h, Some(&init)).unwrap();
        assert!(report.converged);
        assert!(report.action < 1e-20);
        assert!(report.action_monotone);
        for w in report.action_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn too_few_steps_rejected() {
        let (b, _) = geodesic_boundary(Vector3::x(), 0.1, 4);
        assert!(matches!(
            solve_bvp(&b, 4, None, 0.1, None),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn free_velocity_end_is_kept() {
        let h = 0.1;
        let u0 = UnitaryQubit::identity();
        let u1 = cayley(&Vector3::new(0.5, 0.0, 0.0), h);
        let end = BlochVector::new(0.3, 0.8, 0.2);
        let b = BoundaryData {
            u0,
            u1,
            right: RightBoundary::FreeVelocity { end },
        };
        let (traj, report) = solve_bvp(&b, 12, None, h, None).unwrap();
        assert!(report.converged, "{report:?}");
        assert!((traj.bloch[12].to_vector() - end.to_vector()).norm() < 1e-12);
    }

    #[test]
    fn terminal_cost_pulls_toward_target() {
        let h = 0.1;
        let u0 = UnitaryQubit::identity();
        let b = BoundaryData {
            u0,
            u1: u0,
            right: RightBoundary::Free {
                terminal: TerminalCost {
                    alpha: 5.0,
                    target: BlochVector::new(1.0, 0.0, 1.0),
                },
            },
        };
        let (traj, report) = solve_bvp(&b, 10, None, h, None).unwrap();
        assert!(report.converged, "{report:?}");
        let d0 = crate::su2::fs_distance(&traj.bloch[0], &BlochVector::new(1.0, 0.0, 1.0));
        let d1 = crate::su2::fs_distance(&traj.bloch[10], &BlochVector::new(1.0, 0.0, 1.0));
        assert!(d1 < d0);
    }
}
