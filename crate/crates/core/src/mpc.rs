//! Receding-horizon control built on the discrete variational integrator.
//!
//! Each horizon problem pins the previous and current unitaries (position
//! and discrete velocity) and leaves the remaining `N_p` points free under a
//! terminal penalty on the Fubini–Study distance to the target.

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::lgvi::{
    initial_guess, solve_bvp, ActionModel, BoundaryData, DiscreteTrajectory, RightBoundary,
    SolverReport, TerminalCost,
};
use crate::potential::ObstacleSpec;
use crate::sphere::{slerp, BlochVector};
use crate::su2::{cayley, cayley_inverse, project_bloch, shortest_arc, UnitaryQubit};

/// A rotation applied to the executed state at a given step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Perturbation {
    pub step: usize,
    pub axis: Vector3<f64>,
    pub angle: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcConfig {
    pub horizon_steps: usize,
    pub sample_h: f64,
    pub alpha_t: f64,
    pub target: BlochVector,
    pub obstacle: ObstacleSpec,
    pub total_steps: usize,
    pub descent_tolerance: f64,
    pub perturbations: Vec<Perturbation>,
}

impl MpcConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.horizon_steps < 5 {
            problems.push(format!(
                "horizon_steps must be at least 5, got {}",
                self.horizon_steps
            ));
        }
        if !(self.sample_h > 0.0 && self.sample_h.is_finite()) {
            problems.push(format!("sample_h must be positive, got {}", self.sample_h));
        }
        if !(self.alpha_t > 0.0 && self.alpha_t.is_finite()) {
            problems.push(format!("alpha_t must be positive, got {}", self.alpha_t));
        }
        if self.total_steps == 0 {
            problems.push("total_steps must be positive".into());
        }
        if !(self.descent_tolerance >= 0.0) {
            problems.push(format!(
                "descent_tolerance must be non-negative, got {}",
                self.descent_tolerance
            ));
        }
        for p in &self.perturbations {
            if p.step >= self.total_steps {
                problems.push(format!(
                    "perturbation step {} is not before total_steps {}",
                    p.step, self.total_steps
                ));
            }
            if !(p.axis.norm() > 0.0) {
                problems.push(format!(
                    "perturbation axis at step {} must be nonzero",
                    p.step
                ));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }

    fn terminal(&self) -> TerminalCost {
        TerminalCost {
            alpha: self.alpha_t,
            target: self.target,
        }
    }
}

/// Initial condition of a run: Bloch vector and tangent velocity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MpcStart {
    pub n0: BlochVector,
    pub v0: Vector3<f64>,
}

/// `α_T · fs_distance(n, target)²`.
pub fn terminal_cost(n: &BlochVector, cfg: &MpcConfig) -> f64 {
    cfg.terminal().value(n)
}

/// Solved horizon problem.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonSolution {
    /// `N_p + 2` unitaries: the pinned previous point followed by the prediction.
    pub trajectory: DiscreteTrajectory,
    /// Optimal value `J*`, terminal cost included.
    pub value: f64,
    /// Discrete Lagrangian of the first segment.
    pub stage_cost: f64,
    pub report: SolverReport,
    pub warm_started: bool,
}

impl HorizonSolution {
    /// Predicted Bloch vectors from the current state on (`N_p + 1` points).
    pub fn predicted(&self) -> &[BlochVector] {
        &self.trajectory.bloch[1..]
    }
}

fn cold_guesses(
    prev: &UnitaryQubit,
    cur: &UnitaryQubit,
    cfg: &MpcConfig,
) -> Vec<Vec<UnitaryQubit>> {
    let k_steps = cfg.horizon_steps + 1;
    let boundary = BoundaryData {
        u0: *prev,
        u1: *cur,
        right: RightBoundary::Free {
            terminal: cfg.terminal(),
        },
    };
    let mut guesses = vec![initial_guess(&boundary, k_steps)];
    // partial slerp toward the target, lifted along shortest arcs
    let n1 = project_bloch(cur);
    let mut us = vec![*prev, *cur];
    for k in 2..=k_steps {
        let t = 0.5 * (k - 1) as f64 / (k_steps - 1) as f64;
        match slerp(&n1, &cfg.target, t) {
            Ok(m) => us.push(shortest_arc(&n1, &m).compose(cur)),
            Err(_) => return guesses,
        }
    }
    guesses.push(us);
    guesses
}

/// Solves the horizon problem from the pinned pair `(prev, cur)`.
///
/// The warm start is tried first, then cold starts; `HorizonInfeasible` is
/// returned when none converges. `step` is only used for error reporting.
pub fn solve_horizon(
    prev: &UnitaryQubit,
    cur: &UnitaryQubit,
    cfg: &MpcConfig,
    warm: Option<&DiscreteTrajectory>,
    step: usize,
) -> Result<HorizonSolution> {
    let k_steps = cfg.horizon_steps + 1;
    let h = cfg.sample_h;
    let boundary = BoundaryData {
        u0: *prev,
        u1: *cur,
        right: RightBoundary::Free {
            terminal: cfg.terminal(),
        },
    };
    let model = ActionModel::new(h, Some(&cfg.obstacle)).with_terminal(cfg.terminal());
    let mut starts: Vec<(DiscreteTrajectory, bool)> = Vec::new();
    if let Some(w) = warm {
        let mut us = w.unitaries.clone();
        if us.len() == k_steps + 1 {
            us[0] = *prev;
            us[1] = *cur;
            if let Ok(t) = DiscreteTrajectory::from_unitaries(us, h) {
                starts.push((t, true));
            }
        }
    }
    for us in cold_guesses(prev, cur, cfg) {
        if let Ok(t) = DiscreteTrajectory::from_unitaries(us, h) {
            starts.push((t, false));
        }
    }
    let mut last_reason = String::from("no admissible starting guess");
    for (init, warm_started) in starts {
        match solve_bvp(&boundary, k_steps, Some(&cfg.obstacle), h, Some(&init)) {
            Ok((traj, report)) if report.converged => {
                let stage_cost = model.first_stage_cost(&traj.unitaries)?;
                return Ok(HorizonSolution {
                    value: report.action,
                    trajectory: traj,
                    stage_cost,
                    report,
                    warm_started,
                });
            }
            Ok((_, report)) => {
                last_reason = format!("no convergence, residual {:e}", report.residual_norm);
            }
            Err(e) => last_reason = e.to_string(),
        }
    }
    Err(Error::HorizonInfeasible {
        step,
        reason: last_reason,
    })
}

/// [`solve_horizon`] with the state given as two Bloch vectors.
///
/// The pair is lifted with the shortest-arc lift of `prev` and a horizontal
/// increment to `cur`.
pub fn solve_horizon_bloch(
    prev: &BlochVector,
    cur: &BlochVector,
    cfg: &MpcConfig,
    warm: Option<&DiscreteTrajectory>,
) -> Result<HorizonSolution> {
    let u_prev = crate::su2::lift(prev);
    let w = crate::su2::minimal_generator(&u_prev, cur, cfg.sample_h, 0).map_err(|_| {
        Error::HorizonInfeasible {
            step: 0,
            reason: "antipodal state pair".into(),
        }
    })?;
    let u_cur = u_prev.compose(&cayley(&w, cfg.sample_h));
    solve_horizon(&u_prev, &u_cur, cfg, warm, 0)
}

/// Drops the first point of a horizon solution and repeats the last one.
pub fn shift_warm_start(traj: &DiscreteTrajectory) -> DiscreteTrajectory {
    let mut us = traj.unitaries[1..].to_vec();
    us.push(*traj.unitaries.last().unwrap());
    DiscreteTrajectory::from_unitaries(us, traj.h).expect("shifted increments stay in the chart")
}

/// Rotation of `n` about `axis` by `angle`.
pub fn apply_perturbation(n: &BlochVector, axis: &Vector3<f64>, angle: f64) -> BlochVector {
    let g = UnitaryQubit::from_axis_angle(axis, angle);
    BlochVector::from_vector(crate::su2::adjoint_rotate(&g, n.as_vector()))
}

/// State carried between control steps.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopState {
    pub prev: UnitaryQubit,
    pub cur: UnitaryQubit,
    pub warm: Option<DiscreteTrajectory>,
    pub step: usize,
}

impl LoopState {
    pub fn new(start: &MpcStart, h: f64) -> Self {
        let (u0, u1) = crate::lgvi::lift_initial_pair(&start.n0, &start.v0, h);
        // the pair encodes the velocity; the current point is n0 itself
        let prev = u0.compose(&u1.inverse()).compose(&u0);
        Self {
            prev,
            cur: u0,
            warm: None,
            step: 0,
        }
    }

    pub fn current(&self) -> BlochVector {
        project_bloch(&self.cur)
    }

    /// Rotates position and velocity together by a left translation.
    pub fn perturb(&mut self, p: &Perturbation) {
        let g = UnitaryQubit::from_axis_angle(&p.axis, p.angle);
        self.prev = g.compose(&self.prev);
        self.cur = g.compose(&self.cur);
    }
}

/// One receding-horizon step: solve, execute the first segment, shift.
pub fn mpc_step(
    state: &LoopState,
    cfg: &MpcConfig,
) -> Result<(BlochVector, LoopState, HorizonSolution)> {
    let sol = solve_horizon(
        &state.prev,
        &state.cur,
        cfg,
        state.warm.as_ref(),
        state.step,
    )?;
    let next = LoopState {
        prev: state.cur,
        cur: sol.trajectory.unitaries[2],
        warm: Some(shift_warm_start(&sol.trajectory)),
        step: state.step + 1,
    };
    Ok((next.current(), next, sol))
}

/// Per-step record of a controlled run.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopLog {
    /// `total_steps + 1` executed Bloch vectors, after any perturbation.
    pub executed: Vec<BlochVector>,
    pub executed_unitaries: Vec<UnitaryQubit>,
    /// `J*` per step; NaN where no horizon was solved.
    pub value_function: Vec<f64>,
    /// `ℓ_d` per step; NaN where no horizon was solved.
    pub stage_costs: Vec<f64>,
    pub horizon_reports: Vec<SolverReport>,
    pub perturbation_events: Vec<Perturbation>,
}

impl ClosedLoopLog {
    /// `J*_{k+1} − J*_k + ℓ_d(ψ_k)` for steps whose successor was not perturbed.
    pub fn descent_defects(&self) -> Vec<(usize, f64)> {
        let perturbed: Vec<usize> = self.perturbation_events.iter().map(|p| p.step).collect();
        (0..self.value_function.len().saturating_sub(1))
            .filter(|k| !perturbed.contains(&(k + 1)))
            .filter(|k| {
                self.value_function[*k].is_finite() && self.value_function[k + 1].is_finite()
            })
            .map(|k| {
                (
                    k,
                    self.value_function[k + 1] - self.value_function[k] + self.stage_costs[k],
                )
            })
            .collect()
    }

    pub fn max_descent_violation(&self) -> f64 {
        self.descent_defects()
            .iter()
            .map(|(_, d)| *d)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

fn perturbations_at(cfg: &MpcConfig, step: usize) -> impl Iterator<Item = &Perturbation> {
    cfg.perturbations.iter().filter(move |p| p.step == step)
}

/// Re-plans at every step.
pub fn run_closed_loop(cfg: &MpcConfig, start: &MpcStart) -> Result<ClosedLoopLog> {
    cfg.validate()?;
    let mut state = LoopState::new(start, cfg.sample_h);
    let mut log = ClosedLoopLog {
        executed: Vec::with_capacity(cfg.total_steps + 1),
        executed_unitaries: Vec::with_capacity(cfg.total_steps + 1),
        value_function: Vec::with_capacity(cfg.total_steps),
        stage_costs: Vec::with_capacity(cfg.total_steps),
        horizon_reports: Vec::with_capacity(cfg.total_steps),
        perturbation_events: Vec::new(),
    };
    for k in 0..cfg.total_steps {
        for p in perturbations_at(cfg, k) {
            state.perturb(p);
            log.perturbation_events.push(*p);
        }
        log.executed.push(state.current());
        log.executed_unitaries.push(state.cur);
        let (_, next, sol) = mpc_step(&state, cfg)?;
        log.value_function.push(sol.value);
        log.stage_costs.push(sol.stage_cost);
        log.horizon_reports.push(sol.report);
        state = next;
    }
    log.executed.push(state.current());
    log.executed_unitaries.push(state.cur);
    Ok(log)
}

/// Plans once at step 0 and replays the plan's increments, then holds still.
///
/// Perturbations move the executed state but never trigger a new plan.
pub fn run_open_loop(cfg: &MpcConfig, start: &MpcStart) -> Result<ClosedLoopLog> {
    cfg.validate()?;
    let mut state = LoopState::new(start, cfg.sample_h);
    let mut log = ClosedLoopLog {
        executed: Vec::with_capacity(cfg.total_steps + 1),
        executed_unitaries: Vec::with_capacity(cfg.total_steps + 1),
        value_function: vec![f64::NAN; cfg.total_steps],
        stage_costs: vec![f64::NAN; cfg.total_steps],
        horizon_reports: Vec::with_capacity(1),
        perturbation_events: Vec::new(),
    };
    let mut plan: Vec<Vector3<f64>> = Vec::new();
    for k in 0..cfg.total_steps {
        for p in perturbations_at(cfg, k) {
            state.perturb(p);
            log.perturbation_events.push(*p);
        }
        if k == 0 {
            let sol = solve_horizon(&state.prev, &state.cur, cfg, None, 0)?;
            log.value_function[0] = sol.value;
            log.stage_costs[0] = sol.stage_cost;
            plan = sol.trajectory.generators[1..].to_vec();
            log.horizon_reports.push(sol.report);
        }
        log.executed.push(state.current());
        log.executed_unitaries.push(state.cur);
        let omega = plan.get(k).copied().unwrap_or_else(Vector3::zeros);
        let next = state.cur.compose(&cayley(&omega, cfg.sample_h));
        state.prev = state.cur;
        state.cur = next;
    }
    log.executed.push(state.current());
    log.executed_unitaries.push(state.cur);
    Ok(log)
}

/// Increments of an executed unitary sequence, for tabulation.
pub fn executed_generators(log: &ClosedLoopLog, h: f64) -> Result<Vec<Vector3<f64>>> {
    log.executed_unitaries
        .windows(2)
        .enumerate()
        .map(|(k, p)| cayley_inverse(&p[0].inverse().compose(&p[1]), h, k))
        .collect()
}
