//! Scenario configuration, orchestration and table emission.
//!
//! A scenario file is TOML with the optional blocks `[boundary]`,
//! `[obstacle]`, `[discretization]`, `[mpc]`, `[grid]` and `[output]`.
//! Missing keys take mode-dependent defaults; unknown keys and blocks the
//! mode does not use are rejected.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::cubic::{continuous_momentum_jz, rk4_integrate};
use crate::error::{Error, Result};
use crate::lgvi::{
    discrete_momentum_jz, lift_initial_pair, momentum_spread, solve_bvp, BoundaryData,
    DiscreteTrajectory, RightBoundary, SolverReport,
};
use crate::mpc::{
    executed_generators, run_closed_loop, run_open_loop, ClosedLoopLog, MpcConfig, MpcStart,
    Perturbation,
};
use crate::potential::{clearance, potential_value, ObstacleSpec, Variant};
use crate::sphere::{project_tangent, AugmentedState, BlochVector};
use crate::su2::fs_distance;

/// Tolerance on `|‖x‖ − 1|` for vectors that must lie on the sphere.
const UNIT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Cubic,
    Mpc,
    Compare,
    PotentialGrid,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Cubic => "cubic",
            Mode::Mpc => "mpc",
            Mode::Compare => "compare",
            Mode::PotentialGrid => "potential-grid",
        }
    }

    fn uses(self, block: &str) -> bool {
        match self {
            Mode::Cubic | Mode::Compare => {
                matches!(block, "boundary" | "obstacle" | "discretization" | "output")
            }
            Mode::Mpc => matches!(block, "boundary" | "obstacle" | "mpc" | "output"),
            Mode::PotentialGrid => matches!(block, "obstacle" | "grid" | "output"),
        }
    }
}

// ---------------------------------------------------------------------------
// file layout

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mode: Option<Mode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    boundary: Option<RawBoundary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    obstacle: Option<RawObstacle>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    discretization: Option<RawDiscretization>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mpc: Option<RawMpc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    grid: Option<RawGrid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    output: Option<RawOutput>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBoundary {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    start: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    start_direction: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    start_speed: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    end: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    end_velocity: Option<RawEndVelocity>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum RawEndVelocity {
    Keyword(String),
    Given(EndVelocityGiven),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EndVelocityGiven {
    direction: [f64; 3],
    speed: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawObstacle {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    variant: Option<Variant>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    d_radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sharpness: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    centers: Option<Vec<[f64; 3]>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDiscretization {
    #[serde(rename = "T", default, skip_serializing_if = "Option::is_none")]
    t_final: Option<f64>,
    #[serde(rename = "K", default, skip_serializing_if = "Option::is_none")]
    steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rk4_step: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMpc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    horizon_steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sample_h: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    total_steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    alpha_t: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    target: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    descent_tolerance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    open_loop: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    perturbations: Option<Vec<RawPerturbation>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPerturbation {
    step: usize,
    axis: [f64; 3],
    angle: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    theta_steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    phi_steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sharpness_values: Option<Vec<u32>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dir: Option<String>,
}

// ---------------------------------------------------------------------------
// resolved configuration

/// How the final velocity of a cubic is treated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EndVelocity {
    Free,
    Given { direction: [f64; 3], speed: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryConfig {
    pub start: [f64; 3],
    pub start_direction: [f64; 3],
    pub start_speed: f64,
    /// Cubic and compare modes only.
    pub end: Option<[f64; 3]>,
    /// Cubic and compare modes only.
    pub end_velocity: Option<EndVelocity>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObstacleConfig {
    pub variant: Variant,
    pub tau: f64,
    pub d_radius: f64,
    pub sharpness: u32,
    pub centers: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscretizationConfig {
    pub t_final: f64,
    pub steps: usize,
    /// RK4 step of the comparison baseline (compare mode only).
    pub rk4_step: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationConfig {
    pub step: usize,
    pub axis: [f64; 3],
    pub angle: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcSettings {
    pub horizon_steps: usize,
    pub sample_h: f64,
    pub total_steps: usize,
    pub alpha_t: f64,
    pub target: [f64; 3],
    pub descent_tolerance: f64,
    pub open_loop: bool,
    pub perturbations: Vec<PerturbationConfig>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridConfig {
    pub theta_steps: usize,
    pub phi_steps: usize,
    pub sharpness_values: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputConfig {
    pub dir: String,
}

/// A validated scenario with every default filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub mode: Mode,
    pub boundary: Option<BoundaryConfig>,
    pub obstacle: ObstacleConfig,
    pub discretization: Option<DiscretizationConfig>,
    pub mpc: Option<MpcSettings>,
    pub grid: Option<GridConfig>,
    pub output: OutputConfig,
}

fn unit_problem(name: &str, v: &[f64; 3], problems: &mut Vec<String>) {
    let norm = Vector3::from(*v).norm();
    if !norm.is_finite() || (norm - 1.0).abs() > UNIT_TOLERANCE {
        problems.push(format!("{name} must be a unit vector, got norm {norm}"));
    }
}

fn positive(name: &str, x: f64, problems: &mut Vec<String>) {
    if !(x > 0.0 && x.is_finite()) {
        problems.push(format!("{name} must be positive, got {x}"));
    }
}

fn bloch(v: &[f64; 3]) -> BlochVector {
    BlochVector::from_vector(Vector3::from(*v))
}

fn spherical(theta: f64, phi: f64) -> [f64; 3] {
    let n = BlochVector::from_spherical(theta, phi);
    [n.x(), n.y(), n.z()]
}

impl ObstacleConfig {
    /// Builds the potential; the config is assumed validated.
    pub fn to_spec(&self) -> Result<ObstacleSpec> {
        ObstacleSpec::new(
            self.variant,
            self.tau,
            self.d_radius,
            self.sharpness,
            self.centers.iter().map(bloch).collect(),
        )
    }

    fn resolve(raw: RawObstacle, mode: Mode, problems: &mut Vec<String>) -> Self {
        let grid = mode == Mode::PotentialGrid;
        let variant = raw
            .variant
            .unwrap_or(if grid { Variant::Point } else { Variant::Axial });
        let centers = match raw.centers {
            Some(c) => c,
            None if variant == Variant::Cover => {
                problems.push("obstacle.centers is required for the cover variant".into());
                Vec::new()
            }
            None => vec![[0.0, 0.0, 1.0]],
        };
        for (i, c) in centers.iter().enumerate() {
            unit_problem(&format!("obstacle.centers[{i}]"), c, problems);
        }
        let cfg = Self {
            variant,
            tau: raw.tau.unwrap_or(if grid { 1.0 } else { 30.0 }),
            d_radius: raw.d_radius.unwrap_or(if grid { 0.393 } else { 0.35 }),
            sharpness: raw.sharpness.unwrap_or(6),
            centers,
        };
        if !cfg.centers.is_empty() {
            if let Err(Error::Validation(list)) = cfg.to_spec() {
                problems.extend(list.into_iter().map(|p| format!("obstacle: {p}")));
            }
        }
        cfg
    }

    fn to_raw(&self) -> RawObstacle {
        RawObstacle {
            variant: Some(self.variant),
            tau: Some(self.tau),
            d_radius: Some(self.d_radius),
            sharpness: Some(self.sharpness),
            centers: Some(self.centers.clone()),
        }
    }
}

impl BoundaryConfig {
    fn resolve(
        raw: RawBoundary,
        mode: Mode,
        obstacle: &ObstacleConfig,
        problems: &mut Vec<String>,
    ) -> Self {
        let start = raw.start.unwrap_or([0.0, 0.0, -1.0]);
        unit_problem("boundary.start", &start, problems);
        let start_direction = raw.start_direction.unwrap_or([1.0, 1.0, 0.0]);
        let start_speed = raw
            .start_speed
            .unwrap_or(if mode == Mode::Mpc { 0.0 } else { 1.0 });
        if !(start_speed >= 0.0 && start_speed.is_finite()) {
            problems.push(format!(
                "boundary.start_speed must be non-negative, got {start_speed}"
            ));
        }
        let start_ok = (Vector3::from(start).norm() - 1.0).abs() <= UNIT_TOLERANCE;
        if start_ok
            && start_speed > 0.0
            && project_tangent(&bloch(&start), &Vector3::from(start_direction)).norm() < 1e-12
        {
            problems.push(
                "boundary.start_direction has no component tangent to the sphere at boundary.start"
                    .into(),
            );
        }
        let (end, end_velocity) = if mode == Mode::Mpc {
            if raw.end.is_some() {
                problems.push("boundary.end is not used in mpc mode (use mpc.target)".into());
            }
            if raw.end_velocity.is_some() {
                problems.push("boundary.end_velocity is not used in mpc mode".into());
            }
            (None, None)
        } else {
            let end = raw
                .end
                .unwrap_or_else(|| spherical(obstacle.d_radius + 0.05, 0.0));
            unit_problem("boundary.end", &end, problems);
            let ev = match raw.end_velocity {
                None => EndVelocity::Free,
                Some(RawEndVelocity::Keyword(k)) if k == "free" => EndVelocity::Free,
                Some(RawEndVelocity::Keyword(k)) => {
                    problems.push(format!("boundary.end_velocity must be \"free\" or {{ direction, speed }}, got \"{k}\""));
                    EndVelocity::Free
                }
                Some(RawEndVelocity::Given(g)) => {
                    if !(g.speed >= 0.0 && g.speed.is_finite()) {
                        problems.push(format!(
                            "boundary.end_velocity.speed must be non-negative, got {}",
                            g.speed
                        ));
                    }
                    EndVelocity::Given {
                        direction: g.direction,
                        speed: g.speed,
                    }
                }
            };
            (Some(end), Some(ev))
        };
        Self {
            start,
            start_direction,
            start_speed,
            end,
            end_velocity,
        }
    }

    fn to_raw(&self) -> RawBoundary {
        RawBoundary {
            start: Some(self.start),
            start_direction: Some(self.start_direction),
            start_speed: Some(self.start_speed),
            end: self.end,
            end_velocity: self.end_velocity.map(|e| match e {
                EndVelocity::Free => RawEndVelocity::Keyword("free".into()),
                EndVelocity::Given { direction, speed } => {
                    RawEndVelocity::Given(EndVelocityGiven { direction, speed })
                }
            }),
        }
    }

    /// Tangent start velocity.
    pub fn start_velocity(&self) -> Vector3<f64> {
        tangent_velocity(&self.start, &self.start_direction, self.start_speed)
    }
}

fn tangent_velocity(at: &[f64; 3], direction: &[f64; 3], speed: f64) -> Vector3<f64> {
    if speed == 0.0 {
        return Vector3::zeros();
    }
    let t = project_tangent(&bloch(at), &Vector3::from(*direction));
    t * (speed / t.norm())
}

impl DiscretizationConfig {
    fn resolve(raw: RawDiscretization, mode: Mode, problems: &mut Vec<String>) -> Self {
        let cfg = Self {
            t_final: raw.t_final.unwrap_or(1.0),
            steps: raw.steps.unwrap_or(100),
            rk4_step: match mode {
                Mode::Compare => Some(raw.rk4_step.unwrap_or(0.01)),
                _ => {
                    if raw.rk4_step.is_some() {
                        problems
                            .push("discretization.rk4_step is only used in compare mode".into());
                    }
                    None
                }
            },
        };
        positive("discretization.T", cfg.t_final, problems);
        if cfg.steps < 5 {
            problems.push(format!(
                "discretization.K must be at least 5, got {}",
                cfg.steps
            ));
        }
        if let Some(r) = cfg.rk4_step {
            positive("discretization.rk4_step", r, problems);
            if r > 0.0 {
                let ratio = cfg.h() / r;
                if cfg.h() > 0.0
                    && ((ratio - ratio.round()).abs() > 1e-9 * ratio || ratio.round() < 1.0)
                {
                    problems.push(format!(
                        "discretization.rk4_step must divide T/K = {}",
                        cfg.h()
                    ));
                }
            }
        }
        cfg
    }

    pub fn h(&self) -> f64 {
        self.t_final / self.steps as f64
    }

    fn to_raw(&self) -> RawDiscretization {
        RawDiscretization {
            t_final: Some(self.t_final),
            steps: Some(self.steps),
            rk4_step: self.rk4_step,
        }
    }
}

impl MpcSettings {
    fn resolve(raw: RawMpc, obstacle: &ObstacleConfig, problems: &mut Vec<String>) -> Self {
        let total_steps = raw.total_steps.unwrap_or(60);
        let perturbations = match raw.perturbations {
            Some(list) => list
                .into_iter()
                .map(|p| PerturbationConfig {
                    step: p.step,
                    axis: p.axis,
                    angle: p.angle,
                })
                .collect(),
            None => vec![PerturbationConfig {
                step: total_steps / 2,
                axis: [1.0, 0.0, 0.0],
                angle: 0.2,
            }],
        };
        let cfg = Self {
            horizon_steps: raw.horizon_steps.unwrap_or(10),
            sample_h: raw.sample_h.unwrap_or(0.05),
            total_steps,
            alpha_t: raw.alpha_t.unwrap_or(25.0),
            target: raw
                .target
                .unwrap_or_else(|| spherical(obstacle.d_radius + 0.05, 0.0)),
            descent_tolerance: raw.descent_tolerance.unwrap_or(1e-6),
            open_loop: raw.open_loop.unwrap_or(false),
            perturbations,
        };
        unit_problem("mpc.target", &cfg.target, problems);
        for (i, p) in cfg.perturbations.iter().enumerate() {
            if !p.angle.is_finite() {
                problems.push(format!("mpc.perturbations[{i}].angle must be finite"));
            }
        }
        // remaining invariants are checked by MpcConfig::validate
        if let Ok(spec) = obstacle.to_spec() {
            if let Err(Error::Validation(list)) = cfg.controller(spec).validate() {
                problems.extend(list.into_iter().map(|p| format!("mpc: {p}")));
            }
        }
        cfg
    }

    fn controller(&self, obstacle: ObstacleSpec) -> MpcConfig {
        MpcConfig {
            horizon_steps: self.horizon_steps,
            sample_h: self.sample_h,
            alpha_t: self.alpha_t,
            target: bloch(&self.target),
            obstacle,
            total_steps: self.total_steps,
            descent_tolerance: self.descent_tolerance,
            perturbations: self
                .perturbations
                .iter()
                .map(|p| Perturbation {
                    step: p.step,
                    axis: Vector3::from(p.axis),
                    angle: p.angle,
                })
                .collect(),
        }
    }

    fn to_raw(&self) -> RawMpc {
        RawMpc {
            horizon_steps: Some(self.horizon_steps),
            sample_h: Some(self.sample_h),
            total_steps: Some(self.total_steps),
            alpha_t: Some(self.alpha_t),
            target: Some(self.target),
            descent_tolerance: Some(self.descent_tolerance),
            open_loop: Some(self.open_loop),
            perturbations: Some(
                self.perturbations
                    .iter()
                    .map(|p| RawPerturbation {
                        step: p.step,
                        axis: p.axis,
                        angle: p.angle,
                    })
                    .collect(),
            ),
        }
    }
}

impl GridConfig {
    fn resolve(raw: RawGrid, problems: &mut Vec<String>) -> Self {
        let cfg = Self {
            theta_steps: raw.theta_steps.unwrap_or(181),
            phi_steps: raw.phi_steps.unwrap_or(361),
            sharpness_values: raw.sharpness_values.unwrap_or_else(|| vec![2, 6]),
        };
        if cfg.theta_steps < 2 {
            problems.push(format!(
                "grid.theta_steps must be at least 2, got {}",
                cfg.theta_steps
            ));
        }
        if cfg.phi_steps < 2 {
            problems.push(format!(
                "grid.phi_steps must be at least 2, got {}",
                cfg.phi_steps
            ));
        }
        if cfg.sharpness_values.is_empty() {
            problems.push("grid.sharpness_values must not be empty".into());
        }
        if cfg.sharpness_values.contains(&0) {
            problems.push("grid.sharpness_values must all be at least 1".into());
        }
        cfg
    }

    fn to_raw(&self) -> RawGrid {
        RawGrid {
            theta_steps: Some(self.theta_steps),
            phi_steps: Some(self.phi_steps),
            sharpness_values: Some(self.sharpness_values.clone()),
        }
    }
}

impl ScenarioConfig {
    /// Defaults for `mode`, as produced by an empty file.
    pub fn defaults(mode: Mode) -> Self {
        Self::from_raw(RawConfig::default(), mode).expect("defaults are valid")
    }

    fn from_raw(raw: RawConfig, mode: Mode) -> Result<Self> {
        let mut problems = Vec::new();
        if let Some(m) = raw.mode {
            if m != mode {
                problems.push(format!(
                    "file declares mode \"{}\" but \"{}\" was requested",
                    m.name(),
                    mode.name()
                ));
            }
        }
        let present = [
            ("boundary", raw.boundary.is_some()),
            ("obstacle", raw.obstacle.is_some()),
            ("discretization", raw.discretization.is_some()),
            ("mpc", raw.mpc.is_some()),
            ("grid", raw.grid.is_some()),
            ("output", raw.output.is_some()),
        ];
        for (block, there) in present {
            if there && !mode.uses(block) {
                problems.push(format!("[{block}] is not used in {} mode", mode.name()));
            }
        }

        let obstacle =
            ObstacleConfig::resolve(raw.obstacle.unwrap_or_default(), mode, &mut problems);
        let boundary = mode.uses("boundary").then(|| {
            BoundaryConfig::resolve(
                raw.boundary.unwrap_or_default(),
                mode,
                &obstacle,
                &mut problems,
            )
        });
        let discretization = mode.uses("discretization").then(|| {
            DiscretizationConfig::resolve(
                raw.discretization.unwrap_or_default(),
                mode,
                &mut problems,
            )
        });
        let mpc = mode
            .uses("mpc")
            .then(|| MpcSettings::resolve(raw.mpc.unwrap_or_default(), &obstacle, &mut problems));
        let grid = mode
            .uses("grid")
            .then(|| GridConfig::resolve(raw.grid.unwrap_or_default(), &mut problems));
        let output = OutputConfig {
            dir: raw
                .output
                .and_then(|o| o.dir)
                .unwrap_or_else(|| "out".into()),
        };
        if output.dir.is_empty() {
            problems.push("output.dir must not be empty".into());
        }

        if problems.is_empty() {
            Ok(Self {
                mode,
                boundary,
                obstacle,
                discretization,
                mpc,
                grid,
                output,
            })
        } else {
            Err(Error::Validation(problems))
        }
    }

    fn to_raw(&self) -> RawConfig {
        RawConfig {
            mode: Some(self.mode),
            boundary: self.boundary.as_ref().map(BoundaryConfig::to_raw),
            obstacle: Some(self.obstacle.to_raw()),
            discretization: self
                .discretization
                .as_ref()
                .map(DiscretizationConfig::to_raw),
            mpc: self.mpc.as_ref().map(MpcSettings::to_raw),
            grid: self.grid.as_ref().map(GridConfig::to_raw),
            output: Some(RawOutput {
                dir: Some(self.output.dir.clone()),
            }),
        }
    }

    /// Emits a config file that parses back to `self`.
    pub fn to_toml(&self) -> String {
        toml::to_string(&self.to_raw()).expect("config serializes")
    }

    /// Potential and controller settings of an mpc-mode config.
    pub fn controller(&self) -> Result<(MpcConfig, MpcStart)> {
        let (mpc, boundary) = match (&self.mpc, &self.boundary) {
            (Some(m), Some(b)) => (m, b),
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "{} mode has no controller",
                    self.mode.name()
                )))
            }
        };
        let start = MpcStart {
            n0: bloch(&boundary.start),
            v0: boundary.start_velocity(),
        };
        Ok((mpc.controller(self.obstacle.to_spec()?), start))
    }
}

/// Parses and validates a config held in memory.
pub fn parse_config_str(text: &str, mode: Mode) -> Result<ScenarioConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    ScenarioConfig::from_raw(raw, mode)
}

/// Reads, parses and validates a config file.
pub fn parse_config(path: &Path, mode: Mode) -> Result<ScenarioConfig> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_config_str(&text, mode).map_err(|e| match e {
        Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
        e => e,
    })
}

// ---------------------------------------------------------------------------
// tables and reports

/// One CSV cell. NaN and infinite floats render empty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cell {
    Int(usize),
    Float(f64),
    Empty,
}

impl Cell {
    fn opt(x: Option<f64>) -> Self {
        x.map_or(Cell::Empty, Cell::Float)
    }

    pub fn as_f64(&self) -> Option<f64> {
        match *self {
            Cell::Int(i) => Some(i as f64),
            Cell::Float(x) if x.is_finite() => Some(x),
            _ => None,
        }
    }
}

/// A named table with a header row.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    fn new(name: impl Into<String>, header: &[&'static str]) -> Self {
        Self {
            name: name.into(),
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    /// Comma-separated text; floats use the shortest round-trip form.
    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            for (i, cell) in row.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                match *cell {
                    Cell::Int(v) => write!(out, "{v}").unwrap(),
                    Cell::Float(x) if x.is_finite() => write!(out, "{x:?}").unwrap(),
                    _ => {}
                }
            }
            out.push('\n');
        }
        out
    }

    /// Values of a column, `None` for empty cells.
    pub fn column(&self, name: &str) -> Option<Vec<Option<f64>>> {
        let i = self.header.iter().position(|h| *h == name)?;
        Some(self.rows.iter().map(|r| r[i].as_f64()).collect())
    }
}

/// Summary written to `report.toml`.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunReport {
    pub mode: String,
    pub converged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub polish_iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub action: Option<f64>,
    /// `min_k` distance to the nearest obstacle center over all points.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_clearance: Option<f64>,
    /// Same, excluding the final point.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_clearance_before_end: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_constraint_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub momentum_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub momentum_spread: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rk4_max_drift: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rk4_momentum_spread: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub open_loop: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon_solves: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_descent_violation: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_fs_distance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_fs_distance: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub tables: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifacts {
    pub tables: Vec<Table>,
    pub report: RunReport,
}

impl RunArtifacts {
    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn report_toml(&self) -> String {
        toml::to_string(&self.report).expect("report serializes")
    }

    /// Writes every table as `<name>.csv` plus `report.toml` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let io = |e: std::io::Error, p: &Path| Error::Io(format!("{}: {e}", p.display()));
        std::fs::create_dir_all(dir).map_err(|e| io(e, dir))?;
        for t in &self.tables {
            let p = dir.join(format!("{}.csv", t.name));
            std::fs::write(&p, t.to_csv()).map_err(|e| io(e, &p))?;
        }
        let p = dir.join("report.toml");
        std::fs::write(&p, self.report_toml()).map_err(|e| io(e, &p))
    }
}

const TRAJECTORY_HEADER: [&str; 12] = [
    "step",
    "t",
    "n_x",
    "n_y",
    "n_z",
    "omega_x",
    "omega_y",
    "omega_z",
    "constraint_err",
    "jz",
    "stage_cost",
    "value_function",
];

fn trajectory_row(
    step: usize,
    h: f64,
    n: &BlochVector,
    omega: Option<&Vector3<f64>>,
    jz: Option<f64>,
    stage: Option<f64>,
    value: Option<f64>,
) -> Vec<Cell> {
    let mut row = vec![
        Cell::Int(step),
        Cell::Float(step as f64 * h),
        Cell::Float(n.x()),
        Cell::Float(n.y()),
        Cell::Float(n.z()),
    ];
    match omega {
        Some(w) => row.extend([Cell::Float(w.x), Cell::Float(w.y), Cell::Float(w.z)]),
        None => row.extend([Cell::Empty; 3]),
    }
    row.push(Cell::Float((n.as_vector().norm() - 1.0).abs()));
    row.extend([Cell::opt(jz), Cell::opt(stage), Cell::opt(value)]);
    row
}

fn discrete_table(traj: &DiscreteTrajectory, jz: &[f64]) -> Table {
    let k_steps = traj.steps();
    let mut t = Table::new("trajectory", &TRAJECTORY_HEADER);
    for k in 0..=k_steps {
        let j = (1..=jz.len()).contains(&k).then(|| jz[k - 1]);
        t.rows.push(trajectory_row(
            k,
            traj.h,
            &traj.bloch[k],
            traj.generators.get(k),
            j,
            None,
            None,
        ));
    }
    t
}

// ---------------------------------------------------------------------------
// orchestration

fn cubic_parts(cfg: &ScenarioConfig) -> Result<(&BoundaryConfig, &DiscretizationConfig)> {
    match (&cfg.boundary, &cfg.discretization) {
        (Some(b), Some(d)) => Ok((b, d)),
        _ => Err(Error::InvalidArgument(format!(
            "{} mode has no boundary-value problem",
            cfg.mode.name()
        ))),
    }
}

/// Boundary data of a cubic-mode config.
pub fn cubic_boundary(cfg: &ScenarioConfig) -> Result<BoundaryData> {
    let (b, d) = cubic_parts(cfg)?;
    let h = d.h();
    let (u0, u1) = lift_initial_pair(&bloch(&b.start), &b.start_velocity(), h);
    let end = bloch(&b.end.expect("resolved"));
    let right = match b.end_velocity.expect("resolved") {
        EndVelocity::Free => RightBoundary::FreeVelocity { end },
        EndVelocity::Given { direction, speed } => {
            let v = tangent_velocity(&end.to_vector().into(), &direction, speed);
            // stepping backwards from the end gives U_K and U_{K−1}
            let (u_k, u_km1) = lift_initial_pair(&end, &(-v), h);
            RightBoundary::Fixed { u_km1, u_k }
        }
    };
    Ok(BoundaryData { u0, u1, right })
}

/// Solves the boundary-value problem of a cubic- or compare-mode config.
pub fn solve_cubic(cfg: &ScenarioConfig) -> Result<(DiscreteTrajectory, SolverReport)> {
    let (_, d) = cubic_parts(cfg)?;
    let spec = cfg.obstacle.to_spec()?;
    let boundary = cubic_boundary(cfg)?;
    solve_bvp(&boundary, d.steps, Some(&spec), d.h(), None)
        .map_err(|e| e.context("solving the cubic boundary-value problem"))
}

fn clearances(spec: &ObstacleSpec, points: &[BlochVector]) -> (f64, f64) {
    let c: Vec<f64> = points.iter().map(|n| clearance(spec, n)).collect();
    let all = c.iter().copied().fold(f64::INFINITY, f64::min);
    let before = c[..c.len() - 1]
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    (all, before)
}

fn run_cubic(cfg: &ScenarioConfig) -> Result<RunArtifacts> {
    let spec = cfg.obstacle.to_spec()?;
    let (traj, report) = solve_cubic(cfg)?;
    let jz = discrete_momentum_jz(&traj);
    let mut history = Table::new("diagnostics", &["iteration", "action"]);
    for (i, a) in report.action_history.iter().enumerate() {
        history.rows.push(vec![Cell::Int(i), Cell::Float(*a)]);
    }
    let (all, before) = clearances(&spec, &traj.bloch);
    let summary = RunReport {
        mode: cfg.mode.name().into(),
        converged: report.converged,
        iterations: Some(report.iterations),
        polish_iterations: Some(report.polish_iterations),
        residual: Some(report.residual_norm),
        action: Some(report.action),
        min_clearance: Some(all),
        min_clearance_before_end: Some(before),
        max_constraint_error: Some(traj.max_constraint_error()),
        momentum_mean: (!jz.is_empty()).then(|| jz.iter().sum::<f64>() / jz.len() as f64),
        momentum_spread: Some(momentum_spread(&jz)),
        ..Default::default()
    };
    Ok(RunArtifacts {
        tables: vec![discrete_table(&traj, &jz), history],
        report: summary,
    })
}

/// Initial jet for the continuous baseline: the prescribed start velocity
/// with acceleration and jerk from one-sided differences of the discrete
/// solution.
pub fn jet_from_discrete(traj: &DiscreteTrajectory, v0: &Vector3<f64>) -> AugmentedState {
    let h = traj.h;
    let n: Vec<Vector3<f64>> = traj.bloch[..4].iter().map(|b| b.to_vector()).collect();
    let a = (n[0] * 2.0 - n[1] * 5.0 + n[2] * 4.0 - n[3]) / (h * h);
    let j = (-n[0] + n[1] * 3.0 - n[2] * 3.0 + n[3]) / (h * h * h);
    AugmentedState::on_sphere(traj.bloch[0], *v0, a, j)
}

fn run_compare(cfg: &ScenarioConfig) -> Result<RunArtifacts> {
    let mut out = run_cubic(cfg)?;
    let spec = cfg.obstacle.to_spec()?;
    let (b, d) = cubic_parts(cfg)?;
    let rk4_step = d.rk4_step.expect("resolved");
    let (traj, _) = solve_cubic(cfg)?;
    let jet = jet_from_discrete(&traj, &b.start_velocity());
    let rk4 = rk4_integrate(&jet, Some(&spec), d.t_final, rk4_step)
        .map_err(|e| e.context("integrating the RK4 baseline"))?;
    let ratio = (d.h() / rk4_step).round() as usize;
    let jz = discrete_momentum_jz(&traj);

    let mut table = Table::new(
        "diagnostics",
        &[
            "step",
            "t",
            "lgvi_constraint_err",
            "rk4_constraint_err",
            "lgvi_jz",
            "rk4_jz",
        ],
    );
    let mut rk4_jz = Vec::with_capacity(rk4.states.len());
    let mut rk4_drift: f64 = 0.0;
    for (i, s) in rk4.states.iter().enumerate() {
        let drift = (s.n.norm() - 1.0).abs();
        rk4_drift = rk4_drift.max(drift);
        let j = continuous_momentum_jz(s);
        rk4_jz.push(j);
        let k = (i % ratio == 0).then_some(i / ratio);
        let lgvi_err = k.map(|k| (traj.bloch[k].as_vector().norm() - 1.0).abs());
        let lgvi_jz = k.and_then(|k| (1..=jz.len()).contains(&k).then(|| jz[k - 1]));
        table.rows.push(vec![
            Cell::Int(i),
            Cell::Float(i as f64 * rk4_step),
            Cell::opt(lgvi_err),
            Cell::Float(drift),
            Cell::opt(lgvi_jz),
            Cell::Float(j),
        ]);
    }
    out.tables[1] = table;
    out.report.rk4_max_drift = Some(rk4_drift);
    out.report.rk4_momentum_spread = Some(momentum_spread(&rk4_jz));
    Ok(out)
}

/// Runs the controller of an mpc-mode config, closed or open loop.
pub fn run_controller(cfg: &ScenarioConfig) -> Result<(MpcConfig, ClosedLoopLog)> {
    let (controller, start) = cfg.controller()?;
    let open = cfg.mpc.as_ref().is_some_and(|m| m.open_loop);
    let log = if open {
        run_open_loop(&controller, &start)
    } else {
        run_closed_loop(&controller, &start)
    }
    .map_err(|e| {
        e.context(if open {
            "running the open loop"
        } else {
            "running the closed loop"
        })
    })?;
    Ok((controller, log))
}

fn run_mpc(cfg: &ScenarioConfig) -> Result<RunArtifacts> {
    let (controller, log) = run_controller(cfg)?;
    let h = controller.sample_h;
    let omegas = executed_generators(&log, h)?;
    let finite = |x: f64| x.is_finite().then_some(x);

    let mut traj = Table::new("trajectory", &TRAJECTORY_HEADER);
    for (k, n) in log.executed.iter().enumerate() {
        traj.rows.push(trajectory_row(
            k,
            h,
            n,
            omegas.get(k),
            None,
            log.stage_costs.get(k).copied().and_then(finite),
            log.value_function.get(k).copied().and_then(finite),
        ));
    }

    let defects: std::collections::BTreeMap<usize, f64> =
        log.descent_defects().into_iter().collect();
    let mut diag = Table::new(
        "diagnostics",
        &[
            "step",
            "iterations",
            "polish_iterations",
            "residual",
            "descent_defect",
            "fs_to_target",
            "clearance",
        ],
    );
    for (k, n) in log.executed.iter().enumerate() {
        let r = log.horizon_reports.get(k);
        diag.rows.push(vec![
            Cell::Int(k),
            r.map_or(Cell::Empty, |r| Cell::Int(r.iterations)),
            r.map_or(Cell::Empty, |r| Cell::Int(r.polish_iterations)),
            r.map_or(Cell::Empty, |r| Cell::Float(r.residual_norm)),
            Cell::opt(defects.get(&k).copied()),
            Cell::Float(fs_distance(n, &controller.target)),
            Cell::Float(clearance(&controller.obstacle, n)),
        ]);
    }

    let (all, before) = clearances(&controller.obstacle, &log.executed);
    let reports = &log.horizon_reports;
    let summary = RunReport {
        mode: cfg.mode.name().into(),
        converged: reports.iter().all(|r| r.converged),
        iterations: Some(reports.iter().map(|r| r.iterations).sum()),
        polish_iterations: Some(reports.iter().map(|r| r.polish_iterations).sum()),
        residual: Some(reports.iter().map(|r| r.residual_norm).fold(0.0, f64::max)),
        min_clearance: Some(all),
        min_clearance_before_end: Some(before),
        max_constraint_error: Some(
            log.executed
                .iter()
                .map(|n| (n.as_vector().norm() - 1.0).abs())
                .fold(0.0, f64::max),
        ),
        open_loop: Some(cfg.mpc.as_ref().is_some_and(|m| m.open_loop)),
        horizon_solves: Some(reports.len()),
        max_descent_violation: (!defects.is_empty()).then(|| log.max_descent_violation()),
        initial_fs_distance: Some(fs_distance(&log.executed[0], &controller.target)),
        final_fs_distance: Some(fs_distance(
            log.executed.last().expect("nonempty"),
            &controller.target,
        )),
        ..Default::default()
    };
    Ok(RunArtifacts {
        tables: vec![traj, diag],
        report: summary,
    })
}

fn run_grid(cfg: &ScenarioConfig) -> Result<RunArtifacts> {
    let grid = cfg.grid.as_ref().expect("resolved");
    let mut tables = Vec::with_capacity(grid.sharpness_values.len());
    for &n in &grid.sharpness_values {
        let spec = ObstacleConfig {
            sharpness: n,
            ..cfg.obstacle.clone()
        }
        .to_spec()?;
        let mut t = Table::new(format!("grid_N{n}"), &["theta", "phi", "value"]);
        for i in 0..grid.theta_steps {
            let theta = std::f64::consts::PI * i as f64 / (grid.theta_steps - 1) as f64;
            for j in 0..grid.phi_steps {
                let phi = 2.0 * std::f64::consts::PI * j as f64 / (grid.phi_steps - 1) as f64;
                let v = potential_value(&spec, &BlochVector::from_spherical(theta, phi));
                t.rows
                    .push(vec![Cell::Float(theta), Cell::Float(phi), Cell::Float(v)]);
            }
        }
        tables.push(t);
    }
    let report = RunReport {
        mode: cfg.mode.name().into(),
        converged: true,
        tables: tables.iter().map(|t| format!("{}.csv", t.name)).collect(),
        ..Default::default()
    };
    Ok(RunArtifacts { tables, report })
}

/// Executes a validated scenario.
pub fn run(cfg: &ScenarioConfig) -> Result<RunArtifacts> {
    let out = match cfg.mode {
        Mode::Cubic => run_cubic(cfg),
        Mode::Compare => run_compare(cfg),
        Mode::Mpc => run_mpc(cfg),
        Mode::PotentialGrid => run_grid(cfg),
    };
    out.map_err(|e| e.context(format!("{} scenario", cfg.mode.name())))
}
