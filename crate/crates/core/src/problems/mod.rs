//! Spatial discretizations, the experiment catalogue and oracle solutions.

pub mod flows;
pub mod grid;
pub mod reference;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use thiserror::Error;

use crate::integrator::{GradientFlowProblem, StepError};
use crate::linalg::{LinearSolver, Operator};
use crate::metric::{HMinus1, IdentityMetric, MetricError, MetricOperator, Mobility, Wasserstein};
use flows::{Entropy, PhaseField, Potential, PowerEnergy};
use grid::{Boundary, Grid};

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("unknown problem '{0}'")]
    UnknownProblem(String),
    #[error("unknown metric '{0}'")]
    UnknownMetric(String),
    #[error("invalid grid size {0}")]
    BadGrid(usize),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Step(#[from] StepError),
}

pub const PROBLEM_NAMES: [&str; 7] = [
    "ac1d_tw", "ac2d", "ch2d", "pme_hm1", "heat_wass", "pme_wass", "ch_mob",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricKind {
    Identity,
    HMinus1,
    Wasserstein,
    Mobility,
}

impl MetricKind {
    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Identity => "identity",
            MetricKind::HMinus1 => "hminus1",
            MetricKind::Wasserstein => "wasserstein",
            MetricKind::Mobility => "mobility",
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MetricKind {
    type Err = ProblemError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "identity" => MetricKind::Identity,
            "hminus1" => MetricKind::HMinus1,
            "wasserstein" => MetricKind::Wasserstein,
            "mobility" => MetricKind::Mobility,
            other => return Err(ProblemError::UnknownMetric(other.to_string())),
        })
    }
}

/// Which independent scheme produces oracle solutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReferenceScheme {
    /// BDF2 with extrapolated explicit part, fixed metric, quadratic `E1`.
    BdfAb,
    /// BDF2 with a constant implicit stabilizer, for state-dependent metrics.
    BdfAbStabilized,
    /// TR-BDF2 with a finite-difference Jacobian (1D only).
    TrBdf2,
}

/// Overrides applied on top of an experiment's defaults.
#[derive(Debug, Clone, Default)]
pub struct ProblemOptions {
    /// Points per axis.
    pub grid: Option<usize>,
    pub metric: Option<MetricKind>,
    pub final_time: Option<f64>,
    pub solver: Option<LinearSolver>,
}

/// Mobility regularization of the `ch_mob` experiment.
pub const CH_MOB_EPS: f64 = 1.0 / 20.0;

/// A fully configured experiment.
#[derive(Clone)]
pub struct Experiment {
    pub name: String,
    pub grid: Grid,
    pub problem: Arc<dyn GradientFlowProblem>,
    pub metric_kind: MetricKind,
    pub metric: Arc<dyn MetricOperator>,
    pub initial: Vec<f64>,
    pub final_time: f64,
    exact: Option<fn(f64, f64, f64) -> f64>,
    pub reference: ReferenceScheme,
    /// Whether the default schemes are the fully implicit ones (`E2 = 0`).
    pub fully_implicit: bool,
    /// Stabilizer for [`ReferenceScheme::BdfAbStabilized`].
    stabilizer: Option<Operator>,
    options: ProblemOptions,
}

impl fmt::Debug for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Experiment")
            .field("name", &self.name)
            .field("grid", &self.grid.n)
            .field("metric", &self.metric_kind)
            .field("final_time", &self.final_time)
            .finish_non_exhaustive()
    }
}

fn gaussian(x: f64, _y: f64) -> f64 {
    1.5 / (2.0 * std::f64::consts::PI).sqrt() * (-9.0 * x * x / 8.0).exp()
}

fn ac_wave(x: f64, _y: f64, t: f64) -> f64 {
    (4.0 * x + 20.0 - 8.0 * t).tanh()
}

fn heat_exact(x: f64, _y: f64, t: f64) -> f64 {
    (std::f64::consts::PI * x).cos() * (-std::f64::consts::PI.powi(2) * t).exp() + 2.0
}

fn disc(radius: f64) -> impl Fn(f64, f64) -> f64 {
    move |x, y| 1.0 / (1.0 + (-(radius - (x * x + y * y).sqrt())).exp())
}

fn ch_forcing(x: f64, _y: f64) -> f64 {
    ((2.0 * std::f64::consts::PI * x).cos() / (10.0 * CH_MOB_EPS)).tanh()
}

/// Default points per axis.
pub fn default_grid(name: &str) -> Result<usize, ProblemError> {
    Ok(match name {
        "ac1d_tw" => 4097,
        "ac2d" | "ch2d" => 128,
        "pme_hm1" | "heat_wass" | "pme_wass" => 2049,
        "ch_mob" => 2048,
        other => return Err(ProblemError::UnknownProblem(other.to_string())),
    })
}

pub fn make_problem(name: &str) -> Result<Experiment, ProblemError> {
    make_problem_with(name, &ProblemOptions::default())
}

/// Builds an experiment by name with optional overrides.
pub fn make_problem_with(name: &str, opts: &ProblemOptions) -> Result<Experiment, ProblemError> {
    let n = match opts.grid {
        Some(n) => n,
        None => default_grid(name)?,
    };
    if n < 3 {
        return Err(ProblemError::BadGrid(n));
    }
    let solver = opts.solver.unwrap_or_default();
    let mut exact: Option<fn(f64, f64, f64) -> f64> = None;
    let mut fully_implicit = false;
    let (grid, problem, initial, final_time, metric_kind, e1_quadratic): (
        Grid,
        Arc<dyn GradientFlowProblem>,
        Vec<f64>,
        f64,
        MetricKind,
        bool,
    ) = match name {
        "ac1d_tw" => {
            let g = Grid::new_1d(-10.0, 10.0, n, Boundary::Dirichlet);
            let mut p = PhaseField::new(g.clone(), 1.0, Potential::UnequalWells, (-1.2, 1.2));
            p.solver = solver;
            exact = Some(ac_wave);
            let u0 = g.sample(|x, y| ac_wave(x, y, 0.0));
            (g, Arc::new(p), u0, 5.0, MetricKind::Identity, true)
        }
        "ac2d" | "ch2d" => {
            let g = Grid::new_2d(-10.0, 10.0, n, Boundary::Periodic);
            let mut p = PhaseField::new(g.clone(), 1.0, Potential::ZeroOne, (-0.2, 1.2));
            p.solver = solver;
            let (radius, t, m) = if name == "ac2d" {
                (7.5, AC2D_FINAL_TIME, MetricKind::Identity)
            } else {
                (5.0, CH2D_FINAL_TIME, MetricKind::HMinus1)
            };
            let u0 = g.sample(disc(radius));
            (g, Arc::new(p), u0, t, m, true)
        }
        "pme_hm1" => {
            let g = Grid::new_1d(-3.0, 3.0, n, Boundary::Neumann);
            fully_implicit = true;
            let u0 = g.sample(gaussian);
            let p = PowerEnergy::new(g.clone(), 3.0 / 8.0, 8.0 / 3.0);
            (g, Arc::new(p), u0, 1.0, MetricKind::HMinus1, false)
        }
        "pme_wass" => {
            let g = Grid::new_1d(-3.0, 3.0, n, Boundary::Neumann);
            fully_implicit = true;
            let u0 = g.sample(gaussian);
            let p = PowerEnergy::new(g.clone(), 1.5, 5.0 / 3.0);
            (g, Arc::new(p), u0, 1.0, MetricKind::Wasserstein, false)
        }
        "heat_wass" => {
            let g = Grid::new_1d(0.0, 1.0, n, Boundary::Neumann);
            exact = Some(heat_exact);
            let u0 = g.sample(|x, y| heat_exact(x, y, 0.0));
            let p = Entropy::new(g.clone());
            (g, Arc::new(p), u0, 0.1, MetricKind::Wasserstein, true)
        }
        "ch_mob" => {
            let g = Grid::new_1d(-0.5, 0.5, n, Boundary::Periodic);
            let f = g.sample(ch_forcing);
            let mut p = PhaseField::new(g.clone(), CH_MOB_EPS * CH_MOB_EPS, Potential::PlusMinusOne, (-1.2, 1.2))
                .with_forcing(f.clone());
            p.solver = solver;
            (g, Arc::new(p), f, 0.125, MetricKind::Mobility, true)
        }
        other => return Err(ProblemError::UnknownProblem(other.to_string())),
    };
    let metric_kind = opts.metric.unwrap_or(metric_kind);
    let metric = build_metric(metric_kind, &grid)?;
    let reference = match (metric.is_constant(), e1_quadratic) {
        (true, true) => ReferenceScheme::BdfAb,
        (false, true) if name != "heat_wass" => ReferenceScheme::BdfAbStabilized,
        _ => ReferenceScheme::TrBdf2,
    };
    let stabilizer = if reference == ReferenceScheme::BdfAbStabilized {
        let neg_lap = HMinus1::new(&grid)?.assemble(&initial)?;
        Some(neg_lap.compose(&problem.hess_e1(&initial)).map_err(MetricError::from)?)
    } else {
        None
    };
    Ok(Experiment {
        name: name.to_string(),
        grid,
        problem,
        metric_kind,
        metric,
        initial,
        final_time: opts.final_time.unwrap_or(final_time),
        exact,
        reference,
        fully_implicit,
        stabilizer,
        options: opts.clone(),
    })
}

/// Final time of the 2D Allen-Cahn experiment (not fixed by the source).
pub const AC2D_FINAL_TIME: f64 = 5.0;
/// Final time of the 2D Cahn-Hilliard experiment (not fixed by the source).
pub const CH2D_FINAL_TIME: f64 = 10.0;

pub fn build_metric(kind: MetricKind, grid: &Grid) -> Result<Arc<dyn MetricOperator>, ProblemError> {
    Ok(match kind {
        MetricKind::Identity => Arc::new(IdentityMetric { n: grid.len() }),
        MetricKind::HMinus1 => Arc::new(HMinus1::new(grid)?),
        MetricKind::Wasserstein => Arc::new(Wasserstein::new(grid)?),
        MetricKind::Mobility => Arc::new(Mobility::new(grid, CH_MOB_EPS)?),
    })
}

impl Experiment {
    /// Exact solution at time `t`, if known.
    pub fn exact_at(&self, t: f64) -> Option<Vec<f64>> {
        self.exact.map(|f| self.grid.sample(|x, y| f(x, y, t)))
    }

    pub fn has_exact(&self) -> bool {
        self.exact.is_some()
    }

    /// The same experiment on a grid refined by `factor`.
    pub fn refined(&self, factor: usize) -> Result<Experiment, ProblemError> {
        if factor == 1 {
            return Ok(self.clone());
        }
        let fine = self.grid.refined(factor);
        let opts = ProblemOptions {
            grid: Some(fine.n[0]),
            ..self.options.clone()
        };
        make_problem_with(&self.name, &opts)
    }

    /// Runs the independent reference scheme with `steps` steps to the final
    /// time on this experiment's grid.
    pub fn reference_run(&self, steps: usize) -> Result<Vec<f64>, ProblemError> {
        let k = self.final_time / steps as f64;
        let p = &*self.problem;
        let u = match self.reference {
            ReferenceScheme::BdfAb => {
                let m = self.metric.assemble(&self.initial)?;
                reference::bdf2_ab(p, &m, &self.initial, k, steps)?
            }
            ReferenceScheme::BdfAbStabilized => {
                let stab = self.stabilizer.as_ref().expect("stabilizer is built with the scheme");
                reference::bdf_ab_stabilized(p, &*self.metric, stab, &self.initial, k, steps)?
            }
            ReferenceScheme::TrBdf2 => reference::tr_bdf2(
                p,
                &*self.metric,
                &self.initial,
                k,
                steps,
                1,
                self.grid.boundary == Boundary::Periodic,
            )?,
        };
        Ok(u)
    }
}

/// Reference solution at the final time computed with `fine_steps` steps on
/// the grid refined by `refine`, restricted to the experiment's grid.
pub fn reference_solution(
    exp: &Experiment,
    fine_steps: usize,
    refine: usize,
) -> Result<Vec<f64>, ProblemError> {
    let fine = exp.refined(refine)?;
    let u = fine.reference_run(fine_steps)?;
    Ok(exp.grid.inject(&u, refine))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_problems_build() {
        for name in PROBLEM_NAMES {
            let e = make_problem_with(name, &ProblemOptions { grid: Some(17), ..Default::default() }).unwrap();
            assert_eq!(e.initial.len(), e.grid.len());
            assert!(e.problem.energy(&e.initial).is_finite());
        }
        assert!(matches!(make_problem("nope"), Err(ProblemError::UnknownProblem(_))));
    }

    #[test]
    fn ac1d_boundary_values() {
        let e = make_problem_with("ac1d_tw", &ProblemOptions { grid: Some(33), ..Default::default() }).unwrap();
        assert_eq!(e.initial[0], -1.0);
        assert_eq!(e.initial[32], 1.0);
        let end = e.exact_at(5.0).unwrap();
        assert!((end[16] - (-20.0f64).tanh()).abs() < 1e-15);
    }

    #[test]
    fn lambda_values() {
        assert!((Potential::UnequalWells.max_curvature(-1.2, 1.2) - 125.44).abs() < 1e-12);
        assert!((Potential::ZeroOne.max_curvature(-0.2, 1.2) - 4.88).abs() < 1e-12);
        assert!((Potential::PlusMinusOne.max_curvature(-1.2, 1.2) - 13.28).abs() < 1e-12);
    }
}
