//! Multistage semi-implicit steps for gradient flows `u' = -M grad E(u)`
//! with a fixed metric `M`, and the generic time loop.

use thiserror::Error;

use crate::linalg::{solve_with, weighted_dot, LinalgError, LinearSolver, Operator};
use crate::metric::MetricError;
use crate::tableau::Tableau;

/// Newton stopping rule on the stage residual.
pub const NEWTON_REL_TOL: f64 = 1e-12;
pub const NEWTON_ABS_TOL: f64 = 1e-14;
pub const NEWTON_MAX_ITERS: usize = 50;

/// Relative tolerance on energy increase that still counts as monotone.
pub const ENERGY_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum StepError {
    #[error("Newton failed in stage {stage}: residual {residual:e} after {iterations} iterations")]
    Newton {
        stage: usize,
        residual: f64,
        iterations: usize,
    },
    #[error("tableau '{0}' has no theta but the problem has an explicit part")]
    MissingTheta(String),
    #[error("non-finite values in stage {0}")]
    NonFinite(usize),
    #[error("state out of range: {0}")]
    OutOfRange(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// A discretized gradient flow with energy split `E = E1 + E2`, `E1` convex
/// and treated implicitly, `E2` treated explicitly. Gradients are taken in
/// the inner product weighted by [`GradientFlowProblem::weights`].
pub trait GradientFlowProblem: Send + Sync {
    fn dim(&self) -> usize;
    /// Quadrature weights defining the discrete L2 inner product.
    fn weights(&self) -> &[f64];
    fn energy1(&self, u: &[f64]) -> f64;
    fn energy2(&self, _u: &[f64]) -> f64 {
        0.0
    }
    fn grad_e1(&self, u: &[f64], out: &mut [f64]);
    fn grad_e2(&self, _u: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
    fn has_explicit_part(&self) -> bool;
    /// Hessian of `E1` as an operator (derivative of `grad_e1`).
    fn hess_e1(&self, u: &[f64]) -> Operator;
    /// Bound on the Hessian of `-E2` over the states the flow visits.
    fn lambda(&self) -> f64;
    fn linear_solver(&self) -> LinearSolver {
        LinearSolver::Direct
    }
    /// Rejects states outside the range the energy split was designed for.
    fn check_state(&self, _u: &[f64]) -> Result<(), StepError> {
        Ok(())
    }

    fn energy(&self, u: &[f64]) -> f64 {
        self.energy1(u) + self.energy2(u)
    }
    fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        weighted_dot(self.weights(), a, b)
    }
    fn grad(&self, u: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; u.len()];
        let mut g2 = vec![0.0; u.len()];
        self.grad_e1(u, &mut g);
        self.grad_e2(u, &mut g2);
        for (a, b) in g.iter_mut().zip(&g2) {
            *a += b;
        }
        g
    }
}

/// `E2(q) + <grad E2(q), u - q>`.
pub fn linearized_energy(p: &dyn GradientFlowProblem, u: &[f64], q: &[f64]) -> f64 {
    let mut g = vec![0.0; q.len()];
    p.grad_e2(q, &mut g);
    let d: Vec<f64> = u.iter().zip(q).map(|(a, b)| a - b).collect();
    p.energy2(q) + p.inner(&g, &d)
}

#[derive(Debug, Clone)]
pub struct StepRecord {
    pub u_next: Vec<f64>,
    /// `U_0 .. U_M`.
    pub stages: Vec<Vec<f64>>,
    pub newton_iterations: Vec<usize>,
    pub linear_iterations: usize,
    pub energy_before: f64,
    pub energy_after: f64,
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, &b| a.max(b.abs()))
}

/// Right-hand side of stage `m` (0-based row): `sum gamma U_i - k M sum theta grad E2(U_i)`.
fn stage_rhs(
    t: &Tableau,
    m: usize,
    k: f64,
    metric: &Operator,
    stages: &[Vec<f64>],
    grads2: &[Vec<f64>],
) -> Vec<f64> {
    let n = stages[0].len();
    let mut rhs = vec![0.0; n];
    for (i, u) in stages.iter().enumerate().take(m + 1) {
        let g = t.gamma[m][i];
        for (r, v) in rhs.iter_mut().zip(u) {
            *r += g * v;
        }
    }
    if let Some(theta) = &t.theta {
        let mut expl = vec![0.0; n];
        let mut any = false;
        for (i, g2) in grads2.iter().enumerate().take(m + 1) {
            let th = theta[m][i];
            if th != 0.0 {
                any = true;
                for (e, v) in expl.iter_mut().zip(g2) {
                    *e += th * v;
                }
            }
        }
        if any {
            let me = metric.apply_vec(&expl);
            for (r, v) in rhs.iter_mut().zip(&me) {
                *r -= k * v;
            }
        }
    }
    rhs
}

struct Residual {
    r: Vec<f64>,
    norm: f64,
    scale: f64,
}

fn residual(
    p: &dyn GradientFlowProblem,
    s: f64,
    k: f64,
    metric: &Operator,
    u: &[f64],
    rhs: &[f64],
) -> Residual {
    let mut g = vec![0.0; u.len()];
    p.grad_e1(u, &mut g);
    let mg = metric.apply_vec(&g);
    let r: Vec<f64> = (0..u.len()).map(|i| s * u[i] + k * mg[i] - rhs[i]).collect();
    let scale = (s * max_abs(u)).max(k * max_abs(&mg)).max(max_abs(rhs));
    Residual { norm: max_abs(&r), r, scale }
}

impl Residual {
    fn converged(&self) -> bool {
        self.norm <= NEWTON_REL_TOL * self.scale || self.norm <= NEWTON_ABS_TOL
    }
}

/// Solves `S U + k M grad E1(U) = rhs` by damped Newton starting from `guess`.
/// Returns the solution, Newton iterations and linear iterations.
pub fn solve_stage(
    p: &dyn GradientFlowProblem,
    s: f64,
    k: f64,
    metric: &Operator,
    rhs: &[f64],
    guess: Vec<f64>,
    stage: usize,
) -> Result<(Vec<f64>, usize, usize), StepError> {
    let mut u = guess;
    let mut res = residual(p, s, k, metric, &u, rhs);
    let mut lin_its = 0;
    for it in 0..NEWTON_MAX_ITERS {
        if !res.norm.is_finite() {
            return Err(StepError::NonFinite(stage));
        }
        if res.converged() {
            return Ok((u, it, lin_its));
        }
        let jac = metric.compose(&p.hess_e1(&u))?.lincomb(k, &Operator::identity(u.len()), s)?;
        let neg: Vec<f64> = res.r.iter().map(|v| -v).collect();
        let (delta, li) = solve_with(&jac, &neg, p.weights(), p.linear_solver())?;
        lin_its += li;
        let mut step = 1.0;
        let mut trial;
        loop {
            trial = u.iter().zip(&delta).map(|(a, d)| a + step * d).collect::<Vec<_>>();
            let tr = residual(p, s, k, metric, &trial, rhs);
            if tr.norm <= res.norm || step < 1e-3 || tr.converged() {
                res = tr;
                break;
            }
            step *= 0.5;
        }
        let small_update = step * max_abs(&delta) <= 4.0 * f64::EPSILON * max_abs(&trial);
        u = trial;
        if small_update {
            // Further updates are below roundoff of the iterate.
            return Ok((u, it + 1, lin_its));
        }
    }
    if res.converged() {
        return Ok((u, NEWTON_MAX_ITERS, lin_its));
    }
    Err(StepError::Newton {
        stage,
        residual: res.norm / res.scale.max(f64::MIN_POSITIVE),
        iterations: NEWTON_MAX_ITERS,
    })
}

/// Relative residual of the stage equation for stage `m` (1-based) given
/// all stage values `U_0 .. U_m`.
pub fn stage_residual(
    t: &Tableau,
    p: &dyn GradientFlowProblem,
    stages: &[Vec<f64>],
    m: usize,
    k: f64,
    metric: &Operator,
) -> f64 {
    let grads2: Vec<Vec<f64>> = stages
        .iter()
        .map(|u| {
            let mut g = vec![0.0; u.len()];
            p.grad_e2(u, &mut g);
            g
        })
        .collect();
    let rhs = stage_rhs(t, m - 1, k, metric, &stages[..m], &grads2[..m]);
    let res = residual(p, t.row_sum(m - 1), k, metric, &stages[m], &rhs);
    res.norm / res.scale.max(f64::MIN_POSITIVE)
}

/// One multistage step of size `k` from `u_n` with the metric `M` frozen
/// (identity when `metric` is `None`).
pub fn ms_step(
    t: &Tableau,
    p: &dyn GradientFlowProblem,
    u_n: &[f64],
    k: f64,
    metric: Option<&Operator>,
) -> Result<StepRecord, StepError> {
    if t.theta.is_none() && p.has_explicit_part() {
        return Err(StepError::MissingTheta(t.label.clone()));
    }
    let identity;
    let metric = match metric {
        Some(m) => m,
        None => {
            identity = Operator::identity(u_n.len());
            &identity
        }
    };
    let explicit = p.has_explicit_part();
    let mm = t.stages();
    let mut stages: Vec<Vec<f64>> = Vec::with_capacity(mm + 1);
    let mut grads2: Vec<Vec<f64>> = Vec::with_capacity(mm + 1);
    let push_grad2 = |u: &[f64], grads2: &mut Vec<Vec<f64>>| {
        let mut g = vec![0.0; u.len()];
        if explicit {
            p.grad_e2(u, &mut g);
        }
        grads2.push(g);
    };
    stages.push(u_n.to_vec());
    push_grad2(u_n, &mut grads2);
    let mut newton = Vec::with_capacity(mm);
    let mut linear = 0;
    for m in 0..mm {
        let s = t.row_sum(m);
        let rhs = stage_rhs(t, m, k, metric, &stages, &grads2);
        let mut guess = vec![0.0; u_n.len()];
        for (i, u) in stages.iter().enumerate() {
            let g = t.gamma[m][i] / s;
            for (x, v) in guess.iter_mut().zip(u) {
                *x += g * v;
            }
        }
        let (u, its, lin) = solve_stage(p, s, k, metric, &rhs, guess, m + 1)?;
        if u.iter().any(|v| !v.is_finite()) {
            return Err(StepError::NonFinite(m + 1));
        }
        newton.push(its);
        linear += lin;
        if m + 1 < mm {
            push_grad2(&u, &mut grads2);
        }
        stages.push(u);
    }
    let u_next = stages[mm].clone();
    Ok(StepRecord {
        energy_before: p.energy(u_n),
        energy_after: p.energy(&u_next),
        u_next,
        stages,
        newton_iterations: newton,
        linear_iterations: linear,
    })
}

/// Result of one step of any stepping algorithm.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub u_next: Vec<f64>,
    /// Energies of intermediate values that must also decrease (in order).
    pub intermediate_energies: Vec<f64>,
    pub newton_iterations: usize,
}

pub trait Stepper: Send + Sync {
    fn step(
        &self,
        p: &dyn GradientFlowProblem,
        u: &[f64],
        k: f64,
    ) -> Result<StepOutcome, StepError>;
    fn name(&self) -> String;
}

/// A tableau with a frozen metric.
#[derive(Debug, Clone)]
pub struct TableauStepper {
    pub tableau: Tableau,
    pub metric: Option<Operator>,
}

impl Stepper for TableauStepper {
    fn step(
        &self,
        p: &dyn GradientFlowProblem,
        u: &[f64],
        k: f64,
    ) -> Result<StepOutcome, StepError> {
        let rec = ms_step(&self.tableau, p, u, k, self.metric.as_ref())?;
        Ok(StepOutcome {
            u_next: rec.u_next,
            intermediate_energies: Vec::new(),
            newton_iterations: rec.newton_iterations.iter().sum(),
        })
    }

    fn name(&self) -> String {
        self.tableau.label.clone()
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub keep_states: bool,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub final_state: Vec<f64>,
    /// `E(u_0), E(u_1), ..., E(u_n)`.
    pub energies: Vec<f64>,
    /// Steps (1-based) where an energy inequality was violated.
    pub violations: Vec<usize>,
    pub states: Vec<Vec<f64>>,
    pub newton_iterations: usize,
}

#[derive(Debug, Error)]
#[error("step {step} failed: {source}")]
pub struct RunError {
    pub step: usize,
    #[source]
    pub source: StepError,
}

fn increased(before: f64, after: f64) -> bool {
    after > before + ENERGY_TOL * (1.0 + before.abs())
}

/// Takes `n_steps` steps of size `k` and monitors the energy.
pub fn run(
    stepper: &dyn Stepper,
    p: &dyn GradientFlowProblem,
    u0: &[f64],
    k: f64,
    n_steps: usize,
    opts: &RunOptions,
) -> Result<Trajectory, RunError> {
    let mut u = u0.to_vec();
    let mut energies = vec![p.energy(&u)];
    let mut violations = Vec::new();
    let mut states = if opts.keep_states { vec![u.clone()] } else { Vec::new() };
    let mut newton = 0;
    for step in 1..=n_steps {
        let out = stepper
            .step(p, &u, k)
            .and_then(|o| p.check_state(&o.u_next).map(|_| o))
            .map_err(|source| RunError { step, source })?;
        let e_prev = *energies.last().expect("nonempty");
        let e_next = p.energy(&out.u_next);
        let mut chain = vec![e_prev];
        chain.extend(&out.intermediate_energies);
        chain.push(e_next);
        if chain.windows(2).any(|w| increased(w[0], w[1])) {
            violations.push(step);
        }
        newton += out.newton_iterations;
        energies.push(e_next);
        u = out.u_next;
        if opts.keep_states {
            states.push(u.clone());
        }
    }
    Ok(Trajectory {
        final_state: u,
        energies,
        violations,
        states,
        newton_iterations: newton,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::flows::{PhaseField, Potential, ScalarFlow};
    use crate::problems::grid::{Boundary, Grid};
    use crate::tableau::builtin;
    use crate::verify::stability_threshold;
    use proptest::prelude::*;

    fn quartic() -> ScalarFlow {
        ScalarFlow {
            e1: |u| 0.5 * u * u,
            de1: |u| u,
            d2e1: |_| 1.0,
            e2: |u| 0.25 * u.powi(4) - u * u,
            de2: |u| u.powi(3) - 2.0 * u,
            lambda: 2.0,
            explicit: true,
        }
    }

    #[test]
    fn backward_euler_on_linear_decay() {
        let p = ScalarFlow::quadratic();
        let be = builtin("be").unwrap();
        let rec = ms_step(&be, &p, &[1.0], 0.25, None).unwrap();
        assert!((rec.u_next[0] - 1.0 / 1.25).abs() < 1e-15);
    }

    #[test]
    fn scaling_gamma_rescales_step() {
        // gamma = [[2]] with step k is backward Euler with step k/2.
        let p = ScalarFlow::quadratic();
        let be = builtin("be").unwrap();
        let doubled = Tableau::new("be2", 1, vec![vec![2.0]], None).unwrap();
        let a = ms_step(&doubled, &p, &[0.7], 0.3, None).unwrap();
        let b = ms_step(&be, &p, &[0.7], 0.15, None).unwrap();
        assert!((a.u_next[0] - b.u_next[0]).abs() < 1e-15);
    }

    #[test]
    fn explicit_part_needs_theta() {
        let fi2 = builtin("fi2").unwrap();
        assert!(matches!(ms_step(&fi2, &quartic(), &[0.5], 0.1, None), Err(StepError::MissingTheta(_))));
    }

    #[test]
    fn stage_equations_hold() {
        let g = Grid::new_1d(0.0, 1.0, 33, Boundary::Periodic);
        let p = PhaseField::new(g.clone(), 1e-2, Potential::PlusMinusOne, (-1.2, 1.2));
        let u0 = g.sample(|x, _| 0.6 * (2.0 * std::f64::consts::PI * x).cos());
        for name in ["si2", "si3"] {
            let t = builtin(name).unwrap();
            let k = 1e-3;
            let rec = ms_step(&t, &p, &u0, k, None).unwrap();
            let id = Operator::identity(u0.len());
            for m in 1..=t.stages() {
                assert!(stage_residual(&t, &p, &rec.stages, m, k, &id) <= 1e-12, "{name} stage {m}");
            }
        }
    }

    #[test]
    fn run_counts_energy_increases() {
        struct Up;
        impl Stepper for Up {
            fn step(&self, _p: &dyn GradientFlowProblem, u: &[f64], _k: f64) -> Result<StepOutcome, StepError> {
                Ok(StepOutcome { u_next: vec![u[0] * 1.1], intermediate_energies: Vec::new(), newton_iterations: 0 })
            }
            fn name(&self) -> String {
                "up".into()
            }
        }
        let tr = run(&Up, &ScalarFlow::quadratic(), &[1.0], 0.1, 3, &RunOptions { keep_states: true }).unwrap();
        assert_eq!(tr.violations, vec![1, 2, 3]);
        assert_eq!(tr.states.len(), 4);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn energy_decreases_below_threshold(
            u0 in -1.5..1.5f64,
            frac in 0.05..0.95f64,
            name in prop::sample::select(vec!["be", "si2", "si2_exact", "si1c", "si1125c"]),
        ) {
            let p = quartic();
            let t = builtin(name).unwrap();
            let tb = stability_threshold(&t, 1.0).threshold.min(1.0);
            let k = frac * tb / p.lambda;
            let tr = run(&TableauStepper { tableau: t, metric: None }, &p, &[u0], k, 20, &RunOptions::default()).unwrap();
            prop_assert!(tr.violations.is_empty());
        }
    }
}
