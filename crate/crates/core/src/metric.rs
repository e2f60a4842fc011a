//! Solution-dependent metrics `u' = -L(u) grad E(u)` and the multistage
//! algorithms that freeze `L` at predicted states.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::integrator::{ms_step, GradientFlowProblem, StepError, StepOutcome, Stepper};
use crate::linalg::{weighted_dot, BandMatrix, LinalgError, Operator};
use crate::problems::grid::{divergence_band, laplacian_fourier, Boundary, Grid};
use crate::tableau::{builtin, Tableau};
use crate::verify::{self, Convention, VerifyError};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("Wasserstein-type metric needs a strictly positive state; found {value:e} at node {index}")]
    NonPositiveState { index: usize, value: f64 },
    #[error("corrected metric L(u) - (k^2/72) D^2L(u)(w, w) is not positive definite (Rayleigh quotient {rayleigh:e})")]
    NotPositive { rayleigh: f64 },
    #[error("metric '{metric}' is not available on this grid: {reason}")]
    Unsupported { metric: String, reason: String },
    #[error("sub-step '{label}' failed: {source}")]
    SubStep {
        label: &'static str,
        #[source]
        source: Box<StepError>,
    },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// A positive semidefinite operator `L(u)` that may depend on the state.
pub trait MetricOperator: Send + Sync {
    fn name(&self) -> &str;
    /// `L(u)` as an operator.
    fn assemble(&self, u: &[f64]) -> Result<Operator, MetricError>;
    /// `D^2 L(u)(w, w)` as an operator.
    fn second_derivative(&self, u: &[f64], w: &[f64]) -> Result<Operator, MetricError>;
    /// True when `L` is affine in `u`, so that `D^2 L` vanishes.
    fn is_linear_in_u(&self) -> bool;
    /// True when `L` does not depend on `u` at all.
    fn is_constant(&self) -> bool;

    fn apply(&self, u: &[f64], v: &[f64]) -> Result<Vec<f64>, MetricError> {
        Ok(self.assemble(u)?.apply_vec(v))
    }
    fn second_derivative_action(
        &self,
        u: &[f64],
        w: &[f64],
        v: &[f64],
    ) -> Result<Vec<f64>, MetricError> {
        Ok(self.second_derivative(u, w)?.apply_vec(v))
    }
}

fn zero_like(op: &Operator) -> Operator {
    Operator::Scalar { n: op.dim(), c: 0.0 }
}

#[derive(Debug, Clone)]
pub struct IdentityMetric {
    pub n: usize,
}

impl MetricOperator for IdentityMetric {
    fn name(&self) -> &str {
        "identity"
    }
    fn assemble(&self, _u: &[f64]) -> Result<Operator, MetricError> {
        Ok(Operator::identity(self.n))
    }
    fn second_derivative(&self, _u: &[f64], _w: &[f64]) -> Result<Operator, MetricError> {
        Ok(Operator::Scalar { n: self.n, c: 0.0 })
    }
    fn is_linear_in_u(&self) -> bool {
        true
    }
    fn is_constant(&self) -> bool {
        true
    }
}

/// `-Laplacian`, the metric of the H^{-1} gradient flow.
#[derive(Debug, Clone)]
pub struct HMinus1 {
    op: Operator,
}

impl HMinus1 {
    pub fn new(grid: &Grid) -> Result<Self, MetricError> {
        let op = match (grid.dim, grid.boundary) {
            (1, _) => Operator::Band(divergence_band(grid, &vec![1.0; grid.len()])?).scaled(-1.0),
            (2, Boundary::Periodic) => Operator::Fourier(laplacian_fourier(grid)).scaled(-1.0),
            _ => {
                return Err(MetricError::Unsupported {
                    metric: "hminus1".into(),
                    reason: "2D grids must be periodic".into(),
                })
            }
        };
        Ok(HMinus1 { op })
    }
}

impl MetricOperator for HMinus1 {
    fn name(&self) -> &str {
        "hminus1"
    }
    fn assemble(&self, _u: &[f64]) -> Result<Operator, MetricError> {
        Ok(self.op.clone())
    }
    fn second_derivative(&self, _u: &[f64], _w: &[f64]) -> Result<Operator, MetricError> {
        Ok(zero_like(&self.op))
    }
    fn is_linear_in_u(&self) -> bool {
        true
    }
    fn is_constant(&self) -> bool {
        true
    }
}

fn require_1d(grid: &Grid, metric: &str) -> Result<(), MetricError> {
    if grid.dim != 1 {
        return Err(MetricError::Unsupported {
            metric: metric.into(),
            reason: "only one-dimensional grids are supported".into(),
        });
    }
    Ok(())
}

/// Linearized Wasserstein metric `L(u) = -div(u grad .)`.
#[derive(Debug, Clone)]
pub struct Wasserstein {
    grid: Grid,
}

impl Wasserstein {
    pub fn new(grid: &Grid) -> Result<Self, MetricError> {
        require_1d(grid, "wasserstein")?;
        Ok(Wasserstein { grid: grid.clone() })
    }
}

fn check_positive(u: &[f64]) -> Result<(), MetricError> {
    match u.iter().position(|&v| v.is_nan() || v <= 0.0) {
        Some(index) => Err(MetricError::NonPositiveState { index, value: u[index] }),
        None => Ok(()),
    }
}

impl MetricOperator for Wasserstein {
    fn name(&self) -> &str {
        "wasserstein"
    }
    fn assemble(&self, u: &[f64]) -> Result<Operator, MetricError> {
        check_positive(u)?;
        Ok(Operator::Band(divergence_band(&self.grid, u)?).scaled(-1.0))
    }
    fn second_derivative(&self, u: &[f64], _w: &[f64]) -> Result<Operator, MetricError> {
        Ok(Operator::Scalar { n: u.len(), c: 0.0 })
    }
    fn is_linear_in_u(&self) -> bool {
        true
    }
    fn is_constant(&self) -> bool {
        false
    }
}

/// Degenerate Cahn-Hilliard mobility `mu(u) = (1 - eps)(1 - u^2)^2 + eps`.
#[derive(Debug, Clone)]
pub struct Mobility {
    grid: Grid,
    pub eps: f64,
}

impl Mobility {
    pub fn new(grid: &Grid, eps: f64) -> Result<Self, MetricError> {
        require_1d(grid, "mobility")?;
        Ok(Mobility { grid: grid.clone(), eps })
    }

    pub fn mu(&self, u: f64) -> f64 {
        let s = 1.0 - u * u;
        (1.0 - self.eps) * s * s + self.eps
    }

    pub fn mu_pp(&self, u: f64) -> f64 {
        (1.0 - self.eps) * (12.0 * u * u - 4.0)
    }

    /// `-div(a grad .)` for nodal coefficients `a`.
    pub fn operator_with(&self, a: &[f64]) -> Result<Operator, MetricError> {
        Ok(Operator::Band(divergence_band(&self.grid, a)?).scaled(-1.0))
    }
}

impl MetricOperator for Mobility {
    fn name(&self) -> &str {
        "mobility"
    }
    fn assemble(&self, u: &[f64]) -> Result<Operator, MetricError> {
        let a: Vec<f64> = u.iter().map(|&v| self.mu(v)).collect();
        self.operator_with(&a)
    }
    fn second_derivative(&self, u: &[f64], w: &[f64]) -> Result<Operator, MetricError> {
        let a: Vec<f64> = u.iter().zip(w).map(|(&v, &x)| self.mu_pp(v) * x * x).collect();
        self.operator_with(&a)
    }
    fn is_linear_in_u(&self) -> bool {
        false
    }
    fn is_constant(&self) -> bool {
        false
    }
}

/// Pointwise metric `L(u) = diag(u)`, the ODE analogue of the Wasserstein
/// metric.
#[derive(Debug, Clone, Default)]
pub struct DiagonalState;

impl MetricOperator for DiagonalState {
    fn name(&self) -> &str {
        "diagonal"
    }
    fn assemble(&self, u: &[f64]) -> Result<Operator, MetricError> {
        check_positive(u)?;
        Ok(Operator::Band(BandMatrix::from_diagonal(u, false)))
    }
    fn second_derivative(&self, u: &[f64], _w: &[f64]) -> Result<Operator, MetricError> {
        Ok(Operator::Band(BandMatrix::from_diagonal(&vec![0.0; u.len()], false)))
    }
    fn is_linear_in_u(&self) -> bool {
        true
    }
    fn is_constant(&self) -> bool {
        false
    }
}

/// Number of random probes used by [`positivity_check`].
pub const POSITIVITY_PROBES: usize = 20;

/// Smallest Rayleigh quotient `<v, C v> / <v, v>` of `op` over seeded random
/// probes, in the inner product weighted by `weights`.
pub fn min_rayleigh(op: &Operator, weights: &[f64], seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = op.dim();
    (0..POSITIVITY_PROBES)
        .map(|_| {
            let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let cv = op.apply_vec(&v);
            weighted_dot(weights, &v, &cv) / weighted_dot(weights, &v, &v)
        })
        .fold(f64::INFINITY, f64::min)
}

/// `L(u*) - (k^2/72) D^2L(u*)(w, w)` with `w = L(u*) grad E(u*)`.
pub fn corrected_operator(
    metric: &dyn MetricOperator,
    p: &dyn GradientFlowProblem,
    u_star: &[f64],
    k: f64,
) -> Result<Operator, MetricError> {
    let l = metric.assemble(u_star)?;
    let w = l.apply_vec(&p.grad(u_star));
    let d2 = metric.second_derivative(u_star, &w)?;
    Ok(l.lincomb(1.0, &d2, -k * k / 72.0)?)
}

/// Whether the corrected operator at `u_star` is positive on random probes.
pub fn positivity_check(
    metric: &dyn MetricOperator,
    p: &dyn GradientFlowProblem,
    u_star: &[f64],
    k: f64,
) -> Result<bool, MetricError> {
    let op = corrected_operator(metric, p, u_star, k)?;
    Ok(min_rayleigh(&op, p.weights(), 0x5eed) > 0.0)
}

/// Relative discrepancy between `D^2L(u)(w, w) v` and the centered second
/// difference of `L` along `w`, for a seeded random probe `v`.
pub fn dsql_check(
    metric: &dyn MetricOperator,
    u: &[f64],
    w: &[f64],
    h: f64,
    seed: u64,
) -> Result<f64, MetricError> {
    if metric.is_linear_in_u() {
        return Ok(0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v: Vec<f64> = (0..u.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let exact = metric.second_derivative_action(u, w, &v)?;
    let shift = |s: f64| -> Vec<f64> { u.iter().zip(w).map(|(a, b)| a + s * b).collect() };
    let lp = metric.apply(&shift(h), &v)?;
    let l0 = metric.apply(u, &v)?;
    let lm = metric.apply(&shift(-h), &v)?;
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..u.len() {
        let fd = (lp[i] - 2.0 * l0[i] + lm[i]) / (h * h);
        num += (fd - exact[i]).powi(2);
        den += exact[i].powi(2);
    }
    Ok((num / den.max(f64::MIN_POSITIVE)).sqrt())
}

/// Tableaus used by the metric algorithms.
#[derive(Debug, Clone)]
pub struct SchemeSet {
    pub be: Tableau,
    pub si2: Tableau,
    pub si3: Tableau,
    pub si1c: Tableau,
    pub si1125c: Tableau,
    pub fi2: Tableau,
    pub fi3: Tableau,
    pub fi1125: Tableau,
}

impl SchemeSet {
    /// Coefficients as printed.
    pub fn printed() -> Self {
        let b = |n: &str| builtin(n).expect("builtin exists");
        SchemeSet {
            be: b("be"),
            si2: b("si2"),
            si3: b("si3"),
            si1c: b("si1c"),
            si1125c: b("si1125c"),
            fi2: b("fi2"),
            fi3: b("fi3"),
            fi1125: b("fi1125"),
        }
    }

    /// Coefficients polished so that every order condition holds to
    /// roundoff.
    pub fn polished() -> Result<Self, VerifyError> {
        let p = Self::printed();
        let sub = |t: &Tableau| -> Result<Tableau, VerifyError> {
            let (targets, conv) = substep_targets(&t.label).expect("sub-step tableau");
            Ok(verify::polish_to(t, targets, conv, 1.0)?.tableau)
        };
        Ok(SchemeSet {
            si2: verify::polish(&p.si2, 2)?.tableau,
            si3: verify::polish(&p.si3, 3)?.tableau,
            si1c: sub(&p.si1c)?,
            si1125c: sub(&p.si1125c)?,
            fi2: verify::polish(&p.fi2, 2)?.tableau,
            fi3: verify::polish(&p.fi3, 3)?.tableau,
            fi1125: sub(&p.fi1125)?,
            be: p.be,
        })
    }
}

const R1125: f64 = 11.0 / 25.0;

/// Conditions met by the sub-step tableaus of the third-order algorithms in
/// place of the usual order conditions: `(beta index, value)` pairs.
pub fn substep_targets(label: &str) -> Option<(&'static [(usize, f64)], Convention)> {
    match label {
        "si1c" => Some((&[(0, 1.0), (1, 1.0), (2, 1.0)], Convention::SemiImplicit)),
        "si1125c" => Some((&[(0, 1.0), (1, R1125), (2, R1125)], Convention::SemiImplicit)),
        "fi1125" => Some((&[(0, 1.0), (1, R1125)], Convention::FullyImplicit)),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Step2,
    Step3,
    Step2Fi,
    Step3Fi,
}

impl Algorithm {
    pub fn order(self) -> u32 {
        match self {
            Algorithm::Step2 | Algorithm::Step2Fi => 2,
            Algorithm::Step3 | Algorithm::Step3Fi => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Step2 => "step2",
            Algorithm::Step3 => "step3",
            Algorithm::Step2Fi => "step2_fi",
            Algorithm::Step3Fi => "step3_fi",
        }
    }
}

/// Output of one metric-algorithm step.
#[derive(Debug, Clone)]
pub struct MetricStepRecord {
    pub u_next: Vec<f64>,
    /// Half-step value of the third-order algorithms.
    pub u_bar: Option<Vec<f64>>,
    pub newton_iterations: usize,
}

/// Runs one of the metric algorithms.
#[derive(Clone)]
pub struct MetricStepper {
    pub algorithm: Algorithm,
    pub metric: Arc<dyn MetricOperator>,
    pub tableaus: Arc<SchemeSet>,
    /// Apply the `(k^2/72) D^2L` correction in the third-order algorithms.
    pub correction: bool,
}

impl MetricStepper {
    pub fn new(algorithm: Algorithm, metric: Arc<dyn MetricOperator>, tableaus: Arc<SchemeSet>) -> Self {
        MetricStepper { algorithm, metric, tableaus, correction: true }
    }

    pub fn step_full(
        &self,
        p: &dyn GradientFlowProblem,
        u_n: &[f64],
        k: f64,
    ) -> Result<MetricStepRecord, MetricError> {
        let t = &*self.tableaus;
        let mut newton = 0;
        let mut sub = |label: &'static str,
                       tab: &Tableau,
                       op: &Operator,
                       start: &[f64],
                       kk: f64|
         -> Result<Vec<f64>, MetricError> {
            let rec = ms_step(tab, p, start, kk, Some(op))
                .map_err(|e| MetricError::SubStep { label, source: Box::new(e) })?;
            newton += rec.newton_iterations.iter().sum::<usize>();
            Ok(rec.u_next)
        };
        let l_n = self.metric.assemble(u_n)?;
        match self.algorithm {
            Algorithm::Step2 | Algorithm::Step2Fi => {
                let (pred, main) = if self.algorithm == Algorithm::Step2 {
                    (&t.be, &t.si2)
                } else {
                    (&t.be, &t.fi2)
                };
                let u_star = sub("predictor", pred, &l_n, u_n, 0.5 * k)?;
                let l_star = self.metric.assemble(&u_star)?;
                let u_next = sub("main", main, &l_star, u_n, k)?;
                Ok(MetricStepRecord { u_next, u_bar: None, newton_iterations: newton })
            }
            Algorithm::Step3 | Algorithm::Step3Fi => {
                let semi = self.algorithm == Algorithm::Step3;
                let (first, half, second) = if semi {
                    (&t.si1c, &t.si3, &t.si1125c)
                } else {
                    (&t.be, &t.fi3, &t.fi1125)
                };
                let u_s1 = sub("first predictor", first, &l_n, u_n, k / 6.0)?;
                let c1 = self.frozen(p, &u_s1, k)?;
                let u_bar = sub("first half step", half, &c1, u_n, 0.5 * k)?;
                let u_s21 = sub("second predictor", &t.be, &l_n, u_n, 0.4 * k)?;
                let l_s21 = self.metric.assemble(&u_s21)?;
                let u_s22 = sub("second corrector", second, &l_s21, u_n, 5.0 * k / 6.0)?;
                let c2 = self.frozen(p, &u_s22, k)?;
                let u_next = sub("second half step", half, &c2, &u_bar, 0.5 * k)?;
                Ok(MetricStepRecord { u_next, u_bar: Some(u_bar), newton_iterations: newton })
            }
        }
    }

    /// Frozen metric of a third-order half step, corrected and checked.
    fn frozen(
        &self,
        p: &dyn GradientFlowProblem,
        u_star: &[f64],
        k: f64,
    ) -> Result<Operator, MetricError> {
        if !self.correction {
            return self.metric.assemble(u_star);
        }
        let op = corrected_operator(&*self.metric, p, u_star, k)?;
        if !self.metric.is_linear_in_u() {
            let q = min_rayleigh(&op, p.weights(), 0x5eed);
            if q <= 0.0 {
                return Err(MetricError::NotPositive { rayleigh: q });
            }
        }
        Ok(op)
    }
}

impl Stepper for MetricStepper {
    fn step(
        &self,
        p: &dyn GradientFlowProblem,
        u: &[f64],
        k: f64,
    ) -> Result<StepOutcome, StepError> {
        let rec = self.step_full(p, u, k)?;
        Ok(StepOutcome {
            intermediate_energies: rec.u_bar.as_deref().map(|b| vec![p.energy(b)]).unwrap_or_default(),
            u_next: rec.u_next,
            newton_iterations: rec.newton_iterations,
        })
    }

    fn name(&self) -> String {
        self.algorithm.name().to_string()
    }
}

pub fn step2(
    p: &dyn GradientFlowProblem,
    metric: Arc<dyn MetricOperator>,
    tableaus: Arc<SchemeSet>,
    u_n: &[f64],
    k: f64,
) -> Result<Vec<f64>, MetricError> {
    Ok(MetricStepper::new(Algorithm::Step2, metric, tableaus).step_full(p, u_n, k)?.u_next)
}

pub fn step3(
    p: &dyn GradientFlowProblem,
    metric: Arc<dyn MetricOperator>,
    tableaus: Arc<SchemeSet>,
    u_n: &[f64],
    k: f64,
) -> Result<Vec<f64>, MetricError> {
    Ok(MetricStepper::new(Algorithm::Step3, metric, tableaus).step_full(p, u_n, k)?.u_next)
}

pub fn step2_fi(
    p: &dyn GradientFlowProblem,
    metric: Arc<dyn MetricOperator>,
    tableaus: Arc<SchemeSet>,
    u_n: &[f64],
    k: f64,
) -> Result<Vec<f64>, MetricError> {
    Ok(MetricStepper::new(Algorithm::Step2Fi, metric, tableaus).step_full(p, u_n, k)?.u_next)
}

pub fn step3_fi(
    p: &dyn GradientFlowProblem,
    metric: Arc<dyn MetricOperator>,
    tableaus: Arc<SchemeSet>,
    u_n: &[f64],
    k: f64,
) -> Result<Vec<f64>, MetricError> {
    Ok(MetricStepper::new(Algorithm::Step3Fi, metric, tableaus).step_full(p, u_n, k)?.u_next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::flows::{PhaseField, Potential, ScalarFlow};
    use proptest::prelude::*;

    fn periodic(n: usize) -> Grid {
        Grid::new_1d(-0.5, 0.5, n, Boundary::Periodic)
    }

    fn fields(n: usize, lo: f64, hi: f64) -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
        let f = move || prop::collection::vec(lo..hi, n);
        (f(), prop::collection::vec(-1.0..1.0f64, n), prop::collection::vec(-1.0..1.0f64, n))
    }

    #[test]
    fn mobility_second_derivative_is_second_order_accurate() {
        let g = periodic(32);
        let m = Mobility::new(&g, 0.05).unwrap();
        let u = g.sample(|x, _| 0.8 * (2.0 * std::f64::consts::PI * x).sin());
        let w = g.sample(|x, _| (6.0 * x).cos());
        let e1 = dsql_check(&m, &u, &w, 1e-2, 1).unwrap();
        let e2 = dsql_check(&m, &u, &w, 5e-3, 1).unwrap();
        assert!(e1 < 1e-3, "{e1}");
        assert!((e1 / e2 - 4.0).abs() < 0.5, "ratio {}", e1 / e2);
    }

    #[test]
    fn linear_metrics_have_no_correction() {
        let g = Grid::new_1d(0.0, 1.0, 17, Boundary::Neumann);
        let p = PhaseField::new(g.clone(), 1.0, Potential::ZeroOne, (-1.0, 3.0));
        let u = g.sample(|x, _| 1.5 + x);
        let w = Wasserstein::new(&g).unwrap();
        let c = corrected_operator(&w, &p, &u, 0.3).unwrap();
        let l = w.assemble(&u).unwrap();
        let v = g.sample(|x, _| x * x);
        let (a, b) = (c.apply_vec(&v), l.apply_vec(&v));
        assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-14));
        assert_eq!(dsql_check(&w, &u, &v, 1e-3, 0).unwrap(), 0.0);
    }

    #[test]
    fn wasserstein_rejects_nonpositive_states() {
        let g = Grid::new_1d(0.0, 1.0, 9, Boundary::Neumann);
        let w = Wasserstein::new(&g).unwrap();
        let mut u = vec![1.0; 9];
        u[4] = 0.0;
        assert!(matches!(w.assemble(&u), Err(MetricError::NonPositiveState { index: 4, .. })));
        u[4] = f64::NAN;
        assert!(w.assemble(&u).is_err());
        assert!(matches!(Wasserstein::new(&Grid::new_2d(0.0, 1.0, 8, Boundary::Periodic)), Err(MetricError::Unsupported { .. })));
    }

    #[test]
    fn positivity_fails_for_huge_steps() {
        let g = periodic(32);
        let m = Mobility::new(&g, 0.05).unwrap();
        let p = PhaseField::new(g.clone(), 0.05 * 0.05, Potential::PlusMinusOne, (-1.2, 1.2));
        // mu'' > 0 wherever |u| > 1/sqrt(3), so the correction is negative.
        let u = g.sample(|x, _| 0.9 + 0.05 * (2.0 * std::f64::consts::PI * x).cos());
        assert!(positivity_check(&m, &p, &u, 1e-4).unwrap());
        assert!(!positivity_check(&m, &p, &u, 1e3).unwrap());
    }

    #[test]
    fn scalar_step_with_constant_metric_is_tableau_step() {
        // With L = 1 the predictor is irrelevant and step2 is one si2 step.
        let p = ScalarFlow::quadratic();
        let set = Arc::new(SchemeSet::printed());
        let a = step2(&p, Arc::new(IdentityMetric { n: 1 }), set.clone(), &[0.8], 0.2).unwrap();
        let b = ms_step(&set.si2, &p, &[0.8], 0.2, None).unwrap().u_next;
        assert!((a[0] - b[0]).abs() < 1e-15);
    }

    #[test]
    fn polished_set_meets_substep_conditions() {
        let (raw, set) = (SchemeSet::printed(), SchemeSet::polished().unwrap());
        for (r, t) in [(&raw.si1c, &set.si1c), (&raw.si1125c, &set.si1125c), (&raw.fi1125, &set.fi1125)] {
            let (targets, conv) = substep_targets(&r.label).unwrap();
            let beta = verify::compute_beta(t, conv).unwrap();
            for &(r, v) in targets {
                assert!((beta[r] - v).abs() < 1e-13, "{} beta{}", t.label, r + 1);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn metrics_are_self_adjoint_and_positive((u, v, w) in fields(24, 0.1, 2.0)) {
            let g = periodic(24);
            let ops: Vec<Box<dyn MetricOperator>> = vec![
                Box::new(Mobility::new(&g, 0.05).unwrap()),
                Box::new(Wasserstein::new(&g).unwrap()),
                Box::new(HMinus1::new(&g).unwrap()),
            ];
            let wts = g.weights();
            for m in &ops {
                let l = m.assemble(&u).unwrap();
                let a = weighted_dot(wts, &v, &l.apply_vec(&w));
                let b = weighted_dot(wts, &l.apply_vec(&v), &w);
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs())), "{}", m.name());
                prop_assert!(weighted_dot(wts, &v, &l.apply_vec(&v)) >= -1e-12, "{}", m.name());
            }
        }

        #[test]
        fn mobility_dsql_small((u, w, _v) in fields(24, -1.0, 1.0)) {
            let m = Mobility::new(&periodic(24), 0.05).unwrap();
            prop_assert!(dsql_check(&m, &u, &w, 1e-3, 3).unwrap() < 1e-5);
        }
    }
}
