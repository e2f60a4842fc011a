//! Stability thresholds, order conditions and coefficient polishing for
//! multistage tableaus.

use std::fmt;
use std::ops::{Add, Div, Mul, Sub};

use thiserror::Error;

use crate::integrator::GradientFlowProblem;
use crate::tableau::{Tableau, TableauError, THETA_MONOTONE_TOL, THETA_SUM_TOL};

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("tableau '{0}' has no theta; pass the fully implicit convention")]
    MissingTheta(String),
    #[error("stage index {0} out of range")]
    StageOutOfRange(usize),
    #[error("degenerate auxiliary coefficients: S~[{0},{0}] vanishes")]
    Degenerate(usize),
    #[error("expected {expected} stage states, got {found}")]
    StateCount { expected: usize, found: usize },
    #[error("polishing did not converge: residual {residual:e} after {iterations} iterations")]
    PolishDiverged { residual: f64, iterations: usize },
    #[error("polishing lost stability: threshold {after:e} < 0.9 * {before:e}")]
    PolishLostStability { before: f64, after: f64 },
    #[error("polishing broke theta invariants")]
    PolishTheta,
    #[error("unsupported order {0}")]
    UnsupportedOrder(u32),
    #[error(transparent)]
    Tableau(#[from] TableauError),
}

/// How `theta` is interpreted when computing order conditions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Convention {
    /// `E = E1 + E2` with `E2` treated explicitly; theta is required.
    SemiImplicit,
    /// `E2 = 0`: only the conditions involving `E1` alone are checked and a
    /// missing theta is read as `theta[m][0] = 1`.
    FullyImplicit,
}

impl Convention {
    pub fn for_tableau(t: &Tableau) -> Self {
        if t.is_fully_implicit() {
            Convention::FullyImplicit
        } else {
            Convention::SemiImplicit
        }
    }
}

/// Targets of the nine stage quantities at the final stage.
pub const BETA_TARGETS: [f64; 9] = [
    1.0,
    0.5,
    0.5,
    1.0 / 6.0,
    1.0 / 6.0,
    1.0 / 6.0,
    1.0 / 6.0,
    1.0 / 6.0,
    1.0 / 6.0,
];

/// Indices into the beta vector that make up the order `p` conditions.
pub fn order_conditions(p: u32, conv: Convention) -> Result<&'static [usize], VerifyError> {
    Ok(match (p, conv) {
        (1, _) => &[0],
        (2, Convention::SemiImplicit) => &[0, 1, 2],
        (3, Convention::SemiImplicit) => &[0, 1, 2, 3, 4, 5, 6, 7, 8],
        (2, Convention::FullyImplicit) => &[0, 1],
        (3, Convention::FullyImplicit) => &[0, 1, 3, 7],
        (p, _) => return Err(VerifyError::UnsupportedOrder(p)),
    })
}

/// Auxiliary coefficients `gamma~` and `S~` of the energy-stability
/// rewrite of a tableau. Indices are 0-based: `gamma_tilde[m][i]` is stage
/// `m + 1`, column `i`; `s_tilde[j][m]` is `S~_{j+1, m+1}` for `m <= j`.
#[derive(Debug, Clone)]
pub struct Auxiliary {
    pub gamma_tilde: Vec<Vec<f64>>,
    pub s_tilde: Vec<Vec<f64>>,
}

impl Auxiliary {
    pub fn diagonal(&self) -> Vec<f64> {
        self.s_tilde.iter().enumerate().map(|(j, r)| r[j]).collect()
    }
}

/// Computes `gamma~` and `S~` for the given `k * Lambda`. Without theta the
/// explicit part is absent and `k * Lambda` has no effect.
pub fn gamma_tilde(t: &Tableau, k_lambda: f64) -> Auxiliary {
    let (gamma_tilde, s_tilde) = aux_recursion(&t.gamma, t.theta.as_deref(), k_lambda);
    Auxiliary { gamma_tilde, s_tilde }
}

type Triangle<T> = Vec<Vec<T>>;

fn aux_recursion<T: Scalar>(
    gamma: &[Vec<T>],
    theta: Option<&[Vec<f64>]>,
    k_lambda: f64,
) -> (Triangle<T>, Triangle<T>) {
    let mm = gamma.len();
    let zero = T::constant(0.0);
    let mut gt: Vec<Vec<T>> = (0..mm).map(|m| vec![zero; m + 1]).collect();
    let mut st: Vec<Vec<T>> = (0..mm).map(|j| vec![zero; j + 1]).collect();
    for m in (0..mm).rev() {
        // S~_{j,m} for later stages only needs their (already known) gamma~.
        for j in m + 1..mm {
            st[j][m] = gt[j][..=m].iter().fold(zero, |a, &b| a + b);
        }
        for i in 0..=m {
            let th = theta.map_or(0.0, |th| th[m][i]);
            let mut v = gamma[m][i] - T::constant(k_lambda * th);
            for j in m + 1..mm {
                v = v - gt[j][i] * st[j][m] / st[j][j];
            }
            gt[m][i] = v;
        }
        st[m][m] = gt[m].iter().fold(zero, |a, &b| a + b);
    }
    (gt, st)
}

/// Checks the theta part of the stability conditions (nonnegative, rows
/// summing to one, monotone down each column) within `tol`.
pub fn theta_conditions_hold(t: &Tableau, tol: f64) -> bool {
    let Some(theta) = &t.theta else { return true };
    for (m, row) in theta.iter().enumerate() {
        if row.iter().any(|&v| v < -tol) {
            return false;
        }
        if (row.iter().sum::<f64>() - 1.0).abs() > tol.max(THETA_SUM_TOL) {
            return false;
        }
        if m > 0 && (0..m).any(|i| row[i] > theta[m - 1][i] + tol.max(THETA_MONOTONE_TOL)) {
            return false;
        }
    }
    true
}

fn s_feasible(t: &Tableau, k_lambda: f64) -> bool {
    gamma_tilde(t, k_lambda)
        .diagonal()
        .iter()
        .all(|&s| s.is_finite() && s > 0.0)
}

#[derive(Debug, Clone)]
pub struct StabilityReport {
    pub label: String,
    /// Largest `k * Lambda` such that every smaller value is stable.
    pub threshold: f64,
    pub unbounded: bool,
    pub feasible_at_zero: bool,
    /// False when stable values were found beyond the first unstable one.
    pub monotone: bool,
    pub theta_ok: bool,
    /// `S~_{m,m}` at the reported threshold (at zero when infeasible).
    pub s_diagonal: Vec<f64>,
}

impl fmt::Display for StabilityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.unbounded {
            write!(f, "{}: stable for all sampled k*Lambda", self.label)?;
        } else if !self.feasible_at_zero {
            write!(f, "{}: unstable already at k*Lambda = 0", self.label)?;
        } else {
            write!(f, "{}: stable for k*Lambda < {:.6e}", self.label, self.threshold)?;
        }
        if !self.monotone {
            write!(f, " (feasible set is not an interval)")?;
        }
        if !self.theta_ok {
            write!(f, " (theta conditions violated)")?;
        }
        Ok(())
    }
}

/// Largest `k * Lambda` below which all stability conditions hold.
///
/// The interval `[0, scan_max]` is sampled at 1001 points to locate the first
/// failure (and to detect non-monotone feasibility), then the boundary is
/// bisected to a relative tolerance of `1e-10`.
pub fn stability_threshold(t: &Tableau, scan_max: f64) -> StabilityReport {
    const SAMPLES: usize = 1000;
    let theta_ok = theta_conditions_hold(t, 0.0);
    let report = |threshold: f64, unbounded, feasible_at_zero, monotone| StabilityReport {
        label: t.label.clone(),
        threshold,
        unbounded,
        feasible_at_zero,
        monotone,
        theta_ok,
        s_diagonal: gamma_tilde(t, if threshold.is_finite() { threshold } else { scan_max })
            .diagonal(),
    };
    if !theta_ok || !s_feasible(t, 0.0) {
        return report(0.0, false, false, true);
    }
    if t.is_fully_implicit() {
        return report(f64::INFINITY, true, true, true);
    }
    let xs: Vec<f64> = (0..=SAMPLES)
        .map(|j| scan_max * j as f64 / SAMPLES as f64)
        .collect();
    let flags: Vec<bool> = xs.iter().map(|&x| s_feasible(t, x)).collect();
    let Some(first_bad) = flags.iter().position(|&ok| !ok) else {
        return report(f64::INFINITY, true, true, true);
    };
    let monotone = !flags[first_bad..].iter().any(|&ok| ok);
    let (mut lo, mut hi) = (xs[first_bad - 1], xs[first_bad]);
    while hi - lo > 1e-10 * hi {
        let mid = 0.5 * (lo + hi);
        if s_feasible(t, mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    report(lo, false, true, monotone)
}

/// Minimal number type for running the beta recursion on plain floats and on
/// forward-mode duals.
pub trait Scalar:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Div<Output = Self>
{
    fn constant(v: f64) -> Self;
}

impl Scalar for f64 {
    fn constant(v: f64) -> Self {
        v
    }
}

/// Value and derivative along one direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual {
    pub v: f64,
    pub d: f64,
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, o: Dual) -> Dual {
        Dual { v: self.v + o.v, d: self.d + o.d }
    }
}
impl Sub for Dual {
    type Output = Dual;
    fn sub(self, o: Dual) -> Dual {
        Dual { v: self.v - o.v, d: self.d - o.d }
    }
}
impl Mul for Dual {
    type Output = Dual;
    fn mul(self, o: Dual) -> Dual {
        Dual { v: self.v * o.v, d: self.d * o.v + self.v * o.d }
    }
}
impl Div for Dual {
    type Output = Dual;
    fn div(self, o: Dual) -> Dual {
        Dual {
            v: self.v / o.v,
            d: (self.d * o.v - self.v * o.d) / (o.v * o.v),
        }
    }
}
impl Scalar for Dual {
    fn constant(v: f64) -> Self {
        Dual { v, d: 0.0 }
    }
}

/// Runs the stage recursion for the nine beta quantities and returns their
/// values at the final stage.
pub fn beta_recursion<T: Scalar>(gamma: &[Vec<T>], theta: &[Vec<f64>]) -> [T; 9] {
    let mm = gamma.len();
    let zero = T::constant(0.0);
    let half = T::constant(0.5);
    // beta[m][r] for stage m (0 = U_0, whose betas all vanish).
    let mut beta: Vec<[T; 9]> = vec![[zero; 9]; mm + 1];
    for m in 1..=mm {
        let g = &gamma[m - 1];
        let th = &theta[m - 1];
        let s = g.iter().fold(zero, |a, &x| a + x);
        let mut acc = [zero; 9];
        for i in 1..m {
            for r in 0..9 {
                acc[r] = acc[r] + g[i] * beta[i][r];
            }
        }
        let mut tb1 = zero;
        let mut tb2 = zero;
        let mut tb3 = zero;
        let mut tb1sq = zero;
        for i in 0..m {
            let w = T::constant(th[i]);
            tb1 = tb1 + w * beta[i][0];
            tb2 = tb2 + w * beta[i][1];
            tb3 = tb3 + w * beta[i][2];
            tb1sq = tb1sq + w * beta[i][0] * beta[i][0];
        }
        let mut b = [zero; 9];
        b[0] = (T::constant(1.0) + acc[0]) / s;
        b[1] = (b[0] + acc[1]) / s;
        b[2] = (tb1 + acc[2]) / s;
        b[3] = (b[1] + acc[3]) / s;
        b[4] = (b[2] + acc[4]) / s;
        b[5] = (tb2 + acc[5]) / s;
        b[6] = (tb3 + acc[6]) / s;
        b[7] = (half * b[0] * b[0] + acc[7]) / s;
        b[8] = (half * tb1sq + acc[8]) / s;
        beta[m] = b;
    }
    beta[mm]
}

fn effective_theta(t: &Tableau, conv: Convention) -> Result<Vec<Vec<f64>>, VerifyError> {
    match (&t.theta, conv) {
        (Some(th), _) => Ok(th.clone()),
        (None, Convention::FullyImplicit) => Ok((0..t.stages())
            .map(|m| {
                let mut r = vec![0.0; m + 1];
                r[0] = 1.0;
                r
            })
            .collect()),
        (None, Convention::SemiImplicit) => Err(VerifyError::MissingTheta(t.label.clone())),
    }
}

/// The nine stage quantities at the final stage.
pub fn compute_beta(t: &Tableau, conv: Convention) -> Result<[f64; 9], VerifyError> {
    let theta = effective_theta(t, conv)?;
    Ok(beta_recursion(&t.gamma, &theta))
}

/// Largest order `p` (0 to 3) whose conditions all hold within `tol`.
pub fn order_of(t: &Tableau, tol: f64, conv: Convention) -> Result<u32, VerifyError> {
    let beta = compute_beta(t, conv)?;
    for p in (1..=3).rev() {
        let idx = order_conditions(p, conv)?;
        if idx.iter().all(|&r| (beta[r] - BETA_TARGETS[r]).abs() <= tol) {
            return Ok(p);
        }
    }
    Ok(0)
}

#[derive(Debug, Clone)]
pub struct PolishReport {
    pub tableau: Tableau,
    pub iterations: usize,
    /// Max-norm of the order-condition residual after polishing.
    pub residual: f64,
    /// Largest absolute change to any gamma entry.
    pub max_gamma_change: f64,
    pub threshold_before: f64,
    pub threshold_after: f64,
}

/// Projects theta onto its constraint set: entries clamped to `[0, theta
/// above]` and the last entry of each row set so the row sums to one.
pub fn repair_theta(theta: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(theta.len());
    for (m, row) in theta.iter().enumerate() {
        let mut r = row.clone();
        if m == 0 {
            r[0] = 1.0;
        } else {
            for i in 0..m {
                r[i] = r[i].max(0.0).min(out[m - 1][i]);
            }
            let rest: f64 = r[..m].iter().sum();
            r[m] = (1.0 - rest).max(0.0);
        }
        out.push(r);
    }
    out
}

/// Polishes a tableau to order `p` under its natural convention.
pub fn polish(t: &Tableau, p: u32) -> Result<PolishReport, VerifyError> {
    let conv = Convention::for_tableau(t);
    let targets: Vec<(usize, f64)> = order_conditions(p, conv)?
        .iter()
        .map(|&r| (r, BETA_TARGETS[r]))
        .collect();
    let mut rep = polish_to(t, &targets, conv, 1.0)?;
    rep.tableau.claimed_order = p;
    Ok(rep)
}

/// Adjusts gamma by the smallest change (linearized, anchored at the input
/// coefficients) that makes the listed beta quantities hit their targets to
/// `1e-13`. Theta is first projected onto its constraint set.
///
/// If the projection pushes the stability threshold below 90% of the input's,
/// the offending `S~_{m,m}` at that level are added as equality constraints
/// pinned to a fraction of their input values, and the projection is redone.
pub fn polish_to(
    t: &Tableau,
    targets: &[(usize, f64)],
    conv: Convention,
    scan_max: f64,
) -> Result<PolishReport, VerifyError> {
    const MAX_ACTIVE: usize = 8;
    /// Pinned `S~_{m,m}` as a fraction of their input values.
    const PIN_FRACTION: f64 = 0.1;
    /// Stability constraints are imposed slightly above the 90% level.
    const PIN_LEVEL: f64 = 0.92;

    let theta = effective_theta(t, conv)?;
    let theta_fixed = t.theta.as_ref().map(|th| repair_theta(th));
    let theta_used = theta_fixed.clone().unwrap_or(theta);
    let finite_or = |s: &StabilityReport| if s.unbounded { f64::INFINITY } else { s.threshold };
    let tb = finite_or(&stability_threshold(t, scan_max));
    let pin_at = PIN_LEVEL * tb;
    let build = |gamma: Vec<Vec<f64>>| Tableau {
        label: format!("{}_polished", t.label),
        claimed_order: t.claimed_order,
        claimed_threshold: t.claimed_threshold,
        gamma,
        theta: theta_fixed.clone(),
    };

    let mut pinned: Vec<(usize, f64)> = Vec::new();
    loop {
        let problem = Projection {
            gamma0: &t.gamma,
            theta: &theta_used,
            aux_theta: theta_fixed.as_deref(),
            targets,
            pinned: &pinned,
            pin_at,
        };
        let (gamma, iterations, residual, max_gamma_change) = problem.solve()?;
        let polished = build(gamma);
        if !theta_conditions_hold(&polished, 1e-15) {
            return Err(VerifyError::PolishTheta);
        }
        let ta = finite_or(&stability_threshold(&polished, scan_max));
        if ta >= 0.9 * tb {
            return Ok(PolishReport {
                tableau: polished,
                iterations,
                residual,
                max_gamma_change,
                threshold_before: tb,
                threshold_after: ta,
            });
        }
        let now = gamma_tilde(&polished, pin_at).diagonal();
        let start = gamma_tilde(t, pin_at).diagonal();
        let before = pinned.len();
        for (m, (&a, &b)) in now.iter().zip(&start).enumerate() {
            if (a.is_nan() || a <= 0.0) && b > 0.0 && !pinned.iter().any(|&(j, _)| j == m) {
                pinned.push((m, PIN_FRACTION * b));
            }
        }
        if pinned.len() == before || pinned.len() > MAX_ACTIVE {
            return Err(VerifyError::PolishLostStability { before: tb, after: ta });
        }
    }
}

type Solved = (Vec<Vec<f64>>, usize, f64, f64);

/// Anchored Gauss-Newton projection of gamma onto a set of equality
/// constraints.
struct Projection<'a> {
    gamma0: &'a [Vec<f64>],
    theta: &'a [Vec<f64>],
    aux_theta: Option<&'a [Vec<f64>]>,
    targets: &'a [(usize, f64)],
    /// `(m, value)`: `S~_{m,m}` at `k Lambda = pin_at` must equal `value`.
    pinned: &'a [(usize, f64)],
    pin_at: f64,
}

impl Projection<'_> {
    fn values<T: Scalar>(&self, gamma: &[Vec<T>]) -> Vec<T> {
        let b = beta_recursion(gamma, self.theta);
        let mut out: Vec<T> = self
            .targets
            .iter()
            .map(|&(r, v)| b[r] - T::constant(v))
            .collect();
        if !self.pinned.is_empty() {
            let (_, st) = aux_recursion(gamma, self.aux_theta, self.pin_at);
            out.extend(self.pinned.iter().map(|&(m, v)| st[m][m] - T::constant(v)));
        }
        out
    }

    /// Returns gamma, iterations, residual and the largest gamma change.
    fn solve(&self) -> Result<Solved, VerifyError> {
        const TOL: f64 = 1e-13;
        const MAX_IT: usize = 100;
        let index: Vec<(usize, usize)> = self
            .gamma0
            .iter()
            .enumerate()
            .flat_map(|(m, r)| (0..r.len()).map(move |i| (m, i)))
            .collect();
        let x0: Vec<f64> = index.iter().map(|&(m, i)| self.gamma0[m][i]).collect();
        let unflatten = |x: &[f64]| -> Vec<Vec<f64>> {
            let mut g: Vec<Vec<f64>> = self.gamma0.iter().map(|r| vec![0.0; r.len()]).collect();
            for (&(m, i), &v) in index.iter().zip(x) {
                g[m][i] = v;
            }
            g
        };
        let jacobian = |x: &[f64]| -> Vec<Vec<f64>> {
            let base = unflatten(x);
            let mut cols = Vec::with_capacity(x.len());
            for &(m, i) in &index {
                let g: Vec<Vec<Dual>> = base
                    .iter()
                    .enumerate()
                    .map(|(mm, r)| {
                        r.iter()
                            .enumerate()
                            .map(|(ii, &v)| Dual { v, d: if (mm, ii) == (m, i) { 1.0 } else { 0.0 } })
                            .collect()
                    })
                    .collect();
                cols.push(self.values(&g).iter().map(|d| d.d).collect::<Vec<f64>>());
            }
            let rows = cols.first().map_or(0, |c| c.len());
            (0..rows).map(|q| cols.iter().map(|c| c[q]).collect()).collect()
        };
        // Pinned values only need to hold loosely; order conditions to `TOL`.
        let n_targets = self.targets.len();
        let converged = |r: &[f64]| {
            r[..n_targets].iter().all(|v| v.abs() <= TOL)
                && r[n_targets..].iter().all(|v| v.abs() <= 1e-10)
        };
        let max_abs = |v: &[f64]| v.iter().fold(0.0f64, |a, &b| a.max(b.abs()));

        let mut x = x0.clone();
        let mut r = self.values(&unflatten(&x));
        let mut iterations = 0;
        while !converged(&r) {
            if iterations == MAX_IT || !r.iter().all(|v| v.is_finite()) {
                return Err(VerifyError::PolishDiverged { residual: max_abs(&r), iterations });
            }
            // Minimal-norm step toward the linearized constraint set, anchored
            // at the original coefficients: x = x0 - J^T (J J^T)^{-1} (r - J (x - x0)).
            let jac = jacobian(&x);
            let dx: Vec<f64> = x.iter().zip(&x0).map(|(a, b)| a - b).collect();
            let rhs: Vec<f64> = r
                .iter()
                .zip(&jac)
                .map(|(ri, row)| ri - row.iter().zip(&dx).map(|(a, b)| a * b).sum::<f64>())
                .collect();
            let n = r.len();
            let mut jjt = vec![vec![0.0; n]; n];
            for a in 0..n {
                for b in 0..n {
                    jjt[a][b] = jac[a].iter().zip(&jac[b]).map(|(p, q)| p * q).sum();
                }
            }
            let y = solve_dense(jjt, rhs)
                .ok_or(VerifyError::PolishDiverged { residual: max_abs(&r), iterations })?;
            for (c, xc) in x.iter_mut().enumerate() {
                let corr: f64 = (0..n).map(|q| jac[q][c] * y[q]).sum();
                *xc = x0[c] - corr;
            }
            r = self.values(&unflatten(&x));
            iterations += 1;
        }
        let change = x.iter().zip(&x0).fold(0.0f64, |a, (p, q)| a.max((p - q).abs()));
        Ok((unflatten(&x), iterations, max_abs(&r[..n_targets]), change))
    }
}

/// Gaussian elimination with partial pivoting for small dense systems.
pub(crate) fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let p = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[p][col] == 0.0 {
            return None;
        }
        a.swap(col, p);
        b.swap(col, p);
        for row in col + 1..n {
            let l = a[row][col] / a[col][col];
            for c in col..n {
                a[row][c] -= l * a[col][c];
            }
            b[row] -= l * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|c| a[row][c] * x[c]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

fn sq_dist(p: &dyn GradientFlowProblem, a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    p.inner(&d, &d)
}

/// Compares the two variational forms of stage `m` (1-based): the direct one
/// built from gamma and the rewrite built from gamma~ and S~. Their
/// difference must not depend on `u`; the returned value is
/// `|(F1 - F2)(u_a) - (F1 - F2)(u_b)|`.
///
/// `states` holds `U_0 .. U_{m-1}`.
#[allow(clippy::too_many_arguments)]
pub fn objective_equivalence_check(
    t: &Tableau,
    m: usize,
    k: f64,
    lambda: f64,
    problem: &dyn GradientFlowProblem,
    states: &[Vec<f64>],
    u_a: &[f64],
    u_b: &[f64],
) -> Result<f64, VerifyError> {
    let mm = t.stages();
    if m == 0 || m > mm {
        return Err(VerifyError::StageOutOfRange(m));
    }
    if states.len() != m {
        return Err(VerifyError::StateCount { expected: m, found: states.len() });
    }
    // Without theta the explicit part is absent, matching `gamma_tilde`.
    let theta = match &t.theta {
        Some(th) => th.clone(),
        None => (0..mm).map(|m| vec![0.0; m + 1]).collect(),
    };
    let aux = gamma_tilde(t, k * lambda);
    for j in m - 1..mm {
        if aux.s_tilde[j][j] == 0.0 || !aux.s_tilde[j][j].is_finite() {
            return Err(VerifyError::Degenerate(j + 1));
        }
    }
    let row = m - 1;
    let grads2: Vec<Vec<f64>> = states
        .iter()
        .map(|s| {
            let mut g = vec![0.0; s.len()];
            problem.grad_e2(s, &mut g);
            g
        })
        .collect();
    let lin = |u: &[f64], i: usize| -> f64 {
        let d: Vec<f64> = u.iter().zip(&states[i]).map(|(a, b)| a - b).collect();
        problem.energy2(&states[i]) + problem.inner(&grads2[i], &d)
    };
    let f1 = |u: &[f64]| -> f64 {
        let mut v = problem.energy1(u);
        for i in 0..m {
            v += theta[row][i] * lin(u, i);
            v += t.gamma[row][i] / (2.0 * k) * sq_dist(problem, u, &states[i]);
        }
        v
    };
    let f2 = |u: &[f64]| -> f64 {
        let mut v = problem.energy1(u);
        for i in 0..m {
            v += theta[row][i] * (lin(u, i) + 0.5 * lambda * sq_dist(problem, u, &states[i]));
        }
        for j in row..mm {
            let s_jm = aux.s_tilde[j][row];
            let s_jj = aux.s_tilde[j][j];
            let mut comb: Vec<f64> = u.iter().map(|x| s_jm * x).collect();
            for i in 0..m {
                let g = aux.gamma_tilde[j][i];
                for (c, s) in comb.iter_mut().zip(&states[i]) {
                    *c -= g * s;
                }
            }
            v += problem.inner(&comb, &comb) / (2.0 * k * s_jj);
        }
        v
    };
    Ok(((f1(u_a) - f2(u_a)) - (f1(u_b) - f2(u_b))).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tableau::builtin;

    #[test]
    fn backward_euler_threshold_is_one() {
        let r = stability_threshold(&builtin("be").unwrap(), 2.0);
        assert!(r.feasible_at_zero);
        assert!((r.threshold - 1.0).abs() < 1e-9, "{}", r.threshold);
    }

    #[test]
    fn backward_euler_beta() {
        let b = compute_beta(&builtin("be").unwrap(), Convention::SemiImplicit).unwrap();
        assert_eq!(b[0], 1.0);
        assert_eq!(b[1], 1.0);
        assert_eq!(b[2], 0.0);
        assert_eq!(order_of(&builtin("be").unwrap(), 1e-8, Convention::SemiImplicit).unwrap(), 1);
    }

    #[test]
    fn missing_theta_needs_convention() {
        let t = builtin("fi2").unwrap();
        assert!(matches!(
            compute_beta(&t, Convention::SemiImplicit),
            Err(VerifyError::MissingTheta(_))
        ));
        assert_eq!(order_of(&t, 1e-2, Convention::FullyImplicit).unwrap(), 2);
    }

    #[test]
    fn dual_derivative_matches_difference() {
        let t = builtin("si2").unwrap();
        let theta = t.theta.clone().unwrap();
        let h = 1e-6;
        for (m, i) in [(0, 0), (2, 1), (4, 4)] {
            let g: Vec<Vec<Dual>> = t
                .gamma
                .iter()
                .enumerate()
                .map(|(mm, r)| {
                    r.iter()
                        .enumerate()
                        .map(|(ii, &v)| Dual { v, d: if (mm, ii) == (m, i) { 1.0 } else { 0.0 } })
                        .collect()
                })
                .collect();
            let d = beta_recursion(&g, &theta);
            let mut gp = t.gamma.clone();
            gp[m][i] += h;
            let mut gm = t.gamma.clone();
            gm[m][i] -= h;
            let bp = beta_recursion(&gp, &theta);
            let bm = beta_recursion(&gm, &theta);
            for r in 0..9 {
                let fd = (bp[r] - bm[r]) / (2.0 * h);
                assert!((fd - d[r].d).abs() < 1e-7 * (1.0 + fd.abs()), "{r}: {fd} vs {}", d[r].d);
            }
        }
    }

    #[test]
    fn repair_theta_gives_exact_sums() {
        let th = builtin("si3").unwrap().theta.unwrap();
        let fixed = repair_theta(&th);
        for (m, row) in fixed.iter().enumerate() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-15);
            if m > 0 {
                for i in 0..m {
                    assert!(row[i] <= fixed[m - 1][i]);
                }
            }
        }
    }

    #[test]
    fn dense_solver() {
        let a = vec![vec![0.0, 2.0], vec![3.0, 1.0]];
        let x = solve_dense(a, vec![4.0, 5.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 2.0).abs() < 1e-15);
    }

    fn quartic() -> crate::problems::flows::ScalarFlow {
        crate::problems::flows::ScalarFlow {
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
    fn backward_euler_objectives_coincide() {
        let p = crate::problems::flows::ScalarFlow::quadratic();
        let be = builtin("be").unwrap();
        for (ua, ub) in [(0.3, -1.2), (2.0, 0.1), (-0.7, 0.9)] {
            let d = objective_equivalence_check(&be, 1, 0.2, 0.0, &p, &[vec![0.5]], &[ua], &[ub]).unwrap();
            assert!(d <= 1e-12, "{d}");
        }
    }

    #[test]
    fn si2_scalar_quartic_objectives() {
        let p = quartic();
        let t = builtin("si2").unwrap();
        let k = 0.5 * stability_threshold(&t, 1.0).threshold / p.lambda;
        let states: Vec<Vec<f64>> = [0.4, -0.2, 0.9, 0.1, -0.6].iter().map(|&v| vec![v]).collect();
        for m in 1..=5 {
            let d = objective_equivalence_check(&t, m, k, p.lambda, &p, &states[..m], &[0.8], &[-0.3]).unwrap();
            let scale = 1.0 + states[..m].iter().map(|s| s[0] * s[0]).sum::<f64>() / k;
            assert!(d / scale <= 1e-9, "stage {m}: {d}");
        }
    }

    #[test]
    fn objective_check_validates_arguments() {
        let p = quartic();
        let t = builtin("si2").unwrap();
        assert!(matches!(
            objective_equivalence_check(&t, 0, 1e-3, 2.0, &p, &[], &[0.0], &[1.0]),
            Err(VerifyError::StageOutOfRange(0))
        ));
        assert!(matches!(
            objective_equivalence_check(&t, 2, 1e-3, 2.0, &p, &[vec![0.0]], &[0.0], &[1.0]),
            Err(VerifyError::StateCount { expected: 2, found: 1 })
        ));
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(100))]

        #[test]
        fn s_diagonal_positive_below_threshold(
            frac in 0.0..1.0f64,
            name in proptest::sample::select(vec!["be", "si2", "si2_exact", "si1c", "si1125c"]),
        ) {
            let t = builtin(name).unwrap();
            let r = stability_threshold(&t, 1.0);
            let x = frac * r.threshold.min(1.0);
            proptest::prop_assert!(gamma_tilde(&t, x).diagonal().iter().all(|&s| s > 0.0));
        }
    }

}
