//! Independent multistep schemes used to produce oracle solutions.

use crate::integrator::{ms_step, GradientFlowProblem, StepError};
use crate::linalg::{BandLu, BandMatrix, LinalgError, Operator};
use crate::metric::MetricOperator;
use crate::tableau::builtin;

enum Factored {
    Band(BandLu),
    Other(Operator),
}

impl Factored {
    fn new(op: Operator) -> Result<Self, LinalgError> {
        Ok(match op {
            Operator::Band(b) => Factored::Band(BandLu::factor(&b)?),
            other => Factored::Other(other),
        })
    }

    fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>, LinalgError> {
        match self {
            Factored::Band(lu) => lu.solve(rhs),
            Factored::Other(op) => op.solve(rhs),
        }
    }
}

fn grad2(p: &dyn GradientFlowProblem, u: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; u.len()];
    p.grad_e2(u, &mut g);
    g
}

/// Four backward Euler steps of size `k/4` with the metric frozen at the
/// start of each sub-step.
fn bootstrap(
    p: &dyn GradientFlowProblem,
    metric: &dyn Fn(&[f64]) -> Result<Operator, StepError>,
    u0: &[f64],
    k: f64,
) -> Result<Vec<f64>, StepError> {
    let be = builtin("be").expect("builtin");
    let mut u = u0.to_vec();
    for _ in 0..4 {
        let m = metric(&u)?;
        u = ms_step(&be, p, &u, 0.25 * k, Some(&m))?.u_next;
    }
    Ok(u)
}

/// Second-order BDF with extrapolated explicit part for a quadratic `E1`
/// and a fixed metric `M`:
///
/// `3/2 u^{n+1} - 2 u^n + 1/2 u^{n-1} = -k M (H1 u^{n+1} + 2 grad E2(u^n) - grad E2(u^{n-1}))`.
pub fn bdf2_ab(
    p: &dyn GradientFlowProblem,
    metric: &Operator,
    u0: &[f64],
    k: f64,
    n_steps: usize,
) -> Result<Vec<f64>, StepError> {
    if n_steps == 0 {
        return Ok(u0.to_vec());
    }
    let u1 = bootstrap(p, &|_| Ok(metric.clone()), u0, k)?;
    let jac = metric
        .compose(&p.hess_e1(u0))?
        .lincomb(k, &Operator::identity(u0.len()), 1.5)?;
    let lu = Factored::new(jac)?;
    let (mut prev, mut cur) = (u0.to_vec(), u1);
    let mut g_prev = grad2(p, &prev);
    for _ in 1..n_steps {
        let g_cur = grad2(p, &cur);
        let ex: Vec<f64> = g_cur.iter().zip(&g_prev).map(|(a, b)| 2.0 * a - b).collect();
        let mex = metric.apply_vec(&ex);
        let rhs: Vec<f64> = (0..cur.len())
            .map(|i| 2.0 * cur[i] - 0.5 * prev[i] - k * mex[i])
            .collect();
        let next = lu.solve(&rhs)?;
        prev = std::mem::replace(&mut cur, next);
        g_prev = g_cur;
    }
    Ok(cur)
}

/// Second-order BDF for `u' = -L(u) grad E(u)` stabilized by a constant
/// operator `S` treated implicitly:
///
/// `3u^{n+1} + 2kS u^{n+1} = 4u^n - u^{n-1} + 4k(S u^n - L(u^n) grad E(u^n)) - 2k(S u^{n-1} - L(u^{n-1}) grad E(u^{n-1}))`.
pub fn bdf_ab_stabilized(
    p: &dyn GradientFlowProblem,
    metric: &dyn MetricOperator,
    stab: &Operator,
    u0: &[f64],
    k: f64,
    n_steps: usize,
) -> Result<Vec<f64>, StepError> {
    if n_steps == 0 {
        return Ok(u0.to_vec());
    }
    let u1 = bootstrap(p, &|u| Ok(metric.assemble(u)?), u0, k)?;
    let lu = Factored::new(stab.lincomb(2.0 * k, &Operator::identity(u0.len()), 3.0)?)?;
    let f = |u: &[f64]| -> Result<Vec<f64>, StepError> {
        let su = stab.apply_vec(u);
        let lg = metric.assemble(u)?.apply_vec(&p.grad(u));
        Ok(su.iter().zip(&lg).map(|(a, b)| k * (a - b)).collect())
    };
    let (mut prev, mut cur) = (u0.to_vec(), u1);
    let mut f_prev = f(&prev)?;
    for _ in 1..n_steps {
        let f_cur = f(&cur)?;
        let rhs: Vec<f64> = (0..cur.len())
            .map(|i| 4.0 * cur[i] - prev[i] + 4.0 * f_cur[i] - 2.0 * f_prev[i])
            .collect();
        let next = lu.solve(&rhs)?;
        prev = std::mem::replace(&mut cur, next);
        f_prev = f_cur;
    }
    Ok(cur)
}

type ResidualFn<'a> = dyn Fn(&[f64]) -> Result<Vec<f64>, StepError> + 'a;

/// Banded finite-difference Jacobian of `f` using `2 bw + 1` (or more, on
/// periodic grids) column colors.
fn fd_jacobian(
    f: &ResidualFn,
    u: &[f64],
    f0: &[f64],
    bw: usize,
    periodic: bool,
) -> Result<BandMatrix, StepError> {
    let n = u.len();
    let mut colors = 2 * bw + 1;
    if periodic {
        while colors < n && !n.is_multiple_of(colors) {
            colors += 1;
        }
        colors = colors.min(n);
    }
    let mut jac = BandMatrix::zeros(n, bw, periodic)?;
    for c in 0..colors {
        let mut up = u.to_vec();
        let mut hs = vec![0.0; n];
        for j in (c..n).step_by(colors) {
            hs[j] = 1e-7 * u[j].abs().max(1e-3);
            up[j] += hs[j];
        }
        let fp = f(&up)?;
        for j in (c..n).step_by(colors) {
            for d in -(bw as isize)..=(bw as isize) {
                // Row i = j - d sees column j at offset d.
                let i = if periodic {
                    (j as isize - d).rem_euclid(n as isize) as usize
                } else {
                    let i = j as isize - d;
                    if i < 0 || i >= n as isize {
                        continue;
                    }
                    i as usize
                };
                jac.add(i, d, (fp[i] - f0[i]) / hs[j]);
            }
        }
    }
    Ok(jac)
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, &b| a.max(b.abs()))
}

/// Solves `v - a f(v) = b` by Newton with a finite-difference Jacobian.
fn implicit_solve(
    f: &ResidualFn,
    a: f64,
    b: &[f64],
    guess: Vec<f64>,
    bw: usize,
    periodic: bool,
) -> Result<Vec<f64>, StepError> {
    let mut v = guess;
    let mut last = f64::NAN;
    for _ in 0..40 {
        let fv = f(&v)?;
        let g: Vec<f64> = (0..v.len()).map(|i| v[i] - a * fv[i] - b[i]).collect();
        let scale = max_abs(&v).max(max_abs(b));
        last = max_abs(&g);
        if last <= 1e-13 * scale {
            return Ok(v);
        }
        let mut jac = fd_jacobian(f, &v, &fv, bw, periodic)?;
        jac.scale(-a);
        jac.shift(1.0);
        let neg: Vec<f64> = g.iter().map(|x| -x).collect();
        let delta = jac.solve(&neg)?;
        for (x, d) in v.iter_mut().zip(&delta) {
            *x += d;
        }
        if max_abs(&delta) <= 1e-13 * scale {
            return Ok(v);
        }
    }
    Err(StepError::Newton {
        stage: 0,
        residual: last,
        iterations: 40,
    })
}

/// TR-BDF2 (`gamma = 2 - sqrt 2`) for `u' = -L(u) grad E(u)`, where the
/// right-hand side has Jacobian half-bandwidth `bw`.
pub fn tr_bdf2(
    p: &dyn GradientFlowProblem,
    metric: &dyn MetricOperator,
    u0: &[f64],
    k: f64,
    n_steps: usize,
    bw: usize,
    periodic: bool,
) -> Result<Vec<f64>, StepError> {
    let g = 2.0 - std::f64::consts::SQRT_2;
    let f = |u: &[f64]| -> Result<Vec<f64>, StepError> {
        let lg = metric.assemble(u)?.apply_vec(&p.grad(u));
        Ok(lg.iter().map(|v| -v).collect())
    };
    let mut u = u0.to_vec();
    for _ in 0..n_steps {
        let fu = f(&u)?;
        let b1: Vec<f64> = u.iter().zip(&fu).map(|(x, y)| x + 0.5 * g * k * y).collect();
        let ug = implicit_solve(&f, 0.5 * g * k, &b1, b1.clone(), bw, periodic)?;
        let c1 = 1.0 / (g * (2.0 - g));
        let c0 = (1.0 - g).powi(2) / (g * (2.0 - g));
        let b2: Vec<f64> = ug.iter().zip(&u).map(|(a, b)| c1 * a - c0 * b).collect();
        u = implicit_solve(&f, (1.0 - g) / (2.0 - g) * k, &b2, ug, bw, periodic)?;
    }
    Ok(u)
}
