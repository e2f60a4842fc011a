//! Checks every builtin tableau: stability threshold, order, polishing and
//! the stage-objective rewrite.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::integrator::GradientFlowProblem;
use crate::metric::substep_targets;
use crate::problems::flows::{PhaseField, Potential};
use crate::problems::grid::{Boundary, Grid};
use crate::tableau::{builtins, Tableau};
use crate::verify::{
    compute_beta, objective_equivalence_check, order_of, polish, polish_to, stability_threshold,
    Convention,
};

/// Relative tolerance for claimed thresholds.
pub const THRESHOLD_REL_TOL: f64 = 0.1;
/// Tolerance for `order_of` on printed coefficients.
pub const ORDER_TOL: f64 = 1e-2;
pub const POLISH_TOL: f64 = 1e-13;
pub const OBJECTIVE_REL_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct VerifyAllReport {
    pub text: String,
    pub failures: Vec<String>,
}

impl VerifyAllReport {
    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Relative objective-equivalence discrepancy for `draws` random stages of `t`.
pub fn objective_draws(t: &Tableau, draws: usize, seed: u64) -> f64 {
    let grid = Grid::new_1d(0.0, 1.0, 16, Boundary::Periodic);
    let p = PhaseField::new(grid.clone(), 1e-2, Potential::PlusMinusOne, (-1.2, 1.2));
    let lambda = p.lambda();
    let threshold = stability_threshold(t, 1.0).threshold;
    // The rewrite is algebraic and holds whenever S~ is nonzero, so tableaus
    // without a stable range are sampled at small k * Lambda.
    let k_lambda_max = if threshold.is_finite() && threshold > 0.0 { threshold.min(1.0) } else { 1e-3 };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let field = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect()
    };
    for _ in 0..draws {
        let m = rng.gen_range(1..=t.stages());
        let k = rng.gen_range(0.05..0.95) * k_lambda_max / lambda;
        let states: Vec<Vec<f64>> = (0..m).map(|_| field(&mut rng)).collect();
        let (ua, ub) = (field(&mut rng), field(&mut rng));
        let Ok(d) = objective_equivalence_check(t, m, k, lambda, &p, &states, &ua, &ub) else {
            return f64::INFINITY;
        };
        let scale = 1.0 + (p.energy(&ua).abs() + p.energy(&ub).abs())
            + states.iter().map(|s| p.inner(s, s)).sum::<f64>() / k;
        worst = worst.max(d / scale);
    }
    worst
}

/// Runs the verification suite over every builtin tableau.
pub fn verify_all(scan_max: f64) -> VerifyAllReport {
    let mut text = String::new();
    let mut failures = Vec::new();
    for t in builtins() {
        let conv = Convention::for_tableau(&t);
        let stab = stability_threshold(&t, scan_max);
        let _ = writeln!(text, "{stab}");
        if let Some(claimed) = t.claimed_threshold {
            let rel = (stab.threshold - claimed).abs() / claimed;
            let ok = rel <= THRESHOLD_REL_TOL;
            let _ = writeln!(
                text,
                "  threshold claimed {claimed:.6e}, computed {:.6e} ({})",
                stab.threshold,
                if ok { "ok" } else { "MISMATCH" }
            );
            if !ok {
                failures.push(format!("{}: threshold {:.6e} vs claimed {claimed:.6e}", t.label, stab.threshold));
            }
        }
        match order_of(&t, ORDER_TOL, conv) {
            Ok(p) => {
                let ok = p >= t.claimed_order;
                let _ = writeln!(text, "  order {p} (claimed {})", t.claimed_order);
                if !ok {
                    failures.push(format!("{}: order {p} below claimed {}", t.label, t.claimed_order));
                }
            }
            Err(e) => failures.push(format!("{}: {e}", t.label)),
        }
        let sub = substep_targets(&t.label);
        if let Some((targets, conv)) = sub {
            if let Ok(beta) = compute_beta(&t, conv) {
                let worst = targets.iter().fold(0.0f64, |a, &(r, v)| a.max((beta[r] - v).abs()));
                let _ = writeln!(text, "  sub-step conditions: worst residual {worst:.2e}");
                if worst > ORDER_TOL {
                    failures.push(format!("{}: sub-step residual {worst:.2e}", t.label));
                }
            }
        }
        let polished = match sub {
            Some((targets, conv)) => Some(polish_to(&t, targets, conv, scan_max)),
            None if t.claimed_order >= 2 => Some(polish(&t, t.claimed_order)),
            None => None,
        };
        if let Some(result) = polished {
            match result {
                Ok(rep) => {
                    let _ = writeln!(
                        text,
                        "  polished in {} iterations: residual {:.2e}, max gamma change {:.2e}, threshold {:.6e}",
                        rep.iterations, rep.residual, rep.max_gamma_change, rep.threshold_after
                    );
                    if rep.residual > POLISH_TOL {
                        failures.push(format!("{}: polish residual {:.2e}", t.label, rep.residual));
                    }
                }
                Err(e) => {
                    let _ = writeln!(text, "  polish failed: {e}");
                    failures.push(format!("{}: polish failed: {e}", t.label));
                }
            }
        }
        let worst = objective_draws(&t, 100, 0x1e44a);
        let _ = writeln!(text, "  stage objective rewrite: worst relative gap {worst:.2e}");
        if worst > OBJECTIVE_REL_TOL {
            failures.push(format!("{}: stage objective gap {worst:.2e}", t.label));
        }
    }
    if failures.is_empty() {
        text.push_str("all checks passed\n");
    } else {
        let _ = writeln!(text, "{} failure(s):", failures.len());
        for f in &failures {
            let _ = writeln!(text, "  {f}");
        }
    }
    VerifyAllReport { text, failures }
}
