//! Time-step refinement sweeps, reports and the tableau verification suite.

mod config;
mod report;

pub use config::{parse_steps, ConfigError, OracleChoice, RunConfig, SchemeName};
pub use report::{emit_csv, emit_table, write_field_csv, ConvergenceReport, Row, CSV_HEADER};

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use thiserror::Error;

use crate::integrator::{run, RunOptions, Stepper, TableauStepper};
use crate::metric::{Algorithm, MetricStepper, SchemeSet};
use crate::problems::{make_problem_with, Experiment, ProblemError, ProblemOptions};
use crate::verify::VerifyError;

mod verify_all;
pub use verify_all::{
    objective_draws, verify_all, VerifyAllReport, OBJECTIVE_REL_TOL, ORDER_TOL, POLISH_TOL,
    THRESHOLD_REL_TOL,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
    #[error("scheme '{scheme}' cannot run problem '{problem}': {reason}")]
    Incompatible { scheme: String, problem: String, reason: String },
    #[error("no exact solution for '{0}'")]
    NoExact(String),
    #[error("oracle computation failed: {0}")]
    Oracle(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Builds the stepper for `scheme` on `exp`. Fixed metrics use the tableau
/// directly; state-dependent metrics go through the metric algorithms.
pub fn build_stepper(
    exp: &Experiment,
    scheme: SchemeName,
    tableaus: &Arc<SchemeSet>,
) -> Result<Box<dyn Stepper>, HarnessError> {
    let incompatible = |reason: &str| HarnessError::Incompatible {
        scheme: scheme.name().into(),
        problem: exp.name.clone(),
        reason: reason.into(),
    };
    let fully_implicit_scheme = matches!(
        scheme,
        SchemeName::Fi2 | SchemeName::Fi3 | SchemeName::Step2Fi | SchemeName::Step3Fi
    );
    if fully_implicit_scheme && exp.problem.has_explicit_part() {
        return Err(incompatible("fully implicit schemes need E2 = 0"));
    }
    let algorithm = match scheme {
        SchemeName::Step2 => Some(Algorithm::Step2),
        SchemeName::Step3 => Some(Algorithm::Step3),
        SchemeName::Step2Fi => Some(Algorithm::Step2Fi),
        SchemeName::Step3Fi => Some(Algorithm::Step3Fi),
        _ if exp.metric.is_constant() => None,
        SchemeName::Si2 => Some(Algorithm::Step2),
        SchemeName::Si3 => Some(Algorithm::Step3),
        SchemeName::Fi2 => Some(Algorithm::Step2Fi),
        SchemeName::Fi3 => Some(Algorithm::Step3Fi),
        SchemeName::Be => return Err(incompatible("backward Euler needs a fixed metric")),
    };
    if let Some(a) = algorithm {
        return Ok(Box::new(MetricStepper::new(a, exp.metric.clone(), tableaus.clone())));
    }
    let t = &**tableaus;
    let tableau = match scheme {
        SchemeName::Be => t.be.clone(),
        SchemeName::Si2 => t.si2.clone(),
        SchemeName::Si3 => t.si3.clone(),
        SchemeName::Fi2 => t.fi2.clone(),
        SchemeName::Fi3 => t.fi3.clone(),
        _ => unreachable!("metric algorithms handled above"),
    };
    let metric = exp.metric.assemble(&exp.initial).map_err(ProblemError::from)?;
    Ok(Box::new(TableauStepper { tableau, metric: Some(metric) }))
}

/// Oracle used when the configuration says `auto`.
pub fn default_oracle(_exp: &Experiment, max_steps: usize) -> OracleChoice {
    OracleChoice::Reference { steps: Some((max_steps * 32).max(4096)), refine: 1, extrapolate: true }
}

/// Computes the comparison solution at the final time.
pub fn oracle_solution(
    exp: &Experiment,
    choice: OracleChoice,
    max_steps: usize,
) -> Result<Vec<f64>, HarnessError> {
    let choice = if choice == OracleChoice::Auto { default_oracle(exp, max_steps) } else { choice };
    match choice {
        OracleChoice::Auto => unreachable!("resolved above"),
        OracleChoice::Exact => exp
            .exact_at(exp.final_time)
            .ok_or_else(|| HarnessError::NoExact(exp.name.clone())),
        OracleChoice::Reference { steps, refine, extrapolate } => {
            let steps = steps.unwrap_or(max_steps * 32).max(2);
            let fine = exp.refined(refine.max(1))?;
            let run_ref = |n: usize| -> Result<Vec<f64>, HarnessError> {
                let u = fine.reference_run(n).map_err(|e| HarnessError::Oracle(e.to_string()))?;
                Ok(exp.grid.inject(&u, refine.max(1)))
            };
            if extrapolate {
                let (a, b) = rayon::join(|| run_ref(steps), || run_ref(steps / 2));
                let (a, b) = (a?, b?);
                Ok(a.iter().zip(&b).map(|(x, y)| (4.0 * x - y) / 3.0).collect())
            } else {
                run_ref(steps)
            }
        }
    }
}

/// Loads an experiment for `cfg`.
pub fn experiment_for(cfg: &RunConfig) -> Result<Experiment, HarnessError> {
    let opts = ProblemOptions {
        grid: cfg.grid,
        metric: cfg.metric,
        final_time: cfg.final_time,
        solver: Some(cfg.solver),
    };
    Ok(make_problem_with(&cfg.problem, &opts)?)
}

/// Runs the sweep in `cfg` against the configured oracle.
pub fn converge(cfg: &RunConfig) -> Result<ConvergenceReport, HarnessError> {
    cfg.validate()?;
    let exp = experiment_for(cfg)?;
    let max_steps = *cfg.steps.last().expect("validated nonempty");
    let oracle = if exp.final_time == 0.0 {
        exp.initial.clone()
    } else {
        oracle_solution(&exp, cfg.oracle, max_steps)?
    };
    converge_against(cfg, &exp, &oracle)
}

/// Runs the sweep in `cfg` on `exp` against a precomputed oracle.
pub fn converge_against(
    cfg: &RunConfig,
    exp: &Experiment,
    oracle: &[f64],
) -> Result<ConvergenceReport, HarnessError> {
    cfg.validate()?;
    let tableaus = Arc::new(if cfg.polish { SchemeSet::polished()? } else { SchemeSet::printed() });
    let stepper = build_stepper(exp, cfg.scheme, &tableaus)?;
    let opts = RunOptions { keep_states: false };
    let results: Vec<(Row, Vec<f64>, Option<Vec<f64>>)> = cfg
        .steps
        .par_iter()
        .map(|&n| {
            let start = Instant::now();
            let k = exp.final_time / n as f64;
            let outcome = if exp.final_time == 0.0 {
                Ok((exp.initial.clone(), vec![exp.problem.energy(&exp.initial)], 0))
            } else {
                run(&*stepper, &*exp.problem, &exp.initial, k, n, &opts)
                    .map(|tr| (tr.final_state, tr.energies, tr.violations.len()))
            };
            let wall = start.elapsed().as_secs_f64();
            match outcome {
                Ok((u, energies, violations)) => (
                    Row {
                        steps: n,
                        k,
                        l2_error: exp.grid.l2_error(&u, oracle),
                        observed_order: None,
                        energy_violations: violations,
                        wallclock_s: wall,
                        failure: None,
                    },
                    energies,
                    Some(u),
                ),
                Err(e) => (
                    Row {
                        steps: n,
                        k,
                        l2_error: f64::NAN,
                        observed_order: None,
                        energy_violations: 0,
                        wallclock_s: wall,
                        failure: Some(e.to_string()),
                    },
                    Vec::new(),
                    None,
                ),
            }
        })
        .collect();
    let mut report = ConvergenceReport {
        problem: exp.name.clone(),
        scheme: cfg.scheme.name().to_string(),
        polished: cfg.polish,
        rows: Vec::new(),
        energy_traces: Vec::new(),
        final_states: Vec::new(),
    };
    for (row, energies, state) in results {
        report.rows.push(row);
        report.energy_traces.push(energies);
        report.final_states.push(state);
    }
    report.fill_orders();
    if let Some(dir) = &cfg.out {
        write_outputs(&report, exp, oracle, dir, cfg.monitor)?;
    }
    Ok(report)
}

fn write_outputs(
    report: &ConvergenceReport,
    exp: &Experiment,
    oracle: &[f64],
    dir: &Path,
    monitor: bool,
) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir)?;
    let stem = format!("{}_{}", report.problem, report.scheme);
    emit_csv(report, &dir.join(format!("{stem}.csv")))?;
    std::fs::write(dir.join(format!("{stem}_table.txt")), emit_table(report))?;
    write_field_csv(&exp.grid, &exp.initial, &dir.join(format!("{}_initial.csv", report.problem)))?;
    write_field_csv(&exp.grid, oracle, &dir.join(format!("{}_oracle.csv", report.problem)))?;
    for (row, state) in report.rows.iter().zip(&report.final_states) {
        if let Some(u) = state {
            write_field_csv(&exp.grid, u, &dir.join(format!("{stem}_final_{}.csv", row.steps)))?;
        }
    }
    if monitor {
        for (row, trace) in report.rows.iter().zip(&report.energy_traces) {
            let mut s = String::from("step,t,energy\n");
            for (i, e) in trace.iter().enumerate() {
                s.push_str(&format!("{},{},{:e}\n", i, i as f64 * row.k, e));
            }
            std::fs::write(dir.join(format!("{stem}_energy_{}.csv", row.steps)), s)?;
        }
    }
    Ok(())
}
