//! Convergence reports and their CSV/table forms.

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use crate::problems::grid::Grid;

pub const CSV_HEADER: &str = "steps,k,l2_error,observed_order,energy_violations,wallclock_s";

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub steps: usize,
    pub k: f64,
    /// NaN when the run failed.
    pub l2_error: f64,
    /// Defined only between consecutive successful rows.
    pub observed_order: Option<f64>,
    pub energy_violations: usize,
    pub wallclock_s: f64,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, Default)]
pub struct ConvergenceReport {
    pub problem: String,
    pub scheme: String,
    pub polished: bool,
    pub rows: Vec<Row>,
    /// Energy after each step, one trace per row.
    pub energy_traces: Vec<Vec<f64>>,
    pub final_states: Vec<Option<Vec<f64>>>,
}

impl ConvergenceReport {
    /// Fills `observed_order` from consecutive error ratios.
    pub fn fill_orders(&mut self) {
        for i in 0..self.rows.len() {
            self.rows[i].observed_order = if i == 0 {
                None
            } else {
                let (a, b) = (&self.rows[i - 1], &self.rows[i]);
                let q = (a.l2_error / b.l2_error).log2() / (b.steps as f64 / a.steps as f64).log2();
                q.is_finite().then_some(q)
            };
        }
    }

    pub fn orders(&self) -> Vec<f64> {
        self.rows.iter().filter_map(|r| r.observed_order).collect()
    }

    pub fn final_order(&self) -> Option<f64> {
        self.rows.last().and_then(|r| r.observed_order)
    }

    pub fn total_violations(&self) -> usize {
        self.rows.iter().map(|r| r.energy_violations).sum()
    }

    pub fn failures(&self) -> impl Iterator<Item = &Row> {
        self.rows.iter().filter(|r| r.failure.is_some())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let err = if r.l2_error.is_nan() { "nan".to_string() } else { format!("{:.10e}", r.l2_error) };
            let order = match (r.observed_order, &r.failure) {
                (_, Some(_)) => "nan".to_string(),
                (Some(q), None) => format!("{q:.4}"),
                (None, None) => String::new(),
            };
            let _ = writeln!(
                s,
                "{},{:.10e},{},{},{},{:.3}",
                r.steps, r.k, err, order, r.energy_violations, r.wallclock_s
            );
        }
        s
    }
}

pub fn emit_csv(report: &ConvergenceReport, path: &Path) -> io::Result<()> {
    std::fs::write(path, report.to_csv())
}

/// Step counts across, error and order rows beneath.
pub fn emit_table(report: &ConvergenceReport) -> String {
    let label = format!(
        "{} / {}{}",
        report.problem,
        report.scheme,
        if report.polished { " (polished)" } else { "" }
    );
    let mut header = format!("{:<22}", "Steps");
    let mut errs = format!("{:<22}", "L2 error");
    let mut orders = format!("{:<22}", "Order");
    for r in &report.rows {
        let steps = if r.steps.is_power_of_two() {
            format!("2^{}", r.steps.trailing_zeros())
        } else {
            r.steps.to_string()
        };
        let _ = write!(header, "{steps:>12}");
        if r.l2_error.is_nan() {
            let _ = write!(errs, "{:>12}", "failed");
        } else {
            let _ = write!(errs, "{:>12.3e}", r.l2_error);
        }
        match r.observed_order {
            Some(q) => {
                let _ = write!(orders, "{q:>12.2}");
            }
            None => {
                let _ = write!(orders, "{:>12}", "");
            }
        }
    }
    let mut out = format!("{label}\n{}\n{}\n{}\n", header.trim_end(), errs.trim_end(), orders.trim_end());
    for r in report.failures() {
        let _ = writeln!(out, "steps {} failed: {}", r.steps, r.failure.as_deref().unwrap_or(""));
    }
    let v = report.total_violations();
    if v > 0 {
        let _ = writeln!(out, "energy increases: {v}");
    }
    out
}

/// Writes a field as `x,u` (1D) or `x,y,u` (2D) rows.
pub fn write_field_csv(grid: &Grid, u: &[f64], path: &Path) -> io::Result<()> {
    let mut s = String::from(if grid.dim == 1 { "x,u\n" } else { "x,y,u\n" });
    for (i, v) in u.iter().enumerate() {
        let (x, y) = grid.point(i);
        if grid.dim == 1 {
            let _ = writeln!(s, "{x:.10e},{v:.16e}");
        } else {
            let _ = writeln!(s, "{x:.10e},{y:.10e},{v:.16e}");
        }
    }
    std::fs::write(path, s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(steps: usize, err: f64) -> Row {
        Row {
            steps,
            k: 1.0 / steps as f64,
            l2_error: err,
            observed_order: None,
            energy_violations: 0,
            wallclock_s: 0.0,
            failure: None,
        }
    }

    #[test]
    fn orders_between_rows() {
        let mut r = ConvergenceReport {
            rows: vec![row(8, 1e-2), row(16, 2.5e-3), row(32, 6.25e-4)],
            ..Default::default()
        };
        r.fill_orders();
        assert_eq!(r.rows[0].observed_order, None);
        assert!((r.rows[1].observed_order.unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(r.orders().len(), 2);
    }

    #[test]
    fn failed_row_sentinel() {
        let mut bad = row(16, f64::NAN);
        bad.failure = Some("diverged".into());
        let mut r = ConvergenceReport { rows: vec![row(8, 1e-2), bad], ..Default::default() };
        r.fill_orders();
        let csv = r.to_csv();
        let last = csv.lines().nth(2).unwrap();
        assert_eq!(last.split(',').nth(2), Some("nan"));
        assert_eq!(last.split(',').nth(3), Some("nan"));
        assert!(emit_table(&r).contains("failed"));
    }
}
