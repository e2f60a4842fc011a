//! Lower-triangular multistage tableaus and their plain-text file format.
//!
//! A tableau with `M` stages stores `gamma[m][i]` and (optionally)
//! `theta[m][i]` for `m = 0..M` and `i = 0..=m`, where row `m` describes
//! stage `m + 1` and column `i` refers to the stage value `U_i` (`U_0` is the
//! state at the start of the step).
//!
//! File format:
//!
//! ```text
//! # comments start with '#'
//! M 2
//! theta present
//! 5.0
//! -2.0 6.0
//! 1.0
//! 0.5 0.5
//! ```
//!
//! `theta absent` marks a fully implicit tableau, in which case only the
//! gamma rows follow.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

/// Allowed deviation of a theta row sum from one, covering three-decimal
/// rounding of printed coefficients.
pub const THETA_SUM_TOL: f64 = 2e-3;

/// Allowed violation of theta monotonicity for rounded coefficients.
pub const THETA_MONOTONE_TOL: f64 = 2e-3;

#[derive(Debug, Error)]
pub enum TableauError {
    #[error("malformed tableau: {0}")]
    Malformed(String),
    #[error("tableau is not lower triangular: row {row} has {found} entries, expected {expected}")]
    NotLowerTriangular {
        row: usize,
        found: usize,
        expected: usize,
    },
    #[error("nonpositive stage row sum {sum} in stage {stage}")]
    NonpositiveRowSum { stage: usize, sum: f64 },
    #[error("theta row sum {sum} in stage {stage} differs from 1")]
    ThetaRowSum { stage: usize, sum: f64 },
    #[error("negative theta entry {value} at ({stage}, {col})")]
    NegativeTheta { stage: usize, col: usize, value: f64 },
    #[error("theta not monotone at ({stage}, {col})")]
    ThetaNotMonotone { stage: usize, col: usize },
    #[error("unknown builtin tableau '{0}'")]
    UnknownBuiltin(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A lower-triangular multistage tableau.
#[derive(Debug, Clone, PartialEq)]
pub struct Tableau {
    pub label: String,
    pub claimed_order: u32,
    /// Claimed stability threshold on `k * Lambda`, when the source states one.
    pub claimed_threshold: Option<f64>,
    pub gamma: Vec<Vec<f64>>,
    pub theta: Option<Vec<Vec<f64>>>,
}

impl Tableau {
    /// Builds a tableau and checks its structural invariants.
    pub fn new(
        label: impl Into<String>,
        claimed_order: u32,
        gamma: Vec<Vec<f64>>,
        theta: Option<Vec<Vec<f64>>>,
    ) -> Result<Self, TableauError> {
        let t = Tableau {
            label: label.into(),
            claimed_order,
            claimed_threshold: None,
            gamma,
            theta,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.claimed_threshold = Some(threshold);
        self
    }

    pub fn stages(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_fully_implicit(&self) -> bool {
        self.theta.is_none()
    }

    /// `S_m`, the sum of gamma row `m` (0-based row index).
    pub fn row_sum(&self, m: usize) -> f64 {
        self.gamma[m].iter().sum()
    }

    pub fn validate(&self) -> Result<(), TableauError> {
        let m_total = self.gamma.len();
        if m_total == 0 {
            return Err(TableauError::Malformed("tableau has no stages".into()));
        }
        check_shape(&self.gamma)?;
        for (m, row) in self.gamma.iter().enumerate() {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(TableauError::Malformed(format!(
                    "non-finite gamma entry in stage {}",
                    m + 1
                )));
            }
            let sum: f64 = row.iter().sum();
            if sum <= 0.0 {
                return Err(TableauError::NonpositiveRowSum { stage: m + 1, sum });
            }
        }
        if let Some(theta) = &self.theta {
            if theta.len() != m_total {
                return Err(TableauError::Malformed(format!(
                    "{} theta rows for {} stages",
                    theta.len(),
                    m_total
                )));
            }
            check_shape(theta)?;
            for (m, row) in theta.iter().enumerate() {
                for (i, &v) in row.iter().enumerate() {
                    if !v.is_finite() {
                        return Err(TableauError::Malformed(format!(
                            "non-finite theta entry in stage {}",
                            m + 1
                        )));
                    }
                    if v < 0.0 {
                        return Err(TableauError::NegativeTheta {
                            stage: m + 1,
                            col: i,
                            value: v,
                        });
                    }
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > THETA_SUM_TOL {
                    return Err(TableauError::ThetaRowSum { stage: m + 1, sum });
                }
                if m > 0 {
                    for i in 0..m {
                        if row[i] > theta[m - 1][i] + THETA_MONOTONE_TOL {
                            return Err(TableauError::ThetaNotMonotone {
                                stage: m + 1,
                                col: i,
                            });
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Serializes to the text format with enough digits to round-trip exactly.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# {}", self.label);
        let _ = writeln!(s, "M {}", self.stages());
        let _ = writeln!(
            s,
            "theta {}",
            if self.theta.is_some() { "present" } else { "absent" }
        );
        let fmt_row = |row: &[f64]| {
            row.iter()
                .map(|v| format!("{v:.16e}"))
                .collect::<Vec<_>>()
                .join(" ")
        };
        for row in &self.gamma {
            let _ = writeln!(s, "{}", fmt_row(row));
        }
        if let Some(theta) = &self.theta {
            for row in theta {
                let _ = writeln!(s, "{}", fmt_row(row));
            }
        }
        s
    }

    /// Parses the text format. The label is taken from the argument; claimed
    /// order is unknown for files and set to 0.
    pub fn parse(text: &str, label: &str) -> Result<Self, TableauError> {
        let mut lines = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .filter(|l| !l.is_empty());

        let header = lines
            .next()
            .ok_or_else(|| TableauError::Malformed("empty file".into()))?;
        let m_total = match header.split_whitespace().collect::<Vec<_>>()[..] {
            ["M", n] => n
                .parse::<usize>()
                .map_err(|_| TableauError::Malformed(format!("bad stage count '{n}'")))?,
            _ => {
                return Err(TableauError::Malformed(format!(
                    "expected 'M <stages>', found '{header}'"
                )))
            }
        };
        if m_total == 0 {
            return Err(TableauError::Malformed("stage count must be positive".into()));
        }
        let theta_line = lines
            .next()
            .ok_or_else(|| TableauError::Malformed("missing theta line".into()))?;
        let has_theta = match theta_line.split_whitespace().collect::<Vec<_>>()[..] {
            ["theta", "present"] => true,
            ["theta", "absent"] => false,
            _ => {
                return Err(TableauError::Malformed(format!(
                    "expected 'theta present|absent', found '{theta_line}'"
                )))
            }
        };

        let mut read_rows = |what: &str| -> Result<Vec<Vec<f64>>, TableauError> {
            let mut rows = Vec::with_capacity(m_total);
            for m in 0..m_total {
                let line = lines.next().ok_or_else(|| {
                    TableauError::Malformed(format!("missing {what} row {}", m + 1))
                })?;
                let row = line
                    .split_whitespace()
                    .map(|tok| {
                        tok.parse::<f64>().map_err(|_| {
                            TableauError::Malformed(format!("bad number '{tok}' in {what} row {}", m + 1))
                        })
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                rows.push(row);
            }
            Ok(rows)
        };
        let gamma = read_rows("gamma")?;
        let theta = if has_theta { Some(read_rows("theta")?) } else { None };
        if let Some(extra) = lines.next() {
            return Err(TableauError::Malformed(format!("trailing content '{extra}'")));
        }
        Tableau::new(label, 0, gamma, theta)
    }

    pub fn load(path: &Path) -> Result<Self, TableauError> {
        let text = std::fs::read_to_string(path)?;
        let label = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "tableau".into());
        Self::parse(&text, &label)
    }

    pub fn save(&self, path: &Path) -> Result<(), TableauError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

fn check_shape(rows: &[Vec<f64>]) -> Result<(), TableauError> {
    for (m, row) in rows.iter().enumerate() {
        if row.len() != m + 1 {
            return Err(TableauError::NotLowerTriangular {
                row: m + 1,
                found: row.len(),
                expected: m + 1,
            });
        }
    }
    Ok(())
}

/// Names of all builtin tableaus.
pub const BUILTIN_NAMES: [&str; 9] = [
    "be", "si2", "si2_exact", "si3", "si1c", "si1125c", "fi2", "fi3", "fi1125",
];

/// Looks up a builtin tableau by name.
pub fn builtin(name: &str) -> Result<Tableau, TableauError> {
    let t = match name {
        "be" => Tableau::new("be", 1, vec![vec![1.0]], Some(vec![vec![1.0]]))?
            .with_threshold(1.0),
        "si2" => si2(),
        "si2_exact" => si2_exact(),
        "si3" => si3(),
        "si1c" => si1c(),
        "si1125c" => si1125c(),
        "fi2" => Tableau::new(
            "fi2",
            2,
            vec![vec![5.0], vec![-2.0, 6.0], vec![-2.0, 0.22, 6.29]],
            None,
        )?,
        "fi3" => Tableau::new(
            "fi3",
            3,
            vec![
                vec![11.17],
                vec![-7.5, 19.43],
                vec![-1.05, -4.75, 13.98],
                vec![1.8, 0.05, -7.83, 13.8],
                vec![6.2, -7.17, -1.33, 1.63, 11.52],
                vec![-2.83, 4.69, 2.46, -11.55, 6.68, 11.95],
            ],
            None,
        )?,
        "fi1125" => Tableau::new(
            "fi1125",
            1,
            vec![
                vec![6.17],
                vec![-0.5, 6.0],
                vec![-3.0, 2.0, 7.0],
                vec![-3.1, 0.0, 2.23, 7.40],
            ],
            None,
        )?,
        other => return Err(TableauError::UnknownBuiltin(other.to_string())),
    };
    Ok(t)
}

/// All builtin tableaus, in [`BUILTIN_NAMES`] order.
pub fn builtins() -> Vec<Tableau> {
    BUILTIN_NAMES
        .iter()
        .map(|n| builtin(n).expect("builtin tableaus are valid"))
        .collect()
}

fn si2() -> Tableau {
    Tableau::new(
        "si2",
        2,
        vec![
            vec![8.841],
            vec![-0.925, 5.360],
            vec![-4.443, 6.041, 0.950],
            vec![-3.288, 5.895, -0.351, 0.172],
            vec![-3.895, -0.335, 4.964, -1.722, 7.684],
        ],
        Some(vec![
            vec![1.0],
            vec![0.009, 0.991],
            vec![0.009, 0.991, 0.0],
            vec![0.0, 0.0, 0.0, 1.0],
            vec![0.0, 0.0, 0.0, 1.0, 0.0],
        ]),
    )
    .expect("si2 is valid")
    .with_threshold(3.0 / 872.0)
}

/// The rational form of `si2` from which the printed decimals were rounded.
fn si2_exact() -> Tableau {
    Tableau::new(
        "si2_exact",
        2,
        vec![
            vec![610.0 / 69.0],
            vec![-160.0 / 173.0, 595.0 / 111.0],
            vec![-311.0 / 70.0, 441.0 / 73.0, 189.0 / 199.0],
            vec![-217.0 / 66.0, 112.0 / 19.0, -27.0 / 77.0, 5.0 / 29.0],
            vec![
                -74.0 / 19.0,
                -57.0 / 170.0,
                4.963591448084725,
                -1.7224152906153223,
                7.683717031263265,
            ],
        ],
        Some(vec![
            vec![1.0],
            vec![1.0 / 115.0, 114.0 / 115.0],
            vec![1.0 / 115.0, 113.0 / 114.0, 1.0 / 13110.0],
            vec![0.0, 0.0, 0.0, 1.0],
            vec![0.0, 0.0, 0.0, 3545.0 / 3546.0, 1.0 / 3546.0],
        ]),
    )
    .expect("si2_exact is valid")
    .with_threshold(3.0 / 872.0)
}

fn si3() -> Tableau {
    Tableau::new(
        "si3",
        3,
        vec![
            vec![11.0],
            vec![2.1, 15.5],
            vec![1.4, 1.6, 17.0],
            vec![0.2, 1.6, -2.4, 18.1],
            vec![0.3, -8.5, 3.0, 9.6, 7.8],
            vec![-1.4, -5.9, -0.1, 2.0, 8.0, 4.1],
            vec![-4.0, -0.5, -0.4, -1.8, 5.1, 6.8, 0.9],
            vec![-9.2, 4.8, 2.7, -3.2, 2.5, 6.2, 2.5, 4.6],
            vec![-1.7, -3.6, -0.1, 1.3, 5.7, 3.4, -0.8, -0.8, 0.4],
            vec![-2.7, -3.5, 0.6, 1.4, 6.1, 3.5, -0.7, -0.2, -0.4, 0.5],
            vec![5.9, -4.8, -5.1, -3.1, 3.4, 6.6, -0.7, -5.2, 4.9, -0.8, 8.2],
            vec![7.1, 0.9, -3.1, -2.7, -5.8, -1.9, 0.6, -3.4, 4.3, -1.3, 9.2, 9.1],
            vec![3.8, 1.9, 2.7, 2.1, -7.5, -10.6, -1.2, 2.0, 0.7, -0.2, -0.2, 9.5, 12.8],
        ],
        Some(vec![
            vec![1.0],
            vec![0.049, 0.951],
            vec![0.024, 0.075, 0.901],
            vec![0.017, 0.042, 0.113, 0.829],
            vec![0.012, 0.029, 0.071, 0.386, 0.501],
            vec![0.01, 0.023, 0.06, 0.366, 0.457, 0.085],
            vec![0.007, 0.018, 0.05, 0.351, 0.437, 0.06, 0.076],
            vec![0.003, 0.005, 0.006, 0.008, 0.009, 0.011, 0.028, 0.929],
            vec![0.002, 0.002, 0.002, 0.002, 0.003, 0.004, 0.009, 0.029, 0.948],
            vec![0.0, 0.001, 0.001, 0.001, 0.001, 0.002, 0.004, 0.007, 0.011, 0.971],
            vec![0.0, 0.0, 0.001, 0.001, 0.001, 0.001, 0.003, 0.005, 0.008, 0.912, 0.069],
            vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.001, 0.002, 0.003, 0.005, 0.107, 0.025, 0.857],
            vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.001, 0.001, 0.002, 0.013, 0.007, 0.018, 0.958],
        ]),
    )
    .expect("si3 is valid")
    .with_threshold(18.0 / 28567.0)
}

/// Consistent first-order scheme whose intermediate value carries the
/// expansion needed by the third-order metric algorithm (`beta2 = beta3 = 1`).
fn si1c() -> Tableau {
    Tableau::new(
        "si1c",
        1,
        vec![vec![1.833], vec![0.556, 0.667], vec![1.030, -0.026, 0.159]],
        Some(vec![vec![1.0], vec![0.333, 0.667], vec![0.0, 0.0, 1.0]]),
    )
    .expect("si1c is valid")
}

/// Companion first-order scheme with `beta2 = beta3 = 11/25`.
fn si1125c() -> Tableau {
    Tableau::new(
        "si1125c",
        1,
        vec![
            vec![7.727],
            vec![0.594, 2.241],
            vec![3.056, -0.455, 0.636],
            vec![-1.571, 5.091, -1.063, 2.786],
            vec![-3.714, 3.1, -1.267, 1.545, 9.655],
            vec![-6.923, 5.1, -2.056, 3.471, 4.571, 4.033],
            vec![-2.467, -2.1, 0.009, -0.182, 0.660, 7.224, 9.428],
        ],
        Some(vec![
            vec![1.0],
            vec![0.708, 0.292],
            vec![0.013, 0.018, 0.969],
            vec![0.008, 0.012, 0.867, 0.113],
            vec![0.006, 0.009, 0.206, 0.056, 0.724],
            vec![0.0, 0.005, 0.05, 0.025, 0.053, 0.867],
            vec![0.0, 0.0, 0.015, 0.009, 0.015, 0.04, 0.920],
        ]),
    )
    .expect("si1125c is valid")
}
