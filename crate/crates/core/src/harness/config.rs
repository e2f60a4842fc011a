//! Run configuration and its flat `key = value` file form.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use thiserror::Error;

use crate::linalg::LinearSolver;
use crate::problems::MetricKind;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("unknown key '{0}'")]
    UnknownKey(String),
    #[error("invalid value for {key}: '{value}'")]
    BadValue { key: String, value: String },
    #[error("missing required key '{0}'")]
    Missing(&'static str),
    #[error("step counts must be strictly increasing and positive")]
    StepsNotIncreasing,
    #[error("at least two step counts are needed to estimate an order")]
    TooFewSteps,
    #[error("unknown scheme '{0}'")]
    UnknownScheme(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemeName {
    Be,
    Si2,
    Si3,
    Fi2,
    Fi3,
    Step2,
    Step3,
    Step2Fi,
    Step3Fi,
}

impl SchemeName {
    pub const ALL: [SchemeName; 9] = [
        SchemeName::Be,
        SchemeName::Si2,
        SchemeName::Si3,
        SchemeName::Fi2,
        SchemeName::Fi3,
        SchemeName::Step2,
        SchemeName::Step3,
        SchemeName::Step2Fi,
        SchemeName::Step3Fi,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SchemeName::Be => "be",
            SchemeName::Si2 => "si2",
            SchemeName::Si3 => "si3",
            SchemeName::Fi2 => "fi2",
            SchemeName::Fi3 => "fi3",
            SchemeName::Step2 => "step2",
            SchemeName::Step3 => "step3",
            SchemeName::Step2Fi => "step2_fi",
            SchemeName::Step3Fi => "step3_fi",
        }
    }

    pub fn order(self) -> u32 {
        match self {
            SchemeName::Be => 1,
            SchemeName::Si2 | SchemeName::Fi2 | SchemeName::Step2 | SchemeName::Step2Fi => 2,
            _ => 3,
        }
    }
}

impl fmt::Display for SchemeName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchemeName {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SchemeName::ALL
            .into_iter()
            .find(|n| n.name() == s)
            .ok_or_else(|| ConfigError::UnknownScheme(s.to_string()))
    }
}

/// Where the comparison solution comes from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OracleChoice {
    /// Per-experiment default.
    Auto,
    /// The closed-form solution.
    Exact,
    /// The independent reference scheme on a grid refined by `refine`.
    Reference {
        steps: Option<usize>,
        refine: usize,
        /// Combine runs at `steps` and `steps / 2` by Richardson extrapolation.
        extrapolate: bool,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub problem: String,
    pub scheme: SchemeName,
    pub steps: Vec<usize>,
    pub grid: Option<usize>,
    pub out: Option<PathBuf>,
    pub polish: bool,
    pub monitor: bool,
    pub metric: Option<MetricKind>,
    pub final_time: Option<f64>,
    pub oracle: OracleChoice,
    pub solver: LinearSolver,
}

impl RunConfig {
    pub fn new(problem: &str, scheme: SchemeName, steps: Vec<usize>) -> Self {
        RunConfig {
            problem: problem.to_string(),
            scheme,
            steps,
            grid: None,
            out: None,
            polish: false,
            monitor: true,
            metric: None,
            final_time: None,
            oracle: OracleChoice::Auto,
            solver: LinearSolver::Direct,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.steps.is_empty()
            || self.steps[0] == 0
            || self.steps.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(ConfigError::StepsNotIncreasing);
        }
        if self.steps.len() < 2 {
            return Err(ConfigError::TooFewSteps);
        }
        Ok(())
    }

    /// Parses a flat `key = value` file; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut problem = None;
        let mut scheme = None;
        let mut steps = None;
        let mut cfg = RunConfig::new("", SchemeName::Si2, Vec::new());
        let mut oracle_kind: Option<String> = None;
        let mut ref_steps = None;
        let mut refine = 1;
        let mut extrapolate = false;
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: ln + 1,
                msg: format!("expected key = value, found '{line}'"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            let bad = || ConfigError::BadValue { key: key.to_string(), value: value.to_string() };
            match key {
                "problem" => problem = Some(value.to_string()),
                "scheme" => scheme = Some(value.parse::<SchemeName>()?),
                "steps" => steps = Some(parse_steps(value).map_err(|_| bad())?),
                "grid" => cfg.grid = Some(value.parse().map_err(|_| bad())?),
                "out" => cfg.out = Some(PathBuf::from(value)),
                "polish" => cfg.polish = parse_bool(value).ok_or_else(bad)?,
                "monitor" => cfg.monitor = parse_bool(value).ok_or_else(bad)?,
                "metric" => cfg.metric = Some(value.parse().map_err(|_| bad())?),
                "final_time" => cfg.final_time = Some(value.parse().map_err(|_| bad())?),
                "solver" => {
                    cfg.solver = match value {
                        "direct" => LinearSolver::Direct,
                        "cg" => LinearSolver::Cg,
                        _ => return Err(bad()),
                    }
                }
                "oracle" => oracle_kind = Some(value.to_string()),
                "reference_steps" => ref_steps = Some(value.parse().map_err(|_| bad())?),
                "reference_refine" => refine = value.parse().map_err(|_| bad())?,
                "reference_extrapolate" => extrapolate = parse_bool(value).ok_or_else(bad)?,
                other => return Err(ConfigError::UnknownKey(other.to_string())),
            }
        }
        cfg.problem = problem.ok_or(ConfigError::Missing("problem"))?;
        cfg.scheme = scheme.ok_or(ConfigError::Missing("scheme"))?;
        cfg.steps = steps.ok_or(ConfigError::Missing("steps"))?;
        cfg.oracle = match oracle_kind.as_deref() {
            None | Some("auto") if ref_steps.is_none() => OracleChoice::Auto,
            Some("exact") => OracleChoice::Exact,
            None | Some("auto") | Some("reference") => OracleChoice::Reference {
                steps: ref_steps,
                refine,
                extrapolate,
            },
            Some(other) => {
                return Err(ConfigError::BadValue { key: "oracle".into(), value: other.into() })
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_bool(s: &str) -> Option<bool> {
    match s {
        "true" | "yes" | "1" | "on" => Some(true),
        "false" | "no" | "0" | "off" => Some(false),
        _ => None,
    }
}

fn parse_count(s: &str) -> Result<usize, ()> {
    let s = s.trim();
    if let Some(exp) = s.strip_prefix("2^") {
        let e: u32 = exp.trim().parse().map_err(|_| ())?;
        1usize.checked_shl(e).ok_or(())
    } else {
        s.parse().map_err(|_| ())
    }
}

/// Parses `2^a..2^b` (every power of two in between), or a comma list of
/// counts such as `16, 32, 2^6`.
pub fn parse_steps(s: &str) -> Result<Vec<usize>, ConfigError> {
    let bad = || ConfigError::BadValue { key: "steps".into(), value: s.to_string() };
    let v = if let Some((a, b)) = s.split_once("..") {
        let (a, b) = (parse_count(a).map_err(|_| bad())?, parse_count(b).map_err(|_| bad())?);
        if !a.is_power_of_two() || !b.is_power_of_two() || b < a {
            return Err(bad());
        }
        let mut v = Vec::new();
        let mut c = a;
        while c <= b {
            v.push(c);
            c *= 2;
        }
        v
    } else {
        s.split(',')
            .map(|t| parse_count(t).map_err(|_| bad()))
            .collect::<Result<Vec<_>, _>>()?
    };
    if v.is_empty() || v[0] == 0 || v.windows(2).any(|w| w[1] <= w[0]) {
        return Err(ConfigError::StepsNotIncreasing);
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn steps_ranges() {
        assert_eq!(parse_steps("2^3..2^7").unwrap(), vec![8, 16, 32, 64, 128]);
        assert_eq!(parse_steps("16, 32,2^6").unwrap(), vec![16, 32, 64]);
        assert!(parse_steps("2^4..2^2").is_err());
        assert!(matches!(parse_steps("32,16"), Err(ConfigError::StepsNotIncreasing)));
        assert!(parse_steps("2^x").is_err());
    }

    #[test]
    fn config_file() {
        let cfg = RunConfig::parse(
            "# heat\nproblem = heat_wass\nscheme = step3\nsteps = 2^3..2^5\npolish = true\ngrid = 513\n",
        )
        .unwrap();
        assert_eq!(cfg.problem, "heat_wass");
        assert_eq!(cfg.scheme, SchemeName::Step3);
        assert_eq!(cfg.steps, vec![8, 16, 32]);
        assert!(cfg.polish);
        assert_eq!(cfg.grid, Some(513));
        assert_eq!(cfg.oracle, OracleChoice::Auto);
    }

    #[test]
    fn config_errors() {
        assert!(matches!(RunConfig::parse("problem = x\n"), Err(ConfigError::Missing("scheme"))));
        assert!(matches!(
            RunConfig::parse("problem=x\nscheme=si2\nsteps=4\ncolour=red\n"),
            Err(ConfigError::UnknownKey(_))
        ));
        assert!(matches!(RunConfig::parse("just words"), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(matches!(
            RunConfig::parse("problem=x\nscheme=rk4\nsteps=4\n"),
            Err(ConfigError::UnknownScheme(_))
        ));
    }

    #[test]
    fn reference_oracle_keys() {
        let cfg = RunConfig::parse(
            "problem=ac2d\nscheme=si2\nsteps=2^6..2^7\nreference_steps=4096\nreference_extrapolate=yes\n",
        )
        .unwrap();
        assert_eq!(
            cfg.oracle,
            OracleChoice::Reference { steps: Some(4096), refine: 1, extrapolate: true }
        );
    }
}
