use std::fmt::Write as _;

use serde::Serialize;
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Pass,
    /// A hypothesis or precondition of the requested construction fails.
    Refused,
    Fail,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Pass => 0,
            Outcome::Refused => 2,
            Outcome::Fail => 1,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub value: Option<f64>,
    pub tol: Option<f64>,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl Check {
    /// `value <= tol`.
    pub fn at_most(name: impl Into<String>, value: f64, tol: f64) -> Check {
        Check { name: name.into(), value: Some(value), tol: Some(tol), pass: value <= tol, detail: None }
    }

    pub fn flag(name: impl Into<String>, pass: bool, detail: impl Into<String>) -> Check {
        Check { name: name.into(), value: None, tol: None, pass, detail: Some(detail.into()) }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub command: String,
    pub file: String,
    /// Effective settings, seeds and tolerances.
    pub config: Value,
    pub checks: Vec<Check>,
    pub verdict: Option<String>,
    pub outcome: Outcome,
    pub result: Value,
}

impl Report {
    pub fn new(command: &str, file: &str, config: Value) -> Report {
        Report {
            command: command.into(),
            file: file.into(),
            config,
            checks: Vec::new(),
            verdict: None,
            outcome: Outcome::Pass,
            result: Value::Null,
        }
    }

    /// Outcome from the checks, unless already refused.
    pub fn settle(mut self) -> Report {
        if self.outcome == Outcome::Pass && self.checks.iter().any(|c| !c.pass) {
            self.outcome = Outcome::Fail;
        }
        self
    }

    pub fn refuse(mut self, reason: String) -> Report {
        self.outcome = Outcome::Refused;
        self.checks.push(Check::flag("precondition", false, reason));
        self
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "command: {}", self.command);
        let _ = writeln!(out, "file: {}", self.file);
        for c in &self.checks {
            let status = if c.pass { "PASS" } else { "FAIL" };
            let _ = match (c.value, c.tol) {
                (Some(v), Some(t)) => writeln!(out, "  [{status}] {}: {v:.3e} (tol {t:.1e})", c.name),
                (Some(v), None) => writeln!(out, "  [{status}] {}: {v:.3e}", c.name),
                _ => writeln!(out, "  [{status}] {}", c.name),
            };
            if let Some(d) = &c.detail {
                let _ = writeln!(out, "         {d}");
            }
        }
        if let Some(v) = &self.verdict {
            let _ = writeln!(out, "verdict: {v}");
        }
        let _ = writeln!(out, "outcome: {}", serde_json::to_value(self.outcome).unwrap_or_default().as_str().unwrap_or(""));
        out
    }
}

/// Several experiment reports from one file.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub command: &'static str,
    pub file: String,
    pub experiments: Vec<(String, Report)>,
    pub outcome: Outcome,
}

impl RunReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (name, r) in &self.experiments {
            let _ = writeln!(out, "== {name}");
            out.push_str(&r.to_text());
        }
        out
    }
}

pub fn worst(outcomes: impl IntoIterator<Item = Outcome>) -> Outcome {
    outcomes.into_iter().max().unwrap_or(Outcome::Pass)
}
