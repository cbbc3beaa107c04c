//! Pass/fail check lists shared by the verifiers and the CLI.

use serde::Serialize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    /// The check does not apply (for instance a degenerate Fourier block); never fails a run.
    Undefined,
}

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub suite: Option<String>,
    pub name: String,
    pub status: Status,
    pub residual: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub location: Option<String>,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct Report {
    pub checks: Vec<Check>,
}

impl Report {
    pub fn new() -> Self {
        Report::default()
    }

    /// Records `residual` against `tol`; NaN fails.
    pub fn residual(&mut self, name: impl Into<String>, residual: f64, tol: f64, location: Option<String>) {
        let status = if residual <= tol { Status::Pass } else { Status::Fail };
        self.checks.push(Check { suite: None, name: name.into(), status, residual, location });
    }

    pub fn flag(&mut self, name: impl Into<String>, ok: bool, location: Option<String>) {
        let status = if ok { Status::Pass } else { Status::Fail };
        self.checks.push(Check { suite: None, name: name.into(), status, residual: if ok { 0.0 } else { 1.0 }, location });
    }

    pub fn undefined(&mut self, name: impl Into<String>, location: Option<String>) {
        self.checks.push(Check { suite: None, name: name.into(), status: Status::Undefined, residual: 0.0, location });
    }

    /// Tags every untagged check with `suite`.
    pub fn tagged(mut self, suite: &str) -> Report {
        for c in &mut self.checks {
            c.suite.get_or_insert_with(|| suite.to_string());
        }
        self
    }

    pub fn extend(&mut self, other: Report) {
        self.checks.extend(other.checks);
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.status != Status::Fail)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| c.status == Status::Fail)
    }

    pub fn max_residual(&self, prefix: &str) -> f64 {
        self.checks.iter().filter(|c| c.name.starts_with(prefix)).map(|c| c.residual).fold(0.0, f64::max)
    }
}
