//! Command-line front end: `lagjet <suite> [options]`.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::report::{Check, Report, Status};
use crate::suites::{bundled, canonical_suite, run_verification, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "lagjet", version, about = "Verification suites for formal jets of Lagrangian modules")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON run configuration.
    #[arg(long, global = true, conflicts_with = "example")]
    pub config: Option<PathBuf>,
    /// Use a bundled configuration (see `lagjet list`).
    #[arg(long, global = true)]
    pub example: Option<String>,
    /// Filtration cap N of the jets.
    #[arg(long, global = true)]
    pub cap: Option<u32>,
    /// Base-jet order M for connections.
    #[arg(long = "jet-order", global = true)]
    pub jet_order: Option<u32>,
    /// Residual tolerance for pass/fail.
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    /// Seed for the sampled checks.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Write the JSON report here instead of stdout.
    #[arg(long, global = true)]
    pub report: Option<PathBuf>,
    /// Suites for `all` (repeatable); overrides the configuration's list.
    #[arg(long, global = true)]
    pub suite: Vec<String>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Moyal associativity and the Poisson leading term.
    Star,
    /// Gaussian rule, Weil composition and Fourier self-duality.
    Weil,
    /// Linear and submanifold Maslov cocycles.
    Maslov,
    /// Cotangent Weyl bundle transitions, curvature and stack identities.
    Geometry,
    /// Module axioms, transition intertwining and the scalar cocycle.
    Module,
    /// Comparison with the zero-section model.
    Compare,
    /// Every suite, or those selected by --suite / the configuration.
    All,
    /// List the bundled configurations.
    List,
}

impl Command {
    fn suite(self) -> Option<&'static str> {
        match self {
            Command::Star => Some("star"),
            Command::Weil => Some("weil"),
            Command::Maslov => Some("maslov"),
            Command::Geometry => Some("geometry"),
            Command::Module => Some("module"),
            Command::Compare => Some("compare"),
            Command::All | Command::List => None,
        }
    }
}

#[derive(Serialize)]
struct Output<'a> {
    config: &'a str,
    seed: u64,
    passed: bool,
    checks: &'a [Check],
}

/// Exit codes.
pub const PASS: i32 = 0;
pub const FAIL: i32 = 1;
pub const CONFIG_ERROR: i32 = 2;

fn json_pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        out.push('/');
        match seg {
            Segment::Seq { index } => out.push_str(&index.to_string()),
            Segment::Map { key } => out.push_str(&key.replace('~', "~0").replace('/', "~1")),
            Segment::Enum { variant } => out.push_str(variant),
            Segment::Unknown => out.push('?'),
        }
    }
    out
}

/// Parses and validates a configuration; errors are (JSON pointer, message).
pub fn parse_config(src: &str) -> Result<RunConfig, (String, String)> {
    let de = &mut serde_json::Deserializer::from_str(src);
    let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| (json_pointer(e.path()), e.inner().to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

fn load(cli: &Cli) -> Result<RunConfig, String> {
    let mut cfg = match (&cli.config, &cli.example) {
        (Some(path), _) => {
            let src = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
            parse_config(&src).map_err(|(at, msg)| format!("{}: at {}: {msg}", path.display(), if at.is_empty() { "/" } else { &at }))?
        }
        (None, Some(name)) => {
            let src = bundled().into_iter().find(|(n, _)| n == name).map(|(_, s)| s).ok_or_else(|| format!("no bundled configuration {name:?}"))?;
            parse_config(src).map_err(|(at, msg)| format!("{name}: at {at}: {msg}"))?
        }
        (None, None) => RunConfig::default(),
    };
    if cli.cap.is_some() {
        cfg.cap = cli.cap;
    }
    if cli.jet_order.is_some() {
        cfg.jet_order = cli.jet_order;
    }
    if cli.tol.is_some() {
        cfg.tol = cli.tol;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    match cli.command.suite() {
        Some(s) => cfg.suites = Some(vec![s.to_string()]),
        None if !cli.suite.is_empty() => {
            if let Some(bad) = cli.suite.iter().find(|s| canonical_suite(s).is_none()) {
                return Err(format!("unknown suite {bad:?}"));
            }
            cfg.suites = Some(cli.suite.clone());
        }
        None => {}
    }
    cfg.validate().map_err(|(at, msg)| format!("at {at}: {msg}"))?;
    Ok(cfg)
}

fn summary(rep: &Report) -> String {
    let count = |s: Status| rep.checks.iter().filter(|c| c.status == s).count();
    format!("{} checks: {} passed, {} failed, {} undefined", rep.checks.len(), count(Status::Pass), count(Status::Fail), count(Status::Undefined))
}

/// Runs the CLI on `args`, writing the report to `out` (or --report) and
/// diagnostics to `err`; returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { CONFIG_ERROR } else { PASS };
            let _ = if e.use_stderr() { write!(err, "{e}") } else { write!(out, "{e}") };
            return code;
        }
    };
    if cli.command == Command::List {
        for (name, src) in bundled() {
            let title = parse_config(src).map(|c| c.name).unwrap_or_default();
            let _ = writeln!(out, "{name:14} {title}");
        }
        return PASS;
    }
    let cfg = match load(&cli) {
        Ok(c) => c,
        Err(msg) => {
            let _ = writeln!(err, "configuration error: {msg}");
            return CONFIG_ERROR;
        }
    };
    let rep = run_verification(&cfg);
    let body = Output { config: &cfg.name, seed: cfg.seed, passed: rep.passed(), checks: &rep.checks };
    let mut text = serde_json::to_string_pretty(&body).expect("report serializes");
    text.push('\n');
    match &cli.report {
        Some(path) => {
            if let Err(e) = std::fs::write(path, &text) {
                let _ = writeln!(err, "cannot write {}: {e}", path.display());
                return CONFIG_ERROR;
            }
        }
        None => {
            let _ = out.write_all(text.as_bytes());
        }
    }
    for c in rep.failures() {
        let _ = writeln!(err, "FAIL [{}] {} (residual {:.3e}) at {}", c.suite.as_deref().unwrap_or("-"), c.name, c.residual, c.location.as_deref().unwrap_or("-"));
    }
    let _ = writeln!(err, "{}", summary(&rep));
    if rep.passed() {
        PASS
    } else {
        FAIL
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schema_errors_carry_a_pointer() {
        let (at, _) = parse_config(r#"{"lagrangian": {"charts": [{"id": "a", "base_chart": "X", "n": "one"}]}}"#).unwrap_err();
        assert_eq!(at, "/lagrangian/charts/0/n");
        let (at, msg) = parse_config(r#"{"cap": 6, "bogus": 1}"#).unwrap_err();
        assert!(msg.contains("bogus"), "{at} {msg}");
    }

    #[test]
    fn overlapping_subdivision_is_a_semantic_error() {
        let src = r#"{"lagrangian": {"charts": [{"id": "a", "base_chart": "X", "n": 2, "x_params": [0, 0], "generating_function": "0"}], "overlaps": []}}"#;
        let (at, _) = parse_config(src).unwrap_err();
        assert_eq!(at, "/lagrangian/charts/0");
    }

    #[test]
    fn point_off_the_lagrangian_is_rejected() {
        let src = r#"{"lagrangian": {"charts": [
            {"id": "g", "base_chart": "X", "n": 1, "x_params": [0], "generating_function": "x^2/2"},
            {"id": "f", "base_chart": "X", "n": 1, "x_params": [], "generating_function": "-xi^2/2"}],
            "overlaps": [{"beta": "g", "gamma": "f", "kind": "subdivision", "point": ["1/2", "1/3"]}]}}"#;
        let (at, _) = parse_config(src).unwrap_err();
        assert_eq!(at, "/lagrangian/overlaps/0/point");
    }

    #[test]
    fn non_composing_atlas_names_the_triple() {
        let src = r#"{"atlas": {"dim": 1, "charts": ["a", "b"], "transitions": [
            {"alpha": "a", "beta": "b", "map": [{"num": "x", "den": "1 - x"}], "points": [[0.1, 1.0]]},
            {"alpha": "b", "beta": "a", "map": [{"num": "2*x", "den": "1 + x"}], "points": [[0.1, 1.0]]}]}}"#;
        let (at, msg) = parse_config(src).unwrap_err();
        assert_eq!(at, "/atlas");
        assert!(msg.contains("g_ab∘g_ba"), "{msg}");
    }
}
