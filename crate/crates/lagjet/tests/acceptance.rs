//! One pass/fail line per acceptance criterion.

use std::time::{Duration, Instant};

use lagjet::report::Report;
use lagjet::suites::{self, bundled, RunConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

struct Line {
    id: u32,
    title: &'static str,
    ok: bool,
    detail: String,
}

fn config(name: &str) -> RunConfig {
    let src = bundled().into_iter().find(|(n, _)| *n == name).unwrap().1;
    serde_json::from_str(src).unwrap()
}

fn lagrangian_configs() -> Vec<(&'static str, RunConfig)> {
    bundled().into_iter().map(|(n, _)| (n, config(n))).filter(|(_, c)| c.lagrangian.is_some()).collect()
}

fn summarize(rep: &Report) -> String {
    match rep.failures().next() {
        Some(c) => format!("first failure: {} (residual {:.3e}) at {}", c.name, c.residual, c.location.as_deref().unwrap_or("-")),
        None => format!("{} checks", rep.checks.len()),
    }
}

fn line(id: u32, title: &'static str, rep: &Report, limit: Option<(Duration, Duration)>) -> Line {
    let mut ok = rep.passed() && !rep.checks.is_empty();
    let mut detail = summarize(rep);
    if let Some((took, max)) = limit {
        ok &= took < max;
        detail = format!("{detail}; {:.2}s of {}s", took.as_secs_f64(), max.as_secs());
    }
    Line { id, title, ok, detail }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let t = Instant::now();
    let v = f();
    (v, t.elapsed())
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn acceptance() {
    let mut lines = Vec::new();

    let (rep, took) = timed(|| suites::moyal_associativity(8, 100, 1e-9, &mut rng(1)).unwrap());
    lines.push(line(1, "Moyal associativity", &rep, Some((took, Duration::from_secs(10)))));

    let rep = suites::poisson_leading_term(8, 100, 1e-9, &mut rng(2)).unwrap();
    lines.push(line(2, "Poisson leading term", &rep, None));

    let rep = suites::gaussian_rule(8, 1e-2).unwrap();
    lines.push(line(3, "Gaussian rule", &rep, None));

    let rep = suites::weil_composition(6, 50, 1e-8, &mut rng(4)).unwrap();
    lines.push(line(4, "Weil composition", &rep, None));

    let mut rep = suites::linear_maslov(200, 2, &mut rng(5)).unwrap();
    for name in ["linear_k1", "linear_km1", "linear_k2"] {
        rep.extend(suites::cover_maslov(config(name).lagrangian.as_ref().unwrap(), 6).unwrap());
    }
    lines.push(line(5, "Maslov cocycles", &rep, None));

    let atlas = config("curved_atlas").atlas.unwrap();
    let (rep, took) = timed(|| suites::cotangent_bundle(&atlas, 6, 3, 1e-8, &mut rng(6)).unwrap());
    lines.push(line(6, "Cotangent-Weyl bundle", &rep, Some((took, Duration::from_secs(30)))));

    let mut rep = Report::new();
    for (_, cfg) in lagrangian_configs() {
        rep.extend(suites::module_suite(cfg.lagrangian.as_ref().unwrap(), 6, 1e-8, &mut rng(7)).unwrap());
    }
    lines.push(line(7, "Module suite", &rep, None));

    let (rep, took) = timed(|| {
        let mut rep = Report::new();
        for name in ["linear_k1", "linear_km1", "linear_k2", "mixed_n2", "zero_section"] {
            rep.extend(suites::comparison_suite(config(name).lagrangian.as_ref().unwrap(), 6, 1e-8, &mut rng(8)).unwrap());
        }
        rep
    });
    let exact = rep.checks.iter().any(|c| c.name == "zero-section module equals the conormal model");
    let mut l = line(8, "Main-theorem suite", &rep, Some((took, Duration::from_secs(60))));
    l.ok &= exact;
    lines.push(l);

    let rep = suites::stack_suite(6, 10, 1e-8, &mut rng(9)).unwrap();
    lines.push(line(9, "Stack identities", &rep, None));

    for l in &lines {
        println!("criterion {}: {:<24} {}  ({})", l.id, l.title, if l.ok { "PASS" } else { "FAIL" }, l.detail);
    }
    let failed: Vec<u32> = lines.iter().filter(|l| !l.ok).map(|l| l.id).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
