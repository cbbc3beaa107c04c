//! Verification suites shared by the CLI and the acceptance tests.
//!
//! Each suite returns a [`Report`]; randomness comes from a ChaCha stream
//! derived from the run seed and the suite name, so a suite's output does not
//! depend on which other suites run alongside it.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{check_atlas, check_fedosov, random_weyl, stack_identities, Atlas, ConnectionData, StackData};
use crate::maslov::{check_linear_cocycle, evaluate_cover, parse_point, random_lagrangian, verify_cech_cocycle, Cover, OverlapKind};
use crate::module::{compare_zero_section, extract_scalar_cocycle, grading_compare, phase_from_generating, random_amplitude, subdivision_transfer, ChartModel};
use crate::report::Report;
use crate::series::legendre::stationary_phase;
use crate::series::{Series, Space, C64};
use crate::weil::{act_fourier, composition_residual, random_generator, random_weil_jet, GaussianJet};
use crate::weyl::WeylAlgebra;

pub const SUITES: [&str; 6] = ["star", "weil", "maslov", "geometry", "module", "compare"];

/// Run parameters; `None` falls back to each check's own default.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub cap: Option<u32>,
    #[serde(default)]
    pub jet_order: Option<u32>,
    #[serde(default)]
    pub tol: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    /// Suites to run; absent means all of them.
    #[serde(default)]
    pub suites: Option<Vec<String>>,
    #[serde(default)]
    pub lagrangian: Option<Cover>,
    #[serde(default)]
    pub atlas: Option<Atlas>,
}

impl RunConfig {
    /// Semantic checks; errors carry a JSON pointer to the offending value.
    pub fn validate(&self) -> std::result::Result<(), (String, String)> {
        if let Some(c) = self.cap {
            if c < 2 {
                return Err(("/cap".into(), format!("cap must be at least 2, got {c}")));
            }
        }
        if let Some(m) = self.jet_order {
            if m < 2 {
                return Err(("/jet_order".into(), format!("jet order must be at least 2, got {m}")));
            }
        }
        if let Some(t) = self.tol {
            if !(t > 0.0) {
                return Err(("/tol".into(), format!("tolerance must be positive, got {t}")));
            }
        }
        for (i, s) in self.suites.iter().flatten().enumerate() {
            if canonical_suite(s).is_none() {
                return Err((format!("/suites/{i}"), format!("unknown suite {s:?}")));
            }
        }
        if let Some(cover) = &self.lagrangian {
            let ids: BTreeSet<&str> = cover.charts.iter().map(|c| c.id.as_str()).collect();
            for (i, c) in cover.charts.iter().enumerate() {
                c.validate().map_err(|e| (format!("/lagrangian/charts/{i}"), e.to_string()))?;
            }
            if ids.len() != cover.charts.len() {
                return Err(("/lagrangian/charts".into(), "chart ids are not distinct".into()));
            }
            for (i, o) in cover.overlaps.iter().enumerate() {
                let at = format!("/lagrangian/overlaps/{i}");
                for id in [&o.beta, &o.gamma] {
                    if !ids.contains(id.as_str()) {
                        return Err((at.clone(), format!("unknown chart {id}")));
                    }
                }
                let chart = |id: &str| cover.charts.iter().find(|c| c.id == id).unwrap();
                let pb = parse_point(&o.point).map_err(|e| (format!("{at}/point"), e.to_string()))?;
                let pg = match &o.point_gamma {
                    Some(p) => parse_point(p).map_err(|e| (format!("{at}/point_gamma"), e.to_string()))?,
                    None => pb.clone(),
                };
                for (id, p, key) in [(&o.beta, &pb, "point"), (&o.gamma, &pg, if o.point_gamma.is_some() { "point_gamma" } else { "point" })] {
                    let ok = chart(id).on_lagrangian(p).map_err(|e| (format!("{at}/{key}"), e.to_string()))?;
                    if !ok {
                        return Err((format!("{at}/{key}"), format!("point is not on L in chart {id}")));
                    }
                }
            }
        }
        if let Some(atlas) = &self.atlas {
            atlas.validate(self.cap.unwrap_or(6), 1e-8).map_err(|e| ("/atlas".to_string(), e.to_string()))?;
        }
        Ok(())
    }

    pub fn selected_suites(&self) -> Vec<&'static str> {
        match &self.suites {
            None => SUITES.to_vec(),
            Some(v) => {
                let mut out: Vec<&'static str> = v.iter().filter_map(|s| canonical_suite(s)).flat_map(|s| if s == "all" { SUITES.to_vec() } else { vec![s] }).collect();
                out.dedup();
                out
            }
        }
    }
}

/// Canonical name of a suite (`moyal` is accepted for `star`).
pub fn canonical_suite(name: &str) -> Option<&'static str> {
    match name {
        "moyal" => Some("star"),
        "all" => Some("all"),
        _ => SUITES.iter().copied().find(|s| *s == name),
    }
}

fn rng_for(seed: u64, suite: &str) -> ChaCha8Rng {
    let salt = suite.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3));
    ChaCha8Rng::seed_from_u64(seed ^ salt)
}

/// Runs one suite; configuration errors surface as `Err`.
pub fn run_suite(name: &str, cfg: &RunConfig) -> Result<Report> {
    let suite = canonical_suite(name).ok_or_else(|| Error::Invalid(format!("unknown suite {name:?}")))?;
    let mut rng = rng_for(cfg.seed, suite);
    let rep = match suite {
        "star" => {
            let mut r = moyal_associativity(cfg.cap.unwrap_or(8), 100, cfg.tol.unwrap_or(1e-9), &mut rng)?;
            r.extend(poisson_leading_term(cfg.cap.unwrap_or(8), 100, cfg.tol.unwrap_or(1e-9), &mut rng)?);
            r
        }
        "weil" => {
            let mut r = gaussian_rule(cfg.cap.unwrap_or(8), 1e-2)?;
            r.extend(weil_composition(cfg.cap.unwrap_or(6), 50, cfg.tol.unwrap_or(1e-8), &mut rng)?);
            r
        }
        "maslov" => {
            let mut r = linear_maslov(200, 2, &mut rng)?;
            if let Some(cover) = &cfg.lagrangian {
                r.extend(cover_maslov(cover, cfg.cap.unwrap_or(6))?);
            }
            r
        }
        "geometry" => {
            let atlas = cfg.atlas.clone().unwrap_or_else(Atlas::two_chart);
            let cap = cfg.cap.unwrap_or(6);
            let mut r = cotangent_bundle(&atlas, cap, cfg.jet_order.unwrap_or(3), cfg.tol.unwrap_or(1e-8), &mut rng)?;
            r.extend(stack_suite(cap, 10, cfg.tol.unwrap_or(1e-8), &mut rng)?);
            r
        }
        "module" => match &cfg.lagrangian {
            Some(cover) => module_suite(cover, cfg.cap.unwrap_or(6), cfg.tol.unwrap_or(1e-8), &mut rng)?,
            None => missing_lagrangian(),
        },
        "compare" => match &cfg.lagrangian {
            Some(cover) => comparison_suite(cover, cfg.cap.unwrap_or(6), cfg.tol.unwrap_or(1e-8), &mut rng)?,
            None => missing_lagrangian(),
        },
        _ => unreachable!(),
    };
    Ok(rep.tagged(suite))
}

/// Runs the selected suites on worker threads and merges in suite order. A
/// suite that cannot run is recorded as a failed check carrying the error.
pub fn run_verification(cfg: &RunConfig) -> Report {
    let names = cfg.selected_suites();
    let results: Vec<Result<Report>> = std::thread::scope(|s| {
        let handles: Vec<_> = names.iter().map(|n| s.spawn(move || run_suite(n, cfg))).collect();
        handles.into_iter().map(|h| h.join().unwrap_or_else(|_| Err(Error::Invalid("suite worker panicked".into())))).collect()
    });
    let mut out = Report::new();
    for (name, r) in names.iter().zip(results) {
        match r {
            Ok(r) => out.extend(r),
            Err(e) => {
                let mut f = Report::new();
                f.flag("suite ran to completion", false, Some(e.to_string()));
                out.extend(f.tagged(name));
            }
        }
    }
    out
}

fn missing_lagrangian() -> Report {
    let mut r = Report::new();
    r.undefined("no Lagrangian in the configuration", None);
    r
}

// ---------------------------------------------------------------------------
// Moyal product

pub fn moyal_associativity(cap: u32, samples: usize, tol: f64, rng: &mut ChaCha8Rng) -> Result<Report> {
    let mut worst: f64 = 0.0;
    for i in 0..samples {
        let w = WeylAlgebra::new(1 + i % 2, cap);
        let f = random_weyl(&w, rng, 0, 4, 6, 0);
        let g = random_weyl(&w, rng, 0, 4, 6, 0);
        let h = random_weyl(&w, rng, 0, 4, 6, 0);
        let l = w.star(&w.star(&f, &g)?, &h)?;
        let r = w.star(&f, &w.star(&g, &h)?)?;
        worst = worst.max(l.max_abs_diff(&r));
    }
    let mut rep = Report::new();
    rep.residual("Moyal product is associative", worst, tol, Some(format!("{samples} random triples, n ≤ 2, cap {cap}")));
    Ok(rep)
}

/// {f, g} = Σ ∂_ξ f ∂_x g − ∂_x f ∂_ξ g from plain derivatives.
fn poisson_oracle(w: &WeylAlgebra, f: &Series, g: &Series) -> Series {
    let mut out = w.zero();
    for j in 0..w.n() {
        let (x, xi) = (w.x_idx(j), w.xi_idx(j));
        out = &out + &(&f.derivative(xi) * &g.derivative(x));
        out = &out - &(&f.derivative(x) * &g.derivative(xi));
    }
    out
}

pub fn poisson_leading_term(cap: u32, samples: usize, tol: f64, rng: &mut ChaCha8Rng) -> Result<Report> {
    let mut worst: f64 = 0.0;
    for i in 0..samples {
        let w = WeylAlgebra::new(1 + i % 2, cap);
        let f = random_weyl(&w, rng, 1, 4, 6, 0);
        let g = random_weyl(&w, rng, 1, 4, 6, 0);
        let h = w.h_idx();
        let b = w.bracket_over_ih(&f, &g)?.filter(|e| e[h] == 0);
        let p = poisson_oracle(&w, &f, &g).filter(|e| e[h] == 0);
        worst = worst.max(b.max_abs_diff(&p));
    }
    let mut rep = Report::new();
    rep.residual("(1/iℏ)[f,g] ≡ {f,g} mod ℏ", worst, tol, Some(format!("{samples} random pairs, n ≤ 2, cap {cap}")));
    Ok(rep)
}

// ---------------------------------------------------------------------------
// Gaussian rule and Weil representation

fn simpson_panel(f: &dyn Fn(f64) -> C64, a: f64, b: f64, fa: C64, fm: C64, fb: C64, whole: C64, tol: f64, depth: u32) -> C64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (fa + flm * 4.0 + fm) * ((m - a) / 6.0);
    let right = (fm + frm * 4.0 + fb) * ((b - m) / 6.0);
    let delta = left + right - whole;
    if depth == 0 || delta.norm() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_panel(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + simpson_panel(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}

/// Adaptive Simpson quadrature on equal panels of [a, b].
pub fn adaptive_simpson(f: &dyn Fn(f64) -> C64, a: f64, b: f64, panels: usize, tol: f64) -> C64 {
    let step = (b - a) / panels as f64;
    let mut acc = C64::new(0.0, 0.0);
    for k in 0..panels {
        let (lo, hi) = (a + k as f64 * step, a + (k + 1) as f64 * step);
        let (fa, fm, fb) = (f(lo), f(0.5 * (lo + hi)), f(hi));
        let whole = (fa + fm * 4.0 + fb) * (step / 6.0);
        acc += simpson_panel(f, lo, hi, fa, fm, fb, whole, tol / panels as f64, 40);
    }
    acc
}

/// Engine prefactor and ℏ-expansion of (2πℏ)^{-1/2}∫e^{iky²/2ℏ}e^{-y²}dy at η = 0.
fn gaussian_expansion(k: f64, cap: u32, hbar: f64) -> Result<(C64, C64)> {
    let sp = Space::new(["y", "h"], vec![1, 2], cap);
    let fsp = sp.recapped(cap + 2);
    let f = Series::var(&fsp, 0).pow(2).scale_re(k / 2.0);
    // e^{-y²} through the cap
    let mut a = Series::zero(&sp);
    let mut fact = 1.0;
    for m in 0..=cap / 2 {
        if m > 0 {
            fact *= m as f64;
        }
        let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
        a = &a + &Series::monomial(&sp, vec![2 * m as u16, 0], C64::new(sign / fact, 0.0));
    }
    let sp_res = stationary_phase(&f, &a)?;
    let mut sum = C64::new(0.0, 0.0);
    for j in 0..=cap / 2 {
        sum += sp_res.b.coeff(&[0, j as u16]) * hbar.powi(j as i32);
    }
    Ok((sp_res.prefactor, sp_res.prefactor * sum))
}

pub fn gaussian_rule(cap: u32, hbar: f64) -> Result<Report> {
    let mut rep = Report::new();
    let (mut branch, mut literal, mut quad): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for k in [1.0, -1.0, 2.0, -2.0, 3.0] {
        let (pre, value) = gaussian_expansion(k, cap, hbar)?;
        // ∏(−iλ)^{-1/2}, the value direct integration produces
        let expect = C64::new(0.0, -k).sqrt().inv();
        branch = branch.max((pre - expect).norm());
        // the principal branch of 1/√(ik) is the complex conjugate
        literal = literal.max((pre.conj() - C64::new(0.0, k).sqrt().inv()).norm());
        let integrand = |y: f64| C64::from_polar((-y * y).exp(), k * y * y / (2.0 * hbar));
        let numeric = adaptive_simpson(&integrand, -7.0, 7.0, 280, 1e-11) / (2.0 * PI * hbar).sqrt();
        quad = quad.max((numeric - value).norm());
    }
    let loc = Some("k ∈ {±1, ±2, 3}".to_string());
    rep.residual("Gaussian prefactor equals ∏(−iλ)^(-1/2)", branch, 1e-12, loc.clone());
    rep.residual("principal 1/√(ik) is the conjugate of the engine prefactor", literal, 1e-12, loc.clone());
    rep.residual("stationary phase matches adaptive quadrature at ℏ = 1e-2", quad, 1e-4, loc);
    Ok(rep)
}

pub fn weil_composition(cap: u32, samples: usize, tol: f64, rng: &mut ChaCha8Rng) -> Result<Report> {
    let mut worst: f64 = 0.0;
    let mut undefined = 0usize;
    let mut done = 0usize;
    while done < samples && undefined < 10 * samples {
        let n = 1 + (done + undefined) % 2;
        let jet = random_weil_jet(rng, n, cap);
        let word = vec![random_generator(rng, n), random_generator(rng, n)];
        match composition_residual(&word, &jet) {
            Ok((d, _)) => {
                worst = worst.max(d);
                done += 1;
            }
            Err(Error::Degenerate(_)) | Err(Error::Undefined { .. }) => undefined += 1,
            Err(e) => return Err(e),
        }
    }
    let mut rep = Report::new();
    rep.residual("composed action equals stepwise action up to the centre", worst, tol, Some(format!("{done} words, {undefined} undefined skipped, cap {cap}")));
    let mut dual: f64 = 0.0;
    for n in 1..=2 {
        let g = GaussianJet::standard(n, cap);
        let f = act_fourier(&(0..n).collect::<Vec<_>>(), &g)?;
        dual = dual.max((f.scalar.coeff(0) - 1.0).norm()).max(f.distance(&g));
    }
    rep.residual("standard Gaussian is Fourier self-dual", dual, 1e-9, Some("n = 1, 2".into()));
    Ok(rep)
}

// ---------------------------------------------------------------------------
// Maslov cocycles

pub fn linear_maslov(samples: usize, n: usize, rng: &mut ChaCha8Rng) -> Result<Report> {
    let mut failures = 0usize;
    let mut triples = 0usize;
    let mut first = None;
    for _ in 0..samples {
        let l = random_lagrangian(rng, n);
        match check_linear_cocycle(&l) {
            Ok((_, t)) => triples += t,
            Err(msg) => {
                failures += 1;
                first.get_or_insert(msg);
            }
        }
    }
    let mut rep = Report::new();
    let loc = first.unwrap_or_else(|| format!("{samples} subspaces of R^{}, {triples} chart triples", 2 * n));
    rep.residual("linear Maslov cocycle is exact", failures as f64, 0.0, Some(loc));
    Ok(rep)
}

/// Maslov values on the cover: cocycle identities, and on subdivision
/// overlaps the phase of the module transition against e^{iπc/2}.
pub fn cover_maslov(cover: &Cover, cap: u32) -> Result<Report> {
    let mut rep = Report::new();
    let (mu, _) = evaluate_cover(cover)?;
    let cech = verify_cech_cocycle(&mu, &cover.triples, None)?;
    rep.flag("Maslov values form a Čech cocycle", cech.is_cocycle, Some(format!("{} triples", cech.triples_checked)));
    let models = cover_models(cover, cap)?;
    for &(a, b) in &models.subdivision {
        let (ma, mb) = (&models.models[a], &models.models[b]);
        let loc = Some(format!("{}→{}", ma.id(), mb.id()));
        let sc = extract_scalar_cocycle(ma, mb)?;
        rep.flag("transition phase matches the Maslov cocycle", sc.phases_agree() && sc.mu2 == sc.maslov_mu2, loc.clone());
        let t = subdivision_transfer(ma, mb, &Series::one(ma.free_space()))?;
        let c0 = t.amplitude.constant_term();
        let expect = C64::from_polar(1.0, PI * sc.maslov_mu2 as f64 / 4.0);
        let r = if c0.norm() > 0.0 { (c0 / c0.norm() - expect).norm() } else { f64::INFINITY };
        rep.residual("μ-phase e^(iπc/2) equals the transition scalar phase", r, 1e-9, loc);
    }
    Ok(rep)
}

// ---------------------------------------------------------------------------
// cotangent bundles and stacks

pub fn cotangent_bundle(atlas: &Atlas, cap: u32, jet_order: u32, tol: f64, rng: &mut ChaCha8Rng) -> Result<Report> {
    let w = WeylAlgebra::new(atlas.dim, cap);
    let mut rep = check_atlas(&w, atlas, 3, rng, tol)?;
    let cw = ConnectionData::algebra(atlas.dim, cap, jet_order);
    let conn = ConnectionData::canonical(&cw, &vec![0.0; 2 * atlas.dim])?;
    let fed = check_fedosov(&conn)?;
    rep.extend(fed.to_report(tol));
    rep.residual("θ = ω/iℏ with vanishing higher θ_k", fed.omega_residual, tol, Some(format!("cap {cap}, jet order {jet_order}")));
    Ok(rep)
}

pub fn stack_suite(cap: u32, samples: usize, tol: f64, rng: &mut ChaCha8Rng) -> Result<Report> {
    let w = ConnectionData::algebra(1, cap, 3);
    let mut worst = [0.0f64; 5];
    for _ in 0..samples {
        let data = StackData::random(&w, &[0.0, 0.0], 4, rng)?;
        let fs: Vec<Series> = (0..2).map(|_| random_weyl(&w, rng, 1, 4, 4, 1)).collect();
        let r = stack_identities(&data, &fs, tol)?;
        for (slot, v) in worst.iter_mut().zip([r.intertwining, r.c_mod_hbar, r.horizontality, r.ad_identity, r.tetrahedron.unwrap_or(f64::INFINITY)]) {
            *slot = slot.max(v);
        }
    }
    let mut rep = Report::new();
    let loc = Some(format!("{samples} random G̃≥1 quadruples, cap {cap}"));
    for (name, v) in ["σ intertwine", "c ≡ 1 mod ℏ", "c horizontal", "Ad identity", "tetrahedron identity"].iter().zip(worst) {
        rep.residual(*name, v, tol, loc.clone());
    }
    Ok(rep)
}

// ---------------------------------------------------------------------------
// Lagrangian modules

/// Chart models at the overlap points of a cover.
pub struct CoverModels {
    pub models: Vec<ChartModel>,
    /// Index pairs of subdivision overlaps.
    pub subdivision: Vec<(usize, usize)>,
    /// Overlaps with a change of base coordinates (not modelled here).
    pub coordinate_change: Vec<(String, String)>,
}

pub fn cover_models(cover: &Cover, cap: u32) -> Result<CoverModels> {
    let charts: BTreeMap<&str, _> = cover.charts.iter().map(|c| (c.id.as_str(), c)).collect();
    let mut keys: Vec<(String, Vec<String>)> = Vec::new();
    let mut models = Vec::new();
    let mut index = |id: &str, p: &[String]| -> Result<usize> {
        if let Some(i) = keys.iter().position(|(k, q)| k == id && q == p) {
            return Ok(i);
        }
        let data = charts.get(id).ok_or_else(|| Error::Invalid(format!("unknown chart {id}")))?;
        let chart = phase_from_generating(data, &parse_point(p)?)?;
        models.push(ChartModel::new(&chart, cap)?);
        keys.push((id.to_string(), p.to_vec()));
        Ok(models.len() - 1)
    };
    let mut subdivision = Vec::new();
    let mut coordinate_change = Vec::new();
    for o in &cover.overlaps {
        match o.kind {
            OverlapKind::Subdivision => {
                let a = index(&o.beta, &o.point)?;
                let b = index(&o.gamma, o.point_gamma.as_deref().unwrap_or(&o.point))?;
                subdivision.push((a, b));
            }
            OverlapKind::CoordinateChange => coordinate_change.push((o.beta.clone(), o.gamma.clone())),
        }
    }
    Ok(CoverModels { models, subdivision, coordinate_change })
}

fn module_samples(m: &ChartModel, rng: &mut ChaCha8Rng, count: usize) -> Vec<Series> {
    (0..count).map(|_| random_amplitude(m.free_space(), rng, m.cap())).collect()
}

pub fn module_suite(cover: &Cover, cap: u32, tol: f64, rng: &mut ChaCha8Rng) -> Result<Report> {
    let cm = cover_models(cover, cap)?;
    let mut rep = Report::new();
    for m in &cm.models {
        let loc = Some(m.id().to_string());
        let mut unit: f64 = 0.0;
        let mut assoc: f64 = 0.0;
        for b in module_samples(m, rng, 2) {
            unit = unit.max(m.act(&m.w.one(), &b)?.max_abs_diff(&b));
            for _ in 0..3 {
                let f = random_weyl(&m.w, rng, 0, 3, 3, 0);
                let g = random_weyl(&m.w, rng, 0, 3, 3, 0);
                let lhs = m.act(&m.w.star(&f, &g)?, &b)?;
                let rhs = m.act(&f, &m.act(&g, &b)?)?;
                assoc = assoc.max(lhs.max_abs_diff(&rhs));
            }
        }
        rep.residual("unit acts as the identity", unit, tol, loc.clone());
        rep.residual("(f★g)·b = f·(g·b)", assoc, tol, loc);
    }
    for &(a, b) in &cm.subdivision {
        for (p, q) in [(a, b), (b, a)] {
            let (mp, mq) = (&cm.models[p], &cm.models[q]);
            let loc = Some(format!("{}→{}", mp.id(), mq.id()));
            let mut worst: f64 = 0.0;
            for s in module_samples(mp, rng, 2) {
                let x = random_weyl(&mp.w, rng, 0, 3, 3, 0);
                let lhs = subdivision_transfer(mp, mq, &mp.act(&x, &s)?)?.amplitude;
                let rhs = mq.act(&x, &subdivision_transfer(mp, mq, &s)?.amplitude)?;
                worst = worst.max(lhs.max_abs_diff(&rhs));
            }
            rep.residual("transition intertwines the actions", worst, tol, loc.clone());
            let sc = extract_scalar_cocycle(mp, mq)?;
            rep.residual("scalar cocycle g ≡ 1 at order ℏ⁰", sc.unit_residual, 1e-12, loc);
        }
    }
    for (b, g) in &cm.coordinate_change {
        rep.undefined("coordinate-change overlap (needs a base map)", Some(format!("{b}→{g}")));
    }
    Ok(rep)
}

pub fn comparison_suite(cover: &Cover, cap: u32, tol: f64, rng: &mut ChaCha8Rng) -> Result<Report> {
    let cm = cover_models(cover, cap)?;
    let mut rep = Report::new();
    if cm.models.is_empty() {
        rep.undefined("no subdivision overlaps to compare", None);
        return Ok(rep);
    }
    let samples = module_samples(&cm.models[0], rng, 2);
    rep.extend(compare_zero_section(&cm.models, &cm.subdivision, &samples, tol.min(1e-9), tol)?);
    for m in &cm.models {
        rep.extend(grading_compare(m, tol)?);
    }
    Ok(rep)
}

/// Bundled example configurations as (name, JSON).
pub fn bundled() -> Vec<(&'static str, &'static str)> {
    vec![
        ("zero_section", include_str!("../configs/zero_section.json")),
        ("linear_k1", include_str!("../configs/linear_k1.json")),
        ("linear_km1", include_str!("../configs/linear_km1.json")),
        ("linear_k2", include_str!("../configs/linear_k2.json")),
        ("mixed_n2", include_str!("../configs/mixed_n2.json")),
        ("curved_atlas", include_str!("../configs/curved_atlas.json")),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadrature_of_a_plain_gaussian() {
        // ∫e^{-y²} = √π
        let v = adaptive_simpson(&|y: f64| C64::new((-y * y).exp(), 0.0), -7.0, 7.0, 20, 1e-12);
        assert!((v.re - PI.sqrt()).abs() < 1e-10 && v.im.abs() < 1e-15);
    }

    #[test]
    fn gaussian_expansion_against_closed_form() {
        // (2πℏ)^{-1/2}∫e^{iky²/2ℏ − y²} = (2ℏ − ik)^{-1/2}·… = (1 − 2iℏ/k)^{-1/2}·prefactor
        for k in [1.0, -2.0] {
            let hbar = 1e-2;
            let (pre, v) = gaussian_expansion(k, 10, hbar).unwrap();
            let exact = pre * (C64::new(1.0, 0.0) + C64::new(0.0, 2.0 * hbar / k)).sqrt().inv();
            assert!((v - exact).norm() < 1e-9, "{v} vs {exact}");
        }
    }

    #[test]
    fn suite_names() {
        assert_eq!(canonical_suite("moyal"), Some("star"));
        assert_eq!(canonical_suite("nope"), None);
        let cfg = RunConfig { suites: Some(vec![]), ..Default::default() };
        assert!(cfg.selected_suites().is_empty());
        let cfg = RunConfig { suites: Some(vec!["all".into()]), ..Default::default() };
        assert_eq!(cfg.selected_suites().len(), SUITES.len());
        let cfg = RunConfig { cap: Some(1), ..Default::default() };
        assert_eq!(cfg.validate().unwrap_err().0, "/cap");
    }

    #[test]
    fn bundled_configs_validate() {
        for (name, src) in bundled() {
            let cfg: RunConfig = serde_json::from_str(src).unwrap_or_else(|e| panic!("{name}: {e}"));
            cfg.validate().unwrap_or_else(|e| panic!("{name}: {e:?}"));
        }
    }
}
