//! Jet bundles over coordinate atlases, the canonical connection on T*Rⁿ and
//! its lift, Fedosov checks, gauge transformations, compatibility with a
//! Lagrangian, and the stack identities.
//!
//! Connection components are stored as Lie payloads: Ã(∂_b) = (1/iℏ)P_b, so
//! that ∇_b f = ∂_b f + bracket_over_ih(P_b, f). Base coordinates enter as the
//! weight-0 parameters p1..p2n, measured from a base point (p_k ↔ x_k, p_{n+k} ↔ ξ_k).
//! Curvature payloads are Θ_ab = ∂_aP_b − ∂_bP_a + bracket_over_ih(P_a, P_b),
//! so θ = Θ/iℏ; ω = Σ dξ∧dx.

use std::collections::BTreeMap;
use std::ops::Neg;
use std::sync::Arc;

use nalgebra::DMatrix;
use num::rational::BigRational;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maslov::{LagrangianChartData, LagrangianFrame};
use crate::report::Report;
use crate::series::maps::{invert_map, jacobian, linear_part, series_matrix_inverse};
use crate::series::parse::{parse_poly, rat_to_f64};
use crate::series::{Series, Space, C64};
use crate::weil::Generator;
use crate::weyl::{x_name, xi_name, KElement, WeylAlgebra};

pub type RMat = DMatrix<f64>;

fn re(v: f64) -> C64 {
    C64::new(v, 0.0)
}

// ---------------------------------------------------------------------------
// base maps

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapComponent {
    pub num: String,
    #[serde(default = "unit_str")]
    pub den: String,
}

fn unit_str() -> String {
    "1".into()
}

/// A rational coordinate change, one numerator/denominator pair per component,
/// in the variables `x` (dimension 1) or `x1`, `x2`, ….
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BaseMap {
    pub components: Vec<MapComponent>,
}

impl BaseMap {
    pub fn polynomial(components: &[&str]) -> Self {
        BaseMap { components: components.iter().map(|c| MapComponent { num: c.to_string(), den: unit_str() }).collect() }
    }

    pub fn rational(pairs: &[(&str, &str)]) -> Self {
        BaseMap { components: pairs.iter().map(|(n, d)| MapComponent { num: n.to_string(), den: d.to_string() }).collect() }
    }

    pub fn identity(dim: usize) -> Self {
        let names: Vec<String> = (0..dim).map(|j| x_name(dim, j)).collect();
        BaseMap::polynomial(&names.iter().map(String::as_str).collect::<Vec<_>>())
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn names(&self) -> Vec<String> {
        let m = self.dim();
        (0..m).map(|j| x_name(m, j)).collect()
    }

    fn shifted(&self, src: &str, point: &[f64], space: &Arc<Space>) -> Result<Series> {
        let names = self.names();
        let poly = parse_poly(src, &names)?;
        let aux = Space::new(names.clone(), vec![1; names.len()], poly.degree().max(space.cap()));
        let by: Vec<C64> = point.iter().map(|&v| re(v)).collect();
        poly.to_series(&aux)?.shift(&by).embed_by_name(space)
    }

    /// g(point + x̂) in the variables of `space` carrying the map's names.
    pub fn taylor(&self, point: &[f64], space: &Arc<Space>) -> Result<Vec<Series>> {
        if point.len() != self.dim() {
            return Err(Error::Invalid(format!("base point has {} coordinates, map has {}", point.len(), self.dim())));
        }
        self.components
            .iter()
            .map(|c| {
                let num = self.shifted(&c.num, point, space)?;
                let den = self.shifted(&c.den, point, space)?;
                let inv = den.inverse().map_err(|_| Error::Singular(format!("denominator {} vanishes at {:?}", c.den, point)))?;
                Ok(&num * &inv)
            })
            .collect()
    }

    pub fn value(&self, point: &[f64]) -> Result<Vec<f64>> {
        let names = self.names();
        let sp = Space::new(names.clone(), vec![1; names.len()], 0);
        Ok(self.taylor(point, &sp)?.iter().map(|s| s.constant_term().re).collect())
    }
}

fn drop_constant(s: &Series) -> Series {
    let sp = s.space().clone();
    s.filter(|e| sp.weighted_degree(e) > 0 || sp.param_degree(e) > 0)
}

fn real_linear(g: &[Series]) -> RMat {
    linear_part(g).map(|v| v.re)
}

/// x̂ ↦ g(p + x̂) − g(p) as a formal map to weight `cap`.
pub fn jet_transition(map: &BaseMap, point: &[f64], cap: u32) -> Result<Vec<Series>> {
    let names = map.names();
    let sp = Space::new(names.clone(), vec![1; names.len()], cap);
    let g: Vec<Series> = map.taylor(point, &sp)?.iter().map(drop_constant).collect();
    let a = real_linear(&g);
    if a.determinant().abs() < 1e-12 {
        return Err(Error::Singular(format!("Jacobian of the transition at {point:?}")));
    }
    Ok(g)
}

// ---------------------------------------------------------------------------
// cotangent Weyl transitions

/// The transition of the cotangent jet bundle at (x_β, ξ^β):
/// x̂ ↦ g(x_β + x̂) − x_α, ξ̂ ↦ ᵗg'(x_β + x̂)⁻¹(ξ^β + ξ̂) − ξ^α with commutative
/// products, extended to W as a ★-automorphism. The lift is the product
/// M(ξ^β)·k·M(−ξ^α), where M(c) multiplies by e^{icx̂/ℏ} and k is the
/// half-density pullback f ↦ |det G'|^{1/2} f∘G.
#[derive(Clone, Debug)]
pub struct CotangentTransition {
    pub x_beta: Vec<f64>,
    pub xi_beta: Vec<f64>,
    pub x_alpha: Vec<f64>,
    pub xi_alpha: Vec<f64>,
    pub x_img: Vec<Series>,
    pub xi_img: Vec<Series>,
    /// g'(x_β).
    pub linear: RMat,
    /// K factor of the lift (q = 0 for the canonical lift).
    pub k: KElement,
    /// ∂_{x_β^k} of g'(x_β), one matrix per k.
    pub djac: Vec<RMat>,
    /// ∂_{x_β^k} G as maps in the operator space.
    pub dg: Vec<Vec<Series>>,
}

pub fn cotangent_weyl_transition(w: &WeylAlgebra, map: &BaseMap, x_beta: &[f64], xi_beta: &[f64]) -> Result<CotangentTransition> {
    let n = w.n();
    if w.nparams() != 0 {
        return Err(Error::Invalid("transitions are evaluated at numeric base points".into()));
    }
    if map.dim() != n || xi_beta.len() != n {
        return Err(Error::Invalid(format!("transition of dimension {} on a rank-{n} algebra", map.dim())));
    }
    let w1 = w.recapped(w.cap() + 1);
    let g1 = map.taylor(x_beta, w1.op_space())?;
    let x_alpha: Vec<f64> = g1.iter().map(|s| s.constant_term().re).collect();
    let gg1: Vec<Series> = g1.iter().map(drop_constant).collect();
    let jac1 = jacobian(&gg1);
    let op = w.op_space();
    let gmap: Vec<Series> = gg1.iter().map(|s| s.embed_by_name(op)).collect::<Result<_>>()?;
    let jac: Vec<Vec<Series>> = jac1.iter().map(|r| r.iter().map(|s| s.embed_by_name(op)).collect::<Result<Vec<_>>>()).collect::<Result<_>>()?;
    let a = RMat::from_fn(n, n, |i, j| jac[i][j].constant_term().re);
    if a.determinant().abs() < 1e-12 {
        return Err(Error::Singular(format!("Jacobian of the transition at {x_beta:?}")));
    }
    let ainv = a.clone().try_inverse().ok_or_else(|| Error::Singular("Jacobian".into()))?;
    let xi_b = DMatrix::from_column_slice(n, 1, xi_beta);
    let xi_alpha: Vec<f64> = (ainv.transpose() * &xi_b).iter().copied().collect();
    let jinv = series_matrix_inverse(&jac)?;
    let x_img: Vec<Series> = gmap.iter().map(|g| w.from_op(g)).collect::<Result<_>>()?;
    let mut xi_img = Vec::with_capacity(n);
    for i in 0..n {
        let mut s = Series::constant(w.space(), re(-xi_alpha[i]));
        for j in 0..n {
            let mom = &w.xi(j) + &Series::constant(w.space(), re(xi_beta[j]));
            s = &s + &(&w.from_op(&jinv[j][i])? * &mom);
        }
        xi_img.push(drop_constant(&s));
    }
    let djac = (0..n)
        .map(|k| {
            let e = op.unit_exp(k);
            RMat::from_fn(n, n, |i, j| jac[i][j].coeff(&e).re)
        })
        .collect();
    let dg = (0..n)
        .map(|k| (0..n).map(|j| drop_constant(&jac[j][k])).collect())
        .collect();
    Ok(CotangentTransition {
        x_beta: x_beta.to_vec(),
        xi_beta: xi_beta.to_vec(),
        x_alpha,
        xi_alpha,
        x_img,
        xi_img,
        linear: a,
        k: KElement { g: gmap, q: Series::zero(op) },
        djac,
        dg,
    })
}

impl CotangentTransition {
    pub fn apply(&self, w: &WeylAlgebra, f: &Series) -> Result<Series> {
        w.automorphism(&self.x_img, &self.xi_img, f)
    }

    /// k = k₁∘k_lin with k_lin f = |det a|^{1/2} f(a x̂) and k₁ tangent to the identity.
    pub fn factorization(&self) -> Result<(RMat, KElement)> {
        let n = self.linear.nrows();
        let ainv = self.linear.clone().try_inverse().ok_or_else(|| Error::Singular("Jacobian".into()))?;
        let g1 = (0..n)
            .map(|j| {
                let mut s = Series::zero(self.k.g[0].space());
                for l in 0..n {
                    s = &s + &self.k.g[l].scale_re(ainv[(j, l)]);
                }
                s
            })
            .collect();
        Ok((self.linear.clone(), KElement { g: g1, q: self.k.q.clone() }))
    }

    /// The Weil generator lifting the linear factor.
    pub fn linear_generator(&self) -> Result<Generator> {
        let ainv = self.linear.clone().try_inverse().ok_or_else(|| Error::Singular("Jacobian".into()))?;
        Ok(Generator::Linear((0..ainv.nrows()).map(|i| (0..ainv.ncols()).map(|j| ainv[(i, j)]).collect()).collect()))
    }
}

/// Payloads of the lifted canonical form −(ξ̂/iℏ)dx + (x̂/iℏ)dξ in base order (x.., ξ..).
pub fn canonical_lifted_form(w: &WeylAlgebra) -> Vec<Series> {
    let n = w.n();
    (0..n).map(|k| -w.xi(k)).chain((0..n).map(|k| w.x(k))).collect()
}

/// Residual of Ã_β = Ad(G̃)Ã_α − (dG̃)G̃⁻¹ at the transition's base point,
/// with both forms given by constant payloads in base order (x.., ξ..).
pub fn lifted_cocycle_residual(w: &WeylAlgebra, t: &CotangentTransition, form_alpha: &[Series], form_beta: &[Series]) -> Result<f64> {
    let n = w.n();
    let ainv_t = t.linear.clone().try_inverse().ok_or_else(|| Error::Singular("Jacobian".into()))?.transpose();
    let xi_b = DMatrix::from_column_slice(n, 1, &t.xi_beta);
    let ginv = invert_map(&t.k.g)?;
    let xhat = |c: usize| w.x(c);
    let shift_in: Series = (0..n).fold(w.zero(), |s, c| &s + &w.x(c).scale_re(-t.xi_beta[c]));
    let mut worst: f64 = 0.0;
    for b in 0..2 * n {
        let (dx_alpha, dxi_alpha, dxi_beta): (Vec<f64>, Vec<f64>, Vec<f64>) = if b < n {
            let d = -(&ainv_t * t.djac[b].transpose() * &ainv_t * &xi_b);
            ((0..n).map(|c| t.linear[(c, b)]).collect(), d.iter().copied().collect(), vec![0.0; n])
        } else {
            let k = b - n;
            (vec![0.0; n], (0..n).map(|c| ainv_t[(c, k)]).collect(), (0..n).map(|c| if c == k { 1.0 } else { 0.0 }).collect())
        };
        let mut pulled = w.zero();
        for c in 0..n {
            pulled = &pulled + &form_alpha[c].scale_re(dx_alpha[c]);
            pulled = &pulled + &form_alpha[n + c].scale_re(dxi_alpha[c]);
        }
        let moved = t.apply(w, &pulled)?;
        // (dG̃)G̃⁻¹ = dM·M⁻¹ + Ad(M)(dk·k⁻¹) + Ad(M k)(dM'·M'⁻¹)
        let mut log_d = w.zero();
        for c in 0..n {
            log_d = &log_d - &xhat(c).scale_re(dxi_beta[c]);
            log_d = &log_d + &w.from_op(&t.k.g[c])?.scale_re(dxi_alpha[c]);
        }
        if b < n {
            let mut v_xi = w.zero();
            for j in 0..n {
                let subs: Vec<(usize, Series)> = ginv.iter().cloned().enumerate().collect();
                let vj = t.dg[b][j].compose_partial(&subs)?;
                v_xi = &v_xi + &(&w.from_op(&vj)? * &w.xi(j));
            }
            let dk = t.k.conjugate(w, &v_xi)?;
            log_d = &log_d + &w.exp_ad(&shift_in, &dk)?;
        }
        let rhs = &moved - &log_d;
        worst = worst.max(rhs.max_abs_diff(&form_beta[b]));
    }
    Ok(worst)
}

/// Θ_ab = bracket_over_ih(P_a, P_b) for base-independent payloads.
pub fn constant_form_curvature(w: &WeylAlgebra, form: &[Series]) -> Result<BTreeMap<(usize, usize), Series>> {
    let mut out = BTreeMap::new();
    for a in 0..form.len() {
        for b in a + 1..form.len() {
            out.insert((a, b), w.bracket_over_ih(&form[a], &form[b])?);
        }
    }
    Ok(out)
}

/// Payload of iℏ·(1/iℏ)ω on the pair (a, b) of base coordinates (x.., ξ..).
pub fn omega_payload(n: usize, a: usize, b: usize) -> f64 {
    if a < n && b == a + n {
        -1.0
    } else if b < n && a == b + n {
        1.0
    } else {
        0.0
    }
}

// ---------------------------------------------------------------------------
// atlases

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AtlasTransition {
    pub alpha: String,
    pub beta: String,
    /// g_{αβ}: β coordinates to α coordinates.
    pub map: BaseMap,
    /// Points (x_β, ξ^β) of T*X where the transition is checked.
    #[serde(default)]
    pub points: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Atlas {
    pub dim: usize,
    pub charts: Vec<String>,
    pub transitions: Vec<AtlasTransition>,
}

impl Atlas {
    /// Three charts on (−∞, 1/2): y, x_a = y/(1 − y) and x_c with y = 2x_c.
    pub fn example() -> Atlas {
        let pts = |v: &[(f64, f64)]| v.iter().map(|&(x, p)| vec![x, p]).collect::<Vec<_>>();
        Atlas {
            dim: 1,
            charts: vec!["a".into(), "b".into(), "c".into()],
            transitions: vec![
                AtlasTransition { alpha: "a".into(), beta: "b".into(), map: BaseMap::rational(&[("x", "1 - x")]), points: pts(&[(0.0, 1.0), (0.2, -0.5), (-0.3, 2.0), (0.35, 0.7), (-1.0, 0.25)]) },
                AtlasTransition { alpha: "b".into(), beta: "c".into(), map: BaseMap::polynomial(&["2*x"]), points: pts(&[(0.0, 1.0), (0.1, -0.5), (-0.15, 2.0), (0.175, 0.7), (-0.5, 0.25)]) },
                AtlasTransition { alpha: "a".into(), beta: "c".into(), map: BaseMap::rational(&[("2*x", "1 - 2*x")]), points: pts(&[(0.05, 0.3), (-0.2, 1.5)]) },
            ],
        }
    }

    /// Two charts of R: x_a = x_b/(1 − x_b) and its inverse x_b = x_a/(1 + x_a).
    pub fn two_chart() -> Atlas {
        let pts = |v: &[(f64, f64)]| v.iter().map(|&(x, p)| vec![x, p]).collect::<Vec<_>>();
        Atlas {
            dim: 1,
            charts: vec!["a".into(), "b".into()],
            transitions: vec![
                AtlasTransition { alpha: "a".into(), beta: "b".into(), map: BaseMap::rational(&[("x", "1 - x")]), points: pts(&[(0.0, 1.0), (0.2, -0.5), (-0.3, 2.0), (0.35, 0.7), (-1.0, 0.25)]) },
                AtlasTransition { alpha: "b".into(), beta: "a".into(), map: BaseMap::rational(&[("x", "1 + x")]), points: pts(&[(0.0, 1.0), (0.25, -0.5), (-0.2, 2.0), (0.5, 0.7), (1.0, 0.25)]) },
            ],
        }
    }

    pub fn find(&self, alpha: &str, beta: &str) -> Option<&AtlasTransition> {
        self.transitions.iter().find(|t| t.alpha == alpha && t.beta == beta)
    }

    /// g_{αγ}, the identity when α = γ.
    pub fn map_between(&self, alpha: &str, gamma: &str) -> Option<BaseMap> {
        if alpha == gamma {
            return Some(BaseMap::identity(self.dim));
        }
        self.find(alpha, gamma).map(|t| t.map.clone())
    }

    /// Chart triples (α, β, γ) with αβ, βγ and αγ present; α = γ checks a round trip.
    pub fn triples(&self) -> Vec<(String, String, String)> {
        let mut out = Vec::new();
        for t in &self.transitions {
            for u in &self.transitions {
                if t.beta == u.alpha && self.map_between(&t.alpha, &u.beta).is_some() {
                    out.push((t.alpha.clone(), t.beta.clone(), u.beta.clone()));
                }
            }
        }
        out
    }

    /// Shape checks and the jet cocycle g_{αβ}∘g_{βγ} = g_{αγ} at the βγ points.
    pub fn validate(&self, cap: u32, tol: f64) -> Result<()> {
        for t in &self.transitions {
            for id in [&t.alpha, &t.beta] {
                if !self.charts.contains(id) {
                    return Err(Error::Invalid(format!("unknown chart {id}")));
                }
            }
            if t.map.dim() != self.dim {
                return Err(Error::Invalid(format!("transition {}{} has dimension {}", t.alpha, t.beta, t.map.dim())));
            }
            if let Some(p) = t.points.iter().find(|p| p.len() != 2 * self.dim) {
                return Err(Error::Invalid(format!("point {p:?} must list x then ξ")));
            }
        }
        for (a, b, c) in self.triples() {
            let ab = self.find(&a, &b).unwrap();
            let bc = self.find(&b, &c).unwrap();
            let ac = self.map_between(&a, &c).unwrap();
            for p in &bc.points {
                let xc = &p[..self.dim];
                let xb = bc.map.value(xc)?;
                let lhs = crate::series::maps::compose_maps(&jet_transition(&ab.map, &xb, cap)?, &jet_transition(&bc.map, xc, cap)?)?;
                let rhs = jet_transition(&ac, xc, cap)?;
                let r = lhs.iter().zip(&rhs).map(|(l, r)| l.max_abs_diff(r)).fold(0.0, f64::max);
                let va = ab.map.value(&xb)?;
                let vr = ac.value(xc)?;
                let r = va.iter().zip(&vr).map(|(u, v)| (u - v).abs()).fold(r, f64::max);
                if r > tol {
                    return Err(Error::Invalid(format!("g_{a}{b}∘g_{b}{c} ≠ g_{a}{c} at {xc:?} (residual {r:.2e})")));
                }
            }
        }
        Ok(())
    }
}

/// Random Weyl elements with real coefficients, used as test data.
pub fn random_weyl<R: Rng>(w: &WeylAlgebra, rng: &mut R, min_weight: u32, max_weight: u32, terms: usize, param_degree: u16) -> Series {
    let sp = w.space().clone();
    let n = w.n();
    let mut out = w.zero();
    let mut tries = 0;
    let mut added = 0;
    while added < terms && tries < 50 * terms {
        tries += 1;
        let mut e = sp.zero_exp();
        for k in 0..2 * n {
            e[k] = rng.gen_range(0..=max_weight as u16);
        }
        e[2 * n] = rng.gen_range(0..=(max_weight / 2) as u16);
        for k in 0..w.nparams() {
            e[w.param_idx(k)] = rng.gen_range(0..=param_degree);
        }
        let wt = sp.weighted_degree(&e);
        if wt < min_weight || wt > max_weight || !sp.admits(&e) {
            continue;
        }
        let v: f64 = rng.gen_range(-1.0..1.0);
        out = &out + &Series::monomial(&sp, e, re(v));
        added += 1;
    }
    out
}

/// Moyal preservation, the cotangent cocycle, the lifted cocycle with the
/// canonical forms, and the curvature of the canonical form in every chart.
pub fn check_atlas<R: Rng>(w: &WeylAlgebra, atlas: &Atlas, pairs: usize, rng: &mut R, tol: f64) -> Result<Report> {
    atlas.validate(w.cap(), tol)?;
    let n = w.n();
    if atlas.dim != n {
        return Err(Error::Invalid(format!("atlas of dimension {} on a rank-{n} algebra", atlas.dim)));
    }
    let mut rep = Report::new();
    let form = canonical_lifted_form(w);
    for t in &atlas.transitions {
        for p in &t.points {
            let ct = cotangent_weyl_transition(w, &t.map, &p[..n], &p[n..])?;
            let loc = Some(format!("{}{} at {:?}", t.alpha, t.beta, p));
            let mut worst: f64 = 0.0;
            for _ in 0..pairs {
                let f = random_weyl(w, rng, 1, w.cap().min(4), 4, 0);
                let g = random_weyl(w, rng, 1, w.cap().min(4), 4, 0);
                let lhs = ct.apply(w, &w.star(&f, &g)?)?;
                let rhs = w.star(&ct.apply(w, &f)?, &ct.apply(w, &g)?)?;
                worst = worst.max(lhs.max_abs_diff(&rhs));
            }
            rep.residual("transition preserves the Moyal product", worst, tol, loc.clone());
            let r = lifted_cocycle_residual(w, &ct, &form, &form)?;
            rep.residual("lifted cocycle", r, tol, loc);
        }
    }
    for (a, b, c) in atlas.triples() {
        let ab = atlas.find(&a, &b).unwrap();
        let bc = atlas.find(&b, &c).unwrap();
        let ac = atlas.map_between(&a, &c).unwrap();
        for p in &bc.points {
            let t_bc = cotangent_weyl_transition(w, &bc.map, &p[..n], &p[n..])?;
            let t_ab = cotangent_weyl_transition(w, &ab.map, &t_bc.x_alpha, &t_bc.xi_alpha)?;
            let t_ac = cotangent_weyl_transition(w, &ac, &p[..n], &p[n..])?;
            let mut worst: f64 = 0.0;
            for j in 0..n {
                worst = worst.max(t_bc.apply(w, &t_ab.x_img[j])?.max_abs_diff(&t_ac.x_img[j]));
                worst = worst.max(t_bc.apply(w, &t_ab.xi_img[j])?.max_abs_diff(&t_ac.xi_img[j]));
            }
            rep.residual("cotangent cocycle", worst, tol, Some(format!("{a}{b}{c} at {p:?}")));
        }
    }
    let theta = constant_form_curvature(w, &form)?;
    for chart in &atlas.charts {
        let mut flat: f64 = 0.0;
        let mut omega: f64 = 0.0;
        for ((a, b), th) in &theta {
            flat = flat.max(noncentral(w, th).max_abs());
            let expect = Series::constant(w.space(), re(omega_payload(n, *a, *b)));
            omega = omega.max(central(w, th).max_abs_diff(&expect));
        }
        rep.residual("canonical lift is flat", flat, tol, Some(chart.clone()));
        rep.residual("curvature equals ω/iℏ", omega, tol, Some(chart.clone()));
    }
    Ok(rep)
}

fn noncentral(w: &WeylAlgebra, s: &Series) -> Series {
    let n = w.n();
    s.filter(|e| e[..2 * n].iter().any(|&a| a > 0))
}

fn central(w: &WeylAlgebra, s: &Series) -> Series {
    let n = w.n();
    s.filter(|e| e[..2 * n].iter().all(|&a| a == 0))
}

/// Terms of fibre weight ≤ d.
fn fibre_jet(s: &Series, d: u32) -> Series {
    let sp = s.space().clone();
    s.filter(|e| sp.weighted_degree(e) <= d)
}

fn base_jet(s: &Series, d: u32) -> Series {
    let sp = s.space().clone();
    s.filter(|e| sp.param_degree(e) <= d)
}

// ---------------------------------------------------------------------------
// connections over T*Rⁿ with base jets

/// A lifted connection on T*Rⁿ near a base point: payloads P_b, b = 0..2n.
#[derive(Clone, Debug)]
pub struct ConnectionData {
    pub w: WeylAlgebra,
    pub base_point: Vec<f64>,
    pub components: Vec<Series>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConnectionJson {
    pub n: usize,
    pub cap: u32,
    pub base_order: u32,
    pub base_point: Vec<f64>,
    pub components: Vec<String>,
}

impl ConnectionData {
    /// Weyl algebra of rank n carrying the 2n base parameters to `base_order`.
    pub fn algebra(n: usize, cap: u32, base_order: u32) -> WeylAlgebra {
        WeylAlgebra::with_params(n, cap, 2 * n, base_order)
    }

    pub fn canonical(w: &WeylAlgebra, base_point: &[f64]) -> Result<Self> {
        let n = w.n();
        if w.nparams() != 2 * n || base_point.len() != 2 * n {
            return Err(Error::Invalid("connection data needs 2n base parameters and a base point in T*Rⁿ".into()));
        }
        Ok(ConnectionData { w: w.clone(), base_point: base_point.to_vec(), components: canonical_lifted_form(w) })
    }

    pub fn n(&self) -> usize {
        self.w.n()
    }

    pub fn base_order(&self) -> u32 {
        self.w.space().param_cap()
    }

    pub fn from_json(j: &ConnectionJson) -> Result<Self> {
        let w = Self::algebra(j.n, j.cap, j.base_order);
        if j.components.len() != 2 * j.n || j.base_point.len() != 2 * j.n {
            return Err(Error::Invalid("connection needs 2n components and a 2n-dimensional base point".into()));
        }
        let components = j.components.iter().map(|c| w.parse(c)).collect::<Result<_>>()?;
        Ok(ConnectionData { w, base_point: j.base_point.clone(), components })
    }

    pub fn to_json(&self) -> ConnectionJson {
        ConnectionJson {
            n: self.n(),
            cap: self.w.cap(),
            base_order: self.base_order(),
            base_point: self.base_point.clone(),
            components: self.components.iter().map(|c| c.to_string()).collect(),
        }
    }

    fn d(&self, s: &Series, b: usize) -> Series {
        s.derivative(self.w.param_idx(b))
    }

    /// ∇_b s = ∂_b s + bracket_over_ih(P_b, s) for every base direction.
    pub fn apply(&self, s: &Series) -> Result<Vec<Series>> {
        (0..2 * self.n()).map(|b| Ok(&self.d(s, b) + &self.w.bracket_over_ih(&self.components[b], s)?)).collect()
    }

    pub fn curvature(&self) -> Result<BTreeMap<(usize, usize), Series>> {
        let m = 2 * self.n();
        let mut out = BTreeMap::new();
        for a in 0..m {
            for b in a + 1..m {
                let p = &self.components;
                let th = &(&self.d(&p[b], a) - &self.d(&p[a], b)) + &self.w.bracket_over_ih(&p[a], &p[b])?;
                out.insert((a, b), th);
            }
        }
        Ok(out)
    }

    /// σ∇σ⁻¹ for σ = exp ad(S/iℏ), S of weight ≥ 3:
    /// P'_b = e^{ad}P_b − Σ_k ad^k(∂_bS)/(k+1)!.
    pub fn gauge(&self, s: &Series) -> Result<ConnectionData> {
        check_gauge_payload(&self.w, s)?;
        let bound = 4 * (self.w.cap() + self.base_order()) as usize + 8;
        let mut comps = Vec::with_capacity(self.components.len());
        for (b, p) in self.components.iter().enumerate() {
            let moved = self.w.exp_ad(s, p)?;
            let mut term = self.d(s, b);
            let mut sum = term.clone();
            let mut done = term.is_zero();
            for k in 1..=bound {
                if done {
                    break;
                }
                term = self.w.bracket_over_ih(s, &term)?.scale_re(1.0 / (k + 1) as f64);
                done = term.is_zero();
                sum = &sum + &term;
            }
            if !done {
                return Err(Error::NonTerminating(bound));
            }
            comps.push(&moved - &sum);
        }
        Ok(ConnectionData { w: self.w.clone(), base_point: self.base_point.clone(), components: comps })
    }

    /// Largest difference of components at base-jet order ≤ d and fibre
    /// weight ≤ cap − 1, the range a gauge transformation determines.
    pub fn distance(&self, other: &ConnectionData, d: u32) -> f64 {
        let top = self.w.cap() - 1;
        self.components.iter().zip(&other.components).map(|(a, b)| fibre_jet(&base_jet(&(a - b), d), top).max_abs()).fold(0.0, f64::max)
    }
}

fn check_gauge_payload(w: &WeylAlgebra, s: &Series) -> Result<()> {
    if s.iter().any(|(e, _)| w.space().weighted_degree(e) < 3) {
        return Err(Error::Invalid("gauge payload has terms below weight 3 (outside g̃≥1)".into()));
    }
    Ok(())
}

/// Which form of the canonical connection to apply to a section.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConnectionModel {
    /// Pullback of the jet connection: d − Σ ∂_{x̂_k} dx_k.
    JetPullback,
    /// (∂_x − ξ̂/iℏ)dx + (∂_ξ + x̂/iℏ)dξ acting by brackets.
    Lifted,
}

pub fn canonical_connection_apply(w: &WeylAlgebra, section: &Series, model: ConnectionModel) -> Result<Vec<Series>> {
    let n = w.n();
    match model {
        ConnectionModel::JetPullback => Ok((0..2 * n)
            .map(|b| {
                let ds = section.derivative(w.param_idx(b));
                if b < n {
                    &ds - &section.derivative(w.x_idx(b))
                } else {
                    ds
                }
            })
            .collect()),
        ConnectionModel::Lifted => ConnectionData { w: w.clone(), base_point: vec![0.0; 2 * n], components: canonical_lifted_form(w) }.apply(section),
    }
}

/// Jets F(p + ŷ) of a base function, with ŷ = (x̂, ξ̂) (`fibre`) or ŷ = (x̂, 0).
pub fn prolongation(w: &WeylAlgebra, f: &str, fibre: bool) -> Result<Series> {
    let n = w.n();
    let names: Vec<String> = (0..n).map(|j| x_name(n, j)).chain((0..n).map(|j| xi_name(n, j))).collect();
    let poly = parse_poly(f, &names)?;
    let aux = Space::with_options(names, vec![0; 2 * n], w.cap(), poly.degree(), w.space().eps());
    let src = poly.to_series(&aux)?;
    let subs: Vec<Series> = (0..2 * n)
        .map(|b| {
            let p = w.param(b);
            if b < n {
                &p + &w.x(b)
            } else if fibre {
                &p + &w.xi(b - n)
            } else {
                p
            }
        })
        .collect();
    Ok(src.substitute(&subs))
}

// ---------------------------------------------------------------------------
// Fedosov checks

#[derive(Clone, Debug, Serialize)]
pub struct FedosovReport {
    pub shape_ok: bool,
    pub a_minus1_residual: f64,
    pub flatness_residual: f64,
    pub omega_residual: f64,
    pub closed_residual: f64,
    /// Θ_ab = iℏθ(∂_a, ∂_b) as strings, at base-jet order ≤ base_order − 2.
    pub theta: BTreeMap<String, String>,
}

impl FedosovReport {
    pub fn to_report(&self, tol: f64) -> Report {
        let mut r = Report::new();
        r.flag("grading shape", self.shape_ok, None);
        r.residual("A₋₁ normalization", self.a_minus1_residual, tol, None);
        r.residual("flatness", self.flatness_residual, tol, None);
        r.residual("θ closed", self.closed_residual, tol, None);
        r
    }
}

pub fn check_fedosov(conn: &ConnectionData) -> Result<FedosovReport> {
    let w = &conn.w;
    let n = w.n();
    let m = conn.base_order();
    if m < 2 {
        return Err(Error::Invalid("curvature checks need base-jet order ≥ 2".into()));
    }
    let sp = w.space().clone();
    let shape_ok = conn.components.iter().all(|p| p.iter().all(|(e, _)| sp.weighted_degree(e) >= 1));
    let canon = canonical_lifted_form(w);
    let a_minus1_residual = conn.components.iter().zip(&canon).map(|(p, c)| p.homogeneous(1).max_abs_diff(c)).fold(0.0, f64::max);
    let curv = conn.curvature()?;
    let mut flatness_residual: f64 = 0.0;
    let mut omega_residual: f64 = 0.0;
    let mut theta = BTreeMap::new();
    // brackets against the weight-1 part lose the top fibre weight
    let top = w.cap() - 1;
    for ((a, b), th) in &curv {
        let th = fibre_jet(&base_jet(th, m - 2), top);
        flatness_residual = flatness_residual.max(noncentral(w, &th).max_abs());
        let c = central(w, &th);
        let expect = Series::constant(&sp, re(omega_payload(n, *a, *b)));
        omega_residual = omega_residual.max(c.max_abs_diff(&expect));
        theta.insert(format!("{a},{b}"), c.to_string());
    }
    let mut closed_residual: f64 = 0.0;
    if m >= 3 {
        let dim = 2 * n;
        for a in 0..dim {
            for b in a + 1..dim {
                for c in b + 1..dim {
                    let d = |s: &Series, k: usize| s.derivative(w.param_idx(k));
                    let s = &(&d(&curv[&(b, c)], a) - &d(&curv[&(a, c)], b)) + &d(&curv[&(a, b)], c);
                    closed_residual = closed_residual.max(fibre_jet(&base_jet(&central(w, &s), m - 3), top).max_abs());
                }
            }
        }
    }
    Ok(FedosovReport { shape_ok, a_minus1_residual, flatness_residual, omega_residual, closed_residual, theta })
}

// ---------------------------------------------------------------------------
// compatibility with a Lagrangian

fn to_q(v: f64) -> Result<BigRational> {
    BigRational::from_float(v).ok_or_else(|| Error::Invalid(format!("non-finite coordinate {v}")))
}

/// Linear symplectic coordinates adapted to T_pL: the last n rows of `m` are
/// generators ℓ_r of T_L^⊥, the first n complete them canonically.
struct IdealFrame {
    m: RMat,
    minv: RMat,
    chart: Vec<usize>,
    cochart: Vec<usize>,
}

impl IdealFrame {
    fn new(frame: &LagrangianFrame) -> Result<Self> {
        let n = frame.n;
        let s = frame.hessian();
        let chart: Vec<usize> = frame.chart.iter().copied().collect();
        let cochart: Vec<usize> = (0..n).filter(|i| !frame.chart.contains(i)).collect();
        let k = chart.len();
        // p̂_s as a coefficient vector over (x̂, ξ̂)
        let phat = |s_: usize| if s_ < k { chart[s_] } else { n + cochart[s_ - k] };
        let mut m = RMat::zeros(2 * n, 2 * n);
        for r in 0..n {
            let sign = if r < k { -1.0 } else { 1.0 };
            let (xrow, lead) = if r < k { (chart[r], n + chart[r]) } else { (n + cochart[r - k], cochart[r - k]) };
            // x̂'_j = x̂_j (j ∈ K), −ξ̂_j (j ∉ K)
            let j = if r < k { chart[r] } else { cochart[r - k] };
            m[(j, xrow)] = if r < k { 1.0 } else { -1.0 };
            m[(n + j, lead)] += 1.0;
            for s_ in 0..n {
                m[(n + j, phat(s_))] += sign * rat_to_f64(&s[r][s_]);
            }
        }
        let minv = m.clone().try_inverse().ok_or_else(|| Error::Singular("adapted frame".into()))?;
        Ok(IdealFrame { m, minv, chart, cochart })
    }

    fn row_series(w: &WeylAlgebra, row: &[f64]) -> Series {
        let n = w.n();
        let mut s = w.zero();
        for (i, &c) in row.iter().enumerate() {
            if c != 0.0 {
                let v = if i < n { w.x(i) } else { w.xi(i - n) };
                s = &s + &v.scale_re(c);
            }
        }
        s
    }

    /// ℓ for coordinate j: ξ̂'_j.
    fn generator(&self, w: &WeylAlgebra, j: usize) -> Series {
        let n = w.n();
        let row: Vec<f64> = (0..2 * n).map(|i| self.m[(n + j, i)]).collect();
        Self::row_series(w, &row)
    }

    /// Residual of f modulo the left ideal W★(ℓ₁..ℓₙ).
    fn ideal_residual(&self, w: &WeylAlgebra, f: &Series) -> Result<f64> {
        let n = w.n();
        let img = |i: usize| Self::row_series(w, &(0..2 * n).map(|k| self.minv[(i, k)]).collect::<Vec<_>>());
        let xs: Vec<Series> = (0..n).map(img).collect();
        let xis: Vec<Series> = (n..2 * n).map(img).collect();
        let pulled = w.automorphism(&xs, &xis, f)?;
        Ok(w.apply(&pulled, &Series::one(w.op_space()))?.max_abs())
    }
}

fn chart_frame_at(chart: &LagrangianChartData, point: &[f64]) -> Result<(Vec<BigRational>, LagrangianFrame)> {
    let pq: Vec<BigRational> = point.iter().map(|&v| to_q(v)).collect::<Result<_>>()?;
    if !chart.on_lagrangian(&pq)? {
        return Err(Error::Invalid(format!("base point {point:?} is not on L in chart {}", chart.id)));
    }
    let frame = chart.tangent_frame(&pq)?;
    Ok((pq, frame))
}

/// Residual of `f` modulo W·T_L^⊥ at a point of L.
pub fn ideal_residual(w: &WeylAlgebra, chart: &LagrangianChartData, point: &[f64], f: &Series) -> Result<f64> {
    if chart.n != w.n() {
        return Err(Error::Invalid("Lagrangian chart and algebra have different ranks".into()));
    }
    let (_, frame) = chart_frame_at(chart, point)?;
    IdealFrame::new(&frame)?.ideal_residual(w, f)
}

#[derive(Clone, Debug, Serialize)]
pub struct LCompatReport {
    /// (tangent direction, generator, residual) for every failing pair.
    pub failures: Vec<(usize, usize, f64)>,
    pub max_residual: f64,
}

/// ∇_v ℓ ∈ W·T_L^⊥ for tangent directions v of L at the base point and
/// generators ℓ of T_L^⊥.
pub fn check_l_compatible(conn: &ConnectionData, chart: &LagrangianChartData, tol: f64) -> Result<LCompatReport> {
    let w = &conn.w;
    let n = w.n();
    if chart.n != n {
        return Err(Error::Invalid("connection and Lagrangian live over different base dimensions".into()));
    }
    let (pq, frame) = chart_frame_at(chart, &conn.base_point)?;
    let ideal = IdealFrame::new(&frame)?;
    let third = chart.third_derivatives(&pq)?;
    let tangent = frame.to_subspace();
    let k = ideal.chart.len();
    let p0: Vec<Series> = conn.components.iter().map(|p| base_jet(p, 0)).collect();
    let mut failures = Vec::new();
    let mut max_residual: f64 = 0.0;
    for mdir in 0..n {
        let v: Vec<f64> = (0..2 * n).map(|b| rat_to_f64(&tangent.basis[b][mdir])).collect();
        for r in 0..n {
            let j = if r < k { ideal.chart[r] } else { ideal.cochart[r - k] };
            let ell = ideal.generator(w, j);
            let sign = if r < k { -1.0 } else { 1.0 };
            let mut dl = vec![0.0; 2 * n];
            for s_ in 0..n {
                let col = if s_ < k { ideal.chart[s_] } else { n + ideal.cochart[s_ - k] };
                dl[col] += sign * rat_to_f64(&third[mdir][r][s_]);
            }
            let mut out = IdealFrame::row_series(w, &dl);
            for (b, vb) in v.iter().enumerate() {
                if *vb != 0.0 {
                    out = &out + &w.bracket_over_ih(&p0[b], &ell)?.scale_re(*vb);
                }
            }
            let res = ideal.ideal_residual(w, &out)?;
            max_residual = max_residual.max(res);
            if res > tol {
                failures.push((mdir, r, res));
            }
        }
    }
    Ok(LCompatReport { failures, max_residual })
}

// ---------------------------------------------------------------------------
// group law and the stack identities

const BCH_K: [f64; 5] = [1.0 / 12.0, -1.0 / 720.0, 1.0 / 30240.0, -1.0 / 1209600.0, 1.0 / 47900160.0];

fn compositions(total: usize, parts: usize) -> Vec<Vec<usize>> {
    if parts == 0 {
        return if total == 0 { vec![Vec::new()] } else { Vec::new() };
    }
    let mut out = Vec::new();
    for first in 1..=total.saturating_sub(parts - 1) {
        for mut rest in compositions(total - first, parts - 1) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

/// log(e^{X/iℏ} e^{Y/iℏ}) as a payload, for payloads of weight ≥ 3, by the
/// recursion (n+1)Z_{n+1} = ½[X − Y, Z_n] + Σ_p K_{2p} Σ [Z_{k₁}, …, [Z_{k₂ₚ}, X + Y]].
pub fn bch(w: &WeylAlgebra, x: &Series, y: &Series) -> Result<Series> {
    check_gauge_payload(w, x)?;
    check_gauge_payload(w, y)?;
    let br = |a: &Series, b: &Series| w.bracket_over_ih(a, b);
    let sum = x + y;
    let diff = x - y;
    let mut z: Vec<Series> = vec![w.zero(), sum.clone()];
    let bound = w.cap() as usize + 1;
    for nn in 1..bound {
        let mut next = br(&diff, &z[nn])?.scale_re(0.5);
        for p in 1..=nn / 2 {
            let kp = *BCH_K.get(p - 1).ok_or(Error::NonTerminating(bound))?;
            for comp in compositions(nn, 2 * p) {
                let mut inner = sum.clone();
                for &ki in comp.iter().rev() {
                    if inner.is_zero() {
                        break;
                    }
                    inner = br(&z[ki], &inner)?;
                }
                next = &next + &inner.scale_re(kp);
            }
        }
        let next = next.scale_re(1.0 / (nn + 1) as f64);
        let stop = next.is_zero();
        z.push(next);
        if stop {
            break;
        }
    }
    Ok(z.iter().fold(w.zero(), |a, b| &a + b))
}

/// Data for the stack identities: connections ∇_i and payloads σ_ij (i < j)
/// with σ_ij·∇_j = ∇_i.
#[derive(Clone, Debug)]
pub struct StackData {
    pub connections: Vec<ConnectionData>,
    pub sigma: BTreeMap<(usize, usize), Series>,
}

#[derive(Clone, Debug, Serialize)]
pub struct StackReport {
    pub intertwining: f64,
    pub c_mod_hbar: f64,
    pub horizontality: f64,
    pub ad_identity: f64,
    pub tetrahedron: Option<f64>,
}

impl StackReport {
    pub fn to_report(&self, tol: f64) -> Report {
        let mut r = Report::new();
        r.residual("σ intertwine", self.intertwining, tol, None);
        r.residual("c ≡ 1 mod ℏ", self.c_mod_hbar, tol, None);
        r.residual("c horizontal", self.horizontality, tol, None);
        r.residual("Ad identity", self.ad_identity, tol, None);
        if let Some(t) = self.tetrahedron {
            r.residual("tetrahedron identity", t, tol, None);
        }
        r
    }
}

impl StackData {
    fn s(&self, i: usize, j: usize) -> Result<&Series> {
        self.sigma.get(&(i, j)).ok_or_else(|| Error::Invalid(format!("missing σ_{i}{j}")))
    }

    /// c(i, j, k) = σ_ij σ_jk σ_ik⁻¹.
    pub fn c(&self, i: usize, j: usize, k: usize) -> Result<Series> {
        let w = &self.connections[0].w;
        let back: Series = Neg::neg(self.s(i, k)?);
        bch(w, &bch(w, self.s(i, j)?, self.s(j, k)?)?, &back)
    }

    /// Random flat data around the canonical connection: ∇_i = τ_i·∇₀ and
    /// σ_ij = τ_i h_ij τ_j⁻¹ with h_ij = ℏ²F_ij(p + ŷ) horizontal for ∇₀.
    pub fn random<R: Rng>(w: &WeylAlgebra, base_point: &[f64], count: usize, rng: &mut R) -> Result<StackData> {
        let base = ConnectionData::canonical(w, base_point)?;
        let taus: Vec<Series> = (0..count).map(|_| random_weyl(w, rng, 3, w.cap().min(5), 4, 2)).collect();
        let connections = taus.iter().map(|t| base.gauge(t)).collect::<Result<Vec<_>>>()?;
        let h2 = &w.hbar() * &w.hbar();
        let mut sigma = BTreeMap::new();
        for i in 0..count {
            for j in i + 1..count {
                let f = random_base_poly(w.n(), rng);
                let h = &h2 * &prolongation(w, &f, true)?;
                let s = bch(w, &bch(w, &taus[i], &h)?, &-&taus[j])?;
                sigma.insert((i, j), s);
            }
        }
        Ok(StackData { connections, sigma })
    }
}

fn random_base_poly<R: Rng>(n: usize, rng: &mut R) -> String {
    let names: Vec<String> = (0..n).map(|j| x_name(n, j)).chain((0..n).map(|j| xi_name(n, j))).collect();
    let mut parts = Vec::new();
    for _ in 0..4 {
        let c: i32 = rng.gen_range(-3..=3);
        let a = &names[rng.gen_range(0..names.len())];
        let b = &names[rng.gen_range(0..names.len())];
        let d: u32 = rng.gen_range(1..=3);
        parts.push(format!("({c}/4)*{a}^{d}*{b}"));
    }
    parts.join(" + ")
}

pub fn stack_identities(data: &StackData, samples: &[Series], tol: f64) -> Result<StackReport> {
    let k = data.connections.len();
    if !(3..=4).contains(&k) {
        return Err(Error::Invalid("stack identities need three or four connections".into()));
    }
    let conn0 = &data.connections[0];
    let w = &conn0.w;
    let m = conn0.base_order();
    let mut intertwining: f64 = 0.0;
    for (&(i, j), s) in &data.sigma {
        let moved = data.connections[j].gauge(s)?;
        let r = moved.distance(&data.connections[i], m.saturating_sub(1));
        if r > tol {
            return Err(Error::Invalid(format!("σ_{i}{j} does not intertwine ∇_{j} with ∇_{i} (residual {r:.2e})")));
        }
        intertwining = intertwining.max(r);
    }
    let c = data.c(0, 1, 2)?;
    let h = w.h_idx();
    let c_mod_hbar = c.filter(|e| e[h] < 2).max_abs();
    // Ad(c) only sees c modulo the centre, so horizontality is ∇c ≡ 0 mod centre
    let top = w.cap() - 1;
    let horizontality = conn0.apply(&c)?.iter().map(|s| fibre_jet(&noncentral(w, &base_jet(s, m.saturating_sub(1))), top).max_abs()).fold(0.0, f64::max);
    let mut ad_identity: f64 = 0.0;
    for f in samples {
        let lhs = w.exp_ad(data.s(0, 1)?, &w.exp_ad(data.s(1, 2)?, f)?)?;
        let rhs = w.exp_ad(&c, &w.exp_ad(data.s(0, 2)?, f)?)?;
        ad_identity = ad_identity.max(fibre_jet(&(&lhs - &rhs), top).max_abs());
    }
    let tetrahedron = if k == 4 {
        let lhs = bch(w, &c, &data.c(0, 2, 3)?)?;
        let moved = w.exp_ad(data.s(0, 1)?, &data.c(1, 2, 3)?)?;
        let rhs = bch(w, &moved, &data.c(0, 1, 3)?)?;
        Some(lhs.max_abs_diff(&rhs))
    } else {
        None
    };
    Ok(StackReport { intertwining, c_mod_hbar, horizontality, ad_identity, tetrahedron })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const TOL: f64 = 1e-9;

    #[test]
    fn jet_transition_examples() {
        let id = jet_transition(&BaseMap::polynomial(&["x"]), &[0.3], 5).unwrap();
        assert_eq!(id[0].to_string(), "x");
        let sq = jet_transition(&BaseMap::polynomial(&["x^2"]), &[1.0], 5).unwrap();
        assert_eq!(sq[0].to_string(), "2*x + x^2");
        let tr = jet_transition(&BaseMap::polynomial(&["x + 7"]), &[2.0], 5).unwrap();
        assert_eq!(tr[0].to_string(), "x");
        assert!(matches!(jet_transition(&BaseMap::polynomial(&["x^2"]), &[0.0], 5), Err(Error::Singular(_))));
        // x/(1 − x) at 0 is Σ x̂ᵏ
        let g = jet_transition(&BaseMap::rational(&[("x", "1 - x")]), &[0.0], 4).unwrap();
        assert_eq!(g[0].to_string(), "x + x^2 + x^3 + x^4");
    }

    #[test]
    fn cotangent_transition_examples() {
        let w = WeylAlgebra::new(1, 5);
        let id = cotangent_weyl_transition(&w, &BaseMap::polynomial(&["x"]), &[0.2], &[1.5]).unwrap();
        assert!(id.x_img[0].max_abs_diff(&w.x(0)) < TOL && id.xi_img[0].max_abs_diff(&w.xi(0)) < TOL);
        let w2 = WeylAlgebra::new(2, 4);
        let lin = cotangent_weyl_transition(&w2, &BaseMap::polynomial(&["2*x1 + x2", "x2"]), &[0.0, 0.0], &[0.0, 0.0]).unwrap();
        assert!(lin.x_img[0].max_abs_diff(&w2.parse("2*x1 + x2").unwrap()) < TOL);
        // B⁻ᵗ = [[1/2, 0], [−1/2, 1]]
        assert!(lin.xi_img[0].max_abs_diff(&w2.parse("xi1/2").unwrap()) < TOL);
        assert!(lin.xi_img[1].max_abs_diff(&w2.parse("-xi1/2 + xi2").unwrap()) < TOL);
        let g = lin.linear_generator().unwrap();
        assert!(matches!(g, Generator::Linear(_)));
    }

    #[test]
    fn rees_part_matches_k_conjugation() {
        let w = WeylAlgebra::new(1, 5);
        let t = cotangent_weyl_transition(&w, &BaseMap::rational(&[("x", "1 - x")]), &[0.3], &[0.0]).unwrap();
        let (xs, xis) = t.k.images(&w).unwrap();
        assert!(xs[0].max_abs_diff(&t.x_img[0]) < TOL);
        assert!(xis[0].max_abs_diff(&t.xi_img[0]) < 1e-8);
        let (a, k1) = t.factorization().unwrap();
        assert!((a[(0, 0)] - 1.0 / 0.49).abs() < 1e-12);
        assert!((k1.g[0].coeff(&[1, 0]).re - 1.0).abs() < 1e-12);
    }

    #[test]
    fn example_atlas_passes() {
        let w = WeylAlgebra::new(1, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rep = check_atlas(&w, &Atlas::example(), 5, &mut rng, 1e-8).unwrap();
        for c in &rep.checks {
            assert!(c.status == crate::report::Status::Pass, "{c:?}");
        }
        assert!(rep.checks.iter().any(|c| c.name == "cotangent cocycle"));
    }

    #[test]
    fn two_chart_round_trips() {
        let atlas = Atlas::two_chart();
        assert_eq!(atlas.triples().len(), 2);
        let w = WeylAlgebra::new(1, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rep = check_atlas(&w, &atlas, 3, &mut rng, 1e-8).unwrap();
        assert!(rep.passed(), "{rep:?}");
        assert_eq!(rep.checks.iter().filter(|c| c.name == "cotangent cocycle").count(), 10);
        // a wrong inverse is caught by the round trip
        let mut bad = Atlas::two_chart();
        bad.transitions[1].map = BaseMap::rational(&[("x", "1 + 2*x")]);
        let err = bad.validate(6, 1e-8).unwrap_err().to_string();
        assert!(err.contains("g_ab∘g_ba ≠ g_aa"), "{err}");
    }

    #[test]
    fn inconsistent_atlas_is_rejected() {
        let mut a = Atlas::example();
        a.transitions[2].map = BaseMap::rational(&[("2*x", "1 - x")]);
        assert!(a.validate(4, 1e-9).is_err());
    }

    #[test]
    fn corrupted_lift_is_detected() {
        let w = WeylAlgebra::new(1, 5);
        let mut t = cotangent_weyl_transition(&w, &BaseMap::rational(&[("x", "1 - x")]), &[0.2], &[0.7]).unwrap();
        let form = canonical_lifted_form(&w);
        assert!(lifted_cocycle_residual(&w, &t, &form, &form).unwrap() < TOL);
        let (_, plain) = t.k.images(&w).unwrap();
        t.k.q = Series::monomial(w.op_space(), smallvec::smallvec![2, 0], re(0.1));
        let (_, twisted) = t.k.images(&w).unwrap();
        t.xi_img[0] = &t.xi_img[0] + &(&twisted[0] - &plain[0]);
        // still a ★-automorphism
        let (f, g) = (w.parse("x^2 + xi").unwrap(), w.parse("x*xi^2").unwrap());
        let lhs = t.apply(&w, &w.star(&f, &g).unwrap()).unwrap();
        let rhs = w.star(&t.apply(&w, &f).unwrap(), &t.apply(&w, &g).unwrap()).unwrap();
        assert!(fibre_jet(&(&lhs - &rhs), 3).max_abs() < 1e-9);
        assert!(lifted_cocycle_residual(&w, &t, &form, &form).unwrap() > 1e-3);
    }

    #[test]
    fn canonical_connection_on_sections() {
        let w = ConnectionData::algebra(1, 5, 3);
        // a constant-in-x section: −∂_x̂ f dx
        let f = w.parse("x^3 + xi*x").unwrap();
        let d = canonical_connection_apply(&w, &f, ConnectionModel::JetPullback).unwrap();
        assert!(d[0].max_abs_diff(&w.parse("-3*x^2 - xi").unwrap()) < TOL);
        assert!(d[1].is_zero());
        // prolongations are horizontal, perturbations are not
        let s = prolongation(&w, "x^3 - 2*x*xi + xi^2", true).unwrap();
        for c in canonical_connection_apply(&w, &s, ConnectionModel::Lifted).unwrap() {
            assert!(base_jet(&c, 2).max_abs() < TOL);
        }
        let s = prolongation(&w, "x^2 + x", false).unwrap();
        for c in canonical_connection_apply(&w, &s, ConnectionModel::JetPullback).unwrap() {
            assert!(base_jet(&c, 2).max_abs() < TOL);
        }
        let bent = &s + &w.parse("x*p1").unwrap();
        let d = canonical_connection_apply(&w, &bent, ConnectionModel::JetPullback).unwrap();
        assert!(base_jet(&d[0], 2).max_abs() > 0.5);
        // lifted form on x̂: the dξ component is −∂_ξ̂ x̂ = 0, the dx component −1
        let d = canonical_connection_apply(&w, &w.x(0), ConnectionModel::Lifted).unwrap();
        assert!(d[0].max_abs_diff(&Series::constant(w.space(), re(-1.0))) < TOL);
        assert!(d[1].is_zero());
    }

    #[test]
    fn canonical_fedosov_checks() {
        let w = ConnectionData::algebra(1, 5, 3);
        let conn = ConnectionData::canonical(&w, &[0.0, 0.0]).unwrap();
        let r = check_fedosov(&conn).unwrap();
        assert!(r.shape_ok && r.a_minus1_residual < TOL && r.flatness_residual < TOL && r.omega_residual < TOL);
        assert_eq!(r.theta["0,1"], "-1");
        let mut flipped = conn.clone();
        flipped.components[0] = -&flipped.components[0];
        let r = check_fedosov(&flipped).unwrap();
        assert!(r.a_minus1_residual > 1.0);
        assert!(!r.to_report(TOL).passed());
    }

    #[test]
    fn gauge_transform_keeps_flatness_and_theta() {
        let w = ConnectionData::algebra(1, 5, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let conn = ConnectionData::canonical(&w, &[0.1, -0.2]).unwrap();
        let s = random_weyl(&w, &mut rng, 3, 5, 5, 2);
        let g = conn.gauge(&s).unwrap();
        assert!(g.distance(&conn, 2) > 1e-3);
        let r = check_fedosov(&g).unwrap();
        assert!(r.flatness_residual < 1e-9, "{}", r.flatness_residual);
        assert!(r.omega_residual < 1e-9, "{}", r.omega_residual);
        assert!(r.shape_ok);
        // the gauged connection acts as σ∇σ⁻¹ on sections
        let f = random_weyl(&w, &mut rng, 1, 4, 5, 2);
        let lhs = g.apply(&f).unwrap();
        let inner = conn.apply(&w.exp_ad(&-&s, &f).unwrap()).unwrap();
        for (b, l) in lhs.iter().enumerate() {
            let r = w.exp_ad(&s, &inner[b]).unwrap();
            assert!(fibre_jet(&base_jet(&(l - &r), 1), 4).max_abs() < 1e-9);
        }
        assert!(conn.gauge(&w.parse("x*xi").unwrap()).is_err());
    }

    #[test]
    fn zero_section_compatibility() {
        let w = ConnectionData::algebra(1, 5, 2);
        let conn = ConnectionData::canonical(&w, &[0.4, 0.0]).unwrap();
        let zero = LagrangianChartData { id: "z".into(), base_chart: "X".into(), n: 1, x_params: vec![0], generating_function: "0".into() };
        let r = check_l_compatible(&conn, &zero, TOL).unwrap();
        assert!(r.failures.is_empty());
        let mut tilted = conn.clone();
        tilted.components[0] = &tilted.components[0] + &w.parse("x^3").unwrap();
        let r = check_l_compatible(&tilted, &zero, TOL).unwrap();
        assert_eq!(r.failures.len(), 1);
        assert_eq!((r.failures[0].0, r.failures[0].1), (0, 0));
        // x̂²★ξ̂ lies in the left ideal, the commutative product x̂²ξ̂ misses it by iℏx̂
        let starred = w.star(&w.parse("x^2").unwrap(), &w.xi(0)).unwrap();
        assert!(ideal_residual(&w, &zero, &[0.4, 0.0], &starred).unwrap() < TOL);
        assert!(ideal_residual(&w, &zero, &[0.4, 0.0], &w.parse("x^2*xi").unwrap()).unwrap() > 0.5);
        assert!(check_l_compatible(&conn, &zero, TOL).is_ok());
        let off = ConnectionData::canonical(&w, &[0.4, 1.0]).unwrap();
        assert!(check_l_compatible(&off, &zero, TOL).is_err());
    }

    #[test]
    fn curved_lagrangian_compatibility() {
        // L = graph of dF, F = x³/3, at x = 1/2: along L the generator ξ̂ − F''x̂
        // moves by −F'''x̂, which the canonical connection does not absorb
        let w = ConnectionData::algebra(1, 5, 2);
        let chart = LagrangianChartData { id: "g".into(), base_chart: "X".into(), n: 1, x_params: vec![0], generating_function: "x^3/3".into() };
        let conn = ConnectionData::canonical(&w, &[0.5, 0.25]).unwrap();
        let r = check_l_compatible(&conn, &chart, TOL).unwrap();
        assert_eq!(r.failures.len(), 1);
        assert!((r.max_residual - 2.0).abs() < TOL);
        // gauging by −x̂³/3 adds −x̂² to P_x and restores compatibility
        let fixed = conn.gauge(&w.parse("-x^3/3").unwrap()).unwrap();
        let r = check_l_compatible(&fixed, &chart, TOL).unwrap();
        assert!(r.failures.is_empty(), "{:?}", r.failures);
        assert!(check_fedosov(&fixed).unwrap().flatness_residual < TOL);
        // a linear L in a fibre chart: x = ξ/2
        let lin = LagrangianChartData { id: "f".into(), base_chart: "X".into(), n: 1, x_params: vec![], generating_function: "-xi^2/4".into() };
        let conn = ConnectionData::canonical(&w, &[0.5, 1.0]).unwrap();
        assert!(check_l_compatible(&conn, &lin, TOL).unwrap().failures.is_empty());
    }

    #[test]
    fn bch_central_extension() {
        let w = WeylAlgebra::new(1, 6);
        let x = w.parse("h*x").unwrap();
        let y = w.parse("h*xi").unwrap();
        let z = bch(&w, &x, &y).unwrap();
        // [hx, hξ]/iℏ = −h², so Z = X + Y − h²/2
        assert!(z.max_abs_diff(&w.parse("h*x + h*xi - h^2/2").unwrap()) < TOL);
    }

    #[test]
    fn stack_identities_hold() {
        let w = ConnectionData::algebra(1, 6, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let data = StackData::random(&w, &[0.0, 0.0], 4, &mut rng).unwrap();
        let samples: Vec<Series> = (0..3).map(|_| random_weyl(&w, &mut rng, 1, 4, 4, 1)).collect();
        let r = stack_identities(&data, &samples, 1e-8).unwrap();
        assert!(r.to_report(1e-8).passed(), "{r:?}");
        // all σ trivial: c = 1
        let triv = StackData { connections: vec![data.connections[0].clone(); 3], sigma: [((0, 1), w.zero()), ((1, 2), w.zero()), ((0, 2), w.zero())].into_iter().collect() };
        assert!(triv.c(0, 1, 2).unwrap().is_zero());
        // σ₁₃ defined as σ₁₂σ₂₃
        let mut d3 = StackData { connections: data.connections[..3].to_vec(), sigma: data.sigma.clone() };
        d3.sigma.insert((0, 2), bch(&w, &data.sigma[&(0, 1)], &data.sigma[&(1, 2)]).unwrap());
        assert!(d3.c(0, 1, 2).unwrap().max_abs() < 1e-10);
        // a σ that does not intertwine is rejected
        let mut bad = data.clone();
        let extra = w.parse("x^3").unwrap();
        *bad.sigma.get_mut(&(0, 1)).unwrap() = &bad.sigma[&(0, 1)] + &extra;
        assert!(stack_identities(&bad, &samples, 1e-8).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn bch_is_associative_and_acts_by_composition(seed in 0u64..10_000) {
            let w = ConnectionData::algebra(1, 6, 2);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_weyl(&w, &mut rng, 3, 6, 4, 1);
            let b = random_weyl(&w, &mut rng, 3, 6, 4, 1);
            let c = random_weyl(&w, &mut rng, 3, 6, 4, 1);
            let l = bch(&w, &bch(&w, &a, &b).unwrap(), &c).unwrap();
            let r = bch(&w, &a, &bch(&w, &b, &c).unwrap()).unwrap();
            prop_assert!(l.max_abs_diff(&r) < 1e-9);
            let f = random_weyl(&w, &mut rng, 1, 4, 4, 1);
            let lhs = w.exp_ad(&bch(&w, &a, &b).unwrap(), &f).unwrap();
            let rhs = w.exp_ad(&a, &w.exp_ad(&b, &f).unwrap()).unwrap();
            // a weight-1 argument pairs with the truncated top weight of the payload
            prop_assert!(fibre_jet(&(&lhs - &rhs), 5).max_abs() < 1e-9);
            prop_assert!(bch(&w, &a, &-&a).unwrap().max_abs() < 1e-12);
        }

        #[test]
        fn transitions_preserve_star(seed in 0u64..10_000, x in -0.8f64..0.45, p in -2.0f64..2.0) {
            let w = WeylAlgebra::new(1, 6);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = cotangent_weyl_transition(&w, &BaseMap::rational(&[("x", "1 - x")]), &[x], &[p]).unwrap();
            let f = random_weyl(&w, &mut rng, 1, 4, 4, 0);
            let g = random_weyl(&w, &mut rng, 1, 4, 4, 0);
            let lhs = t.apply(&w, &w.star(&f, &g).unwrap()).unwrap();
            let rhs = w.star(&t.apply(&w, &f).unwrap(), &t.apply(&w, &g).unwrap()).unwrap();
            prop_assert!(lhs.max_abs_diff(&rhs) < 1e-8 * (1.0 + lhs.max_abs()));
            let form = canonical_lifted_form(&w);
            prop_assert!(lifted_cocycle_residual(&w, &t, &form, &form).unwrap() < 1e-8);
        }
    }
}
