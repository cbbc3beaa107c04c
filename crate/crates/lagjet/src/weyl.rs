//! The Weyl algebra: Moyal product, ordering conversions, the ad-exponential
//! and the group K of formal line-bundle automorphisms.
//!
//! Sign convention: f★g = exp((iℏ/2)(∂_ξ∂_y − ∂_η∂_x)) f(x,ξ)g(y,η)|_{diag}, which
//! gives x̂★ξ̂ = x̂ξ̂ − iℏ/2 and [x̂, ξ̂] = −iℏ. Operators realize ξ̂ as iℏ∂_x̂.
//! Lie elements are stored by their payload f, standing for (1/iℏ)f.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use serde_json::json;

use crate::error::{Error, Result};
use crate::series::maps::{invert_map, jacobian, series_det, series_matrix_inverse};
use crate::series::parse::parse_series;
use crate::series::{Exp, Series, Space, C64, DEFAULT_EPS};

pub fn x_name(n: usize, j: usize) -> String {
    if n == 1 {
        "x".into()
    } else {
        format!("x{}", j + 1)
    }
}

pub fn xi_name(n: usize, j: usize) -> String {
    if n == 1 {
        "xi".into()
    } else {
        format!("xi{}", j + 1)
    }
}

pub fn param_name(k: usize) -> String {
    format!("p{}", k + 1)
}

/// Layout of W in n degrees of freedom: x̂₁..x̂ₙ, ξ̂₁..ξ̂ₙ, ℏ, then weight-0
/// parameters. The companion operator space holds x̂, ℏ and the parameters.
#[derive(Clone, Debug)]
pub struct WeylAlgebra {
    n: usize,
    nparams: usize,
    space: Arc<Space>,
    op_space: Arc<Space>,
}

#[derive(Clone, Copy, PartialEq)]
enum Kernel {
    Star,
    BracketOverIh,
    Poisson,
}

fn falling(a: u16, k: u16) -> f64 {
    (0..k).map(|t| (a - t) as f64).product()
}

fn factorial(k: u16) -> f64 {
    (1..=k).map(|t| t as f64).product()
}

impl WeylAlgebra {
    pub fn new(n: usize, cap: u32) -> WeylAlgebra {
        Self::with_params(n, cap, 0, 0)
    }

    pub fn with_params(n: usize, cap: u32, nparams: usize, param_cap: u32) -> WeylAlgebra {
        Self::with_options(n, cap, nparams, param_cap, DEFAULT_EPS)
    }

    pub fn with_options(n: usize, cap: u32, nparams: usize, param_cap: u32, eps: f64) -> WeylAlgebra {
        let mut names: Vec<String> = (0..n).map(|j| x_name(n, j)).collect();
        names.extend((0..n).map(|j| xi_name(n, j)));
        names.push("h".into());
        names.extend((0..nparams).map(param_name));
        let mut weights = vec![1; 2 * n];
        weights.push(2);
        weights.extend(std::iter::repeat(0).take(nparams));
        let space = Space::with_options(names, weights, cap, param_cap, eps);

        let mut onames: Vec<String> = (0..n).map(|j| x_name(n, j)).collect();
        onames.push("h".into());
        onames.extend((0..nparams).map(param_name));
        let mut oweights = vec![1; n];
        oweights.push(2);
        oweights.extend(std::iter::repeat(0).take(nparams));
        let op_space = Space::with_options(onames, oweights, cap, param_cap, eps);
        WeylAlgebra { n, nparams, space, op_space }
    }

    /// Same layout with another cap.
    pub fn recapped(&self, cap: u32) -> WeylAlgebra {
        Self::with_options(self.n, cap, self.nparams, self.space.param_cap(), self.space.eps())
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn nparams(&self) -> usize {
        self.nparams
    }
    pub fn space(&self) -> &Arc<Space> {
        &self.space
    }
    pub fn op_space(&self) -> &Arc<Space> {
        &self.op_space
    }
    pub fn cap(&self) -> u32 {
        self.space.cap()
    }
    pub fn x_idx(&self, j: usize) -> usize {
        j
    }
    pub fn xi_idx(&self, j: usize) -> usize {
        self.n + j
    }
    pub fn h_idx(&self) -> usize {
        2 * self.n
    }
    pub fn param_idx(&self, k: usize) -> usize {
        2 * self.n + 1 + k
    }
    pub fn x(&self, j: usize) -> Series {
        Series::var(&self.space, j)
    }
    pub fn xi(&self, j: usize) -> Series {
        Series::var(&self.space, self.n + j)
    }
    pub fn hbar(&self) -> Series {
        Series::var(&self.space, 2 * self.n)
    }
    pub fn param(&self, k: usize) -> Series {
        Series::var(&self.space, self.param_idx(k))
    }
    pub fn one(&self) -> Series {
        Series::one(&self.space)
    }
    pub fn zero(&self) -> Series {
        Series::zero(&self.space)
    }

    pub fn parse(&self, src: &str) -> Result<Series> {
        parse_series(src, &self.space)
    }

    fn check(&self, f: &Series) -> Result<()> {
        if crate::series::same_space(f.space(), &self.space) {
            Ok(())
        } else {
            Err(Error::SpaceMismatch(format!("{:?} is not a Weyl element of this algebra", f.space().names())))
        }
    }

    /// Operator-space series viewed as ξ̂-free Weyl elements.
    pub fn from_op(&self, u: &Series) -> Result<Series> {
        let map: Vec<Option<usize>> = (0..self.op_space.nvars())
            .map(|i| Some(if i < self.n { i } else { i + self.n }))
            .collect();
        u.embed(&self.space, &map)
    }

    /// ξ̂-free Weyl elements viewed in the operator space.
    pub fn to_op(&self, w: &Series) -> Result<Series> {
        let n = self.n;
        let map: Vec<Option<usize>> = (0..self.space.nvars())
            .map(|i| if i < n { Some(i) } else if i < 2 * n { None } else { Some(i - n) })
            .collect();
        w.embed(&self.op_space, &map)
    }

    fn kernel(&self, f: &Series, g: &Series, kind: Kernel) -> Series {
        let sp = &self.space;
        let n = self.n;
        let h = self.h_idx();
        let drop = if kind == Kernel::Star { 0 } else { 2 };
        let mut rhs: Vec<(u32, u32, &Exp, C64)> =
            g.iter().map(|(e, v)| (sp.weighted_degree(e), sp.param_degree(e), e, *v)).collect();
        rhs.sort_by_key(|t| t.0);
        let mut acc: BTreeMap<Exp, C64> = BTreeMap::new();
        let half_i = C64::new(0.0, 0.5);
        for (ea, va) in f.iter() {
            let wa = sp.weighted_degree(ea);
            let pa = sp.param_degree(ea);
            for &(wb, pb, eb, vb) in &rhs {
                if wa + wb < drop {
                    continue;
                }
                if wa + wb - drop > sp.cap() {
                    break;
                }
                if pa + pb > sp.param_cap() {
                    continue;
                }
                // per-coordinate choices (α_j, β_j, factor)
                let mut combos: Vec<(Exp, Exp, f64)> = vec![(Exp::from_elem(0, n), Exp::from_elem(0, n), 1.0)];
                for j in 0..n {
                    let amax = ea[n + j].min(eb[j]);
                    let bmax = ea[j].min(eb[n + j]);
                    let mut next = Vec::with_capacity(combos.len() * ((amax + 1) * (bmax + 1)) as usize);
                    for (al, be, fac) in &combos {
                        let order: u16 = al.iter().sum::<u16>() + be.iter().sum::<u16>();
                        for a in 0..=amax {
                            for b in 0..=bmax {
                                let m = order + a + b;
                                if kind == Kernel::Poisson && m > 1 {
                                    continue;
                                }
                                let sign = if b % 2 == 1 { -1.0 } else { 1.0 };
                                let fj = falling(ea[n + j], a) * falling(eb[j], a) * falling(ea[j], b) * falling(eb[n + j], b)
                                    / (factorial(a) * factorial(b))
                                    * sign;
                                let mut al2 = al.clone();
                                let mut be2 = be.clone();
                                al2[j] = a;
                                be2[j] = b;
                                next.push((al2, be2, fac * fj));
                            }
                        }
                    }
                    combos = next;
                }
                for (al, be, fac) in combos {
                    let m: u16 = al.iter().sum::<u16>() + be.iter().sum::<u16>();
                    let (coef, hshift) = match kind {
                        Kernel::Star => (half_i.powu(m as u32), m),
                        Kernel::BracketOverIh => {
                            if m % 2 == 0 {
                                continue;
                            }
                            (half_i.powu(m as u32 - 1), m - 1)
                        }
                        Kernel::Poisson => {
                            if m != 1 {
                                continue;
                            }
                            (C64::new(1.0, 0.0), 0)
                        }
                    };
                    let mut e: Exp = ea.iter().zip(eb.iter()).map(|(p, q)| p + q).collect();
                    for j in 0..n {
                        e[j] -= al[j] + be[j];
                        e[n + j] -= al[j] + be[j];
                    }
                    e[h] += hshift;
                    *acc.entry(e).or_default() += va * vb * coef * fac;
                }
            }
        }
        Series::from_terms(sp, acc)
    }

    /// Moyal product.
    pub fn star(&self, f: &Series, g: &Series) -> Result<Series> {
        self.check(f)?;
        self.check(g)?;
        Ok(self.kernel(f, g, Kernel::Star))
    }

    pub fn commutator(&self, f: &Series, g: &Series) -> Result<Series> {
        Ok(&self.star(f, g)? - &self.star(g, f)?)
    }

    /// (1/iℏ)[p, f], computed termwise so that no division is needed.
    pub fn bracket_over_ih(&self, p: &Series, f: &Series) -> Result<Series> {
        self.check(p)?;
        self.check(f)?;
        Ok(self.kernel(p, f, Kernel::BracketOverIh))
    }

    /// {f, g} = Σ ∂_ξ f ∂_x g − ∂_x f ∂_ξ g, so that {x, ξ} = −1.
    pub fn poisson(&self, f: &Series, g: &Series) -> Result<Series> {
        self.check(f)?;
        self.check(g)?;
        Ok(self.kernel(f, g, Kernel::Poisson))
    }

    pub fn star_pow(&self, f: &Series, k: u32) -> Result<Series> {
        let mut out = self.one();
        for _ in 0..k {
            out = self.star(&out, f)?;
        }
        Ok(out)
    }

    /// exp(ad h) f for h = (1/iℏ)·payload, summed until the terms vanish.
    pub fn exp_ad(&self, payload: &Series, f: &Series) -> Result<Series> {
        self.check(payload)?;
        self.check(f)?;
        let bound = 4 * (self.space.cap() + self.space.param_cap()) as usize + 8;
        let mut term = f.clone();
        let mut sum = f.clone();
        for k in 1..=bound {
            term = self.kernel(payload, &term, Kernel::BracketOverIh).scale_re(1.0 / k as f64);
            if term.is_zero() {
                return Ok(sum);
            }
            sum = &sum + &term;
        }
        Err(Error::NonTerminating(bound))
    }

    fn ordering_shift(&self, w: &Series, sign: f64) -> Series {
        let n = self.n;
        let h = self.h_idx();
        let mut out = Series::zero(&self.space);
        let c = C64::new(0.0, 0.5 * sign);
        for (e, v) in w.iter() {
            let mut combos: Vec<(Exp, f64)> = vec![(e.clone(), 1.0)];
            for j in 0..n {
                let kmax = e[j].min(e[n + j]);
                let mut next = Vec::new();
                for (f, fac) in &combos {
                    for k in 0..=kmax {
                        let mut g = f.clone();
                        g[j] -= k;
                        g[n + j] -= k;
                        g[h] += k;
                        next.push((g, fac * falling(e[j], k) * falling(e[n + j], k) / factorial(k)));
                    }
                }
                combos = next;
            }
            for (f, fac) in combos {
                let k = f[h] - e[h];
                out.add_term(f, v * c.powu(k as u32) * fac);
            }
        }
        out.cleaned()
    }

    /// Weyl symbol to standard symbol (x̂ to the left of ξ̂ = iℏ∂).
    pub fn to_std(&self, w: &Series) -> Series {
        self.ordering_shift(w, 1.0)
    }

    /// Standard symbol to Weyl symbol.
    pub fn from_std(&self, s: &Series) -> Series {
        self.ordering_shift(s, -1.0)
    }

    /// Standard symbol of the operator product a∘b, both in standard form.
    pub fn compose_std(&self, a: &Series, b: &Series) -> Series {
        let n = self.n;
        let h = self.h_idx();
        let sp = &self.space;
        let mut out = Series::zero(sp);
        for (ea, va) in a.iter() {
            for (eb, vb) in b.iter() {
                if sp.weighted_degree(ea) + sp.weighted_degree(eb) > sp.cap() {
                    continue;
                }
                let mut combos: Vec<(Exp, f64)> = vec![(ea.iter().zip(eb.iter()).map(|(p, q)| p + q).collect(), 1.0)];
                for j in 0..n {
                    let kmax = ea[n + j].min(eb[j]);
                    let mut next = Vec::new();
                    for (f, fac) in &combos {
                        for k in 0..=kmax {
                            let mut g = f.clone();
                            g[j] -= k;
                            g[n + j] -= k;
                            g[h] += k;
                            next.push((g, fac * falling(ea[n + j], k) * falling(eb[j], k) / factorial(k)));
                        }
                    }
                    combos = next;
                }
                for (f, fac) in combos {
                    let k = (f[h] - ea[h] - eb[h]) as u32;
                    out.add_term(f, va * vb * C64::i().powu(k) * fac);
                }
            }
        }
        out.cleaned()
    }

    /// Applies an operator in standard form to u(x̂, ℏ).
    pub fn apply_std(&self, s: &Series, u: &Series) -> Result<Series> {
        let n = self.n;
        let os = &self.op_space;
        let mut out = Series::zero(os);
        for (e, v) in s.iter() {
            let mut d = u.clone();
            let mut order = 0u32;
            for j in 0..n {
                for _ in 0..e[n + j] {
                    d = d.derivative(j);
                    order += 1;
                }
            }
            if d.is_zero() {
                continue;
            }
            let mut mono = os.zero_exp();
            for j in 0..n {
                mono[j] = e[j];
            }
            mono[n] = e[2 * n] + order as u16;
            for k in 0..self.nparams {
                mono[n + 1 + k] = e[2 * n + 1 + k];
            }
            let factor = Series::monomial(os, mono, v * C64::i().powu(order));
            out = &out + &(&factor * &d);
        }
        Ok(out)
    }

    /// The Weyl quantization of `w` applied to u(x̂, ℏ).
    pub fn apply(&self, w: &Series, u: &Series) -> Result<Series> {
        self.check(w)?;
        self.apply_std(&self.to_std(w), u)
    }

    /// The algebra endomorphism sending x̂ⱼ ↦ x_img[j], ξ̂ⱼ ↦ xi_img[j] (and
    /// fixing ℏ and parameters), applied to `w`. The images must be free of
    /// constant terms and satisfy the canonical commutation relations.
    pub fn automorphism(&self, x_img: &[Series], xi_img: &[Series], w: &Series) -> Result<Series> {
        self.check(w)?;
        let n = self.n;
        for (k, img) in x_img.iter().chain(xi_img).enumerate() {
            self.check(img)?;
            if img.iter().any(|(e, _)| self.space.weighted_degree(e) == 0) {
                return Err(Error::NonzeroConstant(k));
            }
        }
        let std = self.to_std(w);
        let mut xpow: Vec<Vec<Series>> = (0..n).map(|_| vec![self.one()]).collect();
        let mut xipow: Vec<Vec<Series>> = (0..n).map(|_| vec![self.one()]).collect();
        let mut xcache: HashMap<Exp, Series> = HashMap::new();
        let mut xicache: HashMap<Exp, Series> = HashMap::new();
        let mut out = self.zero();
        for (e, v) in std.iter() {
            let a: Exp = Exp::from_slice(&e[..n]);
            let b: Exp = Exp::from_slice(&e[n..2 * n]);
            if !xcache.contains_key(&a) {
                let mut p = self.one();
                for j in 0..n {
                    while xpow[j].len() <= a[j] as usize {
                        let next = self.star(xpow[j].last().unwrap(), &x_img[j])?;
                        xpow[j].push(next);
                    }
                    p = self.star(&p, &xpow[j][a[j] as usize])?;
                }
                xcache.insert(a.clone(), p);
            }
            if !xicache.contains_key(&b) {
                let mut p = self.one();
                for j in 0..n {
                    while xipow[j].len() <= b[j] as usize {
                        let next = self.star(xipow[j].last().unwrap(), &xi_img[j])?;
                        xipow[j].push(next);
                    }
                    p = self.star(&p, &xipow[j][b[j] as usize])?;
                }
                xicache.insert(b.clone(), p);
            }
            let mut central = self.space.zero_exp();
            for k in 2 * n..self.space.nvars() {
                central[k] = e[k];
            }
            let c = Series::monomial(&self.space, central, *v);
            let prod = self.star(&xcache[&a], &xicache[&b])?;
            out = &out + &(&c * &prod);
        }
        Ok(out)
    }

    /// Grading components W_k of an element.
    pub fn graded(&self, f: &Series) -> BTreeMap<u32, Series> {
        let mut out: BTreeMap<u32, Series> = BTreeMap::new();
        for (e, v) in f.iter() {
            let d = self.space.weighted_degree(e);
            let s = out.entry(d).or_insert_with(|| self.zero());
            s.add_term(e.clone(), *v);
        }
        out
    }

    /// JSON form of a Weyl element: the series JSON with a role tag.
    pub fn to_json(&self, w: &Series) -> serde_json::Value {
        let mut v = serde_json::to_value(w).expect("series serialize");
        v["role"] = json!("weyl");
        v
    }
}

/// Which Lie algebra a payload is read in.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LieTag {
    G,
    GTilde,
}

/// (1/iℏ)·payload in g or g̃.
#[derive(Clone, Debug)]
pub struct LieElement {
    pub payload: Series,
    pub tag: LieTag,
}

impl LieElement {
    pub fn gtilde(payload: Series) -> Self {
        LieElement { payload, tag: LieTag::GTilde }
    }

    /// In g the payload is taken modulo C[[ℏ]], so its (x̂, ξ̂)-free part is dropped.
    pub fn g(w: &WeylAlgebra, payload: Series) -> Self {
        let n = w.n();
        let p = payload.filter(|e| e[..2 * n].iter().any(|&a| a > 0));
        LieElement { payload: p, tag: LieTag::G }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize)]
pub struct LieFlags {
    pub in_p: bool,
    pub in_n: bool,
    pub in_k1: bool,
    /// Indices k of the nonzero components in g̃_k (payload weight k + 2).
    pub profile: Vec<i32>,
}

/// Monomial-pattern membership tests. A payload ℏ·c is central and ignored.
pub fn lie_classify(w: &WeylAlgebra, h: &LieElement) -> LieFlags {
    let n = w.n();
    let sp = w.space();
    let hi = w.h_idx();
    let mut in_p = true;
    let mut in_n = true;
    let mut in_k1 = true;
    let mut profile = Vec::new();
    for (e, _) in h.payload.iter() {
        let d = sp.weighted_degree(e);
        let k = d as i32 - 2;
        if !profile.contains(&k) {
            profile.push(k);
        }
        let xdeg: u32 = e[..n].iter().map(|&a| a as u32).sum();
        let xideg: u32 = e[n..2 * n].iter().map(|&a| a as u32).sum();
        let m = e[hi] as u32;
        if xdeg == 0 && xideg == 0 && m == 1 {
            continue;
        }
        let p_ok = (xideg >= 1 && d >= 2) || (m >= 1 && d >= 3);
        let n_ok = xideg >= 2 || (m >= 1 && xideg >= 1) || m >= 2;
        let k_ok = (xideg == 1 && m == 0 && xdeg >= 2) || (xideg == 0 && m == 1 && xdeg >= 1);
        in_p &= p_ok;
        in_n &= n_ok && p_ok;
        in_k1 &= k_ok;
    }
    profile.sort();
    LieFlags { in_p, in_n, in_k1, profile }
}

/// Payload of the k≥1 element (1/iℏ)Σ Pⱼ(x̂)ξ̂ⱼ + Q(x̂), with P, Q in the operator space.
pub fn k1_payload(w: &WeylAlgebra, p: &[Series], q: &Series) -> Result<Series> {
    let mut out = w.zero();
    for (j, pj) in p.iter().enumerate() {
        out = &out + &(&w.from_op(pj)? * &w.xi(j));
    }
    let ihq = &w.from_op(q)? * &w.hbar().scale(C64::i());
    Ok(&out + &ihq)
}

/// f ↦ e^{q} |det g'|^{1/2} f∘g on C[[x̂, ℏ]].
#[derive(Clone, Debug)]
pub struct KElement {
    pub g: Vec<Series>,
    pub q: Series,
}

impl KElement {
    pub fn identity(w: &WeylAlgebra) -> KElement {
        KElement { g: (0..w.n()).map(|j| Series::var(w.op_space(), j)).collect(), q: Series::zero(w.op_space()) }
    }

    fn validate(&self, w: &WeylAlgebra) -> Result<()> {
        if self.g.len() != w.n() {
            return Err(Error::Invalid("diffeomorphism arity".into()));
        }
        if self.q.constant_term().norm() > 0.0 {
            return Err(Error::Invalid("multiplier exponent must vanish at the origin".into()));
        }
        Ok(())
    }

    /// |det g'|^{1/2} as a series.
    pub fn half_density(&self) -> Result<Series> {
        let jac = series_det(&jacobian(&self.g));
        let j0 = jac.constant_term();
        if j0.norm() <= jac.space().eps() {
            return Err(Error::Singular("Jacobian of the diffeomorphism".into()));
        }
        let u = &jac.scale(1.0 / j0) - &Series::one(jac.space());
        Ok(u.one_plus_pow(0.5)?.scale_re(j0.norm().sqrt()))
    }

    /// With g known through weight cap, the result is exact through cap − 1.
    pub fn act(&self, w: &WeylAlgebra, f: &Series) -> Result<Series> {
        self.validate(w)?;
        let subs: Vec<(usize, Series)> = self.g.iter().cloned().enumerate().collect();
        let pulled = f.compose_partial(&subs)?;
        Ok(&(&self.q.exp()? * &self.half_density()?) * &pulled)
    }

    pub fn inverse(&self, w: &WeylAlgebra) -> Result<KElement> {
        self.validate(w)?;
        let ginv = invert_map(&self.g)?;
        let subs: Vec<(usize, Series)> = ginv.iter().cloned().enumerate().collect();
        Ok(KElement { q: -self.q.compose_partial(&subs)?, g: ginv })
    }

    /// (self ∘ other) f = self(other(f)).
    pub fn then(&self, other: &KElement) -> Result<KElement> {
        let subs: Vec<(usize, Series)> = self.g.iter().cloned().enumerate().collect();
        let g: Vec<Series> = other.g.iter().map(|gk| gk.compose_partial(&subs)).collect::<Result<_>>()?;
        let q = &self.q + &other.q.compose_partial(&subs)?;
        Ok(KElement { g, q })
    }

    /// Images of x̂ and ξ̂ under conjugation w ↦ k∘ŵ∘k⁻¹:
    /// x̂ ↦ g(x̂), ξ̂ⱼ ↦ Σᵢ (g'⁻¹)ᵢⱼ(x̂)(ξ̂ᵢ − iℏ∂ᵢq) with commutative products.
    pub fn images(&self, w: &WeylAlgebra) -> Result<(Vec<Series>, Vec<Series>)> {
        self.validate(w)?;
        let n = w.n();
        let a = series_matrix_inverse(&jacobian(&self.g))?;
        let xs: Vec<Series> = self.g.iter().map(|gk| w.from_op(gk)).collect::<Result<_>>()?;
        let ih = w.hbar().scale(C64::i());
        let mut xis = Vec::with_capacity(n);
        for j in 0..n {
            let mut s = w.zero();
            for i in 0..n {
                let mom = &w.xi(i) - &(&ih * &w.from_op(&self.q.derivative(i))?);
                s = &s + &(&w.from_op(&a[i][j])? * &mom);
            }
            xis.push(s);
        }
        Ok((xs, xis))
    }

    pub fn conjugate(&self, w: &WeylAlgebra, elem: &Series) -> Result<Series> {
        let (xs, xis) = self.images(w)?;
        w.automorphism(&xs, &xis, elem)
    }
}
