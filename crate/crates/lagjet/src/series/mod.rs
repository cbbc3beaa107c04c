//! Sparse multivariate power series truncated by a weighted filtration.
//!
//! Every variable carries an integer weight. Monomials whose weighted degree
//! exceeds the space cap are never stored. Weight-0 variables are treated as
//! parameters (dual numbers at a base point) and are bounded separately by
//! the total parameter degree `param_cap`.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Arc;

use num::complex::Complex64;
use num::Zero;
use smallvec::SmallVec;

use crate::error::{Error, Result};

pub mod json;
pub mod legendre;
pub mod maps;
pub mod matrix;
pub mod parse;
pub mod scalar;

pub use legendre::{gaussian_moment, legendre, legendre_with, stationary_phase, stationary_phase_with, StationaryPhase};
pub use maps::invert_map;
pub use matrix::SymmetricMatrix;
pub use scalar::{Exponent, OscillatoryScalar};

pub type C64 = Complex64;
pub type Exp = SmallVec<[u16; 10]>;

pub const DEFAULT_EPS: f64 = 1e-9;

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Variable names, weights and truncation bounds shared by a family of series.
#[derive(Debug, Clone, PartialEq)]
pub struct Space {
    names: Vec<String>,
    weights: Vec<u32>,
    cap: u32,
    param_cap: u32,
    eps: f64,
}

impl Space {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>, weights: Vec<u32>, cap: u32) -> Arc<Space> {
        Self::with_options(names, weights, cap, cap, DEFAULT_EPS)
    }

    pub fn with_options<S: Into<String>>(
        names: impl IntoIterator<Item = S>,
        weights: Vec<u32>,
        cap: u32,
        param_cap: u32,
        eps: f64,
    ) -> Arc<Space> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        assert_eq!(names.len(), weights.len(), "one weight per variable");
        let param_cap = if weights.contains(&0) { param_cap } else { 0 };
        Arc::new(Space { names, weights, cap, param_cap, eps })
    }

    /// Same variables and weights with a different cap.
    pub fn recapped(&self, cap: u32) -> Arc<Space> {
        Arc::new(Space { cap, ..self.clone() })
    }

    pub fn nvars(&self) -> usize {
        self.names.len()
    }
    pub fn names(&self) -> &[String] {
        &self.names
    }
    pub fn weights(&self) -> &[u32] {
        &self.weights
    }
    pub fn cap(&self) -> u32 {
        self.cap
    }
    pub fn param_cap(&self) -> u32 {
        self.param_cap
    }
    pub fn eps(&self) -> f64 {
        self.eps
    }
    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
    /// Index of the variable named `h`, which plays the role of ℏ.
    pub fn hbar(&self) -> Option<usize> {
        self.index("h")
    }

    pub fn weighted_degree(&self, e: &[u16]) -> u32 {
        e.iter().zip(&self.weights).map(|(&a, &w)| a as u32 * w).sum()
    }

    pub fn param_degree(&self, e: &[u16]) -> u32 {
        e.iter().zip(&self.weights).filter(|(_, &w)| w == 0).map(|(&a, _)| a as u32).sum()
    }

    pub fn admits(&self, e: &[u16]) -> bool {
        self.weighted_degree(e) <= self.cap && self.param_degree(e) <= self.param_cap
    }

    pub fn zero_exp(&self) -> Exp {
        SmallVec::from_elem(0, self.nvars())
    }

    pub fn unit_exp(&self, i: usize) -> Exp {
        let mut e = self.zero_exp();
        e[i] = 1;
        e
    }
}

pub(crate) fn same_space(a: &Arc<Space>, b: &Arc<Space>) -> bool {
    Arc::ptr_eq(a, b) || a == b
}

/// A truncated power series with complex coefficients.
#[derive(Clone, Debug)]
pub struct Series {
    space: Arc<Space>,
    terms: BTreeMap<Exp, C64>,
}

impl PartialEq for Series {
    fn eq(&self, other: &Self) -> bool {
        same_space(&self.space, &other.space) && self.terms == other.terms
    }
}

impl Series {
    pub fn zero(space: &Arc<Space>) -> Series {
        Series { space: space.clone(), terms: BTreeMap::new() }
    }

    pub fn constant(space: &Arc<Space>, v: C64) -> Series {
        Series::monomial(space, space.zero_exp(), v)
    }

    pub fn one(space: &Arc<Space>) -> Series {
        Series::constant(space, C64::new(1.0, 0.0))
    }

    pub fn var(space: &Arc<Space>, i: usize) -> Series {
        Series::monomial(space, space.unit_exp(i), C64::new(1.0, 0.0))
    }

    pub fn named(space: &Arc<Space>, name: &str) -> Series {
        let i = space.index(name).unwrap_or_else(|| panic!("no variable {name}"));
        Series::var(space, i)
    }

    pub fn monomial(space: &Arc<Space>, e: impl Into<Exp>, v: C64) -> Series {
        let mut s = Series::zero(space);
        s.add_term(e.into(), v);
        s.cleaned()
    }

    /// Builds a series from arbitrary terms; inadmissible terms are dropped and
    /// repeated exponents are summed, so the result does not depend on order.
    pub fn from_terms(space: &Arc<Space>, terms: impl IntoIterator<Item = (Exp, C64)>) -> Series {
        let mut s = Series::zero(space);
        for (e, v) in terms {
            assert_eq!(e.len(), space.nvars(), "exponent arity");
            s.add_term(e, v);
        }
        s.cleaned()
    }

    pub(crate) fn add_term(&mut self, e: Exp, v: C64) {
        if self.space.admits(&e) {
            *self.terms.entry(e).or_insert_with(C64::zero) += v;
        }
    }

    pub(crate) fn cleaned(mut self) -> Series {
        let eps = self.space.eps;
        self.terms.retain(|_, v| v.norm() >= eps);
        self
    }

    pub fn space(&self) -> &Arc<Space> {
        &self.space
    }
    pub fn terms(&self) -> &BTreeMap<Exp, C64> {
        &self.terms
    }
    pub fn iter(&self) -> impl Iterator<Item = (&Exp, &C64)> {
        self.terms.iter()
    }
    pub fn len(&self) -> usize {
        self.terms.len()
    }
    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }
    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }
    pub fn coeff(&self, e: &[u16]) -> C64 {
        self.terms.get(e).copied().unwrap_or_default()
    }
    pub fn constant_term(&self) -> C64 {
        self.coeff(&self.space.zero_exp())
    }

    /// Lowest weighted degree present, or `None` for zero.
    pub fn valuation(&self) -> Option<u32> {
        self.terms.keys().map(|e| self.space.weighted_degree(e)).min()
    }

    pub fn max_abs(&self) -> f64 {
        self.terms.values().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Largest coefficient modulus of `self - other`.
    pub fn max_abs_diff(&self, other: &Series) -> f64 {
        self.sub(other).max_abs()
    }

    fn check(&self, other: &Series) -> Result<()> {
        if same_space(&self.space, &other.space) {
            Ok(())
        } else {
            Err(Error::SpaceMismatch(format!("{:?} vs {:?}", self.space.names, other.space.names)))
        }
    }

    pub fn try_add(&self, other: &Series) -> Result<Series> {
        self.check(other)?;
        let mut s = self.clone();
        for (e, v) in &other.terms {
            *s.terms.entry(e.clone()).or_insert_with(C64::zero) += v;
        }
        Ok(s.cleaned())
    }

    pub fn try_sub(&self, other: &Series) -> Result<Series> {
        self.check(other)?;
        let mut s = self.clone();
        for (e, v) in &other.terms {
            *s.terms.entry(e.clone()).or_insert_with(C64::zero) -= v;
        }
        Ok(s.cleaned())
    }

    pub fn scale(&self, k: C64) -> Series {
        Series { space: self.space.clone(), terms: self.terms.iter().map(|(e, v)| (e.clone(), v * k)).collect() }
            .cleaned()
    }

    pub fn scale_re(&self, k: f64) -> Series {
        self.scale(C64::new(k, 0.0))
    }

    pub fn try_mul(&self, other: &Series) -> Result<Series> {
        self.check(other)?;
        Ok(self.mul_filtered(other, &self.space, |_| true))
    }

    /// Product keeping only the admissible terms that also satisfy `keep`.
    /// `target` may have a larger cap than the operands' space.
    pub(crate) fn mul_filtered(&self, other: &Series, target: &Arc<Space>, keep: impl Fn(&[u16]) -> bool) -> Series {
        let sp = target;
        let mut rhs: Vec<(u32, u32, &Exp, C64)> =
            other.terms.iter().map(|(e, v)| (sp.weighted_degree(e), sp.param_degree(e), e, *v)).collect();
        rhs.sort_by_key(|t| t.0);
        let mut acc: BTreeMap<Exp, C64> = BTreeMap::new();
        let mut e = sp.zero_exp();
        for (ea, va) in &self.terms {
            let wa = sp.weighted_degree(ea);
            let pa = sp.param_degree(ea);
            for &(wb, pb, eb, vb) in &rhs {
                if wa + wb > sp.cap {
                    break;
                }
                if pa + pb > sp.param_cap {
                    continue;
                }
                for k in 0..e.len() {
                    e[k] = ea[k] + eb[k];
                }
                if !keep(&e) {
                    continue;
                }
                *acc.entry(e.clone()).or_insert_with(C64::zero) += va * vb;
            }
        }
        Series { space: target.clone(), terms: acc }.cleaned()
    }

    pub fn pow(&self, n: u32) -> Series {
        let mut out = Series::one(&self.space);
        let mut base = self.clone();
        let mut k = n;
        while k > 0 {
            if k & 1 == 1 {
                out = &out * &base;
            }
            k >>= 1;
            if k > 0 {
                base = &base * &base;
            }
        }
        out
    }

    pub fn derivative(&self, i: usize) -> Series {
        let mut s = Series::zero(&self.space);
        for (e, v) in &self.terms {
            if e[i] > 0 {
                let mut f = e.clone();
                f[i] -= 1;
                s.add_term(f, v * e[i] as f64);
            }
        }
        s.cleaned()
    }

    /// Keeps the terms whose exponent satisfies `pred`.
    pub fn filter(&self, pred: impl Fn(&[u16]) -> bool) -> Series {
        Series {
            space: self.space.clone(),
            terms: self.terms.iter().filter(|(e, _)| pred(e)).map(|(e, v)| (e.clone(), *v)).collect(),
        }
    }

    /// Weighted-homogeneous component of degree `d`.
    pub fn homogeneous(&self, d: u32) -> Series {
        let sp = self.space.clone();
        self.filter(|e| sp.weighted_degree(e) == d)
    }

    pub fn truncate(&self, cap: u32) -> Series {
        let sp = self.space.clone();
        self.filter(|e| sp.weighted_degree(e) <= cap)
    }

    /// Applies `f` to every coefficient.
    pub fn map_coeffs(&self, f: impl Fn(&Exp, C64) -> C64) -> Series {
        Series { space: self.space.clone(), terms: self.terms.iter().map(|(e, v)| (e.clone(), f(e, *v))).collect() }
            .cleaned()
    }

    pub fn conj(&self) -> Series {
        self.map_coeffs(|_, v| v.conj())
    }

    /// Moves the series to `target`, sending variable `i` to `map[i]`.
    /// Variables mapped to `None` must not occur.
    pub fn embed(&self, target: &Arc<Space>, map: &[Option<usize>]) -> Result<Series> {
        assert_eq!(map.len(), self.space.nvars());
        let mut s = Series::zero(target);
        for (e, v) in &self.terms {
            let mut f = target.zero_exp();
            for (i, &a) in e.iter().enumerate() {
                if a == 0 {
                    continue;
                }
                match map[i] {
                    Some(j) => f[j] += a,
                    None => {
                        return Err(Error::Invalid(format!(
                            "variable {} has no image in {:?}",
                            self.space.names[i], target.names
                        )))
                    }
                }
            }
            s.add_term(f, *v);
        }
        Ok(s.cleaned())
    }

    /// Moves the series to `target` matching variables by name.
    pub fn embed_by_name(&self, target: &Arc<Space>) -> Result<Series> {
        let map: Vec<Option<usize>> = self.space.names.iter().map(|n| target.index(n)).collect();
        self.embed(target, &map)
    }

    pub fn evaluate(&self, vals: &[C64]) -> C64 {
        assert_eq!(vals.len(), self.space.nvars());
        self.terms
            .iter()
            .map(|(e, v)| {
                let mut m = *v;
                for (x, &a) in vals.iter().zip(e.iter()) {
                    if a > 0 {
                        m *= x.powu(a as u32);
                    }
                }
                m
            })
            .sum()
    }

    /// Substitutes the constant `val` for variable `i`.
    pub fn fix(&self, i: usize, val: C64) -> Series {
        let mut s = Series::zero(&self.space);
        for (e, v) in &self.terms {
            let mut f = e.clone();
            let a = f[i];
            f[i] = 0;
            s.add_term(f, v * val.powu(a as u32));
        }
        s.cleaned()
    }

    /// Taylor shift f(x + c). Exact when the series is a polynomial that
    /// was not truncated; shifting can only lower degrees.
    pub fn shift(&self, by: &[C64]) -> Series {
        assert_eq!(by.len(), self.space.nvars());
        let mut s = Series::zero(&self.space);
        for (e, v) in &self.terms {
            let mut partial: Vec<(Exp, C64)> = vec![(self.space.zero_exp(), *v)];
            for (i, &a) in e.iter().enumerate() {
                if a == 0 {
                    continue;
                }
                let mut next = Vec::new();
                for (pe, pv) in &partial {
                    let mut binom = 1.0;
                    for j in 0..=a {
                        // x^j c^(a-j) C(a, j)
                        let cv = if by[i].is_zero() {
                            if j == a {
                                C64::new(1.0, 0.0)
                            } else {
                                C64::zero()
                            }
                        } else {
                            by[i].powu((a - j) as u32)
                        };
                        if !cv.is_zero() {
                            let mut f = pe.clone();
                            f[i] += j;
                            next.push((f, pv * cv * binom));
                        }
                        binom = binom * (a - j) as f64 / (j + 1) as f64;
                    }
                }
                partial = next;
            }
            for (f, w) in partial {
                s.add_term(f, w);
            }
        }
        s.cleaned()
    }

    /// Composition f(g₁, …, g_m) with each gᵢ living in a common target space.
    /// Every substitution must lack a constant term, and substitutions for
    /// variables of positive weight must lack weight-0 terms, so that the
    /// result is exact to the target cap.
    pub fn compose(&self, subs: &[Series]) -> Result<Series> {
        if subs.len() != self.space.nvars() {
            return Err(Error::Invalid(format!("expected {} substitutions, got {}", self.space.nvars(), subs.len())));
        }
        for (i, g) in subs.iter().enumerate() {
            let tsp = &g.space;
            let bad = g.terms.keys().any(|e| {
                let w = tsp.weighted_degree(e);
                w == 0 && (self.space.weights[i] > 0 || tsp.param_degree(e) == 0)
            });
            if bad {
                return Err(Error::NonzeroConstant(i));
            }
        }
        Ok(self.substitute(subs))
    }

    /// Composition without the validity check.
    pub fn substitute(&self, subs: &[Series]) -> Series {
        assert_eq!(subs.len(), self.space.nvars());
        let target = subs.first().map(|g| g.space.clone()).unwrap_or_else(|| self.space.clone());
        for g in subs {
            assert!(same_space(&g.space, &target), "substitutions share a space");
        }
        let mut powers: Vec<Vec<Series>> = subs.iter().map(|_| vec![Series::one(&target)]).collect();
        let mut out = Series::zero(&target);
        for (e, v) in &self.terms {
            let mut m = Series::constant(&target, *v);
            for (i, &a) in e.iter().enumerate() {
                if a == 0 {
                    continue;
                }
                while powers[i].len() <= a as usize {
                    let next = powers[i].last().unwrap() * &subs[i];
                    powers[i].push(next);
                }
                m = &m * &powers[i][a as usize];
                if m.is_zero() {
                    break;
                }
            }
            for (f, w) in m.terms {
                *out.terms.entry(f).or_insert_with(C64::zero) += w;
            }
        }
        out.cleaned()
    }

    /// Substitutes only the listed variables, keeping the others.
    pub fn compose_partial(&self, subs: &[(usize, Series)]) -> Result<Series> {
        let mut all: Vec<Series> = (0..self.space.nvars()).map(|i| Series::var(&self.space, i)).collect();
        for (i, g) in subs {
            all[*i] = g.clone();
        }
        self.compose(&all)
    }
}

impl Series {
    fn nilpotent_bound(&self) -> u32 {
        self.space.cap + self.space.param_cap + 1
    }

    fn require_no_constant(&self, what: &str) -> Result<()> {
        if self.constant_term().norm() > 0.0 {
            return Err(Error::Invalid(format!("{what} needs a series without constant term")));
        }
        Ok(())
    }

    /// Σ coeffs[k] uᵏ for u without constant term; `coeffs` yields the k-th coefficient.
    fn power_series(&self, coeffs: impl Fn(u32) -> f64) -> Series {
        let mut out = Series::constant(&self.space, C64::new(coeffs(0), 0.0));
        let mut p = Series::one(&self.space);
        for k in 1..=self.nilpotent_bound() {
            p = &p * self;
            if p.is_zero() {
                break;
            }
            out = &out + &p.scale_re(coeffs(k));
        }
        out
    }

    /// exp(u) for u without constant term.
    pub fn exp(&self) -> Result<Series> {
        self.require_no_constant("exp")?;
        let mut fact = vec![1.0f64];
        for k in 1..=self.nilpotent_bound() as usize {
            fact.push(fact[k - 1] * k as f64);
        }
        Ok(self.power_series(|k| 1.0 / fact[k as usize]))
    }

    /// log(1 + u) for u without constant term.
    pub fn log_one_plus(&self) -> Result<Series> {
        self.require_no_constant("log")?;
        Ok(self.power_series(|k| if k == 0 { 0.0 } else { (if k % 2 == 1 { 1.0 } else { -1.0 }) / k as f64 }))
    }

    /// (1 + u)^r for u without constant term.
    pub fn one_plus_pow(&self, r: f64) -> Result<Series> {
        self.require_no_constant("power")?;
        let bound = self.nilpotent_bound() as usize;
        let mut binom = vec![1.0f64];
        for k in 1..=bound {
            binom.push(binom[k - 1] * (r - (k as f64 - 1.0)) / k as f64);
        }
        Ok(self.power_series(|k| binom[k as usize]))
    }

    /// Multiplicative inverse when the constant term is nonzero.
    pub fn inverse(&self) -> Result<Series> {
        let c0 = self.constant_term();
        if c0.norm() <= self.space.eps {
            return Err(Error::Singular("series with vanishing constant term".into()));
        }
        let u = &self.scale(1.0 / c0) - &Series::one(&self.space);
        Ok(u.one_plus_pow(-1.0)?.scale(1.0 / c0))
    }
}

impl fmt::Display for Series {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let mut first = true;
        for (e, v) in &self.terms {
            let coef = fmt_complex(*v);
            let (sign, body) = match coef.strip_prefix('-') {
                Some(rest) if !rest.contains(['+', '-']) => ("-", rest.to_string()),
                _ => ("+", coef),
            };
            if first {
                if sign == "-" {
                    write!(f, "-")?;
                }
            } else {
                write!(f, " {sign} ")?;
            }
            first = false;
            let mut factors: Vec<String> = Vec::new();
            for (i, &a) in e.iter().enumerate() {
                match a {
                    0 => {}
                    1 => factors.push(self.space.names[i].clone()),
                    _ => factors.push(format!("{}^{}", self.space.names[i], a)),
                }
            }
            if factors.is_empty() {
                write!(f, "{body}")?;
            } else if body == "1" {
                write!(f, "{}", factors.join("*"))?;
            } else {
                write!(f, "{}*{}", body, factors.join("*"))?;
            }
        }
        Ok(())
    }
}

fn fmt_real(x: f64) -> String {
    let r = (x * 1e12).round() / 1e12;
    let s = format!("{r}");
    if s == "-0" {
        "0".into()
    } else {
        s
    }
}

pub fn fmt_complex(v: C64) -> String {
    let tiny = 1e-12;
    if v.im.abs() < tiny {
        fmt_real(v.re)
    } else if v.re.abs() < tiny {
        if (v.im - 1.0).abs() < tiny {
            "i".into()
        } else if (v.im + 1.0).abs() < tiny {
            "-i".into()
        } else {
            format!("{}i", fmt_real(v.im))
        }
    } else {
        let sign = if v.im < 0.0 { "-" } else { "+" };
        format!("({}{}{}i)", fmt_real(v.re), sign, fmt_real(v.im.abs()))
    }
}

macro_rules! binop {
    ($tr:ident, $m:ident, $inner:ident) => {
        impl $tr<&Series> for &Series {
            type Output = Series;
            fn $m(self, rhs: &Series) -> Series {
                self.$inner(rhs).expect("series operands share a space")
            }
        }
        impl $tr<Series> for Series {
            type Output = Series;
            fn $m(self, rhs: Series) -> Series {
                (&self).$m(&rhs)
            }
        }
        impl $tr<&Series> for Series {
            type Output = Series;
            fn $m(self, rhs: &Series) -> Series {
                (&self).$m(rhs)
            }
        }
        impl $tr<Series> for &Series {
            type Output = Series;
            fn $m(self, rhs: Series) -> Series {
                self.$m(&rhs)
            }
        }
    };
}

binop!(Add, add, try_add);
binop!(Sub, sub, try_sub);
binop!(Mul, mul, try_mul);

impl Neg for &Series {
    type Output = Series;
    fn neg(self) -> Series {
        self.scale(C64::new(-1.0, 0.0))
    }
}

impl Neg for Series {
    type Output = Series;
    fn neg(self) -> Series {
        -&self
    }
}

impl Series {
    // Method forms so callers need not import the operator traits.
    pub fn add(&self, other: &Series) -> Series {
        self + other
    }
    pub fn sub(&self, other: &Series) -> Series {
        self - other
    }
    pub fn mul(&self, other: &Series) -> Series {
        self * other
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn xy(cap: u32) -> Arc<Space> {
        Space::new(["x", "y", "h"], vec![1, 1, 2], cap)
    }

    fn one() -> C64 {
        C64::new(1.0, 0.0)
    }

    #[test]
    fn difference_of_squares() {
        let sp = xy(4);
        let x = Series::var(&sp, 0);
        let a = &Series::one(&sp) + &x;
        let b = &Series::one(&sp) - &x;
        let expect = &Series::one(&sp) - &(&x * &x);
        assert_eq!(&a * &b, expect);
    }

    #[test]
    fn products_drop_terms_above_cap() {
        let sp = xy(2);
        let x = Series::var(&sp, 0);
        let s = &(&Series::one(&sp) + &x) + &(&x * &x);
        let p = &(&x * &s) * &x;
        assert_eq!(p, &x * &x);
    }

    #[test]
    fn hbar_weight_in_composition() {
        let sp = xy(6);
        let x = Series::var(&sp, 0);
        let h = Series::var(&sp, 2);
        let f = &x * &x;
        let g = &x + &h;
        let out = f.compose_partial(&[(0, g)]).unwrap();
        let expect = &(&(&x * &x) + &(&x * &h).scale_re(2.0)) + &(&h * &h);
        assert!(out.max_abs_diff(&expect) < 1e-12);
    }

    #[test]
    fn identity_composition() {
        let sp = xy(5);
        let f = parse::parse_series("1 + x*y - 3*x^3 + 2i*h*y", &sp).unwrap();
        let ids: Vec<Series> = (0..3).map(|i| Series::var(&sp, i)).collect();
        assert_eq!(f.compose(&ids).unwrap(), f);
    }

    #[test]
    fn constant_substitution_rejected() {
        let sp = xy(5);
        let f = Series::var(&sp, 0);
        let g = &Series::var(&sp, 0) + &Series::one(&sp);
        assert_eq!(f.compose_partial(&[(0, g)]), Err(Error::NonzeroConstant(0)));
    }

    #[test]
    fn shift_matches_binomial() {
        let sp = xy(6);
        let f = parse::parse_series("x^3 + x*y", &sp).unwrap();
        let g = f.shift(&[c(2.0, 0.0), c(-1.0, 0.0), C64::zero()]);
        let expect = parse::parse_series("x^3 + 6*x^2 + 12*x + 8 + x*y - x + 2*y - 2", &sp).unwrap();
        assert!(g.max_abs_diff(&expect) < 1e-12);
    }

    #[test]
    fn parameters_have_their_own_cap() {
        let sp = Space::with_options(["x", "p"], vec![1, 0], 3, 1, DEFAULT_EPS);
        let x = Series::var(&sp, 0);
        let p = Series::var(&sp, 1);
        let s = &x + &p;
        let sq = &s * &s;
        // p^2 is beyond the parameter cap
        assert_eq!(sq.coeff(&[0, 2]), C64::zero());
        assert_eq!(sq.coeff(&[1, 1]), c(2.0, 0.0));
    }

    fn naive_product(a: &Series, b: &Series) -> Series {
        let sp = a.space().clone();
        let mut terms = Vec::new();
        for (ea, va) in a.iter() {
            for (eb, vb) in b.iter() {
                let e: Exp = ea.iter().zip(eb.iter()).map(|(p, q)| p + q).collect();
                terms.push((e, va * vb));
            }
        }
        Series::from_terms(&sp, terms)
    }

    fn arb_series(sp: Arc<Space>, max_terms: usize) -> impl Strategy<Value = Series> {
        proptest::collection::vec(((0u16..4, 0u16..4, 0u16..2), -3i32..4, -3i32..4), 0..max_terms).prop_map(
            move |ts| {
                Series::from_terms(
                    &sp,
                    ts.into_iter().map(|((a, b, h), re, im)| (Exp::from_slice(&[a, b, h]), c(re as f64, im as f64))),
                )
            },
        )
    }

    proptest! {
        #[test]
        fn product_matches_distributive_oracle(a in arb_series(xy(6), 8), b in arb_series(xy(6), 8)) {
            prop_assert!((&a * &b).max_abs_diff(&naive_product(&a, &b)) < 1e-9);
        }

        #[test]
        fn product_commutative_associative(a in arb_series(xy(5), 6), b in arb_series(xy(5), 6), d in arb_series(xy(5), 6)) {
            prop_assert!((&a * &b).max_abs_diff(&(&b * &a)) < 1e-9);
            let l = &(&a * &b) * &d;
            let r = &a * &(&b * &d);
            prop_assert!(l.max_abs_diff(&r) < 1e-6 * (1.0 + l.max_abs()));
        }

        #[test]
        fn insertion_order_irrelevant(a in arb_series(xy(6), 10)) {
            let mut ts: Vec<(Exp, C64)> = a.iter().map(|(e, v)| (e.clone(), *v)).collect();
            ts.reverse();
            prop_assert_eq!(Series::from_terms(a.space(), ts), a.clone());
        }

        #[test]
        fn all_terms_within_cap(a in arb_series(xy(4), 10), b in arb_series(xy(4), 10)) {
            let p = &a * &b;
            for (e, v) in p.iter() {
                prop_assert!(p.space().weighted_degree(e) <= 4);
                prop_assert!(v.norm() >= DEFAULT_EPS);
            }
        }

        #[test]
        fn composition_associative(seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let sp = Space::new(["x", "y"], vec![1, 1], 5);
            let mut cubic = |lin: bool| {
                let mut ts = Vec::new();
                for a in 0u16..4 { for b in 0u16..4 {
                    let d = a + b;
                    if d == 0 || d > 3 || (!lin && d == 0) { continue; }
                    ts.push((Exp::from_slice(&[a, b]), c(rng.gen_range(-2..=2) as f64, 0.0)));
                }}
                Series::from_terms(&sp, ts)
            };
            let f = cubic(true);
            let g = [cubic(false), cubic(false)];
            let k = [cubic(false), cubic(false)];
            let lhs = f.compose(&g).unwrap().compose(&k).unwrap();
            let gk: Vec<Series> = g.iter().map(|gi| gi.compose(&k).unwrap()).collect();
            let rhs = f.compose(&gk).unwrap();
            prop_assert!(lhs.max_abs_diff(&rhs) < 1e-6 * (1.0 + lhs.max_abs()));
        }
    }

    #[test]
    fn elementary_functions() {
        let sp = Space::new(["x"], vec![1], 8);
        let x = Series::var(&sp, 0);
        let e = x.exp().unwrap();
        let l = (&e - &Series::one(&sp)).log_one_plus().unwrap();
        assert!(l.max_abs_diff(&x) < 1e-12);
        let r = x.one_plus_pow(0.5).unwrap();
        assert!((&r * &r).max_abs_diff(&(&Series::one(&sp) + &x)) < 1e-12);
        let inv = (&Series::one(&sp).scale_re(2.0) + &x).inverse().unwrap();
        assert!((&inv * &(&Series::one(&sp).scale_re(2.0) + &x)).max_abs_diff(&Series::one(&sp)) < 1e-12);
        assert!(Series::one(&sp).exp().is_err());
    }

    #[test]
    fn display_is_readable() {
        let sp = xy(4);
        let f = parse::parse_series("2*x^2*y - h + 1.5i", &sp).unwrap();
        let shown = f.to_string();
        let back = parse::parse_series(&shown, &sp).unwrap();
        assert!(back.max_abs_diff(&f) < 1e-12, "{shown}");
        assert_eq!(Series::zero(&sp).to_string(), "0");
        let _ = one();
    }
}
