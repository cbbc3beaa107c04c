//! Polynomial expressions such as `x^2*xi - 3/2*h + (1+2i)*y`.
//!
//! Coefficients are parsed exactly as Gaussian rationals; decimals like
//! `0.25` become `1/4`. The identifier `i` is the imaginary unit.

use std::collections::BTreeMap;
use std::sync::Arc;

use num::bigint::BigInt;
use num::complex::Complex;
use num::rational::BigRational;
use num::{One, Signed, ToPrimitive, Zero};

use super::{Exp, Series, Space, C64};
use crate::error::{Error, Result};

pub type QC = Complex<BigRational>;

/// A polynomial with exact Gaussian-rational coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct Poly {
    pub vars: Vec<String>,
    pub terms: BTreeMap<Vec<u16>, QC>,
}

impl Poly {
    fn constant(nv: usize, vars: &[String], v: QC) -> Poly {
        let mut terms = BTreeMap::new();
        if !v.is_zero() {
            terms.insert(vec![0; nv], v);
        }
        Poly { vars: vars.to_vec(), terms }
    }

    fn is_constant(&self) -> Option<QC> {
        match self.terms.len() {
            0 => Some(QC::zero()),
            1 => {
                let (e, v) = self.terms.iter().next().unwrap();
                e.iter().all(|&a| a == 0).then(|| v.clone())
            }
            _ => None,
        }
    }

    fn add(&self, o: &Poly, sign: i32) -> Poly {
        let mut terms = self.terms.clone();
        for (e, v) in &o.terms {
            let v = if sign < 0 { -v.clone() } else { v.clone() };
            let entry = terms.entry(e.clone()).or_insert_with(QC::zero);
            *entry = entry.clone() + v;
        }
        terms.retain(|_, v| !v.is_zero());
        Poly { vars: self.vars.clone(), terms }
    }

    fn mul(&self, o: &Poly) -> Poly {
        let mut terms: BTreeMap<Vec<u16>, QC> = BTreeMap::new();
        for (ea, va) in &self.terms {
            for (eb, vb) in &o.terms {
                let e: Vec<u16> = ea.iter().zip(eb).map(|(a, b)| a + b).collect();
                let entry = terms.entry(e).or_insert_with(QC::zero);
                *entry = entry.clone() + va.clone() * vb.clone();
            }
        }
        terms.retain(|_, v| !v.is_zero());
        Poly { vars: self.vars.clone(), terms }
    }

    pub fn degree(&self) -> u32 {
        self.terms.keys().map(|e| e.iter().map(|&a| a as u32).sum()).max().unwrap_or(0)
    }

    /// Converts to a series in `space`, matching variables by name.
    pub fn to_series(&self, space: &Arc<Space>) -> Result<Series> {
        let map: Vec<usize> = self
            .vars
            .iter()
            .map(|n| space.index(n).ok_or_else(|| Error::Invalid(format!("unknown variable {n}"))))
            .collect::<Result<_>>()?;
        let terms = self.terms.iter().map(|(e, v)| {
            let mut f: Exp = space.zero_exp();
            for (i, &a) in e.iter().enumerate() {
                f[map[i]] += a;
            }
            (f, qc_to_c64(v))
        });
        Ok(Series::from_terms(space, terms))
    }

    /// Real-rational coefficients, if every imaginary part vanishes.
    pub fn to_rational(&self) -> Option<BTreeMap<Vec<u16>, BigRational>> {
        self.terms.iter().map(|(e, v)| v.im.is_zero().then(|| (e.clone(), v.re.clone()))).collect()
    }
}

pub fn rat_to_f64(r: &BigRational) -> f64 {
    r.to_f64().unwrap_or_else(|| r.numer().to_f64().unwrap() / r.denom().to_f64().unwrap())
}

pub fn qc_to_c64(v: &QC) -> C64 {
    C64::new(rat_to_f64(&v.re), rat_to_f64(&v.im))
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(BigRational, bool),
    Ident(String),
    Op(char),
}

fn lex(src: &str) -> Result<Vec<(usize, Tok)>> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let ch = bytes[i] as char;
        if ch.is_whitespace() {
            i += 1;
        } else if ch.is_ascii_digit() || ch == '.' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            let text = &src[start..i];
            let value = parse_decimal(text).ok_or(Error::Parse { pos: start, msg: format!("bad number {text}") })?;
            let imag = i < bytes.len()
                && bytes[i] == b'i'
                && !(i + 1 < bytes.len() && (bytes[i + 1].is_ascii_alphanumeric() || bytes[i + 1] == b'_'));
            if imag {
                i += 1;
            }
            out.push((start, Tok::Num(value, imag)));
        } else if ch.is_ascii_alphabetic() || ch == '_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((start, Tok::Ident(src[start..i].to_string())));
        } else if "+-*/^()".contains(ch) {
            out.push((i, Tok::Op(ch)));
            i += 1;
        } else {
            return Err(Error::Parse { pos: i, msg: format!("unexpected character {ch:?}") });
        }
    }
    Ok(out)
}

/// Parses `12`, `0.125`, `3.` exactly.
pub fn parse_decimal(text: &str) -> Option<BigRational> {
    let (int, frac) = match text.split_once('.') {
        Some((a, b)) => (a, b),
        None => (text, ""),
    };
    if int.is_empty() && frac.is_empty() || frac.contains('.') {
        return None;
    }
    let digits = format!("{int}{frac}");
    let n: BigInt = digits.parse().ok()?;
    let d = num::pow(BigInt::from(10), frac.len());
    Some(BigRational::new(n, d))
}

/// Parses `3/4`, `-2`, `0.5` into an exact rational.
pub fn parse_rational(text: &str) -> Result<BigRational> {
    let p = parse_poly::<&str>(text, &[])?;
    let v = p.is_constant().unwrap();
    if !v.im.is_zero() {
        return Err(Error::Parse { pos: 0, msg: format!("{text} is not real") });
    }
    Ok(v.re)
}

struct Parser<'a> {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    vars: &'a [String],
    len: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.1)
    }
    fn at(&self) -> usize {
        self.toks.get(self.pos).map(|t| t.0).unwrap_or(self.len)
    }
    fn err<T>(&self, msg: impl Into<String>) -> Result<T> {
        Err(Error::Parse { pos: self.at(), msg: msg.into() })
    }
    fn konst(&self, v: QC) -> Poly {
        Poly::constant(self.vars.len(), self.vars, v)
    }

    fn expr(&mut self) -> Result<Poly> {
        let mut acc = self.term()?;
        while let Some(Tok::Op(op @ ('+' | '-'))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.term()?;
            acc = acc.add(&rhs, if op == '-' { -1 } else { 1 });
        }
        Ok(acc)
    }

    fn term(&mut self) -> Result<Poly> {
        let mut acc = self.unary()?;
        while let Some(Tok::Op(op @ ('*' | '/'))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.unary()?;
            if op == '*' {
                acc = acc.mul(&rhs);
            } else {
                let d = match rhs.is_constant() {
                    Some(d) if !d.is_zero() => d,
                    Some(_) => return self.err("division by zero"),
                    None => return self.err("division by a non-constant"),
                };
                acc = acc.mul(&self.konst(QC::one() / d));
            }
        }
        Ok(acc)
    }

    fn unary(&mut self) -> Result<Poly> {
        match self.peek() {
            Some(Tok::Op('-')) => {
                self.pos += 1;
                let p = self.unary()?;
                Ok(self.konst(QC::zero()).add(&p, -1))
            }
            Some(Tok::Op('+')) => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Poly> {
        let base = self.primary()?;
        if let Some(Tok::Op('^')) = self.peek() {
            self.pos += 1;
            let k = match self.peek().cloned() {
                Some(Tok::Num(v, false)) if v.is_integer() && !v.is_negative() => v.to_integer(),
                _ => return self.err("exponent must be a non-negative integer"),
            };
            self.pos += 1;
            let k = k.to_u32().ok_or(Error::Parse { pos: self.at(), msg: "exponent too large".into() })?;
            let mut out = self.konst(QC::one());
            for _ in 0..k {
                out = out.mul(&base);
            }
            return Ok(out);
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Poly> {
        match self.peek().cloned() {
            Some(Tok::Num(v, imag)) => {
                self.pos += 1;
                let z = if imag { QC::new(BigRational::zero(), v) } else { QC::new(v, BigRational::zero()) };
                Ok(self.konst(z))
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                if let Some(j) = self.vars.iter().position(|v| *v == name) {
                    let mut e = vec![0u16; self.vars.len()];
                    e[j] = 1;
                    let mut terms = BTreeMap::new();
                    terms.insert(e, QC::one());
                    Ok(Poly { vars: self.vars.to_vec(), terms })
                } else if name == "i" {
                    Ok(self.konst(QC::i()))
                } else {
                    self.pos -= 1;
                    self.err(format!("unknown variable {name}"))
                }
            }
            Some(Tok::Op('(')) => {
                self.pos += 1;
                let p = self.expr()?;
                if self.peek() != Some(&Tok::Op(')')) {
                    return self.err("expected ')'");
                }
                self.pos += 1;
                Ok(p)
            }
            _ => self.err("expected a number, variable or '('"),
        }
    }
}

/// Parses `src` as a polynomial in the given variables.
pub fn parse_poly<S: AsRef<str>>(src: &str, vars: &[S]) -> Result<Poly> {
    let vars: Vec<String> = vars.iter().map(|s| s.as_ref().to_string()).collect();
    let toks = lex(src)?;
    let mut p = Parser { toks, pos: 0, vars: &vars, len: src.len() };
    if p.toks.is_empty() {
        return p.err("empty expression");
    }
    let out = p.expr()?;
    if p.pos != p.toks.len() {
        return p.err("trailing input");
    }
    Ok(out)
}

/// Parses `src` into a series of `space`, truncating at its cap.
pub fn parse_series(src: &str, space: &Arc<Space>) -> Result<Series> {
    parse_poly(src, space.names())?.to_series(space)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(n: i64, d: i64) -> BigRational {
        BigRational::new(n.into(), d.into())
    }

    #[test]
    fn exact_rationals() {
        let p = parse_poly("3/2*x^2 - 0.25*x*y + 7", &["x", "y"]).unwrap();
        let r = p.to_rational().unwrap();
        assert_eq!(r[&vec![2, 0]], q(3, 2));
        assert_eq!(r[&vec![1, 1]], q(-1, 4));
        assert_eq!(r[&vec![0, 0]], q(7, 1));
    }

    #[test]
    fn imaginary_literals() {
        let p = parse_poly("(1+2i)*x - i", &["x"]).unwrap();
        assert_eq!(p.terms[&vec![1]], QC::new(q(1, 1), q(2, 1)));
        assert_eq!(p.terms[&vec![0]], QC::new(q(0, 1), q(-1, 1)));
        assert!(p.to_rational().is_none());
    }

    #[test]
    fn powers_of_sums_expand() {
        let p = parse_poly("(x+1)^3", &["x"]).unwrap();
        assert_eq!(p.terms.len(), 4);
        assert_eq!(p.terms[&vec![2]], QC::new(q(3, 1), q(0, 1)));
    }

    #[test]
    fn variable_named_like_unit_prefix() {
        let p = parse_poly("xi*x + 2*xi", &["x", "xi"]).unwrap();
        assert_eq!(p.terms.len(), 2);
    }

    #[test]
    fn errors_carry_positions() {
        assert!(matches!(parse_poly("x + z", &["x"]), Err(Error::Parse { pos: 4, .. })));
        assert!(matches!(parse_poly("x / x", &["x"]), Err(Error::Parse { .. })));
        assert!(matches!(parse_poly("(x", &["x"]), Err(Error::Parse { .. })));
        assert!(matches!(parse_poly("", &["x"]), Err(Error::Parse { .. })));
        assert_eq!(parse_rational("-3/4").unwrap(), q(-3, 4));
    }
}
