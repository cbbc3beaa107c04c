//! Scalars of the form e^{ia/ℏ} · e^{iπk/4} · Σ c_j ℏ^j with finitely many
//! negative powers.

use std::collections::BTreeMap;
use std::fmt;

use num::rational::Ratio;
use num::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use super::C64;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Exponent {
    Exact { num: i64, den: i64 },
    Real { value: f64 },
}

impl Exponent {
    pub fn zero() -> Self {
        Exponent::Exact { num: 0, den: 1 }
    }
    pub fn exact(r: Ratio<i64>) -> Self {
        Exponent::Exact { num: *r.numer(), den: *r.denom() }
    }
    pub fn real(v: f64) -> Self {
        Exponent::Real { value: v }
    }
    pub fn value(&self) -> f64 {
        match *self {
            Exponent::Exact { num, den } => num as f64 / den as f64,
            Exponent::Real { value } => value,
        }
    }
    pub fn is_exact(&self) -> bool {
        matches!(self, Exponent::Exact { .. })
    }
    pub fn add(&self, o: &Exponent) -> Exponent {
        match (*self, *o) {
            (Exponent::Exact { num: a, den: b }, Exponent::Exact { num: c, den: d }) => {
                Exponent::exact(Ratio::new(a, b) + Ratio::new(c, d))
            }
            _ => Exponent::real(self.value() + o.value()),
        }
    }
    pub fn neg(&self) -> Exponent {
        match *self {
            Exponent::Exact { num, den } => Exponent::Exact { num: -num, den },
            Exponent::Real { value } => Exponent::Real { value: -value },
        }
    }
    pub fn to_ratio(&self) -> Option<Ratio<i64>> {
        match *self {
            Exponent::Exact { num, den } => Some(Ratio::new(num, den)),
            Exponent::Real { .. } => None,
        }
    }
}

/// An element of C[[ℏ]][ℏ⁻¹, e^{ia/ℏ}] truncated at ℏ^cap, with an exactly
/// tracked eighth root of unity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OscillatoryScalar {
    pub exponent: Exponent,
    /// Power k of e^{iπ/4}, reduced mod 8.
    pub phase8: u8,
    pub laurent: BTreeMap<i32, C64>,
    pub cap: i32,
}

impl OscillatoryScalar {
    pub fn one(cap: i32) -> Self {
        Self::constant(C64::new(1.0, 0.0), cap)
    }

    pub fn constant(v: C64, cap: i32) -> Self {
        let mut laurent = BTreeMap::new();
        if v != C64::zero() {
            laurent.insert(0, v);
        }
        OscillatoryScalar { exponent: Exponent::zero(), phase8: 0, laurent, cap }
    }

    pub fn from_laurent(laurent: BTreeMap<i32, C64>, cap: i32) -> Self {
        let laurent = laurent.into_iter().filter(|&(k, v)| k <= cap && v != C64::zero()).collect();
        OscillatoryScalar { exponent: Exponent::zero(), phase8: 0, laurent, cap }
    }

    pub fn with_exponent(mut self, e: Exponent) -> Self {
        self.exponent = e;
        self
    }

    pub fn with_phase8(mut self, k: i64) -> Self {
        self.phase8 = k.rem_euclid(8) as u8;
        self
    }

    /// Multiplies by e^{iπk/4}.
    pub fn rotate8(&self, k: i64) -> Self {
        let mut s = self.clone();
        s.phase8 = (s.phase8 as i64 + k).rem_euclid(8) as u8;
        s
    }

    /// Multiplies by i^k, the central character.
    pub fn central(&self, k: i64) -> Self {
        self.rotate8(2 * k)
    }

    pub fn scale(&self, v: C64) -> Self {
        let mut s = self.clone();
        for c in s.laurent.values_mut() {
            *c *= v;
        }
        s
    }

    pub fn mul(&self, o: &OscillatoryScalar) -> OscillatoryScalar {
        let cap = self.cap.min(o.cap);
        let mut laurent: BTreeMap<i32, C64> = BTreeMap::new();
        for (&a, &x) in &self.laurent {
            for (&b, &y) in &o.laurent {
                if a + b <= cap {
                    *laurent.entry(a + b).or_insert_with(C64::zero) += x * y;
                }
            }
        }
        OscillatoryScalar {
            exponent: self.exponent.add(&o.exponent),
            phase8: (self.phase8 + o.phase8) % 8,
            laurent,
            cap,
        }
    }

    /// Inverse when the lowest Laurent coefficient is invertible.
    pub fn inverse(&self) -> Option<OscillatoryScalar> {
        let (&lo, &c0) = self.laurent.iter().next()?;
        if c0.norm() == 0.0 {
            return None;
        }
        // Invert u = c0 ℏ^lo (1 + r) with r ∈ ℏC[[ℏ]].
        let span = self.cap - lo;
        let r: Vec<C64> = (0..=span.max(0)).map(|j| self.laurent.get(&(lo + j)).copied().unwrap_or_default() / c0).collect();
        let mut inv = vec![C64::zero(); r.len()];
        inv[0] = C64::new(1.0, 0.0);
        for j in 1..r.len() {
            let mut acc = C64::zero();
            for k in 1..=j {
                acc += r[k] * inv[j - k];
            }
            inv[j] = -acc;
        }
        // Coefficients of r are known up to ℏ^{cap-lo}, which bounds the result.
        let cap = self.cap.min(self.cap - 2 * lo);
        let laurent = inv
            .into_iter()
            .enumerate()
            .map(|(j, v)| (j as i32 - lo, v / c0))
            .filter(|&(k, v)| k <= cap && v != C64::zero())
            .collect();
        Some(OscillatoryScalar {
            exponent: self.exponent.neg(),
            phase8: (8 - self.phase8) % 8,
            laurent,
            cap,
        })
    }

    pub fn phase_factor(&self) -> C64 {
        C64::from_polar(1.0, std::f64::consts::PI / 4.0 * self.phase8 as f64)
    }

    /// Coefficient of ℏ^k including the eighth-root phase, excluding e^{ia/ℏ}.
    pub fn coeff(&self, k: i32) -> C64 {
        self.laurent.get(&k).copied().unwrap_or_default() * self.phase_factor()
    }

    /// Numerical value at a given ℏ > 0.
    pub fn value_at(&self, hbar: f64) -> C64 {
        let osc = C64::from_polar(1.0, self.exponent.value() / hbar);
        let series: C64 = self.laurent.iter().map(|(&k, &v)| v * hbar.powi(k)).sum();
        osc * self.phase_factor() * series
    }

    pub fn lowest_power(&self) -> Option<i32> {
        self.laurent.keys().next().copied()
    }

    /// Moves the eighth-root phase into the coefficients.
    pub fn flattened(&self) -> BTreeMap<i32, C64> {
        let p = self.phase_factor();
        self.laurent.iter().map(|(&k, &v)| (k, v * p)).collect()
    }

    /// Largest coefficient gap against another scalar; exponents must agree
    /// to within `tol` or the gap is infinite.
    pub fn distance(&self, o: &OscillatoryScalar, tol: f64) -> f64 {
        if (self.exponent.value() - o.exponent.value()).abs() > tol {
            return f64::INFINITY;
        }
        let a = self.flattened();
        let b = o.flattened();
        let cap = self.cap.min(o.cap);
        a.keys()
            .chain(b.keys())
            .filter(|&&k| k <= cap)
            .map(|k| (a.get(k).copied().unwrap_or_default() - b.get(k).copied().unwrap_or_default()).norm())
            .fold(0.0, f64::max)
    }
}

impl fmt::Display for OscillatoryScalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let a = self.exponent.value();
        if a != 0.0 {
            match self.exponent.to_ratio() {
                Some(r) => write!(f, "exp(i*({})/h) * ", r)?,
                None => write!(f, "exp(i*{a}/h) * ")?,
            }
        }
        if self.phase8 != 0 {
            write!(f, "exp(i*pi*{}/4) * ", self.phase8)?;
        }
        let parts: Vec<String> = self
            .laurent
            .iter()
            .map(|(k, v)| match k {
                0 => super::fmt_complex(*v),
                1 => format!("{}*h", super::fmt_complex(*v)),
                _ => format!("{}*h^{}", super::fmt_complex(*v), k),
            })
            .collect();
        if parts.is_empty() {
            write!(f, "0")
        } else {
            write!(f, "({})", parts.join(" + "))
        }
    }
}

pub fn ratio_to_f64(r: &Ratio<i64>) -> f64 {
    r.to_f64().unwrap_or(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn multiplication_adds_exponents_and_convolves() {
        let a = OscillatoryScalar::from_laurent([(-1, C64::new(2.0, 0.0)), (0, C64::new(1.0, 0.0))].into(), 3)
            .with_exponent(Exponent::exact(Ratio::new(1, 2)))
            .with_phase8(3);
        let b = OscillatoryScalar::from_laurent([(1, C64::new(1.0, 1.0))].into(), 3)
            .with_exponent(Exponent::exact(Ratio::new(1, 3)))
            .with_phase8(7);
        let p = a.mul(&b);
        assert_eq!(p.exponent, Exponent::exact(Ratio::new(5, 6)));
        assert_eq!(p.phase8, 2);
        assert_eq!(p.laurent[&0], C64::new(2.0, 2.0));
        assert_eq!(p.laurent[&1], C64::new(1.0, 1.0));
        let mixed = p.mul(&OscillatoryScalar::one(3).with_exponent(Exponent::real(0.5)));
        assert!(!mixed.exponent.is_exact());
    }

    #[test]
    fn inverse_round_trip() {
        let a = OscillatoryScalar::from_laurent(
            [(-1, C64::new(2.0, 0.0)), (0, C64::new(1.0, -1.0)), (2, C64::new(0.5, 0.0))].into(),
            4,
        )
        .with_phase8(5);
        let p = a.mul(&a.inverse().unwrap());
        assert_eq!(p.phase8, 0);
        assert!((p.laurent[&0] - 1.0).norm() < 1e-12);
        for k in 1..=3 {
            assert!(p.laurent.get(&k).map_or(0.0, |v| v.norm()) < 1e-12);
        }
    }

    #[test]
    fn value_at_includes_all_factors() {
        let a = OscillatoryScalar::from_laurent([(0, C64::new(1.0, 0.0)), (1, C64::new(3.0, 0.0))].into(), 2)
            .with_exponent(Exponent::real(0.25))
            .central(1);
        let h = 0.1;
        let expect = C64::from_polar(1.0, 0.25 / h) * C64::i() * (1.0 + 3.0 * h);
        assert!((a.value_at(h) - expect).norm() < 1e-12);
    }
}
