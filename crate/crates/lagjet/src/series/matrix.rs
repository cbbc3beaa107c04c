//! Symmetric matrices in exact-rational or complex mode, and the complex
//! linear algebra used by the Gaussian kernels.

use nalgebra::DMatrix;
use num::rational::BigRational;
use num::Zero;
use serde::{Deserialize, Serialize};

use super::parse::{parse_rational, rat_to_f64};
use super::C64;
use crate::error::{Error, Result};

pub type CMat = DMatrix<C64>;

#[derive(Clone, Debug, PartialEq)]
pub enum SymmetricMatrix {
    Rational(Vec<Vec<BigRational>>),
    Complex(CMat),
}

impl SymmetricMatrix {
    pub fn rational(rows: Vec<Vec<BigRational>>) -> Result<Self> {
        let n = rows.len();
        for (i, r) in rows.iter().enumerate() {
            if r.len() != n {
                return Err(Error::Invalid("matrix is not square".into()));
            }
            for j in 0..i {
                if rows[i][j] != rows[j][i] {
                    return Err(Error::Invalid(format!("entries ({i},{j}) and ({j},{i}) differ")));
                }
            }
        }
        Ok(SymmetricMatrix::Rational(rows))
    }

    pub fn complex(m: CMat) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::Invalid("matrix is not square".into()));
        }
        for i in 0..m.nrows() {
            for j in 0..i {
                if m[(i, j)] != m[(j, i)] {
                    return Err(Error::Invalid(format!("entries ({i},{j}) and ({j},{i}) differ")));
                }
            }
        }
        Ok(SymmetricMatrix::Complex(m))
    }

    pub fn from_real(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        Self::complex(CMat::from_fn(n, n, |i, j| C64::new(rows[i][j], 0.0)))
    }

    pub fn dim(&self) -> usize {
        match self {
            SymmetricMatrix::Rational(r) => r.len(),
            SymmetricMatrix::Complex(m) => m.nrows(),
        }
    }

    pub fn to_complex(&self) -> CMat {
        match self {
            SymmetricMatrix::Rational(r) => {
                let n = r.len();
                CMat::from_fn(n, n, |i, j| C64::new(rat_to_f64(&r[i][j]), 0.0))
            }
            SymmetricMatrix::Complex(m) => m.clone(),
        }
    }

    pub fn as_rational(&self) -> Option<&Vec<Vec<BigRational>>> {
        match self {
            SymmetricMatrix::Rational(r) => Some(r),
            SymmetricMatrix::Complex(_) => None,
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
enum MatrixJson {
    Rational { entries: Vec<Vec<String>> },
    Complex { entries: Vec<Vec<[f64; 2]>> },
}

impl Serialize for SymmetricMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let j = match self {
            SymmetricMatrix::Rational(r) => {
                MatrixJson::Rational { entries: r.iter().map(|row| row.iter().map(|q| q.to_string()).collect()).collect() }
            }
            SymmetricMatrix::Complex(m) => MatrixJson::Complex {
                entries: (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect()).collect(),
            },
        };
        j.serialize(s)
    }
}

impl<'de> Deserialize<'de> for SymmetricMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        match MatrixJson::deserialize(d)? {
            MatrixJson::Rational { entries } => {
                let rows = entries
                    .iter()
                    .map(|r| r.iter().map(|t| parse_rational(t)).collect::<Result<Vec<_>>>())
                    .collect::<Result<Vec<_>>>()
                    .map_err(D::Error::custom)?;
                SymmetricMatrix::rational(rows).map_err(D::Error::custom)
            }
            MatrixJson::Complex { entries } => {
                let n = entries.len();
                if entries.iter().any(|r| r.len() != n) {
                    return Err(D::Error::custom("matrix is not square"));
                }
                let m = CMat::from_fn(n, n, |i, j| C64::new(entries[i][j][0], entries[i][j][1]));
                SymmetricMatrix::complex(m).map_err(D::Error::custom)
            }
        }
    }
}

pub fn cmat_from_real(rows: &[Vec<f64>]) -> CMat {
    let n = rows.len();
    let m = if n == 0 { 0 } else { rows[0].len() };
    CMat::from_fn(n, m, |i, j| C64::new(rows[i][j], 0.0))
}

pub fn is_real(m: &CMat) -> bool {
    m.iter().all(|v| v.im == 0.0)
}

/// Inverse with a determinant guard.
pub fn inverse(m: &CMat, eps: f64, what: &str) -> Result<CMat> {
    if m.nrows() == 0 {
        return Ok(m.clone());
    }
    let det = m.determinant();
    if det.norm() <= eps {
        return Err(Error::Singular(format!("{what} (|det| = {:.3e})", det.norm())));
    }
    m.clone().try_inverse().ok_or_else(|| Error::Singular(what.to_string()))
}

/// Eigenvalues of a square complex matrix.
pub fn eigenvalues(m: &CMat) -> Vec<C64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    if is_real(m) && (0..m.nrows()).all(|i| (0..i).all(|j| m[(i, j)] == m[(j, i)])) {
        let re = m.map(|v| v.re);
        return re.symmetric_eigenvalues().iter().map(|&l| C64::new(l, 0.0)).collect();
    }
    // Over C the Schur form is triangular; its diagonal holds the spectrum.
    let (_, t) = m.clone().schur().unpack();
    t.diagonal().iter().copied().collect()
}

/// ∏ₖ (−iλₖ)^{-1/2} with principal square roots.
///
/// For real symmetric `h` this is e^{iπ/4·sgn h}|det h|^{-1/2}; for complex
/// symmetric `h` with Im h ≥ 0 every −iλₖ has nonnegative real part, so the
/// principal branch varies continuously.
pub fn gaussian_prefactor(h: &CMat, eps: f64) -> Result<C64> {
    let mut out = C64::new(1.0, 0.0);
    for l in eigenvalues(h) {
        if l.norm() <= eps {
            return Err(Error::Degenerate(format!("Hessian (eigenvalue {l})")));
        }
        out /= (C64::new(0.0, -1.0) * l).sqrt();
    }
    Ok(out)
}

/// Number of positive minus number of negative eigenvalues of a real symmetric matrix.
pub fn float_signature(h: &CMat, eps: f64) -> Result<i32> {
    let mut s = 0;
    for l in eigenvalues(h) {
        if l.re.abs() <= eps {
            return Err(Error::Degenerate("symmetric form".into()));
        }
        s += if l.re > 0.0 { 1 } else { -1 };
    }
    Ok(s)
}

pub fn max_abs(m: &CMat) -> f64 {
    m.iter().map(|v| v.norm()).fold(0.0, f64::max)
}

pub fn is_zero_rat(rows: &[Vec<BigRational>]) -> bool {
    rows.iter().all(|r| r.iter().all(Zero::is_zero))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn prefactor_matches_signature_formula() {
        for k in [1.0, -1.0, 2.0, -2.0, 3.0] {
            let h = cmat_from_real(&[vec![k]]);
            let p = gaussian_prefactor(&h, 1e-12).unwrap();
            let expect = C64::from_polar(1.0 / f64::abs(k).sqrt(), PI / 4.0 * f64::signum(k));
            assert!((p - expect).norm() < 1e-14);
        }
        let h = cmat_from_real(&[vec![1.0, 2.0], vec![2.0, 1.0]]);
        let p = gaussian_prefactor(&h, 1e-12).unwrap();
        assert!((p - C64::new(1.0 / 3f64.sqrt(), 0.0)).norm() < 1e-12);
    }

    #[test]
    fn complex_prefactor_of_standard_gaussian() {
        let h = CMat::from_element(1, 1, C64::new(0.0, 1.0));
        assert!((gaussian_prefactor(&h, 1e-12).unwrap() - 1.0).norm() < 1e-14);
    }

    #[test]
    fn symmetry_enforced() {
        assert!(SymmetricMatrix::from_real(&[vec![1.0, 2.0], vec![3.0, 1.0]]).is_err());
        let m = SymmetricMatrix::rational(vec![vec![BigRational::from_integer(1.into())]]).unwrap();
        let j = serde_json::to_string(&m).unwrap();
        assert_eq!(serde_json::from_str::<SymmetricMatrix>(&j).unwrap(), m);
    }

    #[test]
    fn degenerate_rejected() {
        let h = cmat_from_real(&[vec![1.0, 1.0], vec![1.0, 1.0]]);
        assert!(matches!(gaussian_prefactor(&h, 1e-9), Err(Error::Degenerate(_))));
        assert!(inverse(&h, 1e-9, "test").is_err());
    }
}
