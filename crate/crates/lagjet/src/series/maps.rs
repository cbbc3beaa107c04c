//! Formal maps x ↦ g(x) and their inverses.

use super::matrix::{inverse, CMat};
use super::{Series, C64};
use crate::error::{Error, Result};

/// Linear part of a map acting on the first `g.len()` variables.
pub fn linear_part(g: &[Series]) -> CMat {
    let m = g.len();
    CMat::from_fn(m, m, |k, j| g[k].coeff(&g[k].space().unit_exp(j)))
}

/// Substitutes `g` for the first `g.len()` variables of `f`, keeping the rest.
pub fn apply_map(f: &Series, g: &[Series]) -> Result<Series> {
    let subs: Vec<(usize, Series)> = g.iter().cloned().enumerate().collect();
    f.compose_partial(&subs)
}

/// Componentwise composition g ∘ h.
pub fn compose_maps(g: &[Series], h: &[Series]) -> Result<Vec<Series>> {
    g.iter().map(|gk| apply_map(gk, h)).collect()
}

pub fn identity_map(space: &std::sync::Arc<super::Space>, m: usize) -> Vec<Series> {
    (0..m).map(|i| Series::var(space, i)).collect()
}

/// Inverse of a formal map with invertible linear part, computed by the
/// degree-raising iteration h ← h − A⁻¹(g∘h − x), run `cap` times.
pub fn invert_map(g: &[Series]) -> Result<Vec<Series>> {
    let m = g.len();
    if m == 0 {
        return Ok(Vec::new());
    }
    let space = g[0].space().clone();
    for (k, gk) in g.iter().enumerate() {
        if gk.iter().any(|(e, _)| space.weighted_degree(e) == 0) {
            return Err(Error::NonzeroConstant(k));
        }
    }
    let a = linear_part(g);
    let ainv = inverse(&a, space.eps(), "linear part of the map")?;
    let x = identity_map(&space, m);
    let lin = |v: &[Series]| -> Vec<Series> {
        (0..m)
            .map(|k| {
                let mut s = Series::zero(&space);
                for j in 0..m {
                    let c: C64 = ainv[(k, j)];
                    if c.norm() > 0.0 {
                        s = &s + &v[j].scale(c);
                    }
                }
                s
            })
            .collect()
    };
    let mut h = lin(&x);
    for _ in 0..space.cap() {
        let gh = compose_maps(g, &h)?;
        let resid: Vec<Series> = gh.iter().zip(&x).map(|(a, b)| a - b).collect();
        if resid.iter().all(Series::is_zero) {
            break;
        }
        let corr = lin(&resid);
        h = h.iter().zip(&corr).map(|(a, b)| a - b).collect();
    }
    Ok(h)
}

/// Jacobian matrix ∂gₖ/∂xⱼ of a map on the first `g.len()` variables.
pub fn jacobian(g: &[Series]) -> Vec<Vec<Series>> {
    g.iter().map(|gk| (0..g.len()).map(|j| gk.derivative(j)).collect()).collect()
}

/// Determinant of a small matrix of series by cofactor expansion.
pub fn series_det(m: &[Vec<Series>]) -> Series {
    let n = m.len();
    match n {
        0 => panic!("empty matrix"),
        1 => m[0][0].clone(),
        _ => {
            let mut acc = Series::zero(m[0][0].space());
            for j in 0..n {
                let minor: Vec<Vec<Series>> =
                    m[1..].iter().map(|row| row.iter().enumerate().filter(|(c, _)| *c != j).map(|(_, v)| v.clone()).collect()).collect();
                let term = &m[0][j] * &series_det(&minor);
                acc = if j % 2 == 0 { &acc + &term } else { &acc - &term };
            }
            acc
        }
    }
}

/// Inverse of a small matrix of series whose constant part is invertible.
pub fn series_matrix_inverse(m: &[Vec<Series>]) -> Result<Vec<Vec<Series>>> {
    let n = m.len();
    let space = m[0][0].space().clone();
    let m0 = CMat::from_fn(n, n, |i, j| m[i][j].constant_term());
    let m0inv = inverse(&m0, space.eps(), "constant part of the matrix")?;
    // M = M0 (1 + N) with N nilpotent in the filtration: M⁻¹ = Σ (−N)^k M0⁻¹.
    let mat_mul = |a: &[Vec<Series>], b: &[Vec<Series>]| -> Vec<Vec<Series>> {
        (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| (0..n).fold(Series::zero(&space), |acc, k| &acc + &(&a[i][k] * &b[k][j])))
                    .collect()
            })
            .collect()
    };
    let m0inv_s: Vec<Vec<Series>> =
        (0..n).map(|i| (0..n).map(|j| Series::constant(&space, m0inv[(i, j)])).collect()).collect();
    let prod = mat_mul(&m0inv_s, m);
    let neg_n: Vec<Vec<Series>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let id = if i == j { Series::one(&space) } else { Series::zero(&space) };
                    &id - &prod[i][j]
                })
                .collect()
        })
        .collect();
    let mut power = m0inv_s.clone();
    let mut sum = m0inv_s;
    let bound = space.cap() + space.param_cap() + 1;
    for _ in 0..bound {
        power = mat_mul(&neg_n, &power);
        if power.iter().all(|r| r.iter().all(Series::is_zero)) {
            break;
        }
        sum = sum.iter().zip(&power).map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect()).collect();
    }
    Ok(sum)
}

#[cfg(test)]
mod tests {
    use super::super::parse::parse_series;
    use super::super::Space;
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn linear_inverse() {
        let sp = Space::new(["x"], vec![1], 6);
        let g = vec![Series::var(&sp, 0).scale_re(2.0)];
        let h = invert_map(&g).unwrap();
        assert!(h[0].max_abs_diff(&Series::var(&sp, 0).scale_re(0.5)) < 1e-15);
    }

    #[test]
    fn quadratic_inverse_is_catalan_series() {
        let sp = Space::new(["x"], vec![1], 7);
        let g = vec![parse_series("x + x^2", &sp).unwrap()];
        let h = invert_map(&g).unwrap();
        // signed Catalan numbers
        let cat = [1.0, -1.0, 2.0, -5.0, 14.0, -42.0, 132.0];
        for (k, cv) in cat.iter().enumerate() {
            assert!((h[0].coeff(&[k as u16 + 1]).re - cv).abs() < 1e-9);
        }
        let back = compose_maps(&g, &h).unwrap();
        assert!(back[0].max_abs_diff(&Series::var(&sp, 0)) < 1e-9);
    }

    #[test]
    fn singular_linear_part() {
        let sp = Space::new(["x"], vec![1], 4);
        let g = vec![parse_series("x^2", &sp).unwrap()];
        assert!(matches!(invert_map(&g), Err(Error::Singular(_))));
    }

    #[test]
    fn matrix_inverse_of_series() {
        let sp = Space::new(["x", "y"], vec![1, 1], 5);
        let m = vec![
            vec![parse_series("2 + x", &sp).unwrap(), parse_series("y", &sp).unwrap()],
            vec![parse_series("x*y", &sp).unwrap(), parse_series("1 - y^2", &sp).unwrap()],
        ];
        let inv = series_matrix_inverse(&m).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let e = (0..2).fold(Series::zero(&sp), |a, k| &a + &(&m[i][k] * &inv[k][j]));
                let id = if i == j { Series::one(&sp) } else { Series::zero(&sp) };
                assert!(e.max_abs_diff(&id) < 1e-9);
            }
        }
    }

    proptest! {
        #[test]
        fn double_inverse_round_trip(coeffs in proptest::collection::vec(-3i32..=3, 10), a in 1i32..4, d in 1i32..4) {
            let sp = Space::new(["x", "y"], vec![1, 1], 5);
            let g0 = format!("{a}*x + y + {}*x^2 + {}*x*y + {}*y^3 + {}*x^2*y", coeffs[0], coeffs[1], coeffs[2], coeffs[3]);
            let g1 = format!("x - {d}*y + {}*y^2 + {}*x^3 + {}*x*y^2", coeffs[4], coeffs[5], coeffs[6]);
            let g = vec![parse_series(&g0, &sp).unwrap(), parse_series(&g1, &sp).unwrap()];
            let h = invert_map(&g).unwrap();
            let hh = invert_map(&h).unwrap();
            for k in 0..2 {
                prop_assert!(hh[k].max_abs_diff(&g[k]) < 1e-6 * (1.0 + g[k].max_abs()));
            }
            let id = compose_maps(&h, &g).unwrap();
            for k in 0..2 {
                prop_assert!(id[k].max_abs_diff(&Series::var(&sp, k)) < 1e-6);
            }
        }
    }
}
