//! Legendre transform, Gaussian moments and formal stationary phase.
//!
//! Normalization: integrals are taken against (2πℏ)^{-n/2} dy, so that the
//! pure Gaussian e^{(i/2ℏ) yᵗHy} integrates to ∏ₖ(−iλₖ)^{-1/2}.

use std::collections::HashMap;
use std::sync::Arc;

use super::matrix::{gaussian_prefactor, inverse, CMat};
use super::{Exp, Series, Space, SymmetricMatrix, C64};
use crate::error::{Error, Result};

/// Critical point data of a phase in the variables `ys`.
#[derive(Clone, Debug)]
pub struct LegendreData {
    /// G(η) = ηy + F(y) at the critical point; the `ys` slots hold η.
    pub g: Series,
    /// Critical point y(η) solving η + ∂_y F(y) = 0.
    pub y: Vec<Series>,
    /// Hessian of the pure quadratic part of F in `ys`.
    pub hessian: CMat,
}

/// Default integration variables: every positive-weight variable except ℏ.
pub fn default_vars(space: &Space) -> Vec<usize> {
    let h = space.hbar();
    (0..space.nvars()).filter(|&i| Some(i) != h && space.weights()[i] > 0).collect()
}

/// Hessian at the origin of the pure quadratic part in `ys`.
pub fn pure_hessian(f: &Series, ys: &[usize]) -> CMat {
    let sp = f.space();
    let n = ys.len();
    CMat::from_fn(n, n, |a, b| {
        let mut e = sp.zero_exp();
        e[ys[a]] += 1;
        e[ys[b]] += 1;
        let v = f.coeff(&e);
        if a == b {
            v * 2.0
        } else {
            v
        }
    })
}

fn y_degree(e: &[u16], ys: &[usize]) -> u32 {
    ys.iter().map(|&i| e[i] as u32).sum()
}

pub fn legendre_data(f: &Series, ys: &[usize]) -> Result<LegendreData> {
    let sp = f.space().clone();
    for (e, _) in f.iter() {
        if y_degree(e, ys) >= 1 && sp.weighted_degree(e) < 2 {
            return Err(Error::Invalid("phase has terms linear in the critical variables".into()));
        }
    }
    let n = ys.len();
    let h0 = pure_hessian(f, ys);
    let hinv = inverse(&h0, sp.eps(), "Hessian").map_err(|_| Error::Degenerate("Hessian".into()))?;
    let grads: Vec<Series> = ys.iter().map(|&i| f.derivative(i)).collect();
    let eta: Vec<Series> = ys.iter().map(|&i| Series::var(&sp, i)).collect();
    // N(y) = ∂F − H0 y
    let nonlin: Vec<Series> = (0..n)
        .map(|a| {
            let mut s = grads[a].clone();
            for b in 0..n {
                if h0[(a, b)].norm() > 0.0 {
                    s = &s - &eta[b].scale(h0[(a, b)]);
                }
            }
            s
        })
        .collect();
    let solve = |rhs: &[Series]| -> Vec<Series> {
        (0..n)
            .map(|a| {
                let mut s = Series::zero(&sp);
                for b in 0..n {
                    s = &s - &rhs[b].scale(hinv[(a, b)]);
                }
                s
            })
            .collect()
    };
    let mut y = solve(&eta);
    for _ in 0..(sp.cap() + sp.param_cap()) {
        let subs: Vec<(usize, Series)> = ys.iter().copied().zip(y.iter().cloned()).collect();
        let rhs: Vec<Series> = (0..n).map(|a| Ok(&eta[a] + &nonlin[a].compose_partial(&subs)?)).collect::<Result<_>>()?;
        let next = solve(&rhs);
        let done = next.iter().zip(&y).all(|(p, q)| p == q);
        y = next;
        if done {
            break;
        }
    }
    let subs: Vec<(usize, Series)> = ys.iter().copied().zip(y.iter().cloned()).collect();
    let mut g = f.compose_partial(&subs)?;
    for a in 0..n {
        g = &g + &(&eta[a] * &y[a]);
    }
    Ok(LegendreData { g, y, hessian: h0 })
}

/// Legendre transform in all non-ℏ variables of positive weight.
pub fn legendre(f: &Series) -> Result<Series> {
    legendre_with(f, &default_vars(f.space()))
}

pub fn legendre_with(f: &Series, ys: &[usize]) -> Result<Series> {
    Ok(legendre_data(f, ys)?.g)
}

/// Normalized moments ⟨z^α⟩ for the weight e^{(i/2ℏ) zᵗQz}, by Wick's
/// recursion with propagator iℏQ⁻¹. Values are coefficients of ℏ^{|α|/2}.
pub struct Wick {
    prop: CMat,
    memo: HashMap<Exp, C64>,
}

impl Wick {
    pub fn new(q: &CMat, eps: f64) -> Result<Wick> {
        let qinv = inverse(q, eps, "quadratic form").map_err(|_| Error::Singular("quadratic form".into()))?;
        Ok(Wick { prop: qinv.map(|v| v * C64::i()), memo: HashMap::new() })
    }

    pub fn moment(&mut self, alpha: &[u16]) -> C64 {
        let total: u32 = alpha.iter().map(|&a| a as u32).sum();
        if total % 2 == 1 {
            return C64::new(0.0, 0.0);
        }
        if total == 0 {
            return C64::new(1.0, 0.0);
        }
        let key: Exp = Exp::from_slice(alpha);
        if let Some(v) = self.memo.get(&key) {
            return *v;
        }
        let i = alpha.iter().position(|&a| a > 0).unwrap();
        let mut beta = key.clone();
        beta[i] -= 1;
        let mut acc = C64::new(0.0, 0.0);
        for j in 0..beta.len() {
            if beta[j] == 0 {
                continue;
            }
            let p = self.prop[(i, j)];
            if p.norm() == 0.0 {
                continue;
            }
            let mut gamma = beta.clone();
            let mult = gamma[j] as f64;
            gamma[j] -= 1;
            acc += p * mult * self.moment(&gamma);
        }
        self.memo.insert(key, acc);
        acc
    }
}

/// ⟨z^α⟩ as (coefficient, power of ℏ).
pub fn gaussian_moment(q: &SymmetricMatrix, alpha: &[u16]) -> Result<(C64, u32)> {
    let qm = q.to_complex();
    if qm.nrows() != alpha.len() {
        return Err(Error::Invalid("exponent length differs from matrix size".into()));
    }
    let mut w = Wick::new(&qm, 1e-12)?;
    let total: u32 = alpha.iter().map(|&a| a as u32).sum();
    Ok((w.moment(alpha), total / 2))
}

/// Result of (2πℏ)^{-n/2}∫ e^{(i/ℏ)(F(y)+ηy)} a(y) dy = e^{(i/ℏ)G(η)} · prefactor · b(η, ℏ).
#[derive(Clone, Debug)]
pub struct StationaryPhase {
    pub g: Series,
    pub prefactor: C64,
    pub b: Series,
    pub hessian: CMat,
    pub critical: Vec<Series>,
}

impl StationaryPhase {
    /// Coefficient series of ℏ^k in b.
    pub fn b_order(&self, k: u16) -> Series {
        let h = self.b.space().hbar().expect("h variable");
        self.b.filter(|e| e[h] == k)
    }
}

pub fn stationary_phase(f: &Series, a: &Series) -> Result<StationaryPhase> {
    stationary_phase_with(f, a, &default_vars(a.space()))
}

/// Formal stationary phase in the variables `ys`.
///
/// `f` may live in a space with a larger cap than `a`; terms of `f` up to
/// weight cap(a)+2 influence `b` at weight cap(a), so a polynomial phase is
/// best supplied in such a space. Other variables of positive weight act as
/// parameters; `b` lives in the space of `a`.
pub fn stationary_phase_with(f: &Series, a: &Series, ys: &[usize]) -> Result<StationaryPhase> {
    let s = a.space().clone();
    if f.space().names() != s.names() || f.space().weights() != s.weights() {
        return Err(Error::SpaceMismatch("phase and amplitude variables differ".into()));
    }
    let n_out = s.cap();
    let leg = legendre_data(f, ys)?;
    let prefactor = gaussian_prefactor(&leg.hessian, s.eps())?;
    let nv = s.nvars();
    let idmap: Vec<Option<usize>> = (0..nv).map(Some).collect();
    let g = leg.g.embed(&s, &idmap)?;
    if a.is_zero() {
        return Ok(StationaryPhase { g, prefactor, b: Series::zero(&s), hessian: leg.hessian, critical: leg.y });
    }
    let h = s.hbar().ok_or_else(|| Error::Invalid("stationary phase needs an h variable".into()))?;
    let n = ys.len();

    let mut names: Vec<String> = s.names().to_vec();
    let mut weights = s.weights().to_vec();
    for j in 0..n {
        names.push(format!("_z{j}"));
        weights.push(1);
    }
    let w_big = Space::with_options(names, weights, 3 * n_out + 2, s.param_cap(), s.eps());
    let w_r = w_big.recapped(n_out + 2);
    let w_a = w_big.recapped(n_out);
    let lift = |x: &Series, sp: &Arc<Space>| x.embed(sp, &idmap);
    let z = |sp: &Arc<Space>, j: usize| Series::var(sp, nv + j);

    // R = F(y_c + z) − F(y_c) + ηz − ½ zᵗH₀z
    let f_r = lift(f, &w_r)?;
    let yc_r: Vec<Series> = leg.y.iter().map(|y| lift(y, &w_r)).collect::<Result<_>>()?;
    let shifted: Vec<(usize, Series)> = (0..n).map(|j| (ys[j], &yc_r[j] + &z(&w_r, j))).collect();
    let at_crit: Vec<(usize, Series)> = (0..n).map(|j| (ys[j], yc_r[j].clone())).collect();
    let mut r = &f_r.compose_partial(&shifted)? - &f_r.compose_partial(&at_crit)?;
    for j in 0..n {
        r = &r + &(&Series::var(&w_r, ys[j]) * &z(&w_r, j));
        for k in 0..n {
            r = &r - &(&z(&w_r, j) * &z(&w_r, k)).scale(leg.hessian[(j, k)] * 0.5);
        }
    }
    let r = r.embed(&w_big, &(0..nv + n).map(Some).collect::<Vec<_>>())?;

    let a_w = lift(a, &w_a)?;
    let yc_a: Vec<(usize, Series)> =
        (0..n).map(|j| Ok((ys[j], &lift(&leg.y[j], &w_a)? + &z(&w_a, j)))).collect::<Result<_>>()?;
    let a_shift = a_w.compose_partial(&yc_a)?.embed(&w_big, &(0..nv + n).map(Some).collect::<Vec<_>>())?;

    let mut wick = Wick::new(&leg.hessian, s.eps())?;
    let mut b = Series::zero(&s);
    let eff = |e: &[u16], k: u32| w_big.weighted_degree(e) as i64 - 2 * k as i64;
    let mut t = Series::one(&w_big);
    let mut ik = C64::new(1.0, 0.0);
    for k in 0..=(2 * n_out + 2) {
        let ta = t.mul_filtered(&a_shift, &w_big, |e| eff(e, k) <= n_out as i64);
        for (e, v) in ta.iter() {
            let alpha = &e[nv..];
            let m = wick.moment(alpha);
            if m.norm() == 0.0 {
                continue;
            }
            let half: i64 = alpha.iter().map(|&x| x as i64).sum::<i64>() / 2;
            let hp = e[h] as i64 + half - k as i64;
            if hp < 0 {
                return Err(Error::Invalid("negative power of h in stationary phase".into()));
            }
            let mut f_exp: Exp = Exp::from_slice(&e[..nv]);
            f_exp[h] = hp as u16;
            b.add_term(f_exp, v * m * ik);
        }
        t = t.mul_filtered(&r, &w_big, |e| eff(e, k + 1) <= n_out as i64).scale_re(1.0 / (k + 1) as f64);
        ik *= C64::i();
        if t.is_zero() {
            break;
        }
    }
    Ok(StationaryPhase { g, prefactor, b: b.cleaned(), hessian: leg.hessian, critical: leg.y })
}
