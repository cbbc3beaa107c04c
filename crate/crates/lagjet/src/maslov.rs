//! Exact Maslov cocycles.
//!
//! Charts are labelled by the set K of coordinates used as x-parameters: a
//! Lagrangian L lies in the chart U_K when it is a graph over (x_K, ξ_K̄),
//! i.e. ξ_K = ∂_{x_K}F, x_K̄ = −∂_{ξ_K̄}F. For a linear L the generating
//! function is F = ½pᵗSp with S = [[A, B], [Bᵗ, C]].
//!
//! For charts K, K' split the indices into I₁ = K∩K', I₂ = K∖K', I₃ = K'∖K
//! and I₄ the rest; c_{KK'} = ½·signature of the Hessian of F_K in (x_{I₂}, ξ_{I₃}).
//! Half-integers are stored doubled.

use std::collections::{BTreeMap, BTreeSet};

use num::rational::BigRational;
use num::{BigInt, One, Signed, Zero};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::parse::{parse_poly, parse_rational, Poly};

pub type Q = BigRational;
pub type QMat = Vec<Vec<Q>>;

pub fn q(v: i64) -> Q {
    Q::from_integer(BigInt::from(v))
}

pub fn qfrac(n: i64, d: i64) -> Q {
    Q::new(BigInt::from(n), BigInt::from(d))
}

pub fn qzeros(r: usize, c: usize) -> QMat {
    vec![vec![Q::zero(); c]; r]
}

pub fn qidentity(n: usize) -> QMat {
    (0..n).map(|i| (0..n).map(|j| if i == j { Q::one() } else { Q::zero() }).collect()).collect()
}

pub fn qtranspose(m: &QMat) -> QMat {
    if m.is_empty() {
        return Vec::new();
    }
    (0..m[0].len()).map(|j| m.iter().map(|r| r[j].clone()).collect()).collect()
}

pub fn qmul(a: &QMat, b: &QMat) -> QMat {
    let inner = b.len();
    let cols = if inner == 0 { 0 } else { b[0].len() };
    a.iter()
        .map(|r| {
            (0..cols)
                .map(|j| {
                    let mut s = Q::zero();
                    for k in 0..inner {
                        if !r[k].is_zero() && !b[k][j].is_zero() {
                            s += &r[k] * &b[k][j];
                        }
                    }
                    s
                })
                .collect()
        })
        .collect()
}

/// Gauss–Jordan inverse; `None` when singular.
pub fn qinverse(m: &QMat) -> Option<QMat> {
    let n = m.len();
    let mut a: Vec<Vec<Q>> = m.iter().zip(qidentity(n)).map(|(r, e)| r.iter().cloned().chain(e).collect()).collect();
    for col in 0..n {
        let piv = (col..n).find(|&r| !a[r][col].is_zero())?;
        a.swap(col, piv);
        let inv = Q::one() / &a[col][col];
        for v in a[col].iter_mut() {
            *v = &*v * &inv;
        }
        for r in 0..n {
            if r != col && !a[r][col].is_zero() {
                let f = a[r][col].clone();
                for k in 0..2 * n {
                    let d = &f * &a[col][k];
                    a[r][k] -= d;
                }
            }
        }
    }
    Some(a.into_iter().map(|r| r[n..].to_vec()).collect())
}

pub fn qsub(m: &QMat, rows: &[usize], cols: &[usize]) -> QMat {
    rows.iter().map(|&i| cols.iter().map(|&j| m[i][j].clone()).collect()).collect()
}

fn is_symmetric(m: &QMat) -> bool {
    let n = m.len();
    m.iter().all(|r| r.len() == n) && (0..n).all(|i| (0..i).all(|j| m[i][j] == m[j][i]))
}

/// Exact signature by symmetric elimination: a nonzero diagonal pivot
/// contributes its sign; otherwise a pair with a_ii = a_jj = 0, a_ij ≠ 0 is a
/// hyperbolic plane contributing 0. Both eliminate via a Schur complement.
pub fn signature(s: &QMat) -> Result<i32> {
    if !is_symmetric(s) {
        return Err(Error::Invalid("signature needs a symmetric matrix".into()));
    }
    let mut m = s.clone();
    let mut sig = 0;
    while !m.is_empty() {
        let n = m.len();
        if let Some(p) = (0..n).find(|&i| !m[i][i].is_zero()) {
            sig += if m[p][p].is_positive() { 1 } else { -1 };
            m = schur(&m, &[p]);
            continue;
        }
        let Some((i, j)) = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).find(|&(i, j)| !m[i][j].is_zero()) else {
            return Err(Error::Degenerate(format!("symmetric form of rank deficiency {n}")));
        };
        m = schur(&m, &[i, j]);
    }
    Ok(sig)
}

/// Schur complement of the principal block on `piv`.
fn schur(m: &QMat, piv: &[usize]) -> QMat {
    let n = m.len();
    let rest: Vec<usize> = (0..n).filter(|k| !piv.contains(k)).collect();
    let p = qsub(m, piv, piv);
    let pinv = qinverse(&p).expect("pivot block invertible");
    let rp = qsub(m, &rest, piv);
    let pr = qsub(m, piv, &rest);
    let corr = qmul(&qmul(&rp, &pinv), &pr);
    rest.iter()
        .enumerate()
        .map(|(a, &i)| rest.iter().enumerate().map(|(b, &j)| &m[i][j] - &corr[a][b]).collect())
        .collect()
}

/// A Lagrangian subspace of R²ⁿ spanned by the columns of a 2n×n matrix,
/// rows ordered x¹..xⁿ, ξ¹..ξⁿ.
#[derive(Clone, Debug, PartialEq)]
pub struct LagrangianSubspace {
    pub n: usize,
    pub basis: QMat,
}

impl LagrangianSubspace {
    pub fn new(basis: QMat) -> Result<Self> {
        let rows = basis.len();
        if rows % 2 != 0 || basis.iter().any(|r| r.len() != rows / 2) {
            return Err(Error::Invalid("basis must be a 2n×n matrix".into()));
        }
        let n = rows / 2;
        // ω(u, v) = Σ xᵘξᵛ − ξᵘxᵛ must vanish
        for a in 0..n {
            for b in 0..a {
                let mut w = Q::zero();
                for k in 0..n {
                    w += &basis[k][a] * &basis[n + k][b] - &basis[n + k][a] * &basis[k][b];
                }
                if !w.is_zero() {
                    return Err(Error::Invalid("subspace is not isotropic".into()));
                }
            }
        }
        let l = LagrangianSubspace { n, basis };
        if l.rank() != n {
            return Err(Error::Invalid("basis is not of full rank".into()));
        }
        Ok(l)
    }

    fn rank(&self) -> usize {
        let mut m = self.basis.clone();
        let mut r = 0;
        let cols = self.n;
        for c in 0..cols {
            let Some(p) = (r..m.len()).find(|&i| !m[i][c].is_zero()) else { continue };
            m.swap(r, p);
            for i in 0..m.len() {
                if i != r && !m[i][c].is_zero() {
                    let f = &m[i][c] / &m[r][c];
                    for k in 0..cols {
                        let d = &f * &m[r][k];
                        m[i][k] -= d;
                    }
                }
            }
            r += 1;
        }
        r
    }

    /// Rows giving the chart parameters (x_K, ξ_K̄) and the dependent (ξ_K, x_K̄).
    fn split(&self, k: &BTreeSet<usize>) -> (Vec<usize>, Vec<usize>) {
        let n = self.n;
        let kv: Vec<usize> = k.iter().copied().collect();
        let kb: Vec<usize> = (0..n).filter(|i| !k.contains(i)).collect();
        let params: Vec<usize> = kv.iter().copied().chain(kb.iter().map(|&i| n + i)).collect();
        let deps: Vec<usize> = kv.iter().map(|&i| n + i).chain(kb.iter().copied()).collect();
        (params, deps)
    }

    pub fn contains(&self, v: &[Q]) -> bool {
        let mut aug = self.basis.clone();
        for (row, x) in aug.iter_mut().zip(v) {
            row.push(x.clone());
        }
        LagrangianSubspace { n: self.n, basis: aug }.rank_cols(self.n + 1) == self.n
    }

    fn rank_cols(&self, cols: usize) -> usize {
        let mut m = self.basis.clone();
        let mut r = 0;
        for c in 0..cols {
            let Some(p) = (r..m.len()).find(|&i| !m[i][c].is_zero()) else { continue };
            m.swap(r, p);
            for i in 0..m.len() {
                if i != r && !m[i][c].is_zero() {
                    let f = &m[i][c] / &m[r][c];
                    for k in 0..cols {
                        let d = &f * &m[r][k];
                        m[i][k] -= d;
                    }
                }
            }
            r += 1;
        }
        r
    }
}

/// L ∩ U_K in the form ξ_K = A x_K + B ξ_K̄, x_K̄ = −Bᵗx_K − C ξ_K̄.
#[derive(Clone, Debug, PartialEq)]
pub struct LagrangianFrame {
    pub n: usize,
    pub chart: BTreeSet<usize>,
    pub a: QMat,
    pub b: QMat,
    pub c: QMat,
}

impl LagrangianFrame {
    pub fn new(n: usize, chart: BTreeSet<usize>, a: QMat, b: QMat, c: QMat) -> Result<Self> {
        let k = chart.len();
        if chart.iter().any(|&i| i >= n) {
            return Err(Error::Invalid("chart index out of range".into()));
        }
        let shape_ok = a.len() == k
            && a.iter().all(|r| r.len() == k)
            && b.len() == k
            && b.iter().all(|r| r.len() == n - k)
            && c.len() == n - k
            && c.iter().all(|r| r.len() == n - k);
        if !shape_ok {
            return Err(Error::Invalid("frame blocks have the wrong shape".into()));
        }
        if !is_symmetric(&a) || !is_symmetric(&c) {
            return Err(Error::Invalid("A and C must be symmetric".into()));
        }
        Ok(LagrangianFrame { n, chart, a, b, c })
    }

    /// Hessian S = [[A, B], [Bᵗ, C]] of the generating function in (x_K, ξ_K̄).
    pub fn hessian(&self) -> QMat {
        let k = self.a.len();
        let m = self.c.len();
        let bt = qtranspose(&self.b);
        let mut s = qzeros(k + m, k + m);
        for i in 0..k {
            for j in 0..k {
                s[i][j] = self.a[i][j].clone();
            }
            for j in 0..m {
                s[i][k + j] = self.b[i][j].clone();
                s[k + j][i] = bt[j][i].clone();
            }
        }
        for i in 0..m {
            for j in 0..m {
                s[k + i][k + j] = self.c[i][j].clone();
            }
        }
        s
    }

    pub fn from_hessian(n: usize, chart: BTreeSet<usize>, s: &QMat) -> Result<Self> {
        let k = chart.len();
        let xs: Vec<usize> = (0..k).collect();
        let ps: Vec<usize> = (k..n).collect();
        Self::new(n, chart, qsub(s, &xs, &xs), qsub(s, &xs, &ps), qsub(s, &ps, &ps))
    }

    pub fn to_subspace(&self) -> LagrangianSubspace {
        let n = self.n;
        let s = self.hessian();
        let kv: Vec<usize> = self.chart.iter().copied().collect();
        let kb: Vec<usize> = (0..n).filter(|i| !self.chart.contains(i)).collect();
        let k = kv.len();
        // column j is the tangent vector for parameter j
        let mut basis = qzeros(2 * n, n);
        for j in 0..n {
            for (a, &i) in kv.iter().enumerate() {
                basis[i][j] = if a == j { Q::one() } else { Q::zero() };
                basis[n + i][j] = s[a][j].clone();
            }
            for (a, &i) in kb.iter().enumerate() {
                basis[n + i][j] = if k + a == j { Q::one() } else { Q::zero() };
                basis[i][j] = -s[k + a][j].clone();
            }
        }
        LagrangianSubspace { n, basis }
    }
}

/// Frame of L in the chart U_K.
pub fn chart_parameters(l: &LagrangianSubspace, chart: &BTreeSet<usize>) -> Result<LagrangianFrame> {
    let n = l.n;
    let (params, deps) = l.split(chart);
    let p = qsub(&l.basis, &params, &(0..n).collect::<Vec<_>>());
    let d = qsub(&l.basis, &deps, &(0..n).collect::<Vec<_>>());
    let pinv = qinverse(&p).ok_or_else(|| Error::Singular(format!("projection of L to the chart {:?}", chart)))?;
    let m = qmul(&d, &pinv);
    // m maps (x_K, ξ_K̄) to (ξ_K, x_K̄); the second block row is −[Bᵗ, C]
    let k = chart.len();
    let mut s = qzeros(n, n);
    for i in 0..n {
        for j in 0..n {
            s[i][j] = if i < k { m[i][j].clone() } else { -m[i][j].clone() };
        }
    }
    if !is_symmetric(&s) {
        return Err(Error::Invalid("subspace is not Lagrangian".into()));
    }
    LagrangianFrame::from_hessian(n, chart.clone(), &s)
}

/// Positions in the parameter vector (x_K, ξ_K̄) of x_{K∖K'} and ξ_{K'∖K}.
fn swap_positions(n: usize, from: &BTreeSet<usize>, to: &BTreeSet<usize>) -> Vec<usize> {
    let kv: Vec<usize> = from.iter().copied().collect();
    let kb: Vec<usize> = (0..n).filter(|i| !from.contains(i)).collect();
    let mut pos = Vec::new();
    for (a, i) in kv.iter().enumerate() {
        if !to.contains(i) {
            pos.push(a);
        }
    }
    for (a, i) in kb.iter().enumerate() {
        if to.contains(i) {
            pos.push(kv.len() + a);
        }
    }
    pos
}

/// ½·signature of the mixed Hessian block of a generating-function Hessian,
/// doubled. Degenerate blocks mean the point is outside the overlap.
pub fn hessian_cocycle(n: usize, from: &BTreeSet<usize>, to: &BTreeSet<usize>, hessian: &QMat) -> Result<i64> {
    let pos = swap_positions(n, from, to);
    let block = qsub(hessian, &pos, &pos);
    signature(&block).map(|s| s as i64).map_err(|_| Error::Degenerate(format!("L is outside the overlap of charts {from:?} and {to:?}")))
}

/// Doubled c_{IJ} for a linear Lagrangian in U_I ∩ U_J.
pub fn linear_cocycle(l: &LagrangianSubspace, i: &BTreeSet<usize>, j: &BTreeSet<usize>) -> Result<i64> {
    let frame = chart_parameters(l, i)?;
    hessian_cocycle(l.n, i, j, &frame.hessian())
}

pub fn all_charts(n: usize) -> Vec<BTreeSet<usize>> {
    (0..1usize << n).map(|mask| (0..n).filter(|k| mask >> k & 1 == 1).collect()).collect()
}

pub fn random_rational<R: Rng>(rng: &mut R, num: i64, den: i64) -> Q {
    qfrac(rng.gen_range(-num..=num), rng.gen_range(1..=den))
}

pub fn random_symmetric<R: Rng>(rng: &mut R, n: usize) -> QMat {
    let mut s = qzeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = random_rational(rng, 5, 4);
            s[i][j] = v.clone();
            s[j][i] = v;
        }
    }
    s
}

/// A random rational Lagrangian given as a graph in a random chart.
pub fn random_lagrangian<R: Rng>(rng: &mut R, n: usize) -> LagrangianSubspace {
    let charts = all_charts(n);
    let k = charts[rng.gen_range(0..charts.len())].clone();
    let s = random_symmetric(rng, n);
    LagrangianFrame::from_hessian(n, k, &s).expect("frame").to_subspace()
}

/// Exact check of c_{II} = 0, antisymmetry and the triple identity for one
/// subspace over every chart containing it. Returns (charts, triples checked)
/// or the first offending triple.
pub fn check_linear_cocycle(l: &LagrangianSubspace) -> std::result::Result<(usize, usize), String> {
    let charts: Vec<BTreeSet<usize>> = all_charts(l.n).into_iter().filter(|k| chart_parameters(l, k).is_ok()).collect();
    let m = charts.len();
    let mut c = vec![vec![None; m]; m];
    for a in 0..m {
        for b in 0..m {
            c[a][b] = linear_cocycle(l, &charts[a], &charts[b]).ok();
        }
    }
    for a in 0..m {
        if c[a][a] != Some(0) {
            return Err(format!("c_II ≠ 0 at {:?}", charts[a]));
        }
        for b in 0..m {
            match (c[a][b], c[b][a]) {
                (Some(x), Some(y)) if x != -y => return Err(format!("antisymmetry fails for {:?}, {:?}", charts[a], charts[b])),
                (Some(_), None) | (None, Some(_)) => return Err(format!("overlap asymmetric for {:?}, {:?}", charts[a], charts[b])),
                _ => {}
            }
        }
    }
    let mut triples = 0;
    for a in 0..m {
        for b in 0..m {
            for d in 0..m {
                if let (Some(x), Some(y), Some(z)) = (c[a][b], c[b][d], c[d][a]) {
                    triples += 1;
                    if x + y + z != 0 {
                        return Err(format!("triple {:?} {:?} {:?} sums to {}/2", charts[a], charts[b], charts[d], x + y + z));
                    }
                }
            }
        }
    }
    Ok((m, triples))
}

/// Names of the parameters of chart K in n dimensions: x-names for K, ξ-names for K̄.
pub fn parameter_names(n: usize, chart: &BTreeSet<usize>) -> Vec<String> {
    let xn = |k: usize| if n == 1 { "x".to_string() } else { format!("x{}", k + 1) };
    let xin = |k: usize| if n == 1 { "xi".to_string() } else { format!("xi{}", k + 1) };
    chart.iter().map(|&k| xn(k)).chain((0..n).filter(|k| !chart.contains(k)).map(xin)).collect()
}

/// Local description of L over a chart of the base: ξ_K = ∂_{x_K}F, x_K̄ = −∂_{ξ_K̄}F
/// with F a rational polynomial in the chart parameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LagrangianChartData {
    pub id: String,
    /// Identifier of the coordinate system on the base.
    pub base_chart: String,
    pub n: usize,
    /// Indices (0-based) of the coordinates used as x-parameters.
    pub x_params: Vec<usize>,
    /// Generating function in the parameter names (`x1`.., `xi1`.., or `x`, `xi` for n = 1).
    pub generating_function: String,
}

impl LagrangianChartData {
    pub fn chart(&self) -> BTreeSet<usize> {
        self.x_params.iter().copied().collect()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.chart();
        if c.len() != self.x_params.len() || c.iter().any(|&k| k >= self.n) {
            return Err(Error::Invalid(format!("chart {}: x_params must be distinct indices below n", self.id)));
        }
        self.poly().map(|_| ())
    }

    pub fn poly(&self) -> Result<Poly> {
        let names = parameter_names(self.n, &self.chart());
        parse_poly(&self.generating_function, &names)
    }

    pub fn parameters_of(&self, point: &[Q]) -> Vec<Q> {
        let n = self.n;
        let c = self.chart();
        c.iter().map(|&k| point[k].clone()).chain((0..n).filter(|k| !c.contains(k)).map(|k| point[n + k].clone())).collect()
    }

    fn poly_rational(&self) -> Result<BTreeMap<Vec<u16>, Q>> {
        self.poly()?.to_rational().ok_or_else(|| Error::Invalid(format!("chart {}: generating function must be real rational", self.id)))
    }

    /// Gradient and Hessian of F at the parameters of `point`.
    pub fn derivatives(&self, point: &[Q]) -> Result<(Vec<Q>, QMat)> {
        let f = self.poly_rational()?;
        let p = self.parameters_of(point);
        let n = self.n;
        let mut grad = vec![Q::zero(); n];
        let mut hess = qzeros(n, n);
        for (e, coef) in &f {
            for i in 0..n {
                if e[i] == 0 {
                    continue;
                }
                let mut ei = e.clone();
                ei[i] -= 1;
                grad[i] += coef * q(e[i] as i64) * monomial_at(&ei, &p);
                for j in 0..n {
                    if ei[j] == 0 {
                        continue;
                    }
                    let mut eij = ei.clone();
                    eij[j] -= 1;
                    hess[i][j] += coef * q(e[i] as i64) * q(ei[j] as i64) * monomial_at(&eij, &p);
                }
            }
        }
        Ok((grad, hess))
    }

    /// t[m][i][j] = ∂_m∂_i∂_j F at the parameters of `point`.
    pub fn third_derivatives(&self, point: &[Q]) -> Result<Vec<QMat>> {
        let f = self.poly_rational()?;
        let p = self.parameters_of(point);
        let n = self.n;
        let mut t = vec![qzeros(n, n); n];
        for (e, coef) in &f {
            for m in 0..n {
                for i in 0..n {
                    for j in 0..n {
                        let mut g = e.clone();
                        let mut fac = coef.clone();
                        let mut ok = true;
                        for k in [m, i, j] {
                            if g[k] == 0 {
                                ok = false;
                                break;
                            }
                            fac *= q(g[k] as i64);
                            g[k] -= 1;
                        }
                        if ok {
                            t[m][i][j] += fac * monomial_at(&g, &p);
                        }
                    }
                }
            }
        }
        Ok(t)
    }

    pub fn value_at(&self, point: &[Q]) -> Result<Q> {
        let f = self.poly_rational()?;
        let p = self.parameters_of(point);
        Ok(f.iter().map(|(e, c)| c * monomial_at(e, &p)).fold(Q::zero(), |a, b| a + b))
    }

    /// Exact check that `point` (x¹..xⁿ, ξ¹..ξⁿ) lies on L.
    pub fn on_lagrangian(&self, point: &[Q]) -> Result<bool> {
        if point.len() != 2 * self.n {
            return Err(Error::Invalid("point must have 2n coordinates".into()));
        }
        let (grad, _) = self.derivatives(point)?;
        let c = self.chart();
        let n = self.n;
        let mut ok = true;
        for (a, &k) in c.iter().enumerate() {
            ok &= point[n + k] == grad[a];
        }
        for (a, k) in (0..n).filter(|k| !c.contains(k)).enumerate() {
            ok &= point[k] == -grad[c.len() + a].clone();
        }
        Ok(ok)
    }

    /// The phase φ = F + x_K̄·ξ_K̄ on L, a primitive of ξdx there.
    pub fn phase_at(&self, point: &[Q]) -> Result<Q> {
        let n = self.n;
        let c = self.chart();
        let mut v = self.value_at(point)?;
        for k in (0..n).filter(|k| !c.contains(k)) {
            v += &point[k] * &point[n + k];
        }
        Ok(v)
    }

    /// Tangent plane of L at a point.
    pub fn tangent_frame(&self, point: &[Q]) -> Result<LagrangianFrame> {
        let (_, h) = self.derivatives(point)?;
        LagrangianFrame::from_hessian(self.n, self.chart(), &h)
    }
}

fn monomial_at(e: &[u16], p: &[Q]) -> Q {
    let mut v = Q::one();
    for (x, &k) in p.iter().zip(e) {
        for _ in 0..k {
            v *= x;
        }
    }
    v
}

/// How two charts of L differ on an overlap.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapKind {
    /// Different coordinates on the base.
    CoordinateChange,
    /// Same base coordinates, different subdivision.
    Subdivision,
}

/// Doubled c_{βγ} at a point of L (given in the common base coordinates).
pub fn submanifold_cocycle(beta: &LagrangianChartData, gamma: &LagrangianChartData, kind: OverlapKind, point: &[Q]) -> Result<i64> {
    match kind {
        OverlapKind::CoordinateChange => {
            if beta.base_chart == gamma.base_chart {
                return Err(Error::Invalid(format!("charts {} and {} share base coordinates", beta.id, gamma.id)));
            }
            Ok(0)
        }
        OverlapKind::Subdivision => {
            if beta.base_chart != gamma.base_chart || beta.n != gamma.n {
                return Err(Error::Invalid(format!("charts {} and {} use different base coordinates", beta.id, gamma.id)));
            }
            if !beta.on_lagrangian(point)? {
                return Err(Error::Invalid(format!("point is not on L in chart {}", beta.id)));
            }
            let (_, h) = beta.derivatives(point)?;
            hessian_cocycle(beta.n, &beta.chart(), &gamma.chart(), &h)
        }
    }
}

/// α_{βγ} = φ_β − φ_γ at a point, given in each chart's base coordinates.
pub fn alpha_cocycle(beta: &LagrangianChartData, gamma: &LagrangianChartData, point_beta: &[Q], point_gamma: &[Q]) -> Result<Q> {
    for (ch, p) in [(beta, point_beta), (gamma, point_gamma)] {
        if !ch.on_lagrangian(p)? {
            return Err(Error::Invalid(format!("point is not on L in chart {}", ch.id)));
        }
    }
    Ok(beta.phase_at(point_beta)? - gamma.phase_at(point_gamma)?)
}

/// α_{βγ} evaluated at several points of one overlap; the values must agree.
pub fn alpha_constant(beta: &LagrangianChartData, gamma: &LagrangianChartData, points: &[(Vec<Q>, Vec<Q>)]) -> Result<Q> {
    let mut value: Option<Q> = None;
    for (pb, pg) in points {
        let v = alpha_cocycle(beta, gamma, pb, pg)?;
        match &value {
            Some(w) if *w != v => {
                return Err(Error::Invalid(format!("φ_{} − φ_{} is not constant on the overlap ({w} vs {v})", beta.id, gamma.id)))
            }
            _ => value = Some(v),
        }
    }
    value.ok_or_else(|| Error::Invalid("no sample points".into()))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Overlap {
    pub beta: String,
    pub gamma: String,
    pub kind: OverlapKind,
    /// Point of L as rational strings (x¹..xⁿ, ξ¹..ξⁿ) in β's base coordinates.
    pub point: Vec<String>,
    /// The same point in γ's base coordinates, when those differ.
    #[serde(default)]
    pub point_gamma: Option<Vec<String>>,
}

/// Cover JSON: charts, overlaps with sample points, optional triples.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Cover {
    pub charts: Vec<LagrangianChartData>,
    pub overlaps: Vec<Overlap>,
    #[serde(default)]
    pub triples: Vec<[String; 3]>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CechReport {
    pub antisymmetry_failures: Vec<(String, String)>,
    pub triple_failures: Vec<(String, String, String, String)>,
    pub triples_checked: usize,
    pub is_cocycle: bool,
    /// Whether every value is an integer.
    pub integral: bool,
    /// Whether the supplied 0-cochain b satisfies c_{βγ} = b_γ − b_β.
    pub trivialized: Option<bool>,
}

/// Checks a cochain given as values on ordered pairs.
pub fn verify_cech_cocycle(values: &BTreeMap<(String, String), Q>, triples: &[[String; 3]], cochain: Option<&BTreeMap<String, Q>>) -> Result<CechReport> {
    let get = |a: &String, b: &String| -> Result<Q> {
        if a == b {
            return Ok(Q::zero());
        }
        if let Some(v) = values.get(&(a.clone(), b.clone())) {
            return Ok(v.clone());
        }
        values
            .get(&(b.clone(), a.clone()))
            .map(|v| -v.clone())
            .ok_or_else(|| Error::Invalid(format!("missing overlap value for ({a}, {b})")))
    };
    let mut anti = Vec::new();
    for ((a, b), v) in values {
        if a == b && !v.is_zero() {
            anti.push((a.clone(), b.clone()));
        }
        if let Some(w) = values.get(&(b.clone(), a.clone())) {
            if a < b && (v + w) != Q::zero() {
                anti.push((a.clone(), b.clone()));
            }
        }
    }
    let mut fails = Vec::new();
    for [a, b, c] in triples {
        let s = get(a, b)? + get(b, c)? + get(c, a)?;
        if !s.is_zero() {
            fails.push((a.clone(), b.clone(), c.clone(), s.to_string()));
        }
    }
    let integral = values.values().all(|v| v.is_integer());
    let trivialized = match cochain {
        None => None,
        Some(b) => {
            let mut ok = true;
            for (x, y) in values.keys() {
                let (Some(bx), Some(by)) = (b.get(x), b.get(y)) else {
                    return Err(Error::Invalid(format!("cochain lacks {x} or {y}")));
                };
                ok &= get(x, y)? == by - bx;
            }
            Some(ok)
        }
    };
    Ok(CechReport {
        is_cocycle: anti.is_empty() && fails.is_empty(),
        antisymmetry_failures: anti,
        triple_failures: fails,
        triples_checked: triples.len(),
        integral,
        trivialized,
    })
}

pub fn parse_point(p: &[String]) -> Result<Vec<Q>> {
    p.iter().map(|s| parse_rational(s)).collect()
}

/// Maslov values (as ½·doubled rationals) and α values over a cover.
pub fn evaluate_cover(cover: &Cover) -> Result<(BTreeMap<(String, String), Q>, BTreeMap<(String, String), Q>)> {
    let charts: BTreeMap<&str, &LagrangianChartData> = cover.charts.iter().map(|c| (c.id.as_str(), c)).collect();
    for c in &cover.charts {
        c.validate()?;
    }
    let mut mu = BTreeMap::new();
    let mut alpha = BTreeMap::new();
    for o in &cover.overlaps {
        let b = charts.get(o.beta.as_str()).ok_or_else(|| Error::Invalid(format!("unknown chart {}", o.beta)))?;
        let g = charts.get(o.gamma.as_str()).ok_or_else(|| Error::Invalid(format!("unknown chart {}", o.gamma)))?;
        let pb = parse_point(&o.point)?;
        let pg = match &o.point_gamma {
            Some(p) => parse_point(p)?,
            None => pb.clone(),
        };
        let c2 = submanifold_cocycle(b, g, o.kind, &pb)?;
        mu.insert((o.beta.clone(), o.gamma.clone()), qfrac(c2, 2));
        alpha.insert((o.beta.clone(), o.gamma.clone()), alpha_cocycle(b, g, &pb, &pg)?);
    }
    Ok((mu, alpha))
}
