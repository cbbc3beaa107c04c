//! The formal Weil representation on Gaussian jets e^{iTx̂²/2ℏ}·f(x̂, ℏ).
//!
//! Symplectic matrices act on T by T ↦ (aT + b)(cT + d)⁻¹. With that
//! convention the generators are
//! shear [[1, A], [0, 1]], linear [[B⁻ᵗ, 0], [0, B]], Fourier on a block
//! [[0, 1], [−1, 0]] on that block, and words act left to right.
//! Fourier uses the kernel (2πℏ)^{-n/2}∫ e^{ixξ/ℏ}.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::legendre::Wick;
use crate::series::matrix::{gaussian_prefactor, inverse, max_abs, CMat, SymmetricMatrix};
use crate::series::{Exp, OscillatoryScalar, Series, Space, C64};
use crate::weyl::{x_name, WeylAlgebra};

pub type RMat = DMatrix<f64>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JetMode {
    /// Im T positive definite.
    Weil,
    /// T real; the action is only partially defined.
    Degenerate,
}

/// Amplitude space in x̂¹..x̂ⁿ and ℏ.
pub fn amplitude_space(n: usize, cap: u32) -> Arc<Space> {
    let mut names: Vec<String> = (0..n).map(|j| x_name(n, j)).collect();
    names.push("h".into());
    let mut weights = vec![1; n];
    weights.push(2);
    Space::new(names, weights, cap)
}

/// scalar · ℏ^{-hbar_shift} · e^{iTx̂²/2ℏ} · amplitude(x̂, ℏ).
///
/// A positive `hbar_shift` places the jet in the filtered completion; the
/// amplitude is then stored to weight cap + 2·hbar_shift so that every term
/// has filtration degree at most cap.
#[derive(Clone, Debug)]
pub struct GaussianJet {
    pub mode: JetMode,
    pub t: CMat,
    pub amplitude: Series,
    pub hbar_shift: u32,
    pub scalar: OscillatoryScalar,
}

fn check_mode(mode: JetMode, t: &CMat) -> Result<()> {
    let n = t.nrows();
    if !t.is_square() || (0..n).any(|i| (0..i).any(|j| (t[(i, j)] - t[(j, i)]).norm() > 1e-12)) {
        return Err(Error::Invalid("T is not symmetric".into()));
    }
    match mode {
        JetMode::Weil => {
            let im = t.map(|v| v.im);
            if n > 0 && im.symmetric_eigenvalues().min() <= 0.0 {
                return Err(Error::Invalid("Im T is not positive definite".into()));
            }
        }
        JetMode::Degenerate => {
            if t.iter().any(|v| v.im != 0.0) {
                return Err(Error::Invalid("degenerate-mode jets need real T".into()));
            }
        }
    }
    Ok(())
}

impl GaussianJet {
    pub fn new(mode: JetMode, t: CMat, amplitude: Series) -> Result<Self> {
        check_mode(mode, &t)?;
        let n = t.nrows();
        let sp = amplitude.space();
        if sp.nvars() != n + 1 || sp.hbar() != Some(n) {
            return Err(Error::SpaceMismatch("amplitude must live in x̂¹..x̂ⁿ, h".into()));
        }
        let cap = sp.cap() as i32;
        Ok(GaussianJet { mode, t, amplitude, hbar_shift: 0, scalar: OscillatoryScalar::one(cap) })
    }

    /// e^{-x̂²/2ℏ}: T = i·1, amplitude 1.
    pub fn standard(n: usize, cap: u32) -> Self {
        let t = CMat::from_diagonal_element(n, n, C64::i());
        Self::new(JetMode::Weil, t, Series::one(&amplitude_space(n, cap))).expect("standard Gaussian")
    }

    /// The jet 1 ∈ V_{T=0}.
    pub fn flat(n: usize, cap: u32, amplitude: Option<Series>) -> Result<Self> {
        let a = amplitude.unwrap_or_else(|| Series::one(&amplitude_space(n, cap)));
        Self::new(JetMode::Degenerate, CMat::zeros(n, n), a)
    }

    pub fn n(&self) -> usize {
        self.t.nrows()
    }

    /// Filtration cap.
    pub fn cap(&self) -> u32 {
        self.amplitude.space().cap() - 2 * self.hbar_shift
    }

    fn rebuild(&self, t: CMat, amplitude: Series, scalar: OscillatoryScalar) -> GaussianJet {
        GaussianJet { mode: self.mode, t, amplitude, hbar_shift: self.hbar_shift, scalar }
    }

    /// Amplitude with the scalar folded in, as (series, ℏ shift).
    pub fn effective(&self) -> (Series, u32) {
        let sp = self.amplitude.space().clone();
        let h = self.n();
        let lo = self.scalar.laurent.keys().next().copied().unwrap_or(0).min(0);
        let shift = self.hbar_shift + (-lo) as u32;
        let wide = sp.recapped(self.cap() + 2 * shift);
        let map: Vec<Option<usize>> = (0..sp.nvars()).map(Some).collect();
        let base = self.amplitude.embed(&wide, &map).expect("amplitude embed");
        let mut out = Series::zero(&wide);
        for (k, v) in self.scalar.flattened() {
            let mut e = wide.zero_exp();
            e[h] = (k - lo) as u16;
            out = &out + &(&base * &Series::monomial(&wide, e, v));
        }
        (out, shift)
    }

    /// Largest gap in T and in the effective amplitudes.
    pub fn distance(&self, other: &GaussianJet) -> f64 {
        self.distance_times(other, C64::new(1.0, 0.0))
    }

    fn distance_times(&self, other: &GaussianJet, factor: C64) -> f64 {
        if self.n() != other.n() {
            return f64::INFINITY;
        }
        let dt = max_abs(&(&self.t - &other.t));
        let (a, sa) = self.effective();
        let (b, sb) = other.effective();
        let s = sa.max(sb);
        let cap = self.cap().min(other.cap());
        let lift = |x: &Series, from: u32| {
            let sp = amplitude_space(self.n(), cap + 2 * s);
            let mut e = sp.zero_exp();
            e[self.n()] = (s - from) as u16;
            let map: Vec<Option<usize>> = (0..sp.nvars()).map(Some).collect();
            &x.filter(|ex| x.space().weighted_degree(ex) <= cap + 2 * from).embed(&sp, &map).expect("embed")
                * &Series::monomial(&sp, e, C64::new(1.0, 0.0))
        };
        let da = lift(&a, sa).max_abs_diff(&lift(&b, sb).scale(factor));
        dt.max(da)
    }

    /// Smallest gap over rescalings by e^{iπk/4}; returns (gap, k). The
    /// normalized generators close up only to eighth roots of unity.
    pub fn distance_up_to_center(&self, other: &GaussianJet) -> (f64, i64) {
        (0..8)
            .map(|k| (self.distance_times(other, C64::from_polar(1.0, std::f64::consts::FRAC_PI_4 * k as f64)), k as i64))
            .fold((f64::INFINITY, 0), |best, cur| if cur.0 < best.0 { cur } else { best })
    }

    /// Numerical value at a point for a given ℏ.
    pub fn value_at(&self, x: &[f64], hbar: f64) -> C64 {
        let n = self.n();
        let mut quad = C64::new(0.0, 0.0);
        for i in 0..n {
            for j in 0..n {
                quad += self.t[(i, j)] * x[i] * x[j];
            }
        }
        let mut args: Vec<C64> = x.iter().map(|&v| C64::new(v, 0.0)).collect();
        args.push(C64::new(hbar, 0.0));
        let amp = self.amplitude.evaluate(&args);
        (C64::i() * quad / (2.0 * hbar)).exp() * amp * self.scalar.value_at(hbar) * hbar.powi(-(self.hbar_shift as i32))
    }
}

#[derive(Serialize, Deserialize)]
struct JetJson {
    mode: JetMode,
    #[serde(rename = "T")]
    t: SymmetricMatrix,
    scalar: OscillatoryScalar,
    amplitude: Series,
    #[serde(default)]
    hbar_shift: u32,
}

impl Serialize for GaussianJet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        JetJson {
            mode: self.mode,
            t: SymmetricMatrix::Complex(self.t.clone()),
            scalar: self.scalar.clone(),
            amplitude: self.amplitude.clone(),
            hbar_shift: self.hbar_shift,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for GaussianJet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let j = JetJson::deserialize(d)?;
        let mut jet = GaussianJet::new(j.mode, j.t.to_complex(), j.amplitude).map_err(D::Error::custom)?;
        jet.scalar = j.scalar;
        jet.hbar_shift = j.hbar_shift;
        if jet.amplitude.space().cap() < 2 * j.hbar_shift {
            return Err(D::Error::custom("amplitude cap below the ℏ shift"));
        }
        Ok(jet)
    }
}

/// A generator of the metaplectic group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "lowercase")]
pub enum Generator {
    /// Real symmetric A.
    Shear(Vec<Vec<f64>>),
    /// Invertible B.
    Linear(Vec<Vec<f64>>),
    /// Variable indices transformed.
    Fourier(Vec<usize>),
    /// Power of i.
    Central(i64),
}

pub type SpWord = Vec<Generator>;

fn rmat(rows: &[Vec<f64>], n: usize) -> Result<RMat> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(Error::Invalid(format!("expected a {n}×{n} matrix")));
    }
    Ok(RMat::from_fn(n, n, |i, j| rows[i][j]))
}

fn rows_of(m: &RMat) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

fn to_c(m: &RMat) -> CMat {
    m.map(|v| C64::new(v, 0.0))
}

impl Generator {
    pub fn validate(&self, n: usize) -> Result<()> {
        match self {
            Generator::Shear(a) => {
                let a = rmat(a, n)?;
                if (&a - a.transpose()).abs().max() > 1e-12 {
                    return Err(Error::Invalid("shear matrix is not symmetric".into()));
                }
            }
            Generator::Linear(b) => {
                let b = rmat(b, n)?;
                if b.determinant().abs() <= 1e-12 {
                    return Err(Error::Singular("linear generator".into()));
                }
            }
            Generator::Fourier(s) => {
                if s.is_empty() || s.iter().any(|&k| k >= n) {
                    return Err(Error::Invalid("Fourier block must be a nonempty set of variable indices".into()));
                }
                let mut t = s.clone();
                t.sort();
                t.dedup();
                if t.len() != s.len() {
                    return Err(Error::Invalid("repeated index in Fourier block".into()));
                }
            }
            Generator::Central(_) => {}
        }
        Ok(())
    }

    /// Projection to Sp(2n) in the Möbius convention above.
    pub fn matrix(&self, n: usize) -> Result<RMat> {
        self.validate(n)?;
        let mut m = RMat::identity(2 * n, 2 * n);
        match self {
            Generator::Shear(a) => {
                m.view_mut((0, n), (n, n)).copy_from(&rmat(a, n)?);
            }
            Generator::Linear(b) => {
                let b = rmat(b, n)?;
                let bit = b.clone().try_inverse().unwrap().transpose();
                m.view_mut((0, 0), (n, n)).copy_from(&bit);
                m.view_mut((n, n), (n, n)).copy_from(&b);
            }
            Generator::Fourier(s) => {
                for &k in s {
                    m[(k, k)] = 0.0;
                    m[(n + k, n + k)] = 0.0;
                    m[(k, n + k)] = 1.0;
                    m[(n + k, k)] = -1.0;
                }
            }
            Generator::Central(_) => {}
        }
        Ok(m)
    }
}

/// Product of generator matrices for a left-to-right word.
pub fn word_matrix(word: &[Generator], n: usize) -> Result<RMat> {
    let mut m = RMat::identity(2 * n, 2 * n);
    for g in word {
        m = g.matrix(n)? * m;
    }
    Ok(m)
}

pub fn is_symplectic(m: &RMat, tol: f64) -> bool {
    let n = m.nrows() / 2;
    let mut j = RMat::zeros(2 * n, 2 * n);
    for k in 0..n {
        j[(k, n + k)] = 1.0;
        j[(n + k, k)] = -1.0;
    }
    (m.transpose() * &j * m - j).abs().max() <= tol
}

fn symmetrized(m: &RMat) -> RMat {
    (m + m.transpose()) * 0.5
}

/// A word S(c⁻¹d)·J·L(−c)·S(ac⁻¹) with the same projection to Sp as `m`.
/// When c is singular, m is first written as m·S(Q)·J times J⁻¹S(−Q).
pub fn normal_form(m: &RMat) -> Result<SpWord> {
    let n = m.nrows() / 2;
    if !is_symplectic(m, 1e-8) {
        return Err(Error::Invalid("matrix is not symplectic".into()));
    }
    let block = |m: &RMat, r: usize, c: usize| m.view((r * n, c * n), (n, n)).into_owned();
    let direct = |m: &RMat| -> Option<SpWord> {
        let (a, c, d) = (block(m, 0, 0), block(m, 1, 0), block(m, 1, 1));
        if c.determinant().abs() <= 1e-6 {
            return None;
        }
        let ci = c.clone().try_inverse()?;
        Some(vec![
            Generator::Shear(rows_of(&symmetrized(&(&ci * d)))),
            Generator::Fourier((0..n).collect()),
            Generator::Linear(rows_of(&(-c))),
            Generator::Shear(rows_of(&symmetrized(&(a * ci)))),
        ])
    };
    if let Some(w) = direct(m) {
        return Ok(w);
    }
    for t in 1..=20 {
        let q = RMat::from_fn(n, n, |i, j| if i == j { t as f64 * (i + 1) as f64 / 2.0 } else { 0.0 });
        let sq = Generator::Shear(rows_of(&q)).matrix(n)?;
        let jm = Generator::Fourier((0..n).collect()).matrix(n)?;
        let m2 = m * sq * jm;
        if let Some(tail) = direct(&m2) {
            let mut w = vec![
                Generator::Shear(rows_of(&(-q))),
                Generator::Fourier((0..n).collect()),
                Generator::Linear(rows_of(&(-RMat::identity(n, n)))),
            ];
            w.extend(tail);
            return Ok(w);
        }
    }
    Err(Error::Degenerate("no normal form found".into()))
}

/// F ↦ e^{iAx̂²/2ℏ}F.
pub fn act_shear(a: &RMat, jet: &GaussianJet) -> Result<GaussianJet> {
    Generator::Shear(rows_of(a)).validate(jet.n())?;
    Ok(jet.rebuild(&jet.t + to_c(a), jet.amplitude.clone(), jet.scalar.clone()))
}

/// F ↦ |det B|^{-1/2} F(B⁻¹x̂).
pub fn act_linear(b: &RMat, jet: &GaussianJet) -> Result<GaussianJet> {
    let n = jet.n();
    Generator::Linear(rows_of(b)).validate(n)?;
    let bi = b.clone().try_inverse().ok_or_else(|| Error::Singular("linear generator".into()))?;
    let bic = to_c(&bi);
    let t = bic.transpose() * &jet.t * &bic;
    let sp = jet.amplitude.space().clone();
    let subs: Vec<(usize, Series)> = (0..n)
        .map(|k| {
            let terms = (0..n).map(|j| (sp.unit_exp(j), C64::new(bi[(k, j)], 0.0)));
            (k, Series::from_terms(&sp, terms))
        })
        .collect();
    let amp = jet.amplitude.compose_partial(&subs)?;
    let scalar = jet.scalar.scale(C64::new(b.determinant().abs().powf(-0.5), 0.0));
    Ok(jet.rebuild(t, amp, scalar))
}

/// Fourier transform in the variables `block`, the others riding along.
pub fn act_fourier(block: &[usize], jet: &GaussianJet) -> Result<GaussianJet> {
    let n = jet.n();
    Generator::Fourier(block.to_vec()).validate(n)?;
    let rest: Vec<usize> = (0..n).filter(|k| !block.contains(k)).collect();
    let m = block.len();
    let sub = |rows: &[usize], cols: &[usize]| CMat::from_fn(rows.len(), cols.len(), |i, j| jet.t[(rows[i], cols[j])]);
    let t11 = sub(block, block);
    let t12 = sub(block, &rest);
    let t22 = sub(&rest, &rest);
    let eps = jet.amplitude.space().eps();
    let t11i = inverse(&t11, eps, "transformed block of T").map_err(|_| {
        Error::Degenerate(format!("T block on variables {block:?} is singular"))
    })?;
    let prefactor = gaussian_prefactor(&t11, eps)?;

    // new T in the order of the original slots, η sitting in the block slots
    let a11 = -&t11i;
    let a12 = -(&t11i * &t12);
    let a22 = &t22 - t12.transpose() * &t11i * &t12;
    let mut t = CMat::zeros(n, n);
    for (i, &bi) in block.iter().enumerate() {
        for (j, &bj) in block.iter().enumerate() {
            t[(bi, bj)] = a11[(i, j)];
        }
        for (j, &rj) in rest.iter().enumerate() {
            t[(bi, rj)] = a12[(i, j)];
            t[(rj, bi)] = a12[(i, j)];
        }
    }
    for (i, &ri) in rest.iter().enumerate() {
        for (j, &rj) in rest.iter().enumerate() {
            t[(ri, rj)] = a22[(i, j)];
        }
    }

    // amplitude: ⟨a(y_c + z, x_R)⟩ with y_c = −T₁₁⁻¹(η + T₁₂x_R)
    let sp = jet.amplitude.space().clone();
    let h = n;
    let mut names = sp.names().to_vec();
    let mut weights = sp.weights().to_vec();
    for j in 0..m {
        names.push(format!("_z{j}"));
        weights.push(1);
    }
    let work = Space::with_options(names, weights, sp.cap(), sp.param_cap(), sp.eps());
    let idmap: Vec<Option<usize>> = (0..sp.nvars()).map(Some).collect();
    let mut subs = Vec::with_capacity(m);
    for (i, &bi) in block.iter().enumerate() {
        let mut terms: Vec<(Exp, C64)> = Vec::new();
        for (j, &bj) in block.iter().enumerate() {
            terms.push((work.unit_exp(bj), -t11i[(i, j)]));
        }
        for (j, &rj) in rest.iter().enumerate() {
            terms.push((work.unit_exp(rj), a12[(i, j)]));
        }
        terms.push((work.unit_exp(sp.nvars() + i), C64::new(1.0, 0.0)));
        subs.push((bi, Series::from_terms(&work, terms)));
    }
    let shifted = jet.amplitude.embed(&work, &idmap)?.compose_partial(&subs)?;
    let mut wick = Wick::new(&t11, eps)?;
    let mut b = Series::zero(&sp);
    for (e, v) in shifted.iter() {
        let alpha = &e[sp.nvars()..];
        let mom = wick.moment(alpha);
        if mom.norm() == 0.0 {
            continue;
        }
        let half: u16 = alpha.iter().sum::<u16>() / 2;
        let mut f: Exp = Exp::from_slice(&e[..sp.nvars()]);
        f[h] += half;
        b.add_term(f, v * mom);
    }
    let scalar = jet.scalar.scale(prefactor);
    Ok(jet.rebuild(t, b.cleaned(), scalar))
}

pub fn act_central(k: i64, jet: &GaussianJet) -> GaussianJet {
    jet.rebuild(jet.t.clone(), jet.amplitude.clone(), jet.scalar.central(k))
}

pub fn act_generator(g: &Generator, jet: &GaussianJet) -> Result<GaussianJet> {
    let n = jet.n();
    match g {
        Generator::Shear(a) => act_shear(&rmat(a, n)?, jet),
        Generator::Linear(b) => act_linear(&rmat(b, n)?, jet),
        Generator::Fourier(s) => act_fourier(s, jet),
        Generator::Central(k) => Ok(act_central(*k, jet)),
    }
}

/// Left-to-right action; failures carry the step index.
pub fn act_word(word: &[Generator], jet: &GaussianJet) -> Result<GaussianJet> {
    let mut cur = jet.clone();
    for (step, g) in word.iter().enumerate() {
        cur = act_generator(g, &cur).map_err(|e| Error::Undefined { step, reason: e.to_string() })?;
    }
    Ok(cur)
}

/// exp((1/iℏ)·payload) acting on a jet, for payloads whose action raises the
/// filtration or preserves C[[x̂, ℏ]] (the group G̃≥0 acting on the
/// completion). Negative ℏ powers are tracked in `hbar_shift`.
pub fn act_lie(w: &WeylAlgebra, payload: &Series, jet: &GaussianJet) -> Result<GaussianJet> {
    let n = jet.n();
    if w.n() != n || w.nparams() != 0 {
        return Err(Error::SpaceMismatch("Weyl algebra does not match the jet".into()));
    }
    // e^{-iTx²/2ℏ} ξ̂ e^{iTx²/2ℏ} = ξ̂ − Tx̂
    let xs: Vec<Series> = (0..n).map(|j| w.x(j)).collect();
    let xis: Vec<Series> = (0..n)
        .map(|j| {
            let mut s = w.xi(j);
            for k in 0..n {
                if jet.t[(j, k)].norm() > 0.0 {
                    s = &s - &w.x(k).scale(jet.t[(j, k)]);
                }
            }
            s
        })
        .collect();
    let f = w.automorphism(&xs, &xis, payload)?;
    let cap = jet.cap();
    let bound = 4 * (cap as usize) + 8;
    let mut shift = jet.hbar_shift;
    let to_space = |s: &Series, sh: u32, extra: u32| -> Result<Series> {
        let sp = amplitude_space(n, cap + 2 * (sh + extra));
        let mut e = sp.zero_exp();
        e[n] = extra as u16;
        let map: Vec<Option<usize>> = (0..n + 1).map(Some).collect();
        Ok(&s.embed(&sp, &map)? * &Series::monomial(&sp, e, C64::new(1.0, 0.0)))
    };
    let mut sum = jet.amplitude.clone();
    let mut term = jet.amplitude.clone();
    let neg_i = C64::new(0.0, -1.0);
    for k in 1..=bound {
        // one ℏ is divided out below, so keep two extra weights of headroom
        let wk = w.recapped(cap + 2 * shift + 2);
        let fk = f.embed(wk.space(), &(0..2 * n + 1).map(Some).collect::<Vec<_>>())?;
        let wide = term.embed(wk.op_space(), &(0..n + 1).map(Some).collect::<Vec<_>>())?;
        let mut y = wk.apply(&fk, &wide)?;
        if y.iter().any(|(e, _)| e[n] == 0) {
            sum = to_space(&sum, shift, 1)?;
            y = to_space(&y, shift + 1, 1)?;
            shift += 1;
        }
        let sp = amplitude_space(n, cap + 2 * shift);
        let mut next = Series::zero(&sp);
        for (e, v) in y.iter() {
            let mut e2 = e.clone();
            e2[n] -= 1;
            next.add_term(e2, v * neg_i / k as f64);
        }
        term = next.cleaned();
        if term.is_zero() {
            return Ok(GaussianJet { mode: jet.mode, t: jet.t.clone(), amplitude: sum, hbar_shift: shift, scalar: jet.scalar.clone() });
        }
        sum = &sum + &term;
    }
    Err(Error::NonTerminating(bound))
}

fn random_symmetric<R: Rng>(rng: &mut R, n: usize, r: f64) -> RMat {
    let m = RMat::from_fn(n, n, |_, _| rng.gen_range(-r..r));
    symmetrized(&m)
}

pub fn random_generator<R: Rng>(rng: &mut R, n: usize) -> Generator {
    match rng.gen_range(0..4) {
        0 => Generator::Shear(rows_of(&random_symmetric(rng, n, 2.0))),
        1 => loop {
            let b = RMat::from_fn(n, n, |_, _| rng.gen_range(-2.0..2.0));
            if b.determinant().abs() > 0.3 {
                break Generator::Linear(rows_of(&b));
            }
        },
        2 => {
            let mut s: Vec<usize> = (0..n).filter(|_| rng.gen_bool(0.5)).collect();
            if s.is_empty() {
                s.push(rng.gen_range(0..n));
            }
            Generator::Fourier(s)
        }
        _ => Generator::Central(rng.gen_range(0..4)),
    }
}

/// Random jet with Im T ≥ 1/2 and a polynomial amplitude.
pub fn random_weil_jet<R: Rng>(rng: &mut R, n: usize, cap: u32) -> GaussianJet {
    let re = random_symmetric(rng, n, 1.0);
    let p = RMat::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let im = p.transpose() * &p + RMat::identity(n, n) * 0.5;
    let t = CMat::from_fn(n, n, |i, j| C64::new(re[(i, j)], im[(i, j)]));
    let sp = amplitude_space(n, cap);
    let mut terms = vec![(sp.zero_exp(), C64::new(1.0, 0.0))];
    for _ in 0..6 {
        let mut e = sp.zero_exp();
        for _ in 0..rng.gen_range(1..=3) {
            e[rng.gen_range(0..n)] += 1;
        }
        if rng.gen_bool(0.25) {
            e[n] += 1;
        }
        terms.push((e, C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))));
    }
    GaussianJet::new(JetMode::Weil, t, Series::from_terms(&sp, terms)).expect("random jet")
}

/// Stepwise action of a word against the action of a normal form of its
/// projection; returns (residual up to the center, power of e^{iπ/4}).
pub fn composition_residual(word: &[Generator], jet: &GaussianJet) -> Result<(f64, i64)> {
    let stepwise = act_word(word, jet)?;
    let nf = normal_form(&word_matrix(word, jet.n())?)?;
    let composed = act_word(&nf, jet)?;
    Ok(stepwise.distance_up_to_center(&composed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::parse::parse_series;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn r1(v: f64) -> RMat {
        RMat::from_element(1, 1, v)
    }

    fn mobius(m: &RMat, t: &CMat) -> CMat {
        let n = t.nrows();
        let c = to_c(m);
        let blk = |r: usize, col: usize| c.view((r * n, col * n), (n, n)).into_owned();
        let num = blk(0, 0) * t + blk(0, 1);
        let den = blk(1, 0) * t + blk(1, 1);
        num * den.try_inverse().unwrap()
    }

    #[test]
    fn shear_on_flat_jet() {
        let jet = GaussianJet::flat(1, 4, None).unwrap();
        let out = act_shear(&r1(1.0), &jet).unwrap();
        assert_eq!(out.t[(0, 0)], C64::new(1.0, 0.0));
        assert_eq!(out.amplitude, jet.amplitude);
        let back = act_shear(&r1(-1.0), &out).unwrap();
        assert!(back.distance(&jet) < 1e-15);
    }

    #[test]
    fn linear_by_two() {
        let sp = amplitude_space(1, 4);
        let f = parse_series("1 + x + x^3 + h*x", &sp).unwrap();
        let jet = GaussianJet::new(JetMode::Weil, CMat::from_element(1, 1, C64::new(0.5, 2.0)), f).unwrap();
        let out = act_linear(&r1(2.0), &jet).unwrap();
        assert!((out.t[(0, 0)] - C64::new(0.5, 2.0) / 4.0).norm() < 1e-15);
        let expect = parse_series("1 + x/2 + x^3/8 + h*x/2", &sp).unwrap();
        assert!(out.amplitude.max_abs_diff(&expect) < 1e-15);
        assert!((out.scalar.coeff(0) - 1.0 / 2f64.sqrt()).norm() < 1e-15);
    }

    #[test]
    fn standard_gaussian_is_self_dual() {
        for n in 1..=2 {
            let g = GaussianJet::standard(n, 6);
            let f = act_fourier(&(0..n).collect::<Vec<_>>(), &g).unwrap();
            assert!(f.distance(&g) < 1e-12);
            assert!((f.scalar.coeff(0) - 1.0).norm() < 1e-12);
        }
    }

    #[test]
    fn real_quadratic_prefactor() {
        for k in [1.0, -1.0, 2.0, -2.0, 3.0] {
            let jet = GaussianJet::new(JetMode::Degenerate, CMat::from_element(1, 1, C64::new(k, 0.0)), Series::one(&amplitude_space(1, 4))).unwrap();
            let out = act_fourier(&[0], &jet).unwrap();
            let expect = C64::from_polar(1.0 / f64::abs(k).sqrt(), PI / 4.0 * f64::signum(k));
            assert!((out.scalar.coeff(0) - expect).norm() < 1e-14);
            assert!((out.t[(0, 0)] + 1.0 / k).norm() < 1e-14);
        }
    }

    #[test]
    fn degenerate_block_is_undefined() {
        let jet = GaussianJet::flat(1, 4, None).unwrap();
        assert!(matches!(act_fourier(&[0], &jet), Err(Error::Degenerate(_))));
        let word = vec![Generator::Fourier(vec![0])];
        assert!(matches!(act_word(&word, &jet), Err(Error::Undefined { step: 0, .. })));
        // a shear first makes the block invertible
        let word = vec![Generator::Shear(vec![vec![1.0]]), Generator::Fourier(vec![0]), Generator::Shear(vec![vec![1.0]])];
        let out = act_word(&word, &jet).unwrap();
        assert!((out.t[(0, 0)]).norm() < 1e-14);
        assert!(act_word(&[], &jet).unwrap().distance(&jet) == 0.0);
    }

    /// The amplitude rule against a direct quadrature of the Fourier integral.
    #[test]
    fn fourier_amplitude_against_quadrature() {
        let sp = amplitude_space(1, 6);
        let f = parse_series("1 + x^2", &sp).unwrap();
        let jet = GaussianJet::new(JetMode::Weil, CMat::from_element(1, 1, C64::new(0.3, 1.0)), f).unwrap();
        let out = act_fourier(&[0], &jet).unwrap();
        let hbar = 0.05;
        for eta in [0.0, 0.1, -0.2] {
            // e^{-Im T x²/2ℏ} decays fast; the trapezoid rule is spectrally accurate here
            let (lo, hi, m) = (-3.0, 3.0, 6000);
            let dx = (hi - lo) / m as f64;
            let mut acc = C64::new(0.0, 0.0);
            for k in 0..=m {
                let x = lo + k as f64 * dx;
                let wgt = if k == 0 || k == m { 0.5 } else { 1.0 };
                acc += jet.value_at(&[x], hbar) * C64::from_polar(1.0, x * eta / hbar) * wgt * dx;
            }
            acc /= (2.0 * PI * hbar).sqrt();
            let got = out.value_at(&[eta], hbar);
            assert!((acc - got).norm() < 1e-9, "{acc} vs {got}");
        }
    }

    #[test]
    fn generator_matrices_act_by_mobius() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..30 {
            let jet = random_weil_jet(&mut rng, 2, 4);
            let g = random_generator(&mut rng, 2);
            let m = g.matrix(2).unwrap();
            assert!(is_symplectic(&m, 1e-10));
            let out = act_generator(&g, &jet).unwrap();
            assert!(max_abs(&(&out.t - mobius(&m, &jet.t))) < 1e-10, "{g:?}");
        }
    }

    #[test]
    fn normal_form_projects_back() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..30 {
            let w = vec![random_generator(&mut rng, 2), random_generator(&mut rng, 2)];
            let m = word_matrix(&w, 2).unwrap();
            let nf = normal_form(&m).unwrap();
            assert!((word_matrix(&nf, 2).unwrap() - &m).abs().max() < 1e-9);
        }
        // identity has c = 0
        let nf = normal_form(&RMat::identity(4, 4)).unwrap();
        assert!((word_matrix(&nf, 2).unwrap() - RMat::identity(4, 4)).abs().max() < 1e-9);
    }

    #[test]
    fn partial_fouriers_compose() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let jet = random_weil_jet(&mut rng, 2, 5);
        let a = act_word(&[Generator::Fourier(vec![0]), Generator::Fourier(vec![1])], &jet).unwrap();
        let b = act_fourier(&[0, 1], &jet).unwrap();
        assert!(a.distance(&b) < 1e-10, "{}", a.distance(&b));
    }

    #[test]
    fn fourier_squared_is_parity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let jet = random_weil_jet(&mut rng, 2, 5);
        let twice = act_word(&[Generator::Fourier(vec![0, 1]), Generator::Fourier(vec![0, 1])], &jet).unwrap();
        let parity = act_linear(&(-RMat::identity(2, 2)), &jet).unwrap();
        let (d, _) = twice.distance_up_to_center(&parity);
        assert!(d < 1e-10);
    }

    #[test]
    fn degenerate_limit() {
        let sp = amplitude_space(1, 4);
        let f = parse_series("1 + x + x^2*h", &sp).unwrap();
        let t0 = CMat::from_element(1, 1, C64::new(-1.5, 0.0));
        let v0 = act_fourier(&[0], &GaussianJet::new(JetMode::Degenerate, t0.clone(), f.clone()).unwrap()).unwrap();
        let mut last = f64::INFINITY;
        for delta in [1e-2, 1e-3, 1e-4] {
            let t = t0.map(|v| v + C64::new(0.0, delta));
            let vd = act_fourier(&[0], &GaussianJet::new(JetMode::Weil, t, f.clone()).unwrap()).unwrap();
            let d = vd.distance(&v0);
            assert!(d < last && d < 10.0 * delta);
            last = d;
        }
    }

    #[test]
    fn lie_p_preserves_flat_jets() {
        let w = WeylAlgebra::new(1, 6);
        let jet = GaussianJet::flat(1, 6, Some(parse_series("1 + x^2", &amplitude_space(1, 6)).unwrap())).unwrap();
        // (1/iℏ)x̂²ξ̂ lies in Lie(P): stays in C[[x̂, ℏ]]
        let out = act_lie(&w, &w.parse("x^2*xi").unwrap(), &jet).unwrap();
        assert_eq!(out.hbar_shift, 0);
        // (1/iℏ)x̂³ leaves it
        let out = act_lie(&w, &w.parse("x^3").unwrap(), &jet).unwrap();
        assert!(out.hbar_shift > 0);
        // N acts trivially mod ℏ
        let out = act_lie(&w, &w.parse("xi^2*x + h*xi").unwrap(), &jet).unwrap();
        let d = &out.amplitude - &jet.amplitude;
        assert!(d.iter().all(|(e, _)| e[1] > 0));
    }

    #[test]
    fn jet_json_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let jet = random_weil_jet(&mut rng, 2, 3);
        let s = serde_json::to_string(&jet).unwrap();
        let back: GaussianJet = serde_json::from_str(&s).unwrap();
        assert_eq!(back.distance(&jet), 0.0);
        let word = vec![Generator::Shear(vec![vec![1.0]]), Generator::Fourier(vec![0]), Generator::Central(1)];
        let s = serde_json::to_string(&word).unwrap();
        assert!(s.contains("\"kind\":\"shear\""));
        assert_eq!(serde_json::from_str::<SpWord>(&s).unwrap(), word);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn two_generator_words_compose(seed in 0u64..100_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.gen_range(1..=2);
            let jet = random_weil_jet(&mut rng, n, 6);
            let word = vec![random_generator(&mut rng, n), random_generator(&mut rng, n)];
            let (d, _) = composition_residual(&word, &jet).unwrap();
            prop_assert!(d < 1e-8, "{d} for {word:?}");
        }

        #[test]
        fn linear_multiplicative_and_mixed(seed in 0u64..100_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let jet = random_weil_jet(&mut rng, 2, 5);
            let gen_b = |rng: &mut ChaCha8Rng| loop {
                let b = RMat::from_fn(2, 2, |_, _| rng.gen_range(-2.0..2.0));
                if b.determinant().abs() > 0.3 { break b; }
            };
            let b1 = gen_b(&mut rng);
            let b2 = gen_b(&mut rng);
            let a = random_symmetric(&mut rng, 2, 2.0);
            // act_linear(B)∘act_linear(B') = act_linear(BB')
            let lhs = act_linear(&b1, &act_linear(&b2, &jet).unwrap()).unwrap();
            let rhs = act_linear(&(&b1 * &b2), &jet).unwrap();
            prop_assert!(lhs.distance(&rhs) < 1e-10);
            // act_linear(B)∘act_shear(A) = act_shear(B⁻ᵗAB⁻¹)∘act_linear(B)
            let bi = b1.clone().try_inverse().unwrap();
            let lhs = act_linear(&b1, &act_shear(&a, &jet).unwrap()).unwrap();
            let rhs = act_shear(&(bi.transpose() * &a * &bi), &act_linear(&b1, &jet).unwrap()).unwrap();
            prop_assert!(lhs.distance(&rhs) < 1e-10);
        }
    }
}
