//! Both sides of the kernel inequalities, and the energy functional `E(q, xi)`.
//!
//! Every scan row carries `lhs`, `rhs` and `ratio = lhs / (rhs |xi|^p)` where `p` is
//! the power of `|xi|` in the constant of the inequality being checked.

use crate::error::{Error, Result};
use crate::fieldgrid::{multi_indices, GridField, GridSpec, NormKind, SpectralField};
use crate::kernel::{apply_kernel, ComplexFrequency, KernelMultiplier, KernelSplit, SplitMasks};
use crate::vec3::{add, dot, norm, scale, sub};
use crate::{par, Complex64, Vec3};
use rustfft::FftPlanner;
use std::f64::consts::PI;

/// The inequalities checked by the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum EstimateCase {
    /// `||K*f||_{H^k(B_r)} <= C/|xi| ||f||_{H^k}`.
    Su1,
    /// `||K*f||_{H^{k+1}(B_r)} <= C ||f||_{H^k}`.
    Su2_1,
    /// `||K*f||_{L^2(B_r)} <= C ||f||_{H^{-1}}`.
    Su2,
    /// `||K*f||_{H^{k+1}(B_r)} <= C |xi| ||f||_{H^{k-1}}`.
    Su3,
    /// `||grad W|| + |xi| ||W|| <= C (||g1||_inf + ||g2||_{L^d}) (||grad V|| + |xi| ||V||)`.
    Lem1,
    /// As `Lem1` with `C^2`/`C^1` norms of `g1`/`g2` and an extra `1/|xi|`.
    Lem2,
    /// `||W||_{L^p(B_2)} <= C ||f||_{L^{p'}}`, `p = 2d/(d-2)`.
    Krs,
    /// `||W||_{H^1(B_r)} <= C ||V||_{H^1(B_2)} E(q, xi)^{1/2}`.
    LemNew,
}

impl EstimateCase {
    pub fn expected_xi_power(&self) -> i32 {
        match self {
            EstimateCase::Su1 | EstimateCase::Lem2 => -1,
            EstimateCase::Su3 => 1,
            _ => 0,
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name.to_ascii_uppercase().replace('-', "_").as_str() {
            "SU1" => EstimateCase::Su1,
            "SU2_1" => EstimateCase::Su2_1,
            "SU2" => EstimateCase::Su2,
            "SU3" => EstimateCase::Su3,
            "LEM1" => EstimateCase::Lem1,
            "LEM2" => EstimateCase::Lem2,
            "KRS" => EstimateCase::Krs,
            "LEMNEW" | "LEM_NEW" => EstimateCase::LemNew,
            other => return Err(Error::InvalidArgument(format!("unknown case {other}"))),
        })
    }

    pub fn is_field_case(&self) -> bool {
        matches!(
            self,
            EstimateCase::Su1
                | EstimateCase::Su2_1
                | EstimateCase::Su2
                | EstimateCase::Su3
                | EstimateCase::Krs
        )
    }
}

/// One row of a ratio scan.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct RatioRow {
    pub s: f64,
    pub xi_norm: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
}

impl RatioRow {
    fn new(case: EstimateCase, xi: &ComplexFrequency, lhs: f64, rhs: f64) -> Result<Self> {
        if rhs == 0.0 && lhs > 0.0 {
            return Err(Error::Degenerate("right side vanishes while left side does not".into()));
        }
        let xn = xi.norm();
        let ratio = if lhs == 0.0 {
            0.0
        } else {
            lhs / (rhs * xn.powi(case.expected_xi_power()))
        };
        Ok(Self {
            s: xi.s,
            xi_norm: xn,
            lhs,
            rhs,
            ratio,
        })
    }

    /// `lhs / rhs` without the `|xi|` power.
    pub fn raw_ratio(&self) -> f64 {
        if self.lhs == 0.0 {
            0.0
        } else {
            self.lhs / self.rhs
        }
    }
}

/// Both sides of a field case (`Su*`, `Krs`) for one frequency.
///
/// `k` is the Sobolev index of the display and `r` the ball radius of the left side;
/// `Krs` ignores `k` and uses `B_2` (or `B_{L/2}` on small boxes).
pub fn field_case_row(
    case: EstimateCase,
    f: &GridField,
    xi: &ComplexFrequency,
    k: u32,
    r: f64,
) -> Result<RatioRow> {
    if !case.is_field_case() {
        return Err(Error::InvalidArgument(format!("{case:?} needs lemma inputs")));
    }
    if case == EstimateCase::Krs {
        let d = f.spec.dim() as f64;
        let p = 2.0 * d / (d - 2.0);
        return krs_sides(f, xi, p).and_then(|(l, rr)| RatioRow::new(case, xi, l, rr));
    }
    let (w, _) = apply_kernel(xi, f, None)?;
    let fs = f.to_spectral();
    let (lhs, rhs) = match case {
        EstimateCase::Su1 => (w.norm(NormKind::HkBall(k, r))?, fs.sobolev_norm(k as f64)),
        EstimateCase::Su2_1 => (w.norm(NormKind::HkBall(k + 1, r))?, fs.sobolev_norm(k as f64)),
        EstimateCase::Su2 => (w.norm(NormKind::L2Ball(r))?, fs.sobolev_norm(-1.0)),
        EstimateCase::Su3 => (
            w.norm(NormKind::HkBall(k + 1, r))?,
            fs.sobolev_norm(k as f64 - 1.0),
        ),
        _ => unreachable!(),
    };
    RatioRow::new(case, xi, lhs, rhs)
}

/// Scan a field case over a list of frequencies.
pub fn ratio_scan(
    case: EstimateCase,
    f: &GridField,
    xi_list: &[ComplexFrequency],
    k: u32,
    r: f64,
) -> Result<Vec<RatioRow>> {
    xi_list
        .iter()
        .map(|xi| field_case_row(case, f, xi, k, r))
        .collect()
}

fn krs_sides(f: &GridField, xi: &ComplexFrequency, p: f64) -> Result<(f64, f64)> {
    let d = f.spec.dim() as f64;
    if f.spec.dim() < 3 || (p - 2.0 * d / (d - 2.0)).abs() > 1e-12 {
        return Err(Error::InvalidArgument(format!(
            "unsupported exponent pair: p = {p} in dimension {d}"
        )));
    }
    let p_dual = 2.0 * d / (d + 2.0);
    let (w, _) = apply_kernel(xi, f, None)?;
    let r = crate::cgo::norm_radius(&f.spec);
    Ok((
        w.lp_norm_unchecked(p, Some(r)),
        f.lp_norm_unchecked(p_dual, None),
    ))
}

/// `||K_xi * f||_{L^p(B_2)} / ||f||_{L^{p'}}` with `p = 2d/(d-2)`, `p' = 2d/(d+2)`.
pub fn krs_ratio(f: &GridField, xi: &ComplexFrequency, p: f64) -> Result<f64> {
    let (l, r) = krs_sides(f, xi, p)?;
    if r == 0.0 {
        if l == 0.0 {
            return Ok(0.0);
        }
        return Err(Error::Degenerate("zero input with nonzero output".into()));
    }
    Ok(l / r)
}

/// Inputs of the product lemmas: `q = div g1 + g2` acting on `V`.
#[derive(Debug, Clone)]
pub struct LemmaInput {
    pub g1: Vec<GridField>,
    pub g2: GridField,
    pub v: GridField,
}

impl LemmaInput {
    pub fn potential(&self) -> Result<GridField> {
        GridField::divergence(&self.g1)?.add(&self.g2)
    }

    /// `sum_{|alpha| <= m} sup |d^alpha g|`, maximised over components.
    fn c_norm(fields: &[GridField], m: u32) -> f64 {
        let dim = fields[0].spec.dim();
        fields
            .iter()
            .map(|g| {
                let s = g.to_spectral();
                multi_indices(dim, m)
                    .into_iter()
                    .map(|a| s.derivative(a).to_field().sup_norm())
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }

    fn linf_vector(fields: &[GridField]) -> f64 {
        let n = fields[0].len();
        (0..n)
            .map(|i| fields.iter().map(|g| g.values[i].norm_sqr()).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }
}

/// `||grad u||_{L^2(B_r)} + |xi| ||u||_{L^2(B_r)}`, or over the box when `r` is `None`.
fn weighted_h1(u: &GridField, xi_norm: f64, r: Option<f64>) -> Result<f64> {
    let grads = u.gradient();
    let (g2, u2) = match r {
        Some(r) => {
            let mut g = 0.0;
            for c in &grads {
                g += c.norm(NormKind::L2Ball(r))?.powi(2);
            }
            (g, u.norm(NormKind::L2Ball(r))?.powi(2))
        }
        None => {
            let mut g = 0.0;
            for c in &grads {
                g += c.lp_norm_unchecked(2.0, None).powi(2);
            }
            (g, u.lp_norm_unchecked(2.0, None).powi(2))
        }
    };
    Ok(g2.sqrt() + xi_norm * u2.sqrt())
}

/// `Lem1` and `Lem2` rows for one frequency, sharing the kernel application.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct LemmaPair {
    pub lem1: RatioRow,
    pub lem2: RatioRow,
}

/// Input norms that do not depend on `xi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LemmaNorms {
    /// `||g1||_inf + ||g2||_{L^d}`.
    pub rough: f64,
    /// `||g1||_{C^2} + ||g2||_{C^1}`.
    pub smooth: f64,
}

impl LemmaInput {
    pub fn norms(&self) -> LemmaNorms {
        let d = self.g2.spec.dim() as f64;
        LemmaNorms {
            rough: LemmaInput::linf_vector(&self.g1) + self.g2.lp_norm_unchecked(d, None),
            smooth: LemmaInput::c_norm(&self.g1, 2)
                + LemmaInput::c_norm(std::slice::from_ref(&self.g2), 1),
        }
    }
}

/// `W = K_xi * (q V)`.
fn lemma_w(q: &GridField, v: &GridField, xi: &ComplexFrequency) -> Result<GridField> {
    let qv = q.mul(v)?;
    Ok(KernelMultiplier::new(xi, &q.spec, None).apply(&qv, None))
}

/// Both sides of `Lem1` and `Lem2`; `norms` may be precomputed with [`LemmaInput::norms`].
pub fn lemma_pair(
    input: &LemmaInput,
    norms: Option<LemmaNorms>,
    xi: &ComplexFrequency,
    r: f64,
) -> Result<LemmaPair> {
    let q = input.potential()?;
    let w = lemma_w(&q, &input.v, xi)?;
    let xn = xi.norm();
    let norms = norms.unwrap_or_else(|| input.norms());
    let lhs = weighted_h1(&w, xn, Some(r))?;
    let v = weighted_h1(&input.v, xn, None)?;
    Ok(LemmaPair {
        lem1: RatioRow::new(EstimateCase::Lem1, xi, lhs, norms.rough * v)?,
        lem2: RatioRow::new(EstimateCase::Lem2, xi, lhs, norms.smooth * v)?,
    })
}

/// A named member of the lemma dictionary.
#[derive(Debug, Clone)]
pub struct DictionaryMember {
    pub label: String,
    pub input: LemmaInput,
}

/// Smooth test inputs for the product lemmas, all supported in `B_radius`:
/// `V = bump`; the flat members `g1 = bump e`, `g2 = bump`; and the resonant members
/// `g1 = bump cos(k0.x) e`, `g2 = 0` with `k0` on `Gamma_xi` (at `phi = 0` and `pi/2`,
/// so `|k0| = s` and `s/sqrt 2` for `xi_1`). Polarisations `e` run over the frame.
pub fn lemma_dictionary(
    spec: &GridSpec,
    xi: &ComplexFrequency,
    frame: &crate::kernel::Frame,
    radius: f64,
) -> Result<Vec<DictionaryMember>> {
    let geom = xi.charset()?;
    let b = move |x: &Vec3| crate::fieldgrid::bump(norm(x), radius);
    let v = GridField::from_real_fn(*spec, b);
    let dim = spec.dim();
    let mut out = Vec::new();
    let mut waves: Vec<(String, Option<Vec3>)> = vec![("flat".into(), None)];
    for (name, phi) in [("phi=0", 0.0), ("phi=pi/2", PI / 2.0)] {
        waves.push((format!("resonant {name}"), Some(geom.point(phi))));
    }
    for (name, k0) in waves {
        for (j, e) in [frame.sigma1, frame.sigma2, frame.sigma3].iter().enumerate() {
            let g1: Vec<GridField> = (0..dim)
                .map(|c| {
                    GridField::from_real_fn(*spec, |x| {
                        let wave = k0.map_or(1.0, |k| dot(&k, x).cos());
                        b(x) * wave * e[c]
                    })
                })
                .collect();
            let g2 = if k0.is_none() {
                v.clone()
            } else {
                GridField::zeros(*spec)
            };
            out.push(DictionaryMember {
                label: format!("{name} e{}", j + 1),
                input: LemmaInput {
                    g1,
                    g2,
                    v: v.clone(),
                },
            });
        }
    }
    Ok(out)
}

/// Dictionary maxima of the `Lem1` and `Lem2` ratios at one frequency.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct LemmaScanRow {
    pub s: f64,
    pub xi_norm: f64,
    pub n: usize,
    pub lem1_max: f64,
    pub lem1_arg: String,
    pub lem2_max: f64,
    pub lem2_arg: String,
}

/// Grid for the lemma scan at `s`: `L = 2` and the smallest `n >= 64` whose band
/// `(pi/L)(n/2)` reaches `1.5 s + 2`, so the resonant members stay resolved.
pub fn lemma_grid(s: f64) -> GridSpec {
    let l = 2.0;
    let mut n = 64;
    while (PI / l) * ((n / 2) as f64) < 1.5 * s + 2.0 {
        n *= 2;
    }
    GridSpec::new(3, n, l).expect("valid grid")
}

/// `max lhs/rhs` over [`lemma_dictionary`] for each `s`, with `xi = xi_1(s)` in `frame`.
pub fn lemma_scan(
    s_list: &[f64],
    frame: &crate::kernel::Frame,
    radius: f64,
    r: f64,
) -> Result<Vec<LemmaScanRow>> {
    s_list
        .iter()
        .map(|&s| {
            let spec = lemma_grid(s);
            let xi = crate::kernel::make_xi1(s, frame.sigma1, frame.sigma2)?;
            let mut row = LemmaScanRow {
                s,
                xi_norm: xi.norm(),
                n: spec.n(),
                lem1_max: 0.0,
                lem1_arg: String::new(),
                lem2_max: 0.0,
                lem2_arg: String::new(),
            };
            for m in lemma_dictionary(&spec, &xi, frame, radius)? {
                let p = lemma_pair(&m.input, None, &xi, r)?;
                if p.lem1.raw_ratio() > row.lem1_max {
                    row.lem1_max = p.lem1.raw_ratio();
                    row.lem1_arg = m.label.clone();
                }
                if p.lem2.raw_ratio() > row.lem2_max {
                    row.lem2_max = p.lem2.raw_ratio();
                    row.lem2_arg = m.label;
                }
            }
            Ok(row)
        })
        .collect()
}

/// Both sides of `Lem1`, `Lem2` or `LemNew` for one frequency.
pub fn lemma_row(
    case: EstimateCase,
    input: &LemmaInput,
    xi: &ComplexFrequency,
    r: f64,
) -> Result<RatioRow> {
    match case {
        EstimateCase::Lem1 => Ok(lemma_pair(input, None, xi, r)?.lem1),
        EstimateCase::Lem2 => Ok(lemma_pair(input, None, xi, r)?.lem2),
        EstimateCase::LemNew => {
            let q = input.potential()?;
            let w = lemma_w(&q, &input.v, xi)?;
            let lhs = w.norm(NormKind::HkBall(1, r))?;
            let e = energy_functional(&q.to_spectral(), xi)?;
            let rhs = crate::cgo::h1_b2(&input.v) * e.total.sqrt();
            RatioRow::new(case, xi, lhs, rhs)
        }
        _ => Err(Error::InvalidArgument(format!("{case:?} is a field case"))),
    }
}

/// `q~(k) = max |q^(eta)|` over lattice points `eta` with `|eta - k| <= 4`.
#[derive(Debug, Clone, PartialEq)]
pub struct QTilde {
    pub spec: GridSpec,
    pub values: Vec<f64>,
}

/// Radius of the window defining `q~`.
pub const QTILDE_RADIUS: f64 = 4.0;

/// Windowed maximum of `|q^|`, computed as one-dimensional running maxima along the
/// last axis (one per chord length of the ball) followed by a maximum over the
/// remaining offsets.
pub fn q_tilde(q: &SpectralField) -> Result<QTilde> {
    let spec = q.spec;
    let dk = spec.freq_step();
    if dk > QTILDE_RADIUS {
        return Err(Error::InvalidArgument(format!(
            "frequency spacing {dk} exceeds the window radius {QTILDE_RADIUS}"
        )));
    }
    let n = spec.n() as i64;
    let dim = spec.dim();
    let rad = QTILDE_RADIUS / dk;
    let rint = rad.floor() as i64;
    let mag: Vec<f64> = q.coeffs.iter().map(|c| c.norm()).collect();
    let last = dim - 1;
    // Running maxima along the last axis for every half-width 0..=rint.
    let chord: Vec<Vec<f64>> = (0..=rint)
        .map(|c| {
            par::map_range(spec.len(), |i| {
                let j = spec.multi_index(i);
                let mut best = 0.0f64;
                for t in -c..=c {
                    let jl = j[last] as i64 + t;
                    if jl < 0 || jl >= n {
                        continue;
                    }
                    let mut jj = j;
                    jj[last] = jl as usize;
                    best = best.max(mag[spec.linear_index(jj)]);
                }
                best
            })
        })
        .collect();
    let mut offsets = Vec::new();
    let outer_range = if dim == 3 { -rint..=rint } else { 0..=0 };
    for a in outer_range {
        for b in -rint..=rint {
            let (oa, ob) = if dim == 3 { (a, b) } else { (b, 0) };
            let rest = rad * rad - (oa * oa + ob * ob) as f64;
            if rest < -1e-12 {
                continue;
            }
            let c = (rest.max(0.0).sqrt() + 1e-12).floor() as i64;
            offsets.push((oa, ob, c));
        }
    }
    let values = par::map_range(spec.len(), |i| {
        let j = spec.multi_index(i);
        let mut best = 0.0f64;
        for &(oa, ob, c) in &offsets {
            let mut jj = j;
            let j0 = j[0] as i64 + oa;
            if j0 < 0 || j0 >= n {
                continue;
            }
            jj[0] = j0 as usize;
            if dim == 3 {
                let j1 = j[1] as i64 + ob;
                if j1 < 0 || j1 >= n {
                    continue;
                }
                jj[1] = j1 as usize;
            }
            best = best.max(chord[c as usize][spec.linear_index(jj)]);
        }
        best
    });
    Ok(QTilde { spec, values })
}

/// Direct evaluation of `q~` by scanning every lattice pair (test oracle).
pub fn q_tilde_brute(q: &SpectralField) -> QTilde {
    let spec = q.spec;
    let values = par::map_range(spec.len(), |i| {
        let k = spec.freq(i);
        let mut best = 0.0f64;
        for j in 0..spec.len() {
            let e = spec.freq(j);
            if norm(&sub(&e, &k)) <= QTILDE_RADIUS + 1e-9 {
                best = best.max(q.coeffs[j].norm());
            }
        }
        best
    });
    QTilde { spec, values }
}

/// The three terms of `E(q, xi)`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct EnergyBreakdown {
    pub term_mid: f64,
    pub term_near: f64,
    pub term_base: f64,
    pub total: f64,
}

impl EnergyBreakdown {
    fn new(term_mid: f64, term_near: f64, term_base: f64) -> Self {
        Self {
            term_mid,
            term_near,
            term_base,
            total: term_mid + term_near + term_base,
        }
    }

    /// `term_mid + term_near`, the part that depends on `xi`.
    pub fn xi_dependent(&self) -> f64 {
        self.term_mid + self.term_near
    }
}

/// Treatment of the coincident point `k = eta` of `1/|k - eta|^2` on the lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiagonalRule {
    /// Drop the coincident term.
    Exclude,
    /// Replace it by the mean of the integrand over the `2d` nearest neighbours.
    NeighbourMean,
}

/// `||q||^2_{H^{-1/2}}` as a lattice sum.
pub fn base_term(q: &SpectralField) -> f64 {
    let spec = q.spec;
    let w = spec.lattice_weight();
    let terms = par::map_range(spec.len(), |i| {
        let k = spec.freq(i);
        q.coeffs[i].norm_sqr() / (1.0 + dot(&k, &k)).sqrt()
    });
    w * par::pairwise_sum(&terms)
}

/// `S(eta) = sum_{k != eta} a(k) / |k - eta|^2` on the lattice, by zero-padded FFT.
fn inverse_square_convolution(spec: &GridSpec, a: &[f64]) -> Vec<f64> {
    let n = spec.n();
    let m = 2 * n;
    let dim = spec.dim();
    let big = GridSpec::new(dim, m, 1.0).expect("valid padded grid");
    let dk = spec.freq_step();
    let mut fa = vec![Complex64::new(0.0, 0.0); big.len()];
    let mut fg = vec![Complex64::new(0.0, 0.0); big.len()];
    for i in 0..spec.len() {
        let j = spec.multi_index(i);
        fa[big.linear_index(j)] = Complex64::new(a[i], 0.0);
    }
    for i in 0..big.len() {
        let j = big.multi_index(i);
        let mut r2 = 0.0;
        for t in 0..dim {
            let o = if j[t] < n { j[t] as f64 } else { j[t] as f64 - m as f64 };
            r2 += (o * dk).powi(2);
        }
        if r2 > 0.0 {
            fg[i] = Complex64::new(1.0 / r2, 0.0);
        }
    }
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(m);
    let inv = planner.plan_fft_inverse(m);
    let run = |data: &mut Vec<Complex64>, fft: &std::sync::Arc<dyn rustfft::Fft<f64>>| {
        for axis in 0..dim {
            let stride = m.pow((dim - 1 - axis) as u32);
            let lines = data.len() / m;
            let mut buf = vec![Complex64::new(0.0, 0.0); m];
            for line in 0..lines {
                let outer = line / stride;
                let inner = line % stride;
                let base = outer * m * stride + inner;
                for (t, x) in buf.iter_mut().enumerate() {
                    *x = data[base + t * stride];
                }
                fft.process(&mut buf);
                for (t, x) in buf.iter().enumerate() {
                    data[base + t * stride] = *x;
                }
            }
        }
    };
    run(&mut fa, &fwd);
    run(&mut fg, &fwd);
    for (x, y) in fa.iter_mut().zip(&fg) {
        *x *= y;
    }
    run(&mut fa, &inv);
    let norm = 1.0 / big.len() as f64;
    (0..spec.len())
        .map(|i| fa[big.linear_index(spec.multi_index(i))].re * norm)
        .collect()
}

fn diagonal_neighbour_mean(spec: &GridSpec, a: &[f64], i: usize) -> f64 {
    let m = spec.freq_int(i);
    let dim = spec.dim();
    let dk = spec.freq_step();
    let mut total = 0.0;
    for axis in 0..dim {
        for sgn in [-1i64, 1] {
            let mut mm = m;
            mm[axis] += sgn;
            if let Some(j) = spec.index_of_freq_int(mm) {
                total += a[j] / (dk * dk);
            }
        }
    }
    total / (2 * dim) as f64
}

/// `E(q, xi)` on the lattice (three dimensions), neighbour-mean diagonal rule.
pub fn energy_functional(q: &SpectralField, xi: &ComplexFrequency) -> Result<EnergyBreakdown> {
    energy_functional_with(q, xi, DiagonalRule::NeighbourMean)
}

/// `E(q, xi)` on the lattice with an explicit diagonal rule.
pub fn energy_functional_with(
    q: &SpectralField,
    xi: &ComplexFrequency,
    rule: DiagonalRule,
) -> Result<EnergyBreakdown> {
    let spec = q.spec;
    if spec.dim() != 3 {
        return Err(Error::InvalidArgument("E(q, xi) is defined in three dimensions".into()));
    }
    if q.coeffs.iter().all(|c| c.norm() == 0.0) {
        return Ok(EnergyBreakdown::new(0.0, 0.0, 0.0));
    }
    let masks = crate::kernel::split_masks(xi, &spec)?;
    let kernel = KernelMultiplier::new(xi, &spec, None);
    let w = spec.lattice_weight();
    let mid_weight: Vec<f64> = (0..spec.len())
        .map(|i| {
            if masks.parts[i] != KernelSplit::Mid {
                return 0.0;
            }
            let k = spec.freq(i);
            dot(&k, &k) * kernel.values[i].norm_sqr()
        })
        .collect();
    let near_ind: Vec<f64> = masks
        .parts
        .iter()
        .map(|p| if *p == KernelSplit::Near { 1.0 } else { 0.0 })
        .collect();
    let mag2: Vec<f64> = q.coeffs.iter().map(|c| c.norm_sqr()).collect();
    let qt = q_tilde(q)?;
    let term = |weights: &[f64], dens: &[f64], masks: &SplitMasks, part: KernelSplit| {
        let conv = inverse_square_convolution(&spec, weights);
        let vals: Vec<f64> = (0..spec.len())
            .map(|i| {
                let mut s = conv[i];
                if rule == DiagonalRule::NeighbourMean && masks.parts[i] == part {
                    s += diagonal_neighbour_mean(&spec, weights, i);
                }
                dens[i] * s
            })
            .collect();
        w * w * par::pairwise_sum(&vals)
    };
    let term_mid = term(&mid_weight, &mag2, &masks, KernelSplit::Mid);
    let qt2: Vec<f64> = qt.values.iter().map(|v| v * v).collect();
    let term_near = term(&near_ind, &qt2, &masks, KernelSplit::Near);
    Ok(EnergyBreakdown::new(term_mid, term_near, base_term(q)))
}

/// Node counts of the continuum quadrature for `E(q, xi)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureOptions {
    /// Nodes along the circle (graded towards the origin).
    pub n_phi: usize,
    /// Nodes around the tube cross-section.
    pub n_theta: usize,
    /// Log-spaced radial nodes across the Mid region.
    pub n_r_mid: usize,
    /// Radial nodes across the Near tube.
    pub n_r_near: usize,
    /// Sources with `|q^|^2` below this fraction of the maximum are dropped.
    pub prune: f64,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        Self {
            n_phi: 96,
            n_theta: 24,
            n_r_mid: 32,
            n_r_near: 6,
            prune: 1e-12,
        }
    }
}

/// Gauss-Legendre nodes and weights on `[a, b]`.
pub fn gauss_legendre(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { z } else { p1 };
            let pn1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * pn - pn1) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        x[i] = 0.5 * (b - a) * (-z) + 0.5 * (a + b);
        w[i] = (b - a) / ((1.0 - z * z) * dp * dp);
    }
    (x, w)
}

/// Softening of `1/|k - eta|^2` matching the mean of the kernel over a lattice cell
/// at coincidence: `eps^2 = dk^2 / (4 pi (3/(4 pi))^{1/3})`.
fn softening(dk: f64) -> f64 {
    dk * dk / (4.0 * PI * (3.0 / (4.0 * PI)).powf(1.0 / 3.0))
}

struct Sources {
    pts: Vec<Vec3>,
    dens: Vec<f64>,
}

impl Sources {
    fn new(spec: &GridSpec, density: &[f64], prune: f64) -> Self {
        let max = density.iter().cloned().fold(0.0, f64::max);
        let mut pts = Vec::new();
        let mut dens = Vec::new();
        for (i, d) in density.iter().enumerate() {
            if *d > prune * max && *d > 0.0 {
                pts.push(spec.freq(i));
                dens.push(*d);
            }
        }
        Self { pts, dens }
    }

    /// `w sum_eta dens(eta) / (|k - eta|^2 + eps^2)`.
    fn field(&self, k: &Vec3, w: f64, eps2: f64) -> f64 {
        let mut s = 0.0;
        for (p, d) in self.pts.iter().zip(&self.dens) {
            let dx = k[0] - p[0];
            let dy = k[1] - p[1];
            let dz = k[2] - p[2];
            s += d / (dx * dx + dy * dy + dz * dz + eps2);
        }
        w * s
    }
}

/// `E(q, xi)` with the inner frequency integrals done by quadrature in tube
/// coordinates around `Gamma_xi`, so the Mid and Near regions are integrated in full
/// even where they leave the lattice band. The `q^` and `q~` sums stay on the lattice.
pub fn energy_functional_quadrature(
    q: &SpectralField,
    xi: &ComplexFrequency,
    opts: &QuadratureOptions,
) -> Result<EnergyBreakdown> {
    let spec = q.spec;
    if spec.dim() != 3 {
        return Err(Error::InvalidArgument("E(q, xi) is defined in three dimensions".into()));
    }
    let base = base_term(q);
    if base == 0.0 {
        return Ok(EnergyBreakdown::new(0.0, 0.0, 0.0));
    }
    let geom = xi.charset()?;
    let w = spec.lattice_weight();
    let eps2 = softening(spec.freq_step());
    let mag2: Vec<f64> = q.coeffs.iter().map(|c| c.norm_sqr()).collect();
    let qt = q_tilde(q)?;
    let qt2: Vec<f64> = qt.values.iter().map(|v| v * v).collect();
    let src = Sources::new(&spec, &mag2, opts.prune);
    let src_t = Sources::new(&spec, &qt2, opts.prune);
    let xn = xi.norm();
    let rho = geom.radius;
    let c = geom.center;
    let nrm = geom.plane_normal;
    // Circle nodes graded towards the origin (phi = pi), where the sources sit.
    let alpha = (2.0 * rho).max(2.0).ln();
    let (u, wu) = gauss_legendre(opts.n_phi, -1.0, 1.0);
    let phis: Vec<(f64, f64)> = u
        .iter()
        .zip(&wu)
        .map(|(&u, &wu)| {
            let phi = PI + PI * (alpha * u).sinh() / alpha.sinh();
            let jac = PI * alpha * (alpha * u).cosh() / alpha.sinh() * wu;
            (phi, jac)
        })
        .collect();
    let dtheta = 2.0 * PI / opts.n_theta as f64;
    let (v_mid, wv_mid) = gauss_legendre(opts.n_r_mid, 0.0, 1.0);
    let (v_near, wv_near) = gauss_legendre(opts.n_r_near, 0.0, 1.0);
    let measure = (2.0 * PI).powi(-3);
    let per_phi = par::map(&phis, |&(phi, jphi)| {
        let er = add(&scale(&geom.e_a, phi.cos()), &scale(&geom.e_b, phi.sin()));
        let mut mid = 0.0;
        let mut near = 0.0;
        for it in 0..opts.n_theta {
            let th = it as f64 * dtheta;
            let (st, ct) = th.sin_cos();
            let point = |r: f64| add(&add(&c, &scale(&er, rho + r * ct)), &scale(&nrm, r * st));
            // Boundary dist = |k|/|xi| along the ray, by fixed point (contraction 1/|xi|).
            let mut r_lo = norm(&point(0.0)) / xn;
            for _ in 0..60 {
                let next = norm(&point(r_lo)) / xn;
                if (next - r_lo).abs() <= 1e-14 * (1.0 + r_lo) {
                    r_lo = next;
                    break;
                }
                r_lo = next;
            }
            let r_cap = if ct < 0.0 { rho / -ct } else { f64::INFINITY };
            let r_hi = (4.0 * xn).min(r_cap);
            let r_lo = r_lo.min(r_cap);
            let base_w = jphi * dtheta;
            if r_hi > r_lo && r_lo > 0.0 {
                let span = (r_hi / r_lo).ln();
                for (v, wv) in v_mid.iter().zip(&wv_mid) {
                    let r = r_lo * (v * span).exp();
                    let k = point(r);
                    let jac = r * (rho + r * ct) * r * span * wv;
                    let kk = dot(&k, &k);
                    let sym = xi.symbol(&k).norm_sqr();
                    if sym == 0.0 {
                        continue;
                    }
                    mid += base_w * jac * kk / sym * src.field(&k, w, eps2);
                }
            }
            if r_lo > 0.0 {
                for (v, wv) in v_near.iter().zip(&wv_near) {
                    let r = r_lo * v;
                    let k = point(r);
                    let jac = r * (rho + r * ct) * r_lo * wv;
                    near += base_w * jac * src_t.field(&k, w, eps2);
                }
            }
        }
        (mid, near)
    });
    let mids: Vec<f64> = per_phi.iter().map(|p| p.0).collect();
    let nears: Vec<f64> = per_phi.iter().map(|p| p.1).collect();
    Ok(EnergyBreakdown::new(
        measure * par::pairwise_sum(&mids),
        measure * par::pairwise_sum(&nears),
        base,
    ))
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (a, b) in lx.iter().zip(&ly) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
    }
    sxy / sxx
}

/// `max / min` of a positive sample.
pub fn spread(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    max / min
}
