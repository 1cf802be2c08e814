//! Frame averages of the kernel and of `E(q, xi)`, frame selection, and dyadic shells.
//!
//! Frames are drawn with `s` uniform on `[R/2, 2R]` (stratified), `sigma1` uniform on
//! the sphere, `sigma2` uniform on the great circle orthogonal to `sigma1` and
//! `sigma3 = +-sigma1 x sigma2`. Sample `i` uses its own ChaCha8 stream `i` under the
//! run seed, so results do not depend on the number of workers.

use crate::error::{Error, Result};
use crate::estimates::{energy_functional_quadrature, gauss_legendre, QuadratureOptions};
use crate::fieldgrid::SpectralField;
use crate::kernel::{
    make_xi1, make_xi2, orthonormal_complement, random_unit, ComplexFrequency, XiVariant,
};
use crate::vec3::{add, cross, dot, norm, scale};
use crate::{par, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;
use std::sync::OnceLock;

/// Number of strata in `s`.
pub const S_STRATA: usize = 16;
/// Per-sample cap on `|K^|^p`.
pub const CAP: f64 = 1e12;
/// Largest tolerated fraction of capped samples.
pub const CAP_FRACTION: f64 = 1e-4;

/// One sampled frame.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct FrameSample {
    pub s: f64,
    pub sigma1: Vec3,
    pub sigma2: Vec3,
    pub sigma3: Vec3,
    pub stream_id: u64,
}

impl FrameSample {
    pub fn xi(&self, variant: XiVariant) -> Result<ComplexFrequency> {
        match variant {
            XiVariant::Xi1 => make_xi1(self.s, self.sigma1, self.sigma2),
            XiVariant::Xi2 => make_xi2(self.s, self.sigma1, self.sigma2, self.sigma3),
            XiVariant::Raw => Err(Error::InvalidArgument("frames build Xi1 or Xi2".into())),
        }
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn check_r(r: f64) -> Result<()> {
    if !(r > 10.0 && r.is_finite()) {
        return Err(Error::InvalidArgument(format!("R must exceed 10, got {r}")));
    }
    Ok(())
}

/// `s` for sample `id`: stratum `id mod 16` of `[R/2, 2R]`, uniform inside it.
fn stratified_s(r: f64, id: u64, u: f64) -> f64 {
    let h = (id % S_STRATA as u64) as f64;
    0.5 * r + 1.5 * r * (h + u) / S_STRATA as f64
}

fn draw_frame(r: f64, seed: u64, id: u64) -> FrameSample {
    let mut rng = stream(seed, id);
    let s = stratified_s(r, id, rng.gen());
    let s1 = random_unit(&mut rng);
    let (a, b) = orthonormal_complement(&s1);
    let t = rng.gen::<f64>() * 2.0 * PI;
    let s2 = add(&scale(&a, t.cos()), &scale(&b, t.sin()));
    let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
    FrameSample {
        s,
        sigma1: s1,
        sigma2: s2,
        sigma3: scale(&cross(&s1, &s2), sign),
        stream_id: id,
    }
}

/// `count` frames for radius `R`.
pub fn sample_frames(r: f64, count: usize, seed: u64) -> Result<Vec<FrameSample>> {
    check_r(r)?;
    if count == 0 {
        return Err(Error::InvalidArgument("count must be at least 1".into()));
    }
    Ok(par::map_range(count, |i| draw_frame(r, seed, i as u64)))
}

/// How the frame average is sampled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum Estimator {
    /// Average over `sigma2` done exactly; `s` stratified and `u = sigma1.k/|k|`
    /// importance-sampled around the resonance.
    Conditional,
    /// Whole frames drawn and `|K^|^p` evaluated directly, capped at [`CAP`].
    Plain,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AvgOptions {
    pub mc_samples: usize,
    pub seed: u64,
    pub variant: XiVariant,
    pub estimator: Estimator,
}

impl Default for AvgOptions {
    fn default() -> Self {
        Self {
            mc_samples: 100_000,
            seed: 0,
            variant: XiVariant::Xi1,
            estimator: Estimator::Conditional,
        }
    }
}

/// A Monte-Carlo average against its bound.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct AvgEstimate {
    pub r: f64,
    pub p: f64,
    pub k_norm: f64,
    pub mc_samples: usize,
    pub value: f64,
    pub std_error: f64,
    pub bound_value: f64,
    pub ratio: f64,
    pub cap_hits: usize,
    /// Set when capped samples exceed [`CAP_FRACTION`].
    pub flagged: bool,
}

/// `min{R^-p |k|^-p, |k|^-2p}`.
pub fn kernel_bound(r: f64, k_norm: f64, p: f64) -> f64 {
    (r * k_norm).powf(-p).min(k_norm.powf(-2.0 * p))
}

struct Panel {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

fn panel_rule() -> &'static Panel {
    static RULE: OnceLock<Panel> = OnceLock::new();
    RULE.get_or_init(|| {
        let (nodes, weights) = gauss_legendre(10, 0.0, 1.0);
        Panel { nodes, weights }
    })
}

/// `G(a, b, p) = (2/pi) int_0^{pi/2} (a^2 + b^2 sin^2 psi)^{-p/2} dpsi`, the average
/// of `|a + i b cos psi|^-p` over `psi`.
///
/// Geometric panels starting at `psi = |a|/b` resolve the peak at the origin.
pub fn angular_mean(a: f64, b: f64, p: f64) -> f64 {
    let a = a.abs();
    let b = b.abs();
    if b == 0.0 {
        return a.powf(-p);
    }
    let rule = panel_rule();
    let f = |t: f64| {
        let sn = t.sin();
        (a * a + b * b * sn * sn).powf(-0.5 * p)
    };
    let mut edges = vec![0.0];
    let mut e = (a / b).max(1e-300);
    while e < PI / 2.0 {
        edges.push(e);
        e *= 2.0;
    }
    edges.push(PI / 2.0);
    let mut total = 0.0;
    for w in edges.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        if hi <= lo {
            continue;
        }
        let len = hi - lo;
        for (x, wt) in rule.nodes.iter().zip(&rule.weights) {
            total += wt * len * f(lo + len * x);
        }
    }
    total * 2.0 / PI
}

/// Draw `u` in `[-1, 1]` from `1/2 uniform + 1/2 |u - c|^-beta` (normalised) and return
/// `(u, density)`. Without an interior `c` the draw is uniform.
fn importance_u<R: Rng>(rng: &mut R, c: Option<f64>, beta: f64) -> (f64, f64) {
    let Some(c) = c else {
        return (rng.gen_range(-1.0..1.0), 0.5);
    };
    let (l1, l2) = (c + 1.0, 1.0 - c);
    let g = 1.0 - beta;
    let (m1, m2) = (l1.powf(g) / g, l2.powf(g) / g);
    let z = m1 + m2;
    let u = if rng.gen::<bool>() {
        rng.gen_range(-1.0..1.0)
    } else {
        let left = rng.gen::<f64>() * z < m1;
        let v: f64 = rng.gen();
        if left {
            c - l1 * v.powf(1.0 / g)
        } else {
            c + l2 * v.powf(1.0 / g)
        }
    };
    let d = (u - c).abs().max(1e-300);
    (u, 0.25 + 0.5 * d.powf(-beta) / z)
}

fn check_p(p: f64) -> Result<()> {
    if !(1.0..2.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("p must lie in [1, 2), got {p}")));
    }
    Ok(())
}

/// Stratified mean and standard error of per-sample values tagged by stratum.
fn stratified_mean(values: &[f64], strata: usize) -> (f64, f64) {
    let mut groups: Vec<Vec<f64>> = vec![Vec::new(); strata];
    for (i, v) in values.iter().enumerate() {
        groups[i % strata].push(*v);
    }
    let active: Vec<&Vec<f64>> = groups.iter().filter(|g| !g.is_empty()).collect();
    let h = active.len() as f64;
    let mut mean = 0.0;
    let mut var = 0.0;
    for g in &active {
        let n = g.len() as f64;
        let m = par::pairwise_sum(g) / n;
        mean += m / h;
        if g.len() > 1 {
            let sq: Vec<f64> = g.iter().map(|v| (v - m) * (v - m)).collect();
            var += par::pairwise_sum(&sq) / (n - 1.0) / n / (h * h);
        }
    }
    (mean, var.sqrt())
}

/// Frame average of `|K^_xi(k)|^p` with `xi = xi_1(s)` or `xi_2(s)` (three dimensions).
pub fn avg_kernel_power(r: f64, k: Vec3, p: f64, opts: &AvgOptions) -> Result<AvgEstimate> {
    check_r(r)?;
    check_p(p)?;
    let kn = norm(&k);
    if kn < 2.0 {
        return Err(Error::InvalidArgument(format!("|k| must be at least 2, got {kn}")));
    }
    if opts.mc_samples < 1000 {
        return Err(Error::InvalidArgument("at least 1000 samples are required".into()));
    }
    if opts.variant == XiVariant::Raw {
        return Err(Error::InvalidArgument("variant must be Xi1 or Xi2".into()));
    }
    let sign = if opts.variant == XiVariant::Xi1 { 1.0 } else { -1.0 };
    let beta = (p - 1.0).max(0.3);
    let samples: Vec<(f64, bool)> = match opts.estimator {
        Estimator::Conditional => par::map_range(opts.mc_samples, |i| {
            let mut rng = stream(opts.seed, i as u64);
            let s = stratified_s(r, i as u64, rng.gen());
            // resonance a = 0 at u = sign |k|/s
            let c = sign * kn / s;
            let centre = (c.abs() < 1.0).then_some(c);
            let (u, dens) = importance_u(&mut rng, centre, beta);
            let a = -kn * kn + sign * s * kn * u;
            let b = s * kn * (1.0 - u * u).max(0.0).sqrt();
            let v = angular_mean(a, b, p) * 0.5 / dens;
            if v.is_finite() && v <= CAP {
                (v, false)
            } else {
                (CAP, true)
            }
        }),
        Estimator::Plain => par::map_range(opts.mc_samples, |i| {
            let f = draw_frame(r, opts.seed, i as u64);
            let xi = f.xi(opts.variant).expect("valid frame");
            let v = xi.symbol(&k).norm().powf(-p);
            if v.is_finite() && v <= CAP {
                (v, false)
            } else {
                (CAP, true)
            }
        }),
    };
    let values: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let cap_hits = samples.iter().filter(|s| s.1).count();
    let (value, std_error) = stratified_mean(&values, S_STRATA);
    let bound_value = kernel_bound(r, kn, p);
    Ok(AvgEstimate {
        r,
        p,
        k_norm: kn,
        mc_samples: opts.mc_samples,
        value,
        std_error,
        bound_value,
        ratio: value / bound_value,
        cap_hits,
        flagged: cap_hits as f64 > CAP_FRACTION * opts.mc_samples as f64,
    })
}

/// Frame average of `E(q, xi)`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct EnergyAverage {
    /// Average of the `xi`-dependent part (`term_mid + term_near`) against
    /// `int |q^|^2 min{ln R/R, R ln R/|eta|^2}`.
    pub estimate: AvgEstimate,
    pub mean_mid: f64,
    pub mean_near: f64,
    pub base: f64,
    /// Average of the full `E(q, xi)`.
    pub mean_total: f64,
}

/// `sum w |q^(eta)|^2 min{ln R/R, R ln R/|eta|^2}` over the lattice.
pub fn energy_bound(q: &SpectralField, r: f64) -> f64 {
    let spec = q.spec;
    let lr = r.ln();
    let terms = par::map_range(spec.len(), |i| {
        let e = spec.freq(i);
        let e2 = dot(&e, &e);
        let m = if e2 == 0.0 {
            lr / r
        } else {
            (lr / r).min(r * lr / e2)
        };
        q.coeffs[i].norm_sqr() * m
    });
    spec.lattice_weight() * par::pairwise_sum(&terms)
}

/// Frame average of `E(q, xi)` over `mc_samples` frames (three dimensions).
pub fn avg_energy_functional(
    r: f64,
    q: &SpectralField,
    mc_samples: usize,
    seed: u64,
    variant: XiVariant,
    quad: &QuadratureOptions,
) -> Result<EnergyAverage> {
    check_r(r)?;
    if q.spec.dim() != 3 {
        return Err(Error::InvalidArgument("the energy average is three-dimensional".into()));
    }
    let frames = sample_frames(r, mc_samples, seed)?;
    let rows = frames
        .iter()
        .map(|f| energy_functional_quadrature(q, &f.xi(variant)?, quad))
        .collect::<Result<Vec<_>>>()?;
    let dep: Vec<f64> = rows.iter().map(|e| e.xi_dependent()).collect();
    let strata = S_STRATA.min(mc_samples);
    let (value, std_error) = stratified_mean(&dep, strata);
    let mid: Vec<f64> = rows.iter().map(|e| e.term_mid).collect();
    let near: Vec<f64> = rows.iter().map(|e| e.term_near).collect();
    let n = mc_samples as f64;
    let base = rows.first().map_or(0.0, |e| e.term_base);
    let bound_value = energy_bound(q, r);
    Ok(EnergyAverage {
        estimate: AvgEstimate {
            r,
            p: 2.0,
            k_norm: f64::NAN,
            mc_samples,
            value,
            std_error,
            bound_value,
            ratio: if bound_value > 0.0 { value / bound_value } else { 0.0 },
            cap_hits: 0,
            flagged: false,
        },
        mean_mid: par::pairwise_sum(&mid) / n,
        mean_near: par::pairwise_sum(&near) / n,
        base,
        mean_total: value + base,
    })
}

/// Options of [`select_good_frame`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectOptions {
    /// Exponent in the objective.
    pub p: f64,
    /// Candidates kept in the pool.
    pub candidates: usize,
    /// Uniform frames drawn at most.
    pub max_draws: usize,
}

impl Default for SelectOptions {
    fn default() -> Self {
        Self {
            p: 1.5,
            candidates: 64,
            max_draws: 200_000,
        }
    }
}

/// The selected frame together with the candidate pool it was chosen from.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct SelectedFrame {
    pub frame: FrameSample,
    pub objective: f64,
    pub pool: Vec<f64>,
    pub draws: usize,
}

/// `sum_k (|K^_{xi1} q1^|^p + |K^_{xi2} q2^|^p)(|k|^p + R^p)` over the lattice.
pub fn frame_objective(
    q1: &SpectralField,
    q2: &SpectralField,
    frame: &FrameSample,
    r: f64,
    p: f64,
) -> Result<f64> {
    let spec = q1.spec;
    let x1 = frame.xi(XiVariant::Xi1)?;
    let x2 = frame.xi(XiVariant::Xi2)?;
    let k1 = crate::kernel::KernelMultiplier::new(&x1, &spec, None);
    let k2 = crate::kernel::KernelMultiplier::new(&x2, &spec, None);
    let terms = par::map_range(spec.len(), |i| {
        let k = spec.freq(i);
        let a = (k1.values[i] * q1.coeffs[i]).norm().powf(p);
        let b = (k2.values[i] * q2.coeffs[i]).norm().powf(p);
        (a + b) * (norm(&k).powf(p) + r.powf(p))
    });
    Ok(par::pairwise_sum(&terms))
}

/// Among uniform frames with `|sigma3 - target| <= epsilon`, the one minimising
/// [`frame_objective`]; the first of equal minima wins.
pub fn select_good_frame(
    q1: &SpectralField,
    q2: &SpectralField,
    r: f64,
    target_sigma3: Vec3,
    epsilon: f64,
    seed: u64,
    opts: &SelectOptions,
) -> Result<SelectedFrame> {
    check_r(r)?;
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidArgument("epsilon must lie in (0, 1)".into()));
    }
    if q1.spec != q2.spec {
        return Err(Error::GridMismatch);
    }
    if q1.spec.dim() != 3 {
        return Err(Error::InvalidArgument("frame selection is three-dimensional".into()));
    }
    let t = crate::vec3::normalized(&target_sigma3);
    let mut pool_frames = Vec::new();
    let mut draws = 0;
    while pool_frames.len() < opts.candidates && draws < opts.max_draws {
        let f = draw_frame(r, seed, draws as u64);
        draws += 1;
        if norm(&crate::vec3::sub(&f.sigma3, &t)) <= epsilon {
            pool_frames.push(f);
        }
    }
    if pool_frames.is_empty() {
        return Err(Error::NoCandidate { draws });
    }
    let pool = pool_frames
        .iter()
        .map(|f| frame_objective(q1, q2, f, r, opts.p))
        .collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (i, v) in pool.iter().enumerate() {
        if *v < pool[best] {
            best = i;
        }
    }
    Ok(SelectedFrame {
        frame: pool_frames[best],
        objective: pool[best],
        pool,
        draws,
    })
}

/// Dyadic shell sums and the derived sequence of the shell-selection lemma.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ShellProfile {
    /// Index of `a[0]`.
    pub first: usize,
    pub a: Vec<f64>,
    /// `b_n = sum_{first <= l <= n} 2^{l-n} a_l`.
    pub b: Vec<f64>,
    /// Indices `n >= 1` with `n b_n` at or below the running median of `n b_n`.
    pub selected: Vec<usize>,
}

impl ShellProfile {
    pub fn from_sequence(a: Vec<f64>, first: usize) -> Result<Self> {
        if a.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument("shell sums must be finite and >= 0".into()));
        }
        let mut b = Vec::with_capacity(a.len());
        let mut acc = 0.0;
        for (i, v) in a.iter().enumerate() {
            acc = if i == 0 { *v } else { 0.5 * acc + v };
            b.push(acc);
        }
        let mut p = Self {
            first,
            a,
            b,
            selected: Vec::new(),
        };
        p.selected = p.select();
        Ok(p)
    }

    pub fn index(&self, i: usize) -> usize {
        self.first + i
    }

    /// `n b_n` for every stored index.
    pub fn nb(&self) -> Vec<f64> {
        self.b
            .iter()
            .enumerate()
            .map(|(i, b)| self.index(i) as f64 * b)
            .collect()
    }

    fn select(&self) -> Vec<usize> {
        let nb = self.nb();
        let mut seen: Vec<f64> = Vec::new();
        let mut out = Vec::new();
        for (i, v) in nb.iter().enumerate() {
            let n = self.index(i);
            if n == 0 {
                continue;
            }
            seen.push(*v);
            let mut sorted = seen.clone();
            sorted.sort_by(|a, b| a.total_cmp(b));
            let m = sorted.len();
            let median = if m % 2 == 1 {
                sorted[m / 2]
            } else {
                0.5 * (sorted[m / 2 - 1] + sorted[m / 2])
            };
            if *v <= median {
                out.push(n);
            }
        }
        out
    }

    /// `min n b_n` over indices `n >= 1`.
    pub fn min_nb(&self) -> f64 {
        self.nb()
            .iter()
            .enumerate()
            .filter(|(i, _)| self.index(*i) >= 1)
            .map(|(_, v)| *v)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Shells `2^n <= |k| < 2^{n+1}`, `n >= 0`, covering the lattice.
pub fn shell_select(q: &SpectralField) -> Result<ShellProfile> {
    let spec = q.spec;
    let w = spec.lattice_weight();
    let kmax = (0..spec.len())
        .map(|i| norm(&spec.freq(i)))
        .fold(0.0, f64::max);
    if kmax < 4.0 {
        return Err(Error::InvalidGrid(format!(
            "lattice reaches |k| = {kmax}; at least 3 dyadic shells are needed"
        )));
    }
    let shells = (kmax.log2().floor() as usize) + 1;
    let mut a = vec![0.0; shells];
    for i in 0..spec.len() {
        let kn = norm(&spec.freq(i));
        if kn < 1.0 {
            continue;
        }
        let n = (kn.log2().floor() as usize).min(shells - 1);
        a[n] += w * q.coeffs[i].norm_sqr() / kn;
    }
    ShellProfile::from_sequence(a, 0)
}
