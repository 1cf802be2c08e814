//! CGO correctors by Born iteration.
//!
//! The corrector `w` of `v = (1 + w) e^{xi.x/2}` solves `Delta w + xi.grad w - q w = q`,
//! obtained as the fixed point of `w -> K_xi * (q + q w)` started from `w_0 = 0`.

use crate::error::{Error, Result};
use crate::fieldgrid::{smooth_cutoff, GridField, GridSpec, NormKind};
use crate::kernel::{make_xi1, ComplexFrequency, Frame, KernelMultiplier};
use crate::vec3::norm;
use crate::{par, Complex64};

/// Width of the taper used to re-window smooth parts onto the input support.
pub const WINDOW_TAPER: f64 = 0.25;

/// A potential, either plain or in divergence form `q = div g1 + g2`.
#[derive(Debug, Clone, PartialEq)]
pub enum PotentialForm {
    DivForm { g1: Vec<GridField>, g2: GridField },
    Plain { q: GridField },
}

impl PotentialForm {
    pub fn spec(&self) -> GridSpec {
        match self {
            PotentialForm::DivForm { g2, .. } => g2.spec,
            PotentialForm::Plain { q } => q.spec,
        }
    }

    /// The potential as a single field (spectral divergence for the div form).
    pub fn potential(&self) -> Result<GridField> {
        match self {
            PotentialForm::Plain { q } => Ok(q.clone()),
            PotentialForm::DivForm { g1, g2 } => GridField::divergence(g1)?.add(g2),
        }
    }

    fn map_components<F>(&self, f: F) -> Result<PotentialForm>
    where
        F: Fn(&GridField) -> Result<GridField>,
    {
        Ok(match self {
            PotentialForm::Plain { q } => PotentialForm::Plain { q: f(q)? },
            PotentialForm::DivForm { g1, g2 } => PotentialForm::DivForm {
                g1: g1.iter().map(&f).collect::<Result<_>>()?,
                g2: f(g2)?,
            },
        })
    }

    /// The norm each iteration scheme needs small: `||g1||_inf + ||g2||_{L^d}` for the
    /// div form, `||q||_{L^{d/2}}` for a plain potential.
    pub fn smallness_norm(&self) -> (f64, &'static str) {
        let d = self.spec().dim() as f64;
        match self {
            PotentialForm::Plain { q } => (q.lp_norm_unchecked(d / 2.0, None), "L^{d/2}"),
            PotentialForm::DivForm { g1, g2 } => {
                let spec = g2.spec;
                let sup = (0..spec.len())
                    .map(|i| g1.iter().map(|g| g.values[i].norm_sqr()).sum::<f64>().sqrt())
                    .fold(0.0, f64::max);
                (sup + g2.lp_norm_unchecked(d, None), "L^inf(g1) + L^d(g2)")
            }
        }
    }
}

/// Complementary smooth and small parts of a potential.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothSmall {
    pub smooth: PotentialForm,
    pub small: PotentialForm,
    pub cutoff: f64,
    pub small_norm: f64,
    pub norm_label: &'static str,
}

/// A potential together with an optional smooth/small decomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialSplit {
    pub form: PotentialForm,
    pub smooth_small: Option<SmoothSmall>,
}

impl PotentialSplit {
    pub fn plain(q: GridField) -> Self {
        Self {
            form: PotentialForm::Plain { q },
            smooth_small: None,
        }
    }

    pub fn div_form(g1: Vec<GridField>, g2: GridField) -> Result<Self> {
        if g1.len() != g2.spec.dim() || g1.iter().any(|g| g.spec != g2.spec) {
            return Err(Error::InvalidArgument(
                "div form needs one g1 component per axis on the g2 grid".into(),
            ));
        }
        Ok(Self {
            form: PotentialForm::DivForm { g1, g2 },
            smooth_small: None,
        })
    }

    pub fn potential(&self) -> Result<GridField> {
        self.form.potential()
    }
}

/// Low-pass a component at `cutoff`, then re-window onto its support.
fn smooth_component(f: &GridField, cutoff: f64) -> GridField {
    let spec = f.spec;
    let mut s = f.to_spectral();
    par::for_each_mut(&mut s.coeffs, |i, c| {
        if norm(&spec.freq(i)) > cutoff {
            *c = Complex64::new(0.0, 0.0);
        }
    });
    let low = s.to_field();
    let r = f.support_radius();
    if r + WINDOW_TAPER > spec.half_length() {
        return low;
    }
    let values = par::map_range(spec.len(), |i| {
        low.values[i] * smooth_cutoff(norm(&spec.point(i)), r, r + WINDOW_TAPER)
    });
    GridField { spec, values }
}

/// Split into a spectrally truncated smooth part and its complement.
///
/// The smooth part keeps `|k| <= cutoff` and is re-windowed by a `C^inf` taper onto
/// the support of the input (widened by [`WINDOW_TAPER`]); fields that fill the box
/// are not windowed. The small part is the exact complement.
pub fn split_smooth_small(q: &PotentialSplit, cutoff: f64) -> Result<PotentialSplit> {
    if !(cutoff > 0.0) {
        return Err(Error::InvalidArgument("cutoff must be positive".into()));
    }
    let smooth = q.form.map_components(|f| Ok(smooth_component(f, cutoff)))?;
    let small = match (&q.form, &smooth) {
        (PotentialForm::Plain { q }, PotentialForm::Plain { q: s }) => {
            PotentialForm::Plain { q: q.sub(s)? }
        }
        (PotentialForm::DivForm { g1, g2 }, PotentialForm::DivForm { g1: s1, g2: s2 }) => {
            PotentialForm::DivForm {
                g1: g1
                    .iter()
                    .zip(s1)
                    .map(|(a, b)| a.sub(b))
                    .collect::<Result<_>>()?,
                g2: g2.sub(s2)?,
            }
        }
        _ => unreachable!("components keep their form"),
    };
    let (small_norm, norm_label) = small.smallness_norm();
    Ok(PotentialSplit {
        form: q.form.clone(),
        smooth_small: Some(SmoothSmall {
            smooth,
            small,
            cutoff,
            small_norm,
            norm_label,
        }),
    })
}

/// One Born step.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct IterationRecord {
    pub step: usize,
    /// `||w_n - w_{n-1}||_{H^1(B_2)}`.
    pub increment: f64,
    /// `increment(n) / increment(n-1)`, from step 2 on.
    pub ratio: Option<f64>,
    /// `||w_n - K_xi * (q + q w_n)||_{H^1(B_2)}`.
    pub residual: f64,
}

#[derive(Debug, Clone, Default, PartialEq, serde::Serialize)]
pub struct IterationTrace {
    pub records: Vec<IterationRecord>,
}

impl IterationTrace {
    /// Largest contraction ratio observed after the first `skip` ratios.
    pub fn max_ratio(&self, skip: usize) -> Option<f64> {
        self.records
            .iter()
            .filter_map(|r| r.ratio)
            .skip(skip)
            .fold(None, |m, r| Some(m.map_or(r, |m: f64| m.max(r))))
    }

    pub fn final_residual(&self) -> Option<f64> {
        self.records.last().map(|r| r.residual)
    }
}

#[derive(Debug, Clone)]
pub struct CgoSolution {
    pub xi: ComplexFrequency,
    pub w: GridField,
    pub trace: IterationTrace,
    pub converged: bool,
    pub iterations: usize,
    /// `||K_xi * q||_{H^1(B_2)}`, the scale of the stopping rule.
    pub reference_norm: f64,
}

/// Starting iterate of the Born iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BornStart {
    Zero,
    KernelOfQ,
}

#[derive(Debug, Clone, Copy)]
pub struct BornOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub start: BornStart,
    /// Consecutive steps with ratio >= 1 before giving up.
    pub patience: usize,
}

impl Default for BornOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 60,
            start: BornStart::Zero,
            patience: 3,
        }
    }
}

/// Radius of the ball carrying the iteration norms: 2, or `L/2` on small boxes.
pub fn norm_radius(spec: &GridSpec) -> f64 {
    2.0f64.min(spec.max_ball_radius())
}

pub fn h1_b2(f: &GridField) -> f64 {
    f.norm(NormKind::HkBall(1, norm_radius(&f.spec)))
        .expect("radius within limit")
}

/// The Born map `w -> K_xi * (q + q w)`.
pub struct BornMap<'a> {
    q: &'a GridField,
    kernel: KernelMultiplier,
}

impl<'a> BornMap<'a> {
    pub fn new(q: &'a GridField, xi: &ComplexFrequency) -> Self {
        Self {
            q,
            kernel: KernelMultiplier::new(xi, &q.spec, None),
        }
    }

    pub fn apply(&self, w: &GridField) -> GridField {
        let rhs = self
            .q
            .zip_with(w, |q, w| q + q * w)
            .expect("same grid");
        self.kernel.apply(&rhs, None)
    }

    pub fn kernel(&self) -> &KernelMultiplier {
        &self.kernel
    }
}

/// Born iteration with default start and patience.
pub fn born_solve(
    q: &PotentialSplit,
    xi: &ComplexFrequency,
    tol: f64,
    max_iter: usize,
) -> Result<CgoSolution> {
    let opts = BornOptions {
        tol,
        max_iter,
        ..BornOptions::default()
    };
    born_solve_field(&q.potential()?, xi, &opts)
}

/// Born iteration on an assembled potential.
pub fn born_solve_field(
    q: &GridField,
    xi: &ComplexFrequency,
    opts: &BornOptions,
) -> Result<CgoSolution> {
    if opts.max_iter == 0 {
        return Err(Error::InvalidArgument("max_iter must be at least 1".into()));
    }
    if xi.norm() <= 2.0 {
        return Err(Error::InvalidFrequency("|xi| must exceed 2".into()));
    }
    let map = BornMap::new(q, xi);
    let zero = GridField::zeros(q.spec);
    let w1 = map.apply(&zero);
    let reference = h1_b2(&w1);
    let mut w = match opts.start {
        BornStart::Zero => zero,
        BornStart::KernelOfQ => w1.clone(),
    };
    let mut next = match opts.start {
        BornStart::Zero => w1,
        BornStart::KernelOfQ => map.apply(&w),
    };
    let mut trace = IterationTrace::default();
    let mut bad_streak = 0;
    let mut converged = false;
    let threshold = opts.tol * reference;
    for step in 1..=opts.max_iter {
        let diff = next.sub(&w)?;
        let inc = h1_b2(&diff);
        if !inc.is_finite() || next.values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::NonFinite {
                step,
                trace: Box::new(trace),
            });
        }
        if let Some(prev) = trace.records.last_mut() {
            prev.residual = inc;
        }
        let ratio = trace
            .records
            .last()
            .filter(|r| r.increment > 0.0)
            .map(|r| inc / r.increment);
        w = next;
        next = map.apply(&w);
        trace.records.push(IterationRecord {
            step,
            increment: inc,
            ratio,
            residual: f64::NAN,
        });
        if inc <= threshold {
            converged = true;
            break;
        }
        if ratio.is_some_and(|r| r >= 1.0) {
            bad_streak += 1;
            if bad_streak >= opts.patience {
                break;
            }
        } else {
            bad_streak = 0;
        }
    }
    let residual = h1_b2(&next.sub(&w)?);
    if let Some(last) = trace.records.last_mut() {
        last.residual = residual;
    }
    let converged = converged && residual <= threshold.max(f64::MIN_POSITIVE) || reference == 0.0;
    let iterations = trace.records.len();
    Ok(CgoSolution {
        xi: *xi,
        w,
        trace,
        converged,
        iterations,
        reference_norm: reference,
    })
}

/// Spectral residual of `Delta w + xi.grad w - q w - q` on the unregularised modes,
/// relative to the same projection of `q + q w`.
pub fn conjugated_residual(w: &GridField, q: &GridField, xi: &ComplexFrequency) -> f64 {
    let k = KernelMultiplier::new(xi, &w.spec, None);
    let spec = w.spec;
    let wh = w.to_spectral();
    let rhs = q.zip_with(w, |q, w| q + q * w).expect("same grid").to_spectral();
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..spec.len() {
        if k.values[i] == Complex64::new(0.0, 0.0) {
            continue;
        }
        let r = xi.symbol(&spec.freq(i)) * wh.coeffs[i] - rhs.coeffs[i];
        num += r.norm_sqr();
        den += rhs.coeffs[i].norm_sqr();
    }
    if den == 0.0 {
        num.sqrt()
    } else {
        (num / den).sqrt()
    }
}

/// `(1 + w) e^{xi.x/2}` reported inside `B_2`.
#[derive(Debug, Clone)]
pub struct AssembledSolution {
    pub v: GridField,
    /// Set when the exponential would overflow at some sample outside `B_2`.
    pub clamped: bool,
}

pub fn assemble_solution(w: &GridField, xi: &ComplexFrequency) -> AssembledSolution {
    let spec = w.spec;
    let radius = norm_radius(&spec);
    let overflow = par::map_range(spec.len(), |i| {
        let x = spec.point(i);
        norm(&x) > radius && 0.5 * crate::vec3::dot(&xi.re, &x) > 700.0
    });
    let values = par::map_range(spec.len(), |i| {
        let x = spec.point(i);
        if norm(&x) > radius {
            return Complex64::new(0.0, 0.0);
        }
        (Complex64::new(1.0, 0.0) + w.values[i]) * (xi.dot_real(&x) * 0.5).exp()
    });
    AssembledSolution {
        v: GridField { spec, values },
        clamped: overflow.into_iter().any(|b| b),
    }
}

/// One row of a vanishing scan.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ScanRow {
    pub s: f64,
    pub xi_norm: f64,
    pub converged: bool,
    pub iterations: usize,
    pub max_ratio: Option<f64>,
    pub l2: f64,
    pub h1: f64,
    /// `||w||_{L^{2d/(d-2)}(B_2)}` (three dimensions only).
    pub l_crit: Option<f64>,
}

/// Corrector norms along `xi = make_xi1(s, frame)` for each `s`.
pub fn vanishing_scan(
    q: &PotentialSplit,
    s_list: &[f64],
    frame: &Frame,
    opts: &BornOptions,
) -> Result<Vec<ScanRow>> {
    let qf = q.potential()?;
    let r = norm_radius(&qf.spec);
    s_list
        .iter()
        .map(|&s| {
            let xi = make_xi1(s, frame.sigma1, frame.sigma2)?;
            let sol = born_solve_field(&qf, &xi, opts)?;
            let l_crit = if qf.spec.dim() == 3 {
                Some(sol.w.lp_norm_unchecked(6.0, Some(r)))
            } else {
                None
            };
            Ok(ScanRow {
                s,
                xi_norm: xi.norm(),
                converged: sol.converged,
                iterations: sol.iterations,
                max_ratio: sol.trace.max_ratio(0),
                l2: sol.w.norm(NormKind::L2Ball(r))?,
                h1: h1_b2(&sol.w),
                l_crit,
            })
        })
        .collect()
}
