//! End-to-end uniqueness experiments.
//!
//! For every direction of a spherical design and every `s` of a schedule, two CGO
//! correctors are built with `xi_1 + xi_2 = sigma_s -> sigma`, and the functional
//!
//! `I(s) = int_{B_2} (q1 - q2)(1 + w1)(1 + w2) e^{sigma_s . x / 2}`
//!
//! is compared with its limit `M(sigma) = int_{B_2} (q1 - q2) e^{sigma . x / 2}`.

use crate::averaging::{select_good_frame, shell_select, FrameSample, SelectOptions, ShellProfile};
use crate::cgo::{born_solve_field, BornOptions, PotentialSplit};
use crate::estimates::loglog_slope;
use crate::fieldgrid::{GridField, NormKind};
use crate::kernel::{make_xi1, make_xi2, Frame};
use crate::vec3::{add, dot, norm, normalized};
use crate::{par, Complex64, Error, Result, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// Radius of the integration ball.
pub const MOMENT_RADIUS: f64 = 2.0;
/// Converged rows needed per direction.
pub const MIN_ROWS: usize = 3;

/// Which theorem's pipeline to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Theorem {
    /// Frames chosen by the averaged-kernel selection around each direction.
    T1,
    /// One fixed frame per direction.
    T2,
    /// Fixed frames on the shell-selected part of the schedule.
    T3,
}

impl Theorem {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "t1" => Ok(Theorem::T1),
            "t2" => Ok(Theorem::T2),
            "t3" => Ok(Theorem::T3),
            other => Err(Error::InvalidArgument(format!("unknown theorem '{other}'"))),
        }
    }
}

/// The 26 directions `e_i`, `(e_i +- e_j)/sqrt 2`, `(+-1,+-1,+-1)/sqrt 3`.
pub fn spherical_design_26() -> Vec<Vec3> {
    let mut out = Vec::with_capacity(26);
    for a in -1i32..=1 {
        for b in -1i32..=1 {
            for c in -1i32..=1 {
                if a == 0 && b == 0 && c == 0 {
                    continue;
                }
                out.push(normalized(&[a as f64, b as f64, c as f64]));
            }
        }
    }
    out
}

/// [`spherical_design_26`] rotated into a generic (seeded) frame.
///
/// The plain design consists of lattice directions; a frame whose `sigma3` is a lattice
/// line keeps `K^ = -1/|k|^2` on that line for every `s`, so correctors stop decaying.
pub fn rotated_design_26(seed: u64) -> Vec<Vec3> {
    let f = Frame::generic(seed);
    spherical_design_26()
        .iter()
        .map(|d| {
            let mut out = [0.0; 3];
            for a in 0..3 {
                out[a] = d[0] * f.sigma1[a] + d[1] * f.sigma2[a] + d[2] * f.sigma3[a];
            }
            out
        })
        .collect()
}

/// `M(sigma) = int_{B_2} q e^{sigma . x / 2}` over a set of directions.
#[derive(Debug, Clone, Serialize)]
pub struct MomentTable {
    pub directions: Vec<Vec3>,
    pub values: Vec<f64>,
    pub max_abs: f64,
}

/// `int_{B_2} Re(q) e^{sigma . x / 2}`.
pub fn moment(q: &GridField, sigma: &Vec3) -> f64 {
    let spec = q.spec;
    let terms = par::map_range(spec.len(), |i| {
        let x = spec.point(i);
        if norm(&x) <= MOMENT_RADIUS {
            q.values[i].re * (0.5 * dot(sigma, &x)).exp()
        } else {
            0.0
        }
    });
    par::pairwise_sum(&terms) * spec.cell_volume()
}

pub fn moment_table(qdiff: &GridField, directions: &[Vec3]) -> Result<MomentTable> {
    if directions.is_empty() {
        return Err(Error::InvalidArgument("no directions".into()));
    }
    if qdiff.spec.dim() != 3 {
        return Err(Error::InvalidArgument("moments are three-dimensional".into()));
    }
    let values: Vec<f64> = directions.iter().map(|d| moment(qdiff, &normalized(d))).collect();
    let max_abs = values.iter().map(|v| v.abs()).fold(0.0, f64::max);
    Ok(MomentTable {
        directions: directions.iter().map(normalized).collect(),
        values,
        max_abs,
    })
}

/// Quantitative contrapositive for one difference.
#[derive(Debug, Clone, Serialize)]
pub struct InversionReport {
    pub l2_norm: f64,
    pub max_abs_moment: f64,
    /// `max |M| / ||q_diff||_{L^2}`.
    pub margin: f64,
}

pub fn moment_inversion_check(moments: &MomentTable, qdiff: &GridField) -> InversionReport {
    let l2_norm = qdiff.norm(NormKind::Lp(2.0)).unwrap_or(0.0);
    InversionReport {
        l2_norm,
        max_abs_moment: moments.max_abs,
        margin: if l2_norm > 0.0 { moments.max_abs / l2_norm } else { 0.0 },
    }
}

/// Inversion reports over several differences.
#[derive(Debug, Clone, Serialize)]
pub struct InversionScan {
    pub reports: Vec<InversionReport>,
    /// Smallest margin over differences with nonzero norm.
    pub min_margin: f64,
    /// Pearson correlation of `max |M|` with `||q_diff||`.
    pub correlation: f64,
}

pub fn inversion_scan(qdiffs: &[GridField], directions: &[Vec3]) -> Result<InversionScan> {
    let reports = qdiffs
        .iter()
        .map(|q| Ok(moment_inversion_check(&moment_table(q, directions)?, q)))
        .collect::<Result<Vec<_>>>()?;
    let min_margin = reports
        .iter()
        .filter(|r| r.l2_norm > 0.0)
        .map(|r| r.margin)
        .fold(f64::INFINITY, f64::min);
    let x: Vec<f64> = reports.iter().map(|r| r.l2_norm).collect();
    let y: Vec<f64> = reports.iter().map(|r| r.max_abs_moment).collect();
    Ok(InversionScan {
        reports,
        min_margin,
        correlation: pearson(&x, &y),
    })
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    if x.len() < 2 {
        return f64::NAN;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    sxy / (sxx * syy).sqrt()
}

/// Pipeline settings.
#[derive(Debug, Clone, Copy)]
pub struct UniquenessOptions {
    pub born: BornOptions,
    /// Allowed `|sigma3 - sigma0|` for the selected frames of T1.
    pub epsilon: f64,
    pub select: SelectOptions,
}

impl Default for UniquenessOptions {
    fn default() -> Self {
        Self {
            born: BornOptions::default(),
            epsilon: 0.25,
            select: SelectOptions {
                candidates: 8,
                ..SelectOptions::default()
            },
        }
    }
}

/// One `(direction, s)` evaluation.
#[derive(Debug, Clone, Serialize)]
pub struct UniquenessRow {
    pub direction: usize,
    pub s: f64,
    pub frame: Frame,
    /// `Re(xi_1 + xi_2)`.
    pub sigma_s: Vec3,
    pub i_re: f64,
    pub i_im: f64,
    /// `M` at the frame's `sigma3`, the limit of `sigma_s`.
    pub moment: f64,
    /// `|I(s) - M|`.
    pub gap: f64,
    pub converged_1: bool,
    pub converged_2: bool,
    pub iterations_1: usize,
    pub iterations_2: usize,
}

impl UniquenessRow {
    pub fn converged(&self) -> bool {
        self.converged_1 && self.converged_2
    }
}

/// Limit summary per direction.
#[derive(Debug, Clone, Serialize)]
pub struct DirectionLimit {
    pub direction: usize,
    pub sigma0: Vec3,
    pub rows_used: usize,
    /// Intercept of the least-squares fit `Re I(s) = a + b/s`.
    pub limit: f64,
    /// `M(sigma0)`.
    pub moment: f64,
    /// `|I - M|` at the largest converged `s`.
    pub final_gap: f64,
    /// Log-log slope of `|I - M|` against `s`.
    pub rate: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct UniquenessRun {
    pub theorem: Theorem,
    pub seed: u64,
    /// The schedule actually used (shell-filtered for T3).
    pub s_list: Vec<f64>,
    pub rows: Vec<UniquenessRow>,
    pub excluded: usize,
    pub limits: Vec<DirectionLimit>,
    pub moments: MomentTable,
}

fn check_support(q: &GridField) -> Result<()> {
    let support = q.support_radius();
    if support > 0.5 + 1e-9 {
        return Err(Error::SupportTooLarge { support, limit: 0.5 });
    }
    Ok(())
}

/// Schedule entries whose dyadic shell is selected for the pair.
pub fn shell_schedule(q1: &GridField, q2: &GridField, s_list: &[f64]) -> Result<(ShellProfile, Vec<f64>)> {
    let p1 = shell_select(&q1.to_spectral())?;
    let p2 = shell_select(&q2.to_spectral())?;
    let top = s_list
        .iter()
        .map(|s| s.log2().floor().max(0.0) as usize)
        .max()
        .unwrap_or(0);
    let len = p1.a.len().max(top + 1);
    let mut a = vec![0.0; len];
    for (i, v) in p1.a.iter().enumerate() {
        a[i] += v;
    }
    for (i, v) in p2.a.iter().enumerate() {
        a[i] += v;
    }
    let profile = ShellProfile::from_sequence(a, 0)?;
    let kept = s_list
        .iter()
        .cloned()
        .filter(|s| profile.selected.contains(&(s.log2().floor().max(0.0) as usize)))
        .collect();
    Ok((profile, kept))
}

/// `I(s)` with both correctors for one frame.
fn evaluate_row(
    q1: &GridField,
    q2: &GridField,
    qdiff: &GridField,
    direction: usize,
    s: f64,
    frame: Frame,
    born: &BornOptions,
) -> Result<UniquenessRow> {
    let xi1 = make_xi1(s, frame.sigma1, frame.sigma2)?;
    let xi2 = make_xi2(s, frame.sigma1, frame.sigma2, frame.sigma3)?;
    let w1 = born_solve_field(q1, &xi1, born)?;
    let w2 = born_solve_field(q2, &xi2, born)?;
    let sigma_s = add(&xi1.re, &xi2.re);
    let spec = q1.spec;
    let terms = par::map_range(spec.len(), |i| {
        let x = spec.point(i);
        if norm(&x) > MOMENT_RADIUS || qdiff.values[i] == Complex64::new(0.0, 0.0) {
            return (0.0, 0.0);
        }
        let one = Complex64::new(1.0, 0.0);
        let v = qdiff.values[i] * (one + w1.w.values[i]) * (one + w2.w.values[i])
            * (0.5 * dot(&sigma_s, &x)).exp();
        (v.re, v.im)
    });
    let dv = spec.cell_volume();
    let re: Vec<f64> = terms.iter().map(|t| t.0).collect();
    let im: Vec<f64> = terms.iter().map(|t| t.1).collect();
    let i_re = par::pairwise_sum(&re) * dv;
    let i_im = par::pairwise_sum(&im) * dv;
    let m = moment(qdiff, &frame.sigma3);
    Ok(UniquenessRow {
        direction,
        s,
        frame,
        sigma_s,
        i_re,
        i_im,
        moment: m,
        gap: Complex64::new(i_re - m, i_im).norm(),
        converged_1: w1.converged,
        converged_2: w2.converged,
        iterations_1: w1.iterations,
        iterations_2: w2.iterations,
    })
}

fn fit_limit(rows: &[&UniquenessRow]) -> f64 {
    let x: Vec<f64> = rows.iter().map(|r| 1.0 / r.s).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.i_re).collect();
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx == 0.0 {
        my
    } else {
        my - sxy / sxx * mx
    }
}

/// Run one uniqueness experiment.
pub fn run_uniqueness(
    theorem: Theorem,
    q1: &PotentialSplit,
    q2: &PotentialSplit,
    s_list: &[f64],
    sigma0_list: &[Vec3],
    seed: u64,
    opts: &UniquenessOptions,
) -> Result<UniquenessRun> {
    let q1 = q1.potential()?;
    let q2 = q2.potential()?;
    if q1.spec != q2.spec {
        return Err(Error::GridMismatch);
    }
    if q1.spec.dim() != 3 {
        return Err(Error::InvalidArgument("the pipeline is three-dimensional".into()));
    }
    if s_list.is_empty() || sigma0_list.is_empty() {
        return Err(Error::InvalidArgument("empty schedule".into()));
    }
    check_support(&q1)?;
    check_support(&q2)?;
    let qdiff = q1.sub(&q2)?;
    let schedule: Vec<f64> = match theorem {
        Theorem::T3 => shell_schedule(&q1, &q2, s_list)?.1,
        _ => s_list.to_vec(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let angle = rng.gen_range(0.0..std::f64::consts::TAU);
    let directions: Vec<Vec3> = sigma0_list.iter().map(normalized).collect();
    let mut jobs = Vec::new();
    for (d, sigma0) in directions.iter().enumerate() {
        for (k, &s) in schedule.iter().enumerate() {
            let frame = match theorem {
                Theorem::T1 => {
                    let selected = select_good_frame(
                        &q1.to_spectral(),
                        &q2.to_spectral(),
                        s,
                        *sigma0,
                        opts.epsilon,
                        seed ^ ((d as u64) << 32) ^ k as u64,
                        &opts.select,
                    )?;
                    frame_of(&selected.frame)
                }
                _ => Frame::with_third(*sigma0, angle),
            };
            jobs.push((d, s, frame));
        }
    }
    let rows = par::map(&jobs, |(d, s, frame)| {
        evaluate_row(&q1, &q2, &qdiff, *d, *s, *frame, &opts.born)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let excluded = rows.iter().filter(|r| !r.converged()).count();
    let moments = moment_table(&qdiff, &directions)?;
    let mut limits = Vec::with_capacity(directions.len());
    for (d, sigma0) in directions.iter().enumerate() {
        let mut used: Vec<&UniquenessRow> =
            rows.iter().filter(|r| r.direction == d && r.converged()).collect();
        if used.len() < MIN_ROWS {
            return Err(Error::NoConvergence(format!(
                "direction {d}: {} converged rows, {MIN_ROWS} needed",
                used.len()
            )));
        }
        used.sort_by(|a, b| a.s.total_cmp(&b.s));
        let s: Vec<f64> = used.iter().map(|r| r.s).collect();
        let gaps: Vec<f64> = used.iter().map(|r| r.gap).collect();
        let rate = if gaps.iter().all(|g| *g > 0.0) {
            loglog_slope(&s, &gaps)
        } else {
            f64::NAN
        };
        limits.push(DirectionLimit {
            direction: d,
            sigma0: *sigma0,
            rows_used: used.len(),
            limit: fit_limit(&used),
            moment: moments.values[d],
            final_gap: *gaps.last().expect("rows"),
            rate,
        });
    }
    Ok(UniquenessRun {
        theorem,
        seed,
        s_list: schedule,
        rows,
        excluded,
        limits,
        moments,
    })
}

fn frame_of(sample: &FrameSample) -> Frame {
    Frame {
        sigma1: sample.sigma1,
        sigma2: sample.sigma2,
        sigma3: sample.sigma3,
    }
}
