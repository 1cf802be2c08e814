//! The acceptance suite: twelve fixed experiments with pinned tolerances.

use cgolab::averaging::{avg_energy_functional, avg_kernel_power, AvgOptions, Estimator, ShellProfile};
use cgolab::cgo::{vanishing_scan, BornOptions, PotentialSplit};
use cgolab::dtn::{boundary_probe, green_pairing, DomainMesh, FluxRule};
use cgolab::estimates::{
    field_case_row, krs_ratio, lemma_scan, loglog_slope, spread, EstimateCase, QuadratureOptions,
};
use cgolab::fieldgrid::{bump, smooth_cutoff, GridField, GridSpec, NormKind, SpectralField};
use cgolab::kernel::{dist_to_charset, make_xi1, Frame, KernelMultiplier, XiVariant};
use cgolab::pipeline::{rotated_design_26, run_uniqueness, Theorem};
use cgolab::{Complex64, Result, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

pub struct Criterion {
    pub id: usize,
    pub name: &'static str,
    /// Runtime budget in seconds.
    pub budget: f64,
    run: fn() -> Result<Verdict>,
}

pub struct Verdict {
    pub pass: bool,
    pub detail: String,
}

pub struct Outcome {
    pub id: usize,
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
    pub seconds: f64,
    pub budget: f64,
}

impl Outcome {
    pub fn line(&self) -> String {
        format!(
            "[{}] {:02} {}: {}; {:.1} s (budget {} s)",
            if self.pass { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.detail,
            self.seconds,
            self.budget
        )
    }
}

impl Criterion {
    pub fn run(&self) -> Outcome {
        let t0 = Instant::now();
        let result = (self.run)();
        let seconds = t0.elapsed().as_secs_f64();
        let (pass, detail) = match result {
            Ok(v) => (v.pass, v.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        let over = seconds > self.budget;
        Outcome {
            id: self.id,
            name: self.name,
            pass: pass && !over,
            detail: if over {
                format!("{detail}; over budget")
            } else {
                detail
            },
            seconds,
            budget: self.budget,
        }
    }
}

pub fn criteria() -> Vec<Criterion> {
    vec![
        Criterion { id: 1, name: "multiplier exactness", budget: 10.0, run: multiplier_exactness },
        Criterion { id: 2, name: "SU1 decay", budget: 120.0, run: su1_decay },
        Criterion { id: 3, name: "SU2 boundedness", budget: 120.0, run: su2_bounded },
        Criterion { id: 4, name: "LEM1/LEM2 separation", budget: 300.0, run: lemma_separation },
        Criterion { id: 5, name: "Born convergence and vanishing", budget: 600.0, run: born_vanishing },
        Criterion { id: 6, name: "KRS uniformity", budget: 300.0, run: krs_uniformity },
        Criterion { id: 7, name: "averaging bound", budget: 900.0, run: averaging_bound },
        Criterion { id: 8, name: "E average scaling", budget: 900.0, run: energy_scaling },
        Criterion { id: 9, name: "shell selection", budget: 1.0, run: shell_selection },
        Criterion { id: 10, name: "DtN and integral identity", budget: 300.0, run: dtn_identity },
        Criterion { id: 11, name: "boundary probe", budget: 300.0, run: probe },
        Criterion { id: 12, name: "uniqueness pipeline", budget: 1800.0, run: pipeline },
    ]
}

fn dist(x: &Vec3, c: &Vec3) -> f64 {
    ((x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2) + (x[2] - c[2]).powi(2)).sqrt()
}

fn scan_frame() -> Frame {
    Frame::generic(7)
}

fn sweep(s: &[f64], frame: &Frame) -> Result<Vec<cgolab::kernel::ComplexFrequency>> {
    s.iter().map(|&s| make_xi1(s, frame.sigma1, frame.sigma2)).collect()
}

const SWEEP: [f64; 7] = [8.0, 16.0, 32.0, 64.0, 128.0, 256.0, 512.0];

fn box64() -> GridSpec {
    GridSpec::new(3, 64, 4.0).expect("valid grid")
}

fn multiplier_exactness() -> Result<Verdict> {
    let spec = GridSpec::new(3, 32, 4.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < 100 {
        let idx = rng.gen_range(0..spec.len());
        let k = spec.freq(idx);
        let frame = Frame::random(&mut rng);
        let xi = make_xi1(rng.gen_range(3.0..40.0), frame.sigma1, frame.sigma2)?;
        if dist_to_charset(&k, &xi)? < 1e-6 {
            continue;
        }
        let f = GridField::from_fn(spec, |x| Complex64::from_polar(1.0, k[0] * x[0] + k[1] * x[1] + k[2] * x[2]));
        let w = KernelMultiplier::new(&xi, &spec, None).apply(&f, None);
        let m = xi.multiplier(&k);
        let err = w
            .values
            .iter()
            .zip(&f.values)
            .map(|(a, b)| (a - b * m).norm())
            .fold(0.0, f64::max);
        worst = worst.max(err / m.norm());
        done += 1;
    }
    Ok(Verdict {
        pass: worst <= 1e-12,
        detail: format!("max relative error {worst:.2e} over 100 modes (limit 1e-12)"),
    })
}

fn smooth_gaussian(spec: GridSpec) -> GridField {
    GridField::from_real_fn(spec, |x| {
        let r2 = x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
        if r2 >= 1.0 {
            0.0
        } else {
            (-r2 / (2.0 * 0.09)).exp()
        }
    })
}

fn rough(spec: GridSpec, seed: u64) -> GridField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut f = GridField::zeros(spec);
    for i in 0..spec.len() {
        let v: f64 = rng.gen_range(-1.0..1.0);
        if dist(&spec.point(i), &[0.0; 3]) < 1.0 {
            f.values[i] = Complex64::new(v, 0.0);
        }
    }
    f
}

fn su1_decay() -> Result<Verdict> {
    let f = smooth_gaussian(box64());
    let rows: Vec<_> = sweep(&SWEEP, &scan_frame())?
        .iter()
        .map(|xi| field_case_row(EstimateCase::Su1, &f, xi, 0, 1.0))
        .collect::<Result<_>>()?;
    let x: Vec<f64> = rows.iter().map(|r| r.xi_norm).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.raw_ratio()).collect();
    let slope = loglog_slope(&x, &y);
    Ok(Verdict {
        pass: (-1.2..=-0.8).contains(&slope),
        detail: format!("slope {slope:.3} (required [-1.2, -0.8])"),
    })
}

fn su2_bounded() -> Result<Verdict> {
    let spec = box64();
    let xis = sweep(&SWEEP, &scan_frame())?;
    let mut spreads = Vec::new();
    for seed in 0..5 {
        let f = rough(spec, seed);
        let r: Vec<f64> = xis
            .iter()
            .map(|xi| field_case_row(EstimateCase::Su2, &f, xi, 0, 1.0).map(|r| r.ratio))
            .collect::<Result<_>>()?;
        spreads.push(spread(&r));
    }
    let worst = spreads.iter().cloned().fold(0.0, f64::max);
    Ok(Verdict {
        pass: worst <= 4.0,
        detail: format!("worst ratio spread x{worst:.2} over 5 rough fields (limit x4)"),
    })
}

fn lemma_separation() -> Result<Verdict> {
    let rows = lemma_scan(&[8.0, 16.0, 32.0, 64.0], &scan_frame(), 0.9, 1.0)?;
    let x: Vec<f64> = rows.iter().map(|r| r.xi_norm).collect();
    let l1: Vec<f64> = rows.iter().map(|r| r.lem1_max).collect();
    let l2: Vec<f64> = rows.iter().map(|r| r.lem2_max).collect();
    let s1 = loglog_slope(&x, &l1);
    let s2 = loglog_slope(&x, &l2);
    Ok(Verdict {
        pass: (-0.2..=0.2).contains(&s1) && s2 <= s1 - 0.7,
        detail: format!("LEM1 slope {s1:.3} (required [-0.2, 0.2]), LEM2 slope {s2:.3} (required <= {:.3})", s1 - 0.7),
    })
}

fn born_vanishing() -> Result<Verdict> {
    let spec = box64();
    let q = GridField::from_real_fn(spec, |x| {
        let r = dist(x, &[0.0; 3]);
        if r >= 1.0 {
            0.0
        } else {
            0.5 * (-r * r / (2.0 * 0.09)).exp()
        }
    });
    let s = [32.0, 64.0, 128.0, 256.0];
    let rows = vanishing_scan(&PotentialSplit::plain(q), &s, &scan_frame(), &BornOptions::default())?;
    let converged = rows.iter().all(|r| r.converged);
    let ratio = rows
        .iter()
        .filter_map(|r| r.max_ratio)
        .fold(0.0, f64::max);
    let h1: Vec<f64> = rows.iter().map(|r| r.h1).collect();
    let monotone = h1.windows(2).all(|w| w[1] < w[0]);
    let slope = loglog_slope(&s, &h1);
    Ok(Verdict {
        pass: converged && ratio <= 0.75 && monotone && slope <= -0.8,
        detail: format!(
            "converged {converged}, max ratio {ratio:.3} (limit 0.75), H1 decreasing {monotone}, slope {slope:.3} (limit -0.8)"
        ),
    })
}

fn singular(spec: GridSpec, seed: u64, a: f64) -> GridField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c: Vec3 = [
        rng.gen_range(-0.2..0.2),
        rng.gen_range(-0.2..0.2),
        rng.gen_range(-0.2..0.2),
    ];
    let h = spec.h();
    GridField::from_real_fn(spec, |x| {
        if dist(x, &[0.0; 3]) >= 1.0 {
            0.0
        } else {
            dist(x, &c).max(0.5 * h).powf(-a)
        }
    })
}

fn krs_spreads(frame: &Frame) -> Result<Vec<f64>> {
    let spec = box64();
    let xis = sweep(&SWEEP[..6], frame)?;
    (0..3)
        .map(|seed| {
            let f = singular(spec, seed, 1.4);
            let r: Vec<f64> = xis.iter().map(|xi| krs_ratio(&f, xi, 6.0)).collect::<Result<_>>()?;
            Ok(spread(&r))
        })
        .collect()
}

fn krs_uniformity() -> Result<Verdict> {
    let worst = krs_spreads(&scan_frame())?.into_iter().fold(0.0, f64::max);
    Ok(Verdict {
        pass: worst <= 4.0,
        detail: format!("worst ratio spread x{worst:.2} over 3 singular fields (limit x4)"),
    })
}

fn averaging_bound() -> Result<Verdict> {
    let u = [0.48, -0.6, 0.64];
    let mut worst: f64 = 0.0;
    let mut caps = 0;
    let mut total = 0;
    let mut parts = Vec::new();
    for p in [1.0, 1.5] {
        for (variant, label) in [(XiVariant::Xi1, "xi1"), (XiVariant::Xi2, "xi2")] {
            let mut ratios = Vec::new();
            for r in [16.0, 32.0, 64.0] {
                for k in [4.0, 16.0, 64.0, 256.0] {
                    let opts = AvgOptions {
                        mc_samples: 100_000,
                        seed: 3,
                        variant,
                        estimator: Estimator::Conditional,
                    };
                    let e = avg_kernel_power(r, [u[0] * k, u[1] * k, u[2] * k], p, &opts)?;
                    ratios.push(e.ratio);
                    caps += e.cap_hits;
                    total += e.mc_samples;
                }
            }
            let sp = spread(&ratios);
            worst = worst.max(sp);
            parts.push(format!("p={p} {label} x{sp:.2}"));
        }
    }
    let cap_fraction = caps as f64 / total as f64;
    Ok(Verdict {
        pass: worst <= 3.0 && cap_fraction < 1e-4,
        detail: format!(
            "constant spread {} (limit x3), cap hits {:.4}% (limit 0.01%)",
            parts.join(", "),
            100.0 * cap_fraction
        ),
    })
}

/// `q^ = 1` on the shell `4 <= |eta| < 5`.
pub fn single_shell(spec: GridSpec) -> SpectralField {
    let mut q = SpectralField::zeros(spec);
    for i in 0..spec.len() {
        let k = spec.freq(i);
        let r = dist(&k, &[0.0; 3]);
        if (4.0..5.0).contains(&r) {
            q.coeffs[i] = Complex64::new(1.0, 0.0);
        }
    }
    q
}

fn energy_scaling() -> Result<Verdict> {
    let q = single_shell(GridSpec::new(3, 32, 4.0)?);
    let rs = [16.0, 32.0, 64.0, 128.0];
    let mut dep = Vec::new();
    let mut total = Vec::new();
    for &r in &rs {
        let e = avg_energy_functional(r, &q, 64, 1, XiVariant::Xi1, &QuadratureOptions::default())?;
        dep.push(e.estimate.value);
        total.push(e.mean_total);
    }
    let slope = loglog_slope(&rs, &dep);
    let full = loglog_slope(&rs, &total);
    Ok(Verdict {
        pass: (-1.4..=-0.6).contains(&slope),
        detail: format!("slope {slope:.3} (required [-1.4, -0.6]); full E slope {full:.3}"),
    })
}

fn shell_selection() -> Result<Verdict> {
    let a: Vec<f64> = (1..=20).map(|n| 2f64.powi(-n)).collect();
    let p = ShellProfile::from_sequence(a, 1)?;
    let exact = p
        .nb()
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let n = (i + 1) as f64;
            (v - n * n * 2f64.powf(-n)).abs()
        })
        .fold(0.0, f64::max);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let a: Vec<f64> = (1..=20)
            .map(|n| rng.gen_range(0.0..1.0) / (n * n) as f64)
            .collect();
        let sum: f64 = a.iter().sum();
        let p = ShellProfile::from_sequence(a, 1)?;
        worst = worst.max(p.min_nb() / sum);
    }
    let harmonic_bound = 2.0 / (1..=20).map(|n| 1.0 / n as f64).sum::<f64>();
    Ok(Verdict {
        pass: exact <= 1e-14 && worst <= 0.2,
        detail: format!(
            "geometric n b_n error {exact:.1e} (limit 1e-14), worst min n b_n / sum a {worst:.3} (limit 0.2, universal bound {harmonic_bound:.3})"
        ),
    })
}

fn mesh_bump(mesh: &DomainMesh, amp: f64, c: Vec3) -> Vec<f64> {
    mesh.sample(|x| amp * bump(dist(x, &c), 0.3))
}

fn harmonic(a: f64, x: &Vec3, phase: f64) -> f64 {
    (a * x[0]).exp() * (a * x[1] + phase).cos()
}

fn dtn_identity() -> Result<Verdict> {
    let mesh = DomainMesh::new(3, 17)?;
    let q = mesh_bump(&mesh, 4.0, [0.5; 3]);
    let f1 = mesh.trace(|x| harmonic(1.3, x, 0.2));
    let f2 = mesh.trace(|x| harmonic(0.7, x, -0.5) + x[2]);
    let equal = green_pairing(&mesh, &q, &q, &f1, &f2, FluxRule::Variational)?.boundary.abs();
    let mut gaps = Vec::new();
    for m in [17, 33] {
        let mesh = DomainMesh::new(3, m)?;
        let q1 = mesh_bump(&mesh, 6.0, [0.45, 0.5, 0.55]);
        let q2 = mesh_bump(&mesh, -3.0, [0.55, 0.5, 0.5]);
        let f1 = mesh.trace(|x| harmonic(1.0, x, 0.0));
        let f2 = mesh.trace(|x| harmonic(2.0, x, 1.0));
        gaps.push(green_pairing(&mesh, &q1, &q2, &f1, &f2, FluxRule::OneSided)?.difference);
    }
    let ratio = gaps[0] / gaps[1];
    Ok(Verdict {
        pass: equal <= 1e-8 && ratio >= 3.5,
        detail: format!(
            "q1=q2 residual {equal:.1e} (limit 1e-8), identity gap {:.3e} -> {:.3e}, ratio {ratio:.2} (limit 3.5)",
            gaps[0], gaps[1]
        ),
    })
}

fn probe_gammas(mesh: &DomainMesh, z: Vec3, diff: f64) -> (Vec<f64>, Vec<f64>) {
    let centre = [0.5; 3];
    let g2 = mesh.sample(|x| 1.0 + 0.3 * bump(dist(x, &centre), 0.45));
    let g1 = mesh.sample(|x| 1.0 + 0.3 * bump(dist(x, &centre), 0.45) + diff * smooth_cutoff(dist(x, &z), 0.35, 0.6));
    (g1, g2)
}

fn probe() -> Result<Verdict> {
    let z = [0.5, 0.5, 0.0];
    let mesh = DomainMesh::new(3, 17)?;
    let (_, g) = probe_gammas(&mesh, z, 0.0);
    let zero = boundary_probe(&mesh, &g, &g, z, 4)?;
    let zmax = zero.values.iter().map(|v| v.abs()).fold(zero.estimate.abs(), f64::max);
    let (g1, g2) = probe_gammas(&mesh, z, 0.5);
    let jump = boundary_probe(&mesh, &g1, &g2, z, 4)?.estimate;
    Ok(Verdict {
        pass: zmax <= 1e-6 && (jump - 0.5).abs() <= 0.05,
        detail: format!("zero difference {zmax:.1e} (limit 1e-6), jump 0.5 recovered as {jump:.4} (within 10%)"),
    })
}

/// The synthetic pair of the pipeline criterion: `||q1 - q2||_2 = 0.3`.
pub fn pipeline_pair(spec: GridSpec) -> Result<(GridField, GridField)> {
    let c2 = [0.1, 0.0, 0.0];
    let q2 = GridField::from_real_fn(spec, |x| 0.5 * bump(dist(x, &c2), 0.35));
    let d = GridField::from_real_fn(spec, |x| bump(dist(x, &[0.0; 3]), 0.5));
    let l2 = d.norm(NormKind::Lp(2.0))?;
    let d = d.scale(Complex64::new(0.3 / l2, 0.0));
    Ok((q2.add(&d)?, q2))
}

fn pipeline() -> Result<Verdict> {
    let spec = box64();
    let (q1, q2) = pipeline_pair(spec)?;
    let dirs = rotated_design_26(0);
    let s = [32.0, 64.0, 128.0];
    let opts = Default::default();
    let run = run_uniqueness(
        Theorem::T2,
        &PotentialSplit::plain(q1.clone()),
        &PotentialSplit::plain(q2),
        &s,
        &dirs,
        0,
        &opts,
    )?;
    let mut worst_rel: f64 = 0.0;
    let mut min_m = f64::INFINITY;
    for d in 0..dirs.len() {
        let last = run
            .rows
            .iter()
            .rfind(|r| r.direction == d && r.s == 128.0)
            .ok_or_else(|| cgolab::Error::NoConvergence(format!("direction {d} has no s=128 row")))?;
        min_m = min_m.min(last.moment.abs());
        worst_rel = worst_rel.max(last.gap / last.moment.abs());
    }
    let same = PotentialSplit::plain(q1);
    let zero = run_uniqueness(Theorem::T2, &same, &same, &s, &dirs, 0, &opts)?;
    let zmax = zero
        .rows
        .iter()
        .map(|r| Complex64::new(r.i_re, r.i_im).norm())
        .fold(0.0, f64::max);
    Ok(Verdict {
        pass: run.excluded == 0 && min_m >= 0.05 && worst_rel <= 0.1 && zmax <= 1e-6,
        detail: format!(
            "26 directions, min |M| {min_m:.4} (limit 0.05), worst |I-M|/|M| at s=128 {worst_rel:.2e} (limit 0.1), q1=q2 max |I| {zmax:.1e} (limit 1e-6)"
        ),
    })
}

/// Standard-frame KRS spreads, printed next to criterion 6.
pub fn krs_standard_frame_diagnostic() -> Result<f64> {
    Ok(krs_spreads(&Frame::standard())?.into_iter().fold(0.0, f64::max))
}
