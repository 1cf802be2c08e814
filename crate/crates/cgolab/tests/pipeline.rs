use cgolab::cgo::PotentialSplit;
use cgolab::fieldgrid::{bump, GridField, GridSpec, NormKind};
use cgolab::pipeline::*;
use cgolab::{Complex64, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn grid() -> GridSpec {
    GridSpec::new(3, 32, 4.0).unwrap()
}

fn radial(spec: GridSpec, c: Vec3, radius: f64, amp: f64) -> GridField {
    GridField::from_real_fn(spec, move |x| {
        let r = ((x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2) + (x[2] - c[2]).powi(2)).sqrt();
        amp * bump(r, radius)
    })
}

fn pair(spec: GridSpec) -> (GridField, GridField) {
    let q2 = radial(spec, [0.1, 0.0, 0.0], 0.35, 0.5);
    let d = radial(spec, [0.0; 3], 0.5, 1.0);
    let l2 = d.norm(NormKind::Lp(2.0)).unwrap();
    let d = d.scale(Complex64::new(0.3 / l2, 0.0));
    (q2.add(&d).unwrap(), q2)
}

#[test]
fn design_has_26_unit_directions() {
    let d = spherical_design_26();
    assert_eq!(d.len(), 26);
    let mut sum = [0.0; 3];
    for (i, a) in d.iter().enumerate() {
        assert!((dot(a, a) - 1.0).abs() <= 1e-15);
        for b in &d[i + 1..] {
            assert!(dot(a, b) < 1.0 - 1e-9);
        }
        for k in 0..3 {
            sum[k] += a[k];
        }
    }
    assert!(sum.iter().all(|v| v.abs() <= 1e-12));
    let r = rotated_design_26(5);
    for i in 0..26 {
        for j in 0..26 {
            assert!((dot(&r[i], &r[j]) - dot(&d[i], &d[j])).abs() <= 1e-12);
        }
    }
}

#[test]
fn moments_of_zero_vanish() {
    let t = moment_table(&GridField::zeros(grid()), &spherical_design_26()).unwrap();
    assert_eq!(t.max_abs, 0.0);
    let r = moment_inversion_check(&t, &GridField::zeros(grid()));
    assert_eq!(r.margin, 0.0);
}

#[test]
fn moments_are_linear() {
    let d = radial(grid(), [0.1, -0.1, 0.0], 0.3, 0.7);
    let dirs = rotated_design_26(1);
    let a = moment_table(&d, &dirs).unwrap();
    let b = moment_table(&d.scale(Complex64::new(2.0, 0.0)), &dirs).unwrap();
    for (x, y) in a.values.iter().zip(&b.values) {
        assert!((y - 2.0 * x).abs() <= 1e-10 * x.abs());
    }
}

#[test]
fn one_signed_difference_has_large_moments() {
    let spec = grid();
    let d = radial(spec, [0.0; 3], 0.5, 1.0);
    let mass = d.integrate(None).re;
    let t = moment_table(&d, &spherical_design_26()).unwrap();
    for v in &t.values {
        assert!(*v >= (-0.5f64).exp() * mass && *v > 0.6 * mass, "{v} vs {mass}");
    }
}

#[test]
fn sign_changing_differences_are_detected() {
    let spec = grid();
    let mut diffs = Vec::new();
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut f = GridField::zeros(spec);
        for _ in 0..4 {
            let c = [rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2)];
            let amp = rng.gen_range(-1.0..1.0);
            f = f.add(&radial(spec, c, 0.25, amp)).unwrap();
        }
        diffs.push(f);
    }
    let scan = inversion_scan(&diffs, &spherical_design_26()).unwrap();
    assert!(scan.reports.iter().all(|r| r.max_abs_moment > 0.0));
    assert!(scan.min_margin > 0.0);
    assert!(scan.correlation.is_finite());
}

#[test]
fn equal_potentials_give_zero_functional() {
    let (q, _) = pair(grid());
    let p = PotentialSplit::plain(q);
    let run = run_uniqueness(Theorem::T2, &p, &p, &[32.0, 64.0, 128.0], &rotated_design_26(2)[..2], 0, &Default::default()).unwrap();
    assert_eq!(run.excluded, 0);
    for r in &run.rows {
        assert!(r.i_re.abs() <= 1e-6 && r.i_im.abs() <= 1e-6);
    }
}

#[test]
fn t2_functional_approaches_the_moment() {
    let (q1, q2) = pair(grid());
    let run = run_uniqueness(
        Theorem::T2,
        &PotentialSplit::plain(q1),
        &PotentialSplit::plain(q2),
        &[32.0, 64.0, 128.0],
        &rotated_design_26(2)[..3],
        0,
        &Default::default(),
    )
    .unwrap();
    for l in &run.limits {
        let gaps: Vec<f64> = run.rows.iter().filter(|r| r.direction == l.direction).map(|r| r.gap).collect();
        assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");
        assert!(l.final_gap <= 0.1 * l.moment.abs());
        assert!((l.limit - l.moment).abs() <= 0.01 * l.moment.abs());
    }
}

#[test]
fn t1_frames_stay_near_the_direction() {
    let (q1, q2) = pair(grid());
    let dirs = rotated_design_26(3);
    let opts = UniquenessOptions::default();
    let run = run_uniqueness(Theorem::T1, &PotentialSplit::plain(q1), &PotentialSplit::plain(q2), &[32.0, 64.0, 128.0], &dirs[..1], 4, &opts).unwrap();
    for r in &run.rows {
        let d = &dirs[0];
        let gap = ((r.frame.sigma3[0] - d[0]).powi(2) + (r.frame.sigma3[1] - d[1]).powi(2) + (r.frame.sigma3[2] - d[2]).powi(2)).sqrt();
        assert!(gap <= opts.epsilon);
        assert!(r.gap <= 0.1 * r.moment.abs());
    }
}

#[test]
fn t3_uses_selected_shells() {
    let (q1, q2) = pair(grid());
    let s = [8.0, 16.0, 32.0, 64.0, 128.0, 256.0];
    let (profile, kept) = shell_schedule(&q1, &q2, &s).unwrap();
    assert!(kept.len() >= 3);
    for v in &kept {
        assert!(profile.selected.contains(&(v.log2() as usize)));
    }
    let run = run_uniqueness(Theorem::T3, &PotentialSplit::plain(q1), &PotentialSplit::plain(q2), &s, &rotated_design_26(2)[..1], 0, &Default::default()).unwrap();
    assert_eq!(run.s_list, kept);
}

#[test]
fn runs_are_reproducible() {
    let (q1, q2) = pair(grid());
    let (a, b) = (PotentialSplit::plain(q1), PotentialSplit::plain(q2));
    let dirs = rotated_design_26(2);
    let r1 = run_uniqueness(Theorem::T1, &a, &b, &[32.0, 64.0, 128.0], &dirs[..1], 9, &Default::default()).unwrap();
    let r2 = run_uniqueness(Theorem::T1, &a, &b, &[32.0, 64.0, 128.0], &dirs[..1], 9, &Default::default()).unwrap();
    for (x, y) in r1.rows.iter().zip(&r2.rows) {
        assert_eq!(x.i_re.to_bits(), y.i_re.to_bits());
        assert_eq!(x.frame, y.frame);
    }
}

#[test]
fn pipeline_rejects_bad_input() {
    let spec = grid();
    let (q1, q2) = pair(spec);
    let (a, b) = (PotentialSplit::plain(q1), PotentialSplit::plain(q2));
    let dirs = spherical_design_26();
    let wide = PotentialSplit::plain(radial(spec, [0.0; 3], 0.9, 1.0));
    let opts = UniquenessOptions::default();
    assert!(run_uniqueness(Theorem::T2, &wide, &b, &[32.0, 64.0, 128.0], &dirs[..1], 0, &opts).is_err());
    assert!(run_uniqueness(Theorem::T2, &a, &b, &[], &dirs[..1], 0, &opts).is_err());
    assert!(run_uniqueness(Theorem::T2, &a, &b, &[32.0, 64.0], &dirs[..1], 0, &opts).is_err());
    assert!(Theorem::parse("t4").is_err());
    assert_eq!(Theorem::parse("T2").unwrap(), Theorem::T2);
}
