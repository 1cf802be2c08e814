use approx::assert_relative_eq;
use cgolab::fieldgrid::{bump, GridField, GridSpec};
use cgolab::kernel::*;
use cgolab::{Complex64, Error, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: &Vec3) -> f64 {
    dot(a, a).sqrt()
}

fn add(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn scale(a: &Vec3, c: f64) -> Vec3 {
    [a[0] * c, a[1] * c, a[2] * c]
}

fn cross(a: &Vec3, b: &Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

const E1: Vec3 = [1.0, 0.0, 0.0];
const E2: Vec3 = [0.0, 1.0, 0.0];
const E3: Vec3 = [0.0, 0.0, 1.0];

#[test]
fn xi1_standard_frame() {
    let xi = make_xi1(4.0, E1, E2).unwrap();
    assert_eq!(xi.re, [0.0, 4.0, 0.0]);
    assert_eq!(xi.im, [-4.0, 0.0, 0.0]);
    assert_eq!(xi.dot_self(), Complex64::new(0.0, 0.0));
    assert_relative_eq!(xi.norm(), 4.0 * 2f64.sqrt(), max_relative = 1e-12);
}

#[test]
fn xi1_swap_frame() {
    let a = make_xi1(4.0, E1, E2).unwrap();
    let b = make_xi1(4.0, E2, E1).unwrap();
    assert_eq!(b.re, scale(&a.im, -1.0));
    assert_eq!(b.im, scale(&a.re, -1.0));
    assert_eq!(b.dot_self().norm(), 0.0);
}

#[test]
fn xi2_standard_frame() {
    let xi = make_xi2(4.0, E1, E2, E3).unwrap();
    let r = 17f64.sqrt();
    assert_eq!(xi.im, [4.0, 0.0, 0.0]);
    assert_relative_eq!(xi.re[1], -16.0 / r, max_relative = 1e-15);
    assert_relative_eq!(xi.re[2], 4.0 / r, max_relative = 1e-15);
    assert!(xi.dot_self().norm() <= 1e-12 * xi.norm_sqr());
}

#[test]
fn xi_sum_tends_to_sigma3() {
    let a = make_xi1(4.0, E1, E2).unwrap();
    let b = make_xi2(4.0, E1, E2, E3).unwrap();
    let sum_re = add(&a.re, &b.re);
    let sum_im = add(&a.im, &b.im);
    assert_eq!(sum_im, [0.0; 3]);
    assert_relative_eq!(sum_re[1], 4.0 - 16.0 / 17f64.sqrt(), max_relative = 1e-14);
    assert_relative_eq!(sum_re[1], 0.119_43, epsilon = 1e-5);
    assert_relative_eq!(sum_re[2], 0.970_14, epsilon = 1e-5);
}

#[test]
fn rejects_bad_inputs() {
    assert!(make_xi1(4.0, E1, [0.1, 1.0, 0.0]).is_err());
    assert!(make_xi1(1.5, E1, E2).is_err());
    assert!(make_xi2(4.0, E1, E2, E1).is_err());
    let raw = make_raw(3, [0.0, 4.0, 0.0], [-4.0, 0.0, 0.0]).unwrap();
    assert!(matches!(dist_to_charset(&E1, &raw), Err(Error::RawUnsupported)));
}

#[test]
fn charset_xi1_matches_closed_form() {
    let s = 6.0;
    let xi = make_xi1(s, E1, E2).unwrap();
    let g = xi.charset().unwrap();
    assert_eq!(g.center, [3.0, 0.0, 0.0]);
    assert_eq!(g.radius, 3.0);
    assert_eq!(g.plane_normal, E2);
    assert!(g.distance(&[s, 0.0, 0.0]) < 1e-12);
    assert!(g.distance(&[0.0; 3]) < 1e-12);
    assert_relative_eq!(g.distance(&[3.0, 0.7, 0.0]), (0.49f64 + 9.0).sqrt(), max_relative = 1e-12);
}

#[test]
fn charset_points_are_zeros_of_symbol() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let f = Frame::random(&mut rng);
        let s = rng.gen_range(3.0..50.0);
        for xi in [
            make_xi1(s, f.sigma1, f.sigma2).unwrap(),
            make_xi2(s, f.sigma1, f.sigma2, f.sigma3).unwrap(),
        ] {
            let g = xi.charset().unwrap();
            for p in g.sample_points(64) {
                assert!(xi.symbol(&p).norm() <= 1e-8 * s * s);
                assert!(g.distance(&p) < 1e-9 * s);
            }
        }
    }
}

#[test]
fn planar_charset_is_two_points() {
    let xi = make_xi1_in(2, 5.0, E1, E2).unwrap();
    let g = xi.charset().unwrap();
    let pts = g.sample_points(8);
    assert_eq!(pts.len(), 2);
    for p in pts {
        assert!(xi.symbol(&p).norm() < 1e-12);
    }
    assert_relative_eq!(g.distance(&[2.5, 1.0, 0.0]), (1.0f64 + 6.25).sqrt(), max_relative = 1e-12);
}

#[test]
fn single_mode_apply() {
    let spec = GridSpec::new(3, 16, 4.0).unwrap();
    let xi = make_xi1(4.0, E1, E2).unwrap();
    // (0, 1, 0) is on the lattice for L = pi.
    let spec_pi = GridSpec::new(3, 16, std::f64::consts::PI).unwrap();
    let f = GridField::from_fn(spec_pi, |x| Complex64::from_polar(1.0, x[1]));
    let k = KernelMultiplier::new(&xi, &spec_pi, None);
    let w = k.apply(&f, None);
    let factor = Complex64::new(-1.0, -4.0) / 17.0;
    for (a, b) in w.values.iter().zip(&f.values) {
        assert!((a - b * factor).norm() < 1e-12);
    }
    let z = GridField::zeros(spec);
    let (w0, rep) = apply_kernel(&xi, &z, None).unwrap();
    assert!(w0.values.iter().all(|v| v.norm() == 0.0));
    assert!(rep.count_regularized >= 1);
}

#[test]
fn support_check() {
    let spec = GridSpec::new(3, 16, 2.0).unwrap();
    let xi = make_xi1(4.0, E1, E2).unwrap();
    let f = GridField::from_real_fn(spec, |_| 1.0);
    assert!(matches!(
        apply_kernel(&xi, &f, None),
        Err(Error::SupportTooLarge { .. })
    ));
}

#[test]
fn split_parts_partition_and_sum() {
    let spec = GridSpec::new(3, 16, 2.0).unwrap();
    let f0 = Frame::generic(3);
    let xi = make_xi1(5.0, f0.sigma1, f0.sigma2).unwrap();
    let masks = split_masks(&xi, &spec).unwrap();
    let n: usize = [KernelSplit::Near, KernelSplit::Mid, KernelSplit::Far]
        .iter()
        .map(|p| masks.indices(*p).len())
        .sum();
    assert_eq!(n, spec.len());
    let f = GridField::from_real_fn(spec, |x| bump(norm(x), 1.0));
    let k = KernelMultiplier::new(&xi, &spec, None);
    let whole = k.apply(&f, None);
    let mut parts = GridField::zeros(spec);
    for p in [KernelSplit::Near, KernelSplit::Mid, KernelSplit::Far] {
        parts = parts.add(&k.apply(&f, Some((&masks, p)))).unwrap();
    }
    let scale_ = whole.sup_norm();
    for (a, b) in whole.values.iter().zip(&parts.values) {
        assert!((a - b).norm() <= 1e-12 * scale_);
    }
}

#[test]
fn origin_is_regularized_into_near() {
    let spec = GridSpec::new(3, 8, 1.0).unwrap();
    let xi = make_xi1(3.0, E1, E2).unwrap();
    let masks = split_masks(&xi, &spec).unwrap();
    let origin = spec.index_of_freq_int([0, 0, 0]).unwrap();
    assert_eq!(masks.parts[origin], KernelSplit::Near);
    let k = KernelMultiplier::new(&xi, &spec, None);
    assert_eq!(k.values[origin], Complex64::new(0.0, 0.0));
}

#[test]
fn frame_with_third_is_right_handed() {
    let f = Frame::with_third([0.3, -0.4, 0.5], 0.7);
    assert_relative_eq!(norm(&f.sigma1), 1.0, epsilon = 1e-14);
    assert!(dot(&f.sigma1, &f.sigma2).abs() < 1e-14);
    let c = cross(&f.sigma1, &f.sigma2);
    for a in 0..3 {
        assert!((c[a] - f.sigma3[a]).abs() < 1e-14);
    }
}

#[test]
fn xi_is_null_for_random_frames() {
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = Frame::random(&mut rng);
        for xi in [
            make_xi1(1e3, f.sigma1, f.sigma2).unwrap(),
            make_xi2(1e3, f.sigma1, f.sigma2, f.sigma3).unwrap(),
        ] {
            assert!(xi.dot_self().norm() <= 1e-12 * xi.norm_sqr());
        }
        let xi = make_xi1(1e3, f.sigma1, f.sigma2).unwrap();
        assert_relative_eq!(xi.norm(), 1e3 * 2f64.sqrt(), max_relative = 1e-12);
    }
}

#[test]
fn xi_sum_is_within_one_over_s_of_sigma3() {
    let f = Frame::generic(5);
    let mut s = 8.0;
    while s <= 1024.0 {
        let a = make_xi1(s, f.sigma1, f.sigma2).unwrap();
        let b = make_xi2(s, f.sigma1, f.sigma2, f.sigma3).unwrap();
        let sum = add(&a.re, &b.re);
        let gap = norm(&add(&sum, &scale(&f.sigma3, -1.0)));
        assert!(gap <= 1.0 / s, "s = {s}: {gap}");
        s *= 2.0;
    }
}

#[test]
fn distance_matches_dense_sampling() {
    let s = 6.0;
    let xi = make_xi1(s, E1, E2).unwrap();
    let g = xi.charset().unwrap();
    let pts = g.sample_points(100_000);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut queries = vec![[3.0, 0.8, 0.0], [s, 0.0, 0.0], [0.0; 3]];
    for _ in 0..20 {
        queries.push([
            rng.gen_range(-8.0..8.0),
            rng.gen_range(-8.0..8.0),
            rng.gen_range(-8.0..8.0),
        ]);
    }
    for k in &queries {
        let brute = pts
            .iter()
            .map(|p| norm(&add(p, &scale(k, -1.0))))
            .fold(f64::INFINITY, f64::min);
        assert!((g.distance(k) - brute).abs() <= 1e-6, "{k:?}");
    }
    assert_relative_eq!(g.distance(&[3.0, 0.8, 0.0]), (0.64f64 + 9.0).sqrt(), max_relative = 1e-12);
}

#[test]
fn xi2_distance_matches_dense_sampling() {
    let f = Frame::generic(9);
    let xi = make_xi2(5.0, f.sigma1, f.sigma2, f.sigma3).unwrap();
    let g = xi.charset().unwrap();
    let pts = g.sample_points(100_000);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let k = [
            rng.gen_range(-6.0..6.0),
            rng.gen_range(-6.0..6.0),
            rng.gen_range(-6.0..6.0),
        ];
        let brute = pts
            .iter()
            .map(|p| norm(&add(p, &scale(&k, -1.0))))
            .fold(f64::INFINITY, f64::min);
        assert!((g.distance(&k) - brute).abs() <= 1e-6);
    }
}

#[test]
fn zero_distance_iff_symbol_vanishes() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let f = Frame::random(&mut rng);
    let s = 10.0;
    let xi = make_xi1(s, f.sigma1, f.sigma2).unwrap();
    let g = xi.charset().unwrap();
    let on = g.sample_points(5_000);
    for p in &on {
        assert!(xi.symbol(p).norm() <= 1e-8 * s * s);
    }
    for _ in 0..5_000 {
        let k = [
            rng.gen_range(-12.0..12.0),
            rng.gen_range(-12.0..12.0),
            rng.gen_range(-12.0..12.0),
        ];
        let d = g.distance(&k);
        assert_eq!(d <= 1e-12, xi.symbol(&k).norm() <= 1e-8 * s * s);
    }
}

#[test]
fn kernel_inverts_forward_operator() {
    let spec = GridSpec::new(3, 32, 4.0).unwrap();
    let f0 = Frame::generic(7);
    let xi = make_xi1(6.0, f0.sigma1, f0.sigma2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut c = cgolab::fieldgrid::SpectralField::zeros(spec);
    for i in 0..spec.len() {
        if norm(&spec.freq(i)) < 6.0 {
            c.coeffs[i] = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        }
    }
    let k = KernelMultiplier::new(&xi, &spec, None);
    for i in 0..spec.len() {
        if k.values[i] == Complex64::new(0.0, 0.0) {
            c.coeffs[i] = Complex64::new(0.0, 0.0);
        }
    }
    let f = c.to_field();
    let w = k.apply(&f, None);
    let back = forward_operator(&xi, &w);
    let num: f64 = back.values.iter().zip(&f.values).map(|(a, b)| (a - b).norm_sqr()).sum();
    let den: f64 = f.values.iter().map(|v| v.norm_sqr()).sum();
    assert!((num / den).sqrt() <= 1e-10);
}

#[test]
fn far_field_bound() {
    let spec = GridSpec::new(3, 32, 2.0).unwrap();
    let f0 = Frame::generic(7);
    let xi = make_xi1(3.0, f0.sigma1, f0.sigma2).unwrap();
    let k = KernelMultiplier::new(&xi, &spec, None);
    let masks = split_masks(&xi, &spec).unwrap();
    let mut checked = 0;
    for i in 0..spec.len() {
        let kk = norm(&spec.freq(i));
        if kk > 2.0 * xi.norm() {
            assert_ne!(masks.parts[i], KernelSplit::Near);
            assert!(k.values[i].norm() <= 4.0 / (kk * kk));
            checked += 1;
        }
    }
    assert!(checked > 0);
}

#[test]
fn tube_count_grows_with_s() {
    let spec = GridSpec::new(3, 32, 2.0).unwrap();
    let f0 = Frame::generic(7);
    let mut prev = 0;
    for s in [4.0, 8.0, 16.0] {
        let xi = make_xi1(s, f0.sigma1, f0.sigma2).unwrap();
        let count = two_way_mask(&xi, &spec, 1.0).unwrap().iter().filter(|b| **b).count();
        assert!(count > prev, "s = {s}: {count}");
        prev = count;
    }
}

#[test]
fn regularisation_floor_sweep() {
    let spec = GridSpec::new(3, 32, 4.0).unwrap();
    let f0 = Frame::generic(7);
    let xi = make_xi1(8.0, f0.sigma1, f0.sigma2).unwrap();
    let f = GridField::from_real_fn(spec, |x| bump(norm(x), 1.0));
    let base = KernelMultiplier::new(&xi, &spec, None).apply(&f, None);
    for rel in [1e-8, 1e-12] {
        let k = KernelMultiplier::new(&xi, &spec, Some(rel * xi.norm_sqr()));
        assert!(k.report.count_regularized >= 1);
        let w = k.apply(&f, None);
        let diff = w.sub(&base).unwrap().sup_norm();
        assert!(diff <= 1e-12 * base.sup_norm().max(1.0));
    }
}
