use cgolab::averaging::*;
use cgolab::fieldgrid::{GridSpec, SpectralField};
use cgolab::kernel::XiVariant;
use cgolab::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Frame means from oracles/avg_kernel.py: (p, R, |k|, mean).
const ORACLE: [(f64, f64, f64, f64); 12] = [
    (1.0, 16.0, 4.0, 2.268318844066e-02),
    (1.0, 16.0, 64.0, 2.489334866082e-04),
    (1.0, 16.0, 256.0, 1.527624868267e-05),
    (1.0, 64.0, 4.0, 5.670797110166e-03),
    (1.0, 64.0, 64.0, 2.718286600096e-04),
    (1.0, 64.0, 256.0, 1.555834291302e-05),
    (1.5, 16.0, 4.0, 4.923845156631e-03),
    (1.5, 16.0, 64.0, 3.987970174862e-06),
    (1.5, 16.0, 256.0, 5.975833755263e-08),
    (1.5, 64.0, 4.0, 6.042284812768e-04),
    (1.5, 64.0, 64.0, 6.642618964667e-06),
    (1.5, 64.0, 256.0, 6.231203398221e-08),
];

fn dir(k: f64) -> [f64; 3] {
    let u = [0.48, -0.6, 0.64];
    [u[0] * k, u[1] * k, u[2] * k]
}

fn opts(samples: usize, seed: u64, variant: XiVariant, estimator: Estimator) -> AvgOptions {
    AvgOptions {
        mc_samples: samples,
        seed,
        variant,
        estimator,
    }
}

#[test]
fn frames_are_orthonormal_and_reproducible() {
    let a = sample_frames(20.0, 2000, 9).unwrap();
    let b = sample_frames(20.0, 2000, 9).unwrap();
    assert_eq!(a, b);
    let dot = |x: &[f64; 3], y: &[f64; 3]| x[0] * y[0] + x[1] * y[1] + x[2] * y[2];
    for f in &a {
        assert!((10.0..=40.0).contains(&f.s));
        for (x, y, e) in [
            (f.sigma1, f.sigma1, 1.0),
            (f.sigma2, f.sigma2, 1.0),
            (f.sigma3, f.sigma3, 1.0),
            (f.sigma1, f.sigma2, 0.0),
            (f.sigma1, f.sigma3, 0.0),
            (f.sigma2, f.sigma3, 0.0),
        ] {
            assert!((dot(&x, &y) - e).abs() <= 1e-12);
        }
    }
}

#[test]
fn frame_directions_are_centred() {
    let frames = sample_frames(20.0, 100_000, 1).unwrap();
    let mut m = [0.0; 3];
    for f in &frames {
        for i in 0..3 {
            m[i] += f.sigma1[i] / frames.len() as f64;
        }
    }
    assert!((m[0] * m[0] + m[1] * m[1] + m[2] * m[2]).sqrt() <= 0.02, "{m:?}");
}

#[test]
fn frames_reject_small_radius() {
    assert!(sample_frames(10.0, 5, 0).is_err());
    assert!(sample_frames(20.0, 0, 0).is_err());
}

#[test]
fn bound_formula() {
    assert!((kernel_bound(10.0, 100.0, 1.0) - 1e-4).abs() <= 1e-18);
    assert!((kernel_bound(16.0, 4.0, 1.0) - 1.0 / 64.0).abs() <= 1e-18);
}

#[test]
fn angular_mean_matches_closed_forms() {
    // b = 0 and a = 0 limits, and the p = 1 elliptic value K(m) at m = 1/2
    assert!((angular_mean(2.0, 0.0, 1.5) - 2f64.powf(-1.5)).abs() <= 1e-15);
    let k_half = 1.854_074_677_301_372;
    let v = angular_mean(1.0, 1.0, 1.0);
    let expect = 2.0 / std::f64::consts::PI * k_half / 2f64.sqrt();
    assert!((v - expect).abs() <= 1e-12 * expect, "{v} vs {expect}");
}

#[test]
fn conditional_average_matches_oracle() {
    for (p, r, k, mean) in ORACLE {
        for variant in [XiVariant::Xi1, XiVariant::Xi2] {
            let e = avg_kernel_power(r, dir(k), p, &opts(20_000, 3, variant, Estimator::Conditional))
                .unwrap();
            let dev = (e.value - mean).abs();
            assert!(
                dev <= 4.0 * e.std_error && dev <= 0.05 * mean,
                "p {p} R {r} k {k} {variant:?}: {} vs {mean} (se {})",
                e.value,
                e.std_error
            );
            assert_eq!(e.cap_hits, 0);
        }
    }
}

#[test]
fn plain_average_agrees_off_resonance() {
    // |k| > 2R keeps every frame away from the characteristic set
    let (p, r, k, mean) = ORACLE[5];
    let e = avg_kernel_power(r, dir(k), p, &opts(20_000, 4, XiVariant::Xi1, Estimator::Plain))
        .unwrap();
    assert!((e.value - mean).abs() <= 4.0 * e.std_error, "{} vs {mean}", e.value);
    assert!(!e.flagged);
}

#[test]
fn average_rejects_bad_arguments() {
    let o = AvgOptions::default();
    assert!(avg_kernel_power(16.0, dir(4.0), 2.0, &o).is_err());
    assert!(avg_kernel_power(16.0, dir(1.0), 1.0, &o).is_err());
    assert!(avg_kernel_power(8.0, dir(4.0), 1.0, &o).is_err());
    assert!(avg_kernel_power(16.0, dir(4.0), 1.0, &AvgOptions { mc_samples: 10, ..o }).is_err());
}

#[test]
fn averages_are_deterministic() {
    let o = opts(5000, 12, XiVariant::Xi2, Estimator::Conditional);
    let a = avg_kernel_power(32.0, dir(16.0), 1.5, &o).unwrap();
    let b = avg_kernel_power(32.0, dir(16.0), 1.5, &o).unwrap();
    assert_eq!(a.value.to_bits(), b.value.to_bits());
    assert_eq!(a.std_error.to_bits(), b.std_error.to_bits());
}

#[test]
fn std_error_shrinks_by_root_two_when_samples_double() {
    // doubling the samples shrinks the error by sqrt 2
    for trial in 0..10 {
        let a = avg_kernel_power(32.0, dir(16.0), 1.0, &opts(4000, trial, XiVariant::Xi1, Estimator::Conditional)).unwrap();
        let b = avg_kernel_power(32.0, dir(16.0), 1.0, &opts(8000, trial + 100, XiVariant::Xi1, Estimator::Conditional)).unwrap();
        let q = a.std_error / b.std_error;
        let expect = 2f64.sqrt();
        assert!(q >= expect / 1.5 && q <= expect * 1.5, "trial {trial}: {q}");
    }
}

#[test]
fn variants_agree() {
    for (r, k) in [(16.0, 4.0), (32.0, 64.0)] {
        let a = avg_kernel_power(r, dir(k), 1.5, &opts(10_000, 1, XiVariant::Xi1, Estimator::Conditional)).unwrap();
        let b = avg_kernel_power(r, dir(k), 1.5, &opts(10_000, 2, XiVariant::Xi2, Estimator::Conditional)).unwrap();
        let q = a.value / b.value;
        assert!((0.2..=5.0).contains(&q));
    }
}

#[test]
fn constant_grows_towards_p_two() {
    let c = |p: f64| {
        avg_kernel_power(16.0, dir(16.0), p, &opts(20_000, 5, XiVariant::Xi1, Estimator::Conditional))
            .unwrap()
            .ratio
    };
    let (lo, hi) = (c(1.0), c(1.9));
    assert!(hi >= 10.0 * lo, "{lo} {hi}");
}

#[test]
fn shell_profile_of_geometric_sequence() {
    let a: Vec<f64> = (1..=20).map(|n| 2f64.powi(-n)).collect();
    let p = ShellProfile::from_sequence(a, 1).unwrap();
    for (i, nb) in p.nb().iter().enumerate() {
        let n = (i + 1) as f64;
        let expect = n * n * 2f64.powf(-n);
        assert!((nb - expect).abs() <= 1e-14, "n {n}");
    }
    for n in 4..=20 {
        assert!(p.selected.contains(&n), "{n} in {:?}", p.selected);
    }
}

#[test]
fn shell_profile_of_spike() {
    let mut a = vec![0.0; 12];
    a[4] = 1.0; // a_5
    let p = ShellProfile::from_sequence(a, 1).unwrap();
    for n in 5..=12usize {
        assert!((p.b[n - 1] - 2f64.powi(5 - n as i32)).abs() <= 1e-15);
    }
    assert!(!p.selected.is_empty());
    assert!(p.nb()[11] < p.nb()[4]);
}

#[test]
fn shell_profile_matches_direct_recomputation() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..5 {
        let a: Vec<f64> = (1..=20).map(|n| rng.gen::<f64>() / (n * n) as f64).collect();
        let p = ShellProfile::from_sequence(a.clone(), 1).unwrap();
        for n in 0..a.len() {
            let direct: f64 = (0..=n).map(|l| 2f64.powi(l as i32 - n as i32) * a[l]).sum();
            assert!((p.b[n] - direct).abs() <= 1e-14);
        }
        let total: f64 = a.iter().sum();
        let two_h: f64 = 2.0 * total / (1..=20).map(|n| 1.0 / n as f64).sum::<f64>();
        assert!(p.min_nb() <= two_h);
    }
}

#[test]
fn shells_partition_the_band() {
    let spec = GridSpec::new(3, 16, 2.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut q = SpectralField::zeros(spec);
    for c in q.coeffs.iter_mut() {
        *c = Complex64::new(rng.gen(), rng.gen());
    }
    let p = shell_select(&q).unwrap();
    let w = spec.lattice_weight();
    let direct: f64 = (0..spec.len())
        .map(|i| {
            let k = spec.freq(i);
            let kn = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]).sqrt();
            if kn >= 1.0 {
                w * q.coeffs[i].norm_sqr() / kn
            } else {
                0.0
            }
        })
        .sum();
    let sum: f64 = p.a.iter().sum();
    assert!((sum - direct).abs() <= 1e-10 * direct);
    assert_eq!(p.first, 0);
}

#[test]
fn shell_select_needs_three_shells() {
    let spec = GridSpec::new(3, 8, 8.0).unwrap();
    assert!(shell_select(&SpectralField::zeros(spec)).is_err());
}

fn test_potential(spec: GridSpec, seed: u64) -> SpectralField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q = SpectralField::zeros(spec);
    for i in 0..spec.len() {
        let k = spec.freq(i);
        let kn = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]).sqrt();
        q.coeffs[i] = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) / (1.0 + kn * kn);
    }
    q
}

#[test]
fn selection_with_zero_potentials_returns_first_candidate() {
    let spec = GridSpec::new(3, 8, 4.0).unwrap();
    let z = SpectralField::zeros(spec);
    let sel = select_good_frame(&z, &z, 20.0, [0.0, 0.0, 1.0], 0.5, 3, &SelectOptions { candidates: 8, ..Default::default() }).unwrap();
    assert_eq!(sel.objective, 0.0);
    let first = sample_frames(20.0, sel.draws, 3)
        .unwrap()
        .into_iter()
        .find(|f| {
            let d = [f.sigma3[0], f.sigma3[1], f.sigma3[2] - 1.0];
            (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt() <= 0.5
        })
        .unwrap();
    assert_eq!(sel.frame, first);
}

#[test]
fn selection_beats_the_pool() {
    let spec = GridSpec::new(3, 16, 4.0).unwrap();
    for seed in 0..3 {
        let q1 = test_potential(spec, seed);
        let q2 = test_potential(spec, seed + 50);
        let target = [0.0, 0.6, 0.8];
        let sel = select_good_frame(&q1, &q2, 20.0, target, 0.4, seed, &SelectOptions { candidates: 40, ..Default::default() }).unwrap();
        let mut pool = sel.pool.clone();
        pool.sort_by(|a, b| a.total_cmp(b));
        assert!(sel.objective <= pool[pool.len() / 2]);
        let p5 = pool[(0.05 * pool.len() as f64) as usize];
        assert!(sel.objective <= 5.0 * p5);
        let d: f64 = (0..3).map(|i| (sel.frame.sigma3[i] - target[i]).powi(2)).sum::<f64>().sqrt();
        assert!(d <= 0.4);
    }
}

#[test]
fn selection_reports_missing_candidates() {
    let spec = GridSpec::new(3, 8, 4.0).unwrap();
    let z = SpectralField::zeros(spec);
    let r = select_good_frame(&z, &z, 20.0, [1.0, 0.0, 0.0], 1e-4, 0, &SelectOptions { max_draws: 100, ..Default::default() });
    assert!(matches!(r, Err(cgolab::Error::NoCandidate { draws: 100 })));
}

#[test]
fn energy_average_of_zero() {
    let spec = GridSpec::new(3, 16, 4.0).unwrap();
    let e = avg_energy_functional(20.0, &SpectralField::zeros(spec), 4, 0, XiVariant::Xi1, &Default::default()).unwrap();
    assert_eq!(e.estimate.value, 0.0);
    assert_eq!(e.estimate.bound_value, 0.0);
}

#[test]
fn energy_average_requires_three_dimensions() {
    let spec = GridSpec::new(2, 16, 4.0).unwrap();
    assert!(avg_energy_functional(20.0, &SpectralField::zeros(spec), 4, 0, XiVariant::Xi1, &Default::default()).is_err());
}
