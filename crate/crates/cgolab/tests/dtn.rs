use cgolab::dtn::*;
use cgolab::fieldgrid::{bump, smooth_cutoff, GridField, GridSpec};
use cgolab::Vec3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn centre_dist(x: &Vec3) -> f64 {
    ((x[0] - 0.5).powi(2) + (x[1] - 0.5).powi(2) + (x[2] - 0.5).powi(2)).sqrt()
}

/// Exact lumped flux: face normal derivatives of `grad` averaged with the face weights.
fn lumped_flux(mesh: &DomainMesh, grad: impl Fn(&Vec3) -> Vec3) -> Vec<f64> {
    let h = mesh.h();
    let d = mesh.dim();
    mesh.boundary_nodes()
        .iter()
        .enumerate()
        .map(|(b, &i)| {
            let x = mesh.point(i);
            let g = grad(&x);
            let mut num = 0.0;
            for a in 0..d {
                let side = if x[a].abs() < 1e-12 {
                    -1.0
                } else if (x[a] - 1.0).abs() < 1e-12 {
                    1.0
                } else {
                    continue;
                };
                let mut w = h.powi(d as i32 - 1);
                for c in 0..d {
                    if c != a && (x[c].abs() < 1e-12 || (x[c] - 1.0).abs() < 1e-12) {
                        w *= 0.5;
                    }
                }
                num += w * side * g[a];
            }
            num / mesh.boundary_weights()[b]
        })
        .collect()
}

fn weighted_error(mesh: &DomainMesh, a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    mesh.pairing(&d, &d).sqrt()
}

#[test]
fn mesh_counts_and_weights() {
    let mesh = DomainMesh::new(3, 9).unwrap();
    assert_eq!(mesh.node_count(), 729);
    assert_eq!(mesh.interior_count(), 343);
    assert_eq!(mesh.boundary_count(), 729 - 343);
    let area: f64 = mesh.boundary_weights().iter().sum();
    assert!((area - 6.0).abs() <= 1e-12);
    let vol = mesh.integrate(&vec![1.0; mesh.node_count()]);
    assert!((vol - 1.0).abs() <= 1e-12);
    for n in mesh.normals() {
        assert!(((n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt() - 1.0).abs() <= 1e-14);
    }
    assert!(DomainMesh::new(4, 9).is_err());
    assert!(DomainMesh::new(3, 4).is_err());
}

#[test]
fn linear_data_gives_exact_flux() {
    for dim in [2, 3] {
        let mesh = DomainMesh::new(dim, 9).unwrap();
        let a = [0.3, -1.1, 0.7];
        let s = EllipticSolver::new(&mesh, &Coefficient::Schrodinger(vec![0.0; mesh.node_count()])).unwrap();
        let f = mesh.trace(|x| a[0] * x[0] + a[1] * x[1] + a[2] * x[2]);
        let u = s.solve(&f).unwrap();
        for i in 0..mesh.node_count() {
            let x = mesh.point(i);
            assert!((u[i] - (a[0] * x[0] + a[1] * x[1] + a[2] * x[2])).abs() <= 1e-12);
        }
        let exact = lumped_flux(&mesh, |_| a);
        for rule in [FluxRule::Variational, FluxRule::OneSided] {
            let g = s.flux(&u, rule);
            for (x, y) in g.iter().zip(&exact) {
                assert!((x - y).abs() <= 1e-10, "{rule:?} {x} {y}");
            }
        }
    }
}

#[test]
fn constant_conductivity_scales_the_matrix() {
    let mesh = DomainMesh::new(3, 7).unwrap();
    let n = mesh.node_count();
    let one = assemble_dtn(&mesh, &Coefficient::Conductivity(vec![1.0; n])).unwrap();
    let two = assemble_dtn(&mesh, &Coefficient::Conductivity(vec![2.0; n])).unwrap();
    let schr = assemble_dtn(&mesh, &Coefficient::Schrodinger(vec![0.0; n])).unwrap();
    let scale = one.data.iter().map(|v| v.abs()).fold(0.0, f64::max);
    for k in 0..one.data.len() {
        assert!((two.data[k] - 2.0 * one.data[k]).abs() <= 1e-10 * scale);
        assert!((schr.data[k] - one.data[k]).abs() <= 1e-10 * scale);
    }
}

#[test]
fn pairing_is_symmetric() {
    let mesh = DomainMesh::new(3, 7).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let q: Vec<f64> = (0..mesh.node_count()).map(|_| rng.gen_range(0.0..5.0)).collect();
    let g: Vec<f64> = (0..mesh.node_count()).map(|_| rng.gen_range(0.5..2.0)).collect();
    for c in [Coefficient::Schrodinger(q), Coefficient::Conductivity(g)] {
        let dtn = assemble_dtn(&mesh, &c).unwrap();
        let d = dtn.symmetry_defect();
        assert!(d <= 1e-8, "{d}");
    }
}

#[test]
fn matrix_action_is_linear_and_matches_solves() {
    let mesh = DomainMesh::new(2, 9).unwrap();
    let q = mesh.sample(|x| 1.0 + x[0] * x[1]);
    let c = Coefficient::Schrodinger(q);
    let dtn = assemble_dtn(&mesh, &c).unwrap();
    let solver = EllipticSolver::new(&mesh, &c).unwrap();
    let f = mesh.trace(|x| (2.0 * x[0]).sin() + x[1]);
    let g = mesh.trace(|x| x[0] * x[0] - x[1]);
    let (a, b) = (1.7, -0.4);
    let comb: Vec<f64> = f.iter().zip(&g).map(|(x, y)| a * x + b * y).collect();
    let lf = dtn.apply(&f).unwrap();
    let lg = dtn.apply(&g).unwrap();
    let lc = dtn.apply(&comb).unwrap();
    for k in 0..lc.len() {
        assert!((lc[k] - (a * lf[k] + b * lg[k])).abs() <= 1e-12 * (1.0 + lc[k].abs()));
    }
    let direct = solver.apply_dtn(&f, FluxRule::Variational).unwrap();
    for k in 0..lf.len() {
        assert!((lf[k] - direct[k]).abs() <= 1e-9 * (1.0 + direct[k].abs()));
    }
}

#[test]
fn harmonic_flux_converges_at_second_order() {
    // low-degree harmonic polynomials are reproduced exactly by the stencil
    let u = |x: &Vec3| harmonic(2.0, x, 0.3);
    let grad = |x: &Vec3| {
        let e = (2.0 * x[0]).exp();
        [2.0 * e * (2.0 * x[1] + 0.3).cos(), -2.0 * e * (2.0 * x[1] + 0.3).sin(), 0.0]
    };
    let mut errs = Vec::new();
    for m in [17, 33] {
        let mesh = DomainMesh::new(3, m).unwrap();
        let s = EllipticSolver::new(&mesh, &Coefficient::Schrodinger(vec![0.0; mesh.node_count()])).unwrap();
        let g = s.apply_dtn(&mesh.trace(u), FluxRule::Variational).unwrap();
        errs.push(weighted_error(&mesh, &g, &lumped_flux(&mesh, grad)));
    }
    let order = (errs[0] / errs[1]).log2();
    eprintln!("flux errors {errs:?} order {order}");
    assert!(order >= 1.8, "{errs:?}");
}

#[test]
fn singular_potential_is_reported() {
    let mesh = DomainMesh::new(3, 7).unwrap();
    let h = mesh.h();
    let lam = 3.0 * 4.0 * (std::f64::consts::PI * h / 2.0).sin().powi(2) / (h * h);
    let r = EllipticSolver::new(&mesh, &Coefficient::Schrodinger(vec![-lam; mesh.node_count()]));
    assert!(matches!(r, Err(cgolab::Error::Singular(_))));
    // shifted off the eigenvalue the dense path works
    let s = EllipticSolver::new(&mesh, &Coefficient::Schrodinger(vec![-lam - 3.0; mesh.node_count()])).unwrap();
    let u = s.solve(&mesh.trace(|x| x[0])).unwrap();
    assert!(s.relative_residual(&u).unwrap() <= 1e-12);
}

#[test]
fn non_positive_conductivity_is_rejected() {
    let mesh = DomainMesh::new(2, 9).unwrap();
    let mut g = vec![1.0; mesh.node_count()];
    g[40] = 0.0;
    assert!(EllipticSolver::new(&mesh, &Coefficient::Conductivity(g)).is_err());
}

#[test]
fn binary_round_trip() {
    let mesh = DomainMesh::new(2, 7).unwrap();
    let dtn = assemble_dtn(&mesh, &Coefficient::Conductivity(mesh.sample(|x| 1.0 + x[0]))).unwrap();
    let mut buf = Vec::new();
    dtn.write_binary(&mut buf).unwrap();
    let back = DtnMatrix::read_binary(&buf[..]).unwrap();
    assert_eq!(back.kind, DtnKind::Conductivity);
    assert_eq!((back.dim, back.m, back.size), (2, 7, dtn.size));
    assert_eq!(back.data, dtn.data);
    assert!(DtnMatrix::read_binary(&buf[..buf.len() - 3]).is_err());
    assert!(DtnMatrix::read_binary(&b"XXXX"[..]).is_err());
}

fn gamma_grid(seed: u64) -> GridField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c: Vec3 = [rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2)];
    let amp = rng.gen_range(0.2..0.8);
    let width = rng.gen_range(0.4..0.5);
    let spec = GridSpec::new(3, 128, 4.0).unwrap();
    GridField::from_real_fn(spec, move |x| {
        let r2: f64 = (0..3).map(|a| (x[a] - c[a]).powi(2)).sum();
        1.0 + amp * (-r2 / (2.0 * width * width)).exp()
    })
}

#[test]
fn liouville_of_constant_is_zero() {
    let spec = GridSpec::new(3, 16, 2.0).unwrap();
    let g = GridField::from_real_fn(spec, |_| 3.0);
    assert!(liouville(&g).unwrap().sup_norm() <= 1e-12);
}

/// Largest gap to `d + |x|^2` inside `B_1` for `gamma^{1/2} = e^{|x|^2/2}`, tapered to 1 by `|x| = 3`.
fn gaussian_root_gap(spec: GridSpec) -> f64 {
    let d = spec.dim() as f64;
    let g = GridField::from_real_fn(spec, |x| {
        let r2 = x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
        (r2 * smooth_cutoff(r2.sqrt(), 1.0, 3.0)).exp()
    });
    let q = liouville(&g).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..spec.len() {
        let x = spec.point(i);
        let r2 = x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
        if r2 <= 1.0 {
            worst = worst.max((q.values[i].re - (d + r2)).abs());
        }
    }
    worst
}

#[test]
fn liouville_of_gaussian_root() {
    let fine = gaussian_root_gap(GridSpec::new(2, 512, 4.0).unwrap());
    assert!(fine <= 1e-8, "{fine}");
    let coarse = gaussian_root_gap(GridSpec::new(3, 128, 4.0).unwrap());
    assert!(coarse <= 1e-3, "{coarse}");
}

#[test]
fn liouville_forms_agree() {
    for seed in 0..10 {
        let d = liouville_crosscheck(&gamma_grid(seed)).unwrap();
        assert!(d <= 1e-8, "seed {seed}: {d}");
    }
}

#[test]
fn liouville_rejects_non_positive() {
    let spec = GridSpec::new(2, 16, 2.0).unwrap();
    let g = GridField::from_real_fn(spec, |x| x[0]);
    assert!(liouville(&g).is_err());
    assert!(liouville_direct(&g).is_err());
}

#[test]
fn sampling_reproduces_grid_values() {
    let spec = GridSpec::new(3, 16, 1.0).unwrap();
    let f = GridField::from_real_fn(spec, |x| (std::f64::consts::PI * x[0]).sin() + x[1] * x[2]);
    let mesh = DomainMesh::new(3, 9).unwrap();
    let s = sample_grid(&mesh, &f).unwrap();
    for i in 0..mesh.node_count() {
        let x = mesh.point(i);
        let mut j = [0usize; 3];
        for a in 0..3 {
            j[a] = ((x[a] + 1.0) * 8.0).round() as usize % 16;
        }
        let v = f.values[spec.linear_index(j)].re;
        assert!((s[i] - v).abs() <= 1e-12, "{x:?}");
    }
    let small = GridSpec::new(3, 16, 0.5).unwrap();
    assert!(sample_grid(&mesh, &GridField::zeros(small)).is_err());
}

fn bump_potential(mesh: &DomainMesh, amp: f64, c: Vec3) -> Vec<f64> {
    mesh.sample(|x| {
        let r = ((x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2) + (x[2] - c[2]).powi(2)).sqrt();
        amp * bump(r, 0.3)
    })
}

fn harmonic(a: f64, x: &Vec3, phase: f64) -> f64 {
    // e^{a x_0} cos(a x_1 + phase) is harmonic
    (a * x[0]).exp() * (a * x[1] + phase).cos()
}

#[test]
fn identity_with_equal_potentials() {
    let mesh = DomainMesh::new(3, 17).unwrap();
    let q = bump_potential(&mesh, 4.0, [0.5; 3]);
    let f1 = mesh.trace(|x| harmonic(1.3, x, 0.2));
    let f2 = mesh.trace(|x| harmonic(0.7, x, -0.5) + x[2]);
    let r = green_pairing(&mesh, &q, &q, &f1, &f2, FluxRule::Variational).unwrap();
    assert_eq!(r.volume, 0.0);
    assert!(r.boundary.abs() <= 1e-8, "{}", r.boundary);
}

#[test]
fn identity_is_exact_for_the_variational_flux() {
    let mesh = DomainMesh::new(3, 9).unwrap();
    let q1 = bump_potential(&mesh, 6.0, [0.45, 0.5, 0.55]);
    let q2 = bump_potential(&mesh, -3.0, [0.55, 0.5, 0.5]);
    let f1 = mesh.trace(|x| harmonic(1.0, x, 0.0));
    let f2 = mesh.trace(|x| harmonic(2.0, x, 1.0));
    let r = green_pairing(&mesh, &q1, &q2, &f1, &f2, FluxRule::Variational).unwrap();
    assert!(r.difference <= 1e-9 * r.volume.abs(), "{r:?}");
}

#[test]
fn identity_converges_at_second_order() {
    let mut gaps = Vec::new();
    for m in [17, 33] {
        let mesh = DomainMesh::new(3, m).unwrap();
        let q1 = bump_potential(&mesh, 6.0, [0.45, 0.5, 0.55]);
        let q2 = bump_potential(&mesh, -3.0, [0.55, 0.5, 0.5]);
        let f1 = mesh.trace(|x| harmonic(1.0, x, 0.0));
        let f2 = mesh.trace(|x| harmonic(2.0, x, 1.0));
        let r = green_pairing(&mesh, &q1, &q2, &f1, &f2, FluxRule::OneSided).unwrap();
        eprintln!("m {m}: {r:?}");
        gaps.push(r.difference);
    }
    assert!(gaps[0] / gaps[1] >= 3.5, "{gaps:?}");
}

#[test]
fn identity_is_bilinear() {
    let mesh = DomainMesh::new(3, 9).unwrap();
    let q1 = bump_potential(&mesh, 6.0, [0.5; 3]);
    let q2 = vec![0.0; mesh.node_count()];
    let s1 = EllipticSolver::new(&mesh, &Coefficient::Schrodinger(q1.clone())).unwrap();
    let s2 = EllipticSolver::new(&mesh, &Coefficient::Schrodinger(q2.clone())).unwrap();
    let v1 = s1.solve(&mesh.trace(|x| harmonic(1.0, x, 0.0))).unwrap();
    let v2 = s2.solve(&mesh.trace(|x| harmonic(1.5, x, 0.3))).unwrap();
    let base = integral_identity_residual(&mesh, &q1, &q2, &v1, &v2).unwrap();
    let scaled: Vec<f64> = v1.iter().map(|v| 2.5 * v).collect();
    let r = integral_identity_residual(&mesh, &q1, &q2, &scaled, &v2).unwrap();
    assert!((r - 2.5 * base).abs() <= 1e-12 * base.abs());
}

#[test]
fn identity_rejects_non_solutions() {
    let mesh = DomainMesh::new(3, 9).unwrap();
    let q = vec![0.0; mesh.node_count()];
    let v = mesh.sample(|x| x[0] * x[0]);
    assert!(integral_identity_residual(&mesh, &q, &q, &v, &v).is_err());
}

#[test]
fn liouville_round_trip_on_the_mesh() {
    // gamma = 1 near the boundary, so both maps coincide in the continuum
    let spec = GridSpec::new(3, 64, 2.0).unwrap();
    let gamma = GridField::from_real_fn(spec, |x| {
        let r = ((x[0] - 0.5).powi(2) + (x[1] - 0.5).powi(2) + (x[2] - 0.5).powi(2)).sqrt();
        1.0 + 0.6 * bump(r, 0.35)
    });
    let q_grid = liouville(&gamma).unwrap();
    let mut gaps = Vec::new();
    for m in [9, 17] {
        let mesh = DomainMesh::new(3, m).unwrap();
        let g = sample_grid(&mesh, &gamma).unwrap();
        let q = sample_grid(&mesh, &q_grid).unwrap();
        let sc = EllipticSolver::new(&mesh, &Coefficient::Conductivity(g)).unwrap();
        let ss = EllipticSolver::new(&mesh, &Coefficient::Schrodinger(q)).unwrap();
        let f1 = mesh.trace(|x| harmonic(1.0, x, 0.0));
        let f2 = mesh.trace(|x| x[2] * x[2] - x[0] * x[0]);
        let a = mesh.pairing(&sc.apply_dtn(&f1, FluxRule::Variational).unwrap(), &f2);
        let b = mesh.pairing(&ss.apply_dtn(&f1, FluxRule::Variational).unwrap(), &f2);
        eprintln!("m {m}: conductivity {a} schrodinger {b}");
        gaps.push((a - b).abs());
    }
    assert!(gaps[1] <= 0.35 * gaps[0], "{gaps:?}");
}

fn probe_gammas(mesh: &DomainMesh, z: Vec3, diff: f64) -> (Vec<f64>, Vec<f64>) {
    let g2 = mesh.sample(|x| 1.0 + 0.3 * bump(centre_dist(x), 0.45));
    let g1 = mesh.sample(|x| {
        let r = ((x[0] - z[0]).powi(2) + (x[1] - z[1]).powi(2) + (x[2] - z[2]).powi(2)).sqrt();
        1.0 + 0.3 * bump(centre_dist(x), 0.45) + diff * smooth_cutoff(r, 0.35, 0.6)
    });
    (g1, g2)
}

#[test]
fn probe_with_equal_conductivities_is_zero() {
    let mesh = DomainMesh::new(3, 17).unwrap();
    let z = [0.5, 0.5, 0.0];
    let (_, g) = probe_gammas(&mesh, z, 0.0);
    let r = boundary_probe(&mesh, &g, &g, z, 4).unwrap();
    assert!(r.values.iter().all(|v| v.abs() <= 1e-6));
    assert!(r.estimate.abs() <= 1e-6);
    for w in r.distances.windows(2) {
        assert!(w[1] < w[0]);
    }
}

#[test]
fn probe_recovers_the_jump() {
    let z = [0.5, 0.5, 0.0];
    for m in [17, 33] {
        let mesh = DomainMesh::new(3, m).unwrap();
        let (g1, g2) = probe_gammas(&mesh, z, 0.5);
        let r = boundary_probe(&mesh, &g1, &g2, z, 4).unwrap();
        eprintln!("m {m}: {r:?}");
        assert!((r.estimate - 0.5).abs() <= 0.05, "m {m}: {}", r.estimate);
        let swapped = boundary_probe(&mesh, &g2, &g1, z, 4).unwrap();
        for (a, b) in r.values.iter().zip(&swapped.values) {
            assert!((a + b).abs() <= 1e-10 * a.abs().max(1e-300));
        }
    }
}

#[test]
fn probe_sign_follows_the_difference() {
    let mesh = DomainMesh::new(3, 17).unwrap();
    for (z, d) in [([0.5, 0.5, 0.0], -0.3), ([1.0, 0.5, 0.5], 0.2), ([0.5, 0.0, 0.25], 0.4)] {
        let (g1, g2) = probe_gammas(&mesh, z, d);
        let r = boundary_probe(&mesh, &g1, &g2, z, 4).unwrap();
        assert_eq!(r.estimate.signum(), d.signum(), "{z:?}");
    }
}

#[test]
fn probe_rejects_bad_points() {
    let mesh = DomainMesh::new(3, 9).unwrap();
    let g = vec![1.0; mesh.node_count()];
    assert!(boundary_probe(&mesh, &g, &g, [0.5, 0.5, 0.5], 4).is_err());
    assert!(boundary_probe(&mesh, &g, &g, [0.51, 0.5, 0.0], 4).is_err());
    assert!(boundary_probe(&mesh, &g, &g, [0.5, 0.5, 0.0], 1).is_err());
    let flat = DomainMesh::new(2, 9).unwrap();
    let g2 = vec![1.0; flat.node_count()];
    assert!(boundary_probe(&flat, &g2, &g2, [0.5, 0.0, 0.0], 4).is_err());
}
