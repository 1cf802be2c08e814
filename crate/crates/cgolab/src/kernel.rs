//! The multiplier `K^_xi(k) = 1/(-|k|^2 + i xi.k)` for complex `xi` with `xi.xi = 0`.
//!
//! Writing `xi = A + iB` with `A.B = 0` and `|A| = |B|`, the symbol is
//! `-|k|^2 - B.k + i A.k`, so its zero set is the circle
//! `{A.k = 0, |k + B/2| = |B|/2}`: centre `-B/2`, radius `|B|/2`, lying in the plane
//! normal to `A`. In two dimensions the "circle" is a pair of points.

use crate::error::{Error, Result};
use crate::fieldgrid::{GridField, GridSpec, SpectralField};
use crate::vec3::{add, cross, dot, norm, normalized, scale, sub};
use crate::{par, Complex64, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const ORTHO_TOL: f64 = 1e-10;

/// Orthonormal frame `(sigma1, sigma2, sigma3)`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Frame {
    pub sigma1: Vec3,
    pub sigma2: Vec3,
    pub sigma3: Vec3,
}

impl Frame {
    /// `(e1, e2, e3)`.
    pub fn standard() -> Self {
        Self {
            sigma1: [1.0, 0.0, 0.0],
            sigma2: [0.0, 1.0, 0.0],
            sigma3: [0.0, 0.0, 1.0],
        }
    }

    /// A generic (seeded, uniformly random) right-handed frame.
    ///
    /// Axis-aligned frames make part of the characteristic circle coincide with a
    /// lattice axis, which biases lattice scans; scans default to a generic frame.
    pub fn generic(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::random(&mut rng)
    }

    pub fn random<R: Rng>(rng: &mut R) -> Self {
        let s1 = random_unit(rng);
        let s2 = random_orthogonal_unit(rng, &s1);
        Self {
            sigma1: s1,
            sigma2: s2,
            sigma3: cross(&s1, &s2),
        }
    }

    /// A right-handed frame whose third vector is `sigma3`, rotated by `angle`.
    pub fn with_third(sigma3: Vec3, angle: f64) -> Self {
        let s3 = normalized(&sigma3);
        let (u, v) = orthonormal_complement(&s3);
        let s1 = add(&scale(&u, angle.cos()), &scale(&v, angle.sin()));
        let s2 = cross(&s3, &s1);
        Self {
            sigma1: s1,
            sigma2: s2,
            sigma3: s3,
        }
    }
}

/// Uniform point on the unit sphere of R^3.
pub fn random_unit<R: Rng>(rng: &mut R) -> Vec3 {
    loop {
        let v: Vec3 = [
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        ];
        let n = norm(&v);
        if n > 1e-12 {
            return scale(&v, 1.0 / n);
        }
    }
}

/// Uniform unit vector orthogonal to the unit vector `a`.
pub fn random_orthogonal_unit<R: Rng>(rng: &mut R, a: &Vec3) -> Vec3 {
    let (u, v) = orthonormal_complement(a);
    let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    add(&scale(&u, phi.cos()), &scale(&v, phi.sin()))
}

/// A deterministic orthonormal basis of the plane orthogonal to the unit vector `a`.
pub fn orthonormal_complement(a: &Vec3) -> (Vec3, Vec3) {
    let pick = if a[0].abs() < 0.6 {
        [1.0, 0.0, 0.0]
    } else if a[1].abs() < 0.6 {
        [0.0, 1.0, 0.0]
    } else {
        [0.0, 0.0, 1.0]
    };
    let u = normalized(&sub(&pick, &scale(a, dot(&pick, a))));
    let v = cross(a, &u);
    (u, v)
}

/// Construction tag of a [`ComplexFrequency`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum XiVariant {
    Xi1,
    Xi2,
    Raw,
}

/// A complex frequency `xi = re + i im` with `xi.xi = 0`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct ComplexFrequency {
    pub dim: usize,
    pub s: f64,
    pub sigma1: Vec3,
    pub sigma2: Vec3,
    pub sigma3: Option<Vec3>,
    pub variant: XiVariant,
    pub re: Vec3,
    pub im: Vec3,
}

fn check_unit(v: &Vec3, name: &str) -> Result<()> {
    if (norm(v) - 1.0).abs() > ORTHO_TOL {
        return Err(Error::InvalidFrequency(format!("{name} is not a unit vector")));
    }
    Ok(())
}

fn check_orthogonal(a: &Vec3, b: &Vec3, names: &str) -> Result<()> {
    if dot(a, b).abs() > ORTHO_TOL {
        return Err(Error::InvalidFrequency(format!("{names} are not orthogonal")));
    }
    Ok(())
}

fn check_scale(s: f64) -> Result<()> {
    if !(s > 2.0 && s.is_finite()) {
        return Err(Error::InvalidFrequency(format!("scale s must exceed 2, got {s}")));
    }
    Ok(())
}

/// `xi_1 = s sigma2 - i s sigma1` in three dimensions.
pub fn make_xi1(s: f64, sigma1: Vec3, sigma2: Vec3) -> Result<ComplexFrequency> {
    make_xi1_in(3, s, sigma1, sigma2)
}

/// `xi_1 = s sigma2 - i s sigma1` in dimension `dim`.
pub fn make_xi1_in(dim: usize, s: f64, sigma1: Vec3, sigma2: Vec3) -> Result<ComplexFrequency> {
    check_scale(s)?;
    check_unit(&sigma1, "sigma1")?;
    check_unit(&sigma2, "sigma2")?;
    check_orthogonal(&sigma1, &sigma2, "sigma1, sigma2")?;
    if dim == 2 && (sigma1[2] != 0.0 || sigma2[2] != 0.0) {
        return Err(Error::InvalidFrequency("planar frame has a third component".into()));
    }
    Ok(ComplexFrequency {
        dim,
        s,
        sigma1,
        sigma2,
        sigma3: None,
        variant: XiVariant::Xi1,
        re: scale(&sigma2, s),
        im: scale(&sigma1, -s),
    })
}

/// `xi_2 = -s^2 sigma2/sqrt(1+s^2) + s sigma3/sqrt(1+s^2) + i s sigma1`.
pub fn make_xi2(s: f64, sigma1: Vec3, sigma2: Vec3, sigma3: Vec3) -> Result<ComplexFrequency> {
    check_scale(s)?;
    check_unit(&sigma1, "sigma1")?;
    check_unit(&sigma2, "sigma2")?;
    check_unit(&sigma3, "sigma3")?;
    check_orthogonal(&sigma1, &sigma2, "sigma1, sigma2")?;
    check_orthogonal(&sigma1, &sigma3, "sigma1, sigma3")?;
    check_orthogonal(&sigma2, &sigma3, "sigma2, sigma3")?;
    let root = (1.0 + s * s).sqrt();
    let re = add(&scale(&sigma2, -s * s / root), &scale(&sigma3, s / root));
    Ok(ComplexFrequency {
        dim: 3,
        s,
        sigma1,
        sigma2,
        sigma3: Some(sigma3),
        variant: XiVariant::Xi2,
        re,
        im: scale(&sigma1, s),
    })
}

/// A frequency given directly by its real and imaginary parts.
pub fn make_raw(dim: usize, re: Vec3, im: Vec3) -> Result<ComplexFrequency> {
    let xi = ComplexFrequency {
        dim,
        s: norm(&re),
        sigma1: [0.0; 3],
        sigma2: [0.0; 3],
        sigma3: None,
        variant: XiVariant::Raw,
        re,
        im,
    };
    let mag2 = xi.norm_sqr();
    if !(mag2 > 0.0) || xi.dot_self().norm() > 1e-10 * mag2 {
        return Err(Error::InvalidFrequency("raw frequency must satisfy xi.xi = 0".into()));
    }
    Ok(xi)
}

impl ComplexFrequency {
    /// `|xi|^2 = |re|^2 + |im|^2`.
    pub fn norm_sqr(&self) -> f64 {
        dot(&self.re, &self.re) + dot(&self.im, &self.im)
    }

    /// `|xi|`.
    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    /// Bilinear `xi.xi`.
    pub fn dot_self(&self) -> Complex64 {
        Complex64::new(
            dot(&self.re, &self.re) - dot(&self.im, &self.im),
            2.0 * dot(&self.re, &self.im),
        )
    }

    /// Bilinear `xi.k` for real `k`.
    pub fn dot_real(&self, k: &Vec3) -> Complex64 {
        Complex64::new(dot(&self.re, k), dot(&self.im, k))
    }

    /// The symbol `-|k|^2 + i xi.k`.
    pub fn symbol(&self, k: &Vec3) -> Complex64 {
        Complex64::new(-dot(k, k) - dot(&self.im, k), dot(&self.re, k))
    }

    /// `K^_xi(k)`; infinite on the characteristic set.
    pub fn multiplier(&self, k: &Vec3) -> Complex64 {
        self.symbol(k).inv()
    }

    pub fn charset(&self) -> Result<CharSetGeometry> {
        if self.variant == XiVariant::Raw {
            return Err(Error::RawUnsupported);
        }
        let radius = 0.5 * norm(&self.im);
        let center = scale(&self.im, -0.5);
        let plane_normal = normalized(&self.re);
        let e_a = normalized(&scale(&self.im, -1.0));
        let e_b = if self.dim == 3 {
            cross(&plane_normal, &e_a)
        } else {
            [0.0; 3]
        };
        Ok(CharSetGeometry {
            dim: self.dim,
            center,
            radius,
            plane_normal,
            e_a,
            e_b,
        })
    }
}

/// Geometry of `Gamma_xi = {k : -|k|^2 + i xi.k = 0}`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct CharSetGeometry {
    pub dim: usize,
    pub center: Vec3,
    pub radius: f64,
    pub plane_normal: Vec3,
    /// In-plane unit vector from the centre towards the far point `-2 * center`.
    pub e_a: Vec3,
    /// Second in-plane unit vector (zero in two dimensions).
    pub e_b: Vec3,
}

impl CharSetGeometry {
    /// Point of the circle at angle `phi`; `phi = pi` is the origin.
    pub fn point(&self, phi: f64) -> Vec3 {
        let dir = add(&scale(&self.e_a, phi.cos()), &scale(&self.e_b, phi.sin()));
        add(&self.center, &scale(&dir, self.radius))
    }

    /// Euclidean distance from `k` to the set.
    pub fn distance(&self, k: &Vec3) -> f64 {
        let a = dot(&self.plane_normal, k);
        let in_plane = sub(&sub(k, &scale(&self.plane_normal, a)), &self.center);
        let radial = norm(&in_plane) - self.radius;
        (a * a + radial * radial).sqrt()
    }

    /// `count` equally spaced points (two points in two dimensions).
    pub fn sample_points(&self, count: usize) -> Vec<Vec3> {
        if self.dim == 2 {
            return vec![self.point(0.0), self.point(std::f64::consts::PI)];
        }
        (0..count)
            .map(|i| self.point(std::f64::consts::TAU * i as f64 / count as f64))
            .collect()
    }
}

/// Distance from `k` to `Gamma_xi`; raw frequencies are unsupported.
pub fn dist_to_charset(k: &Vec3, xi: &ComplexFrequency) -> Result<f64> {
    Ok(xi.charset()?.distance(k))
}

/// Part of frequency space by distance to `Gamma_xi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum KernelSplit {
    /// `dist <= |k|/|xi|`.
    Near,
    /// `|k|/|xi| < dist <= 4|xi|`.
    Mid,
    /// `dist > 4|xi|`.
    Far,
}

impl KernelSplit {
    pub fn classify(dist: f64, k_norm: f64, xi_norm: f64) -> KernelSplit {
        if dist <= k_norm / xi_norm {
            KernelSplit::Near
        } else if dist > 4.0 * xi_norm {
            KernelSplit::Far
        } else {
            KernelSplit::Mid
        }
    }
}

/// Per-lattice-point split labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitMasks {
    pub parts: Vec<KernelSplit>,
}

impl SplitMasks {
    pub fn indices(&self, part: KernelSplit) -> Vec<usize> {
        self.parts
            .iter()
            .enumerate()
            .filter(|(_, p)| **p == part)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Near/Mid/Far partition of the dual lattice.
pub fn split_masks(xi: &ComplexFrequency, spec: &GridSpec) -> Result<SplitMasks> {
    let geom = xi.charset()?;
    let xn = xi.norm();
    let parts = par::map_range(spec.len(), |i| {
        let k = spec.freq(i);
        KernelSplit::classify(geom.distance(&k), norm(&k), xn)
    });
    Ok(SplitMasks { parts })
}

/// Two-way split: `true` where `dist(k, Gamma_xi) < threshold`.
pub fn two_way_mask(xi: &ComplexFrequency, spec: &GridSpec, threshold: f64) -> Result<Vec<bool>> {
    let geom = xi.charset()?;
    Ok(par::map_range(spec.len(), |i| geom.distance(&spec.freq(i)) < threshold))
}

/// Regularisation bookkeeping of a multiplier.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct MultiplierReport {
    pub count_regularized: usize,
    pub min_abs_denominator: f64,
    pub delta_floor: f64,
}

/// `K^_xi` sampled on the dual lattice; modes with `|symbol| < delta_floor` are zeroed.
#[derive(Debug, Clone)]
pub struct KernelMultiplier {
    pub xi: ComplexFrequency,
    pub spec: GridSpec,
    pub values: Vec<Complex64>,
    pub report: MultiplierReport,
}

/// Default regularisation floor, relative to `|xi|^2`.
pub const DEFAULT_DELTA_REL: f64 = 1e-10;

impl KernelMultiplier {
    pub fn new(xi: &ComplexFrequency, spec: &GridSpec, delta_floor: Option<f64>) -> Self {
        let floor = delta_floor.unwrap_or(DEFAULT_DELTA_REL * xi.norm_sqr());
        let symbols = par::map_range(spec.len(), |i| xi.symbol(&spec.freq(i)));
        let mut count = 0;
        let mut min_abs = f64::INFINITY;
        let values = symbols
            .iter()
            .map(|d| {
                let a = d.norm();
                min_abs = min_abs.min(a);
                if a < floor {
                    count += 1;
                    Complex64::new(0.0, 0.0)
                } else {
                    d.inv()
                }
            })
            .collect();
        Self {
            xi: *xi,
            spec: *spec,
            values,
            report: MultiplierReport {
                count_regularized: count,
                min_abs_denominator: min_abs,
                delta_floor: floor,
            },
        }
    }

    /// Multiply coefficients by the (optionally masked) multiplier.
    pub fn apply_spectral(
        &self,
        f: &SpectralField,
        mask: Option<(&SplitMasks, KernelSplit)>,
    ) -> SpectralField {
        let coeffs = par::map_range(f.coeffs.len(), |i| {
            if let Some((m, part)) = mask {
                if m.parts[i] != part {
                    return Complex64::new(0.0, 0.0);
                }
            }
            f.coeffs[i] * self.values[i]
        });
        SpectralField {
            spec: f.spec,
            coeffs,
        }
    }

    /// Periodic application `f -> K_xi * f` without support checks.
    pub fn apply(&self, f: &GridField, mask: Option<(&SplitMasks, KernelSplit)>) -> GridField {
        self.apply_spectral(&f.to_spectral(), mask).to_field()
    }
}

/// `K_xi * f` for `f` supported in `B_{L/2}`, with an optional split part.
pub fn apply_kernel(
    xi: &ComplexFrequency,
    f: &GridField,
    split: Option<KernelSplit>,
) -> Result<(GridField, MultiplierReport)> {
    let limit = f.spec.max_ball_radius();
    let support = f.support_radius();
    if support > limit * (1.0 + 1e-12) {
        return Err(Error::SupportTooLarge { support, limit });
    }
    let k = KernelMultiplier::new(xi, &f.spec, None);
    let w = match split {
        Some(part) => {
            let masks = split_masks(xi, &f.spec)?;
            k.apply(f, Some((&masks, part)))
        }
        None => k.apply(f, None),
    };
    Ok((w, k.report))
}

/// Spectral `Delta W + xi.grad W`.
pub fn forward_operator(xi: &ComplexFrequency, w: &GridField) -> GridField {
    let mut s = w.to_spectral();
    let spec = s.spec;
    par::for_each_mut(&mut s.coeffs, |i, c| *c *= xi.symbol(&spec.freq(i)));
    s.to_field()
}
