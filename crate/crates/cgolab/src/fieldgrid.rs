//! Periodic-box discretisation of compactly supported functions on R^d.
//!
//! A [`GridSpec`] samples the box `[-L, L)^d` at `x_j = -L + j h`, `h = 2L/n`.
//! Transforms are continuum-normalised, `f^(k) = h^d sum_x f(x) e^{-i k.x}`, on the
//! dual lattice `k = (pi/L) m`, `m in {-n/2, .., n/2 - 1}^d`, stored in the same
//! centred row-major order as the samples. With this convention Parseval reads
//! `h^d sum |f|^2 = (2L)^{-d} sum |f^|^2`.

use crate::error::{Error, Result};
use crate::{par, Complex64, Vec3};
use rustfft::{Fft, FftPlanner};
use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

/// Sampling of the periodic box `[-L, L)^dim` with `n` points per axis.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct GridSpec {
    dim: usize,
    n: usize,
    half_length: f64,
}

impl GridSpec {
    pub fn new(dim: usize, n: usize, half_length: f64) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::InvalidGrid(format!("dim must be 2 or 3, got {dim}")));
        }
        if n < 8 || !n.is_power_of_two() {
            return Err(Error::InvalidGrid(format!(
                "n must be a power of two >= 8, got {n}"
            )));
        }
        if !(half_length > 0.0 && half_length.is_finite()) {
            return Err(Error::InvalidGrid(format!(
                "half-length must be positive, got {half_length}"
            )));
        }
        Ok(Self {
            dim,
            n,
            half_length,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn half_length(&self) -> f64 {
        self.half_length
    }

    pub fn h(&self) -> f64 {
        2.0 * self.half_length / self.n as f64
    }

    /// Number of lattice points, `n^dim`.
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Spacing of the dual lattice, `pi / L`.
    pub fn freq_step(&self) -> f64 {
        PI / self.half_length
    }

    /// Weight turning a lattice sum into `(2 pi)^{-d} * integral dk`, i.e. `(2L)^{-d}`.
    pub fn lattice_weight(&self) -> f64 {
        (2.0 * self.half_length).powi(-(self.dim as i32))
    }

    pub fn cell_volume(&self) -> f64 {
        self.h().powi(self.dim as i32)
    }

    /// Largest ball radius accepted by ball norms and restrictions.
    pub fn max_ball_radius(&self) -> f64 {
        0.5 * self.half_length
    }

    pub fn multi_index(&self, idx: usize) -> [usize; 3] {
        let n = self.n;
        if self.dim == 3 {
            [idx / (n * n), (idx / n) % n, idx % n]
        } else {
            [idx / n, idx % n, 0]
        }
    }

    pub fn linear_index(&self, j: [usize; 3]) -> usize {
        if self.dim == 3 {
            (j[0] * self.n + j[1]) * self.n + j[2]
        } else {
            j[0] * self.n + j[1]
        }
    }

    /// Spatial coordinates of sample `idx`.
    pub fn point(&self, idx: usize) -> Vec3 {
        let j = self.multi_index(idx);
        let h = self.h();
        let mut x = [0.0; 3];
        for a in 0..self.dim {
            x[a] = -self.half_length + j[a] as f64 * h;
        }
        x
    }

    /// Integer dual-lattice coordinates `m` of coefficient `idx`.
    pub fn freq_int(&self, idx: usize) -> [i64; 3] {
        let j = self.multi_index(idx);
        let half = (self.n / 2) as i64;
        let mut m = [0i64; 3];
        for a in 0..self.dim {
            m[a] = j[a] as i64 - half;
        }
        m
    }

    /// Frequency vector of coefficient `idx`.
    pub fn freq(&self, idx: usize) -> Vec3 {
        let m = self.freq_int(idx);
        let dk = self.freq_step();
        [m[0] as f64 * dk, m[1] as f64 * dk, m[2] as f64 * dk]
    }

    /// Coefficient index of integer frequency `m`, if it lies on the lattice.
    pub fn index_of_freq_int(&self, m: [i64; 3]) -> Option<usize> {
        let half = (self.n / 2) as i64;
        let mut j = [0usize; 3];
        for a in 0..self.dim {
            let v = m[a] + half;
            if v < 0 || v >= self.n as i64 {
                return None;
            }
            j[a] = v as usize;
        }
        if self.dim == 2 && m[2] != 0 {
            return None;
        }
        Some(self.linear_index(j))
    }

    fn check_ball(&self, r: f64) -> Result<()> {
        let limit = self.max_ball_radius();
        if !(r > 0.0) || r > limit * (1.0 + 1e-12) {
            return Err(Error::BallEscapesBox {
                radius: r,
                half_length: self.half_length,
                limit,
            });
        }
        Ok(())
    }
}

/// Norm selector for [`GridField::norm`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NormKind {
    /// `L^2(B_r)` by midpoint quadrature.
    L2Ball(f64),
    /// `H^k(B_r)`: spectral derivatives of order `<= k`, then restriction.
    HkBall(u32, f64),
    /// Periodic analogue of `H^{-1}`.
    HMinus1,
    /// Periodic analogue of `H^{-1/2}`.
    HMinusHalf,
    /// `L^p` over the whole box.
    Lp(f64),
    /// `L^p(B_r)`.
    LpBall(f64, f64),
    /// Spectral `H^k` over the box.
    HkGlobal(u32),
}

/// Complex samples on the lattice of a [`GridSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    pub spec: GridSpec,
    pub values: Vec<Complex64>,
}

/// Continuum-normalised Fourier coefficients on the dual lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    pub spec: GridSpec,
    pub coeffs: Vec<Complex64>,
}

impl GridField {
    pub fn zeros(spec: GridSpec) -> Self {
        Self {
            spec,
            values: vec![Complex64::new(0.0, 0.0); spec.len()],
        }
    }

    pub fn from_values(spec: GridSpec, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != spec.len() {
            return Err(Error::InvalidGrid(format!(
                "expected {} values, got {}",
                spec.len(),
                values.len()
            )));
        }
        Ok(Self { spec, values })
    }

    pub fn from_fn<F>(spec: GridSpec, f: F) -> Self
    where
        F: Fn(&Vec3) -> Complex64 + Sync + Send,
    {
        let values = par::map_range(spec.len(), |i| f(&spec.point(i)));
        Self { spec, values }
    }

    pub fn from_real_fn<F>(spec: GridSpec, f: F) -> Self
    where
        F: Fn(&Vec3) -> f64 + Sync + Send,
    {
        Self::from_fn(spec, |x| Complex64::new(f(x), 0.0))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn check_same(&self, other: &GridField) -> Result<()> {
        if self.spec != other.spec {
            return Err(Error::GridMismatch);
        }
        Ok(())
    }

    pub fn map<F>(&self, f: F) -> GridField
    where
        F: Fn(Complex64) -> Complex64 + Sync + Send,
    {
        GridField {
            spec: self.spec,
            values: par::map(&self.values, |v| f(*v)),
        }
    }

    pub fn zip_with<F>(&self, other: &GridField, f: F) -> Result<GridField>
    where
        F: Fn(Complex64, Complex64) -> Complex64 + Sync + Send,
    {
        self.check_same(other)?;
        let values = par::map_range(self.len(), |i| f(self.values[i], other.values[i]));
        Ok(GridField {
            spec: self.spec,
            values,
        })
    }

    pub fn scale(&self, c: Complex64) -> GridField {
        self.map(|v| v * c)
    }

    pub fn add(&self, other: &GridField) -> Result<GridField> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &GridField) -> Result<GridField> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &GridField) -> Result<GridField> {
        self.zip_with(other, |a, b| a * b)
    }

    pub fn to_spectral(&self) -> SpectralField {
        let mut data = self.values.clone();
        transform(&mut data, &self.spec, false);
        SpectralField {
            spec: self.spec,
            coeffs: data,
        }
    }

    /// Largest `|x|` over samples with nonzero value (0 for the zero field).
    pub fn support_radius(&self) -> f64 {
        let radii = par::map_range(self.len(), |i| {
            if self.values[i] != Complex64::new(0.0, 0.0) {
                crate::vec3::norm(&self.spec.point(i))
            } else {
                0.0
            }
        });
        radii.into_iter().fold(0.0, f64::max)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// `(h^d sum |f|^p)^{1/p}` for any `p >= 1`, optionally restricted to `B_r`.
    pub fn lp_norm_unchecked(&self, p: f64, ball: Option<f64>) -> f64 {
        let spec = self.spec;
        let terms = par::map_range(self.len(), |i| {
            if let Some(r) = ball {
                if crate::vec3::norm(&spec.point(i)) > r {
                    return 0.0;
                }
            }
            self.values[i].norm().powf(p)
        });
        (spec.cell_volume() * par::pairwise_sum(&terms)).powf(1.0 / p)
    }

    fn l2_ball_sq(&self, r: f64) -> f64 {
        let spec = self.spec;
        let terms = par::map_range(self.len(), |i| {
            if crate::vec3::norm(&spec.point(i)) > r {
                0.0
            } else {
                self.values[i].norm_sqr()
            }
        });
        spec.cell_volume() * par::pairwise_sum(&terms)
    }

    /// Evaluate a norm; ball norms reject radii larger than `L/2`.
    pub fn norm(&self, kind: NormKind) -> Result<f64> {
        let spec = self.spec;
        match kind {
            NormKind::L2Ball(r) => {
                spec.check_ball(r)?;
                Ok(self.l2_ball_sq(r).sqrt())
            }
            NormKind::HkBall(k, r) => {
                spec.check_ball(r)?;
                check_order(k)?;
                let spectral = self.to_spectral();
                let mut total = 0.0;
                for alpha in multi_indices(spec.dim, k) {
                    let d = spectral.derivative(alpha).to_field();
                    total += d.l2_ball_sq(r);
                }
                Ok(total.sqrt())
            }
            NormKind::HMinus1 => Ok(self.to_spectral().sobolev_norm(-1.0)),
            NormKind::HMinusHalf => Ok(self.to_spectral().sobolev_norm(-0.5)),
            NormKind::HkGlobal(k) => {
                check_order(k)?;
                Ok(self.to_spectral().sobolev_norm(k as f64))
            }
            NormKind::Lp(p) => {
                check_exponent(p)?;
                Ok(self.lp_norm_unchecked(p, None))
            }
            NormKind::LpBall(p, r) => {
                check_exponent(p)?;
                spec.check_ball(r)?;
                Ok(self.lp_norm_unchecked(p, Some(r)))
            }
        }
    }

    /// Zero the samples outside the closed ball of radius `r`.
    pub fn ball_restrict(&self, r: f64) -> Result<GridField> {
        self.spec.check_ball(r)?;
        let spec = self.spec;
        let values = par::map_range(self.len(), |i| {
            if crate::vec3::norm(&spec.point(i)) > r {
                Complex64::new(0.0, 0.0)
            } else {
                self.values[i]
            }
        });
        Ok(GridField { spec, values })
    }

    /// Spectral partial derivative `d/dx_axis`.
    pub fn partial(&self, axis: usize) -> GridField {
        let mut alpha = [0u32; 3];
        alpha[axis] = 1;
        self.to_spectral().derivative(alpha).to_field()
    }

    /// Spectral gradient, one field per axis.
    pub fn gradient(&self) -> Vec<GridField> {
        let spectral = self.to_spectral();
        (0..self.spec.dim)
            .map(|a| {
                let mut alpha = [0u32; 3];
                alpha[a] = 1;
                spectral.derivative(alpha).to_field()
            })
            .collect()
    }

    /// Spectral Laplacian.
    pub fn laplacian(&self) -> GridField {
        let mut s = self.to_spectral();
        let spec = s.spec;
        par::for_each_mut(&mut s.coeffs, |i, c| {
            let k = spec.freq(i);
            *c *= -crate::vec3::dot(&k, &k);
        });
        s.to_field()
    }

    /// Spectral divergence of a vector field.
    pub fn divergence(components: &[GridField]) -> Result<GridField> {
        let first = components
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty vector field".into()))?;
        let spec = first.spec;
        if components.len() != spec.dim {
            return Err(Error::InvalidArgument(format!(
                "vector field has {} components in dimension {}",
                components.len(),
                spec.dim
            )));
        }
        let mut acc = SpectralField::zeros(spec);
        for (a, g) in components.iter().enumerate() {
            if g.spec != spec {
                return Err(Error::GridMismatch);
            }
            let mut alpha = [0u32; 3];
            alpha[a] = 1;
            let d = g.to_spectral().derivative(alpha);
            for (x, y) in acc.coeffs.iter_mut().zip(&d.coeffs) {
                *x += y;
            }
        }
        Ok(acc.to_field())
    }

    /// Midpoint-rule integral over the box, optionally restricted to `B_r`.
    pub fn integrate(&self, ball: Option<f64>) -> Complex64 {
        let spec = self.spec;
        let re = par::map_range(self.len(), |i| {
            if let Some(r) = ball {
                if crate::vec3::norm(&spec.point(i)) > r {
                    return 0.0;
                }
            }
            self.values[i].re
        });
        let im = par::map_range(self.len(), |i| {
            if let Some(r) = ball {
                if crate::vec3::norm(&spec.point(i)) > r {
                    return 0.0;
                }
            }
            self.values[i].im
        });
        Complex64::new(par::pairwise_sum(&re), par::pairwise_sum(&im)) * spec.cell_volume()
    }

    /// Write the binary format: 24-byte header then little-endian `f32` pairs.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&(self.spec.dim as i32).to_le_bytes())?;
        w.write_all(&(self.spec.n as i32).to_le_bytes())?;
        w.write_all(&self.spec.half_length.to_le_bytes())?;
        w.write_all(&0.0f64.to_le_bytes())?;
        let mut buf = Vec::with_capacity(8 * self.len());
        for v in &self.values {
            buf.extend_from_slice(&(v.re as f32).to_le_bytes());
            buf.extend_from_slice(&(v.im as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<GridField> {
        let mut header = [0u8; 24];
        r.read_exact(&mut header)
            .map_err(|_| Error::Format("header: file shorter than 24 bytes".into()))?;
        let dim = i32::from_le_bytes(header[0..4].try_into().unwrap());
        let n = i32::from_le_bytes(header[4..8].try_into().unwrap());
        let half_length = f64::from_le_bytes(header[8..16].try_into().unwrap());
        let reserved = f64::from_le_bytes(header[16..24].try_into().unwrap());
        if dim != 2 && dim != 3 {
            return Err(Error::Format(format!("header field dim: invalid value {dim}")));
        }
        if n < 8 || !(n as u32).is_power_of_two() {
            return Err(Error::Format(format!("header field n: invalid value {n}")));
        }
        if !(half_length > 0.0 && half_length.is_finite()) {
            return Err(Error::Format(format!(
                "header field L: invalid value {half_length}"
            )));
        }
        if !reserved.is_finite() {
            return Err(Error::Format("header field reserved: not finite".into()));
        }
        let spec = GridSpec::new(dim as usize, n as usize, half_length)?;
        let mut body = Vec::new();
        r.read_to_end(&mut body)?;
        if body.len() != 8 * spec.len() {
            return Err(Error::Format(format!(
                "body: expected {} bytes for n={n}, dim={dim}, found {}",
                8 * spec.len(),
                body.len()
            )));
        }
        let values = body
            .chunks_exact(8)
            .map(|c| {
                let re = f32::from_le_bytes(c[0..4].try_into().unwrap());
                let im = f32::from_le_bytes(c[4..8].try_into().unwrap());
                Complex64::new(re as f64, im as f64)
            })
            .collect();
        Ok(GridField { spec, values })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_binary(std::io::BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<GridField> {
        let f = std::fs::File::open(path)?;
        Self::read_binary(std::io::BufReader::new(f))
    }

    /// CSV export with columns `x, y[, z], re, im`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let axes = ["x", "y", "z"];
        let mut header: Vec<&str> = axes[..self.spec.dim].to_vec();
        header.extend(["re", "im"]);
        out.write_record(&header)?;
        for (i, v) in self.values.iter().enumerate() {
            let x = self.spec.point(i);
            let mut row: Vec<String> = x[..self.spec.dim].iter().map(|c| fmt17(*c)).collect();
            row.push(fmt17(v.re));
            row.push(fmt17(v.im));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

impl SpectralField {
    pub fn zeros(spec: GridSpec) -> Self {
        Self {
            spec,
            coeffs: vec![Complex64::new(0.0, 0.0); spec.len()],
        }
    }

    pub fn from_fn<F>(spec: GridSpec, f: F) -> Self
    where
        F: Fn(&Vec3) -> Complex64 + Sync + Send,
    {
        let coeffs = par::map_range(spec.len(), |i| f(&spec.freq(i)));
        Self { spec, coeffs }
    }

    pub fn to_field(&self) -> GridField {
        let mut data = self.coeffs.clone();
        transform(&mut data, &self.spec, true);
        GridField {
            spec: self.spec,
            values: data,
        }
    }

    /// Multiply by `prod_a (i k_a)^{alpha_a}`.
    pub fn derivative(&self, alpha: [u32; 3]) -> SpectralField {
        let spec = self.spec;
        let coeffs = par::map_range(spec.len(), |i| {
            let k = spec.freq(i);
            let mut factor = Complex64::new(1.0, 0.0);
            for a in 0..spec.dim {
                for _ in 0..alpha[a] {
                    factor *= Complex64::new(0.0, k[a]);
                }
            }
            self.coeffs[i] * factor
        });
        SpectralField { spec, coeffs }
    }

    /// `((2L)^{-d} sum (1+|k|^2)^s |f^(k)|^2)^{1/2}`.
    pub fn sobolev_norm(&self, s: f64) -> f64 {
        let spec = self.spec;
        let terms = par::map_range(spec.len(), |i| {
            let k = spec.freq(i);
            (1.0 + crate::vec3::dot(&k, &k)).powf(s) * self.coeffs[i].norm_sqr()
        });
        (spec.lattice_weight() * par::pairwise_sum(&terms)).sqrt()
    }
}

/// 17 significant digits, the round-trip format for `f64`.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

fn check_order(k: u32) -> Result<()> {
    if k > 2 {
        return Err(Error::InvalidNorm(format!("order k must be 0, 1 or 2, got {k}")));
    }
    Ok(())
}

fn check_exponent(p: f64) -> Result<()> {
    if !(p > 1.0 && p.is_finite()) {
        return Err(Error::InvalidNorm(format!("exponent p must lie in (1, inf), got {p}")));
    }
    Ok(())
}

/// All multi-indices `alpha` with `|alpha| <= k` in dimension `dim`.
pub fn multi_indices(dim: usize, k: u32) -> Vec<[u32; 3]> {
    let mut out = Vec::new();
    for a in 0..=k {
        for b in 0..=k {
            for c in 0..=k {
                let alpha = [a, b, if dim == 3 { c } else { 0 }];
                if dim == 2 && c > 0 {
                    continue;
                }
                if alpha.iter().sum::<u32>() <= k {
                    out.push(alpha);
                }
            }
        }
    }
    out
}

/// Smooth radial cutoff: 1 for `r <= r_in`, 0 for `r >= r_out`, `C^inf` between.
pub fn smooth_cutoff(r: f64, r_in: f64, r_out: f64) -> f64 {
    if r <= r_in {
        return 1.0;
    }
    if r >= r_out {
        return 0.0;
    }
    let t = (r - r_in) / (r_out - r_in);
    let a = (-1.0 / (1.0 - t)).exp();
    let b = (-1.0 / t).exp();
    a / (a + b)
}

/// Standard bump `exp(1 - 1/(1 - r^2/R^2))` supported in `B_R`, equal to 1 at 0.
pub fn bump(r: f64, radius: f64) -> f64 {
    let t = r / radius;
    if t >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - t * t)).exp()
    }
}

/// In-place continuum-normalised transform (`inverse = false`) or its inverse.
fn transform(data: &mut [Complex64], spec: &GridSpec, inverse: bool) {
    let n = spec.n;
    let dim = spec.dim;
    // Shifting the sample origin to -L and the frequency origin to -n/2 turns into
    // a checkerboard sign on both sides of a plain FFT (n/2 is even).
    let scale = if inverse {
        1.0 / (2.0 * spec.half_length).powi(dim as i32)
    } else {
        spec.cell_volume()
    };
    par::for_each_mut(data, |i, v| {
        let j = spec.multi_index(i);
        if (j[0] + j[1] + j[2]) % 2 == 1 {
            *v = -*v;
        }
    });
    let mut planner = FftPlanner::new();
    let fft = if inverse {
        planner.plan_fft_inverse(n)
    } else {
        planner.plan_fft_forward(n)
    };
    for axis in 0..dim {
        fft_axis(data, spec, axis, &fft);
    }
    par::for_each_mut(data, |i, v| {
        let j = spec.multi_index(i);
        let sign = if (j[0] + j[1] + j[2]) % 2 == 1 { -scale } else { scale };
        *v *= sign;
    });
}

fn fft_axis(data: &mut [Complex64], spec: &GridSpec, axis: usize, fft: &Arc<dyn Fft<f64>>) {
    let n = spec.n;
    let stride = n.pow((spec.dim - 1 - axis) as u32);
    let lines = data.len() / n;
    const BATCH: usize = 64;
    if stride == 1 {
        par::for_each_chunk_mut(data, n * BATCH, |_, chunk| {
            let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
            fft.process_with_scratch(chunk, &mut scratch);
        });
        return;
    }
    // Gather lines along `axis` into contiguous rows, transform, scatter back.
    let mut buf = vec![Complex64::new(0.0, 0.0); data.len()];
    {
        let src: &[Complex64] = data;
        par::for_each_chunk_mut(&mut buf, n, |line, row| {
            let outer = line / stride;
            let inner = line % stride;
            let base = outer * n * stride + inner;
            for (j, x) in row.iter_mut().enumerate() {
                *x = src[base + j * stride];
            }
        });
    }
    par::for_each_chunk_mut(&mut buf, n * BATCH, |_, chunk| {
        let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
        fft.process_with_scratch(chunk, &mut scratch);
    });
    let rows: &[Complex64] = &buf;
    par::for_each_chunk_mut(data, n * stride, |outer, block| {
        for inner in 0..stride {
            let line = outer * stride + inner;
            let row = &rows[line * n..(line + 1) * n];
            for (j, x) in row.iter().enumerate() {
                block[j * stride + inner] = *x;
            }
        }
    });
    debug_assert_eq!(lines * n, data.len());
}
