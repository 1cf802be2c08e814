//! Finite-difference Dirichlet-to-Neumann maps on the unit box `(0,1)^d`.
//!
//! The mesh has `m` nodes per axis including both boundary layers, so `h = 1/(m-1)`.
//! Interior rows use the standard `2d+1`-point stencil. Boundary fluxes come from
//! the discrete energy
//!
//! `a(u, v) = sum_links c_l gamma_l (u_i - u_j)(v_i - v_j) + sum_nodes w_i q_i u_i v_i`
//!
//! with trapezoidal link and node weights: the flux at boundary node `b` is
//! `(A u)_b / W_b`, where `W_b` is the lumped boundary mass. This half-cell balance
//! is second-order accurate, and `W * Lambda` is the Schur complement of a symmetric
//! matrix, so the pairing `<f, Lambda g>_W` is symmetric to solver precision. The
//! plain one-sided rule `(3u_0 - 4u_1 + u_2) / 2h` is available as [`FluxRule::OneSided`].
//!
//! Interior systems are solved by conjugate gradients preconditioned with a fast
//! sine transform; small indefinite Schrodinger systems fall back to a dense LU.

use crate::fieldgrid::GridField;
use crate::{par, Complex64, Error, Result, Vec3};
use nalgebra::DMatrix;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::sync::Arc;

/// Relative residual target of the interior solves.
pub const SOLVER_TOL: f64 = 1e-12;
/// Interior systems up to this size may use the dense fallback.
pub const DENSE_LIMIT: usize = 1000;
/// Relative smallest-singular-value threshold of the dense fallback.
pub const SINGULAR_TOL: f64 = 1e-10;
const MAX_CG: usize = 5000;
const MAGIC: &[u8; 4] = b"CGOD";

/// Uniform mesh of the unit box.
#[derive(Debug, Clone)]
pub struct DomainMesh {
    dim: usize,
    m: usize,
    boundary: Vec<usize>,
    slot: Vec<Option<usize>>,
    weights: Vec<f64>,
    normals: Vec<Vec3>,
}

impl DomainMesh {
    /// `m` nodes per axis (boundary included), `dim` 2 or 3.
    pub fn new(dim: usize, m: usize) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::InvalidGrid(format!("mesh dimension {dim} (2 or 3 allowed)")));
        }
        if m < 5 {
            return Err(Error::InvalidGrid(format!("m = {m}; at least 5 nodes per axis")));
        }
        let total = m.pow(dim as u32);
        let mut mesh = Self {
            dim,
            m,
            boundary: Vec::new(),
            slot: vec![None; total],
            weights: Vec::new(),
            normals: Vec::new(),
        };
        for idx in 0..total {
            let j = mesh.multi_index(idx);
            if !mesh.on_boundary(&j) {
                continue;
            }
            let mut w = 0.0;
            let mut nrm = [0.0; 3];
            for (axis, side) in mesh.faces(&j) {
                w += mesh.face_weight(&j, axis);
                nrm[axis] += side;
            }
            mesh.slot[idx] = Some(mesh.boundary.len());
            mesh.boundary.push(idx);
            mesh.weights.push(w);
            mesh.normals.push(crate::vec3::normalized(&nrm));
        }
        Ok(mesh)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn h(&self) -> f64 {
        1.0 / (self.m - 1) as f64
    }

    pub fn node_count(&self) -> usize {
        self.slot.len()
    }

    /// Interior nodes per axis.
    pub fn interior_per_axis(&self) -> usize {
        self.m - 2
    }

    pub fn interior_count(&self) -> usize {
        self.interior_per_axis().pow(self.dim as u32)
    }

    pub fn boundary_count(&self) -> usize {
        self.boundary.len()
    }

    /// Node indices of the boundary, in increasing order.
    pub fn boundary_nodes(&self) -> &[usize] {
        &self.boundary
    }

    /// Position of node `idx` in the boundary list.
    pub fn boundary_slot(&self, idx: usize) -> Option<usize> {
        self.slot[idx]
    }

    /// Lumped boundary mass per boundary node.
    pub fn boundary_weights(&self) -> &[f64] {
        &self.weights
    }

    /// Unit outward normal per boundary node (face normals averaged on edges and corners).
    pub fn normals(&self) -> &[Vec3] {
        &self.normals
    }

    pub fn multi_index(&self, idx: usize) -> [usize; 3] {
        let m = self.m;
        if self.dim == 3 {
            [idx / (m * m), (idx / m) % m, idx % m]
        } else {
            [idx / m, idx % m, 0]
        }
    }

    pub fn linear_index(&self, j: [usize; 3]) -> usize {
        if self.dim == 3 {
            (j[0] * self.m + j[1]) * self.m + j[2]
        } else {
            j[0] * self.m + j[1]
        }
    }

    pub fn point(&self, idx: usize) -> Vec3 {
        let j = self.multi_index(idx);
        let h = self.h();
        let mut x = [0.0; 3];
        for a in 0..self.dim {
            x[a] = j[a] as f64 * h;
        }
        x
    }

    fn on_edge(&self, c: usize) -> bool {
        c == 0 || c == self.m - 1
    }

    fn on_boundary(&self, j: &[usize; 3]) -> bool {
        (0..self.dim).any(|a| self.on_edge(j[a]))
    }

    /// Faces through node `j` as `(axis, outward sign)`.
    fn faces(&self, j: &[usize; 3]) -> Vec<(usize, f64)> {
        (0..self.dim)
            .filter(|&a| self.on_edge(j[a]))
            .map(|a| (a, if j[a] == 0 { -1.0 } else { 1.0 }))
            .collect()
    }

    /// Trapezoidal weight of node `j` on the face normal to `axis`.
    fn face_weight(&self, j: &[usize; 3], axis: usize) -> f64 {
        let mut w = self.h().powi(self.dim as i32 - 1);
        for b in 0..self.dim {
            if b != axis && self.on_edge(j[b]) {
                w *= 0.5;
            }
        }
        w
    }

    /// Trapezoidal volume weight of node `idx`.
    pub fn node_weight(&self, idx: usize) -> f64 {
        let j = self.multi_index(idx);
        let mut w = self.h().powi(self.dim as i32);
        for a in 0..self.dim {
            if self.on_edge(j[a]) {
                w *= 0.5;
            }
        }
        w
    }

    /// Geometric weight of the link from `j` along `axis` (trapezoidal in the other axes).
    fn link_weight(&self, j: &[usize; 3], axis: usize) -> f64 {
        let mut w = self.h().powi(self.dim as i32 - 2);
        for b in 0..self.dim {
            if b != axis && self.on_edge(j[b]) {
                w *= 0.5;
            }
        }
        w
    }

    /// Node values of `f`.
    pub fn sample<F: Fn(&Vec3) -> f64 + Sync + Send>(&self, f: F) -> Vec<f64> {
        par::map_range(self.node_count(), |i| f(&self.point(i)))
    }

    /// Boundary values of `f`, in boundary order.
    pub fn trace<F: Fn(&Vec3) -> f64>(&self, f: F) -> Vec<f64> {
        self.boundary.iter().map(|&i| f(&self.point(i))).collect()
    }

    /// Restriction of node values to the boundary.
    pub fn restrict(&self, u: &[f64]) -> Vec<f64> {
        self.boundary.iter().map(|&i| u[i]).collect()
    }

    /// `<f, g>_W = sum_b W_b f_b g_b`.
    pub fn pairing(&self, f: &[f64], g: &[f64]) -> f64 {
        let terms: Vec<f64> = (0..self.boundary.len())
            .map(|b| self.weights[b] * f[b] * g[b])
            .collect();
        par::pairwise_sum(&terms)
    }

    /// Trapezoidal volume integral of node values.
    pub fn integrate(&self, u: &[f64]) -> f64 {
        par::sum_range(self.node_count(), |i| self.node_weight(i) * u[i])
    }

    /// Boundary slot of the node at `z`.
    pub fn find_boundary_node(&self, z: &Vec3) -> Result<usize> {
        let h = self.h();
        let mut j = [0usize; 3];
        for a in 0..self.dim {
            let t = z[a] / h;
            let r = t.round();
            if (t - r).abs() > 1e-9 || r < 0.0 || r > (self.m - 1) as f64 {
                return Err(Error::InvalidArgument(format!("{z:?} is not a mesh node")));
            }
            j[a] = r as usize;
        }
        if self.dim == 2 && z[2] != 0.0 {
            return Err(Error::InvalidArgument(format!("{z:?} is not a mesh node")));
        }
        self.slot[self.linear_index(j)]
            .ok_or_else(|| Error::InvalidArgument(format!("{z:?} is not a boundary node")))
    }

    fn check_len(&self, u: &[f64], what: &str) -> Result<()> {
        if u.len() != self.node_count() {
            return Err(Error::InvalidArgument(format!(
                "{what}: {} values for {} nodes",
                u.len(),
                self.node_count()
            )));
        }
        Ok(())
    }

    fn check_boundary_len(&self, f: &[f64], what: &str) -> Result<()> {
        if f.len() != self.boundary_count() {
            return Err(Error::InvalidArgument(format!(
                "{what}: {} values for {} boundary nodes",
                f.len(),
                self.boundary_count()
            )));
        }
        Ok(())
    }

    /// Neighbour of `j` along `axis` in direction `dir`, if inside the mesh.
    fn neighbour(&self, j: &[usize; 3], axis: usize, dir: isize) -> Option<[usize; 3]> {
        let c = j[axis] as isize + dir;
        if c < 0 || c >= self.m as isize {
            return None;
        }
        let mut n = *j;
        n[axis] = c as usize;
        Some(n)
    }
}

/// Which equation a DtN map belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DtnKind {
    /// `Delta v - q v = 0`, flux `dv/deta`.
    Schrodinger,
    /// `div(gamma grad u) = 0`, flux `gamma du/deta`.
    Conductivity,
}

/// Coefficient node values over the whole mesh.
#[derive(Debug, Clone)]
pub enum Coefficient {
    Schrodinger(Vec<f64>),
    Conductivity(Vec<f64>),
}

impl Coefficient {
    pub fn kind(&self) -> DtnKind {
        match self {
            Coefficient::Schrodinger(_) => DtnKind::Schrodinger,
            Coefficient::Conductivity(_) => DtnKind::Conductivity,
        }
    }
}

/// Boundary flux formula.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum FluxRule {
    /// Half-cell energy balance; symmetric pairing.
    #[default]
    Variational,
    /// `(3u_0 - 4u_1 + u_2) / 2h` along each face normal, lumped over faces.
    OneSided,
}

/// Discrete sine transform preconditioner `D (-Delta_h + c)^{-1} D`.
struct SinePreconditioner {
    n: usize,
    dim: usize,
    fft: Arc<dyn Fft<f64>>,
    eig: Vec<f64>,
    shift: f64,
    scale: Vec<f64>,
}

impl SinePreconditioner {
    fn new(n: usize, dim: usize, h: f64, shift: f64, scale: Vec<f64>) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(2 * (n + 1));
        let eig = (1..=n)
            .map(|k| {
                let s = (std::f64::consts::PI * k as f64 * h / 2.0).sin();
                4.0 * s * s / (h * h)
            })
            .collect();
        Self {
            n,
            dim,
            fft,
            eig,
            shift,
            scale,
        }
    }

    /// Unnormalised DST-I along `axis` of an `n^dim` array.
    fn dst_axis(&self, data: &mut [f64], axis: usize) {
        let n = self.n;
        let stride = n.pow((self.dim - 1 - axis) as u32);
        let mut buf = vec![Complex64::new(0.0, 0.0); 2 * (n + 1)];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let total = data.len();
        for base in 0..total {
            if (base / stride) % n != 0 {
                continue;
            }
            buf.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
            for k in 0..n {
                let v = data[base + k * stride];
                buf[k + 1] = Complex64::new(v, 0.0);
                buf[2 * n + 1 - k] = Complex64::new(-v, 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for k in 0..n {
                data[base + k * stride] = -0.5 * buf[k + 1].im;
            }
        }
    }

    fn apply(&self, r: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut z: Vec<f64> = r.iter().zip(&self.scale).map(|(a, s)| a * s).collect();
        for a in 0..self.dim {
            self.dst_axis(&mut z, a);
        }
        let norm = (2.0 / (n + 1) as f64).powi(self.dim as i32);
        for (p, v) in z.iter_mut().enumerate() {
            let mut lam = self.shift;
            let mut rest = p;
            for _ in 0..self.dim {
                lam += self.eig[rest % n];
                rest /= n;
            }
            *v *= norm / lam;
        }
        for a in 0..self.dim {
            self.dst_axis(&mut z, a);
        }
        for (v, s) in z.iter_mut().zip(&self.scale) {
            *v *= s;
        }
        z
    }
}

enum Backend {
    Cg(SinePreconditioner),
    Dense(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
}

/// Interior solver for one coefficient; the factorisation is built once and shared.
pub struct EllipticSolver<'a> {
    mesh: &'a DomainMesh,
    kind: DtnKind,
    gamma: Vec<f64>,
    q: Vec<f64>,
    backend: Backend,
}

impl<'a> EllipticSolver<'a> {
    pub fn new(mesh: &'a DomainMesh, coefficient: &Coefficient) -> Result<Self> {
        let nodes = mesh.node_count();
        let (gamma, q) = match coefficient {
            Coefficient::Schrodinger(q) => {
                mesh.check_len(q, "potential")?;
                if q.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidArgument("non-finite potential".into()));
                }
                (vec![1.0; nodes], q.clone())
            }
            Coefficient::Conductivity(g) => {
                mesh.check_len(g, "conductivity")?;
                if g.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
                    return Err(Error::InvalidArgument(
                        "conductivity must be positive and finite on the mesh".into(),
                    ));
                }
                (g.clone(), vec![0.0; nodes])
            }
        };
        let mut solver = Self {
            mesh,
            kind: coefficient.kind(),
            gamma,
            q,
            backend: Backend::Cg(SinePreconditioner::new(1, 1, 1.0, 0.0, vec![])),
        };
        solver.backend = solver.choose_backend()?;
        Ok(solver)
    }

    pub fn kind(&self) -> DtnKind {
        self.kind
    }

    pub fn mesh(&self) -> &DomainMesh {
        self.mesh
    }

    fn interior_node(&self, p: usize) -> [usize; 3] {
        let n = self.mesh.interior_per_axis();
        if self.mesh.dim == 3 {
            [p / (n * n) + 1, (p / n) % n + 1, p % n + 1]
        } else {
            [p / n + 1, p % n + 1, 0]
        }
    }

    fn interior_slot(&self, j: &[usize; 3]) -> Option<usize> {
        let n = self.mesh.interior_per_axis();
        let mut p = 0;
        for a in 0..self.mesh.dim {
            if j[a] == 0 || j[a] > n {
                return None;
            }
            p = p * n + (j[a] - 1);
        }
        Some(p)
    }

    fn choose_backend(&self) -> Result<Backend> {
        let mesh = self.mesh;
        let n = mesh.interior_per_axis();
        let h = mesh.h();
        let lam_min = mesh.dim as f64 * 4.0 * (std::f64::consts::PI * h / 2.0).sin().powi(2) / (h * h);
        let interior: Vec<usize> = (0..mesh.interior_count())
            .map(|p| mesh.linear_index(self.interior_node(p)))
            .collect();
        let q_min = interior.iter().map(|&i| self.q[i]).fold(f64::INFINITY, f64::min);
        let definite = self.kind == DtnKind::Conductivity || q_min > -0.9 * lam_min;
        if !definite && mesh.interior_count() <= DENSE_LIMIT {
            return self.dense_backend();
        }
        let scale: Vec<f64> = interior.iter().map(|&i| 1.0 / self.gamma[i].sqrt()).collect();
        let shift = if self.kind == DtnKind::Schrodinger {
            let mean = interior.iter().map(|&i| self.q[i]).sum::<f64>() / interior.len() as f64;
            mean.max(0.0)
        } else {
            0.0
        };
        Ok(Backend::Cg(SinePreconditioner::new(n, mesh.dim, h, shift, scale)))
    }

    fn dense_backend(&self) -> Result<Backend> {
        let size = self.mesh.interior_count();
        let mut a = DMatrix::<f64>::zeros(size, size);
        let mut e = vec![0.0; size];
        for col in 0..size {
            e[col] = 1.0;
            let y = self.apply_interior(&e);
            for row in 0..size {
                a[(row, col)] = y[row];
            }
            e[col] = 0.0;
        }
        let sv = a.clone().singular_values();
        let smax = sv.max();
        let smin = sv.min();
        if !(smin > SINGULAR_TOL * smax) {
            return Err(Error::Singular(format!(
                "0 is a Dirichlet eigenvalue of the discrete operator (smallest singular value {smin:.3e}, largest {smax:.3e})"
            )));
        }
        Ok(Backend::Dense(a.lu()))
    }

    /// Interior operator `-div(gamma grad) + q`, scaled by `h^{-d}`, with zero boundary values.
    fn apply_interior(&self, x: &[f64]) -> Vec<f64> {
        let mesh = self.mesh;
        let h2 = mesh.h() * mesh.h();
        par::map_range(x.len(), |p| {
            let j = self.interior_node(p);
            let i = mesh.linear_index(j);
            let mut acc = self.q[i] * x[p];
            for a in 0..mesh.dim {
                for dir in [-1isize, 1] {
                    let nb = mesh.neighbour(&j, a, dir).expect("interior node");
                    let g = 0.5 * (self.gamma[i] + self.gamma[mesh.linear_index(nb)]);
                    let xn = self.interior_slot(&nb).map_or(0.0, |s| x[s]);
                    acc += g * (x[p] - xn) / h2;
                }
            }
            acc
        })
    }

    /// Right-hand side from boundary data (boundary order).
    fn boundary_rhs(&self, f: &[f64]) -> Vec<f64> {
        let mesh = self.mesh;
        let h2 = mesh.h() * mesh.h();
        par::map_range(mesh.interior_count(), |p| {
            let j = self.interior_node(p);
            let i = mesh.linear_index(j);
            let mut acc = 0.0;
            for a in 0..mesh.dim {
                for dir in [-1isize, 1] {
                    let nb = mesh.neighbour(&j, a, dir).expect("interior node");
                    let ni = mesh.linear_index(nb);
                    if let Some(b) = mesh.slot[ni] {
                        acc += 0.5 * (self.gamma[i] + self.gamma[ni]) * f[b] / h2;
                    }
                }
            }
            acc
        })
    }

    fn cg(&self, pre: &SinePreconditioner, b: &[f64]) -> Result<Vec<f64>> {
        let dot = |u: &[f64], v: &[f64]| par::pairwise_sum(&u.iter().zip(v).map(|(a, b)| a * b).collect::<Vec<_>>());
        let bnorm = dot(b, b).sqrt();
        let mut x = vec![0.0; b.len()];
        if bnorm == 0.0 {
            return Ok(x);
        }
        let mut r = b.to_vec();
        let mut z = pre.apply(&r);
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        for _ in 0..MAX_CG {
            let ap = self.apply_interior(&p);
            let pap = dot(&p, &ap);
            if !(pap > 0.0) {
                return Err(Error::Singular(
                    "interior operator is not positive definite and too large for the dense fallback; 0 may be a Dirichlet eigenvalue".into(),
                ));
            }
            let alpha = rz / pap;
            for k in 0..x.len() {
                x[k] += alpha * p[k];
                r[k] -= alpha * ap[k];
            }
            if dot(&r, &r).sqrt() <= SOLVER_TOL * bnorm {
                return Ok(x);
            }
            z = pre.apply(&r);
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for k in 0..p.len() {
                p[k] = z[k] + beta * p[k];
            }
        }
        Err(Error::NoConvergence(format!(
            "conjugate gradients stopped after {MAX_CG} iterations"
        )))
    }

    /// Solution over all nodes for boundary data `f` (boundary order).
    pub fn solve(&self, f: &[f64]) -> Result<Vec<f64>> {
        let mesh = self.mesh;
        mesh.check_boundary_len(f, "boundary data")?;
        let b = self.boundary_rhs(f);
        let x = match &self.backend {
            Backend::Cg(pre) => self.cg(pre, &b)?,
            Backend::Dense(lu) => lu
                .solve(&nalgebra::DVector::from_vec(b))
                .ok_or_else(|| Error::Singular("dense factorisation failed".into()))?
                .as_slice()
                .to_vec(),
        };
        let mut u = vec![0.0; mesh.node_count()];
        for (slot, &i) in mesh.boundary.iter().enumerate() {
            u[i] = f[slot];
        }
        for (p, v) in x.into_iter().enumerate() {
            u[mesh.linear_index(self.interior_node(p))] = v;
        }
        Ok(u)
    }

    /// Boundary flux (`dv/deta` or `gamma du/deta`) of node values `u`.
    pub fn flux(&self, u: &[f64], rule: FluxRule) -> Vec<f64> {
        let mesh = self.mesh;
        let h = mesh.h();
        par::map_range(mesh.boundary_count(), |b| {
            let i = mesh.boundary[b];
            let j = mesh.multi_index(i);
            match rule {
                FluxRule::Variational => {
                    let mut acc = mesh.node_weight(i) * self.q[i] * u[i];
                    for a in 0..mesh.dim {
                        for dir in [-1isize, 1] {
                            if let Some(nb) = mesh.neighbour(&j, a, dir) {
                                let ni = mesh.linear_index(nb);
                                let g = 0.5 * (self.gamma[i] + self.gamma[ni]);
                                acc += mesh.link_weight(&j, a) * g * (u[i] - u[ni]);
                            }
                        }
                    }
                    acc / mesh.weights[b]
                }
                FluxRule::OneSided => {
                    let mut acc = 0.0;
                    for (a, side) in mesh.faces(&j) {
                        let inward = -(side as isize);
                        let n1 = mesh.neighbour(&j, a, inward).expect("m >= 5");
                        let n2 = mesh.neighbour(&n1, a, inward).expect("m >= 5");
                        let d = (3.0 * u[i] - 4.0 * u[mesh.linear_index(n1)]
                            + u[mesh.linear_index(n2)])
                            / (2.0 * h);
                        acc += mesh.face_weight(&j, a) * self.gamma[i] * d;
                    }
                    acc / mesh.weights[b]
                }
            }
        })
    }

    /// `Lambda f` in boundary order.
    pub fn apply_dtn(&self, f: &[f64], rule: FluxRule) -> Result<Vec<f64>> {
        let u = self.solve(f)?;
        Ok(self.flux(&u, rule))
    }

    /// Largest interior residual of node values `u`, relative to `max|u|` times the stencil scale.
    pub fn relative_residual(&self, u: &[f64]) -> Result<f64> {
        let mesh = self.mesh;
        mesh.check_len(u, "node values")?;
        let x: Vec<f64> = (0..mesh.interior_count())
            .map(|p| u[mesh.linear_index(self.interior_node(p))])
            .collect();
        let f = mesh.restrict(u);
        let ax = self.apply_interior(&x);
        let b = self.boundary_rhs(&f);
        let res = ax.iter().zip(&b).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let h = mesh.h();
        let gmax = self.gamma.iter().cloned().fold(0.0, f64::max);
        let qmax = self.q.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let umax = u.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let scale = umax * (4.0 * mesh.dim as f64 * gmax / (h * h) + qmax);
        Ok(if scale == 0.0 { res } else { res / scale })
    }
}

/// Dense boundary-to-boundary DtN matrix, row-major.
#[derive(Debug, Clone)]
pub struct DtnMatrix {
    pub kind: DtnKind,
    pub rule: FluxRule,
    pub dim: usize,
    pub m: usize,
    pub size: usize,
    pub weights: Vec<f64>,
    pub data: Vec<f64>,
}

impl DtnMatrix {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.size + col]
    }

    /// Matrix action on boundary data.
    pub fn apply(&self, f: &[f64]) -> Result<Vec<f64>> {
        if f.len() != self.size {
            return Err(Error::InvalidArgument(format!(
                "{} values for a DtN matrix of size {}",
                f.len(),
                self.size
            )));
        }
        Ok((0..self.size)
            .map(|r| {
                let row = &self.data[r * self.size..(r + 1) * self.size];
                row.iter().zip(f).map(|(a, b)| a * b).sum()
            })
            .collect())
    }

    /// `max |W_i L_ij - W_j L_ji| / max |W_i L_ij|`.
    pub fn symmetry_defect(&self) -> f64 {
        let mut num: f64 = 0.0;
        let mut den: f64 = 0.0;
        for i in 0..self.size {
            for j in 0..self.size {
                let a = self.weights[i] * self.get(i, j);
                let b = self.weights[j] * self.get(j, i);
                num = num.max((a - b).abs());
                den = den.max(a.abs());
            }
        }
        if den == 0.0 {
            0.0
        } else {
            num / den
        }
    }

    /// Header (magic, kind, rule, m, dim) followed by row-major little-endian `f64`.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&[
            matches!(self.kind, DtnKind::Conductivity) as u8,
            matches!(self.rule, FluxRule::OneSided) as u8,
        ])?;
        w.write_all(&(self.m as u64).to_le_bytes())?;
        w.write_all(&(self.dim as u64).to_le_bytes())?;
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("DtN matrix: bad magic".into()));
        }
        let mut flags = [0u8; 2];
        r.read_exact(&mut flags)?;
        let mut word = [0u8; 8];
        r.read_exact(&mut word)?;
        let m = u64::from_le_bytes(word) as usize;
        r.read_exact(&mut word)?;
        let dim = u64::from_le_bytes(word) as usize;
        let mesh = DomainMesh::new(dim, m).map_err(|e| Error::Format(format!("DtN matrix header: {e}")))?;
        let size = mesh.boundary_count();
        let mut data = Vec::with_capacity(size * size);
        for _ in 0..size * size {
            r.read_exact(&mut word)
                .map_err(|_| Error::Format("DtN matrix: truncated data".into()))?;
            data.push(f64::from_le_bytes(word));
        }
        Ok(Self {
            kind: if flags[0] == 1 { DtnKind::Conductivity } else { DtnKind::Schrodinger },
            rule: if flags[1] == 1 { FluxRule::OneSided } else { FluxRule::Variational },
            dim,
            m,
            size,
            weights: mesh.boundary_weights().to_vec(),
            data,
        })
    }
}

/// DtN matrix with the variational flux.
pub fn assemble_dtn(mesh: &DomainMesh, coefficient: &Coefficient) -> Result<DtnMatrix> {
    assemble_dtn_with(mesh, coefficient, FluxRule::Variational)
}

/// DtN matrix column by column: hat data at boundary node `j`, solve, take the flux.
pub fn assemble_dtn_with(
    mesh: &DomainMesh,
    coefficient: &Coefficient,
    rule: FluxRule,
) -> Result<DtnMatrix> {
    let solver = EllipticSolver::new(mesh, coefficient)?;
    let size = mesh.boundary_count();
    let columns = par::map_range(size, |col| {
        let mut f = vec![0.0; size];
        f[col] = 1.0;
        solver.apply_dtn(&f, rule)
    });
    let mut data = vec![0.0; size * size];
    for (col, c) in columns.into_iter().enumerate() {
        let c = c?;
        for (row, v) in c.into_iter().enumerate() {
            data[row * size + col] = v;
        }
    }
    Ok(DtnMatrix {
        kind: coefficient.kind(),
        rule,
        dim: mesh.dim,
        m: mesh.m,
        size,
        weights: mesh.boundary_weights().to_vec(),
        data,
    })
}

fn check_positive(gamma: &GridField) -> Result<()> {
    for v in &gamma.values {
        if !(v.re > 0.0) || v.im.abs() > 1e-12 * v.re.abs().max(1.0) {
            return Err(Error::InvalidArgument(
                "conductivity must be real and positive on the grid".into(),
            ));
        }
    }
    Ok(())
}

/// Liouville potential `q = Delta t + |grad t|^2`, `t = ln gamma^{1/2}`, with spectral derivatives.
pub fn liouville(gamma: &GridField) -> Result<GridField> {
    check_positive(gamma)?;
    let t = gamma.map(|g| Complex64::new(0.5 * g.re.ln(), 0.0));
    let mut q = t.laplacian();
    for d in t.gradient() {
        for (qi, di) in q.values.iter_mut().zip(&d.values) {
            *qi += Complex64::new(di.re * di.re, 0.0);
        }
    }
    for v in q.values.iter_mut() {
        v.im = 0.0;
    }
    Ok(q)
}

/// Liouville potential in the form `Delta gamma^{1/2} / gamma^{1/2}`.
pub fn liouville_direct(gamma: &GridField) -> Result<GridField> {
    check_positive(gamma)?;
    let root = gamma.map(|g| Complex64::new(g.re.sqrt(), 0.0));
    let lap = root.laplacian();
    root.zip_with(&lap, |r, l| Complex64::new(l.re / r.re, 0.0))
}

/// Largest pointwise gap between the two Liouville forms.
pub fn liouville_crosscheck(gamma: &GridField) -> Result<f64> {
    let a = liouville(gamma)?;
    let b = liouville_direct(gamma)?;
    Ok(a.sub(&b)?.sup_norm())
}

/// Spectral interpolation of a periodic grid field at the mesh nodes.
///
/// The box `[0,1]^d` must lie inside the grid box.
pub fn sample_grid(mesh: &DomainMesh, field: &GridField) -> Result<Vec<f64>> {
    let spec = field.spec;
    if spec.dim() != mesh.dim {
        return Err(Error::GridMismatch);
    }
    if spec.half_length() < 1.0 {
        return Err(Error::InvalidArgument(format!(
            "grid half-length {} does not cover the unit box",
            spec.half_length()
        )));
    }
    let n = spec.n();
    let m = mesh.m;
    let dk = spec.freq_step();
    let e: Vec<Complex64> = (0..m)
        .flat_map(|i| {
            let x = i as f64 * mesh.h();
            (0..n).map(move |j| {
                let k = (j as f64 - (n / 2) as f64) * dk;
                Complex64::from_polar(1.0, k * x)
            })
        })
        .collect();
    let mut data = field.to_spectral().coeffs;
    let mut shape = vec![n; mesh.dim];
    for axis in (0..mesh.dim).rev() {
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let mut next = vec![Complex64::new(0.0, 0.0); outer * m * inner];
        for o in 0..outer {
            for i in 0..m {
                let row = &e[i * n..(i + 1) * n];
                for s in 0..inner {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for (j, ej) in row.iter().enumerate() {
                        acc += data[(o * n + j) * inner + s] * ej;
                    }
                    next[(o * m + i) * inner + s] = acc;
                }
            }
        }
        data = next;
        shape[axis] = m;
    }
    let w = spec.lattice_weight();
    Ok(data.into_iter().map(|c| c.re * w).collect())
}

/// Both sides of the integral identity for one pair of solutions.
#[derive(Debug, Clone, Serialize)]
pub struct IdentityReport {
    pub rule: FluxRule,
    /// `int (q1 - q2) v1 v2` by trapezoidal quadrature.
    pub volume: f64,
    /// `<Lambda_1 f1, f2> - <f1, Lambda_2 f2>` on the boundary.
    pub boundary: f64,
    pub difference: f64,
    pub residual_1: f64,
    pub residual_2: f64,
}

/// `int (q1 - q2) v1 v2` after checking that `v_i` solve `Delta v - q_i v = 0` to 1e-8.
pub fn integral_identity_residual(
    mesh: &DomainMesh,
    q1: &[f64],
    q2: &[f64],
    v1: &[f64],
    v2: &[f64],
) -> Result<f64> {
    for (name, q, v) in [("v1", q1, v1), ("v2", q2, v2)] {
        let solver = EllipticSolver::new(mesh, &Coefficient::Schrodinger(q.to_vec()))?;
        let r = solver.relative_residual(v)?;
        if r > 1e-8 {
            return Err(Error::InvalidArgument(format!(
                "{name} is not a discrete solution (relative residual {r:.3e})"
            )));
        }
    }
    Ok(volume_pairing(mesh, q1, q2, v1, v2))
}

fn volume_pairing(mesh: &DomainMesh, q1: &[f64], q2: &[f64], v1: &[f64], v2: &[f64]) -> f64 {
    par::sum_range(mesh.node_count(), |i| {
        mesh.node_weight(i) * (q1[i] - q2[i]) * v1[i] * v2[i]
    })
}

/// Solve both problems and report both sides of the identity.
pub fn green_pairing(
    mesh: &DomainMesh,
    q1: &[f64],
    q2: &[f64],
    f1: &[f64],
    f2: &[f64],
    rule: FluxRule,
) -> Result<IdentityReport> {
    let s1 = EllipticSolver::new(mesh, &Coefficient::Schrodinger(q1.to_vec()))?;
    let s2 = EllipticSolver::new(mesh, &Coefficient::Schrodinger(q2.to_vec()))?;
    let v1 = s1.solve(f1)?;
    let v2 = s2.solve(f2)?;
    let residual_1 = s1.relative_residual(&v1)?;
    let residual_2 = s2.relative_residual(&v2)?;
    let volume = integral_identity_residual(mesh, q1, q2, &v1, &v2)?;
    let g1 = s1.flux(&v1, rule);
    let g2 = s2.flux(&v2, rule);
    let boundary = mesh.pairing(&g1, f2) - mesh.pairing(f1, &g2);
    Ok(IdentityReport {
        rule,
        volume,
        boundary,
        difference: (volume - boundary).abs(),
        residual_1,
        residual_2,
    })
}

/// Boundary probe output.
#[derive(Debug, Clone, Serialize)]
pub struct ProbeResult {
    pub z: Vec3,
    pub normal: Vec3,
    /// `|z_n - z|`, strictly decreasing.
    pub distances: Vec<f64>,
    /// `int (g1 - g2) grad u1 . grad u2 / int |grad v_n|^2` per step.
    pub values: Vec<f64>,
    /// The same ratio for the calibration pair, divided by its difference.
    pub calibration: Vec<f64>,
    pub calibration_difference: f64,
    /// Intercepts of linear fits in the distance.
    pub limit: f64,
    pub calibration_limit: f64,
    /// Estimate of `gamma1(z) - gamma2(z)`.
    pub estimate: f64,
}

/// `sum_links c_l w_l (du)_l (dv)_l`, `w_l` the mean of the node weights at the link ends.
fn link_form(mesh: &DomainMesh, w: &[f64], u: &[f64], v: &[f64]) -> f64 {
    par::sum_range(mesh.node_count(), |i| {
        let j = mesh.multi_index(i);
        let mut acc = 0.0;
        for a in 0..mesh.dim {
            if let Some(nb) = mesh.neighbour(&j, a, 1) {
                let ni = mesh.linear_index(nb);
                acc += mesh.link_weight(&j, a) * 0.5 * (w[i] + w[ni]) * (u[i] - u[ni]) * (v[i] - v[ni]);
            }
        }
        acc
    })
}

fn probe_ratio(
    mesh: &DomainMesh,
    s1: &EllipticSolver,
    s2: &EllipticSolver,
    diff: &[f64],
    v: &[f64],
) -> Result<f64> {
    let f = mesh.restrict(v);
    let u1 = s1.solve(&f)?;
    let u2 = s2.solve(&f)?;
    let ones = vec![1.0; mesh.node_count()];
    Ok(link_form(mesh, diff, &u1, &u2) / link_form(mesh, &ones, v, v))
}

fn intercept(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    my - sxy / sxx * mx
}

/// Boundary determination probe at boundary node `z` with singular data
/// `v_n = 1/|x - z_n|`, `z_n = z + 2^{-n} eta(z)`, `n = 1..n_steps`.
///
/// The geometry factor is calibrated with `gamma_ref +- c/2`, `gamma_ref` the mean
/// of the two conductivities and `c = min(1, min gamma_ref)`.
pub fn boundary_probe(
    mesh: &DomainMesh,
    gamma1: &[f64],
    gamma2: &[f64],
    z: Vec3,
    n_steps: usize,
) -> Result<ProbeResult> {
    if mesh.dim != 3 {
        return Err(Error::InvalidArgument("the boundary probe needs d = 3".into()));
    }
    if n_steps < 2 {
        return Err(Error::InvalidArgument("at least 2 probe steps are needed".into()));
    }
    let slot = mesh.find_boundary_node(&z)?;
    let normal = mesh.normals[slot];
    let s1 = EllipticSolver::new(mesh, &Coefficient::Conductivity(gamma1.to_vec()))?;
    let s2 = EllipticSolver::new(mesh, &Coefficient::Conductivity(gamma2.to_vec()))?;
    let reference: Vec<f64> = gamma1.iter().zip(gamma2).map(|(a, b)| 0.5 * (a + b)).collect();
    let c = reference.iter().cloned().fold(1.0, f64::min);
    let lo: Vec<f64> = reference.iter().map(|g| g - 0.5 * c).collect();
    let hi: Vec<f64> = reference.iter().map(|g| g + 0.5 * c).collect();
    let c_hi = EllipticSolver::new(mesh, &Coefficient::Conductivity(hi.clone()))?;
    let c_lo = EllipticSolver::new(mesh, &Coefficient::Conductivity(lo.clone()))?;
    let diff: Vec<f64> = gamma1.iter().zip(gamma2).map(|(a, b)| a - b).collect();
    let cdiff = vec![c; mesh.node_count()];
    let mut distances = Vec::with_capacity(n_steps);
    let mut values = Vec::with_capacity(n_steps);
    let mut calibration = Vec::with_capacity(n_steps);
    for step in 1..=n_steps {
        let d = 0.5f64.powi(step as i32);
        let zn = crate::vec3::axpy(d, &normal, &z);
        let v = mesh.sample(|x| 1.0 / crate::vec3::norm(&crate::vec3::sub(x, &zn)));
        distances.push(d);
        values.push(probe_ratio(mesh, &s1, &s2, &diff, &v)?);
        calibration.push(probe_ratio(mesh, &c_hi, &c_lo, &cdiff, &v)? / c);
    }
    let limit = intercept(&distances, &values);
    let calibration_limit = intercept(&distances, &calibration);
    Ok(ProbeResult {
        z,
        normal,
        distances,
        values,
        calibration,
        calibration_difference: c,
        limit,
        calibration_limit,
        estimate: limit / calibration_limit,
    })
}
