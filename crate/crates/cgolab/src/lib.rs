//! Numerical laboratory for complex geometrical optics (CGO) solutions of the
//! Schrodinger and conductivity inverse problems.
//!
//! The crate is organised bottom-up:
//!
//! - [`fieldgrid`]: periodic-box sampling, continuum-normalised transforms and norms.
//! - [`kernel`]: the multiplier `1/(-|k|^2 + i xi.k)`, its characteristic set and splits.
//! - [`cgo`]: Born iteration for CGO correctors and solution assembly.
//! - [`estimates`]: both sides of the kernel inequalities and the `E(q, xi)` functional.
//! - [`averaging`]: Monte Carlo sphere averages, frame selection and dyadic shells.
//! - [`dtn`]: finite-difference Dirichlet-to-Neumann maps and the boundary probe.
//! - [`pipeline`]: end-to-end uniqueness experiments built from the above.
//!
//! Data-parallel loops go through [`par`], which uses rayon when the `parallel`
//! feature is enabled and plain iterators otherwise.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod averaging;
pub mod cgo;
pub mod dtn;
pub mod error;
pub mod estimates;
pub mod fieldgrid;
pub mod kernel;
pub mod par;
pub mod pipeline;

pub use error::{Error, Result};
pub use num_complex::Complex64;

/// Three-component real vector; the last entry is zero in two dimensions.
pub type Vec3 = [f64; 3];

pub(crate) mod vec3 {
    use super::Vec3;

    pub fn dot(a: &Vec3, b: &Vec3) -> f64 {
        a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
    }

    pub fn norm(a: &Vec3) -> f64 {
        dot(a, a).sqrt()
    }

    pub fn scale(a: &Vec3, c: f64) -> Vec3 {
        [a[0] * c, a[1] * c, a[2] * c]
    }

    pub fn add(a: &Vec3, b: &Vec3) -> Vec3 {
        [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
    }

    pub fn sub(a: &Vec3, b: &Vec3) -> Vec3 {
        [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
    }

    pub fn axpy(c: f64, a: &Vec3, b: &Vec3) -> Vec3 {
        [c * a[0] + b[0], c * a[1] + b[1], c * a[2] + b[2]]
    }

    pub fn cross(a: &Vec3, b: &Vec3) -> Vec3 {
        [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ]
    }

    pub fn normalized(a: &Vec3) -> Vec3 {
        scale(a, 1.0 / norm(a))
    }
}
