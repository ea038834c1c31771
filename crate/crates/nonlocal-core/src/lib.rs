//! Consistent derivatives of arbitrary order and accuracy on scattered point
//! clouds, built from moment-constrained stencil weights on a weighted graph.
//!
//! The crate is organised bottom-up:
//!
//! * [`point_cloud`] holds vertex coordinates with train/test roles and
//!   generates interlaced rectangular meshes for convergence studies.
//! * [`poly_basis`] enumerates multi-indices in graded lexicographic order,
//!   evaluates monomials and polynomials, and assembles the moment systems
//!   whose solutions are stencil weights.
//! * [`stencil`] grows neighborhoods until the moment system reaches full
//!   rank and solves for the reduced weights.
//! * [`operators`] turns stencils into derivative operators: direct
//!   application, recursive composition for higher orders, sparse matrix
//!   assembly, and the edge-weight primitives of the underlying non-local
//!   calculus, plus a normalized Gaussian kernel baseline.
//! * [`taylor`] fits truncated Taylor surrogates with learned scale factors
//!   on the derivative terms and runs mesh-refinement error studies.
//! * [`regress`] provides least-squares and ridge solvers, composite loss
//!   functions, greedy backward term elimination, and grouped
//!   cross-validation for model discovery.
//! * [`allen_cahn`] integrates a 1-D Allen-Cahn equation implicitly,
//!   reduces trajectories to scalar state functionals, and assembles the
//!   regression problem for discovering a closed reduced-order model.
//!
//! The crate is `no_std` (it requires `alloc`); all floating-point work is
//! in `f64`.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod allen_cahn;
pub mod operators;
pub mod point_cloud;
pub mod poly_basis;
pub mod regress;
pub mod stencil;
pub mod taylor;

pub use point_cloud::{PointCloud, Role};
pub use poly_basis::{AnalyticField, CountingMode, MultiIndex, MultiIndexSet, Polynomial};
pub use stencil::{Stencil, StencilSet};

/// Floating-point helpers that work without `std`.
///
/// `f64::sqrt` and friends live in `std`, not `core`; route them through
/// `libm` so the crate builds on `no_std` targets.
pub(crate) mod fmath {
    pub fn sqrt(x: f64) -> f64 {
        libm::sqrt(x)
    }

    pub fn exp(x: f64) -> f64 {
        libm::exp(x)
    }

    pub fn ln(x: f64) -> f64 {
        libm::log(x)
    }

    /// Integer power by binary exponentiation; avoids `libm::pow`'s
    /// float-exponent path for what is always a small integer exponent.
    pub fn powi(x: f64, n: i32) -> f64 {
        if n < 0 {
            return 1.0 / powi(x, -n);
        }
        let mut acc = 1.0;
        let mut base = x;
        let mut e = n as u32;
        while e > 0 {
            if e & 1 == 1 {
                acc *= base;
            }
            base *= base;
            e >>= 1;
        }
        acc
    }

    pub fn cos(x: f64) -> f64 {
        libm::cos(x)
    }
}
