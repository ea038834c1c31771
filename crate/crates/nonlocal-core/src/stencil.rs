//! Stencil construction: growing a neighborhood until the moment system
//! has full rank, then solving for the reduced weights.
//!
//! A stencil for vertex `x~` and dimension `mu` is a set of neighbor
//! offsets `z_i` and reduced weights `a_i` such that
//! `sum_i (u(x_i) - u(x~)) a_i / z_i^mu` reproduces `du/dx^mu` exactly on
//! polynomials up to total order `r`. The weights solve the moment system
//! assembled by [`crate::poly_basis::assemble_moment_system`].

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::fmt;

use nalgebra::{DMatrix, DVector};

use crate::fmath;
use crate::point_cloud::PointCloud;
use crate::poly_basis::{
    assemble_moment_system, enumerate_multi_indices, BasisError, CountingMode, MultiIndexSet,
};

/// Largest acceptable violation of the unscaled moment constraints.
///
/// Weights are produced from an equilibrated system whose condition number
/// is modest, so honest solves land many orders of magnitude below this.
/// A larger defect means the neighborhood geometry was too close to
/// degenerate for the weights to be trusted, and the build refuses it.
pub const MOMENT_RESIDUAL_LIMIT: f64 = 1e-9;

/// Errors from neighborhood growth and weight solves.
#[derive(Debug, Clone, PartialEq)]
pub enum StencilError {
    Basis(BasisError),
    /// Every candidate neighbor was consumed without the moment system
    /// reaching full rank; the cloud geometry cannot support this order.
    DegenerateGeometry { base: usize, mu: usize, achieved_rank: usize, needed: usize },
    /// The solved weights violate the moment constraints by more than
    /// [`MOMENT_RESIDUAL_LIMIT`].
    ResidualTooLarge { base: usize, mu: usize, residual: f64 },
    /// The triangular solve met a zero pivot despite the rank check.
    SingularSystem { base: usize, mu: usize },
    BadParameter { what: &'static str },
}

impl fmt::Display for StencilError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Basis(e) => write!(f, "moment assembly failed: {e}"),
            Self::DegenerateGeometry { base, mu, achieved_rank, needed } => write!(
                f,
                "vertex {base}, dimension {mu}: neighbors exhausted at rank {achieved_rank} of {needed}"
            ),
            Self::ResidualTooLarge { base, mu, residual } => write!(
                f,
                "vertex {base}, dimension {mu}: moment residual {residual:.3e} exceeds {MOMENT_RESIDUAL_LIMIT:.1e}"
            ),
            Self::SingularSystem { base, mu } => {
                write!(f, "vertex {base}, dimension {mu}: singular moment system")
            }
            Self::BadParameter { what } => write!(f, "invalid parameter: {what}"),
        }
    }
}

impl core::error::Error for StencilError {}

impl From<BasisError> for StencilError {
    fn from(e: BasisError) -> Self {
        Self::Basis(e)
    }
}

/// The accepted neighbors of a stencil, in acceptance order.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighborhood {
    base: usize,
    mu: usize,
    members: Vec<usize>,
    offsets: DMatrix<f64>,
}

impl Neighborhood {
    pub fn base(&self) -> usize {
        self.base
    }

    pub fn mu(&self) -> usize {
        self.mu
    }

    /// Global vertex ids of the members, in acceptance order.
    pub fn members(&self) -> &[usize] {
        &self.members
    }

    /// Offsets `x_i - x~`, one row per member.
    pub fn offsets(&self) -> &DMatrix<f64> {
        &self.offsets
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// A solved stencil: neighborhood plus reduced weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Stencil {
    neighborhood: Neighborhood,
    weights: DVector<f64>,
    r: usize,
    residual: f64,
}

impl Stencil {
    pub fn neighborhood(&self) -> &Neighborhood {
        &self.neighborhood
    }

    pub fn base(&self) -> usize {
        self.neighborhood.base
    }

    pub fn mu(&self) -> usize {
        self.neighborhood.mu
    }

    pub fn members(&self) -> &[usize] {
        &self.neighborhood.members
    }

    pub fn offsets(&self) -> &DMatrix<f64> {
        &self.neighborhood.offsets
    }

    /// Reduced weights `a_i`, aligned with [`members`](Self::members).
    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    /// Consistency order `r`.
    pub fn r(&self) -> usize {
        self.r
    }

    /// Largest absolute violation of the unscaled moment constraints.
    pub fn residual(&self) -> f64 {
        self.residual
    }

    pub fn len(&self) -> usize {
        self.neighborhood.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighborhood.is_empty()
    }

    /// The derivative as a nodal linear functional: per-member
    /// coefficients `a_i / z_i^mu` and the base coefficient
    /// `-sum_i a_i / z_i^mu`, so that
    /// `du/dx^mu ~ sum_i c_i u(x_i) + c_base u(x~)`.
    pub fn nodal_coefficients(&self) -> (Vec<f64>, f64) {
        let mu = self.neighborhood.mu;
        let coeffs: Vec<f64> = (0..self.len())
            .map(|i| self.weights[i] / self.neighborhood.offsets[(i, mu)])
            .collect();
        let base = -coeffs.iter().sum::<f64>();
        (coeffs, base)
    }

    /// Reassembles a stencil from its serialized parts, validating the
    /// shapes; values are taken as-is so a serialize/deserialize cycle
    /// is exact.
    pub fn from_parts(
        base: usize,
        mu: usize,
        members: Vec<usize>,
        offsets: DMatrix<f64>,
        weights: DVector<f64>,
        r: usize,
        residual: f64,
    ) -> Result<Self, StencilError> {
        if members.is_empty() {
            return Err(StencilError::BadParameter { what: "stencil needs members" });
        }
        if offsets.nrows() != members.len() || weights.len() != members.len() {
            return Err(StencilError::BadParameter {
                what: "one offset row and one weight per member required",
            });
        }
        if mu >= offsets.ncols() {
            return Err(StencilError::BadParameter { what: "dimension out of range" });
        }
        if r == 0 {
            return Err(StencilError::BadParameter { what: "order r must be at least 1" });
        }
        Ok(Self {
            neighborhood: Neighborhood { base, mu, members, offsets },
            weights,
            r,
            residual,
        })
    }

    /// Applies the stencil to samples at the members and the base.
    pub fn apply(&self, member_values: &[f64], base_value: f64) -> f64 {
        assert_eq!(member_values.len(), self.len(), "one sample per member");
        let mu = self.neighborhood.mu;
        let mut acc = 0.0;
        for i in 0..self.len() {
            acc += (member_values[i] - base_value) * self.weights[i]
                / self.neighborhood.offsets[(i, mu)];
        }
        acc
    }
}

/// Options for stencil construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BuildOptions {
    /// Extra neighbors accepted beyond full rank. Zero gives the square
    /// system with a unique weight vector; a positive count gives an
    /// underdetermined system resolved by the minimum-norm solution.
    pub extra_neighbors: usize,
    /// Record per-vertex failures and continue instead of aborting.
    pub skip_failures: bool,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self { extra_neighbors: 0, skip_failures: false }
    }
}

/// A stencil build that could not be completed at one vertex/dimension
/// pair, kept when [`BuildOptions::skip_failures`] is set.
#[derive(Debug, Clone, PartialEq)]
pub struct SkippedStencil {
    pub base: usize,
    pub mu: usize,
    pub error: StencilError,
}

/// All stencils of one build: every train vertex crossed with every
/// dimension, minus any recorded skips.
#[derive(Debug, Clone, PartialEq)]
pub struct StencilSet {
    p: usize,
    r: usize,
    entries: BTreeMap<(usize, usize), Stencil>,
}

impl StencilSet {
    pub fn p(&self) -> usize {
        self.p
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, base: usize, mu: usize) -> Option<&Stencil> {
        self.entries.get(&(base, mu))
    }

    /// Stencils in ascending `(base, mu)` order.
    pub fn iter(&self) -> impl Iterator<Item = &Stencil> {
        self.entries.values()
    }

    /// Assembles a set from individually built stencils; the companion
    /// crate uses this to reconstruct a set from serialized records.
    pub fn from_stencils(
        p: usize,
        r: usize,
        stencils: Vec<Stencil>,
    ) -> Result<Self, StencilError> {
        let mut entries = BTreeMap::new();
        for s in stencils {
            if s.r() != r {
                return Err(StencilError::BadParameter {
                    what: "stencil order differs from the set order",
                });
            }
            if s.offsets().ncols() != p {
                return Err(StencilError::BadParameter {
                    what: "stencil dimension differs from the set dimension",
                });
            }
            entries.insert((s.base(), s.mu()), s);
        }
        Ok(Self { p, r, entries })
    }
}

/// The result of [`build_stencil_set`]: the set plus any skipped builds.
#[derive(Debug, Clone, PartialEq)]
pub struct StencilBuild {
    pub set: StencilSet,
    pub skipped: Vec<SkippedStencil>,
}

/// Median of the offset row norms; the equilibration scale. For an even
/// count this is the mean of the two central values.
fn median_offset_norm(offsets: &DMatrix<f64>) -> f64 {
    let mut norms: Vec<f64> = (0..offsets.nrows())
        .map(|i| {
            let mut acc = 0.0;
            for d in 0..offsets.ncols() {
                acc += offsets[(i, d)] * offsets[(i, d)];
            }
            fmath::sqrt(acc)
        })
        .collect();
    norms.sort_by(f64::total_cmp);
    let n = norms.len();
    if n % 2 == 1 {
        norms[n / 2]
    } else {
        0.5 * (norms[n / 2 - 1] + norms[n / 2])
    }
}

/// Grows a neighborhood around `base` until the moment system for
/// dimension `mu` reaches full rank `q`.
///
/// Candidates are taken in [`PointCloud::sorted_neighbors`] order.
/// Candidates with a zero offset along `mu` are skipped outright (their
/// ratio rows are undefined); every other candidate is accepted only if it
/// raises the numerical rank of the equilibrated ratio matrix, so the
/// member count always equals the current rank. Exhausting the cloud
/// before reaching rank `q` is a geometry error reporting the rank
/// achieved.
pub fn grow_neighborhood(
    cloud: &PointCloud,
    base: usize,
    mu: usize,
    set: &MultiIndexSet,
) -> Result<Neighborhood, StencilError> {
    grow_neighborhood_with_extras(cloud, base, mu, set, 0)
}

fn grow_neighborhood_with_extras(
    cloud: &PointCloud,
    base: usize,
    mu: usize,
    set: &MultiIndexSet,
    extra_neighbors: usize,
) -> Result<Neighborhood, StencilError> {
    if mu >= cloud.dim() {
        return Err(BasisError::BadDimension { mu, p: cloud.dim() }.into());
    }
    if set.p() != cloud.dim() {
        return Err(BasisError::DimensionMismatch { offsets: cloud.dim(), set: set.p() }.into());
    }
    let q = set.len();
    let mut members: Vec<usize> = Vec::with_capacity(q);
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(q);
    let mut rank = 0usize;
    let mut extras_taken = 0usize;

    for candidate in cloud.sorted_neighbors(base) {
        let z = cloud.offset(base, candidate);
        if z[mu] == 0.0 {
            continue;
        }
        if rank == q {
            // Full rank reached; only optional extras remain.
            if extras_taken == extra_neighbors {
                break;
            }
            members.push(candidate);
            rows.push(z);
            extras_taken += 1;
            continue;
        }
        members.push(candidate);
        rows.push(z);
        let offsets = offsets_from_rows(&rows, cloud.dim());
        let system = assemble_moment_system(&offsets, mu, set)?;
        let scale = median_offset_norm(&offsets);
        let scaled = system.equilibrated(scale);
        let svd = scaled.svd(false, false);
        let sigma_max = svd.singular_values.max();
        let tol = (system.d().max(system.q())) as f64 * f64::EPSILON * sigma_max;
        let new_rank = if sigma_max > 0.0 {
            svd.singular_values.iter().filter(|&&s| s > tol).count()
        } else {
            0
        };
        if new_rank > rank {
            rank = new_rank;
        } else {
            members.pop();
            rows.pop();
        }
    }

    if rank < q || extras_taken < extra_neighbors {
        return Err(StencilError::DegenerateGeometry { base, mu, achieved_rank: rank, needed: q });
    }
    let offsets = offsets_from_rows(&rows, cloud.dim());
    Ok(Neighborhood { base, mu, members, offsets })
}

fn offsets_from_rows(rows: &[Vec<f64>], p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), p, |i, d| rows[i][d])
}

/// Solves the moment system of a grown neighborhood for the reduced
/// weights.
///
/// The system is equilibrated by the median offset norm (which leaves the
/// exact solution unchanged) and solved through a thin QR factorization.
/// With `d = q` members this is the unique solution; with extra members it
/// is the minimum-norm solution, which the same factorization delivers
/// because the solve is performed in the row space. The returned stencil
/// records the largest violation of the raw, unscaled constraints, and the
/// solve fails if that exceeds [`MOMENT_RESIDUAL_LIMIT`].
pub fn solve_weights(
    neighborhood: Neighborhood,
    set: &MultiIndexSet,
) -> Result<Stencil, StencilError> {
    let base = neighborhood.base;
    let mu = neighborhood.mu;
    let system = assemble_moment_system(&neighborhood.offsets, mu, set)?;
    let scale = median_offset_norm(&neighborhood.offsets);
    let scaled = system.equilibrated(scale);

    // Minimum-norm solution of scaled^T a = rhs: with scaled = Q R (thin),
    // a = Q (R^T)^{-1} rhs lies in the row space of the constraints.
    let qr = scaled.clone().qr();
    let r_mat = qr.r();
    let q_mat = qr.q();
    let y = r_mat
        .transpose()
        .solve_lower_triangular(system.rhs())
        .ok_or(StencilError::SingularSystem { base, mu })?;
    let weights = q_mat * y;

    let residual = system.residual(&weights);
    if !(residual <= MOMENT_RESIDUAL_LIMIT) {
        return Err(StencilError::ResidualTooLarge { base, mu, residual });
    }
    Ok(Stencil { neighborhood, weights, r: set.r(), residual })
}

/// Builds first-derivative stencils of order `r` for every train vertex
/// and every dimension.
///
/// With [`BuildOptions::skip_failures`] unset the first failure aborts the
/// build; otherwise failures are recorded in
/// [`StencilBuild::skipped`] and the remaining stencils are returned.
pub fn build_stencil_set(
    cloud: &PointCloud,
    r: usize,
    options: BuildOptions,
) -> Result<StencilBuild, StencilError> {
    if r == 0 {
        return Err(StencilError::BadParameter { what: "order r must be at least 1" });
    }
    let p = cloud.dim();
    let set = enumerate_multi_indices(p, r, CountingMode::Unique);
    let mut entries = BTreeMap::new();
    let mut skipped = Vec::new();
    for &base in cloud.train_ids() {
        for mu in 0..p {
            let result = grow_neighborhood_with_extras(cloud, base, mu, &set, options.extra_neighbors)
                .and_then(|n| solve_weights(n, &set));
            match result {
                Ok(stencil) => {
                    entries.insert((base, mu), stencil);
                }
                Err(error) => {
                    if options.skip_failures {
                        skipped.push(SkippedStencil { base, mu, error });
                    } else {
                        return Err(error);
                    }
                }
            }
        }
    }
    Ok(StencilBuild { set: StencilSet { p, r, entries }, skipped })
}
