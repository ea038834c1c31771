//! Vertex sets: coordinates, train/test roles, interlaced meshes, and
//! distance-ordered neighbor queries.

use alloc::vec::Vec;
use core::fmt;

use nalgebra::DMatrix;

use crate::fmath;

/// Default cap on the number of vertices a generated mesh may contain.
///
/// `(m+1)^p` grows quickly with dimension; the cap turns a runaway request
/// into a reportable error instead of an allocation failure.
pub const DEFAULT_MAX_MESH_POINTS: usize = 1 << 22;

/// Whether a vertex participates in operator construction (`Train`) or is
/// only used for held-out evaluation (`Test`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Train,
    Test,
}

/// Errors from cloud construction and mesh generation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PointCloudError {
    /// A size or length parameter was zero, negative, or not finite.
    BadParameter { what: &'static str },
    /// The requested mesh exceeds the configured maximum vertex count.
    CapacityExceeded { requested: usize, limit: usize },
    /// A coordinate was NaN or infinite.
    NonFinite { vertex: usize, dim: usize },
    /// The role list does not match the number of vertices.
    RoleCountMismatch { points: usize, roles: usize },
}

impl fmt::Display for PointCloudError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::BadParameter { what } => write!(f, "invalid parameter: {what}"),
            Self::CapacityExceeded { requested, limit } => {
                write!(f, "mesh would contain {requested} vertices, limit is {limit}")
            }
            Self::NonFinite { vertex, dim } => {
                write!(f, "non-finite coordinate at vertex {vertex}, dimension {dim}")
            }
            Self::RoleCountMismatch { points, roles } => {
                write!(f, "{points} vertices but {roles} roles")
            }
        }
    }
}

impl core::error::Error for PointCloudError {}

/// A finite set of vertices in `R^p` with per-vertex roles.
///
/// Coordinates are stored row-per-vertex. The optional `spacing` records the
/// grid parameter of a generated mesh so downstream studies can report
/// errors against it; clouds built from arbitrary data leave it unset.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: DMatrix<f64>,
    roles: Vec<Role>,
    spacing: Option<f64>,
    train: Vec<usize>,
    test: Vec<usize>,
    /// Position of each vertex within `train`, or `None` for test vertices.
    train_rank: Vec<Option<usize>>,
}

impl PointCloud {
    /// Builds a cloud from explicit coordinates and roles.
    ///
    /// Rejects empty inputs, non-finite coordinates, a role list of the
    /// wrong length, and a non-positive or non-finite `spacing`.
    pub fn from_parts(
        points: DMatrix<f64>,
        roles: Vec<Role>,
        spacing: Option<f64>,
    ) -> Result<Self, PointCloudError> {
        if points.nrows() == 0 || points.ncols() == 0 {
            return Err(PointCloudError::BadParameter {
                what: "cloud must contain at least one vertex in at least one dimension",
            });
        }
        if roles.len() != points.nrows() {
            return Err(PointCloudError::RoleCountMismatch {
                points: points.nrows(),
                roles: roles.len(),
            });
        }
        for i in 0..points.nrows() {
            for d in 0..points.ncols() {
                if !points[(i, d)].is_finite() {
                    return Err(PointCloudError::NonFinite { vertex: i, dim: d });
                }
            }
        }
        if let Some(h) = spacing {
            if !(h.is_finite() && h > 0.0) {
                return Err(PointCloudError::BadParameter {
                    what: "spacing must be finite and positive",
                });
            }
        }
        let mut train = Vec::new();
        let mut test = Vec::new();
        let mut train_rank = Vec::with_capacity(roles.len());
        for (i, role) in roles.iter().enumerate() {
            match role {
                Role::Train => {
                    train_rank.push(Some(train.len()));
                    train.push(i);
                }
                Role::Test => {
                    train_rank.push(None);
                    test.push(i);
                }
            }
        }
        Ok(Self { points, roles, spacing, train, test, train_rank })
    }

    /// Generates the interlaced rectangular mesh on `[0, length]^p` used by
    /// convergence studies, with the default vertex cap.
    ///
    /// Train vertices sit on the coarse grid `x_j = 2h * j`,
    /// `j = 0..=m` per axis (both boundaries included), with `h =
    /// length / (2m)`. Test vertices sit on the grid offset by `h` in every
    /// dimension, `m` per axis, so each test vertex is centered between its
    /// surrounding train vertices. Train vertices come first, ordered
    /// row-major with the last dimension varying fastest, then test
    /// vertices in the same order.
    pub fn generate_interlaced_mesh(
        p: usize,
        m: usize,
        length: f64,
    ) -> Result<Self, PointCloudError> {
        Self::generate_interlaced_mesh_with_limit(p, m, length, DEFAULT_MAX_MESH_POINTS)
    }

    /// [`generate_interlaced_mesh`](Self::generate_interlaced_mesh) with an
    /// explicit cap on the total vertex count.
    pub fn generate_interlaced_mesh_with_limit(
        p: usize,
        m: usize,
        length: f64,
        max_points: usize,
    ) -> Result<Self, PointCloudError> {
        if p == 0 {
            return Err(PointCloudError::BadParameter { what: "dimension p must be at least 1" });
        }
        if m == 0 {
            return Err(PointCloudError::BadParameter {
                what: "mesh parameter m must be at least 1",
            });
        }
        if !(length.is_finite() && length > 0.0) {
            return Err(PointCloudError::BadParameter {
                what: "domain length must be finite and positive",
            });
        }
        let too_big = || PointCloudError::CapacityExceeded {
            requested: usize::MAX,
            limit: max_points,
        };
        let train_count = checked_power(m + 1, p).ok_or_else(too_big)?;
        let test_count = checked_power(m, p).ok_or_else(too_big)?;
        let total = train_count.checked_add(test_count).ok_or_else(too_big)?;
        if total > max_points {
            return Err(PointCloudError::CapacityExceeded { requested: total, limit: max_points });
        }

        let h = length / (2.0 * m as f64);
        let mut points = DMatrix::zeros(total, p);
        // Coordinates are always h * integer so train and test lattices
        // round identically.
        for (row, idx) in (0..train_count).enumerate() {
            let mut rem = idx;
            for d in (0..p).rev() {
                let j = rem % (m + 1);
                rem /= m + 1;
                points[(row, d)] = h * (2 * j) as f64;
            }
        }
        for (offset, idx) in (0..test_count).enumerate() {
            let row = train_count + offset;
            let mut rem = idx;
            for d in (0..p).rev() {
                let j = rem % m;
                rem /= m;
                points[(row, d)] = h * (2 * j + 1) as f64;
            }
        }
        let mut roles = Vec::with_capacity(total);
        roles.resize(train_count, Role::Train);
        roles.resize(total, Role::Test);
        Self::from_parts(points, roles, Some(h))
    }

    /// Number of vertices.
    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    /// Spatial dimension `p`.
    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    /// Mesh spacing `h` when the cloud came from a generator that defines
    /// one.
    pub fn spacing(&self) -> Option<f64> {
        self.spacing
    }

    pub fn role(&self, vertex: usize) -> Role {
        self.roles[vertex]
    }

    pub fn coord(&self, vertex: usize, dim: usize) -> f64 {
        self.points[(vertex, dim)]
    }

    /// Copy of one vertex's coordinates.
    pub fn point(&self, vertex: usize) -> Vec<f64> {
        (0..self.dim()).map(|d| self.points[(vertex, d)]).collect()
    }

    /// Full coordinate matrix, one row per vertex.
    pub fn points(&self) -> &DMatrix<f64> {
        &self.points
    }

    /// Vertex ids with [`Role::Train`], in ascending order.
    pub fn train_ids(&self) -> &[usize] {
        &self.train
    }

    /// Vertex ids with [`Role::Test`], in ascending order.
    pub fn test_ids(&self) -> &[usize] {
        &self.test
    }

    /// Position of `vertex` within [`train_ids`](Self::train_ids), or
    /// `None` for a test vertex.
    pub fn train_rank(&self, vertex: usize) -> Option<usize> {
        self.train_rank[vertex]
    }

    /// Offset `y - x` from vertex `base` to vertex `other`.
    pub fn offset(&self, base: usize, other: usize) -> Vec<f64> {
        (0..self.dim())
            .map(|d| self.points[(other, d)] - self.points[(base, d)])
            .collect()
    }

    pub fn distance(&self, a: usize, b: usize) -> f64 {
        fmath::sqrt(self.dist2(a, b))
    }

    fn dist2(&self, a: usize, b: usize) -> f64 {
        let mut acc = 0.0;
        for d in 0..self.dim() {
            let diff = self.points[(a, d)] - self.points[(b, d)];
            acc += diff * diff;
        }
        acc
    }

    fn dist2_to(&self, vertex: usize, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for d in 0..self.dim() {
            let diff = self.points[(vertex, d)] - x[d];
            acc += diff * diff;
        }
        acc
    }

    /// All train vertices except `base`, ordered by ascending Euclidean
    /// distance from `base`, ties broken by ascending vertex id.
    ///
    /// Ordering compares squared distances, which is monotone in the
    /// distance itself. The scan is a brute-force sort; cloud sizes here
    /// stay small enough that spatial indexing would not pay for itself.
    pub fn sorted_neighbors(&self, base: usize) -> Vec<usize> {
        let mut ids: Vec<usize> = self.train.iter().copied().filter(|&v| v != base).collect();
        ids.sort_by(|&a, &b| {
            self.dist2(base, a)
                .total_cmp(&self.dist2(base, b))
                .then_with(|| a.cmp(&b))
        });
        ids
    }

    /// Train vertex nearest to an arbitrary location, ties broken by
    /// ascending vertex id. `None` when the cloud has no train vertices.
    pub fn nearest_train(&self, x: &[f64]) -> Option<usize> {
        assert_eq!(x.len(), self.dim(), "query point has wrong dimension");
        self.train
            .iter()
            .copied()
            .min_by(|&a, &b| {
                self.dist2_to(a, x)
                    .total_cmp(&self.dist2_to(b, x))
                    .then_with(|| a.cmp(&b))
            })
    }
}

fn checked_power(base: usize, exp: usize) -> Option<usize> {
    let mut acc: usize = 1;
    for _ in 0..exp {
        acc = acc.checked_mul(base)?;
    }
    Some(acc)
}
