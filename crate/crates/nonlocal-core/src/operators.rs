//! Derivative operators built from stencils: direct application, recursive
//! composition for higher orders, sparse matrix assembly, the edge-level
//! primitives of the non-local calculus, and a normalized Gaussian kernel
//! baseline.
//!
//! Derivatives live on train vertices. A [`DerivativeField`] is aligned
//! with [`PointCloud::train_ids`]; input samples are aligned with the full
//! vertex list so freshly sampled data can be passed straight in.

use alloc::vec::Vec;
use core::fmt;

use nalgebra::{DMatrix, DVector};

use crate::fmath;
use crate::point_cloud::PointCloud;
use crate::poly_basis::MultiIndex;
use crate::stencil::StencilSet;

/// Errors from operator application.
#[derive(Debug, Clone, PartialEq)]
pub enum OperatorError {
    /// No stencil exists for this vertex/dimension pair (for example after
    /// a build with skipped failures).
    MissingStencil { base: usize, mu: usize },
    /// An input vector has the wrong length.
    LengthMismatch { expected: usize, got: usize },
    /// The non-local gradient requires non-negative edge weights.
    NegativeWeight { row: usize, col: usize },
    BadParameter { what: &'static str },
}

impl fmt::Display for OperatorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::MissingStencil { base, mu } => {
                write!(f, "no stencil for vertex {base}, dimension {mu}")
            }
            Self::LengthMismatch { expected, got } => {
                write!(f, "expected a vector of length {expected}, got {got}")
            }
            Self::NegativeWeight { row, col } => {
                write!(f, "negative edge weight at ({row}, {col})")
            }
            Self::BadParameter { what } => write!(f, "invalid parameter: {what}"),
        }
    }
}

impl core::error::Error for OperatorError {}

/// A derivative sampled at the train vertices, tagged with the dimension
/// sequence that produced it and its nominal order of accuracy.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeField {
    dims: Vec<usize>,
    values: DVector<f64>,
    accuracy: i32,
}

impl DerivativeField {
    /// Application sequence, first-applied dimension first.
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    /// Values aligned with [`PointCloud::train_ids`].
    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    /// Derivative order `l`.
    pub fn order(&self) -> usize {
        self.dims.len()
    }

    /// The exponent tuple this sequence computes; application order does
    /// not matter for the index itself.
    pub fn multi_index(&self, p: usize) -> MultiIndex {
        let mut exp = alloc::vec![0u32; p];
        for &d in &self.dims {
            exp[d] += 1;
        }
        MultiIndex::new(exp)
    }

    /// Nominal accuracy order `r + 1 - l`; non-positive when the
    /// composition has consumed the stencil's consistency order.
    pub fn accuracy(&self) -> i32 {
        self.accuracy
    }

    /// Value at a train vertex, by global vertex id.
    pub fn value_at(&self, cloud: &PointCloud, vertex: usize) -> Option<f64> {
        cloud.train_rank(vertex).map(|t| self.values[t])
    }
}

/// Applies one stencil pass: `get` supplies samples by global vertex id.
fn apply_pass(
    set: &StencilSet,
    cloud: &PointCloud,
    mu: usize,
    get: impl Fn(usize) -> f64,
) -> Result<DVector<f64>, OperatorError> {
    let train = cloud.train_ids();
    let mut out = DVector::zeros(train.len());
    for (t, &base) in train.iter().enumerate() {
        let stencil = set.get(base, mu).ok_or(OperatorError::MissingStencil { base, mu })?;
        let base_value = get(base);
        let mut acc = 0.0;
        for (i, &member) in stencil.members().iter().enumerate() {
            acc += (get(member) - base_value) * stencil.weights()[i]
                / stencil.offsets()[(i, mu)];
        }
        out[t] = acc;
    }
    Ok(out)
}

/// First derivative along `mu` of samples at every vertex.
pub fn first_derivative(
    set: &StencilSet,
    cloud: &PointCloud,
    u: &DVector<f64>,
    mu: usize,
) -> Result<DerivativeField, OperatorError> {
    if u.len() != cloud.len() {
        return Err(OperatorError::LengthMismatch { expected: cloud.len(), got: u.len() });
    }
    let values = apply_pass(set, cloud, mu, |v| u[v])?;
    Ok(DerivativeField {
        dims: alloc::vec![mu],
        values,
        accuracy: set.r() as i32,
    })
}

/// Higher derivative by recursive composition: `dims` are applied left to
/// right, each pass reusing the same first-derivative stencils. The
/// nominal accuracy decreases by one per additional pass.
pub fn higher_derivative(
    set: &StencilSet,
    cloud: &PointCloud,
    u: &DVector<f64>,
    dims: &[usize],
) -> Result<DerivativeField, OperatorError> {
    if dims.is_empty() {
        return Err(OperatorError::BadParameter { what: "dimension sequence is empty" });
    }
    if u.len() != cloud.len() {
        return Err(OperatorError::LengthMismatch { expected: cloud.len(), got: u.len() });
    }
    let mut values = apply_pass(set, cloud, dims[0], |v| u[v])?;
    for &mu in &dims[1..] {
        let prev = values;
        values = apply_pass(set, cloud, mu, |v| {
            prev[cloud.train_rank(v).expect("stencil members are train vertices")]
        })?;
    }
    Ok(DerivativeField {
        dims: dims.to_vec(),
        values,
        accuracy: set.r() as i32 + 1 - dims.len() as i32,
    })
}

/// Higher derivative for a multi-index, composing its dimensions in
/// canonical ascending order.
pub fn derivative_for_index(
    set: &StencilSet,
    cloud: &PointCloud,
    u: &DVector<f64>,
    index: &MultiIndex,
) -> Result<DerivativeField, OperatorError> {
    higher_derivative(set, cloud, u, &index.canonical_dims())
}

/// Composition with an independent stencil set per pass, level `i` using
/// `sets[i]`. This is the variant where each derivative order carries its
/// own neighborhoods and accuracy; the default path reuses one fixed set.
///
/// The recorded accuracy is the bottleneck over levels: a pass at level
/// `i` (0-based) with consistency order `r_i` contributes
/// `r_i - (L - 1 - i)` after the remaining `L - 1 - i` passes erode it by
/// one each.
pub fn higher_derivative_per_order(
    sets: &[&StencilSet],
    cloud: &PointCloud,
    u: &DVector<f64>,
    dims: &[usize],
) -> Result<DerivativeField, OperatorError> {
    if dims.is_empty() {
        return Err(OperatorError::BadParameter { what: "dimension sequence is empty" });
    }
    if sets.len() != dims.len() {
        return Err(OperatorError::BadParameter { what: "one stencil set per pass is required" });
    }
    if u.len() != cloud.len() {
        return Err(OperatorError::LengthMismatch { expected: cloud.len(), got: u.len() });
    }
    let mut values = apply_pass(sets[0], cloud, dims[0], |v| u[v])?;
    for (i, &mu) in dims.iter().enumerate().skip(1) {
        let prev = values;
        values = apply_pass(sets[i], cloud, mu, |v| {
            prev[cloud.train_rank(v).expect("stencil members are train vertices")]
        })?;
    }
    let levels = dims.len() as i32;
    let accuracy = sets
        .iter()
        .enumerate()
        .map(|(i, s)| s.r() as i32 - (levels - 1 - i as i32))
        .min()
        .expect("at least one pass");
    Ok(DerivativeField { dims: dims.to_vec(), values, accuracy })
}

/// A derivative operator as an explicit sparse matrix over train-vertex
/// ranks, rows sorted by column index.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseOperator {
    dims: Vec<usize>,
    n: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl SparseOperator {
    /// Side length (number of train vertices).
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    /// Matrix-vector product with a train-aligned vector.
    pub fn apply(&self, v: &DVector<f64>) -> Result<DVector<f64>, OperatorError> {
        if v.len() != self.n {
            return Err(OperatorError::LengthMismatch { expected: self.n, got: v.len() });
        }
        let mut out = DVector::zeros(self.n);
        for (row, entries) in self.rows.iter().enumerate() {
            let mut acc = 0.0;
            for &(col, value) in entries {
                acc += value * v[col];
            }
            out[row] = acc;
        }
        Ok(out)
    }

    /// Product `self * rhs`, the operator applying `rhs` first.
    pub fn matmul(&self, rhs: &SparseOperator) -> Result<SparseOperator, OperatorError> {
        if rhs.n != self.n {
            return Err(OperatorError::LengthMismatch { expected: self.n, got: rhs.n });
        }
        let mut rows = Vec::with_capacity(self.n);
        let mut scratch = alloc::vec![0.0f64; self.n];
        let mut touched: Vec<usize> = Vec::new();
        for entries in &self.rows {
            for &(mid, left) in entries {
                for &(col, right) in &rhs.rows[mid] {
                    if scratch[col] == 0.0 && !touched.contains(&col) {
                        touched.push(col);
                    }
                    scratch[col] += left * right;
                }
            }
            touched.sort_unstable();
            let mut row = Vec::with_capacity(touched.len());
            for &col in &touched {
                row.push((col, scratch[col]));
                scratch[col] = 0.0;
            }
            touched.clear();
            rows.push(row);
        }
        let mut dims = rhs.dims.clone();
        dims.extend_from_slice(&self.dims);
        Ok(SparseOperator { dims, n: self.n, rows })
    }

    /// Entries as `(row, col, value)` triplets in row-major order.
    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.nnz());
        for (row, entries) in self.rows.iter().enumerate() {
            for &(col, value) in entries {
                out.push((row, col, value));
            }
        }
        out
    }
}

/// One stencil pass as a sparse matrix over train ranks.
fn sparse_pass(
    set: &StencilSet,
    cloud: &PointCloud,
    mu: usize,
) -> Result<SparseOperator, OperatorError> {
    let train = cloud.train_ids();
    let mut rows = Vec::with_capacity(train.len());
    for (t, &base) in train.iter().enumerate() {
        let stencil = set.get(base, mu).ok_or(OperatorError::MissingStencil { base, mu })?;
        let mut row: Vec<(usize, f64)> = Vec::with_capacity(stencil.len() + 1);
        let mut diag = 0.0;
        for (i, &member) in stencil.members().iter().enumerate() {
            let coeff = stencil.weights()[i] / stencil.offsets()[(i, mu)];
            let rank = cloud
                .train_rank(member)
                .expect("stencil members are train vertices");
            row.push((rank, coeff));
            diag -= coeff;
        }
        row.push((t, diag));
        row.sort_unstable_by_key(|&(col, _)| col);
        rows.push(row);
    }
    Ok(SparseOperator { dims: alloc::vec![mu], n: train.len(), rows })
}

/// Assembles the composed derivative for a dimension sequence as one
/// sparse matrix; `dims` are applied left to right, so the matrices
/// multiply in reverse.
pub fn as_sparse_operator(
    set: &StencilSet,
    cloud: &PointCloud,
    dims: &[usize],
) -> Result<SparseOperator, OperatorError> {
    if dims.is_empty() {
        return Err(OperatorError::BadParameter { what: "dimension sequence is empty" });
    }
    let mut op = sparse_pass(set, cloud, dims[0])?;
    for &mu in &dims[1..] {
        let next = sparse_pass(set, cloud, mu)?;
        op = next.matmul(&op)?;
        // matmul concatenates dims as rhs-then-self, which is exactly the
        // application order.
    }
    Ok(op)
}

/// Edge weights over a vertex set, stored dense with a zero diagonal.
///
/// Entries may be negative (one-sided stencils induce sign-indefinite
/// weights); [`nonlocal_gradient`] rejects negative entries because it
/// takes their square roots.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeWeights {
    w: DMatrix<f64>,
}

impl EdgeWeights {
    pub fn from_matrix(w: DMatrix<f64>) -> Result<Self, OperatorError> {
        if w.nrows() != w.ncols() {
            return Err(OperatorError::BadParameter { what: "edge weights must be square" });
        }
        for i in 0..w.nrows() {
            if w[(i, i)] != 0.0 {
                return Err(OperatorError::BadParameter { what: "self edges are not allowed" });
            }
            for j in 0..w.ncols() {
                if !w[(i, j)].is_finite() {
                    return Err(OperatorError::BadParameter { what: "edge weights must be finite" });
                }
            }
        }
        Ok(Self { w })
    }

    pub fn n(&self) -> usize {
        self.w.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.w
    }
}

/// Edge-indexed values: entry `(x, y)` belongs to the edge from vertex `x`
/// to vertex `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeField {
    values: DMatrix<f64>,
}

impl EdgeField {
    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }
}

/// The non-local gradient `(u(y) - u(x)) sqrt(w(x, y))` on every edge.
pub fn nonlocal_gradient(
    u: &DVector<f64>,
    weights: &EdgeWeights,
) -> Result<EdgeField, OperatorError> {
    let n = weights.n();
    if u.len() != n {
        return Err(OperatorError::LengthMismatch { expected: n, got: u.len() });
    }
    let mut values = DMatrix::zeros(n, n);
    for x in 0..n {
        for y in 0..n {
            if x == y {
                continue;
            }
            let w = weights.w[(x, y)];
            if w < 0.0 {
                return Err(OperatorError::NegativeWeight { row: x, col: y });
            }
            values[(x, y)] = (u[y] - u[x]) * fmath::sqrt(w);
        }
    }
    Ok(EdgeField { values })
}

/// The unit vector along dimension `mu`: the non-local gradient of the
/// coordinate function `x^mu`.
pub fn unit_vector(
    points: &DMatrix<f64>,
    weights: &EdgeWeights,
    mu: usize,
) -> Result<EdgeField, OperatorError> {
    if points.nrows() != weights.n() {
        return Err(OperatorError::LengthMismatch { expected: weights.n(), got: points.nrows() });
    }
    if mu >= points.ncols() {
        return Err(OperatorError::BadParameter { what: "dimension out of range" });
    }
    let coord = DVector::from_fn(points.nrows(), |i, _| points[(i, mu)]);
    nonlocal_gradient(&coord, weights)
}

/// Per-vertex contraction of two edge fields:
/// `(1/(n-1)) sum_{y != x} a(x, y) b(x, y)`.
pub fn edge_dot(a: &EdgeField, b: &EdgeField) -> Result<DVector<f64>, OperatorError> {
    let n = a.n();
    if b.n() != n {
        return Err(OperatorError::LengthMismatch { expected: n, got: b.n() });
    }
    if n < 2 {
        return Err(OperatorError::BadParameter { what: "contraction needs at least two vertices" });
    }
    let mut out = DVector::zeros(n);
    for x in 0..n {
        let mut acc = 0.0;
        for y in 0..n {
            if y != x {
                acc += a.values[(x, y)] * b.values[(x, y)];
            }
        }
        out[x] = acc / (n - 1) as f64;
    }
    Ok(out)
}

/// Vertex-function inner product `(1/n) sum_x u(x) v(x)`.
pub fn inner_product(u: &DVector<f64>, v: &DVector<f64>) -> Result<f64, OperatorError> {
    if u.len() != v.len() {
        return Err(OperatorError::LengthMismatch { expected: u.len(), got: v.len() });
    }
    if u.is_empty() {
        return Err(OperatorError::BadParameter { what: "inner product of empty vectors" });
    }
    Ok(u.dot(v) / u.len() as f64)
}

/// Stencil weights recast as edge weights over the train vertices for one
/// dimension: `w(x~, x_i) = (n - 1) a_i / (z_i^mu)^2` on stencil members
/// and zero elsewhere, with `n` the train vertex count.
///
/// The `(n - 1)` factor cancels the contraction's normalization, so
/// [`edge_dot`] of the non-local gradient with the unit vector reproduces
/// the stencil derivative exactly, and the unit vector has unit norm at
/// every vertex whose stencil weights sum to one.
pub fn stencil_edge_weights(
    set: &StencilSet,
    cloud: &PointCloud,
    mu: usize,
) -> Result<EdgeWeights, OperatorError> {
    let train = cloud.train_ids();
    let n = train.len();
    if n < 2 {
        return Err(OperatorError::BadParameter { what: "need at least two train vertices" });
    }
    let mut w = DMatrix::zeros(n, n);
    for (t, &base) in train.iter().enumerate() {
        let stencil = set.get(base, mu).ok_or(OperatorError::MissingStencil { base, mu })?;
        for (i, &member) in stencil.members().iter().enumerate() {
            let z = stencil.offsets()[(i, mu)];
            let rank = cloud
                .train_rank(member)
                .expect("stencil members are train vertices");
            w[(t, rank)] = (n - 1) as f64 * stencil.weights()[i] / (z * z);
        }
    }
    EdgeWeights::from_matrix(w)
}

/// Gaussian-kernel edge weights over the train vertices for one dimension,
/// normalized per vertex so the unit vector along `mu` has unit norm:
/// `w(x~, y) = (n - 1) exp(-|z|^2/sigma^2) / sum_y (z^mu)^2 exp(-|z|^2/sigma^2)`.
pub fn gaussian_edge_weights(
    cloud: &PointCloud,
    sigma: f64,
    mu: usize,
) -> Result<EdgeWeights, OperatorError> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(OperatorError::BadParameter { what: "sigma must be finite and positive" });
    }
    if mu >= cloud.dim() {
        return Err(OperatorError::BadParameter { what: "dimension out of range" });
    }
    let train = cloud.train_ids();
    let n = train.len();
    if n < 2 {
        return Err(OperatorError::BadParameter { what: "need at least two train vertices" });
    }
    let mut w = DMatrix::zeros(n, n);
    for (t, &base) in train.iter().enumerate() {
        let mut norm = 0.0;
        for (j, &other) in train.iter().enumerate() {
            if other == base {
                continue;
            }
            let z = cloud.offset(base, other);
            let kernel = fmath::exp(-z.iter().map(|v| v * v).sum::<f64>() / (sigma * sigma));
            w[(t, j)] = kernel;
            norm += z[mu] * z[mu] * kernel;
        }
        if norm == 0.0 {
            return Err(OperatorError::BadParameter {
                what: "gaussian normalization vanished; no offset along this dimension",
            });
        }
        for j in 0..n {
            w[(t, j)] *= (n - 1) as f64 / norm;
        }
    }
    EdgeWeights::from_matrix(w)
}

/// First derivative along `mu` under the Gaussian baseline weights,
/// evaluated directly from the kernel sums.
pub fn gaussian_first_derivative(
    cloud: &PointCloud,
    sigma: f64,
    u: &DVector<f64>,
    mu: usize,
) -> Result<DerivativeField, OperatorError> {
    if u.len() != cloud.len() {
        return Err(OperatorError::LengthMismatch { expected: cloud.len(), got: u.len() });
    }
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(OperatorError::BadParameter { what: "sigma must be finite and positive" });
    }
    if mu >= cloud.dim() {
        return Err(OperatorError::BadParameter { what: "dimension out of range" });
    }
    let train = cloud.train_ids();
    let mut out = DVector::zeros(train.len());
    for (t, &base) in train.iter().enumerate() {
        let mut numer = 0.0;
        let mut denom = 0.0;
        for &other in train {
            if other == base {
                continue;
            }
            let z = cloud.offset(base, other);
            let kernel = fmath::exp(-z.iter().map(|v| v * v).sum::<f64>() / (sigma * sigma));
            numer += (u[other] - u[base]) * z[mu] * kernel;
            denom += z[mu] * z[mu] * kernel;
        }
        if denom == 0.0 {
            return Err(OperatorError::BadParameter {
                what: "gaussian normalization vanished; no offset along this dimension",
            });
        }
        out[t] = numer / denom;
    }
    Ok(DerivativeField { dims: alloc::vec![mu], values: out, accuracy: 1 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::point_cloud::Role;
    use crate::stencil::{build_stencil_set, BuildOptions};
    use alloc::vec;
    use proptest::prelude::*;

    /// Exact-arithmetic identities checked in floating point; the slack
    /// covers accumulation across a few hundred terms.
    const EXACT_TOL: f64 = 1e-12;

    fn sample(cloud: &PointCloud, f: impl Fn(&[f64]) -> f64) -> DVector<f64> {
        DVector::from_fn(cloud.len(), |i, _| f(&cloud.point(i)))
    }

    fn mesh_with_stencils(p: usize, m: usize, r: usize) -> (PointCloud, StencilSet) {
        let cloud = PointCloud::generate_interlaced_mesh(p, m, 1.0).unwrap();
        let set = build_stencil_set(&cloud, r, BuildOptions::default()).unwrap().set;
        (cloud, set)
    }

    #[test]
    fn first_derivative_exact_on_quadratics() {
        let (cloud, set) = mesh_with_stencils(1, 8, 2);
        let u = sample(&cloud, |x| x[0] * x[0]);
        let field = first_derivative(&set, &cloud, &u, 0).unwrap();
        assert_eq!(field.accuracy(), 2);
        for (t, &v) in cloud.train_ids().iter().enumerate() {
            let want = 2.0 * cloud.coord(v, 0);
            assert!((field.values()[t] - want).abs() <= EXACT_TOL * want.abs().max(1.0));
        }
    }

    #[test]
    fn composition_reproduces_second_derivative_of_cubic() {
        let (cloud, set) = mesh_with_stencils(1, 10, 3);
        let u = sample(&cloud, |x| x[0] * x[0] * x[0]);
        let field = higher_derivative(&set, &cloud, &u, &[0, 0]).unwrap();
        assert_eq!(field.accuracy(), 2);
        assert_eq!(field.multi_index(1).exponents(), &[2]);
        for (t, &v) in cloud.train_ids().iter().enumerate() {
            let want = 6.0 * cloud.coord(v, 0);
            assert!(
                (field.values()[t] - want).abs() <= 1e-10 * want.abs().max(1.0),
                "vertex {v}"
            );
        }
    }

    #[test]
    fn mixed_partials_are_exact_on_low_order_polynomials() {
        let (cloud, set) = mesh_with_stencils(2, 4, 3);
        let u = sample(&cloud, |x| x[0] * x[0] * x[1]);
        let xy = higher_derivative(&set, &cloud, &u, &[0, 1]).unwrap();
        let yx = higher_derivative(&set, &cloud, &u, &[1, 0]).unwrap();
        assert_eq!(xy.multi_index(2), yx.multi_index(2));
        for (t, &v) in cloud.train_ids().iter().enumerate() {
            let want = 2.0 * cloud.coord(v, 0);
            assert!((xy.values()[t] - want).abs() <= 1e-9 * want.abs().max(1.0));
            assert!((yx.values()[t] - want).abs() <= 1e-9 * want.abs().max(1.0));
        }
    }

    #[test]
    fn per_order_sets_compose() {
        let cloud = PointCloud::generate_interlaced_mesh(1, 10, 1.0).unwrap();
        let set4 = build_stencil_set(&cloud, 4, BuildOptions::default()).unwrap().set;
        let set3 = build_stencil_set(&cloud, 3, BuildOptions::default()).unwrap().set;
        let u = sample(&cloud, |x| x[0] * x[0] * x[0] * x[0]);
        let field =
            higher_derivative_per_order(&[&set4, &set3], &cloud, &u, &[0, 0]).unwrap();
        assert_eq!(field.accuracy(), 3);
        for (t, &v) in cloud.train_ids().iter().enumerate() {
            let x = cloud.coord(v, 0);
            let want = 12.0 * x * x;
            assert!(
                (field.values()[t] - want).abs() <= 1e-9 * want.abs().max(1.0),
                "vertex {v}"
            );
        }
    }

    #[test]
    fn missing_stencils_are_reported() {
        let points = DMatrix::from_iterator(2, 1, [0.0, 1.0]);
        let cloud = PointCloud::from_parts(points, vec![Role::Train; 2], None).unwrap();
        let build = build_stencil_set(
            &cloud,
            2,
            BuildOptions { skip_failures: true, ..Default::default() },
        )
        .unwrap();
        let u = DVector::zeros(2);
        assert!(matches!(
            first_derivative(&build.set, &cloud, &u, 0),
            Err(OperatorError::MissingStencil { base: 0, mu: 0 })
        ));
    }

    #[test]
    fn sparse_operator_matches_functional_application() {
        let (cloud, set) = mesh_with_stencils(2, 3, 2);
        let u = sample(&cloud, |x| fmath::cos(3.0 * x[0]) + x[1] * x[1] * x[0]);
        for dims in [vec![0], vec![1], vec![0, 1], vec![1, 1]] {
            let field = higher_derivative(&set, &cloud, &u, &dims).unwrap();
            let op = as_sparse_operator(&set, &cloud, &dims).unwrap();
            let train_u =
                DVector::from_fn(cloud.train_ids().len(), |t, _| u[cloud.train_ids()[t]]);
            let via_matrix = op.apply(&train_u).unwrap();
            assert_eq!(op.dims(), dims.as_slice());
            for t in 0..via_matrix.len() {
                assert!(
                    (via_matrix[t] - field.values()[t]).abs()
                        <= EXACT_TOL * field.values()[t].abs().max(1.0),
                    "dims {dims:?}, row {t}"
                );
            }
        }
    }

    #[test]
    fn gradient_rejects_negative_weights() {
        let mut w = DMatrix::zeros(2, 2);
        w[(0, 1)] = -1.0;
        let weights = EdgeWeights::from_matrix(w).unwrap();
        let u = DVector::from_element(2, 1.0);
        assert!(matches!(
            nonlocal_gradient(&u, &weights),
            Err(OperatorError::NegativeWeight { row: 0, col: 1 })
        ));
    }

    #[test]
    fn self_edges_are_rejected() {
        let w = DMatrix::from_element(2, 2, 1.0);
        assert!(EdgeWeights::from_matrix(w).is_err());
    }

    /// With the complete-graph scaling, contracting the non-local gradient
    /// against the unit vector reproduces the stencil derivative, and the
    /// unit vector is normalized at vertices whose weights are
    /// non-negative (interior symmetric stencils).
    #[test]
    fn edge_primitives_reproduce_interior_stencil_derivative() {
        let points = DMatrix::from_iterator(3, 1, [0.0, 1.0, 2.0]);
        let cloud = PointCloud::from_parts(points, vec![Role::Train; 3], None).unwrap();
        let set = build_stencil_set(&cloud, 2, BuildOptions::default()).unwrap().set;
        // Keep only the interior vertex's row: its weights (1/2, 1/2) are
        // non-negative, so the square roots are defined.
        let full = stencil_edge_weights(&set, &cloud, 0).unwrap();
        let mut w = DMatrix::zeros(3, 3);
        for j in 0..3 {
            w[(1, j)] = full.matrix()[(1, j)];
        }
        let weights = EdgeWeights::from_matrix(w).unwrap();
        let u = sample(&cloud, |x| x[0] * x[0] * 0.5 + 3.0);
        let train_u = u.clone();
        let grad = nonlocal_gradient(&train_u, &weights).unwrap();
        let xhat = unit_vector(cloud.points(), &weights, 0).unwrap();
        let contracted = edge_dot(&grad, &xhat).unwrap();
        let stencil_field = first_derivative(&set, &cloud, &u, 0).unwrap();
        assert!((contracted[1] - stencil_field.values()[1]).abs() <= EXACT_TOL);
        let norm = edge_dot(&xhat, &xhat).unwrap();
        assert!((norm[1] - 1.0).abs() <= EXACT_TOL);
    }

    #[test]
    fn gaussian_unit_vectors_are_normalized_everywhere() {
        let cloud = PointCloud::generate_interlaced_mesh(1, 6, 1.0).unwrap();
        let weights = gaussian_edge_weights(&cloud, 0.3, 0).unwrap();
        let train_points = DMatrix::from_fn(cloud.train_ids().len(), 1, |t, _| {
            cloud.coord(cloud.train_ids()[t], 0)
        });
        let xhat = unit_vector(&train_points, &weights, 0).unwrap();
        let norm = edge_dot(&xhat, &xhat).unwrap();
        for t in 0..norm.len() {
            assert!((norm[t] - 1.0).abs() <= EXACT_TOL, "vertex rank {t}");
        }
    }

    #[test]
    fn gaussian_derivative_matches_edge_primitive_route() {
        let cloud = PointCloud::generate_interlaced_mesh(1, 6, 1.0).unwrap();
        let sigma = 0.4;
        let u = sample(&cloud, |x| fmath::cos(2.0 * x[0]));
        let direct = gaussian_first_derivative(&cloud, sigma, &u, 0).unwrap();
        let weights = gaussian_edge_weights(&cloud, sigma, 0).unwrap();
        let train = cloud.train_ids();
        let train_u = DVector::from_fn(train.len(), |t, _| u[train[t]]);
        let train_points =
            DMatrix::from_fn(train.len(), 1, |t, _| cloud.coord(train[t], 0));
        let grad = nonlocal_gradient(&train_u, &weights).unwrap();
        let xhat = unit_vector(&train_points, &weights, 0).unwrap();
        let contracted = edge_dot(&grad, &xhat).unwrap();
        for t in 0..train.len() {
            assert!(
                (contracted[t] - direct.values()[t]).abs()
                    <= EXACT_TOL * direct.values()[t].abs().max(1.0)
            );
        }
    }

    #[test]
    fn gaussian_is_exact_on_linear_functions_with_two_vertices() {
        let points = DMatrix::from_iterator(2, 1, [0.2, 0.9]);
        let cloud = PointCloud::from_parts(points, vec![Role::Train; 2], None).unwrap();
        let u = sample(&cloud, |x| 3.0 * x[0] + 1.0);
        let field = gaussian_first_derivative(&cloud, 0.5, &u, 0).unwrap();
        assert!((field.values()[0] - 3.0).abs() <= EXACT_TOL);
        assert!((field.values()[1] - 3.0).abs() <= EXACT_TOL);
    }

    #[test]
    fn inner_product_averages() {
        let u = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let v = DVector::from_vec(vec![1.0, 1.0, 1.0]);
        assert_eq!(inner_product(&u, &v).unwrap(), 2.0);
    }

    proptest! {
        /// Operator linearity: D(a u + b v) = a D u + b D v.
        #[test]
        fn derivative_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let (cloud, set) = mesh_with_stencils(1, 6, 2);
            let u = sample(&cloud, |x| fmath::cos(2.0 * x[0]));
            let v = sample(&cloud, |x| x[0] * x[0] * x[0]);
            let combo = &u * a + &v * b;
            let du = first_derivative(&set, &cloud, &u, 0).unwrap();
            let dv = first_derivative(&set, &cloud, &v, 0).unwrap();
            let dcombo = first_derivative(&set, &cloud, &combo, 0).unwrap();
            for t in 0..dcombo.values().len() {
                let want = a * du.values()[t] + b * dv.values()[t];
                prop_assert!((dcombo.values()[t] - want).abs() <= 1e-9 * want.abs().max(1.0));
            }
        }

        /// Constants are annihilated regardless of the cloud.
        #[test]
        fn constants_are_annihilated(
            c in -10.0f64..10.0,
            m in 2usize..6,
            r in 1usize..=3,
        ) {
            let cloud = PointCloud::generate_interlaced_mesh(1, m, 1.0).unwrap();
            prop_assume!(cloud.train_ids().len() > r);
            let set = build_stencil_set(&cloud, r, BuildOptions::default()).unwrap().set;
            let u = DVector::from_element(cloud.len(), c);
            let field = first_derivative(&set, &cloud, &u, 0).unwrap();
            for t in 0..field.values().len() {
                prop_assert!(field.values()[t].abs() <= 1e-10 * c.abs().max(1.0));
            }
        }
    }
}
