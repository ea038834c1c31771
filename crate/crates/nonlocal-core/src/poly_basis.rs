//! Multi-indices, monomials, polynomials, and the moment systems whose
//! solutions are stencil weights.
//!
//! Multi-indices are ordered graded-lexicographically: ascending total
//! order, and within an order block descending lexicographic comparison of
//! the exponent tuples, so dimension 0 carries the highest priority. For
//! `p = 2` the sequence starts `(1,0), (0,1), (2,0), (1,1), (0,2), ...`.

use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;
use core::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::fmath;

/// Exponent tuple of a monomial `z^alpha = prod_d z_d^(alpha_d)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MultiIndex {
    exponents: Vec<u32>,
}

impl MultiIndex {
    pub fn new(exponents: Vec<u32>) -> Self {
        assert!(!exponents.is_empty(), "multi-index needs at least one dimension");
        Self { exponents }
    }

    /// The zero index (constant monomial) in `p` dimensions.
    pub fn zero(p: usize) -> Self {
        Self::new(alloc::vec![0; p])
    }

    /// The first-order index for dimension `mu`.
    pub fn unit(p: usize, mu: usize) -> Self {
        assert!(mu < p, "dimension out of range");
        let mut exponents = alloc::vec![0; p];
        exponents[mu] = 1;
        Self::new(exponents)
    }

    pub fn dim(&self) -> usize {
        self.exponents.len()
    }

    /// Total order `|alpha|`.
    pub fn order(&self) -> u32 {
        self.exponents.iter().sum()
    }

    pub fn exponents(&self) -> &[u32] {
        &self.exponents
    }

    pub fn is_zero(&self) -> bool {
        self.exponents.iter().all(|&e| e == 0)
    }

    /// Evaluates `z^alpha`. Zero exponents contribute a factor of one even
    /// at `z_d = 0`.
    pub fn eval(&self, z: &[f64]) -> f64 {
        assert_eq!(z.len(), self.dim(), "offset has wrong dimension");
        let mut acc = 1.0;
        for (d, &e) in self.exponents.iter().enumerate() {
            if e > 0 {
                acc *= fmath::powi(z[d], e as i32);
            }
        }
        acc
    }

    /// `alpha! = prod_d alpha_d!`.
    pub fn factorial(&self) -> f64 {
        let mut acc = 1.0;
        for &e in &self.exponents {
            for k in 2..=e {
                acc *= k as f64;
            }
        }
        acc
    }

    /// Dimensions listed in ascending order, each repeated by its
    /// exponent. This is the canonical application sequence when a
    /// higher derivative is built by composing first derivatives.
    pub fn canonical_dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.order() as usize);
        for (d, &e) in self.exponents.iter().enumerate() {
            for _ in 0..e {
                dims.push(d);
            }
        }
        dims
    }

    /// Compact text form, exponents joined by underscores: `(2,1)` becomes
    /// `"2_1"`. Used for column headers and diagnostics.
    pub fn label(&self) -> String {
        let mut s = String::new();
        for (i, e) in self.exponents.iter().enumerate() {
            if i > 0 {
                s.push('_');
            }
            let _ = write!(s, "{e}");
        }
        s
    }
}

impl PartialOrd for MultiIndex {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for MultiIndex {
    /// Graded lexicographic order: by total order, then by descending
    /// lexicographic comparison of the exponent tuples.
    fn cmp(&self, other: &Self) -> Ordering {
        assert_eq!(self.dim(), other.dim(), "comparing indices of different dimension");
        self.order()
            .cmp(&other.order())
            .then_with(|| other.exponents.cmp(&self.exponents))
    }
}

/// Whether constraint counting treats permutations of the same exponent
/// tuple as one constraint (`Unique`) or enumerates every dimension
/// sequence (`NonUnique`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CountingMode {
    Unique,
    NonUnique,
}

/// The multi-indices of orders `1..=r` in `p` dimensions, in enumeration
/// order. `NonUnique` sets contain one entry per dimension sequence, so
/// the same exponent tuple appears repeatedly.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiIndexSet {
    p: usize,
    r: usize,
    mode: CountingMode,
    indices: Vec<MultiIndex>,
}

impl MultiIndexSet {
    pub fn p(&self) -> usize {
        self.p
    }

    /// Highest order included.
    pub fn r(&self) -> usize {
        self.r
    }

    pub fn mode(&self) -> CountingMode {
        self.mode
    }

    /// Number of constraints `q`.
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[MultiIndex] {
        &self.indices
    }

    pub fn position(&self, index: &MultiIndex) -> Option<usize> {
        self.indices.iter().position(|i| i == index)
    }

    /// Position of the first-order index for dimension `mu`; this is where
    /// the right-hand side of a first-derivative moment system carries its
    /// single one. In graded-lexicographic order the first `p` entries are
    /// exactly the unit indices, so the position is `mu` itself.
    pub fn unit_position(&self, mu: usize) -> usize {
        assert!(mu < self.p, "dimension out of range");
        debug_assert_eq!(self.indices[mu], MultiIndex::unit(self.p, mu));
        mu
    }
}

/// Enumerates the multi-indices of orders `1..=r` in `p` dimensions.
///
/// `Unique` mode lists each exponent tuple once in graded lexicographic
/// order. `NonUnique` mode lists one entry per dimension sequence
/// `(mu_1, ..., mu_s)`, `s = 1..=r`, ordered by length and then
/// lexicographically by the sequence.
pub fn enumerate_multi_indices(p: usize, r: usize, mode: CountingMode) -> MultiIndexSet {
    assert!(p >= 1, "dimension must be at least 1");
    let mut indices = Vec::new();
    match mode {
        CountingMode::Unique => {
            for order in 1..=r {
                push_order_block(p, order as u32, &mut indices);
            }
        }
        CountingMode::NonUnique => {
            for len in 1..=r {
                let mut seq = alloc::vec![0usize; len];
                loop {
                    let mut exp = alloc::vec![0u32; p];
                    for &d in &seq {
                        exp[d] += 1;
                    }
                    indices.push(MultiIndex::new(exp));
                    // Advance the sequence like a base-p odometer.
                    let mut pos = len;
                    loop {
                        if pos == 0 {
                            break;
                        }
                        pos -= 1;
                        seq[pos] += 1;
                        if seq[pos] < p {
                            break;
                        }
                        seq[pos] = 0;
                    }
                    if seq.iter().all(|&d| d == 0) {
                        break;
                    }
                }
            }
        }
    }
    MultiIndexSet { p, r, mode, indices }
}

/// Appends all exponent tuples of the given total order in descending
/// lexicographic order (dimension 0 exponent decreasing first).
fn push_order_block(p: usize, order: u32, out: &mut Vec<MultiIndex>) {
    fn recurse(remaining: u32, slot: usize, current: &mut Vec<u32>, out: &mut Vec<MultiIndex>) {
        if slot + 1 == current.len() {
            current[slot] = remaining;
            out.push(MultiIndex::new(current.clone()));
            return;
        }
        // Highest exponent first in the leading slot yields descending
        // lexicographic order.
        for e in (0..=remaining).rev() {
            current[slot] = e;
            recurse(remaining - e, slot + 1, current, out);
        }
    }
    let mut current = alloc::vec![0u32; p];
    recurse(order, 0, &mut current, out);
}

/// Closed-form count of the constraints enumerated by
/// [`enumerate_multi_indices`]: `C(p+r, r) - 1` unique tuples, or
/// `p + p^2 + ... + p^r` dimension sequences.
pub fn count_constraints(p: usize, r: usize, mode: CountingMode) -> usize {
    match mode {
        CountingMode::Unique => binomial(p + r, r) - 1,
        CountingMode::NonUnique => {
            let mut total = 0usize;
            let mut power = 1usize;
            for _ in 1..=r {
                power *= p;
                total += power;
            }
            total
        }
    }
}

/// Count restricted to a single order `k`: `C(p+k-1, k)` unique tuples or
/// `p^k` sequences.
pub fn count_constraints_at_order(p: usize, k: usize, mode: CountingMode) -> usize {
    match mode {
        CountingMode::Unique => binomial(p + k - 1, k),
        CountingMode::NonUnique => p.pow(k as u32),
    }
}

fn binomial(n: usize, k: usize) -> usize {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc as usize
}

/// Errors from moment-system assembly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BasisError {
    /// Offsets have a different spatial dimension than the index set.
    DimensionMismatch { offsets: usize, set: usize },
    /// Requested dimension is out of range.
    BadDimension { mu: usize, p: usize },
    /// An offset has `z_mu = 0`, so the monomial ratio against `z_mu` is
    /// undefined. Neighborhood growth must skip such vertices.
    AlignedOffset { row: usize },
}

impl fmt::Display for BasisError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::DimensionMismatch { offsets, set } => {
                write!(f, "offsets are {offsets}-dimensional but the index set is {set}-dimensional")
            }
            Self::BadDimension { mu, p } => write!(f, "dimension {mu} out of range for p = {p}"),
            Self::AlignedOffset { row } => {
                write!(f, "offset row {row} has zero component along the derivative dimension")
            }
        }
    }
}

impl core::error::Error for BasisError {}

/// The linear system defining first-derivative stencil weights.
///
/// Row `i` of `matrix` holds the monomial ratios `z_i^alpha / z_i^mu` for
/// every index `alpha` in the constraint set; the weights `a` must satisfy
/// `matrix^T a = rhs`, where `rhs` is one at the first-order index `mu` and
/// zero elsewhere. Entries are stored unscaled; conditioning rescales are
/// applied on demand via [`equilibrated`](MomentSystem::equilibrated).
#[derive(Debug, Clone, PartialEq)]
pub struct MomentSystem {
    matrix: DMatrix<f64>,
    rhs: DVector<f64>,
    mu: usize,
    column_orders: Vec<u32>,
}

impl MomentSystem {
    /// Number of neighbors `d` (rows).
    pub fn d(&self) -> usize {
        self.matrix.nrows()
    }

    /// Number of constraints `q` (columns).
    pub fn q(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn mu(&self) -> usize {
        self.mu
    }

    /// The raw ratio matrix, one row per neighbor.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn rhs(&self) -> &DVector<f64> {
        &self.rhs
    }

    /// The ratio matrix with column `c` scaled by `scale^(1 - order_c)`.
    ///
    /// This equals assembling the system from offsets `z / scale`, so with
    /// `scale` near the neighborhood radius all entries are O(1). The
    /// right-hand side is untouched: its only nonzero sits at an order-one
    /// index whose scale factor is exactly one, hence the scaled system has
    /// the same exact solution as the raw one.
    pub fn equilibrated(&self, scale: f64) -> DMatrix<f64> {
        assert!(scale.is_finite() && scale > 0.0, "scale must be finite and positive");
        let mut scaled = self.matrix.clone();
        for (c, &order) in self.column_orders.iter().enumerate() {
            let factor = fmath::powi(scale, 1 - order as i32);
            for i in 0..scaled.nrows() {
                scaled[(i, c)] *= factor;
            }
        }
        scaled
    }

    /// Largest absolute violation of the unscaled moment constraints by a
    /// candidate weight vector.
    pub fn residual(&self, weights: &DVector<f64>) -> f64 {
        assert_eq!(weights.len(), self.d(), "one weight per neighbor");
        let defect = self.matrix.transpose() * weights - &self.rhs;
        defect.amax()
    }
}

/// Assembles the moment system for derivative dimension `mu` from
/// neighbor offsets (one row per neighbor) and a constraint set.
pub fn assemble_moment_system(
    offsets: &DMatrix<f64>,
    mu: usize,
    set: &MultiIndexSet,
) -> Result<MomentSystem, BasisError> {
    if offsets.ncols() != set.p() {
        return Err(BasisError::DimensionMismatch { offsets: offsets.ncols(), set: set.p() });
    }
    if mu >= set.p() {
        return Err(BasisError::BadDimension { mu, p: set.p() });
    }
    let d = offsets.nrows();
    let q = set.len();
    let mut matrix = DMatrix::zeros(d, q);
    let mut z = alloc::vec![0.0; set.p()];
    for i in 0..d {
        for (dim, slot) in z.iter_mut().enumerate() {
            *slot = offsets[(i, dim)];
        }
        if z[mu] == 0.0 {
            return Err(BasisError::AlignedOffset { row: i });
        }
        for (c, index) in set.indices().iter().enumerate() {
            matrix[(i, c)] = index.eval(&z) / z[mu];
        }
    }
    let mut rhs = DVector::zeros(q);
    rhs[set.unit_position(mu)] = 1.0;
    let column_orders = set.indices().iter().map(|i| i.order()).collect();
    Ok(MomentSystem { matrix, rhs, mu, column_orders })
}

/// A scalar field with exact derivatives of every order: the ground truth
/// for convergence studies.
pub trait AnalyticField {
    /// Spatial dimension.
    fn dim(&self) -> usize;

    fn eval(&self, x: &[f64]) -> f64;

    /// The exact partial derivative indexed by `alpha` at `x`.
    fn partial(&self, alpha: &MultiIndex, x: &[f64]) -> f64;
}

/// A polynomial in `p` variables, stored as merged monomial terms in
/// enumeration order.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    p: usize,
    terms: Vec<(MultiIndex, f64)>,
}

impl Polynomial {
    /// Builds a polynomial, merging duplicate indices and dropping exact
    /// zero coefficients.
    pub fn from_terms(p: usize, terms: Vec<(MultiIndex, f64)>) -> Self {
        let mut merged: Vec<(MultiIndex, f64)> = Vec::new();
        for (index, coeff) in terms {
            assert_eq!(index.dim(), p, "term dimension mismatch");
            match merged.iter_mut().find(|(i, _)| *i == index) {
                Some((_, c)) => *c += coeff,
                None => merged.push((index, coeff)),
            }
        }
        merged.retain(|(_, c)| *c != 0.0);
        merged.sort_by(|(a, _), (b, _)| a.cmp(b));
        Self { p, terms: merged }
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    pub fn terms(&self) -> &[(MultiIndex, f64)] {
        &self.terms
    }

    /// Highest total order among the terms; zero for the zero polynomial.
    pub fn max_order(&self) -> u32 {
        self.terms.iter().map(|(i, _)| i.order()).max().unwrap_or(0)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.p, "point has wrong dimension");
        self.terms.iter().map(|(i, c)| c * i.eval(x)).sum()
    }

    /// The polynomial `d^|alpha| self / dx^alpha`, computed term by term:
    /// `x^beta` maps to `prod_d beta_d!/(beta_d - alpha_d)! x^(beta-alpha)`
    /// when `beta >= alpha` componentwise and vanishes otherwise.
    pub fn partial_poly(&self, alpha: &MultiIndex) -> Polynomial {
        assert_eq!(alpha.dim(), self.p, "derivative index has wrong dimension");
        let mut terms = Vec::new();
        'term: for (beta, coeff) in &self.terms {
            let mut exp = Vec::with_capacity(self.p);
            let mut factor = *coeff;
            for d in 0..self.p {
                let b = beta.exponents()[d];
                let a = alpha.exponents()[d];
                if b < a {
                    continue 'term;
                }
                for k in (b - a + 1)..=b {
                    factor *= k as f64;
                }
                exp.push(b - a);
            }
            terms.push((MultiIndex::new(exp), factor));
        }
        Polynomial::from_terms(self.p, terms)
    }
}

impl AnalyticField for Polynomial {
    fn dim(&self) -> usize {
        self.p
    }

    fn eval(&self, x: &[f64]) -> f64 {
        Polynomial::eval(self, x)
    }

    fn partial(&self, alpha: &MultiIndex, x: &[f64]) -> f64 {
        self.partial_poly(alpha).eval(x)
    }
}

/// All multi-indices of order `0..=max_order` in enumeration order; the
/// coefficient layout for dense polynomials.
pub fn dense_multi_indices(p: usize, max_order: usize) -> Vec<MultiIndex> {
    let mut indices = alloc::vec![MultiIndex::zero(p)];
    for order in 1..=max_order {
        push_order_block(p, order as u32, &mut indices);
    }
    indices
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn mi(exp: &[u32]) -> MultiIndex {
        MultiIndex::new(exp.to_vec())
    }

    #[test]
    fn enumeration_order_p2_r3() {
        let set = enumerate_multi_indices(2, 3, CountingMode::Unique);
        let expected = vec![
            mi(&[1, 0]),
            mi(&[0, 1]),
            mi(&[2, 0]),
            mi(&[1, 1]),
            mi(&[0, 2]),
            mi(&[3, 0]),
            mi(&[2, 1]),
            mi(&[1, 2]),
            mi(&[0, 3]),
        ];
        assert_eq!(set.indices(), expected.as_slice());
    }

    #[test]
    fn constraint_counts_match_known_values() {
        assert_eq!(count_constraints(1, 4, CountingMode::Unique), 4);
        assert_eq!(count_constraints(2, 3, CountingMode::Unique), 9);
        assert_eq!(count_constraints(2, 4, CountingMode::Unique), 14);
        assert_eq!(count_constraints(3, 4, CountingMode::Unique), 34);
        assert_eq!(count_constraints(2, 3, CountingMode::NonUnique), 14);
        assert_eq!(count_constraints(1, 5, CountingMode::NonUnique), 5);
        assert_eq!(count_constraints_at_order(3, 2, CountingMode::Unique), 6);
        assert_eq!(count_constraints_at_order(3, 2, CountingMode::NonUnique), 9);
    }

    #[test]
    fn unit_positions_lead_the_enumeration() {
        let set = enumerate_multi_indices(3, 2, CountingMode::Unique);
        for mu in 0..3 {
            assert_eq!(set.unit_position(mu), mu);
            assert_eq!(set.indices()[mu], MultiIndex::unit(3, mu));
        }
    }

    #[test]
    fn eval_and_factorial() {
        let idx = mi(&[2, 1]);
        assert_eq!(idx.eval(&[2.0, 3.0]), 12.0);
        assert_eq!(idx.factorial(), 2.0);
        assert_eq!(mi(&[3, 2]).factorial(), 12.0);
        assert_eq!(mi(&[0, 0]).eval(&[5.0, -1.0]), 1.0);
        // Zero exponents do not poison evaluation at zero components.
        assert_eq!(mi(&[0, 2]).eval(&[0.0, 2.0]), 4.0);
    }

    #[test]
    fn canonical_dims_ascend() {
        assert_eq!(mi(&[2, 1]).canonical_dims(), vec![0, 0, 1]);
        assert_eq!(mi(&[0, 3]).canonical_dims(), vec![1, 1, 1]);
    }

    #[test]
    fn moment_row_for_axis_aligned_offset() {
        let set = enumerate_multi_indices(2, 3, CountingMode::Unique);
        let h = 0.5;
        let offsets = DMatrix::from_row_slice(1, 2, &[h, 0.0]);
        let system = assemble_moment_system(&offsets, 0, &set).unwrap();
        let expected = [1.0, 0.0, h, 0.0, 0.0, h * h, 0.0, 0.0, 0.0];
        for (c, &want) in expected.iter().enumerate() {
            assert_eq!(system.matrix()[(0, c)], want);
        }
        assert_eq!(system.rhs()[0], 1.0);
        assert_eq!(system.rhs().iter().filter(|&&v| v != 0.0).count(), 1);
    }

    #[test]
    fn aligned_offsets_are_rejected() {
        let set = enumerate_multi_indices(2, 2, CountingMode::Unique);
        let offsets = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.0, 1.0]);
        assert_eq!(
            assemble_moment_system(&offsets, 0, &set),
            Err(BasisError::AlignedOffset { row: 1 })
        );
    }

    #[test]
    fn polynomial_partials() {
        // u = x^2 y + 3.
        let u = Polynomial::from_terms(2, vec![(mi(&[2, 1]), 1.0), (mi(&[0, 0]), 3.0)]);
        assert_eq!(u.eval(&[2.0, 5.0]), 23.0);
        assert_eq!(u.partial(&mi(&[1, 0]), &[2.0, 5.0]), 20.0);
        assert_eq!(u.partial(&mi(&[1, 1]), &[2.0, 5.0]), 4.0);
        assert_eq!(u.partial(&mi(&[2, 1]), &[7.0, -1.0]), 2.0);
        assert_eq!(u.partial(&mi(&[3, 0]), &[7.0, -1.0]), 0.0);
        assert_eq!(u.max_order(), 3);
    }

    #[test]
    fn dense_indices_include_constant() {
        let dense = dense_multi_indices(2, 2);
        assert_eq!(dense.len(), 6);
        assert_eq!(dense[0], MultiIndex::zero(2));
        assert_eq!(dense[1], mi(&[1, 0]));
    }

    proptest! {
        /// Closed-form counts agree with the enumeration length.
        #[test]
        fn counts_match_enumeration(p in 1usize..=4, r in 1usize..=6) {
            for mode in [CountingMode::Unique, CountingMode::NonUnique] {
                prop_assert_eq!(
                    enumerate_multi_indices(p, r, mode).len(),
                    count_constraints(p, r, mode)
                );
            }
            let unique: usize = (1..=r)
                .map(|k| count_constraints_at_order(p, k, CountingMode::Unique))
                .sum();
            prop_assert_eq!(unique, count_constraints(p, r, CountingMode::Unique));
        }

        /// Unique enumeration is strictly increasing under the graded
        /// lexicographic order (hence duplicate-free).
        #[test]
        fn unique_enumeration_is_strictly_sorted(p in 1usize..=4, r in 1usize..=5) {
            let set = enumerate_multi_indices(p, r, CountingMode::Unique);
            for pair in set.indices().windows(2) {
                prop_assert!(pair[0] < pair[1]);
            }
        }

        /// Column equilibration equals assembling from rescaled offsets.
        #[test]
        fn equilibration_matches_rescaled_offsets(
            zs in proptest::collection::vec(0.1f64..2.0, 3),
            scale in 0.05f64..5.0,
        ) {
            let set = enumerate_multi_indices(1, 3, CountingMode::Unique);
            let offsets = DMatrix::from_row_slice(3, 1, &zs);
            let system = assemble_moment_system(&offsets, 0, &set).unwrap();
            let scaled = system.equilibrated(scale);
            let rescaled_offsets = offsets.map(|z| z / scale);
            let direct = assemble_moment_system(&rescaled_offsets, 0, &set).unwrap();
            for i in 0..scaled.nrows() {
                for c in 0..scaled.ncols() {
                    let got = scaled[(i, c)];
                    let want = direct.matrix()[(i, c)];
                    prop_assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0));
                }
            }
        }
    }
}
