//! Linear model discovery machinery: design matrices over named state
//! functionals, least-squares and ridge solvers, weighted multi-norm
//! losses, backward stepwise elimination, and grouped cross-validation.
//!
//! The intended workflow: evaluate a library of candidate terms on a
//! state series to build a [`DesignMatrix`], pick a [`LossSpec`] and a
//! [`Solver`], then walk the full elimination path with
//! [`stepwise_eliminate`] and judge parsimony from the loss curve, with
//! [`cross_validate`] guarding against overfitting across trajectories.

use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::fmath;

/// Relative singular-value cutoff for least squares: values below
/// `max(d, q) * RANK_EPS * sigma_max` are truncated before inverting,
/// following the usual SVD rank-tolerance recipe.
const RANK_EPS: f64 = f64::EPSILON;

/// Everything that can go wrong while assembling or fitting models.
#[derive(Debug, Clone, PartialEq)]
pub enum RegressError {
    /// A term evaluation or matrix entry produced a non-finite value.
    NonFinite { what: &'static str },
    /// A term referenced a state component the record does not carry.
    UnknownKey { key: String },
    /// Fewer observations than active terms; the fit has no unique
    /// least-squares solution.
    UnderDetermined { rows: usize, cols: usize },
    /// The least-squares backend failed to produce a solution; with
    /// the truncated-spectrum solver this marks an internal breakdown,
    /// not mere collinearity.
    SingularSystem,
    /// Cross-validation needs at least two distinct row groups.
    SingleGroup,
    BadParameter { what: &'static str },
}

impl core::fmt::Display for RegressError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            RegressError::NonFinite { what } => {
                write!(f, "non-finite value in {what}")
            }
            RegressError::UnknownKey { key } => {
                write!(f, "state record has no component named {key:?}")
            }
            RegressError::UnderDetermined { rows, cols } => {
                write!(f, "under-determined fit: {rows} rows for {cols} terms")
            }
            RegressError::SingularSystem => {
                write!(f, "least-squares backend failed to solve the system")
            }
            RegressError::SingleGroup => {
                write!(f, "cross-validation needs at least two row groups")
            }
            RegressError::BadParameter { what } => write!(f, "{what}"),
        }
    }
}

impl core::error::Error for RegressError {}

/// One candidate model term: a labelled product of named state
/// components raised to integer powers. An empty factor list is the
/// constant term 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelTerm {
    label: String,
    factors: Vec<(String, u32)>,
}

impl ModelTerm {
    pub fn new(label: impl Into<String>, factors: Vec<(String, u32)>) -> Self {
        Self { label: label.into(), factors }
    }

    /// The constant term.
    pub fn constant(label: impl Into<String>) -> Self {
        Self { label: label.into(), factors: Vec::new() }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn factors(&self) -> &[(String, u32)] {
        &self.factors
    }

    /// Evaluates the term against a state record exposed as a name
    /// lookup. Fails on unknown names and on non-finite products, so a
    /// successfully evaluated design is finite by construction.
    pub fn eval<F>(&self, get: F) -> Result<f64, RegressError>
    where
        F: Fn(&str) -> Option<f64>,
    {
        let mut product = 1.0;
        for (key, power) in &self.factors {
            let value = get(key).ok_or_else(|| RegressError::UnknownKey { key: key.clone() })?;
            product *= fmath::powi(value, *power as i32);
        }
        if !product.is_finite() {
            return Err(RegressError::NonFinite { what: "model term evaluation" });
        }
        Ok(product)
    }
}

/// Observations for a linear fit: one row per time sample (possibly
/// concatenated across trajectories), one column per candidate term,
/// plus the regression target and a trajectory id per row.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    matrix: DMatrix<f64>,
    target: DVector<f64>,
    labels: Vec<String>,
    groups: Vec<usize>,
}

impl DesignMatrix {
    /// Validates shapes and finiteness. Wide designs (more columns than
    /// rows) are accepted here and flagged by
    /// [`DesignMatrix::is_under_determined`]; full fits on them fail.
    pub fn new(
        matrix: DMatrix<f64>,
        target: DVector<f64>,
        labels: Vec<String>,
        groups: Vec<usize>,
    ) -> Result<Self, RegressError> {
        if matrix.ncols() == 0 || matrix.nrows() == 0 {
            return Err(RegressError::BadParameter { what: "design needs rows and columns" });
        }
        if labels.len() != matrix.ncols() {
            return Err(RegressError::BadParameter { what: "one label per column required" });
        }
        if target.len() != matrix.nrows() || groups.len() != matrix.nrows() {
            return Err(RegressError::BadParameter {
                what: "target and groups must have one entry per row",
            });
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(RegressError::NonFinite { what: "design matrix" });
        }
        if target.iter().any(|v| !v.is_finite()) {
            return Err(RegressError::NonFinite { what: "regression target" });
        }
        Ok(Self { matrix, target, labels, groups })
    }

    pub fn n_rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn n_terms(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn target(&self) -> &DVector<f64> {
        &self.target
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn groups(&self) -> &[usize] {
        &self.groups
    }

    pub fn is_under_determined(&self) -> bool {
        self.matrix.nrows() < self.matrix.ncols()
    }

    /// A new design over the given column subset (same rows, target and
    /// groups). Columns keep the requested order.
    pub fn restrict(&self, columns: &[usize]) -> Result<Self, RegressError> {
        if columns.is_empty() {
            return Err(RegressError::BadParameter { what: "column subset must be non-empty" });
        }
        if columns.iter().any(|&c| c >= self.n_terms()) {
            return Err(RegressError::BadParameter { what: "column subset index out of range" });
        }
        Ok(Self {
            matrix: self.matrix.select_columns(columns.iter()),
            target: self.target.clone(),
            labels: columns.iter().map(|&c| self.labels[c].clone()).collect(),
            groups: self.groups.clone(),
        })
    }

    /// A new design over the given row subset (all columns).
    fn restrict_rows(&self, rows: &[usize]) -> Self {
        Self {
            matrix: self.matrix.select_rows(rows.iter()),
            target: DVector::from_iterator(rows.len(), rows.iter().map(|&i| self.target[i])),
            labels: self.labels.clone(),
            groups: rows.iter().map(|&i| self.groups[i]).collect(),
        }
    }
}

/// Weights for the combined loss `w1*l1 + w2*l2 + winf*linf`. Each
/// norm is reported on per-sample mean scale (`||r||_x / n^(1/x)`), so
/// values stay comparable across trajectory lengths; the max norm is
/// untouched by that convention.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSpec {
    pub w1: f64,
    pub w2: f64,
    pub w_inf: f64,
}

impl LossSpec {
    /// Pure mean-scaled Euclidean loss.
    pub fn l2() -> Self {
        Self { w1: 0.0, w2: 1.0, w_inf: 0.0 }
    }

    fn validate(&self) -> Result<(), RegressError> {
        let weights = [self.w1, self.w2, self.w_inf];
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(RegressError::BadParameter { what: "loss weights must be >= 0" });
        }
        if weights.iter().all(|w| *w == 0.0) {
            return Err(RegressError::BadParameter { what: "at least one loss weight positive" });
        }
        Ok(())
    }
}

/// Weighted multi-norm loss of a residual vector; see [`LossSpec`] for
/// the normalization convention.
pub fn evaluate_loss(residuals: &[f64], spec: &LossSpec) -> Result<f64, RegressError> {
    spec.validate()?;
    if residuals.is_empty() {
        return Err(RegressError::BadParameter { what: "loss of an empty residual set" });
    }
    if residuals.iter().any(|r| !r.is_finite()) {
        return Err(RegressError::NonFinite { what: "residuals" });
    }
    let n = residuals.len() as f64;
    let mut loss = 0.0;
    if spec.w1 > 0.0 {
        let l1: f64 = residuals.iter().map(|r| r.abs()).sum();
        loss += spec.w1 * l1 / n;
    }
    if spec.w2 > 0.0 {
        let sq: f64 = residuals.iter().map(|r| r * r).sum();
        loss += spec.w2 * fmath::sqrt(sq / n);
    }
    if spec.w_inf > 0.0 {
        let linf = residuals.iter().fold(0.0f64, |acc, r| acc.max(r.abs()));
        loss += spec.w_inf * linf;
    }
    Ok(loss)
}

/// Fitting backend for all model-selection routines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Solver {
    Ols,
    Ridge { lambda: f64 },
}

impl Solver {
    fn validate(&self) -> Result<(), RegressError> {
        if let Solver::Ridge { lambda } = self {
            if !lambda.is_finite() || *lambda < 0.0 {
                return Err(RegressError::BadParameter { what: "ridge lambda must be >= 0" });
            }
        }
        Ok(())
    }

    fn fit(&self, design: &DesignMatrix) -> Result<DVector<f64>, RegressError> {
        match self {
            Solver::Ols => fit_ols(design),
            Solver::Ridge { lambda } => fit_ridge(design, *lambda),
        }
    }
}

/// Least squares via thin QR followed by an SVD of the small triangular
/// factor. Singular values below `max(rows, cols) * eps * sigma_max`
/// are truncated and the minimum-norm solution is returned, so
/// numerically rank-deficient designs (near-collinear functionals of
/// slowly evolving trajectories are the norm here) still fit instead of
/// erroring; truncated directions simply receive no coefficient mass.
fn least_squares(matrix: &DMatrix<f64>, target: &DVector<f64>) -> Result<DVector<f64>, RegressError> {
    let (rows, cols) = matrix.shape();
    if rows < cols {
        return Err(RegressError::UnderDetermined { rows, cols });
    }
    let qr = matrix.clone().qr();
    let projected = qr.q().transpose() * target;
    // R carries the full singular spectrum of the matrix, so the
    // truncated pseudo-inverse of R applied to Q^T y is the truncated
    // minimum-norm solution of the original problem at O(cols^3).
    let svd = qr.r().svd(true, true);
    let sigma_max = svd.singular_values.iter().fold(0.0f64, |acc, &s| acc.max(s));
    if sigma_max == 0.0 {
        // A zero design predicts zero everywhere; the minimum-norm
        // coefficients are zero.
        return Ok(DVector::zeros(cols));
    }
    let cutoff = rows.max(cols) as f64 * RANK_EPS * sigma_max;
    svd.solve(&projected, cutoff)
        .map(|solution| solution.column(0).into_owned())
        .map_err(|_| RegressError::SingularSystem)
}

/// Ordinary least squares: minimizes `||y - X c||_2`, returning the
/// minimum-norm coefficients when the design is numerically
/// rank-deficient.
pub fn fit_ols(design: &DesignMatrix) -> Result<DVector<f64>, RegressError> {
    least_squares(design.matrix(), design.target())
}

/// Per-column affine maps applied before a ridge solve and undone on
/// the returned coefficients.
struct Standardization {
    centers: Vec<f64>,
    scales: Vec<f64>,
    /// Index of the constant column that absorbs the intercept shift
    /// induced by centering; `None` disables centering entirely.
    absorber: Option<usize>,
}

/// Zero-mean/unit-variance column standardization when the design
/// carries a nonzero constant column to absorb the induced intercept;
/// otherwise unit-variance-about-zero scaling only, which keeps the
/// fitted predictions expressible without an intercept term.
fn standardize(matrix: &DMatrix<f64>) -> (DMatrix<f64>, Standardization) {
    let (rows, cols) = matrix.shape();
    let n = rows as f64;
    let mut is_constant = alloc::vec![false; cols];
    let mut absorber = None;
    for c in 0..cols {
        let col = matrix.column(c);
        let constant = (1..rows).all(|i| col[i] == col[0]);
        if constant && col[0] != 0.0 {
            is_constant[c] = true;
            if absorber.is_none() {
                absorber = Some(c);
            }
        }
    }
    let mut centers = alloc::vec![0.0; cols];
    let mut scales = alloc::vec![1.0; cols];
    let mut out = matrix.clone();
    for c in 0..cols {
        let col = matrix.column(c);
        if is_constant[c] {
            // Scale the constant column to all ones; centering would
            // zero it out.
            scales[c] = col[0];
        } else if absorber.is_some() {
            let mean = col.sum() / n;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            centers[c] = mean;
            if var > 0.0 {
                scales[c] = fmath::sqrt(var);
            }
        } else {
            let ms = col.iter().map(|v| v * v).sum::<f64>() / n;
            if ms > 0.0 {
                scales[c] = fmath::sqrt(ms);
            }
        }
        for i in 0..rows {
            out[(i, c)] = (matrix[(i, c)] - centers[c]) / scales[c];
        }
    }
    (out, Standardization { centers, scales, absorber })
}

fn unstandardize(std_coeffs: &DVector<f64>, st: &Standardization) -> DVector<f64> {
    let mut coeffs = DVector::from_fn(std_coeffs.len(), |c, _| std_coeffs[c] / st.scales[c]);
    if let Some(a) = st.absorber {
        let shift: f64 =
            (0..std_coeffs.len()).map(|c| std_coeffs[c] * st.centers[c] / st.scales[c]).sum();
        coeffs[a] -= shift / st.scales[a];
    }
    coeffs
}

/// Ridge regression: minimizes `||y - X c||_2^2 + lambda ||c||_2^2` on
/// the standardized design, returning coefficients on the original
/// scale. `lambda = 0` reproduces [`fit_ols`].
pub fn fit_ridge(design: &DesignMatrix, lambda: f64) -> Result<DVector<f64>, RegressError> {
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(RegressError::BadParameter { what: "ridge lambda must be >= 0" });
    }
    let (rows, cols) = design.matrix().shape();
    let (standardized, st) = standardize(design.matrix());
    let std_coeffs = if lambda == 0.0 {
        least_squares(&standardized, design.target())?
    } else {
        let root = fmath::sqrt(lambda);
        let mut augmented = DMatrix::zeros(rows + cols, cols);
        augmented.view_mut((0, 0), (rows, cols)).copy_from(&standardized);
        for c in 0..cols {
            augmented[(rows + c, c)] = root;
        }
        let mut target = DVector::zeros(rows + cols);
        target.rows_mut(0, rows).copy_from(design.target());
        least_squares(&augmented, &target)?
    };
    Ok(unstandardize(&std_coeffs, &st))
}

/// Residuals `y - X c` of a fitted model on a design.
pub fn residuals(design: &DesignMatrix, coefficients: &DVector<f64>) -> Vec<f64> {
    let predicted = design.matrix() * coefficients;
    (0..design.n_rows()).map(|i| design.target()[i] - predicted[i]).collect()
}

/// One fitted model along the elimination path.
#[derive(Debug, Clone, PartialEq)]
pub struct StepwiseStep {
    /// Active columns, ascending, as indices into the full design.
    pub terms: Vec<usize>,
    /// Term labels matching `terms`.
    pub labels: Vec<String>,
    /// Fitted coefficients matching `terms`.
    pub coefficients: Vec<f64>,
    /// Training loss of this fit under the quoted [`LossSpec`].
    pub loss: f64,
}

/// The full backward-elimination record, from the complete basis down
/// to a single term.
#[derive(Debug, Clone, PartialEq)]
pub struct StepwiseResult {
    pub path: Vec<StepwiseStep>,
    pub lambda: f64,
    pub loss_weights: LossSpec,
}

impl StepwiseResult {
    /// The path entry with exactly `n_terms` active terms, if the path
    /// reaches it.
    pub fn with_terms(&self, n_terms: usize) -> Option<&StepwiseStep> {
        self.path.iter().find(|step| step.terms.len() == n_terms)
    }
}

fn fit_subset(
    design: &DesignMatrix,
    columns: &[usize],
    solver: &Solver,
) -> Result<DVector<f64>, RegressError> {
    let restricted = design.restrict(columns)?;
    solver.fit(&restricted)
}

fn subset_loss(
    design: &DesignMatrix,
    columns: &[usize],
    coefficients: &DVector<f64>,
    loss: &LossSpec,
) -> Result<f64, RegressError> {
    let restricted = design.restrict(columns)?;
    evaluate_loss(&residuals(&restricted, coefficients), loss)
}

/// Greedy backward elimination: starting from the full basis, refit
/// every single-term-removal candidate and drop the term whose removal
/// leaves the lowest training loss, recording each fitted model on the
/// way down to one term. Ties drop the lower column index.
pub fn stepwise_eliminate(
    design: &DesignMatrix,
    loss: &LossSpec,
    solver: &Solver,
) -> Result<StepwiseResult, RegressError> {
    loss.validate()?;
    solver.validate()?;
    let mut active: Vec<usize> = (0..design.n_terms()).collect();
    let mut path = Vec::with_capacity(active.len());
    loop {
        let coefficients = fit_subset(design, &active, solver)?;
        let current_loss = subset_loss(design, &active, &coefficients, loss)?;
        path.push(StepwiseStep {
            terms: active.clone(),
            labels: active.iter().map(|&c| design.labels()[c].clone()).collect(),
            coefficients: coefficients.iter().copied().collect(),
            loss: current_loss,
        });
        if active.len() == 1 {
            break;
        }
        let mut best: Option<(f64, usize)> = None;
        for (slot, &column) in active.iter().enumerate() {
            let mut candidate = active.clone();
            candidate.remove(slot);
            let coeffs = fit_subset(design, &candidate, solver)?;
            let candidate_loss = subset_loss(design, &candidate, &coeffs, loss)?;
            let better = match best {
                None => true,
                // Strict improvement only: on an exact tie the earlier
                // candidate wins, which drops the lower column index.
                Some((best_loss, _)) => candidate_loss < best_loss,
            };
            if better {
                best = Some((candidate_loss, column));
            }
        }
        let (_, drop_column) = best.expect("at least two candidates when len > 1");
        active.retain(|&c| c != drop_column);
    }
    let lambda = match solver {
        Solver::Ols => 0.0,
        Solver::Ridge { lambda } => *lambda,
    };
    Ok(StepwiseResult { path, lambda, loss_weights: *loss })
}

/// Loss of one held-out trajectory under a model fitted on the rest.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldReport {
    pub group: usize,
    pub loss: f64,
}

/// Leave-one-trajectory-out cross-validation over the design's row
/// groups.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossValidation {
    pub folds: Vec<FoldReport>,
    pub mean_loss: f64,
}

/// For every distinct group: fit on all other rows, evaluate the loss
/// on the held-out rows. Groups are visited in ascending id order.
pub fn cross_validate(
    design: &DesignMatrix,
    loss: &LossSpec,
    solver: &Solver,
) -> Result<CrossValidation, RegressError> {
    loss.validate()?;
    solver.validate()?;
    let mut ids: Vec<usize> = design.groups().to_vec();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() < 2 {
        return Err(RegressError::SingleGroup);
    }
    let mut folds = Vec::with_capacity(ids.len());
    for &held_out in &ids {
        let train_rows: Vec<usize> = (0..design.n_rows())
            .filter(|&i| design.groups()[i] != held_out)
            .collect();
        let test_rows: Vec<usize> =
            (0..design.n_rows()).filter(|&i| design.groups()[i] == held_out).collect();
        let coefficients = solver.fit(&design.restrict_rows(&train_rows))?;
        let fold_loss = evaluate_loss(&residuals(&design.restrict_rows(&test_rows), &coefficients), loss)?;
        folds.push(FoldReport { group: held_out, loss: fold_loss });
    }
    let mean_loss = folds.iter().map(|f| f.loss).sum::<f64>() / folds.len() as f64;
    Ok(CrossValidation { folds, mean_loss })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use proptest::prelude::*;

    /// Agreement between two solvers that are definitionally equal.
    const SOLVER_MATCH_TOL: f64 = 1e-10;

    fn labels(n: usize) -> Vec<String> {
        (0..n).map(|c| alloc::format!("t{c}")).collect()
    }

    fn design_from(
        rows: usize,
        cols: usize,
        entries: impl Fn(usize, usize) -> f64,
        target: impl Fn(usize) -> f64,
    ) -> DesignMatrix {
        let matrix = DMatrix::from_fn(rows, cols, |i, j| entries(i, j));
        let y = DVector::from_fn(rows, |i, _| target(i));
        DesignMatrix::new(matrix, y, labels(cols), alloc::vec![0; rows]).unwrap()
    }

    /// Deterministic but irregular entries for synthetic designs.
    fn wiggle(i: usize, j: usize) -> f64 {
        let x = (i as f64 + 1.0) * 0.37 + (j as f64 + 1.0) * 1.13;
        (x * x * 0.11).sin() + 0.2 * (j as f64)
    }

    #[test]
    fn term_evaluates_products_of_powers() {
        let term = ModelTerm::new(
            "M*phi^2",
            alloc::vec![("M".to_string(), 1), ("phi".to_string(), 2)],
        );
        let value = term
            .eval(|key| match key {
                "M" => Some(0.5),
                "phi" => Some(3.0),
                _ => None,
            })
            .unwrap();
        assert_eq!(value, 4.5);
        assert_eq!(ModelTerm::constant("one").eval(|_| None).unwrap(), 1.0);
        let missing = term.eval(|key| (key == "M").then_some(1.0));
        assert_eq!(missing, Err(RegressError::UnknownKey { key: "phi".to_string() }));
    }

    #[test]
    fn ols_recovers_exact_linear_combination() {
        let design = design_from(12, 3, wiggle, |_| 0.0);
        let truth = DVector::from_column_slice(&[2.0, -1.5, 0.25]);
        let y = design.matrix() * &truth;
        let design =
            DesignMatrix::new(design.matrix().clone(), y, labels(3), alloc::vec![0; 12]).unwrap();
        let fitted = fit_ols(&design).unwrap();
        for c in 0..3 {
            assert!((fitted[c] - truth[c]).abs() <= SOLVER_MATCH_TOL, "coefficient {c}");
        }
        let max_residual =
            residuals(&design, &fitted).iter().fold(0.0f64, |acc, r| acc.max(r.abs()));
        assert!(max_residual <= SOLVER_MATCH_TOL);
    }

    #[test]
    fn ridge_at_zero_matches_ols() {
        // Constant column present: the center-and-scale path must still
        // reproduce the OLS coefficients exactly at lambda = 0.
        let design = design_from(15, 4, |i, j| if j == 0 { 1.0 } else { wiggle(i, j) }, |i| {
            1.0 + wiggle(i, 7)
        });
        let ols = fit_ols(&design).unwrap();
        let ridge = fit_ridge(&design, 0.0).unwrap();
        for c in 0..4 {
            assert!((ols[c] - ridge[c]).abs() <= SOLVER_MATCH_TOL, "coefficient {c}");
        }
        // No constant column: the scale-only path.
        let design = design_from(15, 4, wiggle, |i| wiggle(i, 9));
        let ols = fit_ols(&design).unwrap();
        let ridge = fit_ridge(&design, 0.0).unwrap();
        for c in 0..4 {
            assert!((ols[c] - ridge[c]).abs() <= SOLVER_MATCH_TOL, "coefficient {c}");
        }
    }

    #[test]
    fn tiny_lambda_behaves_as_near_ols() {
        let design = design_from(20, 5, wiggle, |i| wiggle(i, 11));
        let ols = fit_ols(&design).unwrap();
        let ridge = fit_ridge(&design, 1e-17).unwrap();
        for c in 0..5 {
            assert!((ols[c] - ridge[c]).abs() <= 1e-8, "coefficient {c}");
        }
    }

    #[test]
    fn under_determined_designs_are_rejected() {
        let wide = design_from(3, 5, wiggle, |_| 1.0);
        assert!(wide.is_under_determined());
        assert_eq!(fit_ols(&wide), Err(RegressError::UnderDetermined { rows: 3, cols: 5 }));
    }

    /// An exactly duplicated column must not break the fit: the
    /// truncated solver returns the minimum-norm coefficients, which
    /// split the twin columns' weight evenly and predict exactly what
    /// the deduplicated design would.
    #[test]
    fn duplicated_columns_share_weight_under_minimum_norm() {
        let collinear = design_from(10, 3, |i, j| wiggle(i, j.min(1)), |_| 1.0);
        let coeffs = fit_ols(&collinear).unwrap();
        assert!((coeffs[1] - coeffs[2]).abs() <= SOLVER_MATCH_TOL, "equal split");
        let unique = design_from(10, 2, wiggle, |_| 1.0);
        let reference = fit_ols(&unique).unwrap();
        assert!((coeffs[0] - reference[0]).abs() <= SOLVER_MATCH_TOL);
        assert!((coeffs[1] + coeffs[2] - reference[1]).abs() <= SOLVER_MATCH_TOL);
        // Ridge handles the duplicate through its own regularization.
        assert!(fit_ridge(&collinear, 1e-6).is_ok());
    }

    #[test]
    fn loss_follows_the_mean_scale_convention() {
        let zero = evaluate_loss(&[0.0, 0.0, 0.0], &LossSpec::l2()).unwrap();
        assert_eq!(zero, 0.0);
        let l2 = evaluate_loss(&[3.0, 4.0], &LossSpec::l2()).unwrap();
        assert!((l2 - 5.0 / 2.0f64.sqrt()).abs() <= 1e-15);
        let l1 = evaluate_loss(&[3.0, 4.0], &LossSpec { w1: 1.0, w2: 0.0, w_inf: 0.0 }).unwrap();
        assert!((l1 - 3.5).abs() <= 1e-15);
        let linf =
            evaluate_loss(&[3.0, -4.0], &LossSpec { w1: 0.0, w2: 0.0, w_inf: 1.0 }).unwrap();
        assert_eq!(linf, 4.0);
        let mixed =
            evaluate_loss(&[3.0, 4.0], &LossSpec { w1: 1.0, w2: 1.0, w_inf: 1.0 }).unwrap();
        assert!((mixed - (3.5 + 5.0 / 2.0f64.sqrt() + 4.0)).abs() <= 1e-15);
    }

    #[test]
    fn l1_and_l2_can_rank_residual_pairs_differently() {
        // Oscillatory small residuals vs one concentrated spike: the
        // mean-absolute norm prefers the spike, the Euclidean norm
        // prefers the oscillation.
        let spread = [1.0, -1.0, 1.0, -1.0];
        let spike = [2.2, 0.0, 0.0, 0.0];
        let w1 = LossSpec { w1: 1.0, w2: 0.0, w_inf: 0.0 };
        let w2 = LossSpec::l2();
        assert!(evaluate_loss(&spike, &w1).unwrap() < evaluate_loss(&spread, &w1).unwrap());
        assert!(evaluate_loss(&spike, &w2).unwrap() > evaluate_loss(&spread, &w2).unwrap());
    }

    #[test]
    fn degenerate_loss_specs_are_rejected() {
        let zeroes = LossSpec { w1: 0.0, w2: 0.0, w_inf: 0.0 };
        assert!(evaluate_loss(&[1.0], &zeroes).is_err());
        let negative = LossSpec { w1: -1.0, w2: 1.0, w_inf: 0.0 };
        assert!(evaluate_loss(&[1.0], &negative).is_err());
        assert!(evaluate_loss(&[], &LossSpec::l2()).is_err());
    }

    #[test]
    fn stepwise_recovers_the_generating_terms() {
        // y = 3*t1 - 0.5*t4 over a 5-term basis, noiseless: the two
        // generating terms must survive to the 2-term model.
        let matrix = DMatrix::from_fn(30, 5, wiggle);
        let y = DVector::from_fn(30, |i, _| 3.0 * matrix[(i, 1)] - 0.5 * matrix[(i, 4)]);
        let design = DesignMatrix::new(matrix, y, labels(5), alloc::vec![0; 30]).unwrap();
        let result = stepwise_eliminate(&design, &LossSpec::l2(), &Solver::Ols).unwrap();
        assert_eq!(result.path.len(), 5);
        let two = result.with_terms(2).unwrap();
        assert_eq!(two.terms, alloc::vec![1, 4]);
        assert!((two.coefficients[0] - 3.0).abs() <= 1e-8);
        assert!((two.coefficients[1] + 0.5).abs() <= 1e-8);
        assert!(two.loss <= 1e-8);
        // Sizes decrease strictly one at a time from the full model.
        for (i, step) in result.path.iter().enumerate() {
            assert_eq!(step.terms.len(), 5 - i);
        }
    }

    #[test]
    fn recorded_losses_match_their_recorded_models() {
        let matrix = DMatrix::from_fn(18, 4, wiggle);
        let y = DVector::from_fn(18, |i, _| wiggle(i, 13));
        let design = DesignMatrix::new(matrix, y, labels(4), alloc::vec![0; 18]).unwrap();
        let spec = LossSpec { w1: 0.3, w2: 1.0, w_inf: 0.1 };
        let result = stepwise_eliminate(&design, &spec, &Solver::Ols).unwrap();
        for step in &result.path {
            let restricted = design.restrict(&step.terms).unwrap();
            let coeffs = DVector::from_column_slice(&step.coefficients);
            let replayed = evaluate_loss(&residuals(&restricted, &coeffs), &spec).unwrap();
            assert!((replayed - step.loss).abs() <= 1e-12 * (1.0 + step.loss));
        }
    }

    #[test]
    fn single_term_design_yields_a_single_step_path() {
        let design = design_from(6, 1, wiggle, |i| 2.0 * wiggle(i, 0));
        let result = stepwise_eliminate(&design, &LossSpec::l2(), &Solver::Ols).unwrap();
        assert_eq!(result.path.len(), 1);
        assert_eq!(result.path[0].terms, alloc::vec![0]);
        assert!((result.path[0].coefficients[0] - 2.0).abs() <= 1e-10);
    }

    #[test]
    fn cross_validation_on_duplicated_trajectories_matches_training() {
        // Two identical groups: leaving either out fits the same model
        // the training rows would, so held-out loss equals training
        // loss.
        let rows = 10;
        let matrix = DMatrix::from_fn(2 * rows, 3, |i, j| wiggle(i % rows, j));
        let y = DVector::from_fn(2 * rows, |i, _| wiggle(i % rows, 5));
        let groups: Vec<usize> = (0..2 * rows).map(|i| i / rows).collect();
        let design = DesignMatrix::new(matrix, y, labels(3), groups).unwrap();
        let cv = cross_validate(&design, &LossSpec::l2(), &Solver::Ols).unwrap();
        assert_eq!(cv.folds.len(), 2);
        let full_fit = fit_ols(&design).unwrap();
        let training = evaluate_loss(&residuals(&design, &full_fit), &LossSpec::l2()).unwrap();
        for fold in &cv.folds {
            assert!((fold.loss - training).abs() <= 1e-10 * (1.0 + training));
        }
        assert!((cv.mean_loss - training).abs() <= 1e-10 * (1.0 + training));
    }

    #[test]
    fn cross_validation_held_out_loss_vanishes_for_the_true_model() {
        let matrix = DMatrix::from_fn(24, 3, wiggle);
        let y = DVector::from_fn(24, |i, _| 1.5 * matrix[(i, 0)] - 2.0 * matrix[(i, 2)]);
        let groups: Vec<usize> = (0..24).map(|i| i / 8).collect();
        let design = DesignMatrix::new(matrix, y, labels(3), groups).unwrap();
        let cv = cross_validate(&design, &LossSpec::l2(), &Solver::Ols).unwrap();
        assert_eq!(cv.folds.len(), 3);
        for fold in &cv.folds {
            assert!(fold.loss <= 1e-10, "group {} loss {}", fold.group, fold.loss);
        }
    }

    #[test]
    fn single_group_designs_cannot_be_cross_validated() {
        let design = design_from(8, 2, wiggle, |_| 1.0);
        assert_eq!(
            cross_validate(&design, &LossSpec::l2(), &Solver::Ols),
            Err(RegressError::SingleGroup)
        );
    }

    #[test]
    fn non_finite_designs_are_rejected_at_construction() {
        let mut matrix = DMatrix::from_fn(4, 2, wiggle);
        matrix[(2, 1)] = f64::NAN;
        let result = DesignMatrix::new(
            matrix,
            DVector::zeros(4),
            labels(2),
            alloc::vec![0; 4],
        );
        assert_eq!(result, Err(RegressError::NonFinite { what: "design matrix" }));
    }

    proptest! {
        /// Removing a term can never decrease the Euclidean training
        /// loss of the refit model (nested least squares).
        #[test]
        fn stepwise_losses_are_monotone_under_l2_ols(
            seed in 0u64..1000,
            rows in 8usize..16,
            cols in 2usize..5,
        ) {
            let matrix = DMatrix::from_fn(rows, cols, |i, j| {
                wiggle(i + seed as usize, j)
            });
            let y = DVector::from_fn(rows, |i, _| wiggle(i, 17 + seed as usize % 7));
            let design = DesignMatrix::new(matrix, y, labels(cols), alloc::vec![0; rows]).unwrap();
            let result = stepwise_eliminate(&design, &LossSpec::l2(), &Solver::Ols).unwrap();
            for pair in result.path.windows(2) {
                prop_assert!(pair[1].loss >= pair[0].loss - 1e-10 * (1.0 + pair[0].loss));
            }
        }

        /// Reversing the design's columns permutes coefficients and
        /// leaves the loss curve unchanged.
        #[test]
        fn column_permutation_equivariance(seed in 0u64..1000) {
            let rows = 14;
            let cols = 4;
            let matrix = DMatrix::from_fn(rows, cols, |i, j| wiggle(i + seed as usize, j));
            let y = DVector::from_fn(rows, |i, _| wiggle(i, 23 + seed as usize % 5));
            let design =
                DesignMatrix::new(matrix.clone(), y.clone(), labels(cols), alloc::vec![0; rows])
                    .unwrap();
            let reversed_cols: Vec<usize> = (0..cols).rev().collect();
            let reversed = DesignMatrix::new(
                matrix.select_columns(reversed_cols.iter()),
                y,
                reversed_cols.iter().map(|&c| alloc::format!("t{c}")).collect(),
                alloc::vec![0; rows],
            )
            .unwrap();
            let direct = fit_ols(&design).unwrap();
            let permuted = fit_ols(&reversed).unwrap();
            for c in 0..cols {
                prop_assert!((direct[c] - permuted[cols - 1 - c]).abs() <= 1e-9);
            }
            let path = stepwise_eliminate(&design, &LossSpec::l2(), &Solver::Ols).unwrap();
            let path_rev = stepwise_eliminate(&reversed, &LossSpec::l2(), &Solver::Ols).unwrap();
            for (a, b) in path.path.iter().zip(&path_rev.path) {
                prop_assert!((a.loss - b.loss).abs() <= 1e-8 * (1.0 + a.loss));
            }
        }

        /// On a design that is already standardized, growing lambda
        /// never grows the coefficient norm.
        #[test]
        fn ridge_norm_is_monotone_in_lambda(seed in 0u64..1000) {
            let rows = 20;
            let cols = 4;
            let raw = DMatrix::from_fn(rows, cols, |i, j| wiggle(i + seed as usize, j));
            // Pre-scale columns to unit root-mean-square so the
            // internal standardization is the identity map.
            let mut matrix = raw;
            for c in 0..cols {
                let ms = matrix.column(c).iter().map(|v| v * v).sum::<f64>() / rows as f64;
                let scale = ms.sqrt();
                for i in 0..rows {
                    matrix[(i, c)] /= scale;
                }
            }
            let y = DVector::from_fn(rows, |i, _| wiggle(i, 29 + seed as usize % 3));
            let design = DesignMatrix::new(matrix, y, labels(cols), alloc::vec![0; rows]).unwrap();
            let mut previous = f64::INFINITY;
            for lambda in [0.0, 1e-6, 1e-3, 1e-1, 1.0, 10.0] {
                let coeffs = fit_ridge(&design, lambda).unwrap();
                let norm = coeffs.norm();
                prop_assert!(norm <= previous + 1e-12 * (1.0 + previous));
                previous = norm;
            }
        }

        /// Scaling the target by a power of two scales every OLS
        /// coefficient bit-exactly.
        #[test]
        fn ols_is_equivariant_under_target_scaling(seed in 0u64..1000) {
            let rows = 12;
            let cols = 3;
            let matrix = DMatrix::from_fn(rows, cols, |i, j| wiggle(i + seed as usize, j));
            let y = DVector::from_fn(rows, |i, _| wiggle(i, 31 + seed as usize % 11));
            let scaled_y = y.map(|v| 8.0 * v);
            let base = DesignMatrix::new(
                matrix.clone(),
                y,
                labels(cols),
                alloc::vec![0; rows],
            )
            .unwrap();
            let scaled = DesignMatrix::new(matrix, scaled_y, labels(cols), alloc::vec![0; rows])
                .unwrap();
            let fit_base = fit_ols(&base).unwrap();
            let fit_scaled = fit_ols(&scaled).unwrap();
            for c in 0..cols {
                prop_assert_eq!(8.0 * fit_base[c], fit_scaled[c]);
            }
        }
    }
}
