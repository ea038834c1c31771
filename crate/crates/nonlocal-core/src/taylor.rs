//! Truncated Taylor surrogates with fitted scale factors, and
//! mesh-refinement error studies.
//!
//! A surrogate of order `k` around a base vertex `x~` models
//! `u(x) = u(x~) + sum_alpha gamma^alpha d^alpha u(x~) z^alpha / alpha!`
//! over the unique multi-indices `alpha` of orders `1..=k`, where the
//! derivatives `d^alpha u` are stencil estimates and the scale factors
//! `gamma` are fitted by least squares against nearby samples. Exact
//! derivatives would give `gamma = 1`; the fitted deviation from one is a
//! consistency diagnostic that vanishes with mesh refinement only for
//! local fits.

use alloc::vec::Vec;
use core::fmt;

use nalgebra::{DMatrix, DVector};

use crate::fmath;
use crate::operators::{derivative_for_index, OperatorError};
use crate::point_cloud::{PointCloud, PointCloudError};
use crate::poly_basis::{
    enumerate_multi_indices, AnalyticField, CountingMode, MultiIndexSet,
};
use crate::stencil::{build_stencil_set, BuildOptions, StencilError, StencilSet};

/// Absolute errors below this are indistinguishable from f64 roundoff on
/// O(1) data and carry no convergence signal; log-log slope fits discard
/// them rather than let noise flatten the tail.
pub const SLOPE_ERROR_FLOOR: f64 = 1e-12;

/// Errors from surrogate fitting and error studies.
#[derive(Debug, Clone, PartialEq)]
pub enum TaylorError {
    Stencil(StencilError),
    Operator(OperatorError),
    Cloud(PointCloudError),
    /// Fewer usable neighbors than fit coefficients at this base vertex.
    InsufficientNeighbors { base: usize, needed: usize, available: usize },
    /// The design matrix lost rank at this base vertex.
    RankDeficient { base: usize },
    BadParameter { what: &'static str },
}

impl fmt::Display for TaylorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Stencil(e) => write!(f, "stencil construction failed: {e}"),
            Self::Operator(e) => write!(f, "derivative evaluation failed: {e}"),
            Self::Cloud(e) => write!(f, "cloud construction failed: {e}"),
            Self::InsufficientNeighbors { base, needed, available } => write!(
                f,
                "vertex {base}: {available} neighbors cannot identify {needed} coefficients"
            ),
            Self::RankDeficient { base } => {
                write!(f, "vertex {base}: surrogate design matrix is rank deficient")
            }
            Self::BadParameter { what } => write!(f, "invalid parameter: {what}"),
        }
    }
}

impl core::error::Error for TaylorError {}

impl From<StencilError> for TaylorError {
    fn from(e: StencilError) -> Self {
        Self::Stencil(e)
    }
}

impl From<OperatorError> for TaylorError {
    fn from(e: OperatorError) -> Self {
        Self::Operator(e)
    }
}

impl From<PointCloudError> for TaylorError {
    fn from(e: PointCloudError) -> Self {
        Self::Cloud(e)
    }
}

/// Which samples the scale factors are fitted against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitScope {
    /// The nearest train neighbors of each base; `None` uses twice the
    /// coefficient count, clamped to the available neighbors.
    Local(Option<usize>),
    /// Every other train vertex. Fitted this way the scale factors do not
    /// approach one under refinement; this scope exists to demonstrate
    /// exactly that.
    FullDataset,
}

/// A fitted Taylor surrogate over all train vertices of a cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct TaylorSurrogate {
    k: usize,
    indices: MultiIndexSet,
    base_ids: Vec<usize>,
    base_points: DMatrix<f64>,
    base_values: DVector<f64>,
    /// Stencil derivative estimates, one row per base, one column per
    /// index.
    derivatives: DMatrix<f64>,
    /// Fitted scale factors, same layout as `derivatives`.
    gamma: DMatrix<f64>,
}

impl TaylorSurrogate {
    /// Model order `k`.
    pub fn k(&self) -> usize {
        self.k
    }

    /// The index set of the derivative terms (orders `1..=k`).
    pub fn indices(&self) -> &MultiIndexSet {
        &self.indices
    }

    /// Global vertex ids of the bases.
    pub fn base_ids(&self) -> &[usize] {
        &self.base_ids
    }

    pub fn derivatives(&self) -> &DMatrix<f64> {
        &self.derivatives
    }

    pub fn gamma(&self) -> &DMatrix<f64> {
        &self.gamma
    }

    /// Evaluates the expansion anchored at base rank `t`.
    pub fn eval_at_base(&self, t: usize, x: &[f64]) -> f64 {
        let p = self.base_points.ncols();
        assert_eq!(x.len(), p, "point has wrong dimension");
        let z: Vec<f64> = (0..p).map(|d| x[d] - self.base_points[(t, d)]).collect();
        let mut acc = self.base_values[t];
        for (s, index) in self.indices.indices().iter().enumerate() {
            acc += self.gamma[(t, s)] * self.derivatives[(t, s)] * index.eval(&z)
                / index.factorial();
        }
        acc
    }

    /// Evaluates at `x` using the nearest base, ties resolved toward the
    /// lower base rank.
    pub fn eval(&self, x: &[f64]) -> f64 {
        let p = self.base_points.ncols();
        assert_eq!(x.len(), p, "point has wrong dimension");
        let mut best = 0usize;
        let mut best_dist = f64::INFINITY;
        for t in 0..self.base_points.nrows() {
            let mut acc = 0.0;
            for d in 0..p {
                let diff = self.base_points[(t, d)] - x[d];
                acc += diff * diff;
            }
            if acc < best_dist {
                best_dist = acc;
                best = t;
            }
        }
        self.eval_at_base(best, x)
    }
}

/// Fits a Taylor surrogate of order `k` at every train vertex.
///
/// Stencil derivatives for every unique index of orders `1..=k` are
/// computed by recursive composition from `set`, then per base the scale
/// factors solve the least-squares problem against neighbor samples. The
/// design matrix is column-equilibrated before a QR solve; a derivative
/// that is exactly zero leaves its term unidentifiable, in which case the
/// neutral value `gamma = 1` is kept (the term contributes nothing either
/// way).
pub fn fit_surrogate(
    cloud: &PointCloud,
    set: &StencilSet,
    u: &DVector<f64>,
    k: usize,
    scope: FitScope,
) -> Result<TaylorSurrogate, TaylorError> {
    if k == 0 {
        return Err(TaylorError::BadParameter { what: "model order k must be at least 1" });
    }
    if u.len() != cloud.len() {
        return Err(TaylorError::Operator(OperatorError::LengthMismatch {
            expected: cloud.len(),
            got: u.len(),
        }));
    }
    let p = cloud.dim();
    let indices = enumerate_multi_indices(p, k, CountingMode::Unique);
    let q = indices.len();
    let train = cloud.train_ids();
    let n_t = train.len();

    let mut derivatives = DMatrix::zeros(n_t, q);
    for (s, index) in indices.indices().iter().enumerate() {
        let field = derivative_for_index(set, cloud, u, index)?;
        for t in 0..n_t {
            derivatives[(t, s)] = field.values()[t];
        }
    }

    let base_points = DMatrix::from_fn(n_t, p, |t, d| cloud.coord(train[t], d));
    let base_values = DVector::from_fn(n_t, |t, _| u[train[t]]);
    let mut gamma = DMatrix::from_element(n_t, q, 1.0);

    for (t, &base) in train.iter().enumerate() {
        let neighbors = cloud.sorted_neighbors(base);
        let available = neighbors.len();
        if available < q {
            return Err(TaylorError::InsufficientNeighbors { base, needed: q, available });
        }
        let d_tilde = match scope {
            FitScope::Local(Some(d)) => {
                if d < q {
                    return Err(TaylorError::BadParameter {
                        what: "neighbor count below coefficient count",
                    });
                }
                d.min(available)
            }
            FitScope::Local(None) => (2 * q).min(available),
            FitScope::FullDataset => available,
        };
        let chosen = &neighbors[..d_tilde];

        // Terms with exactly zero derivative cannot be identified; keep
        // gamma = 1 there and solve over the rest.
        let active: Vec<usize> =
            (0..q).filter(|&s| derivatives[(t, s)] != 0.0).collect();
        if active.is_empty() {
            continue;
        }
        let mut design = DMatrix::zeros(d_tilde, active.len());
        let mut rhs = DVector::zeros(d_tilde);
        for (i, &member) in chosen.iter().enumerate() {
            let z = cloud.offset(base, member);
            for (c, &s) in active.iter().enumerate() {
                let index = &indices.indices()[s];
                design[(i, c)] = derivatives[(t, s)] * index.eval(&z) / index.factorial();
            }
            rhs[i] = u[member] - base_values[t];
        }
        // Column equilibration keeps the QR well scaled across orders of z.
        let mut scales = Vec::with_capacity(active.len());
        for c in 0..active.len() {
            let norm = design.column(c).norm();
            if norm == 0.0 {
                return Err(TaylorError::RankDeficient { base });
            }
            scales.push(norm);
            for i in 0..d_tilde {
                design[(i, c)] /= norm;
            }
        }
        let qr = design.qr();
        let r_mat = qr.r();
        let diag_max = (0..active.len())
            .map(|c| r_mat[(c, c)].abs())
            .fold(0.0f64, f64::max);
        let tol = d_tilde.max(active.len()) as f64 * f64::EPSILON * diag_max;
        for c in 0..active.len() {
            if r_mat[(c, c)].abs() <= tol {
                return Err(TaylorError::RankDeficient { base });
            }
        }
        let qty = qr.q().transpose() * rhs;
        let solved = r_mat
            .solve_upper_triangular(&qty)
            .ok_or(TaylorError::RankDeficient { base })?;
        for (c, &s) in active.iter().enumerate() {
            gamma[(t, s)] = solved[c] / scales[c];
        }
    }

    Ok(TaylorSurrogate {
        k,
        indices,
        base_ids: train.to_vec(),
        base_points,
        base_values,
        derivatives,
        gamma,
    })
}

/// Least-squares slope of `ln |err|` against `ln h`, discarding entries
/// below [`SLOPE_ERROR_FLOOR`]. `None` when fewer than two usable points
/// remain.
pub fn fit_loglog_slope(h: &[f64], err: &[f64]) -> Option<f64> {
    assert_eq!(h.len(), err.len(), "one error per spacing");
    let pairs: Vec<(f64, f64)> = h
        .iter()
        .zip(err.iter())
        .filter(|(_, e)| e.abs() > SLOPE_ERROR_FLOOR)
        .map(|(&h, &e)| (fmath::ln(h), fmath::ln(e.abs())))
        .collect();
    if pairs.len() < 2 {
        return None;
    }
    let n = pairs.len() as f64;
    let mean_x = pairs.iter().map(|(x, _)| x).sum::<f64>() / n;
    let mean_y = pairs.iter().map(|(_, y)| y).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in &pairs {
        sxx += (x - mean_x) * (x - mean_x);
        sxy += (x - mean_x) * (y - mean_y);
    }
    if sxx == 0.0 {
        return None;
    }
    Some(sxy / sxx)
}

/// Configuration of a mesh-refinement error study.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    /// Spatial dimension.
    pub p: usize,
    /// Surrogate order.
    pub k: usize,
    /// Stencil consistency order.
    pub r: usize,
    /// Mesh parameters `m`, one study stage per entry.
    pub mesh_sizes: Vec<usize>,
    /// Domain edge length.
    pub domain_length: f64,
    pub scope: FitScope,
}

/// Per-mesh aggregate errors. Signed means keep cancellation visible;
/// absolute means feed the slope fits.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshReport {
    pub m: usize,
    pub h: f64,
    /// Mean over test vertices of `u_k(x) - u(x)`, surrogate anchored at
    /// the nearest base.
    pub model_error_signed: f64,
    pub model_error_abs: f64,
    /// Mean over bases of `d^alpha u - exact`, one entry per index.
    pub derivative_errors_signed: Vec<f64>,
    pub derivative_errors_abs: Vec<f64>,
    /// Worst-case `|d^alpha u - exact|` over bases. On meshes with
    /// boundaries the handful of one-sided stencils dominates this norm,
    /// so it tracks the pointwise accuracy order `r + 1 - l`, whereas the
    /// means dilute the boundary layer by the vertex count and converge
    /// one order faster.
    pub derivative_errors_max: Vec<f64>,
    /// Mean over bases and indices of each order of `gamma - 1`, one
    /// entry per order `1..=k`.
    pub gamma_dev_signed: Vec<f64>,
    pub gamma_dev_abs: Vec<f64>,
}

/// A completed error study: per-mesh reports plus log-log slopes of the
/// absolute means.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorStudy {
    pub indices: MultiIndexSet,
    pub reports: Vec<MeshReport>,
    pub model_slope: Option<f64>,
    /// One slope per index, aligned with `indices`, fitted on the
    /// absolute means.
    pub derivative_slopes: Vec<Option<f64>>,
    /// One slope per index, fitted on the worst-case errors; this is the
    /// slope that mirrors the pointwise accuracy order.
    pub derivative_slopes_max: Vec<Option<f64>>,
    /// One slope per order `1..=k`.
    pub gamma_slopes: Vec<Option<f64>>,
}

/// Runs the full refinement study for an analytic truth: for each mesh,
/// build stencils, fit the surrogate, and compare model values, stencil
/// derivatives, and scale factors against their exact counterparts.
pub fn error_study(
    field: &dyn AnalyticField,
    config: &StudyConfig,
) -> Result<ErrorStudy, TaylorError> {
    if field.dim() != config.p {
        return Err(TaylorError::BadParameter { what: "field dimension differs from study" });
    }
    if config.mesh_sizes.is_empty() {
        return Err(TaylorError::BadParameter { what: "study needs at least one mesh" });
    }
    let indices = enumerate_multi_indices(config.p, config.k, CountingMode::Unique);
    let q = indices.len();
    let mut reports = Vec::with_capacity(config.mesh_sizes.len());

    for &m in &config.mesh_sizes {
        let cloud = PointCloud::generate_interlaced_mesh(config.p, m, config.domain_length)?;
        let set = build_stencil_set(&cloud, config.r, BuildOptions::default())?.set;
        let u = DVector::from_fn(cloud.len(), |i, _| field.eval(&cloud.point(i)));
        let surrogate = fit_surrogate(&cloud, &set, &u, config.k, config.scope)?;
        let train = cloud.train_ids();
        let n_t = train.len();

        let mut deriv_signed = alloc::vec![0.0; q];
        let mut deriv_abs = alloc::vec![0.0; q];
        let mut deriv_max = alloc::vec![0.0f64; q];
        for (s, index) in indices.indices().iter().enumerate() {
            for (t, &base) in train.iter().enumerate() {
                let truth = field.partial(index, &cloud.point(base));
                let err = surrogate.derivatives()[(t, s)] - truth;
                deriv_signed[s] += err;
                deriv_abs[s] += err.abs();
                deriv_max[s] = deriv_max[s].max(err.abs());
            }
            deriv_signed[s] /= n_t as f64;
            deriv_abs[s] /= n_t as f64;
        }

        let mut gamma_signed = alloc::vec![0.0; config.k];
        let mut gamma_abs = alloc::vec![0.0; config.k];
        let mut order_counts = alloc::vec![0usize; config.k];
        for (s, index) in indices.indices().iter().enumerate() {
            let slot = index.order() as usize - 1;
            for t in 0..n_t {
                let dev = surrogate.gamma()[(t, s)] - 1.0;
                gamma_signed[slot] += dev;
                gamma_abs[slot] += dev.abs();
            }
            order_counts[slot] += n_t;
        }
        for l in 0..config.k {
            gamma_signed[l] /= order_counts[l] as f64;
            gamma_abs[l] /= order_counts[l] as f64;
        }

        let mut model_signed = 0.0;
        let mut model_abs = 0.0;
        for &test in cloud.test_ids() {
            let x = cloud.point(test);
            let err = surrogate.eval(&x) - field.eval(&x);
            model_signed += err;
            model_abs += err.abs();
        }
        let n_test = cloud.test_ids().len().max(1) as f64;
        model_signed /= n_test;
        model_abs /= n_test;

        reports.push(MeshReport {
            m,
            h: cloud.spacing().expect("generated meshes always carry a spacing"),
            model_error_signed: model_signed,
            model_error_abs: model_abs,
            derivative_errors_signed: deriv_signed,
            derivative_errors_abs: deriv_abs,
            derivative_errors_max: deriv_max,
            gamma_dev_signed: gamma_signed,
            gamma_dev_abs: gamma_abs,
        });
    }

    let hs: Vec<f64> = reports.iter().map(|r| r.h).collect();
    let model_slope =
        fit_loglog_slope(&hs, &reports.iter().map(|r| r.model_error_abs).collect::<Vec<_>>());
    let derivative_slopes = (0..q)
        .map(|s| {
            fit_loglog_slope(
                &hs,
                &reports.iter().map(|r| r.derivative_errors_abs[s]).collect::<Vec<_>>(),
            )
        })
        .collect();
    let derivative_slopes_max = (0..q)
        .map(|s| {
            fit_loglog_slope(
                &hs,
                &reports.iter().map(|r| r.derivative_errors_max[s]).collect::<Vec<_>>(),
            )
        })
        .collect();
    let gamma_slopes = (0..config.k)
        .map(|l| {
            fit_loglog_slope(
                &hs,
                &reports.iter().map(|r| r.gamma_dev_abs[l]).collect::<Vec<_>>(),
            )
        })
        .collect();

    Ok(ErrorStudy {
        indices,
        reports,
        model_slope,
        derivative_slopes,
        derivative_slopes_max,
        gamma_slopes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly_basis::{MultiIndex, Polynomial};
    use alloc::vec;

    fn poly_1d(coeffs: &[(u32, f64)]) -> Polynomial {
        Polynomial::from_terms(
            1,
            coeffs.iter().map(|&(e, c)| (MultiIndex::new(vec![e]), c)).collect(),
        )
    }

    #[test]
    fn surrogate_reproduces_polynomials_within_capacity() {
        // u has order 3; with k = r = 3 the expansion is complete and the
        // derivatives are exact, so the fit recovers gamma = 1 and the
        // model is exact at held-out vertices.
        let truth = poly_1d(&[(3, 1.0), (2, 2.0), (1, -1.0), (0, 5.0)]);
        let cloud = PointCloud::generate_interlaced_mesh(1, 8, 1.0).unwrap();
        let set = build_stencil_set(&cloud, 3, BuildOptions::default()).unwrap().set;
        let u = DVector::from_fn(cloud.len(), |i, _| truth.eval(&cloud.point(i)));
        let surrogate = fit_surrogate(&cloud, &set, &u, 3, FitScope::Local(None)).unwrap();
        for t in 0..surrogate.gamma().nrows() {
            for s in 0..surrogate.gamma().ncols() {
                assert!(
                    (surrogate.gamma()[(t, s)] - 1.0).abs() <= 1e-7,
                    "gamma at ({t}, {s}) = {}",
                    surrogate.gamma()[(t, s)]
                );
            }
        }
        for &test in cloud.test_ids() {
            let x = cloud.point(test);
            assert!((surrogate.eval(&x) - truth.eval(&x)).abs() <= 1e-9);
        }
    }

    #[test]
    fn constant_fields_keep_neutral_gamma() {
        let cloud = PointCloud::generate_interlaced_mesh(1, 4, 1.0).unwrap();
        let set = build_stencil_set(&cloud, 2, BuildOptions::default()).unwrap().set;
        let u = DVector::from_element(cloud.len(), 7.5);
        let surrogate = fit_surrogate(&cloud, &set, &u, 2, FitScope::Local(None)).unwrap();
        for t in 0..surrogate.gamma().nrows() {
            for s in 0..surrogate.gamma().ncols() {
                assert_eq!(surrogate.gamma()[(t, s)], 1.0);
            }
        }
        assert_eq!(surrogate.eval(&[0.3]), 7.5);
    }

    #[test]
    fn too_few_neighbors_is_an_error() {
        let cloud = PointCloud::generate_interlaced_mesh(1, 2, 1.0).unwrap();
        let set = build_stencil_set(&cloud, 2, BuildOptions::default()).unwrap().set;
        let u = DVector::zeros(cloud.len());
        // Three train vertices leave two neighbors; k = 3 needs three
        // coefficients.
        let err = fit_surrogate(&cloud, &set, &u, 3, FitScope::Local(None)).unwrap_err();
        assert!(matches!(err, TaylorError::InsufficientNeighbors { needed: 3, available: 2, .. }));
    }

    #[test]
    fn explicit_neighbor_count_below_q_is_rejected() {
        let cloud = PointCloud::generate_interlaced_mesh(1, 8, 1.0).unwrap();
        let set = build_stencil_set(&cloud, 2, BuildOptions::default()).unwrap().set;
        let u = DVector::zeros(cloud.len());
        let err = fit_surrogate(&cloud, &set, &u, 2, FitScope::Local(Some(1))).unwrap_err();
        assert!(matches!(err, TaylorError::BadParameter { .. }));
    }

    #[test]
    fn slope_fit_recovers_power_laws() {
        let hs = [0.1, 0.05, 0.025, 0.0125];
        let errs: Vec<f64> = hs.iter().map(|h| 3.0 * h * h * h).collect();
        let slope = fit_loglog_slope(&hs, &errs).unwrap();
        assert!((slope - 3.0).abs() <= 1e-9);
    }

    #[test]
    fn slope_fit_discards_roundoff_floor() {
        let hs = [0.1, 0.05, 0.025];
        let errs = [1e-2, 1e-3, 1e-14];
        let slope = fit_loglog_slope(&hs, &errs).unwrap();
        // Only the first two points survive; their slope is log2(10).
        assert!((slope - (fmath::ln(10.0) / fmath::ln(2.0))).abs() <= 1e-9);
        assert_eq!(fit_loglog_slope(&[0.1, 0.05], &[1e-14, 1e-15]), None);
    }

    #[test]
    fn study_orders_match_theory_roughly() {
        // k = r = 2 on a smooth non-polynomial truth: model error O(h^3),
        // first derivative O(h^2), second derivative O(h). Tight slope
        // assertions live in the acceptance suite; this is a smoke check
        // with generous margins.
        let truth = CosField;
        let config = StudyConfig {
            p: 1,
            k: 2,
            r: 2,
            mesh_sizes: vec![8, 16, 32, 64],
            domain_length: 1.0,
            scope: FitScope::Local(None),
        };
        let study = error_study(&truth, &config).unwrap();
        let model = study.model_slope.unwrap();
        assert!((model - 3.0).abs() <= 0.5, "model slope {model}");
        let d1 = study.derivative_slopes[0].unwrap();
        assert!((d1 - 2.0).abs() <= 0.5, "first-derivative slope {d1}");
        // Interior vertices of a uniform mesh superconverge, so the mean
        // second-derivative error decays one order faster than the
        // worst case; the max norm recovers the pointwise order.
        let d2_mean = study.derivative_slopes[1].unwrap();
        assert!((d2_mean - 2.0).abs() <= 0.5, "second-derivative mean slope {d2_mean}");
        let d2_max = study.derivative_slopes_max[1].unwrap();
        assert!((d2_max - 1.0).abs() <= 0.5, "second-derivative max slope {d2_max}");
    }

    /// cos(2x + 1/2): smooth, non-polynomial, no vanishing derivatives on
    /// the unit interval.
    struct CosField;

    impl AnalyticField for CosField {
        fn dim(&self) -> usize {
            1
        }

        fn eval(&self, x: &[f64]) -> f64 {
            fmath::cos(2.0 * x[0] + 0.5)
        }

        fn partial(&self, alpha: &MultiIndex, x: &[f64]) -> f64 {
            let l = alpha.order();
            let scale = fmath::powi(2.0, l as i32);
            let phase = 2.0 * x[0] + 0.5 + l as f64 * core::f64::consts::FRAC_PI_2;
            scale * fmath::cos(phase)
        }
    }
}
