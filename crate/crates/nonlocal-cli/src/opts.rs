//! Command-line surface and configuration handling. Every subcommand
//! accepts the same parameters through a JSON config file (`--config`)
//! and through flags; flags win field by field, and the fully resolved
//! configuration is echoed into the output directory so a run can be
//! reproduced from its artifacts alone.

use std::fs;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Parser, Debug)]
#[command(
    name = "nonlocal",
    version,
    about = "Consistent non-local derivatives on point clouds, convergence studies, \
             phase-field trajectory generation, and reduced-model discovery"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate an interlaced train/test mesh and write it as CSV.
    Mesh(MeshOpts),
    /// Build derivative stencils over a point cloud and export them as JSON.
    Stencil(StencilOpts),
    /// Apply a composed derivative of a seeded polynomial field and
    /// compare against the exact values.
    Derivative(DerivativeOpts),
    /// Mesh-refinement error study: model, derivative, and scale-factor
    /// errors with fitted slopes.
    Convergence(ConvergenceOpts),
    /// Fixed-kernel global weighting next to local stencils on the same
    /// meshes: the former plateaus, the latter converges.
    GaussianBaseline(GaussianBaselineOpts),
    /// Integrate phase-field trajectories and export state functionals.
    AllenCahn(AllenCahnOpts),
    /// Stepwise reduced-model discovery over trajectory data.
    RomFit(RomFitOpts),
    /// Fit Taylor surrogates of increasing order over an ingested state
    /// series and report the test error per order.
    TaylorFit(TaylorFitOpts),
}

/// Reads the JSON config (if any) and merges it under the flags.
pub fn load_merged<T>(opts: T) -> Result<T, CliError>
where
    T: Merge + DeserializeOwned,
{
    match opts.config_path() {
        None => Ok(opts),
        Some(path) => {
            let text = fs::read_to_string(&path)
                .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            let file: T = serde_json::from_str(&text)
                .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            Ok(opts.over(file))
        }
    }
}

/// Field-wise precedence: `self` (flags) wins over `fallback` (file).
pub trait Merge: Sized {
    fn config_path(&self) -> Option<PathBuf>;
    fn over(self, fallback: Self) -> Self;
}

fn usage(field: &str, message: &str) -> CliError {
    CliError::Usage(format!("{field}: {message}"))
}

macro_rules! merge_fields {
    ($flags:ident, $file:ident; $($field:ident),+ $(,)?) => {
        Self { config: None, $($field: $flags.$field.or($file.$field)),+ }
    };
}

// -------------------------------------------------------------------- mesh

#[derive(Args, Serialize, Deserialize, Debug, Default, Clone)]
#[serde(default, deny_unknown_fields)]
pub struct MeshOpts {
    /// JSON config file; flags override its values.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Spatial dimension.
    #[arg(long)]
    pub p: Option<usize>,
    /// Mesh parameter: 2m+1 train points per dimension.
    #[arg(long)]
    pub m: Option<usize>,
    /// Domain edge length.
    #[arg(long)]
    pub length: Option<f64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize, Debug, Clone)]
pub struct MeshConfig {
    pub p: usize,
    pub m: usize,
    pub length: f64,
    pub out: PathBuf,
}

impl Merge for MeshOpts {
    fn config_path(&self) -> Option<PathBuf> {
        self.config.clone()
    }

    fn over(self, file: Self) -> Self {
        merge_fields!(self, file; p, m, length, out)
    }
}

impl MeshOpts {
    pub fn resolve(self) -> Result<MeshConfig, CliError> {
        let config = MeshConfig {
            p: self.p.unwrap_or(1),
            m: self.m.unwrap_or(8),
            length: self.length.unwrap_or(1.0),
            out: self.out.unwrap_or_else(|| PathBuf::from("out")),
        };
        if config.p == 0 {
            return Err(usage("mesh.p", "must be at least 1"));
        }
        if config.m == 0 {
            return Err(usage("mesh.m", "must be at least 1"));
        }
        if !(config.length.is_finite() && config.length > 0.0) {
            return Err(usage("mesh.length", "must be finite and positive"));
        }
        Ok(config)
    }
}

// ----------------------------------------------------------------- stencil

#[derive(Args, Serialize, Deserialize, Debug, Default, Clone)]
#[serde(default, deny_unknown_fields)]
pub struct StencilOpts {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Point cloud CSV to ingest; omit to generate a mesh instead.
    #[arg(long)]
    pub cloud: Option<PathBuf>,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub length: Option<f64>,
    /// Consistency order of the stencils.
    #[arg(long)]
    pub r: Option<usize>,
    /// Neighbors beyond full rank (minimum-norm weights when positive).
    #[arg(long)]
    pub extra_neighbors: Option<usize>,
    /// Record failed vertices and continue instead of aborting.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub skip_failures: Option<bool>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize, Debug, Clone)]
pub struct StencilConfig {
    pub cloud: Option<PathBuf>,
    pub p: usize,
    pub m: usize,
    pub length: f64,
    pub r: usize,
    pub extra_neighbors: usize,
    pub skip_failures: bool,
    pub out: PathBuf,
}

impl Merge for StencilOpts {
    fn config_path(&self) -> Option<PathBuf> {
        self.config.clone()
    }

    fn over(self, file: Self) -> Self {
        merge_fields!(self, file; cloud, p, m, length, r, extra_neighbors, skip_failures, out)
    }
}

impl StencilOpts {
    pub fn resolve(self) -> Result<StencilConfig, CliError> {
        let config = StencilConfig {
            cloud: self.cloud,
            p: self.p.unwrap_or(1),
            m: self.m.unwrap_or(8),
            length: self.length.unwrap_or(1.0),
            r: self.r.unwrap_or(2),
            extra_neighbors: self.extra_neighbors.unwrap_or(0),
            skip_failures: self.skip_failures.unwrap_or(false),
            out: self.out.unwrap_or_else(|| PathBuf::from("out")),
        };
        if config.r == 0 {
            return Err(usage("stencil.r", "must be at least 1"));
        }
        if config.cloud.is_none() {
            if config.p == 0 {
                return Err(usage("stencil.p", "must be at least 1"));
            }
            if config.m == 0 {
                return Err(usage("stencil.m", "must be at least 1"));
            }
        }
        Ok(config)
    }
}

// -------------------------------------------------------------- derivative

#[derive(Args, Serialize, Deserialize, Debug, Default, Clone)]
#[serde(default, deny_unknown_fields)]
pub struct DerivativeOpts {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Point cloud CSV to ingest; omit to generate a mesh instead.
    #[arg(long)]
    pub cloud: Option<PathBuf>,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub length: Option<f64>,
    #[arg(long)]
    pub r: Option<usize>,
    /// Derivative multi-index as comma-separated exponents, e.g. `2` or `1,1`.
    #[arg(long)]
    pub index: Option<String>,
    /// Total degree of the seeded polynomial field.
    #[arg(long = "K")]
    pub degree: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also export the composed operator as a coordinate-triplet CSV.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub emit_operator: Option<bool>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize, Debug, Clone)]
pub struct DerivativeConfig {
    pub cloud: Option<PathBuf>,
    pub p: usize,
    pub m: usize,
    pub length: f64,
    pub r: usize,
    pub index: Vec<u32>,
    pub degree: usize,
    pub seed: u64,
    pub emit_operator: bool,
    pub out: PathBuf,
}

impl Merge for DerivativeOpts {
    fn config_path(&self) -> Option<PathBuf> {
        self.config.clone()
    }

    fn over(self, file: Self) -> Self {
        merge_fields!(self, file;
            cloud, p, m, length, r, index, degree, seed, emit_operator, out)
    }
}

impl DerivativeOpts {
    pub fn resolve(self) -> Result<DerivativeConfig, CliError> {
        let p = self.p.unwrap_or(1);
        let index = match &self.index {
            None => {
                let mut exps = vec![0u32; p];
                exps[0] = 1;
                exps
            }
            Some(raw) => parse_index(raw).map_err(|m| usage("derivative.index", &m))?,
        };
        let config = DerivativeConfig {
            cloud: self.cloud,
            p,
            m: self.m.unwrap_or(8),
            length: self.length.unwrap_or(1.0),
            r: self.r.unwrap_or(2),
            index,
            degree: self.degree.unwrap_or(4),
            seed: self.seed.unwrap_or(0),
            emit_operator: self.emit_operator.unwrap_or(false),
            out: self.out.unwrap_or_else(|| PathBuf::from("out")),
        };
        if config.r == 0 {
            return Err(usage("derivative.r", "must be at least 1"));
        }
        if config.index.iter().sum::<u32>() == 0 {
            return Err(usage("derivative.index", "total order must be at least 1"));
        }
        Ok(config)
    }
}

fn parse_index(raw: &str) -> Result<Vec<u32>, String> {
    let exps: Result<Vec<u32>, _> =
        raw.split(',').map(|piece| piece.trim().parse::<u32>()).collect();
    match exps {
        Ok(exps) if !exps.is_empty() => Ok(exps),
        _ => Err(format!("cannot parse '{raw}' as comma-separated exponents")),
    }
}

// ------------------------------------------------------------- convergence

#[derive(Args, Serialize, Deserialize, Debug, Default, Clone)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergenceOpts {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub p: Option<usize>,
    /// Surrogate model order.
    #[arg(long)]
    pub k: Option<usize>,
    /// Stencil consistency order.
    #[arg(long)]
    pub r: Option<usize>,
    /// Total degree of the seeded polynomial truth.
    #[arg(long = "K")]
    pub degree: Option<usize>,
    /// Mesh parameters, comma separated; defaults depend on `p`.
    #[arg(long, value_delimiter = ',')]
    pub meshes: Option<Vec<usize>>,
    #[arg(long)]
    pub length: Option<f64>,
    /// Neighbors per scale-factor fit; defaults to twice the term count.
    #[arg(long)]
    pub neighbors: Option<usize>,
    /// Fit scope: `local` or `full`.
    #[arg(long)]
    pub scope: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Exit nonzero when a fitted slope misses its theoretical value.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub assert: Option<bool>,
    /// Slope window half-width used with --assert.
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize, Debug, Clone)]
pub struct ConvergenceConfig {
    pub p: usize,
    pub k: usize,
    pub r: usize,
    pub degree: usize,
    pub meshes: Vec<usize>,
    pub length: f64,
    pub neighbors: Option<usize>,
    pub scope: String,
    pub seed: u64,
    pub assert: bool,
    pub tolerance: f64,
    pub out: PathBuf,
}

impl Merge for ConvergenceOpts {
    fn config_path(&self) -> Option<PathBuf> {
        self.config.clone()
    }

    fn over(self, file: Self) -> Self {
        merge_fields!(self, file;
            p, k, r, degree, meshes, length, neighbors, scope, seed, assert, tolerance, out)
    }
}

impl ConvergenceOpts {
    pub fn resolve(self) -> Result<ConvergenceConfig, CliError> {
        let p = self.p.unwrap_or(1);
        let meshes = self.meshes.unwrap_or_else(|| default_meshes(p));
        let config = ConvergenceConfig {
            p,
            k: self.k.unwrap_or(5),
            r: self.r.unwrap_or(6),
            degree: self.degree.unwrap_or(8),
            meshes,
            length: self.length.unwrap_or(1.0),
            neighbors: self.neighbors,
            scope: self.scope.unwrap_or_else(|| "local".to_string()),
            seed: self.seed.unwrap_or(0),
            assert: self.assert.unwrap_or(false),
            tolerance: self.tolerance.unwrap_or(0.3),
            out: self.out.unwrap_or_else(|| PathBuf::from("out")),
        };
        if config.p == 0 {
            return Err(usage("convergence.p", "must be at least 1"));
        }
        if config.k == 0 {
            return Err(usage("convergence.k", "must be at least 1"));
        }
        if config.r < config.k {
            return Err(usage("convergence.r", "must be at least k"));
        }
        if config.meshes.len() < 2 {
            return Err(usage("convergence.meshes", "need at least two meshes"));
        }
        if config.meshes.iter().any(|&m| m == 0) {
            return Err(usage("convergence.meshes", "mesh parameters must be at least 1"));
        }
        if !(config.tolerance.is_finite() && config.tolerance > 0.0) {
            return Err(usage("convergence.tolerance", "must be finite and positive"));
        }
        if config.scope != "local" && config.scope != "full" {
            return Err(usage("convergence.scope", "must be 'local' or 'full'"));
        }
        Ok(config)
    }
}

/// Default refinement ladders matching the reference studies.
fn default_meshes(p: usize) -> Vec<usize> {
    match p {
        1 => vec![8, 16, 32, 64, 128],
        2 => vec![4, 8, 16, 32],
        _ => vec![2, 4, 8],
    }
}

// -------------------------------------------------------- gaussian baseline

#[derive(Args, Serialize, Deserialize, Debug, Default, Clone)]
#[serde(default, deny_unknown_fields)]
pub struct GaussianBaselineOpts {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub p: Option<usize>,
    /// Mesh parameters, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub meshes: Option<Vec<usize>>,
    #[arg(long)]
    pub length: Option<f64>,
    /// Consistency order for the local-stencil comparison runs.
    #[arg(long)]
    pub r: Option<usize>,
    /// Total degree of the seeded polynomial truth.
    #[arg(long = "K")]
    pub degree: Option<usize>,
    /// Fixed kernel width of the global weighting.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Differentiation dimension.
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Exit nonzero unless the baseline plateaus and the stencils converge.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub assert: Option<bool>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize, Debug, Clone)]
pub struct GaussianBaselineConfig {
    pub p: usize,
    pub meshes: Vec<usize>,
    pub length: f64,
    pub r: usize,
    pub degree: usize,
    pub sigma: f64,
    pub dim: usize,
    pub seed: u64,
    pub assert: bool,
    pub out: PathBuf,
}

impl Merge for GaussianBaselineOpts {
    fn config_path(&self) -> Option<PathBuf> {
        self.config.clone()
    }

    fn over(self, file: Self) -> Self {
        merge_fields!(self, file;
            p, meshes, length, r, degree, sigma, dim, seed, assert, out)
    }
}

impl GaussianBaselineOpts {
    pub fn resolve(self) -> Result<GaussianBaselineConfig, CliError> {
        let config = GaussianBaselineConfig {
            p: self.p.unwrap_or(1),
            meshes: self.meshes.unwrap_or_else(|| vec![8, 16, 32, 64, 128]),
            length: self.length.unwrap_or(1.0),
            r: self.r.unwrap_or(2),
            degree: self.degree.unwrap_or(3),
            sigma: self.sigma.unwrap_or(0.25),
            dim: self.dim.unwrap_or(0),
            seed: self.seed.unwrap_or(0),
            assert: self.assert.unwrap_or(false),
            out: self.out.unwrap_or_else(|| PathBuf::from("out")),
        };
        if config.p == 0 {
            return Err(usage("gaussian-baseline.p", "must be at least 1"));
        }
        if config.dim >= config.p {
            return Err(usage("gaussian-baseline.dim", "must be below p"));
        }
        if config.meshes.len() < 2 {
            return Err(usage("gaussian-baseline.meshes", "need at least two meshes"));
        }
        if config.r == 0 {
            return Err(usage("gaussian-baseline.r", "must be at least 1"));
        }
        if !(config.sigma.is_finite() && config.sigma > 0.0) {
            return Err(usage("gaussian-baseline.sigma", "must be finite and positive"));
        }
        Ok(config)
    }
}

// --------------------------------------------------------------- allen-cahn

#[derive(Args, Serialize, Deserialize, Debug, Default, Clone)]
#[serde(default, deny_unknown_fields)]
pub struct AllenCahnOpts {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Named trajectory set; `paper16` is the 16-run parameter grid.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub m_phi: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Grid intervals.
    #[arg(long)]
    pub nx: Option<usize>,
    #[arg(long)]
    pub length: Option<f64>,
    /// Initial condition: `uniform:<v>`, `cosine:<c1,c2,..>`, or
    /// `random-cosine:<modes>` (seeded).
    #[arg(long)]
    pub ic: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize, Debug, Clone)]
pub struct AllenCahnCliConfig {
    pub preset: Option<String>,
    pub m_phi: f64,
    pub lambda: f64,
    pub dt: f64,
    pub steps: usize,
    pub nx: usize,
    pub length: f64,
    pub ic: String,
    pub seed: u64,
    pub out: PathBuf,
}

impl Merge for AllenCahnOpts {
    fn config_path(&self) -> Option<PathBuf> {
        self.config.clone()
    }

    fn over(self, file: Self) -> Self {
        merge_fields!(self, file;
            preset, m_phi, lambda, dt, steps, nx, length, ic, seed, out)
    }
}

impl AllenCahnOpts {
    pub fn resolve(self) -> Result<AllenCahnCliConfig, CliError> {
        let config = AllenCahnCliConfig {
            preset: self.preset,
            m_phi: self.m_phi.unwrap_or(1e-3),
            lambda: self.lambda.unwrap_or(1.0),
            dt: self.dt.unwrap_or(1e-2),
            steps: self.steps.unwrap_or(387),
            nx: self.nx.unwrap_or(128),
            length: self.length.unwrap_or(1.0),
            ic: self.ic.unwrap_or_else(|| "random-cosine:4".to_string()),
            seed: self.seed.unwrap_or(0),
            out: self.out.unwrap_or_else(|| PathBuf::from("out")),
        };
        if let Some(preset) = &config.preset {
            if preset != "paper16" {
                return Err(usage("allen-cahn.preset", "unknown preset (expected 'paper16')"));
            }
        }
        Ok(config)
    }
}

// ------------------------------------------------------------------ rom-fit

#[derive(Args, Serialize, Deserialize, Debug, Default, Clone)]
#[serde(default, deny_unknown_fields)]
pub struct RomFitOpts {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Trajectory manifest JSON; omit to regenerate the 16-run set.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Term basis; `ac36` is the 36-term reference basis.
    #[arg(long)]
    pub basis: Option<String>,
    /// Loss: `l1`, `l2`, `linf`, or `w:<w1>,<w2>,<winf>`.
    #[arg(long)]
    pub loss: Option<String>,
    /// Solver: `ols` or `ridge:<lambda>`.
    #[arg(long)]
    pub solver: Option<String>,
    /// Stencil order for the energy slope over the reduced coordinate.
    #[arg(long)]
    pub accuracy: Option<usize>,
    /// Skip per-size cross-validation (the training-loss curve is always
    /// written).
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub no_cv: Option<bool>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize, Debug, Clone)]
pub struct RomFitConfig {
    pub data: Option<PathBuf>,
    pub basis: String,
    pub loss: String,
    pub solver: String,
    pub accuracy: usize,
    pub no_cv: bool,
    pub seed: u64,
    pub out: PathBuf,
}

impl Merge for RomFitOpts {
    fn config_path(&self) -> Option<PathBuf> {
        self.config.clone()
    }

    fn over(self, file: Self) -> Self {
        merge_fields!(self, file; data, basis, loss, solver, accuracy, no_cv, seed, out)
    }
}

impl RomFitOpts {
    pub fn resolve(self) -> Result<RomFitConfig, CliError> {
        let config = RomFitConfig {
            data: self.data,
            basis: self.basis.unwrap_or_else(|| "ac36".to_string()),
            loss: self.loss.unwrap_or_else(|| "l2".to_string()),
            solver: self.solver.unwrap_or_else(|| "ols".to_string()),
            accuracy: self.accuracy.unwrap_or(2),
            no_cv: self.no_cv.unwrap_or(false),
            seed: self.seed.unwrap_or(0),
            out: self.out.unwrap_or_else(|| PathBuf::from("out")),
        };
        if config.basis != "ac36" {
            return Err(usage("rom-fit.basis", "unknown basis (expected 'ac36')"));
        }
        if config.accuracy == 0 {
            return Err(usage("rom-fit.accuracy", "must be at least 1"));
        }
        Ok(config)
    }
}

// ---------------------------------------------------------------- taylor-fit

#[derive(Args, Serialize, Deserialize, Debug, Default, Clone)]
#[serde(default, deny_unknown_fields)]
pub struct TaylorFitOpts {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// State-series CSV to ingest.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Columns to use as model-space coordinates, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub coords: Option<Vec<String>>,
    /// Column to model.
    #[arg(long)]
    pub target: Option<String>,
    /// Largest surrogate order to fit.
    #[arg(long)]
    pub k_max: Option<usize>,
    /// Neighbors per scale-factor fit; defaults to twice the term count.
    #[arg(long)]
    pub neighbors: Option<usize>,
    /// Exit nonzero unless the test error is non-increasing in the order.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub assert: Option<bool>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize, Debug, Clone)]
pub struct TaylorFitConfig {
    pub data: PathBuf,
    pub coords: Vec<String>,
    pub target: String,
    pub k_max: usize,
    pub neighbors: Option<usize>,
    pub assert: bool,
    pub out: PathBuf,
}

impl Merge for TaylorFitOpts {
    fn config_path(&self) -> Option<PathBuf> {
        self.config.clone()
    }

    fn over(self, file: Self) -> Self {
        merge_fields!(self, file; data, coords, target, k_max, neighbors, assert, out)
    }
}

impl TaylorFitOpts {
    pub fn resolve(self) -> Result<TaylorFitConfig, CliError> {
        let data = self.data.ok_or_else(|| usage("taylor-fit.data", "required"))?;
        let coords = self.coords.ok_or_else(|| usage("taylor-fit.coords", "required"))?;
        let target = self.target.ok_or_else(|| usage("taylor-fit.target", "required"))?;
        let config = TaylorFitConfig {
            data,
            coords,
            target,
            k_max: self.k_max.unwrap_or(3),
            neighbors: self.neighbors,
            assert: self.assert.unwrap_or(false),
            out: self.out.unwrap_or_else(|| PathBuf::from("out")),
        };
        if config.coords.is_empty() {
            return Err(usage("taylor-fit.coords", "need at least one coordinate column"));
        }
        if config.k_max == 0 {
            return Err(usage("taylor-fit.k_max", "must be at least 1"));
        }
        Ok(config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_values() {
        let flags = ConvergenceOpts { k: Some(4), ..Default::default() };
        let file = ConvergenceOpts { k: Some(2), r: Some(5), ..Default::default() };
        let merged = flags.over(file);
        assert_eq!(merged.k, Some(4), "flag wins");
        assert_eq!(merged.r, Some(5), "file fills the gap");
        let resolved = merged.resolve().unwrap();
        assert_eq!(resolved.k, 4);
        assert_eq!(resolved.r, 5);
        assert_eq!(resolved.meshes, vec![8, 16, 32, 64, 128]);
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let err = serde_json::from_str::<MeshOpts>("{\"q\": 3}").unwrap_err();
        assert!(err.to_string().contains("unknown field"));
    }

    #[test]
    fn validation_reports_field_paths() {
        let opts = ConvergenceOpts { k: Some(0), ..Default::default() };
        let err = opts.resolve().unwrap_err();
        assert!(format!("{err}").contains("convergence.k"));
    }

    #[test]
    fn derivative_index_parses() {
        assert_eq!(parse_index("2").unwrap(), vec![2]);
        assert_eq!(parse_index("1, 1").unwrap(), vec![1, 1]);
        assert!(parse_index("a").is_err());
        let opts = DerivativeOpts { index: Some("0,0".to_string()), ..Default::default() };
        assert!(opts.resolve().is_err(), "zero total order rejected");
    }
}
