//! File formats: CSV for tabular artifacts (point clouds, operators,
//! studies, trajectories) and JSON for structured ones (stencil sets,
//! stepwise paths, manifests). Floating-point values are written in the
//! shortest form that parses back to the identical bits, so a
//! serialize/deserialize cycle is exact and identical runs produce
//! byte-identical files.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use nonlocal_core::allen_cahn::{Provenance, StateSeries};
use nonlocal_core::operators::SparseOperator;
use nonlocal_core::point_cloud::{PointCloud, Role};
use nonlocal_core::regress::StepwiseResult;
use nonlocal_core::stencil::{SkippedStencil, Stencil, StencilSet};
use nonlocal_core::taylor::ErrorStudy;
use serde::{Deserialize, Serialize};

use crate::CliError;

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Usage(format!("{}: {e}", path.display()))
}

/// Writes one CSV record of raw fields.
fn write_record(
    writer: &mut csv::Writer<fs::File>,
    path: &Path,
    fields: &[String],
) -> Result<(), CliError> {
    writer.write_record(fields).map_err(|e| io_err(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>, CliError> {
    csv::Writer::from_path(path).map_err(|e| io_err(path, e))
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>, CliError> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| io_err(path, e))
}

fn parse_f64(path: &Path, field: &str, raw: &str) -> Result<f64, CliError> {
    raw.parse::<f64>()
        .map_err(|_| io_err(path, format!("column '{field}': cannot parse '{raw}' as a number")))
}

// ---------------------------------------------------------------- clouds

/// Point cloud CSV: coordinate columns `x0..x{p-1}` plus a `role` column
/// of `train`/`test` markers.
pub fn write_point_cloud_csv(path: &Path, cloud: &PointCloud) -> Result<(), CliError> {
    let mut writer = csv_writer(path)?;
    let p = cloud.dim();
    let mut header: Vec<String> = (0..p).map(|d| format!("x{d}")).collect();
    header.push("role".to_string());
    write_record(&mut writer, path, &header)?;
    for v in 0..cloud.len() {
        let mut record: Vec<String> =
            (0..p).map(|d| format!("{}", cloud.coord(v, d))).collect();
        record.push(
            match cloud.role(v) {
                Role::Train => "train",
                Role::Test => "test",
            }
            .to_string(),
        );
        write_record(&mut writer, path, &record)?;
    }
    writer.flush().map_err(|e| io_err(path, e))
}

/// Reads a point cloud CSV. The coordinate columns must be `x0..x{p-1}`
/// with no gaps; a `role` column is optional and defaults to `train`.
pub fn read_point_cloud_csv(path: &Path) -> Result<PointCloud, CliError> {
    let mut reader = csv_reader(path)?;
    let headers = reader.headers().map_err(|e| io_err(path, e))?.clone();
    let mut coord_slots: Vec<Option<usize>> = Vec::new();
    let mut role_slot = None;
    for (slot, name) in headers.iter().enumerate() {
        if name == "role" {
            role_slot = Some(slot);
        } else if let Some(d) = name.strip_prefix('x').and_then(|s| s.parse::<usize>().ok()) {
            if coord_slots.len() <= d {
                coord_slots.resize(d + 1, None);
            }
            coord_slots[d] = Some(slot);
        } else {
            return Err(io_err(path, format!("unexpected column '{name}'")));
        }
    }
    let p = coord_slots.len();
    let mut slots = Vec::with_capacity(p);
    for (d, slot) in coord_slots.into_iter().enumerate() {
        slots.push(slot.ok_or_else(|| io_err(path, format!("missing column 'x{d}'")))?);
    }
    if p == 0 {
        return Err(io_err(path, "no coordinate columns x0.. found"));
    }

    let mut coords: Vec<f64> = Vec::new();
    let mut roles: Vec<Role> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| io_err(path, e))?;
        for &slot in &slots {
            coords.push(parse_f64(path, &headers[slot], &record[slot])?);
        }
        roles.push(match role_slot {
            None => Role::Train,
            Some(slot) => match &record[slot] {
                "train" => Role::Train,
                "test" => Role::Test,
                other => {
                    return Err(io_err(path, format!("unknown role '{other}'")));
                }
            },
        });
    }
    if roles.is_empty() {
        return Err(io_err(path, "cloud file has no rows"));
    }
    let points = DMatrix::from_row_slice(roles.len(), p, &coords);
    PointCloud::from_parts(points, roles, None).map_err(|e| io_err(path, e))
}

// --------------------------------------------------------------- stencils

#[derive(Serialize, Deserialize)]
struct StencilRecord {
    base: usize,
    mu: usize,
    members: Vec<usize>,
    offsets: Vec<Vec<f64>>,
    weights: Vec<f64>,
    residual: f64,
}

#[derive(Serialize, Deserialize)]
struct StencilSetFile {
    p: usize,
    r: usize,
    stencils: Vec<StencilRecord>,
}

/// Stencil set JSON: dimension, order, and one record per stencil in
/// ascending `(base, mu)` order. Round-trips bit-exactly.
pub fn write_stencil_set_json(path: &Path, set: &StencilSet) -> Result<(), CliError> {
    let stencils = set
        .iter()
        .map(|s| StencilRecord {
            base: s.base(),
            mu: s.mu(),
            members: s.members().to_vec(),
            offsets: (0..s.len())
                .map(|i| (0..set.p()).map(|d| s.offsets()[(i, d)]).collect())
                .collect(),
            weights: s.weights().iter().copied().collect(),
            residual: s.residual(),
        })
        .collect();
    let file = StencilSetFile { p: set.p(), r: set.r(), stencils };
    let text = serde_json::to_string_pretty(&file).map_err(|e| io_err(path, e))?;
    fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn read_stencil_set_json(path: &Path) -> Result<StencilSet, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let file: StencilSetFile = serde_json::from_str(&text).map_err(|e| io_err(path, e))?;
    let mut stencils = Vec::with_capacity(file.stencils.len());
    for record in file.stencils {
        let rows = record.offsets.len();
        if record.offsets.iter().any(|row| row.len() != file.p) {
            return Err(io_err(path, "offset row width differs from the set dimension"));
        }
        let flat: Vec<f64> = record.offsets.into_iter().flatten().collect();
        let offsets = DMatrix::from_row_slice(rows, file.p, &flat);
        let stencil = Stencil::from_parts(
            record.base,
            record.mu,
            record.members,
            offsets,
            DVector::from_vec(record.weights),
            file.r,
            record.residual,
        )
        .map_err(|e| io_err(path, e))?;
        stencils.push(stencil);
    }
    StencilSet::from_stencils(file.p, file.r, stencils).map_err(|e| io_err(path, e))
}

/// Companion report for builds with skipped vertices.
pub fn write_skipped_json(path: &Path, skipped: &[SkippedStencil]) -> Result<(), CliError> {
    #[derive(Serialize)]
    struct Entry {
        base: usize,
        mu: usize,
        error: String,
    }
    let entries: Vec<Entry> = skipped
        .iter()
        .map(|s| Entry { base: s.base, mu: s.mu, error: s.error.to_string() })
        .collect();
    let text = serde_json::to_string_pretty(&entries).map_err(|e| io_err(path, e))?;
    fs::write(path, text).map_err(|e| io_err(path, e))
}

// -------------------------------------------------------------- operators

/// Sparse operator CSV: coordinate triplets `(row, col, value)` in
/// row-major order.
pub fn write_sparse_operator_csv(path: &Path, op: &SparseOperator) -> Result<(), CliError> {
    let mut writer = csv_writer(path)?;
    write_record(
        &mut writer,
        path,
        &["row".to_string(), "col".to_string(), "value".to_string()],
    )?;
    for (row, col, value) in op.triplets() {
        write_record(
            &mut writer,
            path,
            &[row.to_string(), col.to_string(), format!("{value}")],
        )?;
    }
    writer.flush().map_err(|e| io_err(path, e))
}

// ----------------------------------------------------------- error studies

/// Compact label for a derivative index: exponents joined by `_`.
/// Column-name fragment for a multi-index: exponents joined by `_`.
pub fn index_label(exponents: &[u32]) -> String {
    exponents.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("_")
}

/// Error-study CSV: one row per mesh with the spacing, the global model
/// error, the mean derivative error per index, the worst-case derivative
/// error per index, and the mean scale-factor deviation per order.
pub fn write_error_study_csv(path: &Path, study: &ErrorStudy) -> Result<(), CliError> {
    let mut writer = csv_writer(path)?;
    let labels: Vec<String> =
        study.indices.indices().iter().map(|i| index_label(i.exponents())).collect();
    let k = study.gamma_slopes.len();
    let mut header = vec!["h".to_string(), "e_global".to_string()];
    header.extend(labels.iter().map(|l| format!("eps_{l}")));
    header.extend(labels.iter().map(|l| format!("eps_max_{l}")));
    header.extend((1..=k).map(|l| format!("gamma_dev_{l}")));
    write_record(&mut writer, path, &header)?;
    for report in &study.reports {
        let mut record = vec![format!("{}", report.h), format!("{}", report.model_error_abs)];
        record.extend(report.derivative_errors_abs.iter().map(|v| format!("{v}")));
        record.extend(report.derivative_errors_max.iter().map(|v| format!("{v}")));
        record.extend(report.gamma_dev_abs.iter().map(|v| format!("{v}")));
        write_record(&mut writer, path, &record)?;
    }
    writer.flush().map_err(|e| io_err(path, e))
}

#[derive(Serialize)]
struct DerivativeSlope<'a> {
    index: &'a str,
    mean: Option<f64>,
    max: Option<f64>,
}

#[derive(Serialize)]
struct SlopesFile<'a> {
    model_slope: Option<f64>,
    derivative_slopes: Vec<DerivativeSlope<'a>>,
    gamma_slopes: &'a [Option<f64>],
}

/// Fitted log-log slopes of an error study as a JSON summary.
pub fn write_slopes_json(path: &Path, study: &ErrorStudy) -> Result<(), CliError> {
    let labels: Vec<String> =
        study.indices.indices().iter().map(|i| index_label(i.exponents())).collect();
    let derivative_slopes = labels
        .iter()
        .enumerate()
        .map(|(s, label)| DerivativeSlope {
            index: label,
            mean: study.derivative_slopes[s],
            max: study.derivative_slopes_max[s],
        })
        .collect();
    let file = SlopesFile {
        model_slope: study.model_slope,
        derivative_slopes,
        gamma_slopes: &study.gamma_slopes,
    };
    let text = serde_json::to_string_pretty(&file).map_err(|e| io_err(path, e))?;
    fs::write(path, text).map_err(|e| io_err(path, e))
}

// ------------------------------------------------------------- regression

#[derive(Serialize)]
struct StepwiseStepFile<'a> {
    terms: &'a [String],
    coefficients: &'a [f64],
    loss: f64,
}

#[derive(Serialize)]
struct LossWeightsFile {
    w1: f64,
    w2: f64,
    w_inf: f64,
}

#[derive(Serialize)]
struct StepwiseFile<'a> {
    path: Vec<StepwiseStepFile<'a>>,
    lambda: f64,
    loss_weights: LossWeightsFile,
}

/// Stepwise elimination path as JSON: per step the surviving term
/// labels, their coefficients, and the training loss, plus the solver's
/// ridge parameter and the loss weights.
pub fn write_stepwise_json(path: &Path, result: &StepwiseResult) -> Result<(), CliError> {
    let file = StepwiseFile {
        path: result
            .path
            .iter()
            .map(|step| StepwiseStepFile {
                terms: &step.labels,
                coefficients: &step.coefficients,
                loss: step.loss,
            })
            .collect(),
        lambda: result.lambda,
        loss_weights: LossWeightsFile {
            w1: result.loss_weights.w1,
            w2: result.loss_weights.w2,
            w_inf: result.loss_weights.w_inf,
        },
    };
    let text = serde_json::to_string_pretty(&file).map_err(|e| io_err(path, e))?;
    fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Loss-per-model-size CSV in ascending term count; `extra` optionally
/// appends a second loss column (cross-validated losses).
pub fn write_loss_curve_csv(
    path: &Path,
    header: &[&str],
    rows: &[(usize, Vec<f64>)],
) -> Result<(), CliError> {
    let mut writer = csv_writer(path)?;
    write_record(&mut writer, path, &header.iter().map(|s| s.to_string()).collect::<Vec<_>>())?;
    for (n_terms, losses) in rows {
        let mut record = vec![n_terms.to_string()];
        record.extend(losses.iter().map(|v| format!("{v}")));
        write_record(&mut writer, path, &record)?;
    }
    writer.flush().map_err(|e| io_err(path, e))
}

/// Generic CSV table of pre-formatted fields.
pub fn write_string_table(
    path: &Path,
    header: &[String],
    rows: &[Vec<String>],
) -> Result<(), CliError> {
    let mut writer = csv_writer(path)?;
    write_record(&mut writer, path, header)?;
    for row in rows {
        write_record(&mut writer, path, row)?;
    }
    writer.flush().map_err(|e| io_err(path, e))
}

// ------------------------------------------------------------ trajectories

/// State-series CSV: `t` first, then one column per functional.
pub fn write_state_series_csv(path: &Path, series: &StateSeries) -> Result<(), CliError> {
    let mut writer = csv_writer(path)?;
    let mut header = vec!["t".to_string()];
    header.extend(series.names().iter().cloned());
    write_record(&mut writer, path, &header)?;
    let columns: Vec<&[f64]> =
        series.names().iter().map(|n| series.column(n).expect("own column")).collect();
    for row in 0..series.len() {
        let mut record = vec![format!("{}", series.time()[row])];
        record.extend(columns.iter().map(|c| format!("{}", c[row])));
        write_record(&mut writer, path, &record)?;
    }
    writer.flush().map_err(|e| io_err(path, e))
}

/// Reads a state series CSV; every column except `t` becomes a named
/// functional. Validation (strictly increasing time, finite values)
/// happens in the core constructor.
pub fn read_state_series_csv(path: &Path) -> Result<StateSeries, CliError> {
    let mut reader = csv_reader(path)?;
    let headers = reader.headers().map_err(|e| io_err(path, e))?.clone();
    let t_slot = headers
        .iter()
        .position(|h| h == "t")
        .ok_or_else(|| io_err(path, "missing time column 't'"))?;
    let names: Vec<String> =
        headers.iter().filter(|h| *h != "t").map(|h| h.to_string()).collect();
    let mut time = Vec::new();
    let mut columns: Vec<Vec<f64>> = names.iter().map(|_| Vec::new()).collect();
    for record in reader.records() {
        let record = record.map_err(|e| io_err(path, e))?;
        time.push(parse_f64(path, "t", &record[t_slot])?);
        let mut column = 0;
        for (slot, header) in headers.iter().enumerate() {
            if slot == t_slot {
                continue;
            }
            columns[column].push(parse_f64(path, header, &record[slot])?);
            column += 1;
        }
    }
    StateSeries::new(time, names, columns, Provenance::Ingested)
        .map_err(|e| io_err(path, e))
}

// ---------------------------------------------------------------- manifest

/// One generated trajectory in a dataset manifest.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct TrajectoryEntry {
    pub file: String,
    pub m_phi: f64,
    pub lambda: f64,
    pub dt: f64,
    pub steps: usize,
    pub nx: usize,
    pub length: f64,
    pub initial: String,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct Manifest {
    pub seed: u64,
    pub trajectories: Vec<TrajectoryEntry>,
}

pub fn write_manifest_json(path: &Path, manifest: &Manifest) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(manifest).map_err(|e| io_err(path, e))?;
    fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn read_manifest_json(path: &Path) -> Result<Manifest, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| io_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nonlocal_core::stencil::{build_stencil_set, BuildOptions};

    fn mesh(p: usize, m: usize) -> PointCloud {
        PointCloud::generate_interlaced_mesh(p, m, 1.0).unwrap()
    }

    #[test]
    fn point_cloud_csv_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cloud.csv");
        let cloud = mesh(2, 3);
        write_point_cloud_csv(&path, &cloud).unwrap();
        let back = read_point_cloud_csv(&path).unwrap();
        assert_eq!(back.len(), cloud.len());
        assert_eq!(back.dim(), cloud.dim());
        for v in 0..cloud.len() {
            assert_eq!(back.role(v), cloud.role(v));
            for d in 0..cloud.dim() {
                assert_eq!(back.coord(v, d), cloud.coord(v, d), "exact round-trip");
            }
        }
    }

    #[test]
    fn point_cloud_csv_rejects_unknown_columns() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        fs::write(&path, "x0,weight\n0.0,1.0\n").unwrap();
        assert!(read_point_cloud_csv(&path).is_err());
    }

    #[test]
    fn stencil_set_json_round_trips_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stencils.json");
        let cloud = mesh(1, 8);
        let set = build_stencil_set(&cloud, 3, BuildOptions::default()).unwrap().set;
        write_stencil_set_json(&path, &set).unwrap();
        let back = read_stencil_set_json(&path).unwrap();
        assert_eq!(back, set, "bit-exact stencil round-trip");
    }

    #[test]
    fn state_series_csv_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("series.csv");
        let series = StateSeries::new(
            vec![0.0, 0.1, 0.2],
            vec!["Psi".to_string(), "phibar".to_string()],
            vec![vec![1.0, 0.9, 0.85], vec![0.5, 0.45, 0.4375]],
            Provenance::Ingested,
        )
        .unwrap();
        write_state_series_csv(&path, &series).unwrap();
        let back = read_state_series_csv(&path).unwrap();
        assert_eq!(back.time(), series.time());
        assert_eq!(back.column("Psi"), series.column("Psi"));
        assert_eq!(back.column("phibar"), series.column("phibar"));
    }

    #[test]
    fn state_series_csv_rejects_non_monotone_time() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("series.csv");
        fs::write(&path, "t,Psi\n0.0,1.0\n0.2,0.9\n0.1,0.8\n").unwrap();
        let err = read_state_series_csv(&path).unwrap_err();
        assert!(format!("{err}").contains("strictly increase"), "{err}");
    }

    #[test]
    fn manifest_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let manifest = Manifest {
            seed: 11,
            trajectories: vec![TrajectoryEntry {
                file: "traj_00.csv".to_string(),
                m_phi: 1e-3,
                lambda: 0.5,
                dt: 1e-2,
                steps: 10,
                nx: 16,
                length: 1.0,
                initial: "cosine:[0.4,-0.2]".to_string(),
            }],
        };
        write_manifest_json(&path, &manifest).unwrap();
        assert_eq!(read_manifest_json(&path).unwrap(), manifest);
    }
}
