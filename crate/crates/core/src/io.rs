//! CSV ingestion, the versioned model file and report output. Every write
//! goes to a temporary file next to the target and is renamed into place.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{GmmError, Result};
use crate::math::{Matrix, Vector};
use crate::model::{CovarianceStructure, GaussianComponent, MixtureModel, Origin, OutlierRecord, OutlierStore};
use crate::offline::OfflineConfig;
use crate::online::{OnlineConfig, OnlineState};
use crate::preprocess::{NormalizationStats, PcaProjection, Preprocessing};

pub const MODEL_FILE_VERSION: u32 = 1;

/// A numeric table: column names and one vector per data row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvData {
    pub header: Vec<String>,
    pub rows: Vec<Vector>,
}

impl CsvData {
    pub fn dim(&self) -> usize {
        self.header.len()
    }
}

/// Reads a headed, all-numeric CSV. Rows in errors are file line numbers
/// (the header is line 1); columns are 1-based.
pub fn read_csv<R: Read>(reader: R) -> Result<CsvData> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers().map_err(csv_error)?.iter().map(str::to_string).collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(GmmError::Parse { row: 1, column: 0, message: "missing header row".into() });
    }
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != header.len() {
            return Err(GmmError::Shape(format!("line {line} has {} fields, header has {}", record.len(), header.len())));
        }
        let mut values = Vec::with_capacity(header.len());
        for (j, cell) in record.iter().enumerate() {
            let v: f64 = cell
                .parse()
                .map_err(|_| GmmError::Parse { row: line, column: j + 1, message: format!("'{cell}' in column '{}' is not a number", header[j]) })?;
            if !v.is_finite() {
                return Err(GmmError::Parse { row: line, column: j + 1, message: format!("non-finite value '{cell}' in column '{}'", header[j]) });
            }
            values.push(v);
        }
        rows.push(Vector::from_vec(values));
    }
    Ok(CsvData { header, rows })
}

fn csv_error(e: csv::Error) -> GmmError {
    let row = e.position().map_or(0, |p| p.line() as usize);
    match e.kind() {
        csv::ErrorKind::Io(_) => GmmError::Io(e.to_string()),
        _ => GmmError::Parse { row, column: 0, message: e.to_string() },
    }
}

pub fn load_csv(path: &Path) -> Result<CsvData> {
    let file = fs::File::open(path).map_err(|e| GmmError::Io(format!("{}: {e}", path.display())))?;
    read_csv(std::io::BufReader::new(file))
}

/// Shortest representation that parses back to the same double.
fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

pub fn write_csv<W: Write>(writer: W, header: &[String], rows: &[Vector]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(header).map_err(csv_error)?;
    for (i, r) in rows.iter().enumerate() {
        if r.len() != header.len() {
            return Err(GmmError::Shape(format!("row {i} has {} entries, header has {}", r.len(), header.len())));
        }
        w.write_record(r.iter().map(|v| fmt_f64(*v))).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_csv(path: &Path, header: &[String], rows: &[Vector]) -> Result<()> {
    let mut buf = Vec::new();
    write_csv(&mut buf, header, rows)?;
    write_atomic(path, &buf)
}

/// Default column names `x1..xd`.
pub fn default_header(d: usize) -> Vec<String> {
    (1..=d).map(|i| format!("x{i}")).collect()
}

fn staged(path: &Path, bytes: &[u8]) -> Result<tempfile::NamedTempFile> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| GmmError::Io(format!("{}: {e}", dir.display())))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    Ok(tmp)
}

fn persist(tmp: tempfile::NamedTempFile, path: &Path) -> Result<()> {
    // temporary files are created owner-only; keep the target's mode or use 0644
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        let mode = fs::metadata(path).map(|m| m.permissions().mode()).unwrap_or(0o644);
        tmp.as_file().set_permissions(fs::Permissions::from_mode(mode))?;
    }
    tmp.persist(path).map_err(|e| GmmError::Io(format!("{}: {}", path.display(), e.error)))?;
    Ok(())
}

/// Writes `bytes` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    persist(staged(path, bytes)?, path)
}

/// Pretty JSON report, written atomically.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| GmmError::Io(e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Settings the model was produced with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ConfigEcho {
    pub offline: OfflineConfig,
    pub online: OnlineConfig,
}

/// Everything needed to continue processing: the online state, the frozen
/// input transform, the input column names and the settings used.
#[derive(Debug, Clone, PartialEq)]
pub struct SavedModel {
    pub state: OnlineState,
    pub preprocessing: Preprocessing,
    pub columns: Vec<String>,
    pub config: ConfigEcho,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ComponentRecord {
    weight: f64,
    count: f64,
    mean: Vec<f64>,
    /// Row-major.
    covariance: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct NormalizationRecord {
    means: Vec<f64>,
    stddevs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PcaRecord {
    rows: usize,
    cols: usize,
    /// Row-major, one retained direction per row.
    basis: Vec<f64>,
    center: Vec<f64>,
    explained_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct OutlierRef {
    file: String,
    count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    dimension: usize,
    structure: CovarianceStructure,
    threshold: Option<f64>,
    round: u64,
    ingested: u64,
    epsilon_reference: Option<f64>,
    columns: Vec<String>,
    components: Vec<ComponentRecord>,
    normalization: Option<NormalizationRecord>,
    pca: Option<PcaRecord>,
    config: ConfigEcho,
    outliers: OutlierRef,
}

fn row_major(m: &Matrix) -> Vec<f64> {
    (0..m.nrows()).flat_map(|i| (0..m.ncols()).map(move |j| m[(i, j)])).collect()
}

fn from_row_major(rows: usize, cols: usize, v: &[f64], what: &str) -> Result<Matrix> {
    if v.len() != rows * cols {
        return Err(GmmError::Shape(format!("{what}: {} values for a {rows}x{cols} matrix", v.len())));
    }
    Ok(Matrix::from_row_slice(rows, cols, v))
}

/// Sidecar holding the outlier store, `<model>.outliers.csv`. It is the
/// only part of the saved state whose size depends on the data seen.
pub fn outliers_path(model_path: &Path) -> PathBuf {
    let mut name = model_path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".outliers.csv");
    model_path.with_file_name(name)
}

fn encode(saved: &SavedModel, outlier_file: &str) -> Result<String> {
    let model = &saved.state.model;
    model.validate()?;
    let file = ModelFile {
        version: MODEL_FILE_VERSION,
        dimension: model.dimension,
        structure: model.structure,
        threshold: model.threshold,
        round: model.round,
        ingested: saved.state.ingested,
        epsilon_reference: saved.state.epsilon_reference,
        columns: saved.columns.clone(),
        components: model
            .components
            .iter()
            .map(|c| ComponentRecord { weight: c.weight, count: c.count, mean: c.mean.iter().copied().collect(), covariance: row_major(&c.covariance) })
            .collect(),
        normalization: saved
            .preprocessing
            .normalization
            .as_ref()
            .map(|n| NormalizationRecord { means: n.means.iter().copied().collect(), stddevs: n.stddevs.iter().copied().collect() }),
        pca: saved.preprocessing.pca.as_ref().map(|p| PcaRecord {
            rows: p.basis.nrows(),
            cols: p.basis.ncols(),
            basis: row_major(&p.basis),
            center: p.center.iter().copied().collect(),
            explained_fraction: p.explained_fraction,
        }),
        config: saved.config.clone(),
        outliers: OutlierRef { file: outlier_file.to_string(), count: saved.state.outliers.len() },
    };
    let mut text = serde_json::to_string_pretty(&file).map_err(|e| GmmError::InvalidModel(e.to_string()))?;
    text.push('\n');
    Ok(text)
}

fn json_error(e: serde_json::Error) -> GmmError {
    GmmError::Parse { row: e.line(), column: e.column(), message: e.to_string() }
}

fn decode(text: &str) -> Result<(ModelFile, SavedModel)> {
    let raw: serde_json::Value = serde_json::from_str(text).map_err(json_error)?;
    let found = raw.get("version").and_then(serde_json::Value::as_u64).ok_or_else(|| GmmError::Parse { row: 0, column: 0, message: "missing model file version".into() })?;
    if found != MODEL_FILE_VERSION as u64 {
        return Err(GmmError::UnsupportedVersion { found: found.min(u32::MAX as u64) as u32, expected: MODEL_FILE_VERSION });
    }
    let file: ModelFile = serde_json::from_str(text).map_err(json_error)?;
    let d = file.dimension;
    let components = file
        .components
        .iter()
        .enumerate()
        .map(|(i, c)| {
            if c.mean.len() != d {
                return Err(GmmError::Shape(format!("component {i}: mean has {} entries, model dimension {d}", c.mean.len())));
            }
            let cov = from_row_major(d, d, &c.covariance, &format!("component {i} covariance"))?;
            Ok(GaussianComponent::new(c.weight, Vector::from_vec(c.mean.clone()), cov, c.count))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut model = MixtureModel::new(components)?.with_structure(file.structure);
    model.threshold = file.threshold;
    model.round = file.round;
    let normalization = file.normalization.as_ref().map(|n| {
        if n.means.len() != n.stddevs.len() {
            return Err(GmmError::Shape("normalization means and stddevs differ in length".into()));
        }
        Ok(NormalizationStats { means: Vector::from_vec(n.means.clone()), stddevs: Vector::from_vec(n.stddevs.clone()) })
    });
    let pca = file.pca.as_ref().map(|p| {
        let basis = from_row_major(p.rows, p.cols, &p.basis, "pca basis")?;
        if p.center.len() != p.cols {
            return Err(GmmError::Shape("pca center length differs from basis width".into()));
        }
        Ok(PcaProjection { basis, center: Vector::from_vec(p.center.clone()), explained_fraction: p.explained_fraction })
    });
    let preprocessing = Preprocessing { normalization: normalization.transpose()?, pca: pca.transpose()? };
    let out_dim = preprocessing.pca.as_ref().map(|p| p.k()).or_else(|| preprocessing.normalization.as_ref().map(|n| n.dim())).unwrap_or(d);
    if out_dim != d {
        return Err(GmmError::Shape(format!("preprocessing produces {out_dim} dimensions, model has {d}")));
    }
    let state = OnlineState { model, outliers: OutlierStore::new(), ingested: file.ingested, epsilon_reference: file.epsilon_reference };
    let columns = file.columns.clone();
    let config = file.config.clone();
    Ok((file, SavedModel { state, preprocessing, columns, config }))
}

fn outlier_csv(store: &OutlierStore, d: usize) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["round".to_string(), "index".to_string()];
    header.extend(default_header(d));
    w.write_record(&header).map_err(csv_error)?;
    for r in store.records() {
        let mut rec = vec![r.origin.round.to_string(), r.origin.index.to_string()];
        rec.extend(r.point.iter().map(|v| fmt_f64(*v)));
        w.write_record(&rec).map_err(csv_error)?;
    }
    w.into_inner().map_err(|e| GmmError::Io(e.to_string()))
}

fn parse_outliers(bytes: &[u8], d: usize) -> Result<OutlierStore> {
    let table = read_csv(bytes)?;
    if table.dim() != d + 2 {
        return Err(GmmError::Shape(format!("outlier file has {} columns, expected {}", table.dim(), d + 2)));
    }
    let records = table
        .rows
        .into_iter()
        .map(|r| {
            let origin = Origin { round: r[0] as u64, index: r[1] as usize };
            OutlierRecord { point: Vector::from_iterator(d, r.iter().skip(2).copied()), origin }
        })
        .collect();
    OutlierStore::from_records(records)
}

/// Writes the model file and its outlier sidecar. Both are staged first, so
/// a failure leaves any existing files at those paths untouched.
pub fn save_model(path: &Path, saved: &SavedModel) -> Result<()> {
    let side = outliers_path(path);
    let side_name = side.file_name().and_then(|n| n.to_str()).ok_or_else(|| GmmError::Io(format!("bad model path {}", path.display())))?;
    let text = encode(saved, side_name)?;
    let outliers = outlier_csv(&saved.state.outliers, saved.state.model.dimension)?;
    let side_tmp = staged(&side, &outliers)?;
    let model_tmp = staged(path, text.as_bytes())?;
    persist(side_tmp, &side)?;
    persist(model_tmp, path)
}

pub fn load_model(path: &Path) -> Result<SavedModel> {
    let text = fs::read_to_string(path).map_err(|e| GmmError::Io(format!("{}: {e}", path.display())))?;
    let (file, mut saved) = decode(&text)?;
    let side = path.with_file_name(&file.outliers.file);
    let bytes = fs::read(&side).map_err(|e| GmmError::Io(format!("{}: {e}", side.display())))?;
    let store = parse_outliers(&bytes, file.dimension)?;
    if store.len() != file.outliers.count {
        return Err(GmmError::InvalidModel(format!("outlier file holds {} records, model file expects {}", store.len(), file.outliers.count)));
    }
    saved.state.outliers = store;
    Ok(saved)
}

/// In-memory form of the model file without the outliers.
pub fn model_to_string(saved: &SavedModel) -> Result<String> {
    encode(saved, "")
}

/// Parses `model_to_string` output; the outlier store comes back empty.
pub fn model_from_str(text: &str) -> Result<SavedModel> {
    Ok(decode(text)?.1)
}
