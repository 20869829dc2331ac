//! CSV files with JSON sidecars for sample sets, operator matrices and Gram matrices.
//!
//! Every `name.csv` may carry a `name.meta.json` next to it. Floats are written
//! in Rust's shortest round-trip form, so reading a file back is exact.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::basis::{Domain, GramMatrix, GramMethod};
use crate::dynamics::{SampleSet, SampleSource};
use crate::error::{Error, Result};
use crate::estimator::{OperatorEstimate, OperatorKind};

/// `dir/name.csv` -> `dir/name.meta.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.meta.json"))
}

pub fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    ensure_parent(path)?;
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub(crate) fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    ensure_parent(path)?;
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Reader::from_reader(file))
}

/// Shortest round-trip text; scientific notation for very small or large magnitudes.
pub(crate) fn fmt_f64(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && a.is_finite() && !(1e-4..1e15).contains(&a) {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

fn parse_f64(field: &str, path: &Path) -> Result<f64> {
    field
        .trim()
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("{}: cannot parse {field:?} as a number", path.display())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub label: String,
    pub seed: u64,
    pub source: SampleSource,
    pub state_dim: usize,
    pub count: usize,
}

/// Columns `x_1..x_n, y_1..y_n`, one row per pair, plus the metadata sidecar.
pub fn write_samples(path: &Path, samples: &SampleSet, label: &str) -> Result<()> {
    let n = samples.state_dim();
    let mut w = csv_writer(path)?;
    let header: Vec<String> = (1..=n)
        .map(|i| format!("x_{i}"))
        .chain((1..=n).map(|i| format!("y_{i}")))
        .collect();
    w.write_record(&header)?;
    for (x, y) in samples.pairs() {
        w.write_record(x.iter().chain(y).map(|v| fmt_f64(*v)))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    write_json(
        &sidecar_path(path),
        &SampleMeta {
            label: label.to_string(),
            seed: samples.seed,
            source: samples.source,
            state_dim: n,
            count: samples.len(),
        },
    )
}

/// Reads a sample CSV. Without a sidecar the seed is 0 and the source is
/// taken to be a single trajectory.
pub fn read_samples(path: &Path) -> Result<(SampleSet, Option<SampleMeta>)> {
    let mut r = csv_reader(path)?;
    let header = r.headers()?.clone();
    if header.is_empty() || header.len() % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "{}: expected an even number of columns x_1..x_n, y_1..y_n",
            path.display()
        )));
    }
    let n = header.len() / 2;
    for i in 0..n {
        if &header[i] != format!("x_{}", i + 1).as_str() || &header[n + i] != format!("y_{}", i + 1).as_str() {
            return Err(Error::InvalidArgument(format!("{}: unexpected header {header:?}", path.display())));
        }
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        for (i, field) in rec.iter().enumerate() {
            let v = parse_f64(field, path)?;
            if i < n {
                xs.push(v);
            } else {
                ys.push(v);
            }
        }
    }
    let side = sidecar_path(path);
    let meta: Option<SampleMeta> = if side.exists() { Some(read_json(&side)?) } else { None };
    let (seed, source) = meta
        .as_ref()
        .map(|m| (m.seed, m.source))
        .unwrap_or((0, SampleSource::SingleTrajectory));
    Ok((SampleSet::from_rows(n, xs, ys, source, seed)?, meta))
}

/// Row-major matrix under a header of basis names.
pub fn write_matrix(path: &Path, names: &[String], matrix: &DMatrix<f64>) -> Result<()> {
    if names.len() != matrix.ncols() {
        return Err(Error::DimensionMismatch {
            expected: matrix.ncols(),
            actual: names.len(),
            context: "matrix header",
        });
    }
    let mut w = csv_writer(path)?;
    w.write_record(names)?;
    for i in 0..matrix.nrows() {
        w.write_record(matrix.row(i).iter().map(|v| fmt_f64(*v)))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_matrix(path: &Path) -> Result<(Vec<String>, DMatrix<f64>)> {
    let mut r = csv_reader(path)?;
    let names: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let mut data = Vec::new();
    let mut rows = 0;
    for rec in r.records() {
        let rec = rec?;
        for field in rec.iter() {
            data.push(parse_f64(field, path)?);
        }
        rows += 1;
    }
    Ok((names.clone(), DMatrix::from_row_slice(rows, names.len(), &data)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorMeta {
    pub operator_kind: OperatorKind,
    pub dict_names: Vec<String>,
    pub sample_count: usize,
    pub seed: Option<u64>,
    pub condition_sigma0: f64,
    pub fallback: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cond_lambda: Option<f64>,
}

impl OperatorMeta {
    pub fn of(est: &OperatorEstimate) -> Self {
        OperatorMeta {
            operator_kind: est.operator_kind,
            dict_names: est.dict_names.clone(),
            sample_count: est.sample_count,
            seed: est.seed,
            condition_sigma0: finite_or_max(est.condition_sigma0),
            fallback: est.fallback,
            cond_lambda: None,
        }
    }
}

fn finite_or_max(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        f64::MAX
    }
}

pub fn write_operator(path: &Path, est: &OperatorEstimate) -> Result<()> {
    write_operator_with_meta(path, est, OperatorMeta::of(est))
}

pub fn write_operator_with_meta(path: &Path, est: &OperatorEstimate, meta: OperatorMeta) -> Result<()> {
    write_matrix(path, &est.dict_names, &est.matrix)?;
    write_json(&sidecar_path(path), &meta)
}

pub fn read_operator(path: &Path) -> Result<OperatorEstimate> {
    let (names, matrix) = read_matrix(path)?;
    let meta: OperatorMeta = read_json(&sidecar_path(path))?;
    if meta.dict_names != names {
        return Err(Error::InvalidArgument(format!(
            "{}: header does not match sidecar dictionary names",
            path.display()
        )));
    }
    Ok(OperatorEstimate {
        matrix,
        operator_kind: meta.operator_kind,
        dict_names: names,
        sample_count: meta.sample_count,
        seed: meta.seed,
        condition_sigma0: meta.condition_sigma0,
        fallback: meta.fallback,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GramMeta {
    pub domain: Domain,
    pub method: GramMethod,
    pub min_eigenvalue: f64,
    pub condition: f64,
}

pub fn write_gram(path: &Path, names: &[String], gram: &GramMatrix) -> Result<()> {
    write_matrix(path, names, &gram.lambda)?;
    write_json(
        &sidecar_path(path),
        &GramMeta {
            domain: gram.domain.clone(),
            method: gram.method,
            min_eigenvalue: gram.min_eigenvalue(),
            condition: gram.condition(),
        },
    )
}
