//! Dataset files: a headerless CSV payload with one observation per row,
//! a JSON metadata sidecar, and for simulated data a truth sidecar.
//!
//! Rows hold the canonical vectorization of each observation. Floats are
//! written in the shortest decimal form that parses back to the same bits,
//! so a write/read round trip reproduces the tensors exactly.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tnmm::model::TnmmParams;
use tnmm::Tensor;

use crate::{CliError, Result};

/// Sidecar describing the payload: observation shape and row count, plus
/// generator settings when the file came from `simulate`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub dims: Vec<usize>,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_true: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// Ground truth for a simulated dataset: the generating labels and
/// parameters, enough to score any fit or run the optimal rule.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Truth {
    pub labels: Vec<usize>,
    pub params: TnmmParams,
}

fn sidecar(payload: &Path, suffix: &str) -> PathBuf {
    let mut name = payload.as_os_str().to_os_string();
    name.push(suffix);
    PathBuf::from(name)
}

pub fn meta_path(payload: &Path) -> PathBuf {
    sidecar(payload, ".meta.json")
}

pub fn truth_path(payload: &Path) -> PathBuf {
    sidecar(payload, ".truth.json")
}

fn io_err(path: &Path, source: std::io::Error) -> CliError {
    CliError::Io { path: path.to_path_buf(), source }
}

fn parse_err(path: &Path, msg: String) -> CliError {
    CliError::Parse { path: path.to_path_buf(), msg }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| parse_err(path, e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| parse_err(path, e.to_string()))
}

/// Writes the payload and its metadata sidecar.
pub fn write_dataset(payload: &Path, data: &[Tensor], meta: &DatasetMeta) -> Result<()> {
    let file = File::create(payload).map_err(|e| io_err(payload, e))?;
    let mut w = BufWriter::new(file);
    let mut line = String::new();
    for x in data {
        line.clear();
        for (j, v) in x.data().iter().enumerate() {
            if j > 0 {
                line.push(',');
            }
            line.push_str(&v.to_string());
        }
        line.push('\n');
        w.write_all(line.as_bytes()).map_err(|e| io_err(payload, e))?;
    }
    w.flush().map_err(|e| io_err(payload, e))?;
    write_json(&meta_path(payload), meta)
}

/// Reads a payload back through its metadata sidecar, validating that the
/// rows match the declared shape and count.
pub fn read_dataset(payload: &Path) -> Result<(Vec<Tensor>, DatasetMeta)> {
    let meta: DatasetMeta = read_json(&meta_path(payload))?;
    let p: usize = meta.dims.iter().product();
    if p == 0 {
        return Err(parse_err(payload, format!("metadata dims {:?} are empty", meta.dims)));
    }
    let file = File::open(payload).map_err(|e| io_err(payload, e))?;
    let mut data = Vec::with_capacity(meta.n);
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(payload, e))?;
        if line.is_empty() {
            continue;
        }
        let mut row = Vec::with_capacity(p);
        for tok in line.split(',') {
            let v: f64 = tok.trim().parse().map_err(|_| {
                parse_err(payload, format!("row {}: unparseable value {:?}", i + 1, tok))
            })?;
            row.push(v);
        }
        if row.len() != p {
            return Err(parse_err(
                payload,
                format!(
                    "row {} has {} values but dims {:?} need {}",
                    i + 1,
                    row.len(),
                    meta.dims,
                    p
                ),
            ));
        }
        data.push(Tensor::new(meta.dims.clone(), row)?);
    }
    if data.len() != meta.n {
        return Err(parse_err(
            payload,
            format!("payload has {} rows but metadata says n = {}", data.len(), meta.n),
        ));
    }
    Ok((data, meta))
}

/// Loads the truth sidecar when one exists; simulated datasets have one,
/// user-supplied ones usually do not.
pub fn read_truth(payload: &Path) -> Result<Option<Truth>> {
    let path = truth_path(payload);
    if !path.exists() {
        return Ok(None);
    }
    read_json(&path).map(Some)
}
