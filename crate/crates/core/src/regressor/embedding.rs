//! Precomputed per-complex embeddings and their concatenation.
//!
//! Binary tables start with one JSON header line `{name, dim, count, ids}`
//! followed by `count * dim` little-endian f32 values in row-major order.
//! CSV tables hold `id, v0, .., v{dim-1}` per row, with an optional header row
//! whose first field is `id`.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::RegressorError;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    name: String,
    dim: usize,
    ids: Vec<String>,
    values: Vec<f64>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct TableHeader {
    name: String,
    dim: usize,
    count: usize,
    ids: Vec<String>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RegressorError + '_ {
    move |source| RegressorError::Io {
        path: path.display().to_string(),
        source,
    }
}

impl EmbeddingTable {
    pub fn new(name: impl Into<String>, dim: usize, rows: Vec<(String, Vec<f64>)>) -> Result<Self, RegressorError> {
        let name = name.into();
        if dim == 0 {
            return Err(RegressorError::Shape(format!("table '{name}' has dim 0")));
        }
        let mut ids = Vec::with_capacity(rows.len());
        let mut values = Vec::with_capacity(rows.len() * dim);
        let mut index = HashMap::with_capacity(rows.len());
        for (id, v) in rows {
            if v.len() != dim {
                return Err(RegressorError::Shape(format!(
                    "table '{name}': '{id}' has {} values, expected {dim}",
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(RegressorError::NonFinite(format!("table '{name}', id '{id}'")));
            }
            if index.insert(id.clone(), ids.len()).is_some() {
                return Err(RegressorError::Format(format!("table '{name}': duplicate id '{id}'")));
            }
            ids.push(id);
            values.extend(v);
        }
        Ok(EmbeddingTable {
            name,
            dim,
            ids,
            values,
            index,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.index
            .get(id)
            .map(|&k| &self.values[k * self.dim..(k + 1) * self.dim])
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Serialize to the binary layout (values narrowed to f32).
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = TableHeader {
            name: self.name.clone(),
            dim: self.dim,
            count: self.ids.len(),
            ids: self.ids.clone(),
        };
        let mut buf = serde_json::to_vec(&header).expect("header serializes");
        buf.push(b'\n');
        for v in &self.values {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        buf
    }

    pub fn write_binary(&self, path: &Path) -> Result<(), RegressorError> {
        fs::write(path, self.to_bytes()).map_err(io_err(path))
    }

    pub fn read_binary(path: &Path) -> Result<Self, RegressorError> {
        let file = fs::File::open(path).map_err(io_err(path))?;
        let mut reader = BufReader::new(file);
        let mut line = String::new();
        reader.read_line(&mut line).map_err(io_err(path))?;
        let header: TableHeader = serde_json::from_str(line.trim_end())
            .map_err(|e| RegressorError::Format(format!("{}: bad header: {e}", path.display())))?;
        if header.count != header.ids.len() {
            return Err(RegressorError::Format(format!(
                "{}: header count {} but {} ids",
                path.display(),
                header.count,
                header.ids.len()
            )));
        }
        let mut body = Vec::new();
        reader.read_to_end(&mut body).map_err(io_err(path))?;
        let expected = header.count * header.dim * 4;
        if body.len() != expected {
            return Err(RegressorError::Format(format!(
                "{}: expected {expected} bytes of values, found {}",
                path.display(),
                body.len()
            )));
        }
        let floats: Vec<f64> = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        let dim = header.dim;
        let rows = header
            .ids
            .into_iter()
            .enumerate()
            .map(|(k, id)| (id, floats[k * dim..(k + 1) * dim].to_vec()))
            .collect();
        EmbeddingTable::new(header.name, dim, rows)
    }

    pub fn read_csv(path: &Path, name: &str) -> Result<Self, RegressorError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let mut rows = Vec::new();
        let mut dim = None;
        for (k, record) in reader.records().enumerate() {
            let record = record.map_err(|e| RegressorError::Format(format!("{}: {e}", path.display())))?;
            if k == 0 && record.get(0) == Some("id") {
                continue;
            }
            let id = record.get(0).unwrap_or("").to_string();
            let values = record
                .iter()
                .skip(1)
                .map(|f| f.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| {
                    RegressorError::Format(format!("{}: line {}: {e}", path.display(), k + 1))
                })?;
            dim.get_or_insert(values.len());
            rows.push((id, values));
        }
        EmbeddingTable::new(name, dim.unwrap_or(0), rows)
    }

    /// Load by extension: `.csv` as CSV, anything else as the binary layout.
    /// `name` overrides the stored name when given.
    pub fn load(path: &Path, name: Option<&str>) -> Result<Self, RegressorError> {
        let is_csv = path.extension().and_then(|e| e.to_str()) == Some("csv");
        if is_csv {
            let fallback = path.file_stem().and_then(|s| s.to_str()).unwrap_or("embedding");
            EmbeddingTable::read_csv(path, name.unwrap_or(fallback))
        } else {
            let table = EmbeddingTable::read_binary(path)?;
            Ok(match name {
                Some(n) => table.with_name(n),
                None => table,
            })
        }
    }
}

/// Concatenate the vectors for `id` in the order the tables are given.
pub fn fuse(tables: &[&EmbeddingTable], id: &str) -> Result<Vec<f64>, RegressorError> {
    let mut out = Vec::with_capacity(tables.iter().map(|t| t.dim()).sum());
    for table in tables {
        let v = table.get(id).ok_or_else(|| RegressorError::Alignment {
            table: table.name().to_string(),
            id: id.to_string(),
        })?;
        out.extend_from_slice(v);
    }
    Ok(out)
}

/// Per-dimension z-scoring with statistics fit on training rows only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Dimensions with (near) zero spread keep unit scale.
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self, RegressorError> {
        let first = rows
            .first()
            .ok_or_else(|| RegressorError::InvalidConfig("cannot fit standardizer on zero rows".into()))?;
        let dim = first.len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Standardizer { mean, std })
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }
}
