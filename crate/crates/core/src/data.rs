//! Sample representation, CSV ingestion and K-fold partitioning.
//!
//! The policy covariates `W` are a column subset of the full covariate
//! vector `X`; a [`Dataset`] stores `X` once and the shared index list
//! `w_idx`.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::fmt17;
use crate::rng::rng_from_seed;

/// One observation `(Y, D, X)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub y: f64,
    pub treated: bool,
    pub x: Vec<f64>,
}

impl Sample {
    pub fn new(y: f64, treated: bool, x: Vec<f64>) -> Self {
        Self { y, treated, x }
    }

    /// Treatment indicator as a number in {0, 1}.
    #[inline]
    pub fn d(&self) -> f64 {
        if self.treated {
            1.0
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub y_name: String,
    pub d_name: String,
    pub x_names: Vec<String>,
    pub w_idx: Vec<usize>,
    samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(
        samples: Vec<Sample>,
        x_names: Vec<String>,
        w_idx: Vec<usize>,
    ) -> Result<Self> {
        Self::with_names("y", "d", samples, x_names, w_idx)
    }

    pub fn with_names(
        y_name: &str,
        d_name: &str,
        samples: Vec<Sample>,
        x_names: Vec<String>,
        w_idx: Vec<usize>,
    ) -> Result<Self> {
        let dx = x_names.len();
        if let Some(bad) = samples.iter().position(|s| s.x.len() != dx) {
            return Err(Error::DimensionMismatch {
                expected: dx,
                found: samples[bad].x.len(),
            });
        }
        let mut seen = HashSet::new();
        for &j in &w_idx {
            if j >= dx {
                return Err(Error::InvalidSchema(format!(
                    "W index {j} out of range for {dx} covariates"
                )));
            }
            if !seen.insert(j) {
                return Err(Error::InvalidSchema(format!("duplicate W index {j}")));
            }
        }
        Ok(Self {
            y_name: y_name.to_string(),
            d_name: d_name.to_string(),
            x_names,
            w_idx,
            samples,
        })
    }

    pub fn n(&self) -> usize {
        self.samples.len()
    }

    pub fn dim_x(&self) -> usize {
        self.x_names.len()
    }

    pub fn dim_w(&self) -> usize {
        self.w_idx.len()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn sample(&self, i: usize) -> &Sample {
        &self.samples[i]
    }

    pub fn w_row(&self, i: usize) -> Vec<f64> {
        let x = &self.samples[i].x;
        self.w_idx.iter().map(|&j| x[j]).collect()
    }

    /// All W rows, in sample order.
    pub fn w_rows(&self) -> Vec<Vec<f64>> {
        (0..self.n()).map(|i| self.w_row(i)).collect()
    }

    pub fn w_names(&self) -> Vec<String> {
        self.w_idx.iter().map(|&j| self.x_names[j].clone()).collect()
    }

    pub fn treated_fraction(&self) -> f64 {
        let n = self.n().max(1) as f64;
        self.samples.iter().filter(|s| s.treated).count() as f64 / n
    }

    /// Copy with the outcome of row `i` replaced.
    pub fn with_outcome(&self, i: usize, y: f64) -> Self {
        let mut out = self.clone();
        out.samples[i].y = y;
        out
    }

    pub fn schema(&self) -> Schema {
        Schema {
            y: self.y_name.clone(),
            d: self.d_name.clone(),
            x: self.x_names.clone(),
            w: self.w_names(),
        }
    }
}

/// Column mapping for CSV ingestion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schema {
    pub y: String,
    pub d: String,
    pub x: Vec<String>,
    pub w: Vec<String>,
}

impl FromStr for Schema {
    type Err = Error;

    /// Parse `y=earnings, d=assigned, x=age,educ,prevearn, w=educ,prevearn`.
    fn from_str(s: &str) -> Result<Self> {
        let mut y = None;
        let mut d = None;
        let mut x = Vec::new();
        let mut w = Vec::new();
        let mut current: Option<String> = None;
        for token in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            let value = match token.split_once('=') {
                Some((key, value)) => {
                    current = Some(key.trim().to_string());
                    value.trim()
                }
                None => token,
            };
            match current.as_deref() {
                Some("y") if y.is_none() => y = Some(value.to_string()),
                Some("d") if d.is_none() => d = Some(value.to_string()),
                Some("x") => x.push(value.to_string()),
                Some("w") => w.push(value.to_string()),
                Some(other) => {
                    return Err(Error::InvalidSchema(format!(
                        "unexpected token \"{token}\" for key \"{other}\""
                    )))
                }
                None => {
                    return Err(Error::InvalidSchema(format!(
                        "token \"{token}\" precedes any key"
                    )))
                }
            }
        }
        let y = y.ok_or_else(|| Error::InvalidSchema("missing y".into()))?;
        let d = d.ok_or_else(|| Error::InvalidSchema("missing d".into()))?;
        if x.is_empty() {
            return Err(Error::InvalidSchema("missing x".into()));
        }
        Ok(Schema { y, d, x, w })
    }
}

impl fmt::Display for Schema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "y={}, d={}, x={}, w={}",
            self.y,
            self.d,
            self.x.join(","),
            self.w.join(",")
        )
    }
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Read a headed CSV file into a [`Dataset`], rows in file order.
pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
    read_csv(file, schema)
}

pub fn read_csv<R: std::io::Read>(reader: R, schema: &Schema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let y_col = col(&schema.y)?;
    let d_col = col(&schema.d)?;
    let x_cols = schema.x.iter().map(|c| col(c)).collect::<Result<Vec<_>>>()?;
    let mut w_idx = Vec::with_capacity(schema.w.len());
    for name in &schema.w {
        col(name)?;
        let j = schema.x.iter().position(|x| x == name).ok_or_else(|| {
            Error::InvalidSchema(format!("W column \"{name}\" must also be listed in x"))
        })?;
        w_idx.push(j);
    }

    let parse = |record: &csv::StringRecord, c: usize, row: usize| -> Result<f64> {
        let raw = record.get(c).unwrap_or("");
        raw.parse::<f64>().map_err(|_| Error::ParseError {
            row,
            column: headers.get(c).unwrap_or("").to_string(),
            value: raw.to_string(),
        })
    };

    let mut samples = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let row = r + 1;
        let record = record?;
        let y = parse(&record, y_col, row)?;
        let raw_d = record.get(d_col).unwrap_or("");
        let treated = match raw_d.parse::<f64>() {
            Ok(1.0) => true,
            Ok(0.0) => false,
            Ok(_) => {
                return Err(Error::NonBinaryTreatment {
                    row,
                    value: raw_d.to_string(),
                })
            }
            Err(_) => {
                return Err(Error::ParseError {
                    row,
                    column: schema.d.clone(),
                    value: raw_d.to_string(),
                })
            }
        };
        let x = x_cols
            .iter()
            .map(|&c| parse(&record, c, row))
            .collect::<Result<Vec<_>>>()?;
        samples.push(Sample::new(y, treated, x));
    }
    Dataset::with_names(&schema.y, &schema.d, samples, schema.x.clone(), w_idx)
}

/// Write a dataset as CSV with 17-significant-digit floats.
pub fn write_csv(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    write_csv_to(dataset, file)
}

pub fn write_csv_to<W: std::io::Write>(dataset: &Dataset, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec![dataset.y_name.clone(), dataset.d_name.clone()];
    header.extend(dataset.x_names.iter().cloned());
    wtr.write_record(&header)?;
    for s in dataset.samples() {
        let mut rec = vec![fmt17(s.y), if s.treated { "1" } else { "0" }.to_string()];
        rec.extend(s.x.iter().map(|&v| fmt17(v)));
        wtr.write_record(&rec)?;
    }
    wtr.flush().map_err(|e| Error::Io {
        path: "<csv writer>".into(),
        source: e,
    })?;
    Ok(())
}

/// A random partition of `0..n` into `k` nearly equal folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k_folds: usize,
    /// Zero-based fold label of each row.
    pub fold_of: Vec<usize>,
    pub seed: u64,
}

impl FoldAssignment {
    pub fn n(&self) -> usize {
        self.fold_of.len()
    }

    /// Rows of fold `k`, ascending.
    pub fn members(&self, k: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.fold_of[i] == k).collect()
    }

    /// Rows outside fold `k`, ascending.
    pub fn complement(&self, k: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.fold_of[i] != k).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k_folds];
        for &f in &self.fold_of {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Shuffle `0..n` with the seeded stream and cut the permutation into `k`
/// contiguous blocks; the first `n mod k` blocks get one extra row.
pub fn partition_folds(n: usize, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 || n < 2 * k {
        return Err(Error::InvalidFoldCount { n, k });
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng_from_seed(seed));
    let base = n / k;
    let extra = n % k;
    let mut fold_of = vec![0; n];
    let mut pos = 0;
    for fold in 0..k {
        let size = base + usize::from(fold < extra);
        for &i in &perm[pos..pos + size] {
            fold_of[i] = fold;
        }
        pos += size;
    }
    Ok(FoldAssignment {
        k_folds: k,
        fold_of,
        seed,
    })
}

/// Partition an index subset into `k` folds; returns the members of each
/// fold as positions drawn from `indices`.
pub fn partition_subset(indices: &[usize], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    let inner = partition_folds(indices.len(), k, seed)?;
    let mut out = vec![Vec::new(); k];
    for (pos, &f) in inner.fold_of.iter().enumerate() {
        out[f].push(indices[pos]);
    }
    Ok(out)
}
