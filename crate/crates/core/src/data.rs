//! Tabular data ingestion, affine scaling and shuffled k-fold splitting.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Raw-unit regression data: `inputs` is N x n_x, `outputs` has length N.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: DMatrix<f64>,
    pub outputs: DVector<f64>,
    pub column_names: Vec<String>,
    pub target_name: String,
}

impl Dataset {
    pub fn new(
        inputs: DMatrix<f64>,
        outputs: DVector<f64>,
        column_names: Vec<String>,
        target_name: impl Into<String>,
    ) -> Result<Self> {
        let n = inputs.nrows();
        if n < 2 {
            return Err(Error::InvalidDataset(format!("need at least 2 rows, got {n}")));
        }
        if inputs.ncols() == 0 {
            return Err(Error::InvalidDataset("no input columns".into()));
        }
        if outputs.len() != n {
            return Err(Error::InvalidDataset(format!(
                "{} outputs for {n} input rows",
                outputs.len()
            )));
        }
        if column_names.len() != inputs.ncols() {
            return Err(Error::InvalidDataset(format!(
                "{} column names for {} input columns",
                column_names.len(),
                inputs.ncols()
            )));
        }
        if inputs.iter().chain(outputs.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset("non-finite entry".into()));
        }
        Ok(Self {
            inputs,
            outputs,
            column_names,
            target_name: target_name.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.nrows() == 0
    }

    pub fn n_inputs(&self) -> usize {
        self.inputs.ncols()
    }

    /// Rows selected by `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> (DMatrix<f64>, DVector<f64>) {
        let x = select_rows(&self.inputs, indices);
        let y = DVector::from_iterator(indices.len(), indices.iter().map(|&i| self.outputs[i]));
        (x, y)
    }
}

pub(crate) fn select_rows(m: &DMatrix<f64>, indices: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(indices.len(), m.ncols(), |r, c| m[(indices[r], c)])
}

/// Rows `indices` of paired inputs and outputs.
pub fn select_xy(x: &DMatrix<f64>, y: &DVector<f64>, indices: &[usize]) -> (DMatrix<f64>, DVector<f64>) {
    (select_rows(x, indices), DVector::from_iterator(indices.len(), indices.iter().map(|&i| y[i])))
}

/// A parsed numeric table with a header row.
#[derive(Debug, Clone)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

fn detect_delimiter(path: &Path) -> Result<u8> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut first = String::new();
    BufReader::new(file)
        .read_line(&mut first)
        .map_err(|e| Error::io(path, e))?;
    let commas = first.matches(',').count();
    let semis = first.matches(';').count();
    Ok(if semis > commas { b';' } else { b',' })
}

/// Reads a comma- or semicolon-delimited numeric table with a header row.
pub fn read_table(path: &Path) -> Result<Table> {
    let delimiter = detect_delimiter(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Csv {
            path: path.into(),
            message: e.to_string(),
        })?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Csv {
            path: path.into(),
            message: e.to_string(),
        })?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Csv {
            path: path.into(),
            message: e.to_string(),
        })?;
        let row = record
            .iter()
            .zip(&header)
            .map(|(cell, name)| {
                cell.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::NonNumeric {
                        row: i + 1,
                        column: name.clone(),
                        value: cell.to_string(),
                    })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(Table { header, rows })
}

/// Loads `path` and returns one dataset per entry of `target_columns`.
///
/// Every target column is removed from the inputs of every returned dataset, so
/// multi-output files yield datasets sharing the same input matrix.
pub fn load_csv(path: impl AsRef<Path>, target_columns: &[&str]) -> Result<Vec<Dataset>> {
    let path = path.as_ref();
    if target_columns.is_empty() {
        return Err(Error::InvalidArgument("no target column given".into()));
    }
    let table = read_table(path)?;
    let target_idx = target_columns
        .iter()
        .map(|t| {
            table
                .header
                .iter()
                .position(|h| h == t)
                .ok_or_else(|| Error::MissingTarget(t.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    let input_idx: Vec<usize> = (0..table.header.len())
        .filter(|i| !target_idx.contains(i))
        .collect();
    let n = table.rows.len();
    let inputs = DMatrix::from_fn(n, input_idx.len(), |r, c| table.rows[r][input_idx[c]]);
    let names: Vec<String> = input_idx.iter().map(|&i| table.header[i].clone()).collect();
    target_idx
        .iter()
        .zip(target_columns)
        .map(|(&t, name)| {
            let outputs = DVector::from_iterator(n, table.rows.iter().map(|r| r[t]));
            Dataset::new(inputs.clone(), outputs, names.clone(), *name)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalerKind {
    MinMax,
    ZNormalize,
    Identity,
}

/// Fitted per-column affine scaler.
///
/// `params[j]` is `(min, max)` for min-max, `(mean, std)` for z-normalization
/// (population std) and `(0, 1)` for identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerState {
    pub kind: ScalerKind,
    pub params: Vec<(f64, f64)>,
}

impl ScalerState {
    /// Fits one scaler column per matrix column. `names` labels columns in errors.
    pub fn fit(kind: ScalerKind, data: &DMatrix<f64>, names: &[String]) -> Result<Self> {
        if data.nrows() == 0 {
            return Err(Error::InvalidArgument("cannot fit a scaler on zero rows".into()));
        }
        let params = data
            .column_iter()
            .enumerate()
            .map(|(j, col)| {
                let label = || {
                    names
                        .get(j)
                        .cloned()
                        .unwrap_or_else(|| format!("#{j}"))
                };
                match kind {
                    ScalerKind::Identity => Ok((0.0, 1.0)),
                    ScalerKind::MinMax => {
                        let lo = col.min();
                        let hi = col.max();
                        if hi > lo {
                            Ok((lo, hi))
                        } else {
                            Err(Error::ConstantColumn { column: label() })
                        }
                    }
                    ScalerKind::ZNormalize => {
                        let n = col.len() as f64;
                        let mean = col.sum() / n;
                        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                        let std = var.sqrt();
                        if std > 0.0 {
                            Ok((mean, std))
                        } else {
                            Err(Error::ConstantColumn { column: label() })
                        }
                    }
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { kind, params })
    }

    pub fn fit_vector(kind: ScalerKind, data: &DVector<f64>, name: &str) -> Result<Self> {
        let m = DMatrix::from_column_slice(data.len(), 1, data.as_slice());
        Self::fit(kind, &m, &[name.to_string()])
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            kind: ScalerKind::Identity,
            params: vec![(0.0, 1.0); dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.params.len()
    }

    /// Offset and divisor of the affine map `(x - offset) / divisor` for column `j`.
    fn affine(&self, j: usize) -> (f64, f64) {
        let (a, b) = self.params[j];
        match self.kind {
            ScalerKind::MinMax => (a, b - a),
            ScalerKind::ZNormalize | ScalerKind::Identity => (a, b),
        }
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got,
            });
        }
        Ok(())
    }

    pub fn apply(&self, point: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(point.len())?;
        Ok(point
            .iter()
            .enumerate()
            .map(|(j, &x)| {
                let (offset, div) = self.affine(j);
                (x - offset) / div
            })
            .collect())
    }

    pub fn inverse(&self, point: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(point.len())?;
        Ok(point
            .iter()
            .enumerate()
            .map(|(j, &x)| {
                let (offset, div) = self.affine(j);
                x * div + offset
            })
            .collect())
    }

    pub fn apply_matrix(&self, data: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_dim(data.ncols())?;
        let mut out = data.clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            let (offset, div) = self.affine(j);
            col.apply(|v| *v = (*v - offset) / div);
        }
        Ok(out)
    }

    pub fn apply_vector(&self, data: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(1)?;
        let (offset, div) = self.affine(0);
        Ok(data.map(|v| (v - offset) / div))
    }

    /// Maps a scaled predictive mean and variance back to raw output units.
    pub fn inverse_scale_prediction(&self, mean_s: f64, var_s: f64) -> Result<(f64, f64)> {
        self.check_dim(1)?;
        let (offset, div) = self.affine(0);
        Ok((mean_s * div + offset, var_s.max(0.0) * div * div))
    }
}

/// Assignment of N points to `n_folds` shuffled folds of near-equal size.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub n_folds: usize,
    pub assignments: Vec<usize>,
    pub rng_seed: u64,
}

impl FoldPlan {
    /// `(train, validation)` index lists for fold `k`, both ascending.
    pub fn split(&self, k: usize) -> (Vec<usize>, Vec<usize>) {
        let (val, train): (Vec<usize>, Vec<usize>) =
            (0..self.assignments.len()).partition(|&i| self.assignments[i] == k);
        (train, val)
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_folds];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }
}

pub fn make_folds(n: usize, n_folds: usize, seed: u64) -> Result<FoldPlan> {
    if n_folds < 2 || n_folds > n {
        return Err(Error::InvalidArgument(format!(
            "n_folds must lie in [2, {n}], got {n_folds}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut assignments = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        assignments[i] = pos % n_folds;
    }
    Ok(FoldPlan {
        n_folds,
        assignments,
        rng_seed: seed,
    })
}
