//! Dataset ingestion, standardization, splitting and sliding-window
//! construction for series forecasting.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

/// Smallest scale a standardizer will divide by.
pub const SCALE_FLOOR: f64 = 1e-12;

/// Selects the target column of a CSV file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TargetColumn {
    Name(String),
    Index(usize),
}

impl TargetColumn {
    /// Parses a CLI-style selector: an integer is an index, anything else a name.
    pub fn parse(s: &str) -> Self {
        match s.parse::<usize>() {
            Ok(i) => TargetColumn::Index(i),
            Err(_) => TargetColumn::Name(s.to_string()),
        }
    }
}

/// Reads a headed CSV file; the target column is removed and every other
/// column becomes a feature, in file order.
pub fn load_csv(path: impl AsRef<Path>, target: &TargetColumn) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);

    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    if headers.is_empty() || headers.iter().all(String::is_empty) {
        return Err(Error::Format(format!("{}: empty file", path.display())));
    }

    let target_idx = match target {
        TargetColumn::Name(name) => headers.iter().position(|h| h == name).ok_or_else(|| {
            Error::invalid(format!("{}: no column named '{name}'", path.display()))
        })?,
        TargetColumn::Index(i) if *i < headers.len() => *i,
        TargetColumn::Index(i) => {
            return Err(Error::invalid(format!(
                "{}: target index {i} out of range for {} columns",
                path.display(),
                headers.len()
            )))
        }
    };
    if headers.len() < 2 {
        return Err(Error::invalid(format!(
            "{}: need at least one feature column besides the target",
            path.display()
        )));
    }

    let mut features = Vec::new();
    let mut targets = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        if record.len() != headers.len() {
            return Err(Error::Format(format!(
                "{}: row {} has {} fields, header has {}",
                path.display(),
                row + 1,
                record.len(),
                headers.len()
            )));
        }
        for (col, field) in record.iter().enumerate() {
            let value: f64 = field.parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                row: row + 1,
                column: headers[col].clone(),
                value: field.to_string(),
            })?;
            if col == target_idx {
                targets.push(value);
            } else {
                features.push(value);
            }
        }
    }
    if targets.is_empty() {
        return Err(Error::insufficient(format!("{}: no data rows", path.display())));
    }
    let names = headers
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != target_idx)
        .map(|(_, h)| h.clone())
        .collect();
    Dataset::new(features, targets, headers.len() - 1)?.with_feature_names(names)
}

/// Reads a CSV of features only (every column is a feature). Targets are
/// filled with zeros.
pub fn load_features_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut features = Vec::new();
    let mut n = 0;
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        for (col, field) in record.iter().enumerate() {
            features.push(field.parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                row: row + 1,
                column: headers.get(col).cloned().unwrap_or_default(),
                value: field.to_string(),
            })?);
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::insufficient(format!("{}: no data rows", path.display())));
    }
    Dataset::new(features, vec![0.0; n], headers.len())?.with_feature_names(headers)
}

/// Writes `data` as CSV with the target as the last column. Values use the
/// shortest representation that parses back to the same `f64`.
pub fn write_csv(data: &Dataset, path: impl AsRef<Path>, target_name: &str) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    let names: Vec<String> = match data.feature_names() {
        Some(names) => names.to_vec(),
        None => (1..=data.dim()).map(|i| format!("x{i}")).collect(),
    };
    out.push_str(&names.join(","));
    out.push(',');
    out.push_str(target_name);
    out.push('\n');
    for (row, y) in data.rows().zip(data.targets()) {
        for v in row {
            out.push_str(&format!("{v},"));
        }
        out.push_str(&format!("{y}\n"));
    }
    let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Reads a numeric series from a single-column CSV (optional header) or a
/// newline-delimited list of numbers.
pub fn load_series(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut values = Vec::new();
    let mut seen_line = false;
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let field = line.trim();
        if field.is_empty() {
            continue;
        }
        if field.contains(',') {
            return Err(Error::Format(format!(
                "{}: line {} has more than one column",
                path.display(),
                lineno + 1
            )));
        }
        match field.parse::<f64>() {
            Ok(v) if v.is_finite() => values.push(v),
            // A non-numeric first line is a header.
            Err(_) if !seen_line => {}
            _ => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    row: lineno + 1,
                    column: "series".into(),
                    value: field.to_string(),
                })
            }
        }
        seen_line = true;
    }
    if values.is_empty() {
        return Err(Error::insufficient(format!("{}: empty series", path.display())));
    }
    Ok(values)
}

/// Per-feature affine standardization fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    /// Population standard deviations, floored at [`SCALE_FLOOR`].
    pub scales: Vec<f64>,
}

impl Standardizer {
    /// Leaves features untouched.
    pub fn identity(dim: usize) -> Self {
        Self {
            means: vec![0.0; dim],
            scales: vec![1.0; dim],
        }
    }

    pub fn fit(train: &Dataset) -> Result<Self> {
        fit_standardizer(train)
    }

    pub fn dim(&self) -> usize {
        self.means.len()
    }

    pub fn is_identity(&self) -> bool {
        self.means.iter().all(|&m| m == 0.0) && self.scales.iter().all(|&s| s == 1.0)
    }

    pub fn transform_row(&self, row: &[f64], out: &mut [f64]) {
        for (k, (o, x)) in out.iter_mut().zip(row).enumerate() {
            *o = if self.scales[k] <= SCALE_FLOOR {
                0.0
            } else {
                (x - self.means[k]) / self.scales[k]
            };
        }
    }

    pub fn apply(&self, data: &Dataset) -> Result<Dataset> {
        apply_standardizer(self, data)
    }

    pub fn inverse(&self, data: &Dataset) -> Result<Dataset> {
        self.check_dim(data)?;
        data.map_rows(data.dim(), |row, out| {
            for (k, (o, z)) in out.iter_mut().zip(row).enumerate() {
                *o = z * self.scales[k] + self.means[k];
            }
        })
    }

    fn check_dim(&self, data: &Dataset) -> Result<()> {
        if data.dim() != self.dim() {
            return Err(Error::invalid(format!(
                "standardizer has dimension {}, data has {}",
                self.dim(),
                data.dim()
            )));
        }
        Ok(())
    }
}

pub fn fit_standardizer(train: &Dataset) -> Result<Standardizer> {
    let n = train.len();
    if n < 2 {
        return Err(Error::insufficient("standardizer needs at least 2 examples"));
    }
    let d = train.dim();
    let mut means = vec![0.0; d];
    for row in train.rows() {
        for (m, x) in means.iter_mut().zip(row) {
            *m += x;
        }
    }
    means.iter_mut().for_each(|m| *m /= n as f64);
    let mut vars = vec![0.0; d];
    for row in train.rows() {
        for ((v, x), m) in vars.iter_mut().zip(row).zip(&means) {
            *v += (x - m) * (x - m);
        }
    }
    let scales = vars
        .into_iter()
        .map(|v| (v / n as f64).sqrt().max(SCALE_FLOOR))
        .collect();
    Ok(Standardizer { means, scales })
}

pub fn apply_standardizer(s: &Standardizer, data: &Dataset) -> Result<Dataset> {
    s.check_dim(data)?;
    data.map_rows(data.dim(), |row, out| s.transform_row(row, out))
}

/// Temporal split: the first `train_count` examples train, the rest test.
pub fn split_prefix(data: &Dataset, train_count: usize) -> Result<(Dataset, Dataset)> {
    if train_count == 0 || train_count >= data.len() {
        return Err(Error::invalid(format!(
            "train_count must be in 1..{}, got {train_count}",
            data.len()
        )));
    }
    let train: Vec<usize> = (0..train_count).collect();
    let test: Vec<usize> = (train_count..data.len()).collect();
    Ok((data.subset(&train)?, data.subset(&test)?))
}

/// Shuffles `0..n` with `seed` and deals it into `k` folds whose sizes differ
/// by at most one.
pub fn kfold_indices(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 || k > n {
        return Err(Error::invalid(format!(
            "fold count must be in 2..={n}, got {k}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        folds.push(order[start..start + len].to_vec());
        start += len;
    }
    Ok(folds)
}

/// `(train, held_out)` pairs, one per fold.
pub fn kfold_splits(data: &Dataset, k: usize, seed: u64) -> Result<Vec<(Dataset, Dataset)>> {
    let folds = kfold_indices(data.len(), k, seed)?;
    (0..k)
        .map(|f| {
            let train: Vec<usize> = folds
                .iter()
                .enumerate()
                .filter(|&(g, _)| g != f)
                .flat_map(|(_, idx)| idx.iter().copied())
                .collect();
            Ok((data.subset(&train)?, data.subset(&folds[f])?))
        })
        .collect()
}

/// Sliding-window layout for turning a series into regression examples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeriesSpec {
    /// Number of past values per example (the feature dimension).
    pub lag_window: usize,
    /// Steps ahead of the last lag that the target sits.
    pub horizon: usize,
    /// Series entries, counted from the start, whose examples train.
    pub train_count: Option<usize>,
}

impl SeriesSpec {
    pub fn new(lag_window: usize, horizon: usize) -> Self {
        Self {
            lag_window,
            horizon,
            train_count: None,
        }
    }

    fn validate(&self, len: usize) -> Result<()> {
        if self.lag_window == 0 || self.horizon == 0 {
            return Err(Error::invalid("lag window and horizon must be at least 1"));
        }
        if self.lag_window + self.horizon > len {
            return Err(Error::insufficient(format!(
                "series of length {len} is too short for lag {} and horizon {}",
                self.lag_window, self.horizon
            )));
        }
        if let Some(tc) = self.train_count {
            if tc >= len {
                return Err(Error::invalid(format!(
                    "train_count {tc} must be below the series length {len}"
                )));
            }
        }
        Ok(())
    }

    /// Number of examples a series of length `len` yields.
    pub fn example_count(&self, len: usize) -> usize {
        (len + 1).saturating_sub(self.lag_window + self.horizon)
    }

    /// Series index of the target of example `t`.
    pub fn target_index(&self, t: usize) -> usize {
        t + self.lag_window - 1 + self.horizon
    }
}

/// Example `t` has features `series[t .. t + lag]` and target
/// `series[t + lag - 1 + horizon]`.
pub fn window_series(series: &[f64], spec: &SeriesSpec) -> Result<Dataset> {
    spec.validate(series.len())?;
    let lag = spec.lag_window;
    let count = spec.example_count(series.len());
    let mut features = Vec::with_capacity(count * lag);
    let mut targets = Vec::with_capacity(count);
    for t in 0..count {
        features.extend_from_slice(&series[t..t + lag]);
        targets.push(series[spec.target_index(t)]);
    }
    let names = (1..=lag).rev().map(|back| format!("lag{back}")).collect();
    Dataset::new(features, targets, lag)?.with_feature_names(names)
}

/// Windows the series and splits it in time: examples whose target falls in
/// the first `train_count` entries train, the remainder test.
pub fn window_split(series: &[f64], spec: &SeriesSpec) -> Result<(Dataset, Dataset)> {
    let train_count = spec
        .train_count
        .ok_or_else(|| Error::invalid("window_split needs train_count"))?;
    let all = window_series(series, spec)?;
    let n_train = (0..all.len())
        .take_while(|&t| spec.target_index(t) < train_count)
        .count();
    split_prefix(&all, n_train)
}
