//! Datasets: spiral and synthetic generators, [−2, 2] normalization, CSV
//! ingestion and seeded train/test splitting.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use diffcore::{Rng, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Spiral,
    Csv,
    Synthetic6,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Spiral => "spiral",
            Provenance::Csv => "csv",
            Provenance::Synthetic6 => "synthetic6",
        }
    }
}

/// Observed range of one column, used by the [−2, 2] min-max scaling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnRange {
    pub min: f64,
    pub max: f64,
}

impl ColumnRange {
    pub fn forward(&self, v: f64) -> f64 {
        (v - self.min) / (self.max - self.min) * 4.0 - 2.0
    }

    pub fn inverse(&self, u: f64) -> f64 {
        (u + 2.0) / 4.0 * (self.max - self.min) + self.min
    }

    /// Converts a normalized standard deviation to physical units.
    pub fn scale_std(&self, s: f64) -> f64 {
        s * (self.max - self.min) / 4.0
    }
}

/// Per-column ranges for inputs and outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub inputs: Vec<ColumnRange>,
    pub outputs: Vec<ColumnRange>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Column {
    Input(usize),
    Output(usize),
}

impl Normalization {
    /// Ranges observed in `ds`; every column must vary.
    pub fn fit(ds: &Dataset) -> Result<Self> {
        let range = |values: Vec<f64>, name: String| -> Result<ColumnRange> {
            let min = values.iter().copied().fold(f64::INFINITY, f64::min);
            let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if !(max > min) {
                return Err(Error::DegenerateColumn { column: name });
            }
            Ok(ColumnRange { min, max })
        };
        let inputs = (0..ds.x_dim())
            .map(|j| range(ds.x_column(j), format!("x{}", j + 1)))
            .collect::<Result<_>>()?;
        let outputs = (0..ds.y_dim())
            .map(|j| range(ds.y_column(j), format!("y{}", j + 1)))
            .collect::<Result<_>>()?;
        Ok(Self { inputs, outputs })
    }

    pub fn column(&self, column: Column) -> Result<&ColumnRange> {
        let found = match column {
            Column::Input(j) => self.inputs.get(j),
            Column::Output(j) => self.outputs.get(j),
        };
        found.ok_or_else(|| Error::Contract(format!("no normalization state for {column:?}")))
    }

    /// Maps raw input rows into normalized coordinates.
    pub fn normalize_inputs(&self, x: &[f64]) -> Vec<f64> {
        let m = self.inputs.len();
        x.iter().enumerate().map(|(i, &v)| self.inputs[i % m].forward(v)).collect()
    }
}

/// Rows of `(x ∈ R^m, y ∈ R^p)` stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Vec<f64>,
    y: Vec<f64>,
    x_dim: usize,
    y_dim: usize,
    /// Present when the stored values are normalized.
    normalization: Option<Normalization>,
    provenance: Provenance,
    /// Noise-free outputs, when the generator knows them.
    clean_y: Option<Vec<f64>>,
}

impl Dataset {
    pub fn new(x: Vec<f64>, y: Vec<f64>, x_dim: usize, y_dim: usize, provenance: Provenance) -> Result<Self> {
        if x_dim == 0 || y_dim == 0 {
            return Err(Error::Contract("datasets need at least one input and one output".into()));
        }
        if x.len() % x_dim != 0 || y.len() % y_dim != 0 || x.len() / x_dim != y.len() / y_dim {
            return Err(Error::Contract(format!(
                "inconsistent dataset: {} input values for width {x_dim}, {} output values for width {y_dim}",
                x.len(),
                y.len()
            )));
        }
        if let Some(bad) = x.iter().chain(&y).position(|v| !v.is_finite()) {
            return Err(Error::Contract(format!("non-finite value at flat position {bad}")));
        }
        Ok(Self {
            x,
            y,
            x_dim,
            y_dim,
            normalization: None,
            provenance,
            clean_y: None,
        })
    }

    pub fn from_rows(rows: &[(Vec<f64>, Vec<f64>)], provenance: Provenance) -> Result<Self> {
        let (m, p) = rows.first().map(|(x, y)| (x.len(), y.len())).unwrap_or((0, 0));
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (xi, yi) in rows {
            if xi.len() != m || yi.len() != p {
                return Err(Error::Contract("ragged rows".into()));
            }
            x.extend_from_slice(xi);
            y.extend_from_slice(yi);
        }
        Self::new(x, y, m, p, provenance)
    }

    pub fn len(&self) -> usize {
        self.x.len() / self.x_dim
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn x_dim(&self) -> usize {
        self.x_dim
    }

    pub fn y_dim(&self) -> usize {
        self.y_dim
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn normalization(&self) -> Option<&Normalization> {
        self.normalization.as_ref()
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn x_row(&self, i: usize) -> &[f64] {
        &self.x[i * self.x_dim..(i + 1) * self.x_dim]
    }

    pub fn y_row(&self, i: usize) -> &[f64] {
        &self.y[i * self.y_dim..(i + 1) * self.y_dim]
    }

    pub fn x_column(&self, j: usize) -> Vec<f64> {
        self.x.iter().skip(j).step_by(self.x_dim).copied().collect()
    }

    pub fn y_column(&self, j: usize) -> Vec<f64> {
        self.y.iter().skip(j).step_by(self.y_dim).copied().collect()
    }

    pub fn clean_y(&self) -> Option<&[f64]> {
        self.clean_y.as_deref()
    }

    pub fn with_clean_y(mut self, clean: Vec<f64>) -> Result<Self> {
        if clean.len() != self.y.len() {
            return Err(Error::Contract("clean outputs must match output shape".into()));
        }
        self.clean_y = Some(clean);
        Ok(self)
    }

    /// `[n × m]` input matrix.
    pub fn x_tensor(&self) -> Tensor {
        Tensor::new(vec![self.len(), self.x_dim], self.x.clone()).expect("consistent by construction")
    }

    /// `[n × p]` output matrix.
    pub fn y_tensor(&self) -> Tensor {
        Tensor::new(vec![self.len(), self.y_dim], self.y.clone()).expect("consistent by construction")
    }

    /// `[n × (m + p)]` matrix of concatenated `(x_i, y_i)` rows.
    pub fn xy_tensor(&self) -> Tensor {
        let mut v = Vec::with_capacity(self.len() * (self.x_dim + self.y_dim));
        for i in 0..self.len() {
            v.extend_from_slice(self.x_row(i));
            v.extend_from_slice(self.y_row(i));
        }
        Tensor::new(vec![self.len(), self.x_dim + self.y_dim], v).expect("consistent by construction")
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let mut x = Vec::with_capacity(indices.len() * self.x_dim);
        let mut y = Vec::with_capacity(indices.len() * self.y_dim);
        let mut clean = self.clean_y.as_ref().map(|_| Vec::with_capacity(indices.len() * self.y_dim));
        for &i in indices {
            x.extend_from_slice(self.x_row(i));
            y.extend_from_slice(self.y_row(i));
            if let (Some(c), Some(src)) = (clean.as_mut(), self.clean_y.as_ref()) {
                c.extend_from_slice(&src[i * self.y_dim..(i + 1) * self.y_dim]);
            }
        }
        Dataset {
            x,
            y,
            x_dim: self.x_dim,
            y_dim: self.y_dim,
            normalization: self.normalization.clone(),
            provenance: self.provenance,
            clean_y: clean,
        }
    }

    /// Rows of `self` followed by rows of `other`.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if self.x_dim != other.x_dim || self.y_dim != other.y_dim {
            return Err(Error::Contract("cannot join datasets of different widths".into()));
        }
        let mut out = self.clone();
        out.x.extend_from_slice(&other.x);
        out.y.extend_from_slice(&other.y);
        out.clean_y = match (&self.clean_y, &other.clean_y) {
            (Some(a), Some(b)) => Some(a.iter().chain(b).copied().collect()),
            _ => None,
        };
        Ok(out)
    }

    /// Scales every column to [−2, 2] with ranges observed in this dataset.
    pub fn normalize(&self) -> Result<Dataset> {
        let norm = Normalization::fit(self)?;
        self.normalize_with(&norm)
    }

    /// Applies existing ranges, e.g. ones fitted on a larger dataset.
    pub fn normalize_with(&self, norm: &Normalization) -> Result<Dataset> {
        if self.normalization.is_some() {
            return Err(Error::Contract("dataset is already normalized".into()));
        }
        if norm.inputs.len() != self.x_dim || norm.outputs.len() != self.y_dim {
            return Err(Error::Contract(format!(
                "normalization for {}→{} columns applied to {}→{} dataset",
                norm.inputs.len(),
                norm.outputs.len(),
                self.x_dim,
                self.y_dim
            )));
        }
        let map = |values: &[f64], ranges: &[ColumnRange]| -> Vec<f64> {
            let w = ranges.len();
            values.iter().enumerate().map(|(i, &v)| ranges[i % w].forward(v)).collect()
        };
        Ok(Dataset {
            x: map(&self.x, &norm.inputs),
            y: map(&self.y, &norm.outputs),
            x_dim: self.x_dim,
            y_dim: self.y_dim,
            normalization: Some(norm.clone()),
            provenance: self.provenance,
            clean_y: self.clean_y.as_ref().map(|c| map(c, &norm.outputs)),
        })
    }

    /// The same rows in physical units.
    pub fn denormalized(&self) -> Result<Dataset> {
        let norm = self
            .normalization
            .as_ref()
            .ok_or_else(|| Error::Contract("dataset carries no normalization state".into()))?;
        let map = |values: &[f64], ranges: &[ColumnRange]| -> Vec<f64> {
            let w = ranges.len();
            values.iter().enumerate().map(|(i, &v)| ranges[i % w].inverse(v)).collect()
        };
        Ok(Dataset {
            x: map(&self.x, &norm.inputs),
            y: map(&self.y, &norm.outputs),
            x_dim: self.x_dim,
            y_dim: self.y_dim,
            normalization: None,
            provenance: self.provenance,
            clean_y: self.clean_y.as_ref().map(|c| map(c, &norm.outputs)),
        })
    }
}

/// Inverts the scaling of one column.
pub fn denormalize(ds: &Dataset, values: &[f64], column: Column) -> Result<Vec<f64>> {
    let norm = ds
        .normalization()
        .ok_or_else(|| Error::Contract("dataset carries no normalization state".into()))?;
    let range = norm.column(column)?;
    Ok(values.iter().map(|&u| range.inverse(u)).collect())
}

/// Converts normalized standard deviations of one column to physical units.
pub fn denormalize_std(ds: &Dataset, stds: &[f64], column: Column) -> Result<Vec<f64>> {
    let norm = ds
        .normalization()
        .ok_or_else(|| Error::Contract("dataset carries no normalization state".into()))?;
    let range = norm.column(column)?;
    Ok(stds.iter().map(|&s| range.scale_std(s)).collect())
}

// ---------------------------------------------------------------------------
// Spiral

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpiralConfig {
    pub n_points: usize,
    pub x_range: (f64, f64),
    pub y0: [f64; 2],
    pub scale: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SpiralConfig {
    fn default() -> Self {
        Self {
            n_points: 200,
            x_range: (0.0, 4.0 * PI),
            y0: [1.0, 0.0],
            scale: 4.0,
            noise_std: 0.01,
            seed: 0,
        }
    }
}

impl SpiralConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return Err(Error::Config(format!("noise_std must be >= 0, got {}", self.noise_std)));
        }
        if self.n_points < 2 {
            return Err(Error::Config(format!("n_points must be >= 2, got {}", self.n_points)));
        }
        if !(self.x_range.1 > self.x_range.0) {
            return Err(Error::Config("x_range must be increasing".into()));
        }
        Ok(())
    }
}

/// Exact flow of `dy/dx = [[-0.1, -1], [1, -0.1]] y`: `e^{-0.1x}` times a
/// rotation by `x`.
pub fn spiral_flow(x: f64, y0: [f64; 2]) -> [f64; 2] {
    let decay = (-0.1 * x).exp();
    let (s, c) = x.sin_cos();
    [decay * (c * y0[0] - s * y0[1]), decay * (s * y0[0] + c * y0[1])]
}

pub fn generate_spiral(cfg: &SpiralConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = Rng::seed_from(cfg.seed);
    let (x0, x1) = cfg.x_range;
    let n = cfg.n_points;
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(2 * n);
    let mut clean = Vec::with_capacity(2 * n);
    for i in 0..n {
        let xi = x0 + (x1 - x0) * i as f64 / (n - 1) as f64;
        let f = spiral_flow(xi, cfg.y0);
        x.push(xi);
        for v in f {
            let c = cfg.scale * v;
            clean.push(c);
            y.push(c + cfg.noise_std * rng.normal());
        }
    }
    Dataset::new(x, y, 1, 2, Provenance::Spiral)?.with_clean_y(clean)
}

// ---------------------------------------------------------------------------
// Synthetic six-input table

/// Declared sampling ranges of the six inputs: Young's modulus, yield
/// strength, cathodic Tafel slope, cathodic exchange current density,
/// anodic Tafel slope, anodic exchange current density.
pub const SYNTHETIC6_RANGES: [(f64, f64); 6] = [
    (55.0, 95.0),
    (1.0, 5.0),
    (-280.0, -210.0),
    (2.0e-8, 2.0e-7),
    (250.0, 290.0),
    (1.0e-13, 5.0e-13),
];

/// Noise-free response of the synthetic table.
///
/// With `u_j ∈ [0, 1]` the position of input `j` inside its declared range:
///
/// `y = 1.5 + 0.6 u1 − 0.4 u2 + 0.8 u3 u4 + 0.5 exp(u5 − 1) + 0.3 sin(π u6)`
pub fn synthetic6_response(x: &[f64]) -> f64 {
    let u: Vec<f64> = x
        .iter()
        .zip(SYNTHETIC6_RANGES)
        .map(|(&v, (lo, hi))| (v - lo) / (hi - lo))
        .collect();
    1.5 + 0.6 * u[0] - 0.4 * u[1] + 0.8 * u[2] * u[3] + 0.5 * (u[4] - 1.0).exp() + 0.3 * (PI * u[5]).sin()
}

pub fn generate_synthetic6(n: usize, noise_std: f64, seed: u64) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::Config(format!("synthetic6 needs n >= 2, got {n}")));
    }
    if !(noise_std >= 0.0) || !noise_std.is_finite() {
        return Err(Error::Config(format!("noise_std must be >= 0, got {noise_std}")));
    }
    let mut rng = Rng::seed_from(seed);
    let mut x = Vec::with_capacity(6 * n);
    let mut y = Vec::with_capacity(n);
    let mut clean = Vec::with_capacity(n);
    for _ in 0..n {
        let row: Vec<f64> = SYNTHETIC6_RANGES.iter().map(|&(lo, hi)| rng.uniform_range(lo, hi)).collect();
        let f = synthetic6_response(&row);
        x.extend_from_slice(&row);
        clean.push(f);
        y.push(f + noise_std * rng.normal());
    }
    Dataset::new(x, y, 6, 1, Provenance::Synthetic6)?.with_clean_y(clean)
}

// ---------------------------------------------------------------------------
// CSV

fn column_index(name: &str, prefix: char) -> Option<usize> {
    let rest = name.trim().strip_prefix(prefix)?;
    let k: usize = rest.parse().ok()?;
    (k >= 1).then(|| k - 1)
}

/// Reads a header-first CSV whose columns are named `x1..xm` and `y1..yp`
/// (any order).
pub fn load_csv(path: &Path) -> Result<Dataset> {
    let ingest = |location: String, detail: String| Error::Ingest {
        path: path.to_path_buf(),
        location,
        detail,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| ingest("file".into(), e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| ingest("header".into(), e.to_string()))?
        .clone();
    if headers.is_empty() || headers.iter().all(|h| h.trim().is_empty()) {
        return Err(ingest("header".into(), "missing header row".into()));
    }
    let mut xs = BTreeMap::new();
    let mut ys = BTreeMap::new();
    for (pos, name) in headers.iter().enumerate() {
        if let Some(k) = column_index(name, 'x') {
            xs.insert(k, pos);
        } else if let Some(k) = column_index(name, 'y') {
            ys.insert(k, pos);
        } else {
            return Err(ingest("header".into(), format!("unrecognised column {name:?}")));
        }
    }
    if xs.is_empty() || ys.is_empty() {
        return Err(ingest("header".into(), "need at least one x* and one y* column".into()));
    }
    for (map, prefix) in [(&xs, 'x'), (&ys, 'y')] {
        if map.keys().enumerate().any(|(i, &k)| i != k) {
            return Err(ingest(
                "header".into(),
                format!("{prefix} columns must be numbered 1..{} without gaps", map.len()),
            ));
        }
    }
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let row = r + 1;
        let record = record.map_err(|e| ingest(format!("row {row}"), e.to_string()))?;
        let field = |pos: usize, name: String| -> Result<f64> {
            let raw = record.get(pos).unwrap_or("").trim();
            if raw.is_empty() {
                return Err(ingest(format!("row {row}"), format!("missing value for {name}")));
            }
            let v: f64 = raw
                .parse()
                .map_err(|_| ingest(format!("row {row}"), format!("non-numeric value {raw:?} for {name}")))?;
            if !v.is_finite() {
                return Err(ingest(format!("row {row}"), format!("non-finite value for {name}")));
            }
            Ok(v)
        };
        for (&k, &pos) in &xs {
            x.push(field(pos, format!("x{}", k + 1))?);
        }
        for (&k, &pos) in &ys {
            y.push(field(pos, format!("y{}", k + 1))?);
        }
    }
    if x.is_empty() {
        return Err(ingest("file".into(), "no data rows".into()));
    }
    Dataset::new(x, y, xs.len(), ys.len(), Provenance::Csv)
}

/// Writes the stored values with a `x1..xm,y1..yp` header. Values use the
/// shortest representation that parses back to the same `f64`.
pub fn write_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let mut out = String::new();
    let header: Vec<String> = (1..=ds.x_dim())
        .map(|j| format!("x{j}"))
        .chain((1..=ds.y_dim()).map(|j| format!("y{j}")))
        .collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for i in 0..ds.len() {
        let fields: Vec<String> = ds.x_row(i).iter().chain(ds.y_row(i)).map(|v| format!("{v:?}")).collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Sidecar metadata written next to a dataset CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetadata {
    pub provenance: Provenance,
    pub seed: Option<u64>,
    pub rows: usize,
    pub x_dim: usize,
    pub y_dim: usize,
    pub rng: String,
    pub normalization: Option<Normalization>,
    pub generator: BTreeMap<String, String>,
}

impl DatasetMetadata {
    pub fn describe(ds: &Dataset, seed: Option<u64>, generator: BTreeMap<String, String>) -> Self {
        Self {
            provenance: ds.provenance(),
            seed,
            rows: ds.len(),
            x_dim: ds.x_dim(),
            y_dim: ds.y_dim(),
            rng: diffcore::rng::ALGORITHM.to_string(),
            normalization: ds.normalization().cloned(),
            generator,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Splits

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub test_count: usize,
    /// Nested training subset sizes, strictly increasing.
    pub nested_train_sizes: Vec<usize>,
    pub seed: u64,
}

impl SplitSpec {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.test_count >= n {
            return Err(Error::Contract(format!(
                "test_count {} leaves no training rows out of {n}",
                self.test_count
            )));
        }
        let train = n - self.test_count;
        if self.nested_train_sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Contract("nested training sizes must be strictly increasing".into()));
        }
        if let Some(&last) = self.nested_train_sizes.last() {
            if last > train {
                return Err(Error::Contract(format!(
                    "nested size {last} exceeds the {train} available training rows"
                )));
            }
        }
        if self.nested_train_sizes.first() == Some(&0) {
            return Err(Error::Contract("nested sizes must be positive".into()));
        }
        Ok(())
    }
}

/// Row indices of a train/test split; nested subsets are prefixes of `train`.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub nested: Vec<Vec<usize>>,
}

pub fn split_indices(n: usize, spec: &SplitSpec) -> Result<Split> {
    spec.validate(n)?;
    let mut rng = Rng::seed_from(spec.seed);
    let order = rng.permutation(n);
    let test = order[..spec.test_count].to_vec();
    let train = order[spec.test_count..].to_vec();
    let nested = spec.nested_train_sizes.iter().map(|&k| train[..k].to_vec()).collect();
    Ok(Split { train, test, nested })
}

/// Seeded split into `(train, test, nested training subsets)`.
pub fn split_train_test(ds: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset, Vec<Dataset>)> {
    let split = split_indices(ds.len(), spec)?;
    let nested = split.nested.iter().map(|idx| ds.select(idx)).collect();
    Ok((ds.select(&split.train), ds.select(&split.test), nested))
}
