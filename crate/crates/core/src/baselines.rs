//! Exact Gaussian-process regression with Matern and polynomial kernels,
//! hyperparameters picked by log-marginal-likelihood grid search.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Normalization;
use crate::decoders::PredictiveDistribution;
use crate::error::{Error, Result};

pub const GP_FORMAT: &str = "npode-gp/v1";
const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Matern,
    Polynomial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaternNu {
    #[serde(rename = "3/2")]
    ThreeHalves,
    #[serde(rename = "5/2")]
    FiveHalves,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Kernel {
    Matern { nu: MaternNu, lengthscale: f64, variance: f64 },
    Polynomial { gamma: f64, offset: f64, degree: u32 },
}

/// `s²(1 + √5 r/ℓ + 5r²/(3ℓ²)) exp(−√5 r/ℓ)` with `r = ‖x − z‖`.
pub fn matern_kernel(x: &[f64], z: &[f64], lengthscale: f64, variance: f64) -> f64 {
    matern(MaternNu::FiveHalves, distance(x, z), lengthscale, variance)
}

/// `(γ⟨x, z⟩ + c)^d`.
pub fn polynomial_kernel(x: &[f64], z: &[f64], gamma: f64, offset: f64, degree: u32) -> f64 {
    let dot: f64 = x.iter().zip(z).map(|(a, b)| a * b).sum();
    (gamma * dot + offset).powi(degree as i32)
}

fn distance(x: &[f64], z: &[f64]) -> f64 {
    x.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

fn matern(nu: MaternNu, r: f64, lengthscale: f64, variance: f64) -> f64 {
    match nu {
        MaternNu::FiveHalves => {
            let a = 5f64.sqrt() * r / lengthscale;
            variance * (1.0 + a + a * a / 3.0) * (-a).exp()
        }
        MaternNu::ThreeHalves => {
            let a = 3f64.sqrt() * r / lengthscale;
            variance * (1.0 + a) * (-a).exp()
        }
    }
}

impl Kernel {
    pub fn eval(&self, x: &[f64], z: &[f64]) -> f64 {
        match *self {
            Kernel::Matern { nu, lengthscale, variance } => matern(nu, distance(x, z), lengthscale, variance),
            Kernel::Polynomial { gamma, offset, degree } => polynomial_kernel(x, z, gamma, offset, degree),
        }
    }

    pub fn kind(&self) -> KernelKind {
        match self {
            Kernel::Matern { .. } => KernelKind::Matern,
            Kernel::Polynomial { .. } => KernelKind::Polynomial,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Kernel::Matern { lengthscale, variance, .. } => lengthscale > 0.0 && variance > 0.0,
            Kernel::Polynomial { gamma, offset, degree } => gamma > 0.0 && offset >= 0.0 && degree >= 1,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid kernel hyperparameters {self:?}")))
        }
    }
}

fn log_spaced(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}

/// Hyperparameter grid searched by [`gp_fit`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpGrid {
    pub nu: MaternNu,
    pub lengthscales: Vec<f64>,
    pub variances: Vec<f64>,
    pub noises: Vec<f64>,
    pub gammas: Vec<f64>,
    pub offsets: Vec<f64>,
    pub degrees: Vec<u32>,
}

impl Default for GpGrid {
    fn default() -> Self {
        Self {
            nu: MaternNu::FiveHalves,
            lengthscales: log_spaced(0.05, 5.0, 9),
            variances: vec![0.25, 1.0, 4.0],
            noises: log_spaced(1e-6, 1.0, 7),
            gammas: log_spaced(0.01, 1.0, 5),
            offsets: vec![0.0, 1.0],
            degrees: vec![2, 3],
        }
    }
}

impl GpGrid {
    pub fn kernels(&self, kind: KernelKind) -> Vec<Kernel> {
        let mut out = Vec::new();
        match kind {
            KernelKind::Matern => {
                for &lengthscale in &self.lengthscales {
                    for &variance in &self.variances {
                        out.push(Kernel::Matern { nu: self.nu, lengthscale, variance });
                    }
                }
            }
            KernelKind::Polynomial => {
                for &gamma in &self.gammas {
                    for &offset in &self.offsets {
                        for &degree in &self.degrees {
                            out.push(Kernel::Polynomial { gamma, offset, degree });
                        }
                    }
                }
            }
        }
        out
    }
}

/// Fitted single-output GP.
#[derive(Debug, Clone)]
pub struct GpModel {
    pub kernel: Kernel,
    /// Observation noise variance `σₙ²`.
    pub noise: f64,
    /// Diagonal jitter that was needed on top of the noise.
    pub jitter: f64,
    pub log_marginal: f64,
    x: Vec<f64>,
    y: Vec<f64>,
    x_dim: usize,
    chol: Cholesky<f64, nalgebra::Dyn>,
    alpha: DVector<f64>,
}

fn gram(kernel: &Kernel, x: &[f64], m: usize) -> DMatrix<f64> {
    let n = x.len() / m;
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = kernel.eval(&x[i * m..(i + 1) * m], &x[j * m..(j + 1) * m]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Cholesky of `k + noise·I`, escalating diagonal jitter from 1e-10 by ×10
/// up to 1e-4 if the plain factorization fails.
fn factor(k: &DMatrix<f64>, noise: f64) -> Result<(Cholesky<f64, nalgebra::Dyn>, f64)> {
    let n = k.nrows();
    let mut jitter = 0.0;
    loop {
        let mut a = k.clone();
        for i in 0..n {
            a[(i, i)] += noise + jitter;
        }
        if let Some(c) = Cholesky::new(a) {
            if c.l_dirty().diagonal().iter().all(|d| d.is_finite() && *d > 0.0) {
                return Ok((c, jitter));
            }
        }
        jitter = if jitter == 0.0 { JITTER_START } else { jitter * 10.0 };
        if jitter > JITTER_MAX * (1.0 + 1e-9) {
            return Err(Error::IllConditioned { jitter: JITTER_MAX });
        }
    }
}

impl GpModel {
    /// Exact GP with fixed hyperparameters.
    pub fn fit_fixed(x: &[f64], y: &[f64], x_dim: usize, kernel: Kernel, noise: f64) -> Result<Self> {
        kernel.validate()?;
        if x_dim == 0 || x.len() % x_dim != 0 || x.len() / x_dim != y.len() {
            return Err(Error::Contract(format!(
                "GP inputs: {} values for width {x_dim} vs {} targets",
                x.len(),
                y.len()
            )));
        }
        let n = y.len();
        if n < 2 {
            return Err(Error::Contract(format!("GP needs at least 2 training rows, got {n}")));
        }
        if !(noise >= 0.0) {
            return Err(Error::Config(format!("noise variance must be >= 0, got {noise}")));
        }
        let k = gram(&kernel, x, x_dim);
        let (chol, jitter) = factor(&k, noise)?;
        let yv = DVector::from_column_slice(y);
        let alpha = chol.solve(&yv);
        let log_det_half: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum();
        let log_marginal = -0.5 * yv.dot(&alpha) - log_det_half - 0.5 * n as f64 * (2.0 * PI).ln();
        Ok(Self {
            kernel,
            noise,
            jitter,
            log_marginal,
            x: x.to_vec(),
            y: y.to_vec(),
            x_dim,
            chol,
            alpha,
        })
    }

    pub fn x_dim(&self) -> usize {
        self.x_dim
    }

    pub fn train_len(&self) -> usize {
        self.y.len()
    }

    /// Lower Cholesky factor of the regularized Gram matrix.
    pub fn cholesky_l(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    /// Predictive mean and std (observation noise included) at rows of `x`.
    pub fn predict(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let m = self.x_dim;
        if x.len() % m != 0 {
            return Err(Error::Contract(format!("targets are not rows of width {m}")));
        }
        let n = self.y.len();
        let mut means = Vec::with_capacity(x.len() / m);
        let mut stds = Vec::with_capacity(x.len() / m);
        for q in x.chunks(m) {
            let ks = DVector::from_iterator(n, (0..n).map(|i| self.kernel.eval(&self.x[i * m..(i + 1) * m], q)));
            let mean = ks.dot(&self.alpha);
            let v = self
                .chol
                .l_dirty()
                .solve_lower_triangular(&ks)
                .ok_or_else(|| Error::IllConditioned { jitter: self.jitter })?;
            let latent = (self.kernel.eval(q, q) - v.dot(&v)).max(0.0);
            means.push(mean);
            stds.push((latent + self.noise + self.jitter).sqrt());
        }
        Ok((means, stds))
    }

    pub fn stored(&self) -> StoredGp {
        StoredGp {
            kernel: self.kernel,
            noise: self.noise,
            x_dim: self.x_dim,
            x: self.x.clone(),
            y: self.y.clone(),
        }
    }
}

/// Grid search over the kernel family, keeping the highest log marginal
/// likelihood. Grid points whose factorization fails are skipped.
pub fn gp_fit(x: &[f64], y: &[f64], x_dim: usize, kind: KernelKind, grid: &GpGrid) -> Result<GpModel> {
    let mut best: Option<GpModel> = None;
    let mut last_err = None;
    for kernel in grid.kernels(kind) {
        for &noise in &grid.noises {
            match GpModel::fit_fixed(x, y, x_dim, kernel, noise) {
                Ok(m) => {
                    if best.as_ref().map_or(true, |b| m.log_marginal > b.log_marginal) {
                        best = Some(m);
                    }
                }
                Err(e @ Error::IllConditioned { .. }) => last_err = Some(e),
                Err(e) => return Err(e),
            }
        }
    }
    best.ok_or_else(|| last_err.unwrap_or_else(|| Error::Config("empty hyperparameter grid".into())))
}

/// Serializable GP: hyperparameters and training data; the factorization
/// is recomputed on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredGp {
    pub kernel: Kernel,
    pub noise: f64,
    pub x_dim: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl StoredGp {
    pub fn restore(&self) -> Result<GpModel> {
        GpModel::fit_fixed(&self.x, &self.y, self.x_dim, self.kernel, self.noise)
    }
}

/// Independent scalar GPs, one per output column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpFile {
    pub format: String,
    pub kernel: KernelKind,
    pub normalization: Option<Normalization>,
    pub outputs: Vec<StoredGp>,
}

impl GpFile {
    pub fn new(kernel: KernelKind, normalization: Option<Normalization>, models: &[GpModel]) -> Self {
        Self {
            format: GP_FORMAT.to_string(),
            kernel,
            normalization,
            outputs: models.iter().map(GpModel::stored).collect(),
        }
    }

    pub fn restore(&self) -> Result<Vec<GpModel>> {
        if self.format != GP_FORMAT {
            return Err(Error::Format(format!("unsupported GP format {:?}", self.format)));
        }
        self.outputs.iter().map(StoredGp::restore).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: GpFile = serde_json::from_str(&fs::read_to_string(path)?)?;
        if file.format != GP_FORMAT {
            return Err(Error::Format(format!("unsupported GP format {:?}", file.format)));
        }
        Ok(file)
    }
}

/// Fits one GP per output column of row-major `y [n×p]`.
pub fn gp_fit_columns(x: &[f64], y: &[f64], x_dim: usize, y_dim: usize, kind: KernelKind, grid: &GpGrid) -> Result<Vec<GpModel>> {
    (0..y_dim)
        .map(|j| {
            let col: Vec<f64> = y.iter().skip(j).step_by(y_dim).copied().collect();
            gp_fit(x, &col, x_dim, kind, grid)
        })
        .collect()
}

/// Joins per-column GP predictions into one distribution.
pub fn gp_predict_columns(models: &[GpModel], x: &[f64]) -> Result<PredictiveDistribution> {
    let p = models.len();
    if p == 0 {
        return Err(Error::Contract("no GP models to predict with".into()));
    }
    let cols = models.iter().map(|m| m.predict(x)).collect::<Result<Vec<_>>>()?;
    let t = cols[0].0.len();
    let mut mean = Vec::with_capacity(t * p);
    let mut std = Vec::with_capacity(t * p);
    for i in 0..t {
        for (mu, sd) in &cols {
            mean.push(mu[i]);
            std.push(sd[i]);
        }
    }
    Ok(PredictiveDistribution { y_dim: p, mean, std })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matern_reference_values() {
        assert_eq!(matern_kernel(&[0.3], &[0.3], 1.0, 2.5), 2.5);
        let expected = (1.0 + 5f64.sqrt() + 5.0 / 3.0) * (-(5f64.sqrt())).exp();
        let v = matern_kernel(&[0.0], &[1.0], 1.0, 1.0);
        assert!((v - expected).abs() < 1e-15);
        assert!((v - 0.52399).abs() < 1e-5);
    }

    #[test]
    fn polynomial_reference_values() {
        assert_eq!(polynomial_kernel(&[1.0, 0.0], &[0.0, 1.0], 0.7, 1.0, 3), 1.0);
        assert_eq!(polynomial_kernel(&[1.0, 1.0], &[1.0, 1.0], 1.0, 0.0, 2), 4.0);
    }

    #[test]
    fn default_grid_sizes() {
        let g = GpGrid::default();
        assert_eq!(g.kernels(KernelKind::Matern).len(), 27);
        assert_eq!(g.kernels(KernelKind::Polynomial).len(), 20);
        assert!((g.lengthscales[0] - 0.05).abs() < 1e-15 && (g.lengthscales[8] - 5.0).abs() < 1e-12);
        assert!((g.noises[6] - 1.0).abs() < 1e-12);
    }
}
