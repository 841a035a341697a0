//! Encoder half of the model: deterministic and stochastic encoders,
//! multi-head cross-attention, the latent Gaussian and its KL.

use std::f64::consts::PI;

use diffcore::{Rng, Tape, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, Activation, ParamSet};

/// Floor added to every softplus-transformed standard deviation.
pub const STD_FLOOR: f64 = 0.01;

/// Widths of the encoder side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub x_dim: usize,
    pub y_dim: usize,
    pub feature_width: usize,
    pub latent_dim: usize,
    pub encoder_layers: usize,
    pub heads: usize,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.x_dim == 0 || self.y_dim == 0 {
            return Err(Error::Config("x_dim and y_dim must be positive".into()));
        }
        if self.feature_width == 0 || self.latent_dim == 0 || self.encoder_layers == 0 {
            return Err(Error::Config("encoder widths and depth must be positive".into()));
        }
        if self.heads == 0 || self.feature_width % self.heads != 0 {
            return Err(Error::Config(format!(
                "feature width {} is not divisible into {} heads",
                self.feature_width, self.heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.feature_width / self.heads
    }

    fn encoder_widths(&self) -> Vec<usize> {
        let mut w = vec![self.x_dim + self.y_dim];
        w.extend(std::iter::repeat(self.feature_width).take(self.encoder_layers));
        w
    }

    /// Registers every encoder-side parameter.
    pub fn init(&self, params: &mut ParamSet, rng: &mut Rng) {
        let f = self.feature_width;
        nn::init_mlp(params, rng, "det", &self.encoder_widths());
        nn::init_mlp(params, rng, "sto", &self.encoder_widths());
        nn::init_linear(params, rng, "sto.mean", f, self.latent_dim, true);
        nn::init_linear(params, rng, "sto.std", f, self.latent_dim, true);
        nn::init_mlp(params, rng, "att.embed", &[self.x_dim, f, f]);
        let d = self.head_dim();
        for h in 0..self.heads {
            for proj in ["q", "k", "v"] {
                nn::init_linear(params, rng, &format!("att.{proj}{h}"), f, d, false);
            }
        }
        nn::init_linear(params, rng, "att.out", f, f, false);
    }
}

/// Diagonal Gaussian over the latent variable.
#[derive(Debug, Clone)]
pub struct LatentDistribution {
    pub mean: Tensor,
    pub std: Tensor,
}

impl LatentDistribution {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn check_positive(&self, what: &str) -> Result<()> {
        if let Some(v) = self.std.values().iter().find(|&&s| !(s > 0.0)) {
            return Err(Error::Tensor(diffcore::TensorError::Domain {
                op: "latent",
                detail: format!("{what} std entry {v} is not positive"),
            }));
        }
        Ok(())
    }
}

fn require_rows(points: &Tensor, what: &str) -> Result<()> {
    if points.rank() != 2 || points.shape()[0] == 0 {
        return Err(Error::Contract(format!("{what} needs at least one point, got shape {:?}", points.shape())));
    }
    Ok(())
}

/// `0.01 + softplus(raw)`.
pub fn positive_std(tape: &Tape, raw: &Tensor) -> Result<Tensor> {
    let sp = tape.softplus(raw)?;
    Ok(tape.add_scalar(&sp, STD_FLOOR)?)
}

/// Per-point representations `d_i` of concatenated `(x_i, y_i)` rows `[n×(m+p)]`.
pub fn encode_deterministic(tape: &Tape, params: &ParamSet, cfg: &EncoderConfig, xy: &Tensor) -> Result<Tensor> {
    require_rows(xy, "deterministic encoder")?;
    nn::mlp(tape, params, "det", cfg.encoder_layers, xy, Activation::Between)
}

/// Mean-aggregated stochastic encoding mapped to a latent Gaussian.
pub fn encode_stochastic(tape: &Tape, params: &ParamSet, cfg: &EncoderConfig, xy: &Tensor) -> Result<LatentDistribution> {
    require_rows(xy, "stochastic encoder")?;
    let s = nn::mlp(tape, params, "sto", cfg.encoder_layers, xy, Activation::Between)?;
    let pooled = tape.mean(&s, Some(0))?;
    let pooled = tape.reshape(&pooled, &[1, cfg.feature_width])?;
    let mean = nn::linear(tape, params, "sto.mean", &pooled)?;
    let raw = nn::linear(tape, params, "sto.std", &pooled)?;
    let std = positive_std(tape, &raw)?;
    Ok(LatentDistribution {
        mean: tape.reshape(&mean, &[cfg.latent_dim])?,
        std: tape.reshape(&std, &[cfg.latent_dim])?,
    })
}

/// Multi-head scaled dot-product attention of target queries over context keys.
///
/// `keys [n×m]` are context inputs, `values [n×F]` their deterministic
/// representations and `queries [t×m]` the target inputs. Keys and queries
/// share one embedding network. Returns `d_C [t×F]`.
pub fn cross_attention(
    tape: &Tape,
    params: &ParamSet,
    cfg: &EncoderConfig,
    keys: &Tensor,
    values: &Tensor,
    queries: &Tensor,
) -> Result<Tensor> {
    require_rows(keys, "cross attention")?;
    require_rows(queries, "cross attention")?;
    if values.rank() != 2 || values.shape()[0] != keys.shape()[0] {
        return Err(Error::Contract(format!(
            "cross attention got {} keys but values of shape {:?}",
            keys.shape()[0],
            values.shape()
        )));
    }
    let ek = nn::mlp(tape, params, "att.embed", 2, keys, Activation::Between)?;
    let eq = nn::mlp(tape, params, "att.embed", 2, queries, Activation::Between)?;
    let scale = 1.0 / (cfg.head_dim() as f64).sqrt();
    let mut heads = Vec::with_capacity(cfg.heads);
    for h in 0..cfg.heads {
        let q = nn::linear(tape, params, &format!("att.q{h}"), &eq)?;
        let k = nn::linear(tape, params, &format!("att.k{h}"), &ek)?;
        let v = nn::linear(tape, params, &format!("att.v{h}"), values)?;
        let kt = tape.transpose(&k)?;
        let scores = tape.scale(&tape.matmul(&q, &kt)?, scale)?;
        let weights = tape.softmax(&scores, 1)?;
        heads.push(tape.matmul(&weights, &v)?);
    }
    let refs: Vec<&Tensor> = heads.iter().collect();
    let joined = tape.concat(&refs, 1)?;
    nn::linear(tape, params, "att.out", &joined)
}

/// `z = mean + std ⊙ ε` with `ε` drawn from `rng` as a constant.
pub fn sample_latent(tape: &Tape, dist: &LatentDistribution, rng: &mut Rng) -> Result<Tensor> {
    let eps = Tensor::new(dist.mean.shape().to_vec(), rng.normals(dist.dim()))?;
    reparameterize(tape, dist, &eps)
}

/// `mean + std ⊙ eps` for a given noise draw.
pub fn reparameterize(tape: &Tape, dist: &LatentDistribution, eps: &Tensor) -> Result<Tensor> {
    let noise = tape.mul(&dist.std, eps)?;
    Ok(tape.add(&dist.mean, &noise)?)
}

/// Closed-form `KL(posterior ∥ prior)` of diagonal Gaussians.
pub fn kl_divergence(tape: &Tape, posterior: &LatentDistribution, prior: &LatentDistribution) -> Result<Tensor> {
    posterior.check_positive("posterior")?;
    prior.check_positive("prior")?;
    let log_ratio = tape.sub(&tape.log(&prior.std)?, &tape.log(&posterior.std)?)?;
    let diff = tape.sub(&posterior.mean, &prior.mean)?;
    let num = tape.add(&tape.square(&posterior.std)?, &tape.square(&diff)?)?;
    let den = tape.scale(&tape.square(&prior.std)?, 2.0)?;
    let quad = tape.div(&num, &den)?;
    let terms = tape.add_scalar(&tape.add(&log_ratio, &quad)?, -0.5)?;
    Ok(tape.sum(&terms, None)?)
}

/// `Σ_j [−½ ln 2π − ln σ_j − (y_j − μ_j)² / (2σ_j²)]` over every entry.
pub fn gaussian_log_likelihood(tape: &Tape, y: &Tensor, mean: &Tensor, std: &Tensor) -> Result<Tensor> {
    if y.shape() != mean.shape() || y.shape() != std.shape() {
        return Err(Error::Contract(format!(
            "log-likelihood shapes differ: y {:?}, mean {:?}, std {:?}",
            y.shape(),
            mean.shape(),
            std.shape()
        )));
    }
    if let Some(v) = std.values().iter().find(|&&s| !(s > 0.0)) {
        return Err(Error::Tensor(diffcore::TensorError::Domain {
            op: "gaussian_log_likelihood",
            detail: format!("std entry {v} is not positive"),
        }));
    }
    let resid = tape.sub(y, mean)?;
    let quad = tape.div(&tape.square(&resid)?, &tape.scale(&tape.square(std)?, 2.0)?)?;
    let terms = tape.add(&tape.log(std)?, &quad)?;
    let total = tape.sum(&terms, None)?;
    let constant = -0.5 * (2.0 * PI).ln() * y.len() as f64;
    Ok(tape.add_scalar(&tape.neg(&total)?, constant)?)
}
