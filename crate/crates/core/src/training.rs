//! ELBO objective, the training loop, prediction and checkpoints.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use diffcore::{Rng, Tape, Tensor};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Normalization};
use crate::decoders::PredictiveDistribution;
use crate::error::{Error, Result};
use crate::model::{Context, ModelConfig, NpModel};
use crate::nn::ParamSet;
use crate::npmodel;

pub const CHECKPOINT_FORMAT: &str = "npode-checkpoint/v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub context_fraction: (f64, f64),
    pub latent_samples_train: usize,
    pub latent_samples_predict: usize,
    /// Divide the KL term by the number of targets and average the
    /// log-likelihood per target. When false the summed form is used.
    pub kl_per_target: bool,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    pub trace_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 10_000,
            learning_rate: 1e-4,
            seed: 0,
            context_fraction: (0.3, 0.9),
            latent_samples_train: 1,
            latent_samples_predict: 1,
            kl_per_target: true,
            grad_clip: 10.0,
            trace_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.context_fraction;
        if !(0.0 < lo && lo <= hi && hi < 1.0) {
            return Err(Error::Config(format!("context fraction range ({lo}, {hi}) must satisfy 0 < low <= high < 1")));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.latent_samples_train == 0 || self.latent_samples_predict == 0 {
            return Err(Error::Config("latent sample counts must be positive".into()));
        }
        if self.trace_every == 0 {
            return Err(Error::Config("trace_every must be positive".into()));
        }
        if !(self.grad_clip >= 0.0) {
            return Err(Error::Config("grad_clip must be >= 0".into()));
        }
        Ok(())
    }
}

/// Random context/target partition of `n` rows: `|D_C| = round(u·n)` with
/// `u ~ U(range)`, clamped to `[1, n−1]`.
pub fn split_context_target(n: usize, rng: &mut Rng, range: (f64, f64)) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::Contract(format!("context/target split needs at least 2 rows, got {n}")));
    }
    let u = if range.0 == range.1 { range.0 } else { rng.uniform_range(range.0, range.1) };
    let k = ((u * n as f64).round() as usize).clamp(1, n - 1);
    let order = rng.permutation(n);
    Ok((order[..k].to_vec(), order[k..].to_vec()))
}

/// Scalar pieces of one ELBO evaluation; `loss` is the negated ELBO.
#[derive(Debug, Clone)]
pub struct ElboTerms {
    pub loss: Tensor,
    pub kl: Tensor,
    pub nll: Tensor,
}

/// Negated ELBO for one context/target partition of the training rows.
///
/// The prior conditions on the context, the posterior on context and
/// targets together; latent draws come from the posterior.
pub fn elbo_loss(
    tape: &Tape,
    model: &NpModel,
    params: &ParamSet,
    context: &Dataset,
    targets: &Dataset,
    rng: &mut Rng,
    cfg: &TrainConfig,
) -> Result<ElboTerms> {
    if context.is_empty() || targets.is_empty() {
        return Err(Error::Contract("ELBO needs non-empty context and target sets".into()));
    }
    let ctx = Context::from_dataset(context)?;
    let full = Context::from_dataset(&context.concat(targets)?)?;
    let prior = model.latent(tape, params, &ctx)?;
    let posterior = model.latent(tape, params, &full)?;
    let kl = npmodel::kl_divergence(tape, &posterior, &prior)?;

    let x_t = targets.x_tensor();
    let y_t = targets.y_tensor();
    let samples = cfg.latent_samples_train.max(1);
    let mut loglik: Option<Tensor> = None;
    for _ in 0..samples {
        let z = npmodel::sample_latent(tape, &posterior, rng)?;
        let (mean, std) = model.conditional(tape, params, &ctx, &x_t, &z)?;
        let ll = npmodel::gaussian_log_likelihood(tape, &y_t, &mean, &std)?;
        loglik = Some(match loglik {
            Some(acc) => tape.add(&acc, &ll)?,
            None => ll,
        });
    }
    let loglik = tape.scale(&loglik.expect("at least one sample"), 1.0 / samples as f64)?;
    let nt = targets.len() as f64;
    let (ll_term, kl_term) = if cfg.kl_per_target {
        (tape.scale(&loglik, 1.0 / nt)?, tape.scale(&kl, 1.0 / nt)?)
    } else {
        (loglik, kl.clone())
    };
    let elbo = tape.sub(&ll_term, &kl_term)?;
    Ok(ElboTerms {
        loss: tape.neg(&elbo)?,
        kl,
        nll: tape.neg(&ll_term)?,
    })
}

/// Adam with bias-corrected moments.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn update(&mut self, params: &mut ParamSet, grads: &BTreeMap<String, Tensor>) -> Result<()> {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (name, g) in grads {
            let current = params.get(name)?.values();
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            let mut next = Vec::with_capacity(g.len());
            for (i, (&gi, &p)) in g.values().iter().zip(current).enumerate() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                next.push(p - self.learning_rate * m_hat / (v_hat.sqrt() + self.eps));
            }
            params.set_values(name, next)?;
        }
        Ok(())
    }
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
pub fn clip_global_norm(grads: &mut BTreeMap<String, Tensor>, max_norm: f64) -> f64 {
    let norm = grads
        .values()
        .flat_map(|g| g.values().iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let k = max_norm / norm;
        for g in grads.values_mut() {
            let scaled = g.values().iter().map(|v| v * k).collect();
            *g = Tensor::new(g.shape().to_vec(), scaled).expect("same shape");
        }
    }
    norm
}

/// Window averages of the training objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub loss: f64,
    pub kl: f64,
    pub nll: f64,
}

pub fn trace_csv(rows: &[TraceRow]) -> String {
    let mut out = String::from("iteration,loss,kl,nll\n");
    for r in rows {
        out.push_str(&format!("{},{:?},{:?},{:?}\n", r.iteration, r.loss, r.kl, r.nll));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredTensor {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Everything needed to rebuild a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub normalization: Option<Normalization>,
    pub iterations: usize,
    pub final_loss: Option<f64>,
    pub params: BTreeMap<String, StoredTensor>,
}

impl Checkpoint {
    pub fn capture(model: &NpModel, train: &TrainConfig, normalization: Option<Normalization>, iterations: usize, final_loss: Option<f64>) -> Self {
        let params = model
            .params
            .iter()
            .map(|(k, t)| {
                (
                    k.to_string(),
                    StoredTensor { shape: t.shape().to_vec(), values: t.to_vec() },
                )
            })
            .collect();
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            model: model.config.clone(),
            train: train.clone(),
            normalization,
            iterations,
            final_loss,
            params,
        }
    }

    pub fn restore(&self) -> Result<NpModel> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Format(format!(
                "unsupported checkpoint format {:?}, expected {CHECKPOINT_FORMAT:?}",
                self.format
            )));
        }
        let mut reference = NpModel::init(self.model.clone(), &mut Rng::seed_from(0))?;
        if reference.params.len() != self.params.len() {
            return Err(Error::Format(format!(
                "checkpoint holds {} tensors, architecture expects {}",
                self.params.len(),
                reference.params.len()
            )));
        }
        for (name, stored) in &self.params {
            let expected = reference.params.get(name).map_err(|_| Error::Format(format!("unexpected tensor {name:?}")))?;
            if expected.shape() != stored.shape.as_slice() {
                return Err(Error::Format(format!(
                    "tensor {name:?} has shape {:?}, expected {:?}",
                    stored.shape,
                    expected.shape()
                )));
            }
            reference.params.set_values(name, stored.values.clone())?;
        }
        Ok(reference)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        match value.get("format").and_then(|f| f.as_str()) {
            Some(CHECKPOINT_FORMAT) => Ok(serde_json::from_value(value)?),
            Some(other) => Err(Error::Format(format!("unsupported checkpoint format {other:?}"))),
            None => Err(Error::Format("checkpoint has no format tag".into())),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: NpModel,
    pub checkpoint: Checkpoint,
    pub trace: Vec<TraceRow>,
}

/// Runs `cfg.iterations` Adam steps on the negated ELBO.
///
/// Parameters are initialized from `cfg.seed`; the same seed drives
/// partitions and latent draws, so a run is a pure function of
/// `(train, model_cfg, cfg)`.
pub fn train(train: &Dataset, model_cfg: &ModelConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.len() < 2 {
        return Err(Error::Contract(format!("training needs at least 2 rows, got {}", train.len())));
    }
    if train.x_dim() != model_cfg.x_dim || train.y_dim() != model_cfg.y_dim {
        return Err(Error::Contract(format!(
            "model expects {}→{} columns, data has {}→{}",
            model_cfg.x_dim,
            model_cfg.y_dim,
            train.x_dim(),
            train.y_dim()
        )));
    }
    let mut rng = Rng::seed_from(cfg.seed);
    let mut init_rng = rng.fork();
    let mut model = NpModel::init(model_cfg.clone(), &mut init_rng)?;
    let mut adam = Adam::new(cfg.learning_rate);
    let mut trace = Vec::new();
    let mut window = (0.0, 0.0, 0.0, 0usize);
    let mut final_loss = None;

    for it in 0..cfg.iterations {
        let (ci, ti) = split_context_target(train.len(), &mut rng, cfg.context_fraction)?;
        let context = train.select(&ci);
        let targets = train.select(&ti);
        let tape = Tape::new();
        let bound = model.params.bind(&tape);
        let terms = elbo_loss(&tape, &model, &bound, &context, &targets, &mut rng, cfg)?;
        let loss = terms.loss.item()?;
        let kl = terms.kl.item()?;
        if !loss.is_finite() {
            return Err(Error::Diverged { iteration: it, loss });
        }
        if kl < -1e-9 {
            return Err(Error::Contract(format!("negative KL {kl} at iteration {it}")));
        }
        let grads = tape.backward(&terms.loss)?;
        let mut grads = bound.gradients(&grads);
        drop(bound);
        drop(tape);
        clip_global_norm(&mut grads, cfg.grad_clip);
        adam.update(&mut model.params, &grads)?;

        window.0 += loss;
        window.1 += kl;
        window.2 += terms.nll.item()?;
        window.3 += 1;
        final_loss = Some(loss);
        let done = it + 1;
        if done % cfg.trace_every == 0 || done == cfg.iterations {
            let k = window.3 as f64;
            trace.push(TraceRow { iteration: done, loss: window.0 / k, kl: window.1 / k, nll: window.2 / k });
            window = (0.0, 0.0, 0.0, 0);
        }
    }
    let checkpoint = Checkpoint::capture(&model, cfg, train.normalization().cloned(), cfg.iterations, final_loss);
    Ok(TrainOutcome { model, checkpoint, trace })
}

const PREDICT_CHUNK: usize = 64;

/// Predictive distribution for targets `x [t×m]`, conditioning on the
/// context through the prior.
///
/// With several latent draws the reported mean is the average of the
/// per-draw means and the variance adds the spread of those means to the
/// average predicted variance.
pub fn predict(model: &NpModel, context: &Dataset, x: &Tensor, samples: usize, rng: &mut Rng) -> Result<PredictiveDistribution> {
    let ctx = Context::from_dataset(context)?;
    let p = model.config.y_dim;
    let m = model.config.x_dim;
    if context.x_dim() != m || context.y_dim() != p {
        return Err(Error::Contract(format!(
            "model expects {m}→{p} columns, context has {}→{}",
            context.x_dim(),
            context.y_dim()
        )));
    }
    if x.rank() != 2 || x.shape()[1] != m {
        return Err(Error::Contract(format!("targets must be [t×{m}], got {:?}", x.shape())));
    }
    let t = x.shape()[0];
    let tape = Tape::new();
    let params = &model.params;
    let prior = model.latent(&tape, params, &ctx)?;
    let samples = samples.max(1);
    let zs = (0..samples)
        .map(|_| npmodel::sample_latent(&tape, &prior, rng))
        .collect::<Result<Vec<_>>>()?;

    let mut sum_mean = vec![0.0; t * p];
    let mut sum_mean_sq = vec![0.0; t * p];
    let mut sum_var = vec![0.0; t * p];
    for z in &zs {
        for start in (0..t).step_by(PREDICT_CHUNK) {
            let end = (start + PREDICT_CHUNK).min(t);
            let chunk = Tensor::new(vec![end - start, m], x.values()[start * m..end * m].to_vec())?;
            let (mean, std) = model.conditional(&tape, params, &ctx, &chunk, z)?;
            for (k, (&mu, &s)) in mean.values().iter().zip(std.values()).enumerate() {
                let i = start * p + k;
                sum_mean[i] += mu;
                sum_mean_sq[i] += mu * mu;
                sum_var[i] += s * s;
            }
        }
    }
    let n = samples as f64;
    let mean: Vec<f64> = sum_mean.iter().map(|s| s / n).collect();
    let std = if samples == 1 {
        sum_var.iter().map(|v| v.sqrt()).collect()
    } else {
        (0..t * p)
            .map(|i| {
                let spread = (sum_mean_sq[i] / n - mean[i] * mean[i]).max(0.0);
                (sum_var[i] / n + spread).sqrt()
            })
            .collect()
    };
    Ok(PredictiveDistribution { y_dim: p, mean, std })
}
