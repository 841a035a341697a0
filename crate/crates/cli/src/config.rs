//! Flat `section.key = value` run configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use npode::baselines::KernelKind;
use npode::data::{SpiralConfig, SplitSpec};
use npode::metrics::CiKind;
use npode::{DecoderKind, ModelConfig, OdeSolverConfig, TrainConfig};

use crate::CliError;

/// Every accepted key with its default, in output order.
const DEFAULTS: &[(&str, &str)] = &[
    ("data.source", "spiral"),
    ("data.path", ""),
    ("data.seed", "0"),
    ("spiral.n_points", "200"),
    ("spiral.x_start", "0"),
    ("spiral.x_end", "12.566370614359172"),
    ("spiral.y0", "1, 0"),
    ("spiral.scale", "4"),
    ("spiral.noise_std", "0.01"),
    ("synthetic6.rows", "106"),
    ("synthetic6.noise_std", "0.05"),
    ("split.test_count", "50"),
    ("split.train_size", "0"),
    ("split.seed", "0"),
    ("model.kind", "npode"),
    ("model.feature_width", "128"),
    ("model.latent_dim", "128"),
    ("model.encoder_layers", "3"),
    ("model.heads", "8"),
    ("model.channels", "128"),
    ("model.mlp_layers", "3"),
    ("model.d_start", "0"),
    ("model.d_end", "1"),
    ("model.step", "0.05"),
    ("train.iterations", "10000"),
    ("train.learning_rate", "0.0001"),
    ("train.seed", "0"),
    ("train.context_min", "0.3"),
    ("train.context_max", "0.9"),
    ("train.latent_samples_train", "1"),
    ("train.latent_samples_predict", "1"),
    ("train.kl_per_target", "true"),
    ("train.grad_clip", "10"),
    ("train.trace_every", "100"),
    ("eval.ci", "auto"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Npode,
    Np,
    GpMatern,
    GpPoly,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Npode => "npode",
            ModelKind::Np => "np",
            ModelKind::GpMatern => "gp-matern",
            ModelKind::GpPoly => "gp-poly",
        }
    }

    pub fn decoder(self) -> Option<DecoderKind> {
        match self {
            ModelKind::Npode => Some(DecoderKind::Npode),
            ModelKind::Np => Some(DecoderKind::Mlp),
            _ => None,
        }
    }

    pub fn kernel(self) -> Option<KernelKind> {
        match self {
            ModelKind::GpMatern => Some(KernelKind::Matern),
            ModelKind::GpPoly => Some(KernelKind::Polynomial),
            _ => None,
        }
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "npode" => Ok(ModelKind::Npode),
            "np" => Ok(ModelKind::Np),
            "gp-matern" => Ok(ModelKind::GpMatern),
            "gp-poly" => Ok(ModelKind::GpPoly),
            other => Err(format!("unknown model kind {other:?} (expected npode, np, gp-matern or gp-poly)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Source {
    Spiral,
    Synthetic6,
    Csv(PathBuf),
}

/// Resolved configuration: every known key mapped to its current value.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let values = DEFAULTS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        Self { values }
    }
}

impl RunConfig {
    /// Parses `section.key = value` lines over the defaults. `#` starts a
    /// comment.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected `key = value`, got {raw:?}", n + 1)))?;
            cfg.set(key.trim(), value.trim()).map_err(|e| match e {
                CliError::Config(msg) => CliError::Config(format!("line {}: {msg}", n + 1)),
                other => other,
            })?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.to_string();
                Ok(())
            }
            None => Err(CliError::Config(format!("unknown key {key:?}"))),
        }
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).expect("key is in the defaults table")
    }

    fn typed<T: FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)
            .parse()
            .map_err(|e| CliError::Config(format!("{key} = {:?}: {e}", self.get(key))))
    }

    /// Fully resolved config in file syntax.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut section = "";
        for (key, _) in DEFAULTS {
            let s = key.split('.').next().unwrap_or("");
            if s != section {
                if !section.is_empty() {
                    out.push('\n');
                }
                section = s;
            }
            let _ = writeln!(out, "{key} = {}", self.get(key));
        }
        out
    }

    pub fn source(&self) -> Result<Source, CliError> {
        match self.get("data.source") {
            "spiral" => Ok(Source::Spiral),
            "synthetic6" => Ok(Source::Synthetic6),
            "csv" => {
                let path = self.get("data.path");
                if path.is_empty() {
                    return Err(CliError::Config("data.source = csv needs data.path".into()));
                }
                Ok(Source::Csv(PathBuf::from(path)))
            }
            other => Err(CliError::Config(format!("data.source {other:?} is not spiral, synthetic6 or csv"))),
        }
    }

    pub fn data_seed(&self) -> Result<u64, CliError> {
        self.typed("data.seed")
    }

    pub fn spiral(&self) -> Result<SpiralConfig, CliError> {
        let y0: Vec<f64> = self
            .get("spiral.y0")
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| CliError::Config(format!("spiral.y0: {e}")))?;
        if y0.len() != 2 {
            return Err(CliError::Config(format!("spiral.y0 needs two values, got {}", y0.len())));
        }
        let cfg = SpiralConfig {
            n_points: self.typed("spiral.n_points")?,
            x_range: (self.typed("spiral.x_start")?, self.typed("spiral.x_end")?),
            y0: [y0[0], y0[1]],
            scale: self.typed("spiral.scale")?,
            noise_std: self.typed("spiral.noise_std")?,
            seed: self.data_seed()?,
        };
        cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn synthetic6(&self) -> Result<(usize, f64), CliError> {
        let rows: usize = self.typed("synthetic6.rows")?;
        let noise: f64 = self.typed("synthetic6.noise_std")?;
        if !(noise >= 0.0) || !noise.is_finite() {
            return Err(CliError::Config(format!("synthetic6.noise_std must be >= 0, got {noise}")));
        }
        if rows < 2 {
            return Err(CliError::Config(format!("synthetic6.rows must be >= 2, got {rows}")));
        }
        Ok((rows, noise))
    }

    pub fn split(&self) -> Result<SplitSpec, CliError> {
        let train_size: usize = self.typed("split.train_size")?;
        Ok(SplitSpec {
            test_count: self.typed("split.test_count")?,
            nested_train_sizes: if train_size == 0 { vec![] } else { vec![train_size] },
            seed: self.typed("split.seed")?,
        })
    }

    pub fn model_kind(&self) -> Result<ModelKind, CliError> {
        self.get("model.kind").parse().map_err(CliError::Config)
    }

    pub fn model(&self, x_dim: usize, y_dim: usize, decoder: DecoderKind) -> Result<ModelConfig, CliError> {
        let cfg = ModelConfig {
            x_dim,
            y_dim,
            decoder,
            feature_width: self.typed("model.feature_width")?,
            latent_dim: self.typed("model.latent_dim")?,
            encoder_layers: self.typed("model.encoder_layers")?,
            heads: self.typed("model.heads")?,
            channels: self.typed("model.channels")?,
            mlp_layers: self.typed("model.mlp_layers")?,
            solver: OdeSolverConfig {
                d_start: self.typed("model.d_start")?,
                d_end: self.typed("model.d_end")?,
                step: self.typed("model.step")?,
            },
        };
        cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn train(&self) -> Result<TrainConfig, CliError> {
        let cfg = TrainConfig {
            iterations: self.typed("train.iterations")?,
            learning_rate: self.typed("train.learning_rate")?,
            seed: self.typed("train.seed")?,
            context_fraction: (self.typed("train.context_min")?, self.typed("train.context_max")?),
            latent_samples_train: self.typed("train.latent_samples_train")?,
            latent_samples_predict: self.typed("train.latent_samples_predict")?,
            kl_per_target: self.typed("train.kl_per_target")?,
            grad_clip: self.typed("train.grad_clip")?,
            trace_every: self.typed("train.trace_every")?,
        };
        cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    /// CI kind for evaluation: explicit, or one sigma for the spiral and
    /// 95% for tables.
    pub fn ci(&self) -> Result<CiKind, CliError> {
        match self.get("eval.ci") {
            "auto" => Ok(if self.get("data.source") == "spiral" { CiKind::OneSigma } else { CiKind::Ci95 }),
            s => CiKind::parse(s).ok_or_else(|| CliError::Config(format!("eval.ci {s:?} is not auto, one_sigma or ci95"))),
        }
    }
}
