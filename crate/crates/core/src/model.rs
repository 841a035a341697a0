//! The assembled latent-variable surrogate: encoders plus either decoder.

use diffcore::{Rng, Tape, Tensor};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::decoders::{self, DecoderConfig, DecoderKind, OdeSolverConfig};
use crate::error::{Error, Result};
use crate::nn::ParamSet;
use crate::npmodel::{self, EncoderConfig, LatentDistribution};

/// Architecture of one model instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub x_dim: usize,
    pub y_dim: usize,
    pub decoder: DecoderKind,
    pub feature_width: usize,
    pub latent_dim: usize,
    pub encoder_layers: usize,
    pub heads: usize,
    pub channels: usize,
    pub mlp_layers: usize,
    pub solver: OdeSolverConfig,
}

impl ModelConfig {
    /// Full-size defaults: width 128 everywhere, 8 heads, 3-layer encoders.
    pub fn new(x_dim: usize, y_dim: usize, decoder: DecoderKind) -> Self {
        Self {
            x_dim,
            y_dim,
            decoder,
            feature_width: 128,
            latent_dim: 128,
            encoder_layers: 3,
            heads: 8,
            channels: 128,
            mlp_layers: 3,
            solver: OdeSolverConfig::default(),
        }
    }

    pub fn encoder(&self) -> EncoderConfig {
        EncoderConfig {
            x_dim: self.x_dim,
            y_dim: self.y_dim,
            feature_width: self.feature_width,
            latent_dim: self.latent_dim,
            encoder_layers: self.encoder_layers,
            heads: self.heads,
        }
    }

    pub fn decoder_config(&self) -> DecoderConfig {
        DecoderConfig {
            kind: self.decoder,
            feature_width: self.feature_width,
            latent_dim: self.latent_dim,
            y_dim: self.y_dim,
            channels: self.channels,
            mlp_layers: self.mlp_layers,
            solver: self.solver,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder().validate()?;
        self.decoder_config().validate(self.x_dim)
    }
}

/// Context rows as the tensors the encoders consume.
#[derive(Debug, Clone)]
pub struct Context {
    pub x: Tensor,
    pub xy: Tensor,
}

impl Context {
    pub fn from_dataset(ds: &Dataset) -> Result<Self> {
        if ds.is_empty() {
            return Err(Error::Contract("context set is empty".into()));
        }
        Ok(Self { x: ds.x_tensor(), xy: ds.xy_tensor() })
    }

    pub fn len(&self) -> usize {
        self.x.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NpModel {
    pub config: ModelConfig,
    pub params: ParamSet,
}

impl NpModel {
    pub fn init(config: ModelConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        config.encoder().init(&mut params, rng);
        config.decoder_config().init(&mut params, rng);
        Ok(Self { config, params })
    }

    /// Latent Gaussian conditioned on `points`.
    pub fn latent(&self, tape: &Tape, params: &ParamSet, points: &Context) -> Result<LatentDistribution> {
        npmodel::encode_stochastic(tape, params, &self.config.encoder(), &points.xy)
    }

    /// `(mean, std)` `[t×p]` for targets `x [t×m]` given the context and a
    /// latent draw `z [Z]`.
    pub fn conditional(
        &self,
        tape: &Tape,
        params: &ParamSet,
        context: &Context,
        x: &Tensor,
        z: &Tensor,
    ) -> Result<(Tensor, Tensor)> {
        let enc = self.config.encoder();
        if x.rank() != 2 || x.shape()[1] != self.config.x_dim {
            return Err(Error::Contract(format!(
                "targets must be [t×{}], got {:?}",
                self.config.x_dim,
                x.shape()
            )));
        }
        let t = x.shape()[0];
        let d = npmodel::encode_deterministic(tape, params, &enc, &context.xy)?;
        let d_c = npmodel::cross_attention(tape, params, &enc, &context.x, &d, x)?;
        let z_rows = tape.repeat_rows(z, t)?;
        let w = decoders::assemble_decoder_input(tape, &d_c, &z_rows, x)?;
        decoders::decode(tape, params, &self.config.decoder_config(), &w)
    }
}
