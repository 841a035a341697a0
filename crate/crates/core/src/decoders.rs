//! Decoders: the continuous-depth convolutional decoder integrated with
//! Euler steps, the stacked fully connected baseline decoder, and the
//! decoder weight-count report.

use std::fmt::Write as _;

use diffcore::{Rng, Tape, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, Activation, ParamSet};
use crate::npmodel::positive_std;

const KERNEL: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecoderKind {
    Npode,
    Mlp,
}

impl DecoderKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DecoderKind::Npode => "npode",
            DecoderKind::Mlp => "mlp",
        }
    }
}

/// Fixed-step integration interval `[d_start, d_end]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdeSolverConfig {
    pub d_start: f64,
    pub d_end: f64,
    pub step: f64,
}

impl Default for OdeSolverConfig {
    fn default() -> Self {
        Self { d_start: 0.0, d_end: 1.0, step: 0.05 }
    }
}

impl OdeSolverConfig {
    /// Number of Euler steps; the interval must hold a whole number of them.
    pub fn steps(&self) -> Result<usize> {
        if !(self.step > 0.0) || !(self.d_end > self.d_start) {
            return Err(Error::Config(format!(
                "solver needs step > 0 and d_end > d_start, got [{}, {}] step {}",
                self.d_start, self.d_end, self.step
            )));
        }
        let ratio = (self.d_end - self.d_start) / self.step;
        let n = ratio.round();
        if n < 1.0 || (ratio - n).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::Config(format!(
                "solver interval {} is not a whole number of steps of {}",
                self.d_end - self.d_start,
                self.step
            )));
        }
        Ok(n as usize)
    }
}

/// Shape of either decoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub kind: DecoderKind,
    /// Width of the `d_C` block and of the zero-padded `x` slot.
    pub feature_width: usize,
    pub latent_dim: usize,
    pub y_dim: usize,
    /// State channels of the ODE network.
    pub channels: usize,
    /// Fully connected layers of the MLP decoder.
    pub mlp_layers: usize,
    pub solver: OdeSolverConfig,
}

impl DecoderConfig {
    /// Length of the assembled decoder input `w = (d_C, z, x)`.
    pub fn input_width(&self) -> usize {
        2 * self.feature_width + self.latent_dim
    }

    pub fn validate(&self, x_dim: usize) -> Result<()> {
        if x_dim > self.feature_width {
            return Err(Error::Unsupported(format!(
                "input dimension {x_dim} exceeds the {}-wide input slot; increase the feature width",
                self.feature_width
            )));
        }
        if self.y_dim == 0 {
            return Err(Error::Config("y_dim must be positive".into()));
        }
        match self.kind {
            DecoderKind::Npode => {
                if self.channels == 0 {
                    return Err(Error::Config("channels must be positive".into()));
                }
                self.solver.steps()?;
            }
            DecoderKind::Mlp => {
                if self.mlp_layers == 0 {
                    return Err(Error::Config("mlp_layers must be positive".into()));
                }
            }
        }
        Ok(())
    }

    fn head_input(&self) -> usize {
        match self.kind {
            DecoderKind::Npode => self.channels * self.input_width(),
            DecoderKind::Mlp => self.input_width(),
        }
    }

    pub fn init(&self, params: &mut ParamSet, rng: &mut Rng) {
        let c = self.channels;
        let l = self.input_width();
        match self.kind {
            DecoderKind::Npode => {
                params.insert("ode.lift", nn::init_weight(rng, &[1, c, KERNEL], KERNEL));
                params.insert("ode.a", nn::init_weight(rng, &[c + 1, c, KERNEL], (c + 1) * KERNEL));
                params.insert("ode.b", nn::init_weight(rng, &[c + 1, c, KERNEL], (c + 1) * KERNEL));
            }
            DecoderKind::Mlp => {
                let widths = vec![l; self.mlp_layers + 1];
                nn::init_mlp(params, rng, "mlp", &widths);
            }
        }
        nn::init_linear(params, rng, "head.mean", self.head_input(), self.y_dim, true);
        nn::init_linear(params, rng, "head.std", self.head_input(), self.y_dim, true);
    }
}

/// Predictive Gaussian for a batch of target points, `[t×p]` each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveDistribution {
    pub y_dim: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl PredictiveDistribution {
    pub fn len(&self) -> usize {
        self.mean.len() / self.y_dim
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn mean_row(&self, i: usize) -> &[f64] {
        &self.mean[i * self.y_dim..(i + 1) * self.y_dim]
    }

    pub fn std_row(&self, i: usize) -> &[f64] {
        &self.std[i * self.y_dim..(i + 1) * self.y_dim]
    }
}

/// `w = (d_C, z, x)` with `x` zero-padded to the width of `d_C`; all
/// arguments are `[t×·]`.
pub fn assemble_decoder_input(tape: &Tape, d_c: &Tensor, z: &Tensor, x: &Tensor) -> Result<Tensor> {
    let (t, slot) = match d_c.shape() {
        [t, f] => (*t, *f),
        other => return Err(Error::Contract(format!("d_C must be a matrix, got {other:?}"))),
    };
    let m = x.shape().get(1).copied().unwrap_or(0);
    if x.rank() != 2 || x.shape()[0] != t {
        return Err(Error::Contract(format!("x_target shape {:?} does not match {t} targets", x.shape())));
    }
    if m > slot {
        return Err(Error::Unsupported(format!(
            "input dimension {m} exceeds the {slot}-wide input slot; increase the feature width"
        )));
    }
    if m == slot {
        return Ok(tape.concat(&[d_c, z, x], 1)?);
    }
    let pad = Tensor::zeros(&[t, slot - m]);
    Ok(tape.concat(&[d_c, z, x, &pad], 1)?)
}

/// `conv_b(concat(tanh(conv_a(concat(state, D))), D))` for `state [b×C×L]`.
pub fn ode_derivative(tape: &Tape, wa: &Tensor, wb: &Tensor, state: &Tensor, depth: f64) -> Result<Tensor> {
    let (b, c, l) = match state.shape() {
        [b, c, l] => (*b, *c, *l),
        other => return Err(Error::Contract(format!("ODE state must be [batch×C×L], got {other:?}"))),
    };
    if wa.shape().first() != Some(&(c + 1)) {
        return Err(Error::Tensor(diffcore::TensorError::Shape {
            op: "ode_derivative",
            left: state.shape().to_vec(),
            right: wa.shape().to_vec(),
        }));
    }
    let depth_channel = Tensor::filled(&[b, 1, l], depth);
    let h = tape.conv1d(&tape.concat(&[state, &depth_channel], 1)?, wa)?;
    let h = tape.tanh(&h)?;
    Ok(tape.conv1d(&tape.concat(&[&h, &depth_channel], 1)?, wb)?)
}

/// Explicit Euler: `state ← state + step · f(state, D)` with `D` starting
/// at `d_start` and advancing by `step`.
pub fn euler_integrate<F>(tape: &Tape, state0: &Tensor, cfg: &OdeSolverConfig, mut field: F) -> Result<Tensor>
where
    F: FnMut(&Tape, &Tensor, f64) -> Result<Tensor>,
{
    let steps = cfg.steps()?;
    let mut state = state0.clone();
    for i in 0..steps {
        let depth = cfg.d_start + i as f64 * cfg.step;
        let g = field(tape, &state, depth)?;
        state = tape.add(&state, &tape.scale(&g, cfg.step)?)?;
    }
    Ok(state)
}

fn heads(tape: &Tape, params: &ParamSet, features: &Tensor) -> Result<(Tensor, Tensor)> {
    let mean = nn::linear(tape, params, "head.mean", features)?;
    let raw = nn::linear(tape, params, "head.std", features)?;
    Ok((mean, positive_std(tape, &raw)?))
}

/// Lift, integrate and map to `(mean, std)`, each `[t×p]`.
pub fn decode_npode(tape: &Tape, params: &ParamSet, cfg: &DecoderConfig, w: &Tensor) -> Result<(Tensor, Tensor)> {
    let (t, l) = match w.shape() {
        [t, l] if *l == cfg.input_width() => (*t, *l),
        other => {
            return Err(Error::Contract(format!(
                "decoder input must be [t×{}], got {other:?}",
                cfg.input_width()
            )))
        }
    };
    let signal = tape.reshape(w, &[t, 1, l])?;
    let state0 = tape.conv1d(&signal, params.get("ode.lift")?)?;
    let wa = params.get("ode.a")?;
    let wb = params.get("ode.b")?;
    let last = euler_integrate(tape, &state0, &cfg.solver, |tape, s, d| ode_derivative(tape, wa, wb, s, d))?;
    let flat = tape.reshape(&last, &[t, cfg.channels * l])?;
    heads(tape, params, &flat)
}

/// Stacked FC layers with ReLU, then the output heads.
pub fn decode_mlp(tape: &Tape, params: &ParamSet, cfg: &DecoderConfig, w: &Tensor) -> Result<(Tensor, Tensor)> {
    if w.rank() != 2 || w.shape()[1] != cfg.input_width() {
        return Err(Error::Contract(format!(
            "decoder input must be [t×{}], got {:?}",
            cfg.input_width(),
            w.shape()
        )));
    }
    let h = nn::mlp(tape, params, "mlp", cfg.mlp_layers, w, Activation::After)?;
    heads(tape, params, &h)
}

pub fn decode(tape: &Tape, params: &ParamSet, cfg: &DecoderConfig, w: &Tensor) -> Result<(Tensor, Tensor)> {
    match cfg.kind {
        DecoderKind::Npode => decode_npode(tape, params, cfg, w),
        DecoderKind::Mlp => decode_mlp(tape, params, cfg, w),
    }
}

// ---------------------------------------------------------------------------
// Weight counts

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamRow {
    pub layer: String,
    /// Weight shape as listed in the report, stride included for convs.
    pub shape: Vec<usize>,
    pub count: usize,
}

/// Weight-only decoder size (biases and output heads excluded).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamReport {
    pub decoder: DecoderKind,
    pub rows: Vec<ParamRow>,
    pub total: usize,
}

impl ParamReport {
    pub fn to_text(&self) -> String {
        let title = match self.decoder {
            DecoderKind::Npode => "NP-ODE decoder",
            DecoderKind::Mlp => "NPs decoder",
        };
        let mut out = format!("{title}\n");
        let _ = writeln!(out, "  {:<14} {:<18} {:>10}", "layer", "shape", "count");
        for r in &self.rows {
            let _ = writeln!(out, "  {:<14} {:<18} {:>10}", r.layer, shape_label(&r.shape), r.count);
        }
        let _ = writeln!(out, "  {:<14} {:<18} {:>10}", "total", "", self.total);
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,shape,count\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},\"{}\",{}", r.layer, shape_label(&r.shape), r.count);
        }
        let _ = writeln!(out, "total,,{}", self.total);
        out
    }
}

fn shape_label(shape: &[usize]) -> String {
    let parts: Vec<String> = shape.iter().map(usize::to_string).collect();
    format!("({})", parts.join(","))
}

/// Counts decoder weights present in `params`.
pub fn count_parameters(params: &ParamSet, cfg: &DecoderConfig) -> Result<ParamReport> {
    let mut rows = Vec::new();
    match cfg.kind {
        DecoderKind::Npode => {
            for (i, name) in ["ode.lift", "ode.a", "ode.b"].iter().enumerate() {
                let w = params.get(name)?;
                let mut shape = w.shape().to_vec();
                shape.push(1);
                rows.push(ParamRow { layer: format!("Conv layer {}", i + 1), shape, count: w.len() });
            }
        }
        DecoderKind::Mlp => {
            for i in 0..cfg.mlp_layers {
                let w = params.get(&format!("mlp.{i}.w"))?;
                rows.push(ParamRow {
                    layer: format!("FC layer {}", i + 1),
                    shape: w.shape().to_vec(),
                    count: w.len(),
                });
            }
        }
    }
    let total = rows.iter().map(|r| r.count).sum();
    Ok(ParamReport { decoder: cfg.kind, rows, total })
}
