//! Named parameter storage and the fully connected building blocks.

use std::collections::BTreeMap;

use diffcore::{Gradients, Rng, Tape, Tensor};

use crate::error::{Error, Result};

/// Learnable tensors keyed by stable dotted names (`det.0.w`, `ode.lift`, …).
///
/// Iteration order is the lexicographic name order, which keeps
/// serialization and optimizer updates deterministic.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    entries: BTreeMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.entries.insert(name.into(), t.detach());
    }

    /// Like [`ParamSet::insert`] but keeps any tape attachment of `t`, so a
    /// single tensor can be made differentiable on its own.
    pub fn replace(&mut self, name: &str, t: Tensor) -> Result<()> {
        let current = self.get(name)?;
        if current.shape() != t.shape() {
            return Err(Error::Contract(format!(
                "parameter {name:?} has shape {:?}, replacement has {:?}",
                current.shape(),
                t.shape()
            )));
        }
        self.entries.insert(name.to_string(), t);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::Contract(format!("missing parameter {name:?}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Total number of scalars.
    pub fn scalar_count(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    /// Copy whose tensors are leaves on `tape`.
    pub fn bind(&self, tape: &Tape) -> ParamSet {
        let entries = self.entries.iter().map(|(k, v)| (k.clone(), tape.var(v))).collect();
        ParamSet { entries }
    }

    /// Gradient for every parameter of a bound set, zeros where none flowed.
    pub fn gradients(&self, grads: &Gradients) -> BTreeMap<String, Tensor> {
        self.entries.iter().map(|(k, v)| (k.clone(), grads.wrt(v))).collect()
    }

    /// Replaces a tensor's values, keeping its shape.
    pub fn set_values(&mut self, name: &str, values: Vec<f64>) -> Result<()> {
        let current = self.get(name)?;
        let t = Tensor::new(current.shape().to_vec(), values)?;
        self.entries.insert(name.to_string(), t);
        Ok(())
    }
}

/// `N(0, 1/fan_in)` weights.
pub fn init_weight(rng: &mut Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let n: usize = shape.iter().product();
    let std = 1.0 / (fan_in.max(1) as f64).sqrt();
    let values = rng.normals(n).into_iter().map(|v| v * std).collect();
    Tensor::new(shape.to_vec(), values).expect("shape product matches")
}

/// Registers `{prefix}.w [in×out]` and, if requested, a zero `{prefix}.b [out]`.
pub fn init_linear(params: &mut ParamSet, rng: &mut Rng, prefix: &str, fan_in: usize, fan_out: usize, bias: bool) {
    params.insert(format!("{prefix}.w"), init_weight(rng, &[fan_in, fan_out], fan_in));
    if bias {
        params.insert(format!("{prefix}.b"), Tensor::zeros(&[fan_out]));
    }
}

/// Registers `{prefix}.{i}` layers for the given widths.
pub fn init_mlp(params: &mut ParamSet, rng: &mut Rng, prefix: &str, widths: &[usize]) {
    for (i, w) in widths.windows(2).enumerate() {
        init_linear(params, rng, &format!("{prefix}.{i}"), w[0], w[1], true);
    }
}

/// `x·W (+ b)` for `x [r×in]`.
pub fn linear(tape: &Tape, params: &ParamSet, prefix: &str, x: &Tensor) -> Result<Tensor> {
    let w = params.get(&format!("{prefix}.w"))?;
    let out = tape.matmul(x, w)?;
    match params.entries.get(&format!("{prefix}.b")) {
        Some(b) => Ok(tape.add_bias(&out, b)?),
        None => Ok(out),
    }
}

/// Where ReLU is applied inside an [`mlp`] stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    /// Between consecutive layers, output left linear.
    Between,
    /// After every layer, including the last.
    After,
}

/// Stacked `{prefix}.{i}` layers with ReLU.
pub fn mlp(tape: &Tape, params: &ParamSet, prefix: &str, layers: usize, x: &Tensor, act: Activation) -> Result<Tensor> {
    let mut h = x.clone();
    for i in 0..layers {
        h = linear(tape, params, &format!("{prefix}.{i}"), &h)?;
        if i + 1 < layers || act == Activation::After {
            h = tape.relu(&h)?;
        }
    }
    Ok(h)
}
