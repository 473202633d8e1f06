use std::collections::HashMap;
use std::io::{Read, Write};

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::channel::{read_exact_or_format, take_f64s, write_f64s};
use crate::error::{Error, Result};

/// Layer widths of one MLP, input first: `{5, 16, 32}` is two affine layers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub name: String,
    pub dims: Vec<usize>,
}

impl MlpSpec {
    pub fn new(name: impl Into<String>, dims: &[usize]) -> Self {
        MlpSpec {
            name: name.into(),
            dims: dims.to_vec(),
        }
    }

    pub fn layers(&self) -> usize {
        self.dims.len().saturating_sub(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum InitScheme {
    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
    #[default]
    GlorotUniform,
    /// Uniform in `±scale`.
    Uniform {
        scale: f64,
    },
    Zeros,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    #[serde(skip)]
    lookup: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet {
            names: Vec::new(),
            tensors: Vec::new(),
            lookup: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) -> usize {
        let name = name.into();
        let idx = self.tensors.len();
        self.lookup.insert(name.clone(), idx);
        self.names.push(name);
        self.tensors.push(t);
        idx
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.lookup.get(name).copied()
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn tensor(&self, index: usize) -> &Tensor {
        &self.tensors[index]
    }

    pub fn tensor_mut(&mut self, index: usize) -> &mut Tensor {
        &mut self.tensors[index]
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Flat coordinate `k` as `(tensor, offset)`.
    pub fn locate(&self, mut k: usize) -> (usize, usize) {
        for (t, tensor) in self.tensors.iter().enumerate() {
            if k < tensor.len() {
                return (t, k);
            }
            k -= tensor.len();
        }
        panic!("coordinate out of range");
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }
}

impl Default for ParamSet {
    fn default() -> Self {
        ParamSet::new()
    }
}

pub fn weight_name(mlp: &str, layer: usize) -> String {
    format!("{mlp}.w{layer}")
}

pub fn bias_name(mlp: &str, layer: usize) -> String {
    format!("{mlp}.b{layer}")
}

/// Weights `dims[k+1] × dims[k]` per layer drawn by `scheme`; biases zero.
pub fn init_params(specs: &[MlpSpec], rng: &mut impl Rng, scheme: InitScheme) -> Result<ParamSet> {
    let mut params = ParamSet::new();
    for spec in specs {
        if spec.dims.len() < 2 || spec.dims.contains(&0) {
            return Err(Error::Dimension(format!(
                "MLP '{}' has invalid dims {:?}",
                spec.name, spec.dims
            )));
        }
        for (layer, pair) in spec.dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = match scheme {
                InitScheme::GlorotUniform => (6.0 / (fan_in + fan_out) as f64).sqrt(),
                InitScheme::Uniform { scale } => scale,
                InitScheme::Zeros => 0.0,
            };
            let data = (0..fan_in * fan_out)
                .map(|_| (2.0 * rng.random::<f64>() - 1.0) * bound)
                .collect();
            params.insert(weight_name(&spec.name, layer), Tensor::from_vec(fan_out, fan_in, data));
            params.insert(bias_name(&spec.name, layer), Tensor::zeros(1, fan_out));
        }
    }
    Ok(params)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
}

/// Records an MLP on the tape: ReLU after every hidden layer, `last` after
/// the output layer.
pub fn mlp_forward(tape: &mut Tape, params: &ParamSet, spec: &MlpSpec, input: Var, last: Activation) -> Result<Var> {
    let mut h = input;
    for layer in 0..spec.layers() {
        let w = params
            .index_of(&weight_name(&spec.name, layer))
            .ok_or_else(|| Error::Dimension(format!("missing weight for {}", spec.name)))?;
        let b = params
            .index_of(&bias_name(&spec.name, layer))
            .ok_or_else(|| Error::Dimension(format!("missing bias for {}", spec.name)))?;
        let wv = tape.param(params, w);
        let bv = tape.param(params, b);
        h = tape.affine(h, wv, bv);
        let act = if layer + 1 == spec.layers() {
            last
        } else {
            Activation::Relu
        };
        h = match act {
            Activation::Identity => h,
            Activation::Relu => tape.relu(h),
            Activation::Sigmoid => tape.sigmoid(h),
        };
    }
    tape.check()?;
    Ok(h)
}

/// Gradient tensors aligned index-for-index with a [`ParamSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Tensor>,
}

impl Gradients {
    pub fn zeros_like(params: &ParamSet) -> Self {
        Gradients {
            tensors: params.tensors.iter().map(|t| Tensor::zeros(t.rows, t.cols)).collect(),
        }
    }

    pub fn coordinate(&self, k: usize) -> f64 {
        let mut k = k;
        for t in &self.tensors {
            if k < t.len() {
                return t.data[k];
            }
            k -= t.len();
        }
        panic!("coordinate out of range");
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for t in &mut self.tensors {
            t.data.iter_mut().for_each(|v| *v *= c);
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.data.iter())
            .fold(0.0_f64, |a, v| a.max(v.abs()))
    }
}

/// Plain gradient descent `ω ← ω - lr·g`.
pub fn apply_step(params: &mut ParamSet, grads: &Gradients, lr: f64) {
    for (t, g) in params.tensors.iter_mut().zip(&grads.tensors) {
        for (w, d) in t.data.iter_mut().zip(&g.data) {
            *w -= lr * d;
        }
    }
}

/// Projected ascent `max(0, dual + lr·bracket)`.
pub fn dual_step(dual: f64, bracket: f64, lr: f64) -> f64 {
    (dual + lr * bracket).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Optimizer {
    #[default]
    Sgd,
    Momentum {
        beta: f64,
    },
    Adam {
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Per-parameter state for the non-SGD update rules.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    kind: Optimizer,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    steps: u64,
}

impl OptimizerState {
    pub fn new(kind: Optimizer, params: &ParamSet) -> Self {
        let zeros = || Gradients::zeros_like(params).tensors;
        OptimizerState {
            kind,
            first: zeros(),
            second: zeros(),
            steps: 0,
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &Gradients, lr: f64) {
        self.steps += 1;
        match self.kind {
            Optimizer::Sgd => apply_step(params, grads, lr),
            Optimizer::Momentum { beta } => {
                for ((t, g), m) in params.tensors.iter_mut().zip(&grads.tensors).zip(&mut self.first) {
                    for ((w, d), v) in t.data.iter_mut().zip(&g.data).zip(&mut m.data) {
                        *v = beta * *v + d;
                        *w -= lr * *v;
                    }
                }
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                let bc1 = 1.0 - beta1.powi(self.steps as i32);
                let bc2 = 1.0 - beta2.powi(self.steps as i32);
                for (((t, g), m), s) in params
                    .tensors
                    .iter_mut()
                    .zip(&grads.tensors)
                    .zip(&mut self.first)
                    .zip(&mut self.second)
                {
                    for (((w, d), m1), m2) in t.data.iter_mut().zip(&g.data).zip(&mut m.data).zip(&mut s.data) {
                        *m1 = beta1 * *m1 + (1.0 - beta1) * d;
                        *m2 = beta2 * *m2 + (1.0 - beta2) * d * d;
                        *w -= lr * (*m1 / bc1) / ((*m2 / bc2).sqrt() + eps);
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdOptions {
    pub probes: usize,
    pub step: f64,
    /// Denominator floor of the relative error, so coordinates with
    /// vanishing gradient compare in absolute terms.
    pub floor: f64,
}

impl Default for FdOptions {
    fn default() -> Self {
        FdOptions {
            probes: 100,
            step: 1e-5,
            floor: 1e-7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdProbe {
    pub coordinate: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

/// Central-difference check of `grads` on randomly chosen coordinates.
/// Returns every probe; the maximum relative error is the headline figure.
pub fn fd_check<F>(
    params: &ParamSet,
    grads: &Gradients,
    mut loss_fn: F,
    opts: &FdOptions,
    rng: &mut impl Rng,
) -> Result<Vec<FdProbe>>
where
    F: FnMut(&ParamSet) -> Result<f64>,
{
    let n = params.num_scalars();
    if n == 0 {
        return Ok(Vec::new());
    }
    let coords: Vec<usize> = (0..n).collect();
    let mut work = params.clone();
    let mut probes = Vec::with_capacity(opts.probes);
    for _ in 0..opts.probes {
        let k = *coords.choose(rng).expect("nonempty");
        let (t, off) = params.locate(k);
        let base = params.tensors[t].data[off];
        work.tensors[t].data[off] = base + opts.step;
        let up = loss_fn(&work)?;
        work.tensors[t].data[off] = base - opts.step;
        let down = loss_fn(&work)?;
        work.tensors[t].data[off] = base;
        let numeric = (up - down) / (2.0 * opts.step);
        let analytic = grads.coordinate(k);
        let denom = analytic.abs().max(numeric.abs()).max(opts.floor);
        probes.push(FdProbe {
            coordinate: k,
            analytic,
            numeric,
            rel_error: (analytic - numeric).abs() / denom,
        });
    }
    Ok(probes)
}

pub fn max_rel_error(probes: &[FdProbe]) -> f64 {
    probes.iter().fold(0.0, |a, p| a.max(p.rel_error))
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"QOSACKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    meta: serde_json::Value,
    tensors: Vec<(String, usize, usize)>,
}

/// Layout: magic, u32 version, u64 header length, JSON header (caller
/// metadata plus tensor names and shapes), then every tensor's values as
/// little-endian `f64` in header order.
pub fn write_checkpoint(w: &mut impl Write, meta: &serde_json::Value, params: &ParamSet) -> Result<()> {
    let header = CheckpointHeader {
        meta: meta.clone(),
        tensors: params.iter().map(|(n, t)| (n.to_string(), t.rows, t.cols)).collect(),
    };
    let bytes = serde_json::to_vec(&header)?;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(bytes.len() as u64).to_le_bytes())?;
    w.write_all(&bytes)?;
    for (_, t) in params.iter() {
        write_f64s(w, &t.data)?;
    }
    Ok(())
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<(serde_json::Value, ParamSet)> {
    let mut magic = [0u8; 8];
    read_exact_or_format(r, &mut magic, "magic")?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint file".into()));
    }
    let mut word = [0u8; 4];
    read_exact_or_format(r, &mut word, "version")?;
    let version = u32::from_le_bytes(word);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let mut len = [0u8; 8];
    read_exact_or_format(r, &mut len, "header length")?;
    let mut header = vec![0u8; u64::from_le_bytes(len) as usize];
    read_exact_or_format(r, &mut header, "header")?;
    let header: CheckpointHeader = serde_json::from_slice(&header)?;
    let mut params = ParamSet::new();
    for (name, rows, cols) in header.tensors {
        let mut raw = vec![0u8; rows * cols * 8];
        read_exact_or_format(r, &mut raw, "tensor data")?;
        let mut off = 0;
        let data = take_f64s(&raw, &mut off, rows * cols)?;
        params.insert(name, Tensor::from_vec(rows, cols, data));
    }
    if !params.all_finite() {
        return Err(Error::Format("checkpoint contains non-finite parameters".into()));
    }
    Ok((header.meta, params))
}

/// Rebuilds the name index after deserializing a [`ParamSet`] with serde.
pub fn reindex(params: &mut ParamSet) {
    params.lookup = params.names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
}
