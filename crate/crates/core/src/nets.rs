//! MLP definitions shared by the four networks in play: the generator pair
//! (encoder, decoder), the labeler that supplies soft targets, and the
//! compact student. Also the softmax probability map and flat-text model
//! serialization.

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use rand::distributions::{Distribution, Uniform};
use rand::rngs::StdRng;
use rand::SeedableRng;

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        };
        f.write_str(s)
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::Parse(format!("unknown activation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `[out_dim, in_dim]` weight matrix.
    pub weight: Tensor,
    /// `[out_dim]` bias vector.
    pub bias: Tensor,
    pub activation: Activation,
}

/// Layer dimensions plus hidden activations; the final activation is always
/// identity so outputs are unconstrained logits/coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpSpec {
    /// `dims[0]` is the input dim, `dims.last()` the output dim.
    pub dims: Vec<usize>,
    /// One activation per layer (`dims.len() - 1` entries).
    pub activations: Vec<Activation>,
}

impl MlpSpec {
    pub fn new(dims: Vec<usize>, activations: Vec<Activation>) -> Result<Self> {
        if dims.len() < 2 || dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArgument(format!(
                "mlp needs at least one layer of positive dims, got {dims:?}"
            )));
        }
        if activations.len() != dims.len() - 1 {
            return Err(Error::InvalidArgument(format!(
                "{} dims require {} activations, got {}",
                dims.len(),
                dims.len() - 1,
                activations.len()
            )));
        }
        if *activations.last().unwrap() != Activation::Identity {
            return Err(Error::InvalidArgument(
                "final activation must be identity".into(),
            ));
        }
        Ok(MlpSpec { dims, activations })
    }

    /// Hidden layers all `act`, identity output.
    pub fn with_hidden(dims: Vec<usize>, act: Activation) -> Result<Self> {
        let n = dims.len().saturating_sub(1);
        let mut activations = vec![act; n];
        if let Some(last) = activations.last_mut() {
            *last = Activation::Identity;
        }
        MlpSpec::new(dims, activations)
    }

    pub fn encoder(ambient_dim: usize, latent_dim: usize) -> Self {
        MlpSpec::with_hidden(vec![ambient_dim, 32, latent_dim], Activation::Tanh).unwrap()
    }

    pub fn decoder(latent_dim: usize, ambient_dim: usize) -> Self {
        MlpSpec::with_hidden(vec![latent_dim, 32, ambient_dim], Activation::Tanh).unwrap()
    }

    pub fn labeler(ambient_dim: usize, classes: usize) -> Self {
        MlpSpec::with_hidden(vec![ambient_dim, 64, 64, classes], Activation::Relu).unwrap()
    }

    /// Student is deliberately smaller than the labeler.
    pub fn student(ambient_dim: usize, classes: usize) -> Self {
        MlpSpec::with_hidden(vec![ambient_dim, 16, classes], Activation::Relu).unwrap()
    }
}

/// Parameters of one MLP. Immutable by convention after training; cheap to
/// clone and safe to share read-only across parallel runs.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
    pub input_dim: usize,
    pub output_dim: usize,
}

impl MlpParams {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("mlp needs at least one layer".into()));
        }
        let mut prev_out = None;
        for (i, layer) in layers.iter().enumerate() {
            let shape = layer.weight.shape();
            if shape.len() != 2 {
                return Err(Error::InvalidArgument(format!(
                    "layer {i} weight must be a matrix, got shape {shape:?}"
                )));
            }
            let (out, inp) = (shape[0], shape[1]);
            if layer.bias.shape() != [out] {
                return Err(Error::ShapeMismatch {
                    op: "mlp-layer-bias",
                    lhs: vec![out],
                    rhs: layer.bias.shape().to_vec(),
                });
            }
            if let Some(p) = prev_out {
                if p != inp {
                    return Err(Error::ShapeMismatch {
                        op: "mlp-layer-chain",
                        lhs: vec![p],
                        rhs: vec![inp],
                    });
                }
            }
            prev_out = Some(out);
        }
        if layers.last().unwrap().activation != Activation::Identity {
            return Err(Error::InvalidArgument(
                "final activation must be identity".into(),
            ));
        }
        let input_dim = layers[0].weight.shape()[1];
        let output_dim = layers.last().unwrap().weight.shape()[0];
        Ok(MlpParams { layers, input_dim, output_dim })
    }

    pub fn spec(&self) -> MlpSpec {
        let mut dims = vec![self.input_dim];
        dims.extend(self.layers.iter().map(|l| l.weight.shape()[0]));
        let activations = self.layers.iter().map(|l| l.activation).collect();
        MlpSpec { dims, activations }
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Flatten all weights and biases into one vector (layer order, weight
    /// then bias). Used by finite-difference checks and optimizers.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(l.weight.data());
            out.extend_from_slice(l.bias.data());
        }
        out
    }

    /// Rebuild params with the same shapes from a flat vector.
    pub fn unflatten(&self, flat: &[f64]) -> Result<MlpParams> {
        if flat.len() != self.num_params() {
            return Err(Error::InvalidArgument(format!(
                "expected {} params, got {}",
                self.num_params(),
                flat.len()
            )));
        }
        let mut layers = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for l in &self.layers {
            let wlen = l.weight.len();
            let blen = l.bias.len();
            let weight = Tensor::new(l.weight.shape().to_vec(), flat[off..off + wlen].to_vec())?;
            off += wlen;
            let bias = Tensor::new(l.bias.shape().to_vec(), flat[off..off + blen].to_vec())?;
            off += blen;
            layers.push(Layer { weight, bias, activation: l.activation });
        }
        MlpParams::new(layers)
    }
}

/// Glorot-uniform initialization: weights ~ U(-a, a) with
/// a = sqrt(6 / (fan_in + fan_out)), zero biases. Deterministic per seed.
pub fn init_params(spec: &MlpSpec, seed: u64) -> Result<MlpParams> {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut layers = Vec::with_capacity(spec.activations.len());
    for (i, &activation) in spec.activations.iter().enumerate() {
        let (fan_in, fan_out) = (spec.dims[i], spec.dims[i + 1]);
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let dist = Uniform::new_inclusive(-a, a);
        let wdata: Vec<f64> = (0..fan_in * fan_out).map(|_| dist.sample(&mut rng)).collect();
        layers.push(Layer {
            weight: Tensor::matrix(fan_out, fan_in, wdata)?,
            bias: Tensor::zeros(&[fan_out]),
            activation,
        });
    }
    MlpParams::new(layers)
}

/// Forward pass without a tape.
pub fn mlp_apply(params: &MlpParams, x: &Tensor) -> Result<Tensor> {
    if x.shape() != [params.input_dim] {
        return Err(Error::ShapeMismatch {
            op: "mlp-apply",
            lhs: vec![params.input_dim],
            rhs: x.shape().to_vec(),
        });
    }
    let mut h = x.clone();
    for layer in &params.layers {
        let pre = tensor::add(&tensor::matmul(&layer.weight, &h)?, &layer.bias)?;
        h = match layer.activation {
            Activation::Tanh => tensor::tanh(&pre),
            Activation::Relu => tensor::relu(&pre),
            Activation::Identity => pre,
        };
    }
    Ok(h)
}

/// Whether taped parameters should receive gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamMode {
    Trainable,
    Frozen,
}

/// Parameter nodes of one MLP placed on a tape; reusable across many
/// forward passes on the same tape (e.g. every sample of a minibatch).
#[derive(Debug, Clone)]
pub struct TapedParams {
    /// `(weight, bias)` node per layer; gradient-tracked only in
    /// [`ParamMode::Trainable`].
    pub param_nodes: Vec<(NodeId, NodeId)>,
    activations: Vec<Activation>,
    input_dim: usize,
}

/// Put each layer's weight and bias on the tape once.
pub fn params_on_tape(params: &MlpParams, tape: &mut Tape, mode: ParamMode) -> TapedParams {
    let mut param_nodes = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        let (w, b) = match mode {
            ParamMode::Trainable => (
                tape.leaf(layer.weight.clone()),
                tape.leaf(layer.bias.clone()),
            ),
            ParamMode::Frozen => (
                tape.constant(layer.weight.clone()),
                tape.constant(layer.bias.clone()),
            ),
        };
        param_nodes.push((w, b));
    }
    TapedParams {
        param_nodes,
        activations: params.layers.iter().map(|l| l.activation).collect(),
        input_dim: params.input_dim,
    }
}

/// Forward pass through previously placed parameter nodes.
pub fn forward_on_tape(taped: &TapedParams, x: NodeId, tape: &mut Tape) -> Result<NodeId> {
    if tape.value(x).shape() != [taped.input_dim] {
        return Err(Error::ShapeMismatch {
            op: "mlp-apply",
            lhs: vec![taped.input_dim],
            rhs: tape.value(x).shape().to_vec(),
        });
    }
    let mut h = x;
    for ((w, b), &act) in taped.param_nodes.iter().zip(&taped.activations) {
        let wx = tape.matmul(*w, h)?;
        let pre = tape.add(wx, *b)?;
        h = match act {
            Activation::Tanh => tape.tanh(pre)?,
            Activation::Relu => tape.relu(pre)?,
            Activation::Identity => pre,
        };
    }
    Ok(h)
}

/// Node handles from a taped forward pass.
#[derive(Debug, Clone)]
pub struct TapedMlp {
    /// `(weight, bias)` node per layer; gradient-tracked only in
    /// [`ParamMode::Trainable`].
    pub param_nodes: Vec<(NodeId, NodeId)>,
    pub output: NodeId,
}

/// Forward pass recorded on a tape. The output is differentiable w.r.t. the
/// input node and, when `mode` is `Trainable`, w.r.t. every layer parameter.
/// Values agree bit-exactly with [`mlp_apply`].
pub fn mlp_apply_tape(
    params: &MlpParams,
    x: NodeId,
    tape: &mut Tape,
    mode: ParamMode,
) -> Result<TapedMlp> {
    let taped = params_on_tape(params, tape, mode);
    let output = forward_on_tape(&taped, x, tape)?;
    Ok(TapedMlp { param_nodes: taped.param_nodes, output })
}

/// A probability vector over the K classes, together with the temperature
/// that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector {
    probs: Vec<f64>,
    temperature: f64,
}

impl ProbVector {
    pub fn new(probs: Vec<f64>, temperature: f64) -> Result<Self> {
        if probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::NumericFailure(format!(
                "probabilities must be finite and non-negative: {probs:?}"
            )));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::NumericFailure(format!(
                "probabilities sum to {total}, expected 1"
            )));
        }
        Ok(ProbVector { probs, temperature })
    }

    pub fn one_hot(class: usize, classes: usize) -> Result<Self> {
        if class >= classes {
            return Err(Error::InvalidArgument(format!(
                "class {class} out of range for {classes} classes"
            )));
        }
        let mut probs = vec![0.0; classes];
        probs[class] = 1.0;
        Ok(ProbVector { probs, temperature: 1.0 })
    }

    pub fn uniform(classes: usize) -> Self {
        ProbVector {
            probs: vec![1.0 / classes as f64; classes],
            temperature: 1.0,
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Argmax with ties broken toward the smallest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.probs)
    }
}

/// Ties broken toward the smallest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Temperature-scaled softmax of a logits vector: `softmax(logits / t)`,
/// max-stabilized. Preserves the argmax for any positive temperature.
pub fn softmax_probs(logits: &Tensor, temperature: f64) -> Result<ProbVector> {
    if temperature <= 0.0 || !temperature.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let scaled = tensor::scale(logits, 1.0 / temperature);
    let probs = tensor::softmax(&scaled);
    ProbVector::new(probs.data().to_vec(), temperature)
}

const MODEL_FLOAT_DIGITS: usize = 16; // 17 significant digits in {:.16e}

fn fmt_f64(v: f64) -> String {
    format!("{v:.*e}", MODEL_FLOAT_DIGITS)
}

/// Write a model in the flat text format: a `name`/`dims`/`activations`
/// header, then one block per layer with row-major weight rows followed by
/// the bias row. Values carry 17 significant digits so the round trip is
/// bit-exact.
pub fn write_model<W: Write>(w: &mut W, name: &str, params: &MlpParams) -> Result<()> {
    let spec = params.spec();
    writeln!(w, "name {name}")?;
    let dims: Vec<String> = spec.dims.iter().map(|d| d.to_string()).collect();
    writeln!(w, "dims {}", dims.join(" "))?;
    let acts: Vec<String> = spec.activations.iter().map(|a| a.to_string()).collect();
    writeln!(w, "activations {}", acts.join(" "))?;
    for (i, layer) in params.layers.iter().enumerate() {
        writeln!(w, "layer {i}")?;
        let (out, inp) = (layer.weight.shape()[0], layer.weight.shape()[1]);
        for r in 0..out {
            let row: Vec<String> = layer.weight.data()[r * inp..(r + 1) * inp]
                .iter()
                .map(|&v| fmt_f64(v))
                .collect();
            writeln!(w, "{}", row.join(" "))?;
        }
        let bias: Vec<String> = layer.bias.data().iter().map(|&v| fmt_f64(v)).collect();
        writeln!(w, "{}", bias.join(" "))?;
    }
    Ok(())
}

pub fn save_model(path: &Path, name: &str, params: &MlpParams) -> Result<()> {
    let mut buf = Vec::new();
    write_model(&mut buf, name, params)?;
    std::fs::write(path, buf)?;
    Ok(())
}

/// Inverse of [`write_model`].
pub fn read_model<R: BufRead>(r: &mut R) -> Result<(String, MlpParams)> {
    let mut lines = Vec::new();
    for line in r.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            lines.push(line);
        }
    }
    let mut it = lines.iter();
    let name = expect_prefix(it.next(), "name")?.to_string();
    let dims_line = expect_prefix(it.next(), "dims")?;
    let dims: Vec<usize> = parse_fields(dims_line, "dims")?;
    let acts_line = expect_prefix(it.next(), "activations")?;
    let activations: Vec<Activation> = acts_line
        .split_whitespace()
        .map(Activation::from_str)
        .collect::<Result<_>>()?;
    let spec = MlpSpec::new(dims, activations)?;

    let mut layers = Vec::new();
    for (i, &activation) in spec.activations.iter().enumerate() {
        let header = expect_prefix(it.next(), "layer")?;
        let idx: usize = header
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("bad layer index `{header}`")))?;
        if idx != i {
            return Err(Error::Parse(format!("expected layer {i}, found {idx}")));
        }
        let (inp, out) = (spec.dims[i], spec.dims[i + 1]);
        let mut wdata = Vec::with_capacity(inp * out);
        for _ in 0..out {
            let row = it
                .next()
                .ok_or_else(|| Error::Parse("truncated weight block".into()))?;
            let vals: Vec<f64> = parse_fields(row, "weight row")?;
            if vals.len() != inp {
                return Err(Error::Parse(format!(
                    "weight row has {} values, expected {inp}",
                    vals.len()
                )));
            }
            wdata.extend(vals);
        }
        let brow = it
            .next()
            .ok_or_else(|| Error::Parse("truncated bias row".into()))?;
        let bias: Vec<f64> = parse_fields(brow, "bias row")?;
        if bias.len() != out {
            return Err(Error::Parse(format!(
                "bias row has {} values, expected {out}",
                bias.len()
            )));
        }
        layers.push(Layer {
            weight: Tensor::matrix(out, inp, wdata)?,
            bias: Tensor::vector(bias),
            activation,
        });
    }
    Ok((name, MlpParams::new(layers)?))
}

pub fn load_model(path: &Path) -> Result<(String, MlpParams)> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_model(&mut std::io::BufReader::new(file))
}

fn expect_prefix<'a>(line: Option<&'a String>, prefix: &str) -> Result<&'a str> {
    let line = line.ok_or_else(|| Error::Parse(format!("missing `{prefix}` line")))?;
    line.strip_prefix(prefix)
        .map(str::trim)
        .ok_or_else(|| Error::Parse(format!("expected `{prefix} ...`, found `{line}`")))
}

fn parse_fields<T: FromStr>(line: &str, what: &str) -> Result<Vec<T>> {
    line.split_whitespace()
        .map(|tok| {
            tok.parse::<T>()
                .map_err(|_| Error::Parse(format!("bad {what} value `{tok}`")))
        })
        .collect()
}
