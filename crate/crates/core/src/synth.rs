//! Synthetic ground-truth world: instances concentrated near a
//! low-dimensional manifold (the image of a frozen random embedding of a
//! Gaussian latent), with an analytically known conditional label
//! distribution. Every population quantity downstream is computable exactly
//! or by dense Monte Carlo because the generative process is fully known.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::nets::{self, MlpParams, MlpSpec, ProbVector};
use crate::seeding::derive_seed;
use crate::tensor::Tensor;
use crate::Activation;

/// Floor applied to the label temperature so the zero-temperature limit
/// (one-hot conditionals) stays computable.
pub const TEMPERATURE_FLOOR: f64 = 1e-6;

/// Gain on the label oracle's output layer after Glorot init. Sharpens the
/// conditionals so the Bayes error of the default task is low enough for a
/// well-trained labeler to be meaningfully "high quality".
const ORACLE_LOGIT_GAIN: f64 = 16.0;

/// Configuration of a synthetic task; see [`ManifoldTask::new`].
#[derive(Debug, Clone, PartialEq)]
pub struct TaskConfig {
    pub latent_dim: usize,
    pub ambient_dim: usize,
    pub classes: usize,
    /// Std of isotropic Gaussian noise added in ambient space.
    pub ambient_noise: f64,
    pub label_temperature: f64,
    /// 0 keeps the latent prior untouched; larger values thin classes by
    /// rank, producing a long-tail label distribution.
    pub class_prior_exponent: f64,
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig {
            latent_dim: 2,
            ambient_dim: 16,
            classes: 3,
            ambient_noise: 0.01,
            label_temperature: 0.5,
            class_prior_exponent: 0.0,
        }
    }
}

/// The data-generating process: a standard normal latent prior on R^d, a
/// frozen random embedding into R^D, and a frozen random label oracle on the
/// latent space. Neither frozen net is ever trained.
#[derive(Debug, Clone)]
pub struct ManifoldTask {
    pub latent_dim: usize,
    pub ambient_dim: usize,
    pub classes: usize,
    pub embed: MlpParams,
    pub label_oracle: MlpParams,
    pub label_temperature: f64,
    pub ambient_noise: f64,
    pub class_prior_exponent: f64,
}

impl ManifoldTask {
    pub fn new(cfg: &TaskConfig, seed: u64) -> Result<Self> {
        if cfg.latent_dim == 0 || cfg.ambient_dim <= cfg.latent_dim {
            return Err(Error::InvalidArgument(format!(
                "need 0 < d < D, got d={} D={}",
                cfg.latent_dim, cfg.ambient_dim
            )));
        }
        if cfg.classes < 2 {
            return Err(Error::InvalidArgument(format!(
                "need K >= 2 classes, got {}",
                cfg.classes
            )));
        }
        if cfg.ambient_noise < 0.0 || cfg.class_prior_exponent < 0.0 {
            return Err(Error::InvalidArgument(
                "noise and prior exponent must be non-negative".into(),
            ));
        }
        let embed_spec =
            MlpSpec::with_hidden(vec![cfg.latent_dim, 32, cfg.ambient_dim], Activation::Tanh)?;
        let embed = nets::init_params(&embed_spec, derive_seed(seed, 0x1))?;
        let oracle_spec =
            MlpSpec::with_hidden(vec![cfg.latent_dim, 16, cfg.classes], Activation::Tanh)?;
        let mut label_oracle = nets::init_params(&oracle_spec, derive_seed(seed, 0x2))?;
        if let Some(last) = label_oracle.layers.last_mut() {
            last.weight = crate::tensor::scale(&last.weight, ORACLE_LOGIT_GAIN);
        }
        Ok(ManifoldTask {
            latent_dim: cfg.latent_dim,
            ambient_dim: cfg.ambient_dim,
            classes: cfg.classes,
            embed,
            label_oracle,
            label_temperature: cfg.label_temperature,
            ambient_noise: cfg.ambient_noise,
            class_prior_exponent: cfg.class_prior_exponent,
        })
    }

    /// Noiseless embedding of a latent point.
    pub fn embed_latent(&self, z: &Tensor) -> Result<Tensor> {
        nets::mlp_apply(&self.embed, z)
    }
}

/// Where a sample came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Original,
    Reconstructed,
    TgtRandom,
    TgtGradient,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Provenance::Original => "original",
            Provenance::Reconstructed => "reconstructed",
            Provenance::TgtRandom => "tgt-random",
            Provenance::TgtGradient => "tgt-gradient",
        };
        f.write_str(s)
    }
}

impl FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "original" => Ok(Provenance::Original),
            "reconstructed" => Ok(Provenance::Reconstructed),
            "tgt-random" => Ok(Provenance::TgtRandom),
            "tgt-gradient" => Ok(Provenance::TgtGradient),
            other => Err(Error::Parse(format!("unknown provenance `{other}`"))),
        }
    }
}

/// A collection of instances with optional labels, optional stored latents,
/// and per-item provenance. Parallel vectors are always equal length.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    instances: Vec<Tensor>,
    labels: Option<Vec<usize>>,
    latents: Option<Vec<Tensor>>,
    provenance: Vec<Provenance>,
}

impl SampleSet {
    pub fn labeled(
        instances: Vec<Tensor>,
        labels: Vec<usize>,
        latents: Option<Vec<Tensor>>,
        provenance: Vec<Provenance>,
    ) -> Result<Self> {
        if labels.len() != instances.len() {
            return Err(Error::SizeMismatch { left: instances.len(), right: labels.len() });
        }
        Self::check_parallel(&instances, latents.as_deref(), &provenance)?;
        Ok(SampleSet { instances, labels: Some(labels), latents, provenance })
    }

    pub fn unlabeled(
        instances: Vec<Tensor>,
        latents: Option<Vec<Tensor>>,
        provenance: Vec<Provenance>,
    ) -> Result<Self> {
        Self::check_parallel(&instances, latents.as_deref(), &provenance)?;
        Ok(SampleSet { instances, labels: None, latents, provenance })
    }

    fn check_parallel(
        instances: &[Tensor],
        latents: Option<&[Tensor]>,
        provenance: &[Provenance],
    ) -> Result<()> {
        if provenance.len() != instances.len() {
            return Err(Error::SizeMismatch {
                left: instances.len(),
                right: provenance.len(),
            });
        }
        if let Some(lat) = latents {
            if lat.len() != instances.len() {
                return Err(Error::SizeMismatch { left: instances.len(), right: lat.len() });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn is_labeled(&self) -> bool {
        self.labels.is_some()
    }

    pub fn instances(&self) -> &[Tensor] {
        &self.instances
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn latents(&self) -> Option<&[Tensor]> {
        self.latents.as_deref()
    }

    pub fn provenance(&self) -> &[Provenance] {
        &self.provenance
    }

    /// Drop labels (e.g. to feed a labeled set into unlabeled-only paths).
    pub fn without_labels(&self) -> SampleSet {
        SampleSet {
            instances: self.instances.clone(),
            labels: None,
            latents: self.latents.clone(),
            provenance: self.provenance.clone(),
        }
    }

    /// Subset by index, preserving order. Indices must be in range.
    pub fn subset(&self, indices: &[usize]) -> SampleSet {
        SampleSet {
            instances: indices.iter().map(|&i| self.instances[i].clone()).collect(),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
            latents: self
                .latents
                .as_ref()
                .map(|z| indices.iter().map(|&i| z[i].clone()).collect()),
            provenance: indices.iter().map(|&i| self.provenance[i]).collect(),
        }
    }
}

fn draw_standard_normal(rng: &mut StdRng, dim: usize) -> Tensor {
    let data: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::vector(data)
}

/// Draw a class index from a probability vector by inverse CDF.
pub fn draw_label(cond: &ProbVector, rng: &mut StdRng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (k, &p) in cond.probs().iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    cond.len() - 1
}

/// Accept/reject one latent draw against the long-tail prior. Returns the
/// accepted latent and its oracle-argmax class.
fn draw_latent(task: &ManifoldTask, rng: &mut StdRng) -> Result<Tensor> {
    loop {
        let z = draw_standard_normal(rng, task.latent_dim);
        if task.class_prior_exponent == 0.0 {
            return Ok(z);
        }
        // Classes are ranked by index: class k keeps rank (k+1)^(-exponent)
        // of its mass. Conditionals given z are untouched.
        let logits = nets::mlp_apply(&task.label_oracle, &z)?;
        let class = nets::argmax(logits.data());
        let accept = ((class + 1) as f64).powf(-task.class_prior_exponent);
        if rng.gen::<f64>() < accept {
            return Ok(z);
        }
    }
}

fn draw_instance(task: &ManifoldTask, z: &Tensor, rng: &mut StdRng) -> Result<Tensor> {
    let clean = task.embed_latent(z)?;
    if task.ambient_noise == 0.0 {
        return Ok(clean);
    }
    let noise = draw_standard_normal(rng, task.ambient_dim);
    crate::tensor::add(&clean, &crate::tensor::scale(&noise, task.ambient_noise))
}

/// n labeled samples: z from the (possibly reweighted) latent prior,
/// x = embed(z) + noise, y from the exact conditional at z. Latents stored.
pub fn sample_labeled(task: &ManifoldTask, n: usize, seed: u64) -> Result<SampleSet> {
    if n == 0 {
        return Err(Error::InvalidArgument("need n >= 1 samples".into()));
    }
    let mut rng = StdRng::seed_from_u64(seed);
    let mut instances = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut latents = Vec::with_capacity(n);
    for _ in 0..n {
        let z = draw_latent(task, &mut rng)?;
        instances.push(draw_instance(task, &z, &mut rng)?);
        let cond = true_conditional(task, &z)?;
        labels.push(draw_label(&cond, &mut rng));
        latents.push(z);
    }
    SampleSet::labeled(
        instances,
        labels,
        Some(latents),
        vec![Provenance::Original; n],
    )
}

/// Unlabeled counterpart of [`sample_labeled`].
pub fn sample_unlabeled(task: &ManifoldTask, m: usize, seed: u64) -> Result<SampleSet> {
    if m == 0 {
        return Err(Error::InvalidArgument("need m >= 1 samples".into()));
    }
    let mut rng = StdRng::seed_from_u64(seed);
    let mut instances = Vec::with_capacity(m);
    let mut latents = Vec::with_capacity(m);
    for _ in 0..m {
        let z = draw_latent(task, &mut rng)?;
        instances.push(draw_instance(task, &z, &mut rng)?);
        latents.push(z);
    }
    SampleSet::unlabeled(instances, Some(latents), vec![Provenance::Original; m])
}

/// Exact conditional label distribution at latent z:
/// softmax(oracle(z) / max(temperature, floor)).
pub fn true_conditional(task: &ManifoldTask, z: &Tensor) -> Result<ProbVector> {
    if z.shape() != [task.latent_dim] {
        return Err(Error::ShapeMismatch {
            op: "true-conditional",
            lhs: vec![task.latent_dim],
            rhs: z.shape().to_vec(),
        });
    }
    let logits = nets::mlp_apply(&task.label_oracle, z)?;
    nets::softmax_probs(&logits, task.label_temperature.max(TEMPERATURE_FLOOR))
}

/// Density ratio p_prior(z) / p_perturbed(z) for a point produced by adding
/// N(0, sigma^2 I) noise to a prior draw in latent space. Both densities are
/// Gaussian, so the ratio is closed-form:
/// (1+sigma^2)^(d/2) * exp(-|z|^2 sigma^2 / (2 (1+sigma^2))).
///
/// The anchor latent does not enter: once the prior draw is marginalized
/// out, the perturbed marginal is N(0, (1+sigma^2) I) regardless of where
/// the perturbation started.
pub fn latent_density_ratio(
    task: &ManifoldTask,
    z_original: &Tensor,
    z_perturbed: &Tensor,
    sigma: f64,
) -> Result<f64> {
    if sigma <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "perturbation scale must be positive, got {sigma}"
        )));
    }
    for z in [z_original, z_perturbed] {
        if z.shape() != [task.latent_dim] {
            return Err(Error::ShapeMismatch {
                op: "latent-density-ratio",
                lhs: vec![task.latent_dim],
                rhs: z.shape().to_vec(),
            });
        }
    }
    Ok(gaussian_convolution_ratio(z_perturbed.data(), sigma))
}

/// Closed-form ratio used by [`latent_density_ratio`] and the weighted-risk
/// estimator; sigma = 0 yields exactly 1 for every point.
pub fn gaussian_convolution_ratio(z: &[f64], sigma: f64) -> f64 {
    let d = z.len() as f64;
    let s2 = sigma * sigma;
    let norm2: f64 = z.iter().map(|v| v * v).sum();
    (1.0 + s2).powf(d / 2.0) * (-norm2 * s2 / (2.0 * (1.0 + s2))).exp()
}

const CSV_FLOAT_DIGITS: usize = 16;

/// Write a sample set as CSV with columns
/// `provenance,label,z_0..z_{d-1},x_0..x_{D-1}` (label -1 when absent).
/// Requires stored latents. Floats carry 17 significant digits so the round
/// trip through [`read_samples`] is exact.
pub fn write_samples<W: Write>(w: &mut W, set: &SampleSet) -> Result<()> {
    let latents = set.latents().ok_or(Error::MissingLatents)?;
    if set.is_empty() {
        return Err(Error::InvalidArgument("cannot serialize an empty set".into()));
    }
    let d = latents[0].len();
    let ambient = set.instances[0].len();
    let mut header = String::from("provenance,label");
    for j in 0..d {
        header.push_str(&format!(",z_{j}"));
    }
    for j in 0..ambient {
        header.push_str(&format!(",x_{j}"));
    }
    writeln!(w, "{header}")?;
    for i in 0..set.len() {
        let label = set
            .labels()
            .map_or(-1_i64, |labels| labels[i] as i64);
        let mut line = format!("{},{label}", set.provenance[i]);
        for v in latents[i].data() {
            line.push_str(&format!(",{v:.*e}", CSV_FLOAT_DIGITS));
        }
        for v in set.instances[i].data() {
            line.push_str(&format!(",{v:.*e}", CSV_FLOAT_DIGITS));
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

/// Parse a sample set written by [`write_samples`].
pub fn read_samples<R: BufRead>(r: &mut R) -> Result<SampleSet> {
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty sample CSV".into()))??;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 4 || cols[0] != "provenance" || cols[1] != "label" {
        return Err(Error::Parse(format!("bad sample CSV header `{header}`")));
    }
    let d = cols.iter().filter(|c| c.starts_with("z_")).count();
    let ambient = cols.iter().filter(|c| c.starts_with("x_")).count();
    if d == 0 || ambient == 0 || 2 + d + ambient != cols.len() {
        return Err(Error::Parse(format!("bad sample CSV header `{header}`")));
    }

    let mut instances = Vec::new();
    let mut labels: Vec<i64> = Vec::new();
    let mut latents = Vec::new();
    let mut provenance = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            return Err(Error::Parse(format!(
                "row has {} fields, expected {}",
                fields.len(),
                cols.len()
            )));
        }
        provenance.push(Provenance::from_str(fields[0])?);
        labels.push(
            fields[1]
                .parse::<i64>()
                .map_err(|_| Error::Parse(format!("bad label `{}`", fields[1])))?,
        );
        let parse_f = |tok: &str| -> Result<f64> {
            tok.parse::<f64>()
                .map_err(|_| Error::Parse(format!("bad float `{tok}`")))
        };
        let z: Vec<f64> = fields[2..2 + d].iter().map(|t| parse_f(t)).collect::<Result<_>>()?;
        let x: Vec<f64> =
            fields[2 + d..].iter().map(|t| parse_f(t)).collect::<Result<_>>()?;
        latents.push(Tensor::vector(z));
        instances.push(Tensor::vector(x));
    }

    let any_labeled = labels.iter().any(|&l| l >= 0);
    if any_labeled {
        if labels.iter().any(|&l| l < 0) {
            return Err(Error::Parse("mixed labeled and unlabeled rows".into()));
        }
        let labels = labels.into_iter().map(|l| l as usize).collect();
        SampleSet::labeled(instances, labels, Some(latents), provenance)
    } else {
        SampleSet::unlabeled(instances, Some(latents), provenance)
    }
}
