//! Sample generation in the generator's latent space: isotropic random
//! perturbation and gradient ascent on the student-teacher disagreement.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

use crate::autodiff::Tape;
use crate::distill::distill_loss_node;
use crate::error::{Error, Result};
use crate::nets::{self, MlpParams, ParamMode};
use crate::seeding::derive_seed2;
use crate::synth::{Provenance, SampleSet};
use crate::tensor::{self, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExploreMode {
    Random,
    Gradient,
}

/// Knobs for generated-sample exploration. In `Random` mode only `sigma`
/// matters; in `Gradient` mode the walk takes `steps` ascent steps of size
/// `eta`, with `sigma` used only when `pre_jitter` asks for an initial
/// random offset.
#[derive(Debug, Clone, PartialEq)]
pub struct ExploreConfig {
    pub mode: ExploreMode,
    pub sigma: f64,
    pub eta: f64,
    pub steps: usize,
    pub per_example_count: usize,
    pub pre_jitter: bool,
}

impl Default for ExploreConfig {
    fn default() -> Self {
        ExploreConfig {
            mode: ExploreMode::Random,
            sigma: 0.1,
            eta: 0.01,
            steps: 2,
            per_example_count: 4,
            pre_jitter: false,
        }
    }
}

impl ExploreConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sigma < 0.0 || self.eta < 0.0 {
            return Err(Error::InvalidArgument(
                "sigma and eta must be non-negative".into(),
            ));
        }
        if self.per_example_count == 0 {
            return Err(Error::InvalidArgument(
                "per_example_count must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

fn gaussian_offset(dim: usize, sigma: f64, rng: &mut StdRng) -> Tensor {
    let data: Vec<f64> = (0..dim)
        .map(|_| sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Tensor::vector(data)
}

/// Random exploration: decode an isotropic Gaussian perturbation of the
/// encoded latent. Returns the new instance and its latent. `sigma = 0`
/// reproduces the reconstruction bit-exactly.
pub fn tgt_random(
    x: &Tensor,
    enc: &MlpParams,
    dec: &MlpParams,
    cfg: &ExploreConfig,
    rng: &mut StdRng,
) -> Result<(Tensor, Tensor)> {
    cfg.validate()?;
    let z = nets::mlp_apply(enc, x)?;
    let z_new = if cfg.sigma == 0.0 {
        z
    } else {
        tensor::add(&z, &gaussian_offset(z.len(), cfg.sigma, rng))?
    };
    let x_new = nets::mlp_apply(dec, &z_new)?;
    Ok((x_new, z_new))
}

/// Gradient of the pointwise distillation loss with respect to the latent,
/// taken through both the student and the labeler composed with the decoder
/// (all network parameters frozen).
pub fn latent_loss_gradient(
    z: &Tensor,
    dec: &MlpParams,
    f: &MlpParams,
    h: &MlpParams,
    temperature: f64,
) -> Result<(f64, Tensor)> {
    let mut tape = Tape::new();
    let zn = tape.leaf(z.clone());
    let decoded = nets::mlp_apply_tape(dec, zn, &mut tape, ParamMode::Frozen)?.output;
    let f_logits = nets::mlp_apply_tape(f, decoded, &mut tape, ParamMode::Frozen)?.output;
    let h_logits = nets::mlp_apply_tape(h, decoded, &mut tape, ParamMode::Frozen)?.output;
    let h_scaled = tape.scale(h_logits, 1.0 / temperature)?;
    let h_probs = tape.softmax(h_scaled)?;
    let ld = distill_loss_node(&mut tape, f_logits, h_probs, temperature)?;
    let value = tape.value(ld).item()?;
    let grads = tape.backward(ld)?;
    let g = grads.get(zn).expect("latent leaf gradient").clone();
    Ok((value, g))
}

/// Gradient exploration: encode once, run `steps` ascent steps of size
/// `eta` on the latent, decode the final point. `eta = 0` or `steps = 0`
/// reproduces the reconstruction bit-exactly.
pub fn tgt_gradient(
    x: &Tensor,
    enc: &MlpParams,
    dec: &MlpParams,
    f: &MlpParams,
    h: &MlpParams,
    cfg: &ExploreConfig,
    temperature: f64,
    rng: &mut StdRng,
) -> Result<(Tensor, Tensor)> {
    cfg.validate()?;
    let mut z = nets::mlp_apply(enc, x)?;
    if cfg.pre_jitter && cfg.sigma > 0.0 {
        z = tensor::add(&z, &gaussian_offset(z.len(), cfg.sigma, rng))?;
    }
    if cfg.eta > 0.0 {
        for _ in 0..cfg.steps {
            let (_, g) = latent_loss_gradient(&z, dec, f, h, temperature)?;
            z = tensor::add(&z, &tensor::scale(&g, cfg.eta))?;
        }
    }
    let x_new = nets::mlp_apply(dec, &z)?;
    Ok((x_new, z))
}

/// Generate `per_example_count` new unlabeled samples per input sample,
/// with per-example derived RNG streams so generation is deterministic per
/// seed and order-free.
pub fn generate_tilde_set(
    s: &SampleSet,
    enc: &MlpParams,
    dec: &MlpParams,
    f: &MlpParams,
    h: &MlpParams,
    cfg: &ExploreConfig,
    temperature: f64,
    seed: u64,
) -> Result<SampleSet> {
    cfg.validate()?;
    let provenance = match cfg.mode {
        ExploreMode::Random => Provenance::TgtRandom,
        ExploreMode::Gradient => Provenance::TgtGradient,
    };
    let total = s.len() * cfg.per_example_count;
    let mut instances = Vec::with_capacity(total);
    let mut latents = Vec::with_capacity(total);
    for (i, x) in s.instances().iter().enumerate() {
        for j in 0..cfg.per_example_count {
            let mut rng = StdRng::seed_from_u64(derive_seed2(seed, i as u64, j as u64));
            let (x_new, z_new) = match cfg.mode {
                ExploreMode::Random => tgt_random(x, enc, dec, cfg, &mut rng)?,
                ExploreMode::Gradient => {
                    tgt_gradient(x, enc, dec, f, h, cfg, temperature, &mut rng)?
                }
            };
            instances.push(x_new);
            latents.push(z_new);
        }
    }
    SampleSet::unlabeled(instances, Some(latents), vec![provenance; total])
}
