//! Numerical estimators for every bound quantity: reconstruction error,
//! exact empirical Wasserstein-1, empirical Rademacher complexity of a
//! sampled function class, teacher penalty, the distillation-gap and
//! Lipschitz/W1 inequalities, the variance term, and the
//! importance-sampling weighted risk with its variance-minimizing score.

mod assignment;

pub use assignment::{assignment_cost, min_cost_assignment};

use std::io::{BufRead, Write};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::distill::{class_loss_value, distill_point_loss, loss_bound, RiskKind, RiskValue};
use crate::error::{Error, Result};
use crate::nets::{self, MlpParams, MlpSpec};
use crate::seeding::derive_seed;
use crate::synth::{self, ManifoldTask, SampleSet};
use crate::tensor::Tensor;

/// Max and mean Euclidean reconstruction error of the generator over a set.
pub fn reconstruction_eps(
    enc: &MlpParams,
    dec: &MlpParams,
    s: &SampleSet,
) -> Result<(f64, f64)> {
    if s.is_empty() {
        return Err(Error::InvalidArgument("reconstruction over an empty set".into()));
    }
    let mut max = 0.0_f64;
    let mut total = 0.0;
    for x in s.instances() {
        let z = nets::mlp_apply(enc, x)?;
        let recon = nets::mlp_apply(dec, &z)?;
        let err = crate::tensor::sub(&recon, x)?.norm();
        max = max.max(err);
        total += err;
    }
    Ok((max, total / s.len() as f64))
}

fn euclidean(a: &Tensor, b: &Tensor) -> Result<f64> {
    Ok(crate::tensor::sub(a, b)?.norm())
}

/// Wasserstein-1 distance between two equal-size empirical distributions
/// under Euclidean cost: the minimum mean matching cost, computed by an
/// exact O(n^3) assignment.
pub fn wasserstein1(a: &SampleSet, b: &SampleSet) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::SizeMismatch { left: a.len(), right: b.len() });
    }
    if a.is_empty() {
        return Err(Error::InvalidArgument("wasserstein of empty sets".into()));
    }
    let n = a.len();
    let mut cost = vec![0.0; n * n];
    for (i, ai) in a.instances().iter().enumerate() {
        for (j, bj) in b.instances().iter().enumerate() {
            cost[i * n + j] = euclidean(ai, bj)?;
        }
    }
    let assign = min_cost_assignment(&cost, n);
    Ok(assignment_cost(&cost, n, &assign) / n as f64)
}

/// A scalar function of an instance; a finite sample of these stands in for
/// the induced function class when estimating Rademacher complexity.
pub type ScalarFn = Box<dyn Fn(&Tensor) -> f64 + Send + Sync>;

fn value_matrix(funcs: &[ScalarFn], s: &SampleSet) -> Vec<Vec<f64>> {
    funcs
        .iter()
        .map(|g| s.instances().iter().map(|x| g(x)).collect())
        .collect()
}

fn sup_correlation(values: &[Vec<f64>], signs: &[f64]) -> f64 {
    let n = signs.len() as f64;
    values
        .iter()
        .map(|row| {
            row.iter().zip(signs).map(|(v, s)| v * s).sum::<f64>() / n
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Monte Carlo estimate of the empirical Rademacher complexity of the
/// finite class `funcs` on `s`: the average over `num_sigma` Rademacher
/// sign vectors of `sup_g (1/n) sum_i sigma_i g(x_i)`.
///
/// Because the class is a finite sample from the underlying function class,
/// this is a lower estimate of the true supremum. The sign stream depends
/// only on `(seed, num_sigma, n)`, so enlarging the class with the same
/// seed can never decrease the estimate.
pub fn empirical_rademacher(
    funcs: &[ScalarFn],
    s: &SampleSet,
    num_sigma: usize,
    seed: u64,
) -> Result<f64> {
    if funcs.is_empty() || num_sigma == 0 {
        return Err(Error::InvalidArgument(
            "need a nonempty class and num_sigma >= 1".into(),
        ));
    }
    if s.is_empty() {
        return Err(Error::InvalidArgument("rademacher over an empty set".into()));
    }
    let values = value_matrix(funcs, s);
    let n = s.len();
    let mut rng = StdRng::seed_from_u64(seed);
    let mut total = 0.0;
    let mut signs = vec![0.0; n];
    for _ in 0..num_sigma {
        for slot in signs.iter_mut() {
            *slot = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        }
        total += sup_correlation(&values, &signs);
    }
    Ok(total / num_sigma as f64)
}

/// Exact expectation over all 2^n sign vectors; n is capped to keep the
/// enumeration tractable.
pub fn empirical_rademacher_exact(funcs: &[ScalarFn], s: &SampleSet) -> Result<f64> {
    if funcs.is_empty() {
        return Err(Error::InvalidArgument("need a nonempty class".into()));
    }
    let n = s.len();
    if n == 0 || n > 20 {
        return Err(Error::InvalidArgument(format!(
            "exact enumeration needs 1 <= n <= 20, got {n}"
        )));
    }
    let values = value_matrix(funcs, s);
    let mut total = 0.0;
    let mut signs = vec![0.0; n];
    for mask in 0_u64..(1 << n) {
        for (i, slot) in signs.iter_mut().enumerate() {
            *slot = if mask >> i & 1 == 1 { 1.0 } else { -1.0 };
        }
        total += sup_correlation(&values, &signs);
    }
    Ok(total / (1_u64 << n) as f64)
}

/// Draw `count` random students, normalize each layer to a unit
/// spectral-norm proxy (max row norm), and wrap them as the induced class
/// `x -> ld(f(x), h(x))`.
pub fn sample_student_class(
    ambient_dim: usize,
    classes: usize,
    count: usize,
    seed: u64,
    h: &MlpParams,
    temperature: f64,
) -> Result<Vec<ScalarFn>> {
    let spec = MlpSpec::student(ambient_dim, classes);
    let mut funcs: Vec<ScalarFn> = Vec::with_capacity(count);
    for k in 0..count {
        let mut f = nets::init_params(&spec, derive_seed(seed, k as u64))?;
        for layer in &mut f.layers {
            let (rows, cols) = (layer.weight.shape()[0], layer.weight.shape()[1]);
            let mut max_row = 0.0_f64;
            for r in 0..rows {
                let norm: f64 = layer.weight.data()[r * cols..(r + 1) * cols]
                    .iter()
                    .map(|v| v * v)
                    .sum::<f64>()
                    .sqrt();
                max_row = max_row.max(norm);
            }
            if max_row > 0.0 {
                layer.weight = crate::tensor::scale(&layer.weight, 1.0 / max_row);
            }
        }
        let h = h.clone();
        funcs.push(Box::new(move |x: &Tensor| {
            distill_point_loss(&f, &h, x, temperature).unwrap_or(f64::NAN)
        }));
    }
    Ok(funcs)
}

/// Mean L2 distance between the exact conditional at each stored latent and
/// the labeler's softmax output at the corresponding instance.
pub fn teacher_penalty(
    h: &MlpParams,
    task: &ManifoldTask,
    s: &SampleSet,
    temperature: f64,
) -> Result<f64> {
    let latents = s.latents().ok_or(Error::MissingLatents)?;
    if s.is_empty() {
        return Err(Error::InvalidArgument("teacher penalty over an empty set".into()));
    }
    let mut total = 0.0;
    for (x, z) in s.instances().iter().zip(latents) {
        let cond = synth::true_conditional(task, z)?;
        let hp = nets::softmax_probs(&nets::mlp_apply(h, x)?, temperature)?;
        let dist: f64 = cond
            .probs()
            .iter()
            .zip(hp.probs())
            .map(|(c, p)| (c - p) * (c - p))
            .sum::<f64>()
            .sqrt();
        total += dist;
    }
    Ok(total / s.len() as f64)
}

/// Both sides of the distillation-gap inequality
/// `|R_distill - R_class| <= sqrt(K) * B * teacher_penalty`, estimated on a
/// large Monte Carlo set with labels resampled from the exact conditionals.
#[derive(Debug, Clone, PartialEq)]
pub struct DistillGap {
    pub lhs: f64,
    pub rhs: f64,
    /// Three standard errors of the per-sample difference; covers the label
    /// resampling noise in the lhs estimate.
    pub mc_slack: f64,
}

pub fn distill_gap_check(
    f: &MlpParams,
    h: &MlpParams,
    task: &ManifoldTask,
    s_big: &SampleSet,
    temperature: f64,
    seed: u64,
) -> Result<DistillGap> {
    let latents = s_big.latents().ok_or(Error::MissingLatents)?;
    let n = s_big.len();
    if n < 2 {
        return Err(Error::InvalidArgument("distill gap needs n >= 2".into()));
    }
    let mut rng = StdRng::seed_from_u64(seed);
    let mut diffs = Vec::with_capacity(n);
    for (x, z) in s_big.instances().iter().zip(latents) {
        let ld = distill_point_loss(f, h, x, temperature)?;
        let cond = synth::true_conditional(task, z)?;
        let y = synth::draw_label(&cond, &mut rng);
        let lc = class_loss_value(&nets::mlp_apply(f, x)?, y, temperature)?;
        diffs.push(ld - lc);
    }
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1) as f64;
    let k = f.output_dim as f64;
    let penalty = teacher_penalty(h, task, s_big, temperature)?;
    Ok(DistillGap {
        lhs: mean.abs(),
        rhs: k.sqrt() * loss_bound() * penalty,
        mc_slack: 3.0 * (var / n as f64).sqrt(),
    })
}

/// Empirical check of the risk-gap-versus-W1 inequality:
/// `|R(A) - R(B)| <= L_hat * W1(A, B)` with `L_hat` the max pairwise slope
/// of `g(x) = ld(f(x), h(x))` over all within- and cross-set pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct LipschitzW1 {
    pub risk_gap: f64,
    pub l_hat: f64,
    pub w1: f64,
}

pub fn lipschitz_w1_check(
    f: &MlpParams,
    h: &MlpParams,
    a: &SampleSet,
    b: &SampleSet,
    temperature: f64,
) -> Result<LipschitzW1> {
    if a.len() != b.len() {
        return Err(Error::SizeMismatch { left: a.len(), right: b.len() });
    }
    let ga: Vec<f64> = a
        .instances()
        .iter()
        .map(|x| distill_point_loss(f, h, x, temperature))
        .collect::<Result<_>>()?;
    let gb: Vec<f64> = b
        .instances()
        .iter()
        .map(|x| distill_point_loss(f, h, x, temperature))
        .collect::<Result<_>>()?;
    let risk_gap = (ga.iter().sum::<f64>() / ga.len() as f64
        - gb.iter().sum::<f64>() / gb.len() as f64)
        .abs();

    let points: Vec<(&Tensor, f64)> = a
        .instances()
        .iter()
        .zip(ga.iter().copied())
        .chain(b.instances().iter().zip(gb.iter().copied()))
        .collect();
    let mut l_hat = 0.0_f64;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let dist = euclidean(points[i].0, points[j].0)?;
            if dist < 1e-9 {
                continue;
            }
            l_hat = l_hat.max((points[i].1 - points[j].1).abs() / dist);
        }
    }
    Ok(LipschitzW1 { risk_gap, l_hat, w1: wasserstein1(a, b)? })
}

/// The variance-based deviation term
/// `sqrt(var * log(M/delta) / n) + log(M/delta) / n`, with the empirical
/// (unbiased) variance of the pointwise distillation loss over the set and
/// `log_m` a configured stand-in for the covering-number term.
pub fn variance_term(
    f: &MlpParams,
    h: &MlpParams,
    s_tilde: &SampleSet,
    delta: f64,
    log_m: f64,
    temperature: f64,
) -> Result<f64> {
    let n = s_tilde.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "variance term needs n >= 2, got {n}"
        )));
    }
    if !(0.0..1.0).contains(&delta) || delta == 0.0 {
        return Err(Error::InvalidArgument(format!(
            "delta must lie in (0, 1), got {delta}"
        )));
    }
    let values: Vec<f64> = s_tilde
        .instances()
        .iter()
        .map(|x| distill_point_loss(f, h, x, temperature))
        .collect::<Result<_>>()?;
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    let log_m_over_delta = log_m + (1.0 / delta).ln();
    Ok((var * log_m_over_delta / n as f64).sqrt() + log_m_over_delta / n as f64)
}

/// Importance-weighted distillation risk over a randomly perturbed set,
/// with the closed-form latent density ratio as weights, plus the Kish
/// effective sample size as a diagnostic.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedRisk {
    pub risk: RiskValue,
    pub effective_sample_size: f64,
}

pub fn is_weighted_risk(
    f: &MlpParams,
    h: &MlpParams,
    s_tilde: &SampleSet,
    sigma: f64,
    temperature: f64,
) -> Result<WeightedRisk> {
    let latents = s_tilde.latents().ok_or(Error::MissingLatents)?;
    if s_tilde.is_empty() {
        return Err(Error::InvalidArgument("weighted risk over an empty set".into()));
    }
    if sigma < 0.0 || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "perturbation scale must be non-negative, got {sigma}"
        )));
    }
    let n = s_tilde.len();
    let mut weighted = 0.0;
    let mut w_sum = 0.0;
    let mut w_sq = 0.0;
    for (x, z) in s_tilde.instances().iter().zip(latents) {
        let w = synth::gaussian_convolution_ratio(z.data(), sigma);
        let ld = distill_point_loss(f, h, x, temperature)?;
        weighted += ld * w;
        w_sum += w;
        w_sq += w * w;
    }
    let risk = RiskValue::new(RiskKind::Distillation, weighted / n as f64, n)?;
    Ok(WeightedRisk {
        risk,
        effective_sample_size: w_sum * w_sum / w_sq,
    })
}

/// Log of the variance-minimizing sampling density up to its normalizer:
/// `log ld(f(x), h(x)) + log p(x)` with the latent log-density supplied by
/// the caller. Zero loss returns negative infinity.
pub fn var_min_score(
    f: &MlpParams,
    h: &MlpParams,
    x: &Tensor,
    latent_logdensity: f64,
    temperature: f64,
) -> Result<f64> {
    let ld = distill_point_loss(f, h, x, temperature)?;
    if ld <= 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(ld.ln() + latent_logdensity)
}

/// FNV-1a over the UTF-8 bytes, fixed-width hex. Stable across runs so
/// report hashes are byte-reproducible.
pub fn fnv1a_hex(s: &str) -> String {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.as_bytes() {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{hash:016x}")
}

/// One evaluated bound term.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundRow {
    pub name: String,
    pub value: f64,
    pub n: usize,
}

/// Ordered ledger of evaluated bound terms plus the configuration echo they
/// were computed under. Every entry must be finite and non-negative.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    rows: Vec<BoundRow>,
    config_echo: String,
}

impl BoundReport {
    pub fn new(config_echo: impl Into<String>) -> Self {
        BoundReport { rows: Vec::new(), config_echo: config_echo.into() }
    }

    pub fn push(&mut self, name: &str, value: f64, n: usize) -> Result<()> {
        if !value.is_finite() || value < 0.0 {
            return Err(Error::NumericFailure(format!(
                "bound term `{name}` must be finite and non-negative, got {value}"
            )));
        }
        self.rows.push(BoundRow { name: name.to_string(), value, n });
        Ok(())
    }

    pub fn rows(&self) -> &[BoundRow] {
        &self.rows
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.name == name).map(|r| r.value)
    }

    pub fn config_echo(&self) -> &str {
        &self.config_echo
    }

    pub fn config_hash(&self) -> String {
        fnv1a_hex(&self.config_echo)
    }

    /// CSV rows `name,value,n,config_hash`, 17-significant-digit values.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "name,value,n,config_hash")?;
        let hash = self.config_hash();
        for row in &self.rows {
            writeln!(w, "{},{:.16e},{},{}", row.name, row.value, row.n, hash)?;
        }
        Ok(())
    }

    /// Parse rows written by [`write_csv`]; returns the rows and the hash
    /// they were stamped with.
    pub fn read_csv<R: BufRead>(r: &mut R) -> Result<(Vec<BoundRow>, String)> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty bound report".into()))??;
        if header != "name,value,n,config_hash" {
            return Err(Error::Parse(format!("bad bound report header `{header}`")));
        }
        let mut rows = Vec::new();
        let mut hash = String::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 4 {
                return Err(Error::Parse(format!("bad bound report row `{line}`")));
            }
            let value: f64 = fields[1]
                .parse()
                .map_err(|_| Error::Parse(format!("bad value `{}`", fields[1])))?;
            let n: usize = fields[2]
                .parse()
                .map_err(|_| Error::Parse(format!("bad count `{}`", fields[2])))?;
            if hash.is_empty() {
                hash = fields[3].to_string();
            } else if hash != fields[3] {
                return Err(Error::Parse("inconsistent config hash across rows".into()));
            }
            rows.push(BoundRow { name: fields[0].to_string(), value, n });
        }
        Ok((rows, hash))
    }

    /// Human-readable fixed-width table.
    pub fn write_table<W: Write>(&self, w: &mut W) -> Result<()> {
        let name_w = self
            .rows
            .iter()
            .map(|r| r.name.len())
            .max()
            .unwrap_or(4)
            .max(4);
        writeln!(w, "{:<name_w$}  {:>22}  {:>8}", "term", "value", "n")?;
        writeln!(w, "{}  {}  {}", "-".repeat(name_w), "-".repeat(22), "-".repeat(8))?;
        for row in &self.rows {
            writeln!(w, "{:<name_w$}  {:>22.12e}  {:>8}", row.name, row.value, row.n)?;
        }
        writeln!(w, "config_hash {}", self.config_hash())?;
        Ok(())
    }
}
