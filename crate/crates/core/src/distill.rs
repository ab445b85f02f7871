//! Classification and distillation losses, empirical risks, and the
//! composite training objective that couples the labeled terms with the
//! generated-sample term.

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::nets::{self, MlpParams, ProbVector};
use crate::synth::SampleSet;
use crate::tensor::{self, Tensor, LOG_FLOOR};

/// Upper bound on every pointwise loss value, induced by the clamped log.
pub fn loss_bound() -> f64 {
    -LOG_FLOOR.ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RiskKind {
    Classification,
    Distillation,
    TgtComposite,
}

/// An averaged risk with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskValue {
    pub value: f64,
    pub n_terms: usize,
    pub kind: RiskKind,
}

impl RiskValue {
    pub fn new(kind: RiskKind, value: f64, n_terms: usize) -> Result<Self> {
        if !value.is_finite() || value < 0.0 {
            return Err(Error::NumericFailure(format!(
                "risk must be finite and non-negative, got {value}"
            )));
        }
        Ok(RiskValue { value, n_terms, kind })
    }
}

/// Softmax cross-entropy against a hard label:
/// `-log softmax(f_logits / temperature)[y]`.
pub fn class_loss_value(f_logits: &Tensor, y: usize, temperature: f64) -> Result<f64> {
    let k = f_logits.len();
    if y >= k {
        return Err(Error::InvalidArgument(format!(
            "label {y} out of range for {k} classes"
        )));
    }
    if temperature <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let probs = tensor::softmax(&tensor::scale(f_logits, 1.0 / temperature));
    let logp = tensor::log(&probs);
    Ok(-logp.data()[y])
}

/// Teacher-probability-weighted classification loss (the decomposition
/// `sum_y h_y * loss(f, y)`), computed as the algebraically identical
/// cross-entropy `-sum_y h_y log softmax(f/t)_y`.
pub fn distill_loss_value(
    f_logits: &Tensor,
    h_probs: &ProbVector,
    temperature: f64,
) -> Result<f64> {
    if h_probs.len() != f_logits.len() {
        return Err(Error::ShapeMismatch {
            op: "distill-loss",
            lhs: vec![f_logits.len()],
            rhs: vec![h_probs.len()],
        });
    }
    if temperature <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let probs = tensor::softmax(&tensor::scale(f_logits, 1.0 / temperature));
    let logp = tensor::log(&probs);
    let mut acc = 0.0;
    for (hy, lp) in h_probs.probs().iter().zip(logp.data()) {
        acc += hy * lp;
    }
    Ok(-acc)
}

/// Pointwise distillation loss between a student and a labeler at x, with
/// the labeler's logits pushed through the temperature softmax.
pub fn distill_point_loss(
    f: &MlpParams,
    h: &MlpParams,
    x: &Tensor,
    temperature: f64,
) -> Result<f64> {
    let f_logits = nets::mlp_apply(f, x)?;
    let h_probs = nets::softmax_probs(&nets::mlp_apply(h, x)?, temperature)?;
    distill_loss_value(&f_logits, &h_probs, temperature)
}

/// Taped [`class_loss_value`]: same kernels, differentiable in `f_logits`.
pub fn class_loss_node(
    tape: &mut Tape,
    f_logits: NodeId,
    y: usize,
    temperature: f64,
) -> Result<NodeId> {
    let k = tape.value(f_logits).len();
    if y >= k {
        return Err(Error::InvalidArgument(format!(
            "label {y} out of range for {k} classes"
        )));
    }
    let mut onehot = vec![0.0; k];
    onehot[y] = 1.0;
    let target = tape.constant(Tensor::vector(onehot));
    cross_entropy_node(tape, f_logits, target, temperature)
}

/// Taped distillation loss. `h_probs` holds a probability vector; pass a
/// constant node to train the student only, or a softmax node to let
/// gradients flow through the labeler branch as well.
pub fn distill_loss_node(
    tape: &mut Tape,
    f_logits: NodeId,
    h_probs: NodeId,
    temperature: f64,
) -> Result<NodeId> {
    cross_entropy_node(tape, f_logits, h_probs, temperature)
}

fn cross_entropy_node(
    tape: &mut Tape,
    f_logits: NodeId,
    target_probs: NodeId,
    temperature: f64,
) -> Result<NodeId> {
    if temperature <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let scaled = tape.scale(f_logits, 1.0 / temperature)?;
    let probs = tape.softmax(scaled)?;
    let logp = tape.log(probs)?;
    let weighted = tape.mul(target_probs, logp)?;
    let total = tape.sum(weighted)?;
    tape.scale(total, -1.0)
}

/// Mean classification loss over a labeled set.
pub fn empirical_risk(f: &MlpParams, s: &SampleSet, temperature: f64) -> Result<RiskValue> {
    let labels = s.labels().ok_or(Error::MissingLabels)?;
    if s.is_empty() {
        return Err(Error::InvalidArgument("empirical risk of an empty set".into()));
    }
    let mut acc = 0.0;
    for (x, &y) in s.instances().iter().zip(labels) {
        acc += class_loss_value(&nets::mlp_apply(f, x)?, y, temperature)?;
    }
    RiskValue::new(RiskKind::Classification, acc / s.len() as f64, s.len())
}

/// Mean distillation loss over a set (labels not needed).
pub fn empirical_distill_risk(
    f: &MlpParams,
    h: &MlpParams,
    s: &SampleSet,
    temperature: f64,
) -> Result<RiskValue> {
    if s.is_empty() {
        return Err(Error::InvalidArgument("distill risk of an empty set".into()));
    }
    let mut acc = 0.0;
    for x in s.instances() {
        acc += distill_point_loss(f, h, x, temperature)?;
    }
    RiskValue::new(RiskKind::Distillation, acc / s.len() as f64, s.len())
}

/// Fraction of samples where argmax f(x) misses the label; argmax ties go
/// to the smallest index.
pub fn misclassification_rate(f: &MlpParams, s: &SampleSet) -> Result<f64> {
    let labels = s.labels().ok_or(Error::MissingLabels)?;
    if s.is_empty() {
        return Err(Error::InvalidArgument("error rate of an empty set".into()));
    }
    let mut wrong = 0usize;
    for (x, &y) in s.instances().iter().zip(labels) {
        let logits = nets::mlp_apply(f, x)?;
        if nets::argmax(logits.data()) != y {
            wrong += 1;
        }
    }
    Ok(wrong as f64 / s.len() as f64)
}

/// The composite objective:
/// `(1/n) sum_i [loss(f(x_i), y_i) + ld(f(x_i), h(x_i))]
///  + (1/m) sum_j ld(f(x~_j), h(x~_j))`.
/// An empty generated set drops the third term.
pub fn tgt_objective(
    f: &MlpParams,
    h: &MlpParams,
    s_labeled: &SampleSet,
    s_tilde: &SampleSet,
    temperature: f64,
) -> Result<f64> {
    let labels = s_labeled.labels().ok_or(Error::MissingLabels)?;
    if s_labeled.is_empty() {
        return Err(Error::InvalidArgument("objective needs labeled samples".into()));
    }
    let mut labeled_acc = 0.0;
    for (x, &y) in s_labeled.instances().iter().zip(labels) {
        let f_logits = nets::mlp_apply(f, x)?;
        labeled_acc += class_loss_value(&f_logits, y, temperature)?;
        let h_probs = nets::softmax_probs(&nets::mlp_apply(h, x)?, temperature)?;
        labeled_acc += distill_loss_value(&f_logits, &h_probs, temperature)?;
    }
    let mut total = labeled_acc / s_labeled.len() as f64;
    if !s_tilde.is_empty() {
        let mut tilde_acc = 0.0;
        for x in s_tilde.instances() {
            tilde_acc += distill_point_loss(f, h, x, temperature)?;
        }
        total += tilde_acc / s_tilde.len() as f64;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::{init_params, MlpSpec};
    use crate::synth::{Provenance, SampleSet};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn rand_logits(rng: &mut StdRng, k: usize) -> Tensor {
        Tensor::vector((0..k).map(|_| rng.gen_range(-3.0..3.0)).collect())
    }

    fn rand_simplex(rng: &mut StdRng, k: usize) -> ProbVector {
        let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.01..1.0)).collect();
        let total: f64 = raw.iter().sum();
        ProbVector::new(raw.iter().map(|v| v / total).collect(), 1.0).unwrap()
    }

    #[test]
    fn uniform_logits_cost_log_k() {
        let loss = class_loss_value(&Tensor::vector(vec![0.5, 0.5, 0.5]), 1, 1.0).unwrap();
        assert!((loss - 3.0_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn dominant_logit_saturates_to_zero() {
        let loss = class_loss_value(&Tensor::vector(vec![50.0, 0.0, 0.0]), 0, 1.0).unwrap();
        assert!(loss.abs() < 1e-9, "saturated loss {loss}");
    }

    #[test]
    fn class_loss_matches_direct_formula() {
        let logits = vec![1.0, 2.0, 3.0];
        let loss = class_loss_value(&Tensor::vector(logits.clone()), 0, 1.0).unwrap();
        let z: f64 = logits.iter().map(|l| l.exp()).sum();
        let direct = -(logits[0].exp() / z).ln();
        assert!((loss - direct).abs() < 1e-12);
    }

    #[test]
    fn class_loss_rejects_bad_label() {
        assert!(class_loss_value(&Tensor::vector(vec![0.0, 0.0]), 2, 1.0).is_err());
    }

    #[test]
    fn one_hot_teacher_reduces_to_class_loss() {
        let mut rng = StdRng::seed_from_u64(4);
        for _ in 0..200 {
            let logits = rand_logits(&mut rng, 4);
            let y = rng.gen_range(0..4);
            let onehot = ProbVector::one_hot(y, 4).unwrap();
            let ld = distill_loss_value(&logits, &onehot, 1.0).unwrap();
            let lc = class_loss_value(&logits, y, 1.0).unwrap();
            assert_eq!(ld.to_bits(), lc.to_bits());
        }
    }

    #[test]
    fn matched_student_pays_exactly_the_entropy() {
        // f probs == h probs makes ld the entropy of h; uniform h over 3
        // classes costs ln 3.
        let logits = Tensor::vector(vec![0.2, 0.2, 0.2]);
        let h = ProbVector::uniform(3);
        let ld = distill_loss_value(&logits, &h, 1.0).unwrap();
        assert!((ld - 3.0_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn sum_form_agrees_with_cross_entropy() {
        let mut rng = StdRng::seed_from_u64(9);
        for _ in 0..300 {
            let logits = rand_logits(&mut rng, 5);
            let h = rand_simplex(&mut rng, 5);
            let direct = distill_loss_value(&logits, &h, 1.0).unwrap();
            let mut sum_form = 0.0;
            for (y, hy) in h.probs().iter().enumerate() {
                sum_form += hy * class_loss_value(&logits, y, 1.0).unwrap();
            }
            assert!((direct - sum_form).abs() < 1e-10);
        }
    }

    #[test]
    fn gibbs_inequality_on_random_draws() {
        let mut rng = StdRng::seed_from_u64(10);
        for _ in 0..200 {
            let logits = rand_logits(&mut rng, 4);
            let h = rand_simplex(&mut rng, 4);
            let ld = distill_loss_value(&logits, &h, 1.0).unwrap();
            let entropy: f64 = h
                .probs()
                .iter()
                .map(|&p| if p > 0.0 { -p * p.ln() } else { 0.0 })
                .sum();
            assert!(ld >= entropy - 1e-12, "ld {ld} < entropy {entropy}");
        }
    }

    fn tiny_labeled(k: usize, n: usize, seed: u64) -> SampleSet {
        let mut rng = StdRng::seed_from_u64(seed);
        let instances: Vec<Tensor> = (0..n)
            .map(|_| Tensor::vector((0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()))
            .collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        SampleSet::labeled(instances, labels, None, vec![Provenance::Original; n]).unwrap()
    }

    #[test]
    fn empirical_risk_reduces_to_single_loss() {
        let f = init_params(&MlpSpec::student(3, 4), 1).unwrap();
        let s = tiny_labeled(4, 1, 2);
        let r = empirical_risk(&f, &s, 1.0).unwrap();
        let direct = class_loss_value(
            &nets::mlp_apply(&f, &s.instances()[0]).unwrap(),
            s.labels().unwrap()[0],
            1.0,
        )
        .unwrap();
        assert_eq!(r.value, direct);
        assert_eq!(r.n_terms, 1);
    }

    #[test]
    fn risks_are_mean_and_permutation_invariant() {
        let f = init_params(&MlpSpec::student(3, 4), 1).unwrap();
        let h = init_params(&MlpSpec::labeler(3, 4), 2).unwrap();
        let s = tiny_labeled(4, 6, 3);
        let doubled = {
            let idx: Vec<usize> = (0..6).chain(0..6).collect();
            s.subset(&idx)
        };
        let reversed = s.subset(&[5, 4, 3, 2, 1, 0]);
        for (a, b) in [
            (empirical_risk(&f, &s, 1.0).unwrap().value,
             empirical_risk(&f, &doubled, 1.0).unwrap().value),
            (empirical_distill_risk(&f, &h, &s, 1.0).unwrap().value,
             empirical_distill_risk(&f, &h, &reversed, 1.0).unwrap().value),
        ] {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn empirical_risk_matches_hand_summation() {
        let f = init_params(&MlpSpec::student(3, 4), 7).unwrap();
        let s = tiny_labeled(4, 5, 8);
        let mut acc = 0.0;
        for i in 0..5 {
            acc += class_loss_value(
                &nets::mlp_apply(&f, &s.instances()[i]).unwrap(),
                s.labels().unwrap()[i],
                1.0,
            )
            .unwrap();
        }
        let r = empirical_risk(&f, &s, 1.0).unwrap();
        assert!((r.value - acc / 5.0).abs() < 1e-12);
    }

    #[test]
    fn distill_risk_matches_hand_summation_and_requires_samples() {
        let f = init_params(&MlpSpec::student(3, 4), 7).unwrap();
        let h = init_params(&MlpSpec::labeler(3, 4), 9).unwrap();
        let s = tiny_labeled(4, 5, 8);
        let mut acc = 0.0;
        for x in s.instances() {
            acc += distill_point_loss(&f, &h, x, 1.0).unwrap();
        }
        let r = empirical_distill_risk(&f, &h, &s, 1.0).unwrap();
        assert!((r.value - acc / 5.0).abs() < 1e-12);
        let empty = SampleSet::unlabeled(vec![], None, vec![]).unwrap();
        assert!(empirical_distill_risk(&f, &h, &empty, 1.0).is_err());
        assert!(empirical_risk(&f, &empty.without_labels(), 1.0).is_err());
    }

    #[test]
    fn misclassification_on_single_correct_sample_is_zero() {
        // Bias-only net: logits fixed at [0, 1, 0], prediction is class 1.
        let f = MlpParams::new(vec![crate::nets::Layer {
            weight: Tensor::matrix(3, 2, vec![0.0; 6]).unwrap(),
            bias: Tensor::vector(vec![0.0, 1.0, 0.0]),
            activation: crate::Activation::Identity,
        }])
        .unwrap();
        let s = SampleSet::labeled(
            vec![Tensor::vector(vec![0.3, 0.4])],
            vec![1],
            None,
            vec![Provenance::Original],
        )
        .unwrap();
        assert_eq!(misclassification_rate(&f, &s).unwrap(), 0.0);
    }

    #[test]
    fn constant_logits_on_balanced_classes_miss_two_thirds() {
        // Constant-logit model always predicts class 0 (tie toward the
        // smallest index); balanced labels over 3 classes -> error ~ 2/3.
        let f = MlpParams::new(vec![crate::nets::Layer {
            weight: Tensor::matrix(3, 2, vec![0.0; 6]).unwrap(),
            bias: Tensor::vector(vec![0.0, 0.0, 0.0]),
            activation: crate::Activation::Identity,
        }])
        .unwrap();
        let mut rng = StdRng::seed_from_u64(5);
        let n = 10_000;
        let instances: Vec<Tensor> = (0..n)
            .map(|_| Tensor::vector(vec![rng.gen(), rng.gen()]))
            .collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..3)).collect();
        let s = SampleSet::labeled(instances, labels, None, vec![Provenance::Original; n])
            .unwrap();
        let err = misclassification_rate(&f, &s).unwrap();
        assert!((err - 2.0 / 3.0).abs() < 0.02, "error {err}");
    }

    #[test]
    fn objective_without_tilde_is_risk_plus_distill_risk() {
        let f = init_params(&MlpSpec::student(3, 4), 1).unwrap();
        let h = init_params(&MlpSpec::labeler(3, 4), 2).unwrap();
        let s = tiny_labeled(4, 4, 3);
        let empty = SampleSet::unlabeled(vec![], None, vec![]).unwrap();
        let obj = tgt_objective(&f, &h, &s, &empty, 1.0).unwrap();
        let expect = empirical_risk(&f, &s, 1.0).unwrap().value
            + empirical_distill_risk(&f, &h, &s, 1.0).unwrap().value;
        assert!((obj - expect).abs() < 1e-12);
    }

    #[test]
    fn tilde_equal_to_labeled_repeats_the_distill_term() {
        let f = init_params(&MlpSpec::student(3, 4), 1).unwrap();
        let h = init_params(&MlpSpec::labeler(3, 4), 2).unwrap();
        let s = tiny_labeled(4, 4, 3);
        let obj = tgt_objective(&f, &h, &s, &s.without_labels(), 1.0).unwrap();
        let base = empirical_risk(&f, &s, 1.0).unwrap().value
            + empirical_distill_risk(&f, &h, &s, 1.0).unwrap().value;
        let kd = empirical_distill_risk(&f, &h, &s, 1.0).unwrap().value;
        assert!((obj - (base + kd)).abs() < 1e-12);
    }

    #[test]
    fn objective_matches_hand_summation() {
        let f = init_params(&MlpSpec::student(3, 4), 11).unwrap();
        let h = init_params(&MlpSpec::labeler(3, 4), 12).unwrap();
        let s = tiny_labeled(4, 3, 13);
        let tilde = tiny_labeled(4, 3, 14).without_labels();
        let mut acc = 0.0;
        for i in 0..3 {
            let x = &s.instances()[i];
            let logits = nets::mlp_apply(&f, x).unwrap();
            acc += class_loss_value(&logits, s.labels().unwrap()[i], 1.0).unwrap();
            acc += distill_point_loss(&f, &h, x, 1.0).unwrap();
        }
        acc /= 3.0;
        let mut tacc = 0.0;
        for x in tilde.instances() {
            tacc += distill_point_loss(&f, &h, x, 1.0).unwrap();
        }
        acc += tacc / 3.0;
        let obj = tgt_objective(&f, &h, &s, &tilde, 1.0).unwrap();
        assert!((obj - acc).abs() < 1e-12);
    }

    #[test]
    fn risks_never_exceed_the_clamped_log_bound() {
        let b = loss_bound();
        assert!((b + LOG_FLOOR.ln()).abs() < 1e-12);
        let mut rng = StdRng::seed_from_u64(31);
        for seed in 0..20 {
            let f = init_params(&MlpSpec::student(3, 4), seed).unwrap();
            let h = init_params(&MlpSpec::labeler(3, 4), seed + 100).unwrap();
            let s = tiny_labeled(4, 6, seed + 200);
            assert!(empirical_risk(&f, &s, 1.0).unwrap().value <= b);
            assert!(empirical_distill_risk(&f, &h, &s, 1.0).unwrap().value <= b);
            // Saturated logits hit the clamp exactly at the bound.
            let extreme = Tensor::vector(vec![1e4, 0.0, 0.0, 0.0]);
            let worst = class_loss_value(&extreme, rng.gen_range(1..4), 1.0).unwrap();
            assert!(worst <= b && worst > b - 1e-6, "clamped loss {worst} vs bound {b}");
        }
    }

    #[test]
    fn taped_losses_match_plain_values() {
        let mut rng = StdRng::seed_from_u64(21);
        for _ in 0..50 {
            let logits = rand_logits(&mut rng, 4);
            let h = rand_simplex(&mut rng, 4);
            let y = rng.gen_range(0..4);

            let mut tape = Tape::new();
            let ln = tape.leaf(logits.clone());
            let cl = class_loss_node(&mut tape, ln, y, 1.0).unwrap();
            let hp = tape.constant(Tensor::vector(h.probs().to_vec()));
            let dl = distill_loss_node(&mut tape, ln, hp, 1.0).unwrap();

            let cl_plain = class_loss_value(&logits, y, 1.0).unwrap();
            let dl_plain = distill_loss_value(&logits, &h, 1.0).unwrap();
            assert_eq!(tape.value(cl).item().unwrap().to_bits(), cl_plain.to_bits());
            assert_eq!(tape.value(dl).item().unwrap().to_bits(), dl_plain.to_bits());
        }
    }
}
