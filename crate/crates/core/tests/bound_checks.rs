//! Monte Carlo checks of the bound inequalities: the distillation gap, the
//! Lipschitz/W1 risk-gap bound, and importance-sampling unbiasedness.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

use tgtlab_core::bounds::{distill_gap_check, is_weighted_risk, lipschitz_w1_check};
use tgtlab_core::distill::distill_point_loss;
use tgtlab_core::nets::{init_params, mlp_apply, MlpSpec};
use tgtlab_core::synth::{sample_labeled, sample_unlabeled, ManifoldTask, Provenance, SampleSet, TaskConfig};
use tgtlab_core::Tensor;

#[test]
fn distill_gap_inequality_holds_for_random_students() {
    let task = ManifoldTask::new(&TaskConfig::default(), 11).unwrap();
    let s_big = sample_labeled(&task, 8000, 23).unwrap();
    let h = init_params(&MlpSpec::labeler(16, 3), 40).unwrap();
    for seed in 0..4u64 {
        let f = init_params(&MlpSpec::student(16, 3), 100 + seed).unwrap();
        let gap = distill_gap_check(&f, &h, &task, &s_big, 1.0, seed).unwrap();
        assert!(
            gap.lhs <= gap.rhs + gap.mc_slack,
            "seed {seed}: lhs {} rhs {} slack {}",
            gap.lhs,
            gap.rhs,
            gap.mc_slack
        );
    }
}

/// A task whose embedding is a linear coordinate injection z -> [z; 0], so
/// the exact inverse is the coordinate projection. Composing that
/// projection with the label oracle yields a labeler with zero penalty.
fn projection_task_with_perfect_teacher() -> (ManifoldTask, tgtlab_core::MlpParams) {
    use tgtlab_core::nets::{Layer, MlpParams};
    use tgtlab_core::Activation;
    let (d, ambient, k) = (2usize, 16usize, 3usize);
    let mut inject = vec![0.0; ambient * d];
    for i in 0..d {
        inject[i * d + i] = 1.0;
    }
    let embed = MlpParams::new(vec![Layer {
        weight: Tensor::matrix(ambient, d, inject).unwrap(),
        bias: Tensor::zeros(&[ambient]),
        activation: Activation::Identity,
    }])
    .unwrap();
    let oracle = init_params(
        &MlpSpec::with_hidden(vec![d, 16, k], Activation::Tanh).unwrap(),
        91,
    )
    .unwrap();
    let mut project = vec![0.0; d * ambient];
    for i in 0..d {
        project[i * ambient + i] = 1.0;
    }
    let mut teacher_layers = vec![Layer {
        weight: Tensor::matrix(d, ambient, project).unwrap(),
        bias: Tensor::zeros(&[d]),
        activation: Activation::Identity,
    }];
    teacher_layers.extend(oracle.layers.iter().cloned());
    let teacher = MlpParams::new(teacher_layers).unwrap();
    let task = ManifoldTask {
        latent_dim: d,
        ambient_dim: ambient,
        classes: k,
        embed,
        label_oracle: oracle,
        label_temperature: 0.5,
        ambient_noise: 0.0,
        class_prior_exponent: 0.0,
    };
    (task, teacher)
}

#[test]
fn perfect_teacher_gap_is_within_slack_only() {
    let (task, teacher) = projection_task_with_perfect_teacher();
    let s_big = sample_labeled(&task, 6000, 29).unwrap();
    let penalty = tgtlab_core::bounds::teacher_penalty(
        &teacher,
        &task,
        &s_big,
        task.label_temperature,
    )
    .unwrap();
    assert!(penalty < 1e-12, "perfect teacher penalty {penalty}");
    let f = init_params(&MlpSpec::student(16, 3), 78).unwrap();
    let gap =
        distill_gap_check(&f, &teacher, &task, &s_big, task.label_temperature, 3).unwrap();
    assert!(gap.rhs < 1e-10, "rhs should collapse, got {}", gap.rhs);
    assert!(
        gap.lhs <= gap.mc_slack,
        "lhs {} exceeds slack {}",
        gap.lhs,
        gap.mc_slack
    );
}

#[test]
fn exact_inverse_generator_has_zero_reconstruction_eps() {
    // dec == embed and enc == its exact left inverse on the noiseless task.
    let (task, _) = projection_task_with_perfect_teacher();
    use tgtlab_core::nets::{Layer, MlpParams};
    use tgtlab_core::Activation;
    let (d, ambient) = (task.latent_dim, task.ambient_dim);
    let mut project = vec![0.0; d * ambient];
    for i in 0..d {
        project[i * ambient + i] = 1.0;
    }
    let enc = MlpParams::new(vec![Layer {
        weight: Tensor::matrix(d, ambient, project).unwrap(),
        bias: Tensor::zeros(&[d]),
        activation: Activation::Identity,
    }])
    .unwrap();
    let s = sample_unlabeled(&task, 50, 81).unwrap();
    let (max, mean) =
        tgtlab_core::bounds::reconstruction_eps(&enc, &task.embed, &s).unwrap();
    assert!(max <= 1e-9, "max eps {max}");
    assert!(mean <= 1e-9, "mean eps {mean}");
}

#[test]
fn lipschitz_w1_inequality_on_50_random_pairs() {
    let task = ManifoldTask::new(&TaskConfig::default(), 11).unwrap();
    let f = init_params(&MlpSpec::student(16, 3), 50).unwrap();
    let h = init_params(&MlpSpec::labeler(16, 3), 51).unwrap();
    for round in 0..50u64 {
        let a = sample_unlabeled(&task, 30, 1000 + round).unwrap();
        let b = sample_unlabeled(&task, 30, 2000 + round).unwrap();
        let out = lipschitz_w1_check(&f, &h, &a, &b, 1.0).unwrap();
        assert!(
            out.risk_gap <= out.l_hat * out.w1 * (1.0 + 1e-6),
            "round {round}: gap {} > L {} * W1 {}",
            out.risk_gap,
            out.l_hat,
            out.w1
        );
    }
}

/// Perturbed draws constructed in latent coordinates, where the density
/// ratio is analytic: z' = z + nu with z from the prior.
fn latent_perturbed_set(
    dec: &tgtlab_core::MlpParams,
    d: usize,
    n: usize,
    sigma: f64,
    seed: u64,
) -> SampleSet {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut instances = Vec::with_capacity(n);
    let mut latents = Vec::with_capacity(n);
    for _ in 0..n {
        let z: Vec<f64> = (0..d)
            .map(|_| {
                let base: f64 = rng.sample(StandardNormal);
                let noise: f64 = rng.sample(StandardNormal);
                base + sigma * noise
            })
            .collect();
        let zt = Tensor::vector(z);
        instances.push(mlp_apply(dec, &zt).unwrap());
        latents.push(zt);
    }
    SampleSet::unlabeled(instances, Some(latents), vec![Provenance::TgtRandom; n]).unwrap()
}

#[test]
fn importance_weights_remove_the_perturbation_bias() {
    let dec = init_params(&MlpSpec::decoder(2, 16), 61).unwrap();
    let f = init_params(&MlpSpec::student(16, 3), 62).unwrap();
    let h = init_params(&MlpSpec::labeler(16, 3), 63).unwrap();
    let n = 20_000;

    // Original side: loss under the decoder pushforward of the prior.
    let mut rng = StdRng::seed_from_u64(64);
    let mut orig = Vec::with_capacity(n);
    for _ in 0..n {
        let z: Vec<f64> = (0..2).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let x = mlp_apply(&dec, &Tensor::vector(z)).unwrap();
        orig.push(distill_point_loss(&f, &h, &x, 1.0).unwrap());
    }
    let orig_mean = orig.iter().sum::<f64>() / n as f64;
    let orig_var =
        orig.iter().map(|v| (v - orig_mean) * (v - orig_mean)).sum::<f64>() / (n - 1) as f64;

    for &sigma in &[0.01, 0.1] {
        let tilde = latent_perturbed_set(&dec, 2, n, sigma, 65);
        let weighted = is_weighted_risk(&f, &h, &tilde, sigma, 1.0).unwrap();

        // SE of the weighted side from its per-sample values.
        let latents = tilde.latents().unwrap();
        let vals: Vec<f64> = tilde
            .instances()
            .iter()
            .zip(latents)
            .map(|(x, z)| {
                let w = tgtlab_core::synth::gaussian_convolution_ratio(z.data(), sigma);
                w * distill_point_loss(&f, &h, x, 1.0).unwrap()
            })
            .collect();
        let wmean = vals.iter().sum::<f64>() / n as f64;
        let wvar =
            vals.iter().map(|v| (v - wmean) * (v - wmean)).sum::<f64>() / (n - 1) as f64;
        let se = ((orig_var + wvar) / n as f64).sqrt();
        let diff = (weighted.risk.value - orig_mean).abs();
        assert!(
            diff <= 3.0 * se,
            "sigma {sigma}: |{} - {orig_mean}| = {diff} > 3 SE = {}",
            weighted.risk.value,
            3.0 * se
        );
        assert!(weighted.effective_sample_size > 0.5 * n as f64);
    }
}

#[test]
fn unweighted_risk_is_biased_at_large_sigma() {
    // Sanity: without the weights, a strong perturbation shifts the risk by
    // far more than the IS-corrected estimate does.
    let dec = init_params(&MlpSpec::decoder(2, 16), 71).unwrap();
    let f = init_params(&MlpSpec::student(16, 3), 72).unwrap();
    let h = init_params(&MlpSpec::labeler(16, 3), 73).unwrap();
    let n = 20_000;
    let sigma = 1.0;

    let mut rng = StdRng::seed_from_u64(74);
    let mut orig = Vec::with_capacity(n);
    for _ in 0..n {
        let z: Vec<f64> = (0..2).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let x = mlp_apply(&dec, &Tensor::vector(z)).unwrap();
        orig.push(distill_point_loss(&f, &h, &x, 1.0).unwrap());
    }
    let orig_mean = orig.iter().sum::<f64>() / n as f64;

    let tilde = latent_perturbed_set(&dec, 2, n, sigma, 75);
    let unweighted =
        tgtlab_core::distill::empirical_distill_risk(&f, &h, &tilde, 1.0).unwrap();
    let weighted = is_weighted_risk(&f, &h, &tilde, sigma, 1.0).unwrap();
    let bias_unweighted = (unweighted.value - orig_mean).abs();
    let bias_weighted = (weighted.risk.value - orig_mean).abs();
    assert!(
        bias_weighted < bias_unweighted,
        "weighted bias {bias_weighted} not smaller than unweighted {bias_unweighted}"
    );
}
