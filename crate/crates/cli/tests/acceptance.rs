//! Acceptance suite: one test per criterion, each printing a PASS/FAIL
//! line with its runtime. Run with `--nocapture` to see every line:
//!
//! ```text
//! cargo test -p tgtlab --test acceptance -- --nocapture
//! ```

use std::path::PathBuf;
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

use tgtlab_core::bounds::{
    distill_gap_check, empirical_rademacher, empirical_rademacher_exact, is_weighted_risk,
    lipschitz_w1_check, sample_student_class, wasserstein1, ScalarFn,
};
use tgtlab_core::distill::{class_loss_value, distill_loss_value, distill_point_loss};
use tgtlab_core::explore::{latent_loss_gradient, tgt_gradient, tgt_random, ExploreConfig, ExploreMode};
use tgtlab_core::nets::{init_params, mlp_apply, save_model, MlpParams, MlpSpec, ProbVector};
use tgtlab_core::seeding::derive_seed;
use tgtlab_core::synth::{
    sample_labeled, sample_unlabeled, ManifoldTask, Provenance, SampleSet, TaskConfig,
};
use tgtlab_core::trainer::{
    student_full_gradient, student_objective, train_generator, train_student, train_teacher,
    Method, TrainConfig,
};
use tgtlab_core::Tensor;

const FD_STEP: f64 = 1e-5;
const FD_TOL: f64 = 1e-4;

struct Fixture {
    task: ManifoldTask,
    enc: MlpParams,
    dec: MlpParams,
    teacher: MlpParams,
    partial_student: MlpParams,
    model_dir: PathBuf,
}

static FIXTURE: OnceLock<Fixture> = OnceLock::new();

fn fixture() -> &'static Fixture {
    FIXTURE.get_or_init(|| {
        let task = ManifoldTask::new(&TaskConfig::default(), 11).unwrap();
        let pool = sample_labeled(&task, 20_000, derive_seed(11, 0x7e)).unwrap();
        let mut tcfg = TrainConfig::teacher_default();
        tcfg.seed = 1;
        let teacher = train_teacher(&task, &pool, &tcfg).unwrap();

        let unlabeled = sample_unlabeled(&task, 20_000, derive_seed(11, 0x6e)).unwrap();
        let mut gcfg = TrainConfig::generator_default();
        gcfg.seed = 2;
        let (enc, dec) = train_generator(&task, &unlabeled, &gcfg).unwrap();

        let s = sample_labeled(&task, 200, 4242).unwrap();
        let mut scfg = TrainConfig::student_default();
        scfg.method = Method::Distill;
        scfg.epochs = 20;
        scfg.eval_n = 200;
        let (partial_student, _) =
            train_student(&task, &s, &scfg, None, None, Some(&teacher)).unwrap();

        let model_dir =
            std::env::temp_dir().join(format!("tgtlab-acceptance-{}", std::process::id()));
        std::fs::create_dir_all(&model_dir).unwrap();
        save_model(&model_dir.join("encoder.model"), "encoder", &enc).unwrap();
        save_model(&model_dir.join("decoder.model"), "decoder", &dec).unwrap();
        save_model(&model_dir.join("teacher.model"), "teacher", &teacher).unwrap();
        save_model(&model_dir.join("student.model"), "student", &partial_student).unwrap();

        Fixture { task, enc, dec, teacher, partial_student, model_dir }
    })
}

fn report(criterion: usize, ok: bool, detail: &str, elapsed: Duration) {
    println!(
        "[acceptance] criterion {criterion}: {} — {detail} (elapsed {elapsed:.2?})",
        if ok { "PASS" } else { "FAIL" }
    );
}

fn rand_simplex(rng: &mut StdRng, k: usize) -> ProbVector {
    let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.01..1.0)).collect();
    let total: f64 = raw.iter().sum();
    ProbVector::new(raw.iter().map(|v| v / total).collect(), 1.0).unwrap()
}

#[test]
fn criterion_01_gradient_correctness() {
    let fx = fixture();
    let start = Instant::now();
    let mut worst: f64 = 0.0;

    // class_loss and distill_loss gradients w.r.t. the logits.
    for seed in 0..100u64 {
        let mut rng = StdRng::seed_from_u64(seed);
        let k = rng.gen_range(2..6);
        let logits = Tensor::vector((0..k).map(|_| rng.gen_range(-3.0..3.0)).collect());
        let y = rng.gen_range(0..k);
        let tau = [0.5, 1.0, 2.0][seed as usize % 3];
        let err = tgtlab_core::grad_check(
            |t, p| tgtlab_core::distill::class_loss_node(t, p, y, tau),
            &logits,
            FD_STEP,
        )
        .unwrap();
        worst = worst.max(err);
        let h = rand_simplex(&mut rng, k);
        let err = tgtlab_core::grad_check(
            |t, p| {
                let hp = t.constant(Tensor::vector(h.probs().to_vec()));
                tgtlab_core::distill::distill_loss_node(t, p, hp, tau)
            },
            &logits,
            FD_STEP,
        )
        .unwrap();
        worst = worst.max(err);
    }

    // Composite objective gradient w.r.t. every student parameter. Tanh
    // students keep the objective smooth, so central differences are a
    // valid oracle at every coordinate (relu kinks are exercised by the
    // per-op checks with inputs held away from zero).
    let smooth_student = MlpSpec::with_hidden(vec![16, 16, 3], tgtlab_core::Activation::Tanh)
        .unwrap();
    let s = sample_labeled(&fx.task, 3, 77).unwrap();
    for seed in 0..100u64 {
        let f0 = init_params(&smooth_student, 300 + seed).unwrap();
        let mut cfg = TrainConfig::student_default();
        cfg.method = Method::TgtRandom;
        let ecfg = ExploreConfig { per_example_count: 1, ..ExploreConfig::default() };
        let tilde = tgtlab_core::explore::generate_tilde_set(
            &s, &fx.enc, &fx.dec, &f0, &fx.teacher, &ecfg, cfg.temperature, seed,
        )
        .unwrap();
        let (_, analytic) =
            student_full_gradient(&f0, Some(&fx.teacher), &s, Some(&tilde), &cfg).unwrap();
        let flat0 = f0.flatten();
        let mut max_rel: f64 = 0.0;
        for i in 0..flat0.len() {
            let mut plus = flat0.clone();
            plus[i] += FD_STEP;
            let mut minus = flat0.clone();
            minus[i] -= FD_STEP;
            let op = student_objective(
                &f0.unflatten(&plus).unwrap(),
                Some(&fx.teacher),
                &s,
                Some(&tilde),
                &cfg,
            )
            .unwrap();
            let om = student_objective(
                &f0.unflatten(&minus).unwrap(),
                Some(&fx.teacher),
                &s,
                Some(&tilde),
                &cfg,
            )
            .unwrap();
            let fd = (op - om) / (2.0 * FD_STEP);
            max_rel = max_rel.max((analytic[i] - fd).abs() / 1.0_f64.max(analytic[i].abs()));
        }
        worst = worst.max(max_rel);
    }

    // Latent ascent direction (the z-update of gradient exploration); a
    // tanh labeler keeps the composite smooth in z for the same reason.
    let smooth_labeler = MlpSpec::with_hidden(vec![16, 32, 3], tgtlab_core::Activation::Tanh)
        .unwrap();
    for seed in 0..100u64 {
        let mut rng = StdRng::seed_from_u64(9000 + seed);
        let z0 = Tensor::vector(vec![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)]);
        let f = init_params(&smooth_student, 500 + seed).unwrap();
        let h = init_params(&smooth_labeler, 600 + seed).unwrap();
        let (_, g) = latent_loss_gradient(&z0, &fx.dec, &f, &h, 1.0).unwrap();
        let ld_at = |z: &Tensor| {
            let x = mlp_apply(&fx.dec, z).unwrap();
            distill_point_loss(&f, &h, &x, 1.0).unwrap()
        };
        for i in 0..2 {
            let mut zp = z0.clone();
            zp.data_mut()[i] += FD_STEP;
            let mut zm = z0.clone();
            zm.data_mut()[i] -= FD_STEP;
            let fd = (ld_at(&zp) - ld_at(&zm)) / (2.0 * FD_STEP);
            worst = worst.max((g.data()[i] - fd).abs() / 1.0_f64.max(g.data()[i].abs()));
        }
    }

    let elapsed = start.elapsed();
    let ok = worst <= FD_TOL && elapsed < Duration::from_secs(60);
    report(1, ok, &format!("max fd relative error {worst:.2e} over 100 seeds"), elapsed);
    assert!(ok, "criterion 1 failed: worst {worst}, elapsed {elapsed:?}");
}

#[test]
fn criterion_02_loss_decomposition_identity() {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let k = rng.gen_range(2..8);
        let logits = Tensor::vector((0..k).map(|_| rng.gen_range(-5.0..5.0)).collect());
        let h = rand_simplex(&mut rng, k);
        let direct = distill_loss_value(&logits, &h, 1.0).unwrap();
        let mut sum_form = 0.0;
        for (y, hy) in h.probs().iter().enumerate() {
            sum_form += hy * class_loss_value(&logits, y, 1.0).unwrap();
        }
        worst = worst.max((direct - sum_form).abs());

        let y = rng.gen_range(0..k);
        let onehot = ProbVector::one_hot(y, k).unwrap();
        let ld = distill_loss_value(&logits, &onehot, 1.0).unwrap();
        let lc = class_loss_value(&logits, y, 1.0).unwrap();
        assert_eq!(ld.to_bits(), lc.to_bits(), "one-hot reduction must be exact");
    }
    let elapsed = start.elapsed();
    let ok = worst <= 1e-10;
    report(
        2,
        ok,
        &format!("sum-form vs cross-entropy max |diff| {worst:.2e}; one-hot reduction exact"),
        elapsed,
    );
    assert!(ok, "criterion 2 failed: worst {worst}");
}

fn dist(a: &Tensor, b: &Tensor) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn w1_factorial_oracle(a: &SampleSet, b: &SampleSet) -> f64 {
    let n = a.len();
    let mut perm: Vec<usize> = (0..n).collect();
    let eval = |p: &[usize]| -> f64 {
        p.iter()
            .enumerate()
            .map(|(i, &j)| dist(&a.instances()[i], &b.instances()[j]))
            .sum::<f64>()
            / n as f64
    };
    let mut best = eval(&perm);
    let mut c = vec![0usize; n];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            best = best.min(eval(&perm));
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best
}

fn random_set(rng: &mut StdRng, n: usize, dim: usize) -> SampleSet {
    let pts: Vec<Tensor> = (0..n)
        .map(|_| Tensor::vector((0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect()))
        .collect();
    SampleSet::unlabeled(pts, None, vec![Provenance::Original; n]).unwrap()
}

#[test]
fn criterion_03_w1_exactness_and_metric_axioms() {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for round in 0..50 {
        let n = 2 + round % 6;
        let a = random_set(&mut rng, n, 3);
        let b = random_set(&mut rng, n, 3);
        let fast = wasserstein1(&a, &b).unwrap();
        let slow = w1_factorial_oracle(&a, &b);
        worst = worst.max((fast - slow).abs());
    }
    let mut axiom_ok = true;
    for _ in 0..100 {
        let a = random_set(&mut rng, 15, 2);
        let b = random_set(&mut rng, 15, 2);
        let c = random_set(&mut rng, 15, 2);
        let ab = wasserstein1(&a, &b).unwrap();
        let ba = wasserstein1(&b, &a).unwrap();
        let bc = wasserstein1(&b, &c).unwrap();
        let ac = wasserstein1(&a, &c).unwrap();
        let aa = wasserstein1(&a, &a).unwrap();
        axiom_ok &= (ab - ba).abs() < 1e-9 && aa < 1e-12 && ac <= ab + bc + 1e-9;
    }
    let elapsed = start.elapsed();
    let ok = worst <= 1e-9 && axiom_ok && elapsed < Duration::from_secs(60);
    report(
        3,
        ok,
        &format!("assignment vs n! oracle max |diff| {worst:.2e}; metric axioms on 100 triples"),
        elapsed,
    );
    assert!(ok, "criterion 3 failed: worst {worst}, axioms {axiom_ok}");
}

#[test]
fn criterion_04_rademacher_estimator() {
    let fx = fixture();
    let start = Instant::now();

    // Exact mode against a literal 2^n enumeration.
    let mut rng = StdRng::seed_from_u64(4);
    let mut funcs: Vec<ScalarFn> = Vec::new();
    for _ in 0..6 {
        let a: f64 = rng.gen_range(-1.0..1.0);
        let b: f64 = rng.gen_range(-1.0..1.0);
        funcs.push(Box::new(move |x: &Tensor| (a * x.data()[0] + b * x.data()[1]).tanh()));
    }
    let mut worst: f64 = 0.0;
    for n in [2usize, 6, 9, 12] {
        let s = random_set(&mut rng, n, 2);
        let exact = empirical_rademacher_exact(&funcs, &s).unwrap();
        let mut oracle = 0.0;
        for mask in 0u64..(1 << n) {
            let mut sup = f64::NEG_INFINITY;
            for g in &funcs {
                let mut corr = 0.0;
                for (i, x) in s.instances().iter().enumerate() {
                    let sign = if (mask >> i) & 1 == 1 { 1.0 } else { -1.0 };
                    corr += sign * g(x);
                }
                sup = sup.max(corr / n as f64);
            }
            oracle += sup;
        }
        oracle /= (1u64 << n) as f64;
        worst = worst.max((exact - oracle).abs());
    }

    // Singleton concentration.
    let n = 50;
    let s = random_set(&mut rng, n, 2);
    let singleton: Vec<ScalarFn> =
        vec![Box::new(|x: &Tensor| 0.5 + 0.5 * x.data()[0].tanh())];
    let num_sigma = 10_000;
    let est = empirical_rademacher(&singleton, &s, num_sigma, 19).unwrap();
    let singleton_bound = 3.0 / ((n * num_sigma) as f64).sqrt();
    let singleton_ok = est.abs() <= singleton_bound;

    // Monotonicity under inclusion on 50 nested pairs.
    let sample = sample_unlabeled(&fx.task, 30, 41).unwrap();
    let mut monotone_ok = true;
    for round in 0..50u64 {
        let full = sample_student_class(16, 3, 10, round, &fx.teacher, 1.0).unwrap();
        let keep = 1 + (round as usize % 9);
        let mut small = sample_student_class(16, 3, 10, round, &fx.teacher, 1.0).unwrap();
        small.truncate(keep);
        let e_small = empirical_rademacher(&small, &sample, 300, round).unwrap();
        let e_full = empirical_rademacher(&full, &sample, 300, round).unwrap();
        monotone_ok &= e_full >= e_small;
    }

    let elapsed = start.elapsed();
    let ok = worst <= 1e-9 && singleton_ok && monotone_ok;
    report(
        4,
        ok,
        &format!(
            "enumeration max |diff| {worst:.2e}; singleton |{est:.2e}| <= {singleton_bound:.2e}; monotone on 50 pairs"
        ),
        elapsed,
    );
    assert!(ok, "criterion 4 failed");
}

#[test]
fn criterion_05_distill_gap_lemma() {
    let fx = fixture();
    let start = Instant::now();
    let s_big = sample_labeled(&fx.task, 50_000, 555).unwrap();
    let mut all_ok = true;
    let mut tightest = f64::INFINITY;
    for seed in 0..10u64 {
        let f = init_params(&MlpSpec::student(16, 3), 7000 + seed).unwrap();
        let gap = distill_gap_check(&f, &fx.teacher, &fx.task, &s_big, 1.0, seed).unwrap();
        let margin = gap.rhs + gap.mc_slack - gap.lhs;
        tightest = tightest.min(margin);
        all_ok &= margin >= 0.0;
    }
    let elapsed = start.elapsed();
    let ok = all_ok && elapsed < Duration::from_secs(120);
    report(
        5,
        ok,
        &format!("lhs <= sqrt(K) B penalty + 3SE for 10 students; smallest margin {tightest:.3}"),
        elapsed,
    );
    assert!(ok, "criterion 5 failed: margin {tightest}, elapsed {elapsed:?}");
}

#[test]
fn criterion_06_lipschitz_w1_lemma() {
    let fx = fixture();
    let start = Instant::now();
    let mut all_ok = true;
    for round in 0..50u64 {
        let a = sample_unlabeled(&fx.task, 30, 6000 + round).unwrap();
        let b = sample_unlabeled(&fx.task, 30, 6500 + round).unwrap();
        let out =
            lipschitz_w1_check(&fx.partial_student, &fx.teacher, &a, &b, 1.0).unwrap();
        all_ok &= out.risk_gap <= out.l_hat * out.w1 * (1.0 + 1e-6);
    }
    let elapsed = start.elapsed();
    let ok = all_ok && elapsed < Duration::from_secs(60);
    report(6, ok, "risk gap <= L_hat * W1 on 50 random pairs (n = 30)", elapsed);
    assert!(ok, "criterion 6 failed");
}

#[test]
fn criterion_07_importance_sampling_unbiasedness() {
    let fx = fixture();
    let start = Instant::now();
    let n = 100_000;
    let f = &fx.partial_student;
    let h = &fx.teacher;

    let mut rng = StdRng::seed_from_u64(700);
    let mut orig = Vec::with_capacity(n);
    for _ in 0..n {
        let z: Vec<f64> = (0..2).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let x = mlp_apply(&fx.dec, &Tensor::vector(z)).unwrap();
        orig.push(distill_point_loss(f, h, &x, 1.0).unwrap());
    }
    let orig_mean = orig.iter().sum::<f64>() / n as f64;
    let orig_var =
        orig.iter().map(|v| (v - orig_mean) * (v - orig_mean)).sum::<f64>() / (n - 1) as f64;

    let mut all_ok = true;
    let mut detail = String::new();
    for &sigma in &[0.01, 0.1] {
        let mut rng = StdRng::seed_from_u64(701);
        let mut instances = Vec::with_capacity(n);
        let mut latents = Vec::with_capacity(n);
        for _ in 0..n {
            let z: Vec<f64> = (0..2)
                .map(|_| {
                    let base: f64 = rng.sample(StandardNormal);
                    let nu: f64 = rng.sample(StandardNormal);
                    base + sigma * nu
                })
                .collect();
            let zt = Tensor::vector(z);
            instances.push(mlp_apply(&fx.dec, &zt).unwrap());
            latents.push(zt);
        }
        let tilde =
            SampleSet::unlabeled(instances, Some(latents), vec![Provenance::TgtRandom; n])
                .unwrap();
        let weighted = is_weighted_risk(f, h, &tilde, sigma, 1.0).unwrap();

        let latents = tilde.latents().unwrap();
        let vals: Vec<f64> = tilde
            .instances()
            .iter()
            .zip(latents)
            .map(|(x, z)| {
                tgtlab_core::synth::gaussian_convolution_ratio(z.data(), sigma)
                    * distill_point_loss(f, h, x, 1.0).unwrap()
            })
            .collect();
        let wmean = vals.iter().sum::<f64>() / n as f64;
        let wvar =
            vals.iter().map(|v| (v - wmean) * (v - wmean)).sum::<f64>() / (n - 1) as f64;
        let se = ((orig_var + wvar) / n as f64).sqrt();
        let diff = (weighted.risk.value - orig_mean).abs();
        all_ok &= diff <= 3.0 * se;
        detail.push_str(&format!("sigma {sigma}: |diff| {diff:.2e} <= 3SE {:.2e}; ", 3.0 * se));
    }
    let elapsed = start.elapsed();
    let ok = all_ok && elapsed < Duration::from_secs(120);
    report(7, ok, detail.trim_end_matches("; "), elapsed);
    assert!(ok, "criterion 7 failed: {detail}");
}

#[test]
fn criterion_08_exploration_degeneracy() {
    let fx = fixture();
    let start = Instant::now();
    let s = sample_unlabeled(&fx.task, 20, 800).unwrap();
    let f = &fx.partial_student;
    let mut ok = true;

    for x in s.instances() {
        let recon = {
            let z = mlp_apply(&fx.enc, x).unwrap();
            mlp_apply(&fx.dec, &z).unwrap()
        };
        let cfg = ExploreConfig { sigma: 0.0, ..ExploreConfig::default() };
        let mut rng = StdRng::seed_from_u64(0);
        let (xr, _) = tgt_random(x, &fx.enc, &fx.dec, &cfg, &mut rng).unwrap();
        ok &= xr == recon;

        for cfg in [
            ExploreConfig { mode: ExploreMode::Gradient, eta: 0.0, ..ExploreConfig::default() },
            ExploreConfig { mode: ExploreMode::Gradient, steps: 0, ..ExploreConfig::default() },
        ] {
            let mut rng = StdRng::seed_from_u64(0);
            let (xg, _) =
                tgt_gradient(x, &fx.enc, &fx.dec, f, &fx.teacher, &cfg, 1.0, &mut rng).unwrap();
            ok &= xg == recon;
        }
    }

    // One-step update equals the taped gradient direction within FD tol.
    let mut worst: f64 = 0.0;
    for (i, x) in s.instances().iter().enumerate().take(10) {
        let z0 = mlp_apply(&fx.enc, x).unwrap();
        let (_, g) = latent_loss_gradient(&z0, &fx.dec, f, &fx.teacher, 1.0).unwrap();
        let eta = 0.01;
        let cfg = ExploreConfig {
            mode: ExploreMode::Gradient,
            eta,
            steps: 1,
            ..ExploreConfig::default()
        };
        let mut rng = StdRng::seed_from_u64(i as u64);
        let (_, z1) =
            tgt_gradient(x, &fx.enc, &fx.dec, f, &fx.teacher, &cfg, 1.0, &mut rng).unwrap();
        for j in 0..z0.len() {
            let expect = z0.data()[j] + eta * g.data()[j];
            ok &= z1.data()[j] == expect;
        }
        let ld_at = |z: &Tensor| {
            let xd = mlp_apply(&fx.dec, z).unwrap();
            distill_point_loss(f, &fx.teacher, &xd, 1.0).unwrap()
        };
        for j in 0..z0.len() {
            let mut zp = z0.clone();
            zp.data_mut()[j] += FD_STEP;
            let mut zm = z0.clone();
            zm.data_mut()[j] -= FD_STEP;
            let fd = (ld_at(&zp) - ld_at(&zm)) / (2.0 * FD_STEP);
            worst = worst.max((g.data()[j] - fd).abs() / 1.0_f64.max(g.data()[j].abs()));
        }
    }
    ok &= worst <= FD_TOL;

    let elapsed = start.elapsed();
    report(
        8,
        ok,
        &format!("zero-parameter modes reconstruct bit-exactly; one-step fd error {worst:.2e}"),
        elapsed,
    );
    assert!(ok, "criterion 8 failed");
}

#[test]
fn criterion_09_ascent_property() {
    let fx = fixture();
    let start = Instant::now();
    let s = sample_unlabeled(&fx.task, 200, 900).unwrap();
    let cfg = ExploreConfig {
        mode: ExploreMode::Gradient,
        eta: 0.01,
        steps: 2,
        ..ExploreConfig::default()
    };
    let f = &fx.partial_student;
    let mut improved = 0usize;
    for (i, x) in s.instances().iter().enumerate() {
        let z0 = mlp_apply(&fx.enc, x).unwrap();
        let recon = mlp_apply(&fx.dec, &z0).unwrap();
        let ld_recon = distill_point_loss(f, &fx.teacher, &recon, 1.0).unwrap();
        let mut rng = StdRng::seed_from_u64(i as u64);
        let (x_new, _) =
            tgt_gradient(x, &fx.enc, &fx.dec, f, &fx.teacher, &cfg, 1.0, &mut rng).unwrap();
        let ld_new = distill_point_loss(f, &fx.teacher, &x_new, 1.0).unwrap();
        if ld_new >= ld_recon {
            improved += 1;
        }
    }
    let frac = improved as f64 / s.len() as f64;
    let elapsed = start.elapsed();
    let ok = frac >= 0.8;
    report(
        9,
        ok,
        &format!("loss rose at {improved}/200 points ({:.0}%)", frac * 100.0),
        elapsed,
    );
    assert!(ok, "criterion 9 failed: only {frac:.2} improved");
}

#[test]
fn criterion_10_low_data_trend() {
    let fx = fixture();
    let start = Instant::now();

    let out_dir = fx.model_dir.join("sweep-out");
    let mut cfg = tgtlab::config::ExperimentConfig::default();
    cfg.sweep_methods = vec![Method::Onehot, Method::Distill, Method::TgtRandom];
    cfg.sweep_n_grid = vec![50, 100];
    cfg.sweep_seeds = (0..6).collect();
    cfg.sweep_eval_n = 10_000;
    cfg.paths_encoder = Some(fx.model_dir.join("encoder.model"));
    cfg.paths_decoder = Some(fx.model_dir.join("decoder.model"));
    cfg.paths_teacher = Some(fx.model_dir.join("teacher.model"));
    let ctx = tgtlab::commands::Ctx { cfg, out_dir: out_dir.clone(), jobs: None };
    tgtlab::commands::cmd_sweep(&ctx).unwrap();
    let rows = tgtlab::commands::read_sweep_csv(&out_dir.join("sweep.csv")).unwrap();

    let stats = |method: &str, n: usize| -> (f64, f64) {
        let errs: Vec<f64> = rows
            .iter()
            .filter(|r| r.0 == method && r.1 == n)
            .map(|r| r.3)
            .collect();
        assert!(errs.len() >= 5, "need at least 5 seeds, got {}", errs.len());
        let mean = errs.iter().sum::<f64>() / errs.len() as f64;
        let var = errs.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>()
            / (errs.len() - 1) as f64;
        (mean, var / errs.len() as f64)
    };

    let mut ok = true;
    let mut detail = String::new();
    for &n in &[50usize, 100] {
        let (onehot, v_onehot) = stats("onehot", n);
        let (kd, _) = stats("distill", n);
        let (tgt, v_tgt) = stats("tgt-random", n);
        let se_gap = (v_onehot + v_tgt).sqrt();
        let ordered = tgt < kd && kd < onehot;
        let gap_ok = onehot - tgt > 2.0 * se_gap;
        ok &= ordered && gap_ok;
        detail.push_str(&format!(
            "n={n}: tgt {tgt:.4} < distill {kd:.4} < onehot {onehot:.4}, gap {:.4} > 2SE {:.4}; ",
            onehot - tgt,
            2.0 * se_gap
        ));
    }
    let elapsed = start.elapsed();
    ok &= elapsed < Duration::from_secs(1200);
    report(10, ok, detail.trim_end_matches("; "), elapsed);
    assert!(ok, "criterion 10 failed: {detail}");
}

#[test]
fn criterion_11_byte_identical_reruns() {
    let start = Instant::now();
    let bin = env!("CARGO_BIN_EXE_tgtlab");
    let small = [
        "--set",
        "generator.pool=300",
        "--set",
        "generator.epochs=2",
        "--set",
        "teacher.pool=400",
        "--set",
        "teacher.epochs=2",
        "--set",
        "student.n=24",
        "--set",
        "student.epochs=3",
        "--set",
        "student.eval_n=60",
        "--set",
        "student.method=tgt-random",
        "--set",
        "explore.per_example=2",
        "--set",
        "sweep.methods=onehot,tgt-random",
        "--set",
        "sweep.n_grid=20",
        "--set",
        "sweep.seeds=0,1",
        "--set",
        "sweep.eval_n=100",
        "--set",
        "bounds.samples=80",
        "--set",
        "bounds.num_sigma=100",
        "--set",
        "bounds.class_draws=6",
        "--set",
        "bounds.pair_n=8",
    ];
    let mut rounds: Vec<Vec<(String, Vec<u8>)>> = Vec::new();
    for round in 0..2 {
        let dir = std::env::temp_dir().join(format!(
            "tgtlab-criterion11-{}-{round}",
            std::process::id()
        ));
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        for cmd in [
            "gen-data",
            "train-generator",
            "train-teacher",
            "train-student",
            "sweep",
            "bounds",
        ] {
            let out = Command::new(bin)
                .arg(cmd)
                .args(small)
                .arg("--out")
                .arg(&dir)
                .output()
                .expect("spawn tgtlab");
            assert!(
                out.status.success(),
                "{cmd}: {}",
                String::from_utf8_lossy(&out.stderr)
            );
        }
        let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(&dir)
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (
                    e.file_name().to_string_lossy().into_owned(),
                    std::fs::read(e.path()).unwrap(),
                )
            })
            .collect();
        files.sort_by(|a, b| a.0.cmp(&b.0));
        rounds.push(files);
    }
    let mut ok = rounds[0].len() == rounds[1].len();
    let mut detail = format!("{} artifacts compared", rounds[0].len());
    if ok {
        for (a, b) in rounds[0].iter().zip(&rounds[1]) {
            if a.0 != b.0 || a.1 != b.1 {
                ok = false;
                detail = format!("artifact `{}` differs between reruns", a.0);
                break;
            }
        }
    }
    let elapsed = start.elapsed();
    report(11, ok, &detail, elapsed);
    assert!(ok, "criterion 11 failed: {detail}");
}
