//! The seven CLI verbs. Every artifact lands in the output directory under
//! a fixed name; inputs resolve through `paths.*` overrides first.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use tgtlab_core::bounds::{
    distill_gap_check, empirical_rademacher, is_weighted_risk, lipschitz_w1_check,
    reconstruction_eps, sample_student_class, teacher_penalty, variance_term, wasserstein1,
    BoundReport,
};
use tgtlab_core::distill::{
    class_loss_value, distill_loss_value, empirical_distill_risk, empirical_risk,
    misclassification_rate, tgt_objective,
};
use tgtlab_core::error::{Error, Result};
use tgtlab_core::explore::{generate_tilde_set, tgt_random, ExploreConfig, ExploreMode};
use tgtlab_core::nets::{load_model, mlp_apply, save_model, softmax_probs, MlpParams};
use tgtlab_core::seeding::{derive_seed, derive_seed2};
use tgtlab_core::synth::{
    gaussian_convolution_ratio, read_samples, sample_labeled, sample_unlabeled, write_samples,
    ManifoldTask,
};
use tgtlab_core::trainer::{
    train_generator_tracked, train_student, train_teacher_tracked, write_history, Method,
};
use tgtlab_core::{ProbVector, Tensor};

use crate::config::ExperimentConfig;

const STREAM_STUDENT_DATA: u64 = 0xDA7A;
const STREAM_SWEEP_EVAL: u64 = 0xE7A1;

pub struct Ctx {
    pub cfg: ExperimentConfig,
    pub out_dir: PathBuf,
    pub jobs: Option<usize>,
}

impl Ctx {
    fn task(&self) -> Result<ManifoldTask> {
        ManifoldTask::new(&self.cfg.task, self.cfg.task_seed)
    }

    fn path_of(&self, overridden: &Option<PathBuf>, default_name: &str) -> PathBuf {
        overridden
            .clone()
            .unwrap_or_else(|| self.out_dir.join(default_name))
    }

    fn load(&self, overridden: &Option<PathBuf>, default_name: &str) -> Result<MlpParams> {
        let path = self.path_of(overridden, default_name);
        let (_, params) = load_model(&path)?;
        Ok(params)
    }

    fn write_file(&self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.out_dir)
            .map_err(|e| Error::Io(format!("{}: {e}", self.out_dir.display())))?;
        let path = self.out_dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Ok(path)
    }
}

pub fn cmd_gen_data(ctx: &Ctx) -> Result<()> {
    let task = ctx.task()?;
    let set = if ctx.cfg.data_labeled {
        sample_labeled(&task, ctx.cfg.data_n, ctx.cfg.data_seed)?
    } else {
        sample_unlabeled(&task, ctx.cfg.data_n, ctx.cfg.data_seed)?
    };
    let mut buf = Vec::new();
    write_samples(&mut buf, &set)?;
    let path = ctx.write_file("samples.csv", &buf)?;
    println!("wrote {} ({} samples)", path.display(), set.len());
    Ok(())
}

pub fn cmd_train_generator(ctx: &Ctx) -> Result<()> {
    let task = ctx.task()?;
    let pool = sample_unlabeled(
        &task,
        ctx.cfg.generator_pool,
        derive_seed(ctx.cfg.task_seed, 0x6e),
    )?;
    let (enc, dec, history) = train_generator_tracked(&task, &pool, &ctx.cfg.generator)?;
    std::fs::create_dir_all(&ctx.out_dir)
        .map_err(|e| Error::Io(format!("{}: {e}", ctx.out_dir.display())))?;
    save_model(&ctx.out_dir.join("encoder.model"), "encoder", &enc)?;
    save_model(&ctx.out_dir.join("decoder.model"), "decoder", &dec)?;
    let mut buf = Vec::new();
    write_history(&mut buf, &history)?;
    ctx.write_file("generator_history.csv", &buf)?;
    let eval = sample_unlabeled(&task, 2000, derive_seed(ctx.cfg.task_seed, 0x6f))?;
    let (eps_max, eps_mean) = reconstruction_eps(&enc, &dec, &eval)?;
    println!(
        "wrote {}/encoder.model, decoder.model (recon eps max {eps_max:.6}, mean {eps_mean:.6})",
        ctx.out_dir.display()
    );
    Ok(())
}

pub fn cmd_train_teacher(ctx: &Ctx) -> Result<()> {
    let task = ctx.task()?;
    let pool = sample_labeled(
        &task,
        ctx.cfg.teacher_pool,
        derive_seed(ctx.cfg.task_seed, 0x7e),
    )?;
    let (h, history) = train_teacher_tracked(&task, &pool, &ctx.cfg.teacher)?;
    std::fs::create_dir_all(&ctx.out_dir)
        .map_err(|e| Error::Io(format!("{}: {e}", ctx.out_dir.display())))?;
    save_model(&ctx.out_dir.join("teacher.model"), "teacher", &h)?;
    let mut buf = Vec::new();
    write_history(&mut buf, &history)?;
    ctx.write_file("teacher_history.csv", &buf)?;
    let eval = sample_labeled(&task, 5000, derive_seed(ctx.cfg.task_seed, 0x7f))?;
    let err = misclassification_rate(&h, &eval)?;
    let penalty = teacher_penalty(&h, &task, &eval, ctx.cfg.student.temperature)?;
    println!(
        "wrote {}/teacher.model (accuracy {:.4}, teacher penalty {penalty:.4})",
        ctx.out_dir.display(),
        1.0 - err
    );
    Ok(())
}

fn load_student_inputs(
    ctx: &Ctx,
    method: Method,
) -> Result<(Option<MlpParams>, Option<MlpParams>, Option<MlpParams>)> {
    let h = if method.needs_teacher() {
        Some(ctx.load(&ctx.cfg.paths_teacher, "teacher.model")?)
    } else {
        None
    };
    let (enc, dec) = if method.needs_generator() {
        (
            Some(ctx.load(&ctx.cfg.paths_encoder, "encoder.model")?),
            Some(ctx.load(&ctx.cfg.paths_decoder, "decoder.model")?),
        )
    } else {
        (None, None)
    };
    Ok((enc, dec, h))
}

pub fn cmd_train_student(ctx: &Ctx) -> Result<()> {
    let task = ctx.task()?;
    let cfg = &ctx.cfg.student;
    let (enc, dec, h) = load_student_inputs(ctx, cfg.method)?;
    let s = sample_labeled(
        &task,
        ctx.cfg.student_n,
        derive_seed2(ctx.cfg.task_seed, STREAM_STUDENT_DATA, cfg.seed),
    )?;
    let (f, history) = train_student(&task, &s, cfg, enc.as_ref(), dec.as_ref(), h.as_ref())?;
    std::fs::create_dir_all(&ctx.out_dir)
        .map_err(|e| Error::Io(format!("{}: {e}", ctx.out_dir.display())))?;
    save_model(&ctx.out_dir.join("student.model"), "student", &f)?;
    let mut buf = Vec::new();
    write_history(&mut buf, &history)?;
    ctx.write_file("student_history.csv", &buf)?;
    let last = history.last();
    println!(
        "wrote {}/student.model (method {}, final test err {})",
        ctx.out_dir.display(),
        cfg.method,
        last.map_or("n/a".into(), |e| format!("{:.4}", e.test_err))
    );
    Ok(())
}

pub fn cmd_sweep(ctx: &Ctx) -> Result<()> {
    let task = ctx.task()?;
    if ctx.cfg.sweep_n_grid.is_empty() || ctx.cfg.sweep_seeds.is_empty() {
        return Err(Error::InvalidArgument(
            "sweep needs a non-empty n grid and seed list".into(),
        ));
    }
    if ctx.cfg.sweep_n_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(
            "sweep.n_grid must be strictly ascending".into(),
        ));
    }
    // Generator and teacher artifacts are prerequisites for every sweep.
    let enc = ctx.load(&ctx.cfg.paths_encoder, "encoder.model")?;
    let dec = ctx.load(&ctx.cfg.paths_decoder, "decoder.model")?;
    let h = ctx.load(&ctx.cfg.paths_teacher, "teacher.model")?;
    let eval = sample_labeled(
        &task,
        ctx.cfg.sweep_eval_n,
        derive_seed(ctx.cfg.task_seed, STREAM_SWEEP_EVAL),
    )?;

    let mut grid = Vec::new();
    for &method in &ctx.cfg.sweep_methods {
        for &n in &ctx.cfg.sweep_n_grid {
            for &seed in &ctx.cfg.sweep_seeds {
                grid.push((method, n, seed));
            }
        }
    }

    let run_one = |&(method, n, seed): &(Method, usize, u64)| -> Result<(Method, usize, u64, f64, f64)> {
        let mut cfg = ctx.cfg.student.clone();
        cfg.method = method;
        cfg.seed = seed;
        let s = sample_labeled(
            &task,
            n,
            derive_seed2(ctx.cfg.task_seed ^ n as u64, STREAM_STUDENT_DATA, seed),
        )?;
        let (f, _) = train_student(
            &task,
            &s,
            &cfg,
            method.needs_generator().then_some(&enc),
            method.needs_generator().then_some(&dec),
            method.needs_teacher().then_some(&h),
        )?;
        let err = misclassification_rate(&f, &eval)?;
        let risk = empirical_risk(&f, &eval, cfg.temperature)?.value;
        Ok((method, n, seed, err, risk))
    };

    // Fan out over a pool sized by --jobs. Rows are collected back into
    // grid order, so the merged CSV is identical for any worker count.
    let results: Vec<Result<(Method, usize, u64, f64, f64)>> = match ctx.jobs {
        Some(jobs) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(jobs.max(1))
                .build()
                .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))?;
            pool.install(|| grid.par_iter().map(run_one).collect())
        }
        None => grid.par_iter().map(run_one).collect(),
    };

    let mut buf = Vec::new();
    writeln!(buf, "method,n,seed,final_test_err,final_test_risk")?;
    for row in results {
        let (method, n, seed, err, risk) = row?;
        writeln!(buf, "{method},{n},{seed},{err:.16e},{risk:.16e}")?;
    }
    let path = ctx.write_file("sweep.csv", &buf)?;
    println!("wrote {} ({} runs)", path.display(), grid.len());
    Ok(())
}

pub fn cmd_bounds(ctx: &Ctx) -> Result<()> {
    let task = ctx.task()?;
    let enc = ctx.load(&ctx.cfg.paths_encoder, "encoder.model")?;
    let dec = ctx.load(&ctx.cfg.paths_decoder, "decoder.model")?;
    let h = ctx.load(&ctx.cfg.paths_teacher, "teacher.model")?;
    let f = ctx.load(&ctx.cfg.paths_student, "student.model")?;
    let tau = ctx.cfg.student.temperature;
    let seed = ctx.cfg.bounds_seed;
    let n = ctx.cfg.bounds_samples;

    let s = sample_labeled(&task, n, derive_seed(seed, 0x1))?;
    let explore = ExploreConfig {
        mode: ExploreMode::Random,
        sigma: ctx.cfg.bounds_sigma,
        per_example_count: 1,
        ..ExploreConfig::default()
    };
    let tilde = generate_tilde_set(&s, &enc, &dec, &f, &h, &explore, tau, derive_seed(seed, 0x2))?;

    let mut report = BoundReport::new(ctx.cfg.to_lines());
    let (eps_max, eps_mean) = reconstruction_eps(&enc, &dec, &s)?;
    report.push("eps_recon_max", eps_max, n)?;
    report.push("eps_recon_mean", eps_mean, n)?;
    report.push("w1_original_vs_tilde", wasserstein1(&s, &tilde)?, n)?;

    let class = sample_student_class(
        task.ambient_dim,
        task.classes,
        ctx.cfg.bounds_class_draws,
        derive_seed(seed, 0x3),
        &h,
        tau,
    )?;
    report.push(
        "rademacher_hat",
        empirical_rademacher(&class, &s, ctx.cfg.bounds_num_sigma, derive_seed(seed, 0x4))?,
        n,
    )?;
    report.push("teacher_penalty", teacher_penalty(&h, &task, &s, tau)?, n)?;
    report.push(
        "variance_term",
        variance_term(&f, &h, &tilde, ctx.cfg.bounds_delta, ctx.cfg.bounds_log_m, tau)?,
        tilde.len(),
    )?;
    report.push("risk_classification", empirical_risk(&f, &s, tau)?.value, n)?;
    report.push(
        "risk_distillation",
        empirical_distill_risk(&f, &h, &s, tau)?.value,
        n,
    )?;
    report.push(
        "risk_tgt_composite",
        tgt_objective(&f, &h, &s, &tilde, tau)?,
        n + tilde.len(),
    )?;

    let gap = distill_gap_check(&f, &h, &task, &s, tau, derive_seed(seed, 0x5))?;
    report.push("distill_gap_lhs", gap.lhs, n)?;
    report.push("distill_gap_rhs", gap.rhs, n)?;
    report.push("distill_gap_mc_slack", gap.mc_slack, n)?;

    let pair_a = sample_unlabeled(&task, ctx.cfg.bounds_pair_n, derive_seed(seed, 0x6))?;
    let pair_b = sample_unlabeled(&task, ctx.cfg.bounds_pair_n, derive_seed(seed, 0x7))?;
    let lw = lipschitz_w1_check(&f, &h, &pair_a, &pair_b, tau)?;
    report.push("lipschitz_risk_gap", lw.risk_gap, ctx.cfg.bounds_pair_n)?;
    report.push("lipschitz_l_hat", lw.l_hat, ctx.cfg.bounds_pair_n)?;
    report.push("lipschitz_w1", lw.w1, ctx.cfg.bounds_pair_n)?;

    let weighted = is_weighted_risk(&f, &h, &tilde, ctx.cfg.bounds_sigma, tau)?;
    report.push("is_weighted_risk", weighted.risk.value, tilde.len())?;
    report.push(
        "is_effective_sample_size",
        weighted.effective_sample_size,
        tilde.len(),
    )?;

    // Spread of the variance-minimizing score over the generated
    // candidates; a wide spread means the score meaningfully ranks them.
    let tilde_latents = tilde.latents().expect("generated sets store latents");
    let mut score_min = f64::INFINITY;
    let mut score_max = f64::NEG_INFINITY;
    for (x, z) in tilde.instances().iter().zip(tilde_latents) {
        let logdens = -0.5 * z.data().iter().map(|v| v * v).sum::<f64>();
        let score = tgtlab_core::bounds::var_min_score(&f, &h, x, logdens, tau)?;
        if score.is_finite() {
            score_min = score_min.min(score);
            score_max = score_max.max(score);
        }
    }
    if score_max >= score_min {
        report.push("var_min_score_spread", score_max - score_min, tilde.len())?;
    }

    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    let csv_path = ctx.write_file("bounds.csv", &csv)?;
    let mut table = Vec::new();
    report.write_table(&mut table)?;
    ctx.write_file("bounds.txt", &table)?;
    println!("wrote {} ({} terms)", csv_path.display(), report.rows().len());
    Ok(())
}

fn selfcheck(name: &str, ok: bool, detail: String) -> Result<()> {
    if ok {
        println!("selftest {name}: ok");
        Ok(())
    } else {
        println!("selftest {name}: FAIL ({detail})");
        Err(Error::NumericFailure(format!("selftest {name}: {detail}")))
    }
}

/// Fast internal consistency checks; exit 0 when all pass.
pub fn cmd_selftest(ctx: &Ctx) -> Result<()> {
    let task = ctx.task()?;

    // Gradient of the softmax cross-entropy composite against central
    // differences.
    let logits = Tensor::vector(vec![0.4, -1.2, 0.7]);
    let err = tgtlab_core::grad_check(
        |t, p| {
            let hp = t.constant(Tensor::vector(vec![0.2, 0.5, 0.3]));
            tgtlab_core::distill::distill_loss_node(t, p, hp, 1.0)
        },
        &logits,
        1e-5,
    )?;
    selfcheck("gradient", err <= 1e-4, format!("fd error {err}"))?;

    // Assignment-based W1 against a tiny factorial enumeration.
    let a = sample_unlabeled(&task, 5, 1)?;
    let b = sample_unlabeled(&task, 5, 2)?;
    let fast = wasserstein1(&a, &b)?;
    let mut best = f64::INFINITY;
    let mut perm = [0usize, 1, 2, 3, 4];
    heap_permutations(&mut perm, &mut |p| {
        let cost: f64 = p
            .iter()
            .enumerate()
            .map(|(i, &j)| {
                tgtlab_core::tensor::sub(&a.instances()[i], &b.instances()[j])
                    .unwrap()
                    .norm()
            })
            .sum::<f64>()
            / 5.0;
        if cost < best {
            best = cost;
        }
    });
    selfcheck("wasserstein", (fast - best).abs() < 1e-9, format!("{fast} vs {best}"))?;

    // Softmax is a distribution and one-hot distillation reduces exactly.
    let p = softmax_probs(&logits, 1.0)?;
    let sum: f64 = p.probs().iter().sum();
    let onehot = ProbVector::one_hot(1, 3)?;
    let ld = distill_loss_value(&logits, &onehot, 1.0)?;
    let lc = class_loss_value(&logits, 1, 1.0)?;
    selfcheck(
        "losses",
        (sum - 1.0).abs() < 1e-9 && ld.to_bits() == lc.to_bits(),
        format!("sum {sum}, ld {ld}, lc {lc}"),
    )?;

    // Closed-form importance weight at the latent origin.
    let w = gaussian_convolution_ratio(&[0.0, 0.0], 0.2);
    let expect = 1.0 + 0.2_f64 * 0.2;
    selfcheck("is-weight", (w - expect).abs() < 1e-12, format!("{w} vs {expect}"))?;

    // Sampler determinism and exploration degeneracy.
    let s1 = sample_labeled(&task, 10, 7)?;
    let s2 = sample_labeled(&task, 10, 7)?;
    let enc = tgtlab_core::nets::init_params(
        &tgtlab_core::MlpSpec::encoder(task.ambient_dim, task.latent_dim),
        3,
    )?;
    let dcd = tgtlab_core::nets::init_params(
        &tgtlab_core::MlpSpec::decoder(task.latent_dim, task.ambient_dim),
        4,
    )?;
    let cfg0 = ExploreConfig { sigma: 0.0, ..ExploreConfig::default() };
    let mut rng = <rand::rngs::StdRng as rand::SeedableRng>::seed_from_u64(0);
    let (x_new, _) = tgt_random(&s1.instances()[0], &enc, &dcd, &cfg0, &mut rng)?;
    let recon = mlp_apply(&dcd, &mlp_apply(&enc, &s1.instances()[0])?)?;
    selfcheck(
        "determinism",
        s1 == s2 && x_new == recon,
        "seeded draws or zero-sigma reconstruction differ".into(),
    )?;

    // Bound-report round trip.
    let mut report = BoundReport::new("selftest = 1\n");
    report.push("w1", 0.25, 10)?;
    let mut buf = Vec::new();
    report.write_csv(&mut buf)?;
    let (rows, hash) = BoundReport::read_csv(&mut std::io::Cursor::new(&buf))?;
    selfcheck(
        "report-roundtrip",
        rows == report.rows() && hash == report.config_hash(),
        "csv round trip mismatch".into(),
    )?;

    println!("selftest: all checks passed");
    Ok(())
}

fn heap_permutations(items: &mut [usize], visit: &mut impl FnMut(&[usize])) {
    fn rec(k: usize, items: &mut [usize], visit: &mut impl FnMut(&[usize])) {
        if k <= 1 {
            visit(items);
            return;
        }
        for i in 0..k {
            rec(k - 1, items, visit);
            if k % 2 == 0 {
                items.swap(i, k - 1);
            } else {
                items.swap(0, k - 1);
            }
        }
    }
    rec(items.len(), items, visit);
}

/// Used by tests to read a sweep CSV back.
pub fn read_sweep_csv(path: &Path) -> Result<Vec<(String, usize, u64, f64, f64)>> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Parse("empty sweep csv".into()))?;
    if header != "method,n,seed,final_test_err,final_test_risk" {
        return Err(Error::Parse(format!("bad sweep header `{header}`")));
    }
    let mut rows = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(Error::Parse(format!("bad sweep row `{line}`")));
        }
        rows.push((
            f[0].to_string(),
            f[1].parse().map_err(|_| Error::Parse(format!("bad n `{}`", f[1])))?,
            f[2].parse().map_err(|_| Error::Parse(format!("bad seed `{}`", f[2])))?,
            f[3].parse().map_err(|_| Error::Parse(format!("bad err `{}`", f[3])))?,
            f[4].parse().map_err(|_| Error::Parse(format!("bad risk `{}`", f[4])))?,
        ));
    }
    Ok(rows)
}

/// Round-trip helper for the sample CSV (used by tests and downstream
/// tooling).
pub fn read_samples_csv(path: &Path) -> Result<tgtlab_core::SampleSet> {
    let file = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_samples(&mut std::io::BufReader::new(file))
}

