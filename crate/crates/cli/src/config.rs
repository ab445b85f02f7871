//! Flat `key = value` experiment configuration with a closed schema:
//! unknown keys are hard errors, so every run is fully described by its
//! file plus `--set` overrides.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use tgtlab_core::error::{Error, Result};
use tgtlab_core::explore::ExploreConfig;
use tgtlab_core::trainer::{Method, TildeRefresh, TrainConfig};
use tgtlab_core::TaskConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub task_seed: u64,
    pub task: TaskConfig,

    pub data_n: usize,
    pub data_labeled: bool,
    pub data_seed: u64,

    pub generator_pool: usize,
    pub generator: TrainConfig,

    pub teacher_pool: usize,
    pub teacher: TrainConfig,

    pub student_n: usize,
    pub student: TrainConfig,

    pub sweep_methods: Vec<Method>,
    pub sweep_n_grid: Vec<usize>,
    pub sweep_seeds: Vec<u64>,
    pub sweep_eval_n: usize,

    pub bounds_samples: usize,
    pub bounds_pair_n: usize,
    pub bounds_num_sigma: usize,
    pub bounds_class_draws: usize,
    pub bounds_log_m: f64,
    pub bounds_delta: f64,
    pub bounds_sigma: f64,
    pub bounds_seed: u64,

    pub paths_encoder: Option<PathBuf>,
    pub paths_decoder: Option<PathBuf>,
    pub paths_teacher: Option<PathBuf>,
    pub paths_student: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mut generator = TrainConfig::generator_default();
        generator.seed = 2;
        let mut teacher = TrainConfig::teacher_default();
        teacher.seed = 1;
        let student = TrainConfig::student_default();
        ExperimentConfig {
            task_seed: 11,
            task: TaskConfig::default(),
            data_n: 200,
            data_labeled: true,
            data_seed: 0,
            generator_pool: 20_000,
            generator,
            teacher_pool: 20_000,
            teacher,
            student_n: 200,
            student,
            sweep_methods: vec![Method::Onehot, Method::Distill, Method::TgtRandom],
            sweep_n_grid: vec![50, 100],
            sweep_seeds: (0..5).collect(),
            sweep_eval_n: 10_000,
            bounds_samples: 2000,
            bounds_pair_n: 30,
            bounds_num_sigma: 2000,
            bounds_class_draws: 64,
            bounds_log_m: 5.0,
            bounds_delta: 0.1,
            bounds_sigma: 0.1,
            bounds_seed: 5,
            paths_encoder: None,
            paths_decoder: None,
            paths_teacher: None,
            paths_student: None,
            out: None,
        }
    }
}

fn parse_as<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse::<T>()
        .map_err(|_| Error::Parse(format!("bad value `{value}` for config key `{key}`")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|tok| !tok.is_empty())
        .map(|tok| parse_as::<T>(key, tok))
        .collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Parse(format!(
            "bad value `{value}` for config key `{key}` (expected true/false)"
        ))),
    }
}

impl ExperimentConfig {
    /// Apply one `key = value` assignment. Unknown keys are errors naming
    /// the key, per the closed-schema contract.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "task.seed" => self.task_seed = parse_as(key, value)?,
            "task.d" => self.task.latent_dim = parse_as(key, value)?,
            "task.ambient_dim" => self.task.ambient_dim = parse_as(key, value)?,
            "task.classes" => self.task.classes = parse_as(key, value)?,
            "task.noise" => self.task.ambient_noise = parse_as(key, value)?,
            "task.label_temperature" => self.task.label_temperature = parse_as(key, value)?,
            "task.prior_exponent" => self.task.class_prior_exponent = parse_as(key, value)?,

            "data.n" => self.data_n = parse_as(key, value)?,
            "data.labeled" => self.data_labeled = parse_bool(key, value)?,
            "data.seed" => self.data_seed = parse_as(key, value)?,

            "generator.pool" => self.generator_pool = parse_as(key, value)?,
            "generator.epochs" => self.generator.epochs = parse_as(key, value)?,
            "generator.batch" => self.generator.batch_size = parse_as(key, value)?,
            "generator.lr" => self.generator.learning_rate = parse_as(key, value)?,
            "generator.optimizer" => self.generator.optimizer = parse_as(key, value)?,
            "generator.schedule" => self.generator.schedule = parse_as(key, value)?,
            "generator.warmup" => self.generator.warmup_steps = parse_as(key, value)?,
            "generator.seed" => self.generator.seed = parse_as(key, value)?,
            "generator.eval_n" => self.generator.eval_n = parse_as(key, value)?,

            "teacher.pool" => self.teacher_pool = parse_as(key, value)?,
            "teacher.epochs" => self.teacher.epochs = parse_as(key, value)?,
            "teacher.batch" => self.teacher.batch_size = parse_as(key, value)?,
            "teacher.lr" => self.teacher.learning_rate = parse_as(key, value)?,
            "teacher.optimizer" => self.teacher.optimizer = parse_as(key, value)?,
            "teacher.schedule" => self.teacher.schedule = parse_as(key, value)?,
            "teacher.warmup" => self.teacher.warmup_steps = parse_as(key, value)?,
            "teacher.seed" => self.teacher.seed = parse_as(key, value)?,
            "teacher.eval_n" => self.teacher.eval_n = parse_as(key, value)?,
            "teacher.temperature" => self.teacher.temperature = parse_as(key, value)?,

            "student.n" => self.student_n = parse_as(key, value)?,
            "student.method" => self.student.method = parse_as(key, value)?,
            "student.epochs" => self.student.epochs = parse_as(key, value)?,
            "student.batch" => self.student.batch_size = parse_as(key, value)?,
            "student.lr" => self.student.learning_rate = parse_as(key, value)?,
            "student.optimizer" => self.student.optimizer = parse_as(key, value)?,
            "student.momentum" => self.student.momentum = parse_as(key, value)?,
            "student.schedule" => self.student.schedule = parse_as(key, value)?,
            "student.warmup" => self.student.warmup_steps = parse_as(key, value)?,
            "student.seed" => self.student.seed = parse_as(key, value)?,
            "student.eval_n" => self.student.eval_n = parse_as(key, value)?,
            "student.temperature" => self.student.temperature = parse_as(key, value)?,
            "student.tilde_refresh" => self.student.tilde_refresh = parse_as(key, value)?,
            "student.weights" => {
                let w: Vec<f64> = parse_list(key, value)?;
                if w.len() != 3 {
                    return Err(Error::Parse(format!(
                        "config key `{key}` expects three comma-separated weights"
                    )));
                }
                self.student.term_weights = (w[0], w[1], w[2]);
            }

            "explore.sigma" => self.student.explore.sigma = parse_as(key, value)?,
            "explore.eta" => self.student.explore.eta = parse_as(key, value)?,
            "explore.steps" => self.student.explore.steps = parse_as(key, value)?,
            "explore.per_example" => {
                self.student.explore.per_example_count = parse_as(key, value)?
            }
            "explore.pre_jitter" => self.student.explore.pre_jitter = parse_bool(key, value)?,

            "sweep.methods" => self.sweep_methods = parse_list(key, value)?,
            "sweep.n_grid" => self.sweep_n_grid = parse_list(key, value)?,
            "sweep.seeds" => self.sweep_seeds = parse_list(key, value)?,
            "sweep.eval_n" => self.sweep_eval_n = parse_as(key, value)?,

            "bounds.samples" => self.bounds_samples = parse_as(key, value)?,
            "bounds.pair_n" => self.bounds_pair_n = parse_as(key, value)?,
            "bounds.num_sigma" => self.bounds_num_sigma = parse_as(key, value)?,
            "bounds.class_draws" => self.bounds_class_draws = parse_as(key, value)?,
            "bounds.log_m" => self.bounds_log_m = parse_as(key, value)?,
            "bounds.delta" => self.bounds_delta = parse_as(key, value)?,
            "bounds.sigma" => self.bounds_sigma = parse_as(key, value)?,
            "bounds.seed" => self.bounds_seed = parse_as(key, value)?,

            "paths.encoder" => self.paths_encoder = Some(PathBuf::from(value)),
            "paths.decoder" => self.paths_decoder = Some(PathBuf::from(value)),
            "paths.teacher" => self.paths_teacher = Some(PathBuf::from(value)),
            "paths.student" => self.paths_student = Some(PathBuf::from(value)),
            "out" => self.out = Some(PathBuf::from(value)),

            _ => {
                return Err(Error::Parse(format!("unknown config key `{key}`")));
            }
        }
        Ok(())
    }

    /// Parse a config file: one `key = value` per line, `#` comments and
    /// blank lines allowed.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Parse(format!(
                    "{}:{}: expected `key = value`, found `{raw}`",
                    path.display(),
                    lineno + 1
                ))
            })?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    /// Apply a repeated `--set key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment.split_once('=').ok_or_else(|| {
            Error::Parse(format!("--set expects key=value, found `{assignment}`"))
        })?;
        self.set(key.trim(), value)
    }

    /// Every key in schema order with its current value; doubles as the
    /// config echo embedded in reports.
    pub fn to_lines(&self) -> String {
        let p = |o: &Option<PathBuf>| {
            o.as_ref().map_or(String::new(), |v| v.display().to_string())
        };
        let list_us = |v: &[usize]| {
            v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
        };
        let list_u64 = |v: &[u64]| {
            v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
        };
        let methods = self
            .sweep_methods
            .iter()
            .map(|m| m.to_string())
            .collect::<Vec<_>>()
            .join(",");
        let train = |name: &str, cfg: &TrainConfig| {
            format!(
                "{name}.epochs = {}\n{name}.batch = {}\n{name}.lr = {}\n\
                 {name}.optimizer = {}\n{name}.schedule = {}\n{name}.warmup = {}\n\
                 {name}.seed = {}\n{name}.eval_n = {}\n",
                cfg.epochs,
                cfg.batch_size,
                cfg.learning_rate,
                cfg.optimizer,
                cfg.schedule,
                cfg.warmup_steps,
                cfg.seed,
                cfg.eval_n
            )
        };
        let mut s = String::new();
        s.push_str(&format!(
            "task.seed = {}\ntask.d = {}\ntask.ambient_dim = {}\ntask.classes = {}\n\
             task.noise = {}\ntask.label_temperature = {}\ntask.prior_exponent = {}\n",
            self.task_seed,
            self.task.latent_dim,
            self.task.ambient_dim,
            self.task.classes,
            self.task.ambient_noise,
            self.task.label_temperature,
            self.task.class_prior_exponent
        ));
        s.push_str(&format!(
            "data.n = {}\ndata.labeled = {}\ndata.seed = {}\n",
            self.data_n, self.data_labeled, self.data_seed
        ));
        s.push_str(&format!("generator.pool = {}\n", self.generator_pool));
        s.push_str(&train("generator", &self.generator));
        s.push_str(&format!("teacher.pool = {}\n", self.teacher_pool));
        s.push_str(&train("teacher", &self.teacher));
        s.push_str(&format!("teacher.temperature = {}\n", self.teacher.temperature));
        s.push_str(&format!("student.n = {}\nstudent.method = {}\n", self.student_n, self.student.method));
        s.push_str(&train("student", &self.student));
        s.push_str(&format!(
            "student.momentum = {}\nstudent.temperature = {}\nstudent.weights = {},{},{}\n\
             student.tilde_refresh = {}\n",
            self.student.momentum,
            self.student.temperature,
            self.student.term_weights.0,
            self.student.term_weights.1,
            self.student.term_weights.2,
            match self.student.tilde_refresh {
                TildeRefresh::Epoch => "epoch",
                TildeRefresh::Step => "step",
            }
        ));
        let e: &ExploreConfig = &self.student.explore;
        s.push_str(&format!(
            "explore.sigma = {}\nexplore.eta = {}\nexplore.steps = {}\n\
             explore.per_example = {}\nexplore.pre_jitter = {}\n",
            e.sigma, e.eta, e.steps, e.per_example_count, e.pre_jitter
        ));
        s.push_str(&format!(
            "sweep.methods = {methods}\nsweep.n_grid = {}\nsweep.seeds = {}\nsweep.eval_n = {}\n",
            list_us(&self.sweep_n_grid),
            list_u64(&self.sweep_seeds),
            self.sweep_eval_n
        ));
        s.push_str(&format!(
            "bounds.samples = {}\nbounds.pair_n = {}\nbounds.num_sigma = {}\n\
             bounds.class_draws = {}\nbounds.log_m = {}\nbounds.delta = {}\n\
             bounds.sigma = {}\nbounds.seed = {}\n",
            self.bounds_samples,
            self.bounds_pair_n,
            self.bounds_num_sigma,
            self.bounds_class_draws,
            self.bounds_log_m,
            self.bounds_delta,
            self.bounds_sigma,
            self.bounds_seed
        ));
        s.push_str(&format!(
            "paths.encoder = {}\npaths.decoder = {}\npaths.teacher = {}\npaths.student = {}\n",
            p(&self.paths_encoder),
            p(&self.paths_decoder),
            p(&self.paths_teacher),
            p(&self.paths_student)
        ));
        s.push_str(&format!("out = {}\n", p(&self.out)));
        s
    }
}

// Method/OptimizerKind/Schedule/TildeRefresh already implement FromStr in
// the core crate, which `parse_as` relies on.
