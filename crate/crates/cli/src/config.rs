//! Flat `key = value` experiment configuration.
//!
//! One pair per line, `#` starts a comment, dotted keys group related
//! settings. Every key has a default except the required ones; unknown and
//! repeated keys are errors.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use modeconn::data::RotationSchedule;
use modeconn::learners::{Algorithm, McConfig, McInit, SgdConfig};

pub const REQUIRED_KEYS: [&str; 4] = ["benchmark", "num_tasks", "seed", "learner"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub key: Option<String>,
    pub message: String,
}

impl ConfigError {
    fn at(line: Option<usize>, key: &str, message: impl Into<String>) -> Self {
        ConfigError {
            line,
            key: Some(key.to_string()),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.line, &self.key) {
            (Some(l), Some(k)) => write!(f, "line {l}: {k}: {}", self.message),
            (Some(l), None) => write!(f, "line {l}: {}", self.message),
            (None, Some(k)) => write!(f, "{k}: {}", self.message),
            (None, None) => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Benchmark {
    Rotated,
    Permuted,
    CrossDataset,
}

impl Benchmark {
    pub fn name(self) -> &'static str {
        match self {
            Benchmark::Rotated => "rotated",
            Benchmark::Permuted => "permuted",
            Benchmark::CrossDataset => "cross_dataset",
        }
    }
}

impl FromStr for Benchmark {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "rotated" => Ok(Benchmark::Rotated),
            "permuted" => Ok(Benchmark::Permuted),
            "cross_dataset" => Ok(Benchmark::CrossDataset),
            _ => Err(format!("expected rotated, permuted or cross_dataset, got '{s}'")),
        }
    }
}

/// A learner selected for a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Learner {
    Baseline(Algorithm),
    /// Continual chain, multitask chain and (optionally) MC chain from one `ŵ₁`.
    Family,
}

impl Learner {
    pub fn name(self) -> &'static str {
        match self {
            Learner::Baseline(a) => a.name(),
            Learner::Family => "family",
        }
    }
}

impl FromStr for Learner {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "family" {
            return Ok(Learner::Family);
        }
        s.parse::<Algorithm>()
            .map(Learner::Baseline)
            .map_err(|_| format!("unknown learner '{s}' (expected naive, stable, ewc, agem, er, mc or family)"))
    }
}

/// Checkpoint names plus the task whose data the analysis uses.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AnalysisRequest {
    pub checkpoints: Vec<String>,
    pub task: usize,
}

impl AnalysisRequest {
    /// File-name stem: checkpoint names joined by `-`.
    pub fn stem(&self) -> String {
        self.checkpoints.join("-")
    }
}

impl fmt::Display for AnalysisRequest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.checkpoints.join(":"), self.task)
    }
}

fn parse_request(item: &str, arity: usize) -> Result<AnalysisRequest, String> {
    let (names, task) = match item.split_once('@') {
        Some((n, t)) => (n, t.trim().parse::<usize>().map_err(|_| format!("bad task id in '{item}'"))?),
        None => (item, 1),
    };
    if task == 0 {
        return Err(format!("task ids start at 1 in '{item}'"));
    }
    let checkpoints: Vec<String> = names.split(':').map(|s| s.trim().to_string()).collect();
    if checkpoints.len() != arity || checkpoints.iter().any(|c| c.is_empty()) {
        return Err(format!("'{item}' must name {arity} checkpoint(s) separated by ':'"));
    }
    Ok(AnalysisRequest { checkpoints, task })
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnalysisConfig {
    pub interp: Vec<AnalysisRequest>,
    pub interp_points: usize,
    pub plane: Vec<AnalysisRequest>,
    pub plane_resolution: usize,
    pub plane_margin: f64,
    pub cka: Vec<AnalysisRequest>,
    pub distances: Vec<String>,
    pub spectrum: Vec<AnalysisRequest>,
    pub spectrum_k: usize,
    pub spectrum_samples: usize,
    pub spectrum_iters: usize,
    pub spectrum_tol: f64,
    pub overlap: Vec<AnalysisRequest>,
    pub taylor: Vec<AnalysisRequest>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            interp: Vec::new(),
            interp_points: modeconn::analysis::DEFAULT_INTERP_POINTS,
            plane: Vec::new(),
            plane_resolution: modeconn::analysis::DEFAULT_PLANE_RESOLUTION,
            plane_margin: modeconn::analysis::DEFAULT_PLANE_MARGIN,
            cka: Vec::new(),
            distances: Vec::new(),
            spectrum: Vec::new(),
            spectrum_k: 50,
            spectrum_samples: modeconn::analysis::SPECTRUM_SAMPLE_SIZE,
            spectrum_iters: modeconn::eigen::DEFAULT_MAX_ITERS,
            spectrum_tol: modeconn::eigen::DEFAULT_TOL,
            overlap: Vec::new(),
            taylor: Vec::new(),
        }
    }
}

/// Modifications applied to one task of the stream.
#[derive(Clone, Debug, PartialEq)]
pub struct BreakingConfig {
    pub task: usize,
    pub label_corrupt: f64,
    pub noise_mean: f64,
    pub noise_std: f64,
    /// Classes whose task-1 examples are left out of the multitask training set.
    pub multitask_removed_classes: usize,
}

impl Default for BreakingConfig {
    fn default() -> Self {
        BreakingConfig {
            task: 2,
            label_corrupt: 0.0,
            noise_mean: 0.0,
            noise_std: 0.0,
            multitask_removed_classes: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub benchmark: Benchmark,
    pub num_tasks: usize,
    pub seed: u64,
    pub learners: Vec<Learner>,
    pub hidden: usize,
    pub mnist_dir: PathBuf,
    pub fashion_dir: PathBuf,
    /// Keep only the first `n` examples of each base training set.
    pub train_examples: Option<usize>,
    /// Keep only the first `n` examples of each base test set.
    pub test_examples: Option<usize>,
    pub rotation: RotationSchedule,
    pub cross_sequence: Vec<String>,
    pub breaking: BreakingConfig,
    pub naive: SgdConfig,
    pub stable: SgdConfig,
    pub ewc: SgdConfig,
    pub ewc_lambda: f64,
    pub ewc_samples: usize,
    pub agem: SgdConfig,
    pub agem_ref_size: usize,
    pub er: SgdConfig,
    /// Stored examples per class per task for A-GEM, ER and MC-SGD.
    pub memory_per_class: usize,
    pub mc: McConfig,
    pub family: SgdConfig,
    pub family_multitask: SgdConfig,
    pub family_mc: bool,
    pub analysis: AnalysisConfig,
    pub output_dir: PathBuf,
    pub save_checkpoints: bool,
}

impl ExperimentConfig {
    /// Defaults for every optional key around the given required values.
    pub fn new(benchmark: Benchmark, num_tasks: usize, seed: u64, learners: Vec<Learner>) -> Self {
        ExperimentConfig {
            benchmark,
            num_tasks,
            seed,
            learners,
            hidden: 100,
            mnist_dir: PathBuf::from("data/mnist"),
            fashion_dir: PathBuf::from("data/fashion"),
            train_examples: None,
            test_examples: None,
            rotation: RotationSchedule::Incremental { step: 22.5 },
            cross_sequence: vec!["mnist".into(), "fashion".into()],
            breaking: BreakingConfig::default(),
            naive: Algorithm::Naive.default_sgd(),
            stable: Algorithm::Stable.default_sgd(),
            ewc: Algorithm::Ewc.default_sgd(),
            ewc_lambda: 10.0,
            ewc_samples: 1024,
            agem: Algorithm::Agem.default_sgd(),
            agem_ref_size: 256,
            er: Algorithm::Er.default_sgd(),
            memory_per_class: 1,
            mc: McConfig::defaults(Algorithm::Mc.default_sgd(), 1),
            family: SgdConfig::plain(0.1, 64, 1),
            family_multitask: SgdConfig::plain(0.1, 64, 1),
            family_mc: false,
            analysis: AnalysisConfig::default(),
            output_dir: PathBuf::from("out"),
            save_checkpoints: true,
        }
    }

    /// Every key with its value, in canonical order.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = Vec::new();
        let mut put = |k: &str, v: String| out.push((k.to_string(), v));
        put("benchmark", self.benchmark.name().into());
        put("num_tasks", self.num_tasks.to_string());
        put("seed", self.seed.to_string());
        put("learner", self.learners.iter().map(|l| l.name()).collect::<Vec<_>>().join(","));
        put("model.hidden", self.hidden.to_string());
        put("data.mnist", self.mnist_dir.display().to_string());
        put("data.fashion", self.fashion_dir.display().to_string());
        put("data.train_examples", opt(self.train_examples));
        put("data.test_examples", opt(self.test_examples));
        let (schedule, step) = match self.rotation {
            RotationSchedule::Incremental { step } => ("incremental", step),
            RotationSchedule::Random => ("random", 22.5),
        };
        put("rotation.schedule", schedule.into());
        put("rotation.step", step.to_string());
        put("cross.sequence", self.cross_sequence.join(","));
        put("breaking.task", self.breaking.task.to_string());
        put("breaking.label_corrupt", self.breaking.label_corrupt.to_string());
        put("breaking.noise_mean", self.breaking.noise_mean.to_string());
        put("breaking.noise_std", self.breaking.noise_std.to_string());
        put(
            "breaking.multitask_removed_classes",
            self.breaking.multitask_removed_classes.to_string(),
        );
        for (prefix, sgd) in self.sgd_sections() {
            put(&format!("{prefix}.lr"), sgd.learning_rate.to_string());
            put(&format!("{prefix}.lr_decay"), sgd.lr_decay_per_task.to_string());
            put(&format!("{prefix}.batch_size"), sgd.batch_size.to_string());
            put(&format!("{prefix}.epochs"), sgd.epochs_per_task.to_string());
            put(&format!("{prefix}.dropout"), sgd.dropout_rate.to_string());
        }
        put("learner.ewc.lambda", self.ewc_lambda.to_string());
        put("learner.ewc.fisher_samples", self.ewc_samples.to_string());
        put("learner.agem.ref_size", self.agem_ref_size.to_string());
        put("learner.memory_per_class", self.memory_per_class.to_string());
        put("learner.mc.mc_lr", self.mc.learning_rate.to_string());
        put("learner.mc.n_points", self.mc.n_points.to_string());
        put("learner.mc.init", init_name(self.mc.init).into());
        put("learner.mc.mc_epochs", self.mc.epochs.to_string());
        put("learner.mc.task_examples", opt(self.mc.task_examples));
        put("learner.family.mc", self.family_mc.to_string());
        let a = &self.analysis;
        put("analysis.interp", requests(&a.interp));
        put("analysis.interp_points", a.interp_points.to_string());
        put("analysis.plane", requests(&a.plane));
        put("analysis.plane_resolution", a.plane_resolution.to_string());
        put("analysis.plane_margin", a.plane_margin.to_string());
        put("analysis.cka", requests(&a.cka));
        put("analysis.distances", a.distances.join(","));
        put("analysis.spectrum", requests(&a.spectrum));
        put("analysis.spectrum_k", a.spectrum_k.to_string());
        put("analysis.spectrum_samples", a.spectrum_samples.to_string());
        put("analysis.spectrum_iters", a.spectrum_iters.to_string());
        put("analysis.spectrum_tol", a.spectrum_tol.to_string());
        put("analysis.overlap", requests(&a.overlap));
        put("analysis.taylor", requests(&a.taylor));
        put("output.dir", self.output_dir.display().to_string());
        put("output.save_checkpoints", self.save_checkpoints.to_string());
        out
    }

    fn sgd_sections(&self) -> [(&'static str, &SgdConfig); 8] {
        [
            ("learner.naive", &self.naive),
            ("learner.stable", &self.stable),
            ("learner.ewc", &self.ewc),
            ("learner.agem", &self.agem),
            ("learner.er", &self.er),
            ("learner.mc", &self.mc.sgd),
            ("learner.family", &self.family),
            ("learner.multitask", &self.family_multitask),
        ]
    }

    /// Canonical text form; parsing it gives back an equal config.
    pub fn emit(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.to_pairs() {
            s.push_str(&k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        }
        s
    }

    /// 64-bit FNV-1a of the canonical text.
    /// FNV-1a over the canonical settings. The `output.*` keys are left out
    /// so the same experiment written to two directories shares a hash.
    pub fn hash(&self) -> u64 {
        use std::hash::Hasher;
        let mut h = fnv::FnvHasher::default();
        for (k, v) in self.to_pairs() {
            if !k.starts_with("output.") {
                h.write(format!("{k} = {v}\n").as_bytes());
            }
        }
        h.finish()
    }

    /// Algorithms whose hyperparameters feed a baseline run.
    pub fn sgd_for(&self, algo: Algorithm) -> SgdConfig {
        match algo {
            Algorithm::Naive => self.naive,
            Algorithm::Stable => self.stable,
            Algorithm::Ewc => self.ewc,
            Algorithm::Agem => self.agem,
            Algorithm::Er => self.er,
            Algorithm::Mc => self.mc.sgd,
        }
    }

    /// Names of every checkpoint a run of this config produces.
    pub fn produced_checkpoints(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        for l in &self.learners {
            for t in 1..=self.num_tasks {
                match l {
                    Learner::Family => {
                        out.insert(format!("hat_w_{t}"));
                        if t >= 2 {
                            out.insert(format!("star_w_{t}"));
                        }
                        if self.family_mc {
                            out.insert(format!("bar_w_{t}"));
                            if t >= 2 {
                                out.insert(format!("mc_hat_w_{t}"));
                            }
                        }
                    }
                    Learner::Baseline(a) => {
                        out.insert(format!("{}_w_{t}", a.name()));
                        if *a == Algorithm::Mc && t >= 2 {
                            out.insert(format!("mc_hat_w_{t}"));
                        }
                    }
                }
            }
        }
        out
    }
}

fn opt(v: Option<usize>) -> String {
    v.map_or_else(|| "none".to_string(), |n| n.to_string())
}

fn requests(r: &[AnalysisRequest]) -> String {
    r.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn init_name(i: McInit) -> &'static str {
    match i {
        McInit::Midpoint => "midpoint",
        McInit::AtCurrent => "current",
        McInit::AtPrevious => "previous",
    }
}

/// One-line description of a key, shown by `--help`.
pub fn key_help(key: &str) -> &'static str {
    match key {
        "benchmark" => "rotated | permuted | cross_dataset (required)",
        "num_tasks" => "number of tasks in the stream (required)",
        "seed" => "master seed for every random stream (required)",
        "learner" => "comma list of naive, stable, ewc, agem, er, mc, family (required)",
        "model.hidden" => "width of both hidden layers",
        "data.mnist" | "data.fashion" => "directory holding the IDX train/t10k files",
        "data.train_examples" => "keep the first n training examples of each base dataset, or none",
        "data.test_examples" => "keep the first n test examples of each base dataset, or none",
        "rotation.schedule" => "incremental | random",
        "rotation.step" => "degrees between consecutive incremental rotations",
        "cross.sequence" => "dataset per task for cross_dataset (mnist, fashion)",
        "breaking.task" => "task receiving the corruptions below",
        "breaking.label_corrupt" => "fraction of that task's training labels replaced",
        "breaking.noise_mean" | "breaking.noise_std" => "Gaussian pixel noise on that task (off when both are 0)",
        "breaking.multitask_removed_classes" => "classes dropped from task 1 in the multitask training set",
        "learner.ewc.lambda" => "EWC penalty strength",
        "learner.ewc.fisher_samples" => "examples per Fisher estimate",
        "learner.agem.ref_size" => "maximum A-GEM reference batch",
        "learner.memory_per_class" => "stored examples per class per task (A-GEM, ER, MC-SGD)",
        "learner.mc.mc_lr" => "learning rate of the line-objective phase",
        "learner.mc.n_points" => "interior points on the MC-SGD line",
        "learner.mc.init" => "midpoint | current | previous",
        "learner.mc.mc_epochs" => "passes of the line-objective phase",
        "learner.mc.task_examples" => "restrict the line-objective phase to n task examples, or none",
        "learner.family.mc" => "also run the MC-SGD chain inside the family",
        "analysis.interp" => "a:b@task list; loss/accuracy along the segment",
        "analysis.interp_points" => "points per interpolation curve",
        "analysis.plane" => "a:b:c@task list; loss over the plane through three checkpoints",
        "analysis.plane_resolution" => "grid points per plane axis",
        "analysis.plane_margin" => "plane margin as a fraction of the anchor extent",
        "analysis.cka" => "a:b@task list; layer CKA on that task's test probe",
        "analysis.distances" => "checkpoint list for the distance matrix",
        "analysis.spectrum" => "ckpt@task list; Hessian spectrum on that task's training sample",
        "analysis.spectrum_k" => "eigenpairs per spectrum",
        "analysis.spectrum_samples" => "training examples per spectrum",
        "analysis.spectrum_iters" => "power-iteration cap per eigenpair",
        "analysis.spectrum_tol" => "relative eigenvalue tolerance",
        "analysis.overlap" => "a:b@task list; |cos| of b-a against the spectrum at a",
        "analysis.taylor" => "a:b@task list; task loss increase vs the quadratic estimate",
        "output.dir" => "output directory",
        "output.save_checkpoints" => "write every checkpoint under output.dir/checkpoints",
        k if k.ends_with(".lr") => "learning rate",
        k if k.ends_with(".lr_decay") => "per-task learning-rate decay factor",
        k if k.ends_with(".batch_size") => "mini-batch size",
        k if k.ends_with(".epochs") => "epochs per task",
        k if k.ends_with(".dropout") => "dropout rate",
        _ => "",
    }
}

/// Every key with its default and description.
pub fn documented_defaults() -> String {
    let d = ExperimentConfig::new(Benchmark::Rotated, 20, 0, vec![Learner::Baseline(Algorithm::Mc)]);
    let mut s = String::new();
    for (k, v) in d.to_pairs() {
        let v = if REQUIRED_KEYS.contains(&k.as_str()) { "<required>".to_string() } else { v };
        s.push_str(&format!("  {k} = {v}\n      {}\n", key_help(&k)));
    }
    s
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
        line: None,
        key: None,
        message: format!("cannot read {}: {e}", path.display()),
    })?;
    parse_str(&text)
}

struct Raw {
    values: BTreeMap<String, (String, usize)>,
}

impl Raw {
    fn line(&self, key: &str) -> Option<usize> {
        self.values.get(key).map(|(_, l)| *l)
    }

    fn get<T: FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError>
    where
        T::Err: fmt::Display,
    {
        match self.values.get(key) {
            None => Ok(default),
            Some((v, l)) => v
                .parse::<T>()
                .map_err(|e| ConfigError::at(Some(*l), key, format!("cannot parse '{v}': {e}"))),
        }
    }

    fn get_opt(&self, key: &str, default: Option<usize>) -> Result<Option<usize>, ConfigError> {
        match self.values.get(key) {
            None => Ok(default),
            Some((v, _)) if v == "none" => Ok(None),
            Some(_) => self.get::<usize>(key, 0).map(Some),
        }
    }

    fn get_list(&self, key: &str) -> Vec<String> {
        match self.values.get(key) {
            None => Vec::new(),
            Some((v, _)) => v
                .split(',')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect(),
        }
    }

    fn get_requests(&self, key: &str, arity: usize) -> Result<Vec<AnalysisRequest>, ConfigError> {
        self.get_list(key)
            .iter()
            .map(|item| parse_request(item, arity).map_err(|e| ConfigError::at(self.line(key), key, e)))
            .collect()
    }

    fn get_sgd(&self, prefix: &str, d: SgdConfig) -> Result<SgdConfig, ConfigError> {
        let sgd = SgdConfig {
            learning_rate: self.get(&format!("{prefix}.lr"), d.learning_rate)?,
            lr_decay_per_task: self.get(&format!("{prefix}.lr_decay"), d.lr_decay_per_task)?,
            batch_size: self.get(&format!("{prefix}.batch_size"), d.batch_size)?,
            epochs_per_task: self.get(&format!("{prefix}.epochs"), d.epochs_per_task)?,
            dropout_rate: self.get(&format!("{prefix}.dropout"), d.dropout_rate)?,
        };
        sgd.validate()
            .map_err(|e| ConfigError::at(self.line(&format!("{prefix}.lr")), prefix, e.to_string()))?;
        Ok(sgd)
    }
}

pub fn parse_str(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let known: BTreeSet<String> = ExperimentConfig::new(Benchmark::Rotated, 1, 0, Vec::new())
        .to_pairs()
        .into_iter()
        .map(|(k, _)| k)
        .collect();
    let mut raw = Raw { values: BTreeMap::new() };
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((k, v)) = content.split_once('=') else {
            return Err(ConfigError {
                line: Some(n),
                key: None,
                message: format!("expected key = value, got '{content}'"),
            });
        };
        let (k, v) = (k.trim(), v.trim());
        if !known.contains(k) {
            return Err(ConfigError::at(Some(n), k, "unknown key"));
        }
        if let Some((_, first)) = raw.values.get(k) {
            return Err(ConfigError::at(
                Some(n),
                k,
                format!("duplicate key: first set on line {first}, again on line {n}"),
            ));
        }
        raw.values.insert(k.to_string(), (v.to_string(), n));
    }
    for k in REQUIRED_KEYS {
        if !raw.values.contains_key(k) {
            return Err(ConfigError::at(None, k, "missing required key"));
        }
    }

    let benchmark: Benchmark = raw.get("benchmark", Benchmark::Rotated)?;
    let num_tasks: usize = raw.get("num_tasks", 1)?;
    let seed: u64 = raw.get("seed", 0)?;
    let learners = raw
        .get_list("learner")
        .iter()
        .map(|s| s.parse::<Learner>().map_err(|e| ConfigError::at(raw.line("learner"), "learner", e)))
        .collect::<Result<Vec<_>, _>>()?;
    let mut c = ExperimentConfig::new(benchmark, num_tasks, seed, learners);

    c.hidden = raw.get("model.hidden", c.hidden)?;
    c.mnist_dir = raw.get("data.mnist", c.mnist_dir.clone())?;
    c.fashion_dir = raw.get("data.fashion", c.fashion_dir.clone())?;
    c.train_examples = raw.get_opt("data.train_examples", c.train_examples)?;
    c.test_examples = raw.get_opt("data.test_examples", c.test_examples)?;
    let step: f64 = raw.get("rotation.step", 22.5)?;
    c.rotation = match raw.get::<String>("rotation.schedule", "incremental".into())?.as_str() {
        "incremental" => RotationSchedule::Incremental { step },
        "random" => RotationSchedule::Random,
        other => {
            return Err(ConfigError::at(
                raw.line("rotation.schedule"),
                "rotation.schedule",
                format!("expected incremental or random, got '{other}'"),
            ))
        }
    };
    if raw.values.contains_key("cross.sequence") {
        c.cross_sequence = raw.get_list("cross.sequence");
    }
    c.breaking = BreakingConfig {
        task: raw.get("breaking.task", c.breaking.task)?,
        label_corrupt: raw.get("breaking.label_corrupt", 0.0)?,
        noise_mean: raw.get("breaking.noise_mean", 0.0)?,
        noise_std: raw.get("breaking.noise_std", 0.0)?,
        multitask_removed_classes: raw.get("breaking.multitask_removed_classes", 0)?,
    };
    c.naive = raw.get_sgd("learner.naive", c.naive)?;
    c.stable = raw.get_sgd("learner.stable", c.stable)?;
    c.ewc = raw.get_sgd("learner.ewc", c.ewc)?;
    c.agem = raw.get_sgd("learner.agem", c.agem)?;
    c.er = raw.get_sgd("learner.er", c.er)?;
    c.family = raw.get_sgd("learner.family", c.family)?;
    c.family_multitask = raw.get_sgd("learner.multitask", c.family_multitask)?;
    c.ewc_lambda = raw.get("learner.ewc.lambda", c.ewc_lambda)?;
    c.ewc_samples = raw.get("learner.ewc.fisher_samples", c.ewc_samples)?;
    c.agem_ref_size = raw.get("learner.agem.ref_size", c.agem_ref_size)?;
    c.memory_per_class = raw.get("learner.memory_per_class", c.memory_per_class)?;
    c.mc = McConfig {
        sgd: raw.get_sgd("learner.mc", c.mc.sgd)?,
        learning_rate: raw.get("learner.mc.mc_lr", c.mc.learning_rate)?,
        n_points: raw.get("learner.mc.n_points", c.mc.n_points)?,
        per_class: c.memory_per_class,
        init: match raw.get::<String>("learner.mc.init", "midpoint".into())?.as_str() {
            "midpoint" => McInit::Midpoint,
            "current" => McInit::AtCurrent,
            "previous" => McInit::AtPrevious,
            other => {
                return Err(ConfigError::at(
                    raw.line("learner.mc.init"),
                    "learner.mc.init",
                    format!("expected midpoint, current or previous, got '{other}'"),
                ))
            }
        },
        epochs: raw.get("learner.mc.mc_epochs", c.mc.epochs)?,
        task_examples: raw.get_opt("learner.mc.task_examples", c.mc.task_examples)?,
    };
    c.family_mc = raw.get("learner.family.mc", c.family_mc)?;
    let d = AnalysisConfig::default();
    c.analysis = AnalysisConfig {
        interp: raw.get_requests("analysis.interp", 2)?,
        interp_points: raw.get("analysis.interp_points", d.interp_points)?,
        plane: raw.get_requests("analysis.plane", 3)?,
        plane_resolution: raw.get("analysis.plane_resolution", d.plane_resolution)?,
        plane_margin: raw.get("analysis.plane_margin", d.plane_margin)?,
        cka: raw.get_requests("analysis.cka", 2)?,
        distances: raw.get_list("analysis.distances"),
        spectrum: raw.get_requests("analysis.spectrum", 1)?,
        spectrum_k: raw.get("analysis.spectrum_k", d.spectrum_k)?,
        spectrum_samples: raw.get("analysis.spectrum_samples", d.spectrum_samples)?,
        spectrum_iters: raw.get("analysis.spectrum_iters", d.spectrum_iters)?,
        spectrum_tol: raw.get("analysis.spectrum_tol", d.spectrum_tol)?,
        overlap: raw.get_requests("analysis.overlap", 2)?,
        taylor: raw.get_requests("analysis.taylor", 2)?,
    };
    c.output_dir = raw.get("output.dir", c.output_dir.clone())?;
    c.save_checkpoints = raw.get("output.save_checkpoints", c.save_checkpoints)?;
    validate(&c, &raw)?;
    Ok(c)
}

fn validate(c: &ExperimentConfig, raw: &Raw) -> Result<(), ConfigError> {
    let fail = |key: &str, msg: String| Err(ConfigError::at(raw.line(key), key, msg));
    if c.num_tasks < 1 {
        return fail("num_tasks", "must be at least 1".into());
    }
    if c.learners.is_empty() {
        return fail("learner", "select at least one learner".into());
    }
    let mut seen = BTreeSet::new();
    for l in &c.learners {
        if !seen.insert(*l) {
            return fail("learner", format!("'{}' listed twice", l.name()));
        }
    }
    if c.hidden < 1 {
        return fail("model.hidden", "must be at least 1".into());
    }
    if c.benchmark == Benchmark::CrossDataset {
        if c.cross_sequence.len() != c.num_tasks {
            return fail(
                "cross.sequence",
                format!("names {} datasets but num_tasks is {}", c.cross_sequence.len(), c.num_tasks),
            );
        }
        if let Some(bad) = c.cross_sequence.iter().find(|n| *n != "mnist" && *n != "fashion") {
            return fail("cross.sequence", format!("unknown dataset '{bad}' (expected mnist or fashion)"));
        }
    }
    if let RotationSchedule::Incremental { step } = c.rotation {
        if !(step >= 0.0 && step * (c.num_tasks as f64 - 1.0) <= 180.0) {
            return fail("rotation.step", format!("{step} degrees per task exceeds 180 degrees over the stream"));
        }
    }
    let b = &c.breaking;
    if b.task < 1 || b.task > c.num_tasks {
        let touched = b.label_corrupt > 0.0 || b.noise_std > 0.0 || b.noise_mean != 0.0;
        if touched {
            return fail("breaking.task", format!("task {} outside 1..={}", b.task, c.num_tasks));
        }
    }
    if !(0.0..=1.0).contains(&b.label_corrupt) {
        return fail("breaking.label_corrupt", "must lie in [0, 1]".into());
    }
    if !(b.noise_std >= 0.0 && b.noise_std.is_finite() && b.noise_mean.is_finite()) {
        return fail("breaking.noise_std", "noise parameters must be finite with std >= 0".into());
    }
    if b.multitask_removed_classes >= 10 {
        return fail("breaking.multitask_removed_classes", "must leave at least one class".into());
    }
    if b.multitask_removed_classes > 0 && !c.learners.contains(&Learner::Family) {
        return fail("breaking.multitask_removed_classes", "only affects the family learner".into());
    }
    if c.memory_per_class < 1 {
        return fail("learner.memory_per_class", "must be at least 1".into());
    }
    c.mc.validate()
        .map_err(|e| ConfigError::at(raw.line("learner.mc.n_points"), "learner.mc", e.to_string()))?;
    if c.family_mc && c.learners.contains(&Learner::Baseline(Algorithm::Mc)) {
        return fail("learner.family.mc", "the mc learner and learner.family.mc cannot run together".into());
    }
    let a = &c.analysis;
    if a.interp_points < 2 {
        return fail("analysis.interp_points", "must be at least 2".into());
    }
    if a.plane_resolution < 2 {
        return fail("analysis.plane_resolution", "must be at least 2".into());
    }
    if !(a.plane_margin >= 0.0 && a.plane_margin.is_finite()) {
        return fail("analysis.plane_margin", "must be finite and non-negative".into());
    }
    if a.spectrum_k < 1 || a.spectrum_samples < 1 || a.spectrum_iters < 1 || !(a.spectrum_tol > 0.0) {
        return fail("analysis.spectrum_k", "spectrum settings must be positive".into());
    }
    let produced = c.produced_checkpoints();
    let lists: [(&str, &[AnalysisRequest]); 6] = [
        ("analysis.interp", &a.interp),
        ("analysis.plane", &a.plane),
        ("analysis.cka", &a.cka),
        ("analysis.spectrum", &a.spectrum),
        ("analysis.overlap", &a.overlap),
        ("analysis.taylor", &a.taylor),
    ];
    for (key, reqs) in lists {
        let mut stems = BTreeSet::new();
        for r in reqs {
            if r.task > c.num_tasks {
                return fail(key, format!("'{r}' refers to task {} of {}", r.task, c.num_tasks));
            }
            if let Some(missing) = r.checkpoints.iter().find(|n| !produced.contains(*n)) {
                return fail(key, format!("checkpoint '{missing}' is not produced by this run"));
            }
            // Interpolation files hold one block per task; the others one result.
            let id = if key == "analysis.interp" { r.to_string() } else { r.stem() };
            if !stems.insert(id) {
                return fail(key, format!("'{r}' requested twice"));
            }
        }
    }
    if let Some(missing) = a.distances.iter().find(|n| !produced.contains(*n)) {
        return fail("analysis.distances", format!("checkpoint '{missing}' is not produced by this run"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "benchmark = rotated\nnum_tasks = 5\nseed = 7\nlearner = naive\n";

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse_str(MINIMAL).unwrap();
        assert_eq!(c.num_tasks, 5);
        assert_eq!(c.seed, 7);
        assert_eq!(c.learners, vec![Learner::Baseline(Algorithm::Naive)]);
        assert_eq!(c.hidden, 100);
        assert_eq!(c.naive, Algorithm::Naive.default_sgd());
        assert_eq!(c.mc.n_points, 5);
        assert_eq!(c.mc.learning_rate, 0.05);
        assert_eq!(c.analysis.interp_points, 21);
        assert_eq!(c.rotation, RotationSchedule::Incremental { step: 22.5 });
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let text = format!("# header\n\n{MINIMAL}model.hidden = 50   # narrower\n");
        assert_eq!(parse_str(&text).unwrap().hidden, 50);
    }

    #[test]
    fn duplicate_key_names_both_lines() {
        let e = parse_str(&format!("{MINIMAL}# note\nseed = 8\n")).unwrap_err();
        assert_eq!(e.line, Some(6));
        assert!(e.message.contains("line 3") && e.message.contains("line 6"), "{e}");
    }

    #[test]
    fn unknown_keys_and_bad_values_report_lines() {
        let e = parse_str(&format!("{MINIMAL}learner.mc.n_pts = 3\n")).unwrap_err();
        assert_eq!((e.line, e.key.as_deref()), (Some(5), Some("learner.mc.n_pts")));
        let e = parse_str("benchmark = rotated\nnum_tasks = five\nseed = 1\nlearner = mc\n").unwrap_err();
        assert_eq!(e.line, Some(2));
        let e = parse_str("benchmark = rotated\nnum_tasks = 2\nlearner = mc\n").unwrap_err();
        assert_eq!(e.key.as_deref(), Some("seed"));
        let e = parse_str(&format!("{MINIMAL}just words\n")).unwrap_err();
        assert_eq!(e.line, Some(5));
    }

    #[test]
    fn analysis_requests_must_name_produced_checkpoints() {
        let ok = "benchmark = rotated\nnum_tasks = 2\nseed = 1\nlearner = family\nanalysis.interp = hat_w_1:star_w_2@1, hat_w_1:hat_w_2\n";
        let c = parse_str(ok).unwrap();
        assert_eq!(c.analysis.interp[1].task, 1);
        let bad = "benchmark = rotated\nnum_tasks = 2\nseed = 1\nlearner = family\nanalysis.interp = hat_w_1:star_w_3@1\n";
        let e = parse_str(bad).unwrap_err();
        assert_eq!(e.line, Some(5));
    }

    #[test]
    fn roundtrip_through_emit() {
        let text = "benchmark = cross_dataset\nnum_tasks = 2\nseed = 3\nlearner = family,er\n\
                    breaking.label_corrupt = 0.05\nlearner.family.lr = 0.125\nlearner.mc.init = current\n\
                    data.train_examples = 1000\nanalysis.plane = hat_w_1:hat_w_2:star_w_2@2\n\
                    analysis.distances = hat_w_1,hat_w_2\nrotation.schedule = random\n";
        let c = parse_str(text).unwrap();
        let again = parse_str(&c.emit()).unwrap();
        assert_eq!(c, again);
        assert_eq!(c.emit(), again.emit());
    }

    #[test]
    fn hash_tracks_every_value() {
        let a = parse_str(MINIMAL).unwrap();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.analysis.plane_margin = 0.2;
        assert_ne!(a.hash(), b.hash());
        let mut c = a.clone();
        c.seed = 8;
        assert_ne!(a.hash(), c.hash());
        let mut d = a.clone();
        d.output_dir = "elsewhere".into();
        assert_eq!(a.hash(), d.hash());
    }

    #[test]
    fn every_key_is_documented() {
        let c = ExperimentConfig::new(Benchmark::Rotated, 1, 0, Vec::new());
        for (k, _) in c.to_pairs() {
            assert!(!key_help(&k).is_empty(), "{k} lacks help text");
        }
    }
}
