//! Whole-stream runs: baselines, the analysis family and their records.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use super::agem::AgemHook;
use super::ewc::{ewc_consolidate, EwcHook, EwcState};
use super::mc::{run_mc_sgd, McConfig};
use super::{multitask_chain, train_task, SgdConfig, StepHook};
use crate::analysis::EvalMatrix;
use crate::data::{per_class_sample, ReplayBuffer, ReplayItem, TaskStream};
use crate::error::{ensure, Error, Result};
use crate::eval::evaluate;
use crate::model::{init_params, Batch, MlpConfig, ParamVector};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct Provenance {
    pub learner: String,
    pub task_id: usize,
    pub config_hash: u64,
    pub seed: u64,
}

/// A named parameter snapshot such as `hat_w_3`, `star_w_3` or `bar_w_3`.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub name: String,
    pub params: ParamVector,
    pub provenance: Provenance,
}

impl Checkpoint {
    pub fn new(name: impl Into<String>, params: ParamVector, learner: &str, task_id: usize, seed: u64) -> Self {
        Checkpoint {
            name: name.into(),
            params,
            provenance: Provenance {
                learner: learner.to_string(),
                task_id,
                config_hash: 0,
                seed,
            },
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunRecord {
    pub learner: String,
    pub checkpoints: BTreeMap<String, Checkpoint>,
    /// Accuracies of the learner's own chain.
    pub eval: EvalMatrix,
    /// Accuracies of auxiliary chains (the multitask chain of a family).
    pub extra_evals: BTreeMap<String, EvalMatrix>,
    pub config_hash: u64,
    pub seed: u64,
}

impl RunRecord {
    pub fn insert(&mut self, ckpt: Checkpoint) {
        self.checkpoints.insert(ckpt.name.clone(), ckpt);
    }

    pub fn get(&self, name: &str) -> Option<&ParamVector> {
        self.checkpoints.get(name).map(|c| &c.params)
    }

    /// Stamps the configuration hash on the record and every checkpoint.
    pub fn with_config_hash(mut self, hash: u64) -> Self {
        self.config_hash = hash;
        for c in self.checkpoints.values_mut() {
            c.provenance.config_hash = hash;
        }
        self
    }
}

pub(crate) fn new_record(learner: &str, num_tasks: usize, seed: u64) -> RunRecord {
    RunRecord {
        learner: learner.to_string(),
        checkpoints: BTreeMap::new(),
        eval: EvalMatrix::new(num_tasks),
        extra_evals: BTreeMap::new(),
        config_hash: 0,
        seed,
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EvalOptions {
    /// Evaluate on the first `n` test examples of each task only.
    pub test_examples: Option<usize>,
}

/// Fills row `t` of `m` with the accuracies of `w` on tasks `1..=t`.
pub(crate) fn evaluate_seen(
    m: &mut EvalMatrix,
    t: usize,
    w: &ParamVector,
    stream: &TaskStream,
    mlp: &MlpConfig,
    opts: &EvalOptions,
) -> Result<()> {
    for i in 1..=t {
        let test = &stream.task(i).test;
        let acc = match opts.test_examples {
            Some(n) if n < test.len() => evaluate(w, &test.head(n), mlp)?.accuracy,
            _ => evaluate(w, test, mlp)?.accuracy,
        };
        m.set(t, i, acc)?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Algorithm {
    Naive,
    Stable,
    Ewc,
    Agem,
    Er,
    Mc,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] = [
        Algorithm::Naive,
        Algorithm::Stable,
        Algorithm::Ewc,
        Algorithm::Agem,
        Algorithm::Er,
        Algorithm::Mc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Naive => "naive",
            Algorithm::Stable => "stable",
            Algorithm::Ewc => "ewc",
            Algorithm::Agem => "agem",
            Algorithm::Er => "er",
            Algorithm::Mc => "mc",
        }
    }

    /// The tuned single-epoch MNIST settings.
    pub fn default_sgd(self) -> SgdConfig {
        match self {
            Algorithm::Naive => SgdConfig::plain(0.01, 10, 1),
            Algorithm::Stable | Algorithm::Mc => SgdConfig {
                learning_rate: 0.1,
                lr_decay_per_task: 0.6,
                batch_size: 10,
                epochs_per_task: 1,
                dropout_rate: 0.25,
            },
            Algorithm::Ewc | Algorithm::Agem | Algorithm::Er => SgdConfig::plain(0.1, 10, 1),
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::contract(format!("unknown learner '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BaselineConfig {
    pub algorithm: Algorithm,
    pub sgd: SgdConfig,
    pub ewc_lambda: f64,
    pub ewc_samples: usize,
    /// Stored examples per class per task (A-GEM memory, ER capacity).
    pub per_class: usize,
    pub agem_ref_size: usize,
}

impl BaselineConfig {
    pub fn new(algorithm: Algorithm) -> Self {
        BaselineConfig {
            algorithm,
            sgd: algorithm.default_sgd(),
            ewc_lambda: 10.0,
            ewc_samples: 1024,
            per_class: 1,
            agem_ref_size: 256,
        }
    }
}

/// Experience replay: each stream batch is joined by an equally large batch
/// from a reservoir-sampled memory, which then sees the stream batch.
pub struct ErHook<'a> {
    pub memory: &'a mut ReplayBuffer,
    pub rng: Rng,
}

impl StepHook for ErHook<'_> {
    fn augment(&mut self, batch: Batch) -> Result<Batch> {
        match self.memory.sample_batch(batch.len(), &mut self.rng) {
            Some(replay) => batch.concat(&replay),
            None => Ok(batch),
        }
    }

    fn observe(&mut self, stream_batch: &Batch, task_id: usize) -> Result<()> {
        for (i, &label) in stream_batch.labels.iter().enumerate() {
            let item = ReplayItem {
                image: stream_batch.inputs.row(i).to_vec(),
                label,
                task_id,
            };
            self.memory.reservoir_update(item, &mut self.rng);
        }
        Ok(())
    }
}

/// Sequential training of one baseline over the whole stream.
///
/// MC-SGD is dispatched to [`run_mc_sgd`] with its defaults; use that
/// function directly to control its own settings.
pub fn run_baseline(
    stream: &TaskStream,
    cfg: &BaselineConfig,
    mlp: &MlpConfig,
    rng: &Rng,
    opts: &EvalOptions,
) -> Result<RunRecord> {
    let t_max = stream.len();
    let algo = cfg.algorithm;
    if algo == Algorithm::Mc {
        let mc = McConfig::defaults(cfg.sgd, cfg.per_class);
        return run_mc_sgd(stream, &mc, mlp, rng, None, opts);
    }
    let name = algo.name();
    let mut record = new_record(name, t_max, rng.seed());
    let classes = stream.task(1).train.num_classes();
    let capacity = t_max * classes * cfg.per_class;
    let mut memory = ReplayBuffer::new(capacity);
    let mut memory_rng = rng.substream("memory");
    let mut ewc: Option<EwcState> = None;
    let mut fisher_rng = rng.substream("fisher");
    let train_rng = rng.substream(name);

    let mut w = init_params(mlp, &mut rng.substream("init"));
    for t in 1..=t_max {
        let task = &stream.task(t).train;
        let hook_rng = rng.substream_indexed("hook", t as u64);
        w = match algo {
            Algorithm::Naive | Algorithm::Stable => train_task(&w, task, t, &cfg.sgd, mlp, &train_rng, None)?,
            Algorithm::Ewc => {
                let mut hook = EwcHook { state: ewc.as_ref() };
                train_task(&w, task, t, &cfg.sgd, mlp, &train_rng, Some(&mut hook))?
            }
            Algorithm::Agem => {
                let mut hook = AgemHook {
                    memory: &memory,
                    ref_size: cfg.agem_ref_size,
                    mlp: *mlp,
                    rng: hook_rng,
                    projections: 0,
                };
                train_task(&w, task, t, &cfg.sgd, mlp, &train_rng, Some(&mut hook))?
            }
            Algorithm::Er => {
                let mut hook = ErHook {
                    memory: &mut memory,
                    rng: hook_rng,
                };
                train_task(&w, task, t, &cfg.sgd, mlp, &train_rng, Some(&mut hook))?
            }
            Algorithm::Mc => unreachable!(),
        };
        match algo {
            Algorithm::Ewc => {
                ewc = Some(ewc_consolidate(
                    &w,
                    task,
                    ewc.as_ref(),
                    cfg.ewc_lambda,
                    cfg.ewc_samples,
                    mlp,
                    &mut fisher_rng,
                )?);
            }
            Algorithm::Agem => {
                for item in per_class_sample(task, cfg.per_class, t, &mut memory_rng)?.items {
                    memory.push(item)?;
                }
            }
            _ => {}
        }
        record.insert(Checkpoint::new(format!("{name}_w_{t}"), w.clone(), name, t, rng.seed()));
        evaluate_seen(&mut record.eval, t, &w, stream, mlp, opts)?;
    }
    Ok(record)
}

/// The analysis family sharing one `ŵ₁`: the continual chain `hat_w_t`, the
/// incremental multitask chain `star_w_t` (`t ≥ 2`) and, optionally, the
/// MC-SGD chain `bar_w_t` (with its own `mc_hat_w_t`).
///
/// `eval` holds the continual chain; `extra_evals["multitask"]` and
/// `extra_evals["mc"]` the others.
pub fn run_family(
    stream: &TaskStream,
    sgd: &SgdConfig,
    multitask: &SgdConfig,
    mlp: &MlpConfig,
    rng: &Rng,
    mc: Option<&McConfig>,
    opts: &EvalOptions,
) -> Result<RunRecord> {
    run_family_split(stream, stream, sgd, multitask, mlp, rng, mc, opts)
}

/// [`run_family`] with the multitask chain trained on the training sets of
/// `multitask_stream` instead. Every chain is still evaluated on `stream`.
#[allow(clippy::too_many_arguments)]
pub fn run_family_split(
    stream: &TaskStream,
    multitask_stream: &TaskStream,
    sgd: &SgdConfig,
    multitask: &SgdConfig,
    mlp: &MlpConfig,
    rng: &Rng,
    mc: Option<&McConfig>,
    opts: &EvalOptions,
) -> Result<RunRecord> {
    let t_max = stream.len();
    ensure!(
        multitask_stream.len() == t_max,
        "multitask stream has {} tasks, expected {t_max}",
        multitask_stream.len()
    );
    let seed = rng.seed();
    let mut record = new_record("family", t_max, seed);
    let continual_rng = rng.substream("continual");
    let w0 = init_params(mlp, &mut rng.substream("init"));
    let w1 = train_task(&w0, &stream.task(1).train, 1, sgd, mlp, &continual_rng, None)?;

    let mut w = w1.clone();
    for t in 1..=t_max {
        if t > 1 {
            w = train_task(&w, &stream.task(t).train, t, sgd, mlp, &continual_rng, None)?;
        }
        record.insert(Checkpoint::new(format!("hat_w_{t}"), w.clone(), "continual", t, seed));
        evaluate_seen(&mut record.eval, t, &w, stream, mlp, opts)?;
    }

    let chain = multitask_chain(multitask_stream, t_max, &w1, multitask, mlp, rng)?;
    let mut mt_eval = EvalMatrix::new(t_max);
    for (k, p) in chain.iter().enumerate() {
        let t = k + 1;
        if t > 1 {
            record.insert(Checkpoint::new(format!("star_w_{t}"), p.clone(), "multitask", t, seed));
        }
        evaluate_seen(&mut mt_eval, t, p, stream, mlp, opts)?;
    }
    record.extra_evals.insert("multitask".into(), mt_eval);

    if let Some(mc) = mc {
        let sub = run_mc_sgd(stream, mc, mlp, &rng.substream("mc"), Some(&w1), opts)?;
        for (name, mut c) in sub.checkpoints {
            if c.provenance.task_id == 1 && name.starts_with("hat_") {
                continue;
            }
            if let Some(rest) = name.strip_prefix("hat_") {
                c.name = format!("mc_hat_{rest}");
            }
            c.provenance.seed = seed;
            record.insert(c);
        }
        record.extra_evals.insert("mc".into(), sub.eval);
    }
    Ok(record)
}
