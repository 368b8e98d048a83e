//! Training regimes: the continual chain, the incremental multitask chain,
//! the Table-style baselines and MC-SGD.

mod agem;
mod ewc;
mod mc;
mod runs;

pub use agem::{agem_project, AgemHook, AgemProjection};
pub use ewc::{ewc_consolidate, ewc_penalty, ewc_penalty_grad, EwcHook, EwcState};
pub use mc::{mc_objective_grad, run_mc_sgd, McConfig, McInit, McState};
pub use runs::{
    run_baseline, run_family, run_family_split, Algorithm, BaselineConfig, Checkpoint, EvalOptions, ErHook, Provenance, RunRecord,
};

use crate::data::{Dataset, DatasetUnion, TaskStream};
use crate::error::{ensure, Error, Result};
use crate::model::{loss_and_grad, Batch, DropoutMask, MlpConfig, ParamVector};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SgdConfig {
    pub learning_rate: f64,
    /// Task `t` trains with `learning_rate · lr_decay_per_task^(t−1)`.
    pub lr_decay_per_task: f64,
    pub batch_size: usize,
    pub epochs_per_task: usize,
    pub dropout_rate: f64,
}

impl SgdConfig {
    pub fn plain(learning_rate: f64, batch_size: usize, epochs_per_task: usize) -> Self {
        SgdConfig {
            learning_rate,
            lr_decay_per_task: 1.0,
            batch_size,
            epochs_per_task,
            dropout_rate: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.learning_rate >= 0.0 && self.learning_rate.is_finite(),
            "learning rate must be finite and non-negative, got {}",
            self.learning_rate
        );
        ensure!(
            self.lr_decay_per_task > 0.0 && self.lr_decay_per_task <= 1.0,
            "lr decay {} outside (0, 1]",
            self.lr_decay_per_task
        );
        ensure!(self.batch_size >= 1, "batch size must be at least 1");
        ensure!((0.0..1.0).contains(&self.dropout_rate), "dropout {} outside [0, 1)", self.dropout_rate);
        Ok(())
    }

    pub fn lr_for_task(&self, task_id: usize) -> f64 {
        self.learning_rate * self.lr_decay_per_task.powi(task_id.saturating_sub(1) as i32)
    }
}

/// Per-step customization of SGD, used by the baselines.
pub trait StepHook {
    /// May extend the step's batch (experience replay).
    fn augment(&mut self, batch: Batch) -> Result<Batch> {
        Ok(batch)
    }

    /// May rewrite the gradient before the update.
    fn adjust(&mut self, _params: &ParamVector, _grad: &mut ParamVector) -> Result<()> {
        Ok(())
    }

    /// Sees the stream batch after the update.
    fn observe(&mut self, _stream_batch: &Batch, _task_id: usize) -> Result<()> {
        Ok(())
    }
}

/// Anything that can serve indexed mini-batches.
trait BatchSource {
    fn len(&self) -> usize;
    fn batch(&self, indices: &[usize]) -> Result<Batch>;
}

impl BatchSource for Dataset {
    fn len(&self) -> usize {
        Dataset::len(self)
    }

    fn batch(&self, indices: &[usize]) -> Result<Batch> {
        Dataset::batch(self, indices)
    }
}

impl BatchSource for DatasetUnion<'_> {
    fn len(&self) -> usize {
        DatasetUnion::len(self)
    }

    fn batch(&self, indices: &[usize]) -> Result<Batch> {
        DatasetUnion::batch(self, indices)
    }
}

/// Mini-batch SGD on one task.
///
/// `task_id` sets the decayed learning rate. Batch order comes from the
/// substream for `(task_id, epoch)` of `rng`, dropout from its own substream.
pub fn train_task(
    params: &ParamVector,
    task: &Dataset,
    task_id: usize,
    cfg: &SgdConfig,
    mlp: &MlpConfig,
    rng: &Rng,
    hook: Option<&mut dyn StepHook>,
) -> Result<ParamVector> {
    sgd(params, task, task_id, cfg, mlp, rng, hook)
}

fn sgd<S: BatchSource>(
    params: &ParamVector,
    source: &S,
    task_id: usize,
    cfg: &SgdConfig,
    mlp: &MlpConfig,
    rng: &Rng,
    mut hook: Option<&mut dyn StepHook>,
) -> Result<ParamVector> {
    cfg.validate()?;
    ensure!(source.len() > 0, "task {task_id} has no training examples");
    let lr = cfg.lr_for_task(task_id);
    let net = mlp.with_dropout(cfg.dropout_rate);
    let mut dropout_rng = rng.substream_indexed("dropout", task_id as u64);
    let mut w = params.clone();
    let mut step = 0usize;
    for epoch in 0..cfg.epochs_per_task {
        let order = rng
            .substream_indexed("batch-order", task_id as u64)
            .substream_indexed("epoch", epoch as u64)
            .permutation(source.len());
        for chunk in order.chunks(cfg.batch_size) {
            let stream_batch = source.batch(chunk)?;
            let batch = match hook.as_deref_mut() {
                Some(h) => h.augment(stream_batch.clone())?,
                None => stream_batch.clone(),
            };
            let mask = (cfg.dropout_rate > 0.0).then(|| DropoutMask::sample(&net, batch.len(), &mut dropout_rng));
            let (loss, mut g) = loss_and_grad(&w, &batch, mask.as_ref(), mlp)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "loss became {loss} at task {task_id}, epoch {epoch}, step {step}"
                )));
            }
            if let Some(h) = hook.as_deref_mut() {
                h.adjust(&w, &mut g)?;
                h.observe(&stream_batch, task_id)?;
            }
            w.axpy(-lr, &g)?;
            step += 1;
        }
    }
    Ok(w)
}

/// The multitask chain `w*₂, …, w*_upto`, each trained on the union of all
/// tasks so far starting from the previous one (`w*₁ = ŵ₁`).
///
/// One epoch is one pass over the whole union with uniformly shuffled order.
pub fn multitask_chain(
    stream: &TaskStream,
    upto_task: usize,
    shared_w1: &ParamVector,
    cfg: &SgdConfig,
    mlp: &MlpConfig,
    rng: &Rng,
) -> Result<Vec<ParamVector>> {
    ensure!(
        upto_task >= 1 && upto_task <= stream.len(),
        "upto_task {upto_task} outside 1..={}",
        stream.len()
    );
    let mut chain = vec![shared_w1.clone()];
    for t in 2..=upto_task {
        let parts: Vec<&Dataset> = stream.tasks[..t].iter().map(|k| &k.train).collect();
        let union = DatasetUnion::new(parts)?;
        let prev = chain.last().expect("non-empty");
        let next = sgd(prev, &union, t, cfg, mlp, &rng.substream("multitask"), None)?;
        chain.push(next);
    }
    Ok(chain)
}

/// `w*_upto` of the incremental multitask chain.
pub fn train_multitask_incremental(
    stream: &TaskStream,
    upto_task: usize,
    shared_w1: &ParamVector,
    cfg: &SgdConfig,
    mlp: &MlpConfig,
    rng: &Rng,
) -> Result<ParamVector> {
    Ok(multitask_chain(stream, upto_task, shared_w1, cfg, mlp, rng)?
        .pop()
        .expect("non-empty chain"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_stream, Split, TaskTransform};
    use crate::data::DatasetRegistry;
    use crate::eval::evaluate;
    use crate::linalg::Matrix;
    use crate::model::init_params;

    /// Two Gaussian blobs per class in 8 dimensions.
    pub(crate) fn blobs(n: usize, seed: u64) -> Dataset {
        let mut rng = Rng::new(seed);
        let mut data = Vec::with_capacity(n * 8);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let c = i % 3;
            for j in 0..8 {
                let center = if j % 3 == c { 0.8 } else { 0.2 };
                data.push((center + 0.1 * rng.normal()).clamp(0.0, 1.0));
            }
            labels.push(c);
        }
        Dataset::from_matrix("blobs", Split::Train, Matrix::new(n, 8, data).unwrap(), labels, 3).unwrap()
    }

    fn tiny() -> MlpConfig {
        MlpConfig::new(8, 6, 3, 0.0).unwrap()
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let ds = blobs(60, 1);
        let p = init_params(&tiny(), &mut Rng::new(2));
        let cfg = SgdConfig::plain(0.0, 7, 2);
        let out = train_task(&p, &ds, 1, &cfg, &tiny(), &Rng::new(3), None).unwrap();
        assert_eq!(out, p);
    }

    #[test]
    fn training_learns_separable_blobs() {
        let ds = blobs(300, 4);
        let p = init_params(&tiny(), &mut Rng::new(5));
        let cfg = SgdConfig {
            dropout_rate: 0.1,
            ..SgdConfig::plain(0.5, 10, 20)
        };
        let out = train_task(&p, &ds, 1, &cfg, &tiny(), &Rng::new(6), None).unwrap();
        assert!(evaluate(&out, &ds, &tiny()).unwrap().accuracy > 0.95);
        let again = train_task(&p, &ds, 1, &cfg, &tiny(), &Rng::new(6), None).unwrap();
        assert_eq!(out, again);
    }

    #[test]
    fn decayed_learning_rate() {
        let cfg = SgdConfig {
            lr_decay_per_task: 0.5,
            ..SgdConfig::plain(0.1, 10, 1)
        };
        assert_eq!(cfg.lr_for_task(1), 0.1);
        assert_eq!(cfg.lr_for_task(3), 0.025);
    }

    #[test]
    fn multitask_chain_starts_at_shared_w1() {
        let mut reg = DatasetRegistry::new();
        reg.insert("blobs", blobs(60, 7), blobs(30, 8));
        let specs = vec![TaskTransform::Identity.into(), TaskTransform::Permutation { seed: 1 }.into()];
        let stream = build_stream(&specs, &reg, &Rng::new(9)).unwrap();
        let w1 = init_params(&tiny(), &mut Rng::new(10));
        let cfg = SgdConfig::plain(0.1, 10, 1);
        let chain = multitask_chain(&stream, 2, &w1, &cfg, &tiny(), &Rng::new(11)).unwrap();
        assert_eq!(chain.len(), 2);
        assert_eq!(chain[0], w1);
        assert_ne!(chain[1], w1);
        let single = train_multitask_incremental(&stream, 1, &w1, &cfg, &tiny(), &Rng::new(11)).unwrap();
        assert_eq!(single, w1);
    }
}
