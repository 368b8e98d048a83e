//! MC-SGD: look for a minimum joined by low-loss straight lines to both the
//! previous consolidated solution and the current task's continual solution.

use super::runs::{evaluate_seen, new_record, Checkpoint, EvalOptions, RunRecord};
use super::{train_task, SgdConfig};
use crate::data::{per_class_sample, ReplayBuffer, TaskStream};
use crate::error::{ensure, Error, Result};
use crate::model::{init_params, interpolate, loss_and_correct, loss_and_grad_acc, Batch, MlpConfig, ParamVector};
use crate::rng::Rng;

/// Anchors of the line objective for task `t`.
#[derive(Clone, Debug)]
pub struct McState {
    /// `w̄ₜ₋₁`.
    pub prev_consolidated: ParamVector,
    /// `ŵₜ`.
    pub current_task_min: ParamVector,
    /// Each line is sampled at `α = k / n_points`, `k = 0..=n_points`.
    pub n_points: usize,
}

impl McState {
    pub fn new(prev_consolidated: ParamVector, current_task_min: ParamVector, n_points: usize) -> Result<Self> {
        ensure!(n_points >= 1, "the line objective needs n_points >= 1");
        prev_consolidated.check_layout(&current_task_min)?;
        Ok(McState {
            prev_consolidated,
            current_task_min,
            n_points,
        })
    }
}

/// The discretized line objective
/// `(1/(n+1)) Σ_α [L̃(w̄ + α(w − w̄)) + L(ŵ + α(w − ŵ))]`
/// and its gradient in `w`, where `L̃` is the replay-batch loss and `L` the
/// task-batch loss, both without dropout.
pub fn mc_objective_grad(
    w: &ParamVector,
    state: &McState,
    task_batch: &Batch,
    replay_batch: &Batch,
    cfg: &MlpConfig,
) -> Result<(f64, ParamVector)> {
    line_terms(w, state, task_batch, replay_batch, cfg, true)
}

/// With `constants == false` the `α = 0` terms, which do not depend on `w`,
/// are left out of the objective; the gradient is the same either way.
fn line_terms(
    w: &ParamVector,
    state: &McState,
    task_batch: &Batch,
    replay_batch: &Batch,
    cfg: &MlpConfig,
    constants: bool,
) -> Result<(f64, ParamVector)> {
    ensure!(state.n_points >= 1, "the line objective needs n_points >= 1");
    w.check_layout(&state.prev_consolidated)?;
    w.check_layout(&state.current_task_min)?;
    let n = state.n_points;
    let weight = 1.0 / (n + 1) as f64;
    let mut objective = 0.0;
    let mut g = w.zeros_like();
    let mut p = w.clone();
    for k in 0..=n {
        let alpha = k as f64 / n as f64;
        for (anchor, batch) in [(&state.prev_consolidated, replay_batch), (&state.current_task_min, task_batch)] {
            if k == 0 {
                if constants {
                    objective += weight * loss_and_correct(anchor, batch, cfg)?.0;
                }
                continue;
            }
            let at = if k == n {
                w
            } else {
                for ((v, a), b) in p.as_mut_slice().iter_mut().zip(anchor.as_slice()).zip(w.as_slice()) {
                    *v = a + alpha * (b - a);
                }
                &p
            };
            objective += weight * loss_and_grad_acc(at, batch, cfg, weight * alpha, &mut g)?;
        }
    }
    Ok((objective, g))
}

/// Where the line-objective phase starts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum McInit {
    /// `(w̄ₜ₋₁ + ŵₜ) / 2`.
    Midpoint,
    /// `ŵₜ`.
    AtCurrent,
    /// `w̄ₜ₋₁`.
    AtPrevious,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McConfig {
    /// Settings for the continual minima `ŵₜ` (the Stable SGD ones).
    pub sgd: SgdConfig,
    pub learning_rate: f64,
    pub n_points: usize,
    pub per_class: usize,
    pub init: McInit,
    /// Passes over the task data during the line-objective phase.
    pub epochs: usize,
    /// Task examples used in that phase; `None` uses all of them.
    pub task_examples: Option<usize>,
}

impl McConfig {
    /// Line learning rate 0.05, five intervals per line, midpoint start, one
    /// pass over the task data.
    pub fn defaults(sgd: SgdConfig, per_class: usize) -> Self {
        McConfig {
            sgd,
            learning_rate: 0.05,
            n_points: 5,
            per_class,
            init: McInit::Midpoint,
            epochs: 1,
            task_examples: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.sgd.validate()?;
        ensure!(self.n_points >= 2, "MC-SGD needs n_points >= 2, got {}", self.n_points);
        ensure!(self.per_class >= 1, "MC-SGD needs at least one stored example per class");
        ensure!(
            self.learning_rate >= 0.0 && self.learning_rate.is_finite(),
            "invalid MC learning rate {}",
            self.learning_rate
        );
        Ok(())
    }
}

/// Full MC-SGD over a stream.
///
/// Task 1 is plain training (`w̄₁ = ŵ₁`). For `t ≥ 2`, `ŵₜ` is trained from
/// `w̄ₜ₋₁`, then the line objective is minimized by SGD over the task data,
/// pairing each task batch with a fresh replay batch. The memory receives
/// `per_class` examples per class once a task is finished.
///
/// `shared_w1` substitutes a precomputed `ŵ₁`.
pub fn run_mc_sgd(
    stream: &TaskStream,
    mc: &McConfig,
    mlp: &MlpConfig,
    rng: &Rng,
    shared_w1: Option<&ParamVector>,
    opts: &EvalOptions,
) -> Result<RunRecord> {
    mc.validate()?;
    let t_max = stream.len();
    let mut record = new_record("mc", t_max, rng.seed());
    let classes = stream.task(1).train.num_classes();
    let mut memory = ReplayBuffer::new(t_max * classes * mc.per_class);
    let mut memory_rng = rng.substream("memory");
    let mut replay_rng = rng.substream("mc-replay");
    let train_rng = rng.substream("mc-continual");

    let w1 = match shared_w1 {
        Some(w) => w.clone(),
        None => {
            let w0 = init_params(mlp, &mut rng.substream("init"));
            train_task(&w0, &stream.task(1).train, 1, &mc.sgd, mlp, &train_rng, None)?
        }
    };
    record.insert(Checkpoint::new("hat_w_1", w1.clone(), "mc", 1, rng.seed()));
    record.insert(Checkpoint::new("bar_w_1", w1.clone(), "mc", 1, rng.seed()));
    evaluate_seen(&mut record.eval, 1, &w1, stream, mlp, opts)?;
    add_memory(&mut memory, stream, 1, mc.per_class, &mut memory_rng)?;

    let mut bar = w1;
    for t in 2..=t_max {
        let task = &stream.task(t).train;
        let hat = train_task(&bar, task, t, &mc.sgd, mlp, &train_rng, None)?;
        let state = McState::new(bar.clone(), hat.clone(), mc.n_points)?;
        let mut w = match mc.init {
            McInit::Midpoint => interpolate(&bar, &hat, 0.5)?,
            McInit::AtCurrent => hat.clone(),
            McInit::AtPrevious => bar.clone(),
        };
        let pool: Vec<usize> = match mc.task_examples {
            Some(k) if k < task.len() => {
                let mut idx = rng.substream_indexed("mc-subset", t as u64).sample_indices(task.len(), k);
                idx.sort_unstable();
                idx
            }
            _ => (0..task.len()).collect(),
        };
        let replay_size = memory.len().min(mc.sgd.batch_size);
        for epoch in 0..mc.epochs {
            let order = rng
                .substream_indexed("mc-order", t as u64)
                .substream_indexed("epoch", epoch as u64)
                .permutation(pool.len());
            for chunk in order.chunks(mc.sgd.batch_size) {
                let idx: Vec<usize> = chunk.iter().map(|&j| pool[j]).collect();
                let task_batch = task.batch(&idx)?;
                let replay_batch = memory
                    .sample_batch(replay_size, &mut replay_rng)
                    .ok_or_else(|| Error::contract("MC-SGD memory is empty after task 1"))?;
                let (_, g) = line_terms(&w, &state, &task_batch, &replay_batch, mlp, false)?;
                if !g.as_slice().iter().all(|v| v.is_finite()) {
                    return Err(Error::Numeric(format!("non-finite MC-SGD gradient at task {t}")));
                }
                w.axpy(-mc.learning_rate, &g)?;
            }
        }
        record.insert(Checkpoint::new(format!("hat_w_{t}"), hat, "mc", t, rng.seed()));
        record.insert(Checkpoint::new(format!("bar_w_{t}"), w.clone(), "mc", t, rng.seed()));
        evaluate_seen(&mut record.eval, t, &w, stream, mlp, opts)?;
        add_memory(&mut memory, stream, t, mc.per_class, &mut memory_rng)?;
        bar = w;
    }
    Ok(record)
}

fn add_memory(memory: &mut ReplayBuffer, stream: &TaskStream, t: usize, per_class: usize, rng: &mut Rng) -> Result<()> {
    for item in per_class_sample(&stream.task(t).train, per_class, t, rng)?.items {
        memory.push(item)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::model::grad;

    fn net() -> MlpConfig {
        MlpConfig::new(3, 2, 2, 0.0).unwrap()
    }

    fn batch(n: usize, rng: &mut Rng) -> Batch {
        let x = (0..n * 3).map(|_| rng.uniform()).collect();
        Batch::new(Matrix::new(n, 3, x).unwrap(), (0..n).map(|i| (i + n) % 2).collect()).unwrap()
    }

    /// Positive biases keep every unit off its ReLU kink.
    fn point(rng: &mut Rng) -> ParamVector {
        let mut p = init_params(&net(), rng);
        for i in [1usize, 3] {
            let r = p.layout().range(i);
            p.as_mut_slice()[r].iter_mut().for_each(|v| *v = 0.3);
        }
        p
    }

    #[test]
    fn degenerate_anchors() {
        let mut rng = Rng::new(1);
        let w = point(&mut rng);
        let (tb, rb) = (batch(5, &mut rng), batch(4, &mut rng));
        let st = McState::new(w.clone(), w.clone(), 5).unwrap();
        let (obj, g) = mc_objective_grad(&w, &st, &tb, &rb, &net()).unwrap();
        let lt = loss_and_correct(&w, &tb, &net()).unwrap().0;
        let lr = loss_and_correct(&w, &rb, &net()).unwrap().0;
        assert!((obj - (lt + lr)).abs() < 1e-12);
        let want = grad(&w, &tb, None, &net()).unwrap().add(&grad(&w, &rb, None, &net()).unwrap()).unwrap();
        for (a, b) in g.as_slice().iter().zip(want.as_slice()) {
            assert!((a - 0.5 * b).abs() < 1e-12);
        }
    }

    #[test]
    fn endpoints_only() {
        let mut rng = Rng::new(2);
        let (w, bar, hat) = (point(&mut rng), point(&mut rng), point(&mut rng));
        let (tb, rb) = (batch(5, &mut rng), batch(4, &mut rng));
        let st = McState::new(bar.clone(), hat.clone(), 1).unwrap();
        let (obj, g) = mc_objective_grad(&w, &st, &tb, &rb, &net()).unwrap();
        let l = |p: &ParamVector, b: &Batch| loss_and_correct(p, b, &net()).unwrap().0;
        let want = 0.5 * (l(&bar, &rb) + l(&w, &rb) + l(&hat, &tb) + l(&w, &tb));
        assert!((obj - want).abs() < 1e-12);
        let gw = grad(&w, &tb, None, &net()).unwrap().add(&grad(&w, &rb, None, &net()).unwrap()).unwrap();
        for (a, b) in g.as_slice().iter().zip(gw.as_slice()) {
            assert!((a - 0.5 * b).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = Rng::new(3);
        for _ in 0..3 {
            let (w, bar, hat) = (point(&mut rng), point(&mut rng), point(&mut rng));
            let (tb, rb) = (batch(6, &mut rng), batch(6, &mut rng));
            let st = McState::new(bar, hat, 5).unwrap();
            let (_, g) = mc_objective_grad(&w, &st, &tb, &rb, &net()).unwrap();
            let h = 1e-5;
            for i in 0..w.len() {
                let mut plus = w.clone();
                plus.as_mut_slice()[i] += h;
                let mut minus = w.clone();
                minus.as_mut_slice()[i] -= h;
                let fp = mc_objective_grad(&plus, &st, &tb, &rb, &net()).unwrap().0;
                let fm = mc_objective_grad(&minus, &st, &tb, &rb, &net()).unwrap().0;
                let fd = (fp - fm) / (2.0 * h);
                let gi = g.as_slice()[i];
                assert!((fd - gi).abs() <= 1e-6 * gi.abs().max(1e-4), "coordinate {i}: {fd} vs {gi}");
            }
        }
    }

    #[test]
    fn constants_do_not_change_the_gradient() {
        let mut rng = Rng::new(4);
        let (w, bar, hat) = (point(&mut rng), point(&mut rng), point(&mut rng));
        let (tb, rb) = (batch(5, &mut rng), batch(4, &mut rng));
        let st = McState::new(bar, hat, 4).unwrap();
        let a = line_terms(&w, &st, &tb, &rb, &net(), true).unwrap();
        let b = line_terms(&w, &st, &tb, &rb, &net(), false).unwrap();
        assert_eq!(a.1, b.1);
        assert!(a.0 > b.0);
    }
}
