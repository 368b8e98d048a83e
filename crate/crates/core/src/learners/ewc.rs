//! Elastic weight consolidation with an online diagonal Fisher.

use super::StepHook;
use crate::data::Dataset;
use crate::error::{ensure, Result};
use crate::model::{grad, MlpConfig, ParamVector};
use crate::rng::Rng;

#[derive(Clone, Debug)]
pub struct EwcState {
    pub anchor: ParamVector,
    /// Non-negative diagonal, summed over consolidated tasks.
    pub fisher: ParamVector,
    pub lambda: f64,
}

/// Empirical Fisher diagonal at `params`: the mean squared per-example
/// gradient over `sample_size` examples drawn without replacement (or all
/// examples if the task is smaller), added to `prev`'s diagonal.
pub fn ewc_consolidate(
    params: &ParamVector,
    task: &Dataset,
    prev: Option<&EwcState>,
    lambda: f64,
    sample_size: usize,
    mlp: &MlpConfig,
    rng: &mut Rng,
) -> Result<EwcState> {
    ensure!(sample_size >= 1, "Fisher sample size must be at least 1");
    ensure!(lambda >= 0.0 && lambda.is_finite(), "EWC lambda must be non-negative, got {lambda}");
    ensure!(!task.is_empty(), "cannot estimate a Fisher diagonal from an empty task");
    let idx = if sample_size >= task.len() {
        (0..task.len()).collect()
    } else {
        rng.sample_indices(task.len(), sample_size)
    };
    let mut fisher = vec![0.0; params.len()];
    for &i in &idx {
        let g = grad(params, &task.batch(&[i])?, None, mlp)?;
        for (f, v) in fisher.iter_mut().zip(g.as_slice()) {
            *f += v * v;
        }
    }
    let inv = 1.0 / idx.len() as f64;
    fisher.iter_mut().for_each(|f| *f *= inv);
    if let Some(p) = prev {
        params.check_layout(&p.fisher)?;
        for (f, old) in fisher.iter_mut().zip(p.fisher.as_slice()) {
            *f += old;
        }
    }
    Ok(EwcState {
        anchor: params.clone(),
        fisher: params.with_values(fisher)?,
        lambda,
    })
}

/// `λ Σ F (w − anchor)²`.
pub fn ewc_penalty(w: &ParamVector, state: &EwcState) -> Result<f64> {
    w.check_layout(&state.anchor)?;
    Ok(state.lambda
        * w.as_slice()
            .iter()
            .zip(state.anchor.as_slice())
            .zip(state.fisher.as_slice())
            .map(|((x, a), f)| f * (x - a) * (x - a))
            .sum::<f64>())
}

/// `2λ F ⊙ (w − anchor)`.
pub fn ewc_penalty_grad(w: &ParamVector, state: &EwcState) -> Result<ParamVector> {
    w.check_layout(&state.anchor)?;
    let s = 2.0 * state.lambda;
    let g = w
        .as_slice()
        .iter()
        .zip(state.anchor.as_slice())
        .zip(state.fisher.as_slice())
        .map(|((x, a), f)| s * f * (x - a))
        .collect();
    w.with_values(g)
}

/// Adds the penalty gradient of the consolidated state, if any.
pub struct EwcHook<'a> {
    pub state: Option<&'a EwcState>,
}

impl StepHook for EwcHook<'_> {
    fn adjust(&mut self, params: &ParamVector, g: &mut ParamVector) -> Result<()> {
        if let Some(st) = self.state {
            if st.lambda > 0.0 {
                g.axpy(1.0, &ewc_penalty_grad(params, st)?)?;
            }
        }
        Ok(())
    }
}
