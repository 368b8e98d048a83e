//! Hessian eigenspectra, their overlap with update directions, and the
//! second-order forgetting estimate.

use crate::data::Dataset;
use crate::eigen::{power_iteration_deflated, DEFAULT_MAX_ITERS, DEFAULT_TOL};
use crate::error::{ensure, Result};
use crate::eval::evaluate;
use crate::linalg::{dot, Vector};
use crate::model::{default_hvp_epsilon, hvp_operator, Batch, MlpConfig, ParamVector};
use crate::rng::Rng;

/// Training examples used for Hessian-vector products.
pub const SPECTRUM_SAMPLE_SIZE: usize = 4096;

#[derive(Clone, Debug)]
pub struct SpectrumResult {
    /// Sorted by descending magnitude.
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Vec<Vector>,
    pub converged: Vec<bool>,
    pub sample_size: usize,
    pub epsilon: f64,
}

impl SpectrumResult {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn lambda_max(&self) -> f64 {
        self.eigenvalues[0]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectrumOptions {
    pub max_iters: usize,
    pub tol: f64,
    /// `None` uses [`default_hvp_epsilon`].
    pub epsilon: Option<f64>,
}

impl Default for SpectrumOptions {
    fn default() -> Self {
        SpectrumOptions {
            max_iters: DEFAULT_MAX_ITERS,
            tol: DEFAULT_TOL,
            epsilon: None,
        }
    }
}

/// A fixed subsample of `min(size, len)` examples, drawn without replacement.
pub fn spectrum_sample(ds: &Dataset, size: usize, rng: &Rng) -> Result<Batch> {
    ensure!(size >= 1, "spectrum sample size must be positive");
    let idx = if size >= ds.len() {
        (0..ds.len()).collect()
    } else {
        let mut idx = rng.substream("spectrum-sample").sample_indices(ds.len(), size);
        idx.sort_unstable();
        idx
    };
    ds.batch(&idx)
}

/// Top-`k` Hessian eigenpairs of the dropout-free loss on `sample`.
pub fn hessian_spectrum(
    w: &ParamVector,
    sample: &Batch,
    cfg: &MlpConfig,
    k: usize,
    opts: &SpectrumOptions,
    rng: &Rng,
) -> Result<SpectrumResult> {
    let epsilon = opts.epsilon.unwrap_or_else(|| default_hvp_epsilon(w));
    let op = hvp_operator(w, sample, cfg, epsilon)?;
    let mut it_rng = rng.substream("power-iteration");
    let pairs = power_iteration_deflated(&op, k, opts.max_iters, opts.tol, &mut it_rng)?;
    Ok(SpectrumResult {
        eigenvalues: pairs.iter().map(|p| p.value).collect(),
        converged: pairs.iter().map(|p| p.converged).collect(),
        eigenvectors: pairs.into_iter().map(|p| p.vector).collect(),
        sample_size: sample.len(),
        epsilon,
    })
}

/// `|cos(w_to − w_from, vᵢ)|` for every eigenvector.
pub fn direction_overlap(w_from: &ParamVector, w_to: &ParamVector, spectrum: &SpectrumResult) -> Result<Vec<f64>> {
    let d = w_to.sub(w_from)?;
    let nd = d.norm();
    ensure!(nd > 0.0, "overlap direction is zero: the two checkpoints coincide");
    spectrum
        .eigenvectors
        .iter()
        .map(|v| {
            ensure!(v.len() == d.len(), "eigenvector length {} differs from parameter count {}", v.len(), d.len());
            Ok((dot(d.as_slice(), v.as_slice()).abs() / (nd * v.norm())).min(1.0))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TaylorForgetting {
    /// `L₁(w2) − L₁(w1)`.
    pub actual: f64,
    /// `½ λ_max ‖w2 − w1‖²`.
    pub bound: f64,
}

/// Observed task-1 loss increase against its quadratic estimate. The bound
/// only holds for the quadratic model and is reported, not enforced.
pub fn taylor_forgetting(
    w1: &ParamVector,
    w2: &ParamVector,
    task1: &Dataset,
    cfg: &MlpConfig,
    lambda_max: f64,
) -> Result<TaylorForgetting> {
    taylor_forgetting_with(w1, w2, lambda_max, |p| Ok(evaluate(p, task1, cfg)?.loss))
}

pub fn taylor_forgetting_with<F>(w1: &ParamVector, w2: &ParamVector, lambda_max: f64, loss: F) -> Result<TaylorForgetting>
where
    F: Fn(&ParamVector) -> Result<f64>,
{
    let dist = w1.distance(w2)?;
    Ok(TaylorForgetting {
        actual: loss(w2)? - loss(w1)?,
        bound: 0.5 * lambda_max * dist * dist,
    })
}
