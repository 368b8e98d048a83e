//! Dropout-free evaluation of a parameter vector on a whole dataset.

use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{ensure, Result};
use crate::model::{loss_and_correct, MlpConfig, ParamVector};

/// Examples per forward pass during evaluation.
pub const EVAL_CHUNK: usize = 500;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    /// Mean cross-entropy in nats.
    pub loss: f64,
    pub accuracy: f64,
}

/// Loss and accuracy over every example of `ds`.
///
/// Chunks may run in parallel; their sums are combined in index order, so
/// the result does not depend on the thread count.
pub fn evaluate(params: &ParamVector, ds: &Dataset, cfg: &MlpConfig) -> Result<Evaluation> {
    ensure!(!ds.is_empty(), "cannot evaluate on an empty dataset");
    let starts: Vec<usize> = (0..ds.len()).step_by(EVAL_CHUNK).collect();
    let parts = starts
        .par_iter()
        .map(|&s| {
            let idx: Vec<usize> = (s..(s + EVAL_CHUNK).min(ds.len())).collect();
            let batch = ds.batch(&idx)?;
            let (loss, correct) = loss_and_correct(params, &batch, cfg)?;
            Ok((loss * idx.len() as f64, correct))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut loss = 0.0;
    let mut correct = 0;
    for (l, c) in parts {
        loss += l;
        correct += c;
    }
    let n = ds.len() as f64;
    Ok(Evaluation {
        loss: loss / n,
        accuracy: correct as f64 / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Split;
    use crate::linalg::Matrix;
    use crate::model::{forward, init_params, Batch};
    use crate::rng::Rng;

    #[test]
    fn matches_a_single_forward_pass() {
        let cfg = MlpConfig::new(6, 5, 3, 0.0).unwrap();
        let mut rng = Rng::new(3);
        let n = 1234;
        let data: Vec<f64> = (0..n * 6).map(|_| rng.uniform()).collect();
        let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let m = Matrix::new(n, 6, data).unwrap();
        let ds = Dataset::from_matrix("t", Split::Test, m.clone(), labels.clone(), 3).unwrap();
        let p = init_params(&cfg, &mut rng);
        let e = evaluate(&p, &ds, &cfg).unwrap();
        let f = forward(&p, &Batch::new(m, labels).unwrap(), None, &cfg).unwrap();
        assert!((e.loss - f.loss).abs() < 1e-12);
        assert_eq!(e.accuracy, f.accuracy);
    }
}
