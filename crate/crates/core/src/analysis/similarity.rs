//! Representation similarity and weight-space distances.

use crate::data::Dataset;
use crate::error::{ensure, Error, Result};
use crate::linalg::{frobenius_norm, matmul_tn, Matrix};
use crate::model::{forward, Batch, MlpConfig, ParamVector};

/// Number of test examples used to capture activations for CKA.
pub const CKA_PROBE_SIZE: usize = 2048;

/// Linear CKA with mean-centered columns.
pub fn cka(r1: &Matrix, r2: &Matrix) -> Result<f64> {
    cka_with(r1, r2, true)
}

/// `‖R₁ᵀR₂‖²_F / (‖R₁ᵀR₁‖_F ‖R₂ᵀR₂‖_F)`, optionally on column-centered
/// copies of the inputs.
pub fn cka_with(r1: &Matrix, r2: &Matrix, centered: bool) -> Result<f64> {
    ensure!(
        r1.rows() == r2.rows(),
        "activation matrices cover different examples ({} vs {} rows)",
        r1.rows(),
        r2.rows()
    );
    ensure!(r1.rows() >= 2, "CKA needs at least 2 examples");
    let (a, b) = if centered {
        (r1.center_columns(), r2.center_columns())
    } else {
        (r1.clone(), r2.clone())
    };
    if frobenius_norm(&a) == 0.0 || frobenius_norm(&b) == 0.0 {
        return Err(Error::UndefinedSimilarity(
            "an activation matrix has no variance across examples".into(),
        ));
    }
    let cross = frobenius_norm(&matmul_tn(&a, &b)?);
    let self_a = frobenius_norm(&matmul_tn(&a, &a)?);
    let self_b = frobenius_norm(&matmul_tn(&b, &b)?);
    Ok(cross * cross / (self_a * self_b))
}

/// The first `min(CKA_PROBE_SIZE, len)` examples of a dataset.
pub fn cka_probe(ds: &Dataset) -> Result<Batch> {
    let n = ds.len().min(CKA_PROBE_SIZE);
    ds.batch(&(0..n).collect::<Vec<_>>())
}

/// Post-ReLU outputs of each hidden layer, without dropout.
pub fn hidden_activations(params: &ParamVector, probe: &Batch, cfg: &MlpConfig) -> Result<Vec<Matrix>> {
    let mut acts = forward(params, probe, None, cfg)?.activations;
    acts.pop();
    Ok(acts)
}

/// CKA between hidden layer `i` of `wa` and hidden layer `j` of `wb`, as
/// `(i, j, score)` with 1-based layer indices in row-major order.
pub fn layer_cka(wa: &ParamVector, wb: &ParamVector, probe: &Batch, cfg: &MlpConfig) -> Result<Vec<(usize, usize, f64)>> {
    let ra = hidden_activations(wa, probe, cfg)?;
    let rb = hidden_activations(wb, probe, cfg)?;
    let mut out = Vec::with_capacity(ra.len() * rb.len());
    for (i, a) in ra.iter().enumerate() {
        for (j, b) in rb.iter().enumerate() {
            out.push((i + 1, j + 1, cka(a, b)?));
        }
    }
    Ok(out)
}

/// Symmetric matrix of Euclidean distances with an exactly zero diagonal.
pub fn pairwise_distance(checkpoints: &[ParamVector]) -> Result<Matrix> {
    let n = checkpoints.len();
    for w in checkpoints.iter().skip(1) {
        checkpoints[0].check_layout(w)?;
    }
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let d = checkpoints[i].distance(&checkpoints[j])?;
            m.set(i, j, d);
            m.set(j, i, d);
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Layout;
    use crate::rng::Rng;
    use nalgebra::DMatrix;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn random(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
        Matrix::new(rows, cols, (0..rows * cols).map(|_| rng.normal()).collect()).unwrap()
    }

    fn to_na(m: &Matrix) -> DMatrix<f64> {
        DMatrix::from_row_slice(m.rows(), m.cols(), m.data())
    }

    /// HSIC form: tr(K H L H) with Gram matrices over examples.
    fn hsic_cka(r1: &Matrix, r2: &Matrix) -> f64 {
        let (x, y) = (to_na(r1), to_na(r2));
        let n = x.nrows();
        let h = DMatrix::<f64>::identity(n, n) - DMatrix::from_element(n, n, 1.0 / n as f64);
        let k = &h * (&x * x.transpose()) * &h;
        let l = &h * (&y * y.transpose()) * &h;
        let hsic = |a: &DMatrix<f64>, b: &DMatrix<f64>| a.component_mul(b).sum();
        hsic(&k, &l) / (hsic(&k, &k) * hsic(&l, &l)).sqrt()
    }

    fn orthogonal(n: usize, rng: &mut Rng) -> Matrix {
        let a = to_na(&random(n, n, rng));
        let q = a.qr().q();
        let rows: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| q[(i, j)]).collect()).collect();
        Matrix::from_rows(&rows).unwrap()
    }

    #[test]
    fn self_similarity_and_invariances() {
        let mut rng = Rng::new(11);
        let r = random(200, 32, &mut rng);
        assert!((cka(&r, &r).unwrap() - 1.0).abs() < 1e-10);
        let q = orthogonal(32, &mut rng);
        let rq = crate::linalg::matmul(&r, &q).unwrap();
        assert!((cka(&r, &rq).unwrap() - 1.0).abs() < 1e-10);
        assert!((cka(&r, &r.scale(-3.7)).unwrap() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn agrees_with_hsic_oracle() {
        let mut rng = Rng::new(12);
        for _ in 0..3 {
            let (a, b) = (random(200, 32, &mut rng), random(200, 32, &mut rng));
            let got = cka(&a, &b).unwrap();
            let want = hsic_cka(&a, &b);
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
            assert!((0.0..=1.0 + 1e-10).contains(&got));
        }
    }

    #[test]
    fn constant_activations_are_undefined() {
        let mut rng = Rng::new(13);
        let r = random(10, 4, &mut rng);
        let c = Matrix::new(10, 4, vec![2.5; 40]).unwrap();
        assert!(matches!(cka(&r, &c), Err(Error::UndefinedSimilarity(_))));
        assert!(cka_with(&r, &c, false).is_ok());
        assert!(matches!(cka(&r, &random(9, 4, &mut rng)), Err(Error::Contract(_))));
    }

    #[test]
    fn uncentered_variant_differs_under_offsets() {
        let mut rng = Rng::new(14);
        let r = random(50, 6, &mut rng);
        let shifted = Matrix::new(50, 6, r.data().iter().map(|v| v + 10.0).collect()).unwrap();
        assert!((cka(&r, &shifted).unwrap() - 1.0).abs() < 1e-10);
        assert!(cka_with(&r, &shifted, false).unwrap() < 0.99);
    }

    fn pv(v: Vec<f64>) -> ParamVector {
        let layout = Arc::new(Layout::new(vec![("w".into(), vec![v.len()])]));
        ParamVector::new(layout, v).unwrap()
    }

    #[test]
    fn distance_examples() {
        let d = pairwise_distance(&[pv(vec![0.0; 9]), pv(vec![1.0; 9]), pv(vec![0.0; 9])]).unwrap();
        assert_eq!(d.get(0, 1), 3.0);
        assert_eq!(d.get(1, 0), 3.0);
        assert_eq!(d.get(0, 2), 0.0);
        assert!((0..3).all(|i| d.get(i, i) == 0.0));
        let other = ParamVector::new(Arc::new(Layout::new(vec![("v".into(), vec![9])])), vec![0.0; 9]).unwrap();
        assert!(pairwise_distance(&[pv(vec![0.0; 9]), other]).is_err());
    }

    proptest! {
        #[test]
        fn triangle_inequality(
            a in prop::collection::vec(-5.0f64..5.0, 6),
            b in prop::collection::vec(-5.0f64..5.0, 6),
            c in prop::collection::vec(-5.0f64..5.0, 6),
        ) {
            let d = pairwise_distance(&[pv(a), pv(b), pv(c)]).unwrap();
            prop_assert!(d.get(0, 2) <= d.get(0, 1) + d.get(1, 2) + 1e-12);
            for i in 0..3 {
                for j in 0..3 {
                    prop_assert_eq!(d.get(i, j), d.get(j, i));
                }
            }
        }
    }
}
