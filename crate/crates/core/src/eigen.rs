//! Top-k eigenpairs of symmetric operators known only through
//! matrix-vector products.

use crate::error::{ensure, Result};
use crate::linalg::{axpy, dot, norm, Matrix, Vector};
use crate::rng::Rng;

/// A linear, symmetric map accessed only through `apply`.
pub trait SymOperator: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, v: &[f64]) -> Vec<f64>;
}

/// Explicit symmetric matrix as an operator.
pub struct DenseOperator(pub Matrix);

impl SymOperator for DenseOperator {
    fn dim(&self) -> usize {
        self.0.rows()
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        (0..self.0.rows()).map(|i| dot(self.0.row(i), v)).collect()
    }
}

#[derive(Clone, Debug)]
pub struct Eigenpair {
    pub value: f64,
    pub vector: Vector,
    pub converged: bool,
    /// The deflated operator vanished on the iterate.
    pub degenerate: bool,
    pub iterations: usize,
}

pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITERS: usize = 200;

/// Hotelling-deflated power iteration.
///
/// Pairs come back sorted by descending `|λ|`. Hitting `max_iters` is not an
/// error; the pair is returned with `converged = false`.
pub fn power_iteration_deflated<O: SymOperator + ?Sized>(
    op: &O,
    k: usize,
    max_iters: usize,
    tol: f64,
    rng: &mut Rng,
) -> Result<Vec<Eigenpair>> {
    let n = op.dim();
    ensure!(k >= 1 && k <= n, "k = {k} must lie in [1, {n}]");
    ensure!(tol > 0.0, "tolerance must be positive, got {tol}");

    let mut found: Vec<Eigenpair> = Vec::with_capacity(k);
    for _ in 0..k {
        let mut v: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        orthogonalize(&mut v, &found);
        let mut nv = norm(&v);
        if nv == 0.0 {
            v = vec![1.0; n];
            orthogonalize(&mut v, &found);
            nv = norm(&v);
        }
        v.iter_mut().for_each(|x| *x /= nv);

        let mut prev: Option<f64> = None;
        let mut converged = false;
        let mut degenerate = false;
        let mut iterations = 0;
        while iterations < max_iters {
            iterations += 1;
            let mut w = deflated_apply(op, &v, &found);
            orthogonalize(&mut w, &found);
            let lambda = dot(&v, &w);
            let nw = norm(&w);
            if nw == 0.0 || !nw.is_finite() {
                degenerate = true;
                break;
            }
            w.iter_mut().for_each(|x| *x /= nw);
            v = w;
            if let Some(p) = prev {
                if (lambda - p).abs() <= tol * lambda.abs().max(f64::MIN_POSITIVE) {
                    converged = true;
                    break;
                }
            }
            prev = Some(lambda);
        }

        let value = if degenerate {
            0.0
        } else {
            dot(&v, &deflated_apply(op, &v, &found))
        };
        fix_sign(&mut v);
        found.push(Eigenpair {
            value,
            vector: Vector::from(v),
            converged: converged || degenerate,
            degenerate,
            iterations,
        });
    }
    found.sort_by(|a, b| b.value.abs().total_cmp(&a.value.abs()));
    Ok(found)
}

fn deflated_apply<O: SymOperator + ?Sized>(op: &O, v: &[f64], found: &[Eigenpair]) -> Vec<f64> {
    let mut w = op.apply(v);
    for p in found {
        let c = p.value * dot(p.vector.as_slice(), v);
        axpy(&mut w, -c, p.vector.as_slice());
    }
    w
}

fn orthogonalize(v: &mut [f64], found: &[Eigenpair]) {
    for p in found {
        let c = dot(p.vector.as_slice(), v);
        axpy(v, -c, p.vector.as_slice());
    }
}

/// Makes the first component with magnitude above 1e-12 positive.
pub(crate) fn fix_sign(v: &mut [f64]) {
    if let Some(&first) = v.iter().find(|x| x.abs() > 1e-12) {
        if first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}
