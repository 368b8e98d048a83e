//! Loss along straight lines and over planes in parameter space.

use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{ensure, Result};
use crate::eval::evaluate;
use crate::linalg::{gram_schmidt_pair, Vector};
use crate::model::{interpolate, MlpConfig, ParamVector};

#[derive(Clone, Debug, PartialEq)]
pub struct InterpCurve {
    /// Strictly increasing from 0 to 1.
    pub alphas: Vec<f64>,
    pub losses: Vec<f64>,
    pub accuracies: Vec<f64>,
    pub endpoints: (String, String),
    pub task_id: usize,
}

impl InterpCurve {
    pub fn labelled(mut self, from: &str, to: &str, task_id: usize) -> Self {
        self.endpoints = (from.to_string(), to.to_string());
        self.task_id = task_id;
        self
    }
}

/// Evenly spaced `α` in [0, 1], both ends included and exact.
pub fn alpha_grid(num_points: usize) -> Vec<f64> {
    let last = (num_points - 1) as f64;
    (0..num_points).map(|k| k as f64 / last).collect()
}

/// Validation loss and accuracy (no dropout) at `num_points` evenly spaced
/// points of `w1 + α(w2 − w1)`.
pub fn interp_curve(
    w1: &ParamVector,
    w2: &ParamVector,
    test: &Dataset,
    cfg: &MlpConfig,
    num_points: usize,
) -> Result<InterpCurve> {
    interp_curve_with(w1, w2, num_points, |p| {
        let e = evaluate(p, test, cfg)?;
        Ok((e.loss, e.accuracy))
    })
}

/// [`interp_curve`] for any `(loss, accuracy)` evaluator. Points are
/// evaluated in parallel and stored in `α` order.
pub fn interp_curve_with<F>(w1: &ParamVector, w2: &ParamVector, num_points: usize, eval: F) -> Result<InterpCurve>
where
    F: Fn(&ParamVector) -> Result<(f64, f64)> + Sync,
{
    ensure!(num_points >= 2, "an interpolation curve needs at least 2 points, got {num_points}");
    w1.check_layout(w2)?;
    let alphas = alpha_grid(num_points);
    let points = alphas
        .par_iter()
        .map(|&a| eval(&interpolate(w1, w2, a)?))
        .collect::<Result<Vec<_>>>()?;
    let (losses, accuracies) = points.into_iter().unzip();
    Ok(InterpCurve {
        alphas,
        losses,
        accuracies,
        endpoints: (String::new(), String::new()),
        task_id: 0,
    })
}

/// Largest excess of the path loss over the chord joining the end losses.
pub fn barrier(curve: &InterpCurve) -> f64 {
    let n = curve.losses.len();
    let (l0, l1) = (curve.losses[0], curve.losses[n - 1]);
    curve
        .alphas
        .iter()
        .zip(&curve.losses)
        .map(|(&a, &l)| l - ((1.0 - a) * l0 + a * l1))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Loss over the plane through three checkpoints.
#[derive(Clone, Debug)]
pub struct PlaneGrid {
    pub origin: ParamVector,
    /// `w2 − w1`.
    pub u: Vector,
    /// `w3 − w1` with its `u` component removed.
    pub v: Vector,
    /// `(x, y, loss)` in row-major order over `ys × xs`.
    pub grid: Vec<(f64, f64, f64)>,
    pub resolution: usize,
    /// `(x, y, loss)` evaluated at `w1`, `w2`, `w3` themselves.
    pub anchors: [(f64, f64, f64); 3],
}

impl PlaneGrid {
    /// The parameter vector at plane coordinates `(x, y)`.
    pub fn point(&self, x: f64, y: f64) -> ParamVector {
        plane_point(&self.origin, &self.u, &self.v, x, y)
    }
}

fn plane_point(origin: &ParamVector, u: &Vector, v: &Vector, x: f64, y: f64) -> ParamVector {
    let vals = origin
        .as_slice()
        .iter()
        .zip(u.as_slice().iter().zip(v.as_slice()))
        .map(|(o, (a, b))| o + x * a + y * b)
        .collect();
    origin.with_values(vals).expect("same length")
}

/// Loss on `p(x, y) = w1 + x·u + y·v` over the bounding box of the three
/// checkpoints, widened by `margin` of its extent on every side.
///
/// In these coordinates `w1` is `(0, 0)`, `w2` is `(1, 0)` and `w3` is
/// `(u·(w3 − w1) / u·u, 1)`.
pub fn plane_surface(
    w1: &ParamVector,
    w2: &ParamVector,
    w3: &ParamVector,
    test: &Dataset,
    cfg: &MlpConfig,
    resolution: usize,
    margin: f64,
) -> Result<PlaneGrid> {
    plane_surface_with(w1, w2, w3, resolution, margin, |p| Ok(evaluate(p, test, cfg)?.loss))
}

pub fn plane_surface_with<F>(
    w1: &ParamVector,
    w2: &ParamVector,
    w3: &ParamVector,
    resolution: usize,
    margin: f64,
    loss: F,
) -> Result<PlaneGrid>
where
    F: Fn(&ParamVector) -> Result<f64> + Sync,
{
    ensure!(resolution >= 2, "plane resolution must be at least 2");
    ensure!(margin >= 0.0 && margin.is_finite(), "invalid plane margin {margin}");
    w1.check_layout(w2)?;
    w1.check_layout(w3)?;
    let du = Vector::from(w2.sub(w1)?.as_slice().to_vec());
    let dv = Vector::from(w3.sub(w1)?.as_slice().to_vec());
    let c = du.dot(&dv) / du.dot(&du);
    let (u, v) = gram_schmidt_pair(&du, &dv)?;

    let (x_lo, x_hi) = (c.min(0.0), c.max(1.0));
    let (x_pad, y_pad) = (margin * (x_hi - x_lo), margin);
    let xs = linspace(x_lo - x_pad, x_hi + x_pad, resolution);
    let ys = linspace(-y_pad, 1.0 + y_pad, resolution);
    let coords: Vec<(f64, f64)> = ys.iter().flat_map(|&y| xs.iter().map(move |&x| (x, y))).collect();
    let grid = coords
        .par_iter()
        .map(|&(x, y)| Ok((x, y, loss(&plane_point(w1, &u, &v, x, y))?)))
        .collect::<Result<Vec<_>>>()?;
    let anchors = [
        (0.0, 0.0, loss(w1)?),
        (1.0, 0.0, loss(w2)?),
        (c, 1.0, loss(w3)?),
    ];
    Ok(PlaneGrid {
        origin: w1.clone(),
        u,
        v,
        grid,
        resolution,
        anchors,
    })
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let step = (hi - lo) / (n - 1) as f64;
    (0..n).map(|k| if k == n - 1 { hi } else { lo + k as f64 * step }).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Layout;
    use std::sync::Arc;

    fn pv(v: Vec<f64>) -> ParamVector {
        let layout = Arc::new(Layout::new(vec![("w".into(), vec![v.len()])]));
        ParamVector::new(layout, v).unwrap()
    }

    fn curve(alphas: Vec<f64>, losses: Vec<f64>) -> InterpCurve {
        let accuracies = vec![0.0; losses.len()];
        InterpCurve {
            alphas,
            losses,
            accuracies,
            endpoints: Default::default(),
            task_id: 1,
        }
    }

    #[test]
    fn barrier_examples() {
        assert_eq!(barrier(&curve(vec![0.0, 0.5, 1.0], vec![0.0, 1.0, 0.0])), 1.0);
        assert_eq!(barrier(&curve(vec![0.0, 0.5, 1.0], vec![2.0, 2.0, 2.0])), 0.0);
        // x² between −1 and 1 stays under its chord.
        let c = interp_curve_with(&pv(vec![-1.0]), &pv(vec![1.0]), 21, |p| Ok((p.as_slice()[0].powi(2), 0.0))).unwrap();
        assert_eq!(barrier(&c), 0.0);
    }

    #[test]
    fn barrier_ignores_constant_shifts() {
        let c = curve(vec![0.0, 0.25, 0.5, 1.0], vec![0.3, 0.9, 0.7, 0.1]);
        let shifted = curve(c.alphas.clone(), c.losses.iter().map(|l| l + 5.0).collect());
        assert!((barrier(&c) - barrier(&shifted)).abs() < 1e-12);
    }

    #[test]
    fn degenerate_segment_is_flat_and_endpoints_are_exact() {
        let w = pv(vec![0.3, -0.7]);
        let f = |p: &ParamVector| Ok((p.as_slice().iter().map(|x| x.sin()).sum::<f64>(), 0.5));
        let c = interp_curve_with(&w, &w, 7, f).unwrap();
        assert!(c.losses.iter().all(|&l| l == c.losses[0]));
        let w2 = pv(vec![1.1, 0.2]);
        let c = interp_curve_with(&w, &w2, 5, f).unwrap();
        assert_eq!(c.losses[0], f(&w).unwrap().0);
        assert_eq!(c.losses[4], f(&w2).unwrap().0);
        assert_eq!(c.alphas, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert!(interp_curve_with(&w, &w2, 1, f).is_err());
    }

    #[test]
    fn plane_matches_closed_form_quadratic() {
        // L(a, b) = 3a² + ab + 2b² − a.
        let l = |p: &ParamVector| {
            let (a, b) = (p.as_slice()[0], p.as_slice()[1]);
            Ok(3.0 * a * a + a * b + 2.0 * b * b - a)
        };
        let (w1, w2, w3) = (pv(vec![0.5, -1.0]), pv(vec![2.0, 0.0]), pv(vec![-1.0, 1.5]));
        let g = plane_surface_with(&w1, &w2, &w3, 9, 0.1, l).unwrap();
        assert!(g.u.dot(&g.v).abs() < 1e-10 * g.u.norm() * g.v.norm());
        // Closed form: substitute p(x, y) = w1 + x·u + y·v by hand.
        let (u0, u1) = (1.5, 1.0);
        let c = (u0 * -1.5 + u1 * 2.5) / (u0 * u0 + u1 * u1);
        let (v0, v1) = (-1.5 - c * u0, 2.5 - c * u1);
        for &(x, y, loss) in &g.grid {
            let a = 0.5 + x * u0 + y * v0;
            let b = -1.0 + x * u1 + y * v1;
            let want = 3.0 * a * a + a * b + 2.0 * b * b - a;
            assert!((loss - want).abs() < 1e-10, "({x}, {y}): {loss} vs {want}");
        }
        assert_eq!(g.anchors[0].2, l(&w1).unwrap());
        assert_eq!(g.anchors[1].2, l(&w2).unwrap());
        assert_eq!(g.anchors[2].2, l(&w3).unwrap());
        assert!((g.anchors[2].0 - c).abs() < 1e-15);
        assert_eq!(g.grid.len(), 81);
    }

    #[test]
    fn collinear_checkpoints_are_rejected() {
        let l = |_: &ParamVector| Ok(0.0);
        let r = plane_surface_with(&pv(vec![0.0, 0.0]), &pv(vec![1.0, 1.0]), &pv(vec![2.0, 2.0]), 3, 0.1, l);
        assert!(matches!(r, Err(crate::Error::DegenerateBasis(_))));
    }
}
