//! Averaged gradient episodic memory.

use super::StepHook;
use crate::data::ReplayBuffer;
use crate::error::Result;
use crate::model::{grad, MlpConfig, ParamVector};
use crate::rng::Rng;

#[derive(Clone, Debug)]
pub struct AgemProjection {
    pub grad: ParamVector,
    /// The update conflicted with the reference and was projected.
    pub projected: bool,
    /// A conflict was detected against a zero reference; `grad` is unchanged.
    pub degenerate: bool,
}

/// `g − (g·g_ref / g_ref·g_ref) g_ref` when `g·g_ref < 0`, else `g`.
pub fn agem_project(g: &ParamVector, g_ref: &ParamVector) -> Result<AgemProjection> {
    let d = g.dot(g_ref)?;
    if d >= 0.0 {
        return Ok(AgemProjection {
            grad: g.clone(),
            projected: false,
            degenerate: false,
        });
    }
    let rr = g_ref.dot(g_ref)?;
    if rr == 0.0 {
        return Ok(AgemProjection {
            grad: g.clone(),
            projected: false,
            degenerate: true,
        });
    }
    let mut out = g.clone();
    out.axpy(-d / rr, g_ref)?;
    Ok(AgemProjection {
        grad: out,
        projected: true,
        degenerate: false,
    })
}

/// Projects every step's gradient against the mean gradient of a replay
/// batch of `min(memory, ref_size)` examples.
pub struct AgemHook<'a> {
    pub memory: &'a ReplayBuffer,
    pub ref_size: usize,
    pub mlp: MlpConfig,
    pub rng: Rng,
    pub projections: usize,
}

impl StepHook for AgemHook<'_> {
    fn adjust(&mut self, params: &ParamVector, g: &mut ParamVector) -> Result<()> {
        let Some(batch) = self.memory.sample_batch(self.ref_size, &mut self.rng) else {
            return Ok(());
        };
        let g_ref = grad(params, &batch, None, &self.mlp)?;
        let p = agem_project(g, &g_ref)?;
        if p.projected {
            self.projections += 1;
            *g = p.grad;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Layout;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn pv(v: Vec<f64>) -> ParamVector {
        let layout = Arc::new(Layout::new(vec![("x".into(), vec![v.len()])]));
        ParamVector::new(layout, v).unwrap()
    }

    #[test]
    fn hand_example() {
        let p = agem_project(&pv(vec![1.0, 0.0]), &pv(vec![-1.0, 1.0])).unwrap();
        assert!(p.projected);
        assert_eq!(p.grad.as_slice(), &[0.5, 0.5]);
        assert_eq!(p.grad.dot(&pv(vec![-1.0, 1.0])).unwrap(), 0.0);
    }

    #[test]
    fn no_conflict_is_untouched() {
        let g = pv(vec![1.0, 2.0]);
        let p = agem_project(&g, &pv(vec![0.5, -0.1])).unwrap();
        assert!(!p.projected);
        assert_eq!(p.grad, g);
        let z = agem_project(&g, &pv(vec![0.0, 0.0])).unwrap();
        assert!(!z.projected && !z.degenerate);
    }

    proptest! {
        #[test]
        fn projection_removes_the_conflict(
            g in prop::collection::vec(-10.0f64..10.0, 12),
            r in prop::collection::vec(-10.0f64..10.0, 12),
        ) {
            let (g, r) = (pv(g), pv(r));
            prop_assume!(r.norm() > 1e-6);
            let p = agem_project(&g, &r).unwrap();
            let d = p.grad.dot(&r).unwrap();
            prop_assert!(d >= -1e-10 * p.grad.norm() * r.norm());
            if g.dot(&r).unwrap() < 0.0 {
                prop_assert!(d.abs() <= 1e-10 * g.norm() * r.norm());
            }
        }
    }
}
