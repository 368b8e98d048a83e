//! Continual-learning metrics over the accuracy matrix `a[t][i]`.

use crate::error::{ensure, Result};

/// Lower-triangular accuracies: `a(t, i)` is the accuracy on task `i` after
/// finishing task `t`, for `1 ≤ i ≤ t ≤ T`.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalMatrix {
    rows: Vec<Vec<Option<f64>>>,
}

impl EvalMatrix {
    pub fn new(num_tasks: usize) -> Self {
        EvalMatrix {
            rows: (1..=num_tasks).map(|t| vec![None; t]).collect(),
        }
    }

    pub fn num_tasks(&self) -> usize {
        self.rows.len()
    }

    pub fn set(&mut self, t: usize, i: usize, accuracy: f64) -> Result<()> {
        self.check_index(t, i)?;
        ensure!(
            (0.0..=1.0).contains(&accuracy),
            "accuracy {accuracy} outside [0, 1] at ({t}, {i})"
        );
        self.rows[t - 1][i - 1] = Some(accuracy);
        Ok(())
    }

    pub fn get(&self, t: usize, i: usize) -> Option<f64> {
        self.rows.get(t.wrapping_sub(1))?.get(i.wrapping_sub(1)).copied().flatten()
    }

    /// Row `t`, which must be fully populated.
    pub fn row(&self, t: usize) -> Result<Vec<f64>> {
        ensure!(t >= 1 && t <= self.num_tasks(), "row {t} outside 1..={}", self.num_tasks());
        self.rows[t - 1]
            .iter()
            .enumerate()
            .map(|(i, a)| a.ok_or_else(|| crate::Error::contract(format!("missing entry ({t}, {})", i + 1))))
            .collect()
    }

    /// Populated `(t, i, a)` entries in row-major order.
    pub fn entries(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for (t, row) in self.rows.iter().enumerate() {
            for (i, a) in row.iter().enumerate() {
                if let Some(a) = a {
                    out.push((t + 1, i + 1, *a));
                }
            }
        }
        out
    }

    /// Number of leading rows that are fully populated.
    pub fn complete_rows(&self) -> usize {
        self.rows.iter().take_while(|r| r.iter().all(Option::is_some)).count()
    }

    fn check_index(&self, t: usize, i: usize) -> Result<()> {
        ensure!(
            i >= 1 && i <= t && t <= self.num_tasks(),
            "entry ({t}, {i}) outside the lower triangle of a {}-task matrix",
            self.num_tasks()
        );
        Ok(())
    }
}

/// `A_t`: mean of row `t`.
pub fn average_accuracy(m: &EvalMatrix, t: usize) -> Result<f64> {
    let row = m.row(t)?;
    Ok(row.iter().sum::<f64>() / t as f64)
}

/// `F` after task `t`: mean over `i < t` of the largest drop from any earlier
/// row to row `t`.
pub fn forgetting_at(m: &EvalMatrix, t: usize) -> Result<f64> {
    ensure!(t >= 2, "forgetting needs at least two tasks, got {t}");
    let rows = (1..=t).map(|s| m.row(s)).collect::<Result<Vec<_>>>()?;
    let last = &rows[t - 1];
    let mut total = 0.0;
    for i in 0..t - 1 {
        let mut best = f64::NEG_INFINITY;
        for row in rows.iter().take(t - 1).skip(i) {
            best = best.max(row[i] - last[i]);
        }
        total += best;
    }
    Ok(total / (t - 1) as f64)
}

/// `F` after the final task.
pub fn average_forgetting(m: &EvalMatrix) -> Result<f64> {
    forgetting_at(m, m.num_tasks())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_examples() {
        let mut m = EvalMatrix::new(1);
        m.set(1, 1, 0.9).unwrap();
        assert_eq!(average_accuracy(&m, 1).unwrap(), 0.9);
        assert!(average_forgetting(&m).is_err());

        let mut m = EvalMatrix::new(2);
        m.set(1, 1, 0.9).unwrap();
        m.set(2, 1, 0.5).unwrap();
        m.set(2, 2, 0.8).unwrap();
        assert_eq!(average_accuracy(&m, 2).unwrap(), 0.65);
        assert_eq!(average_forgetting(&m).unwrap(), 0.9 - 0.5);
    }

    #[test]
    fn constant_matrix_has_no_forgetting() {
        let mut m = EvalMatrix::new(4);
        for t in 1..=4 {
            for i in 1..=t {
                m.set(t, i, 0.7).unwrap();
            }
        }
        assert_eq!(average_forgetting(&m).unwrap(), 0.0);
    }

    #[test]
    fn missing_and_invalid_entries() {
        let mut m = EvalMatrix::new(2);
        m.set(1, 1, 0.5).unwrap();
        assert!(average_accuracy(&m, 2).is_err());
        assert!(m.set(1, 2, 0.5).is_err());
        assert!(m.set(2, 1, 1.5).is_err());
        assert_eq!(m.complete_rows(), 1);
        assert_eq!(m.get(3, 1), None);
    }
}
