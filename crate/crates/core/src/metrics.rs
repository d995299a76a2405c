//! Evaluation: per-task accuracy bookkeeping and the two summary metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Example, MlpModel};

/// Per-(eval point, task) accuracies. Row 0 is the untrained model; one
/// further row is appended after each task block (and the stream end).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    n_tasks: usize,
    rows: Vec<Vec<f64>>,
}

impl AccuracyMatrix {
    pub fn new(n_tasks: usize) -> Self {
        Self {
            n_tasks,
            rows: Vec::new(),
        }
    }

    pub fn push_row(&mut self, row: Vec<f64>) {
        assert_eq!(row.len(), self.n_tasks, "accuracy row has wrong width");
        debug_assert!(row.iter().all(|a| (0.0..=1.0).contains(a)));
        self.rows.push(row);
    }

    pub fn n_tasks(&self) -> usize {
        self.n_tasks
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn final_row(&self) -> Option<&[f64]> {
        self.rows.last().map(|r| r.as_slice())
    }
}

/// Fraction of `set` whose logits argmax equals the label.
pub fn accuracy(model: &MlpModel, set: &[Example]) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::invalid_input("accuracy: empty evaluation set"));
    }
    let mut correct = 0usize;
    for ex in set {
        let logits = model.logits(&ex.features)?;
        let mut best = 0;
        for (i, &z) in logits.iter().enumerate().skip(1) {
            if z > logits[best] {
                best = i;
            }
        }
        if best == ex.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / set.len() as f64)
}

/// Mean accuracy over all tasks at the end of the stream (final row).
pub fn average_accuracy(matrix: &AccuracyMatrix) -> f64 {
    match matrix.final_row() {
        Some(row) if !row.is_empty() => row.iter().sum::<f64>() / row.len() as f64,
        _ => 0.0,
    }
}

/// Mean over all but the last-learned task of (best accuracy after any
/// earlier training block − final accuracy). Non-negative whenever each
/// task's own training row is in the max, zero with fewer than two tasks.
pub fn forgetting(matrix: &AccuracyMatrix) -> f64 {
    let rows = matrix.rows();
    let t = matrix.n_tasks();
    if t < 2 || rows.len() < 3 {
        return 0.0;
    }
    let final_row = &rows[rows.len() - 1];
    // training rows are 1..len-1; row 0 is the untrained model
    let previous = &rows[1..rows.len() - 1];
    let mut total = 0.0;
    for task in 0..t - 1 {
        let best = previous
            .iter()
            .map(|r| r[task])
            .fold(f64::NEG_INFINITY, f64::max);
        total += best - final_row[task];
    }
    total / (t - 1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn matrix(n_tasks: usize, rows: &[&[f64]]) -> AccuracyMatrix {
        let mut m = AccuracyMatrix::new(n_tasks);
        for r in rows {
            m.push_row(r.to_vec());
        }
        m
    }

    #[test]
    fn average_accuracy_examples() {
        let m = matrix(2, &[&[0.0, 0.0], &[1.0, 1.0]]);
        assert_abs_diff_eq!(average_accuracy(&m), 1.0);
        let m = matrix(2, &[&[0.0, 0.0], &[0.8, 0.6]]);
        assert_abs_diff_eq!(average_accuracy(&m), 0.7);
        assert!((0.0..=1.0).contains(&average_accuracy(&m)));
    }

    #[test]
    fn forgetting_examples() {
        // accuracies never drop -> 0
        let m = matrix(
            2,
            &[&[0.5, 0.5], &[0.7, 0.5], &[0.8, 0.9]],
        );
        assert!(forgetting(&m) <= 0.0 + 1e-12);

        // 2 tasks: a[1][0] = 0.9 falls to a[2][0] = 0.7 -> F = 0.2
        let m = matrix(2, &[&[0.1, 0.1], &[0.9, 0.2], &[0.7, 0.95]]);
        assert_abs_diff_eq!(forgetting(&m), 0.2, epsilon = 1e-12);

        // max includes each task's own training row, so F >= 0 when the
        // final row cannot beat every earlier row
        let m = matrix(3, &[&[0.0; 3], &[0.9, 0.1, 0.1], &[0.6, 0.8, 0.2], &[0.5, 0.7, 0.9]]);
        assert!(forgetting(&m) >= 0.0);

        // degenerate shapes
        assert_eq!(forgetting(&matrix(1, &[&[0.5], &[0.9]])), 0.0);
        assert_eq!(forgetting(&matrix(2, &[&[0.5, 0.5]])), 0.0);
    }

    #[test]
    fn accuracy_counts_argmax_matches() {
        let model = crate::nn::MlpModel::zeroed(&[2, 3]).unwrap();
        // zero model predicts class 0 on ties (first argmax)
        let set = vec![
            Example::new(0, vec![0.1, 0.2], 0),
            Example::new(1, vec![0.3, 0.4], 1),
        ];
        assert_abs_diff_eq!(accuracy(&model, &set).unwrap(), 0.5);
        assert!(accuracy(&model, &[]).is_err());
    }
}
