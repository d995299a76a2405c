//! Finite-difference validation of the two analytic gradient paths:
//! backpropagation through the classifier, and the alignment-objective
//! gradient used by the one-step combiner.

use std::fmt;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::combiner::{pgd_grad, sigmoid};
use crate::error::Result;
use crate::nn::{Example, MlpModel, ParamVector};

/// Central finite differences of the batch loss over every parameter.
pub fn finite_diff_model_grad(model: &MlpModel, batch: &[Example], h: f64) -> Result<ParamVector> {
    let base = model.flatten();
    let mut grad = vec![0.0; base.len()];
    let mut probe = base.clone();
    for i in 0..base.len() {
        let orig = base.as_slice()[i];
        probe.as_mut_slice()[i] = orig + h;
        let plus = model.with_params(&probe)?.loss(batch)?;
        probe.as_mut_slice()[i] = orig - h;
        let minus = model.with_params(&probe)?.loss(batch)?;
        probe.as_mut_slice()[i] = orig;
        grad[i] = (plus - minus) / (2.0 * h);
    }
    Ok(ParamVector::new(grad))
}

/// The alignment objective `f(w) = -Σ cos(w, g_i; ε) · sigmoid(‖g_i‖)`
/// evaluated directly (the `ε` floor applies to `‖g_i‖` in the denominator,
/// which is constant with respect to `w`).
pub fn alignment_objective(w: &ParamVector, grads: &[&ParamVector], epsilon: f64) -> f64 {
    let w_norm = w.l2_norm();
    -grads
        .iter()
        .map(|g_i| {
            let gi_norm = g_i.l2_norm();
            w.dot(g_i) / (w_norm * gi_norm.max(epsilon)) * sigmoid(gi_norm)
        })
        .sum::<f64>()
}

/// Central finite differences of the alignment objective over `w`.
pub fn finite_diff_alignment_grad(
    w: &ParamVector,
    grads: &[&ParamVector],
    epsilon: f64,
    h: f64,
) -> ParamVector {
    let mut grad = vec![0.0; w.len()];
    let mut probe = w.clone();
    for i in 0..w.len() {
        let orig = w.as_slice()[i];
        probe.as_mut_slice()[i] = orig + h;
        let plus = alignment_objective(&probe, grads, epsilon);
        probe.as_mut_slice()[i] = orig - h;
        let minus = alignment_objective(&probe, grads, epsilon);
        probe.as_mut_slice()[i] = orig;
        grad[i] = (plus - minus) / (2.0 * h);
    }
    ParamVector::new(grad)
}

/// Largest guarded relative error over coordinates:
/// `|a - n| / max(|a|, |n|, floor)`.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Outcome of the full finite-difference suite.
#[derive(Debug, Clone, serde::Serialize)]
pub struct GradcheckReport {
    pub backprop_cases: usize,
    pub backprop_max_rel_err: f64,
    pub backprop_tol: f64,
    pub alignment_cases: usize,
    pub alignment_max_rel_err: f64,
    pub alignment_tol: f64,
    pub passed: bool,
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "backprop : {} cases, max rel err {:.3e} (tol {:.0e}) -> {}",
            self.backprop_cases,
            self.backprop_max_rel_err,
            self.backprop_tol,
            verdict(self.backprop_max_rel_err < self.backprop_tol),
        )?;
        write!(
            f,
            "alignment: {} cases, max rel err {:.3e} (tol {:.0e}) -> {}",
            self.alignment_cases,
            self.alignment_max_rel_err,
            self.alignment_tol,
            verdict(self.alignment_max_rel_err < self.alignment_tol),
        )
    }
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "pass"
    } else {
        "FAIL"
    }
}

/// Run both finite-difference suites. Backprop is checked on the layer
/// shapes (4,3,2) and (6,5,4,3) with h = 1e-5; the alignment gradient on
/// random 10-dimensional instances with h = 2e-5.
pub fn run_gradcheck(backprop_tol: f64, alignment_tol: f64, seed: u64) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut backprop_max: f64 = 0.0;
    let mut backprop_cases = 0;
    for shape in [vec![4usize, 3, 2], vec![6, 5, 4, 3]] {
        for _ in 0..60 {
            let model = MlpModel::new(&shape, &mut rng)?;
            // Jitter every parameter (the zero-initialized biases above
            // all) to a generic point: with a bias exactly 0, an example
            // whose previous layer fully clamps puts a pre-activation
            // right on the ReLU kink, where central differences straddle
            // the subgradient.
            let jittered = ParamVector::new(
                model
                    .flatten()
                    .into_vec()
                    .iter()
                    .map(|v| v + rng.random_range(-0.05..0.05))
                    .collect(),
            );
            let model = model.with_params(&jittered)?;
            let classes = *shape.last().unwrap();
            let batch: Vec<Example> = (0..rng.random_range(1..=3))
                .map(|i| {
                    Example::new(
                        i,
                        (0..shape[0]).map(|_| rng.random_range(-1.0..1.0)).collect(),
                        rng.random_range(0..classes),
                    )
                })
                .collect();
            let (_, analytic) = model.loss_and_grad(&batch)?;
            let numeric = finite_diff_model_grad(&model, &batch, 1e-5)?;
            backprop_max = backprop_max.max(max_rel_err(
                analytic.as_slice(),
                numeric.as_slice(),
                1e-4,
            ));
            backprop_cases += 1;
        }
    }

    let mut alignment_max: f64 = 0.0;
    let mut alignment_cases = 0;
    let epsilon = 1e-8;
    for _ in 0..120 {
        let dim = 10;
        let w = ParamVector::new((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect());
        if w.l2_norm() < 0.1 {
            continue;
        }
        let grads: Vec<ParamVector> = (0..rng.random_range(1..=5))
            .map(|_| ParamVector::new((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()))
            .collect();
        let refs: Vec<&ParamVector> = grads.iter().collect();
        let analytic = pgd_grad(&w, &refs, epsilon)?;
        let numeric = finite_diff_alignment_grad(&w, &refs, epsilon, 2e-5);
        alignment_max = alignment_max.max(max_rel_err(
            analytic.as_slice(),
            numeric.as_slice(),
            1e-3,
        ));
        alignment_cases += 1;
    }

    Ok(GradcheckReport {
        backprop_cases,
        backprop_max_rel_err: backprop_max,
        backprop_tol,
        alignment_cases,
        alignment_max_rel_err: alignment_max,
        alignment_tol,
        passed: backprop_max < backprop_tol && alignment_max < alignment_tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_suite_passes() {
        let report = run_gradcheck(1e-5, 1e-6, 42).unwrap();
        assert!(report.passed, "{report}");
        assert!(report.backprop_cases >= 100);
        assert!(report.alignment_cases >= 100);
    }

    #[test]
    fn detects_a_broken_gradient() {
        // A corrupted analytic gradient must blow past the tolerance; this
        // guards the checker itself against vacuous passes.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = MlpModel::new(&[4, 3, 2], &mut rng).unwrap();
        let batch = vec![Example::new(0, vec![0.5, -0.5, 0.25, 0.1], 1)];
        let (_, analytic) = model.loss_and_grad(&batch).unwrap();
        let numeric = finite_diff_model_grad(&model, &batch, 1e-5).unwrap();
        assert!(max_rel_err(analytic.as_slice(), numeric.as_slice(), 1e-4) < 1e-5);

        let mut corrupted = analytic.clone().into_vec();
        corrupted[0] += 0.05;
        assert!(max_rel_err(&corrupted, numeric.as_slice(), 1e-4) > 1e-2);
    }
}
