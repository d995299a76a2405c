//! Combining the new-data gradient with replayed-example gradients.
//!
//! Two rules produce the update direction `w` from the incoming gradient `g`
//! and the gradients `{g_i}` of replayed examples:
//!
//! * [`er_combine`] — the experience-replay rule `w = g + g_ref`, the
//!   closed-form minimizer of `½‖g − w‖² − ⟨g_ref, w⟩`.
//! * [`pgd_combine`] — a proximal-gradient step on the sigmoid-length
//!   weighted cosine-alignment objective
//!   `f(w) = −Σ_i cos(w, g_i) · sigmoid(‖g_i‖)`, keeping `w` in the
//!   neighborhood of `g` while pulling it toward the principal direction of
//!   the replayed gradients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamVector;

/// Hyperparameters for [`pgd_combine`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinerConfig {
    /// Merged step size for the one-step solution `w = g − λ∇f(g)`.
    pub lambda: f64,
    /// Gradient-length floor: norms below `epsilon` are clamped in the
    /// denominator, and a `g` shorter than `epsilon` is returned unchanged.
    pub epsilon: f64,
    /// Proximal-gradient iterations; 1 gives the closed one-step form.
    pub steps: usize,
    /// Average the replayed gradients into this many groups before
    /// combining; `None` keeps one gradient per example.
    pub groups: Option<usize>,
    /// Explicit (alignment weight, proximity weight) for the multi-step
    /// iteration. `None` fixes the proximity weight to `lambda` and lets the
    /// alignment weight dominate, which reduces step 1 to the one-step form.
    pub alpha_beta: Option<(f64, f64)>,
}

impl Default for CombinerConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            epsilon: 1e-8,
            steps: 1,
            groups: None,
            alpha_beta: None,
        }
    }
}

impl CombinerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) {
            return Err(Error::invalid_config("combiner lambda must be > 0"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::invalid_config("combiner epsilon must be > 0"));
        }
        if self.steps == 0 {
            return Err(Error::invalid_config("combiner steps must be >= 1"));
        }
        if self.groups == Some(0) {
            return Err(Error::invalid_config("combiner groups must be >= 1"));
        }
        Ok(())
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Experience-replay direction: the elementwise sum `g + g_ref`.
pub fn er_combine(g: &ParamVector, g_ref: &ParamVector) -> Result<ParamVector> {
    if g.len() != g_ref.len() {
        return Err(Error::invalid_input(format!(
            "er_combine: length mismatch {} vs {}",
            g.len(),
            g_ref.len()
        )));
    }
    Ok(g.add(g_ref))
}

/// Gradient of the alignment objective
/// `f(w) = −Σ_i ⟨w, g_i⟩ / (‖w‖ · max(ε, ‖g_i‖)) · sigmoid(‖g_i‖)`:
///
/// `∇f(w) = −Σ_i sigmoid(‖g_i‖) · [ g_i / (‖w‖·‖g_i‖_ε)
///           − ⟨w, g_i⟩ w / (‖w‖³·‖g_i‖_ε) ]`
///
/// The sigmoid weight uses the raw norm; the `ε` floor applies only in the
/// denominator. `∇f(w)` is orthogonal to `w` (the cosine is scale-invariant
/// in `w`).
pub fn pgd_grad(w: &ParamVector, grads: &[&ParamVector], epsilon: f64) -> Result<ParamVector> {
    if grads.is_empty() {
        return Err(Error::invalid_input("pgd_grad: no replayed gradients"));
    }
    let w_norm = w.l2_norm();
    if w_norm < epsilon {
        return Err(Error::invalid_input(format!(
            "pgd_grad: ‖w‖ = {w_norm:e} below epsilon {epsilon:e}"
        )));
    }
    let w_norm_sq = w_norm * w_norm;
    let mut out = ParamVector::zeros(w.len());
    for g_i in grads {
        if g_i.len() != w.len() {
            return Err(Error::invalid_input(format!(
                "pgd_grad: length mismatch {} vs {}",
                g_i.len(),
                w.len()
            )));
        }
        let gi_norm = g_i.l2_norm();
        let gi_floored = gi_norm.max(epsilon);
        let coef = sigmoid(gi_norm) / (w_norm * gi_floored);
        let proj = w.dot(g_i) / w_norm_sq;
        // -coef * (g_i - proj * w), accumulated
        out.axpy(-coef, g_i);
        out.axpy(coef * proj, w);
    }
    Ok(out)
}

/// Update direction from one (or more) proximal-gradient steps started at
/// `g`. With `steps = 1` this is exactly `w = g − λ∇f(g)`; a `g` shorter
/// than `epsilon` means the incoming example is already learned and is
/// returned unchanged.
pub fn pgd_combine(
    g: &ParamVector,
    grads: &[ParamVector],
    cfg: &CombinerConfig,
) -> Result<ParamVector> {
    cfg.validate()?;
    for g_i in grads {
        if g_i.len() != g.len() {
            return Err(Error::invalid_input(format!(
                "pgd_combine: length mismatch {} vs {}",
                g_i.len(),
                g.len()
            )));
        }
    }
    if grads.is_empty() || g.l2_norm() < cfg.epsilon {
        return Ok(g.clone());
    }

    let grouped = group_means(grads, cfg.groups);
    let grouped_refs: Vec<&ParamVector> = grouped.iter().collect();

    if cfg.steps == 1 && cfg.alpha_beta.is_none() {
        let mut w = g.clone();
        w.axpy(-cfg.lambda, &pgd_grad(g, &grouped_refs, cfg.epsilon)?);
        return Ok(w);
    }

    // Iterated form: w ← (α(w − β∇f(w)) + βg) / (α + β). With α ≫ β = λ the
    // first iterate collapses to the one-step solution above.
    let (alpha, beta) = cfg
        .alpha_beta
        .unwrap_or((cfg.lambda * 1e9, cfg.lambda));
    let denom = alpha + beta;
    let mut w = g.clone();
    for _ in 0..cfg.steps {
        if w.l2_norm() < cfg.epsilon {
            break;
        }
        let grad_f = pgd_grad(&w, &grouped_refs, cfg.epsilon)?;
        let mut next = w.scaled(alpha / denom);
        next.axpy(-alpha * beta / denom, &grad_f);
        next.axpy(beta / denom, g);
        w = next;
    }
    Ok(w)
}

/// Average `grads` into `groups` contiguous, evenly-sized groups.
/// `None` or a group count >= the gradient count keeps them as-is.
fn group_means(grads: &[ParamVector], groups: Option<usize>) -> Vec<ParamVector> {
    let k = grads.len();
    let g = groups.unwrap_or(k).min(k).max(1);
    if g == k {
        return grads.to_vec();
    }
    let base = k / g;
    let extra = k % g;
    let mut out = Vec::with_capacity(g);
    let mut start = 0;
    for group_idx in 0..g {
        let size = base + usize::from(group_idx < extra);
        let members: Vec<&ParamVector> = grads[start..start + size].iter().collect();
        out.push(ParamVector::mean_of(&members));
        start += size;
    }
    out
}
