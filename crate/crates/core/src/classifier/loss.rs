//! Binary focal loss `-alpha * (1 - p_t)^gamma * ln(p_t)`.

use serde::{Deserialize, Serialize};

/// Probabilities are clamped to `[EPS, 1 - EPS]` before taking logs.
pub const EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FocalParams {
    pub gamma: f64,
    pub alpha: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        FocalParams {
            gamma: 2.0,
            alpha: 0.25,
        }
    }
}

impl FocalParams {
    /// Plain binary cross-entropy.
    pub const BCE: FocalParams = FocalParams {
        gamma: 0.0,
        alpha: 1.0,
    };
}

fn p_true(y: bool, p: f64) -> f64 {
    let p = p.clamp(EPS, 1.0 - EPS);
    if y {
        p
    } else {
        1.0 - p
    }
}

pub fn focal_loss(y: bool, p: f64, params: FocalParams) -> f64 {
    let pt = p_true(y, p);
    -params.alpha * (1.0 - pt).powf(params.gamma) * pt.ln()
}

pub fn binary_cross_entropy(y: bool, p: f64) -> f64 {
    -p_true(y, p).ln()
}

/// Derivative of the focal loss with respect to the logit `z`, where
/// `p = sigmoid(z)`:
///
/// `dL/dz = s * alpha * (1 - p_t)^gamma * (gamma * p_t * ln(p_t) - (1 - p_t))`
///
/// with `s = +1` for positives and `-1` for negatives. Working on the logit
/// avoids the `(1 - p_t)^(gamma - 1)` singularity for `gamma < 1`.
pub fn focal_loss_grad_logit(y: bool, p: f64, params: FocalParams) -> f64 {
    let pt = p_true(y, p);
    let q = 1.0 - pt;
    let g = params.alpha * q.powf(params.gamma) * (params.gamma * pt * pt.ln() - q);
    if y {
        g
    } else {
        -g
    }
}
