//! Position-aware textual penalization.
//!
//! Boundary inflation is detected by comparing the mean logit of the leading
//! and trailing windows against the mean of the whole text block. Any excess
//! becomes the weight of a quadratic penalty anchored at that boundary, which
//! decays to zero at the middle of the block.

use serde::{Deserialize, Serialize};

use crate::config::check_fraction;
use crate::error::{BairError, Result};

pub const DEFAULT_BOUNDARY_FRACTION: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionalMeans {
    pub global_mean: f64,
    pub head_mean: f64,
    pub tail_mean: f64,
    pub fraction: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PenaltyWeights {
    pub lambda_prim: f64,
    pub lambda_rec: f64,
}

/// Tokens in each boundary window: `ceil(fraction * len)`, at least one.
pub fn window_len(len: usize, fraction: f64) -> usize {
    // the small offset keeps e.g. 0.2 * 15 from rounding up to 4
    let w = (fraction * len as f64 - 1e-9).ceil() as usize;
    w.clamp(1, len.max(1))
}

/// Mean taken as deviations from `anchor`, so equal values give exactly `anchor`.
fn mean(xs: &[f64], anchor: f64) -> f64 {
    anchor + xs.iter().map(|x| x - anchor).sum::<f64>() / xs.len() as f64
}

pub fn regional_means(e_t: &[f64], fraction: f64) -> Result<RegionalMeans> {
    if e_t.is_empty() {
        return Err(BairError::NoTextTokens);
    }
    check_fraction(fraction)?;
    let w = window_len(e_t.len(), fraction);
    let a = e_t[0];
    Ok(RegionalMeans {
        global_mean: mean(e_t, a),
        head_mean: mean(&e_t[..w], a),
        tail_mean: mean(&e_t[e_t.len() - w..], a),
        fraction,
    })
}

pub fn penalty_weights(means: &RegionalMeans) -> PenaltyWeights {
    PenaltyWeights {
        lambda_prim: (means.head_mean - means.global_mean).max(0.0),
        lambda_rec: (means.tail_mean - means.global_mean).max(0.0),
    }
}

/// Penalty subtracted from the logit at 1-based position `j` of `len`.
pub fn penalty_at(weights: &PenaltyWeights, j: usize, len: usize) -> f64 {
    let x = 2.0 * j as f64 / len as f64;
    let prim = (1.0 - x).max(0.0);
    let rec = (x - 1.0).max(0.0);
    weights.lambda_prim * prim * prim + weights.lambda_rec * rec * rec
}

pub fn apply_patp(e_t: &[f64], weights: &PenaltyWeights) -> Vec<f64> {
    let len = e_t.len();
    e_t.iter()
        .enumerate()
        .map(|(i, &x)| x - penalty_at(weights, i + 1, len))
        .collect()
}

/// Detect boundary inflation and penalize it in one step.
pub fn calibrate_text(e_t: &[f64], fraction: f64) -> Result<(Vec<f64>, PenaltyWeights)> {
    let weights = penalty_weights(&regional_means(e_t, fraction)?);
    Ok((apply_patp(e_t, &weights), weights))
}
