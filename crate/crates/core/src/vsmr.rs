//! Visual sharpness and mass recovery.
//!
//! The visual logits are z-scored and passed through SiLU. A temperature is
//! then found by bisection so that the softmax over the scaled gated logits
//! reaches the reference sharpness. A closed-form uniform shift restores the
//! reference visual mass against the non-visual logits. The result is blended
//! with the original logits by the interpolation factor `alpha_v`.

use serde::{Deserialize, Serialize};

use crate::attention::{log_sum_exp, sharpness_of_logits};
use crate::config::BairConfig;
use crate::error::{BairError, Result};

/// Global minimum of `x * sigmoid(x)`, attained at `x ≈ -1.278464542761074`.
pub const SILU_MIN: f64 = -0.278_464_542_761_073_8;

/// Lower and upper clamp applied to mass targets before the log-odds transform.
pub const MASS_TARGET_FLOOR: f64 = 1e-6;

/// Hard cap on bisection steps.
pub const MAX_BISECTION_ITERS: usize = 200;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GatedVisualLogits {
    pub values: Vec<f64>,
    pub source_mean: f64,
    pub source_std: f64,
    /// Zero variance in the source logits; `values` is all zeros.
    pub degenerate: bool,
}

impl GatedVisualLogits {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemperatureSolution {
    pub t_star: f64,
    pub iterations: usize,
    pub achieved_sharpness: f64,
    /// The target could not be reached inside `[0, t_max]`.
    pub clamped: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VsmrResult {
    pub calibrated_visual: Vec<f64>,
    pub target_visual: Vec<f64>,
    pub alpha_shift: f64,
    pub temperature: TemperatureSolution,
    pub degenerate: bool,
    /// The mass target was moved into `[MASS_TARGET_FLOOR, 1 - MASS_TARGET_FLOOR]`.
    pub target_clamped: bool,
}

/// Z-score with the population standard deviation, then SiLU.
pub fn standardize_and_gate(e_v: &[f64]) -> Result<GatedVisualLogits> {
    if e_v.is_empty() {
        return Err(BairError::NoVisualTokens);
    }
    if let Some(index) = e_v.iter().position(|x| !x.is_finite()) {
        return Err(BairError::NonFiniteLogit { index });
    }
    let n = e_v.len() as f64;
    let mean = e_v.iter().sum::<f64>() / n;
    let var = e_v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    let scale = e_v.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    if std <= 1e-12 * scale {
        return Ok(GatedVisualLogits {
            values: vec![0.0; e_v.len()],
            source_mean: mean,
            source_std: std,
            degenerate: true,
        });
    }
    let values = e_v.iter().map(|x| silu((x - mean) / std)).collect();
    Ok(GatedVisualLogits {
        values,
        source_mean: mean,
        source_std: std,
        degenerate: false,
    })
}

/// Sharpness of `softmax(t * g)`.
pub fn sharpness_at(g: &GatedVisualLogits, t: f64) -> Result<f64> {
    if t.is_nan() || t < 0.0 {
        return Err(BairError::param("t", format!("temperature must be >= 0, got {t}")));
    }
    match g.len() {
        0 => Err(BairError::NoVisualTokens),
        1 => Ok(1.0),
        _ if t == 0.0 || g.degenerate => Ok(0.0),
        _ => {
            let scaled: Vec<f64> = g.values.iter().map(|x| x * t).collect();
            sharpness_of_logits(&scaled)
        }
    }
}

/// Bisection for the temperature whose sharpness matches `s_target`.
///
/// Stops when the sharpness residual is within `eps` or the bracket is no
/// wider than `eps`. A target above `S(t_max)` returns `t_max` flagged as
/// clamped.
pub fn solve_temperature(
    g: &GatedVisualLogits,
    s_target: f64,
    t_max: f64,
    eps: f64,
) -> Result<TemperatureSolution> {
    if !(0.0..=1.0).contains(&s_target) {
        return Err(BairError::param(
            "s_target",
            format!("must lie in [0, 1], got {s_target}"),
        ));
    }
    if !(t_max.is_finite() && t_max > 0.0) {
        return Err(BairError::param("t_max", format!("must be > 0, got {t_max}")));
    }
    if !(eps.is_finite() && eps > 0.0) {
        return Err(BairError::param("eps", format!("must be > 0, got {eps}")));
    }
    if g.is_empty() {
        return Err(BairError::NoVisualTokens);
    }

    let s0 = sharpness_at(g, 0.0)?;
    if g.len() == 1 || g.degenerate || s_target <= s0 {
        return Ok(TemperatureSolution {
            t_star: 0.0,
            iterations: 0,
            achieved_sharpness: s0,
            clamped: (s_target - s0).abs() > eps && s_target > s0,
        });
    }

    let s_hi = sharpness_at(g, t_max)?;
    if s_hi < s_target {
        return Ok(TemperatureSolution {
            t_star: t_max,
            iterations: 0,
            achieved_sharpness: s_hi,
            clamped: s_target - s_hi > eps,
        });
    }

    let (mut lo, mut hi) = (0.0, t_max);
    let mut best = (t_max, s_hi);
    let mut iterations = 0;
    while iterations < MAX_BISECTION_ITERS {
        let mid = 0.5 * (lo + hi);
        let s = sharpness_at(g, mid)?;
        iterations += 1;
        if (s - s_target).abs() < (best.1 - s_target).abs() {
            best = (mid, s);
        }
        if (s - s_target).abs() <= eps {
            best = (mid, s);
            break;
        }
        if s < s_target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= eps {
            break;
        }
    }
    Ok(TemperatureSolution {
        t_star: best.0,
        iterations,
        achieved_sharpness: best.1,
        clamped: false,
    })
}

/// Clamps a mass target into the open unit interval used by the log-odds.
pub fn clamp_mass_target(m_target: f64) -> (f64, bool) {
    let c = m_target.clamp(MASS_TARGET_FLOOR, 1.0 - MASS_TARGET_FLOOR);
    (c, c != m_target)
}

/// Uniform shift `α` that gives the visual block `m_target` of the softmax
/// mass over `concat(e_v_tilde + α, e_t)`.
pub fn mass_shift_alpha(e_t: &[f64], e_v_tilde: &[f64], m_target: f64) -> Result<f64> {
    if e_v_tilde.is_empty() {
        return Err(BairError::NoVisualTokens);
    }
    if e_t.is_empty() {
        return Err(BairError::NoTextTokens);
    }
    if m_target.is_nan() {
        return Err(BairError::param("m_target", "NaN"));
    }
    let (m, _) = clamp_mass_target(m_target);
    Ok((m / (1.0 - m)).ln() + log_sum_exp(e_t)? - log_sum_exp(e_v_tilde)?)
}

/// `e_v + alpha_v * (e_v_target - e_v)`, elementwise.
pub fn interpolate(e_v: &[f64], e_v_target: &[f64], alpha_v: f64) -> Result<Vec<f64>> {
    if e_v.len() != e_v_target.len() {
        return Err(BairError::LengthMismatch {
            expected: e_v.len(),
            actual: e_v_target.len(),
        });
    }
    if !(alpha_v.is_finite() && alpha_v > 0.0) {
        return Err(BairError::param("alpha_v", format!("must be > 0, got {alpha_v}")));
    }
    if alpha_v == 1.0 {
        return Ok(e_v_target.to_vec());
    }
    Ok(e_v
        .iter()
        .zip(e_v_target)
        .map(|(&x, &t)| x + alpha_v * (t - x))
        .collect())
}

/// Full visual recovery for one row.
///
/// `e_t` is every non-visual logit the softmax normalizes over.
pub fn apply_vsmr(
    e_v: &[f64],
    e_t: &[f64],
    m_target: f64,
    s_target: f64,
    config: &BairConfig,
) -> Result<VsmrResult> {
    if e_t.is_empty() {
        return Err(BairError::NoTextTokens);
    }
    let gated = standardize_and_gate(e_v)?;
    let s_target = s_target.clamp(0.0, 1.0);

    let temperature = solve_temperature(&gated, s_target, config.t_max, config.eps)?;
    let tilde: Vec<f64> = if gated.len() == 1 || gated.degenerate {
        // every temperature gives the same distribution here
        gated.values.clone()
    } else {
        gated.values.iter().map(|g| g * temperature.t_star).collect()
    };

    let (_, target_clamped) = clamp_mass_target(m_target);
    let alpha = mass_shift_alpha(e_t, &tilde, m_target)?;
    let target_visual: Vec<f64> = tilde.iter().map(|x| x + alpha).collect();
    let calibrated_visual = interpolate(e_v, &target_visual, config.alpha_v)?;

    Ok(VsmrResult {
        calibrated_visual,
        target_visual,
        alpha_shift: alpha,
        temperature,
        degenerate: gated.degenerate,
        target_clamped,
    })
}
