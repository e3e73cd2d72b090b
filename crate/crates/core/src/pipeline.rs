//! Per-head calibration driver.
//!
//! Targets come from a reference pass (image, instruction and question only)
//! and are keyed strictly by `(layer, head)`. Each row of the retrieval pass
//! gets its visual block replaced by the recovered logits and then its text
//! block penalized. Tokens outside both spans are never touched.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::attention::{measure, AttentionMeasure, BottleneckVector, Span};
use crate::config::{BairConfig, PatpScope};
use crate::error::{BairError, Result};
use crate::patp::{calibrate_text, PenaltyWeights};
use crate::vsmr::{apply_vsmr, clamp_mass_target, TemperatureSolution};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadTarget {
    pub m_target: f64,
    pub s_target: f64,
    /// Visual token count of the reference row.
    pub n_visual: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTargets {
    pub entries: BTreeMap<(usize, usize), HeadTarget>,
    pub source_id: String,
}

impl CalibrationTargets {
    pub fn get(&self, layer: usize, head: usize) -> Option<&HeadTarget> {
        self.entries.get(&(layer, head))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadFlags {
    pub degenerate_visual: bool,
    pub sharpness_clamped: bool,
    pub targets_clamped: bool,
}

impl HeadFlags {
    /// `|`-joined flag names, `-` when none is set.
    pub fn label(&self) -> String {
        let names: Vec<&str> = [
            (self.degenerate_visual, "degenerate_visual"),
            (self.sharpness_clamped, "sharpness_clamped"),
            (self.targets_clamped, "targets_clamped"),
        ]
        .into_iter()
        .filter_map(|(set, name)| set.then_some(name))
        .collect();
        if names.is_empty() {
            "-".to_string()
        } else {
            names.join("|")
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadDiagnostics {
    pub layer: usize,
    pub head: usize,
    pub pre_measure: AttentionMeasure,
    pub post_measure: AttentionMeasure,
    /// Measure between visual recovery and positional penalties; the mass
    /// here is the one matched to the target.
    pub vsmr_measure: Option<AttentionMeasure>,
    /// `None` when visual recovery is disabled.
    pub temperature: Option<TemperatureSolution>,
    pub alpha_shift: Option<f64>,
    pub target: Option<HeadTarget>,
    pub penalty_weights: PenaltyWeights,
    pub flags: HeadFlags,
}

/// Aggregates over a calibrated dump.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSummary {
    pub heads: usize,
    pub mean_pre_mass: f64,
    pub mean_post_mass: f64,
    pub mean_pre_sharpness: f64,
    pub mean_post_sharpness: f64,
    pub sharpness_clamped: usize,
    pub degenerate_visual: usize,
    pub targets_clamped: usize,
    pub mean_lambda_prim: f64,
    pub mean_lambda_rec: f64,
    pub max_lambda_prim: f64,
    pub max_lambda_rec: f64,
    pub max_iterations: usize,
}

impl CalibrationSummary {
    pub fn from_diagnostics(diags: &[HeadDiagnostics]) -> Self {
        if diags.is_empty() {
            return Self::default();
        }
        let n = diags.len() as f64;
        let mean = |f: &dyn Fn(&HeadDiagnostics) -> f64| diags.iter().map(f).sum::<f64>() / n;
        let count = |f: &dyn Fn(&HeadFlags) -> bool| diags.iter().filter(|d| f(&d.flags)).count();
        Self {
            heads: diags.len(),
            mean_pre_mass: mean(&|d| d.pre_measure.mass),
            mean_post_mass: mean(&|d| d.post_measure.mass),
            mean_pre_sharpness: mean(&|d| d.pre_measure.sharpness),
            mean_post_sharpness: mean(&|d| d.post_measure.sharpness),
            sharpness_clamped: count(&|f| f.sharpness_clamped),
            degenerate_visual: count(&|f| f.degenerate_visual),
            targets_clamped: count(&|f| f.targets_clamped),
            mean_lambda_prim: mean(&|d| d.penalty_weights.lambda_prim),
            mean_lambda_rec: mean(&|d| d.penalty_weights.lambda_rec),
            max_lambda_prim: diags
                .iter()
                .map(|d| d.penalty_weights.lambda_prim)
                .fold(0.0, f64::max),
            max_lambda_rec: diags
                .iter()
                .map(|d| d.penalty_weights.lambda_rec)
                .fold(0.0, f64::max),
            max_iterations: diags
                .iter()
                .filter_map(|d| d.temperature.map(|t| t.iterations))
                .max()
                .unwrap_or(0),
        }
    }
}

/// Measures every reference row into a `(layer, head)` keyed target table.
pub fn extract_targets(reference: &[BottleneckVector]) -> Result<CalibrationTargets> {
    let mut entries = BTreeMap::new();
    for vec in reference {
        if entries.contains_key(&vec.key()) {
            return Err(BairError::DuplicateHead {
                layer: vec.layer,
                head: vec.head,
            });
        }
        let m = measure(vec)?;
        let (m_target, _) = clamp_mass_target(m.mass);
        entries.insert(
            vec.key(),
            HeadTarget {
                m_target,
                s_target: m.sharpness,
                n_visual: vec.layout.n_visual(),
            },
        );
    }
    Ok(CalibrationTargets {
        entries,
        source_id: reference
            .first()
            .map(|v| v.sample_id.clone())
            .unwrap_or_default(),
    })
}

fn penalized_span(vec: &BottleneckVector, scope: PatpScope) -> Result<Span> {
    match scope {
        PatpScope::FullText => Ok(vec.layout.text),
        PatpScope::ContextOnly => vec.layout.context.ok_or(BairError::MissingContextSpan),
    }
}

/// Calibrates a single row.
pub fn calibrate_head(
    vec: &BottleneckVector,
    targets: &CalibrationTargets,
    config: &BairConfig,
) -> Result<(BottleneckVector, HeadDiagnostics)> {
    config.validate()?;
    vec.validate()?;
    let pre_measure = measure(vec)?;
    let mut out = vec.clone();
    let mut flags = HeadFlags::default();
    let mut temperature = None;
    let mut alpha_shift = None;
    let mut target = None;
    let mut vsmr_measure = None;
    let mut penalty_weights = PenaltyWeights::default();

    if config.enable_vsmr {
        let t = *targets
            .get(vec.layer, vec.head)
            .ok_or(BairError::MissingTarget {
                layer: vec.layer,
                head: vec.head,
            })?;
        if t.n_visual != vec.layout.n_visual() {
            return Err(BairError::VisualCountMismatch {
                layer: vec.layer,
                head: vec.head,
                reference: t.n_visual,
                actual: vec.layout.n_visual(),
            });
        }
        // the mass shift normalizes against every non-visual logit in the row
        let others = vec.non_visual_logits();
        let r = apply_vsmr(vec.visual_logits(), &others, t.m_target, t.s_target, config)?;
        out.logits[vec.layout.visual.range()].copy_from_slice(&r.calibrated_visual);
        flags.degenerate_visual = r.degenerate;
        flags.sharpness_clamped = r.temperature.clamped;
        flags.targets_clamped = r.target_clamped;
        temperature = Some(r.temperature);
        alpha_shift = Some(r.alpha_shift);
        target = Some(t);
        vsmr_measure = Some(measure(&out)?);
    }

    if config.enable_patp {
        let span = penalized_span(vec, config.patp_scope)?;
        if span.is_empty() {
            return Err(BairError::NoTextTokens);
        }
        let (penalized, weights) =
            calibrate_text(&out.logits[span.range()], config.boundary_fraction)?;
        out.logits[span.range()].copy_from_slice(&penalized);
        penalty_weights = weights;
    }

    let post_measure = measure(&out)?;
    Ok((
        out,
        HeadDiagnostics {
            layer: vec.layer,
            head: vec.head,
            pre_measure,
            post_measure,
            vsmr_measure,
            temperature,
            alpha_shift,
            target,
            penalty_weights,
            flags,
        },
    ))
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CalibratedDump {
    pub vectors: Vec<BottleneckVector>,
    pub diagnostics: Vec<HeadDiagnostics>,
    pub summary: CalibrationSummary,
}

/// Calibrates every row of a dump. The input is left untouched.
pub fn calibrate_dump(
    vectors: &[BottleneckVector],
    targets: &CalibrationTargets,
    config: &BairConfig,
) -> Result<CalibratedDump> {
    if vectors.is_empty() {
        return Ok(CalibratedDump::default());
    }
    config.validate()?;
    if config.enable_vsmr {
        let missing: Vec<(usize, usize)> = vectors
            .iter()
            .map(BottleneckVector::key)
            .filter(|k| !targets.entries.contains_key(k))
            .collect();
        if !missing.is_empty() {
            return Err(BairError::MissingTargets(missing));
        }
    }
    let (vectors, diagnostics): (Vec<_>, Vec<_>) = vectors
        .iter()
        .map(|v| calibrate_head(v, targets, config))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .unzip();
    let summary = CalibrationSummary::from_diagnostics(&diagnostics);
    Ok(CalibratedDump {
        vectors,
        diagnostics,
        summary,
    })
}
