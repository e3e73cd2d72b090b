//! Bottleneck attention rows and the visual mass / sharpness measures.
//!
//! A bottleneck row is the single pre-softmax score vector produced when the
//! final prompt token queries the whole sequence. Its indices are split into
//! a visual block and a textual block by a [`ModalityLayout`]. Everything in
//! this module works in `f64`, whatever precision the row was stored in.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{BairError, Result};

/// Half-open index range `[start, start + len)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub len: usize,
}

impl Span {
    pub const fn new(start: usize, len: usize) -> Self {
        Self { start, len }
    }

    pub const fn end(&self) -> usize {
        self.start + self.len
    }

    pub fn range(&self) -> Range<usize> {
        self.start..self.end()
    }

    pub const fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        !self.is_empty() && !other.is_empty() && self.start < other.end() && other.start < self.end()
    }

    pub fn contains_span(&self, other: &Span) -> bool {
        other.start >= self.start && other.end() <= self.end()
    }
}

/// Partition of a bottleneck row into visual and textual token spans.
///
/// Tokens covered by neither span (BOS, instruction glue, the query token)
/// are left alone by every calibration step.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModalityLayout {
    pub sequence_len: usize,
    pub visual: Span,
    pub text: Span,
    /// Retrieved-document tokens, a sub-range of `text`.
    pub context: Option<Span>,
}

impl ModalityLayout {
    pub fn new(
        sequence_len: usize,
        visual: Span,
        text: Span,
        context: Option<Span>,
    ) -> Result<Self> {
        let layout = Self {
            sequence_len,
            visual,
            text,
            context,
        };
        layout.validate()?;
        Ok(layout)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sequence_len == 0 {
            return Err(BairError::SpanOutOfRange("sequence length is zero".into()));
        }
        for (name, span) in [("visual", self.visual), ("text", self.text)] {
            if span.end() > self.sequence_len {
                return Err(BairError::SpanOutOfRange(format!(
                    "{name} span [{}, {}) exceeds sequence length {}",
                    span.start,
                    span.end(),
                    self.sequence_len
                )));
            }
        }
        if self.visual.overlaps(&self.text) {
            return Err(BairError::SpanOverlap(format!(
                "visual [{}, {}) and text [{}, {})",
                self.visual.start,
                self.visual.end(),
                self.text.start,
                self.text.end()
            )));
        }
        if let Some(ctx) = self.context {
            if !self.text.contains_span(&ctx) {
                return Err(BairError::SpanOutOfRange(format!(
                    "context span [{}, {}) is not inside text span [{}, {})",
                    ctx.start,
                    ctx.end(),
                    self.text.start,
                    self.text.end()
                )));
            }
        }
        Ok(())
    }

    pub fn n_visual(&self) -> usize {
        self.visual.len
    }

    pub fn n_text(&self) -> usize {
        self.text.len
    }

    /// Indices belonging to neither the visual nor the text span.
    pub fn remainder_indices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.sequence_len).filter(move |i| {
            !self.visual.range().contains(i) && !self.text.range().contains(i)
        })
    }
}

/// One pre-softmax attention row for a single `(layer, head)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BottleneckVector {
    pub logits: Vec<f64>,
    pub layout: ModalityLayout,
    pub layer: usize,
    pub head: usize,
    pub sample_id: String,
}

impl BottleneckVector {
    pub fn new(
        logits: Vec<f64>,
        layout: ModalityLayout,
        layer: usize,
        head: usize,
        sample_id: impl Into<String>,
    ) -> Result<Self> {
        let v = Self {
            logits,
            layout,
            layer,
            head,
            sample_id: sample_id.into(),
        };
        v.validate()?;
        Ok(v)
    }

    pub fn validate(&self) -> Result<()> {
        self.layout.validate()?;
        if self.logits.len() != self.layout.sequence_len {
            return Err(BairError::LengthMismatch {
                expected: self.layout.sequence_len,
                actual: self.logits.len(),
            });
        }
        check_finite(&self.logits)
    }

    pub fn visual_logits(&self) -> &[f64] {
        &self.logits[self.layout.visual.range()]
    }

    pub fn text_logits(&self) -> &[f64] {
        &self.logits[self.layout.text.range()]
    }

    /// Every logit outside the visual span, in sequence order.
    pub fn non_visual_logits(&self) -> Vec<f64> {
        let visual = self.layout.visual.range();
        self.logits
            .iter()
            .enumerate()
            .filter(|(i, _)| !visual.contains(i))
            .map(|(_, &x)| x)
            .collect()
    }

    pub fn key(&self) -> (usize, usize) {
        (self.layer, self.head)
    }
}

/// Visual attention mass and sharpness of one row.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionMeasure {
    pub mass: f64,
    pub sharpness: f64,
}

fn check_finite(xs: &[f64]) -> Result<()> {
    match xs.iter().position(|x| !x.is_finite()) {
        Some(index) => Err(BairError::NonFiniteLogit { index }),
        None => Ok(()),
    }
}

fn max_of(xs: &[f64]) -> f64 {
    xs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(BairError::EmptyLogits);
    }
    check_finite(logits)?;
    let m = max_of(logits);
    let mut out: Vec<f64> = logits.iter().map(|&x| (x - m).exp()).collect();
    let z: f64 = out.iter().sum();
    for p in &mut out {
        *p /= z;
    }
    Ok(out)
}

/// `log(sum(exp(x)))` with max subtraction.
pub fn log_sum_exp(logits: &[f64]) -> Result<f64> {
    if logits.is_empty() {
        return Err(BairError::EmptyLogits);
    }
    check_finite(logits)?;
    if logits.len() == 1 {
        return Ok(logits[0]);
    }
    let m = max_of(logits);
    let s: f64 = logits.iter().map(|&x| (x - m).exp()).sum();
    Ok(m + s.ln())
}

/// Shannon entropy in nats, with `0 log 0 = 0`.
pub fn entropy(dist: &[f64]) -> f64 {
    -dist
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}

/// `1 - H(p) / log(n)` for a distribution over `n` outcomes. A single outcome
/// is a point mass and gets 1.
pub fn normalized_sharpness(dist: &[f64]) -> f64 {
    let n = dist.len();
    if n <= 1 {
        return 1.0;
    }
    (1.0 - entropy(dist) / (n as f64).ln()).clamp(0.0, 1.0)
}

/// Sharpness of `softmax(logits)` computed in log space.
///
/// Equal to [`normalized_sharpness`] of the softmax, but stays accurate when
/// some probabilities underflow.
pub fn sharpness_of_logits(logits: &[f64]) -> Result<f64> {
    let n = logits.len();
    if n == 0 {
        return Err(BairError::NoVisualTokens);
    }
    if n == 1 {
        check_finite(logits)?;
        return Ok(1.0);
    }
    let lse = log_sum_exp(logits)?;
    let h: f64 = -logits
        .iter()
        .map(|&x| {
            let lp = x - lse;
            let p = lp.exp();
            if p > 0.0 {
                p * lp
            } else {
                0.0
            }
        })
        .sum::<f64>();
    Ok((1.0 - h / (n as f64).ln()).clamp(0.0, 1.0))
}

fn check_probs(probs: &[f64], layout: &ModalityLayout) -> Result<()> {
    layout.validate()?;
    if probs.len() != layout.sequence_len {
        return Err(BairError::LengthMismatch {
            expected: layout.sequence_len,
            actual: probs.len(),
        });
    }
    Ok(())
}

/// Total post-softmax probability on the visual span.
pub fn visual_mass(probs: &[f64], layout: &ModalityLayout) -> Result<f64> {
    check_probs(probs, layout)?;
    Ok(probs[layout.visual.range()].iter().sum::<f64>().clamp(0.0, 1.0))
}

/// Sharpness of the visual span after renormalizing it to sum to one.
pub fn visual_sharpness(probs: &[f64], layout: &ModalityLayout) -> Result<f64> {
    check_probs(probs, layout)?;
    if layout.n_visual() == 0 {
        return Err(BairError::NoVisualTokens);
    }
    let visual = &probs[layout.visual.range()];
    let mass: f64 = visual.iter().sum();
    if mass <= 0.0 {
        return Err(BairError::ZeroVisualMass { sample_id: None });
    }
    let renorm: Vec<f64> = visual.iter().map(|&p| p / mass).collect();
    Ok(normalized_sharpness(&renorm))
}

/// Softmax over the whole row, then visual mass and sharpness.
pub fn measure(vec: &BottleneckVector) -> Result<AttentionMeasure> {
    vec.validate()?;
    if vec.layout.n_visual() == 0 {
        return Err(BairError::NoVisualTokens);
    }
    let probs = softmax(&vec.logits)?;
    let mass = visual_mass(&probs, &vec.layout)?;
    if mass <= 0.0 {
        return Err(BairError::ZeroVisualMass {
            sample_id: Some(vec.sample_id.clone()),
        });
    }
    // renormalizing the visual block equals a softmax over the visual logits
    let sharpness = sharpness_of_logits(vec.visual_logits())?;
    Ok(AttentionMeasure { mass, sharpness })
}
