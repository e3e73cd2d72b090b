//! Instance-level evaluation for recorruption analysis.
//!
//! Three conditions are scored per sample: the no-retrieval baseline (B),
//! standard retrieval (R) and the intervention (I). Scores are continuous in
//! `[0, 1]`. A rate whose population is empty reports 0 and is marked
//! `undefined` instead of producing NaN.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{BairError, Result};

/// Consecutive repeats of one token that mark a degenerate generation.
pub const REPEAT_LIMIT: usize = 5;
/// Responses shorter than this many characters after trimming are failures.
pub const MIN_RESPONSE_CHARS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    Baseline,
    Rag,
    Intervention,
}

impl Method {
    pub fn label(&self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::Rag => "rag",
            Method::Intervention => "intervention",
        }
    }

    fn field(&self) -> &'static str {
        match self {
            Method::Baseline => "score_baseline",
            Method::Rag => "score_rag",
            Method::Intervention => "score_intervention",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub sample_id: String,
    pub score_baseline: f64,
    pub score_rag: Option<f64>,
    pub score_intervention: Option<f64>,
    /// Generated text of the latest condition present in the record.
    pub response_text: Option<String>,
}

impl EvalRecord {
    pub fn new(sample_id: impl Into<String>, baseline: f64, rag: f64, intervention: f64) -> Self {
        Self {
            sample_id: sample_id.into(),
            score_baseline: baseline,
            score_rag: Some(rag),
            score_intervention: Some(intervention),
            response_text: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            (Method::Baseline, Some(self.score_baseline)),
            (Method::Rag, self.score_rag),
            (Method::Intervention, self.score_intervention),
        ];
        for (m, v) in fields {
            if let Some(v) = v {
                if !(0.0..=1.0).contains(&v) {
                    return Err(BairError::ScoreOutOfRange {
                        sample_id: self.sample_id.clone(),
                        field: m.field(),
                        value: v,
                    });
                }
            }
        }
        Ok(())
    }

    fn raw_score(&self, method: Method) -> Option<f64> {
        match method {
            Method::Baseline => Some(self.score_baseline),
            Method::Rag => self.score_rag,
            Method::Intervention => self.score_intervention,
        }
    }

    /// The condition that produced `response_text`.
    pub fn response_method(&self) -> Method {
        if self.score_intervention.is_some() {
            Method::Intervention
        } else if self.score_rag.is_some() {
            Method::Rag
        } else {
            Method::Baseline
        }
    }

    pub fn generation_failed(&self) -> bool {
        self.response_text.as_deref().is_some_and(generation_failure)
    }

    /// Score after forcing failed generations to 0.
    pub fn score(&self, method: Method) -> Option<f64> {
        let raw = self.raw_score(method)?;
        if method == self.response_method() && self.generation_failed() {
            Some(0.0)
        } else {
            Some(raw)
        }
    }

    fn require(&self, method: Method) -> Result<f64> {
        self.score(method).ok_or_else(|| BairError::MissingScore {
            sample_id: self.sample_id.clone(),
            field: method.field(),
        })
    }
}

/// A rate with its population size.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rate {
    pub value: f64,
    pub numerator: f64,
    pub denominator: usize,
    /// Empty population; `value` is 0 by convention.
    pub undefined: bool,
}

impl Rate {
    fn from_parts(numerator: f64, denominator: usize) -> Self {
        if denominator == 0 {
            Rate {
                value: 0.0,
                numerator,
                denominator,
                undefined: true,
            }
        } else {
            Rate {
                value: numerator / denominator as f64,
                numerator,
                denominator,
                undefined: false,
            }
        }
    }
}

/// CR / DR with the division-by-zero cases spelled out.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Ratio {
    Finite(f64),
    Infinite,
    /// Both rates are zero.
    Undefined,
}

impl Ratio {
    pub fn of(num: f64, den: f64) -> Self {
        if den > 0.0 {
            Ratio::Finite(num / den)
        } else if num > 0.0 {
            Ratio::Infinite
        } else {
            Ratio::Undefined
        }
    }

    /// Ordering key: undefined < finite < infinite.
    pub fn as_f64(&self) -> f64 {
        match self {
            Ratio::Finite(v) => *v,
            Ratio::Infinite => f64::INFINITY,
            Ratio::Undefined => f64::NEG_INFINITY,
        }
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ratio::Finite(v) => write!(f, "{v:.4}"),
            Ratio::Infinite => write!(f, "inf"),
            Ratio::Undefined => write!(f, "undefined"),
        }
    }
}

pub fn accuracy(scores: &[f64]) -> Result<f64> {
    if scores.is_empty() {
        return Err(BairError::EmptyInput("accuracy needs at least one score"));
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

fn validate_all(records: &[EvalRecord]) -> Result<()> {
    records.iter().try_for_each(EvalRecord::validate)
}

pub fn accuracy_of(records: &[EvalRecord], method: Method) -> Result<f64> {
    validate_all(records)?;
    let scores = records
        .iter()
        .map(|r| r.require(method))
        .collect::<Result<Vec<_>>>()?;
    accuracy(&scores)
}

fn pairs(records: &[EvalRecord], a: Method, b: Method) -> Result<Vec<(f64, f64)>> {
    validate_all(records)?;
    records
        .iter()
        .map(|r| Ok((r.require(a)?, r.require(b)?)))
        .collect()
}

/// Expected gain over the baseline among samples where it was imperfect.
pub fn correction_rate(records: &[EvalRecord], method: Method) -> Result<Rate> {
    let ps = pairs(records, Method::Baseline, method)?;
    let num = ps.iter().map(|(b, m)| (m - b).max(0.0)).sum();
    let den = ps.iter().filter(|(b, _)| *b < 1.0).count();
    Ok(Rate::from_parts(num, den))
}

/// Expected loss against the baseline among samples it got at least partly right.
pub fn degradation_rate(records: &[EvalRecord], method: Method) -> Result<Rate> {
    let ps = pairs(records, Method::Baseline, method)?;
    let num = ps.iter().map(|(b, m)| (b - m).max(0.0)).sum();
    let den = ps.iter().filter(|(b, _)| *b > 0.0).count();
    Ok(Rate::from_parts(num, den))
}

/// Gain of the intervention over standard retrieval where retrieval was imperfect.
pub fn recovery_rate(records: &[EvalRecord]) -> Result<Rate> {
    let ps = pairs(records, Method::Rag, Method::Intervention)?;
    let num = ps.iter().map(|(r, i)| (i - r).max(0.0)).sum();
    let den = ps.iter().filter(|(r, _)| *r < 1.0).count();
    Ok(Rate::from_parts(num, den))
}

fn triples(records: &[EvalRecord]) -> Result<Vec<(f64, f64, f64)>> {
    validate_all(records)?;
    records
        .iter()
        .map(|r| {
            Ok((
                r.require(Method::Baseline)?,
                r.require(Method::Rag)?,
                r.require(Method::Intervention)?,
            ))
        })
        .collect()
}

/// Points restored on recorrupted samples (baseline beat retrieval), counted
/// only where the intervention reaches the baseline again.
pub fn strictly_cured_rate(records: &[EvalRecord]) -> Result<Rate> {
    let ts = triples(records)?;
    let num = ts
        .iter()
        .filter(|(b, r, i)| i >= b && b > r)
        .map(|(_, r, i)| i - r)
        .sum();
    let den = ts.iter().filter(|(b, r, _)| b > r).count();
    Ok(Rate::from_parts(num, den))
}

/// Gain beyond both baseline and retrieval on samples where both were imperfect.
pub fn novel_recovery_rate(records: &[EvalRecord]) -> Result<Rate> {
    let ts = triples(records)?;
    let num = ts.iter().map(|(b, r, i)| (i - b.max(*r)).max(0.0)).sum();
    let den = ts.iter().filter(|(b, r, _)| *b < 1.0 && *r < 1.0).count();
    Ok(Rate::from_parts(num, den))
}

/// Degenerate output: blank, fewer than five characters, or one
/// whitespace-delimited token repeated five or more times in a row.
pub fn generation_failure(text: &str) -> bool {
    let trimmed = text.trim();
    if trimmed.chars().count() < MIN_RESPONSE_CHARS {
        return true;
    }
    let mut run = 0;
    let mut prev: Option<&str> = None;
    for tok in trimmed.split_whitespace() {
        run = if prev == Some(tok) { run + 1 } else { 1 };
        if run >= REPEAT_LIMIT {
            return true;
        }
        prev = Some(tok);
    }
    false
}

/// Share of failed generations among records that carry a response.
pub fn gfr(records: &[EvalRecord]) -> Option<f64> {
    let texts: Vec<&str> = records
        .iter()
        .filter_map(|r| r.response_text.as_deref())
        .collect();
    if texts.is_empty() {
        return None;
    }
    let failed = texts.iter().filter(|t| generation_failure(t)).count();
    Some(failed as f64 / texts.len() as f64)
}

/// Correctness flips between the baseline and a method after binarization.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionTable {
    pub correct_to_correct: usize,
    pub correct_to_incorrect: usize,
    pub incorrect_to_correct: usize,
    pub incorrect_to_incorrect: usize,
}

impl TransitionTable {
    pub fn total(&self) -> usize {
        self.correct_to_correct
            + self.correct_to_incorrect
            + self.incorrect_to_correct
            + self.incorrect_to_incorrect
    }
}

pub const DEFAULT_THRESHOLD: f64 = 1.0;

pub fn transition_table(
    records: &[EvalRecord],
    method: Method,
    threshold: f64,
) -> Result<TransitionTable> {
    let ps = pairs(records, Method::Baseline, method)?;
    let mut t = TransitionTable::default();
    for (b, m) in ps {
        match (b >= threshold, m >= threshold) {
            (true, true) => t.correct_to_correct += 1,
            (true, false) => t.correct_to_incorrect += 1,
            (false, true) => t.incorrect_to_correct += 1,
            (false, false) => t.incorrect_to_incorrect += 1,
        }
    }
    Ok(t)
}

/// Metrics of one retrieval-augmented condition against the baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: Method,
    pub accuracy: f64,
    pub cr: Rate,
    pub dr: Rate,
    pub cr_dr_ratio: Ratio,
    pub rr: Option<Rate>,
    pub sr: Option<Rate>,
    pub nr: Option<Rate>,
    pub transitions: TransitionTable,
}

impl MetricsReport {
    pub fn compute(records: &[EvalRecord], method: Method, threshold: f64) -> Result<Self> {
        let cr = correction_rate(records, method)?;
        let dr = degradation_rate(records, method)?;
        let (rr, sr, nr) = if method == Method::Intervention {
            (
                Some(recovery_rate(records)?),
                Some(strictly_cured_rate(records)?),
                Some(novel_recovery_rate(records)?),
            )
        } else {
            (None, None, None)
        };
        Ok(Self {
            method,
            accuracy: accuracy_of(records, method)?,
            cr,
            dr,
            cr_dr_ratio: Ratio::of(cr.value, dr.value),
            rr,
            sr,
            nr,
            transitions: transition_table(records, method, threshold)?,
        })
    }
}

/// Everything computable from a score set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub n: usize,
    pub threshold: f64,
    pub baseline_accuracy: f64,
    pub rag: Option<MetricsReport>,
    pub intervention: Option<MetricsReport>,
    pub gfr: Option<f64>,
}

pub fn evaluate(records: &[EvalRecord], threshold: f64) -> Result<EvaluationReport> {
    if records.is_empty() {
        return Err(BairError::EmptyInput("no evaluation records"));
    }
    validate_all(records)?;
    let all = |m: Method| records.iter().all(|r| r.raw_score(m).is_some());
    let rag = if all(Method::Rag) {
        Some(MetricsReport::compute(records, Method::Rag, threshold)?)
    } else {
        None
    };
    let intervention = if all(Method::Intervention) && all(Method::Rag) {
        Some(MetricsReport::compute(records, Method::Intervention, threshold)?)
    } else {
        None
    };
    Ok(EvaluationReport {
        n: records.len(),
        threshold,
        baseline_accuracy: accuracy_of(records, Method::Baseline)?,
        rag,
        intervention,
        gfr: gfr(records),
    })
}
