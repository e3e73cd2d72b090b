//! Positional bias diagnostics for retrieved documents.
//!
//! [`positional_profile`] measures ROUGE-L between a response and contiguous
//! slices of the document. [`classify_segment`] places a sample in one of
//! `k` character segments only when its evidence string occurs in exactly one
//! of them. [`segment_accuracy`] reports per-segment mean scores with
//! percentile-bootstrap intervals.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{BairError, Result};

pub const DEFAULT_BINS: usize = 20;
pub const DEFAULT_SEGMENTS: usize = 5;
pub const DEFAULT_RESAMPLES: usize = 1000;

/// Lowercase, whitespace split, ASCII punctuation trimmed from both ends.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| w.trim_matches(|c: char| c.is_ascii_punctuation()).to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}

/// Length of the longest common subsequence.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L F-measure (balanced precision and recall).
pub fn rouge_l<T: PartialEq>(candidate: &[T], reference: &[T]) -> f64 {
    let l = lcs_len(candidate, reference);
    if l == 0 {
        return 0.0;
    }
    let p = l as f64 / candidate.len() as f64;
    let r = l as f64 / reference.len() as f64;
    2.0 * p * r / (p + r)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PositionalProfile {
    /// `K + 1` normalized token positions from 0 to 1.
    pub bin_edges: Vec<f64>,
    pub bin_tokens: Vec<usize>,
    pub values: Vec<f64>,
    pub method_label: String,
}

/// Sizes of `k` contiguous bins over `len` items; leading bins take the remainder.
pub fn bin_sizes(len: usize, k: usize) -> Vec<usize> {
    let base = len / k;
    let extra = len % k;
    (0..k).map(|i| base + usize::from(i < extra)).collect()
}

pub fn positional_profile(
    response: &[String],
    document: &[String],
    bins: usize,
    method_label: impl Into<String>,
) -> Result<PositionalProfile> {
    if document.is_empty() {
        return Err(BairError::EmptyInput("document has no tokens"));
    }
    if bins < 2 || bins > document.len() {
        return Err(BairError::param(
            "bins",
            format!("need 2 <= bins <= {} document tokens, got {bins}", document.len()),
        ));
    }
    let sizes = bin_sizes(document.len(), bins);
    let n = document.len() as f64;
    let mut edges = Vec::with_capacity(bins + 1);
    let mut values = Vec::with_capacity(bins);
    let mut start = 0;
    edges.push(0.0);
    for &size in &sizes {
        values.push(rouge_l(response, &document[start..start + size]));
        start += size;
        edges.push(start as f64 / n);
    }
    Ok(PositionalProfile {
        bin_edges: edges,
        bin_tokens: sizes,
        values,
        method_label: method_label.into(),
    })
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentAssignment {
    /// 1-based segment, set only for a unique match.
    pub segment: Option<usize>,
    /// Sorted 1-based segments touched by any occurrence.
    pub match_positions: Vec<usize>,
}

impl SegmentAssignment {
    pub fn unique(segment: usize) -> Self {
        Self {
            segment: Some(segment),
            match_positions: vec![segment],
        }
    }
}

fn fold_case(text: &str) -> Vec<char> {
    text.chars()
        .map(|c| c.to_lowercase().next().unwrap_or(c))
        .collect()
}

/// Case-insensitive localization of `evidence` among `k` equal character
/// segments of `document`. An occurrence crossing a boundary counts for
/// every segment it touches.
pub fn classify_segment(evidence: &str, document: &str, k: usize) -> SegmentAssignment {
    let needle = fold_case(evidence);
    let hay = fold_case(document);
    if needle.is_empty() || k == 0 || needle.len() > hay.len() {
        return SegmentAssignment::default();
    }
    let n = hay.len();
    let starts: Vec<usize> = (0..k).map(|s| s * n / k).collect();
    let segment_of = |i: usize| starts.partition_point(|&s| s <= i);

    let mut hits = vec![false; k + 1];
    for pos in 0..=n - needle.len() {
        if hay[pos..pos + needle.len()] == needle[..] {
            let (first, last) = (segment_of(pos), segment_of(pos + needle.len() - 1));
            hits[first..=last].fill(true);
        }
    }
    let match_positions: Vec<usize> = (1..=k).filter(|&s| hits[s]).collect();
    let segment = (match_positions.len() == 1).then(|| match_positions[0]);
    SegmentAssignment {
        segment,
        match_positions,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentStat {
    pub segment: usize,
    pub n: usize,
    /// `None` for a segment with no assigned samples.
    pub mean: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Per-segment mean score with a 95% percentile-bootstrap interval.
pub fn segment_accuracy(
    samples: &[(SegmentAssignment, f64)],
    segments: usize,
    resamples: usize,
    seed: u64,
) -> Result<Vec<SegmentStat>> {
    if let Some((_, s)) = samples.iter().find(|(_, s)| !(0.0..=1.0).contains(s)) {
        return Err(BairError::param("score", format!("must lie in [0, 1], got {s}")));
    }
    if resamples == 0 {
        return Err(BairError::param("resamples", "must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(segments);
    for seg in 1..=segments {
        let scores: Vec<f64> = samples
            .iter()
            .filter(|(a, _)| a.segment == Some(seg))
            .map(|&(_, s)| s)
            .collect();
        if scores.is_empty() {
            out.push(SegmentStat {
                segment: seg,
                n: 0,
                mean: None,
                ci_low: None,
                ci_high: None,
            });
            continue;
        }
        let n = scores.len();
        let mean = scores.iter().sum::<f64>() / n as f64;
        let mut means: Vec<f64> = (0..resamples)
            .map(|_| (0..n).map(|_| scores[rng.random_range(0..n)]).sum::<f64>() / n as f64)
            .collect();
        means.sort_by(f64::total_cmp);
        // resampling a constant set reproduces it exactly
        let (lo, hi) = if scores.iter().all(|&s| s == scores[0]) {
            (mean, mean)
        } else {
            (quantile(&means, 0.025), quantile(&means, 0.975))
        };
        out.push(SegmentStat {
            segment: seg,
            n,
            mean: Some(mean),
            ci_low: Some(lo),
            ci_high: Some(hi),
        });
    }
    Ok(out)
}
