//! Error type shared by every module of the crate.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = BairError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum BairError {
    #[error("empty logit vector")]
    EmptyLogits,

    #[error("non-finite logit at index {index}")]
    NonFiniteLogit { index: usize },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("no visual tokens")]
    NoVisualTokens,

    #[error("no textual tokens")]
    NoTextTokens,

    #[error("zero visual mass{}", sample_suffix(.sample_id))]
    ZeroVisualMass { sample_id: Option<String> },

    #[error("span overlap: {0}")]
    SpanOverlap(String),

    #[error("span out of range: {0}")]
    SpanOutOfRange(String),

    #[error("missing context span")]
    MissingContextSpan,

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("duplicate (layer, head) = ({layer}, {head})")]
    DuplicateHead { layer: usize, head: usize },

    #[error("missing calibration target for (layer, head) = ({layer}, {head})")]
    MissingTarget { layer: usize, head: usize },

    #[error("missing calibration targets for {} (layer, head) pairs: {}", .0.len(), fmt_pairs(.0))]
    MissingTargets(Vec<(usize, usize)>),

    #[error(
        "visual token count mismatch at ({layer}, {head}): reference has {reference}, dump has {actual}"
    )]
    VisualCountMismatch {
        layer: usize,
        head: usize,
        reference: usize,
        actual: usize,
    },

    #[error("score out of range for sample `{sample_id}`: {field} = {value}")]
    ScoreOutOfRange {
        sample_id: String,
        field: &'static str,
        value: f64,
    },

    #[error("missing score for sample `{sample_id}`: {field}")]
    MissingScore {
        sample_id: String,
        field: &'static str,
    },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("unsupported format version `{0}`")]
    UnsupportedVersion(String),

    #[error("malformed file {}: {reason}", .path.display())]
    Malformed { path: PathBuf, reason: String },

    #[error("payload length mismatch in {}: expected {expected} values, got {actual}", .path.display())]
    PayloadLength {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },

    #[error("I/O error on {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl BairError {
    /// Stable machine-readable code for the error variant.
    pub fn code(&self) -> &'static str {
        match self {
            BairError::EmptyLogits => "empty_logits",
            BairError::NonFiniteLogit { .. } => "non_finite",
            BairError::LengthMismatch { .. } => "length_mismatch",
            BairError::NoVisualTokens => "no_visual_tokens",
            BairError::NoTextTokens => "no_text_tokens",
            BairError::ZeroVisualMass { .. } => "zero_visual_mass",
            BairError::SpanOverlap(_) => "span_overlap",
            BairError::SpanOutOfRange(_) => "span_out_of_range",
            BairError::MissingContextSpan => "missing_context_span",
            BairError::InvalidParameter { .. } => "invalid_parameter",
            BairError::DuplicateHead { .. } => "duplicate_head",
            BairError::MissingTarget { .. } => "missing_target",
            BairError::MissingTargets(_) => "missing_targets",
            BairError::VisualCountMismatch { .. } => "visual_count_mismatch",
            BairError::ScoreOutOfRange { .. } => "score_out_of_range",
            BairError::MissingScore { .. } => "missing_score",
            BairError::EmptyInput(_) => "empty_input",
            BairError::UnsupportedVersion(_) => "version_mismatch",
            BairError::Malformed { .. } => "malformed",
            BairError::PayloadLength { .. } => "length_mismatch",
            BairError::Io { .. } => "io",
        }
    }

    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        BairError::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

fn sample_suffix(sample_id: &Option<String>) -> String {
    match sample_id {
        Some(id) => format!(" in sample `{id}`"),
        None => String::new(),
    }
}

fn fmt_pairs(pairs: &[(usize, usize)]) -> String {
    pairs
        .iter()
        .map(|(l, h)| format!("({l}, {h})"))
        .collect::<Vec<_>>()
        .join(", ")
}
