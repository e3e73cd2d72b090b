//! `bair-dump/1` attention dump files.
//!
//! A dump holds every bottleneck row of one sample. It starts with a TOML
//! manifest, followed by a `%%payload` line and the row values:
//!
//! ```text
//! format_version = "bair-dump/1"
//! sample_id = "synth-00000"
//! sequence_len = 118
//! encoding = "binary"
//! layers = [0]
//! heads = [0]
//! value_count = 118
//!
//! [visual_span]
//! start = 1
//! len = 16
//!
//! [text_span]
//! start = 17
//! len = 100
//! %%payload
//! <values>
//! ```
//!
//! Rows are ordered `[layer][head]` over the `layers` and `heads` lists and
//! each row has `sequence_len` values. Binary payloads are little-endian
//! IEEE-754 `f32`. Inline payloads hold one row per line with space-separated
//! shortest round-trip `f32` decimals. Values are widened to `f64` on read.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attention::{BottleneckVector, ModalityLayout, Span};
use crate::error::{BairError, Result};

pub const FORMAT_VERSION: &str = "bair-dump/1";
const PAYLOAD_MARKER: &[u8] = b"%%payload\n";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Encoding {
    Inline,
    #[default]
    Binary,
}

impl std::str::FromStr for Encoding {
    type Err = BairError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inline" => Ok(Encoding::Inline),
            "binary" => Ok(Encoding::Binary),
            other => Err(BairError::param(
                "encoding",
                format!("expected `inline` or `binary`, got `{other}`"),
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Manifest {
    format_version: String,
    sample_id: String,
    sequence_len: usize,
    encoding: Encoding,
    layers: Vec<usize>,
    heads: Vec<usize>,
    value_count: usize,
    visual_span: Span,
    text_span: Span,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    context_span: Option<Span>,
}

fn malformed(path: &Path, reason: impl Into<String>) -> BairError {
    BairError::Malformed {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BairError + '_ {
    move |source| BairError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Serializes rows to bytes. All rows must share one sample id and layout
/// and cover a full layer × head grid.
pub fn encode_dump(vectors: &[BottleneckVector], encoding: Encoding) -> Result<Vec<u8>> {
    let manifest = if let Some(first) = vectors.first() {
        for v in vectors {
            v.validate()?;
            if v.sample_id != first.sample_id || v.layout != first.layout {
                return Err(BairError::param(
                    "vectors",
                    "all rows of a dump must share sample id and layout",
                ));
            }
        }
        let layers: Vec<usize> = vectors.iter().map(|v| v.layer).collect::<BTreeSet<_>>().into_iter().collect();
        let heads: Vec<usize> = vectors.iter().map(|v| v.head).collect::<BTreeSet<_>>().into_iter().collect();
        let keys: BTreeSet<(usize, usize)> = vectors.iter().map(BottleneckVector::key).collect();
        if keys.len() != vectors.len() {
            let dup = vectors
                .iter()
                .map(BottleneckVector::key)
                .find(|k| vectors.iter().filter(|v| v.key() == *k).count() > 1)
                .unwrap_or_default();
            return Err(BairError::DuplicateHead {
                layer: dup.0,
                head: dup.1,
            });
        }
        if keys.len() != layers.len() * heads.len() {
            return Err(BairError::param(
                "vectors",
                format!(
                    "rows must cover a full layer x head grid ({} layers x {} heads), got {} rows",
                    layers.len(),
                    heads.len(),
                    keys.len()
                ),
            ));
        }
        let l = &first.layout;
        Manifest {
            format_version: FORMAT_VERSION.to_string(),
            sample_id: first.sample_id.clone(),
            sequence_len: l.sequence_len,
            encoding,
            value_count: layers.len() * heads.len() * l.sequence_len,
            layers,
            heads,
            visual_span: l.visual,
            text_span: l.text,
            context_span: l.context,
        }
    } else {
        Manifest {
            format_version: FORMAT_VERSION.to_string(),
            sample_id: String::new(),
            sequence_len: 0,
            encoding,
            layers: Vec::new(),
            heads: Vec::new(),
            value_count: 0,
            visual_span: Span::new(0, 0),
            text_span: Span::new(0, 0),
            context_span: None,
        }
    };

    let mut rows: Vec<&BottleneckVector> = vectors.iter().collect();
    rows.sort_by_key(|v| v.key());

    let header = toml::to_string(&manifest)
        .map_err(|e| BairError::param("manifest", e.to_string()))?;
    let mut out = header.into_bytes();
    if !out.ends_with(b"\n") {
        out.push(b'\n');
    }
    out.extend_from_slice(PAYLOAD_MARKER);
    for row in rows {
        let narrowed: Vec<f32> = row.logits.iter().map(|&x| x as f32).collect();
        if let Some(index) = narrowed.iter().position(|x| !x.is_finite()) {
            return Err(BairError::NonFiniteLogit { index });
        }
        match encoding {
            Encoding::Binary => {
                for x in narrowed {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
            Encoding::Inline => {
                let line = narrowed
                    .iter()
                    .map(|x| x.to_string())
                    .collect::<Vec<_>>()
                    .join(" ");
                out.extend_from_slice(line.as_bytes());
                out.push(b'\n');
            }
        }
    }
    Ok(out)
}

pub fn write_dump(vectors: &[BottleneckVector], path: &Path, encoding: Encoding) -> Result<()> {
    let bytes = encode_dump(vectors, encoding)?;
    fs::write(path, bytes).map_err(io_err(path))
}

/// Parses dump bytes; `path` is only used in error messages.
pub fn decode_dump(bytes: &[u8], path: &Path) -> Result<Vec<BottleneckVector>> {
    let split = bytes
        .windows(PAYLOAD_MARKER.len() + 1)
        .position(|w| w[0] == b'\n' && &w[1..] == PAYLOAD_MARKER)
        .ok_or_else(|| malformed(path, "missing `%%payload` marker"))?;
    let header = std::str::from_utf8(&bytes[..=split])
        .map_err(|_| malformed(path, "manifest is not UTF-8"))?;
    let payload = &bytes[split + 1 + PAYLOAD_MARKER.len()..];

    let table: toml::Table =
        toml::from_str(header).map_err(|e| malformed(path, format!("manifest: {e}")))?;
    match table.get("format_version").and_then(|v| v.as_str()) {
        Some(FORMAT_VERSION) => {}
        Some(other) => return Err(BairError::UnsupportedVersion(other.to_string())),
        None => return Err(malformed(path, "manifest lacks format_version")),
    }
    let m: Manifest = table
        .try_into()
        .map_err(|e| malformed(path, format!("manifest: {e}")))?;

    let rows = m.layers.len() * m.heads.len();
    let expected = rows * m.sequence_len;
    if m.value_count != expected {
        return Err(BairError::PayloadLength {
            path: path.to_path_buf(),
            expected,
            actual: m.value_count,
        });
    }
    let values: Vec<f64> = match m.encoding {
        Encoding::Binary => {
            if !payload.len().is_multiple_of(4) || payload.len() / 4 != expected {
                return Err(BairError::PayloadLength {
                    path: path.to_path_buf(),
                    expected,
                    actual: payload.len() / 4,
                });
            }
            payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect()
        }
        Encoding::Inline => {
            let text = std::str::from_utf8(payload)
                .map_err(|_| malformed(path, "inline payload is not UTF-8"))?;
            let vals = text
                .split_whitespace()
                .map(|t| {
                    t.parse::<f32>()
                        .map(f64::from)
                        .map_err(|_| malformed(path, format!("bad value `{t}`")))
                })
                .collect::<Result<Vec<_>>>()?;
            if vals.len() != expected {
                return Err(BairError::PayloadLength {
                    path: path.to_path_buf(),
                    expected,
                    actual: vals.len(),
                });
            }
            vals
        }
    };
    if rows == 0 {
        return Ok(Vec::new());
    }
    if let Some(index) = values.iter().position(|x| !x.is_finite()) {
        return Err(BairError::NonFiniteLogit { index });
    }

    let layout = ModalityLayout::new(m.sequence_len, m.visual_span, m.text_span, m.context_span)?;
    let mut out = Vec::with_capacity(rows);
    let mut chunks = values.chunks_exact(m.sequence_len);
    for &layer in &m.layers {
        for &head in &m.heads {
            let row = chunks.next().expect("row count checked above");
            out.push(BottleneckVector::new(
                row.to_vec(),
                layout.clone(),
                layer,
                head,
                m.sample_id.clone(),
            )?);
        }
    }
    Ok(out)
}

pub fn read_dump(path: &Path) -> Result<Vec<BottleneckVector>> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_dump(&bytes, path)
}
