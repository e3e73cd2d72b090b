//! Delimited score and sample files.
//!
//! Scores: CSV with header `sample_id,score_baseline,score_rag,
//! score_intervention,response_text`. Only `sample_id` and `score_baseline`
//! are required; the other columns may be absent or left empty per row.
//!
//! Segment samples: CSV with header `sample_id,evidence,document,score`.

use std::fs::File;
use std::path::Path;

use crate::error::{BairError, Result};
use crate::metrics::EvalRecord;

pub const SCORE_COLUMNS: [&str; 5] = [
    "sample_id",
    "score_baseline",
    "score_rag",
    "score_intervention",
    "response_text",
];

fn csv_err(path: &Path, e: csv::Error) -> BairError {
    BairError::Malformed {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

fn open(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|source| BairError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(csv::ReaderBuilder::new().flexible(false).from_reader(file))
}

fn column(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers.iter().position(|h| h.trim() == name)
}

fn required(headers: &csv::StringRecord, name: &str, path: &Path) -> Result<usize> {
    column(headers, name).ok_or_else(|| BairError::Malformed {
        path: path.to_path_buf(),
        reason: format!("missing column `{name}`"),
    })
}

fn parse_score(
    raw: &str,
    sample_id: &str,
    field: &'static str,
    path: &Path,
    line: u64,
) -> Result<Option<f64>> {
    let raw = raw.trim();
    if raw.is_empty() {
        return Ok(None);
    }
    let v: f64 = raw.parse().map_err(|_| BairError::Malformed {
        path: path.to_path_buf(),
        reason: format!("line {line}: `{raw}` is not a number in column {field}"),
    })?;
    if !(0.0..=1.0).contains(&v) {
        return Err(BairError::ScoreOutOfRange {
            sample_id: sample_id.to_string(),
            field,
            value: v,
        });
    }
    Ok(Some(v))
}

pub fn read_scores(path: &Path) -> Result<Vec<EvalRecord>> {
    let mut rdr = open(path)?;
    let headers = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    let id_col = required(&headers, "sample_id", path)?;
    let b_col = required(&headers, "score_baseline", path)?;
    let r_col = column(&headers, "score_rag");
    let i_col = column(&headers, "score_intervention");
    let t_col = column(&headers, "response_text");

    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| csv_err(path, e))?;
        let line = row.position().map_or(0, |p| p.line());
        let id = row.get(id_col).unwrap_or("").to_string();
        let get = |c: Option<usize>| c.and_then(|c| row.get(c)).unwrap_or("");
        let baseline = parse_score(get(Some(b_col)), &id, "score_baseline", path, line)?
            .ok_or_else(|| BairError::MissingScore {
                sample_id: id.clone(),
                field: "score_baseline",
            })?;
        out.push(EvalRecord {
            score_baseline: baseline,
            score_rag: parse_score(get(r_col), &id, "score_rag", path, line)?,
            score_intervention: parse_score(get(i_col), &id, "score_intervention", path, line)?,
            // an empty cell means no response was recorded
            response_text: t_col
                .and_then(|c| row.get(c))
                .filter(|t| !t.is_empty())
                .map(str::to_string),
            sample_id: id,
        });
    }
    Ok(out)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn encode_scores(records: &[EvalRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| BairError::param("scores", e.to_string());
    w.write_record(SCORE_COLUMNS).map_err(io)?;
    for r in records {
        w.write_record([
            r.sample_id.clone(),
            r.score_baseline.to_string(),
            opt(r.score_rag),
            opt(r.score_intervention),
            r.response_text.clone().unwrap_or_default(),
        ])
        .map_err(io)?;
    }
    w.into_inner()
        .map_err(|e| BairError::param("scores", e.to_string()))
}

pub fn write_scores(records: &[EvalRecord], path: &Path) -> Result<()> {
    let bytes = encode_scores(records)?;
    std::fs::write(path, bytes).map_err(|source| BairError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentSample {
    pub sample_id: String,
    pub evidence: String,
    pub document: String,
    pub score: f64,
}

pub fn read_segment_samples(path: &Path) -> Result<Vec<SegmentSample>> {
    let mut rdr = open(path)?;
    let headers = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    let id_c = required(&headers, "sample_id", path)?;
    let ev_c = required(&headers, "evidence", path)?;
    let doc_c = required(&headers, "document", path)?;
    let sc_c = required(&headers, "score", path)?;
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| csv_err(path, e))?;
        let line = row.position().map_or(0, |p| p.line());
        let id = row.get(id_c).unwrap_or("").to_string();
        let score = parse_score(row.get(sc_c).unwrap_or(""), &id, "score", path, line)?
            .ok_or_else(|| BairError::MissingScore {
                sample_id: id.clone(),
                field: "score",
            })?;
        out.push(SegmentSample {
            evidence: row.get(ev_c).unwrap_or("").to_string(),
            document: row.get(doc_c).unwrap_or("").to_string(),
            score,
            sample_id: id,
        });
    }
    Ok(out)
}
