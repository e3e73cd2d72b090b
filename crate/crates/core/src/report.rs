//! Tab-separated text reports. Floats use the shortest round-trip decimal,
//! missing values print as `NA`, and `#` lines open a new table.

use crate::attention::{measure, BottleneckVector};
use crate::error::Result;
use crate::metrics::{EvaluationReport, MetricsReport, Rate, Ratio};
use crate::pipeline::{CalibrationSummary, HeadDiagnostics};
use crate::profile::{PositionalProfile, SegmentStat};
use crate::synth::E2eReport;

const NA: &str = "NA";

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(|| NA.to_string(), |x| x.to_string())
}

fn row(out: &mut String, cells: &[String]) {
    out.push_str(&cells.join("\t"));
    out.push('\n');
}

macro_rules! cells {
    ($($x:expr),* $(,)?) => { [$($x.to_string()),*] };
}

pub fn diagnostics_tsv(diags: &[HeadDiagnostics]) -> String {
    let mut out = String::new();
    row(
        &mut out,
        &cells![
            "layer",
            "head",
            "pre_mass",
            "pre_sharpness",
            "post_mass",
            "post_sharpness",
            "vsmr_mass",
            "vsmr_sharpness",
            "m_target",
            "s_target",
            "t_star",
            "iterations",
            "alpha",
            "lambda_prim",
            "lambda_rec",
            "flags",
        ],
    );
    for d in diags {
        row(
            &mut out,
            &cells![
                d.layer,
                d.head,
                d.pre_measure.mass,
                d.pre_measure.sharpness,
                d.post_measure.mass,
                d.post_measure.sharpness,
                opt(d.vsmr_measure.map(|m| m.mass)),
                opt(d.vsmr_measure.map(|m| m.sharpness)),
                opt(d.target.map(|t| t.m_target)),
                opt(d.target.map(|t| t.s_target)),
                opt(d.temperature.map(|t| t.t_star)),
                opt(d.temperature.map(|t| t.iterations)),
                opt(d.alpha_shift),
                d.penalty_weights.lambda_prim,
                d.penalty_weights.lambda_rec,
                d.flags.label(),
            ],
        );
    }
    out
}

pub fn summary_tsv(s: &CalibrationSummary) -> String {
    let mut out = String::from("# summary\nkey\tvalue\n");
    let pairs = [
        ("heads", s.heads.to_string()),
        ("mean_pre_mass", s.mean_pre_mass.to_string()),
        ("mean_post_mass", s.mean_post_mass.to_string()),
        ("mean_pre_sharpness", s.mean_pre_sharpness.to_string()),
        ("mean_post_sharpness", s.mean_post_sharpness.to_string()),
        ("sharpness_clamped", s.sharpness_clamped.to_string()),
        ("degenerate_visual", s.degenerate_visual.to_string()),
        ("targets_clamped", s.targets_clamped.to_string()),
        ("mean_lambda_prim", s.mean_lambda_prim.to_string()),
        ("mean_lambda_rec", s.mean_lambda_rec.to_string()),
        ("max_lambda_prim", s.max_lambda_prim.to_string()),
        ("max_lambda_rec", s.max_lambda_rec.to_string()),
        ("max_iterations", s.max_iterations.to_string()),
    ];
    for (k, v) in pairs {
        row(&mut out, &[k.to_string(), v]);
    }
    out
}

/// Per-head visual mass and sharpness of a dump.
pub fn measures_tsv(vectors: &[BottleneckVector]) -> Result<String> {
    let mut out = String::new();
    row(
        &mut out,
        &cells!["sample_id", "layer", "head", "n_visual", "n_text", "mass", "sharpness"],
    );
    for v in vectors {
        let m = measure(v)?;
        row(
            &mut out,
            &cells![
                v.sample_id,
                v.layer,
                v.head,
                v.layout.n_visual(),
                v.layout.n_text(),
                m.mass,
                m.sharpness,
            ],
        );
    }
    Ok(out)
}

fn rate_row(out: &mut String, metric: &str, method: &str, r: &Rate) {
    row(
        out,
        &cells![
            metric,
            method,
            r.value,
            r.numerator,
            r.denominator,
            if r.undefined { "undefined" } else { "-" },
        ],
    );
}

fn ratio_row(out: &mut String, method: &str, r: &Ratio) {
    let (value, flag) = match r {
        Ratio::Finite(v) => (v.to_string(), "-"),
        Ratio::Infinite => ("inf".to_string(), "infinite"),
        Ratio::Undefined => (NA.to_string(), "undefined"),
    };
    row(out, &cells!["cr_dr", method, value, NA, NA, flag]);
}

fn method_rows(out: &mut String, m: &MetricsReport) {
    let label = m.method.label();
    row(out, &cells!["accuracy", label, m.accuracy, NA, NA, "-"]);
    rate_row(out, "cr", label, &m.cr);
    rate_row(out, "dr", label, &m.dr);
    ratio_row(out, label, &m.cr_dr_ratio);
    for (name, r) in [("rr", &m.rr), ("sr", &m.sr), ("nr", &m.nr)] {
        if let Some(r) = r {
            rate_row(out, name, label, r);
        }
    }
}

pub fn metrics_tsv(e: &EvaluationReport) -> String {
    let mut out = format!("# metrics n={} threshold={}\n", e.n, e.threshold);
    row(
        &mut out,
        &cells!["metric", "method", "value", "numerator", "denominator", "flag"],
    );
    row(&mut out, &cells!["accuracy", "baseline", e.baseline_accuracy, NA, e.n, "-"]);
    let methods: Vec<&MetricsReport> = e.rag.iter().chain(&e.intervention).collect();
    for m in &methods {
        method_rows(&mut out, m);
    }
    match e.gfr {
        Some(g) => row(&mut out, &cells!["gfr", "response", g, NA, NA, "-"]),
        None => row(&mut out, &cells!["gfr", "response", NA, NA, 0, "undefined"]),
    }

    out.push_str("# transitions\n");
    row(&mut out, &cells!["method", "from", "to", "count"]);
    for m in &methods {
        let t = &m.transitions;
        let label = m.method.label();
        for (from, to, n) in [
            ("correct", "correct", t.correct_to_correct),
            ("correct", "incorrect", t.correct_to_incorrect),
            ("incorrect", "correct", t.incorrect_to_correct),
            ("incorrect", "incorrect", t.incorrect_to_incorrect),
        ] {
            row(&mut out, &cells![label, from, to, n]);
        }
    }
    out
}

pub fn profile_tsv(p: &PositionalProfile) -> String {
    let mut out = format!("# profile method={}\n", p.method_label);
    row(&mut out, &cells!["bin", "start", "end", "tokens", "rouge_l"]);
    for (i, (tokens, value)) in p.bin_tokens.iter().zip(&p.values).enumerate() {
        row(
            &mut out,
            &cells![i + 1, p.bin_edges[i], p.bin_edges[i + 1], tokens, value],
        );
    }
    out
}

pub fn segments_tsv(stats: &[SegmentStat]) -> String {
    let mut out = String::new();
    row(&mut out, &cells!["segment", "n", "mean", "ci_low", "ci_high"]);
    for s in stats {
        row(
            &mut out,
            &cells![s.segment, s.n, opt(s.mean), opt(s.ci_low), opt(s.ci_high)],
        );
    }
    out
}

pub fn e2e_text(r: &E2eReport) -> String {
    let c = &r.config;
    let mut out = format!(
        "# e2e n={} seed={} alpha_v={} decision_threshold={} side={}\n",
        c.n,
        c.seed,
        c.bair.alpha_v,
        c.threshold,
        c.template.boundary_side.label(),
    );
    let e = &r.evaluation;
    if let (Some(rag), Some(int)) = (&e.rag, &e.intervention) {
        out.push_str("# comparison\n");
        row(&mut out, &cells!["method", "accuracy", "cr", "dr", "cr_dr"]);
        for m in [rag, int] {
            row(
                &mut out,
                &cells![m.method.label(), m.accuracy, m.cr.value, m.dr.value, m.cr_dr_ratio],
            );
        }
    }
    out.push_str(&metrics_tsv(e));
    out.push_str("# rag accuracy by evidence segment\n");
    out.push_str(&segments_tsv(&r.rag_by_segment));
    out.push_str("# intervention accuracy by evidence segment\n");
    out.push_str(&segments_tsv(&r.intervention_by_segment));
    out.push_str("# cure\nkey\tvalue\n");
    for (k, v) in [
        ("curable", r.curable.to_string()),
        ("cured", r.cured.to_string()),
        ("cure_rate", opt(r.cure_rate())),
        ("median_iterations", r.median_iterations.to_string()),
        ("max_iterations", r.max_iterations.to_string()),
    ] {
        row(&mut out, &[k.to_string(), v]);
    }
    out
}
