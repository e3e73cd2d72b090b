use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bair_core::config::{BairConfig, PatpScope};
use bair_core::error::{BairError, Result};
use bair_core::io::dump::{read_dump, write_dump, Encoding};
use bair_core::io::scores::{read_scores, read_segment_samples, write_scores};
use bair_core::metrics::{evaluate, DEFAULT_THRESHOLD};
use bair_core::pipeline::{calibrate_dump, extract_targets};
use bair_core::profile::{
    classify_segment, positional_profile, segment_accuracy, tokenize, DEFAULT_BINS,
    DEFAULT_RESAMPLES, DEFAULT_SEGMENTS,
};
use bair_core::report;
use bair_core::synth::{
    run_e2e, run_suite, BoundarySide, ScenarioParams, SuiteConfig, DEFAULT_DECISION_THRESHOLD,
};
use clap::{Args, Parser, Subcommand};

/// Inference-time bottleneck attention calibration.
#[derive(Parser)]
#[command(name = "bair", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Calibrate a dump against the targets of a reference dump.
    Calibrate(CalibrateArgs),
    /// Per-head visual mass and sharpness of a dump.
    Diagnose {
        #[arg(long)]
        dump: PathBuf,
    },
    /// Metrics report and transition table for a scores file.
    Metrics {
        #[arg(long)]
        scores: PathBuf,
        /// Score at or above which a response counts as correct.
        #[arg(long, default_value_t = DEFAULT_THRESHOLD, allow_negative_numbers = true)]
        threshold: f64,
    },
    /// ROUGE-L profile of a response across document bins.
    Profile {
        #[arg(long)]
        response: PathBuf,
        #[arg(long)]
        document: PathBuf,
        #[arg(long, default_value_t = DEFAULT_BINS)]
        bins: usize,
        #[arg(long, default_value = "response")]
        label: String,
    },
    /// Accuracy by evidence segment with bootstrap intervals.
    Segments {
        #[arg(long)]
        samples: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_SEGMENTS)]
        segments: usize,
        #[arg(long, default_value_t = DEFAULT_RESAMPLES)]
        resamples: usize,
    },
    /// Write a synthetic recorruption suite.
    Synth {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "binary")]
        encoding: Encoding,
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[command(flatten)]
        bair: BairArgs,
    },
    /// Synthesize, calibrate and score in one run.
    E2e {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: u64,
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[command(flatten)]
        bair: BairArgs,
    },
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    dump: PathBuf,
    #[arg(long)]
    reference: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Diagnostics destination; stdout when omitted.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, default_value = "binary")]
    encoding: Encoding,
    #[command(flatten)]
    bair: BairArgs,
}

#[derive(Args)]
struct BairArgs {
    #[arg(long, default_value_t = 0.5, allow_negative_numbers = true)]
    alpha_v: f64,
    #[arg(long, default_value_t = 100.0, allow_negative_numbers = true)]
    t_max: f64,
    #[arg(long, default_value_t = 1e-4, allow_negative_numbers = true)]
    eps: f64,
    /// Boundary window fraction for positional penalties.
    #[arg(long, default_value_t = 0.2, allow_negative_numbers = true)]
    fraction: f64,
    #[arg(long)]
    no_vsmr: bool,
    #[arg(long)]
    no_patp: bool,
    /// `full-text` or `context-only`.
    #[arg(long, default_value = "full-text")]
    patp_scope: PatpScope,
}

impl BairArgs {
    fn config(&self) -> BairConfig {
        BairConfig {
            alpha_v: self.alpha_v,
            t_max: self.t_max,
            eps: self.eps,
            boundary_fraction: self.fraction,
            enable_vsmr: !self.no_vsmr,
            enable_patp: !self.no_patp,
            patp_scope: self.patp_scope,
        }
    }
}

#[derive(Args)]
struct ScenarioArgs {
    #[arg(long, default_value_t = 16)]
    n_visual: usize,
    #[arg(long, default_value_t = 100)]
    n_text: usize,
    #[arg(long, default_value_t = 6.0, allow_negative_numbers = true)]
    visual_spike: f64,
    #[arg(long, default_value_t = 2.0, allow_negative_numbers = true)]
    suppression: f64,
    #[arg(long, default_value_t = 6.0, allow_negative_numbers = true)]
    boundary_spike: f64,
    /// `head`, `tail` or `both`.
    #[arg(long, default_value = "tail")]
    side: BoundarySide,
    #[arg(long, default_value_t = 0.1, allow_negative_numbers = true)]
    noise: f64,
    /// Relative jitter of the visual spike strength across scenarios.
    #[arg(long, default_value_t = 0.5, allow_negative_numbers = true)]
    jitter: f64,
    /// Visual mass needed for the toy decision to read the image.
    #[arg(long, default_value_t = DEFAULT_DECISION_THRESHOLD, allow_negative_numbers = true)]
    decision_threshold: f64,
}

impl ScenarioArgs {
    fn suite(&self, n: usize, seed: u64, bair: &BairArgs) -> SuiteConfig {
        SuiteConfig {
            n,
            seed,
            template: ScenarioParams {
                n_visual: self.n_visual,
                n_text: self.n_text,
                visual_spike_strength: self.visual_spike,
                suppression_delta: self.suppression,
                boundary_spike_strength: self.boundary_spike,
                boundary_side: self.side,
                noise_scale: self.noise,
                ..ScenarioParams::default()
            },
            bair: bair.config(),
            threshold: self.decision_threshold,
            strength_jitter: self.jitter,
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| BairError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| BairError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn calibrate(a: &CalibrateArgs) -> Result<String> {
    let config = a.bair.config();
    config.validate()?;
    let reference = read_dump(&a.reference)?;
    let vectors = read_dump(&a.dump)?;
    let targets = extract_targets(&reference)?;
    let out = calibrate_dump(&vectors, &targets, &config)?;
    write_dump(&out.vectors, &a.out, a.encoding)?;
    let mut text = report::diagnostics_tsv(&out.diagnostics);
    text.push_str(&report::summary_tsv(&out.summary));
    match &a.report {
        Some(path) => {
            write_text(path, &text)?;
            Ok(report::summary_tsv(&out.summary))
        }
        None => Ok(text),
    }
}

fn segments(samples: &Path, seed: u64, k: usize, resamples: usize) -> Result<String> {
    let rows = read_segment_samples(samples)?;
    let assigned: Vec<_> = rows
        .iter()
        .map(|r| (classify_segment(&r.evidence, &r.document, k), r.score))
        .collect();
    let unique = assigned.iter().filter(|(a, _)| a.segment.is_some()).count();
    let stats = segment_accuracy(&assigned, k, resamples, seed)?;
    let mut text = format!(
        "# segments samples={} assigned={} unassigned={} seed={}\n",
        rows.len(),
        unique,
        rows.len() - unique,
        seed
    );
    text.push_str(&report::segments_tsv(&stats));
    Ok(text)
}

fn synth(n: usize, seed: u64, out: &Path, encoding: Encoding, cfg: &SuiteConfig) -> Result<String> {
    let suite = run_suite(cfg)?;
    fs::create_dir_all(out).map_err(|source| BairError::Io {
        path: out.to_path_buf(),
        source,
    })?;
    let mut table = String::from(
        "sample_id\tseed\tgt_visual_index\tgt_segment\tvisual_spike\tclean_mass\t\
         corrupted_mass\tcalibrated_mass\tclean_answer\tcorrupted_answer\tcalibrated_answer\n",
    );
    for case in &suite.cases {
        let s = &case.scenario;
        let id = &s.clean.sample_id;
        write_dump(
            std::slice::from_ref(&s.clean),
            &out.join(format!("{id}.clean.dump")),
            encoding,
        )?;
        write_dump(
            std::slice::from_ref(&s.corrupted),
            &out.join(format!("{id}.corrupted.dump")),
            encoding,
        )?;
        let d = &case.diagnostics;
        let [a, b, c] = case.answers.map(|x| format!("{x:?}"));
        table.push_str(&format!(
            "{id}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{a}\t{b}\t{c}\n",
            s.params.seed,
            s.gt_visual_index,
            s.gt_text_segment,
            s.params.visual_spike_strength,
            case.clean_mass,
            d.pre_measure.mass,
            d.post_measure.mass,
        ));
    }
    write_text(&out.join("scenarios.tsv"), &table)?;
    write_scores(&suite.records, &out.join("scores.csv"))?;
    Ok(format!(
        "# synth n={n} seed={seed} out={}\n{}",
        out.display(),
        report::metrics_tsv(&evaluate(&suite.records, DEFAULT_THRESHOLD)?)
    ))
}

fn run(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Calibrate(a) => calibrate(&a),
        Command::Diagnose { dump } => report::measures_tsv(&read_dump(&dump)?),
        Command::Metrics { scores, threshold } => {
            let records = read_scores(&scores)?;
            Ok(report::metrics_tsv(&evaluate(&records, threshold)?))
        }
        Command::Profile {
            response,
            document,
            bins,
            label,
        } => {
            let r = tokenize(&read_text(&response)?);
            let d = tokenize(&read_text(&document)?);
            Ok(report::profile_tsv(&positional_profile(&r, &d, bins, label)?))
        }
        Command::Segments {
            samples,
            seed,
            segments: k,
            resamples,
        } => segments(&samples, seed, k, resamples),
        Command::Synth {
            n,
            seed,
            out,
            encoding,
            scenario,
            bair,
        } => synth(n, seed, &out, encoding, &scenario.suite(n, seed, &bair)),
        Command::E2e {
            n,
            seed,
            scenario,
            bair,
        } => Ok(report::e2e_text(&run_e2e(&scenario.suite(n, seed, &bair))?)),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(text) => {
            let mut stdout = std::io::stdout().lock();
            if stdout.write_all(text.as_bytes()).is_err() {
                return ExitCode::from(2);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error[{}]: {e}", e.code());
            // bad flag values are usage errors, everything else is data
            match e {
                BairError::InvalidParameter { .. } => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}
