//! Synthetic recorruption scenarios.
//!
//! Each scenario pairs a clean bottleneck row (a visual spike on the
//! evidence token) with a corrupted copy where the visual block is pushed
//! down and one or both text boundaries are inflated. A toy decision rule
//! reads an answer off a row: it follows the visual evidence when the image
//! holds enough mass, and otherwise copies whatever text token wins the
//! attention. This lets the whole pipeline run end to end without a model.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::attention::{measure, BottleneckVector, ModalityLayout, Span};
use crate::config::BairConfig;
use crate::error::{BairError, Result};
use crate::metrics::{evaluate, EvalRecord, EvaluationReport, Method, DEFAULT_THRESHOLD};
use crate::pipeline::{calibrate_head, extract_targets, HeadDiagnostics};
use crate::profile::{segment_accuracy, SegmentAssignment, SegmentStat, DEFAULT_RESAMPLES};

pub const SEGMENTS: usize = 5;
pub const DEFAULT_DECISION_THRESHOLD: f64 = 0.3;
/// Share of text tokens inflated at each corrupted boundary.
pub const SPIKE_FRACTION: f64 = 0.1;
const MAX_REDRAWS: usize = 1000;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundarySide {
    Head,
    #[default]
    Tail,
    Both,
}

impl std::str::FromStr for BoundarySide {
    type Err = BairError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "head" => Ok(BoundarySide::Head),
            "tail" => Ok(BoundarySide::Tail),
            "both" => Ok(BoundarySide::Both),
            other => Err(BairError::param(
                "boundary_side",
                format!("expected head, tail or both, got `{other}`"),
            )),
        }
    }
}

impl BoundarySide {
    pub fn label(&self) -> &'static str {
        match self {
            BoundarySide::Head => "head",
            BoundarySide::Tail => "tail",
            BoundarySide::Both => "both",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioParams {
    pub n_visual: usize,
    pub n_text: usize,
    pub visual_spike_strength: f64,
    pub suppression_delta: f64,
    pub boundary_spike_strength: f64,
    pub boundary_side: BoundarySide,
    /// 1-based fifth of the document holding the evidence.
    pub gt_segment: usize,
    pub noise_scale: f64,
    pub seed: u64,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        Self {
            n_visual: 16,
            n_text: 100,
            visual_spike_strength: 6.0,
            suppression_delta: 2.0,
            boundary_spike_strength: 6.0,
            boundary_side: BoundarySide::Tail,
            gt_segment: 3,
            noise_scale: 0.1,
            seed: 0,
        }
    }
}

impl ScenarioParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_visual < 2 {
            return Err(BairError::param("n_visual", "must be >= 2"));
        }
        if self.n_text < 10 {
            return Err(BairError::param("n_text", "must be >= 10"));
        }
        let non_neg = [
            ("suppression_delta", self.suppression_delta),
            ("boundary_spike_strength", self.boundary_spike_strength),
            ("noise_scale", self.noise_scale),
        ];
        for (name, v) in non_neg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(BairError::param(name, format!("must be >= 0, got {v}")));
            }
        }
        if !(self.visual_spike_strength.is_finite() && self.visual_spike_strength > 0.0) {
            return Err(BairError::param(
                "visual_spike_strength",
                format!("must be > 0, got {}", self.visual_spike_strength),
            ));
        }
        if !(1..=SEGMENTS).contains(&self.gt_segment) {
            return Err(BairError::param(
                "gt_segment",
                format!("must lie in 1..=5, got {}", self.gt_segment),
            ));
        }
        Ok(())
    }

    /// `[bos][visual][text][query]`, with the whole text block as context.
    pub fn layout(&self) -> ModalityLayout {
        let visual = Span::new(1, self.n_visual);
        let text = Span::new(1 + self.n_visual, self.n_text);
        ModalityLayout {
            sequence_len: self.n_visual + self.n_text + 2,
            visual,
            text,
            context: Some(text),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub clean: BottleneckVector,
    pub corrupted: BottleneckVector,
    pub gt_visual_index: usize,
    pub gt_text_segment: usize,
    pub params: ScenarioParams,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ToyAnswer {
    Correct,
    BoundaryDistractor,
    Other,
}

impl ToyAnswer {
    pub fn score(&self) -> f64 {
        match self {
            ToyAnswer::Correct => 1.0,
            _ => 0.0,
        }
    }
}

/// 1-based index of the `k` near-equal contiguous segments of `n` items
/// that contains position `i`.
pub fn segment_of(i: usize, n: usize, k: usize) -> usize {
    (0..k).filter(|s| s * n / k <= i).count()
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn spike_window(n_text: usize) -> usize {
    ((SPIKE_FRACTION * n_text as f64 - 1e-9).ceil() as usize).max(1)
}

fn unique_argmax(xs: &[f64], idx: usize) -> bool {
    xs.iter()
        .enumerate()
        .all(|(i, &x)| i == idx || x < xs[idx])
}

/// Builds one clean/corrupted pair, deterministic in `params.seed`.
pub fn generate(params: &ScenarioParams) -> Result<Scenario> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let normal = Normal::new(0.0, params.noise_scale)
        .map_err(|e| BairError::param("noise_scale", e.to_string()))?;
    let layout = params.layout();
    let gt_visual_index = rng.random_range(0..params.n_visual);

    let mut clean = None;
    for _ in 0..MAX_REDRAWS {
        let mut logits: Vec<f64> = (0..layout.sequence_len)
            .map(|_| normal.sample(&mut rng))
            .collect();
        logits[layout.visual.start + gt_visual_index] += params.visual_spike_strength;
        let visual = &logits[layout.visual.range()];
        // the gated block must still single out the evidence token
        let gated = crate::vsmr::standardize_and_gate(visual)?;
        if unique_argmax(visual, gt_visual_index)
            && unique_argmax(&gated.values, gt_visual_index)
        {
            clean = Some(logits);
            break;
        }
    }
    let clean = clean.ok_or_else(|| {
        BairError::param(
            "visual_spike_strength",
            "spike never dominated the noise; raise the strength or lower noise_scale",
        )
    })?;

    let mut corrupted = clean.clone();
    for x in &mut corrupted[layout.visual.range()] {
        *x -= params.suppression_delta;
    }
    let w = spike_window(params.n_text);
    let text = layout.text;
    let (head, tail) = match params.boundary_side {
        BoundarySide::Head => (true, false),
        BoundarySide::Tail => (false, true),
        BoundarySide::Both => (true, true),
    };
    if head {
        for x in &mut corrupted[text.start..text.start + w] {
            *x += params.boundary_spike_strength;
        }
    }
    if tail {
        for x in &mut corrupted[text.end() - w..text.end()] {
            *x += params.boundary_spike_strength;
        }
    }

    let id = format!("scenario-{:016x}", params.seed);
    Ok(Scenario {
        clean: BottleneckVector::new(clean, layout.clone(), 0, 0, id.clone())?,
        corrupted: BottleneckVector::new(corrupted, layout, 0, 0, id)?,
        gt_visual_index,
        gt_text_segment: params.gt_segment,
        params: params.clone(),
    })
}

/// Decision rule standing in for the model's first generated token.
pub fn toy_answer(vec: &BottleneckVector, scenario: &Scenario, threshold: f64) -> Result<ToyAnswer> {
    if vec.layout != scenario.clean.layout {
        return Err(BairError::param("vec", "row layout differs from the scenario layout"));
    }
    let m = measure(vec)?;
    if m.mass >= threshold && argmax(vec.visual_logits()) == scenario.gt_visual_index {
        return Ok(ToyAnswer::Correct);
    }
    let text = vec.text_logits();
    let fifth = segment_of(argmax(text), text.len(), SEGMENTS);
    Ok(if fifth == scenario.gt_text_segment {
        ToyAnswer::Correct
    } else if fifth == 1 || fifth == SEGMENTS {
        ToyAnswer::BoundaryDistractor
    } else {
        ToyAnswer::Other
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub n: usize,
    pub seed: u64,
    pub template: ScenarioParams,
    pub bair: BairConfig,
    pub threshold: f64,
    /// Spike strength is drawn from `[1 - j, 1 + j]` times the template value.
    pub strength_jitter: f64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            n: 100,
            seed: 0,
            template: ScenarioParams::default(),
            bair: BairConfig::default(),
            threshold: DEFAULT_DECISION_THRESHOLD,
            strength_jitter: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteCase {
    pub scenario: Scenario,
    pub calibrated: BottleneckVector,
    pub diagnostics: HeadDiagnostics,
    pub clean_mass: f64,
    pub answers: [ToyAnswer; 3],
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SuiteOutput {
    pub cases: Vec<SuiteCase>,
    pub records: Vec<EvalRecord>,
}

/// Generates `n` scenarios with uniform evidence segments and scores the
/// clean, corrupted and calibrated rows with [`toy_answer`].
pub fn run_suite(cfg: &SuiteConfig) -> Result<SuiteOutput> {
    cfg.template.validate()?;
    cfg.bair.validate()?;
    if !(0.0..1.0).contains(&cfg.strength_jitter) {
        return Err(BairError::param("strength_jitter", "must lie in [0, 1)"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = SuiteOutput::default();
    for i in 0..cfg.n {
        let seed = rng.next_u64();
        let gt_segment = rng.random_range(1..=SEGMENTS);
        let jitter = if cfg.strength_jitter > 0.0 {
            rng.random_range(1.0 - cfg.strength_jitter..1.0 + cfg.strength_jitter)
        } else {
            1.0
        };
        let params = ScenarioParams {
            seed,
            gt_segment,
            visual_spike_strength: cfg.template.visual_spike_strength * jitter,
            ..cfg.template.clone()
        };
        let mut scenario = generate(&params)?;
        let id = format!("synth-{i:05}");
        scenario.clean.sample_id = id.clone();
        scenario.corrupted.sample_id = id.clone();

        let targets = extract_targets(std::slice::from_ref(&scenario.clean))?;
        let (calibrated, diagnostics) = calibrate_head(&scenario.corrupted, &targets, &cfg.bair)?;
        let answers = [
            toy_answer(&scenario.clean, &scenario, cfg.threshold)?,
            toy_answer(&scenario.corrupted, &scenario, cfg.threshold)?,
            toy_answer(&calibrated, &scenario, cfg.threshold)?,
        ];
        out.records.push(EvalRecord::new(
            id,
            answers[0].score(),
            answers[1].score(),
            answers[2].score(),
        ));
        let clean_mass = measure(&scenario.clean)?.mass;
        out.cases.push(SuiteCase {
            scenario,
            calibrated,
            diagnostics,
            clean_mass,
            answers,
        });
    }
    Ok(out)
}

/// Synthetic end-to-end run: suite, metrics and the positional breakdown.
#[derive(Clone, Debug, PartialEq)]
pub struct E2eReport {
    pub config: SuiteConfig,
    pub evaluation: EvaluationReport,
    /// RAG-condition accuracy per evidence segment.
    pub rag_by_segment: Vec<SegmentStat>,
    pub intervention_by_segment: Vec<SegmentStat>,
    /// Recorrupted samples whose clean row cleared the decision threshold.
    pub curable: usize,
    pub cured: usize,
    pub max_iterations: usize,
    pub median_iterations: f64,
}

impl E2eReport {
    pub fn cure_rate(&self) -> Option<f64> {
        (self.curable > 0).then(|| self.cured as f64 / self.curable as f64)
    }
}

pub fn run_e2e(cfg: &SuiteConfig) -> Result<E2eReport> {
    let suite = run_suite(cfg)?;
    if suite.records.is_empty() {
        return Err(BairError::EmptyInput("e2e needs n >= 1"));
    }
    let evaluation = evaluate(&suite.records, DEFAULT_THRESHOLD)?;
    let by_segment = |m: Method| -> Result<Vec<SegmentStat>> {
        let samples: Vec<(SegmentAssignment, f64)> = suite
            .cases
            .iter()
            .zip(&suite.records)
            .map(|(c, r)| {
                (
                    SegmentAssignment::unique(c.scenario.gt_text_segment),
                    r.score(m).unwrap_or(0.0),
                )
            })
            .collect();
        segment_accuracy(&samples, SEGMENTS, DEFAULT_RESAMPLES, cfg.seed)
    };

    let recorrupted_curable: Vec<&SuiteCase> = suite
        .cases
        .iter()
        .filter(|c| c.answers[0] == ToyAnswer::Correct && c.answers[1] != ToyAnswer::Correct)
        .filter(|c| c.clean_mass >= cfg.threshold)
        .collect();
    let cured = recorrupted_curable
        .iter()
        .filter(|c| c.answers[2] == ToyAnswer::Correct)
        .count();

    let mut iters: Vec<usize> = suite
        .cases
        .iter()
        .filter_map(|c| c.diagnostics.temperature.map(|t| t.iterations))
        .collect();
    iters.sort_unstable();
    let median_iterations = match iters.len() {
        0 => 0.0,
        n if n % 2 == 1 => iters[n / 2] as f64,
        n => (iters[n / 2 - 1] + iters[n / 2]) as f64 / 2.0,
    };

    Ok(E2eReport {
        config: cfg.clone(),
        evaluation,
        rag_by_segment: by_segment(Method::Rag)?,
        intervention_by_segment: by_segment(Method::Intervention)?,
        curable: recorrupted_curable.len(),
        cured,
        max_iterations: iters.last().copied().unwrap_or(0),
        median_iterations,
    })
}
