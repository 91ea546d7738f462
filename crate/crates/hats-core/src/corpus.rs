//! Persistence and analysis of the synthesized dataset: verified-sample
//! records, JSONL emission with stable key order, distribution statistics,
//! corpus comparison, and the uniform-random-walk baseline comparator.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alignment::{hardness, recall, HardnessConfig, SweepCell};
use crate::engine::{
    build_sample, rollout, EngineError, IterationFailure, OutcomeSummary, RunMode, RunReport,
};
use crate::env::{ActionKind, AmbiguityTag, Direction, EnvironmentGraph, Path, StateId, UiAction};
use crate::oracle::Oracle;

/// One emitted corpus record. `execution_steps` pair each action with the
/// state it was executed in; `hardness` is stored redundantly and
/// re-verified on load against the run config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifiedSample {
    pub sample_id: String,
    #[serde(rename = "instruction")]
    pub instruction_text: String,
    pub revision: u32,
    #[serde(rename = "steps")]
    pub execution_steps: Vec<SampleStep>,
    pub recall: f64,
    pub hardness: f64,
    #[serde(rename = "ambiguity")]
    pub ambiguity_tags: BTreeSet<AmbiguityTag>,
    #[serde(rename = "category")]
    pub category_tag: String,
    #[serde(rename = "environment")]
    pub environment_id: String,
    pub seed: u64,
}

/// One executed step of a sample: the action fields plus the state the
/// action was taken in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleStep {
    pub kind: ActionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<Direction>,
    pub state: StateId,
}

impl SampleStep {
    pub fn new(action: UiAction, state: StateId) -> Self {
        Self {
            kind: action.kind,
            target: action.target,
            text: action.text,
            direction: action.direction,
            state,
        }
    }

    pub fn action(&self) -> UiAction {
        UiAction {
            kind: self.kind,
            target: self.target.clone(),
            text: self.text.clone(),
            direction: self.direction,
        }
    }

    /// `(action, state executed in)` pair, the auditor's convention.
    pub fn executed_pair(&self) -> (UiAction, StateId) {
        (self.action(), self.state.clone())
    }
}

// ---------------------------------------------------------------------------
// Sinks and JSONL I/O
// ---------------------------------------------------------------------------

/// Destination for streamed samples. Writes must be line-atomic when shared
/// across runs.
pub trait SampleSink {
    fn write_sample(&mut self, sample: &VerifiedSample) -> std::io::Result<()>;
}

/// JSONL writer over any `Write`, one record per line, flushed per record so
/// concurrent runs sharing a file never interleave within a line.
#[derive(Debug)]
pub struct JsonlSink<W: Write> {
    inner: W,
    written: u64,
}

impl<W: Write> JsonlSink<W> {
    pub fn new(inner: W) -> Self {
        Self { inner, written: 0 }
    }

    pub fn written(&self) -> u64 {
        self.written
    }

    pub fn into_inner(self) -> W {
        self.inner
    }
}

impl<W: Write> SampleSink for JsonlSink<W> {
    fn write_sample(&mut self, sample: &VerifiedSample) -> std::io::Result<()> {
        let line = serde_json::to_string(sample).map_err(std::io::Error::other)?;
        self.inner.write_all(line.as_bytes())?;
        self.inner.write_all(b"\n")?;
        self.inner.flush()?;
        self.written += 1;
        Ok(())
    }
}

/// In-memory sink for tests and report-only runs.
#[derive(Debug, Default)]
pub struct MemorySink {
    pub samples: Vec<VerifiedSample>,
}

impl SampleSink for MemorySink {
    fn write_sample(&mut self, sample: &VerifiedSample) -> std::io::Result<()> {
        self.samples.push(sample.clone());
        Ok(())
    }
}

impl<S: SampleSink> SampleSink for Arc<Mutex<S>> {
    fn write_sample(&mut self, sample: &VerifiedSample) -> std::io::Result<()> {
        self.lock()
            .map_err(|_| std::io::Error::other("sample sink poisoned"))?
            .write_sample(sample)
    }
}

/// Write samples as JSONL; returns lines written. The error carries the
/// partial-write count.
pub fn write_samples<'a, I, W>(samples: I, destination: W) -> Result<u64, WriteError>
where
    I: IntoIterator<Item = &'a VerifiedSample>,
    W: Write,
{
    let mut sink = JsonlSink::new(destination);
    for sample in samples {
        let written = sink.written();
        sink.write_sample(sample)
            .map_err(|source| WriteError { written, source })?;
    }
    Ok(sink.written())
}

/// Parse a JSONL corpus. Malformed lines are reported with their 1-based
/// line number; records with no steps are rejected by id.
pub fn read_samples<R: BufRead>(source: R) -> Result<Vec<VerifiedSample>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line.map_err(CorpusError::Io)?;
        let sample: VerifiedSample =
            serde_json::from_str(&line).map_err(|e| CorpusError::MalformedLine {
                line: i + 1,
                message: e.to_string(),
            })?;
        if sample.execution_steps.is_empty() {
            return Err(CorpusError::EmptySteps {
                sample_id: sample.sample_id,
            });
        }
        out.push(sample);
    }
    Ok(out)
}

/// Check that every stored hardness equals the hardness mapping applied to
/// the stored recall under `cfg`, within 1e-9.
pub fn verify_hardness(
    samples: &[VerifiedSample],
    cfg: &HardnessConfig,
) -> Result<(), CorpusError> {
    for sample in samples {
        let expected = hardness(sample.recall, cfg);
        if (expected - sample.hardness).abs() > 1e-9 {
            return Err(CorpusError::HardnessMismatch {
                sample_id: sample.sample_id.clone(),
                stored: sample.hardness,
                expected,
            });
        }
    }
    Ok(())
}

/// Parse and integrity-check a corpus against the run config echoed in its
/// sidecar report.
pub fn read_samples_checked<R: BufRead>(
    source: R,
    cfg: &HardnessConfig,
) -> Result<Vec<VerifiedSample>, CorpusError> {
    let samples = read_samples(source)?;
    verify_hardness(&samples, cfg)?;
    Ok(samples)
}

// ---------------------------------------------------------------------------
// Statistics
// ---------------------------------------------------------------------------

/// Distribution statistics of a corpus. Category fractions sum to one;
/// ambiguity ratios do not (a sample may carry several tags).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusStats {
    pub sample_count: u64,
    pub action_kind_histogram: BTreeMap<ActionKind, u64>,
    pub category_histogram: BTreeMap<String, f64>,
    pub ambiguity_ratios: BTreeMap<AmbiguityTag, f64>,
    pub mean_recall: f64,
    pub mean_hardness: f64,
}

impl CorpusStats {
    pub fn ambiguity_ratio(&self, tag: AmbiguityTag) -> f64 {
        self.ambiguity_ratios.get(&tag).copied().unwrap_or(0.0)
    }
}

/// Histograms and ratios over a non-empty sample list.
pub fn compute_stats(samples: &[VerifiedSample]) -> Result<CorpusStats, CorpusError> {
    if samples.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let n = samples.len() as f64;
    let mut kinds: BTreeMap<ActionKind, u64> = BTreeMap::new();
    let mut categories: BTreeMap<String, u64> = BTreeMap::new();
    let mut tags: BTreeMap<AmbiguityTag, u64> = BTreeMap::new();
    let mut recall_sum = 0.0;
    let mut hardness_sum = 0.0;
    for sample in samples {
        for step in &sample.execution_steps {
            *kinds.entry(step.kind).or_default() += 1;
        }
        *categories.entry(sample.category_tag.clone()).or_default() += 1;
        for tag in &sample.ambiguity_tags {
            *tags.entry(*tag).or_default() += 1;
        }
        recall_sum += sample.recall;
        hardness_sum += sample.hardness;
    }
    Ok(CorpusStats {
        sample_count: samples.len() as u64,
        action_kind_histogram: kinds,
        category_histogram: categories
            .into_iter()
            .map(|(k, c)| (k, c as f64 / n))
            .collect(),
        ambiguity_ratios: tags.into_iter().map(|(k, c)| (k, c as f64 / n)).collect(),
        mean_recall: recall_sum / n,
        mean_hardness: hardness_sum / n,
    })
}

/// One row of a corpus comparison. `ratio` is `value_a / value_b`, absent
/// when the denominator is zero; `has_zero` flags rows where either side is
/// exactly zero so log-scale consumers can skip them.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub section: &'static str,
    pub key: String,
    pub value_a: f64,
    pub value_b: f64,
    pub delta: f64,
    pub ratio: Option<f64>,
    pub has_zero: bool,
}

fn comparison_row(section: &'static str, key: String, a: f64, b: f64) -> ComparisonRow {
    ComparisonRow {
        section,
        key,
        value_a: a,
        value_b: b,
        delta: a - b,
        ratio: (b != 0.0).then(|| a / b),
        has_zero: a == 0.0 || b == 0.0,
    }
}

/// Per-tag and per-category deltas and ratios between two corpora, plus
/// summary metric rows.
pub fn compare_corpora(a: &CorpusStats, b: &CorpusStats) -> Vec<ComparisonRow> {
    let mut rows = Vec::new();
    for tag in [
        AmbiguityTag::ContextDependency,
        AmbiguityTag::SequentialDependency,
        AmbiguityTag::VisualAmbiguity,
    ] {
        rows.push(comparison_row(
            "ambiguity",
            tag.to_string(),
            a.ambiguity_ratio(tag),
            b.ambiguity_ratio(tag),
        ));
    }
    let categories: BTreeSet<&String> = a
        .category_histogram
        .keys()
        .chain(b.category_histogram.keys())
        .collect();
    for key in categories {
        rows.push(comparison_row(
            "category",
            key.clone(),
            a.category_histogram.get(key).copied().unwrap_or(0.0),
            b.category_histogram.get(key).copied().unwrap_or(0.0),
        ));
    }
    rows.push(comparison_row(
        "metric",
        "mean_recall".into(),
        a.mean_recall,
        b.mean_recall,
    ));
    rows.push(comparison_row(
        "metric",
        "mean_hardness".into(),
        a.mean_hardness,
        b.mean_hardness,
    ));
    rows.push(comparison_row(
        "metric",
        "sample_count".into(),
        a.sample_count as f64,
        b.sample_count as f64,
    ));
    rows
}

// ---------------------------------------------------------------------------
// CSV / table rendering
// ---------------------------------------------------------------------------

pub fn stats_csv(stats: &CorpusStats) -> String {
    let mut out = String::from("section,key,value\n");
    out.push_str(&format!("meta,sample_count,{}\n", stats.sample_count));
    out.push_str(&format!("metric,mean_recall,{}\n", stats.mean_recall));
    out.push_str(&format!("metric,mean_hardness,{}\n", stats.mean_hardness));
    for (kind, count) in &stats.action_kind_histogram {
        out.push_str(&format!("action_kind,{kind},{count}\n"));
    }
    for (category, fraction) in &stats.category_histogram {
        out.push_str(&format!("category,{},{}\n", csv_escape(category), fraction));
    }
    for (tag, ratio) in &stats.ambiguity_ratios {
        out.push_str(&format!("ambiguity,{tag},{ratio}\n"));
    }
    out
}

pub fn stats_table(stats: &CorpusStats) -> String {
    let mut out = String::new();
    out.push_str(&format!("samples        {}\n", stats.sample_count));
    out.push_str(&format!("mean recall    {:.4}\n", stats.mean_recall));
    out.push_str(&format!("mean hardness  {:.4}\n", stats.mean_hardness));
    out.push_str("action kinds:\n");
    for (kind, count) in &stats.action_kind_histogram {
        out.push_str(&format!("  {kind:<12} {count}\n"));
    }
    out.push_str("categories:\n");
    for (category, fraction) in &stats.category_histogram {
        out.push_str(&format!("  {category:<12} {:.1}%\n", fraction * 100.0));
    }
    out.push_str("ambiguity ratios:\n");
    for (tag, ratio) in &stats.ambiguity_ratios {
        out.push_str(&format!(
            "  {:<22} {:.1}%\n",
            tag.to_string(),
            ratio * 100.0
        ));
    }
    out
}

pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut out = String::from("section,key,a,b,delta,ratio,has_zero\n");
    for row in rows {
        let ratio = row.ratio.map(|r| r.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            row.section,
            csv_escape(&row.key),
            row.value_a,
            row.value_b,
            row.delta,
            ratio,
            row.has_zero
        ));
    }
    out
}

pub fn sweep_csv(cells: &[SweepCell]) -> String {
    let mut out = String::from("epsilon,alpha,r_alignment,hardness\n");
    for cell in cells {
        out.push_str(&format!(
            "{},{},{},{}\n",
            cell.epsilon, cell.alpha, cell.r_alignment, cell.hardness
        ));
    }
    out
}

fn csv_escape(field: &str) -> String {
    if field.contains([',', '"', '\n']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

// ---------------------------------------------------------------------------
// Random-walk baseline
// ---------------------------------------------------------------------------

/// Uniform-random-walk comparator: one rollout per iteration, one-shot
/// instruction synthesis, a single replay, emission gated only on a
/// completed non-empty execution. No tree, no refinement, no
/// backpropagation.
pub fn random_baseline(
    env: &EnvironmentGraph,
    oracle: &dyn Oracle,
    cfg: &HardnessConfig,
    sink: &mut dyn SampleSink,
    run_id: &str,
) -> Result<RunReport, EngineError> {
    cfg.validate()?;
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut outcomes = Vec::new();
    let mut errors = Vec::new();
    let mut emitted = 0u64;

    for iteration in 0..cfg.iterations {
        let result: Result<(OutcomeSummary, Option<VerifiedSample>), EngineError> = (|| {
            let mut path = Path::new(env.root_state().clone());
            rollout(env, &mut path, cfg.t_max, &mut rng)?;
            let reference = oracle.select_subsequence(&path, env)?;
            let instruction = oracle.synthesize_instruction(&reference, env)?;
            let execution =
                oracle.execute_instruction(&instruction, &reference.start_state, env)?;
            let report = recall(env, &reference, &execution)?;
            let aligned = execution.completed && !execution.steps.is_empty();
            let sample = if aligned {
                Some(build_sample(
                    env,
                    cfg,
                    &reference,
                    &instruction,
                    &execution,
                    report.recall,
                    format!("{run_id}-{iteration}"),
                )?)
            } else {
                None
            };
            Ok((
                OutcomeSummary {
                    iteration,
                    aligned,
                    recall: report.recall,
                    hardness: hardness(report.recall, cfg),
                    refine_rounds_used: 0,
                    path_length: path.len(),
                    sample_id: sample.as_ref().map(|s| s.sample_id.clone()),
                },
                sample,
            ))
        })();
        match result {
            Ok((outcome, sample)) => {
                if let Some(sample) = sample {
                    sink.write_sample(&sample)
                        .map_err(|source| EngineError::Sink {
                            written: emitted,
                            source,
                        })?;
                    emitted += 1;
                }
                outcomes.push(outcome);
            }
            Err(e) => errors.push(IterationFailure {
                iteration,
                error: format!("iteration {iteration}: {e}"),
            }),
        }
    }

    Ok(RunReport {
        environment_id: env.environment_id().to_string(),
        run_id: run_id.to_string(),
        mode: RunMode::Baseline,
        config: cfg.clone(),
        emitted_count: emitted,
        outcomes,
        errors,
        duration_ms: started.elapsed().as_millis() as u64,
    })
}

/// Corpus read/analysis failures.
#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("corpus read error: {0}")]
    Io(std::io::Error),
    #[error("malformed corpus line {line}: {message}")]
    MalformedLine { line: usize, message: String },
    #[error("sample `{sample_id}` has no execution steps")]
    EmptySteps { sample_id: String },
    #[error("sample `{sample_id}` stores hardness {stored} but the config implies {expected}")]
    HardnessMismatch {
        sample_id: String,
        stored: f64,
        expected: f64,
    },
    #[error("statistics are undefined for an empty corpus")]
    EmptyCorpus,
}

/// JSONL write failure with the partial-write count.
#[derive(Debug, Error)]
#[error("corpus write failed after {written} line(s): {source}")]
pub struct WriteError {
    pub written: u64,
    #[source]
    pub source: std::io::Error,
}
