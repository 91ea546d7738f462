//! The per-iteration search loop: selection, expansion, rollout, the
//! instruction lifecycle with its replay–refine loop, hardness reward,
//! conditional emission, and backpropagation.
//!
//! Every non-errored iteration backpropagates exactly once — discarded
//! iterations too, since their high hardness is precisely the signal that
//! drives re-exploration. Only tree-policy edges (selection + expansion)
//! receive credit; rollout steps never touch the tree. Errored iterations
//! are recorded in the run report and leave tree statistics untouched.

use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alignment::{
    hardness, recall, AlignmentError, ConfigError, ExecutionSequence, HardnessConfig,
    ReferenceSequence,
};
use crate::corpus::{SampleSink, SampleStep, VerifiedSample};
use crate::env::{AuditError, EnvironmentGraph, Path, StepError};
use crate::oracle::{Instruction, Oracle, OracleError};
use crate::tree::{ActionTree, TreeError};

/// Result of one search iteration.
#[derive(Debug, Clone)]
pub struct IterationOutcome {
    pub iteration_index: u64,
    pub aligned: bool,
    pub recall: f64,
    pub hardness: f64,
    pub refine_rounds_used: u32,
    /// Present iff the iteration aligned.
    pub sample: Option<VerifiedSample>,
    pub path_length: usize,
}

/// Per-iteration summary persisted in the run report (the sample itself
/// lives in the corpus).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeSummary {
    pub iteration: u64,
    pub aligned: bool,
    pub recall: f64,
    pub hardness: f64,
    pub refine_rounds_used: u32,
    pub path_length: usize,
    pub sample_id: Option<String>,
}

/// An iteration that aborted before backpropagation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationFailure {
    pub iteration: u64,
    pub error: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunMode {
    Hdmcts,
    Baseline,
}

/// Summary of a whole run, serialized alongside the corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub environment_id: String,
    pub run_id: String,
    pub mode: RunMode,
    pub config: HardnessConfig,
    pub emitted_count: u64,
    pub outcomes: Vec<OutcomeSummary>,
    pub errors: Vec<IterationFailure>,
    /// Wall clock; excluded from determinism comparisons.
    pub duration_ms: u64,
}

impl RunReport {
    /// Copy with wall-clock fields zeroed, for determinism comparisons.
    pub fn without_wall_clock(&self) -> Self {
        Self {
            duration_ms: 0,
            ..self.clone()
        }
    }
}

/// Extend `path` by uniformly random valid actions until it reaches `t_max`
/// steps or no valid action remains. Rollout steps do not create tree nodes.
pub fn rollout<R: Rng>(
    env: &EnvironmentGraph,
    path: &mut Path,
    t_max: usize,
    rng: &mut R,
) -> Result<(), StepError> {
    while path.len() < t_max {
        let cur = path.end_state().clone();
        let actions = env.valid_actions(&cur, path)?;
        if actions.is_empty() {
            break;
        }
        let action = actions[rng.random_range(0..actions.len())].clone();
        let to = env.apply(&cur, &action, path)?;
        path.push(action, to);
    }
    Ok(())
}

/// Final artifacts of the replay–refine loop.
#[derive(Debug, Clone)]
pub struct RefineLoopResult {
    pub instruction: Instruction,
    pub execution: ExecutionSequence,
    pub recall: f64,
    pub aligned: bool,
    pub rounds: u32,
}

/// Replay–refine until the execution aligns (recall >= r_min and the replay
/// completed) or the refinement budget is spent. The returned recall is the
/// final executed round's; a refinement performed on the last budgeted round
/// is returned unexecuted, mirroring the loop structure.
pub fn refine_loop(
    reference: &ReferenceSequence,
    instruction: Instruction,
    oracle: &dyn Oracle,
    env: &EnvironmentGraph,
    cfg: &HardnessConfig,
) -> Result<RefineLoopResult, EngineError> {
    let mut instruction = instruction;
    let mut rounds = 0u32;
    loop {
        let execution = oracle.execute_instruction(&instruction, &reference.start_state, env)?;
        let report = recall(env, reference, &execution)?;
        if report.recall >= cfg.r_min && execution.completed {
            return Ok(RefineLoopResult {
                instruction,
                execution,
                recall: report.recall,
                aligned: true,
                rounds,
            });
        }
        instruction = oracle
            .refine_instruction(&instruction, reference, &execution, env)?
            .instruction;
        rounds += 1;
        if rounds >= cfg.f_max {
            return Ok(RefineLoopResult {
                instruction,
                execution,
                recall: report.recall,
                aligned: false,
                rounds,
            });
        }
    }
}

/// Assemble the emitted corpus record for an aligned execution.
pub(crate) fn build_sample(
    env: &EnvironmentGraph,
    cfg: &HardnessConfig,
    reference: &ReferenceSequence,
    instruction: &Instruction,
    execution: &ExecutionSequence,
    recall_value: f64,
    sample_id: String,
) -> Result<VerifiedSample, EngineError> {
    let executed = execution.executed_steps();
    let ambiguity_tags = env.audit_ambiguity(&executed)?;
    let category_tag = reference
        .source_intent
        .as_deref()
        .and_then(|id| env.intent(id))
        .map(|i| i.category.clone())
        .or_else(|| {
            env.state(&reference.start_state)
                .map(|s| s.category.clone())
        })
        .unwrap_or_default();
    Ok(VerifiedSample {
        sample_id,
        instruction_text: instruction.text.clone(),
        revision: instruction.revision,
        execution_steps: executed
            .into_iter()
            .map(|(action, state)| SampleStep::new(action, state))
            .collect(),
        recall: recall_value,
        hardness: hardness(recall_value, cfg),
        ambiguity_tags,
        category_tag,
        environment_id: env.environment_id().to_string(),
        seed: cfg.seed,
    })
}

/// One full iteration: UCB descent while fully expanded, one expansion if
/// possible, rollout to the depth limit, instruction lifecycle, hardness
/// reward, conditional emission, and backpropagation along the tree-policy
/// prefix of the path.
pub fn run_iteration(
    tree: &mut ActionTree,
    env: &EnvironmentGraph,
    oracle: &dyn Oracle,
    cfg: &HardnessConfig,
    rng: &mut ChaCha8Rng,
    iteration_index: u64,
    run_id: &str,
) -> Result<IterationOutcome, EngineError> {
    let root = tree.get_or_create_root(env)?;
    let mut path = Path::new(env.root_state().clone());
    let mut node = root;

    // Selection: descend by UCB until a frontier, a dead end, or the depth
    // limit (measured by path length).
    loop {
        let n = tree.node(node);
        if !n.fully_expanded() || n.children.is_empty() || path.len() >= cfg.t_max {
            break;
        }
        let (action, child) = tree.ucb_select(node, cfg.c_ucb)?;
        let to = tree.node(child).state.clone();
        path.push(action, to);
        node = child;
    }

    // Expansion: at most one new node per iteration.
    if !tree.node(node).fully_expanded() && path.len() < cfg.t_max {
        tree.expand(node, env, &mut path)?;
    }
    let tree_policy_len = path.len();

    rollout(env, &mut path, cfg.t_max, rng)?;

    let reference = oracle.select_subsequence(&path, env)?;
    let instruction = oracle.synthesize_instruction(&reference, env)?;
    let refined = refine_loop(&reference, instruction, oracle, env, cfg)?;

    let reward = hardness(refined.recall, cfg);
    let sample = if refined.aligned {
        Some(build_sample(
            env,
            cfg,
            &reference,
            &refined.instruction,
            &refined.execution,
            refined.recall,
            format!("{run_id}-{iteration_index}"),
        )?)
    } else {
        None
    };

    tree.backpropagate(&path.steps[..tree_policy_len], reward)?;

    Ok(IterationOutcome {
        iteration_index,
        aligned: refined.aligned,
        recall: refined.recall,
        hardness: reward,
        refine_rounds_used: refined.rounds,
        sample,
        path_length: path.len(),
    })
}

/// Run `cfg.iterations` search iterations over one tree, streaming each
/// verified sample to `sink` in iteration order.
pub fn synthesize_corpus(
    tree: &mut ActionTree,
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
        match run_iteration(tree, env, oracle, cfg, &mut rng, iteration, run_id) {
            Ok(outcome) => {
                if let Some(sample) = &outcome.sample {
                    sink.write_sample(sample)
                        .map_err(|source| EngineError::Sink {
                            written: emitted,
                            source,
                        })?;
                    emitted += 1;
                }
                outcomes.push(OutcomeSummary {
                    iteration,
                    aligned: outcome.aligned,
                    recall: outcome.recall,
                    hardness: outcome.hardness,
                    refine_rounds_used: outcome.refine_rounds_used,
                    path_length: outcome.path_length,
                    sample_id: outcome.sample.as_ref().map(|s| s.sample_id.clone()),
                });
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
        mode: RunMode::Hdmcts,
        config: cfg.clone(),
        emitted_count: emitted,
        outcomes,
        errors,
        duration_ms: started.elapsed().as_millis() as u64,
    })
}

/// Engine failures; iteration context is attached where they are recorded.
#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("environment step failed: {0}")]
    Env(#[from] StepError),
    #[error("tree operation failed: {0}")]
    Tree(#[from] TreeError),
    #[error("oracle failed: {0}")]
    Oracle(#[from] OracleError),
    #[error("alignment failed: {0}")]
    Alignment(#[from] AlignmentError),
    #[error("ambiguity audit failed: {0}")]
    Audit(#[from] AuditError),
    #[error("sample sink write failed after {written} record(s): {source}")]
    Sink {
        written: u64,
        source: std::io::Error,
    },
}
