//! Hardness-aware trajectory synthesis for simulated GUI environments.
//!
//! The pipeline explores a finite, deterministic GUI state graph with a
//! Monte Carlo tree search whose reward is *alignment hardness*: synthesized
//! instructions are replayed against the environment, scored with an
//! action-level reconstruction recall, and the inverse of that recall is
//! backpropagated through the tree. Regions where instructions are hard to
//! align attract more search, and only instruction–trajectory pairs that
//! pass the replay–refine loop are emitted to the corpus.
//!
//! Module map:
//! - [`env`] — environment graph: states, elements, transitions, intents,
//!   loading/validation, action application, ambiguity auditing.
//! - [`tree`] — the search tree: per-edge Q/N statistics, UCB selection,
//!   expansion, backpropagation.
//! - [`alignment`] — reference/execution sequences, the recall/precision
//!   metrics, the hardness mapping and its parameter sweep.
//! - [`oracle`] — the instruction lifecycle contract with a deterministic
//!   scripted implementation and an HTTP adapter.
//! - [`engine`] — the per-iteration search loop and corpus synthesis runs.
//! - [`corpus`] — verified samples, JSONL persistence, statistics, the
//!   random-walk baseline comparator.

pub mod alignment;
pub mod corpus;
pub mod engine;
pub mod env;
pub mod oracle;
pub mod tree;

pub use alignment::{
    hardness, match_action, recall, AlignmentReport, ExecutionSequence, HardnessConfig,
    ReferenceSequence,
};
pub use corpus::{compute_stats, random_baseline, CorpusStats, SampleSink, VerifiedSample};
pub use engine::{run_iteration, synthesize_corpus, IterationOutcome, RunReport};
pub use env::{
    load_environment, load_environment_file, ActionKind, AmbiguityTag, Direction, EnvironmentGraph,
    Path, UiAction, UiElement, UiState,
};
pub use oracle::{Instruction, Oracle, ScriptedOracle, ScriptedOracleConfig};
pub use tree::ActionTree;
