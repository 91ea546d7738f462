//! The instruction lifecycle contract: sub-trajectory selection, instruction
//! synthesis, replay execution, and refinement.
//!
//! Two implementations exist. [`ScriptedOracle`] is deterministic and drives
//! all testing: it models misalignment as masked detail slots and refinement
//! as slot restoration. [`HttpOracle`] forwards each operation to a remote
//! endpoint and carries the prompt templates shipped under `prompts/`.

mod http;
mod scripted;

pub use http::HttpOracle;
pub use scripted::{ScriptedOracle, ScriptedOracleConfig};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alignment::{AlignmentError, ExecutionSequence, ReferenceSequence};
use crate::env::{ActionKind, Direction, EnvironmentGraph, Path, StateId, StepError, UiState};

/// A detail slot of an instruction step; masked slots render as generic
/// phrases and cannot be executed until a refinement round restores them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slot<T> {
    pub value: T,
    pub masked: bool,
}

impl<T> Slot<T> {
    pub fn new(value: T) -> Self {
        Self {
            value,
            masked: false,
        }
    }
}

/// Addressable slot positions within a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum SlotField {
    Target,
    Text,
    Direction,
}

/// One step of a structured instruction: the action kind plus its detail
/// slots (target label, typed text, direction), each maskable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDescriptor {
    pub kind: ActionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<Slot<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<Slot<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<Slot<Direction>>,
}

impl StepDescriptor {
    /// Present slots, in the stable order target, text, direction.
    pub fn present_fields(&self) -> Vec<SlotField> {
        let mut out = Vec::new();
        if self.target.is_some() {
            out.push(SlotField::Target);
        }
        if self.text.is_some() {
            out.push(SlotField::Text);
        }
        if self.direction.is_some() {
            out.push(SlotField::Direction);
        }
        out
    }

    pub fn is_masked(&self, field: SlotField) -> bool {
        match field {
            SlotField::Target => self.target.as_ref().is_some_and(|s| s.masked),
            SlotField::Text => self.text.as_ref().is_some_and(|s| s.masked),
            SlotField::Direction => self.direction.as_ref().is_some_and(|s| s.masked),
        }
    }

    pub fn set_masked(&mut self, field: SlotField, masked: bool) {
        match field {
            SlotField::Target => {
                if let Some(s) = self.target.as_mut() {
                    s.masked = masked;
                }
            }
            SlotField::Text => {
                if let Some(s) = self.text.as_mut() {
                    s.masked = masked;
                }
            }
            SlotField::Direction => {
                if let Some(s) = self.direction.as_mut() {
                    s.masked = masked;
                }
            }
        }
    }

    pub fn any_masked(&self) -> bool {
        self.present_fields().iter().any(|&f| self.is_masked(f))
    }

    pub fn masked_count(&self) -> usize {
        self.present_fields()
            .iter()
            .filter(|&&f| self.is_masked(f))
            .count()
    }
}

/// A synthesized natural-language goal with its structured step skeleton
/// and revision history through the refine loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instruction {
    pub text: String,
    pub structured_steps: Vec<StepDescriptor>,
    pub revision: u32,
    pub provenance: String,
}

impl Instruction {
    /// Masked slot addresses in step order.
    pub fn masked_slots(&self) -> Vec<(usize, SlotField)> {
        let mut out = Vec::new();
        for (i, step) in self.structured_steps.iter().enumerate() {
            for field in step.present_fields() {
                if step.is_masked(field) {
                    out.push((i, field));
                }
            }
        }
        out
    }

    pub fn masked_slot_count(&self) -> usize {
        self.masked_slots().len()
    }
}

/// Result of a refinement round. `exhausted` signals that nothing was left
/// to repair; the engine keeps looping until the refinement budget runs out.
#[derive(Debug, Clone, PartialEq)]
pub struct Refinement {
    pub instruction: Instruction,
    pub exhausted: bool,
}

/// The pluggable instruction lifecycle.
pub trait Oracle {
    /// Extract a semantically coherent sub-trajectory from `path` to serve
    /// as the reference sequence.
    fn select_subsequence(
        &self,
        path: &Path,
        env: &EnvironmentGraph,
    ) -> Result<ReferenceSequence, OracleError>;

    /// Synthesize a provisional instruction describing `reference`.
    fn synthesize_instruction(
        &self,
        reference: &ReferenceSequence,
        env: &EnvironmentGraph,
    ) -> Result<Instruction, OracleError>;

    /// Replay `instruction` from `start`, producing an execution sequence.
    fn execute_instruction(
        &self,
        instruction: &Instruction,
        start: &str,
        env: &EnvironmentGraph,
    ) -> Result<ExecutionSequence, OracleError>;

    /// Diagnose misalignment between `reference` and `execution` and refine
    /// the instruction; increments the revision by exactly one.
    fn refine_instruction(
        &self,
        instruction: &Instruction,
        reference: &ReferenceSequence,
        execution: &ExecutionSequence,
        env: &EnvironmentGraph,
    ) -> Result<Refinement, OracleError>;

    /// Short identifier recorded as instruction provenance.
    fn name(&self) -> &str;
}

/// Render the instruction text from its structured steps. Masked slots
/// render as generic phrases ("an element", "some text").
pub fn render_text(app: &str, steps: &[StepDescriptor]) -> String {
    let clauses: Vec<String> = steps.iter().map(render_clause).collect();
    format!("In {app}: {}.", clauses.join("; "))
}

fn render_clause(step: &StepDescriptor) -> String {
    let target = step.target.as_ref().map(|s| {
        if s.masked {
            "an element".to_string()
        } else {
            format!("'{}'", s.value)
        }
    });
    match step.kind {
        ActionKind::Tap => format!("tap {}", target.unwrap_or_else(|| "an element".into())),
        ActionKind::LongPress => {
            format!(
                "long-press {}",
                target.unwrap_or_else(|| "an element".into())
            )
        }
        ActionKind::Type => {
            let text = match &step.text {
                Some(s) if !s.masked => format!("'{}'", s.value),
                _ => "some text".to_string(),
            };
            format!(
                "type {text} into {}",
                target.unwrap_or_else(|| "an element".into())
            )
        }
        ActionKind::Back => "go back".to_string(),
        ActionKind::Scroll | ActionKind::Swipe => {
            let verb = if step.kind == ActionKind::Scroll {
                "scroll"
            } else {
                "swipe"
            };
            let dir = match &step.direction {
                Some(s) if !s.masked => s.value.to_string(),
                _ => "in some direction".to_string(),
            };
            match target {
                Some(t) => format!("{verb} {dir} on {t}"),
                None => format!("{verb} {dir}"),
            }
        }
    }
}

/// Build fully-specified step descriptors mirroring a reference sequence,
/// with target labels resolved from the environment (falling back to the
/// element id when the label is empty).
pub fn descriptors_from_reference(
    reference: &ReferenceSequence,
    env: &EnvironmentGraph,
) -> Result<Vec<StepDescriptor>, OracleError> {
    let mut steps = Vec::with_capacity(reference.len());
    for (i, (action, _)) in reference.steps.iter().enumerate() {
        let pre = reference.pre_state(i);
        let state = env
            .state(pre)
            .ok_or_else(|| OracleError::UnknownState(pre.clone()))?;
        let target = action
            .target
            .as_deref()
            .map(|id| Slot::new(label_or_id(state, id)));
        steps.push(StepDescriptor {
            kind: action.kind,
            target,
            text: action.text.clone().map(Slot::new),
            direction: action.direction.map(Slot::new),
        });
    }
    Ok(steps)
}

fn label_or_id(state: &UiState, id: &str) -> String {
    match state.element(id) {
        Some(el) if !el.label.trim().is_empty() => el.label.trim().to_string(),
        _ => id.to_string(),
    }
}

/// Oracle failures.
#[derive(Debug, Error)]
pub enum OracleError {
    #[error("cannot select a sub-trajectory from an empty path")]
    EmptyPath,
    #[error("cannot synthesize an instruction from an empty reference sequence")]
    EmptyReference,
    #[error("unknown start state `{0}`")]
    UnknownStartState(StateId),
    #[error("sequence references unknown state `{0}`")]
    UnknownState(StateId),
    #[error(transparent)]
    Alignment(#[from] AlignmentError),
    #[error(transparent)]
    Step(#[from] StepError),
    #[error("oracle transport failure: {0}")]
    Transport(String),
    #[error("oracle protocol violation: {0}")]
    Protocol(String),
}

/// Prompt template payload shipped with the HTTP adapter; the template id in
/// the wire protocol selects one of these files.
pub fn prompt_template(id: &str) -> Option<&'static str> {
    match id {
        "instruction_generation" => Some(include_str!("../../prompts/instruction_generation.txt")),
        "action_execution" => Some(include_str!("../../prompts/action_execution.txt")),
        "instruction_refinement" => Some(include_str!("../../prompts/instruction_refinement.txt")),
        _ => None,
    }
}
