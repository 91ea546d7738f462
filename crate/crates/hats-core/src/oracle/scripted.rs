//! Deterministic scripted oracle.
//!
//! Synthesis mirrors the reference sequence into structured steps and masks
//! a seeded draw of detail slots; replay executes whatever is unmasked and
//! resolvable, leaving gaps otherwise; refinement restores masked slots,
//! prioritizing steps the latest alignment report left unmatched. Identical
//! inputs and seed produce bit-identical instructions and executions.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::alignment::{recall, ExecutionSequence, ReferenceSequence};
use crate::env::{ActionKind, EnvironmentGraph, Path, TargetResolution, UiAction, UiState};

use super::{
    descriptors_from_reference, render_text, Instruction, Oracle, OracleError, Refinement,
    SlotField, StepDescriptor,
};

/// Configuration of the scripted oracle.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ScriptedOracleConfig {
    /// Detail slots dropped at synthesis (clamped to the slots available).
    pub omission_count: usize,
    /// Slots restored per refinement round.
    pub repair_per_round: usize,
    /// Seed for the masking draw.
    pub seed: u64,
    /// Per-intent omission counts overriding `omission_count`, keyed by
    /// intent id; lets one environment mix easy and hard regions.
    #[serde(default)]
    pub omission_overrides: BTreeMap<String, usize>,
}

impl Default for ScriptedOracleConfig {
    fn default() -> Self {
        Self {
            omission_count: 0,
            repair_per_round: 1,
            seed: 0,
            omission_overrides: BTreeMap::new(),
        }
    }
}

/// The deterministic oracle used for all testing.
#[derive(Debug, Clone, Default)]
pub struct ScriptedOracle {
    cfg: ScriptedOracleConfig,
}

impl ScriptedOracle {
    pub fn new(cfg: ScriptedOracleConfig) -> Self {
        Self { cfg }
    }

    pub fn lossless() -> Self {
        Self::default()
    }

    pub fn config(&self) -> &ScriptedOracleConfig {
        &self.cfg
    }

    fn omission_for(&self, reference: &ReferenceSequence) -> usize {
        reference
            .source_intent
            .as_deref()
            .and_then(|id| self.cfg.omission_overrides.get(id).copied())
            .unwrap_or(self.cfg.omission_count)
    }

    /// Per-call RNG derived from the oracle seed and the reference content,
    /// so draws do not depend on call order.
    fn call_rng(&self, reference: &ReferenceSequence) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.cfg.seed ^ fingerprint(reference))
    }

    /// Turn a descriptor into a concrete action against `state`, or `None`
    /// when a slot is unresolvable or ambiguous there.
    fn realize(&self, step: &StepDescriptor, state: &UiState) -> Option<UiAction> {
        let target_id = match &step.target {
            None => None,
            Some(slot) => match state.resolve_target(&slot.value) {
                TargetResolution::Unique(el) => Some(el.id.clone()),
                TargetResolution::Ambiguous | TargetResolution::NotFound => return None,
            },
        };
        let action = match step.kind {
            ActionKind::Tap => UiAction::tap(target_id?),
            ActionKind::LongPress => UiAction::long_press(target_id?),
            ActionKind::Type => UiAction::type_text(target_id?, step.text.as_ref()?.value.clone()),
            ActionKind::Back => UiAction::back(),
            ActionKind::Scroll | ActionKind::Swipe => UiAction {
                kind: step.kind,
                target: target_id,
                text: None,
                direction: Some(step.direction.as_ref()?.value),
            },
        };
        Some(action)
    }
}

fn fingerprint(reference: &ReferenceSequence) -> u64 {
    let mut h = Fnv1a::new();
    h.write(reference.start_state.as_bytes());
    h.write(reference.source_intent.as_deref().unwrap_or("").as_bytes());
    for (action, state) in &reference.steps {
        h.write(action.kind.to_string().as_bytes());
        h.write(action.target.as_deref().unwrap_or("").as_bytes());
        h.write(action.text.as_deref().unwrap_or("").as_bytes());
        h.write(
            action
                .direction
                .map(|d| d.to_string())
                .unwrap_or_default()
                .as_bytes(),
        );
        h.write(state.as_bytes());
    }
    h.finish()
}

/// FNV-1a, inlined so fingerprints stay stable across toolchains.
struct Fnv1a(u64);

impl Fnv1a {
    fn new() -> Self {
        Self(0xcbf2_9ce4_8422_2325)
    }

    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(0x100_0000_01b3);
        }
        // Field separator so adjacent fields cannot collide.
        self.0 ^= 0x1f;
        self.0 = self.0.wrapping_mul(0x100_0000_01b3);
    }

    fn finish(&self) -> u64 {
        self.0
    }
}

impl Oracle for ScriptedOracle {
    /// The longest contiguous slice of `path` whose fired transitions form a
    /// prefix (or the whole) of some intent, ties broken by earliest start;
    /// the full path when no intent overlaps.
    fn select_subsequence(
        &self,
        path: &Path,
        env: &EnvironmentGraph,
    ) -> Result<ReferenceSequence, OracleError> {
        if path.is_empty() {
            return Err(OracleError::EmptyPath);
        }
        let fired: Vec<&str> = env
            .fired_transitions(path)?
            .iter()
            .map(|t| t.id.as_str())
            .collect();

        let mut best: Option<(usize, usize, &str)> = None; // (len, start, intent)
        for intent in env.intents() {
            for start in 0..fired.len() {
                let mut len = 0;
                while start + len < fired.len()
                    && len < intent.transitions.len()
                    && fired[start + len] == intent.transitions[len]
                {
                    len += 1;
                }
                if len > 0 && best.is_none_or(|(bl, bs, _)| len > bl || (len == bl && start < bs)) {
                    best = Some((len, start, intent.id.as_str()));
                }
            }
        }

        match best {
            Some((len, start, intent)) => Ok(ReferenceSequence {
                steps: path.steps[start..start + len].to_vec(),
                start_state: path.pre_state(start).clone(),
                source_intent: Some(intent.to_string()),
            }),
            None => Ok(ReferenceSequence {
                steps: path.steps.clone(),
                start_state: path.origin.clone(),
                source_intent: None,
            }),
        }
    }

    fn synthesize_instruction(
        &self,
        reference: &ReferenceSequence,
        env: &EnvironmentGraph,
    ) -> Result<Instruction, OracleError> {
        if reference.is_empty() {
            return Err(OracleError::EmptyReference);
        }
        let mut steps = descriptors_from_reference(reference, env)?;

        let mut slots: Vec<(usize, SlotField)> = Vec::new();
        for (i, step) in steps.iter().enumerate() {
            for field in step.present_fields() {
                slots.push((i, field));
            }
        }
        let to_mask = self.omission_for(reference).min(slots.len());
        let mut rng = self.call_rng(reference);
        for _ in 0..to_mask {
            let k = rng.random_range(0..slots.len());
            let (i, field) = slots.remove(k);
            steps[i].set_masked(field, true);
        }

        let app = env
            .state(&reference.start_state)
            .ok_or_else(|| OracleError::UnknownState(reference.start_state.clone()))?
            .app
            .clone();
        Ok(Instruction {
            text: render_text(&app, &steps),
            structured_steps: steps,
            revision: 0,
            provenance: self.name().to_string(),
        })
    }

    /// Interpret the structured steps in order from `start`. A step with all
    /// needed slots unmasked and resolvable executes; a masked, ambiguous or
    /// unresolvable step is skipped as a gap. `completed` stays true unless
    /// an attempted action fails to apply.
    fn execute_instruction(
        &self,
        instruction: &Instruction,
        start: &str,
        env: &EnvironmentGraph,
    ) -> Result<ExecutionSequence, OracleError> {
        if env.state(start).is_none() {
            return Err(OracleError::UnknownStartState(start.to_string()));
        }
        let mut path = Path::new(start.to_string());
        let mut completed = true;
        for step in &instruction.structured_steps {
            if step.any_masked() {
                continue; // gap: detail withheld by the instruction
            }
            let cur = path.end_state().clone();
            let state = env.state(&cur).expect("walked states exist");
            let Some(action) = self.realize(step, state) else {
                continue; // gap: unresolvable or ambiguous in this state
            };
            match env.apply(&cur, &action, &path) {
                Ok(to) => path.push(action, to),
                Err(_) => completed = false, // attempted but invalid
            }
        }
        Ok(ExecutionSequence {
            steps: path.steps,
            start_state: start.to_string(),
            completed,
        })
    }

    /// Unmask up to `repair_per_round` slots, prioritizing steps the latest
    /// alignment left unmatched (lowest step index first). Signals
    /// exhaustion when no masked slot remains.
    fn refine_instruction(
        &self,
        instruction: &Instruction,
        reference: &ReferenceSequence,
        execution: &ExecutionSequence,
        env: &EnvironmentGraph,
    ) -> Result<Refinement, OracleError> {
        let report = recall(env, reference, execution)?;
        let mut refined = instruction.clone();
        let masked = refined.masked_slots();
        let exhausted = masked.is_empty();

        let (unmatched, matched): (Vec<_>, Vec<_>) = masked
            .into_iter()
            .partition(|(i, _)| !report.matched_reference_indices.contains(i));
        let repairs: Vec<(usize, SlotField)> = unmatched
            .into_iter()
            .chain(matched)
            .take(self.cfg.repair_per_round.max(1))
            .collect();
        for (i, field) in repairs {
            refined.structured_steps[i].set_masked(field, false);
        }

        refined.revision += 1;
        let app = env
            .state(&reference.start_state)
            .ok_or_else(|| OracleError::UnknownState(reference.start_state.clone()))?
            .app
            .clone();
        refined.text = render_text(&app, &refined.structured_steps);
        Ok(Refinement {
            instruction: refined,
            exhausted,
        })
    }

    fn name(&self) -> &str {
        "scripted"
    }
}
