//! Alignment between reference and execution sequences, and the hardness
//! reward derived from it.
//!
//! The recall metric asks, for each reference action, whether *any*
//! execution action is a semantic match under the reference action's
//! original pre-state; precision is the same construction with the roles of
//! the two sequences swapped. Hardness maps alignment inversely:
//! `min((recall + epsilon)^(-alpha), h_max)`, so poorly aligned regions earn
//! large rewards.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{normalize_text, ActionKind, EnvironmentGraph, StateId, UiAction, UiState};

/// The sub-trajectory selected from exploration; behavioral ground truth.
/// `steps` pair each action with its resulting state; `start_state` is the
/// state preceding the first step.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSequence {
    pub steps: Vec<(UiAction, StateId)>,
    pub start_state: StateId,
    pub source_intent: Option<String>,
}

impl ReferenceSequence {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// State in which step `i` was originally executed.
    pub fn pre_state(&self, i: usize) -> &StateId {
        if i == 0 {
            &self.start_state
        } else {
            &self.steps[i - 1].1
        }
    }

    /// `(action, state the action was executed in)` pairs.
    pub fn executed_steps(&self) -> Vec<(UiAction, StateId)> {
        self.steps
            .iter()
            .enumerate()
            .map(|(i, (a, _))| (a.clone(), self.pre_state(i).clone()))
            .collect()
    }
}

/// The trace obtained by replaying an instruction from the reference's
/// start state. `completed` is true when replay ran to the end of the
/// instruction without an invalid-action error; skipped (masked or
/// unresolvable) steps leave gaps but do not fail the replay.
#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionSequence {
    pub steps: Vec<(UiAction, StateId)>,
    pub start_state: StateId,
    pub completed: bool,
}

impl ExecutionSequence {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn pre_state(&self, i: usize) -> &StateId {
        if i == 0 {
            &self.start_state
        } else {
            &self.steps[i - 1].1
        }
    }

    pub fn executed_steps(&self) -> Vec<(UiAction, StateId)> {
        self.steps
            .iter()
            .enumerate()
            .map(|(i, (a, _))| (a.clone(), self.pre_state(i).clone()))
            .collect()
    }
}

/// Result of the alignment computation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlignmentReport {
    pub recall: f64,
    pub precision: f64,
    pub matched_reference_indices: BTreeSet<usize>,
    pub matched_execution_indices: BTreeSet<usize>,
}

/// Whether executing `b` is semantically equivalent to `a` in `a`'s original
/// pre-state `s`: kinds equal, targets resolving to the same element of `s`
/// (identical id, or equal normalized non-empty labels among visible
/// elements), normalized typed text equal, directions equal.
pub fn match_action(a: &UiAction, b: &UiAction, s: &UiState) -> bool {
    if a.kind != b.kind {
        return false;
    }
    match (&a.target, &b.target) {
        (None, None) => {}
        (Some(ta), Some(tb)) => {
            if ta != tb && !same_element_by_label(ta, tb, s) {
                return false;
            }
        }
        _ => return false,
    }
    if a.kind == ActionKind::Type {
        let ta = a.text.as_deref().map(normalize_text);
        let tb = b.text.as_deref().map(normalize_text);
        if ta != tb {
            return false;
        }
    }
    if matches!(a.kind, ActionKind::Scroll | ActionKind::Swipe) && a.direction != b.direction {
        return false;
    }
    true
}

fn same_element_by_label(ta: &str, tb: &str, s: &UiState) -> bool {
    let (Some(ea), Some(eb)) = (s.element(ta), s.element(tb)) else {
        return false;
    };
    if !ea.visible || !eb.visible {
        return false;
    }
    let la = normalize_text(&ea.label);
    !la.is_empty() && la == normalize_text(&eb.label)
}

/// Action-level reconstruction recall of `execution` against `reference`,
/// plus the dual precision. Existence semantics: one execution action may
/// witness several reference actions, and duplicates count per occurrence.
pub fn recall(
    env: &EnvironmentGraph,
    reference: &ReferenceSequence,
    execution: &ExecutionSequence,
) -> Result<AlignmentReport, AlignmentError> {
    if reference.is_empty() {
        return Err(AlignmentError::EmptyReference);
    }
    let mut matched_reference = BTreeSet::new();
    let mut matched_execution = BTreeSet::new();
    for (i, (a, _)) in reference.steps.iter().enumerate() {
        let pre = reference.pre_state(i);
        let state = env
            .state(pre)
            .ok_or_else(|| AlignmentError::UnknownState(pre.clone()))?;
        for (j, (b, _)) in execution.steps.iter().enumerate() {
            if match_action(a, b, state) {
                matched_reference.insert(i);
                matched_execution.insert(j);
            }
        }
    }
    let recall = matched_reference.len() as f64 / reference.len() as f64;
    let precision = if execution.is_empty() {
        1.0 // by convention: nothing executed that shouldn't have been
    } else {
        matched_execution.len() as f64 / execution.len() as f64
    };
    Ok(AlignmentReport {
        recall,
        precision,
        matched_reference_indices: matched_reference,
        matched_execution_indices: matched_execution,
    })
}

/// Run parameters shared across the pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardnessConfig {
    /// Offset keeping the hardness mapping finite at zero recall.
    pub epsilon: f64,
    /// Exponent shaping the hardness curve.
    pub alpha: f64,
    /// Upper clip for hardness rewards.
    pub h_max: f64,
    /// Alignment acceptance threshold.
    pub r_min: f64,
    /// Refinement budget per iteration.
    pub f_max: u32,
    /// UCB exploration constant.
    pub c_ucb: f64,
    /// Rollout depth limit.
    pub t_max: usize,
    /// Search iterations per run.
    pub iterations: u64,
    /// Master seed for the run.
    pub seed: u64,
}

impl Default for HardnessConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.01,
            alpha: 1.0,
            h_max: 100.0,
            r_min: 0.7,
            f_max: 3,
            c_ucb: 1.4,
            t_max: 8,
            iterations: 100,
            seed: 0,
        }
    }
}

impl HardnessConfig {
    // Negated comparisons are load-bearing: they reject NaN values, which
    // `x <= 0.0` would let through.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), ConfigError> {
        fn bad(field: &'static str, reason: &str) -> ConfigError {
            ConfigError {
                field,
                reason: reason.to_string(),
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(bad("epsilon", "must be > 0"));
        }
        if !(self.alpha > 0.0) {
            return Err(bad("alpha", "must be > 0"));
        }
        if !(self.h_max > 0.0) {
            return Err(bad("h_max", "must be > 0"));
        }
        if !(self.r_min > 0.0 && self.r_min <= 1.0) {
            return Err(bad("r_min", "must be in (0, 1]"));
        }
        if self.f_max == 0 {
            return Err(bad("f_max", "must be a positive integer"));
        }
        if !(self.c_ucb >= 0.0) {
            return Err(bad("c_ucb", "must be >= 0"));
        }
        if self.t_max == 0 {
            return Err(bad("t_max", "must be a positive integer"));
        }
        if self.iterations == 0 {
            return Err(bad("iterations", "must be a positive integer"));
        }
        Ok(())
    }
}

/// Invalid run configuration.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid config: {field} {reason}")]
pub struct ConfigError {
    pub field: &'static str,
    pub reason: String,
}

/// Hardness reward: `min((r_alignment + epsilon)^(-alpha), h_max)`, clipped
/// into `[0, h_max]`. Strictly decreasing in `r_alignment` while unclipped.
pub fn hardness(r_alignment: f64, cfg: &HardnessConfig) -> f64 {
    (r_alignment + cfg.epsilon)
        .powf(-cfg.alpha)
        .clamp(0.0, cfg.h_max)
}

/// One cell of the hardness parameter sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepCell {
    pub epsilon: f64,
    pub alpha: f64,
    pub r_alignment: f64,
    pub hardness: f64,
}

/// Hardness landscape over a grid of `(epsilon, alpha)` pairs and alignment
/// values, clipped at `h_max`.
pub fn sweep_hardness(grid: &[(f64, f64)], r_values: &[f64], h_max: f64) -> Vec<SweepCell> {
    let mut cells = Vec::with_capacity(grid.len() * r_values.len());
    for &(epsilon, alpha) in grid {
        for &r in r_values {
            let cfg = HardnessConfig {
                epsilon,
                alpha,
                h_max,
                ..HardnessConfig::default()
            };
            cells.push(SweepCell {
                epsilon,
                alpha,
                r_alignment: r,
                hardness: hardness(r, &cfg),
            });
        }
    }
    cells
}

/// The default sweep grid: `{0.01, 0.10} x {0.5, 1.0, 2.0}`.
pub const DEFAULT_SWEEP_GRID: [(f64, f64); 6] = [
    (0.01, 0.5),
    (0.01, 1.0),
    (0.01, 2.0),
    (0.10, 0.5),
    (0.10, 1.0),
    (0.10, 2.0),
];

/// The default alignment values swept.
pub const DEFAULT_SWEEP_R_VALUES: [f64; 3] = [0.0, 0.5, 1.0];

/// Alignment metric failures.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum AlignmentError {
    #[error("recall is undefined for an empty reference sequence")]
    EmptyReference,
    #[error("sequence references unknown state `{0}`")]
    UnknownState(StateId),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::load_environment;

    /// One screen with a duplicated visible label ("Save" on e1 and e2), a
    /// text field and some unique controls; enough surface for the matcher.
    fn fixture() -> EnvironmentGraph {
        let doc = r#"{
          "root_state": "s0",
          "states": [
            { "id": "s0", "app": "Demo", "elements": [
               { "id": "e1", "role": "button", "label": "Save" },
               { "id": "e2", "role": "button", "label": "save " },
               { "id": "e3", "role": "text-field", "label": "Name" },
               { "id": "e4", "role": "button", "label": "Cancel" },
               { "id": "e5", "role": "button", "label": "Hidden", "visible": false },
               { "id": "e6", "role": "button", "label": "hidden" } ] }
          ],
          "transitions": []
        }"#;
        load_environment(doc.as_bytes()).unwrap()
    }

    fn state(env: &EnvironmentGraph) -> &UiState {
        env.state("s0").unwrap()
    }

    fn refseq(steps: Vec<(UiAction, StateId)>) -> ReferenceSequence {
        ReferenceSequence {
            steps,
            start_state: "s0".into(),
            source_intent: None,
        }
    }

    fn exeseq(steps: Vec<(UiAction, StateId)>) -> ExecutionSequence {
        ExecutionSequence {
            steps,
            start_state: "s0".into(),
            completed: true,
        }
    }

    #[test]
    fn identical_actions_match() {
        let env = fixture();
        assert!(match_action(
            &UiAction::tap("e1"),
            &UiAction::tap("e1"),
            state(&env)
        ));
    }

    #[test]
    fn shared_visible_label_matches() {
        let env = fixture();
        assert!(match_action(
            &UiAction::tap("e1"),
            &UiAction::tap("e2"),
            state(&env)
        ));
        // An invisible twin does not resolve by label.
        assert!(!match_action(
            &UiAction::tap("e5"),
            &UiAction::tap("e6"),
            state(&env)
        ));
        assert!(!match_action(
            &UiAction::tap("e1"),
            &UiAction::tap("e4"),
            state(&env)
        ));
    }

    #[test]
    fn typed_text_is_normalized() {
        let env = fixture();
        assert!(match_action(
            &UiAction::type_text("e3", "Alice"),
            &UiAction::type_text("e3", "alice "),
            state(&env)
        ));
        assert!(!match_action(
            &UiAction::type_text("e3", "Alice"),
            &UiAction::type_text("e3", "Bob"),
            state(&env)
        ));
    }

    #[test]
    fn directions_must_agree() {
        let env = fixture();
        use crate::env::Direction;
        assert!(match_action(
            &UiAction::scroll(Direction::Down),
            &UiAction::scroll(Direction::Down),
            state(&env)
        ));
        assert!(!match_action(
            &UiAction::scroll(Direction::Down),
            &UiAction::scroll(Direction::Up),
            state(&env)
        ));
    }

    #[test]
    fn identical_sequences_score_one() {
        let env = fixture();
        let steps = vec![
            (UiAction::tap("e1"), "s0".to_string()),
            (UiAction::back(), "s0".to_string()),
        ];
        let report = recall(&env, &refseq(steps.clone()), &exeseq(steps)).unwrap();
        assert_eq!(report.recall, 1.0);
        assert_eq!(report.precision, 1.0);
    }

    #[test]
    fn empty_execution_scores_zero_recall() {
        let env = fixture();
        let steps = vec![
            (UiAction::tap("e1"), "s0".to_string()),
            (UiAction::tap("e4"), "s0".to_string()),
            (UiAction::back(), "s0".to_string()),
        ];
        let report = recall(&env, &refseq(steps), &exeseq(vec![])).unwrap();
        assert_eq!(report.recall, 0.0);
        assert_eq!(report.precision, 1.0);
    }

    #[test]
    fn empty_reference_is_an_error() {
        let env = fixture();
        assert_eq!(
            recall(&env, &refseq(vec![]), &exeseq(vec![])),
            Err(AlignmentError::EmptyReference)
        );
    }

    /// A = [tap e1, type(e3, "x"), back], B = [tap e1, back, back]:
    /// reference matches on indices {0, 2} -> recall 2/3; every execution
    /// action matches something -> precision 3/3.
    #[test]
    fn existence_semantics_enumerated_by_hand() {
        let env = fixture();
        let a = refseq(vec![
            (UiAction::tap("e1"), "s0".to_string()),
            (UiAction::type_text("e3", "x"), "s0".to_string()),
            (UiAction::back(), "s0".to_string()),
        ]);
        let b = exeseq(vec![
            (UiAction::tap("e1"), "s0".to_string()),
            (UiAction::back(), "s0".to_string()),
            (UiAction::back(), "s0".to_string()),
        ]);
        let report = recall(&env, &a, &b).unwrap();
        assert_eq!(report.recall, 2.0 / 3.0);
        assert_eq!(report.precision, 1.0);
        assert_eq!(
            report.matched_reference_indices,
            BTreeSet::from([0usize, 2])
        );
        assert_eq!(
            report.matched_execution_indices,
            BTreeSet::from([0usize, 1, 2])
        );
    }

    #[test]
    fn hardness_matches_direct_evaluation() {
        let cfg = HardnessConfig::default();
        assert_eq!(hardness(0.0, &cfg), 100.0);
        assert!((hardness(1.0, &cfg) - 1.0 / 1.01).abs() < 1e-15);
        let cfg2 = HardnessConfig {
            epsilon: 0.1,
            alpha: 2.0,
            ..HardnessConfig::default()
        };
        assert!((hardness(0.5, &cfg2) - 1.0 / 0.36).abs() < 1e-12);
        let cfg3 = HardnessConfig {
            epsilon: 0.01,
            alpha: 0.5,
            ..HardnessConfig::default()
        };
        assert!((hardness(0.0, &cfg3) - 10.0).abs() < 1e-12);
    }

    #[test]
    fn hardness_is_anti_monotone() {
        let cfg = HardnessConfig::default();
        let mut prev = f64::INFINITY;
        for i in 0..=100 {
            let r = i as f64 / 100.0;
            let h = hardness(r, &cfg);
            assert!(h <= prev, "hardness must not increase with recall");
            assert!(h > 0.0 && h <= cfg.h_max);
            prev = h;
        }
    }

    #[test]
    fn default_sweep_has_eighteen_cells() {
        let cells = sweep_hardness(&DEFAULT_SWEEP_GRID, &DEFAULT_SWEEP_R_VALUES, 100.0);
        assert_eq!(cells.len(), 18);
        let cell = cells
            .iter()
            .find(|c| c.epsilon == 0.01 && c.alpha == 1.0 && c.r_alignment == 1.0)
            .unwrap();
        assert!((cell.hardness - 1.0 / 1.01).abs() < 1e-15);
        let clipped = cells
            .iter()
            .find(|c| c.epsilon == 0.01 && c.alpha == 2.0 && c.r_alignment == 0.0)
            .unwrap();
        assert_eq!(clipped.hardness, 100.0);
    }

    #[test]
    fn config_validation_rejects_bad_fields() {
        let mut cfg = HardnessConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.iterations = 0;
        assert!(cfg.validate().is_err());
        cfg = HardnessConfig {
            epsilon: 0.0,
            ..HardnessConfig::default()
        };
        assert!(cfg.validate().is_err());
        cfg = HardnessConfig {
            r_min: 1.5,
            ..HardnessConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
