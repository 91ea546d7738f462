//! Cross-module pipeline tests: search mode against the one-shot baseline,
//! emission-rate orderings, and the corpus comparison table.

use std::collections::BTreeMap;
use std::path::PathBuf;

use hats_core::alignment::{recall, HardnessConfig, ReferenceSequence};
use hats_core::corpus::{compare_corpora, compute_stats, random_baseline, MemorySink};
use hats_core::engine::{synthesize_corpus, RunMode};
use hats_core::env::{load_environment_file, EnvironmentGraph};
use hats_core::oracle::{Oracle, ScriptedOracle, ScriptedOracleConfig};
use hats_core::tree::ActionTree;

fn load_env(name: &str) -> EnvironmentGraph {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join(format!("../../envs/{name}.json"));
    load_environment_file(path).unwrap()
}

fn oracle_with(omission: usize, seed: u64) -> ScriptedOracle {
    ScriptedOracle::new(ScriptedOracleConfig {
        omission_count: omission,
        repair_per_round: 1,
        seed,
        omission_overrides: BTreeMap::new(),
    })
}

#[test]
fn lossless_modes_share_the_emission_rate() {
    let env = load_env("twosubtree");
    let oracle = ScriptedOracle::lossless();
    let cfg = HardnessConfig {
        iterations: 50,
        t_max: 6,
        seed: 1,
        ..HardnessConfig::default()
    };
    let mut tree = ActionTree::new();
    let mut hats_sink = MemorySink::default();
    let hats = synthesize_corpus(&mut tree, &env, &oracle, &cfg, &mut hats_sink, "h").unwrap();
    let mut base_sink = MemorySink::default();
    let base = random_baseline(&env, &oracle, &cfg, &mut base_sink, "b").unwrap();
    assert_eq!(hats.emitted_count, cfg.iterations);
    assert_eq!(base.emitted_count, cfg.iterations);
}

#[test]
fn baseline_never_emits_more_than_search_mode_under_omissions() {
    let env = load_env("refine_flow");
    for omission in [1usize, 2, 3] {
        let oracle = oracle_with(omission, 5);
        let cfg = HardnessConfig {
            iterations: 120,
            t_max: 5,
            seed: 3,
            ..HardnessConfig::default()
        };
        let mut tree = ActionTree::new();
        let mut hats_sink = MemorySink::default();
        let hats = synthesize_corpus(&mut tree, &env, &oracle, &cfg, &mut hats_sink, "h").unwrap();
        let mut base_sink = MemorySink::default();
        let base = random_baseline(&env, &oracle, &cfg, &mut base_sink, "b").unwrap();
        assert!(
            base.emitted_count <= hats.emitted_count,
            "omission {omission}: baseline emitted {} > search-mode {}",
            base.emitted_count,
            hats.emitted_count
        );
    }
}

/// Multi-round refinement strictly beats one-shot synthesis on mean recall
/// over the run's outcomes, for every omission level.
#[test]
fn multi_round_beats_one_shot_mean_recall() {
    let env = load_env("refine_flow");
    for omission in [1usize, 2, 3] {
        let oracle = oracle_with(omission, 5);
        let cfg = HardnessConfig {
            iterations: 120,
            t_max: 5,
            seed: 3,
            ..HardnessConfig::default()
        };
        let mut tree = ActionTree::new();
        let mut hats_sink = MemorySink::default();
        let hats = synthesize_corpus(&mut tree, &env, &oracle, &cfg, &mut hats_sink, "h").unwrap();
        let mut base_sink = MemorySink::default();
        let base = random_baseline(&env, &oracle, &cfg, &mut base_sink, "b").unwrap();
        let mean = |r: &hats_core::engine::RunReport| {
            r.outcomes.iter().map(|o| o.recall).sum::<f64>() / r.outcomes.len() as f64
        };
        let hats_mean = mean(&hats);
        let base_mean = mean(&base);
        assert!(
            hats_mean > base_mean,
            "omission {omission}: multi-round mean {hats_mean} <= one-shot mean {base_mean}"
        );
    }
}

#[test]
fn baseline_reports_no_refinement_and_zero_revisions() {
    let env = load_env("refine_flow");
    let oracle = oracle_with(1, 5);
    let cfg = HardnessConfig {
        iterations: 60,
        t_max: 5,
        seed: 9,
        ..HardnessConfig::default()
    };
    let mut sink = MemorySink::default();
    let report = random_baseline(&env, &oracle, &cfg, &mut sink, "b").unwrap();
    assert_eq!(report.mode, RunMode::Baseline);
    assert!(report.outcomes.iter().all(|o| o.refine_rounds_used == 0));
    assert!(sink.samples.iter().all(|s| s.revision == 0));
}

/// Comparison table over the planted-ambiguity scenario: tag rows flag the
/// baseline's exact zeros (log-scale consumers skip them), the sample-count
/// row carries a plain ratio.
#[test]
fn comparison_table_against_the_baseline() {
    let env = load_env("ambiguity");
    let mut overrides = BTreeMap::new();
    overrides.insert("iT".to_string(), 2usize);
    let oracle = ScriptedOracle::new(ScriptedOracleConfig {
        omission_count: 0,
        repair_per_round: 1,
        seed: 0,
        omission_overrides: overrides,
    });
    let cfg = HardnessConfig {
        t_max: 6,
        iterations: 300,
        seed: 11,
        ..HardnessConfig::default()
    };
    let mut tree = ActionTree::new();
    let mut hats_sink = MemorySink::default();
    synthesize_corpus(&mut tree, &env, &oracle, &cfg, &mut hats_sink, "h").unwrap();
    let mut base_sink = MemorySink::default();
    random_baseline(&env, &oracle, &cfg, &mut base_sink, "b").unwrap();

    let rows = compare_corpora(
        &compute_stats(&hats_sink.samples).unwrap(),
        &compute_stats(&base_sink.samples).unwrap(),
    );

    let ctx = rows
        .iter()
        .find(|r| r.section == "ambiguity" && r.key == "context_dependency")
        .unwrap();
    assert!((ctx.value_a - 22.0 / 31.0).abs() < 1e-12);
    assert_eq!(ctx.value_b, 0.0);
    assert_eq!(ctx.ratio, None, "no ratio against a zero baseline");
    assert!(ctx.has_zero);

    let count = rows
        .iter()
        .find(|r| r.section == "metric" && r.key == "sample_count")
        .unwrap();
    assert_eq!(count.value_a, 31.0);
    assert_eq!(count.value_b, 142.0);
    assert_eq!(count.ratio, Some(31.0 / 142.0));

    let plain = rows
        .iter()
        .find(|r| r.section == "category" && r.key == "PLAIN")
        .unwrap();
    assert!(
        plain.value_a < plain.value_b,
        "search mode de-emphasizes the easy category"
    );
}

/// A fully masked three-step reference repairs one slot per round: recall
/// climbs strictly and hits 1.0 on round 3 when the budget allows a fourth
/// replay.
#[test]
fn full_repair_trajectory_reaches_one() {
    let env = load_env("refine_flow");
    // First three consecutive transitions as the reference.
    let mut steps = Vec::new();
    for tid in ["t_0_1", "t_1_2", "t_2_3"] {
        let t = env.transition_by_id(tid).unwrap().clone();
        steps.push((t.action, t.to));
    }
    let reference = ReferenceSequence {
        steps,
        start_state: env.root_state().clone(),
        source_intent: None,
    };
    let oracle = oracle_with(3, 1);
    let mut instruction = oracle.synthesize_instruction(&reference, &env).unwrap();
    assert_eq!(instruction.masked_slot_count(), 3);

    let mut recalls = Vec::new();
    for _ in 0..4 {
        let execution = oracle
            .execute_instruction(&instruction, &reference.start_state, &env)
            .unwrap();
        let report = recall(&env, &reference, &execution).unwrap();
        recalls.push(report.recall);
        if report.recall == 1.0 {
            break;
        }
        instruction = oracle
            .refine_instruction(&instruction, &reference, &execution, &env)
            .unwrap()
            .instruction;
    }
    assert_eq!(recalls, vec![0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0]);
    assert_eq!(instruction.revision, 3);
}

/// Masking the middle step of a three-step reference leaves a single gap:
/// the replay executes steps 1 and 3 (step 3 still resolves from the
/// intermediate screen), scoring recall 2/3.
#[test]
fn masked_middle_step_leaves_recoverable_gap() {
    let env = load_env("refine_flow");
    let mut steps = Vec::new();
    for tid in ["t_0_1", "t_1_2", "t_2_3"] {
        let t = env.transition_by_id(tid).unwrap().clone();
        steps.push((t.action, t.to));
    }
    let reference = ReferenceSequence {
        steps,
        start_state: env.root_state().clone(),
        source_intent: None,
    };
    let oracle = ScriptedOracle::lossless();
    let mut instruction = oracle.synthesize_instruction(&reference, &env).unwrap();
    instruction.structured_steps[1].set_masked(hats_core::oracle::SlotField::Target, true);

    let execution = oracle
        .execute_instruction(&instruction, &reference.start_state, &env)
        .unwrap();
    assert!(execution.completed);
    assert_eq!(execution.steps.len(), 2);
    assert_eq!(execution.steps[1].1, "F3", "step 3 jumps ahead from F1");
    let report = recall(&env, &reference, &execution).unwrap();
    assert_eq!(report.recall, 2.0 / 3.0);
    assert_eq!(report.precision, 1.0);
}

/// Three masked slots on the five-step intent align exactly when recall
/// first reaches 4/5, two refinement rounds in.
#[test]
fn refine_loop_aligns_at_the_fourth_fifth() {
    let env = load_env("refine_flow");
    let intent = env.intent("iF").unwrap().clone();
    let mut steps = Vec::new();
    for tid in &intent.transitions {
        let t = env.transition_by_id(tid).unwrap().clone();
        steps.push((t.action, t.to));
    }
    let reference = ReferenceSequence {
        steps,
        start_state: env.root_state().clone(),
        source_intent: Some(intent.id),
    };
    let oracle = oracle_with(3, 17);
    let cfg = HardnessConfig::default();
    let instruction = oracle.synthesize_instruction(&reference, &env).unwrap();
    let result =
        hats_core::engine::refine_loop(&reference, instruction, &oracle, &env, &cfg).unwrap();
    assert!(result.aligned);
    assert_eq!(result.recall, 0.8);
    assert_eq!(result.rounds, 2);
}

/// Five masked slots exhaust the budget: three rounds, never aligned, two
/// masks left on the final (unexecuted) refinement.
#[test]
fn refine_loop_exhausts_budget_with_masks_remaining() {
    let env = load_env("refine_flow");
    let intent = env.intent("iF").unwrap().clone();
    let mut steps = Vec::new();
    for tid in &intent.transitions {
        let t = env.transition_by_id(tid).unwrap().clone();
        steps.push((t.action, t.to));
    }
    let reference = ReferenceSequence {
        steps,
        start_state: env.root_state().clone(),
        source_intent: Some(intent.id),
    };
    let oracle = oracle_with(5, 17);
    let cfg = HardnessConfig::default();
    let instruction = oracle.synthesize_instruction(&reference, &env).unwrap();
    assert_eq!(instruction.masked_slot_count(), 5);
    let result =
        hats_core::engine::refine_loop(&reference, instruction, &oracle, &env, &cfg).unwrap();
    assert!(!result.aligned);
    assert_eq!(result.rounds, 3);
    assert_eq!(result.recall, 0.4, "final executed round had three masks");
    assert_eq!(result.instruction.masked_slot_count(), 2);
}
