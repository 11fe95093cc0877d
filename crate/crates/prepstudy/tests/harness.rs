use prepstudy::harness::{
    ablate, baselines, evaluate, judgments_from_responses, run_protocol, seed_list, simulate, AblationGroup,
    ModelKind, Settings, SynthSettings,
};
use prepstudy::Error;
use prepstudy_core::bayes::FitConfig;
use prepstudy_core::design::{default_terms, DesignSchema, Mode, Standardization};
use prepstudy_core::mlp::MlpConfig;
use prepstudy_core::record::{Answer, Factor, Instruction, ResponseRecord, ResponseTable, Test, Time};
use prepstudy_core::split::{split, SplitSpec};
use prepstudy_core::stats;
use prepstudy_core::synth::{generate, recovery_terms, GridSpec, TruthSpec};

fn quick() -> Settings {
    Settings {
        fit: FitConfig { iterations: 300, ..FitConfig::default() },
        mlp: MlpConfig { max_epochs: 4, ..MlpConfig::default() },
        predict_samples: 50,
        ..Settings::default()
    }
}

fn small_data(students: usize, seed: u64) -> ResponseTable {
    let synth = SynthSettings { students, missingness: 0.02, range: 1.5, marginal: Some(0.64) };
    simulate(Mode::GjtPet, recovery_terms(), &synth, seed).unwrap().table
}

#[test]
fn majority_baseline_is_perfect_on_constant_labels() {
    let recs: Vec<ResponseRecord> =
        small_data(4, 1).into_records().into_iter().map(|r| ResponseRecord { correct: true, ..r }).collect();
    let table = ResponseTable::new(recs).unwrap();
    let s = split(&table, &SplitSpec::standard(1)).unwrap();
    let b = baselines(&s.train, &s.eval, Mode::GjtPet, &quick(), 1).unwrap();
    assert_eq!(b.majority, 1.0);
}

#[test]
fn baselines_match_the_generator_marginal() {
    let table = small_data(30, 2);
    let s = split(&table, &SplitSpec::standard(2)).unwrap();
    let b = baselines(&s.train, &s.eval, Mode::GjtPet, &quick(), 2).unwrap();
    assert!((b.majority - 0.64).abs() <= 0.02, "majority {}", b.majority);
    assert!((b.uniform - 0.5).abs() < 0.05, "uniform {}", b.uniform);
    assert!((b.prior - 0.5).abs() < 0.06, "prior {}", b.prior);
}

#[test]
fn empty_partitions_are_rejected() {
    let table = small_data(3, 3);
    assert!(baselines(&ResponseTable::default(), &table, Mode::GjtPet, &quick(), 0).is_err());
}

#[test]
fn protocol_summary_is_recomputable_from_seeds() {
    let table = small_data(8, 4);
    let seeds = seed_list(10, 3);
    let r = run_protocol(&table, Mode::GjtPet, ModelKind::Blm, &seeds, &quick()).unwrap();
    assert_eq!(r.seeds, seeds);
    assert_eq!(r.accuracies.len(), 3);
    assert_eq!(r.mean, stats::mean(&r.accuracies));
    assert_eq!(r.sd, stats::sample_sd(&r.accuracies));
    let again = run_protocol(&table, Mode::GjtPet, ModelKind::Blm, &seeds, &quick()).unwrap();
    assert_eq!(r, again);
}

#[test]
fn fit_errors_carry_the_seed() {
    let table = small_data(3, 5);
    let bad = Settings { fit: FitConfig { iterations: 0, ..FitConfig::default() }, ..quick() };
    match run_protocol(&table, Mode::GjtPet, ModelKind::Blm, &[7], &bad) {
        Err(Error::Seed { seed: 7, .. }) => {}
        other => panic!("expected a seed-tagged error, got {other:?}"),
    }
}

#[test]
fn ablation_reuses_the_protocol_splits() {
    let table = small_data(6, 6);
    let seeds = seed_list(0, 2);
    let settings = quick();
    let (full, rows) = ablate(&table, Mode::GjtPet, ModelKind::Blm, &[AblationGroup::Answer], &seeds, &settings).unwrap();
    let protocol = run_protocol(&table, Mode::GjtPet, ModelKind::Blm, &seeds, &settings).unwrap();
    assert_eq!(full.accuracies, protocol.accuracies);
    let r = &rows[0];
    for i in 0..seeds.len() {
        assert_eq!(r.deltas[i], 100.0 * (r.ablated.accuracies[i] - full.accuracies[i]));
    }
    assert!((r.delta_mean - 100.0 * (r.ablated.mean - full.mean)).abs() < 1e-9);
}

#[test]
fn removing_an_absent_feature_changes_nothing() {
    let table = small_data(6, 7);
    let s = split(&table, &SplitSpec::standard(7)).unwrap();
    let settings = quick();
    for kind in [ModelKind::Blm, ModelKind::Mlp] {
        let full = evaluate(&s, Mode::GjtPet, kind, &[], &settings, 7).unwrap();
        let noop = evaluate(&s, Mode::GjtPet, kind, &[Factor::PTgt, Factor::PCtx], &settings, 7).unwrap();
        assert_eq!(full, noop, "{kind:?}");
    }
}

#[test]
fn lm_ablation_is_rejected_without_lm_terms() {
    let table = small_data(3, 8);
    let r = ablate(&table, Mode::GjtPet, ModelKind::Blm, &[AblationGroup::LmFeatures], &[0], &quick());
    assert!(matches!(r, Err(Error::Request(_))));
}

#[test]
fn dominant_student_effect_gives_the_largest_ablation_loss() {
    let grid = GridSpec::study(20);
    let cells = grid.cells(9);
    let schema = DesignSchema::fit(default_terms(Mode::GjtPet), &cells).unwrap();
    let mut truth = TruthSpec::uniform(schema, Standardization::default(), 0.1, 9);
    let student_term = truth.schema.term_index(&[Factor::Student]).unwrap();
    let cols: Vec<usize> = truth.schema.term_columns(student_term).map(|(j, _)| j).collect();
    for (k, j) in cols.into_iter().enumerate() {
        truth.beta[j] = if k % 2 == 0 { 2.5 } else { -2.5 };
    }
    let table = generate(&grid, &truth).unwrap().table;
    let groups = AblationGroup::for_mode(Mode::GjtPet);
    let (_, rows) = ablate(&table, Mode::GjtPet, ModelKind::Blm, &groups, &seed_list(0, 2), &quick()).unwrap();
    let worst = rows.iter().min_by(|a, b| a.delta_mean.total_cmp(&b.delta_mean)).unwrap();
    assert_eq!(worst.group, AblationGroup::Students, "{:?}", rows.iter().map(|r| r.delta_mean).collect::<Vec<_>>());
    assert!(worst.delta_mean < -10.0);
}

fn gjt(student: &str, item: &str, time: Time, instruction: Instruction, answer: Answer, correct: bool) -> ResponseRecord {
    let mut r = small_data(1, 0).records()[0].clone();
    r.student_id = student.into();
    r.item_id = item.into();
    r.time = time;
    r.instruction = instruction;
    r.test = Test::Gjt;
    r.answer = answer;
    r.correct = correct;
    r.p_tgt = None;
    r.p_ctx = None;
    r
}

#[test]
fn judgments_count_grammatical_verdicts() {
    use Instruction::*;
    use Time::*;
    let rows = vec![
        gjt("a", "y", Pre, Ctrl, Answer::GjtY, true),
        gjt("b", "y", Pre, Cm, Answer::GjtY, false),
        gjt("a", "y", Post, Ctrl, Answer::GjtY, false),
        gjt("b", "y", Post, Cm, Answer::GjtY, true),
        gjt("a", "n", Pre, Ctrl, Answer::GjtN, true),
        gjt("b", "n", Pre, Cm, Answer::GjtN, false),
        gjt("b", "n", Post, Cm, Answer::GjtN, true),
        gjt("c", "n", Post, Rm, Answer::GjtN, false),
    ];
    let j = judgments_from_responses(&ResponseTable::new(rows).unwrap());
    let n = j.iter().find(|x| x.item_id == "n").unwrap();
    let y = j.iter().find(|x| x.item_id == "y").unwrap();
    assert!(y.grammatical && !n.grammatical);
    assert_eq!((y.judge_pre, y.judge_post), (50.0, 100.0));
    assert_eq!((n.judge_pre, n.judge_post), (50.0, 50.0));
}
