//! Experiment orchestration: baselines, the multi-seed prediction protocol,
//! paired feature ablations and stimulus correlation tables.

use std::collections::BTreeMap;

use rand::Rng as _;
use rayon::prelude::*;

use prepstudy_core::bayes::{self, fit, EncodedBatch, FitConfig, ModelSpec, Posterior};
use prepstudy_core::design::{
    default_terms, fit_standardization, without_factors, DesignSchema, EncodeDiagnostics, Mode, Standardization,
    Term, TermKind,
};
use prepstudy_core::mlp::{self, MlpConfig, TrainedMlp};
use prepstudy_core::record::{Answer, Factor, Instruction, ResponseRecord, ResponseTable, StimulusFeatures, Test, Time};
use prepstudy_core::rng::{self, streams};
use prepstudy_core::split::{split, Split, SplitSpec};
use prepstudy_core::effects::{self, ContrastReport, EffectSummary, InteractionGrid, NullComparator};
use prepstudy_core::stats;
use prepstudy_core::synth::{generate, GridSpec, SynthDataset, TruthSpec};

use crate::error::{Error, Result};
use crate::io::StimulusJudgment;

/// Posterior draws per prediction and per effect estimate.
pub const DEFAULT_PREDICT_SAMPLES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Blm,
    Mlp,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Blm => "blm",
            ModelKind::Mlp => "mlp",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "blm" => Ok(ModelKind::Blm),
            "mlp" => Ok(ModelKind::Mlp),
            _ => Err(Error::Request(format!("unknown model {s:?}, expected blm or mlp"))),
        }
    }
}

/// Every tunable of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub fit: FitConfig,
    pub group_scale_prior: f64,
    pub fixed_prior_sd: f64,
    pub predict_samples: usize,
    pub mlp: MlpConfig,
    /// train:eval:dev weights.
    pub split: (f64, f64, f64),
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            fit: FitConfig::default(),
            group_scale_prior: bayes::DEFAULT_GROUP_SCALE_PRIOR,
            fixed_prior_sd: bayes::DEFAULT_FIXED_PRIOR_SD,
            predict_samples: DEFAULT_PREDICT_SAMPLES,
            mlp: MlpConfig::default(),
            split: (84.0, 15.0, 1.0),
        }
    }
}

impl Settings {
    pub fn split_spec(&self, seed: u64) -> SplitSpec {
        SplitSpec { train_weight: self.split.0, eval_weight: self.split.1, dev_weight: self.split.2, seed }
    }
}

/// Records the mode models: GJT-only drops PET responses.
pub fn mode_table(table: &ResponseTable, mode: Mode) -> ResponseTable {
    match mode {
        Mode::GjtPet => table.clone(),
        Mode::GjtOnly => table.filter_test(Test::Gjt),
    }
}

/// Fitted hierarchical model with the transforms it was trained under.
#[derive(Debug, Clone)]
pub struct BlmModel {
    pub spec: ModelSpec,
    pub standardization: Standardization,
    pub posterior: Posterior,
    pub trace: Vec<f64>,
}

fn needs_standardization(terms: &[Term]) -> bool {
    terms.iter().any(|t| t.factors().iter().any(|f| f.is_continuous()))
}

pub fn encode(
    schema: &DesignSchema,
    std: &Standardization,
    records: &[ResponseRecord],
    diag: &mut EncodeDiagnostics,
) -> EncodedBatch {
    let mut batch = EncodedBatch::new();
    for r in records {
        batch.push(&schema.encode_with_diagnostics(r, std, diag), r.correct);
    }
    batch
}

impl BlmModel {
    pub fn predict(&self, records: &[ResponseRecord], seed: u64, samples: usize) -> (Vec<f64>, EncodeDiagnostics) {
        let mut diag = EncodeDiagnostics::default();
        let batch = encode(self.spec.schema(), &self.standardization, records, &mut diag);
        (bayes::predict_batch(&self.posterior, &batch, samples, seed), diag)
    }
}

/// Fit the hierarchical model over `terms` on `train`.
pub fn fit_blm(train: &[ResponseRecord], terms: Vec<Term>, settings: &Settings, seed: u64) -> Result<BlmModel> {
    if train.is_empty() {
        return Err(Error::Request("cannot fit on an empty training set".into()));
    }
    let standardization =
        if needs_standardization(&terms) { fit_standardization(train)? } else { Standardization::default() };
    let schema = DesignSchema::fit(terms, train)?;
    let spec = ModelSpec::new(schema, settings.group_scale_prior, settings.fixed_prior_sd)?;
    let batch = encode(spec.schema(), &standardization, train, &mut EncodeDiagnostics::default());
    let res = fit(&spec, &batch, &FitConfig { seed, ..settings.fit })?;
    Ok(BlmModel { spec, standardization, posterior: res.posterior, trace: res.trace })
}

pub fn train_mlp(
    train: &[ResponseRecord],
    dev: &[ResponseRecord],
    mode: Mode,
    ignored: &[Factor],
    settings: &Settings,
    seed: u64,
) -> Result<TrainedMlp> {
    let cfg = MlpConfig {
        covariates: mode == Mode::GjtOnly,
        ignored: ignored.to_vec(),
        seed,
        ..settings.mlp.clone()
    };
    Ok(mlp::train(train, dev, &cfg)?)
}

fn accuracy(probs: &[f64], records: &[ResponseRecord]) -> f64 {
    mlp::accuracy(probs, records)
}

/// Baseline accuracies on one split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Baselines {
    pub uniform: f64,
    pub majority: f64,
    pub prior: f64,
}

/// Seeded coin flip, most frequent train label, and the prior guide
/// (all means 0, scales 1) thresholded at 0.5.
pub fn baselines(train: &ResponseTable, eval: &ResponseTable, mode: Mode, settings: &Settings, seed: u64) -> Result<Baselines> {
    if train.is_empty() || eval.is_empty() {
        return Err(Error::Request("baselines need non-empty train and eval sets".into()));
    }
    let mut rng = rng::stream(seed, streams::BASELINE);
    let guesses: Vec<f64> = (0..eval.len()).map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 }).collect();
    let majority_label = train.positive_rate() >= 0.5;
    let majority = eval.records().iter().filter(|r| r.correct == majority_label).count() as f64 / eval.len() as f64;
    let terms = default_terms(mode);
    let standardization =
        if needs_standardization(&terms) { fit_standardization(train.records())? } else { Standardization::default() };
    let schema = DesignSchema::fit(terms, train.records())?;
    let spec = ModelSpec::new(schema, settings.group_scale_prior, settings.fixed_prior_sd)?;
    let batch = encode(spec.schema(), &standardization, eval.records(), &mut EncodeDiagnostics::default());
    let probs = bayes::predict_batch(&Posterior::standard(&spec), &batch, settings.predict_samples, seed);
    Ok(Baselines {
        uniform: accuracy(&guesses, eval.records()),
        majority,
        prior: accuracy(&probs, eval.records()),
    })
}

/// Split `table` for `seed`, fit without the `removed` factors and return
/// eval accuracy.
pub fn evaluate(
    split: &Split,
    mode: Mode,
    kind: ModelKind,
    removed: &[Factor],
    settings: &Settings,
    seed: u64,
) -> Result<f64> {
    let eval = split.eval.records();
    match kind {
        ModelKind::Blm => {
            let terms = without_factors(&default_terms(mode), removed);
            let model = fit_blm(split.train.records(), terms, settings, seed)?;
            Ok(accuracy(&model.predict(eval, seed, settings.predict_samples).0, eval))
        }
        ModelKind::Mlp => {
            let out = train_mlp(split.train.records(), split.dev.records(), mode, removed, settings, seed)?;
            Ok(accuracy(&out.model.predict(eval), eval))
        }
    }
}

/// Per-seed accuracies with their mean and sample sd.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolResult {
    pub label: String,
    pub seeds: Vec<u64>,
    pub accuracies: Vec<f64>,
    pub mean: f64,
    pub sd: f64,
    pub warnings: Vec<String>,
}

impl ProtocolResult {
    pub fn from_runs(label: impl Into<String>, seeds: Vec<u64>, accuracies: Vec<f64>) -> Self {
        let mut warnings = Vec::new();
        if accuracies.len() == 1 {
            warnings.push("single seed: sd reported as 0".to_string());
        }
        ProtocolResult {
            label: label.into(),
            mean: stats::mean(&accuracies),
            sd: stats::sample_sd(&accuracies),
            seeds,
            accuracies,
            warnings,
        }
    }
}

/// `n` consecutive seeds starting at `base`.
pub fn seed_list(base: u64, n: usize) -> Vec<u64> {
    (0..n as u64).map(|i| base + i).collect()
}

fn tagged<T>(seed: u64, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Seed { seed, source: Box::new(e) })
}

fn prepare(table: &ResponseTable, mode: Mode, seeds: &[u64]) -> Result<ResponseTable> {
    if seeds.is_empty() {
        return Err(Error::Request("at least one seed is required".into()));
    }
    let t = mode_table(table, mode);
    if t.len() < 3 {
        return Err(Error::Request(format!("{} records is too few to split", t.len())));
    }
    Ok(t)
}

fn mode_warnings(table: &ResponseTable, mode: Mode) -> Vec<String> {
    let has_covariates = table.records().iter().any(|r| r.p_tgt.is_some() || r.p_ctx.is_some());
    if mode == Mode::GjtOnly && !has_covariates {
        vec!["gjt mode without p_tgt/p_ctx covariates: the covariate terms stay at their prior".to_string()]
    } else {
        Vec::new()
    }
}

/// Split 84:15:1 per seed, fit, score on eval; seeds run in parallel.
pub fn run_protocol(
    table: &ResponseTable,
    mode: Mode,
    kind: ModelKind,
    seeds: &[u64],
    settings: &Settings,
) -> Result<ProtocolResult> {
    let t = prepare(table, mode, seeds)?;
    let acc: Vec<f64> = seeds
        .par_iter()
        .map(|&seed| {
            tagged(seed, (|| {
                let s = split(&t, &settings.split_spec(seed))?;
                evaluate(&s, mode, kind, &[], settings, seed)
            })())
        })
        .collect::<Result<_>>()?;
    let mut out = ProtocolResult::from_runs(format!("{} {}", kind.as_str(), mode.as_str()), seeds.to_vec(), acc);
    out.warnings.extend(mode_warnings(&t, mode));
    Ok(out)
}

/// Baselines over the same per-seed splits as [`run_protocol`].
pub fn baseline_protocol(
    table: &ResponseTable,
    mode: Mode,
    seeds: &[u64],
    settings: &Settings,
) -> Result<[ProtocolResult; 3]> {
    let t = prepare(table, mode, seeds)?;
    let per_seed: Vec<Baselines> = seeds
        .par_iter()
        .map(|&seed| {
            tagged(seed, (|| {
                let s = split(&t, &settings.split_spec(seed))?;
                baselines(&s.train, &s.eval, mode, settings, seed)
            })())
        })
        .collect::<Result<_>>()?;
    let col = |f: fn(&Baselines) -> f64| per_seed.iter().map(f).collect::<Vec<_>>();
    Ok([
        ProtocolResult::from_runs("uniform baseline", seeds.to_vec(), col(|b| b.uniform)),
        ProtocolResult::from_runs("majority baseline", seeds.to_vec(), col(|b| b.majority)),
        ProtocolResult::from_runs("blm prior baseline", seeds.to_vec(), col(|b| b.prior)),
    ])
}

/// Feature groups removed together in an ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationGroup {
    Students,
    Answer,
    FxnUsage,
    InstrTime,
    LmFeatures,
}

impl AblationGroup {
    pub const ALL: [AblationGroup; 5] = [
        AblationGroup::Students,
        AblationGroup::Answer,
        AblationGroup::FxnUsage,
        AblationGroup::InstrTime,
        AblationGroup::LmFeatures,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationGroup::Students => "students",
            AblationGroup::Answer => "answer",
            AblationGroup::FxnUsage => "fxn&usage",
            AblationGroup::InstrTime => "instr&time",
            AblationGroup::LmFeatures => "p_tgt&p_ctx",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|g| g.name() == s)
            .ok_or_else(|| Error::Request(format!("unknown ablation group {s:?}")))
    }

    pub fn factors(self) -> &'static [Factor] {
        match self {
            AblationGroup::Students => &[Factor::Student],
            AblationGroup::Answer => &[Factor::Answer],
            AblationGroup::FxnUsage => &[Factor::FormFxn, Factor::Usage],
            AblationGroup::InstrTime => &[Factor::Instruction, Factor::Time],
            AblationGroup::LmFeatures => &[Factor::PTgt, Factor::PCtx],
        }
    }

    /// Groups that apply in `mode`.
    pub fn for_mode(mode: Mode) -> Vec<AblationGroup> {
        Self::ALL.into_iter().filter(|g| mode == Mode::GjtOnly || *g != AblationGroup::LmFeatures).collect()
    }
}

/// Ablated accuracy against the full model on identical splits. Deltas are
/// in percentage points, ablated minus full.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub group: AblationGroup,
    pub ablated: ProtocolResult,
    pub deltas: Vec<f64>,
    pub delta_mean: f64,
    pub delta_sd: f64,
}

/// Full model plus one row per group; every fit of a seed shares its split.
pub fn ablate(
    table: &ResponseTable,
    mode: Mode,
    kind: ModelKind,
    groups: &[AblationGroup],
    seeds: &[u64],
    settings: &Settings,
) -> Result<(ProtocolResult, Vec<AblationRow>)> {
    if mode == Mode::GjtPet && groups.contains(&AblationGroup::LmFeatures) {
        return Err(Error::Request("p_tgt&p_ctx ablation is not applicable in gjt+pet mode".into()));
    }
    let t = prepare(table, mode, seeds)?;
    let splits: Vec<Split> = seeds
        .par_iter()
        .map(|&seed| tagged(seed, split(&t, &settings.split_spec(seed)).map_err(Error::from)))
        .collect::<Result<_>>()?;
    // job 0 of each seed is the full model
    let jobs: Vec<(usize, usize)> = (0..seeds.len()).flat_map(|s| (0..=groups.len()).map(move |g| (s, g))).collect();
    let results: Vec<f64> = jobs
        .par_iter()
        .map(|&(s, g)| {
            let removed = if g == 0 { &[][..] } else { groups[g - 1].factors() };
            tagged(seeds[s], evaluate(&splits[s], mode, kind, removed, settings, seeds[s]))
        })
        .collect::<Result<_>>()?;
    let acc = |s: usize, g: usize| results[s * (groups.len() + 1) + g];
    let label = format!("{} {}", kind.as_str(), mode.as_str());
    let mut full = ProtocolResult::from_runs(label.clone(), seeds.to_vec(), (0..seeds.len()).map(|s| acc(s, 0)).collect());
    full.warnings.extend(mode_warnings(&t, mode));
    let rows = groups
        .iter()
        .enumerate()
        .map(|(gi, &group)| {
            let ablated: Vec<f64> = (0..seeds.len()).map(|s| acc(s, gi + 1)).collect();
            let deltas: Vec<f64> = (0..seeds.len()).map(|s| 100.0 * (acc(s, gi + 1) - acc(s, 0))).collect();
            AblationRow {
                group,
                ablated: ProtocolResult::from_runs(format!("{label} -{}", group.name()), seeds.to_vec(), ablated),
                delta_mean: stats::mean(&deltas),
                delta_sd: stats::sample_sd(&deltas),
                deltas,
            }
        })
        .collect();
    Ok((full, rows))
}

/// Per-stimulus judgment shares derived from GJT responses: the pretest
/// over all students, the posttest over treatment groups only. A response
/// judges the sentence grammatical when it is correct on a GJT-Y item or
/// incorrect on a GJT-N item.
pub fn judgments_from_responses(table: &ResponseTable) -> Vec<StimulusJudgment> {
    #[derive(Default)]
    struct Acc {
        grammatical: bool,
        pre: (usize, usize),
        post: (usize, usize),
    }
    let mut by_item: BTreeMap<&str, Acc> = BTreeMap::new();
    for r in table.records().iter().filter(|r| r.test == Test::Gjt) {
        let a = by_item.entry(&r.item_id).or_default();
        a.grammatical = r.answer == Answer::GjtY;
        let judged_ok = r.correct == (r.answer == Answer::GjtY);
        let slot = match r.time {
            Time::Pre => &mut a.pre,
            Time::Post if r.instruction != Instruction::Ctrl => &mut a.post,
            _ => continue,
        };
        slot.0 += usize::from(judged_ok);
        slot.1 += 1;
    }
    let pct = |(k, n): (usize, usize)| if n == 0 { f64::NAN } else { 100.0 * k as f64 / n as f64 };
    by_item
        .into_iter()
        .map(|(item, a)| StimulusJudgment {
            item_id: item.to_string(),
            grammatical: a.grammatical,
            judge_pre: pct(a.pre),
            judge_post: pct(a.post),
        })
        .collect()
}

/// Posterior effect tables for one fitted model.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectReport {
    pub baseline_logit: f64,
    pub effects: Vec<EffectSummary>,
    /// Each contrast with its comparator name ("pairwise" or a null).
    pub contrasts: Vec<(ContrastReport, &'static str)>,
    pub grids: Vec<InteractionGrid>,
    /// R² between students' GJT-N and GJT-Y effects, when the
    /// student:answer grid has both columns.
    pub student_answer_r_squared: Option<f64>,
}

/// Interaction grids included in effect reports.
pub const REPORT_GRIDS: [(Factor, Factor); 3] =
    [(Factor::Student, Factor::Answer), (Factor::Student, Factor::FormFxn), (Factor::FormFxn, Factor::Usage)];

/// All coefficient marginals; pairwise contrasts between the levels of
/// every closed-level main effect; every main and fixed effect against both
/// null comparators; and the [`REPORT_GRIDS`] present in the schema.
pub fn effect_report(model: &BlmModel) -> Result<EffectReport> {
    let (spec, post) = (&model.spec, &model.posterior);
    let schema = spec.schema();
    let mut contrasts = Vec::new();
    for term in schema.terms() {
        let main = term.factors().len() == 1;
        if !(main || term.kind() == TermKind::Fixed) || term.factors().is_empty() {
            continue;
        }
        let effs = effects::term_effects(spec, post, term.factors())?;
        if main && term.kind() == TermKind::Random && term.factors()[0].closed_levels().is_some() {
            for (i, a) in effs.iter().enumerate() {
                for b in &effs[i + 1..] {
                    contrasts.push((effects::contrast(a, b), "pairwise"));
                }
            }
        }
        for e in &effs {
            for c in NullComparator::ALL {
                contrasts.push((effects::contrast_null(e, c), c.as_str()));
            }
        }
    }
    let grids: Vec<InteractionGrid> = REPORT_GRIDS
        .iter()
        .filter(|(a, b)| schema.term_index(&[*a, *b]).is_some())
        .map(|&(a, b)| effects::interaction_grid(spec, post, a, b))
        .collect::<std::result::Result<_, _>>()?;
    let student_answer_r_squared = schema.term_index(&[Factor::Student, Factor::Answer]).and_then(|_| {
        let g = &grids[0];
        let y = g.cols.iter().position(|c| c == Answer::GjtY.as_str())?;
        let n = g.cols.iter().position(|c| c == Answer::GjtN.as_str())?;
        (g.rows.len() >= 3).then(|| stats::r_squared(&g.column_means(n), &g.column_means(y)))
    });
    Ok(EffectReport {
        baseline_logit: effects::baseline_logit(spec, post),
        effects: effects::all_effects(spec, post)?,
        contrasts,
        grids,
        student_answer_r_squared,
    })
}

/// Synthetic study dimensions and ground-truth draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSettings {
    pub students: usize,
    pub missingness: f64,
    /// True coefficients are drawn from `U[-range, range]`.
    pub range: f64,
    pub marginal: Option<f64>,
}

impl Default for SynthSettings {
    fn default() -> Self {
        SynthSettings { students: 71, missingness: 0.02, range: 2.0, marginal: None }
    }
}

/// Draw a study-shaped dataset whose labels follow `terms` with known
/// coefficients. GJT-only data carries synthetic p_tgt/p_ctx.
pub fn simulate(mode: Mode, terms: Vec<Term>, synth: &SynthSettings, seed: u64) -> Result<SynthDataset> {
    let grid = match mode {
        Mode::GjtPet => GridSpec::study(synth.students),
        Mode::GjtOnly => GridSpec::study(synth.students).gjt_only().with_lm_covariates(),
    };
    let cells = grid.cells(seed);
    let standardization =
        if needs_standardization(&terms) { fit_standardization(&cells)? } else { Standardization::default() };
    let schema = DesignSchema::fit(terms, &cells)?;
    let mut truth = TruthSpec::uniform(schema, standardization, synth.range, seed);
    truth.missingness = synth.missingness;
    truth.label_marginal = synth.marginal;
    Ok(generate(&grid, &truth)?)
}

/// Squared correlation between two per-stimulus variables.
#[derive(Debug, Clone, PartialEq)]
pub struct Correlation {
    pub x: &'static str,
    pub y: &'static str,
    pub r_squared: f64,
    pub n: usize,
}

pub const CORRELATION_PAIRS: [(&str, &str); 9] = [
    ("answer", "judge_post"),
    ("p_tgt", "answer"),
    ("p_tgt", "judge_post"),
    ("p_tgt", "p_ctx"),
    ("answer", "judge_pre"),
    ("p_tgt", "judge_pre"),
    ("p_ctx", "answer"),
    ("p_ctx", "judge_post"),
    ("p_ctx", "judge_pre"),
];

/// OLS R² for every pair in [`CORRELATION_PAIRS`] over stimuli present in
/// both inputs; "answer" is 1 for grammatical stimuli and 0 otherwise.
pub fn correlations(judgments: &[StimulusJudgment], feats: &[StimulusFeatures]) -> Result<Vec<Correlation>> {
    let by_item: BTreeMap<&str, &StimulusFeatures> = feats.iter().map(|f| (f.item_id.as_str(), f)).collect();
    let rows: Vec<(&StimulusJudgment, &StimulusFeatures)> =
        judgments.iter().filter_map(|j| by_item.get(j.item_id.as_str()).map(|f| (j, *f))).collect();
    if rows.len() < 3 {
        return Err(Error::Request(format!("correlations need at least 3 stimuli, got {}", rows.len())));
    }
    let value = |name: &str, (j, f): &(&StimulusJudgment, &StimulusFeatures)| match name {
        "answer" => f64::from(u8::from(j.grammatical)),
        "judge_pre" => j.judge_pre,
        "judge_post" => j.judge_post,
        "p_tgt" => f.p_tgt,
        "p_ctx" => f.p_ctx,
        _ => unreachable!("fixed variable names"),
    };
    Ok(CORRELATION_PAIRS
        .iter()
        .map(|&(x, y)| {
            let (xs, ys): (Vec<f64>, Vec<f64>) = rows
                .iter()
                .map(|r| (value(x, r), value(y, r)))
                .filter(|(a, b)| a.is_finite() && b.is_finite())
                .unzip();
            Correlation { x, y, r_squared: stats::r_squared(&xs, &ys), n: xs.len() }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feats(values: &[(f64, f64)]) -> Vec<StimulusFeatures> {
        values
            .iter()
            .enumerate()
            .map(|(i, &(p_tgt, p_ctx))| StimulusFeatures { item_id: format!("i{i}"), p_tgt, p_ctx })
            .collect()
    }

    fn judgments(values: &[(bool, f64, f64)]) -> Vec<StimulusJudgment> {
        values
            .iter()
            .enumerate()
            .map(|(i, &(grammatical, judge_pre, judge_post))| StimulusJudgment {
                item_id: format!("i{i}"),
                grammatical,
                judge_pre,
                judge_post,
            })
            .collect()
    }

    #[test]
    fn perfect_relation_has_unit_r_squared() {
        let f = feats(&[(0.1, 0.5), (0.2, 0.4), (0.3, 0.7), (0.9, 0.6)]);
        let j = judgments(&[(false, 10.0, 10.0), (false, 20.0, 20.0), (true, 30.0, 30.0), (true, 90.0, 90.0)]);
        let c = correlations(&j, &f).unwrap();
        let pre = c.iter().find(|c| c.x == "p_tgt" && c.y == "judge_pre").unwrap();
        assert!((pre.r_squared - 1.0).abs() < 1e-12);
        assert_eq!(pre.n, 4);
    }

    #[test]
    fn too_few_stimuli_is_an_error() {
        let f = feats(&[(0.1, 0.5), (0.2, 0.4)]);
        let j = judgments(&[(false, 1.0, 2.0), (true, 3.0, 4.0)]);
        assert!(correlations(&j, &f).is_err());
    }

    #[test]
    fn independent_values_have_small_r_squared() {
        let mut r = rng::stream(3, 0);
        let f: Vec<(f64, f64)> = (0..1000).map(|_| (r.random(), r.random())).collect();
        let j: Vec<(bool, f64, f64)> = (0..1000).map(|_| (r.random_bool(0.5), 100.0 * r.random::<f64>(), 50.0)).collect();
        let c = correlations(&judgments(&j), &feats(&f)).unwrap();
        let pre = c.iter().find(|c| c.x == "p_tgt" && c.y == "judge_pre").unwrap();
        assert!(pre.r_squared < 0.02, "{}", pre.r_squared);
    }

    #[test]
    fn groups_parse_and_respect_mode() {
        for g in AblationGroup::ALL {
            assert_eq!(AblationGroup::parse(g.name()).unwrap(), g);
        }
        assert!(!AblationGroup::for_mode(Mode::GjtPet).contains(&AblationGroup::LmFeatures));
        assert_eq!(AblationGroup::for_mode(Mode::GjtOnly).len(), 5);
    }

    #[test]
    fn single_seed_warns() {
        let r = ProtocolResult::from_runs("x", vec![1], vec![0.7]);
        assert_eq!(r.sd, 0.0);
        assert_eq!(r.warnings.len(), 1);
    }
}
