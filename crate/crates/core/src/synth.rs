//! Study-shaped synthetic data from known coefficients.
//!
//! The grid mirrors the real study: students assigned round-robin to the
//! four instruction groups, 48 GJT items (12 form-fxn × usage senses × 4
//! contexts, half intended-grammatical) and 36 PET items (12 senses × 3
//! contexts), each answered at PRE, POST and DLY.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::bayes::Posterior;
use crate::design::{DesignSchema, Standardization, Term};
use crate::math;
use crate::record::{Answer, Factor, FormFxn, Instruction, ResponseRecord, ResponseTable, Test, Time, Usage};
use crate::rng::{self, streams};
use crate::stats;
use crate::{Error, Result};

/// One test item of the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemDef {
    pub item_id: String,
    pub test: Test,
    pub answer: Answer,
    pub form_fxn: FormFxn,
    pub usage: Usage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub n_students: usize,
    pub items: Vec<ItemDef>,
    pub times: Vec<Time>,
    /// Attach synthetic `p_tgt`/`p_ctx` to GJT items.
    pub lm_covariates: bool,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec::study(71)
    }
}

impl GridSpec {
    /// `n_students` × (48 GJT + 36 PET items) × 3 times.
    pub fn study(n_students: usize) -> Self {
        let mut items = Vec::with_capacity(84);
        let senses = FormFxn::ALL.iter().flat_map(|f| Usage::ALL.iter().map(move |u| (*f, *u)));
        for (s, (form_fxn, usage)) in senses.clone().enumerate() {
            for (c, ctx) in ['a', 'b', 'c', 'd'].into_iter().enumerate() {
                let answer = if c < 2 { Answer::GjtY } else { Answer::GjtN };
                items.push(ItemDef { item_id: format!("gjt-{:02}{ctx}", s + 1), test: Test::Gjt, answer, form_fxn, usage });
            }
        }
        for (s, (form_fxn, usage)) in senses.enumerate() {
            for ctx in ['a', 'b', 'c'] {
                items.push(ItemDef { item_id: format!("pet-{:02}{ctx}", s + 1), test: Test::Pet, answer: Answer::Pet, form_fxn, usage });
            }
        }
        GridSpec { n_students, items, times: Time::ALL.to_vec(), lm_covariates: false }
    }

    pub fn gjt_only(mut self) -> Self {
        self.items.retain(|i| i.test == Test::Gjt);
        self
    }

    pub fn with_lm_covariates(mut self) -> Self {
        self.lm_covariates = true;
        self
    }

    pub fn full_size(&self) -> usize {
        self.n_students * self.items.len() * self.times.len()
    }

    pub fn student_ids(&self) -> Vec<String> {
        (1..=self.n_students).map(|i| format!("s{i}")).collect()
    }

    /// Every cell of the grid, unlabeled (`correct = false`). Covariates are
    /// drawn per item from `seed` when enabled.
    pub fn cells(&self, seed: u64) -> Vec<ResponseRecord> {
        let covariates: Vec<(Option<f64>, Option<f64>)> = {
            let mut rng = rng::stream(seed, streams::SYNTH_COVARIATES);
            self.items
                .iter()
                .map(|it| {
                    if !self.lm_covariates || it.test != Test::Gjt {
                        return (None, None);
                    }
                    let centre = if it.answer == Answer::GjtY { 1.0 } else { -2.0 };
                    let p_tgt = math::sigmoid(centre + 1.5 * rng::standard_normal(&mut rng));
                    let p_ctx = rng.random_range(0.4..0.7);
                    (Some(p_tgt), Some(p_ctx))
                })
                .collect()
        };
        let mut out = Vec::with_capacity(self.full_size());
        for (s, student) in self.student_ids().into_iter().enumerate() {
            let instruction = Instruction::ALL[s % Instruction::ALL.len()];
            for &time in &self.times {
                for (it, &(p_tgt, p_ctx)) in self.items.iter().zip(&covariates) {
                    out.push(ResponseRecord {
                        student_id: student.clone(),
                        instruction,
                        time,
                        test: it.test,
                        answer: it.answer,
                        form_fxn: it.form_fxn,
                        usage: it.usage,
                        item_id: it.item_id.clone(),
                        correct: false,
                        p_tgt,
                        p_ctx,
                    });
                }
            }
        }
        out
    }
}

/// Ground-truth coefficients over a schema.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthSpec {
    pub schema: DesignSchema,
    pub standardization: Standardization,
    pub beta: Vec<f64>,
    /// Target fraction of correct responses, reached by shifting the intercept.
    pub label_marginal: Option<f64>,
    pub missingness: f64,
    pub seed: u64,
}

impl TruthSpec {
    /// Coefficients drawn i.i.d. from `U[-range, range]`.
    pub fn uniform(schema: DesignSchema, standardization: Standardization, range: f64, seed: u64) -> Self {
        let mut rng = rng::stream(seed, streams::SYNTH_TRUTH);
        let beta = (0..schema.n_columns()).map(|_| rng.random_range(-range..=range)).collect();
        TruthSpec { schema, standardization, beta, label_marginal: None, missingness: 0.0, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.beta.len() != self.schema.n_columns() {
            return Err(Error::Dimension { expected: self.schema.n_columns(), got: self.beta.len() });
        }
        if self.beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::NonFinite("true coefficients".into()));
        }
        if !(0.0..1.0).contains(&self.missingness) {
            return Err(Error::Config("missingness must lie in [0, 1)".into()));
        }
        if let Some(m) = self.label_marginal {
            if !(m > 0.0 && m < 1.0) {
                return Err(Error::Config("label marginal must lie in (0, 1)".into()));
            }
        }
        Ok(())
    }

    /// Serialized `column<TAB>beta` lines for recovery audits.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (j, b) in self.beta.iter().enumerate() {
            out.push_str(&format!("{}\t{}\n", self.schema.column_key(j), b));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub table: ResponseTable,
    /// The truth actually used, including any intercept shift.
    pub truth: TruthSpec,
}

/// Sample `correct ~ Bernoulli(sigmoid(x · β))` for every kept cell.
pub fn generate(grid: &GridSpec, truth: &TruthSpec) -> Result<SynthDataset> {
    truth.validate()?;
    let mut miss = rng::stream(truth.seed, streams::SYNTH_MISSING);
    let mut cells: Vec<ResponseRecord> = grid
        .cells(truth.seed)
        .into_iter()
        .filter(|_| truth.missingness == 0.0 || miss.random::<f64>() >= truth.missingness)
        .collect();
    let eta: Vec<f64> = cells.iter().map(|r| truth.schema.encode(r, &truth.standardization).dot(&truth.beta)).collect();
    let mut draws = rng::stream(truth.seed, streams::SYNTH_LABELS);
    let uniforms: Vec<f64> = (0..cells.len()).map(|_| draws.random::<f64>()).collect();
    let positives = |shift: f64| -> usize {
        eta.iter().zip(&uniforms).filter(|&(e, u)| *u < math::sigmoid(e + shift)).count()
    };

    let mut truth = truth.clone();
    if let (Some(target), false) = (truth.label_marginal, cells.is_empty()) {
        let icpt = truth
            .schema
            .intercept_column()
            .ok_or_else(|| Error::Schema("label marginal tuning needs an intercept column".into()))?;
        // common random numbers make the positive count monotone in the shift
        let want = target * cells.len() as f64;
        let (mut lo, mut hi) = (-30.0, 30.0);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if (positives(mid) as f64) < want {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        truth.beta[icpt] += hi;
        let shift = hi;
        for ((r, e), u) in cells.iter_mut().zip(&eta).zip(&uniforms) {
            r.correct = *u < math::sigmoid(e + shift);
        }
    } else {
        for ((r, e), u) in cells.iter_mut().zip(&eta).zip(&uniforms) {
            r.correct = *u < math::sigmoid(*e);
        }
    }
    Ok(SynthDataset { table: ResponseTable::new(cells)?, truth })
}

/// Reduced term set for recovery runs (120 columns on the study grid):
/// student intercepts, the form-fxn × usage × answer cell effect and the
/// instruction × time effect.
///
/// No main effects: under dummy coding a main effect's level mean is aliased
/// with the intercept, and with them the correlation between raw draws and
/// posterior means tops out near 0.88 on the study grid.
pub fn recovery_terms() -> Vec<Term> {
    let r = |f: &[Factor]| Term::random(f).expect("valid term");
    alloc::vec![
        Term::intercept(),
        r(&[Factor::Student]),
        r(&[Factor::FormFxn, Factor::Usage, Factor::Answer]),
        r(&[Factor::Instruction, Factor::Time]),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Recovery {
    pub pearson_r: f64,
    /// Fraction of columns with `|β_true| ≥ 0.5` whose posterior mean has the
    /// same sign; NaN when there are no such columns.
    pub sign_agreement: f64,
    pub n_sign_columns: usize,
}

pub const SIGN_THRESHOLD: f64 = 0.5;

pub fn recovery_score(truth: &TruthSpec, schema: &DesignSchema, post: &Posterior) -> Result<Recovery> {
    if *schema != truth.schema || post.n_columns() != truth.beta.len() {
        return Err(Error::Schema("posterior and truth use different schemas".into()));
    }
    score_means(&truth.beta, post.beta_means())
}

/// Recovery statistics between true coefficients and estimated means.
pub fn score_means(truth: &[f64], means: &[f64]) -> Result<Recovery> {
    if truth.len() != means.len() {
        return Err(Error::Dimension { expected: truth.len(), got: means.len() });
    }
    let pearson_r = stats::pearson(truth, means);
    let mut n = 0;
    let mut agree = 0;
    for (t, m) in truth.iter().zip(means) {
        if t.abs() >= SIGN_THRESHOLD {
            n += 1;
            if t.signum() == m.signum() {
                agree += 1;
            }
        }
    }
    let sign_agreement = if n == 0 { f64::NAN } else { agree as f64 / n as f64 };
    Ok(Recovery { pearson_r, sign_agreement, n_sign_columns: n })
}
