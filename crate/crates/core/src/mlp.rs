//! Embedding MLP classifier of response correctness.
//!
//! Each categorical feature is looked up in its own embedding table (row 0
//! is the unknown level), the embeddings are concatenated with optional
//! standardized covariates, and the result passes through two GELU hidden
//! layers to a single logit:
//!
//! ```text
//! x  = dropout_in([emb_1, .., emb_6, z_tgt, z_ctx, has_tgt, has_ctx])
//! h1 = gelu(dropout_h(W1 x + b1))
//! h2 = gelu(dropout_h(W2 h1 + b2))
//! p  = sigmoid(w3 · h2 + b3)
//! ```
//!
//! The loss is mean binary cross-entropy, minimized with AdamW, with early
//! stopping on dev accuracy. Gradients are hand-written backprop over a flat
//! parameter vector.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::design::{fit_standardization, Standardization, ZParams};
use crate::math;
use crate::optim::{AdamW, AdamWConfig};
use crate::record::{Factor, ResponseRecord};
use crate::rng::{self, streams, Rng};
use crate::{Error, Result};

/// Categorical inputs, one embedding table each.
pub const FEATURES: [Factor; 6] =
    [Factor::Student, Factor::Instruction, Factor::Time, Factor::Answer, Factor::FormFxn, Factor::Usage];

/// Covariate block: two z-scores and two presence indicators.
const N_COVARIATE_INPUTS: usize = 4;

const CHECKPOINT_VERSION: &str = "prepstudy-mlp v1";

#[derive(Debug, Clone, PartialEq)]
pub struct MlpConfig {
    pub embedding_dim: usize,
    pub hidden: (usize, usize),
    pub input_dropout: f64,
    pub hidden_dropout: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub optimizer: AdamWConfig,
    /// Records per optimizer step; `None` takes one full-batch step per epoch.
    pub batch_size: Option<usize>,
    /// Feed standardized p_tgt/p_ctx inputs.
    pub covariates: bool,
    /// Features withheld from the model, for ablations. An ignored
    /// categorical feature always maps to its unknown row; ignoring p_tgt or
    /// p_ctx disables the covariate inputs.
    pub ignored: Vec<Factor>,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            embedding_dim: 8,
            hidden: (64, 64),
            input_dropout: 0.1,
            hidden_dropout: 0.2,
            max_epochs: 25,
            patience: 3,
            optimizer: AdamWConfig::default(),
            batch_size: Some(32),
            covariates: false,
            ignored: Vec::new(),
            seed: 0,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim == 0 || self.hidden.0 == 0 || self.hidden.1 == 0 {
            return Err(Error::Config("layer sizes must be at least 1".into()));
        }
        for p in [self.input_dropout, self.hidden_dropout] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Config("dropout must lie in [0, 1)".into()));
            }
        }
        if self.patience == 0 || self.max_epochs == 0 {
            return Err(Error::Config("patience and max_epochs must be at least 1".into()));
        }
        if self.batch_size == Some(0) {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if let Some(f) = self.ignored.iter().find(|f| !FEATURES.contains(f) && !f.is_continuous()) {
            return Err(Error::Config(format!("{} is not an mlp input", f.name())));
        }
        self.optimizer.validate()
    }

    fn uses_covariates(&self) -> bool {
        self.covariates && !self.ignored.iter().any(|f| f.is_continuous())
    }
}

/// Level → embedding row, per feature. Row 0 is reserved for unknown levels.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Vocabulary {
    levels: Vec<Vec<String>>,
    index: Vec<BTreeMap<String, usize>>,
}

impl Vocabulary {
    pub fn fit(records: &[ResponseRecord]) -> Self {
        let mut sets: Vec<alloc::collections::BTreeSet<&str>> = vec![Default::default(); FEATURES.len()];
        for r in records {
            for (k, f) in FEATURES.iter().enumerate() {
                if let Some(l) = r.level(*f) {
                    sets[k].insert(l);
                }
            }
        }
        Self::from_levels(sets.into_iter().map(|s| s.into_iter().map(String::from).collect()).collect())
    }

    fn from_levels(levels: Vec<Vec<String>>) -> Self {
        let index = levels
            .iter()
            .map(|ls| ls.iter().enumerate().map(|(i, l)| (l.clone(), i + 1)).collect())
            .collect();
        Vocabulary { levels, index }
    }

    /// Rows in feature `k`'s table, including the unknown row.
    pub fn rows(&self, k: usize) -> usize {
        self.levels[k].len() + 1
    }

    pub fn levels(&self, k: usize) -> &[String] {
        &self.levels[k]
    }

    pub fn row(&self, k: usize, level: Option<&str>) -> usize {
        level.and_then(|l| self.index[k].get(l).copied()).unwrap_or(0)
    }
}

/// Offsets of each block in the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
struct Layout {
    emb: [usize; FEATURES.len()],
    emb_dim: usize,
    input: usize,
    h1: usize,
    h2: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    w3: usize,
    b3: usize,
    len: usize,
}

impl Layout {
    fn new(vocab: &Vocabulary, emb_dim: usize, covariates: bool, h1: usize, h2: usize) -> Self {
        let mut emb = [0; FEATURES.len()];
        let mut at = 0;
        for (k, slot) in emb.iter_mut().enumerate() {
            *slot = at;
            at += vocab.rows(k) * emb_dim;
        }
        let input = FEATURES.len() * emb_dim + if covariates { N_COVARIATE_INPUTS } else { 0 };
        let w1 = at;
        let b1 = w1 + h1 * input;
        let w2 = b1 + h1;
        let b2 = w2 + h2 * h1;
        let w3 = b2 + h2;
        let b3 = w3 + h2;
        Layout { emb, emb_dim, input, h1, h2, w1, b1, w2, b2, w3, b3, len: b3 + 1 }
    }
}

/// A record mapped to embedding rows and covariate inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    rows: [usize; FEATURES.len()],
    covariates: [f64; N_COVARIATE_INPUTS],
    label: f64,
}

/// Per-epoch training record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_acc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layout: Layout,
    vocab: Vocabulary,
    standardization: Standardization,
    covariates: bool,
    ignored: [bool; FEATURES.len()],
    input_dropout: f64,
    hidden_dropout: f64,
    params: Vec<f64>,
}

/// Activations of one forward pass, kept for backprop.
struct Trace {
    x: Vec<f64>,
    a1: Vec<f64>,
    h1: Vec<f64>,
    a2: Vec<f64>,
    h2: Vec<f64>,
    // inverted-dropout multipliers (0 or 1/(1-p)); empty when off
    m0: Vec<f64>,
    m1: Vec<f64>,
    m2: Vec<f64>,
    logit: f64,
}

impl Trace {
    fn new(l: &Layout) -> Self {
        Trace {
            x: vec![0.0; l.input],
            a1: vec![0.0; l.h1],
            h1: vec![0.0; l.h1],
            a2: vec![0.0; l.h2],
            h2: vec![0.0; l.h2],
            m0: Vec::new(),
            m1: Vec::new(),
            m2: Vec::new(),
            logit: 0.0,
        }
    }
}

fn dropout_mask(rng: &mut Rng, p: f64, n: usize, out: &mut Vec<f64>) {
    out.clear();
    if p > 0.0 {
        let keep = 1.0 / (1.0 - p);
        out.extend((0..n).map(|_| if rng.random::<f64>() < p { 0.0 } else { keep }));
    }
}

fn apply(mask: &[f64], v: &mut [f64]) {
    if !mask.is_empty() {
        v.iter_mut().zip(mask).for_each(|(x, m)| *x *= m);
    }
}

impl Mlp {
    /// Fresh model: embeddings N(0, 1), linear layers U(±1/√fan_in).
    pub fn init(vocab: Vocabulary, standardization: Standardization, cfg: &MlpConfig) -> Result<Self> {
        cfg.validate()?;
        let covariates = cfg.uses_covariates();
        let layout = Layout::new(&vocab, cfg.embedding_dim, covariates, cfg.hidden.0, cfg.hidden.1);
        let mut rng = rng::stream(cfg.seed, streams::MLP_INIT);
        let mut params = vec![0.0; layout.len];
        rng::fill_standard_normal(&mut rng, &mut params[..layout.w1]);
        let mut uniform = |range: core::ops::Range<usize>, fan_in: usize| {
            let bound = 1.0 / math::sqrt(fan_in as f64);
            for p in &mut params[range] {
                *p = rng.random_range(-bound..bound);
            }
        };
        uniform(layout.w1..layout.w2, layout.input);
        uniform(layout.w2..layout.w3, layout.h1);
        uniform(layout.w3..layout.len, layout.h2);
        Ok(Mlp {
            layout,
            vocab,
            standardization,
            covariates,
            ignored: FEATURES.map(|f| cfg.ignored.contains(&f)),
            input_dropout: cfg.input_dropout,
            hidden_dropout: cfg.hidden_dropout,
            params,
        })
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn uses_covariates(&self) -> bool {
        self.covariates
    }

    /// Index of the output bias in [`Mlp::params`].
    pub fn output_bias_index(&self) -> usize {
        self.layout.b3
    }

    /// Range of the output weights in [`Mlp::params`].
    pub fn output_weights(&self) -> core::ops::Range<usize> {
        self.layout.w3..self.layout.b3
    }

    pub fn encode(&self, r: &ResponseRecord) -> Encoded {
        let mut rows = [0; FEATURES.len()];
        for (k, f) in FEATURES.iter().enumerate() {
            if !self.ignored[k] {
                rows[k] = self.vocab.row(k, r.level(*f));
            }
        }
        let mut covariates = [0.0; N_COVARIATE_INPUTS];
        if self.covariates {
            for (k, f) in [Factor::PTgt, Factor::PCtx].into_iter().enumerate() {
                if let Some(z) = self.standardization.z(r, f) {
                    covariates[k] = z;
                    covariates[2 + k] = 1.0;
                }
            }
        }
        Encoded { rows, covariates, label: if r.correct { 1.0 } else { 0.0 } }
    }

    fn forward_into(&self, e: &Encoded, dropout: Option<&mut Rng>, t: &mut Trace) {
        let l = &self.layout;
        let p = &self.params;
        let d = l.emb_dim;
        for (k, &row) in e.rows.iter().enumerate() {
            let src = l.emb[k] + row * d;
            t.x[k * d..(k + 1) * d].copy_from_slice(&p[src..src + d]);
        }
        if self.covariates {
            t.x[FEATURES.len() * d..].copy_from_slice(&e.covariates);
        }
        let train = dropout.is_some();
        if let Some(rng) = dropout {
            dropout_mask(rng, self.input_dropout, l.input, &mut t.m0);
            dropout_mask(rng, self.hidden_dropout, l.h1, &mut t.m1);
            dropout_mask(rng, self.hidden_dropout, l.h2, &mut t.m2);
        }
        if !train {
            t.m0.clear();
            t.m1.clear();
            t.m2.clear();
        }
        apply(&t.m0, &mut t.x);
        for i in 0..l.h1 {
            let w = &p[l.w1 + i * l.input..l.w1 + (i + 1) * l.input];
            t.a1[i] = p[l.b1 + i] + dot(w, &t.x);
        }
        apply(&t.m1, &mut t.a1);
        for i in 0..l.h1 {
            t.h1[i] = math::gelu(t.a1[i]);
        }
        for i in 0..l.h2 {
            let w = &p[l.w2 + i * l.h1..l.w2 + (i + 1) * l.h1];
            t.a2[i] = p[l.b2 + i] + dot(w, &t.h1);
        }
        apply(&t.m2, &mut t.a2);
        for i in 0..l.h2 {
            t.h2[i] = math::gelu(t.a2[i]);
        }
        t.logit = p[l.b3] + dot(&p[l.w3..l.b3], &t.h2);
    }

    /// Accumulate `dloss/dlogit · dlogit/dθ` into `grad`.
    fn backward(&self, e: &Encoded, t: &Trace, dlogit: f64, grad: &mut [f64], scratch: &mut Scratch) {
        let l = &self.layout;
        let p = &self.params;
        grad[l.b3] += dlogit;
        for i in 0..l.h2 {
            grad[l.w3 + i] += dlogit * t.h2[i];
            scratch.d2[i] = dlogit * p[l.w3 + i] * math::gelu_grad(t.a2[i]);
        }
        apply(&t.m2, &mut scratch.d2);
        scratch.d1.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..l.h2 {
            let g = scratch.d2[i];
            if g == 0.0 {
                continue;
            }
            grad[l.b2 + i] += g;
            let row = l.w2 + i * l.h1;
            for k in 0..l.h1 {
                grad[row + k] += g * t.h1[k];
                scratch.d1[k] += g * p[row + k];
            }
        }
        for k in 0..l.h1 {
            scratch.d1[k] *= math::gelu_grad(t.a1[k]);
        }
        apply(&t.m1, &mut scratch.d1);
        scratch.d0.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..l.h1 {
            let g = scratch.d1[i];
            if g == 0.0 {
                continue;
            }
            grad[l.b1 + i] += g;
            let row = l.w1 + i * l.input;
            for k in 0..l.input {
                grad[row + k] += g * t.x[k];
                scratch.d0[k] += g * p[row + k];
            }
        }
        apply(&t.m0, &mut scratch.d0);
        let d = l.emb_dim;
        for (k, &r) in e.rows.iter().enumerate() {
            let dst = l.emb[k] + r * d;
            for c in 0..d {
                grad[dst + c] += scratch.d0[k * d + c];
            }
        }
    }

    /// Predicted probability of a correct response, clamped into (0, 1).
    /// `dropout` enables training-mode dropout with masks from the stream.
    pub fn forward(&self, record: &ResponseRecord, dropout: Option<&mut Rng>) -> f64 {
        self.prob(&self.encode(record), dropout)
    }

    fn prob(&self, e: &Encoded, dropout: Option<&mut Rng>) -> f64 {
        let mut t = Trace::new(&self.layout);
        self.forward_into(e, dropout, &mut t);
        math::sigmoid(t.logit).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON)
    }

    pub fn predict(&self, records: &[ResponseRecord]) -> Vec<f64> {
        let mut t = Trace::new(&self.layout);
        records
            .iter()
            .map(|r| {
                self.forward_into(&self.encode(r), None, &mut t);
                math::sigmoid(t.logit).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON)
            })
            .collect()
    }

    /// Mean BCE over `batch` and its gradient, without dropout unless a
    /// stream is given.
    pub fn loss_and_grad(&self, batch: &[Encoded], dropout: Option<&mut Rng>) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.params.len()];
        let loss = self.accumulate(batch.iter(), dropout, &mut grad);
        (loss, grad)
    }

    fn accumulate<'a>(
        &self,
        batch: impl ExactSizeIterator<Item = &'a Encoded>,
        mut dropout: Option<&mut Rng>,
        grad: &mut [f64],
    ) -> f64 {
        let n = batch.len().max(1) as f64;
        let mut t = Trace::new(&self.layout);
        let mut scratch = Scratch::new(&self.layout);
        let mut loss = 0.0;
        for e in batch {
            self.forward_into(e, dropout.as_deref_mut(), &mut t);
            // BCE from the logit: softplus(z) − y z
            loss += math::softplus(t.logit) - e.label * t.logit;
            let dlogit = (math::sigmoid(t.logit) - e.label) / n;
            self.backward(e, &t, dlogit, grad, &mut scratch);
        }
        loss / n
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let l = &self.layout;
        let _ = writeln!(s, "# {CHECKPOINT_VERSION}");
        let _ = writeln!(s, "embedding_dim\t{}", l.emb_dim);
        let _ = writeln!(s, "hidden\t{}\t{}", l.h1, l.h2);
        let _ = writeln!(s, "dropout\t{}\t{}", self.input_dropout, self.hidden_dropout);
        let _ = writeln!(s, "covariates\t{}", u8::from(self.covariates));
        for (k, f) in FEATURES.iter().enumerate() {
            if self.ignored[k] {
                let _ = writeln!(s, "ignore\t{}", f.name());
            }
        }
        for (name, zp) in [("p_tgt", self.standardization.p_tgt), ("p_ctx", self.standardization.p_ctx)] {
            if let Some(z) = zp {
                let _ = writeln!(s, "standardization\t{name}\t{}\t{}", z.mean, z.sd);
            }
        }
        for (k, f) in FEATURES.iter().enumerate() {
            for level in self.vocab.levels(k) {
                let _ = writeln!(s, "vocab\t{}\t{level}", f.name());
            }
        }
        let _ = writeln!(s, "params\t{}", self.params.len());
        for p in &self.params {
            let _ = writeln!(s, "{p}");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |msg: &str| Error::Parse(format!("mlp checkpoint: {msg}"));
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(&*format!("# {CHECKPOINT_VERSION}")) {
            return Err(bad("missing or unsupported version header"));
        }
        let num = |s: Option<&str>| -> Result<f64> {
            s.and_then(|v| v.parse().ok()).ok_or_else(|| bad("expected a number"))
        };
        let (mut emb_dim, mut h, mut drop, mut covariates) = (None, None, (0.0, 0.0), false);
        let mut standardization = Standardization::default();
        let mut ignored = [false; FEATURES.len()];
        let mut levels: Vec<Vec<String>> = vec![Vec::new(); FEATURES.len()];
        let mut params = Vec::new();
        while let Some(line) = lines.next() {
            let mut f = line.split('\t');
            match f.next() {
                Some("embedding_dim") => emb_dim = Some(num(f.next())? as usize),
                Some("hidden") => h = Some((num(f.next())? as usize, num(f.next())? as usize)),
                Some("dropout") => drop = (num(f.next())?, num(f.next())?),
                Some("covariates") => covariates = f.next() == Some("1"),
                Some("ignore") => {
                    let factor = f.next().and_then(Factor::from_name).ok_or_else(|| bad("unknown feature"))?;
                    let k = FEATURES.iter().position(|&x| x == factor).ok_or_else(|| bad("not a feature"))?;
                    ignored[k] = true;
                }
                Some("standardization") => {
                    let name = f.next();
                    let z = ZParams { mean: num(f.next())?, sd: num(f.next())? };
                    match name {
                        Some("p_tgt") => standardization.p_tgt = Some(z),
                        Some("p_ctx") => standardization.p_ctx = Some(z),
                        _ => return Err(bad("unknown covariate")),
                    }
                }
                Some("vocab") => {
                    let factor = f.next().and_then(Factor::from_name).ok_or_else(|| bad("unknown feature"))?;
                    let k = FEATURES.iter().position(|&x| x == factor).ok_or_else(|| bad("not a feature"))?;
                    levels[k].push(f.next().ok_or_else(|| bad("missing level"))?.to_string());
                }
                Some("params") => {
                    let n = num(f.next())? as usize;
                    params = lines.by_ref().take(n).map(|v| num(Some(v.trim()))).collect::<Result<_>>()?;
                    if params.len() != n {
                        return Err(bad("truncated parameter block"));
                    }
                }
                Some("") | None => {}
                Some(other) => return Err(bad(&format!("unknown key {other}"))),
            }
        }
        let emb_dim = emb_dim.ok_or_else(|| bad("missing embedding_dim"))?;
        let (h1, h2) = h.ok_or_else(|| bad("missing hidden"))?;
        let vocab = Vocabulary::from_levels(levels);
        let layout = Layout::new(&vocab, emb_dim, covariates, h1, h2);
        if layout.len != params.len() {
            return Err(Error::Dimension { expected: layout.len, got: params.len() });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("mlp checkpoint parameter".into()));
        }
        Ok(Mlp {
            layout,
            vocab,
            standardization,
            covariates,
            ignored,
            input_dropout: drop.0,
            hidden_dropout: drop.1,
            params,
        })
    }
}

struct Scratch {
    d0: Vec<f64>,
    d1: Vec<f64>,
    d2: Vec<f64>,
}

impl Scratch {
    fn new(l: &Layout) -> Self {
        Scratch { d0: vec![0.0; l.input], d1: vec![0.0; l.h1], d2: vec![0.0; l.h2] }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Fraction of records whose thresholded probability matches the label.
pub fn accuracy(probs: &[f64], records: &[ResponseRecord]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    let hits = probs.iter().zip(records).filter(|(p, r)| (**p >= 0.5) == r.correct).count();
    hits as f64 / records.len() as f64
}

/// Model from the best dev epoch plus the full history.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedMlp {
    pub model: Mlp,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
}

/// Patience counter over strictly improving scores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping { patience, best: f64::NEG_INFINITY, since_best: 0 }
    }

    /// Record a score; true when it is a new strict best.
    pub fn observe(&mut self, score: f64) -> bool {
        if score > self.best {
            self.best = score;
            self.since_best = 0;
            true
        } else {
            self.since_best += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.since_best >= self.patience
    }

    pub fn best(&self) -> f64 {
        self.best
    }
}

/// Train on `train`, early-stopping on `dev` accuracy.
pub fn train(train: &[ResponseRecord], dev: &[ResponseRecord], cfg: &MlpConfig) -> Result<TrainedMlp> {
    cfg.validate()?;
    if train.is_empty() || dev.is_empty() {
        return Err(Error::NotEnoughData("mlp training needs non-empty train and dev sets".into()));
    }
    let standardization =
        if cfg.uses_covariates() { fit_standardization(train)? } else { Standardization::default() };
    let mut model = Mlp::init(Vocabulary::fit(train), standardization, cfg)?;
    let examples: Vec<Encoded> = train.iter().map(|r| model.encode(r)).collect();
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let batch = cfg.batch_size.unwrap_or(examples.len()).min(examples.len());
    let mut opt = AdamW::new(cfg.optimizer, model.n_params());
    let mut rng = rng::stream(cfg.seed, streams::MLP_TRAIN);
    let mut grad = vec![0.0; model.n_params()];
    let mut stop = EarlyStopping::new(cfg.patience);
    let mut best = (model.params.clone(), 0);
    let mut history = Vec::new();
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(batch) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let loss = model.accumulate(chunk.iter().map(|&i| &examples[i]), Some(&mut rng), &mut grad);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch });
            }
            loss_sum += loss * chunk.len() as f64;
            opt.step(&mut model.params, &grad);
        }
        let dev_acc = accuracy(&model.predict(dev), dev);
        history.push(EpochStats { epoch, train_loss: loss_sum / examples.len() as f64, dev_acc });
        if stop.observe(dev_acc) {
            best = (model.params.clone(), epoch);
        }
        if stop.should_stop() {
            break;
        }
    }
    model.params = best.0;
    Ok(TrainedMlp { model, history, best_epoch: best.1 })
}

/// Largest relative error between backprop and central differences over
/// up to `n_params` randomly chosen parameters, dropout off.
pub fn gradients_check(model: &Mlp, records: &[ResponseRecord], n_params: usize, seed: u64) -> f64 {
    let batch: Vec<Encoded> = records.iter().map(|r| model.encode(r)).collect();
    let (_, grad) = model.loss_and_grad(&batch, None);
    let mut idx: Vec<usize> = (0..model.n_params()).collect();
    idx.shuffle(&mut rng::stream(seed, 0));
    idx.truncate(n_params);
    let h = 1e-5;
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for i in idx {
        let orig = probe.params[i];
        probe.params[i] = orig + h;
        let up = probe.loss_and_grad(&batch, None).0;
        probe.params[i] = orig - h;
        let down = probe.loss_and_grad(&batch, None).0;
        probe.params[i] = orig;
        let fd = (up - down) / (2.0 * h);
        let err = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-6);
        worst = worst.max(err);
    }
    worst
}
