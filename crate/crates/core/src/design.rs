//! Effect terms, design schemas and sparse feature encoding.
//!
//! A [`DesignSchema`] assigns one dense column index to every level tuple of
//! every term seen in training data. Categorical terms use full dummy coding
//! (no reference level is dropped); the hierarchical priors make the model
//! identifiable. Continuous terms (the LM covariates) get a single column
//! holding the standardized score, or the product of scores for the
//! interaction term.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write as _;

use crate::math;
use crate::record::{Factor, ResponseRecord};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TermKind {
    Intercept,
    /// Categorical term with a learned group scale.
    Random,
    /// Continuous term with a fixed prior.
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Term {
    factors: Vec<Factor>,
    kind: TermKind,
}

impl Term {
    pub fn intercept() -> Self {
        Term { factors: Vec::new(), kind: TermKind::Intercept }
    }

    /// Categorical main effect (one factor) or interaction.
    pub fn random(factors: &[Factor]) -> Result<Self> {
        Self::checked(factors, TermKind::Random)
    }

    /// Continuous term over the LM covariates.
    pub fn fixed(factors: &[Factor]) -> Result<Self> {
        Self::checked(factors, TermKind::Fixed)
    }

    fn checked(factors: &[Factor], kind: TermKind) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::Schema("term needs at least one factor".into()));
        }
        let unique: BTreeSet<_> = factors.iter().collect();
        if unique.len() != factors.len() {
            return Err(Error::Schema(format!("duplicate factor in term {factors:?}")));
        }
        let want_continuous = kind == TermKind::Fixed;
        if factors.iter().any(|f| f.is_continuous() != want_continuous) {
            return Err(Error::Schema(format!(
                "term {factors:?} mixes categorical and continuous factors"
            )));
        }
        Ok(Term { factors: factors.to_vec(), kind })
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn kind(&self) -> TermKind {
        self.kind
    }

    pub fn contains(&self, factor: Factor) -> bool {
        self.factors.contains(&factor)
    }

    /// True when the term's factor set equals `factors`, ignoring order.
    pub fn matches(&self, factors: &[Factor]) -> bool {
        self.factors.len() == factors.len() && factors.iter().all(|f| self.contains(*f))
    }

    /// `intercept`, `time`, `instruction:time`, `p_tgt:p_ctx`, ...
    pub fn name(&self) -> String {
        if self.kind == TermKind::Intercept {
            return "intercept".to_string();
        }
        let mut out = String::new();
        for (i, f) in self.factors.iter().enumerate() {
            if i > 0 {
                out.push(':');
            }
            out.push_str(f.name());
        }
        out
    }

    pub fn parse(name: &str) -> Result<Self> {
        if name == "intercept" {
            return Ok(Term::intercept());
        }
        let factors = name
            .split(':')
            .map(|n| Factor::from_name(n).ok_or_else(|| Error::Schema(format!("unknown factor {n:?}"))))
            .collect::<Result<Vec<_>>>()?;
        if factors.iter().all(|f| f.is_continuous()) {
            Term::fixed(&factors)
        } else {
            Term::random(&factors)
        }
    }
}

/// Which data a model sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Both tests; no LM covariates.
    GjtPet,
    /// GJT records only, with the LM covariates as fixed effects.
    GjtOnly,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::GjtPet => "gjt+pet",
            Mode::GjtOnly => "gjt",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gjt+pet" => Ok(Mode::GjtPet),
            "gjt" => Ok(Mode::GjtOnly),
            _ => Err(Error::Parse(format!("unknown mode {s:?} (expected gjt or gjt+pet)"))),
        }
    }
}

/// Factors crossed with each other at every order.
pub const CROSSED_FACTORS: [Factor; 5] =
    [Factor::Instruction, Factor::Time, Factor::Answer, Factor::FormFxn, Factor::Usage];

/// The full term set: every non-empty subset of [`CROSSED_FACTORS`], the
/// student main effect, student crossed with usage, form-fxn and answer, and
/// in GJT-only mode the covariates `p_tgt`, `p_ctx` and `p_tgt:p_ctx`.
pub fn default_terms(mode: Mode) -> Vec<Term> {
    let mut terms = vec![Term::intercept()];
    let n = CROSSED_FACTORS.len();
    let mut subsets: Vec<Vec<Factor>> = (1u32..(1 << n))
        .map(|mask| (0..n).filter(|i| mask & (1 << i) != 0).map(|i| CROSSED_FACTORS[i]).collect())
        .collect();
    subsets.sort_by_key(|s| s.len());
    for s in subsets {
        terms.push(Term { factors: s, kind: TermKind::Random });
    }
    terms.push(Term { factors: vec![Factor::Student], kind: TermKind::Random });
    for f in [Factor::Usage, Factor::FormFxn, Factor::Answer] {
        terms.push(Term { factors: vec![Factor::Student, f], kind: TermKind::Random });
    }
    if mode == Mode::GjtOnly {
        terms.push(Term { factors: vec![Factor::PTgt], kind: TermKind::Fixed });
        terms.push(Term { factors: vec![Factor::PCtx], kind: TermKind::Fixed });
        terms.push(Term { factors: vec![Factor::PTgt, Factor::PCtx], kind: TermKind::Fixed });
    }
    terms
}

/// Drop every term that contains any of `removed` (main effects and all
/// their interactions). The intercept always stays.
pub fn without_factors(terms: &[Term], removed: &[Factor]) -> Vec<Term> {
    terms.iter().filter(|t| !removed.iter().any(|f| t.contains(*f))).cloned().collect()
}

/// Mean and (n−1) standard deviation of one covariate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZParams {
    pub mean: f64,
    pub sd: f64,
}

impl ZParams {
    #[inline]
    pub fn z(&self, x: f64) -> f64 {
        (x - self.mean) / self.sd
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Standardization {
    pub p_tgt: Option<ZParams>,
    pub p_ctx: Option<ZParams>,
}

impl Standardization {
    pub fn get(&self, factor: Factor) -> Option<ZParams> {
        match factor {
            Factor::PTgt => self.p_tgt,
            Factor::PCtx => self.p_ctx,
            _ => None,
        }
    }

    /// Standardized covariate value of a record, if both are available.
    pub fn z(&self, record: &ResponseRecord, factor: Factor) -> Option<f64> {
        Some(self.get(factor)?.z(record.covariate(factor)?))
    }
}

/// Sample mean and sd over training records that carry each covariate.
/// A covariate carried by no record is left unstandardized (`None`).
pub fn fit_standardization(train: &[ResponseRecord]) -> Result<Standardization> {
    fn fit(values: Vec<f64>, name: &'static str) -> Result<Option<ZParams>> {
        if values.is_empty() {
            return Ok(None);
        }
        if values.len() < 2 {
            return Err(Error::ConstantCovariate(name));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        let sd = math::sqrt(var);
        if !(sd > 0.0) || !sd.is_finite() {
            return Err(Error::ConstantCovariate(name));
        }
        Ok(Some(ZParams { mean, sd }))
    }
    Ok(Standardization {
        p_tgt: fit(train.iter().filter_map(|r| r.p_tgt).collect(), "p_tgt")?,
        p_ctx: fit(train.iter().filter_map(|r| r.p_ctx).collect(), "p_ctx")?,
    })
}

/// One column of the design: a term and one of its level tuples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Column {
    pub term: usize,
    pub levels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DesignSchema {
    terms: Vec<Term>,
    columns: Vec<Column>,
    // per term: "lvl1,lvl2" -> column
    lookup: Vec<BTreeMap<String, usize>>,
    // per term: index among random terms
    groups: Vec<Option<usize>>,
    n_groups: usize,
}

/// Sparse encoded row.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureVector {
    pub active: Vec<(usize, f64)>,
}

impl FeatureVector {
    pub fn dot(&self, beta: &[f64]) -> f64 {
        self.active.iter().map(|&(j, x)| x * beta[j]).sum()
    }
}

/// Counts of graceful degradations during encoding.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EncodeDiagnostics {
    /// term name -> records whose level tuple was unknown to the schema
    pub unknown_levels: BTreeMap<String, usize>,
    pub missing_covariates: usize,
}

impl EncodeDiagnostics {
    pub fn is_clean(&self) -> bool {
        self.unknown_levels.is_empty() && self.missing_covariates == 0
    }
}

fn level_key(levels: &[String]) -> String {
    levels.join(",")
}

impl DesignSchema {
    /// Enumerate the level tuples of each term that occur in `records`.
    /// Columns are laid out term by term, tuples in lexicographic order.
    pub fn fit(terms: Vec<Term>, records: &[ResponseRecord]) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for t in &terms {
            if !seen.insert(t.clone()) {
                return Err(Error::Schema(format!("duplicate term {}", t.name())));
            }
        }
        let mut columns = Vec::new();
        for (ti, term) in terms.iter().enumerate() {
            match term.kind {
                TermKind::Intercept | TermKind::Fixed => {
                    columns.push(Column { term: ti, levels: Vec::new() })
                }
                TermKind::Random => {
                    let tuples: BTreeSet<Vec<String>> = records
                        .iter()
                        .map(|r| {
                            term.factors
                                .iter()
                                .map(|f| r.level(*f).unwrap_or_default().to_string())
                                .collect()
                        })
                        .collect();
                    columns.extend(tuples.into_iter().map(|levels| Column { term: ti, levels }));
                }
            }
        }
        Self::from_parts(terms, columns)
    }

    /// Schema over the default term set of `mode`.
    pub fn default_for(mode: Mode, train: &[ResponseRecord]) -> Result<Self> {
        Self::fit(default_terms(mode), train)
    }

    /// Assemble from an explicit column layout (e.g. when reading a schema
    /// file). Columns of the same term must be contiguous.
    pub fn from_parts(terms: Vec<Term>, columns: Vec<Column>) -> Result<Self> {
        let mut lookup = vec![BTreeMap::new(); terms.len()];
        for (j, c) in columns.iter().enumerate() {
            let term = terms
                .get(c.term)
                .ok_or_else(|| Error::Schema(format!("column {j} references missing term")))?;
            let expected_len = if term.kind == TermKind::Random { term.factors.len() } else { 0 };
            if c.levels.len() != expected_len {
                return Err(Error::Schema(format!(
                    "column {j}: {} levels for term {}",
                    c.levels.len(),
                    term.name()
                )));
            }
            if lookup[c.term].insert(level_key(&c.levels), j).is_some() {
                return Err(Error::Schema(format!("duplicate column for term {}", term.name())));
            }
        }
        for (ti, t) in terms.iter().enumerate() {
            if t.kind != TermKind::Random && lookup[ti].len() != 1 {
                return Err(Error::Schema(format!("term {} needs exactly one column", t.name())));
            }
        }
        let mut groups = Vec::with_capacity(terms.len());
        let mut n_groups = 0;
        for t in &terms {
            if t.kind == TermKind::Random {
                groups.push(Some(n_groups));
                n_groups += 1;
            } else {
                groups.push(None);
            }
        }
        Ok(DesignSchema { terms, columns, lookup, groups, n_groups })
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn n_columns(&self) -> usize {
        self.columns.len()
    }

    /// Number of random (categorical) terms, each owning one group scale.
    pub fn n_groups(&self) -> usize {
        self.n_groups
    }

    /// Group-scale index of a column, `None` for intercept and fixed columns.
    pub fn group_of_column(&self, column: usize) -> Option<usize> {
        self.groups[self.columns[column].term]
    }

    pub fn group_of_term(&self, term: usize) -> Option<usize> {
        self.groups[term]
    }

    /// Term index owning group `g`.
    pub fn term_of_group(&self, g: usize) -> usize {
        self.groups.iter().position(|x| *x == Some(g)).expect("group index in range")
    }

    pub fn term_index(&self, factors: &[Factor]) -> Option<usize> {
        if factors.is_empty() {
            return self.terms.iter().position(|t| t.kind == TermKind::Intercept);
        }
        self.terms.iter().position(|t| t.matches(factors))
    }

    pub fn intercept_column(&self) -> Option<usize> {
        let ti = self.term_index(&[])?;
        self.lookup[ti].values().next().copied()
    }

    /// Column for a term and level tuple given in the term's factor order.
    pub fn column(&self, term: usize, levels: &[&str]) -> Option<usize> {
        self.lookup.get(term)?.get(levels.join(",").as_str()).copied()
    }

    /// Level tuples of a term with their columns, in column order.
    pub fn term_columns(&self, term: usize) -> impl Iterator<Item = (usize, &[String])> + '_ {
        self.columns
            .iter()
            .enumerate()
            .filter(move |(_, c)| c.term == term)
            .map(|(j, c)| (j, c.levels.as_slice()))
    }

    /// `term|level,level` key of a column.
    pub fn column_key(&self, column: usize) -> String {
        let c = &self.columns[column];
        format!("{}|{}", self.terms[c.term].name(), level_key(&c.levels))
    }

    pub fn encode(&self, record: &ResponseRecord, std: &Standardization) -> FeatureVector {
        self.encode_with_diagnostics(record, std, &mut EncodeDiagnostics::default())
    }

    /// Encode one record. Unknown level tuples and missing covariates
    /// contribute nothing and are counted in `diag`.
    pub fn encode_with_diagnostics(
        &self,
        record: &ResponseRecord,
        std: &Standardization,
        diag: &mut EncodeDiagnostics,
    ) -> FeatureVector {
        let mut active = Vec::with_capacity(self.terms.len());
        let mut key = String::new();
        for (ti, term) in self.terms.iter().enumerate() {
            match term.kind {
                TermKind::Intercept => active.push((self.first_column(ti), 1.0)),
                TermKind::Fixed => {
                    let mut value = 1.0;
                    let mut present = true;
                    for f in &term.factors {
                        match std.z(record, *f) {
                            Some(z) => value *= z,
                            None => present = false,
                        }
                    }
                    if present {
                        active.push((self.first_column(ti), value));
                    } else {
                        diag.missing_covariates += 1;
                    }
                }
                TermKind::Random => {
                    key.clear();
                    for (i, f) in term.factors.iter().enumerate() {
                        if i > 0 {
                            key.push(',');
                        }
                        key.push_str(record.level(*f).unwrap_or_default());
                    }
                    match self.lookup[ti].get(key.as_str()) {
                        Some(&j) => active.push((j, 1.0)),
                        None => *diag.unknown_levels.entry(term.name()).or_default() += 1,
                    }
                }
            }
        }
        FeatureVector { active }
    }

    fn first_column(&self, term: usize) -> usize {
        *self.lookup[term].values().next().expect("non-random term has one column")
    }

    /// Plain-text `term|levels=index` lines, one per column, in index order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for j in 0..self.columns.len() {
            let _ = writeln!(out, "{}={}", self.column_key(j), j);
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut rows: Vec<(usize, String, Vec<String>)> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = || Error::Parse(format!("schema line {}: {line:?}", lineno + 1));
            let (key, idx) = line.rsplit_once('=').ok_or_else(bad)?;
            let (term, levels) = key.split_once('|').ok_or_else(bad)?;
            let idx: usize = idx.trim().parse().map_err(|_| bad())?;
            let levels = if levels.is_empty() {
                Vec::new()
            } else {
                levels.split(',').map(String::from).collect()
            };
            rows.push((idx, term.to_string(), levels));
        }
        rows.sort_by_key(|r| r.0);
        if rows.iter().enumerate().any(|(i, r)| r.0 != i) {
            return Err(Error::Schema("column indices are not dense 0..n".into()));
        }
        let mut terms: Vec<Term> = Vec::new();
        let mut term_names: Vec<String> = Vec::new();
        let mut columns = Vec::with_capacity(rows.len());
        for (_, name, levels) in rows {
            let ti = match term_names.iter().position(|n| *n == name) {
                Some(ti) => ti,
                None => {
                    terms.push(Term::parse(&name)?);
                    term_names.push(name);
                    terms.len() - 1
                }
            };
            columns.push(Column { term: ti, levels });
        }
        Self::from_parts(terms, columns)
    }
}
