//! Response records, tables, and the stimulus-covariate join.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::{Error, Result};

macro_rules! category {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $label:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $label),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($label => Ok($name::$variant),)+
                    _ => Err(Error::Parse(format!(
                        "unknown {} label {:?}",
                        stringify!($name),
                        s
                    ))),
                }
            }
        }
    };
}

category!(
    /// Instruction method of the student's group.
    Instruction { Sm => "SM", Rm => "RM", Cm => "CM", Ctrl => "CTRL" }
);
category!(Time { Pre => "PRE", Post => "POST", Dly => "DLY" });
category!(Test { Gjt => "GJT", Pet => "PET" });
category!(
    /// Expected answer type: grammatical GJT item, ungrammatical GJT item, or PET.
    Answer { GjtY => "GJT-Y", GjtN => "GJT-N", Pet => "PET" }
);
category!(FormFxn {
    InCtn => "in-Ctn",
    AtTgt => "at-Tgt",
    AtPnt => "at-Pnt",
    OverHir => "over-Hir",
    OverCrs => "over-Crs",
    OverCvr => "over-Cvr",
});
category!(Usage { Spatial => "Spatial", Abstract => "Abstract" });

/// A record field usable as a model input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Factor {
    Student,
    Instruction,
    Time,
    Test,
    Answer,
    FormFxn,
    Usage,
    PTgt,
    PCtx,
}

impl Factor {
    pub const ALL: &'static [Factor] = &[
        Factor::Student,
        Factor::Instruction,
        Factor::Time,
        Factor::Test,
        Factor::Answer,
        Factor::FormFxn,
        Factor::Usage,
        Factor::PTgt,
        Factor::PCtx,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Factor::Student => "student",
            Factor::Instruction => "instruction",
            Factor::Time => "time",
            Factor::Test => "test",
            Factor::Answer => "answer",
            Factor::FormFxn => "form_fxn",
            Factor::Usage => "usage",
            Factor::PTgt => "p_tgt",
            Factor::PCtx => "p_ctx",
        }
    }

    pub fn from_name(name: &str) -> Option<Factor> {
        Factor::ALL.iter().copied().find(|f| f.name() == name)
    }

    pub fn is_continuous(self) -> bool {
        matches!(self, Factor::PTgt | Factor::PCtx)
    }

    /// Closed level set, or `None` for student (open) and continuous factors.
    pub fn closed_levels(self) -> Option<Vec<&'static str>> {
        fn labels<T: Copy>(all: &[T], f: impl Fn(T) -> &'static str) -> Option<Vec<&'static str>> {
            Some(all.iter().map(|&v| f(v)).collect())
        }
        match self {
            Factor::Instruction => labels(Instruction::ALL, Instruction::as_str),
            Factor::Time => labels(Time::ALL, Time::as_str),
            Factor::Test => labels(Test::ALL, Test::as_str),
            Factor::Answer => labels(Answer::ALL, Answer::as_str),
            Factor::FormFxn => labels(FormFxn::ALL, FormFxn::as_str),
            Factor::Usage => labels(Usage::ALL, Usage::as_str),
            Factor::Student | Factor::PTgt | Factor::PCtx => None,
        }
    }
}

impl fmt::Display for Factor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Characters that may not appear in student or item ids; they delimit
/// level tuples in the schema and posterior files.
pub const RESERVED_ID_CHARS: &[char] = &[',', '|', '=', '\t', '\n', '\r'];

/// One student's graded answer to one item at one time point.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseRecord {
    pub student_id: String,
    pub instruction: Instruction,
    pub time: Time,
    pub test: Test,
    pub answer: Answer,
    pub form_fxn: FormFxn,
    pub usage: Usage,
    pub item_id: String,
    pub correct: bool,
    pub p_tgt: Option<f64>,
    pub p_ctx: Option<f64>,
}

impl ResponseRecord {
    /// Categorical level of `factor`, `None` for continuous factors.
    pub fn level(&self, factor: Factor) -> Option<&str> {
        Some(match factor {
            Factor::Student => self.student_id.as_str(),
            Factor::Instruction => self.instruction.as_str(),
            Factor::Time => self.time.as_str(),
            Factor::Test => self.test.as_str(),
            Factor::Answer => self.answer.as_str(),
            Factor::FormFxn => self.form_fxn.as_str(),
            Factor::Usage => self.usage.as_str(),
            Factor::PTgt | Factor::PCtx => return None,
        })
    }

    pub fn covariate(&self, factor: Factor) -> Option<f64> {
        match factor {
            Factor::PTgt => self.p_tgt,
            Factor::PCtx => self.p_ctx,
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.student_id.is_empty() || self.item_id.is_empty() {
            return Err(Error::InvalidRecord("empty student_id or item_id".into()));
        }
        for id in [&self.student_id, &self.item_id] {
            if id.contains(RESERVED_ID_CHARS) {
                return Err(Error::InvalidRecord(format!(
                    "identifier {id:?} contains a reserved character"
                )));
            }
        }
        let consistent = matches!(
            (self.test, self.answer),
            (Test::Pet, Answer::Pet) | (Test::Gjt, Answer::GjtY) | (Test::Gjt, Answer::GjtN)
        );
        if !consistent {
            return Err(Error::InvalidRecord(format!(
                "answer {} is inconsistent with test {}",
                self.answer, self.test
            )));
        }
        for (name, value) in [("p_tgt", self.p_tgt), ("p_ctx", self.p_ctx)] {
            if let Some(p) = value {
                if self.test == Test::Pet {
                    return Err(Error::InvalidRecord(format!("PET record carries {name}")));
                }
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::InvalidRecord(format!("{name}={p} outside [0,1]")));
                }
            }
        }
        Ok(())
    }
}

/// Where a table came from.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Provenance {
    pub source: String,
    pub loaded_at: String,
}

/// Validated, immutable list of responses.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResponseTable {
    records: Vec<ResponseRecord>,
    pub provenance: Option<Provenance>,
}

impl ResponseTable {
    /// Validates every record and the uniqueness of (student, item, time).
    pub fn new(records: Vec<ResponseRecord>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for r in &records {
            r.validate()?;
            if !seen.insert((r.student_id.as_str(), r.item_id.as_str(), r.time)) {
                return Err(Error::DuplicateResponse {
                    student: r.student_id.clone(),
                    item: r.item_id.clone(),
                    time: r.time.to_string(),
                });
            }
        }
        Ok(ResponseTable { records, provenance: None })
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = Some(provenance);
        self
    }

    /// Sub-table from records already known to be valid and unique.
    pub(crate) fn from_subset(records: Vec<ResponseRecord>, provenance: Option<Provenance>) -> Self {
        ResponseTable { records, provenance }
    }

    pub fn records(&self) -> &[ResponseRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn into_records(self) -> Vec<ResponseRecord> {
        self.records
    }

    pub fn filter_test(&self, test: Test) -> ResponseTable {
        let records = self.records.iter().filter(|r| r.test == test).cloned().collect();
        ResponseTable::from_subset(records, self.provenance.clone())
    }

    pub fn count_test(&self, test: Test) -> usize {
        self.records.iter().filter(|r| r.test == test).count()
    }

    /// Fraction of records with `correct = 1`.
    pub fn positive_rate(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.records.iter().filter(|r| r.correct).count() as f64 / self.records.len() as f64
    }

    /// Students with fewer than `min_responses` records, sorted by id.
    pub fn sparse_students(&self, min_responses: usize) -> Vec<(String, usize)> {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for r in &self.records {
            *counts.entry(r.student_id.as_str()).or_default() += 1;
        }
        counts
            .into_iter()
            .filter(|&(_, n)| n < min_responses)
            .map(|(s, n)| (s.to_string(), n))
            .collect()
    }

    /// Attach masked-LM covariates to GJT records by item id.
    pub fn join_lm_features(&self, feats: &[StimulusFeatures]) -> Result<ResponseTable> {
        let mut by_item: BTreeMap<&str, &StimulusFeatures> = BTreeMap::new();
        for f in feats {
            f.validate()?;
            if by_item.insert(f.item_id.as_str(), f).is_some() {
                return Err(Error::DuplicateFeature(f.item_id.clone()));
            }
        }
        let records = self
            .records
            .iter()
            .map(|r| {
                let mut r = r.clone();
                if r.test == Test::Gjt {
                    if let Some(f) = by_item.get(r.item_id.as_str()) {
                        r.p_tgt = Some(f.p_tgt);
                        r.p_ctx = Some(f.p_ctx);
                    }
                }
                r
            })
            .collect();
        Ok(ResponseTable::from_subset(records, self.provenance.clone()))
    }
}

/// Per-stimulus masked-LM probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct StimulusFeatures {
    pub item_id: String,
    pub p_tgt: f64,
    pub p_ctx: f64,
}

impl StimulusFeatures {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("p_tgt", self.p_tgt), ("p_ctx", self.p_ctx)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidRecord(format!(
                    "{name}={p} outside [0,1] for item {}",
                    self.item_id
                )));
            }
        }
        Ok(())
    }
}
