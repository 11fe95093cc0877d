//! CSV interchange: responses, stimuli, stimulus features and stimulus
//! judgments.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use prepstudy_core::record::{Provenance, ResponseRecord, ResponseTable, StimulusFeatures};

use crate::error::{Error, Result};

pub const RESPONSE_COLUMNS: [&str; 9] =
    ["student_id", "instruction", "time", "test", "answer", "form_fxn", "usage", "item_id", "correct"];
pub const COVARIATE_COLUMNS: [&str; 2] = ["p_tgt", "p_ctx"];
pub const FEATURE_COLUMNS: [&str; 3] = ["item_id", "p_tgt", "p_ctx"];
pub const JUDGMENT_COLUMNS: [&str; 4] = ["item_id", "grammatical", "judge_pre", "judge_post"];
pub const STIMULUS_COLUMNS: [&str; 6] = ["item_id", "pair_id", "grammatical", "target_form", "target_index", "sentence"];

/// One test sentence, the input of the language-model probe that produces
/// the features CSV. `target_index` is the whitespace-token position of the
/// preposition.
#[derive(Debug, Clone, PartialEq)]
pub struct Stimulus {
    pub item_id: String,
    pub pair_id: String,
    pub grammatical: bool,
    pub target_form: String,
    pub target_index: usize,
    pub sentence: String,
}

/// Per-stimulus share of students judging the sentence grammatical, in
/// percent, at the pretest and the posttest; NaN (an empty field) when no
/// response is available.
#[derive(Debug, Clone, PartialEq)]
pub struct StimulusJudgment {
    pub item_id: String,
    pub grammatical: bool,
    pub judge_pre: f64,
    pub judge_post: f64,
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|e| Error::io(path, e))
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().has_headers(true).flexible(false).from_reader(input)
}

fn check_header(path: &Path, header: &csv::StringRecord, allowed: &[&[&str]]) -> Result<usize> {
    let got: Vec<&str> = header.iter().collect();
    allowed
        .iter()
        .position(|cols| got == *cols)
        .ok_or_else(|| Error::format(path, format!("unexpected header {:?}, expected {:?}", got, allowed[0])))
}

struct Row<'a> {
    path: &'a Path,
    line: u64,
    record: &'a csv::StringRecord,
    columns: &'a [&'a str],
}

impl Row<'_> {
    fn err(&self, k: usize, message: impl Into<String>) -> Error {
        Error::Row {
            path: self.path.to_path_buf(),
            line: self.line,
            field: self.columns[k].to_string(),
            message: message.into(),
        }
    }

    fn str(&self, k: usize) -> &str {
        self.record.get(k).unwrap_or("")
    }

    fn parse<T: FromStr>(&self, k: usize) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.str(k).parse().map_err(|e: T::Err| self.err(k, format!("{:?}: {e}", self.str(k))))
    }

    fn flag(&self, k: usize) -> Result<bool> {
        match self.str(k) {
            "0" => Ok(false),
            "1" => Ok(true),
            other => Err(self.err(k, format!("{other:?} is not 0 or 1"))),
        }
    }

    fn probability(&self, k: usize) -> Result<Option<f64>> {
        if self.str(k).is_empty() {
            return Ok(None);
        }
        let v: f64 = self.parse(k)?;
        if !(0.0..=1.0).contains(&v) {
            return Err(self.err(k, format!("{v} outside [0,1]")));
        }
        Ok(Some(v))
    }
}

fn line_of(r: &csv::StringRecord) -> u64 {
    r.position().map_or(0, |p| p.line())
}

/// Load and validate a responses CSV; row order is kept.
pub fn load_responses(path: impl AsRef<Path>) -> Result<ResponseTable> {
    let path = path.as_ref();
    let table = read_responses(open(path)?, path)?;
    let loaded_at = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    Ok(table.with_provenance(Provenance {
        source: path.display().to_string(),
        loaded_at: format!("unix:{loaded_at}"),
    }))
}

/// Parse responses from any reader; `path` only labels errors.
pub fn read_responses<R: Read>(input: R, path: &Path) -> Result<ResponseTable> {
    let mut rdr = reader(input);
    let full: Vec<&str> = RESPONSE_COLUMNS.iter().chain(&COVARIATE_COLUMNS).copied().collect();
    let header = rdr.headers().map_err(|e| Error::csv(path, e))?.clone();
    let with_covariates = check_header(path, &header, &[&RESPONSE_COLUMNS, &full])? == 1;
    let mut records = Vec::new();
    for row in rdr.records() {
        let record = row.map_err(|e| Error::csv(path, e))?;
        let row = Row { path, line: line_of(&record), record: &record, columns: &full };
        let r = ResponseRecord {
            student_id: row.str(0).to_string(),
            instruction: row.parse(1)?,
            time: row.parse(2)?,
            test: row.parse(3)?,
            answer: row.parse(4)?,
            form_fxn: row.parse(5)?,
            usage: row.parse(6)?,
            item_id: row.str(7).to_string(),
            correct: row.flag(8)?,
            p_tgt: if with_covariates { row.probability(9)? } else { None },
            p_ctx: if with_covariates { row.probability(10)? } else { None },
        };
        r.validate().map_err(|e| Error::Row {
            path: path.to_path_buf(),
            line: row.line,
            field: "record".into(),
            message: e.to_string(),
        })?;
        records.push(r);
    }
    ResponseTable::new(records).map_err(|e| Error::format(path, e.to_string()))
}

/// Write a responses CSV; covariate columns are emitted when any record
/// carries a covariate.
pub fn write_responses(path: impl AsRef<Path>, table: &ResponseTable) -> Result<()> {
    let path = path.as_ref();
    let mut out = create(path)?;
    write_responses_to(&mut out, table).map_err(|e| Error::csv(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn write_responses_to<W: Write>(out: W, table: &ResponseTable) -> csv::Result<()> {
    let with_covariates = table.records().iter().any(|r| r.p_tgt.is_some() || r.p_ctx.is_some());
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = RESPONSE_COLUMNS.to_vec();
    if with_covariates {
        header.extend(COVARIATE_COLUMNS);
    }
    w.write_record(&header)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in table.records() {
        let mut row = vec![
            r.student_id.clone(),
            r.instruction.to_string(),
            r.time.to_string(),
            r.test.to_string(),
            r.answer.to_string(),
            r.form_fxn.to_string(),
            r.usage.to_string(),
            r.item_id.clone(),
            if r.correct { "1" } else { "0" }.to_string(),
        ];
        if with_covariates {
            row.push(opt(r.p_tgt));
            row.push(opt(r.p_ctx));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_features(path: impl AsRef<Path>) -> Result<Vec<StimulusFeatures>> {
    let path = path.as_ref();
    let mut rdr = reader(open(path)?);
    let header = rdr.headers().map_err(|e| Error::csv(path, e))?.clone();
    check_header(path, &header, &[&FEATURE_COLUMNS])?;
    let mut out = Vec::new();
    for row in rdr.records() {
        let record = row.map_err(|e| Error::csv(path, e))?;
        let row = Row { path, line: line_of(&record), record: &record, columns: &FEATURE_COLUMNS };
        let item_id = row.str(0).to_string();
        if item_id.is_empty() {
            return Err(row.err(0, "empty item id"));
        }
        let p_tgt = row.probability(1)?.ok_or_else(|| row.err(1, "missing value"))?;
        let p_ctx = row.probability(2)?.ok_or_else(|| row.err(2, "missing value"))?;
        out.push(StimulusFeatures { item_id, p_tgt, p_ctx });
    }
    Ok(out)
}

/// Write features at 6 decimal places, in the given order.
pub fn write_features(path: impl AsRef<Path>, feats: &[StimulusFeatures]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_writer(create(path)?);
    let run = |w: &mut csv::Writer<File>| -> csv::Result<()> {
        w.write_record(FEATURE_COLUMNS)?;
        for f in feats {
            w.write_record([f.item_id.clone(), format!("{:.6}", f.p_tgt), format!("{:.6}", f.p_ctx)])?;
        }
        w.flush()?;
        Ok(())
    };
    run(&mut w).map_err(|e| Error::csv(path, e))
}

pub fn load_judgments(path: impl AsRef<Path>) -> Result<Vec<StimulusJudgment>> {
    let path = path.as_ref();
    let mut rdr = reader(open(path)?);
    let header = rdr.headers().map_err(|e| Error::csv(path, e))?.clone();
    check_header(path, &header, &[&JUDGMENT_COLUMNS])?;
    let mut out = Vec::new();
    for row in rdr.records() {
        let record = row.map_err(|e| Error::csv(path, e))?;
        let row = Row { path, line: line_of(&record), record: &record, columns: &JUDGMENT_COLUMNS };
        let percent = |k: usize| -> Result<f64> {
            if row.str(k).is_empty() {
                return Ok(f64::NAN);
            }
            let v: f64 = row.parse(k)?;
            if !(0.0..=100.0).contains(&v) {
                return Err(row.err(k, format!("{v} outside [0,100]")));
            }
            Ok(v)
        };
        out.push(StimulusJudgment {
            item_id: row.str(0).to_string(),
            grammatical: row.flag(1)?,
            judge_pre: percent(2)?,
            judge_post: percent(3)?,
        });
    }
    Ok(out)
}

pub fn write_judgments(path: impl AsRef<Path>, judgments: &[StimulusJudgment]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_writer(create(path)?);
    let run = |w: &mut csv::Writer<File>| -> csv::Result<()> {
        w.write_record(JUDGMENT_COLUMNS)?;
        for j in judgments {
            w.write_record([
                j.item_id.clone(),
                if j.grammatical { "1" } else { "0" }.to_string(),
                percent_field(j.judge_pre),
                percent_field(j.judge_post),
            ])?;
        }
        w.flush()?;
        Ok(())
    };
    run(&mut w).map_err(|e| Error::csv(path, e))
}

fn percent_field(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        v.to_string()
    }
}

pub fn load_stimuli(path: impl AsRef<Path>) -> Result<Vec<Stimulus>> {
    let path = path.as_ref();
    let mut rdr = reader(open(path)?);
    let header = rdr.headers().map_err(|e| Error::csv(path, e))?.clone();
    check_header(path, &header, &[&STIMULUS_COLUMNS])?;
    let mut out = Vec::new();
    for row in rdr.records() {
        let record = row.map_err(|e| Error::csv(path, e))?;
        let row = Row { path, line: line_of(&record), record: &record, columns: &STIMULUS_COLUMNS };
        let s = Stimulus {
            item_id: row.str(0).to_string(),
            pair_id: row.str(1).to_string(),
            grammatical: row.flag(2)?,
            target_form: row.str(3).to_string(),
            target_index: row.parse(4)?,
            sentence: row.str(5).to_string(),
        };
        if s.item_id.is_empty() {
            return Err(row.err(0, "empty item id"));
        }
        let tokens: Vec<&str> = s.sentence.split_whitespace().collect();
        match tokens.get(s.target_index) {
            Some(t) if t.trim_matches(|c: char| !c.is_alphanumeric()) == s.target_form => {}
            _ => {
                return Err(row.err(4, format!("token {} of the sentence is not {:?}", s.target_index, s.target_form)))
            }
        }
        out.push(s);
    }
    Ok(out)
}

pub fn write_stimuli(path: impl AsRef<Path>, stimuli: &[Stimulus]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_writer(create(path)?);
    let run = |w: &mut csv::Writer<File>| -> csv::Result<()> {
        w.write_record(STIMULUS_COLUMNS)?;
        for s in stimuli {
            w.write_record([
                s.item_id.clone(),
                s.pair_id.clone(),
                if s.grammatical { "1" } else { "0" }.to_string(),
                s.target_form.clone(),
                s.target_index.to_string(),
                s.sentence.clone(),
            ])?;
        }
        w.flush()?;
        Ok(())
    };
    run(&mut w).map_err(|e| Error::csv(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "student_id,instruction,time,test,answer,form_fxn,usage,item_id,correct";

    fn parse(text: &str) -> Result<ResponseTable> {
        read_responses(text.as_bytes(), Path::new("mem.csv"))
    }

    #[test]
    fn header_only_is_empty() {
        assert!(parse(&format!("{HEADER}\n")).unwrap().is_empty());
    }

    #[test]
    fn inconsistent_row_names_its_line() {
        let text = format!("{HEADER}\ns1,SM,PRE,GJT,GJT-Y,over-Hir,Spatial,gjt-01a,1\ns1,SM,PRE,GJT,PET,over-Hir,Spatial,gjt-01b,1\n");
        let err = parse(&text).unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
    }

    #[test]
    fn bad_fields_are_named() {
        let text = format!("{HEADER}\ns1,SM,LATER,GJT,GJT-Y,over-Hir,Spatial,gjt-01a,1\n");
        let err = parse(&text).unwrap_err().to_string();
        assert!(err.contains("line 2") && err.contains("field time"), "{err}");
        let text = format!("{HEADER}\ns1,SM,PRE,GJT,GJT-Y,over-Hir,Spatial,gjt-01a,yes\n");
        assert!(parse(&text).unwrap_err().to_string().contains("field correct"));
        let text = format!("{HEADER}\ns1,sm,PRE,GJT,GJT-Y,over-Hir,Spatial,gjt-01a,1\n");
        assert!(parse(&text).unwrap_err().to_string().contains("field instruction"));
    }

    #[test]
    fn duplicates_and_headers_are_rejected() {
        let row = "s1,SM,PRE,GJT,GJT-Y,over-Hir,Spatial,gjt-01a,1";
        assert!(parse(&format!("{HEADER}\n{row}\n{row}\n")).unwrap_err().to_string().contains("duplicate"));
        assert!(parse("student,instruction\n").is_err());
    }

    #[test]
    fn covariate_columns_are_optional() {
        let text = format!(
            "{HEADER},p_tgt,p_ctx\ns1,SM,PRE,GJT,GJT-Y,over-Hir,Spatial,gjt-01a,1,0.967,0.6719\ns1,SM,PRE,PET,PET,over-Hir,Spatial,pet-01a,0,,\n"
        );
        let t = parse(&text).unwrap();
        assert_eq!(t.records()[0].p_tgt, Some(0.967));
        assert_eq!(t.records()[1].p_ctx, None);
        let text = format!("{HEADER},p_tgt,p_ctx\ns1,SM,PRE,PET,PET,over-Hir,Spatial,pet-01a,0,0.5,0.5\n");
        assert!(parse(&text).is_err());
    }
}
