//! Model and report files.
//!
//! | file               | content                                              |
//! |--------------------|------------------------------------------------------|
//! | `schema.txt`       | `term\|levels=column` lines                          |
//! | `standardization.txt` | `covariate<TAB>mean<TAB>sd` lines                 |
//! | `posterior.txt`    | `latent<TAB>mu<TAB>sigma` lines plus schema reference |
//! | `trace.csv`        | `iteration,elbo`                                     |
//! | `effects.csv`      | `term,level,mean,sd,prob_delta`                      |
//! | `contrasts.csv`    | `pair,diff,ci_low,ci_high,cohens_d,p,comparator`     |
//! | `grid_<term>.csv`  | `row,col,mean,sd,observed`                           |
//! | `history.csv`      | `epoch,train_loss,dev_acc`                           |
//! | `truth.csv`        | `column,beta_true`                                   |
//! | `mlp.txt`          | versioned manifest and flat parameter dump           |

use std::fs;
use std::path::Path;

use prepstudy_core::bayes::{ModelSpec, Posterior};
use prepstudy_core::design::{DesignSchema, Standardization, ZParams};
use prepstudy_core::effects::{ContrastReport, EffectSummary, InteractionGrid};
use prepstudy_core::mlp::{EpochStats, Mlp};
use prepstudy_core::synth::TruthSpec;

use crate::error::{Error, Result};

pub fn read_text(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Write a header and rows through the csv writer.
pub fn write_csv<I, R>(path: impl AsRef<Path>, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(header).map_err(|e| Error::csv(path, e))?;
    for row in rows {
        w.write_record(row).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_schema(path: impl AsRef<Path>, schema: &DesignSchema) -> Result<()> {
    write_text(path, &schema.to_text())
}

pub fn read_schema(path: impl AsRef<Path>) -> Result<DesignSchema> {
    let path = path.as_ref();
    DesignSchema::from_text(&read_text(path)?).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_standardization(path: impl AsRef<Path>, std: &Standardization) -> Result<()> {
    let mut s = String::from("# covariate\tmean\tsd\n");
    for (name, z) in [("p_tgt", std.p_tgt), ("p_ctx", std.p_ctx)] {
        if let Some(z) = z {
            s += &format!("{name}\t{}\t{}\n", z.mean, z.sd);
        }
    }
    write_text(path, &s)
}

pub fn read_standardization(path: impl AsRef<Path>) -> Result<Standardization> {
    let path = path.as_ref();
    let mut std = Standardization::default();
    for line in read_text(path)?.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty()) {
        let f: Vec<&str> = line.split('\t').collect();
        let num = |i: usize| -> Result<f64> {
            f.get(i).and_then(|v| v.parse().ok()).ok_or_else(|| Error::format(path, format!("bad line {line:?}")))
        };
        let z = ZParams { mean: num(1)?, sd: num(2)? };
        match f[0] {
            "p_tgt" => std.p_tgt = Some(z),
            "p_ctx" => std.p_ctx = Some(z),
            other => return Err(Error::format(path, format!("unknown covariate {other}"))),
        }
    }
    Ok(std)
}

pub fn write_posterior(path: impl AsRef<Path>, spec: &ModelSpec, post: &Posterior, schema_ref: &str) -> Result<()> {
    write_text(path, &post.to_text(spec, schema_ref))
}

pub fn read_posterior(path: impl AsRef<Path>, spec: &ModelSpec) -> Result<Posterior> {
    let path = path.as_ref();
    Posterior::from_text(spec, &read_text(path)?).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_trace(path: impl AsRef<Path>, trace: &[f64]) -> Result<()> {
    write_csv(
        path,
        &["iteration", "elbo"],
        trace.iter().enumerate().map(|(i, e)| [(i + 1).to_string(), e.to_string()]),
    )
}

pub fn write_effects(path: impl AsRef<Path>, effects: &[EffectSummary], baseline_logit: f64) -> Result<()> {
    write_csv(
        path,
        &["term", "level", "mean", "sd", "prob_delta"],
        effects.iter().map(|e| {
            [
                e.term.clone(),
                e.level.clone(),
                e.mean.to_string(),
                e.sd.to_string(),
                e.probability_delta(baseline_logit).to_string(),
            ]
        }),
    )
}

/// Contrasts with the comparator convention spelled out per row.
pub fn write_contrasts(path: impl AsRef<Path>, rows: &[(ContrastReport, &str)]) -> Result<()> {
    write_csv(
        path,
        &["pair", "diff", "ci_low", "ci_high", "cohens_d", "p", "comparator"],
        rows.iter().map(|(c, comparator)| {
            [
                format!("{} vs {}", c.level_a, c.level_b),
                c.diff_mean.to_string(),
                c.ci95.0.to_string(),
                c.ci95.1.to_string(),
                c.cohens_d.to_string(),
                c.p_value.to_string(),
                comparator.to_string(),
            ]
        }),
    )
}

pub fn write_grid(path: impl AsRef<Path>, grid: &InteractionGrid) -> Result<()> {
    let mut rows = Vec::with_capacity(grid.cells.len());
    for (r, row) in grid.rows.iter().enumerate() {
        for (c, col) in grid.cols.iter().enumerate() {
            let cell = grid.cell(r, c);
            rows.push([
                row.clone(),
                col.clone(),
                cell.effect.mean.to_string(),
                cell.effect.sd.to_string(),
                u8::from(cell.observed).to_string(),
            ]);
        }
    }
    write_csv(path, &["row", "col", "mean", "sd", "observed"], rows)
}

pub fn write_history(path: impl AsRef<Path>, history: &[EpochStats]) -> Result<()> {
    write_csv(
        path,
        &["epoch", "train_loss", "dev_acc"],
        history.iter().map(|h| [h.epoch.to_string(), h.train_loss.to_string(), h.dev_acc.to_string()]),
    )
}

pub fn write_truth(path: impl AsRef<Path>, truth: &TruthSpec) -> Result<()> {
    write_csv(
        path,
        &["column", "beta_true"],
        truth.beta.iter().enumerate().map(|(j, b)| [truth.schema.column_key(j), b.to_string()]),
    )
}

pub fn write_mlp(path: impl AsRef<Path>, model: &Mlp) -> Result<()> {
    write_text(path, &model.to_text())
}

pub fn read_mlp(path: impl AsRef<Path>) -> Result<Mlp> {
    let path = path.as_ref();
    Mlp::from_text(&read_text(path)?).map_err(|e| Error::format(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standardization_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("std.txt");
        let std = Standardization {
            p_tgt: Some(ZParams { mean: 0.4, sd: 0.3 }),
            p_ctx: None,
        };
        write_standardization(&p, &std).unwrap();
        assert_eq!(read_standardization(&p).unwrap(), std);
        write_text(&p, "p_xyz\t1\t2\n").unwrap();
        assert!(read_standardization(&p).is_err());
    }

    #[test]
    fn trace_rows_are_one_based() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("trace.csv");
        write_trace(&p, &[-3.0, -2.5]).unwrap();
        assert_eq!(read_text(&p).unwrap(), "iteration,elbo\n1,-3\n2,-2.5\n");
    }
}
