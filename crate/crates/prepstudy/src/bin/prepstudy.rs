use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use prepstudy::artifacts::{create_dir, load_model, save_model, SavedModel};
use prepstudy::config::Config;
use prepstudy::formats::{write_contrasts, write_csv, write_effects, write_grid, write_history, write_text, write_truth};
use prepstudy::harness::{
    ablate, baseline_protocol, correlations, effect_report, fit_blm, judgments_from_responses, mode_table,
    run_protocol, seed_list, simulate, train_mlp, AblationGroup, ModelKind, ProtocolResult,
};
use prepstudy::io::{load_features, load_judgments, load_responses, write_features, write_judgments, write_responses};
use prepstudy_core::design::{default_terms, EncodeDiagnostics, Mode};
use prepstudy_core::mlp;
use prepstudy_core::record::{ResponseRecord, ResponseTable};
use prepstudy_core::split::split;
use prepstudy_core::synth::recovery_terms;

/// Models of preposition-learning response data.
#[derive(Parser)]
#[command(name = "prepstudy", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Shared {
    /// Response CSV.
    #[arg(long)]
    data: Option<PathBuf>,
    /// gjt or gjt+pet.
    #[arg(long, default_value = "gjt+pet", value_parser = parse_mode)]
    mode: Mode,
    /// blm or mlp.
    #[arg(long, default_value = "blm", value_parser = parse_model)]
    model: ModelKind,
    /// Number of seeds for multi-seed commands.
    #[arg(long, default_value_t = 10)]
    seeds: usize,
    /// Base seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// key = value settings file.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one model on the seed's train split and score it on eval.
    Fit(Shared),
    /// Coefficient, contrast and interaction-grid tables of a BLM.
    Effects {
        #[command(flatten)]
        shared: Shared,
        /// Model directory from `fit`; otherwise fit on all of --data.
        #[arg(long)]
        from: Option<PathBuf>,
    },
    /// Predicted probabilities of a saved model on --data.
    Predict {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        from: PathBuf,
    },
    /// Paired feature-group ablations over --seeds splits.
    Ablate {
        #[command(flatten)]
        shared: Shared,
        /// Comma-separated groups: students, answer, fxn&usage, instr&time, p_tgt&p_ctx.
        #[arg(long, value_delimiter = ',')]
        groups: Vec<String>,
    },
    /// Write a synthetic study dataset with known coefficients.
    Simulate {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        students: Option<usize>,
        /// Target share of correct responses.
        #[arg(long)]
        marginal: Option<f64>,
        #[arg(long)]
        missingness: Option<f64>,
        /// Generate from the reduced recovery term set.
        #[arg(long)]
        recovery_terms: bool,
    },
    /// Attach p_tgt/p_ctx from a features CSV to GJT responses.
    ImportLm {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        features: PathBuf,
    },
    /// Baselines and model accuracies over --seeds splits, plus stimulus
    /// correlations when features are given.
    Report {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        features: Option<PathBuf>,
        /// Per-stimulus judgment CSV; derived from --data when absent.
        #[arg(long)]
        judgments: Option<PathBuf>,
    },
}

fn parse_mode(s: &str) -> std::result::Result<Mode, String> {
    Mode::parse(s).map_err(|e| e.to_string())
}

fn parse_model(s: &str) -> std::result::Result<ModelKind, String> {
    ModelKind::parse(s).map_err(|e| e.to_string())
}

impl Shared {
    fn config(&self) -> Result<Config> {
        Ok(match &self.config {
            Some(p) => Config::load(p)?,
            None => Config::default(),
        })
    }

    fn table(&self) -> Result<ResponseTable> {
        let path = self.data.as_ref().context("--data is required")?;
        Ok(load_responses(path)?)
    }

    fn out_dir(&self) -> Result<&Path> {
        create_dir(&self.out)?;
        Ok(&self.out)
    }
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit(s) => cmd_fit(&s),
        Command::Effects { shared, from } => cmd_effects(&shared, from.as_deref()),
        Command::Predict { shared, from } => cmd_predict(&shared, &from),
        Command::Ablate { shared, groups } => cmd_ablate(&shared, &groups),
        Command::Simulate { shared, students, marginal, missingness, recovery_terms } => {
            cmd_simulate(&shared, students, marginal, missingness, recovery_terms)
        }
        Command::ImportLm { shared, features } => cmd_import_lm(&shared, &features),
        Command::Report { shared, features, judgments } => cmd_report(&shared, features.as_deref(), judgments.as_deref()),
    }
}

fn data_warnings(table: &ResponseTable, out: &mut String) {
    for (student, n) in table.sparse_students(10) {
        let _ = writeln!(out, "warning: student {student} has only {n} responses");
    }
}

fn diag_warnings(diag: &EncodeDiagnostics, out: &mut String) {
    for (level, n) in &diag.unknown_levels {
        let _ = writeln!(out, "warning: {n} records with unseen level {level}");
    }
    if diag.missing_covariates > 0 {
        let _ = writeln!(out, "warning: {} records missing p_tgt/p_ctx", diag.missing_covariates);
    }
}

fn cmd_fit(s: &Shared) -> Result<()> {
    let cfg = s.config()?;
    let table = mode_table(&s.table()?, s.mode);
    let parts = split(&table, &cfg.settings.split_spec(s.seed))?;
    let out = s.out_dir()?;
    let mut summary = format!(
        "model {} mode {} seed {}\ntrain {} eval {} dev {}\n",
        s.model.as_str(),
        s.mode.as_str(),
        s.seed,
        parts.train.len(),
        parts.eval.len(),
        parts.dev.len()
    );
    data_warnings(&table, &mut summary);
    if parts.is_degenerate() {
        summary.push_str("warning: a split partition has a single label\n");
    }
    let eval = parts.eval.records();
    let (saved, acc) = match s.model {
        ModelKind::Blm => {
            let m = fit_blm(parts.train.records(), default_terms(s.mode), &cfg.settings, s.seed)?;
            let (probs, diag) = m.predict(eval, s.seed, cfg.settings.predict_samples);
            diag_warnings(&diag, &mut summary);
            let _ = writeln!(summary, "final elbo {:.3}", m.trace.last().copied().unwrap_or(f64::NAN));
            (SavedModel::Blm(m), mlp::accuracy(&probs, eval))
        }
        ModelKind::Mlp => {
            let t = train_mlp(parts.train.records(), parts.dev.records(), s.mode, &[], &cfg.settings, s.seed)?;
            write_history(out.join("history.csv"), &t.history)?;
            let _ = writeln!(summary, "best epoch {}", t.best_epoch);
            let acc = mlp::accuracy(&t.model.predict(eval), eval);
            (SavedModel::Mlp(t.model), acc)
        }
    };
    let _ = writeln!(summary, "eval accuracy {:.2}%", 100.0 * acc);
    save_model(&out.join("model"), &saved, s.mode)?;
    write_text(out.join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}

fn cmd_effects(s: &Shared, from: Option<&Path>) -> Result<()> {
    let cfg = s.config()?;
    let model = match from {
        Some(dir) => match load_model(dir)? {
            (SavedModel::Blm(m), _) => m,
            (SavedModel::Mlp(_), _) => bail!("{} holds an mlp; effects need a blm", dir.display()),
        },
        None => {
            let table = mode_table(&s.table()?, s.mode);
            fit_blm(table.records(), default_terms(s.mode), &cfg.settings, s.seed)?
        }
    };
    let report = effect_report(&model)?;
    let out = s.out_dir()?;
    write_effects(out.join("effects.csv"), &report.effects, report.baseline_logit)?;
    write_contrasts(out.join("contrasts.csv"), &report.contrasts)?;
    let mut summary = format!(
        "{} coefficients, {} contrasts\nbaseline logit {:.3}\n",
        report.effects.len(),
        report.contrasts.len(),
        report.baseline_logit
    );
    for g in &report.grids {
        let name = format!("grid_{}.csv", g.term.replace(':', "_"));
        write_grid(out.join(&name), g)?;
        let unseen = g.cells.iter().filter(|c| !c.observed).count();
        let _ = writeln!(summary, "{}: {}x{} grid, {unseen} unseen cells -> {name}", g.term, g.rows.len(), g.cols.len());
    }
    if let Some(r2) = report.student_answer_r_squared {
        let _ = writeln!(summary, "R^2(student GJT-N effect, student GJT-Y effect) = {r2:.3}");
    }
    let significant = report.contrasts.iter().filter(|(c, k)| *k == "pairwise" && c.p_value < 0.05).count();
    let _ = writeln!(summary, "pairwise contrasts with p < 0.05: {significant}");
    write_text(out.join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}

fn cmd_predict(s: &Shared, from: &Path) -> Result<()> {
    let cfg = s.config()?;
    let (model, mode) = load_model(from)?;
    let table = mode_table(&s.table()?, mode);
    let records = table.records();
    let mut summary = format!("model {} mode {}\n{} records\n", model.kind().as_str(), mode.as_str(), records.len());
    let probs = match &model {
        SavedModel::Blm(m) => {
            let (p, diag) = m.predict(records, s.seed, cfg.settings.predict_samples);
            diag_warnings(&diag, &mut summary);
            p
        }
        SavedModel::Mlp(m) => m.predict(records),
    };
    let out = s.out_dir()?;
    write_csv(
        out.join("predictions.csv"),
        &["student_id", "item_id", "time", "prob", "predicted", "correct"],
        records.iter().zip(&probs).map(|(r, p): (&ResponseRecord, &f64)| {
            [
                r.student_id.clone(),
                r.item_id.clone(),
                r.time.as_str().to_string(),
                format!("{p:.6}"),
                u8::from(*p >= 0.5).to_string(),
                u8::from(r.correct).to_string(),
            ]
        }),
    )?;
    let _ = writeln!(summary, "accuracy {:.2}%", 100.0 * mlp::accuracy(&probs, records));
    write_text(out.join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}

fn protocol_line(r: &ProtocolResult) -> String {
    let mut line = format!("{:<24} {:6.2} ± {:.2}  ({} seeds)\n", r.label, 100.0 * r.mean, 100.0 * r.sd, r.seeds.len());
    for w in &r.warnings {
        let _ = writeln!(line, "warning: {w}");
    }
    line
}

fn cmd_ablate(s: &Shared, groups: &[String]) -> Result<()> {
    let cfg = s.config()?;
    let groups: Vec<AblationGroup> = if groups.is_empty() {
        AblationGroup::for_mode(s.mode)
    } else {
        groups.iter().map(|g| AblationGroup::parse(g)).collect::<prepstudy::Result<_>>()?
    };
    let seeds = seed_list(s.seed, s.seeds);
    let (full, rows) = ablate(&s.table()?, s.mode, s.model, &groups, &seeds, &cfg.settings)?;
    let out = s.out_dir()?;
    write_csv(
        out.join("ablation.csv"),
        &["group", "full_mean", "full_sd", "ablated_mean", "ablated_sd", "delta_mean", "delta_sd"],
        rows.iter().map(|r| {
            [
                r.group.name().to_string(),
                format!("{:.4}", 100.0 * full.mean),
                format!("{:.4}", 100.0 * full.sd),
                format!("{:.4}", 100.0 * r.ablated.mean),
                format!("{:.4}", 100.0 * r.ablated.sd),
                format!("{:.4}", r.delta_mean),
                format!("{:.4}", r.delta_sd),
            ]
        }),
    )?;
    write_csv(
        out.join("ablation_seeds.csv"),
        &["group", "seed", "full", "ablated", "delta"],
        rows.iter().flat_map(|r| {
            (0..seeds.len()).map(|i| {
                [
                    r.group.name().to_string(),
                    seeds[i].to_string(),
                    format!("{:.6}", full.accuracies[i]),
                    format!("{:.6}", r.ablated.accuracies[i]),
                    format!("{:.4}", r.deltas[i]),
                ]
            })
        }),
    )?;
    let mut summary = protocol_line(&full);
    for r in &rows {
        let _ = writeln!(summary, "  -{:<12} {:+6.2} ± {:.2} pp", r.group.name(), r.delta_mean, r.delta_sd);
    }
    write_text(out.join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}

fn cmd_simulate(
    s: &Shared,
    students: Option<usize>,
    marginal: Option<f64>,
    missingness: Option<f64>,
    recovery: bool,
) -> Result<()> {
    let mut synth = s.config()?.synth;
    synth.students = students.unwrap_or(synth.students);
    synth.marginal = marginal.or(synth.marginal);
    synth.missingness = missingness.unwrap_or(synth.missingness);
    let terms = if recovery { recovery_terms() } else { default_terms(s.mode) };
    let data = simulate(s.mode, terms, &synth, s.seed)?;
    let out = s.out_dir()?;
    write_responses(out.join("responses.csv"), &data.table)?;
    write_truth(out.join("truth.csv"), &data.truth)?;
    let summary = format!(
        "{} students, {} responses, {} columns\npositive rate {:.3}\n",
        synth.students,
        data.table.len(),
        data.truth.beta.len(),
        data.table.positive_rate()
    );
    write_text(out.join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}

fn cmd_import_lm(s: &Shared, features: &Path) -> Result<()> {
    let feats = load_features(features)?;
    let joined = s.table()?.join_lm_features(&feats)?;
    let out = s.out_dir()?;
    write_responses(out.join("responses.csv"), &joined)?;
    let with = joined.records().iter().filter(|r| r.p_tgt.is_some()).count();
    let summary = format!("{} stimuli, {} of {} responses carry p_tgt/p_ctx\n", feats.len(), with, joined.len());
    write_text(out.join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}

fn cmd_report(s: &Shared, features: Option<&Path>, judgments: Option<&Path>) -> Result<()> {
    let cfg = s.config()?;
    let table = s.table()?;
    let seeds = seed_list(s.seed, s.seeds);
    let mut results: Vec<ProtocolResult> = baseline_protocol(&table, s.mode, &seeds, &cfg.settings)?.into();
    for kind in [ModelKind::Blm, ModelKind::Mlp] {
        results.push(run_protocol(&table, s.mode, kind, &seeds, &cfg.settings)?);
    }
    let out = s.out_dir()?;
    write_csv(
        out.join("protocol.csv"),
        &["label", "mean", "sd", "n_seeds"],
        results.iter().map(|r| {
            [r.label.clone(), format!("{:.4}", 100.0 * r.mean), format!("{:.4}", 100.0 * r.sd), r.seeds.len().to_string()]
        }),
    )?;
    write_csv(
        out.join("protocol_seeds.csv"),
        &["label", "seed", "accuracy"],
        results.iter().flat_map(|r| {
            r.seeds.iter().zip(&r.accuracies).map(|(seed, a)| [r.label.clone(), seed.to_string(), format!("{a:.6}")])
        }),
    )?;
    let mut summary: String = results.iter().map(protocol_line).collect();
    if let Some(fp) = features {
        let feats = load_features(fp)?;
        let judg = match judgments {
            Some(p) => load_judgments(p)?,
            None => judgments_from_responses(&table),
        };
        write_judgments(out.join("judgments.csv"), &judg)?;
        write_features(out.join("features.csv"), &feats)?;
        let corr = correlations(&judg, &feats)?;
        write_csv(
            out.join("correlations.csv"),
            &["x", "y", "r_squared", "n"],
            corr.iter().map(|c| [c.x.to_string(), c.y.to_string(), format!("{:.4}", c.r_squared), c.n.to_string()]),
        )?;
        for c in &corr {
            let _ = writeln!(summary, "R^2({}, {}) = {:.3}  (n = {})", c.x, c.y, c.r_squared, c.n);
        }
    }
    write_text(out.join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}
