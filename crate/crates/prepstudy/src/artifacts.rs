//! Model directories written by `fit` and read back by `predict` and
//! `effects`. `model.txt` names the model kind and mode; the remaining files
//! are those of [`crate::formats`].

use std::fs;
use std::path::Path;

use prepstudy_core::bayes::ModelSpec;
use prepstudy_core::design::Mode;
use prepstudy_core::mlp::Mlp;

use crate::error::{Error, Result};
use crate::formats::{
    read_mlp, read_posterior, read_schema, read_standardization, read_text, write_mlp, write_posterior,
    write_schema, write_standardization, write_text, write_trace,
};
use crate::harness::{BlmModel, ModelKind};

#[derive(Debug, Clone)]
pub enum SavedModel {
    Blm(BlmModel),
    Mlp(Mlp),
}

impl SavedModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            SavedModel::Blm(_) => ModelKind::Blm,
            SavedModel::Mlp(_) => ModelKind::Mlp,
        }
    }
}

pub fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn save_model(dir: &Path, model: &SavedModel, mode: Mode) -> Result<()> {
    create_dir(dir)?;
    let mut manifest = format!("kind = {}\nmode = {}\n", model.kind().as_str(), mode.as_str());
    match model {
        SavedModel::Blm(m) => {
            manifest.push_str(&format!(
                "group_scale = {}\nfixed_sd = {}\n",
                m.spec.group_scale_prior(),
                m.spec.fixed_prior_sd()
            ));
            write_schema(dir.join("schema.txt"), m.spec.schema())?;
            write_standardization(dir.join("standardization.txt"), &m.standardization)?;
            write_posterior(dir.join("posterior.txt"), &m.spec, &m.posterior, "schema.txt")?;
            write_trace(dir.join("trace.csv"), &m.trace)?;
        }
        SavedModel::Mlp(m) => write_mlp(dir.join("mlp.txt"), m)?,
    }
    write_text(dir.join("model.txt"), &manifest)
}

pub fn load_model(dir: &Path) -> Result<(SavedModel, Mode)> {
    let path = dir.join("model.txt");
    let text = read_text(&path)?;
    let get = |key: &str| -> Result<&str> {
        text.lines()
            .filter_map(|l| l.split_once('='))
            .find(|(k, _)| k.trim() == key)
            .map(|(_, v)| v.trim())
            .ok_or_else(|| Error::format(&path, format!("missing {key}")))
    };
    let num = |key: &str| -> Result<f64> {
        get(key)?.parse().map_err(|_| Error::format(&path, format!("{key} is not a number")))
    };
    let mode = Mode::parse(get("mode")?)?;
    let model = match ModelKind::parse(get("kind")?)? {
        ModelKind::Blm => {
            let schema = read_schema(dir.join("schema.txt"))?;
            let spec = ModelSpec::new(schema, num("group_scale")?, num("fixed_sd")?)?;
            let posterior = read_posterior(dir.join("posterior.txt"), &spec)?;
            let standardization = read_standardization(dir.join("standardization.txt"))?;
            SavedModel::Blm(BlmModel { spec, standardization, posterior, trace: Vec::new() })
        }
        ModelKind::Mlp => SavedModel::Mlp(read_mlp(dir.join("mlp.txt"))?),
    };
    Ok((model, mode))
}
