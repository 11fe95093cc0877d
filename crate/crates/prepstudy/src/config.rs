//! `key = value` run configuration. Blank lines and `#` comments are
//! ignored; unknown keys are errors.

use std::path::Path;

use prepstudy_core::bayes::ElboEstimator;

use crate::error::{Error, Result};
use crate::formats::read_text;
use crate::harness::{Settings, SynthSettings};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Config {
    pub settings: Settings,
    pub synth: SynthSettings,
}

impl Config {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&read_text(path)?).map_err(|e| match e {
            Error::Request(m) => Error::format(path, m),
            e => e,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Request(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(key.trim(), value.trim()).map_err(|m| Error::Request(format!("line {}: {m}", n + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.settings.fit.validate()?;
        self.settings.mlp.validate()?;
        self.settings.mlp.optimizer.validate()?;
        if self.settings.predict_samples == 0 {
            return Err(Error::Request("predict.samples must be at least 1".into()));
        }
        Ok(())
    }

    fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let s = &mut self.settings;
        let y = &mut self.synth;
        match key {
            "svi.iterations" => s.fit.iterations = num(key, value)?,
            "svi.particles" => s.fit.elbo_particles = num(key, value)?,
            "svi.learning_rate" => s.fit.optimizer.learning_rate = num(key, value)?,
            "svi.weight_decay" => s.fit.optimizer.weight_decay = num(key, value)?,
            "svi.beta1" => s.fit.optimizer.beta1 = num(key, value)?,
            "svi.beta2" => s.fit.optimizer.beta2 = num(key, value)?,
            "svi.epsilon" => s.fit.optimizer.epsilon = num(key, value)?,
            "svi.init_scale" => s.fit.init_scale = num(key, value)?,
            "svi.estimator" => {
                s.fit.estimator = match value {
                    "reparameterized" => ElboEstimator::Reparameterized,
                    "analytic-prior" => ElboEstimator::AnalyticPrior,
                    _ => return Err(format!("{key}: expected reparameterized or analytic-prior")),
                }
            }
            "prior.group_scale" => s.group_scale_prior = num(key, value)?,
            "prior.fixed_sd" => s.fixed_prior_sd = num(key, value)?,
            "predict.samples" => s.predict_samples = num(key, value)?,
            "mlp.embedding_dim" => s.mlp.embedding_dim = num(key, value)?,
            "mlp.hidden1" => s.mlp.hidden.0 = num(key, value)?,
            "mlp.hidden2" => s.mlp.hidden.1 = num(key, value)?,
            "mlp.input_dropout" => s.mlp.input_dropout = num(key, value)?,
            "mlp.hidden_dropout" => s.mlp.hidden_dropout = num(key, value)?,
            "mlp.max_epochs" => s.mlp.max_epochs = num(key, value)?,
            "mlp.patience" => s.mlp.patience = num(key, value)?,
            "mlp.learning_rate" => s.mlp.optimizer.learning_rate = num(key, value)?,
            "mlp.weight_decay" => s.mlp.optimizer.weight_decay = num(key, value)?,
            "mlp.batch_size" => s.mlp.batch_size = if value == "full" { None } else { Some(num(key, value)?) },
            "split.train" => s.split.0 = num(key, value)?,
            "split.eval" => s.split.1 = num(key, value)?,
            "split.dev" => s.split.2 = num(key, value)?,
            "synth.students" => y.students = num(key, value)?,
            "synth.missingness" => y.missingness = num(key, value)?,
            "synth.range" => y.range = num(key, value)?,
            "synth.marginal" => y.marginal = if value == "none" { None } else { Some(num(key, value)?) },
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
    value.parse().map_err(|_| format!("{key}: cannot parse {value:?}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(Config::parse("# nothing\n\n").unwrap(), Config::default());
    }

    #[test]
    fn keys_override_defaults() {
        let c = Config::parse("svi.iterations = 50  # short\nmlp.batch_size = full\nsynth.marginal = 0.64\n").unwrap();
        assert_eq!(c.settings.fit.iterations, 50);
        assert_eq!(c.settings.mlp.batch_size, None);
        assert_eq!(c.synth.marginal, Some(0.64));
    }

    #[test]
    fn unknown_key_names_the_line() {
        let e = Config::parse("\nsvi.iters = 3\n").unwrap_err().to_string();
        assert!(e.contains("line 2") && e.contains("svi.iters"), "{e}");
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(Config::parse("svi.iterations = many").is_err());
        assert!(Config::parse("svi.iterations = 0").is_err());
        assert!(Config::parse("mlp.input_dropout = 1.5").is_err());
    }
}
