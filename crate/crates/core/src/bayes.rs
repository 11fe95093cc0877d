//! Hierarchical Bayesian logistic model fitted by stochastic variational
//! inference.
//!
//! Model, for a design with columns `j` and categorical terms `g`:
//!
//! ```text
//! σ_g      ~ HalfNormal(s₀)                  one scale per categorical term
//! β_j      ~ Normal(0, σ_g(j))               columns of categorical terms
//! β_j      ~ Normal(0, fixed_prior_sd)       intercept and continuous terms
//! y_i      ~ Bernoulli(sigmoid(x_i · β))
//! ```
//!
//! The scales are sampled in log space, so the latent vector is
//! `θ = (β, log σ)` and the log joint carries the `log σ` Jacobian. The guide
//! is mean-field Normal over `θ` with scales stored through a softplus. The
//! ELBO is estimated with reparameterized draws `θ = μ + s ⊙ ε` plus the
//! closed-form Gaussian entropy, and its gradient is computed analytically.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write as _;

use crate::design::{DesignSchema, FeatureVector, TermKind};
use crate::math::{self, LN_2PI};
use crate::optim::{AdamW, AdamWConfig};
use crate::rng::{self, streams, Rng};
use crate::{Error, Result};

/// Compressed sparse rows of encoded records plus their labels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EncodedBatch {
    offsets: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
    labels: Vec<f64>,
}

impl EncodedBatch {
    pub fn new() -> Self {
        EncodedBatch { offsets: vec![0], ..Default::default() }
    }

    pub fn from_rows<'a>(rows: impl IntoIterator<Item = (&'a FeatureVector, bool)>) -> Self {
        let mut b = EncodedBatch::new();
        for (fv, y) in rows {
            b.push(fv, y);
        }
        b
    }

    pub fn push(&mut self, fv: &FeatureVector, label: bool) {
        if self.offsets.is_empty() {
            self.offsets.push(0);
        }
        for &(j, v) in &fv.active {
            self.cols.push(j as u32);
            self.vals.push(v);
        }
        self.offsets.push(self.cols.len());
        self.labels.push(if label { 1.0 } else { 0.0 });
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn label(&self, i: usize) -> bool {
        self.labels[i] > 0.5
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.offsets[i], self.offsets[i + 1]);
        self.cols[a..b].iter().zip(&self.vals[a..b]).map(|(&j, &v)| (j as usize, v))
    }

    pub fn row_vector(&self, i: usize) -> FeatureVector {
        FeatureVector { active: self.row(i).collect() }
    }

    fn max_column(&self) -> Option<usize> {
        self.cols.iter().max().map(|&j| j as usize)
    }

    #[inline]
    fn dot(&self, i: usize, beta: &[f64]) -> f64 {
        let (a, b) = (self.offsets[i], self.offsets[i + 1]);
        let mut eta = 0.0;
        for k in a..b {
            eta += self.vals[k] * beta[self.cols[k] as usize];
        }
        eta
    }
}

/// Priors over a design schema.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    schema: DesignSchema,
    group_scale_prior: f64,
    fixed_prior_sd: f64,
    column_group: Vec<Option<usize>>,
}

pub const DEFAULT_GROUP_SCALE_PRIOR: f64 = 10.0;
pub const DEFAULT_FIXED_PRIOR_SD: f64 = 1.0;

impl ModelSpec {
    pub fn new(schema: DesignSchema, group_scale_prior: f64, fixed_prior_sd: f64) -> Result<Self> {
        if !(group_scale_prior > 0.0 && group_scale_prior.is_finite()) {
            return Err(Error::Config("group scale prior must be positive".into()));
        }
        if !(fixed_prior_sd > 0.0 && fixed_prior_sd.is_finite()) {
            return Err(Error::Config("fixed prior sd must be positive".into()));
        }
        let column_group = (0..schema.n_columns()).map(|j| schema.group_of_column(j)).collect();
        Ok(ModelSpec { schema, group_scale_prior, fixed_prior_sd, column_group })
    }

    /// HalfNormal(10) group scales and N(0, 1) fixed priors.
    pub fn with_defaults(schema: DesignSchema) -> Self {
        Self::new(schema, DEFAULT_GROUP_SCALE_PRIOR, DEFAULT_FIXED_PRIOR_SD).expect("valid defaults")
    }

    pub fn schema(&self) -> &DesignSchema {
        &self.schema
    }

    pub fn group_scale_prior(&self) -> f64 {
        self.group_scale_prior
    }

    pub fn fixed_prior_sd(&self) -> f64 {
        self.fixed_prior_sd
    }

    pub fn n_columns(&self) -> usize {
        self.schema.n_columns()
    }

    pub fn n_groups(&self) -> usize {
        self.schema.n_groups()
    }

    /// Length of the flat latent vector `(β, log σ)`.
    pub fn dim(&self) -> usize {
        self.n_columns() + self.n_groups()
    }

    /// Names of the flat latents: `beta:<column key>` then `log_sigma:<term>`.
    pub fn latent_names(&self) -> Vec<String> {
        let mut names: Vec<String> =
            (0..self.n_columns()).map(|j| format!("beta:{}", self.schema.column_key(j))).collect();
        for g in 0..self.n_groups() {
            let term = &self.schema.terms()[self.schema.term_of_group(g)];
            names.push(format!("log_sigma:{}", term.name()));
        }
        names
    }

    fn check_batch(&self, batch: &EncodedBatch) -> Result<()> {
        match batch.max_column() {
            Some(j) if j >= self.n_columns() => {
                Err(Error::Dimension { expected: self.n_columns(), got: j + 1 })
            }
            _ => Ok(()),
        }
    }

    /// Log joint at flat `theta`, accumulating `∂/∂θ` into `grad`.
    fn log_joint_grad(&self, theta: &[f64], batch: &EncodedBatch, grad: &mut [f64]) -> f64 {
        let n_cols = self.n_columns();
        let ll = likelihood_grad(&theta[..n_cols], batch, &mut grad[..n_cols]);
        ll + self.log_prior_grad(theta, grad)
    }

    fn log_prior_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let n_cols = self.n_columns();
        let (beta, log_sigma) = theta.split_at(n_cols);
        let (g_beta, g_log_sigma) = grad.split_at_mut(n_cols);
        let mut lp = 0.0;
        let fixed_var = self.fixed_prior_sd * self.fixed_prior_sd;
        let ln_fixed_sd = math::ln(self.fixed_prior_sd);
        let inv_var: Vec<f64> = log_sigma.iter().map(|&ls| math::exp(-2.0 * ls)).collect();
        for j in 0..n_cols {
            let b = beta[j];
            match self.column_group[j] {
                Some(g) => {
                    let b2s = b * b * inv_var[g];
                    lp += -0.5 * LN_2PI - log_sigma[g] - 0.5 * b2s;
                    g_beta[j] -= b * inv_var[g];
                    g_log_sigma[g] += b2s - 1.0;
                }
                None => {
                    lp += -0.5 * LN_2PI - ln_fixed_sd - 0.5 * b * b / fixed_var;
                    g_beta[j] -= b / fixed_var;
                }
            }
        }
        let s0 = self.group_scale_prior;
        let half_normal_const = core::f64::consts::LN_2 - 0.5 * LN_2PI - math::ln(s0);
        for (g, &ls) in log_sigma.iter().enumerate() {
            let s2 = math::exp(2.0 * ls) / (s0 * s0);
            // HalfNormal(σ | s₀) in log σ, plus log|dσ/d log σ| = log σ
            lp += half_normal_const - 0.5 * s2 + ls;
            g_log_sigma[g] += 1.0 - s2;
        }
        lp
    }

    /// `E_q[log prior]` in closed form under the mean-field guide, with its
    /// gradient with respect to the guide means and scales.
    fn expected_log_prior_grad(&self, loc: &[f64], scale: &[f64], g_loc: &mut [f64], g_scale: &mut [f64]) -> f64 {
        let n_cols = self.n_columns();
        let mut lp = 0.0;
        let fixed_var = self.fixed_prior_sd * self.fixed_prior_sd;
        let ln_fixed_sd = math::ln(self.fixed_prior_sd);
        // E[exp(-2 log σ)] for log σ ~ N(m, s²)
        let inv_var: Vec<f64> = (0..self.n_groups())
            .map(|g| {
                let (m, s) = (loc[n_cols + g], scale[n_cols + g]);
                math::exp(-2.0 * m + 2.0 * s * s)
            })
            .collect();
        for j in 0..n_cols {
            let (m, s) = (loc[j], scale[j]);
            let second = m * m + s * s;
            match self.column_group[j] {
                Some(g) => {
                    let gi = n_cols + g;
                    let a = inv_var[g];
                    lp += -0.5 * LN_2PI - loc[gi] - 0.5 * second * a;
                    g_loc[j] -= m * a;
                    g_scale[j] -= s * a;
                    g_loc[gi] += second * a - 1.0;
                    g_scale[gi] -= 2.0 * scale[gi] * second * a;
                }
                None => {
                    lp += -0.5 * LN_2PI - ln_fixed_sd - 0.5 * second / fixed_var;
                    g_loc[j] -= m / fixed_var;
                    g_scale[j] -= s / fixed_var;
                }
            }
        }
        let s0 = self.group_scale_prior;
        let half_normal_const = core::f64::consts::LN_2 - 0.5 * LN_2PI - math::ln(s0);
        for g in 0..self.n_groups() {
            let gi = n_cols + g;
            let (m, s) = (loc[gi], scale[gi]);
            let b = math::exp(2.0 * m + 2.0 * s * s) / (s0 * s0);
            lp += half_normal_const - 0.5 * b + m;
            g_loc[gi] += 1.0 - b;
            g_scale[gi] -= 2.0 * s * b;
        }
        lp
    }
}

/// Bernoulli log-likelihood at `beta`, accumulating `Xᵀ(y − σ(Xβ))`.
fn likelihood_grad(beta: &[f64], batch: &EncodedBatch, g_beta: &mut [f64]) -> f64 {
    let mut ll = 0.0;
    for i in 0..batch.len() {
        let eta = batch.dot(i, beta);
        let y = batch.labels[i];
        ll += y * math::log_sigmoid(eta) + (1.0 - y) * math::log_sigmoid(-eta);
        let resid = y - math::sigmoid(eta);
        let (a, b) = (batch.offsets[i], batch.offsets[i + 1]);
        for k in a..b {
            g_beta[batch.cols[k] as usize] += batch.vals[k] * resid;
        }
    }
    ll
}

/// A point in latent space.
#[derive(Debug, Clone, PartialEq)]
pub struct Latents {
    pub beta: Vec<f64>,
    pub log_sigma_g: Vec<f64>,
}

impl Latents {
    pub fn zeros(spec: &ModelSpec) -> Self {
        Latents { beta: vec![0.0; spec.n_columns()], log_sigma_g: vec![0.0; spec.n_groups()] }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = self.beta.clone();
        v.extend_from_slice(&self.log_sigma_g);
        v
    }

    pub fn from_flat(spec: &ModelSpec, flat: &[f64]) -> Result<Self> {
        if flat.len() != spec.dim() {
            return Err(Error::Dimension { expected: spec.dim(), got: flat.len() });
        }
        let (b, s) = flat.split_at(spec.n_columns());
        Ok(Latents { beta: b.to_vec(), log_sigma_g: s.to_vec() })
    }
}

/// `Σ log Bernoulli + log prior` at `theta`.
pub fn log_joint(spec: &ModelSpec, theta: &Latents, batch: &EncodedBatch) -> Result<f64> {
    let (lp, _) = log_joint_and_grad(spec, theta, batch)?;
    Ok(lp)
}

/// Log joint and its gradient with respect to the flat latents.
pub fn log_joint_and_grad(
    spec: &ModelSpec,
    theta: &Latents,
    batch: &EncodedBatch,
) -> Result<(f64, Vec<f64>)> {
    if theta.beta.len() != spec.n_columns() {
        return Err(Error::Dimension { expected: spec.n_columns(), got: theta.beta.len() });
    }
    if theta.log_sigma_g.len() != spec.n_groups() {
        return Err(Error::Dimension { expected: spec.n_groups(), got: theta.log_sigma_g.len() });
    }
    if theta.beta.iter().chain(&theta.log_sigma_g).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("latents".into()));
    }
    spec.check_batch(batch)?;
    let flat = theta.to_flat();
    let mut grad = vec![0.0; flat.len()];
    let lp = spec.log_joint_grad(&flat, batch, &mut grad);
    Ok((lp, grad))
}

/// Mean-field Normal guide over the flat latents.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub loc: Vec<f64>,
    /// Unconstrained; the guide scale is `softplus(raw_scale)`.
    pub raw_scale: Vec<f64>,
    n_columns: usize,
}

impl Posterior {
    pub fn new(n_columns: usize, loc: Vec<f64>, raw_scale: Vec<f64>) -> Result<Self> {
        if loc.len() != raw_scale.len() || n_columns > loc.len() {
            return Err(Error::Dimension { expected: loc.len(), got: raw_scale.len() });
        }
        Ok(Posterior { loc, raw_scale, n_columns })
    }

    /// Every latent at `N(0, 1)`: the untrained prior-predictive guide.
    pub fn standard(spec: &ModelSpec) -> Self {
        Self::constant(spec, 0.0, 1.0)
    }

    fn constant(spec: &ModelSpec, loc: f64, scale: f64) -> Self {
        let dim = spec.dim();
        Posterior {
            loc: vec![loc; dim],
            raw_scale: vec![math::softplus_inv(scale); dim],
            n_columns: spec.n_columns(),
        }
    }

    /// Starting point for fitting: β at 0, each log σ at the log of the
    /// HalfNormal prior median, all guide scales `init_scale`.
    pub fn initial(spec: &ModelSpec, init_scale: f64) -> Self {
        const HALF_NORMAL_MEDIAN: f64 = 0.674_489_750_196_081_7;
        let mut post = Self::constant(spec, 0.0, init_scale);
        let ls0 = math::ln(HALF_NORMAL_MEDIAN * spec.group_scale_prior);
        for v in &mut post.loc[spec.n_columns()..] {
            *v = ls0;
        }
        post
    }

    pub fn dim(&self) -> usize {
        self.loc.len()
    }

    pub fn n_columns(&self) -> usize {
        self.n_columns
    }

    #[inline]
    pub fn scale(&self, i: usize) -> f64 {
        math::softplus(self.raw_scale[i])
    }

    pub fn scales(&self) -> Vec<f64> {
        self.raw_scale.iter().map(|&r| math::softplus(r)).collect()
    }

    pub fn beta_means(&self) -> &[f64] {
        &self.loc[..self.n_columns]
    }

    /// `(mean, sd)` of β for column `j`.
    pub fn beta(&self, j: usize) -> (f64, f64) {
        (self.loc[j], self.scale(j))
    }

    /// `(mean, sd)` of `log σ_g`.
    pub fn log_sigma(&self, g: usize) -> (f64, f64) {
        let i = self.n_columns + g;
        (self.loc[i], self.scale(i))
    }

    /// Analytic entropy of the guide.
    pub fn entropy(&self) -> f64 {
        let c = 0.5 * (1.0 + LN_2PI);
        self.raw_scale.iter().map(|&r| math::ln(math::softplus(r)) + c).sum()
    }

    fn check(&self, spec: &ModelSpec) -> Result<()> {
        if self.dim() != spec.dim() || self.n_columns != spec.n_columns() {
            return Err(Error::Dimension { expected: spec.dim(), got: self.dim() });
        }
        Ok(())
    }

    /// Tab-separated `name  mean  sd` lines; `schema_ref` is recorded in a
    /// header comment.
    pub fn to_text(&self, spec: &ModelSpec, schema_ref: &str) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# schema\t{schema_ref}");
        let _ = writeln!(out, "# group_scale_prior\t{}", spec.group_scale_prior);
        let _ = writeln!(out, "# fixed_prior_sd\t{}", spec.fixed_prior_sd);
        for (i, name) in spec.latent_names().iter().enumerate() {
            let _ = writeln!(out, "{name}\t{}\t{}", self.loc[i], self.scale(i));
        }
        out
    }

    /// Parse [`Posterior::to_text`] output against `spec`. Latent names must
    /// match the model's latent layout exactly.
    pub fn from_text(spec: &ModelSpec, text: &str) -> Result<Self> {
        let names = spec.latent_names();
        let mut loc = Vec::with_capacity(names.len());
        let mut raw = Vec::with_capacity(names.len());
        for (lineno, line) in text.lines().enumerate() {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = || Error::Parse(format!("posterior line {}: {line:?}", lineno + 1));
            let mut parts = line.split('\t');
            let (name, mu, sd) = match (parts.next(), parts.next(), parts.next(), parts.next()) {
                (Some(n), Some(m), Some(s), None) => (n, m, s),
                _ => return Err(bad()),
            };
            let i = loc.len();
            if names.get(i).map(String::as_str) != Some(name) {
                return Err(Error::Schema(format!("posterior latent {i} is {name:?}, expected {:?}", names.get(i))));
            }
            let mu: f64 = mu.parse().map_err(|_| bad())?;
            let sd: f64 = sd.parse().map_err(|_| bad())?;
            if !(sd > 0.0) || !mu.is_finite() {
                return Err(bad());
            }
            loc.push(mu);
            raw.push(math::softplus_inv(sd));
        }
        if loc.len() != names.len() {
            return Err(Error::Dimension { expected: names.len(), got: loc.len() });
        }
        Posterior::new(spec.n_columns(), loc, raw)
    }
}

/// How the ELBO's prior term is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ElboEstimator {
    /// `(1/K) Σ_k log_joint(θ_k) + H(q)`: every term by Monte Carlo.
    #[default]
    Reparameterized,
    /// Likelihood by Monte Carlo, `E_q[log prior]` in closed form. Same
    /// expectation, lower variance for weakly observed latents.
    AnalyticPrior,
}

/// Gradient of the ELBO with respect to the guide parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorGrad {
    pub loc: Vec<f64>,
    pub raw_scale: Vec<f64>,
}

/// ELBO estimate and gradient from `particles` fresh reparameterized draws.
pub fn elbo_and_grad<R: rand::Rng + ?Sized>(
    spec: &ModelSpec,
    post: &Posterior,
    batch: &EncodedBatch,
    particles: usize,
    rng: &mut R,
) -> Result<(f64, PosteriorGrad)> {
    if particles == 0 {
        return Err(Error::Config("need at least one ELBO particle".into()));
    }
    let noise = draw_noise(rng, particles, post.dim());
    elbo_and_grad_with_noise(spec, post, batch, &noise)
}

fn draw_noise<R: rand::Rng + ?Sized>(rng: &mut R, particles: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..particles)
        .map(|_| {
            let mut eps = vec![0.0; dim];
            rng::fill_standard_normal(rng, &mut eps);
            eps
        })
        .collect()
}

/// ELBO and gradient for given standard-normal draws, one vector per particle.
pub fn elbo_and_grad_with_noise(
    spec: &ModelSpec,
    post: &Posterior,
    batch: &EncodedBatch,
    noise: &[Vec<f64>],
) -> Result<(f64, PosteriorGrad)> {
    elbo_and_grad_estimated(spec, post, batch, noise, ElboEstimator::Reparameterized)
}

/// [`elbo_and_grad_with_noise`] with a choice of estimator.
pub fn elbo_and_grad_estimated(
    spec: &ModelSpec,
    post: &Posterior,
    batch: &EncodedBatch,
    noise: &[Vec<f64>],
    estimator: ElboEstimator,
) -> Result<(f64, PosteriorGrad)> {
    post.check(spec)?;
    spec.check_batch(batch)?;
    if noise.is_empty() {
        return Err(Error::Config("need at least one ELBO particle".into()));
    }
    let dim = post.dim();
    let scale = post.scales();
    let mut g_loc = vec![0.0; dim];
    let mut g_raw = vec![0.0; dim];
    let mut theta = vec![0.0; dim];
    let mut g_theta = vec![0.0; dim];
    let mut total = 0.0;
    for eps in noise {
        if eps.len() != dim {
            return Err(Error::Dimension { expected: dim, got: eps.len() });
        }
        for i in 0..dim {
            theta[i] = post.loc[i] + scale[i] * eps[i];
        }
        g_theta.iter_mut().for_each(|g| *g = 0.0);
        total += match estimator {
            ElboEstimator::Reparameterized => spec.log_joint_grad(&theta, batch, &mut g_theta),
            ElboEstimator::AnalyticPrior => {
                let n = spec.n_columns();
                likelihood_grad(&theta[..n], batch, &mut g_theta[..n])
            }
        };
        for i in 0..dim {
            g_loc[i] += g_theta[i];
            g_raw[i] += g_theta[i] * eps[i];
        }
    }
    let k = noise.len() as f64;
    // gradient with respect to the scale itself, before the softplus chain
    let mut g_scale: Vec<f64> = g_raw.iter().map(|g| g / k).collect();
    g_loc.iter_mut().for_each(|g| *g /= k);
    let mut elbo = total / k + post.entropy();
    if estimator == ElboEstimator::AnalyticPrior {
        elbo += spec.expected_log_prior_grad(&post.loc, &scale, &mut g_loc, &mut g_scale);
    }
    for i in 0..dim {
        // d softplus(r)/dr = sigmoid(r); entropy contributes d ln s / dr
        let ds = math::sigmoid(post.raw_scale[i]);
        g_raw[i] = (g_scale[i] + 1.0 / scale[i]) * ds;
    }
    Ok((elbo, PosteriorGrad { loc: g_loc, raw_scale: g_raw }))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    pub iterations: usize,
    pub elbo_particles: usize,
    pub estimator: ElboEstimator,
    pub optimizer: AdamWConfig,
    /// Guide scale at initialization.
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            iterations: 1000,
            elbo_particles: 1,
            estimator: ElboEstimator::Reparameterized,
            optimizer: AdamWConfig {
                learning_rate: 0.05,
                weight_decay: 0.0,
                beta1: 0.9,
                beta2: 0.999,
                epsilon: 1e-8,
            },
            init_scale: 0.1,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        if self.elbo_particles == 0 {
            return Err(Error::Config("elbo_particles must be at least 1".into()));
        }
        if !(self.init_scale > 0.0) {
            return Err(Error::Config("init_scale must be positive".into()));
        }
        self.optimizer.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub posterior: Posterior,
    /// ELBO estimate at each iteration, before that iteration's step.
    pub trace: Vec<f64>,
}

/// Maximize the ELBO with full-batch AdamW steps.
pub fn fit(spec: &ModelSpec, train: &EncodedBatch, cfg: &FitConfig) -> Result<FitResult> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::NotEnoughData("no training records".into()));
    }
    spec.check_batch(train)?;
    let mut post = Posterior::initial(spec, cfg.init_scale);
    let dim = post.dim();
    let mut rng = rng::stream(cfg.seed, streams::SVI);
    let mut opt = AdamW::new(cfg.optimizer, 2 * dim);
    let mut params = vec![0.0; 2 * dim];
    let mut grad = vec![0.0; 2 * dim];
    let mut trace = Vec::with_capacity(cfg.iterations);
    for iteration in 0..cfg.iterations {
        let noise = draw_noise(&mut rng, cfg.elbo_particles, dim);
        let (elbo, g) = elbo_and_grad_estimated(spec, &post, train, &noise, cfg.estimator)?;
        if !elbo.is_finite() || g.loc.iter().chain(&g.raw_scale).any(|v| !v.is_finite()) {
            return Err(Error::Diverged { iteration });
        }
        trace.push(elbo);
        params[..dim].copy_from_slice(&post.loc);
        params[dim..].copy_from_slice(&post.raw_scale);
        for i in 0..dim {
            grad[i] = -g.loc[i];
            grad[dim + i] = -g.raw_scale[i];
        }
        opt.step(&mut params, &grad);
        post.loc.copy_from_slice(&params[..dim]);
        post.raw_scale.copy_from_slice(&params[dim..]);
    }
    Ok(FitResult { posterior: post, trace })
}

/// Monte-Carlo posterior-predictive `E_q[sigmoid(x · β)]`.
///
/// Under the mean-field guide `x · β` is Normal with mean `Σ xⱼ μⱼ` and
/// variance `Σ xⱼ² sⱼ²`, so each guide draw reduces to one draw of the
/// linear predictor.
pub fn predict_prob<R: rand::Rng + ?Sized>(
    post: &Posterior,
    record: &FeatureVector,
    n_samples: usize,
    rng: &mut R,
) -> f64 {
    let n_samples = n_samples.max(1);
    let (mut mean, mut var) = (0.0, 0.0);
    for &(j, x) in &record.active {
        let s = post.scale(j);
        mean += x * post.loc[j];
        var += x * x * s * s;
    }
    let sd = math::sqrt(var);
    let mut acc = 0.0;
    for _ in 0..n_samples {
        acc += math::sigmoid(mean + sd * rng::standard_normal(rng));
    }
    (acc / n_samples as f64).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON)
}

/// Predictive probabilities for every row of `batch`, from one seeded stream.
pub fn predict_batch(post: &Posterior, batch: &EncodedBatch, n_samples: usize, seed: u64) -> Vec<f64> {
    let mut rng: Rng = rng::stream(seed, streams::PREDICT);
    (0..batch.len()).map(|i| predict_prob(post, &batch.row_vector(i), n_samples, &mut rng)).collect()
}

/// Fraction of rows whose thresholded prediction matches the label.
pub fn accuracy(probs: &[f64], batch: &EncodedBatch, threshold: f64) -> f64 {
    if batch.is_empty() {
        return 0.0;
    }
    let hits = probs.iter().enumerate().filter(|&(i, &p)| (p >= threshold) == batch.label(i)).count();
    hits as f64 / batch.len() as f64
}

/// Terms whose columns get a group scale, for reporting.
pub fn random_term_names(spec: &ModelSpec) -> Vec<String> {
    spec.schema()
        .terms()
        .iter()
        .filter(|t| t.kind() == TermKind::Random)
        .map(|t| t.name())
        .collect()
}
