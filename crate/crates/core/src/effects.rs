//! Marginal effects, contrasts and interaction grids over a fitted posterior.
//!
//! Effects are read directly off the mean-field guide: every coefficient is
//! Normal with the guide's mean and scale, and the difference of two
//! coefficients is Normal with summed variances. Significance uses the
//! Altman-Bland approximation from a 95% interval.

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::bayes::{ModelSpec, Posterior};
use crate::design::{DesignSchema, TermKind};
use crate::math;
use crate::record::Factor;
use crate::{Error, Result};

/// Two-sided 97.5% standard Normal quantile.
pub const Z_95: f64 = 1.96;

/// Marginal posterior of one coefficient, in log-odds units.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectSummary {
    pub term: String,
    /// Level tuple joined with `,` in the term's factor order.
    pub level: String,
    pub mean: f64,
    pub sd: f64,
}

impl EffectSummary {
    pub fn new(term: impl Into<String>, level: impl Into<String>, mean: f64, sd: f64) -> Result<Self> {
        if !(sd > 0.0 && sd.is_finite() && mean.is_finite()) {
            return Err(Error::NonFinite("effect needs a finite mean and positive sd".into()));
        }
        Ok(EffectSummary { term: term.into(), level: level.into(), mean, sd })
    }

    /// `term=level` label used in reports.
    pub fn label(&self) -> String {
        let mut s = self.term.clone();
        s.push('=');
        s.push_str(&self.level);
        s
    }

    /// Change in predicted probability from adding this effect's mean to a
    /// baseline logit.
    pub fn probability_delta(&self, baseline_logit: f64) -> f64 {
        math::sigmoid(baseline_logit + self.mean) - math::sigmoid(baseline_logit)
    }
}

/// Normal difference between two effects.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastReport {
    pub level_a: String,
    pub level_b: String,
    pub diff_mean: f64,
    pub diff_sd: f64,
    pub ci95: (f64, f64),
    pub cohens_d: f64,
    pub p_value: f64,
}

impl ContrastReport {
    fn from_moments(level_a: String, level_b: String, diff_mean: f64, diff_sd: f64, pooled_sd: f64) -> Self {
        ContrastReport {
            level_a,
            level_b,
            diff_mean,
            diff_sd,
            ci95: (diff_mean - Z_95 * diff_sd, diff_mean + Z_95 * diff_sd),
            cohens_d: diff_mean / pooled_sd,
            p_value: p_from_z(diff_mean.abs() / diff_sd),
        }
    }
}

/// Guide marginal of the column for `levels` of the term over `factors`.
pub fn marginal_effect(
    spec: &ModelSpec,
    post: &Posterior,
    factors: &[Factor],
    levels: &[&str],
) -> Result<EffectSummary> {
    let schema = spec.schema();
    let unknown = || Error::UnknownEffect { term: factor_list(factors), level: levels.join(",") };
    let ti = schema.term_index(factors).ok_or_else(unknown)?;
    let term = &schema.terms()[ti];
    // accept levels in the caller's factor order; fixed terms take none
    let mut ordered = Vec::with_capacity(levels.len());
    if term.kind() == TermKind::Random {
        if levels.len() != factors.len() {
            return Err(unknown());
        }
        for f in term.factors() {
            let k = factors.iter().position(|g| g == f).ok_or_else(unknown)?;
            ordered.push(levels[k]);
        }
    } else if !levels.is_empty() {
        return Err(unknown());
    }
    let j = schema.column(ti, &ordered).ok_or_else(unknown)?;
    column_effect(schema, post, j)
}

/// Guide marginals of every column of the term over `factors`.
pub fn term_effects(spec: &ModelSpec, post: &Posterior, factors: &[Factor]) -> Result<Vec<EffectSummary>> {
    let schema = spec.schema();
    let ti = schema
        .term_index(factors)
        .ok_or_else(|| Error::Schema(alloc::format!("no term {}", factor_list(factors))))?;
    schema.term_columns(ti).map(|(j, _)| column_effect(schema, post, j)).collect()
}

/// Guide marginal of every column in the schema.
pub fn all_effects(spec: &ModelSpec, post: &Posterior) -> Result<Vec<EffectSummary>> {
    (0..spec.n_columns()).map(|j| column_effect(spec.schema(), post, j)).collect()
}

fn column_effect(schema: &DesignSchema, post: &Posterior, j: usize) -> Result<EffectSummary> {
    let c = &schema.columns()[j];
    let (mean, sd) = post.beta(j);
    EffectSummary::new(schema.terms()[c.term].name(), c.levels.join(","), mean, sd)
}

fn factor_list(factors: &[Factor]) -> String {
    if factors.is_empty() {
        return "intercept".to_string();
    }
    factors.iter().map(|f| f.name()).collect::<Vec<_>>().join(":")
}

/// `a − b` under independent Normal marginals, with the pooled-sd Cohen's d.
pub fn contrast(a: &EffectSummary, b: &EffectSummary) -> ContrastReport {
    let var = a.sd * a.sd + b.sd * b.sd;
    ContrastReport::from_moments(
        a.label(),
        b.label(),
        a.mean - b.mean,
        math::sqrt(var),
        math::sqrt(var / 2.0),
    )
}

/// Comparator for a single effect tested against zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NullComparator {
    /// `N(0, σ_a)`: a zero effect as uncertain as the one tested.
    MatchedScale,
    /// A point mass at zero.
    Point,
}

impl NullComparator {
    pub const ALL: [NullComparator; 2] = [NullComparator::MatchedScale, NullComparator::Point];

    pub fn as_str(self) -> &'static str {
        match self {
            NullComparator::MatchedScale => "null:matched-scale",
            NullComparator::Point => "null:point",
        }
    }
}

/// Contrast of `a` against a zero effect.
pub fn contrast_null(a: &EffectSummary, comparator: NullComparator) -> ContrastReport {
    match comparator {
        NullComparator::MatchedScale => {
            let null = EffectSummary { term: a.term.clone(), level: String::new(), mean: 0.0, sd: a.sd };
            ContrastReport { level_b: comparator.as_str().to_string(), ..contrast(a, &null) }
        }
        NullComparator::Point => ContrastReport::from_moments(
            a.label(),
            comparator.as_str().to_string(),
            a.mean,
            a.sd,
            math::sqrt(a.sd * a.sd / 2.0),
        ),
    }
}

/// Altman-Bland p-value for an estimate with a 95% confidence interval.
pub fn p_from_ci(estimate: f64, lower: f64, upper: f64) -> Result<f64> {
    if !(estimate.is_finite() && lower.is_finite() && upper.is_finite()) {
        return Err(Error::NonFinite("confidence interval".into()));
    }
    if upper <= lower {
        return Err(Error::ZeroWidthInterval);
    }
    let se = (upper - lower) / (2.0 * Z_95);
    Ok(p_from_z(estimate.abs() / se))
}

/// `exp(−0.717 z − 0.416 z²)` clamped to `(0, 1]`.
pub fn p_from_z(z: f64) -> f64 {
    let z = z.abs();
    math::exp(-0.717 * z - 0.416 * z * z).clamp(f64::MIN_POSITIVE, 1.0)
}

/// Logit at baseline: intercept mean with every other effect at zero and
/// covariates at their training mean.
pub fn baseline_logit(spec: &ModelSpec, post: &Posterior) -> f64 {
    spec.schema().intercept_column().map_or(0.0, |j| post.beta(j).0)
}

/// One cell of an interaction grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub effect: EffectSummary,
    /// False when the level pair never occurred in training; the cell then
    /// holds the guide's prior predictive `N(0, sd)` for an unseen level.
    pub observed: bool,
}

/// Row-major grid of an interaction term's coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionGrid {
    pub term: String,
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    pub cells: Vec<GridCell>,
}

impl InteractionGrid {
    pub fn cell(&self, row: usize, col: usize) -> &GridCell {
        &self.cells[row * self.cols.len() + col]
    }

    /// Means of one column across rows, e.g. every student's GJT-N cell.
    pub fn column_means(&self, col: usize) -> Vec<f64> {
        (0..self.rows.len()).map(|r| self.cell(r, col).effect.mean).collect()
    }
}

/// Levels of `factor` that appear anywhere in the schema, in the closed
/// label order when the factor has one.
pub fn schema_levels(schema: &DesignSchema, factor: Factor) -> Vec<String> {
    let mut seen = BTreeSet::new();
    for c in schema.columns() {
        let term = &schema.terms()[c.term];
        if let Some(k) = term.factors().iter().position(|&f| f == factor) {
            seen.insert(c.levels[k].clone());
        }
    }
    match factor.closed_levels() {
        Some(order) => order.into_iter().filter(|l| seen.contains(*l)).map(String::from).collect(),
        None => seen.into_iter().collect(),
    }
}

/// Grid over the two-way term `a:b`, rows indexed by levels of `a`.
pub fn interaction_grid(spec: &ModelSpec, post: &Posterior, a: Factor, b: Factor) -> Result<InteractionGrid> {
    let schema = spec.schema();
    let ti = schema
        .term_index(&[a, b])
        .ok_or_else(|| Error::Schema(alloc::format!("no interaction term {}:{}", a.name(), b.name())))?;
    let term = &schema.terms()[ti];
    let a_first = term.factors()[0] == a;
    let unseen_sd = match schema.group_of_term(ti) {
        Some(g) => {
            // marginal sd of β ~ N(0, σ) with log σ ~ N(m, s²)
            let (m, s) = post.log_sigma(g);
            math::exp(m + s * s)
        }
        None => spec.fixed_prior_sd(),
    };
    let rows = schema_levels(schema, a);
    let cols = schema_levels(schema, b);
    let mut cells = Vec::with_capacity(rows.len() * cols.len());
    for ra in &rows {
        for cb in &cols {
            let key: [&str; 2] = if a_first { [ra, cb] } else { [cb, ra] };
            let level = alloc::format!("{ra},{cb}");
            let cell = match schema.column(ti, &key) {
                Some(j) => {
                    let (mean, sd) = post.beta(j);
                    GridCell { effect: EffectSummary::new(term.name(), level, mean, sd)?, observed: true }
                }
                None => GridCell { effect: EffectSummary::new(term.name(), level, 0.0, unseen_sd)?, observed: false },
            };
            cells.push(cell);
        }
    }
    Ok(InteractionGrid { term: term.name(), rows, cols, cells })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::Term;
    use crate::record::tests::record;
    use crate::record::{Answer, Time};
    use alloc::vec;
    use proptest::prelude::*;

    fn effect(mean: f64, sd: f64) -> EffectSummary {
        EffectSummary::new("time", "POST", mean, sd).unwrap()
    }

    #[test]
    fn p_at_the_95_boundary_is_near_005() {
        let p = p_from_ci(1.96, 0.0, 3.92).unwrap();
        let oracle = (-0.717f64 * 1.96 - 0.416 * 1.96 * 1.96).exp();
        assert!((p - oracle).abs() < 1e-15);
        assert!((0.048..0.051).contains(&p), "{p}");
    }

    #[test]
    fn p_for_z_two() {
        let p = p_from_ci(1.0, 0.02, 1.98).unwrap();
        assert!((p - (-3.098f64).exp()).abs() < 1e-12, "{p}");
        assert!((p - 0.0451).abs() < 5e-5);
    }

    #[test]
    fn p_is_one_at_zero() {
        assert_eq!(p_from_ci(0.0, -1.0, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn degenerate_interval_is_rejected() {
        assert_eq!(p_from_ci(0.5, 1.0, 1.0), Err(Error::ZeroWidthInterval));
        assert_eq!(p_from_ci(0.5, 2.0, 1.0), Err(Error::ZeroWidthInterval));
        assert!(p_from_z(60.0) > 0.0);
    }

    #[test]
    fn unit_cohens_d() {
        let c = contrast(&effect(1.0, 1.0), &effect(0.0, 1.0));
        assert_eq!(c.cohens_d, 1.0);
        assert!((c.diff_sd - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn self_contrast_is_null() {
        let e = effect(0.7, 0.3);
        let c = contrast(&e, &e);
        assert_eq!(c.cohens_d, 0.0);
        assert_eq!(c.p_value, 1.0);
        assert!(c.ci95.0 < c.ci95.1);
    }

    #[test]
    fn null_comparators_differ_by_root_two() {
        let e = effect(0.9, 0.2);
        let m = contrast_null(&e, NullComparator::MatchedScale);
        let p = contrast_null(&e, NullComparator::Point);
        assert!((m.cohens_d - 0.9 / 0.2).abs() < 1e-12);
        assert!((p.cohens_d - 2f64.sqrt() * 0.9 / 0.2).abs() < 1e-12);
        assert!(p.p_value < m.p_value);
        assert_eq!(p.level_b, "null:point");
    }

    #[test]
    fn probability_delta_at_baseline() {
        let e = effect(1.0, 0.1);
        assert!((e.probability_delta(0.0) - (math::sigmoid(1.0) - 0.5)).abs() < 1e-15);
        assert!(effect(-1.0, 0.1).probability_delta(2.0) < 0.0);
    }

    fn toy_spec() -> (ModelSpec, Posterior) {
        let recs = vec![
            record("s1", "gjt-01a", Time::Pre, Answer::GjtY),
            record("s1", "gjt-01c", Time::Post, Answer::GjtN),
            record("s2", "gjt-01a", Time::Post, Answer::GjtY),
        ];
        let terms = vec![
            Term::intercept(),
            Term::random(&[Factor::Time]).unwrap(),
            Term::random(&[Factor::Student, Factor::Answer]).unwrap(),
        ];
        let schema = DesignSchema::fit(terms, &recs).unwrap();
        let spec = ModelSpec::with_defaults(schema);
        let n = spec.n_columns();
        let loc: Vec<f64> = (0..spec.dim()).map(|i| i as f64 / 10.0).collect();
        let post = Posterior::new(n, loc, vec![0.0; spec.dim()]).unwrap();
        (spec, post)
    }

    #[test]
    fn marginal_effect_reads_the_guide() {
        let (spec, post) = toy_spec();
        let e = marginal_effect(&spec, &post, &[Factor::Time], &["POST"]).unwrap();
        let j = spec.schema().column(spec.schema().term_index(&[Factor::Time]).unwrap(), &["POST"]).unwrap();
        assert_eq!((e.mean, e.sd), post.beta(j));
        assert_eq!(e.label(), "time=POST");
        let swapped = marginal_effect(&spec, &post, &[Factor::Answer, Factor::Student], &["GJT-N", "s1"]).unwrap();
        let direct = marginal_effect(&spec, &post, &[Factor::Student, Factor::Answer], &["s1", "GJT-N"]).unwrap();
        assert_eq!(swapped, direct);
        assert!(matches!(
            marginal_effect(&spec, &post, &[Factor::Time], &["DLY"]),
            Err(Error::UnknownEffect { .. })
        ));
        assert!(marginal_effect(&spec, &post, &[Factor::Usage], &["Spatial"]).is_err());
        assert_eq!(term_effects(&spec, &post, &[Factor::Time]).unwrap().len(), 2);
    }

    #[test]
    fn grid_has_every_level_pair() {
        let (spec, post) = toy_spec();
        let g = interaction_grid(&spec, &post, Factor::Student, Factor::Answer).unwrap();
        assert_eq!(g.rows, vec!["s1", "s2"]);
        assert_eq!(g.cols, vec!["GJT-Y", "GJT-N"]);
        assert_eq!(g.cells.len(), 4);
        let unseen = g.cell(1, 1);
        assert!(!unseen.observed);
        assert_eq!(unseen.effect.mean, 0.0);
        let t = interaction_grid(&spec, &post, Factor::Answer, Factor::Student).unwrap();
        assert_eq!(t.cell(0, 1).effect.mean, g.cell(1, 0).effect.mean);
        assert!(interaction_grid(&spec, &post, Factor::Time, Factor::Usage).is_err());
    }

    proptest! {
        #[test]
        fn contrast_is_antisymmetric(ma in -5.0..5.0f64, mb in -5.0..5.0f64, sa in 0.01..3.0f64, sb in 0.01..3.0f64) {
            let (a, b) = (effect(ma, sa), effect(mb, sb));
            let (ab, ba) = (contrast(&a, &b), contrast(&b, &a));
            prop_assert_eq!(ab.diff_mean, -ba.diff_mean);
            prop_assert_eq!(ab.p_value, ba.p_value);
            prop_assert_eq!(ab.cohens_d.abs(), ba.cohens_d.abs());
            prop_assert!(ab.p_value > 0.0 && ab.p_value <= 1.0);
        }

        #[test]
        fn p_is_sign_symmetric(e in -3.0..3.0f64, half in 0.01..4.0f64) {
            let (l, u) = (e - half, e + half);
            prop_assert_eq!(p_from_ci(e, l, u).unwrap(), p_from_ci(-e, -u, -l).unwrap());
        }

        #[test]
        fn p_decreases_in_z(z in 0.0..8.0f64, dz in 1e-3..2.0f64) {
            prop_assert!(p_from_z(z + dz) < p_from_z(z));
        }

        #[test]
        fn d_is_translation_invariant(ma in -5.0..5.0f64, mb in -5.0..5.0f64, c in -10.0..10.0f64, sa in 0.1..3.0f64) {
            let d0 = contrast(&effect(ma, sa), &effect(mb, 1.0)).cohens_d;
            let d1 = contrast(&effect(ma + c, sa), &effect(mb + c, 1.0)).cohens_d;
            prop_assert!((d0 - d1).abs() < 1e-9 * (1.0 + d0.abs()));
        }
    }
}
