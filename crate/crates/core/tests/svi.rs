use prepstudy_core::bayes::{
    self, elbo_and_grad, elbo_and_grad_estimated, fit, ElboEstimator, EncodedBatch, FitConfig, ModelSpec,
    Posterior,
};
use prepstudy_core::design::{fit_standardization, DesignSchema, Standardization, Term};
use prepstudy_core::record::{Factor, ResponseRecord, ResponseTable};
use prepstudy_core::rng;
use prepstudy_core::stats;
use prepstudy_core::synth::{self, GridSpec, TruthSpec};
use rand::Rng;

fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn encode(schema: &DesignSchema, std: &Standardization, records: &[ResponseRecord]) -> EncodedBatch {
    let fvs: Vec<_> = records.iter().map(|r| schema.encode(r, std)).collect();
    EncodedBatch::from_rows(fvs.iter().zip(records.iter().map(|r| r.correct)))
}

/// Random small schema over a few factors, plus a matching batch and guide.
fn random_instance(seed: u64) -> (ModelSpec, EncodedBatch, Posterior) {
    let mut r = rng::stream(seed, 1000);
    let grid = GridSpec::study(r.random_range(2..5)).with_lm_covariates();
    let gjt: Vec<ResponseRecord> = grid.cells(seed).into_iter().filter(|c| c.p_tgt.is_some()).collect();
    let pool = [
        vec![Factor::Time],
        vec![Factor::Student],
        vec![Factor::Answer],
        vec![Factor::FormFxn, Factor::Usage],
        vec![Factor::Instruction, Factor::Time],
        vec![Factor::Student, Factor::Answer],
    ];
    let mut terms = vec![Term::intercept()];
    for f in &pool {
        if r.random_bool(0.6) {
            terms.push(Term::random(f).unwrap());
        }
    }
    if terms.len() == 1 {
        terms.push(Term::random(&[Factor::Usage]).unwrap());
    }
    if r.random_bool(0.5) {
        terms.push(Term::fixed(&[Factor::PTgt]).unwrap());
        terms.push(Term::fixed(&[Factor::PTgt, Factor::PCtx]).unwrap());
    }
    let rows: Vec<ResponseRecord> = (0..r.random_range(5..40))
        .map(|_| {
            let mut c = gjt[r.random_range(0..gjt.len())].clone();
            c.correct = r.random_bool(0.6);
            c
        })
        .collect();
    let schema = DesignSchema::fit(terms, &rows).unwrap();
    let std = fit_standardization(&rows).unwrap();
    let spec = ModelSpec::new(schema, r.random_range(0.5..10.0), r.random_range(0.5..2.0)).unwrap();
    let batch = encode(spec.schema(), &std, &rows);
    let dim = spec.dim();
    let post = Posterior::new(
        spec.n_columns(),
        (0..dim).map(|_| r.random_range(-1.0..1.0)).collect(),
        (0..dim).map(|_| r.random_range(-2.5..0.5)).collect(),
    )
    .unwrap();
    (spec, batch, post)
}

#[test]
fn elbo_gradient_matches_central_differences() {
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for instance in 0..20 {
        let (spec, batch, post) = random_instance(instance);
        let mut noise_rng = rng::stream(instance, 2000);
        let noise: Vec<Vec<f64>> = (0..2)
            .map(|_| {
                let mut e = vec![0.0; post.dim()];
                rng::fill_standard_normal(&mut noise_rng, &mut e);
                e
            })
            .collect();
        for est in [ElboEstimator::Reparameterized, ElboEstimator::AnalyticPrior] {
        let (_, grad) = elbo_and_grad_estimated(&spec, &post, &batch, &noise, est).unwrap();
        let elbo_at = |p: &Posterior| elbo_and_grad_estimated(&spec, p, &batch, &noise, est).unwrap().0;
        for i in 0..post.dim() {
            for (which, analytic) in [(0, grad.loc[i]), (1, grad.raw_scale[i])] {
                let mut plus = post.clone();
                let mut minus = post.clone();
                let (p, m) = if which == 0 {
                    (&mut plus.loc[i], &mut minus.loc[i])
                } else {
                    (&mut plus.raw_scale[i], &mut minus.raw_scale[i])
                };
                *p += h;
                *m -= h;
                let fd = (elbo_at(&plus) - elbo_at(&minus)) / (2.0 * h);
                worst = worst.max(relative_error(analytic, fd));
            }
        }
        }
    }
    assert!(worst < 1e-4, "max relative error {worst}");
}

#[test]
fn estimators_agree_in_expectation() {
    let (spec, batch, post) = random_instance(4);
    let mut rng = rng::stream(7, 0);
    let mut mean = |est| {
        let draws: Vec<f64> = (0..4000)
            .map(|_| {
                let mut e = vec![0.0; post.dim()];
                rng::fill_standard_normal(&mut rng, &mut e);
                elbo_and_grad_estimated(&spec, &post, &batch, &[e], est).unwrap().0
            })
            .collect();
        (stats::mean(&draws), stats::sample_sd(&draws) / (draws.len() as f64).sqrt())
    };
    let (a, se_a) = mean(ElboEstimator::Reparameterized);
    let (b, se_b) = mean(ElboEstimator::AnalyticPrior);
    assert!((a - b).abs() < 4.0 * (se_a * se_a + se_b * se_b).sqrt(), "{a} vs {b}");
    assert!(se_b < se_a);
}

/// Fixed tiny problem with a guide close to the fitted regime.
fn tiny_problem() -> (ModelSpec, EncodedBatch, Posterior) {
    let (schema, table) = small_problem(3, 11);
    let spec = ModelSpec::with_defaults(schema.clone());
    let batch = encode(&schema, &Standardization::default(), &table.records()[..60]);
    (spec.clone(), batch, Posterior::initial(&spec, 0.1))
}

#[test]
fn elbo_variance_shrinks_with_particles() {
    let (spec, batch, post) = tiny_problem();
    let mut rng = rng::stream(99, 0);
    let mut variance = |k: usize| {
        let draws: Vec<f64> =
            (0..100).map(|_| elbo_and_grad(&spec, &post, &batch, k, &mut rng).unwrap().0).collect();
        stats::sample_sd(&draws).powi(2)
    };
    let ratio = variance(1) / variance(16);
    // expected 16; F(99, 99) puts 99.9% of ratios inside [8, 32]
    assert!((8.0..32.0).contains(&ratio), "variance ratio {ratio}");
}

fn small_problem(n_students: usize, seed: u64) -> (DesignSchema, ResponseTable) {
    let grid = GridSpec::study(n_students);
    let schema = DesignSchema::fit(synth::recovery_terms(), &grid.cells(seed)).unwrap();
    let truth = TruthSpec::uniform(schema.clone(), Standardization::default(), 1.5, seed);
    (schema, synth::generate(&grid, &truth).unwrap().table)
}

fn unobserved_student_mean(estimator: ElboEstimator, seed: u64) -> f64 {
    let (schema, table) = small_problem(12, 5);
    let train: Vec<ResponseRecord> = table.records().iter().filter(|r| r.student_id != "s12").cloned().collect();
    let spec = ModelSpec::with_defaults(schema.clone());
    let cfg = FitConfig { seed, estimator, ..Default::default() };
    let res = fit(&spec, &encode(&schema, &Standardization::default(), &train), &cfg).unwrap();
    let col = schema.column(schema.term_index(&[Factor::Student]).unwrap(), &["s12"]).unwrap();
    res.posterior.beta(col).0
}

#[test]
fn unobserved_student_stays_at_prior() {
    for seed in 0..3 {
        let mu = unobserved_student_mean(ElboEstimator::AnalyticPrior, seed);
        assert!(mu.abs() < 0.1, "unobserved student mean {mu}");
    }
    // K = 1 Monte Carlo prior term leaves an optimizer noise floor, sd near 0.17
    let mut spread: Vec<f64> =
        (0..5).map(|seed| unobserved_student_mean(ElboEstimator::Reparameterized, seed).abs()).collect();
    spread.sort_by(f64::total_cmp);
    assert!(spread[2] < 0.3, "{spread:?}");
}

#[test]
fn fit_is_bitwise_deterministic() {
    let (schema, table) = small_problem(8, 1);
    let spec = ModelSpec::with_defaults(schema.clone());
    let batch = encode(&schema, &Standardization::default(), table.records());
    let cfg = FitConfig { iterations: 200, seed: 17, ..Default::default() };
    let a = fit(&spec, &batch, &cfg).unwrap();
    let b = fit(&spec, &batch, &cfg).unwrap();
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.posterior.loc), bits(&b.posterior.loc));
    assert_eq!(bits(&a.posterior.raw_scale), bits(&b.posterior.raw_scale));
    assert_eq!(bits(&a.trace), bits(&b.trace));
    let c = fit(&spec, &batch, &FitConfig { seed: 18, ..cfg }).unwrap();
    assert_ne!(bits(&a.posterior.loc), bits(&c.posterior.loc));
}

#[test]
fn guide_scales_stay_positive() {
    let (schema, table) = small_problem(6, 2);
    let spec = ModelSpec::with_defaults(schema.clone());
    let batch = encode(&schema, &Standardization::default(), table.records());
    let res = fit(&spec, &batch, &FitConfig { iterations: 300, ..Default::default() }).unwrap();
    assert!(res.posterior.scales().iter().all(|&s| s > 0.0));
    assert_eq!(res.trace.len(), 300);
}

#[test]
fn shrinkage_grows_as_group_prior_narrows() {
    let (schema, table) = small_problem(10, 3);
    let batch = encode(&schema, &Standardization::default(), table.records());
    let categorical: Vec<usize> =
        (0..schema.n_columns()).filter(|&j| schema.group_of_column(j).is_some()).collect();
    let mean_abs = |s0: f64| {
        let spec = ModelSpec::new(schema.clone(), s0, 1.0).unwrap();
        let res = fit(&spec, &batch, &FitConfig { iterations: 600, ..Default::default() }).unwrap();
        categorical.iter().map(|&j| res.posterior.loc[j].abs()).sum::<f64>() / categorical.len() as f64
    };
    let sizes: Vec<f64> = [0.01, 0.1, 1.0, 10.0].iter().map(|&s| mean_abs(s)).collect();
    assert!(sizes.windows(2).all(|w| w[0] < w[1]), "{sizes:?}");
    assert!(sizes[0] < 0.05, "{sizes:?}");
}

/// Means of consecutive 50-iteration blocks may not drop by more than three
/// standard errors of the block's own noise.
fn smoothed_trace_non_decreasing(trace: &[f64]) -> bool {
    let blocks: Vec<&[f64]> = trace[..500].chunks(50).collect();
    let means: Vec<f64> = blocks.iter().map(|b| stats::mean(b)).collect();
    blocks.windows(2).zip(means.windows(2)).all(|(b, m)| {
        let se = stats::sample_sd(b[1]) / 50f64.sqrt();
        m[1] >= m[0] - 3.0 * se
    })
}

#[test]
fn smoothed_elbo_trace_rises() {
    let mut ok = 0;
    for seed in 0..10 {
        let (schema, table) = small_problem(20, seed);
        let spec = ModelSpec::with_defaults(schema.clone());
        let batch = encode(&schema, &Standardization::default(), table.records());
        let res = fit(&spec, &batch, &FitConfig { iterations: 500, seed, ..Default::default() }).unwrap();
        if smoothed_trace_non_decreasing(&res.trace) {
            ok += 1;
        }
    }
    assert!(ok >= 9, "{ok}/10 seeds");
}

#[test]
fn prior_guide_classifies_at_chance() {
    let (schema, table) = small_problem(30, 4);
    let spec = ModelSpec::with_defaults(schema.clone());
    let batch = encode(&schema, &Standardization::default(), table.records());
    let probs = bayes::predict_batch(&Posterior::standard(&spec), &batch, 100, 0);
    let acc = bayes::accuracy(&probs, &batch, 0.5);
    assert!((acc - 0.5).abs() < 0.05, "prior accuracy {acc}");
}

#[test]
fn fitted_model_beats_prior() {
    let (schema, table) = small_problem(30, 6);
    let spec = ModelSpec::with_defaults(schema.clone());
    let batch = encode(&schema, &Standardization::default(), table.records());
    let res = fit(&spec, &batch, &FitConfig::default()).unwrap();
    let acc = bayes::accuracy(&bayes::predict_batch(&res.posterior, &batch, 100, 0), &batch, 0.5);
    assert!(acc > 0.7, "train accuracy {acc}");
}

