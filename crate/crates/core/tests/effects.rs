use prepstudy_core::bayes::{fit, EncodedBatch, FitConfig, ModelSpec};
use prepstudy_core::design::{DesignSchema, Standardization, Term};
use prepstudy_core::effects::{self, interaction_grid, marginal_effect};
use prepstudy_core::record::{Factor, ResponseTable};
use prepstudy_core::synth::{self, GridSpec, TruthSpec};

fn encode(schema: &DesignSchema, table: &ResponseTable) -> EncodedBatch {
    let std = Standardization::default();
    let fvs: Vec<_> = table.records().iter().map(|r| schema.encode(r, &std)).collect();
    EncodedBatch::from_rows(fvs.iter().zip(table.records().iter().map(|r| r.correct)))
}

fn set(truth: &mut TruthSpec, factors: &[Factor], levels: &[&str], value: f64) {
    let ti = truth.schema.term_index(factors).unwrap();
    let j = truth.schema.column(ti, levels).unwrap();
    truth.beta[j] = value;
}

#[test]
fn fitted_effects_keep_the_true_ordering() {
    let terms = vec![
        Term::intercept(),
        Term::random(&[Factor::Time]).unwrap(),
        Term::random(&[Factor::Student]).unwrap(),
        Term::random(&[Factor::FormFxn, Factor::Usage, Factor::Answer]).unwrap(),
    ];
    let mut ordered = 0;
    for seed in 0..10 {
        let grid = GridSpec::study(20);
        let schema = DesignSchema::fit(terms.clone(), &grid.cells(seed)).unwrap();
        let mut truth = TruthSpec::uniform(schema.clone(), Standardization::default(), 1.0, seed);
        set(&mut truth, &[Factor::Time], &["PRE"], -0.3);
        set(&mut truth, &[Factor::Time], &["DLY"], 0.0);
        set(&mut truth, &[Factor::Time], &["POST"], 0.3);
        let data = synth::generate(&grid, &truth).unwrap();
        let spec = ModelSpec::with_defaults(schema.clone());
        let res = fit(&spec, &encode(&schema, &data.table), &FitConfig { seed, ..Default::default() }).unwrap();
        let pre = marginal_effect(&spec, &res.posterior, &[Factor::Time], &["PRE"]).unwrap();
        let post = marginal_effect(&spec, &res.posterior, &[Factor::Time], &["POST"]).unwrap();
        if post.mean > pre.mean {
            ordered += 1;
        }
    }
    assert!(ordered >= 9, "{ordered}/10 seeds ordered");
}

#[test]
fn zero_interaction_gives_a_flat_grid() {
    let terms = vec![
        Term::intercept(),
        Term::random(&[Factor::Student]).unwrap(),
        Term::random(&[Factor::Answer]).unwrap(),
        Term::random(&[Factor::FormFxn]).unwrap(),
        Term::random(&[Factor::Usage]).unwrap(),
        Term::random(&[Factor::FormFxn, Factor::Usage]).unwrap(),
    ];
    let grid = GridSpec::study(40);
    let schema = DesignSchema::fit(terms, &grid.cells(3)).unwrap();
    let mut truth = TruthSpec::uniform(schema.clone(), Standardization::default(), 1.0, 3);
    let ti = schema.term_index(&[Factor::FormFxn, Factor::Usage]).unwrap();
    for (j, _) in schema.term_columns(ti) {
        truth.beta[j] = 0.0;
    }
    let data = synth::generate(&grid, &truth).unwrap();
    let spec = ModelSpec::with_defaults(schema.clone());
    let res = fit(&spec, &encode(&schema, &data.table), &FitConfig::default()).unwrap();
    let g = interaction_grid(&spec, &res.posterior, Factor::FormFxn, Factor::Usage).unwrap();
    assert_eq!(g.cells.len(), 12);
    let worst = g.cells.iter().map(|c| c.effect.mean.abs()).fold(0.0, f64::max);
    assert!(worst < 0.15, "largest interaction mean {worst}");
    assert!(effects::all_effects(&spec, &res.posterior).unwrap().iter().all(|e| e.sd > 0.0));
}
