//! Seeded train/eval/dev partitioning.

use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::record::ResponseTable;
use crate::rng::{self, streams};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train_weight: f64,
    pub eval_weight: f64,
    pub dev_weight: f64,
    pub seed: u64,
}

impl SplitSpec {
    /// The 84:15:1 train:eval:dev ratio.
    pub fn standard(seed: u64) -> Self {
        SplitSpec { train_weight: 84.0, eval_weight: 15.0, dev_weight: 1.0, seed }
    }

    fn total(&self) -> Result<f64> {
        let ws = [self.train_weight, self.eval_weight, self.dev_weight];
        if ws.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidSplit("weights must be finite and nonnegative".into()));
        }
        let total: f64 = ws.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidSplit("weights sum to zero".into()));
        }
        Ok(total)
    }

    /// Partition sizes `(train, eval, dev)` for `n` records.
    ///
    /// Eval and dev get `floor(n * w / total)`; train takes the remainder. With
    /// at least 3 records a positively weighted eval or dev partition is given
    /// at least one record.
    pub fn sizes(&self, n: usize) -> Result<(usize, usize, usize)> {
        let total = self.total()?;
        let size = |w: f64| {
            let s = libm::floor(n as f64 * w / total) as usize;
            if s == 0 && w > 0.0 && n >= 3 { 1 } else { s }
        };
        let eval = size(self.eval_weight);
        let dev = size(self.dev_weight).min(n - eval);
        Ok((n - eval - dev, eval, dev))
    }
}

/// Index sets of a split, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub eval: Vec<usize>,
    pub dev: Vec<usize>,
}

pub fn split_indices(n: usize, spec: &SplitSpec) -> Result<SplitIndices> {
    if n == 0 {
        return Err(Error::NotEnoughData("cannot split an empty table".into()));
    }
    let (_, n_eval, n_dev) = spec.sizes(n)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(spec.seed, streams::SPLIT));
    let mut dev = order[..n_dev].to_vec();
    let mut eval = order[n_dev..n_dev + n_eval].to_vec();
    let mut train = order[n_dev + n_eval..].to_vec();
    dev.sort_unstable();
    eval.sort_unstable();
    train.sort_unstable();
    Ok(SplitIndices { train, eval, dev })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: ResponseTable,
    pub eval: ResponseTable,
    pub dev: ResponseTable,
}

impl Split {
    /// True when some partition came out empty, e.g. under 1:0:0 weights.
    pub fn is_degenerate(&self) -> bool {
        self.train.is_empty() || self.eval.is_empty() || self.dev.is_empty()
    }
}

pub fn split(table: &ResponseTable, spec: &SplitSpec) -> Result<Split> {
    let idx = split_indices(table.len(), spec)?;
    let take = |ids: &[usize]| {
        ResponseTable::from_subset(
            ids.iter().map(|&i| table.records()[i].clone()).collect(),
            table.provenance.clone(),
        )
    };
    Ok(Split { train: take(&idx.train), eval: take(&idx.eval), dev: take(&idx.dev) })
}
