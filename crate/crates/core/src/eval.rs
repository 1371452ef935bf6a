//! Full-catalog ranking metrics.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, SplitKind, PADDING_ID};
use crate::error::{Error, Result};
use crate::model::{score_catalog, Model};

/// 1-based rank of `target` in `scores`. Items scoring strictly higher come
/// first; ties are broken by id, so an equal-scoring item with a smaller id
/// ranks ahead of the target.
pub fn rank_of_target(scores: &[f64], target: usize) -> Result<usize> {
    if target == PADDING_ID {
        return Err(Error::Invalid("cannot rank the padding item".into()));
    }
    let s = *scores
        .get(target)
        .ok_or(Error::IdOutOfRange { table: "scores", id: target, size: scores.len() })?;
    if s.is_nan() {
        return Err(Error::NonFinite(format!("score of target {target} is NaN")));
    }
    let mut rank = 1;
    for (j, &x) in scores.iter().enumerate() {
        if x > s || (x == s && j < target) {
            rank += 1;
        }
    }
    Ok(rank)
}

fn check_ranks(ranks: &[usize], k: usize) -> Result<()> {
    if ranks.is_empty() {
        return Err(Error::Invalid("no ranks to aggregate".into()));
    }
    if k == 0 {
        return Err(Error::Invalid("K must be at least 1".into()));
    }
    Ok(())
}

pub fn hr_at_k(ranks: &[usize], k: usize) -> Result<f64> {
    check_ranks(ranks, k)?;
    Ok(ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64)
}

pub fn ndcg_at_k(ranks: &[usize], k: usize) -> Result<f64> {
    check_ranks(ranks, k)?;
    let gain: f64 = ranks.iter().filter(|&&r| r <= k).map(|&r| 1.0 / ((r + 1) as f64).log2()).sum();
    Ok(gain / ranks.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankResult {
    pub user: usize,
    pub target: usize,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub split: String,
    pub hr5: f64,
    pub ndcg5: f64,
    pub hr10: f64,
    pub ndcg10: f64,
    pub n_users: usize,
}

impl MetricsRecord {
    pub fn from_ranks(split: SplitKind, ranks: &[RankResult]) -> Result<Self> {
        let r: Vec<usize> = ranks.iter().map(|r| r.rank).collect();
        Ok(MetricsRecord {
            split: split.to_string(),
            hr5: hr_at_k(&r, 5)?,
            ndcg5: ndcg_at_k(&r, 5)?,
            hr10: hr_at_k(&r, 10)?,
            ndcg10: ndcg_at_k(&r, 10)?,
            n_users: r.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub metrics: MetricsRecord,
    pub ranks: Vec<RankResult>,
}

/// Ranks each user's held-out item under `scorer(user, context)`, which
/// returns one score per catalog id (padding included).
pub fn evaluate_with<F>(dataset: &Dataset, split: SplitKind, mut scorer: F) -> Result<Evaluation>
where
    F: FnMut(usize, &[usize]) -> Result<Vec<f64>>,
{
    if dataset.splits.is_empty() {
        return Err(Error::Invalid("dataset has no leave-one-out split".into()));
    }
    let mut ranks = Vec::with_capacity(dataset.splits.len());
    for (user, s) in dataset.splits.iter().enumerate() {
        let (context, target) = match split {
            SplitKind::Valid => (s.valid_context().to_vec(), s.valid),
            SplitKind::Test => (s.test_context(), s.test),
        };
        let mut scores = scorer(user, &context)?;
        if scores.len() != dataset.catalog.num_items() + 1 {
            return Err(Error::shape("evaluate", format!("{} scores for {} items", scores.len(), dataset.catalog.num_items())));
        }
        scores[PADDING_ID] = f64::NEG_INFINITY;
        ranks.push(RankResult { user, target, rank: rank_of_target(&scores, target)? });
    }
    Ok(Evaluation { metrics: MetricsRecord::from_ranks(split, &ranks)?, ranks })
}

/// Scores every catalog item for every user with dropout disabled.
pub fn evaluate_full_ranking(model: &Model, dataset: &Dataset, split: SplitKind) -> Result<Evaluation> {
    if model.catalog() != &dataset.catalog {
        return Err(Error::Invalid("model catalog does not match the dataset".into()));
    }
    let catalog_z = model.encode_catalog()?;
    evaluate_with(dataset, split, |_, ctx| score_catalog(&model.context_query(&catalog_z, ctx)?, &catalog_z))
}

/// Ranks by interaction count over every user's context for `split`.
pub fn evaluate_popularity(dataset: &Dataset, split: SplitKind) -> Result<Evaluation> {
    let mut counts = vec![0.0; dataset.catalog.num_items() + 1];
    for s in &dataset.splits {
        let ctx = match split {
            SplitKind::Valid => s.valid_context().to_vec(),
            SplitKind::Test => s.test_context(),
        };
        for i in ctx {
            counts[i] += 1.0;
        }
    }
    evaluate_with(dataset, split, |_, _| Ok(counts.clone()))
}

pub fn ranks_csv(ranks: &[RankResult]) -> String {
    let mut out = String::from("user,target,rank\n");
    for r in ranks {
        writeln!(out, "{},{},{}", r.user, r.target, r.rank).expect("writing to a String");
    }
    out
}

pub fn write_evaluation(eval: &Evaluation, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let metrics = dir.join(format!("metrics_{}.json", eval.metrics.split));
    std::fs::write(&metrics, serde_json::to_string_pretty(&eval.metrics)?).map_err(|e| Error::io(&metrics, e))?;
    let ranks = dir.join(format!("ranks_{}.csv", eval.metrics.split));
    std::fs::write(&ranks, ranks_csv(&eval.ranks)).map_err(|e| Error::io(&ranks, e))
}
