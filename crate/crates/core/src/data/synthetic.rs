//! Markov-chain corpus with known dynamics.
//!
//! Items are partitioned into contiguous clusters, one cluster per
//! attribute. From any item the next item stays inside its cluster with
//! probability 0.8 (skewed, item-specific weights, no self loop) and is
//! uniform over the whole catalog with probability 0.2.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};

use super::{Dataset, RawAttributes, RawInteraction, PADDING_ID};
use crate::error::{Error, Result};

pub const CLUSTER_MASS: f64 = 0.8;
pub const MIN_LEN: usize = 8;
pub const MAX_LEN: usize = 30;
/// Probability that an item carries one extra attribute outside its cluster.
const EXTRA_ATTR_PROB: f64 = 0.25;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub interactions: Vec<RawInteraction>,
    pub attributes: Vec<RawAttributes>,
    /// Row-stochastic transition matrix over generator item indices.
    pub transitions: Vec<Vec<f64>>,
    pub item_names: Vec<String>,
    pub cluster_of: Vec<usize>,
}

pub fn generate_synthetic(users: usize, items: usize, attrs: usize, seed: u64) -> Result<SyntheticCorpus> {
    if items < 20 || users < 100 {
        return Err(Error::Invalid(format!("synthetic corpus needs items >= 20 and users >= 100, got {items}/{users}")));
    }
    if attrs == 0 || attrs > items / 2 {
        return Err(Error::Invalid(format!("attrs must be in 1..={}, got {attrs}", items / 2)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cluster_of: Vec<usize> = (0..items).map(|i| i * attrs / items).collect();
    let item_names: Vec<String> = (0..items).map(|i| format!("i{i}")).collect();

    let mut transitions = vec![vec![0.0; items]; items];
    for (i, row) in transitions.iter_mut().enumerate() {
        let members: Vec<usize> = (0..items).filter(|&j| j != i && cluster_of[j] == cluster_of[i]).collect();
        let weights: Vec<f64> = members.iter().map(|_| Exp1.sample(&mut rng)).collect::<Vec<f64>>();
        let total: f64 = weights.iter().sum();
        for v in row.iter_mut() {
            *v = (1.0 - CLUSTER_MASS) / items as f64;
        }
        for (&j, w) in members.iter().zip(&weights) {
            row[j] += CLUSTER_MASS * w / total;
        }
    }

    let attributes = (0..items)
        .map(|i| {
            let mut labels = vec![format!("c{}", cluster_of[i])];
            if attrs > 1 && rng.gen::<f64>() < EXTRA_ATTR_PROB {
                let mut extra = rng.gen_range(0..attrs - 1);
                if extra >= cluster_of[i] {
                    extra += 1;
                }
                labels.push(format!("c{extra}"));
            }
            RawAttributes { item: item_names[i].clone(), attrs: labels }
        })
        .collect();

    let mut interactions = Vec::new();
    for u in 0..users {
        let len = rng.gen_range(MIN_LEN..=MAX_LEN);
        let mut cur = rng.gen_range(0..items);
        for t in 0..len {
            if t > 0 {
                cur = sample_row(&transitions[cur], &mut rng);
            }
            interactions.push(RawInteraction {
                user: format!("u{u}"),
                item: item_names[cur].clone(),
                timestamp: 1_600_000_000 + (u * 1000 + t) as i64,
            });
        }
    }

    Ok(SyntheticCorpus { interactions, attributes, transitions, item_names, cluster_of })
}

fn sample_row<R: Rng>(row: &[f64], rng: &mut R) -> usize {
    let x: f64 = rng.gen();
    let mut acc = 0.0;
    for (j, &p) in row.iter().enumerate() {
        acc += p;
        if x < acc {
            return j;
        }
    }
    row.len() - 1
}

impl SyntheticCorpus {
    /// True next-item probabilities given the previous internal item, indexed
    /// by internal id of `dataset`. Padding and items absent from the dataset
    /// score `-inf`.
    pub fn oracle_scores(&self, dataset: &Dataset, prev: usize) -> Vec<f64> {
        let n = dataset.catalog.num_items();
        let mut scores = vec![f64::NEG_INFINITY; n + 1];
        let gen_index = |internal: usize| -> Option<usize> {
            dataset.id_maps.items.get(internal - 1)?.strip_prefix('i')?.parse().ok()
        };
        let Some(from) = gen_index(prev) else { return scores };
        for (id, s) in scores.iter_mut().enumerate().skip(1) {
            if let Some(to) = gen_index(id) {
                *s = self.transitions[from][to];
            }
        }
        scores[PADDING_ID] = f64::NEG_INFINITY;
        scores
    }
}
