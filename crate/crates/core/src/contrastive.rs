//! In-batch positive and negative sets and the NCE, MINCE and BPR losses.
//!
//! Every batch owns a bank of encoded items: each unique item id appears
//! `variants` times, once per dropout mask. Positives and negatives are row
//! indices into that bank; the losses score predictions against it.

use std::collections::{BTreeSet, HashMap};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::PADDING_ID;
use crate::dropout::{mix_seed, MaskKey};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::tape::{Tape, Var};

/// Per-item mask seed base within a batch. Variant `v` (1-based) of item
/// `item` is encoded under `item_seed(batch_seed, item) + v`.
pub fn item_seed(batch_seed: u64, item: usize) -> u64 {
    mix_seed(batch_seed, item as u64)
}

/// Row layout of a batch bank: unique ids in ascending order, each
/// followed by its variants.
#[derive(Debug, Clone, PartialEq)]
pub struct BankLayout {
    items: Vec<usize>,
    variants: usize,
    pos: HashMap<usize, usize>,
}

impl BankLayout {
    pub fn new(sequences: &[Vec<usize>], variants: usize) -> Result<Self> {
        if variants == 0 {
            return Err(Error::Invalid("bank needs at least one variant per item".into()));
        }
        let set: BTreeSet<usize> = sequences.iter().flatten().copied().filter(|&i| i != PADDING_ID).collect();
        let items: Vec<usize> = set.into_iter().collect();
        let pos = items.iter().enumerate().map(|(k, &i)| (i, k)).collect();
        Ok(BankLayout { items, variants, pos })
    }

    /// D, the number of unique non-padding ids.
    pub fn num_unique(&self) -> usize {
        self.items.len()
    }

    pub fn variants(&self) -> usize {
        self.variants
    }

    pub fn rows(&self) -> usize {
        self.items.len() * self.variants
    }

    pub fn items(&self) -> &[usize] {
        &self.items
    }

    /// Bank row of variant `v` (0-based) of `item`.
    pub fn row(&self, item: usize, v: usize) -> Option<usize> {
        if v >= self.variants {
            return None;
        }
        self.pos.get(&item).map(|&k| k * self.variants + v)
    }

    pub fn item_rows(&self, item: usize) -> Option<Vec<usize>> {
        let first = self.row(item, 0)?;
        Some((first..first + self.variants).collect())
    }
}

/// A prediction target: from the prefix ending at position `t` of sequence
/// `seq`, predict `item = sequences[seq][t + step]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Target {
    pub seq: usize,
    pub t: usize,
    pub step: usize,
    pub item: usize,
}

/// Every in-range target for `steps` rollout steps, ordered by step, then
/// sequence, then position. Targets past the end of a sequence are skipped.
pub fn enumerate_targets(sequences: &[Vec<usize>], steps: usize) -> Vec<Target> {
    let mut out = Vec::new();
    for step in 1..=steps {
        for (seq, s) in sequences.iter().enumerate() {
            for t in 0..s.len().saturating_sub(step) {
                out.push(Target { seq, t, step, item: s[t + step] });
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NegativeKind {
    /// From the target's own sequence.
    Temporal,
    /// From another sequence in the batch.
    General,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NegativeSet {
    pub rows: Vec<usize>,
    pub kinds: Vec<NegativeKind>,
}

impl NegativeSet {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn count(&self, kind: NegativeKind) -> usize {
        self.kinds.iter().filter(|&&k| k == kind).count()
    }
}

/// All bank rows of every batch item except the target id. Items that also
/// occur in the target's sequence are tagged temporal.
pub fn build_negative_set(layout: &BankLayout, sequences: &[Vec<usize>], target: &Target) -> Result<NegativeSet> {
    if layout.num_unique() < 2 {
        return Err(Error::Invalid("batch has a single unique item; no negatives available".into()));
    }
    if layout.row(target.item, 0).is_none() {
        return Err(Error::Invalid(format!("target item {} is not in the batch", target.item)));
    }
    let own = sequences
        .get(target.seq)
        .ok_or_else(|| Error::Invalid(format!("target sequence {} out of range", target.seq)))?;
    let own: BTreeSet<usize> = own.iter().copied().collect();
    let n = (layout.num_unique() - 1) * layout.variants();
    let mut rows = Vec::with_capacity(n);
    let mut kinds = Vec::with_capacity(n);
    for (k, &item) in layout.items().iter().enumerate() {
        if item == target.item {
            continue;
        }
        let kind = if own.contains(&item) { NegativeKind::Temporal } else { NegativeKind::General };
        for v in 0..layout.variants() {
            rows.push(k * layout.variants() + v);
            kinds.push(kind);
        }
    }
    Ok(NegativeSet { rows, kinds })
}

/// Target list with positive and negative bank rows. Predictions for the
/// targets are supplied separately, as rows of a `[targets, d]` matrix in
/// the same order.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveBatch {
    pub layout: BankLayout,
    pub targets: Vec<Target>,
    pub positives: Vec<Vec<usize>>,
    pub negatives: Vec<NegativeSet>,
}

impl ContrastiveBatch {
    pub fn new(sequences: &[Vec<usize>], steps: usize, variants: usize) -> Result<Self> {
        let layout = BankLayout::new(sequences, variants)?;
        let targets = enumerate_targets(sequences, steps);
        if targets.is_empty() {
            return Err(Error::Invalid("batch has no prediction targets".into()));
        }
        let mut positives = Vec::with_capacity(targets.len());
        let mut negatives = Vec::with_capacity(targets.len());
        for t in &targets {
            positives.push(layout.item_rows(t.item).expect("target items come from the batch"));
            negatives.push(build_negative_set(&layout, sequences, t)?);
        }
        Ok(ContrastiveBatch { layout, targets, positives, negatives })
    }

    pub fn num_unique(&self) -> usize {
        self.layout.num_unique()
    }

    pub fn q(&self) -> usize {
        self.layout.variants()
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

/// `q` encodings of `item` under masks `seed_base + 1 ..= seed_base + q`.
pub fn build_positive_set(model: &Model, tape: &mut Tape, item: usize, q: usize, seed_base: u64) -> Result<Vec<Var>> {
    let rate = model.config.dropout_rate;
    (1..=q as u64).map(|v| model.encode(tape, item, Some(MaskKey::new(seed_base.wrapping_add(v), rate)))).collect()
}

/// Encodes every bank row; `rate` overrides the model's dropout rate.
pub fn encode_bank(model: &Model, tape: &mut Tape, layout: &BankLayout, batch_seed: u64, rate: f64) -> Result<Var> {
    let mut rows = Vec::with_capacity(layout.rows());
    for &item in layout.items() {
        let base = item_seed(batch_seed, item);
        for v in 1..=layout.variants() as u64 {
            rows.push(model.encode(tape, item, Some(MaskKey::new(base.wrapping_add(v), rate)))?);
        }
    }
    tape.concat_rows(&rows)
}

fn check_rows(tape: &Tape, z_hat: Var, batch: &ContrastiveBatch) -> Result<()> {
    let n = tape.value(z_hat).rows();
    if n != batch.len() {
        return Err(Error::shape("contrastive loss", format!("{n} predictions for {} targets", batch.len())));
    }
    Ok(())
}

/// Mean over targets of `lse(P ∪ N) − lse(P)` on logits `ẑ·bankᵀ/τ`.
fn info_nce(tape: &mut Tape, z_hat: Var, bank: Var, batch: &ContrastiveBatch, tau: f64) -> Result<Var> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::Invalid(format!("temperature must be positive, got {tau}")));
    }
    check_rows(tape, z_hat, batch)?;
    let mut all = Vec::with_capacity(batch.len());
    for (i, (p, n)) in batch.positives.iter().zip(&batch.negatives).enumerate() {
        if p.is_empty() {
            return Err(Error::Invalid(format!("target {i} has no positives")));
        }
        if n.is_empty() {
            return Err(Error::Invalid(format!("target {i} has no negatives")));
        }
        let mut cols = p.clone();
        cols.extend_from_slice(&n.rows);
        all.push(cols);
    }
    let scores = tape.matmul_t(z_hat, bank)?;
    let logits = tape.scale(scores, 1.0 / tau)?;
    let num = tape.logsumexp_select(logits, batch.positives.clone())?;
    let den = tape.logsumexp_select(logits, all)?;
    let per_target = tape.sub(den, num)?;
    tape.mean(per_target)
}

/// Single-positive softmax cross-entropy against in-batch negatives.
pub fn nce_loss(tape: &mut Tape, z_hat: Var, bank: Var, batch: &ContrastiveBatch, tau: f64) -> Result<Var> {
    if let Some(i) = batch.positives.iter().position(|p| p.len() != 1) {
        return Err(Error::Invalid(format!("nce needs exactly one positive per target; target {i} has more")));
    }
    info_nce(tape, z_hat, bank, batch, tau)
}

/// Multi-positive variant: all `q` positives share the numerator.
pub fn mince_loss(tape: &mut Tape, z_hat: Var, bank: Var, batch: &ContrastiveBatch, tau: f64) -> Result<Var> {
    info_nce(tape, z_hat, bank, batch, tau)
}

/// One uniformly drawn negative bank row per target.
pub fn sample_bpr_negatives(batch: &ContrastiveBatch, seed: u64) -> Result<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    batch
        .negatives
        .iter()
        .enumerate()
        .map(|(i, n)| {
            if n.is_empty() {
                Err(Error::Invalid(format!("target {i} has no negatives")))
            } else {
                Ok(n.rows[rng.gen_range(0..n.len())])
            }
        })
        .collect()
}

/// Mean `−log σ(ẑ·z⁺ − ẑ·z⁻)`; `pos[i]` and `neg[i]` are bank rows.
pub fn bpr_loss(tape: &mut Tape, z_hat: Var, bank: Var, pos: Vec<usize>, neg: Vec<usize>) -> Result<Var> {
    let scores = tape.matmul_t(z_hat, bank)?;
    let sp = tape.pick_per_row(scores, pos)?;
    let sn = tape.pick_per_row(scores, neg)?;
    let margin = tape.sub(sn, sp)?;
    let l = tape.softplus(margin)?;
    tape.mean(l)
}
