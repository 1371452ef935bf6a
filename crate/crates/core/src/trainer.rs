//! Adam, the epoch loop with early stopping, and ablation runs.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{make_batches, Dataset, SplitKind};
use crate::dropout::mix_seed;
use crate::error::{Error, Result};
use crate::eval::{evaluate_full_ranking, MetricsRecord};
use crate::model::{LossVariant, MemoryVariant, Model, ModelConfig};
use crate::objective::batch_loss;
use crate::params::ParamStore;
use crate::tape::Tape;

pub const LR_GRID: [f64; 5] = [0.0003, 0.001, 0.003, 0.01, 0.03];
pub const L2_GRID: [f64; 6] = [0.0, 0.1, 0.01, 0.001, 0.0001, 0.00001];

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub l2_weight: f64,
    pub epochs: usize,
    pub seed: u64,
    pub batch_size: usize,
    /// Epochs without a validation NDCG@10 improvement before stopping.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { lr: 0.001, l2_weight: 0.0, epochs: 50, seed: 0, batch_size: 256, patience: 10 }
    }
}

fn invalid(field: &str, reason: impl Into<String>) -> Error {
    Error::Config { field: field.to_string(), reason: reason.into() }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(invalid("lr", format!("must be positive, got {}", self.lr)));
        }
        if !(self.l2_weight >= 0.0 && self.l2_weight.is_finite()) {
            return Err(invalid("l2_weight", format!("must be non-negative, got {}", self.l2_weight)));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size", "must be positive"));
        }
        if self.patience == 0 {
            return Err(invalid("patience", "must be positive"));
        }
        Ok(())
    }

    pub fn validate_grids(&self) -> Result<()> {
        if !LR_GRID.contains(&self.lr) {
            return Err(invalid("lr", format!("{} not in {LR_GRID:?}", self.lr)));
        }
        if !L2_GRID.contains(&self.l2_weight) {
            return Err(invalid("l2_weight", format!("{} not in {L2_GRID:?}", self.l2_weight)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, _, t)| vec![0.0; t.numel()]).collect();
        AdamState { m: zeros.clone(), v: zeros, step: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn second_moments(&self) -> &[Vec<f64>] {
        &self.v
    }
}

/// One bias-corrected Adam update from the gradients stored on `params`,
/// followed by decoupled decay `p -= lr * l2_weight * p`. Parameters
/// without a gradient are treated as having a zero gradient. Nothing is
/// modified if any gradient is non-finite.
pub fn adam_step(params: &mut ParamStore, state: &mut AdamState, lr: f64, l2_weight: f64) -> Result<()> {
    if state.m.len() != params.len() {
        return Err(Error::Invalid(format!("optimizer tracks {} tensors, store has {}", state.m.len(), params.len())));
    }
    for (_, name, t) in params.iter() {
        if t.grad().is_some_and(|g| g.iter().any(|x| !x.is_finite())) {
            return Err(Error::NonFiniteGradient(name.to_string()));
        }
    }
    state.step += 1;
    let bc1 = 1.0 - BETA1.powi(state.step as i32);
    let bc2 = 1.0 - BETA2.powi(state.step as i32);
    let ids: Vec<_> = params.ids().collect();
    for (k, id) in ids.into_iter().enumerate() {
        let t = params.get_mut(id);
        let grad = t.grad().map(<[f64]>::to_vec);
        let (m, v) = (&mut state.m[k], &mut state.v[k]);
        let data = t.data_mut();
        for j in 0..data.len() {
            let g = grad.as_ref().map_or(0.0, |g| g[j]);
            m[j] = BETA1 * m[j] + (1.0 - BETA1) * g;
            v[j] = BETA2 * v[j] + (1.0 - BETA2) * g * g;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            data[j] -= lr * m_hat / (v_hat.sqrt() + EPSILON);
            data[j] -= lr * l2_weight * data[j];
        }
    }
    Ok(())
}

/// Adam step on a model that keeps both padding rows at zero.
pub fn model_step(model: &mut Model, state: &mut AdamState, lr: f64, l2_weight: f64) -> Result<()> {
    model.mask_padding_grads();
    adam_step(&mut model.params, state, lr, l2_weight)?;
    model.zero_padding_rows();
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub hr5: f64,
    pub ndcg5: f64,
    pub hr10: f64,
    pub ndcg10: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub log: Vec<EpochRecord>,
    /// Parameters with the best validation NDCG@10; the initialisation if
    /// no epoch ran.
    pub best: ParamStore,
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

pub fn log_csv(log: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,loss,hr5,ndcg5,hr10,ndcg10\n");
    for r in log {
        writeln!(out, "{},{},{},{},{},{}", r.epoch, r.loss, r.hr5, r.ndcg5, r.hr10, r.ndcg10).expect("writing to a String");
    }
    out
}

/// Mean batch loss over one pass of `dataset` with dropout on, updating
/// `model` after every batch.
pub fn train_epoch(model: &mut Model, state: &mut AdamState, dataset: &Dataset, cfg: &TrainConfig, epoch: usize) -> Result<f64> {
    let epoch_seed = mix_seed(cfg.seed, epoch as u64);
    let batches = make_batches(dataset, cfg.batch_size, epoch_seed);
    let mut total = 0.0;
    for (b, batch) in batches.iter().enumerate() {
        let mut tape = Tape::new();
        let out = batch_loss(model, &mut tape, &batch.sequences, mix_seed(epoch_seed, b as u64), true)?;
        let loss = tape.value(out.loss).data()[0];
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("batch {b} loss is {loss}")));
        }
        tape.backward(out.loss, &mut model.params)?;
        model_step(model, state, cfg.lr, cfg.l2_weight)?;
        total += loss;
    }
    Ok(total / batches.len().max(1) as f64)
}

/// Trains until `epochs` or early stopping, evaluating on the validation
/// split after every epoch. `on_epoch` sees each record as it is produced.
pub fn train<F>(model: &mut Model, dataset: &Dataset, cfg: &TrainConfig, mut on_epoch: F) -> Result<TrainOutcome>
where
    F: FnMut(&EpochRecord),
{
    cfg.validate()?;
    if dataset.splits.is_empty() {
        return Err(Error::Invalid("dataset has no leave-one-out split".into()));
    }
    let mut state = AdamState::new(&model.params);
    let mut best = model.params.clone();
    let mut best_score = f64::NEG_INFINITY;
    let mut best_epoch = None;
    let mut since_best = 0;
    let mut log = Vec::new();
    let mut stopped_early = false;

    for epoch in 1..=cfg.epochs {
        let last_good = model.params.clone();
        let diverged = |reason: String| Error::Diverged { epoch, reason, last_good: Box::new(last_good.clone()) };
        let loss = match train_epoch(model, &mut state, dataset, cfg, epoch) {
            Ok(l) => l,
            Err(Error::NonFinite(reason)) => return Err(diverged(reason)),
            Err(Error::NonFiniteGradient(name)) => return Err(diverged(format!("non-finite gradient for `{name}`"))),
            Err(e) => return Err(e),
        };
        model.params.clear_grads();
        let valid = evaluate_full_ranking(model, dataset, SplitKind::Valid)?.metrics;
        let record = EpochRecord {
            epoch,
            loss,
            hr5: valid.hr5,
            ndcg5: valid.ndcg5,
            hr10: valid.hr10,
            ndcg10: valid.ndcg10,
        };
        on_epoch(&record);
        log.push(record);
        if valid.ndcg10 > best_score {
            best_score = valid.ndcg10;
            best = model.params.clone();
            best_epoch = Some(epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                stopped_early = true;
                break;
            }
        }
    }
    Ok(TrainOutcome { log, best, best_epoch, stopped_early })
}

/// Per-slot L2 norms of the memory bank.
pub fn memory_norms(params: &ParamStore) -> Result<Vec<f64>> {
    let id = params.find("mem.bank").ok_or_else(|| Error::Invalid("no `mem.bank` parameter".into()))?;
    let bank = params.get(id);
    Ok((0..bank.rows()).map(|r| bank.row(r).iter().map(|x| x * x).sum::<f64>().sqrt()).collect())
}

pub fn memory_norms_csv(norms: &[f64]) -> String {
    let mut out = String::from("slot,l2_norm\n");
    for (slot, n) in norms.iter().enumerate() {
        writeln!(out, "{slot},{n}").expect("writing to a String");
    }
    out
}

/// One ablation cell: a memory variant paired with a loss.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AblationCell {
    pub name: String,
    pub memory: MemoryVariant,
    pub loss: LossVariant,
}

/// Resolves `cpc`, `+g_m`, `+mince`, `full`, or an explicit
/// `<memory>/<loss>` pair such as `fc-m/bpr`.
pub fn ablation_cell(name: &str) -> Result<AblationCell> {
    let (memory, loss) = match name {
        "cpc" => (MemoryVariant::None, LossVariant::Nce),
        "+g_m" => (MemoryVariant::ResM, LossVariant::Nce),
        "+mince" => (MemoryVariant::None, LossVariant::Mince),
        "full" => (MemoryVariant::ResM, LossVariant::Mince),
        other => match other.split_once('/') {
            Some((m, l)) => (m.parse()?, l.parse()?),
            None => return Err(Error::Invalid(format!("unknown ablation variant `{other}`"))),
        },
    };
    Ok(AblationCell { name: name.to_string(), memory, loss })
}

/// Cartesian product of memory and loss variants, memory-major.
pub fn ablation_matrix(memories: &[MemoryVariant], losses: &[LossVariant]) -> Vec<AblationCell> {
    memories
        .iter()
        .flat_map(|&m| losses.iter().map(move |&l| AblationCell { name: format!("{m}/{l}"), memory: m, loss: l }))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub memory: MemoryVariant,
    pub loss: LossVariant,
    pub seed: u64,
    pub best_epoch: usize,
    pub valid_ndcg10: f64,
    pub test: MetricsRecord,
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("variant,memory,loss,seed,best_epoch,valid_ndcg10,hr5,ndcg5,hr10,ndcg10\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.variant, r.memory, r.loss, r.seed, r.best_epoch, r.valid_ndcg10, r.test.hr5, r.test.ndcg5, r.test.hr10, r.test.ndcg10
        )
        .expect("writing to a String");
    }
    out
}

/// Trains one model per cell and seed, restores the best validation
/// checkpoint and reports test metrics. Cells run in order.
pub fn ablate<F>(
    dataset: &Dataset,
    base: &ModelConfig,
    train_cfg: &TrainConfig,
    cells: &[AblationCell],
    seeds: &[u64],
    mut on_row: F,
) -> Result<Vec<AblationRow>>
where
    F: FnMut(&AblationRow),
{
    if cells.is_empty() || seeds.is_empty() {
        return Err(Error::Invalid("ablation needs at least one variant and one seed".into()));
    }
    let mut rows = Vec::with_capacity(cells.len() * seeds.len());
    for &seed in seeds {
        for cell in cells {
            let cfg = ModelConfig { memory_variant: cell.memory, loss_variant: cell.loss, ..base.clone() };
            let tc = TrainConfig { seed, ..train_cfg.clone() };
            let mut model = Model::new(cfg, dataset.catalog.clone(), seed)?;
            let outcome = train(&mut model, dataset, &tc, |_| {})?;
            let valid_ndcg10 = outcome.best_epoch.map_or(f64::NAN, |e| outcome.log[e - 1].ndcg10);
            model.params = outcome.best;
            let test = evaluate_full_ranking(&model, dataset, SplitKind::Test)?.metrics;
            let row = AblationRow {
                variant: cell.name.clone(),
                memory: cell.memory,
                loss: cell.loss,
                seed,
                best_epoch: outcome.best_epoch.unwrap_or(0),
                valid_ndcg10,
                test,
            };
            on_row(&row);
            rows.push(row);
        }
    }
    Ok(rows)
}
