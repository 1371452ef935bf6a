//! The recommender network.
//!
//! Items are encoded from their id embedding and attribute embeddings by a
//! set transformer (no positional encoding), sequences of item encodings
//! are summarised by a causal transformer with learned positions, a soft
//! memory read maps each context vector to a predicted next-item encoding,
//! and a GRU cell rolls the context forward for multi-step prediction.

mod config;
mod layers;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::{
    LossVariant, MemoryVariant, ModelConfig, ScoreSource, MEMORY_SLOT_GRID, Q_GRID, STEPS_GRID, TAU_GRID,
};
use layers::{BlockIds, GruIds, MemoryIds};

use crate::data::{Catalog, PADDING_ID};
use crate::dropout::MaskKey;
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::{self, Tensor};

/// Parameter groups reported by gradient checks, in a fixed order.
pub const PARAM_GROUPS: [&str; 8] = [
    "item_emb",
    "attr_emb",
    "encoder",
    "aggregator",
    "memory_mlp",
    "memory_bank",
    "predictor",
    "positional",
];

pub fn param_group(name: &str) -> &'static str {
    match name {
        "emb_item" => "item_emb",
        "emb_attr" => "attr_emb",
        "pos" => "positional",
        "mem.bank" => "memory_bank",
        n if n.starts_with("enc.") => "encoder",
        n if n.starts_with("ta.") => "aggregator",
        n if n.starts_with("mem.mlp.") => "memory_mlp",
        n if n.starts_with("ap.") => "predictor",
        _ => "other",
    }
}

#[derive(Debug, Clone)]
struct ModelIds {
    emb_item: ParamId,
    emb_attr: ParamId,
    pos: ParamId,
    enc: Vec<BlockIds>,
    ta: Vec<BlockIds>,
    mem: MemoryIds,
    gru: GruIds,
}

/// Embedded items: `x` is `[n, d]`; `attrs[k]` is the `[m_max, d]` padded
/// attribute matrix of item `k` (absent when `m_max == 0`).
#[derive(Debug, Clone)]
pub struct Embedded {
    pub x: Var,
    pub attrs: Vec<Option<Var>>,
    pub mask: Vec<Vec<bool>>,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    catalog: Catalog,
    ids: ModelIds,
}

impl Model {
    /// Fresh model with normal(0, `init_std`) weights, zero biases, unit
    /// layer-norm gains and zeroed padding rows.
    pub fn new(config: ModelConfig, catalog: Catalog, seed: u64) -> Result<Model> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.d;
        let std = config.init_std;
        let mut store = ParamStore::new();

        let mut emb_item = Tensor::randn(&[catalog.num_items() + 1, d], std, &mut rng);
        emb_item.row_mut(PADDING_ID).fill(0.0);
        store.insert("emb_item", emb_item)?;
        let mut emb_attr = Tensor::randn(&[catalog.num_attrs() + 1, d], std, &mut rng);
        emb_attr.row_mut(PADDING_ID).fill(0.0);
        store.insert("emb_attr", emb_attr)?;
        store.insert("pos", Tensor::randn(&[config.max_len, d], std, &mut rng))?;
        for l in 0..config.layers {
            layers::init_block(&mut store, &format!("enc.{l}"), d, config.heads, std, &mut rng)?;
        }
        for l in 0..config.layers {
            layers::init_block(&mut store, &format!("ta.{l}"), d, config.heads, std, &mut rng)?;
        }
        layers::init_memory(&mut store, d, config.memory_slots, std, &mut rng)?;
        layers::init_gru(&mut store, d, std, &mut rng)?;

        Model::from_params(config, catalog, store)
    }

    /// Wraps an existing parameter store, checking every expected tensor is
    /// present with the right shape.
    pub fn from_params(config: ModelConfig, catalog: Catalog, params: ParamStore) -> Result<Model> {
        config.validate()?;
        let d = config.d;
        let lookup = |name: &str, shape: &[usize]| -> Result<ParamId> {
            let id = params.find(name).ok_or_else(|| Error::Invalid(format!("missing parameter `{name}`")))?;
            if params.get(id).shape() != shape {
                return Err(Error::shape(
                    "from_params",
                    format!("`{name}` is {:?}, expected {shape:?}", params.get(id).shape()),
                ));
            }
            Ok(id)
        };
        let emb_item = lookup("emb_item", &[catalog.num_items() + 1, d])?;
        let emb_attr = lookup("emb_attr", &[catalog.num_attrs() + 1, d])?;
        let pos = lookup("pos", &[config.max_len, d])?;
        let enc: Vec<BlockIds> = (0..config.layers)
            .map(|l| BlockIds::lookup(&format!("enc.{l}"), d, config.heads, &lookup))
            .collect::<Result<_>>()?;
        let ta: Vec<BlockIds> = (0..config.layers)
            .map(|l| BlockIds::lookup(&format!("ta.{l}"), d, config.heads, &lookup))
            .collect::<Result<_>>()?;
        let mem = MemoryIds::lookup(d, config.memory_slots, &lookup)?;
        let gru = GruIds::lookup(d, &lookup)?;
        let expected = 3 + enc_len(&enc) + enc_len(&ta) + MemoryIds::COUNT + GruIds::COUNT;
        if params.len() != expected {
            return Err(Error::Invalid(format!("expected {expected} parameters, found {}", params.len())));
        }
        let ids = ModelIds { emb_item, emb_attr, pos, enc, ta, mem, gru };
        Ok(Model { config, params, catalog, ids })
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn memory_bank_id(&self) -> ParamId {
        self.ids.mem.bank
    }

    pub fn item_embedding_id(&self) -> ParamId {
        self.ids.emb_item
    }

    pub fn attr_embedding_id(&self) -> ParamId {
        self.ids.emb_attr
    }

    /// Parameters grouped by [`param_group`], in [`PARAM_GROUPS`] order.
    pub fn param_groups(&self) -> Vec<(&'static str, Vec<ParamId>)> {
        PARAM_GROUPS
            .iter()
            .map(|&g| (g, self.params.iter().filter(|(_, n, _)| param_group(n) == g).map(|(id, _, _)| id).collect()))
            .collect()
    }

    /// Re-zeroes the padding rows of both embedding tables.
    pub fn zero_padding_rows(&mut self) {
        for id in [self.ids.emb_item, self.ids.emb_attr] {
            self.params.get_mut(id).row_mut(PADDING_ID).fill(0.0);
        }
    }

    /// Clears the gradient of the padding rows so they never move.
    pub fn mask_padding_grads(&mut self) {
        for id in [self.ids.emb_item, self.ids.emb_attr] {
            let t = self.params.get_mut(id);
            let d = t.cols();
            if let Some(g) = t.grad() {
                let mut g = g.to_vec();
                g[..d].fill(0.0);
                t.set_grad(g).expect("same length");
            }
        }
    }

    /// Looks up item rows and padded attribute sets.
    pub fn embed(&self, tape: &mut Tape, item_ids: &[usize], attr_sets: &[Vec<usize>]) -> Result<Embedded> {
        if item_ids.len() != attr_sets.len() {
            return Err(Error::shape("embed", format!("{} items, {} attribute sets", item_ids.len(), attr_sets.len())));
        }
        let n_items = self.catalog.num_items() + 1;
        let n_attrs = self.catalog.num_attrs() + 1;
        if let Some(&bad) = item_ids.iter().find(|&&i| i >= n_items) {
            return Err(Error::IdOutOfRange { table: "items", id: bad, size: n_items });
        }
        if let Some(&bad) = attr_sets.iter().flatten().find(|&&a| a >= n_attrs) {
            return Err(Error::IdOutOfRange { table: "attributes", id: bad, size: n_attrs });
        }
        let emb_item = tape.param(&self.params, self.ids.emb_item)?;
        let emb_attr = tape.param(&self.params, self.ids.emb_attr)?;
        let x = tape.gather_rows(emb_item, item_ids)?;
        let m_max = attr_sets.iter().map(Vec::len).max().unwrap_or(0);
        let mut attrs = Vec::with_capacity(attr_sets.len());
        let mut mask = Vec::with_capacity(attr_sets.len());
        for set in attr_sets {
            let mut ids = set.clone();
            ids.resize(m_max, PADDING_ID);
            let valid: Vec<bool> = (0..m_max).map(|k| k < set.len()).collect();
            attrs.push(if m_max == 0 { None } else { Some(tape.gather_rows(emb_attr, &ids)?) });
            mask.push(valid);
        }
        Ok(Embedded { x, attrs, mask })
    }

    /// Set encoder over `{x, a_1..a_m}`; returns the `[1, d]` output at the
    /// item token. Masked attribute slots are excluded from attention.
    pub fn encode_item(
        &self,
        tape: &mut Tape,
        x: Var,
        attrs: Option<Var>,
        mask: &[bool],
        key: Option<MaskKey>,
    ) -> Result<Var> {
        if tape.value(x).rows() != 1 {
            return Err(Error::shape("encode_item", "expects a single item row"));
        }
        let tokens = match attrs {
            Some(a) => {
                if tape.value(a).rows() != mask.len() {
                    return Err(Error::shape("encode_item", "attribute mask length"));
                }
                tape.concat_rows(&[x, a])?
            }
            None => x,
        };
        let valid: Vec<bool> = std::iter::once(true).chain(mask.iter().copied()).collect();
        let n = valid.len();
        let allowed: Vec<bool> = (0..n * n).map(|k| valid[k % n]).collect();
        let mut h = tokens;
        for (l, block) in self.ids.enc.iter().enumerate() {
            let site = key.map(|k| k.child(l as u64 + 1));
            h = block.forward(tape, &self.params, h, &allowed, site)?;
        }
        tape.slice_rows(h, 0, 1)
    }

    /// Encodes catalog items by id with their catalog attributes.
    pub fn encode(&self, tape: &mut Tape, item: usize, key: Option<MaskKey>) -> Result<Var> {
        if !self.catalog.contains(item) {
            return Err(Error::IdOutOfRange { table: "items", id: item, size: self.catalog.num_items() + 1 });
        }
        let attrs = self.catalog.attrs(item).to_vec();
        let e = self.embed(tape, &[item], &[attrs])?;
        self.encode_item(tape, e.x, e.attrs[0], &e.mask[0], key)
    }

    /// Encodes each `(item, mask)` pair and stacks the results as rows.
    pub fn encode_many(&self, tape: &mut Tape, items: &[(usize, Option<MaskKey>)]) -> Result<Var> {
        let rows = items.iter().map(|&(i, k)| self.encode(tape, i, k)).collect::<Result<Vec<_>>>()?;
        tape.concat_rows(&rows)
    }

    /// Causal temporal aggregation: row `t` of the output depends only on
    /// rows `0..=t` of `z_seq`.
    pub fn aggregate_context(&self, tape: &mut Tape, z_seq: Var, key: Option<MaskKey>) -> Result<Var> {
        let t = tape.value(z_seq).rows();
        if t > self.config.max_len {
            return Err(Error::Invalid(format!("sequence length {t} exceeds max_len {}", self.config.max_len)));
        }
        let pos = tape.param(&self.params, self.ids.pos)?;
        let pos = tape.slice_rows(pos, 0, t)?;
        let mut h = tape.add(z_seq, pos)?;
        if let Some(k) = key {
            let mask = k.child(0).mask(tape.value(h).shape())?;
            h = tape.dropout(h, &mask)?;
        }
        let allowed: Vec<bool> = (0..t * t).map(|k| k % t <= k / t).collect();
        for (l, block) in self.ids.ta.iter().enumerate() {
            let site = key.map(|k| k.child(l as u64 + 1));
            h = block.forward(tape, &self.params, h, &allowed, site)?;
        }
        Ok(h)
    }

    /// `softmax(MLP(c))` for every row of `c`, shape `[n, b]`.
    pub fn addressing_weights(&self, tape: &mut Tape, c: Var) -> Result<Var> {
        self.ids.mem.weights(tape, &self.params, c)
    }

    /// Soft memory read for an explicit variant; `none` is rejected.
    pub fn memory_read(&self, tape: &mut Tape, c: Var, variant: MemoryVariant) -> Result<Var> {
        let w = self.addressing_weights(tape, c)?;
        let bank = tape.param(&self.params, self.ids.mem.bank)?;
        let read = tape.matmul(w, bank)?;
        match variant {
            MemoryVariant::None => Err(Error::Invalid("memory_read needs a memory variant".into())),
            MemoryVariant::FcM => Ok(read),
            MemoryVariant::ResM => tape.add(read, c),
        }
    }

    /// The configured `g_m`: identity when the model has no memory.
    pub fn predict(&self, tape: &mut Tape, c: Var) -> Result<Var> {
        match self.config.memory_variant {
            MemoryVariant::None => Ok(c),
            v => self.memory_read(tape, c, v),
        }
    }

    pub fn gru_cell(&self, tape: &mut Tape, input: Var, state: Var) -> Result<Var> {
        self.ids.gru.forward(tape, &self.params, input, state)
    }

    /// Predicted encodings for steps `1..=steps` ahead of every row of `c`.
    pub fn rollout(&self, tape: &mut Tape, c: Var, steps: usize) -> Result<Vec<Var>> {
        if steps == 0 {
            return Err(Error::Invalid("rollout needs at least one step".into()));
        }
        let mut out = Vec::with_capacity(steps);
        let mut ctx = c;
        let mut z_hat = self.predict(tape, ctx)?;
        out.push(z_hat);
        for _ in 1..steps {
            ctx = self.gru_cell(tape, z_hat, ctx)?;
            z_hat = self.predict(tape, ctx)?;
            out.push(z_hat);
        }
        Ok(out)
    }

    /// Deterministic encoding of every catalog item, `[|I| + 1, d]` with a
    /// zero padding row.
    pub fn encode_catalog(&self) -> Result<Tensor> {
        let mut tape = Tape::new();
        let items: Vec<(usize, Option<MaskKey>)> = (1..=self.catalog.num_items()).map(|i| (i, None)).collect();
        let z = self.encode_many(&mut tape, &items)?;
        let d = self.config.d;
        let mut data = vec![0.0; d];
        data.extend_from_slice(tape.value(z).data());
        Tensor::matrix(self.catalog.num_items() + 1, d, data)
    }

    /// Scoring query for a user context: `c_t`, or `g_m(c_t)` when scoring
    /// from memory. Only the most recent `max_len` items are used.
    pub fn context_query(&self, catalog_z: &Tensor, context: &[usize]) -> Result<Vec<f64>> {
        if context.is_empty() {
            return Err(Error::Invalid("empty context".into()));
        }
        let start = context.len().saturating_sub(self.config.max_len);
        let ctx = &context[start..];
        let mut tape = Tape::new();
        let z_all = tape.constant(catalog_z.clone())?;
        let z_seq = tape.gather_rows(z_all, ctx)?;
        let c_all = self.aggregate_context(&mut tape, z_seq, None)?;
        let c_t = tape.slice_rows(c_all, ctx.len() - 1, 1)?;
        let q = match self.config.score_source {
            ScoreSource::Context => c_t,
            ScoreSource::Memory => self.predict(&mut tape, c_t)?,
        };
        Ok(tape.value(q).data().to_vec())
    }
}

fn enc_len(blocks: &[BlockIds]) -> usize {
    blocks.iter().map(BlockIds::count).sum()
}

/// `scores[i] = query · catalog_z[i]`; the padding id scores `-inf`.
pub fn score_catalog(query: &[f64], catalog_z: &Tensor) -> Result<Vec<f64>> {
    if query.len() != catalog_z.cols() {
        return Err(Error::shape("score_catalog", format!("query {} vs item width {}", query.len(), catalog_z.cols())));
    }
    let mut scores: Vec<f64> = (0..catalog_z.rows()).map(|i| tensor::dot(query, catalog_z.row(i))).collect();
    scores[PADDING_ID] = f64::NEG_INFINITY;
    Ok(scores)
}
