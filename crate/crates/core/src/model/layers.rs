//! Transformer block, soft-addressed memory and GRU cell.

use rand::Rng;

use crate::dropout::MaskKey;
use crate::error::Result;
use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

type Lookup<'a> = dyn Fn(&str, &[usize]) -> Result<ParamId> + 'a;

fn row(d: usize) -> Tensor {
    Tensor::zeros(&[1, d])
}

#[derive(Debug, Clone)]
struct HeadIds {
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
}

/// Pre-norm transformer block: `x + Attn(LN(x))`, then `h + FFN(LN(h))`.
#[derive(Debug, Clone)]
pub(super) struct BlockIds {
    ln1_gain: ParamId,
    ln1_bias: ParamId,
    heads: Vec<HeadIds>,
    attn_bias: ParamId,
    ln2_gain: ParamId,
    ln2_bias: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

pub(super) fn init_block<R: Rng>(
    store: &mut ParamStore,
    prefix: &str,
    d: usize,
    heads: usize,
    std: f64,
    rng: &mut R,
) -> Result<()> {
    let dh = d / heads;
    store.insert(format!("{prefix}.ln1.gain"), Tensor::full(&[1, d], 1.0))?;
    store.insert(format!("{prefix}.ln1.bias"), row(d))?;
    for h in 0..heads {
        store.insert(format!("{prefix}.attn.{h}.wq"), Tensor::randn(&[d, dh], std, rng))?;
        store.insert(format!("{prefix}.attn.{h}.wk"), Tensor::randn(&[d, dh], std, rng))?;
        store.insert(format!("{prefix}.attn.{h}.wv"), Tensor::randn(&[d, dh], std, rng))?;
        store.insert(format!("{prefix}.attn.{h}.wo"), Tensor::randn(&[dh, d], std, rng))?;
    }
    store.insert(format!("{prefix}.attn.bias"), row(d))?;
    store.insert(format!("{prefix}.ln2.gain"), Tensor::full(&[1, d], 1.0))?;
    store.insert(format!("{prefix}.ln2.bias"), row(d))?;
    store.insert(format!("{prefix}.ffn.w1"), Tensor::randn(&[d, d], std, rng))?;
    store.insert(format!("{prefix}.ffn.b1"), row(d))?;
    store.insert(format!("{prefix}.ffn.w2"), Tensor::randn(&[d, d], std, rng))?;
    store.insert(format!("{prefix}.ffn.b2"), row(d))?;
    Ok(())
}

impl BlockIds {
    pub(super) fn lookup(prefix: &str, d: usize, heads: usize, lookup: &Lookup<'_>) -> Result<Self> {
        let dh = d / heads;
        let heads = (0..heads)
            .map(|h| {
                Ok(HeadIds {
                    wq: lookup(&format!("{prefix}.attn.{h}.wq"), &[d, dh])?,
                    wk: lookup(&format!("{prefix}.attn.{h}.wk"), &[d, dh])?,
                    wv: lookup(&format!("{prefix}.attn.{h}.wv"), &[d, dh])?,
                    wo: lookup(&format!("{prefix}.attn.{h}.wo"), &[dh, d])?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(BlockIds {
            ln1_gain: lookup(&format!("{prefix}.ln1.gain"), &[1, d])?,
            ln1_bias: lookup(&format!("{prefix}.ln1.bias"), &[1, d])?,
            heads,
            attn_bias: lookup(&format!("{prefix}.attn.bias"), &[1, d])?,
            ln2_gain: lookup(&format!("{prefix}.ln2.gain"), &[1, d])?,
            ln2_bias: lookup(&format!("{prefix}.ln2.bias"), &[1, d])?,
            w1: lookup(&format!("{prefix}.ffn.w1"), &[d, d])?,
            b1: lookup(&format!("{prefix}.ffn.b1"), &[1, d])?,
            w2: lookup(&format!("{prefix}.ffn.w2"), &[d, d])?,
            b2: lookup(&format!("{prefix}.ffn.b2"), &[1, d])?,
        })
    }

    pub(super) fn count(&self) -> usize {
        9 + 4 * self.heads.len()
    }

    /// `allowed[i * n + j]` says whether query `i` may attend to key `j`.
    /// With a mask key, dropout is applied to both sublayer outputs.
    pub(super) fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        allowed: &[bool],
        key: Option<MaskKey>,
    ) -> Result<Var> {
        let p = |tape: &mut Tape, id| tape.param(store, id);

        let g1 = p(tape, self.ln1_gain)?;
        let b1 = p(tape, self.ln1_bias)?;
        let h = tape.layer_norm(x, g1, b1)?;
        let mut attn: Option<Var> = None;
        for head in &self.heads {
            let wq = p(tape, head.wq)?;
            let wk = p(tape, head.wk)?;
            let wv = p(tape, head.wv)?;
            let wo = p(tape, head.wo)?;
            let q = tape.matmul(h, wq)?;
            let k = tape.matmul(h, wk)?;
            let v = tape.matmul(h, wv)?;
            let dh = tape.value(q).cols() as f64;
            let s = tape.matmul_t(q, k)?;
            let s = tape.scale(s, 1.0 / dh.sqrt())?;
            let a = tape.softmax_rows(s, Some(allowed))?;
            let o = tape.matmul(a, v)?;
            let o = tape.matmul(o, wo)?;
            attn = Some(match attn {
                Some(acc) => tape.add(acc, o)?,
                None => o,
            });
        }
        let ab = p(tape, self.attn_bias)?;
        let mut attn = tape.add_row(attn.expect("at least one head"), ab)?;
        if let Some(k) = key {
            let mask = k.child(1).mask(tape.value(attn).shape())?;
            attn = tape.dropout(attn, &mask)?;
        }
        let x = tape.add(x, attn)?;

        let g2 = p(tape, self.ln2_gain)?;
        let b2 = p(tape, self.ln2_bias)?;
        let h = tape.layer_norm(x, g2, b2)?;
        let w1 = p(tape, self.w1)?;
        let c1 = p(tape, self.b1)?;
        let w2 = p(tape, self.w2)?;
        let c2 = p(tape, self.b2)?;
        let f = tape.matmul(h, w1)?;
        let f = tape.add_row(f, c1)?;
        let f = tape.gelu(f)?;
        let f = tape.matmul(f, w2)?;
        let mut f = tape.add_row(f, c2)?;
        if let Some(k) = key {
            let mask = k.child(2).mask(tape.value(f).shape())?;
            f = tape.dropout(f, &mask)?;
        }
        tape.add(x, f)
    }
}

/// Addressing MLP `d → d → b` with ReLU, and the `b × d` bank.
#[derive(Debug, Clone)]
pub(super) struct MemoryIds {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
    pub(super) bank: ParamId,
}

pub(super) fn init_memory<R: Rng>(store: &mut ParamStore, d: usize, slots: usize, std: f64, rng: &mut R) -> Result<()> {
    store.insert("mem.mlp.w1", Tensor::randn(&[d, d], std, rng))?;
    store.insert("mem.mlp.b1", row(d))?;
    store.insert("mem.mlp.w2", Tensor::randn(&[d, slots], std, rng))?;
    store.insert("mem.mlp.b2", row(slots))?;
    store.insert("mem.bank", Tensor::randn(&[slots, d], std, rng))?;
    Ok(())
}

impl MemoryIds {
    pub(super) const COUNT: usize = 5;

    pub(super) fn lookup(d: usize, slots: usize, lookup: &Lookup<'_>) -> Result<Self> {
        Ok(MemoryIds {
            w1: lookup("mem.mlp.w1", &[d, d])?,
            b1: lookup("mem.mlp.b1", &[1, d])?,
            w2: lookup("mem.mlp.w2", &[d, slots])?,
            b2: lookup("mem.mlp.b2", &[1, slots])?,
            bank: lookup("mem.bank", &[slots, d])?,
        })
    }

    pub(super) fn weights(&self, tape: &mut Tape, store: &ParamStore, c: Var) -> Result<Var> {
        let w1 = tape.param(store, self.w1)?;
        let b1 = tape.param(store, self.b1)?;
        let w2 = tape.param(store, self.w2)?;
        let b2 = tape.param(store, self.b2)?;
        let h = tape.matmul(c, w1)?;
        let h = tape.add_row(h, b1)?;
        let h = tape.relu(h)?;
        let logits = tape.matmul(h, w2)?;
        let logits = tape.add_row(logits, b2)?;
        tape.softmax_rows(logits, None)
    }
}

/// GRU cell with hidden size `d`:
/// `r = σ(xW_r + hU_r + b_r)`, `u = σ(xW_u + hU_u + b_u)`,
/// `n = tanh(xW_n + b_in + r ⊙ (hU_n + b_hn))`, `h' = n + u ⊙ (h − n)`.
#[derive(Debug, Clone)]
pub(super) struct GruIds {
    w_r: ParamId,
    u_r: ParamId,
    b_r: ParamId,
    w_u: ParamId,
    u_u: ParamId,
    b_u: ParamId,
    w_n: ParamId,
    u_n: ParamId,
    b_in: ParamId,
    b_hn: ParamId,
}

pub(super) fn init_gru<R: Rng>(store: &mut ParamStore, d: usize, std: f64, rng: &mut R) -> Result<()> {
    for gate in ["r", "u", "n"] {
        store.insert(format!("ap.w_{gate}"), Tensor::randn(&[d, d], std, rng))?;
        store.insert(format!("ap.u_{gate}"), Tensor::randn(&[d, d], std, rng))?;
    }
    store.insert("ap.b_r", row(d))?;
    store.insert("ap.b_u", row(d))?;
    store.insert("ap.b_in", row(d))?;
    store.insert("ap.b_hn", row(d))?;
    Ok(())
}

impl GruIds {
    pub(super) const COUNT: usize = 10;

    pub(super) fn lookup(d: usize, lookup: &Lookup<'_>) -> Result<Self> {
        Ok(GruIds {
            w_r: lookup("ap.w_r", &[d, d])?,
            u_r: lookup("ap.u_r", &[d, d])?,
            b_r: lookup("ap.b_r", &[1, d])?,
            w_u: lookup("ap.w_u", &[d, d])?,
            u_u: lookup("ap.u_u", &[d, d])?,
            b_u: lookup("ap.b_u", &[1, d])?,
            w_n: lookup("ap.w_n", &[d, d])?,
            u_n: lookup("ap.u_n", &[d, d])?,
            b_in: lookup("ap.b_in", &[1, d])?,
            b_hn: lookup("ap.b_hn", &[1, d])?,
        })
    }

    pub(super) fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, h: Var) -> Result<Var> {
        let gate = |tape: &mut Tape, w: ParamId, u: ParamId, b: ParamId| -> Result<Var> {
            let w = tape.param(store, w)?;
            let u = tape.param(store, u)?;
            let b = tape.param(store, b)?;
            let xw = tape.matmul(x, w)?;
            let hu = tape.matmul(h, u)?;
            let s = tape.add(xw, hu)?;
            let s = tape.add_row(s, b)?;
            tape.sigmoid(s)
        };
        let r = gate(tape, self.w_r, self.u_r, self.b_r)?;
        let u = gate(tape, self.w_u, self.u_u, self.b_u)?;

        let w_n = tape.param(store, self.w_n)?;
        let u_n = tape.param(store, self.u_n)?;
        let b_in = tape.param(store, self.b_in)?;
        let b_hn = tape.param(store, self.b_hn)?;
        let xn = tape.matmul(x, w_n)?;
        let xn = tape.add_row(xn, b_in)?;
        let hn = tape.matmul(h, u_n)?;
        let hn = tape.add_row(hn, b_hn)?;
        let rhn = tape.mul(r, hn)?;
        let n = tape.add(xn, rhn)?;
        let n = tape.tanh(n)?;
        let diff = tape.sub(h, n)?;
        let gated = tape.mul(u, diff)?;
        tape.add(n, gated)
    }
}
