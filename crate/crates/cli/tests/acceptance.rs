//! Acceptance suite: one test per criterion, numbered c01..c10.
//!
//! c07 and c08 train on the 1000-user synthetic corpus and dominate the
//! runtime (a few minutes in the optimised test profile). c09 needs the
//! Beauty 5-core dump in `$MMINFOREC_BEAUTY_DIR` and otherwise only checks
//! the reference table and the mismatch diagnostic.

use std::collections::BTreeSet;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use mminforec::cli::{FULL_RUN_EPOCHS, GRADCHECK_TOLERANCE};
use mminforec::contrastive::{bpr_loss, mince_loss, nce_loss, ContrastiveBatch};
use mminforec::data::{
    check_reference_counts, generate_synthetic, make_batches, parse, preprocess, split_leave_one_out, Catalog, Dataset,
    PreprocessOptions, SplitKind, PADDING_ID, REFERENCE_COUNTS,
};
use mminforec::dropout::MaskKey;
use mminforec::eval::{evaluate_full_ranking, evaluate_popularity, hr_at_k, ndcg_at_k, rank_of_target};
use mminforec::model::{LossVariant, MemoryVariant, Model, ModelConfig, PARAM_GROUPS};
use mminforec::objective::{batch_loss, pipeline_grad_check, GRAD_CHECK_STEP};
use mminforec::tape::Tape;
use mminforec::tensor::Tensor;
use mminforec::trainer::{ablate, ablation_cell, model_step, train, AdamState, TrainConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GRADCHECK_BUDGET: Duration = Duration::from_secs(120);
const CLOSED_FORM_TOL: f64 = 1e-12;
const INIT_LOSS_REL_TOL: f64 = 0.10;
const PERMUTATION_TOL: f64 = 1e-12;
const ADDRESSING_TOL: f64 = 1e-12;
const RECOVERY_BUDGET: Duration = Duration::from_secs(15 * 60);
const POPULARITY_FACTOR: f64 = 3.0;
const RANDOM_FACTOR: f64 = 10.0;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mminforec"))
}

fn random_catalog(rng: &mut ChaCha8Rng, items: usize, attrs: usize) -> Catalog {
    let item_attrs = (0..=items)
        .map(|i| if i == 0 { vec![] } else { (0..rng.gen_range(0..=3)).map(|_| rng.gen_range(1..=attrs)).collect() })
        .collect();
    Catalog::new(item_attrs, attrs).unwrap()
}

fn random_sequences(rng: &mut ChaCha8Rng, items: usize) -> Vec<Vec<usize>> {
    (0..rng.gen_range(1..=8)).map(|_| (0..rng.gen_range(2..=9)).map(|_| rng.gen_range(1..=items)).collect()).collect()
}

/// Synthetic corpus shared by the end-to-end criteria.
fn recovery_corpus() -> Dataset {
    let c = generate_synthetic(1000, 200, 20, 7).unwrap();
    split_leave_one_out(preprocess(&c.interactions, &c.attributes, PreprocessOptions::default()).unwrap()).unwrap()
}

fn recovery_model() -> ModelConfig {
    ModelConfig { d: 32, memory_slots: 10, q: 2, steps: 1, tau: 0.6, ..ModelConfig::default() }
}

fn recovery_train(seed: u64) -> TrainConfig {
    TrainConfig { lr: 0.001, epochs: 30, seed, ..TrainConfig::default() }
}

#[test]
fn c01_gradient_fidelity() {
    let start = Instant::now();
    let groups = pipeline_grad_check(8, 4, 0).unwrap();
    let elapsed = start.elapsed();
    assert_eq!(GRAD_CHECK_STEP, 1e-3);
    assert_eq!(groups.iter().map(|g| g.group).collect::<Vec<_>>(), PARAM_GROUPS);
    for g in &groups {
        assert!(g.entries > 0, "{} has no entries", g.group);
        assert!(g.max_rel_error < GRADCHECK_TOLERANCE, "{}: {:.3e}", g.group, g.max_rel_error);
    }
    assert!(elapsed < GRADCHECK_BUDGET, "{elapsed:?}");

    let out = bin().args(["gradcheck", "--dims", "8", "--batch", "4"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
}

#[test]
fn c02_negative_set_cardinality() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut checked = 0;
    while checked < 100 {
        let seqs = random_sequences(&mut rng, 30);
        let d = seqs.iter().flatten().collect::<BTreeSet<_>>().len();
        if d < 2 {
            continue;
        }
        let q = rng.gen_range(1..=4);
        for loss_variant in [LossVariant::Nce, LossVariant::Mince] {
            let cfg = ModelConfig { q, loss_variant, ..ModelConfig::default() };
            let batch = ContrastiveBatch::new(&seqs, 2, cfg.variants()).unwrap();
            assert_eq!(batch.num_unique(), d);
            let want = match loss_variant {
                LossVariant::Mince => q * (d - 1),
                _ => d - 1,
            };
            for n in &batch.negatives {
                assert_eq!(n.len(), want, "{loss_variant} q={q} D={d}");
            }
        }
        checked += 1;
    }
}

#[test]
fn c03_mince_reduces_to_nce() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let catalog = random_catalog(&mut rng, 30, 6);
    let base = ModelConfig { d: 16, q: 1, dropout_rate: 0.0, steps: 2, ..ModelConfig::default() };
    let nce = Model::new(ModelConfig { loss_variant: LossVariant::Nce, ..base.clone() }, catalog.clone(), 5).unwrap();
    let mince = Model::from_params(ModelConfig { loss_variant: LossVariant::Mince, ..base }, catalog, nce.params.clone()).unwrap();
    for k in 0..20 {
        let seqs = random_sequences(&mut rng, 30);
        if seqs.iter().flatten().collect::<BTreeSet<_>>().len() < 2 {
            continue;
        }
        let mut tape = Tape::new();
        let a = batch_loss(&nce, &mut tape, &seqs, k, true).unwrap();
        let b = batch_loss(&mince, &mut tape, &seqs, k, true).unwrap();
        let (a, b) = (tape.value(a.loss).data()[0], tape.value(b.loss).data()[0]);
        assert_eq!(a.to_bits(), b.to_bits(), "batch {k}: {a} vs {b}");
    }
}

#[test]
fn c04_closed_form_losses() {
    let ln2 = 2f64.ln();
    let zeros = |tape: &mut Tape, rows: usize| tape.constant(Tensor::zeros(&[rows, 4])).unwrap();

    let one_v_one = ContrastiveBatch::new(&[vec![1, 2]], 1, 1).unwrap();
    let mut tape = Tape::new();
    let (z, bank) = (zeros(&mut tape, 1), zeros(&mut tape, 2));
    let l = nce_loss(&mut tape, z, bank, &one_v_one, 0.6).unwrap();
    assert!((tape.value(l).data()[0] - ln2).abs() < CLOSED_FORM_TOL);

    let l = bpr_loss(&mut tape, z, bank, vec![1], vec![0]).unwrap();
    assert!((tape.value(l).data()[0] - ln2).abs() < CLOSED_FORM_TOL);

    let two_v_two = ContrastiveBatch::new(&[vec![1, 2]], 1, 2).unwrap();
    let bank4 = zeros(&mut tape, 4);
    let l = mince_loss(&mut tape, z, bank4, &two_v_two, 0.6).unwrap();
    assert!((tape.value(l).data()[0] - ln2).abs() < CLOSED_FORM_TOL);

    // D = 256 random-init batches
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let catalog = random_catalog(&mut rng, 300, 20);
    let model = Model::new(ModelConfig::default(), catalog, 4).unwrap();
    let target = 256f64.ln();
    for k in 0..3 {
        let mut items: Vec<usize> = (1..=300).collect();
        items.shuffle(&mut rng);
        let seqs: Vec<Vec<usize>> = items[..256].chunks(8).map(<[usize]>::to_vec).collect();
        let mut tape = Tape::new();
        let out = batch_loss(&model, &mut tape, &seqs, k, true).unwrap();
        assert_eq!(out.batch.num_unique(), 256);
        let v = tape.value(out.loss).data()[0];
        assert!((v - target).abs() <= INIT_LOSS_REL_TOL * target, "batch {k}: {v} vs ln 256 = {target}");
    }
}

#[test]
fn c05_architectural_invariants() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let catalog = random_catalog(&mut rng, 40, 8);
    let cfg = ModelConfig { d: 16, layers: 2, heads: 2, max_len: 12, ..ModelConfig::default() };
    let model = Model::new(cfg.clone(), catalog.clone(), 5).unwrap();

    // causality: perturbing position t leaves outputs 0..t bit-identical
    let mut tape = Tape::new();
    let z = Tensor::randn(&[10, 16], 1.0, &mut rng);
    let key = Some(MaskKey::new(77, 0.5));
    let zv = tape.constant(z.clone()).unwrap();
    let base = model.aggregate_context(&mut tape, zv, key).unwrap();
    for t in 0..10 {
        let mut z2 = z.clone();
        for v in &mut z2.row_mut(t)[..] {
            *v += 1.0;
        }
        let zv2 = tape.constant(z2).unwrap();
        let out = model.aggregate_context(&mut tape, zv2, key).unwrap();
        for r in 0..t {
            let (a, b) = (tape.value(base).row(r), tape.value(out).row(r));
            assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()), "row {r} moved when {t} changed");
        }
        assert_ne!(tape.value(base).row(t), tape.value(out).row(t));
    }

    // attribute order does not matter
    let mut item_attrs: Vec<Vec<usize>> = (0..=40).map(|i| catalog.attrs(i).to_vec()).collect();
    item_attrs[3] = vec![1, 4, 6, 7];
    let forward = Catalog::new(item_attrs.clone(), 8).unwrap();
    item_attrs[3] = vec![7, 6, 1, 4];
    let shuffled = Catalog::new(item_attrs, 8).unwrap();
    let a = Model::from_params(cfg.clone(), forward, model.params.clone()).unwrap();
    let b = Model::from_params(cfg.clone(), shuffled, model.params.clone()).unwrap();
    // dropout masks are positional, so the invariance is checked at inference
    let mut tape = Tape::new();
    let (za, zb) = (a.encode(&mut tape, 3, None).unwrap(), b.encode(&mut tape, 3, None).unwrap());
    let diff = tape.value(za).data().iter().zip(tape.value(zb).data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(diff <= PERMUTATION_TOL, "{diff:e}");

    // res-m is fc-m plus the context, and addressing weights are a distribution
    let c = tape.constant(Tensor::randn(&[6, 16], 1.0, &mut rng)).unwrap();
    let res = model.memory_read(&mut tape, c, MemoryVariant::ResM).unwrap();
    let fc = model.memory_read(&mut tape, c, MemoryVariant::FcM).unwrap();
    let sum = tape.add(fc, c).unwrap();
    let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(tape.value(res)), bits(tape.value(sum)));
    let w = model.addressing_weights(&mut tape, c).unwrap();
    for r in 0..6 {
        assert!((tape.value(w).row(r).iter().sum::<f64>() - 1.0).abs() <= ADDRESSING_TOL);
    }

    // padding rows stay exactly zero through 100 optimiser steps
    let corpus = generate_synthetic(200, 40, 4, 5).unwrap();
    let ds = split_leave_one_out(preprocess(&corpus.interactions, &corpus.attributes, PreprocessOptions::default()).unwrap())
        .unwrap();
    let mut model = Model::new(ModelConfig { d: 8, memory_slots: 5, ..ModelConfig::default() }, ds.catalog.clone(), 1).unwrap();
    let mut state = AdamState::new(&model.params);
    let mut steps = 0;
    'outer: for epoch in 0.. {
        for (b, batch) in make_batches(&ds, 32, epoch).iter().enumerate() {
            let mut tape = Tape::new();
            let out = batch_loss(&model, &mut tape, &batch.sequences, epoch * 1000 + b as u64, true).unwrap();
            tape.backward(out.loss, &mut model.params).unwrap();
            model_step(&mut model, &mut state, 0.01, 0.001).unwrap();
            steps += 1;
            if steps == 100 {
                break 'outer;
            }
        }
    }
    for id in [model.item_embedding_id(), model.attr_embedding_id()] {
        assert!(model.params.get(id).row(PADDING_ID).iter().all(|&v| v == 0.0), "{}", model.params.name(id));
    }
}

fn oracle_rank(scores: &[f64], target: usize) -> usize {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    order.iter().position(|&j| j == target).unwrap() + 1
}

#[test]
fn c06_metric_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut ranks = Vec::new();
    let mut oracle = Vec::new();
    for trial in 0..100 {
        let mut scores: Vec<f64> = if trial % 2 == 0 {
            (0..=1000).map(|_| rng.gen::<f64>()).collect()
        } else {
            // coarse values force ties
            (0..=1000).map(|_| rng.gen_range(0..20) as f64).collect()
        };
        scores[PADDING_ID] = f64::NEG_INFINITY;
        let target = rng.gen_range(1..=1000);
        let r = rank_of_target(&scores, target).unwrap();
        assert_eq!(r, oracle_rank(&scores, target), "trial {trial}");
        ranks.push(r);
        oracle.push(oracle_rank(&scores, target));
        for k in 1..=20 {
            let hr: f64 = oracle.iter().filter(|&&x| x <= k).count() as f64 / oracle.len() as f64;
            let ndcg: f64 =
                oracle.iter().filter(|&&x| x <= k).map(|&x| 1.0 / ((x + 1) as f64).log2()).sum::<f64>() / oracle.len() as f64;
            assert_eq!(hr_at_k(&ranks, k).unwrap(), hr);
            assert_eq!(ndcg_at_k(&ranks, k).unwrap(), ndcg);
            assert!(ndcg <= hr);
            assert!(hr_at_k(&ranks, k).unwrap() <= hr_at_k(&ranks, k + 1).unwrap());
            assert!(ndcg_at_k(&ranks, k).unwrap() <= ndcg_at_k(&ranks, k + 1).unwrap());
        }
    }
}

#[test]
fn c07_synthetic_recovery() {
    let start = Instant::now();
    let ds = recovery_corpus();
    let mut model = Model::new(recovery_model(), ds.catalog.clone(), 0).unwrap();
    let outcome = train(&mut model, &ds, &recovery_train(0), |_| {}).unwrap();
    model.params = outcome.best;
    let hr5 = evaluate_full_ranking(&model, &ds, SplitKind::Test).unwrap().metrics.hr5;
    let pop = evaluate_popularity(&ds, SplitKind::Test).unwrap().metrics.hr5;
    let random = 5.0 / ds.catalog.num_items() as f64;
    let elapsed = start.elapsed();
    println!("c07: test HR@5 {hr5:.4}, popularity {pop:.4}, random {random:.4}, {elapsed:?}");
    assert_eq!(ds.catalog.num_items(), 200);
    assert!(hr5 >= POPULARITY_FACTOR * pop, "HR@5 {hr5} < {POPULARITY_FACTOR} x popularity {pop}");
    assert!(hr5 >= RANDOM_FACTOR * random, "HR@5 {hr5} < {RANDOM_FACTOR} x random {random}");
    assert!(elapsed < RECOVERY_BUDGET, "{elapsed:?}");
}

#[test]
fn c08_ablation_direction() {
    let ds = recovery_corpus();
    let names = ["cpc", "+g_m", "+mince", "full"];
    let cells: Vec<_> = names.iter().map(|n| ablation_cell(n).unwrap()).collect();
    let rows = ablate(&ds, &recovery_model(), &recovery_train(0), &cells, &[0, 1, 2], |_| {}).unwrap();
    for r in &rows {
        println!("c08: {:<7} seed {} best epoch {:>2} test HR@5 {:.4}", r.variant, r.seed, r.best_epoch, r.test.hr5);
    }
    // hit counts are integers, so the means compare exactly
    let hits = |name: &str| -> usize {
        rows.iter()
            .filter(|r| r.variant == name)
            .map(|r| (r.test.hr5 * r.test.n_users as f64).round() as usize)
            .sum()
    };
    let [cpc, g_m, mince, full] = names.map(hits);
    let n = 3.0 * ds.num_users() as f64;
    println!(
        "c08: mean test HR@5 cpc {:.4}, +g_m {:.4}, +mince {:.4}, full {:.4}",
        cpc as f64 / n,
        g_m as f64 / n,
        mince as f64 / n,
        full as f64 / n
    );
    let mut failures = Vec::new();
    for (hi, lo, a, b) in [("full", "+g_m", full, g_m), ("full", "+mince", full, mince), ("+g_m", "cpc", g_m, cpc), ("+mince", "cpc", mince, cpc)] {
        if a < b {
            failures.push(format!("{hi} ({:.4}) < {lo} ({:.4})", a as f64 / n, b as f64 / n));
        }
    }
    assert!(failures.is_empty(), "ordering violated: {}", failures.join("; "));
}

#[test]
fn c09_reference_counts() {
    let beauty = REFERENCE_COUNTS.iter().find(|r| r.name == "beauty").unwrap();
    assert_eq!((beauty.users, beauty.items, beauty.actions), (22_363, 12_101, 198_502));
    assert_eq!(FULL_RUN_EPOCHS, 200);

    match std::env::var_os("MMINFOREC_BEAUTY_DIR") {
        Some(dir) => {
            let dir = Path::new(&dir);
            let attrs = dir.join("attributes.tsv");
            let raw = parse(&dir.join("interactions.tsv"), attrs.exists().then_some(attrs.as_path())).unwrap();
            let ds = preprocess(&raw.interactions.records, &raw.attributes.records, PreprocessOptions::default()).unwrap();
            check_reference_counts(&ds.stats(), "beauty").unwrap();
        }
        None => {
            println!("c09: MMINFOREC_BEAUTY_DIR not set, checking the diagnostic only");
            let c = generate_synthetic(100, 20, 2, 9).unwrap();
            let ds = preprocess(&c.interactions, &c.attributes, PreprocessOptions::default()).unwrap();
            let err = check_reference_counts(&ds.stats(), "beauty").unwrap_err().to_string();
            assert!(err.contains("dataset-version mismatch"), "{err}");
        }
    }
}

#[test]
fn c10_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let synth = dir.path().join("synth");
    let status = bin()
        .args(["synth", "--users", "150", "--items", "30", "--attrs", "3", "--seed", "10", "--out"])
        .arg(&synth)
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(0));
    for name in ["a", "b"] {
        let out = bin()
            .args(["train", "--d", "8", "--memory-slots", "5", "--epochs", "3", "--batch-size", "32", "--seed", "10"])
            .arg("--data")
            .arg(synth.join("dataset"))
            .arg("--out")
            .arg(dir.path().join(name))
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for f in ["train_log.csv", "checkpoint/manifest.json", "checkpoint/params.bin", "memory_norms.csv", "metrics_test.json"] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert!(a == b, "{f} differs between identical runs");
    }
}
