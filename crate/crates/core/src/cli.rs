//! Command-line entry point: config resolution and the subcommands.
//!
//! Every command resolves a single flat [`RunConfig`] from defaults, an
//! optional JSON file, the `MMINFOREC_OUT` environment variable and flags,
//! in increasing precedence, and echoes it to `config.resolved.json`.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::data::{
    check_reference_counts, format_attributes, format_interactions, generate_synthetic, load_dataset, parse, preprocess,
    save_dataset, split_leave_one_out, Dataset, PreprocessOptions, SplitKind,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate_full_ranking, evaluate_popularity, evaluate_with, write_evaluation, MetricsRecord};
use crate::model::{LossVariant, MemoryVariant, Model, ModelConfig, ScoreSource};
use crate::objective::pipeline_grad_check;
use crate::trainer::{
    ablate, ablation_cell, ablation_csv, log_csv, memory_norms, memory_norms_csv, train, EpochRecord, TrainConfig,
};

pub const OUT_ENV: &str = "MMINFOREC_OUT";
pub const RESOLVED_CONFIG_FILE: &str = "config.resolved.json";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const MEMORY_NORMS_FILE: &str = "memory_norms.csv";
pub const ABLATION_FILE: &str = "ablation.csv";
pub const GRADCHECK_FILE: &str = "gradcheck.json";
pub const BASELINES_FILE: &str = "baselines.json";
pub const FULL_RUN_EPOCHS: usize = 200;
pub const FULL_RUN_PATIENCE: usize = 20;
/// Largest relative gradient error `gradcheck` accepts.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    // model
    pub d: usize,
    pub memory_slots: usize,
    pub q: usize,
    pub steps: usize,
    pub tau: f64,
    pub dropout_rate: f64,
    pub layers: usize,
    pub heads: usize,
    pub max_len: usize,
    pub memory_variant: MemoryVariant,
    pub loss_variant: LossVariant,
    pub score_source: ScoreSource,
    pub init_std: f64,
    // training
    pub lr: f64,
    pub l2_weight: f64,
    pub epochs: usize,
    pub seed: u64,
    pub batch_size: usize,
    pub patience: usize,
    pub strict_grids: bool,
    // paths
    pub data_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub interactions: Option<PathBuf>,
    pub attributes: Option<PathBuf>,
    // command options
    pub reference: Option<String>,
    pub split: Option<SplitKind>,
    pub variants: Vec<String>,
    pub seeds: Vec<u64>,
    pub gradcheck_dims: usize,
    pub gradcheck_batch: usize,
    pub synth_users: usize,
    pub synth_items: usize,
    pub synth_attrs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        let t = TrainConfig::default();
        RunConfig {
            d: m.d,
            memory_slots: m.memory_slots,
            q: m.q,
            steps: m.steps,
            tau: m.tau,
            dropout_rate: m.dropout_rate,
            layers: m.layers,
            heads: m.heads,
            max_len: m.max_len,
            memory_variant: m.memory_variant,
            loss_variant: m.loss_variant,
            score_source: m.score_source,
            init_std: m.init_std,
            lr: t.lr,
            l2_weight: t.l2_weight,
            epochs: t.epochs,
            seed: t.seed,
            batch_size: t.batch_size,
            patience: t.patience,
            strict_grids: false,
            data_dir: None,
            out_dir: None,
            checkpoint: None,
            interactions: None,
            attributes: None,
            reference: None,
            split: None,
            variants: ["cpc", "+g_m", "+mince", "full"].map(String::from).to_vec(),
            seeds: Vec::new(),
            gradcheck_dims: 8,
            gradcheck_batch: 4,
            synth_users: 1000,
            synth_items: 200,
            synth_attrs: 20,
        }
    }
}

impl RunConfig {
    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            d: self.d,
            memory_slots: self.memory_slots,
            q: self.q,
            steps: self.steps,
            tau: self.tau,
            dropout_rate: self.dropout_rate,
            layers: self.layers,
            heads: self.heads,
            max_len: self.max_len,
            memory_variant: self.memory_variant,
            loss_variant: self.loss_variant,
            score_source: self.score_source,
            init_std: self.init_std,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            l2_weight: self.l2_weight,
            epochs: self.epochs,
            seed: self.seed,
            batch_size: self.batch_size,
            patience: self.patience,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (m, t) = (self.model(), self.train());
        m.validate()?;
        t.validate()?;
        if self.strict_grids {
            m.validate_grids()?;
            t.validate_grids()?;
        }
        for v in &self.variants {
            ablation_cell(v)?;
        }
        Ok(())
    }

    /// Seeds for `ablate`: the configured list, or just `seed`.
    pub fn ablation_seeds(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            vec![self.seed]
        } else {
            self.seeds.clone()
        }
    }
}

/// Parses a config document; errors carry the JSON path of the bad field.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        Error::Config { field, reason: e.into_inner().to_string() }
    })
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}

#[derive(Debug, Parser)]
#[command(name = "mminforec", version, about = "Contrastive sequential recommendation with a memory module")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse raw TSV files, apply 5-core filtering and write a processed dataset.
    Preprocess {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        interactions: Option<PathBuf>,
        #[arg(long)]
        attributes: Option<PathBuf>,
        /// Check counts against a known release (beauty, sports, toys, yelp).
        #[arg(long)]
        reference: Option<String>,
    },
    /// Train a model and keep the best validation checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Full-catalog ranking metrics for a checkpoint.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// `valid` or `test`; both when omitted.
        #[arg(long)]
        split: Option<SplitKind>,
    },
    /// Finite-difference check of every parameter group's gradient.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dims: Option<usize>,
        #[arg(long)]
        batch: Option<usize>,
    },
    /// Train one model per variant and seed and tabulate test metrics.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Comma-separated: cpc, +g_m, +mince, full, or memory/loss pairs.
        #[arg(long, value_delimiter = ',')]
        variants: Option<Vec<String>>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Generate a synthetic Markov-chain corpus.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        users: Option<usize>,
        #[arg(long)]
        items: Option<usize>,
        #[arg(long)]
        attrs: Option<usize>,
    },
    /// Dump parameter shapes and memory-slot norms of a checkpoint.
    Inspect {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// JSON run config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Processed dataset directory.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory (falls back to $MMINFOREC_OUT).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Restrict sweepable hyperparameters to the standard search grids.
    #[arg(long)]
    strict_grids: bool,
    /// Benchmark-scale preset: 200 epochs, patience 20, strict grids.
    /// Explicit flags still win.
    #[arg(long)]
    full_run: bool,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    memory_slots: Option<usize>,
    #[arg(long)]
    q: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    tau: Option<f64>,
    #[arg(long)]
    dropout_rate: Option<f64>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    memory_variant: Option<MemoryVariant>,
    #[arg(long)]
    loss_variant: Option<LossVariant>,
    #[arg(long)]
    score_source: Option<ScoreSource>,
    #[arg(long)]
    init_std: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    lr: Option<f64>,
    #[arg(long)]
    l2_weight: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
}

macro_rules! override_fields {
    ($cfg:expr, $src:expr, $($field:ident),+) => {
        $(if let Some(v) = $src.$field.clone() { $cfg.$field = v; })+
    };
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => load_config(p)?,
            None => RunConfig::default(),
        };
        if let Some(out) = std::env::var_os(OUT_ENV).filter(|v| !v.is_empty()) {
            cfg.out_dir = Some(out.into());
        }
        if self.full_run {
            cfg.epochs = FULL_RUN_EPOCHS;
            cfg.patience = FULL_RUN_PATIENCE;
            cfg.strict_grids = true;
        }
        if let Some(p) = &self.data {
            cfg.data_dir = Some(p.clone());
        }
        if let Some(p) = &self.out {
            cfg.out_dir = Some(p.clone());
        }
        cfg.strict_grids |= self.strict_grids;
        override_fields!(
            cfg, self, seed, d, memory_slots, q, steps, tau, dropout_rate, layers, heads, max_len, memory_variant,
            loss_variant, score_source, init_std, lr, l2_weight, epochs, batch_size, patience
        );
        Ok(cfg)
    }
}

fn set<T: Clone>(slot: &mut T, value: &Option<T>) {
    if let Some(v) = value {
        *slot = v.clone();
    }
}

fn set_some<T: Clone>(slot: &mut Option<T>, value: &Option<T>) {
    if value.is_some() {
        *slot = value.clone();
    }
}

fn required<'a>(value: &'a Option<PathBuf>, field: &str) -> Result<&'a Path> {
    value.as_deref().ok_or_else(|| Error::Config { field: field.to_string(), reason: "is required".into() })
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_resolved(cfg: &RunConfig, out: &Path) -> Result<()> {
    write_file(&out.join(RESOLVED_CONFIG_FILE), &serde_json::to_string_pretty(cfg)?)
}

fn print_metrics(m: &MetricsRecord) {
    println!(
        "{:<5} HR@5 {:.4}  NDCG@5 {:.4}  HR@10 {:.4}  NDCG@10 {:.4}  ({} users)",
        m.split, m.hr5, m.ndcg5, m.hr10, m.ndcg10, m.n_users
    );
}

/// Runs `argv` (program name first) and returns the process exit code:
/// 0 on success, 1 on usage or validation errors, 2 on runtime failures.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}

fn run(command: Command) -> Result<i32> {
    match command {
        Command::Preprocess { common, interactions, attributes, reference } => {
            let mut cfg = common.resolve()?;
            set_some(&mut cfg.interactions, &interactions);
            set_some(&mut cfg.attributes, &attributes);
            set_some(&mut cfg.reference, &reference);
            cfg.validate()?;
            cmd_preprocess(&cfg)
        }
        Command::Train { common } => {
            let cfg = common.resolve()?;
            cfg.validate()?;
            cmd_train(&cfg)
        }
        Command::Evaluate { common, checkpoint, split } => {
            let mut cfg = common.resolve()?;
            set_some(&mut cfg.checkpoint, &checkpoint);
            set_some(&mut cfg.split, &split);
            cfg.validate()?;
            cmd_evaluate(&cfg)
        }
        Command::Gradcheck { common, dims, batch } => {
            let mut cfg = common.resolve()?;
            set(&mut cfg.gradcheck_dims, &dims);
            set(&mut cfg.gradcheck_batch, &batch);
            cfg.validate()?;
            cmd_gradcheck(&cfg)
        }
        Command::Ablate { common, variants, seeds } => {
            let mut cfg = common.resolve()?;
            set(&mut cfg.variants, &variants);
            set(&mut cfg.seeds, &seeds);
            cfg.validate()?;
            cmd_ablate(&cfg)
        }
        Command::Synth { common, users, items, attrs } => {
            let mut cfg = common.resolve()?;
            set(&mut cfg.synth_users, &users);
            set(&mut cfg.synth_items, &items);
            set(&mut cfg.synth_attrs, &attrs);
            cfg.validate()?;
            cmd_synth(&cfg)
        }
        Command::Inspect { common, checkpoint } => {
            let mut cfg = common.resolve()?;
            set_some(&mut cfg.checkpoint, &checkpoint);
            cfg.validate()?;
            cmd_inspect(&cfg)
        }
    }
}

fn cmd_preprocess(cfg: &RunConfig) -> Result<i32> {
    let out = required(&cfg.out_dir, "out_dir")?;
    let raw = parse(required(&cfg.interactions, "interactions")?, cfg.attributes.as_deref())?;
    for e in raw.interactions.errors.iter().chain(&raw.attributes.errors) {
        eprintln!("skipped line {}: {}", e.line, e.reason);
    }
    let opts = PreprocessOptions { max_len: cfg.max_len, ..PreprocessOptions::default() };
    let dataset = split_leave_one_out(preprocess(&raw.interactions.records, &raw.attributes.records, opts)?)?;
    let stats = dataset.stats();
    println!("{} users, {} items, {} actions", stats.users, stats.items, stats.actions);
    write_resolved(cfg, out)?;
    save_dataset(&dataset, out)?;
    if let Some(name) = &cfg.reference {
        check_reference_counts(&stats, name)?;
        println!("counts match the `{name}` reference release");
    }
    Ok(0)
}

fn load_data(cfg: &RunConfig) -> Result<Dataset> {
    load_dataset(required(&cfg.data_dir, "data_dir")?)
}

fn cmd_train(cfg: &RunConfig) -> Result<i32> {
    let out = required(&cfg.out_dir, "out_dir")?;
    let dataset = load_data(cfg)?;
    write_resolved(cfg, out)?;
    let model_cfg = cfg.model();
    let mut model = Model::new(model_cfg.clone(), dataset.catalog.clone(), cfg.seed)?;
    let mut log: Vec<EpochRecord> = Vec::new();
    let outcome = train(&mut model, &dataset, &cfg.train(), |r| {
        eprintln!("epoch {:>3}  loss {:.5}  valid HR@5 {:.4}  NDCG@10 {:.4}", r.epoch, r.loss, r.hr5, r.ndcg10);
        log.push(r.clone());
    });
    write_file(&out.join(TRAIN_LOG_FILE), &log_csv(&log))?;
    let outcome = match outcome {
        Ok(o) => o,
        Err(Error::Diverged { epoch, reason, last_good }) => {
            save_checkpoint(&out.join(CHECKPOINT_DIR), &model_cfg, &last_good)?;
            return Err(Error::Diverged { epoch, reason, last_good });
        }
        Err(e) => return Err(e),
    };
    model.params = outcome.best;
    save_checkpoint(&out.join(CHECKPOINT_DIR), &model_cfg, &model.params)?;
    write_file(&out.join(MEMORY_NORMS_FILE), &memory_norms_csv(&memory_norms(&model.params)?))?;
    for split in [SplitKind::Valid, SplitKind::Test] {
        let eval = evaluate_full_ranking(&model, &dataset, split)?;
        print_metrics(&eval.metrics);
        write_evaluation(&eval, out)?;
    }
    Ok(0)
}

fn checkpoint_dir(cfg: &RunConfig) -> Result<PathBuf> {
    match (&cfg.checkpoint, &cfg.out_dir) {
        (Some(p), _) => Ok(p.clone()),
        (None, Some(out)) => Ok(out.join(CHECKPOINT_DIR)),
        (None, None) => Err(Error::Config { field: "checkpoint".into(), reason: "is required".into() }),
    }
}

fn cmd_evaluate(cfg: &RunConfig) -> Result<i32> {
    let out = required(&cfg.out_dir, "out_dir")?;
    let dataset = load_data(cfg)?;
    let (model_cfg, params) = load_checkpoint(&checkpoint_dir(cfg)?)?;
    let model = Model::from_params(model_cfg, dataset.catalog.clone(), params)?;
    write_resolved(cfg, out)?;
    let splits = match cfg.split {
        Some(s) => vec![s],
        None => vec![SplitKind::Valid, SplitKind::Test],
    };
    for split in splits {
        let eval = evaluate_full_ranking(&model, &dataset, split)?;
        print_metrics(&eval.metrics);
        write_evaluation(&eval, out)?;
    }
    Ok(0)
}

fn cmd_gradcheck(cfg: &RunConfig) -> Result<i32> {
    let groups = pipeline_grad_check(cfg.gradcheck_dims, cfg.gradcheck_batch, cfg.seed)?;
    println!("{:<12} {:>8} {:>14}", "group", "entries", "max_rel_error");
    for g in &groups {
        println!("{:<12} {:>8} {:>14.3e}", g.group, g.entries, g.max_rel_error);
    }
    if let Some(out) = &cfg.out_dir {
        write_resolved(cfg, out)?;
        write_file(&out.join(GRADCHECK_FILE), &serde_json::to_string_pretty(&groups)?)?;
    }
    let worst = groups.iter().map(|g| g.max_rel_error).fold(0.0, f64::max);
    if worst < GRADCHECK_TOLERANCE {
        println!("ok: worst {worst:.3e} < {GRADCHECK_TOLERANCE:e}");
        Ok(0)
    } else {
        println!("FAILED: worst {worst:.3e} >= {GRADCHECK_TOLERANCE:e}");
        Ok(2)
    }
}

fn cmd_ablate(cfg: &RunConfig) -> Result<i32> {
    let out = required(&cfg.out_dir, "out_dir")?;
    let cells = cfg.variants.iter().map(|v| ablation_cell(v)).collect::<Result<Vec<_>>>()?;
    let dataset = load_data(cfg)?;
    write_resolved(cfg, out)?;
    let rows = ablate(&dataset, &cfg.model(), &cfg.train(), &cells, &cfg.ablation_seeds(), |r| {
        eprintln!("{:<10} seed {:<4} test HR@5 {:.4}  NDCG@10 {:.4}", r.variant, r.seed, r.test.hr5, r.test.ndcg10);
    })?;
    write_file(&out.join(ABLATION_FILE), &ablation_csv(&rows))?;
    Ok(0)
}

#[derive(Debug, Serialize)]
struct Baselines {
    random_hr5: f64,
    popularity: MetricsRecord,
    oracle: MetricsRecord,
}

fn cmd_synth(cfg: &RunConfig) -> Result<i32> {
    let out = required(&cfg.out_dir, "out_dir")?;
    let corpus = generate_synthetic(cfg.synth_users, cfg.synth_items, cfg.synth_attrs, cfg.seed)?;
    write_resolved(cfg, out)?;
    write_file(&out.join("interactions.tsv"), &format_interactions(&corpus.interactions))?;
    write_file(&out.join("attributes.tsv"), &format_attributes(&corpus.attributes))?;
    let opts = PreprocessOptions { max_len: cfg.max_len, ..PreprocessOptions::default() };
    let dataset = split_leave_one_out(preprocess(&corpus.interactions, &corpus.attributes, opts)?)?;
    save_dataset(&dataset, &out.join("dataset"))?;
    let oracle = evaluate_with(&dataset, SplitKind::Test, |_, ctx| {
        let prev = *ctx.last().ok_or_else(|| Error::Invalid("empty test context".into()))?;
        Ok(corpus.oracle_scores(&dataset, prev))
    })?;
    let baselines = Baselines {
        random_hr5: 5.0 / dataset.catalog.num_items() as f64,
        popularity: evaluate_popularity(&dataset, SplitKind::Test)?.metrics,
        oracle: oracle.metrics,
    };
    write_file(&out.join(BASELINES_FILE), &serde_json::to_string_pretty(&baselines)?)?;
    let stats = dataset.stats();
    println!("{} users, {} items, {} actions", stats.users, stats.items, stats.actions);
    println!(
        "test HR@5: random {:.4}, popularity {:.4}, oracle {:.4}",
        baselines.random_hr5, baselines.popularity.hr5, baselines.oracle.hr5
    );
    Ok(0)
}

fn cmd_inspect(cfg: &RunConfig) -> Result<i32> {
    let out = required(&cfg.out_dir, "out_dir")?;
    let (model_cfg, params) = load_checkpoint(&checkpoint_dir(cfg)?)?;
    write_resolved(cfg, out)?;
    println!("d={} memory_slots={} memory={} loss={}", model_cfg.d, model_cfg.memory_slots, model_cfg.memory_variant, model_cfg.loss_variant);
    for (_, name, t) in params.iter() {
        println!("{name:<24} {:?}", t.shape());
    }
    let norms = memory_norms(&params)?;
    write_file(&out.join(MEMORY_NORMS_FILE), &memory_norms_csv(&norms))?;
    println!("{} parameters, checksum {:016x}", params.numel(), params.checksum());
    Ok(0)
}
