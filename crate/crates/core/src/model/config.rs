use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MEMORY_SLOT_GRID: [usize; 6] = [5, 10, 32, 64, 128, 256];
pub const STEPS_GRID: [usize; 4] = [1, 2, 3, 4];
pub const Q_GRID: [usize; 4] = [1, 2, 3, 4];
pub const TAU_GRID: [f64; 5] = [0.1, 0.3, 0.6, 1.0, 3.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MemoryVariant {
    /// No memory module: the prediction is the context vector itself.
    None,
    /// Memory read without the residual context term.
    FcM,
    /// Memory read plus the context vector.
    ResM,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossVariant {
    Nce,
    Mince,
    Bpr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreSource {
    /// Rank by `c_t · z`.
    Context,
    /// Rank by `g_m(c_t) · z`, the quantity the training loss aligns.
    Memory,
}

macro_rules! string_enum {
    ($ty:ty, $what:literal, { $($text:literal => $variant:expr),+ $(,)? }) => {
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($variant),)+
                    other => Err(Error::Invalid(format!(concat!("unknown ", $what, " `{}`"), other))),
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                let text = match self {
                    $(v if *v == $variant => $text,)+
                    _ => unreachable!(),
                };
                f.write_str(text)
            }
        }
    };
}

string_enum!(MemoryVariant, "memory variant", {
    "none" => MemoryVariant::None,
    "fc-m" => MemoryVariant::FcM,
    "res-m" => MemoryVariant::ResM,
});

string_enum!(LossVariant, "loss variant", {
    "nce" => LossVariant::Nce,
    "mince" => LossVariant::Mince,
    "bpr" => LossVariant::Bpr,
});

string_enum!(ScoreSource, "score source", {
    "context" => ScoreSource::Context,
    "memory" => ScoreSource::Memory,
});

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Embedding and hidden width.
    pub d: usize,
    /// Memory slots.
    pub memory_slots: usize,
    /// Dropout-encoded positives per target.
    pub q: usize,
    /// Prediction steps.
    pub steps: usize,
    pub tau: f64,
    pub dropout_rate: f64,
    pub layers: usize,
    pub heads: usize,
    pub max_len: usize,
    pub memory_variant: MemoryVariant,
    pub loss_variant: LossVariant,
    pub score_source: ScoreSource,
    /// Standard deviation of the normal initialiser.
    pub init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d: 64,
            memory_slots: 10,
            q: 2,
            steps: 1,
            tau: 0.6,
            dropout_rate: 0.5,
            layers: 1,
            heads: 1,
            max_len: 50,
            memory_variant: MemoryVariant::ResM,
            loss_variant: LossVariant::Mince,
            score_source: ScoreSource::Context,
            init_std: 0.02,
        }
    }
}

fn invalid(field: &str, reason: impl Into<String>) -> Error {
    Error::Config { field: field.to_string(), reason: reason.into() }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(invalid("d", "must be positive"));
        }
        if self.memory_slots == 0 {
            return Err(invalid("memory_slots", "must be positive"));
        }
        if self.q == 0 {
            return Err(invalid("q", "must be at least 1"));
        }
        if self.steps == 0 {
            return Err(invalid("steps", "must be at least 1"));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(invalid("tau", format!("must be positive, got {}", self.tau)));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(invalid("dropout_rate", format!("must be in [0, 1), got {}", self.dropout_rate)));
        }
        if !(1..=2).contains(&self.layers) {
            return Err(invalid("layers", "must be 1 or 2"));
        }
        if !(1..=2).contains(&self.heads) {
            return Err(invalid("heads", "must be 1 or 2"));
        }
        if !self.d.is_multiple_of(self.heads) {
            return Err(invalid("heads", format!("must divide d = {}", self.d)));
        }
        if self.max_len == 0 {
            return Err(invalid("max_len", "must be positive"));
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return Err(invalid("init_std", "must be positive"));
        }
        Ok(())
    }

    /// Checks the sweepable values against the standard search grids.
    pub fn validate_grids(&self) -> Result<()> {
        if !MEMORY_SLOT_GRID.contains(&self.memory_slots) {
            return Err(invalid("memory_slots", format!("{} not in {MEMORY_SLOT_GRID:?}", self.memory_slots)));
        }
        if !STEPS_GRID.contains(&self.steps) {
            return Err(invalid("steps", format!("{} not in {STEPS_GRID:?}", self.steps)));
        }
        if !Q_GRID.contains(&self.q) {
            return Err(invalid("q", format!("{} not in {Q_GRID:?}", self.q)));
        }
        if !TAU_GRID.contains(&self.tau) {
            return Err(invalid("tau", format!("{} not in {TAU_GRID:?}", self.tau)));
        }
        Ok(())
    }

    /// Number of dropout variants encoded per item in a batch bank.
    pub fn variants(&self) -> usize {
        match self.loss_variant {
            LossVariant::Mince => self.q,
            LossVariant::Nce | LossVariant::Bpr => 1,
        }
    }
}
