//! Dataset ingestion, preprocessing, batching and the synthetic generator.
//!
//! Internal ids are dense and start at 1; id 0 is the padding id for both
//! items and attributes and never appears as a target or negative.

mod batch;
mod io;
mod parse;
mod preprocess;
mod synthetic;

use serde::{Deserialize, Serialize};

pub use batch::{make_batches, Batch};
pub use io::{load_dataset, save_dataset};
pub use parse::{
    format_attributes, format_interactions, parse, parse_attribute_line, parse_attributes_str, parse_interaction_line, parse_interactions_str, LineError,
    Parsed, RawAttributes, RawData, RawInteraction, MAX_MALFORMED_FRACTION,
};
pub use preprocess::{
    check_reference_counts, preprocess, split_leave_one_out, DatasetStats, PreprocessOptions, ReferenceCounts,
    REFERENCE_COUNTS,
};
pub use synthetic::{generate_synthetic, SyntheticCorpus};

use crate::error::{Error, Result};

pub const PADDING_ID: usize = 0;

/// Item universe and per-item attribute sets.
#[derive(Debug, Clone, PartialEq)]
pub struct Catalog {
    /// Indexed by item id; entry 0 (padding) is empty.
    item_attrs: Vec<Vec<usize>>,
    num_attrs: usize,
}

impl Catalog {
    pub fn new(item_attrs: Vec<Vec<usize>>, num_attrs: usize) -> Result<Self> {
        if item_attrs.len() < 2 {
            return Err(Error::Invalid("catalog needs at least one item".into()));
        }
        if !item_attrs[PADDING_ID].is_empty() {
            return Err(Error::Invalid("padding item cannot carry attributes".into()));
        }
        for (item, attrs) in item_attrs.iter().enumerate() {
            if let Some(&a) = attrs.iter().find(|&&a| a == PADDING_ID || a > num_attrs) {
                return Err(Error::Invalid(format!("item {item} has attribute id {a} outside 1..={num_attrs}")));
            }
        }
        Ok(Catalog { item_attrs, num_attrs })
    }

    /// Number of real items, excluding padding.
    pub fn num_items(&self) -> usize {
        self.item_attrs.len() - 1
    }

    /// Number of real attributes, excluding padding.
    pub fn num_attrs(&self) -> usize {
        self.num_attrs
    }

    pub fn attrs(&self, item: usize) -> &[usize] {
        &self.item_attrs[item]
    }

    pub fn max_attrs(&self) -> usize {
        self.item_attrs.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn contains(&self, item: usize) -> bool {
        item != PADDING_ID && item < self.item_attrs.len()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct IdMaps {
    /// External user id of internal user `k` (users are 0-based).
    pub users: Vec<String>,
    /// External item id of internal item `k + 1`.
    pub items: Vec<String>,
    /// External attribute label of internal attribute `k + 1`.
    pub attributes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserSplit {
    pub train: Vec<usize>,
    pub valid: usize,
    pub test: usize,
}

impl UserSplit {
    pub fn valid_context(&self) -> &[usize] {
        &self.train
    }

    pub fn test_context(&self) -> Vec<usize> {
        let mut ctx = self.train.clone();
        ctx.push(self.valid);
        ctx
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitKind {
    Valid,
    Test,
}

impl std::str::FromStr for SplitKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "valid" | "validation" => Ok(SplitKind::Valid),
            "test" => Ok(SplitKind::Test),
            other => Err(Error::Invalid(format!("unknown split `{other}`"))),
        }
    }
}

impl std::fmt::Display for SplitKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SplitKind::Valid => "valid",
            SplitKind::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub sequences: Vec<Vec<usize>>,
    pub catalog: Catalog,
    pub id_maps: IdMaps,
    /// Filled by [`split_leave_one_out`]; empty before.
    pub splits: Vec<UserSplit>,
}

impl Dataset {
    pub fn num_users(&self) -> usize {
        self.sequences.len()
    }

    pub fn stats(&self) -> DatasetStats {
        DatasetStats::of(self)
    }

    pub fn internal_item(&self, external: &str) -> Option<usize> {
        self.id_maps.items.iter().position(|i| i == external).map(|k| k + 1)
    }

    /// Converts back to raw records (timestamps = position), which is what
    /// the preprocess fixpoint property is checked against.
    pub fn to_records(&self) -> (Vec<RawInteraction>, Vec<RawAttributes>) {
        let mut inter = Vec::new();
        for (u, seq) in self.sequences.iter().enumerate() {
            for (t, &i) in seq.iter().enumerate() {
                inter.push(RawInteraction {
                    user: self.id_maps.users[u].clone(),
                    item: self.id_maps.items[i - 1].clone(),
                    timestamp: t as i64,
                });
            }
        }
        let attrs = (1..=self.catalog.num_items())
            .filter(|&i| !self.catalog.attrs(i).is_empty())
            .map(|i| RawAttributes {
                item: self.id_maps.items[i - 1].clone(),
                attrs: self.catalog.attrs(i).iter().map(|&a| self.id_maps.attributes[a - 1].clone()).collect(),
            })
            .collect();
        (inter, attrs)
    }
}
