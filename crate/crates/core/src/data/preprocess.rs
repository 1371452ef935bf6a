//! Strict 5-core filtering, truncation and leave-one-out splitting.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::parse::{RawAttributes, RawInteraction};
use super::{Catalog, Dataset, IdMaps, UserSplit};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreprocessOptions {
    pub min_item_count: usize,
    pub min_seq_len: usize,
    pub max_len: usize,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        PreprocessOptions { min_item_count: 5, min_seq_len: 5, max_len: 50 }
    }
}

/// Groups by user, orders each history by timestamp (stable on ties), then
/// alternates the item-frequency filter, the sequence-length filter and
/// most-recent truncation until none of them changes anything.
pub fn preprocess(records: &[RawInteraction], attributes: &[RawAttributes], opts: PreprocessOptions) -> Result<Dataset> {
    if records.is_empty() {
        return Err(Error::Invalid("no interaction records".into()));
    }

    let mut user_index: HashMap<&str, usize> = HashMap::new();
    let mut user_names: Vec<&str> = Vec::new();
    let mut item_index: HashMap<&str, usize> = HashMap::new();
    let mut item_names: Vec<&str> = Vec::new();
    let mut histories: Vec<Vec<(i64, usize)>> = Vec::new();
    for r in records {
        let u = *user_index.entry(&r.user).or_insert_with(|| {
            user_names.push(&r.user);
            histories.push(Vec::new());
            user_names.len() - 1
        });
        let i = *item_index.entry(&r.item).or_insert_with(|| {
            item_names.push(&r.item);
            item_names.len() - 1
        });
        histories[u].push((r.timestamp, i));
    }

    // (user, raw item ids); sort_by_key is stable, so ties keep input order
    let mut seqs: Vec<(usize, Vec<usize>)> = histories
        .into_iter()
        .enumerate()
        .map(|(u, mut h)| {
            h.sort_by_key(|&(t, _)| t);
            (u, h.into_iter().map(|(_, i)| i).collect())
        })
        .collect();

    loop {
        let before: usize = seqs.iter().map(|(_, s)| s.len()).sum::<usize>() + seqs.len();

        let mut counts = vec![0usize; item_names.len()];
        for (_, s) in &seqs {
            for &i in s {
                counts[i] += 1;
            }
        }
        for (_, s) in &mut seqs {
            s.retain(|&i| counts[i] >= opts.min_item_count);
        }
        seqs.retain(|(_, s)| s.len() >= opts.min_seq_len);
        for (_, s) in &mut seqs {
            if s.len() > opts.max_len {
                s.drain(..s.len() - opts.max_len);
            }
        }

        let after: usize = seqs.iter().map(|(_, s)| s.len()).sum::<usize>() + seqs.len();
        if after == before {
            break;
        }
    }

    if seqs.is_empty() {
        return Err(Error::Invalid("no sequences survive 5-core filtering".into()));
    }

    // Dense internal item ids by first appearance, 0 reserved for padding.
    let mut internal = vec![0usize; item_names.len()];
    let mut items = Vec::new();
    let mut sequences = Vec::with_capacity(seqs.len());
    let mut users = Vec::with_capacity(seqs.len());
    for (u, s) in &seqs {
        users.push(user_names[*u].to_string());
        let mapped = s
            .iter()
            .map(|&i| {
                if internal[i] == 0 {
                    items.push(item_names[i].to_string());
                    internal[i] = items.len();
                }
                internal[i]
            })
            .collect();
        sequences.push(mapped);
    }

    let mut raw_attrs: HashMap<&str, Vec<&str>> = HashMap::new();
    for a in attributes {
        let entry = raw_attrs.entry(&a.item).or_default();
        for label in &a.attrs {
            if !entry.contains(&label.as_str()) {
                entry.push(label);
            }
        }
    }
    let mut attr_index: HashMap<&str, usize> = HashMap::new();
    let mut attr_names: Vec<String> = Vec::new();
    let mut item_attrs = vec![Vec::new(); items.len() + 1];
    for (k, name) in items.iter().enumerate() {
        if let Some(labels) = raw_attrs.get(name.as_str()) {
            item_attrs[k + 1] = labels
                .iter()
                .map(|&l| {
                    *attr_index.entry(l).or_insert_with(|| {
                        attr_names.push(l.to_string());
                        attr_names.len()
                    })
                })
                .collect();
        }
    }

    let catalog = Catalog::new(item_attrs, attr_names.len())?;
    Ok(Dataset {
        sequences,
        catalog,
        id_maps: IdMaps { users, items, attributes: attr_names },
        splits: Vec::new(),
    })
}

/// Last item → test, second-last → validation, the rest → training.
pub fn split_leave_one_out(mut dataset: Dataset) -> Result<Dataset> {
    let mut splits = Vec::with_capacity(dataset.sequences.len());
    for (u, s) in dataset.sequences.iter().enumerate() {
        if s.len() < 3 {
            return Err(Error::Invalid(format!("user {u} has {} items; leave-one-out needs 3", s.len())));
        }
        let n = s.len();
        splits.push(UserSplit { train: s[..n - 2].to_vec(), valid: s[n - 2], test: s[n - 1] });
    }
    dataset.splits = splits;
    Ok(dataset)
}

/// Dataset summary with the fields used by the reference count table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub users: usize,
    pub items: usize,
    pub actions: usize,
    pub avg_actions_per_user: f64,
    pub avg_actions_per_item: f64,
    pub sparsity: f64,
    pub attributes: usize,
    pub avg_attributes_per_item: f64,
}

impl DatasetStats {
    pub fn of(ds: &Dataset) -> Self {
        let users = ds.sequences.len();
        let items = ds.catalog.num_items();
        let actions: usize = ds.sequences.iter().map(Vec::len).sum();
        let attr_links: usize = (1..=items).map(|i| ds.catalog.attrs(i).len()).sum();
        DatasetStats {
            users,
            items,
            actions,
            avg_actions_per_user: actions as f64 / users as f64,
            avg_actions_per_item: actions as f64 / items as f64,
            sparsity: 1.0 - actions as f64 / (users as f64 * items as f64),
            attributes: ds.catalog.num_attrs(),
            avg_attributes_per_item: attr_links as f64 / items as f64,
        }
    }
}

/// Expected post-filter counts for the public benchmark releases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReferenceCounts {
    pub name: &'static str,
    pub users: usize,
    pub items: usize,
    pub actions: usize,
}

pub const REFERENCE_COUNTS: [ReferenceCounts; 4] = [
    ReferenceCounts { name: "beauty", users: 22_363, items: 12_101, actions: 198_502 },
    ReferenceCounts { name: "sports", users: 35_598, items: 18_357, actions: 296_337 },
    ReferenceCounts { name: "toys", users: 19_412, items: 11_924, actions: 167_597 },
    ReferenceCounts { name: "yelp", users: 30_431, items: 20_033, actions: 316_354 },
];

/// Fails with a dataset-version diagnostic when counts differ from the
/// reference release named `name`.
pub fn check_reference_counts(stats: &DatasetStats, name: &str) -> Result<()> {
    let reference = REFERENCE_COUNTS
        .iter()
        .find(|r| r.name.eq_ignore_ascii_case(name))
        .ok_or_else(|| Error::Invalid(format!("unknown reference dataset `{name}`")))?;
    let got = (stats.users, stats.items, stats.actions);
    let want = (reference.users, reference.items, reference.actions);
    if got != want {
        return Err(Error::Invalid(format!(
            "dataset-version mismatch for `{}`: got users/items/actions {:?}, reference release has {:?}; \
             check the raw dump version and the 5-core settings",
            reference.name, got, want
        )));
    }
    Ok(())
}
