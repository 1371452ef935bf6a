use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Dataset, PADDING_ID};

/// A group of training prefixes, left-padded to a common length.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// Internal user index of each row.
    pub users: Vec<usize>,
    /// Unpadded training prefixes.
    pub sequences: Vec<Vec<usize>>,
    /// Left-padded with [`PADDING_ID`] to the batch's longest prefix.
    pub padded: Vec<Vec<usize>>,
    /// `true` at real positions.
    pub mask: Vec<Vec<bool>>,
    /// Unique non-padding item ids in the batch (D).
    pub num_unique: usize,
}

impl Batch {
    pub fn from_sequences(users: Vec<usize>, sequences: Vec<Vec<usize>>) -> Batch {
        let width = sequences.iter().map(Vec::len).max().unwrap_or(0);
        let mut padded = Vec::with_capacity(sequences.len());
        let mut mask = Vec::with_capacity(sequences.len());
        for s in &sequences {
            let pad = width - s.len();
            let mut row = vec![PADDING_ID; pad];
            row.extend_from_slice(s);
            padded.push(row);
            let mut m = vec![false; pad];
            m.extend(std::iter::repeat_n(true, s.len()));
            mask.push(m);
        }
        let num_unique = unique_items(&sequences).len();
        Batch { users, sequences, padded, mask, num_unique }
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn unique_items(&self) -> Vec<usize> {
        unique_items(&self.sequences)
    }
}

fn unique_items(seqs: &[Vec<usize>]) -> Vec<usize> {
    let set: BTreeSet<usize> = seqs.iter().flatten().copied().filter(|&i| i != PADDING_ID).collect();
    set.into_iter().collect()
}

/// Shuffles users by `seed` and cuts their training prefixes into batches of
/// at most `batch_size`. Requires split markers.
pub fn make_batches(dataset: &Dataset, batch_size: usize, seed: u64) -> Vec<Batch> {
    assert!(batch_size > 0, "batch_size must be positive");
    let mut order: Vec<usize> = (0..dataset.splits.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    order
        .chunks(batch_size)
        .map(|users| {
            let seqs = users.iter().map(|&u| dataset.splits[u].train.clone()).collect();
            Batch::from_sequences(users.to_vec(), seqs)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Catalog, IdMaps, UserSplit};

    fn toy(lengths: &[usize]) -> Dataset {
        let splits = lengths
            .iter()
            .map(|&n| UserSplit { train: (1..=n).collect(), valid: 1, test: 2 })
            .collect();
        Dataset {
            sequences: Vec::new(),
            catalog: Catalog::new(vec![vec![]; 11], 0).unwrap(),
            id_maps: IdMaps::default(),
            splits,
        }
    }

    #[test]
    fn partition_sizes() {
        let batches = make_batches(&toy(&[3, 3, 3]), 2, 1);
        let sizes: Vec<usize> = batches.iter().map(Batch::len).collect();
        assert_eq!(sizes, vec![2, 1]);
    }

    #[test]
    fn left_padding_and_mask() {
        let b = Batch::from_sequences(vec![0, 1], vec![vec![1, 2, 3], vec![4, 5, 6, 7, 8]]);
        assert_eq!(b.padded[0], vec![0, 0, 1, 2, 3]);
        assert_eq!(b.mask[0], vec![false, false, true, true, true]);
        assert_eq!(b.mask[1], vec![true; 5]);
        assert_eq!(b.num_unique, 8);
    }

    #[test]
    fn seeded_order_is_stable() {
        let ds = toy(&[3, 4, 5, 6, 7, 8, 9]);
        let a: Vec<Vec<usize>> = make_batches(&ds, 3, 9).into_iter().map(|b| b.users).collect();
        let b: Vec<Vec<usize>> = make_batches(&ds, 3, 9).into_iter().map(|b| b.users).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn unique_count_ignores_padding_and_repeats() {
        let b = Batch::from_sequences(vec![0, 1], vec![vec![1, 1, 2], vec![2, 3]]);
        assert_eq!(b.num_unique, 3);
        assert_eq!(b.unique_items(), vec![1, 2, 3]);
    }
}
