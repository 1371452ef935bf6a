//! Processed-dataset directory: `sequences.tsv`, `attributes.tsv`,
//! `idmaps.json`, `stats.json`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{split_leave_one_out, Catalog, Dataset, IdMaps};
use crate::error::{Error, Result};

pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut seqs = String::new();
    for s in &dataset.sequences {
        let line: Vec<String> = s.iter().map(usize::to_string).collect();
        writeln!(seqs, "{}", line.join("\t")).expect("writing to a String");
    }
    write(dir, "sequences.tsv", &seqs)?;

    let mut attrs = String::new();
    for item in 1..=dataset.catalog.num_items() {
        write!(attrs, "{item}").expect("writing to a String");
        for a in dataset.catalog.attrs(item) {
            write!(attrs, "\t{a}").expect("writing to a String");
        }
        attrs.push('\n');
    }
    write(dir, "attributes.tsv", &attrs)?;

    write(dir, "idmaps.json", &serde_json::to_string_pretty(&dataset.id_maps)?)?;
    write(dir, "stats.json", &serde_json::to_string_pretty(&dataset.stats())?)?;
    Ok(())
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| Error::io(path, e))
}

fn read(dir: &Path, name: &str) -> Result<String> {
    let path = dir.join(name);
    fs::read_to_string(&path).map_err(|e| Error::io(path, e))
}

fn parse_ids(line: &str, file: &str, lineno: usize) -> Result<Vec<usize>> {
    line.split('\t')
        .map(|f| f.parse::<usize>().map_err(|e| Error::Invalid(format!("{file}:{lineno}: `{f}`: {e}"))))
        .collect()
}

/// Loads a processed dataset and applies the leave-one-out split.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let id_maps: IdMaps = serde_json::from_str(&read(dir, "idmaps.json")?)?;
    let n_items = id_maps.items.len();

    let mut item_attrs = vec![Vec::new(); n_items + 1];
    for (k, line) in read(dir, "attributes.tsv")?.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let ids = parse_ids(line, "attributes.tsv", k + 1)?;
        let item = ids[0];
        if item == 0 || item > n_items {
            return Err(Error::IdOutOfRange { table: "items", id: item, size: n_items + 1 });
        }
        item_attrs[item] = ids[1..].to_vec();
    }
    let catalog = Catalog::new(item_attrs, id_maps.attributes.len())?;

    let mut sequences = Vec::new();
    for (k, line) in read(dir, "sequences.tsv")?.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let seq = parse_ids(line, "sequences.tsv", k + 1)?;
        if let Some(&bad) = seq.iter().find(|&&i| !catalog.contains(i)) {
            return Err(Error::IdOutOfRange { table: "items", id: bad, size: n_items + 1 });
        }
        sequences.push(seq);
    }
    if sequences.len() != id_maps.users.len() {
        return Err(Error::Invalid(format!(
            "sequences.tsv has {} users, idmaps.json lists {}",
            sequences.len(),
            id_maps.users.len()
        )));
    }
    split_leave_one_out(Dataset { sequences, catalog, id_maps, splits: Vec::new() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, preprocess, PreprocessOptions};

    #[test]
    fn save_then_load_round_trips() {
        let corpus = generate_synthetic(100, 30, 3, 2).unwrap();
        let ds = preprocess(&corpus.interactions, &corpus.attributes, PreprocessOptions::default()).unwrap();
        let ds = split_leave_one_out(ds).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back, ds);
        let stats: serde_json::Value = serde_json::from_str(&read(dir.path(), "stats.json").unwrap()).unwrap();
        assert_eq!(stats["users"], 100);
    }
}
