//! On-disk layout of a preprocessed dataset directory:
//!
//! ```text
//! meta            key=value counts, seed, k, threshold, ratios
//! train.tsv       user-index TAB item-index, sorted
//! valid.tsv
//! test.tsv
//! user_keys.tsv   index TAB original-key
//! item_keys.tsv
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use super::{DatasetError, InteractionDataset, Interactions, KeyMap, SplitDataset, SplitRatios};

const FORMAT_TAG: &str = "hlr-dataset-1";

fn io_err(context: String) -> impl FnOnce(std::io::Error) -> DatasetError {
    move |source| DatasetError::Io { context, source }
}

fn write_file(path: &Path, contents: &str) -> Result<(), DatasetError> {
    let mut f = fs::File::create(path).map_err(io_err(format!("creating {}", path.display())))?;
    f.write_all(contents.as_bytes())
        .map_err(io_err(format!("writing {}", path.display())))
}

fn pairs_text(view: &Interactions) -> String {
    let mut out = String::with_capacity(view.len() * 12);
    for (u, v) in view.pairs() {
        out.push_str(&format!("{u}\t{v}\n"));
    }
    out
}

fn keys_text(keys: &KeyMap) -> Result<String, DatasetError> {
    let mut out = String::new();
    for (i, k) in keys.keys().iter().enumerate() {
        if k.contains(['\t', '\n', '\r']) {
            return Err(DatasetError::Format(format!(
                "key {k:?} contains a tab or newline and cannot be written"
            )));
        }
        out.push_str(&format!("{i}\t{k}\n"));
    }
    Ok(out)
}

pub fn write_split(split: &SplitDataset, dir: impl AsRef<Path>) -> Result<(), DatasetError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(io_err(format!("creating {}", dir.display())))?;
    let r = split.ratios;
    let meta = format!(
        "format={FORMAT_TAG}\nnum_users={}\nnum_items={}\nnum_interactions={}\nnum_train={}\n\
         num_validation={}\nnum_test={}\nseed={}\nk={}\nthreshold={}\nratios={},{},{}\nsmall_users={}\n",
        split.num_users(),
        split.num_items(),
        split.full.interactions.len(),
        split.train.len(),
        split.validation.len(),
        split.test.len(),
        split.seed,
        split.full.k,
        split.full.threshold,
        r.train,
        r.validation,
        r.test,
        split.small_users,
    );
    write_file(&dir.join("meta"), &meta)?;
    write_file(&dir.join("train.tsv"), &pairs_text(&split.train))?;
    write_file(&dir.join("valid.tsv"), &pairs_text(&split.validation))?;
    write_file(&dir.join("test.tsv"), &pairs_text(&split.test))?;
    write_file(&dir.join("user_keys.tsv"), &keys_text(&split.full.users)?)?;
    write_file(&dir.join("item_keys.tsv"), &keys_text(&split.full.items)?)?;
    Ok(())
}

fn read_to_string(path: &Path) -> Result<String, DatasetError> {
    fs::read_to_string(path).map_err(io_err(format!("reading {}", path.display())))
}

fn parse_meta(text: &str) -> Result<BTreeMap<String, String>, DatasetError> {
    let mut out = BTreeMap::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| DatasetError::Format(format!("meta line {line:?} lacks '='")))?;
        out.insert(k.trim().to_owned(), v.trim().to_owned());
    }
    Ok(out)
}

fn meta_get<T: std::str::FromStr>(meta: &BTreeMap<String, String>, key: &str) -> Result<T, DatasetError> {
    meta.get(key)
        .ok_or_else(|| DatasetError::Format(format!("meta is missing {key}")))?
        .parse()
        .map_err(|_| DatasetError::Format(format!("meta field {key} is malformed")))
}

fn read_keys(path: &Path, expected: usize) -> Result<KeyMap, DatasetError> {
    let text = read_to_string(path)?;
    let mut keys = Vec::with_capacity(expected);
    for (n, line) in text.lines().enumerate() {
        let (idx, key) = line
            .split_once('\t')
            .ok_or_else(|| DatasetError::Parse { line: n + 1, message: format!("{}: expected index TAB key", path.display()) })?;
        if idx.parse::<usize>().ok() != Some(keys.len()) {
            return Err(DatasetError::Parse {
                line: n + 1,
                message: format!("{}: indices must be dense and ascending", path.display()),
            });
        }
        keys.push(key.to_owned());
    }
    if keys.len() != expected {
        return Err(DatasetError::Format(format!(
            "{} has {} keys, meta says {expected}",
            path.display(),
            keys.len()
        )));
    }
    KeyMap::new(keys)
}

fn read_pairs(path: &Path, num_users: usize, num_items: usize) -> Result<Vec<(u32, u32)>, DatasetError> {
    let text = read_to_string(path)?;
    let mut pairs = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let parsed = line.split_once('\t').and_then(|(u, v)| Some((u.parse::<u32>().ok()?, v.parse::<u32>().ok()?)));
        match parsed {
            Some((u, v)) if (u as usize) < num_users && (v as usize) < num_items => pairs.push((u, v)),
            _ => {
                return Err(DatasetError::Parse {
                    line: n + 1,
                    message: format!("{}: expected in-range user TAB item", path.display()),
                })
            }
        }
    }
    Ok(pairs)
}

pub fn read_split(dir: impl AsRef<Path>) -> Result<SplitDataset, DatasetError> {
    let dir = dir.as_ref();
    let meta = parse_meta(&read_to_string(&dir.join("meta"))?)?;
    if meta.get("format").map(String::as_str) != Some(FORMAT_TAG) {
        return Err(DatasetError::Format(format!("{} is not a {FORMAT_TAG} directory", dir.display())));
    }
    let num_users: usize = meta_get(&meta, "num_users")?;
    let num_items: usize = meta_get(&meta, "num_items")?;
    let ratios_text: String = meta_get(&meta, "ratios")?;
    let ratios: Vec<f64> = ratios_text
        .split(',')
        .map(|r| r.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| DatasetError::Format("meta field ratios is malformed".into()))?;
    if ratios.len() != 3 {
        return Err(DatasetError::Format("meta field ratios needs three values".into()));
    }

    let users = read_keys(&dir.join("user_keys.tsv"), num_users)?;
    let items = read_keys(&dir.join("item_keys.tsv"), num_items)?;
    let train = read_pairs(&dir.join("train.tsv"), num_users, num_items)?;
    let validation = read_pairs(&dir.join("valid.tsv"), num_users, num_items)?;
    let test = read_pairs(&dir.join("test.tsv"), num_users, num_items)?;
    let mut all = Vec::with_capacity(train.len() + validation.len() + test.len());
    all.extend_from_slice(&train);
    all.extend_from_slice(&validation);
    all.extend_from_slice(&test);
    let full = Interactions::from_pairs(num_users, num_items, &all);
    if full.len() != all.len() {
        return Err(DatasetError::Format("train/valid/test views overlap".into()));
    }
    let expected: usize = meta_get(&meta, "num_interactions")?;
    if full.len() != expected {
        return Err(DatasetError::Format(format!(
            "found {} interactions, meta says {expected}",
            full.len()
        )));
    }

    Ok(SplitDataset {
        train: Interactions::from_pairs(num_users, num_items, &train),
        validation: Interactions::from_pairs(num_users, num_items, &validation),
        test: Interactions::from_pairs(num_users, num_items, &test),
        full: InteractionDataset {
            users: Arc::new(users),
            items: Arc::new(items),
            interactions: full,
            threshold: meta_get(&meta, "threshold")?,
            k: meta_get(&meta, "k")?,
        },
        ratios: SplitRatios {
            train: ratios[0],
            validation: ratios[1],
            test: ratios[2],
        },
        seed: meta_get(&meta, "seed")?,
        small_users: meta.get("small_users").and_then(|s| s.parse().ok()).unwrap_or(0),
    })
}
