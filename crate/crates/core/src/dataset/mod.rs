//! Implicit-feedback interaction data: ingestion, k-core filtering,
//! per-user train/validation/test splitting and adjacency queries.

mod io;
mod load;

use std::collections::HashMap;
use std::sync::Arc;

use rand::seq::{index, SliceRandom};
use thiserror::Error;

use crate::rng::{stream_rng, Rng, Stream};

pub use io::{read_split, write_split};
pub use load::{load_interactions, load_interactions_path, load_interactions_with, LoadOptions};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("no interactions left after binarization")]
    Empty,
    #[error("k-core filter with k={k} removed every interaction after {iterations} iterations")]
    EmptyAfterFilter { k: usize, iterations: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("malformed dataset directory: {0}")]
    Format(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

/// Binarized positives keyed by interned original keys.
#[derive(Debug, Clone)]
pub struct RawInteractions {
    pub user_keys: Vec<String>,
    pub item_keys: Vec<String>,
    /// Unique `(user, item)` positives as indices into the key vectors,
    /// in order of first appearance.
    pub pairs: Vec<(u32, u32)>,
    pub threshold: f64,
}

/// Bijection between original string keys and dense indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyMap {
    keys: Vec<String>,
    index: HashMap<String, u32>,
}

impl KeyMap {
    pub fn new(keys: Vec<String>) -> Result<Self, DatasetError> {
        let mut index = HashMap::with_capacity(keys.len());
        for (i, k) in keys.iter().enumerate() {
            if index.insert(k.clone(), i as u32).is_some() {
                return Err(DatasetError::Format(format!("duplicate key {k:?}")));
            }
        }
        Ok(Self { keys, index })
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn index_of(&self, key: &str) -> Option<u32> {
        self.index.get(key).copied()
    }

    pub fn key(&self, index: u32) -> &str {
        &self.keys[index as usize]
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }
}

/// Bipartite adjacency in both directions. Lists are sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Interactions {
    user_items: Vec<Vec<u32>>,
    item_users: Vec<Vec<u32>>,
    len: usize,
}

impl Interactions {
    /// Builds adjacency from pairs; duplicates are collapsed.
    pub fn from_pairs(num_users: usize, num_items: usize, pairs: &[(u32, u32)]) -> Self {
        let mut user_items = vec![Vec::new(); num_users];
        let mut item_users = vec![Vec::new(); num_items];
        for &(u, v) in pairs {
            user_items[u as usize].push(v);
        }
        let mut len = 0;
        for (u, items) in user_items.iter_mut().enumerate() {
            items.sort_unstable();
            items.dedup();
            len += items.len();
            for &v in items.iter() {
                item_users[v as usize].push(u as u32);
            }
        }
        Self {
            user_items,
            item_users,
            len,
        }
    }

    pub fn num_users(&self) -> usize {
        self.user_items.len()
    }

    pub fn num_items(&self) -> usize {
        self.item_users.len()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// `N_u`: items of a user, sorted.
    pub fn items_of(&self, user: u32) -> &[u32] {
        &self.user_items[user as usize]
    }

    /// `N_v`: users of an item, sorted.
    pub fn users_of(&self, item: u32) -> &[u32] {
        &self.item_users[item as usize]
    }

    pub fn contains(&self, user: u32, item: u32) -> bool {
        self.items_of(user).binary_search(&item).is_ok()
    }

    /// All pairs in `(user, item)` lexicographic order.
    pub fn pairs(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.user_items
            .iter()
            .enumerate()
            .flat_map(|(u, items)| items.iter().map(move |&v| (u as u32, v)))
    }

    pub fn user_degrees(&self) -> impl Iterator<Item = usize> + '_ {
        self.user_items.iter().map(Vec::len)
    }

    pub fn item_degrees(&self) -> impl Iterator<Item = usize> + '_ {
        self.item_users.iter().map(Vec::len)
    }
}

/// A k-core filtered, densely re-indexed interaction set.
#[derive(Debug, Clone)]
pub struct InteractionDataset {
    pub users: Arc<KeyMap>,
    pub items: Arc<KeyMap>,
    pub interactions: Interactions,
    pub threshold: f64,
    pub k: usize,
}

impl InteractionDataset {
    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn num_items(&self) -> usize {
        self.items.len()
    }
}

/// Recursively drops users and items with fewer than `k` interactions
/// until a fixed point is reached, then re-indexes survivors densely in
/// order of their first appearance in `raw`.
pub fn k_core_filter(raw: &RawInteractions, k: usize) -> Result<InteractionDataset, DatasetError> {
    if k == 0 {
        return Err(DatasetError::InvalidArgument("k must be >= 1".into()));
    }
    let mut alive_user = vec![true; raw.user_keys.len()];
    let mut alive_item = vec![true; raw.item_keys.len()];
    let mut iterations = 0;
    loop {
        iterations += 1;
        let mut user_deg = vec![0usize; alive_user.len()];
        for &(u, v) in &raw.pairs {
            if alive_user[u as usize] && alive_item[v as usize] {
                user_deg[u as usize] += 1;
            }
        }
        let mut changed = false;
        for (alive, &deg) in alive_user.iter_mut().zip(&user_deg) {
            if *alive && deg < k {
                *alive = false;
                changed = true;
            }
        }
        let mut item_deg = vec![0usize; alive_item.len()];
        for &(u, v) in &raw.pairs {
            if alive_user[u as usize] && alive_item[v as usize] {
                item_deg[v as usize] += 1;
            }
        }
        for (alive, &deg) in alive_item.iter_mut().zip(&item_deg) {
            if *alive && deg < k {
                *alive = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let mut user_map = vec![u32::MAX; alive_user.len()];
    let mut item_map = vec![u32::MAX; alive_item.len()];
    let mut user_keys = Vec::new();
    let mut item_keys = Vec::new();
    let mut pairs = Vec::new();
    for &(u, v) in &raw.pairs {
        if !(alive_user[u as usize] && alive_item[v as usize]) {
            continue;
        }
        if user_map[u as usize] == u32::MAX {
            user_map[u as usize] = user_keys.len() as u32;
            user_keys.push(raw.user_keys[u as usize].clone());
        }
        if item_map[v as usize] == u32::MAX {
            item_map[v as usize] = item_keys.len() as u32;
            item_keys.push(raw.item_keys[v as usize].clone());
        }
        pairs.push((user_map[u as usize], item_map[v as usize]));
    }
    if pairs.is_empty() {
        return Err(DatasetError::EmptyAfterFilter { k, iterations });
    }
    let interactions = Interactions::from_pairs(user_keys.len(), item_keys.len(), &pairs);
    debug_assert!(interactions.user_degrees().all(|d| d >= k));
    debug_assert!(interactions.item_degrees().all(|d| d >= k));
    Ok(InteractionDataset {
        users: Arc::new(KeyMap::new(user_keys)?),
        items: Arc::new(KeyMap::new(item_keys)?),
        interactions,
        threshold: raw.threshold,
        k,
    })
}

/// Train/validation/test shares of each user's interactions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.8,
            validation: 0.1,
            test: 0.1,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let all = [self.train, self.validation, self.test];
        if all.iter().any(|r| r.is_nan() || *r <= 0.0) || ((all.iter().sum::<f64>() - 1.0).abs() > 1e-9) {
            return Err(DatasetError::InvalidArgument(format!(
                "split ratios must be positive and sum to 1, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Interactions for a held-out phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Validation,
    Test,
}

impl std::str::FromStr for Phase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "validation" | "valid" | "val" => Ok(Phase::Validation),
            "test" => Ok(Phase::Test),
            other => Err(format!("unknown phase {other:?} (expected validation|test)")),
        }
    }
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Phase::Validation => "validation",
            Phase::Test => "test",
        })
    }
}

#[derive(Debug, Clone)]
pub struct SplitDataset {
    /// The full filtered set `S`, train ∪ validation ∪ test.
    pub full: InteractionDataset,
    pub train: Interactions,
    pub validation: Interactions,
    pub test: Interactions,
    pub ratios: SplitRatios,
    pub seed: u64,
    /// Users kept entirely in train because they had fewer than 3
    /// interactions.
    pub small_users: usize,
}

impl SplitDataset {
    pub fn num_users(&self) -> usize {
        self.full.num_users()
    }

    pub fn num_items(&self) -> usize {
        self.full.num_items()
    }

    pub fn phase(&self, phase: Phase) -> &Interactions {
        match phase {
            Phase::Validation => &self.validation,
            Phase::Test => &self.test,
        }
    }

    /// Items hidden from ranking for `user` in the given phase: train for
    /// validation, train ∪ validation for test. Sorted ascending.
    pub fn exclusions(&self, user: u32, phase: Phase) -> Vec<u32> {
        let train = self.train.items_of(user);
        match phase {
            Phase::Validation => train.to_vec(),
            Phase::Test => {
                let mut out = Vec::with_capacity(train.len() + self.validation.items_of(user).len());
                out.extend_from_slice(train);
                out.extend_from_slice(self.validation.items_of(user));
                out.sort_unstable();
                out
            }
        }
    }
}

/// Shuffles each user's interactions with a generator derived from
/// `(seed, user)` and cuts them by ratio. Validation and test shares are
/// floored; the remainder goes to train.
pub fn split_dataset(
    ds: InteractionDataset,
    ratios: SplitRatios,
    seed: u64,
) -> Result<SplitDataset, DatasetError> {
    ratios.validate()?;
    let mut train = Vec::new();
    let mut validation = Vec::new();
    let mut test = Vec::new();
    let mut small_users = 0;
    for u in 0..ds.num_users() as u32 {
        let mut items = ds.interactions.items_of(u).to_vec();
        let n = items.len();
        if n < 3 {
            small_users += 1;
            train.extend(items.iter().map(|&v| (u, v)));
            continue;
        }
        let mut rng = stream_rng(seed, Stream::Split, u as u64);
        items.shuffle(&mut rng);
        let n_val = (n as f64 * ratios.validation + 1e-9).floor() as usize;
        let n_test = (n as f64 * ratios.test + 1e-9).floor() as usize;
        let n_train = n - n_val - n_test;
        train.extend(items[..n_train].iter().map(|&v| (u, v)));
        validation.extend(items[n_train..n_train + n_val].iter().map(|&v| (u, v)));
        test.extend(items[n_train + n_val..].iter().map(|&v| (u, v)));
    }
    if small_users > 0 {
        log::warn!("{small_users} users with fewer than 3 interactions kept entirely in train");
    }
    let (nu, ni) = (ds.num_users(), ds.num_items());
    Ok(SplitDataset {
        train: Interactions::from_pairs(nu, ni, &train),
        validation: Interactions::from_pairs(nu, ni, &validation),
        test: Interactions::from_pairs(nu, ni, &test),
        full: ds,
        ratios,
        seed,
        small_users,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stats {
    pub num_users: usize,
    pub num_items: usize,
    pub num_interactions: usize,
    /// Fraction of the user × item matrix that is filled.
    pub density: f64,
    pub median_interactions_per_user: usize,
}

impl std::fmt::Display for Stats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "users                      {}", self.num_users)?;
        writeln!(f, "items                      {}", self.num_items)?;
        writeln!(f, "interactions               {}", self.num_interactions)?;
        writeln!(f, "density                    {:.3}%", self.density * 100.0)?;
        write!(f, "median interactions/user   {}", self.median_interactions_per_user)
    }
}

/// Lower median: element `(n - 1) / 2` of the sorted values.
pub fn lower_median(values: &mut [usize]) -> Option<usize> {
    if values.is_empty() {
        return None;
    }
    let mid = (values.len() - 1) / 2;
    Some(*values.select_nth_unstable(mid).1)
}

pub fn density(num_users: usize, num_items: usize, num_interactions: usize) -> f64 {
    num_interactions as f64 / (num_users as f64 * num_items as f64)
}

pub fn dataset_stats(ds: &InteractionDataset) -> Result<Stats, DatasetError> {
    let inter = &ds.interactions;
    let mut degrees: Vec<usize> = inter.user_degrees().collect();
    let median = lower_median(&mut degrees).ok_or(DatasetError::Empty)?;
    if inter.is_empty() {
        return Err(DatasetError::Empty);
    }
    Ok(Stats {
        num_users: ds.num_users(),
        num_items: ds.num_items(),
        num_interactions: inter.len(),
        density: density(ds.num_users(), ds.num_items(), inter.len()),
        median_interactions_per_user: median,
    })
}

/// Raised when a user has no train items left to attend over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("user {user} has an empty train history")]
pub struct EmptyHistory {
    pub user: u32,
}

/// Train-set `N_u` without `exclude`, uniformly subsampled to `cap`
/// items. The result is sorted.
pub fn user_history(
    split: &SplitDataset,
    user: u32,
    exclude: Option<u32>,
    cap: usize,
    rng: &mut Rng,
) -> Result<Vec<u32>, EmptyHistory> {
    let out = capped_support(split.train.items_of(user), exclude, cap, rng);
    if out.is_empty() {
        Err(EmptyHistory { user })
    } else {
        Ok(out)
    }
}

/// `sorted` minus `exclude`, subsampled to at most `cap` entries, sorted.
pub(crate) fn capped_support(sorted: &[u32], exclude: Option<u32>, cap: usize, rng: &mut Rng) -> Vec<u32> {
    let pos = exclude.and_then(|e| sorted.binary_search(&e).ok());
    let n = sorted.len() - pos.is_some() as usize;
    let at = |i: usize| match pos {
        Some(p) if i >= p => sorted[i + 1],
        _ => sorted[i],
    };
    if n <= cap {
        return (0..n).map(at).collect();
    }
    let mut picked: Vec<usize> = index::sample(rng, n, cap).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(at).collect()
}
