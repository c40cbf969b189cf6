//! Planted-cluster interaction data for trend experiments.
//!
//! Items are dealt round-robin into latent clusters. Each user prefers a
//! few clusters and draws most of their interactions from them, the rest
//! uniformly from the catalog.

use rand::seq::index;
use rand::Rng as _;

use crate::dataset::{k_core_filter, split_dataset, DatasetError, InteractionDataset, RawInteractions, SplitDataset, SplitRatios};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedConfig {
    pub num_users: usize,
    pub num_items: usize,
    pub num_clusters: usize,
    pub min_preferred: usize,
    pub max_preferred: usize,
    pub interactions_per_user: usize,
    /// Probability that an interaction ignores the user's clusters.
    pub noise: f64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            num_users: 500,
            num_items: 300,
            num_clusters: 10,
            min_preferred: 2,
            max_preferred: 3,
            interactions_per_user: 30,
            noise: 0.1,
        }
    }
}

impl PlantedConfig {
    /// A 20 × 20 block-structured toy set.
    pub fn toy() -> Self {
        Self {
            num_users: 20,
            num_items: 20,
            num_clusters: 2,
            min_preferred: 1,
            max_preferred: 1,
            interactions_per_user: 10,
            noise: 0.0,
        }
    }

    pub fn cluster_of(&self, item: usize) -> usize {
        item % self.num_clusters
    }

    fn validate(&self) -> Result<(), DatasetError> {
        let bad = |m: &str| Err(DatasetError::InvalidArgument(m.into()));
        if self.num_users == 0 || self.num_items == 0 || self.num_clusters == 0 {
            return bad("planted data needs users, items and clusters");
        }
        if self.num_clusters > self.num_items {
            return bad("more clusters than items");
        }
        if self.min_preferred == 0 || self.min_preferred > self.max_preferred || self.max_preferred > self.num_clusters {
            return bad("preferred-cluster range must satisfy 1 <= min <= max <= clusters");
        }
        if self.interactions_per_user > self.num_items {
            return bad("more interactions per user than items");
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return bad("noise must lie in [0, 1]");
        }
        Ok(())
    }
}

/// Draws planted positives with keys `u<index>` and `i<index>`.
pub fn planted_interactions(cfg: &PlantedConfig, seed: u64) -> Result<RawInteractions, DatasetError> {
    cfg.validate()?;
    let mut rng = stream_rng(seed, Stream::Synthetic, 0);
    let clusters: Vec<Vec<u32>> = (0..cfg.num_clusters)
        .map(|c| (c..cfg.num_items).step_by(cfg.num_clusters).map(|i| i as u32).collect())
        .collect();
    let mut pairs = Vec::with_capacity(cfg.num_users * cfg.interactions_per_user);
    for u in 0..cfg.num_users as u32 {
        let n_pref = rng.random_range(cfg.min_preferred..=cfg.max_preferred);
        let preferred: Vec<usize> = index::sample(&mut rng, cfg.num_clusters, n_pref).into_vec();
        let pool: Vec<u32> = preferred.iter().flat_map(|&c| clusters[c].iter().copied()).collect();
        let mut chosen = std::collections::BTreeSet::new();
        let mut in_pool = 0;
        while chosen.len() < cfg.interactions_per_user {
            let from_pool = in_pool < pool.len() && !rng.random_bool(cfg.noise);
            let v = if from_pool {
                pool[rng.random_range(0..pool.len())]
            } else {
                rng.random_range(0..cfg.num_items as u32)
            };
            if chosen.insert(v) && pool.contains(&v) {
                in_pool += 1;
            }
        }
        pairs.extend(chosen.into_iter().map(|v| (u, v)));
    }
    Ok(RawInteractions {
        user_keys: (0..cfg.num_users).map(|u| format!("u{u}")).collect(),
        item_keys: (0..cfg.num_items).map(|i| format!("i{i}")).collect(),
        pairs,
        threshold: 0.0,
    })
}

/// Planted data as a dataset: items never drawn are dropped, everything
/// else is kept.
pub fn planted_dataset(cfg: &PlantedConfig, seed: u64) -> Result<InteractionDataset, DatasetError> {
    k_core_filter(&planted_interactions(cfg, seed)?, 1)
}

/// Planted data split 80/10/10 with the same seed.
pub fn planted_split(cfg: &PlantedConfig, seed: u64) -> Result<SplitDataset, DatasetError> {
    split_dataset(planted_dataset(cfg, seed)?, SplitRatios::default(), seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planted_shape_and_preference() {
        let cfg = PlantedConfig::default();
        let raw = planted_interactions(&cfg, 3).unwrap();
        assert_eq!(raw.pairs.len(), cfg.num_users * cfg.interactions_per_user);
        let mut per_user = vec![std::collections::HashSet::new(); cfg.num_users];
        for &(u, v) in &raw.pairs {
            per_user[u as usize].insert(cfg.cluster_of(v as usize));
        }
        let concentrated = per_user.iter().filter(|c| c.len() <= cfg.max_preferred + 4).count();
        assert!(concentrated > cfg.num_users * 9 / 10);
        assert_eq!(planted_interactions(&cfg, 3).unwrap().pairs, raw.pairs);
    }

    #[test]
    fn toy_is_pure_blocks() {
        let cfg = PlantedConfig::toy();
        let raw = planted_interactions(&cfg, 1).unwrap();
        for u in 0..cfg.num_users as u32 {
            let clusters: std::collections::HashSet<usize> = raw
                .pairs
                .iter()
                .filter(|p| p.0 == u)
                .map(|p| cfg.cluster_of(p.1 as usize))
                .collect();
            assert_eq!(clusters.len(), 1);
        }
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = PlantedConfig {
            max_preferred: 20,
            ..PlantedConfig::default()
        };
        assert!(planted_interactions(&cfg, 0).is_err());
    }
}
