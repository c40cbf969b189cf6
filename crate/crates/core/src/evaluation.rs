//! Full-catalog top-K ranking and the ranking-metric harness.

use std::fmt::Write as _;

use rayon::prelude::*;
use thiserror::Error;

use crate::dataset::{capped_support, Interactions, Phase, SplitDataset};
use crate::models::{Forward, ModelKind, RelationContext};
use crate::parameters::ParameterStore;
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("no user has {0} interactions to evaluate against")]
    NoEvaluableUsers(Phase),
    #[error("cutoff K must be >= 1")]
    ZeroCutoff,
    #[error("shape mismatch: {0}")]
    Shape(String),
}

/// Something that can order candidate items for a user.
pub trait Ranker: Sync {
    /// Writes one score per candidate into `out`; lower ranks first.
    fn score_candidates(&self, user: u32, candidates: &[u32], out: &mut Vec<f64>);

    /// True when the user is ranked through a degenerate fallback.
    fn uses_fallback(&self, _user: u32) -> bool {
        false
    }
}

/// Ranks by the model's translated distance. Attention supports are capped
/// at `history_cap` with a draw that is fixed per `(seed, user)`.
pub struct ModelRanker<'a> {
    pub store: &'a ParameterStore,
    pub kind: ModelKind,
    pub train: &'a Interactions,
    pub history_cap: usize,
    pub seed: u64,
}

impl<'a> ModelRanker<'a> {
    pub fn new(store: &'a ParameterStore, kind: ModelKind, split: &'a SplitDataset, history_cap: usize, seed: u64) -> Self {
        Self {
            store,
            kind,
            train: &split.train,
            history_cap,
            seed,
        }
    }

    fn history(&self, user: u32) -> Vec<u32> {
        if !self.kind.uses_history() {
            return Vec::new();
        }
        let mut rng = stream_rng(self.seed, Stream::Evaluation, user as u64);
        capped_support(self.train.items_of(user), None, self.history_cap, &mut rng)
    }

    fn item_history(&self, user: u32, item: u32) -> Vec<u32> {
        let users = self.train.users_of(item);
        let index = ((item as u64) << 32) | user as u64;
        let mut rng = stream_rng(self.seed, Stream::Evaluation, index ^ (1 << 63));
        capped_support(users, Some(user), self.history_cap, &mut rng)
    }
}

impl Ranker for ModelRanker<'_> {
    fn score_candidates(&self, user: u32, candidates: &[u32], out: &mut Vec<f64>) {
        let history = self.history(user);
        let mut fwd = Forward::default();
        let mut item_history = Vec::new();
        out.clear();
        for &v in candidates {
            let hist: Vec<u32>;
            let h: &[u32] = if history.binary_search(&v).is_ok() {
                hist = history.iter().copied().filter(|&j| j != v).collect();
                &hist
            } else {
                &history
            };
            if self.kind.uses_item_memory() {
                item_history = self.item_history(user, v);
            }
            let ctx = RelationContext {
                user,
                item: v,
                history: h,
                item_history: &item_history,
            };
            out.push(fwd.run(&ctx, self.kind, self.store));
        }
    }

    fn uses_fallback(&self, user: u32) -> bool {
        self.kind.uses_history() && self.train.items_of(user).is_empty()
    }
}

/// Recommends the most popular train items regardless of the user.
pub struct PopularityRanker {
    popularity: Vec<usize>,
}

impl PopularityRanker {
    pub fn new(train: &Interactions) -> Self {
        Self {
            popularity: train.item_degrees().collect(),
        }
    }
}

impl Ranker for PopularityRanker {
    fn score_candidates(&self, _user: u32, candidates: &[u32], out: &mut Vec<f64>) {
        out.clear();
        out.extend(candidates.iter().map(|&v| -(self.popularity[v as usize] as f64)));
    }
}

/// Orders the catalog minus `exclusions` (sorted) by ascending score, ties
/// by ascending item index, truncated to `k`.
pub fn rank_items(ranker: &dyn Ranker, user: u32, num_items: usize, exclusions: &[u32], k: usize) -> Vec<u32> {
    debug_assert!(exclusions.windows(2).all(|w| w[0] < w[1]));
    let candidates: Vec<u32> = (0..num_items as u32)
        .filter(|v| exclusions.binary_search(v).is_err())
        .collect();
    let mut scores = Vec::with_capacity(candidates.len());
    ranker.score_candidates(user, &candidates, &mut scores);
    let mut order: Vec<(f64, u32)> = scores.into_iter().zip(candidates).collect();
    let cmp = |a: &(f64, u32), b: &(f64, u32)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    let k = k.min(order.len());
    if k == 0 {
        return Vec::new();
    }
    if k < order.len() {
        order.select_nth_unstable_by(k - 1, cmp);
        order.truncate(k);
    }
    order.sort_unstable_by(cmp);
    order.into_iter().map(|(_, v)| v).collect()
}

fn is_hit(relevant: &[u32], item: u32) -> bool {
    relevant.binary_search(&item).is_ok()
}

fn top(ranked: &[u32], k: usize) -> &[u32] {
    &ranked[..k.min(ranked.len())]
}

/// `(hits/K, hits/|relevant|)`. `relevant` must be sorted and non-empty.
pub fn precision_recall_at_k(ranked: &[u32], relevant: &[u32], k: usize) -> (f64, f64) {
    let hits = top(ranked, k).iter().filter(|&&v| is_hit(relevant, v)).count() as f64;
    (hits / k as f64, hits / relevant.len() as f64)
}

/// Binary-relevance NDCG with the ideal DCG over `min(|relevant|, K)`
/// leading positions.
pub fn ndcg_at_k(ranked: &[u32], relevant: &[u32], k: usize) -> f64 {
    let dcg: f64 = top(ranked, k)
        .iter()
        .enumerate()
        .filter(|(_, &v)| is_hit(relevant, v))
        .map(|(i, _)| 1.0 / (i as f64 + 2.0).log2())
        .sum();
    let ideal: f64 = (0..relevant.len().min(k)).map(|i| 1.0 / (i as f64 + 2.0).log2()).sum();
    dcg / ideal
}

/// AP@K: precision at each hit position, summed, over `min(|relevant|, K)`.
pub fn average_precision_at_k(ranked: &[u32], relevant: &[u32], k: usize) -> f64 {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, &v) in top(ranked, k).iter().enumerate() {
        if is_hit(relevant, v) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    sum / relevant.len().min(k) as f64
}

/// Reciprocal rank of the first hit within the top K, else 0.
pub fn reciprocal_rank_at_k(ranked: &[u32], relevant: &[u32], k: usize) -> f64 {
    top(ranked, k)
        .iter()
        .position(|&v| is_hit(relevant, v))
        .map_or(0.0, |i| 1.0 / (i + 1) as f64)
}

/// Lower median of train popularity over every recommended slot.
pub fn median_popularity(lists: &[Vec<u32>], train: &Interactions) -> f64 {
    let mut pops: Vec<usize> = lists
        .iter()
        .flatten()
        .map(|&v| train.users_of(v).len())
        .collect();
    crate::dataset::lower_median(&mut pops).map_or(0.0, |m| m as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserRecord {
    pub user: u32,
    pub num_relevant: usize,
    pub precision: f64,
    pub recall: f64,
    pub ndcg: f64,
    pub average_precision: f64,
    pub reciprocal_rank: f64,
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub cutoff: usize,
    pub phase: Phase,
    pub precision: f64,
    pub recall: f64,
    pub ndcg: f64,
    pub map: f64,
    pub mrr: f64,
    pub median_popularity: f64,
    pub num_evaluated_users: usize,
    pub per_user: Vec<UserRecord>,
}

impl EvalReport {
    /// `metric,value` rows; ratio metrics ×100.
    pub fn to_csv(&self) -> String {
        let k = self.cutoff;
        let mut out = String::from("metric,value\n");
        for (name, v) in self.ratio_metrics() {
            let _ = writeln!(out, "{}@{k},{:.6}", name.to_lowercase(), v * 100.0);
        }
        let _ = writeln!(out, "popularity@{k},{:.1}", self.median_popularity);
        let _ = writeln!(out, "users,{}", self.num_evaluated_users);
        out
    }

    fn ratio_metrics(&self) -> [(&'static str, f64); 5] {
        [
            ("MAP", self.map),
            ("MRR", self.mrr),
            ("NDCG", self.ndcg),
            ("Precision", self.precision),
            ("Recall", self.recall),
        ]
    }

    /// Per-user breakdown as tab-separated rows.
    pub fn per_user_tsv(&self) -> String {
        let mut out = String::from("user\trelevant\tprecision\trecall\tndcg\tap\trr\tfallback\n");
        for r in &self.per_user {
            let _ = writeln!(
                out,
                "{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}",
                r.user, r.num_relevant, r.precision, r.recall, r.ndcg, r.average_precision, r.reciprocal_rank, r.fallback
            );
        }
        out
    }
}

/// Aligned table with one column per model: ratio metrics ×100 with two
/// decimals, then median popularity.
pub fn format_table(columns: &[(&str, &EvalReport)]) -> String {
    let Some((_, first)) = columns.first() else {
        return String::new();
    };
    let k = first.cutoff;
    let label = format!("Metrics @{k} (in %)");
    let width = columns.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(8);
    let mut out = format!("{label:<20}");
    for (name, _) in columns {
        let _ = write!(out, "  {name:>width$}");
    }
    out.push('\n');
    for (i, metric) in ["MAP", "MRR", "NDCG", "Precision", "Recall"].iter().enumerate() {
        let _ = write!(out, "{metric:<20}");
        for (_, r) in columns {
            let _ = write!(out, "  {:>width$.2}", r.ratio_metrics()[i].1 * 100.0);
        }
        out.push('\n');
    }
    let _ = write!(out, "{:<20}", "Popularity");
    for (_, r) in columns {
        let _ = write!(out, "  {:>width$.1}", r.median_popularity);
    }
    out.push('\n');
    out
}

/// Ranks the full non-excluded catalog for every user with held-out
/// positives in `phase` and averages the metrics over those users.
pub fn evaluate(ranker: &dyn Ranker, split: &SplitDataset, phase: Phase, k: usize) -> Result<EvalReport, EvalError> {
    if k == 0 {
        return Err(EvalError::ZeroCutoff);
    }
    let relevant_view = split.phase(phase);
    let users: Vec<u32> = (0..split.num_users() as u32)
        .filter(|&u| !relevant_view.items_of(u).is_empty())
        .collect();
    if users.is_empty() {
        return Err(EvalError::NoEvaluableUsers(phase));
    }
    let num_items = split.num_items();
    let results: Vec<(UserRecord, Vec<u32>)> = users
        .par_iter()
        .map(|&u| {
            let exclusions = split.exclusions(u, phase);
            let ranked = rank_items(ranker, u, num_items, &exclusions, k);
            assert!(
                ranked.iter().all(|v| exclusions.binary_search(v).is_err()),
                "ranking for user {u} leaked an excluded item"
            );
            let relevant = relevant_view.items_of(u);
            let (precision, recall) = precision_recall_at_k(&ranked, relevant, k);
            let record = UserRecord {
                user: u,
                num_relevant: relevant.len(),
                precision,
                recall,
                ndcg: ndcg_at_k(&ranked, relevant, k),
                average_precision: average_precision_at_k(&ranked, relevant, k),
                reciprocal_rank: reciprocal_rank_at_k(&ranked, relevant, k),
                fallback: ranker.uses_fallback(u),
            };
            (record, ranked)
        })
        .collect();

    let n = results.len() as f64;
    let mean = |f: fn(&UserRecord) -> f64| results.iter().map(|(r, _)| f(r)).sum::<f64>() / n;
    let lists: Vec<Vec<u32>> = results.iter().map(|(_, l)| l.clone()).collect();
    Ok(EvalReport {
        cutoff: k,
        phase,
        precision: mean(|r| r.precision),
        recall: mean(|r| r.recall),
        ndcg: mean(|r| r.ndcg),
        map: mean(|r| r.average_precision),
        mrr: mean(|r| r.reciprocal_rank),
        median_popularity: median_popularity(&lists, &split.train),
        num_evaluated_users: results.len(),
        per_user: results.into_iter().map(|(r, _)| r).collect(),
    })
}

/// Evaluates a trained store, checking its shape against the dataset.
pub fn evaluate_model(
    store: &ParameterStore,
    kind: ModelKind,
    split: &SplitDataset,
    phase: Phase,
    k: usize,
    history_cap: usize,
    seed: u64,
) -> Result<EvalReport, EvalError> {
    if store.num_users() != split.num_users() || store.num_items() != split.num_items() {
        return Err(EvalError::Shape(format!(
            "store has {} users × {} items, dataset has {} × {}",
            store.num_users(),
            store.num_items(),
            split.num_users(),
            split.num_items()
        )));
    }
    if kind.uses_item_memory() && store.item_memory.is_none() {
        return Err(EvalError::Shape("HLR++ requires an item-side memory".into()));
    }
    evaluate(&ModelRanker::new(store, kind, split, history_cap, seed), split, phase, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parameters::init_parameters;
    use crate::synthetic::{planted_split, PlantedConfig};
    use crate::training::{train, Hyperparams};
    use proptest::prelude::*;

    struct Fixed(Vec<f64>);

    impl Ranker for Fixed {
        fn score_candidates(&self, _user: u32, candidates: &[u32], out: &mut Vec<f64>) {
            out.clear();
            out.extend(candidates.iter().map(|&v| self.0[v as usize]));
        }
    }

    #[test]
    fn rank_sort_tie_and_truncation() {
        let r = Fixed(vec![0.9, 0.2, 0.5]);
        assert_eq!(rank_items(&r, 0, 3, &[], 2), vec![1, 2]);
        let tied = Fixed(vec![0.5, 0.5, 0.5, 0.1]);
        assert_eq!(rank_items(&tied, 0, 4, &[], 3), vec![3, 0, 1]);
        assert_eq!(rank_items(&r, 0, 3, &[1], 10), vec![2, 0]);
        assert!(rank_items(&r, 0, 3, &[0, 1, 2], 10).is_empty());
    }

    #[test]
    fn precision_recall_examples() {
        let ranked: Vec<u32> = (0..10).collect();
        let (p, r) = precision_recall_at_k(&ranked, &[3, 7, 20, 21], 10);
        assert!((p - 0.2).abs() < 1e-15 && (r - 0.5).abs() < 1e-15);
        let (p, _) = precision_recall_at_k(&ranked, &(0..12).collect::<Vec<_>>(), 10);
        assert_eq!(p, 1.0);
        assert_eq!(precision_recall_at_k(&ranked, &[50], 10), (0.0, 0.0));
    }

    #[test]
    fn ndcg_examples() {
        assert_eq!(ndcg_at_k(&[4, 1, 2], &[4], 10), 1.0);
        let second = ndcg_at_k(&[1, 4, 2], &[4], 10);
        assert!((second - 1.0 / 3f64.log2()).abs() < 1e-15);
        assert!((second - 0.6309).abs() < 1e-4);
        assert_eq!(ndcg_at_k(&[1, 2], &[4], 10), 0.0);
    }

    #[test]
    fn map_mrr_examples() {
        assert!((reciprocal_rank_at_k(&[9, 8, 4], &[4], 10) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(average_precision_at_k(&[1, 2, 3], &[1, 2], 10), 1.0);
        let ranked = [0, 5, 1, 6, 2, 3];
        let ap = average_precision_at_k(&ranked, &[5, 6, 30], 10);
        assert!((ap - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn popularity_median_examples() {
        let train = Interactions::from_pairs(
            8,
            4,
            &[(0, 0), (1, 1), (2, 1), (3, 2), (4, 2), (5, 2), (0, 3), (1, 3), (2, 3), (3, 3)],
        );
        assert_eq!(median_popularity(&[vec![0, 1, 2, 3]], &train), 2.0);
        assert_eq!(median_popularity(&[vec![3], vec![3], vec![3]], &train), 4.0);
    }

    struct Oracle<'a>(&'a Interactions);

    impl Ranker for Oracle<'_> {
        fn score_candidates(&self, user: u32, candidates: &[u32], out: &mut Vec<f64>) {
            out.clear();
            out.extend(candidates.iter().map(|&v| if self.0.contains(user, v) { -1.0 } else { 0.0 }));
        }
    }

    #[test]
    fn perfect_oracle_bounds() {
        let split = planted_split(&PlantedConfig::default(), 4).unwrap();
        let report = evaluate(&Oracle(&split.test), &split, Phase::Test, 10).unwrap();
        let expected_precision = (0..split.num_users() as u32)
            .map(|u| split.test.items_of(u).len())
            .filter(|&n| n > 0)
            .map(|n| n.min(10) as f64 / 10.0)
            .sum::<f64>()
            / report.num_evaluated_users as f64;
        assert!((report.precision - expected_precision).abs() < 1e-12);
        assert_eq!((report.recall, report.ndcg, report.mrr, report.map), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn frozen_store_evaluates_identically_and_soundly() {
        let split = planted_split(&PlantedConfig::default(), 1).unwrap();
        let store = init_parameters(split.num_users(), split.num_items(), 8, 3, true, 1).unwrap();
        for kind in ModelKind::ALL {
            let a = evaluate_model(&store, kind, &split, Phase::Test, 10, 20, 9).unwrap();
            let b = evaluate_model(&store, kind, &split, Phase::Test, 10, 20, 9).unwrap();
            assert_eq!(a, b);
            assert!([a.precision, a.recall, a.ndcg, a.map, a.mrr].iter().all(|x| (0.0..=1.0).contains(x)));
        }
        let ranker = ModelRanker::new(&store, ModelKind::Hlr, &split, 20, 9);
        for u in 0..split.num_users() as u32 {
            let excl = split.exclusions(u, Phase::Test);
            let ranked = rank_items(&ranker, u, split.num_items(), &excl, 10);
            assert!(ranked.iter().all(|v| excl.binary_search(v).is_err()));
        }
    }

    #[test]
    fn zero_users_and_shape_errors() {
        let split = planted_split(&PlantedConfig::toy(), 0).unwrap();
        let store = init_parameters(split.num_users() + 1, split.num_items(), 4, 2, false, 0).unwrap();
        assert!(matches!(
            evaluate_model(&store, ModelKind::Cml, &split, Phase::Test, 10, 5, 0),
            Err(EvalError::Shape(_))
        ));
        let mut empty = split.clone();
        empty.test = Interactions::from_pairs(split.num_users(), split.num_items(), &[]);
        assert_eq!(
            evaluate(&PopularityRanker::new(&empty.train), &empty, Phase::Test, 10),
            Err(EvalError::NoEvaluableUsers(Phase::Test))
        );
    }

    #[test]
    fn popularity_baseline_is_more_popular_than_cml() {
        let split = planted_split(&PlantedConfig::default(), 2).unwrap();
        let hp = Hyperparams {
            kind: ModelKind::Cml,
            dim: 16,
            batch_size: 100,
            max_epochs: 10,
            lr: 0.005,
            ..Hyperparams::default()
        };
        let (store, _) = train(&split, &hp).unwrap();
        let cml = evaluate_model(&store, ModelKind::Cml, &split, Phase::Test, 10, 50, 0).unwrap();
        let pop = evaluate(&PopularityRanker::new(&split.train), &split, Phase::Test, 10).unwrap();
        assert!(pop.median_popularity > cml.median_popularity, "{} vs {}", pop.median_popularity, cml.median_popularity);
    }

    #[test]
    fn report_formats() {
        let split = planted_split(&PlantedConfig::default(), 0).unwrap();
        let pop = evaluate(&PopularityRanker::new(&split.train), &split, Phase::Test, 10).unwrap();
        let csv = pop.to_csv();
        assert!(csv.starts_with("metric,value\nmap@10,"));
        assert_eq!(csv.lines().count(), 8);
        let table = format_table(&[("popular", &pop), ("again", &pop)]);
        assert_eq!(table.lines().count(), 7);
        assert!(table.lines().nth(3).unwrap().starts_with("NDCG"));
        assert_eq!(pop.per_user_tsv().lines().count(), pop.num_evaluated_users + 1);
    }

    fn instance() -> impl Strategy<Value = (Vec<u32>, Vec<u32>, usize, u32)> {
        (5usize..30, 1usize..12).prop_flat_map(|(n, k)| {
            (
                Just((0..n as u32).collect::<Vec<_>>()).prop_shuffle(),
                proptest::collection::btree_set(0..n as u32, 1..=5),
                Just(k),
                0..n as u32,
            )
                .prop_map(|(ranked, rel, k, extra)| (ranked, rel.into_iter().collect(), k, extra))
        })
    }

    proptest! {
        #[test]
        fn extra_hit_never_hurts((ranked, relevant, k, slot) in instance()) {
            let top_len = ranked.len().min(k);
            let p = slot as usize % top_len;
            prop_assume!(!is_hit(&relevant, ranked[p]));
            let outside = ranked[top_len..].iter().position(|&v| is_hit(&relevant, v));
            prop_assume!(outside.is_some());
            let mut better = ranked.clone();
            better.swap(p, top_len + outside.unwrap());
            let (_, r0) = precision_recall_at_k(&ranked, &relevant, k);
            let (_, r1) = precision_recall_at_k(&better, &relevant, k);
            prop_assert!(r1 >= r0);
            prop_assert!(reciprocal_rank_at_k(&better, &relevant, k) >= reciprocal_rank_at_k(&ranked, &relevant, k));
            prop_assert!(ndcg_at_k(&better, &relevant, k) >= ndcg_at_k(&ranked, &relevant, k));
        }

        #[test]
        fn ratio_metrics_bounded((ranked, relevant, k, _) in instance()) {
            let (p, r) = precision_recall_at_k(&ranked, &relevant, k);
            let n = ndcg_at_k(&ranked, &relevant, k);
            prop_assert!((0.0..=1.0).contains(&p) && (0.0..=1.0).contains(&r));
            prop_assert!((0.0..=1.0 + 1e-12).contains(&n));
            prop_assert!((0.0..=1.0 + 1e-12).contains(&average_precision_at_k(&ranked, &relevant, k)));
            prop_assert_eq!(n == 0.0, p == 0.0);
        }
    }
}
