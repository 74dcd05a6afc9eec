//! Full-ranking top-K evaluation.

use std::cmp::Ordering;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::attention::dot;
use crate::embedding::ParameterStore;
use crate::kg::{InteractionSet, ItemId, UserId};
use crate::model::{Model, Snapshot};
use crate::propagation::ItemRepresentation;

pub const DEFAULT_K: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct TopK {
    pub items: Vec<ItemId>,
    /// Fewer than K candidates were available.
    pub short: bool,
}

fn by_score_then_id(a: &(ItemId, f64), b: &(ItemId, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// Top `k` items by descending score, skipping `exclude` (sorted), ties broken
/// by ascending item id.
pub fn top_k(scores: &[f64], exclude: &[ItemId], k: usize) -> TopK {
    assert!(k >= 1, "K must be at least 1");
    let mut candidates: Vec<(ItemId, f64)> = scores
        .iter()
        .enumerate()
        .map(|(i, &s)| (i as ItemId, s))
        .filter(|(i, _)| exclude.binary_search(i).is_err())
        .collect();
    let short = candidates.len() < k;
    if candidates.len() > k {
        candidates.select_nth_unstable_by(k - 1, by_score_then_id);
        candidates.truncate(k);
    }
    candidates.sort_by(by_score_then_id);
    TopK {
        items: candidates.into_iter().map(|(i, _)| i).collect(),
        short,
    }
}

pub fn item_scores(user_rep: &[f64], items: &ItemRepresentation) -> Vec<f64> {
    let w = items.width();
    items
        .items()
        .chunks_exact(w.max(1))
        .map(|row| dot(user_rep, row))
        .collect()
}

pub fn rank_items(user_rep: &[f64], items: &ItemRepresentation, train_items: &[ItemId], k: usize) -> TopK {
    top_k(&item_scores(user_rep, items), train_items, k)
}

/// `|topk ∩ test| / |test|`; `None` for an empty test list.
pub fn recall_at_k(topk: &[ItemId], test: &[ItemId]) -> Option<f64> {
    if test.is_empty() {
        return None;
    }
    let hits = topk.iter().filter(|i| test.contains(i)).count();
    Some(hits as f64 / test.len() as f64)
}

/// Binary-gain NDCG with a log2 discount; the ideal ranking places
/// `min(|test|, k)` hits first.
pub fn ndcg_at_k(topk: &[ItemId], test: &[ItemId], k: usize) -> Option<f64> {
    if test.is_empty() {
        return None;
    }
    let dcg: f64 = topk
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, i)| test.contains(i))
        .map(|(p, _)| 1.0 / ((p + 2) as f64).log2())
        .sum();
    let idcg: f64 = (0..test.len().min(k)).map(|p| 1.0 / ((p + 2) as f64).log2()).sum();
    Some(dcg / idcg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserRanking {
    pub user: UserId,
    pub topk: Vec<ItemId>,
    pub recall: f64,
    pub ndcg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankingResult {
    pub k: usize,
    pub users: Vec<UserRanking>,
    pub recall: f64,
    pub ndcg: f64,
}

impl RankingResult {
    pub fn from_users(k: usize, users: Vec<UserRanking>) -> Self {
        let n = users.len().max(1) as f64;
        let recall = users.iter().map(|u| u.recall).sum::<f64>() / n;
        let ndcg = users.iter().map(|u| u.ndcg).sum::<f64>() / n;
        RankingResult { k, users, recall, ndcg }
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("metric\tk\tvalue\tusers\n");
        let n = self.users.len();
        writeln!(s, "recall\t{}\t{}\t{n}", self.k, self.recall).unwrap();
        writeln!(s, "ndcg\t{}\t{}\t{n}", self.k, self.ndcg).unwrap();
        s
    }

    pub fn per_user_tsv(&self) -> String {
        let mut s = String::from("user\trecall\tndcg\ttopk\n");
        for u in &self.users {
            let items: Vec<String> = u.topk.iter().map(|i| i.to_string()).collect();
            writeln!(s, "{}\t{}\t{}\t{}", u.user, u.recall, u.ndcg, items.join(",")).unwrap();
        }
        s
    }
}

/// Macro-averaged Recall@K and NDCG@K over users with a non-empty test list,
/// ranking every item the user has not trained on.
pub fn evaluate(
    model: &Model,
    snapshot: &Snapshot,
    params: &ParameterStore,
    interactions: &InteractionSet,
    k: usize,
) -> RankingResult {
    let users: Vec<UserId> = interactions.test_users();
    let rankings: Vec<UserRanking> = users
        .par_iter()
        .map(|&u| {
            let rep = snapshot.user_rep(model, params, interactions, u);
            let top = rank_items(&rep, &snapshot.items, interactions.train_items(u), k);
            let test = interactions.test_items(u);
            UserRanking {
                user: u,
                recall: recall_at_k(&top.items, test).unwrap_or(0.0),
                ndcg: ndcg_at_k(&top.items, test, k).unwrap_or(0.0),
                topk: top.items,
            }
        })
        .collect();
    RankingResult::from_users(k, rankings)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranking_and_exclusion() {
        let s = [0.1, 0.9, 0.5];
        assert_eq!(top_k(&s, &[], 2).items, vec![1, 2]);
        assert_eq!(top_k(&s, &[1], 2).items, vec![2, 0]);
        let t = top_k(&s, &[0, 1], 2);
        assert_eq!(t.items, vec![2]);
        assert!(t.short);
    }

    #[test]
    fn ties_break_by_id() {
        assert_eq!(top_k(&[1.0, 2.0, 2.0, 1.0], &[], 3).items, vec![1, 2, 0]);
    }

    #[test]
    fn recall_cases() {
        assert_eq!(recall_at_k(&[1, 2, 3], &[2, 9]), Some(0.5));
        assert_eq!(recall_at_k(&[1, 2], &[1, 2]), Some(1.0));
        assert_eq!(recall_at_k(&[1, 2], &[5]), Some(0.0));
        assert_eq!(recall_at_k(&[1, 2], &[]), None);
    }

    #[test]
    fn ndcg_cases() {
        assert_eq!(ndcg_at_k(&[4, 1, 2], &[4], 20), Some(1.0));
        let rank2 = ndcg_at_k(&[1, 4, 2], &[4], 20).unwrap();
        assert!((rank2 - 1.0 / 3f64.log2()).abs() < 1e-15);
        assert!((rank2 - 0.6309).abs() < 1e-4);
        assert_eq!(ndcg_at_k(&[1, 2], &[7], 20), Some(0.0));
        // hits anywhere within the first |test| ranks give 1
        assert_eq!(ndcg_at_k(&[3, 2], &[2, 3], 20), Some(1.0));
    }
}
