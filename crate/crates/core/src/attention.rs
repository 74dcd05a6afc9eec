//! Interest-aware user representations.
//!
//! A user's interest in attribute `m` compares their affinity for the
//! attribute blocks of the items they interacted with against their affinity
//! for the population-mean block:
//!
//! ```text
//! f(u, m) = tanh(relu(tau * <e_u^m, mean_{i in N_u} e*_i^m> / <e_u^m, mean_{i in I} e*_i^m>))
//! ```
//!
//! Scores are not normalized across attributes; each gates its own block of
//! the pooled item history added to the user's embedding.

use log::warn;

use crate::embedding::{AttributeLayout, ParameterStore};
use crate::kg::{InteractionSet, ItemId, RelationId, UserId};
use crate::propagation::ItemRepresentation;

/// Denominators smaller than this in magnitude gate the score to 0.
pub const DENOMINATOR_EPS: f64 = 1e-8;

/// Largest `f64` strictly below 1; `tanh` saturates to 1.0 past ~19.
const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Predicted preference `<e*_u, e*_i>`.
pub fn score(user_rep: &[f64], item_rep: &[f64]) -> f64 {
    assert_eq!(
        user_rep.len(),
        item_rep.len(),
        "user and item representations differ in width"
    );
    dot(user_rep, item_rep)
}

/// Mean over all items of the layer-summed representation, refreshed at
/// stamped points and held constant in between.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemBlockMeans {
    mean: Vec<f64>,
    stamp: u64,
}

impl ItemBlockMeans {
    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn block<'a>(&'a self, layout: &AttributeLayout, relation: RelationId) -> &'a [f64] {
        layout.slice(&self.mean, relation)
    }

    pub fn stamp(&self) -> u64 {
        self.stamp
    }
}

pub fn item_block_means(items: &ItemRepresentation, stamp: u64) -> ItemBlockMeans {
    let n = items.item_count();
    assert!(n > 0, "item block means need at least one item");
    let w = items.width();
    let mut mean = vec![0.0; w];
    for row in items.items().chunks_exact(w.max(1)) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    ItemBlockMeans { mean, stamp }
}

/// Intermediate quantities of one interest score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterestTerms {
    pub numerator: f64,
    pub denominator: f64,
    /// `tau * numerator / denominator`, or 0 for a vanishing denominator.
    pub scaled: f64,
    pub score: f64,
}

impl InterestTerms {
    /// Whether the score depends smoothly on its inputs (relu open).
    pub fn active(&self) -> bool {
        self.scaled > 0.0
    }
}

pub fn interest_terms(
    user_block: &[f64],
    history_block: &[f64],
    population_block: &[f64],
    temperature: f64,
) -> InterestTerms {
    let numerator = dot(user_block, history_block);
    let denominator = dot(user_block, population_block);
    let scaled = if denominator.abs() < DENOMINATOR_EPS {
        0.0
    } else {
        temperature * numerator / denominator
    };
    let score = if scaled > 0.0 {
        scaled.tanh().min(BELOW_ONE)
    } else {
        0.0
    };
    InterestTerms {
        numerator,
        denominator,
        scaled,
        score,
    }
}

/// Mean of `e*_i` over the given items; `None` when empty.
pub fn history_mean(items: &ItemRepresentation, history: &[ItemId]) -> Option<Vec<f64>> {
    if history.is_empty() {
        return None;
    }
    let mut mean = vec![0.0; items.width()];
    for &i in history {
        for (m, v) in mean.iter_mut().zip(items.item(i)) {
            *m += v;
        }
    }
    let n = history.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    Some(mean)
}

/// Per-relation interest scores of one user.
#[derive(Debug, Clone, PartialEq)]
pub struct InterestProfile {
    pub user: UserId,
    pub scores: Vec<f64>,
    pub temperature: f64,
    /// No training interactions; every score is 0.
    pub cold: bool,
}

impl InterestProfile {
    /// Relations sorted by descending score, ties by ascending id.
    pub fn ranked(&self) -> Vec<(RelationId, f64)> {
        let mut out: Vec<(RelationId, f64)> = self
            .scores
            .iter()
            .enumerate()
            .map(|(m, &s)| (m as RelationId, s))
            .collect();
        out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        out
    }
}

pub fn interest_profile(
    user: UserId,
    params: &ParameterStore,
    items: &ItemRepresentation,
    means: &ItemBlockMeans,
    layout: &AttributeLayout,
    interactions: &InteractionSet,
    temperature: f64,
) -> InterestProfile {
    let relations = layout.relation_count();
    let Some(history) = history_mean(items, interactions.train_items(user)) else {
        return InterestProfile {
            user,
            scores: vec![0.0; relations],
            temperature,
            cold: true,
        };
    };
    let e_u = params.user(user);
    let scores = (0..relations as RelationId)
        .map(|m| {
            interest_terms(
                layout.slice(e_u, m),
                layout.slice(&history, m),
                means.block(layout, m),
                temperature,
            )
            .score
        })
        .collect();
    InterestProfile {
        user,
        scores,
        temperature,
        cold: false,
    }
}

#[allow(clippy::too_many_arguments)]
pub fn interest_score(
    user: UserId,
    relation: RelationId,
    params: &ParameterStore,
    items: &ItemRepresentation,
    means: &ItemBlockMeans,
    layout: &AttributeLayout,
    interactions: &InteractionSet,
    temperature: f64,
) -> f64 {
    let Some(history) = history_mean(items, interactions.train_items(user)) else {
        warn!("user {user} has no training interactions; interest score is 0");
        return 0.0;
    };
    interest_terms(
        layout.slice(params.user(user), relation),
        layout.slice(&history, relation),
        means.block(layout, relation),
        temperature,
    )
    .score
}

/// `e_u + mean_{i in N_u} e*_i`, or `e_u` alone for an empty history.
pub fn user_rep_plain(
    user: UserId,
    params: &ParameterStore,
    items: &ItemRepresentation,
    interactions: &InteractionSet,
) -> Vec<f64> {
    let mut rep = params.user(user).to_vec();
    if let Some(history) = history_mean(items, interactions.train_items(user)) {
        for (r, h) in rep.iter_mut().zip(&history) {
            *r += h;
        }
    }
    rep
}

/// `e_u` plus each block of the pooled history scaled by its interest score.
pub fn user_rep_attentive(
    user: UserId,
    params: &ParameterStore,
    items: &ItemRepresentation,
    interactions: &InteractionSet,
    profile: &InterestProfile,
    layout: &AttributeLayout,
) -> Vec<f64> {
    let mut rep = params.user(user).to_vec();
    if let Some(history) = history_mean(items, interactions.train_items(user)) {
        for m in 0..layout.relation_count() as RelationId {
            let f = profile.scores[m as usize];
            for (r, h) in layout.slice_mut(&mut rep, m).iter_mut().zip(layout.slice(&history, m)) {
                *r += f * h;
            }
        }
    }
    rep
}

/// Differentiable user representation for one user, given the pooled
/// history computed from current parameters.
#[derive(Debug, Clone)]
pub struct UserForward {
    user_vec: Vec<f64>,
    history: Option<Vec<f64>>,
    /// One entry per relation when attention is on.
    terms: Vec<InterestTerms>,
    rep: Vec<f64>,
}

impl UserForward {
    pub fn plain(user_vec: &[f64], history: Option<Vec<f64>>) -> Self {
        let mut rep = user_vec.to_vec();
        if let Some(h) = &history {
            for (r, v) in rep.iter_mut().zip(h) {
                *r += v;
            }
        }
        UserForward {
            user_vec: user_vec.to_vec(),
            history,
            terms: Vec::new(),
            rep,
        }
    }

    pub fn attentive(
        user_vec: &[f64],
        history: Option<Vec<f64>>,
        population: &[f64],
        layout: &AttributeLayout,
        temperature: f64,
    ) -> Self {
        let Some(h) = history else {
            return Self::plain(user_vec, None);
        };
        let mut rep = user_vec.to_vec();
        let mut terms = Vec::with_capacity(layout.relation_count());
        for m in 0..layout.relation_count() as RelationId {
            let t = interest_terms(
                layout.slice(user_vec, m),
                layout.slice(&h, m),
                layout.slice(population, m),
                temperature,
            );
            for (r, v) in layout.slice_mut(&mut rep, m).iter_mut().zip(layout.slice(&h, m)) {
                *r += t.score * v;
            }
            terms.push(t);
        }
        UserForward {
            user_vec: user_vec.to_vec(),
            history: Some(h),
            terms,
            rep,
        }
    }

    pub fn rep(&self) -> &[f64] {
        &self.rep
    }

    pub fn terms(&self) -> &[InterestTerms] {
        &self.terms
    }

    /// Gradients with respect to `e_u` and to the pooled history, given the
    /// gradient of the representation. `population` is held constant.
    pub fn backward(
        &self,
        layout: &AttributeLayout,
        population: &[f64],
        temperature: f64,
        grad_rep: &[f64],
    ) -> (Vec<f64>, Option<Vec<f64>>) {
        let mut d_user = grad_rep.to_vec();
        let Some(history) = &self.history else {
            return (d_user, None);
        };
        if self.terms.is_empty() {
            return (d_user, Some(grad_rep.to_vec()));
        }
        let mut d_hist = vec![0.0; grad_rep.len()];
        for (m, t) in self.terms.iter().enumerate() {
            let m = m as RelationId;
            let range = layout.range(m);
            let g = &grad_rep[range.clone()];
            let h = &history[range.clone()];
            for (d, gv) in d_hist[range.clone()].iter_mut().zip(g) {
                *d += t.score * gv;
            }
            if !t.active() {
                continue;
            }
            let d_score = dot(g, h);
            let d_scaled = d_score * (1.0 - t.score * t.score);
            let d_num = d_scaled * temperature / t.denominator;
            let d_den = -d_scaled * temperature * t.numerator / (t.denominator * t.denominator);
            let u = &self.user_vec[range.clone()];
            let pop = &population[range.clone()];
            for k in 0..g.len() {
                d_user[range.start + k] += d_num * h[k] + d_den * pop[k];
                d_hist[range.start + k] += d_num * u[k];
            }
        }
        (d_user, Some(d_hist))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_gate_and_ratio_one() {
        let t = interest_terms(&[1.0], &[-1.0], &[1.0], 1.0);
        assert_eq!(t.score, 0.0);
        let t = interest_terms(&[1.0, 0.0], &[0.3, 9.0], &[0.3, -4.0], 1.0);
        assert!((t.score - 1f64.tanh()).abs() < 1e-15);
        assert!((t.score - 0.76159).abs() < 1e-5);
    }

    #[test]
    fn denominator_guard() {
        // near-zero population affinity
        assert_eq!(interest_terms(&[1.0], &[1.0], &[1e-12], 1.0).score, 0.0);
        assert_eq!(interest_terms(&[1.0], &[1.0], &[-1e-12], 1.0).score, 0.0);
        // negative ratio
        assert_eq!(interest_terms(&[1.0], &[1.0], &[-1.0], 1.0).score, 0.0);
        // both negative: positive ratio passes the relu
        let t = interest_terms(&[1.0], &[-2.0], &[-1.0], 0.5);
        assert_eq!(t.score, 1f64.tanh());
    }

    #[test]
    fn saturated_score_stays_below_one() {
        let t = interest_terms(&[1.0], &[1e6], &[1.0], 1.0);
        assert!(t.score < 1.0);
        assert!(t.score > 0.999_999);
    }

    #[test]
    fn score_is_a_dot_product() {
        assert_eq!(score(&[1.0, 0.0], &[0.0, 1.0]), 0.0);
        assert_eq!(score(&[1.0, 0.0], &[1.0, 0.0]), 1.0);
    }

    #[test]
    #[should_panic]
    fn score_rejects_length_mismatch() {
        score(&[1.0], &[1.0, 2.0]);
    }

    #[test]
    fn block_means() {
        let items = ItemRepresentation::from_rows(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        assert_eq!(item_block_means(&items, 0).mean(), &[0.5, 0.5]);
        let same = ItemRepresentation::from_rows(2, 3, vec![2.0, -1.0, 2.0, -1.0, 2.0, -1.0]);
        assert_eq!(item_block_means(&same, 0).mean(), &[2.0, -1.0]);
    }

    #[test]
    fn ranked_profile_orders_descending() {
        let p = InterestProfile {
            user: 0,
            scores: vec![0.1, 0.8, 0.0, 0.8],
            temperature: 1.0,
            cold: false,
        };
        assert_eq!(p.ranked(), vec![(1, 0.8), (3, 0.8), (0, 0.1), (2, 0.0)]);
    }
}
