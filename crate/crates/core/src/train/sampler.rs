use log::warn;
use rand::Rng;

use crate::kg::{InteractionSet, ItemId, UserId};

/// One `(user, observed item, unobserved item)` training example.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainTriple {
    pub user: UserId,
    pub pos: ItemId,
    pub neg: ItemId,
}

/// Uniform item not in the user's training list, or `None` if the user has
/// interacted with every item.
pub fn sample_negative<R: Rng>(interactions: &InteractionSet, user: UserId, rng: &mut R) -> Option<ItemId> {
    let n = interactions.item_count();
    if interactions.train_items(user).len() >= n {
        return None;
    }
    loop {
        let item = rng.gen_range(0..n) as ItemId;
        if !interactions.is_train(user, item) {
            return Some(item);
        }
    }
}

/// Flattened observed pairs for uniform positive sampling.
#[derive(Debug, Clone)]
pub struct PairSampler {
    pairs: Vec<(UserId, ItemId)>,
}

impl PairSampler {
    pub fn new(interactions: &InteractionSet) -> Self {
        let pairs = (0..interactions.user_count() as UserId)
            .flat_map(|u| interactions.train_items(u).iter().map(move |&i| (u, i)))
            .collect();
        PairSampler { pairs }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// `batch_size` positives drawn uniformly with replacement, each paired
    /// with a rejection-sampled negative. Users without any negative are skipped.
    pub fn sample<R: Rng>(&self, interactions: &InteractionSet, batch_size: usize, rng: &mut R) -> Vec<TrainTriple> {
        assert!(!self.pairs.is_empty(), "no training interactions to sample from");
        let mut batch = Vec::with_capacity(batch_size);
        let mut skipped = 0usize;
        for _ in 0..batch_size {
            let (user, pos) = self.pairs[rng.gen_range(0..self.pairs.len())];
            match sample_negative(interactions, user, rng) {
                Some(neg) => batch.push(TrainTriple { user, pos, neg }),
                None => skipped += 1,
            }
        }
        if skipped > 0 {
            warn!("skipped {skipped} samples from users who interacted with every item");
        }
        batch
    }
}

pub fn sample_batch<R: Rng>(interactions: &InteractionSet, batch_size: usize, rng: &mut R) -> Vec<TrainTriple> {
    PairSampler::new(interactions).sample(interactions, batch_size, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn forced_negative() {
        let set = InteractionSet::from_lists(vec![vec![0, 1]], vec![], 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for t in sample_batch(&set, 200, &mut rng) {
            assert_eq!(t.neg, 2);
            assert!(t.pos < 2);
        }
    }

    #[test]
    fn saturated_user_is_skipped() {
        let set = InteractionSet::from_lists(vec![vec![0, 1], vec![0]], vec![], 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let batch = sample_batch(&set, 300, &mut rng);
        assert!(batch.iter().all(|t| t.user == 1 && t.neg == 1));
        assert!(batch.len() < 300);
    }

    #[test]
    fn negatives_are_uniform() {
        // 1 observed item out of 11; 10 candidate negatives
        let set = InteractionSet::from_lists(vec![vec![4]], vec![], 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let draws = 100_000;
        let mut counts = [0f64; 11];
        for _ in 0..draws {
            counts[sample_negative(&set, 0, &mut rng).unwrap() as usize] += 1.0;
        }
        assert_eq!(counts[4], 0.0);
        let expected = draws as f64 / 10.0;
        let chi2: f64 = counts
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != 4)
            .map(|(_, &c)| (c - expected).powi(2) / expected)
            .sum();
        // chi-square, 9 degrees of freedom: P(X > 21.666) = 0.01
        assert!(chi2 < 21.666, "chi2 = {chi2}");
    }
}
