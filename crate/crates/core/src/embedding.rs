//! Per-relation embedding spaces.
//!
//! Every entity owns one embedding per relation ("attribute space"); widths
//! follow a linear ramp in the relation's edge count. Representations built
//! from these spaces are concatenations laid out by [`AttributeLayout`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{EntityId, RelationId, UserId};

/// Linear edge-count ramp for block widths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DimensionSchedule {
    pub d_min: usize,
    pub d_max: usize,
    pub c: usize,
}

impl DimensionSchedule {
    pub fn new(d_min: usize, d_max: usize, c: usize) -> Result<Self> {
        let s = DimensionSchedule { d_min, d_max, c };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_min == 0 || self.c == 0 || self.d_max < self.d_min {
            return Err(Error::Config(format!(
                "dimension schedule needs 1 <= d_min <= d_max and c >= 1, got d_min={} d_max={} c={}",
                self.d_min, self.d_max, self.c
            )));
        }
        Ok(())
    }

    /// Width for a relation with `edges` edges: the ramp
    /// `d_min + (d_max - d_min) * edges / c`, saturating at `d_max` once
    /// `edges >= c`, rounded to nearest.
    pub fn dim_for(&self, edges: usize) -> usize {
        let (lo, hi) = (self.d_min as f64, self.d_max as f64);
        let ramp = lo + (hi - lo) * edges as f64 / self.c as f64;
        (ramp.min(hi).round() as usize).clamp(self.d_min, self.d_max)
    }
}

pub fn compute_dims(edge_counts: &[usize], schedule: &DimensionSchedule) -> Vec<usize> {
    edge_counts.iter().map(|&n| schedule.dim_for(n)).collect()
}

/// Block widths and offsets of the concatenated representation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributeLayout {
    dims: Vec<usize>,
    offsets: Vec<usize>,
    total: usize,
}

impl AttributeLayout {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if let Some(m) = dims.iter().position(|&d| d == 0) {
            return Err(Error::Config(format!("relation {m} has block width 0")));
        }
        let mut offsets = Vec::with_capacity(dims.len());
        let mut total = 0;
        for &d in &dims {
            offsets.push(total);
            total += d;
        }
        Ok(AttributeLayout { dims, offsets, total })
    }

    /// Same width for every relation.
    pub fn uniform(relations: usize, width: usize) -> Result<Self> {
        Self::new(vec![width; relations])
    }

    pub fn relation_count(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn dim(&self, relation: RelationId) -> usize {
        self.dims[relation as usize]
    }

    pub fn offset(&self, relation: RelationId) -> usize {
        self.offsets[relation as usize]
    }

    /// Total width `D`.
    pub fn total(&self) -> usize {
        self.total
    }

    pub fn range(&self, relation: RelationId) -> std::ops::Range<usize> {
        let m = relation as usize;
        assert!(
            m < self.dims.len(),
            "relation {m} outside layout of {} blocks",
            self.dims.len()
        );
        self.offsets[m]..self.offsets[m] + self.dims[m]
    }

    pub fn slice<'v>(&self, vec: &'v [f64], relation: RelationId) -> &'v [f64] {
        assert_eq!(vec.len(), self.total, "vector length must equal layout width");
        &vec[self.range(relation)]
    }

    pub fn slice_mut<'v>(&self, vec: &'v mut [f64], relation: RelationId) -> &'v mut [f64] {
        assert_eq!(vec.len(), self.total, "vector length must equal layout width");
        let range = self.range(relation);
        &mut vec[range]
    }
}

pub fn build_layout(dims: &[usize]) -> Result<AttributeLayout> {
    AttributeLayout::new(dims.to_vec())
}

/// All trainable embeddings: one `|E| x d^m` table per relation and one user
/// table of width equal to the representation width.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterStore {
    entity_count: usize,
    user_count: usize,
    dims: Vec<usize>,
    entity_tables: Vec<Vec<f64>>,
    user_width: usize,
    users: Vec<f64>,
}

impl ParameterStore {
    pub fn zeros(dims: &[usize], entity_count: usize, user_count: usize, user_width: usize) -> Self {
        ParameterStore {
            entity_count,
            user_count,
            dims: dims.to_vec(),
            entity_tables: dims.iter().map(|&d| vec![0.0; d * entity_count]).collect(),
            user_width,
            users: vec![0.0; user_width * user_count],
        }
    }

    pub fn entity_count(&self) -> usize {
        self.entity_count
    }

    pub fn user_count(&self) -> usize {
        self.user_count
    }

    pub fn relation_count(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn user_width(&self) -> usize {
        self.user_width
    }

    /// `e_j` in the attribute space of `relation`.
    pub fn entity(&self, relation: RelationId, entity: EntityId) -> &[f64] {
        let d = self.dims[relation as usize];
        let j = entity as usize;
        &self.entity_tables[relation as usize][j * d..(j + 1) * d]
    }

    pub fn entity_mut(&mut self, relation: RelationId, entity: EntityId) -> &mut [f64] {
        let d = self.dims[relation as usize];
        let j = entity as usize;
        &mut self.entity_tables[relation as usize][j * d..(j + 1) * d]
    }

    pub fn user(&self, user: UserId) -> &[f64] {
        let u = user as usize;
        &self.users[u * self.user_width..(u + 1) * self.user_width]
    }

    pub fn user_mut(&mut self, user: UserId) -> &mut [f64] {
        let u = user as usize;
        &mut self.users[u * self.user_width..(u + 1) * self.user_width]
    }

    pub fn entity_table(&self, relation: RelationId) -> &[f64] {
        &self.entity_tables[relation as usize]
    }

    pub fn entity_table_mut(&mut self, relation: RelationId) -> &mut [f64] {
        &mut self.entity_tables[relation as usize]
    }

    pub fn user_table(&self) -> &[f64] {
        &self.users
    }

    pub fn user_table_mut(&mut self) -> &mut [f64] {
        &mut self.users
    }

    pub fn is_finite(&self) -> bool {
        self.entity_tables.iter().flatten().all(|v| v.is_finite()) && self.users.iter().all(|v| v.is_finite())
    }

    /// Squared L2 norm over every parameter.
    pub fn squared_norm(&self) -> f64 {
        self.entity_tables
            .iter()
            .flatten()
            .chain(self.users.iter())
            .map(|v| v * v)
            .sum()
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self.entity_tables.iter_mut().flatten().chain(self.users.iter_mut()) {
            *v *= factor;
        }
    }
}

fn xavier_fill(rng: &mut ChaCha8Rng, out: &mut [f64], width: usize) {
    // fan_in = fan_out = block width
    let bound = (6.0 / (2.0 * width as f64)).sqrt();
    for v in out.iter_mut() {
        *v = rng.gen_range(-bound..bound);
    }
}

/// Xavier-uniform initialization, each block with its own width as fan.
///
/// When `user_width` equals the layout width the user table is filled block by
/// block; otherwise it is treated as a single block.
pub fn init_params(
    layout: &AttributeLayout,
    entity_count: usize,
    user_count: usize,
    user_width: usize,
    seed: u64,
) -> ParameterStore {
    let mut store = ParameterStore::zeros(layout.dims(), entity_count, user_count, user_width);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for m in 0..layout.relation_count() {
        let d = layout.dims()[m];
        xavier_fill(&mut rng, store.entity_table_mut(m as RelationId), d);
    }
    if user_width == layout.total() {
        for u in 0..user_count as UserId {
            let row = store.user_mut(u);
            for m in 0..layout.relation_count() as RelationId {
                xavier_fill(&mut rng, layout.slice_mut(row, m), layout.dim(m));
            }
        }
    } else {
        xavier_fill(&mut rng, store.user_table_mut(), user_width);
    }
    store
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn alibaba() -> DimensionSchedule {
        DimensionSchedule::new(4, 64, 5000).unwrap()
    }

    #[test]
    fn schedule_points() {
        let s = alibaba();
        assert_eq!(s.dim_for(0), 4);
        assert_eq!(s.dim_for(5000), 64);
        assert_eq!(s.dim_for(2500), 34);
        assert_eq!(s.dim_for(260_477), 64);
    }

    #[test]
    fn schedule_rejects_bad_bounds() {
        assert!(DimensionSchedule::new(0, 4, 10).is_err());
        assert!(DimensionSchedule::new(8, 4, 10).is_err());
        assert!(DimensionSchedule::new(4, 8, 0).is_err());
    }

    #[test]
    fn layout_prefix_sums() {
        let l = build_layout(&[4, 8, 4]).unwrap();
        assert_eq!(l.offsets(), &[0, 4, 12]);
        assert_eq!(l.total(), 16);
        assert_eq!(l.range(1), 4..12);

        let l = build_layout(&[64]).unwrap();
        assert_eq!(l.offsets(), &[0]);
        assert_eq!(l.total(), 64);
        assert!(build_layout(&[4, 0]).is_err());
    }

    #[test]
    fn slice_of_zero_is_zero() {
        let l = build_layout(&[2, 3]).unwrap();
        let v = vec![0.0; 5];
        assert!(l.slice(&v, 1).iter().all(|&x| x == 0.0));
    }

    #[test]
    #[should_panic]
    fn slice_out_of_range_panics() {
        let l = build_layout(&[2, 3]).unwrap();
        let v = vec![0.0; 5];
        let _ = l.slice(&v, 2);
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let l = build_layout(&[4, 16, 2]).unwrap();
        let a = init_params(&l, 50, 7, l.total(), 11);
        let b = init_params(&l, 50, 7, l.total(), 11);
        assert_eq!(a, b);
        assert_ne!(a, init_params(&l, 50, 7, l.total(), 12));
        for m in 0..3u32 {
            let bound = (6.0 / (2.0 * l.dim(m) as f64)).sqrt();
            assert!(a.entity_table(m).iter().all(|v| v.abs() <= bound));
            for u in 0..7 {
                assert!(l.slice(a.user(u), m).iter().all(|v| v.abs() <= bound));
            }
        }
    }

    #[test]
    fn init_mean_within_three_standard_errors() {
        let l = build_layout(&[32]).unwrap();
        let p = init_params(&l, 1000, 0, 32, 3);
        let t = p.entity_table(0);
        assert!(t.len() >= 10_000);
        let n = t.len() as f64;
        let mean = t.iter().sum::<f64>() / n;
        let bound = (6.0f64 / 64.0).sqrt();
        let se = bound / 3f64.sqrt() / n.sqrt();
        assert!(mean.abs() < 3.0 * se, "mean {mean} se {se}");
    }

    proptest! {
        #[test]
        fn schedule_is_monotone_and_bounded(a in 0usize..20_000, b in 0usize..20_000,
                                             lo in 1usize..32, span in 0usize..64, c in 1usize..10_000) {
            let s = DimensionSchedule::new(lo, lo + span, c).unwrap();
            let (small, large) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(s.dim_for(small) <= s.dim_for(large));
            prop_assert!(s.dim_for(a) >= s.d_min && s.dim_for(a) <= s.d_max);
        }

        #[test]
        fn slices_partition_the_vector(dims in proptest::collection::vec(1usize..6, 1..8)) {
            let l = build_layout(&dims).unwrap();
            let v: Vec<f64> = (0..l.total()).map(|x| x as f64).collect();
            let joined: Vec<f64> = (0..dims.len() as u32).flat_map(|m| l.slice(&v, m).to_vec()).collect();
            prop_assert_eq!(joined, v);
            prop_assert_eq!(l.offsets()[0], 0);
            for m in 1..dims.len() {
                prop_assert_eq!(l.offsets()[m], l.offsets()[m - 1] + dims[m - 1]);
            }
        }
    }
}
