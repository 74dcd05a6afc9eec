//! Row-sparse accumulators keyed by `(table, row)`.

use std::collections::HashMap;

use crate::embedding::ParameterStore;
use crate::kg::{EntityId, RelationId, UserId};

/// Fixed-width rows allocated on first touch. Iteration follows insertion
/// order, so traversal is deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRows {
    width: usize,
    index: HashMap<u32, usize>,
    rows: Vec<u32>,
    data: Vec<f64>,
}

impl SparseRows {
    pub fn new(width: usize) -> Self {
        SparseRows {
            width,
            index: HashMap::new(),
            rows: Vec::new(),
            data: Vec::new(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn contains(&self, row: u32) -> bool {
        self.index.contains_key(&row)
    }

    pub fn get(&self, row: u32) -> Option<&[f64]> {
        self.index
            .get(&row)
            .map(|&s| &self.data[s * self.width..(s + 1) * self.width])
    }

    /// The row, zero-initialized if absent.
    pub fn row_mut(&mut self, row: u32) -> &mut [f64] {
        let slot = match self.index.get(&row) {
            Some(&s) => s,
            None => {
                let s = self.rows.len();
                self.index.insert(row, s);
                self.rows.push(row);
                self.data.resize(self.data.len() + self.width, 0.0);
                s
            }
        };
        &mut self.data[slot * self.width..(slot + 1) * self.width]
    }

    pub fn touch(&mut self, row: u32) {
        self.row_mut(row);
    }

    pub fn rows(&self) -> &[u32] {
        &self.rows
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &[f64])> + '_ {
        self.rows
            .iter()
            .zip(self.data.chunks_exact(self.width.max(1)))
            .map(|(&r, v)| (r, v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (u32, &mut [f64])> + '_ {
        let w = self.width.max(1);
        self.rows.iter().copied().zip(self.data.chunks_exact_mut(w))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Gradient accumulators for one batch, shaped like a [`ParameterStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct SparseGrads {
    entity: Vec<SparseRows>,
    user: SparseRows,
}

impl SparseGrads {
    pub fn for_store(params: &ParameterStore) -> Self {
        SparseGrads {
            entity: params.dims().iter().map(|&d| SparseRows::new(d)).collect(),
            user: SparseRows::new(params.user_width()),
        }
    }

    pub fn entity(&self, relation: RelationId) -> &SparseRows {
        &self.entity[relation as usize]
    }

    pub fn entity_mut(&mut self, relation: RelationId) -> &mut SparseRows {
        &mut self.entity[relation as usize]
    }

    pub fn entity_row_mut(&mut self, relation: RelationId, entity: EntityId) -> &mut [f64] {
        self.entity[relation as usize].row_mut(entity)
    }

    pub fn user(&self) -> &SparseRows {
        &self.user
    }

    pub fn user_row_mut(&mut self, user: UserId) -> &mut [f64] {
        self.user.row_mut(user)
    }

    pub fn tables(&self) -> impl Iterator<Item = &SparseRows> + '_ {
        self.entity.iter().chain(std::iter::once(&self.user))
    }

    pub fn all_finite(&self) -> bool {
        self.tables().all(SparseRows::all_finite)
    }

    /// Number of touched rows over all tables.
    pub fn row_count(&self) -> usize {
        self.tables().map(SparseRows::len).sum()
    }

    /// Adds `2 * lambda * theta` to every touched row and returns
    /// `lambda * ||theta||^2` over those rows.
    pub fn add_l2(&mut self, params: &ParameterStore, lambda: f64) -> f64 {
        let mut penalty = 0.0;
        for (m, table) in self.entity.iter_mut().enumerate() {
            for (row, g) in table.iter_mut() {
                let p = params.entity(m as RelationId, row);
                penalty += l2_row(p, g, lambda);
            }
        }
        for (row, g) in self.user.iter_mut() {
            penalty += l2_row(params.user(row), g, lambda);
        }
        penalty
    }

    /// Touches every row of every table.
    pub fn touch_all(&mut self, params: &ParameterStore) {
        for table in &mut self.entity {
            for j in 0..params.entity_count() as u32 {
                table.touch(j);
            }
        }
        for u in 0..params.user_count() as u32 {
            self.user.touch(u);
        }
    }
}

fn l2_row(p: &[f64], g: &mut [f64], lambda: f64) -> f64 {
    let mut sq = 0.0;
    for (gv, &pv) in g.iter_mut().zip(p) {
        sq += pv * pv;
        *gv += 2.0 * lambda * pv;
    }
    lambda * sq
}
