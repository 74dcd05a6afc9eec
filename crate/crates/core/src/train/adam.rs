//! Row-sparse Adam.
//!
//! Moments and step counts live per parameter row and are allocated the first
//! time a row receives a gradient. Rows absent from a step's gradients are left
//! untouched, moments included.

use crate::embedding::ParameterStore;
use crate::error::{Error, Result};
use crate::grad::{SparseGrads, SparseRows};
use crate::kg::RelationId;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Per-row state laid out as `[m (w) | v (w) | step]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    entity: Vec<SparseRows>,
    user: SparseRows,
}

impl AdamState {
    pub fn new(params: &ParameterStore) -> Self {
        AdamState {
            entity: params.dims().iter().map(|&d| SparseRows::new(2 * d + 1)).collect(),
            user: SparseRows::new(2 * params.user_width() + 1),
        }
    }

    pub fn entity_table(&self, relation: RelationId) -> &SparseRows {
        &self.entity[relation as usize]
    }

    pub fn user_table(&self) -> &SparseRows {
        &self.user
    }

    pub(crate) fn tables_mut(&mut self) -> impl Iterator<Item = &mut SparseRows> + '_ {
        self.entity.iter_mut().chain(std::iter::once(&mut self.user))
    }

    pub fn tables(&self) -> impl Iterator<Item = &SparseRows> + '_ {
        self.entity.iter().chain(std::iter::once(&self.user))
    }

    /// `(m, v, step)` of one row, if allocated.
    pub fn moments(&self, table: &SparseRows, row: u32) -> Option<(Vec<f64>, Vec<f64>, u64)> {
        let w = (table.width() - 1) / 2;
        table
            .get(row)
            .map(|s| (s[..w].to_vec(), s[w..2 * w].to_vec(), s[2 * w] as u64))
    }
}

fn update_row(param: &mut [f64], grad: &[f64], state: &mut [f64], lr: f64) {
    let w = param.len();
    let (m, rest) = state.split_at_mut(w);
    let (v, step) = rest.split_at_mut(w);
    step[0] += 1.0;
    let t = step[0] as i32;
    let bias1 = 1.0 - BETA1.powi(t);
    let bias2 = 1.0 - BETA2.powi(t);
    for k in 0..w {
        let g = grad[k];
        m[k] = BETA1 * m[k] + (1.0 - BETA1) * g;
        v[k] = BETA2 * v[k] + (1.0 - BETA2) * g * g;
        let m_hat = m[k] / bias1;
        let v_hat = v[k] / bias2;
        param[k] -= lr * m_hat / (v_hat.sqrt() + EPSILON);
    }
}

/// Applies one Adam update to every row present in `grads`. A non-finite
/// gradient aborts the step before anything is modified.
pub fn adam_step(params: &mut ParameterStore, grads: &SparseGrads, state: &mut AdamState, lr: f64) -> Result<()> {
    if !grads.all_finite() {
        return Err(Error::Numeric("non-finite gradient; step aborted".into()));
    }
    for m in 0..params.relation_count() {
        let relation = m as RelationId;
        for (row, g) in grads.entity(relation).iter() {
            let s = state.entity[m].row_mut(row);
            update_row(params.entity_mut(relation, row), g, s, lr);
        }
    }
    for (row, g) in grads.user().iter() {
        let s = state.user.row_mut(row);
        update_row(params.user_mut(row), g, s, lr);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(x: f64) -> ParameterStore {
        let mut p = ParameterStore::zeros(&[1], 1, 0, 1);
        p.entity_mut(0, 0)[0] = x;
        p
    }

    #[test]
    fn zero_gradient_leaves_fresh_parameters_unchanged() {
        let mut p = scalar_store(1.5);
        let mut state = AdamState::new(&p);
        let mut g = SparseGrads::for_store(&p);
        g.entity_row_mut(0, 0);
        adam_step(&mut p, &g, &mut state, 0.1).unwrap();
        assert_eq!(p.entity(0, 0), &[1.5]);
        let (m, v, t) = state.moments(state.entity_table(0), 0).unwrap();
        assert_eq!((m[0], v[0], t), (0.0, 0.0, 1));
    }

    #[test]
    fn zero_gradient_decays_moments() {
        let mut p = scalar_store(1.0);
        let mut state = AdamState::new(&p);
        let mut g = SparseGrads::for_store(&p);
        g.entity_row_mut(0, 0)[0] = 2.0;
        adam_step(&mut p, &g, &mut state, 0.1).unwrap();
        let (m1, v1, _) = state.moments(state.entity_table(0), 0).unwrap();
        g.entity_row_mut(0, 0)[0] = 0.0;
        adam_step(&mut p, &g, &mut state, 0.1).unwrap();
        let (m2, v2, t) = state.moments(state.entity_table(0), 0).unwrap();
        assert_eq!(m2[0], BETA1 * m1[0]);
        assert_eq!(v2[0], BETA2 * v1[0]);
        assert_eq!(t, 2);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = scalar_store(0.0);
        let mut state = AdamState::new(&p);
        let mut g = SparseGrads::for_store(&p);
        g.entity_row_mut(0, 0)[0] = 3.0;
        adam_step(&mut p, &g, &mut state, 0.01).unwrap();
        assert!((p.entity(0, 0)[0] + 0.01).abs() < 1e-9);
    }

    #[test]
    fn scalar_quadratic_converges() {
        // f(x) = (x - 3)^2
        let mut p = scalar_store(-2.0);
        let mut state = AdamState::new(&p);
        for _ in 0..2000 {
            let x = p.entity(0, 0)[0];
            let mut g = SparseGrads::for_store(&p);
            g.entity_row_mut(0, 0)[0] = 2.0 * (x - 3.0);
            adam_step(&mut p, &g, &mut state, 1e-2).unwrap();
        }
        let x = p.entity(0, 0)[0];
        assert!((x - 3.0).powi(2) < 1e-6, "x = {x}");
    }

    #[test]
    fn untouched_rows_have_no_state() {
        let mut p = ParameterStore::zeros(&[2], 3, 1, 2);
        let mut state = AdamState::new(&p);
        let mut g = SparseGrads::for_store(&p);
        g.entity_row_mut(0, 1).copy_from_slice(&[1.0, 1.0]);
        adam_step(&mut p, &g, &mut state, 0.1).unwrap();
        assert!(state.entity_table(0).get(0).is_none());
        assert!(state.entity_table(0).get(1).is_some());
        assert!(state.user_table().is_empty());
        assert_eq!(p.entity(0, 0), &[0.0, 0.0]);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut p = scalar_store(1.0);
        let mut state = AdamState::new(&p);
        let mut g = SparseGrads::for_store(&p);
        g.entity_row_mut(0, 0)[0] = f64::NAN;
        assert!(matches!(adam_step(&mut p, &g, &mut state, 0.1), Err(Error::Numeric(_))));
        assert_eq!(p.entity(0, 0), &[1.0]);
        assert!(state.entity_table(0).is_empty());
    }
}
