//! Pairwise ranking loss and its exact gradient.
//!
//! The forward pass recomputes, from current parameters, the layer-summed
//! representations of every item a batch needs: sampled positives and
//! negatives plus the histories of the batch's users. The population block
//! means are a snapshot and enter as constants.

use rayon::prelude::*;

use crate::attention::ItemBlockMeans;
use crate::attention::{dot, UserForward};
use crate::embedding::ParameterStore;
use crate::grad::{SparseGrads, SparseRows};
use crate::kg::{EntityId, InteractionSet, UserId};
use crate::model::Model;
use crate::propagation::ReceptiveField;

use super::config::L2Scope;
use super::sampler::TrainTriple;

/// Everything a batch loss depends on besides the batch.
#[derive(Clone, Copy)]
pub struct LossContext<'a> {
    pub model: &'a Model<'a>,
    pub params: &'a ParameterStore,
    pub interactions: &'a InteractionSet,
    pub means: &'a ItemBlockMeans,
    pub l2: f64,
    pub l2_scope: L2Scope,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchLoss {
    /// `sum -ln sigmoid(y_pos - y_neg)`.
    pub pairwise: f64,
    /// `lambda * ||theta||^2` over the regularized rows.
    pub penalty: f64,
}

impl BatchLoss {
    pub fn total(&self) -> f64 {
        self.pairwise + self.penalty
    }
}

/// `-ln sigmoid(x)` without overflow.
pub fn neg_log_sigmoid(x: f64) -> f64 {
    // softplus(-x)
    (-x).max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `sigmoid(-x)`, the magnitude of `d/dx -ln sigmoid(x)`.
fn sigmoid_neg(x: f64) -> f64 {
    if x >= 0.0 {
        let e = (-x).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + x.exp())
    }
}

pub fn bpr_loss(batch: &[TrainTriple], ctx: &LossContext) -> BatchLoss {
    run(batch, ctx, false).0
}

/// Loss and gradient with respect to every parameter row it touches.
pub fn gradients(batch: &[TrainTriple], ctx: &LossContext) -> (BatchLoss, SparseGrads) {
    let (loss, grads) = run(batch, ctx, true);
    (loss, grads)
}

fn run(batch: &[TrainTriple], ctx: &LossContext, backward: bool) -> (BatchLoss, SparseGrads) {
    let model = ctx.model;
    let layout = model.layout;
    let spec = model.spec;
    let width = model.rep_width();

    let mut users: Vec<UserId> = batch.iter().map(|t| t.user).collect();
    users.sort_unstable();
    users.dedup();
    let user_slot = |u: UserId| users.binary_search(&u).expect("user in batch");

    let mut targets: Vec<EntityId> = Vec::new();
    for t in batch {
        targets.push(t.pos);
        targets.push(t.neg);
    }
    for &u in &users {
        targets.extend_from_slice(ctx.interactions.train_items(u));
    }
    targets.sort_unstable();
    targets.dedup();

    let field = ReceptiveField::build(model.graph, &targets, spec.depth);
    let fwd = field.forward(ctx.params, model.graph, layout, spec.combine);
    let mut stars = SparseRows::new(width);
    for &t in &targets {
        stars.row_mut(t).copy_from_slice(&field.star(&fwd, t));
    }

    let forwards: Vec<UserForward> = users
        .par_iter()
        .map(|&u| {
            let history = history_from(&stars, ctx.interactions.train_items(u), width);
            let e_u = ctx.params.user(u);
            if spec.attention {
                UserForward::attentive(e_u, history, ctx.means.mean(), layout, spec.temperature)
            } else {
                UserForward::plain(e_u, history)
            }
        })
        .collect();

    let mut grads = SparseGrads::for_store(ctx.params);
    match ctx.l2_scope {
        L2Scope::Batch => {
            for &u in &users {
                grads.user_row_mut(u);
            }
            field.touch_parameters(model.graph, &mut grads);
        }
        L2Scope::Full => grads.touch_all(ctx.params),
    }

    let mut pairwise = 0.0;
    let mut d_reps = vec![0.0; users.len() * width];
    let mut d_stars = SparseRows::new(width);
    for t in batch {
        let s = user_slot(t.user);
        let rep = forwards[s].rep();
        let pos = stars.get(t.pos).unwrap();
        let neg = stars.get(t.neg).unwrap();
        let diff = dot(rep, pos) - dot(rep, neg);
        pairwise += neg_log_sigmoid(diff);
        if backward {
            let c = -sigmoid_neg(diff);
            let d_rep = &mut d_reps[s * width..(s + 1) * width];
            for k in 0..width {
                d_rep[k] += c * (pos[k] - neg[k]);
            }
            for (d, r) in d_stars.row_mut(t.pos).iter_mut().zip(rep) {
                *d += c * r;
            }
            for (d, r) in d_stars.row_mut(t.neg).iter_mut().zip(rep) {
                *d -= c * r;
            }
        }
    }

    if backward {
        for (s, &u) in users.iter().enumerate() {
            let (d_user, d_hist) = forwards[s].backward(
                layout,
                ctx.means.mean(),
                spec.temperature,
                &d_reps[s * width..(s + 1) * width],
            );
            for (g, d) in grads.user_row_mut(u).iter_mut().zip(&d_user) {
                *g += d;
            }
            if let Some(d_hist) = d_hist {
                let history = ctx.interactions.train_items(u);
                let n = history.len() as f64;
                for &i in history {
                    for (g, d) in d_stars.row_mut(i).iter_mut().zip(&d_hist) {
                        *g += d / n;
                    }
                }
            }
        }
        field.backward(model.graph, layout, spec.combine, &d_stars, &mut grads);
    }

    let penalty = if ctx.l2 > 0.0 {
        grads.add_l2(ctx.params, ctx.l2)
    } else {
        0.0
    };
    (BatchLoss { pairwise, penalty }, grads)
}

fn history_from(stars: &SparseRows, history: &[u32], width: usize) -> Option<Vec<f64>> {
    if history.is_empty() {
        return None;
    }
    let mut mean = vec![0.0; width];
    for &i in history {
        for (m, v) in mean.iter_mut().zip(stars.get(i).unwrap()) {
            *m += v;
        }
    }
    let n = history.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    Some(mean)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stable_log_sigmoid() {
        assert!((neg_log_sigmoid(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(neg_log_sigmoid(800.0) < 1e-300);
        assert!((neg_log_sigmoid(-800.0) - 800.0).abs() < 1e-9);
        assert!(neg_log_sigmoid(-800.0).is_finite());
        assert!(sigmoid_neg(800.0) < 1e-300);
        assert_eq!(sigmoid_neg(-800.0), 1.0);
    }
}
