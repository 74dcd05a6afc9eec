//! Mini-batch training with early stopping on Recall@K.
//!
//! Each epoch draws a fresh node-dropout view of the graph, refreshes the item
//! block means on that view, runs `ceil(|O+| / batch_size)` sampled batches
//! through loss, gradient and Adam, then evaluates on the unmasked graph.
//! Every epoch's randomness comes from its own ChaCha stream, so a resumed run
//! continues exactly where an uninterrupted run would be.

pub mod adam;
pub mod config;
pub mod dropout;
pub mod loss;
pub mod sampler;

use std::fmt::Write as _;
use std::time::Instant;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use adam::{adam_step, AdamState};
pub use config::{L2Scope, Preset, TrainConfig};
pub use dropout::node_dropout;
pub use loss::{bpr_loss, gradients, BatchLoss, LossContext};
pub use sampler::{sample_batch, PairSampler, TrainTriple};

use crate::embedding::{init_params, AttributeLayout, ParameterStore};
use crate::error::{Error, Result};
use crate::eval::{evaluate, RankingResult};
use crate::kg::{InteractionSet, ItemId, KnowledgeGraph, UserId};
use crate::model::Model;

const VALIDATION_STREAM: u64 = u64::MAX;

pub fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub recall: f64,
    pub ndcg: f64,
    pub seconds: f64,
}

impl EpochRecord {
    pub fn tsv_header(k: usize) -> String {
        format!("epoch\tloss\trecall@{k}\tndcg@{k}\tseconds")
    }

    pub fn tsv(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{:.3}",
            self.epoch, self.mean_loss, self.recall, self.ndcg, self.seconds
        )
    }

    pub fn text(&self, k: usize) -> String {
        format!(
            "epoch {:>4}  loss {:.6}  recall@{k} {:.4}  ndcg@{k} {:.4}  ({:.1}s)",
            self.epoch, self.mean_loss, self.recall, self.ndcg, self.seconds
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestCheckpoint {
    pub epoch: usize,
    pub recall: f64,
    pub params: ParameterStore,
}

/// Everything needed to continue training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: ParameterStore,
    pub adam: AdamState,
    pub next_epoch: usize,
    pub epochs_since_best: usize,
    pub best: Option<BestCheckpoint>,
    pub log: Vec<EpochRecord>,
}

impl TrainState {
    pub fn new(params: ParameterStore) -> Self {
        TrainState {
            adam: AdamState::new(&params),
            params,
            next_epoch: 0,
            epochs_since_best: 0,
            best: None,
            log: Vec::new(),
        }
    }
}

/// Splits a fraction of each user's training items into a held-out test list.
pub fn validation_split(interactions: &InteractionSet, fraction: f64, seed: u64) -> Result<InteractionSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(VALIDATION_STREAM);
    let mut fit = Vec::with_capacity(interactions.user_count());
    let mut held = Vec::with_capacity(interactions.user_count());
    for u in 0..interactions.user_count() as UserId {
        let mut items: Vec<ItemId> = interactions.train_items(u).to_vec();
        items.shuffle(&mut rng);
        let n_held = if items.len() >= 2 {
            ((items.len() as f64 * fraction).round() as usize).min(items.len() - 1)
        } else {
            0
        };
        held.push(items.split_off(items.len() - n_held));
        fit.push(items);
    }
    InteractionSet::from_lists(fit, held, interactions.item_count())
}

pub struct Trainer<'a> {
    config: TrainConfig,
    model: Model<'a>,
    fit: InteractionSet,
    eval: InteractionSet,
    sampler: PairSampler,
}

impl<'a> Trainer<'a> {
    pub fn new(
        config: &TrainConfig,
        graph: &'a KnowledgeGraph,
        layout: &'a AttributeLayout,
        interactions: &InteractionSet,
    ) -> Result<Self> {
        config.validate()?;
        if interactions.item_count() > graph.entity_count() {
            return Err(Error::Data(format!(
                "{} items but only {} entities; items must be a prefix of the entity ids",
                interactions.item_count(),
                graph.entity_count()
            )));
        }
        if interactions.item_count() == 0 || interactions.train_count() == 0 {
            return Err(Error::Data("no training interactions".into()));
        }
        let model = Model::new(graph, layout, config.model_spec())?;
        let (fit, eval) = if config.validation_fraction > 0.0 {
            let split = validation_split(interactions, config.validation_fraction, config.seed)?;
            (split.clone(), split)
        } else {
            (interactions.clone(), interactions.clone())
        };
        let sampler = PairSampler::new(&fit);
        Ok(Trainer {
            config: config.clone(),
            model,
            fit,
            eval,
            sampler,
        })
    }

    pub fn model(&self) -> &Model<'a> {
        &self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Interactions the model is fitted on.
    pub fn fit_interactions(&self) -> &InteractionSet {
        &self.fit
    }

    pub fn init_state(&self) -> TrainState {
        let params = init_params(
            self.model.layout,
            self.model.graph.entity_count(),
            self.fit.user_count(),
            self.model.rep_width(),
            self.config.seed,
        );
        TrainState::new(params)
    }

    pub fn finished(&self, state: &TrainState) -> bool {
        state.next_epoch >= self.config.max_epochs
            || (state.best.is_some() && state.epochs_since_best >= self.config.patience)
    }

    pub fn evaluate(&self, params: &ParameterStore, stamp: u64) -> RankingResult {
        let snapshot = self.model.snapshot(params, self.fit.item_count(), stamp);
        evaluate(&self.model, &snapshot, params, &self.eval, self.config.k)
    }

    /// One epoch of updates followed by evaluation and early-stopping bookkeeping.
    pub fn run_epoch(&self, state: &mut TrainState) -> Result<EpochRecord> {
        self.model.check_params(&state.params)?;
        let start = Instant::now();
        let epoch = state.next_epoch;
        let cfg = &self.config;
        let mut rng = epoch_rng(cfg.seed, epoch);

        let masked = node_dropout(self.model.graph, cfg.node_dropout, &mut rng);
        let train_model = self.model.with_graph(&masked);
        let means = train_model
            .snapshot(&state.params, self.fit.item_count(), epoch as u64)
            .means;

        let batches = self.sampler.len().div_ceil(cfg.batch_size);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for _ in 0..batches {
            let batch = self.sampler.sample(&self.fit, cfg.batch_size, &mut rng);
            if batch.is_empty() {
                continue;
            }
            let ctx = LossContext {
                model: &train_model,
                params: &state.params,
                interactions: &self.fit,
                means: &means,
                l2: cfg.l2,
                l2_scope: cfg.l2_scope,
            };
            let (loss, grads) = gradients(&batch, &ctx);
            if !loss.total().is_finite() {
                return Err(Error::Numeric(format!("non-finite loss at epoch {epoch}")));
            }
            adam_step(&mut state.params, &grads, &mut state.adam, cfg.learning_rate)?;
            loss_sum += loss.total();
            seen += batch.len();
        }
        if !state.params.is_finite() {
            return Err(Error::Numeric(format!("parameters became non-finite at epoch {epoch}")));
        }

        let result = self.evaluate(&state.params, epoch as u64);
        let record = EpochRecord {
            epoch,
            mean_loss: loss_sum / seen.max(1) as f64,
            recall: result.recall,
            ndcg: result.ndcg,
            seconds: start.elapsed().as_secs_f64(),
        };
        let improved = state.best.as_ref().is_none_or(|b| record.recall > b.recall);
        if improved {
            state.best = Some(BestCheckpoint {
                epoch,
                recall: record.recall,
                params: state.params.clone(),
            });
            state.epochs_since_best = 0;
        } else {
            state.epochs_since_best += 1;
        }
        state.next_epoch += 1;
        state.log.push(record.clone());
        info!("{}", record.text(cfg.k));
        Ok(record)
    }

    /// Runs epochs until early stopping or `max_epochs`, calling `on_epoch`
    /// after each.
    pub fn run(
        &self,
        state: &mut TrainState,
        mut on_epoch: impl FnMut(&EpochRecord, &TrainState) -> Result<()>,
    ) -> Result<()> {
        while !self.finished(state) {
            let record = self.run_epoch(state)?;
            on_epoch(&record, state)?;
        }
        Ok(())
    }
}

/// Renders an epoch log as TSV with header.
pub fn epochs_tsv(log: &[EpochRecord], k: usize) -> String {
    let mut s = EpochRecord::tsv_header(k);
    s.push('\n');
    for r in log {
        writeln!(s, "{}", r.tsv()).unwrap();
    }
    s
}
