//! Independent reference implementations shared by integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use kgrec::attention::item_block_means;
use kgrec::embedding::{init_params, AttributeLayout, DimensionSchedule, ParameterStore};
use kgrec::kg::{InteractionSet, ItemId, KnowledgeGraph, Triple};
use kgrec::model::{model_layout, Model, ModelSpec, Variant};
use kgrec::propagation::{forward_layers, readout, CombineMode};
use kgrec::train::{gradients, L2Scope, LossContext, TrainTriple};

/// Random canonical triples without duplicates.
pub fn random_triples<R: Rng>(rng: &mut R, entities: usize, relations: usize, count: usize) -> Vec<Triple> {
    let mut set = BTreeSet::new();
    for _ in 0..count {
        set.insert(Triple::new(
            rng.gen_range(0..entities as u32),
            rng.gen_range(0..relations as u32),
            rng.gen_range(0..entities as u32),
        ));
    }
    set.into_iter().collect()
}

/// Dense row-normalized adjacency per directed relation: `a[r][t][h] =
/// 1/|N_t^r|` for every head `h` of `(h, r, t)`, inverses added as `r + R`.
pub fn dense_adjacency(triples: &[Triple], entities: usize, relations: usize) -> Vec<Vec<Vec<f64>>> {
    let mut edges = BTreeSet::new();
    for t in triples {
        edges.insert((t.relation as usize, t.tail as usize, t.head as usize));
        edges.insert((t.relation as usize + relations, t.head as usize, t.tail as usize));
    }
    let mut a = vec![vec![vec![0.0; entities]; entities]; 2 * relations];
    for &(r, t, h) in &edges {
        a[r][t][h] = 1.0;
    }
    for m in a.iter_mut() {
        for row in m.iter_mut() {
            let n: f64 = row.iter().sum();
            if n > 0.0 {
                row.iter_mut().for_each(|x| *x /= n);
            }
        }
    }
    a
}

fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let cols = b.first().map_or(0, Vec::len);
    a.iter()
        .map(|row| {
            (0..cols)
                .map(|j| row.iter().zip(b).map(|(x, brow)| x * brow[j]).sum())
                .collect()
        })
        .collect()
}

/// Layer-wise block-concatenated representations by dense matrix products.
pub fn dense_layers(
    adjacency: &[Vec<Vec<f64>>],
    params: &ParameterStore,
    layout: &AttributeLayout,
    depth: usize,
) -> Vec<Vec<Vec<f64>>> {
    let n = params.entity_count();
    let width = layout.total();
    let mut layer0 = vec![vec![0.0; width]; n];
    for (r, a) in adjacency.iter().enumerate() {
        let d = layout.dims()[r];
        let table: Vec<Vec<f64>> = (0..n as u32).map(|e| params.entity(r as u32, e).to_vec()).collect();
        let pooled = matmul(a, &table);
        let off = layout.offsets()[r];
        for (row, p) in layer0.iter_mut().zip(pooled) {
            row[off..off + d].copy_from_slice(&p);
        }
    }
    let mut layers = vec![layer0];
    for _ in 0..depth {
        let prev = layers.last().unwrap();
        let mut next = vec![vec![0.0; width]; n];
        for a in adjacency {
            for (row, p) in next.iter_mut().zip(matmul(a, prev)) {
                for (x, y) in row.iter_mut().zip(p) {
                    *x += y;
                }
            }
        }
        layers.push(next);
    }
    layers
}

/// Full sort by (score desc, id asc), training items removed, first `k`.
pub fn brute_top_k(scores: &[f64], train: &[ItemId], k: usize) -> Vec<ItemId> {
    let mut ids: Vec<ItemId> = (0..scores.len() as ItemId).filter(|i| !train.contains(i)).collect();
    ids.sort_by(|&a, &b| {
        scores[b as usize]
            .partial_cmp(&scores[a as usize])
            .unwrap()
            .then(a.cmp(&b))
    });
    ids.truncate(k);
    ids
}

pub fn brute_recall(top: &[ItemId], test: &[ItemId]) -> f64 {
    let hits = top.iter().filter(|i| test.contains(i)).count();
    hits as f64 / test.len() as f64
}

pub fn brute_ndcg(top: &[ItemId], test: &[ItemId], k: usize) -> f64 {
    let mut dcg = 0.0;
    for (pos, i) in top.iter().enumerate() {
        if test.contains(i) {
            dcg += 1.0 / ((pos + 2) as f64).log2();
        }
    }
    let ideal: f64 = (0..test.len().min(k)).map(|pos| 1.0 / ((pos + 2) as f64).log2()).sum();
    dcg / ideal
}

/// A small attentive model instance for gradient checks.
pub struct Instance {
    pub graph: KnowledgeGraph,
    pub layout: AttributeLayout,
    pub interactions: InteractionSet,
    pub params: ParameterStore,
    pub batch: Vec<TrainTriple>,
    pub spec: ModelSpec,
}

impl Instance {
    /// `entities` total, the first `items` of which are items; `relations`
    /// canonical relations; `layers` counts the attribute modeling layer.
    pub fn new<R: Rng>(
        rng: &mut R,
        entities: usize,
        items: usize,
        relations: usize,
        layers: usize,
        variant: Variant,
    ) -> Self {
        // every item gets at least one attribute so blocks are populated
        let mut triples = random_triples(rng, entities, relations, entities * 2);
        for i in 0..items as u32 {
            triples.push(Triple::new(
                i,
                rng.gen_range(0..relations as u32),
                rng.gen_range(items as u32..entities as u32),
            ));
        }
        triples.sort();
        triples.dedup();
        let graph = KnowledgeGraph::from_triples(&triples, entities, relations).unwrap();
        let schedule = DimensionSchedule {
            d_min: 2,
            d_max: 5,
            c: 12,
        };
        let layout = model_layout(&graph, &schedule, variant.combine()).unwrap();
        let users = 4;
        let mut all: Vec<ItemId> = (0..items as ItemId).collect();
        let train: Vec<Vec<ItemId>> = (0..users)
            .map(|_| {
                all.shuffle(rng);
                all[..3].to_vec()
            })
            .collect();
        let interactions = InteractionSet::from_lists(train, vec![], items).unwrap();
        let width = variant.combine().rep_width(&layout);
        let params = init_params(&layout, entities, users, width, rng.gen());
        let mut batch = Vec::new();
        for u in 0..users as u32 {
            for &pos in interactions.train_items(u) {
                let neg = loop {
                    let j = rng.gen_range(0..items as u32);
                    if !interactions.is_train(u, j) {
                        break j;
                    }
                };
                batch.push(TrainTriple { user: u, pos, neg });
            }
        }
        Instance {
            graph,
            layout,
            interactions,
            params,
            batch,
            spec: ModelSpec::new(variant, layers - 1, 0.5),
        }
    }

    pub fn model(&self) -> Model<'_> {
        Model::new(&self.graph, &self.layout, self.spec).unwrap()
    }

    /// Loss at `params` with the block-mean snapshot taken at `self.params`.
    pub fn loss_at(&self, params: &ParameterStore, l2: f64) -> f64 {
        let model = self.model();
        let means = item_block_means(&model.item_reps(&self.params, self.interactions.item_count()), 0);
        let ctx = LossContext {
            model: &model,
            params,
            interactions: &self.interactions,
            means: &means,
            l2,
            l2_scope: L2Scope::Batch,
        };
        kgrec::train::bpr_loss(&self.batch, &ctx).total()
    }
}

/// Random graph with 1 to 4 canonical relations and random block widths.
pub fn random_instance<R: Rng>(
    rng: &mut R,
    max_entities: usize,
) -> (Vec<Triple>, KnowledgeGraph, AttributeLayout, usize) {
    let entities = rng.gen_range(2..=max_entities);
    let relations = rng.gen_range(1..=4);
    let count = rng.gen_range(0..=entities * 3);
    let triples = random_triples(rng, entities, relations, count);
    let graph = KnowledgeGraph::from_triples(&triples, entities, relations).unwrap();
    let dims = (0..2 * relations).map(|_| rng.gen_range(1..=4)).collect();
    let layout = AttributeLayout::new(dims).unwrap();
    (triples, graph, layout, relations)
}

/// Largest absolute difference between sparse layers plus readout and the
/// dense oracle over `graphs` random graphs.
pub fn dense_oracle_error(seed: u64, graphs: usize, max_entities: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..graphs {
        let (triples, graph, layout, relations) = random_instance(&mut rng, max_entities);
        let n = graph.entity_count();
        let depth = rng.gen_range(0..=3);
        let params = init_params(&layout, n, 0, 0, rng.gen());
        let adjacency = dense_adjacency(&triples, n, relations);
        let dense = dense_layers(&adjacency, &params, &layout, depth);
        let sparse = forward_layers(&params, &graph, &layout, CombineMode::Concat, depth);
        assert_eq!(sparse.len(), dense.len());
        for (s, d) in sparse.iter().zip(&dense) {
            for (e, drow) in d.iter().enumerate() {
                for (a, b) in s.row(e as u32).iter().zip(drow) {
                    worst = worst.max((a - b).abs());
                }
            }
        }
        let items = rng.gen_range(1..=n);
        let summed = readout(&sparse, items);
        for i in 0..items {
            for j in 0..layout.total() {
                let expected: f64 = dense.iter().map(|l| l[i][j]).sum();
                worst = worst.max((summed.item(i as u32)[j] - expected).abs());
            }
        }
    }
    worst
}

pub const FD_STEP: f64 = 1e-5;
pub const FD_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug)]
pub enum Coord {
    Entity(u32, u32, usize),
    User(u32, usize),
}

fn value_mut(params: &mut ParameterStore, c: Coord) -> &mut f64 {
    match c {
        Coord::Entity(r, e, j) => &mut params.entity_mut(r, e)[j],
        Coord::User(u, j) => &mut params.user_mut(u)[j],
    }
}

pub struct GradientReport {
    pub checked: usize,
    pub nonzero: usize,
    pub worst: f64,
    pub worst_at: Option<(Coord, f64, f64)>,
}

/// Compares analytic gradients against central differences on up to
/// `samples` coordinates drawn from rows the batch touches.
pub fn gradient_check<R: Rng>(inst: &Instance, l2: f64, samples: usize, rng: &mut R) -> GradientReport {
    let model = inst.model();
    let means = item_block_means(&model.item_reps(&inst.params, inst.interactions.item_count()), 0);
    let ctx = LossContext {
        model: &model,
        params: &inst.params,
        interactions: &inst.interactions,
        means: &means,
        l2,
        l2_scope: L2Scope::Batch,
    };
    let (loss, grads) = gradients(&inst.batch, &ctx);
    assert!((loss.total() - inst.loss_at(&inst.params, l2)).abs() < 1e-12);

    let mut coords = Vec::new();
    for r in 0..inst.layout.relation_count() as u32 {
        for (e, row) in grads.entity(r).iter() {
            coords.extend(row.iter().enumerate().map(|(j, &g)| (Coord::Entity(r, e, j), g)));
        }
    }
    for (u, row) in grads.user().iter() {
        coords.extend(row.iter().enumerate().map(|(j, &g)| (Coord::User(u, j), g)));
    }
    coords.shuffle(rng);
    coords.truncate(samples);

    let mut report = GradientReport {
        checked: coords.len(),
        nonzero: 0,
        worst: 0.0,
        worst_at: None,
    };
    for &(c, analytic) in &coords {
        let mut plus = inst.params.clone();
        *value_mut(&mut plus, c) += FD_STEP;
        let mut minus = inst.params.clone();
        *value_mut(&mut minus, c) -= FD_STEP;
        let numeric = (inst.loss_at(&plus, l2) - inst.loss_at(&minus, l2)) / (2.0 * FD_STEP);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_FLOOR);
        if rel > report.worst {
            report.worst = rel;
            report.worst_at = Some((c, analytic, numeric));
        }
        if numeric.abs() > FD_FLOOR {
            report.nonzero += 1;
        }
    }
    report
}
