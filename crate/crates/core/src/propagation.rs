//! Attribute modeling and propagation layers.
//!
//! Layer 0 pools, per relation, the neighbors' embeddings from that relation's
//! attribute space and concatenates the pooled blocks. Later layers take the
//! relation-wise mean of full neighbor representations and sum over relations.
//! Since every layer is a linear map applied to whole vectors, block `m` of
//! every representation only ever contains attribute-space-`m` embeddings.
//!
//! Two entry points share the per-row kernels: full-graph layers for
//! evaluation, and [`ReceptiveField`] which computes only the rows a training
//! batch needs and back-propagates through them.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{AttributeLayout, ParameterStore};
use crate::error::{Error, Result};
use crate::grad::{SparseGrads, SparseRows};
use crate::kg::{EntityId, KnowledgeGraph, RelationId};

/// How per-relation pooled blocks are joined at layer 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CombineMode {
    #[default]
    Concat,
    /// Elementwise mean over the attributes present at the entity.
    Mean,
    /// Elementwise sum over the attributes present at the entity.
    Sum,
}

impl CombineMode {
    /// Representation width under `layout`. Mean and sum need a uniform layout.
    pub fn rep_width(self, layout: &AttributeLayout) -> usize {
        match self {
            CombineMode::Concat => layout.total(),
            CombineMode::Mean | CombineMode::Sum => layout.dims().first().copied().unwrap_or(0),
        }
    }

    pub fn check_layout(self, layout: &AttributeLayout) -> Result<()> {
        if self != CombineMode::Concat {
            if let Some(&d) = layout.dims().first() {
                if layout.dims().iter().any(|&x| x != d) {
                    return Err(Error::Config(format!(
                        "{self:?} combination needs equal block widths, got {:?}",
                        layout.dims()
                    )));
                }
            }
        }
        Ok(())
    }
}

fn add_block(mode: CombineMode, layout: &AttributeLayout, relation: RelationId, block: &[f64], out: &mut [f64]) {
    let target = match mode {
        CombineMode::Concat => &mut out[layout.range(relation)],
        CombineMode::Mean | CombineMode::Sum => out,
    };
    for (o, b) in target.iter_mut().zip(block) {
        *o += b;
    }
}

/// Joins pooled attribute blocks. Attributes absent from `blocks` are zero in
/// concat mode and are left out of the mean.
pub fn ablation_combine(mode: CombineMode, layout: &AttributeLayout, blocks: &[(RelationId, &[f64])]) -> Vec<f64> {
    let mut out = vec![0.0; mode.rep_width(layout)];
    for &(relation, block) in blocks {
        assert_eq!(
            block.len(),
            layout.dim(relation),
            "block width mismatch for relation {relation}"
        );
        add_block(mode, layout, relation, block, &mut out);
    }
    if mode == CombineMode::Mean && !blocks.is_empty() {
        let k = blocks.len() as f64;
        out.iter_mut().for_each(|v| *v /= k);
    }
    out
}

fn attribute_row(
    params: &ParameterStore,
    graph: &KnowledgeGraph,
    layout: &AttributeLayout,
    mode: CombineMode,
    entity: EntityId,
    out: &mut [f64],
    scratch: &mut Vec<f64>,
) {
    out.fill(0.0);
    let mut present = 0usize;
    for (relation, heads) in graph.groups(entity) {
        present += 1;
        scratch.clear();
        scratch.resize(layout.dim(relation), 0.0);
        for &j in heads {
            for (s, e) in scratch.iter_mut().zip(params.entity(relation, j)) {
                *s += e;
            }
        }
        let n = heads.len() as f64;
        scratch.iter_mut().for_each(|v| *v /= n);
        add_block(mode, layout, relation, scratch, out);
    }
    if mode == CombineMode::Mean && present > 0 {
        let k = present as f64;
        out.iter_mut().for_each(|v| *v /= k);
    }
}

fn propagate_row<'p>(
    graph: &KnowledgeGraph,
    entity: EntityId,
    prev: impl Fn(EntityId) -> &'p [f64],
    out: &mut [f64],
    scratch: &mut Vec<f64>,
) {
    out.fill(0.0);
    for (_, heads) in graph.groups(entity) {
        scratch.clear();
        scratch.resize(out.len(), 0.0);
        for &j in heads {
            for (s, p) in scratch.iter_mut().zip(prev(j)) {
                *s += p;
            }
        }
        let n = heads.len() as f64;
        for (o, s) in out.iter_mut().zip(scratch.iter()) {
            *o += s / n;
        }
    }
}

/// Representations of every entity at one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerState {
    pub layer: usize,
    pub width: usize,
    pub reps: Vec<f64>,
}

impl LayerState {
    pub fn row(&self, entity: EntityId) -> &[f64] {
        let e = entity as usize;
        &self.reps[e * self.width..(e + 1) * self.width]
    }

    pub fn entity_count(&self) -> usize {
        self.reps.len().checked_div(self.width).unwrap_or(0)
    }
}

/// Layer 0 over the whole graph.
pub fn attribute_modeling(
    params: &ParameterStore,
    graph: &KnowledgeGraph,
    layout: &AttributeLayout,
    mode: CombineMode,
) -> LayerState {
    let width = mode.rep_width(layout);
    let mut reps = vec![0.0; width * graph.entity_count()];
    if width > 0 {
        reps.par_chunks_mut(width)
            .enumerate()
            .for_each_init(Vec::new, |scratch, (i, out)| {
                attribute_row(params, graph, layout, mode, i as EntityId, out, scratch)
            });
    }
    LayerState { layer: 0, width, reps }
}

/// One propagation layer over the whole graph.
pub fn propagate(prev: &LayerState, graph: &KnowledgeGraph) -> LayerState {
    let width = prev.width;
    let mut reps = vec![0.0; prev.reps.len()];
    if width > 0 {
        reps.par_chunks_mut(width)
            .enumerate()
            .for_each_init(Vec::new, |scratch, (i, out)| {
                propagate_row(graph, i as EntityId, |j| prev.row(j), out, scratch)
            });
    }
    LayerState {
        layer: prev.layer + 1,
        width,
        reps,
    }
}

/// Layers `0..=depth` over the whole graph.
pub fn forward_layers(
    params: &ParameterStore,
    graph: &KnowledgeGraph,
    layout: &AttributeLayout,
    mode: CombineMode,
    depth: usize,
) -> Vec<LayerState> {
    let mut layers = Vec::with_capacity(depth + 1);
    layers.push(attribute_modeling(params, graph, layout, mode));
    for _ in 0..depth {
        let next = propagate(layers.last().unwrap(), graph);
        layers.push(next);
    }
    layers
}

/// Layer-summed representations. Rows `0..item_count` are the items.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemRepresentation {
    width: usize,
    item_count: usize,
    entity_reps: Vec<f64>,
}

impl ItemRepresentation {
    pub fn from_rows(width: usize, item_count: usize, entity_reps: Vec<f64>) -> Self {
        assert!(width == 0 || entity_reps.len().is_multiple_of(width));
        assert!(width == 0 || item_count <= entity_reps.len() / width);
        ItemRepresentation {
            width,
            item_count,
            entity_reps,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn item_count(&self) -> usize {
        self.item_count
    }

    pub fn item(&self, item: u32) -> &[f64] {
        assert!((item as usize) < self.item_count, "item {item} outside item range");
        self.entity(item)
    }

    pub fn entity(&self, entity: EntityId) -> &[f64] {
        let e = entity as usize;
        &self.entity_reps[e * self.width..(e + 1) * self.width]
    }

    /// Item rows, `item_count x width`, row-major.
    pub fn items(&self) -> &[f64] {
        &self.entity_reps[..self.item_count * self.width]
    }
}

/// Elementwise sum of all layers.
pub fn readout(layers: &[LayerState], item_count: usize) -> ItemRepresentation {
    let first = layers.first().expect("readout needs at least layer 0");
    let mut sum = first.reps.clone();
    for layer in &layers[1..] {
        assert_eq!(layer.width, first.width, "layer widths differ");
        assert_eq!(layer.reps.len(), sum.len(), "layer sizes differ");
        for (s, v) in sum.iter_mut().zip(&layer.reps) {
            *s += v;
        }
    }
    ItemRepresentation::from_rows(first.width, item_count, sum)
}

pub fn item_representation(
    params: &ParameterStore,
    graph: &KnowledgeGraph,
    layout: &AttributeLayout,
    mode: CombineMode,
    depth: usize,
    item_count: usize,
) -> ItemRepresentation {
    readout(&forward_layers(params, graph, layout, mode, depth), item_count)
}

const ABSENT: u32 = u32::MAX;

#[derive(Debug, Clone)]
struct Frontier {
    nodes: Vec<EntityId>,
    slot: Vec<u32>,
}

impl Frontier {
    fn slot(&self, entity: EntityId) -> usize {
        let s = self.slot[entity as usize];
        debug_assert_ne!(s, ABSENT, "entity {entity} outside receptive field");
        s as usize
    }

    fn push(&mut self, entity: EntityId) {
        if self.slot[entity as usize] == ABSENT {
            self.slot[entity as usize] = self.nodes.len() as u32;
            self.nodes.push(entity);
        }
    }
}

/// The entities whose layer-`l` rows are needed to produce layer-summed
/// representations of a target set. Layer `l - 1` holds layer `l` plus all of
/// its neighbors.
#[derive(Debug, Clone)]
pub struct ReceptiveField {
    layers: Vec<Frontier>,
}

/// Forward values on a receptive field; `reps[l]` follows the layer's node order.
#[derive(Debug, Clone)]
pub struct FieldForward {
    width: usize,
    reps: Vec<Vec<f64>>,
}

impl ReceptiveField {
    pub fn build(graph: &KnowledgeGraph, targets: &[EntityId], depth: usize) -> Self {
        let n = graph.entity_count();
        let mut top = Frontier {
            nodes: Vec::with_capacity(targets.len()),
            slot: vec![ABSENT; n],
        };
        for &t in targets {
            top.push(t);
        }
        let mut layers = vec![top];
        for _ in 0..depth {
            let upper = layers.last().unwrap();
            let mut lower = upper.clone();
            for &i in &upper.nodes {
                for (_, heads) in graph.groups(i) {
                    for &j in heads {
                        lower.push(j);
                    }
                }
            }
            layers.push(lower);
        }
        layers.reverse();
        ReceptiveField { layers }
    }

    pub fn depth(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn targets(&self) -> &[EntityId] {
        &self.layers[self.depth()].nodes
    }

    pub fn nodes(&self, layer: usize) -> &[EntityId] {
        &self.layers[layer].nodes
    }

    pub fn forward(
        &self,
        params: &ParameterStore,
        graph: &KnowledgeGraph,
        layout: &AttributeLayout,
        mode: CombineMode,
    ) -> FieldForward {
        let width = mode.rep_width(layout);
        let mut reps: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        let base = &self.layers[0];
        let mut r0 = vec![0.0; base.nodes.len() * width];
        if width > 0 {
            r0.par_chunks_mut(width)
                .zip(base.nodes.par_iter())
                .for_each_init(Vec::new, |scratch, (out, &i)| {
                    attribute_row(params, graph, layout, mode, i, out, scratch)
                });
        }
        reps.push(r0);
        for l in 1..self.layers.len() {
            let below = &self.layers[l - 1];
            let prev = &reps[l - 1];
            let mut cur = vec![0.0; self.layers[l].nodes.len() * width];
            if width > 0 {
                cur.par_chunks_mut(width)
                    .zip(self.layers[l].nodes.par_iter())
                    .for_each_init(Vec::new, |scratch, (out, &i)| {
                        propagate_row(
                            graph,
                            i,
                            |j| {
                                let s = below.slot(j);
                                &prev[s * width..(s + 1) * width]
                            },
                            out,
                            scratch,
                        )
                    });
            }
            reps.push(cur);
        }
        FieldForward { width, reps }
    }

    /// Layer-summed representation of a target.
    pub fn star(&self, fwd: &FieldForward, entity: EntityId) -> Vec<f64> {
        let w = fwd.width;
        let mut out = vec![0.0; w];
        for (layer, reps) in self.layers.iter().zip(&fwd.reps) {
            let s = layer.slot(entity);
            for (o, v) in out.iter_mut().zip(&reps[s * w..(s + 1) * w]) {
                *o += v;
            }
        }
        out
    }

    /// Allocates a gradient row for every embedding that feeds layer 0.
    pub fn touch_parameters(&self, graph: &KnowledgeGraph, grads: &mut SparseGrads) {
        for &i in &self.layers[0].nodes {
            for (relation, heads) in graph.groups(i) {
                let table = grads.entity_mut(relation);
                for &j in heads {
                    table.touch(j);
                }
            }
        }
    }

    /// Back-propagates gradients of layer-summed target representations
    /// (`star_grads`, keyed by entity) into embedding gradients.
    pub fn backward(
        &self,
        graph: &KnowledgeGraph,
        layout: &AttributeLayout,
        mode: CombineMode,
        star_grads: &SparseRows,
        grads: &mut SparseGrads,
    ) {
        let w = mode.rep_width(layout);
        let mut g: Vec<Vec<f64>> = self.layers.iter().map(|f| vec![0.0; f.nodes.len() * w]).collect();
        for (t, gt) in star_grads.iter() {
            for (layer, buf) in self.layers.iter().zip(g.iter_mut()) {
                let s = layer.slot(t);
                for (b, v) in buf[s * w..(s + 1) * w].iter_mut().zip(gt) {
                    *b += v;
                }
            }
        }
        for l in (1..self.layers.len()).rev() {
            let (lower, upper) = g.split_at_mut(l);
            let below = &mut lower[l - 1];
            let cur = &upper[0];
            let frontier_below = &self.layers[l - 1];
            for (idx, &i) in self.layers[l].nodes.iter().enumerate() {
                let gi = &cur[idx * w..(idx + 1) * w];
                if gi.iter().all(|&v| v == 0.0) {
                    continue;
                }
                for (_, heads) in graph.groups(i) {
                    let n = heads.len() as f64;
                    for &j in heads {
                        let s = frontier_below.slot(j);
                        for (b, v) in below[s * w..(s + 1) * w].iter_mut().zip(gi) {
                            *b += v / n;
                        }
                    }
                }
            }
        }
        let g0 = &g[0];
        for (idx, &i) in self.layers[0].nodes.iter().enumerate() {
            let gi = &g0[idx * w..(idx + 1) * w];
            if gi.iter().all(|&v| v == 0.0) {
                continue;
            }
            let present = match mode {
                CombineMode::Mean => graph.groups(i).count() as f64,
                _ => 1.0,
            };
            for (relation, heads) in graph.groups(i) {
                let n = heads.len() as f64;
                let block = match mode {
                    CombineMode::Concat => &gi[layout.range(relation)],
                    CombineMode::Mean | CombineMode::Sum => gi,
                };
                for &j in heads {
                    let row = grads.entity_row_mut(relation, j);
                    for (r, v) in row.iter_mut().zip(block) {
                        *r += v / n / present;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{build_layout, init_params};
    use crate::kg::Triple;

    fn store_with(dims: &[usize], entities: usize, rows: &[(u32, u32, &[f64])]) -> ParameterStore {
        let mut p = ParameterStore::zeros(dims, entities, 0, dims.iter().sum());
        for &(r, j, v) in rows {
            p.entity_mut(r, j).copy_from_slice(v);
        }
        p
    }

    #[test]
    fn two_point_mean_and_absent_block() {
        // entity 0 has heads 1, 2 under relation 0 and nothing under relation 1
        let g = KnowledgeGraph::from_triples(&[Triple::new(1, 0, 0), Triple::new(2, 0, 0)], 3, 1).unwrap();
        let layout = build_layout(&[2, 3]).unwrap();
        let p = store_with(&[2, 3], 3, &[(0, 1, &[1.0, 0.0]), (0, 2, &[0.0, 1.0])]);
        let l0 = attribute_modeling(&p, &g, &layout, CombineMode::Concat);
        assert_eq!(layout.slice(l0.row(0), 0), &[0.5, 0.5]);
        assert_eq!(layout.slice(l0.row(0), 1), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn single_neighbor_copies_previous_vector() {
        let g = KnowledgeGraph::from_triples(&[Triple::new(1, 0, 0)], 2, 1).unwrap();
        let prev = LayerState {
            layer: 0,
            width: 3,
            reps: vec![0.0, 0.0, 0.0, 1.5, -2.0, 7.25],
        };
        let next = propagate(&prev, &g);
        assert_eq!(next.row(0), &[1.5, -2.0, 7.25]);
        assert_eq!(next.layer, 1);
    }

    #[test]
    fn readout_sums_layers() {
        let a = LayerState {
            layer: 0,
            width: 2,
            reps: vec![1.0, 2.0],
        };
        let b = LayerState {
            layer: 1,
            width: 2,
            reps: vec![0.5, -2.0],
        };
        assert_eq!(readout(std::slice::from_ref(&a), 1).item(0), &[1.0, 2.0]);
        assert_eq!(readout(&[a, b], 1).item(0), &[1.5, 0.0]);
        let z = LayerState {
            layer: 0,
            width: 2,
            reps: vec![0.0; 2],
        };
        assert_eq!(readout(&[z.clone(), z], 1).item(0), &[0.0, 0.0]);
    }

    #[test]
    #[should_panic]
    fn readout_rejects_width_mismatch() {
        let a = LayerState {
            layer: 0,
            width: 2,
            reps: vec![1.0, 2.0],
        };
        let b = LayerState {
            layer: 1,
            width: 1,
            reps: vec![1.0, 2.0],
        };
        readout(&[a, b], 1);
    }

    #[test]
    fn combine_modes() {
        let layout = AttributeLayout::uniform(2, 2).unwrap();
        let blocks: [(u32, &[f64]); 2] = [(0, &[1.0, 1.0]), (1, &[3.0, 3.0])];
        assert_eq!(ablation_combine(CombineMode::Mean, &layout, &blocks), vec![2.0, 2.0]);
        assert_eq!(ablation_combine(CombineMode::Sum, &layout, &blocks), vec![4.0, 4.0]);
        assert_eq!(
            ablation_combine(CombineMode::Concat, &layout, &blocks),
            vec![1.0, 1.0, 3.0, 3.0]
        );
        let one: [(u32, &[f64]); 1] = [(1, &[3.0, 5.0])];
        assert_eq!(ablation_combine(CombineMode::Mean, &layout, &one), vec![3.0, 5.0]);
        assert_eq!(ablation_combine(CombineMode::Sum, &layout, &one), vec![3.0, 5.0]);
        assert_eq!(
            ablation_combine(CombineMode::Concat, &layout, &one),
            vec![0.0, 0.0, 3.0, 5.0]
        );
        assert!(CombineMode::Mean.check_layout(&build_layout(&[2, 3]).unwrap()).is_err());
    }

    #[test]
    fn field_forward_matches_full_graph_bitwise() {
        let triples = [
            Triple::new(3, 0, 0),
            Triple::new(4, 0, 0),
            Triple::new(5, 1, 3),
            Triple::new(6, 1, 1),
            Triple::new(5, 0, 2),
        ];
        let g = KnowledgeGraph::from_triples(&triples, 7, 2).unwrap();
        let layout = build_layout(&[2, 3, 1, 2]).unwrap();
        let p = init_params(&layout, 7, 0, layout.total(), 5);
        for mode in [CombineMode::Concat] {
            for depth in 0..4 {
                let full = item_representation(&p, &g, &layout, mode, depth, 3);
                let field = ReceptiveField::build(&g, &[0, 2], depth);
                let fwd = field.forward(&p, &g, &layout, mode);
                assert_eq!(field.star(&fwd, 0), full.item(0));
                assert_eq!(field.star(&fwd, 2), full.item(2));
            }
        }
    }
}
