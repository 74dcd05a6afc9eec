use rand::Rng;

use crate::kg::KnowledgeGraph;

/// Keep-flags with each entity masked independently with probability `ratio`.
pub fn dropout_mask<R: Rng>(entity_count: usize, ratio: f64, rng: &mut R) -> Vec<bool> {
    assert!((0.0..1.0).contains(&ratio), "dropout ratio must be in [0, 1)");
    (0..entity_count).map(|_| rng.gen::<f64>() >= ratio).collect()
}

/// The graph with a random entity subset removed from every neighbor list.
/// Pooling then averages over the surviving neighbors only.
pub fn node_dropout<R: Rng>(graph: &KnowledgeGraph, ratio: f64, rng: &mut R) -> KnowledgeGraph {
    if ratio == 0.0 {
        return graph.clone();
    }
    graph.without_entities(&dropout_mask(graph.entity_count(), ratio, rng))
}
