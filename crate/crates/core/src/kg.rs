//! Knowledge graph and interaction storage.
//!
//! The graph is indexed by tail entity: for every `(tail, relation)` pair the
//! sorted list of heads `{ h : (h, relation, tail) ∈ G }` is stored contiguously.
//! Canonical relations keep their input ids `0..R`; the inverse of relation `r`
//! is `r + R`, so a graph always holds `2R` relation ids.
//!
//! Items share ids with entities and occupy the prefix `0..item_count`.

use std::fs;
use std::path::Path;

use log::warn;

use crate::error::{Error, Result};

pub type EntityId = u32;
pub type RelationId = u32;
pub type UserId = u32;
pub type ItemId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub fn new(head: EntityId, relation: RelationId, tail: EntityId) -> Self {
        Triple { head, relation, tail }
    }
}

/// Relation-grouped reverse adjacency with inverse relations materialized.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnowledgeGraph {
    entity_count: usize,
    canonical_relations: usize,
    canonical_triples: usize,
    /// `node_ptr[i]..node_ptr[i + 1]` are the groups whose tail is `i`.
    node_ptr: Vec<u32>,
    /// Relation of each group, ascending within one tail.
    group_relation: Vec<RelationId>,
    /// `group_ptr[g]..group_ptr[g + 1]` are the heads of group `g`.
    group_ptr: Vec<u32>,
    heads: Vec<EntityId>,
    edge_counts: Vec<usize>,
}

impl KnowledgeGraph {
    /// Builds the index from canonical triples. Duplicates are dropped and every
    /// triple `(h, r, t)` gains its inverse `(t, r + R, h)`.
    pub fn from_triples(triples: &[Triple], entity_count: usize, canonical_relations: usize) -> Result<Self> {
        if entity_count > u32::MAX as usize || 2 * canonical_relations > u32::MAX as usize {
            return Err(Error::Data("graph too large for 32-bit ids".into()));
        }
        for t in triples {
            if t.head as usize >= entity_count || t.tail as usize >= entity_count {
                return Err(Error::Data(format!(
                    "triple ({}, {}, {}) references an entity >= {entity_count}",
                    t.head, t.relation, t.tail
                )));
            }
            if t.relation as usize >= canonical_relations {
                return Err(Error::Data(format!(
                    "triple ({}, {}, {}) references a relation >= {canonical_relations}",
                    t.head, t.relation, t.tail
                )));
            }
        }
        let mut canonical = triples.to_vec();
        canonical.sort_unstable();
        canonical.dedup();
        if canonical.len() < triples.len() {
            warn!("dropped {} duplicate triples", triples.len() - canonical.len());
        }

        let inv = canonical_relations as u32;
        let mut edges: Vec<(EntityId, RelationId, EntityId)> = Vec::with_capacity(2 * canonical.len());
        for t in &canonical {
            edges.push((t.tail, t.relation, t.head));
            edges.push((t.head, t.relation + inv, t.tail));
        }
        edges.sort_unstable();
        Ok(Self::from_sorted_edges(
            &edges,
            entity_count,
            canonical_relations,
            canonical.len(),
        ))
    }

    /// `edges` are `(tail, relation, head)` sorted ascending and unique.
    fn from_sorted_edges(
        edges: &[(EntityId, RelationId, EntityId)],
        entity_count: usize,
        canonical_relations: usize,
        canonical_triples: usize,
    ) -> Self {
        let mut node_ptr = Vec::with_capacity(entity_count + 1);
        let mut group_relation = Vec::new();
        let mut group_ptr = Vec::new();
        let mut heads = Vec::with_capacity(edges.len());
        let mut edge_counts = vec![0usize; 2 * canonical_relations];

        let mut cursor = 0;
        for node in 0..entity_count as u32 {
            node_ptr.push(group_relation.len() as u32);
            while cursor < edges.len() && edges[cursor].0 == node {
                let relation = edges[cursor].1;
                group_relation.push(relation);
                group_ptr.push(heads.len() as u32);
                while cursor < edges.len() && edges[cursor].0 == node && edges[cursor].1 == relation {
                    heads.push(edges[cursor].2);
                    edge_counts[relation as usize] += 1;
                    cursor += 1;
                }
            }
        }
        node_ptr.push(group_relation.len() as u32);
        group_ptr.push(heads.len() as u32);

        KnowledgeGraph {
            entity_count,
            canonical_relations,
            canonical_triples,
            node_ptr,
            group_relation,
            group_ptr,
            heads,
            edge_counts,
        }
    }

    pub fn entity_count(&self) -> usize {
        self.entity_count
    }

    /// Number of relation ids, canonical and inverse.
    pub fn relation_count(&self) -> usize {
        2 * self.canonical_relations
    }

    pub fn canonical_relation_count(&self) -> usize {
        self.canonical_relations
    }

    pub fn canonical_triple_count(&self) -> usize {
        self.canonical_triples
    }

    /// Triples after inverse augmentation (one per stored head).
    pub fn triple_count(&self) -> usize {
        self.heads.len()
    }

    pub fn inverse(&self, relation: RelationId) -> RelationId {
        let r = self.canonical_relations as u32;
        if relation < r {
            relation + r
        } else {
            relation - r
        }
    }

    pub fn is_inverse(&self, relation: RelationId) -> bool {
        relation as usize >= self.canonical_relations
    }

    /// Edge count per relation id (length `2R`).
    pub fn edge_counts(&self) -> &[usize] {
        &self.edge_counts
    }

    /// Sorted heads `j` with `(j, relation, entity)` in the graph.
    pub fn neighbors(&self, entity: EntityId, relation: RelationId) -> &[EntityId] {
        let (lo, hi) = self.group_range(entity);
        match self.group_relation[lo..hi].binary_search(&relation) {
            Ok(k) => self.group_heads(lo + k),
            Err(_) => &[],
        }
    }

    /// Non-empty neighbor groups of `entity`, ascending by relation.
    pub fn groups(&self, entity: EntityId) -> impl Iterator<Item = (RelationId, &[EntityId])> + '_ {
        let (lo, hi) = self.group_range(entity);
        (lo..hi).map(move |g| (self.group_relation[g], self.group_heads(g)))
    }

    /// Canonical triples, ascending by `(head, relation, tail)`.
    pub fn canonical_triples(&self) -> Vec<Triple> {
        let mut out = Vec::with_capacity(self.canonical_triples);
        for tail in 0..self.entity_count as u32 {
            for (relation, heads) in self.groups(tail) {
                if !self.is_inverse(relation) {
                    out.extend(heads.iter().map(|&h| Triple::new(h, relation, tail)));
                }
            }
        }
        out.sort_unstable();
        out
    }

    /// The same graph with every entity whose `keep` flag is false removed from
    /// all neighbor lists. Groups left empty disappear.
    pub fn without_entities(&self, keep: &[bool]) -> KnowledgeGraph {
        assert_eq!(keep.len(), self.entity_count, "mask length must equal entity count");
        let mut edges = Vec::with_capacity(self.heads.len());
        for tail in 0..self.entity_count as u32 {
            for (relation, heads) in self.groups(tail) {
                edges.extend(
                    heads
                        .iter()
                        .filter(|&&h| keep[h as usize])
                        .map(|&h| (tail, relation, h)),
                );
            }
        }
        Self::from_sorted_edges(
            &edges,
            self.entity_count,
            self.canonical_relations,
            self.canonical_triples,
        )
    }

    fn group_range(&self, entity: EntityId) -> (usize, usize) {
        let e = entity as usize;
        (self.node_ptr[e] as usize, self.node_ptr[e + 1] as usize)
    }

    fn group_heads(&self, group: usize) -> &[EntityId] {
        &self.heads[self.group_ptr[group] as usize..self.group_ptr[group + 1] as usize]
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_id(path: &Path, line: usize, token: &str) -> Result<u32> {
    token.parse::<u32>().map_err(|_| {
        Error::parse(
            path,
            line,
            format!("expected a non-negative integer id, found {token:?}"),
        )
    })
}

/// Parses `head relation tail` lines. Blank lines are skipped.
pub fn read_triples(path: &Path) -> Result<Vec<(usize, Triple)>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        let tokens: Vec<&str> = line.split_ascii_whitespace().collect();
        match tokens.as_slice() {
            [] => continue,
            [h, r, t] => out.push((
                line_no,
                Triple::new(
                    parse_id(path, line_no, h)?,
                    parse_id(path, line_no, r)?,
                    parse_id(path, line_no, t)?,
                ),
            )),
            _ => {
                return Err(Error::parse(
                    path,
                    line_no,
                    format!("expected `head relation tail`, found {} fields", tokens.len()),
                ))
            }
        }
    }
    Ok(out)
}

/// Loads a canonical-only triple file. Missing counts are inferred as
/// `max id + 1`; given counts are enforced with line-numbered errors.
pub fn load_kg(
    path: &Path,
    entity_count: Option<usize>,
    canonical_relation_count: Option<usize>,
) -> Result<KnowledgeGraph> {
    let lines = read_triples(path)?;
    let entities = entity_count.unwrap_or_else(|| {
        lines
            .iter()
            .map(|(_, t)| t.head.max(t.tail) as usize + 1)
            .max()
            .unwrap_or(0)
    });
    let relations = canonical_relation_count
        .unwrap_or_else(|| lines.iter().map(|(_, t)| t.relation as usize + 1).max().unwrap_or(0));
    for (line, t) in &lines {
        if t.head as usize >= entities || t.tail as usize >= entities {
            return Err(Error::parse(
                path,
                *line,
                format!("entity id out of range (entity count {entities})"),
            ));
        }
        if t.relation as usize >= relations {
            return Err(Error::parse(
                path,
                *line,
                format!(
                    "relation id {} out of range (canonical relation count {relations})",
                    t.relation
                ),
            ));
        }
    }
    let triples: Vec<Triple> = lines.into_iter().map(|(_, t)| t).collect();
    KnowledgeGraph::from_triples(&triples, entities, relations)
}

/// Observed user–item interactions split into train and test lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionSet {
    item_count: usize,
    train: Vec<Vec<ItemId>>,
    test: Vec<Vec<ItemId>>,
}

impl InteractionSet {
    /// Builds from per-user lists; lists are sorted and deduplicated, the user
    /// count is the longer of the two, and test items also present in train
    /// are dropped.
    pub fn from_lists(mut train: Vec<Vec<ItemId>>, mut test: Vec<Vec<ItemId>>, item_count: usize) -> Result<Self> {
        let users = train.len().max(test.len());
        train.resize_with(users, Vec::new);
        test.resize_with(users, Vec::new);
        let mut overlap = 0usize;
        for u in 0..users {
            for list in [&mut train[u], &mut test[u]] {
                list.sort_unstable();
                list.dedup();
                if let Some(&max) = list.last() {
                    if max as usize >= item_count {
                        return Err(Error::Data(format!(
                            "user {u} references item {max} but the item count is {item_count}"
                        )));
                    }
                }
            }
            let before = test[u].len();
            let tr = &train[u];
            test[u].retain(|i| tr.binary_search(i).is_err());
            overlap += before - test[u].len();
        }
        if overlap > 0 {
            warn!("removed {overlap} test interactions that also appear in train");
        }
        Ok(InteractionSet {
            item_count,
            train,
            test,
        })
    }

    pub fn user_count(&self) -> usize {
        self.train.len()
    }

    pub fn item_count(&self) -> usize {
        self.item_count
    }

    pub fn train_items(&self, user: UserId) -> &[ItemId] {
        &self.train[user as usize]
    }

    pub fn test_items(&self, user: UserId) -> &[ItemId] {
        &self.test[user as usize]
    }

    pub fn is_train(&self, user: UserId, item: ItemId) -> bool {
        self.train[user as usize].binary_search(&item).is_ok()
    }

    pub fn train_count(&self) -> usize {
        self.train.iter().map(Vec::len).sum()
    }

    pub fn test_count(&self) -> usize {
        self.test.iter().map(Vec::len).sum()
    }

    /// Users with an empty train list.
    pub fn cold_users(&self) -> Vec<UserId> {
        (0..self.user_count() as u32)
            .filter(|&u| self.train[u as usize].is_empty())
            .collect()
    }

    /// Users with at least one test item.
    pub fn test_users(&self) -> Vec<UserId> {
        (0..self.user_count() as u32)
            .filter(|&u| !self.test[u as usize].is_empty())
            .collect()
    }
}

fn read_user_lists(path: &Path) -> Result<Vec<Vec<ItemId>>> {
    let text = read_text(path)?;
    let mut lists: Vec<Vec<ItemId>> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let mut tokens = line.split_ascii_whitespace();
        let Some(user) = tokens.next() else { continue };
        let user = parse_id(path, n + 1, user)? as usize;
        if lists.len() <= user {
            lists.resize_with(user + 1, Vec::new);
        }
        for tok in tokens {
            lists[user].push(parse_id(path, n + 1, tok)?);
        }
    }
    Ok(lists)
}

/// Loads `user item item ...` files. Without `item_count`, it is inferred as
/// the largest item id plus one.
pub fn load_interactions(train_path: &Path, test_path: &Path, item_count: Option<usize>) -> Result<InteractionSet> {
    let train = read_user_lists(train_path)?;
    let test = read_user_lists(test_path)?;
    let items = item_count.unwrap_or_else(|| {
        train
            .iter()
            .chain(test.iter())
            .flat_map(|l| l.iter())
            .map(|&i| i as usize + 1)
            .max()
            .unwrap_or(0)
    });
    let set = InteractionSet::from_lists(train, test, items)?;
    let cold = set.cold_users();
    if !cold.is_empty() {
        warn!(
            "{} users have no training interactions (first: {})",
            cold.len(),
            cold[0]
        );
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn fixture() -> KnowledgeGraph {
        let triples = [Triple::new(2, 0, 1), Triple::new(3, 0, 1), Triple::new(4, 1, 1)];
        KnowledgeGraph::from_triples(&triples, 5, 2).unwrap()
    }

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        fs::File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn fixture_neighbors() {
        let g = fixture();
        assert_eq!(g.relation_count(), 4);
        assert_eq!(g.neighbors(1, 0), &[2, 3]);
        assert_eq!(g.neighbors(1, 1), &[4]);
        assert_eq!(g.neighbors(2, 2), &[1]);
        assert_eq!(g.neighbors(3, 2), &[1]);
        assert_eq!(g.neighbors(4, 3), &[1]);
        assert!(g.neighbors(0, 0).is_empty());
        assert!(g.neighbors(1, 2).is_empty());
        assert_eq!(g.edge_counts(), &[2, 1, 2, 1]);
        assert_eq!(g.triple_count(), 6);
    }

    #[test]
    fn duplicates_are_dropped() {
        let t = Triple::new(1, 0, 0);
        let g = KnowledgeGraph::from_triples(&[t, t, t], 2, 1).unwrap();
        assert_eq!(g.canonical_triple_count(), 1);
        assert_eq!(g.neighbors(0, 0), &[1]);
    }

    #[test]
    fn self_loops_are_kept() {
        let g = KnowledgeGraph::from_triples(&[Triple::new(0, 0, 0)], 1, 1).unwrap();
        assert_eq!(g.neighbors(0, 0), &[0]);
        assert_eq!(g.neighbors(0, 1), &[0]);
    }

    #[test]
    fn empty_file_gives_empty_graph() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "kg.txt", "");
        let g = load_kg(&p, Some(3), Some(2)).unwrap();
        assert_eq!(g.triple_count(), 0);
        for i in 0..3 {
            for r in 0..4 {
                assert!(g.neighbors(i, r).is_empty());
            }
        }
    }

    #[test]
    fn load_reports_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "kg.txt", "0 0 1\n1 0 9\n");
        let err = load_kg(&p, Some(3), Some(1)).unwrap_err().to_string();
        assert!(err.contains(":2:"), "{err}");

        let p = write(dir.path(), "bad.txt", "0 0 1\r\n\r\n1 x 2\r\n");
        let err = load_kg(&p, None, None).unwrap_err().to_string();
        assert!(err.contains(":3:"), "{err}");

        let p = write(dir.path(), "short.txt", "0 1\n");
        assert!(matches!(load_kg(&p, None, None), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn crlf_and_inference() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "kg.txt", "2 0 1\r\n3 0 1\r\n4 1 1\r\n");
        let g = load_kg(&p, None, None).unwrap();
        assert_eq!(g, fixture());
        assert_eq!(
            g.canonical_triples(),
            vec![Triple::new(2, 0, 1), Triple::new(3, 0, 1), Triple::new(4, 1, 1)]
        );
    }

    #[test]
    fn dedup_and_sort_interactions() {
        let dir = tempfile::tempdir().unwrap();
        let tr = write(dir.path(), "train.txt", "0 5 5 3\n");
        let te = write(dir.path(), "test.txt", "0 1\n");
        let set = load_interactions(&tr, &te, None).unwrap();
        assert_eq!(set.train_items(0), &[3, 5]);
        assert_eq!(set.item_count(), 6);
    }

    #[test]
    fn test_only_user_is_cold() {
        let dir = tempfile::tempdir().unwrap();
        let tr = write(dir.path(), "train.txt", "0 1 2\n");
        let te = write(dir.path(), "test.txt", "0 3\n1 2\n");
        let set = load_interactions(&tr, &te, None).unwrap();
        assert_eq!(set.user_count(), 2);
        assert!(set.train_items(1).is_empty());
        assert_eq!(set.cold_users(), vec![1]);
        assert_eq!(set.test_users(), vec![0, 1]);
    }

    #[test]
    fn item_out_of_range_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let tr = write(dir.path(), "train.txt", "0 1 7\n");
        let te = write(dir.path(), "test.txt", "");
        assert!(matches!(load_interactions(&tr, &te, Some(5)), Err(Error::Data(_))));
    }

    #[test]
    fn train_test_overlap_removed() {
        let set = InteractionSet::from_lists(vec![vec![1, 2]], vec![vec![2, 3]], 4).unwrap();
        assert_eq!(set.test_items(0), &[3]);
    }

    #[test]
    fn dropout_view_removes_heads() {
        let g = fixture();
        let keep = [true, true, false, true, true];
        let v = g.without_entities(&keep);
        assert_eq!(v.neighbors(1, 0), &[3]);
        // entity 2 is masked as a neighbor but keeps its own neighbor lists
        assert_eq!(v.neighbors(2, 2), &[1]);
        assert_eq!(v.edge_counts(), &[1, 1, 2, 1]);
    }
}
