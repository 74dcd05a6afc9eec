//! Planted-preference synthetic worlds.
//!
//! Every relation `m` owns a pool of attribute entities and every item links
//! to one entity per relation, spread evenly over the pool. Each user prefers a few relations and one
//! target entity within each; the user's interactions are drawn without
//! replacement with probability proportional to how many targets an item
//! matches. The preferences are written out as an answer key.
//!
//! Entity ids: items `0..I`, then the pools in relation order, then (with
//! `second_hop`) one hub per item. Triples are `(item, m, attribute)`. With
//! `second_hop` the last attribute relation is reached through the hub:
//! `(item, bridge, hub)` and `(hub, m, attribute)`, where the bridge relation
//! id is `relations`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{EntityId, InteractionSet, ItemId, KnowledgeGraph, RelationId, Triple};

pub const KG_FILE: &str = "kg_final.txt";
pub const TRAIN_FILE: &str = "train.txt";
pub const TEST_FILE: &str = "test.txt";
pub const ANSWER_KEY_FILE: &str = "answer_key.tsv";
pub const NAMES_FILE: &str = "relation_names.tsv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub users: usize,
    pub items: usize,
    /// Attribute relations, not counting the bridge.
    pub relations: usize,
    /// Pool size of every attribute relation.
    pub entities_per_relation: usize,
    /// Fraction of relations each user prefers; at least one.
    pub sparsity: f64,
    pub interactions_per_user: usize,
    /// Share of each user's interactions moved to the test list.
    pub test_fraction: f64,
    pub second_hop: bool,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            users: 500,
            items: 300,
            relations: 8,
            entities_per_relation: 10,
            sparsity: 1.0 / 8.0,
            interactions_per_user: 20,
            test_fraction: 0.2,
            second_hop: false,
            seed: 2022,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("users", self.users),
            ("items", self.items),
            ("relations", self.relations),
            ("entities_per_relation", self.entities_per_relation),
            ("interactions_per_user", self.interactions_per_user),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("synthetic {name} must be positive")));
            }
        }
        if !(self.sparsity > 0.0 && self.sparsity <= 1.0) {
            return Err(Error::Config(format!(
                "sparsity must be in (0, 1], got {}",
                self.sparsity
            )));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::Config(format!(
                "test_fraction must be in [0, 1), got {}",
                self.test_fraction
            )));
        }
        if self.interactions_per_user > self.items {
            return Err(Error::Config(format!(
                "{} interactions per user exceed {} items",
                self.interactions_per_user, self.items
            )));
        }
        Ok(())
    }

    pub fn preferred_per_user(&self) -> usize {
        ((self.sparsity * self.relations as f64).round() as usize).clamp(1, self.relations)
    }

    pub fn canonical_relations(&self) -> usize {
        self.relations + usize::from(self.second_hop)
    }

    pub fn bridge_relation(&self) -> Option<RelationId> {
        self.second_hop.then_some(self.relations as RelationId)
    }

    pub fn entity_count(&self) -> usize {
        self.items + self.relations * self.entities_per_relation + if self.second_hop { self.items } else { 0 }
    }

    pub fn attribute_entity(&self, relation: RelationId, k: usize) -> EntityId {
        (self.items + relation as usize * self.entities_per_relation + k) as EntityId
    }

    fn hub(&self, item: ItemId) -> EntityId {
        (self.items + self.relations * self.entities_per_relation + item as usize) as EntityId
    }
}

/// One planted `(relation, target entity)` preference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Preference {
    pub relation: RelationId,
    pub entity: EntityId,
}

#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    pub spec: SyntheticSpec,
    pub triples: Vec<Triple>,
    /// `item_attributes[i][m]` is item `i`'s entity in relation `m`.
    pub item_attributes: Vec<Vec<EntityId>>,
    pub preferences: Vec<Vec<Preference>>,
    pub train: Vec<Vec<ItemId>>,
    pub test: Vec<Vec<ItemId>>,
}

impl SyntheticWorld {
    pub fn match_count(&self, user: usize, item: ItemId) -> usize {
        self.preferences[user]
            .iter()
            .filter(|p| self.item_attributes[item as usize][p.relation as usize] == p.entity)
            .count()
    }

    pub fn graph(&self) -> Result<KnowledgeGraph> {
        KnowledgeGraph::from_triples(&self.triples, self.spec.entity_count(), self.spec.canonical_relations())
    }

    pub fn interactions(&self) -> Result<InteractionSet> {
        InteractionSet::from_lists(self.train.clone(), self.test.clone(), self.spec.items)
    }

    pub fn kg_text(&self) -> String {
        let mut s = String::new();
        for t in &self.triples {
            writeln!(s, "{} {} {}", t.head, t.relation, t.tail).unwrap();
        }
        s
    }

    pub fn answer_key_text(&self) -> String {
        let mut s = String::from("user\trelation\tentity\n");
        for (u, prefs) in self.preferences.iter().enumerate() {
            for p in prefs {
                writeln!(s, "{u}\t{}\t{}", p.relation, p.entity).unwrap();
            }
        }
        s
    }

    pub fn names_text(&self) -> String {
        let mut s = String::new();
        for m in 0..self.spec.relations {
            writeln!(s, "{m}\tattribute-{m}").unwrap();
        }
        if let Some(b) = self.spec.bridge_relation() {
            writeln!(s, "{b}\tbridge").unwrap();
        }
        s
    }

    /// Writes the dataset files, the answer key and a relation-name table.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let files = [
            (KG_FILE, self.kg_text()),
            (TRAIN_FILE, lists_text(&self.train)),
            (TEST_FILE, lists_text(&self.test)),
            (ANSWER_KEY_FILE, self.answer_key_text()),
            (NAMES_FILE, self.names_text()),
        ];
        for (name, text) in files {
            let path = dir.join(name);
            fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

/// `user item item ...` lines; users with no items still get a line.
pub fn lists_text(lists: &[Vec<ItemId>]) -> String {
    let mut s = String::new();
    for (u, items) in lists.iter().enumerate() {
        write!(s, "{u}").unwrap();
        for i in items {
            write!(s, " {i}").unwrap();
        }
        s.push('\n');
    }
    s
}

pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticWorld> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let m_count = spec.relations;
    let pool = spec.entities_per_relation;

    // balanced pools: every entity of a relation is used by items/pool items (±1)
    let mut item_attributes = vec![Vec::with_capacity(m_count); spec.items];
    for m in 0..m_count {
        let mut slots: Vec<usize> = (0..spec.items).map(|i| i % pool).collect();
        slots.shuffle(&mut rng);
        for (attrs, k) in item_attributes.iter_mut().zip(slots) {
            attrs.push(spec.attribute_entity(m as RelationId, k));
        }
    }

    let mut triples = Vec::with_capacity(spec.items * (m_count + 1));
    let hop2 = spec.bridge_relation().map(|_| m_count - 1);
    for (i, attrs) in item_attributes.iter().enumerate() {
        let item = i as ItemId;
        for (m, &e) in attrs.iter().enumerate() {
            if Some(m) == hop2 {
                triples.push(Triple::new(item, spec.bridge_relation().unwrap(), spec.hub(item)));
                triples.push(Triple::new(spec.hub(item), m as RelationId, e));
            } else {
                triples.push(Triple::new(item, m as RelationId, e));
            }
        }
    }

    let k = spec.preferred_per_user();
    let n = spec.interactions_per_user;
    let n_test = (n as f64 * spec.test_fraction).round() as usize;
    let mut preferences = Vec::with_capacity(spec.users);
    let mut train = Vec::with_capacity(spec.users);
    let mut test = Vec::with_capacity(spec.users);
    let items: Vec<ItemId> = (0..spec.items as ItemId).collect();
    for u in 0..spec.users {
        let mut prefs: Vec<Preference> = index::sample(&mut rng, m_count, k)
            .into_iter()
            .map(|m| Preference {
                relation: m as RelationId,
                entity: spec.attribute_entity(m as RelationId, rng.gen_range(0..pool)),
            })
            .collect();
        prefs.sort_by_key(|p| p.relation);
        let weight = |i: &ItemId| {
            prefs
                .iter()
                .filter(|p| item_attributes[*i as usize][p.relation as usize] == p.entity)
                .count() as f64
        };
        let matching = items.iter().filter(|i| weight(i) > 0.0).count();
        if matching < n {
            return Err(Error::Config(format!(
                "infeasible synthetic spec: user {u} matches {matching} items but needs {n} interactions"
            )));
        }
        let mut chosen: Vec<ItemId> = items
            .choose_multiple_weighted(&mut rng, n, weight)
            .map_err(|e| Error::Config(format!("weighted sampling failed: {e}")))?
            .copied()
            .collect();
        let held = chosen.split_off(n - n_test);
        chosen.sort_unstable();
        let mut held = held;
        held.sort_unstable();
        train.push(chosen);
        test.push(held);
        preferences.push(prefs);
    }

    Ok(SyntheticWorld {
        spec: spec.clone(),
        triples,
        item_attributes,
        preferences,
        train,
        test,
    })
}

/// Canonical relation that carries the planted signal for relation id `r`
/// (inverse ids fold onto their canonical relation), or `None` for the bridge.
pub fn planted_relation(spec: &SyntheticSpec, r: RelationId) -> Option<RelationId> {
    let canonical = r % spec.canonical_relations() as RelationId;
    (Some(canonical) != spec.bridge_relation()).then_some(canonical)
}
