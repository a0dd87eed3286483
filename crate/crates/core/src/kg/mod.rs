//! Knowledge-graph store: vocabularies, triplets, few-shot task splits and
//! the per-entity neighbor index.

mod io;
mod synthetic;

pub use io::{load_kg, save_dataset, DataFormat};
pub use synthetic::{generate_synthetic, rule_closure, Rule, SignedRelation, SyntheticSpec};

use std::collections::{BTreeSet, HashMap, HashSet};

use rand::seq::index;
use thiserror::Error;

use crate::tensor::rng;

pub type EntityId = usize;
pub type RelationId = usize;

#[derive(Debug, Error)]
pub enum KgError {
    #[error("{file}:{line}: {msg}")]
    Malformed { file: String, line: usize, msg: String },
    #[error("empty graph")]
    EmptyGraph,
    #[error("unknown entity {0:?}")]
    UnknownEntity(String),
    #[error("unknown entity id {0}")]
    UnknownEntityId(EntityId),
    #[error("unknown relation {0:?}")]
    UnknownRelation(String),
    #[error("infeasible synthetic spec: {0}")]
    Infeasible(String),
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triplet {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triplet {
    pub fn new(head: EntityId, relation: RelationId, tail: EntityId) -> Self {
        Self { head, relation, tail }
    }
}

/// Bidirectional string <-> dense id map.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocab {
    names: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocab {
    pub fn get_or_insert(&mut self, name: &str) -> usize {
        if let Some(&id) = self.ids.get(name) {
            return id;
        }
        let id = self.names.len();
        self.names.push(name.to_string());
        self.ids.insert(name.to_string(), id);
        id
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.ids.get(name).copied()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// A (relation, entity) tuple in the neighbor index. Relations live in the
/// extended space where `r + relation_count` is the inverse of `r`.
pub type Neighbor = (usize, EntityId);

/// Immutable knowledge graph. Few-shot relations keep their triplets in the
/// store (they are known facts) but never enter the neighbor index.
#[derive(Clone, Debug)]
pub struct KnowledgeGraph {
    entities: Vocab,
    relations: Vocab,
    triplets: Vec<Triplet>,
    few_shot: BTreeSet<RelationId>,
    known: HashSet<Triplet>,
    by_relation: Vec<Vec<usize>>,
    tails_of: HashMap<(EntityId, RelationId), Vec<EntityId>>,
    neighbor_index: Vec<Vec<Neighbor>>,
    tail_signature: Vec<Vec<RelationId>>,
}

impl PartialEq for KnowledgeGraph {
    fn eq(&self, other: &Self) -> bool {
        self.entities == other.entities
            && self.relations == other.relations
            && self.triplets == other.triplets
            && self.few_shot == other.few_shot
    }
}

/// Accumulates triplets by name, deduplicating as it goes.
#[derive(Debug, Default)]
pub struct GraphBuilder {
    entities: Vocab,
    relations: Vocab,
    triplets: Vec<Triplet>,
    seen: HashSet<Triplet>,
    few_shot: BTreeSet<RelationId>,
    duplicates: usize,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entity(&mut self, name: &str) -> EntityId {
        self.entities.get_or_insert(name)
    }

    pub fn relation(&mut self, name: &str) -> RelationId {
        self.relations.get_or_insert(name)
    }

    pub fn entity_id(&self, name: &str) -> Option<EntityId> {
        self.entities.id(name)
    }

    /// Adds a triplet; returns false (and counts a duplicate) if present.
    pub fn add(&mut self, head: &str, relation: &str, tail: &str) -> bool {
        let t = Triplet::new(self.entity(head), self.relation(relation), self.entity(tail));
        self.add_ids(t)
    }

    pub fn add_ids(&mut self, t: Triplet) -> bool {
        if self.seen.insert(t) {
            self.triplets.push(t);
            true
        } else {
            self.duplicates += 1;
            false
        }
    }

    pub fn mark_few_shot(&mut self, relation: RelationId) {
        self.few_shot.insert(relation);
    }

    pub fn duplicates(&self) -> usize {
        self.duplicates
    }

    /// Triplets are stored sorted by (relation, head, tail), so equal
    /// triplet sets give equal graphs whatever the insertion order.
    pub fn build(mut self) -> Result<KnowledgeGraph, KgError> {
        if self.triplets.is_empty() {
            return Err(KgError::EmptyGraph);
        }
        self.triplets.sort_unstable_by_key(|t| (t.relation, t.head, t.tail));
        Ok(KnowledgeGraph::from_parts(
            self.entities,
            self.relations,
            self.triplets,
            self.few_shot,
        ))
    }
}

impl KnowledgeGraph {
    fn from_parts(entities: Vocab, relations: Vocab, triplets: Vec<Triplet>, few_shot: BTreeSet<RelationId>) -> Self {
        let n_rel = relations.len();
        let mut by_relation = vec![Vec::new(); n_rel];
        let mut tails_of: HashMap<(EntityId, RelationId), Vec<EntityId>> = HashMap::new();
        let mut neighbor_index = vec![Vec::new(); entities.len()];
        let mut signature: Vec<BTreeSet<RelationId>> = vec![BTreeSet::new(); entities.len()];
        for (i, t) in triplets.iter().enumerate() {
            by_relation[t.relation].push(i);
            tails_of.entry((t.head, t.relation)).or_default().push(t.tail);
            if !few_shot.contains(&t.relation) {
                neighbor_index[t.head].push((t.relation, t.tail));
                neighbor_index[t.tail].push((t.relation + n_rel, t.head));
                signature[t.tail].insert(t.relation);
            }
        }
        for n in &mut neighbor_index {
            n.sort_unstable();
            n.dedup();
        }
        Self {
            known: triplets.iter().copied().collect(),
            entities,
            relations,
            triplets,
            few_shot,
            by_relation,
            tails_of,
            neighbor_index,
            tail_signature: signature.into_iter().map(|s| s.into_iter().collect()).collect(),
        }
    }

    pub fn entities(&self) -> &Vocab {
        &self.entities
    }

    pub fn relations(&self) -> &Vocab {
        &self.relations
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    /// Size of the neighbor relation space (forward plus inverse).
    pub fn num_neighbor_relations(&self) -> usize {
        2 * self.relations.len()
    }

    pub fn inverse(&self, relation: RelationId) -> usize {
        relation + self.relations.len()
    }

    pub fn triplets(&self) -> &[Triplet] {
        &self.triplets
    }

    pub fn background(&self) -> impl Iterator<Item = &Triplet> {
        self.triplets.iter().filter(|t| !self.few_shot.contains(&t.relation))
    }

    pub fn is_few_shot(&self, relation: RelationId) -> bool {
        self.few_shot.contains(&relation)
    }

    pub fn few_shot_relations(&self) -> &BTreeSet<RelationId> {
        &self.few_shot
    }

    pub fn contains(&self, t: &Triplet) -> bool {
        self.known.contains(t)
    }

    pub fn relation_triplets(&self, relation: RelationId) -> impl Iterator<Item = &Triplet> + '_ {
        self.by_relation
            .get(relation)
            .into_iter()
            .flatten()
            .map(|&i| &self.triplets[i])
    }

    pub fn relation_size(&self, relation: RelationId) -> usize {
        self.by_relation.get(relation).map_or(0, Vec::len)
    }

    /// All known tails of `(head, relation)`.
    pub fn tails(&self, head: EntityId, relation: RelationId) -> &[EntityId] {
        self.tails_of.get(&(head, relation)).map_or(&[], Vec::as_slice)
    }

    /// Background relations for which `e` appears as a tail, sorted.
    pub fn tail_signature(&self, e: EntityId) -> &[RelationId] {
        &self.tail_signature[e]
    }

    /// Full neighbor list of `e` in canonical order.
    pub fn all_neighbors(&self, e: EntityId) -> Result<&[Neighbor], KgError> {
        self.neighbor_index
            .get(e)
            .map(Vec::as_slice)
            .ok_or(KgError::UnknownEntityId(e))
    }

    /// Up to `cap` neighbors of `e`. Larger neighborhoods are subsampled
    /// uniformly without replacement from a stream keyed by `(seed, e)`;
    /// the result keeps canonical order.
    pub fn neighbors(&self, e: EntityId, cap: usize, seed: u64) -> Result<Vec<Neighbor>, KgError> {
        let all = self.all_neighbors(e)?;
        let cap = cap.max(1);
        if all.len() <= cap {
            return Ok(all.to_vec());
        }
        let mut r = rng::stream(seed, "neighbors", &[e as u64]);
        let mut picked = index::sample(&mut r, all.len(), cap).into_vec();
        picked.sort_unstable();
        Ok(picked.into_iter().map(|i| all[i]).collect())
    }
}

/// A graph with its few-shot task relations split into train/dev/test,
/// plus optional released candidate lists keyed by `(head, relation)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub graph: KnowledgeGraph,
    pub train: Vec<RelationId>,
    pub dev: Vec<RelationId>,
    pub test: Vec<RelationId>,
    pub candidates: Option<HashMap<(EntityId, RelationId), Vec<EntityId>>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl std::str::FromStr for Split {
    type Err = KgError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "dev" | "valid" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(KgError::Config(format!("unknown split {other:?}"))),
        }
    }
}

impl Dataset {
    pub fn relations(&self, split: Split) -> &[RelationId] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> KnowledgeGraph {
        let mut b = GraphBuilder::new();
        b.add("e", "r1", "t1");
        b.add("e", "r2", "t2");
        b.add("t1", "r1", "t2");
        b.build().unwrap()
    }

    #[test]
    fn neighbors_under_cap_are_canonical() {
        let g = small();
        let e = g.entities().id("e").unwrap();
        let t1 = g.entities().id("t1").unwrap();
        let t2 = g.entities().id("t2").unwrap();
        assert_eq!(g.neighbors(e, 50, 0).unwrap(), vec![(0, t1), (1, t2)]);
        // tail incidence shows up under the inverse id
        assert_eq!(g.neighbors(t1, 50, 0).unwrap(), vec![(0, t2), (g.inverse(0), e)]);
    }

    #[test]
    fn capped_neighbors_are_reproducible() {
        let mut b = GraphBuilder::new();
        for i in 0..80 {
            b.add("hub", &format!("r{}", i % 3), &format!("n{i}"));
        }
        let g = b.build().unwrap();
        let hub = g.entities().id("hub").unwrap();
        let a = g.neighbors(hub, 50, 9).unwrap();
        assert_eq!(a.len(), 50);
        assert_eq!(a, g.neighbors(hub, 50, 9).unwrap());
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert_ne!(a, g.neighbors(hub, 50, 10).unwrap());
    }

    #[test]
    fn isolated_entity_has_no_neighbors() {
        let mut b = GraphBuilder::new();
        b.entity("lonely");
        b.add("a", "r", "b");
        let g = b.build().unwrap();
        assert!(g.neighbors(0, 50, 0).unwrap().is_empty());
        assert!(matches!(g.neighbors(99, 50, 0), Err(KgError::UnknownEntityId(99))));
    }

    #[test]
    fn few_shot_relations_stay_out_of_the_index() {
        let mut b = GraphBuilder::new();
        b.add("a", "bg", "b");
        b.add("a", "task", "c");
        let task = b.relation("task");
        b.mark_few_shot(task);
        let g = b.build().unwrap();
        let a = g.entities().id("a").unwrap();
        assert_eq!(g.neighbors(a, 50, 0).unwrap().len(), 1);
        assert!(g.contains(&Triplet::new(a, task, g.entities().id("c").unwrap())));
        assert_eq!(g.background().count(), 1);
    }

    #[test]
    fn duplicates_are_dropped() {
        let mut b = GraphBuilder::new();
        assert!(b.add("a", "r", "b"));
        assert!(!b.add("a", "r", "b"));
        assert_eq!(b.duplicates(), 1);
        assert_eq!(b.build().unwrap().triplets().len(), 1);
    }

    #[test]
    fn empty_graph_is_an_error() {
        assert!(matches!(GraphBuilder::new().build(), Err(KgError::EmptyGraph)));
    }
}
