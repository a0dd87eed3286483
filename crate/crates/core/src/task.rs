//! Meta-task construction: reference/query splits, candidate sets,
//! negative tails, triplet contexts and their corrupted variants.

use std::collections::HashMap;

use rand::seq::{index, SliceRandom};
use rand::Rng;

use crate::error::{Error, Result};
use crate::kg::{Dataset, EntityId, KnowledgeGraph, Neighbor, RelationId, Triplet};
use crate::tensor::rng;

/// One (head, tail) pair of a task with its candidate tails and a sampled
/// negative tail.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskPair {
    pub head: EntityId,
    pub tail: EntityId,
    /// Sorted by id; always contains `tail`.
    pub candidates: Vec<EntityId>,
    pub negative: EntityId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FewShotTask {
    pub relation: RelationId,
    pub references: Vec<TaskPair>,
    pub queries: Vec<TaskPair>,
}

/// The neighbor tuples around an anchor triplet.
#[derive(Clone, Debug, PartialEq)]
pub struct TripletContext {
    pub anchor: Triplet,
    pub tuples: Vec<Neighbor>,
    pub corrupted: bool,
}

/// Pure sampling over an immutable dataset. Caches the tail-signature
/// groups used to draw type-like distractors.
#[derive(Debug)]
pub struct TaskSampler<'a> {
    data: &'a Dataset,
    groups: HashMap<&'a [RelationId], Vec<EntityId>>,
}

impl<'a> TaskSampler<'a> {
    pub fn new(data: &'a Dataset) -> Self {
        let g = &data.graph;
        let mut groups: HashMap<&[RelationId], Vec<EntityId>> = HashMap::new();
        for e in 0..g.num_entities() {
            groups.entry(g.tail_signature(e)).or_default().push(e);
        }
        Self { data, groups }
    }

    pub fn graph(&self) -> &'a KnowledgeGraph {
        &self.data.graph
    }

    /// Candidate tails for `(head, relation, tail)`: the released list when
    /// the dataset has one, otherwise the true tail plus entities sharing
    /// its tail signature, padded with uniform entities.
    pub fn candidates(
        &self,
        head: EntityId,
        relation: RelationId,
        tail: EntityId,
        size: usize,
        rng: &mut impl Rng,
    ) -> Result<Vec<EntityId>> {
        if let Some(list) = self.data.candidates.as_ref().and_then(|c| c.get(&(head, relation))) {
            let mut out = list.clone();
            out.push(tail);
            out.sort_unstable();
            out.dedup();
            return Ok(out);
        }
        let g = self.graph();
        let n = g.num_entities();
        if size < 2 || n < size {
            return Err(Error::CandidatePool {
                have: n,
                need: size.max(2),
            });
        }
        let want = size - 1;
        let same: Vec<EntityId> = self
            .groups
            .get(g.tail_signature(tail))
            .into_iter()
            .flatten()
            .copied()
            .filter(|&e| e != tail)
            .collect();
        let mut out: Vec<EntityId> = if same.len() >= want {
            same.choose_multiple(rng, want).copied().collect()
        } else {
            same
        };
        out.push(tail);
        if out.len() < size {
            let mut chosen = vec![false; n];
            for &e in &out {
                chosen[e] = true;
            }
            let rest: Vec<EntityId> = (0..n).filter(|&e| !chosen[e]).collect();
            out.extend(rest.choose_multiple(rng, size - out.len()).copied());
        }
        out.sort_unstable();
        Ok(out)
    }

    /// Uniform draw among candidates that do not form a known triplet.
    pub fn sample_negative(
        &self,
        head: EntityId,
        relation: RelationId,
        candidates: &[EntityId],
        seed: u64,
    ) -> Result<EntityId> {
        let mut r = rng::stream(seed, "negative", &[head as u64, relation as u64]);
        self.negative_from(head, relation, candidates, &mut r)
    }

    fn negative_from(
        &self,
        head: EntityId,
        relation: RelationId,
        candidates: &[EntityId],
        rng: &mut impl Rng,
    ) -> Result<EntityId> {
        let g = self.graph();
        let eligible: Vec<EntityId> = candidates
            .iter()
            .copied()
            .filter(|&c| !g.contains(&Triplet::new(head, relation, c)))
            .collect();
        eligible.choose(rng).copied().ok_or(Error::NoNegative)
    }

    /// Split `relation`'s triplets uniformly into `k` references and `m`
    /// queries, each with candidates and a negative tail.
    pub fn build_task(
        &self,
        relation: RelationId,
        k: usize,
        m: usize,
        candidate_size: usize,
        seed: u64,
    ) -> Result<FewShotTask> {
        let g = self.graph();
        let triplets: Vec<&Triplet> = g.relation_triplets(relation).collect();
        if k == 0 || triplets.len() < k + m {
            return Err(Error::InsufficientTriplets {
                relation,
                have: triplets.len(),
                need: (k + m).max(1),
            });
        }
        let mut r = rng::stream(seed, "task", &[relation as u64]);
        let picked = index::sample(&mut r, triplets.len(), k + m).into_vec();
        let mut pairs = Vec::with_capacity(k + m);
        for i in picked {
            let t = triplets[i];
            let candidates = self.candidates(t.head, relation, t.tail, candidate_size, &mut r)?;
            let negative = self.negative_from(t.head, relation, &candidates, &mut r)?;
            pairs.push(TaskPair {
                head: t.head,
                tail: t.tail,
                candidates,
                negative,
            });
        }
        let queries = pairs.split_off(k);
        Ok(FewShotTask {
            relation,
            references: pairs,
            queries,
        })
    }

    /// Evaluation task: `k` references, every remaining triplet a query.
    pub fn build_eval_task(
        &self,
        relation: RelationId,
        k: usize,
        candidate_size: usize,
        seed: u64,
    ) -> Result<FewShotTask> {
        let m = self.graph().relation_size(relation).saturating_sub(k);
        self.build_task(relation, k, m, candidate_size, seed)
    }

    /// `neighbors(h) ∪ neighbors(t)`, each capped, in canonical order.
    pub fn context(&self, anchor: Triplet, cap: usize, seed: u64) -> Result<TripletContext> {
        let g = self.graph();
        let mut tuples = g.neighbors(anchor.head, cap, seed)?;
        tuples.extend(g.neighbors(anchor.tail, cap, seed)?);
        tuples.sort_unstable();
        tuples.dedup();
        Ok(TripletContext {
            anchor,
            tuples,
            corrupted: false,
        })
    }

    /// `n` corrupted copies of `ctx`. Every tuple gets either its relation
    /// or its entity (probability 1/2 each) replaced by a uniform draw that
    /// differs from the original and from the anchor's own ids.
    pub fn synthesize_false_contexts(&self, ctx: &TripletContext, n: usize, seed: u64) -> Result<Vec<TripletContext>> {
        let g = self.graph();
        let a = ctx.anchor;
        let rel_space: Vec<usize> = (0..g.num_relations())
            .filter(|&r| !g.is_few_shot(r) && r != a.relation)
            .flat_map(|r| [r, g.inverse(r)])
            .collect();
        let n_ent = g.num_entities();
        let mut r = rng::stream(
            seed,
            "false-context",
            &[a.head as u64, a.relation as u64, a.tail as u64],
        );
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let mut tuples = Vec::with_capacity(ctx.tuples.len());
            for &(rel, ent) in &ctx.tuples {
                let rel_ok = rel_space.iter().any(|&x| x != rel);
                let mut excluded = vec![ent, a.head, a.tail];
                excluded.sort_unstable();
                excluded.dedup();
                let ent_ok = n_ent > excluded.len();
                let corrupt_relation = match (rel_ok, ent_ok) {
                    (false, false) => return Err(Error::CannotCorrupt),
                    (true, false) => true,
                    (false, true) => false,
                    (true, true) => r.gen_bool(0.5),
                };
                if corrupt_relation {
                    let new = loop {
                        let x = *rel_space.choose(&mut r).expect("non-empty relation space");
                        if x != rel {
                            break x;
                        }
                    };
                    tuples.push((new, ent));
                } else {
                    let new = loop {
                        let e = r.gen_range(0..n_ent);
                        if e != ent && e != a.head && e != a.tail {
                            break e;
                        }
                    };
                    tuples.push((rel, new));
                }
            }
            out.push(TripletContext {
                anchor: a,
                tuples,
                corrupted: true,
            });
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::GraphBuilder;

    fn dataset(task_triplets: usize) -> Dataset {
        let mut b = GraphBuilder::new();
        for i in 0..40 {
            b.add(&format!("e{i}"), "bg", &format!("e{}", (i + 1) % 40));
        }
        for i in 0..task_triplets {
            b.add(&format!("e{i}"), "task", &format!("e{}", (i * 7 + 3) % 40));
        }
        let task = b.relation("task");
        b.mark_few_shot(task);
        Dataset {
            graph: b.build().unwrap(),
            train: vec![task],
            dev: vec![],
            test: vec![],
            candidates: None,
        }
    }

    #[test]
    fn split_sizes_and_disjointness() {
        let ds = dataset(30);
        let s = TaskSampler::new(&ds);
        let task = s.build_task(ds.train[0], 5, 10, 8, 1).unwrap();
        assert_eq!(task.references.len(), 5);
        assert_eq!(task.queries.len(), 10);
        for q in &task.queries {
            assert!(!task.references.iter().any(|r| r.head == q.head && r.tail == q.tail));
        }
        for p in task.references.iter().chain(&task.queries) {
            assert_eq!(p.candidates.len(), 8);
            assert!(p.candidates.contains(&p.tail));
            assert!(!ds.graph.contains(&Triplet::new(p.head, task.relation, p.negative)));
        }
        assert_eq!(task, s.build_task(ds.train[0], 5, 10, 8, 1).unwrap());
    }

    #[test]
    fn one_shot_task() {
        let ds = dataset(30);
        let s = TaskSampler::new(&ds);
        assert_eq!(s.build_task(ds.train[0], 1, 3, 8, 0).unwrap().references.len(), 1);
    }

    #[test]
    fn insufficient_triplets() {
        let ds = dataset(4);
        let s = TaskSampler::new(&ds);
        assert!(matches!(
            s.build_task(ds.train[0], 5, 0, 8, 0),
            Err(Error::InsufficientTriplets { have: 4, need: 5, .. })
        ));
    }

    #[test]
    fn candidate_pool_too_small() {
        let ds = dataset(10);
        let s = TaskSampler::new(&ds);
        assert!(matches!(
            s.build_task(ds.train[0], 1, 1, 41, 0),
            Err(Error::CandidatePool { .. })
        ));
    }

    #[test]
    fn negatives_exclude_true_tails() {
        let mut b = GraphBuilder::new();
        b.add("h", "r", "t");
        b.add("x", "bg", "y");
        let ds = Dataset {
            graph: b.build().unwrap(),
            train: vec![],
            dev: vec![],
            test: vec![],
            candidates: None,
        };
        let s = TaskSampler::new(&ds);
        let e = |n: &str| ds.graph.entities().id(n).unwrap();
        let r = ds.graph.relations().id("r").unwrap();
        for seed in 0..50 {
            let neg = s.sample_negative(e("h"), r, &[e("t"), e("x"), e("y")], seed).unwrap();
            assert_ne!(neg, e("t"));
        }
        assert_eq!(
            s.sample_negative(e("h"), r, &[e("t"), e("x"), e("y")], 3).unwrap(),
            s.sample_negative(e("h"), r, &[e("t"), e("x"), e("y")], 3).unwrap()
        );
        assert!(matches!(
            s.sample_negative(e("h"), r, &[e("t")], 0),
            Err(Error::NoNegative)
        ));
    }

    #[test]
    fn false_contexts_keep_size_and_differ() {
        let ds = dataset(10);
        let s = TaskSampler::new(&ds);
        let anchor = ds.graph.relation_triplets(ds.train[0]).next().copied().unwrap();
        let ctx = s.context(anchor, 50, 0).unwrap();
        assert!(!ctx.tuples.is_empty());
        for n in [1, 6] {
            let fakes = s.synthesize_false_contexts(&ctx, n, 4).unwrap();
            assert_eq!(fakes.len(), n);
            for f in &fakes {
                assert!(f.corrupted);
                assert_eq!(f.tuples.len(), ctx.tuples.len());
                assert!(f.tuples.iter().zip(&ctx.tuples).all(|(a, b)| a != b));
                for (new, old) in f.tuples.iter().zip(&ctx.tuples) {
                    if new.1 != old.1 {
                        assert!(new.1 != anchor.head && new.1 != anchor.tail);
                    }
                }
            }
        }
    }

    #[test]
    fn contexts_never_contain_task_relations() {
        let ds = dataset(20);
        let s = TaskSampler::new(&ds);
        let task = ds.train[0];
        for t in ds.graph.relation_triplets(task) {
            let ctx = s.context(*t, 50, 0).unwrap();
            assert!(ctx.tuples.iter().all(|&(r, _)| r % ds.graph.num_relations() != task));
        }
    }

    #[test]
    fn one_entity_vocabulary_cannot_corrupt() {
        let single = |names: &[&str]| {
            let mut b = GraphBuilder::new();
            for r in names {
                b.add("a", r, "a");
            }
            Dataset {
                graph: b.build().unwrap(),
                train: vec![],
                dev: vec![],
                test: vec![],
                candidates: None,
            }
        };
        // only the anchor's own relation exists and there is one entity
        let ds = single(&["r"]);
        let s = TaskSampler::new(&ds);
        let ctx = TripletContext {
            anchor: Triplet::new(0, 0, 0),
            tuples: vec![(1, 0)],
            corrupted: false,
        };
        assert!(matches!(
            s.synthesize_false_contexts(&ctx, 1, 0),
            Err(Error::CannotCorrupt)
        ));
        // a second relation makes relation corruption possible
        let ds = single(&["r", "q"]);
        let s = TaskSampler::new(&ds);
        let fakes = s.synthesize_false_contexts(&ctx, 3, 0).unwrap();
        assert!(fakes.iter().all(|f| f.tuples[0].1 == 0 && f.tuples[0].0 != 1));
    }
}
