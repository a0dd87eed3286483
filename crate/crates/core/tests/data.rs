//! Dataset serialization, the synthetic generator and task sampling.

use std::collections::{BTreeSet, HashMap};

use hire_core::kg::{
    generate_synthetic, load_kg, save_dataset, DataFormat, Dataset, GraphBuilder, KgError, SyntheticSpec, Triplet,
};
use hire_core::task::TaskSampler;
use proptest::prelude::*;

fn round_trip(ds: &Dataset, format: DataFormat) -> Dataset {
    let dir = tempfile::tempdir().unwrap();
    save_dataset(ds, dir.path(), format).unwrap();
    load_kg(dir.path(), format).unwrap()
}

#[test]
fn synthetic_benchmark_round_trips() {
    let ds = generate_synthetic(&SyntheticSpec::desk(7)).unwrap();
    assert_eq!(round_trip(&ds, DataFormat::Tsv), ds);
    assert_eq!(round_trip(&ds, DataFormat::GmatchingJson), ds);
}

#[derive(Debug, Clone)]
struct RawGraph {
    entities: usize,
    background: Vec<(usize, usize, usize)>,
    tasks: Vec<(usize, Vec<(usize, usize)>)>,
    candidates: Vec<(usize, usize, Vec<usize>)>,
}

fn raw_graph() -> impl Strategy<Value = RawGraph> {
    (2usize..12).prop_flat_map(|n| {
        let background = prop::collection::vec((0..n, 0usize..3, 0..n), 1..30);
        let tasks = prop::collection::vec((0usize..3, prop::collection::vec((0..n, 0..n), 1..6)), 0..5);
        let candidates = prop::collection::vec((0..n, 0usize..5, prop::collection::vec(0..n, 1..4)), 0..4);
        (Just(n), background, tasks, candidates).prop_map(|(entities, background, tasks, candidates)| RawGraph {
            entities,
            background,
            tasks,
            candidates,
        })
    })
}

fn build(raw: &RawGraph, with_candidates: bool) -> Dataset {
    let mut b = GraphBuilder::new();
    for e in 0..raw.entities {
        b.entity(&format!("ent {e}"));
    }
    for &(h, r, t) in &raw.background {
        b.add(&format!("ent {h}"), &format!("bg/{r}"), &format!("ent {t}"));
    }
    let mut splits: [Vec<usize>; 3] = Default::default();
    for (i, (split, pairs)) in raw.tasks.iter().enumerate() {
        let rel = b.relation(&format!("task{i}"));
        b.mark_few_shot(rel);
        splits[*split].push(rel);
        for &(h, t) in pairs {
            b.add(&format!("ent {h}"), &format!("task{i}"), &format!("ent {t}"));
        }
    }
    let task_rels: Vec<usize> = splits.iter().flatten().copied().collect();
    let candidates = (with_candidates && !task_rels.is_empty()).then(|| {
        let mut map = HashMap::new();
        for (h, r, list) in &raw.candidates {
            let mut list = list.clone();
            list.sort_unstable();
            list.dedup();
            map.insert((*h, task_rels[r % task_rels.len()]), list);
        }
        map
    });
    let [train, dev, test] = splits;
    Dataset {
        graph: b.build().unwrap(),
        train,
        dev,
        test,
        candidates,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn tsv_round_trip_is_identity(raw in raw_graph()) {
        let ds = build(&raw, false);
        prop_assert_eq!(round_trip(&ds, DataFormat::Tsv), ds);
    }

    #[test]
    fn gmatching_round_trip_is_identity(raw in raw_graph()) {
        let ds = build(&raw, true);
        prop_assert_eq!(round_trip(&ds, DataFormat::GmatchingJson), ds);
    }
}

fn one_rule_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        train: 1,
        dev: 0,
        test: 0,
        ..SyntheticSpec::desk(seed)
    }
}

/// Brute-force closure straight from the graph's background triplets.
fn closure_oracle(ds: &Dataset, first: (usize, bool), second: (usize, bool)) -> BTreeSet<(usize, usize)> {
    let edges = |(rel, inv): (usize, bool)| -> Vec<(usize, usize)> {
        let name = format!("bg{rel}");
        ds.graph
            .background()
            .filter(|t| ds.graph.relations().name(t.relation) == name)
            .map(|t| if inv { (t.tail, t.head) } else { (t.head, t.tail) })
            .collect()
    };
    let (a, b) = (edges(first), edges(second));
    let mut out = BTreeSet::new();
    for &(x, z) in &a {
        for &(z2, y) in &b {
            if z == z2 {
                out.insert((x, y));
            }
        }
    }
    out
}

#[test]
fn planted_relation_is_exactly_the_rule_closure() {
    for seed in [7, 8, 9] {
        let spec = one_rule_spec(seed);
        let ds = generate_synthetic(&spec).unwrap();
        let rule = spec.planted_rules().unwrap()[0];
        assert_eq!(ds.train.len(), 1);
        let rel = ds.train[0];
        let planted: BTreeSet<(usize, usize)> = ds.graph.relation_triplets(rel).map(|t| (t.head, t.tail)).collect();
        let oracle = closure_oracle(
            &ds,
            (rule.first.relation, rule.first.inverse),
            (rule.second.relation, rule.second.inverse),
        );
        assert!(!planted.is_empty());
        assert_eq!(planted, oracle, "seed {seed}, rule {rule}");
    }
}

#[test]
fn every_desk_relation_matches_its_rule() {
    let spec = SyntheticSpec::desk(7);
    let ds = generate_synthetic(&spec).unwrap();
    let rules = spec.planted_rules().unwrap();
    let order: Vec<usize> = ds.test.iter().chain(&ds.dev).chain(&ds.train).copied().collect();
    for (rule, rel) in rules.iter().zip(order) {
        let planted: BTreeSet<(usize, usize)> = ds.graph.relation_triplets(rel).map(|t| (t.head, t.tail)).collect();
        let oracle = closure_oracle(
            &ds,
            (rule.first.relation, rule.first.inverse),
            (rule.second.relation, rule.second.inverse),
        );
        assert_eq!(planted, oracle, "{}", ds.graph.relations().name(rel));
        assert!(planted.len() >= spec.min_instances);
    }
}

#[test]
fn generator_is_deterministic() {
    let a = generate_synthetic(&one_rule_spec(7)).unwrap();
    assert_eq!(a, generate_synthetic(&one_rule_spec(7)).unwrap());
    assert_ne!(a, generate_synthetic(&one_rule_spec(8)).unwrap());
}

#[test]
fn pigeonhole_spec_is_infeasible() {
    let spec = SyntheticSpec {
        entities: 3,
        min_instances: 55,
        ..one_rule_spec(7)
    };
    assert!(matches!(generate_synthetic(&spec), Err(KgError::Infeasible(_))));
}

#[test]
fn false_context_corruption_is_balanced() {
    let ds = generate_synthetic(&SyntheticSpec::desk(3)).unwrap();
    let sampler = TaskSampler::new(&ds);
    let g = &ds.graph;
    let (mut relation, mut entity) = (0usize, 0usize);
    let mut seed = 0;
    'outer: for &rel in ds.train.iter().chain(&ds.dev).chain(&ds.test) {
        for t in g.relation_triplets(rel) {
            let ctx = sampler.context(*t, 50, 0).unwrap();
            for f in sampler.synthesize_false_contexts(&ctx, 4, seed).unwrap() {
                seed += 1;
                assert_eq!(f.tuples.len(), ctx.tuples.len());
                for (a, b) in ctx.tuples.iter().zip(&f.tuples) {
                    match (a.0 != b.0, a.1 != b.1) {
                        (true, false) => relation += 1,
                        (false, true) => entity += 1,
                        other => panic!("tuple {a:?} became {b:?}: {other:?}"),
                    }
                }
                if relation + entity >= 10_000 {
                    break 'outer;
                }
            }
        }
    }
    let n = (relation + entity) as f64;
    assert!(n >= 10_000.0, "only {n} corruptions");
    let share = relation as f64 / n;
    assert!((share - 0.5).abs() <= 0.02, "relation share {share}");
}

#[test]
fn contexts_never_mention_task_relations() {
    let ds = generate_synthetic(&SyntheticSpec::desk(5)).unwrap();
    let sampler = TaskSampler::new(&ds);
    let g = &ds.graph;
    let few_shot: BTreeSet<usize> = g.few_shot_relations().iter().flat_map(|&r| [r, g.inverse(r)]).collect();
    for &rel in g.few_shot_relations() {
        for (i, t) in g.relation_triplets(rel).enumerate() {
            let ctx = sampler.context(*t, 50, i as u64).unwrap();
            let falses = sampler.synthesize_false_contexts(&ctx, 2, i as u64).unwrap();
            for c in std::iter::once(&ctx).chain(&falses) {
                for &(r, _) in &c.tuples {
                    assert!(!few_shot.contains(&r), "relation {r} leaked into a context");
                }
            }
        }
    }
}

#[test]
fn every_task_splits_cleanly_and_contains_its_truth() {
    let ds = generate_synthetic(&SyntheticSpec::desk(2)).unwrap();
    let sampler = TaskSampler::new(&ds);
    let g = &ds.graph;
    for (i, &rel) in ds.train.iter().chain(&ds.dev).chain(&ds.test).enumerate() {
        for seed in 0..20 {
            let task = sampler.build_task(rel, 5, 10, 50, seed * 31 + i as u64).unwrap();
            assert_eq!((task.references.len(), task.queries.len()), (5, 10));
            let refs: BTreeSet<_> = task.references.iter().map(|p| (p.head, p.tail)).collect();
            for p in task.references.iter().chain(&task.queries) {
                assert!(p.candidates.binary_search(&p.tail).is_ok());
                assert!(!g.contains(&Triplet::new(p.head, rel, p.negative)));
            }
            assert!(task.queries.iter().all(|q| !refs.contains(&(q.head, q.tail))));
        }
    }
}
