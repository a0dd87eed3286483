//! Ranking evaluation: MRR and Hits@n over candidate tails.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::kg::{EntityId, RelationId, Triplet};
use crate::meta::{project, score, NO_DROP};
use crate::model::{Binder, ENTITY, ENTITY_PROJ};
use crate::task::{FewShotTask, TaskSampler};
use crate::tensor::{rng::derive_seed, Graph, ParamStore};
use crate::trainer::forward::{inner_update, reference_meta};
use crate::trainer::{MamlOrder, TrainConfig};
use crate::{Error, Result};

/// 1-based rank of `truth` among scored candidates, lower scores first and
/// ties broken by candidate id.
pub fn rank_candidates(scores: &[(EntityId, f64)], truth: EntityId) -> Result<usize> {
    let t = scores
        .iter()
        .find(|(c, _)| *c == truth)
        .map(|&(_, s)| s)
        .ok_or(Error::MissingTruth)?;
    let ahead = scores
        .iter()
        .filter(|&&(c, s)| c != truth && (s < t || (s == t && c < truth)))
        .count();
    Ok(1 + ahead)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskMetrics {
    pub relation: RelationId,
    pub name: String,
    pub queries: usize,
    pub mrr: f64,
    pub hits1: f64,
    pub hits5: f64,
    pub hits10: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub mrr: f64,
    pub hits1: f64,
    pub hits5: f64,
    pub hits10: f64,
    pub queries: usize,
    pub per_task: Vec<TaskMetrics>,
    pub config: String,
}

fn summarize(ranks: &[usize]) -> (f64, f64, f64, f64) {
    let n = ranks.len() as f64;
    let frac = |k: usize| ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
    let mrr = ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n;
    (mrr, frac(1), frac(5), frac(10))
}

impl MetricsReport {
    /// Aggregate per-query ranks of each task over all queries.
    pub fn from_ranks(tasks: Vec<(RelationId, String, Vec<usize>)>, config: impl Into<String>) -> Result<Self> {
        let all: Vec<usize> = tasks.iter().flat_map(|(_, _, r)| r.iter().copied()).collect();
        if all.is_empty() {
            return Err(Error::Metrics("no queries to evaluate".into()));
        }
        if all.contains(&0) {
            return Err(Error::Metrics("rank 0".into()));
        }
        let (mrr, hits1, hits5, hits10) = summarize(&all);
        let per_task = tasks
            .into_iter()
            .filter(|(_, _, r)| !r.is_empty())
            .map(|(relation, name, ranks)| {
                let (mrr, hits1, hits5, hits10) = summarize(&ranks);
                TaskMetrics {
                    relation,
                    name,
                    queries: ranks.len(),
                    mrr,
                    hits1,
                    hits5,
                    hits10,
                }
            })
            .collect();
        let report = Self {
            mrr,
            hits1,
            hits5,
            hits10,
            queries: all.len(),
            per_task,
            config: config.into(),
        };
        report.check()?;
        Ok(report)
    }

    /// Hits@1 ≤ Hits@5 ≤ Hits@10 ≤ 1, MRR in (0, 1] and Hits@1 ≤ MRR.
    pub fn check(&self) -> Result<()> {
        let ok = |m: f64, h1: f64, h5: f64, h10: f64| {
            m > 0.0 && m <= 1.0 && h1 <= h5 && h5 <= h10 && h10 <= 1.0 && h1 <= m && h1 >= 0.0
        };
        if !ok(self.mrr, self.hits1, self.hits5, self.hits10) {
            return Err(Error::Metrics(format!(
                "mrr {} hits@1 {} hits@5 {} hits@10 {}",
                self.mrr, self.hits1, self.hits5, self.hits10
            )));
        }
        for t in &self.per_task {
            if !ok(t.mrr, t.hits1, t.hits5, t.hits10) {
                return Err(Error::Metrics(format!("relation {}", t.name)));
            }
        }
        Ok(())
    }

    /// Tab-separated summary lines followed by a per-relation table.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "config\t{}", self.config);
        let _ = writeln!(s, "queries\t{}", self.queries);
        let _ = writeln!(s, "mrr\t{}", self.mrr);
        let _ = writeln!(s, "hits@10\t{}", self.hits10);
        let _ = writeln!(s, "hits@5\t{}", self.hits5);
        let _ = writeln!(s, "hits@1\t{}", self.hits1);
        let _ = writeln!(s);
        let _ = writeln!(s, "relation\tqueries\tmrr\thits@10\thits@5\thits@1");
        for t in &self.per_task {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{}",
                t.name, t.queries, t.mrr, t.hits10, t.hits5, t.hits1
            );
        }
        s
    }
}

/// Evaluation tasks for `relations`: `k` references, all other triplets as
/// queries. Relations too small for that are skipped with a warning.
pub fn eval_tasks(
    sampler: &TaskSampler<'_>,
    relations: &[RelationId],
    k: usize,
    candidate_size: usize,
    seed: u64,
) -> Result<Vec<FewShotTask>> {
    let mut out = Vec::new();
    for &r in relations {
        if sampler.graph().relation_size(r) <= k {
            log::warn!(
                "skipping relation {} with {} triplets",
                sampler.graph().relations().name(r),
                sampler.graph().relation_size(r)
            );
            continue;
        }
        out.push(sampler.build_eval_task(r, k, candidate_size, derive_seed(seed, "eval-task", &[r as u64]))?);
    }
    Ok(out)
}

/// Ranks of every query of `task` after adapting to its references.
pub fn task_ranks(
    params: &ParamStore,
    sampler: &TaskSampler<'_>,
    task: &FewShotTask,
    cfg: &TrainConfig,
    filtered: bool,
) -> Result<Vec<usize>> {
    let cfg = TrainConfig {
        order: MamlOrder::First,
        ..cfg.clone()
    };
    let mut g = Graph::new();
    let mut b = Binder::new(params);
    let meta = reference_meta(&mut g, &mut b, task, &cfg, NO_DROP)?;
    let (refined, _) = inner_update(&mut g, &mut b, task, &cfg, meta)?;
    let r = g.value(refined.meta.r).data().to_vec();
    let r_p = g.value(refined.meta.proj).data().to_vec();
    let ent = params.get(ENTITY)?;
    let proj_table = params.get(ENTITY_PROJ)?;
    let embed = |e: EntityId| -> Vec<f64> {
        let v = ent.row(e);
        if cfg.no_mtransd {
            return v.to_vec();
        }
        match refined.proj.get(&e) {
            Some(&p) => project(v, g.value(p).data(), &r_p),
            None => project(v, proj_table.row(e), &r_p),
        }
    };
    let graph = sampler.graph();
    let mut ranks = Vec::with_capacity(task.queries.len());
    for q in &task.queries {
        let h = embed(q.head);
        let scores: Vec<(EntityId, f64)> = q
            .candidates
            .iter()
            .filter(|&&c| !filtered || c == q.tail || !graph.contains(&Triplet::new(q.head, task.relation, c)))
            .map(|&c| (c, score(&h, &r, &embed(c))))
            .collect();
        ranks.push(rank_candidates(&scores, q.tail)?);
    }
    Ok(ranks)
}

/// Metrics over all queries of all tasks. Tasks are scored in parallel and
/// aggregated in input order.
pub fn evaluate(
    params: &ParamStore,
    sampler: &TaskSampler<'_>,
    tasks: &[FewShotTask],
    cfg: &TrainConfig,
    filtered: bool,
) -> Result<MetricsReport> {
    let ranks: Vec<Vec<usize>> = tasks
        .par_iter()
        .map(|t| task_ranks(params, sampler, t, cfg, filtered))
        .collect::<Result<_>>()?;
    let rel = sampler.graph().relations();
    let rows = tasks
        .iter()
        .zip(ranks)
        .map(|(t, r)| (t.relation, rel.name(t.relation).to_string(), r))
        .collect();
    MetricsReport::from_ranks(rows, cfg.fingerprint())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rank_examples() {
        assert_eq!(rank_candidates(&[(0, 0.1), (1, 0.5), (2, 0.9)], 0).unwrap(), 1);
        assert_eq!(rank_candidates(&[(1, 0.5), (3, 0.5)], 3).unwrap(), 2);
        assert_eq!(rank_candidates(&[(3, 0.5), (5, 0.5)], 3).unwrap(), 1);
        let worst: Vec<_> = (0..10).map(|c| (c, if c == 9 { 1.0 } else { 0.0 })).collect();
        assert_eq!(rank_candidates(&worst, 9).unwrap(), 10);
        assert!(matches!(rank_candidates(&[(1, 0.0)], 2), Err(Error::MissingTruth)));
    }

    #[test]
    fn metric_arithmetic() {
        let r = MetricsReport::from_ranks(vec![(0, "r".into(), vec![1, 2])], "x").unwrap();
        assert_eq!((r.mrr, r.hits1, r.hits5, r.hits10), (0.75, 0.5, 1.0, 1.0));
        let r = MetricsReport::from_ranks(vec![(0, "r".into(), vec![1, 1, 1])], "x").unwrap();
        assert_eq!((r.mrr, r.hits1), (1.0, 1.0));
        assert!(MetricsReport::from_ranks(vec![(0, "r".into(), vec![])], "x").is_err());
    }

    #[test]
    fn rank_matches_sort_with_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..500 {
            let n = rng.gen_range(1..12);
            let mut ids: Vec<EntityId> = (0..30).collect();
            ids.shuffle(&mut rng);
            let scores: Vec<(EntityId, f64)> = ids[..n].iter().map(|&c| (c, rng.gen_range(0..4) as f64)).collect();
            let truth = scores[rng.gen_range(0..n)].0;
            let mut sorted = scores.clone();
            sorted.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
            let want = 1 + sorted.iter().position(|&(c, _)| c == truth).unwrap();
            assert_eq!(rank_candidates(&scores, truth).unwrap(), want);
        }
    }

    #[test]
    fn report_text_lists_columns() {
        let r = MetricsReport::from_ranks(vec![(0, "rel".into(), vec![1, 3])], "fp/full").unwrap();
        let t = r.to_text();
        for key in ["mrr\t", "hits@10\t", "hits@5\t", "hits@1\t", "fp/full", "rel\t2\t"] {
            assert!(t.contains(key), "{key} missing from {t}");
        }
    }
}
