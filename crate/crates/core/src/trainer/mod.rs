//! Meta-training: per-task inner refinement on the references, query loss
//! plus contrastive term, and Adam on the averaged outer gradient.

mod checkpoint;
mod config;
pub mod forward;
mod transe;

pub use checkpoint::Checkpoint;
pub use config::{Ablation, MamlOrder, TrainConfig};
pub use forward::{task_gradient, total_loss, TaskGradient};
pub use transe::{pretrain_transe, transe_score, with_inverse_relations};

use rand::Rng;
use rayon::prelude::*;

use crate::eval::{eval_tasks, evaluate, MetricsReport};
use crate::kg::{Dataset, RelationId};
use crate::meta::{drop_path, NO_DROP};
use crate::model::{accumulate, init_params, ENTITY, RELATION};
use crate::task::TaskSampler;
use crate::tensor::{adam_step, rng, ParamStore, TensorError};
use crate::{Error, Result};

/// Fresh parameters for `data`, with entity and relation tables taken from
/// `pretrained` when given.
pub fn initial_params(data: &Dataset, cfg: &TrainConfig, pretrained: Option<&ParamStore>) -> Result<ParamStore> {
    let g = &data.graph;
    let dim = match pretrained {
        Some(p) => p.get(ENTITY)?.cols(),
        None => cfg.dim,
    };
    let mut params = init_params(g.num_entities(), g.num_neighbor_relations(), dim, cfg.seed);
    if let Some(p) = pretrained {
        let ent = p.get(ENTITY)?;
        if ent.rows() != g.num_entities() {
            return Err(Error::Config(format!(
                "pretrained entity table has {} rows for {} entities",
                ent.rows(),
                g.num_entities()
            )));
        }
        let rel = p.get(RELATION)?;
        if rel.cols() != dim {
            return Err(Error::Config("pretrained tables differ in dimension".into()));
        }
        params.insert(ENTITY, ent.clone());
        params.insert(RELATION, with_inverse_relations(rel, g.num_relations())?);
    }
    Ok(params)
}

/// Validation metrics recorded at an evaluation step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Validation {
    pub mrr: f64,
    pub hits1: f64,
    pub hits5: f64,
    pub hits10: f64,
}

impl From<&MetricsReport> for Validation {
    fn from(r: &MetricsReport) -> Self {
        Self {
            mrr: r.mrr,
            hits1: r.hits1,
            hits5: r.hits5,
            hits10: r.hits10,
        }
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRecord {
    pub step: usize,
    pub loss: f64,
    pub query_loss: f64,
    pub contrastive_loss: Option<f64>,
    pub validation: Option<Validation>,
}

impl LogRecord {
    pub const HEADER: &'static str =
        "step\tloss\tquery_loss\tcontrastive_loss\tvalid_mrr\tvalid_hits@1\tvalid_hits@5\tvalid_hits@10";

    /// Tab-separated fields; absent values are empty.
    pub fn to_tsv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let v = self.validation;
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.step,
            self.loss,
            self.query_loss,
            opt(self.contrastive_loss),
            opt(v.map(|v| v.mrr)),
            opt(v.map(|v| v.hits1)),
            opt(v.map(|v| v.hits5)),
            opt(v.map(|v| v.hits10)),
        )
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Highest validation MRR, earliest step on ties. Equal to `last` when
    /// there is no validation split.
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub log: Vec<LogRecord>,
}

fn divergence(e: Error, step: usize) -> Error {
    match e {
        Error::Tensor(TensorError::NonFinite { .. } | TensorError::NonFiniteGradient(_)) => {
            Error::Divergence { step: step as u64 }
        }
        other => other,
    }
}

/// Relations of `data.train` with enough triplets for a K+M task.
pub fn trainable_relations(data: &Dataset, cfg: &TrainConfig) -> Vec<RelationId> {
    let g = &data.graph;
    data.train
        .iter()
        .copied()
        .filter(|&r| {
            let ok = g.relation_size(r) >= cfg.k + cfg.m;
            if !ok {
                log::warn!(
                    "relation {} has {} triplets, fewer than k + m; not used for training",
                    g.relations().name(r),
                    g.relation_size(r)
                );
            }
            ok
        })
        .collect()
}

/// Run the outer loop from `start` for `cfg.max_steps` steps in total,
/// validating on the dev split every `cfg.eval_interval` steps and at the
/// end. `on_record` sees each log record as it is produced.
pub fn train(
    data: &Dataset,
    start: Checkpoint,
    cfg: &TrainConfig,
    on_record: &mut dyn FnMut(&LogRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let sampler = TaskSampler::new(data);
    let relations = trainable_relations(data, cfg);
    if relations.is_empty() {
        return Err(Error::NoTasks);
    }
    let valid = eval_tasks(&sampler, &data.dev, cfg.k, cfg.candidate_size, cfg.seed)?;

    let mut current = start;
    current.config = cfg.clone();
    let mut best: Option<Checkpoint> = None;
    let mut log = Vec::new();
    let n = cfg.tasks_per_step;

    while current.step < cfg.max_steps {
        let step = current.step + 1;
        let results: Vec<TaskGradient> = (0..n)
            .into_par_iter()
            .map(|j| {
                let idx = [step as u64, j as u64];
                let mut pick = rng::stream(cfg.seed, "train-relation", &idx);
                let rel = relations[pick.gen_range(0..relations.len())];
                let task = sampler.build_task(
                    rel,
                    cfg.k,
                    cfg.m,
                    cfg.candidate_size,
                    rng::derive_seed(cfg.seed, "train-task", &idx),
                )?;
                let scale = if cfg.no_mrl {
                    NO_DROP
                } else {
                    drop_path(cfg.drop_path, &mut rng::stream(cfg.seed, "drop-path", &idx))
                };
                let seed = rng::derive_seed(cfg.seed, "train-context", &idx);
                task_gradient(&current.params, &sampler, &task, cfg, scale, seed)
            })
            .collect::<Result<_>>()
            .map_err(|e| divergence(e, step))?;

        let mut grads = current.params.zeros_like();
        let inv = 1.0 / n as f64;
        let (mut loss, mut query) = (0.0, 0.0);
        let (mut ctx_sum, mut ctx_n) = (0.0, 0usize);
        for r in &results {
            accumulate(&mut grads, &r.grads, inv)?;
            loss += r.loss * inv;
            query += r.query * inv;
            if let Some(c) = r.contrastive {
                ctx_sum += c;
                ctx_n += 1;
            }
        }
        if !loss.is_finite() {
            return Err(Error::Divergence { step: step as u64 });
        }
        adam_step(&mut current.params, &grads, &mut current.adam, cfg.outer_lr)
            .map_err(|e| divergence(e.into(), step))?;
        current.step = step;

        let mut record = LogRecord {
            step,
            loss,
            query_loss: query,
            contrastive_loss: (ctx_n > 0).then(|| ctx_sum / ctx_n as f64),
            validation: None,
        };
        if !valid.is_empty() && (step.is_multiple_of(cfg.eval_interval) || step == cfg.max_steps) {
            let report = evaluate(&current.params, &sampler, &valid, cfg, true)?;
            current.history.push((step, report.mrr));
            record.validation = Some(Validation::from(&report));
            log::info!("step {step}: loss {loss:.4} valid mrr {:.4}", report.mrr);
            if best
                .as_ref()
                .and_then(Checkpoint::best_mrr)
                .is_none_or(|b| report.mrr > b)
            {
                best = Some(current.clone());
            }
        }
        on_record(&record);
        log.push(record);
    }

    let best = match best {
        Some(mut b) => {
            b.history = current.history.clone();
            b
        }
        None => current.clone(),
    };
    Ok(TrainOutcome {
        best,
        last: current,
        log,
    })
}
