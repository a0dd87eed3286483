//! Per-task forward pass: meta representation, inner refinement on the
//! reference set, query loss and the contrastive term.

use std::collections::BTreeMap;

use super::config::{MamlOrder, TrainConfig};
use crate::context::{contrastive_loss, encode_context};
use crate::kg::{EntityId, Triplet};
use crate::meta::{
    encode_pairs, margin_loss, mean_representation, meta_representation, mtransd_project, mtransd_score, BranchScale,
    MetaRelation,
};
use crate::model::{Binder, Slot, ENTITY, ENTITY_PROJ};
use crate::task::{FewShotTask, TaskPair, TaskSampler};
use crate::tensor::{rng::derive_seed, Graph, ParamStore, Tensor, TensorError, Var};
use crate::Result;

/// Task parameters after the inner step: refined `R`, refined projection
/// vector, and refined task-local projection vectors of reference entities.
#[derive(Clone, Debug)]
pub struct Refined {
    pub meta: MetaRelation,
    pub proj: BTreeMap<EntityId, Var>,
}

/// Graph nodes of one task's objective.
#[derive(Clone, Copy, Debug)]
pub struct TaskLosses {
    pub total: Var,
    pub query: Var,
    pub support: Var,
    pub contrastive: Option<Var>,
}

/// `R` and its projection vector from the reference pairs.
pub fn reference_meta(
    g: &mut Graph,
    b: &mut Binder<'_>,
    task: &FewShotTask,
    cfg: &TrainConfig,
    scale: BranchScale,
) -> Result<MetaRelation> {
    let mut pairs = Vec::with_capacity(task.references.len());
    for p in &task.references {
        pairs.push((b.row(g, ENTITY, p.head)?, b.row(g, ENTITY, p.tail)?));
    }
    let x = encode_pairs(g, &pairs)?;
    if cfg.no_mrl {
        mean_representation(g, b, x)
    } else {
        meta_representation(g, b, x, scale)
    }
}

/// Embedding of `e` in the task's scoring space. Refined projection vectors
/// take precedence over table rows.
pub fn project_entity(
    g: &mut Graph,
    b: &mut Binder<'_>,
    cfg: &TrainConfig,
    e: EntityId,
    proj: &BTreeMap<EntityId, Var>,
    r_p: Var,
) -> Result<Var> {
    let emb = b.row(g, ENTITY, e)?;
    if cfg.no_mtransd {
        return Ok(emb);
    }
    let p = match proj.get(&e) {
        Some(&p) => p,
        None => b.row(g, ENTITY_PROJ, e)?,
    };
    mtransd_project(g, emb, p, r_p)
}

/// Hinge loss of `pairs` against their negatives.
pub fn pair_loss(
    g: &mut Graph,
    b: &mut Binder<'_>,
    cfg: &TrainConfig,
    pairs: &[TaskPair],
    meta: MetaRelation,
    proj: &BTreeMap<EntityId, Var>,
) -> Result<Var> {
    let mut pos = Vec::with_capacity(pairs.len());
    let mut neg = Vec::with_capacity(pairs.len());
    for p in pairs {
        let h = project_entity(g, b, cfg, p.head, proj, meta.proj)?;
        let t = project_entity(g, b, cfg, p.tail, proj, meta.proj)?;
        let n = project_entity(g, b, cfg, p.negative, proj, meta.proj)?;
        pos.push(mtransd_score(g, h, meta.r, t)?);
        neg.push(mtransd_score(g, h, meta.r, n)?);
    }
    margin_loss(g, &pos, &neg, cfg.margin)
}

fn check_finite(g: &Graph, v: Var, what: &str) -> Result<()> {
    if g.value(v).is_finite() {
        Ok(())
    } else {
        Err(TensorError::NonFiniteGradient(what.to_string()).into())
    }
}

/// One gradient step on the reference loss for `R`, the projection vector
/// and task-local copies of the reference entities' projection vectors.
/// Returns the refined values and the reference loss.
pub fn inner_update(
    g: &mut Graph,
    b: &mut Binder<'_>,
    task: &FewShotTask,
    cfg: &TrainConfig,
    meta: MetaRelation,
) -> Result<(Refined, Var)> {
    let mut local = BTreeMap::new();
    if !cfg.no_mtransd {
        for p in &task.references {
            for e in [p.head, p.tail] {
                local.insert(e, b.row(g, ENTITY_PROJ, e)?);
            }
        }
    }
    let support = pair_loss(g, b, cfg, &task.references, meta, &local)?;

    let mut wrt = vec![meta.r];
    if !cfg.no_mtransd {
        wrt.push(meta.proj);
        wrt.extend(local.values().copied());
    }
    let grads = g.grad(support, &wrt, cfg.order == MamlOrder::Full)?;
    let step = |g: &mut Graph, v: Var, grad: Var, what: &str| -> Result<Var> {
        check_finite(g, grad, what)?;
        let s = g.scale(grad, cfg.inner_lr)?;
        Ok(g.sub(v, s)?)
    };
    let r = step(g, meta.r, grads[0], "inner R")?;
    let refined = if cfg.no_mtransd {
        Refined {
            meta: MetaRelation { r, proj: meta.proj },
            proj: BTreeMap::new(),
        }
    } else {
        let proj = step(g, meta.proj, grads[1], "inner projection")?;
        let mut out = BTreeMap::new();
        for ((&e, &p), &gp) in local.iter().zip(&grads[2..]) {
            out.insert(e, step(g, p, gp, "inner entity projection")?);
        }
        Refined {
            meta: MetaRelation { r, proj },
            proj: out,
        }
    };
    Ok((refined, support))
}

pub fn query_loss(
    g: &mut Graph,
    b: &mut Binder<'_>,
    task: &FewShotTask,
    cfg: &TrainConfig,
    refined: &Refined,
) -> Result<Var> {
    pair_loss(g, b, cfg, &task.queries, refined.meta, &refined.proj)
}

/// Mean contrastive loss over reference anchors with a non-empty context.
/// `None` when no anchor has one.
pub fn contrastive_term(
    g: &mut Graph,
    b: &mut Binder<'_>,
    sampler: &TaskSampler<'_>,
    task: &FewShotTask,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<Option<Var>> {
    let mut losses = Vec::new();
    for (i, p) in task.references.iter().enumerate() {
        let anchor = Triplet {
            head: p.head,
            relation: task.relation,
            tail: p.tail,
        };
        let ctx = sampler.context(anchor, cfg.neighbor_cap, cfg.seed)?;
        if ctx.tuples.is_empty() {
            continue;
        }
        let falses =
            sampler.synthesize_false_contexts(&ctx, cfg.false_contexts, derive_seed(seed, "false", &[i as u64]))?;
        let c = encode_context(g, b, &ctx)?.c;
        let mut negs = Vec::with_capacity(falses.len());
        for f in &falses {
            negs.push(encode_context(g, b, f)?.c);
        }
        let h = b.row(g, ENTITY, p.head)?;
        let t = b.row(g, ENTITY, p.tail)?;
        let a = g.concat(&[h, t], 0)?;
        losses.push(contrastive_loss(g, a, c, &negs, cfg.tau)?);
    }
    if losses.is_empty() {
        return Ok(None);
    }
    let n = losses.len();
    let mut sum = losses[0];
    for &l in &losses[1..] {
        sum = g.add(sum, l)?;
    }
    Ok(Some(g.scale(sum, 1.0 / n as f64)?))
}

/// `L_Q + λ L_c`.
pub fn total_loss(query: f64, contrastive: f64, lambda: f64) -> f64 {
    query + lambda * contrastive
}

/// Full objective of one task.
pub fn task_forward(
    g: &mut Graph,
    b: &mut Binder<'_>,
    sampler: &TaskSampler<'_>,
    task: &FewShotTask,
    cfg: &TrainConfig,
    scale: BranchScale,
    seed: u64,
) -> Result<TaskLosses> {
    let meta = reference_meta(g, b, task, cfg, scale)?;
    let (refined, support) = inner_update(g, b, task, cfg, meta)?;
    let query = query_loss(g, b, task, cfg, &refined)?;
    let lambda = cfg.effective_lambda();
    let contrastive = if lambda > 0.0 {
        contrastive_term(g, b, sampler, task, cfg, seed)?
    } else {
        None
    };
    let total = match contrastive {
        Some(c) => {
            let w = g.scale(c, lambda)?;
            g.add(query, w)?
        }
        None => query,
    };
    Ok(TaskLosses {
        total,
        query,
        support,
        contrastive,
    })
}

/// Loss values and sparse parameter gradients of one task.
#[derive(Clone, Debug)]
pub struct TaskGradient {
    pub loss: f64,
    pub query: f64,
    pub contrastive: Option<f64>,
    pub grads: Vec<(Slot, Tensor)>,
}

pub fn task_gradient(
    params: &ParamStore,
    sampler: &TaskSampler<'_>,
    task: &FewShotTask,
    cfg: &TrainConfig,
    scale: BranchScale,
    seed: u64,
) -> Result<TaskGradient> {
    let mut g = Graph::new();
    let mut b = Binder::new(params);
    let l = task_forward(&mut g, &mut b, sampler, task, cfg, scale, seed)?;
    let grads = b.gradients(&mut g, l.total)?;
    Ok(TaskGradient {
        loss: g.value(l.total).item(),
        query: g.value(l.query).item(),
        contrastive: l.contrastive.map(|c| g.value(c).item()),
        grads,
    })
}
