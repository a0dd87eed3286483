//! Margin-based TransE pretraining of entity and relation tables.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::kg::{KgError, KnowledgeGraph, Triplet};
use crate::model::{unit_rows, ENTITY, RELATION};
use crate::tensor::{rng, ParamStore, Tensor};
use crate::Result;

const MARGIN: f64 = 1.0;

/// TransE distance `‖h + r − t‖₂`.
pub fn transe_score(h: &[f64], r: &[f64], t: &[f64]) -> f64 {
    crate::meta::score(h, r, t)
}

fn unit_direction(h: &[f64], r: &[f64], t: &[f64]) -> Vec<f64> {
    let u: Vec<f64> = h.iter().zip(r).zip(t).map(|((h, r), t)| h + r - t).collect();
    let n = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 {
        vec![0.0; u.len()]
    } else {
        u.into_iter().map(|x| x / n).collect()
    }
}

fn clip_to_ball(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 1.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Train on the background triplets with SGD, corrupting head or tail
/// uniformly. Entity rows are kept inside the unit ball. Returns tables
/// `entity` (entities × dim) and `relation` (relations × dim).
pub fn pretrain_transe(g: &KnowledgeGraph, dim: usize, epochs: usize, lr: f64, seed: u64) -> Result<ParamStore> {
    let triplets: Vec<Triplet> = g.background().copied().collect();
    if triplets.is_empty() {
        return Err(KgError::EmptyGraph.into());
    }
    let n_ent = g.num_entities();
    let mut ent = unit_rows(&mut rng::stream(seed, "transe-entity", &[]), n_ent, dim);
    let mut rel = unit_rows(&mut rng::stream(seed, "transe-relation", &[]), g.num_relations(), dim);
    let mut order: Vec<usize> = (0..triplets.len()).collect();

    for epoch in 0..epochs {
        let mut r = rng::stream(seed, "transe-epoch", &[epoch as u64]);
        order.shuffle(&mut r);
        for &i in &order {
            let t = triplets[i];
            let mut neg = t;
            if n_ent > 1 {
                let head_side = r.gen_bool(0.5);
                let original = if head_side { t.head } else { t.tail };
                let e = loop {
                    let e = r.gen_range(0..n_ent);
                    if e != original {
                        break e;
                    }
                };
                if head_side {
                    neg.head = e;
                } else {
                    neg.tail = e;
                }
            }
            let pos_u = unit_direction(ent.row(t.head), rel.row(t.relation), ent.row(t.tail));
            let neg_u = unit_direction(ent.row(neg.head), rel.row(t.relation), ent.row(neg.tail));
            let pos = transe_score(ent.row(t.head), rel.row(t.relation), ent.row(t.tail));
            let negs = transe_score(ent.row(neg.head), rel.row(t.relation), ent.row(neg.tail));
            if MARGIN + pos - negs <= 0.0 {
                continue;
            }
            for k in 0..dim {
                ent.row_mut(t.head)[k] -= lr * pos_u[k];
                ent.row_mut(t.tail)[k] += lr * pos_u[k];
                rel.row_mut(t.relation)[k] -= lr * (pos_u[k] - neg_u[k]);
                ent.row_mut(neg.head)[k] += lr * neg_u[k];
                ent.row_mut(neg.tail)[k] -= lr * neg_u[k];
            }
            for e in [t.head, t.tail, neg.head, neg.tail] {
                clip_to_ball(ent.row_mut(e));
            }
        }
    }
    let mut out = ParamStore::new();
    out.insert(ENTITY, ent);
    out.insert(RELATION, rel);
    Ok(out)
}

/// Extend a relation table to the neighbor space: forward rows are kept and
/// inverse relation `r + n` is initialized as `−r`. Tables that already
/// cover the neighbor space are returned unchanged.
pub fn with_inverse_relations(rel: &Tensor, relations: usize) -> Result<Tensor> {
    if rel.rows() == 2 * relations {
        return Ok(rel.clone());
    }
    if rel.rows() != relations {
        return Err(crate::Error::Config(format!(
            "relation table has {} rows for {relations} relations",
            rel.rows()
        )));
    }
    let mut data = rel.data().to_vec();
    data.extend(rel.data().iter().map(|x| -x));
    Ok(Tensor::matrix(2 * relations, rel.cols(), data)?)
}
