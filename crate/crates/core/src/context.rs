//! Context-level relational learning: attention over a triplet's
//! neighborhood and the contrastive objective against false contexts.

use crate::kg::Neighbor;
use crate::model::{Binder, CTX_SCORE, CTX_WK, CTX_WQ, CTX_WV, ENTITY, RELATION};
use crate::task::TripletContext;
use crate::tensor::{Graph, TensorError, Var};
use crate::{Error, Result};

/// Context vector `c` (length 2d) and attention weights over tuples.
#[derive(Clone, Copy, Debug)]
pub struct ContextEmbedding {
    pub c: Var,
    pub alpha: Var,
}

/// Stack `r ⊕ t` for every tuple into a K×2d matrix.
pub fn encode_tuples(g: &mut Graph, b: &mut Binder<'_>, tuples: &[Neighbor]) -> Result<Var> {
    if tuples.is_empty() {
        return Err(Error::EmptyContext);
    }
    let mut rows = Vec::with_capacity(tuples.len());
    for &(r, t) in tuples {
        let rv = b.row(g, RELATION, r)?;
        let tv = b.row(g, ENTITY, t)?;
        rows.push(g.concat(&[rv, tv], 0)?);
    }
    Ok(g.stack(&rows)?)
}

/// Single-head scaled dot-product self-attention over the rows of `x`.
pub(crate) fn self_attention(g: &mut Graph, x: Var, wq: Var, wk: Var, wv: Var) -> Result<Var, TensorError> {
    let width = g.shape(x)[1];
    let q = g.matmul(x, wq)?;
    let k = g.matmul(x, wk)?;
    let v = g.matmul(x, wv)?;
    let kt = g.transpose(k)?;
    let logits = g.matmul(q, kt)?;
    let logits = g.scale(logits, 1.0 / (width as f64).sqrt())?;
    let a = g.softmax(logits)?;
    g.matmul(a, v)
}

/// Attend over an encoded tuple matrix and pool the original rows.
pub fn attend(g: &mut Graph, b: &mut Binder<'_>, x: Var) -> Result<ContextEmbedding> {
    let shape = g.shape(x).to_vec();
    if shape.len() != 2 || shape[0] == 0 {
        return Err(Error::EmptyContext);
    }
    let (k, width) = (shape[0], shape[1]);
    if width != 2 * b.dim()? {
        return Err(TensorError::Shape(format!("tuple width {width} for dimension {}", b.dim()?)).into());
    }
    let wq = b.weight(g, CTX_WQ)?;
    let wk = b.weight(g, CTX_WK)?;
    let wv = b.weight(g, CTX_WV)?;
    let w = b.weight(g, CTX_SCORE)?;
    let refined = self_attention(g, x, wq, wk, wv)?;
    let w = g.reshape(w, &[width, 1])?;
    let scores = g.matmul(refined, w)?;
    let scores = g.reshape(scores, &[1, k])?;
    let alpha = g.softmax(scores)?;
    let c = g.matmul(alpha, x)?;
    Ok(ContextEmbedding {
        c: g.reshape(c, &[width])?,
        alpha: g.reshape(alpha, &[k])?,
    })
}

pub fn encode_context(g: &mut Graph, b: &mut Binder<'_>, ctx: &TripletContext) -> Result<ContextEmbedding> {
    let x = encode_tuples(g, b, &ctx.tuples)?;
    attend(g, b, x)
}

/// InfoNCE loss of `anchor` against its true context and `negatives`, with
/// cosine similarity and temperature `tau`.
pub fn contrastive_loss(g: &mut Graph, anchor: Var, positive: Var, negatives: &[Var], tau: f64) -> Result<Var> {
    if negatives.is_empty() {
        return Err(Error::Config(
            "contrastive loss needs at least one false context".into(),
        ));
    }
    if tau.is_nan() || tau <= 0.0 {
        return Err(Error::Config(format!("temperature must be positive, got {tau}")));
    }
    let mut logits = Vec::with_capacity(negatives.len() + 1);
    for &other in std::iter::once(&positive).chain(negatives) {
        let s = g.cosine(anchor, other)?;
        let s = g.scale(s, 1.0 / tau)?;
        logits.push(g.reshape(s, &[1])?);
    }
    let logits = g.concat(&logits, 0)?;
    let max = g.value(logits).data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let shifted = g.add_const(logits, -max)?;
    let e = g.exp(shifted)?;
    let s = g.sum(e)?;
    let lse = g.ln(s)?;
    let first = g.slice(shifted, 0, 0, 1)?;
    let first = g.reshape(first, &[])?;
    Ok(g.sub(lse, first)?)
}
