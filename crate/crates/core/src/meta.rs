//! Triplet-level relational learning (set attention over reference pairs)
//! and entity-level translational scoring with dynamic projections.

use rand::Rng;

use crate::context::self_attention;
use crate::model::{
    Binder, HYPER_W, MLP_B1, MLP_B2, MLP_W1, MLP_W2, SAB_FF1_B, SAB_FF1_W, SAB_FF2_B, SAB_FF2_W, SAB_LN1_BIAS,
    SAB_LN1_GAIN, SAB_LN2_BIAS, SAB_LN2_GAIN, SAB_WK, SAB_WO, SAB_WQ, SAB_WV,
};
use crate::tensor::{Graph, TensorError, Var};
use crate::{Error, Result};

const LN_EPS: f64 = 1e-5;

/// Meta representation `R` of a task relation and its projection vector.
#[derive(Clone, Copy, Debug)]
pub struct MetaRelation {
    pub r: Var,
    pub proj: Var,
}

/// Multipliers for the two residual branches of the set-attention block.
/// `[1.0, 1.0]` disables drop-path.
pub type BranchScale = [f64; 2];

pub const NO_DROP: BranchScale = [1.0, 1.0];

/// Sample drop-path multipliers: each branch is dropped with probability
/// `rate` and rescaled by `1 / (1 - rate)` otherwise.
pub fn drop_path(rate: f64, rng: &mut impl Rng) -> BranchScale {
    if rate <= 0.0 {
        return NO_DROP;
    }
    let keep = 1.0 - rate;
    let mut f = || if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 };
    [f(), f()]
}

/// Stack `h ⊕ t` for reference pairs into a K×2d matrix.
pub fn encode_pairs(g: &mut Graph, pairs: &[(Var, Var)]) -> Result<Var> {
    if pairs.is_empty() {
        return Err(Error::EmptyReferences);
    }
    let mut rows = Vec::with_capacity(pairs.len());
    for &(h, t) in pairs {
        rows.push(g.concat(&[h, t], 0)?);
    }
    Ok(g.stack(&rows)?)
}

/// Set-attention block: attention and feed-forward sublayers, each with a
/// residual connection and layer normalization. Row-permutation equivariant.
pub fn sab(g: &mut Graph, b: &mut Binder<'_>, x: Var, scale: BranchScale) -> Result<Var> {
    let wq = b.weight(g, SAB_WQ)?;
    let wk = b.weight(g, SAB_WK)?;
    let wv = b.weight(g, SAB_WV)?;
    let wo = b.weight(g, SAB_WO)?;
    let att = self_attention(g, x, wq, wk, wv)?;
    let att = g.matmul(att, wo)?;
    let att = g.scale(att, scale[0])?;
    let h = g.add(x, att)?;
    let (gain, bias) = (b.weight(g, SAB_LN1_GAIN)?, b.weight(g, SAB_LN1_BIAS)?);
    let h = g.layer_norm(h, gain, bias, LN_EPS)?;

    let (w1, b1) = (b.weight(g, SAB_FF1_W)?, b.weight(g, SAB_FF1_B)?);
    let (w2, b2) = (b.weight(g, SAB_FF2_W)?, b.weight(g, SAB_FF2_B)?);
    let f = g.linear(h, w1, Some(b1))?;
    let f = g.relu(f)?;
    let f = g.linear(f, w2, Some(b2))?;
    let f = g.scale(f, scale[1])?;
    let out = g.add(h, f)?;
    let (gain, bias) = (b.weight(g, SAB_LN2_GAIN)?, b.weight(g, SAB_LN2_BIAS)?);
    Ok(g.layer_norm(out, gain, bias, LN_EPS)?)
}

/// Two-layer MLP applied row-wise: 2d → 2d (ReLU) → d.
pub fn mlp(g: &mut Graph, b: &mut Binder<'_>, x: Var) -> Result<Var> {
    let (w1, b1) = (b.weight(g, MLP_W1)?, b.weight(g, MLP_B1)?);
    let (w2, b2) = (b.weight(g, MLP_W2)?, b.weight(g, MLP_B2)?);
    let h = g.linear(x, w1, Some(b1))?;
    let h = g.relu(h)?;
    Ok(g.linear(h, w2, Some(b2))?)
}

/// Projection vector for a task relation from its meta representation.
pub fn hyper_net(g: &mut Graph, b: &mut Binder<'_>, r: Var) -> Result<Var> {
    let w = b.weight(g, HYPER_W)?;
    let d = g.shape(r)[0];
    let row = g.reshape(r, &[1, d])?;
    let p = g.matmul(row, w)?;
    Ok(g.reshape(p, &[d])?)
}

fn check_width(g: &Graph, b: &Binder<'_>, x: Var) -> Result<()> {
    let shape = g.shape(x);
    let d = b.dim()?;
    if shape.len() != 2 || shape[1] != 2 * d {
        return Err(TensorError::Shape(format!("reference matrix {shape:?} for dimension {d}")).into());
    }
    if shape[0] == 0 {
        return Err(Error::EmptyReferences);
    }
    Ok(())
}

/// `R = mean(MLP(SAB(X)))` and its projection vector.
pub fn meta_representation(g: &mut Graph, b: &mut Binder<'_>, x: Var, scale: BranchScale) -> Result<MetaRelation> {
    check_width(g, b, x)?;
    let refined = sab(g, b, x, scale)?;
    let rows = mlp(g, b, refined)?;
    let r = g.mean_rows(rows)?;
    let proj = hyper_net(g, b, r)?;
    Ok(MetaRelation { r, proj })
}

/// Ablated variant without set attention: `R = MLP(mean(X))`.
pub fn mean_representation(g: &mut Graph, b: &mut Binder<'_>, x: Var) -> Result<MetaRelation> {
    check_width(g, b, x)?;
    let width = g.shape(x)[1];
    let m = g.mean_rows(x)?;
    let m = g.reshape(m, &[1, width])?;
    let out = mlp(g, b, m)?;
    let d = g.shape(out)[1];
    let r = g.reshape(out, &[d])?;
    let proj = hyper_net(g, b, r)?;
    Ok(MetaRelation { r, proj })
}

/// `e⊥ = r_p (p_eᵀ e) + e`.
pub fn mtransd_project(g: &mut Graph, e: Var, p_e: Var, r_p: Var) -> Result<Var> {
    let s = g.dot(p_e, e)?;
    let shift = g.mul_scalar(r_p, s)?;
    Ok(g.add(e, shift)?)
}

/// `‖h⊥ + R − t⊥‖₂`; lower is better.
pub fn mtransd_score(g: &mut Graph, h: Var, r: Var, t: Var) -> Result<Var> {
    let s = g.add(h, r)?;
    let s = g.sub(s, t)?;
    Ok(g.norm(s)?)
}

/// `Σ max(0, pos + γ − neg)` over paired scores.
pub fn margin_loss(g: &mut Graph, positives: &[Var], negatives: &[Var], gamma: f64) -> Result<Var> {
    if positives.len() != negatives.len() {
        return Err(Error::PairMismatch {
            positives: positives.len(),
            negatives: negatives.len(),
        });
    }
    let mut total = g.scalar(0.0);
    for (&p, &n) in positives.iter().zip(negatives) {
        let d = g.sub(p, n)?;
        let d = g.add_const(d, gamma)?;
        let h = g.relu(d)?;
        total = g.add(total, h)?;
    }
    Ok(total)
}

/// Value-level projection for ranking without a graph.
pub fn project(e: &[f64], p_e: &[f64], r_p: &[f64]) -> Vec<f64> {
    let s: f64 = p_e.iter().zip(e).map(|(a, b)| a * b).sum();
    e.iter().zip(r_p).map(|(x, r)| x + r * s).collect()
}

/// Value-level translational score.
pub fn score(h: &[f64], r: &[f64], t: &[f64]) -> f64 {
    h.iter()
        .zip(r)
        .zip(t)
        .map(|((h, r), t)| (h + r - t).powi(2))
        .sum::<f64>()
        .sqrt()
}
