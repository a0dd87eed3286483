//! Parameter layout, initialization, and binding of parameters into a
//! per-task computation graph.

use std::collections::HashMap;

use rand::Rng;

use crate::tensor::{rng, Graph, ParamStore, Tensor, TensorError, Var};

pub const ENTITY: &str = "entity";
pub const RELATION: &str = "relation";
pub const ENTITY_PROJ: &str = "entity_proj";

pub const CTX_WQ: &str = "ctx.wq";
pub const CTX_WK: &str = "ctx.wk";
pub const CTX_WV: &str = "ctx.wv";
pub const CTX_SCORE: &str = "ctx.score";

pub const SAB_WQ: &str = "sab.wq";
pub const SAB_WK: &str = "sab.wk";
pub const SAB_WV: &str = "sab.wv";
pub const SAB_WO: &str = "sab.wo";
pub const SAB_LN1_GAIN: &str = "sab.ln1.gain";
pub const SAB_LN1_BIAS: &str = "sab.ln1.bias";
pub const SAB_FF1_W: &str = "sab.ff1.w";
pub const SAB_FF1_B: &str = "sab.ff1.b";
pub const SAB_FF2_W: &str = "sab.ff2.w";
pub const SAB_FF2_B: &str = "sab.ff2.b";
pub const SAB_LN2_GAIN: &str = "sab.ln2.gain";
pub const SAB_LN2_BIAS: &str = "sab.ln2.bias";

pub const MLP_W1: &str = "mlp.w1";
pub const MLP_B1: &str = "mlp.b1";
pub const MLP_W2: &str = "mlp.w2";
pub const MLP_B2: &str = "mlp.b2";

pub const HYPER_W: &str = "hyper.w";

/// Embedding dimension of a parameter store.
pub fn embedding_dim(params: &ParamStore) -> Result<usize, TensorError> {
    Ok(params.get(ENTITY)?.cols())
}

fn xavier(r: &mut impl Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| r.gen_range(-a..a)).collect();
    Tensor::new(vec![fan_in, fan_out], data).expect("consistent shape")
}

/// Uniform embedding table with rows scaled to unit norm.
pub fn unit_rows(r: &mut impl Rng, rows: usize, dim: usize) -> Tensor {
    let bound = 6.0 / (dim as f64).sqrt();
    let mut t = Tensor::new(
        vec![rows, dim],
        (0..rows * dim).map(|_| r.gen_range(-bound..bound)).collect(),
    )
    .expect("consistent shape");
    for i in 0..rows {
        let row = t.row_mut(i);
        let n = row.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        row.iter_mut().for_each(|x| *x /= n);
    }
    t
}

/// Fresh parameters for `entities` entities and a neighbor-relation space
/// of `relations` rows. Projection vectors start at zero, so scoring
/// starts as plain translation.
pub fn init_params(entities: usize, relations: usize, dim: usize, seed: u64) -> ParamStore {
    let two = 2 * dim;
    let mut p = ParamStore::new();
    let r = |tag: &str| rng::stream(seed, tag, &[]);

    p.insert(ENTITY, unit_rows(&mut r(ENTITY), entities, dim));
    p.insert(RELATION, unit_rows(&mut r(RELATION), relations, dim));
    p.insert(ENTITY_PROJ, Tensor::zeros(&[entities, dim]));

    for name in [
        CTX_WQ, CTX_WK, CTX_WV, SAB_WQ, SAB_WK, SAB_WV, SAB_WO, SAB_FF1_W, SAB_FF2_W, MLP_W1,
    ] {
        p.insert(name, xavier(&mut r(name), two, two));
    }
    let score = xavier(&mut r(CTX_SCORE), two, 1);
    p.insert(CTX_SCORE, Tensor::vector(score.into_data()));
    p.insert(MLP_W2, xavier(&mut r(MLP_W2), two, dim));
    p.insert(HYPER_W, xavier(&mut r(HYPER_W), dim, dim));
    for name in [SAB_LN1_GAIN, SAB_LN2_GAIN] {
        p.insert(name, Tensor::full(&[two], 1.0));
    }
    for name in [SAB_LN1_BIAS, SAB_LN2_BIAS, SAB_FF1_B, SAB_FF2_B, MLP_B1] {
        p.insert(name, Tensor::zeros(&[two]));
    }
    p.insert(MLP_B2, Tensor::zeros(&[dim]));
    p
}

/// Where a graph leaf came from.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Slot {
    Whole(String),
    Row(String, usize),
}

/// Lazily creates graph leaves for whole parameters and for single rows of
/// embedding tables, so a task only touches the rows it uses.
#[derive(Debug)]
pub struct Binder<'p> {
    params: &'p ParamStore,
    leaves: HashMap<Slot, Var>,
}

impl<'p> Binder<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            leaves: HashMap::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn dim(&self) -> Result<usize, TensorError> {
        embedding_dim(self.params)
    }

    pub fn weight(&mut self, g: &mut Graph, name: &str) -> Result<Var, TensorError> {
        let slot = Slot::Whole(name.to_string());
        if let Some(&v) = self.leaves.get(&slot) {
            return Ok(v);
        }
        let v = g.param(self.params.get(name)?.clone());
        self.leaves.insert(slot, v);
        Ok(v)
    }

    pub fn row(&mut self, g: &mut Graph, table: &str, index: usize) -> Result<Var, TensorError> {
        let slot = Slot::Row(table.to_string(), index);
        if let Some(&v) = self.leaves.get(&slot) {
            return Ok(v);
        }
        let t = self.params.get(table)?;
        if index >= t.rows() {
            return Err(TensorError::Invalid(format!(
                "row {index} out of range for {table} with {} rows",
                t.rows()
            )));
        }
        let v = g.param(Tensor::vector(t.row(index).to_vec()));
        self.leaves.insert(slot, v);
        Ok(v)
    }

    /// Use `v` for `slot` from now on instead of a fresh leaf.
    pub fn bind(&mut self, slot: Slot, v: Var) {
        self.leaves.insert(slot, v);
    }

    /// Bound leaves in a fixed order.
    pub fn slots(&self) -> Vec<(Slot, Var)> {
        let mut s: Vec<_> = self.leaves.iter().map(|(k, v)| (k.clone(), *v)).collect();
        s.sort();
        s
    }

    /// Gradient of `loss` for every bound leaf.
    pub fn gradients(&self, g: &mut Graph, loss: Var) -> Result<Vec<(Slot, Tensor)>, TensorError> {
        let slots = self.slots();
        let vars: Vec<Var> = slots.iter().map(|(_, v)| *v).collect();
        let grads = g.gradients(loss, &vars)?;
        Ok(slots.into_iter().map(|(s, _)| s).zip(grads).collect())
    }
}

/// Add sparse slot gradients into a dense gradient store.
pub fn accumulate(dense: &mut ParamStore, grads: &[(Slot, Tensor)], scale: f64) -> Result<(), TensorError> {
    for (slot, g) in grads {
        match slot {
            Slot::Whole(name) => {
                let d = dense.get_mut(name)?;
                for (a, b) in d.data_mut().iter_mut().zip(g.data()) {
                    *a += scale * b;
                }
            }
            Slot::Row(name, i) => {
                let d = dense.get_mut(name)?;
                for (a, b) in d.row_mut(*i).iter_mut().zip(g.data()) {
                    *a += scale * b;
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_seeded() {
        assert_eq!(init_params(5, 4, 3, 1), init_params(5, 4, 3, 1));
        assert_ne!(init_params(5, 4, 3, 1), init_params(5, 4, 3, 2));
        let p = init_params(5, 4, 3, 1);
        assert_eq!(p.get(SAB_WQ).unwrap().shape(), &[6, 6]);
        assert_eq!(p.get(MLP_W2).unwrap().shape(), &[6, 3]);
        assert_eq!(p.get(ENTITY_PROJ).unwrap(), &Tensor::zeros(&[5, 3]));
    }

    #[test]
    fn rows_bind_once() {
        let p = init_params(5, 4, 3, 1);
        let mut g = Graph::new();
        let mut b = Binder::new(&p);
        let a = b.row(&mut g, ENTITY, 2).unwrap();
        assert_eq!(a, b.row(&mut g, ENTITY, 2).unwrap());
        assert_eq!(g.value(a).data(), p.get(ENTITY).unwrap().row(2));
        assert!(b.row(&mut g, ENTITY, 9).is_err());
    }

    #[test]
    fn sparse_gradients_scatter_into_rows() {
        let p = init_params(4, 2, 2, 0);
        let mut g = Graph::new();
        let mut b = Binder::new(&p);
        let e = b.row(&mut g, ENTITY, 1).unwrap();
        let loss = g.sum(e).unwrap();
        let grads = b.gradients(&mut g, loss).unwrap();
        let mut dense = p.zeros_like();
        accumulate(&mut dense, &grads, 1.0).unwrap();
        let t = dense.get(ENTITY).unwrap();
        assert_eq!(t.row(1), &[1.0, 1.0]);
        assert_eq!(t.row(0), &[0.0, 0.0]);
    }
}
