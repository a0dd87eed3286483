use std::path::Path;

use super::config::TrainConfig;
use crate::tensor::{AdamState, ParamStore, Tensor, TensorError, TensorFile};
use crate::{Error, Result};

const KIND: &str = "hire-checkpoint";

/// Parameters, optimizer state and training history at one step.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ParamStore,
    pub adam: AdamState,
    pub step: usize,
    /// `(step, validation MRR)` at every evaluation so far.
    pub history: Vec<(usize, f64)>,
    pub config: TrainConfig,
}

fn meta<'a>(f: &'a TensorFile, key: &str) -> Result<&'a str> {
    f.meta
        .get(key)
        .map(String::as_str)
        .ok_or_else(|| TensorError::Format(format!("checkpoint missing {key}")).into())
}

fn parse<T: std::str::FromStr>(f: &TensorFile, key: &str) -> Result<T> {
    meta(f, key)?
        .parse()
        .map_err(|_| TensorError::Format(format!("bad value for {key}")).into())
}

impl Checkpoint {
    pub fn new(params: ParamStore, config: TrainConfig) -> Self {
        let adam = AdamState::new(&params);
        Self {
            params,
            adam,
            step: 0,
            history: Vec::new(),
            config,
        }
    }

    /// Best validation MRR recorded so far.
    pub fn best_mrr(&self) -> Option<f64> {
        self.history.iter().map(|&(_, m)| m).reduce(f64::max)
    }

    pub fn to_file(&self) -> TensorFile {
        let mut f = TensorFile::default();
        f.meta.insert("kind".into(), KIND.into());
        f.meta.insert("step".into(), self.step.to_string());
        f.meta.insert("config".into(), self.config.to_toml());
        f.meta.insert("adam.step".into(), self.adam.step.to_string());
        f.meta.insert("adam.beta1".into(), self.adam.beta1.to_string());
        f.meta.insert("adam.beta2".into(), self.adam.beta2.to_string());
        f.meta.insert("adam.eps".into(), self.adam.eps.to_string());
        for (name, t) in self.params.iter() {
            f.tensors.insert(format!("param/{name}"), t.clone());
        }
        for (name, t) in self.adam.first_moment.iter() {
            f.tensors.insert(format!("adam.m/{name}"), t.clone());
        }
        for (name, t) in self.adam.second_moment.iter() {
            f.tensors.insert(format!("adam.v/{name}"), t.clone());
        }
        let flat: Vec<f64> = self.history.iter().flat_map(|&(s, m)| [s as f64, m]).collect();
        f.tensors.insert(
            "history".into(),
            Tensor::new(vec![self.history.len(), 2], flat).expect("consistent shape"),
        );
        f
    }

    pub fn from_file(f: &TensorFile) -> Result<Self> {
        if meta(f, "kind")? != KIND {
            return Err(TensorError::Format("not a checkpoint file".into()).into());
        }
        let section = |prefix: &str| -> ParamStore {
            f.tensors
                .iter()
                .filter_map(|(k, t)| k.strip_prefix(prefix).map(|n| (n.to_string(), t.clone())))
                .collect()
        };
        let params = section("param/");
        if params.is_empty() {
            return Err(TensorError::Format("checkpoint has no parameters".into()).into());
        }
        let adam = AdamState {
            first_moment: section("adam.m/"),
            second_moment: section("adam.v/"),
            step: parse(f, "adam.step")?,
            beta1: parse(f, "adam.beta1")?,
            beta2: parse(f, "adam.beta2")?,
            eps: parse(f, "adam.eps")?,
        };
        let h = f.tensor("history")?;
        let history = (0..h.rows()).map(|i| (h.row(i)[0] as usize, h.row(i)[1])).collect();
        Ok(Self {
            params,
            adam,
            step: parse(f, "step")?,
            history,
            config: TrainConfig::from_toml(meta(f, "config")?)?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(self.to_file().save(path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_file(&TensorFile::load(path).map_err(Error::from)?)
    }
}
