use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::tensor::rng::derive_seed;
use crate::{Error, Result};

/// How the inner-loop gradient enters the outer gradient.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MamlOrder {
    /// Inner gradient treated as a constant.
    #[default]
    First,
    /// Differentiate through the inner gradient.
    Full,
}

impl FromStr for MamlOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "first" => Ok(Self::First),
            "full" => Ok(Self::Full),
            other => Err(Error::Config(format!("unknown maml order {other:?}"))),
        }
    }
}

/// Components that can be switched off.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ablation {
    /// Plain translation scoring instead of projected scoring.
    NoMtransd,
    /// Mean of reference encodings instead of set attention.
    NoMrl,
    /// Drop the contrastive term.
    NoContext,
}

impl Ablation {
    pub const ALL: [Ablation; 3] = [Ablation::NoMtransd, Ablation::NoMrl, Ablation::NoContext];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::NoMtransd => "no_mtransd",
            Ablation::NoMrl => "no_mrl",
            Ablation::NoContext => "no_context",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation {s:?}")))
    }
}

/// Training hyper-parameters. Read from and written to `key = value` text.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Reference pairs per task.
    pub k: usize,
    /// Query pairs per training task.
    pub m: usize,
    pub candidate_size: usize,
    /// Embedding dimension for freshly initialized tables.
    pub dim: usize,
    pub outer_lr: f64,
    pub inner_lr: f64,
    pub lambda: f64,
    pub margin: f64,
    pub tau: f64,
    pub false_contexts: usize,
    pub tasks_per_step: usize,
    pub max_steps: usize,
    pub eval_interval: usize,
    pub order: MamlOrder,
    pub drop_path: f64,
    pub neighbor_cap: usize,
    pub no_mtransd: bool,
    pub no_mrl: bool,
    pub no_context: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            k: 5,
            m: 10,
            candidate_size: 50,
            dim: 32,
            outer_lr: 0.001,
            inner_lr: 1.0,
            lambda: 0.05,
            margin: 1.0,
            tau: 0.5,
            false_contexts: 1,
            tasks_per_step: 32,
            max_steps: 30_000,
            eval_interval: 1_000,
            order: MamlOrder::First,
            drop_path: 0.2,
            neighbor_cap: 50,
            no_mtransd: false,
            no_mrl: false,
            no_context: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for (name, v) in [("outer_lr", self.outer_lr), ("margin", self.margin), ("tau", self.tau)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.inner_lr >= 0.0 && self.inner_lr.is_finite()) {
            return bad(format!("inner_lr must be non-negative, got {}", self.inner_lr));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be non-negative, got {}", self.lambda));
        }
        if !(0.0..1.0).contains(&self.drop_path) {
            return bad(format!("drop_path must lie in [0, 1), got {}", self.drop_path));
        }
        for (name, v) in [
            ("k", self.k),
            ("m", self.m),
            ("candidate_size", self.candidate_size),
            ("dim", self.dim),
            ("false_contexts", self.false_contexts),
            ("tasks_per_step", self.tasks_per_step),
            ("eval_interval", self.eval_interval),
            ("neighbor_cap", self.neighbor_cap),
        ] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        Ok(())
    }

    pub fn ablations(&self) -> Vec<Ablation> {
        Ablation::ALL.into_iter().filter(|&a| self.has(a)).collect()
    }

    pub fn has(&self, a: Ablation) -> bool {
        match a {
            Ablation::NoMtransd => self.no_mtransd,
            Ablation::NoMrl => self.no_mrl,
            Ablation::NoContext => self.no_context,
        }
    }

    pub fn set(&mut self, a: Ablation) {
        match a {
            Ablation::NoMtransd => self.no_mtransd = true,
            Ablation::NoMrl => self.no_mrl = true,
            Ablation::NoContext => self.no_context = true,
        }
    }

    /// Weight of the contrastive term actually applied.
    pub fn effective_lambda(&self) -> f64 {
        if self.no_context {
            0.0
        } else {
            self.lambda
        }
    }

    /// Short identifier: a hash of the full configuration followed by the
    /// active ablations (or `full`).
    pub fn fingerprint(&self) -> String {
        let hash = derive_seed(0, &self.to_toml(), &[]);
        let ablations: Vec<&str> = self.ablations().iter().map(|a| a.name()).collect();
        let label = if ablations.is_empty() {
            "full".to_string()
        } else {
            ablations.join("+")
        };
        format!("{hash:016x}/{label}")
    }
}
