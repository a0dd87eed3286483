//! Synthetic few-shot benchmark with planted composition rules.
//!
//! Entities sit on a hidden lattice with one axis per background relation;
//! background relation `k` links an entity to its successor along axis `k`
//! and each such edge is kept with probability `density`. Every planted
//! target relation is the exact closure of a two-step rule
//! `target(x, y) <= a(x, z) and b(z, y)` over the sampled background, where
//! `a` and `b` are background relations, optionally inverted.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, GraphBuilder, KgError, Triplet};
use crate::tensor::rng;

/// A background relation, possibly traversed backwards.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SignedRelation {
    pub relation: usize,
    pub inverse: bool,
}

/// `first` followed by `second`. Written `"0.1'"`: background relation 0,
/// then the inverse of background relation 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Rule {
    pub first: SignedRelation,
    pub second: SignedRelation,
}

impl Rule {
    /// Rules like `r . r^-1` whose closure is (close to) the identity.
    pub fn is_trivial(&self) -> bool {
        self.first.relation == self.second.relation && self.first.inverse != self.second.inverse
    }
}

impl fmt::Display for SignedRelation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.relation, if self.inverse { "'" } else { "" })
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.first, self.second)
    }
}

impl FromStr for SignedRelation {
    type Err = KgError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let (digits, inverse) = match s.strip_suffix('\'') {
            Some(d) => (d, true),
            None => (s, false),
        };
        let relation = digits
            .parse()
            .map_err(|_| KgError::InvalidSpec(format!("bad relation {s:?} in rule")))?;
        Ok(Self { relation, inverse })
    }
}

impl FromStr for Rule {
    type Err = KgError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (a, b) = s
            .split_once('.')
            .ok_or_else(|| KgError::InvalidSpec(format!("rule {s:?} is not \"a.b\"")))?;
        Ok(Self {
            first: a.parse()?,
            second: b.parse()?,
        })
    }
}

impl Serialize for Rule {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Rule {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn default_density() -> f64 {
    0.8
}
fn default_min_instances() -> usize {
    15
}
fn default_retries() -> usize {
    20
}

/// Generator configuration, readable from `key = value` text.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub entities: usize,
    pub background_relations: usize,
    /// Planted rules in assignment order: test first, then dev, then
    /// train. Empty means "enumerate automatically".
    #[serde(default)]
    pub rules: Vec<Rule>,
    #[serde(default = "default_density")]
    pub density: f64,
    /// Side of each lattice block. Entities are laid out in consecutive
    /// blocks of `block_side ^ background_relations`; 0 puts them all on
    /// one lattice.
    #[serde(default)]
    pub block_side: usize,
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    /// Minimum closure size of every planted relation (at least K + M).
    #[serde(default = "default_min_instances")]
    pub min_instances: usize,
    #[serde(default = "default_retries")]
    pub max_retries: usize,
    #[serde(default)]
    pub seed: u64,
}

impl SyntheticSpec {
    /// The desk-scale benchmark used by the end-to-end tests.
    pub fn desk(seed: u64) -> Self {
        Self {
            entities: 200,
            background_relations: 2,
            rules: Vec::new(),
            density: default_density(),
            block_side: 3,
            train: 10,
            dev: 2,
            test: 3,
            min_instances: default_min_instances(),
            max_retries: default_retries(),
            seed,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, KgError> {
        toml::from_str(text).map_err(|e| KgError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }

    /// Rules actually planted: the explicit list, or an enumeration with
    /// non-trivial rules (in seeded order) ahead of trivial ones.
    pub fn planted_rules(&self) -> Result<Vec<Rule>, KgError> {
        let wanted = self.train + self.dev + self.test;
        let rules = if self.rules.is_empty() {
            let signed: Vec<SignedRelation> = (0..self.background_relations)
                .flat_map(|relation| [false, true].map(|inverse| SignedRelation { relation, inverse }))
                .collect();
            let mut all: Vec<Rule> = signed
                .iter()
                .flat_map(|&first| signed.iter().map(move |&second| Rule { first, second }))
                .collect();
            all.shuffle(&mut rng::stream(self.seed, "synthetic-rules", &[]));
            all.sort_by_key(Rule::is_trivial);
            all.truncate(wanted);
            all
        } else {
            self.rules.clone()
        };
        if rules.len() != wanted {
            return Err(KgError::InvalidSpec(format!(
                "{} rules for {wanted} planted relations",
                rules.len()
            )));
        }
        for r in &rules {
            for s in [r.first, r.second] {
                if s.relation >= self.background_relations {
                    return Err(KgError::InvalidSpec(format!(
                        "rule {r} uses background relation {} of {}",
                        s.relation, self.background_relations
                    )));
                }
            }
        }
        Ok(rules)
    }

    fn validate(&self) -> Result<(), KgError> {
        if self.entities == 0 || self.background_relations == 0 {
            return Err(KgError::InvalidSpec("needs entities and background relations".into()));
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            return Err(KgError::InvalidSpec(format!("density {} not in (0, 1]", self.density)));
        }
        Ok(())
    }
}

/// Side length of the hidden lattice.
fn lattice_side(entities: usize, axes: usize) -> usize {
    let mut side: usize = 1;
    while side.pow(axes as u32) < entities {
        side += 1;
    }
    side
}

/// Closure `{(x, y) : exists z, a(x, z) and b(z, y)}` over `(head, tail)`
/// edge lists indexed by background relation, sorted and deduplicated.
pub fn rule_closure(edges: &[Vec<(usize, usize)>], rule: &Rule) -> Vec<(usize, usize)> {
    let step = |s: SignedRelation| -> HashMap<usize, Vec<usize>> {
        let mut m: HashMap<usize, Vec<usize>> = HashMap::new();
        for &(h, t) in &edges[s.relation] {
            let (from, to) = if s.inverse { (t, h) } else { (h, t) };
            m.entry(from).or_default().push(to);
        }
        m
    };
    let first = step(rule.first);
    let second = step(rule.second);
    let mut out = BTreeSet::new();
    for (&x, zs) in &first {
        for z in zs {
            for &y in second.get(z).into_iter().flatten() {
                out.insert((x, y));
            }
        }
    }
    out.into_iter().collect()
}

fn sample_background(spec: &SyntheticSpec, attempt: usize) -> Vec<Vec<(usize, usize)>> {
    let side = match spec.block_side {
        0 => lattice_side(spec.entities, spec.background_relations),
        s => s,
    };
    let mut r = rng::stream(spec.seed, "synthetic-background", &[attempt as u64]);
    let mut edges = vec![Vec::new(); spec.background_relations];
    for x in 0..spec.entities {
        let mut stride = 1;
        for list in edges.iter_mut() {
            let coord = (x / stride) % side;
            let y = x + stride;
            if coord + 1 < side && y < spec.entities && r.gen::<f64>() < spec.density {
                list.push((x, y));
            }
            stride *= side;
        }
    }
    edges
}

/// Generate a dataset whose train/dev/test task relations are planted rule
/// closures. Resamples the background up to `max_retries` times when a
/// closure falls short of `min_instances`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset, KgError> {
    spec.validate()?;
    let rules = spec.planted_rules()?;
    let mut shortfall = String::new();
    for attempt in 0..=spec.max_retries {
        let edges = sample_background(spec, attempt);
        let closures: Vec<_> = rules.iter().map(|r| rule_closure(&edges, r)).collect();
        if let Some((i, c)) = closures.iter().enumerate().find(|(_, c)| c.len() < spec.min_instances) {
            shortfall = format!(
                "rule {} has {} instances, needs {}",
                rules[i],
                c.len(),
                spec.min_instances
            );
            continue;
        }

        let mut b = GraphBuilder::new();
        for e in 0..spec.entities {
            b.entity(&format!("e{e}"));
        }
        for k in 0..spec.background_relations {
            b.relation(&format!("bg{k}"));
        }
        for (k, list) in edges.iter().enumerate() {
            for &(h, t) in list {
                b.add_ids(Triplet::new(h, k, t));
            }
        }
        // assignment order is test, dev, train; ids follow train, dev, test
        let (test_rules, rest) = closures.split_at(spec.test);
        let (dev_rules, train_rules) = rest.split_at(spec.dev);
        let mut splits: [Vec<usize>; 3] = Default::default();
        let named = [
            ("train", train_rules, spec.test + spec.dev),
            ("dev", dev_rules, spec.test),
            ("test", test_rules, 0),
        ];
        for (slot, (name, group, offset)) in splits.iter_mut().zip(named) {
            for (j, closure) in group.iter().enumerate() {
                let rule = rules[offset + j];
                let rel = b.relation(&format!("{name}{j}_{}", rule.to_string().replace('\'', "i")));
                b.mark_few_shot(rel);
                slot.push(rel);
                for &(h, t) in closure {
                    b.add_ids(Triplet::new(h, rel, t));
                }
            }
        }
        let [train, dev, test] = splits;
        return Ok(Dataset {
            graph: b.build()?,
            train,
            dev,
            test,
            candidates: None,
        });
    }
    Err(KgError::Infeasible(format!(
        "{shortfall} after {} attempts",
        spec.max_retries + 1
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rule_syntax_round_trips() {
        let r: Rule = "0.1'".parse().unwrap();
        assert_eq!(
            r.first,
            SignedRelation {
                relation: 0,
                inverse: false
            }
        );
        assert_eq!(
            r.second,
            SignedRelation {
                relation: 1,
                inverse: true
            }
        );
        assert_eq!(r.to_string(), "0.1'");
        assert!("0-1".parse::<Rule>().is_err());
    }

    #[test]
    fn closure_of_a_chain() {
        let edges = vec![vec![(0, 1), (1, 2)], vec![(2, 3)]];
        let r = Rule {
            first: SignedRelation {
                relation: 0,
                inverse: false,
            },
            second: SignedRelation {
                relation: 0,
                inverse: false,
            },
        };
        assert_eq!(rule_closure(&edges, &r), vec![(0, 2)]);
        let r = Rule {
            first: SignedRelation {
                relation: 0,
                inverse: false,
            },
            second: SignedRelation {
                relation: 1,
                inverse: false,
            },
        };
        assert_eq!(rule_closure(&edges, &r), vec![(1, 3)]);
    }

    #[test]
    fn tiny_spec_is_infeasible() {
        let mut spec = SyntheticSpec::desk(1);
        spec.entities = 3;
        spec.min_instances = 55;
        spec.max_retries = 3;
        assert!(matches!(generate_synthetic(&spec), Err(KgError::Infeasible(_))));
    }

    #[test]
    fn auto_rules_put_trivial_ones_last() {
        let rules = SyntheticSpec::desk(5).planted_rules().unwrap();
        assert_eq!(rules.len(), 15);
        assert!(rules[..12].iter().all(|r| !r.is_trivial()));
    }

    #[test]
    fn spec_reads_key_value_text() {
        let spec = SyntheticSpec::from_toml(
            "entities = 50\nbackground_relations = 2\ntrain = 1\ndev = 0\ntest = 1\nrules = [\"0.1\", \"1.0'\"]\nseed = 3\n",
        )
        .unwrap();
        assert_eq!(spec.rules.len(), 2);
        assert_eq!(spec.density, 0.8);
        assert_eq!(SyntheticSpec::from_toml(&spec.to_toml()).unwrap(), spec);
    }
}
