//! Dataset ingestion and serialization.
//!
//! Both layouts are directories. The TSV layout:
//!
//! ```text
//! entities.txt      optional, one entity name per line, fixes id order
//! relations.txt     optional, one relation name per line
//! background.tsv    head<TAB>relation<TAB>tail
//! train_tasks.tsv   optional, triplets of few-shot training relations
//! dev_tasks.tsv     optional
//! test_tasks.tsv    optional
//! ```
//!
//! The gmatching-json layout replaces the background file with `path_graph`
//! (TSV) and the task files with `{train,dev,test}_tasks.json`, each an
//! object `relation -> [[head, relation, tail], ...]`. An optional
//! `candidates.json` maps `"head relation"` to a list of candidate tails.
//!
//! A plain TSV file (not a directory) loads as a background-only graph.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde_json::{Map, Value};

use super::{Dataset, EntityId, GraphBuilder, KgError, RelationId, Triplet};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataFormat {
    Tsv,
    GmatchingJson,
}

impl std::str::FromStr for DataFormat {
    type Err = KgError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tsv" => Ok(DataFormat::Tsv),
            "gmatching-json" | "gmatching" | "json" => Ok(DataFormat::GmatchingJson),
            other => Err(KgError::Config(format!("unknown data format {other:?}"))),
        }
    }
}

const SPLITS: [&str; 3] = ["train", "dev", "test"];

fn read_tsv(builder: &mut GraphBuilder, path: &Path, mut on_relation: impl FnMut(RelationId)) -> Result<(), KgError> {
    let text = fs::read_to_string(path)?;
    let before = builder.duplicates();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 || fields.iter().any(|f| f.is_empty()) {
            return Err(KgError::Malformed {
                file: path.display().to_string(),
                line: i + 1,
                msg: format!("expected 3 tab-separated fields, got {:?}", line),
            });
        }
        builder.add(fields[0], fields[1], fields[2]);
        on_relation(builder.relation(fields[1]));
    }
    let dups = builder.duplicates() - before;
    if dups > 0 {
        log::warn!("{}: dropped {dups} duplicate triplets", path.display());
    }
    Ok(())
}

fn read_vocab(builder: &mut GraphBuilder, dir: &Path) -> Result<(), KgError> {
    let ents = dir.join("entities.txt");
    if ents.exists() {
        for name in fs::read_to_string(&ents)?.lines().filter(|l| !l.is_empty()) {
            builder.entity(name);
        }
    }
    let rels = dir.join("relations.txt");
    if rels.exists() {
        for name in fs::read_to_string(&rels)?.lines().filter(|l| !l.is_empty()) {
            builder.relation(name);
        }
    }
    Ok(())
}

fn push_unique(list: &mut Vec<RelationId>, r: RelationId) {
    if !list.contains(&r) {
        list.push(r);
    }
}

fn read_json_tasks(builder: &mut GraphBuilder, path: &Path, split: &mut Vec<RelationId>) -> Result<(), KgError> {
    let file = path.display().to_string();
    let malformed = |msg: String| KgError::Malformed {
        file: file.clone(),
        line: 0,
        msg,
    };
    let value: Value = serde_json::from_str(&fs::read_to_string(path)?)?;
    let obj = value
        .as_object()
        .ok_or_else(|| malformed("task file must be a JSON object".into()))?;
    let before = builder.duplicates();
    for (rel_name, triples) in obj {
        let rel = builder.relation(rel_name);
        builder.mark_few_shot(rel);
        push_unique(split, rel);
        let triples = triples
            .as_array()
            .ok_or_else(|| malformed(format!("relation {rel_name}: expected an array")))?;
        for (i, tr) in triples.iter().enumerate() {
            let parts: Option<Vec<&str>> = tr.as_array().map(|a| a.iter().filter_map(Value::as_str).collect());
            match parts.as_deref() {
                Some([h, r, t]) if *r == rel_name => {
                    builder.add(h, r, t);
                }
                _ => {
                    return Err(malformed(format!(
                        "relation {rel_name}, entry {i}: expected [head, {rel_name}, tail]"
                    )))
                }
            }
        }
    }
    let dups = builder.duplicates() - before;
    if dups > 0 {
        log::warn!("{}: dropped {dups} duplicate triplets", path.display());
    }
    Ok(())
}

type CandidateMap = HashMap<(EntityId, RelationId), Vec<EntityId>>;

fn read_candidates(builder: &mut GraphBuilder, path: &Path) -> Result<CandidateMap, KgError> {
    let file = path.display().to_string();
    let value: Value = serde_json::from_str(&fs::read_to_string(path)?)?;
    let obj = value.as_object().ok_or_else(|| KgError::Malformed {
        file: file.clone(),
        line: 0,
        msg: "candidate file must be a JSON object".into(),
    })?;
    let mut out = HashMap::new();
    for (key, list) in obj {
        let (head, rel) = key.rsplit_once(' ').ok_or_else(|| KgError::Malformed {
            file: file.clone(),
            line: 0,
            msg: format!("candidate key {key:?} is not \"head relation\""),
        })?;
        let h = builder
            .entity_id(head)
            .ok_or_else(|| KgError::UnknownEntity(head.to_string()))?;
        let r = builder.relation(rel);
        let names = list.as_array().ok_or_else(|| KgError::Malformed {
            file: file.clone(),
            line: 0,
            msg: format!("candidates for {key:?} must be an array"),
        })?;
        let mut ids = Vec::with_capacity(names.len());
        for n in names {
            let n = n.as_str().unwrap_or_default();
            ids.push(
                builder
                    .entity_id(n)
                    .ok_or_else(|| KgError::UnknownEntity(n.to_string()))?,
            );
        }
        out.insert((h, r), ids);
    }
    Ok(out)
}

/// Load a dataset directory (or a single TSV file) in the given layout.
pub fn load_kg(path: impl AsRef<Path>, format: DataFormat) -> Result<Dataset, KgError> {
    let path = path.as_ref();
    let mut b = GraphBuilder::new();
    let mut splits: [Vec<RelationId>; 3] = Default::default();
    let mut candidates = None;

    if path.is_file() {
        read_tsv(&mut b, path, |_| {})?;
    } else {
        read_vocab(&mut b, path)?;
        match format {
            DataFormat::Tsv => {
                read_tsv(&mut b, &path.join("background.tsv"), |_| {})?;
                for (split, name) in splits.iter_mut().zip(SPLITS) {
                    let p = path.join(format!("{name}_tasks.tsv"));
                    if p.exists() {
                        let mut rels = Vec::new();
                        read_tsv(&mut b, &p, |r| push_unique(&mut rels, r))?;
                        for &r in &rels {
                            b.mark_few_shot(r);
                        }
                        *split = rels;
                    }
                }
            }
            DataFormat::GmatchingJson => {
                let bg = path.join("path_graph");
                if bg.exists() {
                    read_tsv(&mut b, &bg, |_| {})?;
                }
                for (split, name) in splits.iter_mut().zip(SPLITS) {
                    let p = path.join(format!("{name}_tasks.json"));
                    if p.exists() {
                        read_json_tasks(&mut b, &p, split)?;
                    }
                }
                let c = path.join("candidates.json");
                if c.exists() {
                    candidates = Some(read_candidates(&mut b, &c)?);
                }
            }
        }
    }
    let graph = b.build()?;
    let [train, dev, test] = splits;
    Ok(Dataset {
        graph,
        train,
        dev,
        test,
        candidates,
    })
}

fn triplet_line(ds: &Dataset, t: &Triplet) -> String {
    let g = &ds.graph;
    format!(
        "{}\t{}\t{}\n",
        g.entities().name(t.head),
        g.relations().name(t.relation),
        g.entities().name(t.tail)
    )
}

/// Write a dataset directory that [`load_kg`] reads back to an equal value.
pub fn save_dataset(ds: &Dataset, dir: impl AsRef<Path>, format: DataFormat) -> Result<(), KgError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let g = &ds.graph;
    fs::write(dir.join("entities.txt"), g.entities().names().join("\n") + "\n")?;
    fs::write(dir.join("relations.txt"), g.relations().names().join("\n") + "\n")?;

    let mut bg = String::new();
    for t in g.background() {
        bg.push_str(&triplet_line(ds, t));
    }
    let splits = [&ds.train, &ds.dev, &ds.test];
    match format {
        DataFormat::Tsv => {
            fs::write(dir.join("background.tsv"), bg)?;
            for (rels, name) in splits.into_iter().zip(SPLITS) {
                let mut s = String::new();
                for &r in rels {
                    for t in g.relation_triplets(r) {
                        s.push_str(&triplet_line(ds, t));
                    }
                }
                fs::write(dir.join(format!("{name}_tasks.tsv")), s)?;
            }
        }
        DataFormat::GmatchingJson => {
            fs::write(dir.join("path_graph"), bg)?;
            for (rels, name) in splits.into_iter().zip(SPLITS) {
                let mut obj = Map::new();
                for &r in rels {
                    let rn = g.relations().name(r);
                    let list = g
                        .relation_triplets(r)
                        .map(|t| Value::from(vec![g.entities().name(t.head), rn, g.entities().name(t.tail)]))
                        .collect();
                    obj.insert(rn.to_string(), Value::Array(list));
                }
                fs::write(
                    dir.join(format!("{name}_tasks.json")),
                    serde_json::to_string_pretty(&Value::Object(obj))?,
                )?;
            }
            if let Some(c) = &ds.candidates {
                let mut keys: Vec<_> = c.keys().copied().collect();
                keys.sort_unstable();
                let mut obj = Map::new();
                for k in keys {
                    let mut key = String::new();
                    let _ = write!(key, "{} {}", g.entities().name(k.0), g.relations().name(k.1));
                    let names = c[&k].iter().map(|&e| Value::from(g.entities().name(e))).collect();
                    obj.insert(key, Value::Array(names));
                }
                fs::write(
                    dir.join("candidates.json"),
                    serde_json::to_string_pretty(&Value::Object(obj))?,
                )?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tsv_file_counts() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.tsv");
        fs::write(&p, "a\tr1\tb\nb\tr2\tc\n").unwrap();
        let ds = load_kg(&p, DataFormat::Tsv).unwrap();
        assert_eq!(ds.graph.num_entities(), 3);
        assert_eq!(ds.graph.num_relations(), 2);
        assert_eq!(ds.graph.triplets().len(), 2);
    }

    #[test]
    fn empty_file_is_empty_graph() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.tsv");
        fs::write(&p, "").unwrap();
        assert!(matches!(load_kg(&p, DataFormat::Tsv), Err(KgError::EmptyGraph)));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.tsv");
        fs::write(&p, "a\tr\tb\nbroken line\n").unwrap();
        match load_kg(&p, DataFormat::Tsv) {
            Err(KgError::Malformed { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn gmatching_task_file() {
        let dir = tempfile::tempdir().unwrap();
        let triples: Vec<Value> = (0..60)
            .map(|i| Value::from(vec![format!("h{i}"), "rel".into(), format!("t{i}")]))
            .collect();
        let mut obj = Map::new();
        obj.insert("rel".into(), Value::Array(triples));
        fs::write(
            dir.path().join("train_tasks.json"),
            serde_json::to_string(&Value::Object(obj)).unwrap(),
        )
        .unwrap();
        let ds = load_kg(dir.path(), DataFormat::GmatchingJson).unwrap();
        assert_eq!(ds.train.len(), 1);
        assert_eq!(ds.graph.few_shot_relations().len(), 1);
        assert_eq!(ds.graph.relation_size(ds.train[0]), 60);
    }

    #[test]
    fn unknown_candidate_entity() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("path_graph"), "a\tr\tb\n").unwrap();
        fs::write(dir.path().join("candidates.json"), r#"{"a r": ["b", "zzz"]}"#).unwrap();
        assert!(matches!(
            load_kg(dir.path(), DataFormat::GmatchingJson),
            Err(KgError::UnknownEntity(e)) if e == "zzz"
        ));
    }
}
