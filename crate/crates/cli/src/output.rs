use std::fmt::Write as _;

use hire_core::kg::Dataset;
use hire_core::tensor::TensorFile;

use crate::SweepParam;

pub fn param_name(p: SweepParam) -> &'static str {
    match p {
        SweepParam::Lambda => "lambda",
        SweepParam::FalseContexts => "false_contexts",
        SweepParam::InnerLr => "inner_lr",
    }
}

pub fn dataset_summary(ds: &Dataset) -> String {
    let g = &ds.graph;
    let mut s = String::new();
    let _ = writeln!(s, "entities\t{}", g.num_entities());
    let _ = writeln!(s, "relations\t{}", g.num_relations());
    let _ = writeln!(s, "triplets\t{}", g.triplets().len());
    let _ = writeln!(s, "background\t{}", g.background().count());
    for (split, rels) in [("train", &ds.train), ("dev", &ds.dev), ("test", &ds.test)] {
        let _ = writeln!(s, "{split}_relations\t{}", rels.len());
        for &r in rels.iter() {
            let _ = writeln!(s, "  {}\t{}", g.relations().name(r), g.relation_size(r));
        }
    }
    let _ = writeln!(s, "candidate_lists\t{}", ds.candidates.as_ref().map_or(0, |c| c.len()));
    s
}

pub fn tensor_summary(f: &TensorFile) -> String {
    let mut s = String::new();
    for (k, v) in &f.meta {
        if k == "config" {
            let _ = writeln!(s, "config:");
            for line in v.lines() {
                let _ = writeln!(s, "  {line}");
            }
        } else {
            let _ = writeln!(s, "{k}\t{v}");
        }
    }
    if let Ok(h) = f.tensor("history") {
        for i in 0..h.rows() {
            let _ = writeln!(s, "valid_mrr@{}\t{}", h.row(i)[0], h.row(i)[1]);
        }
    }
    let mut total = 0;
    for (name, t) in &f.tensors {
        total += t.numel();
        let _ = writeln!(s, "tensor\t{name}\t{:?}", t.shape());
    }
    let _ = writeln!(s, "values\t{total}");
    s
}
