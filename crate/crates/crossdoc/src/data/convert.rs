//! Best-effort converter from CodRED-style release files into the canonical
//! dataset schema.
//!
//! Expected inputs (see the README for the full field mapping):
//!
//! * a bag file: a JSON array of entries
//!   `{"h": <entity>, "t": <entity>, "r": <name> | "relations": [<name>...],
//!     "paths": [[<doc key>, <doc key>], ...]}`
//! * a document file: a JSON object mapping doc keys to DocRED-style records
//!   `{"sents": [[token, ...], ...], "vertexSet": [[{"name", "id"?,
//!     "sent_id", "pos": [start, end]}, ...], ...]}`
//!
//! A vertex cluster's entity id is its `id` field when present, else its
//! `name`. Bags whose documents are missing, or whose target entities have no
//! mention on their side of a path, are skipped with a warning rather than
//! failing the whole conversion.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::Deserialize;

use crate::data::{Dataset, Document, DocumentBag, LabelSpace, Mention, TextPath, NA_LABEL};
use crate::error::{Error, Result};

#[derive(Debug, Deserialize)]
struct RawBag {
    h: String,
    t: String,
    #[serde(default)]
    r: Option<String>,
    #[serde(default)]
    relations: Vec<String>,
    paths: Vec<(String, String)>,
}

#[derive(Debug, Deserialize)]
struct RawVertex {
    #[serde(default)]
    id: Option<String>,
    #[serde(default)]
    name: Option<String>,
    sent_id: usize,
    pos: (usize, usize),
}

#[derive(Debug, Deserialize)]
struct RawDoc {
    #[serde(alias = "sentences")]
    sents: Vec<Vec<String>>,
    #[serde(default, alias = "vertexSet")]
    vertex_set: Vec<Vec<RawVertex>>,
}

impl RawDoc {
    fn to_document(&self) -> Document {
        let mut mentions = Vec::new();
        for cluster in &self.vertex_set {
            let entity = cluster
                .iter()
                .find_map(|v| v.id.clone())
                .or_else(|| cluster.iter().find_map(|v| v.name.clone()));
            let Some(entity) = entity else { continue };
            for v in cluster {
                mentions.push(Mention {
                    entity: entity.clone(),
                    sent: v.sent_id,
                    start: v.pos.0,
                    end: v.pos.1,
                });
            }
        }
        Document {
            sentences: self.sents.clone(),
            mentions,
        }
    }
}

fn is_na(name: &str) -> bool {
    name.is_empty() || name.eq_ignore_ascii_case("na") || name.eq_ignore_ascii_case("n/a")
}

/// Convert a bag file plus a document file. When `labels` is given it fixes
/// the non-NA relation order; otherwise relations are collected from the bag
/// file and sorted. Returns the dataset and the warnings for skipped bags.
pub fn convert_codred(
    bags_path: &Path,
    docs_path: &Path,
    labels: Option<Vec<String>>,
) -> Result<(Dataset, Vec<String>)> {
    let bags_text = std::fs::read_to_string(bags_path)
        .map_err(|e| Error::io(bags_path.display().to_string(), e))?;
    let raw_bags: Vec<RawBag> = serde_json::from_str(&bags_text)
        .map_err(|e| Error::parse(bags_path.display().to_string(), e.to_string()))?;
    let docs_text = std::fs::read_to_string(docs_path)
        .map_err(|e| Error::io(docs_path.display().to_string(), e))?;
    let raw_docs: BTreeMap<String, RawDoc> = serde_json::from_str(&docs_text)
        .map_err(|e| Error::parse(docs_path.display().to_string(), e.to_string()))?;

    let relation_names: Vec<String> = match labels {
        Some(names) => names,
        None => {
            let mut seen: BTreeSet<String> = BTreeSet::new();
            for bag in &raw_bags {
                for name in bag.r.iter().chain(bag.relations.iter()) {
                    if !is_na(name) {
                        seen.insert(name.clone());
                    }
                }
            }
            seen.into_iter().collect()
        }
    };
    let label_space = LabelSpace::with_relations(relation_names)?;

    let mut warnings = Vec::new();
    let mut bags = Vec::new();
    for (i, raw) in raw_bags.iter().enumerate() {
        let id = format!("codred{i:05}");
        match convert_bag(raw, &raw_docs, &label_space, &id) {
            Ok(bag) => bags.push(bag),
            Err(reason) => warnings.push(format!("skipped bag {i} ({} -> {}): {reason}", raw.h, raw.t)),
        }
    }

    let dataset = Dataset {
        label_space,
        split: "converted".into(),
        bags,
    };
    dataset.validate()?;
    Ok((dataset, warnings))
}

fn convert_bag(
    raw: &RawBag,
    docs: &BTreeMap<String, RawDoc>,
    label_space: &LabelSpace,
    id: &str,
) -> std::result::Result<DocumentBag, String> {
    if raw.h == raw.t {
        return Err("head equals tail".into());
    }
    let mut labels = BTreeSet::new();
    for name in raw.r.iter().chain(raw.relations.iter()) {
        if is_na(name) {
            labels.insert(LabelSpace::NA);
        } else {
            let idx = label_space
                .index_of(name)
                .ok_or_else(|| format!("relation {name:?} not in the label space"))?;
            labels.insert(idx);
        }
    }
    if labels.is_empty() {
        labels.insert(LabelSpace::NA);
    }
    if labels.len() > 1 {
        labels.remove(&LabelSpace::NA);
    }

    let mut paths = Vec::new();
    for (head_key, tail_key) in &raw.paths {
        let head_raw = docs.get(head_key).ok_or_else(|| format!("missing document {head_key:?}"))?;
        let tail_raw = docs.get(tail_key).ok_or_else(|| format!("missing document {tail_key:?}"))?;
        let head_doc = head_raw.to_document();
        let tail_doc = tail_raw.to_document();
        if !head_doc.mentions_entity(&raw.h) {
            return Err(format!("head entity {:?} has no mention in {head_key:?}", raw.h));
        }
        if !tail_doc.mentions_entity(&raw.t) {
            return Err(format!("tail entity {:?} has no mention in {tail_key:?}", raw.t));
        }
        paths.push(TextPath { head_doc, tail_doc });
    }
    if paths.is_empty() {
        return Err("no paths".into());
    }

    Ok(DocumentBag {
        id: id.to_string(),
        head_id: raw.h.clone(),
        tail_id: raw.t.clone(),
        labels,
        paths,
    })
}

/// Parse a labels file: either a JSON array of names or one name per line.
/// An explicit NA entry, if present, must come first and is dropped.
pub fn read_labels_file(path: &Path) -> Result<Vec<String>> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let names: Vec<String> = if text.trim_start().starts_with('[') {
        serde_json::from_str(&text)
            .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?
    } else {
        text.lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect()
    };
    Ok(names.into_iter().filter(|n| n != NA_LABEL).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
        let bags = serde_json::json!([
            {"h": "Q1", "t": "Q2", "r": "country", "paths": [["docA", "docB"]]},
            {"h": "Q3", "t": "Q4", "r": "NA", "paths": [["docA", "docB"]]},
            {"h": "Q9", "t": "Q2", "r": "country", "paths": [["missing", "docB"]]}
        ]);
        let docs = serde_json::json!({
            "docA": {
                "sents": [["Q1", "is", "a", "city"], ["Q3", "too"]],
                "vertexSet": [
                    [{"name": "Q1", "sent_id": 0, "pos": [0, 1]}],
                    [{"name": "Q3", "sent_id": 1, "pos": [0, 1]}]
                ]
            },
            "docB": {
                "sents": [["Q2", "is", "a", "country"], ["Q4", "borders", "Q2"]],
                "vertexSet": [
                    [{"name": "Q2", "sent_id": 0, "pos": [0, 1]},
                     {"name": "Q2", "sent_id": 1, "pos": [2, 3]}],
                    [{"name": "Q4", "sent_id": 1, "pos": [0, 1]}]
                ]
            }
        });
        let bags_path = dir.join("bags.json");
        let docs_path = dir.join("docs.json");
        std::fs::write(&bags_path, serde_json::to_string(&bags).unwrap()).unwrap();
        std::fs::write(&docs_path, serde_json::to_string(&docs).unwrap()).unwrap();
        (bags_path, docs_path)
    }

    #[test]
    fn converts_bags_and_skips_broken_ones() {
        let dir = tempfile::tempdir().unwrap();
        let (bags_path, docs_path) = fixture(dir.path());
        let (ds, warnings) = convert_codred(&bags_path, &docs_path, None).unwrap();
        assert_eq!(ds.bags.len(), 2);
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].contains("missing document"));
        assert_eq!(ds.label_space.names(), &["NA".to_string(), "country".to_string()]);
        assert_eq!(ds.bags[0].labels, BTreeSet::from([1]));
        assert_eq!(ds.bags[1].labels, BTreeSet::from([0]));
        ds.validate().unwrap();
        // Q2 has two mentions mapped from the vertex cluster.
        assert_eq!(ds.bags[0].paths[0].tail_doc.mentions.len(), 3);
    }

    #[test]
    fn labels_file_fixes_relation_order() {
        let dir = tempfile::tempdir().unwrap();
        let (bags_path, docs_path) = fixture(dir.path());
        let labels_path = dir.path().join("labels.txt");
        std::fs::write(&labels_path, "zeta\ncountry\n").unwrap();
        let labels = read_labels_file(&labels_path).unwrap();
        let (ds, _) = convert_codred(&bags_path, &docs_path, Some(labels)).unwrap();
        assert_eq!(
            ds.label_space.names(),
            &["NA".to_string(), "zeta".to_string(), "country".to_string()]
        );
        assert_eq!(ds.bags[0].labels, BTreeSet::from([2]));
    }
}
