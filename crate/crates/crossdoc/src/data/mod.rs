//! Canonical data types and dataset I/O.
//!
//! The on-disk form is a single JSON document:
//!
//! ```json
//! {
//!   "label_space": ["NA", "founded_by", ...],
//!   "split": "train",
//!   "bags": [
//!     {
//!       "id": "bag0",
//!       "head": "Q1", "tail": "Q2",
//!       "labels": [1],
//!       "paths": [
//!         {
//!           "head_doc": {
//!             "sentences": [["tok", ...], ...],
//!             "mentions": [{"entity": "Q1", "sent": 0, "start": 2, "end": 3}, ...]
//!           },
//!           "tail_doc": { ... }
//!         }
//!       ]
//!     }
//!   ]
//! }
//! ```
//!
//! Sentence boundaries are part of the input; nothing in this crate
//! resegments text. Mention spans are sentence-local token intervals
//! `[start, end)`.

mod preprocess;
pub mod convert;
pub mod synth;

pub use preprocess::{filter_context, insert_markers, preprocess_dataset, strip_markers};

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{BagError, Error, Result};

/// The inserted mention-boundary token.
pub const MARKER: &str = "*";

/// Name of the no-relation label, always at index 0.
pub const NA_LABEL: &str = "NA";

/// Ordered relation label space: index 0 is NA, the rest are relation names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct LabelSpace {
    names: Vec<String>,
}

impl LabelSpace {
    /// Index of the NA relation.
    pub const NA: usize = 0;

    /// Build from the non-NA relation names; NA is prepended.
    pub fn with_relations<I, S>(relations: I) -> Result<LabelSpace>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut names = vec![NA_LABEL.to_string()];
        names.extend(relations.into_iter().map(Into::into));
        LabelSpace::from_names(names)
    }

    /// Build from a full name list whose first entry must be `"NA"`.
    pub fn from_names(names: Vec<String>) -> Result<LabelSpace> {
        if names.len() < 2 {
            return Err(Error::Argument(
                "label space needs NA plus at least one relation".into(),
            ));
        }
        if names[0] != NA_LABEL {
            return Err(Error::Argument(format!(
                "label space must start with {NA_LABEL:?}, got {:?}",
                names[0]
            )));
        }
        let mut seen = BTreeSet::new();
        for n in &names {
            if !seen.insert(n.as_str()) {
                return Err(Error::Argument(format!("duplicate label name {n:?}")));
            }
        }
        Ok(LabelSpace { names })
    }

    pub fn size(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Indices of the non-NA relations, `1..size`.
    pub fn relation_indices(&self) -> std::ops::Range<usize> {
        1..self.size()
    }
}

impl TryFrom<Vec<String>> for LabelSpace {
    type Error = String;

    fn try_from(names: Vec<String>) -> std::result::Result<Self, String> {
        LabelSpace::from_names(names).map_err(|e| e.to_string())
    }
}

impl From<LabelSpace> for Vec<String> {
    fn from(ls: LabelSpace) -> Vec<String> {
        ls.names
    }
}

/// One entity mention, located by sentence and a sentence-local token span
/// `[start, end)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mention {
    pub entity: String,
    pub sent: usize,
    pub start: usize,
    pub end: usize,
}

/// A sentence-segmented document with entity mentions.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Document {
    pub sentences: Vec<Vec<String>>,
    pub mentions: Vec<Mention>,
}

impl Document {
    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(Vec::len).sum()
    }

    /// All tokens in order, sentence boundaries dropped.
    pub fn tokens(&self) -> Vec<String> {
        self.sentences.iter().flatten().cloned().collect()
    }

    /// Flat token index of the first token of each sentence.
    pub fn sentence_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.sentences.len());
        let mut at = 0;
        for s in &self.sentences {
            offsets.push(at);
            at += s.len();
        }
        offsets
    }

    /// Mentions as flat token spans over [`Document::tokens`].
    pub fn flat_mentions(&self) -> Vec<(String, std::ops::Range<usize>)> {
        let offsets = self.sentence_offsets();
        self.mentions
            .iter()
            .map(|m| {
                let base = offsets[m.sent];
                (m.entity.clone(), base + m.start..base + m.end)
            })
            .collect()
    }

    /// Distinct entity ids mentioned in this document.
    pub fn entities(&self) -> BTreeSet<&str> {
        self.mentions.iter().map(|m| m.entity.as_str()).collect()
    }

    /// Does `entity` have at least one mention here?
    pub fn mentions_entity(&self, entity: &str) -> bool {
        self.mentions.iter().any(|m| m.entity == entity)
    }

    fn check(&self) -> std::result::Result<(), String> {
        for (i, m) in self.mentions.iter().enumerate() {
            if m.entity.is_empty() {
                return Err(format!("mention {i} has an empty entity id"));
            }
            let Some(sentence) = self.sentences.get(m.sent) else {
                return Err(format!(
                    "mention {i} ({:?}) names sentence {} but the document has {}",
                    m.entity,
                    m.sent,
                    self.sentences.len()
                ));
            };
            if m.start >= m.end {
                return Err(format!(
                    "mention {i} ({:?}) has an empty span [{}, {})",
                    m.entity, m.start, m.end
                ));
            }
            if m.end > sentence.len() {
                return Err(format!(
                    "mention {i} ({:?}) span end {} exceeds sentence {} length {}",
                    m.entity,
                    m.end,
                    m.sent,
                    sentence.len()
                ));
            }
        }
        Ok(())
    }
}

/// A head-document/tail-document pair connecting the target entities. The
/// path index `k` is its position in the owning bag.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextPath {
    pub head_doc: Document,
    pub tail_doc: Document,
}

/// The unit of labeling and prediction: a target entity pair with the text
/// paths retrieved for it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentBag {
    pub id: String,
    #[serde(rename = "head")]
    pub head_id: String,
    #[serde(rename = "tail")]
    pub tail_id: String,
    /// Gold relation indices into the label space; may be `{0}` (NA only).
    pub labels: BTreeSet<usize>,
    pub paths: Vec<TextPath>,
}

impl DocumentBag {
    /// Non-NA gold relation indices.
    pub fn positive_labels(&self) -> impl Iterator<Item = usize> + '_ {
        self.labels.iter().copied().filter(|&l| l != LabelSpace::NA)
    }

    pub fn is_na(&self) -> bool {
        self.positive_labels().next().is_none()
    }

    /// Distinct non-target entity ids across all paths.
    pub fn non_target_entities(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        for p in &self.paths {
            for doc in [&p.head_doc, &p.tail_doc] {
                for m in &doc.mentions {
                    if m.entity != self.head_id && m.entity != self.tail_id {
                        out.insert(m.entity.clone());
                    }
                }
            }
        }
        out
    }

    /// Total mention count of `entity` across every document of the bag.
    pub fn mention_count(&self, entity: &str) -> usize {
        self.paths
            .iter()
            .flat_map(|p| [&p.head_doc, &p.tail_doc])
            .flat_map(|d| &d.mentions)
            .filter(|m| m.entity == entity)
            .count()
    }

    fn check(&self, label_count: usize) -> std::result::Result<(), String> {
        if self.paths.is_empty() {
            return Err("bag has no text paths".into());
        }
        if self.labels.is_empty() {
            return Err("bag has no labels".into());
        }
        if self.head_id == self.tail_id {
            return Err(format!("head and tail are the same entity {:?}", self.head_id));
        }
        for &l in &self.labels {
            if l >= label_count {
                return Err(format!(
                    "label index {l} out of range (label space size {label_count})"
                ));
            }
        }
        for (k, path) in self.paths.iter().enumerate() {
            path.head_doc
                .check()
                .map_err(|e| format!("path {k} head_doc: {e}"))?;
            path.tail_doc
                .check()
                .map_err(|e| format!("path {k} tail_doc: {e}"))?;
            if !path.head_doc.mentions_entity(&self.head_id) {
                return Err(format!(
                    "path {k}: head entity {:?} has no mention in the head document",
                    self.head_id
                ));
            }
            if !path.tail_doc.mentions_entity(&self.tail_id) {
                return Err(format!(
                    "path {k}: tail entity {:?} has no mention in the tail document",
                    self.tail_id
                ));
            }
        }
        Ok(())
    }
}

/// A labeled collection of bags sharing one label space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub label_space: LabelSpace,
    #[serde(default = "default_split")]
    pub split: String,
    pub bags: Vec<DocumentBag>,
}

fn default_split() -> String {
    "train".to_string()
}

impl Dataset {
    /// Check every bag; collects one error per failing bag.
    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        let mut seen_ids = BTreeMap::new();
        for (i, bag) in self.bags.iter().enumerate() {
            if let Some(prev) = seen_ids.insert(bag.id.clone(), i) {
                errors.push(BagError {
                    bag_id: bag.id.clone(),
                    reason: format!("duplicate bag id (also at position {prev})"),
                });
            }
            if let Err(reason) = bag.check(self.label_space.size()) {
                errors.push(BagError {
                    bag_id: bag.id.clone(),
                    reason,
                });
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errors))
        }
    }

    pub fn non_na_bags(&self) -> impl Iterator<Item = &DocumentBag> {
        self.bags.iter().filter(|b| !b.is_na())
    }
}

/// Load and validate a dataset file. When `expected` is given, the file's
/// label space must match it exactly.
pub fn load_bags(path: &Path, expected: Option<&LabelSpace>) -> Result<Dataset> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let dataset: Dataset = serde_json::from_str(&text)
        .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
    if let Some(expected) = expected {
        if expected != &dataset.label_space {
            return Err(Error::LabelSpaceMismatch(format!(
                "{} has {} labels, expected {}",
                path.display(),
                dataset.label_space.size(),
                expected.size()
            )));
        }
    }
    dataset.validate()?;
    Ok(dataset)
}

/// Write a dataset in the canonical schema.
pub fn save_bags(dataset: &Dataset, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(dataset).expect("dataset serializes");
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn doc(sentences: &[&[&str]], mentions: &[(&str, usize, usize, usize)]) -> Document {
        Document {
            sentences: sentences
                .iter()
                .map(|s| s.iter().map(|t| t.to_string()).collect())
                .collect(),
            mentions: mentions
                .iter()
                .map(|&(e, sent, start, end)| Mention {
                    entity: e.to_string(),
                    sent,
                    start,
                    end,
                })
                .collect(),
        }
    }

    fn minimal_dataset() -> Dataset {
        Dataset {
            label_space: LabelSpace::with_relations(["works_for"]).unwrap(),
            split: "train".into(),
            bags: vec![DocumentBag {
                id: "b0".into(),
                head_id: "H".into(),
                tail_id: "T".into(),
                labels: BTreeSet::from([0]),
                paths: vec![TextPath {
                    head_doc: doc(&[&["the", "H", "corp"]], &[("H", 0, 1, 2)]),
                    tail_doc: doc(&[&["T", "visited"]], &[("T", 0, 0, 1)]),
                }],
            }],
        }
    }

    #[test]
    fn minimal_file_loads() {
        let ds = minimal_dataset();
        ds.validate().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mini.json");
        save_bags(&ds, &path).unwrap();
        let loaded = load_bags(&path, None).unwrap();
        assert_eq!(loaded.bags.len(), 1);
        assert_eq!(loaded.bags[0].paths.len(), 1);
        assert_eq!(loaded, ds);
    }

    #[test]
    fn span_past_document_end_is_rejected() {
        let mut ds = minimal_dataset();
        ds.bags[0].paths[0].head_doc.mentions[0].end = 9;
        let err = ds.validate().unwrap_err();
        match err {
            Error::Validation(reports) => {
                assert_eq!(reports.len(), 1);
                assert_eq!(reports[0].bag_id, "b0");
                assert!(reports[0].reason.contains("exceeds sentence"));
            }
            other => panic!("expected validation error, got {other}"),
        }
    }

    #[test]
    fn head_without_mention_is_rejected() {
        let mut ds = minimal_dataset();
        ds.bags[0].paths[0].head_doc.mentions.clear();
        assert!(matches!(ds.validate(), Err(Error::Validation(_))));
    }

    #[test]
    fn label_space_requires_na_first() {
        assert!(LabelSpace::from_names(vec!["founded".into(), "NA".into()]).is_err());
        assert!(LabelSpace::from_names(vec!["NA".into()]).is_err());
        assert!(LabelSpace::from_names(vec!["NA".into(), "x".into(), "x".into()]).is_err());
        let ls = LabelSpace::from_names(vec!["NA".into(), "x".into()]).unwrap();
        assert_eq!(ls.size(), 2);
        assert_eq!(ls.index_of("x"), Some(1));
    }

    #[test]
    fn flat_mentions_cross_sentence_offsets() {
        let d = doc(
            &[&["a", "b"], &["c", "d", "e"]],
            &[("X", 1, 1, 3), ("Y", 0, 0, 1)],
        );
        let flat = d.flat_mentions();
        assert_eq!(flat[0].1, 3..5);
        assert_eq!(flat[1].1, 0..1);
    }

    #[test]
    fn save_load_round_trip_on_generated_bags() {
        // Serialize/deserialize oracle over 100 generated bags.
        let ls = LabelSpace::with_relations(["r1", "r2", "r3"]).unwrap();
        let ds = synth::synth_generate(99, 100, 0.5, &ls, 40).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.json");
        save_bags(&ds, &path).unwrap();
        let loaded = load_bags(&path, Some(&ls)).unwrap();
        assert_eq!(ds, loaded);

        // A second save is byte-identical: key order is fixed by the types.
        let path2 = dir.path().join("ds2.json");
        save_bags(&loaded, &path2).unwrap();
        assert_eq!(
            std::fs::read_to_string(&path).unwrap(),
            std::fs::read_to_string(&path2).unwrap()
        );
    }
}
