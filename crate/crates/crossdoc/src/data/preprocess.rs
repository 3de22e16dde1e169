//! Input preprocessing: mention-boundary markers and the entity-based
//! document-context filter.

use std::collections::BTreeSet;

use crate::data::{Document, DocumentBag, Dataset, Mention, MARKER};
use crate::error::{Error, Result};

/// Insert a `*` token immediately before and after every mention span,
/// re-indexing all spans. Each mention contributes exactly one marker pair;
/// overlapping mentions nest deterministically (inner markers sit closest to
/// their tokens).
pub fn insert_markers(doc: &Document) -> Document {
    let mut sentences = Vec::with_capacity(doc.sentences.len());
    let mut mentions: Vec<Option<Mention>> = vec![None; doc.mentions.len()];

    for (s, sentence) in doc.sentences.iter().enumerate() {
        let here: Vec<usize> = (0..doc.mentions.len())
            .filter(|&i| doc.mentions[i].sent == s)
            .collect();
        if here.is_empty() {
            sentences.push(sentence.clone());
            continue;
        }
        let mut out: Vec<String> = Vec::with_capacity(sentence.len() + 2 * here.len());
        let mut open_pos = vec![0usize; doc.mentions.len()];
        let mut close_pos = vec![0usize; doc.mentions.len()];
        for gap in 0..=sentence.len() {
            // Closing markers first (spans ending here), inner-most first.
            let mut closes: Vec<usize> = here
                .iter()
                .copied()
                .filter(|&i| doc.mentions[i].end == gap)
                .collect();
            closes.sort_by_key(|&i| (std::cmp::Reverse(doc.mentions[i].start), i));
            for i in closes {
                close_pos[i] = out.len();
                out.push(MARKER.to_string());
            }
            // Then opening markers (spans starting here), outer-most first.
            let mut opens: Vec<usize> = here
                .iter()
                .copied()
                .filter(|&i| doc.mentions[i].start == gap)
                .collect();
            opens.sort_by_key(|&i| (std::cmp::Reverse(doc.mentions[i].end), i));
            for i in opens {
                open_pos[i] = out.len();
                out.push(MARKER.to_string());
            }
            if gap < sentence.len() {
                out.push(sentence[gap].clone());
            }
        }
        for i in here {
            mentions[i] = Some(Mention {
                entity: doc.mentions[i].entity.clone(),
                sent: s,
                start: open_pos[i] + 1,
                end: close_pos[i],
            });
        }
        sentences.push(out);
    }

    Document {
        sentences,
        mentions: mentions.into_iter().map(Option::unwrap).collect(),
    }
}

/// Remove every marker token, recovering the unmarked sentences.
pub fn strip_markers(doc: &Document) -> Vec<Vec<String>> {
    doc.sentences
        .iter()
        .map(|s| s.iter().filter(|t| *t != MARKER).cloned().collect())
        .collect()
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct SentKey {
    doc: usize,
    sent: usize,
}

/// Keep, per path, only the most salient mention-bearing sentences so the
/// concatenated head+tail token count fits `budget`. Paths already within
/// budget are returned untouched. Salience is the count of distinct entities
/// in the sentence, ties broken by original document order. The target
/// entities always retain at least one mention in their document.
pub fn filter_context(bag: &DocumentBag, budget: usize) -> Result<DocumentBag> {
    if budget < 2 {
        return Err(Error::Argument(format!(
            "context budget must be at least 2 tokens, got {budget}"
        )));
    }
    let mut out = bag.clone();
    for path in &mut out.paths {
        let total = path.head_doc.token_count() + path.tail_doc.token_count();
        if total <= budget {
            continue;
        }
        filter_path(&mut path.head_doc, &mut path.tail_doc, &bag.head_id, &bag.tail_id, budget);
    }
    Ok(out)
}

fn filter_path(
    head_doc: &mut Document,
    tail_doc: &mut Document,
    head_id: &str,
    tail_id: &str,
    budget: usize,
) {
    // Every mention-bearing sentence, ranked by salience.
    let mut candidates: Vec<(SentKey, usize, usize)> = Vec::new(); // key, distinct entities, len
    for (d, doc) in [&*head_doc, &*tail_doc].iter().enumerate() {
        for (s, sentence) in doc.sentences.iter().enumerate() {
            let entities: BTreeSet<&str> = doc
                .mentions
                .iter()
                .filter(|m| m.sent == s)
                .map(|m| m.entity.as_str())
                .collect();
            if !entities.is_empty() {
                candidates.push((SentKey { doc: d, sent: s }, entities.len(), sentence.len()));
            }
        }
    }
    candidates.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));

    let best_with = |doc_idx: usize, entity: &str| -> SentKey {
        let doc = if doc_idx == 0 { &*head_doc } else { &*tail_doc };
        candidates
            .iter()
            .find(|(key, _, _)| {
                key.doc == doc_idx
                    && doc
                        .mentions
                        .iter()
                        .any(|m| m.sent == key.sent && m.entity == entity)
            })
            .map(|(key, _, _)| *key)
            .expect("validated bag has a target mention sentence")
    };
    let reserved_head = best_with(0, head_id);
    let reserved_tail = best_with(1, tail_id);

    let sent_len = |key: SentKey| -> usize {
        let doc = if key.doc == 0 { &*head_doc } else { &*tail_doc };
        doc.sentences[key.sent].len()
    };

    let mut selected: BTreeSet<SentKey> = BTreeSet::new();
    // (key, truncation cap) for sentences that must be cut down.
    let mut truncate: Vec<(SentKey, usize, String)> = Vec::new();
    let mut remaining = budget;

    // Reserve the target-mention sentences first. If they cannot both fit,
    // split the budget between them so neither document loses its target.
    let head_len = sent_len(reserved_head);
    let tail_len = sent_len(reserved_tail);
    if head_len + tail_len > budget {
        let head_cap = (budget / 2).max(1).min(head_len);
        let tail_cap = (budget - head_cap).min(tail_len);
        log::warn!(
            "target sentences exceed the {budget}-token budget; truncating to {head_cap}+{tail_cap} tokens"
        );
        selected.insert(reserved_head);
        selected.insert(reserved_tail);
        truncate.push((reserved_head, head_cap, head_id.to_string()));
        truncate.push((reserved_tail, tail_cap, tail_id.to_string()));
        remaining = 0;
    } else {
        selected.insert(reserved_head);
        selected.insert(reserved_tail);
        remaining -= head_len + tail_len;
    }

    // Greedily add the remaining candidates in salience order.
    for (key, _, len) in &candidates {
        if selected.contains(key) {
            continue;
        }
        if *len <= remaining {
            selected.insert(*key);
            remaining -= *len;
        }
    }

    for (d, doc) in [&mut *head_doc, &mut *tail_doc].into_iter().enumerate() {
        let keep: Vec<usize> = (0..doc.sentences.len())
            .filter(|&s| selected.contains(&SentKey { doc: d, sent: s }))
            .collect();
        let cut = |s: usize| -> Option<(usize, String)> {
            truncate
                .iter()
                .find(|(key, _, _)| key.doc == d && key.sent == s)
                .map(|(_, cap, ent)| (*cap, ent.clone()))
        };
        rebuild(doc, &keep, &cut);
    }
}

/// Keep only the listed sentences (in original order), applying optional
/// truncation windows, and re-index mentions.
fn rebuild(doc: &mut Document, keep: &[usize], cut: &dyn Fn(usize) -> Option<(usize, String)>) {
    let mut sentences = Vec::with_capacity(keep.len());
    let mut mentions = Vec::new();
    for (new_s, &old_s) in keep.iter().enumerate() {
        let sentence = &doc.sentences[old_s];
        let (window_start, window_len) = match cut(old_s) {
            Some((cap, ref required)) if cap < sentence.len() => {
                // Window that keeps the required entity's first mention here.
                let anchor = doc
                    .mentions
                    .iter()
                    .find(|m| m.sent == old_s && &m.entity == required)
                    .expect("required mention present");
                let start = anchor.start.min(sentence.len() - cap);
                (start, cap)
            }
            _ => (0, sentence.len()),
        };
        sentences.push(sentence[window_start..window_start + window_len].to_vec());
        for m in &doc.mentions {
            if m.sent != old_s {
                continue;
            }
            // Mentions fully inside the window survive; a clipped required
            // mention is trimmed to the window.
            let start = m.start.max(window_start);
            let end = m.end.min(window_start + window_len);
            if start >= end {
                continue;
            }
            if (start, end) != (m.start, m.end) {
                let required = matches!(cut(old_s), Some((_, ref r)) if r == &m.entity);
                if !required {
                    continue;
                }
            }
            mentions.push(Mention {
                entity: m.entity.clone(),
                sent: new_s,
                start: start - window_start,
                end: end - window_start,
            });
        }
    }
    doc.sentences = sentences;
    doc.mentions = mentions;
}

/// Apply the context filter and marker insertion to every bag.
pub fn preprocess_dataset(dataset: &Dataset, budget: usize) -> Result<Dataset> {
    let mut out = dataset.clone();
    for bag in &mut out.bags {
        *bag = filter_context(bag, budget)?;
        for path in &mut bag.paths {
            path.head_doc = insert_markers(&path.head_doc);
            path.tail_doc = insert_markers(&path.tail_doc);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth, LabelSpace, TextPath};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;

    fn doc(sentences: &[&[&str]], mentions: &[(&str, usize, usize, usize)]) -> Document {
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

    #[test]
    fn single_mention_arithmetic() {
        let d = doc(&[&["A", "B", "C"]], &[("X", 0, 1, 2)]);
        let marked = insert_markers(&d);
        assert_eq!(marked.sentences[0], vec!["A", "*", "B", "*", "C"]);
        assert_eq!((marked.mentions[0].start, marked.mentions[0].end), (2, 3));
    }

    #[test]
    fn no_mentions_is_identity() {
        let d = doc(&[&["A", "B"]], &[]);
        assert_eq!(insert_markers(&d), d);
    }

    #[test]
    fn overlapping_mentions_nest_deterministically() {
        // Outer [0,3), inner [1,2): outer markers outside the inner pair.
        let d = doc(&[&["a", "b", "c"]], &[("O", 0, 0, 3), ("I", 0, 1, 2)]);
        let marked = insert_markers(&d);
        assert_eq!(
            marked.sentences[0],
            vec!["*", "a", "*", "b", "*", "c", "*"]
        );
        let outer = &marked.mentions[0];
        let inner = &marked.mentions[1];
        assert_eq!((outer.start, outer.end), (1, 6));
        assert_eq!((inner.start, inner.end), (3, 4));
        // Spans still cover their original tokens.
        assert_eq!(&marked.sentences[0][inner.start..inner.end], &["b"]);
    }

    #[test]
    fn marker_count_and_demarking_oracle() {
        // Counting oracle over 50 random documents: marker count equals
        // twice the mention count, and de-marking recovers the original.
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..50 {
            let n_sents = rng.gen_range(1..4);
            let mut sentences = Vec::new();
            for _ in 0..n_sents {
                let len = rng.gen_range(1..9);
                let sent: Vec<String> = (0..len).map(|i| format!("t{i}")).collect();
                sentences.push(sent);
            }
            let mut mentions = Vec::new();
            for i in 0..rng.gen_range(0..6) {
                let sent = rng.gen_range(0..n_sents);
                let len = sentences[sent].len();
                let start = rng.gen_range(0..len);
                let end = rng.gen_range(start + 1..=len);
                mentions.push(Mention {
                    entity: format!("e{i}"),
                    sent,
                    start,
                    end,
                });
            }
            let d = Document {
                sentences: sentences.clone(),
                mentions,
            };
            let marked = insert_markers(&d);
            let markers: usize = marked
                .sentences
                .iter()
                .flatten()
                .filter(|t| *t == MARKER)
                .count();
            assert_eq!(markers, 2 * d.mentions.len());
            assert_eq!(strip_markers(&marked), sentences);
            // Every re-indexed span sits strictly between its own markers.
            for m in &marked.mentions {
                assert!(m.start < m.end && m.end <= marked.sentences[m.sent].len());
                assert_eq!(marked.sentences[m.sent][m.start - 1], MARKER);
                assert_eq!(marked.sentences[m.sent][m.end], MARKER);
            }
        }
    }

    fn bag_with(head_doc: Document, tail_doc: Document) -> DocumentBag {
        DocumentBag {
            id: "b".into(),
            head_id: "H".into(),
            tail_id: "T".into(),
            labels: BTreeSet::from([0]),
            paths: vec![TextPath { head_doc, tail_doc }],
        }
    }

    #[test]
    fn under_budget_is_identity() {
        let bag = bag_with(
            doc(&[&["x", "H"], &["no", "mentions", "here"]], &[("H", 0, 1, 2)]),
            doc(&[&["T", "y"]], &[("T", 0, 0, 1)]),
        );
        let filtered = filter_context(&bag, 512).unwrap();
        assert_eq!(filtered, bag);
    }

    #[test]
    fn salience_ranking_prefers_entity_rich_sentences() {
        // Head doc: a 2-entity sentence and a 0-entity sentence; only the
        // former can fit once the budget binds.
        let head = doc(
            &[
                &["H", "and", "B", "met"],
                &["completely", "irrelevant", "filler", "words", "go", "here"],
            ],
            &[("H", 0, 0, 1), ("B", 0, 2, 3)],
        );
        let tail = doc(&[&["T", "spoke"]], &[("T", 0, 0, 1)]);
        let bag = bag_with(head, tail);
        let filtered = filter_context(&bag, 6).unwrap();
        let hd = &filtered.paths[0].head_doc;
        assert_eq!(hd.sentences.len(), 1);
        assert_eq!(hd.sentences[0], vec!["H", "and", "B", "met"]);
        assert!(hd.mentions_entity("H"));
        assert!(hd.mentions_entity("B"));
    }

    #[test]
    fn budget_property_on_random_oversized_paths() {
        // 200 generated bags inflated to ~2000 tokens: after filtering, a
        // brute-force re-scan finds every path within budget and both target
        // mentions intact.
        let ls = LabelSpace::with_relations(["r1", "r2"]).unwrap();
        let mut ds = synth::synth_generate(5, 200, 0.5, &ls, 30).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for bag in &mut ds.bags {
            for path in &mut bag.paths {
                for doc in [&mut path.head_doc, &mut path.tail_doc] {
                    // Pad with junk sentences until the document is huge.
                    while doc.token_count() < 1000 {
                        let len = rng.gen_range(5..40);
                        doc.sentences
                            .push((0..len).map(|i| format!("junk{i}")).collect());
                    }
                }
            }
        }
        for bag in &ds.bags {
            let filtered = filter_context(bag, 512).unwrap();
            for path in &filtered.paths {
                let total = path.head_doc.token_count() + path.tail_doc.token_count();
                assert!(total <= 512, "path has {total} tokens");
                assert!(path.head_doc.mentions_entity(&bag.head_id));
                assert!(path.tail_doc.mentions_entity(&bag.tail_id));
                for doc in [&path.head_doc, &path.tail_doc] {
                    for m in &doc.mentions {
                        assert!(m.end <= doc.sentences[m.sent].len());
                    }
                }
            }
        }
    }

    #[test]
    fn oversized_target_sentence_is_truncated_with_mention_kept() {
        let big: Vec<String> = (0..600).map(|i| format!("w{i}")).collect();
        let mut tokens: Vec<&str> = big.iter().map(String::as_str).collect();
        tokens[300] = "H";
        let head = doc(&[&tokens], &[("H", 0, 300, 301)]);
        let tail = doc(&[&["T", "said", "things"]], &[("T", 0, 0, 1)]);
        let bag = bag_with(head, tail);
        let filtered = filter_context(&bag, 64).unwrap();
        let path = &filtered.paths[0];
        assert!(path.head_doc.token_count() + path.tail_doc.token_count() <= 64);
        assert!(path.head_doc.mentions_entity("H"));
        assert!(path.tail_doc.mentions_entity("T"));
    }

    #[test]
    fn preprocess_pipeline_runs_end_to_end() {
        let ls = LabelSpace::with_relations(["r1"]).unwrap();
        let ds = synth::synth_generate(3, 10, 0.4, &ls, 20).unwrap();
        let prepped = preprocess_dataset(&ds, 512).unwrap();
        prepped.validate().unwrap();
        for bag in &prepped.bags {
            for path in &bag.paths {
                // Markers present wherever mentions exist.
                assert!(path
                    .head_doc
                    .sentences
                    .iter()
                    .flatten()
                    .any(|t| t == MARKER));
            }
        }
    }
}
