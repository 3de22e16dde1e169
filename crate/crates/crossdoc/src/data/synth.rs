//! Deterministic synthetic bag generator for desk-scale experiments.
//!
//! Non-NA bags plant a learnable signal that routes through non-bridge
//! entities: one non-bridge entity in the head document and one in the tail
//! document both carry the same relation-specific surface token, so their
//! representations are close and a semantic-related edge links the two sides
//! of the path. NA bags carry no shared pattern — their two carrier entities
//! either hold mismatched relation tokens or a neutral surface.
//!
//! The carrier sentences sit several filler sentences away from the target
//! mentions, keeping the signal out of the targets' immediate context.

use std::collections::BTreeSet;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Dataset, Document, DocumentBag, LabelSpace, Mention, TextPath};
use crate::error::{Error, Result};

/// Generate `n_bags` labeled bags. Pure in all arguments: the same inputs
/// always produce byte-identical datasets.
pub fn synth_generate(
    seed: u64,
    n_bags: usize,
    na_fraction: f64,
    label_space: &LabelSpace,
    vocab_size: usize,
) -> Result<Dataset> {
    if n_bags == 0 {
        return Err(Error::Argument("n_bags must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&na_fraction) {
        return Err(Error::Argument(format!(
            "na_fraction must lie in [0, 1], got {na_fraction}"
        )));
    }
    if vocab_size == 0 {
        return Err(Error::Argument("vocab_size must be at least 1".into()));
    }
    let relations = label_space.size() - 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bags = Vec::with_capacity(n_bags);

    for b in 0..n_bags {
        let is_na = rng.gen::<f64>() < na_fraction;
        // Per-side relation tokens carried by the non-bridge entities.
        let (head_sig, tail_sig, labels) = if is_na {
            if relations >= 2 && rng.gen_bool(0.5) {
                // Mismatched signals: present but inconsistent.
                let r1 = rng.gen_range(1..=relations);
                let mut r2 = rng.gen_range(1..=relations);
                while r2 == r1 {
                    r2 = rng.gen_range(1..=relations);
                }
                (Some(r1), Some(r2), BTreeSet::from([LabelSpace::NA]))
            } else {
                (None, None, BTreeSet::from([LabelSpace::NA]))
            }
        } else {
            let r = rng.gen_range(1..=relations);
            (Some(r), Some(r), BTreeSet::from([r]))
        };

        let head_id = format!("h{b}");
        let tail_id = format!("t{b}");
        let head_carrier = format!("nbh{b}");
        let tail_carrier = format!("nbt{b}");

        let n_paths = rng.gen_range(1..=3);
        let mut paths = Vec::with_capacity(n_paths);
        for k in 0..n_paths {
            let bridge = rng.gen_bool(0.5).then(|| format!("br{b}_{k}"));
            let head_doc = gen_doc(
                &mut rng,
                &head_id,
                "head_ent",
                &head_carrier,
                head_sig,
                bridge.as_deref(),
                &format!("dh{b}_{k}"),
                vocab_size,
            );
            let tail_doc = gen_doc(
                &mut rng,
                &tail_id,
                "tail_ent",
                &tail_carrier,
                tail_sig,
                bridge.as_deref(),
                &format!("dt{b}_{k}"),
                vocab_size,
            );
            paths.push(TextPath { head_doc, tail_doc });
        }

        bags.push(DocumentBag {
            id: format!("bag{b:05}"),
            head_id,
            tail_id,
            labels,
            paths,
        });
    }

    Ok(Dataset {
        label_space: label_space.clone(),
        split: "synthetic".into(),
        bags,
    })
}

fn filler(rng: &mut ChaCha8Rng, vocab_size: usize) -> String {
    format!("w{}", rng.gen_range(0..vocab_size))
}

fn filler_sentence(rng: &mut ChaCha8Rng, vocab_size: usize, min: usize, max: usize) -> Vec<String> {
    let len = rng.gen_range(min..=max);
    (0..len).map(|_| filler(rng, vocab_size)).collect()
}

/// One document: a target sentence, filler sentences, a signal-carrier
/// sentence, and optional distractor/bridge sentences.
#[allow(clippy::too_many_arguments)]
fn gen_doc(
    rng: &mut ChaCha8Rng,
    target_id: &str,
    target_token: &str,
    carrier_id: &str,
    signal: Option<usize>,
    bridge_id: Option<&str>,
    distractor_id: &str,
    vocab_size: usize,
) -> Document {
    let mut sentences: Vec<Vec<String>> = Vec::new();
    let mut mentions: Vec<Mention> = Vec::new();

    // Target sentence.
    {
        let mut sent = filler_sentence(rng, vocab_size, 2, 3);
        let pos = sent.len();
        sent.push(target_token.to_string());
        sent.extend(filler_sentence(rng, vocab_size, 1, 2));
        mentions.push(Mention {
            entity: target_id.to_string(),
            sent: sentences.len(),
            start: pos,
            end: pos + 1,
        });
        sentences.push(sent);
    }

    // Optional bridge sentence, adjacent to the target.
    if let Some(bridge) = bridge_id {
        let mut sent = filler_sentence(rng, vocab_size, 1, 2);
        let pos = sent.len();
        sent.push("br_ent".to_string());
        sent.extend(filler_sentence(rng, vocab_size, 1, 2));
        mentions.push(Mention {
            entity: bridge.to_string(),
            sent: sentences.len(),
            start: pos,
            end: pos + 1,
        });
        sentences.push(sent);
    }

    // Filler gap between the target and the signal carrier.
    for _ in 0..2 {
        sentences.push(filler_sentence(rng, vocab_size, 6, 10));
    }

    // Optional distractor entity with a plain filler surface.
    if rng.gen_bool(0.5) {
        let mut sent = filler_sentence(rng, vocab_size, 1, 2);
        let pos = sent.len();
        sent.push(filler(rng, vocab_size));
        sent.extend(filler_sentence(rng, vocab_size, 0, 1));
        mentions.push(Mention {
            entity: distractor_id.to_string(),
            sent: sentences.len(),
            start: pos,
            end: pos + 1,
        });
        sentences.push(sent);
    }

    // Signal-carrier sentence.
    {
        let surface = match signal {
            Some(r) => format!("sig{r}"),
            None => "nb_ent".to_string(),
        };
        let mut sent = filler_sentence(rng, vocab_size, 1, 2);
        let pos = sent.len();
        sent.push(surface);
        sent.extend(filler_sentence(rng, vocab_size, 1, 2));
        mentions.push(Mention {
            entity: carrier_id.to_string(),
            sent: sentences.len(),
            start: pos,
            end: pos + 1,
        });
        sentences.push(sent);
    }

    Document {
        sentences,
        mentions,
    }
}
