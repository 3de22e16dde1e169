//! Sequence-encoder backends producing per-token context vectors, plus the
//! mention and entity aggregation on top of them.
//!
//! A text path is encoded as `head_doc ++ [SEP] ++ tail_doc`; the separator
//! is consumed internally, so the output has exactly one vector per document
//! token. Mention vectors are the componentwise max over their span; an
//! entity's path-level vector is the componentwise log-sum-exp over all of
//! its mention vectors in the path (both documents).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::ops::Range;
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, TextPath};
use crate::error::{Error, Result};
use crate::nn::{glorot, Binder, LayerNorm, TransformerLayer};
use crate::tape::{Tape, VarId};

pub const UNK_TOKEN: &str = "<unk>";
pub const SEP_TOKEN: &str = "[SEP]";

/// Token-to-id table. Id 0 is the unknown token, id 1 the separator; the
/// rest are the corpus tokens in sorted order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn from_tokens(tokens: Vec<String>) -> Vocab {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocab { tokens, index }
    }

    /// Collect every distinct token of the dataset (post-preprocessing).
    pub fn build(dataset: &Dataset) -> Vocab {
        let mut set = BTreeSet::new();
        for bag in &dataset.bags {
            for path in &bag.paths {
                for doc in [&path.head_doc, &path.tail_doc] {
                    for sent in &doc.sentences {
                        for tok in sent {
                            set.insert(tok.clone());
                        }
                    }
                }
            }
        }
        let mut tokens = vec![UNK_TOKEN.to_string(), SEP_TOKEN.to_string()];
        tokens.extend(set.into_iter().filter(|t| t != UNK_TOKEN && t != SEP_TOKEN));
        Vocab::from_tokens(tokens)
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Vocab {
        Vocab::from_tokens(tokens)
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Vec<String> {
        v.tokens
    }
}

/// A mention located in the flattened head++tail token sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathMention {
    pub entity: String,
    /// 0 for the head document, 1 for the tail document.
    pub doc_index: usize,
    pub span: Range<usize>,
}

/// Encoder input assembled from a text path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathInput {
    pub tokens: Vec<String>,
    pub head_len: usize,
    pub mentions: Vec<PathMention>,
}

/// Flatten a (preprocessed) text path into one token sequence with
/// flat-coordinate mention spans.
pub fn assemble_path(path: &TextPath) -> PathInput {
    let head_tokens = path.head_doc.tokens();
    let tail_tokens = path.tail_doc.tokens();
    let head_len = head_tokens.len();
    let mut mentions = Vec::new();
    for (entity, span) in path.head_doc.flat_mentions() {
        mentions.push(PathMention {
            entity,
            doc_index: 0,
            span,
        });
    }
    for (entity, span) in path.tail_doc.flat_mentions() {
        mentions.push(PathMention {
            entity,
            doc_index: 1,
            span: head_len + span.start..head_len + span.end,
        });
    }
    let mut tokens = head_tokens;
    tokens.extend(tail_tokens);
    PathInput {
        tokens,
        head_len,
        mentions,
    }
}

/// A pluggable sequence encoder: `L` document tokens in, `L` context vectors
/// (rows of a `[L, hidden_dim]` matrix) out.
pub trait SequenceEncoder {
    fn hidden_dim(&self) -> usize;
    fn max_len(&self) -> usize;
    fn encode(&self, tape: &mut Tape, binder: &mut Binder, input: &PathInput) -> Result<VarId>;
}

/// One direction of the toy recurrent mixer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RnnCell {
    pub w: Array2<f64>,
    pub u: Array2<f64>,
    pub b: Array2<f64>,
}

impl RnnCell {
    fn init(rng: &mut ChaCha8Rng, inp: usize, hidden: usize) -> Self {
        RnnCell {
            w: glorot(rng, inp, hidden),
            u: glorot(rng, hidden, hidden),
            b: Array2::zeros((1, hidden)),
        }
    }

    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Array2<f64>)>) {
        out.push((format!("{prefix}.w"), &self.w));
        out.push((format!("{prefix}.u"), &self.u));
        out.push((format!("{prefix}.b"), &self.b));
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Array2<f64>)>) {
        out.push((format!("{prefix}.w"), &mut self.w));
        out.push((format!("{prefix}.u"), &mut self.u));
        out.push((format!("{prefix}.b"), &mut self.b));
    }
}

/// Trainable toy backend: token-embedding lookup plus one bidirectional
/// `tanh` recurrent layer, each direction `hidden_dim / 2` wide. Exists so
/// the whole pipeline trains and tests without any pretrained weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyEncoder {
    pub vocab: Vocab,
    pub embed: Array2<f64>,
    pub fwd: RnnCell,
    pub bwd: RnnCell,
}

pub const TOY_MAX_LEN: usize = 4096;

impl ToyEncoder {
    pub fn init(rng: &mut ChaCha8Rng, vocab: Vocab, hidden_dim: usize) -> Result<Self> {
        if hidden_dim == 0 || hidden_dim % 2 != 0 {
            return Err(Error::Argument(format!(
                "toy encoder hidden_dim must be even and positive, got {hidden_dim}"
            )));
        }
        let half = hidden_dim / 2;
        Ok(ToyEncoder {
            embed: glorot(rng, vocab.len(), hidden_dim),
            fwd: RnnCell::init(rng, hidden_dim, half),
            bwd: RnnCell::init(rng, hidden_dim, half),
            vocab,
        })
    }

    pub fn visit<'a>(&'a self, out: &mut Vec<(String, &'a Array2<f64>)>) {
        out.push(("enc.embed".into(), &self.embed));
        self.fwd.visit("enc.fwd", out);
        self.bwd.visit("enc.bwd", out);
    }

    pub fn visit_mut<'a>(&'a mut self, out: &mut Vec<(String, &'a mut Array2<f64>)>) {
        out.push(("enc.embed".into(), &mut self.embed));
        self.fwd.visit_mut("enc.fwd", out);
        self.bwd.visit_mut("enc.bwd", out);
    }

    fn run_direction(
        &self,
        tape: &mut Tape,
        binder: &mut Binder,
        prefix: &str,
        cell: &RnnCell,
        emb: VarId,
        order: &[usize],
    ) -> Vec<VarId> {
        let w = binder.bind(tape, &format!("{prefix}.w"), &cell.w);
        let u = binder.bind(tape, &format!("{prefix}.u"), &cell.u);
        let b = binder.bind(tape, &format!("{prefix}.b"), &cell.b);
        let half = cell.b.ncols();
        let mut state = tape.leaf(Array2::zeros((1, half)));
        let mut out = vec![0; order.len()];
        for &t in order {
            let x = tape.select_rows(emb, &[t]);
            let xw = tape.matmul(x, w);
            let hu = tape.matmul(state, u);
            let sum = tape.add(xw, hu);
            let pre = tape.add(sum, b);
            state = tape.tanh(pre);
            out[t] = state;
        }
        out
    }
}

impl SequenceEncoder for ToyEncoder {
    fn hidden_dim(&self) -> usize {
        self.embed.ncols()
    }

    fn max_len(&self) -> usize {
        TOY_MAX_LEN
    }

    fn encode(&self, tape: &mut Tape, binder: &mut Binder, input: &PathInput) -> Result<VarId> {
        let with_sep = with_separator(input, self.max_len())?;
        let ids: Vec<usize> = with_sep.iter().map(|t| self.vocab.id(t)).collect();
        let embed = binder.bind(tape, "enc.embed", &self.embed);
        let emb = tape.select_rows(embed, &ids);
        let n = ids.len();
        let fwd_order: Vec<usize> = (0..n).collect();
        let bwd_order: Vec<usize> = (0..n).rev().collect();
        let fwd = self.run_direction(tape, binder, "enc.fwd", &self.fwd, emb, &fwd_order);
        let bwd = self.run_direction(tape, binder, "enc.bwd", &self.bwd, emb, &bwd_order);
        let rows: Vec<VarId> = (0..n)
            .map(|t| tape.concat_cols(&[fwd[t], bwd[t]]))
            .collect();
        let all = tape.concat_rows(&rows);
        Ok(drop_separator(tape, all, input.head_len))
    }
}

/// Transformer backend for the `pretrained` encoder kind: token, position,
/// and segment embeddings followed by a stack of encoder layers. Weights can
/// be loaded from a JSON checkpoint (see [`TransformerEncoder::load`]) or
/// initialized fresh and trained like the toy backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformerEncoder {
    pub vocab: Vocab,
    pub embed: Array2<f64>,
    pub pos: Array2<f64>,
    pub seg: Array2<f64>,
    pub ln: LayerNorm,
    pub layers: Vec<TransformerLayer>,
}

pub const TRANSFORMER_MAX_LEN: usize = 512;

impl TransformerEncoder {
    pub fn init(
        rng: &mut ChaCha8Rng,
        vocab: Vocab,
        hidden_dim: usize,
        n_layers: usize,
    ) -> Result<Self> {
        let heads = [8usize, 4, 2, 1]
            .into_iter()
            .find(|h| hidden_dim % h == 0)
            .unwrap();
        if n_layers == 0 {
            return Err(Error::Argument("encoder.layers must be at least 1".into()));
        }
        Ok(TransformerEncoder {
            embed: glorot(rng, vocab.len(), hidden_dim),
            pos: glorot(rng, TRANSFORMER_MAX_LEN, hidden_dim),
            seg: glorot(rng, 2, hidden_dim),
            ln: LayerNorm::init(hidden_dim),
            layers: (0..n_layers)
                .map(|_| TransformerLayer::init(rng, hidden_dim, heads))
                .collect(),
            vocab,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))
    }

    pub fn visit<'a>(&'a self, out: &mut Vec<(String, &'a Array2<f64>)>) {
        out.push(("enc.embed".into(), &self.embed));
        out.push(("enc.pos".into(), &self.pos));
        out.push(("enc.seg".into(), &self.seg));
        self.ln.visit("enc.ln", out);
        for (i, layer) in self.layers.iter().enumerate() {
            layer.visit(&format!("enc.layer{i}"), out);
        }
    }

    pub fn visit_mut<'a>(&'a mut self, out: &mut Vec<(String, &'a mut Array2<f64>)>) {
        out.push(("enc.embed".into(), &mut self.embed));
        out.push(("enc.pos".into(), &mut self.pos));
        out.push(("enc.seg".into(), &mut self.seg));
        self.ln.visit_mut("enc.ln", out);
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.visit_mut(&format!("enc.layer{i}"), out);
        }
    }
}

impl SequenceEncoder for TransformerEncoder {
    fn hidden_dim(&self) -> usize {
        self.embed.ncols()
    }

    fn max_len(&self) -> usize {
        self.pos.nrows()
    }

    fn encode(&self, tape: &mut Tape, binder: &mut Binder, input: &PathInput) -> Result<VarId> {
        let with_sep = with_separator(input, self.max_len())?;
        let n = with_sep.len();
        let ids: Vec<usize> = with_sep.iter().map(|t| self.vocab.id(t)).collect();
        let seg_ids: Vec<usize> = (0..n).map(|t| usize::from(t > input.head_len)).collect();
        let embed = binder.bind(tape, "enc.embed", &self.embed);
        let pos = binder.bind(tape, "enc.pos", &self.pos);
        let seg = binder.bind(tape, "enc.seg", &self.seg);
        let tok = tape.select_rows(embed, &ids);
        let pos_rows: Vec<usize> = (0..n).collect();
        let pos_sel = tape.select_rows(pos, &pos_rows);
        let seg_sel = tape.select_rows(seg, &seg_ids);
        let sum = tape.add(tok, pos_sel);
        let x = tape.add(sum, seg_sel);
        let mut h = self.ln.forward(tape, binder, "enc.ln", x);
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, binder, &format!("enc.layer{i}"), h, None);
        }
        Ok(drop_separator(tape, h, input.head_len))
    }
}

fn with_separator(input: &PathInput, max_len: usize) -> Result<Vec<String>> {
    let mut tokens = Vec::with_capacity(input.tokens.len() + 1);
    tokens.extend_from_slice(&input.tokens[..input.head_len]);
    tokens.push(SEP_TOKEN.to_string());
    tokens.extend_from_slice(&input.tokens[input.head_len..]);
    if tokens.len() > max_len {
        return Err(Error::OverLength {
            len: tokens.len(),
            max: max_len,
        });
    }
    Ok(tokens)
}

/// Remove the separator row so the output aligns with the document tokens.
fn drop_separator(tape: &mut Tape, encoded: VarId, head_len: usize) -> VarId {
    let n = tape.value(encoded).nrows();
    let keep: Vec<usize> = (0..n).filter(|&i| i != head_len).collect();
    tape.select_rows(encoded, &keep)
}

/// The configured backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EncoderBackend {
    Toy(ToyEncoder),
    Transformer(TransformerEncoder),
}

impl EncoderBackend {
    pub fn visit<'a>(&'a self, out: &mut Vec<(String, &'a Array2<f64>)>) {
        match self {
            EncoderBackend::Toy(e) => e.visit(out),
            EncoderBackend::Transformer(e) => e.visit(out),
        }
    }

    pub fn visit_mut<'a>(&'a mut self, out: &mut Vec<(String, &'a mut Array2<f64>)>) {
        match self {
            EncoderBackend::Toy(e) => e.visit_mut(out),
            EncoderBackend::Transformer(e) => e.visit_mut(out),
        }
    }
}

impl SequenceEncoder for EncoderBackend {
    fn hidden_dim(&self) -> usize {
        match self {
            EncoderBackend::Toy(e) => e.hidden_dim(),
            EncoderBackend::Transformer(e) => e.hidden_dim(),
        }
    }

    fn max_len(&self) -> usize {
        match self {
            EncoderBackend::Toy(e) => e.max_len(),
            EncoderBackend::Transformer(e) => e.max_len(),
        }
    }

    fn encode(&self, tape: &mut Tape, binder: &mut Binder, input: &PathInput) -> Result<VarId> {
        match self {
            EncoderBackend::Toy(e) => e.encode(tape, binder, input),
            EncoderBackend::Transformer(e) => e.encode(tape, binder, input),
        }
    }
}

/// Componentwise max over the span's token vectors: `[1, hidden_dim]`.
pub fn mention_repr(tape: &mut Tape, token_vectors: VarId, span: &Range<usize>) -> Result<VarId> {
    let n = tape.value(token_vectors).nrows();
    if span.start >= span.end {
        return Err(Error::Argument(format!(
            "mention span [{}, {}) is empty",
            span.start, span.end
        )));
    }
    if span.end > n {
        return Err(Error::Argument(format!(
            "mention span [{}, {}) exceeds the {n}-token sequence",
            span.start, span.end
        )));
    }
    let rows: Vec<usize> = span.clone().collect();
    let sel = tape.select_rows(token_vectors, &rows);
    Ok(tape.max_cols(sel))
}

/// Componentwise log-sum-exp over mention vectors: the entity's path-level
/// representation.
pub fn entity_path_repr(tape: &mut Tape, mentions: &[VarId]) -> Result<VarId> {
    if mentions.is_empty() {
        return Err(Error::Argument(
            "entity representation needs at least one mention".into(),
        ));
    }
    let stacked = tape.concat_rows(mentions);
    Ok(tape.logsumexp_cols(stacked))
}

/// All entity path-level representations for one encoded path, keyed by
/// entity id. Mentions from both documents contribute.
pub fn path_entity_reprs(
    tape: &mut Tape,
    token_vectors: VarId,
    input: &PathInput,
) -> Result<BTreeMap<String, VarId>> {
    let mut by_entity: BTreeMap<String, Vec<VarId>> = BTreeMap::new();
    for m in &input.mentions {
        let repr = mention_repr(tape, token_vectors, &m.span)?;
        by_entity.entry(m.entity.clone()).or_default().push(repr);
    }
    let mut out = BTreeMap::new();
    for (entity, mentions) in by_entity {
        out.insert(entity.clone(), entity_path_repr(tape, &mentions)?);
    }
    Ok(out)
}
