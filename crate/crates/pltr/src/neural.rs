//! Trainable token encoder with three output heads.
//!
//! The encoder is a small pre-norm self-attention stack over learned token
//! and position embeddings, trained from scratch. Heads:
//!   * tagging: linear projection to the BIOES label set;
//!   * label-word / vocabulary: tied to the input embedding table;
//!   * mask-fill: tied-embedding logits restricted to a candidate token set.
//!
//! All math is f64 on the [`Graph`](crate::graph::Graph) tape, so forward
//! results and gradients are bit-reproducible for a fixed seed and input.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, EntityLabel, Sentence, SpanTag};
use crate::error::{Error, Result};
use crate::graph::{Graph, Mat, NodeId};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const SEP: u32 = 2;
pub const MASK: u32 = 3;

pub const PAD_TOKEN: &str = "[PAD]";
pub const UNK_TOKEN: &str = "[UNK]";
pub const SEP_TOKEN: &str = "[SEP]";
pub const MASK_TOKEN: &str = "[MASK]";

/// Word-level vocabulary with reserved control tokens at fixed ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    /// Build from token streams in encounter order; duplicates are ignored.
    pub fn build<'a>(streams: impl IntoIterator<Item = &'a str>) -> Self {
        let mut vocab = Vocab { tokens: Vec::new(), index: HashMap::new() };
        for reserved in [PAD_TOKEN, UNK_TOKEN, SEP_TOKEN, MASK_TOKEN] {
            vocab.insert(reserved);
        }
        for tok in streams {
            vocab.insert(tok);
        }
        vocab
    }

    fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Vocab { tokens, index }
    }

    fn insert(&mut self, token: &str) -> u32 {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.tokens.len() as u32;
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), id);
        id
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn id_strict(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<u32> {
        tokens.iter().map(|t| self.id(t)).collect()
    }
}

/// BIOES tag set over a fixed type inventory: O first, then B/I/E/S per type.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelSet {
    names: Vec<String>,
    index: HashMap<String, usize>,
    types: Vec<String>,
}

impl LabelSet {
    pub fn from_inventory(types: &[String]) -> Self {
        let mut names = vec!["O".to_string()];
        for t in types {
            for p in ["B", "I", "E", "S"] {
                names.push(format!("{p}-{t}"));
            }
        }
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        LabelSet { names, index, types: types.to_vec() }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn types(&self) -> &[String] {
        &self.types
    }

    pub fn id_of(&self, label: &EntityLabel) -> Result<usize> {
        self.index
            .get(&label.to_string())
            .copied()
            .ok_or_else(|| Error::Validation(format!("label {label} outside the tag set")))
    }

    pub fn label_of(&self, id: usize) -> Result<EntityLabel> {
        let name = self
            .names
            .get(id)
            .ok_or_else(|| Error::Validation(format!("label id {id} out of range")))?;
        name.parse()
    }
}

/// Encoder shape; `dim` must be divisible by `heads`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub max_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { dim: 64, depth: 2, heads: 2, max_len: 256 }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.depth == 0 || self.heads == 0 || self.max_len == 0 {
            return Err(Error::Validation("model dimensions must be positive".into()));
        }
        if self.dim % self.heads != 0 {
            return Err(Error::Validation(format!(
                "dim {} not divisible by heads {}",
                self.dim, self.heads
            )));
        }
        Ok(())
    }
}

/// Encoder parameters plus the symbol tables they were built against.
#[derive(Debug, Clone)]
pub struct EncoderModel {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub labels: LabelSet,
    /// EntLM label word per entity type.
    pub label_words: BTreeMap<String, String>,
    pub seed: u64,
    params: BTreeMap<String, Mat>,
}

/// Leaf node ids for every parameter, keyed by parameter name.
pub struct Bound {
    pub ids: BTreeMap<String, NodeId>,
}

impl Bound {
    pub fn id(&self, name: &str) -> NodeId {
        self.ids[name]
    }
}

/// Graph handles from one forward pass.
pub struct ForwardPass {
    pub hidden: NodeId,
    pub tag_logprobs: NodeId,
    pub token_ids: Vec<u32>,
    pub truncated: bool,
}

/// Materialized forward results for inference callers.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub hidden: Mat,
    pub tag_logprobs: Mat,
    pub token_ids: Vec<u32>,
    pub truncated: bool,
}

/// Named gradients, aligned with the model's parameter map.
#[derive(Debug, Clone)]
pub struct GradSet(pub BTreeMap<String, Mat>);

impl GradSet {
    pub fn global_norm(&self) -> f64 {
        self.0.values().map(Mat::sq_norm).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, k: f64) {
        for m in self.0.values_mut() {
            for v in &mut m.data {
                *v *= k;
            }
        }
    }
}

fn gauss(rng: &mut ChaCha20Rng, std: f64) -> f64 {
    use rand::Rng;
    // Box-Muller; fixed stream keeps initialization reproducible
    let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    std * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

impl EncoderModel {
    pub fn new(
        config: ModelConfig,
        vocab: Vocab,
        type_inventory: &[String],
        label_words: BTreeMap<String, String>,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let labels = LabelSet::from_inventory(type_inventory);
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut params = BTreeMap::new();
        // creation order is fixed so the same seed gives the same draws;
        // token embedding rows are seeded per token string so growing the
        // vocabulary never reshuffles unrelated parameters
        let mut weight = |params: &mut BTreeMap<String, Mat>, name: String, r: usize, c: usize| {
            let m = Mat::from_fn(r, c, |_, _| gauss(&mut rng, 0.02));
            params.insert(name, m);
        };
        let d = config.dim;
        weight(&mut params, "emb.pos".into(), config.max_len, d);
        for layer in 0..config.depth {
            for w in ["wq", "wk", "wv", "wo"] {
                weight(&mut params, format!("layer{layer}.attn.{w}"), d, d);
            }
            for b in ["bq", "bk", "bv", "bo"] {
                params.insert(format!("layer{layer}.attn.{b}"), Mat::zeros(1, d));
            }
            params.insert(format!("layer{layer}.ln1.gamma"), ones(1, d));
            params.insert(format!("layer{layer}.ln1.beta"), Mat::zeros(1, d));
            params.insert(format!("layer{layer}.ln2.gamma"), ones(1, d));
            params.insert(format!("layer{layer}.ln2.beta"), Mat::zeros(1, d));
            weight(&mut params, format!("layer{layer}.ffn.w1"), d, 4 * d);
            params.insert(format!("layer{layer}.ffn.b1"), Mat::zeros(1, 4 * d));
            params.insert(format!("layer{layer}.ffn.w2"), Mat::zeros(4 * d, d));
            params.insert(format!("layer{layer}.ffn.b2"), Mat::zeros(1, d));
        }
        let mut emb = Mat::zeros(vocab.len(), d);
        let mut fill = Mat::zeros(vocab.len(), d);
        for (row, token) in vocab.tokens.iter().enumerate() {
            let mut row_rng = ChaCha20Rng::seed_from_u64(seed ^ fnv1a(token.as_bytes()));
            for slot in emb.row_mut(row) {
                *slot = gauss(&mut row_rng, 0.02);
            }
            // the fill head scores candidates against its own token table so
            // selection-softmax gradients never drag the word embeddings
            let mut fill_rng =
                ChaCha20Rng::seed_from_u64(seed ^ fnv1a(token.as_bytes()).rotate_left(17));
            for slot in fill.row_mut(row) {
                *slot = gauss(&mut fill_rng, 0.02);
            }
        }
        params.insert("emb.tok".into(), emb);
        params.insert("head.fill.emb".into(), fill);
        params.insert("final_ln.gamma".into(), ones(1, d));
        params.insert("final_ln.beta".into(), Mat::zeros(1, d));
        weight(&mut params, "head.tag.w".into(), d, labels.len());
        params.insert("head.tag.b".into(), Mat::zeros(1, labels.len()));
        // transform between hidden states and tied-embedding logits, shared
        // by the label-word and mask-fill heads
        weight(&mut params, "head.lm.w".into(), d, d);
        params.insert("head.lm.b".into(), Mat::zeros(1, d));
        params.insert("head.lm.gamma".into(), ones(1, d));
        params.insert("head.lm.beta".into(), Mat::zeros(1, d));

        Ok(EncoderModel { config, vocab, labels, label_words, seed, params })
    }

    /// Vocabulary + model assembled from a training corpus: corpus tokens in
    /// encounter order, then mined feature tokens, then prompt literals.
    pub fn from_corpus(
        config: ModelConfig,
        corpus: &Corpus,
        trfs: Option<&crate::trf::TrfSet>,
        seed: u64,
    ) -> Result<Self> {
        let mut stream: Vec<&str> = Vec::new();
        for s in corpus.sentences() {
            for t in &s.tokens {
                stream.push(t);
            }
        }
        let mut extra: Vec<String> = Vec::new();
        if let Some(set) = trfs {
            for tok in set.all_tokens_sorted() {
                extra.push(tok);
            }
            extra.push("type-related".into());
            extra.push("features:".into());
            extra.push(",".into());
            for ty in corpus.type_inventory() {
                extra.push(format!("{ty}:"));
            }
        }
        for e in &extra {
            stream.push(e);
        }
        let vocab = Vocab::build(stream);
        let label_words = most_frequent_label_words(corpus);
        EncoderModel::new(config, vocab, corpus.type_inventory(), label_words, seed)
    }

    pub fn params(&self) -> &BTreeMap<String, Mat> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut BTreeMap<String, Mat> {
        &mut self.params
    }

    /// One input-embedding row; the context-free token representation used
    /// for feature-distance supervision.
    pub fn input_embedding(&self, token: &str) -> &[f64] {
        self.params["emb.tok"].row(self.vocab.id(token) as usize)
    }

    pub fn bind(&self, g: &mut Graph) -> Bound {
        let ids = self.params.iter().map(|(k, v)| (k.clone(), g.leaf(v.clone()))).collect();
        Bound { ids }
    }

    /// Map tokens to ids, truncating to `max_len` with an explicit warning.
    pub fn prepare_ids(&self, tokens: &[String]) -> (Vec<u32>, bool) {
        let mut ids = self.vocab.encode(tokens);
        let truncated = ids.len() > self.config.max_len;
        if truncated {
            log::warn!(
                "input length {} exceeds max_len {}; truncating",
                ids.len(),
                self.config.max_len
            );
            ids.truncate(self.config.max_len);
        }
        (ids, truncated)
    }

    /// Forward pass on the tape. `token_ids` must already respect `max_len`.
    pub fn forward_ids(&self, g: &mut Graph, bound: &Bound, token_ids: &[u32]) -> ForwardPass {
        assert!(!token_ids.is_empty(), "forward needs at least one token");
        assert!(token_ids.len() <= self.config.max_len);
        let n = token_ids.len();
        let d = self.config.dim;
        let heads = self.config.heads;
        let dh = d / heads;

        let tok_rows: Vec<usize> = token_ids.iter().map(|&i| i as usize).collect();
        let pos_rows: Vec<usize> = (0..n).collect();
        let tok = g.gather(bound.id("emb.tok"), &tok_rows);
        let pos = g.gather(bound.id("emb.pos"), &pos_rows);
        let mut x = g.add(tok, pos);

        // attention mask: [PAD] columns are excluded for every query
        let pad_mask = if token_ids.contains(&PAD) {
            let mut m = Mat::zeros(n, n);
            for (j, &id) in token_ids.iter().enumerate() {
                if id == PAD {
                    for i in 0..n {
                        m.set(i, j, -1e30);
                    }
                }
            }
            Some(m)
        } else {
            None
        };

        for layer in 0..self.config.depth {
            let p = |s: &str| format!("layer{layer}.{s}");
            let normed = g.layer_norm(x, bound.id(&p("ln1.gamma")), bound.id(&p("ln1.beta")));
            let q = {
                let mm = g.matmul(normed, bound.id(&p("attn.wq")));
                g.add_row(mm, bound.id(&p("attn.bq")))
            };
            let k = {
                let mm = g.matmul(normed, bound.id(&p("attn.wk")));
                g.add_row(mm, bound.id(&p("attn.bk")))
            };
            let v = {
                let mm = g.matmul(normed, bound.id(&p("attn.wv")));
                g.add_row(mm, bound.id(&p("attn.bv")))
            };
            let mut head_outputs = Vec::with_capacity(heads);
            for h in 0..heads {
                let qh = g.slice_cols(q, h * dh, dh);
                let kh = g.slice_cols(k, h * dh, dh);
                let vh = g.slice_cols(v, h * dh, dh);
                let raw = g.matmul_nt(qh, kh);
                let scaled = g.scale(raw, 1.0 / (dh as f64).sqrt());
                let weights = g.row_softmax(scaled, pad_mask.clone());
                head_outputs.push(g.matmul(weights, vh));
            }
            let merged = g.concat_cols(&head_outputs);
            let proj = {
                let mm = g.matmul(merged, bound.id(&p("attn.wo")));
                g.add_row(mm, bound.id(&p("attn.bo")))
            };
            x = g.add(x, proj);

            let normed2 = g.layer_norm(x, bound.id(&p("ln2.gamma")), bound.id(&p("ln2.beta")));
            let up = {
                let mm = g.matmul(normed2, bound.id(&p("ffn.w1")));
                g.add_row(mm, bound.id(&p("ffn.b1")))
            };
            let act = g.gelu(up);
            let down = {
                let mm = g.matmul(act, bound.id(&p("ffn.w2")));
                g.add_row(mm, bound.id(&p("ffn.b2")))
            };
            x = g.add(x, down);
        }

        let hidden = g.layer_norm(x, bound.id("final_ln.gamma"), bound.id("final_ln.beta"));
        let tag_logits = {
            let mm = g.matmul(hidden, bound.id("head.tag.w"));
            g.add_row(mm, bound.id("head.tag.b"))
        };
        let tag_logprobs = g.row_log_softmax(tag_logits);
        ForwardPass { hidden, tag_logprobs, token_ids: token_ids.to_vec(), truncated: false }
    }

    /// Inference forward pass: deterministic function of (parameters, input).
    pub fn encode(&self, tokens: &[String]) -> ForwardOutput {
        let (ids, truncated) = self.prepare_ids(tokens);
        let mut g = Graph::new();
        let bound = self.bind(&mut g);
        let fwd = self.forward_ids(&mut g, &bound, &ids);
        ForwardOutput {
            hidden: g.value(fwd.hidden).clone(),
            tag_logprobs: g.value(fwd.tag_logprobs).clone(),
            token_ids: ids,
            truncated,
        }
    }

    /// Value-space twin of [`Self::lm_transform`] for inference paths; must
    /// stay in lockstep with the graph version.
    pub fn lm_transform_values(&self, h: &[f64]) -> Vec<f64> {
        let w = &self.params["head.lm.w"];
        let b = &self.params["head.lm.b"];
        let gamma = &self.params["head.lm.gamma"];
        let beta = &self.params["head.lm.beta"];
        let d = self.config.dim;
        let mut act = vec![0.0; d];
        for (i, slot) in act.iter_mut().enumerate() {
            let mut acc = b.data[i];
            for (j, &hv) in h.iter().enumerate() {
                acc += hv * w.get(j, i);
            }
            *slot = crate::graph::gelu(acc);
        }
        let (mean, inv_std) = crate::graph::row_moments(&act);
        act.iter()
            .enumerate()
            .map(|(c, &v)| gamma.data[c] * ((v - mean) * inv_std) + beta.data[c])
            .collect()
    }

    /// MLM-style transform applied before any tied-embedding dot product.
    fn lm_transform(&self, g: &mut Graph, bound: &Bound, hidden: NodeId) -> NodeId {
        let dense = {
            let mm = g.matmul(hidden, bound.id("head.lm.w"));
            g.add_row(mm, bound.id("head.lm.b"))
        };
        let act = g.gelu(dense);
        g.layer_norm(act, bound.id("head.lm.gamma"), bound.id("head.lm.beta"))
    }

    /// Tied-embedding log-probabilities over the whole vocabulary.
    pub fn vocab_logprobs(&self, g: &mut Graph, bound: &Bound, fwd: &ForwardPass) -> NodeId {
        let transformed = self.lm_transform(g, bound, fwd.hidden);
        let logits = g.matmul_nt(transformed, bound.id("emb.tok"));
        g.row_log_softmax(logits)
    }

    /// Log-probabilities at the mask positions, restricted to the candidate
    /// token rows (dot products against input embeddings).
    pub fn fill_logprobs(
        &self,
        g: &mut Graph,
        bound: &Bound,
        fwd: &ForwardPass,
        mask_positions: &[usize],
        candidate_ids: &[u32],
    ) -> NodeId {
        assert!(!candidate_ids.is_empty());
        let mask_hidden = g.gather(fwd.hidden, mask_positions);
        let transformed = self.lm_transform(g, bound, mask_hidden);
        let rows: Vec<usize> = candidate_ids.iter().map(|&i| i as usize).collect();
        let cand = g.gather(bound.id("head.fill.emb"), &rows);
        let logits = g.matmul_nt(transformed, cand);
        g.row_log_softmax(logits)
    }

    /// One fill-head candidate row; the `r` vector of the restricted softmax.
    pub fn fill_embedding(&self, token: &str) -> &[f64] {
        self.params["head.fill.emb"].row(self.vocab.id(token) as usize)
    }

    /// Mean tag NLL over the first `gold.len()` positions; prompt suffix
    /// positions carry no gold labels and are excluded.
    pub fn tag_loss(
        &self,
        g: &mut Graph,
        fwd: &ForwardPass,
        gold: &[EntityLabel],
    ) -> Result<NodeId> {
        if gold.is_empty() || gold.len() > fwd.token_ids.len() {
            return Err(Error::Validation(format!(
                "gold length {} incompatible with sequence length {}",
                gold.len(),
                fwd.token_ids.len()
            )));
        }
        let mut picks = Vec::with_capacity(gold.len());
        for (i, label) in gold.iter().enumerate() {
            picks.push((i, self.labels.id_of(label)?));
        }
        Ok(g.pick_nll_mean(fwd.tag_logprobs, &picks))
    }

    /// Mean NLL of the label-word targets under the tied vocabulary head.
    pub fn entlm_loss(
        &self,
        g: &mut Graph,
        bound: &Bound,
        fwd: &ForwardPass,
        targets: &[u32],
    ) -> Result<NodeId> {
        if targets.is_empty() || targets.len() > fwd.token_ids.len() {
            return Err(Error::Validation(format!(
                "target length {} incompatible with sequence length {}",
                targets.len(),
                fwd.token_ids.len()
            )));
        }
        let logp = self.vocab_logprobs(g, bound, fwd);
        let picks: Vec<(usize, usize)> =
            targets.iter().enumerate().map(|(i, &t)| (i, t as usize)).collect();
        Ok(g.pick_nll_mean(logp, &picks))
    }

    /// Mean over the K masks of the NLL of each mask's supervision token
    /// under the restricted fill distribution.
    pub fn gen_loss(
        &self,
        g: &mut Graph,
        bound: &Bound,
        fwd: &ForwardPass,
        mask_positions: &[usize],
        candidates: &[String],
        targets: &[String],
    ) -> Result<NodeId> {
        if candidates.is_empty() {
            return Err(Error::Validation("candidate feature set is empty".into()));
        }
        if targets.len() != mask_positions.len() {
            return Err(Error::Validation(format!(
                "{} supervision tokens for {} masks",
                targets.len(),
                mask_positions.len()
            )));
        }
        let candidate_ids: Vec<u32> = candidates.iter().map(|t| self.vocab.id(t)).collect();
        let mut picks = Vec::with_capacity(targets.len());
        for (row, target) in targets.iter().enumerate() {
            let col = candidates
                .iter()
                .position(|c| c == target)
                .ok_or_else(|| {
                    Error::Validation(format!("supervision token {target:?} not in candidate set"))
                })?;
            picks.push((row, col));
        }
        let logp = self.fill_logprobs(g, bound, fwd, mask_positions, &candidate_ids);
        Ok(g.pick_nll_mean(logp, &picks))
    }

    /// Label-word targets for one sentence: entity positions are replaced by
    /// their type's label word, O positions reconstruct the input token.
    pub fn entlm_targets(&self, sentence: &Sentence) -> Result<Vec<u32>> {
        sentence
            .tokens
            .iter()
            .zip(&sentence.labels)
            .map(|(tok, label)| {
                let word = match label.entity_type() {
                    Some(ty) => self.label_words.get(ty).ok_or_else(|| {
                        Error::Validation(format!("no label word for type {ty}"))
                    })?,
                    None => tok,
                };
                self.vocab.id_strict(word).ok_or_else(|| {
                    Error::Validation(format!("target token {word:?} absent from vocabulary"))
                })
            })
            .collect()
    }

    /// Argmax tags for the first `n_scored` positions.
    pub fn predict_tags(&self, out: &ForwardOutput, n_scored: usize) -> Vec<EntityLabel> {
        (0..n_scored.min(out.tag_logprobs.rows))
            .map(|r| {
                let row = out.tag_logprobs.row(r);
                self.labels.label_of(argmax(row)).expect("argmax within label set")
            })
            .collect()
    }

    /// EntLM decoding: a position is an entity of type t when the tied
    /// vocabulary head's argmax equals t's label word (earliest inventory
    /// type wins if label words collide); runs of one type become spans.
    pub fn predict_entlm(&self, out: &ForwardOutput, n_scored: usize) -> Vec<EntityLabel> {
        let n = n_scored.min(out.hidden.rows);
        let emb = &self.params["emb.tok"];
        let mut types: Vec<Option<&str>> = Vec::with_capacity(n);
        for r in 0..n {
            let h = self.lm_transform_values(out.hidden.row(r));
            let mut best = (f64::NEG_INFINITY, 0usize);
            for v in 0..emb.rows {
                let dot: f64 = h.iter().zip(emb.row(v)).map(|(a, b)| a * b).sum();
                if dot > best.0 {
                    best = (dot, v);
                }
            }
            let predicted = self.vocab.token(best.1 as u32);
            let ty = self
                .labels
                .types()
                .iter()
                .find(|t| self.label_words.get(*t).map(String::as_str) == Some(predicted));
            types.push(ty.map(String::as_str));
        }
        // contiguous runs of one type become BIOES spans
        let mut labels = vec![EntityLabel::Outside; n];
        let mut i = 0;
        while i < n {
            let Some(ty) = types[i] else {
                i += 1;
                continue;
            };
            let mut j = i + 1;
            while j < n && types[j] == Some(ty) {
                j += 1;
            }
            if j - i == 1 {
                labels[i] = EntityLabel::entity(SpanTag::Single, ty);
            } else {
                labels[i] = EntityLabel::entity(SpanTag::Begin, ty);
                for slot in labels.iter_mut().take(j - 1).skip(i + 1) {
                    *slot = EntityLabel::entity(SpanTag::Inside, ty);
                }
                labels[j - 1] = EntityLabel::entity(SpanTag::End, ty);
            }
            i = j;
        }
        labels
    }

    /// Extract named gradients for every parameter after `Graph::backward`.
    pub fn gradients(&self, grads: &[Option<Mat>], bound: &Bound) -> GradSet {
        let mut out = BTreeMap::new();
        for (name, &node) in &bound.ids {
            let shape = &self.params[name];
            let g = grads[node]
                .clone()
                .unwrap_or_else(|| Mat::zeros(shape.rows, shape.cols));
            out.insert(name.clone(), g);
        }
        GradSet(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = CheckpointFile {
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            seed: self.seed,
            vocab: self.vocab.tokens.clone(),
            type_inventory: self.labels.types.clone(),
            label_words: self.label_words.clone(),
            params: self.params.clone(),
        };
        let json = serde_json::to_string(&file)?;
        std::fs::write(path, json).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let file: CheckpointFile = serde_json::from_str(&text)?;
        if file.version != CHECKPOINT_VERSION {
            return Err(Error::Validation(format!(
                "checkpoint version {} not supported (expected {CHECKPOINT_VERSION})",
                file.version
            )));
        }
        file.config.validate()?;
        Ok(EncoderModel {
            config: file.config,
            vocab: Vocab::from_tokens(file.vocab),
            labels: LabelSet::from_inventory(&file.type_inventory),
            label_words: file.label_words,
            seed: file.seed,
            params: file.params,
        })
    }
}

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    version: u32,
    config: ModelConfig,
    seed: u64,
    vocab: Vec<String>,
    type_inventory: Vec<String>,
    label_words: BTreeMap<String, String>,
    params: BTreeMap<String, Mat>,
}

fn ones(rows: usize, cols: usize) -> Mat {
    Mat::from_vec(rows, cols, vec![1.0; rows * cols])
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x1000_0000_01b3);
    }
    hash
}

/// Index of the row maximum; the first maximal index wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Most frequent entity-position token per type (ties lexicographic); used
/// as the default EntLM label-word map.
pub fn most_frequent_label_words(corpus: &Corpus) -> BTreeMap<String, String> {
    let mut counts: BTreeMap<String, BTreeMap<String, u64>> = BTreeMap::new();
    for s in corpus.sentences() {
        for (tok, label) in s.tokens.iter().zip(&s.labels) {
            if let Some(ty) = label.entity_type() {
                *counts.entry(ty.to_string()).or_default().entry(tok.clone()).or_insert(0) += 1;
            }
        }
    }
    let mut words = BTreeMap::new();
    for (ty, surface) in counts {
        let best = surface
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)))
            .map(|(t, _)| t.clone())
            .expect("type has at least one entity token");
        if words.values().any(|w| *w == best) {
            log::warn!("label word {best:?} shared by multiple types; decoding prefers the earlier type");
        }
        words.insert(ty, best);
    }
    words
}
