//! Per-example prompt construction and feature selection.
//!
//! A *selection prompt* appends `[SEP] type-related features:` plus K mask
//! slots to a sentence; the encoder's fill distribution over the mined
//! feature set picks the relevant features, which are then rendered into an
//! *entity prompt* of the form `x [SEP] TYPE: a, b [SEP] TYPE: c`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{EntityLabel, Sentence};
use crate::error::{Error, Result};
use crate::graph::Mat;
use crate::neural::{argmax, EncoderModel, MASK_TOKEN, SEP_TOKEN};
use crate::trf::TrfSet;

/// Literal tokens of the selection template.
pub const TEMPLATE_LITERALS: [&str; 2] = ["type-related", "features:"];

/// Sentence plus K mask slots behind the selection template.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionPrompt {
    pub tokens: Vec<String>,
    pub mask_positions: Vec<usize>,
    pub n_sentence_tokens: usize,
}

/// `x [SEP] type-related features: [MASK] ... [MASK]` with exactly K masks.
pub fn build_selection_prompt(x: &Sentence, k: usize) -> Result<SelectionPrompt> {
    if k == 0 {
        return Err(Error::Validation("K must be >= 1".into()));
    }
    let mut tokens = x.tokens.clone();
    tokens.push(SEP_TOKEN.to_string());
    for lit in TEMPLATE_LITERALS {
        tokens.push(lit.to_string());
    }
    let first_mask = tokens.len();
    for _ in 0..k {
        tokens.push(MASK_TOKEN.to_string());
    }
    Ok(SelectionPrompt {
        tokens,
        mask_positions: (first_mask..first_mask + k).collect(),
        n_sentence_tokens: x.len(),
    })
}

/// Softmax over the feature set of `r . h` scores for one mask's hidden
/// vector. Features iterate in lexicographic token order.
pub fn fill_distribution(
    model: &EncoderModel,
    hidden: &[f64],
    trfs: &TrfSet,
) -> Result<Vec<(String, f64)>> {
    let candidates = trfs.all_tokens_sorted();
    if candidates.is_empty() {
        return Err(Error::Validation("feature set is empty".into()));
    }
    let transformed = model.lm_transform_values(hidden);
    let logits: Vec<f64> = candidates
        .iter()
        .map(|tok| {
            model
                .fill_embedding(tok)
                .iter()
                .zip(&transformed)
                .map(|(r, h)| r * h)
                .sum()
        })
        .collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(candidates.into_iter().zip(exps.into_iter().map(|e| e / sum)).collect())
}

/// Features selected for one sentence, deduplicated in mask order.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectedTrfs {
    /// Unique selected tokens in the order their mask first chose them.
    pub ordered: Vec<String>,
    /// Fill probability at the mask that first selected each token.
    pub probabilities: Vec<f64>,
    /// Selected tokens grouped by owning type, in inventory order; types
    /// with no selection are absent.
    pub by_type: Vec<(String, Vec<String>)>,
}

impl SelectedTrfs {
    pub fn empty() -> Self {
        SelectedTrfs { ordered: Vec::new(), probabilities: Vec::new(), by_type: Vec::new() }
    }

    pub fn group_map(&self) -> BTreeMap<String, Vec<String>> {
        self.by_type.iter().cloned().collect()
    }
}

/// Per-mask argmax over the fill distribution, with repeats discarded.
pub fn select_relevant_trfs(
    model: &EncoderModel,
    x: &Sentence,
    trfs: &TrfSet,
    k: usize,
) -> Result<SelectedTrfs> {
    let prompt = build_selection_prompt(x, k)?;
    let out = model.encode(&prompt.tokens);
    select_from_hidden(model, &out.hidden, &prompt.mask_positions, trfs)
}

/// Selection step shared by training (which already has the forward pass on
/// its tape) and inference.
pub fn select_from_hidden(
    model: &EncoderModel,
    hidden: &Mat,
    mask_positions: &[usize],
    trfs: &TrfSet,
) -> Result<SelectedTrfs> {
    let mut ordered: Vec<String> = Vec::new();
    let mut probabilities: Vec<f64> = Vec::new();
    for &pos in mask_positions {
        if pos >= hidden.rows {
            // mask fell past max_len truncation; nothing to select
            continue;
        }
        let dist = fill_distribution(model, hidden.row(pos), trfs)?;
        let best = argmax(&dist.iter().map(|(_, p)| *p).collect::<Vec<_>>());
        let (token, prob) = &dist[best];
        if !ordered.contains(token) {
            ordered.push(token.clone());
            probabilities.push(*prob);
        }
    }
    let mut by_type: Vec<(String, Vec<String>)> = Vec::new();
    for ty in &trfs.type_order {
        let group: Vec<String> = ordered
            .iter()
            .filter(|tok| trfs.owning_type(tok) == Some(ty.as_str()))
            .cloned()
            .collect();
        if !group.is_empty() {
            by_type.push((ty.clone(), group));
        }
    }
    Ok(SelectedTrfs { ordered, probabilities, by_type })
}

/// Distance-derived supervision for the K mask slots.
#[derive(Debug, Clone, PartialEq)]
pub struct PhiLabels {
    /// Exactly K feature tokens, nondecreasing in distance; if fewer than K
    /// features exist the last one is repeated.
    pub labels: Vec<String>,
    pub distances: Vec<f64>,
}

/// Score every feature by its minimum Euclidean distance (input embeddings)
/// to any token of `x`; keep the K nearest in ascending order.
pub fn phi_labels(
    model: &EncoderModel,
    x: &Sentence,
    trfs: &TrfSet,
    k: usize,
) -> Result<PhiLabels> {
    phi_labels_from_tokens(model, &x.tokens, trfs, k)
}

/// [`phi_labels`] over an explicit token list; training uses this with the
/// dropout-surviving tokens so supervision never points at removed words.
pub fn phi_labels_from_tokens(
    model: &EncoderModel,
    tokens: &[String],
    trfs: &TrfSet,
    k: usize,
) -> Result<PhiLabels> {
    if k == 0 {
        return Err(Error::Validation("K must be >= 1".into()));
    }
    if tokens.is_empty() {
        return Err(Error::Validation("phi labels need at least one token".into()));
    }
    let candidates = trfs.all_tokens_sorted();
    if candidates.is_empty() {
        return Err(Error::Validation("feature set is empty".into()));
    }
    let token_embs: Vec<&[f64]> = tokens.iter().map(|t| model.input_embedding(t)).collect();
    // distance ties (notably exact in-sentence matches at distance 0) are
    // ordered by first sentence position, so mask slots align with token
    // order rather than an arbitrary lexicographic shuffle
    let mut scored: Vec<(f64, usize, String)> = candidates
        .into_iter()
        .map(|tok| {
            let emb = model.input_embedding(&tok);
            let mut best = f64::INFINITY;
            for te in &token_embs {
                let d2: f64 = emb.iter().zip(*te).map(|(a, b)| (a - b) * (a - b)).sum();
                best = best.min(d2.sqrt());
            }
            let id = model.vocab.id(&tok);
            let position = tokens
                .iter()
                .position(|t| model.vocab.id(t) == id)
                .unwrap_or(usize::MAX);
            (best, position, tok)
        })
        .collect();
    scored.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .expect("finite distances")
            .then_with(|| a.1.cmp(&b.1))
            .then_with(|| a.2.cmp(&b.2))
    });
    scored.truncate(k);
    while scored.len() < k {
        let last = scored.last().expect("non-empty feature set").clone();
        scored.push(last);
    }
    let (distances, labels) = scored.into_iter().map(|(d, _, t)| (d, t)).unzip();
    Ok(PhiLabels { labels, distances })
}

/// Rendered entity prompt plus the structure it was rendered from.
#[derive(Debug, Clone, PartialEq)]
pub struct EntityPrompt {
    /// Token sequence fed to the encoder: sentence tokens, then per type a
    /// `[SEP] TYPE:` header and comma-separated feature tokens.
    pub tokens: Vec<String>,
    /// Display rendering, e.g. `"x [SEP] PER: Spokesmen [SEP] ORG: News, Corp"`.
    pub text: String,
    pub n_sentence_tokens: usize,
    pub groups: Vec<(String, Vec<String>)>,
}

/// Render the entity prompt. Types with no selected features are omitted;
/// segments follow `inventory` order; an empty selection yields the bare
/// sentence with no separator.
pub fn build_entity_prompt(
    x: &Sentence,
    selected: &SelectedTrfs,
    inventory: &[String],
) -> EntityPrompt {
    let grouped = selected.group_map();
    let mut tokens = x.tokens.clone();
    let mut text = x.tokens.join(" ");
    let mut groups = Vec::new();
    for ty in inventory {
        let Some(members) = grouped.get(ty) else { continue };
        if members.is_empty() {
            continue;
        }
        tokens.push(SEP_TOKEN.to_string());
        tokens.push(format!("{ty}:"));
        for (i, tok) in members.iter().enumerate() {
            if i > 0 {
                tokens.push(",".to_string());
            }
            tokens.push(tok.clone());
        }
        text.push_str(&format!(" {SEP_TOKEN} {ty}: {}", members.join(", ")));
        groups.push((ty.clone(), members.clone()));
    }
    EntityPrompt { tokens, text, n_sentence_tokens: x.len(), groups }
}

/// Invert [`build_entity_prompt`]'s text rendering back into the sentence
/// tokens and the per-type grouping. Defined for well-formed prompts whose
/// sentence tokens do not themselves contain `[SEP]`.
pub fn parse_entity_prompt(text: &str) -> Result<(Vec<String>, Vec<(String, Vec<String>)>)> {
    let mut parts = text.split(" [SEP] ");
    let sentence = parts
        .next()
        .ok_or_else(|| Error::Validation("empty prompt".into()))?
        .split(' ')
        .map(str::to_string)
        .collect();
    let mut groups = Vec::new();
    for segment in parts {
        let (ty, rest) = segment
            .split_once(": ")
            .ok_or_else(|| Error::Validation(format!("malformed prompt segment {segment:?}")))?;
        let members: Vec<String> = rest.split(", ").map(str::to_string).collect();
        if members.iter().any(String::is_empty) || ty.is_empty() {
            return Err(Error::Validation(format!("malformed prompt segment {segment:?}")));
        }
        groups.push((ty.to_string(), members));
    }
    Ok((sentence, groups))
}

/// One line of the prompted-dataset JSONL emitted by the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptedExample {
    pub tokens: Vec<String>,
    pub labels: Vec<EntityLabel>,
    pub selected: BTreeMap<String, Vec<String>>,
    pub phi: Vec<String>,
    pub rendered_prompt: String,
}

/// Run selection and supervision for one sentence and package the result.
pub fn prompt_example(
    model: &EncoderModel,
    x: &Sentence,
    trfs: &TrfSet,
    k: usize,
) -> Result<PromptedExample> {
    let selected = select_relevant_trfs(model, x, trfs, k)?;
    let phi = phi_labels(model, x, trfs, k)?;
    let prompt = build_entity_prompt(x, &selected, &trfs.type_order);
    Ok(PromptedExample {
        tokens: x.tokens.clone(),
        labels: x.labels.clone(),
        selected: selected.group_map(),
        phi: phi.labels,
        rendered_prompt: prompt.text,
    })
}
