//! Entity-level evaluation and cross-domain analyses.
//!
//! Scores use exact span + type matching after strict BIOES decoding, with
//! micro-averaged precision/recall/F1 pooled over all entities. Zero
//! denominators score 0, matching the usual CoNLL scorer convention.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{remap_ood_labels, strict_spans, Corpus, EntityLabel, EntitySpan, Sentence};
use crate::error::{Error, Result};
use crate::neural::EncoderModel;
use crate::prompting::{build_entity_prompt, select_relevant_trfs};
use crate::trf::TrfSet;

/// Which head produces predictions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaggingMode {
    FineTune,
    PromptTune,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positives: u64,
    pub false_positives: u64,
    pub false_negatives: u64,
    /// Gold entity count.
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketScore {
    pub label: String,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    /// Sentences falling in this bucket.
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub micro_f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub true_positives: u64,
    pub false_positives: u64,
    pub false_negatives: u64,
    pub per_type: BTreeMap<String, TypeScore>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub length_buckets: Option<Vec<BucketScore>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub similarity: Option<f64>,
}

fn prf(tp: u64, fp: u64, fn_: u64) -> (f64, f64, f64) {
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    (precision, recall, f1)
}

/// Entity-level micro-averaged scores for aligned prediction/gold sequences.
pub fn micro_f1(pred: &[Vec<EntityLabel>], gold: &[Vec<EntityLabel>]) -> Result<EvalReport> {
    if pred.len() != gold.len() {
        return Err(Error::Validation(format!(
            "prediction count {} != gold count {}",
            pred.len(),
            gold.len()
        )));
    }
    let mut pools: BTreeMap<String, (u64, u64, u64)> = BTreeMap::new();
    for (i, (p, g)) in pred.iter().zip(gold).enumerate() {
        if p.len() != g.len() {
            return Err(Error::Validation(format!(
                "sentence {i}: prediction length {} != gold length {}",
                p.len(),
                g.len()
            )));
        }
        let p_spans: BTreeSet<EntitySpan> = strict_spans(p).into_iter().collect();
        let g_spans: BTreeSet<EntitySpan> = strict_spans(g).into_iter().collect();
        for span in p_spans.intersection(&g_spans) {
            pools.entry(span.entity_type.clone()).or_default().0 += 1;
        }
        for span in p_spans.difference(&g_spans) {
            pools.entry(span.entity_type.clone()).or_default().1 += 1;
        }
        for span in g_spans.difference(&p_spans) {
            pools.entry(span.entity_type.clone()).or_default().2 += 1;
        }
    }
    let mut per_type = BTreeMap::new();
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for (ty, &(t, f, n)) in &pools {
        let (precision, recall, f1) = prf(t, f, n);
        per_type.insert(
            ty.clone(),
            TypeScore {
                precision,
                recall,
                f1,
                true_positives: t,
                false_positives: f,
                false_negatives: n,
                support: t + n,
            },
        );
        tp += t;
        fp += f;
        fn_ += n;
    }
    let (precision, recall, micro) = prf(tp, fp, fn_);
    Ok(EvalReport {
        micro_f1: micro,
        precision,
        recall,
        true_positives: tp,
        false_positives: fp,
        false_negatives: fn_,
        per_type,
        length_buckets: None,
        similarity: None,
    })
}

/// Anything that labels a sentence; the evaluator only needs predictions.
pub trait Tagger {
    fn predict(&self, sentence: &Sentence) -> Vec<EntityLabel>;
}

/// Model-backed tagger; when prompting is enabled each sentence gets its own
/// entity prompt via inference-time feature selection before tagging.
pub struct ModelTagger<'a> {
    pub model: &'a EncoderModel,
    pub trfs: Option<&'a TrfSet>,
    pub k: usize,
    pub mode: TaggingMode,
}

impl ModelTagger<'_> {
    fn input_tokens(&self, sentence: &Sentence) -> Vec<String> {
        match self.trfs {
            Some(trfs) => {
                let selected = select_relevant_trfs(self.model, sentence, trfs, self.k)
                    .unwrap_or_else(|_| crate::prompting::SelectedTrfs::empty());
                build_entity_prompt(sentence, &selected, &trfs.type_order).tokens
            }
            None => sentence.tokens.clone(),
        }
    }
}

impl Tagger for ModelTagger<'_> {
    fn predict(&self, sentence: &Sentence) -> Vec<EntityLabel> {
        let out = self.model.encode(&self.input_tokens(sentence));
        match self.mode {
            TaggingMode::FineTune => self.model.predict_tags(&out, sentence.len()),
            TaggingMode::PromptTune => self.model.predict_entlm(&out, sentence.len()),
        }
    }
}

/// Predict every sentence and score against the corpus labels. Predictions
/// are pure per sentence, so they run batch-parallel in input order.
pub fn evaluate(tagger: &(dyn Tagger + Sync), corpus: &Corpus) -> Result<EvalReport> {
    let pred: Vec<Vec<EntityLabel>> =
        corpus.sentences().par_iter().map(|s| tagger.predict(s)).collect();
    let gold: Vec<Vec<EntityLabel>> =
        corpus.sentences().iter().map(|s| s.labels.clone()).collect();
    micro_f1(&pred, &gold)
}

/// Out-of-domain evaluation: unseen label types are remapped to O first,
/// then each sentence is prompted and scored like any other input.
pub fn evaluate_ood(
    tagger: &(dyn Tagger + Sync),
    ood: &Corpus,
    known_types: &BTreeSet<String>,
) -> Result<EvalReport> {
    let remapped = remap_ood_labels(ood, known_types)?;
    evaluate(tagger, &remapped)
}

const BUCKETS: [(&str, usize, usize); 3] =
    [("<25", 0, 24), ("25-35", 25, 35), (">35", 36, usize::MAX)];

/// F1 per sentence-length bucket over original token counts. Empty buckets
/// are absent from the report rather than scored 0.
pub fn length_bucket_report(
    tagger: &(dyn Tagger + Sync),
    corpus: &Corpus,
) -> Result<Vec<BucketScore>> {
    if corpus.is_empty() {
        return Err(Error::Validation("length buckets need a non-empty corpus".into()));
    }
    let mut out = Vec::new();
    for (label, lo, hi) in BUCKETS {
        let members: Vec<&Sentence> = corpus
            .sentences()
            .iter()
            .filter(|s| s.len() >= lo && s.len() <= hi)
            .collect();
        if members.is_empty() {
            continue;
        }
        let pred: Vec<Vec<EntityLabel>> =
            members.par_iter().map(|s| tagger.predict(s)).collect();
        let gold: Vec<Vec<EntityLabel>> = members.iter().map(|s| s.labels.clone()).collect();
        let report = micro_f1(&pred, &gold)?;
        out.push(BucketScore {
            label: label.to_string(),
            f1: report.micro_f1,
            precision: report.precision,
            recall: report.recall,
            support: members.len() as u64,
        });
    }
    Ok(out)
}

/// Anything that turns a sentence into a fixed-length representation.
pub trait SentenceEmbedder {
    fn embed(&self, sentence: &Sentence) -> Vec<f64>;
}

/// Mean-pooled final-layer vectors, optionally over the prompted rendering
/// of the sentence instead of the bare tokens.
pub struct ModelEmbedder<'a> {
    pub model: &'a EncoderModel,
    pub trfs: Option<&'a TrfSet>,
    pub k: usize,
}

impl SentenceEmbedder for ModelEmbedder<'_> {
    fn embed(&self, sentence: &Sentence) -> Vec<f64> {
        let tokens = match self.trfs {
            Some(trfs) => {
                let selected = select_relevant_trfs(self.model, sentence, trfs, self.k)
                    .unwrap_or_else(|_| crate::prompting::SelectedTrfs::empty());
                build_entity_prompt(sentence, &selected, &trfs.type_order).tokens
            }
            None => sentence.tokens.clone(),
        };
        let out = self.model.encode(&tokens);
        let (rows, cols) = (out.hidden.rows, out.hidden.cols);
        let mut pooled = vec![0.0; cols];
        for r in 0..rows {
            for (p, &v) in pooled.iter_mut().zip(out.hidden.row(r)) {
                *p += v;
            }
        }
        for p in &mut pooled {
            *p /= rows as f64;
        }
        pooled
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

pub const SIMILARITY_PAIR_CAP: usize = 10_000;

/// Mean cosine similarity between cross-domain sentence pairs. All pairs are
/// used when there are at most [`SIMILARITY_PAIR_CAP`]; otherwise that many
/// pairs are sampled with a seeded generator.
pub fn similarity_report(
    embedder: &(dyn SentenceEmbedder + Sync),
    domain_a: &Corpus,
    domain_b: &Corpus,
    seed: u64,
) -> Result<f64> {
    if domain_a.is_empty() || domain_b.is_empty() {
        return Err(Error::Validation("similarity needs non-empty corpora".into()));
    }
    let embed_all = |c: &Corpus| -> Vec<Vec<f64>> {
        c.sentences().par_iter().map(|s| embedder.embed(s)).collect()
    };
    let va = embed_all(domain_a);
    let vb = embed_all(domain_b);

    let total_pairs = va.len().saturating_mul(vb.len());
    let mut sum = 0.0;
    let count;
    if total_pairs <= SIMILARITY_PAIR_CAP {
        for a in &va {
            for b in &vb {
                sum += cosine(a, b);
            }
        }
        count = total_pairs;
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..SIMILARITY_PAIR_CAP {
            let a = &va[rng.random_range(0..va.len())];
            let b = &vb[rng.random_range(0..vb.len())];
            sum += cosine(a, b);
        }
        count = SIMILARITY_PAIR_CAP;
    }
    Ok(sum / count as f64)
}
