//! Joint training of the tagger and the feature-selection head.
//!
//! Each step runs two forward passes per sentence: one on the selection
//! prompt (feature selection + selection loss) and one on the rendered
//! entity prompt (NER loss), then optimizes the convex combination
//! `alpha * L_ner + (1 - alpha) * L_gen` with AdamW under a linear
//! warmup/decay schedule. Feature selection always uses the current
//! parameters, so prompts evolve with the model during training.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::eval::{evaluate, ModelTagger, TaggingMode};
use crate::graph::{Graph, Mat};
use crate::neural::{EncoderModel, GradSet, ModelConfig};
use crate::prompting::{build_entity_prompt, build_selection_prompt, phi_labels, select_from_hidden};
use crate::trf::TrfSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Weight on the NER loss; the selection loss gets `1 - alpha`.
    pub alpha: f64,
    pub rho: f64,
    pub l: usize,
    pub k: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_ratio: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub seed: u64,
    pub mode: TaggingMode,
    /// Disabled prompts reduce training to the plain tagger; requires
    /// `alpha = 1` since no selection loss exists.
    pub prompts: bool,
    /// Frequency-adaptive word dropout: a token with training-corpus count c
    /// is replaced by [UNK] with probability `word_dropout / (word_dropout + c)`,
    /// so rare tokens are dropped most. 0 disables. Applied identically in
    /// the joint and baseline loops.
    pub word_dropout: f64,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 0.75,
            rho: 3.0,
            l: 120,
            k: 5,
            epochs: 10,
            batch_size: 4,
            learning_rate: 2e-3,
            warmup_ratio: 0.1,
            weight_decay: 0.01,
            clip_norm: 1.0,
            seed: 42,
            mode: TaggingMode::FineTune,
            prompts: true,
            word_dropout: 0.0,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.prompts {
            if !(self.alpha > 0.0 && self.alpha < 1.0) {
                return Err(Error::Validation(format!(
                    "alpha must lie in (0,1), got {}",
                    self.alpha
                )));
            }
        } else if self.alpha != 1.0 {
            return Err(Error::Validation(
                "alpha must be 1 when prompts are disabled".to_string(),
            ));
        }
        if self.epochs == 0 {
            return Err(Error::Validation("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Validation("batch_size must be >= 1".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::Validation("learning_rate must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.warmup_ratio) {
            return Err(Error::Validation("warmup_ratio must lie in [0,1]".into()));
        }
        if self.k == 0 || self.l == 0 {
            return Err(Error::Validation("k and l must be >= 1".into()));
        }
        if self.rho < 1.0 {
            return Err(Error::Validation("rho must be >= 1".into()));
        }
        if self.word_dropout < 0.0 {
            return Err(Error::Validation("word_dropout must be non-negative".into()));
        }
        self.model.validate()
    }
}

/// Convex combination of the normalized NER loss and the selection loss.
pub fn total_loss(l_ner: f64, l_gen: f64, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Validation(format!("alpha must lie in (0,1), got {alpha}")));
    }
    if l_ner < 0.0 || l_gen < 0.0 {
        return Err(Error::Validation("losses must be non-negative".into()));
    }
    Ok(alpha * l_ner + (1.0 - alpha) * l_gen)
}

/// Decoupled-weight-decay adaptive-moment optimizer.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: u64,
    m: BTreeMap<String, Mat>,
    v: BTreeMap<String, Mat>,
}

impl AdamW {
    pub fn new(weight_decay: f64) -> Self {
        AdamW { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay, t: 0, m: BTreeMap::new(), v: BTreeMap::new() }
    }

    pub fn step(&mut self, params: &mut BTreeMap<String, Mat>, grads: &GradSet, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (name, grad) in &grads.0 {
            let p = params.get_mut(name).expect("gradient for unknown parameter");
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Mat::zeros(p.rows, p.cols));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Mat::zeros(p.rows, p.cols));
            for i in 0..p.data.len() {
                let g = grad.data[i];
                m.data[i] = self.beta1 * m.data[i] + (1.0 - self.beta1) * g;
                v.data[i] = self.beta2 * v.data[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m.data[i] / bc1;
                let v_hat = v.data[i] / bc2;
                p.data[i] -= lr * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * p.data[i]);
            }
        }
    }
}

/// Linear warmup to `base` over `warmup` steps, then linear decay to 0 at
/// `total`. `step` is 1-based.
pub fn lr_schedule(base: f64, step: u64, total: u64, warmup: u64) -> f64 {
    debug_assert!(step >= 1 && step <= total);
    if step <= warmup {
        base * step as f64 / warmup as f64
    } else if total == warmup {
        base
    } else {
        base * (total - step) as f64 / (total - warmup) as f64
    }
}

/// Deterministic epoch shuffle shared by the joint and baseline loops.
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9e37_79b9_7f4a_7c15_u64.wrapping_mul(epoch as u64 + 1)));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Training-corpus token counts for frequency-adaptive word dropout.
fn token_counts(corpus: &Corpus) -> std::collections::HashMap<String, u64> {
    let mut counts = std::collections::HashMap::new();
    for s in corpus.sentences() {
        for t in &s.tokens {
            *counts.entry(t.clone()).or_insert(0) += 1;
        }
    }
    counts
}

/// Sentence token ids with word dropout, derived from (seed, epoch, index)
/// so the joint and baseline loops replace exactly the same positions.
fn dropped_sentence_ids(
    model: &EncoderModel,
    tokens: &[String],
    counts: &std::collections::HashMap<String, u64>,
    cfg: &TrainConfig,
    epoch: usize,
    idx: usize,
) -> Vec<u32> {
    let mut ids = model.vocab.encode(tokens);
    if cfg.word_dropout > 0.0 {
        let stream = cfg
            .seed
            .wrapping_mul(0xbf58_476d_1ce4_e5b9)
            .wrapping_add((epoch as u64) << 24)
            .wrapping_add(idx as u64)
            .wrapping_add(0x5d41_402a);
        let mut rng = ChaCha8Rng::seed_from_u64(stream);
        for (id, tok) in ids.iter_mut().zip(tokens) {
            let c = counts.get(tok).copied().unwrap_or(0) as f64;
            if rng.random_bool(cfg.word_dropout / (cfg.word_dropout + c)) {
                *id = crate::neural::UNK;
            }
        }
    }
    ids
}

/// Ids for a prompted token sequence whose sentence prefix has already been
/// dropout-processed; truncates to the model's max length.
fn prompt_ids(model: &EncoderModel, prompt_tokens: &[String], sentence_ids: &[u32]) -> Vec<u32> {
    let (mut ids, _) = model.prepare_ids(prompt_tokens);
    let n = sentence_ids.len().min(ids.len());
    ids[..n].copy_from_slice(&sentence_ids[..n]);
    ids
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossTriple {
    pub ner: f64,
    pub gen: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_ner: f64,
    pub mean_gen: f64,
    pub mean_total: f64,
    pub dev_micro_f1: f64,
}

/// Training outcome: best-dev checkpoint plus the full optimization trace.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub model: EncoderModel,
    pub optimizer: AdamW,
    pub best_dev_f1: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub step_trace: Vec<LossTriple>,
    pub epoch_trace: Vec<EpochStats>,
}

/// Joint optimization over prompted inputs. Features in `trfs` must have
/// been mined from `train`.
pub fn train(
    train: &Corpus,
    dev: &Corpus,
    trfs: &TrfSet,
    cfg: &TrainConfig,
) -> Result<TrainState> {
    cfg.validate()?;
    if train.is_empty() || dev.is_empty() {
        return Err(Error::Validation("train and dev corpora must be non-empty".into()));
    }
    if cfg.prompts && trfs.is_empty() {
        return Err(Error::Validation("feature set is empty; nothing to prompt with".into()));
    }
    let trf_arg = if cfg.prompts { Some(trfs) } else { None };
    let counts = token_counts(train);
    let mut model = EncoderModel::from_corpus(cfg.model.clone(), train, trf_arg, cfg.seed)?;
    let candidates = trfs.all_tokens_sorted();

    let mut opt = AdamW::new(cfg.weight_decay);
    let n = train.len();
    let steps_per_epoch = n.div_ceil(cfg.batch_size) as u64;
    let total_steps = steps_per_epoch * cfg.epochs as u64;
    let warmup_steps = ((total_steps as f64 * cfg.warmup_ratio).floor() as u64).max(1);

    let mut state = TrainState {
        model: model.clone(),
        optimizer: opt.clone(),
        best_dev_f1: f64::NEG_INFINITY,
        best_epoch: 0,
        epochs_run: 0,
        step_trace: Vec::new(),
        epoch_trace: Vec::new(),
    };
    let mut step: u64 = 0;

    for epoch in 0..cfg.epochs {
        let order = epoch_order(cfg.seed, epoch, n);
        let mut epoch_losses: Vec<LossTriple> = Vec::new();
        for batch in order.chunks(cfg.batch_size) {
            step += 1;
            let mut g = Graph::new();
            let bound = model.bind(&mut g);
            let mut ner_terms: Vec<(usize, usize)> = Vec::new(); // (node, scored tokens)
            let mut gen_terms: Vec<usize> = Vec::new();

            for &idx in batch {
                let x = &train.sentences()[idx];
                let sent_ids = dropped_sentence_ids(&model, &x.tokens, &counts, cfg, epoch, idx);
                if cfg.prompts {
                    // selection pass on f(x); word dropout stays out of this
                    // pass so mask supervision never has to explain removed
                    // tokens
                    let sp = build_selection_prompt(x, cfg.k)?;
                    let (sel_ids, _) = model.prepare_ids(&sp.tokens);
                    let masks: Vec<usize> = sp
                        .mask_positions
                        .iter()
                        .copied()
                        .filter(|&p| p < sel_ids.len())
                        .collect();
                    let fwd_sel = model.forward_ids(&mut g, &bound, &sel_ids);
                    if !masks.is_empty() {
                        let phi = phi_labels(&model, x, trfs, masks.len())?;
                        let l_gen = model.gen_loss(
                            &mut g,
                            &bound,
                            &fwd_sel,
                            &masks,
                            &candidates,
                            &phi.labels,
                        )?;
                        gen_terms.push(l_gen);
                    }
                    let hidden = g.value(fwd_sel.hidden).clone();
                    let selected = select_from_hidden(&model, &hidden, &masks, trfs)?;

                    // tagging pass on f'(x)
                    let ep = build_entity_prompt(x, &selected, &trfs.type_order);
                    let ner_ids = prompt_ids(&model, &ep.tokens, &sent_ids);
                    let fwd_ner = model.forward_ids(&mut g, &bound, &ner_ids);
                    let scored = x.len().min(ner_ids.len());
                    let l_ner = match cfg.mode {
                        TaggingMode::FineTune => {
                            model.tag_loss(&mut g, &fwd_ner, &x.labels[..scored])?
                        }
                        TaggingMode::PromptTune => {
                            let targets = model.entlm_targets(x)?;
                            model.entlm_loss(&mut g, &bound, &fwd_ner, &targets[..scored])?
                        }
                    };
                    ner_terms.push((l_ner, scored));
                } else {
                    let ids = prompt_ids(&model, &x.tokens, &sent_ids);
                    let fwd = model.forward_ids(&mut g, &bound, &ids);
                    let scored = x.len().min(ids.len());
                    let l_ner = match cfg.mode {
                        TaggingMode::FineTune => {
                            model.tag_loss(&mut g, &fwd, &x.labels[..scored])?
                        }
                        TaggingMode::PromptTune => {
                            let targets = model.entlm_targets(x)?;
                            model.entlm_loss(&mut g, &bound, &fwd, &targets[..scored])?
                        }
                    };
                    ner_terms.push((l_ner, scored));
                }
            }

            // normalized NER loss: mean over every scored token in the batch
            let token_total: usize = ner_terms.iter().map(|&(_, n)| n).sum();
            let ner_weighted: Vec<(usize, f64)> = ner_terms
                .iter()
                .map(|&(node, n)| (node, n as f64 / token_total as f64))
                .collect();
            let l_ner_node = g.weighted_sum(&ner_weighted);

            let (loss_node, gen_value) = if cfg.prompts && !gen_terms.is_empty() {
                let w = 1.0 / gen_terms.len() as f64;
                let gen_weighted: Vec<(usize, f64)> =
                    gen_terms.iter().map(|&t| (t, w)).collect();
                let l_gen_node = g.weighted_sum(&gen_weighted);
                let combined =
                    g.weighted_sum(&[(l_ner_node, cfg.alpha), (l_gen_node, 1.0 - cfg.alpha)]);
                (combined, g.value(l_gen_node).item())
            } else {
                (l_ner_node, 0.0)
            };

            let triple = LossTriple {
                ner: g.value(l_ner_node).item(),
                gen: gen_value,
                total: g.value(loss_node).item(),
            };
            if !(triple.ner.is_finite() && triple.gen.is_finite() && triple.total.is_finite()) {
                state.step_trace.extend(epoch_losses);
                return Err(Error::NonFiniteLoss { step: step as usize });
            }

            let raw = g.backward(loss_node);
            let mut grads = model.gradients(&raw, &bound);
            let norm = grads.global_norm();
            if !norm.is_finite() {
                state.step_trace.extend(epoch_losses);
                return Err(Error::NonFiniteLoss { step: step as usize });
            }
            if norm > cfg.clip_norm {
                grads.scale(cfg.clip_norm / norm);
            }
            let lr = lr_schedule(cfg.learning_rate, step, total_steps, warmup_steps);
            opt.step(model.params_mut(), &grads, lr);
            epoch_losses.push(triple);
        }

        let tagger = ModelTagger { model: &model, trfs: trf_arg, k: cfg.k, mode: cfg.mode };
        let dev_f1 = evaluate(&tagger, dev)?.micro_f1;
        let m = epoch_losses.len() as f64;
        state.epoch_trace.push(EpochStats {
            epoch,
            mean_ner: epoch_losses.iter().map(|t| t.ner).sum::<f64>() / m,
            mean_gen: epoch_losses.iter().map(|t| t.gen).sum::<f64>() / m,
            mean_total: epoch_losses.iter().map(|t| t.total).sum::<f64>() / m,
            dev_micro_f1: dev_f1,
        });
        state.step_trace.extend(epoch_losses);
        state.epochs_run = epoch + 1;
        if dev_f1 > state.best_dev_f1 {
            state.best_dev_f1 = dev_f1;
            state.best_epoch = epoch;
            state.model = model.clone();
        }
    }
    state.optimizer = opt;
    Ok(state)
}

/// Standard fine-tuning on bare sentences: the identical loop without
/// prompts and without the selection loss.
pub fn train_baseline(train: &Corpus, dev: &Corpus, cfg: &TrainConfig) -> Result<TrainState> {
    let mut cfg = cfg.clone();
    cfg.prompts = false;
    cfg.alpha = 1.0;
    cfg.validate()?;
    if train.is_empty() || dev.is_empty() {
        return Err(Error::Validation("train and dev corpora must be non-empty".into()));
    }
    let mut model = EncoderModel::from_corpus(cfg.model.clone(), train, None, cfg.seed)?;
    let counts = token_counts(train);
    let mut opt = AdamW::new(cfg.weight_decay);
    let n = train.len();
    let steps_per_epoch = n.div_ceil(cfg.batch_size) as u64;
    let total_steps = steps_per_epoch * cfg.epochs as u64;
    let warmup_steps = ((total_steps as f64 * cfg.warmup_ratio).floor() as u64).max(1);

    let mut state = TrainState {
        model: model.clone(),
        optimizer: opt.clone(),
        best_dev_f1: f64::NEG_INFINITY,
        best_epoch: 0,
        epochs_run: 0,
        step_trace: Vec::new(),
        epoch_trace: Vec::new(),
    };
    let mut step: u64 = 0;

    for epoch in 0..cfg.epochs {
        let order = epoch_order(cfg.seed, epoch, n);
        let mut epoch_losses: Vec<LossTriple> = Vec::new();
        for batch in order.chunks(cfg.batch_size) {
            step += 1;
            let mut g = Graph::new();
            let bound = model.bind(&mut g);
            let mut ner_terms: Vec<(usize, usize)> = Vec::new();
            for &idx in batch {
                let x = &train.sentences()[idx];
                let sent_ids = dropped_sentence_ids(&model, &x.tokens, &counts, &cfg, epoch, idx);
                let ids = prompt_ids(&model, &x.tokens, &sent_ids);
                let fwd = model.forward_ids(&mut g, &bound, &ids);
                let scored = x.len().min(ids.len());
                let l_ner = match cfg.mode {
                    TaggingMode::FineTune => model.tag_loss(&mut g, &fwd, &x.labels[..scored])?,
                    TaggingMode::PromptTune => {
                        let targets = model.entlm_targets(x)?;
                        model.entlm_loss(&mut g, &bound, &fwd, &targets[..scored])?
                    }
                };
                ner_terms.push((l_ner, scored));
            }
            let token_total: usize = ner_terms.iter().map(|&(_, n)| n).sum();
            let ner_weighted: Vec<(usize, f64)> = ner_terms
                .iter()
                .map(|&(node, n)| (node, n as f64 / token_total as f64))
                .collect();
            let loss_node = g.weighted_sum(&ner_weighted);

            let triple = LossTriple {
                ner: g.value(loss_node).item(),
                gen: 0.0,
                total: g.value(loss_node).item(),
            };
            if !triple.total.is_finite() {
                state.step_trace.extend(epoch_losses);
                return Err(Error::NonFiniteLoss { step: step as usize });
            }
            let raw = g.backward(loss_node);
            let mut grads = model.gradients(&raw, &bound);
            let norm = grads.global_norm();
            if !norm.is_finite() {
                state.step_trace.extend(epoch_losses);
                return Err(Error::NonFiniteLoss { step: step as usize });
            }
            if norm > cfg.clip_norm {
                grads.scale(cfg.clip_norm / norm);
            }
            let lr = lr_schedule(cfg.learning_rate, step, total_steps, warmup_steps);
            opt.step(model.params_mut(), &grads, lr);
            epoch_losses.push(triple);
        }

        let tagger = ModelTagger { model: &model, trfs: None, k: cfg.k, mode: cfg.mode };
        let dev_f1 = evaluate(&tagger, dev)?.micro_f1;
        let m = epoch_losses.len() as f64;
        state.epoch_trace.push(EpochStats {
            epoch,
            mean_ner: epoch_losses.iter().map(|t| t.ner).sum::<f64>() / m,
            mean_gen: 0.0,
            mean_total: epoch_losses.iter().map(|t| t.total).sum::<f64>() / m,
            dev_micro_f1: dev_f1,
        });
        state.step_trace.extend(epoch_losses);
        state.epochs_run = epoch + 1;
        if dev_f1 > state.best_dev_f1 {
            state.best_dev_f1 = dev_f1;
            state.best_epoch = epoch;
            state.model = model.clone();
        }
    }
    state.optimizer = opt;
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Sentence, Split};
    use crate::trf::extract_trfs;

    fn sent(tokens: &[&str], labels: &[&str]) -> Sentence {
        Sentence::new(
            tokens.iter().map(|t| t.to_string()).collect(),
            labels.iter().map(|l| l.parse().unwrap()).collect(),
            "test",
        )
    }

    fn tiny_sets() -> (Corpus, Corpus, TrfSet) {
        let train = Corpus::new(
            vec![
                sent(&["Ann", "visited", "Paris", "today"], &["S-PER", "O", "S-LOC", "O"]),
                sent(&["Bob", "visited", "Rome"], &["S-PER", "O", "S-LOC"]),
                sent(&["Acme", "opened", "offices"], &["S-ORG", "O", "O"]),
                sent(&["Globex", "opened", "shops"], &["S-ORG", "O", "O"]),
                sent(&["it", "rained", "again"], &["O", "O", "O"]),
                sent(&["Cara", "visited", "Oslo"], &["S-PER", "O", "S-LOC"]),
            ],
            Split::Train,
        )
        .unwrap();
        let dev = Corpus::new(
            vec![
                sent(&["Dina", "visited", "Lima"], &["S-PER", "O", "S-LOC"]),
                sent(&["Initech", "opened", "labs"], &["S-ORG", "O", "O"]),
            ],
            Split::Dev,
        )
        .unwrap();
        let trfs = extract_trfs(&train, 3.0, 20).unwrap();
        (train, dev, trfs)
    }

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 2,
            batch_size: 2,
            k: 2,
            learning_rate: 1e-3,
            model: ModelConfig { dim: 8, depth: 1, heads: 2, max_len: 32 },
            seed: 13,
            ..Default::default()
        }
    }

    #[test]
    fn total_loss_arithmetic() {
        assert_eq!(total_loss(2.0, 4.0, 0.5).unwrap(), 3.0);
        assert!((total_loss(1.0, 100.0, 0.9).unwrap() - 10.9).abs() < 1e-12);
        assert!(total_loss(1.0, 1.0, 0.0).is_err());
        assert!(total_loss(1.0, 1.0, 1.0).is_err());
        assert!(total_loss(-1.0, 1.0, 0.5).is_err());
    }

    #[test]
    fn schedule_is_piecewise_linear() {
        let base = 0.1;
        let (total, warmup) = (10u64, 4u64);
        assert!((lr_schedule(base, 1, total, warmup) - base / 4.0).abs() < 1e-15);
        assert!((lr_schedule(base, 4, total, warmup) - base).abs() < 1e-15);
        // linear decay after warmup, hitting 0 at the final step
        assert!((lr_schedule(base, 7, total, warmup) - base * 0.5).abs() < 1e-15);
        assert_eq!(lr_schedule(base, 10, total, warmup), 0.0);
        // warmup increments are equal
        let d1 = lr_schedule(base, 2, total, warmup) - lr_schedule(base, 1, total, warmup);
        let d2 = lr_schedule(base, 3, total, warmup) - lr_schedule(base, 2, total, warmup);
        assert!((d1 - d2).abs() < 1e-15);
    }

    #[test]
    fn zero_epochs_rejected() {
        let (train_c, dev, trfs) = tiny_sets();
        let cfg = TrainConfig { epochs: 0, ..tiny_cfg() };
        assert!(train(&train_c, &dev, &trfs, &cfg).is_err());
    }

    #[test]
    fn alpha_validation_depends_on_prompts() {
        let ok = TrainConfig { alpha: 0.5, prompts: true, ..tiny_cfg() };
        assert!(ok.validate().is_ok());
        let bad = TrainConfig { alpha: 1.0, prompts: true, ..tiny_cfg() };
        assert!(bad.validate().is_err());
        let baseline = TrainConfig { alpha: 1.0, prompts: false, ..tiny_cfg() };
        assert!(baseline.validate().is_ok());
        let bad2 = TrainConfig { alpha: 0.5, prompts: false, ..tiny_cfg() };
        assert!(bad2.validate().is_err());
    }

    #[test]
    fn fixed_seed_reproduces_trace_bitwise() {
        let (train_c, dev, trfs) = tiny_sets();
        let cfg = tiny_cfg();
        let a = train(&train_c, &dev, &trfs, &cfg).unwrap();
        let b = train(&train_c, &dev, &trfs, &cfg).unwrap();
        assert_eq!(a.step_trace, b.step_trace);
        assert_eq!(a.epoch_trace, b.epoch_trace);
        assert_eq!(a.model.params(), b.model.params());
        // traces are finite everywhere
        assert!(a.step_trace.iter().all(|t| t.total.is_finite()));
    }

    #[test]
    fn trace_totals_match_alpha_mixture() {
        let (train_c, dev, trfs) = tiny_sets();
        let cfg = tiny_cfg();
        let state = train(&train_c, &dev, &trfs, &cfg).unwrap();
        for t in &state.step_trace {
            let expected = total_loss(t.ner, t.gen, cfg.alpha).unwrap();
            assert!((t.total - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn reduction_alpha_one_no_prompts_equals_baseline() {
        let (train_c, dev, _) = tiny_sets();
        let mut cfg = tiny_cfg();
        cfg.prompts = false;
        cfg.alpha = 1.0;
        // the joint loop with prompts disabled must reproduce the dedicated
        // baseline loop bit for bit
        let trfs = extract_trfs(&train_c, 3.0, 20).unwrap();
        let joint = train(&train_c, &dev, &trfs, &cfg).unwrap();
        let base = train_baseline(&train_c, &dev, &cfg).unwrap();
        assert_eq!(joint.step_trace, base.step_trace);
        assert_eq!(joint.epoch_trace, base.epoch_trace);
        assert_eq!(joint.model.params(), base.model.params());
    }

    #[test]
    fn early_stopping_keeps_max_dev_f1() {
        let (train_c, dev, trfs) = tiny_sets();
        let cfg = TrainConfig { epochs: 3, ..tiny_cfg() };
        let state = train(&train_c, &dev, &trfs, &cfg).unwrap();
        let max_dev = state
            .epoch_trace
            .iter()
            .map(|e| e.dev_micro_f1)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(state.best_dev_f1, max_dev);
        assert_eq!(state.epoch_trace[state.best_epoch].dev_micro_f1, max_dev);
    }

    #[test]
    fn runaway_learning_rate_aborts_with_diagnostic() {
        let (train_c, dev, trfs) = tiny_sets();
        let cfg = TrainConfig { learning_rate: 1e30, epochs: 3, ..tiny_cfg() };
        match train(&train_c, &dev, &trfs, &cfg) {
            Err(Error::NonFiniteLoss { step }) => assert!(step >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn baseline_fits_separable_toy_data() {
        // every PER sentence starts with "mr", every LOC sentence with "in"
        let mk = |n: usize| -> Vec<Sentence> {
            (0..n)
                .flat_map(|i| {
                    vec![
                        sent(&["mr", &format!("p{i}"), "spoke"], &["O", "S-PER", "O"]),
                        sent(&["in", &format!("c{i}"), "today"], &["O", "S-LOC", "O"]),
                    ]
                })
                .collect()
        };
        let train_c = Corpus::new(mk(8), Split::Train).unwrap();
        let dev = Corpus::new(mk(8), Split::Dev).unwrap(); // same pattern, same surfaces
        let cfg = TrainConfig {
            epochs: 12,
            batch_size: 4,
            learning_rate: 3e-3,
            model: ModelConfig { dim: 16, depth: 1, heads: 2, max_len: 16 },
            seed: 5,
            prompts: false,
            alpha: 1.0,
            ..Default::default()
        };
        let state = train_baseline(&train_c, &dev, &cfg).unwrap();
        assert!(
            state.best_dev_f1 >= 0.99,
            "expected a perfect fit on separable data, got {}",
            state.best_dev_f1
        );
    }
}
