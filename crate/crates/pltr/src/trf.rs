//! Type-related feature mining.
//!
//! For every (token, entity type) pair we keep occurrence counts inside and
//! outside the type's sentence set plus the 2x2 sentence-presence table, all
//! gathered in a single pass over the corpus. Features are ranked by plug-in
//! mutual information between token presence and set membership, subject to
//! the frequency-ratio filter `count_out / count_in <= rho`.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, TypeSentencePartition};
use crate::error::{Error, Result};

/// Single-pass corpus statistics: per-token totals plus per (token, type)
/// in-set counts. Tokens are lowercased for counting; the original surface
/// forms are tallied so miners can emit the most frequent spelling.
#[derive(Debug, Clone)]
pub struct TokenStats {
    n_sentences: usize,
    type_names: Vec<String>,
    sentences_with_type: Vec<u64>,
    token_ids: HashMap<String, u32>,
    tokens_lower: Vec<String>,
    surface_counts: Vec<BTreeMap<String, u64>>,
    total_occurrences: Vec<u64>,
    total_presence: Vec<u64>,
    in_occurrences: HashMap<(u32, u16), u64>,
    in_presence: HashMap<(u32, u16), u64>,
}

impl TokenStats {
    pub fn n_sentences(&self) -> usize {
        self.n_sentences
    }

    pub fn type_names(&self) -> &[String] {
        &self.type_names
    }

    fn type_index(&self, entity_type: &str) -> Option<u16> {
        self.type_names.iter().position(|t| t == entity_type).map(|i| i as u16)
    }

    fn token_id(&self, token: &str) -> Option<u32> {
        self.token_ids.get(&token.to_lowercase()).copied()
    }

    /// Occurrences of `token` within sentences containing `entity_type`.
    pub fn count_in(&self, token: &str, entity_type: &str) -> u64 {
        let (Some(tok), Some(ty)) = (self.token_id(token), self.type_index(entity_type)) else {
            return 0;
        };
        self.in_occurrences.get(&(tok, ty)).copied().unwrap_or(0)
    }

    /// Occurrences of `token` in sentences without `entity_type`.
    pub fn count_out(&self, token: &str, entity_type: &str) -> u64 {
        let Some(tok) = self.token_id(token) else { return 0 };
        self.total_occurrences[tok as usize] - self.count_in(token, entity_type)
    }

    pub fn total_occurrences(&self, token: &str) -> u64 {
        self.token_id(token).map_or(0, |t| self.total_occurrences[t as usize])
    }

    /// The 2x2 sentence-level table for (token present, sentence in S_i):
    /// `[n11, n10, n01, n00]` where the first index is presence and the
    /// second is membership.
    pub fn contingency(&self, token: &str, entity_type: &str) -> Option<[u64; 4]> {
        let ty = self.type_index(entity_type)?;
        let in_set = self.sentences_with_type[ty as usize];
        let out_set = self.n_sentences as u64 - in_set;
        let (present_in, present_out) = match self.token_id(token) {
            Some(tok) => {
                let n11 = self.in_presence.get(&(tok, ty)).copied().unwrap_or(0);
                (n11, self.total_presence[tok as usize] - n11)
            }
            None => (0, 0),
        };
        Some([present_in, present_out, in_set - present_in, out_set - present_out])
    }

    fn mi_by_id(&self, tok: u32, ty: u16) -> f64 {
        let in_set = self.sentences_with_type[ty as usize];
        let n11 = self.in_presence.get(&(tok, ty)).copied().unwrap_or(0);
        let n10 = self.total_presence[tok as usize] - n11;
        let n01 = in_set - n11;
        let n00 = self.n_sentences as u64 - in_set - n10;
        plug_in_mi([n11, n10, n01, n00])
    }

    /// Most frequent surface spelling of a lowercased token id; ties go to
    /// the lexicographically smallest form.
    fn preferred_surface(&self, tok: u32) -> &str {
        self.surface_counts[tok as usize]
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)))
            .map(|(s, _)| s.as_str())
            .expect("interned token has at least one surface form")
    }
}

/// MI ranking key: scores within 1e-12 compare equal.
pub fn quantize_mi(mi: f64) -> i64 {
    (mi * 1e12).round() as i64
}

/// Plug-in mutual information (nats) of a 2x2 table `[n11, n10, n01, n00]`.
/// Degenerate marginals yield 0 by convention.
pub fn plug_in_mi(cells: [u64; 4]) -> f64 {
    let [n11, n10, n01, n00] = cells.map(|c| c as f64);
    let n = n11 + n10 + n01 + n00;
    if n <= 0.0 {
        return 0.0;
    }
    let row1 = n11 + n10;
    let row0 = n01 + n00;
    let col1 = n11 + n01;
    let col0 = n10 + n00;
    if row1 == 0.0 || row0 == 0.0 || col1 == 0.0 || col0 == 0.0 {
        return 0.0;
    }
    let term = |nij: f64, row: f64, col: f64| {
        if nij > 0.0 {
            (nij / n) * ((nij * n) / (row * col)).ln()
        } else {
            0.0
        }
    };
    let mi = term(n11, row1, col1) + term(n10, row1, col0) + term(n01, row0, col1)
        + term(n00, row0, col0);
    mi.max(0.0)
}

/// Gather [`TokenStats`] in one traversal of the corpus. Membership comes
/// from `partitions`, which must have been built from the same corpus.
/// `ngram_len` is kept in the interface for longer features; only 1 is
/// currently supported.
pub fn accumulate_stats(
    corpus: &Corpus,
    partitions: &[TypeSentencePartition],
    ngram_len: usize,
) -> Result<TokenStats> {
    if ngram_len != 1 {
        return Err(Error::Unsupported(format!(
            "ngram_len {ngram_len}: only unigram features are supported"
        )));
    }
    for part in partitions {
        if part.members.len() + part.complement.len() != corpus.len() {
            return Err(Error::Validation(format!(
                "partition for {} does not cover the corpus",
                part.entity_type
            )));
        }
    }

    let type_names: Vec<String> = partitions.iter().map(|p| p.entity_type.clone()).collect();
    // types present in each sentence, derived once from the partitions
    let mut sentence_types: Vec<Vec<u16>> = vec![Vec::new(); corpus.len()];
    for (ty, part) in partitions.iter().enumerate() {
        for &idx in &part.members {
            sentence_types[idx].push(ty as u16);
        }
    }

    let mut stats = TokenStats {
        n_sentences: corpus.len(),
        sentences_with_type: partitions.iter().map(|p| p.members.len() as u64).collect(),
        type_names,
        token_ids: HashMap::new(),
        tokens_lower: Vec::new(),
        surface_counts: Vec::new(),
        total_occurrences: Vec::new(),
        total_presence: Vec::new(),
        in_occurrences: HashMap::new(),
        in_presence: HashMap::new(),
    };

    let mut seen_in_sentence: Vec<u32> = Vec::new();
    for (idx, sentence) in corpus.sentences().iter().enumerate() {
        let present = &sentence_types[idx];
        seen_in_sentence.clear();
        for token in &sentence.tokens {
            let lower = token.to_lowercase();
            let tok = match stats.token_ids.get(&lower) {
                Some(&id) => id,
                None => {
                    let id = stats.tokens_lower.len() as u32;
                    stats.token_ids.insert(lower.clone(), id);
                    stats.tokens_lower.push(lower);
                    stats.surface_counts.push(BTreeMap::new());
                    stats.total_occurrences.push(0);
                    stats.total_presence.push(0);
                    id
                }
            };
            *stats.surface_counts[tok as usize].entry(token.clone()).or_insert(0) += 1;
            stats.total_occurrences[tok as usize] += 1;
            for &ty in present {
                *stats.in_occurrences.entry((tok, ty)).or_insert(0) += 1;
            }
            if !seen_in_sentence.contains(&tok) {
                seen_in_sentence.push(tok);
                stats.total_presence[tok as usize] += 1;
                for &ty in present {
                    *stats.in_presence.entry((tok, ty)).or_insert(0) += 1;
                }
            }
        }
    }
    Ok(stats)
}

/// Mutual information between token presence and membership in the type's
/// sentence set. Requires at least two sentences of statistics.
pub fn mutual_information(stats: &TokenStats, token: &str, entity_type: &str) -> Result<f64> {
    if stats.n_sentences < 2 {
        return Err(Error::Validation(
            "mutual information needs at least 2 sentences".to_string(),
        ));
    }
    let Some(ty) = stats.type_index(entity_type) else {
        return Err(Error::Validation(format!("unknown entity type {entity_type:?}")));
    };
    Ok(match stats.token_id(token) {
        Some(tok) => stats.mi_by_id(tok, ty),
        None => 0.0,
    })
}

/// One mined feature: token in its preferred surface form plus the
/// statistics that justified it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrfEntry {
    pub token: String,
    pub mi: f64,
    pub ratio: f64,
    pub count_in: u64,
    pub count_out: u64,
}

/// Ranked type-related features per entity type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrfSet {
    pub rho: f64,
    pub l: usize,
    /// Entity types in corpus inventory order; fixes prompt segment order.
    pub type_order: Vec<String>,
    pub types: BTreeMap<String, Vec<TrfEntry>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl TrfSet {
    pub fn entries_for(&self, entity_type: &str) -> &[TrfEntry] {
        self.types.get(entity_type).map_or(&[], Vec::as_slice)
    }

    /// All distinct feature tokens, lexicographically sorted; this is the
    /// canonical iteration order for fill distributions.
    pub fn all_tokens_sorted(&self) -> Vec<String> {
        let mut tokens: Vec<String> =
            self.types.values().flatten().map(|e| e.token.clone()).collect();
        tokens.sort();
        tokens.dedup();
        tokens
    }

    /// The type a token is attributed to when rendering prompts: the type
    /// under which it was mined with the highest MI (then higher count_in,
    /// then earlier inventory position).
    pub fn owning_type(&self, token: &str) -> Option<&str> {
        let mut best: Option<(&str, f64, u64, usize)> = None;
        for (pos, ty) in self.type_order.iter().enumerate() {
            for entry in self.entries_for(ty) {
                if entry.token != token {
                    continue;
                }
                let candidate = (ty.as_str(), entry.mi, entry.count_in, pos);
                let better = match &best {
                    None => true,
                    Some((_, mi, cin, p)) => {
                        (entry.mi, entry.count_in, std::cmp::Reverse(pos))
                            > (*mi, *cin, std::cmp::Reverse(*p))
                    }
                };
                if better {
                    best = Some(candidate);
                }
            }
        }
        best.map(|(ty, _, _, _)| ty)
    }

    pub fn is_empty(&self) -> bool {
        self.types.values().all(Vec::is_empty)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Mine per-type features: candidates need `count_in > 0` and
/// `count_out / count_in <= rho`; the top `l` by MI survive, with ties broken
/// by higher `count_in` then token order.
pub fn extract_trfs(corpus: &Corpus, rho: f64, l: usize) -> Result<TrfSet> {
    let partitions = crate::corpus::build_partitions(corpus)?;
    let stats = accumulate_stats(corpus, &partitions, 1)?;
    extract_trfs_from_stats(&stats, rho, l)
}

/// Same as [`extract_trfs`] but reusing precomputed statistics.
pub fn extract_trfs_from_stats(stats: &TokenStats, rho: f64, l: usize) -> Result<TrfSet> {
    if rho < 1.0 {
        return Err(Error::Validation(format!("rho must be >= 1, got {rho}")));
    }
    if l == 0 {
        return Err(Error::Validation("l must be >= 1".to_string()));
    }

    let mut set = TrfSet {
        rho,
        l,
        type_order: stats.type_names.to_vec(),
        types: BTreeMap::new(),
        warnings: Vec::new(),
    };

    for (ty_idx, ty) in stats.type_names.iter().enumerate() {
        let ty_idx = ty_idx as u16;
        let mut candidates: Vec<TrfEntry> = Vec::new();
        for (&(tok, t), &count_in) in &stats.in_occurrences {
            if t != ty_idx || count_in == 0 {
                continue;
            }
            let count_out = stats.total_occurrences[tok as usize] - count_in;
            let ratio = count_out as f64 / count_in as f64;
            if ratio > rho {
                continue;
            }
            candidates.push(TrfEntry {
                token: stats.preferred_surface(tok).to_string(),
                mi: stats.mi_by_id(tok, ty_idx),
                ratio,
                count_in,
                count_out,
            });
        }
        // ranking quantizes MI at 1e-12 so algebraically equal scores reached
        // by different summation orders still tie, leaving the order to the
        // deterministic (count_in, token) tie-break
        candidates.sort_by(|a, b| {
            quantize_mi(b.mi)
                .cmp(&quantize_mi(a.mi))
                .then_with(|| b.count_in.cmp(&a.count_in))
                .then_with(|| a.token.cmp(&b.token))
        });
        candidates.truncate(l);
        if candidates.is_empty() {
            let msg = format!("no qualifying features for type {ty}");
            log::warn!("{msg}");
            set.warnings.push(msg);
        }
        set.types.insert(ty.clone(), candidates);
    }
    Ok(set)
}
