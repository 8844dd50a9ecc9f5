//! Labeled NER corpora: parsing, validation, partitioning, and label remapping.
//!
//! Labels are stored in BIOES form regardless of the input scheme. A label
//! sequence is a *valid BIOES walk* when I/E only continue a B/I of the same
//! type and every B/I is followed by an I/E of the same type. Every corpus
//! constructor revalidates this, so downstream statistics can assume it.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Positional part of a BIOES label (O is represented by `EntityLabel::Outside`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SpanTag {
    Begin,
    Inside,
    End,
    Single,
}

impl SpanTag {
    fn letter(self) -> char {
        match self {
            SpanTag::Begin => 'B',
            SpanTag::Inside => 'I',
            SpanTag::End => 'E',
            SpanTag::Single => 'S',
        }
    }
}

/// Token-level label: O carries no type, B/I/E/S always carry one.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum EntityLabel {
    Outside,
    Entity { tag: SpanTag, entity_type: String },
}

impl EntityLabel {
    pub fn entity(tag: SpanTag, entity_type: impl Into<String>) -> Self {
        EntityLabel::Entity { tag, entity_type: entity_type.into() }
    }

    pub fn entity_type(&self) -> Option<&str> {
        match self {
            EntityLabel::Outside => None,
            EntityLabel::Entity { entity_type, .. } => Some(entity_type),
        }
    }

    pub fn is_outside(&self) -> bool {
        matches!(self, EntityLabel::Outside)
    }
}

impl fmt::Display for EntityLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EntityLabel::Outside => write!(f, "O"),
            EntityLabel::Entity { tag, entity_type } => {
                write!(f, "{}-{}", tag.letter(), entity_type)
            }
        }
    }
}

impl FromStr for EntityLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "O" {
            return Ok(EntityLabel::Outside);
        }
        let (prefix, ty) = s
            .split_once(['-', '_'])
            .ok_or_else(|| Error::Validation(format!("malformed label string {s:?}")))?;
        if ty.is_empty() {
            return Err(Error::Validation(format!("malformed label string {s:?}")));
        }
        let tag = match prefix {
            "B" => SpanTag::Begin,
            "I" => SpanTag::Inside,
            "E" => SpanTag::End,
            "S" => SpanTag::Single,
            _ => {
                return Err(Error::Validation(format!("malformed label string {s:?}")));
            }
        };
        Ok(EntityLabel::entity(tag, ty))
    }
}

impl TryFrom<String> for EntityLabel {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<EntityLabel> for String {
    fn from(l: EntityLabel) -> String {
        l.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Dev,
    Test,
}

/// One labeled sentence. `tokens` and `labels` are index-aligned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sentence {
    pub tokens: Vec<String>,
    pub labels: Vec<EntityLabel>,
    #[serde(default)]
    pub domain_id: String,
}

impl Sentence {
    pub fn new(
        tokens: Vec<String>,
        labels: Vec<EntityLabel>,
        domain_id: impl Into<String>,
    ) -> Self {
        Sentence { tokens, labels, domain_id: domain_id.into() }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    fn validate(&self, idx: usize) -> Result<()> {
        if self.tokens.is_empty() {
            return Err(Error::Validation(format!("sentence {idx} is empty")));
        }
        if self.tokens.len() != self.labels.len() {
            return Err(Error::Validation(format!(
                "sentence {idx}: {} tokens vs {} labels",
                self.tokens.len(),
                self.labels.len()
            )));
        }
        validate_bioes(&self.labels)
            .map_err(|e| Error::Validation(format!("sentence {idx}: {e}")))
    }
}

/// An entity occurrence as a half-open token range.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EntitySpan {
    pub start: usize,
    pub end: usize,
    pub entity_type: String,
}

impl EntitySpan {
    pub fn new(start: usize, end: usize, entity_type: impl Into<String>) -> Self {
        EntitySpan { start, end, entity_type: entity_type.into() }
    }
}

/// Check that a label sequence is a valid BIOES walk.
pub fn validate_bioes(labels: &[EntityLabel]) -> Result<()> {
    for (i, label) in labels.iter().enumerate() {
        let EntityLabel::Entity { tag, entity_type } = label else {
            continue;
        };
        if matches!(tag, SpanTag::Inside | SpanTag::End) {
            let ok = i > 0
                && matches!(
                    &labels[i - 1],
                    EntityLabel::Entity { tag: SpanTag::Begin | SpanTag::Inside, entity_type: prev }
                        if prev == entity_type
                );
            if !ok {
                return Err(Error::Validation(format!(
                    "position {i}: {label} does not continue a B/I of the same type"
                )));
            }
        }
        if matches!(tag, SpanTag::Begin | SpanTag::Inside) {
            let ok = i + 1 < labels.len()
                && matches!(
                    &labels[i + 1],
                    EntityLabel::Entity { tag: SpanTag::Inside | SpanTag::End, entity_type: next }
                        if next == entity_type
                );
            if !ok {
                return Err(Error::Validation(format!(
                    "position {i}: {label} is not followed by I/E of the same type"
                )));
            }
        }
    }
    Ok(())
}

/// Extract every well-formed entity span (S, or B I* E of one type).
///
/// On a valid BIOES walk this is the exact span set; on arbitrary sequences
/// (e.g. raw model predictions) malformed fragments are skipped, which is the
/// strict decoding convention used by the evaluator.
pub fn strict_spans(labels: &[EntityLabel]) -> Vec<EntitySpan> {
    let mut spans = Vec::new();
    let mut i = 0;
    while i < labels.len() {
        match &labels[i] {
            EntityLabel::Entity { tag: SpanTag::Single, entity_type } => {
                spans.push(EntitySpan::new(i, i + 1, entity_type.clone()));
                i += 1;
            }
            EntityLabel::Entity { tag: SpanTag::Begin, entity_type } => {
                let ty = entity_type.clone();
                let start = i;
                let mut j = i + 1;
                loop {
                    match labels.get(j) {
                        Some(EntityLabel::Entity { tag: SpanTag::Inside, entity_type: t })
                            if *t == ty =>
                        {
                            j += 1;
                        }
                        Some(EntityLabel::Entity { tag: SpanTag::End, entity_type: t })
                            if *t == ty =>
                        {
                            spans.push(EntitySpan::new(start, j + 1, ty));
                            i = j + 1;
                            break;
                        }
                        _ => {
                            // malformed: B/I run without a matching E
                            i = j;
                            break;
                        }
                    }
                }
            }
            _ => i += 1,
        }
    }
    spans
}

/// Encode non-overlapping, sorted spans as a BIOES label sequence.
pub fn spans_to_bioes(len: usize, spans: &[EntitySpan]) -> Vec<EntityLabel> {
    let mut labels = vec![EntityLabel::Outside; len];
    for span in spans {
        debug_assert!(span.start < span.end && span.end <= len);
        if span.end - span.start == 1 {
            labels[span.start] = EntityLabel::entity(SpanTag::Single, span.entity_type.clone());
        } else {
            labels[span.start] = EntityLabel::entity(SpanTag::Begin, span.entity_type.clone());
            for slot in labels.iter_mut().take(span.end - 1).skip(span.start + 1) {
                *slot = EntityLabel::entity(SpanTag::Inside, span.entity_type.clone());
            }
            labels[span.end - 1] = EntityLabel::entity(SpanTag::End, span.entity_type.clone());
        }
    }
    labels
}

/// An immutable labeled corpus for one split.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    sentences: Vec<Sentence>,
    split: Split,
    /// Entity types in order of first appearance; fixes the t_1..t_|T| order
    /// used by prompt rendering.
    type_inventory: Vec<String>,
}

impl Corpus {
    pub fn new(sentences: Vec<Sentence>, split: Split) -> Result<Self> {
        for (idx, s) in sentences.iter().enumerate() {
            s.validate(idx)?;
        }
        let mut inventory = Vec::new();
        let mut seen = BTreeSet::new();
        for s in &sentences {
            for l in &s.labels {
                if let Some(ty) = l.entity_type() {
                    if seen.insert(ty.to_string()) {
                        inventory.push(ty.to_string());
                    }
                }
            }
        }
        if split == Split::Train && !sentences.is_empty() && inventory.is_empty() {
            return Err(Error::Validation(
                "train corpus contains no entity types".to_string(),
            ));
        }
        Ok(Corpus { sentences, split, type_inventory: inventory })
    }

    pub fn empty(split: Split) -> Self {
        Corpus { sentences: Vec::new(), split, type_inventory: Vec::new() }
    }

    pub fn sentences(&self) -> &[Sentence] {
        &self.sentences
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn type_inventory(&self) -> &[String] {
        &self.type_inventory
    }

    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(Sentence::len).sum()
    }

    /// Line-delimited JSON with one `{tokens, labels, domain_id}` object per sentence.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for s in &self.sentences {
            out.push_str(&serde_json::to_string(s)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str, split: Split) -> Result<Self> {
        let mut sentences = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let s: Sentence = serde_json::from_str(line).map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
            sentences.push(s);
        }
        Corpus::new(sentences, split)
    }

    /// Column format: `token label` per line, blank line between sentences.
    pub fn to_conll(&self) -> String {
        let mut out = String::new();
        for (i, s) in self.sentences.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            for (tok, label) in s.tokens.iter().zip(&s.labels) {
                out.push_str(tok);
                out.push(' ');
                out.push_str(&label.to_string());
                out.push('\n');
            }
        }
        out
    }
}

/// Input tag scheme accepted by [`parse_conll`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum TagScheme {
    Iob1,
    Iob2,
    Bioes,
}

impl FromStr for TagScheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "IOB1" => Ok(TagScheme::Iob1),
            "IOB2" => Ok(TagScheme::Iob2),
            "BIOES" | "BILOU" | "IOBES" => Ok(TagScheme::Bioes),
            _ => Err(Error::Validation(format!("unknown tag scheme {s:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParseOptions {
    /// Repair invalid walks with the conventional IOB fix (orphan I starts a
    /// span, unterminated spans are closed) instead of rejecting the input.
    pub repair: bool,
    /// Accept inputs with zero sentences.
    pub allow_empty: bool,
    pub split: Split,
    pub domain_id: String,
}

impl Default for ParseOptions {
    fn default() -> Self {
        ParseOptions {
            repair: false,
            allow_empty: false,
            split: Split::Train,
            domain_id: String::new(),
        }
    }
}

struct RawTag {
    prefix: char,
    ty: Option<String>,
}

fn parse_raw_tag(s: &str, scheme: TagScheme, line: usize) -> Result<RawTag> {
    if s == "O" {
        return Ok(RawTag { prefix: 'O', ty: None });
    }
    let malformed = || Error::Parse { line, msg: format!("malformed label string {s:?}") };
    let (prefix, ty) = s.split_once(['-', '_']).ok_or_else(malformed)?;
    if ty.is_empty() || prefix.len() != 1 {
        return Err(malformed());
    }
    let prefix = match (prefix.chars().next().unwrap(), scheme) {
        (c @ ('B' | 'I'), _) => c,
        ('E' | 'L', TagScheme::Bioes) => 'E',
        ('S' | 'U', TagScheme::Bioes) => 'S',
        _ => return Err(malformed()),
    };
    Ok(RawTag { prefix, ty: Some(ty.to_string()) })
}

/// Decode one sentence's raw tags into spans under the given scheme.
fn decode_tags(
    tags: &[RawTag],
    scheme: TagScheme,
    repair: bool,
    line: usize,
) -> Result<Vec<EntitySpan>> {
    let mut spans = Vec::new();
    // open span: (start index, type)
    let mut open: Option<(usize, String)> = None;
    let reject = |i: usize, msg: String| Error::Parse { line, msg: format!("token {i}: {msg}") };

    for (i, tag) in tags.iter().enumerate() {
        let ty = tag.ty.clone();
        match (tag.prefix, scheme) {
            ('O', _) => {
                if let Some((start, t)) = open.take() {
                    if scheme == TagScheme::Bioes && !repair {
                        return Err(reject(i, format!("span of type {t} not closed before O")));
                    }
                    spans.push(EntitySpan::new(start, i, t));
                }
            }
            ('B', TagScheme::Iob2) => {
                if let Some((start, t)) = open.take() {
                    spans.push(EntitySpan::new(start, i, t));
                }
                open = Some((i, ty.unwrap()));
            }
            ('B', TagScheme::Iob1) => {
                // B is only licensed to split two adjacent same-type chunks
                let ty = ty.unwrap();
                match open.take() {
                    Some((start, t)) if t == ty => {
                        spans.push(EntitySpan::new(start, i, t));
                        open = Some((i, ty));
                    }
                    Some((start, t)) => {
                        if !repair {
                            return Err(reject(i, format!("B-{ty} inside a {t} chunk")));
                        }
                        spans.push(EntitySpan::new(start, i, t));
                        open = Some((i, ty));
                    }
                    None => {
                        if !repair {
                            return Err(reject(i, format!("B-{ty} without adjacent {ty} chunk")));
                        }
                        open = Some((i, ty));
                    }
                }
            }
            ('B', TagScheme::Bioes) => {
                if let Some((start, t)) = open.take() {
                    if !repair {
                        return Err(reject(i, format!("B inside an open {t} span")));
                    }
                    spans.push(EntitySpan::new(start, i, t));
                }
                open = Some((i, ty.unwrap()));
            }
            ('I', TagScheme::Iob1) => {
                let ty = ty.unwrap();
                match &open {
                    Some((_, t)) if *t == ty => {}
                    _ => {
                        if let Some((start, t)) = open.take() {
                            spans.push(EntitySpan::new(start, i, t));
                        }
                        open = Some((i, ty));
                    }
                }
            }
            ('I', TagScheme::Iob2 | TagScheme::Bioes) => {
                let ty = ty.unwrap();
                match &open {
                    Some((_, t)) if *t == ty => {}
                    _ => {
                        if !repair {
                            return Err(reject(i, format!("I-{ty} without preceding B-{ty}")));
                        }
                        if let Some((start, t)) = open.take() {
                            spans.push(EntitySpan::new(start, i, t));
                        }
                        open = Some((i, ty));
                    }
                }
            }
            ('E', TagScheme::Bioes) => {
                let ty = ty.unwrap();
                match open.take() {
                    Some((start, t)) if t == ty => spans.push(EntitySpan::new(start, i + 1, t)),
                    other => {
                        if !repair {
                            return Err(reject(i, format!("E-{ty} without open {ty} span")));
                        }
                        if let Some((start, t)) = other {
                            spans.push(EntitySpan::new(start, i, t));
                        }
                        spans.push(EntitySpan::new(i, i + 1, ty));
                    }
                }
            }
            ('S', TagScheme::Bioes) => {
                let ty = ty.unwrap();
                if let Some((start, t)) = open.take() {
                    if !repair {
                        return Err(reject(i, format!("S-{ty} inside an open {t} span")));
                    }
                    spans.push(EntitySpan::new(start, i, t));
                }
                spans.push(EntitySpan::new(i, i + 1, ty));
            }
            _ => unreachable!("prefix filtered by parse_raw_tag"),
        }
    }
    if let Some((start, t)) = open.take() {
        if scheme == TagScheme::Bioes && !repair {
            return Err(reject(tags.len(), format!("span of type {t} not closed at sentence end")));
        }
        spans.push(EntitySpan::new(start, tags.len(), t));
    }
    Ok(spans)
}

/// Parse column-formatted text (token first, label last, blank-line sentence
/// separator) into a BIOES-labeled corpus. `-DOCSTART-` lines are skipped.
pub fn parse_conll(text: &str, scheme: TagScheme, opts: &ParseOptions) -> Result<Corpus> {
    let mut sentences = Vec::new();
    let mut tokens: Vec<String> = Vec::new();
    let mut tags: Vec<RawTag> = Vec::new();
    let mut sentence_start_line = 1;

    let mut flush = |tokens: &mut Vec<String>, tags: &mut Vec<RawTag>, line: usize| -> Result<()> {
        if tokens.is_empty() {
            return Ok(());
        }
        let spans = decode_tags(tags, scheme, opts.repair, line)?;
        let labels = spans_to_bioes(tokens.len(), &spans);
        sentences.push(Sentence::new(std::mem::take(tokens), labels, opts.domain_id.clone()));
        tags.clear();
        Ok(())
    };

    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            flush(&mut tokens, &mut tags, sentence_start_line)?;
            sentence_start_line = lineno + 1;
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols[0] == "-DOCSTART-" {
            continue;
        }
        if cols.len() < 2 {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected at least 2 columns, got {}", cols.len()),
            });
        }
        if tokens.is_empty() {
            sentence_start_line = lineno;
        }
        tokens.push(cols[0].to_string());
        tags.push(parse_raw_tag(cols[cols.len() - 1], scheme, lineno)?);
    }
    flush(&mut tokens, &mut tags, sentence_start_line)?;

    if sentences.is_empty() && !opts.allow_empty {
        return Err(Error::Validation(
            "input contains no sentences (pass allow_empty to accept)".to_string(),
        ));
    }
    Corpus::new(sentences, opts.split)
}

/// Sentence indices that do / do not contain entities of one type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypeSentencePartition {
    pub entity_type: String,
    pub members: Vec<usize>,
    pub complement: Vec<usize>,
}

impl TypeSentencePartition {
    pub fn is_flagged_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// One partition per inventory type: members are exactly the sentences
/// containing at least one entity of that type.
pub fn build_partitions(corpus: &Corpus) -> Result<Vec<TypeSentencePartition>> {
    if corpus.is_empty() {
        return Err(Error::Validation("cannot partition an empty corpus".to_string()));
    }
    Ok(build_partitions_for(corpus, corpus.type_inventory()))
}

/// Partitions for an explicit type list; types with zero occurrences yield
/// empty members and are flagged with a warning.
pub fn build_partitions_for(corpus: &Corpus, types: &[String]) -> Vec<TypeSentencePartition> {
    let mut partitions: Vec<TypeSentencePartition> = types
        .iter()
        .map(|t| TypeSentencePartition {
            entity_type: t.clone(),
            members: Vec::new(),
            complement: Vec::new(),
        })
        .collect();
    for (idx, sentence) in corpus.sentences().iter().enumerate() {
        let present: BTreeSet<&str> =
            sentence.labels.iter().filter_map(EntityLabel::entity_type).collect();
        for part in partitions.iter_mut() {
            if present.contains(part.entity_type.as_str()) {
                part.members.push(idx);
            } else {
                part.complement.push(idx);
            }
        }
    }
    for part in &partitions {
        if part.is_flagged_empty() {
            log::warn!(
                "type {} has no occurrences; partition members are empty",
                part.entity_type
            );
        }
    }
    partitions
}

/// Replace every entity span whose type is not in `known_types` with O labels.
pub fn remap_ood_labels(corpus: &Corpus, known_types: &BTreeSet<String>) -> Result<Corpus> {
    if known_types.is_empty() {
        return Err(Error::Validation("known_types must be non-empty".to_string()));
    }
    let sentences = corpus
        .sentences()
        .iter()
        .map(|s| {
            let kept: Vec<EntitySpan> = strict_spans(&s.labels)
                .into_iter()
                .filter(|span| known_types.contains(&span.entity_type))
                .collect();
            Sentence::new(s.tokens.clone(), spans_to_bioes(s.len(), &kept), s.domain_id.clone())
        })
        .collect();
    Corpus::new(sentences, corpus.split())
}
