//! Campaign definitions: the declarative file an operator adds, validated into
//! typed documents, plus the magic links that grant access to it.

mod jsonc;
mod links;
mod parse;
mod words;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use links::{
    generate_links, generate_links_with, link_url, CampaignLinks, MagicLink, Role, Token, UserIdentity,
    TOKEN_BITS, TOKEN_LEN,
};
pub use parse::{parse_campaign, parse_campaign_str};

pub type ModelId = String;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum CampaignError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid campaign at `{path}`: {message}")]
    Invalid { path: String, message: String },
}

impl CampaignError {
    pub(crate) fn invalid(path: impl Into<String>, message: impl Into<String>) -> Self {
        CampaignError::Invalid {
            path: path.into(),
            message: message.into(),
        }
    }

    /// The offending schema path for validation errors.
    pub fn path(&self) -> Option<&str> {
        match self {
            CampaignError::Invalid { path, .. } => Some(path),
            CampaignError::Syntax { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AssignmentMode {
    #[serde(rename = "task-based")]
    TaskBased,
    #[serde(rename = "single-stream")]
    SingleStream,
    #[serde(rename = "dynamic")]
    Dynamic,
}

impl AssignmentMode {
    pub fn as_str(self) -> &'static str {
        match self {
            AssignmentMode::TaskBased => "task-based",
            AssignmentMode::SingleStream => "single-stream",
            AssignmentMode::Dynamic => "dynamic",
        }
    }

    pub fn is_pooled(self) -> bool {
        !matches!(self, AssignmentMode::TaskBased)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Protocol {
    #[serde(rename = "DA")]
    Da,
    #[serde(rename = "ESA")]
    Esa,
    #[serde(rename = "MQM")]
    Mqm,
    #[serde(rename = "ESA^AI")]
    EsaAi,
}

impl Protocol {
    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::Da => "DA",
            Protocol::Esa => "ESA",
            Protocol::Mqm => "MQM",
            Protocol::EsaAi => "ESA^AI",
        }
    }

    /// Whether annotators mark error spans under this protocol.
    pub fn has_spans(self) -> bool {
        !matches!(self, Protocol::Da)
    }

    /// MQM spans carry a typed category such as `Accuracy/Overtranslated`.
    pub fn has_categories(self) -> bool {
        matches!(self, Protocol::Mqm)
    }
}

/// A named slider with anchor labels spread evenly over 0–100.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Slider {
    pub name: String,
    pub anchors: Vec<String>,
}

/// Parameters of ε-greedy dynamic assignment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DynamicParams {
    /// Size of the exploited top set.
    pub top: usize,
    /// Completed documents each model needs before exploitation starts.
    pub first: usize,
    /// Probability of sampling uniformly over all models instead.
    pub backoff: f64,
    /// How many models are shown side by side per item.
    pub contrastive_models: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignInfo {
    pub assignment: AssignmentMode,
    pub protocol: Protocol,
    /// Number of annotator links. Equals the task count for task-based campaigns.
    pub users: usize,
    pub shuffle: bool,
    pub dynamic: Option<DynamicParams>,
    pub custom_sliders: Option<Vec<Slider>>,
    pub allow_postedit: bool,
    pub allow_redo: bool,
    /// Attention-check pass rate required for an accept token.
    pub attention_threshold: f64,
}

pub const DEFAULT_ATTENTION_THRESHOLD: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContentKind {
    Text,
    Audio,
    Video,
    Html,
}

/// Source, reference or output content. Plain JSON strings are text;
/// media is written as `{"kind": "audio", "value": "https://..."}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Content {
    pub kind: ContentKind,
    pub value: String,
}

impl Content {
    pub fn text(value: impl Into<String>) -> Self {
        Content {
            kind: ContentKind::Text,
            value: value.into(),
        }
    }

    pub fn is_text(&self) -> bool {
        self.kind == ContentKind::Text
    }

    /// Length in Unicode scalar values, the unit of span indices.
    pub fn char_len(&self) -> usize {
        self.value.chars().count()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ContentRepr {
    Text(String),
    Tagged { kind: ContentKind, value: String },
}

impl Serialize for Content {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self.kind {
            ContentKind::Text => s.serialize_str(&self.value),
            kind => ContentRepr::Tagged {
                kind,
                value: self.value.clone(),
            }
            .serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for Content {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(match ContentRepr::deserialize(d)? {
            ContentRepr::Text(value) => Content::text(value),
            ContentRepr::Tagged { kind, value } => Content { kind, value },
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Minor,
    Major,
}

/// Where an ESA^AI span came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpanOrigin {
    Human,
    Prefilled,
    PrefilledEdited,
}

/// A marked error: inclusive character offsets `start_i..=end_i` into the
/// target text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorSpan {
    pub start_i: usize,
    pub end_i: usize,
    pub severity: Severity,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<SpanOrigin>,
}

impl ErrorSpan {
    pub fn new(start_i: usize, end_i: usize, severity: Severity) -> Self {
        ErrorSpan {
            start_i,
            end_i,
            severity,
            category: None,
            origin: None,
        }
    }

    pub fn fits(&self, char_len: usize) -> bool {
        self.start_i <= self.end_i && self.end_i < char_len
    }
}

/// Inclusive `[lo, hi]` index range.
pub type IndexRange = (usize, usize);

#[derive(Debug, Clone, PartialEq)]
pub struct ExpectedSpan {
    pub start_range: IndexRange,
    pub end_range: IndexRange,
    pub severity: Severity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRange {
    pub min: f64,
    pub max: f64,
}

impl ScoreRange {
    pub fn contains(&self, score: f64) -> bool {
        self.min <= score && score <= self.max
    }
}

/// A tutorial (with `warning`) or a silent attention check (without).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationRule {
    pub warning: Option<String>,
    pub score: Option<ScoreRange>,
    pub error_spans: Vec<ExpectedSpan>,
    pub score_greaterthan: Option<ModelId>,
    pub allow_skip: bool,
}

impl ValidationRule {
    pub fn is_blocking(&self) -> bool {
        self.warning.is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentItem {
    pub src: Content,
    pub reference: Option<Content>,
    pub tgt: IndexMap<ModelId, Content>,
    pub validation: IndexMap<ModelId, Vec<ValidationRule>>,
    pub prefilled_spans: IndexMap<ModelId, Vec<ErrorSpan>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub instructions: Option<String>,
    pub segments: Vec<SegmentItem>,
}

impl Document {
    /// Model ids in campaign-file order (taken from the first segment).
    pub fn models(&self) -> Vec<ModelId> {
        self.segments
            .first()
            .map(|s| s.tgt.keys().cloned().collect())
            .unwrap_or_default()
    }

    pub fn has_model(&self, model: &str) -> bool {
        self.segments
            .first()
            .is_some_and(|s| s.tgt.contains_key(model))
    }

    /// Number of outputs shown side by side when the whole document is displayed.
    pub fn contrastive_width(&self) -> usize {
        self.segments.first().map_or(0, |s| s.tgt.len())
    }

    pub fn is_contrastive(&self) -> bool {
        self.contrastive_width() >= 2
    }

    pub fn has_validation(&self) -> bool {
        self.segments.iter().any(|s| !s.validation.is_empty())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignDefinition {
    pub campaign_id: String,
    pub info: CampaignInfo,
    /// All documents; for task-based campaigns in task order, flattened.
    pub documents: Vec<Document>,
    /// For task-based campaigns, each task's documents as indices into
    /// `documents`. `None` for pooled assignment.
    pub tasks: Option<Vec<Vec<usize>>>,
}

impl CampaignDefinition {
    /// Distinct model ids, sorted.
    pub fn models(&self) -> Vec<ModelId> {
        let mut models: Vec<ModelId> = self.documents.iter().flat_map(|d| d.models()).collect();
        models.sort();
        models.dedup();
        models
    }

    pub fn document(&self, index: usize) -> Option<&Document> {
        self.documents.get(index)
    }

    /// Display order of `models` for one annotator and document: file order
    /// when shuffling is off, otherwise a seeded permutation that stays stable
    /// for the same annotator and document.
    pub fn display_order(&self, document_index: usize, user_id: &str, models: &[ModelId]) -> Vec<ModelId> {
        if !self.info.shuffle {
            return models.to_vec();
        }
        shuffle_models(models, display_seed(&self.campaign_id, user_id, document_index))
    }
}

/// Permutation of the document's models for a given seed.
pub fn shuffle_model_order(document: &Document, seed: u64) -> Vec<ModelId> {
    shuffle_models(&document.models(), seed)
}

fn shuffle_models(models: &[ModelId], seed: u64) -> Vec<ModelId> {
    let mut order = models.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    order
}

/// Stable seed derived from the campaign, annotator and document.
pub fn display_seed(campaign_id: &str, user_id: &str, document_index: usize) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(campaign_id.as_bytes());
    hasher.update([0]);
    hasher.update(user_id.as_bytes());
    hasher.update([0]);
    hasher.update((document_index as u64).to_le_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}
