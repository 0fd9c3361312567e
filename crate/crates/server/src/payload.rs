//! Annotator-facing views. Model ids never leave the server: outputs are
//! named `output-1`, `output-2`, … in display order, and the same order is
//! recomputed when a submission comes back.

use std::collections::BTreeMap;

use pearmut_core::assignment::{ItemRef, Progress};
use pearmut_core::campaign::{CampaignDefinition, Content, ErrorSpan, ModelId, Protocol, Severity, Slider};
use pearmut_core::quality::Verdict;
use pearmut_core::record::ModelAnnotation;
use serde::{Deserialize, Serialize};

pub fn alias(position: usize) -> String {
    format!("output-{}", position + 1)
}

/// Alias → model for one displayed item.
pub fn alias_map(display_order: &[ModelId]) -> BTreeMap<String, ModelId> {
    display_order
        .iter()
        .enumerate()
        .map(|(i, m)| (alias(i), m.clone()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub value: f64,
    pub label: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliderConfig {
    pub name: String,
    pub min: f64,
    pub max: f64,
    pub anchors: Vec<Anchor>,
}

/// The quality slider used unless the campaign brings its own.
pub fn default_slider() -> SliderConfig {
    let anchors = [
        (0.0, "Nonsense", "Almost none of the meaning comes through."),
        (33.0, "Broken", "Large parts are missing or the text does not hang together."),
        (66.0, "Middling", "Small problems with grammar or consistency."),
        (100.0, "Perfect", "Meaning and grammar fully match the source."),
    ];
    SliderConfig {
        name: "quality".into(),
        min: 0.0,
        max: 100.0,
        anchors: anchors
            .into_iter()
            .map(|(value, label, description)| Anchor {
                value,
                label: label.into(),
                description: description.into(),
            })
            .collect(),
    }
}

/// Custom anchors are spread evenly over 0–100.
pub fn custom_slider(slider: &Slider) -> SliderConfig {
    let n = slider.anchors.len();
    SliderConfig {
        name: slider.name.clone(),
        min: 0.0,
        max: 100.0,
        anchors: slider
            .anchors
            .iter()
            .enumerate()
            .map(|(i, label)| Anchor {
                value: if n < 2 { 0.0 } else { 100.0 * i as f64 / (n - 1) as f64 },
                label: label.clone(),
                description: String::new(),
            })
            .collect(),
    }
}

pub fn sliders(def: &CampaignDefinition) -> Vec<SliderConfig> {
    match &def.info.custom_sliders {
        Some(custom) => custom.iter().map(custom_slider).collect(),
        None => vec![default_slider()],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentView {
    pub src: Content,
    #[serde(rename = "ref", skip_serializing_if = "Option::is_none")]
    pub reference: Option<Content>,
    /// Alias → output.
    pub tgt: BTreeMap<String, Content>,
    /// Alias → pre-marked spans to review.
    #[serde(skip_serializing_if = "BTreeMap::is_empty", default)]
    pub prefilled_spans: BTreeMap<String, Vec<ErrorSpan>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Flags {
    pub error_spans: bool,
    pub categories: bool,
    pub granularity_toggle: bool,
    pub alignment_hover: bool,
    pub postedit: bool,
    pub comment: bool,
    pub redo: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemPayload {
    pub campaign_id: String,
    pub protocol: Protocol,
    pub document_index: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub instructions: Option<String>,
    /// Aliases in display order.
    pub outputs: Vec<String>,
    pub segments: Vec<SegmentView>,
    pub sliders: Vec<SliderConfig>,
    pub severities: Vec<Severity>,
    pub progress: Progress,
    pub flags: Flags,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum NextPayload {
    Item(Box<ItemPayload>),
    Complete {
        verdict: Verdict,
        token: String,
        progress: Progress,
    },
}

pub fn item_payload(def: &CampaignDefinition, item: &ItemRef) -> ItemPayload {
    let doc = &def.documents[item.document_index];
    let protocol = def.info.protocol;
    let aliased = |m: &ModelId| item.model_ids.iter().position(|x| x == m).map(alias);
    let segments = doc
        .segments
        .iter()
        .map(|seg| SegmentView {
            src: seg.src.clone(),
            reference: seg.reference.clone(),
            tgt: seg
                .tgt
                .iter()
                .filter_map(|(m, c)| aliased(m).map(|a| (a, c.clone())))
                .collect(),
            prefilled_spans: seg
                .prefilled_spans
                .iter()
                .filter_map(|(m, spans)| aliased(m).map(|a| (a, spans.clone())))
                .collect(),
        })
        .collect();
    ItemPayload {
        campaign_id: def.campaign_id.clone(),
        protocol,
        document_index: item.document_index,
        instructions: doc.instructions.clone(),
        outputs: (0..item.model_ids.len()).map(alias).collect(),
        segments,
        sliders: sliders(def),
        severities: vec![Severity::Minor, Severity::Major],
        progress: item.progress,
        flags: Flags {
            error_spans: protocol.has_spans(),
            categories: protocol.has_categories(),
            granularity_toggle: protocol.has_spans(),
            alignment_hover: true,
            postedit: def.info.allow_postedit,
            comment: true,
            redo: def.info.allow_redo,
        },
    }
}

/// What the annotation page posts back, keyed by alias.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubmitRequest {
    pub document_index: usize,
    pub annotations: BTreeMap<String, ModelAnnotation>,
    #[serde(default)]
    pub skip_tutorial: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RedistributeRequest {
    pub from_user: String,
    pub to_user: String,
    /// Half-open range of positions in `from_user`'s task.
    pub start: usize,
    pub end: usize,
}
