//! What an annotator submits for one (document, model): segment judgments,
//! a document comment, and the UI action timeline.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::campaign::{CampaignDefinition, ErrorSpan, ModelId, Protocol, Severity, SpanOrigin};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MissingMarker {
    pub severity: Severity,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentAnnotation {
    pub score: f64,
    /// Values of the campaign's custom sliders by name; `score` mirrors the first.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sliders: Option<BTreeMap<String, f64>>,
    #[serde(default)]
    pub error_spans: Vec<ErrorSpan>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub postedit: Option<String>,
    /// Omission error flagged with the `[missing]` marker after the segment.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub missing: Option<MissingMarker>,
}

impl SegmentAnnotation {
    pub fn scored(score: f64) -> Self {
        SegmentAnnotation {
            score,
            sliders: None,
            error_spans: Vec::new(),
            postedit: None,
            missing: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    SpanCreate,
    SpanDelete,
    SeverityChange,
    ScoreSet,
    CommentSet,
    TutorialFail,
    TutorialSkip,
    Submit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionEvent {
    /// Milliseconds; client clock for UI actions, server receipt time otherwise.
    pub timestamp: u64,
    pub kind: ActionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segment_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub payload: Value,
}

/// One model's part of a document submission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelAnnotation {
    pub segments: Vec<SegmentAnnotation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comment: Option<String>,
    #[serde(default)]
    pub actions: Vec<ActionEvent>,
}

impl ModelAnnotation {
    pub fn scores(&self) -> Vec<f64> {
        self.segments.iter().map(|s| s.score).collect()
    }
}

/// A persisted judgment of one (document, model) by one annotator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub user_id: String,
    pub document_index: usize,
    pub model_id: ModelId,
    pub segments: Vec<SegmentAnnotation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comment: Option<String>,
    #[serde(default)]
    pub actions: Vec<ActionEvent>,
    /// Sequence number of the event carrying this record.
    pub sequence: u64,
    pub submitted_at: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub superseded_by: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{path}: {message}")]
pub struct RecordError {
    pub path: String,
    pub message: String,
}

fn err(path: String, message: impl Into<String>) -> RecordError {
    RecordError {
        path,
        message: message.into(),
    }
}

/// Checks a model annotation against the campaign: segment count, score
/// range, sliders, span bounds and protocol-specific span fields.
pub fn validate_annotation(
    def: &CampaignDefinition,
    document_index: usize,
    model: &str,
    annotation: &mut ModelAnnotation,
) -> Result<(), RecordError> {
    let doc = def
        .documents
        .get(document_index)
        .ok_or_else(|| err("document_index".into(), format!("no document {document_index}")))?;
    if !doc.has_model(model) {
        return Err(err("models".into(), format!("document {document_index} has no such output")));
    }
    let base = format!("models.{model}");
    if annotation.segments.len() != doc.segments.len() {
        return Err(err(
            format!("{base}.segments"),
            format!("expected {} segments, got {}", doc.segments.len(), annotation.segments.len()),
        ));
    }
    let protocol = def.info.protocol;
    for (i, (seg, item)) in annotation.segments.iter_mut().zip(&doc.segments).enumerate() {
        let path = format!("{base}.segments[{i}]");
        if let Some(sliders) = &def.info.custom_sliders {
            let given = seg
                .sliders
                .as_ref()
                .ok_or_else(|| err(format!("{path}.sliders"), "campaign uses custom sliders"))?;
            let names: Vec<&String> = sliders.iter().map(|s| &s.name).collect();
            let mut given_names: Vec<&String> = given.keys().collect();
            given_names.sort();
            let mut expected = names.clone();
            expected.sort();
            if given_names != expected {
                return Err(err(format!("{path}.sliders"), format!("expected sliders {names:?}")));
            }
            if let Some((name, v)) = given.iter().find(|(_, v)| !(0.0..=100.0).contains(*v)) {
                return Err(err(format!("{path}.sliders.{name}"), format!("{v} is outside [0, 100]")));
            }
            seg.score = given[names[0]];
        } else if seg.sliders.is_some() {
            return Err(err(format!("{path}.sliders"), "campaign has no custom sliders"));
        }
        if !seg.score.is_finite() || !(0.0..=100.0).contains(&seg.score) {
            return Err(err(format!("{path}.score"), format!("{} is outside [0, 100]", seg.score)));
        }
        let target = &item.tgt[model];
        if !seg.error_spans.is_empty() || seg.missing.is_some() {
            if !protocol.has_spans() {
                return Err(err(format!("{path}.error_spans"), format!("{} has no error spans", protocol.as_str())));
            }
            if !target.is_text() {
                return Err(err(format!("{path}.error_spans"), "spans need a text target"));
            }
        }
        let len = target.char_len();
        for (k, span) in seg.error_spans.iter().enumerate() {
            let spath = format!("{path}.error_spans[{k}]");
            if !span.fits(len) {
                return Err(err(
                    spath,
                    format!("[{}, {}] is outside the {len}-character target", span.start_i, span.end_i),
                ));
            }
            check_category(protocol, span.category.as_deref(), &spath)?;
            if span.origin.is_some() && protocol != Protocol::EsaAi {
                return Err(err(format!("{spath}.origin"), "span origins exist only for ESA^AI"));
            }
        }
        if protocol == Protocol::EsaAi {
            for span in &mut seg.error_spans {
                span.origin.get_or_insert(SpanOrigin::Human);
            }
        }
        if let Some(m) = &seg.missing {
            check_category(protocol, m.category.as_deref(), &format!("{path}.missing"))?;
        }
        if seg.postedit.is_some() && !def.info.allow_postedit {
            return Err(err(format!("{path}.postedit"), "post-editing is disabled"));
        }
    }
    Ok(())
}

fn check_category(protocol: Protocol, category: Option<&str>, path: &str) -> Result<(), RecordError> {
    match (protocol.has_categories(), category) {
        (true, None) => Err(err(format!("{path}.category"), "MQM spans need a category")),
        (true, Some(c)) if c.trim().is_empty() => Err(err(format!("{path}.category"), "empty category")),
        (false, Some(_)) => Err(err(format!("{path}.category"), "categories exist only for MQM")),
        _ => Ok(()),
    }
}
