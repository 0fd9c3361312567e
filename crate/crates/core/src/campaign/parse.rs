use std::collections::BTreeSet;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{
    jsonc, AssignmentMode, CampaignDefinition, CampaignError, CampaignInfo, Content, ContentKind,
    Document, DynamicParams, ErrorSpan, ExpectedSpan, ModelId, Protocol, ScoreRange, SegmentItem,
    Severity, Slider, ValidationRule, DEFAULT_ATTENTION_THRESHOLD,
};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCampaign {
    #[serde(default)]
    info: Option<RawInfo>,
    #[serde(default)]
    campaign_id: Option<String>,
    #[serde(default)]
    data: Option<Value>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInfo {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    assignment: Option<AssignmentMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    protocol: Option<Protocol>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    users: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    shuffle: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dynamic_top: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dynamic_first: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dynamic_backoff: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dynamic_contrastive_models: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    custom_sliders: Option<Vec<Slider>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    allow_postedit: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    allow_redo: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    attention_threshold: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSegment {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    instructions: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    src: Option<Content>,
    #[serde(default, rename = "ref", skip_serializing_if = "Option::is_none")]
    reference: Option<Content>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tgt: Option<IndexMap<ModelId, Content>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    validation: Option<IndexMap<ModelId, Vec<RawRule>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    prefilled_spans: Option<IndexMap<ModelId, Vec<ErrorSpan>>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    warning: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    score: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    error_spans: Option<Vec<RawExpectedSpan>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    score_greaterthan: Option<ModelId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    allow_skip: Option<bool>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExpectedSpan {
    start_i: [usize; 2],
    end_i: [usize; 2],
    severity: Severity,
}

type RawDocument = Vec<RawSegment>;

/// Parses and validates campaign-file bytes.
pub fn parse_campaign(raw: &[u8]) -> Result<CampaignDefinition, CampaignError> {
    let text = std::str::from_utf8(raw).map_err(|e| CampaignError::Syntax {
        line: 0,
        column: 0,
        message: format!("campaign file is not UTF-8: {e}"),
    })?;
    parse_campaign_str(text)
}

pub fn parse_campaign_str(text: &str) -> Result<CampaignDefinition, CampaignError> {
    let cleaned = jsonc::strip(text);
    let mut de = serde_json::Deserializer::from_str(&cleaned);
    let raw: RawCampaign = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        serde_error(inner, &path)
    })?;
    de.end().map_err(|e| serde_error(e, "."))?;
    validate(raw)
}

fn serde_error(e: serde_json::Error, path: &str) -> CampaignError {
    use serde_json::error::Category;
    match e.classify() {
        Category::Syntax | Category::Eof | Category::Io => CampaignError::Syntax {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        },
        Category::Data => {
            let message = strip_position(&e.to_string());
            CampaignError::invalid(field_path(path, &message), message)
        }
    }
}

/// serde appends " at line X column Y" to data errors; the path is more useful.
fn strip_position(message: &str) -> String {
    match message.rfind(" at line ") {
        Some(at) => message[..at].to_string(),
        None => message.to_string(),
    }
}

/// Appends the field name of "missing field `x`" errors to the path.
fn field_path(path: &str, message: &str) -> String {
    let missing = message
        .strip_prefix("missing field `")
        .and_then(|rest| rest.split('`').next());
    match (path, missing) {
        (".", Some(field)) => field.to_string(),
        (_, Some(field)) => format!("{path}.{field}"),
        _ => path.to_string(),
    }
}

fn sub<T: serde::de::DeserializeOwned>(value: Value, prefix: &str) -> Result<T, CampaignError> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let inner_path = e.path().to_string();
        let path = if inner_path == "." {
            prefix.to_string()
        } else if inner_path.starts_with('[') {
            format!("{prefix}{inner_path}")
        } else {
            format!("{prefix}.{inner_path}")
        };
        let message = strip_position(&e.into_inner().to_string());
        CampaignError::invalid(field_path(&path, &message), message)
    })
}

fn validate(raw: RawCampaign) -> Result<CampaignDefinition, CampaignError> {
    let campaign_id = raw
        .campaign_id
        .ok_or_else(|| CampaignError::invalid("campaign_id", "missing field `campaign_id`"))?;
    validate_campaign_id(&campaign_id)?;
    let info = raw
        .info
        .ok_or_else(|| CampaignError::invalid("info", "missing field `info`"))?;
    let assignment = info
        .assignment
        .ok_or_else(|| CampaignError::invalid("info.assignment", "missing field `assignment`"))?;
    let protocol = info
        .protocol
        .ok_or_else(|| CampaignError::invalid("info.protocol", "missing field `protocol`"))?;
    let data = raw
        .data
        .ok_or_else(|| CampaignError::invalid("data", "missing field `data`"))?;

    let (documents, tasks) = match assignment {
        AssignmentMode::TaskBased => {
            let raw_tasks: Vec<Vec<RawDocument>> = sub(data, "data")?;
            if raw_tasks.is_empty() {
                return Err(CampaignError::invalid("data", "campaign has no tasks"));
            }
            let mut documents = Vec::new();
            let mut tasks = Vec::with_capacity(raw_tasks.len());
            for (t, raw_task) in raw_tasks.into_iter().enumerate() {
                if raw_task.is_empty() {
                    return Err(CampaignError::invalid(format!("data[{t}]"), "task has no documents"));
                }
                let mut task = Vec::with_capacity(raw_task.len());
                for (d, raw_doc) in raw_task.into_iter().enumerate() {
                    task.push(documents.len());
                    documents.push(document(raw_doc, protocol, &format!("data[{t}][{d}]"))?);
                }
                tasks.push(task);
            }
            (documents, Some(tasks))
        }
        AssignmentMode::SingleStream | AssignmentMode::Dynamic => {
            let raw_docs: Vec<RawDocument> = sub(data, "data")?;
            if raw_docs.is_empty() {
                return Err(CampaignError::invalid("data", "campaign has no documents"));
            }
            let documents = raw_docs
                .into_iter()
                .enumerate()
                .map(|(d, raw_doc)| document(raw_doc, protocol, &format!("data[{d}]")))
                .collect::<Result<Vec<_>, _>>()?;
            (documents, None)
        }
    };

    let users = match (&tasks, info.users) {
        (Some(tasks), Some(users)) if users != tasks.len() => {
            return Err(CampaignError::invalid(
                "info.users",
                format!("{users} users given but the campaign defines {} tasks", tasks.len()),
            ))
        }
        (Some(tasks), _) => tasks.len(),
        (None, Some(0)) => return Err(CampaignError::invalid("info.users", "must be at least 1")),
        (None, Some(users)) => users,
        (None, None) => {
            return Err(CampaignError::invalid("info.users", "missing field `users`"));
        }
    };

    let mut all_models = BTreeSet::new();
    for doc in &documents {
        all_models.extend(doc.models());
    }
    let dynamic = dynamic_params(&info, assignment, all_models.len())?;
    if let Some(params) = dynamic {
        if params.contrastive_models >= 2 {
            for (d, doc) in documents.iter().enumerate() {
                if doc.contrastive_width() < params.contrastive_models {
                    return Err(CampaignError::invalid(
                        format!("data[{d}]"),
                        format!(
                            "document has {} models but dynamic_contrastive_models is {}",
                            doc.contrastive_width(),
                            params.contrastive_models
                        ),
                    ));
                }
            }
        }
    }

    if let Some(sliders) = &info.custom_sliders {
        if sliders.is_empty() {
            return Err(CampaignError::invalid("info.custom_sliders", "at least one slider is required"));
        }
        let mut names = BTreeSet::new();
        for (i, slider) in sliders.iter().enumerate() {
            if slider.name.trim().is_empty() {
                return Err(CampaignError::invalid(format!("info.custom_sliders[{i}].name"), "empty slider name"));
            }
            if !names.insert(slider.name.as_str()) {
                return Err(CampaignError::invalid(format!("info.custom_sliders[{i}].name"), "duplicate slider name"));
            }
            if slider.anchors.len() < 2 {
                return Err(CampaignError::invalid(
                    format!("info.custom_sliders[{i}].anchors"),
                    "a slider needs at least two anchor labels",
                ));
            }
        }
    }

    let attention_threshold = info.attention_threshold.unwrap_or(DEFAULT_ATTENTION_THRESHOLD);
    if !(0.0..=1.0).contains(&attention_threshold) {
        return Err(CampaignError::invalid("info.attention_threshold", "must lie in [0, 1]"));
    }

    Ok(CampaignDefinition {
        campaign_id,
        info: CampaignInfo {
            assignment,
            protocol,
            users,
            shuffle: info.shuffle.unwrap_or(true),
            dynamic,
            custom_sliders: info.custom_sliders,
            allow_postedit: info.allow_postedit.unwrap_or(false),
            allow_redo: info.allow_redo.unwrap_or(false),
            attention_threshold,
        },
        documents,
        tasks,
    })
}

fn validate_campaign_id(id: &str) -> Result<(), CampaignError> {
    if id.is_empty() {
        return Err(CampaignError::invalid("campaign_id", "must not be empty"));
    }
    let ok = !id.starts_with('.')
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'));
    if !ok {
        return Err(CampaignError::invalid(
            "campaign_id",
            "may only contain ASCII letters, digits, `_`, `-` and `.` and must not start with `.`",
        ));
    }
    Ok(())
}

fn dynamic_params(
    info: &RawInfo,
    assignment: AssignmentMode,
    model_count: usize,
) -> Result<Option<DynamicParams>, CampaignError> {
    if assignment != AssignmentMode::Dynamic {
        let stray = [
            ("dynamic_top", info.dynamic_top.is_some()),
            ("dynamic_first", info.dynamic_first.is_some()),
            ("dynamic_backoff", info.dynamic_backoff.is_some()),
            ("dynamic_contrastive_models", info.dynamic_contrastive_models.is_some()),
        ];
        if let Some((name, _)) = stray.iter().find(|(_, set)| *set) {
            return Err(CampaignError::invalid(
                format!("info.{name}"),
                "only valid with \"assignment\": \"dynamic\"",
            ));
        }
        return Ok(None);
    }

    let top = info
        .dynamic_top
        .ok_or_else(|| CampaignError::invalid("info.dynamic_top", "missing field `dynamic_top`"))?;
    if top == 0 {
        return Err(CampaignError::invalid("info.dynamic_top", "must be at least 1"));
    }
    if top > model_count {
        return Err(CampaignError::invalid(
            "info.dynamic_top",
            format!("dynamic_top {top} exceeds the {model_count} models in the campaign"),
        ));
    }
    let backoff = info.dynamic_backoff.unwrap_or(0.0);
    if !(0.0..=1.0).contains(&backoff) {
        return Err(CampaignError::invalid("info.dynamic_backoff", "must be a probability in [0, 1]"));
    }
    let contrastive_models = info.dynamic_contrastive_models.unwrap_or(1);
    if contrastive_models == 0 || contrastive_models > model_count {
        return Err(CampaignError::invalid(
            "info.dynamic_contrastive_models",
            format!("must lie between 1 and the {model_count} models in the campaign"),
        ));
    }
    Ok(Some(DynamicParams {
        top,
        first: info.dynamic_first.unwrap_or(0),
        backoff,
        contrastive_models,
    }))
}

fn content(c: Content, path: String) -> Result<Content, CampaignError> {
    if c.value.trim().is_empty() {
        let what = if c.kind == ContentKind::Text { "text" } else { "resource" };
        return Err(CampaignError::invalid(path, format!("empty {what}")));
    }
    Ok(c)
}

fn document(raw: RawDocument, protocol: Protocol, path: &str) -> Result<Document, CampaignError> {
    if raw.is_empty() {
        return Err(CampaignError::invalid(path, "document has no segments"));
    }
    let mut instructions = None;
    let mut segments = Vec::with_capacity(raw.len());
    let mut models: Option<BTreeSet<ModelId>> = None;

    for (s, seg) in raw.into_iter().enumerate() {
        let seg_path = format!("{path}[{s}]");
        if let Some(text) = seg.instructions {
            if s != 0 {
                return Err(CampaignError::invalid(
                    format!("{seg_path}.instructions"),
                    "instructions are only allowed on the first segment of a document",
                ));
            }
            instructions = Some(text);
        }
        let src = seg
            .src
            .ok_or_else(|| CampaignError::invalid(format!("{seg_path}.src"), "missing field `src`"))?;
        let src = content(src, format!("{seg_path}.src"))?;
        let reference = seg
            .reference
            .map(|r| content(r, format!("{seg_path}.ref")))
            .transpose()?;
        let raw_tgt = seg
            .tgt
            .ok_or_else(|| CampaignError::invalid(format!("{seg_path}.tgt"), "missing field `tgt`"))?;
        if raw_tgt.is_empty() {
            return Err(CampaignError::invalid(format!("{seg_path}.tgt"), "at least one model output is required"));
        }
        let mut tgt = IndexMap::with_capacity(raw_tgt.len());
        for (model, c) in raw_tgt {
            if model.is_empty() {
                return Err(CampaignError::invalid(format!("{seg_path}.tgt"), "empty model id"));
            }
            let c = content(c, format!("{seg_path}.tgt.{model}"))?;
            tgt.insert(model, c);
        }

        let keys: BTreeSet<ModelId> = tgt.keys().cloned().collect();
        match &models {
            None => models = Some(keys),
            Some(expected) if *expected != keys => {
                return Err(CampaignError::invalid(
                    format!("{seg_path}.tgt"),
                    format!(
                        "all segments of a document must have the same models; expected {:?}",
                        expected
                    ),
                ))
            }
            Some(_) => {}
        }

        let validation = match seg.validation {
            None => IndexMap::new(),
            Some(rules) => {
                let mut out = IndexMap::with_capacity(rules.len());
                for (model, raw_rules) in rules {
                    let rule_path = format!("{seg_path}.validation.{model}");
                    let Some(target) = tgt.get(&model) else {
                        return Err(CampaignError::invalid(rule_path, "validation refers to a model not in `tgt`"));
                    };
                    let rules = raw_rules
                        .into_iter()
                        .enumerate()
                        .map(|(r, rule)| {
                            validation_rule(rule, &model, target, &tgt, protocol, &format!("{rule_path}[{r}]"))
                        })
                        .collect::<Result<Vec<_>, _>>()?;
                    out.insert(model, rules);
                }
                out
            }
        };

        let prefilled_spans = match seg.prefilled_spans {
            None => IndexMap::new(),
            Some(_) if protocol != Protocol::EsaAi => {
                return Err(CampaignError::invalid(
                    format!("{seg_path}.prefilled_spans"),
                    "pre-filled spans are only used with the ESA^AI protocol",
                ))
            }
            Some(spans) => {
                for (model, list) in &spans {
                    let span_path = format!("{seg_path}.prefilled_spans.{model}");
                    let Some(target) = tgt.get(model) else {
                        return Err(CampaignError::invalid(span_path, "pre-filled spans refer to a model not in `tgt`"));
                    };
                    if !target.is_text() {
                        return Err(CampaignError::invalid(span_path, "spans require text content"));
                    }
                    let len = target.char_len();
                    for (i, span) in list.iter().enumerate() {
                        if !span.fits(len) {
                            return Err(CampaignError::invalid(
                                format!("{span_path}[{i}]"),
                                format!(
                                    "span {}..={} does not fit the {len}-character target",
                                    span.start_i, span.end_i
                                ),
                            ));
                        }
                        if span.category.is_some() || span.origin.is_some() {
                            return Err(CampaignError::invalid(
                                format!("{span_path}[{i}]"),
                                "pre-filled spans carry only indices and severity",
                            ));
                        }
                    }
                }
                spans
            }
        };

        segments.push(SegmentItem {
            src,
            reference,
            tgt,
            validation,
            prefilled_spans,
        });
    }

    Ok(Document {
        instructions,
        segments,
    })
}

fn validation_rule(
    raw: RawRule,
    model: &str,
    target: &Content,
    tgt: &IndexMap<ModelId, Content>,
    protocol: Protocol,
    path: &str,
) -> Result<ValidationRule, CampaignError> {
    let score = match raw.score {
        None => None,
        Some([min, max]) => {
            if !(0.0..=100.0).contains(&min) || !(0.0..=100.0).contains(&max) || min > max {
                return Err(CampaignError::invalid(
                    format!("{path}.score"),
                    "score range must satisfy 0 <= min <= max <= 100",
                ));
            }
            Some(ScoreRange { min, max })
        }
    };
    if let Some(other) = &raw.score_greaterthan {
        if other == model || !tgt.contains_key(other) {
            return Err(CampaignError::invalid(
                format!("{path}.score_greaterthan"),
                format!("`{other}` is not another model on this segment"),
            ));
        }
    }
    let mut error_spans = Vec::new();
    if let Some(expected) = raw.error_spans {
        if !expected.is_empty() && (!protocol.has_spans() || !target.is_text()) {
            return Err(CampaignError::invalid(
                format!("{path}.error_spans"),
                "expected spans need a span protocol and a text target",
            ));
        }
        for (i, e) in expected.into_iter().enumerate() {
            let [s_lo, s_hi] = e.start_i;
            let [e_lo, e_hi] = e.end_i;
            if s_lo > s_hi || e_lo > e_hi || s_lo > e_hi {
                return Err(CampaignError::invalid(
                    format!("{path}.error_spans[{i}]"),
                    "ranges must satisfy start lo <= hi, end lo <= hi and start lo <= end hi",
                ));
            }
            error_spans.push(ExpectedSpan {
                start_range: (s_lo, s_hi),
                end_range: (e_lo, e_hi),
                severity: e.severity,
            });
        }
    }
    Ok(ValidationRule {
        warning: raw.warning,
        score,
        error_spans,
        score_greaterthan: raw.score_greaterthan,
        allow_skip: raw.allow_skip.unwrap_or(false),
    })
}

impl CampaignDefinition {
    /// The campaign in its file schema, with defaults written out.
    pub fn to_json(&self) -> Value {
        let info = &self.info;
        let dynamic = info.dynamic;
        let raw_info = RawInfo {
            assignment: Some(info.assignment),
            protocol: Some(info.protocol),
            users: Some(info.users),
            shuffle: Some(info.shuffle),
            dynamic_top: dynamic.map(|d| d.top),
            dynamic_first: dynamic.map(|d| d.first),
            dynamic_backoff: dynamic.map(|d| d.backoff),
            dynamic_contrastive_models: dynamic.map(|d| d.contrastive_models),
            custom_sliders: info.custom_sliders.clone(),
            allow_postedit: Some(info.allow_postedit),
            allow_redo: Some(info.allow_redo),
            attention_threshold: Some(info.attention_threshold),
        };
        let data = match &self.tasks {
            Some(tasks) => Value::Array(
                tasks
                    .iter()
                    .map(|task| Value::Array(task.iter().map(|&d| doc_json(&self.documents[d])).collect()))
                    .collect(),
            ),
            None => Value::Array(self.documents.iter().map(doc_json).collect()),
        };
        serde_json::to_value(RawCampaign {
            info: Some(raw_info),
            campaign_id: Some(self.campaign_id.clone()),
            data: Some(data),
        })
        .expect("campaign serializes")
    }
}

fn doc_json(doc: &Document) -> Value {
    let segments: Vec<RawSegment> = doc
        .segments
        .iter()
        .enumerate()
        .map(|(s, seg)| RawSegment {
            instructions: if s == 0 { doc.instructions.clone() } else { None },
            src: Some(seg.src.clone()),
            reference: seg.reference.clone(),
            tgt: Some(seg.tgt.clone()),
            validation: (!seg.validation.is_empty()).then(|| {
                seg.validation
                    .iter()
                    .map(|(m, rules)| (m.clone(), rules.iter().map(raw_rule).collect()))
                    .collect()
            }),
            prefilled_spans: (!seg.prefilled_spans.is_empty()).then(|| seg.prefilled_spans.clone()),
        })
        .collect();
    serde_json::to_value(segments).expect("document serializes")
}

fn raw_rule(rule: &ValidationRule) -> RawRule {
    RawRule {
        warning: rule.warning.clone(),
        score: rule.score.as_ref().map(|r| [r.min, r.max]),
        error_spans: (!rule.error_spans.is_empty()).then(|| {
            rule.error_spans
                .iter()
                .map(|e| RawExpectedSpan {
                    start_i: [e.start_range.0, e.start_range.1],
                    end_i: [e.end_range.0, e.end_range.1],
                    severity: e.severity,
                })
                .collect()
        }),
        score_greaterthan: rule.score_greaterthan.clone(),
        allow_skip: rule.allow_skip.then_some(true),
    }
}
