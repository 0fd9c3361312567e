//! In-memory state of one campaign, rebuilt by applying its events in order.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::Serialize;
use serde_json::{json, Value};

use super::event::{EventBody, StoredEvent};
use super::StoreError;
use crate::analytics::ScoreObservation;
use crate::assignment::{AssignmentState, CompletionKind, Issue};
use crate::campaign::{parse_campaign_str, CampaignDefinition, ModelId, Role, UserIdentity};
use crate::quality::{QualityLedger, RuleResult};
use crate::record::{ActionEvent, ActionKind, AnnotationRecord};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RuleLogEntry {
    pub sequence: u64,
    pub timestamp_ms: u64,
    pub user_id: String,
    pub document_index: usize,
    pub accepted: bool,
    pub outcomes: Vec<RuleResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkipEntry {
    pub sequence: u64,
    pub timestamp_ms: u64,
    pub user_id: String,
    pub document_index: usize,
    pub skipped: Vec<RuleResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RedistributionEntry {
    pub sequence: u64,
    pub timestamp_ms: u64,
    pub from_user: String,
    pub to_user: String,
    pub documents: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RevealEntry {
    pub sequence: u64,
    pub timestamp_ms: u64,
    pub user_id: String,
}

#[derive(Debug, Clone)]
pub struct CampaignRuntime {
    pub definition: Arc<CampaignDefinition>,
    pub annotators: Vec<UserIdentity>,
    pub manager: UserIdentity,
    pub token_secret: Vec<u8>,
    pub assignment: AssignmentState,
    pub quality: QualityLedger,
    /// Every record ever submitted, superseded ones included, in log order.
    pub records: Vec<AnnotationRecord>,
    active: BTreeMap<(String, usize, ModelId), usize>,
    pub rule_log: Vec<RuleLogEntry>,
    pub skips: Vec<SkipEntry>,
    pub redistributions: Vec<RedistributionEntry>,
    pub reveals: Vec<RevealEntry>,
    /// Accepted first-time submissions per annotator.
    pub submit_times: BTreeMap<String, Vec<u64>>,
    pub items_issued: usize,
    pub last_sequence: u64,
    last_timestamp: u64,
    pub created_at: u64,
}

fn replay_error(event: &StoredEvent, reason: impl Into<String>) -> StoreError {
    StoreError::Replay {
        path: None,
        sequence: event.sequence,
        reason: reason.into(),
    }
}

impl CampaignRuntime {
    /// Builds a campaign from its first two events.
    pub fn from_creation(added: &StoredEvent, links: &StoredEvent) -> Result<Self, StoreError> {
        let EventBody::CampaignAdded { definition } = &added.body else {
            return Err(replay_error(added, "log does not start with campaign_added"));
        };
        let EventBody::LinksGenerated {
            annotators,
            manager,
            token_secret,
        } = &links.body
        else {
            return Err(replay_error(links, "campaign_added is not followed by links_generated"));
        };
        let text = serde_json::to_string(definition).expect("JSON value serializes");
        let def = parse_campaign_str(&text).map_err(|e| replay_error(added, e.to_string()))?;
        if def.campaign_id != added.campaign_id {
            return Err(replay_error(added, "campaign id differs from the record's"));
        }
        if annotators.iter().any(|a| a.role != Role::Annotator) || manager.role != Role::Manager {
            return Err(replay_error(links, "unexpected roles"));
        }
        let ids: Vec<String> = annotators.iter().map(|a| a.user_id.clone()).collect();
        let assignment = AssignmentState::new(&def, &ids).map_err(|e| replay_error(links, e.to_string()))?;
        let secret = hex::decode(token_secret).map_err(|e| replay_error(links, e.to_string()))?;
        Ok(CampaignRuntime {
            quality: QualityLedger::new(def.info.attention_threshold),
            definition: Arc::new(def),
            annotators: annotators.clone(),
            manager: manager.clone(),
            token_secret: secret,
            assignment,
            records: Vec::new(),
            active: BTreeMap::new(),
            rule_log: Vec::new(),
            skips: Vec::new(),
            redistributions: Vec::new(),
            reveals: Vec::new(),
            submit_times: BTreeMap::new(),
            items_issued: 0,
            last_sequence: links.sequence,
            last_timestamp: added.timestamp_ms.max(links.timestamp_ms),
            created_at: added.timestamp_ms,
        })
    }

    /// Rebuilds a campaign from a whole log.
    pub fn replay(events: &[StoredEvent]) -> Result<Self, StoreError> {
        let [added, links, rest @ ..] = events else {
            return Err(StoreError::Replay {
                path: None,
                sequence: events.len() as u64 + 1,
                reason: "log ends before the campaign is fully created".into(),
            });
        };
        let mut runtime = Self::from_creation(added, links)?;
        for event in rest {
            runtime.apply(event)?;
        }
        Ok(runtime)
    }

    pub fn id(&self) -> &str {
        &self.definition.campaign_id
    }

    /// Latest event time, so clocks that step back never reorder the log.
    pub fn last_timestamp(&self) -> u64 {
        self.last_timestamp
    }

    pub fn is_annotator(&self, user: &str) -> bool {
        self.assignment.is_annotator(user)
    }

    /// Applies one event. The live path only appends events it has checked,
    /// so an error here means the log disagrees with the code.
    pub fn apply(&mut self, event: &StoredEvent) -> Result<(), StoreError> {
        if event.sequence != self.last_sequence + 1 {
            return Err(replay_error(event, format!("expected sequence {}", self.last_sequence + 1)));
        }
        let def = Arc::clone(&self.definition);
        let now = event.timestamp_ms;
        match &event.body {
            EventBody::CampaignAdded { .. } | EventBody::LinksGenerated { .. } => {
                return Err(replay_error(event, "campaign is already created"));
            }
            EventBody::ItemIssued {
                user_id,
                document_index,
                model_ids,
            } => {
                if !self.is_annotator(user_id) || *document_index >= def.documents.len() {
                    return Err(replay_error(event, "issue refers to an unknown annotator or document"));
                }
                self.assignment.apply_issue(
                    &Issue {
                        user_id: user_id.clone(),
                        document_index: *document_index,
                        model_ids: model_ids.clone(),
                    },
                    now,
                );
                self.items_issued += 1;
            }
            EventBody::AnnotationSubmitted {
                user_id,
                document_index,
                annotations,
                outcomes,
                redo,
            } => {
                let models: Vec<ModelId> = annotations.keys().cloned().collect();
                let kind = self
                    .assignment
                    .check_completion(&def, user_id, *document_index, &models, def.info.allow_redo)
                    .map_err(|e| replay_error(event, e.to_string()))?;
                if (kind == CompletionKind::Redo) != *redo {
                    return Err(replay_error(event, "redo flag disagrees with the state"));
                }
                let scores = annotations.iter().map(|(m, a)| (m.clone(), a.scores())).collect();
                self.assignment.apply_completion(user_id, *document_index, &scores, kind);
                for (model_id, a) in annotations {
                    let key = (user_id.clone(), *document_index, model_id.clone());
                    if let Some(&old) = self.active.get(&key) {
                        self.records[old].superseded_by = Some(event.sequence);
                    }
                    let mut actions = a.actions.clone();
                    actions.push(ActionEvent {
                        timestamp: now,
                        kind: ActionKind::Submit,
                        segment_index: None,
                        payload: Value::Null,
                    });
                    self.active.insert(key, self.records.len());
                    self.records.push(AnnotationRecord {
                        user_id: user_id.clone(),
                        document_index: *document_index,
                        model_id: model_id.clone(),
                        segments: a.segments.clone(),
                        comment: a.comment.clone(),
                        actions,
                        sequence: event.sequence,
                        submitted_at: now,
                        superseded_by: None,
                    });
                }
                self.rule_log.push(RuleLogEntry {
                    sequence: event.sequence,
                    timestamp_ms: now,
                    user_id: user_id.clone(),
                    document_index: *document_index,
                    accepted: true,
                    outcomes: outcomes.clone(),
                });
                if !redo {
                    self.quality.record_accepted(user_id, outcomes);
                    self.submit_times.entry(user_id.clone()).or_default().push(now);
                }
            }
            EventBody::RuleOutcome {
                user_id,
                document_index,
                outcomes,
                ..
            } => {
                if !self.is_annotator(user_id) {
                    return Err(replay_error(event, "unknown annotator"));
                }
                self.quality.record_blocked(user_id);
                self.rule_log.push(RuleLogEntry {
                    sequence: event.sequence,
                    timestamp_ms: now,
                    user_id: user_id.clone(),
                    document_index: *document_index,
                    accepted: false,
                    outcomes: outcomes.clone(),
                });
            }
            EventBody::TutorialSkip {
                user_id,
                document_index,
                skipped,
            } => {
                if !self.is_annotator(user_id) {
                    return Err(replay_error(event, "unknown annotator"));
                }
                self.quality.record_skip(user_id);
                self.skips.push(SkipEntry {
                    sequence: event.sequence,
                    timestamp_ms: now,
                    user_id: user_id.clone(),
                    document_index: *document_index,
                    skipped: skipped.clone(),
                });
            }
            EventBody::TasksRedistributed {
                from_user,
                to_user,
                start,
                end,
                documents,
            } => {
                let moved = self
                    .assignment
                    .redistribute(from_user, to_user, *start, *end)
                    .map_err(|e| replay_error(event, e.to_string()))?;
                if &moved != documents {
                    return Err(replay_error(event, "redistributed documents disagree with the state"));
                }
                self.redistributions.push(RedistributionEntry {
                    sequence: event.sequence,
                    timestamp_ms: now,
                    from_user: from_user.clone(),
                    to_user: to_user.clone(),
                    documents: moved,
                });
            }
            EventBody::ResultsRevealed { user_id } => self.reveals.push(RevealEntry {
                sequence: event.sequence,
                timestamp_ms: now,
                user_id: user_id.clone(),
            }),
        }
        self.last_sequence = event.sequence;
        self.last_timestamp = self.last_timestamp.max(now);
        Ok(())
    }

    pub fn active_records(&self) -> impl Iterator<Item = &AnnotationRecord> {
        self.records.iter().filter(|r| r.superseded_by.is_none())
    }

    /// Segment scores of all active records.
    pub fn observations(&self) -> Vec<ScoreObservation> {
        self.active_records()
            .flat_map(|r| {
                r.segments.iter().enumerate().map(move |(i, s)| ScoreObservation {
                    user_id: r.user_id.clone(),
                    document_index: r.document_index,
                    segment_index: i,
                    model_id: r.model_id.clone(),
                    score: s.score,
                })
            })
            .collect()
    }

    /// The full, deterministic export document.
    pub fn export(&self) -> Value {
        let def = &self.definition;
        let superseded: Vec<&AnnotationRecord> = self.records.iter().filter(|r| r.superseded_by.is_some()).collect();
        json!({
            "format": "pearmut-export/1",
            "campaign_id": def.campaign_id,
            "assignment": def.info.assignment,
            "protocol": def.info.protocol,
            "created_at": self.created_at,
            "last_sequence": self.last_sequence,
            "annotators": self.annotators.iter().map(|a| &a.user_id).collect::<Vec<_>>(),
            "campaign": def.to_json(),
            "records": self.active_records().collect::<Vec<_>>(),
            "superseded": superseded,
            "rule_outcomes": self.rule_log,
            "tutorial_skips": self.skips,
            "redistributions": self.redistributions,
            "results_revealed": self.reveals,
            "state": {
                "items_issued": self.items_issued,
                "assignment": self.assignment.snapshot(),
                "quality": self.quality,
                "submit_times": self.submit_times,
            },
        })
    }

    pub fn export_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.export()).expect("export serializes");
        s.push('\n');
        s
    }
}
