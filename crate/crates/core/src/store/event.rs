use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::campaign::{ModelId, UserIdentity};
use crate::quality::RuleResult;
use crate::record::ModelAnnotation;

/// One record of a campaign log. Every event carries what is needed to apply
/// it, so a log replays without outside context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredEvent {
    pub sequence: u64,
    pub campaign_id: String,
    pub timestamp_ms: u64,
    #[serde(flatten)]
    pub body: EventBody,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventBody {
    CampaignAdded {
        /// The campaign file with defaults written out.
        definition: Value,
    },
    LinksGenerated {
        annotators: Vec<UserIdentity>,
        manager: UserIdentity,
        /// Hex key for completion-token digests.
        token_secret: String,
    },
    ItemIssued {
        user_id: String,
        document_index: usize,
        model_ids: Vec<ModelId>,
    },
    AnnotationSubmitted {
        user_id: String,
        document_index: usize,
        annotations: BTreeMap<ModelId, ModelAnnotation>,
        outcomes: Vec<RuleResult>,
        redo: bool,
    },
    /// A submission turned back by a failing tutorial.
    RuleOutcome {
        user_id: String,
        document_index: usize,
        outcomes: Vec<RuleResult>,
        warnings: Vec<String>,
    },
    TutorialSkip {
        user_id: String,
        document_index: usize,
        skipped: Vec<RuleResult>,
    },
    TasksRedistributed {
        from_user: String,
        to_user: String,
        start: usize,
        end: usize,
        documents: Vec<usize>,
    },
    ResultsRevealed {
        user_id: String,
    },
}

impl EventBody {
    pub fn kind(&self) -> &'static str {
        match self {
            EventBody::CampaignAdded { .. } => "campaign_added",
            EventBody::LinksGenerated { .. } => "links_generated",
            EventBody::ItemIssued { .. } => "item_issued",
            EventBody::AnnotationSubmitted { .. } => "annotation_submitted",
            EventBody::RuleOutcome { .. } => "rule_outcome",
            EventBody::TutorialSkip { .. } => "tutorial_skip",
            EventBody::TasksRedistributed { .. } => "tasks_redistributed",
            EventBody::ResultsRevealed { .. } => "results_revealed",
        }
    }
}
