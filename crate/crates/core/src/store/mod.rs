//! Durable campaign state.
//!
//! Every campaign has its own append-only log under the data directory. A
//! write encodes its events, appends them and syncs the file, and only then
//! applies them to the in-memory [`CampaignRuntime`]; readers work on that
//! in-memory state and never touch the disk. Mutations of one campaign are
//! serialized by its writer lock, which is held across decide → append →
//! apply so no two annotators can be handed the same item between the check
//! and the mark.

mod event;
mod log;
mod runtime;

use std::collections::{BTreeMap, HashMap};
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use parking_lot::{Mutex, RwLock};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use event::{EventBody, StoredEvent};
pub use log::{decode, encode, Decoded, FileLog, LogSink, MemoryLog, TornTail, HEADER_LEN};
pub use runtime::{CampaignRuntime, RedistributionEntry, RevealEntry, RuleLogEntry, SkipEntry};

use crate::analytics::{
    build_ranking, iaa_report, user_progress, AgreementReport, RankingReport, UserProgress, DEFAULT_ALPHA,
    DYNAMIC_BIAS_DISCLAIMER,
};
use crate::assignment::{AssignmentError, Decision, ItemRef, Progress};
use crate::campaign::{
    parse_campaign, AssignmentMode, CampaignDefinition, CampaignError, ModelId, Protocol, Role, UserIdentity,
};
use crate::quality::{completion_token, evaluate_submission, gate, Gate, Verdict};
use crate::record::{validate_annotation, AnnotationRecord, ModelAnnotation, RecordError};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error(transparent)]
    Campaign(#[from] CampaignError),
    #[error("campaign `{0}` already exists")]
    DuplicateCampaign(String),
    #[error("unknown or expired token")]
    UnknownToken,
    #[error("this link cannot be used for {0}")]
    Forbidden(&'static str),
    #[error("not found: {0}")]
    NotFound(String),
    #[error(transparent)]
    Assignment(#[from] AssignmentError),
    #[error("invalid submission at `{}`: {}", .0.path, .0.message)]
    Record(#[from] RecordError),
    #[error("I/O error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("corrupt log{}: record {sequence} at byte {offset}: {reason}", path_suffix(.path))]
    Corrupt {
        path: Option<PathBuf>,
        sequence: u64,
        offset: u64,
        reason: String,
    },
    #[error("log{} cannot be replayed at record {sequence}: {reason}", path_suffix(.path))]
    Replay {
        path: Option<PathBuf>,
        sequence: u64,
        reason: String,
    },
    #[error("{0} is locked by another process")]
    Locked(PathBuf),
    #[error("the store was opened read-only")]
    ReadOnly,
}

fn path_suffix(path: &Option<PathBuf>) -> String {
    path.as_ref().map(|p| format!(" {}", p.display())).unwrap_or_default()
}

impl StoreError {
    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        StoreError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn in_file(self, file: &Path) -> Self {
        match self {
            StoreError::Corrupt {
                sequence,
                offset,
                reason,
                ..
            } => StoreError::Corrupt {
                path: Some(file.to_path_buf()),
                sequence,
                offset,
                reason,
            },
            StoreError::Replay { sequence, reason, .. } => StoreError::Replay {
                path: Some(file.to_path_buf()),
                sequence,
                reason,
            },
            other => other,
        }
    }
}

pub trait Clock: Send + Sync {
    fn now_ms(&self) -> u64;
}

pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    }
}

/// A clock that only moves when told to.
#[derive(Default)]
pub struct ManualClock(AtomicU64);

impl ManualClock {
    pub fn new(start_ms: u64) -> Self {
        ManualClock(AtomicU64::new(start_ms))
    }

    pub fn set(&self, ms: u64) {
        self.0.store(ms, Ordering::SeqCst);
    }

    pub fn advance(&self, ms: u64) {
        self.0.fetch_add(ms, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now_ms(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }
}

/// Builds the log of a new campaign when the store has no data directory.
pub type SinkFactory = Arc<dyn Fn(&str) -> Box<dyn LogSink> + Send + Sync>;

pub struct StoreConfig {
    /// `None` keeps logs in memory.
    pub data_dir: Option<PathBuf>,
    /// Seed for assignment decisions; entropy from the OS when absent. Each
    /// campaign draws from its own stream derived from this seed.
    pub seed: Option<u64>,
    pub clock: Arc<dyn Clock>,
    pub sinks: Option<SinkFactory>,
}

impl StoreConfig {
    pub fn in_memory() -> Self {
        StoreConfig {
            data_dir: None,
            seed: None,
            clock: Arc::new(SystemClock),
            sinks: None,
        }
    }

    pub fn on_disk(dir: impl Into<PathBuf>) -> Self {
        StoreConfig {
            data_dir: Some(dir.into()),
            ..Self::in_memory()
        }
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn sinks(mut self, factory: SinkFactory) -> Self {
        self.sinks = Some(factory);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Session {
    pub campaign_id: String,
    pub user_id: String,
    pub role: Role,
}

struct Campaign {
    writer: Mutex<Option<Box<dyn LogSink>>>,
    state: RwLock<CampaignRuntime>,
    rng: Mutex<ChaCha8Rng>,
}

#[derive(Debug, Clone)]
pub struct AddedCampaign {
    pub definition: Arc<CampaignDefinition>,
    pub annotators: Vec<UserIdentity>,
    pub manager: UserIdentity,
}

#[derive(Debug, Clone)]
pub enum NextItem {
    Item {
        definition: Arc<CampaignDefinition>,
        user_id: String,
        item: ItemRef,
    },
    Complete {
        user_id: String,
        verdict: Verdict,
        token: String,
        progress: Progress,
    },
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct Submission {
    pub document_index: usize,
    pub annotations: BTreeMap<ModelId, ModelAnnotation>,
    #[serde(default)]
    pub skip_tutorial: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SubmitOutcome {
    Accepted {
        sequence: u64,
        redo: bool,
        progress: Progress,
        complete: bool,
    },
    Blocked {
        warnings: Vec<String>,
        can_skip: bool,
    },
}

/// Everything the manager dashboard shows. Deliberately free of model means
/// and rankings: those need an explicit reveal.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Dashboard {
    pub campaign_id: String,
    pub assignment: AssignmentMode,
    pub protocol: Protocol,
    pub progress: Progress,
    pub users: Vec<UserProgress>,
    pub items_issued: usize,
    pub records: Vec<AnnotationRecord>,
    pub superseded_records: usize,
    pub attention_threshold: f64,
    /// Key for checking completion tokens offline.
    pub token_secret: String,
    pub results_revealed: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub disclaimer: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Results {
    pub sequence: u64,
    pub ranking: RankingReport,
    pub agreement: AgreementReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Redistribution {
    pub documents: Vec<usize>,
    pub from: Progress,
    pub to: Progress,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CampaignSummary {
    pub campaign_id: String,
    pub assignment: AssignmentMode,
    pub protocol: Protocol,
    pub annotators: usize,
    pub documents: usize,
    pub progress: Progress,
    pub percent_complete: f64,
}

pub fn percent(p: Progress) -> f64 {
    if p.total == 0 {
        0.0
    } else {
        100.0 * p.done as f64 / p.total as f64
    }
}

pub struct Store {
    data_dir: Option<PathBuf>,
    read_only: bool,
    campaigns: RwLock<BTreeMap<String, Arc<Campaign>>>,
    tokens: RwLock<HashMap<String, Session>>,
    clock: Arc<dyn Clock>,
    seed: Option<u64>,
    sinks: Option<SinkFactory>,
    memory_logs: Mutex<BTreeMap<String, MemoryLog>>,
    /// Serializes campaign creation.
    adding: Mutex<()>,
}

impl Store {
    /// Replays every `*.log` in the data directory and takes their locks.
    pub fn open(config: StoreConfig) -> Result<Store, StoreError> {
        Self::load(config, false)
    }

    /// Replays without locking or repairing anything; writes fail.
    pub fn open_read_only(config: StoreConfig) -> Result<Store, StoreError> {
        Self::load(config, true)
    }

    fn load(config: StoreConfig, read_only: bool) -> Result<Store, StoreError> {
        let store = Store {
            data_dir: config.data_dir.clone(),
            read_only,
            campaigns: RwLock::new(BTreeMap::new()),
            tokens: RwLock::new(HashMap::new()),
            clock: config.clock,
            seed: config.seed,
            sinks: config.sinks,
            memory_logs: Mutex::new(BTreeMap::new()),
            adding: Mutex::new(()),
        };
        let Some(dir) = &config.data_dir else {
            return Ok(store);
        };
        if !dir.exists() {
            if read_only {
                return Ok(store);
            }
            std::fs::create_dir_all(dir).map_err(|e| StoreError::io(dir, e))?;
        }
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| StoreError::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "log"))
            .collect();
        paths.sort();
        for path in paths {
            let (sink, decoded): (Option<Box<dyn LogSink>>, Decoded) = if read_only {
                (None, FileLog::read(&path)?)
            } else {
                let (log, decoded) = FileLog::open(&path)?;
                (Some(Box::new(log)), decoded)
            };
            if decoded.events.len() < 2 {
                tracing::warn!(path = %path.display(), "skipping log of an unfinished campaign add");
                continue;
            }
            let runtime = CampaignRuntime::replay(&decoded.events).map_err(|e| e.in_file(&path))?;
            let expected = format!("{}.log", runtime.id());
            if path.file_name().is_none_or(|n| n.to_string_lossy() != expected) {
                return Err(StoreError::Replay {
                    path: Some(path.clone()),
                    sequence: 1,
                    reason: format!("campaign `{}` lives in a file not named {expected}", runtime.id()),
                });
            }
            store.install(runtime, sink)?;
        }
        Ok(store)
    }

    fn install(&self, runtime: CampaignRuntime, sink: Option<Box<dyn LogSink>>) -> Result<(), StoreError> {
        let mut tokens = self.tokens.write();
        let identities = runtime.annotators.iter().chain(std::iter::once(&runtime.manager));
        for id in identities.clone() {
            if tokens.contains_key(id.token.as_str()) {
                return Err(StoreError::Replay {
                    path: None,
                    sequence: 2,
                    reason: format!("token of `{}` is already in use", id.user_id),
                });
            }
        }
        for id in identities {
            tokens.insert(
                id.token.as_str().to_string(),
                Session {
                    campaign_id: runtime.id().to_string(),
                    user_id: id.user_id.clone(),
                    role: id.role,
                },
            );
        }
        let campaign_id = runtime.id().to_string();
        let rng = match self.seed {
            Some(seed) => {
                let digest = Sha256::new()
                    .chain_update(seed.to_le_bytes())
                    .chain_update(campaign_id.as_bytes())
                    .finalize();
                ChaCha8Rng::from_seed(digest.into())
            }
            None => ChaCha8Rng::from_os_rng(),
        };
        self.campaigns.write().insert(
            campaign_id,
            Arc::new(Campaign {
                writer: Mutex::new(sink),
                state: RwLock::new(runtime),
                rng: Mutex::new(rng),
            }),
        );
        Ok(())
    }

    pub fn data_dir(&self) -> Option<&Path> {
        self.data_dir.as_deref()
    }

    pub fn now_ms(&self) -> u64 {
        self.clock.now_ms()
    }

    pub fn campaign_ids(&self) -> Vec<String> {
        self.campaigns.read().keys().cloned().collect()
    }

    /// Bytes of an in-memory campaign log.
    pub fn memory_log(&self, campaign_id: &str) -> Option<Vec<u8>> {
        self.memory_logs.lock().get(campaign_id).map(MemoryLog::bytes)
    }

    fn campaign(&self, campaign_id: &str) -> Result<Arc<Campaign>, StoreError> {
        self.campaigns
            .read()
            .get(campaign_id)
            .cloned()
            .ok_or_else(|| StoreError::NotFound(format!("campaign `{campaign_id}`")))
    }

    /// Reads one campaign's in-memory state.
    pub fn with_runtime<T>(&self, campaign_id: &str, f: impl FnOnce(&CampaignRuntime) -> T) -> Result<T, StoreError> {
        let campaign = self.campaign(campaign_id)?;
        let state = campaign.state.read();
        Ok(f(&state))
    }

    pub fn session(&self, token: &str) -> Result<Session, StoreError> {
        self.tokens.read().get(token).cloned().ok_or(StoreError::UnknownToken)
    }

    fn resolve(&self, token: &str, role: Role, action: &'static str) -> Result<(Session, Arc<Campaign>), StoreError> {
        let session = self.session(token)?;
        if session.role != role {
            return Err(StoreError::Forbidden(action));
        }
        let campaign = self.campaign(&session.campaign_id)?;
        Ok((session, campaign))
    }

    /// Appends `bodies` as one write and applies them. Callers hold the
    /// campaign's writer lock and have validated every event.
    fn commit(
        &self,
        campaign: &Campaign,
        sink: &mut Option<Box<dyn LogSink>>,
        bodies: Vec<EventBody>,
    ) -> Result<Vec<u64>, StoreError> {
        let sink = sink.as_mut().ok_or(StoreError::ReadOnly)?;
        let (campaign_id, mut sequence, last_ts) = {
            let state = campaign.state.read();
            (state.id().to_string(), state.last_sequence, state.last_timestamp())
        };
        let timestamp_ms = self.clock.now_ms().max(last_ts);
        let events: Vec<StoredEvent> = bodies
            .into_iter()
            .map(|body| {
                sequence += 1;
                StoredEvent {
                    sequence,
                    campaign_id: campaign_id.clone(),
                    timestamp_ms,
                    body,
                }
            })
            .collect();
        let bytes: Vec<u8> = events.iter().flat_map(encode).collect();
        sink.append(&bytes).map_err(|e| StoreError::Io {
            path: self.log_path(&campaign_id),
            source: e,
        })?;
        let mut state = campaign.state.write();
        for event in &events {
            state.apply(event)?;
        }
        Ok(events.iter().map(|e| e.sequence).collect())
    }

    fn log_path(&self, campaign_id: &str) -> PathBuf {
        match &self.data_dir {
            Some(dir) => dir.join(format!("{campaign_id}.log")),
            None => PathBuf::from(format!("<memory>/{campaign_id}.log")),
        }
    }

    /// Parses, validates and persists a campaign file, and mints its links.
    pub fn add_campaign(&self, raw: &[u8]) -> Result<AddedCampaign, StoreError> {
        if self.read_only {
            return Err(StoreError::ReadOnly);
        }
        let def = parse_campaign(raw)?;
        let _adding = self.adding.lock();
        if self.campaigns.read().contains_key(&def.campaign_id) {
            return Err(StoreError::DuplicateCampaign(def.campaign_id));
        }
        let mut os = rand::rng();
        let (annotators, manager) = {
            let tokens = self.tokens.read();
            loop {
                let links = crate::campaign::generate_links_with(&def, "", &mut os);
                let fresh = links.all().all(|l| !tokens.contains_key(l.identity.token.as_str()));
                if fresh {
                    break (
                        links.annotators.into_iter().map(|l| l.identity).collect::<Vec<_>>(),
                        links.manager.identity,
                    );
                }
            }
        };
        let mut secret = [0u8; 32];
        os.fill_bytes(&mut secret);

        let now = self.clock.now_ms();
        let events = [
            StoredEvent {
                sequence: 1,
                campaign_id: def.campaign_id.clone(),
                timestamp_ms: now,
                body: EventBody::CampaignAdded {
                    definition: def.to_json(),
                },
            },
            StoredEvent {
                sequence: 2,
                campaign_id: def.campaign_id.clone(),
                timestamp_ms: now,
                body: EventBody::LinksGenerated {
                    annotators: annotators.clone(),
                    manager: manager.clone(),
                    token_secret: hex::encode(secret),
                },
            },
        ];
        let runtime = CampaignRuntime::from_creation(&events[0], &events[1])?;
        let bytes: Vec<u8> = events.iter().flat_map(encode).collect();
        let mut sink: Box<dyn LogSink> = match &self.data_dir {
            Some(dir) => {
                let path = dir.join(format!("{}.log", def.campaign_id));
                let (mut log, decoded) = FileLog::open(&path)?;
                if decoded.events.len() >= 2 {
                    return Err(StoreError::DuplicateCampaign(def.campaign_id));
                }
                if !decoded.events.is_empty() {
                    tracing::warn!(path = %path.display(), "overwriting log of an unfinished campaign add");
                    log.reset().map_err(|e| StoreError::io(&path, e))?;
                }
                Box::new(log)
            }
            None if self.sinks.is_some() => (self.sinks.as_ref().expect("checked"))(&def.campaign_id),
            None => {
                let log = MemoryLog::new();
                self.memory_logs.lock().insert(def.campaign_id.clone(), log.clone());
                Box::new(log)
            }
        };
        sink.append(&bytes)
            .map_err(|e| StoreError::io(&self.log_path(&def.campaign_id), e))?;
        let definition = Arc::clone(&runtime.definition);
        self.install(runtime, Some(sink))?;
        Ok(AddedCampaign {
            definition,
            annotators,
            manager,
        })
    }

    /// Annotator and manager identities of a campaign.
    pub fn identities(&self, campaign_id: &str) -> Result<(Vec<UserIdentity>, UserIdentity), StoreError> {
        self.with_runtime(campaign_id, |r| (r.annotators.clone(), r.manager.clone()))
    }

    pub fn next_item(&self, token: &str) -> Result<NextItem, StoreError> {
        let (session, campaign) = self.resolve(token, Role::Annotator, "annotation")?;
        let user = session.user_id;
        // Fast path: an item already held needs no write.
        {
            let state = campaign.state.read();
            if let Some(item) = state.assignment.current_item(&state.definition, &user) {
                return Ok(NextItem::Item {
                    definition: Arc::clone(&state.definition),
                    user_id: user,
                    item,
                });
            }
        }
        let mut writer = campaign.writer.lock();
        let decision = {
            let state = campaign.state.read();
            let now = self.clock.now_ms().max(state.last_timestamp());
            let mut rng = campaign.rng.lock();
            state.assignment.decide(&state.definition, &user, now, &mut *rng)?
        };
        match decision {
            Decision::Existing(item) => {
                let definition = Arc::clone(&campaign.state.read().definition);
                Ok(NextItem::Item {
                    definition,
                    user_id: user,
                    item,
                })
            }
            Decision::Complete => {
                let state = campaign.state.read();
                let verdict = state.quality.verdict(&user);
                Ok(NextItem::Complete {
                    token: completion_token(&state.token_secret, state.id(), &user, verdict),
                    progress: state.assignment.progress(&state.definition, &user),
                    user_id: user,
                    verdict,
                })
            }
            Decision::Issue(issue) => {
                self.commit(
                    &campaign,
                    &mut writer,
                    vec![EventBody::ItemIssued {
                        user_id: issue.user_id,
                        document_index: issue.document_index,
                        model_ids: issue.model_ids,
                    }],
                )?;
                let state = campaign.state.read();
                let item = state
                    .assignment
                    .current_item(&state.definition, &user)
                    .expect("issued item is held");
                Ok(NextItem::Item {
                    definition: Arc::clone(&state.definition),
                    user_id: user,
                    item,
                })
            }
        }
    }

    /// The item an annotator holds right now, if any.
    pub fn current_item(&self, token: &str) -> Result<Option<(Arc<CampaignDefinition>, ItemRef)>, StoreError> {
        let (session, campaign) = self.resolve(token, Role::Annotator, "annotation")?;
        let state = campaign.state.read();
        Ok(state
            .assignment
            .current_item(&state.definition, &session.user_id)
            .map(|item| (Arc::clone(&state.definition), item)))
    }

    /// Models of a document the annotator may submit, in display order: the
    /// held item, the next task document, or an already completed document
    /// that can be redone.
    pub fn submittable_models(&self, token: &str, document_index: usize) -> Result<Vec<ModelId>, StoreError> {
        let (session, campaign) = self.resolve(token, Role::Annotator, "annotation")?;
        let user = session.user_id.as_str();
        let state = campaign.state.read();
        let def = &state.definition;
        let assignment = &state.assignment;
        if let Some(held) = assignment.current_item(def, user).filter(|i| i.document_index == document_index) {
            return Ok(held.model_ids);
        }
        let doc = def.document(document_index).ok_or_else(|| {
            AssignmentError::Invalid(format!("no document {document_index}"))
        })?;
        let at_cursor = assignment
            .task(user)
            .zip(assignment.task_cursor(user))
            .is_some_and(|(task, cursor)| task.get(cursor) == Some(&document_index));
        let models: Vec<ModelId> = if at_cursor {
            doc.models()
        } else {
            doc.models()
                .into_iter()
                .filter(|m| assignment.has_completed(user, document_index, m))
                .collect()
        };
        if models.is_empty() {
            return Err(AssignmentError::NotAssigned {
                user_id: user.to_string(),
                document_index,
            }
            .into());
        }
        Ok(def.display_order(document_index, user, &models))
    }

    pub fn submit(&self, token: &str, mut submission: Submission) -> Result<SubmitOutcome, StoreError> {
        let (session, campaign) = self.resolve(token, Role::Annotator, "annotation")?;
        let user = session.user_id;
        let mut writer = campaign.writer.lock();
        let (bodies, accepted) = {
            let state = campaign.state.read();
            let def = &state.definition;
            let doc_index = submission.document_index;
            let models: Vec<ModelId> = submission.annotations.keys().cloned().collect();
            let kind = state
                .assignment
                .check_completion(def, &user, doc_index, &models, def.info.allow_redo)?;
            for (model, annotation) in submission.annotations.iter_mut() {
                validate_annotation(def, doc_index, model, annotation)?;
            }
            let results = evaluate_submission(&def.documents[doc_index], &submission.annotations);
            match gate(&results, submission.skip_tutorial) {
                Gate::Block { warnings, can_skip } => (
                    vec![EventBody::RuleOutcome {
                        user_id: user.clone(),
                        document_index: doc_index,
                        outcomes: results,
                        warnings: warnings.clone(),
                    }],
                    Err(SubmitOutcome::Blocked { warnings, can_skip }),
                ),
                Gate::Accept { skipped } => {
                    let mut bodies = Vec::new();
                    if !skipped.is_empty() {
                        bodies.push(EventBody::TutorialSkip {
                            user_id: user.clone(),
                            document_index: doc_index,
                            skipped,
                        });
                    }
                    let redo = kind == crate::assignment::CompletionKind::Redo;
                    bodies.push(EventBody::AnnotationSubmitted {
                        user_id: user.clone(),
                        document_index: doc_index,
                        annotations: std::mem::take(&mut submission.annotations),
                        outcomes: results,
                        redo,
                    });
                    (bodies, Ok(redo))
                }
            }
        };
        let sequences = self.commit(&campaign, &mut writer, bodies)?;
        match accepted {
            Err(blocked) => Ok(blocked),
            Ok(redo) => {
                let state = campaign.state.read();
                Ok(SubmitOutcome::Accepted {
                    sequence: *sequences.last().expect("one event"),
                    redo,
                    progress: state.assignment.progress(&state.definition, &user),
                    complete: state.assignment.is_complete_for(&user),
                })
            }
        }
    }

    pub fn dashboard(&self, token: &str) -> Result<Dashboard, StoreError> {
        let (session, campaign) = self.resolve(token, Role::Manager, "the dashboard")?;
        let state = campaign.state.read();
        Ok(dashboard_of(&state, &session.campaign_id))
    }

    /// Computes the ranking and logs that it was looked at.
    pub fn reveal_results(&self, token: &str) -> Result<Results, StoreError> {
        let (session, campaign) = self.resolve(token, Role::Manager, "results")?;
        let mut writer = campaign.writer.lock();
        let sequences = self.commit(
            &campaign,
            &mut writer,
            vec![EventBody::ResultsRevealed {
                user_id: session.user_id,
            }],
        )?;
        let state = campaign.state.read();
        let observations = state.observations();
        Ok(Results {
            sequence: sequences[0],
            ranking: build_ranking(&observations, DEFAULT_ALPHA, state.definition.info.assignment),
            agreement: iaa_report(&observations),
        })
    }

    pub fn redistribute(
        &self,
        token: &str,
        from_user: &str,
        to_user: &str,
        start: usize,
        end: usize,
    ) -> Result<Redistribution, StoreError> {
        let (_, campaign) = self.resolve(token, Role::Manager, "redistribution")?;
        let mut writer = campaign.writer.lock();
        let documents = {
            let state = campaign.state.read();
            state.assignment.check_redistribute(from_user, to_user, start, end)?;
            state.assignment.task(from_user).expect("checked")[start..end].to_vec()
        };
        self.commit(
            &campaign,
            &mut writer,
            vec![EventBody::TasksRedistributed {
                from_user: from_user.to_string(),
                to_user: to_user.to_string(),
                start,
                end,
                documents: documents.clone(),
            }],
        )?;
        let state = campaign.state.read();
        Ok(Redistribution {
            documents,
            from: state.assignment.progress(&state.definition, from_user),
            to: state.assignment.progress(&state.definition, to_user),
        })
    }

    pub fn export(&self, token: &str) -> Result<String, StoreError> {
        let (session, _) = self.resolve(token, Role::Manager, "exports")?;
        self.export_campaign(&session.campaign_id)
    }

    pub fn export_campaign(&self, campaign_id: &str) -> Result<String, StoreError> {
        self.with_runtime(campaign_id, CampaignRuntime::export_string)
    }

    pub fn list(&self) -> Vec<CampaignSummary> {
        let campaigns: Vec<Arc<Campaign>> = self.campaigns.read().values().cloned().collect();
        campaigns
            .iter()
            .map(|c| {
                let state = c.state.read();
                let def = &state.definition;
                let progress = state.assignment.campaign_progress(def);
                CampaignSummary {
                    campaign_id: def.campaign_id.clone(),
                    assignment: def.info.assignment,
                    protocol: def.info.protocol,
                    annotators: state.annotators.len(),
                    documents: def.documents.len(),
                    progress,
                    percent_complete: percent(progress),
                }
            })
            .collect()
    }
}

fn dashboard_of(state: &CampaignRuntime, campaign_id: &str) -> Dashboard {
    let def = &state.definition;
    let users = state
        .annotators
        .iter()
        .map(|a| {
            let id = &a.user_id;
            user_progress(
                id,
                state.assignment.progress(def, id),
                state.submit_times.get(id).map(Vec::as_slice).unwrap_or(&[]),
                state.quality.user(id),
                state.assignment.is_complete_for(id),
            )
        })
        .collect();
    Dashboard {
        campaign_id: campaign_id.to_string(),
        assignment: def.info.assignment,
        protocol: def.info.protocol,
        progress: state.assignment.campaign_progress(def),
        users,
        items_issued: state.items_issued,
        records: state.active_records().cloned().collect(),
        superseded_records: state.records.iter().filter(|r| r.superseded_by.is_some()).count(),
        attention_threshold: state.quality.threshold,
        token_secret: hex::encode(&state.token_secret),
        results_revealed: state.reveals.len(),
        disclaimer: (def.info.assignment == AssignmentMode::Dynamic).then(|| DYNAMIC_BIAS_DISCLAIMER.to_string()),
    }
}

/// Replays one campaign log from raw bytes, tolerating a torn tail.
pub fn replay(bytes: &[u8]) -> Result<(Option<CampaignRuntime>, Option<TornTail>), StoreError> {
    let decoded = decode(bytes)?;
    if decoded.events.is_empty() {
        return Ok((None, decoded.torn));
    }
    let runtime = CampaignRuntime::replay(&decoded.events)?;
    Ok((Some(runtime), decoded.torn))
}
