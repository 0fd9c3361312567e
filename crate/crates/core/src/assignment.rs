//! Which document (and which model outputs) an annotator sees next.
//!
//! Three strategies share one bookkeeping structure:
//! - task-based: every annotator walks a fixed, pre-assigned list;
//! - single-stream: uniform draws from the pool of unannotated documents;
//! - dynamic: ε-greedy sampling over models, concentrating the budget on the
//!   current top models after a per-model warm-up.
//!
//! Decisions are computed from an immutable view ([`AssignmentState::decide`])
//! and applied separately ([`AssignmentState::apply_issue`]) so the store can
//! log a decision before it becomes visible.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::campaign::{AssignmentMode, CampaignDefinition, DynamicParams, ModelId};

/// In-flight items older than this go back to the pool.
pub const IN_FLIGHT_TIMEOUT_MS: u64 = 30 * 60 * 1000;

/// Running mean used for ranking models that have no completed evaluation yet.
const UNSEEN_MEAN: f64 = 100.0;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum AssignmentError {
    #[error("unknown annotator `{0}`")]
    UnknownUser(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("document {document_index} was already submitted by `{user_id}`")]
    Duplicate { user_id: String, document_index: usize },
    #[error("document {document_index} is not assigned to `{user_id}`")]
    NotAssigned { user_id: String, document_index: usize },
    #[error("{0}")]
    Unsupported(String),
    #[error("invalid request: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Progress {
    pub done: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRef {
    pub document_index: usize,
    /// Models in display order.
    pub model_ids: Vec<ModelId>,
    pub progress: Progress,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Next {
    Item(ItemRef),
    Complete,
}

/// A new item handed to an annotator. Logged, then applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Issue {
    pub user_id: String,
    pub document_index: usize,
    pub model_ids: Vec<ModelId>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Decision {
    /// The annotator already holds an item; show it again.
    Existing(ItemRef),
    Issue(Issue),
    Complete,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ModelStats {
    /// Completed documents.
    pub documents: usize,
    /// Completed segment scores.
    pub n: usize,
    pub sum: f64,
}

impl ModelStats {
    pub fn mean(&self) -> Option<f64> {
        (self.n > 0).then(|| self.sum / self.n as f64)
    }

    fn ranking_mean(&self) -> f64 {
        self.mean().unwrap_or(UNSEEN_MEAN)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InFlight {
    pub user_id: String,
    pub issued_at: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Held {
    document_index: usize,
    model_ids: Vec<ModelId>,
    issued_at: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompletionKind {
    First,
    /// Re-annotation of a document the annotator already submitted.
    Redo,
}

#[derive(Debug, Clone)]
pub struct AssignmentState {
    mode: AssignmentMode,
    dynamic: Option<DynamicParams>,
    annotators: BTreeSet<String>,
    /// Scores per (document, model, annotator).
    completed: BTreeMap<(usize, ModelId, String), Vec<f64>>,
    /// Number of annotators who completed each (document, model).
    completed_pairs: BTreeMap<(usize, ModelId), usize>,
    in_flight: BTreeMap<(usize, ModelId), InFlight>,
    per_model_stats: BTreeMap<ModelId, ModelStats>,
    tasks: BTreeMap<String, Vec<usize>>,
    task_cursors: BTreeMap<String, usize>,
    current: BTreeMap<String, Held>,
    done: BTreeMap<String, usize>,
    docs_by_model: BTreeMap<ModelId, Vec<usize>>,
    total_pairs: usize,
}

impl AssignmentState {
    /// Fresh state; for task-based campaigns `annotators[i]` receives task `i`.
    pub fn new(def: &CampaignDefinition, annotators: &[String]) -> Result<Self, AssignmentError> {
        let mut tasks = BTreeMap::new();
        let mut task_cursors = BTreeMap::new();
        if let Some(def_tasks) = &def.tasks {
            if def_tasks.len() != annotators.len() {
                return Err(AssignmentError::Config(format!(
                    "{} annotators for {} tasks",
                    annotators.len(),
                    def_tasks.len()
                )));
            }
            for (user, task) in annotators.iter().zip(def_tasks) {
                tasks.insert(user.clone(), task.clone());
                task_cursors.insert(user.clone(), 0);
            }
        }
        let mut docs_by_model: BTreeMap<ModelId, Vec<usize>> = BTreeMap::new();
        let mut per_model_stats = BTreeMap::new();
        let mut total_pairs = 0;
        for (d, doc) in def.documents.iter().enumerate() {
            for m in doc.models() {
                per_model_stats.entry(m.clone()).or_insert_with(ModelStats::default);
                docs_by_model.entry(m).or_default().push(d);
                total_pairs += 1;
            }
        }
        Ok(AssignmentState {
            mode: def.info.assignment,
            dynamic: def.info.dynamic,
            annotators: annotators.iter().cloned().collect(),
            completed: BTreeMap::new(),
            completed_pairs: BTreeMap::new(),
            in_flight: BTreeMap::new(),
            per_model_stats,
            tasks,
            task_cursors,
            current: BTreeMap::new(),
            done: BTreeMap::new(),
            docs_by_model,
            total_pairs,
        })
    }

    pub fn mode(&self) -> AssignmentMode {
        self.mode
    }

    pub fn model_stats(&self) -> &BTreeMap<ModelId, ModelStats> {
        &self.per_model_stats
    }

    pub fn annotators(&self) -> impl Iterator<Item = &String> {
        self.annotators.iter()
    }

    pub fn is_annotator(&self, user: &str) -> bool {
        self.annotators.contains(user)
    }

    pub fn in_flight(&self) -> &BTreeMap<(usize, ModelId), InFlight> {
        &self.in_flight
    }

    /// Scores submitted for (document, model) by each annotator.
    pub fn completed(&self) -> impl Iterator<Item = (&(usize, ModelId, String), &Vec<f64>)> {
        self.completed.iter()
    }

    pub fn task(&self, user: &str) -> Option<&[usize]> {
        self.tasks.get(user).map(Vec::as_slice)
    }

    pub fn task_cursor(&self, user: &str) -> Option<usize> {
        self.task_cursors.get(user).copied()
    }

    /// The item an annotator currently holds, if any.
    pub fn current_item(&self, def: &CampaignDefinition, user: &str) -> Option<ItemRef> {
        self.current.get(user).map(|held| ItemRef {
            document_index: held.document_index,
            model_ids: held.model_ids.clone(),
            progress: self.progress(def, user),
        })
    }

    pub fn has_completed(&self, user: &str, document_index: usize, model: &str) -> bool {
        self.completed
            .contains_key(&(document_index, model.to_string(), user.to_string()))
    }

    fn pair_completed(&self, d: usize, m: &str) -> bool {
        self.completed_pairs
            .get(&(d, m.to_string()))
            .is_some_and(|&c| c > 0)
    }

    fn live_in_flight(&self, d: usize, m: &str, now: u64) -> Option<&InFlight> {
        self.in_flight
            .get(&(d, m.to_string()))
            .filter(|f| now.saturating_sub(f.issued_at) <= IN_FLIGHT_TIMEOUT_MS)
    }

    fn pair_free(&self, d: usize, m: &str, now: u64) -> bool {
        !self.pair_completed(d, m) && self.live_in_flight(d, m, now).is_none()
    }

    // ---- decisions ------------------------------------------------------

    /// Next item for `user`, without changing any state.
    pub fn decide<R: Rng + ?Sized>(
        &self,
        def: &CampaignDefinition,
        user: &str,
        now: u64,
        rng: &mut R,
    ) -> Result<Decision, AssignmentError> {
        if !self.annotators.contains(user) {
            return Err(AssignmentError::UnknownUser(user.to_string()));
        }
        if let Some(item) = self.current_item(def, user) {
            return Ok(Decision::Existing(item));
        }
        match self.mode {
            AssignmentMode::TaskBased => self.task_based_next(def, user),
            AssignmentMode::SingleStream => self.single_stream_next(def, user, now, rng),
            AssignmentMode::Dynamic => {
                let params = self
                    .dynamic
                    .ok_or_else(|| AssignmentError::Config("dynamic campaign without parameters".into()))?;
                self.dynamic_next(def, &params, user, now, rng)
            }
        }
    }

    /// Decides and applies in one step.
    pub fn next_item<R: Rng + ?Sized>(
        &mut self,
        def: &CampaignDefinition,
        user: &str,
        now: u64,
        rng: &mut R,
    ) -> Result<Next, AssignmentError> {
        match self.decide(def, user, now, rng)? {
            Decision::Existing(item) => Ok(Next::Item(item)),
            Decision::Complete => Ok(Next::Complete),
            Decision::Issue(issue) => {
                self.apply_issue(&issue, now);
                Ok(Next::Item(self.current_item(def, user).expect("issued item is held")))
            }
        }
    }

    /// The document at the annotator's task cursor.
    pub fn task_based_next(&self, def: &CampaignDefinition, user: &str) -> Result<Decision, AssignmentError> {
        let task = self
            .tasks
            .get(user)
            .ok_or_else(|| AssignmentError::UnknownUser(user.to_string()))?;
        let cursor = self.task_cursors.get(user).copied().unwrap_or(0);
        let Some(&d) = task.get(cursor) else {
            return Ok(Decision::Complete);
        };
        Ok(Decision::Issue(self.whole_document(def, user, d)))
    }

    fn whole_document(&self, def: &CampaignDefinition, user: &str, d: usize) -> Issue {
        let models = def.documents[d].models();
        Issue {
            user_id: user.to_string(),
            document_index: d,
            model_ids: def.display_order(d, user, &models),
        }
    }

    /// A uniformly random document that is neither completed nor in flight;
    /// when only in-flight documents remain, the stalest one is reissued.
    pub fn single_stream_next<R: Rng + ?Sized>(
        &self,
        def: &CampaignDefinition,
        user: &str,
        now: u64,
        rng: &mut R,
    ) -> Result<Decision, AssignmentError> {
        let mut free = Vec::new();
        let mut stalest: Option<(u64, usize)> = None;
        for (d, doc) in def.documents.iter().enumerate() {
            let models = doc.models();
            if models.iter().all(|m| self.pair_completed(d, m)) {
                continue;
            }
            let oldest_issue = models
                .iter()
                .filter(|m| !self.pair_completed(d, m))
                .filter_map(|m| self.live_in_flight(d, m, now))
                .map(|f| f.issued_at)
                .min();
            match oldest_issue {
                None => free.push(d),
                Some(at) => {
                    if stalest.is_none_or(|(best, _)| at < best) {
                        stalest = Some((at, d));
                    }
                }
            }
        }
        let d = if !free.is_empty() {
            free[rng.random_range(0..free.len())]
        } else if let Some((_, d)) = stalest {
            d
        } else {
            return Ok(Decision::Complete);
        };
        Ok(Decision::Issue(self.whole_document(def, user, d)))
    }

    /// Models that still have at least one (document, model) pair nobody completed.
    fn active_models(&self) -> Vec<ModelId> {
        self.docs_by_model
            .iter()
            .filter(|(m, docs)| docs.iter().any(|&d| !self.pair_completed(d, m)))
            .map(|(m, _)| m.clone())
            .collect()
    }

    /// `models` ordered by running mean (descending); ties go to fewer
    /// evaluations, then to the lexicographically smaller id.
    fn rank(&self, models: &[ModelId]) -> Vec<ModelId> {
        let mut ranked = models.to_vec();
        ranked.sort_by(|a, b| {
            let sa = self.per_model_stats.get(a).copied().unwrap_or_default();
            let sb = self.per_model_stats.get(b).copied().unwrap_or_default();
            sb.ranking_mean()
                .total_cmp(&sa.ranking_mean())
                .then(sa.n.cmp(&sb.n))
                .then(a.cmp(b))
        });
        ranked
    }

    fn under_sampled(&self, models: &[ModelId], first: usize) -> Vec<ModelId> {
        models
            .iter()
            .filter(|m| self.per_model_stats.get(*m).map_or(0, |s| s.documents) < first)
            .cloned()
            .collect()
    }

    /// The ε-greedy arm choice among models that still have work left:
    /// warm-up models first, then with probability `backoff` any model,
    /// otherwise one of the `top` models by running mean.
    pub fn choose_dynamic_model<R: Rng + ?Sized>(&self, params: &DynamicParams, rng: &mut R) -> Option<ModelId> {
        let active = self.active_models();
        if active.is_empty() {
            return None;
        }
        let warm_up = self.under_sampled(&active, params.first);
        if !warm_up.is_empty() {
            return Some(warm_up[rng.random_range(0..warm_up.len())].clone());
        }
        if rng.random::<f64>() < params.backoff {
            return Some(active[rng.random_range(0..active.len())].clone());
        }
        let ranked = self.rank(&active);
        let top = params.top.min(ranked.len());
        Some(ranked[rng.random_range(0..top)].clone())
    }

    pub fn dynamic_next<R: Rng + ?Sized>(
        &self,
        def: &CampaignDefinition,
        params: &DynamicParams,
        user: &str,
        now: u64,
        rng: &mut R,
    ) -> Result<Decision, AssignmentError> {
        let model_count = self.docs_by_model.len();
        if params.top > model_count {
            return Err(AssignmentError::Config(format!(
                "dynamic_top {} exceeds {model_count} models",
                params.top
            )));
        }
        if params.contrastive_models >= 2 {
            return self.dynamic_contrastive_next(def, params, user, now, rng);
        }
        let Some(model) = self.choose_dynamic_model(params, rng) else {
            return Ok(Decision::Complete);
        };
        let docs = &self.docs_by_model[&model];
        let free: Vec<usize> = docs
            .iter()
            .copied()
            .filter(|&d| self.pair_free(d, &model, now))
            .collect();
        let d = if !free.is_empty() {
            free[rng.random_range(0..free.len())]
        } else {
            // Every open pair of this model is in flight: reissue the stalest.
            docs.iter()
                .copied()
                .filter(|&d| !self.pair_completed(d, &model))
                .filter_map(|d| self.live_in_flight(d, &model, now).map(|f| (f.issued_at, d)))
                .min()
                .map(|(_, d)| d)
                .expect("active model has an open pair")
        };
        Ok(Decision::Issue(Issue {
            user_id: user.to_string(),
            document_index: d,
            model_ids: vec![model],
        }))
    }

    /// The `width` models whose running means are closest together: the
    /// contiguous window of the mean-sorted list with the smallest spread.
    /// Warm-up and backoff apply as for single-model dynamic assignment; a
    /// backoff draw picks a uniformly random window.
    pub fn dynamic_contrastive_select<R: Rng + ?Sized>(
        &self,
        params: &DynamicParams,
        width: usize,
        rng: &mut R,
    ) -> Result<Vec<ModelId>, AssignmentError> {
        let model_count = self.docs_by_model.len();
        if width > model_count {
            return Err(AssignmentError::Config(format!(
                "contrastive width {width} exceeds {model_count} models"
            )));
        }
        if width < 2 {
            return Err(AssignmentError::Config("contrastive width must be at least 2".into()));
        }
        let active = self.active_models();
        if active.len() <= width {
            return Ok(self.rank(&active));
        }
        let warm_up = self.under_sampled(&active, params.first);
        if !warm_up.is_empty() {
            let anchor = warm_up[rng.random_range(0..warm_up.len())].clone();
            let mut others: Vec<ModelId> = active.iter().filter(|m| **m != anchor).cloned().collect();
            others.shuffle(rng);
            let mut chosen = vec![anchor];
            chosen.extend(others.into_iter().take(width - 1));
            return Ok(self.rank(&chosen));
        }
        let ranked = self.rank(&active);
        let windows = ranked.len() - width + 1;
        let start = if rng.random::<f64>() < params.backoff {
            rng.random_range(0..windows)
        } else {
            let means: Vec<f64> = ranked
                .iter()
                .map(|m| self.per_model_stats[m].ranking_mean())
                .collect();
            (0..windows)
                .min_by(|&a, &b| {
                    let spread = |i: usize| means[i] - means[i + width - 1];
                    spread(a).total_cmp(&spread(b)).then(a.cmp(&b))
                })
                .expect("at least one window")
        };
        Ok(ranked[start..start + width].to_vec())
    }

    fn dynamic_contrastive_next<R: Rng + ?Sized>(
        &self,
        def: &CampaignDefinition,
        params: &DynamicParams,
        user: &str,
        now: u64,
        rng: &mut R,
    ) -> Result<Decision, AssignmentError> {
        let width = params.contrastive_models;
        let chosen = self.dynamic_contrastive_select(params, width, rng)?;
        if chosen.is_empty() {
            return Ok(Decision::Complete);
        }
        let holds_all = |d: usize| chosen.iter().all(|m| def.documents[d].has_model(m));
        let candidates: Vec<usize> = (0..def.documents.len()).filter(|&d| holds_all(d)).collect();

        let free: Vec<usize> = candidates
            .iter()
            .copied()
            .filter(|&d| chosen.iter().all(|m| self.pair_free(d, m, now)))
            .collect();
        let pick = if !free.is_empty() {
            Some(free[rng.random_range(0..free.len())])
        } else {
            // Documents with open pairs for this set, stalest in-flight first.
            candidates
                .iter()
                .copied()
                .filter(|&d| chosen.iter().any(|m| !self.pair_completed(d, m)))
                .map(|d| {
                    let oldest = chosen
                        .iter()
                        .filter_map(|m| self.live_in_flight(d, m, now))
                        .map(|f| f.issued_at)
                        .min()
                        .unwrap_or(0);
                    (oldest, d)
                })
                .min()
                .map(|(_, d)| d)
        };
        let (d, models) = match pick {
            Some(d) => (d, chosen),
            None => {
                // The chosen set is exhausted: fall back to any document with
                // open work and show its least-evaluated models.
                let open: Vec<usize> = (0..def.documents.len())
                    .filter(|&d| def.documents[d].models().iter().any(|m| self.pair_free(d, m, now)))
                    .collect();
                if open.is_empty() {
                    return Ok(Decision::Complete);
                }
                let d = open[rng.random_range(0..open.len())];
                let mut models = def.documents[d].models();
                models.sort_by_key(|m| (!self.pair_free(d, m, now), self.per_model_stats[m].n, m.clone()));
                models.truncate(width);
                (d, models)
            }
        };
        Ok(Decision::Issue(Issue {
            user_id: user.to_string(),
            document_index: d,
            model_ids: def.display_order(d, user, &models),
        }))
    }

    // ---- mutations --------------------------------------------------------

    /// Marks the issued pairs in flight and hands the item to the annotator.
    pub fn apply_issue(&mut self, issue: &Issue, issued_at: u64) {
        for m in &issue.model_ids {
            self.in_flight.insert(
                (issue.document_index, m.clone()),
                InFlight {
                    user_id: issue.user_id.clone(),
                    issued_at,
                },
            );
        }
        self.current.insert(
            issue.user_id.clone(),
            Held {
                document_index: issue.document_index,
                model_ids: issue.model_ids.clone(),
                issued_at,
            },
        );
    }

    /// Checks that `user` may submit `models` of `document_index` now.
    pub fn check_completion(
        &self,
        def: &CampaignDefinition,
        user: &str,
        document_index: usize,
        models: &[ModelId],
        allow_redo: bool,
    ) -> Result<CompletionKind, AssignmentError> {
        if !self.annotators.contains(user) {
            return Err(AssignmentError::UnknownUser(user.to_string()));
        }
        let doc = def
            .documents
            .get(document_index)
            .ok_or_else(|| AssignmentError::Invalid(format!("no document {document_index}")))?;
        if models.is_empty() || models.iter().any(|m| !doc.has_model(m)) {
            return Err(AssignmentError::Invalid(format!(
                "models {models:?} do not belong to document {document_index}"
            )));
        }
        let done_before: Vec<bool> = models
            .iter()
            .map(|m| self.has_completed(user, document_index, m))
            .collect();
        if done_before.iter().any(|&d| d) {
            if allow_redo && done_before.iter().all(|&d| d) {
                return Ok(CompletionKind::Redo);
            }
            return Err(AssignmentError::Duplicate {
                user_id: user.to_string(),
                document_index,
            });
        }
        let issued: Option<Vec<ModelId>> = match self.current.get(user) {
            Some(held) if held.document_index == document_index => Some(held.model_ids.clone()),
            _ if self.mode == AssignmentMode::TaskBased
                && self.tasks[user].get(self.task_cursors[user]) == Some(&document_index) =>
            {
                Some(doc.models())
            }
            _ => None,
        };
        match issued {
            Some(wanted) => {
                let wanted: BTreeSet<&ModelId> = wanted.iter().collect();
                let submitted: BTreeSet<&ModelId> = models.iter().collect();
                if submitted == wanted {
                    Ok(CompletionKind::First)
                } else {
                    Err(AssignmentError::Invalid(format!(
                        "submission must cover exactly the issued models of document {document_index}"
                    )))
                }
            }
            None => Err(AssignmentError::NotAssigned {
                user_id: user.to_string(),
                document_index,
            }),
        }
    }

    /// Moves a submitted item to `completed` and folds its segment scores
    /// into the per-model running means.
    pub fn record_completion(
        &mut self,
        def: &CampaignDefinition,
        user: &str,
        document_index: usize,
        scores: &BTreeMap<ModelId, Vec<f64>>,
        allow_redo: bool,
    ) -> Result<CompletionKind, AssignmentError> {
        let models: Vec<ModelId> = scores.keys().cloned().collect();
        let kind = self.check_completion(def, user, document_index, &models, allow_redo)?;
        let segments = def.documents[document_index].segments.len();
        for (m, s) in scores {
            if s.len() != segments {
                return Err(AssignmentError::Invalid(format!(
                    "model `{m}` has {} scores for {segments} segments",
                    s.len()
                )));
            }
            if s.iter().any(|v| !(0.0..=100.0).contains(v)) {
                return Err(AssignmentError::Invalid("scores must lie in [0, 100]".into()));
            }
        }
        self.apply_completion(user, document_index, scores, kind);
        Ok(kind)
    }

    /// Applies a completion that already passed [`Self::check_completion`].
    pub fn apply_completion(
        &mut self,
        user: &str,
        document_index: usize,
        scores: &BTreeMap<ModelId, Vec<f64>>,
        kind: CompletionKind,
    ) {
        for (m, s) in scores {
            let key = (document_index, m.clone(), user.to_string());
            let stats = self.per_model_stats.entry(m.clone()).or_default();
            if let Some(previous) = self.completed.get(&key) {
                stats.n -= previous.len();
                stats.sum -= previous.iter().sum::<f64>();
            } else {
                stats.documents += 1;
                *self.completed_pairs.entry((document_index, m.clone())).or_default() += 1;
            }
            stats.n += s.len();
            stats.sum += s.iter().sum::<f64>();
            self.completed.insert(key, s.clone());
            self.in_flight.remove(&(document_index, m.clone()));
        }
        if kind == CompletionKind::Redo {
            return;
        }
        if self
            .current
            .get(user)
            .is_some_and(|h| h.document_index == document_index)
        {
            self.current.remove(user);
        }
        if let (Some(task), Some(cursor)) = (self.tasks.get(user), self.task_cursors.get_mut(user)) {
            if task.get(*cursor) == Some(&document_index) {
                *cursor += 1;
            }
        }
        let units = match self.mode {
            AssignmentMode::Dynamic => scores.len(),
            _ => 1,
        };
        *self.done.entry(user.to_string()).or_default() += units;
    }

    pub fn check_redistribute(
        &self,
        from_user: &str,
        to_user: &str,
        start: usize,
        end: usize,
    ) -> Result<(), AssignmentError> {
        if self.mode != AssignmentMode::TaskBased {
            return Err(AssignmentError::Unsupported(format!(
                "redistribution needs a task-based campaign, this one is {}",
                self.mode.as_str()
            )));
        }
        for user in [from_user, to_user] {
            if !self.tasks.contains_key(user) {
                return Err(AssignmentError::UnknownUser(user.to_string()));
            }
        }
        if from_user == to_user {
            return Err(AssignmentError::Invalid("cannot redistribute to the same annotator".into()));
        }
        let len = self.tasks[from_user].len();
        if start >= end || end > len {
            return Err(AssignmentError::Invalid(format!(
                "range {start}..{end} is outside the annotator's {len} documents"
            )));
        }
        if start < self.task_cursors[from_user] {
            return Err(AssignmentError::Invalid(format!(
                "range {start}..{end} includes completed documents"
            )));
        }
        Ok(())
    }

    /// Moves task positions `start..end` of `from_user` to the end of
    /// `to_user`'s task.
    pub fn redistribute(
        &mut self,
        from_user: &str,
        to_user: &str,
        start: usize,
        end: usize,
    ) -> Result<Vec<usize>, AssignmentError> {
        self.check_redistribute(from_user, to_user, start, end)?;
        let moved: Vec<usize> = self
            .tasks
            .get_mut(from_user)
            .expect("checked")
            .drain(start..end)
            .collect();
        self.tasks
            .get_mut(to_user)
            .expect("checked")
            .extend(moved.iter().copied());
        if let Some(held) = self.current.get(from_user) {
            if moved.contains(&held.document_index) {
                let held = self.current.remove(from_user).expect("present");
                for m in held.model_ids {
                    let key = (held.document_index, m);
                    if self.in_flight.get(&key).is_some_and(|f| f.user_id == from_user) {
                        self.in_flight.remove(&key);
                    }
                }
            }
        }
        Ok(moved)
    }

    // ---- progress ---------------------------------------------------------

    pub fn progress(&self, def: &CampaignDefinition, user: &str) -> Progress {
        match self.mode {
            AssignmentMode::TaskBased => Progress {
                done: self.task_cursors.get(user).copied().unwrap_or(0),
                total: self.tasks.get(user).map_or(0, Vec::len),
            },
            AssignmentMode::SingleStream => Progress {
                done: self.done.get(user).copied().unwrap_or(0),
                total: def.documents.len(),
            },
            AssignmentMode::Dynamic => Progress {
                done: self.done.get(user).copied().unwrap_or(0),
                total: self.total_pairs,
            },
        }
    }

    /// Whole-campaign progress in the same units as [`Self::progress`].
    pub fn campaign_progress(&self, def: &CampaignDefinition) -> Progress {
        match self.mode {
            AssignmentMode::TaskBased => Progress {
                done: self.task_cursors.values().sum(),
                total: self.tasks.values().map(Vec::len).sum(),
            },
            AssignmentMode::SingleStream => Progress {
                done: def
                    .documents
                    .iter()
                    .enumerate()
                    .filter(|(d, doc)| doc.models().iter().all(|m| self.pair_completed(*d, m)))
                    .count(),
                total: def.documents.len(),
            },
            AssignmentMode::Dynamic => Progress {
                done: self.completed_pairs.values().filter(|&&c| c > 0).count(),
                total: self.total_pairs,
            },
        }
    }

    /// Whether the annotator has nothing left to do.
    pub fn is_complete_for(&self, user: &str) -> bool {
        if self.current.contains_key(user) {
            return false;
        }
        match self.mode {
            AssignmentMode::TaskBased => {
                let len = self.tasks.get(user).map_or(0, Vec::len);
                self.task_cursors.get(user).copied().unwrap_or(0) >= len
            }
            _ => self.completed_pairs.values().filter(|&&c| c > 0).count() == self.total_pairs,
        }
    }

    /// Every piece of bookkeeping as JSON, with deterministic ordering.
    pub fn snapshot(&self) -> Value {
        json!({
            "mode": self.mode.as_str(),
            "annotators": self.annotators,
            "completed": self.completed.iter().map(|((d, m, u), s)| json!([d, m, u, s])).collect::<Vec<_>>(),
            "in_flight": self.in_flight.iter().map(|((d, m), f)| json!([d, m, f.user_id, f.issued_at])).collect::<Vec<_>>(),
            "per_model_stats": self.per_model_stats.iter().map(|(m, s)| json!([m, s.documents, s.n, s.sum])).collect::<Vec<_>>(),
            "tasks": self.tasks,
            "task_cursors": self.task_cursors,
            "current": self.current.iter().map(|(u, h)| json!([u, h.document_index, h.model_ids, h.issued_at])).collect::<Vec<_>>(),
            "done": self.done,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::campaign::parse_campaign_str;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn users(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("user-{i}")).collect()
    }

    fn pooled(mode: &str, docs: usize, extra: &str) -> CampaignDefinition {
        let data: Vec<String> = (0..docs)
            .map(|d| format!(r#"[{{"src": "s{d}", "tgt": {{"m": "t{d}"}}}}]"#))
            .collect();
        parse_campaign_str(&format!(
            r#"{{"info": {{"assignment": "{mode}", "protocol": "DA", "users": 3 {extra}}},
               "campaign_id": "c", "data": [{}]}}"#,
            data.join(",")
        ))
        .unwrap()
    }

    /// One single-segment document per (model, copy).
    fn dynamic_campaign(models: &[&str], docs_per_model: usize, extra: &str) -> CampaignDefinition {
        let mut data = Vec::new();
        for m in models {
            for d in 0..docs_per_model {
                data.push(format!(r#"[{{"src": "s{d}", "tgt": {{"{m}": "t"}}}}]"#));
            }
        }
        parse_campaign_str(&format!(
            r#"{{"info": {{"assignment": "dynamic", "protocol": "DA", "users": 3 {extra}}},
               "campaign_id": "c", "data": [{}]}}"#,
            data.join(",")
        ))
        .unwrap()
    }

    fn task_campaign(tasks: &[usize]) -> CampaignDefinition {
        let data: Vec<String> = tasks
            .iter()
            .enumerate()
            .map(|(t, &n)| {
                let docs: Vec<String> = (0..n)
                    .map(|d| format!(r#"[{{"src": "t{t}d{d}", "tgt": {{"a": "x", "b": "y"}}}}]"#))
                    .collect();
                format!("[{}]", docs.join(","))
            })
            .collect();
        parse_campaign_str(&format!(
            r#"{{"info": {{"assignment": "task-based", "protocol": "DA"}},
               "campaign_id": "c", "data": [{}]}}"#,
            data.join(",")
        ))
        .unwrap()
    }

    fn complete(state: &mut AssignmentState, def: &CampaignDefinition, user: &str, item: &ItemRef, score: f64) {
        let segs = def.documents[item.document_index].segments.len();
        let scores = item
            .model_ids
            .iter()
            .map(|m| (m.clone(), vec![score; segs]))
            .collect();
        state
            .record_completion(def, user, item.document_index, &scores, false)
            .unwrap();
    }

    fn issue_and_complete(state: &mut AssignmentState, def: &CampaignDefinition, d: usize, m: &str, score: f64) {
        let issue = Issue {
            user_id: "user-0".into(),
            document_index: d,
            model_ids: vec![m.to_string()],
        };
        state.apply_issue(&issue, 0);
        let scores = [(m.to_string(), vec![score])].into_iter().collect();
        state.record_completion(def, "user-0", d, &scores, false).unwrap();
    }

    /// Dynamic campaign over A, B, C with the given means after `first` documents each.
    fn seeded_dynamic(means: [f64; 3], first: usize, extra: &str) -> (CampaignDefinition, AssignmentState) {
        let def = dynamic_campaign(&["A", "B", "C"], 60, extra);
        let mut state = AssignmentState::new(&def, &users(3)).unwrap();
        for (k, (m, mean)) in ["A", "B", "C"].iter().zip(means).enumerate() {
            for i in 0..first {
                issue_and_complete(&mut state, &def, k * 60 + i, m, mean);
            }
        }
        (def, state)
    }

    #[test]
    fn task_based_fresh_user_gets_first_document() {
        let def = task_campaign(&[9, 4]);
        let mut state = AssignmentState::new(&def, &users(2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        match state.next_item(&def, "user-0", 0, &mut rng).unwrap() {
            Next::Item(item) => {
                assert_eq!(item.document_index, 0);
                assert_eq!(item.progress, Progress { done: 0, total: 9 });
            }
            Next::Complete => panic!("fresh user"),
        }
    }

    #[test]
    fn task_based_exhausted_user_is_complete() {
        let def = task_campaign(&[9, 4]);
        let mut state = AssignmentState::new(&def, &users(2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut seen = Vec::new();
        while let Next::Item(item) = state.next_item(&def, "user-0", 0, &mut rng).unwrap() {
            seen.push(item.document_index);
            complete(&mut state, &def, "user-0", &item, 50.0);
        }
        assert_eq!(seen, (0..9).collect::<Vec<_>>());
        assert!(state.is_complete_for("user-0"));
        assert_eq!(state.progress(&def, "user-0"), Progress { done: 9, total: 9 });
    }

    #[test]
    fn task_based_users_stay_in_their_tasks() {
        let def = task_campaign(&[3, 3]);
        let mut state = AssignmentState::new(&def, &users(2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for (user, task) in [("user-0", 0..3), ("user-1", 3..6)] {
            while let Next::Item(item) = state.next_item(&def, user, 0, &mut rng).unwrap() {
                assert!(task.contains(&item.document_index));
                complete(&mut state, &def, user, &item, 50.0);
            }
        }
    }

    #[test]
    fn unknown_user_is_rejected() {
        let def = task_campaign(&[1]);
        let state = AssignmentState::new(&def, &users(1)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(
            state.decide(&def, "mallory", 0, &mut rng),
            Err(AssignmentError::UnknownUser("mallory".into()))
        );
    }

    #[test]
    fn cursor_only_advances_on_submission() {
        let def = task_campaign(&[3]);
        let mut state = AssignmentState::new(&def, &users(1)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..3 {
            let Next::Item(item) = state.next_item(&def, "user-0", 0, &mut rng).unwrap() else { panic!() };
            assert_eq!(item.document_index, 0);
        }
    }

    #[test]
    fn single_stream_singleton_pool() {
        let def = pooled("single-stream", 1, "");
        let mut state = AssignmentState::new(&def, &users(3)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let Next::Item(item) = state.next_item(&def, "user-0", 0, &mut rng).unwrap() else { panic!() };
        assert_eq!(item.document_index, 0);
        complete(&mut state, &def, "user-0", &item, 70.0);
        assert_eq!(state.next_item(&def, "user-1", 0, &mut rng).unwrap(), Next::Complete);
    }

    #[test]
    fn single_stream_uniform_over_fresh_pool() {
        let def = pooled("single-stream", 5, "");
        let fresh = AssignmentState::new(&def, &users(3)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut counts = [0usize; 5];
        let draws = 10_000;
        for _ in 0..draws {
            match fresh.single_stream_next(&def, "user-0", 0, &mut rng).unwrap() {
                Decision::Issue(issue) => counts[issue.document_index] += 1,
                other => panic!("{other:?}"),
            }
        }
        for c in counts {
            let freq = c as f64 / draws as f64;
            assert!((freq - 0.2).abs() <= 0.015, "{counts:?}");
        }
    }

    #[test]
    fn single_stream_reissues_stalest_in_flight() {
        let def = pooled("single-stream", 2, "");
        let mut state = AssignmentState::new(&def, &users(3)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let Next::Item(first) = state.next_item(&def, "user-0", 100, &mut rng).unwrap() else { panic!() };
        let Next::Item(second) = state.next_item(&def, "user-1", 200, &mut rng).unwrap() else { panic!() };
        assert_ne!(first.document_index, second.document_index);
        let Next::Item(third) = state.next_item(&def, "user-2", 300, &mut rng).unwrap() else { panic!() };
        assert_eq!(third.document_index, first.document_index);
        // Both holders may submit: the double annotation is kept.
        complete(&mut state, &def, "user-0", &first, 10.0);
        complete(&mut state, &def, "user-2", &third, 20.0);
        assert_eq!(state.model_stats()["m"].n, 2);
    }

    #[test]
    fn expired_in_flight_returns_to_pool() {
        let def = pooled("single-stream", 2, "");
        let mut state = AssignmentState::new(&def, &users(3)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let Next::Item(held) = state.next_item(&def, "user-0", 0, &mut rng).unwrap() else { panic!() };
        let later = IN_FLIGHT_TIMEOUT_MS + 1;
        let mut seen = BTreeSet::new();
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            if let Decision::Issue(i) = state.single_stream_next(&def, "user-1", later, &mut rng).unwrap() {
                seen.insert(i.document_index);
            }
        }
        assert!(seen.contains(&held.document_index));
        assert_eq!(seen.len(), 2);
    }

    #[test]
    fn record_completion_updates_running_mean() {
        let (_, mut state) = seeded_dynamic([90.0, 50.0, 50.0], 5, r#", "dynamic_top": 2"#);
        assert_eq!(state.model_stats()["A"].n, 5);
        assert_eq!(state.model_stats()["A"].mean(), Some(90.0));
        let issue = Issue {
            user_id: "user-1".into(),
            document_index: 10,
            model_ids: vec!["A".into()],
        };
        state.apply_issue(&issue, 0);
        // Three segment scores on a single-segment document would not fit, so
        // fold them in directly as one three-segment submission would.
        let scores = [("A".to_string(), vec![100.0, 100.0, 100.0])].into_iter().collect();
        state.apply_completion("user-1", 10, &scores, CompletionKind::First);
        let stats = state.model_stats()["A"];
        assert_eq!(stats.n, 8);
        assert_eq!(stats.mean(), Some(93.75));
    }

    #[test]
    fn first_score_sets_mean() {
        let def = dynamic_campaign(&["A"], 2, r#", "dynamic_top": 1"#);
        let mut state = AssignmentState::new(&def, &users(3)).unwrap();
        issue_and_complete(&mut state, &def, 0, "A", 50.0);
        assert_eq!(state.model_stats()["A"].n, 1);
        assert_eq!(state.model_stats()["A"].mean(), Some(50.0));
    }

    #[test]
    fn duplicate_submission_is_a_conflict() {
        let def = dynamic_campaign(&["A"], 2, r#", "dynamic_top": 1"#);
        let mut state = AssignmentState::new(&def, &users(3)).unwrap();
        issue_and_complete(&mut state, &def, 0, "A", 50.0);
        let before = state.snapshot();
        let scores = [("A".to_string(), vec![70.0])].into_iter().collect();
        let err = state.record_completion(&def, "user-0", 0, &scores, false).unwrap_err();
        assert!(matches!(err, AssignmentError::Duplicate { .. }));
        assert_eq!(state.snapshot(), before);
    }

    #[test]
    fn redo_supersedes_scores() {
        let def = dynamic_campaign(&["A"], 2, r#", "dynamic_top": 1"#);
        let mut state = AssignmentState::new(&def, &users(3)).unwrap();
        issue_and_complete(&mut state, &def, 0, "A", 50.0);
        let scores = [("A".to_string(), vec![70.0])].into_iter().collect();
        let kind = state.record_completion(&def, "user-0", 0, &scores, true).unwrap();
        assert_eq!(kind, CompletionKind::Redo);
        let stats = state.model_stats()["A"];
        assert_eq!((stats.documents, stats.n, stats.mean()), (1, 1, Some(70.0)));
        assert_eq!(state.progress(&def, "user-0").done, 1);
    }

    #[test]
    fn unassigned_submission_is_rejected() {
        let def = pooled("single-stream", 3, "");
        let mut state = AssignmentState::new(&def, &users(3)).unwrap();
        let scores = [("m".to_string(), vec![70.0])].into_iter().collect();
        let err = state.record_completion(&def, "user-0", 1, &scores, false).unwrap_err();
        assert!(matches!(err, AssignmentError::NotAssigned { .. }));
    }

    #[test]
    fn dynamic_exploits_top_two_without_backoff() {
        let (def, state) = seeded_dynamic([90.0, 49.0, 50.0], 5, r#", "dynamic_top": 2, "dynamic_first": 5"#);
        let params = def.info.dynamic.unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let m = state.choose_dynamic_model(&params, &mut rng).unwrap();
            assert!(m == "A" || m == "C", "{m}");
        }
    }

    #[test]
    fn full_backoff_is_uniform() {
        let (def, state) = seeded_dynamic(
            [90.0, 49.0, 50.0],
            5,
            r#", "dynamic_top": 2, "dynamic_first": 5, "dynamic_backoff": 1.0"#,
        );
        let params = def.info.dynamic.unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut counts = BTreeMap::new();
        let draws = 30_000;
        for _ in 0..draws {
            *counts.entry(state.choose_dynamic_model(&params, &mut rng).unwrap()).or_insert(0usize) += 1;
        }
        for (_, c) in counts {
            assert!((c as f64 / draws as f64 - 1.0 / 3.0).abs() < 0.01);
        }
    }

    #[test]
    fn warm_up_prefers_under_sampled_models() {
        let def = dynamic_campaign(&["A", "B", "C"], 10, r#", "dynamic_top": 1, "dynamic_first": 2"#);
        let mut state = AssignmentState::new(&def, &users(3)).unwrap();
        issue_and_complete(&mut state, &def, 0, "A", 90.0);
        issue_and_complete(&mut state, &def, 1, "A", 90.0);
        let params = def.info.dynamic.unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let m = state.choose_dynamic_model(&params, &mut rng).unwrap();
            assert_ne!(m, "A");
        }
    }

    #[test]
    fn in_flight_does_not_count_for_warm_up() {
        let def = dynamic_campaign(&["A", "B"], 10, r#", "dynamic_top": 1, "dynamic_first": 1"#);
        let mut state = AssignmentState::new(&def, &users(3)).unwrap();
        state.apply_issue(
            &Issue { user_id: "user-0".into(), document_index: 0, model_ids: vec!["A".into()] },
            0,
        );
        issue_and_complete(&mut state, &def, 10, "B", 10.0);
        let params = def.info.dynamic.unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert_eq!(state.choose_dynamic_model(&params, &mut rng).unwrap(), "A");
    }

    #[test]
    fn dynamic_issues_a_document_of_the_chosen_model() {
        let (def, mut state) = seeded_dynamic([90.0, 49.0, 50.0], 5, r#", "dynamic_top": 2, "dynamic_first": 5"#);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for i in 0..100 {
            let user = format!("user-{}", i % 3);
            if let Next::Item(item) = state.next_item(&def, &user, i as u64, &mut rng).unwrap() {
                let m = &item.model_ids[0];
                assert!(def.documents[item.document_index].has_model(m));
                complete(&mut state, &def, &user, &item, 60.0);
            }
        }
    }

    #[test]
    fn dynamic_campaign_completes() {
        let def = dynamic_campaign(&["A", "B"], 3, r#", "dynamic_top": 1, "dynamic_first": 1"#);
        let mut state = AssignmentState::new(&def, &users(3)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut count = 0;
        while let Next::Item(item) = state.next_item(&def, "user-0", 0, &mut rng).unwrap() {
            complete(&mut state, &def, "user-0", &item, 50.0);
            count += 1;
        }
        assert_eq!(count, 6);
        assert_eq!(state.campaign_progress(&def), Progress { done: 6, total: 6 });
    }

    fn contrastive_state(means: &[(&str, f64)], extra: &str) -> (CampaignDefinition, AssignmentState) {
        let models: Vec<&str> = means.iter().map(|(m, _)| *m).collect();
        let tgt: Vec<String> = models.iter().map(|m| format!(r#""{m}": "t""#)).collect();
        let data: Vec<String> = (0..20)
            .map(|d| format!(r#"[{{"src": "s{d}", "tgt": {{{}}}}}]"#, tgt.join(",")))
            .collect();
        let def = parse_campaign_str(&format!(
            r#"{{"info": {{"assignment": "dynamic", "protocol": "DA", "users": 3,
                 "dynamic_top": 2, "dynamic_contrastive_models": 2 {extra}}},
               "campaign_id": "c", "data": [{}]}}"#,
            data.join(",")
        ))
        .unwrap();
        let mut state = AssignmentState::new(&def, &users(3)).unwrap();
        for (d, (m, mean)) in means.iter().enumerate() {
            let scores = [(m.to_string(), vec![*mean])].into_iter().collect();
            state.apply_completion("user-0", d, &scores, CompletionKind::First);
        }
        (def, state)
    }

    /// Brute force over every subset of the given size.
    fn closest_subset(means: &[(&str, f64)], width: usize) -> Vec<String> {
        let n = means.len();
        let mut best: Option<(f64, Vec<String>)> = None;
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize != width {
                continue;
            }
            let chosen: Vec<&(&str, f64)> = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| &means[i]).collect();
            let hi = chosen.iter().map(|c| c.1).fold(f64::MIN, f64::max);
            let lo = chosen.iter().map(|c| c.1).fold(f64::MAX, f64::min);
            if best.as_ref().is_none_or(|(s, _)| hi - lo < *s) {
                let mut ids: Vec<String> = chosen.iter().map(|c| c.0.to_string()).collect();
                ids.sort();
                best = Some((hi - lo, ids));
            }
        }
        best.unwrap().1
    }

    #[test]
    fn contrastive_picks_closest_pair() {
        let means = [("A", 90.0), ("B", 65.0), ("C", 33.0)];
        assert_eq!(closest_subset(&means, 2), vec!["A", "B"]);
        let (def, state) = contrastive_state(&means, "");
        let params = def.info.dynamic.unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut got = state.dynamic_contrastive_select(&params, 2, &mut rng).unwrap();
        got.sort();
        assert_eq!(got, vec!["A", "B"]);
    }

    #[test]
    fn contrastive_full_width_returns_all() {
        let means = [("A", 90.0), ("B", 65.0), ("C", 33.0)];
        let (def, state) = contrastive_state(&means, "");
        let params = def.info.dynamic.unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut got = state.dynamic_contrastive_select(&params, 3, &mut rng).unwrap();
        got.sort();
        assert_eq!(got, vec!["A", "B", "C"]);
        assert!(matches!(
            state.dynamic_contrastive_select(&params, 4, &mut rng),
            Err(AssignmentError::Config(_))
        ));
    }

    #[test]
    fn contrastive_prefers_tied_pair() {
        let means = [("A", 95.0), ("B", 40.0), ("C", 40.0)];
        let (def, state) = contrastive_state(&means, "");
        let params = def.info.dynamic.unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut got = state.dynamic_contrastive_select(&params, 2, &mut rng).unwrap();
        got.sort();
        assert_eq!(got, vec!["B", "C"]);
    }

    #[test]
    fn contrastive_issue_shows_chosen_models() {
        let means = [("A", 90.0), ("B", 65.0), ("C", 33.0)];
        let (def, mut state) = contrastive_state(&means, "");
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let Next::Item(item) = state.next_item(&def, "user-1", 0, &mut rng).unwrap() else { panic!() };
        let mut models = item.model_ids.clone();
        models.sort();
        assert_eq!(models, vec!["A", "B"]);
    }

    #[test]
    fn redistribute_moves_remaining_documents() {
        let def = task_campaign(&[5, 2]);
        let mut state = AssignmentState::new(&def, &users(2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..2 {
            let Next::Item(item) = state.next_item(&def, "user-0", 0, &mut rng).unwrap() else { panic!() };
            complete(&mut state, &def, "user-0", &item, 50.0);
        }
        assert!(matches!(
            state.check_redistribute("user-0", "user-1", 1, 5),
            Err(AssignmentError::Invalid(_))
        ));
        let moved = state.redistribute("user-0", "user-1", 2, 5).unwrap();
        assert_eq!(moved, vec![2, 3, 4]);
        assert_eq!(state.progress(&def, "user-1").total, 5);
        assert!(state.is_complete_for("user-0"));
        assert_eq!(state.next_item(&def, "user-0", 0, &mut rng).unwrap(), Next::Complete);
    }

    #[test]
    fn redistribute_is_task_based_only() {
        let def = pooled("single-stream", 2, "");
        let state = AssignmentState::new(&def, &users(3)).unwrap();
        assert!(matches!(
            state.check_redistribute("user-0", "user-1", 0, 1),
            Err(AssignmentError::Unsupported(_))
        ));
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        #[derive(Debug, Clone)]
        enum Op {
            Next(usize),
            Submit(usize, u8),
            Wait(u64),
        }

        fn op() -> impl Strategy<Value = Op> {
            prop_oneof![
                (0..3usize).prop_map(Op::Next),
                (0..3usize, 0..=100u8).prop_map(|(u, s)| Op::Submit(u, s)),
                (0..IN_FLIGHT_TIMEOUT_MS / 2).prop_map(Op::Wait),
            ]
        }

        fn run(mode: &str, ops: &[Op], seed: u64) -> (CampaignDefinition, AssignmentState, Vec<Progress>) {
            let def = match mode {
                "dynamic" => dynamic_campaign(&["A", "B", "C"], 3, r#", "dynamic_top": 2, "dynamic_first": 1, "dynamic_backoff": 0.3"#),
                _ => pooled(mode, 6, ""),
            };
            let mut state = AssignmentState::new(&def, &users(3)).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut now = 0;
            let mut progress = Vec::new();
            for op in ops {
                match *op {
                    Op::Next(u) => {
                        let _ = state.next_item(&def, &format!("user-{u}"), now, &mut rng).unwrap();
                    }
                    Op::Submit(u, s) => {
                        let user = format!("user-{u}");
                        if let Some(item) = state.current_item(&def, &user) {
                            complete(&mut state, &def, &user, &item, s as f64);
                        }
                    }
                    Op::Wait(ms) => now += ms,
                }
                progress.extend((0..3).map(|u| state.progress(&def, &format!("user-{u}"))));
            }
            (def, state, progress)
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn pairs_partition_and_stats_match(mode in prop_oneof![Just("single-stream"), Just("dynamic")],
                                               ops in proptest::collection::vec(op(), 0..60),
                                               seed in any::<u64>()) {
                let (def, state, _) = run(mode, &ops, seed);
                for (d, doc) in def.documents.iter().enumerate() {
                    for m in doc.models() {
                        let completed = state.pair_completed(d, &m);
                        let flying = state.in_flight.contains_key(&(d, m.clone()));
                        prop_assert!(!(completed && flying));
                    }
                }
                for (m, stats) in state.model_stats() {
                    let n: usize = state.completed.iter().filter(|((_, mm, _), _)| mm == m).map(|(_, s)| s.len()).sum();
                    prop_assert_eq!(stats.n, n);
                    if let Some(mean) = stats.mean() {
                        prop_assert!((0.0..=100.0).contains(&mean));
                    }
                }
            }

            #[test]
            fn decisions_are_deterministic(ops in proptest::collection::vec(op(), 0..40), seed in any::<u64>()) {
                let (_, a, _) = run("dynamic", &ops, seed);
                let (_, b, _) = run("dynamic", &ops, seed);
                prop_assert_eq!(a.snapshot(), b.snapshot());
            }

            #[test]
            fn progress_never_decreases(ops in proptest::collection::vec(op(), 0..60), seed in any::<u64>()) {
                let (_, _, progress) = run("single-stream", &ops, seed);
                for u in 0..3 {
                    let series: Vec<usize> = progress.iter().skip(u).step_by(3).map(|p| p.done).collect();
                    prop_assert!(series.windows(2).all(|w| w[0] <= w[1]));
                }
            }
        }
    }
}
