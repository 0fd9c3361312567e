//! Tutorials and attention checks.
//!
//! A validation rule with a `warning` is a tutorial: a failing submission is
//! turned back with the warning until it satisfies the rule (or the annotator
//! skips, when `allow_skip` is set). A rule without a warning is an attention
//! check: it is evaluated and counted, and the annotator never learns about it.

use std::collections::BTreeMap;

use hmac::{Hmac, Mac};
use serde::{Deserialize, Serialize};
use sha2::Sha256;

use crate::campaign::{Document, ErrorSpan, ExpectedSpan, ModelId, ValidationRule};
use crate::record::ModelAnnotation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    ScoreRange,
    ExpectedSpan,
    ScoreGreaterthan,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleOutcome {
    pub passed: bool,
    pub blocking: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
    pub allow_skip: bool,
    pub failed_conditions: Vec<Condition>,
}

/// A rule outcome located in a submission.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleResult {
    pub model_id: ModelId,
    pub segment_index: usize,
    pub rule_index: usize,
    #[serde(flatten)]
    pub outcome: RuleOutcome,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum QualityError {
    #[error("cannot compare against `{0}`: no score submitted for it")]
    MissingComparator(ModelId),
}

/// True when some submitted span starts and ends inside the expected ranges
/// with the expected severity. Extra spans are ignored.
pub fn match_expected_span(expected: &ExpectedSpan, spans: &[ErrorSpan]) -> bool {
    let (s_lo, s_hi) = expected.start_range;
    let (e_lo, e_hi) = expected.end_range;
    spans.iter().any(|s| {
        (s_lo..=s_hi).contains(&s.start_i) && (e_lo..=e_hi).contains(&s.end_i) && s.severity == expected.severity
    })
}

pub fn evaluate_rule(
    rule: &ValidationRule,
    score: f64,
    spans: &[ErrorSpan],
    comparator_scores: &BTreeMap<ModelId, f64>,
) -> Result<RuleOutcome, QualityError> {
    let mut failed = Vec::new();
    if rule.score.as_ref().is_some_and(|r| !r.contains(score)) {
        failed.push(Condition::ScoreRange);
    }
    if !rule.error_spans.iter().all(|e| match_expected_span(e, spans)) {
        failed.push(Condition::ExpectedSpan);
    }
    if let Some(other) = &rule.score_greaterthan {
        let theirs = comparator_scores
            .get(other)
            .ok_or_else(|| QualityError::MissingComparator(other.clone()))?;
        if score <= *theirs {
            failed.push(Condition::ScoreGreaterthan);
        }
    }
    Ok(RuleOutcome {
        passed: failed.is_empty(),
        blocking: rule.is_blocking(),
        warning: rule.warning.clone(),
        allow_skip: rule.allow_skip,
        failed_conditions: failed,
    })
}

/// Evaluates every rule attached to the submitted models of `doc`.
///
/// `score_greaterthan` compares against the other model's score on the same
/// segment. Rules whose comparator was not part of this submission (a
/// dynamic campaign may show one output at a time) cannot be adjudicated and
/// are left out.
pub fn evaluate_submission(doc: &Document, submitted: &BTreeMap<ModelId, ModelAnnotation>) -> Vec<RuleResult> {
    let mut results = Vec::new();
    for (segment_index, item) in doc.segments.iter().enumerate() {
        let scores: BTreeMap<ModelId, f64> = submitted
            .iter()
            .filter_map(|(m, a)| a.segments.get(segment_index).map(|s| (m.clone(), s.score)))
            .collect();
        for (model_id, rules) in &item.validation {
            let Some(seg) = submitted.get(model_id).and_then(|a| a.segments.get(segment_index)) else {
                continue;
            };
            for (rule_index, rule) in rules.iter().enumerate() {
                match evaluate_rule(rule, seg.score, &seg.error_spans, &scores) {
                    Ok(outcome) => results.push(RuleResult {
                        model_id: model_id.clone(),
                        segment_index,
                        rule_index,
                        outcome,
                    }),
                    Err(QualityError::MissingComparator(_)) => {}
                }
            }
        }
    }
    results
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Gate {
    /// The submission goes through; `skipped` lists failing tutorials the
    /// annotator chose to skip.
    Accept { skipped: Vec<RuleResult> },
    Block { warnings: Vec<String>, can_skip: bool },
}

/// Decides whether failing tutorials stop the submission.
pub fn gate(results: &[RuleResult], skip_requested: bool) -> Gate {
    let failing: Vec<&RuleResult> = results
        .iter()
        .filter(|r| r.outcome.blocking && !r.outcome.passed)
        .collect();
    if failing.is_empty() {
        return Gate::Accept { skipped: Vec::new() };
    }
    let can_skip = failing.iter().all(|r| r.outcome.allow_skip);
    if skip_requested && can_skip {
        return Gate::Accept {
            skipped: failing.into_iter().cloned().collect(),
        };
    }
    let mut warnings: Vec<String> = Vec::new();
    for r in failing {
        let w = r.outcome.warning.clone().unwrap_or_default();
        if !warnings.contains(&w) {
            warnings.push(w);
        }
    }
    Gate::Block { warnings, can_skip }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Accept,
    Reject,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Accept => "accept",
            Verdict::Reject => "reject",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct UserQuality {
    pub checks_seen: usize,
    pub checks_passed: usize,
    pub tutorial_attempts: usize,
    pub tutorial_failures: usize,
    pub tutorial_skips: usize,
}

impl UserQuality {
    pub fn pass_rate(&self) -> Option<f64> {
        (self.checks_seen > 0).then(|| self.checks_passed as f64 / self.checks_seen as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityLedger {
    pub threshold: f64,
    pub users: BTreeMap<String, UserQuality>,
}

impl QualityLedger {
    pub fn new(threshold: f64) -> Self {
        QualityLedger {
            threshold,
            users: BTreeMap::new(),
        }
    }

    pub fn user(&self, user: &str) -> UserQuality {
        self.users.get(user).copied().unwrap_or_default()
    }

    /// A submission turned back by a tutorial.
    pub fn record_blocked(&mut self, user: &str) {
        let q = self.users.entry(user.to_string()).or_default();
        q.tutorial_attempts += 1;
        q.tutorial_failures += 1;
    }

    /// An accepted submission. Only attention checks (non-blocking rules)
    /// feed the pass rate.
    pub fn record_accepted(&mut self, user: &str, results: &[RuleResult]) {
        let q = self.users.entry(user.to_string()).or_default();
        if results.iter().any(|r| r.outcome.blocking) {
            q.tutorial_attempts += 1;
        }
        for r in results.iter().filter(|r| !r.outcome.blocking) {
            q.checks_seen += 1;
            q.checks_passed += usize::from(r.outcome.passed);
        }
    }

    pub fn record_skip(&mut self, user: &str) {
        self.users.entry(user.to_string()).or_default().tutorial_skips += 1;
    }

    pub fn verdict(&self, user: &str) -> Verdict {
        match self.user(user).pass_rate() {
            Some(rate) if rate < self.threshold => Verdict::Reject,
            _ => Verdict::Accept,
        }
    }
}

/// Keyed digest of (campaign, user, verdict): a manager holding the campaign
/// secret can recompute it offline to check a pasted token.
pub fn completion_token(secret: &[u8], campaign_id: &str, user_id: &str, verdict: Verdict) -> String {
    let mut mac = Hmac::<Sha256>::new_from_slice(secret).expect("HMAC accepts any key length");
    for part in [campaign_id, user_id, verdict.as_str()] {
        mac.update(part.as_bytes());
        mac.update(&[0]);
    }
    hex::encode(&mac.finalize().into_bytes()[..16])
}

pub fn verify_completion_token(secret: &[u8], campaign_id: &str, user_id: &str, token: &str) -> Option<Verdict> {
    [Verdict::Accept, Verdict::Reject]
        .into_iter()
        .find(|&v| completion_token(secret, campaign_id, user_id, v) == token)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::campaign::{parse_campaign_str, ScoreRange, Severity};
    use crate::record::SegmentAnnotation;

    fn tutorial_rule() -> ValidationRule {
        ValidationRule {
            warning: Some("Please set score between 70-80.".into()),
            score: Some(ScoreRange { min: 70.0, max: 80.0 }),
            error_spans: vec![ExpectedSpan {
                start_range: (0, 2),
                end_range: (4, 8),
                severity: Severity::Minor,
            }],
            score_greaterthan: None,
            allow_skip: true,
        }
    }

    fn none() -> BTreeMap<ModelId, f64> {
        BTreeMap::new()
    }

    #[test]
    fn tutorial_passes_with_matching_span() {
        let out = evaluate_rule(&tutorial_rule(), 75.0, &[ErrorSpan::new(1, 5, Severity::Minor)], &none()).unwrap();
        assert!(out.passed);
        assert!(out.blocking);
        assert!(out.failed_conditions.is_empty());
    }

    #[test]
    fn tutorial_fails_on_score() {
        let out = evaluate_rule(&tutorial_rule(), 50.0, &[ErrorSpan::new(1, 5, Severity::Minor)], &none()).unwrap();
        assert!(!out.passed);
        assert_eq!(out.failed_conditions, vec![Condition::ScoreRange]);
        assert_eq!(out.warning.as_deref(), Some("Please set score between 70-80."));
    }

    #[test]
    fn span_matching() {
        let e = &tutorial_rule().error_spans[0];
        assert!(match_expected_span(e, &[ErrorSpan::new(1, 5, Severity::Minor)]));
        assert!(!match_expected_span(e, &[ErrorSpan::new(3, 5, Severity::Minor)]));
        assert!(!match_expected_span(e, &[ErrorSpan::new(1, 5, Severity::Major)]));
        assert!(!match_expected_span(e, &[]));
        assert!(match_expected_span(
            e,
            &[ErrorSpan::new(10, 12, Severity::Major), ErrorSpan::new(2, 8, Severity::Minor)]
        ));
    }

    #[test]
    fn score_greaterthan_is_strict() {
        let rule = ValidationRule {
            warning: Some("Rate B above A.".into()),
            score: Some(ScoreRange { min: 70.0, max: 90.0 }),
            error_spans: vec![],
            score_greaterthan: Some("A".into()),
            allow_skip: false,
        };
        let cmp = |a: f64| [("A".to_string(), a)].into_iter().collect::<BTreeMap<_, _>>();
        assert!(evaluate_rule(&rule, 80.0, &[], &cmp(30.0)).unwrap().passed);
        let out = evaluate_rule(&rule, 80.0, &[], &cmp(85.0)).unwrap();
        assert_eq!(out.failed_conditions, vec![Condition::ScoreGreaterthan]);
        assert!(!evaluate_rule(&rule, 80.0, &[], &cmp(80.0)).unwrap().passed);
        assert_eq!(
            evaluate_rule(&rule, 80.0, &[], &none()),
            Err(QualityError::MissingComparator("A".into()))
        );
    }

    fn contrastive_doc() -> Document {
        let def = parse_campaign_str(
            r#"{"info": {"assignment": "single-stream", "protocol": "ESA", "users": 1},
                "campaign_id": "c", "data": [[{
                "src": "Rain is expected tomorrow.",
                "tgt": {"A": "Morgen Regen Sonne.", "B": "Morgen wird Regen erwartet."},
                "validation": {
                  "A": [{"warning": "Output A is flawed, rate it 20 to 40.", "score": [20, 40]}],
                  "B": [{"warning": "Rate B above A.", "score": [70, 90], "score_greaterthan": "A"},
                        {"score": [50, 100]}]
                }}]]}"#,
        )
        .unwrap();
        def.documents[0].clone()
    }

    fn submit(a: f64, b: f64) -> BTreeMap<ModelId, ModelAnnotation> {
        [("A", a), ("B", b)]
            .into_iter()
            .map(|(m, s)| {
                (
                    m.to_string(),
                    ModelAnnotation {
                        segments: vec![SegmentAnnotation::scored(s)],
                        comment: None,
                        actions: vec![],
                    },
                )
            })
            .collect()
    }

    #[test]
    fn contrastive_submission_gate() {
        let doc = contrastive_doc();
        let ok = evaluate_submission(&doc, &submit(30.0, 80.0));
        assert_eq!(ok.len(), 3);
        assert_eq!(gate(&ok, false), Gate::Accept { skipped: vec![] });

        let bad = evaluate_submission(&doc, &submit(30.0, 20.0));
        match gate(&bad, true) {
            Gate::Block { warnings, can_skip } => {
                assert_eq!(warnings, vec!["Rate B above A."]);
                assert!(!can_skip);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn silent_failures_never_block() {
        let doc = contrastive_doc();
        // B=75 fails nothing blocking; the silent [50,100] rule passes.
        let results = evaluate_submission(&doc, &submit(30.0, 75.0));
        assert!(matches!(gate(&results, false), Gate::Accept { .. }));
        let silent: Vec<_> = results.iter().filter(|r| !r.outcome.blocking).collect();
        assert_eq!(silent.len(), 1);
        assert!(silent[0].outcome.warning.is_none());
    }

    #[test]
    fn skip_needs_allow_skip() {
        let results = vec![RuleResult {
            model_id: "m".into(),
            segment_index: 0,
            rule_index: 0,
            outcome: evaluate_rule(&tutorial_rule(), 10.0, &[], &none()).unwrap(),
        }];
        assert!(matches!(gate(&results, false), Gate::Block { can_skip: true, .. }));
        match gate(&results, true) {
            Gate::Accept { skipped } => assert_eq!(skipped.len(), 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_comparator_rules_are_left_out() {
        let doc = contrastive_doc();
        let mut only_b = submit(0.0, 80.0);
        only_b.remove("A");
        let results = evaluate_submission(&doc, &only_b);
        assert_eq!(results.len(), 1);
        assert!(!results[0].outcome.blocking);
    }

    fn ledger_with(seen: usize, passed: usize) -> QualityLedger {
        let mut ledger = QualityLedger::new(0.8);
        ledger.users.insert(
            "u".into(),
            UserQuality {
                checks_seen: seen,
                checks_passed: passed,
                ..UserQuality::default()
            },
        );
        ledger
    }

    #[test]
    fn verdict_threshold() {
        assert_eq!(ledger_with(5, 5).verdict("u"), Verdict::Accept);
        assert_eq!(ledger_with(5, 4).verdict("u"), Verdict::Accept);
        assert_eq!(ledger_with(5, 3).verdict("u"), Verdict::Reject);
        assert_eq!(ledger_with(5, 3).user("u").pass_rate(), Some(0.6));
        assert_eq!(ledger_with(0, 0).verdict("u"), Verdict::Accept);
        assert_eq!(QualityLedger::new(0.8).verdict("nobody"), Verdict::Accept);
    }

    #[test]
    fn ledger_counts_only_silent_rules() {
        let doc = contrastive_doc();
        let mut ledger = QualityLedger::new(0.8);
        ledger.record_blocked("u");
        let results = evaluate_submission(&doc, &submit(30.0, 40.0));
        ledger.record_accepted("u", &results);
        let q = ledger.user("u");
        assert_eq!((q.checks_seen, q.checks_passed), (1, 0));
        assert_eq!((q.tutorial_attempts, q.tutorial_failures), (2, 1));
    }

    #[test]
    fn tokens_are_keyed_and_verifiable() {
        let t = completion_token(b"secret", "c", "calm-ligand-106", Verdict::Accept);
        assert_eq!(t.len(), 32);
        assert!(t.chars().all(|c| c.is_ascii_hexdigit()));
        assert_eq!(t, completion_token(b"secret", "c", "calm-ligand-106", Verdict::Accept));
        assert_ne!(t, completion_token(b"secret", "c", "calm-ligand-106", Verdict::Reject));
        assert_ne!(t, completion_token(b"other", "c", "calm-ligand-106", Verdict::Accept));
        assert_eq!(verify_completion_token(b"secret", "c", "calm-ligand-106", &t), Some(Verdict::Accept));
        assert_eq!(verify_completion_token(b"secret", "c", "brave-otter-101", &t), None);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn span() -> impl Strategy<Value = ErrorSpan> {
            (0..20usize, 0..20usize, any::<bool>()).prop_map(|(a, b, major)| {
                let sev = if major { Severity::Major } else { Severity::Minor };
                ErrorSpan::new(a.min(b), a.max(b), sev)
            })
        }

        proptest! {
            #[test]
            fn silent_rules_never_block(score in 0.0..=100.0f64, lo in 0.0..=100.0f64, spans in proptest::collection::vec(span(), 0..4)) {
                let rule = ValidationRule {
                    warning: None,
                    score: Some(ScoreRange { min: lo, max: 100.0 }),
                    error_spans: tutorial_rule().error_spans,
                    score_greaterthan: None,
                    allow_skip: false,
                };
                let out = evaluate_rule(&rule, score, &spans, &none()).unwrap();
                prop_assert!(!out.blocking);
                prop_assert_eq!(out.passed, out.failed_conditions.is_empty());
                let results = vec![RuleResult { model_id: "m".into(), segment_index: 0, rule_index: 0, outcome: out }];
                prop_assert_eq!(gate(&results, false), Gate::Accept { skipped: vec![] });
            }

            #[test]
            fn extra_spans_never_hurt(spans in proptest::collection::vec(span(), 0..4), extra in span()) {
                let e = &tutorial_rule().error_spans[0];
                let mut more = spans.clone();
                more.push(extra);
                prop_assert!(!match_expected_span(e, &spans) || match_expected_span(e, &more));
            }
        }
    }
}
