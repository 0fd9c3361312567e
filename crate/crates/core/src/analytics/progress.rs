use serde::{Deserialize, Serialize};

use crate::assignment::Progress;
use crate::quality::UserQuality;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserProgress {
    pub user_id: String,
    pub done: usize,
    pub total: usize,
    /// Mean gap between consecutive submissions; undefined before the second.
    pub seconds_per_item: Option<f64>,
    pub attention_pass_rate: Option<f64>,
    pub attention_checks_seen: usize,
    pub attention_checks_passed: usize,
    pub tutorial_failures: usize,
    pub tutorial_skips: usize,
    pub complete: bool,
}

/// Mean of the gaps between submission timestamps (milliseconds), in seconds.
pub fn seconds_per_item(submit_times_ms: &[u64]) -> Option<f64> {
    let mut t = submit_times_ms.to_vec();
    t.sort_unstable();
    match (t.first(), t.last()) {
        (Some(first), Some(last)) if t.len() >= 2 => Some((last - first) as f64 / 1000.0 / (t.len() - 1) as f64),
        _ => None,
    }
}

pub fn user_progress(
    user_id: &str,
    progress: Progress,
    submit_times_ms: &[u64],
    quality: UserQuality,
    complete: bool,
) -> UserProgress {
    UserProgress {
        user_id: user_id.to_string(),
        done: progress.done,
        total: progress.total,
        seconds_per_item: seconds_per_item(submit_times_ms),
        attention_pass_rate: quality.pass_rate(),
        attention_checks_seen: quality.checks_seen,
        attention_checks_passed: quality.checks_passed,
        tutorial_failures: quality.tutorial_failures,
        tutorial_skips: quality.tutorial_skips,
        complete,
    }
}
