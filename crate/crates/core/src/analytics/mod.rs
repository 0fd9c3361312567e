//! Rankings with significance lines, inter-annotator agreement, progress
//! diagnostics and capacity planning.

mod agreement;
mod capacity;
mod progress;
mod ranking;
pub mod stats;

use serde::{Deserialize, Serialize};

pub use agreement::{iaa_report, pairwise_agreement, AgreementReport, PairAgreement};
pub use capacity::{mm1_capacity, CapacityQuery, CapacityResult};
pub use progress::{seconds_per_item, user_progress, UserProgress};
pub use ranking::{build_ranking, RankingReport, RankingRow, DEFAULT_ALPHA, DYNAMIC_BIAS_DISCLAIMER};
pub use stats::{kendall_tau_b, paired_t_test, pearson, StatsError, TTest};

use crate::campaign::ModelId;

/// One segment score, the unit every statistic here is computed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreObservation {
    pub user_id: String,
    pub document_index: usize,
    pub segment_index: usize,
    pub model_id: ModelId,
    pub score: f64,
}
