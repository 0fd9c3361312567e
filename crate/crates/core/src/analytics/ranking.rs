use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::stats::paired_t_test;
use super::ScoreObservation;
use crate::campaign::{AssignmentMode, ModelId};

pub const DEFAULT_ALPHA: f64 = 0.05;

pub const DYNAMIC_BIAS_DISCLAIMER: &str = "Dynamic assignment sends more annotations to models that \
score well so far. The averages below therefore carry selection bias and favor the leading models; \
reweight or collect a uniform sample before drawing firm conclusions.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingRow {
    pub model_id: ModelId,
    pub mean: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingReport {
    pub rows: Vec<RankingRow>,
    /// `i` marks a line between `rows[i]` and `rows[i + 1]`.
    pub separations: Vec<usize>,
    /// Two-sided p-values in row order; `None` where fewer than two related
    /// samples exist.
    pub pairwise_p: Vec<Vec<Option<f64>>>,
    pub alpha: f64,
    pub assignment: AssignmentMode,
    pub bias_disclaimer: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disclaimer: Option<String>,
}

/// Scores of one model keyed by (annotator, document, segment).
type Keyed<'a> = BTreeMap<(&'a str, usize, usize), f64>;

/// Ranks models by mean segment score and tests each pair on the segments
/// both models received from the same annotator.
pub fn build_ranking(observations: &[ScoreObservation], alpha: f64, assignment: AssignmentMode) -> RankingReport {
    let mut by_model: BTreeMap<&str, Keyed> = BTreeMap::new();
    for o in observations {
        by_model
            .entry(o.model_id.as_str())
            .or_default()
            .insert((o.user_id.as_str(), o.document_index, o.segment_index), o.score);
    }
    let mut rows: Vec<RankingRow> = by_model
        .iter()
        .map(|(m, scores)| RankingRow {
            model_id: m.to_string(),
            mean: scores.values().sum::<f64>() / scores.len() as f64,
            n: scores.len(),
        })
        .collect();
    rows.sort_by(|a, b| b.mean.total_cmp(&a.mean).then_with(|| a.model_id.cmp(&b.model_id)));

    let k = rows.len();
    let mut pairwise_p = vec![vec![None; k]; k];
    for i in 0..k {
        pairwise_p[i][i] = Some(1.0);
        for j in i + 1..k {
            let a = &by_model[rows[i].model_id.as_str()];
            let b = &by_model[rows[j].model_id.as_str()];
            let (xs, ys): (Vec<f64>, Vec<f64>) =
                a.iter().filter_map(|(key, x)| b.get(key).map(|y| (*x, *y))).unzip();
            let p = paired_t_test(&xs, &ys).ok().map(|r| r.p);
            pairwise_p[i][j] = p;
            pairwise_p[j][i] = p;
        }
    }
    let separations = (0..k.saturating_sub(1))
        .filter(|&i| pairwise_p[i][i + 1].is_some_and(|p| p < alpha))
        .collect();
    let dynamic = assignment == AssignmentMode::Dynamic;
    RankingReport {
        rows,
        separations,
        pairwise_p,
        alpha,
        assignment,
        bias_disclaimer: dynamic,
        disclaimer: dynamic.then(|| DYNAMIC_BIAS_DISCLAIMER.to_string()),
    }
}
