use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::stats::{kendall_tau_b, mean, pearson};
use super::ScoreObservation;

/// Agreement between annotators on the items they share. A component is
/// `None` when no annotator pair has enough overlap to compute it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    /// Pearson over all shared segment scores.
    pub global: Option<f64>,
    /// Mean over models of Pearson on that model's shared segments.
    pub by_model: Option<f64>,
    /// Mean over shared documents of τ_b across the document's models, each
    /// model represented by the annotator's mean score on the document.
    pub by_item: Option<f64>,
    /// Annotator pairs that share at least one segment.
    pub annotator_pairs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairAgreement {
    pub global: Option<f64>,
    pub by_model: Option<f64>,
    pub by_item: Option<f64>,
}

/// (document, segment, model) → score for one annotator.
type Sheet<'a> = BTreeMap<(usize, usize, &'a str), f64>;

fn sheets(observations: &[ScoreObservation]) -> BTreeMap<&str, Sheet<'_>> {
    let mut out: BTreeMap<&str, Sheet> = BTreeMap::new();
    for o in observations {
        out.entry(o.user_id.as_str())
            .or_default()
            .insert((o.document_index, o.segment_index, o.model_id.as_str()), o.score);
    }
    out
}

fn pair_agreement(a: &Sheet, b: &Sheet) -> Option<PairAgreement> {
    let shared: Vec<(&(usize, usize, &str), f64, f64)> =
        a.iter().filter_map(|(k, x)| b.get(k).map(|y| (k, *x, *y))).collect();
    if shared.is_empty() {
        return None;
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = shared.iter().map(|(_, x, y)| (*x, *y)).unzip();
    let global = pearson(&xs, &ys).ok();

    let models: BTreeSet<&str> = shared.iter().map(|(k, _, _)| k.2).collect();
    let per_model: Vec<f64> = models
        .iter()
        .filter_map(|m| {
            let (xs, ys): (Vec<f64>, Vec<f64>) =
                shared.iter().filter(|(k, _, _)| k.2 == *m).map(|(_, x, y)| (*x, *y)).unzip();
            pearson(&xs, &ys).ok()
        })
        .collect();

    let mut docs: BTreeMap<usize, BTreeMap<&str, (Vec<f64>, Vec<f64>)>> = BTreeMap::new();
    for (k, x, y) in &shared {
        let e = docs.entry(k.0).or_default().entry(k.2).or_default();
        e.0.push(*x);
        e.1.push(*y);
    }
    let per_doc: Vec<f64> = docs
        .values()
        .filter_map(|models| {
            let (xs, ys): (Vec<f64>, Vec<f64>) = models
                .values()
                .map(|(x, y)| (mean(x).expect("non-empty"), mean(y).expect("non-empty")))
                .unzip();
            kendall_tau_b(&xs, &ys).ok()
        })
        .collect();

    Some(PairAgreement {
        global,
        by_model: mean(&per_model),
        by_item: mean(&per_doc),
    })
}

/// Agreement for every annotator pair with overlap, keyed by (a, b), a < b.
pub fn pairwise_agreement(observations: &[ScoreObservation]) -> BTreeMap<(String, String), PairAgreement> {
    let sheets = sheets(observations);
    let users: Vec<&&str> = sheets.keys().collect();
    let mut out = BTreeMap::new();
    for (i, a) in users.iter().enumerate() {
        for b in &users[i + 1..] {
            if let Some(p) = pair_agreement(&sheets[**a], &sheets[**b]) {
                out.insert((a.to_string(), b.to_string()), p);
            }
        }
    }
    out
}

pub fn iaa_report(observations: &[ScoreObservation]) -> AgreementReport {
    let pairs = pairwise_agreement(observations);
    let avg = |f: fn(&PairAgreement) -> Option<f64>| mean(&pairs.values().filter_map(f).collect::<Vec<_>>());
    AgreementReport {
        global: avg(|p| p.global),
        by_model: avg(|p| p.by_model),
        by_item: avg(|p| p.by_item),
        annotator_pairs: pairs.len(),
    }
}
