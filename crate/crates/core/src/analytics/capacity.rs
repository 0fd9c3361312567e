//! How many concurrent annotators one server instance sustains under a
//! latency SLA, treating the server as an M/M/1 queue.
//!
//! Response time in M/M/1 is exponential with rate μ − λ, so
//! P(T ≤ t) = 1 − e^{−(μ−λ)t}. Requiring P(T ≤ t) ≥ q gives
//! λ ≤ μ + ln(1 − q)/t, and each annotator contributes one request per think
//! time.

use serde::{Deserialize, Serialize};

use super::stats::StatsError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapacityQuery {
    /// Seconds per request (1/μ).
    pub service_time: f64,
    /// Seconds between one annotator's requests.
    pub think_time: f64,
    pub sla_latency: f64,
    pub sla_quantile: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapacityResult {
    pub mu: f64,
    pub lambda_max: f64,
    pub max_users: u64,
    /// Users supported if only throughput mattered: think / service.
    pub naive_throughput: u64,
    pub feasible: bool,
}

pub fn mm1_capacity(q: CapacityQuery) -> Result<CapacityResult, StatsError> {
    for (name, v) in [
        ("service_time", q.service_time),
        ("think_time", q.think_time),
        ("sla_latency", q.sla_latency),
    ] {
        if !(v.is_finite() && v > 0.0) {
            return Err(StatsError::Domain(format!("{name} must be positive, got {v}")));
        }
    }
    if !(q.sla_quantile > 0.0 && q.sla_quantile < 1.0) {
        return Err(StatsError::Domain(format!(
            "sla_quantile must lie in (0, 1), got {}",
            q.sla_quantile
        )));
    }
    let mu = 1.0 / q.service_time;
    let lambda_max = mu + (1.0 - q.sla_quantile).ln() / q.sla_latency;
    let feasible = lambda_max > 0.0;
    let max_users = if feasible {
        (lambda_max * q.think_time).floor() as u64
    } else {
        0
    };
    Ok(CapacityResult {
        mu,
        lambda_max,
        max_users,
        naive_throughput: (q.think_time / q.service_time).floor() as u64,
        feasible,
    })
}
