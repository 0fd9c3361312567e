//! Reference computations written independently of the crates under test.
//! Each one takes the slow, obvious route.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use statrs::distribution::{ContinuousCDF, StudentsT};

/// Paired t statistic from the textbook formula; p from statrs' Student t.
pub fn paired_t(a: &[f64], b: &[f64]) -> (f64, f64) {
    let n = a.len() as f64;
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let t = mean / (var / n).sqrt();
    let dist = StudentsT::new(0.0, 1.0, n - 1.0).unwrap();
    let p = 2.0 * dist.cdf(-t.abs());
    (t, p)
}

/// Pearson r of integer data with every sum kept exact.
pub fn pearson_exact(x: &[i64], y: &[i64]) -> f64 {
    let n = x.len() as i128;
    let sx: i128 = x.iter().map(|&v| v as i128).sum();
    let sy: i128 = y.iter().map(|&v| v as i128).sum();
    let sxy: i128 = x.iter().zip(y).map(|(&a, &b)| a as i128 * b as i128).sum();
    let sxx: i128 = x.iter().map(|&v| (v as i128).pow(2)).sum();
    let syy: i128 = y.iter().map(|&v| (v as i128).pow(2)).sum();
    let num = n * sxy - sx * sy;
    let den = (n * sxx - sx * sx) * (n * syy - sy * sy);
    num as f64 / (den as f64).sqrt()
}

/// Kendall τ_b by looking at every pair.
pub fn tau_b_pairs(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let (mut concordant, mut discordant, mut tied_x, mut tied_y) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let dx = x[i].total_cmp(&x[j]) as i64;
            let dy = y[i].total_cmp(&y[j]) as i64;
            if x[i] == x[j] {
                tied_x += 1;
            }
            if y[i] == y[j] {
                tied_y += 1;
            }
            match dx * dy {
                1 => concordant += 1,
                -1 => discordant += 1,
                _ => {}
            }
        }
    }
    let pairs = (n * (n - 1) / 2) as i64;
    (concordant - discordant) as f64 / (((pairs - tied_x) * (pairs - tied_y)) as f64).sqrt()
}

/// Largest arrival rate for which P(sojourn ≤ t) ≥ q in M/M/1.
pub fn mm1_lambda_closed_form(mu: f64, t: f64, q: f64) -> f64 {
    mu - (1.0 / (1.0 - q)).ln() / t
}

/// Empirical sojourn-time quantile of a FIFO M/M/1 queue, by Lindley's
/// recursion over simulated customers.
pub fn mm1_simulated_quantile(lambda: f64, mu: f64, q: f64, customers: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let arrivals = Exp::new(lambda).unwrap();
    let service = Exp::new(mu).unwrap();
    let warmup = customers / 20;
    let mut wait = 0.0f64;
    let mut sojourns = Vec::with_capacity(customers);
    for i in 0..customers + warmup {
        let s: f64 = service.sample(&mut rng);
        if i >= warmup {
            sojourns.push(wait + s);
        }
        let gap: f64 = arrivals.sample(&mut rng);
        wait = (wait + s - gap).max(0.0);
    }
    sojourns.sort_by(f64::total_cmp);
    sojourns[((q * sojourns.len() as f64) as usize).min(sojourns.len() - 1)]
}

/// Per-arm score streams shared by the policies being compared, so both see
/// the same k-th draw of each arm.
pub struct CommonScores {
    streams: Vec<Vec<f64>>,
    used: Vec<usize>,
}

impl CommonScores {
    pub fn new(means: &[f64], sigma: f64, len: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let streams = means
            .iter()
            .map(|&m| {
                let d = Normal::new(m, sigma).unwrap();
                (0..len).map(|_| d.sample(&mut rng).clamp(0.0, 100.0)).collect()
            })
            .collect();
        CommonScores {
            streams,
            used: vec![0; means.len()],
        }
    }

    pub fn draw(&mut self, arm: usize) -> f64 {
        let v = self.streams[arm][self.used[arm]];
        self.used[arm] += 1;
        v
    }

    pub fn reset(&mut self) {
        self.used.iter_mut().for_each(|u| *u = 0);
    }
}

/// Decides when the best arm has been found with confidence: every arm has
/// been seen, and the empirical leader's lower bound clears every other
/// arm's upper bound, with sub-Gaussian radius σ·sqrt(2 ln(3t²/δ)/n).
pub struct BestArmTracker {
    sigma: f64,
    delta: f64,
    n: Vec<f64>,
    sum: Vec<f64>,
    t: usize,
}

impl BestArmTracker {
    pub fn new(arms: usize, sigma: f64, delta: f64) -> Self {
        BestArmTracker {
            sigma,
            delta,
            n: vec![0.0; arms],
            sum: vec![0.0; arms],
            t: 0,
        }
    }

    pub fn observe(&mut self, arm: usize, score: f64) {
        self.n[arm] += 1.0;
        self.sum[arm] += score;
        self.t += 1;
    }

    /// The arm identified as best, if any.
    pub fn identified(&self) -> Option<usize> {
        if self.n.iter().any(|&n| n == 0.0) {
            return None;
        }
        let k = self.n.len() as f64;
        let t = self.t as f64;
        let radius = |n: f64| self.sigma * (2.0 * (k * t * t / self.delta).ln() / n).sqrt();
        let means: Vec<f64> = self.sum.iter().zip(&self.n).map(|(s, n)| s / n).collect();
        let leader = (0..means.len()).max_by(|&a, &b| means[a].total_cmp(&means[b]))?;
        let lcb = means[leader] - radius(self.n[leader]);
        let separated = (0..means.len())
            .filter(|&i| i != leader)
            .all(|i| means[i] + radius(self.n[i]) < lcb);
        separated.then_some(leader)
    }
}

/// Steps until uniform sampling identifies `best`; `cap + 1` if it never does.
pub fn uniform_identification_time(scores: &mut CommonScores, best: usize, cap: usize, seed: u64) -> usize {
    let arms = scores.streams.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tracker = BestArmTracker::new(arms, 10.0, 0.05);
    for t in 1..=cap {
        let arm = rng.random_range(0..arms);
        tracker.observe(arm, scores.draw(arm));
        if tracker.identified() == Some(best) {
            return t;
        }
    }
    cap + 1
}

/// Nearest-rank quantile.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}
