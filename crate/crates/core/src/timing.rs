//! Latency summaries and the quadratic scaling model `t = a N² + b`.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuadraticFit {
    pub a: f64,
    pub b: f64,
    pub r_squared: f64,
}

/// Least-squares fit of `t ≈ a n² + b`.
pub fn quadratic_fit(n: &[f64], t: &[f64]) -> Result<QuadraticFit> {
    if n.len() != t.len() || n.len() < 2 {
        return Err(Error::Config(format!(
            "quadratic fit needs at least two paired samples, got {} and {}",
            n.len(),
            t.len()
        )));
    }
    let x: Vec<f64> = n.iter().map(|v| v * v).collect();
    let m = x.len() as f64;
    let xm = x.iter().sum::<f64>() / m;
    let tm = t.iter().sum::<f64>() / m;
    let sxx: f64 = x.iter().map(|v| (v - xm) * (v - xm)).sum();
    if sxx == 0.0 {
        return Err(Error::Config("quadratic fit needs at least two distinct sizes".into()));
    }
    let sxt: f64 = x.iter().zip(t).map(|(v, w)| (v - xm) * (w - tm)).sum();
    let a = sxt / sxx;
    let b = tm - a * xm;
    let ss_tot: f64 = t.iter().map(|w| (w - tm) * (w - tm)).sum();
    let ss_res: f64 = x.iter().zip(t).map(|(v, w)| (w - a * v - b).powi(2)).sum();
    let r_squared = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok(QuadraticFit { a, b, r_squared })
}

/// Linearly interpolated percentile, `q ∈ [0, 100]`, of unsorted data.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = (q.clamp(0.0, 100.0) / 100.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LatencySummary {
    pub count: usize,
    pub median: f64,
    pub p25: f64,
    pub p75: f64,
}

pub fn summarize(times: &[f64]) -> LatencySummary {
    LatencySummary {
        count: times.len(),
        median: percentile(times, 50.0),
        p25: percentile(times, 25.0),
        p75: percentile(times, 75.0),
    }
}

/// Wall time of one call, in seconds.
pub fn time_it<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed().as_secs_f64())
}

/// `n` points uniform in the ball of radius `radius`, bounded away from the
/// origin.
pub fn synthetic_cloud(n: usize, radius: f64, seed: u64) -> Vec<[f64; 3]> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let p: [f64; 3] = [
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ];
        let r2 = p[0] * p[0] + p[1] * p[1] + p[2] * p[2];
        if r2 <= 1.0 && r2 > 1e-6 {
            out.push([p[0] * radius, p[1] * radius, p[2] * radius]);
        }
    }
    out
}
