//! Per-stage query latency over a warmed store.
//!
//! Stages run one after another on the calling thread so each is timed in
//! isolation; the end-to-end figure is the wall time around all three.

use std::time::{Duration, Instant};

use anchormem_core::engine::{dense_candidates, fuse, symbolic_candidates, RetrievalError};
use anchormem_core::{MemoryStore, Query, RetrievalConfig};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("no queries to benchmark")]
    NoQueries,
    #[error("measured query count must be >= 1")]
    ZeroRuns,
    #[error("query {index}: {source}")]
    Retrieval { index: usize, source: RetrievalError },
}

/// Milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub max: f64,
    pub mean: f64,
    pub min: f64,
    pub p50: f64,
    pub p95: f64,
    pub p99: f64,
}

impl Summary {
    /// Nearest-rank percentiles.
    pub fn of(samples: &[Duration]) -> Self {
        let mut ms: Vec<f64> = samples.iter().map(|d| d.as_secs_f64() * 1e3).collect();
        ms.sort_by(f64::total_cmp);
        let rank = |p: f64| {
            let r = (p / 100.0 * ms.len() as f64).ceil() as usize;
            ms[r.clamp(1, ms.len()) - 1]
        };
        Self {
            max: ms[ms.len() - 1],
            mean: ms.iter().sum::<f64>() / ms.len() as f64,
            min: ms[0],
            p50: rank(50.0),
            p95: rank(95.0),
            p99: rank(99.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub dense: Summary,
    pub entries: usize,
    pub fusion: Summary,
    pub queries: usize,
    pub symbolic: Summary,
    pub total: Summary,
    pub warmup: usize,
}

impl BenchReport {
    pub fn table(&self) -> String {
        let mut s = format!(
            "{} queries over {} entries ({} warmup)\n{:<10}{:>10}{:>10}{:>10}{:>10}\n",
            self.queries, self.entries, self.warmup, "stage", "mean", "p50", "p95", "p99"
        );
        for (name, x) in [
            ("dense", &self.dense),
            ("symbolic", &self.symbolic),
            ("fusion", &self.fusion),
            ("total", &self.total),
        ] {
            s.push_str(&format!(
                "{name:<10}{:>10.3}{:>10.3}{:>10.3}{:>10.3}\n",
                x.mean, x.p50, x.p95, x.p99
            ));
        }
        s
    }
}

/// Runs `warmup` unmeasured queries, then `n` measured ones, cycling through
/// `queries`.
pub fn latency_bench(
    store: &MemoryStore,
    queries: &[Query],
    cfg: &RetrievalConfig,
    warmup: usize,
    n: usize,
) -> Result<BenchReport, BenchError> {
    if queries.is_empty() {
        return Err(BenchError::NoQueries);
    }
    if n == 0 {
        return Err(BenchError::ZeroRuns);
    }
    let mut stages = [Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n)];
    for i in 0..warmup + n {
        let index = i % queries.len();
        let q = &queries[index];
        let wrap = |source| BenchError::Retrieval { index, source };
        let start = Instant::now();
        let hits = dense_candidates(store, q, cfg).map_err(wrap)?;
        let t1 = Instant::now();
        let ids = symbolic_candidates(store, q, cfg);
        let t2 = Instant::now();
        let ranked = fuse(store, q, cfg, &hits, &ids).map_err(wrap)?;
        let t3 = Instant::now();
        std::hint::black_box(ranked);
        if i >= warmup {
            stages[0].push(t1 - start);
            stages[1].push(t2 - t1);
            stages[2].push(t3 - t2);
            stages[3].push(t3 - start);
        }
    }
    Ok(BenchReport {
        dense: Summary::of(&stages[0]),
        entries: store.len(),
        fusion: Summary::of(&stages[2]),
        queries: n,
        symbolic: Summary::of(&stages[1]),
        total: Summary::of(&stages[3]),
        warmup,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_sample_summary() {
        let s = Summary::of(&[Duration::from_micros(1500)]);
        assert_eq!((s.mean, s.p50, s.p95, s.p99, s.min, s.max), (1.5, 1.5, 1.5, 1.5, 1.5, 1.5));
    }

    #[test]
    fn nearest_rank() {
        let samples: Vec<Duration> = (1..=100).map(Duration::from_millis).collect();
        let s = Summary::of(&samples);
        assert_eq!((s.p50, s.p95, s.p99), (50.0, 95.0, 99.0));
    }
}
