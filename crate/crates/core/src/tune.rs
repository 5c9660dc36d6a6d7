//! Grid search over fusion weights, maximizing Factual Recall.
//!
//! The grid is the weight simplex sampled at `step`, with the semantic weight
//! restricted to `[0.40, 0.90]`; the discourse weight takes the remainder.
//! Candidate pools and per-term values do not depend on the weights, so they
//! are computed once per query and re-weighted at every grid point.

use alloc::vec::Vec;

use thiserror::Error;

use crate::engine::{dense_candidates, pool_terms, rank_terms, symbolic_candidates, CandidateTerms, RetrievalConfig, RetrievalError};
use crate::eval::first_hit;
use crate::model::{FusionWeights, GoldInfo, Query};
use crate::store::MemoryStore;

pub const DEFAULT_GRID_STEP: f64 = 0.05;
pub const SEMANTIC_MIN: f64 = 0.40;
pub const SEMANTIC_MAX: f64 = 0.90;

const EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TuneError {
    #[error("validation query {0} has no gold information")]
    MissingGold(usize),
    #[error("no validation queries")]
    NoQueries,
    #[error("grid step {0} must be in (0, 1]")]
    InvalidStep(f64),
    #[error("grid has no feasible point")]
    EmptyGrid,
    #[error("retrieval failed on query {index}: {source}")]
    Retrieval { index: usize, source: RetrievalError },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub weights: FusionWeights,
    pub recalled: usize,
    pub total: usize,
}

impl GridPoint {
    pub fn fr(&self) -> f64 {
        self.recalled as f64 / self.total as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneResult {
    pub best: FusionWeights,
    pub best_fr: f64,
    /// Every grid point, ordered by semantic weight then entity weight.
    pub table: Vec<GridPoint>,
}

/// Simplex points with `λ_s ∈ [0.40, 0.90]`, ordered by `(λ_s, λ_e)`.
pub fn simplex_grid(step: f64) -> Result<Vec<FusionWeights>, TuneError> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(TuneError::InvalidStep(step));
    }
    let mut points = Vec::new();
    let max_i = libm::floor(1.0 / step + EPS) as usize;
    for i in 0..=max_i {
        let s = i as f64 * step;
        if !(SEMANTIC_MIN - EPS..=SEMANTIC_MAX + EPS).contains(&s) {
            continue;
        }
        let mut j = 0usize;
        loop {
            let e = j as f64 * step;
            if s + e > 1.0 + EPS {
                break;
            }
            let c = (1.0 - s - e).max(0.0);
            // λ_c absorbs rounding so the triple sums to 1.
            if let Ok(w) = FusionWeights::new(s, e, c) {
                points.push(w);
            }
            j += 1;
        }
    }
    if points.is_empty() {
        return Err(TuneError::EmptyGrid);
    }
    Ok(points)
}

/// Better point under FR, then larger λ_s, then larger λ_e.
fn better(a: &GridPoint, b: &GridPoint) -> bool {
    if a.recalled != b.recalled {
        return a.recalled > b.recalled;
    }
    if (a.weights.semantic() - b.weights.semantic()).abs() > EPS {
        return a.weights.semantic() > b.weights.semantic();
    }
    a.weights.entity() > b.weights.entity() + EPS
}

pub fn tune_weights(
    queries: &[Query],
    store: &MemoryStore,
    base: &RetrievalConfig,
    step: f64,
) -> Result<TuneResult, TuneError> {
    if queries.is_empty() {
        return Err(TuneError::NoQueries);
    }
    let golds: Vec<&GoldInfo> = queries
        .iter()
        .enumerate()
        .map(|(i, q)| q.gold.as_ref().ok_or(TuneError::MissingGold(i)))
        .collect::<Result<_, _>>()?;
    let grid = simplex_grid(step)?;

    let mut pools: Vec<Vec<CandidateTerms>> = Vec::with_capacity(queries.len());
    for (index, q) in queries.iter().enumerate() {
        let wrap = |source| TuneError::Retrieval { index, source };
        let dense = dense_candidates(store, q, base).map_err(wrap)?;
        let symbolic = symbolic_candidates(store, q, base);
        pools.push(pool_terms(store, q, base, &dense, &symbolic).map_err(wrap)?);
    }

    let mut table = Vec::with_capacity(grid.len());
    for weights in grid {
        let recalled = pools
            .iter()
            .zip(&golds)
            .filter(|(terms, gold)| {
                let top = rank_terms(store, terms, &weights, base.k);
                first_hit(store, &top, gold).is_some()
            })
            .count();
        table.push(GridPoint {
            weights,
            recalled,
            total: queries.len(),
        });
    }
    let best = table
        .iter()
        .copied()
        .reduce(|acc, p| if better(&p, &acc) { p } else { acc })
        .expect("grid is non-empty");
    Ok(TuneResult {
        best: best.weights,
        best_fr: best.fr(),
        table,
    })
}
