//! Configuration file: one JSON object in the same canonical form as the
//! record files. Every field is optional; command-line flags override it.

use std::path::Path;

use anchormem_core::corpus::{LongRangeConfig, SessionizerConfig};
use anchormem_core::engine::{ClusterWeighting, EntityMatchMode};
use anchormem_core::{DenseMode, DiscourseMode, FusionWeights, HnswParams, RetrievalConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    File { path: String, message: String },
    #[error("weights must be three non-negative numbers summing to 1, got {0:?}")]
    Weights(Vec<f64>),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiscourseSetting {
    Binary,
    Graded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightingSetting {
    Log,
    Linear,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EntitySetting {
    CorefOrName,
    NameOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HnswSection {
    pub ef_construction: usize,
    pub ef_search: usize,
    pub m: usize,
    /// Level-assignment seed; kept apart from the corpus seed so rebuilding
    /// a corpus with a new seed does not reshuffle the graph.
    pub seed: u64,
}

impl Default for HnswSection {
    fn default() -> Self {
        let p = HnswParams::default();
        Self {
            ef_construction: p.ef_construction,
            ef_search: p.ef_search,
            m: p.m,
            seed: p.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalSection {
    pub cluster_weighting: WeightingSetting,
    pub dense_n: usize,
    pub discourse_mode: DiscourseSetting,
    pub entity_mode: EntitySetting,
    pub exact: bool,
    pub k: usize,
    pub symbolic_cap: usize,
    pub weights: Vec<f64>,
}

impl Default for RetrievalSection {
    fn default() -> Self {
        let r = RetrievalConfig::default();
        Self {
            cluster_weighting: WeightingSetting::Log,
            dense_n: r.dense_n,
            discourse_mode: DiscourseSetting::Graded,
            entity_mode: EntitySetting::CorefOrName,
            exact: false,
            k: r.k,
            symbolic_cap: r.symbolic_cap,
            weights: vec![r.weights.semantic(), r.weights.entity(), r.weights.discourse()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionizerSection {
    pub audit_fraction: f64,
    pub gap_hours: Vec<u32>,
    pub turn_budget_max: usize,
    pub turn_budget_min: usize,
}

impl Default for SessionizerSection {
    fn default() -> Self {
        let s = SessionizerConfig::default();
        Self {
            audit_fraction: s.audit_fraction,
            gap_hours: s.gap_hours_choices,
            turn_budget_max: s.turn_budget_max,
            turn_budget_min: s.turn_budget_min,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LongRangeSection {
    pub boundary_max: usize,
    pub boundary_min: usize,
}

impl Default for LongRangeSection {
    fn default() -> Self {
        let l = LongRangeConfig::default();
        Self {
            boundary_max: l.boundary_max,
            boundary_min: l.boundary_min,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Embedding dimension for new stores; inferred from the data when unset.
    pub dim: Option<usize>,
    pub grid_step: f64,
    pub hnsw: HnswSection,
    pub long_range: LongRangeSection,
    pub metadata_budget: usize,
    pub retrieval: RetrievalSection,
    /// Seeds sessionization, long-range extension, audits and the synthetic
    /// generator.
    pub seed: u64,
    pub sessionizer: SessionizerSection,
    pub toy_embed: bool,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            dim: None,
            grid_step: anchormem_core::tune::DEFAULT_GRID_STEP,
            hnsw: HnswSection::default(),
            long_range: LongRangeSection::default(),
            metadata_budget: anchormem_core::prompt::DEFAULT_METADATA_BUDGET,
            retrieval: RetrievalSection::default(),
            seed: 0,
            sessionizer: SessionizerSection::default(),
            toy_embed: false,
        }
    }
}

pub fn parse_weights(values: &[f64]) -> Result<FusionWeights, ConfigError> {
    match values {
        [s, e, c] => FusionWeights::new(*s, *e, *c).map_err(|_| ConfigError::Weights(values.to_vec())),
        _ => Err(ConfigError::Weights(values.to_vec())),
    }
}

/// `"0.5,0.3,0.2"` into weights.
pub fn parse_weight_list(text: &str) -> Result<FusionWeights, ConfigError> {
    let values: Result<Vec<f64>, _> = text.split(',').map(|v| v.trim().parse::<f64>()).collect();
    match values {
        Ok(v) => parse_weights(&v),
        Err(_) => Err(ConfigError::Invalid(format!("cannot parse weights {text:?}"))),
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let file_err = |message: String| ConfigError::File {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| file_err(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| file_err(e.to_string()))
    }

    pub fn canonical(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// Short digest of the canonical form, recorded in store manifests.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))[..16].to_string()
    }

    pub fn hnsw_params(&self) -> HnswParams {
        HnswParams {
            m: self.hnsw.m,
            ef_construction: self.hnsw.ef_construction,
            ef_search: self.hnsw.ef_search,
            seed: self.hnsw.seed,
        }
    }

    pub fn retrieval_config(&self) -> Result<RetrievalConfig, ConfigError> {
        let r = &self.retrieval;
        let cfg = RetrievalConfig {
            weights: parse_weights(&r.weights)?,
            dense_n: r.dense_n,
            symbolic_cap: r.symbolic_cap,
            k: r.k,
            discourse_mode: match r.discourse_mode {
                DiscourseSetting::Binary => DiscourseMode::Binary,
                DiscourseSetting::Graded => DiscourseMode::Graded,
            },
            weighting: match r.cluster_weighting {
                WeightingSetting::Log => ClusterWeighting::Log,
                WeightingSetting::Linear => ClusterWeighting::Linear,
                WeightingSetting::Uniform => ClusterWeighting::Uniform,
            },
            entity_mode: match r.entity_mode {
                EntitySetting::CorefOrName => EntityMatchMode::CorefOrName,
                EntitySetting::NameOnly => EntityMatchMode::NameOnly,
            },
            dense_mode: if r.exact { DenseMode::Exact } else { DenseMode::Approximate },
        };
        cfg.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(cfg)
    }

    pub fn sessionizer_config(&self) -> SessionizerConfig {
        let s = &self.sessionizer;
        SessionizerConfig {
            turn_budget_min: s.turn_budget_min,
            turn_budget_max: s.turn_budget_max,
            gap_hours_choices: s.gap_hours.clone(),
            rng_seed: self.seed,
            audit_fraction: s.audit_fraction,
        }
    }

    pub fn long_range_config(&self) -> LongRangeConfig {
        LongRangeConfig {
            boundary_min: self.long_range.boundary_min,
            boundary_max: self.long_range.boundary_max,
            rng_seed: self.seed,
            ..LongRangeConfig::default()
        }
    }
}
