//! On-disk schema for summary.json. The table command re-reads these files,
//! so the shape is part of the CLI contract.

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    /// Percent; null when no client had an eligible triggered sample.
    pub asr: Option<f64>,
    /// Percent.
    pub mta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadlineBlock {
    pub mean_asr: Option<f64>,
    pub mean_mta: f64,
    pub per_seed: Vec<SeedResult>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config_hash: String,
    pub dataset: String,
    pub pfl_method: String,
    pub alpha: f64,
    pub attack: String,
    pub defense: String,
    pub seeds: Vec<u64>,
    /// Seed mean of the windowed benign-client headline numbers.
    pub mean_asr: Option<f64>,
    pub mean_mta: f64,
    pub per_seed: Vec<SeedResult>,
    /// Present only for post-training defenses (fine_tune, simple_tune).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub post_defense: Option<HeadlineBlock>,
}

/// Wire token of a config enum ("bapfl_plus", "fedper", ...).
pub fn token<T: Serialize>(value: &T) -> String {
    match serde_json::to_value(value).expect("config enums serialize") {
        serde_json::Value::String(s) => s,
        other => other.to_string(),
    }
}
