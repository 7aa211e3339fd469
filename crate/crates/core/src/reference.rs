//! Published population fits, shipped as comparison fixtures and as
//! generator targets for synthetic players. Nothing here is recomputed: no
//! raw play data accompanies these numbers.

use serde::{Deserialize, Serialize};

use crate::rationality::FEATURES;

const REFERENCE_JSON: &str = include_str!("../assets/reference_fits.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceFits {
    pub amt_reference: AmtReference,
    pub populations: Vec<PopulationFit>,
    pub session_change: ReferenceChanges,
}

/// Fits reported for crowd-sourced players of the same game.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmtReference {
    pub population: String,
    pub lambda: f64,
    pub w: [f64; FEATURES],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ByAffect<T> {
    pub both: T,
    pub positive: T,
    pub negative: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationFit {
    pub rounds: String,
    pub lambda: ByAffect<f64>,
    pub w: ByAffect<[f64; FEATURES]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceChange {
    pub delta_lambda_pct: f64,
    pub delta_w_l1_pct: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceChanges {
    pub negative_first: ReferenceChange,
    pub positive_first: ReferenceChange,
}

pub fn reference_fits() -> ReferenceFits {
    serde_json::from_str(REFERENCE_JSON).expect("bundled reference fixture is valid")
}

pub fn reference_json() -> &'static str {
    REFERENCE_JSON
}

/// λ pooled over every participant's basic games.
pub const BASIC_ALL_LAMBDA: f64 = 0.5432;
pub const AMT_LAMBDA: f64 = 0.77;
pub const AMT_W: [f64; FEATURES] = [0.37, 0.15, -9.85];
