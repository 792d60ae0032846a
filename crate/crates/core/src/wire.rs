//! JSON payloads of the review service, shared by server and client.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::evalsuite::ContributionMode;
use crate::human::HumanScores;
use crate::model::{AttributeKind, BudgetCheck, ExposureBudget, ExposureLevel};

/// Bumped on any incompatible payload change.
pub const API_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub api_version: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variant {
    pub alias: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlindedSample {
    pub sample_id: String,
    pub original: String,
    /// Ordered by alias; aliases are shuffled per session.
    pub variants: Vec<Variant>,
}

/// `GET /samples`; pass `session` to resume an existing session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplesResponse {
    pub session: String,
    pub samples: Vec<BlindedSample>,
}

/// `POST /ratings`: one triple for one alias of one sample. Missing
/// fields are rejected as incomplete.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingRequest {
    pub session: String,
    pub sample_id: String,
    pub alias: String,
    pub ppp: Option<i64>,
    pub sif: Option<i64>,
    pub sae: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingAck {
    pub stored: bool,
}

/// `GET /aggregate?unblind=true`. Blinded responses carry no per-method
/// data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateResponse {
    pub blinded: bool,
    pub ratings: usize,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub methods: BTreeMap<String, HumanScores>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WhatIfRequest {
    pub sample_id: String,
    pub level: ExposureLevel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhatIfResponse {
    pub sample_id: String,
    pub level: ExposureLevel,
    pub anonymized: String,
    pub rounds_used: u32,
    pub budgets: Vec<ExposureBudget>,
    pub residual_risk: BTreeMap<AttributeKind, f64>,
    pub budget_satisfied: BTreeMap<AttributeKind, BudgetCheck>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextSide {
    #[default]
    Original,
    Anonymized,
}

/// `GET /contribution?sample_id=..&attribute=..&mode=..&side=..&level=..`.
/// `level` selects a what-if rewrite for the anonymized side.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContributionQuery {
    pub sample_id: String,
    pub attribute: AttributeKind,
    #[serde(default)]
    pub mode: ContributionMode,
    #[serde(default)]
    pub side: TextSide,
    #[serde(default)]
    pub level: Option<ExposureLevel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContributionResponse {
    pub sample_id: String,
    pub attribute: AttributeKind,
    pub tokens: Vec<String>,
    pub scores: Vec<f64>,
}
