//! The JSON document form of a dynamic-programming model.
//!
//! A document carries both the structural shell (horizon, states, actions,
//! transition supports) and the numeric problem data. Documents are checked
//! and compiled by [`super::validate_spec`] before any solver sees them.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Horizon {
    /// `T` epochs; decisions at `1..T-1`, terminal values at `T`.
    Finite {
        #[serde(rename = "T")]
        periods: u32,
    },
    Discounted {
        gamma: f64,
    },
    Average,
}

impl Horizon {
    pub fn kind(&self) -> HorizonKind {
        match self {
            Horizon::Finite { .. } => HorizonKind::Finite,
            Horizon::Discounted { .. } => HorizonKind::Discounted,
            Horizon::Average => HorizonKind::Average,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HorizonKind {
    Finite,
    Discounted,
    Average,
}

impl std::fmt::Display for HorizonKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            HorizonKind::Finite => "finite",
            HorizonKind::Discounted => "discounted",
            HorizonKind::Average => "average",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Maximize,
    Minimize,
}

/// Epoch-indexed replacement of a state's admissible actions (finite horizon only).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochActions {
    pub epoch: u32,
    pub state: String,
    pub actions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionRow {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epoch: Option<u32>,
    pub state: String,
    pub action: String,
    /// Next state -> probability.
    pub next: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epoch: Option<u32>,
    pub state: String,
    pub action: String,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Initial {
    State(String),
    Distribution(BTreeMap<String, f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Query {
    #[default]
    ValueAtInitial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DPSpec {
    pub horizon: Horizon,
    pub objective: Objective,
    pub states: Vec<String>,
    pub actions: BTreeMap<String, Vec<String>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub epoch_actions: Vec<EpochActions>,
    pub transitions: Vec<TransitionRow>,
    #[serde(default)]
    pub rewards: Vec<RewardEntry>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub terminal_rewards: BTreeMap<String, f64>,
    pub initial: Initial,
    #[serde(default)]
    pub query: Query,
}

impl DPSpec {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("DPSpec serialises")
    }
}
