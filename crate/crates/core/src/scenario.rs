//! Application scenarios used to re-contextualise seed problems, and the
//! rule that pairs seeds with scenarios.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::llm::{Gateway, LlmError};
use crate::prompts;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    ManufacturingAndInventory,
    TransportationAndLogistics,
    InvestmentAndRisk,
    GameStrategy,
    ResourceAllocation,
    Others,
}

impl Category {
    pub const ALL: [Category; 6] = [
        Category::ManufacturingAndInventory,
        Category::TransportationAndLogistics,
        Category::InvestmentAndRisk,
        Category::GameStrategy,
        Category::ResourceAllocation,
        Category::Others,
    ];

    pub fn title(&self) -> &'static str {
        match self {
            Category::ManufacturingAndInventory => "Manufacturing and Inventory",
            Category::TransportationAndLogistics => "Transportation and Logistics",
            Category::InvestmentAndRisk => "Investment and Risk",
            Category::GameStrategy => "Game Strategy",
            Category::ResourceAllocation => "Resource Allocation",
            Category::Others => "Others",
        }
    }

    pub fn slug(&self) -> &'static str {
        match self {
            Category::ManufacturingAndInventory => "manufacturing_and_inventory",
            Category::TransportationAndLogistics => "transportation_and_logistics",
            Category::InvestmentAndRisk => "investment_and_risk",
            Category::GameStrategy => "game_strategy",
            Category::ResourceAllocation => "resource_allocation",
            Category::Others => "others",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.title())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown scenario category '{0}'")]
pub struct UnknownCategory(pub String);

impl FromStr for Category {
    type Err = UnknownCategory;

    /// Accepts the title, the slug, or the title with `-`/`_` separators,
    /// case-insensitively.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .trim()
            .to_lowercase()
            .chars()
            .map(|c| if c == ' ' || c == '-' { '_' } else { c })
            .collect();
        Category::ALL
            .into_iter()
            .find(|c| c.slug() == norm)
            .ok_or_else(|| UnknownCategory(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub category: Category,
    pub description: String,
    pub characteristics: String,
}

impl Scenario {
    /// Builds a scenario whose id is a content hash, so reruns over cached
    /// responses reproduce the same ids.
    pub fn new(category: Category, description: impl Into<String>, characteristics: impl Into<String>) -> Self {
        let description = description.into();
        let characteristics = characteristics.into();
        let mut h = Sha256::new();
        h.update(category.slug());
        h.update([0]);
        h.update(description.as_bytes());
        let digest = hex::encode(h.finalize());
        Self { id: format!("scn-{}-{}", category.slug(), &digest[..10]), category, description, characteristics }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioBatch {
    pub scenarios: Vec<Scenario>,
    /// Requested minus parsed; nonzero means the response fell short.
    pub shortfall: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("scenario count must be at least 1")]
    ZeroCount,
    #[error(transparent)]
    Llm(#[from] LlmError),
}

fn field_value<'a>(line: &'a str, names: &[&str]) -> Option<&'a str> {
    let trimmed = line.trim().trim_start_matches(|c: char| c == '-' || c == '*' || c.is_ascii_digit() || c == '.' || c == ')').trim();
    let lower = trimmed.to_lowercase();
    for name in names {
        if lower.starts_with(name) {
            let rest = &trimmed[name.len()..];
            if let Some(rest) = rest.trim_start().strip_prefix(':') {
                return Some(rest.trim());
            }
        }
    }
    None
}

/// Parses blocks of `Description:` / `Trade-off:` lines. Items missing
/// either part are dropped.
pub fn parse_scenarios(category: Category, text: &str) -> Vec<Scenario> {
    const DESC: &[&str] = &["description"];
    const TRADE: &[&str] = &["trade-off", "tradeoff", "trade off", "characteristics"];
    let mut items: Vec<(String, Option<String>)> = Vec::new();
    for line in text.lines() {
        if let Some(d) = field_value(line, DESC) {
            items.push((d.to_string(), None));
        } else if let Some(t) = field_value(line, TRADE) {
            if let Some(last) = items.last_mut() {
                if last.1.is_none() {
                    last.1 = Some(t.to_string());
                }
            }
        }
    }
    let mut out: Vec<Scenario> = Vec::new();
    for (d, t) in items {
        let Some(t) = t else { continue };
        if d.is_empty() || t.is_empty() {
            continue;
        }
        let s = Scenario::new(category, d, t);
        if !out.iter().any(|o| o.id == s.id) {
            out.push(s);
        }
    }
    out
}

pub fn generate_scenarios(gateway: &Gateway, category: Category, n: usize) -> Result<ScenarioBatch, ScenarioError> {
    if n == 0 {
        return Err(ScenarioError::ZeroCount);
    }
    let text = gateway.chat(prompts::generate_scenarios(category, n), None)?;
    let mut scenarios = parse_scenarios(category, &text);
    scenarios.truncate(n);
    let shortfall = n - scenarios.len();
    if shortfall > 0 {
        log::warn!("scenario generation for {category} parsed {} of {n}", scenarios.len());
    }
    Ok(ScenarioBatch { scenarios, shortfall })
}

/// How seeds are matched with scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Pairing {
    /// Every seed with every scenario.
    #[default]
    Cross,
    /// Every seed with every scenario of its own category.
    SameCategory,
    /// `per_seed` scenarios drawn uniformly without replacement per seed.
    Random { per_seed: usize },
}

/// Returns (seed index, scenario index) pairs in seed-major order.
pub fn pair(seed_categories: &[Category], scenarios: &[Scenario], pairing: Pairing, rng_seed: u64) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (i, cat) in seed_categories.iter().enumerate() {
        match pairing {
            Pairing::Cross => out.extend((0..scenarios.len()).map(|j| (i, j))),
            Pairing::SameCategory => {
                out.extend(scenarios.iter().enumerate().filter(|(_, s)| s.category == *cat).map(|(j, _)| (i, j)))
            }
            Pairing::Random { per_seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(rng_seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
                let mut idx: Vec<usize> = (0..scenarios.len()).collect();
                idx.shuffle(&mut rng);
                idx.truncate(per_seed);
                idx.sort_unstable();
                out.extend(idx.into_iter().map(|j| (i, j)));
            }
        }
    }
    out
}
