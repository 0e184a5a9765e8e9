//! Rule-driven site ranking.
//!
//! A rule document is a list of statements separated by newlines or `;`:
//!
//! ```text
//! # comment
//! filter health ge Degraded
//! filter capability contains gpu; score free_cpu_fraction 1.0
//! ```

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::catalog::{Capability, Health, SiteState};
use crate::ids::{AccountId, SiteId};
use crate::resources::Amount;
use crate::slam::SlaClass;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparator {
    Eq,
    Ge,
    Contains,
}

impl Comparator {
    fn parse(s: &str) -> Option<Comparator> {
        match s {
            "eq" => Some(Comparator::Eq),
            "ge" => Some(Comparator::Ge),
            "contains" => Some(Comparator::Contains),
            _ => None,
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            Comparator::Eq => "eq",
            Comparator::Ge => "ge",
            Comparator::Contains => "contains",
        }
    }
}

/// A filter over site state. Each variant carries only the comparators that
/// make sense for its attribute.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "attribute", rename_all = "snake_case")]
pub enum Predicate {
    Health { cmp: Comparator, value: Health },
    Capability { value: Capability },
    SlaClass { value: SlaClass },
    FreeCpu { cmp: Comparator, value: Amount },
    FreeMem { cmp: Comparator, value: Amount },
}

impl Predicate {
    pub fn holds(&self, site: &SiteState) -> bool {
        let compare = |cmp: Comparator, got: Amount, want: Amount| match cmp {
            Comparator::Eq => got == want,
            _ => got >= want,
        };
        match self {
            Predicate::Health { cmp: Comparator::Eq, value } => site.health == *value,
            Predicate::Health { value, .. } => site.health >= *value,
            Predicate::Capability { value } => site.descriptor.has(*value),
            Predicate::SlaClass { value } => site.descriptor.supported_sla_classes.contains(value),
            Predicate::FreeCpu { cmp, value } => compare(*cmp, site.free().cpu, *value),
            Predicate::FreeMem { cmp, value } => compare(*cmp, site.free().mem, *value),
        }
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Predicate::Health { cmp, value } => write!(f, "filter health {} {}", cmp.as_str(), value),
            Predicate::Capability { value } => write!(f, "filter capability contains {}", value.as_str()),
            Predicate::SlaClass { value } => write!(f, "filter sla_class contains {value}"),
            Predicate::FreeCpu { cmp, value } => write!(f, "filter free_cpu {} {}", cmp.as_str(), value),
            Predicate::FreeMem { cmp, value } => write!(f, "filter free_mem {} {}", cmp.as_str(), value),
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreAttribute {
    FreeCpuFraction,
    FreeMemFraction,
    InverseLatency,
    InverseCost,
    DataLocality,
}

impl ScoreAttribute {
    pub fn parse(s: &str) -> Option<ScoreAttribute> {
        match s {
            "free_cpu_fraction" => Some(ScoreAttribute::FreeCpuFraction),
            "free_mem_fraction" => Some(ScoreAttribute::FreeMemFraction),
            "inverse_latency" => Some(ScoreAttribute::InverseLatency),
            "inverse_cost" => Some(ScoreAttribute::InverseCost),
            "data_locality" => Some(ScoreAttribute::DataLocality),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ScoreAttribute::FreeCpuFraction => "free_cpu_fraction",
            ScoreAttribute::FreeMemFraction => "free_mem_fraction",
            ScoreAttribute::InverseLatency => "inverse_latency",
            ScoreAttribute::InverseCost => "inverse_cost",
            ScoreAttribute::DataLocality => "data_locality",
        }
    }

    /// Raw, unnormalized attribute value for one site.
    pub fn raw(self, site: &SiteState, request: &PlacementRequest) -> f64 {
        let cap = &site.descriptor.capacity;
        let free = site.free();
        match self {
            ScoreAttribute::FreeCpuFraction => free.cpu.as_f64() / cap.cpu.as_f64(),
            ScoreAttribute::FreeMemFraction => free.mem.as_f64() / cap.mem.as_f64(),
            ScoreAttribute::InverseLatency => match &site.last_sample {
                Some(s) => 1.0 / (1.0 + s.latency_ms),
                None => 0.0,
            },
            ScoreAttribute::InverseCost => 1.0 / (1.0 + site.descriptor.base_cost.as_f64()),
            ScoreAttribute::DataLocality => {
                if request.data_locality.contains(site.site_id()) {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreTerm {
    pub attribute: ScoreAttribute,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", content = "name", rename_all = "snake_case")]
pub enum RuleOwner {
    Global,
    Group(String),
    User(AccountId),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuleSet {
    pub owner: RuleOwner,
    pub filters: Vec<Predicate>,
    pub score_terms: Vec<ScoreTerm>,
}

impl RuleSet {
    /// Score terms used when a document declares none.
    pub fn default_terms() -> Vec<ScoreTerm> {
        alloc::vec![
            ScoreTerm { attribute: ScoreAttribute::FreeCpuFraction, weight: 0.5 },
            ScoreTerm { attribute: ScoreAttribute::InverseCost, weight: 0.5 },
        ]
    }

    /// The ruleset applied to an owner with nothing configured.
    pub fn default_rules() -> RuleSet {
        RuleSet {
            owner: RuleOwner::Global,
            filters: alloc::vec![Predicate::Health { cmp: Comparator::Ge, value: Health::Degraded }],
            score_terms: Self::default_terms(),
        }
    }

    pub fn with_owner(mut self, owner: RuleOwner) -> RuleSet {
        self.owner = owner;
        self
    }

    /// Renders the ruleset back into rule-document text.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for p in &self.filters {
            out.push_str(&p.to_string());
            out.push('\n');
        }
        for t in &self.score_terms {
            out.push_str(&format!("score {} {:?}\n", t.attribute.as_str(), t.weight));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[error("{line}:{column}: {reason}")]
pub struct RuleError {
    pub line: usize,
    pub column: usize,
    pub reason: String,
}

struct Token<'a> {
    text: &'a str,
    column: usize,
}

fn tokens(statement: &str, base_column: usize) -> Vec<Token<'_>> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in statement.char_indices() {
        if c.is_whitespace() {
            if let Some(s) = start.take() {
                out.push(Token { text: &statement[s..i], column: base_column + statement[..s].chars().count() });
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        out.push(Token { text: &statement[s..], column: base_column + statement[..s].chars().count() });
    }
    out
}

/// Compiles a rule document. A document with no `score` statements gets
/// [`RuleSet::default_terms`].
pub fn compile_rules(text: &str) -> Result<RuleSet, RuleError> {
    let mut filters = Vec::new();
    let mut terms = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("");
        let mut column = 1;
        for stmt in line.split(';') {
            let toks = tokens(stmt, column);
            column += stmt.chars().count() + 1;
            if toks.is_empty() {
                continue;
            }
            let err = |t: &Token<'_>, reason: String| RuleError { line: ln + 1, column: t.column, reason };
            match toks[0].text {
                "filter" => {
                    if toks.len() != 4 {
                        return Err(err(&toks[0], format!("`filter` takes <attribute> <comparator> <value>, got {} words", toks.len() - 1)));
                    }
                    filters.push(predicate(&toks[1], &toks[2], &toks[3]).map_err(|(t, r)| err(t, r))?);
                }
                "score" => {
                    if toks.len() != 3 {
                        return Err(err(&toks[0], format!("`score` takes <attribute> <weight>, got {} words", toks.len() - 1)));
                    }
                    let attribute = ScoreAttribute::parse(toks[1].text)
                        .ok_or_else(|| err(&toks[1], format!("unknown score attribute `{}`", toks[1].text)))?;
                    let weight: f64 = toks[2]
                        .text
                        .parse()
                        .ok()
                        .filter(|w: &f64| w.is_finite())
                        .ok_or_else(|| err(&toks[2], format!("weight `{}` is not a finite number", toks[2].text)))?;
                    terms.push(ScoreTerm { attribute, weight });
                }
                other => return Err(err(&toks[0], format!("expected `filter` or `score`, found `{other}`"))),
            }
        }
    }
    if terms.is_empty() {
        terms = RuleSet::default_terms();
    }
    Ok(RuleSet { owner: RuleOwner::Global, filters, score_terms: terms })
}

fn predicate<'t>(attr: &'t Token<'t>, cmp: &'t Token<'t>, value: &'t Token<'t>) -> Result<Predicate, (&'t Token<'t>, String)> {
    let comparator =
        Comparator::parse(cmp.text).ok_or_else(|| (cmp, format!("unknown comparator `{}`", cmp.text)))?;
    let bad_cmp = || (cmp, format!("comparator `{}` does not apply to `{}`", cmp.text, attr.text));
    let amount = || {
        value
            .text
            .parse::<f64>()
            .ok()
            .and_then(Amount::from_f64)
            .ok_or_else(|| (value, format!("`{}` is not a non-negative number", value.text)))
    };
    match attr.text {
        "health" => {
            if comparator == Comparator::Contains {
                return Err(bad_cmp());
            }
            let h = Health::parse(value.text).ok_or_else(|| (value, format!("unknown health `{}`", value.text)))?;
            Ok(Predicate::Health { cmp: comparator, value: h })
        }
        "capability" => {
            if comparator != Comparator::Contains {
                return Err(bad_cmp());
            }
            let c = Capability::parse(value.text).ok_or_else(|| (value, format!("unknown capability `{}`", value.text)))?;
            Ok(Predicate::Capability { value: c })
        }
        "sla_class" => {
            if comparator != Comparator::Contains {
                return Err(bad_cmp());
            }
            let c = SlaClass::parse(value.text).ok_or_else(|| (value, format!("unknown SLA class `{}`", value.text)))?;
            Ok(Predicate::SlaClass { value: c })
        }
        "free_cpu" | "free_mem" => {
            if comparator == Comparator::Contains {
                return Err(bad_cmp());
            }
            let v = amount()?;
            Ok(if attr.text == "free_cpu" {
                Predicate::FreeCpu { cmp: comparator, value: v }
            } else {
                Predicate::FreeMem { cmp: comparator, value: v }
            })
        }
        other => Err((attr, format!("unknown filter attribute `{other}`"))),
    }
}

/// Per-request inputs the broker cannot derive from site state.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlacementRequest {
    /// Sites holding a complete replica of every required dataset.
    #[serde(default)]
    pub data_locality: BTreeSet<SiteId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedSite {
    pub site_id: SiteId,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RejectedSite {
    pub site_id: SiteId,
    pub failed: Predicate,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RankedSites {
    pub ordered: Vec<RankedSite>,
    pub rejected: Vec<RejectedSite>,
}

impl RankedSites {
    pub fn position(&self, site: &SiteId) -> Option<usize> {
        self.ordered.iter().position(|r| &r.site_id == site)
    }
}

/// Min-max normalization; a constant column maps to 1.0.
fn normalize(raw: &[f64]) -> Vec<f64> {
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return alloc::vec![1.0; raw.len()];
    }
    raw.iter().map(|x| (x - lo) / (hi - lo)).collect()
}

/// Filters and scores sites. Each rejected site records the first filter it
/// failed. Survivors are scored as the weighted sum of their attributes,
/// each min-max normalized across survivors, and ordered by score (higher
/// first), then lower base cost, then site id.
pub fn rank(sites: &[SiteState], request: &PlacementRequest, rules: &RuleSet) -> RankedSites {
    let mut survivors = Vec::new();
    let mut rejected = Vec::new();
    for s in sites {
        match rules.filters.iter().find(|p| !p.holds(s)) {
            Some(p) => rejected.push(RejectedSite { site_id: s.site_id().clone(), failed: p.clone() }),
            None => survivors.push(s),
        }
    }
    rejected.sort_by(|a, b| a.site_id.cmp(&b.site_id));

    // Ordering uses weights scaled by the largest magnitude so that scaling
    // every weight by the same factor leaves the key unchanged.
    let scale = rules.score_terms.iter().map(|t| t.weight.abs()).fold(0.0, f64::max);
    let mut keys = alloc::vec![0.0; survivors.len()];
    for t in &rules.score_terms {
        if scale == 0.0 {
            break;
        }
        let w = t.weight / scale;
        let raw: Vec<f64> = survivors.iter().map(|s| t.attribute.raw(s, request)).collect();
        for (k, n) in keys.iter_mut().zip(normalize(&raw)) {
            *k += w * n;
        }
    }
    let mut scored: Vec<(f64, &SiteState)> = keys.into_iter().zip(survivors).collect();
    scored.sort_by(|(ka, a), (kb, b)| {
        kb.total_cmp(ka)
            .then_with(|| a.descriptor.base_cost.cmp(&b.descriptor.base_cost))
            .then_with(|| a.site_id().cmp(b.site_id()))
    });
    let ordered = scored
        .into_iter()
        .map(|(k, s)| RankedSite { site_id: s.site_id().clone(), score: k * scale })
        .collect();
    RankedSites { ordered, rejected }
}

/// Picks the ruleset for an account: its own, else one of its groups'
/// (first by group name), else the global one, else the built-in default.
pub fn select_rules(
    rules: &alloc::collections::BTreeMap<RuleOwner, RuleSet>,
    account: &AccountId,
    groups: &BTreeSet<String>,
) -> RuleSet {
    if let Some(r) = rules.get(&RuleOwner::User(account.clone())) {
        return r.clone();
    }
    for g in groups {
        if let Some(r) = rules.get(&RuleOwner::Group(g.clone())) {
            return r.clone();
        }
    }
    rules.get(&RuleOwner::Global).cloned().unwrap_or_else(RuleSet::default_rules)
}
