//! Placement decisions from monitoring, broker ranking, SLA constraints and
//! replica locations.
//!
//! [`matchmake`] is pure: it returns the decision together with a
//! [`MatchRecord`] holding every input it looked at, so [`replay`] can later
//! re-check the decision without access to live state.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::broker::{self, PlacementRequest, Predicate, RankedSites, RuleSet};
use crate::catalog::{Capability, Catalog, SiteState};
use crate::datamgr::{DataManager, Location};
use crate::ids::{AccountId, DatasetId, SiteId};
use crate::resources::ResourceVector;
use crate::slam::{self, PlacementAsk, SlaCaps, SlaClass, SlaManager, SlaRecord};
use crate::tosca::Locality;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeAsk {
    pub node: String,
    pub demand: ResourceVector,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchRequest {
    pub owner: AccountId,
    pub class: SlaClass,
    pub locality: Locality,
    pub capabilities: BTreeSet<Capability>,
    pub asks: Vec<NodeAsk>,
    pub datasets: Vec<DatasetId>,
    /// Sites skipped because an earlier attempt failed there.
    pub excluded: BTreeSet<SiteId>,
    /// Whether the asks must fit the site's reported free resources.
    pub check_fit: bool,
}

impl MatchRequest {
    pub fn total_ask(&self) -> ResourceVector {
        self.asks.iter().map(|a| a.demand).sum()
    }

    fn sla_ask(&self, site: &SiteId) -> PlacementAsk {
        let total = self.total_ask();
        PlacementAsk { site_id: site.clone(), cores: total.cpu, storage: total.disk }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedTransfer {
    pub dataset: DatasetId,
    pub src: SiteId,
    pub dst: SiteId,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "plan", rename_all = "snake_case")]
pub enum DataPlan {
    None,
    Colocate,
    Migrate { transfers: Vec<PlannedTransfer> },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "sla", rename_all = "snake_case")]
pub enum SlaPlan {
    Existing { record: SlaRecord },
    /// A fresh agreement to negotiate once the site is chosen; `record` is
    /// what it will contain, minus the id.
    Negotiate { class: SlaClass, caps: SlaCaps, record: SlaRecord },
}

impl SlaPlan {
    pub fn record(&self) -> &SlaRecord {
        match self {
            SlaPlan::Existing { record } | SlaPlan::Negotiate { record, .. } => record,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    Chosen,
    Excluded,
    DoesNotFit { free: ResourceVector },
    Sla { reason: String },
    NoHeadroom { dataset: DatasetId },
    /// Eligible, but a data-holding site ranked lower was preferred.
    PassedOver,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub site_id: SiteId,
    pub verdict: Verdict,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum MatchFailure {
    NoEligibleSite { detail: String },
    SlaViolation { detail: String },
}

/// Everything a decision was based on, plus the decision.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchRecord {
    pub at: u64,
    pub request: MatchRequest,
    pub snapshot: Vec<SiteState>,
    pub rules: RuleSet,
    pub broker_request: PlacementRequest,
    pub ranking: RankedSites,
    pub replicas: BTreeMap<DatasetId, Vec<Location>>,
    pub candidates: Vec<Candidate>,
    pub chosen: Option<SiteId>,
    pub sla: Option<SlaPlan>,
    pub data_plan: Option<DataPlan>,
    /// Bytes to move divided by the nominal link rate.
    pub migration_estimate_secs: Option<f64>,
    pub failure: Option<MatchFailure>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub site_id: SiteId,
    pub sla: SlaPlan,
    pub data_plan: DataPlan,
}

pub struct MatchContext<'a> {
    pub catalog: &'a Catalog,
    pub rules: &'a RuleSet,
    pub slam: &'a SlaManager,
    pub data: &'a DataManager,
    /// Bytes per second used for the migration estimate.
    pub nominal_rate: f64,
}

fn complete(locations: &[Location], site: &SiteId) -> bool {
    locations.iter().any(|l| &l.site_id == site && l.completeness >= 1.0)
}

/// Default caps for agreements negotiated during matchmaking: the whole
/// site.
pub fn default_caps(site: &SiteState) -> SlaCaps {
    SlaCaps { max_cores: site.descriptor.capacity.cpu.ceil_units(), max_storage: site.descriptor.storage_capacity }
}

fn sla_plan(ctx_slam: &SlaManager, req: &MatchRequest, site: &SiteState, now: u64) -> Result<SlaPlan, String> {
    let ask = req.sla_ask(site.site_id());
    if let Some(existing) = ctx_slam.active(&req.owner, site.site_id(), now) {
        if existing.class >= req.class {
            return match slam::check(existing, &ask, now) {
                Ok(()) => Ok(SlaPlan::Existing { record: existing.clone() }),
                Err(v) => Err(format!("existing agreement {}: {v}", existing.sla_id)),
            };
        }
    }
    if !site.descriptor.supported_sla_classes.contains(&req.class) {
        return Err(format!("site does not offer {}", req.class.as_str()));
    }
    let caps = default_caps(site);
    let record = SlaRecord {
        sla_id: crate::ids::SlaId::new(""),
        account_id: req.owner.clone(),
        site_id: site.site_id().clone(),
        class: req.class,
        max_cores: caps.max_cores,
        max_storage: caps.max_storage,
        negotiated_at: now,
        valid_until: now.saturating_add(slam::SLA_TERM_SECS),
    };
    slam::check(&record, &ask, now).map_err(|v| format!("site limits: {v}"))?;
    Ok(SlaPlan::Negotiate { class: req.class, caps, record })
}

/// Chooses a site. Candidates are walked in rank order; the first one that
/// is not excluded, fits, passes its SLA check and (for migrations) has
/// storage headroom wins. With `prefer_data`, the best such site holding
/// every dataset wins over better-ranked sites without the data.
pub fn matchmake(ctx: &MatchContext<'_>, req: &MatchRequest, now: u64) -> (MatchRecord, Result<Decision, MatchFailure>) {
    let snapshot = ctx.catalog.snapshot(now);
    let mut rules = ctx.rules.clone();
    for c in &req.capabilities {
        rules.filters.push(Predicate::Capability { value: *c });
    }
    let mut replicas = BTreeMap::new();
    for ds in &req.datasets {
        replicas.insert(ds.clone(), ctx.data.locate(ds).unwrap_or_default());
    }
    let holders: BTreeSet<SiteId> = snapshot
        .iter()
        .map(|s| s.site_id().clone())
        .filter(|s| !req.datasets.is_empty() && replicas.values().all(|l: &Vec<Location>| complete(l, s)))
        .collect();
    let broker_request = PlacementRequest { data_locality: holders.clone() };
    let ranking = broker::rank(&snapshot, &broker_request, &rules);

    let by_id: BTreeMap<&SiteId, &SiteState> = snapshot.iter().map(|s| (s.site_id(), s)).collect();
    let mut candidates: Vec<Candidate> = Vec::new();
    let mut eligible: Vec<(SiteId, SlaPlan)> = Vec::new();
    let mut sla_only = true;
    for r in &ranking.ordered {
        let site = by_id[&r.site_id];
        let verdict = if req.excluded.contains(&r.site_id) {
            Some(Verdict::Excluded)
        } else if req.check_fit && !req.total_ask().fits_in(&site.free()) {
            Some(Verdict::DoesNotFit { free: site.free() })
        } else {
            match sla_plan(ctx.slam, req, site, now) {
                Err(reason) => Some(Verdict::Sla { reason }),
                Ok(plan) => {
                    let needs_copy = req.datasets.iter().find(|ds| {
                        !complete(&replicas[*ds], &r.site_id) && !ctx.data.has_headroom(ctx.catalog, &r.site_id, ds)
                    });
                    match needs_copy {
                        Some(ds) => Some(Verdict::NoHeadroom { dataset: ds.clone() }),
                        None => {
                            eligible.push((r.site_id.clone(), plan));
                            None
                        }
                    }
                }
            }
        };
        if let Some(v) = verdict {
            if !matches!(v, Verdict::Sla { .. }) {
                sla_only = false;
            }
            candidates.push(Candidate { site_id: r.site_id.clone(), verdict: v });
        } else {
            candidates.push(Candidate { site_id: r.site_id.clone(), verdict: Verdict::PassedOver });
        }
    }

    let pick = match req.locality {
        Locality::PreferData if !holders.is_empty() => {
            eligible.iter().position(|(s, _)| holders.contains(s)).or(if eligible.is_empty() { None } else { Some(0) })
        }
        _ => (!eligible.is_empty()).then_some(0),
    };

    let mut record = MatchRecord {
        at: now,
        request: req.clone(),
        snapshot: snapshot.clone(),
        rules,
        broker_request,
        ranking: ranking.clone(),
        replicas: replicas.clone(),
        candidates,
        chosen: None,
        sla: None,
        data_plan: None,
        migration_estimate_secs: None,
        failure: None,
    };

    let orphan = req.datasets.iter().find(|ds| !replicas[*ds].iter().any(|l| l.completeness >= 1.0));
    let Some(idx) = pick.filter(|_| orphan.is_none()) else {
        let failure = if let Some(ds) = orphan {
            MatchFailure::NoEligibleSite { detail: format!("dataset {ds} has no complete replica anywhere") }
        } else if !ranking.ordered.is_empty() && sla_only {
            MatchFailure::SlaViolation { detail: String::from("every ranked site failed its SLA check") }
        } else {
            MatchFailure::NoEligibleSite {
                detail: format!("{} ranked, {} rejected by filters", ranking.ordered.len(), ranking.rejected.len()),
            }
        };
        record.failure = Some(failure.clone());
        return (record, Err(failure));
    };
    let (site_id, sla) = eligible.swap_remove(idx);
    for c in record.candidates.iter_mut().filter(|c| c.site_id == site_id) {
        c.verdict = Verdict::Chosen;
    }

    let mut transfers = Vec::new();
    let mut bytes = 0u64;
    for ds in &req.datasets {
        let locs = &replicas[ds];
        if complete(locs, &site_id) {
            continue;
        }
        // locate orders by completeness, so the first complete one is the best source
        if let Some(src) = locs.iter().find(|l| l.completeness >= 1.0) {
            transfers.push(PlannedTransfer { dataset: ds.clone(), src: src.site_id.clone(), dst: site_id.clone() });
            bytes += ctx.data.dataset(ds).map(|d| d.total_bytes()).unwrap_or(0);
        }
    }
    let data_plan = if req.datasets.is_empty() {
        DataPlan::None
    } else if transfers.is_empty() {
        DataPlan::Colocate
    } else {
        record.migration_estimate_secs = Some(if ctx.nominal_rate > 0.0 { bytes as f64 / ctx.nominal_rate } else { f64::INFINITY });
        DataPlan::Migrate { transfers }
    };
    record.chosen = Some(site_id.clone());
    record.sla = Some(sla.clone());
    record.data_plan = Some(data_plan.clone());
    (record, Ok(Decision { site_id, sla, data_plan }))
}

/// Re-checks a recorded decision against its recorded inputs only.
pub fn replay(record: &MatchRecord) -> Result<(), String> {
    let ranking = broker::rank(&record.snapshot, &record.broker_request, &record.rules);
    if ranking != record.ranking {
        return Err(String::from("ranking differs from the recorded one"));
    }
    let holders: BTreeSet<SiteId> = record
        .snapshot
        .iter()
        .map(|s| s.site_id().clone())
        .filter(|s| !record.request.datasets.is_empty() && record.replicas.values().all(|l| complete(l, s)))
        .collect();
    if holders != record.broker_request.data_locality {
        return Err(String::from("data locality indicators disagree with the replica map"));
    }
    let orphaned = record.replicas.values().any(|l| !l.iter().any(|x| x.completeness >= 1.0));
    let Some(chosen) = &record.chosen else {
        if orphaned {
            return Ok(());
        }
        return match record.candidates.iter().find(|c| matches!(c.verdict, Verdict::PassedOver | Verdict::Chosen)) {
            Some(c) => Err(format!("no site chosen although {} was eligible", c.site_id)),
            None => Ok(()),
        };
    };
    // capability and health filters
    let pos = ranking.position(chosen).ok_or_else(|| format!("{chosen} is not among the ranked sites"))?;
    let state = record.snapshot.iter().find(|s| s.site_id() == chosen).ok_or("chosen site missing from snapshot")?;
    if let Some(p) = record.rules.filters.iter().find(|p| !p.holds(state)) {
        return Err(format!("{chosen} fails filter {p}"));
    }
    if record.request.excluded.contains(chosen) {
        return Err(format!("{chosen} was excluded"));
    }
    // resource fit
    if record.request.check_fit && !record.request.total_ask().fits_in(&state.free()) {
        return Err(format!("asks do not fit {chosen}"));
    }
    // SLA
    let sla = record.sla.as_ref().ok_or("decision without SLA plan")?;
    let r = sla.record();
    if &r.site_id != chosen || r.account_id != record.request.owner || r.class < record.request.class {
        return Err(String::from("SLA record does not cover this placement"));
    }
    if !state.descriptor.supported_sla_classes.contains(&r.class) {
        return Err(format!("{chosen} does not offer {}", r.class.as_str()));
    }
    slam::check(r, &record.request.sla_ask(chosen), record.at).map_err(|v| format!("SLA check fails: {v}"))?;
    // data
    let plan = record.data_plan.as_ref().ok_or("decision without data plan")?;
    match plan {
        DataPlan::None if !record.request.datasets.is_empty() => return Err(String::from("datasets ignored")),
        DataPlan::Colocate if !holders.contains(chosen) => return Err(format!("{chosen} lacks a complete replica")),
        DataPlan::Migrate { transfers } => {
            for ds in &record.request.datasets {
                let has = complete(&record.replicas[ds], chosen);
                let moved = transfers.iter().any(|t| &t.dataset == ds && &t.dst == chosen && complete(&record.replicas[ds], &t.src));
                if !has && !moved {
                    return Err(format!("dataset {ds} neither present nor moved"));
                }
            }
        }
        _ => {}
    }
    // every better-ranked site must have been turned down for a reason
    for c in &record.candidates {
        if ranking.position(&c.site_id).is_some_and(|p| p < pos) && matches!(c.verdict, Verdict::Chosen) {
            return Err(String::from("two chosen sites"));
        }
    }
    if record.request.locality == Locality::PreferData && !holders.is_empty() && !holders.contains(chosen) {
        if let Some(c) = record.candidates.iter().find(|c| holders.contains(&c.site_id) && matches!(c.verdict, Verdict::PassedOver)) {
            return Err(format!("data holder {} was eligible but passed over", c.site_id));
        }
    }
    Ok(())
}

