//! Deployment engine.
//!
//! A deployment moves through an explicit lifecycle: its template is
//! validated, matchmaking picks a site, data is migrated when the plan
//! calls for it, and then either virtual machines are provisioned on the
//! simulated site (scenario A) or services and jobs are handed to the
//! two-level cluster (scenario B). [`Orchestrator::supervise`] advances
//! every deployment by as many steps as the current state of the world
//! allows.

pub mod iaas;
pub mod matchmaking;

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::autoscaler::{self, ScalingPolicy};
use crate::broker::{self, RuleOwner, RuleSet};
use crate::catalog::{Capability, Catalog};
use crate::datamgr::{DataManager, TransferState};
use crate::ids::{AccountId, DatasetId, DeploymentId, InstanceId, JobId, ServiceId, SiteId, SlaId, TransferId};
use crate::msa::{Cluster, JobSpec, JobState, ServiceSpec, TaskOwner};
use crate::resources::{Amount, ResourceVector};
use crate::slam::{SlaClass, SlaManager};
use crate::tosca::{
    self, NodeKind, NodeTemplate, ParseError, RequirementKind, Scenario, TemplateDocument, ValidationReport, Value,
};

use iaas::{Iaas, InstanceOwner, InstanceState, RequestOptions};
use matchmaking::{DataPlan, MatchContext, MatchFailure, MatchRecord, MatchRequest, NodeAsk, SlaPlan};

#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DeploymentState {
    Created,
    Validated,
    Matched,
    MigratingData,
    Provisioning,
    Configuring,
    Running,
    Scaling,
    Deleting,
    Deleted,
    Failed,
}

impl DeploymentState {
    pub const ALL: [DeploymentState; 11] = [
        DeploymentState::Created,
        DeploymentState::Validated,
        DeploymentState::Matched,
        DeploymentState::MigratingData,
        DeploymentState::Provisioning,
        DeploymentState::Configuring,
        DeploymentState::Running,
        DeploymentState::Scaling,
        DeploymentState::Deleting,
        DeploymentState::Deleted,
        DeploymentState::Failed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DeploymentState::Created => "CREATED",
            DeploymentState::Validated => "VALIDATED",
            DeploymentState::Matched => "MATCHED",
            DeploymentState::MigratingData => "MIGRATING_DATA",
            DeploymentState::Provisioning => "PROVISIONING",
            DeploymentState::Configuring => "CONFIGURING",
            DeploymentState::Running => "RUNNING",
            DeploymentState::Scaling => "SCALING",
            DeploymentState::Deleting => "DELETING",
            DeploymentState::Deleted => "DELETED",
            DeploymentState::Failed => "FAILED",
        }
    }
}

impl fmt::Display for DeploymentState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Edges of the lifecycle graph. Every state except DELETED may fail or
/// be deleted; FAILED may go back to MATCHED when retried.
pub fn legal(from: DeploymentState, to: DeploymentState) -> bool {
    use DeploymentState::*;
    match (from, to) {
        (Deleted, _) | (Deleting, Failed) => false,
        (Deleting, Deleted) => true,
        (Failed, Matched) | (Failed, Deleting) => true,
        (Failed, _) => false,
        (_, Failed) | (_, Deleting) => true,
        (Created, Validated)
        | (Validated, Matched)
        | (Matched, MigratingData)
        | (Matched, Provisioning)
        | (MigratingData, Provisioning)
        | (Provisioning, Configuring)
        | (Configuring, Provisioning)
        | (Configuring, Running)
        | (Running, Scaling)
        | (Scaling, Running) => true,
        _ => false,
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    Validation,
    NoSite,
    Sla,
    Provisioning,
    Capacity,
    Migration,
    Instance,
    Job,
}

impl FailureReason {
    pub fn as_str(self) -> &'static str {
        match self {
            FailureReason::Validation => "validation",
            FailureReason::NoSite => "no_site",
            FailureReason::Sla => "sla",
            FailureReason::Provisioning => "provisioning",
            FailureReason::Capacity => "capacity",
            FailureReason::Migration => "migration",
            FailureReason::Instance => "instance",
            FailureReason::Job => "job",
        }
    }

    /// Failures worth another matchmaking round on a different site.
    fn retryable(self) -> bool {
        matches!(self, FailureReason::Provisioning | FailureReason::Migration)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    pub reason: FailureReason,
    pub detail: String,
    pub at: u64,
    /// False once no further retry will happen.
    pub retryable: bool,
    pub site: Option<SiteId>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub at: u64,
    pub state: DeploymentState,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Endpoint {
    pub name: String,
    pub address: String,
    /// Access credential for the deployment owner, filled in by the platform.
    #[serde(default)]
    pub credential: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "plan", rename_all = "snake_case")]
pub enum PlacementData {
    None,
    Colocate,
    Migrate { transfers: Vec<TransferId> },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placement {
    pub site_id: SiteId,
    pub asks: Vec<NodeAsk>,
    pub sla_id: SlaId,
    pub data_plan: PlacementData,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigProgress {
    pub steps: Vec<String>,
    pub done: usize,
    pub step_started: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Deployment {
    pub deployment_id: DeploymentId,
    pub owner: AccountId,
    /// Group claims of the submitting token; they select the broker rules.
    pub owner_groups: BTreeSet<String>,
    pub template: TemplateDocument,
    pub report: ValidationReport,
    pub scenario: Scenario,
    pub state: DeploymentState,
    pub placement: Option<Placement>,
    pub endpoints: Vec<Endpoint>,
    pub history: Vec<HistoryEntry>,
    pub failure: Option<Failure>,
    /// FAILED to MATCHED transitions so far.
    pub retries: u32,
    /// Replacement instances requested so far.
    pub repairs: u32,
    pub matches: Vec<MatchRecord>,
    pub excluded: BTreeMap<SiteId, u64>,
    /// Compute node name to its current instance.
    pub instances: BTreeMap<String, InstanceId>,
    pub config: Option<ConfigProgress>,
    pub services: Vec<ServiceId>,
    pub jobs: Vec<JobId>,
    pub capacity_strikes: u32,
    pub last_strike: Option<u64>,
    pub created_at: u64,
}

impl Deployment {
    pub fn is_terminal(&self) -> bool {
        match self.state {
            DeploymentState::Deleted => true,
            DeploymentState::Failed => !self.failure.as_ref().is_some_and(|f| f.retryable),
            _ => false,
        }
    }

    pub fn sla_class(&self) -> SlaClass {
        self.template.sla_class().unwrap_or(SlaClass::Bronze)
    }

    /// Checks that the recorded history is a path through the lifecycle
    /// graph starting at CREATED.
    pub fn check_history(&self) -> Result<(), String> {
        let mut prev: Option<DeploymentState> = None;
        for h in &self.history {
            match prev {
                None if h.state != DeploymentState::Created => {
                    return Err(format!("{} starts at {}", self.deployment_id, h.state));
                }
                Some(p) if !legal(p, h.state) => {
                    return Err(format!("{}: illegal {} -> {}", self.deployment_id, p, h.state));
                }
                _ => {}
            }
            prev = Some(h.state);
        }
        if prev != Some(self.state) {
            return Err(format!("{}: history does not end at {}", self.deployment_id, self.state));
        }
        if !self.endpoints.is_empty() && !matches!(self.state, DeploymentState::Running | DeploymentState::Scaling) {
            return Err(format!("{}: endpoints while {}", self.deployment_id, self.state));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeploymentEvent {
    pub deployment_id: DeploymentId,
    pub at: u64,
    pub from: Option<DeploymentState>,
    pub to: DeploymentState,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, thiserror::Error)]
pub enum OrchestratorError {
    #[error("unknown deployment {0}")]
    UnknownDeployment(DeploymentId),
    #[error("template does not parse: {0}")]
    Parse(ParseError),
    #[error("deployment {id} is {state}; cannot {op}")]
    InvalidState { id: DeploymentId, state: DeploymentState, op: String },
    #[error("invalid request: {0}")]
    Invalid(String),
}

impl OrchestratorError {
    pub fn code(&self) -> &'static str {
        match self {
            OrchestratorError::UnknownDeployment(_) => "UNKNOWN_DEPLOYMENT",
            OrchestratorError::Parse(e) => e.code(),
            OrchestratorError::InvalidState { .. } => "INVALID_STATE",
            OrchestratorError::Invalid(_) => "BAD_REQUEST",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrchestratorConfig {
    pub retry_limit: u32,
    /// Seconds between a failure and its retry.
    pub retry_backoff: u64,
    /// Seconds a failed site stays excluded from matchmaking.
    pub exclusion_cooldown: u64,
    /// Configuration seconds per node type name.
    pub config_delays: BTreeMap<String, u64>,
    /// Bytes per second assumed when estimating migration time.
    pub nominal_rate: f64,
}

impl Default for OrchestratorConfig {
    fn default() -> Self {
        let mut config_delays = BTreeMap::new();
        config_delays.insert(String::from("Compute"), 5);
        config_delays.insert(String::from("SoftwareComponent"), 10);
        OrchestratorConfig {
            retry_limit: 3,
            retry_backoff: 30,
            exclusion_cooldown: 300,
            config_delays,
            nominal_rate: 100e6,
        }
    }
}

/// Mutable view of the other modules a deployment touches.
pub struct World<'a> {
    pub catalog: &'a Catalog,
    pub rules: &'a BTreeMap<RuleOwner, RuleSet>,
    pub slam: &'a mut SlaManager,
    pub data: &'a mut DataManager,
    pub cluster: &'a mut Cluster,
    pub iaas: &'a mut Iaas,
    pub scaling: &'a ScalingPolicy,
    /// Cluster nodes requested and not yet joined.
    pub cluster_in_flight: u32,
}

fn demand_of(n: &NodeTemplate) -> ResourceVector {
    let amount = |k: &str| n.prop_f64(k).and_then(Amount::from_f64).unwrap_or(Amount::ZERO);
    ResourceVector { cpu: amount("cpu"), mem: amount("memory"), disk: amount("disk") }
}

fn int_prop(n: &NodeTemplate, key: &str, default: u64) -> u64 {
    n.prop(key).and_then(Value::as_i64).map(|v| v.max(0) as u64).unwrap_or(default)
}

fn infer_scenario(t: &TemplateDocument) -> Scenario {
    if t.node_templates.iter().any(|n| matches!(n.kind, NodeKind::LongRunningService | NodeKind::BatchJob)) {
        Scenario::B
    } else {
        Scenario::A
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Orchestrator {
    pub config: OrchestratorConfig,
    deployments: BTreeMap<DeploymentId, Deployment>,
    next_id: u64,
}

impl Orchestrator {
    pub fn new(config: OrchestratorConfig) -> Self {
        Orchestrator { config, deployments: BTreeMap::new(), next_id: 0 }
    }

    pub fn deployment(&self, id: &DeploymentId) -> Option<&Deployment> {
        self.deployments.get(id)
    }

    pub fn deployments(&self) -> impl Iterator<Item = &Deployment> {
        self.deployments.values()
    }

    pub fn deployment_mut(&mut self, id: &DeploymentId) -> Option<&mut Deployment> {
        self.deployments.get_mut(id)
    }

    /// Parses and validates a template and records the deployment. A
    /// template that parses but fails validation yields a FAILED deployment
    /// carrying the report.
    #[allow(clippy::too_many_arguments)]
    pub fn submit(
        &mut self,
        owner: &AccountId,
        owner_groups: &BTreeSet<String>,
        template_text: &str,
        inputs: &BTreeMap<String, Value>,
        scenario_hint: Option<Scenario>,
        now: u64,
    ) -> Result<(DeploymentId, Vec<DeploymentEvent>), OrchestratorError> {
        let parsed = tosca::parse_template(template_text).map_err(OrchestratorError::Parse)?;
        let report = tosca::validate_with_inputs(&parsed, inputs);
        let (resolved, _) = tosca::resolve_inputs(&parsed, inputs);
        self.next_id += 1;
        let id = DeploymentId::new(format!("dep-{:06}", self.next_id));
        let scenario = scenario_hint.or(resolved.scenario_hint()).unwrap_or_else(|| infer_scenario(&resolved));
        let d = Deployment {
            deployment_id: id.clone(),
            owner: owner.clone(),
            owner_groups: owner_groups.clone(),
            template: resolved,
            report: report.clone(),
            scenario,
            state: DeploymentState::Created,
            placement: None,
            endpoints: Vec::new(),
            history: alloc::vec![HistoryEntry { at: now, state: DeploymentState::Created, detail: String::from("submitted") }],
            failure: None,
            retries: 0,
            repairs: 0,
            matches: Vec::new(),
            excluded: BTreeMap::new(),
            instances: BTreeMap::new(),
            config: None,
            services: Vec::new(),
            jobs: Vec::new(),
            capacity_strikes: 0,
            last_strike: None,
            created_at: now,
        };
        let mut events = alloc::vec![DeploymentEvent {
            deployment_id: id.clone(),
            at: now,
            from: None,
            to: DeploymentState::Created,
            detail: String::from("submitted"),
        }];
        self.deployments.insert(id.clone(), d);
        let d = self.deployments.get_mut(&id).expect("inserted");
        if report.is_deployable() {
            let detail = format!("scenario {:?}, {} warnings", scenario, report.warnings.len());
            events.push(transition(d, DeploymentState::Validated, now, detail));
        } else {
            let codes: Vec<&str> = report.errors.iter().map(|e| e.code.as_str()).collect();
            let detail = format!("validation failed: {}", codes.join(", "));
            d.failure = Some(Failure { reason: FailureReason::Validation, detail: detail.clone(), at: now, retryable: false, site: None });
            events.push(transition(d, DeploymentState::Failed, now, detail));
        }
        Ok((id, events))
    }

    /// Releases everything the deployment holds and marks it DELETED.
    /// Deleting a deleted or permanently failed deployment changes nothing.
    pub fn delete(&mut self, id: &DeploymentId, world: &mut World<'_>, now: u64) -> Result<Vec<DeploymentEvent>, OrchestratorError> {
        let d = self.deployments.get_mut(id).ok_or_else(|| OrchestratorError::UnknownDeployment(id.clone()))?;
        if d.is_terminal() {
            return Ok(Vec::new());
        }
        let mut events = alloc::vec![transition(d, DeploymentState::Deleting, now, String::from("delete requested"))];
        release(d, world);
        d.endpoints.clear();
        events.push(transition(d, DeploymentState::Deleted, now, String::from("resources released")));
        Ok(events)
    }

    /// Sets the replica target of every service in a scenario B deployment.
    pub fn scale(&mut self, id: &DeploymentId, replicas: u32, world: &mut World<'_>, now: u64) -> Result<Vec<DeploymentEvent>, OrchestratorError> {
        let d = self.deployments.get_mut(id).ok_or_else(|| OrchestratorError::UnknownDeployment(id.clone()))?;
        let invalid = |d: &Deployment| OrchestratorError::InvalidState { id: id.clone(), state: d.state, op: String::from("scale") };
        if d.scenario != Scenario::B || d.services.is_empty() || !matches!(d.state, DeploymentState::Running | DeploymentState::Scaling) {
            return Err(invalid(d));
        }
        if replicas == 0 {
            return Err(OrchestratorError::Invalid(String::from("replicas must be at least 1")));
        }
        for s in &d.services {
            world.cluster.scale_service(s, replicas).map_err(|e| OrchestratorError::Invalid(e.to_string()))?;
        }
        let mut events = Vec::new();
        if d.state == DeploymentState::Running {
            events.push(transition(d, DeploymentState::Scaling, now, format!("replicas -> {replicas}")));
        }
        Ok(events)
    }

    /// Advances every live deployment as far as the world allows.
    pub fn supervise(&mut self, world: &mut World<'_>, now: u64) -> Vec<DeploymentEvent> {
        let mut events = Vec::new();
        let ids: Vec<DeploymentId> = self.deployments.iter().filter(|(_, d)| !d.is_terminal()).map(|(id, _)| id.clone()).collect();
        for id in ids {
            let d = self.deployments.get_mut(&id).expect("deployment");
            // each pass may take several steps; the bound guards against a
            // cycle in the driver itself
            for _ in 0..16 {
                let before = events.len();
                drive(&self.config, d, world, now, &mut events);
                if events.len() == before {
                    break;
                }
            }
        }
        events
    }
}

fn transition(d: &mut Deployment, to: DeploymentState, now: u64, detail: String) -> DeploymentEvent {
    let from = d.state;
    debug_assert!(legal(from, to), "illegal transition {from} -> {to}");
    d.state = to;
    d.history.push(HistoryEntry { at: now, state: to, detail: detail.clone() });
    DeploymentEvent { deployment_id: d.deployment_id.clone(), at: now, from: Some(from), to, detail }
}

/// Gives back instances, services, jobs and in-flight transfers.
fn release(d: &mut Deployment, world: &mut World<'_>) {
    for (_, inst) in core::mem::take(&mut d.instances) {
        let _ = world.iaas.terminate(&inst);
    }
    for s in core::mem::take(&mut d.services) {
        let _ = world.cluster.remove_service(&s);
    }
    for j in &d.jobs {
        let _ = world.cluster.cancel_job(j, 0);
    }
    if let Some(Placement { data_plan: PlacementData::Migrate { transfers }, .. }) = &d.placement {
        for t in transfers {
            if world.data.transfer(t).is_some_and(|j| j.state.in_flight()) {
                let _ = world.data.cancel(t);
            }
        }
    }
    d.config = None;
}

fn fail(d: &mut Deployment, world: &mut World<'_>, config: &OrchestratorConfig, reason: FailureReason, detail: String, now: u64) -> DeploymentEvent {
    release(d, world);
    d.endpoints.clear();
    let site = d.placement.as_ref().map(|p| p.site_id.clone());
    let retryable = reason.retryable() && d.retries < config.retry_limit;
    if retryable {
        if let Some(s) = &site {
            d.excluded.insert(s.clone(), now + config.exclusion_cooldown);
        }
    }
    d.failure = Some(Failure { reason, detail: detail.clone(), at: now, retryable, site });
    transition(d, DeploymentState::Failed, now, format!("{}: {detail}", reason.as_str()))
}

fn match_request(d: &Deployment, now: u64) -> MatchRequest {
    let t = &d.template;
    let mut capabilities = BTreeSet::new();
    let mut asks = Vec::new();
    let mut datasets = Vec::new();
    for n in &t.node_templates {
        match (&n.kind, d.scenario) {
            (NodeKind::Compute, Scenario::A) => {
                if n.prop("gpu").and_then(Value::as_bool) == Some(true) {
                    capabilities.insert(Capability::Gpu);
                }
                if n.prop("infiniband").and_then(Value::as_bool) == Some(true) {
                    capabilities.insert(Capability::Infiniband);
                }
                asks.push(NodeAsk { node: n.name.clone(), demand: demand_of(n) });
            }
            (NodeKind::LongRunningService, Scenario::B) => {
                let replicas = int_prop(n, "replicas", 1);
                asks.push(NodeAsk { node: n.name.clone(), demand: demand_of(n).times(replicas) });
            }
            (NodeKind::BatchJob, Scenario::B) => asks.push(NodeAsk { node: n.name.clone(), demand: demand_of(n) }),
            (NodeKind::DataRequirement, _) => {
                if let Some(ds) = n.prop_str("dataset") {
                    datasets.push(DatasetId::new(ds));
                }
            }
            _ => {}
        }
    }
    datasets.sort();
    datasets.dedup();
    MatchRequest {
        owner: d.owner.clone(),
        class: d.sla_class(),
        locality: t.locality(),
        capabilities,
        asks,
        datasets,
        excluded: d.excluded.iter().filter(|(_, until)| now < **until).map(|(s, _)| s.clone()).collect(),
        // cluster nodes come and go with the autoscaler, so only virtual
        // machines are fitted against the site's free resources
        check_fit: d.scenario == Scenario::A,
    }
}

/// Runs matchmaking and, on success, commits the SLA and schedules
/// transfers. Returns the events of the resulting transitions.
fn matchmake(d: &mut Deployment, world: &mut World<'_>, config: &OrchestratorConfig, now: u64, events: &mut Vec<DeploymentEvent>) {
    let req = match_request(d, now);
    let rules = broker::select_rules(world.rules, &d.owner, &d.owner_groups);
    let ctx = MatchContext { catalog: world.catalog, rules: &rules, slam: world.slam, data: world.data, nominal_rate: config.nominal_rate };
    let (record, outcome) = matchmaking::matchmake(&ctx, &req, now);
    d.matches.push(record);
    let decision = match outcome {
        Ok(dec) => dec,
        Err(f) => {
            let (reason, detail) = match f {
                MatchFailure::NoEligibleSite { detail } => (FailureReason::NoSite, detail),
                MatchFailure::SlaViolation { detail } => (FailureReason::Sla, detail),
            };
            if d.state == DeploymentState::Failed {
                // a retry that found nowhere to go keeps the original failure
                if let Some(fl) = d.failure.as_mut() {
                    fl.detail = format!("{}; retry {} found no site: {detail}", fl.detail, d.retries + 1);
                }
                return;
            }
            events.push(fail(d, world, config, reason, detail, now));
            return;
        }
    };
    let sla_id = match &decision.sla {
        SlaPlan::Existing { record } => record.sla_id.clone(),
        SlaPlan::Negotiate { class, caps, .. } => {
            match world.slam.negotiate(world.catalog, &d.owner, &decision.site_id, *class, caps.clone(), now) {
                Ok(r) => r.sla_id,
                Err(e) => {
                    events.push(fail(d, world, config, FailureReason::Sla, e.to_string(), now));
                    return;
                }
            }
        }
    };
    let from_failed = d.state == DeploymentState::Failed;
    if from_failed {
        d.retries += 1;
        d.failure = None;
    }
    let est = d.matches.last().and_then(|m| m.migration_estimate_secs);
    let detail = match &decision.data_plan {
        DataPlan::None => format!("site {}, {}", decision.site_id, sla_id),
        DataPlan::Colocate => format!("site {}, {}, data colocated", decision.site_id, sla_id),
        DataPlan::Migrate { transfers } => format!(
            "site {}, {}, migrating {} dataset(s), estimated {:.0} s",
            decision.site_id,
            sla_id,
            transfers.len(),
            est.unwrap_or(0.0)
        ),
    };
    d.placement = Some(Placement {
        site_id: decision.site_id.clone(),
        asks: req.asks.clone(),
        sla_id,
        data_plan: match &decision.data_plan {
            DataPlan::None => PlacementData::None,
            DataPlan::Colocate => PlacementData::Colocate,
            DataPlan::Migrate { .. } => PlacementData::Migrate { transfers: Vec::new() },
        },
    });
    let retry_note = if from_failed { format!(" (retry {})", d.retries) } else { String::new() };
    events.push(transition(d, DeploymentState::Matched, now, format!("{detail}{retry_note}")));
    if let DataPlan::Migrate { transfers } = decision.data_plan {
        let mut ids = Vec::new();
        for t in &transfers {
            match world.data.schedule_transfer(world.catalog, &t.dataset, &t.src, &t.dst) {
                Ok(id) => ids.push(id),
                Err(e) => {
                    if let Some(p) = d.placement.as_mut() {
                        p.data_plan = PlacementData::Migrate { transfers: ids };
                    }
                    events.push(fail(d, world, config, FailureReason::Migration, e.to_string(), now));
                    return;
                }
            }
        }
        let n = ids.len();
        if let Some(p) = d.placement.as_mut() {
            p.data_plan = PlacementData::Migrate { transfers: ids };
        }
        events.push(transition(d, DeploymentState::MigratingData, now, format!("{n} transfer(s) scheduled")));
    }
}

fn request_options(class: SlaClass) -> RequestOptions {
    RequestOptions { allow_spot: class.may_run_on_spot(), preempt_spot: class.may_preempt_spot() }
}

fn compute_nodes(d: &Deployment) -> Vec<String> {
    let order = tosca::resolve_order(&d.template).unwrap_or_default();
    order
        .into_iter()
        .filter(|n| d.template.node(n).is_some_and(|t| t.kind == NodeKind::Compute))
        .collect()
}

fn request_instance(d: &Deployment, node: &str, world: &mut World<'_>, now: u64) -> Result<InstanceId, String> {
    let site = &d.placement.as_ref().expect("placed").site_id;
    let t = d.template.node(node).expect("compute node");
    let owner = InstanceOwner::Deployment { deployment_id: d.deployment_id.clone(), node: node.to_string() };
    world.iaas.request(site, demand_of(t), owner, request_options(d.sla_class()), now).map_err(|e| e.to_string())
}

fn start_execution(d: &mut Deployment, world: &mut World<'_>, config: &OrchestratorConfig, now: u64, events: &mut Vec<DeploymentEvent>) {
    match d.scenario {
        Scenario::A => {
            for node in compute_nodes(d) {
                match request_instance(d, &node, world, now) {
                    Ok(id) => {
                        d.instances.insert(node, id);
                    }
                    Err(e) => {
                        events.push(fail(d, world, config, FailureReason::Provisioning, e, now));
                        return;
                    }
                }
            }
            let n = d.instances.len();
            events.push(transition(d, DeploymentState::Provisioning, now, format!("{n} instance(s) requested")));
        }
        Scenario::B => {
            let dep = d.deployment_id.clone();
            let name = |n: &str| format!("{dep}/{n}");
            let mut jobs = Vec::new();
            for n in &d.template.node_templates {
                match n.kind {
                    NodeKind::LongRunningService => {
                        let spec = ServiceSpec {
                            service_id: ServiceId::new(name(&n.name)),
                            demand_per_instance: demand_of(n),
                            replicas_target: int_prop(n, "replicas", 1) as u32,
                            health_endpoint: format!("{}/health", name(&n.name)),
                            deployment: Some(dep.clone()),
                        };
                        let id = spec.service_id.clone();
                        if let Err(e) = world.cluster.submit_service(spec) {
                            events.push(fail(d, world, config, FailureReason::Provisioning, e.to_string(), now));
                            return;
                        }
                        d.services.push(id);
                    }
                    NodeKind::BatchJob => {
                        let depends_on = n
                            .requirements
                            .iter()
                            .filter(|r| matches!(r.kind, Ok(RequirementKind::Dependency)))
                            .filter(|r| d.template.node(&r.target).is_some_and(|t| t.kind == NodeKind::BatchJob))
                            .map(|r| JobId::new(name(&r.target)))
                            .collect();
                        jobs.push(JobSpec {
                            job_id: JobId::new(name(&n.name)),
                            demand: demand_of(n),
                            depends_on,
                            duration: int_prop(n, "duration", 60),
                            max_attempts: int_prop(n, "max_attempts", 3).max(1) as u32,
                            simulate_failures: int_prop(n, "simulate_failures", 0) as u32,
                            deployment: Some(dep.clone()),
                        });
                    }
                    _ => {}
                }
            }
            let ids: Vec<JobId> = jobs.iter().map(|j| j.job_id.clone()).collect();
            if let Err(e) = world.cluster.submit_jobs(jobs) {
                events.push(fail(d, world, config, FailureReason::Provisioning, e.to_string(), now));
                return;
            }
            d.jobs = ids;
            let detail = format!("{} service(s), {} job(s) submitted to the cluster", d.services.len(), d.jobs.len());
            events.push(transition(d, DeploymentState::Provisioning, now, detail));
        }
    }
}

fn config_delay(config: &OrchestratorConfig, d: &Deployment, node: &str) -> u64 {
    let kind = d.template.node(node).map(|n| n.kind.name().to_string()).unwrap_or_default();
    config.config_delays.get(&kind).copied().unwrap_or(0)
}

/// Replaces lost instances. Returns false when the repair budget is spent
/// or a replacement cannot be had.
fn repair_instances(d: &mut Deployment, world: &mut World<'_>, config: &OrchestratorConfig, now: u64, events: &mut Vec<DeploymentEvent>) -> Option<bool> {
    let lost: Vec<(String, InstanceId)> = d
        .instances
        .iter()
        .filter(|(_, i)| world.iaas.instance(i).is_none_or(|x| !x.state.holds_capacity()))
        .map(|(n, i)| (n.clone(), i.clone()))
        .collect();
    if lost.is_empty() {
        return Some(false);
    }
    for (node, old) in lost {
        if d.repairs >= config.retry_limit {
            let why = world.iaas.instance(&old).and_then(|i| i.lost.clone()).unwrap_or_default();
            events.push(fail(d, world, config, FailureReason::Instance, format!("{node} lost ({why}) after {} repairs", d.repairs), now));
            return None;
        }
        d.repairs += 1;
        match request_instance(d, &node, world, now) {
            Ok(id) => {
                d.instances.insert(node, id);
            }
            Err(e) => {
                events.push(fail(d, world, config, FailureReason::Provisioning, e, now));
                return None;
            }
        }
    }
    Some(true)
}

fn all_active(d: &Deployment, world: &World<'_>) -> bool {
    d.instances.values().all(|i| world.iaas.instance(i).is_some_and(|x| x.state == InstanceState::Active))
}

fn endpoints_a(d: &Deployment) -> Vec<Endpoint> {
    let site = d.placement.as_ref().map(|p| p.site_id.as_str()).unwrap_or("");
    d.instances
        .iter()
        .map(|(node, inst)| Endpoint { name: node.clone(), address: format!("ssh://{inst}.{site}"), credential: None })
        .collect()
}

fn endpoints_b(d: &Deployment, world: &World<'_>) -> Vec<Endpoint> {
    d.services
        .iter()
        .filter_map(|s| world.cluster.service(s))
        .map(|s| {
            let name = s.spec.service_id.as_str().rsplit('/').next().unwrap_or("").to_string();
            Endpoint { name, address: format!("svc://{}", s.spec.health_endpoint.trim_end_matches("/health")), credential: None }
        })
        .collect()
}

fn owned_task(d: &Deployment, owner: &TaskOwner) -> bool {
    match owner {
        TaskOwner::Service(s) => d.services.contains(s),
        TaskOwner::Job(j) => d.jobs.contains(j),
        TaskOwner::Generic => false,
    }
}

/// One step of the per-deployment state machine.
fn drive(config: &OrchestratorConfig, d: &mut Deployment, world: &mut World<'_>, now: u64, events: &mut Vec<DeploymentEvent>) {
    use DeploymentState::*;
    match (d.state, d.scenario) {
        (Created, _) | (Deleting, _) | (Deleted, _) => {}
        (Validated, _) => matchmake(d, world, config, now, events),
        (Failed, _) => {
            let Some(f) = d.failure.clone() else { return };
            if !f.retryable || now < f.at + config.retry_backoff {
                return;
            }
            let before = events.len();
            matchmake(d, world, config, now, events);
            if events.len() == before && d.state == Failed {
                // nowhere to go: this attempt still counts
                d.retries += 1;
                if let Some(fl) = d.failure.as_mut() {
                    fl.at = now;
                    fl.retryable = d.retries < config.retry_limit;
                }
            }
        }
        (Matched, _) => {
            if !matches!(d.placement.as_ref().map(|p| &p.data_plan), Some(PlacementData::Migrate { .. })) {
                start_execution(d, world, config, now, events);
            }
        }
        (MigratingData, _) => {
            let Some(Placement { data_plan: PlacementData::Migrate { transfers }, .. }) = &d.placement else { return };
            let states: Vec<Option<TransferState>> = transfers.iter().map(|t| world.data.transfer(t).map(|j| j.state)).collect();
            if let Some(pos) = states.iter().position(|s| !matches!(s, Some(TransferState::Done | TransferState::Queued | TransferState::Active))) {
                let t = transfers[pos].clone();
                let why = world.data.transfer(&t).and_then(|j| j.failure.clone()).unwrap_or_else(|| String::from("missing"));
                events.push(fail(d, world, config, FailureReason::Migration, format!("transfer {t} failed: {why}"), now));
            } else if states.iter().all(|s| *s == Some(TransferState::Done)) {
                start_execution(d, world, config, now, events);
            }
        }
        (Provisioning, Scenario::A) => match repair_instances(d, world, config, now, events) {
            None => {}
            Some(_) => {
                if all_active(d, world) {
                    let mut steps = tosca::resolve_order(&d.template).unwrap_or_default();
                    steps.retain(|n| config_delay(config, d, n) > 0);
                    d.config = Some(ConfigProgress { steps, done: 0, step_started: now });
                    events.push(transition(d, Configuring, now, String::from("instances active")));
                }
            }
        },
        (Configuring, Scenario::A) => match repair_instances(d, world, config, now, events) {
            None => {}
            Some(true) => {
                d.config = None;
                events.push(transition(d, Provisioning, now, String::from("re-provisioning lost instance")));
            }
            Some(false) => {
                let mut progress = d.config.take().unwrap_or(ConfigProgress { steps: Vec::new(), done: 0, step_started: now });
                while progress.done < progress.steps.len() {
                    let due = progress.step_started + config_delay(config, d, &progress.steps[progress.done]);
                    if now < due {
                        break;
                    }
                    progress.done += 1;
                    progress.step_started = due;
                }
                let finished = progress.done == progress.steps.len();
                d.config = Some(progress);
                if finished {
                    d.config = None;
                    d.endpoints = endpoints_a(d);
                    let n = d.endpoints.len();
                    events.push(transition(d, Running, now, format!("{n} endpoint(s)")));
                }
            }
        },
        (Running, Scenario::A) => {
            if let Some(true) = repair_instances(d, world, config, now, events) {
                d.endpoints = endpoints_a(d);
                events.push(transition(d, Scaling, now, String::from("replacing lost instance")));
            }
        }
        (Scaling, Scenario::A) => match repair_instances(d, world, config, now, events) {
            None | Some(true) => {}
            Some(false) => {
                if all_active(d, world) {
                    d.endpoints = endpoints_a(d);
                    events.push(transition(d, Running, now, String::from("replacement active")));
                }
            }
        },
        (Provisioning | Configuring | Running | Scaling, Scenario::B) => drive_b(config, d, world, now, events),
    }
}

fn drive_b(config: &OrchestratorConfig, d: &mut Deployment, world: &mut World<'_>, now: u64, events: &mut Vec<DeploymentEvent>) {
    use DeploymentState::*;
    if let Some(j) = d.jobs.iter().find(|j| world.cluster.job(j).is_some_and(|j| j.state == JobState::Failed)) {
        let why = world.cluster.job(j).and_then(|x| x.failure.clone()).unwrap_or_default();
        let detail = format!("job {j} failed: {why}");
        events.push(fail(d, world, config, FailureReason::Job, detail, now));
        return;
    }
    let blocked = autoscaler::blocked_tasks(world.cluster, world.cluster_in_flight, world.scaling, now);
    let ours = blocked.iter().any(|t| world.cluster.task(t).is_some_and(|t| owned_task(d, &t.owner)));
    if ours {
        if d.last_strike.is_none_or(|s| now >= s + world.scaling.scaleout_delay) {
            d.capacity_strikes += 1;
            d.last_strike = Some(now);
            if d.capacity_strikes >= config.retry_limit {
                let detail = format!("demand cannot be met within {} nodes after {} attempts", world.scaling.max_nodes, d.capacity_strikes);
                events.push(fail(d, world, config, FailureReason::Capacity, detail, now));
                return;
            }
        }
    } else {
        d.capacity_strikes = 0;
        d.last_strike = None;
    }
    let placed = d.services.iter().any(|s| world.cluster.service(s).is_some_and(|s| !s.instances.is_empty()))
        || d.jobs.iter().any(|j| world.cluster.job(j).is_some_and(|j| j.attempts > 0));
    let at_target = d.services.iter().all(|s| world.cluster.service(s).is_some_and(|s| s.running() >= s.spec.replicas_target));
    let jobs_done = d.jobs.iter().all(|j| world.cluster.job(j).is_some_and(|j| j.state == JobState::Done));
    match d.state {
        Provisioning if placed || (at_target && jobs_done) => {
            events.push(transition(d, Configuring, now, String::from("tasks placed on the cluster")));
        }
        Configuring if at_target && jobs_done => {
            d.endpoints = endpoints_b(d, world);
            let n = d.endpoints.len();
            events.push(transition(d, Running, now, format!("{n} endpoint(s)")));
        }
        Scaling if at_target => {
            d.endpoints = endpoints_b(d, world);
            events.push(transition(d, Running, now, String::from("replica target reached")));
        }
        _ => {}
    }
}

#[cfg(test)]
mod tests;
