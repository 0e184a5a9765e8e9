//! The whole service state behind one command interface.
//!
//! Every mutation enters through [`Platform::apply`] as a [`Command`], so a
//! list of commands replayed against a fresh platform with the same
//! configuration reproduces the state exactly. Time moves only through
//! [`Command::Advance`].

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autoscaler::{self, ScalingDecision, ScalingPolicy};
use crate::broker::{self, PlacementRequest, RankedSites, RuleError, RuleOwner, RuleSet};
use crate::catalog::{Catalog, CatalogError, MonitorSample, SiteDescriptor};
use crate::datamgr::{
    DataError, DataManager, DatasetSpec, DecayLink, StorageQos, TransferConfig, TransferEvent,
};
use crate::iam::{
    ClientCredentials, Claims, DerivedClaims, ExternalIdentity, Iam, IamError, SigningKey, TranslationTarget,
};
use crate::ids::{AccountId, DatasetId, DeploymentId, InstanceId, NodeId, ServiceId, SiteId, TaskId, TransferId};
use crate::msa::{Cluster, MsaError, PolicyKind, RemovalReason, SlaveNode};
use crate::orchestrator::iaas::{Fault, Iaas, IaasError, IaasEvent, InstanceOwner, RequestOptions, ScheduledFault, SiteConfig};
use crate::orchestrator::{
    DeploymentEvent, DeploymentState, Orchestrator, OrchestratorConfig, OrchestratorError, World,
};
use crate::resources::ResourceVector;
use crate::slam::{SlaCaps, SlaClass, SlaManager, SlaRecord, SlamError};
use crate::tosca::{Scenario, Value};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlatformConfig {
    pub orchestrator: OrchestratorConfig,
    pub scaling: ScalingPolicy,
    pub transfers: TransferConfig,
    /// Single-stream link rate in bytes per second.
    pub link_rate: f64,
    pub link_decay: f64,
    pub scheduler: PolicyKind,
    /// Feed simulator samples into the catalog on every tick.
    pub auto_monitor: bool,
}

impl Default for PlatformConfig {
    fn default() -> Self {
        PlatformConfig {
            orchestrator: OrchestratorConfig::default(),
            scaling: ScalingPolicy::default(),
            transfers: TransferConfig::default(),
            link_rate: 10e6,
            link_decay: 0.2,
            scheduler: PolicyKind::Drf,
            auto_monitor: true,
        }
    }
}

/// Simulator settings for a registered site; capacity comes from the
/// descriptor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SiteSimulation {
    pub on_demand_limit: Option<ResourceVector>,
    pub boot_delay: u64,
    pub error_rate: f64,
    pub latency_ms: f64,
    pub failure_schedule: Vec<ScheduledFault>,
}

impl Default for SiteSimulation {
    fn default() -> Self {
        let base = SiteConfig::new("", ResourceVector::ZERO);
        SiteSimulation {
            on_demand_limit: None,
            boot_delay: base.boot_delay,
            error_rate: base.error_rate,
            latency_ms: base.latency_ms,
            failure_schedule: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Command {
    RegisterSite {
        descriptor: SiteDescriptor,
        #[serde(default)]
        simulation: SiteSimulation,
    },
    IngestMetrics {
        sample: MonitorSample,
    },
    SetRules {
        owner: RuleOwner,
        text: String,
    },
    LinkCredential {
        identity: ExternalIdentity,
        #[serde(default)]
        account: Option<AccountId>,
    },
    AddToGroup {
        account: AccountId,
        group: String,
    },
    RemoveFromGroup {
        account: AccountId,
        group: String,
    },
    SetEnabled {
        account: AccountId,
        enabled: bool,
    },
    RegisterClient {
        name: String,
    },
    Login {
        identity: ExternalIdentity,
        audience: String,
    },
    Revoke {
        token_id: String,
    },
    Translate {
        token: String,
        target: TranslationTarget,
    },
    NegotiateSla {
        account: AccountId,
        site: SiteId,
        class: SlaClass,
        #[serde(default)]
        caps: Option<SlaCaps>,
    },
    AddDataset {
        spec: DatasetSpec,
    },
    PutReplica {
        dataset: DatasetId,
        site: SiteId,
        fraction: f64,
        qos: StorageQos,
    },
    ScheduleTransfer {
        dataset: DatasetId,
        #[serde(default)]
        src: Option<SiteId>,
        dst: SiteId,
    },
    CancelTransfer {
        transfer: TransferId,
    },
    EnforceQos {
        dataset: DatasetId,
        #[serde(default)]
        floor: Option<u32>,
    },
    Submit {
        owner: AccountId,
        #[serde(default)]
        groups: alloc::collections::BTreeSet<String>,
        template: String,
        #[serde(default)]
        inputs: BTreeMap<String, Value>,
        #[serde(default)]
        scenario: Option<Scenario>,
    },
    Delete {
        deployment: DeploymentId,
    },
    Scale {
        deployment: DeploymentId,
        replicas: u32,
    },
    KillTask {
        service: ServiceId,
        task: TaskId,
    },
    InjectFault {
        site: SiteId,
        fault: Fault,
    },
    ScheduleFault {
        site: SiteId,
        fault: ScheduledFault,
    },
    Advance {
        dt: u64,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::RegisterSite { .. } => "register_site",
            Command::IngestMetrics { .. } => "ingest_metrics",
            Command::SetRules { .. } => "set_rules",
            Command::LinkCredential { .. } => "link_credential",
            Command::AddToGroup { .. } => "add_to_group",
            Command::RemoveFromGroup { .. } => "remove_from_group",
            Command::SetEnabled { .. } => "set_enabled",
            Command::RegisterClient { .. } => "register_client",
            Command::Login { .. } => "login",
            Command::Revoke { .. } => "revoke",
            Command::Translate { .. } => "translate",
            Command::NegotiateSla { .. } => "negotiate_sla",
            Command::AddDataset { .. } => "add_dataset",
            Command::PutReplica { .. } => "put_replica",
            Command::ScheduleTransfer { .. } => "schedule_transfer",
            Command::CancelTransfer { .. } => "cancel_transfer",
            Command::EnforceQos { .. } => "enforce_qos",
            Command::Submit { .. } => "submit",
            Command::Delete { .. } => "delete",
            Command::Scale { .. } => "scale",
            Command::KillTask { .. } => "kill_task",
            Command::InjectFault { .. } => "inject_fault",
            Command::ScheduleFault { .. } => "schedule_fault",
            Command::Advance { .. } => "advance",
        }
    }

    /// Entity kind the command touches, for journal indexing.
    pub fn entity(&self) -> &'static str {
        match self {
            Command::RegisterSite { .. }
            | Command::IngestMetrics { .. }
            | Command::InjectFault { .. }
            | Command::ScheduleFault { .. } => "site",
            Command::SetRules { .. } => "rules",
            Command::LinkCredential { .. }
            | Command::AddToGroup { .. }
            | Command::RemoveFromGroup { .. }
            | Command::SetEnabled { .. }
            | Command::RegisterClient { .. }
            | Command::Login { .. }
            | Command::Revoke { .. }
            | Command::Translate { .. } => "account",
            Command::NegotiateSla { .. } => "sla",
            Command::AddDataset { .. } | Command::PutReplica { .. } | Command::EnforceQos { .. } => "dataset",
            Command::ScheduleTransfer { .. } | Command::CancelTransfer { .. } => "transfer",
            Command::Submit { .. } | Command::Delete { .. } | Command::Scale { .. } | Command::KillTask { .. } => {
                "deployment"
            }
            Command::Advance { .. } => "clock",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum Outcome {
    Done,
    Site { site_id: SiteId },
    Account { account_id: AccountId },
    Client { credentials: ClientCredentials },
    Token { token: String, claims: Claims },
    Derived { credential: String, claims: DerivedClaims },
    Sla { record: SlaRecord },
    Dataset { dataset_id: DatasetId },
    Transfers { transfers: Vec<TransferId> },
    Deployment { deployment_id: DeploymentId, state: DeploymentState },
    Advanced { now: u64, events: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, thiserror::Error)]
pub enum PlatformError {
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Rules(#[from] RuleError),
    #[error(transparent)]
    Iam(#[from] IamError),
    #[error(transparent)]
    Slam(#[from] SlamError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Msa(#[from] MsaError),
    #[error(transparent)]
    Iaas(#[from] IaasError),
    #[error(transparent)]
    Orchestrator(#[from] OrchestratorError),
    #[error("invalid request: {0}")]
    Invalid(String),
}

impl PlatformError {
    pub fn code(&self) -> &'static str {
        match self {
            PlatformError::Catalog(e) => e.code(),
            PlatformError::Rules(_) => "RULE_SYNTAX",
            PlatformError::Iam(e) => e.code(),
            PlatformError::Slam(e) => e.code(),
            PlatformError::Data(e) => e.code(),
            PlatformError::Msa(e) => e.code(),
            PlatformError::Iaas(e) => e.code(),
            PlatformError::Orchestrator(e) => e.code(),
            PlatformError::Invalid(_) => "BAD_REQUEST",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    Deployment(DeploymentEvent),
    Transfer(TransferEvent),
    Instance(IaasEvent),
    Scaling { decision: String },
    NodeJoined { node_id: NodeId, instance_id: InstanceId },
    NodeLost { node_id: NodeId, reason: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlatformEvent {
    pub seq: u64,
    pub at: u64,
    pub kind: EventKind,
}

impl PlatformEvent {
    pub fn deployment(&self) -> Option<&DeploymentId> {
        match &self.kind {
            EventKind::Deployment(e) => Some(&e.deployment_id),
            _ => None,
        }
    }
}

/// A cluster node backed by a simulated instance.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterMachine {
    pub instance_id: InstanceId,
    pub node_id: NodeId,
    pub site_id: SiteId,
    pub size: ResourceVector,
    pub joined: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Platform {
    pub config: PlatformConfig,
    now: u64,
    catalog: Catalog,
    #[serde(with = "crate::ids::pairs")]
    rules: BTreeMap<RuleOwner, RuleSet>,
    slam: SlaManager,
    data: DataManager,
    cluster: Cluster,
    iam: Iam,
    iaas: Iaas,
    orchestrator: Orchestrator,
    machines: BTreeMap<InstanceId, ClusterMachine>,
    events: Vec<PlatformEvent>,
    next_event: u64,
}

impl Platform {
    pub fn new(config: PlatformConfig, key: SigningKey) -> Self {
        Platform {
            now: 0,
            catalog: Catalog::new(),
            rules: BTreeMap::new(),
            slam: SlaManager::new(),
            data: DataManager::new(config.transfers.clone()),
            cluster: Cluster::new(config.scheduler),
            iam: Iam::new(key),
            iaas: Iaas::new(),
            orchestrator: Orchestrator::new(config.orchestrator.clone()),
            machines: BTreeMap::new(),
            events: Vec::new(),
            next_event: 0,
            config,
        }
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn rules(&self) -> &BTreeMap<RuleOwner, RuleSet> {
        &self.rules
    }

    pub fn slam(&self) -> &SlaManager {
        &self.slam
    }

    pub fn data(&self) -> &DataManager {
        &self.data
    }

    pub fn cluster(&self) -> &Cluster {
        &self.cluster
    }

    pub fn iam(&self) -> &Iam {
        &self.iam
    }

    pub fn iaas(&self) -> &Iaas {
        &self.iaas
    }

    pub fn orchestrator(&self) -> &Orchestrator {
        &self.orchestrator
    }

    pub fn machines(&self) -> impl Iterator<Item = &ClusterMachine> {
        self.machines.values()
    }

    pub fn events(&self) -> &[PlatformEvent] {
        &self.events
    }

    /// Events with a sequence number above `after`, optionally narrowed to
    /// one deployment.
    pub fn events_since<'a>(&'a self, after: u64, deployment: Option<&'a DeploymentId>) -> impl Iterator<Item = &'a PlatformEvent> + 'a {
        let start = self.events.partition_point(|e| e.seq <= after);
        self.events[start..].iter().filter(move |e| deployment.is_none_or(|d| e.deployment() == Some(d)))
    }

    pub fn last_event_seq(&self) -> u64 {
        self.next_event
    }

    /// Broker ranking over the current snapshot with the rules that apply
    /// to `account`.
    pub fn rank_for(&self, account: &AccountId, request: &PlacementRequest) -> RankedSites {
        let groups = self.iam.account(account).map(|a| a.groups.clone()).unwrap_or_default();
        let rules = broker::select_rules(&self.rules, account, &groups);
        broker::rank(&self.catalog.snapshot(self.now), request, &rules)
    }

    fn emit(&mut self, kind: EventKind) {
        self.next_event += 1;
        self.events.push(PlatformEvent { seq: self.next_event, at: self.now, kind });
    }

    pub fn apply(&mut self, cmd: Command) -> Result<Outcome, PlatformError> {
        let now = self.now;
        match cmd {
            Command::RegisterSite { descriptor, simulation } => {
                let mut sim = SiteConfig::new(descriptor.site_id.clone(), descriptor.capacity);
                sim.on_demand_limit = simulation.on_demand_limit;
                sim.boot_delay = simulation.boot_delay;
                sim.error_rate = simulation.error_rate;
                sim.latency_ms = simulation.latency_ms;
                sim.failure_schedule = simulation.failure_schedule;
                sim.failure_schedule.sort_by_key(|f| f.at);
                if self.iaas.site(&descriptor.site_id).is_some() {
                    return Err(IaasError::DuplicateSite(descriptor.site_id).into());
                }
                let id = self.catalog.register_site(descriptor)?;
                self.iaas.add_site(sim)?;
                if self.config.auto_monitor {
                    if let Some(s) = self.iaas.sample(&id, now) {
                        self.catalog.ingest_metrics(s)?;
                    }
                }
                Ok(Outcome::Site { site_id: id })
            }
            Command::IngestMetrics { sample } => {
                self.catalog.ingest_metrics(sample)?;
                Ok(Outcome::Done)
            }
            Command::SetRules { owner, text } => {
                let rules = broker::compile_rules(&text)?.with_owner(owner.clone());
                self.rules.insert(owner, rules);
                Ok(Outcome::Done)
            }
            Command::LinkCredential { identity, account } => {
                let id = self.iam.link_credential(identity, account.as_ref())?;
                Ok(Outcome::Account { account_id: id })
            }
            Command::AddToGroup { account, group } => {
                self.iam.add_to_group(&account, &group)?;
                Ok(Outcome::Done)
            }
            Command::RemoveFromGroup { account, group } => {
                self.iam.remove_from_group(&account, &group)?;
                Ok(Outcome::Done)
            }
            Command::SetEnabled { account, enabled } => {
                self.iam.set_enabled(&account, enabled)?;
                Ok(Outcome::Done)
            }
            Command::RegisterClient { name } => {
                let credentials = self.iam.register_client(&name)?;
                Ok(Outcome::Client { credentials })
            }
            Command::Login { identity, audience } => {
                let (token, claims) = self.iam.authenticate(&identity, &audience, now)?;
                Ok(Outcome::Token { token, claims })
            }
            Command::Revoke { token_id } => {
                self.iam.revoke(&token_id);
                Ok(Outcome::Done)
            }
            Command::Translate { token, target } => {
                let (credential, claims) = self.iam.translate_token(&token, target, now)?;
                Ok(Outcome::Derived { credential, claims })
            }
            Command::NegotiateSla { account, site, class, caps } => {
                let caps = match caps {
                    Some(c) => c,
                    None => {
                        let st = self.catalog.state(&site, now).ok_or_else(|| CatalogError::UnknownSite(site.clone()))?;
                        crate::orchestrator::matchmaking::default_caps(&st)
                    }
                };
                let record = self.slam.negotiate(&self.catalog, &account, &site, class, caps, now)?;
                Ok(Outcome::Sla { record })
            }
            Command::AddDataset { spec } => {
                let id = self.data.add_dataset(spec)?;
                Ok(Outcome::Dataset { dataset_id: id })
            }
            Command::PutReplica { dataset, site, fraction, qos } => {
                if !(0.0..=1.0).contains(&fraction) {
                    return Err(PlatformError::Invalid(format!("fraction {fraction} outside [0, 1]")));
                }
                self.data.put_replica(&self.catalog, &dataset, &site, fraction, qos)?;
                Ok(Outcome::Done)
            }
            Command::ScheduleTransfer { dataset, src, dst } => {
                let src = match src {
                    Some(s) => s,
                    None => {
                        let complete = self.data.complete_sites(&dataset);
                        let locations = self.data.locate(&dataset)?;
                        locations
                            .into_iter()
                            .map(|l| l.site_id)
                            .find(|s| complete.contains(s) && s != &dst)
                            .ok_or_else(|| PlatformError::Invalid(format!("no complete source replica of {dataset}")))?
                    }
                };
                let id = self.data.schedule_transfer(&self.catalog, &dataset, &src, &dst)?;
                Ok(Outcome::Transfers { transfers: alloc::vec![id] })
            }
            Command::CancelTransfer { transfer } => {
                if let Some(ev) = self.data.cancel(&transfer)? {
                    self.emit(EventKind::Transfer(ev));
                }
                Ok(Outcome::Done)
            }
            Command::EnforceQos { dataset, floor } => {
                let owner = self.data.dataset(&dataset).map(|d| d.owner.clone()).ok_or_else(|| DataError::UnknownDataset(dataset.clone()))?;
                let ranking = self.rank_for(&owner, &PlacementRequest::default());
                let transfers = self.data.enforce_qos(&self.catalog, &dataset, &ranking, floor)?;
                Ok(Outcome::Transfers { transfers })
            }
            Command::Submit { owner, groups, template, inputs, scenario } => {
                let (id, events) = self.orchestrator.submit(&owner, &groups, &template, &inputs, scenario, now)?;
                for e in events {
                    self.emit(EventKind::Deployment(e));
                }
                let state = self.orchestrator.deployment(&id).expect("submitted").state;
                Ok(Outcome::Deployment { deployment_id: id, state })
            }
            Command::Delete { deployment } => {
                let in_flight = self.in_flight();
                let mut world = World {
                    catalog: &self.catalog,
                    rules: &self.rules,
                    slam: &mut self.slam,
                    data: &mut self.data,
                    cluster: &mut self.cluster,
                    iaas: &mut self.iaas,
                    scaling: &self.config.scaling,
                    cluster_in_flight: in_flight,
                };
                let events = self.orchestrator.delete(&deployment, &mut world, now)?;
                for e in events {
                    self.emit(EventKind::Deployment(e));
                }
                let state = self.orchestrator.deployment(&deployment).expect("deployment").state;
                Ok(Outcome::Deployment { deployment_id: deployment, state })
            }
            Command::Scale { deployment, replicas } => {
                let in_flight = self.in_flight();
                let mut world = World {
                    catalog: &self.catalog,
                    rules: &self.rules,
                    slam: &mut self.slam,
                    data: &mut self.data,
                    cluster: &mut self.cluster,
                    iaas: &mut self.iaas,
                    scaling: &self.config.scaling,
                    cluster_in_flight: in_flight,
                };
                let events = self.orchestrator.scale(&deployment, replicas, &mut world, now)?;
                for e in events {
                    self.emit(EventKind::Deployment(e));
                }
                let state = self.orchestrator.deployment(&deployment).expect("deployment").state;
                Ok(Outcome::Deployment { deployment_id: deployment, state })
            }
            Command::KillTask { service, task } => {
                self.cluster.kill_instance(&service, &task, now)?;
                Ok(Outcome::Done)
            }
            Command::InjectFault { site, fault } => {
                if self.iaas.site(&site).is_none() {
                    return Err(IaasError::UnknownSite(site).into());
                }
                let events = self.iaas.apply_fault(&site, &fault, now);
                self.absorb_iaas(events);
                Ok(Outcome::Done)
            }
            Command::ScheduleFault { site, fault } => {
                self.iaas.schedule_fault(&site, fault)?;
                Ok(Outcome::Done)
            }
            Command::Advance { dt } => {
                let before = self.next_event;
                for _ in 0..dt {
                    self.tick();
                }
                Ok(Outcome::Advanced { now: self.now, events: self.next_event - before })
            }
        }
    }

    fn in_flight(&self) -> u32 {
        self.machines.values().filter(|m| !m.joined).count() as u32
    }

    /// Applies instance events to the cluster membership.
    fn absorb_iaas(&mut self, events: Vec<IaasEvent>) {
        for ev in events {
            match &ev {
                IaasEvent::Active { instance_id } => {
                    if let Some(m) = self.machines.get_mut(instance_id) {
                        m.joined = true;
                        let node = SlaveNode::new(m.node_id.clone(), m.size);
                        let (node_id, instance_id) = (m.node_id.clone(), m.instance_id.clone());
                        self.cluster.add_node(node, self.now).expect("fresh node id");
                        self.emit(EventKind::NodeJoined { node_id, instance_id });
                    }
                }
                IaasEvent::Lost { instance_id, reason, .. } => {
                    if let Some(m) = self.machines.remove(instance_id) {
                        if m.joined && self.cluster.node(&m.node_id).is_some() {
                            self.cluster.remove_node(&m.node_id, RemovalReason::Failure, self.now).expect("node exists");
                        }
                        self.emit(EventKind::NodeLost { node_id: m.node_id, reason: reason.clone() });
                    }
                }
            }
            self.emit(EventKind::Instance(ev));
        }
    }

    /// Requests a cluster node of `size` from the best-ranked site that can
    /// hold it.
    fn provision_node(&mut self, size: ResourceVector) -> Result<InstanceId, String> {
        let rules = self.rules.get(&RuleOwner::Global).cloned().unwrap_or_else(RuleSet::default_rules);
        let ranking = broker::rank(&self.catalog.snapshot(self.now), &PlacementRequest::default(), &rules);
        let mut last = String::from("no ranked site");
        for r in &ranking.ordered {
            let opts = RequestOptions { allow_spot: false, preempt_spot: false };
            match self.iaas.request(&r.site_id, size, InstanceOwner::ClusterNode, opts, self.now) {
                Ok(id) => {
                    let node_id = NodeId::new(format!("node-{id}"));
                    self.machines.insert(
                        id.clone(),
                        ClusterMachine { instance_id: id.clone(), node_id, site_id: r.site_id.clone(), size, joined: false },
                    );
                    return Ok(id);
                }
                Err(e) => last = e.to_string(),
            }
        }
        Err(last)
    }

    fn retire_node(&mut self, node: &NodeId) {
        let inst = self.machines.values().find(|m| &m.node_id == node).map(|m| m.instance_id.clone());
        if let Some(i) = inst {
            self.machines.remove(&i);
            let _ = self.iaas.terminate(&i);
        }
    }

    /// One second of simulated time: instances and monitoring, the cluster
    /// step, the autoscaler, transfers, then deployment supervision.
    fn tick(&mut self) {
        self.now += 1;
        let now = self.now;

        let events = self.iaas.tick(now);
        self.absorb_iaas(events);
        if self.config.auto_monitor {
            let sites: Vec<SiteId> = self.iaas.sites().map(|s| s.config.site_id.clone()).collect();
            for s in sites {
                if self.catalog.descriptor(&s).is_some() {
                    let sample = self.iaas.sample(&s, now).expect("simulated site");
                    self.catalog.ingest_metrics(sample).expect("registered site");
                }
            }
        }

        self.cluster.step(now);

        for node in autoscaler::finish_drains(&mut self.cluster, &self.config.scaling, now) {
            self.retire_node(&node);
        }
        let mut count = self.cluster.alive_nodes().count() as u32 + self.in_flight();
        while count < self.config.scaling.min_nodes {
            match self.provision_node(self.config.scaling.node_template) {
                Ok(_) => count += 1,
                Err(_) => break,
            }
        }
        let decision = autoscaler::evaluate(&self.cluster, self.in_flight(), &self.config.scaling, now);
        if decision != ScalingDecision::None {
            let outcome = autoscaler::apply(&decision, &mut self.cluster, now);
            let mut detail = autoscaler::describe(&decision);
            for size in outcome.provision {
                if let Err(e) = self.provision_node(size) {
                    detail.push_str(&format!("; provisioning failed: {e}"));
                    break;
                }
            }
            for node in &outcome.removed {
                self.retire_node(node);
            }
            self.emit(EventKind::Scaling { decision: detail });
        }

        let link = DecayLink { rate: self.config.link_rate, decay: self.config.link_decay };
        for ev in self.data.tick_transfers(1, &link) {
            self.emit(EventKind::Transfer(ev));
        }

        let in_flight = self.in_flight();
        let mut world = World {
            catalog: &self.catalog,
            rules: &self.rules,
            slam: &mut self.slam,
            data: &mut self.data,
            cluster: &mut self.cluster,
            iaas: &mut self.iaas,
            scaling: &self.config.scaling,
            cluster_in_flight: in_flight,
        };
        let events = self.orchestrator.supervise(&mut world, now);
        for e in events {
            if e.to == DeploymentState::Running {
                self.grant_endpoint_access(&e.deployment_id);
            }
            self.emit(EventKind::Deployment(e));
        }
    }

    /// Scenario A endpoints carry a shell credential for the owner.
    fn grant_endpoint_access(&mut self, id: &DeploymentId) {
        let Some(d) = self.orchestrator.deployment(id) else { return };
        if d.scenario != Scenario::A {
            return;
        }
        let owner = d.owner.clone();
        let mut creds = Vec::new();
        for ep in &d.endpoints {
            if ep.credential.is_none() {
                let source = format!("{id}/{}", ep.name);
                creds.push(self.iam.issue_derived(&owner, TranslationTarget::ShellCredential, &source, self.now).ok().map(|(c, _)| c));
            } else {
                creds.push(ep.credential.clone());
            }
        }
        let d = self.orchestrator.deployment_mut(id).expect("deployment");
        for (ep, c) in d.endpoints.iter_mut().zip(creds) {
            ep.credential = c;
        }
    }

    /// Cross-module invariants; each violation is one line.
    pub fn check_invariants(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let Err(e) = self.iaas.check_conservation() {
            out.push(e);
        }
        if let Err(e) = self.cluster.check_accounting() {
            out.push(e);
        }
        for d in self.orchestrator.deployments() {
            if let Err(e) = d.check_history() {
                out.push(e);
            }
            if d.retries > self.config.orchestrator.retry_limit {
                out.push(format!("{}: {} retries", d.deployment_id, d.retries));
            }
        }
        for s in self.catalog.snapshot(self.now) {
            let d = self.catalog.descriptor(s.site_id()).expect("descriptor");
            if !s.free().fits_in(&d.capacity) {
                out.push(format!("{} reports free {} above capacity {}", s.site_id(), s.free(), d.capacity));
            }
        }
        for m in self.machines.values() {
            match self.iaas.instance(&m.instance_id) {
                Some(i) if i.state.holds_capacity() => {}
                _ => out.push(format!("cluster machine {} has no live instance", m.instance_id)),
            }
            if m.joined != self.cluster.node(&m.node_id).is_some() {
                out.push(format!("cluster machine {} membership mismatch", m.node_id));
            }
        }
        out
    }
}
