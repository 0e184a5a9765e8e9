//! Two-level cluster scheduler.
//!
//! A master tracks slave nodes and offers their free resources to
//! frameworks, choosing the next framework with a [`SchedulerPolicy`]
//! (dominant resource fairness by default). Two frameworks are built in: one
//! keeps long-running services at their replica target, the other runs batch
//! jobs with dependencies and retries. Further frameworks can be registered
//! and fed plain tasks.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::ids::{DeploymentId, FrameworkId, JobId, NodeId, ServiceId, TaskId};
use crate::resources::{ResourceVector, Share};

pub const SERVICE_FRAMEWORK: &str = "services";
pub const JOB_FRAMEWORK: &str = "jobs";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlaveNode {
    pub node_id: NodeId,
    pub total: ResourceVector,
    pub free: ResourceVector,
    pub attributes: BTreeSet<String>,
    pub alive: bool,
    /// Refuses new placements while its tasks wind down.
    pub draining: bool,
    pub drain_started: Option<u64>,
    /// Set while the node runs no task.
    pub idle_since: Option<u64>,
    pub tasks: BTreeSet<TaskId>,
}

impl SlaveNode {
    pub fn new(node_id: impl Into<NodeId>, total: ResourceVector) -> Self {
        SlaveNode {
            node_id: node_id.into(),
            total,
            free: total,
            attributes: BTreeSet::new(),
            alive: true,
            draining: false,
            drain_started: None,
            idle_since: None,
            tasks: BTreeSet::new(),
        }
    }

    pub fn with_attribute(mut self, a: &str) -> Self {
        self.attributes.insert(String::from(a));
        self
    }

    pub fn is_idle(&self) -> bool {
        self.tasks.is_empty()
    }

    fn accepts(&self) -> bool {
        self.alive && !self.draining
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameworkKind {
    Service,
    Job,
    Generic,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Framework {
    pub framework_id: FrameworkId,
    pub kind: FrameworkKind,
    pub allocation: ResourceVector,
    /// Pending tasks in arrival order.
    pub queue: Vec<TaskId>,
    pub running: BTreeSet<TaskId>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "id", rename_all = "snake_case")]
pub enum TaskOwner {
    Generic,
    Service(ServiceId),
    Job(JobId),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub task_id: TaskId,
    pub framework_id: FrameworkId,
    pub demand: ResourceVector,
    pub owner: TaskOwner,
    pub node: Option<NodeId>,
    pub enqueued_at: u64,
    pub placed_at: Option<u64>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum InstanceState {
    Starting,
    Running,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub task_id: TaskId,
    pub node_id: NodeId,
    pub state: InstanceState,
    pub since: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceSpec {
    pub service_id: ServiceId,
    pub demand_per_instance: ResourceVector,
    pub replicas_target: u32,
    pub health_endpoint: String,
    #[serde(default)]
    pub deployment: Option<DeploymentId>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LongRunningService {
    pub spec: ServiceSpec,
    pub instances: Vec<Instance>,
    /// Tasks waiting for an offer.
    pub pending: Vec<TaskId>,
    pub restarts: u64,
}

impl LongRunningService {
    pub fn count(&self, s: InstanceState) -> u32 {
        self.instances.iter().filter(|i| i.state == s).count() as u32
    }

    pub fn running(&self) -> u32 {
        self.count(InstanceState::Running)
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum JobState {
    Pending,
    Runnable,
    Running,
    Done,
    Failed,
}

impl JobState {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobState::Done | JobState::Failed)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobSpec {
    pub job_id: JobId,
    pub demand: ResourceVector,
    #[serde(default)]
    pub depends_on: BTreeSet<JobId>,
    /// Seconds of run time per attempt.
    pub duration: u64,
    pub max_attempts: u32,
    /// The first this-many attempts fail when their run time elapses.
    #[serde(default)]
    pub simulate_failures: u32,
    #[serde(default)]
    pub deployment: Option<DeploymentId>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchJob {
    pub spec: JobSpec,
    pub state: JobState,
    pub attempts: u32,
    pub task: Option<TaskId>,
    pub started_at: Option<u64>,
    pub finished_at: Option<u64>,
    pub failure: Option<String>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RemovalReason {
    ScaleIn,
    Failure,
    Preemption,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
pub enum MsaError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("node {0} already exists")]
    DuplicateNode(NodeId),
    #[error("unknown framework {0}")]
    UnknownFramework(FrameworkId),
    #[error("framework {0} already exists")]
    DuplicateFramework(FrameworkId),
    #[error("no framework has pending demand")]
    NoPendingDemand,
    #[error("service {0} already exists")]
    DuplicateService(ServiceId),
    #[error("unknown service {0}")]
    UnknownService(ServiceId),
    #[error("job {0} already exists")]
    DuplicateJob(JobId),
    #[error("unknown job {0}")]
    UnknownJob(JobId),
    #[error("job {job} depends on unknown job {dependency}")]
    UnknownDependency { job: JobId, dependency: JobId },
    #[error("job dependencies form a cycle among {0:?}")]
    CyclicDependency(Vec<JobId>),
    #[error("invalid request: {0}")]
    Invalid(String),
}

impl MsaError {
    pub fn code(&self) -> &'static str {
        match self {
            MsaError::UnknownNode(_) => "UNKNOWN_NODE",
            MsaError::DuplicateNode(_) => "DUPLICATE_NODE",
            MsaError::UnknownFramework(_) => "UNKNOWN_FRAMEWORK",
            MsaError::DuplicateFramework(_) => "DUPLICATE_FRAMEWORK",
            MsaError::NoPendingDemand => "NO_PENDING_DEMAND",
            MsaError::DuplicateService(_) => "DUPLICATE_SERVICE",
            MsaError::UnknownService(_) => "UNKNOWN_SERVICE",
            MsaError::DuplicateJob(_) => "DUPLICATE_JOB",
            MsaError::UnknownJob(_) => "UNKNOWN_JOB",
            MsaError::UnknownDependency { .. } => "UNKNOWN_DEPENDENCY",
            MsaError::CyclicDependency(_) => "CYCLIC_DEPENDENCY",
            MsaError::Invalid(_) => "INVALID_REQUEST",
        }
    }
}

/// What a policy sees of one framework with pending work.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrameworkView<'a> {
    pub framework_id: &'a FrameworkId,
    pub allocation: ResourceVector,
    pub dominant_share: Share,
    /// Arrival sequence of the oldest pending task.
    pub oldest_pending: u64,
}

/// Chooses which framework receives the next offer.
pub trait SchedulerPolicy {
    fn next<'a>(&self, candidates: &[FrameworkView<'a>]) -> Option<&'a FrameworkId>;
}

/// Dominant resource fairness: lowest dominant share first, ties by id.
#[derive(Copy, Clone, Debug, Default)]
pub struct Drf;

impl SchedulerPolicy for Drf {
    fn next<'a>(&self, candidates: &[FrameworkView<'a>]) -> Option<&'a FrameworkId> {
        candidates
            .iter()
            .min_by(|a, b| a.dominant_share.cmp(&b.dominant_share).then_with(|| a.framework_id.cmp(b.framework_id)))
            .map(|v| v.framework_id)
    }
}

/// The framework whose oldest pending task arrived first.
#[derive(Copy, Clone, Debug, Default)]
pub struct Fifo;

impl SchedulerPolicy for Fifo {
    fn next<'a>(&self, candidates: &[FrameworkView<'a>]) -> Option<&'a FrameworkId> {
        candidates
            .iter()
            .min_by(|a, b| a.oldest_pending.cmp(&b.oldest_pending).then_with(|| a.framework_id.cmp(b.framework_id)))
            .map(|v| v.framework_id)
    }
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    #[default]
    Drf,
    Fifo,
}

impl PolicyKind {
    fn next<'a>(self, candidates: &[FrameworkView<'a>]) -> Option<&'a FrameworkId> {
        match self {
            PolicyKind::Drf => Drf.next(candidates),
            PolicyKind::Fifo => Fifo.next(candidates),
        }
    }
}

/// Framework with the minimum dominant share among those with pending
/// demand; ties go to the lexicographically first id.
pub fn drf_next_framework<'a>(
    frameworks: impl IntoIterator<Item = &'a Framework>,
    cluster_total: &ResourceVector,
) -> Result<&'a FrameworkId, MsaError> {
    let views: Vec<FrameworkView<'a>> = frameworks
        .into_iter()
        .filter(|f| !f.queue.is_empty())
        .map(|f| FrameworkView {
            framework_id: &f.framework_id,
            allocation: f.allocation,
            dominant_share: f.allocation.dominant_share(cluster_total),
            oldest_pending: 0,
        })
        .collect();
    Drf.next(&views).ok_or(MsaError::NoPendingDemand)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Offer {
    pub framework_id: FrameworkId,
    pub node_id: NodeId,
    pub offered: ResourceVector,
    pub accepted: Vec<TaskId>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum ServiceAction {
    Enqueued { service_id: ServiceId, count: u32 },
    Promoted { service_id: ServiceId, task_id: TaskId },
    InstanceFailed { service_id: ServiceId, task_id: TaskId, node_id: NodeId },
    Killed { service_id: ServiceId, task_id: TaskId },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobChange {
    pub job_id: JobId,
    pub from: JobState,
    pub to: JobState,
    pub attempts: u32,
    pub detail: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceEvent {
    NodeAdded { node_id: NodeId, total: ResourceVector },
    NodeRemoved { node_id: NodeId, reason: RemovalReason, failed_tasks: Vec<TaskId> },
    Offer { framework_id: FrameworkId, node_id: NodeId, offered: ResourceVector },
    Place { framework_id: FrameworkId, node_id: NodeId, task_id: TaskId, demand: ResourceVector },
    Declined { framework_id: FrameworkId },
    Released { task_id: TaskId, node_id: NodeId },
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepReport {
    pub now: u64,
    pub services: Vec<ServiceAction>,
    pub jobs: Vec<JobChange>,
    pub offers: Vec<Offer>,
}

/// Work handed to the cluster from outside its owner; drained at the start
/// of each step.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MsaCommand {
    SubmitService(ServiceSpec),
    SubmitJobs(Vec<JobSpec>),
    Scale { service_id: ServiceId, replicas: u32 },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cluster {
    pub policy: PolicyKind,
    nodes: BTreeMap<NodeId, SlaveNode>,
    frameworks: BTreeMap<FrameworkId, Framework>,
    tasks: BTreeMap<TaskId, Task>,
    services: BTreeMap<ServiceId, LongRunningService>,
    jobs: BTreeMap<JobId, BatchJob>,
    mailbox: Vec<MsaCommand>,
    trace: Vec<TraceEvent>,
    task_seq: u64,
}

impl Default for Cluster {
    fn default() -> Self {
        Self::new(PolicyKind::Drf)
    }
}

impl Cluster {
    pub fn new(policy: PolicyKind) -> Self {
        let mut c = Cluster {
            policy,
            nodes: BTreeMap::new(),
            frameworks: BTreeMap::new(),
            tasks: BTreeMap::new(),
            services: BTreeMap::new(),
            jobs: BTreeMap::new(),
            mailbox: Vec::new(),
            trace: Vec::new(),
            task_seq: 0,
        };
        c.add_framework(SERVICE_FRAMEWORK, FrameworkKind::Service).expect("fresh cluster");
        c.add_framework(JOB_FRAMEWORK, FrameworkKind::Job).expect("fresh cluster");
        c
    }

    // ----- views -----

    pub fn nodes(&self) -> impl Iterator<Item = &SlaveNode> {
        self.nodes.values()
    }

    pub fn node(&self, id: &NodeId) -> Option<&SlaveNode> {
        self.nodes.get(id)
    }

    pub fn alive_nodes(&self) -> impl Iterator<Item = &SlaveNode> {
        self.nodes.values().filter(|n| n.alive)
    }

    pub fn frameworks(&self) -> impl Iterator<Item = &Framework> {
        self.frameworks.values()
    }

    pub fn framework(&self, id: &FrameworkId) -> Option<&Framework> {
        self.frameworks.get(id)
    }

    pub fn task(&self, id: &TaskId) -> Option<&Task> {
        self.tasks.get(id)
    }

    pub fn tasks(&self) -> impl Iterator<Item = &Task> {
        self.tasks.values()
    }

    pub fn pending_tasks(&self) -> impl Iterator<Item = &Task> {
        self.tasks.values().filter(|t| t.node.is_none())
    }

    pub fn services(&self) -> impl Iterator<Item = &LongRunningService> {
        self.services.values()
    }

    pub fn service(&self, id: &ServiceId) -> Option<&LongRunningService> {
        self.services.get(id)
    }

    pub fn jobs(&self) -> impl Iterator<Item = &BatchJob> {
        self.jobs.values()
    }

    pub fn job(&self, id: &JobId) -> Option<&BatchJob> {
        self.jobs.get(id)
    }

    /// Trace of the most recent step plus anything since.
    pub fn trace(&self) -> &[TraceEvent] {
        &self.trace
    }

    /// Sum of alive nodes' totals.
    pub fn cluster_total(&self) -> ResourceVector {
        self.alive_nodes().map(|n| n.total).sum()
    }

    pub fn dominant_share(&self, id: &FrameworkId) -> Option<Share> {
        let total = self.cluster_total();
        self.frameworks.get(id).map(|f| f.allocation.dominant_share(&total))
    }

    /// Exact per-node accounting: free within [0, total] and
    /// total − free equal to the sum of placed demands.
    pub fn check_accounting(&self) -> Result<(), String> {
        for n in self.nodes.values() {
            if !n.free.fits_in(&n.total) {
                return Err(format!("node {} free {} exceeds total {}", n.node_id, n.free, n.total));
            }
            let placed: ResourceVector = n.tasks.iter().map(|t| self.tasks[t].demand).sum();
            if placed + n.free != n.total {
                return Err(format!("node {} placed {} + free {} != total {}", n.node_id, placed, n.free, n.total));
            }
        }
        for f in self.frameworks.values() {
            let placed: ResourceVector = f.running.iter().map(|t| self.tasks[t].demand).sum();
            if placed != f.allocation {
                return Err(format!("framework {} allocation {} != placed {}", f.framework_id, f.allocation, placed));
            }
        }
        Ok(())
    }

    // ----- membership -----

    pub fn add_node(&mut self, mut node: SlaveNode, now: u64) -> Result<(), MsaError> {
        if self.nodes.contains_key(&node.node_id) {
            return Err(MsaError::DuplicateNode(node.node_id));
        }
        node.free = node.total;
        node.tasks.clear();
        node.alive = true;
        node.draining = false;
        node.drain_started = None;
        node.idle_since = Some(now);
        self.trace.push(TraceEvent::NodeAdded { node_id: node.node_id.clone(), total: node.total });
        self.nodes.insert(node.node_id.clone(), node);
        Ok(())
    }

    /// Removes a node. Tasks still on it fail: service instances are
    /// replaced by the next reconcile, job attempts are retried or failed,
    /// plain tasks go back to their queue.
    pub fn remove_node(&mut self, id: &NodeId, reason: RemovalReason, now: u64) -> Result<Vec<TaskId>, MsaError> {
        let node = self.nodes.get(id).ok_or_else(|| MsaError::UnknownNode(id.clone()))?;
        let victims: Vec<TaskId> = node.tasks.iter().cloned().collect();
        for t in &victims {
            self.fail_task(t, now, &format!("node {id} removed ({reason:?})"));
        }
        self.nodes.remove(id);
        self.trace.push(TraceEvent::NodeRemoved { node_id: id.clone(), reason, failed_tasks: victims.clone() });
        Ok(victims)
    }

    /// Flags a node as dead; the next reconcile fails its tasks and drops it.
    pub fn mark_dead(&mut self, id: &NodeId) -> Result<(), MsaError> {
        let n = self.nodes.get_mut(id).ok_or_else(|| MsaError::UnknownNode(id.clone()))?;
        n.alive = false;
        Ok(())
    }

    pub fn drain(&mut self, id: &NodeId, now: u64) -> Result<(), MsaError> {
        let n = self.nodes.get_mut(id).ok_or_else(|| MsaError::UnknownNode(id.clone()))?;
        if !n.draining {
            n.draining = true;
            n.drain_started = Some(now);
        }
        Ok(())
    }

    pub fn undrain(&mut self, id: &NodeId) -> Result<(), MsaError> {
        let n = self.nodes.get_mut(id).ok_or_else(|| MsaError::UnknownNode(id.clone()))?;
        n.draining = false;
        n.drain_started = None;
        Ok(())
    }

    pub fn add_framework(&mut self, id: impl Into<FrameworkId>, kind: FrameworkKind) -> Result<(), MsaError> {
        let id = id.into();
        if self.frameworks.contains_key(&id) {
            return Err(MsaError::DuplicateFramework(id));
        }
        self.frameworks.insert(
            id.clone(),
            Framework { framework_id: id, kind, allocation: ResourceVector::ZERO, queue: Vec::new(), running: BTreeSet::new() },
        );
        Ok(())
    }

    // ----- tasks -----

    fn enqueue(&mut self, framework: &FrameworkId, demand: ResourceVector, owner: TaskOwner, now: u64) -> TaskId {
        self.task_seq += 1;
        let id = TaskId::new(format!("task-{:06}", self.task_seq));
        self.tasks.insert(
            id.clone(),
            Task { task_id: id.clone(), framework_id: framework.clone(), demand, owner, node: None, enqueued_at: now, placed_at: None },
        );
        self.frameworks.get_mut(framework).expect("known framework").queue.push(id.clone());
        id
    }

    /// Queues a plain task for a generic framework.
    pub fn submit_task(&mut self, framework: &FrameworkId, demand: ResourceVector, now: u64) -> Result<TaskId, MsaError> {
        if !self.frameworks.contains_key(framework) {
            return Err(MsaError::UnknownFramework(framework.clone()));
        }
        Ok(self.enqueue(framework, demand, TaskOwner::Generic, now))
    }

    /// Takes a task off its node (or queue) and forgets it.
    fn drop_task(&mut self, id: &TaskId) -> Option<Task> {
        let t = self.tasks.remove(id)?;
        let f = self.frameworks.get_mut(&t.framework_id).expect("framework of task");
        match &t.node {
            Some(node) => {
                f.running.remove(id);
                f.allocation = f.allocation - t.demand;
                if let Some(n) = self.nodes.get_mut(node) {
                    n.free += t.demand;
                    n.tasks.remove(id);
                }
                self.trace.push(TraceEvent::Released { task_id: id.clone(), node_id: node.clone() });
            }
            None => f.queue.retain(|q| q != id),
        }
        Some(t)
    }

    fn fail_task(&mut self, id: &TaskId, now: u64, why: &str) {
        let Some(t) = self.tasks.get(id).cloned() else { return };
        match &t.owner {
            TaskOwner::Generic => {
                self.drop_task(id);
                let new = self.enqueue(&t.framework_id, t.demand, TaskOwner::Generic, now);
                // keep the original arrival time so waiting is measured end to end
                self.tasks.get_mut(&new).expect("new task").enqueued_at = t.enqueued_at;
            }
            TaskOwner::Service(sid) => {
                self.drop_task(id);
                if let Some(s) = self.services.get_mut(sid) {
                    for i in s.instances.iter_mut().filter(|i| &i.task_id == id) {
                        i.state = InstanceState::Failed;
                        i.since = now;
                    }
                    s.pending.retain(|p| p != id);
                }
            }
            TaskOwner::Job(jid) => {
                self.drop_task(id);
                let jid = jid.clone();
                self.job_attempt_failed(&jid, now, why);
            }
        }
    }

    // ----- services -----

    pub fn submit_service(&mut self, spec: ServiceSpec) -> Result<(), MsaError> {
        if self.services.contains_key(&spec.service_id) {
            return Err(MsaError::DuplicateService(spec.service_id));
        }
        if spec.replicas_target == 0 {
            return Err(MsaError::Invalid(String::from("replicas_target must be at least 1")));
        }
        self.services.insert(
            spec.service_id.clone(),
            LongRunningService { spec, instances: Vec::new(), pending: Vec::new(), restarts: 0 },
        );
        Ok(())
    }

    pub fn scale_service(&mut self, id: &ServiceId, replicas: u32) -> Result<(), MsaError> {
        if replicas == 0 {
            return Err(MsaError::Invalid(String::from("replicas must be at least 1")));
        }
        let s = self.services.get_mut(id).ok_or_else(|| MsaError::UnknownService(id.clone()))?;
        s.spec.replicas_target = replicas;
        Ok(())
    }

    /// Removes a service and releases everything it holds.
    pub fn remove_service(&mut self, id: &ServiceId) -> Result<(), MsaError> {
        let s = self.services.remove(id).ok_or_else(|| MsaError::UnknownService(id.clone()))?;
        for t in s.pending.iter().chain(s.instances.iter().map(|i| &i.task_id)) {
            self.drop_task(t);
        }
        Ok(())
    }

    /// Kills one running instance as if its process died; the next
    /// reconcile replaces it.
    pub fn kill_instance(&mut self, service: &ServiceId, task: &TaskId, now: u64) -> Result<(), MsaError> {
        let s = self.services.get(service).ok_or_else(|| MsaError::UnknownService(service.clone()))?;
        if !s.instances.iter().any(|i| &i.task_id == task && i.state != InstanceState::Failed) {
            return Err(MsaError::Invalid(format!("{task} is not a live instance of {service}")));
        }
        self.fail_task(task, now, "killed");
        Ok(())
    }

    /// Replaces failed and missing instances and trims surplus ones. Starting
    /// instances placed by an earlier offer round become Running.
    pub fn reconcile_services(&mut self, now: u64) -> Vec<ServiceAction> {
        let mut actions = Vec::new();
        // nodes flagged dead: fail their tasks and drop them
        let dead: Vec<NodeId> = self.nodes.values().filter(|n| !n.alive).map(|n| n.node_id.clone()).collect();
        for id in dead {
            let _ = self.remove_node(&id, RemovalReason::Failure, now);
        }
        let ids: Vec<ServiceId> = self.services.keys().cloned().collect();
        for sid in ids {
            let mut to_kill = Vec::new();
            let mut enqueue = 0;
            {
                let s = self.services.get_mut(&sid).expect("service");
                for i in s.instances.iter().filter(|i| i.state == InstanceState::Failed) {
                    actions.push(ServiceAction::InstanceFailed {
                        service_id: sid.clone(),
                        task_id: i.task_id.clone(),
                        node_id: i.node_id.clone(),
                    });
                    s.restarts += 1;
                }
                s.instances.retain(|i| i.state != InstanceState::Failed);
                for i in s.instances.iter_mut().filter(|i| i.state == InstanceState::Starting) {
                    i.state = InstanceState::Running;
                    i.since = now;
                    actions.push(ServiceAction::Promoted { service_id: sid.clone(), task_id: i.task_id.clone() });
                }
                let target = s.spec.replicas_target as usize;
                let active = s.instances.len() + s.pending.len();
                if active < target {
                    enqueue = target - active;
                } else {
                    let mut surplus = active - target;
                    while surplus > 0 {
                        let t = match s.pending.pop() {
                            Some(t) => t,
                            None => s.instances.pop().expect("surplus instance").task_id,
                        };
                        to_kill.push(t);
                        surplus -= 1;
                    }
                }
            }
            for t in to_kill {
                self.drop_task(&t);
                actions.push(ServiceAction::Killed { service_id: sid.clone(), task_id: t });
            }
            if enqueue > 0 {
                let demand = self.services[&sid].spec.demand_per_instance;
                let fw = FrameworkId::new(SERVICE_FRAMEWORK);
                for _ in 0..enqueue {
                    let t = self.enqueue(&fw, demand, TaskOwner::Service(sid.clone()), now);
                    self.services.get_mut(&sid).expect("service").pending.push(t);
                }
                actions.push(ServiceAction::Enqueued { service_id: sid.clone(), count: enqueue as u32 });
            }
        }
        actions
    }

    // ----- jobs -----

    /// Admits a batch of jobs. Dependencies may point at earlier jobs or
    /// at jobs in the same batch; cycles are refused.
    pub fn submit_jobs(&mut self, specs: Vec<JobSpec>) -> Result<(), MsaError> {
        let mut batch: BTreeMap<&JobId, &JobSpec> = BTreeMap::new();
        for s in &specs {
            if self.jobs.contains_key(&s.job_id) || batch.insert(&s.job_id, s).is_some() {
                return Err(MsaError::DuplicateJob(s.job_id.clone()));
            }
            if s.max_attempts == 0 {
                return Err(MsaError::Invalid(format!("job {} needs max_attempts >= 1", s.job_id)));
            }
        }
        for s in &specs {
            for d in &s.depends_on {
                if !batch.contains_key(d) && !self.jobs.contains_key(d) {
                    return Err(MsaError::UnknownDependency { job: s.job_id.clone(), dependency: d.clone() });
                }
            }
        }
        // existing jobs cannot depend on new ones, so cycles lie within the batch
        let mut indegree: BTreeMap<&JobId, usize> = batch
            .iter()
            .map(|(id, s)| (*id, s.depends_on.iter().filter(|d| batch.contains_key(d)).count()))
            .collect();
        let mut ready: Vec<&JobId> = indegree.iter().filter(|(_, c)| **c == 0).map(|(id, _)| *id).collect();
        let mut seen = 0;
        while let Some(id) = ready.pop() {
            seen += 1;
            for (other, s) in &batch {
                if s.depends_on.contains(id) {
                    let c = indegree.get_mut(other).expect("in batch");
                    *c -= 1;
                    if *c == 0 {
                        ready.push(other);
                    }
                }
            }
        }
        if seen != batch.len() {
            let stuck = indegree.into_iter().filter(|(_, c)| *c > 0).map(|(id, _)| id.clone()).collect();
            return Err(MsaError::CyclicDependency(stuck));
        }
        for s in specs {
            self.jobs.insert(
                s.job_id.clone(),
                BatchJob { spec: s, state: JobState::Pending, attempts: 0, task: None, started_at: None, finished_at: None, failure: None },
            );
        }
        Ok(())
    }

    /// Cancels a job: releases its task and marks it Failed.
    pub fn cancel_job(&mut self, id: &JobId, now: u64) -> Result<(), MsaError> {
        let j = self.jobs.get_mut(id).ok_or_else(|| MsaError::UnknownJob(id.clone()))?;
        if j.state.is_terminal() {
            return Ok(());
        }
        j.state = JobState::Failed;
        j.failure = Some(String::from("cancelled"));
        j.finished_at = Some(now);
        if let Some(t) = j.task.take() {
            self.drop_task(&t);
        }
        Ok(())
    }

    fn job_attempt_failed(&mut self, id: &JobId, now: u64, why: &str) {
        let fw = FrameworkId::new(JOB_FRAMEWORK);
        let j = self.jobs.get_mut(id).expect("job");
        j.task = None;
        j.started_at = None;
        if j.attempts < j.spec.max_attempts {
            j.state = JobState::Runnable;
            let demand = j.spec.demand;
            let t = self.enqueue(&fw, demand, TaskOwner::Job(id.clone()), now);
            self.jobs.get_mut(id).expect("job").task = Some(t);
        } else {
            j.state = JobState::Failed;
            j.failure = Some(format!("attempt {} of {} failed: {why}", j.attempts, j.spec.max_attempts));
            j.finished_at = Some(now);
        }
    }

    /// Finishes jobs whose run time has elapsed, retries or fails them, and
    /// promotes jobs whose dependencies are done. Failure cascades to
    /// dependents.
    pub fn advance_jobs(&mut self, now: u64) -> Vec<JobChange> {
        let mut changes = Vec::new();
        let fw = FrameworkId::new(JOB_FRAMEWORK);
        let due: Vec<JobId> = self
            .jobs
            .values()
            .filter(|j| j.state == JobState::Running && j.started_at.is_some_and(|s| now >= s + j.spec.duration))
            .map(|j| j.spec.job_id.clone())
            .collect();
        for id in due {
            let task = self.jobs[&id].task.clone();
            if let Some(t) = &task {
                self.drop_task(t);
            }
            let j = self.jobs.get_mut(&id).expect("job");
            if j.attempts <= j.spec.simulate_failures {
                self.job_attempt_failed(&id, now, "exited with failure");
                let j = &self.jobs[&id];
                changes.push(JobChange { job_id: id, from: JobState::Running, to: j.state, attempts: j.attempts, detail: j.failure.clone() });
            } else {
                j.state = JobState::Done;
                j.task = None;
                j.finished_at = Some(now);
                changes.push(JobChange { job_id: id, from: JobState::Running, to: JobState::Done, attempts: j.attempts, detail: None });
            }
        }
        loop {
            let mut progressed = false;
            let ids: Vec<JobId> = self.jobs.values().filter(|j| j.state == JobState::Pending).map(|j| j.spec.job_id.clone()).collect();
            for id in ids {
                let deps = &self.jobs[&id].spec.depends_on;
                let failed = deps.iter().find(|d| self.jobs.get(*d).map_or(true, |j| j.state == JobState::Failed)).cloned();
                let all_done = deps.iter().all(|d| self.jobs.get(d).is_some_and(|j| j.state == JobState::Done));
                if let Some(dep) = failed {
                    let j = self.jobs.get_mut(&id).expect("job");
                    j.state = JobState::Failed;
                    j.failure = Some(format!("dependency {dep} failed"));
                    j.finished_at = Some(now);
                    changes.push(JobChange { job_id: id, from: JobState::Pending, to: JobState::Failed, attempts: 0, detail: j.failure.clone() });
                    progressed = true;
                } else if all_done {
                    let demand = self.jobs[&id].spec.demand;
                    let t = self.enqueue(&fw, demand, TaskOwner::Job(id.clone()), now);
                    let j = self.jobs.get_mut(&id).expect("job");
                    j.state = JobState::Runnable;
                    j.task = Some(t);
                    changes.push(JobChange { job_id: id, from: JobState::Pending, to: JobState::Runnable, attempts: 0, detail: None });
                    progressed = true;
                }
            }
            if !progressed {
                break;
            }
        }
        changes
    }

    // ----- offers -----

    fn offer_order(&self) -> Vec<NodeId> {
        let mut v: Vec<&SlaveNode> = self.nodes.values().filter(|n| n.accepts()).collect();
        v.sort_by(|a, b| {
            (b.free.cpu, b.free.mem, b.free.disk).cmp(&(a.free.cpu, a.free.mem, a.free.disk)).then_with(|| a.node_id.cmp(&b.node_id))
        });
        v.into_iter().map(|n| n.node_id.clone()).collect()
    }

    /// Offers free resources until no framework can place a pending task.
    /// Each selection places at most one task: the first in the chosen
    /// framework's queue that fits a node, on the first such node taken
    /// largest-free-first. Tasks are never split across nodes.
    pub fn offer_round(&mut self, now: u64) -> Vec<Offer> {
        let mut offers = Vec::new();
        let mut declined: BTreeSet<FrameworkId> = BTreeSet::new();
        loop {
            let total = self.cluster_total();
            let views: Vec<FrameworkView<'_>> = self
                .frameworks
                .values()
                .filter(|f| !f.queue.is_empty() && !declined.contains(&f.framework_id))
                .map(|f| FrameworkView {
                    framework_id: &f.framework_id,
                    allocation: f.allocation,
                    dominant_share: f.allocation.dominant_share(&total),
                    oldest_pending: f.queue.iter().map(|t| self.tasks[t].enqueued_at).min().unwrap_or(0),
                })
                .collect();
            let Some(fid) = self.policy.next(&views).cloned() else { break };
            let order = self.offer_order();
            let f = &self.frameworks[&fid];
            let choice = f.queue.iter().find_map(|t| {
                let demand = self.tasks[t].demand;
                order.iter().find(|n| demand.fits_in(&self.nodes[*n].free)).map(|n| (t.clone(), n.clone()))
            });
            let Some((task_id, node_id)) = choice else {
                self.trace.push(TraceEvent::Declined { framework_id: fid.clone() });
                declined.insert(fid);
                continue;
            };
            let offered = self.nodes[&node_id].free;
            self.trace.push(TraceEvent::Offer { framework_id: fid.clone(), node_id: node_id.clone(), offered });
            self.place(&fid, &task_id, &node_id, now);
            offers.push(Offer { framework_id: fid, node_id, offered, accepted: alloc::vec![task_id] });
        }
        offers
    }

    fn place(&mut self, fid: &FrameworkId, task_id: &TaskId, node_id: &NodeId, now: u64) {
        let t = self.tasks.get_mut(task_id).expect("task");
        let demand = t.demand;
        t.node = Some(node_id.clone());
        t.placed_at = Some(now);
        let owner = t.owner.clone();
        let n = self.nodes.get_mut(node_id).expect("node");
        n.free = n.free.checked_sub(&demand).expect("placement fits");
        n.tasks.insert(task_id.clone());
        n.idle_since = None;
        let f = self.frameworks.get_mut(fid).expect("framework");
        f.queue.retain(|q| q != task_id);
        f.running.insert(task_id.clone());
        f.allocation += demand;
        self.trace.push(TraceEvent::Place { framework_id: fid.clone(), node_id: node_id.clone(), task_id: task_id.clone(), demand });
        match owner {
            TaskOwner::Generic => {}
            TaskOwner::Service(sid) => {
                let s = self.services.get_mut(&sid).expect("service");
                s.pending.retain(|p| p != task_id);
                s.instances.push(Instance { task_id: task_id.clone(), node_id: node_id.clone(), state: InstanceState::Starting, since: now });
            }
            TaskOwner::Job(jid) => {
                let j = self.jobs.get_mut(&jid).expect("job");
                j.state = JobState::Running;
                j.attempts += 1;
                j.started_at = Some(now);
            }
        }
    }

    // ----- driving -----

    pub fn post(&mut self, cmd: MsaCommand) {
        self.mailbox.push(cmd);
    }

    /// Drains the mailbox, then reconciles services, advances jobs and runs
    /// one offer round. Mailbox commands that fail are dropped.
    pub fn step(&mut self, now: u64) -> StepReport {
        self.trace.clear();
        for cmd in core::mem::take(&mut self.mailbox) {
            let _ = match cmd {
                MsaCommand::SubmitService(s) => self.submit_service(s),
                MsaCommand::SubmitJobs(j) => self.submit_jobs(j),
                MsaCommand::Scale { service_id, replicas } => self.scale_service(&service_id, replicas),
            };
        }
        let services = self.reconcile_services(now);
        let jobs = self.advance_jobs(now);
        let offers = self.offer_round(now);
        for n in self.nodes.values_mut() {
            if n.tasks.is_empty() {
                n.idle_since.get_or_insert(now);
            } else {
                n.idle_since = None;
            }
        }
        StepReport { now, services, jobs, offers }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use alloc::vec::Vec;
    use proptest::prelude::*;

    fn rv(cpu: u64, mem: u64) -> ResourceVector {
        ResourceVector::new(cpu, mem, 0)
    }

    fn generic(c: &mut Cluster, ids: &[&str]) {
        for id in ids {
            c.add_framework(*id, FrameworkKind::Generic).unwrap();
        }
    }

    #[test]
    fn add_remove_idle_node() {
        let mut c = Cluster::default();
        c.add_node(SlaveNode::new("n1", rv(4, 8)), 0).unwrap();
        c.remove_node(&"n1".into(), RemovalReason::ScaleIn, 1).unwrap();
        assert_eq!(c.nodes().count(), 0);
        assert_eq!(c.remove_node(&"n1".into(), RemovalReason::ScaleIn, 1).unwrap_err().code(), "UNKNOWN_NODE");
    }

    #[test]
    fn drf_selection_examples() {
        let total = rv(10, 10);
        let mut a = Framework { framework_id: "A".into(), kind: FrameworkKind::Generic, allocation: rv(2, 0), queue: vec!["t1".into()], running: BTreeSet::new() };
        let mut b = Framework { framework_id: "B".into(), allocation: rv(5, 0), ..a.clone() };
        assert_eq!(drf_next_framework([&a, &b], &total).unwrap().as_str(), "A");
        b.allocation = rv(2, 0);
        assert_eq!(drf_next_framework([&b, &a], &total).unwrap().as_str(), "A");
        a.queue.clear();
        b.queue.clear();
        assert_eq!(drf_next_framework([&a, &b], &total).unwrap_err(), MsaError::NoPendingDemand);
    }

    #[test]
    fn canonical_drf_instance() {
        let mut c = Cluster::default();
        generic(&mut c, &["A", "B"]);
        c.add_node(SlaveNode::new("n1", rv(9, 18)), 0).unwrap();
        for _ in 0..10 {
            c.submit_task(&"A".into(), rv(1, 4), 0).unwrap();
            c.submit_task(&"B".into(), rv(3, 1), 0).unwrap();
        }
        c.offer_round(0);
        let a = c.framework(&"A".into()).unwrap();
        let b = c.framework(&"B".into()).unwrap();
        assert_eq!((a.running.len(), b.running.len()), (3, 2));
        assert_eq!(c.dominant_share(&"A".into()).unwrap(), Share::new(12, 18));
        assert_eq!(c.dominant_share(&"B".into()).unwrap(), Share::new(6, 9));
        c.check_accounting().unwrap();
    }

    #[test]
    fn no_split_across_nodes() {
        let mut c = Cluster::default();
        generic(&mut c, &["A"]);
        c.add_node(SlaveNode::new("n1", rv(4, 8)), 0).unwrap();
        c.add_node(SlaveNode::new("n2", rv(4, 8)), 0).unwrap();
        assert!(c.offer_round(0).is_empty());
        c.submit_task(&"A".into(), rv(6, 1), 0).unwrap();
        assert!(c.offer_round(0).is_empty());
        assert_eq!(c.pending_tasks().count(), 1);
        c.submit_task(&"A".into(), rv(3, 1), 0).unwrap();
        let offers = c.offer_round(0);
        assert_eq!(offers.len(), 1);
        assert_eq!(offers[0].node_id.as_str(), "n1");
        assert_eq!(c.node(&"n1".into()).unwrap().free, rv(1, 7));
    }

    fn service(id: &str, replicas: u32) -> ServiceSpec {
        ServiceSpec { service_id: id.into(), demand_per_instance: rv(1, 1), replicas_target: replicas, health_endpoint: format!("{id}/health"), deployment: None }
    }

    #[test]
    fn service_restart_after_node_failure() {
        let mut c = Cluster::default();
        c.add_node(SlaveNode::new("n1", rv(2, 2)), 0).unwrap();
        c.add_node(SlaveNode::new("n2", rv(8, 8)), 0).unwrap();
        c.submit_service(service("web", 3)).unwrap();
        c.step(0);
        c.step(1);
        let s = c.service(&"web".into()).unwrap();
        assert_eq!(s.running(), 3);
        // largest-free-first puts all three on n2
        assert!(s.instances.iter().all(|i| i.node_id.as_str() == "n2"));
        c.remove_node(&"n2".into(), RemovalReason::Failure, 2).unwrap();
        let r = c.step(2);
        assert!(r.services.contains(&ServiceAction::Enqueued { service_id: "web".into(), count: 3 }));
        c.step(3);
        assert_eq!(c.service(&"web".into()).unwrap().running(), 2);
        assert_eq!(c.pending_tasks().count(), 1);
    }

    #[test]
    fn reconcile_counts() {
        let mut c = Cluster::default();
        c.add_node(SlaveNode::new("n1", rv(8, 8)), 0).unwrap();
        c.submit_service(service("web", 3)).unwrap();
        assert_eq!(c.reconcile_services(0), vec![ServiceAction::Enqueued { service_id: "web".into(), count: 3 }]);
        c.offer_round(0);
        c.reconcile_services(1);
        assert_eq!(c.service(&"web".into()).unwrap().running(), 3);
        assert!(c.reconcile_services(2).is_empty());
        let victim = c.service(&"web".into()).unwrap().instances[0].task_id.clone();
        c.kill_instance(&"web".into(), &victim, 3).unwrap();
        let acts = c.reconcile_services(3);
        assert!(acts.contains(&ServiceAction::Enqueued { service_id: "web".into(), count: 1 }));
        c.scale_service(&"web".into(), 1).unwrap();
        c.reconcile_services(4);
        let s = c.service(&"web".into()).unwrap();
        assert_eq!(s.instances.len() + s.pending.len(), 1);
        c.check_accounting().unwrap();
    }

    #[test]
    fn mark_dead_is_handled_at_reconcile() {
        let mut c = Cluster::default();
        c.add_node(SlaveNode::new("n1", rv(8, 8)), 0).unwrap();
        c.add_node(SlaveNode::new("n2", rv(4, 4)), 0).unwrap();
        c.submit_service(service("web", 2)).unwrap();
        c.step(0);
        c.step(1);
        c.mark_dead(&"n1".into()).unwrap();
        assert_eq!(c.cluster_total(), rv(4, 4));
        c.step(2);
        c.step(3);
        assert_eq!(c.service(&"web".into()).unwrap().running(), 2);
        assert!(c.node(&"n1".into()).is_none());
    }

    fn job(id: &str, deps: &[&str], duration: u64) -> JobSpec {
        JobSpec {
            job_id: id.into(),
            demand: rv(1, 1),
            depends_on: deps.iter().map(|d| JobId::new(*d)).collect(),
            duration,
            max_attempts: 3,
            simulate_failures: 0,
            deployment: None,
        }
    }

    fn run_until_quiet(c: &mut Cluster, from: u64, steps: u64) -> Vec<(u64, JobChange)> {
        let mut log = Vec::new();
        for t in from..from + steps {
            for ch in c.step(t).jobs {
                log.push((t, ch));
            }
        }
        log
    }

    #[test]
    fn job_chain_completes_in_order() {
        let mut c = Cluster::default();
        c.add_node(SlaveNode::new("n1", rv(8, 8)), 0).unwrap();
        c.submit_jobs(vec![job("c", &["b"], 1), job("b", &["a"], 1), job("a", &[], 1)]).unwrap();
        let log = run_until_quiet(&mut c, 0, 10);
        let done: Vec<&str> = log.iter().filter(|(_, ch)| ch.to == JobState::Done).map(|(_, ch)| ch.job_id.as_str()).collect();
        assert_eq!(done, ["a", "b", "c"]);
    }

    #[test]
    fn job_retries_until_done() {
        let mut c = Cluster::default();
        c.add_node(SlaveNode::new("n1", rv(8, 8)), 0).unwrap();
        let mut j = job("flaky", &[], 2);
        j.simulate_failures = 2;
        c.submit_jobs(vec![j]).unwrap();
        run_until_quiet(&mut c, 0, 20);
        let j = c.job(&"flaky".into()).unwrap();
        assert_eq!((j.state, j.attempts), (JobState::Done, 3));
    }

    #[test]
    fn exhausted_job_cascades() {
        let mut c = Cluster::default();
        c.add_node(SlaveNode::new("n1", rv(8, 8)), 0).unwrap();
        let mut a = job("a", &[], 1);
        a.simulate_failures = 5;
        c.submit_jobs(vec![a, job("b", &["a"], 1), job("c", &["b"], 1)]).unwrap();
        run_until_quiet(&mut c, 0, 20);
        assert_eq!(c.job(&"a".into()).unwrap().attempts, 3);
        for id in ["a", "b", "c"] {
            assert_eq!(c.job(&id.into()).unwrap().state, JobState::Failed);
        }
        assert_eq!(c.tasks().count(), 0);
    }

    #[test]
    fn cyclic_submission_refused() {
        let mut c = Cluster::default();
        let e = c.submit_jobs(vec![job("a", &["b"], 1), job("b", &["a"], 1)]).unwrap_err();
        assert_eq!(e.code(), "CYCLIC_DEPENDENCY");
        assert_eq!(c.jobs().count(), 0);
        assert_eq!(c.submit_jobs(vec![job("a", &["zz"], 1)]).unwrap_err().code(), "UNKNOWN_DEPENDENCY");
    }

    #[test]
    fn node_failure_retries_running_job() {
        let mut c = Cluster::default();
        c.add_node(SlaveNode::new("n1", rv(2, 2)), 0).unwrap();
        c.submit_jobs(vec![job("a", &[], 100)]).unwrap();
        c.step(0);
        assert_eq!(c.job(&"a".into()).unwrap().state, JobState::Running);
        c.remove_node(&"n1".into(), RemovalReason::Preemption, 5).unwrap();
        let j = c.job(&"a".into()).unwrap();
        assert_eq!((j.state, j.attempts), (JobState::Runnable, 1));
        c.add_node(SlaveNode::new("n2", rv(2, 2)), 6).unwrap();
        c.step(6);
        assert_eq!(c.job(&"a".into()).unwrap().attempts, 2);
    }

    #[test]
    fn fifo_policy_follows_arrival() {
        let mut c = Cluster::new(PolicyKind::Fifo);
        generic(&mut c, &["A", "B"]);
        c.add_node(SlaveNode::new("n1", rv(4, 4)), 0).unwrap();
        c.submit_task(&"B".into(), rv(1, 1), 0).unwrap();
        for _ in 0..4 {
            c.submit_task(&"A".into(), rv(1, 1), 1).unwrap();
        }
        c.submit_task(&"B".into(), rv(1, 1), 2).unwrap();
        c.offer_round(3);
        assert_eq!(c.framework(&"A".into()).unwrap().running.len(), 3);
        assert_eq!(c.framework(&"B".into()).unwrap().running.len(), 1);
    }

    #[test]
    fn draining_node_gets_no_offers() {
        let mut c = Cluster::default();
        generic(&mut c, &["A"]);
        c.add_node(SlaveNode::new("n1", rv(4, 4)), 0).unwrap();
        c.drain(&"n1".into(), 0).unwrap();
        c.submit_task(&"A".into(), rv(1, 1), 0).unwrap();
        assert!(c.offer_round(0).is_empty());
        c.undrain(&"n1".into()).unwrap();
        assert_eq!(c.offer_round(0).len(), 1);
    }

    proptest! {
        #[test]
        fn work_conservation(tasks in proptest::collection::vec((0usize..3, 1u64..6, 1u64..6), 1..20), nodes in proptest::collection::vec((1u64..8, 1u64..8), 1..4)) {
            let mut c = Cluster::default();
            generic(&mut c, &["a", "b", "c"]);
            for (i, (cpu, mem)) in nodes.iter().enumerate() {
                c.add_node(SlaveNode::new(format!("n{i}").as_str(), rv(*cpu, *mem)), 0).unwrap();
            }
            for (f, cpu, mem) in &tasks {
                c.submit_task(&["a", "b", "c"][*f].into(), rv(*cpu, *mem), 0).unwrap();
            }
            let fits_somewhere = c.pending_tasks().any(|t| c.nodes().any(|n| t.demand.fits_in(&n.free)));
            let offers = c.offer_round(0);
            prop_assert_eq!(fits_somewhere, !offers.is_empty());
            // saturation: nothing pending fits anywhere afterwards
            prop_assert!(!c.pending_tasks().any(|t| c.nodes().any(|n| t.demand.fits_in(&n.free))));
            c.check_accounting().map_err(TestCaseError::fail)?;
        }
    }
}
