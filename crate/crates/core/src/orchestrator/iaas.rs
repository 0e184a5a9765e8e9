//! Simulated infrastructure sites.
//!
//! Each site hands out instances against a fixed capacity. On-demand
//! instances are further bounded by an on-demand limit; spot instances may
//! use the rest and can be preempted, either by the site's fault schedule
//! or to make room for a placement allowed to preempt them.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::catalog::MonitorSample;
use crate::ids::{DeploymentId, InstanceId, SiteId};
use crate::resources::ResourceVector;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceState {
    Booting,
    Active,
    Preempted,
    Terminated,
}

impl InstanceState {
    /// Booting and active instances hold capacity.
    pub fn holds_capacity(self) -> bool {
        matches!(self, InstanceState::Booting | InstanceState::Active)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InstanceOwner {
    Deployment { deployment_id: DeploymentId, node: String },
    ClusterNode,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub instance_id: InstanceId,
    pub site_id: SiteId,
    pub size: ResourceVector,
    pub spot: bool,
    pub state: InstanceState,
    pub owner: InstanceOwner,
    pub requested_at: u64,
    pub ready_at: u64,
    /// Why the instance stopped, when it did so involuntarily.
    pub lost: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "fault", rename_all = "snake_case")]
pub enum Fault {
    /// Preempts every spot instance on the site.
    PreemptSpot,
    /// Kills one instance, or the oldest live one when none is named.
    KillInstance { instance_id: Option<InstanceId> },
    /// The site refuses requests and reports errors until the outage ends.
    Outage { duration: u64 },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduledFault {
    pub at: u64,
    pub fault: Fault,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiteConfig {
    pub site_id: SiteId,
    pub capacity: ResourceVector,
    /// Bound on the sum of on-demand instances; defaults to the capacity.
    #[serde(default)]
    pub on_demand_limit: Option<ResourceVector>,
    #[serde(default = "default_boot_delay")]
    pub boot_delay: u64,
    #[serde(default)]
    pub error_rate: f64,
    #[serde(default = "default_latency")]
    pub latency_ms: f64,
    #[serde(default)]
    pub failure_schedule: Vec<ScheduledFault>,
}

fn default_boot_delay() -> u64 {
    10
}

fn default_latency() -> f64 {
    20.0
}

impl SiteConfig {
    pub fn new(site_id: impl Into<SiteId>, capacity: ResourceVector) -> Self {
        SiteConfig {
            site_id: site_id.into(),
            capacity,
            on_demand_limit: None,
            boot_delay: default_boot_delay(),
            error_rate: 0.0,
            latency_ms: default_latency(),
            failure_schedule: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
pub enum IaasError {
    #[error("unknown site {0}")]
    UnknownSite(SiteId),
    #[error("site {0} is already simulated")]
    DuplicateSite(SiteId),
    #[error("site {site} cannot fit {ask}: {free} free")]
    CapacityExhausted { site: SiteId, ask: ResourceVector, free: ResourceVector },
    #[error("site {0} is in an outage")]
    SiteDown(SiteId),
    #[error("unknown instance {0}")]
    UnknownInstance(InstanceId),
}

impl IaasError {
    pub fn code(&self) -> &'static str {
        match self {
            IaasError::UnknownSite(_) => "UNKNOWN_SITE",
            IaasError::DuplicateSite(_) => "DUPLICATE_SITE",
            IaasError::CapacityExhausted { .. } => "CAPACITY_EXHAUSTED",
            IaasError::SiteDown(_) => "SITE_DOWN",
            IaasError::UnknownInstance(_) => "UNKNOWN_INSTANCE",
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestOptions {
    /// Spot capacity may be used when the on-demand limit is reached.
    pub allow_spot: bool,
    /// Spot instances may be preempted to make room.
    pub preempt_spot: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulatedSite {
    pub config: SiteConfig,
    pub outage_until: Option<u64>,
    next_fault: usize,
}

impl SimulatedSite {
    pub fn is_down(&self, now: u64) -> bool {
        self.outage_until.is_some_and(|u| now < u)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum IaasEvent {
    Active { instance_id: InstanceId },
    Lost { instance_id: InstanceId, state: InstanceState, reason: String },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Iaas {
    sites: BTreeMap<SiteId, SimulatedSite>,
    instances: BTreeMap<InstanceId, Instance>,
    next_instance: u64,
}

impl Iaas {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_site(&mut self, config: SiteConfig) -> Result<(), IaasError> {
        if self.sites.contains_key(&config.site_id) {
            return Err(IaasError::DuplicateSite(config.site_id));
        }
        let mut config = config;
        config.failure_schedule.sort_by_key(|f| f.at);
        self.sites.insert(config.site_id.clone(), SimulatedSite { config, outage_until: None, next_fault: 0 });
        Ok(())
    }

    pub fn site(&self, id: &SiteId) -> Option<&SimulatedSite> {
        self.sites.get(id)
    }

    pub fn sites(&self) -> impl Iterator<Item = &SimulatedSite> {
        self.sites.values()
    }

    pub fn instance(&self, id: &InstanceId) -> Option<&Instance> {
        self.instances.get(id)
    }

    pub fn instances(&self) -> impl Iterator<Item = &Instance> {
        self.instances.values()
    }

    pub fn instances_at<'a>(&'a self, site: &'a SiteId) -> impl Iterator<Item = &'a Instance> + 'a {
        self.instances.values().filter(move |i| &i.site_id == site)
    }

    fn used(&self, site: &SiteId, spot: Option<bool>) -> ResourceVector {
        self.instances_at(site)
            .filter(|i| i.state.holds_capacity() && spot.is_none_or(|s| i.spot == s))
            .map(|i| i.size)
            .sum()
    }

    /// Capacity not held by booting or active instances.
    pub fn free(&self, site: &SiteId) -> Option<ResourceVector> {
        let s = self.sites.get(site)?;
        Some(s.config.capacity.saturating_sub(&self.used(site, None)))
    }

    /// Booting and active instances plus free capacity add up to the
    /// capacity exactly.
    pub fn check_conservation(&self) -> Result<(), String> {
        for (id, s) in &self.sites {
            let used = self.used(id, None);
            if !used.fits_in(&s.config.capacity) {
                return Err(format!("site {id} holds {used} over capacity {}", s.config.capacity));
            }
            if used + self.free(id).expect("site") != s.config.capacity {
                return Err(format!("site {id} accounting mismatch"));
            }
            let on_demand = self.used(id, Some(false));
            if let Some(limit) = s.config.on_demand_limit {
                if !on_demand.fits_in(&limit) {
                    return Err(format!("site {id} on-demand {on_demand} over limit {limit}"));
                }
            }
        }
        Ok(())
    }

    /// Starts an instance. It boots for the site's boot delay before
    /// becoming active.
    pub fn request(
        &mut self,
        site: &SiteId,
        size: ResourceVector,
        owner: InstanceOwner,
        opts: RequestOptions,
        now: u64,
    ) -> Result<InstanceId, IaasError> {
        let s = self.sites.get(site).ok_or_else(|| IaasError::UnknownSite(site.clone()))?;
        if s.is_down(now) {
            return Err(IaasError::SiteDown(site.clone()));
        }
        let capacity = s.config.capacity;
        let limit = s.config.on_demand_limit.unwrap_or(capacity);
        let boot_delay = s.config.boot_delay;
        let free = self.free(site).expect("site");
        let on_demand_room = limit.saturating_sub(&self.used(site, Some(false)));
        let exhausted = || IaasError::CapacityExhausted { site: site.clone(), ask: size, free };

        let spot = if size.fits_in(&free) && size.fits_in(&on_demand_room) {
            false
        } else if size.fits_in(&free) && opts.allow_spot {
            true
        } else if opts.preempt_spot && size.fits_in(&on_demand_room) {
            // free room by preempting the newest spot instances first
            let mut victims: Vec<&Instance> =
                self.instances_at(site).filter(|i| i.spot && i.state.holds_capacity()).collect();
            victims.sort_by(|a, b| b.instance_id.cmp(&a.instance_id));
            let mut room = free;
            let mut chosen = Vec::new();
            for v in victims {
                if size.fits_in(&room) {
                    break;
                }
                room += v.size;
                chosen.push(v.instance_id.clone());
            }
            if !size.fits_in(&room) {
                return Err(exhausted());
            }
            for id in chosen {
                self.lose(&id, InstanceState::Preempted, "preempted for a higher class placement");
            }
            false
        } else {
            return Err(exhausted());
        };

        self.next_instance += 1;
        let id = InstanceId::new(format!("i-{:06}", self.next_instance));
        self.instances.insert(
            id.clone(),
            Instance {
                instance_id: id.clone(),
                site_id: site.clone(),
                size,
                spot,
                state: InstanceState::Booting,
                owner,
                requested_at: now,
                ready_at: now + boot_delay,
                lost: None,
            },
        );
        Ok(id)
    }

    /// Releases an instance. Terminating a stopped instance is a no-op.
    pub fn terminate(&mut self, id: &InstanceId) -> Result<(), IaasError> {
        let i = self.instances.get_mut(id).ok_or_else(|| IaasError::UnknownInstance(id.clone()))?;
        if i.state.holds_capacity() {
            i.state = InstanceState::Terminated;
        }
        Ok(())
    }

    fn lose(&mut self, id: &InstanceId, state: InstanceState, reason: &str) -> Option<IaasEvent> {
        let i = self.instances.get_mut(id)?;
        if !i.state.holds_capacity() {
            return None;
        }
        i.state = state;
        i.lost = Some(String::from(reason));
        Some(IaasEvent::Lost { instance_id: id.clone(), state, reason: String::from(reason) })
    }

    /// Kills a live instance as an injected failure.
    pub fn kill(&mut self, id: &InstanceId) -> Result<Option<IaasEvent>, IaasError> {
        if !self.instances.contains_key(id) {
            return Err(IaasError::UnknownInstance(id.clone()));
        }
        Ok(self.lose(id, InstanceState::Terminated, "instance failed"))
    }

    pub fn preempt(&mut self, id: &InstanceId) -> Result<Option<IaasEvent>, IaasError> {
        if !self.instances.contains_key(id) {
            return Err(IaasError::UnknownInstance(id.clone()));
        }
        Ok(self.lose(id, InstanceState::Preempted, "spot instance preempted"))
    }

    pub fn schedule_fault(&mut self, site: &SiteId, fault: ScheduledFault) -> Result<(), IaasError> {
        let s = self.sites.get_mut(site).ok_or_else(|| IaasError::UnknownSite(site.clone()))?;
        let pos = s.config.failure_schedule[s.next_fault..].partition_point(|f| f.at <= fault.at) + s.next_fault;
        s.config.failure_schedule.insert(pos, fault);
        Ok(())
    }

    pub fn apply_fault(&mut self, site: &SiteId, fault: &Fault, now: u64) -> Vec<IaasEvent> {
        let mut events = Vec::new();
        match fault {
            Fault::PreemptSpot => {
                let ids: Vec<InstanceId> = self
                    .instances_at(site)
                    .filter(|i| i.spot && i.state.holds_capacity())
                    .map(|i| i.instance_id.clone())
                    .collect();
                for id in ids {
                    events.extend(self.lose(&id, InstanceState::Preempted, "spot instance preempted"));
                }
            }
            Fault::KillInstance { instance_id } => {
                let target = instance_id.clone().or_else(|| {
                    self.instances_at(site).find(|i| i.state.holds_capacity()).map(|i| i.instance_id.clone())
                });
                if let Some(id) = target.filter(|id| self.instances.get(id).is_some_and(|i| &i.site_id == site)) {
                    events.extend(self.lose(&id, InstanceState::Terminated, "instance failed"));
                }
            }
            Fault::Outage { duration } => {
                if let Some(s) = self.sites.get_mut(site) {
                    s.outage_until = Some(now + duration);
                }
                let ids: Vec<InstanceId> = self
                    .instances_at(site)
                    .filter(|i| i.state.holds_capacity())
                    .map(|i| i.instance_id.clone())
                    .collect();
                for id in ids {
                    events.extend(self.lose(&id, InstanceState::Terminated, "site outage"));
                }
            }
        }
        events
    }

    /// Fires due faults, then finishes boots that are due.
    pub fn tick(&mut self, now: u64) -> Vec<IaasEvent> {
        let mut events = Vec::new();
        let site_ids: Vec<SiteId> = self.sites.keys().cloned().collect();
        for site in &site_ids {
            loop {
                let s = &self.sites[site];
                let Some(f) = s.config.failure_schedule.get(s.next_fault).filter(|f| f.at <= now).cloned() else {
                    break;
                };
                self.sites.get_mut(site).expect("site").next_fault += 1;
                events.extend(self.apply_fault(site, &f.fault, now));
            }
        }
        for i in self.instances.values_mut() {
            if i.state == InstanceState::Booting && now >= i.ready_at {
                i.state = InstanceState::Active;
                events.push(IaasEvent::Active { instance_id: i.instance_id.clone() });
            }
        }
        events
    }

    /// What the site's monitoring agent would report now.
    pub fn sample(&self, site: &SiteId, now: u64) -> Option<MonitorSample> {
        let s = self.sites.get(site)?;
        let down = s.is_down(now);
        Some(MonitorSample {
            site_id: site.clone(),
            timestamp: now,
            free: if down { ResourceVector::ZERO } else { self.free(site)? },
            error_rate: if down { 1.0 } else { s.config.error_rate },
            latency_ms: s.config.latency_ms,
        })
    }
}
