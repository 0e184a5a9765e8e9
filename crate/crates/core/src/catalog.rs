//! Site registry and health derived from monitoring samples.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::ids::SiteId;
use crate::resources::{Amount, ResourceVector};
use crate::slam::SlaClass;

/// A sample older than this many seconds makes the site unhealthy.
pub const STALENESS_SECS: u64 = 120;

#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Capability {
    Gpu,
    Infiniband,
    SpotInstances,
    PosixStorage,
    WebdavGateway,
}

impl Capability {
    pub fn parse(s: &str) -> Option<Capability> {
        match s {
            "gpu" => Some(Capability::Gpu),
            "infiniband" => Some(Capability::Infiniband),
            "spot_instances" => Some(Capability::SpotInstances),
            "posix_storage" => Some(Capability::PosixStorage),
            "webdav_gateway" => Some(Capability::WebdavGateway),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Capability::Gpu => "gpu",
            Capability::Infiniband => "infiniband",
            Capability::SpotInstances => "spot_instances",
            Capability::PosixStorage => "posix_storage",
            Capability::WebdavGateway => "webdav_gateway",
        }
    }
}

/// Site health, ordered worst-known to best: Unknown < Unhealthy < Degraded < Healthy.
#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Health {
    Unknown,
    Unhealthy,
    Degraded,
    Healthy,
}

impl Health {
    pub fn parse(s: &str) -> Option<Health> {
        match s {
            "Unknown" => Some(Health::Unknown),
            "Unhealthy" => Some(Health::Unhealthy),
            "Degraded" => Some(Health::Degraded),
            "Healthy" => Some(Health::Healthy),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Health::Unknown => "Unknown",
            Health::Unhealthy => "Unhealthy",
            Health::Degraded => "Degraded",
            Health::Healthy => "Healthy",
        }
    }
}

impl fmt::Display for Health {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiteDescriptor {
    pub site_id: SiteId,
    #[serde(default)]
    pub capabilities: BTreeSet<Capability>,
    pub capacity: ResourceVector,
    /// GiB.
    pub storage_capacity: Amount,
    pub supported_sla_classes: BTreeSet<SlaClass>,
    /// Cost units per core-hour.
    pub base_cost: Amount,
}

impl SiteDescriptor {
    pub fn has(&self, c: Capability) -> bool {
        self.capabilities.contains(&c)
    }

    fn check(&self) -> Result<(), CatalogError> {
        if self.site_id.as_str().is_empty() {
            return Err(CatalogError::InvalidDescriptor(String::from("site_id is empty")));
        }
        if !self.capacity.strictly_positive() {
            return Err(CatalogError::InvalidDescriptor(alloc::format!(
                "capacity of {} must be positive in every dimension, got {}",
                self.site_id,
                self.capacity
            )));
        }
        if self.supported_sla_classes.is_empty() {
            return Err(CatalogError::InvalidDescriptor(alloc::format!(
                "site {} supports no SLA class",
                self.site_id
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonitorSample {
    pub site_id: SiteId,
    pub timestamp: u64,
    pub free: ResourceVector,
    pub error_rate: f64,
    pub latency_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiteState {
    pub descriptor: SiteDescriptor,
    pub last_sample: Option<MonitorSample>,
    pub health: Health,
}

impl SiteState {
    pub fn site_id(&self) -> &SiteId {
        &self.descriptor.site_id
    }

    /// Last reported free resources; nothing is known free without a sample.
    pub fn free(&self) -> ResourceVector {
        self.last_sample.as_ref().map(|s| s.free).unwrap_or(ResourceVector::ZERO)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, thiserror::Error)]
pub enum CatalogError {
    #[error("site {0} is already registered")]
    DuplicateSite(SiteId),
    #[error("unknown site {0}")]
    UnknownSite(SiteId),
    #[error("sample for {site} at {got} is older than the previous one at {previous}")]
    StaleSample { site: SiteId, previous: u64, got: u64 },
    #[error("invalid site descriptor: {0}")]
    InvalidDescriptor(String),
    #[error("invalid monitoring sample: {0}")]
    InvalidSample(String),
}

impl CatalogError {
    pub fn code(&self) -> &'static str {
        match self {
            CatalogError::DuplicateSite(_) => "DUPLICATE_SITE",
            CatalogError::UnknownSite(_) => "UNKNOWN_SITE",
            CatalogError::StaleSample { .. } => "STALE_SAMPLE",
            CatalogError::InvalidDescriptor(_) => "INVALID_DESCRIPTOR",
            CatalogError::InvalidSample(_) => "INVALID_SAMPLE",
        }
    }
}

/// The health rule: no sample is Unknown; a sample older than
/// [`STALENESS_SECS`] or an error rate above 0.5 is Unhealthy; an error rate
/// in (0.25, 0.5] is Degraded; anything else is Healthy.
pub fn health(sample: Option<&MonitorSample>, now: u64) -> Health {
    let Some(s) = sample else {
        return Health::Unknown;
    };
    let age = now.saturating_sub(s.timestamp);
    if age > STALENESS_SECS || s.error_rate > 0.5 {
        Health::Unhealthy
    } else if s.error_rate > 0.25 {
        Health::Degraded
    } else {
        Health::Healthy
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Catalog {
    sites: BTreeMap<SiteId, (SiteDescriptor, Option<MonitorSample>)>,
}

impl Catalog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register_site(&mut self, d: SiteDescriptor) -> Result<SiteId, CatalogError> {
        d.check()?;
        if self.sites.contains_key(&d.site_id) {
            return Err(CatalogError::DuplicateSite(d.site_id));
        }
        let id = d.site_id.clone();
        self.sites.insert(id.clone(), (d, None));
        Ok(id)
    }

    pub fn ingest_metrics(&mut self, s: MonitorSample) -> Result<(), CatalogError> {
        let (d, last) = self.sites.get_mut(&s.site_id).ok_or_else(|| CatalogError::UnknownSite(s.site_id.clone()))?;
        if let Some(prev) = last {
            if s.timestamp < prev.timestamp {
                return Err(CatalogError::StaleSample { site: s.site_id, previous: prev.timestamp, got: s.timestamp });
            }
        }
        if !(0.0..=1.0).contains(&s.error_rate) {
            return Err(CatalogError::InvalidSample(alloc::format!("error_rate {} outside [0, 1]", s.error_rate)));
        }
        if !(s.latency_ms.is_finite() && s.latency_ms >= 0.0) {
            return Err(CatalogError::InvalidSample(alloc::format!("latency_ms {} must be finite and >= 0", s.latency_ms)));
        }
        if !s.free.fits_in(&d.capacity) {
            return Err(CatalogError::InvalidSample(alloc::format!(
                "free {} exceeds capacity {} of {}",
                s.free,
                d.capacity,
                s.site_id
            )));
        }
        *last = Some(s);
        Ok(())
    }

    /// Every site, ordered by id, with health evaluated at `now`.
    pub fn snapshot(&self, now: u64) -> Vec<SiteState> {
        self.sites
            .values()
            .map(|(d, s)| SiteState { descriptor: d.clone(), last_sample: s.clone(), health: health(s.as_ref(), now) })
            .collect()
    }

    pub fn state(&self, id: &SiteId, now: u64) -> Option<SiteState> {
        self.sites
            .get(id)
            .map(|(d, s)| SiteState { descriptor: d.clone(), last_sample: s.clone(), health: health(s.as_ref(), now) })
    }

    pub fn descriptor(&self, id: &SiteId) -> Option<&SiteDescriptor> {
        self.sites.get(id).map(|(d, _)| d)
    }

    pub fn site_ids(&self) -> impl Iterator<Item = &SiteId> {
        self.sites.keys()
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }
}
