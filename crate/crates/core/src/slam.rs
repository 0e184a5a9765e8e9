//! Service-level agreements between accounts and sites.

use alloc::collections::BTreeMap;
use alloc::format;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::catalog::Catalog;
use crate::ids::{AccountId, SiteId, SlaId};
use crate::resources::Amount;

/// Agreement lifetime: 30 days.
pub const SLA_TERM_SECS: u64 = 30 * 24 * 3600;

/// Service class, ordered Bronze < Silver < Gold.
#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SlaClass {
    Bronze,
    Silver,
    Gold,
}

impl SlaClass {
    pub const ALL: [SlaClass; 3] = [SlaClass::Gold, SlaClass::Silver, SlaClass::Bronze];

    pub fn parse(s: &str) -> Option<SlaClass> {
        match s {
            "Gold" | "gold" => Some(SlaClass::Gold),
            "Silver" | "silver" => Some(SlaClass::Silver),
            "Bronze" | "bronze" => Some(SlaClass::Bronze),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SlaClass::Gold => "Gold",
            SlaClass::Silver => "Silver",
            SlaClass::Bronze => "Bronze",
        }
    }

    /// Gold placements may reclaim spot capacity from others.
    pub fn may_preempt_spot(self) -> bool {
        self == SlaClass::Gold
    }

    /// Bronze placements may run on preemptible capacity.
    pub fn may_run_on_spot(self) -> bool {
        self == SlaClass::Bronze
    }

    /// Minimum number of complete replicas for data owned under this class.
    pub fn replication_min(self) -> u32 {
        match self {
            SlaClass::Gold | SlaClass::Silver => 2,
            SlaClass::Bronze => 1,
        }
    }
}

impl fmt::Display for SlaClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlaCaps {
    pub max_cores: u64,
    /// GiB.
    pub max_storage: Amount,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlaRecord {
    pub sla_id: SlaId,
    pub account_id: AccountId,
    pub site_id: SiteId,
    pub class: SlaClass,
    pub max_cores: u64,
    pub max_storage: Amount,
    pub negotiated_at: u64,
    pub valid_until: u64,
}

impl SlaRecord {
    pub fn is_active(&self, now: u64) -> bool {
        now <= self.valid_until
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QosProfile {
    pub account_id: AccountId,
    pub sites: BTreeMap<SiteId, SlaClass>,
    pub default_class: SlaClass,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
pub enum SlamError {
    #[error("site {site} does not offer the {class} class")]
    UnsupportedClass { site: SiteId, class: SlaClass },
    #[error("unknown site {0}")]
    UnknownSite(SiteId),
    #[error("max_cores must be at least 1")]
    InvalidCaps,
}

impl SlamError {
    pub fn code(&self) -> &'static str {
        match self {
            SlamError::UnsupportedClass { .. } => "UNSUPPORTED_CLASS",
            SlamError::UnknownSite(_) => "UNKNOWN_SITE",
            SlamError::InvalidCaps => "INVALID_CAPS",
        }
    }
}

/// The bound a placement broke.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "bound", rename_all = "snake_case")]
pub enum Violation {
    Expired { valid_until: u64, now: u64 },
    MaxCores { requested: Amount, max: u64 },
    MaxStorage { requested: Amount, max: Amount },
    WrongSite { sla_site: SiteId, placement_site: SiteId },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Expired { valid_until, now } => write!(f, "agreement expired at {valid_until} (now {now})"),
            Violation::MaxCores { requested, max } => write!(f, "{requested} cores requested, agreement allows {max}"),
            Violation::MaxStorage { requested, max } => write!(f, "{requested} GiB requested, agreement allows {max}"),
            Violation::WrongSite { sla_site, placement_site } => {
                write!(f, "agreement covers {sla_site}, placement targets {placement_site}")
            }
        }
    }
}

/// What a placement asks of one site.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlacementAsk {
    pub site_id: SiteId,
    pub cores: Amount,
    /// GiB.
    pub storage: Amount,
}

/// Checks a placement against an agreement. Expiry is reported first, then
/// cores, then storage.
pub fn check(sla: &SlaRecord, ask: &PlacementAsk, now: u64) -> Result<(), Violation> {
    if ask.site_id != sla.site_id {
        return Err(Violation::WrongSite { sla_site: sla.site_id.clone(), placement_site: ask.site_id.clone() });
    }
    if !sla.is_active(now) {
        return Err(Violation::Expired { valid_until: sla.valid_until, now });
    }
    if ask.cores > Amount::units(sla.max_cores) {
        return Err(Violation::MaxCores { requested: ask.cores, max: sla.max_cores });
    }
    if ask.storage > sla.max_storage {
        return Err(Violation::MaxStorage { requested: ask.storage, max: sla.max_storage });
    }
    Ok(())
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlaManager {
    #[serde(with = "crate::ids::pairs")]
    records: BTreeMap<(AccountId, SiteId), SlaRecord>,
    issued: u64,
}

impl SlaManager {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records an agreement, replacing any earlier one for the same
    /// account and site.
    pub fn negotiate(
        &mut self,
        catalog: &Catalog,
        account: &AccountId,
        site: &SiteId,
        class: SlaClass,
        caps: SlaCaps,
        now: u64,
    ) -> Result<SlaRecord, SlamError> {
        let descriptor = catalog.descriptor(site).ok_or_else(|| SlamError::UnknownSite(site.clone()))?;
        if !descriptor.supported_sla_classes.contains(&class) {
            return Err(SlamError::UnsupportedClass { site: site.clone(), class });
        }
        if caps.max_cores == 0 {
            return Err(SlamError::InvalidCaps);
        }
        self.issued += 1;
        let record = SlaRecord {
            sla_id: SlaId::new(format!("sla-{:06}", self.issued)),
            account_id: account.clone(),
            site_id: site.clone(),
            class,
            max_cores: caps.max_cores,
            max_storage: caps.max_storage,
            negotiated_at: now,
            valid_until: now.saturating_add(SLA_TERM_SECS),
        };
        self.records.insert((account.clone(), site.clone()), record.clone());
        Ok(record)
    }

    pub fn active(&self, account: &AccountId, site: &SiteId, now: u64) -> Option<&SlaRecord> {
        self.records.get(&(account.clone(), site.clone())).filter(|r| r.is_active(now))
    }

    pub fn get(&self, id: &SlaId) -> Option<&SlaRecord> {
        self.records.values().find(|r| &r.sla_id == id)
    }

    /// Every stored record, expired ones included, by (account, site).
    pub fn records(&self) -> impl Iterator<Item = &SlaRecord> {
        self.records.values()
    }

    pub fn records_for<'a>(&'a self, account: &'a AccountId) -> impl Iterator<Item = &'a SlaRecord> + 'a {
        self.records.values().filter(move |r| &r.account_id == account)
    }

    /// Per-site classes from active agreements. The default class is the
    /// best class held anywhere, or Bronze with no active agreement.
    pub fn qos_of(&self, account: &AccountId, now: u64) -> QosProfile {
        let sites: BTreeMap<SiteId, SlaClass> = self
            .records_for(account)
            .filter(|r| r.is_active(now))
            .map(|r| (r.site_id.clone(), r.class))
            .collect();
        let default_class = sites.values().copied().max().unwrap_or(SlaClass::Bronze);
        QosProfile { account_id: account.clone(), sites, default_class }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}
