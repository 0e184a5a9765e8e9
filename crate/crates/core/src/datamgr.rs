//! Datasets, replicas with storage QoS, a federated read namespace, and an
//! adaptive third-party transfer engine.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::broker::RankedSites;
use crate::catalog::Catalog;
use crate::ids::{AccountId, DatasetId, SiteId, TransferId};

const GIB: u128 = 1 << 30;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    /// Bytes.
    pub size: u64,
    pub checksum: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub dataset_id: DatasetId,
    pub space: String,
    pub files: Vec<FileEntry>,
    pub owner: AccountId,
}

impl Dataset {
    pub fn total_bytes(&self) -> u64 {
        self.files.iter().map(|f| f.size).sum()
    }

    fn checksums(&self) -> BTreeMap<String, String> {
        self.files.iter().map(|f| (f.path.clone(), f.checksum.clone())).collect()
    }
}

/// Request to register a dataset; the id is generated when absent.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSpec {
    #[serde(default)]
    pub dataset_id: Option<DatasetId>,
    pub space: String,
    pub files: Vec<FileEntry>,
    pub owner: AccountId,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccessLatency {
    Online,
    Nearline,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Retention {
    Replicated,
    Single,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StorageQos {
    pub access_latency: AccessLatency,
    pub retention: Retention,
    pub replication_min: u32,
}

impl StorageQos {
    pub const SINGLE: StorageQos =
        StorageQos { access_latency: AccessLatency::Online, retention: Retention::Single, replication_min: 1 };

    pub fn replicated(n: u32) -> StorageQos {
        StorageQos { access_latency: AccessLatency::Online, retention: Retention::Replicated, replication_min: n }
    }

    pub fn check(&self) -> Result<(), DataError> {
        if self.replication_min == 0 {
            return Err(DataError::InvalidQos(String::from("replication_min must be at least 1")));
        }
        if self.retention == Retention::Replicated && self.replication_min < 2 {
            return Err(DataError::InvalidQos(String::from("replicated retention needs replication_min >= 2")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Replica {
    pub dataset_id: DatasetId,
    pub site_id: SiteId,
    /// Bytes held at the site.
    pub bytes: u64,
    pub total_bytes: u64,
    /// Checksums of the files fully present.
    pub files: BTreeMap<String, String>,
    pub qos: StorageQos,
}

impl Replica {
    pub fn completeness(&self) -> f64 {
        if self.total_bytes == 0 {
            return 0.0;
        }
        self.bytes as f64 / self.total_bytes as f64
    }

    pub fn is_complete(&self) -> bool {
        self.bytes == self.total_bytes
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub site_id: SiteId,
    pub completeness: f64,
    pub qos: StorageQos,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NamespaceEntry {
    /// `space/path`.
    pub path: String,
    pub size: u64,
    pub sites: Vec<SiteId>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TransferState {
    Queued,
    Active,
    Done,
    Failed,
}

impl TransferState {
    pub fn in_flight(self) -> bool {
        matches!(self, TransferState::Queued | TransferState::Active)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferJob {
    pub job_id: TransferId,
    pub dataset_id: DatasetId,
    pub src_site: SiteId,
    pub dst_site: SiteId,
    pub files: Vec<String>,
    pub total_bytes: u64,
    pub state: TransferState,
    pub streams: u32,
    pub bytes_moved: u64,
    /// (tick, bytes per second) for every tick the job was active.
    pub throughput_history: Vec<(u64, f64)>,
    pub failure: Option<String>,
    window_bytes: u64,
    window_secs: u64,
    window_ticks: u32,
    last_window: Option<f64>,
    direction: i8,
}

impl TransferJob {
    /// Per-window throughput comparison: keep moving the stream count in the
    /// current direction while throughput improves, reverse otherwise.
    fn adjust(&mut self, cfg: &TransferConfig) {
        let throughput = self.window_bytes as f64 / self.window_secs.max(1) as f64;
        if let Some(prev) = self.last_window {
            if throughput <= prev {
                self.direction = -self.direction;
            }
        }
        let next = self.streams as i64 + self.direction as i64;
        self.streams = next.clamp(1, cfg.max_streams as i64) as u32;
        self.last_window = Some(throughput);
        self.window_bytes = 0;
        self.window_secs = 0;
        self.window_ticks = 0;
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferConfig {
    pub initial_streams: u32,
    /// Ticks per adjustment window.
    pub window: u32,
    pub max_streams: u32,
}

impl Default for TransferConfig {
    fn default() -> Self {
        TransferConfig { initial_streams: 2, window: 5, max_streams: 32 }
    }
}

/// One active job's use of a link, as seen by a [`LinkModel`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LinkDemand<'a> {
    pub src: &'a SiteId,
    pub dst: &'a SiteId,
    pub streams: u32,
}

/// Bytes per second granted to each active job for one tick.
pub trait LinkModel {
    fn rates(&self, demands: &[LinkDemand<'_>]) -> Vec<f64>;

    /// Rough single-stream rate used for cost estimates.
    fn nominal_rate(&self) -> f64;
}

/// Independent links where each stream runs at `rate · s / (1 + decay · (s − 1))`
/// bytes per second when `s` streams share the job.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayLink {
    pub rate: f64,
    pub decay: f64,
}

impl DecayLink {
    pub fn new(rate: f64) -> Self {
        DecayLink { rate, decay: 0.2 }
    }

    pub fn per_stream_rate(&self, streams: u32) -> f64 {
        let s = streams as f64;
        self.rate * s / (1.0 + self.decay * (s - 1.0))
    }

    pub fn job_rate(&self, streams: u32) -> f64 {
        streams as f64 * self.per_stream_rate(streams)
    }
}

impl LinkModel for DecayLink {
    fn rates(&self, demands: &[LinkDemand<'_>]) -> Vec<f64> {
        demands.iter().map(|d| self.job_rate(d.streams)).collect()
    }

    fn nominal_rate(&self) -> f64 {
        self.rate
    }
}

/// Wraps a link model and caps the combined rate of all jobs sharing one
/// (source, destination) pair, scaling them down proportionally.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SharedLink<L> {
    pub inner: L,
    pub capacity: f64,
}

impl<L: LinkModel> LinkModel for SharedLink<L> {
    fn rates(&self, demands: &[LinkDemand<'_>]) -> Vec<f64> {
        let mut rates = self.inner.rates(demands);
        let mut sums: BTreeMap<(&SiteId, &SiteId), f64> = BTreeMap::new();
        for (d, r) in demands.iter().zip(&rates) {
            *sums.entry((d.src, d.dst)).or_default() += r;
        }
        for (d, r) in demands.iter().zip(rates.iter_mut()) {
            let sum = sums[&(d.src, d.dst)];
            if sum > self.capacity {
                *r *= self.capacity / sum;
            }
        }
        rates
    }

    fn nominal_rate(&self) -> f64 {
        self.inner.nominal_rate().min(self.capacity)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferEvent {
    pub job_id: TransferId,
    pub from: TransferState,
    pub to: TransferState,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
pub enum DataError {
    #[error("unknown dataset {0}")]
    UnknownDataset(DatasetId),
    #[error("dataset {0} already exists")]
    DuplicateDataset(DatasetId),
    #[error("a dataset needs at least one file")]
    EmptyDataset,
    #[error("path {0} appears twice")]
    DuplicatePath(String),
    #[error("invalid file entry: {0}")]
    InvalidFile(String),
    #[error("invalid storage QoS: {0}")]
    InvalidQos(String),
    #[error("replica at {site} is only {percent}% complete")]
    SourceIncomplete { site: SiteId, percent: u32 },
    #[error("unknown site {0}")]
    UnknownSite(SiteId),
    #[error("no eligible site for {needed} more replica(s) of {dataset}")]
    NoEligibleSite { dataset: DatasetId, needed: u32 },
    #[error("unknown transfer {0}")]
    UnknownTransfer(TransferId),
    #[error("site {site} lacks {needed} bytes of storage headroom")]
    NoHeadroom { site: SiteId, needed: u64 },
}

impl DataError {
    pub fn code(&self) -> &'static str {
        match self {
            DataError::UnknownDataset(_) => "UNKNOWN_DATASET",
            DataError::DuplicateDataset(_) => "DUPLICATE_DATASET",
            DataError::EmptyDataset => "EMPTY_DATASET",
            DataError::DuplicatePath(_) => "DUPLICATE_PATH",
            DataError::InvalidFile(_) => "INVALID_FILE",
            DataError::InvalidQos(_) => "INVALID_QOS",
            DataError::SourceIncomplete { .. } => "SOURCE_INCOMPLETE",
            DataError::UnknownSite(_) => "UNKNOWN_SITE",
            DataError::NoEligibleSite { .. } => "NO_ELIGIBLE_SITE",
            DataError::UnknownTransfer(_) => "UNKNOWN_TRANSFER",
            DataError::NoHeadroom { .. } => "NO_HEADROOM",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DataManager {
    pub config: TransferConfig,
    datasets: BTreeMap<DatasetId, Dataset>,
    #[serde(with = "crate::ids::pairs")]
    replicas: BTreeMap<(DatasetId, SiteId), Replica>,
    jobs: BTreeMap<TransferId, TransferJob>,
    next_dataset: u64,
    next_job: u64,
    tick: u64,
}

impl DataManager {
    pub fn new(config: TransferConfig) -> Self {
        DataManager { config, ..Default::default() }
    }

    pub fn add_dataset(&mut self, spec: DatasetSpec) -> Result<DatasetId, DataError> {
        if spec.files.is_empty() {
            return Err(DataError::EmptyDataset);
        }
        let mut seen = BTreeSet::new();
        for f in &spec.files {
            if f.path.is_empty() {
                return Err(DataError::InvalidFile(String::from("empty path")));
            }
            if f.size == 0 {
                return Err(DataError::InvalidFile(format!("{} has size 0", f.path)));
            }
            if !seen.insert(f.path.as_str()) {
                return Err(DataError::DuplicatePath(f.path.clone()));
            }
        }
        let id = match spec.dataset_id {
            Some(id) => id,
            None => loop {
                self.next_dataset += 1;
                let id = DatasetId::new(format!("ds-{:06}", self.next_dataset));
                if !self.datasets.contains_key(&id) {
                    break id;
                }
            },
        };
        if self.datasets.contains_key(&id) {
            return Err(DataError::DuplicateDataset(id));
        }
        self.datasets.insert(id.clone(), Dataset { dataset_id: id.clone(), space: spec.space, files: spec.files, owner: spec.owner });
        Ok(id)
    }

    pub fn dataset(&self, id: &DatasetId) -> Option<&Dataset> {
        self.datasets.get(id)
    }

    pub fn datasets(&self) -> impl Iterator<Item = &Dataset> {
        self.datasets.values()
    }

    /// Places (or replaces) a replica holding the leading files of the
    /// dataset, in listing order, up to `fraction` of its bytes.
    pub fn put_replica(
        &mut self,
        catalog: &Catalog,
        dataset: &DatasetId,
        site: &SiteId,
        fraction: f64,
        qos: StorageQos,
    ) -> Result<(), DataError> {
        qos.check()?;
        let ds = self.datasets.get(dataset).ok_or_else(|| DataError::UnknownDataset(dataset.clone()))?;
        if catalog.descriptor(site).is_none() {
            return Err(DataError::UnknownSite(site.clone()));
        }
        let total = ds.total_bytes();
        let fraction = if fraction.is_finite() { fraction.clamp(0.0, 1.0) } else { 0.0 };
        let mut budget = (total as f64 * fraction) as u64;
        if fraction >= 1.0 {
            budget = total;
        }
        let mut files = BTreeMap::new();
        let mut bytes = 0;
        for f in &ds.files {
            if bytes + f.size > budget {
                break;
            }
            bytes += f.size;
            files.insert(f.path.clone(), f.checksum.clone());
        }
        self.replicas.insert(
            (dataset.clone(), site.clone()),
            Replica { dataset_id: dataset.clone(), site_id: site.clone(), bytes, total_bytes: total, files, qos },
        );
        Ok(())
    }

    pub fn replica(&self, dataset: &DatasetId, site: &SiteId) -> Option<&Replica> {
        self.replicas.get(&(dataset.clone(), site.clone()))
    }

    pub fn replicas(&self) -> impl Iterator<Item = &Replica> {
        self.replicas.values()
    }

    /// Every replica of a dataset, most complete first, then by site.
    pub fn locate(&self, dataset: &DatasetId) -> Result<Vec<Location>, DataError> {
        if !self.datasets.contains_key(dataset) {
            return Err(DataError::UnknownDataset(dataset.clone()));
        }
        let mut out: Vec<(&Replica, Location)> = self
            .replicas
            .range((dataset.clone(), SiteId::new(""))..)
            .take_while(|((d, _), _)| d == dataset)
            .map(|(_, r)| (r, Location { site_id: r.site_id.clone(), completeness: r.completeness(), qos: r.qos }))
            .collect();
        // compare by held bytes, exact
        out.sort_by(|(a, _), (b, _)| b.bytes.cmp(&a.bytes).then_with(|| a.site_id.cmp(&b.site_id)));
        Ok(out.into_iter().map(|(_, l)| l).collect())
    }

    /// Sites holding a complete replica.
    pub fn complete_sites(&self, dataset: &DatasetId) -> BTreeSet<SiteId> {
        self.replicas
            .values()
            .filter(|r| &r.dataset_id == dataset && r.is_complete())
            .map(|r| r.site_id.clone())
            .collect()
    }

    /// Files of the listed spaces, merged by `space/path`, each with the
    /// sites where it is fully present. Files present nowhere are omitted.
    pub fn federated_namespace(&self, spaces: &[String]) -> Vec<NamespaceEntry> {
        let wanted: BTreeSet<&str> = spaces.iter().map(String::as_str).collect();
        let mut merged: BTreeMap<String, (u64, BTreeSet<SiteId>)> = BTreeMap::new();
        for r in self.replicas.values() {
            let ds = &self.datasets[&r.dataset_id];
            if !wanted.contains(ds.space.as_str()) {
                continue;
            }
            for f in &ds.files {
                if r.files.contains_key(&f.path) {
                    let e = merged.entry(format!("{}/{}", ds.space, f.path)).or_insert((f.size, BTreeSet::new()));
                    e.1.insert(r.site_id.clone());
                }
            }
        }
        merged
            .into_iter()
            .map(|(path, (size, sites))| NamespaceEntry { path, size, sites: sites.into_iter().collect() })
            .collect()
    }

    fn bytes_at(&self, site: &SiteId) -> u128 {
        let stored: u128 = self.replicas.values().filter(|r| &r.site_id == site).map(|r| r.bytes as u128).sum();
        let incoming: u128 = self
            .jobs
            .values()
            .filter(|j| &j.dst_site == site && j.state.in_flight())
            .map(|j| {
                let have = self.replica(&j.dataset_id, &j.dst_site).map_or(0, |r| r.bytes);
                j.total_bytes.saturating_sub(have) as u128
            })
            .sum();
        stored + incoming
    }

    /// Whether `site` can take a full copy of `dataset` on top of what it
    /// stores and what is already on its way there.
    pub fn has_headroom(&self, catalog: &Catalog, site: &SiteId, dataset: &DatasetId) -> bool {
        let (Some(d), Some(ds)) = (catalog.descriptor(site), self.datasets.get(dataset)) else {
            return false;
        };
        let capacity = d.storage_capacity.milli() as u128 * GIB / 1000;
        let have = self.replica(dataset, site).map_or(0, |r| r.bytes);
        self.bytes_at(site) + (ds.total_bytes() - have) as u128 <= capacity
    }

    pub fn schedule_transfer(
        &mut self,
        catalog: &Catalog,
        dataset: &DatasetId,
        src: &SiteId,
        dst: &SiteId,
    ) -> Result<TransferId, DataError> {
        let ds = self.datasets.get(dataset).ok_or_else(|| DataError::UnknownDataset(dataset.clone()))?;
        for s in [src, dst] {
            if catalog.descriptor(s).is_none() {
                return Err(DataError::UnknownSite(s.clone()));
            }
        }
        match self.replica(dataset, src) {
            Some(r) if r.is_complete() => {}
            other => {
                let percent = other.map_or(0, |r| (r.bytes as u128 * 100 / r.total_bytes.max(1) as u128) as u32);
                return Err(DataError::SourceIncomplete { site: src.clone(), percent });
            }
        }
        if let Some(existing) =
            self.jobs.values().find(|j| &j.dataset_id == dataset && &j.dst_site == dst && j.state.in_flight())
        {
            return Ok(existing.job_id.clone());
        }
        let total = ds.total_bytes();
        let files = ds.files.iter().map(|f| f.path.clone()).collect();
        self.next_job += 1;
        let id = TransferId::new(format!("tx-{:06}", self.next_job));
        self.jobs.insert(
            id.clone(),
            TransferJob {
                job_id: id.clone(),
                dataset_id: dataset.clone(),
                src_site: src.clone(),
                dst_site: dst.clone(),
                files,
                total_bytes: total,
                state: TransferState::Queued,
                streams: self.config.initial_streams.clamp(1, self.config.max_streams),
                bytes_moved: 0,
                throughput_history: Vec::new(),
                failure: None,
                window_bytes: 0,
                window_secs: 0,
                window_ticks: 0,
                last_window: None,
                direction: 1,
            },
        );
        Ok(id)
    }

    pub fn transfer(&self, id: &TransferId) -> Option<&TransferJob> {
        self.jobs.get(id)
    }

    pub fn transfers(&self) -> impl Iterator<Item = &TransferJob> {
        self.jobs.values()
    }

    /// Marks an in-flight job Failed; finished jobs are left alone.
    pub fn cancel(&mut self, id: &TransferId) -> Result<Option<TransferEvent>, DataError> {
        let j = self.jobs.get_mut(id).ok_or_else(|| DataError::UnknownTransfer(id.clone()))?;
        if !j.state.in_flight() {
            return Ok(None);
        }
        let from = j.state;
        j.state = TransferState::Failed;
        j.failure = Some(String::from("cancelled"));
        Ok(Some(TransferEvent { job_id: id.clone(), from, to: TransferState::Failed }))
    }

    /// Advances every transfer by `dt` seconds. Queued jobs start moving in
    /// the same tick. Rates come from `link`; bytes moved per tick are
    /// rounded down.
    pub fn tick_transfers(&mut self, dt: u64, link: &dyn LinkModel) -> Vec<TransferEvent> {
        let mut events = Vec::new();
        if dt == 0 {
            return events;
        }
        self.tick += 1;
        for j in self.jobs.values_mut() {
            if j.state == TransferState::Queued {
                j.state = TransferState::Active;
                events.push(TransferEvent { job_id: j.job_id.clone(), from: TransferState::Queued, to: TransferState::Active });
            }
        }
        let active: Vec<TransferId> =
            self.jobs.values().filter(|j| j.state == TransferState::Active).map(|j| j.job_id.clone()).collect();
        let rates = {
            let demands: Vec<LinkDemand<'_>> = active
                .iter()
                .map(|id| {
                    let j = &self.jobs[id];
                    LinkDemand { src: &j.src_site, dst: &j.dst_site, streams: j.streams }
                })
                .collect();
            link.rates(&demands)
        };
        let cfg = self.config.clone();
        let tick = self.tick;
        let mut finished = Vec::new();
        for (id, rate) in active.iter().zip(rates) {
            let j = self.jobs.get_mut(id).expect("active job");
            let budget = if rate.is_finite() && rate > 0.0 { (rate * dt as f64) as u64 } else { 0 };
            let moved = budget.min(j.total_bytes - j.bytes_moved);
            j.bytes_moved += moved;
            j.throughput_history.push((tick, moved as f64 / dt as f64));
            j.window_bytes += moved;
            j.window_secs += dt;
            j.window_ticks += 1;
            if j.bytes_moved == j.total_bytes {
                finished.push(id.clone());
            } else if j.window_ticks >= cfg.window {
                j.adjust(&cfg);
            }
        }
        for id in finished {
            events.push(self.complete(&id));
        }
        events
    }

    fn complete(&mut self, id: &TransferId) -> TransferEvent {
        let j = &self.jobs[id];
        let source = self.replicas.get(&(j.dataset_id.clone(), j.src_site.clone())).map(|r| (r.files.clone(), r.qos));
        let expected = self.datasets[&j.dataset_id].checksums();
        let (to, failure) = match source {
            Some((files, qos)) if files == expected => {
                let key = (j.dataset_id.clone(), j.dst_site.clone());
                let qos = self.replicas.get(&key).map_or(qos, |r| r.qos);
                self.replicas.insert(
                    key,
                    Replica {
                        dataset_id: j.dataset_id.clone(),
                        site_id: j.dst_site.clone(),
                        bytes: j.total_bytes,
                        total_bytes: j.total_bytes,
                        files,
                        qos,
                    },
                );
                (TransferState::Done, None)
            }
            Some(_) => (TransferState::Failed, Some(String::from("checksum mismatch"))),
            None => (TransferState::Failed, Some(String::from("source replica vanished"))),
        };
        let j = self.jobs.get_mut(id).expect("job");
        j.state = to;
        j.failure = failure;
        TransferEvent { job_id: id.clone(), from: TransferState::Active, to }
    }

    /// Replication floor for a dataset: the largest `replication_min` among
    /// its replicas, raised to `floor` when given.
    pub fn replication_min(&self, dataset: &DatasetId, floor: Option<u32>) -> u32 {
        let from_qos = self.replicas.values().filter(|r| &r.dataset_id == dataset).map(|r| r.qos.replication_min).max();
        from_qos.unwrap_or(1).max(floor.unwrap_or(1))
    }

    /// Schedules the fewest transfers that bring the number of complete
    /// replicas (counting ones already in flight) up to the replication
    /// floor. Destinations are taken in `ranking` order among sites with
    /// storage headroom. Nothing is scheduled if the floor cannot be met.
    pub fn enforce_qos(
        &mut self,
        catalog: &Catalog,
        dataset: &DatasetId,
        ranking: &RankedSites,
        floor: Option<u32>,
    ) -> Result<Vec<TransferId>, DataError> {
        let locations = self.locate(dataset)?;
        let complete = self.complete_sites(dataset);
        let Some(src) = locations.iter().find(|l| complete.contains(&l.site_id)).map(|l| l.site_id.clone()) else {
            return Err(DataError::SourceIncomplete { site: SiteId::new(""), percent: 0 });
        };
        let incoming: BTreeSet<SiteId> = self
            .jobs
            .values()
            .filter(|j| &j.dataset_id == dataset && j.state.in_flight())
            .map(|j| j.dst_site.clone())
            .collect();
        let have = (complete.len() + incoming.difference(&complete).count()) as u32;
        let want = self.replication_min(dataset, floor);
        if have >= want {
            return Ok(Vec::new());
        }
        let needed = want - have;
        let targets: Vec<SiteId> = ranking
            .ordered
            .iter()
            .map(|r| &r.site_id)
            .filter(|s| !complete.contains(*s) && !incoming.contains(*s))
            .filter(|s| self.has_headroom(catalog, s, dataset))
            .take(needed as usize)
            .cloned()
            .collect();
        if (targets.len() as u32) < needed {
            return Err(DataError::NoEligibleSite { dataset: dataset.clone(), needed });
        }
        targets.iter().map(|dst| self.schedule_transfer(catalog, dataset, &src, dst)).collect()
    }
}
