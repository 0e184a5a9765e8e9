//! Stream controller against the decaying link model, and byte
//! conservation on finished transfers.

use std::collections::{BTreeMap, BTreeSet};

use miniorc_core::catalog::{Catalog, SiteDescriptor};
use miniorc_core::datamgr::{DataManager, DatasetSpec, DecayLink, FileEntry, StorageQos, TransferConfig, TransferState};
use miniorc_core::ids::SiteId;
use miniorc_core::resources::{Amount, ResourceVector};
use miniorc_core::slam::SlaClass;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

const RATES: [f64; 3] = [1.0e6, 2.5e7, 4.0e8];
const MAX_STREAMS: u32 = 32;

fn catalog() -> Catalog {
    let mut c = Catalog::new();
    for id in ["src", "dst"] {
        c.register_site(SiteDescriptor {
            site_id: SiteId::new(id),
            capabilities: BTreeSet::new(),
            capacity: ResourceVector::new(8, 8, 8),
            storage_capacity: Amount::units(1_000_000_000),
            supported_sla_classes: [SlaClass::Bronze].into_iter().collect(),
            base_cost: Amount::units(1),
        })
        .unwrap();
    }
    c
}

/// Argmax of `s · R·s/(1 + 0.2·(s − 1))` over the allowed stream counts.
fn sweep_optimum(rate: f64) -> u32 {
    let throughput = |s: u32| {
        let s = f64::from(s);
        s * (rate * s / (1.0 + 0.2 * (s - 1.0)))
    };
    (1..=MAX_STREAMS).max_by(|a, b| throughput(*a).total_cmp(&throughput(*b))).unwrap()
}

fn spec(name: &str, sizes: &[u64]) -> DatasetSpec {
    let files = sizes
        .iter()
        .enumerate()
        .map(|(k, size)| FileEntry { path: format!("{name}/{k}.bin"), size: *size, checksum: format!("{name}-{k}-{size}") })
        .collect();
    DatasetSpec { dataset_id: None, space: "bulk".into(), files, owner: "owner".into() }
}

/// Stream counts over the second half of a transfer too large to finish.
fn steady_streams(rate: f64) -> Result<BTreeSet<u32>, String> {
    let c = catalog();
    let link = DecayLink { rate, decay: 0.2 };
    let mut m = DataManager::new(TransferConfig { max_streams: MAX_STREAMS, ..TransferConfig::default() });
    let id = m.add_dataset(spec("endless", &[u64::MAX / 4])).map_err(|e| e.to_string())?;
    m.put_replica(&c, &id, &SiteId::new("src"), 1.0, StorageQos::SINGLE).map_err(|e| e.to_string())?;
    let t = m.schedule_transfer(&c, &id, &SiteId::new("src"), &SiteId::new("dst")).map_err(|e| e.to_string())?;
    let mut seen = BTreeSet::new();
    for tick in 0..2000 {
        m.tick_transfers(1, &link);
        let job = m.transfer(&t).ok_or("transfer vanished")?;
        if job.state != TransferState::Active {
            return Err(format!("endless transfer is {:?}", job.state));
        }
        if tick >= 1000 {
            seen.insert(job.streams);
        }
    }
    Ok(seen)
}

/// Runs random datasets to completion and checks every byte is accounted
/// for. Returns the bytes moved.
fn conservation(rate: f64, rng: &mut StdRng) -> Result<(usize, u128), String> {
    let c = catalog();
    let link = DecayLink { rate, decay: 0.2 };
    let mut m = DataManager::new(TransferConfig::default());
    let mut jobs = Vec::new();
    for k in 0..6 {
        let sizes: Vec<u64> = (0..rng.random_range(1..=4)).map(|_| rng.random_range(1..=(rate as u64) * 40)).collect();
        let id = m.add_dataset(spec(&format!("d{k}"), &sizes)).map_err(|e| e.to_string())?;
        m.put_replica(&c, &id, &SiteId::new("src"), 1.0, StorageQos::SINGLE).map_err(|e| e.to_string())?;
        jobs.push((id.clone(), m.schedule_transfer(&c, &id, &SiteId::new("src"), &SiteId::new("dst")).map_err(|e| e.to_string())?));
    }
    for _ in 0..10_000 {
        if m.transfers().all(|j| !j.state.in_flight()) {
            break;
        }
        m.tick_transfers(1, &link);
    }
    let mut moved = 0u128;
    let mut done = 0;
    for (ds, t) in &jobs {
        let job = m.transfer(t).ok_or("transfer vanished")?;
        if job.state != TransferState::Done {
            return Err(format!("{t} ended {:?}", job.state));
        }
        done += 1;
        let total = m.dataset(ds).ok_or("dataset vanished")?.total_bytes();
        let per_tick: u128 = job.throughput_history.iter().map(|(_, bps)| *bps as u128).sum();
        let replica = m.replica(ds, &SiteId::new("dst")).ok_or("no destination replica")?;
        let source = m.replica(ds, &SiteId::new("src")).ok_or("source replica vanished")?;
        if job.bytes_moved != total || job.total_bytes != total || per_tick != u128::from(total) {
            return Err(format!("{t}: moved {} / recorded {per_tick} / total {total}", job.bytes_moved));
        }
        if replica.bytes != total || replica.files != source.files || !replica.is_complete() {
            return Err(format!("{t}: destination replica holds {} of {total} bytes", replica.bytes));
        }
        moved += u128::from(total);
    }
    Ok((done, moved))
}

pub fn run() -> Result<String, String> {
    let mut rng = StdRng::seed_from_u64(0x7F5);
    let mut summary = BTreeMap::new();
    let mut done = 0;
    let mut moved = 0u128;
    for rate in RATES {
        let best = sweep_optimum(rate);
        let seen = steady_streams(rate)?;
        if let Some(bad) = seen.iter().find(|s| s.abs_diff(best) > 1) {
            return Err(format!("R={rate:e}: steady stream count {bad}, sweep optimum {best} (seen {seen:?})"));
        }
        summary.insert(format!("{rate:e}"), (best, seen));
        let (d, m) = conservation(rate, &mut rng)?;
        done += d;
        moved += m;
    }
    let text: Vec<String> =
        summary.iter().map(|(r, (best, seen))| format!("R={r}: optimum {best}, steady {seen:?}")).collect();
    Ok(format!("{}; {done} Done jobs conserve all {moved} bytes", text.join("; ")))
}
