//! Randomized placements through the journaled service: every recorded
//! decision replays against its recorded inputs, and replaying the journal
//! shows each migrating deployment's destination replica complete before
//! provisioning starts.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use miniorc::config::Config;
use miniorc::journal::{JOURNAL_FILE, META_FILE, Meta, read_journal};
use miniorc::service::{RequestCtx, Service};
use miniorc_core::broker::RuleOwner;
use miniorc_core::catalog::Capability;
use miniorc_core::datamgr::{DatasetSpec, FileEntry, StorageQos};
use miniorc_core::ids::{AccountId, DatasetId, SiteId};
use miniorc_core::orchestrator::matchmaking::replay;
use miniorc_core::orchestrator::{Deployment, DeploymentState, PlacementData};
use miniorc_core::platform::{Command, Outcome, SiteSimulation};
use miniorc_core::slam::SlaClass;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::support::*;

const CASES: u64 = 100;

#[derive(Default)]
struct Tally {
    records: usize,
    placed: usize,
    migrations_checked: usize,
    refusals: usize,
}

fn exec(s: &Service, cmd: Command) -> Result<Outcome, String> {
    s.run(cmd, &RequestCtx::system()).map(|(o, _)| o).map_err(|e| e.to_string())
}

fn template(rng: &mut StdRng, datasets: &[DatasetId]) -> String {
    let cpu = rng.random_range(1..=8);
    let gpu = rng.random_bool(0.4);
    let ib = rng.random_bool(0.2);
    let mut out = format!(
        "topology_template:
  node_templates:
    worker:
      type: Compute
      properties: {{ cpu: {cpu}, memory: {}, gpu: {gpu}, infiniband: {ib} }}
    app:
      type: SoftwareComponent
      requirements:
        - host: worker
",
        cpu * 2
    );
    let wanted: Vec<&DatasetId> = datasets.iter().filter(|_| rng.random_bool(0.6)).collect();
    for d in &wanted {
        out.push_str(&format!("        - data: in_{d}\n"));
    }
    for d in &wanted {
        out.push_str(&format!("    in_{d}:\n      type: DataRequirement\n      properties: {{ dataset: {d} }}\n"));
    }
    out.push_str("  policies:\n");
    out.push_str(&format!("    - sla_class: {}\n", pick(rng, &["Gold", "Silver", "Bronze"])));
    out.push_str(&format!("    - locality: {}\n", pick(rng, &["prefer_data", "prefer_compute"])));
    out
}

fn build(s: &Service, rng: &mut StdRng) -> Result<(), String> {
    let caps = [Capability::Gpu, Capability::Infiniband, Capability::SpotInstances, Capability::PosixStorage];
    let classes = [SlaClass::Gold, SlaClass::Silver, SlaClass::Bronze];
    let n_sites = rng.random_range(2..=5);
    let mut sites = Vec::new();
    for k in 0..n_sites {
        let id = format!("site{k}");
        let site_caps: Vec<Capability> = caps.iter().copied().filter(|_| rng.random_bool(0.4)).collect();
        let mut site_classes: Vec<SlaClass> = classes.iter().copied().filter(|_| rng.random_bool(0.6)).collect();
        if site_classes.is_empty() {
            site_classes.push(SlaClass::Bronze);
        }
        let d = descriptor(&id, rng.random_range(8..=64), &site_caps, &site_classes);
        exec(s, Command::RegisterSite { descriptor: d, simulation: SiteSimulation::default() })?;
        sites.push(SiteId::new(id));
    }
    if rng.random_bool(0.5) {
        let text = "filter health ge Degraded\nscore free_cpu_fraction 1.0\nscore data_locality 2.0\nscore inverse_cost 0.5";
        exec(s, Command::SetRules { owner: RuleOwner::Global, text: text.into() })?;
    }
    let Outcome::Account { account_id } = exec(s, Command::LinkCredential { identity: identity("mm"), account: None })? else {
        return Err("no account".into());
    };
    let owner: AccountId = account_id;
    let mut datasets = Vec::new();
    for k in 0..rng.random_range(0..=2) {
        let files = (0..rng.random_range(1..=3))
            .map(|f| FileEntry { path: format!("f{f}.dat"), size: rng.random_range(1..=2_000_000_000), checksum: format!("ck{k}{f}") })
            .collect();
        let spec = DatasetSpec { dataset_id: Some(DatasetId::new(format!("ds{k}"))), space: "lab".into(), files, owner: owner.clone() };
        let Outcome::Dataset { dataset_id } = exec(s, Command::AddDataset { spec })? else { return Err("no dataset".into()) };
        let holders: BTreeSet<SiteId> = (0..rng.random_range(1..=2)).map(|_| pick(rng, &sites).clone()).collect();
        for site in holders {
            let fraction = if rng.random_bool(0.8) { 1.0 } else { 0.6 };
            exec(s, Command::PutReplica { dataset: dataset_id.clone(), site, fraction, qos: StorageQos::SINGLE })?;
        }
        datasets.push(dataset_id);
    }
    for _ in 0..rng.random_range(1..=3) {
        let text = template(rng, &datasets);
        exec(s, submit_cmd(&owner, &text, None))?;
        for _ in 0..rng.random_range(0..5) {
            exec(s, Command::Advance { dt: 1 })?;
        }
    }
    for _ in 0..120 {
        exec(s, Command::Advance { dt: 1 })?;
    }
    Ok(())
}

/// Datasets a deployment's latest decision asked for.
fn wanted(d: &Deployment) -> Vec<DatasetId> {
    d.matches.last().map(|m| m.request.datasets.clone()).unwrap_or_default()
}

/// Replays the journal record by record, checking every migrating
/// deployment that has reached PROVISIONING.
fn journal_check(dir: &Path, live: &Service, tally: &mut Tally) -> Result<(), String> {
    let meta: Meta = serde_json::from_str(&fs::read_to_string(dir.join(META_FILE)).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let mut p = meta.fresh_platform().map_err(|e| e.to_string())?;
    let mut checked: BTreeSet<String> = BTreeSet::new();
    for rec in read_journal(&dir.join(JOURNAL_FILE)).map_err(|e| e.to_string())? {
        let _ = p.apply(rec.payload);
        for d in p.orchestrator().deployments() {
            use DeploymentState::*;
            if !matches!(d.state, Provisioning | Configuring | Running) {
                continue;
            }
            let Some(pl) = &d.placement else { continue };
            if !matches!(pl.data_plan, PlacementData::Migrate { .. }) {
                continue;
            }
            for ds in wanted(d) {
                if !p.data().complete_sites(&ds).contains(&pl.site_id) {
                    return Err(format!("record {}: {} at {} without a complete {ds}", rec.seq, d.deployment_id, pl.site_id));
                }
            }
            checked.insert(d.deployment_id.to_string());
        }
    }
    tally.migrations_checked += checked.len();
    let replayed = serde_json::to_string(&p).map_err(|e| e.to_string())?;
    let current = live.read(|q| serde_json::to_string(q)).map_err(|e| e.to_string())?;
    if replayed != current {
        return Err(String::from("journal replay does not reproduce the live state"));
    }
    Ok(())
}

pub fn run() -> Result<String, String> {
    let mut rng = StdRng::seed_from_u64(0x3A7C);
    let mut tally = Tally::default();
    let mut by_plan: BTreeMap<&str, usize> = BTreeMap::new();
    for case in 0..CASES {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let mut config = Config::default();
        config.journal.dir = dir.path().to_path_buf();
        config.journal.fsync = false;
        config.auth.signing_key = Some(hex::encode(KEY));
        let service = Service::open(config).map_err(|e| e.to_string())?;
        build(&service, &mut rng).map_err(|e| format!("case {case}: {e}"))?;
        service.read(|p| -> Result<(), String> {
            legal(p)?;
            for d in p.orchestrator().deployments() {
                for m in &d.matches {
                    tally.records += 1;
                    replay(m).map_err(|e| format!("case {case}, {} at t={}: {e}", d.deployment_id, m.at))?;
                    if m.chosen.is_none() {
                        tally.refusals += 1;
                    }
                }
                if let Some(pl) = &d.placement {
                    tally.placed += 1;
                    let plan = match pl.data_plan {
                        PlacementData::None => "none",
                        PlacementData::Colocate => "colocate",
                        PlacementData::Migrate { .. } => "migrate",
                    };
                    *by_plan.entry(plan).or_default() += 1;
                }
            }
            Ok(())
        })?;
        journal_check(dir.path(), &service, &mut tally).map_err(|e| format!("case {case}: {e}"))?;
    }
    if tally.migrations_checked == 0 {
        return Err(String::from("the corpus produced no migrating deployment"));
    }
    Ok(format!(
        "{CASES} cases, {} match records replayed ({} refusals), {} placements {by_plan:?}; {} migrations complete before PROVISIONING in the journal replay",
        tally.records, tally.refusals, tally.placed, tally.migrations_checked
    ))
}
