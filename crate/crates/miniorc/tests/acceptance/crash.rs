//! Kill-point recovery: a service stopped after any journal record, with or
//! without a torn final line, restarts into the state of that prefix and,
//! given the rest of the script, writes a byte-identical journal.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;

use miniorc::config::Config;
use miniorc::journal::JOURNAL_FILE;
use miniorc::service::{RequestCtx, Service};
use miniorc_core::catalog::Capability;
use miniorc_core::ids::{AccountId, DeploymentId, SiteId};
use miniorc_core::msa::InstanceState;
use miniorc_core::orchestrator::iaas::{Fault, ScheduledFault};
use miniorc_core::platform::{Command, Outcome, Platform, SiteSimulation};
use miniorc_core::resources::ResourceVector;
use miniorc_core::slam::SlaClass;
use miniorc_core::tosca::Scenario;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::support::*;

const SCRIPTS: u64 = 500;

fn config(dir: &Path, snapshot_every: u64) -> Config {
    let mut c = Config::default();
    c.journal.dir = dir.to_path_buf();
    c.journal.fsync = false;
    c.journal.snapshot_every = snapshot_every;
    c.auth.signing_key = Some(hex::encode(KEY));
    c
}

fn open(dir: &Path, snapshot_every: u64) -> Result<Service, String> {
    Service::open(config(dir, snapshot_every)).map_err(|e| e.to_string())
}

fn state_json(s: &Service) -> String {
    s.read(|p| serde_json::to_string(p).expect("platform serializes"))
}

/// Picks the next command from the state so far. Some picks are meant to
/// be rejected; they are journaled all the same.
fn next_command(rng: &mut StdRng, p: &Platform, owner: &Option<AccountId>, deployments: &[DeploymentId]) -> Command {
    let Some(owner) = owner else {
        return Command::LinkCredential { identity: identity("crash"), account: None };
    };
    match rng.random_range(0..14) {
        0 if p.catalog().len() < 3 => {
            let k = p.catalog().len();
            let sim = SiteSimulation {
                on_demand_limit: Some(ResourceVector::new(4, 16, 80)),
                failure_schedule: vec![ScheduledFault { at: rng.random_range(5..80), fault: Fault::PreemptSpot }],
                ..Default::default()
            };
            let d = descriptor(&format!("c{k}"), rng.random_range(8..=32), &[Capability::SpotInstances], &[SlaClass::Bronze]);
            Command::RegisterSite { descriptor: d, simulation: sim }
        }
        1 => submit_cmd(owner, &two_vms(rng.random_range(1..=3), 1), None),
        2 => submit_cmd(owner, &service(pick(rng, &["0.5", "1"]), rng.random_range(1..=3)), Some(Scenario::B)),
        3 => {
            let specs: Vec<(u64, u64, u64)> = (0..rng.random_range(1..4)).map(|_| (1, 1, rng.random_range(3..20))).collect();
            submit_cmd(owner, &jobs(&specs), None)
        }
        4 if !deployments.is_empty() => Command::Delete { deployment: pick(rng, deployments).clone() },
        5 if !deployments.is_empty() => Command::Scale { deployment: pick(rng, deployments).clone(), replicas: rng.random_range(1..=4) },
        6 => {
            let victims: Vec<_> = p
                .cluster()
                .services()
                .flat_map(|s| {
                    s.instances.iter().filter(|i| i.state != InstanceState::Failed).map(move |i| (s.spec.service_id.clone(), i.task_id.clone()))
                })
                .collect();
            match victims.is_empty() {
                true => Command::Delete { deployment: DeploymentId::new("dep-999999") },
                false => {
                    let (service, task) = pick(rng, &victims).clone();
                    Command::KillTask { service, task }
                }
            }
        }
        7 if p.catalog().len() > 0 => {
            let site = SiteId::new(format!("c{}", rng.random_range(0..p.catalog().len())));
            Command::InjectFault { site, fault: Fault::KillInstance { instance_id: None } }
        }
        8 => Command::Scale { deployment: DeploymentId::new("dep-424242"), replicas: 2 },
        _ => Command::Advance { dt: rng.random_range(1..=12) },
    }
}

struct Reference {
    commands: Vec<Command>,
    /// Platform JSON after each journal record, starting with record 1.
    states: Vec<String>,
    journal: Vec<u8>,
}

fn reference(rng: &mut StdRng, dir: &Path, snapshot_every: u64) -> Result<Reference, String> {
    let s = open(dir, snapshot_every)?;
    let mut states = vec![state_json(&s)];
    let mut commands = Vec::new();
    let mut owner = None;
    let mut deployments = Vec::new();
    for _ in 0..rng.random_range(8..=24) {
        let cmd = s.read(|p| next_command(rng, p, &owner, &deployments));
        commands.push(cmd.clone());
        let c = s.execute(cmd, &RequestCtx::system()).map_err(|e| e.to_string())?;
        match c.outcome {
            Ok(Outcome::Account { account_id }) => owner = Some(account_id),
            Ok(Outcome::Deployment { deployment_id, .. }) => deployments.push(deployment_id),
            _ => {}
        }
        states.push(state_json(&s));
        s.read(legal)?;
    }
    drop(s);
    let journal = fs::read(dir.join(JOURNAL_FILE)).map_err(|e| e.to_string())?;
    Ok(Reference { commands, states, journal })
}

fn lines(journal: &[u8]) -> Vec<&[u8]> {
    journal.split_inclusive(|b| *b == b'\n').collect()
}

pub fn run() -> Result<String, String> {
    let mut rng = StdRng::seed_from_u64(0xC4A5);
    let mut records = 0;
    let mut torn = 0;
    for script in 0..SCRIPTS {
        let snapshot_every = rng.random_range(2..=12);
        let ref_dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let r = reference(&mut rng, ref_dir.path(), snapshot_every).map_err(|e| format!("script {script}: {e}"))?;
        let ref_lines = lines(&r.journal);
        if ref_lines.len() != r.states.len() {
            return Err(format!("script {script}: {} records for {} states", ref_lines.len(), r.states.len()));
        }
        records += ref_lines.len();

        // bootstrap is record 1; stop after record `kill`
        let kill = rng.random_range(1..=ref_lines.len());
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        {
            let s = open(dir.path(), snapshot_every)?;
            for cmd in &r.commands[..kill - 1] {
                s.execute(cmd.clone(), &RequestCtx::system()).map_err(|e| e.to_string())?;
            }
        }
        if kill < ref_lines.len() && rng.random_bool(0.5) {
            let next = ref_lines[kill];
            let cut = rng.random_range(1..next.len() - 1);
            let mut f = OpenOptions::new().append(true).open(dir.path().join(JOURNAL_FILE)).map_err(|e| e.to_string())?;
            f.write_all(&next[..cut]).map_err(|e| e.to_string())?;
            torn += 1;
        }

        let s = open(dir.path(), snapshot_every).map_err(|e| format!("script {script}, kill {kill}: restart refused: {e}"))?;
        s.read(legal).map_err(|e| format!("script {script}, kill {kill}: {e}"))?;
        if state_json(&s) != r.states[kill - 1] {
            return Err(format!("script {script}, kill {kill}: restarted state differs from the prefix state"));
        }
        for cmd in &r.commands[kill - 1..] {
            s.execute(cmd.clone(), &RequestCtx::system()).map_err(|e| e.to_string())?;
        }
        drop(s);
        let journal = fs::read(dir.path().join(JOURNAL_FILE)).map_err(|e| e.to_string())?;
        if journal != r.journal {
            return Err(format!("script {script}, kill {kill}: journal after resume differs from the uninterrupted run"));
        }
    }
    Ok(format!("{SCRIPTS} scripts, {records} journal records, {torn} torn tails; every restart legal, prefix-exact and byte-identical after resume"))
}
