//! Exact accounting under random load and scripted site faults.

use miniorc_core::catalog::Capability;
use miniorc_core::ids::{DeploymentId, SiteId};
use miniorc_core::msa::InstanceState;
use miniorc_core::orchestrator::iaas::{Fault, ScheduledFault};
use miniorc_core::platform::{Command, PlatformConfig, SiteSimulation};
use miniorc_core::resources::ResourceVector;
use miniorc_core::slam::SlaClass;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::support::*;

const RUNS: u64 = 4;
const STEPS: u64 = 250;

fn schedule(rng: &mut StdRng) -> Vec<ScheduledFault> {
    let mut faults: Vec<ScheduledFault> = (0..rng.random_range(3..8))
        .map(|_| {
            let at = rng.random_range(5..STEPS);
            let fault = match rng.random_range(0..3) {
                0 => Fault::PreemptSpot,
                1 => Fault::KillInstance { instance_id: None },
                _ => Fault::Outage { duration: rng.random_range(3..20) },
            };
            ScheduledFault { at, fault }
        })
        .collect();
    faults.sort_by_key(|f| f.at);
    faults
}

fn one_run(seed: u64) -> Result<(u64, usize), String> {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut p = platform(PlatformConfig::default());
    let owner = account(&mut p, "load")?;
    let mut scripted = 0;
    for (id, cpu) in [("s1", 48), ("s2", 24), ("s3", 12)] {
        let faults = schedule(&mut rng);
        scripted += faults.len();
        let sim = SiteSimulation {
            on_demand_limit: Some(ResourceVector::new(cpu / 3, cpu * 4 / 3, cpu * 20 / 3)),
            failure_schedule: faults,
            ..Default::default()
        };
        site(&mut p, descriptor(id, cpu, &[Capability::SpotInstances], &[SlaClass::Bronze, SlaClass::Silver]), sim)?;
    }
    let mut deployments: Vec<DeploymentId> = Vec::new();
    let mut steps = 0;
    for _ in 0..STEPS {
        match rng.random_range(0..20) {
            0..=2 => {
                let text = two_vms(rng.random_range(1..=6), rng.random_range(1..=4));
                deployments.push(submit(&mut p, &owner, &text)?);
            }
            3..=4 => {
                let cpu = pick(&mut rng, &["0.5", "1", "2"]);
                deployments.push(submit(&mut p, &owner, &service(cpu, rng.random_range(1..=4)))?);
            }
            5 => {
                let specs: Vec<(u64, u64, u64)> = (0..rng.random_range(1..6))
                    .map(|_| (rng.random_range(1..=4), rng.random_range(1..=4), rng.random_range(5..40)))
                    .collect();
                deployments.push(submit(&mut p, &owner, &jobs(&specs))?);
            }
            6 if !deployments.is_empty() => {
                let d = pick(&mut rng, &deployments).clone();
                let _ = p.apply(Command::Delete { deployment: d });
            }
            7 if !deployments.is_empty() => {
                let d = pick(&mut rng, &deployments).clone();
                let _ = p.apply(Command::Scale { deployment: d, replicas: rng.random_range(1..=5) });
            }
            8 => {
                let victims: Vec<_> = p
                    .cluster()
                    .services()
                    .flat_map(|s| s.instances.iter().filter(|i| i.state != InstanceState::Failed).map(move |i| (s.spec.service_id.clone(), i.task_id.clone())))
                    .collect();
                if !victims.is_empty() {
                    let (service, task) = pick(&mut rng, &victims).clone();
                    apply(&mut p, Command::KillTask { service, task })?;
                }
            }
            9 => {
                let s = SiteId::new(*pick(&mut rng, &["s1", "s2", "s3"]));
                apply(&mut p, Command::InjectFault { site: s, fault: Fault::KillInstance { instance_id: None } })?;
            }
            _ => {}
        }
        legal(&p)?;
        tick(&mut p).map_err(|e| format!("seed {seed}: {e}"))?;
        steps += 1;
    }
    Ok((steps, scripted))
}

pub fn run() -> Result<String, String> {
    let mut steps = 0;
    let mut scripted = 0;
    for seed in 0..RUNS {
        let (s, f) = one_run(0xCA9 + seed)?;
        steps += s;
        scripted += f;
    }
    Ok(format!("{steps} scheduler steps, {scripted} scripted site faults plus random kills; node and site sums exact at every step"))
}
