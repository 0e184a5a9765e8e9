//! Single-failure corpus: Scenario-B services come back within two
//! scheduler steps, Scenario-A deployments re-provision within the retry
//! limit.

use miniorc_core::ids::{DeploymentId, ServiceId, SiteId};
use miniorc_core::msa::InstanceState;
use miniorc_core::orchestrator::DeploymentState;
use miniorc_core::orchestrator::iaas::{Fault, InstanceOwner, ScheduledFault};
use miniorc_core::platform::{Command, Platform, PlatformConfig, SiteSimulation};
use miniorc_core::resources::ResourceVector;
use miniorc_core::slam::SlaClass;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::support::*;

const SCENARIOS: u64 = 50;

fn state(p: &Platform, id: &DeploymentId) -> Result<DeploymentState, String> {
    Ok(p.orchestrator().deployment(id).ok_or("deployment vanished")?.state)
}

fn until(p: &mut Platform, limit: u64, mut done: impl FnMut(&Platform) -> bool) -> Result<bool, String> {
    for _ in 0..limit {
        if done(p) {
            return Ok(true);
        }
        tick(p)?;
    }
    Ok(done(p))
}

/// Every service at its target with nothing queued, so the slot a kill
/// frees is not contested.
fn settled(p: &Platform) -> bool {
    p.cluster().services().all(|s| s.pending.is_empty() && s.running() == s.spec.replicas_target)
}

/// Kills one running instance of a replicated service and counts the steps
/// until the running count is back at the target.
fn scenario_b(rng: &mut StdRng, case: u64) -> Result<u64, String> {
    let mut p = platform(PlatformConfig::default());
    let owner = account(&mut p, "svc")?;
    site(&mut p, descriptor("s1", 64, &[], &[SlaClass::Bronze]), SiteSimulation::default())?;
    let replicas = rng.random_range(1..=4);
    let cpu = *pick(rng, &["0.5", "1"]);
    let id = submit(&mut p, &owner, &service(cpu, replicas))?;
    if rng.random_bool(0.5) {
        submit(&mut p, &owner, &service("0.5", rng.random_range(1..=3)))?;
    }
    let svc = ServiceId::new(format!("{id}/api"));
    let running = |p: &Platform| p.cluster().service(&svc).map_or(0, |s| s.running());
    let up = until(&mut p, 300, |p| {
        p.orchestrator().deployment(&id).is_some_and(|d| d.state == DeploymentState::Running)
            && running(p) == replicas
            && settled(p)
    })?;
    if !up {
        return Err(format!("B case {case}: service never reached {replicas} replicas"));
    }
    for _ in 0..rng.random_range(0..20) {
        tick(&mut p)?;
    }
    let live: Vec<_> = p
        .cluster()
        .service(&svc)
        .ok_or("service vanished")?
        .instances
        .iter()
        .filter(|i| i.state == InstanceState::Running)
        .map(|i| i.task_id.clone())
        .collect();
    let victim = pick(rng, &live).clone();
    apply(&mut p, Command::KillTask { service: svc.clone(), task: victim })?;
    for step in 1..=2 {
        tick(&mut p)?;
        if running(&p) == replicas {
            return Ok(step);
        }
    }
    Err(format!("B case {case}: {} of {replicas} running two steps after the kill", running(&p)))
}

/// Loses one instance of a two-VM deployment, by a kill or a spot
/// preemption, and waits for it to run again.
fn scenario_a(rng: &mut StdRng, case: u64) -> Result<u32, String> {
    let mut p = platform(PlatformConfig::default());
    let limit = PlatformConfig::default().orchestrator.retry_limit;
    let owner = account(&mut p, "vm")?;
    let preempt = rng.random_bool(0.5);
    let mut sim = SiteSimulation::default();
    if preempt {
        // room for one small on-demand VM, so the other boots on spot
        sim.on_demand_limit = Some(ResourceVector::new(2, 8, 40));
        sim.failure_schedule = vec![ScheduledFault { at: rng.random_range(5..60), fault: Fault::PreemptSpot }];
    }
    site(&mut p, descriptor("s1", 32, &[], &[SlaClass::Bronze]), sim)?;
    let id = submit(&mut p, &owner, &two_vms(rng.random_range(1..=4), 2))?;
    if !preempt {
        let at = rng.random_range(1..60);
        until(&mut p, at, |_| false)?;
        let d = p.orchestrator().deployment(&id).ok_or("deployment vanished")?;
        let Some(inst) = d.instances.values().nth(rng.random_range(0..d.instances.len().max(1))).cloned() else {
            return Err(format!("A case {case}: no instance at t={}", p.now()));
        };
        apply(&mut p, Command::InjectFault { site: SiteId::new("s1"), fault: Fault::KillInstance { instance_id: Some(inst) } })?;
    }
    until(&mut p, 400, |p| p.orchestrator().deployment(&id).is_some_and(|d| d.state == DeploymentState::Running && p.now() > 60))?;
    let d = p.orchestrator().deployment(&id).ok_or("deployment vanished")?;
    if state(&p, &id)? != DeploymentState::Running {
        return Err(format!("A case {case}: ended {} ({:?})", d.state, d.failure));
    }
    let lost = p
        .iaas()
        .instances()
        .filter(|i| i.lost.is_some())
        .filter(|i| matches!(&i.owner, InstanceOwner::Deployment { deployment_id, .. } if *deployment_id == id))
        .count();
    if lost == 0 {
        return Err(format!("A case {case}: the failure never hit the deployment"));
    }
    if d.repairs == 0 {
        return Err(format!("A case {case}: lost an instance but shows no re-provisioning"));
    }
    if d.repairs > limit || d.retries > limit {
        return Err(format!("A case {case}: {} repairs, {} retries over limit {limit}", d.repairs, d.retries));
    }
    Ok(d.repairs)
}

pub fn run() -> Result<String, String> {
    let mut rng = StdRng::seed_from_u64(0x5E5);
    let mut b_steps = [0u32; 3];
    let mut a_repairs = 0;
    for case in 0..SCENARIOS {
        if case % 2 == 0 {
            b_steps[scenario_b(&mut rng, case)? as usize] += 1;
        } else {
            a_repairs += scenario_a(&mut rng, case)?;
        }
    }
    Ok(format!(
        "{SCENARIOS} scenarios: B back to target in 1 step x{}, 2 steps x{}; A running again after {a_repairs} repairs in total, none over the limit",
        b_steps[1], b_steps[2]
    ))
}
