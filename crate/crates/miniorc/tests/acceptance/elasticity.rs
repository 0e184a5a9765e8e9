//! A burst of 20 jobs grows the cluster, which shrinks back to the minimum
//! once idle and then stays put.

use miniorc_core::msa::JobState;
use miniorc_core::platform::{EventKind, Platform, PlatformConfig, SiteSimulation};
use miniorc_core::slam::SlaClass;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::support::*;

fn scaling_events_after(p: &Platform, t: u64) -> Vec<String> {
    p.events()
        .iter()
        .filter(|e| e.at > t)
        .filter_map(|e| match &e.kind {
            EventKind::Scaling { decision } => Some(decision.clone()),
            _ => None,
        })
        .collect()
}

pub fn run() -> Result<String, String> {
    let config = PlatformConfig::default();
    let policy = config.scaling.clone();
    if (policy.min_nodes, policy.max_nodes) != (1, 10) {
        return Err(format!("default policy is {}..{}", policy.min_nodes, policy.max_nodes));
    }
    let mut rng = StdRng::seed_from_u64(0xE1A);
    let mut p = platform(config);
    let owner = account(&mut p, "batch")?;
    site(&mut p, descriptor("s1", 200, &[], &[SlaClass::Bronze]), SiteSimulation::default())?;
    let specs: Vec<(u64, u64, u64)> =
        (0..20).map(|_| (rng.random_range(1..=4), rng.random_range(1..=6), rng.random_range(20..=60))).collect();
    submit(&mut p, &owner, &jobs(&specs))?;

    let nodes = |p: &Platform| p.cluster().alive_nodes().count();
    let mut peak = 0;
    let mut drained_at = None;
    for _ in 0..3000 {
        tick(&mut p)?;
        peak = peak.max(nodes(&p));
        if nodes(&p) > policy.max_nodes as usize {
            return Err(format!("{} nodes at t={}", nodes(&p), p.now()));
        }
        let all_done = p.cluster().jobs().count() == 20 && p.cluster().jobs().all(|j| j.state == JobState::Done);
        if all_done && drained_at.is_none() {
            drained_at = Some(p.now());
        }
        if let Some(t) = drained_at {
            if nodes(&p) == 1 && p.machines().count() == 1 && p.now() > t + policy.idle_timeout {
                break;
            }
        }
    }
    let drained_at = drained_at.ok_or("the job queue never drained")?;
    if p.cluster().pending_tasks().count() > 0 {
        return Err(String::from("tasks still pending"));
    }
    if nodes(&p) != 1 || p.machines().count() != 1 {
        return Err(format!("{} nodes, {} machines at t={}", nodes(&p), p.machines().count(), p.now()));
    }
    if peak < 2 {
        return Err(String::from("the burst never grew the cluster"));
    }
    let settled = p.now();
    for _ in 0..10 {
        tick(&mut p)?;
    }
    let later = scaling_events_after(&p, settled);
    if !later.is_empty() || nodes(&p) != 1 {
        return Err(format!("scaling after settling: {later:?}"));
    }
    Ok(format!(
        "peak {peak} nodes; queue drained at t={drained_at}, back to 1 node at t={settled}; 0 scaling actions in the next 10 cycles"
    ))
}
