use std::any::Any;
use std::collections::{BTreeMap, BTreeSet};

use miniorc_core::catalog::{Capability, SiteDescriptor};
use miniorc_core::iam::{ExternalIdentity, IdentityKind, SigningKey};
use miniorc_core::ids::{AccountId, DeploymentId, SiteId};
use miniorc_core::platform::{Command, Outcome, Platform, PlatformConfig, SiteSimulation};
use miniorc_core::resources::{Amount, ResourceVector};
use miniorc_core::slam::SlaClass;
use miniorc_core::tosca::Scenario;
use rand::Rng;
use rand::rngs::StdRng;

pub const KEY: &[u8] = b"acceptance-signing-key-0123456789";

pub fn panic_text(p: &Box<dyn Any + Send>) -> String {
    p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default()
}

pub fn platform(config: PlatformConfig) -> Platform {
    Platform::new(config, SigningKey::new(KEY).unwrap())
}

pub fn descriptor(id: &str, cpu: u64, caps: &[Capability], classes: &[SlaClass]) -> SiteDescriptor {
    SiteDescriptor {
        site_id: SiteId::new(id),
        capabilities: caps.iter().copied().collect(),
        capacity: ResourceVector::new(cpu, cpu * 4, cpu * 20),
        storage_capacity: Amount::units(100_000),
        supported_sla_classes: classes.iter().copied().collect(),
        base_cost: Amount::units(1),
    }
}

pub fn identity(subject: &str) -> ExternalIdentity {
    ExternalIdentity::new("https://idp.example.org", subject, IdentityKind::Oidc)
}

pub fn apply(p: &mut Platform, cmd: Command) -> Result<Outcome, String> {
    p.apply(cmd).map_err(|e| format!("{}: {e}", e.code()))
}

pub fn account(p: &mut Platform, subject: &str) -> Result<AccountId, String> {
    match apply(p, Command::LinkCredential { identity: identity(subject), account: None })? {
        Outcome::Account { account_id } => Ok(account_id),
        o => Err(format!("unexpected {o:?}")),
    }
}

pub fn site(p: &mut Platform, d: SiteDescriptor, simulation: SiteSimulation) -> Result<(), String> {
    apply(p, Command::RegisterSite { descriptor: d, simulation }).map(|_| ())
}

pub fn submit_cmd(owner: &AccountId, text: &str, scenario: Option<Scenario>) -> Command {
    Command::Submit { owner: owner.clone(), groups: BTreeSet::new(), template: text.to_string(), inputs: BTreeMap::new(), scenario }
}

pub fn submit(p: &mut Platform, owner: &AccountId, text: &str) -> Result<DeploymentId, String> {
    match apply(p, submit_cmd(owner, text, None))? {
        Outcome::Deployment { deployment_id, .. } => Ok(deployment_id),
        o => Err(format!("unexpected {o:?}")),
    }
}

/// One clock second, then both the platform's own invariants and the
/// independent capacity check.
pub fn tick(p: &mut Platform) -> Result<(), String> {
    apply(p, Command::Advance { dt: 1 })?;
    legal(p)
}

pub fn legal(p: &Platform) -> Result<(), String> {
    let mut problems = p.check_invariants();
    problems.extend(capacity_violations(p));
    if problems.is_empty() { Ok(()) } else { Err(format!("t={}: {}", p.now(), problems.join("; "))) }
}

/// Recomputes placed and free resources from the raw node, task and
/// instance records. Amounts are unsigned, so a negative free shows up as a
/// sum mismatch.
pub fn capacity_violations(p: &Platform) -> Vec<String> {
    let mut out = Vec::new();
    let cluster = p.cluster();
    for n in cluster.nodes() {
        let mut placed = ResourceVector::ZERO;
        for t in &n.tasks {
            match cluster.task(t) {
                Some(task) if task.node.as_ref() == Some(&n.node_id) => placed += task.demand,
                _ => out.push(format!("node {} lists task {t} placed elsewhere", n.node_id)),
            }
        }
        if placed + n.free != n.total {
            out.push(format!("node {}: placed {placed} + free {} != total {}", n.node_id, n.free, n.total));
        }
    }
    for s in p.iaas().sites() {
        let id = &s.config.site_id;
        let held: ResourceVector =
            p.iaas().instances_at(id).filter(|i| i.state.holds_capacity()).map(|i| i.size).sum();
        let free = p.iaas().free(id).unwrap_or(ResourceVector::ZERO);
        if held + free != s.config.capacity {
            out.push(format!("site {id}: held {held} + free {free} != capacity {}", s.config.capacity));
        }
    }
    out
}

pub fn pick<'a, T>(rng: &mut StdRng, items: &'a [T]) -> &'a T {
    &items[rng.random_range(0..items.len())]
}

pub fn two_vms(web_cpu: u64, db_cpu: u64) -> String {
    format!(
        "topology_template:
  node_templates:
    web:
      type: Compute
      properties: {{ cpu: {web_cpu}, memory: 4 }}
    db:
      type: Compute
      properties: {{ cpu: {db_cpu}, memory: 2 }}
    app:
      type: SoftwareComponent
      requirements:
        - host: web
        - dependency: db
"
    )
}

pub fn service(cpu: &str, replicas: u32) -> String {
    format!(
        "topology_template:
  node_templates:
    api:
      type: LongRunningService
      properties: {{ cpu: {cpu}, memory: 1, replicas: {replicas} }}
"
    )
}

/// `(cpu, memory, duration)` per job, no dependencies.
pub fn jobs(specs: &[(u64, u64, u64)]) -> String {
    let mut out = String::from("topology_template:\n  node_templates:\n");
    for (k, (cpu, mem, duration)) in specs.iter().enumerate() {
        out.push_str(&format!(
            "    j{k:02}:\n      type: BatchJob\n      properties: {{ cpu: {cpu}, memory: {mem}, duration: {duration} }}\n"
        ));
    }
    out
}
