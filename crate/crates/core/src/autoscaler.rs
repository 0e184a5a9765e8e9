//! Queue-driven elasticity for the two-level cluster.
//!
//! [`evaluate`] looks at a cluster snapshot and yields at most one decision:
//! grow when tasks have been stuck for longer than the scale-out delay,
//! otherwise shrink nodes idle beyond the idle timeout. [`apply`] turns a
//! decision into node removals and provisioning requests.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::ids::{NodeId, TaskId};
use crate::msa::{Cluster, RemovalReason};
use crate::resources::ResourceVector;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScalingPolicy {
    pub min_nodes: u32,
    pub max_nodes: u32,
    pub scaleout_delay: u64,
    pub idle_timeout: u64,
    pub node_template: ResourceVector,
}

impl Default for ScalingPolicy {
    fn default() -> Self {
        ScalingPolicy {
            min_nodes: 1,
            max_nodes: 10,
            scaleout_delay: 30,
            idle_timeout: 120,
            node_template: ResourceVector::new(4, 8, 50),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum PolicyError {
    #[error("min_nodes {min} exceeds max_nodes {max}")]
    Bounds { min: u32, max: u32 },
    #[error("{0} must be positive")]
    NonPositive(&'static str),
}

impl ScalingPolicy {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.min_nodes > self.max_nodes {
            return Err(PolicyError::Bounds { min: self.min_nodes, max: self.max_nodes });
        }
        if self.max_nodes == 0 {
            return Err(PolicyError::NonPositive("max_nodes"));
        }
        if self.scaleout_delay == 0 {
            return Err(PolicyError::NonPositive("scaleout_delay"));
        }
        if self.idle_timeout == 0 {
            return Err(PolicyError::NonPositive("idle_timeout"));
        }
        if self.node_template.is_zero() {
            return Err(PolicyError::NonPositive("node_template"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum ScalingDecision {
    None,
    AddNodes { count: u32, size: ResourceVector },
    RemoveNodes { nodes: Vec<NodeId> },
}

/// Tasks pending for longer than the scale-out delay.
pub fn stuck_tasks(cluster: &Cluster, policy: &ScalingPolicy, now: u64) -> Vec<TaskId> {
    cluster
        .pending_tasks()
        .filter(|t| now.saturating_sub(t.enqueued_at) > policy.scaleout_delay)
        .map(|t| t.task_id.clone())
        .collect()
}

/// Nodes counted against the bounds: live ones plus those still booting.
fn node_count(cluster: &Cluster, in_flight: u32) -> u32 {
    cluster.alive_nodes().count() as u32 + in_flight
}

impl ScalingPolicy {
    /// The most the cluster can ever hold: `max_nodes` template nodes.
    pub fn ceiling(&self) -> ResourceVector {
        self.node_template.times(u64::from(self.max_nodes))
    }
}

/// Stuck tasks that growing the cluster cannot help: their demand exceeds
/// the cluster ceiling, or the cluster is at `max_nodes` with nothing
/// booting.
pub fn blocked_tasks(cluster: &Cluster, in_flight: u32, policy: &ScalingPolicy, now: u64) -> Vec<TaskId> {
    let full = in_flight == 0 && node_count(cluster, 0) >= policy.max_nodes;
    let ceiling = policy.ceiling();
    stuck_tasks(cluster, policy, now)
        .into_iter()
        .filter(|t| full || !cluster.task(t).expect("stuck task").demand.fits_in(&ceiling))
        .collect()
}

/// One scaling decision for the current snapshot. `in_flight` is the
/// number of nodes already requested and not yet joined; they count toward
/// both the bounds and the capacity covering stuck demand.
pub fn evaluate(cluster: &Cluster, in_flight: u32, policy: &ScalingPolicy, now: u64) -> ScalingDecision {
    let stuck = stuck_tasks(cluster, policy, now);
    let count = node_count(cluster, in_flight);
    let ceiling = policy.ceiling();
    let demands: Vec<ResourceVector> = stuck
        .iter()
        .map(|t| cluster.task(t).expect("stuck task").demand)
        .filter(|d| d.fits_in(&ceiling))
        .collect();
    if !stuck.is_empty() {
        let size = demands.iter().fold(policy.node_template, |acc, d| acc.max(d));
        let total: ResourceVector = demands.iter().copied().sum();
        let wanted = total.ceil_div(&size).unwrap_or(1).max(1);
        let room = u64::from(policy.max_nodes.saturating_sub(count));
        let add = wanted.saturating_sub(u64::from(in_flight)).min(room);
        if add > 0 && !demands.is_empty() {
            return ScalingDecision::AddNodes { count: add as u32, size };
        }
        return ScalingDecision::None;
    }
    if in_flight > 0 || count <= policy.min_nodes {
        return ScalingDecision::None;
    }
    let mut idle: Vec<(u64, &NodeId)> = cluster
        .alive_nodes()
        .filter(|n| !n.draining && n.is_idle())
        .filter_map(|n| n.idle_since.filter(|s| now.saturating_sub(*s) > policy.idle_timeout).map(|s| (s, &n.node_id)))
        .collect();
    if idle.is_empty() {
        return ScalingDecision::None;
    }
    idle.sort();
    let removable = (count - policy.min_nodes) as usize;
    ScalingDecision::RemoveNodes { nodes: idle.into_iter().take(removable).map(|(_, id)| id.clone()).collect() }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApplyOutcome {
    /// One entry per node to provision.
    pub provision: Vec<ResourceVector>,
    pub removed: Vec<NodeId>,
    /// Removal targets that picked up work since evaluation, or vanished.
    pub skipped: Vec<NodeId>,
}

/// Carries out a decision. Removal re-checks that each node is still idle;
/// the node is drained and then removed as a scale-in.
pub fn apply(decision: &ScalingDecision, cluster: &mut Cluster, now: u64) -> ApplyOutcome {
    let mut out = ApplyOutcome::default();
    match decision {
        ScalingDecision::None => {}
        ScalingDecision::AddNodes { count, size } => {
            out.provision = (0..*count).map(|_| *size).collect();
        }
        ScalingDecision::RemoveNodes { nodes } => {
            for id in nodes {
                let idle = cluster.node(id).is_some_and(|n| n.alive && n.is_idle());
                if !idle {
                    out.skipped.push(id.clone());
                    continue;
                }
                cluster.drain(id, now).expect("node exists");
                cluster.remove_node(id, RemovalReason::ScaleIn, now).expect("node exists");
                out.removed.push(id.clone());
            }
        }
    }
    out
}

/// Removes draining nodes once empty, or once they have drained for a full
/// idle timeout regardless of remaining tasks.
pub fn finish_drains(cluster: &mut Cluster, policy: &ScalingPolicy, now: u64) -> Vec<NodeId> {
    let due: Vec<NodeId> = cluster
        .nodes()
        .filter(|n| n.draining)
        .filter(|n| n.is_idle() || n.drain_started.is_some_and(|s| now.saturating_sub(s) >= policy.idle_timeout))
        .map(|n| n.node_id.clone())
        .collect();
    for id in &due {
        cluster.remove_node(id, RemovalReason::ScaleIn, now).expect("node exists");
    }
    due
}

/// Human-readable one-liner for the trace stream.
pub fn describe(decision: &ScalingDecision) -> String {
    match decision {
        ScalingDecision::None => String::from("none"),
        ScalingDecision::AddNodes { count, size } => alloc::format!("add {count} x {size}"),
        ScalingDecision::RemoveNodes { nodes } => {
            let names: Vec<&str> = nodes.iter().map(|n| n.as_str()).collect();
            alloc::format!("remove {}", names.join(","))
        }
    }
}
