//! Gain-sorted NOMA clustering.
//!
//! URLLC devices take the lowest ranks: sorted by average gain, they fill
//! rank 1 of clusters 0, 1, ... and wrap round-robin into rank 2, 3, ... when
//! there are more URLLCs than clusters. mMTC devices, also sorted, first take
//! any rank 1 left free and then fill the next free rank of each cluster in
//! round-robin passes.

use crate::error::{Error, Result};
use crate::rate_model::{structure_violations, ClusterAssignment, Constraint, Violation};
use crate::scenario::{DeviceKind, Scenario};

/// Arithmetic mean of a device's linear power gains.
pub fn average_gain(device: usize, scenario: &Scenario) -> f64 {
    let gains = &scenario.device(device).gains;
    gains.iter().sum::<f64>() / gains.len() as f64
}

/// Devices of `kind` by descending average gain; ties go to the lower id.
pub fn sorted_by_gain(scenario: &Scenario, kind: DeviceKind) -> Vec<usize> {
    let mut ids: Vec<(usize, f64)> = scenario
        .devices()
        .iter()
        .filter(|d| d.kind == kind)
        .map(|d| (d.id, average_gain(d.id, scenario)))
        .collect();
    ids.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ids.into_iter().map(|(id, _)| id).collect()
}

/// Places every URLLC device into `num_clusters` clusters.
pub fn cluster_urllc(scenario: &Scenario, num_clusters: usize) -> Result<ClusterAssignment> {
    if num_clusters == 0 {
        return Err(Error::InvalidConfig("num_clusters must be >= 1".into()));
    }
    let max_rank = scenario.config().max_rank;
    let mut assignment = ClusterAssignment::new(num_clusters, max_rank);
    let urllc = sorted_by_gain(scenario, DeviceKind::Urllc);
    let needed = urllc.len().div_ceil(num_clusters);
    if needed > max_rank {
        return Err(Error::CapacityExceeded(format!(
            "{} URLLC devices need {needed} ranks in {num_clusters} clusters, k_max = {max_rank}",
            urllc.len()
        )));
    }
    for (i, d) in urllc.into_iter().enumerate() {
        assignment.place(i % num_clusters, i / num_clusters + 1, d)?;
    }
    Ok(assignment)
}

/// Adds every mMTC device to a URLLC-only assignment, then repairs
/// single-member clusters.
pub fn cluster_mmtc(scenario: &Scenario, partial: ClusterAssignment) -> Result<ClusterAssignment> {
    let mut assignment = partial;
    let num_clusters = assignment.num_clusters();
    let max_rank = assignment.max_rank();
    let mut pending = sorted_by_gain(scenario, DeviceKind::Mmtc).into_iter().peekable();

    for c in 0..num_clusters {
        if pending.peek().is_none() {
            break;
        }
        if !assignment.rank_occupied(c, 1) {
            assignment.place(c, 1, pending.next().unwrap())?;
        }
    }
    while pending.peek().is_some() {
        let mut placed = false;
        for c in 0..num_clusters {
            if assignment.cluster_len(c) >= max_rank {
                continue;
            }
            let Some(d) = pending.next() else { break };
            assignment.push(c, d)?;
            placed = true;
        }
        if !placed {
            return Err(Error::CapacityExceeded(format!(
                "{} mMTC devices left with every cluster at k_max = {max_rank}",
                pending.count()
            )));
        }
    }
    repair_singletons(scenario, &mut assignment)?;
    Ok(assignment)
}

/// Full clustering phase using the scenario's `num_clusters`.
pub fn cluster(scenario: &Scenario) -> Result<ClusterAssignment> {
    let partial = cluster_urllc(scenario, scenario.config().num_clusters)?;
    cluster_mmtc(scenario, partial)
}

/// Clustering constraints C5 to C11.
pub fn check_structure(assignment: &ClusterAssignment, scenario: &Scenario) -> Vec<Violation> {
    use Constraint::*;
    structure_violations(assignment, scenario)
        .into_iter()
        .filter(|v| matches!(v.constraint, C5 | C6 | C7 | C8 | C9 | C10 | C11))
        .collect()
}

/// Clusters whose members are all URLLC (legal, but worth flagging).
pub fn all_urllc_clusters(assignment: &ClusterAssignment, scenario: &Scenario) -> Vec<usize> {
    (0..assignment.num_clusters())
        .filter(|&c| {
            assignment.cluster_len(c) > 0
                && assignment
                    .members(c)
                    .all(|(_, d)| scenario.device(d).kind == DeviceKind::Urllc)
        })
        .collect()
}

/// Rewrites `cluster` from `members` with URLLCs first, each kind sorted by
/// descending gain.
fn rebuild_cluster(
    scenario: &Scenario,
    assignment: &mut ClusterAssignment,
    cluster: usize,
    mut members: Vec<usize>,
) -> Result<()> {
    for rank in 1..=assignment.max_rank() {
        assignment.take(cluster, rank);
    }
    members.sort_by(|&a, &b| {
        scenario
            .device(a)
            .kind
            .cmp(&scenario.device(b).kind)
            .then(average_gain(b, scenario).total_cmp(&average_gain(a, scenario)))
            .then(a.cmp(&b))
    });
    for (i, d) in members.into_iter().enumerate() {
        assignment.place(cluster, i + 1, d)?;
    }
    Ok(())
}

fn repair_singletons(scenario: &Scenario, assignment: &mut ClusterAssignment) -> Result<()> {
    let max_rank = assignment.max_rank();
    for target in 0..assignment.num_clusters() {
        if assignment.cluster_len(target) != 1 {
            continue;
        }
        // Preferred repair: pull the weakest mMTC out of the largest cluster
        // that can spare one.
        let mut donors: Vec<usize> = (0..assignment.num_clusters())
            .filter(|&c| c != target && assignment.cluster_len(c) >= 3)
            .collect();
        donors.sort_by_key(|&c| (std::cmp::Reverse(assignment.cluster_len(c)), c));
        let donor = donors.into_iter().find_map(|c| {
            assignment
                .members(c)
                .filter(|(_, d)| scenario.device(*d).kind == DeviceKind::Mmtc)
                .min_by(|a, b| {
                    average_gain(a.1, scenario)
                        .total_cmp(&average_gain(b.1, scenario))
                        .then(b.1.cmp(&a.1))
                })
                .map(|(_, d)| (c, d))
        });
        if let Some((c, moved)) = donor {
            let rest: Vec<usize> = assignment.member_ids(c).into_iter().filter(|d| *d != moved).collect();
            rebuild_cluster(scenario, assignment, c, rest)?;
            let mut members = assignment.member_ids(target);
            members.push(moved);
            rebuild_cluster(scenario, assignment, target, members)?;
            continue;
        }
        // Fallback: dissolve the singleton into a nonempty cluster with room.
        let lone = assignment.member_ids(target)[0];
        let host = (0..assignment.num_clusters()).find(|&c| {
            c != target && assignment.cluster_len(c) >= 2 && assignment.cluster_len(c) < max_rank
        });
        match host {
            Some(h) => {
                assignment.take(target, 1);
                let mut members = assignment.member_ids(h);
                members.push(lone);
                rebuild_cluster(scenario, assignment, h, members)?;
            }
            None => return Err(Error::SingletonCluster(target)),
        }
    }
    Ok(())
}
