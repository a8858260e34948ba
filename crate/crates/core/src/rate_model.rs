//! SIC rates, aggregate metrics and the structural constraints of the joint
//! clustering / allocation problem.
//!
//! A single interference rule covers both device classes: on every
//! subcarrier its cluster owns, a device at rank `k` sees interference from
//! the members of its own cluster with rank strictly greater than `k`.
//! Because URLLC devices always sit below mMTC devices in rank order, this is
//! exactly "mMTC hear only higher-ranked mMTC" and "URLLC hear higher-ranked
//! URLLC plus every mMTC".

use std::f64::consts::LN_2;
use std::fmt;

use crate::error::{Error, Result};
use crate::scenario::{DeviceKind, Scenario};

/// Relative slack used when comparing power sums against budgets.
pub const POWER_TOLERANCE: f64 = 1e-12;

/// Placement of devices into (cluster, rank) slots. Clusters are indexed from
/// 0, ranks from 1. Rank 1 is decoded first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterAssignment {
    max_rank: usize,
    slots: Vec<Vec<Option<usize>>>,
}

impl ClusterAssignment {
    pub fn new(num_clusters: usize, max_rank: usize) -> Self {
        Self {
            max_rank,
            slots: vec![vec![None; max_rank]; num_clusters],
        }
    }

    /// Builds an assignment from per-cluster member lists in rank order.
    pub fn from_clusters(clusters: &[Vec<usize>], max_rank: usize) -> Result<Self> {
        let mut out = Self::new(clusters.len(), max_rank);
        for (c, members) in clusters.iter().enumerate() {
            for (i, &d) in members.iter().enumerate() {
                out.place(c, i + 1, d)?;
            }
        }
        Ok(out)
    }

    pub fn num_clusters(&self) -> usize {
        self.slots.len()
    }

    pub fn max_rank(&self) -> usize {
        self.max_rank
    }

    /// Puts `device` into slot (`cluster`, `rank`).
    pub fn place(&mut self, cluster: usize, rank: usize, device: usize) -> Result<()> {
        if cluster >= self.slots.len() || rank == 0 || rank > self.max_rank {
            return Err(Error::CapacityExceeded(format!(
                "slot (cluster {cluster}, rank {rank}) outside {} clusters x {} ranks",
                self.slots.len(),
                self.max_rank
            )));
        }
        let slot = &mut self.slots[cluster][rank - 1];
        if let Some(existing) = slot {
            return Err(Error::CapacityExceeded(format!(
                "slot (cluster {cluster}, rank {rank}) already holds device {existing}"
            )));
        }
        *slot = Some(device);
        Ok(())
    }

    /// Appends `device` directly after the highest occupied rank of `cluster`.
    pub fn push(&mut self, cluster: usize, device: usize) -> Result<()> {
        let next = self.slots[cluster]
            .iter()
            .rposition(Option::is_some)
            .map_or(1, |i| i + 2);
        self.place(cluster, next, device)
    }

    /// Removes and returns the device at (`cluster`, `rank`).
    pub fn take(&mut self, cluster: usize, rank: usize) -> Option<usize> {
        self.slots.get_mut(cluster)?.get_mut(rank.checked_sub(1)?)?.take()
    }

    /// `(rank, device)` pairs of a cluster in ascending rank order.
    pub fn members(&self, cluster: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.slots[cluster]
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.map(|d| (i + 1, d)))
    }

    /// Device ids of a cluster in ascending rank order.
    pub fn member_ids(&self, cluster: usize) -> Vec<usize> {
        self.members(cluster).map(|(_, d)| d).collect()
    }

    pub fn cluster_len(&self, cluster: usize) -> usize {
        self.slots[cluster].iter().flatten().count()
    }

    pub fn rank_occupied(&self, cluster: usize, rank: usize) -> bool {
        rank >= 1 && rank <= self.max_rank && self.slots[cluster][rank - 1].is_some()
    }

    /// `(cluster, rank)` of a device, if placed.
    pub fn locate(&self, device: usize) -> Option<(usize, usize)> {
        self.slots.iter().enumerate().find_map(|(c, ranks)| {
            ranks
                .iter()
                .position(|s| *s == Some(device))
                .map(|i| (c, i + 1))
        })
    }

    /// Cluster of every device, `None` if unplaced.
    pub fn cluster_of_all(&self, num_devices: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; num_devices];
        for (c, ranks) in self.slots.iter().enumerate() {
            for d in ranks.iter().flatten() {
                if let Some(slot) = out.get_mut(*d) {
                    *slot = Some(c);
                }
            }
        }
        out
    }

    pub fn to_clusters(&self) -> Vec<Vec<usize>> {
        (0..self.num_clusters()).map(|c| self.member_ids(c)).collect()
    }
}

/// Subcarrier ownership; `owner[s]` is the cluster transmitting on `s`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SubcarrierMap {
    pub owner: Vec<Option<usize>>,
}

impl SubcarrierMap {
    pub fn unassigned(num_subcarriers: usize) -> Self {
        Self {
            owner: vec![None; num_subcarriers],
        }
    }

    pub fn len(&self) -> usize {
        self.owner.len()
    }

    pub fn is_empty(&self) -> bool {
        self.owner.is_empty()
    }

    pub fn owned_by(&self, cluster: usize) -> Vec<usize> {
        self.owner
            .iter()
            .enumerate()
            .filter(|(_, o)| **o == Some(cluster))
            .map(|(s, _)| s)
            .collect()
    }

    pub fn count_owned(&self, cluster: usize) -> usize {
        self.owner.iter().filter(|o| **o == Some(cluster)).count()
    }
}

/// Transmit power per device per subcarrier, W.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerMatrix {
    num_subcarriers: usize,
    p: Vec<f64>,
}

impl PowerMatrix {
    pub fn zeros(num_devices: usize, num_subcarriers: usize) -> Self {
        Self {
            num_subcarriers,
            p: vec![0.0; num_devices * num_subcarriers],
        }
    }

    pub fn num_devices(&self) -> usize {
        self.p.len() / self.num_subcarriers.max(1)
    }

    pub fn num_subcarriers(&self) -> usize {
        self.num_subcarriers
    }

    pub fn get(&self, device: usize, subcarrier: usize) -> f64 {
        self.p[device * self.num_subcarriers + subcarrier]
    }

    pub fn set(&mut self, device: usize, subcarrier: usize, value: f64) {
        self.p[device * self.num_subcarriers + subcarrier] = value;
    }

    pub fn row(&self, device: usize) -> &[f64] {
        &self.p[device * self.num_subcarriers..(device + 1) * self.num_subcarriers]
    }

    pub fn row_mut(&mut self, device: usize) -> &mut [f64] {
        &mut self.p[device * self.num_subcarriers..(device + 1) * self.num_subcarriers]
    }

    pub fn row_sum(&self, device: usize) -> f64 {
        self.row(device).iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    /// bps per device.
    pub rates: Vec<f64>,
    pub sum_rate: f64,
    /// Jain's index over all devices; 0 when nobody gets any throughput.
    pub fairness: f64,
    pub satisfied: Vec<bool>,
    pub satisfied_count: usize,
}

impl RateReport {
    /// Builds the report from per-device rates and thresholds.
    pub fn from_rates(rates: Vec<f64>, thresholds: impl IntoIterator<Item = f64>) -> Self {
        let satisfied: Vec<bool> = rates
            .iter()
            .zip(thresholds)
            .map(|(r, th)| *r >= th)
            .collect();
        let satisfied_count = satisfied.iter().filter(|s| **s).count();
        let sum_rate = crate::stats::compensated_sum(rates.iter().copied());
        let fairness = jain_fairness(&rates).unwrap_or(0.0);
        Self {
            rates,
            sum_rate,
            fairness,
            satisfied,
            satisfied_count,
        }
    }
}

/// Per-rank spectral efficiency (bit/s/Hz) on one tone under SIC, where
/// `received[k]` is the received power of the rank-`k+1` member and rank 1 is
/// decoded first.
pub fn sic_spectral_efficiencies(received: &[f64], noise: f64) -> Vec<f64> {
    let mut out = vec![0.0; received.len()];
    let mut interference = 0.0;
    for k in (0..received.len()).rev() {
        out[k] = (received[k] / (noise + interference)).ln_1p() / LN_2;
        interference += received[k];
    }
    out
}

/// Achievable rate of device `device`, bps.
pub fn device_rate(
    device: usize,
    scenario: &Scenario,
    assignment: &ClusterAssignment,
    map: &SubcarrierMap,
    powers: &PowerMatrix,
) -> Result<f64> {
    let (cluster, rank) = assignment
        .locate(device)
        .ok_or(Error::UnassignedDevice(device))?;
    for s in 0..scenario.num_subcarriers() {
        if powers.get(device, s) > 0.0 && map.owner[s] != Some(cluster) {
            return Err(Error::InconsistentPower {
                device,
                subcarrier: s,
            });
        }
    }
    let noise = scenario.noise_power();
    let w = scenario.bandwidth();
    let mut rate = 0.0;
    for s in map.owned_by(cluster) {
        let signal = scenario.gain(device, s) * powers.get(device, s);
        let interference: f64 = assignment
            .members(cluster)
            .filter(|(r, _)| *r > rank)
            .map(|(_, j)| scenario.gain(j, s) * powers.get(j, s))
            .sum();
        rate += w * (signal / (noise + interference)).ln_1p() / LN_2;
    }
    Ok(rate)
}

pub fn rate_report(
    scenario: &Scenario,
    assignment: &ClusterAssignment,
    map: &SubcarrierMap,
    powers: &PowerMatrix,
) -> Result<RateReport> {
    let rates = (0..scenario.num_devices())
        .map(|d| device_rate(d, scenario, assignment, map, powers))
        .collect::<Result<Vec<_>>>()?;
    Ok(RateReport::from_rates(
        rates,
        scenario.devices().iter().map(|d| d.rate_threshold),
    ))
}

/// Jain's fairness index `(Σr)² / (n Σr²)`.
pub fn jain_fairness(rates: &[f64]) -> Result<f64> {
    if rates.is_empty() {
        return Err(Error::DegenerateInput("fairness of an empty rate list"));
    }
    if rates.iter().any(|r| !(*r >= 0.0) || !r.is_finite()) {
        return Err(Error::DegenerateInput("rates must be finite and nonnegative"));
    }
    // Normalise by the largest rate so squares cannot overflow.
    let peak = rates.iter().copied().fold(0.0, f64::max);
    if peak == 0.0 {
        return Err(Error::DegenerateInput("fairness undefined when all rates are zero"));
    }
    let sum: f64 = rates.iter().map(|r| r / peak).sum();
    let sum_sq: f64 = rates.iter().map(|r| (r / peak).powi(2)).sum();
    Ok((sum * sum / (rates.len() as f64 * sum_sq)).min(1.0))
}

/// Constraint identifiers of the joint problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Constraint {
    /// mMTC power budget.
    C2,
    /// URLLC transmits at full budget.
    C4,
    /// URLLC ranks below every mMTC rank in a cluster.
    C5,
    /// mMTC ranks are contiguous from 1.
    C6,
    /// URLLC ranks are contiguous from 1.
    C7,
    /// Every mMTC placed exactly once.
    C8,
    /// Every URLLC placed exactly once.
    C9,
    /// Each slot holds one known device.
    C10,
    /// Nonempty clusters have at least two members.
    C11,
    /// Each subcarrier owned by at most one cluster.
    C12,
    /// Allocated bandwidth fits in one resource block.
    C13,
    /// mMTC powers nonnegative.
    C14,
    /// URLLC powers nonnegative.
    C15,
    /// Subcarrier ownership refers to an existing cluster.
    C16,
    /// mMTC slots lie within the configured cluster/rank grid.
    C17,
    /// URLLC slots lie within the configured cluster/rank grid.
    C18,
    /// Power only on subcarriers the device's cluster owns.
    PowerMask,
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Constraint::PowerMask => f.write_str("power-mask"),
            other => write!(f, "{other:?}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub constraint: Constraint,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.constraint, self.detail)
    }
}

fn violation(constraint: Constraint, detail: String) -> Violation {
    Violation { constraint, detail }
}

/// Clustering constraints C5 to C11 (plus slot-range checks C17/C18).
pub fn structure_violations(assignment: &ClusterAssignment, scenario: &Scenario) -> Vec<Violation> {
    use Constraint::*;
    let cfg = scenario.config();
    let n = scenario.num_devices();
    let kind_of = |d: usize| scenario.device(d).kind;
    let mut out = Vec::new();
    let mut seen = vec![0usize; n];

    for c in 0..assignment.num_clusters() {
        let members: Vec<(usize, usize)> = assignment.members(c).collect();
        for &(rank, d) in &members {
            if d >= n {
                out.push(violation(C10, format!("cluster {c} rank {rank} holds unknown device {d}")));
                continue;
            }
            seen[d] += 1;
            let kind = kind_of(d);
            if c >= cfg.num_clusters || rank > cfg.max_rank {
                let id = if kind == DeviceKind::Mmtc { C17 } else { C18 };
                out.push(violation(
                    id,
                    format!(
                        "device {d} at (cluster {c}, rank {rank}) outside {} clusters x {} ranks",
                        cfg.num_clusters, cfg.max_rank
                    ),
                ));
            }
            if rank > 1 && !assignment.rank_occupied(c, rank - 1) {
                let id = if kind == DeviceKind::Mmtc { C6 } else { C7 };
                out.push(violation(
                    id,
                    format!("cluster {c}: device {d} at rank {rank} but rank {} is empty", rank - 1),
                ));
            }
        }
        for &(rank, d) in members.iter().filter(|(_, d)| *d < n) {
            if kind_of(d) != DeviceKind::Urllc {
                continue;
            }
            if let Some(&(mrank, m)) = members
                .iter()
                .find(|(r, j)| *r < rank && *j < n && kind_of(*j) == DeviceKind::Mmtc)
            {
                out.push(violation(
                    C5,
                    format!("cluster {c}: URLLC {d} at rank {rank} above mMTC {m} at rank {mrank}"),
                ));
            }
        }
        if members.len() == 1 {
            out.push(violation(C11, format!("cluster {c} has a single member")));
        }
    }
    for (d, &count) in seen.iter().enumerate() {
        if count != 1 {
            let id = if kind_of(d) == DeviceKind::Mmtc { C8 } else { C9 };
            out.push(violation(id, format!("device {d} placed {count} times")));
        }
    }
    out
}

/// Every structural constraint of the joint problem (C2, C4 to C18). Rate
/// thresholds are reported by [`RateReport`] instead.
///
/// C4 asks a URLLC to spend its whole budget; that only applies once its
/// cluster owns spectrum. A URLLC whose cluster owns nothing must transmit
/// nothing, which the power-mask check enforces.
pub fn validate(
    assignment: &ClusterAssignment,
    map: &SubcarrierMap,
    powers: &PowerMatrix,
    scenario: &Scenario,
) -> Vec<Violation> {
    use Constraint::*;
    let cfg = scenario.config();
    let n = scenario.num_devices();
    let s_count = scenario.num_subcarriers();
    let mut out = structure_violations(assignment, scenario);

    if map.len() != s_count {
        out.push(violation(
            C12,
            format!("map covers {} subcarriers, scenario has {s_count}", map.len()),
        ));
    }
    for (s, owner) in map.owner.iter().enumerate() {
        if let Some(c) = owner {
            if *c >= cfg.num_clusters.min(assignment.num_clusters()) {
                out.push(violation(C16, format!("subcarrier {s} owned by nonexistent cluster {c}")));
            }
        }
    }
    let assigned = map.owner.iter().filter(|o| o.is_some()).count();
    let bandwidth = assigned as f64 * cfg.subcarrier_bandwidth;
    if bandwidth > cfg.rb_bandwidth * (1.0 + f64::EPSILON) {
        out.push(violation(
            C13,
            format!("{bandwidth} Hz allocated exceeds {} Hz", cfg.rb_bandwidth),
        ));
    }

    if powers.num_devices() != n || powers.num_subcarriers() != s_count {
        out.push(violation(
            PowerMask,
            format!(
                "power matrix is {}x{}, expected {n}x{s_count}",
                powers.num_devices(),
                powers.num_subcarriers()
            ),
        ));
        return out;
    }
    let cluster_of = assignment.cluster_of_all(n);
    for d in 0..n {
        let dev = scenario.device(d);
        let nonneg = if dev.kind == DeviceKind::Mmtc { C14 } else { C15 };
        for s in 0..s_count {
            let p = powers.get(d, s);
            if !(p >= 0.0) || !p.is_finite() {
                out.push(violation(nonneg, format!("device {d} subcarrier {s} power {p}")));
            } else if p > 0.0 && (cluster_of[d].is_none() || map.owner.get(s).copied().flatten() != cluster_of[d]) {
                out.push(violation(
                    PowerMask,
                    format!("device {d} transmits on subcarrier {s} outside its cluster"),
                ));
            }
        }
        let total = powers.row_sum(d);
        let slack = POWER_TOLERANCE * dev.power_budget;
        match dev.kind {
            DeviceKind::Mmtc => {
                if total > dev.power_budget + slack {
                    out.push(violation(
                        C2,
                        format!("mMTC {d} uses {total} W of {} W", dev.power_budget),
                    ));
                }
            }
            DeviceKind::Urllc => {
                let has_spectrum = cluster_of[d].is_some_and(|c| map.count_owned(c) > 0);
                if has_spectrum && (total - dev.power_budget).abs() > slack {
                    out.push(violation(
                        C4,
                        format!("URLLC {d} uses {total} W, budget {} W", dev.power_budget),
                    ));
                }
            }
        }
    }
    out
}

/// Largest relative gap, over every cluster and owned subcarrier, between
/// the SIC chain `Σ_k log2(1 + SINR_k)` and `log2(1 + Σ_j q_j / N)`.
pub fn sic_conservation_error(
    scenario: &Scenario,
    assignment: &ClusterAssignment,
    map: &SubcarrierMap,
    powers: &PowerMatrix,
) -> f64 {
    let noise = scenario.noise_power();
    let mut worst: f64 = 0.0;
    for (s, owner) in map.owner.iter().enumerate() {
        let Some(c) = owner else { continue };
        let received: Vec<f64> = assignment
            .members(*c)
            .map(|(_, d)| scenario.gain(d, s) * powers.get(d, s))
            .collect();
        let chain: f64 = sic_spectral_efficiencies(&received, noise).iter().sum();
        let total = (received.iter().sum::<f64>() / noise).ln_1p() / LN_2;
        let err = if total == 0.0 {
            chain.abs()
        } else {
            ((chain - total) / total).abs()
        };
        worst = worst.max(err);
    }
    worst
}
