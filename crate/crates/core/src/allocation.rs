//! Greedy subcarrier-to-cluster allocation with equal-split power.
//!
//! Subcarriers are visited in ascending index. While some device is below its
//! rate threshold, each subcarrier goes to the cluster, among those still
//! holding an unsatisfied member, whose total rate grows the most when the
//! subcarrier joins it. Once everybody is satisfied the remaining subcarriers
//! are handed out by the same rule over all clusters. After every step each
//! member of the receiving cluster spreads its whole budget evenly over the
//! cluster's subcarriers.

use crate::error::{Error, Result};
use crate::rate_model::{
    rate_report, sic_spectral_efficiencies, ClusterAssignment, PowerMatrix, RateReport,
    SubcarrierMap,
};
use crate::scenario::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Only clusters with an unsatisfied member compete.
    Qos,
    /// Every threshold is met; all clusters compete.
    Fill,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub subcarrier: usize,
    pub cluster: usize,
    pub phase: Phase,
    /// Satisfied devices after this step.
    pub satisfied: usize,
}

#[derive(Debug, Clone)]
pub struct Allocation {
    pub map: SubcarrierMap,
    pub powers: PowerMatrix,
    pub report: RateReport,
    pub steps: Vec<Step>,
}

impl Allocation {
    /// Steps at which the satisfied count went down.
    pub fn coverage_regressions(&self) -> Vec<&Step> {
        self.steps
            .windows(2)
            .filter(|w| w[1].satisfied < w[0].satisfied)
            .map(|w| &w[1])
            .collect()
    }
}

/// Spreads each member's budget uniformly over `owned`; zeroes the member
/// rows elsewhere. An empty `owned` leaves the members silent.
pub fn equal_split(
    powers: &PowerMatrix,
    scenario: &Scenario,
    members: &[usize],
    owned: &[usize],
) -> PowerMatrix {
    let mut out = powers.clone();
    for &d in members {
        let row = out.row_mut(d);
        row.iter_mut().for_each(|p| *p = 0.0);
        if owned.is_empty() {
            continue;
        }
        let share = scenario.device(d).power_budget / owned.len() as f64;
        for &s in owned {
            row[s] = share;
        }
    }
    out
}

/// Per-member rates (rank order) of a cluster that owns `tones` under equal
/// split.
fn cluster_rates(scenario: &Scenario, members: &[usize], tones: &[usize]) -> Vec<f64> {
    let mut rates = vec![0.0; members.len()];
    if tones.is_empty() {
        return rates;
    }
    let n = tones.len() as f64;
    let noise = scenario.noise_power();
    let w = scenario.bandwidth();
    let mut received = vec![0.0; members.len()];
    for &s in tones {
        for (q, &d) in received.iter_mut().zip(members) {
            *q = scenario.gain(d, s) * scenario.device(d).power_budget / n;
        }
        for (r, eff) in rates.iter_mut().zip(sic_spectral_efficiencies(&received, noise)) {
            *r += w * eff;
        }
    }
    rates
}

struct ClusterState {
    members: Vec<usize>,
    tones: Vec<usize>,
    rates: Vec<f64>,
}

impl ClusterState {
    fn unsatisfied(&self, scenario: &Scenario) -> bool {
        self.members
            .iter()
            .zip(&self.rates)
            .any(|(&d, &r)| r < scenario.device(d).rate_threshold)
    }

    fn satisfied_count(&self, scenario: &Scenario) -> usize {
        self.members
            .iter()
            .zip(&self.rates)
            .filter(|(&d, &r)| r >= scenario.device(d).rate_threshold)
            .count()
    }
}

/// Runs the greedy allocation on a clustered scenario.
pub fn allocate(scenario: &Scenario, assignment: &ClusterAssignment) -> Result<Allocation> {
    let violations = crate::clustering::check_structure(assignment, scenario);
    if !violations.is_empty() {
        return Err(Error::InvalidAssignment(violations));
    }
    let mut clusters: Vec<ClusterState> = (0..assignment.num_clusters())
        .map(|c| {
            let members = assignment.member_ids(c);
            ClusterState {
                rates: vec![0.0; members.len()],
                members,
                tones: Vec::new(),
            }
        })
        .collect();
    let num_s = scenario.num_subcarriers();
    let mut map = SubcarrierMap::unassigned(num_s);
    let mut steps = Vec::with_capacity(num_s);
    let mut satisfied: usize = clusters.iter().map(|c| c.satisfied_count(scenario)).sum();

    for s in 0..num_s {
        let phase = if clusters.iter().any(|c| c.unsatisfied(scenario)) {
            Phase::Qos
        } else {
            Phase::Fill
        };
        let mut best: Option<(usize, f64, Vec<f64>)> = None;
        for (c, state) in clusters.iter().enumerate() {
            if state.members.is_empty() || (phase == Phase::Qos && !state.unsatisfied(scenario)) {
                continue;
            }
            let mut tones = state.tones.clone();
            tones.push(s);
            let rates = cluster_rates(scenario, &state.members, &tones);
            let gain = rates.iter().sum::<f64>() - state.rates.iter().sum::<f64>();
            if best.as_ref().is_none_or(|(_, g, _)| gain > *g) {
                best = Some((c, gain, rates));
            }
        }
        let Some((c, _, rates)) = best else {
            // No nonempty cluster at all; nothing can use the spectrum.
            break;
        };
        let state = &mut clusters[c];
        satisfied -= state.satisfied_count(scenario);
        state.tones.push(s);
        state.rates = rates;
        satisfied += state.satisfied_count(scenario);
        map.owner[s] = Some(c);
        steps.push(Step {
            subcarrier: s,
            cluster: c,
            phase,
            satisfied,
        });
    }

    let mut powers = PowerMatrix::zeros(scenario.num_devices(), num_s);
    for state in &clusters {
        powers = equal_split(&powers, scenario, &state.members, &state.tones);
    }
    let report = rate_report(scenario, assignment, &map, &powers)?;
    Ok(Allocation {
        map,
        powers,
        report,
        steps,
    })
}
