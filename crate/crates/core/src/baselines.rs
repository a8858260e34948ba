//! Orthogonal baselines and brute-force oracles for tiny instances.

use std::f64::consts::LN_2;

use rayon::prelude::*;

use crate::allocation::equal_split;
use crate::clustering::check_structure;
use crate::error::{Error, Result};
use crate::power_opt::OrderedCluster;
use crate::rate_model::{
    rate_report, sic_spectral_efficiencies, ClusterAssignment, PowerMatrix, RateReport,
    SubcarrierMap,
};
use crate::scenario::{Device, DeviceKind, Scenario};

pub const MCKP_MAX_SUBCARRIERS: usize = 12;
pub const MCKP_MAX_CLUSTERS: usize = 4;
pub const EXHAUSTIVE_MAX_DEVICES: usize = 5;
pub const EXHAUSTIVE_MAX_CLUSTERS: usize = 2;
pub const EXHAUSTIVE_MAX_RANK: usize = 3;
pub const EXHAUSTIVE_MAX_SUBCARRIERS: usize = 6;
pub const GRID_MAX_MEMBERS: usize = 3;

/// Relative margin a candidate must clear to displace the incumbent, so
/// rounding noise never reorders ties.
const TIE_MARGIN: f64 = 1e-12;

fn improves(candidate: f64, incumbent: f64) -> bool {
    incumbent == f64::NEG_INFINITY || candidate > incumbent + TIE_MARGIN * incumbent.abs()
}

/// An exclusive tone-to-device assignment.
#[derive(Debug, Clone)]
pub struct OmaAllocation {
    /// Device served on each tone.
    pub owner: Vec<Option<usize>>,
    pub powers: PowerMatrix,
    pub report: RateReport,
    /// Hz per tone.
    pub tone_bandwidth: f64,
}

fn oma_rate(scenario: &Scenario, device: usize, tones: &[usize]) -> f64 {
    if tones.is_empty() {
        return 0.0;
    }
    let p = scenario.device(device).power_budget / tones.len() as f64;
    let noise = scenario.noise_power();
    let w = scenario.bandwidth();
    tones
        .iter()
        .map(|&s| w * (scenario.gain(device, s) * p / noise).ln_1p() / LN_2)
        .sum()
}

/// Greedy OFDMA: tones in ascending order, each to the unsatisfied device
/// with the highest gain on it, or to the highest-gain device once nobody is
/// unsatisfied. Equal split of each budget over the device's tones.
pub fn ofdma_allocate(scenario: &Scenario) -> OmaAllocation {
    let n = scenario.num_devices();
    let num_s = scenario.num_subcarriers();
    let mut tones: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut rates = vec![0.0; n];
    let mut owner = vec![None; num_s];
    let unsatisfied = |rates: &[f64], d: usize| rates[d] < scenario.device(d).rate_threshold;
    for s in 0..num_s {
        let pool: Vec<usize> = (0..n).filter(|&d| unsatisfied(&rates, d)).collect();
        let pool = if pool.is_empty() { (0..n).collect() } else { pool };
        let mut best = pool[0];
        for &d in &pool[1..] {
            if scenario.gain(d, s) > scenario.gain(best, s) {
                best = d;
            }
        }
        tones[best].push(s);
        rates[best] = oma_rate(scenario, best, &tones[best]);
        owner[s] = Some(best);
    }
    let mut powers = PowerMatrix::zeros(n, num_s);
    for (d, owned) in tones.iter().enumerate() {
        powers = equal_split(&powers, scenario, &[d], owned);
    }
    let report = RateReport::from_rates(rates, scenario.devices().iter().map(|d| d.rate_threshold));
    OmaAllocation {
        owner,
        powers,
        report,
        tone_bandwidth: scenario.bandwidth(),
    }
}

/// The same cell seen through tones of half the bandwidth: `2S` tones of
/// `W/2`, each original gain copied onto both halves.
pub fn fast_ofdm_scenario(scenario: &Scenario) -> Result<Scenario> {
    let mut config = scenario.config().clone();
    config.num_subcarriers *= 2;
    config.subcarrier_bandwidth /= 2.0;
    let devices = scenario
        .devices()
        .iter()
        .map(|d| Device {
            gains: d.gains.iter().flat_map(|&g| [g, g]).collect(),
            ..d.clone()
        })
        .collect();
    Scenario::from_parts(config, devices)
}

pub fn fast_ofdm_allocate(scenario: &Scenario) -> Result<OmaAllocation> {
    Ok(ofdma_allocate(&fast_ofdm_scenario(scenario)?))
}

#[derive(Debug, Clone, Copy)]
pub enum PowerPolicy<'a> {
    /// Use these powers, zeroed on tones the device's cluster does not own.
    Fixed(&'a PowerMatrix),
    /// Each member spreads its budget evenly over its cluster's tones.
    EqualSplit,
}

#[derive(Debug, Clone)]
pub struct MckpResult {
    pub map: SubcarrierMap,
    pub powers: PowerMatrix,
    /// Sum rate of the best map, bps.
    pub objective: f64,
    pub report: RateReport,
}

/// Per (cluster, tone-count, tone) sum rate of the cluster on that tone. For
/// fixed powers the tone count is irrelevant and only index 0 is filled.
struct ProfitTable {
    num_s: usize,
    by_count: bool,
    values: Vec<f64>,
}

impl ProfitTable {
    fn build(scenario: &Scenario, assignment: &ClusterAssignment, policy: PowerPolicy) -> Self {
        let num_s = scenario.num_subcarriers();
        let counts = match policy {
            PowerPolicy::Fixed(_) => 1,
            PowerPolicy::EqualSplit => num_s + 1,
        };
        let num_c = assignment.num_clusters();
        let mut values = vec![0.0; num_c * counts * num_s];
        let w = scenario.bandwidth();
        let noise = scenario.noise_power();
        for c in 0..num_c {
            let members = assignment.member_ids(c);
            for k in 0..counts {
                for s in 0..num_s {
                    let received: Vec<f64> = members
                        .iter()
                        .map(|&d| {
                            let p = match policy {
                                PowerPolicy::Fixed(m) => m.get(d, s),
                                PowerPolicy::EqualSplit if k == 0 => 0.0,
                                PowerPolicy::EqualSplit => scenario.device(d).power_budget / k as f64,
                            };
                            scenario.gain(d, s) * p
                        })
                        .collect();
                    let rate: f64 = sic_spectral_efficiencies(&received, noise).iter().map(|e| w * e).sum();
                    values[(c * counts + k) * num_s + s] = rate;
                }
            }
        }
        Self {
            num_s,
            by_count: counts > 1,
            values,
        }
    }

    fn profit(&self, map: &[usize], counts: &mut [usize]) -> f64 {
        let stride = if self.by_count { self.num_s + 1 } else { 1 };
        counts.iter_mut().for_each(|k| *k = 0);
        if self.by_count {
            for &c in map {
                counts[c] += 1;
            }
        }
        map.iter()
            .enumerate()
            .map(|(s, &c)| {
                let k = if self.by_count { counts[c] } else { 0 };
                self.values[(c * stride + k) * self.num_s + s]
            })
            .sum()
    }
}

/// Best map among those with `map[0] == first`, scanning in lexicographic
/// order.
fn best_with_prefix(table: &ProfitTable, num_c: usize, num_s: usize, first: usize) -> (f64, Vec<usize>) {
    let mut map = vec![0usize; num_s];
    map[0] = first;
    let mut counts = vec![0usize; num_c];
    let mut best = (f64::NEG_INFINITY, map.clone());
    loop {
        let v = table.profit(&map, &mut counts);
        if improves(v, best.0) {
            best = (v, map.clone());
        }
        // Odometer over positions 1..S, last position fastest.
        let mut i = num_s;
        loop {
            if i <= 1 {
                return best;
            }
            i -= 1;
            map[i] += 1;
            if map[i] < num_c {
                break;
            }
            map[i] = 0;
        }
    }
}

/// Exhaustive search over all `C^S` subcarrier-to-cluster maps with the
/// clustering held fixed. Ties keep the lexicographically smallest map.
pub fn mckp_oracle(
    scenario: &Scenario,
    assignment: &ClusterAssignment,
    policy: PowerPolicy,
) -> Result<MckpResult> {
    let num_s = scenario.num_subcarriers();
    let num_c = assignment.num_clusters();
    if num_s > MCKP_MAX_SUBCARRIERS || num_c > MCKP_MAX_CLUSTERS {
        return Err(Error::InstanceTooLarge(format!(
            "S = {num_s}, C = {num_c}; the map oracle handles S <= {MCKP_MAX_SUBCARRIERS}, C <= {MCKP_MAX_CLUSTERS}"
        )));
    }
    if let PowerPolicy::Fixed(m) = policy {
        if m.num_devices() != scenario.num_devices() || m.num_subcarriers() != num_s {
            return Err(Error::InvalidConfig("power matrix shape does not match the scenario".into()));
        }
    }
    let table = ProfitTable::build(scenario, assignment, policy);
    let partial: Vec<(f64, Vec<usize>)> = (0..num_c)
        .into_par_iter()
        .map(|first| best_with_prefix(&table, num_c, num_s, first))
        .collect();
    let mut best = partial[0].clone();
    for cand in partial.into_iter().skip(1) {
        if improves(cand.0, best.0) {
            best = cand;
        }
    }
    let map = SubcarrierMap {
        owner: best.1.iter().map(|&c| Some(c)).collect(),
    };
    let mut powers = PowerMatrix::zeros(scenario.num_devices(), num_s);
    for c in 0..num_c {
        let members = assignment.member_ids(c);
        let owned = map.owned_by(c);
        match policy {
            PowerPolicy::EqualSplit => powers = equal_split(&powers, scenario, &members, &owned),
            PowerPolicy::Fixed(m) => {
                for &d in &members {
                    for &s in &owned {
                        powers.set(d, s, m.get(d, s));
                    }
                }
            }
        }
    }
    let report = rate_report(scenario, assignment, &map, &powers)?;
    Ok(MckpResult {
        map,
        powers,
        objective: best.0,
        report,
    })
}

#[derive(Debug, Clone)]
pub struct ExhaustiveResult {
    pub assignment: ClusterAssignment,
    pub map: SubcarrierMap,
    pub powers: PowerMatrix,
    pub report: RateReport,
    /// Structurally valid clusterings examined.
    pub candidates: usize,
}

fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, head);
            out.push(tail);
        }
    }
    out
}

/// Every structurally valid clustering of the scenario, in a fixed order.
pub fn valid_clusterings(scenario: &Scenario) -> Vec<ClusterAssignment> {
    let n = scenario.num_devices();
    let num_c = scenario.config().num_clusters;
    let k_max = scenario.config().max_rank;
    let mut out = Vec::new();
    let mut label = vec![0usize; n];
    loop {
        let groups: Vec<Vec<usize>> = (0..num_c)
            .map(|c| (0..n).filter(|&d| label[d] == c).collect())
            .collect();
        if groups.iter().all(|g| g.len() != 1 && g.len() <= k_max) {
            // URLLCs occupy the lowest ranks; each kind may appear in any order.
            let orders: Vec<Vec<Vec<usize>>> = groups
                .iter()
                .map(|g| {
                    let (u, m): (Vec<usize>, Vec<usize>) =
                        g.iter().partition(|&&d| scenario.device(d).kind == DeviceKind::Urllc);
                    let mut v = Vec::new();
                    for pu in permutations(&u) {
                        for pm in permutations(&m) {
                            v.push(pu.iter().chain(&pm).copied().collect());
                        }
                    }
                    v
                })
                .collect();
            let mut pick = vec![0usize; num_c];
            loop {
                let clusters: Vec<Vec<usize>> = (0..num_c).map(|c| orders[c][pick[c]].clone()).collect();
                if let Ok(a) = ClusterAssignment::from_clusters(&clusters, k_max) {
                    if check_structure(&a, scenario).is_empty() {
                        out.push(a);
                    }
                }
                let mut c = 0;
                while c < num_c {
                    pick[c] += 1;
                    if pick[c] < orders[c].len() {
                        break;
                    }
                    pick[c] = 0;
                    c += 1;
                }
                if c == num_c {
                    break;
                }
            }
        }
        let mut d = 0;
        while d < n {
            label[d] += 1;
            if label[d] < num_c {
                break;
            }
            label[d] = 0;
            d += 1;
        }
        if d == n {
            return out;
        }
    }
}

/// Global optimum of the joint clustering and allocation under equal-split
/// power, by enumeration.
pub fn exhaustive_clustering(scenario: &Scenario) -> Result<ExhaustiveResult> {
    let cfg = scenario.config();
    if cfg.num_devices() > EXHAUSTIVE_MAX_DEVICES
        || cfg.num_clusters > EXHAUSTIVE_MAX_CLUSTERS
        || cfg.max_rank > EXHAUSTIVE_MAX_RANK
        || cfg.num_subcarriers > EXHAUSTIVE_MAX_SUBCARRIERS
    {
        return Err(Error::InstanceTooLarge(format!(
            "U+M = {}, C = {}, k_max = {}, S = {}; exhaustive search handles at most {EXHAUSTIVE_MAX_DEVICES}, {EXHAUSTIVE_MAX_CLUSTERS}, {EXHAUSTIVE_MAX_RANK}, {EXHAUSTIVE_MAX_SUBCARRIERS}",
            cfg.num_devices(),
            cfg.num_clusters,
            cfg.max_rank,
            cfg.num_subcarriers
        )));
    }
    let candidates = valid_clusterings(scenario);
    let mut best: Option<(ClusterAssignment, MckpResult)> = None;
    for a in &candidates {
        let r = mckp_oracle(scenario, a, PowerPolicy::EqualSplit)?;
        if best.as_ref().is_none_or(|(_, b)| improves(r.objective, b.objective)) {
            best = Some((a.clone(), r));
        }
    }
    let (assignment, r) = best.ok_or_else(|| {
        Error::CapacityExceeded("no structurally valid clustering exists".into())
    })?;
    Ok(ExhaustiveResult {
        assignment,
        map: r.map,
        powers: r.powers,
        report: r.report,
        candidates: candidates.len(),
    })
}

/// Brute-force power oracle: the best point of the grid `Z_j = k·step`
/// (`Z_1 = P_max`) that is feasible when checked directly in power space.
/// Returns the powers and their sum rate in bps.
pub fn grid_power_oracle(cluster: &OrderedCluster, step: f64) -> Result<(Vec<f64>, f64)> {
    let n = cluster.len();
    if n > GRID_MAX_MEMBERS {
        return Err(Error::InstanceTooLarge(format!(
            "{n} members; the grid oracle handles at most {GRID_MAX_MEMBERS}"
        )));
    }
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidConfig(format!("grid step must be positive, got {step}")));
    }
    let pmax = cluster.total_budget();
    let l = cluster.lambdas();
    let th = cluster.thresholds();
    let bf = cluster.bandwidth_factor();
    let rate = |j: usize, p: &[f64]| {
        let later: f64 = p[j + 1..].iter().sum();
        bf * (1.0 + l[j] * p[j] / (1.0 + l[j] * later)).log2()
    };
    let evaluate = |p: &[f64]| -> Option<f64> {
        if p.iter().any(|v| *v < 0.0) || p.windows(2).any(|w| w[0] < w[1]) {
            return None;
        }
        let mut total = 0.0;
        for j in 0..p.len() {
            let r = rate(j, p);
            if r < th[j] * (1.0 - 1e-12) {
                return None;
            }
            total += r;
        }
        Some(total)
    };
    let steps = (pmax / step).floor() as usize;
    let grid: Vec<f64> = (0..=steps).map(|k| k as f64 * step).collect();
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut consider = |p: Vec<f64>| {
        if let Some(v) = evaluate(&p) {
            if best.as_ref().is_none_or(|(_, b)| improves(v, *b)) {
                best = Some((p, v));
            }
        }
    };
    match n {
        1 => consider(vec![pmax]),
        2 => {
            for &z2 in &grid {
                consider(vec![pmax - z2, z2]);
            }
        }
        _ => {
            for &z2 in &grid {
                for &z3 in grid.iter().take_while(|z| **z <= z2) {
                    consider(vec![pmax - z2, z2 - z3, z3]);
                }
            }
        }
    }
    best.ok_or(Error::NoFeasibleGridPoint)
}
