//! Per-cluster power optimisation in suffix-sum coordinates.
//!
//! Members are indexed `j = 1..n` by ascending normalised gain `λ_j`; member
//! `j` is decoded while every member `l > j` still interferes. With
//! `Z_j = Σ_{l≥j} P_l` the sum rate splits into `Σ Φ_j(Z_j)`, each term
//! concave, and the rate and ordering constraints become linear in `Z`.

mod barrier;

use std::f64::consts::LN_2;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scenario::Scenario;
use barrier::{least_violation, maximize, Budget, Concave, Linear, Polytope};

/// Newton steps allowed per solve, across all stages.
pub const ITERATION_CAP: usize = 10_000;
/// Relative first-order optimality demanded of `solve`.
pub const OPTIMALITY_TOLERANCE: f64 = 1e-6;
/// Largest phase-I violation (in units of `P_max`) still treated as feasible.
const FEASIBILITY_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct OrderedCluster {
    lambdas: Vec<f64>,
    thresholds: Vec<f64>,
    total_budget: f64,
    bandwidth_factor: f64,
}

impl OrderedCluster {
    pub fn new(
        lambdas: Vec<f64>,
        thresholds: Vec<f64>,
        total_budget: f64,
        bandwidth_factor: f64,
    ) -> Result<Self> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if lambdas.is_empty() {
            return bad("cluster has no members");
        }
        if lambdas.len() != thresholds.len() {
            return bad("lambdas and thresholds differ in length");
        }
        if lambdas.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return bad("lambdas must be finite and positive");
        }
        if lambdas.windows(2).any(|w| w[0] > w[1]) {
            return bad("lambdas must be sorted ascending");
        }
        if thresholds.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return bad("thresholds must be finite and nonnegative");
        }
        if !(total_budget.is_finite() && total_budget > 0.0) {
            return bad("total budget must be finite and positive");
        }
        if !(bandwidth_factor.is_finite() && bandwidth_factor > 0.0) {
            return bad("bandwidth factor must be finite and positive");
        }
        Ok(Self {
            lambdas,
            thresholds,
            total_budget,
            bandwidth_factor,
        })
    }

    /// Builds the cluster for `members` sharing the tones `owned`, with each
    /// gain averaged over those tones and the bandwidth factor set to the
    /// owned bandwidth. Returns the device ids in `j` order alongside.
    pub fn from_members(
        scenario: &Scenario,
        members: &[usize],
        owned: &[usize],
        total_budget: f64,
    ) -> Result<(Self, Vec<usize>)> {
        if owned.is_empty() {
            return Err(Error::DegenerateInput("cluster owns no subcarriers"));
        }
        let bf = scenario.bandwidth() * owned.len() as f64;
        let noise = scenario.noise_power() / scenario.bandwidth() * bf;
        let mut order: Vec<(f64, usize)> = members
            .iter()
            .map(|&d| {
                let g = owned.iter().map(|&s| scenario.gain(d, s)).sum::<f64>() / owned.len() as f64;
                (g / noise, d)
            })
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let lambdas = order.iter().map(|o| o.0).collect();
        let thresholds = order
            .iter()
            .map(|o| scenario.device(o.1).rate_threshold)
            .collect();
        let ids = order.iter().map(|o| o.1).collect();
        Ok((Self::new(lambdas, thresholds, total_budget, bf)?, ids))
    }

    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn total_budget(&self) -> f64 {
        self.total_budget
    }

    pub fn bandwidth_factor(&self) -> f64 {
        self.bandwidth_factor
    }

    pub fn with_thresholds(&self, thresholds: Vec<f64>) -> Result<Self> {
        Self::new(
            self.lambdas.clone(),
            thresholds,
            self.total_budget,
            self.bandwidth_factor,
        )
    }
}

/// Suffix sums `Z_j = Σ_{l≥j} P_l`.
pub fn to_z(powers: &[f64]) -> Vec<f64> {
    let mut z = vec![0.0; powers.len()];
    let mut acc = 0.0;
    for j in (0..powers.len()).rev() {
        acc += powers[j];
        z[j] = acc;
    }
    z
}

/// Inverse of [`to_z`]. Fails on the first index `j` (0-based) with
/// `Z_j < Z_{j+1}`.
pub fn from_z(z: &[f64]) -> Result<Vec<f64>> {
    let n = z.len();
    let mut p = vec![0.0; n];
    for j in 0..n {
        let next = if j + 1 < n { z[j + 1] } else { 0.0 };
        if j + 1 < n && z[j] < next {
            return Err(Error::NonmonotoneInput(j));
        }
        p[j] = z[j] - next;
    }
    Ok(p)
}

/// `Φ_j(z)` in bps, with `j` 1-based.
pub fn phi(j: usize, z: f64, cluster: &OrderedCluster) -> f64 {
    assert!(j >= 1 && j <= cluster.len(), "index {j} out of range");
    let l = &cluster.lambdas;
    let nats = if j == 1 {
        (l[0] * z).ln_1p()
    } else {
        phi_nats(l[j - 2], l[j - 1], z)
    };
    cluster.bandwidth_factor * nats / LN_2
}

/// `ln(1+λz) − ln(1+λ'z)` without cancellation.
fn phi_nats(lambda_prev: f64, lambda: f64, z: f64) -> f64 {
    ((lambda - lambda_prev) * z / (1.0 + lambda_prev * z)).ln_1p()
}

/// `Σ_j Φ_j(Z_j)`.
pub fn objective(z: &[f64], cluster: &OrderedCluster) -> f64 {
    z.iter()
        .enumerate()
        .map(|(i, &zj)| phi(i + 1, zj, cluster))
        .sum()
}

/// Per-member rates computed from the SINRs of `powers` directly.
pub fn direct_rates(powers: &[f64], cluster: &OrderedCluster) -> Vec<f64> {
    let n = powers.len();
    let mut out = vec![0.0; n];
    for j in 0..n {
        let interference: f64 = powers[j + 1..].iter().sum();
        let l = cluster.lambdas[j];
        out[j] = cluster.bandwidth_factor * (l * powers[j] / (1.0 + l * interference)).ln_1p() / LN_2;
    }
    out
}

/// Coefficients of the linear rate constraints.
#[derive(Debug, Clone, PartialEq)]
pub struct Linearized {
    /// `δ_j = 2^(−R_j/bf)`.
    pub delta: Vec<f64>,
    /// `ρ_j = (1 − δ_j)/λ_j`.
    pub rho: Vec<f64>,
    /// `θ_n = (2^(R_n/bf) − 1)/λ_n`, the floor on `Z_n`.
    pub theta_last: f64,
}

pub fn linearize(cluster: &OrderedCluster) -> Linearized {
    let e: Vec<f64> = cluster
        .thresholds
        .iter()
        .map(|r| r / cluster.bandwidth_factor * LN_2)
        .collect();
    let delta = e.iter().map(|x| (-x).exp()).collect();
    let rho = e
        .iter()
        .zip(&cluster.lambdas)
        .map(|(x, l)| -(-x).exp_m1() / l)
        .collect();
    let n = cluster.len();
    let theta_last = e[n - 1].exp_m1() / cluster.lambdas[n - 1];
    Linearized {
        delta,
        rho,
        theta_last,
    }
}

/// Largest violation, in watts, of the linear constraint set at `z`:
/// `Z_1 = P_max`, `Z_{j+1} ≤ δ_j Z_j − ρ_j`, `Z_n ≥ θ_n`, nonincreasing
/// differences and `Z_n ≥ 0`.
pub fn constraint_violation(z: &[f64], cluster: &OrderedCluster) -> f64 {
    let n = cluster.len();
    assert_eq!(z.len(), n);
    let lin = linearize(cluster);
    let at = |j: usize| if j < n { z[j] } else { 0.0 };
    let mut worst = (z[0] - cluster.total_budget).abs();
    for j in 0..n - 1 {
        worst = worst.max(z[j + 1] - (lin.delta[j] * z[j] - lin.rho[j]));
    }
    worst = worst.max(lin.theta_last - z[n - 1]);
    for j in 0..n - 1 {
        worst = worst.max(-z[j] + 2.0 * at(j + 1) - at(j + 2));
    }
    worst.max(-z[n - 1]).max(0.0)
}

/// Whether every member meets its threshold at `powers`, up to `tolerance`
/// relative.
pub fn meets_thresholds(powers: &[f64], cluster: &OrderedCluster, tolerance: f64) -> bool {
    direct_rates(powers, cluster)
        .iter()
        .zip(&cluster.thresholds)
        .all(|(r, t)| *r >= t * (1.0 - tolerance))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Feasibility {
    /// A point satisfying every linear constraint.
    Feasible(Vec<f64>),
    Infeasible,
}

/// The problem in `x = Z/P_max` with `x_1 = 1` eliminated.
struct Scaled {
    mu: Vec<f64>,
    poly: Polytope,
}

impl Scaled {
    fn new(cluster: &OrderedCluster) -> Option<Self> {
        let n = cluster.len();
        let pmax = cluster.total_budget;
        let lin = linearize(cluster);
        let theta = lin.theta_last / pmax;
        if !theta.is_finite() {
            return None;
        }
        let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
        for j in 0..n - 1 {
            let mut a = vec![0.0; n];
            a[j + 1] = 1.0;
            a[j] = -lin.delta[j];
            rows.push((a, -lin.rho[j] / pmax));
        }
        let mut a = vec![0.0; n];
        a[n - 1] = -1.0;
        rows.push((a.clone(), -theta));
        rows.push((a, 0.0));
        for j in 0..n - 1 {
            let mut a = vec![0.0; n];
            a[j] = -1.0;
            a[j + 1] = 2.0;
            if j + 2 < n {
                a[j + 2] = -1.0;
            }
            rows.push((a, 0.0));
        }
        let m = n - 1;
        let mut mat = DMatrix::zeros(rows.len(), m);
        let mut rhs = DVector::zeros(rows.len());
        for (i, (a, b)) in rows.iter().enumerate() {
            rhs[i] = b - a[0];
            for k in 0..m {
                mat[(i, k)] = a[k + 1];
            }
        }
        Some(Self {
            mu: cluster.lambdas.iter().map(|l| l * pmax).collect(),
            poly: Polytope { rows: mat, rhs },
        })
    }

    fn full(&self, y: &DVector<f64>) -> Vec<f64> {
        std::iter::once(1.0).chain(y.iter().copied()).collect()
    }

    fn equal_powers(&self) -> DVector<f64> {
        let n = self.mu.len();
        DVector::from_fn(n - 1, |k, _| (n - k - 1) as f64 / n as f64)
    }

    /// Phase I. Returns a point strictly inside either the polytope or a
    /// relaxation of it by at most `2·FEASIBILITY_SLACK`, with the polytope
    /// the point is interior to.
    fn interior(&self, budget: &mut Budget) -> Result<Option<(DVector<f64>, Polytope)>> {
        let (y, tau) = least_violation(&self.poly, &self.equal_powers(), 1e-13, budget)
            .map_err(|o| Error::NonConvergence {
                iterations: budget.used,
                gap: f64::INFINITY,
                best: o.point.iter().copied().collect(),
            })?;
        if tau > FEASIBILITY_SLACK {
            return Ok(None);
        }
        if tau < -FEASIBILITY_SLACK {
            return Ok(Some((y, self.poly.clone())));
        }
        Ok(Some((y, self.poly.relaxed(tau.max(0.0) + FEASIBILITY_SLACK))))
    }
}

/// `Σ_{j≥2} Φ_j` over the free coordinates, in nats.
struct Tail<'a> {
    mu: &'a [f64],
}

impl Tail<'_> {
    fn terms(&self, y: &DVector<f64>) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        let y: Vec<f64> = y.iter().map(|v| v.max(0.0)).collect();
        (0..y.len()).map(move |k| (self.mu[k], self.mu[k + 1], y[k]))
    }
}

impl Concave for Tail<'_> {
    fn value(&self, y: &DVector<f64>) -> f64 {
        self.terms(y).map(|(a, b, x)| phi_nats(a, b, x)).sum()
    }

    fn gradient(&self, y: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            y.len(),
            self.terms(y)
                .map(|(a, b, x)| (b - a) / ((1.0 + b * x) * (1.0 + a * x))),
        )
    }

    fn hessian(&self, y: &DVector<f64>) -> DMatrix<f64> {
        let d = DVector::from_iterator(y.len(), self.terms(y).map(|(a, b, x)| phi_curvature(a, b, x)));
        DMatrix::from_diagonal(&d)
    }
}

pub fn feasible_region_check(cluster: &OrderedCluster) -> Feasibility {
    let n = cluster.len();
    let pmax = cluster.total_budget;
    if n == 1 {
        return if linearize(cluster).theta_last <= pmax {
            Feasibility::Feasible(vec![pmax])
        } else {
            Feasibility::Infeasible
        };
    }
    let Some(scaled) = Scaled::new(cluster) else {
        return Feasibility::Infeasible;
    };
    let mut budget = Budget::new(ITERATION_CAP);
    match scaled.interior(&mut budget) {
        Ok(Some((y, _))) => Feasibility::Feasible(scaled.full(&y).iter().map(|x| x * pmax).collect()),
        _ => Feasibility::Infeasible,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerSolution {
    /// Nonincreasing, summing to `P_max`.
    pub powers: Vec<f64>,
    pub z: Vec<f64>,
    /// bps.
    pub objective: f64,
    /// Certified bound on the relative objective gap to the optimum.
    pub optimality_gap: f64,
    pub newton_steps: usize,
}

/// Pools adjacent violators so the result is nonincreasing with the same sum.
fn nonincreasing(mut p: Vec<f64>) -> Vec<f64> {
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(p.len());
    for &v in &p {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let (b, nb) = blocks[blocks.len() - 1];
            let (a, na) = blocks[blocks.len() - 2];
            if a >= b {
                break;
            }
            blocks.pop();
            let last = blocks.last_mut().unwrap();
            *last = ((a * na as f64 + b * nb as f64) / (na + nb) as f64, na + nb);
        }
    }
    let mut i = 0;
    for (v, len) in blocks {
        for slot in &mut p[i..i + len] {
            *slot = v;
        }
        i += len;
    }
    p
}

fn finish(x: &[f64], cluster: &OrderedCluster, gap: f64, steps: usize) -> PowerSolution {
    let pmax = cluster.total_budget;
    let mut p: Vec<f64> = (0..x.len())
        .map(|j| {
            let next = x.get(j + 1).copied().unwrap_or(0.0);
            ((x[j] - next) * pmax).max(0.0)
        })
        .collect();
    p = nonincreasing(p);
    let sum: f64 = p.iter().sum();
    if sum > 0.0 {
        p.iter_mut().for_each(|v| *v *= pmax / sum);
    }
    let mut z = to_z(&p);
    z[0] = pmax;
    PowerSolution {
        objective: objective(&z, cluster),
        powers: p,
        z,
        optimality_gap: gap,
        newton_steps: steps,
    }
}

/// Maximises `Σ Φ_j(Z_j)` over the linear constraint set.
///
/// Interior-point throughout: a phase-I problem finds a strictly feasible
/// start, a log-barrier Newton method maximises, and a linear program over
/// the same set bounds the remaining gap through the gradient at the answer.
/// Coordinates whose `Φ_j` vanishes identically (equal neighbouring gains)
/// are then driven to their lower limit.
pub fn solve(cluster: &OrderedCluster) -> Result<PowerSolution> {
    let n = cluster.len();
    if n == 1 {
        return match feasible_region_check(cluster) {
            Feasibility::Feasible(_) => Ok(finish(&[1.0], cluster, 0.0, 0)),
            Feasibility::Infeasible => Err(Error::Infeasible),
        };
    }
    let scaled = Scaled::new(cluster).ok_or(Error::Infeasible)?;
    let mut budget = Budget::new(ITERATION_CAP);
    let (start, poly) = scaled.interior(&mut budget)?.ok_or(Error::Infeasible)?;

    let tail = Tail { mu: &scaled.mu };
    let head = scaled.mu[0].ln_1p();
    let scale = head.max(1.0);
    let fail = |point: &DVector<f64>, gap: f64, used: usize| {
        let sol = finish(&scaled.full(point), cluster, gap, used);
        Error::NonConvergence {
            iterations: used,
            gap,
            best: sol.powers,
        }
    };

    let y = match maximize(&tail, &poly, start, 1e-11 * scale, &mut budget) {
        Ok(out) => out.point,
        Err(out) => return Err(fail(&out.point, out.duality_gap / scale, budget.used)),
    };

    // Linear bound on max g − g(y) from concavity.
    let c = tail.gradient(&y);
    let lp = maximize(&Linear(c.clone()), &poly, y.clone(), 1e-9 * scale, &mut budget)
        .map_err(|out| fail(&out.point, f64::INFINITY, budget.used))?;
    let bound = (c.dot(&lp.point) - c.dot(&y)).max(0.0) + lp.duality_gap;
    let gap = bound / (head + tail.value(&y));
    if gap > OPTIMALITY_TOLERANCE {
        return Err(fail(&y, gap, budget.used));
    }

    let y = polish_flat(&scaled, &poly, y, &mut budget);
    Ok(finish(&scaled.full(&y), cluster, gap, budget.used))
}

/// Minimises the coordinates whose term is identically zero, holding the
/// rest fixed.
fn polish_flat(scaled: &Scaled, poly: &Polytope, y: DVector<f64>, budget: &mut Budget) -> DVector<f64> {
    let flat: Vec<usize> = (0..y.len())
        .filter(|&k| scaled.mu[k + 1] == scaled.mu[k])
        .collect();
    if flat.is_empty() {
        return y;
    }
    let rows = DMatrix::from_fn(poly.rows.nrows(), flat.len(), |i, k| poly.rows[(i, flat[k])]);
    let mut fixed = y.clone();
    for &k in &flat {
        fixed[k] = 0.0;
    }
    let rhs = &poly.rhs - &poly.rows * &fixed;
    let sub = Polytope { rows, rhs };
    let start = DVector::from_iterator(flat.len(), flat.iter().map(|&k| y[k]));
    let objective = Linear(DVector::from_element(flat.len(), -1.0));
    let point = match maximize(&objective, &sub, start, 1e-13, budget) {
        Ok(out) => out.point,
        Err(out) => out.point,
    };
    let mut out = y;
    for (i, &k) in flat.iter().enumerate() {
        out[k] = point[i];
    }
    out
}

/// Second derivative of `ln(1+λz) − ln(1+λ'z)` in `z`, where `λ'` is the
/// previous member's gain. `Φ_j''` is this times `bf/ln 2`.
pub fn phi_curvature(lambda_prev: f64, lambda: f64, z: f64) -> f64 {
    let (a, b) = (lambda_prev, lambda);
    (a - b) * (a + b + 2.0 * z * a * b) / ((1.0 + b * z).powi(2) * (1.0 + a * z).powi(2))
}

/// Central difference of the analytic first derivative.
pub fn phi_curvature_fd(lambda_prev: f64, lambda: f64, z: f64) -> f64 {
    let d = |z: f64| (lambda - lambda_prev) / ((1.0 + lambda * z) * (1.0 + lambda_prev * z));
    let h = 1e-3 * z;
    (d(z + h) - d(z - h)) / (2.0 * h)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSample {
    /// 1-based member index, at least 2.
    pub j: usize,
    pub z: f64,
    pub closed_form: f64,
    pub finite_difference: f64,
}

impl ProbeSample {
    pub fn disagreement(&self) -> f64 {
        let (c, f) = (self.closed_form, self.finite_difference);
        if c == 0.0 {
            f.abs()
        } else {
            ((c - f) / c).abs()
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConcavityReport {
    pub samples: usize,
    /// Samples where either estimate is positive.
    pub positive: Vec<ProbeSample>,
    /// Samples where the estimates disagree by more than `1e-4` relative.
    pub disagreeing: Vec<ProbeSample>,
    pub max_disagreement: f64,
}

impl ConcavityReport {
    pub fn passed(&self) -> bool {
        self.positive.is_empty() && self.disagreeing.is_empty()
    }

    pub fn merge(&mut self, other: ConcavityReport) {
        self.samples += other.samples;
        self.positive.extend(other.positive);
        self.disagreeing.extend(other.disagreeing);
        self.max_disagreement = self.max_disagreement.max(other.max_disagreement);
    }
}

/// Evaluates `Φ_j''` at `samples` random `(j, Z_j)` with `j ≥ 2` and `Z_j`
/// log-uniform in `[1e-6·P_max, P_max]`. Single-member clusters have nothing
/// to probe.
pub fn concavity_probe(cluster: &OrderedCluster, samples: usize, seed: u64) -> ConcavityReport {
    let mut report = ConcavityReport::default();
    let n = cluster.len();
    if n < 2 {
        return report;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = cluster.bandwidth_factor / LN_2;
    let pmax = cluster.total_budget;
    for _ in 0..samples {
        let j = rng.gen_range(2..=n);
        let z = pmax * 10f64.powf(rng.gen_range(-6.0..=0.0));
        let (a, b) = (cluster.lambdas[j - 2], cluster.lambdas[j - 1]);
        let sample = ProbeSample {
            j,
            z,
            closed_form: scale * phi_curvature(a, b, z),
            finite_difference: scale * phi_curvature_fd(a, b, z),
        };
        report.samples += 1;
        let d = sample.disagreement();
        report.max_disagreement = report.max_disagreement.max(d);
        if sample.closed_form > 0.0 || sample.finite_difference > 0.0 {
            report.positive.push(sample);
        } else if d > 1e-4 {
            report.disagreeing.push(sample);
        }
    }
    report
}
