//! Log-barrier Newton method for maximising a smooth concave function over a
//! bounded polytope `{y : A y <= b}`. Small and dense by construction: the
//! problems here have one variable per cluster member.

use nalgebra::{DMatrix, DVector};

pub(crate) trait Concave {
    fn value(&self, y: &DVector<f64>) -> f64;
    fn gradient(&self, y: &DVector<f64>) -> DVector<f64>;
    /// Negative semidefinite.
    fn hessian(&self, y: &DVector<f64>) -> DMatrix<f64>;
}

pub(crate) struct Linear(pub DVector<f64>);

impl Concave for Linear {
    fn value(&self, y: &DVector<f64>) -> f64 {
        self.0.dot(y)
    }

    fn gradient(&self, _y: &DVector<f64>) -> DVector<f64> {
        self.0.clone()
    }

    fn hessian(&self, y: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(y.len(), y.len())
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Polytope {
    pub rows: DMatrix<f64>,
    pub rhs: DVector<f64>,
}

impl Polytope {
    pub fn slacks(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.rhs - &self.rows * y
    }

    /// Largest amount by which `y` breaks a row (0 when feasible).
    pub fn max_violation(&self, y: &DVector<f64>) -> f64 {
        self.slacks(y).iter().fold(0.0f64, |acc, s| acc.max(-s))
    }

    pub fn relaxed(&self, by: f64) -> Self {
        Self {
            rows: self.rows.clone(),
            rhs: self.rhs.add_scalar(by),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Outcome {
    pub point: DVector<f64>,
    /// Bound on `max f - f(point)` from the final centering step.
    pub duality_gap: f64,
}

/// Shared Newton-step budget across the barrier solves of one problem.
pub(crate) struct Budget {
    pub remaining: usize,
    pub used: usize,
}

impl Budget {
    pub fn new(cap: usize) -> Self {
        Self {
            remaining: cap,
            used: 0,
        }
    }

    fn spend(&mut self) -> bool {
        if self.remaining == 0 {
            return false;
        }
        self.remaining -= 1;
        self.used += 1;
        true
    }
}

fn barrier_value<F: Concave>(f: &F, poly: &Polytope, t: f64, y: &DVector<f64>) -> f64 {
    let s = poly.slacks(y);
    if s.iter().any(|v| !(*v > 0.0)) {
        return f64::INFINITY;
    }
    let v = -t * f.value(y) - s.iter().map(|v| v.ln()).sum::<f64>();
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

fn newton_direction(h: DMatrix<f64>, g: &DVector<f64>) -> Option<DVector<f64>> {
    let n = h.nrows();
    if let Some(ch) = h.clone().cholesky() {
        return Some(ch.solve(&(-g)));
    }
    let scale = (0..n).map(|i| h[(i, i)].abs()).fold(0.0, f64::max).max(1.0);
    let regularised = h + DMatrix::identity(n, n) * (1e-12 * scale);
    regularised.cholesky().map(|ch| ch.solve(&(-g)))
}

/// Maximises `f` over `poly` starting from a strictly feasible `start`, until
/// the barrier duality bound drops below `gap_tol`. Returns the best iterate
/// as `Err` if the Newton budget runs out.
pub(crate) fn maximize<F: Concave>(
    f: &F,
    poly: &Polytope,
    start: DVector<f64>,
    gap_tol: f64,
    budget: &mut Budget,
) -> Result<Outcome, Outcome> {
    let rows = poly.rows.nrows() as f64;
    let mut y = start;
    if y.is_empty() {
        return Ok(Outcome {
            point: y,
            duality_gap: 0.0,
        });
    }
    debug_assert!(poly.slacks(&y).iter().all(|s| *s > 0.0));
    let mut t = 1.0;
    loop {
        // Centering.
        loop {
            let s = poly.slacks(&y);
            let inv: DVector<f64> = s.map(|v| 1.0 / v);
            let grad = -f.gradient(&y) * t + poly.rows.tr_mul(&inv);
            let weighted = DMatrix::from_fn(poly.rows.nrows(), poly.rows.ncols(), |i, j| {
                poly.rows[(i, j)] * inv[i]
            });
            let hess = -f.hessian(&y) * t + weighted.tr_mul(&weighted);
            let Some(step) = newton_direction(hess, &grad) else {
                break;
            };
            let decrement = -grad.dot(&step);
            if !(decrement > 1e-12) {
                break;
            }
            if !budget.spend() {
                return Err(Outcome {
                    point: y,
                    duality_gap: rows / t,
                });
            }
            let current = barrier_value(f, poly, t, &y);
            let mut alpha = 1.0;
            let mut accepted = false;
            while alpha > 1e-20 {
                let trial = &y + &step * alpha;
                let v = barrier_value(f, poly, t, &trial);
                if v < current && v <= current - 0.25 * alpha * decrement {
                    y = trial;
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        if rows / t <= gap_tol {
            return Ok(Outcome {
                point: y,
                duality_gap: rows / t,
            });
        }
        t *= 10.0;
    }
}

/// Phase I: minimises the largest row violation `tau` over `poly`, inside a
/// box `[-1, 2]^m` that contains every point of interest. Returns `(y, tau)`.
pub(crate) fn least_violation(
    poly: &Polytope,
    guess: &DVector<f64>,
    gap_tol: f64,
    budget: &mut Budget,
) -> Result<(DVector<f64>, f64), Outcome> {
    let m = guess.len();
    let k = poly.rows.nrows();
    // Variables (y, tau). Rows: A y - tau <= b, box on y, tau >= -1.
    let total = k + 2 * m + 1;
    let mut rows = DMatrix::zeros(total, m + 1);
    let mut rhs = DVector::zeros(total);
    for i in 0..k {
        for j in 0..m {
            rows[(i, j)] = poly.rows[(i, j)];
        }
        rows[(i, m)] = -1.0;
        rhs[i] = poly.rhs[i];
    }
    for j in 0..m {
        rows[(k + 2 * j, j)] = 1.0;
        rhs[k + 2 * j] = 2.0;
        rows[(k + 2 * j + 1, j)] = -1.0;
        rhs[k + 2 * j + 1] = 1.0;
    }
    rows[(total - 1, m)] = -1.0;
    rhs[total - 1] = 1.0;
    let lifted = Polytope { rows, rhs };

    let tau0 = poly.max_violation(guess) * (1.0 + 1e-9) + 1.0;
    let mut start = DVector::zeros(m + 1);
    start.rows_mut(0, m).copy_from(guess);
    start[m] = tau0;
    let mut objective = DVector::zeros(m + 1);
    objective[m] = -1.0;
    let out = maximize(&Linear(objective), &lifted, start, gap_tol, budget)?;
    let y = out.point.rows(0, m).into_owned();
    let tau = out.point[m];
    Ok((y, tau))
}
