//! Simplex-constrained risk-minimizing portfolios.
//!
//! Three benchmark optimizers over the probability simplex (long-only,
//! fully invested weights): minimum variance via projected gradient
//! descent, minimum expected shortfall (CVaR) via its exact linear-program
//! formulation, and minimum empirical quantile (VaR) via multi-start local
//! search, since that objective is neither convex nor continuous.

pub mod lp;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::market_data::ReturnMatrix;

/// Stop when the projected-gradient mapping norm falls below this.
const PG_TOL: f64 = 1e-10;
/// Projected gradient iteration budget.
const PG_MAX_ITERS: usize = 50_000;
/// Coarsest and finest pairwise-move step of the VaR local search.
const VAR_STEP_START: f64 = 0.1;
const VAR_STEP_MIN: f64 = 1e-4;
/// Upper bound on coarse-to-fine schedule reruns in the quantile search;
/// in practice two or three passes reach a fixed point.
const VAR_MAX_ANNEAL_PASSES: usize = 12;
/// Cap on extra quantile-search starts drawn from a barycentric grid; the
/// grid resolution shrinks with the universe size to respect it.
const VAR_GRID_START_BUDGET: usize = 150;
/// Finest barycentric grid used for starts (denominator 10 = step 0.1).
const VAR_GRID_MAX_DENOM: usize = 10;
/// Sweep limit for the exact pairwise line-search polish.
const VAR_POLISH_MAX_SWEEPS: usize = 10;
/// Work estimate (starts x directions x T^3-ish) below which the exact
/// polish runs from every start; above it only the best point is polished.
const VAR_POLISH_WORK_BUDGET: u128 = 50_000_000;

/// Long-only, fully invested portfolio weights.
///
/// Construction clamps round-off negatives (down to `-1e-9`) to zero and
/// requires the sum to be within `1e-8` of one.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(mut weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidArgument("weight vector is empty".into()));
        }
        for w in weights.iter_mut() {
            if !w.is_finite() {
                return Err(Error::InvalidArgument(format!("non-finite weight {w}")));
            }
            if *w < -1e-9 {
                return Err(Error::InvalidArgument(format!("negative weight {w}")));
            }
            if *w < 0.0 {
                *w = 0.0;
            }
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-8 {
            return Err(Error::InvalidArgument(format!(
                "weights sum to {sum}, expected 1"
            )));
        }
        Ok(Self(weights))
    }

    /// The equal-weight portfolio `1/n`.
    pub fn equal(n: usize) -> Result<Self> {
        Self::new(vec![1.0 / n as f64; n.max(1)])
    }

    /// All weight on asset `i`.
    pub fn single(n: usize, i: usize) -> Result<Self> {
        if i >= n {
            return Err(Error::InvalidArgument(format!(
                "asset {i} out of range for {n} assets"
            )));
        }
        let mut w = vec![0.0; n];
        w[i] = 1.0;
        Self::new(w)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Result of a portfolio optimization.
#[derive(Debug, Clone)]
pub struct OptimizerOutcome {
    pub weights: WeightVector,
    /// Value of the minimized objective at `weights` (variance, RU-CVaR or
    /// empirical VaR, in return units).
    pub objective: f64,
    /// True when the input was degenerate and a fallback portfolio was
    /// returned (currently: all-zero covariance -> equal weights).
    pub degenerate: bool,
}

/// Which tail functional to minimize.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RiskMeasure {
    Variance,
    ValueAtRisk,
    ConditionalValueAtRisk,
}

/// A validated objective: a risk measure plus its tail level.
#[derive(Debug, Clone, Copy)]
pub struct RiskObjective {
    kind: RiskMeasure,
    alpha: f64,
}

impl RiskObjective {
    /// `alpha` is the tail probability, required in `(0, 0.5]`; it is
    /// ignored by the variance objective.
    pub fn new(kind: RiskMeasure, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 0.5) {
            return Err(Error::InvalidArgument(format!(
                "tail level alpha must be in (0, 0.5], got {alpha}"
            )));
        }
        Ok(Self { kind, alpha })
    }

    pub fn kind(&self) -> RiskMeasure {
        self.kind
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Runs the matching optimizer on the window.
    pub fn minimize(&self, a: &ReturnMatrix) -> Result<OptimizerOutcome> {
        match self.kind {
            RiskMeasure::Variance => min_variance(a),
            RiskMeasure::ValueAtRisk => min_var_quantile(a, self.alpha),
            RiskMeasure::ConditionalValueAtRisk => min_cvar(a, self.alpha),
        }
    }
}

/// Minimum-variance weights on the simplex by projected gradient descent.
///
/// The gradient step is `1/L` with `L` the largest eigenvalue of twice the
/// sample covariance (estimated by power iteration), followed by Euclidean
/// projection onto the simplex.  Stops when the projected-gradient mapping
/// norm drops below `1e-10` or after 50 000 iterations.  An all-zero
/// covariance has no preferred direction: equal weights are returned with
/// the `degenerate` flag set.
pub fn min_variance(a: &ReturnMatrix) -> Result<OptimizerOutcome> {
    let t = a.num_rows();
    let n = a.num_cols();
    if t < 2 {
        return Err(Error::InvalidArgument(
            "variance estimation needs at least two rows".into(),
        ));
    }
    let sigma = sample_covariance(a);
    if sigma.iter().all(|v| *v == 0.0) {
        return Ok(OptimizerOutcome {
            weights: WeightVector::equal(n)?,
            objective: 0.0,
            degenerate: true,
        });
    }
    if n == 1 {
        return Ok(OptimizerOutcome {
            weights: WeightVector::single(1, 0)?,
            objective: sigma[(0, 0)],
            degenerate: false,
        });
    }
    // Safety factor on the Lipschitz estimate: power iteration approaches
    // the top eigenvalue from below, and the step must not exceed 1/L.
    let mut big_l = 2.0 * power_lambda_max(&sigma) * 1.001;
    if big_l <= 0.0 {
        big_l = 2.0 * sigma.diag().iter().fold(f64::MIN, |a, b| a.max(*b)).max(f64::MIN_POSITIVE);
    }

    let mut w = Array1::from_elem(n, 1.0 / n as f64);
    let mut obj = quadratic_form(&sigma, &w);
    for _ in 0..PG_MAX_ITERS {
        let grad = sigma.dot(&w) * 2.0;
        let step = &w - &(&grad / big_l);
        let next = Array1::from_vec(project_simplex(step.as_slice().expect("contiguous")));
        let next_obj = quadratic_form(&sigma, &next);
        if next_obj > obj + 1e-18 {
            // The Lipschitz estimate was too small (possible only when the
            // power iteration missed the top eigenvector); back off.
            big_l *= 2.0;
            continue;
        }
        let pg_norm = (&w - &next).mapv(|d| d * big_l).mapv(|d| d * d).sum().sqrt();
        w = next;
        obj = next_obj;
        if pg_norm < PG_TOL {
            break;
        }
    }
    Ok(OptimizerOutcome {
        weights: WeightVector::new(w.to_vec())?,
        objective: obj,
        degenerate: false,
    })
}

/// Minimum expected shortfall at tail level `alpha` via the linear-program
/// formulation `min_{w, zeta} zeta + (1/(alpha T)) sum_t max(-(Aw)_t - zeta, 0)`.
///
/// The returned objective is that functional's optimal value, a loss in
/// return units (positive when the tail is losing money).
pub fn min_cvar(a: &ReturnMatrix, alpha: f64) -> Result<OptimizerOutcome> {
    check_alpha(alpha)?;
    let t = a.num_rows();
    let n = a.num_cols();
    // Variables: n weights, zeta+ , zeta-, t hinge excesses u, t slacks s.
    // Row i (i < t):  (Aw)_i + zeta - u_i + s_i = 0  rewritten so that u_i
    // >= -(Aw)_i - zeta holds with equality slack s_i >= 0.
    // Final row: sum w = 1.
    let cols = n + 2 + 2 * t;
    let mut mat = Array2::zeros((t + 1, cols));
    let mut cost = vec![0.0; cols];
    let mut b = vec![0.0; t + 1];
    for i in 0..t {
        for j in 0..n {
            mat[(i, j)] = a.values()[(i, j)];
        }
        mat[(i, n)] = 1.0; // zeta+
        mat[(i, n + 1)] = -1.0; // zeta-
        mat[(i, n + 2 + i)] = 1.0; // u_i
        mat[(i, n + 2 + t + i)] = -1.0; // s_i
    }
    for j in 0..n {
        mat[(t, j)] = 1.0;
    }
    b[t] = 1.0;
    cost[n] = 1.0;
    cost[n + 1] = -1.0;
    let hinge = 1.0 / (alpha * t as f64);
    for i in 0..t {
        cost[n + 2 + i] = hinge;
    }
    match lp::solve_equality_form(&cost, &mat, &b)? {
        lp::LpOutcome::Optimal(sol) => Ok(OptimizerOutcome {
            weights: WeightVector::new(sol.x[..n].to_vec())?,
            objective: sol.objective,
            degenerate: false,
        }),
        lp::LpOutcome::Infeasible => Err(Error::NoConvergence(
            "expected-shortfall program reported infeasible, which should be impossible on the simplex".into(),
        )),
        lp::LpOutcome::Unbounded => Err(Error::NoConvergence(
            "expected-shortfall program reported unbounded, which should be impossible on the simplex".into(),
        )),
    }
}

/// Minimum empirical value-at-risk (the `ceil(alpha T)`-th worst portfolio
/// return, sign-flipped) by multi-start search over the simplex.
///
/// Starts: equal weights, each single asset, the minimum-shortfall
/// solutions at `alpha`, `alpha/2` and `2 alpha`, the minimum-variance
/// solution, and (on small problems) a coarse barycentric grid.  Each start
/// descends by greedy pairwise transfers with a 0.1 -> 1e-4 halving step
/// schedule that reruns until it stalls; on small problems an exact
/// pairwise line search also runs from every start, and the overall best
/// point always receives a final exact descent.
///
/// The objective is non-convex, so only a local guarantee holds: the result
/// is never worse than any of the starting portfolios.
pub fn min_var_quantile(a: &ReturnMatrix, alpha: f64) -> Result<OptimizerOutcome> {
    check_alpha(alpha)?;
    let t = a.num_rows();
    let n = a.num_cols();
    let k = tail_index(alpha, t);
    if n == 1 {
        let port: Vec<f64> = a.values().column(0).to_vec();
        return Ok(OptimizerOutcome {
            weights: WeightVector::single(1, 0)?,
            objective: kth_worst_loss(&port, k),
            degenerate: false,
        });
    }

    let mut starts: Vec<Vec<f64>> = Vec::with_capacity(n + 5);
    starts.push(vec![1.0 / n as f64; n]);
    for i in 0..n {
        let mut w = vec![0.0; n];
        w[i] = 1.0;
        starts.push(w);
    }
    starts.push(min_cvar(a, alpha)?.weights.as_slice().to_vec());
    // The quantile surface is non-convex with narrow basins; expected-
    // shortfall minimizers at neighboring tail levels and the variance
    // minimizer approach the optimum from several sides.
    starts.push(min_cvar(a, (alpha * 0.5).max(1e-6))?.weights.as_slice().to_vec());
    starts.push(min_cvar(a, (alpha * 2.0).min(0.5))?.weights.as_slice().to_vec());
    starts.push(min_variance(a)?.weights.as_slice().to_vec());

    let grid = simplex_grid_starts(n, VAR_GRID_START_BUDGET);
    let directions = (n * (n - 1) / 2).max(1);
    let exhaustive_cost = 3u128
        * (starts.len() + grid.len()) as u128
        * directions as u128
        * (t as u128).pow(3);

    let mut best: Option<(Vec<f64>, f64)> = None;
    let consider = |w: Vec<f64>, obj: f64, best: &mut Option<(Vec<f64>, f64)>| {
        if best.as_ref().map(|(_, b)| obj < *b).unwrap_or(true) {
            *best = Some((w, obj));
        }
    };
    if exhaustive_cost <= VAR_POLISH_WORK_BUDGET {
        // Small problem: the exact descent is affordable from every start,
        // and the barycentric grid covers basins the hops jump over.
        for start in starts.into_iter().chain(grid) {
            let (w, obj) = var_local_search(a, start.clone(), k);
            consider(w, obj, &mut best);
            let mut w = start;
            let obj = exact_pairwise_polish(a, &mut w, k);
            consider(w, obj, &mut best);
        }
    } else {
        for start in starts {
            let (w, obj) = var_local_search(a, start, k);
            consider(w, obj, &mut best);
        }
    }
    // A final exact descent never hurts and is cheap on a converged point.
    let (mut w, _) = best.expect("at least one start");
    let obj = exact_pairwise_polish(a, &mut w, k);
    Ok(OptimizerOutcome {
        weights: WeightVector::new(w)?,
        objective: obj,
        degenerate: false,
    })
}

/// Index (1-based) of the tail order statistic: `ceil(alpha * t)`, at least 1.
pub(crate) fn tail_index(alpha: f64, t: usize) -> usize {
    ((alpha * t as f64).ceil() as usize).clamp(1, t)
}

/// The `k`-th worst return as a positive loss.
fn kth_worst_loss(portfolio: &[f64], k: usize) -> f64 {
    kth_worst_loss_into(&mut Vec::new(), portfolio, k)
}

/// Allocation-free variant for the hot search loops: `scratch` is
/// overwritten with the portfolio and selected in place.
fn kth_worst_loss_into(scratch: &mut Vec<f64>, portfolio: &[f64], k: usize) -> f64 {
    debug_assert!(k >= 1 && k <= portfolio.len());
    scratch.clear();
    scratch.extend_from_slice(portfolio);
    let (_, kth, _) =
        scratch.select_nth_unstable_by(k - 1, |x, y| x.partial_cmp(y).expect("finite"));
    -*kth
}

/// Greedy first-improvement search over pairwise weight transfers.
fn var_local_search(a: &ReturnMatrix, mut w: Vec<f64>, k: usize) -> (Vec<f64>, f64) {
    let t = a.num_rows();
    let n = a.num_cols();
    let v = a.values();
    // Column slices avoid repeated two-dimensional indexing in the inner
    // candidate loops, and the selection scratch is reused across them.
    let cols: Vec<Vec<f64>> = (0..n).map(|j| v.column(j).to_vec()).collect();
    let mut port = vec![0.0; t];
    for i in 0..t {
        port[i] = (0..n).map(|j| cols[j][i] * w[j]).sum();
    }
    let mut scratch = Vec::with_capacity(t);
    let mut obj = kth_worst_loss_into(&mut scratch, &port, k);
    let mut cand = vec![0.0; t];
    // Rerunning the whole coarse-to-fine schedule lets a large transfer
    // escape a basin that fine steps converged into; stop once a full
    // schedule pass finds nothing.
    for _ in 0..VAR_MAX_ANNEAL_PASSES {
        let before = obj;
        let mut step = VAR_STEP_START;
        while step >= VAR_STEP_MIN {
            loop {
                let mut improved = false;
                for from in 0..n {
                    for to in 0..n {
                        // Accepted moves drain the donor, so its budget must
                        // be re-checked before every transfer.
                        if w[from] < step - 1e-12 {
                            break;
                        }
                        if to == from {
                            continue;
                        }
                        let (cto, cfrom) = (&cols[to], &cols[from]);
                        for i in 0..t {
                            cand[i] = port[i] + step * (cto[i] - cfrom[i]);
                        }
                        let cand_obj = kth_worst_loss_into(&mut scratch, &cand, k);
                        if cand_obj < obj - 1e-15 {
                            w[from] -= step;
                            w[to] += step;
                            std::mem::swap(&mut port, &mut cand);
                            obj = cand_obj;
                            improved = true;
                        }
                    }
                }
                if !improved {
                    break;
                }
            }
            step *= 0.5;
        }
        if obj >= before - 1e-15 {
            break;
        }
    }
    for wi in w.iter_mut() {
        if *wi < 0.0 {
            *wi = 0.0;
        }
    }
    (w, obj)
}

/// Barycentric grid points on the simplex with the largest denominator `m`
/// (step `1/m`, capped at 1/10) whose point count stays within `budget`.
/// Returns nothing when only `m = 1` fits: those are the basis vectors,
/// which are always searched anyway.
fn simplex_grid_starts(n: usize, budget: usize) -> Vec<Vec<f64>> {
    if n < 2 {
        return Vec::new();
    }
    // C(m + n - 1, n - 1), the number of grid points, exactly.
    let count = |m: usize| -> usize {
        let mut c: u128 = 1;
        for i in 1..n {
            c = c * (m + i) as u128 / i as u128;
            if c > budget as u128 {
                return usize::MAX;
            }
        }
        c as usize
    };
    let mut m = VAR_GRID_MAX_DENOM;
    while m > 1 && count(m) > budget {
        m -= 1;
    }
    if m <= 1 {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(count(m));
    let mut parts = vec![0usize; n];
    fill_compositions(0, m, m, &mut parts, &mut out);
    out
}

/// Enumerates all ways to split `remaining` grid ticks over the tail of
/// `parts`, emitting each completed split as weights.
fn fill_compositions(
    idx: usize,
    remaining: usize,
    denom: usize,
    parts: &mut Vec<usize>,
    out: &mut Vec<Vec<f64>>,
) {
    if idx + 1 == parts.len() {
        parts[idx] = remaining;
        out.push(parts.iter().map(|p| *p as f64 / denom as f64).collect());
        return;
    }
    for v in 0..=remaining {
        parts[idx] = v;
        fill_compositions(idx + 1, remaining - v, denom, parts, out);
    }
}

/// Exact one-dimensional descent along pairwise transfer directions.
///
/// Moving mass `theta` from one asset to another changes every scenario
/// loss linearly in `theta`, so the k-th largest loss is piecewise linear
/// along the move; its minimum over the feasible interval is attained at a
/// crossing of two scenario losses or at an endpoint.  Every such candidate
/// is evaluated, the best strict improvement is applied, and sweeps repeat
/// until one finds nothing.  Never returns a worse point than it was given.
fn exact_pairwise_polish(a: &ReturnMatrix, w: &mut [f64], k: usize) -> f64 {
    let t = a.num_rows();
    let n = a.num_cols();
    let v = a.values();
    let cols: Vec<Vec<f64>> = (0..n).map(|j| v.column(j).to_vec()).collect();
    let mut port = vec![0.0; t];
    for i in 0..t {
        port[i] = (0..n).map(|j| cols[j][i] * w[j]).sum();
    }
    let mut scratch = Vec::with_capacity(t);
    let mut obj = kth_worst_loss_into(&mut scratch, &port, k);
    let mut candidates: Vec<f64> = Vec::new();
    let mut eval = vec![0.0; t];
    // Per-scenario loss change for the active direction, built once per
    // direction and shared by the crossing, evaluation, and apply loops.
    let mut dcol = vec![0.0; t];
    for _ in 0..VAR_POLISH_MAX_SWEEPS {
        let mut improved = false;
        for p in 0..n {
            for q in (p + 1)..n {
                // theta > 0 moves mass from p to q; negative moves reverse.
                let lo = -w[q];
                let hi = w[p];
                if hi - lo <= 1e-12 {
                    continue;
                }
                for i in 0..t {
                    dcol[i] = cols[q][i] - cols[p][i];
                }
                candidates.clear();
                candidates.push(lo);
                candidates.push(hi);
                for i in 0..t {
                    let di = dcol[i];
                    for j in (i + 1)..t {
                        let denom = di - dcol[j];
                        if denom == 0.0 {
                            continue;
                        }
                        let theta = (port[j] - port[i]) / denom;
                        if theta > lo && theta < hi {
                            candidates.push(theta);
                        }
                    }
                }
                let mut best_theta = 0.0;
                let mut best_obj = obj;
                for &theta in &candidates {
                    for i in 0..t {
                        eval[i] = port[i] + theta * dcol[i];
                    }
                    let cand_obj = kth_worst_loss_into(&mut scratch, &eval, k);
                    if cand_obj < best_obj - 1e-15 {
                        best_obj = cand_obj;
                        best_theta = theta;
                    }
                }
                if best_obj < obj - 1e-15 {
                    w[p] -= best_theta;
                    w[q] += best_theta;
                    for i in 0..t {
                        port[i] += best_theta * dcol[i];
                    }
                    obj = best_obj;
                    improved = true;
                }
            }
        }
        if !improved {
            break;
        }
    }
    for wi in w.iter_mut() {
        if *wi < 0.0 {
            *wi = 0.0;
        }
    }
    obj
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha <= 0.5) {
        return Err(Error::InvalidArgument(format!(
            "tail level alpha must be in (0, 0.5], got {alpha}"
        )));
    }
    Ok(())
}

/// Sample covariance of the window columns (denominator `T - 1`).
pub fn sample_covariance(a: &ReturnMatrix) -> Array2<f64> {
    let v = a.values();
    let t = v.nrows();
    let n = v.ncols();
    let means: Vec<f64> = (0..n).map(|j| v.column(j).sum() / t as f64).collect();
    let mut centered = v.to_owned();
    for j in 0..n {
        centered.column_mut(j).mapv_inplace(|x| x - means[j]);
    }
    centered.t().dot(&centered) / (t as f64 - 1.0)
}

fn quadratic_form(sigma: &Array2<f64>, w: &Array1<f64>) -> f64 {
    w.dot(&sigma.dot(w))
}

/// Largest eigenvalue of a symmetric PSD matrix by power iteration.
fn power_lambda_max(sigma: &Array2<f64>) -> f64 {
    let n = sigma.nrows();
    let mut v = Array1::from_elem(n, 1.0 / (n as f64).sqrt());
    let mut lambda = 0.0;
    for _ in 0..1000 {
        let next = sigma.dot(&v);
        let norm = next.dot(&next).sqrt();
        if norm == 0.0 {
            break;
        }
        v = next / norm;
        let new_lambda = v.dot(&sigma.dot(&v));
        if (new_lambda - lambda).abs() <= 1e-14 * new_lambda.abs() {
            lambda = new_lambda;
            break;
        }
        lambda = new_lambda;
    }
    // For a PSD matrix the top eigenvalue is at least the largest diagonal
    // entry; use it as a floor in case the start vector was unlucky.
    let diag_max = sigma.diag().iter().fold(0.0f64, |a, b| a.max(*b));
    lambda.max(diag_max)
}

/// Euclidean projection onto the probability simplex (sort-based).
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.partial_cmp(a).expect("finite weights"));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    let mut found = false;
    for (i, ui) in u.iter().enumerate() {
        cumsum += ui;
        let candidate = (cumsum - 1.0) / (i + 1) as f64;
        if ui - candidate > 0.0 {
            theta = candidate;
            found = true;
        }
    }
    debug_assert!(found, "projection always has a support set");
    let _ = found;
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}
