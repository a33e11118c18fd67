//! Dense two-phase simplex solver for the small linear programs that arise
//! in tail-risk portfolio optimization (at most a few hundred rows).
//!
//! Solves `min c'x  s.t.  Ax = b, x >= 0` on a dense tableau.  Phase one
//! minimizes the sum of artificial variables to find a basic feasible
//! point; phase two optimizes the real objective.  Pivoting uses Dantzig's
//! rule and falls back to Bland's rule after a long degenerate stall, which
//! rules out cycling.

use ndarray::Array2;

use crate::error::{Error, Result};

/// Minimum magnitude for a pivot element and reduced-cost optimality slack.
const TOL: f64 = 1e-9;
/// Iterations without objective progress before switching to Bland's rule.
const STALL_LIMIT: usize = 200;

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
}

#[derive(Debug, Clone)]
pub enum LpOutcome {
    Optimal(LpSolution),
    Infeasible,
    Unbounded,
}

/// Solves `min c'x` subject to `Ax = b`, `x >= 0`.
///
/// `a` is dense `m x n` with `n == c.len()` and `m == b.len()`.  Rows with
/// negative right-hand sides are flipped internally.  Errors only when the
/// iteration budget is exhausted, which for non-cycling pivoting means the
/// problem is far larger than this solver is meant for.
pub fn solve_equality_form(c: &[f64], a: &Array2<f64>, b: &[f64]) -> Result<LpOutcome> {
    let m = a.nrows();
    let n = a.ncols();
    assert_eq!(c.len(), n, "cost vector length must match column count");
    assert_eq!(b.len(), m, "rhs length must match row count");

    // Tableau with artificial columns n..n+m appended.
    let width = n + m;
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut rhs = Vec::with_capacity(m);
    for i in 0..m {
        let flip = if b[i] < 0.0 { -1.0 } else { 1.0 };
        let mut row = vec![0.0; width];
        for j in 0..n {
            row[j] = flip * a[(i, j)];
        }
        row[n + i] = 1.0;
        rows.push(row);
        rhs.push(flip * b[i]);
    }
    let mut basis: Vec<usize> = (n..n + m).collect();

    // Phase one: minimize the sum of artificials.  With the artificial
    // basis the reduced cost of column j is -sum_i a_ij and the objective
    // starts at sum_i b_i.
    let mut cost = vec![0.0; width];
    for j in 0..n {
        cost[j] = -rows.iter().map(|r| r[j]).sum::<f64>();
    }
    let mut obj: f64 = rhs.iter().sum();
    let feas_tol = 1e-7 * (1.0 + rhs.iter().fold(0.0f64, |acc, v| acc.max(v.abs())));
    let mut phase1_cost = vec![0.0; width];
    for slot in phase1_cost.iter_mut().skip(n) {
        *slot = 1.0;
    }
    iterate(&mut rows, &mut rhs, &mut cost, &mut obj, &mut basis, width, &phase1_cost)?;
    if obj > feas_tol {
        return Ok(LpOutcome::Infeasible);
    }

    // Drive leftover artificials out of the basis; rows where that is
    // impossible are redundant and dropped.  The replacement pivot must be
    // the largest-magnitude structural entry: these rows carry a basic
    // value of at most the phase-one residue, and dividing that residue by
    // a near-zero pivot would inject large infeasibilities.
    let mut i = 0;
    while i < rows.len() {
        if basis[i] >= n {
            let best = (0..n)
                .max_by(|&a2, &b2| {
                    rows[i][a2]
                        .abs()
                        .partial_cmp(&rows[i][b2].abs())
                        .expect("finite tableau")
                })
                .filter(|&j| rows[i][j].abs() > 1e-7);
            match best {
                Some(j) => {
                    pivot(&mut rows, &mut rhs, &mut cost, &mut obj, &mut basis, i, j)
                }
                None => {
                    rows.swap_remove(i);
                    rhs.swap_remove(i);
                    basis.swap_remove(i);
                    continue;
                }
            }
        }
        i += 1;
    }

    // Phase two: restore the real costs over the current basis.
    for row in &mut rows {
        row.truncate(n);
    }
    cost.truncate(n);
    refresh_costs(&rows, &rhs, &mut cost, &mut obj, &basis, n, c);
    if let Limit::Unbounded = iterate(&mut rows, &mut rhs, &mut cost, &mut obj, &mut basis, n, c)? {
        return Ok(LpOutcome::Unbounded);
    }

    let mut x = vec![0.0; n];
    for (i, &bj) in basis.iter().enumerate() {
        if bj < n {
            x[bj] = rhs[i].max(0.0);
        }
    }
    let objective = c.iter().zip(&x).map(|(ci, xi)| ci * xi).sum();
    Ok(LpOutcome::Optimal(LpSolution { x, objective }))
}

enum Limit {
    Optimal,
    Unbounded,
}

/// Recomputes reduced costs and the objective from the tableau and the true
/// cost vector.  Incremental pivot updates accumulate round-off over many
/// iterations; basic columns are exact unit vectors, so this restores
/// internally consistent reduced costs (in particular, exact zeros on basic
/// variables).
fn refresh_costs(
    rows: &[Vec<f64>],
    rhs: &[f64],
    cost: &mut [f64],
    obj: &mut f64,
    basis: &[usize],
    active_cols: usize,
    true_cost: &[f64],
) {
    let basis_costs: Vec<f64> = basis.iter().map(|&bj| true_cost[bj]).collect();
    for j in 0..active_cols {
        let mut red = true_cost[j];
        for (i, row) in rows.iter().enumerate() {
            red -= basis_costs[i] * row[j];
        }
        cost[j] = red;
    }
    for &bj in basis {
        cost[bj] = 0.0;
    }
    *obj = basis_costs.iter().zip(rhs).map(|(c, r)| c * r).sum();
}

fn pick_entering(cost: &[f64], active_cols: usize, bland: bool) -> Option<usize> {
    if bland {
        return (0..active_cols).find(|&j| cost[j] < -TOL);
    }
    let mut best: Option<(usize, f64)> = None;
    for j in 0..active_cols {
        if cost[j] < -TOL && best.map(|(_, c0)| cost[j] < c0).unwrap_or(true) {
            best = Some((j, cost[j]));
        }
    }
    best.map(|(j, _)| j)
}

/// Two-pass ratio test: find the smallest `rhs/column` over entries above
/// `min_pivot`, then among rows within a small tolerance of that minimum
/// pick the largest pivot element.  Degenerate problems tie on ratio zero
/// constantly, and repeatedly pivoting on near-zero elements there makes
/// the basis numerically singular.  Under Bland's rule the tie breaks
/// toward the smallest basis index instead, which is what its
/// anti-cycling proof requires.
fn pick_leaving(
    rows: &[Vec<f64>],
    rhs: &[f64],
    basis: &[usize],
    jc: usize,
    min_pivot: f64,
    bland: bool,
) -> Option<usize> {
    let mut rmin = f64::INFINITY;
    for i in 0..rows.len() {
        if rows[i][jc] > min_pivot {
            rmin = rmin.min(rhs[i] / rows[i][jc]);
        }
    }
    if rmin.is_infinite() {
        return None;
    }
    let tie = rmin + 1e-9 + 1e-7 * rmin.abs();
    let mut leave: Option<usize> = None;
    for i in 0..rows.len() {
        if rows[i][jc] <= min_pivot || rhs[i] / rows[i][jc] > tie {
            continue;
        }
        leave = Some(match leave {
            None => i,
            Some(li) => {
                let better = if bland {
                    basis[i] < basis[li]
                } else {
                    rows[i][jc] > rows[li][jc]
                };
                if better {
                    i
                } else {
                    li
                }
            }
        });
    }
    leave
}

/// Runs simplex iterations in place until optimality or unboundedness.
///
/// Optimality and unboundedness are only declared after re-deriving the
/// reduced costs from the tableau, which prevents drift in the incremental
/// updates from producing phantom improving columns (the classic symptom is
/// a "ray" along the mirror image of a basic split free variable).
fn iterate(
    rows: &mut [Vec<f64>],
    rhs: &mut [f64],
    cost: &mut [f64],
    obj: &mut f64,
    basis: &mut [usize],
    active_cols: usize,
    true_cost: &[f64],
) -> Result<Limit> {
    let m = rows.len();
    let max_iters = 1000 * (m + active_cols) + 10_000;
    let mut stalled = 0usize;
    let mut bland = false;
    let mut since_refresh = 0usize;
    let mut iters = 0usize;
    while iters < max_iters {
        iters += 1;
        if since_refresh >= 500 {
            refresh_costs(rows, rhs, cost, obj, basis, active_cols, true_cost);
            since_refresh = 0;
        }
        let jc = match pick_entering(cost, active_cols, bland) {
            Some(j) => j,
            None => {
                refresh_costs(rows, rhs, cost, obj, basis, active_cols, true_cost);
                since_refresh = 0;
                match pick_entering(cost, active_cols, bland) {
                    Some(j) => j,
                    None => return Ok(Limit::Optimal),
                }
            }
        };
        let ir = match pick_leaving(rows, rhs, basis, jc, TOL, bland) {
            Some(i) => i,
            None => {
                refresh_costs(rows, rhs, cost, obj, basis, active_cols, true_cost);
                since_refresh = 0;
                if cost[jc] >= -TOL {
                    continue; // the improving direction was round-off noise
                }
                // A genuinely improving column: accept a smaller pivot
                // before concluding the problem is unbounded.
                match pick_leaving(rows, rhs, basis, jc, 1e-12, bland) {
                    Some(i) => i,
                    None => return Ok(Limit::Unbounded),
                }
            }
        };

        let before = *obj;
        pivot_slice(rows, rhs, cost, obj, basis, ir, jc);
        since_refresh += 1;
        if *obj < before - 1e-13 * (1.0 + before.abs()) {
            stalled = 0;
        } else {
            stalled += 1;
            if stalled > STALL_LIMIT {
                bland = true;
            }
        }
    }
    Err(Error::NoConvergence(
        "simplex iteration budget exhausted".into(),
    ))
}

fn pivot(
    rows: &mut Vec<Vec<f64>>,
    rhs: &mut Vec<f64>,
    cost: &mut Vec<f64>,
    obj: &mut f64,
    basis: &mut Vec<usize>,
    ir: usize,
    jc: usize,
) {
    pivot_slice(rows, rhs, cost, obj, basis, ir, jc);
}

/// Gauss-Jordan pivot on tableau entry `(ir, jc)`.
fn pivot_slice(
    rows: &mut [Vec<f64>],
    rhs: &mut [f64],
    cost: &mut [f64],
    obj: &mut f64,
    basis: &mut [usize],
    ir: usize,
    jc: usize,
) {
    let piv = rows[ir][jc];
    debug_assert!(piv.abs() > 0.0);
    let inv = 1.0 / piv;
    for v in rows[ir].iter_mut() {
        *v *= inv;
    }
    rhs[ir] *= inv;
    rows[ir][jc] = 1.0;
    for i in 0..rows.len() {
        if i == ir {
            continue;
        }
        let f = rows[i][jc];
        if f == 0.0 {
            continue;
        }
        let (head, tail) = if i < ir {
            let (a, b) = rows.split_at_mut(ir);
            (&mut a[i], &b[0])
        } else {
            let (a, b) = rows.split_at_mut(i);
            (&mut b[0], &a[ir])
        };
        for (v, p) in head.iter_mut().zip(tail.iter()) {
            *v -= f * p;
        }
        head[jc] = 0.0;
        rhs[i] -= f * rhs[ir];
        if rhs[i] < 0.0 && rhs[i] > -1e-11 {
            rhs[i] = 0.0;
        }
    }
    let f = cost[jc];
    if f != 0.0 {
        for (v, p) in cost.iter_mut().zip(rows[ir].iter()) {
            *v -= f * p;
        }
        cost[jc] = 0.0;
        *obj += f * rhs[ir];
    }
    basis[ir] = jc;
}
