//! Normalized singular-value spectra and vertex-based risk classification.
//!
//! For a `T x N` return window `A` the singular values are computed from the
//! Gram matrix `A'A` with a cyclic Jacobi eigensolver.  Dividing by the
//! largest singular value and dropping that (unit) entry leaves the `N-1`
//! smallest normalized singular values in ascending order: a point of the
//! unit hypercube `[0,1]^{N-1}`.  Risk states correspond to the `N`
//! "meaningful" vertices of that hypercube, the 0/1 vectors of the form
//! `(0,...,0,1,...,1)`: how many coordinates collapse toward 0 counts how
//! many independent directions of variation the universe has lost.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::market_data::ReturnMatrix;

/// Relative threshold under which Jacobi off-diagonals count as annihilated.
const JACOBI_REL_TOL: f64 = 1e-12;
/// Upper bound on Jacobi sweeps; cyclic Jacobi on the matrix sizes used here
/// converges in well under ten.
const JACOBI_MAX_SWEEPS: usize = 60;

/// The `N-1` smallest singular values of a return window, each divided by
/// the largest one and sorted ascending.
///
/// Entries live in `[0, 1]`; exact zeros appear when the window is rank
/// deficient.  `universe_size` is `N`, so there are `universe_size - 1`
/// entries (never fewer than one).
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedSpectrum {
    values: Vec<f64>,
    universe_size: usize,
}

impl NormalizedSpectrum {
    /// Wraps a precomputed vector of normalized singular values.  It must be
    /// non-empty, ascending and inside `[0, 1]` per entry.
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument(
                "a normalized spectrum needs at least one entry (universe of two assets)".into(),
            ));
        }
        for pair in values.windows(2) {
            if !(pair[1] >= pair[0]) {
                return Err(Error::InvalidArgument(
                    "normalized spectrum entries must be ascending".into(),
                ));
            }
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(Error::InvalidArgument(
                "normalized spectrum entries must lie in [0, 1]".into(),
            ));
        }
        let universe_size = values.len() + 1;
        Ok(Self { values, universe_size })
    }

    /// The entries, ascending.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// The universe size `N` the spectrum was computed from.
    pub fn universe_size(&self) -> usize {
        self.universe_size
    }

    /// Dimension of the hypercube the spectrum lives in (`N - 1`).
    pub fn dimension(&self) -> usize {
        self.values.len()
    }
}

/// Risk state of a window: `level` counts the coordinates that collapsed
/// toward zero, `closest_vertex_ones` the trailing ones of the winning
/// vertex.  The two always sum to `N - 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RiskScenario {
    /// Risk level in `0 ..= N-1`; higher means more co-movement.
    pub level: usize,
    /// Number of trailing ones of the closest meaningful vertex.
    pub closest_vertex_ones: usize,
}

/// Singular values of the window, descending.  Returns `min(T, N)` values.
///
/// They are the square roots of the eigenvalues of the Gram matrix `A'A`,
/// computed with a cyclic Jacobi iteration; eigenvalues that round to small
/// negative numbers are clamped to zero.
pub fn singular_values(a: &ReturnMatrix) -> Result<Vec<f64>> {
    let gram = gram_matrix(a);
    let mut eig = jacobi_eigenvalues(gram)?;
    eig.sort_by(|x, y| y.partial_cmp(x).expect("eigenvalues are finite"));
    eig.truncate(a.num_rows().min(a.num_cols()));
    Ok(eig.into_iter().map(|l| l.max(0.0).sqrt()).collect())
}

/// Normalized spectrum of the window: all `N` singular-value ratios
/// `sigma_i / sigma_max` (padding with zeros when `T < N`) minus one unit
/// entry, ascending.
///
/// Errors if the window is identically zero (no largest singular value to
/// normalize by) or has fewer than two columns.
pub fn normalized_spectrum(a: &ReturnMatrix) -> Result<NormalizedSpectrum> {
    let n = a.num_cols();
    if n < 2 {
        return Err(Error::InvalidArgument(
            "normalized spectrum needs a universe of at least two assets".into(),
        ));
    }
    let sv = singular_values(a)?;
    let sigma_max = sv[0];
    if sigma_max <= 0.0 {
        return Err(Error::Degenerate(
            "all-zero return window has no normalized spectrum".into(),
        ));
    }
    // All N ratios: the computed ones plus exact zeros for the null
    // directions of a short window (T < N), ascending.
    let mut ratios = vec![0.0; n];
    for (i, s) in sv.iter().enumerate() {
        ratios[n - 1 - i] = s / sigma_max;
    }
    ratios.sort_by(|x, y| x.partial_cmp(y).expect("ratios are finite"));
    ratios.pop(); // drop one unit entry (the largest ratio is exactly 1)
    NormalizedSpectrum::from_values(ratios)
}

/// Euclidean distance from the spectrum to the meaningful vertex with
/// `trailing_ones` ones: `(0, ..., 0, 1, ..., 1)` in dimension `N-1`.
///
/// `trailing_ones` ranges over `0 ..= N-1`; anything larger is an error.
pub fn vertex_distance(s: &NormalizedSpectrum, trailing_ones: usize) -> Result<f64> {
    let dim = s.dimension();
    if trailing_ones > dim {
        return Err(Error::InvalidArgument(format!(
            "vertex with {trailing_ones} trailing ones does not exist in dimension {dim}"
        )));
    }
    let zeros = dim - trailing_ones;
    let mut sq = 0.0;
    for (i, v) in s.values.iter().enumerate() {
        let d = if i < zeros { *v } else { *v - 1.0 };
        sq += d * d;
    }
    Ok(sq.sqrt())
}

/// Classifies the spectrum by its closest meaningful vertex; ties break
/// toward the riskier state (fewer trailing ones).
///
/// The risk level is `N - 1 - k` where `k` is the winning vertex's number of
/// trailing ones, so `level + closest_vertex_ones == N - 1` always holds.
pub fn classify_scenario(s: &NormalizedSpectrum) -> RiskScenario {
    let dim = s.dimension();
    let mut best_k = 0;
    let mut best_d = vertex_distance(s, 0).expect("vertex 0 exists");
    for k in 1..=dim {
        let d = vertex_distance(s, k).expect("k <= dim");
        if d < best_d {
            best_d = d;
            best_k = k;
        }
    }
    RiskScenario { level: dim - best_k, closest_vertex_ones: best_k }
}

/// Exposure-reduction signal: true when the spectrum sits closer to the
/// all-zeros vertex (total collapse) than to the vertex with one trailing
/// one (one surviving direction).
pub fn rr_signal(s: &NormalizedSpectrum) -> bool {
    let d0 = vertex_distance(s, 0).expect("vertex 0 exists");
    let d1 = vertex_distance(s, 1).expect("dimension is at least 1");
    d0 < d1
}

/// Early-warning variant: true when the mean of the two smallest normalized
/// singular values drops strictly below `1 / (N - 1)`.  Needs `N >= 3`;
/// equality with the threshold does not fire.
pub fn enhanced_signal(s: &NormalizedSpectrum) -> Result<bool> {
    if s.dimension() < 2 {
        return Err(Error::InvalidArgument(
            "enhanced signal needs a universe of at least three assets".into(),
        ));
    }
    let mean = (s.values[0] + s.values[1]) / 2.0;
    Ok(mean < 1.0 / (s.universe_size() - 1) as f64)
}

/// Gram matrix `A'A` of the window.
fn gram_matrix(a: &ReturnMatrix) -> Array2<f64> {
    let v = a.values();
    v.t().dot(&v)
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
///
/// Sweeps rotate away every off-diagonal entry above `1e-12` times the
/// Frobenius norm of the input and stop after the first sweep that finds
/// none, which is the classical convergence criterion for this scheme.
fn jacobi_eigenvalues(mut g: Array2<f64>) -> Result<Vec<f64>> {
    let n = g.nrows();
    debug_assert_eq!(n, g.ncols());
    if n == 1 {
        return Ok(vec![g[(0, 0)]]);
    }
    let fro = g.iter().map(|x| x * x).sum::<f64>().sqrt();
    if fro == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let tol = JACOBI_REL_TOL * fro;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n - 1 {
            for q in p + 1..n {
                if g[(p, q)].abs() <= tol {
                    continue;
                }
                rotated = true;
                rotate(&mut g, p, q);
            }
        }
        if !rotated {
            return Ok(g.diag().to_vec());
        }
    }
    Err(Error::NoConvergence(format!(
        "Jacobi eigensolver did not reach tolerance in {JACOBI_MAX_SWEEPS} sweeps"
    )))
}

/// One Jacobi rotation annihilating `g[(p, q)]`, applied symmetrically.
fn rotate(g: &mut Array2<f64>, p: usize, q: usize) {
    let apq = g[(p, q)];
    let app = g[(p, p)];
    let aqq = g[(q, q)];
    let tau = (aqq - app) / (2.0 * apq);
    let t = if tau >= 0.0 {
        1.0 / (tau + (1.0 + tau * tau).sqrt())
    } else {
        1.0 / (tau - (1.0 + tau * tau).sqrt())
    };
    let c = 1.0 / (1.0 + t * t).sqrt();
    let s = t * c;
    let n = g.nrows();
    for k in 0..n {
        if k == p || k == q {
            continue;
        }
        let gkp = g[(k, p)];
        let gkq = g[(k, q)];
        g[(k, p)] = c * gkp - s * gkq;
        g[(p, k)] = g[(k, p)];
        g[(k, q)] = s * gkp + c * gkq;
        g[(q, k)] = g[(k, q)];
    }
    g[(p, p)] = app - t * apq;
    g[(q, q)] = aqq + t * apq;
    g[(p, q)] = 0.0;
    g[(q, p)] = 0.0;
}
