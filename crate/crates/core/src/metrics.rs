//! Performance and tail-risk statistics of a net-return series.
//!
//! All eight numbers are daily quantities — nothing is annualized.  VaR and
//! CVaR are reported as positive loss magnitudes; kurtosis is raw, not
//! excess.

use crate::error::{Error, Result};
use crate::optimizers::tail_index;

/// The eight summary statistics of a daily net-return series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsSummary {
    /// Mean daily return.
    pub a_r: f64,
    /// Sample standard deviation (unbiased, `T - 1`).
    pub st_dev: f64,
    /// Sharpe ratio `a_r / st_dev`, zero risk-free rate, daily units.
    pub sr: f64,
    /// Value-at-risk at the tail level: the `ceil(alpha T)`-th worst return,
    /// sign-flipped so losses are positive.
    pub var: f64,
    /// Expected shortfall: mean of the `ceil(alpha T)` worst returns,
    /// sign-flipped.
    pub cvar: f64,
    /// Maximum drawdown of the compounded wealth path, in `[0, 1]` while
    /// wealth stays positive.
    pub mdd: f64,
    /// Skewness `m3 / m2^(3/2)` with population-normalized central moments.
    pub sk: f64,
    /// Raw kurtosis `m4 / m2^2` (a normal series gives ~3).
    pub k: f64,
}

impl MetricsSummary {
    /// Column names in reporting order.
    pub const NAMES: [&'static str; 8] =
        ["a_r", "st_dev", "sr", "var", "cvar", "mdd", "sk", "k"];

    /// Values in the same order as [`MetricsSummary::NAMES`].
    pub fn values(&self) -> [f64; 8] {
        [self.a_r, self.st_dev, self.sr, self.var, self.cvar, self.mdd, self.sk, self.k]
    }

    /// Rebuilds a summary from values in [`MetricsSummary::NAMES`] order.
    pub fn from_values(v: [f64; 8]) -> Self {
        Self {
            a_r: v[0],
            st_dev: v[1],
            sr: v[2],
            var: v[3],
            cvar: v[4],
            mdd: v[5],
            sk: v[6],
            k: v[7],
        }
    }

    /// Human-readable row labels for tables, e.g. `VaR 1%` when
    /// `alpha = 0.01`.
    pub fn labels(alpha: f64) -> [String; 8] {
        let pct = format_percent(alpha);
        [
            "a.r.".into(),
            "st.dev.".into(),
            "SR".into(),
            format!("VaR {pct}"),
            format!("CVaR {pct}"),
            "MDD".into(),
            "Sk".into(),
            "K".into(),
        ]
    }
}

fn format_percent(alpha: f64) -> String {
    let pct = alpha * 100.0;
    if (pct - pct.round()).abs() < 1e-9 {
        format!("{}%", pct.round() as i64)
    } else {
        format!("{pct}%")
    }
}

/// Computes all eight statistics of `returns` with tail level `alpha`.
///
/// Requires at least four observations (kurtosis) and `0 < alpha <= 1`.
/// A zero-variance series has no Sharpe ratio and is rejected.  Returns
/// at or below −1 wipe out compounded wealth; the drawdown figure is then
/// no longer guaranteed to stay within `[0, 1]`.
pub fn summarize(returns: &[f64], alpha: f64) -> Result<MetricsSummary> {
    let t = returns.len();
    if t < 4 {
        return Err(Error::InvalidArgument(format!(
            "need at least 4 observations for kurtosis, got {t}"
        )));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "tail level alpha must be in (0, 1], got {alpha}"
        )));
    }
    if let Some(v) = returns.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("non-finite return {v}")));
    }
    // A constant series has zero variance even when rounding leaves the
    // computed moment a few ulps above it.
    if returns.iter().all(|r| *r == returns[0]) {
        return Err(Error::Degenerate(
            "zero-variance series has an undefined Sharpe ratio".into(),
        ));
    }
    let tf = t as f64;
    let a_r = returns.iter().sum::<f64>() / tf;
    let mut m2 = 0.0;
    let mut m3 = 0.0;
    let mut m4 = 0.0;
    for r in returns {
        let d = r - a_r;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    let var_unbiased = m2 / (tf - 1.0);
    m2 /= tf;
    m3 /= tf;
    m4 /= tf;
    if m2 == 0.0 {
        return Err(Error::Degenerate(
            "zero-variance series has an undefined Sharpe ratio".into(),
        ));
    }
    let st_dev = var_unbiased.sqrt();

    let k_tail = tail_index(alpha, t);
    let mut sorted = returns.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite returns"));
    let var = -sorted[k_tail - 1];
    let cvar = -sorted[..k_tail].iter().sum::<f64>() / k_tail as f64;

    Ok(MetricsSummary {
        a_r,
        st_dev,
        sr: a_r / st_dev,
        var,
        cvar,
        mdd: max_drawdown(returns),
        sk: m3 / m2.powf(1.5),
        k: m4 / (m2 * m2),
    })
}

/// Maximum drawdown of the wealth path compounded from 1: the largest
/// peak-to-trough fraction `1 - wealth_t / max_{s<=t} wealth_s`, computed in
/// a single pass with a running peak.
///
/// All returns must stay above −1 for the result to be a fraction in
/// `[0, 1]`; an empty series has no drawdown.
pub fn max_drawdown(returns: &[f64]) -> f64 {
    let mut wealth = 1.0;
    let mut peak = 1.0;
    let mut mdd = 0.0f64;
    for r in returns {
        wealth *= 1.0 + r;
        if wealth > peak {
            peak = wealth;
        }
        mdd = mdd.max(1.0 - wealth / peak);
    }
    mdd
}
