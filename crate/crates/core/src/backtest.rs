//! Rolling-window backtest engine with drift-aware transaction costs.
//!
//! Each out-of-sample day the strategy sees the trailing window, picks an
//! allocation, realizes that day's returns, and pays proportional costs on
//! the turnover needed to move from yesterday's *drifted* holdings to the
//! new targets.  Wealth compounds from 1.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::market_data::{window, ReturnMatrix, ReturnPanel};
use crate::optimizers::WeightVector;
use crate::strategies::{
    allocate_with_diagnostics, random_exposure_path, Allocation, SignalDiagnostics,
    StrategyKind, StrategySpec,
};

/// How measured turnover converts into a charge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostConvention {
    /// Charge the full one-way L1 distance (buys plus sells).
    L1,
    /// Charge half the L1 distance (round-trip convention).
    HalfL1,
}

impl CostConvention {
    pub fn name(&self) -> &'static str {
        match self {
            CostConvention::L1 => "l1",
            CostConvention::HalfL1 => "half_l1",
        }
    }
}

impl FromStr for CostConvention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l1" => Ok(CostConvention::L1),
            "half_l1" => Ok(CostConvention::HalfL1),
            other => Err(Error::InvalidArgument(format!(
                "unknown cost convention `{other}` (expected l1 or half_l1)"
            ))),
        }
    }
}

impl fmt::Display for CostConvention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl serde::Serialize for CostConvention {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> serde::Deserialize<'de> for CostConvention {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Proportional transaction-cost model.
#[derive(Debug, Clone, PartialEq)]
pub struct CostModel {
    /// Cost per unit of counted turnover (0.001 = 10 basis points).
    pub rate: f64,
    pub convention: CostConvention,
    /// Whether moves in the liquidity sleeve count as turnover.
    pub charge_liquidity: bool,
}

impl Default for CostModel {
    fn default() -> Self {
        Self { rate: 0.001, convention: CostConvention::L1, charge_liquidity: true }
    }
}

impl CostModel {
    pub fn with_rate(rate: f64) -> Self {
        Self { rate, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rate.is_finite() && self.rate >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "cost rate must be a non-negative finite number, got {}",
                self.rate
            )));
        }
        Ok(())
    }

    /// The charge for rebalancing from drifted `prev` holdings to `next`.
    pub fn charge(&self, prev: &Allocation, realized: &[f64], next: &Allocation) -> f64 {
        let (risky, liquidity) = turnover_components(prev, realized, next);
        let counted = risky + if self.charge_liquidity { liquidity } else { 0.0 };
        match self.convention {
            CostConvention::L1 => self.rate * counted,
            CostConvention::HalfL1 => self.rate * counted / 2.0,
        }
    }
}

/// One out-of-sample day.
#[derive(Debug, Clone, PartialEq)]
pub struct BacktestRecord {
    /// Panel row index of the realized day.
    pub day: usize,
    /// Exposure-weighted portfolio return before costs.
    pub gross_return: f64,
    /// Transaction cost paid this day.
    pub cost: f64,
    /// `gross_return - cost`.
    pub net_return: f64,
    pub exposure: f64,
    pub weights: WeightVector,
    /// Vertex distances, present for spectrum-driven strategies.
    pub diagnostics: Option<SignalDiagnostics>,
}

/// A completed (possibly wiped-out) backtest run.
#[derive(Debug, Clone, PartialEq)]
pub struct BacktestResult {
    pub records: Vec<BacktestRecord>,
    /// Compounded wealth; `wealth[0] = 1` and `wealth[i + 1]` follows
    /// `records[i]`.
    pub wealth: Vec<f64>,
    pub strategy: StrategySpec,
    pub universe: Vec<usize>,
    pub window_len: usize,
    /// True when some net return reached −1 and the run stopped early.
    pub wipeout: bool,
    /// Days with exposure strictly below 1.
    pub reduced_days: usize,
}

impl BacktestResult {
    /// The per-day net returns, in day order.
    pub fn net_returns(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.net_return).collect()
    }

    pub fn final_wealth(&self) -> f64 {
        *self.wealth.last().expect("wealth starts at 1")
    }
}

/// Drift-adjusted turnover split into its risky and liquidity parts.
///
/// Yesterday's holdings grow with the realized returns (liquidity earns
/// zero); both parts are renormalized into fractions of current wealth and
/// compared with the next targets.  Lengths must match, and the previous
/// day must not have wiped wealth out (gross growth must stay positive).
pub fn turnover_components(
    prev: &Allocation,
    realized: &[f64],
    next: &Allocation,
) -> (f64, f64) {
    let n = prev.weights.len();
    assert_eq!(n, realized.len(), "realized returns must match the universe");
    assert_eq!(n, next.weights.len(), "allocations must cover the same universe");
    let gross: f64 = prev
        .weights
        .as_slice()
        .iter()
        .zip(realized)
        .map(|(w, r)| w * r)
        .sum();
    let growth = 1.0 + prev.exposure * gross;
    assert!(growth > 0.0, "drifted holdings are undefined after a wipeout");
    let mut risky = 0.0;
    for ((w_prev, r), w_next) in prev
        .weights
        .as_slice()
        .iter()
        .zip(realized)
        .zip(next.weights.as_slice())
    {
        let drifted = prev.exposure * w_prev * (1.0 + r) / growth;
        risky += (next.exposure * w_next - drifted).abs();
    }
    let liquidity_drifted = (1.0 - prev.exposure) / growth;
    let liquidity = ((1.0 - next.exposure) - liquidity_drifted).abs();
    (risky, liquidity)
}

/// Full one-way L1 turnover including the liquidity sleeve.
pub fn turnover(prev: &Allocation, realized: &[f64], next: &Allocation) -> f64 {
    let (risky, liquidity) = turnover_components(prev, realized, next);
    risky + liquidity
}

/// Runs one strategy over every out-of-sample day of the panel.
///
/// Day `t` (for `t` in `window_len..num_days`) allocates from the window
/// ending at `t - 1` and realizes the row-`t` returns.  The first trading
/// day is charged for the initial purchase out of all-liquidity.  A net
/// return at or below −1 stops the run with the `wipeout` flag set.
///
/// `random_control` is constructed in two passes: the exposure-signal
/// strategy runs first on the same data, then its reduced-day count is
/// scattered uniformly over the horizon using `rng`.  All other strategies
/// never touch `rng`.
pub fn run_backtest<R: Rng + ?Sized>(
    panel: &ReturnPanel,
    universe: &[usize],
    spec: &StrategySpec,
    window_len: usize,
    cost: &CostModel,
    rng: &mut R,
) -> Result<BacktestResult> {
    spec.validate()?;
    cost.validate()?;
    validate_universe(panel, universe)?;
    if panel.num_days() <= window_len {
        return Err(Error::InvalidArgument(format!(
            "panel has {} days; need more than the window length {window_len}",
            panel.num_days()
        )));
    }
    match spec.kind {
        StrategyKind::RandomControl => {
            let signal_spec = StrategySpec {
                kind: StrategyKind::Rr,
                benchmark_weights: None,
                ..spec.clone()
            };
            let signal_run = run_backtest(panel, universe, &signal_spec, window_len, cost, rng)?;
            let horizon = panel.num_days() - window_len;
            let path =
                random_exposure_path(horizon, signal_run.reduced_days, spec.reduction, rng)?;
            let weights = WeightVector::equal(universe.len())?;
            let mut result = run_with(panel, universe, window_len, cost, |day, _| {
                Ok((Allocation { weights: weights.clone(), exposure: path[day] }, None))
            })?;
            result.strategy = spec.clone();
            Ok(result)
        }
        _ => {
            let mut result = run_with(panel, universe, window_len, cost, |_, win| {
                allocate_with_diagnostics(spec, win)
            })?;
            result.strategy = spec.clone();
            Ok(result)
        }
    }
}

/// Core day loop shared by every strategy; `alloc_fn` maps (day offset,
/// trailing window) to an allocation.
fn run_with(
    panel: &ReturnPanel,
    universe: &[usize],
    window_len: usize,
    cost: &CostModel,
    mut alloc_fn: impl FnMut(usize, &ReturnMatrix) -> Result<(Allocation, Option<SignalDiagnostics>)>,
) -> Result<BacktestResult> {
    let n = universe.len();
    let horizon = panel.num_days() - window_len;
    let mut records = Vec::with_capacity(horizon);
    let mut wealth = Vec::with_capacity(horizon + 1);
    wealth.push(1.0);
    // Before the first trade everything sits in the liquidity sleeve.
    let mut prev = Allocation { weights: WeightVector::equal(n)?, exposure: 0.0 };
    let mut prev_realized = vec![0.0; n];
    let mut wipeout = false;
    let mut reduced_days = 0;
    for (day, t) in (window_len..panel.num_days()).enumerate() {
        let win = window(panel, universe, t, window_len)?;
        let (alloc, diagnostics) = alloc_fn(day, &win)?;
        if alloc.weights.len() != n {
            return Err(Error::InvalidArgument(format!(
                "allocation covers {} assets but the universe has {n}",
                alloc.weights.len()
            )));
        }
        if !(alloc.exposure >= 0.0 && alloc.exposure <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "exposure must be in [0, 1], got {}",
                alloc.exposure
            )));
        }
        let realized = panel.universe_returns(t, universe);
        let day_cost = cost.charge(&prev, &prev_realized, &alloc);
        let gross_return: f64 = alloc.exposure
            * alloc
                .weights
                .as_slice()
                .iter()
                .zip(&realized)
                .map(|(w, r)| w * r)
                .sum::<f64>();
        let net_return = gross_return - day_cost;
        if alloc.exposure < 1.0 {
            reduced_days += 1;
        }
        records.push(BacktestRecord {
            day: t,
            gross_return,
            cost: day_cost,
            net_return,
            exposure: alloc.exposure,
            weights: alloc.weights.clone(),
            diagnostics,
        });
        let next_wealth = wealth.last().expect("non-empty") * (1.0 + net_return);
        wealth.push(next_wealth);
        if net_return <= -1.0 {
            wipeout = true;
            break;
        }
        prev = alloc;
        prev_realized = realized;
    }
    Ok(BacktestResult {
        records,
        wealth,
        strategy: StrategySpec::new(StrategyKind::OneOverN),
        universe: universe.to_vec(),
        window_len,
        wipeout,
        reduced_days,
    })
}

fn validate_universe(panel: &ReturnPanel, universe: &[usize]) -> Result<()> {
    if universe.is_empty() {
        return Err(Error::InvalidArgument("universe must not be empty".into()));
    }
    for &a in universe {
        if a >= panel.num_assets() {
            return Err(Error::InvalidArgument(format!(
                "universe index {a} out of range for {} assets",
                panel.num_assets()
            )));
        }
    }
    let mut seen = universe.to_vec();
    seen.sort_unstable();
    if seen.windows(2).any(|p| p[0] == p[1]) {
        return Err(Error::InvalidArgument("universe indices must be distinct".into()));
    }
    Ok(())
}

/// Per-day CSV of a run: `day,date,gross,cost,net,exposure,wealth`, plus
/// `d_v0,d_v1` columns when the strategy reports vertex distances.
pub fn day_series_csv(panel: &ReturnPanel, result: &BacktestResult) -> String {
    let with_distances = result.records.iter().any(|r| r.diagnostics.is_some());
    let mut out = String::from("day,date,gross,cost,net,exposure,wealth");
    if with_distances {
        out.push_str(",d_v0,d_v1");
    }
    out.push('\n');
    for (i, rec) in result.records.iter().enumerate() {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}",
            rec.day,
            panel.dates()[rec.day],
            rec.gross_return,
            rec.cost,
            rec.net_return,
            rec.exposure,
            result.wealth[i + 1],
        ));
        if with_distances {
            match rec.diagnostics {
                Some(d) => out.push_str(&format!(",{},{}", d.d_v0, d.d_v1)),
                None => out.push_str(",,"),
            }
        }
        out.push('\n');
    }
    out
}
