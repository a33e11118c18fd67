//! Portfolio strategies: weight rules plus an exposure rule.
//!
//! A strategy decides, for each trading day, the risky-asset weights and
//! the fraction of wealth invested in them (the rest sits in a zero-return
//! liquidity sleeve).  Spectrum-driven strategies keep equal weights and
//! move the exposure; optimizer benchmarks stay fully invested and move the
//! weights.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::market_data::ReturnMatrix;
use crate::optimizers::{min_cvar, min_var_quantile, min_variance, WeightVector};
use crate::spectral::{enhanced_signal, normalized_spectrum, rr_signal, vertex_distance};

/// The supported strategy families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StrategyKind {
    /// Equal weights, always fully exposed.
    OneOverN,
    /// Equal weights; exposure drops to `reduction` when the spectrum sits
    /// closer to total collapse than to one surviving direction.
    Rr,
    /// Equal weights; exposure drops to zero when the mean of the two
    /// smallest normalized singular values falls below `1/(N-1)`.
    RrEnhanced,
    /// Equal weights; same number of reduced days as `Rr` on the same run,
    /// but placed uniformly at random (an activity-matched placebo).
    RandomControl,
    /// Fixed random benchmark weights with the `Rr` exposure rule on top.
    RandomBenchmark,
    /// Minimum-variance weights, fully exposed.
    MinVar,
    /// Minimum empirical-quantile (VaR) weights, fully exposed.
    MinVarQuantile,
    /// Minimum expected-shortfall (CVaR) weights, fully exposed.
    MinCvar,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 8] = [
        StrategyKind::OneOverN,
        StrategyKind::Rr,
        StrategyKind::RrEnhanced,
        StrategyKind::RandomControl,
        StrategyKind::RandomBenchmark,
        StrategyKind::MinVar,
        StrategyKind::MinVarQuantile,
        StrategyKind::MinCvar,
    ];

    /// Stable identifier used in configuration files and on the command
    /// line.
    pub fn name(&self) -> &'static str {
        match self {
            StrategyKind::OneOverN => "one_over_n",
            StrategyKind::Rr => "rr",
            StrategyKind::RrEnhanced => "rr_enhanced",
            StrategyKind::RandomControl => "random_control",
            StrategyKind::RandomBenchmark => "random_benchmark",
            StrategyKind::MinVar => "min_var",
            StrategyKind::MinVarQuantile => "min_var_quantile",
            StrategyKind::MinCvar => "min_cvar",
        }
    }

    /// Short label used as a table column header.
    pub fn display_name(&self) -> &'static str {
        match self {
            StrategyKind::OneOverN => "1/N",
            StrategyKind::Rr => "RR",
            StrategyKind::RrEnhanced => "enhanced-RR",
            StrategyKind::RandomControl => "random",
            StrategyKind::RandomBenchmark => "rand bench",
            StrategyKind::MinVar => "Min-var",
            StrategyKind::MinVarQuantile => "Min-VaR",
            StrategyKind::MinCvar => "Min-CVaR",
        }
    }

    /// True for the strategies that read the normalized spectrum.
    pub fn uses_spectrum(&self) -> bool {
        matches!(
            self,
            StrategyKind::Rr | StrategyKind::RrEnhanced | StrategyKind::RandomBenchmark
        )
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let valid: Vec<&str> = Self::ALL.iter().map(|k| k.name()).collect();
                Error::InvalidArgument(format!(
                    "unknown strategy `{s}` (expected one of: {})",
                    valid.join(", ")
                ))
            })
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl serde::Serialize for StrategyKind {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> serde::Deserialize<'de> for StrategyKind {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A fully parameterized strategy.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategySpec {
    pub kind: StrategyKind,
    /// Exposure multiplier applied on reduction days by `rr`,
    /// `random_control` and `random_benchmark`.
    pub reduction: f64,
    /// Tail level handed to the VaR/CVaR optimizers.
    pub optimizer_alpha: f64,
    /// Benchmark weights; present exactly when `kind` is
    /// `random_benchmark`.
    pub benchmark_weights: Option<WeightVector>,
}

impl StrategySpec {
    /// A spec with the default knobs: 50% reduction, 1% optimizer tail.
    pub fn new(kind: StrategyKind) -> Self {
        Self {
            kind,
            reduction: 0.5,
            optimizer_alpha: 0.01,
            benchmark_weights: None,
        }
    }

    pub fn with_reduction(mut self, reduction: f64) -> Self {
        self.reduction = reduction;
        self
    }

    pub fn with_optimizer_alpha(mut self, alpha: f64) -> Self {
        self.optimizer_alpha = alpha;
        self
    }

    pub fn with_benchmark_weights(mut self, weights: WeightVector) -> Self {
        self.benchmark_weights = Some(weights);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.reduction >= 0.0 && self.reduction <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "reduction must be in [0, 1], got {}",
                self.reduction
            )));
        }
        if !(self.optimizer_alpha > 0.0 && self.optimizer_alpha <= 0.5) {
            return Err(Error::InvalidArgument(format!(
                "optimizer alpha must be in (0, 0.5], got {}",
                self.optimizer_alpha
            )));
        }
        match (self.kind, &self.benchmark_weights) {
            (StrategyKind::RandomBenchmark, None) => Err(Error::InvalidArgument(
                "random_benchmark needs benchmark weights".into(),
            )),
            (StrategyKind::RandomBenchmark, Some(_)) => Ok(()),
            (_, Some(_)) => Err(Error::InvalidArgument(format!(
                "benchmark weights are only meaningful for random_benchmark, not {}",
                self.kind
            ))),
            _ => Ok(()),
        }
    }
}

/// A day's portfolio: weights over the risky universe plus the fraction of
/// wealth exposed to it.  `1 - exposure` sits in the liquidity sleeve.
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    pub weights: WeightVector,
    pub exposure: f64,
}

/// Vertex distances behind a spectrum-driven exposure decision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignalDiagnostics {
    /// Distance to the total-collapse vertex (all zeros).
    pub d_v0: f64,
    /// Distance to the one-surviving-direction vertex (single trailing one).
    pub d_v1: f64,
    /// Whether the strategy reduced exposure on this day.
    pub reduced: bool,
}

/// Computes the day's allocation from the trailing return window.
///
/// All strategies here are deterministic functions of the window;
/// `random_control` has no per-window rule (its exposure path is drawn once
/// per run by the backtest engine) and is rejected.
pub fn allocate(spec: &StrategySpec, window: &ReturnMatrix) -> Result<Allocation> {
    allocate_with_diagnostics(spec, window).map(|(alloc, _)| alloc)
}

/// Like [`allocate`], also returning the vertex distances for
/// spectrum-driven strategies.
pub fn allocate_with_diagnostics(
    spec: &StrategySpec,
    window: &ReturnMatrix,
) -> Result<(Allocation, Option<SignalDiagnostics>)> {
    spec.validate()?;
    let n = window.num_cols();
    let full = WeightVector::equal(n)?;
    match spec.kind {
        StrategyKind::OneOverN => Ok((Allocation { weights: full, exposure: 1.0 }, None)),
        StrategyKind::Rr | StrategyKind::RrEnhanced | StrategyKind::RandomBenchmark => {
            let spectrum = normalized_spectrum(window)?;
            let d_v0 = vertex_distance(&spectrum, 0)?;
            let d_v1 = vertex_distance(&spectrum, 1)?;
            let (reduced, scale) = match spec.kind {
                StrategyKind::RrEnhanced => (enhanced_signal(&spectrum)?, 0.0),
                _ => (rr_signal(&spectrum), spec.reduction),
            };
            let weights = match spec.kind {
                StrategyKind::RandomBenchmark => spec
                    .benchmark_weights
                    .clone()
                    .expect("validated above"),
                _ => full,
            };
            if weights.len() != n {
                return Err(Error::InvalidArgument(format!(
                    "benchmark weights cover {} assets but the window has {}",
                    weights.len(),
                    n
                )));
            }
            let exposure = if reduced { scale } else { 1.0 };
            Ok((
                Allocation { weights, exposure },
                Some(SignalDiagnostics { d_v0, d_v1, reduced }),
            ))
        }
        StrategyKind::RandomControl => Err(Error::InvalidArgument(
            "random_control has no per-window rule; its exposure path is sampled per run".into(),
        )),
        StrategyKind::MinVar => Ok((
            Allocation { weights: min_variance(window)?.weights, exposure: 1.0 },
            None,
        )),
        StrategyKind::MinVarQuantile => Ok((
            Allocation {
                weights: min_var_quantile(window, spec.optimizer_alpha)?.weights,
                exposure: 1.0,
            },
            None,
        )),
        StrategyKind::MinCvar => Ok((
            Allocation {
                weights: min_cvar(window, spec.optimizer_alpha)?.weights,
                exposure: 1.0,
            },
            None,
        )),
    }
}

/// A full-horizon exposure path with exactly `num_reduced` days at
/// `reduction` and the rest at 1, the reduced days drawn uniformly without
/// replacement.
pub fn random_exposure_path<R: Rng + ?Sized>(
    num_days: usize,
    num_reduced: usize,
    reduction: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if num_reduced > num_days {
        return Err(Error::InvalidArgument(format!(
            "cannot reduce {num_reduced} of {num_days} days"
        )));
    }
    if !(reduction >= 0.0 && reduction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "reduction must be in [0, 1], got {reduction}"
        )));
    }
    let mut path = vec![1.0; num_days];
    if num_days > 0 {
        for i in rand::seq::index::sample(rng, num_days, num_reduced) {
            path[i] = reduction;
        }
    }
    Ok(path)
}

/// A uniform draw from the probability simplex via normalized exponential
/// spacings.
pub fn sample_simplex<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<WeightVector> {
    if n == 0 {
        return Err(Error::InvalidArgument("cannot sample an empty simplex".into()));
    }
    let mut draws = vec![0.0; n];
    let mut sum = 0.0;
    for d in draws.iter_mut() {
        let mut u: f64 = rng.random();
        while u == 0.0 {
            u = rng.random();
        }
        *d = -u.ln();
        sum += *d;
    }
    WeightVector::new(draws.into_iter().map(|d| d / sum).collect())
}
