//! Synthetic two-regime return panels for controlled experiments.
//!
//! Calm stretches draw independent Gaussian returns per asset; crash blocks
//! collapse the cross-section onto a single negative-drift common factor
//! with only a sliver of idiosyncratic noise, so rolling windows inside a
//! crash approach rank one.  The generator is seed-deterministic.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::market_data::ReturnPanel;
use ndarray::Array2;

/// Layout and distribution parameters of the two-regime panel.
#[derive(Debug, Clone, PartialEq)]
pub struct RegimePanelConfig {
    pub num_assets: usize,
    /// Calm days per cycle.
    pub calm_days: usize,
    /// Crash days per cycle.
    pub crash_days: usize,
    /// Number of calm-then-crash cycles.
    pub cycles: usize,
    /// Daily volatility of independent calm returns.
    pub calm_vol: f64,
    /// Daily volatility of the single crash factor.
    pub crash_factor_vol: f64,
    /// Mean daily return of the crash factor (negative in a crash).
    pub crash_drift: f64,
    /// Daily volatility of the idiosyncratic noise layered on the factor.
    pub idio_vol: f64,
}

impl Default for RegimePanelConfig {
    /// Ten assets, five cycles of 240 calm + 60 crash days (1 500 days),
    /// 1% calm vol, 3% crash-factor vol with −0.3%/day drift, 0.1%
    /// idiosyncratic noise.
    fn default() -> Self {
        Self {
            num_assets: 10,
            calm_days: 240,
            crash_days: 60,
            cycles: 5,
            calm_vol: 0.01,
            crash_factor_vol: 0.03,
            crash_drift: -0.003,
            idio_vol: 0.001,
        }
    }
}

impl RegimePanelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_assets == 0 {
            return Err(Error::InvalidArgument("need at least one asset".into()));
        }
        if self.cycles == 0 || self.calm_days + self.crash_days == 0 {
            return Err(Error::InvalidArgument("panel would have no days".into()));
        }
        for (name, v) in [
            ("calm_vol", self.calm_vol),
            ("crash_factor_vol", self.crash_factor_vol),
            ("idio_vol", self.idio_vol),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be a non-negative finite number, got {v}"
                )));
            }
        }
        if !self.crash_drift.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "crash_drift must be finite, got {}",
                self.crash_drift
            )));
        }
        Ok(())
    }

    pub fn total_days(&self) -> usize {
        self.cycles * (self.calm_days + self.crash_days)
    }

    /// Half-open `[start, end)` day ranges of the crash blocks.
    pub fn crash_blocks(&self) -> Vec<(usize, usize)> {
        let cycle = self.calm_days + self.crash_days;
        (0..self.cycles)
            .map(|c| {
                let start = c * cycle + self.calm_days;
                (start, start + self.crash_days)
            })
            .collect()
    }

    /// True when the whole half-open day range sits inside one crash block.
    pub fn is_crash_range(&self, start: usize, end: usize) -> bool {
        self.crash_blocks().iter().any(|&(s, e)| s <= start && end <= e)
    }

    /// True when the whole half-open day range sits inside one calm block.
    pub fn is_calm_range(&self, start: usize, end: usize) -> bool {
        let cycle = self.calm_days + self.crash_days;
        if end <= start {
            return false;
        }
        // Calm blocks are the [c*cycle, c*cycle + calm_days) stretches.
        let c = start / cycle;
        let calm_start = c * cycle;
        start >= calm_start && end <= calm_start + self.calm_days
    }
}

/// Generates the panel described by `config` using draws from `rng`.
///
/// Day `t` is calm or crash by layout alone; all randomness sits in the
/// return values, so two equal seeds give byte-identical panels.
pub fn two_regime_panel<R: Rng + ?Sized>(
    config: &RegimePanelConfig,
    rng: &mut R,
) -> Result<ReturnPanel> {
    config.validate()?;
    let n = config.num_assets;
    let t_total = config.total_days();
    let mut values = Array2::zeros((t_total, n));
    for t in 0..t_total {
        if config.is_crash_range(t, t + 1) {
            let z: f64 = rng.sample(StandardNormal);
            let factor = config.crash_drift + config.crash_factor_vol * z;
            for j in 0..n {
                let e: f64 = rng.sample(StandardNormal);
                values[(t, j)] = factor + config.idio_vol * e;
            }
        } else {
            for j in 0..n {
                let z: f64 = rng.sample(StandardNormal);
                values[(t, j)] = config.calm_vol * z;
            }
        }
    }
    let dates = (0..t_total).map(|t| format!("d{t:05}")).collect();
    let tickers = (0..n).map(|j| format!("A{j:03}")).collect();
    ReturnPanel::new(dates, tickers, values)
}
