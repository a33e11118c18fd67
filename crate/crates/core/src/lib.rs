//! Spectral risk detection for asset universes.
//!
//! The library watches the normalized singular-value spectrum of a rolling
//! window of daily returns.  When the smaller singular values collapse
//! toward zero the cross-section has lost independent directions of
//! variation — assets have started moving together — and exposure should be
//! cut.  Everything needed to act on that idea ships here:
//!
//! * [`market_data`] — return panels, CSV loading, rolling windows;
//! * [`spectral`] — singular values, normalized spectra, vertex
//!   classification and the exposure signals;
//! * [`optimizers`] — simplex-constrained minimum variance / VaR / CVaR
//!   benchmark portfolios;
//! * [`strategies`] — weight-and-exposure rules built from the above;
//! * [`backtest`] — daily rebalancing with drift-aware transaction costs;
//! * [`metrics`] — performance and tail-risk summary statistics;
//! * [`experiment`] — seeded, parallel strategy-comparison grids;
//! * [`synthetic`] — two-regime panel generator for controlled tests.

pub mod backtest;
pub mod error;
pub mod experiment;
pub mod market_data;
pub mod metrics;
pub mod optimizers;
pub mod spectral;
pub mod strategies;
pub mod synthetic;

pub use error::{Error, Result};
