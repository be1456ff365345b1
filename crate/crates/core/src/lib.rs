//! Calibration and pricing of quanto and composite equity-FX derivatives
//! under local-volatility dynamics with a local (state-dependent) correlation.
//!
//! The crate is organized around the pipeline a desk would run:
//!
//! 1. [`marketdata`] — load discount curves, forward curves, vanilla vol
//!    quotes and broker quanto quotes; Black analytics used everywhere else.
//! 2. [`localvol`] — non-parametric local-vol surfaces, vanilla repricing
//!    through the forward Dupire PDE, and fixed-point calibration.
//! 3. [`quantomark`] — conversion between broker synthetic-quanto-forward
//!    packages and quanto correlations, and the marked q(t) term structure.
//! 4. [`mcengine`] — joint Monte Carlo simulation of asset and FX with
//!    on-line correlation calibration (strategies BS, LV, LC, LV2, LC2 and
//!    the stochastic-volatility variants LV3, LV4).
//! 5. [`slv`] — CIR variance processes and particle-method leverage
//!    calibration for the stochastic-local-volatility extension.
//! 6. [`pricing`] — quanto forwards, option packages, quanto/composite
//!    vanillas and implied-vol spread reports from simulation output.
//!
//! The experimental [`jointcalib`] module (feature `experimental`, on by
//! default) sketches a joint calibration to quanto and composite quotes.

pub mod error;
pub mod math;

pub mod localvol;
pub mod marketdata;
pub mod mcengine;
pub mod pricing;
pub mod quantomark;
pub mod slv;

#[cfg(feature = "experimental")]
pub mod jointcalib;

pub use error::{EngineError, Result};
