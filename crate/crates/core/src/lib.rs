//! Simulation and analysis toolkit for spin-projection-noise limited scalar
//! atomic magnetometers read out by paramagnetic Faraday rotation.
//!
//! The crate covers the whole measurement chain:
//!
//! - [`physics`]: closed-form Faraday rotation, spin-projection noise and
//!   effective atom number for an alkali vapor cell.
//! - [`synthesis`]: synthetic polarimeter records (Ornstein-Uhlenbeck spin
//!   noise on both hyperfine manifolds, photon shot noise, Bell-Bloom carrier,
//!   applied field waveforms) in carrier-resolved or baseband form.
//! - [`bloch`]: a fixed-step Bloch equation integrator used as an independent
//!   check of the small-signal response.
//! - [`dsp`]: digital lock-in, Welch power spectral density, band integration.
//! - [`estimation`]: Lorentzian-plus-floor fits, response calibration, noise
//!   model, sensitivity spectra and bandwidth extraction.
//! - [`config`] and [`pipeline`]: the TOML experiment description and the
//!   end-to-end runs exposed by the `qndmag` command-line tool.
//!
//! Everything internal is SI: meters, seconds, hertz, tesla, radians.

pub mod bloch;
pub mod config;
pub mod dsp;
pub mod error;
pub mod estimation;
pub mod physics;
pub mod pipeline;
pub mod rng;
pub mod series;
pub mod synthesis;

pub use error::{Error, Result};
