//! Lock-in demodulation and spectral estimation.

mod lockin;
mod spectrum;
mod welch;

pub use lockin::{lock_in_demodulate, lock_in_envelope, lowpass_power_gain, LockInOutput};
pub(crate) use spectrum::median as median_of;
pub use spectrum::{integrate_band, Spectrum, SpectrumKind};
pub use welch::{welch_psd, welch_psd_envelope, Window};
