//! Peak fitting, response calibration, noise model, sensitivity and bandwidth.

mod fit;
mod noise;
mod response;
mod sensitivity;

pub use fit::{fit_lorentzian_floor, fit_lorentzian_floor_with, FitOptions, LorentzianFitResult, LorentzianParams};
pub use noise::{
    analytic_sensitivity_ratio, demolition_bandwidth, noise_model_asd, qnd_bandwidth, spin_noise_parameter,
    weak_squeezing,
};
pub(crate) use response::demodulate;
pub use response::{measure_response, measure_response_with, response_model, Calibration, ResponseCurve, MAX_PHASE_INDEX};
pub use sensitivity::{
    demolition_sensitivity, extract_bandwidth, fit_json, plateau, sensitivity_spectrum, Bandwidth, SensitivityReport,
};
