use serde::{Deserialize, Serialize};
use serde_json::json;

use super::fit::LorentzianFitResult;
use super::response::ResponseCurve;
use crate::dsp::{median_of, Spectrum, SpectrumKind};
use crate::error::{ensure, Error, Result};
use crate::series::Unit;

/// Field sensitivity: noise ASD divided by the interpolated responsivity,
/// on the noise grid points that fall inside the calibrated range.
pub fn sensitivity_spectrum(noise: &Spectrum, response: &ResponseCurve) -> Result<Spectrum> {
    let noise = noise.to_amplitude();
    let mut frequencies = Vec::new();
    let mut values = Vec::new();
    for (f, v) in noise.frequencies.iter().zip(&noise.values) {
        if let Some(r) = response.interpolate(*f) {
            if !(r > 0.0) {
                return Err(Error::Numerical(format!("zero responsivity at {f} Hz")));
            }
            frequencies.push(*f);
            values.push(v / r);
        }
    }
    ensure(!frequencies.is_empty(), || "noise and response grids do not overlap".into())?;
    Spectrum::new(frequencies, values, SpectrumKind::Amplitude, Unit::Tesla, noise.resolution_bandwidth, noise.segment_count)
}

/// Sensitivity a white-noise (demolition) measurement would reach with the
/// same response: `flat_asd/R(f)` on `frequencies`.
pub fn demolition_sensitivity(flat_asd: f64, response: &ResponseCurve, frequencies: &[f64]) -> Result<Spectrum> {
    ensure(flat_asd > 0.0, || format!("flat noise level must be positive, got {flat_asd}"))?;
    let values = frequencies
        .iter()
        .map(|f| {
            response
                .interpolate(*f)
                .map(|r| flat_asd / r)
                .ok_or_else(|| Error::invalid(format!("{f} Hz lies outside the calibrated range")))
        })
        .collect::<Result<Vec<f64>>>()?;
    let rbw = if frequencies.len() >= 2 { frequencies[1] - frequencies[0] } else { 0.0 };
    Spectrum::new(frequencies.to_vec(), values, SpectrumKind::Amplitude, Unit::Tesla, rbw, 1)
}

/// Extracted √2 point of a sensitivity curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    Frequency(f64),
    /// The curve never rises by √2 on the available grid.
    BeyondGrid,
}

impl Bandwidth {
    pub fn hz(self) -> Option<f64> {
        match self {
            Bandwidth::Frequency(f) => Some(f),
            Bandwidth::BeyondGrid => None,
        }
    }
}

/// Lower edge of the plateau decade: three resolution bandwidths, or the first
/// positive grid point if that is higher.
fn plateau_start(sp: &Spectrum) -> Result<f64> {
    let first = sp
        .frequencies
        .iter()
        .copied()
        .find(|f| *f > 0.0)
        .ok_or_else(|| Error::invalid("spectrum has no positive frequencies"))?;
    Ok(first.max(3.0 * sp.resolution_bandwidth))
}

/// Median over the lowest usable decade `[f_start, 10·f_start]`.
pub fn plateau(sp: &Spectrum) -> Result<f64> {
    let start = plateau_start(sp)?;
    let mut decade: Vec<f64> = sp
        .frequencies
        .iter()
        .zip(&sp.values)
        .filter(|(f, _)| **f >= start && **f <= 10.0 * start)
        .map(|(_, v)| *v)
        .collect();
    ensure(!decade.is_empty(), || format!("no points in the plateau decade starting at {start} Hz"))?;
    Ok(median_of(&mut decade))
}

/// Moving average over `f·(1 ± rel)`.
fn smooth(sp: &Spectrum, rel: f64) -> Vec<f64> {
    if rel <= 0.0 {
        return sp.values.clone();
    }
    let mut prefix = Vec::with_capacity(sp.len() + 1);
    prefix.push(0.0);
    for v in &sp.values {
        prefix.push(prefix[prefix.len() - 1] + v);
    }
    let f = &sp.frequencies;
    (0..sp.len())
        .map(|i| {
            let lo = f.partition_point(|x| *x < f[i] * (1.0 - rel));
            let hi = f.partition_point(|x| *x <= f[i] * (1.0 + rel));
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

/// First frequency at which the smoothed sensitivity exceeds √2 times the
/// plateau, linearly interpolated between grid points.
pub fn extract_bandwidth(sp: &Spectrum, smoothing: f64) -> Result<Bandwidth> {
    ensure(sp.kind == SpectrumKind::Amplitude, || "bandwidth extraction needs an amplitude spectrum".into())?;
    ensure((0.0..0.5).contains(&smoothing), || format!("smoothing must lie in [0, 0.5), got {smoothing}"))?;
    let level = plateau(sp)?;
    let threshold = std::f64::consts::SQRT_2 * level;
    let smoothed = smooth(sp, smoothing);
    let start = plateau_start(sp)?;
    let first = sp.frequencies.partition_point(|f| *f < start);
    for i in first..sp.len() {
        if smoothed[i] > threshold {
            if i == first {
                return Ok(Bandwidth::Frequency(sp.frequencies[i]));
            }
            let (f0, f1) = (sp.frequencies[i - 1], sp.frequencies[i]);
            let (v0, v1) = (smoothed[i - 1], smoothed[i]);
            return Ok(Bandwidth::Frequency(f0 + (threshold - v0) * (f1 - f0) / (v1 - v0)));
        }
    }
    Ok(Bandwidth::BeyondGrid)
}

/// Outcome of a sensitivity run.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityReport {
    /// QND sensitivity, T/√Hz.
    pub sensitivity_spectrum: Spectrum,
    /// White-noise comparison curve on the same grid, T/√Hz.
    pub demolition_spectrum: Spectrum,
    pub dc_sensitivity: f64,
    pub measured_bandwidth: Bandwidth,
    pub closed_form_bandwidth: f64,
    pub demolition_bandwidth: Bandwidth,
    pub demolition_closed_form_bandwidth: f64,
    /// ηK from the configured parameters.
    pub eta_k: f64,
    /// Fit of the demodulated noise spectrum, centred at zero frequency;
    /// `None` when the spectrum has no resolvable peak.
    pub fit: Option<LorentzianFitResult>,
    pub response: ResponseCurve,
    pub weak_squeezing: bool,
}

impl SensitivityReport {
    /// JSON document with unit-bearing keys.
    pub fn to_json(&self) -> serde_json::Value {
        let enhancement = match (self.measured_bandwidth.hz(), self.demolition_bandwidth.hz()) {
            (Some(q), Some(d)) => Some(q / d),
            _ => None,
        };
        json!({
            "dc_sensitivity_tesla_per_sqrt_hz": self.dc_sensitivity,
            "measured_bandwidth_hz": self.measured_bandwidth.hz(),
            "closed_form_bandwidth_hz": self.closed_form_bandwidth,
            "demolition_bandwidth_hz": self.demolition_bandwidth.hz(),
            "demolition_closed_form_bandwidth_hz": self.demolition_closed_form_bandwidth,
            "bandwidth_enhancement": enhancement,
            "eta_k": self.eta_k,
            "weak_squeezing": self.weak_squeezing,
            "noise_fit": self.fit.as_ref().map(fit_json),
            "response": {
                "frequencies_hz": self.response.frequencies,
                "responsivity_rad_per_tesla": self.response.responsivity,
                "dc_responsivity_rad_per_tesla": self.response.dc_responsivity,
                "t2_s": self.response.t2,
                "hwhm_hz": self.response.hwhm(),
            },
            "sensitivity_spectrum": {
                "resolution_bandwidth_hz": self.sensitivity_spectrum.resolution_bandwidth,
                "segment_count": self.sensitivity_spectrum.segment_count,
                "frequencies_hz": self.sensitivity_spectrum.frequencies,
                "qnd_tesla_per_sqrt_hz": self.sensitivity_spectrum.values,
                "demolition_tesla_per_sqrt_hz": self.demolition_spectrum.values,
            },
        })
    }
}

/// Fit summary with unit-bearing keys; densities in rad²/Hz.
pub fn fit_json(fit: &LorentzianFitResult) -> serde_json::Value {
    json!({
        "peak_power_rad2_per_hz": fit.peak_power,
        "center_hz": fit.center,
        "hwhm_hz": fit.hwhm,
        "floor_rad2_per_hz": fit.floor,
        "peak_to_floor_ratio": fit.peak_to_floor_ratio(),
        "residual_norm_rad2_per_hz": fit.residual_norm,
        "standard_errors": {
            "peak_power_rad2_per_hz": fit.standard_errors()[0],
            "center_hz": fit.standard_errors()[1],
            "hwhm_hz": fit.standard_errors()[2],
            "floor_rad2_per_hz": fit.standard_errors()[3],
        },
        "converged": fit.converged,
        "iterations": fit.iterations,
    })
}
