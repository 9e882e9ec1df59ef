use std::f64::consts::PI;

use crate::error::{ensure, Result};
use crate::physics::{optical_density_on_resonance, AtomSpecies, CellConfig, MagnetometerConfig, ProbeConfig};

/// `K = N_ab·Γ_pr·T2·β`, the strength of the correlated spin-noise term.
pub fn spin_noise_parameter(probe: &ProbeConfig, species: &AtomSpecies, cell: &CellConfig, mag: &MagnetometerConfig) -> f64 {
    optical_density_on_resonance(species, cell) * probe.pumping_rate * mag.t2 * mag.beta
}

/// One-sided rotation noise ASD near the Larmor frequency under continuous
/// non-demolition probing, rad/√Hz.
pub fn noise_model_asd(
    f: f64,
    probe: &ProbeConfig,
    species: &AtomSpecies,
    cell: &CellConfig,
    mag: &MagnetometerConfig,
    f0: f64,
) -> f64 {
    let k = spin_noise_parameter(probe, species, cell, mag);
    let x = 2.0 * PI * (f - f0) * mag.t2;
    (1.0 / (2.0 * probe.photon_flux)).sqrt() * (1.0 / probe.quantum_efficiency + k / (1.0 + x * x)).sqrt()
}

/// Frequency at which the sensitivity has degraded by √2, `sqrt(ηK + 1)/(2πT2)`.
pub fn qnd_bandwidth(eta: f64, n_ab: f64, gamma_pr: f64, t2: f64, beta: f64) -> Result<f64> {
    ensure(eta > 0.0 && eta <= 1.0, || format!("quantum efficiency must lie in (0, 1], got {eta}"))?;
    ensure(n_ab >= 0.0 && gamma_pr >= 0.0 && beta > 0.0, || "N_ab, Γ_pr must be non-negative and β positive".into())?;
    ensure(t2 > 0.0, || format!("T2 must be positive, got {t2}"))?;
    Ok((eta * n_ab * gamma_pr * t2 * beta + 1.0).sqrt() / (2.0 * PI * t2))
}

/// Bandwidth with white measurement noise, `1/(2πT2)`.
pub fn demolition_bandwidth(t2: f64) -> f64 {
    1.0 / (2.0 * PI * t2)
}

/// `sensitivity(f)/sensitivity(0)` for the analytic noise and response models.
pub fn analytic_sensitivity_ratio(f: f64, eta: f64, k: f64, t2: f64) -> f64 {
    let x = 2.0 * PI * f * t2;
    ((1.0 + x * x) / eta + k).sqrt() / (1.0 / eta + k).sqrt()
}

/// Weak-squeezing regime indicator: spin-noise peak above the shot floor at f0.
pub fn weak_squeezing(peak_power: f64, floor: f64) -> bool {
    peak_power > floor
}
