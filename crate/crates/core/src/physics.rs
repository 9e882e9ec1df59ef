//! Closed-form physics of paramagnetic Faraday rotation by an alkali vapor.
//!
//! The probe rotation is written as `phi = C_a <F_x^a> - C_b <F_x^b>`, with one
//! coefficient per ground hyperfine manifold. For unpolarized, uncorrelated
//! atoms the per-manifold spin fluctuations scale as `N^-1/2`, where `N` is the
//! number of atoms weighted by the probe intensity profile. The two manifolds
//! precess in opposite senses, so their noise contributions add in quadrature.
//!
//! Optical frequencies are offsets (Hz) from a per-species reference line so
//! that detunings of a few GHz keep full precision next to ~380 THz.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

/// Speed of light, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
/// Classical electron radius, m (2.82e-13 cm).
pub const ELECTRON_RADIUS: f64 = 2.82e-15;

/// Isotope constants needed for D1-line Faraday rotation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomSpecies {
    pub name: String,
    /// Nuclear spin I (half-integer or integer, > 0).
    pub nuclear_spin: f64,
    pub oscillator_strength: f64,
    /// Optical resonance of the F = I + 1/2 manifold, Hz offset from the reference.
    pub line_a_offset: f64,
    /// Optical resonance of the F = I - 1/2 manifold, Hz offset from the reference.
    pub line_b_offset: f64,
    /// Hz per tesla.
    pub gyromagnetic_ratio: f64,
}

impl AtomSpecies {
    pub fn new(
        name: impl Into<String>,
        nuclear_spin: f64,
        oscillator_strength: f64,
        line_a_offset: f64,
        line_b_offset: f64,
        gyromagnetic_ratio: f64,
    ) -> Result<Self> {
        let species = Self {
            name: name.into(),
            nuclear_spin,
            oscillator_strength,
            line_a_offset,
            line_b_offset,
            gyromagnetic_ratio,
        };
        species.validate()?;
        Ok(species)
    }

    /// Rubidium-87, D1 line. Lines referenced to the F=2 component; the F=1
    /// component sits one ground-state hyperfine splitting higher.
    pub fn rb87() -> Self {
        Self {
            name: "Rb87".into(),
            nuclear_spin: 1.5,
            oscillator_strength: 0.34,
            line_a_offset: 0.0,
            line_b_offset: 6.834_682_611e9,
            gyromagnetic_ratio: 6.9958e9,
        }
    }

    /// Rubidium-85, D1 line (F=3 / F=2 ground manifolds).
    pub fn rb85() -> Self {
        Self {
            name: "Rb85".into(),
            nuclear_spin: 2.5,
            oscillator_strength: 0.34,
            line_a_offset: 0.0,
            line_b_offset: 3.035_732_439e9,
            gyromagnetic_ratio: 4.6679e9,
        }
    }

    /// Built-in species by (case-insensitive) name.
    pub fn preset(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "rb87" | "87rb" => Some(Self::rb87()),
            "rb85" | "85rb" => Some(Self::rb85()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let two_i = 2.0 * self.nuclear_spin;
        ensure(
            self.nuclear_spin > 0.0 && (two_i - two_i.round()).abs() < 1e-12,
            || format!("nuclear spin must be a positive multiple of 1/2, got {}", self.nuclear_spin),
        )?;
        ensure(self.oscillator_strength > 0.0, || {
            format!("oscillator strength must be positive, got {}", self.oscillator_strength)
        })?;
        ensure(self.line_a_offset != self.line_b_offset, || {
            "the two hyperfine lines must be distinct".to_string()
        })?;
        ensure(self.gyromagnetic_ratio > 0.0, || {
            format!("gyromagnetic ratio must be positive, got {}", self.gyromagnetic_ratio)
        })
    }

    /// Total angular momentum of the upper ground manifold, I + 1/2.
    pub fn f_a(&self) -> f64 {
        self.nuclear_spin + 0.5
    }

    /// Total angular momentum of the lower ground manifold, I - 1/2.
    pub fn f_b(&self) -> f64 {
        self.nuclear_spin - 0.5
    }
}

/// Vapor cell seen by the probe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellConfig {
    /// Atoms per m^3. Zero is accepted and means an empty cell.
    pub density: f64,
    /// Length along the probe, m.
    pub length: f64,
    /// Lorentzian optical FWHM from pressure broadening, Hz.
    pub pressure_fwhm: f64,
}

impl CellConfig {
    pub fn new(density: f64, length: f64, pressure_fwhm: f64) -> Result<Self> {
        let cell = Self { density, length, pressure_fwhm };
        cell.validate()?;
        Ok(cell)
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.density >= 0.0 && self.density.is_finite(), || {
            format!("density must be finite and non-negative, got {}", self.density)
        })?;
        ensure(self.length > 0.0, || format!("cell length must be positive, got {}", self.length))?;
        ensure(self.pressure_fwhm > 0.0, || {
            format!("pressure-broadened FWHM must be positive, got {}", self.pressure_fwhm)
        })
    }
}

/// Transverse intensity profile of the probe beam.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BeamProfile {
    /// Uniform intensity over `area` (m^2).
    TopHat { area: f64 },
    /// Elliptical Gaussian with standard deviations in m.
    Gaussian { sigma_y: f64, sigma_z: f64 },
    /// Row-major intensity samples `I[row * cols + col]` on a rectangular grid.
    Sampled {
        spacing_y: f64,
        spacing_z: f64,
        cols: usize,
        intensity: Vec<f64>,
    },
}

impl BeamProfile {
    pub fn validate(&self) -> Result<()> {
        match self {
            BeamProfile::TopHat { area } => {
                ensure(*area > 0.0, || format!("beam area must be positive, got {area}"))
            }
            BeamProfile::Gaussian { sigma_y, sigma_z } => ensure(*sigma_y > 0.0 && *sigma_z > 0.0, || {
                format!("beam widths must be positive, got {sigma_y} x {sigma_z}")
            }),
            BeamProfile::Sampled { spacing_y, spacing_z, cols, intensity } => {
                ensure(*spacing_y > 0.0 && *spacing_z > 0.0, || "grid spacing must be positive".into())?;
                ensure(*cols > 0 && intensity.len() % cols == 0, || {
                    format!("intensity grid of {} samples is not a multiple of {cols} columns", intensity.len())
                })?;
                ensure(intensity.iter().all(|v| *v >= 0.0 && v.is_finite()), || {
                    "intensity samples must be finite and non-negative".into()
                })?;
                ensure(intensity.iter().any(|v| *v > 0.0), || {
                    "sampled intensity profile is identically zero".into()
                })
            }
        }
    }

    /// Effective probed area `[∫I dA]^2 / ∫I^2 dA`, m^2.
    pub fn effective_area(&self) -> Result<f64> {
        self.validate()?;
        Ok(match self {
            BeamProfile::TopHat { area } => *area,
            BeamProfile::Gaussian { sigma_y, sigma_z } => 4.0 * PI * sigma_y * sigma_z,
            BeamProfile::Sampled { spacing_y, spacing_z, intensity, .. } => {
                let cell = spacing_y * spacing_z;
                let sum: f64 = intensity.iter().sum();
                let sum_sq: f64 = intensity.iter().map(|v| v * v).sum();
                cell * sum * sum / sum_sq
            }
        })
    }
}

/// Far-detuned linearly polarized probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    /// Probe optical frequency, Hz offset on the species' reference convention.
    pub frequency_offset: f64,
    /// Photons per second reaching the polarimeter.
    pub photon_flux: f64,
    pub quantum_efficiency: f64,
    pub profile: BeamProfile,
    /// Probe-induced optical pumping rate, 1/s.
    pub pumping_rate: f64,
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        ensure(self.photon_flux > 0.0, || format!("photon flux must be positive, got {}", self.photon_flux))?;
        ensure(self.quantum_efficiency > 0.0 && self.quantum_efficiency <= 1.0, || {
            format!("quantum efficiency must lie in (0, 1], got {}", self.quantum_efficiency)
        })?;
        ensure(self.pumping_rate >= 0.0, || {
            format!("probe pumping rate must be non-negative, got {}", self.pumping_rate)
        })?;
        self.profile.validate()
    }

    /// One-sided photon shot-noise rotation ASD, rad/√Hz.
    pub fn shot_noise_asd(&self) -> f64 {
        (1.0 / (2.0 * self.photon_flux * self.quantum_efficiency)).sqrt()
    }
}

/// Scalar magnetometer operating point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MagnetometerConfig {
    /// Bias field B_z, T.
    pub field: f64,
    /// Transverse coherence time of the pumped (polarized) vapor, s.
    pub t2: f64,
    /// Transverse coherence time without the pump, s.
    pub t2_unpolarized: f64,
    pub polarization: f64,
    pub beta: f64,
    /// Carrier rotation amplitude at full polarization, rad.
    pub signal_amplitude: f64,
}

impl MagnetometerConfig {
    pub fn validate(&self) -> Result<()> {
        ensure(self.field > 0.0, || format!("bias field must be positive, got {}", self.field))?;
        ensure(self.t2 > 0.0 && self.t2_unpolarized > 0.0, || "T2 must be positive".into())?;
        ensure((0.0..=1.0).contains(&self.polarization), || {
            format!("polarization must lie in [0, 1], got {}", self.polarization)
        })?;
        ensure(self.beta > 0.0, || format!("beta must be positive, got {}", self.beta))?;
        ensure(self.signal_amplitude >= 0.0, || "signal amplitude must be non-negative".into())
    }

    /// Carrier rotation amplitude S0·P, rad.
    pub fn carrier_amplitude(&self) -> f64 {
        self.signal_amplitude * self.polarization
    }
}

/// `(ν-ν0)/[(ν-ν0)^2 + (Δν/2)^2]`, 1/Hz.
pub fn dispersion_profile(nu: f64, nu0: f64, fwhm: f64) -> Result<f64> {
    ensure(fwhm > 0.0, || format!("linewidth must be positive, got {fwhm}"))?;
    Ok(dispersion(nu - nu0, fwhm))
}

fn dispersion(detuning: f64, fwhm: f64) -> f64 {
    let half = 0.5 * fwhm;
    detuning / (detuning * detuning + half * half)
}

pub fn larmor_frequency(field: f64, species: &AtomSpecies) -> Result<f64> {
    ensure(field > 0.0, || format!("field must be positive, got {field}"))?;
    Ok(species.gyromagnetic_ratio * field)
}

/// rms projection noise of `<F_x>` per atom for `atoms` unpolarized atoms.
pub fn rms_spin_fluctuation(f: f64, nuclear_spin: f64, atoms: f64) -> Result<f64> {
    ensure(atoms > 0.0, || format!("atom number must be positive, got {atoms}"))?;
    let valid_f = [nuclear_spin + 0.5, nuclear_spin - 0.5]
        .iter()
        .any(|allowed| (f - allowed).abs() < 1e-12 && *allowed > 0.0);
    ensure(valid_f, || format!("F = {f} is not a ground manifold of I = {nuclear_spin}"))?;
    Ok((f * (f + 1.0) * (2.0 * f + 1.0) / (6.0 * (2.0 * nuclear_spin + 1.0) * atoms)).sqrt())
}

/// Number of atoms contributing to the noise, `n·l·[∫I]^2/∫I^2`.
pub fn effective_atom_number(profile: &BeamProfile, cell: &CellConfig) -> Result<f64> {
    cell.validate()?;
    Ok(cell.density * cell.length * profile.effective_area()?)
}

/// Per-unit-spin rotation prefactors, rad per unit `<F_x>`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotationCoefficients {
    pub a: f64,
    pub b: f64,
}

pub fn rotation_coefficients(species: &AtomSpecies, cell: &CellConfig, probe: &ProbeConfig) -> RotationCoefficients {
    let prefactor = column_prefactor(species, cell);
    RotationCoefficients {
        a: prefactor * dispersion(probe.frequency_offset - species.line_a_offset, cell.pressure_fwhm),
        b: prefactor * dispersion(probe.frequency_offset - species.line_b_offset, cell.pressure_fwhm),
    }
}

fn column_prefactor(species: &AtomSpecies, cell: &CellConfig) -> f64 {
    SPEED_OF_LIGHT * ELECTRON_RADIUS * species.oscillator_strength * cell.density * cell.length
        / (2.0 * species.nuclear_spin + 1.0)
}

/// rms rotation noise contributed by each manifold, `|C_k|·σ_k`, rad.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ManifoldNoise {
    pub a: f64,
    pub b: f64,
}

impl ManifoldNoise {
    pub fn total(&self) -> f64 {
        self.a.hypot(self.b)
    }
}

pub fn manifold_rotation_noise(species: &AtomSpecies, cell: &CellConfig, probe: &ProbeConfig) -> Result<ManifoldNoise> {
    species.validate()?;
    probe.validate()?;
    let atoms = effective_atom_number(&probe.profile, cell)?;
    if atoms == 0.0 {
        return Ok(ManifoldNoise { a: 0.0, b: 0.0 });
    }
    let coeffs = rotation_coefficients(species, cell, probe);
    let sigma_a = rms_spin_fluctuation(species.f_a(), species.nuclear_spin, atoms)?;
    let sigma_b = rms_spin_fluctuation(species.f_b(), species.nuclear_spin, atoms)?;
    Ok(ManifoldNoise {
        a: coeffs.a.abs() * sigma_a,
        b: coeffs.b.abs() * sigma_b,
    })
}

/// Total rms rotation noise of an unpolarized vapor, rad.
pub fn rms_rotation_noise(species: &AtomSpecies, cell: &CellConfig, probe: &ProbeConfig) -> Result<f64> {
    manifold_rotation_noise(species, cell, probe).map(|m| m.total())
}

/// Optical density on resonance, `n·l·σ0` with `σ0 = 2·r_e·c·f_osc/Δν`.
///
/// σ0 is the peak of a unit-area Lorentzian of FWHM Δν multiplied by the
/// integrated cross-section `π·r_e·c·f_osc`.
pub fn optical_density_on_resonance(species: &AtomSpecies, cell: &CellConfig) -> f64 {
    let sigma0 = 2.0 * ELECTRON_RADIUS * SPEED_OF_LIGHT * species.oscillator_strength / cell.pressure_fwhm;
    cell.density * cell.length * sigma0
}

/// Low-polarization estimate of the carrier amplitude per unit polarization, rad.
///
/// In a spin-temperature distribution with electron polarization P, each
/// manifold carries `<F_z> = P·F(F+1)(2F+1)/(3(2I+1))` per atom. Bell-Bloom
/// driving rotates both orientations into the transverse plane; the amplitudes
/// are taken to add.
pub fn carrier_amplitude_per_polarization(species: &AtomSpecies, cell: &CellConfig, probe: &ProbeConfig) -> f64 {
    let coeffs = rotation_coefficients(species, cell, probe);
    let orientation = |f: f64| f * (f + 1.0) * (2.0 * f + 1.0) / (3.0 * (2.0 * species.nuclear_spin + 1.0));
    coeffs.a.abs() * orientation(species.f_a()) + coeffs.b.abs() * orientation(species.f_b())
}

/// Probe pumping rate that makes the Lorentzian term of the QND noise model
/// carry the same spin-noise power as the projection noise `phi_rms`.
///
/// Equating the peak densities gives `N_ab·Γ_pr = 4·Φ·phi_rms^2`.
pub fn matched_pumping_rate(phi_rms: f64, photon_flux: f64, optical_density: f64) -> Result<f64> {
    if optical_density == 0.0 {
        return Ok(0.0);
    }
    if optical_density < 0.0 || photon_flux <= 0.0 {
        return Err(Error::invalid("optical density and photon flux must be positive"));
    }
    Ok(4.0 * photon_flux * phi_rms * phi_rms / optical_density)
}
