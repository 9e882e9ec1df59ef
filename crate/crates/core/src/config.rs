//! Experiment configuration.
//!
//! Config files are TOML with unit-bearing key names (`density_per_cm3`,
//! `cell_length_cm`, `detuning_from_a_ghz`, ...). [`ConfigFile`] mirrors the
//! file one-to-one and rejects unknown keys; [`ConfigFile::resolve`] converts
//! it to SI and fills derived defaults, producing an [`ExperimentConfig`].

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dsp::Window;
use crate::error::{Error, Result};
use crate::physics::{
    self, AtomSpecies, BeamProfile, CellConfig, ManifoldNoise, MagnetometerConfig, ProbeConfig,
};
use crate::synthesis::{Frame, NoiseProcessParams};

/// Reference configuration reproducing the published operating point.
pub const REFERENCE_CONFIG: &str = include_str!("../configs/reference.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub species: SpeciesSection,
    pub cell: CellSection,
    pub probe: ProbeSection,
    pub magnetometer: MagnetometerSection,
    #[serde(default)]
    pub simulation: SimulationSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
}

/// Either `preset = "rb87"` or a full inline definition.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeciesSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nuclear_spin: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oscillator_strength: Option<f64>,
    /// Optical frequency of the F=I-1/2 line above the F=I+1/2 line.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hyperfine_splitting_ghz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gyromagnetic_ratio_ghz_per_t: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellSection {
    pub density_per_cm3: f64,
    pub cell_length_cm: f64,
    pub pressure_fwhm_ghz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSection {
    /// Probe frequency minus the F=I+1/2 line frequency.
    pub detuning_from_a_ghz: f64,
    pub photon_flux_per_s: f64,
    pub quantum_efficiency: f64,
    /// Defaults to the rate that matches the projection-noise level.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pumping_rate_per_s: Option<f64>,
    pub beam: BeamSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum BeamSection {
    TopHat { width_mm: f64, height_mm: f64 },
    Gaussian { sigma_y_mm: f64, sigma_z_mm: f64 },
    Sampled { spacing_y_mm: f64, spacing_z_mm: f64, intensity: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MagnetometerSection {
    pub field_ut: f64,
    /// Half-width 1/(2πT2) of the pumped magnetic resonance.
    pub resonance_hwhm_hz: f64,
    /// Half-width of the spin-noise peak without the pump; defaults to the pumped value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unpolarized_hwhm_hz: Option<f64>,
    pub polarization: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    /// Carrier rotation at full polarization; defaults to the spin-temperature estimate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signal_amplitude_rad: Option<f64>,
}

fn default_beta() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationSection {
    pub duration_s: f64,
    pub sample_rate_hz: f64,
    pub baseband_rate_hz: f64,
    pub seed: u64,
    pub frame: Frame,
    pub max_samples: u64,
}

impl Default for SimulationSection {
    fn default() -> Self {
        Self {
            duration_s: 20.0,
            sample_rate_hz: 250e3,
            baseband_rate_hz: 50e3,
            seed: 1,
            frame: Frame::Carrier,
            max_samples: 200_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    /// Welch segment for the raw polarimeter spectrum.
    pub segment_length: usize,
    /// Welch segment for the demodulated noise spectrum.
    pub lockin_segment_length: usize,
    pub window: Window,
    pub overlap: f64,
    pub lockin_cutoff_hz: f64,
    pub lockin_order: usize,
    pub calibration_field_nt: f64,
    pub calibration_points: usize,
    pub calibration_min_hz: f64,
    pub calibration_max_hz: f64,
    pub calibration_duration_s: f64,
    /// Relative half-width of the moving average applied before bandwidth extraction.
    pub bandwidth_smoothing: f64,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            segment_length: 16_384,
            lockin_segment_length: 131_072,
            window: Window::Hann,
            overlap: 0.5,
            lockin_cutoff_hz: 10e3,
            lockin_order: 4,
            calibration_field_nt: 1.0,
            calibration_points: 24,
            calibration_min_hz: 10.0,
            calibration_max_hz: 10e3,
            calibration_duration_s: 2.0,
            bandwidth_smoothing: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationSettings {
    pub duration: f64,
    pub sample_rate: f64,
    pub baseband_rate: f64,
    pub seed: u64,
    pub frame: Frame,
    pub max_samples: u64,
}

impl SimulationSettings {
    /// Sample rate used by the selected frame.
    pub fn frame_rate(&self) -> f64 {
        match self.frame {
            Frame::Carrier => self.sample_rate,
            Frame::Baseband => self.baseband_rate,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalysisSettings {
    pub segment_length: usize,
    pub lockin_segment_length: usize,
    pub window: Window,
    pub overlap: f64,
    pub lockin_cutoff: f64,
    pub lockin_order: usize,
    /// rms calibration field, T.
    pub calibration_field: f64,
    pub calibration_points: usize,
    pub calibration_min: f64,
    pub calibration_max: f64,
    pub calibration_duration: f64,
    pub bandwidth_smoothing: f64,
}

impl AnalysisSettings {
    /// Log-spaced calibration frequencies.
    pub fn calibration_frequencies(&self) -> Vec<f64> {
        let n = self.calibration_points;
        if n == 1 {
            return vec![self.calibration_min];
        }
        let ratio = (self.calibration_max / self.calibration_min).ln();
        (0..n)
            .map(|k| self.calibration_min * (ratio * k as f64 / (n - 1) as f64).exp())
            .collect()
    }
}

/// Fully resolved experiment in SI units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub species: AtomSpecies,
    pub cell: CellConfig,
    pub probe: ProbeConfig,
    pub magnetometer: MagnetometerConfig,
    pub simulation: SimulationSettings,
    pub analysis: AnalysisSettings,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn with_overrides(mut self, seed: Option<u64>, duration: Option<f64>, frame: Option<Frame>) -> Self {
        if let Some(seed) = seed {
            self.simulation.seed = seed;
        }
        if let Some(duration) = duration {
            self.simulation.duration_s = duration;
        }
        if let Some(frame) = frame {
            self.simulation.frame = frame;
        }
        self
    }

    /// Converts to SI, validates every section and fills derived defaults.
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        self.resolve_inner().map_err(|e| match e {
            Error::InvalidParameter(msg) => Error::Config(msg),
            other => other,
        })
    }

    fn resolve_inner(&self) -> Result<ExperimentConfig> {
        let species = self.species.resolve()?;
        let cell = CellConfig::new(
            self.cell.density_per_cm3 * 1e6,
            self.cell.cell_length_cm * 1e-2,
            self.cell.pressure_fwhm_ghz * 1e9,
        )?;

        let mut probe = ProbeConfig {
            frequency_offset: species.line_a_offset + self.probe.detuning_from_a_ghz * 1e9,
            photon_flux: self.probe.photon_flux_per_s,
            quantum_efficiency: self.probe.quantum_efficiency,
            profile: self.probe.beam.resolve()?,
            pumping_rate: self.probe.pumping_rate_per_s.unwrap_or(0.0),
        };
        probe.validate()?;
        if self.probe.pumping_rate_per_s.is_none() {
            let phi = physics::rms_rotation_noise(&species, &cell, &probe)?;
            let od = physics::optical_density_on_resonance(&species, &cell);
            probe.pumping_rate = physics::matched_pumping_rate(phi, probe.photon_flux, od)?;
        }

        let m = &self.magnetometer;
        let hwhm_to_t2 = |hwhm: f64| -> Result<f64> {
            if hwhm > 0.0 {
                Ok(1.0 / (2.0 * PI * hwhm))
            } else {
                Err(Error::invalid(format!("resonance half-width must be positive, got {hwhm}")))
            }
        };
        let t2 = hwhm_to_t2(m.resonance_hwhm_hz)?;
        let signal_amplitude = match m.signal_amplitude_rad {
            Some(s0) => s0,
            None => physics::carrier_amplitude_per_polarization(&species, &cell, &probe),
        };
        let magnetometer = MagnetometerConfig {
            field: m.field_ut * 1e-6,
            t2,
            t2_unpolarized: match m.unpolarized_hwhm_hz {
                Some(h) => hwhm_to_t2(h)?,
                None => t2,
            },
            polarization: m.polarization,
            beta: m.beta,
            signal_amplitude,
        };
        magnetometer.validate()?;

        let s = &self.simulation;
        let simulation = SimulationSettings {
            duration: s.duration_s,
            sample_rate: s.sample_rate_hz,
            baseband_rate: s.baseband_rate_hz,
            seed: s.seed,
            frame: s.frame,
            max_samples: s.max_samples,
        };
        if !(simulation.duration > 0.0 && simulation.sample_rate > 0.0 && simulation.baseband_rate > 0.0) {
            return Err(Error::invalid("duration and sample rates must be positive"));
        }
        let samples = simulation.duration * simulation.frame_rate();
        if samples > simulation.max_samples as f64 {
            return Err(Error::invalid(format!(
                "{samples:.3e} samples exceeds the cap of {} (duration_s x rate)",
                simulation.max_samples
            )));
        }

        let larmor = species.gyromagnetic_ratio * magnetometer.field;
        if simulation.frame == Frame::Carrier && simulation.sample_rate < 8.0 * larmor {
            return Err(Error::invalid(format!(
                "simulation.sample_rate_hz = {} cannot resolve the {larmor:.0} Hz carrier; need at least {:.0}",
                simulation.sample_rate,
                8.0 * larmor
            )));
        }

        let a = &self.analysis;
        let analysis = AnalysisSettings {
            segment_length: a.segment_length,
            lockin_segment_length: a.lockin_segment_length,
            window: a.window,
            overlap: a.overlap,
            lockin_cutoff: a.lockin_cutoff_hz,
            lockin_order: a.lockin_order,
            calibration_field: a.calibration_field_nt * 1e-9,
            calibration_points: a.calibration_points,
            calibration_min: a.calibration_min_hz,
            calibration_max: a.calibration_max_hz,
            calibration_duration: a.calibration_duration_s,
            bandwidth_smoothing: a.bandwidth_smoothing,
        };
        for (name, len) in [("segment_length", analysis.segment_length), ("lockin_segment_length", analysis.lockin_segment_length)] {
            if !len.is_power_of_two() || len < 16 {
                return Err(Error::invalid(format!("analysis.{name} must be a power of two >= 16, got {len}")));
            }
        }
        if !(0.0..1.0).contains(&analysis.overlap) {
            return Err(Error::invalid(format!("analysis.overlap must lie in [0, 1), got {}", analysis.overlap)));
        }
        if analysis.lockin_order == 0 || analysis.lockin_cutoff <= 0.0 {
            return Err(Error::invalid("lock-in order and cutoff must be positive"));
        }
        if analysis.lockin_cutoff >= larmor || 2.0 * analysis.lockin_cutoff >= simulation.frame_rate() {
            return Err(Error::invalid(format!(
                "analysis.lockin_cutoff_hz = {} must lie below the carrier and the Nyquist frequency",
                analysis.lockin_cutoff
            )));
        }
        if !(analysis.calibration_points >= 1
            && analysis.calibration_min > 0.0
            && analysis.calibration_max >= analysis.calibration_min
            && analysis.calibration_field > 0.0
            && analysis.calibration_duration > 0.0)
        {
            return Err(Error::invalid("calibration sweep settings must be positive and ordered"));
        }
        if !(0.0..0.5).contains(&analysis.bandwidth_smoothing) {
            return Err(Error::invalid("analysis.bandwidth_smoothing must lie in [0, 0.5)"));
        }

        Ok(ExperimentConfig { species, cell, probe, magnetometer, simulation, analysis })
    }
}

impl SpeciesSection {
    fn resolve(&self) -> Result<AtomSpecies> {
        let inline = [
            self.name.is_some(),
            self.nuclear_spin.is_some(),
            self.oscillator_strength.is_some(),
            self.hyperfine_splitting_ghz.is_some(),
            self.gyromagnetic_ratio_ghz_per_t.is_some(),
        ];
        match &self.preset {
            Some(name) => {
                if inline.iter().any(|set| *set) {
                    return Err(Error::invalid("species: give either `preset` or an inline definition, not both"));
                }
                AtomSpecies::preset(name).ok_or_else(|| Error::invalid(format!("species: unknown preset '{name}'")))
            }
            None => {
                let missing = |field: &str| Error::invalid(format!("species: missing field `{field}`"));
                AtomSpecies::new(
                    self.name.clone().unwrap_or_else(|| "custom".into()),
                    self.nuclear_spin.ok_or_else(|| missing("nuclear_spin"))?,
                    self.oscillator_strength.ok_or_else(|| missing("oscillator_strength"))?,
                    0.0,
                    self.hyperfine_splitting_ghz.ok_or_else(|| missing("hyperfine_splitting_ghz"))? * 1e9,
                    self.gyromagnetic_ratio_ghz_per_t.ok_or_else(|| missing("gyromagnetic_ratio_ghz_per_t"))? * 1e9,
                )
            }
        }
    }
}

impl BeamSection {
    fn resolve(&self) -> Result<BeamProfile> {
        let profile = match self {
            BeamSection::TopHat { width_mm, height_mm } => BeamProfile::TopHat { area: width_mm * height_mm * 1e-6 },
            BeamSection::Gaussian { sigma_y_mm, sigma_z_mm } => BeamProfile::Gaussian {
                sigma_y: sigma_y_mm * 1e-3,
                sigma_z: sigma_z_mm * 1e-3,
            },
            BeamSection::Sampled { spacing_y_mm, spacing_z_mm, intensity } => {
                let cols = intensity.first().map_or(0, Vec::len);
                if intensity.iter().any(|row| row.len() != cols) {
                    return Err(Error::invalid("probe.beam.intensity rows must all have the same length"));
                }
                BeamProfile::Sampled {
                    spacing_y: spacing_y_mm * 1e-3,
                    spacing_z: spacing_z_mm * 1e-3,
                    cols,
                    intensity: intensity.concat(),
                }
            }
        };
        profile.validate()?;
        Ok(profile)
    }
}

impl ExperimentConfig {
    /// The bundled reference configuration, resolved.
    pub fn reference() -> Self {
        ConfigFile::parse(REFERENCE_CONFIG)
            .and_then(|c| c.resolve())
            .expect("bundled reference config is valid")
    }

    pub fn larmor_frequency(&self) -> f64 {
        self.species.gyromagnetic_ratio * self.magnetometer.field
    }

    pub fn manifold_noise(&self) -> Result<ManifoldNoise> {
        physics::manifold_rotation_noise(&self.species, &self.cell, &self.probe)
    }

    /// Spin-noise process with τ equal to the configured (pumped) T2.
    pub fn spin_noise_params(&self) -> Result<NoiseProcessParams> {
        let noise = self.manifold_noise()?;
        Ok(NoiseProcessParams {
            center_frequency: self.larmor_frequency(),
            correlation_time: self.magnetometer.t2,
            rms_a: noise.a,
            rms_b: noise.b,
        })
    }

    /// Same vapor with the pump off: no polarization, unpumped T2.
    pub fn unpolarized(&self) -> Self {
        let mut cfg = self.clone();
        cfg.magnetometer.polarization = 0.0;
        cfg.magnetometer.t2 = self.magnetometer.t2_unpolarized;
        cfg
    }

    pub fn optical_density(&self) -> f64 {
        physics::optical_density_on_resonance(&self.species, &self.cell)
    }
}
