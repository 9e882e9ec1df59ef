//! End-to-end runs behind the `qndmag` subcommands.
//!
//! Every run resolves its configuration, computes everything in memory and
//! only then writes its output directory, so a failed run leaves nothing
//! behind. The `manifest.json` written alongside the outputs holds the exact
//! configuration and seed and can be fed back in as a config.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{ConfigFile, ExperimentConfig};
use crate::dsp::{integrate_band, welch_psd, welch_psd_envelope, LockInOutput, Spectrum, SpectrumKind};
use crate::error::{Error, Result};
use crate::estimation::{
    demodulate, demolition_bandwidth, demolition_sensitivity, extract_bandwidth, fit_json, fit_lorentzian_floor_with,
    measure_response_with, plateau, qnd_bandwidth, sensitivity_spectrum, spin_noise_parameter, weak_squeezing,
    Calibration, FitOptions, LorentzianFitResult, SensitivityReport,
};
use crate::physics;
use crate::rng::child_seed;
use crate::synthesis::{
    synthesize_polarimeter_envelope, synthesize_polarimeter_output_with, FieldWaveform, Frame, NoiseSources,
};

pub const TOOL_NAME: &str = "qndmag";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Half-width of the spin-noise integration band, in fitted half-widths.
pub const BAND_HALF_WIDTHS: f64 = 20.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub tool: String,
    pub tool_version: String,
    pub command: String,
    pub seed: u64,
    /// The config as given, with command-line overrides applied; reruns read this.
    pub config: ConfigFile,
    /// The same config in SI units with derived defaults filled in.
    pub resolved: ExperimentConfig,
    pub outputs: Vec<String>,
}

/// Reads a TOML config or a `manifest.json` from an earlier run.
pub fn load_config(path: &Path) -> Result<ConfigFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    if text.trim_start().starts_with('{') {
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Ok(manifest.config)
    } else {
        ConfigFile::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

/// Welch segment for a record at the frame rate, scaled from one chosen for
/// the carrier rate so the resolution bandwidth stays comparable.
fn frame_segment(cfg: &ExperimentConfig, carrier_segment: usize) -> usize {
    match cfg.simulation.frame {
        Frame::Carrier => carrier_segment,
        Frame::Baseband => {
            let scaled = carrier_segment as f64 * cfg.simulation.baseband_rate / cfg.simulation.sample_rate;
            let exp = scaled.max(16.0).log2().round() as i32;
            1usize << exp
        }
    }
}

/// Unpolarized spin-noise spectrum of the polarimeter output around the Larmor frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinNoiseResult {
    pub spectrum: Spectrum,
    /// `None` when no peak rises above the floor.
    pub fit: Option<LorentzianFitResult>,
    /// Floor-subtracted integral over the fitted center ± 20 half-widths, rad².
    pub band_power: Option<f64>,
    pub predicted_phi_rms: f64,
    pub predicted_floor: f64,
    pub larmor_frequency: f64,
}

impl SpinNoiseResult {
    pub fn to_json(&self) -> serde_json::Value {
        let band = self.fit.as_ref().map(|f| {
            json!({
                "lo_hz": f.center - BAND_HALF_WIDTHS * f.hwhm,
                "hi_hz": f.center + BAND_HALF_WIDTHS * f.hwhm,
            })
        });
        let phi_band = self.band_power.map(|p| p.max(0.0).sqrt());
        let phi_fit = self.fit.as_ref().map(|f| (PI * f.peak_power * f.hwhm).sqrt());
        json!({
            "degenerate": self.fit.is_none(),
            "fit": self.fit.as_ref().map(fit_json),
            "integration_band": band,
            "phi_rms_band_rad": phi_band,
            "phi_rms_fit_rad": phi_fit,
            "phi_rms_predicted_rad": self.predicted_phi_rms,
            "shot_floor_predicted_rad2_per_hz": self.predicted_floor,
            "larmor_frequency_hz": self.larmor_frequency,
            "weak_squeezing": self.fit.as_ref().is_some_and(|f| weak_squeezing(f.peak_power, f.floor)),
        })
    }
}

pub fn spin_noise_analysis(cfg: &ExperimentConfig) -> Result<SpinNoiseResult> {
    let unpol = cfg.unpolarized();
    let sim = &cfg.simulation;
    let an = &cfg.analysis;
    let segment = frame_segment(cfg, an.segment_length);
    let field = FieldWaveform::none();
    let spectrum = match sim.frame {
        Frame::Carrier => {
            let ts = synthesize_polarimeter_output_with(&unpol, &field, sim.duration, sim.sample_rate, sim.seed, NoiseSources::ALL)?;
            welch_psd(&ts, segment, an.overlap, an.window)?
        }
        Frame::Baseband => {
            let env = synthesize_polarimeter_envelope(&unpol, &field, sim.duration, sim.baseband_rate, sim.seed, NoiseSources::ALL)?;
            welch_psd_envelope(&env, segment, an.overlap, an.window)?
        }
    };

    // skip the DC bins where the window leaks
    let fit_range = spectrum.restrict(3.0 * spectrum.resolution_bandwidth, f64::INFINITY)?;
    let fit = match fit_lorentzian_floor_with(&fit_range, &FitOptions::default()) {
        Ok(fit) => Some(fit),
        Err(Error::Degenerate(_)) => None,
        Err(e) => return Err(e),
    };
    let band_power = match &fit {
        Some(f) => {
            let lo = (f.center - BAND_HALF_WIDTHS * f.hwhm).max(spectrum.frequencies[0]);
            let hi = (f.center + BAND_HALF_WIDTHS * f.hwhm).min(spectrum.frequencies[spectrum.len() - 1]);
            Some(integrate_band(&spectrum, lo, hi, Some(f.floor))?)
        }
        None => None,
    };
    Ok(SpinNoiseResult {
        spectrum,
        fit,
        band_power,
        predicted_phi_rms: physics::rms_rotation_noise(&cfg.species, &cfg.cell, &cfg.probe)?,
        predicted_floor: cfg.probe.shot_noise_asd().powi(2),
        larmor_frequency: cfg.larmor_frequency(),
    })
}

/// Demodulated noise PSD, corrected for the lock-in lowpass.
fn lockin_noise_spectrum(cfg: &ExperimentConfig) -> Result<Spectrum> {
    let sim = &cfg.simulation;
    let an = &cfg.analysis;
    let out: LockInOutput =
        demodulate(cfg, &FieldWaveform::none(), sim.duration, sim.frame_rate(), sim.seed, NoiseSources::ALL, sim.frame)?;
    let segment = frame_segment(cfg, an.lockin_segment_length);
    if out.quadrature.len() < segment {
        return Err(Error::invalid(format!(
            "{} s leaves {} demodulated samples, fewer than one {segment}-sample segment",
            sim.duration,
            out.quadrature.len()
        )));
    }
    let raw = welch_psd(&out.quadrature, segment, an.overlap, an.window)?;
    let values = raw.frequencies.iter().zip(&raw.values).map(|(f, v)| v / out.power_gain(*f)).collect();
    let sp = Spectrum::new(raw.frequencies, values, SpectrumKind::Power, raw.unit, raw.resolution_bandwidth, raw.segment_count)?;
    sp.restrict(0.0, an.lockin_cutoff)
}

pub struct SensitivityRun {
    pub report: SensitivityReport,
    /// Demodulated noise PSD, rad²/Hz.
    pub noise: Spectrum,
}

pub fn sensitivity_analysis(cfg: &ExperimentConfig) -> Result<SensitivityRun> {
    let an = &cfg.analysis;
    let sim = &cfg.simulation;
    let noise = lockin_noise_spectrum(cfg)?;

    let fit_range = noise.restrict(noise.frequencies[1], 0.5 * an.lockin_cutoff)?;
    let fit = match fit_lorentzian_floor_with(&fit_range, &FitOptions { fixed_center: Some(0.0), ..Default::default() }) {
        Ok(fit) => Some(fit),
        Err(Error::Degenerate(_)) => None,
        Err(e) => return Err(e),
    };

    let cal = Calibration {
        field_rms: an.calibration_field,
        duration: an.calibration_duration,
        sample_rate: sim.frame_rate(),
        seed: child_seed(sim.seed, "calibration"),
        sources: NoiseSources::ALL,
        frame: sim.frame,
    };
    let response = measure_response_with(cfg, &an.calibration_frequencies(), &cal)?;

    let sensitivity = sensitivity_spectrum(&noise, &response)?;
    let dc_sensitivity = plateau(&sensitivity)?;
    let measured_bandwidth = extract_bandwidth(&sensitivity, an.bandwidth_smoothing)?;

    let flat = plateau(&noise.to_amplitude())?;
    let demolition = demolition_sensitivity(flat, &response, &sensitivity.frequencies)?;
    let demolition = Spectrum { resolution_bandwidth: sensitivity.resolution_bandwidth, segment_count: sensitivity.segment_count, ..demolition };
    let demolition_bw = extract_bandwidth(&demolition, an.bandwidth_smoothing)?;

    let mag = &cfg.magnetometer;
    let n_ab = cfg.optical_density();
    let eta = cfg.probe.quantum_efficiency;
    let closed_form_bandwidth = qnd_bandwidth(eta, n_ab, cfg.probe.pumping_rate, mag.t2, mag.beta)?;
    let eta_k = eta * spin_noise_parameter(&cfg.probe, &cfg.species, &cfg.cell, mag);

    let report = SensitivityReport {
        sensitivity_spectrum: sensitivity,
        demolition_spectrum: demolition,
        dc_sensitivity,
        measured_bandwidth,
        closed_form_bandwidth,
        demolition_bandwidth: demolition_bw,
        demolition_closed_form_bandwidth: demolition_bandwidth(mag.t2),
        eta_k,
        weak_squeezing: fit.as_ref().is_some_and(|f| weak_squeezing(f.peak_power, f.floor)),
        fit,
        response,
    };
    Ok(SensitivityRun { report, noise })
}

/// Closed-form predictions for a configuration; no simulation.
pub fn predict(cfg: &ExperimentConfig) -> Result<serde_json::Value> {
    let species = &cfg.species;
    let coeffs = physics::rotation_coefficients(species, &cfg.cell, &cfg.probe);
    let atoms = physics::effective_atom_number(&cfg.probe.profile, &cfg.cell)?;
    let (sigma_a, sigma_b) = if atoms > 0.0 {
        (
            physics::rms_spin_fluctuation(species.f_a(), species.nuclear_spin, atoms)?,
            physics::rms_spin_fluctuation(species.f_b(), species.nuclear_spin, atoms)?,
        )
    } else {
        (0.0, 0.0)
    };
    let noise = cfg.manifold_noise()?;
    let phi = noise.total();
    let floor_psd = cfg.probe.shot_noise_asd().powi(2);
    let mag = &cfg.magnetometer;
    let n_ab = cfg.optical_density();
    let eta = cfg.probe.quantum_efficiency;
    let eta_k = eta * spin_noise_parameter(&cfg.probe, species, &cfg.cell, mag);
    // one-sided Lorentzian peak density of an OU process with variance φ² and τ = T2
    let unpol_peak = 2.0 * mag.t2_unpolarized * phi * phi;
    let response_dc = cfg.magnetometer.carrier_amplitude() * 2.0 * PI * species.gyromagnetic_ratio * mag.t2;
    let dc_sensitivity = if response_dc > 0.0 {
        // demodulated noise at DC is twice the one-sided density at the carrier
        Some((2.0 * floor_psd * (1.0 + eta_k)).sqrt() / response_dc)
    } else {
        None
    };
    Ok(json!({
        "species": species.name,
        "rotation_coefficient_a_rad": coeffs.a,
        "rotation_coefficient_b_rad": coeffs.b,
        "spin_fluctuation_a": sigma_a,
        "spin_fluctuation_b": sigma_b,
        "effective_atom_number": atoms,
        "phi_rms_rad": phi,
        "phi_rms_a_rad": noise.a,
        "phi_rms_b_rad": noise.b,
        "optical_density_on_resonance": n_ab,
        "larmor_frequency_hz": cfg.larmor_frequency(),
        "shot_noise_rad_per_sqrt_hz": cfg.probe.shot_noise_asd(),
        "unpolarized_hwhm_hz": 1.0 / (2.0 * PI * mag.t2_unpolarized),
        "unpolarized_peak_to_floor_ratio": unpol_peak / floor_psd,
        "pumping_rate_per_s": cfg.probe.pumping_rate,
        "eta_k": eta_k,
        "carrier_amplitude_rad": mag.carrier_amplitude(),
        "dc_responsivity_rad_per_tesla": response_dc,
        "dc_sensitivity_tesla_per_sqrt_hz": dc_sensitivity,
        "qnd_bandwidth_hz": qnd_bandwidth(eta, n_ab, cfg.probe.pumping_rate, mag.t2, mag.beta)?,
        "demolition_bandwidth_hz": demolition_bandwidth(mag.t2),
    }))
}

/// Files produced by a run, keyed by name, written together at the end.
struct Outputs {
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    fn new() -> Self {
        Self { files: Vec::new() }
    }

    fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes));
    }

    fn add_json(&mut self, name: &str, value: &serde_json::Value) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.add(name, bytes);
        Ok(())
    }

    fn finish(mut self, out: &Path, command: &str, file: &ConfigFile) -> Result<Vec<PathBuf>> {
        let mut names: Vec<String> = self.files.iter().map(|(n, _)| n.clone()).collect();
        names.push("manifest.json".into());
        let manifest = Manifest {
            tool: TOOL_NAME.into(),
            tool_version: TOOL_VERSION.into(),
            command: command.into(),
            seed: file.simulation.seed,
            config: file.clone(),
            resolved: file.resolve()?,
            outputs: names,
        };
        self.add_json("manifest.json", &serde_json::to_value(&manifest)?)?;

        fs::create_dir_all(out)?;
        let mut written = Vec::new();
        for (name, bytes) in &self.files {
            let path = out.join(name);
            if let Err(e) = fs::write(&path, bytes) {
                for p in &written {
                    let _ = fs::remove_file(p);
                }
                return Err(e.into());
            }
            written.push(path);
        }
        Ok(written)
    }
}

fn spectrum_csv(sp: &Spectrum) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    sp.write_csv(&mut buf)?;
    Ok(buf)
}

/// `spin-noise`: writes `spin_noise_psd.csv`, `spin_noise_fit.json`, `manifest.json`.
pub fn run_spin_noise(file: &ConfigFile, out: &Path) -> Result<SpinNoiseResult> {
    let cfg = file.resolve()?;
    let result = spin_noise_analysis(&cfg)?;
    let mut outputs = Outputs::new();
    outputs.add("spin_noise_psd.csv", spectrum_csv(&result.spectrum)?);
    outputs.add_json("spin_noise_fit.json", &result.to_json())?;
    outputs.finish(out, "spin-noise", file)?;
    Ok(result)
}

fn response_csv(report: &SensitivityReport) -> Vec<u8> {
    let r = &report.response;
    let mut s = String::from("# unit: rad/T\nfrequency_hz,responsivity_rad_per_tesla,model_rad_per_tesla\n");
    for (f, v) in r.frequencies.iter().zip(&r.responsivity) {
        s.push_str(&format!("{f:.9e},{v:.12e},{:.12e}\n", r.model_at(*f)));
    }
    s.into_bytes()
}

fn sensitivity_csv(report: &SensitivityReport) -> Vec<u8> {
    let q = &report.sensitivity_spectrum;
    let d = &report.demolition_spectrum;
    let mut s = format!(
        "# unit: T/sqrt(Hz)\n# resolution_bandwidth_hz: {:.9e}\nfrequency_hz,qnd_tesla_per_sqrt_hz,demolition_tesla_per_sqrt_hz\n",
        q.resolution_bandwidth
    );
    for ((f, v), w) in q.frequencies.iter().zip(&q.values).zip(&d.values) {
        s.push_str(&format!("{f:.9e},{v:.12e},{w:.12e}\n"));
    }
    s.into_bytes()
}

/// `sensitivity`: writes `lockin_noise.csv`, `response.csv`, `sensitivity.csv`,
/// `sensitivity_report.json`, `manifest.json`.
pub fn run_sensitivity(file: &ConfigFile, out: &Path) -> Result<SensitivityReport> {
    let cfg = file.resolve()?;
    let run = sensitivity_analysis(&cfg)?;
    let mut outputs = Outputs::new();
    outputs.add("lockin_noise.csv", spectrum_csv(&run.noise.to_amplitude())?);
    outputs.add("response.csv", response_csv(&run.report));
    outputs.add("sensitivity.csv", sensitivity_csv(&run.report));
    outputs.add_json("sensitivity_report.json", &run.report.to_json())?;
    outputs.finish(out, "sensitivity", file)?;
    Ok(run.report)
}

/// `predict`: closed-form numbers; writes `predict.json` and `manifest.json` when `out` is given.
pub fn run_predict(file: &ConfigFile, out: Option<&Path>) -> Result<serde_json::Value> {
    let cfg = file.resolve()?;
    let value = predict(&cfg)?;
    if let Some(out) = out {
        let mut outputs = Outputs::new();
        outputs.add_json("predict.json", &value)?;
        outputs.finish(out, "predict", file)?;
    }
    Ok(value)
}
