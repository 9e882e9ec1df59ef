use std::f64::consts::PI;

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::dsp::{lock_in_demodulate, lock_in_envelope, welch_psd, LockInOutput, Window};
use crate::error::{ensure, Error, Result};
use crate::rng::child_seed;
use crate::synthesis::{
    synthesize_polarimeter_envelope, synthesize_polarimeter_output_with, FieldWaveform, Frame, NoiseSources,
};

/// `S0/sqrt(1 + (2πf·T2)²)`.
pub fn response_model(f: f64, s0: f64, t2: f64) -> f64 {
    let x = 2.0 * PI * f * t2;
    s0 / (1.0 + x * x).sqrt()
}

/// Measured field responsivity of the demodulated out-of-phase channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseCurve {
    pub frequencies: Vec<f64>,
    /// rms demodulated rotation per rms field, rad/T.
    pub responsivity: Vec<f64>,
    /// Fitted zero-frequency responsivity, rad/T.
    pub dc_responsivity: f64,
    /// Fitted coherence time, s.
    pub t2: f64,
}

impl ResponseCurve {
    /// Builds a curve from measured points and fits the square-root-Lorentzian model.
    pub fn from_points(frequencies: Vec<f64>, responsivity: Vec<f64>) -> Result<Self> {
        ensure(frequencies.len() == responsivity.len(), || "frequency and responsivity lengths differ".into())?;
        ensure(frequencies.len() >= 2, || "need at least two response points".into())?;
        ensure(frequencies.windows(2).all(|w| w[1] > w[0]), || "response frequencies must increase".into())?;
        ensure(frequencies[0] >= 0.0, || "response frequencies must be non-negative".into())?;
        ensure(responsivity.iter().all(|r| *r > 0.0 && r.is_finite()), || "responsivity must be positive".into())?;
        let (dc_responsivity, t2) = fit_response(&frequencies, &responsivity)?;
        Ok(Self { frequencies, responsivity, dc_responsivity, t2 })
    }

    /// Samples the model curve exactly, for analytic comparisons.
    pub fn from_model(frequencies: Vec<f64>, s0: f64, t2: f64) -> Result<Self> {
        ensure(s0 > 0.0 && t2 > 0.0, || "model response needs positive S0 and T2".into())?;
        let responsivity = frequencies.iter().map(|f| response_model(*f, s0, t2)).collect();
        let mut curve = Self::from_points(frequencies, responsivity)?;
        curve.dc_responsivity = s0;
        curve.t2 = t2;
        Ok(curve)
    }

    pub fn hwhm(&self) -> f64 {
        1.0 / (2.0 * PI * self.t2)
    }

    pub fn model_at(&self, f: f64) -> f64 {
        response_model(f, self.dc_responsivity, self.t2)
    }

    /// Interpolated responsivity, log-log between positive grid points.
    /// `None` outside the measured range.
    pub fn interpolate(&self, f: f64) -> Option<f64> {
        let fr = &self.frequencies;
        let r = &self.responsivity;
        if f < fr[0] || f > fr[fr.len() - 1] {
            return None;
        }
        let k = fr.partition_point(|x| *x <= f).min(fr.len() - 1).max(1);
        let (f0, f1, r0, r1) = (fr[k - 1], fr[k], r[k - 1], r[k]);
        if f == f0 {
            return Some(r0);
        }
        if f == f1 {
            return Some(r1);
        }
        if f0 <= 0.0 {
            return Some(r0 + (r1 - r0) * (f - f0) / (f1 - f0));
        }
        let t = (f / f0).ln() / (f1 / f0).ln();
        Some((r0.ln() + t * (r1 / r0).ln()).exp())
    }
}

/// Linear least squares on `1/R² = a + b·f²`, rows scaled by R² so every point
/// carries equal relative weight. Returns `(R0, T2)`.
fn fit_response(frequencies: &[f64], responsivity: &[f64]) -> Result<(f64, f64)> {
    let mut ata = Matrix2::zeros();
    let mut atb = Vector2::zeros();
    for (f, r) in frequencies.iter().zip(responsivity) {
        let r2 = r * r;
        let row = Vector2::new(r2, r2 * f * f);
        ata += row * row.transpose();
        atb += row;
    }
    let sol = ata
        .lu()
        .solve(&atb)
        .ok_or_else(|| Error::Numerical("response fit is singular".into()))?;
    let (a, b) = (sol[0], sol[1]);
    if !(a > 0.0 && b > 0.0) {
        return Err(Error::Numerical(format!("response does not follow a square-root Lorentzian (a={a:.3e}, b={b:.3e})")));
    }
    Ok((1.0 / a.sqrt(), (b / a).sqrt() / (2.0 * PI)))
}

/// Largest precession phase excursion allowed for a calibration tone.
pub const MAX_PHASE_INDEX: f64 = 0.1;

/// Calibration settings shared by every tone of a sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    /// rms field of each tone, T.
    pub field_rms: f64,
    pub duration: f64,
    pub sample_rate: f64,
    pub seed: u64,
    pub sources: NoiseSources,
    pub frame: Frame,
}

/// Full-noise, carrier-resolved calibration sweep.
pub fn measure_response(
    cfg: &ExperimentConfig,
    frequencies: &[f64],
    field_rms: f64,
    duration: f64,
    sample_rate: f64,
    seed: u64,
) -> Result<ResponseCurve> {
    let cal = Calibration { field_rms, duration, sample_rate, seed, sources: NoiseSources::ALL, frame: Frame::Carrier };
    measure_response_with(cfg, frequencies, &cal)
}

/// Demodulated out-of-phase channel of a polarimeter record.
pub(crate) fn demodulate(cfg: &ExperimentConfig, field: &FieldWaveform, duration: f64, fs: f64, seed: u64, sources: NoiseSources, frame: Frame) -> Result<LockInOutput> {
    let f_ref = cfg.larmor_frequency();
    let (cutoff, order) = (cfg.analysis.lockin_cutoff, cfg.analysis.lockin_order);
    // the carrier is S·sin(ωt + θ) = S·cos(ωt + θ - π/2)
    let phase = -PI / 2.0;
    let out = match frame {
        Frame::Carrier => {
            let ts = synthesize_polarimeter_output_with(cfg, field, duration, fs, seed, sources)?;
            lock_in_demodulate(&ts, f_ref, phase, cutoff, order)?
        }
        Frame::Baseband => {
            let env = synthesize_polarimeter_envelope(cfg, field, duration, fs, seed, sources)?;
            lock_in_envelope(&env, f_ref, phase, cutoff, order)?
        }
    };
    Ok(out.settled())
}

pub fn measure_response_with(cfg: &ExperimentConfig, frequencies: &[f64], cal: &Calibration) -> Result<ResponseCurve> {
    ensure(!frequencies.is_empty(), || "no calibration frequencies".into())?;
    ensure(frequencies.windows(2).all(|w| w[1] > w[0]), || "calibration frequencies must increase".into())?;
    let f_min = frequencies[0];
    let f_max = frequencies[frequencies.len() - 1];
    ensure(f_min > 0.0, || "calibration frequencies must be positive".into())?;
    ensure(cal.field_rms > 0.0, || "calibration field must be positive".into())?;
    ensure(cal.duration * f_min >= 20.0, || {
        format!("{} s resolves only {:.1} periods of {f_min} Hz; need 20", cal.duration, cal.duration * f_min)
    })?;
    ensure(f_max <= cfg.analysis.lockin_cutoff, || {
        format!("calibration tone {f_max} Hz lies above the lock-in cutoff {} Hz", cfg.analysis.lockin_cutoff)
    })?;
    let index = 2.0 * PI * cfg.species.gyromagnetic_ratio * cfg.magnetometer.t2 * cal.field_rms * 2f64.sqrt();
    ensure(index < MAX_PHASE_INDEX, || {
        format!("calibration field drives a phase index of {index:.3} rad, above the linear limit {MAX_PHASE_INDEX}")
    })?;
    ensure(cfg.magnetometer.carrier_amplitude() > 0.0, || "no carrier: polarization or signal amplitude is zero".into())?;

    let mut responsivity = Vec::with_capacity(frequencies.len());
    for (k, f) in frequencies.iter().enumerate() {
        let seed = child_seed(cal.seed, &format!("calibration_{k}"));
        let field = FieldWaveform::tone(*f, cal.field_rms);
        let out = demodulate(cfg, &field, cal.duration, cal.sample_rate, seed, cal.sources, cal.frame)?;
        let q = &out.quadrature;
        let mut segment = prev_power_of_two(q.len() / 2);
        if *f < 8.0 * q.sample_rate / segment as f64 {
            segment = prev_power_of_two(q.len());
        }
        ensure(segment >= 64, || "calibration record too short".into())?;
        let sp = welch_psd(q, segment, 0.5, Window::Hann)?;
        let df = sp.frequencies[1];
        ensure(*f >= 6.0 * df, || format!("tone {f} Hz is within 6 bins of DC (bin width {df} Hz)"))?;
        let power = sp.tone_power(*f, 4)? / out.power_gain(*f);
        if !(power > 0.0) {
            return Err(Error::Numerical(format!("calibration tone at {f} Hz is buried in noise")));
        }
        responsivity.push(power.sqrt() / cal.field_rms);
    }
    ResponseCurve::from_points(frequencies.to_vec(), responsivity)
}

pub(crate) fn prev_power_of_two(n: usize) -> usize {
    if n == 0 {
        0
    } else {
        1 << (usize::BITS - 1 - n.leading_zeros())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn model_values() {
        let t2 = 1.0 / (2.0 * PI * 420.0);
        assert_eq!(response_model(0.0, 3.0, t2), 3.0);
        assert!((response_model(420.0, 3.0, t2) - 3.0 / 2f64.sqrt()).abs() < 1e-12);
        assert!((response_model(4.0 * 420.0, 3.0, t2) - 3.0 / 17f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn fit_recovers_model() {
        let t2 = 3.789e-4;
        let f: Vec<f64> = (0..24).map(|k| 10.0 * 1000f64.powf(k as f64 / 23.0)).collect();
        let r: Vec<f64> = f.iter().map(|x| response_model(*x, 2.5e7, t2)).collect();
        let curve = ResponseCurve::from_points(f, r).unwrap();
        assert!((curve.dc_responsivity / 2.5e7 - 1.0).abs() < 1e-9);
        assert!((curve.t2 / t2 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn flat_response_is_not_lorentzian() {
        assert!(ResponseCurve::from_points(vec![1.0, 2.0, 3.0], vec![1.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn log_interpolation_is_exact_for_power_laws() {
        let f = vec![10.0, 100.0, 1000.0];
        let r: Vec<f64> = f.iter().map(|x| 5.0 / x).collect();
        let curve = ResponseCurve { frequencies: f, responsivity: r, dc_responsivity: 1.0, t2: 1.0 };
        assert!((curve.interpolate(37.0).unwrap() - 5.0 / 37.0).abs() < 1e-12);
        assert!(curve.interpolate(5.0).is_none());
        assert!(curve.interpolate(2000.0).is_none());
        assert_eq!(curve.interpolate(1000.0).unwrap(), 5.0 / 1000.0);
    }

    #[test]
    fn calibration_preconditions() {
        let cfg = ExperimentConfig::reference();
        let cal = |field_rms, duration| Calibration {
            field_rms,
            duration,
            sample_rate: 250e3,
            seed: 1,
            sources: NoiseSources::NONE,
            frame: Frame::Carrier,
        };
        assert!(measure_response_with(&cfg, &[100.0], &cal(10e-9, 1.0)).is_err());
        assert!(measure_response_with(&cfg, &[10.0], &cal(1e-9, 1.0)).is_err());
        assert!(measure_response_with(&cfg, &[20e3], &cal(1e-9, 1.0)).is_err());
    }

    #[test]
    fn noiseless_chain_follows_model() {
        let cfg = ExperimentConfig::reference();
        let hwhm = 1.0 / (2.0 * PI * cfg.magnetometer.t2);
        let freqs: Vec<f64> = [0.1, 0.5, 1.0, 2.0, 4.0].iter().map(|k| k * hwhm).collect();
        let cal = Calibration {
            field_rms: 1e-9,
            duration: 1.0,
            sample_rate: 250e3,
            seed: 3,
            sources: NoiseSources::NONE,
            frame: Frame::Carrier,
        };
        let curve = measure_response_with(&cfg, &freqs, &cal).unwrap();
        let s0 = cfg.magnetometer.carrier_amplitude() * 2.0 * PI * cfg.species.gyromagnetic_ratio * cfg.magnetometer.t2;
        for (f, r) in curve.frequencies.iter().zip(&curve.responsivity) {
            let want = response_model(*f, s0, cfg.magnetometer.t2);
            assert!((r / want - 1.0).abs() < 0.02, "{f} Hz: {r} vs {want}");
        }
        let ratio = curve.responsivity[0] / curve.responsivity[4];
        let want = (1.0 + 0.01f64).sqrt().recip() * 17f64.sqrt();
        assert!((ratio / want - 1.0).abs() < 0.03);

        let doubled = measure_response_with(&cfg, &freqs, &Calibration { field_rms: 2e-9, ..cal }).unwrap();
        for (a, b) in curve.responsivity.iter().zip(&doubled.responsivity) {
            assert!((a / b - 1.0).abs() < 0.01);
        }
    }

    proptest! {
        #[test]
        fn model_is_decreasing(f in 0.0f64..1e5, df in 1e-3f64..1e3, t2 in 1e-5f64..1e-1) {
            prop_assert!(response_model(f + df, 1.0, t2) < response_model(f, 1.0, t2));
        }
    }
}
