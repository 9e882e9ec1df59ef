use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{ensure, Result};
use crate::series::{Envelope, TimeSeries};

/// Demodulated quadratures. `in_phase` is `LP[2x·cos(2πf t + φ)]`,
/// `quadrature` is `LP[2x·sin(2πf t + φ)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LockInOutput {
    pub in_phase: TimeSeries,
    pub quadrature: TimeSeries,
    pub reference_frequency: f64,
    pub reference_phase: f64,
    pub lowpass_cutoff: f64,
    pub order: usize,
}

impl LockInOutput {
    /// Samples discarded as filter transient, `10/cutoff`.
    pub fn settling_samples(&self) -> usize {
        (10.0 / self.lowpass_cutoff * self.in_phase.sample_rate).ceil() as usize
    }

    /// Both channels with the settling transient removed.
    pub fn settled(&self) -> LockInOutput {
        let n = self.settling_samples();
        LockInOutput {
            in_phase: self.in_phase.skip(n),
            quadrature: self.quadrature.skip(n),
            ..self.clone()
        }
    }

    /// Power gain of the lowpass at baseband frequency `f`.
    pub fn power_gain(&self, f: f64) -> f64 {
        lowpass_power_gain(f, self.lowpass_cutoff, self.order, self.in_phase.sample_rate)
    }
}

/// Smoothing constant of one stage of the cascade.
fn stage_alpha(cutoff: f64, order: usize, sample_rate: f64) -> f64 {
    // per-stage corner placed so the whole stack is -3 dB at `cutoff`
    let pole = cutoff / (2f64.powf(1.0 / order as f64) - 1.0).sqrt();
    1.0 - (-2.0 * PI * pole / sample_rate).exp()
}

/// `|H(f)|²` of the discrete cascaded single-pole filter.
pub fn lowpass_power_gain(f: f64, cutoff: f64, order: usize, sample_rate: f64) -> f64 {
    let a = stage_alpha(cutoff, order, sample_rate);
    let r = 1.0 - a;
    let one = a * a / (1.0 - 2.0 * r * (2.0 * PI * f / sample_rate).cos() + r * r);
    one.powi(order as i32)
}

struct Cascade {
    alpha: f64,
    state: Vec<f64>,
}

impl Cascade {
    fn new(cutoff: f64, order: usize, sample_rate: f64) -> Self {
        Self { alpha: stage_alpha(cutoff, order, sample_rate), state: vec![0.0; order] }
    }

    fn step(&mut self, x: f64) -> f64 {
        let mut v = x;
        for y in &mut self.state {
            *y += self.alpha * (v - *y);
            v = *y;
        }
        v
    }
}

fn check(f_ref: f64, cutoff: f64, order: usize, sample_rate: f64) -> Result<()> {
    ensure(f_ref > 0.0 && f_ref < sample_rate / 2.0, || {
        format!("reference {f_ref} Hz must lie in (0, Nyquist = {} Hz)", sample_rate / 2.0)
    })?;
    ensure(cutoff > 0.0 && cutoff < f_ref, || format!("cutoff {cutoff} Hz must lie in (0, f_ref = {f_ref} Hz)"))?;
    ensure(order >= 1, || "filter order must be at least 1".into())
}

pub fn lock_in_demodulate(ts: &TimeSeries, f_ref: f64, phase: f64, cutoff: f64, order: usize) -> Result<LockInOutput> {
    let fs = ts.sample_rate;
    check(f_ref, cutoff, order, fs)?;
    let mut lp_i = Cascade::new(cutoff, order, fs);
    let mut lp_q = Cascade::new(cutoff, order, fs);
    let mut i_out = Vec::with_capacity(ts.len());
    let mut q_out = Vec::with_capacity(ts.len());
    for (n, x) in ts.samples.iter().enumerate() {
        let cycles = f_ref * (n as f64 / fs);
        let (s, c) = (2.0 * PI * (cycles - cycles.floor()) + phase).sin_cos();
        i_out.push(lp_i.step(2.0 * x * c));
        q_out.push(lp_q.step(2.0 * x * s));
    }
    let wrap = |v| TimeSeries { samples: v, sample_rate: fs, unit: ts.unit, start_time: ts.start_time };
    Ok(LockInOutput {
        in_phase: wrap(i_out),
        quadrature: wrap(q_out),
        reference_frequency: f_ref,
        reference_phase: phase,
        lowpass_cutoff: cutoff,
        order,
    })
}

/// Lock-in applied to the passband signal represented by `env`; the
/// sum-frequency products are absent by construction.
pub fn lock_in_envelope(env: &Envelope, f_ref: f64, phase: f64, cutoff: f64, order: usize) -> Result<LockInOutput> {
    let fs = env.sample_rate;
    ensure(f_ref > 0.0, || format!("reference must be positive, got {f_ref}"))?;
    ensure(cutoff > 0.0 && cutoff < fs / 2.0, || format!("cutoff {cutoff} Hz must lie below {} Hz", fs / 2.0))?;
    ensure(order >= 1, || "filter order must be at least 1".into())?;
    let offset = env.carrier_frequency - f_ref;
    let mut lp_i = Cascade::new(cutoff, order, fs);
    let mut lp_q = Cascade::new(cutoff, order, fs);
    let mut i_out = Vec::with_capacity(env.len());
    let mut q_out = Vec::with_capacity(env.len());
    for (n, u) in env.samples.iter().enumerate() {
        let cycles = offset * (n as f64 / fs);
        let rot = Complex64::from_polar(1.0, 2.0 * PI * (cycles - cycles.floor()) - phase);
        let v = u * rot;
        i_out.push(lp_i.step(v.re));
        q_out.push(lp_q.step(-v.im));
    }
    let wrap = |v| TimeSeries::new(v, fs, env.unit);
    Ok(LockInOutput {
        in_phase: wrap(i_out)?,
        quadrature: wrap(q_out)?,
        reference_frequency: f_ref,
        reference_phase: phase,
        lowpass_cutoff: cutoff,
        order,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{welch_psd, welch_psd_envelope, Window};
    use crate::series::Unit;
    use crate::synthesis::{simulate_spin_noise, spin_noise_envelope, NoiseProcessParams};

    fn tone(a: f64, f: f64, phase: f64, fs: f64, n: usize) -> TimeSeries {
        let samples = (0..n).map(|i| a * (2.0 * PI * f * i as f64 / fs + phase).cos()).collect();
        TimeSeries::new(samples, fs, Unit::Rad).unwrap()
    }

    fn tail_mean(ts: &TimeSeries) -> f64 {
        let tail = &ts.samples[ts.len() / 2..];
        tail.iter().sum::<f64>() / tail.len() as f64
    }

    #[test]
    fn matched_phase_gives_amplitude() {
        let ts = tone(0.37, 31e3, 0.4, 250e3, 50_000);
        let out = lock_in_demodulate(&ts, 31e3, 0.4, 1e3, 4).unwrap().settled();
        assert!((tail_mean(&out.in_phase) / 0.37 - 1.0).abs() < 1e-3);
        assert!(tail_mean(&out.quadrature).abs() < 1e-3 * 0.37);
    }

    #[test]
    fn ninety_degree_offset_moves_to_quadrature() {
        let ts = tone(1.2, 31e3, 0.0, 250e3, 50_000);
        let out = lock_in_demodulate(&ts, 31e3, PI / 2.0, 1e3, 4).unwrap().settled();
        assert!(tail_mean(&out.in_phase).abs() < 1e-3 * 1.2);
        assert!((tail_mean(&out.quadrature) / 1.2 - 1.0).abs() < 1e-3);
    }

    #[test]
    fn cutoff_is_minus_three_db() {
        for order in [1, 2, 4, 6] {
            let g = lowpass_power_gain(1e3, 1e3, order, 1e7);
            assert!((g - 0.5).abs() < 1e-3, "order {order}: {g}");
            assert!((lowpass_power_gain(0.0, 1e3, order, 250e3) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_references() {
        let ts = tone(1.0, 31e3, 0.0, 250e3, 1000);
        assert!(lock_in_demodulate(&ts, 200e3, 0.0, 1e3, 4).is_err());
        assert!(lock_in_demodulate(&ts, 31e3, 0.0, 40e3, 4).is_err());
        assert!(lock_in_demodulate(&ts, 31e3, 0.0, 1e3, 0).is_err());
    }

    #[test]
    fn phase_modulation_appears_in_quadrature() {
        // A·sin(ωt + m·sin Ωt) ≈ A·sin ωt + A·m·sin Ωt·cos ωt
        let (fs, f0, fm, a, m) = (250e3, 31e3, 100.0, 0.5, 0.01);
        let n = 250_000;
        let samples = (0..n)
            .map(|i| {
                let t = i as f64 / fs;
                a * (2.0 * PI * f0 * t + m * (2.0 * PI * fm * t).sin()).sin()
            })
            .collect();
        let ts = TimeSeries::new(samples, fs, Unit::Rad).unwrap();
        let out = lock_in_demodulate(&ts, f0, -PI / 2.0, 1e3, 4).unwrap().settled();
        let q = &out.quadrature;
        // project onto sin Ωt over whole periods
        let periods = (q.len() as f64 / fs * fm).floor();
        let len = (periods / fm * fs) as usize;
        let (mut s, mut c) = (0.0, 0.0);
        for i in 0..len {
            let arg = 2.0 * PI * fm * q.time(i);
            s += q.samples[i] * arg.sin();
            c += q.samples[i] * arg.cos();
        }
        let amp = 2.0 * s.hypot(c) / len as f64 / out.power_gain(fm).sqrt();
        assert!((amp / (m * a) - 1.0).abs() < 0.02, "{amp}");
    }

    #[test]
    fn demodulation_is_linear() {
        let a = tone(0.3, 31e3, 0.2, 250e3, 20_000);
        let b = tone(0.9, 30.5e3, 1.1, 250e3, 20_000);
        let sum = TimeSeries::new(
            a.samples.iter().zip(&b.samples).map(|(x, y)| 2.0 * x - 0.5 * y).collect(),
            250e3,
            Unit::Rad,
        )
        .unwrap();
        let la = lock_in_demodulate(&a, 31e3, 0.1, 2e3, 4).unwrap().settled();
        let lb = lock_in_demodulate(&b, 31e3, 0.1, 2e3, 4).unwrap().settled();
        let ls = lock_in_demodulate(&sum, 31e3, 0.1, 2e3, 4).unwrap().settled();
        for k in 0..ls.quadrature.len() {
            let expect = 2.0 * la.quadrature.samples[k] - 0.5 * lb.quadrature.samples[k];
            assert!((ls.quadrature.samples[k] - expect).abs() < 1e-12);
            let expect = 2.0 * la.in_phase.samples[k] - 0.5 * lb.in_phase.samples[k];
            assert!((ls.in_phase.samples[k] - expect).abs() < 1e-12);
        }
    }

    fn lorentz_params() -> NoiseProcessParams {
        NoiseProcessParams {
            center_frequency: 31e3,
            correlation_time: 1.0 / (2.0 * PI * 340.0),
            rms_a: 1e-6,
            rms_b: 0.5e-6,
        }
    }

    #[test]
    fn demodulated_psd_is_shifted_input_psd() {
        let params = lorentz_params();
        let ts = simulate_spin_noise(&params, 20.0, 250e3, 11).unwrap();
        let raw = welch_psd(&ts, 16384, 0.5, Window::Hann).unwrap();
        let out = lock_in_demodulate(&ts, 31e3, 0.0, 10e3, 4).unwrap().settled();
        let q = welch_psd(&out.quadrature, 16384, 0.5, Window::Hann).unwrap();
        for f in [150.0, 340.0, 700.0, 1500.0] {
            let band = |sp: &crate::dsp::Spectrum, lo: f64, hi: f64| {
                crate::dsp::integrate_band(sp, lo, hi, None).unwrap() / (hi - lo)
            };
            let shifted = band(&raw, 31e3 + f - 100.0, 31e3 + f + 100.0) + band(&raw, 31e3 - f - 100.0, 31e3 - f + 100.0);
            let demod = band(&q, f - 100.0, f + 100.0) / out.power_gain(f);
            assert!((demod / shifted - 1.0).abs() < 0.05, "f={f}: {demod} vs {shifted}");
        }
    }

    #[test]
    fn envelope_lockin_matches_carrier_lockin() {
        let params = lorentz_params();
        let ts = simulate_spin_noise(&params, 20.0, 250e3, 12).unwrap();
        let env = spin_noise_envelope(&params, 20.0, 50e3, 13).unwrap();
        let a = lock_in_demodulate(&ts, 31e3, 0.3, 10e3, 4).unwrap().settled();
        let b = lock_in_envelope(&env, 31e3, 0.3, 10e3, 4).unwrap().settled();
        let pa = welch_psd(&a.quadrature, 16384, 0.5, Window::Hann).unwrap();
        let pb = welch_psd(&b.quadrature, 4096, 0.5, Window::Hann).unwrap();
        for f in [200.0, 600.0, 1200.0] {
            let avg = |sp: &crate::dsp::Spectrum, gain: f64| {
                crate::dsp::integrate_band(sp, f - 100.0, f + 100.0, None).unwrap() / 200.0 / gain
            };
            let ra = avg(&pa, a.power_gain(f));
            let rb = avg(&pb, b.power_gain(f));
            assert!((ra / rb - 1.0).abs() < 0.08, "f={f}: {ra} vs {rb}");
        }
        let pe = welch_psd_envelope(&env, 4096, 0.5, Window::Hann).unwrap();
        assert!(pe.frequencies[0] > 0.0);
    }

    #[test]
    fn envelope_tone_normalization() {
        // Re[u e^{iωt}] with u = A e^{iφ} is A cos(ωt + φ)
        let u = vec![Complex64::from_polar(0.8, 0.25); 20_000];
        let env = Envelope::new(u, 50e3, 31e3, Unit::Rad).unwrap();
        let out = lock_in_envelope(&env, 31e3, 0.25, 1e3, 4).unwrap().settled();
        assert!((tail_mean(&out.in_phase) / 0.8 - 1.0).abs() < 1e-3);
        assert!(tail_mean(&out.quadrature).abs() < 1e-3);
        let out = lock_in_envelope(&env, 31e3, 0.25 + PI / 2.0, 1e3, 4).unwrap().settled();
        assert!((tail_mean(&out.quadrature) / 0.8 - 1.0).abs() < 1e-3);
    }
}
