//! Synthetic polarimeter records.
//!
//! Spin-projection noise of each hyperfine manifold is a complex
//! Ornstein-Uhlenbeck envelope `z_k(t)` with correlation time `τ = T2`,
//! advanced with the exact conditional update
//!
//! ```text
//! z[n+1] = z[n]·e^{-Δt/τ} + σ·sqrt(1 - e^{-2Δt/τ})·ξ[n],   ξ ~ CN(0, 1)
//! ```
//!
//! so the Lorentzian width is exact at any step. The a-manifold rotates at
//! `+f0`, the b-manifold at `-f0`; with `E|z_k|^2 = σ_k^2` the rotation signal
//! `φ = √2·Re[z_a e^{+iω0 t}] - √2·Re[z_b e^{-iω0 t}]` has variance
//! `σ_a^2 + σ_b^2` and a one-sided PSD that is a Lorentzian of half-width
//! `1/(2πτ)` centred on `f0`.
//!
//! Two frames are available. The carrier-resolved frame produces the real
//! digitized polarimeter signal. The baseband frame produces the complex
//! envelope `u(t)` of that signal, `φ(t) = Re[u(t)·e^{iω0 t}]`, at a much lower
//! sample rate.
//!
//! The Bell-Bloom carrier is `S0·P·sin(ω0 t + θ(t))`. A small field excursion
//! `b(t)` along the bias detunes the precession from the fixed-frequency pump,
//! and the precession phase relaxes back toward the pump phase at `1/T2`:
//!
//! ```text
//! dθ/dt = 2πγ·b(t) - θ/T2
//! ```
//!
//! which is the small-signal limit of the driven Bloch equations and yields the
//! square-root-Lorentzian field response.

use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{ensure, Error, Result};
use crate::rng::stream;
use crate::series::{Envelope, TimeSeries, Unit};

/// Simulation frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Frame {
    #[default]
    Carrier,
    Baseband,
}

impl std::str::FromStr for Frame {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "carrier" => Ok(Frame::Carrier),
            "baseband" => Ok(Frame::Baseband),
            other => Err(Error::invalid(format!("unknown frame '{other}' (expected carrier or baseband)"))),
        }
    }
}

/// Sinusoidal field component `√2·rms·sin(2πft + phase)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tone {
    pub frequency: f64,
    /// rms amplitude, T.
    pub rms: f64,
    pub phase: f64,
}

/// Field applied along the bias direction on top of `B_z`, in tesla.
#[derive(Debug, Clone, PartialEq)]
pub enum FieldWaveform {
    Constant(f64),
    Tone(Tone),
    Tones(Vec<Tone>),
    /// Sampled excursion; must share the synthesis sample rate.
    Sampled(TimeSeries),
}

impl FieldWaveform {
    pub fn none() -> Self {
        FieldWaveform::Constant(0.0)
    }

    pub fn tone(frequency: f64, rms: f64) -> Self {
        FieldWaveform::Tone(Tone { frequency, rms, phase: 0.0 })
    }

    pub fn validate(&self) -> Result<()> {
        let check_tone = |t: &Tone| {
            ensure(t.frequency > 0.0, || format!("tone frequency must be positive, got {}", t.frequency))?;
            ensure(t.rms >= 0.0, || format!("tone amplitude must be non-negative, got {}", t.rms))
        };
        match self {
            FieldWaveform::Constant(_) => Ok(()),
            FieldWaveform::Tone(t) => check_tone(t),
            FieldWaveform::Tones(ts) => ts.iter().try_for_each(check_tone),
            FieldWaveform::Sampled(ts) => ensure(ts.unit == Unit::Tesla, || "sampled field must be in tesla".into()),
        }
    }

    fn tones(&self) -> &[Tone] {
        match self {
            FieldWaveform::Tone(t) => std::slice::from_ref(t),
            FieldWaveform::Tones(ts) => ts,
            _ => &[],
        }
    }

    /// Field value at time `t`; sampled waveforms are linearly interpolated.
    pub fn value_at(&self, t: f64) -> f64 {
        match self {
            FieldWaveform::Constant(b) => *b,
            FieldWaveform::Sampled(ts) => {
                if ts.is_empty() {
                    return 0.0;
                }
                let x = ((t - ts.start_time) * ts.sample_rate).max(0.0);
                let i = x.floor() as usize;
                if i + 1 >= ts.len() {
                    return *ts.samples.last().unwrap();
                }
                let frac = x - i as f64;
                ts.samples[i] * (1.0 - frac) + ts.samples[i + 1] * frac
            }
            _ => self
                .tones()
                .iter()
                .map(|tone| SQRT_2 * tone.rms * (2.0 * PI * tone.frequency * t + tone.phase).sin())
                .sum(),
        }
    }

    /// Precession phase `θ(t)` relative to the pump at `len` sample instants.
    ///
    /// Tones use the exact steady-state solution. Sampled waveforms use the
    /// exponential integrator with trapezoidal forcing, started in steady state
    /// for the first sample.
    pub fn carrier_phase(&self, gyromagnetic_ratio: f64, t2: f64, len: usize, sample_rate: f64) -> Result<Vec<f64>> {
        self.validate()?;
        let gain = 2.0 * PI * gyromagnetic_ratio * t2;
        match self {
            FieldWaveform::Constant(b) => Ok(vec![gain * b; len]),
            FieldWaveform::Sampled(ts) => {
                ensure(ts.sample_rate == sample_rate, || {
                    format!("sampled field rate {} differs from synthesis rate {sample_rate}", ts.sample_rate)
                })?;
                ensure(ts.len() >= len, || format!("sampled field has {} samples, need {len}", ts.len()))?;
                let decay = (-1.0 / (sample_rate * t2)).exp();
                let mut theta = Vec::with_capacity(len);
                let mut state = gain * ts.samples.first().copied().unwrap_or(0.0);
                for n in 0..len {
                    if n > 0 {
                        let forcing = 0.5 * (ts.samples[n - 1] + ts.samples[n]);
                        state = state * decay + gain * (1.0 - decay) * forcing;
                    }
                    theta.push(state);
                }
                Ok(theta)
            }
            _ => {
                let responses: Vec<(f64, f64, f64)> = self
                    .tones()
                    .iter()
                    .map(|tone| {
                        let x = 2.0 * PI * tone.frequency * t2;
                        let amp = gain * SQRT_2 * tone.rms / (1.0 + x * x).sqrt();
                        (amp, 2.0 * PI * tone.frequency, tone.phase - x.atan())
                    })
                    .collect();
                Ok((0..len)
                    .map(|n| {
                        let t = n as f64 / sample_rate;
                        responses.iter().map(|(amp, w, ph)| amp * (w * t + ph).sin()).sum()
                    })
                    .collect())
            }
        }
    }
}

/// Spin-noise process for the two counter-rotating manifolds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseProcessParams {
    /// Larmor frequency, Hz.
    pub center_frequency: f64,
    /// Correlation time τ (= T2), s.
    pub correlation_time: f64,
    /// rms rotation of the a-manifold (rotating at +f0), rad.
    pub rms_a: f64,
    /// rms rotation of the b-manifold (rotating at -f0), rad.
    pub rms_b: f64,
}

impl NoiseProcessParams {
    pub fn validate(&self) -> Result<()> {
        ensure(self.center_frequency > 0.0, || "center frequency must be positive".into())?;
        ensure(self.correlation_time > 0.0, || "correlation time must be positive".into())?;
        ensure(self.rms_a >= 0.0 && self.rms_b >= 0.0, || "rms values must be non-negative".into())
    }

    pub fn total_rms(&self) -> f64 {
        self.rms_a.hypot(self.rms_b)
    }

    /// Lorentzian half-width `1/(2πτ)`, Hz.
    pub fn hwhm(&self) -> f64 {
        1.0 / (2.0 * PI * self.correlation_time)
    }
}

/// Which stochastic sources to include in a synthesized record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseSources {
    pub spin: bool,
    pub shot: bool,
}

impl NoiseSources {
    pub const ALL: NoiseSources = NoiseSources { spin: true, shot: true };
    pub const NONE: NoiseSources = NoiseSources { spin: false, shot: false };
}

/// Complex Ornstein-Uhlenbeck process with exact discretization.
#[derive(Debug, Clone)]
pub struct ComplexOu {
    decay: f64,
    innovation: f64,
    state: Complex64,
}

impl ComplexOu {
    /// Starts from the stationary distribution with `E|z|^2 = variance`.
    pub fn stationary<R: Rng>(correlation_time: f64, variance: f64, dt: f64, rng: &mut R) -> Self {
        let sigma = variance.sqrt();
        let decay = (-dt / correlation_time).exp();
        Self {
            decay,
            innovation: sigma * (1.0 - decay * decay).sqrt(),
            state: sigma * complex_normal(rng),
        }
    }

    pub fn value(&self) -> Complex64 {
        self.state
    }

    /// Returns the current value and advances one step.
    pub fn next<R: Rng>(&mut self, rng: &mut R) -> Complex64 {
        let current = self.state;
        self.state = self.state * self.decay + self.innovation * complex_normal(rng);
        current
    }
}

fn complex_normal<R: Rng>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * FRAC_1_SQRT_2
}

fn sample_count(duration: f64, sample_rate: f64) -> Result<usize> {
    ensure(duration > 0.0 && sample_rate > 0.0, || {
        format!("duration and sample rate must be positive, got {duration} s at {sample_rate} Hz")
    })?;
    let n = (duration * sample_rate).round() as usize;
    ensure(n >= 2, || format!("record of {duration} s at {sample_rate} Hz has fewer than two samples"))?;
    Ok(n)
}

/// `e^{i2πft}` at sample `n`, keeping the phase argument reduced to one cycle.
fn rotor(frequency: f64, n: usize, sample_rate: f64) -> Complex64 {
    let cycles = frequency * (n as f64 / sample_rate);
    Complex64::from_polar(1.0, 2.0 * PI * (cycles - cycles.floor()))
}

fn check_carrier_sampling(center: f64, sample_rate: f64) -> Result<()> {
    ensure(sample_rate >= 8.0 * center, || {
        format!("carrier-resolved synthesis needs fs >= 8·f0 = {} Hz, got {sample_rate}", 8.0 * center)
    })
}

/// Spin-noise contributions of each manifold, `(x_a, x_b)` with `φ = x_a - x_b`.
pub fn simulate_spin_noise_components(
    params: &NoiseProcessParams,
    duration: f64,
    sample_rate: f64,
    seed: u64,
) -> Result<(TimeSeries, TimeSeries)> {
    params.validate()?;
    check_carrier_sampling(params.center_frequency, sample_rate)?;
    let n = sample_count(duration, sample_rate)?;
    let dt = 1.0 / sample_rate;
    let mut rng_a = stream(seed, "spin_a");
    let mut rng_b = stream(seed, "spin_b");
    let mut ou_a = ComplexOu::stationary(params.correlation_time, params.rms_a.powi(2), dt, &mut rng_a);
    let mut ou_b = ComplexOu::stationary(params.correlation_time, params.rms_b.powi(2), dt, &mut rng_b);
    let mut xa = Vec::with_capacity(n);
    let mut xb = Vec::with_capacity(n);
    for i in 0..n {
        let r = rotor(params.center_frequency, i, sample_rate);
        xa.push(SQRT_2 * (ou_a.next(&mut rng_a) * r).re);
        xb.push(SQRT_2 * (ou_b.next(&mut rng_b) * r.conj()).re);
    }
    Ok((TimeSeries::new(xa, sample_rate, Unit::Rad)?, TimeSeries::new(xb, sample_rate, Unit::Rad)?))
}

/// Carrier-resolved spin-projection rotation noise, rad.
pub fn simulate_spin_noise(params: &NoiseProcessParams, duration: f64, sample_rate: f64, seed: u64) -> Result<TimeSeries> {
    let (a, b) = simulate_spin_noise_components(params, duration, sample_rate, seed)?;
    let samples = a.samples.iter().zip(&b.samples).map(|(x, y)| x - y).collect();
    TimeSeries::new(samples, sample_rate, Unit::Rad)
}

/// Baseband envelope of the spin noise, carrier at `params.center_frequency`.
pub fn spin_noise_envelope(params: &NoiseProcessParams, duration: f64, sample_rate: f64, seed: u64) -> Result<Envelope> {
    params.validate()?;
    let n = sample_count(duration, sample_rate)?;
    let dt = 1.0 / sample_rate;
    let mut rng_a = stream(seed, "spin_a");
    let mut rng_b = stream(seed, "spin_b");
    let mut ou_a = ComplexOu::stationary(params.correlation_time, params.rms_a.powi(2), dt, &mut rng_a);
    let mut ou_b = ComplexOu::stationary(params.correlation_time, params.rms_b.powi(2), dt, &mut rng_b);
    let samples = (0..n)
        .map(|_| SQRT_2 * (ou_a.next(&mut rng_a) - ou_b.next(&mut rng_b).conj()))
        .collect();
    Envelope::new(samples, sample_rate, params.center_frequency, Unit::Rad)
}

/// White photon shot noise with one-sided ASD `sqrt(1/(2Φη))`.
pub fn simulate_shot_noise(probe: &crate::physics::ProbeConfig, duration: f64, sample_rate: f64, seed: u64) -> Result<TimeSeries> {
    probe.validate()?;
    let n = sample_count(duration, sample_rate)?;
    let sigma = (sample_rate / (4.0 * probe.photon_flux * probe.quantum_efficiency)).sqrt();
    let mut rng = stream(seed, "shot");
    let samples = (0..n).map(|_| sigma * rng.sample::<f64, _>(StandardNormal)).collect();
    TimeSeries::new(samples, sample_rate, Unit::Rad)
}

/// Envelope of the shot noise: each quadrature white with one-sided PSD `1/(Φη)`.
pub fn shot_noise_envelope(
    probe: &crate::physics::ProbeConfig,
    carrier_frequency: f64,
    duration: f64,
    sample_rate: f64,
    seed: u64,
) -> Result<Envelope> {
    probe.validate()?;
    let n = sample_count(duration, sample_rate)?;
    let sigma = (sample_rate / (2.0 * probe.photon_flux * probe.quantum_efficiency)).sqrt();
    let mut rng = stream(seed, "shot");
    let samples = (0..n)
        .map(|_| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex64::new(re, im) * sigma
        })
        .collect();
    Envelope::new(samples, sample_rate, carrier_frequency, Unit::Rad)
}

/// Polarimeter output: Bell-Bloom carrier, spin noise and shot noise, rad.
pub fn synthesize_polarimeter_output(
    cfg: &ExperimentConfig,
    field: &FieldWaveform,
    duration: f64,
    sample_rate: f64,
    seed: u64,
) -> Result<TimeSeries> {
    synthesize_polarimeter_output_with(cfg, field, duration, sample_rate, seed, NoiseSources::ALL)
}

pub fn synthesize_polarimeter_output_with(
    cfg: &ExperimentConfig,
    field: &FieldWaveform,
    duration: f64,
    sample_rate: f64,
    seed: u64,
    sources: NoiseSources,
) -> Result<TimeSeries> {
    let params = cfg.spin_noise_params()?;
    check_carrier_sampling(params.center_frequency, sample_rate)?;
    let n = sample_count(duration, sample_rate)?;
    let amplitude = cfg.magnetometer.carrier_amplitude();
    let mut out = vec![0.0; n];
    if amplitude > 0.0 {
        let theta = field.carrier_phase(cfg.species.gyromagnetic_ratio, cfg.magnetometer.t2, n, sample_rate)?;
        for (i, (o, th)) in out.iter_mut().zip(&theta).enumerate() {
            *o = amplitude * (rotor(params.center_frequency, i, sample_rate) * Complex64::from_polar(1.0, *th)).im;
        }
    } else {
        field.validate()?;
    }
    let mut series = TimeSeries::new(out, sample_rate, Unit::Rad)?;
    if sources.spin && params.total_rms() > 0.0 {
        series.add_assign_checked(&simulate_spin_noise(&params, duration, sample_rate, seed)?)?;
    }
    if sources.shot {
        series.add_assign_checked(&simulate_shot_noise(&cfg.probe, duration, sample_rate, seed)?)?;
    }
    Ok(series)
}

/// Baseband counterpart of [`synthesize_polarimeter_output_with`].
pub fn synthesize_polarimeter_envelope(
    cfg: &ExperimentConfig,
    field: &FieldWaveform,
    duration: f64,
    sample_rate: f64,
    seed: u64,
    sources: NoiseSources,
) -> Result<Envelope> {
    let params = cfg.spin_noise_params()?;
    let n = sample_count(duration, sample_rate)?;
    let amplitude = cfg.magnetometer.carrier_amplitude();
    // A·sin(ω0 t + θ) = Re[-iA·e^{iθ}·e^{iω0 t}]
    let samples = if amplitude > 0.0 {
        field
            .carrier_phase(cfg.species.gyromagnetic_ratio, cfg.magnetometer.t2, n, sample_rate)?
            .into_iter()
            .map(|th| Complex64::new(0.0, -amplitude) * Complex64::from_polar(1.0, th))
            .collect()
    } else {
        field.validate()?;
        vec![Complex64::new(0.0, 0.0); n]
    };
    let mut env = Envelope::new(samples, sample_rate, params.center_frequency, Unit::Rad)?;
    if sources.spin && params.total_rms() > 0.0 {
        env = env.try_add(&spin_noise_envelope(&params, duration, sample_rate, seed)?)?;
    }
    if sources.shot {
        env = env.try_add(&shot_noise_envelope(&cfg.probe, params.center_frequency, duration, sample_rate, seed)?)?;
    }
    Ok(env)
}
