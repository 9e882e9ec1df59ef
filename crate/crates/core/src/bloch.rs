//! Fixed-step Bloch equation integrator for a Bell-Bloom pumped vapor.
//!
//! ```text
//! dP/dt = 2πγ·P × B(t) - P⊥/T2 - Pz/T1 + R(t)·(x̂ - P)
//! ```
//!
//! with `B = (B_z + b(t))·ẑ`, the pump along `x̂` and a sinusoidally modulated
//! pumping rate `R(t) = R̄·(1 + depth·cos 2πf_p t)`. T1 is taken equal to T2 and
//! the unpumped equilibrium is unpolarized.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{ensure, Result};
use crate::series::{TimeSeries, Unit};
use crate::synthesis::FieldWaveform;

/// Modulated optical pumping rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PumpWaveform {
    /// Mean rate R̄, 1/s.
    pub mean_rate: f64,
    /// Fractional modulation depth in [0, 1].
    pub depth: f64,
    pub frequency: f64,
}

impl PumpWaveform {
    pub fn off() -> Self {
        Self { mean_rate: 0.0, depth: 0.0, frequency: 0.0 }
    }

    pub fn rate(&self, t: f64) -> f64 {
        self.mean_rate * (1.0 + self.depth * (2.0 * PI * self.frequency * t).cos())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlochTrajectory {
    pub px: TimeSeries,
    pub py: TimeSeries,
    pub pz: TimeSeries,
}

/// Integrates from an unpolarized start.
pub fn integrate_bloch(
    cfg: &ExperimentConfig,
    field: &FieldWaveform,
    pump: &PumpWaveform,
    duration: f64,
    sample_rate: f64,
) -> Result<BlochTrajectory> {
    integrate_bloch_from(cfg, field, pump, [0.0; 3], duration, sample_rate)
}

pub fn integrate_bloch_from(
    cfg: &ExperimentConfig,
    field: &FieldWaveform,
    pump: &PumpWaveform,
    initial: [f64; 3],
    duration: f64,
    sample_rate: f64,
) -> Result<BlochTrajectory> {
    field.validate()?;
    ensure(pump.mean_rate >= 0.0 && (0.0..=1.0).contains(&pump.depth), || {
        "pump rate must be non-negative and depth within [0, 1]".into()
    })?;
    let larmor = cfg.larmor_frequency();
    ensure(sample_rate >= 16.0 * larmor, || {
        format!("step too coarse: fs = {sample_rate} Hz, need >= 16·f_L = {} Hz", 16.0 * larmor)
    })?;
    ensure(sample_rate >= 16.0 * pump.frequency, || "step too coarse for the pump modulation".into())?;
    let n = (duration * sample_rate).round() as usize;
    ensure(n >= 2, || "duration too short".into())?;

    let omega = 2.0 * PI * cfg.species.gyromagnetic_ratio;
    let bz = cfg.magnetometer.field;
    let relax = 1.0 / cfg.magnetometer.t2;
    let deriv = |t: f64, p: [f64; 3]| -> [f64; 3] {
        let w = omega * (bz + field.value_at(t));
        let r = pump.rate(t);
        [
            w * p[1] - relax * p[0] + r * (1.0 - p[0]),
            -w * p[0] - relax * p[1] - r * p[1],
            -relax * p[2] - r * p[2],
        ]
    };
    let axpy = |p: [f64; 3], k: [f64; 3], s: f64| [p[0] + s * k[0], p[1] + s * k[1], p[2] + s * k[2]];

    let h = 1.0 / sample_rate;
    let mut p = initial;
    let mut out = [Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n)];
    for i in 0..n {
        for (o, v) in out.iter_mut().zip(p) {
            o.push(v);
        }
        let t = i as f64 * h;
        let k1 = deriv(t, p);
        let k2 = deriv(t + 0.5 * h, axpy(p, k1, 0.5 * h));
        let k3 = deriv(t + 0.5 * h, axpy(p, k2, 0.5 * h));
        let k4 = deriv(t + h, axpy(p, k3, h));
        for c in 0..3 {
            p[c] += h / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]);
        }
    }
    let [px, py, pz] = out;
    Ok(BlochTrajectory {
        px: TimeSeries::new(px, sample_rate, Unit::Dimensionless)?,
        py: TimeSeries::new(py, sample_rate, Unit::Dimensionless)?,
        pz: TimeSeries::new(pz, sample_rate, Unit::Dimensionless)?,
    })
}
