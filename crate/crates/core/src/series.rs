//! Uniformly sampled signals.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

/// Physical unit carried by a series or spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Unit {
    Rad,
    Tesla,
    Dimensionless,
}

impl Unit {
    pub fn symbol(self) -> &'static str {
        match self {
            Unit::Rad => "rad",
            Unit::Tesla => "T",
            Unit::Dimensionless => "1",
        }
    }
}

impl fmt::Display for Unit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

impl FromStr for Unit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "rad" => Ok(Unit::Rad),
            "T" | "tesla" => Ok(Unit::Tesla),
            "1" | "dimensionless" => Ok(Unit::Dimensionless),
            other => Err(Error::invalid(format!("unknown unit '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    pub samples: Vec<f64>,
    pub sample_rate: f64,
    pub unit: Unit,
    pub start_time: f64,
}

impl TimeSeries {
    pub fn new(samples: Vec<f64>, sample_rate: f64, unit: Unit) -> Result<Self> {
        ensure(sample_rate > 0.0 && sample_rate.is_finite(), || {
            format!("sample rate must be positive, got {sample_rate}")
        })?;
        Ok(Self { samples, sample_rate, unit, start_time: 0.0 })
    }

    pub fn zeros(len: usize, sample_rate: f64, unit: Unit) -> Result<Self> {
        Self::new(vec![0.0; len], sample_rate, unit)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.sample_rate
    }

    pub fn time(&self, index: usize) -> f64 {
        self.start_time + index as f64 / self.sample_rate
    }

    pub fn duration(&self) -> f64 {
        self.len() as f64 / self.sample_rate
    }

    fn check_compatible(&self, other: &TimeSeries) -> Result<()> {
        ensure(self.sample_rate == other.sample_rate, || {
            format!("sample rates differ: {} vs {}", self.sample_rate, other.sample_rate)
        })?;
        ensure(self.len() == other.len(), || format!("lengths differ: {} vs {}", self.len(), other.len()))?;
        ensure(self.unit == other.unit, || format!("units differ: {} vs {}", self.unit, other.unit))
    }

    /// Element-wise sum; rate, length and unit must agree.
    pub fn try_add(&self, other: &TimeSeries) -> Result<TimeSeries> {
        self.check_compatible(other)?;
        let mut out = self.clone();
        out.add_assign_checked(other)?;
        Ok(out)
    }

    pub fn add_assign_checked(&mut self, other: &TimeSeries) -> Result<()> {
        self.check_compatible(other)?;
        for (s, o) in self.samples.iter_mut().zip(&other.samples) {
            *s += o;
        }
        Ok(())
    }

    pub fn scaled(&self, factor: f64) -> TimeSeries {
        TimeSeries { samples: self.samples.iter().map(|v| v * factor).collect(), ..self.clone() }
    }

    /// Drops the first `count` samples, advancing `start_time`.
    pub fn skip(&self, count: usize) -> TimeSeries {
        let count = count.min(self.len());
        TimeSeries {
            samples: self.samples[count..].to_vec(),
            sample_rate: self.sample_rate,
            unit: self.unit,
            start_time: self.time(count),
        }
    }

    pub fn mean(&self) -> f64 {
        self.samples.iter().sum::<f64>() / self.len() as f64
    }

    /// Population variance about the sample mean.
    pub fn variance(&self) -> f64 {
        let mean = self.mean();
        self.samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / self.len() as f64
    }

    pub fn rms(&self) -> f64 {
        (self.samples.iter().map(|v| v * v).sum::<f64>() / self.len() as f64).sqrt()
    }

    /// Two-column CSV `time_s,value` preceded by a `# unit:` comment.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# unit: {}", self.unit)?;
        writeln!(out, "time_s,value")?;
        for (i, v) in self.samples.iter().enumerate() {
            writeln!(out, "{:.9e},{:.12e}", self.time(i), v)?;
        }
        Ok(())
    }
}

/// Complex envelope `u(t)` of a narrowband real signal `Re[u(t)·e^{i2πf_c t}]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub samples: Vec<Complex64>,
    pub sample_rate: f64,
    pub carrier_frequency: f64,
    pub unit: Unit,
}

impl Envelope {
    pub fn new(samples: Vec<Complex64>, sample_rate: f64, carrier_frequency: f64, unit: Unit) -> Result<Self> {
        ensure(sample_rate > 0.0, || format!("sample rate must be positive, got {sample_rate}"))?;
        Ok(Self { samples, sample_rate, carrier_frequency, unit })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn try_add(&self, other: &Envelope) -> Result<Envelope> {
        ensure(
            self.sample_rate == other.sample_rate
                && self.carrier_frequency == other.carrier_frequency
                && self.len() == other.len()
                && self.unit == other.unit,
            || "envelopes differ in rate, carrier, length or unit".into(),
        )?;
        let samples = self.samples.iter().zip(&other.samples).map(|(a, b)| a + b).collect();
        Ok(Envelope { samples, ..self.clone() })
    }

    /// Mean power of the real passband signal, `<|u|^2>/2`.
    pub fn passband_variance(&self) -> f64 {
        self.samples.iter().map(|z| z.norm_sqr()).sum::<f64>() / (2.0 * self.len() as f64)
    }
}
