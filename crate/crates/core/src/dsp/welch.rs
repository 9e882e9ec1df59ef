use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::spectrum::{Spectrum, SpectrumKind};
use crate::error::{ensure, Result};
use crate::series::{Envelope, TimeSeries};

/// Symmetric data windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    Rectangular,
    #[default]
    Hann,
    Hamming,
}

impl Window {
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        if len == 1 {
            return vec![1.0];
        }
        let denom = (len - 1) as f64;
        (0..len)
            .map(|n| {
                let c = (2.0 * PI * n as f64 / denom).cos();
                match self {
                    Window::Rectangular => 1.0,
                    Window::Hann => 0.5 - 0.5 * c,
                    Window::Hamming => 0.54 - 0.46 * c,
                }
            })
            .collect()
    }

    /// Equivalent noise bandwidth in bins, `N·Σw²/(Σw)²`.
    pub fn enbw_bins(self, len: usize) -> f64 {
        let w = self.coefficients(len);
        let s1: f64 = w.iter().sum();
        let s2: f64 = w.iter().map(|x| x * x).sum();
        len as f64 * s2 / (s1 * s1)
    }
}

struct Segmentation {
    len: usize,
    step: usize,
    count: usize,
}

fn segmentation(total: usize, segment_length: usize, overlap: f64) -> Result<Segmentation> {
    ensure(segment_length.is_power_of_two() && segment_length >= 2, || {
        format!("segment length must be a power of two >= 2, got {segment_length}")
    })?;
    ensure(segment_length <= total, || {
        format!("segment length {segment_length} exceeds series length {total}")
    })?;
    ensure((0.0..1.0).contains(&overlap), || format!("overlap must lie in [0, 1), got {overlap}"))?;
    let step = ((1.0 - overlap) * segment_length as f64).round().max(1.0) as usize;
    Ok(Segmentation { len: segment_length, step, count: (total - segment_length) / step + 1 })
}

/// Averaged periodogram `Σ_seg |X_k|²` of complex data (unnormalized).
fn averaged_periodogram(data: &[Complex64], seg: &Segmentation, window: &[f64]) -> Vec<f64> {
    let fft = FftPlanner::new().plan_fft_forward(seg.len);
    let mut acc = vec![0.0; seg.len];
    let mut buf = vec![Complex64::new(0.0, 0.0); seg.len];
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    for s in 0..seg.count {
        let start = s * seg.step;
        for ((b, x), w) in buf.iter_mut().zip(&data[start..start + seg.len]).zip(window) {
            *b = x * w;
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a += b.norm_sqr();
        }
    }
    acc
}

/// One-sided Welch PSD. White noise of variance σ² at rate fs gives `2σ²/fs`.
pub fn welch_psd(ts: &TimeSeries, segment_length: usize, overlap: f64, window: Window) -> Result<Spectrum> {
    let seg = segmentation(ts.len(), segment_length, overlap)?;
    let w = window.coefficients(seg.len);
    let w_power: f64 = w.iter().map(|x| x * x).sum();
    let data: Vec<Complex64> = ts.samples.iter().map(|x| Complex64::new(*x, 0.0)).collect();
    let acc = averaged_periodogram(&data, &seg, &w);

    let fs = ts.sample_rate;
    let scale = 1.0 / (fs * w_power * seg.count as f64);
    let half = seg.len / 2;
    let df = fs / seg.len as f64;
    let frequencies = (0..=half).map(|k| k as f64 * df).collect();
    let values = (0..=half)
        .map(|k| {
            let fold = if k == 0 || k == half { 1.0 } else { 2.0 };
            fold * acc[k] * scale
        })
        .collect();
    Spectrum::new(frequencies, values, SpectrumKind::Power, ts.unit, window.enbw_bins(seg.len) * df, seg.count)
}

/// One-sided PSD of the real passband signal `Re[u·e^{i2πf_c t}]` estimated from
/// its envelope: `S(f_c + Δ) = S_u(Δ)/2`, restricted to positive frequencies.
pub fn welch_psd_envelope(env: &Envelope, segment_length: usize, overlap: f64, window: Window) -> Result<Spectrum> {
    let seg = segmentation(env.len(), segment_length, overlap)?;
    let w = window.coefficients(seg.len);
    let w_power: f64 = w.iter().map(|x| x * x).sum();
    let acc = averaged_periodogram(&env.samples, &seg, &w);

    let fs = env.sample_rate;
    let scale = 0.5 / (fs * w_power * seg.count as f64);
    let n = seg.len;
    let df = fs / n as f64;
    let (frequencies, values): (Vec<f64>, Vec<f64>) = (0..n)
        .map(|j| {
            // fftshift order: Δ from -fs/2 up to fs/2 - df
            let k = (j + n / 2) % n;
            let delta = (j as f64 - (n / 2) as f64) * df;
            (env.carrier_frequency + delta, acc[k] * scale)
        })
        .filter(|(f, _)| *f > 0.0)
        .unzip();
    Spectrum::new(frequencies, values, SpectrumKind::Power, env.unit, window.enbw_bins(n) * df, seg.count)
}
