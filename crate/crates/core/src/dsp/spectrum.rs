use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::series::Unit;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpectrumKind {
    /// unit²/Hz
    Power,
    /// unit/√Hz
    Amplitude,
}

/// One-sided spectral density on an increasing frequency grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub frequencies: Vec<f64>,
    pub values: Vec<f64>,
    pub kind: SpectrumKind,
    /// Unit of the underlying signal; the density unit follows from `kind`.
    pub unit: Unit,
    pub resolution_bandwidth: f64,
    pub segment_count: usize,
}

impl Spectrum {
    pub fn new(
        frequencies: Vec<f64>,
        values: Vec<f64>,
        kind: SpectrumKind,
        unit: Unit,
        resolution_bandwidth: f64,
        segment_count: usize,
    ) -> Result<Self> {
        let sp = Self { frequencies, values, kind, unit, resolution_bandwidth, segment_count };
        sp.validate()?;
        Ok(sp)
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.frequencies.len() == self.values.len(), || {
            format!("{} frequencies but {} values", self.frequencies.len(), self.values.len())
        })?;
        ensure(!self.frequencies.is_empty(), || "spectrum is empty".into())?;
        ensure(self.frequencies[0] >= 0.0, || "frequencies must start at or above 0".into())?;
        ensure(self.frequencies.windows(2).all(|w| w[1] > w[0]), || {
            "frequencies must be strictly increasing".into()
        })?;
        ensure(self.values.iter().all(|v| v.is_finite()), || "spectrum contains non-finite values".into())?;
        if self.kind == SpectrumKind::Power {
            ensure(self.values.iter().all(|v| *v >= 0.0), || "power density must be non-negative".into())?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn density_unit(&self) -> String {
        let u = self.unit.symbol();
        match self.kind {
            SpectrumKind::Power => format!("{u}^2/Hz"),
            SpectrumKind::Amplitude => format!("{u}/sqrt(Hz)"),
        }
    }

    pub fn to_amplitude(&self) -> Spectrum {
        match self.kind {
            SpectrumKind::Amplitude => self.clone(),
            SpectrumKind::Power => Spectrum {
                values: self.values.iter().map(|v| v.sqrt()).collect(),
                kind: SpectrumKind::Amplitude,
                ..self.clone()
            },
        }
    }

    pub fn to_power(&self) -> Spectrum {
        match self.kind {
            SpectrumKind::Power => self.clone(),
            SpectrumKind::Amplitude => Spectrum {
                values: self.values.iter().map(|v| v * v).collect(),
                kind: SpectrumKind::Power,
                ..self.clone()
            },
        }
    }

    /// Points with `lo <= f <= hi`.
    pub fn restrict(&self, lo: f64, hi: f64) -> Result<Spectrum> {
        let (frequencies, values): (Vec<f64>, Vec<f64>) = self
            .frequencies
            .iter()
            .zip(&self.values)
            .filter(|(f, _)| **f >= lo && **f <= hi)
            .map(|(f, v)| (*f, *v))
            .unzip();
        Spectrum::new(frequencies, values, self.kind, self.unit, self.resolution_bandwidth, self.segment_count)
    }

    /// Linear interpolation of the density at `f`, which must lie on the grid span.
    pub fn value_at(&self, f: f64) -> Option<f64> {
        let fr = &self.frequencies;
        if f < fr[0] || f > fr[fr.len() - 1] {
            return None;
        }
        let k = fr.partition_point(|x| *x <= f);
        if k == fr.len() {
            return Some(self.values[fr.len() - 1]);
        }
        let (f0, f1) = (fr[k - 1], fr[k]);
        let (v0, v1) = (self.values[k - 1], self.values[k]);
        Some(v0 + (v1 - v0) * (f - f0) / (f1 - f0))
    }

    /// Power of a spectral line near `f`: density summed over `±half_width` bins
    /// minus a local background taken as the median of bins 8 to 20 away.
    pub fn tone_power(&self, f: f64, half_width: usize) -> Result<f64> {
        ensure(self.kind == SpectrumKind::Power, || "tone power needs a power spectrum".into())?;
        ensure(self.len() >= 2, || "spectrum too short".into())?;
        let df = self.frequencies[1] - self.frequencies[0];
        let k = ((f - self.frequencies[0]) / df).round();
        let reach = 20usize.max(half_width + 1);
        ensure(k >= 0.0 && (k as usize) < self.len(), || format!("{f} Hz lies off the spectrum grid"))?;
        let k = k as usize;
        let lo = k.saturating_sub(half_width);
        let hi = (k + half_width).min(self.len() - 1);
        let sum: f64 = self.values[lo..=hi].iter().sum::<f64>() * df;
        let inner = (half_width + 4).max(8);
        let mut background: Vec<f64> = (inner..=reach.max(inner + 12))
            .flat_map(|d| [k.checked_sub(d), Some(k + d)])
            .flatten()
            .filter(|&j| j < self.len())
            .map(|j| self.values[j])
            .collect();
        ensure(!background.is_empty(), || "no background bins around the tone".into())?;
        let baseline = median(&mut background);
        Ok(sum - baseline * df * (hi - lo + 1) as f64)
    }

    /// `# kind`, `# unit`, `# resolution_bandwidth_hz`, `# segment_count` comments,
    /// then `frequency_hz,density` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# kind: {}", kind_name(self.kind))?;
        writeln!(out, "# unit: {}", self.density_unit())?;
        writeln!(out, "# resolution_bandwidth_hz: {:.9e}", self.resolution_bandwidth)?;
        writeln!(out, "# segment_count: {}", self.segment_count)?;
        writeln!(out, "frequency_hz,density")?;
        for (f, v) in self.frequencies.iter().zip(&self.values) {
            writeln!(out, "{f:.9e},{v:.12e}")?;
        }
        Ok(())
    }

    /// Reads the format produced by [`Spectrum::write_csv`]. Missing
    /// resolution/segment comments default to the grid spacing and 1.
    pub fn read_csv<R: BufRead>(input: R) -> Result<Spectrum> {
        let mut kind = None;
        let mut unit = None;
        let mut rbw = None;
        let mut segments = 1;
        let mut body = String::new();
        for line in input.lines() {
            let line = line?;
            let trimmed = line.trim();
            if let Some(comment) = trimmed.strip_prefix('#') {
                let Some((key, value)) = comment.split_once(':') else { continue };
                let value = value.trim();
                match key.trim() {
                    "kind" => kind = Some(parse_kind(value)?),
                    "unit" => unit = Some(value.to_string()),
                    "resolution_bandwidth_hz" => rbw = Some(parse_num::<f64>(value, "resolution_bandwidth_hz")?),
                    "segment_count" => segments = parse_num::<usize>(value, "segment_count")?,
                    _ => {}
                }
            } else if !trimmed.is_empty() {
                body.push_str(trimmed);
                body.push('\n');
            }
        }
        let kind = kind.ok_or_else(|| Error::invalid("spectrum CSV lacks a `# kind:` header"))?;
        let unit_text = unit.ok_or_else(|| Error::invalid("spectrum CSV lacks a `# unit:` header"))?;
        let unit = parse_density_unit(&unit_text, kind)?;

        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(body.as_bytes());
        let headers = reader.headers()?.clone();
        ensure(headers.len() >= 2 && &headers[0] == "frequency_hz", || {
            format!("expected `frequency_hz,density` columns, got `{}`", headers.iter().collect::<Vec<_>>().join(","))
        })?;
        let mut frequencies = Vec::new();
        let mut values = Vec::new();
        for record in reader.records() {
            let record = record?;
            frequencies.push(parse_num::<f64>(&record[0], "frequency_hz")?);
            values.push(parse_num::<f64>(&record[1], "density")?);
        }
        let rbw = match rbw {
            Some(r) => r,
            None if frequencies.len() >= 2 => frequencies[1] - frequencies[0],
            None => 0.0,
        };
        Spectrum::new(frequencies, values, kind, unit, rbw, segments)
    }
}

fn kind_name(kind: SpectrumKind) -> &'static str {
    match kind {
        SpectrumKind::Power => "power",
        SpectrumKind::Amplitude => "amplitude",
    }
}

fn parse_kind(text: &str) -> Result<SpectrumKind> {
    match text {
        "power" => Ok(SpectrumKind::Power),
        "amplitude" => Ok(SpectrumKind::Amplitude),
        other => Err(Error::invalid(format!("unknown spectrum kind '{other}'"))),
    }
}

fn parse_density_unit(text: &str, kind: SpectrumKind) -> Result<Unit> {
    let base = match kind {
        SpectrumKind::Power => text.strip_suffix("^2/Hz"),
        SpectrumKind::Amplitude => text.strip_suffix("/sqrt(Hz)"),
    };
    base.ok_or_else(|| Error::invalid(format!("unit '{text}' does not match a {} density", kind_name(kind))))
        .and_then(Unit::from_str)
}

fn parse_num<T: FromStr>(text: &str, field: &str) -> Result<T> {
    text.trim().parse().map_err(|_| Error::invalid(format!("cannot parse {field} value '{text}'")))
}

pub(crate) fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Trapezoidal integral of a power density over `[f_lo, f_hi]`, with the
/// endpoints interpolated onto the grid. With `floor`, that constant density is
/// subtracted first, leaving the excess variance.
pub fn integrate_band(sp: &Spectrum, f_lo: f64, f_hi: f64, floor: Option<f64>) -> Result<f64> {
    ensure(sp.kind == SpectrumKind::Power, || "band integration needs a power spectrum".into())?;
    ensure(f_lo <= f_hi, || format!("band [{f_lo}, {f_hi}] is reversed"))?;
    let first = sp.frequencies[0];
    let last = sp.frequencies[sp.len() - 1];
    ensure(f_lo >= first && f_hi <= last, || {
        format!("band [{f_lo}, {f_hi}] Hz lies outside the grid [{first}, {last}] Hz")
    })?;
    if f_lo == f_hi {
        return Ok(0.0);
    }
    let offset = floor.unwrap_or(0.0);
    let at = |f: f64| sp.value_at(f).expect("inside grid") - offset;
    let lo_idx = sp.frequencies.partition_point(|f| *f <= f_lo);
    let hi_idx = sp.frequencies.partition_point(|f| *f < f_hi);
    let mut total = 0.0;
    let mut prev_f = f_lo;
    let mut prev_v = at(f_lo);
    for k in lo_idx..hi_idx {
        let (f, v) = (sp.frequencies[k], sp.values[k] - offset);
        total += 0.5 * (v + prev_v) * (f - prev_f);
        prev_f = f;
        prev_v = v;
    }
    total += 0.5 * (at(f_hi) + prev_v) * (f_hi - prev_f);
    Ok(total)
}
