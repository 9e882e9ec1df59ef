use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dsp::{Spectrum, SpectrumKind};
use crate::error::{ensure, Error, Result};

/// `P(f) = A/(1 + ((f - f0)/w)²) + floor`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LorentzianParams {
    pub peak_power: f64,
    pub center: f64,
    pub hwhm: f64,
    pub floor: f64,
}

impl LorentzianParams {
    pub fn eval(&self, f: f64) -> f64 {
        let x = (f - self.center) / self.hwhm;
        self.peak_power / (1.0 + x * x) + self.floor
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LorentzianFitResult {
    pub peak_power: f64,
    pub center: f64,
    pub hwhm: f64,
    pub floor: f64,
    /// rms residual, density units.
    pub residual_norm: f64,
    /// Order: peak_power, center, hwhm, floor. A fixed center has zero row and column.
    pub covariance: [[f64; 4]; 4],
    pub converged: bool,
    pub iterations: usize,
    pub gradient_norm: f64,
}

impl LorentzianFitResult {
    pub fn params(&self) -> LorentzianParams {
        LorentzianParams { peak_power: self.peak_power, center: self.center, hwhm: self.hwhm, floor: self.floor }
    }

    pub fn peak_to_floor_ratio(&self) -> f64 {
        self.peak_power / self.floor
    }

    pub fn standard_errors(&self) -> [f64; 4] {
        std::array::from_fn(|k| self.covariance[k][k].max(0.0).sqrt())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FitOptions {
    pub init: Option<LorentzianParams>,
    /// Hold the center at this value.
    pub fixed_center: Option<f64>,
    /// Refit with weights `1/model²`, the approximate inverse variance of Welch bins.
    pub weighted: bool,
}

const MAX_ITERATIONS: usize = 200;
const STEP_TOLERANCE: f64 = 1e-8;

pub fn fit_lorentzian_floor(sp: &Spectrum, init: Option<LorentzianParams>) -> Result<LorentzianFitResult> {
    fit_lorentzian_floor_with(sp, &FitOptions { init, ..FitOptions::default() })
}

pub fn fit_lorentzian_floor_with(sp: &Spectrum, opts: &FitOptions) -> Result<LorentzianFitResult> {
    ensure(sp.kind == SpectrumKind::Power, || "Lorentzian fit needs a power spectrum".into())?;
    ensure(sp.len() >= 16, || format!("need at least 16 spectral points, got {}", sp.len()))?;
    let f = &sp.frequencies;
    let y = &sp.values;
    check_not_flat(y)?;

    let init = match opts.init {
        Some(p) => p,
        None => auto_init(f, y, opts.fixed_center),
    };
    ensure(init.hwhm > 0.0 && init.peak_power > 0.0, || "initial guess needs positive width and peak".into())?;

    let mut result = levenberg_marquardt(f, y, None, init, opts.fixed_center)?;
    if opts.weighted {
        let first = result.params();
        let weights: Vec<f64> = f.iter().map(|x| 1.0 / first.eval(*x).powi(2)).collect();
        let iterations = result.iterations;
        result = levenberg_marquardt(f, y, Some(&weights), first, opts.fixed_center)?;
        result.iterations += iterations;
    }

    if opts.fixed_center.is_none() {
        let (lo, hi) = (f[0], f[f.len() - 1]);
        if result.center - lo < result.hwhm || hi - result.center < result.hwhm {
            result.converged = false;
        }
    }
    Ok(result)
}

fn check_not_flat(y: &[f64]) -> Result<()> {
    let mut sorted = y.to_vec();
    let median = crate::dsp::median_of(&mut sorted);
    let mut dev: Vec<f64> = y.iter().map(|v| (v - median).abs()).collect();
    let scatter = 1.4826 * crate::dsp::median_of(&mut dev);
    let excess = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - median;
    if !(excess > 10.0 * scatter) || excess <= 0.0 {
        return Err(Error::Degenerate(format!(
            "no resolvable peak: maximum excess {excess:.3e} vs scatter {scatter:.3e}"
        )));
    }
    Ok(())
}

fn auto_init(f: &[f64], y: &[f64], fixed_center: Option<f64>) -> LorentzianParams {
    let mut sorted = y.to_vec();
    let floor = crate::dsp::median_of(&mut sorted);
    let peak_idx = match fixed_center {
        Some(c) => f.partition_point(|x| *x < c).min(f.len() - 1),
        None => (0..y.len()).max_by(|&a, &b| y[a].total_cmp(&y[b])).unwrap_or(0),
    };
    let center = fixed_center.unwrap_or(f[peak_idx]);
    let peak = y[peak_idx] - floor;
    let half = floor + 0.5 * peak;
    let mut widths = Vec::new();
    if let Some(k) = (peak_idx..y.len()).find(|&k| y[k] < half) {
        widths.push(f[k] - center);
    }
    if let Some(k) = (0..=peak_idx).rev().find(|&k| y[k] < half) {
        widths.push(center - f[k]);
    }
    let df = f[1] - f[0];
    let hwhm = if widths.is_empty() {
        0.25 * (f[f.len() - 1] - f[0])
    } else {
        (widths.iter().sum::<f64>() / widths.len() as f64).max(df)
    };
    LorentzianParams { peak_power: peak.max(f64::MIN_POSITIVE), center, hwhm, floor: floor.max(0.0) }
}

/// Parameters are scaled to order unity: amplitude and floor by the initial
/// peak, center offset and width by the initial width.
struct Scaling {
    amp: f64,
    center0: f64,
    width: f64,
}

impl Scaling {
    fn to_params(&self, q: &[f64], fixed_center: Option<f64>) -> LorentzianParams {
        let (a, c, w, b) = match fixed_center {
            Some(c) => (q[0], (c - self.center0) / self.width, q[1], q[2]),
            None => (q[0], q[1], q[2], q[3]),
        };
        LorentzianParams {
            peak_power: a * self.amp,
            center: self.center0 + c * self.width,
            hwhm: w * self.width,
            floor: b * self.amp,
        }
    }

    fn to_scaled(&self, p: &LorentzianParams, fixed_center: Option<f64>) -> Vec<f64> {
        let a = p.peak_power / self.amp;
        let w = p.hwhm / self.width;
        let b = p.floor / self.amp;
        match fixed_center {
            Some(_) => vec![a, w, b],
            None => vec![a, (p.center - self.center0) / self.width, w, b],
        }
    }
}

fn clamp(q: &mut [f64], fixed_center: Option<f64>) {
    let (iw, ib) = if fixed_center.is_some() { (1, 2) } else { (2, 3) };
    q[0] = q[0].max(0.0);
    q[iw] = q[iw].abs().max(1e-12);
    q[ib] = q[ib].max(0.0);
}

struct Problem<'a> {
    f: &'a [f64],
    y: &'a [f64],
    sqrt_w: Vec<f64>,
    scaling: Scaling,
    fixed_center: Option<f64>,
}

impl Problem<'_> {
    fn residuals(&self, q: &[f64]) -> DVector<f64> {
        let p = self.scaling.to_params(q, self.fixed_center);
        DVector::from_iterator(
            self.f.len(),
            self.f.iter().zip(self.y).zip(&self.sqrt_w).map(|((f, y), sw)| (p.eval(*f) - y) * sw / self.scaling.amp),
        )
    }

    /// Jacobian of the scaled residuals with respect to the scaled parameters.
    fn jacobian(&self, q: &[f64]) -> DMatrix<f64> {
        let p = self.scaling.to_params(q, self.fixed_center);
        let cols = q.len();
        let mut jac = DMatrix::zeros(self.f.len(), cols);
        for (i, (f, sw)) in self.f.iter().zip(&self.sqrt_w).enumerate() {
            let x = (f - p.center) / p.hwhm;
            let d = 1.0 / (1.0 + x * x);
            let a = p.peak_power / self.scaling.amp;
            // derivatives of the scaled model with respect to (a, c, w, b) in scaled units
            let da = d;
            let dc = a * 2.0 * x * d * d * (self.scaling.width / p.hwhm);
            let dw = a * 2.0 * x * x * d * d * (self.scaling.width / p.hwhm);
            let db = 1.0;
            let row: Vec<f64> = match self.fixed_center {
                Some(_) => vec![da, dw, db],
                None => vec![da, dc, dw, db],
            };
            for (k, v) in row.into_iter().enumerate() {
                jac[(i, k)] = v * sw;
            }
        }
        jac
    }
}

fn levenberg_marquardt(
    f: &[f64],
    y: &[f64],
    weights: Option<&[f64]>,
    init: LorentzianParams,
    fixed_center: Option<f64>,
) -> Result<LorentzianFitResult> {
    let init = LorentzianParams { center: fixed_center.unwrap_or(init.center), ..init };
    let scaling = Scaling { amp: init.peak_power, center0: init.center, width: init.hwhm };
    let sqrt_w = match weights {
        Some(w) => {
            // normalize so the scale of the cost is comparable to the unweighted case
            let mean = w.iter().sum::<f64>() / w.len() as f64;
            w.iter().map(|v| (v / mean).sqrt()).collect()
        }
        None => vec![1.0; f.len()],
    };
    let problem = Problem { f, y, sqrt_w, scaling, fixed_center };

    let mut q = problem.scaling.to_scaled(&init, fixed_center);
    let mut r = problem.residuals(&q);
    let mut cost = r.norm_squared();
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let jac = problem.jacobian(&q);
        let jtj = jac.transpose() * &jac;
        let grad = jac.transpose() * &r;
        let mut accepted = false;
        while lambda < 1e16 {
            let mut damped = jtj.clone();
            for k in 0..q.len() {
                damped[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
            }
            let Some(step) = damped.lu().solve(&(-&grad)) else {
                lambda *= 10.0;
                continue;
            };
            let mut trial: Vec<f64> = q.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            clamp(&mut trial, fixed_center);
            let trial_r = problem.residuals(&trial);
            let trial_cost = trial_r.norm_squared();
            if trial_cost <= cost {
                let moved: f64 = q.iter().zip(&trial).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                let size: f64 = trial.iter().map(|v| v * v).sum::<f64>().sqrt();
                q = trial;
                r = trial_r;
                cost = trial_cost;
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                if moved <= STEP_TOLERANCE * size.max(1e-300) {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // no downhill direction left at working precision
            converged = true;
            break;
        }
        if converged {
            break;
        }
    }

    let params = problem.scaling.to_params(&q, fixed_center);
    if !(params.peak_power.is_finite() && params.hwhm.is_finite() && params.floor.is_finite()) {
        return Err(Error::Numerical("Lorentzian fit diverged".into()));
    }
    let jac = problem.jacobian(&q);
    let grad = jac.transpose() * &r;
    let n = f.len();
    let dof = (n - q.len()).max(1) as f64;
    let s2 = cost / dof;
    let scale: Vec<f64> = match fixed_center {
        Some(_) => vec![problem.scaling.amp, problem.scaling.width, problem.scaling.amp],
        None => vec![problem.scaling.amp, problem.scaling.width, problem.scaling.width, problem.scaling.amp],
    };
    let slots: &[usize] = match fixed_center {
        Some(_) => &[0, 2, 3],
        None => &[0, 1, 2, 3],
    };
    let mut covariance = [[f64::INFINITY; 4]; 4];
    if fixed_center.is_some() {
        covariance[1] = [0.0; 4];
        for row in covariance.iter_mut() {
            row[1] = 0.0;
        }
    }
    if let Some(inv) = (jac.transpose() * &jac).try_inverse() {
        for (i, si) in slots.iter().enumerate() {
            for (j, sj) in slots.iter().enumerate() {
                covariance[*si][*sj] = s2 * inv[(i, j)] * scale[i] * scale[j];
            }
        }
    }
    let residual_norm = (cost / n as f64).sqrt() * problem.scaling.amp;
    Ok(LorentzianFitResult {
        peak_power: params.peak_power,
        center: params.center,
        hwhm: params.hwhm,
        floor: params.floor,
        residual_norm,
        covariance,
        converged: converged && iterations <= MAX_ITERATIONS,
        iterations,
        gradient_norm: grad.norm(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::series::Unit;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn synthetic(p: LorentzianParams, f: &[f64], noise: Option<(f64, u64)>) -> Spectrum {
        let mut rng = noise.map(|(_, seed)| stream(seed, "fit"));
        let values = f
            .iter()
            .map(|x| {
                let m = p.eval(*x);
                match (&mut rng, noise) {
                    (Some(rng), Some((rel, _))) => (m * (1.0 + rel * rng.sample::<f64, _>(StandardNormal))).max(0.0),
                    _ => m,
                }
            })
            .collect();
        Spectrum::new(f.to_vec(), values, SpectrumKind::Power, Unit::Rad, f[1] - f[0], 1).unwrap()
    }

    fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
    }

    const TRUE: LorentzianParams = LorentzianParams { peak_power: 1.07e-15, center: 30_781.0, hwhm: 340.0, floor: 4.9e-17 };

    #[test]
    fn exact_recovery_from_noiseless_data() {
        let f = grid(25e3, 37e3, 800);
        let fit = fit_lorentzian_floor(&synthetic(TRUE, &f, None), None).unwrap();
        assert!(fit.converged);
        for (got, want) in [
            (fit.peak_power, TRUE.peak_power),
            (fit.center, TRUE.center),
            (fit.hwhm, TRUE.hwhm),
            (fit.floor, TRUE.floor),
        ] {
            assert!((got / want - 1.0).abs() < 1e-6, "{got} vs {want}");
        }
    }

    #[test]
    fn fixed_center_fit() {
        let p = LorentzianParams { center: 0.0, ..TRUE };
        let f = grid(0.0, 5e3, 600);
        let fit = fit_lorentzian_floor_with(
            &synthetic(p, &f, None),
            &FitOptions { fixed_center: Some(0.0), ..FitOptions::default() },
        )
        .unwrap();
        assert_eq!(fit.center, 0.0);
        assert!((fit.hwhm / 340.0 - 1.0).abs() < 1e-6);
        assert!((fit.peak_to_floor_ratio() / TRUE.peak_to_floor() - 1.0).abs() < 1e-6);
        assert_eq!(fit.covariance[1][1], 0.0);
    }

    #[test]
    fn weighted_fit_recovers_noisy_parameters() {
        let f = grid(25e3, 37e3, 1500);
        let sp = synthetic(TRUE, &f, Some((0.05, 9)));
        let fit = fit_lorentzian_floor_with(&sp, &FitOptions { weighted: true, ..FitOptions::default() }).unwrap();
        assert!(fit.converged);
        assert!((fit.hwhm / 340.0 - 1.0).abs() < 0.03);
        assert!((fit.floor / TRUE.floor - 1.0).abs() < 0.03);
    }

    #[test]
    fn flat_input_is_degenerate() {
        let f = grid(0.0, 1e3, 100);
        let flat = synthetic(LorentzianParams { peak_power: 0.0, ..TRUE }, &f, None);
        assert!(matches!(fit_lorentzian_floor(&flat, None), Err(Error::Degenerate(_))));
        let noisy = synthetic(LorentzianParams { peak_power: 0.0, hwhm: 10.0, center: 500.0, floor: 1.0 }, &f, Some((0.05, 3)));
        assert!(matches!(fit_lorentzian_floor(&noisy, None), Err(Error::Degenerate(_))));
    }

    #[test]
    fn peak_at_grid_edge_is_flagged() {
        let f = grid(31e3, 40e3, 400);
        let p = LorentzianParams { center: 31_050.0, ..TRUE };
        let fit = fit_lorentzian_floor(&synthetic(p, &f, Some((0.02, 5))), None).unwrap();
        let se = fit.standard_errors();
        assert!(!fit.converged || se[1] > 0.1 * fit.hwhm, "{fit:?}");
    }

    #[test]
    fn too_few_points_rejected() {
        let f = grid(0.0, 10.0, 10);
        assert!(fit_lorentzian_floor(&synthetic(TRUE, &f, None), None).is_err());
    }

    #[test]
    fn estimates_are_unbiased_over_seeds() {
        let f = grid(27e3, 35e3, 400);
        let fits: Vec<LorentzianFitResult> = (0..50)
            .map(|seed| fit_lorentzian_floor(&synthetic(TRUE, &f, Some((0.1, 100 + seed))), None).unwrap())
            .collect();
        let check = |name: &str, get: &dyn Fn(&LorentzianFitResult) -> f64, truth: f64| {
            let vals: Vec<f64> = fits.iter().map(get).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (vals.len() - 1) as f64;
            let se = (var / vals.len() as f64).sqrt();
            assert!((mean - truth).abs() < 2.0 * se + 1e-9 * truth.abs(), "{name}: {mean} vs {truth} (se {se})");
        };
        check("peak", &|r| r.peak_power, TRUE.peak_power);
        check("center", &|r| r.center, TRUE.center);
        check("hwhm", &|r| r.hwhm, TRUE.hwhm);
        check("floor", &|r| r.floor, TRUE.floor);
    }

    impl LorentzianParams {
        fn peak_to_floor(&self) -> f64 {
            self.peak_power / self.floor
        }
    }
}
