//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::time::Instant;

use num_complex::Complex64;
use qndmag::config::{ConfigFile, ExperimentConfig, REFERENCE_CONFIG};
use qndmag::dsp::{integrate_band, lock_in_demodulate, lock_in_envelope, welch_psd, Spectrum, SpectrumKind, Window};
use qndmag::estimation::{
    extract_bandwidth, measure_response_with, qnd_bandwidth, response_model, sensitivity_spectrum, Bandwidth,
    Calibration, ResponseCurve,
};
use qndmag::physics::{effective_atom_number, BeamProfile, CellConfig};
use qndmag::pipeline::{
    load_config, predict, run_sensitivity, run_spin_noise, sensitivity_analysis, spin_noise_analysis,
};
use qndmag::series::{Envelope, TimeSeries, Unit};
use qndmag::synthesis::{
    simulate_shot_noise, simulate_spin_noise, spin_noise_envelope, Frame, NoiseProcessParams, NoiseSources,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Suite {
    failures: usize,
}

impl Suite {
    fn check(&mut self, name: &str, pass: bool, detail: String) {
        println!("[{}] {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            self.failures += 1;
        }
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a / b - 1.0).abs()
}

fn reference_file() -> ConfigFile {
    ConfigFile::parse(REFERENCE_CONFIG).unwrap()
}

fn mean_and_sem(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn criterion_1(s: &mut Suite) {
    let v = predict(&ExperimentConfig::reference()).unwrap();
    let phi = v["phi_rms_rad"].as_f64().unwrap();
    s.check("1 analytic phi_rms", rel(phi, 1.07e-6) <= 0.03, format!("{phi:.4e} rad vs 1.07e-6 (3%)"));
}

fn criterion_2(s: &mut Suite) {
    let cfg = ExperimentConfig::reference();
    let r = spin_noise_analysis(&cfg).unwrap();
    let Some(fit) = r.fit else {
        s.check("2 spin-noise fit", false, "fit degenerate".into());
        return;
    };
    s.check("2a spin-noise HWHM", rel(fit.hwhm, 340.0) <= 0.05, format!("{:.1} Hz vs 340 (5%)", fit.hwhm));
    let f_l = cfg.larmor_frequency();
    s.check(
        "2b spin-noise center",
        (fit.center - f_l).abs() <= 5.0,
        format!("{:.2} Hz vs configured Larmor {f_l:.2} (5 Hz)", fit.center),
    );
    let ratio = fit.peak_to_floor_ratio();
    s.check("2c peak/floor ratio", rel(ratio, 22.0) <= 0.10, format!("{ratio:.2} vs 22 (10%)"));
    let band = r.band_power.unwrap();
    let phi2 = r.predicted_phi_rms.powi(2);
    s.check(
        "2d band integral",
        rel(band, phi2) <= 0.05,
        format!("{band:.4e} rad^2 vs phi_rms^2 {phi2:.4e} ({:+.2}%, 5%)", 100.0 * (band / phi2 - 1.0)),
    );
}

fn criterion_3(s: &mut Suite) {
    let cfg = ExperimentConfig::reference();
    let t2 = cfg.magnetometer.t2;
    let hwhm = 1.0 / (2.0 * PI * t2);
    let freqs: Vec<f64> = [0.1, 0.5, 1.0, 2.0, 4.0].iter().map(|k| k * hwhm).collect();
    let s0 = cfg.magnetometer.carrier_amplitude() * 2.0 * PI * cfg.species.gyromagnetic_ratio * t2;
    let runs = [
        ("3a response noiseless carrier", NoiseSources::NONE, Frame::Carrier, 0.03),
        ("3b response noiseless baseband", NoiseSources::NONE, Frame::Baseband, 0.03),
        ("3c response full noise carrier", NoiseSources::ALL, Frame::Carrier, 0.10),
    ];
    for (name, sources, frame, tol) in runs {
        let fs = match frame {
            Frame::Carrier => cfg.simulation.sample_rate,
            Frame::Baseband => cfg.simulation.baseband_rate,
        };
        let cal = Calibration { field_rms: cfg.analysis.calibration_field, duration: 1.0, sample_rate: fs, seed: 11, sources, frame };
        let curve = measure_response_with(&cfg, &freqs, &cal).unwrap();
        let worst = freqs
            .iter()
            .zip(&curve.responsivity)
            .map(|(f, r)| rel(*r, response_model(*f, s0, t2)))
            .fold(0.0, f64::max);
        s.check(name, worst <= tol, format!("worst deviation {:.3}% ({:.0}%)", 100.0 * worst, 100.0 * tol));
    }
}

fn criterion_4(s: &mut Suite) {
    let cfg = ExperimentConfig::reference();
    let report = sensitivity_analysis(&cfg).unwrap().report;
    let sens = report.dc_sensitivity * 1e15;
    s.check("4a sensitivity plateau", rel(sens, 22.0) <= 0.15, format!("{sens:.2} fT/sqrt(Hz) vs 22 (15%)"));
    let bw = report.measured_bandwidth.hz();
    s.check(
        "4b QND bandwidth",
        bw.is_some_and(|b| rel(b, 1900.0) <= 0.15),
        format!("{bw:.0?} Hz vs 1900 (15%); closed form {:.0} Hz", report.closed_form_bandwidth),
    );
    let dem = report.demolition_bandwidth.hz();
    s.check("4c demolition bandwidth", dem.is_some_and(|d| rel(d, 420.0) <= 0.10), format!("{dem:.1?} Hz vs 420 (10%)"));
    let enh = match (bw, dem) {
        (Some(b), Some(d)) => b / d,
        _ => 0.0,
    };
    s.check("4d bandwidth enhancement", enh >= 3.5, format!("{enh:.2}x (>= 3.5x)"));
}

/// √2 point of `sens(f)/sens(0)` by bisection on the analytic models.
fn root_find(eta: f64, k: f64, t2: f64) -> f64 {
    let ratio = |f: f64| {
        let noise = (1.0 / eta + k / (1.0 + (2.0 * PI * f * t2).powi(2))).sqrt();
        noise / response_model(f, 1.0, t2) / (1.0 / eta + k).sqrt()
    };
    let (mut lo, mut hi) = (0.0, 1.0 / t2);
    while ratio(hi) < 2f64.sqrt() {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if ratio(mid) < 2f64.sqrt() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn criterion_5(s: &mut Suite) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    let mut worst_oracle: f64 = 0.0;
    for _ in 0..20 {
        let eta = rng.random_range(0.1..=1.0);
        let n_ab = rng.random_range(10.0..1000.0);
        let gamma = rng.random_range(1.0..500.0);
        let t2 = 10f64.powf(rng.random_range(-4.0..-2.0));
        let beta = rng.random_range(0.5..2.0);
        let closed = qnd_bandwidth(eta, n_ab, gamma, t2, beta).unwrap();
        let k = n_ab * gamma * t2 * beta;

        let (lo, hi, n) = (closed * 1e-3, closed * 1e2, 4096);
        let freqs: Vec<f64> = (0..n).map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64)).collect();
        let asd = freqs
            .iter()
            .map(|f| ((1.0 / eta + k / (1.0 + (2.0 * PI * f * t2).powi(2))) / (2.0 * 1e16)).sqrt())
            .collect();
        let noise = Spectrum::new(freqs.clone(), asd, SpectrumKind::Amplitude, Unit::Rad, lo / 3.0, 1).unwrap();
        let response = ResponseCurve::from_model(freqs, 1e6, t2).unwrap();
        let sens = sensitivity_spectrum(&noise, &response).unwrap();
        let Bandwidth::Frequency(found) = extract_bandwidth(&sens, 0.0).unwrap() else {
            worst = f64::INFINITY;
            continue;
        };
        worst = worst.max(rel(found, closed));
        worst_oracle = worst_oracle.max(rel(closed, root_find(eta, k, t2)));
    }
    s.check(
        "5 extracted vs closed-form bandwidth",
        worst <= 1e-3 && worst_oracle <= 1e-6,
        format!("worst {:.2e} over 20 sets (1e-3); closed form vs root-find {worst_oracle:.1e}", worst),
    );
}

fn ou_statistics(s: &mut Suite) {
    let tau = 1.0 / (2.0 * PI * 340.0);
    let params = NoiseProcessParams { center_frequency: 31e3, correlation_time: tau, rms_a: 1e-6, rms_b: 0.0 };
    let fs = 50e3;
    let lags = [5usize, 10, 20, 40, 80];
    let mut variances = Vec::new();
    let mut rhos = vec![Vec::new(); lags.len()];
    for seed in 0..20 {
        let env: Envelope = spin_noise_envelope(&params, 1.0, fs, seed).unwrap();
        let z = &env.samples;
        variances.push(env.passband_variance());
        let power: f64 = z.iter().map(|v| v.norm_sqr()).sum::<f64>() / z.len() as f64;
        for (j, lag) in lags.iter().enumerate() {
            let c: Complex64 = z.iter().zip(&z[*lag..]).map(|(a, b)| a * b.conj()).sum::<Complex64>() / (z.len() - lag) as f64;
            rhos[j].push(c.re / power);
        }
    }
    let (m, se) = mean_and_sem(&variances);
    let want = params.rms_a.powi(2);
    let mut pass = (m - want).abs() <= 3.0 * se;
    let mut detail = format!("variance {:+.2} SE", (m - want) / se);
    for (j, lag) in lags.iter().enumerate() {
        let (m, se) = mean_and_sem(&rhos[j]);
        let want = (-(*lag as f64) / fs / tau).exp();
        pass &= (m - want).abs() <= 3.0 * se;
        detail.push_str(&format!(", lag {lag}: {:+.2} SE", (m - want) / se));
    }
    s.check("6a OU variance and autocorrelation", pass, format!("{detail} (3 SE, 20 seeds)"));
}

fn parseval(s: &mut Suite) {
    let cfg = ExperimentConfig::reference().unpolarized();
    let fs = cfg.simulation.sample_rate;
    let mut ts = simulate_spin_noise(&cfg.spin_noise_params().unwrap(), 2.0, fs, 3).unwrap();
    ts.add_assign_checked(&simulate_shot_noise(&cfg.probe, 2.0, fs, 3).unwrap()).unwrap();
    let sp = welch_psd(&ts, 16_384, 0.5, Window::Hann).unwrap();
    let total = integrate_band(&sp, 0.0, fs / 2.0, None).unwrap();
    let var = ts.variance();
    s.check("6b Parseval", rel(total, var) <= 0.02, format!("integrated PSD / variance = {:.4} (2%)", total / var));
}

fn lockin_normalization(s: &mut Suite) {
    let (fs, f0, amp, phase) = (250e3, 30_781.52, 0.107, 0.7);
    let n = 250_000;
    let x: Vec<f64> = (0..n).map(|i| amp * (2.0 * PI * f0 * i as f64 / fs + phase).cos()).collect();
    let ts = TimeSeries::new(x, fs, Unit::Rad).unwrap();
    let carrier = lock_in_demodulate(&ts, f0, phase, 10e3, 4).unwrap().settled();
    let env_samples = vec![Complex64::from_polar(amp, phase); n / 5];
    let env = Envelope::new(env_samples, 50e3, f0, Unit::Rad).unwrap();
    let base = lock_in_envelope(&env, f0, phase, 10e3, 4).unwrap().settled();
    let mut worst: f64 = 0.0;
    for out in [&carrier, &base] {
        let i = out.in_phase.mean();
        let q = out.quadrature.mean();
        worst = worst.max(rel(i, amp)).max(q.abs() / amp);
    }
    s.check("6c lock-in tone normalization", worst <= 1e-3, format!("worst relative error {worst:.2e} (1e-3)"));
}

fn gaussian_beam(s: &mut Suite) {
    let cell = CellConfig::new(8.7e18, 0.114, 1.42e9).unwrap();
    let (sy, sz) = (1.1e-3, 1.6e-3);
    let points_per_sigma = 32.0;
    let (dy, dz) = (sy / points_per_sigma, sz / points_per_sigma);
    let half = (5.0 * points_per_sigma) as i64;
    let mut intensity = Vec::new();
    for j in -half..=half {
        for i in -half..=half {
            let (y, z) = (i as f64 * dy, j as f64 * dz);
            intensity.push((-(y * y) / (2.0 * sy * sy) - (z * z) / (2.0 * sz * sz)).exp());
        }
    }
    let cols = (2 * half + 1) as usize;
    let sampled = BeamProfile::Sampled { spacing_y: dy, spacing_z: dz, cols, intensity };
    let analytic = cell.density * cell.length * 4.0 * PI * sy * sz;
    let grid = effective_atom_number(&sampled, &cell).unwrap();
    let closed = effective_atom_number(&BeamProfile::Gaussian { sigma_y: sy, sigma_z: sz }, &cell).unwrap();
    s.check(
        "6d Gaussian beam atom number",
        rel(grid, analytic) <= 0.01 && rel(closed, analytic) <= 1e-12,
        format!("sampled grid off by {:.2e} (1%)", rel(grid, analytic)),
    );
}

fn fit_unbiased(s: &mut Suite) {
    let base = ExperimentConfig::reference();
    let truth_hwhm = 1.0 / (2.0 * PI * base.magnetometer.t2_unpolarized);
    let phi = base.manifold_noise().unwrap().total();
    let truth = [
        2.0 * base.magnetometer.t2_unpolarized * phi * phi,
        base.larmor_frequency(),
        truth_hwhm,
        base.probe.shot_noise_asd().powi(2),
    ];
    let mut samples = vec![Vec::new(); 4];
    for seed in 0..50 {
        let mut cfg = base.clone();
        cfg.simulation.seed = 1000 + seed;
        cfg.simulation.duration = 1.0;
        let fit = spin_noise_analysis(&cfg).unwrap().fit.unwrap();
        for (k, v) in [fit.peak_power, fit.center, fit.hwhm, fit.floor].into_iter().enumerate() {
            samples[k].push(v);
        }
    }
    let mut pass = true;
    let mut detail = Vec::new();
    for (k, name) in ["peak", "center", "hwhm", "floor"].iter().enumerate() {
        let (m, se) = mean_and_sem(&samples[k]);
        let z = (m - truth[k]) / se;
        pass &= z.abs() <= 2.0;
        detail.push(format!("{name} {z:+.2} SE"));
    }
    s.check("6e fit unbiased", pass, format!("{} (2 SE, 50 seeds)", detail.join(", ")));
}

fn files_equal(a: &Path, b: &Path) -> bool {
    let mut names: Vec<_> = fs::read_dir(a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    !names.is_empty() && names.iter().all(|n| fs::read(a.join(n)).unwrap() == fs::read(b.join(n)).unwrap())
}

fn determinism(s: &mut Suite) {
    let dir = tempfile::tempdir().unwrap();
    let mut file = reference_file().with_overrides(Some(42), Some(2.0), None);
    file.analysis.calibration_points = 6;
    file.analysis.calibration_duration_s = 0.5;
    file.analysis.calibration_min_hz = 50.0;
    let mut pass = true;
    for (cmd, run) in [
        ("spin-noise", &(|f: &ConfigFile, p: &Path| run_spin_noise(f, p).map(|_| ())) as &dyn Fn(&ConfigFile, &Path) -> qndmag::Result<()>),
        ("sensitivity", &|f: &ConfigFile, p: &Path| run_sensitivity(f, p).map(|_| ())),
    ] {
        let (a, b, c) = (dir.path().join(format!("{cmd}-a")), dir.path().join(format!("{cmd}-b")), dir.path().join(format!("{cmd}-c")));
        run(&file, &a).unwrap();
        run(&file, &b).unwrap();
        let from_manifest = load_config(&a.join("manifest.json")).unwrap();
        run(&from_manifest, &c).unwrap();
        pass &= files_equal(&a, &b) && files_equal(&a, &c);
    }
    s.check("6f determinism", pass, "same seed and manifest reruns give byte-identical outputs".into());
}

fn shot_only(s: &mut Suite) {
    let text = include_str!("../configs/shot_only.toml");
    let cfg = ConfigFile::parse(text).unwrap().resolve().unwrap();
    let report = sensitivity_analysis(&cfg).unwrap().report;
    let hwhm = 1.0 / (2.0 * PI * cfg.magnetometer.t2);
    let bw = report.measured_bandwidth.hz();
    let sp = &report.sensitivity_spectrum;
    let mut worst: f64 = 0.0;
    for k in [0.5, 1.0, 2.0, 4.0] {
        let f = k * hwhm;
        let band: Vec<f64> = sp
            .frequencies
            .iter()
            .zip(&sp.values)
            .filter(|(g, _)| (**g / f - 1.0).abs() <= 0.05)
            .map(|(_, v)| v * v)
            .collect();
        let mean = (band.iter().sum::<f64>() / band.len() as f64).sqrt();
        worst = worst.max(rel(mean / report.dc_sensitivity, (1.0 + k * k).sqrt()));
    }
    s.check(
        "extra shot-only sensitivity",
        bw.is_some_and(|b| rel(b, hwhm) <= 0.05) && worst <= 0.05 && report.fit.is_none(),
        format!("bandwidth {bw:.1?} Hz vs {hwhm:.1} (5%); rise vs sqrt(1+x^2) worst {:.2}%", 100.0 * worst),
    );
}

fn zero_density(s: &mut Suite) {
    let mut file = reference_file();
    file.cell.density_per_cm3 = 0.0;
    file.simulation.duration_s = 1.0;
    let r = spin_noise_analysis(&file.resolve().unwrap()).unwrap();
    s.check("extra zero-density degenerate", r.fit.is_none(), format!("degenerate = {}", r.fit.is_none()));
}

fn predict_relations(s: &mut Suite) {
    let mut file = reference_file();
    file.probe.quantum_efficiency = 1.0;
    file.probe.pumping_rate_per_s = Some(0.0);
    let v = predict(&file.resolve().unwrap()).unwrap();
    let same = v["qnd_bandwidth_hz"] == v["demolition_bandwidth_hz"];

    let mut file = reference_file();
    let f1 = predict(&file.resolve().unwrap()).unwrap()["qnd_bandwidth_hz"].as_f64().unwrap();
    file.magnetometer.beta = 2.0;
    let f2 = predict(&file.resolve().unwrap()).unwrap()["qnd_bandwidth_hz"].as_f64().unwrap();
    s.check(
        "extra predict relations",
        same && f2 > f1,
        format!("eta=1, no probe pumping gives equal bandwidths: {same}; beta x2: {f1:.0} -> {f2:.0} Hz"),
    );

    let mut file = reference_file();
    let rb87 = predict(&file.resolve().unwrap()).unwrap();
    file.species.preset = Some("rb85".into());
    let rb85 = predict(&file.resolve().unwrap()).unwrap();
    let ratio = rb85["spin_fluctuation_a"].as_f64().unwrap() / rb87["spin_fluctuation_a"].as_f64().unwrap();
    // F = I + 1/2 with I = 5/2 and 3/2, same atom number
    let g = |f: f64, i: f64| f * (f + 1.0) * (2.0 * f + 1.0) / (6.0 * (2.0 * i + 1.0));
    let want = (g(3.0, 2.5) / g(2.0, 1.5)).sqrt();
    s.check("extra isotope ratio", rel(ratio, want) <= 1e-12, format!("sigma_a(85)/sigma_a(87) = {ratio:.6}, expected {want:.6}"));
}

type Section = (&'static str, fn(&mut Suite));

fn main() {
    let mut suite = Suite { failures: 0 };
    let sections: [Section; 14] = [
        ("criterion 1", criterion_1),
        ("criterion 2", criterion_2),
        ("criterion 3", criterion_3),
        ("criterion 4", criterion_4),
        ("criterion 5", criterion_5),
        ("criterion 6a", ou_statistics),
        ("criterion 6b", parseval),
        ("criterion 6c", lockin_normalization),
        ("criterion 6d", gaussian_beam),
        ("criterion 6e", fit_unbiased),
        ("criterion 6f", determinism),
        ("shot-only", shot_only),
        ("zero density", zero_density),
        ("predict", predict_relations),
    ];
    for (label, run) in sections {
        let start = Instant::now();
        run(&mut suite);
        eprintln!("  ({label} took {:.1} s)", start.elapsed().as_secs_f64());
    }
    if suite.failures > 0 {
        println!("{} acceptance check(s) failed", suite.failures);
        std::process::exit(1);
    }
    println!("all acceptance checks passed");
}
