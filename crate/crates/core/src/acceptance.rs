//! End-to-end verification criteria.
//!
//! Each check returns a [`CriterionReport`]; [`run_all`] runs them in order and
//! [`format_table`] renders one line per criterion. Every threshold lives in
//! [`tolerance`] so the pass conditions are visible in one place.
//!
//! Synthesized scenarios run at accelerated photon rates (field occupancy near
//! the 0.1 ceiling) so that 10⁷ events per channel fit in seconds. The g²
//! shape of an ideal-detector thermal stream does not depend on the rate.

use std::path::PathBuf;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::coherence::{
    coherence_time, convolve_detector, g2_theory, gamma_auto, gamma_from_spectrum, scarl_contrast, DetectorResponse,
    G2Curve,
};
use crate::config::ScenarioConfig;
use crate::correlator::{brute_force, correlate_timestamps, cross_correlate, deficit_report, CorrelatorMode};
use crate::inference::{fit_bunching, fit_counts, FitOptions, FitResult};
use crate::photostream::{field_step, EventStream};
use crate::pipeline::{self, bin_averaged, run_pipeline, ARTIFACTS, MANIFEST_JSON};
use crate::spectral::{line_set_density, EtalonFilter, FrequencyGrid, LineComponent, LineShape, SpectralDensity};
use crate::{Error, Result};

/// Pass thresholds, all in SI units unless the name says otherwise.
pub mod tolerance {
    pub const ETALON_FSR_HZ: f64 = 205.3e9;
    pub const ETALON_FSR_TOL_HZ: f64 = 0.5e9;
    pub const ETALON_FWHM_HZ: f64 = 1.98e9;
    pub const ETALON_FWHM_TOL_HZ: f64 = 0.05e9;
    pub const ETALON_MAX_SECONDS: f64 = 1.0;

    pub const LORENTZ_GAMMA_REL: f64 = 1e-4;
    pub const LORENTZ_TAU_C_REL: f64 = 0.01;
    /// |γ| is compared for |τ| up to this many coherence times.
    pub const LORENTZ_COMPARE_SPAN: f64 = 5.0;
    pub const LORENTZ_MAX_SECONDS: f64 = 10.0;

    pub const THERMAL_G2_ZERO: f64 = 2.0;
    pub const THERMAL_G2_TOL: f64 = 0.05;
    pub const THERMAL_TAU_C_REL: f64 = 0.05;

    pub const HG_G2_ZERO_MIN: f64 = 1.70;
    pub const HG_G2_ZERO_MAX: f64 = 1.95;
    pub const HG_TAU_C_MIN: f64 = 0.41e-9;
    pub const HG_TAU_C_MAX: f64 = 0.46e-9;

    pub const THICK_SIGMAS: f64 = 3.0;
    pub const THICK_MAX_EXCESS: f64 = 0.35;
    /// Time slices for the batch-means error of the thick-detector excess.
    pub const THICK_BATCHES: usize = 16;

    pub const SCARL_SLOPE: f64 = -1.0;
    pub const SCARL_SLOPE_TOL: f64 = 0.1;
    pub const SCARL_MAX_SECONDS: f64 = 30.0;

    pub const MODES_G2_TOL: f64 = 0.03;

    pub const THROUGHPUT_EVENTS_PER_S: f64 = 1e7;

    /// τ_c agreement between start-stop and full-mode fits, in units of the
    /// full-mode standard error.
    pub const DEADTIME_TAU_C_SIGMAS: f64 = 1.0;
    /// Correlator dead times, all at least the 2.5 ns histogram half-range.
    pub const DEADTIME_SWEEP_NS: [f64; 4] = [2.5, 10.0, 25.0, 50.0];
    /// Photons per channel per coherence time.
    pub const DEADTIME_DEGENERACY: f64 = 0.005;
    pub const DEADTIME_EVENTS: f64 = 2e5;
    pub const DEADTIME_SEED: u64 = 10;

    pub const PLANCK_TAU_C_MIN: f64 = 3e-15;
    pub const PLANCK_TAU_C_MAX: f64 = 6e-14;
}

use tolerance::*;

#[derive(Debug, Clone, PartialEq)]
pub struct CriterionReport {
    pub id: u32,
    pub name: &'static str,
    pub passed: bool,
    /// Soft criteria are tracked but never gate a test run.
    pub hard: bool,
    pub detail: String,
    pub seconds: f64,
}

impl std::fmt::Display for CriterionReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let status = match (self.passed, self.hard) {
            (true, true) => "PASS",
            (false, true) => "FAIL",
            (true, false) => "PASS (soft)",
            (false, false) => "FAIL (soft)",
        };
        write!(
            f,
            "{status:<11} {:>2}  {:<28} {:>8.2}s  {}",
            self.id, self.name, self.seconds, self.detail
        )
    }
}

fn timed(id: u32, name: &'static str, hard: bool, check: impl FnOnce() -> Result<(bool, String)>) -> CriterionReport {
    let start = Instant::now();
    let (passed, detail) = check().unwrap_or_else(|e| (false, format!("error: {e}")));
    CriterionReport {
        id,
        name,
        passed,
        hard,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Mercury green line, used as the optical carrier throughout.
const CARRIER_NM: f64 = 546.0735;

/// Source photons per field sample at the accelerated rates.
const OCCUPANCY: f64 = 0.09;

const HG_REPLICA: &str = include_str!("../../../configs/hg_replica.toml");

fn lorentzian_fwhm(tau_c: f64) -> f64 {
    1.0 / (std::f64::consts::PI * tau_c)
}

/// Ideal-detector scenario with a single Lorentzian line of width `fwhm` sampled
/// over ±`half_span_fwhms` linewidths.
fn lorentzian_scenario(
    fwhm: f64,
    half_span_fwhms: f64,
    modes: u32,
    seed: u64,
    bin_width_ps: u64,
    tau_range_ns: f64,
) -> Result<ScenarioConfig> {
    let ghz = fwhm * 1e-9;
    let text = format!(
        r#"
[source]
kind = "lines"
lines = [{{ center_nm = {CARRIER_NM}, fwhm_ghz = {ghz}, shape = "lorentzian" }}]

[grid]
center_nm = {CARRIER_NM}
half_span_ghz = {span}
max_step_mhz = {step}

[detectors.a]
[detectors.b]

[synthesis]
seed = {seed}
duration_s = 1.0
mean_rate_hz = 1.0
block_length = 65536
modes = {modes}

[correlator]
bin_width_ps = {bin_width_ps}
tau_range_ns = {tau_range_ns}
"#,
        span = ghz * half_span_fwhms,
        step = ghz * 1e3 / 20.0,
    );
    ScenarioConfig::parse(&text)
}

/// Sets the rate for a source occupancy and the duration for `events` per channel.
fn set_rates(cfg: &mut ScenarioConfig, spectrum: &SpectralDensity, occupancy: f64, events: f64) {
    let mean_rate = occupancy / (2.0 * field_step(spectrum));
    cfg.synthesis.mean_rate_hz = mean_rate;
    cfg.synthesis.duration_s = events / mean_rate;
}

fn synthesize(cfg: &ScenarioConfig) -> Result<(SpectralDensity, EventStream, EventStream)> {
    let spectrum = cfg.spectrum()?;
    let source = pipeline::source_events(cfg, &spectrum)?;
    let (a, b) = pipeline::detect(cfg, &source)?;
    Ok((spectrum, a, b))
}

/// Synthesizes, correlates and fits a scenario.
fn closure_fit(cfg: &ScenarioConfig) -> Result<FitResult> {
    let (_, a, b) = synthesize(cfg)?;
    let h = pipeline::correlate(cfg, &a, &b)?;
    fit_bunching(&h, &cfg.fit_options())
}

pub fn etalon_physics() -> CriterionReport {
    timed(1, "etalon FSR and FWHM", true, || {
        let start = Instant::now();
        let e = EtalonFilter::new(0.5e-3, 1.46, 0.97)?;
        let (fsr, fwhm) = (e.fsr(), e.fwhm());
        let elapsed = start.elapsed().as_secs_f64();
        let passed = (fsr - ETALON_FSR_HZ).abs() <= ETALON_FSR_TOL_HZ
            && (fwhm - ETALON_FWHM_HZ).abs() <= ETALON_FWHM_TOL_HZ
            && elapsed < ETALON_MAX_SECONDS;
        Ok((
            passed,
            format!("FSR {:.3} GHz, FWHM {:.4} GHz, finesse {:.1}", fsr * 1e-9, fwhm * 1e-9, e.finesse()),
        ))
    })
}

pub fn lorentzian_analytic() -> CriterionReport {
    timed(2, "Lorentzian gamma and tau_c", true, || {
        let start = Instant::now();
        let mut worst_gamma: f64 = 0.0;
        let mut worst_tau: f64 = 0.0;
        for fwhm in [0.5e9, 2e9, 8e9] {
            let nu0 = crate::physics::wavelength_to_frequency(CARRIER_NM * 1e-9);
            // Tails beyond ±L carry a fraction ≈ Δν/(πL) of the power.
            let grid = FrequencyGrid::centered(nu0, 1e4 * fwhm, fwhm / 10.0)?;
            let s = line_set_density(&[LineComponent::new(nu0, fwhm, 1.0, LineShape::Lorentzian)?], grid)?;
            let tau_c = lorentzian_fwhm(fwhm);
            let gamma = gamma_from_spectrum(&s, 6.0 * tau_c, tau_c / 100.0)?;
            for (i, g) in gamma.values().iter().enumerate() {
                let tau = gamma.tau(i);
                if tau.abs() <= LORENTZ_COMPARE_SPAN * tau_c {
                    let exact = (-std::f64::consts::PI * fwhm * tau.abs()).exp();
                    worst_gamma = worst_gamma.max((g.norm() / exact - 1.0).abs());
                }
            }
            worst_tau = worst_tau.max((coherence_time(&gamma)? / tau_c - 1.0).abs());
        }
        let elapsed = start.elapsed().as_secs_f64();
        Ok((
            worst_gamma < LORENTZ_GAMMA_REL && worst_tau < LORENTZ_TAU_C_REL && elapsed < LORENTZ_MAX_SECONDS,
            format!("max |γ| rel err {worst_gamma:.2e}, max τ_c rel err {worst_tau:.2e}"),
        ))
    })
}

pub fn ideal_thermal_closure() -> CriterionReport {
    timed(3, "ideal thermal closure", true, || {
        let fwhm = 2e9;
        let tau_c = lorentzian_fwhm(fwhm);
        let mut cfg = lorentzian_scenario(fwhm, 50.0, 1, 3, 4, 2.0)?;
        let spectrum = cfg.spectrum()?;
        set_rates(&mut cfg, &spectrum, OCCUPANCY, 1e7);
        let fit = closure_fit(&cfg)?;
        let passed = (fit.g2_zero - THERMAL_G2_ZERO).abs() <= THERMAL_G2_TOL
            && (fit.tau_c / tau_c - 1.0).abs() <= THERMAL_TAU_C_REL;
        Ok((
            passed,
            format!(
                "g²(0) {:.4} ± {:.4}, τ_c {:.4} ns (configured {:.4} ns)",
                fit.g2_zero,
                fit.g2_zero_err,
                fit.tau_c * 1e9,
                tau_c * 1e9
            ),
        ))
    })
}

/// The shipped mercury replica scenario.
pub fn hg_replica_config() -> Result<ScenarioConfig> {
    ScenarioConfig::parse(HG_REPLICA)
}

/// Exponential-model fit to a noiseless prediction, scaled to `accidentals`
/// counts per bin so the weights match the data.
fn predicted_fit(cfg: &ScenarioConfig, spectrum: &SpectralDensity, accidentals: f64) -> Result<FitResult> {
    let theory = pipeline::theory(cfg, spectrum)?;
    let values = bin_averaged(&theory.detected, cfg.bin_width(), cfg.tau_range());
    let counts: Vec<f64> = values.iter().map(|g| g * accidentals).collect();
    let bins = values.len();
    let tau: Vec<f64> = (0..bins)
        .map(|i| -cfg.tau_range() + (i as f64 + 0.5) * cfg.bin_width())
        .collect();
    fit_counts(&tau, &counts, &FitOptions::default())
}

pub fn hg_replica() -> CriterionReport {
    timed(4, "Hg replica thin APD", true, || {
        let cfg = hg_replica_config()?;
        let (spectrum, a, b) = synthesize(&cfg)?;
        let h = pipeline::correlate(&cfg, &a, &b)?;
        let fit = fit_bunching(&h, &cfg.fit_options())?;
        let predicted = predicted_fit(&cfg, &spectrum, fit.a)?;
        let passed = (HG_G2_ZERO_MIN..=HG_G2_ZERO_MAX).contains(&fit.g2_zero)
            && (HG_TAU_C_MIN..=HG_TAU_C_MAX).contains(&fit.tau_c);
        Ok((
            passed,
            format!(
                "g²(0) {:.4} ± {:.4} (theory {:.4}), τ_c {:.4} ± {:.4} ns, {} + {} events",
                fit.g2_zero,
                fit.g2_zero_err,
                predicted.g2_zero,
                fit.tau_c * 1e9,
                fit.std_errors()[2] * 1e9,
                a.len(),
                b.len()
            ),
        ))
    })
}

pub fn thick_apd_suppression() -> CriterionReport {
    timed(5, "thick APD suppression", true, || {
        let mut cfg = hg_replica_config()?;
        let thick = DetectorResponse::thick_apd();
        for d in [&mut cfg.detectors.a, &mut cfg.detectors.b] {
            d.core_fwhm_ps = thick.core_fwhm * 1e12;
            d.tail_weight = 0.0;
            d.tail_decay_ps = 0.0;
        }
        cfg.correlator.tau_range_ns = 10.0;
        let (spectrum, a, b) = synthesize(&cfg)?;
        let h = pipeline::correlate(&cfg, &a, &b)?;
        let fit = fit_bunching(&h, &cfg.fit_options())?;
        let predicted = predicted_fit(&cfg, &spectrum, fit.a)?;
        let excess = fit.g2_zero - 1.0;
        let expected = predicted.g2_zero - 1.0;
        let sigma = batch_sigma(&cfg, &a, &b, THICK_BATCHES)?;
        let z = (excess - expected) / sigma;
        let passed = z.abs() <= THICK_SIGMAS && excess <= THICK_MAX_EXCESS;
        Ok((
            passed,
            format!(
                "excess {excess:.4} ± {sigma:.4} (Poisson-weighted ± {:.4}), convolution prediction {expected:.4} ({z:+.2}σ)",
                fit.g2_zero_err
            ),
        ))
    })
}

/// Standard error of the fitted excess from `batches` equal time slices.
///
/// At high photon degeneracy the bin counts carry intensity-fluctuation noise
/// on top of Poisson noise, so the weighted-fit covariance understates the
/// spread. The slices are correlated and fitted independently.
fn batch_sigma(cfg: &ScenarioConfig, a: &EventStream, b: &EventStream, batches: usize) -> Result<f64> {
    let end = a.timestamps().last().copied().unwrap_or(0).max(b.timestamps().last().copied().unwrap_or(0)) + 1;
    let slice = |t: &[u64], lo: u64, hi: u64| {
        let i = t.partition_point(|&x| x < lo);
        let j = t.partition_point(|&x| x < hi);
        t[i..j].to_vec()
    };
    let excess: Vec<f64> = (0..batches as u64)
        .map(|k| {
            let (lo, hi) = (end * k / batches as u64, end * (k + 1) / batches as u64);
            let sa = slice(a.timestamps(), lo, hi);
            let sb = slice(b.timestamps(), lo, hi);
            let h = correlate_timestamps(&sa, &sb, cfg.bin_width(), cfg.tau_range(), CorrelatorMode::Full, 1)?;
            Ok(fit_bunching(&h, &cfg.fit_options())?.g2_zero - 1.0)
        })
        .collect::<Result<_>>()?;
    let n = excess.len() as f64;
    let mean = excess.iter().sum::<f64>() / n;
    let var = excess.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((var / n).sqrt())
}

pub fn scarl_scaling() -> CriterionReport {
    timed(6, "timing-resolution scaling", true, || {
        let start = Instant::now();
        let tau_c = 0.436e-9;
        let fwhm = lorentzian_fwhm(tau_c);
        let nu0 = crate::physics::wavelength_to_frequency(CARRIER_NM * 1e-9);
        let grid = FrequencyGrid::centered(nu0, 50.0 * fwhm, fwhm / 20.0)?;
        let s = line_set_density(&[LineComponent::new(nu0, fwhm, 1.0, LineShape::Lorentzian)?], grid)?;
        let g2 = g2_theory(&gamma_auto(&s)?);
        let tau_c_theory = coherence_time(&gamma_auto(&s)?)?;
        let ratios: Vec<f64> = (0..9).map(|k| 10f64.powf(1.0 + k as f64 / 4.0)).collect();
        let excess: Vec<f64> = ratios
            .par_iter()
            .map(|&r| {
                let tau_t = r * tau_c;
                let resp = DetectorResponse::gaussian_for_pair(tau_t)?;
                let step = g2.tau_step();
                let half = (8.0 * tau_t / step).ceil() as usize;
                let fine = G2Curve::from_fn(step, half, |t| g2.interpolate(t))?;
                Ok(convolve_detector(&fine, &resp, &resp)?.at_zero() - 1.0)
            })
            .collect::<Result<_>>()?;
        let xs: Vec<f64> = ratios.iter().map(|r| r.ln()).collect();
        let ys: Vec<f64> = excess.iter().map(|e| e.ln()).collect();
        let slope = least_squares_slope(&xs, &ys);
        let analytic = scarl_contrast(tau_c_theory, 1000.0 * tau_c)?;
        let elapsed = start.elapsed().as_secs_f64();
        Ok((
            (slope - SCARL_SLOPE).abs() <= SCARL_SLOPE_TOL && elapsed < SCARL_MAX_SECONDS,
            format!(
                "slope {slope:.4}; excess {:.3e} at τ_t/τ_c=10, {:.3e} at 1000 (closed form {analytic:.3e})",
                excess[0],
                excess[excess.len() - 1]
            ),
        ))
    })
}

fn least_squares_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

pub fn mode_dilution() -> CriterionReport {
    timed(7, "mode dilution", true, || {
        let tau_c = 0.436e-9;
        let fwhm = lorentzian_fwhm(tau_c);
        let mut passed = true;
        let mut parts = Vec::new();
        for (m, seed) in [(1u32, 71u64), (2, 72), (10, 73)] {
            let mut cfg = lorentzian_scenario(fwhm, 50.0, m, seed, 16, 5.0)?;
            let spectrum = cfg.spectrum()?;
            set_rates(&mut cfg, &spectrum, OCCUPANCY, 1e7);
            let fit = closure_fit(&cfg)?;
            let expected = 1.0 + 1.0 / m as f64;
            passed &= (fit.g2_zero - expected).abs() <= MODES_G2_TOL;
            parts.push(format!("M={m}: {:.4} (want {expected:.3})", fit.g2_zero));
        }
        Ok((passed, parts.join(", ")))
    })
}

/// Random sorted timestamps: exponential gaps with occasional exact ties.
fn random_stream(rng: &mut ChaCha8Rng, n: usize, mean_gap: f64, tie_prob: f64) -> Vec<u64> {
    let mut t = rng.random_range(0..10_000u64);
    (0..n)
        .map(|_| {
            if !rng.random_bool(tie_prob) {
                let u: f64 = rng.random();
                t += (-(1.0 - u).ln() * mean_gap).round() as u64;
            }
            t
        })
        .collect()
}

pub fn correlator_correctness() -> CriterionReport {
    timed(8, "correlator vs brute force", true, || {
        const INSTANCES: u64 = 200;
        const EVENTS: usize = 10_000;
        const CHUNKS: [usize; 5] = [1, 2, 3, 7, 16];
        let failures: Vec<String> = (0..INSTANCES)
            .into_par_iter()
            .map(|i| -> Result<Option<String>> {
                let mut rng = ChaCha8Rng::seed_from_u64(0x8000 + i);
                let bin = rng.random_range(1..=64u64);
                let half_bins = rng.random_range(10..=200u64);
                let range_ps = if bin % 2 == 0 && rng.random_bool(0.5) {
                    half_bins * bin + bin / 2
                } else {
                    half_bins * bin
                };
                let mean_gap = rng.random_range(0.05..2.0) * range_ps as f64;
                let tie_prob = if rng.random_bool(0.3) { 0.2 } else { 0.0 };
                let a = random_stream(&mut rng, EVENTS, mean_gap, tie_prob);
                let b = random_stream(&mut rng, EVENTS, mean_gap, tie_prob);
                let (bw, range) = (bin as f64 * 1e-12, range_ps as f64 * 1e-12);
                let oracle = brute_force(&a, &b, bw, range)?;
                for chunks in CHUNKS {
                    let h = correlate_timestamps(&a, &b, bw, range, CorrelatorMode::Full, chunks)?;
                    if h.counts() != oracle.as_slice() {
                        return Ok(Some(format!("instance {i}, {chunks} chunks")));
                    }
                }
                Ok(None)
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .flatten()
            .collect();
        Ok((
            failures.is_empty(),
            if failures.is_empty() {
                format!("{INSTANCES} instances × {} chunkings identical", CHUNKS.len())
            } else {
                format!("{} mismatches, first: {}", failures.len(), failures[0])
            },
        ))
    })
}

/// One timed Full-mode correlation of two independent Poisson streams.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Throughput {
    /// Events in both channels together.
    pub events: usize,
    pub seconds: f64,
    pub pairs: u64,
}

impl Throughput {
    pub fn events_per_second(&self) -> f64 {
        self.events as f64 / self.seconds
    }
}

/// Correlates `events_per_channel` Poisson events per channel at `rate_hz`;
/// only the correlation itself is timed.
pub fn measure_throughput(
    events_per_channel: usize,
    rate_hz: f64,
    bin_width: f64,
    tau_range: f64,
    seed: u64,
) -> Result<Throughput> {
    if !(rate_hz > 0.0) {
        return Err(Error::domain("benchmark rate must be > 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gap_ps = 1e12 / rate_hz;
    let a = EventStream::new(0, random_stream(&mut rng, events_per_channel, gap_ps, 0.0))?;
    let b = EventStream::new(1, random_stream(&mut rng, events_per_channel, gap_ps, 0.0))?;
    let start = Instant::now();
    let h = cross_correlate(&a, &b, bin_width, tau_range, CorrelatorMode::Full)?;
    Ok(Throughput {
        events: a.len() + b.len(),
        seconds: start.elapsed().as_secs_f64(),
        pairs: h.total(),
    })
}

pub fn correlator_throughput() -> CriterionReport {
    timed(9, "correlator throughput", false, || {
        let t = measure_throughput(5_000_000, 1e6, 16e-12, 50e-9, 9)?;
        let rate = t.events_per_second();
        Ok((
            rate >= THROUGHPUT_EVENTS_PER_S,
            format!("{rate:.3e} events/s ({} pairs binned)", t.pairs),
        ))
    })
}

pub fn dead_time_deficit() -> CriterionReport {
    timed(10, "start-stop dead-time deficit", true, || {
        dead_time_study(DEADTIME_SEED, DEADTIME_DEGENERACY, DEADTIME_EVENTS)
    })
}

/// Full versus start-stop correlation of one thermal stream.
///
/// `degeneracy` is the photon count per channel per coherence time. Start-stop
/// keeps only the first completed pair, which tilts the histogram by about
/// exp(−r|τ|); the tilt stays well inside the fit error only when r·R ≪ 1.
pub fn dead_time_study(seed: u64, degeneracy: f64, events: f64) -> Result<(bool, String)> {
    let tau_c = 0.436e-9;
    let mut cfg = lorentzian_scenario(lorentzian_fwhm(tau_c), 10.0, 1, seed, 20, 2.5)?;
    cfg.synthesis.mean_rate_hz = degeneracy / tau_c;
    cfg.synthesis.duration_s = events / cfg.synthesis.mean_rate_hz;
    cfg.synthesis.block_length = None;
    let (_, a, b) = synthesize(&cfg)?;
    let (bw, range) = (cfg.bin_width(), cfg.tau_range());
    let full = cross_correlate(&a, &b, bw, range, CorrelatorMode::Full)?;
    let full_fit = fit_bunching(&full, &FitOptions::default())?;
    let sigma = full_fit.std_errors()[2];
    let mut passed = true;
    let mut last_ratio = 1.0;
    let mut parts = vec![format!(
        "full τ_c {:.4} ± {:.4} ns, {} pairs",
        full_fit.tau_c * 1e9,
        sigma * 1e9,
        full.total()
    )];
    for dead_ns in DEADTIME_SWEEP_NS {
        let mode = CorrelatorMode::StartStop {
            dead_time: dead_ns * 1e-9,
        };
        let ss = cross_correlate(&a, &b, bw, range, mode)?;
        let ratio = deficit_report(&full, &ss)?.total_ratio;
        let fit = fit_bunching(&ss, &FitOptions::default())?;
        let z = (fit.tau_c - full_fit.tau_c) / sigma;
        passed &= ratio < last_ratio && z.abs() <= DEADTIME_TAU_C_SIGMAS;
        last_ratio = ratio;
        parts.push(format!("D={dead_ns} ns: ratio {ratio:.4}, Δτ_c {z:+.2}σ"));
    }
    Ok((passed, parts.join("; ")))
}

pub fn planck_coherence() -> CriterionReport {
    timed(11, "Planck coherence time", true, || {
        let tau_c = planck_coherence_time(5800.0)?;
        Ok((
            (PLANCK_TAU_C_MIN..=PLANCK_TAU_C_MAX).contains(&tau_c),
            format!("τ_c {tau_c:.4e} s, band [{PLANCK_TAU_C_MIN:e}, {PLANCK_TAU_C_MAX:e}]"),
        ))
    })
}

/// Equivalent-width coherence time of an unfiltered blackbody.
pub fn planck_coherence_time(temperature: f64) -> Result<f64> {
    // 0.1 THz steps out to 5 PHz cover the 5800 K spectrum to < 1e-12 of its power.
    let grid = FrequencyGrid::new(1e11, 1e11, 50_000)?;
    let s = SpectralDensity::planck(temperature, grid)?;
    coherence_time(&gamma_auto(&s)?)
}

fn scratch_dir(tag: &str) -> Result<PathBuf> {
    use std::sync::atomic::{AtomicUsize, Ordering};
    static COUNTER: AtomicUsize = AtomicUsize::new(0);
    let n = COUNTER.fetch_add(1, Ordering::Relaxed);
    let dir = std::env::temp_dir().join(format!("bunchlab-{tag}-{}-{n}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn manifest_without_timestamp(dir: &std::path::Path) -> Result<serde_json::Value> {
    let path = dir.join(MANIFEST_JSON);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut v: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::format(0, e.to_string()))?;
    if let Some(obj) = v.as_object_mut() {
        obj.remove("created_unix_s");
    }
    Ok(v)
}

pub fn determinism() -> CriterionReport {
    timed(12, "pipeline determinism", true, || {
        let mut cfg = hg_replica_config()?;
        cfg.synthesis.duration_s = 2e5 / cfg.synthesis.mean_rate_hz;
        let (one, two) = (scratch_dir("determinism")?, scratch_dir("determinism")?);
        // Once on a single thread and once on the global pool.
        let single = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .map_err(|e| Error::domain(e.to_string()))?;
        single.install(|| run_pipeline(&cfg, &one))?;
        run_pipeline(&cfg, &two)?;
        let mut differing = Vec::new();
        for name in ARTIFACTS {
            let x = std::fs::read(one.join(name)).map_err(|e| Error::io(one.join(name), e))?;
            let y = std::fs::read(two.join(name)).map_err(|e| Error::io(two.join(name), e))?;
            if x != y {
                differing.push(name);
            }
        }
        let manifests_match = manifest_without_timestamp(&one)? == manifest_without_timestamp(&two)?;
        let _ = std::fs::remove_dir_all(&one);
        let _ = std::fs::remove_dir_all(&two);
        Ok((
            differing.is_empty() && manifests_match,
            if differing.is_empty() {
                format!("{} artifacts byte-identical, manifests match: {manifests_match}", ARTIFACTS.len())
            } else {
                format!("differing: {}", differing.join(", "))
            },
        ))
    })
}

/// Every criterion by id, in order.
pub const CRITERIA: [(u32, fn() -> CriterionReport); 12] = [
    (1, etalon_physics),
    (2, lorentzian_analytic),
    (3, ideal_thermal_closure),
    (4, hg_replica),
    (5, thick_apd_suppression),
    (6, scarl_scaling),
    (7, mode_dilution),
    (8, correlator_correctness),
    (9, correlator_throughput),
    (10, dead_time_deficit),
    (11, planck_coherence),
    (12, determinism),
];

/// Runs every criterion in order.
pub fn run_all() -> Vec<CriterionReport> {
    run_selected(&[])
}

/// Runs the criteria whose ids are listed, or all of them for an empty list,
/// calling `on_report` as each one finishes.
pub fn run_selected_with(ids: &[u32], mut on_report: impl FnMut(&CriterionReport)) -> Vec<CriterionReport> {
    CRITERIA
        .iter()
        .filter(|(id, _)| ids.is_empty() || ids.contains(id))
        .map(|(_, check)| {
            let report = check();
            on_report(&report);
            report
        })
        .collect()
}

pub fn run_selected(ids: &[u32]) -> Vec<CriterionReport> {
    run_selected_with(ids, |_| {})
}

/// One line per criterion plus a summary line.
pub fn format_table(reports: &[CriterionReport]) -> String {
    let mut out = String::new();
    for r in reports {
        out.push_str(&r.to_string());
        out.push('\n');
    }
    let passed = reports.iter().filter(|r| r.passed).count();
    out.push_str(&format!("{passed}/{} criteria passed\n", reports.len()));
    out
}
