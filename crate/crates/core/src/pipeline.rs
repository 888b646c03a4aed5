//! Scenario execution: spectrum → theory → synthesis → correlation → fit.
//!
//! Each stage reads the previous stage's files from the output directory, so
//! running the stages one at a time produces the same bytes as [`run_pipeline`].

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coherence::{
    coherence_time, convolve_detector, g2_theory, gamma_auto, gamma_from_spectrum, mode_dilute, ComplexCoherence,
    G2Curve,
};
use crate::config::ScenarioConfig;
use crate::correlator::{cross_correlate, CoincidenceHistogram};
use crate::inference::{fit_bunching, FitResult};
use crate::photostream::{
    apply_detector, beamsplit, crosstalk_inject, derive_seed, load_pbt1, role, save_pbt1, synthesize_events,
    EventStream,
};
use crate::physics::GAUSSIAN_FWHM_PER_SIGMA;
use crate::spectral::SpectralDensity;
use crate::{Error, Result};

pub const SPECTRUM_CSV: &str = "spectrum.csv";
pub const GAMMA_CSV: &str = "gamma.csv";
pub const G2_THEORY_CSV: &str = "g2_theory.csv";
pub const G2_DETECTED_CSV: &str = "g2_detected.csv";
pub const CHANNEL_A_PBT: &str = "channel_a.pbt";
pub const CHANNEL_B_PBT: &str = "channel_b.pbt";
pub const HISTOGRAM_CSV: &str = "histogram.csv";
pub const FIT_JSON: &str = "fit.json";
pub const MANIFEST_JSON: &str = "manifest.json";

pub const STAGES: [&str; 5] = ["spectrum", "theory", "synth", "correlate", "fit"];

/// Source photon stream for the configured spectrum.
pub fn source_events(cfg: &ScenarioConfig, spectrum: &SpectralDensity) -> Result<EventStream> {
    synthesize_events(spectrum, &cfg.synthesis(spectrum)?)
}

/// Beamsplitter, detectors and optional crosstalk applied to a source stream.
pub fn detect(cfg: &ScenarioConfig, source: &EventStream) -> Result<(EventStream, EventStream)> {
    let seed = cfg.synthesis.seed;
    let duration = cfg.synthesis.duration_s;
    let (a, b) = beamsplit(source, cfg.synthesis.split_ratio, derive_seed(seed, role::SPLIT, 0))?;
    let a = apply_detector(&a, &cfg.detector(0)?, duration, derive_seed(seed, role::DETECTOR_A, 0))?;
    let b = apply_detector(&b, &cfg.detector(1)?, duration, derive_seed(seed, role::DETECTOR_B, 0))?;
    match &cfg.crosstalk {
        Some(x) => crosstalk_inject(&a, &b, x.probability, x.delay_mean_ps * 1e-12, derive_seed(seed, role::CROSSTALK, 0)),
        None => Ok((a, b)),
    }
}

pub fn correlate(cfg: &ScenarioConfig, a: &EventStream, b: &EventStream) -> Result<CoincidenceHistogram> {
    cross_correlate(a, b, cfg.bin_width(), cfg.tau_range(), cfg.correlator_mode())
}

/// Theory curves for a scenario.
#[derive(Debug, Clone)]
pub struct Theory {
    pub gamma: ComplexCoherence,
    /// Ideal single-detector-pair g², mode dilution included.
    pub g2: G2Curve,
    pub coherence_time: f64,
    /// g² seen through the configured detector responses and dark counts.
    pub detected: G2Curve,
    /// Product over channels of signal/(signal + dark) rates.
    pub background_factor: f64,
}

pub fn theory(cfg: &ScenarioConfig, spectrum: &SpectralDensity) -> Result<Theory> {
    let gamma = match (cfg.theory.tau_step_ps, cfg.theory.tau_max_ns) {
        (None, None) => gamma_auto(spectrum)?,
        (step, max) => {
            let auto = crate::coherence::DelayGrid::for_spectrum(spectrum, 8.0);
            gamma_from_spectrum(
                spectrum,
                max.map_or(auto.tau_max, |m| m * 1e-9),
                step.map_or(auto.tau_step, |s| s * 1e-12),
            )?
        }
    };
    let tau_c = coherence_time(&gamma)?;
    let g2 = mode_dilute(&g2_theory(&gamma), cfg.synthesis.modes)?;
    let (detected, background_factor) = detected_g2(cfg, &g2)?;
    Ok(Theory {
        gamma,
        g2,
        coherence_time: tau_c,
        detected,
        background_factor,
    })
}

/// Resamples `g2` onto a grid fine enough for the correlator bins and wide
/// enough for the pair response, convolves, and dilutes by dark counts.
pub fn detected_g2(cfg: &ScenarioConfig, g2: &G2Curve) -> Result<(G2Curve, f64)> {
    let da = cfg.detector(0)?;
    let db = cfg.detector(1)?;
    let step = (cfg.bin_width() / 8.0).min(g2.tau_step());
    let reach = |r: &crate::coherence::DetectorResponse| {
        9.0 * r.core_fwhm / GAUSSIAN_FWHM_PER_SIGMA + if r.tail_weight > 0.0 { 40.0 * r.tail_decay } else { 0.0 }
    };
    let half_span = cfg.tau_range() + 2.0 * (reach(&da.response) + reach(&db.response)) + 4.0 * step;
    let half = (half_span / step).ceil() as usize;
    let fine = G2Curve::from_fn(step, half, |t| g2.interpolate(t))?;
    let convolved = convolve_detector(&fine, &da.response, &db.response)?;

    let source = cfg.synthesis.mean_rate_hz * 2.0;
    let ratio = cfg.synthesis.split_ratio;
    let signal_a = source * ratio * da.efficiency;
    let signal_b = source * (1.0 - ratio) * db.efficiency;
    let rho = |s: f64, d: f64| if s + d > 0.0 { s / (s + d) } else { 0.0 };
    let factor = rho(signal_a, da.dark_rate) * rho(signal_b, db.dark_rate);
    let values = convolved.values().iter().map(|g| 1.0 + (g - 1.0) * factor).collect();
    Ok((G2Curve::new(step, values)?, factor))
}

/// Mean of `g2` over each histogram bin of width `bin_width` on `[−range, range)`.
pub fn bin_averaged(g2: &G2Curve, bin_width: f64, range: f64) -> Vec<f64> {
    let bins = (2.0 * range / bin_width).round() as usize;
    (0..bins)
        .map(|i| {
            let lo = -range + i as f64 * bin_width;
            g2.bin_average(lo, lo + bin_width)
        })
        .collect()
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?))
}

pub fn read_spectrum(path: &Path) -> Result<SpectralDensity> {
    SpectralDensity::read_csv(open(path)?)
}

pub fn read_histogram(path: &Path) -> Result<CoincidenceHistogram> {
    CoincidenceHistogram::read_csv(open(path)?)
}

pub fn write_histogram(h: &CoincidenceHistogram, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    h.write_csv(&mut w).map_err(|e| Error::io(path, e))?;
    finish(w, path)
}

pub fn write_fit(fit: &FitResult, path: &Path) -> Result<()> {
    std::fs::write(path, fit.to_json()).map_err(|e| Error::io(path, e))
}

pub fn stage_spectrum(cfg: &ScenarioConfig, out: &Path) -> Result<SpectralDensity> {
    let s = cfg.spectrum()?;
    let path = out.join(SPECTRUM_CSV);
    let mut w = create(&path)?;
    s.write_csv(&mut w).map_err(|e| Error::io(&path, e))?;
    finish(w, &path)?;
    Ok(s)
}

pub fn stage_theory(cfg: &ScenarioConfig, out: &Path) -> Result<Theory> {
    let spectrum = read_spectrum(&out.join(SPECTRUM_CSV))?;
    let th = theory(cfg, &spectrum)?;

    let path = out.join(GAMMA_CSV);
    let mut w = create(&path)?;
    th.gamma.write_csv(&mut w).map_err(|e| Error::io(&path, e))?;
    finish(w, &path)?;

    let tc = th.coherence_time.to_string();
    let path = out.join(G2_THEORY_CSV);
    let mut w = create(&path)?;
    th.g2
        .write_csv(
            &mut w,
            &[("coherence_time_s", tc.clone()), ("modes", cfg.synthesis.modes.to_string())],
        )
        .map_err(|e| Error::io(&path, e))?;
    finish(w, &path)?;

    let path = out.join(G2_DETECTED_CSV);
    let mut w = create(&path)?;
    th.detected
        .write_csv(
            &mut w,
            &[
                ("coherence_time_s", tc),
                ("modes", cfg.synthesis.modes.to_string()),
                ("background_factor", th.background_factor.to_string()),
            ],
        )
        .map_err(|e| Error::io(&path, e))?;
    finish(w, &path)?;
    Ok(th)
}

pub fn stage_synth(cfg: &ScenarioConfig, out: &Path) -> Result<(EventStream, EventStream)> {
    let spectrum = read_spectrum(&out.join(SPECTRUM_CSV))?;
    let source = source_events(cfg, &spectrum)?;
    let (a, b) = detect(cfg, &source)?;
    save_pbt1(&a, &out.join(CHANNEL_A_PBT))?;
    save_pbt1(&b, &out.join(CHANNEL_B_PBT))?;
    Ok((a, b))
}

pub fn stage_correlate(cfg: &ScenarioConfig, out: &Path) -> Result<CoincidenceHistogram> {
    let a = load_pbt1(&out.join(CHANNEL_A_PBT))?;
    let b = load_pbt1(&out.join(CHANNEL_B_PBT))?;
    let h = correlate(cfg, &a, &b)?;
    write_histogram(&h, &out.join(HISTOGRAM_CSV))?;
    Ok(h)
}

pub fn stage_fit(cfg: &ScenarioConfig, out: &Path) -> Result<FitResult> {
    let h = read_histogram(&out.join(HISTOGRAM_CSV))?;
    let fit = fit_bunching(&h, &cfg.fit_options())?;
    write_fit(&fit, &out.join(FIT_JSON))?;
    Ok(fit)
}

fn run_stage(cfg: &ScenarioConfig, out: &Path, stage: &str) -> Result<Option<FitResult>> {
    match stage {
        "spectrum" => stage_spectrum(cfg, out).map(|_| None),
        "theory" => stage_theory(cfg, out).map(|_| None),
        "synth" => stage_synth(cfg, out).map(|_| None),
        "correlate" => stage_correlate(cfg, out).map(|_| None),
        "fit" => stage_fit(cfg, out).map(Some),
        other => Err(Error::domain(format!("unknown stage `{other}`"))),
    }
}

fn stage_name(stage: &str) -> &'static str {
    STAGES.iter().copied().find(|s| *s == stage).unwrap_or("unknown")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    /// `ok`, `failed` or `skipped`.
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config_path: Option<String>,
    pub config_sha256: String,
    pub seeds: BTreeMap<String, u64>,
    pub stages: Vec<StageRecord>,
    /// File name → sha256 of the artifacts present after the run.
    pub artifacts: BTreeMap<String, String>,
    pub partial: bool,
    /// Wall-clock creation time; the only non-reproducible field.
    pub created_unix_s: u64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn seeds(master: u64) -> BTreeMap<String, u64> {
    let mut m = BTreeMap::new();
    m.insert("master".into(), master);
    m.insert("split".into(), derive_seed(master, role::SPLIT, 0));
    m.insert("detector_a".into(), derive_seed(master, role::DETECTOR_A, 0));
    m.insert("detector_b".into(), derive_seed(master, role::DETECTOR_B, 0));
    m.insert("crosstalk".into(), derive_seed(master, role::CROSSTALK, 0));
    m
}

/// Artifact file names in the order the stages write them.
pub const ARTIFACTS: [&str; 8] = [
    SPECTRUM_CSV,
    GAMMA_CSV,
    G2_THEORY_CSV,
    G2_DETECTED_CSV,
    CHANNEL_A_PBT,
    CHANNEL_B_PBT,
    HISTOGRAM_CSV,
    FIT_JSON,
];

pub fn write_manifest(cfg: &ScenarioConfig, out: &Path, stages: Vec<StageRecord>) -> Result<Manifest> {
    let mut artifacts = BTreeMap::new();
    for name in ARTIFACTS {
        let path = out.join(name);
        if let Ok(bytes) = std::fs::read(&path) {
            artifacts.insert(name.to_string(), sha256_hex(&bytes));
        }
    }
    let partial = stages.iter().any(|s| s.status != "ok");
    let manifest = Manifest {
        tool: "bunchlab".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_path: cfg.source_path.as_ref().map(|p| p.display().to_string()),
        config_sha256: sha256_hex(cfg.source_text.as_bytes()),
        seeds: seeds(cfg.synthesis.seed),
        stages,
        artifacts,
        partial,
        created_unix_s: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    };
    let path = out.join(MANIFEST_JSON);
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Runs every stage in order into `out`, then writes the manifest. A failing
/// stage stops the run; the manifest marks it and the skipped stages.
pub fn run_pipeline(cfg: &ScenarioConfig, out: &Path) -> Result<FitResult> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut records = Vec::new();
    let mut failure = None;
    let mut fit = None;
    for stage in STAGES {
        if failure.is_some() {
            records.push(StageRecord {
                name: stage.into(),
                status: "skipped".into(),
                error: None,
            });
            continue;
        }
        match run_stage(cfg, out, stage) {
            Ok(f) => {
                fit = fit.or(f);
                records.push(StageRecord {
                    name: stage.into(),
                    status: "ok".into(),
                    error: None,
                });
            }
            Err(e) => {
                records.push(StageRecord {
                    name: stage.into(),
                    status: "failed".into(),
                    error: Some(e.to_string()),
                });
                failure = Some(Error::Stage {
                    stage: stage_name(stage),
                    source: Box::new(e),
                });
            }
        }
    }
    write_manifest(cfg, out, records)?;
    match failure {
        Some(e) => Err(e),
        None => Ok(fit.expect("fit stage ran")),
    }
}

/// Runs a single named stage; used by the command-line subcommands.
pub fn run_single_stage(cfg: &ScenarioConfig, out: &Path, stage: &str) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    run_stage(cfg, out, stage)
        .map(|_| ())
        .map_err(|e| Error::Stage {
            stage: stage_name(stage),
            source: Box::new(e),
        })
}

/// Default output directory: the config's `output_dir`, else `./out`.
pub fn default_output(cfg: &ScenarioConfig) -> PathBuf {
    cfg.output_dir().unwrap_or_else(|| PathBuf::from("out"))
}
