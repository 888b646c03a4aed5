//! TOML scenario files.
//!
//! Keys carry their unit as a suffix (`_nm`, `_ghz`, `_mhz`, `_ps`, `_ns`,
//! `_mm`, `_k`, `_hz`, `_s`); everything is converted to SI on load.
//! Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::coherence::DetectorResponse;
use crate::correlator::CorrelatorMode;
use crate::inference::{FitOptions, InitialGuess};
use crate::photostream::{auto_block_length, DetectorModel, SynthesisConfig};
use crate::physics::wavelength_to_frequency;
use crate::spectral::{
    compose_chain, line_set_density, BandpassFilter, EtalonFilter, Filter, FrequencyGrid, GratingFilter,
    LineComponent, LineShape, SpectralDensity, ETALON_TUNING_RATE,
};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Default output directory, relative to the config file.
    pub output_dir: Option<String>,
    pub source: SourceConfig,
    pub grid: GridConfig,
    #[serde(default)]
    pub filters: Vec<FilterConfig>,
    pub detectors: DetectorPair,
    pub synthesis: SynthesisSection,
    pub crosstalk: Option<CrosstalkConfig>,
    pub correlator: CorrelatorSection,
    #[serde(default)]
    pub fit: FitSection,
    #[serde(default)]
    pub theory: TheorySection,
    /// Directory of the config file, for resolving relative paths.
    #[serde(skip)]
    pub base_dir: PathBuf,
    /// Path the config was loaded from, if any.
    #[serde(skip)]
    pub source_path: Option<PathBuf>,
    /// Raw TOML text, hashed into the run manifest.
    #[serde(skip)]
    pub source_text: String,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum SourceConfig {
    Blackbody {
        temperature_k: f64,
    },
    Lines {
        file: Option<String>,
        lines: Option<Vec<LineConfig>>,
    },
    Flat {},
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineConfig {
    pub center_nm: f64,
    pub fwhm_ghz: f64,
    #[serde(default = "one")]
    pub weight: f64,
    pub shape: LineShape,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct LineFile {
    lines: Vec<LineConfig>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub center_nm: f64,
    pub half_span_ghz: f64,
    pub max_step_mhz: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum FilterConfig {
    Grating {
        center_nm: f64,
        fwhm_nm: f64,
        peak_transmission: f64,
    },
    Bandpass {
        center_nm: f64,
        fwhm_nm: f64,
        peak_transmission: f64,
    },
    Etalon {
        thickness_mm: f64,
        refractive_index: f64,
        reflectivity: f64,
        set_temperature_k: Option<f64>,
        reference_temperature_k: Option<f64>,
        tuning_rate_ghz_per_k: Option<f64>,
        loss_factor: Option<f64>,
        /// Chooses the set temperature that puts a transmission peak here.
        tune_to_nm: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorPair {
    pub a: DetectorConfig,
    pub b: DetectorConfig,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorConfig {
    #[serde(default = "one")]
    pub efficiency: f64,
    #[serde(default)]
    pub core_fwhm_ps: f64,
    #[serde(default)]
    pub tail_weight: f64,
    #[serde(default)]
    pub tail_decay_ps: f64,
    #[serde(default)]
    pub dead_time_ns: f64,
    #[serde(default)]
    pub dark_rate_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesisSection {
    pub seed: u64,
    pub duration_s: f64,
    pub mean_rate_hz: f64,
    pub block_length: Option<usize>,
    #[serde(default = "one_u32")]
    pub modes: u32,
    #[serde(default = "half")]
    pub split_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrosstalkConfig {
    pub probability: f64,
    pub delay_mean_ps: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeName {
    Full,
    StartStop,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrelatorSection {
    pub bin_width_ps: f64,
    pub tau_range_ns: f64,
    #[serde(default = "full")]
    pub mode: ModeName,
    #[serde(default)]
    pub dead_time_ns: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSection {
    pub exclude_center_ps: Option<f64>,
    pub initial_a: Option<f64>,
    pub initial_b: Option<f64>,
    pub initial_tau_c_ns: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheorySection {
    pub tau_step_ps: Option<f64>,
    pub tau_max_ns: Option<f64>,
}

fn one() -> f64 {
    1.0
}

fn one_u32() -> u32 {
    1
}

fn half() -> f64 {
    0.5
}

fn full() -> ModeName {
    ModeName::Full
}

fn positive(key: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(key, format!("must be > 0 (got {v})")))
    }
}

fn non_negative(key: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(key, format!("must be ≥ 0 (got {v})")))
    }
}

fn fraction(key: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::config(key, format!("must lie in [0, 1] (got {v})")))
    }
}

/// Tags a library error with the config key it came from.
fn at<T>(key: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::config(key, e.to_string()))
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text).map_err(|e| match e {
            Error::Config { path: key, message } if key == "<config>" => {
                Error::config(path.display().to_string(), message)
            }
            Error::Config { path: key, message } => {
                Error::config(path.display().to_string(), format!("{key}: {message}"))
            }
            other => other,
        })?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.source_path = Some(path.to_path_buf());
        Ok(cfg)
    }

    /// Parses and validates TOML text; relative paths resolve against the working directory.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| Error::config("<config>", e.to_string().trim_end()))?;
        cfg.source_text = text.to_string();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        match &self.source {
            SourceConfig::Blackbody { temperature_k } => positive("source.temperature_k", *temperature_k)?,
            SourceConfig::Lines { file, lines } => match (file, lines) {
                (Some(_), Some(_)) | (None, None) => {
                    return Err(Error::config("source", "give exactly one of `file` or `lines`"))
                }
                (None, Some(lines)) => validate_lines("source.lines", lines)?,
                (Some(_), None) => {}
            },
            SourceConfig::Flat {} => {}
        }
        positive("grid.center_nm", self.grid.center_nm)?;
        positive("grid.half_span_ghz", self.grid.half_span_ghz)?;
        positive("grid.max_step_mhz", self.grid.max_step_mhz)?;
        for (i, f) in self.filters.iter().enumerate() {
            let key = |k: &str| format!("filters[{i}].{k}");
            match f {
                FilterConfig::Grating {
                    center_nm,
                    fwhm_nm,
                    peak_transmission,
                }
                | FilterConfig::Bandpass {
                    center_nm,
                    fwhm_nm,
                    peak_transmission,
                } => {
                    positive(&key("center_nm"), *center_nm)?;
                    positive(&key("fwhm_nm"), *fwhm_nm)?;
                    fraction(&key("peak_transmission"), *peak_transmission)?;
                }
                FilterConfig::Etalon { .. } => {
                    at(&format!("filters[{i}]"), self.etalon(f).map(|_| ()))?;
                }
            }
        }
        for (name, d) in [("a", &self.detectors.a), ("b", &self.detectors.b)] {
            at(&format!("detectors.{name}"), d.model().map(|_| ()))?;
        }
        let s = &self.synthesis;
        positive("synthesis.duration_s", s.duration_s)?;
        positive("synthesis.mean_rate_hz", s.mean_rate_hz)?;
        if s.modes < 1 {
            return Err(Error::config("synthesis.modes", "must be ≥ 1"));
        }
        if !(s.split_ratio > 0.0 && s.split_ratio < 1.0) {
            return Err(Error::config("synthesis.split_ratio", "must lie in (0, 1)"));
        }
        if let Some(b) = s.block_length {
            if b < crate::photostream::MIN_BLOCK_LENGTH {
                return Err(Error::config(
                    "synthesis.block_length",
                    format!("must be ≥ {}", crate::photostream::MIN_BLOCK_LENGTH),
                ));
            }
        }
        if let Some(x) = &self.crosstalk {
            fraction("crosstalk.probability", x.probability)?;
            positive("crosstalk.delay_mean_ps", x.delay_mean_ps)?;
        }
        positive("correlator.bin_width_ps", self.correlator.bin_width_ps)?;
        positive("correlator.tau_range_ns", self.correlator.tau_range_ns)?;
        non_negative("correlator.dead_time_ns", self.correlator.dead_time_ns)?;
        if self.correlator.mode == ModeName::Full && self.correlator.dead_time_ns != 0.0 {
            return Err(Error::config("correlator.dead_time_ns", "only applies to mode = \"start_stop\""));
        }
        if let Some(w) = self.fit.exclude_center_ps {
            non_negative("fit.exclude_center_ps", w)?;
        }
        let f = &self.fit;
        match (f.initial_a, f.initial_b, f.initial_tau_c_ns) {
            (None, None, None) => {}
            (Some(_), Some(_), Some(t)) => positive("fit.initial_tau_c_ns", t)?,
            _ => {
                return Err(Error::config(
                    "fit",
                    "initial_a, initial_b and initial_tau_c_ns must be given together",
                ))
            }
        }
        if let Some(v) = self.theory.tau_step_ps {
            positive("theory.tau_step_ps", v)?;
        }
        if let Some(v) = self.theory.tau_max_ns {
            positive("theory.tau_max_ns", v)?;
        }
        Ok(())
    }

    pub fn frequency_grid(&self) -> Result<FrequencyGrid> {
        at(
            "grid",
            FrequencyGrid::centered(
                wavelength_to_frequency(self.grid.center_nm * 1e-9),
                self.grid.half_span_ghz * 1e9,
                self.grid.max_step_mhz * 1e6,
            ),
        )
    }

    pub fn lines(&self) -> Result<Vec<LineComponent>> {
        let SourceConfig::Lines { file, lines } = &self.source else {
            return Ok(Vec::new());
        };
        let owned;
        let (key, list) = match (file, lines) {
            (Some(file), _) => {
                let path = self.base_dir.join(file);
                let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                let parsed: LineFile = toml::from_str(&text)
                    .map_err(|e| Error::config(path.display().to_string(), e.to_string().trim_end()))?;
                validate_lines(&path.display().to_string(), &parsed.lines)?;
                owned = parsed.lines;
                ("source.file", &owned)
            }
            (None, Some(lines)) => ("source.lines", lines),
            (None, None) => return Err(Error::config("source", "give exactly one of `file` or `lines`")),
        };
        list.iter()
            .enumerate()
            .map(|(i, l)| {
                at(
                    &format!("{key}[{i}]"),
                    LineComponent::new(
                        wavelength_to_frequency(l.center_nm * 1e-9),
                        l.fwhm_ghz * 1e9,
                        l.weight,
                        l.shape,
                    ),
                )
            })
            .collect()
    }

    fn etalon(&self, f: &FilterConfig) -> Result<EtalonFilter> {
        let FilterConfig::Etalon {
            thickness_mm,
            refractive_index,
            reflectivity,
            set_temperature_k,
            reference_temperature_k,
            tuning_rate_ghz_per_k,
            loss_factor,
            tune_to_nm,
        } = f
        else {
            unreachable!("etalon() called on a non-etalon filter")
        };
        let mut e = EtalonFilter::new(*thickness_mm * 1e-3, *refractive_index, *reflectivity)?;
        if let Some(t) = reference_temperature_k {
            e.reference_temperature = *t;
            e.set_temperature = *t;
        }
        if let Some(t) = set_temperature_k {
            e.set_temperature = *t;
        }
        e.tuning_rate = tuning_rate_ghz_per_k.map_or(ETALON_TUNING_RATE, |r| r * 1e9);
        if let Some(l) = loss_factor {
            e.loss_factor = *l;
        }
        if let Some(nm) = tune_to_nm {
            if set_temperature_k.is_some() {
                return Err(Error::domain("give either set_temperature_k or tune_to_nm"));
            }
            e = e.tuned_to(wavelength_to_frequency(nm * 1e-9));
        }
        e.validate()?;
        Ok(e)
    }

    pub fn filter_chain(&self) -> Result<Vec<Filter>> {
        self.filters
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let key = format!("filters[{i}]");
                Ok(match f {
                    FilterConfig::Grating {
                        center_nm,
                        fwhm_nm,
                        peak_transmission,
                    } => at(&key, GratingFilter::new(center_nm * 1e-9, fwhm_nm * 1e-9, *peak_transmission))?.into(),
                    FilterConfig::Bandpass {
                        center_nm,
                        fwhm_nm,
                        peak_transmission,
                    } => at(&key, BandpassFilter::new(center_nm * 1e-9, fwhm_nm * 1e-9, *peak_transmission))?.into(),
                    FilterConfig::Etalon { .. } => at(&key, self.etalon(f))?.into(),
                })
            })
            .collect()
    }

    /// Source spectrum on the configured grid times the filter chain.
    pub fn spectrum(&self) -> Result<SpectralDensity> {
        let grid = self.frequency_grid()?;
        let source = match &self.source {
            SourceConfig::Blackbody { temperature_k } => at("source", SpectralDensity::planck(*temperature_k, grid))?,
            SourceConfig::Lines { .. } => at("source", line_set_density(&self.lines()?, grid))?,
            SourceConfig::Flat {} => at("source", SpectralDensity::flat(grid))?,
        };
        at("filters", compose_chain(&source, &self.filter_chain()?))
    }

    pub fn detector(&self, channel: usize) -> Result<DetectorModel> {
        let (key, d) = match channel {
            0 => ("detectors.a", &self.detectors.a),
            _ => ("detectors.b", &self.detectors.b),
        };
        at(key, d.model())
    }

    /// Synthesis parameters for `spectrum`; the block length defaults to the
    /// shortest admissible power of two.
    pub fn synthesis(&self, spectrum: &SpectralDensity) -> Result<SynthesisConfig> {
        let s = &self.synthesis;
        let block = s.block_length.unwrap_or_else(|| auto_block_length(spectrum));
        let cfg = at(
            "synthesis",
            SynthesisConfig::new(s.seed, s.duration_s, s.mean_rate_hz, block),
        )?;
        at("synthesis.modes", cfg.with_modes(s.modes))
    }

    pub fn correlator_mode(&self) -> CorrelatorMode {
        match self.correlator.mode {
            ModeName::Full => CorrelatorMode::Full,
            ModeName::StartStop => CorrelatorMode::StartStop {
                dead_time: self.correlator.dead_time_ns * 1e-9,
            },
        }
    }

    pub fn bin_width(&self) -> f64 {
        self.correlator.bin_width_ps * 1e-12
    }

    pub fn tau_range(&self) -> f64 {
        self.correlator.tau_range_ns * 1e-9
    }

    pub fn fit_options(&self) -> FitOptions {
        let f = &self.fit;
        FitOptions {
            initial: match (f.initial_a, f.initial_b, f.initial_tau_c_ns) {
                (Some(a), Some(b), Some(t)) => Some(InitialGuess { a, b, tau_c: t * 1e-9 }),
                _ => None,
            },
            exclude_center: f.exclude_center_ps.map(|w| w * 1e-12),
            ..FitOptions::default()
        }
    }

    pub fn output_dir(&self) -> Option<PathBuf> {
        self.output_dir.as_ref().map(|d| self.base_dir.join(d))
    }
}

fn validate_lines(key: &str, lines: &[LineConfig]) -> Result<()> {
    if lines.is_empty() {
        return Err(Error::config(key, "at least one line is required"));
    }
    for (i, l) in lines.iter().enumerate() {
        positive(&format!("{key}[{i}].center_nm"), l.center_nm)?;
        positive(&format!("{key}[{i}].fwhm_ghz"), l.fwhm_ghz)?;
        positive(&format!("{key}[{i}].weight"), l.weight)?;
    }
    Ok(())
}

impl DetectorConfig {
    pub fn model(&self) -> Result<DetectorModel> {
        let response = DetectorResponse::new(
            self.core_fwhm_ps * 1e-12,
            self.tail_weight,
            self.tail_decay_ps * 1e-12,
        )?;
        DetectorModel::new(self.efficiency, response, self.dead_time_ns * 1e-9, self.dark_rate_hz)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[source]
kind = "lines"
lines = [{ center_nm = 546.0735, fwhm_ghz = 2.0, shape = "lorentzian" }]

[grid]
center_nm = 546.0735
half_span_ghz = 100.0
max_step_mhz = 200.0

[detectors.a]
[detectors.b]
core_fwhm_ps = 28.28

[synthesis]
seed = 3
duration_s = 1e-6
mean_rate_hz = 1e9

[correlator]
bin_width_ps = 8
tau_range_ns = 2
"#;

    #[test]
    fn minimal_config_loads() {
        let cfg = ScenarioConfig::parse(MINIMAL).unwrap();
        assert_eq!(cfg.synthesis.modes, 1);
        assert_eq!(cfg.synthesis.split_ratio, 0.5);
        assert_eq!(cfg.correlator_mode(), CorrelatorMode::Full);
        assert!((cfg.bin_width() - 8e-12).abs() < 1e-24);
        let d = cfg.detector(1).unwrap();
        assert!((d.response.core_fwhm - 28.28e-12).abs() < 1e-20);
        let s = cfg.spectrum().unwrap();
        assert!((s.half_max_width() / 2e9 - 1.0).abs() < 0.01);
    }

    #[test]
    fn unknown_key_rejected() {
        let text = MINIMAL.replace("seed = 3", "seed = 3\nsed = 4");
        let err = ScenarioConfig::parse(&text).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("sed"), "{err}");
    }

    #[test]
    fn missing_field_named() {
        let text = MINIMAL.replace("mean_rate_hz = 1e9\n", "");
        let err = ScenarioConfig::parse(&text).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("mean_rate_hz"), "{err}");
    }

    #[test]
    fn range_violation_names_key() {
        let text = MINIMAL.replace("bin_width_ps = 8", "bin_width_ps = -8");
        let err = ScenarioConfig::parse(&text).unwrap_err();
        assert!(err.to_string().contains("correlator.bin_width_ps"), "{err}");
        let text = MINIMAL.replace("[detectors.a]", "[detectors.a]\nefficiency = 1.5");
        let err = ScenarioConfig::parse(&text).unwrap_err();
        assert!(err.to_string().contains("detectors.a"), "{err}");
    }

    #[test]
    fn filters_parse() {
        let text = format!(
            "{MINIMAL}\n[[filters]]\nkind = \"grating\"\ncenter_nm = 546.0735\nfwhm_nm = 0.122\npeak_transmission = 0.15\n\n[[filters]]\nkind = \"etalon\"\nthickness_mm = 0.5\nrefractive_index = 1.46\nreflectivity = 0.97\ntune_to_nm = 546.0735\n"
        );
        let cfg = ScenarioConfig::parse(&text).unwrap();
        let chain = cfg.filter_chain().unwrap();
        assert_eq!(chain.len(), 2);
        let Filter::Etalon(e) = chain[1] else { panic!() };
        let nu = wavelength_to_frequency(546.0735e-9);
        assert!((e.transmission(nu) - 1.0).abs() < 1e-9);

        let bad = text.replace("reflectivity = 0.97", "reflectivity = 0.97\nmirror = 1");
        assert!(ScenarioConfig::parse(&bad).is_err());
    }

    #[test]
    fn start_stop_mode() {
        let text = MINIMAL.replace("tau_range_ns = 2", "tau_range_ns = 2\nmode = \"start_stop\"\ndead_time_ns = 100");
        let cfg = ScenarioConfig::parse(&text).unwrap();
        assert_eq!(cfg.correlator_mode(), CorrelatorMode::StartStop { dead_time: 100.0 * 1e-9 });
    }
}
