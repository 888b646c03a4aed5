//! Source spectra and the transmission filter chain.
//!
//! Everything here works in relative spectral units: only the shape of
//! S(ν) matters downstream, so no radiometric scale is carried.

use std::f64::consts::{LN_2, PI};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::numeric::{half_max_width_samples, trapezoid};
use crate::physics::{
    frequency_to_wavelength, BOLTZMANN, GAUSSIAN_FWHM_PER_SIGMA, PLANCK, SPEED_OF_LIGHT,
};
use crate::{Error, Result};

/// Uniform frequency grid `start + i·step`, `i < len`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrequencyGrid {
    pub start: f64,
    pub step: f64,
    pub len: usize,
}

impl FrequencyGrid {
    pub fn new(start: f64, step: f64, len: usize) -> Result<Self> {
        if !(step > 0.0) || !start.is_finite() || len < 2 {
            return Err(Error::domain(format!(
                "frequency grid needs step > 0 and at least 2 points (start {start}, step {step}, len {len})"
            )));
        }
        Ok(Self { start, step, len })
    }

    /// Grid centred on `center` covering `center ± half_span` with spacing at most `max_step`.
    pub fn centered(center: f64, half_span: f64, max_step: f64) -> Result<Self> {
        if !(half_span > 0.0) || !(max_step > 0.0) {
            return Err(Error::domain("grid half span and step must be positive"));
        }
        let intervals = (2.0 * half_span / max_step).ceil().max(1.0) as usize;
        let step = 2.0 * half_span / intervals as f64;
        Self::new(center - half_span, step, intervals + 1)
    }

    /// Grid policy for a grating + etalon chain: the grating window ±5 grating
    /// FWHM, sampled at no more than a fiftieth of the etalon FWHM.
    pub fn for_filter_chain(grating: &GratingFilter, etalon: &EtalonFilter) -> Result<Self> {
        let center = SPEED_OF_LIGHT / grating.center_wavelength;
        let fwhm_hz = SPEED_OF_LIGHT * grating.fwhm_wavelength / grating.center_wavelength.powi(2);
        Self::centered(center, 5.0 * fwhm_hz, etalon.fwhm() / 50.0)
    }

    pub fn nu(&self, i: usize) -> f64 {
        self.start + i as f64 * self.step
    }

    pub fn end(&self) -> f64 {
        self.nu(self.len - 1)
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len).map(move |i| self.nu(i))
    }
}

/// Sampled optical power spectrum S(ν) on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDensity {
    nu_start: f64,
    nu_step: f64,
    values: Vec<f64>,
}

impl SpectralDensity {
    pub fn new(nu_start: f64, nu_step: f64, values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::domain("spectral density needs at least 2 grid points"));
        }
        if !(nu_step > 0.0) || !nu_start.is_finite() {
            return Err(Error::domain("spectral grid must be strictly increasing"));
        }
        if let Some(i) = values.iter().position(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::domain(format!(
                "spectral density must be finite and non-negative (index {i}: {})",
                values[i]
            )));
        }
        let s = Self {
            nu_start,
            nu_step,
            values,
        };
        let total = s.integral();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::DegenerateSpectrum(format!(
                "integrated power {total} is not positive"
            )));
        }
        Ok(s)
    }

    pub fn from_fn(grid: FrequencyGrid, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(grid.start, grid.step, grid.iter().map(f).collect())
    }

    pub fn flat(grid: FrequencyGrid) -> Result<Self> {
        Self::from_fn(grid, |_| 1.0)
    }

    /// Planck spectrum at temperature `t` over the grid. Grid points at ν ≤ 0 get zero.
    pub fn planck(t: f64, grid: FrequencyGrid) -> Result<Self> {
        if !(t > 0.0) {
            return Err(Error::domain(format!("temperature must be positive, got {t}")));
        }
        Self::from_fn(grid, |nu| if nu > 0.0 { planck_unchecked(t, nu) } else { 0.0 })
    }

    pub fn grid(&self) -> FrequencyGrid {
        FrequencyGrid {
            start: self.nu_start,
            step: self.nu_step,
            len: self.values.len(),
        }
    }

    pub fn nu_start(&self) -> f64 {
        self.nu_start
    }

    pub fn nu_step(&self) -> f64 {
        self.nu_step
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn nu(&self, i: usize) -> f64 {
        self.nu_start + i as f64 * self.nu_step
    }

    /// Distance between the first and the last grid point.
    pub fn span(&self) -> f64 {
        (self.values.len() - 1) as f64 * self.nu_step
    }

    pub fn center(&self) -> f64 {
        self.nu_start + 0.5 * self.span()
    }

    pub fn integral(&self) -> f64 {
        trapezoid(&self.values, self.nu_step)
    }

    /// Full width at half maximum of the highest peak.
    pub fn half_max_width(&self) -> f64 {
        half_max_width_samples(&self.values).unwrap_or(0.0) * self.nu_step
    }

    /// Frequency of the largest sample.
    pub fn peak_frequency(&self) -> f64 {
        let i = self
            .values
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        self.nu(i)
    }

    /// Equivalent-width coherence time ∫S²dν / (∫S dν)², which equals ∫|γ(τ)|²dτ.
    pub fn equivalent_coherence_time(&self) -> f64 {
        let squares: Vec<f64> = self.values.iter().map(|v| v * v).collect();
        let total = self.integral();
        trapezoid(&squares, self.nu_step) / (total * total)
    }

    /// Linear interpolation; zero outside the grid.
    pub fn interpolate(&self, nu: f64) -> f64 {
        let x = (nu - self.nu_start) / self.nu_step;
        if x < 0.0 || x > (self.values.len() - 1) as f64 {
            return 0.0;
        }
        let i = (x.floor() as usize).min(self.values.len() - 2);
        let frac = x - i as f64;
        self.values[i] * (1.0 - frac) + self.values[i + 1] * frac
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.nu_start,
            self.nu_step,
            self.values.iter().map(|v| v * factor).collect(),
        )
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "nu_hz,density")?;
        for (i, v) in self.values.iter().enumerate() {
            writeln!(out, "{},{}", self.nu(i), v)?;
        }
        Ok(())
    }

    /// Reads the `nu_hz,density` CSV written by [`SpectralDensity::write_csv`].
    /// The grid must be uniform to a relative tolerance of 1e-6 of the step.
    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut offset = 0u64;
        let mut nus = Vec::new();
        let mut values = Vec::new();
        for (line_no, line) in input.lines().enumerate() {
            let line = line.map_err(|e| Error::format(offset, e.to_string()))?;
            let line_len = line.len() as u64 + 1;
            if line_no == 0 {
                if line.trim() != "nu_hz,density" {
                    return Err(Error::format(offset, "expected header `nu_hz,density`"));
                }
            } else if !line.trim().is_empty() {
                let (nu, v) = parse_pair(&line).ok_or_else(|| {
                    Error::format(offset, format!("malformed row `{line}`"))
                })?;
                nus.push(nu);
                values.push(v);
            }
            offset += line_len;
        }
        if nus.len() < 2 {
            return Err(Error::format(offset, "spectrum needs at least 2 rows"));
        }
        let n = nus.len();
        let step = (nus[n - 1] - nus[0]) / (n - 1) as f64;
        for (i, nu) in nus.iter().enumerate() {
            let expected = nus[0] + i as f64 * step;
            if (nu - expected).abs() > 1e-6 * step.abs() {
                return Err(Error::format(0, format!("non-uniform grid at row {}", i + 1)));
            }
        }
        Self::new(nus[0], step, values)
    }
}

fn parse_pair(line: &str) -> Option<(f64, f64)> {
    let mut it = line.split(',');
    let a = it.next()?.trim().parse().ok()?;
    let b = it.next()?.trim().parse().ok()?;
    if it.next().is_some() {
        return None;
    }
    Some((a, b))
}

fn planck_unchecked(t: f64, nu: f64) -> f64 {
    nu.powi(3) / (PLANCK * nu / (BOLTZMANN * t)).exp_m1()
}

/// Relative Planck spectral density ν³/(exp(hν/kT) − 1).
pub fn planck_density(t: f64, nu: f64) -> Result<f64> {
    if !(t > 0.0) || !(nu > 0.0) {
        return Err(Error::domain(format!(
            "planck density needs T > 0 and ν > 0 (got T={t}, ν={nu})"
        )));
    }
    Ok(planck_unchecked(t, nu))
}

/// Gaussian FWHM of a Doppler-broadened line, ν₀·sqrt(8·k·T·ln2/(m·c²)).
pub fn doppler_fwhm(nu0: f64, t: f64, atomic_mass: f64) -> Result<f64> {
    if !(nu0 > 0.0) || !(t > 0.0) || !(atomic_mass > 0.0) {
        return Err(Error::domain(
            "doppler width needs positive frequency, temperature and mass",
        ));
    }
    Ok(nu0 * (8.0 * BOLTZMANN * t * LN_2 / (atomic_mass * SPEED_OF_LIGHT * SPEED_OF_LIGHT)).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LineShape {
    Gaussian,
    Lorentzian,
}

/// One spectral line: unit-area profile scaled by `weight`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineComponent {
    pub center: f64,
    pub fwhm: f64,
    pub weight: f64,
    pub shape: LineShape,
}

impl LineComponent {
    pub fn new(center: f64, fwhm: f64, weight: f64, shape: LineShape) -> Result<Self> {
        if !(fwhm > 0.0) || !(weight >= 0.0) || !(center > 0.0) {
            return Err(Error::domain(format!(
                "line needs center > 0, fwhm > 0, weight ≥ 0 (got {center}, {fwhm}, {weight})"
            )));
        }
        Ok(Self {
            center,
            fwhm,
            weight,
            shape,
        })
    }

    pub fn profile(&self, nu: f64) -> f64 {
        let x = nu - self.center;
        match self.shape {
            LineShape::Gaussian => {
                let sigma = self.fwhm / GAUSSIAN_FWHM_PER_SIGMA;
                (-0.5 * (x / sigma).powi(2)).exp() / (sigma * (2.0 * PI).sqrt())
            }
            LineShape::Lorentzian => {
                let hw = 0.5 * self.fwhm;
                hw / (PI * (x * x + hw * hw))
            }
        }
    }
}

/// Sum of weighted unit-area line profiles on `grid`.
pub fn line_set_density(lines: &[LineComponent], grid: FrequencyGrid) -> Result<SpectralDensity> {
    if lines.is_empty() {
        return Err(Error::domain("line set is empty"));
    }
    for (index, line) in lines.iter().enumerate() {
        if line.center - 10.0 * line.fwhm < grid.start || line.center + 10.0 * line.fwhm > grid.end() {
            return Err(Error::GridTooNarrow {
                index,
                center_hz: line.center,
            });
        }
    }
    SpectralDensity::from_fn(grid, |nu| {
        lines.iter().map(|l| l.weight * l.profile(nu)).sum()
    })
}

/// Gaussian transmission in wavelength; peak at `center_wavelength`.
fn gaussian_in_wavelength(peak: f64, center: f64, fwhm: f64, wavelength: f64) -> f64 {
    let d = wavelength - center;
    peak * (-4.0 * LN_2 * d * d / (fwhm * fwhm)).exp()
}

/// Grating monochromator, Gaussian in wavelength.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GratingFilter {
    pub center_wavelength: f64,
    pub fwhm_wavelength: f64,
    pub peak_transmission: f64,
}

impl GratingFilter {
    pub fn new(center_wavelength: f64, fwhm_wavelength: f64, peak_transmission: f64) -> Result<Self> {
        check_gaussian_filter("grating", center_wavelength, fwhm_wavelength, peak_transmission)?;
        Ok(Self {
            center_wavelength,
            fwhm_wavelength,
            peak_transmission,
        })
    }

    pub fn transmission(&self, wavelength: f64) -> f64 {
        gaussian_in_wavelength(
            self.peak_transmission,
            self.center_wavelength,
            self.fwhm_wavelength,
            wavelength,
        )
    }
}

/// Interference bandpass. Its profile is not characterized beyond the FWHM,
/// so it is modelled with the same Gaussian form as the grating.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandpassFilter {
    pub center_wavelength: f64,
    pub fwhm_wavelength: f64,
    pub peak_transmission: f64,
}

impl BandpassFilter {
    pub fn new(center_wavelength: f64, fwhm_wavelength: f64, peak_transmission: f64) -> Result<Self> {
        check_gaussian_filter("bandpass", center_wavelength, fwhm_wavelength, peak_transmission)?;
        Ok(Self {
            center_wavelength,
            fwhm_wavelength,
            peak_transmission,
        })
    }

    pub fn transmission(&self, wavelength: f64) -> f64 {
        gaussian_in_wavelength(
            self.peak_transmission,
            self.center_wavelength,
            self.fwhm_wavelength,
            wavelength,
        )
    }
}

fn check_gaussian_filter(kind: &str, center: f64, fwhm: f64, peak: f64) -> Result<()> {
    if !(center > 0.0) || !(fwhm > 0.0) || !(peak > 0.0 && peak <= 1.0) {
        return Err(Error::domain(format!(
            "{kind} filter needs center > 0, fwhm > 0 and peak in (0, 1]"
        )));
    }
    Ok(())
}

/// Default etalon temperature tuning rate, Hz/K.
pub const ETALON_TUNING_RATE: f64 = -4.1e9;

/// Solid Fabry-Perot etalon at normal incidence.
///
/// Transmission is the Airy function of the round-trip phase. Heating by ΔT
/// moves the whole comb rigidly by `tuning_rate·ΔT` (to lower frequency for
/// the default negative rate).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EtalonFilter {
    pub thickness: f64,
    pub refractive_index: f64,
    pub reflectivity: f64,
    pub set_temperature: f64,
    pub reference_temperature: f64,
    pub tuning_rate: f64,
    /// Peak transmission factor; 1 for a lossless etalon.
    pub loss_factor: f64,
}

impl EtalonFilter {
    pub fn new(thickness: f64, refractive_index: f64, reflectivity: f64) -> Result<Self> {
        let e = Self {
            thickness,
            refractive_index,
            reflectivity,
            set_temperature: 293.15,
            reference_temperature: 293.15,
            tuning_rate: ETALON_TUNING_RATE,
            loss_factor: 1.0,
        };
        e.validate()?;
        Ok(e)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.thickness > 0.0) {
            return Err(Error::domain("etalon thickness must be positive"));
        }
        if !(self.refractive_index >= 1.0) {
            return Err(Error::domain("etalon refractive index must be ≥ 1"));
        }
        if !(self.reflectivity > 0.0 && self.reflectivity < 1.0) {
            return Err(Error::domain("etalon reflectivity must lie in (0, 1)"));
        }
        if !(self.loss_factor > 0.0 && self.loss_factor <= 1.0) {
            return Err(Error::domain("etalon loss factor must lie in (0, 1]"));
        }
        if !self.tuning_rate.is_finite()
            || !(self.set_temperature > 0.0)
            || !(self.reference_temperature > 0.0)
        {
            return Err(Error::domain("etalon temperatures must be positive and the tuning rate finite"));
        }
        Ok(())
    }

    pub fn with_temperature(mut self, set_temperature: f64) -> Self {
        self.set_temperature = set_temperature;
        self
    }

    /// Sets the temperature so that the nearest resonance sits exactly at `nu`.
    pub fn tuned_to(mut self, nu: f64) -> Self {
        let fsr = self.fsr();
        let order = (nu / fsr).round();
        let shift = nu - order * fsr;
        self.set_temperature = self.reference_temperature + shift / self.tuning_rate;
        self
    }

    /// Free spectral range c/(2nd).
    pub fn fsr(&self) -> f64 {
        SPEED_OF_LIGHT / (2.0 * self.refractive_index * self.thickness)
    }

    /// Reflectivity finesse π√R/(1−R).
    pub fn finesse(&self) -> f64 {
        PI * self.reflectivity.sqrt() / (1.0 - self.reflectivity)
    }

    /// Exact half-maximum width of one Airy peak.
    pub fn fwhm(&self) -> f64 {
        let r = self.reflectivity;
        2.0 * self.fsr() / PI * ((1.0 - r) / (2.0 * r.sqrt())).asin()
    }

    /// Rigid comb displacement from the temperature offset.
    pub fn frequency_shift(&self) -> f64 {
        self.tuning_rate * (self.set_temperature - self.reference_temperature)
    }

    pub fn transmission(&self, nu: f64) -> f64 {
        let fsr = self.fsr();
        // Reduce the phase before the sine so ν ~ 10^14 Hz keeps full precision.
        let cycles = ((nu - self.frequency_shift()) / fsr).rem_euclid(1.0);
        let coeff = (2.0 * self.finesse() / PI).powi(2);
        let s = (PI * cycles).sin();
        self.loss_factor / (1.0 + coeff * s * s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Filter {
    Bandpass(BandpassFilter),
    Grating(GratingFilter),
    Etalon(EtalonFilter),
}

impl Filter {
    /// Power transmission at optical frequency `nu`.
    pub fn transmission(&self, nu: f64) -> f64 {
        match self {
            Filter::Bandpass(f) => f.transmission(frequency_to_wavelength(nu)),
            Filter::Grating(f) => f.transmission(frequency_to_wavelength(nu)),
            Filter::Etalon(f) => f.transmission(nu),
        }
    }
}

impl From<GratingFilter> for Filter {
    fn from(f: GratingFilter) -> Self {
        Filter::Grating(f)
    }
}

impl From<BandpassFilter> for Filter {
    fn from(f: BandpassFilter) -> Self {
        Filter::Bandpass(f)
    }
}

impl From<EtalonFilter> for Filter {
    fn from(f: EtalonFilter) -> Self {
        Filter::Etalon(f)
    }
}

/// Multiplies `source` by each filter's transmission on the source grid.
pub fn compose_chain(source: &SpectralDensity, filters: &[Filter]) -> Result<SpectralDensity> {
    if filters.is_empty() {
        return Ok(source.clone());
    }
    let values: Vec<f64> = source
        .values
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let nu = source.nu(i);
            filters.iter().fold(*v, |acc, f| acc * f.transmission(nu))
        })
        .collect();
    let power = trapezoid(&values, source.nu_step);
    if !(power > f64::EPSILON * source.integral()) {
        return Err(Error::DegenerateSpectrum(format!(
            "filter chain transmits {power:e} of {:e}",
            source.integral()
        )));
    }
    SpectralDensity::new(source.nu_start, source.nu_step, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::ATOMIC_MASS_UNIT;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bench_etalon() -> EtalonFilter {
        EtalonFilter::new(0.5e-3, 1.46, 0.97).unwrap()
    }

    /// Brute-force argmax of the Planck density over a dense grid.
    fn planck_argmax(t: f64) -> f64 {
        let (lo, hi, n) = (1e12, 3e15, 3_000_000);
        let step = (hi - lo) / n as f64;
        let mut best = (0.0, f64::MIN);
        for i in 0..=n {
            let nu = lo + i as f64 * step;
            let v = planck_density(t, nu).unwrap();
            if v > best.1 {
                best = (nu, v);
            }
        }
        best.0
    }

    #[test]
    fn wien_displacement_in_frequency() {
        for t in [3000.0, 5800.0, 10000.0] {
            let peak = planck_argmax(t);
            assert!((peak / (5.879e10 * t) - 1.0).abs() < 1e-3, "T={t}: {peak}");
        }
        assert!((planck_argmax(5800.0) - 3.41e14).abs() < 0.01e14);
    }

    #[test]
    fn planck_vanishes_at_low_frequency() {
        let v = planck_density(5800.0, 1.0).unwrap();
        assert!(v < 1e-10 * planck_density(5800.0, 3.4e14).unwrap());
    }

    #[test]
    fn planck_ratio_matches_closed_form() {
        let (t, nu) = (5800.0, 5.49e14);
        let direct = |nu: f64| nu * nu * nu / ((PLANCK * nu / (BOLTZMANN * t)).exp() - 1.0);
        let ratio = planck_density(t, nu).unwrap() / planck_density(t, 2.0 * nu).unwrap();
        assert!((ratio / (direct(nu) / direct(2.0 * nu)) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn planck_rejects_bad_input() {
        assert!(planck_density(0.0, 1e14).is_err());
        assert!(planck_density(5800.0, -1.0).is_err());
    }

    #[test]
    fn doppler_width_of_mercury_green_line() {
        let nu0 = SPEED_OF_LIGHT / 546.1e-9;
        let m = 202.0 * ATOMIC_MASS_UNIT;
        let w = doppler_fwhm(nu0, 400.0, m).unwrap();
        // Independent evaluation: sqrt(8 ln2 kT/m) / λ.
        let v = (8.0 * LN_2 * 1.380649e-23 * 400.0 / (202.0 * 1.66053906660e-27)).sqrt();
        assert!((w / (v / 546.1e-9) - 1.0).abs() < 1e-12);
        assert!((w - 5.53e8).abs() < 0.01e8);
        assert!((doppler_fwhm(nu0, 1600.0, m).unwrap() / w - 2.0).abs() < 1e-12);
        assert!((doppler_fwhm(nu0, 400.0, 4.0 * m).unwrap() / w - 0.5).abs() < 1e-12);
        assert!(doppler_fwhm(nu0, 0.0, m).is_err());
    }

    #[test]
    fn gaussian_line_is_normalized() {
        let line = LineComponent::new(5.49e14, 1e9, 1.0, LineShape::Gaussian).unwrap();
        let grid = FrequencyGrid::centered(5.49e14, 12e9, 1e6).unwrap();
        let s = line_set_density(&[line], grid).unwrap();
        assert!((s.integral() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn coincident_lines_add() {
        let line = LineComponent::new(5.49e14, 1e9, 1.0, LineShape::Gaussian).unwrap();
        let grid = FrequencyGrid::centered(5.49e14, 12e9, 1e7).unwrap();
        let one = line_set_density(&[line], grid).unwrap();
        let two = line_set_density(&[line, line], grid).unwrap();
        for (a, b) in one.values().iter().zip(two.values()) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn separated_lines_show_two_maxima() {
        let fwhm = 1e9;
        let c = 5.49e14;
        let lines = [
            LineComponent::new(c, fwhm, 1.0, LineShape::Gaussian).unwrap(),
            LineComponent::new(c + 3.0 * fwhm, fwhm, 1.0, LineShape::Gaussian).unwrap(),
        ];
        let grid = FrequencyGrid::centered(c + 1.5 * fwhm, 15e9, 1e6).unwrap();
        let s = line_set_density(&lines, grid).unwrap();
        let v = s.values();
        let maxima: Vec<f64> = (1..v.len() - 1)
            .filter(|&i| v[i] > v[i - 1] && v[i] >= v[i + 1])
            .map(|i| s.nu(i))
            .collect();
        assert_eq!(maxima.len(), 2, "{maxima:?}");
        assert!((maxima[0] - c).abs() < 2e6);
        assert!((maxima[1] - (c + 3.0 * fwhm)).abs() < 2e6);
    }

    #[test]
    fn narrow_grid_names_the_line() {
        let lines = [
            LineComponent::new(5.49e14, 1e9, 1.0, LineShape::Gaussian).unwrap(),
            LineComponent::new(5.49e14 + 20e9, 1e9, 1.0, LineShape::Gaussian).unwrap(),
        ];
        let grid = FrequencyGrid::centered(5.49e14, 15e9, 1e7).unwrap();
        match line_set_density(&lines, grid) {
            Err(Error::GridTooNarrow { index, .. }) => assert_eq!(index, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn grating_profile() {
        let g = GratingFilter::new(532e-9, 0.122e-9, 0.15).unwrap();
        assert_eq!(g.transmission(532e-9), 0.15);
        assert!((g.transmission(532e-9 + 0.061e-9) - 0.075).abs() < 1e-12);
        assert!((g.transmission(532e-9 - 0.061e-9) - 0.075).abs() < 1e-12);
        assert!((g.transmission(532e-9 + 0.122e-9) - 0.15 / 16.0).abs() < 1e-12);
    }

    #[test]
    fn etalon_free_spectral_range() {
        let e = bench_etalon();
        assert!((e.fsr() - 205.3e9).abs() < 0.1e9);
        let thick = EtalonFilter::new(1e-3, 1.46, 0.97).unwrap();
        assert!((thick.fsr() / e.fsr() - 0.5).abs() < 1e-15);
        let lambda = 546e-9;
        let dl = lambda * lambda / SPEED_OF_LIGHT * e.fsr();
        assert!((dl - 0.204e-9).abs() < 0.001e-9);
    }

    /// Bisection on the Airy function for the half-maximum point of the peak at `nu0`.
    fn airy_fwhm_by_bisection(e: &EtalonFilter, nu0: f64) -> f64 {
        let (mut lo, mut hi) = (0.0, 0.5 * e.fsr());
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if e.transmission(nu0 + mid) > 0.5 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        2.0 * 0.5 * (lo + hi)
    }

    #[test]
    fn etalon_peak_width() {
        let e = bench_etalon();
        let nu0 = 1000.0 * e.fsr();
        assert_eq!(e.transmission(nu0), 1.0);
        let w = airy_fwhm_by_bisection(&e, nu0);
        assert!((w / e.fwhm() - 1.0).abs() < 1e-6, "{w} vs {}", e.fwhm());
        let approx = e.fsr() * (1.0 - 0.97) / (PI * 0.97f64.sqrt());
        assert!((w / approx - 1.0).abs() < 1e-3);
        assert!((w - 1.98e9).abs() < 0.02e9, "{w}");
    }

    #[test]
    fn etalon_temperature_shift() {
        let e = bench_etalon();
        let warm = e.with_temperature(e.reference_temperature + 1.0);
        let nu0 = 2674.0 * e.fsr();
        assert_eq!(e.transmission(nu0), 1.0);
        assert!((warm.transmission(nu0 - 4.1e9) - 1.0).abs() < 1e-12);
        assert!(warm.transmission(nu0) < 0.1);
    }

    #[test]
    fn etalon_tuning_hits_target() {
        let target = SPEED_OF_LIGHT / 540e-9;
        let e = bench_etalon().tuned_to(target);
        assert!((e.transmission(target) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn empty_chain_is_identity() {
        let grid = FrequencyGrid::centered(5.5e14, 1e11, 1e9).unwrap();
        let s = SpectralDensity::planck(6000.0, grid).unwrap();
        assert_eq!(compose_chain(&s, &[]).unwrap(), s);
    }

    fn order_fraction(s: &SpectralDensity, center: f64, fsr: f64) -> f64 {
        let inside: Vec<f64> = (0..s.len())
            .map(|i| {
                if (s.nu(i) - center).abs() <= 0.5 * fsr {
                    s.values()[i]
                } else {
                    0.0
                }
            })
            .collect();
        trapezoid(&inside, s.nu_step()) / s.integral()
    }

    #[test]
    fn etalon_dominant_order_behind_grating_window() {
        let grating = GratingFilter::new(540e-9, 0.122e-9, 0.15).unwrap();
        let center = SPEED_OF_LIGHT / 540e-9;
        let etalon = bench_etalon().tuned_to(center);
        let window = SPEED_OF_LIGHT * 0.122e-9 / (540e-9f64).powi(2);
        let flat = SpectralDensity::flat(FrequencyGrid::centered(center, 0.5 * window, 1e7).unwrap())
            .unwrap();
        let out = compose_chain(&flat, &[etalon.into()]).unwrap();
        assert!(order_fraction(&out, center, etalon.fsr()) > 0.8);

        let grid = FrequencyGrid::for_filter_chain(&grating, &etalon).unwrap();
        let flat = SpectralDensity::flat(grid).unwrap();
        let out = compose_chain(&flat, &[grating.into(), etalon.into()]).unwrap();
        assert!(order_fraction(&out, center, etalon.fsr()) > 0.8);
    }

    #[test]
    fn planck_grating_etalon_width_follows_etalon() {
        let grating = GratingFilter::new(540e-9, 0.122e-9, 0.15).unwrap();
        let etalon = bench_etalon().tuned_to(SPEED_OF_LIGHT / 540e-9);
        let grid = FrequencyGrid::for_filter_chain(&grating, &etalon).unwrap();
        let source = SpectralDensity::planck(6000.0, grid).unwrap();
        let out = compose_chain(&source, &[grating.into(), etalon.into()]).unwrap();
        let w = out.half_max_width();
        assert!((w / etalon.fwhm() - 1.0).abs() < 0.1, "{w}");
    }

    #[test]
    fn fully_blocking_chain_is_degenerate() {
        let grid = FrequencyGrid::centered(5.5e14, 1e10, 1e8).unwrap();
        let s = SpectralDensity::flat(grid).unwrap();
        let far = GratingFilter::new(400e-9, 0.1e-9, 1.0).unwrap();
        assert!(matches!(
            compose_chain(&s, &[far.into()]),
            Err(Error::DegenerateSpectrum(_))
        ));
    }

    #[test]
    fn etalon_is_periodic() {
        let e = bench_etalon().with_temperature(300.0);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let nu = rng.random_range(4e14..7e14);
            let a = e.transmission(nu);
            let b = e.transmission(nu + e.fsr());
            assert!((a - b).abs() <= 1e-9 * a.max(b), "{nu}: {a} {b}");
        }
    }

    #[test]
    fn csv_round_trip() {
        let grid = FrequencyGrid::centered(5.5e14, 1e10, 1e8).unwrap();
        let s = SpectralDensity::planck(6000.0, grid).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("nu_hz,density\n"));
        assert!(!text.lines().skip(1).any(|l| l.contains('e')), "decimal notation only");
        let back = SpectralDensity::read_csv(&buf[..]).unwrap();
        assert_eq!(back.values(), s.values());
        assert!((back.nu_step() / s.nu_step() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn csv_rejects_bad_header() {
        let err = SpectralDensity::read_csv(&b"nu,density\n1,2\n"[..]).unwrap_err();
        assert!(matches!(err, Error::Format { offset: 0, .. }));
    }

    proptest! {
        #[test]
        fn transmissions_within_unit_interval(nu in 4e14f64..8e14, r in 0.01f64..0.999, dt in -5.0f64..5.0) {
            let mut e = EtalonFilter::new(0.5e-3, 1.46, r).unwrap();
            e.set_temperature += dt;
            let t = e.transmission(nu);
            prop_assert!((0.0..=1.0).contains(&t));
            let g = GratingFilter::new(546e-9, 0.122e-9, 0.15).unwrap();
            let tg = Filter::from(g).transmission(nu);
            prop_assert!((0.0..=0.15).contains(&tg));
        }

        #[test]
        fn temperature_tuning_is_a_rigid_shift(nu in 4e14f64..8e14, dt in -3.0f64..3.0) {
            let e = EtalonFilter::new(0.5e-3, 1.46, 0.97).unwrap();
            let tuned = e.with_temperature(e.reference_temperature + dt);
            let shifted = e.transmission(nu - e.tuning_rate * dt);
            prop_assert!((tuned.transmission(nu) - shifted).abs() < 1e-9);
        }

        #[test]
        fn line_sets_superpose(w1 in 0.0f64..5.0, w2 in 0.0f64..5.0, k in 0.1f64..10.0, off in -3e9f64..3e9) {
            let c = 5.49e14;
            let a = LineComponent::new(c, 1e9, w1, LineShape::Gaussian).unwrap();
            let b = LineComponent::new(c + off, 0.7e9, w2, LineShape::Lorentzian).unwrap();
            let grid = FrequencyGrid::centered(c, 20e9, 1e8).unwrap();
            let both = line_set_density(&[a, b], grid);
            prop_assume!(both.is_ok());
            let both = both.unwrap();
            let sa = LineComponent { weight: k * w1, ..a };
            let sb = LineComponent { weight: k * w2, ..b };
            let scaled = line_set_density(&[sa, sb], grid).unwrap();
            for i in 0..grid.len {
                let single = a.weight * a.profile(grid.nu(i)) + b.weight * b.profile(grid.nu(i));
                prop_assert!((both.values()[i] - single).abs() <= 1e-12 * single.max(1e-300));
                prop_assert!((scaled.values()[i] - k * both.values()[i]).abs() <= 1e-12 * scaled.values()[i].max(1e-300));
            }
        }

        #[test]
        fn composition_never_adds_power(r in 0.5f64..0.99, dt in -2.0f64..2.0) {
            let grid = FrequencyGrid::centered(5.55e14, 2e11, 5e8).unwrap();
            let s = SpectralDensity::planck(6000.0, grid).unwrap();
            let e = EtalonFilter::new(0.5e-3, 1.46, r).unwrap().with_temperature(293.15 + dt);
            let g = GratingFilter::new(540e-9, 0.122e-9, 0.15).unwrap();
            let out = compose_chain(&s, &[g.into(), e.into()]).unwrap();
            for (o, i) in out.values().iter().zip(s.values()) {
                prop_assert!(o <= i);
            }
        }
    }
}
