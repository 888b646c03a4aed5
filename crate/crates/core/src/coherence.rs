//! Temporal coherence of the filtered field and the g²(τ) it implies.
//!
//! γ(τ) is the normalized Fourier transform of S(ν); for a thermal field
//! g²(τ) = 1 + |γ(τ)|². Detector timing response enters as a convolution
//! of the bunching excess with the pair timing-difference density.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};
use rayon::prelude::*;
use rustfft::FftPlanner;

use crate::numeric::{normal_cdf, trapezoid};
use crate::physics::GAUSSIAN_FWHM_PER_SIGMA;
use crate::spectral::SpectralDensity;
use crate::{Error, Result};

/// γ(τ) on a symmetric delay grid `τ_i = (i − K)·tau_step`, `i = 0..=2K`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexCoherence {
    tau_step: f64,
    values: Vec<Complex64>,
}

impl ComplexCoherence {
    pub fn tau_step(&self) -> f64 {
        self.tau_step
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    /// Index of τ = 0.
    pub fn center(&self) -> usize {
        self.values.len() / 2
    }

    pub fn tau(&self, i: usize) -> f64 {
        (i as f64 - self.center() as f64) * self.tau_step
    }

    pub fn tau_max(&self) -> f64 {
        self.center() as f64 * self.tau_step
    }

    pub fn magnitude(&self) -> Vec<f64> {
        self.values.iter().map(|z| z.norm()).collect()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "tau_s,re,im")?;
        for (i, z) in self.values.iter().enumerate() {
            writeln!(out, "{},{},{}", self.tau(i), z.re, z.im)?;
        }
        Ok(())
    }
}

/// Delay grid for [`gamma_from_spectrum`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayGrid {
    pub tau_step: f64,
    pub tau_max: f64,
}

impl DelayGrid {
    /// Step of a hundredth of 1/(π·FWHM) and a span of `multiple` such times.
    pub fn for_spectrum(s: &SpectralDensity, multiple: f64) -> Self {
        let estimate = 1.0 / (PI * s.half_max_width());
        Self {
            tau_step: estimate / 100.0,
            tau_max: multiple * estimate,
        }
    }
}

/// γ(τ) = ∫S(ν)e^{−i2πντ}dν / ∫S(ν)dν by trapezoidal quadrature over the grid of `s`.
pub fn gamma_from_spectrum(s: &SpectralDensity, tau_max: f64, tau_step: f64) -> Result<ComplexCoherence> {
    if !(tau_step > 0.0) || !(tau_max >= tau_step) {
        return Err(Error::domain(format!(
            "delay grid needs 0 < tau_step ≤ tau_max (got {tau_step:e}, {tau_max:e})"
        )));
    }
    let width = s.half_max_width();
    if !(width > 0.0) {
        return Err(Error::DegenerateSpectrum("spectrum has no resolvable peak".into()));
    }
    if tau_step > 1.0 / (10.0 * width) {
        return Err(Error::domain(format!(
            "tau_step {tau_step:e} s does not resolve a spectral width of {width:e} Hz (max {:e} s)",
            1.0 / (10.0 * width)
        )));
    }
    let estimate = 1.0 / (PI * width);
    if tau_max < 5.0 * estimate {
        return Err(Error::domain(format!(
            "tau_max {tau_max:e} s is shorter than 5 coherence-time estimates ({:e} s)",
            5.0 * estimate
        )));
    }

    let n = s.len();
    let dnu = s.nu_step();
    let mut weighted: Vec<f64> = s.values().iter().map(|v| v * dnu).collect();
    weighted[0] *= 0.5;
    weighted[n - 1] *= 0.5;
    let norm: f64 = weighted.iter().sum();
    if !(norm > 0.0) {
        return Err(Error::DegenerateSpectrum("zero integrated power".into()));
    }

    let half = (tau_max / tau_step).ceil() as usize;
    let nu0 = s.nu_start();
    let positive: Vec<Complex64> = (0..=half)
        .into_par_iter()
        .map(|k| {
            if k == 0 {
                return Complex64::new(1.0, 0.0);
            }
            let tau = k as f64 * tau_step;
            let carrier = unit_phasor(-(nu0 * tau).fract());
            carrier * phasor_sum(&weighted, dnu * tau) / norm
        })
        .collect();

    let mut values = Vec::with_capacity(2 * half + 1);
    values.extend(positive[1..].iter().rev().map(|z| z.conj()));
    values.extend_from_slice(&positive);
    Ok(ComplexCoherence { tau_step, values })
}

/// Doubles the delay span until |γ|² has decayed below 1e-4 at the edge.
pub fn gamma_auto(s: &SpectralDensity) -> Result<ComplexCoherence> {
    let mut grid = DelayGrid::for_spectrum(s, 8.0);
    for _ in 0..8 {
        let gamma = gamma_from_spectrum(s, grid.tau_max, grid.tau_step)?;
        if edge_power(&gamma) < 1e-4 {
            return Ok(gamma);
        }
        grid.tau_max *= 2.0;
    }
    gamma_from_spectrum(s, grid.tau_max, grid.tau_step)
}

fn unit_phasor(cycles: f64) -> Complex64 {
    let (sin, cos) = (2.0 * PI * cycles).sin_cos();
    Complex64::new(cos, sin)
}

/// Σ_j w_j·exp(−i2π·j·x), re-anchoring the phasor recurrence every 256 terms.
fn phasor_sum(weights: &[f64], x: f64) -> Complex64 {
    let step = unit_phasor(-(x.fract()));
    let mut acc = Complex64::new(0.0, 0.0);
    for (block, chunk) in weights.chunks(256).enumerate() {
        let j0 = (block * 256) as f64;
        let mut z = unit_phasor(-((j0 * x).fract()));
        for w in chunk {
            acc += z * *w;
            z *= step;
        }
    }
    acc
}

fn edge_power(gamma: &ComplexCoherence) -> f64 {
    let v = gamma.values();
    v[0].norm_sqr().max(v[v.len() - 1].norm_sqr())
}

/// Real, even g²(τ) on the same delay grid convention as [`ComplexCoherence`].
#[derive(Debug, Clone, PartialEq)]
pub struct G2Curve {
    tau_step: f64,
    values: Vec<f64>,
}

impl G2Curve {
    pub fn new(tau_step: f64, values: Vec<f64>) -> Result<Self> {
        if !(tau_step > 0.0) || values.len().is_multiple_of(2) {
            return Err(Error::domain(
                "g² curve needs a positive step and an odd number of points centred on τ=0",
            ));
        }
        Ok(Self { tau_step, values })
    }

    /// Samples `f(τ)` on `2·half + 1` points.
    pub fn from_fn(tau_step: f64, half: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = (0..=2 * half)
            .map(|i| f((i as f64 - half as f64) * tau_step))
            .collect();
        Self::new(tau_step, values)
    }

    pub fn tau_step(&self) -> f64 {
        self.tau_step
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn center(&self) -> usize {
        self.values.len() / 2
    }

    pub fn tau(&self, i: usize) -> f64 {
        (i as f64 - self.center() as f64) * self.tau_step
    }

    pub fn at_zero(&self) -> f64 {
        self.values[self.center()]
    }

    /// ∫(g² − 1)dτ over the grid.
    pub fn excess_area(&self) -> f64 {
        let excess: Vec<f64> = self.values.iter().map(|g| g - 1.0).collect();
        trapezoid(&excess, self.tau_step)
    }

    /// Linear interpolation of g² at `tau`; 1 outside the grid.
    pub fn interpolate(&self, tau: f64) -> f64 {
        let x = tau / self.tau_step + self.center() as f64;
        if x < 0.0 || x > (self.values.len() - 1) as f64 {
            return 1.0;
        }
        let i = (x.floor() as usize).min(self.values.len() - 2);
        let f = x - i as f64;
        self.values[i] * (1.0 - f) + self.values[i + 1] * f
    }

    /// Mean of g² over `[lo, hi]`, integrating the linear interpolant.
    pub fn bin_average(&self, lo: f64, hi: f64) -> f64 {
        const SUB: usize = 32;
        let h = (hi - lo) / SUB as f64;
        let pts: Vec<f64> = (0..=SUB).map(|k| self.interpolate(lo + k as f64 * h)).collect();
        trapezoid(&pts, h) / (hi - lo)
    }

    pub fn write_csv<W: Write>(&self, mut out: W, comments: &[(&str, String)]) -> std::io::Result<()> {
        for (k, v) in comments {
            writeln!(out, "# {k}={v}")?;
        }
        writeln!(out, "tau_s,g2")?;
        for (i, g) in self.values.iter().enumerate() {
            writeln!(out, "{},{}", self.tau(i), g)?;
        }
        Ok(())
    }
}

/// Pointwise g² = 1 + |γ|².
pub fn g2_theory(gamma: &ComplexCoherence) -> G2Curve {
    G2Curve {
        tau_step: gamma.tau_step,
        values: gamma.values.iter().map(|z| 1.0 + z.norm_sqr()).collect(),
    }
}

/// Equivalent-width coherence time ∫|γ(τ)|²dτ over the full grid.
pub fn coherence_time(gamma: &ComplexCoherence) -> Result<f64> {
    let edge_value = edge_power(gamma);
    if !(edge_value < 1e-3) {
        return Err(Error::InsufficientDecay { edge_value });
    }
    let power: Vec<f64> = gamma.values.iter().map(|z| z.norm_sqr()).collect();
    Ok(trapezoid(&power, gamma.tau_step))
}

/// Single-detector timing response: a Gaussian core mixed with a one-sided
/// exponential tail of delayed detections. Core weight is `1 − tail_weight`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorResponse {
    pub core_fwhm: f64,
    pub tail_weight: f64,
    pub tail_decay: f64,
}

impl DetectorResponse {
    pub fn new(core_fwhm: f64, tail_weight: f64, tail_decay: f64) -> Result<Self> {
        if !(core_fwhm >= 0.0) || !core_fwhm.is_finite() {
            return Err(Error::domain("response core FWHM must be ≥ 0"));
        }
        if !(0.0..=1.0).contains(&tail_weight) {
            return Err(Error::domain("response tail weight must lie in [0, 1]"));
        }
        if tail_weight > 0.0 && !(tail_decay > 0.0) {
            return Err(Error::domain("response tail decay must be positive"));
        }
        Ok(Self {
            core_fwhm,
            tail_weight,
            tail_decay,
        })
    }

    /// Zero jitter.
    pub fn ideal() -> Self {
        Self {
            core_fwhm: 0.0,
            tail_weight: 0.0,
            tail_decay: 0.0,
        }
    }

    pub fn gaussian(fwhm: f64) -> Result<Self> {
        Self::new(fwhm, 0.0, 0.0)
    }

    /// Per-detector Gaussian whose pair timing difference has FWHM `pair_fwhm`.
    pub fn gaussian_for_pair(pair_fwhm: f64) -> Result<Self> {
        Self::gaussian(pair_fwhm / std::f64::consts::SQRT_2)
    }

    /// Thin-junction actively quenched APD: 40 ps pair core, 10 % tail at 150 ps.
    pub fn thin_apd() -> Self {
        Self {
            core_fwhm: 40e-12 / std::f64::consts::SQRT_2,
            tail_weight: 0.10,
            tail_decay: 150e-12,
        }
    }

    /// Thick-junction passively quenched APD: 1.2 ns pair FWHM.
    pub fn thick_apd() -> Self {
        Self {
            core_fwhm: 1.2e-9 / std::f64::consts::SQRT_2,
            tail_weight: 0.0,
            tail_decay: 0.0,
        }
    }

    pub fn core_weight(&self) -> f64 {
        1.0 - self.tail_weight
    }

    pub fn is_ideal(&self) -> bool {
        self.core_fwhm == 0.0 && self.tail_weight == 0.0
    }

    /// Probability density of the timing offset (delta core excluded).
    pub fn density(&self, t: f64) -> f64 {
        let mut p = 0.0;
        if self.core_fwhm > 0.0 {
            let sigma = self.core_fwhm / GAUSSIAN_FWHM_PER_SIGMA;
            p += self.core_weight() * (-0.5 * (t / sigma).powi(2)).exp()
                / (sigma * (2.0 * PI).sqrt());
        }
        if self.tail_weight > 0.0 && t >= 0.0 {
            p += self.tail_weight * (-t / self.tail_decay).exp() / self.tail_decay;
        }
        p
    }

    /// Draws one timing offset in seconds.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.tail_weight > 0.0 && rng.random::<f64>() < self.tail_weight {
            return Exp::new(1.0 / self.tail_decay).unwrap().sample(rng);
        }
        if self.core_fwhm > 0.0 {
            let sigma = self.core_fwhm / GAUSSIAN_FWHM_PER_SIGMA;
            return Normal::new(0.0, sigma).unwrap().sample(rng);
        }
        0.0
    }

    /// Offset probabilities on cells `[(j−½)h, (j+½)h)`; returns the lowest `j` and the masses.
    fn cell_masses(&self, h: f64) -> (i64, Vec<f64>) {
        let core_reach = if self.core_fwhm > 0.0 {
            (9.0 * self.core_fwhm / GAUSSIAN_FWHM_PER_SIGMA / h).ceil() as i64
        } else {
            0
        };
        let tail_reach = if self.tail_weight > 0.0 {
            (40.0 * self.tail_decay / h).ceil() as i64
        } else {
            0
        };
        let lo = -core_reach;
        let hi = core_reach.max(tail_reach);
        let mut masses = vec![0.0; (hi - lo + 1) as usize];
        for (idx, m) in masses.iter_mut().enumerate() {
            let j = lo + idx as i64;
            let (a, b) = ((j as f64 - 0.5) * h, (j as f64 + 0.5) * h);
            if self.core_fwhm > 0.0 {
                let sigma = self.core_fwhm / GAUSSIAN_FWHM_PER_SIGMA;
                *m += self.core_weight() * (normal_cdf(b / sigma) - normal_cdf(a / sigma));
            } else if j == 0 {
                *m += self.core_weight();
            }
            if self.tail_weight > 0.0 && b > 0.0 {
                let a = a.max(0.0);
                *m += self.tail_weight
                    * ((-a / self.tail_decay).exp() - (-b / self.tail_decay).exp());
            }
        }
        let total: f64 = masses.iter().sum();
        masses.iter_mut().for_each(|m| *m /= total);
        (lo, masses)
    }
}

/// Discretized density of t_B − t_A jitter on cells of width `h`.
/// Returns the lowest cell index and the masses.
pub fn pair_kernel(a: &DetectorResponse, b: &DetectorResponse, h: f64) -> (i64, Vec<f64>) {
    let (lo_a, pa) = a.cell_masses(h);
    let (lo_b, pb) = b.cell_masses(h);
    // X = J_B − J_A: with pa reversed, k = j_b − j_a becomes a plain convolution index.
    let hi_a = lo_a + pa.len() as i64 - 1;
    let reversed: Vec<f64> = pa.iter().rev().copied().collect();
    let out = convolve(&pb, &reversed).into_iter().map(|m| m.max(0.0)).collect();
    (lo_b - hi_a, out)
}

/// Detected g²: 1 + (g² − 1) ⊛ p_X with X = J_B − J_A the pair jitter.
pub fn convolve_detector(g2: &G2Curve, resp_a: &DetectorResponse, resp_b: &DetectorResponse) -> Result<G2Curve> {
    let h = g2.tau_step;
    let (lo, kernel) = pair_kernel(resp_a, resp_b, h);
    let grid_span = (g2.values.len() - 1) as f64 * h;
    let kernel_span = (kernel.len() - 1) as f64 * h;
    if kernel_span > grid_span {
        return Err(Error::ResponseTooWide {
            kernel_span_s: kernel_span,
            grid_span_s: grid_span,
        });
    }
    let excess: Vec<f64> = g2.values.iter().map(|g| g - 1.0).collect();
    let full = convolve(&excess, &kernel);
    // full[m] corresponds to output index m + lo.
    let n = excess.len() as i64;
    let values = (0..n)
        .map(|i| {
            let m = i - lo;
            let e = if m >= 0 && (m as usize) < full.len() {
                full[m as usize]
            } else {
                0.0
            };
            1.0 + e
        })
        .collect();
    Ok(G2Curve { tau_step: h, values })
}

/// Full linear convolution, direct for small inputs and FFT otherwise.
fn convolve(x: &[f64], k: &[f64]) -> Vec<f64> {
    let len = x.len() + k.len() - 1;
    if x.len().min(k.len()) <= 64 || x.len() * k.len() <= 4_000_000 {
        let mut out = vec![0.0; len];
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (j, &kj) in k.iter().enumerate() {
                out[i + j] += xi * kj;
            }
        }
        return out;
    }
    let n = len.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut a: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    a.resize(n, Complex64::new(0.0, 0.0));
    let mut b: Vec<Complex64> = k.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    b.resize(n, Complex64::new(0.0, 0.0));
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (p, q) in a.iter_mut().zip(&b) {
        *p *= q;
    }
    inv.process(&mut a);
    a.iter().take(len).map(|z| z.re / n as f64).collect()
}

/// Zero-delay bunching excess seen through a Gaussian pair response of FWHM
/// `tau_t` when the true excess is exp(−|2τ/τ_c|).
///
/// Evaluates 2∫₀^∞ e^{−2x/τ_c} φ_σ(x) dx by composite Simpson quadrature.
pub fn scarl_contrast(tau_c: f64, tau_t: f64) -> Result<f64> {
    if !(tau_c > 0.0) || !(tau_t > 0.0) {
        return Err(Error::domain("coherence and timing times must be positive"));
    }
    let sigma = tau_t / GAUSSIAN_FWHM_PER_SIGMA;
    let s = 2.0 / tau_c;
    let upper = (12.0 * sigma).min(60.0 / s);
    const N: usize = 20_000;
    let h = upper / N as f64;
    let norm = 1.0 / (sigma * (2.0 * PI).sqrt());
    let f = |x: f64| (-s * x - 0.5 * (x / sigma).powi(2)).exp() * norm;
    let mut acc = f(0.0) + f(upper);
    for i in 1..N {
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
    }
    Ok(2.0 * acc * h / 3.0)
}

/// g² of `modes` independent equally bright modes: 1 + (g² − 1)/M.
pub fn mode_dilute(g2: &G2Curve, modes: u32) -> Result<G2Curve> {
    if modes < 1 {
        return Err(Error::domain("mode count must be ≥ 1"));
    }
    let m = modes as f64;
    Ok(G2Curve {
        tau_step: g2.tau_step,
        values: g2.values.iter().map(|g| 1.0 + (g - 1.0) / m).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{line_set_density, FrequencyGrid, LineComponent, LineShape};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const CENTER: f64 = 5.49e14;

    fn lorentzian(fwhm: f64) -> SpectralDensity {
        let line = LineComponent::new(CENTER, fwhm, 1.0, LineShape::Lorentzian).unwrap();
        let grid = FrequencyGrid::centered(CENTER, 16_000.0 * fwhm, fwhm / 10.0).unwrap();
        line_set_density(&[line], grid).unwrap()
    }

    fn gaussian(fwhm: f64) -> SpectralDensity {
        let line = LineComponent::new(CENTER, fwhm, 1.0, LineShape::Gaussian).unwrap();
        let grid = FrequencyGrid::centered(CENTER, 10.0 * fwhm, fwhm / 50.0).unwrap();
        line_set_density(&[line], grid).unwrap()
    }

    #[test]
    fn lorentzian_coherence_is_exponential() {
        let dnu = 2e9;
        let s = lorentzian(dnu);
        let tc = 1.0 / (PI * dnu);
        let gamma = gamma_from_spectrum(&s, 6.0 * tc, tc / 100.0).unwrap();
        assert_eq!(gamma.values()[gamma.center()], Complex64::new(1.0, 0.0));
        for (i, z) in gamma.values().iter().enumerate() {
            let tau = gamma.tau(i);
            if tau.abs() <= 5.0 * tc {
                let expected = (-PI * dnu * tau.abs()).exp();
                assert!((z.norm() / expected - 1.0).abs() < 1e-4, "τ={tau:e}: {}", z.norm());
            }
        }
        let g2 = g2_theory(&gamma);
        for (i, g) in g2.values().iter().enumerate() {
            let expected = 1.0 + (-2.0 * PI * dnu * g2.tau(i).abs()).exp();
            assert!((g - expected).abs() < 2e-4);
        }
        let t = coherence_time(&gamma).unwrap();
        assert!((t / tc - 1.0).abs() < 0.01, "{t:e}");
    }

    #[test]
    fn gaussian_coherence_width() {
        let dnu = 1e9;
        let s = gaussian(dnu);
        let gamma = gamma_auto(&s).unwrap();
        let w = crate::numeric::half_max_width_samples(&gamma.magnitude()).unwrap()
            * gamma.tau_step();
        let expected = 4.0 * std::f64::consts::LN_2 / (PI * dnu);
        assert!((w / expected - 1.0).abs() < 1e-3, "{w:e} vs {expected:e}");
    }

    #[test]
    fn normalization_at_zero_delay() {
        let grid = FrequencyGrid::centered(5.5e14, 1e11, 1e9).unwrap();
        let s = SpectralDensity::planck(6000.0, grid).unwrap();
        let gamma = gamma_from_spectrum(&s, 1e-10, 1e-13).unwrap();
        assert_eq!(gamma.values()[gamma.center()].re, 1.0);
        assert_eq!(g2_theory(&gamma).at_zero(), 2.0);
    }

    #[test]
    fn decayed_coherence_gives_unit_g2() {
        let s = lorentzian(2e9);
        let gamma = gamma_auto(&s).unwrap();
        let g2 = g2_theory(&gamma);
        assert!((g2.values()[0] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn hermitian_and_even() {
        let grid = FrequencyGrid::centered(5.5e14, 5e10, 1e8).unwrap();
        let lines = [
            LineComponent::new(5.5e14, 2e9, 1.0, LineShape::Lorentzian).unwrap(),
            LineComponent::new(5.5e14 + 3e9, 1e9, 0.5, LineShape::Gaussian).unwrap(),
        ];
        let s = line_set_density(&lines, grid).unwrap();
        let gamma = gamma_auto(&s).unwrap();
        let v = gamma.values();
        let n = v.len();
        for i in 0..n {
            assert_eq!(v[i], v[n - 1 - i].conj());
            assert!(v[i].norm() <= 1.0 + 1e-9);
        }
        let g2 = g2_theory(&gamma);
        for i in 0..n {
            assert_eq!(g2.values()[i], g2.values()[n - 1 - i]);
        }
    }

    #[test]
    fn coherence_time_needs_decay() {
        let s = lorentzian(2e9);
        let tc = 1.0 / (PI * 2e9);
        let gamma = gamma_from_spectrum(&s, 5.0 * tc, tc / 100.0).unwrap();
        assert!(coherence_time(&gamma).is_ok());
        let short = ComplexCoherence {
            tau_step: tc / 100.0,
            values: gamma.values()[gamma.center() - 200..=gamma.center() + 200].to_vec(),
        };
        assert!(matches!(coherence_time(&short), Err(Error::InsufficientDecay { .. })));
    }

    #[test]
    fn coherence_time_matches_parseval_oracle() {
        let s = gaussian(1e9);
        let gamma = gamma_auto(&s).unwrap();
        let t = coherence_time(&gamma).unwrap();
        // Gaussian: ∫S² / (∫S)² = 1/(2σ√π).
        let sigma = 1e9 / GAUSSIAN_FWHM_PER_SIGMA;
        let oracle = 1.0 / (2.0 * sigma * PI.sqrt());
        assert!((t / oracle - 1.0).abs() < 1e-6, "{t:e} vs {oracle:e}");
    }

    #[test]
    fn unfiltered_planck_coherence_time() {
        let grid = FrequencyGrid::new(1e11, 1e11, 50_000).unwrap();
        let s = SpectralDensity::planck(5800.0, grid).unwrap();
        let gamma = gamma_auto(&s).unwrap();
        let t = coherence_time(&gamma).unwrap();
        // Independent quadrature of ∫x⁶/(eˣ−1)²dx / (∫x³/(eˣ−1)dx)² · h/kT at 5800 K.
        assert!((t / 1.2706e-15 - 1.0).abs() < 2e-3, "{t:e}");
        assert!((t / s.equivalent_coherence_time() - 1.0).abs() < 1e-4);
    }

    #[test]
    fn spectral_compression_doubles_coherence_time() {
        let grid = FrequencyGrid::centered(CENTER, 20e9, 2e6).unwrap();
        let a = [LineComponent::new(CENTER, 1e9, 1.0, LineShape::Gaussian).unwrap()];
        let b = [LineComponent::new(CENTER, 0.5e9, 1.0, LineShape::Gaussian).unwrap()];
        let ta = coherence_time(&gamma_auto(&line_set_density(&a, grid).unwrap()).unwrap()).unwrap();
        let tb = coherence_time(&gamma_auto(&line_set_density(&b, grid).unwrap()).unwrap()).unwrap();
        assert!((tb / ta - 2.0).abs() < 1e-4);
    }

    #[test]
    fn coherence_time_is_scale_invariant() {
        let s = gaussian(1e9);
        let grid = DelayGrid::for_spectrum(&s, 8.0);
        let base = coherence_time(&gamma_from_spectrum(&s, grid.tau_max, grid.tau_step).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let k = 10f64.powf(rng.random_range(-6.0..6.0));
            let t = coherence_time(
                &gamma_from_spectrum(&s.scaled(k).unwrap(), grid.tau_max, grid.tau_step).unwrap(),
            )
            .unwrap();
            assert!((t / base - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_coarse_delay_grid() {
        let s = lorentzian(2e9);
        assert!(gamma_from_spectrum(&s, 1e-9, 1e-10).is_err());
        assert!(gamma_from_spectrum(&s, 1e-12, 1e-13).is_err());
    }

    fn eq3_curve(tau_c: f64, step: f64, half: usize) -> G2Curve {
        G2Curve::from_fn(step, half, |t| 1.0 + (-2.0 * t.abs() / tau_c).exp()).unwrap()
    }

    #[test]
    fn delta_responses_are_identity() {
        let g2 = eq3_curve(0.436e-9, 4e-12, 2000);
        let ideal = DetectorResponse::ideal();
        assert_eq!(convolve_detector(&g2, &ideal, &ideal).unwrap(), g2);
    }

    #[test]
    fn thick_apd_peak_matches_closed_form() {
        let tc = 0.436e-9;
        let g2 = eq3_curve(tc, tc / 100.0, 2000);
        let thick = DetectorResponse::thick_apd();
        let out = convolve_detector(&g2, &thick, &thick).unwrap();
        // erfcx(sσ/√2), s = 2/τc, σ = 1.2 ns / 2.3548 (scipy).
        assert!((out.at_zero() - 1.0 - 0.2982339977185628).abs() < 1e-3, "{}", out.at_zero());
        assert!((out.excess_area() / g2.excess_area() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn thin_core_barely_reduces_peak() {
        let tc = 0.436e-9;
        let g2 = eq3_curve(tc, tc / 100.0, 2000);
        let thin = DetectorResponse::gaussian_for_pair(40e-12).unwrap();
        let out = convolve_detector(&g2, &thin, &thin).unwrap();
        let excess = out.at_zero() - 1.0;
        assert!(excess >= 0.9);
        assert!((excess - 0.9407436454009372).abs() < 2e-3, "{excess}");
    }

    #[test]
    fn tail_response_preserves_area() {
        let tc = 0.436e-9;
        let g2 = eq3_curve(tc, 2e-12, 6000);
        let thin = DetectorResponse::thin_apd();
        let out = convolve_detector(&g2, &thin, &thin).unwrap();
        assert!((out.excess_area() / g2.excess_area() - 1.0).abs() < 1e-6);
        for i in 0..out.values().len() {
            let j = out.values().len() - 1 - i;
            assert!((out.values()[i] - out.values()[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn response_wider_than_grid_is_rejected() {
        let g2 = eq3_curve(0.436e-9, 1e-12, 100);
        let thick = DetectorResponse::thick_apd();
        assert!(matches!(
            convolve_detector(&g2, &thick, &thick),
            Err(Error::ResponseTooWide { .. })
        ));
    }

    #[test]
    fn scarl_limits_and_reference_values() {
        let near = scarl_contrast(1.0, 0.01).unwrap();
        assert!((0.98..=1.0).contains(&near));
        assert!((near - 0.9932592975651084).abs() < 1e-9);
        let equal = scarl_contrast(1.0, 1.0).unwrap();
        assert!((0.3..=0.9).contains(&equal));
        assert!((equal - 0.5675539457696412).abs() < 1e-9);
        for (r, v) in [(10.0, 0.09269212441067724), (100.0, 0.00939307099164593), (1000.0, 0.0009394359763684654)] {
            assert!((scarl_contrast(1e-9, r * 1e-9).unwrap() / v - 1.0).abs() < 1e-8);
        }
        assert!(scarl_contrast(0.0, 1.0).is_err());
    }

    #[test]
    fn scarl_slope_is_minus_one() {
        let ratios: Vec<f64> = (0..=20).map(|i| 10f64.powf(1.0 + 2.0 * i as f64 / 20.0)).collect();
        let pts: Vec<(f64, f64)> = ratios
            .iter()
            .map(|r| (r.ln(), scarl_contrast(1.0, *r).unwrap().ln()))
            .collect();
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
            / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
        assert!((slope + 1.0).abs() < 0.1, "{slope}");
    }

    #[test]
    fn mode_dilution() {
        let g2 = eq3_curve(0.436e-9, 4e-12, 500);
        assert_eq!(mode_dilute(&g2, 1).unwrap(), g2);
        assert!((mode_dilute(&g2, 2).unwrap().at_zero() - 1.5).abs() < 1e-15);
        let many = mode_dilute(&g2, 1_000_000).unwrap();
        assert!(many.values().iter().all(|g| (g - 1.0).abs() < 1e-5));
        assert!(mode_dilute(&g2, 0).is_err());
        let two = mode_dilute(&g2, 2).unwrap();
        for (a, b) in g2.values().iter().zip(two.values()) {
            assert!(((b - 1.0) * 2.0 - (a - 1.0)).abs() < 1e-15);
        }
    }

    #[test]
    fn response_sampling_matches_density() {
        let resp = DetectorResponse::thin_apd();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 200_000;
        let samples: Vec<f64> = (0..n).map(|_| resp.sample(&mut rng)).collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        // Mixture mean is tail_weight·decay.
        assert!((mean - 0.1 * 150e-12).abs() < 2e-12, "{mean:e}");
        let delayed = samples.iter().filter(|&&t| t > 100e-12).count() as f64 / n as f64;
        let expected = 0.1 * (-100.0f64 / 150.0).exp();
        assert!((delayed - expected).abs() < 0.003);
    }
}
