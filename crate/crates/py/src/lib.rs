//! Python bindings: scenario runs, the correlator and the bunching fit.
//!
//! Time tags cross the boundary as lists of integer picoseconds; everything
//! else is in SI units.

use std::path::PathBuf;

use bunchlab::acceptance;
use bunchlab::coherence::coherence_time;
use bunchlab::config::ScenarioConfig;
use bunchlab::correlator::{self, CoincidenceHistogram, CorrelatorMode};
use bunchlab::inference::{self, FitOptions};
use bunchlab::photostream::{self, EventStream};
use bunchlab::pipeline;
use bunchlab::spectral::EtalonFilter;
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn err(e: bunchlab::Error) -> PyErr {
    match e.exit_code() {
        3 => PyIOError::new_err(e.to_string()),
        2 => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn mode(dead_time: Option<f64>) -> CorrelatorMode {
    match dead_time {
        Some(dead_time) => CorrelatorMode::StartStop { dead_time },
        None => CorrelatorMode::Full,
    }
}

/// Result of the exponential bunching fit.
#[pyclass(name = "FitResult", module = "pybunchlab", frozen)]
struct PyFit(inference::FitResult);

#[pymethods]
impl PyFit {
    #[getter]
    fn a(&self) -> f64 {
        self.0.a
    }
    #[getter]
    fn b(&self) -> f64 {
        self.0.b
    }
    #[getter]
    fn tau_c(&self) -> f64 {
        self.0.tau_c
    }
    #[getter]
    fn g2_zero(&self) -> f64 {
        self.0.g2_zero
    }
    #[getter]
    fn g2_zero_err(&self) -> f64 {
        self.0.g2_zero_err
    }
    #[getter]
    fn chi2_reduced(&self) -> f64 {
        self.0.chi2_reduced
    }
    #[getter]
    fn dof(&self) -> usize {
        self.0.dof
    }
    #[getter]
    fn converged(&self) -> bool {
        self.0.converged
    }
    /// Standard errors of (a, b, tau_c).
    fn std_errors(&self) -> [f64; 3] {
        self.0.std_errors()
    }
    /// Row-major 3×3 covariance of (a, b, tau_c).
    #[getter]
    fn covariance(&self) -> Vec<f64> {
        self.0.covariance.to_vec()
    }
    fn to_json(&self) -> String {
        self.0.to_json()
    }
    fn __repr__(&self) -> String {
        format!(
            "FitResult(g2_zero={:.4}±{:.4}, tau_c={:.4e}, chi2_reduced={:.3})",
            self.0.g2_zero, self.0.g2_zero_err, self.0.tau_c, self.0.chi2_reduced
        )
    }
}

/// Coincidence histogram of t_B − t_A.
#[pyclass(name = "Histogram", module = "pybunchlab", frozen)]
struct PyHistogram(CoincidenceHistogram);

#[pymethods]
impl PyHistogram {
    #[getter]
    fn counts(&self) -> Vec<u64> {
        self.0.counts().to_vec()
    }
    #[getter]
    fn bin_centers(&self) -> Vec<f64> {
        self.0.bin_centers()
    }
    #[getter]
    fn bin_width(&self) -> f64 {
        self.0.bin_width()
    }
    #[getter]
    fn n_a(&self) -> u64 {
        self.0.n_a()
    }
    #[getter]
    fn n_b(&self) -> u64 {
        self.0.n_b()
    }
    #[getter]
    fn t_total(&self) -> f64 {
        self.0.t_total()
    }
    fn total(&self) -> u64 {
        self.0.total()
    }
    fn __len__(&self) -> usize {
        self.0.len()
    }
    /// (tau, g2, err) normalized by the accidental rate N_A·N_B·Δt/T.
    fn normalize(&self) -> PyResult<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let g = correlator::normalize_g2(&self.0).map_err(err)?;
        Ok((g.tau, g.g2, g.err))
    }
    fn fit(&self, exclude_center: Option<f64>) -> PyResult<PyFit> {
        let options = FitOptions {
            exclude_center,
            ..FitOptions::default()
        };
        inference::fit_bunching(&self.0, &options).map(PyFit).map_err(err)
    }
    fn to_csv(&self) -> String {
        let mut bytes = Vec::new();
        self.0.write_csv(&mut bytes).expect("writing to memory");
        String::from_utf8(bytes).expect("csv is utf-8")
    }
    #[staticmethod]
    fn from_csv(text: &str) -> PyResult<Self> {
        CoincidenceHistogram::read_csv(text.as_bytes()).map(Self).map_err(err)
    }
}

/// (tau, g2, detected tau, detected g2, coherence time).
type TheoryCurves = (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, f64);

/// A scenario file, with the pipeline stages as methods.
#[pyclass(name = "Scenario", module = "pybunchlab")]
struct PyScenario(ScenarioConfig);

#[pymethods]
impl PyScenario {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        ScenarioConfig::load(&path).map(Self).map_err(err)
    }
    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        ScenarioConfig::parse(text).map(Self).map_err(err)
    }
    #[getter]
    fn seed(&self) -> u64 {
        self.0.synthesis.seed
    }
    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.0.synthesis.seed = seed;
    }
    /// (frequency in Hz, spectral density) after the filter chain.
    fn spectrum(&self) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let s = self.0.spectrum().map_err(err)?;
        Ok(((0..s.len()).map(|i| s.nu(i)).collect(), s.values().to_vec()))
    }
    /// Theory curves: tau, ideal g2, detected g2 on its own tau grid, and the coherence time.
    fn theory(&self) -> PyResult<TheoryCurves> {
        let s = self.0.spectrum().map_err(err)?;
        let th = pipeline::theory(&self.0, &s).map_err(err)?;
        let taus = |n: usize, f: &dyn Fn(usize) -> f64| (0..n).map(f).collect::<Vec<_>>();
        Ok((
            taus(th.g2.values().len(), &|i| th.g2.tau(i)),
            th.g2.values().to_vec(),
            taus(th.detected.values().len(), &|i| th.detected.tau(i)),
            th.detected.values().to_vec(),
            th.coherence_time,
        ))
    }
    /// Synthesized, detected time tags of both channels in ps.
    fn synthesize(&self, py: Python<'_>) -> PyResult<(Vec<u64>, Vec<u64>)> {
        let cfg = &self.0;
        py.detach(|| {
            let s = cfg.spectrum()?;
            let source = pipeline::source_events(cfg, &s)?;
            let (a, b) = pipeline::detect(cfg, &source)?;
            Ok((a.into_timestamps(), b.into_timestamps()))
        })
        .map_err(err)
    }
    /// Runs every stage into `out` and returns the fit.
    fn run(&self, py: Python<'_>, out: PathBuf) -> PyResult<PyFit> {
        let cfg = &self.0;
        py.detach(|| pipeline::run_pipeline(cfg, &out)).map(PyFit).map_err(err)
    }
}

/// Histogram of b − a for sorted ps time tags; `dead_time` selects start-stop mode.
#[pyfunction]
#[pyo3(signature = (a, b, bin_width, tau_range, dead_time=None))]
fn correlate(
    py: Python<'_>,
    a: Vec<u64>,
    b: Vec<u64>,
    bin_width: f64,
    tau_range: f64,
    dead_time: Option<f64>,
) -> PyResult<PyHistogram> {
    let a = EventStream::new(0, a).map_err(err)?;
    let b = EventStream::new(1, b).map_err(err)?;
    py.detach(|| correlator::cross_correlate(&a, &b, bin_width, tau_range, mode(dead_time)))
        .map(PyHistogram)
        .map_err(err)
}

/// Pair counts by direct double loop, for checking `correlate`.
#[pyfunction]
fn brute_force(a: Vec<u64>, b: Vec<u64>, bin_width: f64, tau_range: f64) -> PyResult<Vec<u64>> {
    correlator::brute_force(&a, &b, bin_width, tau_range).map_err(err)
}

/// Fits N(τ) = a + b·exp(−2|τ|/τ_c) to counts at bin centres `tau`.
#[pyfunction]
#[pyo3(signature = (tau, counts, exclude_center=None))]
fn fit_counts(tau: Vec<f64>, counts: Vec<f64>, exclude_center: Option<f64>) -> PyResult<PyFit> {
    let options = FitOptions {
        exclude_center,
        ..FitOptions::default()
    };
    inference::fit_counts(&tau, &counts, &options).map(PyFit).map_err(err)
}

#[pyfunction]
fn load_pbt1(path: PathBuf) -> PyResult<(u16, Vec<u64>)> {
    let s = photostream::load_pbt1(&path).map_err(err)?;
    Ok((s.channel(), s.into_timestamps()))
}

#[pyfunction]
fn save_pbt1(path: PathBuf, channel: u16, timestamps: Vec<u64>) -> PyResult<()> {
    let s = EventStream::new(channel, timestamps).map_err(err)?;
    photostream::save_pbt1(&s, &path).map_err(err)
}

/// (FSR, FWHM) in Hz of an etalon of thickness in m.
#[pyfunction]
fn etalon(thickness: f64, refractive_index: f64, reflectivity: f64) -> PyResult<(f64, f64)> {
    let e = EtalonFilter::new(thickness, refractive_index, reflectivity).map_err(err)?;
    Ok((e.fsr(), e.fwhm()))
}

/// Coherence time ∫|γ|² dτ of a scenario's filtered spectrum.
#[pyfunction]
fn scenario_coherence_time(scenario: &PyScenario) -> PyResult<f64> {
    let s = scenario.0.spectrum().map_err(err)?;
    let th = pipeline::theory(&scenario.0, &s).map_err(err)?;
    coherence_time(&th.gamma).map_err(err)
}

/// Runs acceptance criteria (all when `ids` is empty); returns (id, name, passed, hard, detail).
#[pyfunction]
#[pyo3(signature = (ids=Vec::new()))]
fn run_acceptance(py: Python<'_>, ids: Vec<u32>) -> Vec<(u32, String, bool, bool, String)> {
    py.detach(|| acceptance::run_selected(&ids))
        .into_iter()
        .map(|r| (r.id, r.name.to_string(), r.passed, r.hard, r.detail))
        .collect()
}

#[pymodule]
fn pybunchlab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyFit>()?;
    m.add_class::<PyHistogram>()?;
    m.add_class::<PyScenario>()?;
    m.add_function(wrap_pyfunction!(correlate, m)?)?;
    m.add_function(wrap_pyfunction!(brute_force, m)?)?;
    m.add_function(wrap_pyfunction!(fit_counts, m)?)?;
    m.add_function(wrap_pyfunction!(load_pbt1, m)?)?;
    m.add_function(wrap_pyfunction!(save_pbt1, m)?)?;
    m.add_function(wrap_pyfunction!(etalon, m)?)?;
    m.add_function(wrap_pyfunction!(scenario_coherence_time, m)?)?;
    m.add_function(wrap_pyfunction!(run_acceptance, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
