use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("grid does not cover line {index} (center {center_hz} Hz) to ±10 FWHM")]
    GridTooNarrow { index: usize, center_hz: f64 },

    #[error("degenerate spectrum: {0}")]
    DegenerateSpectrum(String),

    #[error("|γ|² = {edge_value:.3e} at the grid edge (needs < 1e-3); increase tau_max")]
    InsufficientDecay { edge_value: f64 },

    #[error("detector response ({kernel_span_s:.3e} s) wider than the delay grid ({grid_span_s:.3e} s)")]
    ResponseTooWide { kernel_span_s: f64, grid_span_s: f64 },

    #[error("synthesis block of {block_s:.3e} s is shorter than 100 coherence times ({required_s:.3e} s)")]
    BlockTooShort { block_s: f64, required_s: f64 },

    #[error("bin occupancy rate·dt = {occupancy:.3e} exceeds 0.1; use a finer time step")]
    Occupancy { occupancy: f64 },

    #[error("timestamps not sorted at record {index}")]
    Unsorted { index: usize },

    #[error("bin width {bin_width_s:e} s is not a whole number ≥ 1 of the 1 ps stream resolution")]
    Resolution { bin_width_s: f64 },

    #[error("histogram binning mismatch: {0}")]
    BinningMismatch(String),

    #[error("start-stop histograms carry a dead-time deficit and cannot be normalized to g²; fit the raw counts instead")]
    StartStopNormalization,

    #[error("degenerate fit ({reason}); baseline-only estimate a = {baseline}")]
    DegenerateFit { reason: String, baseline: f64 },

    #[error("fit did not converge after {iterations} iterations (chi² {chi2:.6e}, damping {damping:.1e}, params {params:?})")]
    NonConvergence {
        iterations: usize,
        chi2: f64,
        damping: f64,
        params: [f64; 3],
    },

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: msg.into(),
        }
    }

    pub(crate) fn config(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status for the command-line runner.
    ///
    /// 2 = configuration, 3 = data format / IO, 4 = numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } => 2,
            Error::Format { .. } | Error::Unsorted { .. } | Error::Io { .. } => 3,
            Error::Stage { source, .. } => source.exit_code(),
            _ => 4,
        }
    }
}
