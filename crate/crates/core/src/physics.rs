//! CODATA 2018 constants (SI, exact where defined).

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
/// Planck constant, J·s.
pub const PLANCK: f64 = 6.626_070_15e-34;
/// Boltzmann constant, J/K.
pub const BOLTZMANN: f64 = 1.380_649e-23;
/// Unified atomic mass unit, kg.
pub const ATOMIC_MASS_UNIT: f64 = 1.660_539_066_60e-27;

/// FWHM of a Gaussian expressed in standard deviations, 2·sqrt(2·ln2).
pub const GAUSSIAN_FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_3;

pub fn wavelength_to_frequency(wavelength: f64) -> f64 {
    SPEED_OF_LIGHT / wavelength
}

pub fn frequency_to_wavelength(nu: f64) -> f64 {
    SPEED_OF_LIGHT / nu
}
