//! Invariants of spectra, filters and the coherence functions derived from them.

use bunchlab::coherence::{
    coherence_time, convolve_detector, g2_theory, gamma_from_spectrum, DetectorResponse, G2Curve,
};
use bunchlab::spectral::{
    compose_chain, line_set_density, EtalonFilter, Filter, FrequencyGrid, GratingFilter, LineComponent, LineShape,
};
use proptest::prelude::*;

const NU0: f64 = 5.49e14;

fn line(fwhm: f64, shape: LineShape, span: f64) -> bunchlab::spectral::SpectralDensity {
    let grid = FrequencyGrid::centered(NU0, span * fwhm, fwhm / 20.0).unwrap();
    line_set_density(&[LineComponent::new(NU0, fwhm, 1.0, shape).unwrap()], grid).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn gamma_is_normalized_bounded_and_hermitian(
        fwhm_ghz in 0.2f64..20.0,
        gaussian in any::<bool>(),
    ) {
        let shape = if gaussian { LineShape::Gaussian } else { LineShape::Lorentzian };
        let fwhm = fwhm_ghz * 1e9;
        let s = line(fwhm, shape, 12.0);
        let tau_c = 1.0 / (std::f64::consts::PI * fwhm);
        let gamma = gamma_from_spectrum(&s, 8.0 * tau_c, tau_c / 20.0).unwrap();
        let v = gamma.values();
        let c = gamma.center();
        prop_assert!((v[c].re - 1.0).abs() < 1e-12 && v[c].im.abs() < 1e-12);
        for k in 1..=c {
            prop_assert!(v[c + k].norm() <= 1.0 + 1e-9);
            prop_assert!((v[c + k] - v[c - k].conj()).norm() < 1e-9);
        }
        let g2 = g2_theory(&gamma);
        prop_assert!(g2.values().iter().all(|&g| (1.0..=2.0 + 1e-9).contains(&g)));
    }

    #[test]
    fn coherence_time_scales_inversely_with_linewidth(
        fwhm_ghz in 0.2f64..20.0,
        factor in 1.5f64..4.0,
    ) {
        let tau = |w: f64| {
            let s = line(w, LineShape::Gaussian, 10.5);
            let t0 = 1.0 / w;
            coherence_time(&gamma_from_spectrum(&s, 4.0 * t0, t0 / 40.0).unwrap()).unwrap()
        };
        let narrow = tau(fwhm_ghz * 1e9);
        let wide = tau(fwhm_ghz * 1e9 * factor);
        prop_assert!((narrow / wide / factor - 1.0).abs() < 1e-3);
    }

    #[test]
    fn filters_never_add_power(
        grating_fwhm_nm in 0.05f64..2.0,
        reflectivity in 0.5f64..0.99,
        thickness_mm in 0.1f64..2.0,
    ) {
        let grid = FrequencyGrid::centered(NU0, 2e12, 2e8).unwrap();
        let s = bunchlab::spectral::SpectralDensity::flat(grid).unwrap();
        let lambda = bunchlab::physics::frequency_to_wavelength(NU0);
        let chain: Vec<Filter> = vec![
            GratingFilter::new(lambda, grating_fwhm_nm * 1e-9, 1.0).unwrap().into(),
            EtalonFilter::new(thickness_mm * 1e-3, 1.46, reflectivity).unwrap().into(),
        ];
        if let Ok(out) = compose_chain(&s, &chain) {
            for (o, i) in out.values().iter().zip(s.values()) {
                prop_assert!(*o <= *i * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn etalon_transmission_repeats_every_fsr(
        reflectivity in 0.5f64..0.99,
        thickness_mm in 0.1f64..2.0,
        offset_ghz in -50.0f64..50.0,
    ) {
        let e = EtalonFilter::new(thickness_mm * 1e-3, 1.46, reflectivity).unwrap();
        let nu = NU0 + offset_ghz * 1e9;
        let t0 = e.transmission(nu);
        let t1 = e.transmission(nu + e.fsr());
        prop_assert!((0.0..=1.0).contains(&t0));
        prop_assert!((t0 - t1).abs() < 1e-6);
    }

    #[test]
    fn detector_convolution_conserves_excess_area(
        core_ps in 1.0f64..200.0,
        tail_weight in 0.0f64..0.5,
        tail_ps in 5.0f64..200.0,
    ) {
        let tau_c = 0.436e-9;
        let step = 2e-12;
        let g2 = G2Curve::from_fn(step, 8000, |t| 1.0 + (-2.0 * t.abs() / tau_c).exp()).unwrap();
        let r = DetectorResponse::new(core_ps * 1e-12, tail_weight, tail_ps * 1e-12).unwrap();
        let out = convolve_detector(&g2, &r, &r).unwrap();
        prop_assert!((out.excess_area() / g2.excess_area() - 1.0).abs() < 1e-3);
        prop_assert!(out.at_zero() <= g2.at_zero() + 1e-12);
    }
}

#[test]
fn filtering_lengthens_coherence() {
    // A wide line behind a narrow Gaussian filter takes on the filter's width.
    let wide = 50e9;
    let grid = FrequencyGrid::centered(NU0, 600e9, 50e6).unwrap();
    let s = line_set_density(&[LineComponent::new(NU0, wide, 1.0, LineShape::Gaussian).unwrap()], grid).unwrap();
    let lambda = bunchlab::physics::frequency_to_wavelength(NU0);
    // 2 GHz in frequency expressed as a wavelength width.
    let dl = lambda * lambda * 2e9 / bunchlab::physics::SPEED_OF_LIGHT;
    let filtered = compose_chain(&s, &[GratingFilter::new(lambda, dl, 1.0).unwrap().into()]).unwrap();
    let t_in = s.equivalent_coherence_time();
    let t_out = filtered.equivalent_coherence_time();
    assert!(t_out > 20.0 * t_in, "{t_out:e} vs {t_in:e}");
}
