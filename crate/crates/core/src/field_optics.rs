//! Sampled complex scalar fields and the single-lens far-field transform.
//!
//! All input-plane fields live on one shared grid: the control, crystal and
//! screen planes are treated as mutually imaged, and a single Fourier lens
//! maps that plane to detector coordinates x = f lambda k / (2 pi).

use rustfft::FftDirection;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

use crate::error::{ensure, Result};
use crate::fft::{fft2, fftshift2, C64};
use crate::grid::Grid;
use crate::turbulence::PhaseScreen;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Plane {
    /// Segmented control phase (imaged onto the crystal).
    Control,
    /// Nonlinear crystal plane.
    Crystal,
    /// Emulated-atmosphere screen plane.
    Screen,
    /// Detector plane behind the Fourier lens.
    FarField,
}

/// A sampled scalar complex amplitude on a square grid.
#[derive(Debug, Clone)]
pub struct ComplexField {
    pub amplitude: Grid<C64>,
    /// Sample pitch (m).
    pub dx: f64,
    /// Wavelength (m).
    pub lambda: f64,
    pub plane: Plane,
}

impl ComplexField {
    pub fn n(&self) -> usize {
        self.amplitude.n()
    }

    /// Total power sum |a|^2 dx^2.
    pub fn power(&self) -> f64 {
        self.amplitude.data().iter().map(|a| a.norm_sqr()).sum::<f64>() * self.dx * self.dx
    }
}

/// Far-field intensity pattern with its detector-plane geometry.
#[derive(Debug, Clone)]
pub struct FarFieldMap {
    pub intensity: Grid<f64>,
    /// Detector-plane sample pitch (m); scales linearly with wavelength at
    /// fixed lens and grid.
    pub pitch: f64,
    /// Lens focal length (m).
    pub focal_length: f64,
    /// Wavelength the detector coordinates were computed at (m).
    pub wavelength: f64,
    /// Physical coordinate of the pattern's array centre; nonzero for
    /// coincidence maps re-centred opposite the heralding detector.
    pub center_offset: (f64, f64),
}

impl FarFieldMap {
    pub fn n(&self) -> usize {
        self.intensity.n()
    }

    /// Physical (y, x) of a sample.
    pub fn coordinate(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.intensity.coord(row, self.pitch) + self.center_offset.0,
            self.intensity.coord(col, self.pitch) + self.center_offset.1,
        )
    }

    /// Integrated power, sum * pitch^2.
    pub fn power(&self) -> f64 {
        self.intensity.sum() * self.pitch * self.pitch
    }
}

/// Centered Gaussian beam amplitude exp(-r^2 / w^2) with unit peak.
pub fn gaussian_beam(waist: f64, n: usize, dx: f64, lambda: f64) -> Result<ComplexField> {
    ensure!(waist > 0.0 && dx > 0.0 && lambda > 0.0, Domain, "gaussian_beam requires positive sizes");
    ensure!(
        waist >= 4.0 * dx,
        Domain,
        "waist {:.3e} under-resolved by pitch {:.3e} (need >= 4 dx)",
        waist,
        dx
    );
    let mut amplitude = Grid::filled(n, C64::new(0.0, 0.0));
    for r in 0..n {
        let y = amplitude.coord(r, dx);
        for c in 0..n {
            let x = amplitude.coord(c, dx);
            *amplitude.at_mut(r, c) = C64::new((-(x * x + y * y) / (waist * waist)).exp(), 0.0);
        }
    }
    Ok(ComplexField {
        amplitude,
        dx,
        lambda,
        plane: Plane::Screen,
    })
}

/// Multiply the field by exp(i * chromatic_factor * wrap(phi)) where wrap
/// folds the screen phase into [0, 2 pi) first. The fold models a
/// phase-only modulator whose stroke is one wave at the wavelength the
/// screen is expressed in: a field at that wavelength is unaffected by the
/// fold (factor 1), while a chromatic factor != 1 sees the folded, not the
/// unwrapped, phase.
pub fn apply_phase(
    field: &ComplexField,
    screen: &PhaseScreen,
    chromatic_factor: f64,
) -> Result<ComplexField> {
    ensure!(
        field.n() == screen.n(),
        Shape,
        "field grid {} vs screen grid {}",
        field.n(),
        screen.n()
    );
    ensure!(
        (field.dx - screen.dx).abs() <= 1e-12 * field.dx.abs(),
        Shape,
        "field pitch {} vs screen pitch {}",
        field.dx,
        screen.dx
    );
    let mut amplitude = field.amplitude.clone();
    for (a, phi) in amplitude.data_mut().iter_mut().zip(screen.phase.data()) {
        let wrapped = phi.rem_euclid(TAU);
        *a *= C64::from_polar(1.0, chromatic_factor * wrapped);
    }
    Ok(ComplexField {
        amplitude,
        dx: field.dx,
        lambda: field.lambda,
        plane: field.plane,
    })
}

/// Multiply the field by exp(i * phi) for an arbitrary phase grid (used for
/// the control phase, which always enters at factor one).
pub fn apply_phase_values(field: &ComplexField, phase: &Grid<f64>) -> Result<ComplexField> {
    ensure!(
        field.n() == phase.n(),
        Shape,
        "field grid {} vs phase grid {}",
        field.n(),
        phase.n()
    );
    let mut amplitude = field.amplitude.clone();
    for (a, phi) in amplitude.data_mut().iter_mut().zip(phase.data()) {
        *a *= C64::from_polar(1.0, *phi);
    }
    Ok(ComplexField {
        amplitude,
        dx: field.dx,
        lambda: field.lambda,
        plane: field.plane,
    })
}

/// Far-field amplitude behind a lens of focal length `f`, centred (zero
/// frequency at index n/2) and carrying the dx^2 / (lambda f) prefactor so
/// that |.|^2 integrated over the detector pitch preserves input power.
pub fn far_field_amplitude(field: &ComplexField, f: f64) -> Result<(Grid<C64>, f64)> {
    ensure!(f > 0.0, Domain, "focal length must be positive");
    ensure!(
        field.n().is_power_of_two(),
        Domain,
        "far_field requires a power-of-two grid, got {}",
        field.n()
    );
    let n = field.n();
    let spectrum = fftshift2(&fft2(&field.amplitude, FftDirection::Forward));
    let prefactor = field.dx * field.dx / (field.lambda * f);
    let amplitude = spectrum.map(|v| v * prefactor);
    let pitch = field.lambda * f / (n as f64 * field.dx);
    Ok((amplitude, pitch))
}

/// Far-field intensity map; detector pitch is f lambda / (n dx).
pub fn far_field(field: &ComplexField, f: f64) -> Result<FarFieldMap> {
    let (amplitude, pitch) = far_field_amplitude(field, f)?;
    Ok(FarFieldMap {
        intensity: amplitude.map(|v| v.norm_sqr()),
        pitch,
        focal_length: f,
        wavelength: field.lambda,
        center_offset: (0.0, 0.0),
    })
}

/// Bilinear resampling of the intensity about the pattern centre: the
/// feature at radius u moves to radius factor * u. Samples pulled from
/// outside the source grid read as zero. Pitch metadata is unchanged.
pub fn rescale_pattern(map: &FarFieldMap, factor: f64) -> Result<FarFieldMap> {
    ensure!(factor > 0.0, Domain, "rescale factor must be positive");
    let n = map.n();
    let center = (n / 2) as f64;
    let mut out = Grid::zeros(n);
    for r in 0..n {
        let sr = center + (r as f64 - center) / factor;
        for c in 0..n {
            let sc = center + (c as f64 - center) / factor;
            *out.at_mut(r, c) = bilinear(&map.intensity, sr, sc);
        }
    }
    Ok(FarFieldMap {
        intensity: out,
        pitch: map.pitch,
        focal_length: map.focal_length,
        wavelength: map.wavelength,
        center_offset: map.center_offset,
    })
}

fn bilinear(grid: &Grid<f64>, r: f64, c: f64) -> f64 {
    let n = grid.n() as i64;
    let (r0, c0) = (r.floor(), c.floor());
    let (fr, fc) = (r - r0, c - c0);
    let mut acc = 0.0;
    for (ir, wr) in [(r0 as i64, 1.0 - fr), (r0 as i64 + 1, fr)] {
        for (ic, wc) in [(c0 as i64, 1.0 - fc), (c0 as i64 + 1, fc)] {
            if ir >= 0 && ir < n && ic >= 0 && ic < n && wr * wc != 0.0 {
                acc += wr * wc * grid.at(ir as usize, ic as usize);
            }
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::turbulence::{ScreenRecipe, TurbulenceParams};

    fn test_params() -> TurbulenceParams {
        TurbulenceParams::new(1e-15, 1000.0, 808e-9, 10.0, 5e-3).unwrap()
    }

    fn test_screen(n: usize, dx: f64, seed: u64) -> PhaseScreen {
        ScreenRecipe::new(test_params(), n, dx, seed)
            .with_scale(1000.0)
            .generate()
            .unwrap()
    }

    #[test]
    fn gaussian_power_matches_analytic() {
        let (w, dx) = (0.7e-3, 0.7e-3 / 16.0);
        let beam = gaussian_beam(w, 256, dx, 404e-9).unwrap();
        let analytic = std::f64::consts::PI * w * w / 2.0;
        assert!((beam.power() - analytic).abs() / analytic < 0.01);
        assert!(beam
            .amplitude
            .data()
            .iter()
            .all(|a| a.im == 0.0 && a.re > 0.0));
    }

    #[test]
    fn gaussian_rejects_unresolved_waist() {
        assert!(gaussian_beam(1e-6, 64, 1e-6, 404e-9).is_err());
    }

    #[test]
    fn plane_wave_focuses_to_single_bin() {
        let n = 64;
        let field = ComplexField {
            amplitude: Grid::filled(n, C64::new(1.0, 0.0)),
            dx: 1e-5,
            lambda: 404e-9,
            plane: Plane::Screen,
        };
        let map = far_field(&field, 0.3).unwrap();
        let center = *map.intensity.at(n / 2, n / 2) * map.pitch * map.pitch;
        assert!(center / map.power() > 0.99);
    }

    #[test]
    fn gaussian_far_field_waist() {
        // amplitude waist w -> far-field amplitude waist lambda f / (pi w)
        let (w, lambda, f) = (0.7e-3, 404e-9, 0.3);
        let n = 512;
        let dx = 21.875e-6;
        let beam = gaussian_beam(w, n, dx, lambda).unwrap();
        let map = far_field(&beam, f).unwrap();
        // second moment of intensity: sigma = w_f / 2
        let (mut m0, mut m2) = (0.0, 0.0);
        for r in 0..n {
            for c in 0..n {
                let (_, x) = map.coordinate(r, c);
                let v = *map.intensity.at(r, c);
                m0 += v;
                m2 += v * x * x;
            }
        }
        let w_f = 2.0 * (m2 / m0).sqrt();
        let analytic = lambda * f / (std::f64::consts::PI * w);
        assert!((analytic - 55.1e-6).abs() / 55.1e-6 < 2e-3);
        assert!((w_f - analytic).abs() / analytic < 0.02, "w_f = {w_f}");
    }

    #[test]
    fn far_field_preserves_power() {
        let n = 128;
        let beam = gaussian_beam(8e-4, n, 5e-5, 404e-9).unwrap();
        let screen = test_screen(n, 5e-5, 7);
        let scattered = apply_phase(&beam, &screen, 1.0).unwrap();
        let map = far_field(&scattered, 0.3).unwrap();
        let rel = (map.power() - scattered.power()).abs() / scattered.power();
        assert!(rel < 1e-9, "relative power error {rel}");
    }

    #[test]
    fn apply_phase_identity_and_magnitude() {
        let n = 64;
        let beam = gaussian_beam(4e-4, n, 1e-5, 404e-9).unwrap();
        let screen = test_screen(n, 1e-5, 3);

        let unchanged = apply_phase(&beam, &screen, 0.0).unwrap();
        assert_eq!(unchanged.amplitude.data(), beam.amplitude.data());

        let modulated = apply_phase(&beam, &screen, 0.7).unwrap();
        for (a, b) in modulated.amplitude.data().iter().zip(beam.amplitude.data()) {
            assert!((a.norm() - b.norm()).abs() < 1e-14);
        }
    }

    #[test]
    fn apply_phase_inverse_restores_field() {
        let n = 64;
        let beam = gaussian_beam(4e-4, n, 1e-5, 404e-9).unwrap();
        let screen = test_screen(n, 1e-5, 11);
        let negated = PhaseScreen::with_phase(&screen, screen.phase.map(|p| -p));
        let forward = apply_phase(&beam, &screen, 1.0).unwrap();
        let back = apply_phase(&forward, &negated, 1.0).unwrap();
        for (a, b) in back.amplitude.data().iter().zip(beam.amplitude.data()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn apply_phase_rejects_mismatched_grids() {
        let beam = gaussian_beam(4e-4, 64, 1e-5, 404e-9).unwrap();
        let screen = test_screen(32, 1e-5, 3);
        assert!(apply_phase(&beam, &screen, 1.0).is_err());
    }

    #[test]
    fn intensity_is_shift_invariant() {
        let n = 64;
        let beam = gaussian_beam(4e-4, n, 1e-5, 404e-9).unwrap();
        let screen = test_screen(n, 1e-5, 13);
        let field = apply_phase(&beam, &screen, 1.0).unwrap();
        let map = far_field(&field, 0.3).unwrap();

        // circular translation of the input changes only the output phase
        let (sr, sc) = (5usize, 11usize);
        let mut shifted = Grid::filled(n, C64::new(0.0, 0.0));
        for r in 0..n {
            for c in 0..n {
                *shifted.at_mut((r + sr) % n, (c + sc) % n) = *field.amplitude.at(r, c);
            }
        }
        let shifted_field = ComplexField {
            amplitude: shifted,
            dx: field.dx,
            lambda: field.lambda,
            plane: field.plane,
        };
        let shifted_map = far_field(&shifted_field, 0.3).unwrap();
        let peak = map.intensity.max_value();
        for (a, b) in map.intensity.data().iter().zip(shifted_map.intensity.data()) {
            assert!((a - b).abs() < 1e-9 * peak);
        }
    }

    mod properties {
        use super::*;
        use crate::turbulence::ScreenRecipe;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(16))]

            /// Phase-only modulation never changes per-sample magnitude,
            /// for any chromatic factor and screen seed.
            #[test]
            fn apply_phase_preserves_magnitude(seed in 0u64..1000, factor in 0.0f64..1.2) {
                let n = 16;
                let beam = gaussian_beam(6e-5, n, 1e-5, 404e-9).unwrap();
                let screen = ScreenRecipe::new(
                    crate::turbulence::TurbulenceParams::new(1e-15, 1000.0, 808e-9, 10.0, 5e-3).unwrap(),
                    n,
                    1e-5,
                    seed,
                )
                .with_scale(1000.0)
                .generate()
                .unwrap();
                let out = apply_phase(&beam, &screen, factor).unwrap();
                for (a, b) in out.amplitude.data().iter().zip(beam.amplitude.data()) {
                    prop_assert!((a.norm() - b.norm()).abs() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn rescale_identity_and_round_trip() {
        let beam = gaussian_beam(0.7e-3, 256, 21.875e-6, 404e-9).unwrap();
        let map = far_field(&beam, 0.3).unwrap();

        let same = rescale_pattern(&map, 1.0).unwrap();
        for (a, b) in same.intensity.data().iter().zip(map.intensity.data()) {
            assert!((a - b).abs() <= 1e-12 * map.intensity.max_value());
        }

        let doubled = rescale_pattern(&map, 2.0).unwrap();
        let back = rescale_pattern(&doubled, 0.5).unwrap();
        let mut num = 0.0;
        let mut den = 0.0;
        for (a, b) in back.intensity.data().iter().zip(map.intensity.data()) {
            num += (a - b) * (a - b);
            den += b * b;
        }
        assert!((num / den).sqrt() < 0.02, "round-trip RMS {}", (num / den).sqrt());
    }
}
