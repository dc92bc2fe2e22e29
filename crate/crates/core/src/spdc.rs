//! Photon-pair coincidence patterns from the shaped pump.
//!
//! In the thin-crystal regime the pump's angular spectrum transfers to the
//! pair amplitude: with one detector held fixed, scanning the other maps
//! |V(q_s + q_i)|^2, the far field of an effective pump-plane field. The
//! control phase enters that field at factor one (it is imprinted on the
//! pump before the crystal); the atmosphere phase enters at the chromatic
//! factor beta because the pair acquires it after the crystal at twice the
//! wavelength.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::fft::fft2_padded_centered;
use crate::field_optics::{
    apply_phase, apply_phase_values, ComplexField, FarFieldMap, Plane,
};
use crate::grid::Grid;
use crate::turbulence::PhaseScreen;

/// Pair-arm configuration. The pair wavelength is exactly twice the pump
/// wavelength by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpdcConfig {
    /// Pump wavelength (m).
    pub pump_wavelength: f64,
    /// Combined phase the photon pair acquires per unit pump-phase of the
    /// screen: 1.0 without modulator dispersion, about 0.7 for the liquid
    /// crystal material at 404/808 nm.
    pub beta: f64,
    /// Fixed heralding-detector coordinate in the far-field plane (m).
    pub idler_position: (f64, f64),
    /// Recorded metadata only; no modal decomposition is performed.
    pub schmidt_number: f64,
    /// Coincidence rate at the unscattered focus used to scale normalized
    /// patterns into counts/s (calibration choice, not a measured value).
    pub peak_coincidence_rate: f64,
    /// Peak singles rate (counts/s) of the broad fixed envelope.
    pub singles_peak_rate: f64,
    /// Amplitude waist of the singles envelope in the detector plane (m).
    pub singles_waist: f64,
}

impl Default for SpdcConfig {
    fn default() -> Self {
        SpdcConfig {
            pump_wavelength: 404e-9,
            beta: 1.0,
            idler_position: (0.0, 0.0),
            schmidt_number: 680.0,
            peak_coincidence_rate: 5.0,
            singles_peak_rate: 6400.0,
            singles_waist: 1.70e-3,
        }
    }
}

impl SpdcConfig {
    /// Pair (signal/idler) wavelength: exactly twice the pump wavelength.
    pub fn pair_wavelength(&self) -> f64 {
        2.0 * self.pump_wavelength
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.pump_wavelength > 0.0, Domain, "pump wavelength must be positive");
        ensure!(
            self.beta > 0.0 && self.beta <= 1.2,
            Domain,
            "beta {} outside the sanity band (0, 1.2]",
            self.beta
        );
        ensure!(
            self.peak_coincidence_rate > 0.0 && self.singles_peak_rate > 0.0,
            Domain,
            "rates must be positive"
        );
        ensure!(self.singles_waist > 0.0, Domain, "singles waist must be positive");
        Ok(())
    }
}

/// Effective pump-plane field seen by the photon pair:
/// pump0 * exp(i phi_control) * exp(i beta wrap(phi_atmosphere)).
pub fn effective_pair_field(
    pump0: &ComplexField,
    control: Option<&Grid<f64>>,
    atmosphere: Option<&PhaseScreen>,
    beta: f64,
) -> Result<ComplexField> {
    let mut field = match control {
        Some(phase) => apply_phase_values(pump0, phase)?,
        None => pump0.clone(),
    };
    if let Some(screen) = atmosphere {
        field = apply_phase(&field, screen, beta)?;
    }
    Ok(field)
}

/// Coincidence pattern on the natural pair grid: the pump-grid far field
/// with the detector pitch computed at the pair wavelength (so the pattern
/// is spatially twice the pump pattern) and re-centred opposite the fixed
/// idler detector. Intensity is normalized so the full detector plane
/// integrates to one.
pub fn coincidence_pattern(
    effective: &ComplexField,
    f: f64,
    config: &SpdcConfig,
) -> Result<FarFieldMap> {
    config.validate()?;
    let n = effective.n();
    let lambda_pair = config.pair_wavelength();
    let map = crate::field_optics::far_field(
        &ComplexField {
            amplitude: effective.amplitude.clone(),
            dx: effective.dx,
            lambda: lambda_pair,
            plane: Plane::Screen,
        },
        f,
    )?;
    let pitch = lambda_pair * f / (n as f64 * effective.dx);
    finish_pattern(map.intensity, pitch, f, config, effective.power())
}

/// Coincidence pattern resampled onto the signal-detector window shared
/// with the pump far field: `resolve` >= 1 multiplies the sample density
/// (resolve = 1 gives exactly the pump map's pitch and window). Evaluated
/// by zero-padding the effective field, i.e. trigonometric interpolation
/// of the same spectrum, not image resampling.
pub fn coincidence_pattern_on_window(
    effective: &ComplexField,
    f: f64,
    config: &SpdcConfig,
    resolve: usize,
) -> Result<FarFieldMap> {
    config.validate()?;
    ensure!(resolve >= 1, Domain, "resolve factor must be >= 1");
    ensure!(
        effective.n().is_power_of_two(),
        Domain,
        "coincidence transform requires a power-of-two grid"
    );
    let n = effective.n();
    let lambda_pair = config.pair_wavelength();
    let pad = 2 * resolve;
    let spectrum = fft2_padded_centered(&effective.amplitude, pad, resolve * n);
    let prefactor = effective.dx * effective.dx / (lambda_pair * f);
    let intensity = spectrum.map(|v| (v * prefactor).norm_sqr());
    let pitch = lambda_pair * f / ((pad * n) as f64 * effective.dx);
    finish_pattern(intensity, pitch, f, config, effective.power())
}

fn finish_pattern(
    intensity: Grid<f64>,
    pitch: f64,
    f: f64,
    config: &SpdcConfig,
    input_power: f64,
) -> Result<FarFieldMap> {
    ensure!(input_power > 0.0, Domain, "effective field carries no power");
    let half_window = pitch * (intensity.n() / 2) as f64;
    let (iy, ix) = config.idler_position;
    ensure!(
        iy.abs() <= half_window && ix.abs() <= half_window,
        Range,
        "idler position ({iy:.3e}, {ix:.3e}) outside the computed plane (half window {half_window:.3e})"
    );
    Ok(FarFieldMap {
        intensity: intensity.map(|v| v / input_power),
        pitch,
        focal_length: f,
        wavelength: config.pair_wavelength(),
        center_offset: (-iy, -ix),
    })
}

/// Broad fixed singles envelope in counts/s at each detector position:
/// a Gaussian of configurable waist scaled by the modulator transmission.
/// Independent of both the control and the atmosphere phases.
pub fn singles_envelope(
    config: &SpdcConfig,
    n: usize,
    pitch: f64,
    slm1_transmission: f64,
) -> Result<FarFieldMap> {
    config.validate()?;
    ensure!(
        slm1_transmission > 0.0 && slm1_transmission <= 1.0,
        Domain,
        "transmission {} outside (0, 1]",
        slm1_transmission
    );
    let mut intensity = Grid::zeros(n);
    let w2 = config.singles_waist * config.singles_waist;
    for r in 0..n {
        let y = intensity.coord(r, pitch);
        for c in 0..n {
            let x = intensity.coord(c, pitch);
            *intensity.at_mut(r, c) = config.singles_peak_rate
                * slm1_transmission
                * (-2.0 * (x * x + y * y) / w2).exp();
        }
    }
    Ok(FarFieldMap {
        intensity,
        pitch,
        focal_length: 0.0,
        wavelength: config.pair_wavelength(),
        center_offset: (0.0, 0.0),
    })
}
