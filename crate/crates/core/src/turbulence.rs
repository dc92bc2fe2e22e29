//! Von-Kármán phase screens, atmospheric parameters and frozen-flow views.
//!
//! Screens are synthesized with the inverse-Fourier-transform method: the
//! square root of the phase power spectral density is multiplied element-wise
//! by a circular Gaussian random matrix, inverse transformed, and the real
//! part is kept. Low spatial frequencies below the grid's fundamental are
//! carried by a small set of subharmonic modes so that the ensemble phase
//! structure function follows D(r) = 6.88 (r/r0)^(5/3) across the resolvable
//! band; a final analytic band calibration pins the overall scale to that
//! law. See `SYNTHESIS` notes on `ScreenRecipe::generate` for the exact,
//! reproducible draw order.

use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::FftDirection;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{ensure, Result};
use crate::fft::{fft2_inplace, C64};
use crate::grid::Grid;
use crate::rng::rng_from_seed;

/// Number of 3x-refined subharmonic levels added below the grid fundamental.
const SUBHARMONIC_LEVELS: u32 = 8;

/// The synthesis outer scale is floored at this multiple of r0 so the
/// structure function stays on the 5/3 law over the whole resolvable band;
/// the configured outer scale is used when it is larger, and is always
/// recorded in recipes and sidecars.
const SYNTH_OUTER_SCALE_R0: f64 = 2.0e4;

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

/// Physical description of the turbulent link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurbulenceParams {
    /// Refractive-index structure constant Cn^2 (m^(-2/3)).
    pub cn2: f64,
    /// Link length z (m).
    pub z: f64,
    /// Wavelength at which r0 is evaluated (m).
    pub lambda: f64,
    /// Outer scale l_o (m); k_o = 2 pi / l_o.
    pub outer_scale: f64,
    /// Inner scale l_i (m); k_m = 5.92 / l_i.
    pub inner_scale: f64,
}

impl TurbulenceParams {
    pub fn new(cn2: f64, z: f64, lambda: f64, outer_scale: f64, inner_scale: f64) -> Result<Self> {
        let p = TurbulenceParams {
            cn2,
            z,
            lambda,
            outer_scale,
            inner_scale,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.cn2 > 0.0 && self.z > 0.0 && self.lambda > 0.0,
            Domain,
            "cn2, z and lambda must be strictly positive"
        );
        ensure!(
            self.outer_scale > 0.0 && self.inner_scale > 0.0,
            Domain,
            "outer and inner scales must be strictly positive"
        );
        ensure!(
            self.inner_scale < self.outer_scale,
            Domain,
            "inner scale {} must be below outer scale {}",
            self.inner_scale,
            self.outer_scale
        );
        ensure!(
            self.k_o() < self.k_m(),
            Domain,
            "outer-scale wavenumber must lie below the inner-scale cutoff"
        );
        Ok(())
    }

    /// Outer-scale wavenumber k_o = 2 pi / l_o (rad/m).
    pub fn k_o(&self) -> f64 {
        2.0 * PI / self.outer_scale
    }

    /// Inner-scale cutoff k_m = 5.92 / l_i (rad/m).
    pub fn k_m(&self) -> f64 {
        5.92 / self.inner_scale
    }

    /// Fried parameter of this link at `self.lambda`.
    pub fn fried_parameter(&self) -> f64 {
        fried_parameter(self.lambda, self.cn2, self.z).expect("validated params")
    }
}

/// Fried parameter r0 = (0.4229 (2 pi / lambda)^2 z Cn^2)^(-3/5) in metres.
pub fn fried_parameter(lambda: f64, cn2: f64, z: f64) -> Result<f64> {
    ensure!(
        lambda > 0.0 && cn2 > 0.0 && z > 0.0,
        Domain,
        "fried_parameter requires positive lambda, cn2, z"
    );
    let k = 2.0 * PI / lambda;
    Ok((0.4229 * k * k * z * cn2).powf(-3.0 / 5.0))
}

/// Convert r0 between wavelengths: r0 scales as lambda^(6/5).
pub fn fried_at_wavelength(r0: f64, from_lambda: f64, to_lambda: f64) -> f64 {
    r0 * (to_lambda / from_lambda).powf(6.0 / 5.0)
}

/// Von-Kármán phase power spectral density (rad^2 m^2):
/// Phi(kx, ky) = 0.49 r0^(-5/3) (kx^2 + ky^2 + k_o^2)^(-11/6)
///               exp(-(kx^2 + ky^2) / k_m^2)
/// with k_o = 2 pi / l_o and k_m = 5.92 / l_i. Callers guarantee positive
/// r0, l_o, l_i.
pub fn von_karman_psd(kx: f64, ky: f64, r0: f64, outer_scale: f64, inner_scale: f64) -> f64 {
    let k_o = 2.0 * PI / outer_scale;
    let k_m = 5.92 / inner_scale;
    let k2 = kx * kx + ky * ky;
    0.49 * r0.powf(-5.0 / 3.0) * (k2 + k_o * k_o).powf(-11.0 / 6.0) * (-k2 / (k_m * k_m)).exp()
}

/// Atmospheric refractive index n(P, T, lambda) with P in millibars, T in
/// kelvin and lambda in micrometres:
/// n = 1 + 77.6 (1 + 7.52e-3 lambda^-2) (P / T) 1e-6.
pub fn air_refractive_index(pressure_mbar: f64, temperature_k: f64, lambda_um: f64) -> Result<f64> {
    ensure!(
        pressure_mbar > 0.0 && temperature_k > 0.0 && lambda_um > 0.0,
        Domain,
        "air_refractive_index requires positive inputs"
    );
    Ok(1.0 + 77.6 * (1.0 + 7.52e-3 / (lambda_um * lambda_um)) * (pressure_mbar / temperature_k) * 1e-6)
}

/// Coherence radius rho0 = r0 / 2.1 and the single-correction link-length
/// bound z_max = rho0^2 / lambda.
pub fn isoplanatic_bound(r0: f64, lambda: f64) -> Result<(f64, f64)> {
    ensure!(r0 > 0.0 && lambda > 0.0, Domain, "isoplanatic_bound requires positive inputs");
    let rho0 = r0 / 2.1;
    Ok((rho0, rho0 * rho0 / lambda))
}

// ---------------------------------------------------------------------------
// Screen synthesis
// ---------------------------------------------------------------------------

/// Everything needed to regenerate a screen bit-for-bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenRecipe {
    pub params: TurbulenceParams,
    /// Grid size (power of two).
    pub n: usize,
    /// Sample pitch (m).
    pub dx: f64,
    pub seed: u64,
    /// Desk-scale factor: r0, l_o and l_i are divided by this before
    /// synthesis (1.0 for an unscaled link).
    pub scale_factor: f64,
}

impl ScreenRecipe {
    pub fn new(params: TurbulenceParams, n: usize, dx: f64, seed: u64) -> Self {
        ScreenRecipe {
            params,
            n,
            dx,
            seed,
            scale_factor: 1.0,
        }
    }

    pub fn with_scale(mut self, scale_factor: f64) -> Self {
        self.scale_factor = scale_factor;
        self
    }

    /// Fried parameter after desk scaling (m).
    pub fn r0(&self) -> f64 {
        self.params.fried_parameter() / self.scale_factor
    }

    /// Outer scale after desk scaling (m).
    pub fn outer_scale(&self) -> f64 {
        self.params.outer_scale / self.scale_factor
    }

    /// Inner scale after desk scaling (m).
    pub fn inner_scale(&self) -> f64 {
        self.params.inner_scale / self.scale_factor
    }

    /// Effective outer scale used by the synthesis spectrum (see module docs).
    pub fn synthesis_outer_scale(&self) -> f64 {
        self.outer_scale().max(SYNTH_OUTER_SCALE_R0 * self.r0())
    }

    /// Non-fatal sampling warnings recorded alongside generated screens.
    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        let extent = self.n as f64 * self.dx;
        if extent < self.outer_scale() {
            w.push(format!(
                "grid extent {:.3e} m is below the outer scale {:.3e} m; outer-scale dynamics saturate off-grid",
                extent,
                self.outer_scale()
            ));
        }
        if self.dx > self.inner_scale() {
            w.push(format!(
                "pitch {:.3e} m does not resolve the inner scale {:.3e} m",
                self.dx,
                self.inner_scale()
            ));
        }
        if extent < 4.0 * self.r0() {
            w.push(format!(
                "grid extent {:.3e} m is below 4 r0 = {:.3e} m",
                extent,
                4.0 * self.r0()
            ));
        }
        w
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        ensure!(self.n.is_power_of_two(), Domain, "grid size {} must be a power of two", self.n);
        ensure!(self.dx > 0.0, Domain, "pitch must be positive");
        ensure!(self.scale_factor > 0.0, Domain, "scale factor must be positive");
        Ok(())
    }

    /// Synthesize the screen for this recipe. Deterministic: the ChaCha12
    /// stream seeded with `seed` is consumed in a fixed order.
    ///
    /// SYNTHESIS. With dk = 2 pi / (n dx) and signed frequencies
    /// m in [-n/2, n/2):
    /// 1. For every cell (i, j) in row-major order draw two standard
    ///    normals (a, b); the coefficient is sqrt(Phi_syn(kx, ky)) * dk *
    ///    (a + i b) / sqrt(2), with the (0,0) piston coefficient set to
    ///    zero (its normals are still drawn).
    /// 2. Apply the unnormalised inverse FFT.
    /// 3. For level l = 1..=8 and cells (p, q) in {-1,0,1}^2 \ {(0,0)}
    ///    (row-major), draw (a, b) and add the subharmonic mode
    ///    coefficient * exp(i (ky y + kx x)) with ky = p dk/3^l,
    ///    kx = q dk/3^l and coefficient sqrt(Phi_syn) * dk/3^l *
    ///    (a + i b) / sqrt(2).
    /// 4. The phase is sqrt(2) * c * Re(field), where c is the analytic
    ///    band calibration returned by `band_calibration`.
    ///
    /// Phi_syn is the von-Kármán spectrum with the scaled r0 and inner
    /// scale, and the synthesis outer scale described on
    /// [`ScreenRecipe::synthesis_outer_scale`].
    pub fn generate(&self) -> Result<PhaseScreen> {
        self.validate()?;
        let n = self.n;
        let dk = 2.0 * PI / (n as f64 * self.dx);
        let r0 = self.r0();
        let l_o_syn = self.synthesis_outer_scale();
        let l_i = self.inner_scale();

        let mut rng = rng_from_seed(self.seed);
        let mut draw = move || -> (f64, f64) {
            let a: f64 = rng.sample(StandardNormal);
            let b: f64 = rng.sample(StandardNormal);
            (a, b)
        };

        // 1. spectral grid
        let mut field = vec![C64::new(0.0, 0.0); n * n];
        let inv_sqrt2 = 1.0 / 2f64.sqrt();
        for i in 0..n {
            let ky = signed_freq(i, n) * dk;
            for j in 0..n {
                let kx = signed_freq(j, n) * dk;
                let (a, b) = draw();
                if i == 0 && j == 0 {
                    continue;
                }
                let sigma = von_karman_psd(kx, ky, r0, l_o_syn, l_i).sqrt() * dk;
                field[i * n + j] = C64::new(a, b) * (sigma * inv_sqrt2);
            }
        }

        // 2. inverse transform
        fft2_inplace(&mut field, n, FftDirection::Inverse);

        // 3. subharmonic modes, accumulated through separable row/column
        // factors
        for level in 1..=SUBHARMONIC_LEVELS {
            let dkl = dk / 3f64.powi(level as i32);
            for p in -1i64..=1 {
                for q in -1i64..=1 {
                    if p == 0 && q == 0 {
                        continue;
                    }
                    let ky = p as f64 * dkl;
                    let kx = q as f64 * dkl;
                    let (a, b) = draw();
                    let sigma = von_karman_psd(kx, ky, r0, l_o_syn, l_i).sqrt() * dkl;
                    let coef = C64::new(a, b) * (sigma * inv_sqrt2);
                    let col: Vec<C64> = (0..n)
                        .map(|r| C64::from_polar(1.0, ky * r as f64 * self.dx))
                        .collect();
                    let row: Vec<C64> = (0..n)
                        .map(|c| C64::from_polar(1.0, kx * c as f64 * self.dx))
                        .collect();
                    for r in 0..n {
                        let f = coef * col[r];
                        let line = &mut field[r * n..(r + 1) * n];
                        for (v, rx) in line.iter_mut().zip(row.iter()) {
                            *v += f * rx;
                        }
                    }
                }
            }
        }

        // 4. real part with band calibration
        let scale = 2f64.sqrt() * self.band_calibration();
        let phase = Grid::from_vec(n, field.iter().map(|v| v.re * scale).collect());
        Ok(PhaseScreen {
            phase,
            dx: self.dx,
            recipe: self.clone(),
            warnings: self.warnings(),
        })
    }

    /// Analytic ensemble structure function of the synthesized process at
    /// integer lags along an axis, before band calibration.
    pub fn expected_structure_function(&self, lags: &[usize]) -> Vec<f64> {
        let n = self.n;
        let dk = 2.0 * PI / (n as f64 * self.dx);
        let r0 = self.r0();
        let l_o_syn = self.synthesis_outer_scale();
        let l_i = self.inner_scale();

        // per-column variance of the FFT part (piston excluded)
        let mut col_var = vec![0.0f64; n];
        for i in 0..n {
            let ky = signed_freq(i, n) * dk;
            for (j, col) in col_var.iter_mut().enumerate() {
                if i == 0 && j == 0 {
                    continue;
                }
                let kx = signed_freq(j, n) * dk;
                *col += von_karman_psd(kx, ky, r0, l_o_syn, l_i) * dk * dk;
            }
        }
        let mut subs = Vec::new();
        for level in 1..=SUBHARMONIC_LEVELS {
            let dkl = dk / 3f64.powi(level as i32);
            for p in -1i64..=1 {
                for q in -1i64..=1 {
                    if p == 0 && q == 0 {
                        continue;
                    }
                    let ky = p as f64 * dkl;
                    let kx = q as f64 * dkl;
                    subs.push((kx, von_karman_psd(kx, ky, r0, l_o_syn, l_i) * dkl * dkl));
                }
            }
        }
        lags.iter()
            .map(|&m| {
                let rx = m as f64 * self.dx;
                let mut d = 0.0;
                for (j, col) in col_var.iter().enumerate() {
                    let kx = signed_freq(j, n) * dk;
                    d += 2.0 * (1.0 - (kx * rx).cos()) * col;
                }
                for &(kx, var) in &subs {
                    d += 2.0 * (1.0 - (kx * rx).cos()) * var;
                }
                d
            })
            .collect()
    }

    /// Lags (in samples) of the validated structure-function band
    /// [4 dx, n dx / 8], falling back to [1, n/4] on tiny grids.
    pub fn calibration_lags(&self) -> Vec<usize> {
        let hi = self.n / 8;
        if hi >= 4 {
            (4..=hi).collect()
        } else {
            (1..=(self.n / 4).max(1)).collect()
        }
    }

    /// Amplitude factor pinning the ensemble structure function to
    /// 6.88 (r/r0)^(5/3) over the calibration band (geometric-mean match).
    pub fn band_calibration(&self) -> f64 {
        let lags = self.calibration_lags();
        let expected = self.expected_structure_function(&lags);
        let r0 = self.r0();
        let mut log_sum = 0.0;
        for (&m, &d) in lags.iter().zip(expected.iter()) {
            let target = 6.88 * (m as f64 * self.dx / r0).powf(5.0 / 3.0);
            log_sum += (target / d).ln();
        }
        (0.5 * log_sum / lags.len() as f64).exp()
    }
}

fn signed_freq(index: usize, n: usize) -> f64 {
    if index < n / 2 {
        index as f64
    } else {
        index as f64 - n as f64
    }
}

/// A real-valued phase grid in pump-wavelength radians.
#[derive(Debug, Clone)]
pub struct PhaseScreen {
    pub phase: Grid<f64>,
    /// Sample pitch (m).
    pub dx: f64,
    pub recipe: ScreenRecipe,
    pub warnings: Vec<String>,
}

impl PhaseScreen {
    pub fn n(&self) -> usize {
        self.phase.n()
    }

    /// A screen with the given explicit phase values; recipe metadata is
    /// carried over from `template`.
    pub fn with_phase(template: &PhaseScreen, phase: Grid<f64>) -> PhaseScreen {
        PhaseScreen {
            phase,
            dx: template.dx,
            recipe: template.recipe.clone(),
            warnings: template.warnings.clone(),
        }
    }

    /// A constant screen useful in tests and for expressing "no atmosphere".
    pub fn constant(n: usize, dx: f64, value: f64, params: TurbulenceParams) -> PhaseScreen {
        PhaseScreen {
            phase: Grid::filled(n, value),
            dx,
            recipe: ScreenRecipe::new(params, n, dx, 0),
            warnings: Vec::new(),
        }
    }
}

/// Convenience wrapper building the unit-scale recipe.
pub fn generate_screen(params: &TurbulenceParams, n: usize, dx: f64, seed: u64) -> Result<PhaseScreen> {
    ScreenRecipe::new(params.clone(), n, dx, seed).generate()
}

// ---------------------------------------------------------------------------
// Frozen flow
// ---------------------------------------------------------------------------

/// A master screen with a translating window, emulating turbulence that
/// drifts rigidly across the beam.
#[derive(Debug, Clone)]
pub struct FrozenFlow {
    master: PhaseScreen,
    window: usize,
    schedule: Vec<(i64, i64)>,
}

impl FrozenFlow {
    /// `schedule` holds (row, col) offsets of each step relative to the
    /// initial window anchored at the master's origin corner.
    pub fn new(master: PhaseScreen, window: usize, schedule: Vec<(i64, i64)>) -> Result<Self> {
        ensure!(
            window < master.n(),
            Domain,
            "window {} must be smaller than the master screen {}",
            window,
            master.n()
        );
        let flow = FrozenFlow {
            master,
            window,
            schedule,
        };
        for step in 0..flow.schedule.len() {
            flow.check_offset(flow.schedule[step])?;
        }
        Ok(flow)
    }

    pub fn master(&self) -> &PhaseScreen {
        &self.master
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn schedule(&self) -> &[(i64, i64)] {
        &self.schedule
    }

    pub fn len(&self) -> usize {
        self.schedule.len()
    }

    pub fn is_empty(&self) -> bool {
        self.schedule.is_empty()
    }

    fn check_offset(&self, (dr, dc): (i64, i64)) -> Result<()> {
        let max = (self.master.n() - self.window) as i64;
        ensure!(
            dr >= 0 && dc >= 0 && dr <= max && dc <= max,
            Range,
            "window offset ({}, {}) leaves the {}-sample master",
            dr,
            dc,
            self.master.n()
        );
        Ok(())
    }

    /// The windowed view at the scheduled step.
    pub fn view(&self, step: usize) -> Result<PhaseScreen> {
        ensure!(
            step < self.schedule.len(),
            Range,
            "step {} outside schedule of length {}",
            step,
            self.schedule.len()
        );
        self.view_at(self.schedule[step])
    }

    /// The windowed view at an explicit offset.
    pub fn view_at(&self, offset: (i64, i64)) -> Result<PhaseScreen> {
        self.check_offset(offset)?;
        let (dr, dc) = (offset.0 as usize, offset.1 as usize);
        let w = self.window;
        let mut phase = Grid::zeros(w);
        for r in 0..w {
            for c in 0..w {
                *phase.at_mut(r, c) = *self.master.phase.at(r + dr, c + dc);
            }
        }
        Ok(PhaseScreen {
            phase,
            dx: self.master.dx,
            recipe: self.master.recipe.clone(),
            warnings: self.master.warnings.clone(),
        })
    }
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
