//! Named, seeded experiment scenarios with exported artifact bundles.
//!
//! Every run writes a `manifest.json` echoing the fully resolved
//! configuration and all derived quantities, the scenario's grids, count
//! maps and traces, and a `metrics.json` summary. Bundles are a pure
//! function of the configuration, so reruns are byte-identical.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::detection::{
    aperture_rates, camera_capture, scan_coincidences, scan_singles, subtract_accidentals,
    CountMap, DetectionConfig,
};
use crate::error::{ensure, Result};
use crate::field_optics::{
    apply_phase, far_field, gaussian_beam, rescale_pattern, ComplexField, FarFieldMap,
};
use crate::grid::Grid;
use crate::io;
use crate::metrics::{
    efficiency, enhancement, pearson, structure_function, structure_function_axis, target_mask,
    TargetMask,
};
use crate::rng::{derive_seed, derive_seed2, rng_from_seed, streams};
use crate::shaper::{
    add_mode_overlay, partition_iteration, run_optimization, ControlState, Feedback, FeedbackMode,
    FeedbackSpec, ModeOverlay, SegmentTiling,
};
use crate::spdc::{
    coincidence_pattern_on_window, effective_pair_field, singles_envelope, SpdcConfig,
};
use crate::turbulence::{
    fried_at_wavelength, isoplanatic_bound, FrozenFlow, PhaseScreen, ScreenRecipe,
    TurbulenceParams,
};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    /// Ensemble structure-function validation of the screen generator.
    ScreenValidate,
    /// Paired pump / two-photon speckle through one screen.
    Speckle,
    /// Partitioning optimization against a static screen, with the
    /// reference / speckle / optimized panel sequence.
    OptimizeStatic,
    /// Optimization against a drifting screen, then frozen compensation.
    OptimizeDynamic,
    /// Pi-step overlay on the optimized state.
    HigherMode,
}

impl ScenarioKind {
    pub fn name(&self) -> &'static str {
        match self {
            ScenarioKind::ScreenValidate => "screen-validate",
            ScenarioKind::Speckle => "speckle",
            ScenarioKind::OptimizeStatic => "optimize-static",
            ScenarioKind::OptimizeDynamic => "optimize-dynamic",
            ScenarioKind::HigherMode => "higher-mode",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Desk-scale link: parameters divided by 1000 so a millimetre beam
    /// scatters like a metre-class beam on a kilometre link.
    Lab,
    /// Unscaled link parameters.
    Field,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ShaperConfig {
    pub segments_per_side: usize,
    /// Side of the segmented square region in units of the screen-plane
    /// beam waist.
    pub region_waists: f64,
    pub n_phases: usize,
    /// Measurement budget (every probe counts).
    pub budget: u64,
    pub feedback: FeedbackMode,
    /// Coincidence exposure per probe (s).
    pub exposure_per_probe: f64,
    pub target_enhancement: Option<f64>,
}

impl Default for ShaperConfig {
    fn default() -> Self {
        ShaperConfig {
            segments_per_side: 30,
            region_waists: 3.0,
            n_phases: 5,
            budget: 15_000,
            feedback: FeedbackMode::PumpNoiseless,
            exposure_per_probe: 1.0,
            target_enhancement: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DynamicsConfig {
    /// Monitor-only steps before the optimization starts.
    pub idle_steps: usize,
    pub optimizing_steps: usize,
    /// Steps after the compensation is frozen.
    pub frozen_steps: usize,
    /// Master-screen shift per step, in samples along +x.
    pub shift_per_step: usize,
    /// Optimization iterations between consecutive shifts.
    pub iterations_per_shift: usize,
    /// Exposure of the recorded single-pixel coincidence sample (s).
    pub monitor_exposure: f64,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        DynamicsConfig {
            idle_steps: 3,
            optimizing_steps: 40,
            frozen_steps: 40,
            shift_per_step: 1,
            iterations_per_shift: 10,
            monitor_exposure: 1.0,
        }
    }
}

/// Per-panel coincidence scan exposures (s/point).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExposurePlan {
    pub reference: f64,
    pub speckle: f64,
    pub optimized: f64,
}

impl Default for ExposurePlan {
    fn default() -> Self {
        ExposurePlan {
            reference: 2.0,
            speckle: 12.0,
            optimized: 10.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub scenario: ScenarioKind,
    /// Unscaled link description; r0 derives from it.
    pub turbulence: TurbulenceParams,
    /// Desk scale-down divisor applied to r0, l_o, l_i.
    pub scale_factor: f64,
    pub grid_size: usize,
    pub grid_pitch: f64,
    /// Beam waist in the screen/control plane (m).
    pub beam_waist_screen: f64,
    /// Beam waist at the crystal (recorded; the shared-plane model images
    /// it onto the screen plane).
    pub beam_waist_crystal: f64,
    pub focal_length: f64,
    pub spdc: SpdcConfig,
    pub detection: DetectionConfig,
    pub shaper: ShaperConfig,
    pub dynamics: DynamicsConfig,
    pub exposures: ExposurePlan,
    /// Pump transmission after the control modulator displays a shaped
    /// pattern; scales the singles envelope.
    pub slm1_transmission_shaped: f64,
    /// Sample-density multiplier of exported/scanned coincidence maps
    /// relative to the pump far-field pitch.
    pub coincidence_resolve: usize,
    /// Sample-density multiplier for the higher-mode pattern export.
    pub highmode_resolve: usize,
    /// Screens in the validation ensemble.
    pub ensemble_size: usize,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig::preset(ScenarioKind::Speckle, Preset::Lab)
    }
}

impl ScenarioConfig {
    /// Configuration template for a scenario at one of the two standard
    /// scales.
    pub fn preset(scenario: ScenarioKind, preset: Preset) -> ScenarioConfig {
        // unscaled link: Cn^2 = 1e-15, z = 1 km, r0 evaluated at 808 nm,
        // l_o = 10 m, l_i = 5 mm
        let turbulence = TurbulenceParams {
            cn2: 1e-15,
            z: 1000.0,
            lambda: 808e-9,
            outer_scale: 10.0,
            inner_scale: 5e-3,
        };
        let (scale_factor, beam_waist_screen) = match preset {
            Preset::Lab => (1000.0, 1.4e-3),
            Preset::Field => (1.0, 1.4),
        };
        // pitch: the beam diameter spans half the grid
        let grid_size = 512usize;
        let grid_pitch = 4.0 * beam_waist_screen / grid_size as f64;
        ScenarioConfig {
            scenario,
            turbulence,
            scale_factor,
            grid_size,
            grid_pitch,
            beam_waist_screen,
            beam_waist_crystal: beam_waist_screen / 2.0,
            focal_length: 0.3,
            spdc: SpdcConfig::default(),
            detection: DetectionConfig::default(),
            shaper: ShaperConfig::default(),
            dynamics: DynamicsConfig::default(),
            exposures: ExposurePlan::default(),
            slm1_transmission_shaped: 0.82,
            coincidence_resolve: 2,
            highmode_resolve: 4,
            ensemble_size: 200,
            seed: 1,
        }
    }

    /// Scaled screen recipe for this configuration.
    pub fn screen_recipe(&self, seed: u64) -> ScreenRecipe {
        ScreenRecipe::new(self.turbulence.clone(), self.grid_size, self.grid_pitch, seed)
            .with_scale(self.scale_factor)
    }

    /// Side length of the segmented control region (m).
    pub fn segment_region(&self) -> f64 {
        self.region_for_waists(self.shaper.region_waists)
    }

    fn region_for_waists(&self, waists: f64) -> f64 {
        waists * self.beam_waist_screen
    }

    pub fn validate(&self) -> Result<()> {
        self.turbulence.validate()?;
        self.spdc.validate()?;
        self.detection.validate()?;
        ensure!(
            self.grid_size.is_power_of_two(),
            Config,
            "grid_size {} must be a power of two",
            self.grid_size
        );
        ensure!(self.grid_pitch > 0.0, Config, "grid_pitch must be positive");
        ensure!(
            self.beam_waist_screen >= 4.0 * self.grid_pitch,
            Config,
            "beam waist {:.3e} m is under-resolved by the pitch {:.3e} m",
            self.beam_waist_screen,
            self.grid_pitch
        );
        ensure!(
            self.coincidence_resolve >= 1 && self.highmode_resolve >= 1,
            Config,
            "resolve factors must be >= 1"
        );
        ensure!(self.scale_factor > 0.0, Config, "scale_factor must be positive");
        ensure!(
            self.slm1_transmission_shaped > 0.0 && self.slm1_transmission_shaped <= 1.0,
            Config,
            "slm1_transmission_shaped must be in (0, 1]"
        );
        let uses_shaper = matches!(
            self.scenario,
            ScenarioKind::OptimizeStatic | ScenarioKind::OptimizeDynamic | ScenarioKind::HigherMode
        );
        if uses_shaper {
            let extent = self.grid_size as f64 * self.grid_pitch;
            ensure!(
                self.segment_region() <= extent,
                Config,
                "segmented region {:.3e} m exceeds the grid extent {:.3e} m; lower region_waists or enlarge the grid",
                self.segment_region(),
                extent
            );
            if self.shaper.feedback == FeedbackMode::CoincidenceCounts {
                ensure!(
                    self.shaper.exposure_per_probe > 0.0,
                    Config,
                    "coincidence feedback requires a positive exposure_per_probe"
                );
            }
        }
        if self.scenario != ScenarioKind::ScreenValidate {
            // the scan region (plus collection aperture) must stay inside
            // the exported coincidence window
            let scan_half = (self.detection.scan_points - 1) as f64 / 2.0 * self.detection.scan_step
                + self.detection.collection_diameter;
            let window_half = self.pump_pitch() * (self.grid_size / 2) as f64;
            ensure!(
                scan_half <= window_half,
                Config,
                "scan region half-width {:.3e} m exceeds the coincidence window half-width {:.3e} m",
                scan_half,
                window_half
            );
        }
        Ok(())
    }

    /// Pump far-field pitch f lambda / (n dx).
    pub fn pump_pitch(&self) -> f64 {
        self.spdc.pump_wavelength * self.focal_length / (self.grid_size as f64 * self.grid_pitch)
    }

    fn feedback_spec(&self) -> FeedbackSpec {
        FeedbackSpec {
            mode: self.shaper.feedback,
            exposure_per_probe: Some(self.shaper.exposure_per_probe),
        }
    }
}

// ---------------------------------------------------------------------------
// Shared stage
// ---------------------------------------------------------------------------

/// Precomputed objects shared by the optical scenarios.
struct Stage {
    pump: ComplexField,
    /// Mask on the pump far-field grid.
    pump_mask: TargetMask,
    /// Mask on the coincidence feedback grid.
    coin_mask_feedback: TargetMask,
    /// counts/s per unit normalized target sum in coincidence feedback.
    feedback_rate_scale: f64,
    /// counts/s per unit normalized pattern value in scans.
    scan_rate_scale: f64,
}

impl Stage {
    fn build(cfg: &ScenarioConfig) -> Result<Stage> {
        let pump = gaussian_beam(
            cfg.beam_waist_screen,
            cfg.grid_size,
            cfg.grid_pitch,
            cfg.spdc.pump_wavelength,
        )?;
        let pump_ref = far_field(&pump, cfg.focal_length)?;
        let coin_ref =
            coincidence_pattern_on_window(&pump, cfg.focal_length, &cfg.spdc, cfg.coincidence_resolve)?;
        let coin_ref_feedback = coincidence_pattern_on_window(&pump, cfg.focal_length, &cfg.spdc, 1)?;
        let pump_mask = target_mask(&pump_ref.intensity)?;
        let coin_mask_feedback = target_mask(&coin_ref_feedback.intensity)?;

        // calibrate pattern units into counts/s: the collection aperture at
        // the unscattered peak collects the configured peak rate
        let center_rate = aperture_rate_at_center(&coin_ref, &cfg.detection)?;
        ensure!(center_rate > 0.0, Domain, "degenerate unscattered coincidence pattern");
        let scan_rate_scale = cfg.spdc.peak_coincidence_rate / center_rate;

        // feedback target sums are scaled so the unscattered target-area
        // rate equals the peak rate
        let target_sum = coin_mask_feedback.masked_sum(&coin_ref_feedback.intensity)?;
        ensure!(target_sum > 0.0, Domain, "degenerate coincidence target mask");
        let feedback_rate_scale = cfg.spdc.peak_coincidence_rate / target_sum;

        Ok(Stage {
            pump,
            pump_mask,
            coin_mask_feedback,
            feedback_rate_scale,
            scan_rate_scale,
        })
    }

    fn feedback<'a>(&'a self, cfg: &'a ScenarioConfig, screen: Option<&'a PhaseScreen>) -> Feedback<'a> {
        Feedback {
            spec: cfg.feedback_spec(),
            pump: &self.pump,
            atmosphere: screen,
            spdc: &cfg.spdc,
            detection: &cfg.detection,
            focal_length: cfg.focal_length,
            mask: match cfg.shaper.feedback {
                FeedbackMode::CoincidenceCounts => &self.coin_mask_feedback,
                _ => &self.pump_mask,
            },
            coincidence_rate_scale: self.feedback_rate_scale * self.pump.power(),
            seed: derive_seed(cfg.seed, streams::PROBE),
        }
    }

    fn tiling(&self, cfg: &ScenarioConfig) -> Result<SegmentTiling> {
        SegmentTiling::new(
            cfg.shaper.segments_per_side,
            cfg.segment_region(),
            cfg.grid_size,
            cfg.grid_pitch,
        )
    }

    /// Coincidence map (export grid) in counts/s pattern units.
    fn coincidence_rate_map(
        &self,
        cfg: &ScenarioConfig,
        control: Option<&Grid<f64>>,
        screen: Option<&PhaseScreen>,
    ) -> Result<FarFieldMap> {
        let eff = effective_pair_field(&self.pump, control, screen, cfg.spdc.beta)?;
        let map = coincidence_pattern_on_window(&eff, cfg.focal_length, &cfg.spdc, cfg.coincidence_resolve)?;
        Ok(scale_map(&map, self.scan_rate_scale))
    }

    /// Pump far-field map after optional control and screen.
    fn pump_map(
        &self,
        cfg: &ScenarioConfig,
        control: Option<&Grid<f64>>,
        screen: Option<&PhaseScreen>,
    ) -> Result<FarFieldMap> {
        let mut field = match control {
            Some(phase) => crate::field_optics::apply_phase_values(&self.pump, phase)?,
            None => self.pump.clone(),
        };
        if let Some(s) = screen {
            field = apply_phase(&field, s, 1.0)?;
        }
        far_field(&field, cfg.focal_length)
    }
}

fn scale_map(map: &FarFieldMap, scale: f64) -> FarFieldMap {
    FarFieldMap {
        intensity: map.intensity.map(|v| v * scale),
        pitch: map.pitch,
        focal_length: map.focal_length,
        wavelength: map.wavelength,
        center_offset: map.center_offset,
    }
}

fn aperture_rate_at_center(map: &FarFieldMap, det: &DetectionConfig) -> Result<f64> {
    let mut one_point = det.clone();
    one_point.scan_points = 1;
    Ok(*aperture_rates(map, &one_point)?.at(0, 0))
}

// ---------------------------------------------------------------------------
// Manifest and metrics plumbing
// ---------------------------------------------------------------------------

fn manifest(cfg: &ScenarioConfig) -> Result<Value> {
    let r0_field = cfg.turbulence.fried_parameter();
    let r0 = r0_field / cfg.scale_factor;
    let r0_pump = fried_at_wavelength(r0, cfg.turbulence.lambda, cfg.spdc.pump_wavelength);
    let (rho0, z_max) = isoplanatic_bound(r0, cfg.turbulence.lambda)?;
    let (rho0_field, z_max_field) = isoplanatic_bound(r0_field, cfg.turbulence.lambda)?;
    let recipe = cfg.screen_recipe(derive_seed(cfg.seed, streams::SCREEN));
    let region = cfg.segment_region();
    Ok(json!({
        "config": serde_json::to_value(cfg)?,
        "derived": {
            "r0_unscaled_m": r0_field,
            "r0_m": r0,
            "r0_at_pump_wavelength_m": r0_pump,
            "r0_wavelength_note": "screens follow the r0 evaluated at turbulence.lambda; the pump-wavelength value is recorded for reference",
            "rho0_m": rho0,
            "z_max_m": z_max,
            "rho0_unscaled_m": rho0_field,
            "z_max_unscaled_m": z_max_field,
            "outer_scale_scaled_m": recipe.outer_scale(),
            "inner_scale_scaled_m": recipe.inner_scale(),
            "synthesis_outer_scale_m": recipe.synthesis_outer_scale(),
            "band_calibration": recipe.band_calibration(),
            "grid_extent_m": cfg.grid_size as f64 * cfg.grid_pitch,
            "pump_far_pitch_m": cfg.pump_pitch(),
            "coincidence_pitch_m": cfg.pump_pitch() / cfg.coincidence_resolve as f64,
            "coincidence_window_m": cfg.pump_pitch() * cfg.grid_size as f64,
            "scan_window_m": cfg.detection.scan_step * (cfg.detection.scan_points - 1) as f64,
            "camera_window_m": cfg.camera_window(),
            "segment_region_m": region,
            "segment_size_m": region / cfg.shaper.segments_per_side as f64,
            "segment_size_over_r0": region / cfg.shaper.segments_per_side as f64 / r0,
            "screen_warnings": recipe.warnings(),
            "seed_streams": {
                "screen": streams::SCREEN,
                "optimizer": streams::OPTIMIZER,
                "scan": streams::SCAN,
                "camera": streams::CAMERA,
                "probe": streams::PROBE,
                "ensemble": streams::ENSEMBLE,
                "monitor": streams::MONITOR,
            },
        },
    }))
}

impl ScenarioConfig {
    fn camera_window(&self) -> f64 {
        self.detection.camera_points as f64 * self.detection.camera_pixel
    }
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn screen_sidecar(cfg: &ScenarioConfig, recipe: &ScreenRecipe) -> Value {
    json!({
        "n": recipe.n,
        "dx": recipe.dx,
        "seed": recipe.seed,
        "cn2": recipe.params.cn2,
        "z": recipe.params.z,
        "lambda": recipe.params.lambda,
        "l_o": recipe.params.outer_scale,
        "l_i": recipe.params.inner_scale,
        "scaling_note": format!(
            "r0, l_o, l_i divided by {}; screen r0 = {:.6e} m; synthesis outer scale {:.6e} m; phase in pump-wavelength radians",
            recipe.scale_factor,
            recipe.r0(),
            recipe.synthesis_outer_scale()
        ),
        "scale_factor": recipe.scale_factor,
        "warnings": recipe.warnings(),
        "pump_wavelength": cfg.spdc.pump_wavelength,
    })
}

fn map_sidecar(cfg: &ScenarioConfig, map: &FarFieldMap, label: &str) -> Value {
    json!({
        "label": label,
        "n": map.n(),
        "pitch": map.pitch,
        "focal_length": map.focal_length,
        "wavelength": map.wavelength,
        "center_offset": [map.center_offset.0, map.center_offset.1],
        "beta": cfg.spdc.beta,
        "idler_position": [cfg.spdc.idler_position.0, cfg.spdc.idler_position.1],
        "pair_wavelength": cfg.spdc.pair_wavelength(),
    })
}

fn export_map(cfg: &ScenarioConfig, dir: &Path, name: &str, map: &FarFieldMap) -> Result<()> {
    io::write_f32_grid(&dir.join(format!("{name}.f32")), &map.intensity, &map_sidecar(cfg, map, name))?;
    io::write_pgm(&dir.join(format!("{name}.pgm")), &map.intensity)
}

// ---------------------------------------------------------------------------
// Scenario runners
// ---------------------------------------------------------------------------

/// Run a scenario, exporting its bundle into `out_dir` and returning the
/// metrics document.
pub fn run_scenario(cfg: &ScenarioConfig, out_dir: &Path) -> Result<Value> {
    cfg.validate()?;
    fs::create_dir_all(out_dir)?;
    write_json(&out_dir.join("manifest.json"), &manifest(cfg)?)?;
    let metrics = match cfg.scenario {
        ScenarioKind::ScreenValidate => run_screen_validate(cfg, out_dir)?,
        ScenarioKind::Speckle => run_speckle(cfg, out_dir)?,
        ScenarioKind::OptimizeStatic => run_optimize_static(cfg, out_dir)?,
        ScenarioKind::OptimizeDynamic => run_optimize_dynamic(cfg, out_dir)?,
        ScenarioKind::HigherMode => run_higher_mode(cfg, out_dir)?,
    };
    write_json(&out_dir.join("metrics.json"), &metrics)?;
    Ok(metrics)
}

fn run_screen_validate(cfg: &ScenarioConfig, out_dir: &Path) -> Result<Value> {
    use rayon::prelude::*;
    ensure!(cfg.ensemble_size >= 2, Config, "screen-validate needs an ensemble of at least 2");
    let seeds: Vec<u64> = (0..cfg.ensemble_size)
        .map(|i| derive_seed2(cfg.seed, streams::ENSEMBLE, i as u64))
        .collect();
    let screens: Vec<PhaseScreen> = seeds
        .par_iter()
        .map(|&s| cfg.screen_recipe(s).generate())
        .collect::<Result<Vec<_>>>()?;

    let max_lag = (cfg.grid_size / 8).max(4);
    let curve = structure_function(&screens, max_lag)?;
    let r0 = cfg.screen_recipe(0).r0();
    let rows: Vec<(f64, f64, f64)> = curve
        .iter()
        .map(|&(r, d)| (r, d, 6.88 * (r / r0).powf(5.0 / 3.0)))
        .collect();
    io::write_curve_csv(&out_dir.join("structure_function.csv"), "r_m,d_estimated,d_kolmogorov", &rows)?;

    // band check on [4 dx, n dx / 8]
    let band: Vec<&(f64, f64, f64)> = rows
        .iter()
        .filter(|(r, _, _)| *r >= 4.0 * cfg.grid_pitch - 1e-15)
        .collect();
    let max_dev = band
        .iter()
        .map(|(_, d, t)| (d / t - 1.0).abs())
        .fold(0.0f64, f64::max);

    // isotropy on the same band
    let rows_axis = structure_function_axis(&screens[..screens.len().min(50)], max_lag, true)?;
    let cols_axis = structure_function_axis(&screens[..screens.len().min(50)], max_lag, false)?;
    let iso_dev = rows_axis
        .iter()
        .zip(&cols_axis)
        .filter(|((r, _), _)| *r >= 4.0 * cfg.grid_pitch - 1e-15)
        .map(|((_, a), (_, b))| (a / b - 1.0).abs())
        .fold(0.0f64, f64::max);

    // per-sample ensemble mean (zero-mean check)
    let mut mean_abs_max = 0.0f64;
    {
        let n = cfg.grid_size;
        let count = screens.len() as f64;
        let mut sums = vec![0.0f64; n * n];
        for s in &screens {
            for (sum, v) in sums.iter_mut().zip(s.phase.data()) {
                *sum += v;
            }
        }
        let mut var_sum = 0.0f64;
        for s in &screens {
            for (v, sum) in s.phase.data().iter().zip(&sums) {
                let mean = sum / count;
                var_sum += (v - mean) * (v - mean);
            }
        }
        let per_sample_var = var_sum / (count * (n * n) as f64);
        let se = (per_sample_var / count).sqrt();
        for sum in &sums {
            mean_abs_max = mean_abs_max.max((sum / count).abs() / se);
        }
    }

    let sample = &screens[0];
    io::write_f32_grid(
        &out_dir.join("sample_screen.f32"),
        &sample.phase,
        &screen_sidecar(cfg, &sample.recipe),
    )?;

    Ok(json!({
        "scenario": cfg.scenario.name(),
        "ensemble_size": cfg.ensemble_size,
        "r0_m": r0,
        "band_m": [4.0 * cfg.grid_pitch, max_lag as f64 * cfg.grid_pitch],
        "max_abs_relative_deviation": max_dev,
        "band_tolerance": 0.15,
        "band_pass": max_dev <= 0.15,
        "isotropy_max_deviation": iso_dev,
        "zero_mean_max_sigma": mean_abs_max,
        "seeds": seeds,
    }))
}

fn contrast(values: &Grid<f64>) -> f64 {
    values.max_value() / values.mean()
}

fn run_speckle(cfg: &ScenarioConfig, out_dir: &Path) -> Result<Value> {
    let stage = Stage::build(cfg)?;
    let screen = cfg.screen_recipe(derive_seed(cfg.seed, streams::SCREEN)).generate()?;
    io::write_f32_grid(&out_dir.join("screen.f32"), &screen.phase, &screen_sidecar(cfg, &screen.recipe))?;

    let pump_map = stage.pump_map(cfg, None, Some(&screen))?;
    export_map(cfg, out_dir, "pump_speckle", &pump_map)?;

    let coin_map = stage.coincidence_rate_map(cfg, None, Some(&screen))?;
    export_map(cfg, out_dir, "coincidence_speckle", &coin_map)?;

    // camera frame of the pump speckle
    let mut det = cfg.detection.clone();
    det.seed = derive_seed(cfg.seed, streams::CAMERA);
    let frame = camera_capture(&pump_map, &det, false)?;
    io::write_counts_csv(&out_dir.join("pump_camera.csv"), &frame)?;

    // coincidence scan at the speckle exposure, accidental-corrected
    let mut scan_det = cfg.detection.clone();
    scan_det.exposure_per_point = cfg.exposures.speckle;
    scan_det.seed = derive_seed(cfg.seed, streams::SCAN);
    let raw = scan_coincidences(&coin_map, &scan_det)?;
    let corrected = subtract_accidentals(&raw, &scan_det)?;
    io::write_counts_csv(&out_dir.join("coincidence_scan_raw.csv"), &raw)?;
    io::write_counts_csv(&out_dir.join("coincidence_scan_corrected.csv"), &corrected)?;

    // singles insets
    let singles = singles_envelope(&cfg.spdc, cfg.detection.scan_points, cfg.detection.scan_step, 1.0)?;
    let singles_scan = scan_singles(&singles, &scan_det)?;
    io::write_counts_csv(&out_dir.join("singles_scan.csv"), &singles_scan)?;

    // scale-two correlation on the feedback grid (congruent arrays)
    let doubled = rescale_pattern(&pump_map, 2.0)?;
    let eff = effective_pair_field(&stage.pump, None, Some(&screen), cfg.spdc.beta)?;
    let coin_unit = coincidence_pattern_on_window(&eff, cfg.focal_length, &cfg.spdc, 1)?;
    let rho_beta = pearson(&doubled.intensity, &coin_unit.intensity)?;
    let eff_unit = effective_pair_field(&stage.pump, None, Some(&screen), 1.0)?;
    let coin_ideal = coincidence_pattern_on_window(&eff_unit, cfg.focal_length, &cfg.spdc, 1)?;
    let rho_unit = pearson(&doubled.intensity, &coin_ideal.intensity)?;

    // speckle contrast in rate vs corrected-count domain over the scan
    let rates = aperture_rates(&coin_map, &scan_det)?;
    let contrast_rate = contrast(&rates);
    let contrast_counts = contrast(&corrected.rates());

    Ok(json!({
        "scenario": cfg.scenario.name(),
        "beta": cfg.spdc.beta,
        "pearson_scale2": rho_beta,
        "pearson_scale2_beta1": rho_unit,
        "speckle_contrast_rate": contrast_rate,
        "speckle_contrast_counts": contrast_counts,
        "scan_exposure_s": cfg.exposures.speckle,
        "seeds": { "master": cfg.seed },
    }))
}

/// Scan + correct a coincidence rate map at the given exposure.
fn scan_corrected(
    cfg: &ScenarioConfig,
    map: &FarFieldMap,
    exposure: f64,
    seed: u64,
) -> Result<(CountMap, CountMap)> {
    let mut det = cfg.detection.clone();
    det.exposure_per_point = exposure;
    det.seed = seed;
    let raw = scan_coincidences(map, &det)?;
    let corrected = subtract_accidentals(&raw, &det)?;
    Ok((raw, corrected))
}

struct StaticOutcome {
    state: ControlState,
    metrics: Value,
}

fn optimize_static_core(cfg: &ScenarioConfig, out_dir: &Path) -> Result<StaticOutcome> {
    let stage = Stage::build(cfg)?;
    let screen = cfg.screen_recipe(derive_seed(cfg.seed, streams::SCREEN)).generate()?;
    io::write_f32_grid(&out_dir.join("screen.f32"), &screen.phase, &screen_sidecar(cfg, &screen.recipe))?;

    // optimization
    let feedback = stage.feedback(cfg, Some(&screen));
    let tiling = stage.tiling(cfg)?;
    let state = run_optimization(
        ControlState::new(tiling),
        &feedback,
        cfg.shaper.budget,
        cfg.shaper.target_enhancement,
        cfg.shaper.n_phases,
        derive_seed(cfg.seed, streams::OPTIMIZER),
    )?;
    io::write_trace_csv(&out_dir.join("trace.csv"), &state.trace)?;
    let control = state.phase_grid();
    io::write_f32_grid(
        &out_dir.join("control_phase.f32"),
        &control,
        &json!({
            "n": cfg.grid_size,
            "dx": cfg.grid_pitch,
            "segments_per_side": cfg.shaper.segments_per_side,
            "region_m": cfg.segment_region(),
            "iterations": state.iterations,
            "measurements": state.measurements,
        }),
    )?;

    // panel maps: reference (no screen), speckle, optimized
    let pump_panels = [
        ("pump_reference", stage.pump_map(cfg, None, None)?),
        ("pump_speckle", stage.pump_map(cfg, None, Some(&screen))?),
        ("pump_optimized", stage.pump_map(cfg, Some(&control), Some(&screen))?),
    ];
    let coin_panels = [
        ("coincidence_reference", stage.coincidence_rate_map(cfg, None, None)?),
        ("coincidence_speckle", stage.coincidence_rate_map(cfg, None, Some(&screen))?),
        ("coincidence_optimized", stage.coincidence_rate_map(cfg, Some(&control), Some(&screen))?),
    ];
    for (name, map) in pump_panels.iter().chain(coin_panels.iter()) {
        export_map(cfg, out_dir, name, map)?;
    }

    // pump metrics in the camera window (noiseless rates)
    let mut cam = cfg.detection.clone();
    cam.seed = derive_seed(cfg.seed, streams::CAMERA);
    let cam_ref = camera_capture(&pump_panels[0].1, &cam, true)?;
    let cam_speckle = camera_capture(&pump_panels[1].1, &cam, true)?;
    let cam_opt = camera_capture(&pump_panels[2].1, &cam, true)?;
    let pump_mask_cam = target_mask(&cam_ref.values)?;
    let eta_pump = enhancement(&cam_speckle.values, &cam_opt.values, &pump_mask_cam)?;
    let eff_pump = efficiency(&cam_opt.values, &cam_ref.values, &pump_mask_cam)?;
    io::write_counts_csv(&out_dir.join("pump_camera_reference.csv"), &cam_ref)?;
    io::write_counts_csv(&out_dir.join("pump_camera_speckle.csv"), &cam_speckle)?;
    io::write_counts_csv(&out_dir.join("pump_camera_optimized.csv"), &cam_opt)?;

    // coincidence metrics from accidental-corrected scan rates
    let (ref_raw, ref_cor) = scan_corrected(
        cfg,
        &coin_panels[0].1,
        cfg.exposures.reference,
        derive_seed2(cfg.seed, streams::SCAN, 0),
    )?;
    let (spk_raw, spk_cor) = scan_corrected(
        cfg,
        &coin_panels[1].1,
        cfg.exposures.speckle,
        derive_seed2(cfg.seed, streams::SCAN, 1),
    )?;
    let (opt_raw, opt_cor) = scan_corrected(
        cfg,
        &coin_panels[2].1,
        cfg.exposures.optimized,
        derive_seed2(cfg.seed, streams::SCAN, 2),
    )?;
    for (name, map) in [
        ("coincidence_scan_reference", &ref_raw),
        ("coincidence_scan_speckle", &spk_raw),
        ("coincidence_scan_optimized", &opt_raw),
    ] {
        io::write_counts_csv(&out_dir.join(format!("{name}.csv")), map)?;
    }
    // noise-dominated scans can leave a non-positive corrected speckle
    // mean; count-domain figures are then recorded as null
    let coin_mask_scan = target_mask(&ref_cor.rates())?;
    let eta_spdc = metric_or_null(enhancement(&spk_cor.rates(), &opt_cor.rates(), &coin_mask_scan));
    let eff_spdc = metric_or_null(efficiency(&opt_cor.rates(), &ref_cor.rates(), &coin_mask_scan));

    // ideal (pattern-domain) figures for reference
    let coin_mask_rate = target_mask(&aperture_rates(&coin_panels[0].1, &cfg.detection)?)?;
    let eta_spdc_ideal = enhancement(
        &aperture_rates(&coin_panels[1].1, &cfg.detection)?,
        &aperture_rates(&coin_panels[2].1, &cfg.detection)?,
        &coin_mask_rate,
    )?;
    let eff_spdc_ideal = efficiency(
        &aperture_rates(&coin_panels[2].1, &cfg.detection)?,
        &aperture_rates(&coin_panels[0].1, &cfg.detection)?,
        &coin_mask_rate,
    )?;

    // singles insets: fixed envelope, dimmed by the shaped-pattern loss
    let singles_pre = singles_envelope(&cfg.spdc, cfg.detection.scan_points, cfg.detection.scan_step, 1.0)?;
    let singles_post = singles_envelope(
        &cfg.spdc,
        cfg.detection.scan_points,
        cfg.detection.scan_step,
        cfg.slm1_transmission_shaped,
    )?;
    let mut singles_det = cfg.detection.clone();
    singles_det.exposure_per_point = cfg.exposures.optimized;
    singles_det.seed = derive_seed2(cfg.seed, streams::SCAN, 3);
    io::write_counts_csv(&out_dir.join("singles_scan_reference.csv"), &scan_singles(&singles_pre, &singles_det)?)?;
    io::write_counts_csv(&out_dir.join("singles_scan_optimized.csv"), &scan_singles(&singles_post, &singles_det)?)?;

    // scale-two correlation before optimization
    let doubled = rescale_pattern(&pump_panels[1].1, 2.0)?;
    let eff_field = effective_pair_field(&stage.pump, None, Some(&screen), cfg.spdc.beta)?;
    let coin_unit = coincidence_pattern_on_window(&eff_field, cfg.focal_length, &cfg.spdc, 1)?;
    let pearson_scale2 = pearson(&doubled.intensity, &coin_unit.intensity)?;

    let metrics = json!({
        "scenario": cfg.scenario.name(),
        "feedback_mode": serde_json::to_value(cfg.shaper.feedback)?,
        "beta": cfg.spdc.beta,
        "eta_pump": eta_pump,
        "efficiency_pump": eff_pump,
        "eta_spdc": eta_spdc,
        "efficiency_spdc": eff_spdc,
        "eta_spdc_ideal": eta_spdc_ideal,
        "efficiency_spdc_ideal": eff_spdc_ideal,
        "pearson_scale2": pearson_scale2,
        "iterations": state.iterations,
        "measurements": state.measurements,
        "masks": {
            "pump_camera_px": pump_mask_cam.pixel_count,
            "coincidence_scan_px": coin_mask_scan.pixel_count,
            "pump_far_px": stage.pump_mask.pixel_count,
            "coincidence_feedback_px": stage.coin_mask_feedback.pixel_count,
        },
        "budgets": { "measurements": cfg.shaper.budget, "n_phases": cfg.shaper.n_phases },
        "exposures_s": serde_json::to_value(&cfg.exposures)?,
        "singles_range_pre": singles_range(&singles_pre),
        "singles_range_post": singles_range(&singles_post),
        "seeds": { "master": cfg.seed },
    });
    Ok(StaticOutcome { state, metrics })
}

fn metric_or_null(value: Result<f64>) -> Value {
    match value {
        Ok(v) if v.is_finite() => json!(v),
        _ => Value::Null,
    }
}

fn singles_range(envelope: &FarFieldMap) -> Value {
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for v in envelope.intensity.data() {
        min = min.min(*v);
        max = max.max(*v);
    }
    json!([min, max])
}

fn run_optimize_static(cfg: &ScenarioConfig, out_dir: &Path) -> Result<Value> {
    Ok(optimize_static_core(cfg, out_dir)?.metrics)
}

fn run_higher_mode(cfg: &ScenarioConfig, out_dir: &Path) -> Result<Value> {
    let outcome = optimize_static_core(cfg, out_dir)?;
    let stage = Stage::build(cfg)?;
    let screen = cfg.screen_recipe(derive_seed(cfg.seed, streams::SCREEN)).generate()?;

    let stepped = add_mode_overlay(&outcome.state, ModeOverlay::PiStepHorizontal);
    let control = stepped.phase_grid();

    // high-resolution coincidence pattern of the stepped state
    let eff = effective_pair_field(&stage.pump, Some(&control), Some(&screen), cfg.spdc.beta)?;
    let fine = coincidence_pattern_on_window(&eff, cfg.focal_length, &cfg.spdc, cfg.highmode_resolve)?;
    export_map(cfg, out_dir, "coincidence_higher_mode", &fine)?;
    let pump_map = stage.pump_map(cfg, Some(&control), Some(&screen))?;
    export_map(cfg, out_dir, "pump_higher_mode", &pump_map)?;

    // on-axis null against the lobe peak
    let n = fine.n();
    let on_axis = *fine.intensity.at(n / 2, n / 2);
    let lobe_peak = fine.intensity.max_value();
    let null_fraction = on_axis / lobe_peak;

    let (_, corrected) = scan_corrected(
        cfg,
        &scale_map(&fine, stage.scan_rate_scale),
        cfg.exposures.optimized,
        derive_seed2(cfg.seed, streams::SCAN, 4),
    )?;
    io::write_counts_csv(&out_dir.join("coincidence_scan_higher_mode.csv"), &corrected)?;

    let mut metrics = outcome.metrics;
    metrics["scenario"] = json!(cfg.scenario.name());
    metrics["null_fraction"] = json!(null_fraction);
    metrics["lobe_peak"] = json!(lobe_peak);
    metrics["overlay"] = json!("pi-step-horizontal");
    Ok(metrics)
}

fn run_optimize_dynamic(cfg: &ScenarioConfig, out_dir: &Path) -> Result<Value> {
    let stage = Stage::build(cfg)?;
    let dyn_cfg = &cfg.dynamics;
    let total_steps = dyn_cfg.idle_steps + dyn_cfg.optimizing_steps + dyn_cfg.frozen_steps;
    ensure!(total_steps > 0, Config, "dynamic scenario needs at least one step");
    ensure!(
        dyn_cfg.optimizing_steps > 0 && dyn_cfg.frozen_steps > 0,
        Config,
        "dynamic scenario needs optimizing and frozen phases"
    );

    // master screen large enough for the full drift
    let total_shift = total_steps * dyn_cfg.shift_per_step;
    let master_n = (cfg.grid_size + total_shift).next_power_of_two();
    let master = ScreenRecipe::new(
        cfg.turbulence.clone(),
        master_n,
        cfg.grid_pitch,
        derive_seed(cfg.seed, streams::SCREEN),
    )
    .with_scale(cfg.scale_factor)
    .generate()?;
    let schedule: Vec<(i64, i64)> = (0..total_steps)
        .map(|t| (0i64, (t * dyn_cfg.shift_per_step) as i64))
        .collect();
    let flow = FrozenFlow::new(master, cfg.grid_size, schedule)?;
    io::write_f32_grid(
        &out_dir.join("master_screen.f32"),
        &flow.master().phase,
        &screen_sidecar(cfg, &flow.master().recipe),
    )?;

    let tiling = stage.tiling(cfg)?;
    let mut state = ControlState::new(tiling);
    let mut rng = rng_from_seed(derive_seed(cfg.seed, streams::OPTIMIZER));
    let r0 = cfg.screen_recipe(0).r0();

    let freeze_step = dyn_cfg.idle_steps + dyn_cfg.optimizing_steps;
    let mut series: Vec<(usize, f64, f64, f64, f64, bool)> = Vec::new();
    for step in 0..total_steps {
        let screen = flow.view(step)?;
        let optimizing = step >= dyn_cfg.idle_steps && step < freeze_step;
        if optimizing {
            let feedback = stage.feedback(cfg, Some(&screen));
            for _ in 0..dyn_cfg.iterations_per_shift {
                partition_iteration(&mut state, &feedback, cfg.shaper.n_phases, &mut rng)?;
            }
        }
        // monitors: pump target sum (noiseless) and the single-pixel
        // coincidence rate with a counted sample
        let control = state.phase_grid();
        let pump_map = stage.pump_map(cfg, Some(&control), Some(&screen))?;
        let pump_value = stage.pump_mask.masked_sum(&pump_map.intensity)?;
        let coin_map = stage.coincidence_rate_map(cfg, Some(&control), Some(&screen))?;
        let coin_rate = aperture_rate_at_center(&coin_map, &cfg.detection)?;
        let lambda = (coin_rate + cfg.detection.accidental_rate) * dyn_cfg.monitor_exposure;
        let mut monitor_rng = rng_from_seed(derive_seed2(cfg.seed, streams::MONITOR, step as u64));
        let counts = if lambda > 0.0 {
            use rand_distr::Distribution;
            rand_distr::Poisson::new(lambda).expect("positive lambda").sample(&mut monitor_rng)
        } else {
            0.0
        };
        let shift_m = (step * dyn_cfg.shift_per_step) as f64 * cfg.grid_pitch;
        series.push((step, shift_m, pump_value, coin_rate, counts, optimizing));
    }

    // export the time series
    {
        use std::io::Write;
        let mut w = std::io::BufWriter::new(fs::File::create(out_dir.join("dynamic_trace.csv"))?);
        writeln!(w, "step,shift_m,shift_over_r0,pump_target,coincidence_rate,coincidence_counts,optimizing")?;
        for (step, shift, pump, rate, counts, opt) in &series {
            writeln!(
                w,
                "{step},{shift:.9e},{:.6},{pump:.9e},{rate:.9e},{counts},{}",
                shift / r0,
                *opt as u8
            )?;
        }
        w.flush()?;
    }
    io::write_trace_csv(&out_dir.join("trace.csv"), &state.trace)?;

    // plateau: mean monitor rate over the closing optimizing steps
    let plateau_window = dyn_cfg.optimizing_steps.min(5);
    let plateau_pump = series[freeze_step - plateau_window..freeze_step]
        .iter()
        .map(|s| s.2)
        .sum::<f64>()
        / plateau_window as f64;
    let plateau_coin = series[freeze_step - plateau_window..freeze_step]
        .iter()
        .map(|s| s.3)
        .sum::<f64>()
        / plateau_window as f64;
    let frozen = &series[freeze_step..];
    let mean_frozen_pump = frozen.iter().map(|s| s.2).sum::<f64>() / frozen.len() as f64;
    let mean_frozen_coin = frozen.iter().map(|s| s.3).sum::<f64>() / frozen.len() as f64;
    let opt_slice = &series[dyn_cfg.idle_steps..freeze_step];
    let mean_opt_pump = opt_slice.iter().map(|s| s.2).sum::<f64>() / opt_slice.len() as f64;
    let mean_opt_coin = opt_slice.iter().map(|s| s.3).sum::<f64>() / opt_slice.len() as f64;

    // first post-freeze shift (measured from the freeze point) where the
    // coincidence rate falls below half its optimized plateau
    let freeze_shift = series[freeze_step - 1].1;
    let decay_shift = frozen
        .iter()
        .find(|s| s.3 < 0.5 * plateau_coin)
        .map(|s| s.1 - freeze_shift);

    Ok(json!({
        "scenario": cfg.scenario.name(),
        "feedback_mode": serde_json::to_value(cfg.shaper.feedback)?,
        "r0_m": r0,
        "steps": { "idle": dyn_cfg.idle_steps, "optimizing": dyn_cfg.optimizing_steps, "frozen": dyn_cfg.frozen_steps },
        "iterations_per_shift": dyn_cfg.iterations_per_shift,
        "shift_per_step_samples": dyn_cfg.shift_per_step,
        "optimize_on_step": dyn_cfg.idle_steps,
        "optimize_off_step": freeze_step,
        "plateau_pump": plateau_pump,
        "plateau_coincidence_rate": plateau_coin,
        "eta_dynamic_pump": mean_opt_pump / mean_frozen_pump,
        "eta_dynamic_spdc": mean_opt_coin / mean_frozen_coin,
        "decay_half_shift_m": decay_shift,
        "decay_half_shift_over_r0": decay_shift.map(|s| s / r0),
        "measurements": state.measurements,
        "seeds": { "master": cfg.seed },
    }))
}
