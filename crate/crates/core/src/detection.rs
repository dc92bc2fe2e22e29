//! Photon-counting measurement records: fiber scans, accidental background,
//! camera pixelization and Poisson shot noise.
//!
//! Every sampled point draws from its own seeded generator derived from the
//! config seed and the point index, so maps are reproducible and independent
//! of evaluation order.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::field_optics::FarFieldMap;
use crate::grid::Grid;
use crate::rng::{derive_seed2, rng_from_seed, streams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionConfig {
    /// Signal-detector scan step (m).
    pub scan_step: f64,
    /// Scan points per axis.
    pub scan_points: usize,
    /// Collection-fiber core diameter (m); integration is a hard circular
    /// top-hat of this diameter.
    pub collection_diameter: f64,
    /// Coincidence exposure per scan point (s).
    pub exposure_per_point: f64,
    /// Flat accidental-coincidence rate added everywhere (counts/s).
    pub accidental_rate: f64,
    /// Camera pixel size (m).
    pub camera_pixel: f64,
    /// Camera pixels per axis.
    pub camera_points: usize,
    /// Camera exposure per frame (s).
    pub camera_exposure: f64,
    /// Counts per intensity-unit-second; metrics are ratio-based so the
    /// absolute value cancels.
    pub camera_gain: f64,
    /// Coincidence window (s); recorded metadata, no timing model.
    pub coincidence_window: f64,
    pub seed: u64,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        DetectionConfig {
            scan_step: 25e-6,
            scan_points: 41,
            collection_diameter: 50e-6,
            exposure_per_point: 1.0,
            accidental_rate: 0.14,
            camera_pixel: 4.8e-6,
            camera_points: 215,
            camera_exposure: 200e-6,
            camera_gain: 1.0,
            coincidence_window: 4e-9,
            seed: 0,
        }
    }
}

impl DetectionConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.scan_step > 0.0
                && self.collection_diameter > 0.0
                && self.camera_pixel > 0.0
                && self.camera_exposure > 0.0,
            Domain,
            "detection lengths and times must be positive"
        );
        ensure!(
            self.exposure_per_point >= 0.0 && self.accidental_rate >= 0.0,
            Domain,
            "exposure and accidental rate must be non-negative"
        );
        ensure!(
            self.scan_points > 0 && self.camera_points > 0,
            Domain,
            "scan and camera grids must be non-empty"
        );
        Ok(())
    }
}

/// Counts on a detector grid. Values are integers as sampled; accidental
/// correction subtracts the expected background and may leave small
/// fractional or negative values, recorded by the `corrected` flag.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CountMap {
    pub values: Grid<f64>,
    /// Grid step (m) between neighbouring points.
    pub step: f64,
    /// Physical coordinate of the grid centre.
    pub center: (f64, f64),
    /// Exposure per point (s).
    pub exposure: f64,
    pub corrected: bool,
    pub seed: u64,
}

impl CountMap {
    pub fn n(&self) -> usize {
        self.values.n()
    }

    /// Physical (y, x) of a grid point.
    pub fn coordinate(&self, row: usize, col: usize) -> (f64, f64) {
        (
            (row as f64 - ((self.n() - 1) as f64) / 2.0) * self.step + self.center.0,
            (col as f64 - ((self.n() - 1) as f64) / 2.0) * self.step + self.center.1,
        )
    }

    /// Per-point rates, counts / exposure.
    pub fn rates(&self) -> Grid<f64> {
        let exposure = self.exposure;
        self.values.map(|v| v / exposure)
    }
}

/// Noiseless per-scan-point signal rates: the pattern summed over the
/// collection aperture centred on each scan point (no accidentals). Pattern
/// values are interpreted as rates per pattern pixel.
pub fn aperture_rates(pattern: &FarFieldMap, cfg: &DetectionConfig) -> Result<Grid<f64>> {
    cfg.validate()?;
    let points = cfg.scan_points;
    let mut rates = Grid::zeros(points);
    let radius = cfg.collection_diameter / 2.0;
    let n = pattern.n() as i64;
    let half = (points - 1) as f64 / 2.0;
    for r in 0..points {
        let y = (r as f64 - half) * cfg.scan_step + pattern.center_offset.0;
        for c in 0..points {
            let x = (c as f64 - half) * cfg.scan_step + pattern.center_offset.1;
            // bounding box of the aperture in pattern indices
            let to_row = |yy: f64| (yy - pattern.center_offset.0) / pattern.pitch + (pattern.n() / 2) as f64;
            let (r_lo, r_hi) = (to_row(y - radius).floor() as i64, to_row(y + radius).ceil() as i64);
            let (c_lo, c_hi) = (to_row(x - radius).floor() as i64, to_row(x + radius).ceil() as i64);
            ensure!(
                r_lo >= 0 && c_lo >= 0 && r_hi < n && c_hi < n,
                Range,
                "scan aperture at ({y:.3e}, {x:.3e}) leaves the pattern"
            );
            let mut acc = 0.0;
            for pr in r_lo..=r_hi {
                for pc in c_lo..=c_hi {
                    let (py, px) = pattern.coordinate(pr as usize, pc as usize);
                    if (py - y).powi(2) + (px - x).powi(2) <= radius * radius {
                        acc += pattern.intensity.at(pr as usize, pc as usize);
                    }
                }
            }
            *rates.at_mut(r, c) = acc;
        }
    }
    Ok(rates)
}

fn poisson_draw(rng: &mut impl Rng, lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 0.0;
    }
    let dist = Poisson::new(lambda).expect("positive finite lambda");
    dist.sample(rng)
}

/// Scan the coincidence pattern: per point, integrate over the collection
/// aperture, add the accidental rate, multiply by the exposure and draw a
/// Poisson sample. Deterministic given the config seed.
pub fn scan_coincidences(pattern: &FarFieldMap, cfg: &DetectionConfig) -> Result<CountMap> {
    let rates = aperture_rates(pattern, cfg)?;
    let points = cfg.scan_points;
    let mut values = Grid::zeros(points);
    for r in 0..points {
        for c in 0..points {
            let lambda = (rates.at(r, c) + cfg.accidental_rate) * cfg.exposure_per_point;
            let mut rng = rng_from_seed(derive_seed2(cfg.seed, streams::SCAN, (r * points + c) as u64));
            *values.at_mut(r, c) = poisson_draw(&mut rng, lambda);
        }
    }
    Ok(CountMap {
        values,
        step: cfg.scan_step,
        center: pattern.center_offset,
        exposure: cfg.exposure_per_point,
        corrected: false,
        seed: cfg.seed,
    })
}

/// Scan a singles envelope, whose values are already rates at the detector
/// position (no aperture integration).
pub fn scan_singles(envelope: &FarFieldMap, cfg: &DetectionConfig) -> Result<CountMap> {
    cfg.validate()?;
    let points = cfg.scan_points;
    let n = envelope.n() as i64;
    let half = (points - 1) as f64 / 2.0;
    let mut values = Grid::zeros(points);
    for r in 0..points {
        for c in 0..points {
            let y = (r as f64 - half) * cfg.scan_step + envelope.center_offset.0;
            let x = (c as f64 - half) * cfg.scan_step + envelope.center_offset.1;
            let pr = ((y - envelope.center_offset.0) / envelope.pitch + (envelope.n() / 2) as f64).round() as i64;
            let pc = ((x - envelope.center_offset.1) / envelope.pitch + (envelope.n() / 2) as f64).round() as i64;
            ensure!(pr >= 0 && pc >= 0 && pr < n && pc < n, Range, "scan leaves the singles envelope");
            let lambda = envelope.intensity.at(pr as usize, pc as usize) * cfg.exposure_per_point;
            let mut rng = rng_from_seed(derive_seed2(
                cfg.seed,
                streams::SCAN,
                (points * points + r * points + c) as u64,
            ));
            *values.at_mut(r, c) = poisson_draw(&mut rng, lambda);
        }
    }
    Ok(CountMap {
        values,
        step: cfg.scan_step,
        center: envelope.center_offset,
        exposure: cfg.exposure_per_point,
        corrected: false,
        seed: cfg.seed,
    })
}

/// Subtract the expected accidental background accidental_rate * exposure
/// from every point and set the corrected flag.
pub fn subtract_accidentals(map: &CountMap, cfg: &DetectionConfig) -> Result<CountMap> {
    ensure!(!map.corrected, State, "count map is already accidental-corrected");
    let background = cfg.accidental_rate * map.exposure;
    Ok(CountMap {
        values: map.values.map(|v| v - background),
        step: map.step,
        center: map.center,
        exposure: map.exposure,
        corrected: true,
        seed: map.seed,
    })
}

/// Bin the pattern onto the camera pixel grid, scale by exposure and gain,
/// and Poisson-sample unless `noiseless`. The camera covers its own window
/// centred on the pattern; pattern pixels are accumulated into the camera
/// pixel containing them (the pattern pitch must not exceed the camera
/// pixel by more than 2x, or samples would straddle bins).
pub fn camera_capture(pattern: &FarFieldMap, cfg: &DetectionConfig, noiseless: bool) -> Result<CountMap> {
    cfg.validate()?;
    let points = cfg.camera_points;
    let half_window = points as f64 * cfg.camera_pixel / 2.0;
    ensure!(
        half_window <= pattern.pitch * (pattern.n() / 2) as f64,
        Range,
        "camera window {:.3e} m exceeds the pattern extent",
        2.0 * half_window
    );
    let mut values = Grid::zeros(points);
    if pattern.pitch <= cfg.camera_pixel {
        // bin down: accumulate pattern pixels into camera pixels
        for pr in 0..pattern.n() {
            for pc in 0..pattern.n() {
                let (y, x) = pattern.coordinate(pr, pc);
                let (ry, rx) = (y - pattern.center_offset.0, x - pattern.center_offset.1);
                let cr = ((ry + half_window) / cfg.camera_pixel).floor();
                let cc = ((rx + half_window) / cfg.camera_pixel).floor();
                if cr >= 0.0 && cc >= 0.0 && (cr as usize) < points && (cc as usize) < points {
                    *values.at_mut(cr as usize, cc as usize) += pattern.intensity.at(pr, pc);
                }
            }
        }
    } else {
        // interpolate: sample the pattern at camera-pixel centres, scaled by
        // the area ratio so totals stay comparable
        let area_ratio = (cfg.camera_pixel / pattern.pitch).powi(2);
        for r in 0..points {
            for c in 0..points {
                let y = (r as f64 + 0.5) * cfg.camera_pixel - half_window;
                let x = (c as f64 + 0.5) * cfg.camera_pixel - half_window;
                let pr = y / pattern.pitch + (pattern.n() / 2) as f64;
                let pc = x / pattern.pitch + (pattern.n() / 2) as f64;
                *values.at_mut(r, c) = bilinear_clamped(&pattern.intensity, pr, pc) * area_ratio;
            }
        }
    }
    let scale = cfg.camera_exposure * cfg.camera_gain;
    for v in values.data_mut() {
        *v *= scale;
    }
    if !noiseless {
        for (idx, v) in values.data_mut().iter_mut().enumerate() {
            let mut rng = rng_from_seed(derive_seed2(cfg.seed, streams::CAMERA, idx as u64));
            *v = poisson_draw(&mut rng, *v);
        }
    }
    Ok(CountMap {
        values,
        step: cfg.camera_pixel,
        center: pattern.center_offset,
        exposure: cfg.camera_exposure,
        corrected: false,
        seed: cfg.seed,
    })
}

fn bilinear_clamped(grid: &Grid<f64>, r: f64, c: f64) -> f64 {
    let n = grid.n() as i64;
    let (r0, c0) = (r.floor(), c.floor());
    let (fr, fc) = (r - r0, c - c0);
    let mut acc = 0.0;
    for (ir, wr) in [(r0 as i64, 1.0 - fr), (r0 as i64 + 1, fr)] {
        for (ic, wc) in [(c0 as i64, 1.0 - fc), (c0 as i64 + 1, fc)] {
            if ir >= 0 && ir < n && ic >= 0 && ic < n {
                acc += wr * wc * grid.at(ir as usize, ic as usize);
            }
        }
    }
    acc
}
