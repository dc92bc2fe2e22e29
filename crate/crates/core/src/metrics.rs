//! Target masks, enhancement/efficiency figures and statistical estimators.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::grid::Grid;
use crate::turbulence::PhaseScreen;

/// Boolean detector-plane mask derived from an unscattered reference
/// pattern: the pixels at or above one quarter of the maximum.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TargetMask {
    pub mask: Grid<bool>,
    pub pixel_count: usize,
}

impl TargetMask {
    pub fn n(&self) -> usize {
        self.mask.n()
    }

    pub fn indices(&self) -> Vec<(usize, usize)> {
        let n = self.mask.n();
        let mut out = Vec::with_capacity(self.pixel_count);
        for r in 0..n {
            for c in 0..n {
                if *self.mask.at(r, c) {
                    out.push((r, c));
                }
            }
        }
        out
    }

    /// Sum of a congruent pattern over the masked pixels.
    pub fn masked_sum(&self, pattern: &Grid<f64>) -> Result<f64> {
        ensure!(
            pattern.n() == self.mask.n(),
            Shape,
            "pattern grid {} vs mask grid {}",
            pattern.n(),
            self.mask.n()
        );
        Ok(self
            .mask
            .data()
            .iter()
            .zip(pattern.data())
            .filter(|(m, _)| **m)
            .map(|(_, v)| *v)
            .sum())
    }
}

/// Pixels of the reference at or above one quarter of its maximum.
pub fn target_mask(reference: &Grid<f64>) -> Result<TargetMask> {
    let max = reference.max_value();
    ensure!(
        max > 0.0 && max.is_finite(),
        Domain,
        "target mask needs a reference with a positive maximum"
    );
    let threshold = max / 4.0;
    let mask = reference.map(|v| *v >= threshold);
    let pixel_count = mask.data().iter().filter(|m| **m).count();
    Ok(TargetMask { mask, pixel_count })
}

/// Enhancement eta: the masked sum after optimization divided by the mean
/// per-pixel signal of the speckle pattern before optimization times the
/// mask pixel count.
pub fn enhancement(before: &Grid<f64>, after: &Grid<f64>, mask: &TargetMask) -> Result<f64> {
    ensure!(
        before.n() == after.n() && before.n() == mask.n(),
        Shape,
        "enhancement requires congruent patterns and mask"
    );
    let speckle_mean = before.mean();
    let denom = speckle_mean * mask.pixel_count as f64;
    ensure!(denom > 0.0, Domain, "zero speckle mean in enhancement denominator");
    Ok(mask.masked_sum(after)? / denom)
}

/// Fraction of the unscattered masked signal recovered after optimization;
/// both patterns must share a normalization (rates, not raw counts at
/// different exposures).
pub fn efficiency(after: &Grid<f64>, unscattered: &Grid<f64>, mask: &TargetMask) -> Result<f64> {
    ensure!(
        after.n() == unscattered.n() && after.n() == mask.n(),
        Shape,
        "efficiency requires congruent patterns and mask"
    );
    let denom = mask.masked_sum(unscattered)?;
    ensure!(denom > 0.0, Domain, "zero unscattered signal over the mask");
    Ok(mask.masked_sum(after)? / denom)
}

/// Centered product-moment correlation over all pixels.
pub fn pearson(a: &Grid<f64>, b: &Grid<f64>) -> Result<f64> {
    ensure!(a.n() == b.n(), Shape, "pearson requires congruent grids");
    let (ma, mb) = (a.mean(), b.mean());
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.data().iter().zip(b.data()) {
        let (dx, dy) = (x - ma, y - mb);
        cov += dx * dy;
        va += dx * dx;
        vb += dy * dy;
    }
    ensure!(va > 0.0 && vb > 0.0, Domain, "pearson requires nonzero variance");
    Ok(cov / (va.sqrt() * vb.sqrt()))
}

/// Ensemble phase structure function D(r) = <(phi(x + r) - phi(x))^2> at
/// integer sample lags 1..=max_lag, averaged over both axis-aligned
/// orientations, all positions and the whole ensemble. Returns (r, D) pairs
/// in metres and rad^2.
pub fn structure_function(screens: &[PhaseScreen], max_lag: usize) -> Result<Vec<(f64, f64)>> {
    ensure!(screens.len() >= 2, Domain, "structure function needs at least two screens");
    let n = screens[0].n();
    let dx = screens[0].dx;
    ensure!(
        screens.iter().all(|s| s.n() == n && s.dx == dx),
        Shape,
        "ensemble screens must share grid and pitch"
    );
    ensure!(max_lag < n, Range, "max lag {} must be below grid size {}", max_lag, n);

    let partials: Vec<Vec<f64>> = screens
        .par_iter()
        .map(|screen| {
            let phi = screen.phase.data();
            let mut sums = vec![0.0f64; max_lag];
            for (li, sum) in sums.iter_mut().enumerate() {
                let lag = li + 1;
                let mut acc = 0.0;
                // along rows (x direction)
                for r in 0..n {
                    let row = &phi[r * n..(r + 1) * n];
                    for c in 0..n - lag {
                        let d = row[c + lag] - row[c];
                        acc += d * d;
                    }
                }
                // along columns (y direction)
                for r in 0..n - lag {
                    let (top, bottom) = (&phi[r * n..(r + 1) * n], &phi[(r + lag) * n..(r + lag + 1) * n]);
                    for c in 0..n {
                        let d = bottom[c] - top[c];
                        acc += d * d;
                    }
                }
                *sum = acc;
            }
            sums
        })
        .collect();

    let mut out = Vec::with_capacity(max_lag);
    for li in 0..max_lag {
        let lag = li + 1;
        let pairs = 2.0 * (n * (n - lag)) as f64 * screens.len() as f64;
        let total: f64 = partials.iter().map(|p| p[li]).sum();
        out.push((lag as f64 * dx, total / pairs));
    }
    Ok(out)
}

/// Structure function along a single axis (rows or columns), used by the
/// isotropy check.
pub fn structure_function_axis(
    screens: &[PhaseScreen],
    max_lag: usize,
    along_rows: bool,
) -> Result<Vec<(f64, f64)>> {
    ensure!(!screens.is_empty(), Domain, "structure function needs screens");
    let n = screens[0].n();
    let dx = screens[0].dx;
    ensure!(max_lag < n, Range, "max lag {} must be below grid size {}", max_lag, n);
    let mut out = Vec::with_capacity(max_lag);
    for lag in 1..=max_lag {
        let mut acc = 0.0;
        for screen in screens {
            let phi = &screen.phase;
            if along_rows {
                for r in 0..n {
                    for c in 0..n - lag {
                        let d = phi.at(r, c + lag) - phi.at(r, c);
                        acc += d * d;
                    }
                }
            } else {
                for r in 0..n - lag {
                    for c in 0..n {
                        let d = phi.at(r + lag, c) - phi.at(r, c);
                        acc += d * d;
                    }
                }
            }
        }
        let pairs = (n * (n - lag)) as f64 * screens.len() as f64;
        out.push((lag as f64 * dx, acc / pairs));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::turbulence::{ScreenRecipe, TurbulenceParams};

    #[test]
    fn mask_of_single_pixel_reference() {
        let mut reference = Grid::zeros(8);
        *reference.at_mut(3, 5) = 2.0;
        let mask = target_mask(&reference).unwrap();
        assert_eq!(mask.pixel_count, 1);
        assert!(*mask.mask.at(3, 5));
    }

    #[test]
    fn mask_rejects_zero_reference() {
        assert!(target_mask(&Grid::zeros(8)).is_err());
    }

    #[test]
    fn mask_is_quarter_level_set_of_gaussian() {
        // exp(-2 r^2 / w^2) >= 1/4 within radius w sqrt(ln 4) / sqrt(2)
        let n = 129;
        let w = 10.0;
        let mut reference = Grid::zeros(n);
        for r in 0..n {
            for c in 0..n {
                let y = r as f64 - 64.0;
                let x = c as f64 - 64.0;
                *reference.at_mut(r, c) = (-2.0 * (x * x + y * y) / (w * w)).exp();
            }
        }
        let mask = target_mask(&reference).unwrap();
        let radius = w * (4f64.ln()).sqrt() / 2f64.sqrt();
        let analytic = std::f64::consts::PI * radius * radius;
        let count = mask.pixel_count as f64;
        assert!((count - analytic).abs() / analytic < 0.05, "{count} vs {analytic}");
    }

    #[test]
    fn mask_invariant_under_rescale() {
        let mut reference = Grid::zeros(16);
        for (i, v) in reference.data_mut().iter_mut().enumerate() {
            *v = (i as f64 * 0.37).sin().abs();
        }
        let a = target_mask(&reference).unwrap();
        let b = target_mask(&reference.map(|v| v * 17.5)).unwrap();
        assert_eq!(a.mask.data(), b.mask.data());
    }

    #[test]
    fn enhancement_of_unchanged_uniform_is_one() {
        let before = Grid::filled(8, 3.0);
        let after = before.clone();
        let mut reference = Grid::zeros(8);
        *reference.at_mut(4, 4) = 1.0;
        *reference.at_mut(4, 5) = 0.5;
        let mask = target_mask(&reference).unwrap();
        let eta = enhancement(&before, &after, &mask).unwrap();
        assert!((eta - 1.0).abs() < 1e-12);
    }

    #[test]
    fn efficiency_of_perfect_correction_is_one() {
        let mut unscattered = Grid::zeros(8);
        *unscattered.at_mut(4, 4) = 2.0;
        let mask = target_mask(&unscattered).unwrap();
        let eff = efficiency(&unscattered, &unscattered, &mask).unwrap();
        assert!((eff - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ratio_metrics_invariant_under_joint_rescale() {
        let mut before = Grid::zeros(8);
        let mut after = Grid::zeros(8);
        for (i, (b, a)) in before
            .data_mut()
            .iter_mut()
            .zip(after.data_mut().iter_mut())
            .enumerate()
        {
            *b = 1.0 + (i as f64 * 0.3).sin().abs();
            *a = 2.0 + (i as f64 * 0.7).cos().abs();
        }
        let mask = target_mask(&before).unwrap();
        let eta = enhancement(&before, &after, &mask).unwrap();
        let eta_scaled =
            enhancement(&before.map(|v| v * 5.0), &after.map(|v| v * 5.0), &mask).unwrap();
        assert!((eta - eta_scaled).abs() < 1e-12);
        let eff = efficiency(&after, &before, &mask).unwrap();
        let eff_scaled =
            efficiency(&after.map(|v| v * 5.0), &before.map(|v| v * 5.0), &mask).unwrap();
        assert!((eff - eff_scaled).abs() < 1e-12);
    }

    #[test]
    fn pearson_limits_and_affine_invariance() {
        let a = Grid::from_vec(4, (0..16).map(|i| (i as f64 * 0.9).sin()).collect());
        assert!((pearson(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let neg = a.map(|v| -v + 3.0);
        assert!((pearson(&a, &neg).unwrap() + 1.0).abs() < 1e-12);
        let affine = a.map(|v| 2.5 * v + 7.0);
        assert!((pearson(&a, &affine).unwrap() - 1.0).abs() < 1e-12);
        assert!(
            (pearson(&a, &affine).unwrap() - pearson(&affine, &a).unwrap()).abs() < 1e-12
        );
        assert!(pearson(&a, &Grid::filled(4, 1.0)).is_err());
    }

    #[test]
    fn independent_speckles_decorrelate() {
        // two independent plane-wave speckle patterns with >= 1e4 pixels;
        // a uniform input keeps the speckle envelope flat across the grid
        use crate::fft::C64;
        use crate::field_optics::{apply_phase, far_field, ComplexField, Plane};
        let n = 128;
        let dx = 10.9375e-6;
        let params = TurbulenceParams::new(1e-15, 1000.0, 808e-9, 10.0, 5e-3).unwrap();
        let beam = ComplexField {
            amplitude: Grid::filled(n, C64::new(1.0, 0.0)),
            dx,
            lambda: 404e-9,
            plane: Plane::Screen,
        };
        let mut maps = Vec::new();
        for seed in [101u64, 202] {
            // r0 around half a pixel: the scattering disk fills the grid
            let screen = ScreenRecipe::new(params.clone(), n, dx, seed)
                .with_scale(26000.0)
                .generate()
                .unwrap();
            let f = apply_phase(&beam, &screen, 1.0).unwrap();
            maps.push(far_field(&f, 0.3).unwrap());
        }
        let rho = pearson(&maps[0].intensity, &maps[1].intensity).unwrap();
        assert!(rho.abs() < 0.1, "rho = {rho}");
    }

    #[test]
    fn structure_function_of_constant_screens_is_zero() {
        let params = TurbulenceParams::new(1e-15, 1000.0, 808e-9, 10.0, 5e-3).unwrap();
        let screens: Vec<PhaseScreen> = (0..3)
            .map(|i| PhaseScreen::constant(16, 1e-5, i as f64, params.clone()))
            .collect();
        let d = structure_function(&screens, 4).unwrap();
        assert!(d.iter().all(|(_, v)| *v == 0.0));
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn pattern_strategy() -> impl Strategy<Value = Grid<f64>> {
            proptest::collection::vec(0.0f64..10.0, 64).prop_map(|v| Grid::from_vec(8, v))
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn ratio_metrics_survive_joint_rescaling(
                before in pattern_strategy(),
                after in pattern_strategy(),
                scale in 0.01f64..100.0,
            ) {
                prop_assume!(before.max_value() > 0.0);
                prop_assume!(before.mean() > 0.0);
                let mask = target_mask(&before).unwrap();
                let eta = enhancement(&before, &after, &mask).unwrap();
                let eta2 = enhancement(
                    &before.map(|v| v * scale),
                    &after.map(|v| v * scale),
                    &mask,
                ).unwrap();
                prop_assert!((eta - eta2).abs() <= 1e-9 * eta.abs().max(1.0));
                // and the mask itself ignores positive rescaling
                let mask2 = target_mask(&before.map(|v| v * scale)).unwrap();
                prop_assert_eq!(mask.mask.data(), mask2.mask.data());
            }

            #[test]
            fn pearson_is_symmetric_and_affine_invariant(
                a in pattern_strategy(),
                b in pattern_strategy(),
                gain in 0.1f64..50.0,
                offset in -25.0f64..25.0,
            ) {
                let va = a.data().iter().any(|v| *v != a.data()[0]);
                let vb = b.data().iter().any(|v| *v != b.data()[0]);
                prop_assume!(va && vb);
                let r1 = pearson(&a, &b).unwrap();
                let r2 = pearson(&b, &a).unwrap();
                prop_assert!((r1 - r2).abs() < 1e-12);
                let r3 = pearson(&a.map(|v| gain * v + offset), &b).unwrap();
                prop_assert!((r1 - r3).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn structure_function_estimator_matches_known_field() {
        // deterministic sinusoid phi = sin(2 pi c / n): D(lag) is exact
        let n = 32;
        let params = TurbulenceParams::new(1e-15, 1000.0, 808e-9, 10.0, 5e-3).unwrap();
        let mut phase = Grid::zeros(n);
        for r in 0..n {
            for c in 0..n {
                *phase.at_mut(r, c) = (std::f64::consts::TAU * c as f64 / n as f64).sin();
            }
        }
        let screen = PhaseScreen {
            phase,
            dx: 1.0,
            recipe: ScreenRecipe::new(params, n, 1.0, 0),
            warnings: Vec::new(),
        };
        let screens = vec![screen.clone(), screen];
        let d = structure_function(&screens, 2).unwrap();
        // brute-force the same average independently
        for (lag, (_, got)) in d.iter().enumerate() {
            let lag = lag + 1;
            let mut acc = 0.0;
            let mut cnt = 0usize;
            let phi = &screens[0].phase;
            for r in 0..n {
                for c in 0..n - lag {
                    acc += (phi.at(r, c + lag) - phi.at(r, c)).powi(2);
                    cnt += 1;
                }
            }
            for r in 0..n - lag {
                for c in 0..n {
                    acc += (phi.at(r + lag, c) - phi.at(r, c)).powi(2);
                    cnt += 1;
                }
            }
            let expected = acc / cnt as f64;
            assert!((got - expected).abs() < 1e-12);
        }
    }
}
