//! Two-dimensional FFT helpers on square complex grids.
//!
//! Plans are cached behind a mutex so concurrent callers share them; the
//! returned `Arc<dyn Fft>` handles are safe for parallel use.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftDirection, FftPlanner};

use crate::grid::Grid;

pub type C64 = Complex<f64>;

type PlanCache = (FftPlanner<f64>, HashMap<(usize, bool), Arc<dyn Fft<f64>>>);

fn plan(len: usize, direction: FftDirection) -> Arc<dyn Fft<f64>> {
    static CACHE: OnceLock<Mutex<PlanCache>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new((FftPlanner::new(), HashMap::new())));
    let mut guard = cache.lock().expect("fft plan cache poisoned");
    let key = (len, direction == FftDirection::Forward);
    if let Some(p) = guard.1.get(&key) {
        return Arc::clone(p);
    }
    let p = guard.0.plan_fft(len, direction);
    guard.1.insert(key, Arc::clone(&p));
    p
}

fn transpose(data: &mut [C64], n: usize) {
    for r in 0..n {
        for c in (r + 1)..n {
            data.swap(r * n + c, c * n + r);
        }
    }
}

/// Unnormalised in-place 2-D FFT: row transforms, transpose, row transforms,
/// transpose back. Forward uses `e^{-i}`, inverse `e^{+i}`; neither divides
/// by the sample count.
pub fn fft2_inplace(data: &mut [C64], n: usize, direction: FftDirection) {
    assert_eq!(data.len(), n * n);
    let fft = plan(n, direction);
    for _pass in 0..2 {
        data.par_chunks_mut(n).for_each(|row| {
            let mut scratch = vec![C64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
            fft.process_with_scratch(row, &mut scratch);
        });
        transpose(data, n);
    }
}

pub fn fft2(grid: &Grid<C64>, direction: FftDirection) -> Grid<C64> {
    let n = grid.n();
    let mut data = grid.data().to_vec();
    fft2_inplace(&mut data, n, direction);
    Grid::from_vec(n, data)
}

/// Swap quadrants so the zero-frequency bin moves from index 0 to `n/2`.
pub fn fftshift2(grid: &Grid<C64>) -> Grid<C64> {
    let n = grid.n();
    let h = n / 2;
    let mut out = Grid::filled(n, C64::new(0.0, 0.0));
    for r in 0..n {
        for c in 0..n {
            *out.at_mut((r + h) % n, (c + h) % n) = *grid.at(r, c);
        }
    }
    out
}

/// Forward transform of `grid` embedded in a `pad * n` zero field, returning
/// the centred `keep x keep` block of the shifted spectrum. Bin spacing is
/// `1/pad` of the plain transform, so this evaluates the same spectrum on a
/// finer frequency comb (trigonometric interpolation).
pub fn fft2_padded_centered(grid: &Grid<C64>, pad: usize, keep: usize) -> Grid<C64> {
    let n = grid.n();
    let m = n * pad;
    assert!(keep <= m);
    let mut data = vec![C64::new(0.0, 0.0); m * m];
    for r in 0..n {
        for c in 0..n {
            data[r * m + c] = *grid.at(r, c);
        }
    }
    fft2_inplace(&mut data, m, FftDirection::Forward);
    // centred crop of the shifted spectrum without materialising the shift
    let mut out = Grid::filled(keep, C64::new(0.0, 0.0));
    let h = m / 2;
    let off = h - keep / 2;
    for r in 0..keep {
        let src_r = (off + r + h) % m;
        for c in 0..keep {
            let src_c = (off + c + h) % m;
            *out.at_mut(r, c) = data[src_r * m + src_c];
        }
    }
    out
}
