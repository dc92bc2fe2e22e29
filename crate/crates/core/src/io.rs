//! Export formats: little-endian float32 binary grids with JSON sidecars,
//! 8-bit graymaps for quick visual inspection, and CSV tables for count
//! maps and optimization traces.

use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde_json::Value;

use crate::detection::CountMap;
use crate::error::{ensure, Result};
use crate::grid::Grid;
use crate::shaper::TraceEntry;

/// Write a grid as row-major little-endian f32 plus `<stem>.json` sidecar.
pub fn write_f32_grid(path: &Path, grid: &Grid<f64>, sidecar: &Value) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    for v in grid.data() {
        w.write_all(&(*v as f32).to_le_bytes())?;
    }
    w.flush()?;
    let sidecar_path = path.with_extension("json");
    fs::write(&sidecar_path, serde_json::to_string_pretty(sidecar)?)?;
    Ok(())
}

/// Read back a square f32 grid written by [`write_f32_grid`].
pub fn read_f32_grid(path: &Path) -> Result<Grid<f64>> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    ensure!(bytes.len() % 4 == 0, Domain, "f32 grid file length not a multiple of 4");
    let count = bytes.len() / 4;
    let n = (count as f64).sqrt() as usize;
    ensure!(n * n == count, Domain, "f32 grid file is not square: {count} samples");
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok(Grid::from_vec(n, data))
}

/// 8-bit binary PGM, linearly mapped from [0, max] to [0, 255].
pub fn write_pgm(path: &Path, grid: &Grid<f64>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let n = grid.n();
    let max = grid.max_value().max(f64::MIN_POSITIVE);
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P5\n{n} {n}\n255\n")?;
    for v in grid.data() {
        let byte = ((v / max).clamp(0.0, 1.0) * 255.0).round() as u8;
        w.write_all(&[byte])?;
    }
    w.flush()?;
    Ok(())
}

/// CSV export of a count map: scan row, col, physical x, y and counts.
pub fn write_counts_csv(path: &Path, map: &CountMap) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "row,col,x_m,y_m,counts")?;
    let n = map.n();
    for r in 0..n {
        for c in 0..n {
            let (y, x) = map.coordinate(r, c);
            writeln!(w, "{r},{c},{x:.9e},{y:.9e},{}", map.values.at(r, c))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// CSV export of an optimization trace.
pub fn write_trace_csv(path: &Path, trace: &[TraceEntry]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "measurement,iteration,probe_phase,feedback")?;
    for e in trace {
        writeln!(w, "{},{},{:.9},{:.9e}", e.measurement, e.iteration, e.probe_phase, e.value)?;
    }
    w.flush()?;
    Ok(())
}

/// Small CSV table for curves such as the structure function.
pub fn write_curve_csv(path: &Path, header: &str, rows: &[(f64, f64, f64)]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{header}")?;
    for (a, b, c) in rows {
        writeln!(w, "{a:.9e},{b:.9e},{c:.9e}")?;
    }
    w.flush()?;
    Ok(())
}
