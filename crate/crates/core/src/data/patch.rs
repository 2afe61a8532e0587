use crate::error::{config_err, shape_err, Result};

use super::Raster;

/// Reflects an index into `0..len` without repeating the edge sample
/// (`-1 -> 1`, `len -> len - 2`).
pub fn mirror_index(i: isize, len: usize) -> usize {
    let n = len as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut j = i.rem_euclid(period);
    if j >= n {
        j = period - j;
    }
    j as usize
}

pub fn check_patch_size(p: usize) -> Result<()> {
    if p == 0 || p.is_multiple_of(2) {
        return Err(config_err!("patch size must be odd and positive, got {p}"));
    }
    Ok(())
}

/// Copies the `p x p` window centred at `(row, col)` from every band,
/// appending `bands * p * p` values in band-major order to `out`.
pub fn extract_patch_into(
    cube: &Raster,
    row: usize,
    col: usize,
    p: usize,
    out: &mut Vec<f32>,
) -> Result<()> {
    check_patch_size(p)?;
    if row >= cube.height || col >= cube.width {
        return Err(shape_err!(
            "pixel ({row},{col}) outside {}x{} raster",
            cube.height,
            cube.width
        ));
    }
    let half = (p / 2) as isize;
    let rows: Vec<usize> = (-half..=half)
        .map(|d| mirror_index(row as isize + d, cube.height))
        .collect();
    let cols: Vec<usize> = (-half..=half)
        .map(|d| mirror_index(col as isize + d, cube.width))
        .collect();
    out.reserve(cube.bands * p * p);
    for b in 0..cube.bands {
        let band = cube.band(b);
        for &r in &rows {
            let line = &band[r * cube.width..(r + 1) * cube.width];
            out.extend(cols.iter().map(|&c| line[c]));
        }
    }
    Ok(())
}

pub fn extract_patch(cube: &Raster, row: usize, col: usize, p: usize) -> Result<Vec<f32>> {
    let mut out = Vec::new();
    extract_patch_into(cube, row, col, p, &mut out)?;
    Ok(out)
}
