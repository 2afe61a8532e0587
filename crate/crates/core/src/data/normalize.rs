use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};

use super::Raster;

/// Per-band `[min, max]` captured at fit time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandRanges {
    pub min: Vec<f32>,
    pub max: Vec<f32>,
}

impl BandRanges {
    pub fn fit(cube: &Raster) -> Self {
        let mut min = Vec::with_capacity(cube.bands);
        let mut max = Vec::with_capacity(cube.bands);
        for b in 0..cube.bands {
            let band = cube.band(b);
            min.push(band.iter().copied().fold(f32::INFINITY, f32::min));
            max.push(band.iter().copied().fold(f32::NEG_INFINITY, f32::max));
        }
        BandRanges { min, max }
    }

    /// Scales each band by its stored range. A zero-width range maps to 0.
    pub fn apply(&self, cube: &Raster) -> Result<Raster> {
        if cube.bands != self.min.len() {
            return Err(shape_err!(
                "ranges cover {} bands, raster has {}",
                self.min.len(),
                cube.bands
            ));
        }
        let mut out = cube.clone();
        for b in 0..cube.bands {
            let (lo, hi) = (self.min[b], self.max[b]);
            let span = hi - lo;
            for v in out.band_mut(b) {
                *v = if span > 0.0 { (*v - lo) / span } else { 0.0 };
            }
        }
        Ok(out)
    }
}

/// Min-max scales every band into `[0, 1]`.
pub fn normalize_bands(cube: &Raster) -> (Raster, BandRanges) {
    let ranges = BandRanges::fit(cube);
    let out = ranges
        .apply(cube)
        .expect("ranges fitted on the same raster");
    (out, ranges)
}
