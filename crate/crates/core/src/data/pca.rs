use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, shape_err, Result};

use super::Raster;

/// Top-`k` principal axes of the band covariance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub bands: usize,
    pub k: usize,
    /// Per-band mean over every pixel.
    pub mean: Vec<f64>,
    /// `k x bands`, row-major, orthonormal rows by descending eigenvalue.
    pub components: Vec<f64>,
    /// Eigenvalues matching `components`.
    pub explained_variance: Vec<f64>,
}

/// Fits PCA on all pixels of `cube` (covariance, no per-band standardization).
///
/// Each component's largest-magnitude entry is made positive so that repeated
/// fits agree on sign.
pub fn fit_pca(cube: &Raster, k: usize) -> Result<PcaModel> {
    let b = cube.bands;
    if k == 0 || k > b {
        return Err(config_err!("PCA k must lie in 1..={b}, got {k}"));
    }
    let n = cube.pixels();
    if n < k + 1 {
        return Err(config_err!(
            "PCA with k={k} needs at least {} pixels, got {n}",
            k + 1
        ));
    }
    let mean: Vec<f64> = (0..b)
        .map(|band| cube.band(band).iter().map(|&v| v as f64).sum::<f64>() / n as f64)
        .collect();

    let mut centered = DMatrix::<f64>::zeros(n, b);
    for band in 0..b {
        for (p, &v) in cube.band(band).iter().enumerate() {
            centered[(p, band)] = v as f64 - mean[band];
        }
    }
    let cov = (centered.transpose() * &centered) / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..b).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .partial_cmp(&eig.eigenvalues[i])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });

    let mut components = Vec::with_capacity(k * b);
    let mut explained_variance = Vec::with_capacity(k);
    for &idx in order.iter().take(k) {
        let col = eig.eigenvectors.column(idx);
        let mut lead = 0;
        for i in 1..b {
            if col[i].abs() > col[lead].abs() {
                lead = i;
            }
        }
        let sign = if col[lead] < 0.0 { -1.0 } else { 1.0 };
        components.extend(col.iter().map(|&v| v * sign));
        explained_variance.push(eig.eigenvalues[idx].max(0.0));
    }
    Ok(PcaModel {
        bands: b,
        k,
        mean,
        components,
        explained_variance,
    })
}

impl PcaModel {
    pub fn component(&self, i: usize) -> &[f64] {
        &self.components[i * self.bands..(i + 1) * self.bands]
    }

    pub fn project_pixel(&self, spectrum: &[f64]) -> Vec<f64> {
        (0..self.k)
            .map(|i| {
                self.component(i)
                    .iter()
                    .zip(spectrum.iter().zip(&self.mean))
                    .map(|(c, (x, m))| c * (x - m))
                    .sum()
            })
            .collect()
    }

    /// Maps scores back to band space, without re-adding the mean.
    pub fn reconstruct_centered(&self, scores: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.bands];
        for (i, &s) in scores.iter().enumerate() {
            for (o, &c) in out.iter_mut().zip(self.component(i)) {
                *o += s * c;
            }
        }
        out
    }
}

/// Projects every pixel's centered spectrum onto the model components,
/// producing a `k`-band raster.
pub fn apply_pca(cube: &Raster, model: &PcaModel) -> Result<Raster> {
    if cube.bands != model.bands {
        return Err(shape_err!(
            "PCA model expects {} bands, raster has {}",
            model.bands,
            cube.bands
        ));
    }
    let n = cube.pixels();
    let mut out = vec![0.0f64; model.k * n];
    for band in 0..cube.bands {
        let src = cube.band(band);
        let m = model.mean[band];
        for i in 0..model.k {
            let c = model.components[i * model.bands + band];
            let dst = &mut out[i * n..(i + 1) * n];
            for (o, &v) in dst.iter_mut().zip(src) {
                *o += c * (v as f64 - m);
            }
        }
    }
    Raster::new(
        cube.height,
        cube.width,
        model.k,
        out.into_iter().map(|v| v as f32).collect(),
    )
}
