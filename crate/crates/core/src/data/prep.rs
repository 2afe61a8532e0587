use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::tensor::{Real, Tensor};

use super::{
    apply_pca, extract_patch_into, fit_pca, normalize_bands, BandRanges, LabeledPixel, PcaModel,
    Raster, RasterScene,
};

/// Fitted PCA plus the min-max ranges applied after it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor {
    pub pca: PcaModel,
    pub hsi_ranges: BandRanges,
    pub lidar_ranges: BandRanges,
}

/// Network-ready rasters: `k` normalized components and normalized LiDAR.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedScene {
    pub hsi: Raster,
    pub lidar: Raster,
}

impl Preprocessor {
    pub fn fit(scene: &RasterScene, k: usize) -> Result<(Self, PreparedScene)> {
        let pca = fit_pca(&scene.hsi, k)?;
        let (hsi, hsi_ranges) = normalize_bands(&apply_pca(&scene.hsi, &pca)?);
        let (lidar, lidar_ranges) = normalize_bands(&scene.lidar);
        Ok((
            Self {
                pca,
                hsi_ranges,
                lidar_ranges,
            },
            PreparedScene { hsi, lidar },
        ))
    }

    pub fn apply(&self, scene: &RasterScene) -> Result<PreparedScene> {
        Ok(PreparedScene {
            hsi: self.hsi_ranges.apply(&apply_pca(&scene.hsi, &self.pca)?)?,
            lidar: self.lidar_ranges.apply(&scene.lidar)?,
        })
    }
}

/// Stacked patch tensors for a set of pixels.
#[derive(Clone, Debug)]
pub struct PatchBatch<T> {
    /// `[n, k, p, p]`
    pub hsi: Tensor<T>,
    /// `[n, 1, p, p]`
    pub lidar: Tensor<T>,
    /// 1-based class ids, 0 where unknown.
    pub labels: Vec<usize>,
}

impl PreparedScene {
    pub fn height(&self) -> usize {
        self.hsi.height
    }

    pub fn width(&self) -> usize {
        self.hsi.width
    }

    pub fn k(&self) -> usize {
        self.hsi.bands
    }

    pub fn gather<T: Real>(&self, pixels: &[LabeledPixel], p: usize) -> Result<PatchBatch<T>> {
        if pixels.is_empty() {
            return Err(shape_err!("cannot gather an empty pixel set"));
        }
        let n = pixels.len();
        let mut hsi = Vec::with_capacity(n * self.k() * p * p);
        let mut lidar = Vec::with_capacity(n * p * p);
        for px in pixels {
            extract_patch_into(&self.hsi, px.row, px.col, p, &mut hsi)?;
            extract_patch_into(&self.lidar, px.row, px.col, p, &mut lidar)?;
        }
        let cast = |v: Vec<f32>| v.into_iter().map(|x| T::from_f64_lossy(x as f64)).collect();
        Ok(PatchBatch {
            hsi: Tensor::new(&[n, self.k(), p, p], cast(hsi))?,
            lidar: Tensor::new(&[n, 1, p, p], cast(lidar))?,
            labels: pixels.iter().map(|l| l.class_id).collect(),
        })
    }
}

impl<T: Real> PatchBatch<T> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Copies the samples at `idx` into a new batch.
    pub fn select(&self, idx: &[usize]) -> Result<PatchBatch<T>> {
        let pick = |t: &Tensor<T>| {
            let per: usize = t.shape()[1..].iter().product();
            let mut data = Vec::with_capacity(idx.len() * per);
            for &i in idx {
                data.extend_from_slice(&t.data()[i * per..(i + 1) * per]);
            }
            let mut shape = t.shape().to_vec();
            shape[0] = idx.len();
            Tensor::new(&shape, data)
        };
        Ok(PatchBatch {
            hsi: pick(&self.hsi)?,
            lidar: pick(&self.lidar)?,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        })
    }
}

/// One-hot `[n, classes]` target from 1-based labels.
pub fn one_hot<T: Real>(labels: &[usize], classes: usize) -> Result<Tensor<T>> {
    let mut data = vec![T::zero(); labels.len() * classes];
    for (i, &l) in labels.iter().enumerate() {
        if l == 0 || l > classes {
            return Err(shape_err!("label {l} outside 1..={classes}"));
        }
        data[i * classes + l - 1] = T::one();
    }
    Tensor::new(&[labels.len(), classes], data)
}
