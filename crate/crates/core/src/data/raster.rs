use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{format_err, shape_err, Result};

/// JSON sidecar describing a raw band-sequential `f32` raster.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RasterHeader {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub dtype: String,
    pub layout: String,
}

/// A band-sequential image: `data[(band * height + row) * width + col]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub data: Vec<f32>,
}

impl Raster {
    pub fn new(height: usize, width: usize, bands: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || bands == 0 {
            return Err(shape_err!(
                "raster extents must be positive, got {height}x{width}x{bands}"
            ));
        }
        if data.len() != height * width * bands {
            return Err(shape_err!(
                "raster {height}x{width}x{bands} needs {} values, got {}",
                height * width * bands,
                data.len()
            ));
        }
        Ok(Self {
            height,
            width,
            bands,
            data,
        })
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn band(&self, b: usize) -> &[f32] {
        let n = self.pixels();
        &self.data[b * n..(b + 1) * n]
    }

    pub fn band_mut(&mut self, b: usize) -> &mut [f32] {
        let n = self.pixels();
        &mut self.data[b * n..(b + 1) * n]
    }

    pub fn get(&self, band: usize, row: usize, col: usize) -> f32 {
        self.data[(band * self.height + row) * self.width + col]
    }

    /// Spectrum of one pixel.
    pub fn spectrum(&self, row: usize, col: usize) -> Vec<f32> {
        (0..self.bands).map(|b| self.get(b, row, col)).collect()
    }

    pub fn header(&self) -> RasterHeader {
        RasterHeader {
            height: self.height,
            width: self.width,
            bands: self.bands,
            dtype: "f32".into(),
            layout: "BSQ".into(),
        }
    }

    /// Reads a header and its raw little-endian `f32` data file.
    pub fn load(header_path: &Path, data_path: &Path) -> Result<Self> {
        let text = fs::read_to_string(header_path)?;
        let header: RasterHeader = serde_json::from_str(&text)
            .map_err(|e| format_err!("malformed raster header {}: {e}", header_path.display()))?;
        if header.dtype != "f32" {
            return Err(format_err!(
                "unsupported dtype {:?}, expected \"f32\"",
                header.dtype
            ));
        }
        if header.layout != "BSQ" {
            return Err(format_err!(
                "unsupported layout {:?}, expected \"BSQ\"",
                header.layout
            ));
        }
        if header.height == 0 || header.width == 0 || header.bands == 0 {
            return Err(format_err!("raster header has a zero extent"));
        }
        let bytes = fs::read(data_path)?;
        let expected = header.height * header.width * header.bands * 4;
        if bytes.len() != expected {
            return Err(format_err!(
                "{} holds {} bytes, header {}x{}x{} needs {expected}",
                data_path.display(),
                bytes.len(),
                header.height,
                header.width,
                header.bands
            ));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Self::new(header.height, header.width, header.bands, data)
    }

    /// Loads `header_path` with the data file named by [`data_path_for`].
    pub fn load_pair(header_path: &Path) -> Result<Self> {
        Self::load(header_path, &data_path_for(header_path))
    }

    pub fn save(&self, header_path: &Path, data_path: &Path) -> Result<()> {
        let mut header = serde_json::to_string_pretty(&self.header())?;
        header.push('\n');
        fs::write(header_path, header)?;
        let mut bytes = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(data_path, bytes)?;
        Ok(())
    }

    pub fn save_pair(&self, header_path: &Path) -> Result<()> {
        self.save(header_path, &data_path_for(header_path))
    }
}

/// Raw companion of a header file: same stem, `.raw` extension.
pub fn data_path_for(header_path: &Path) -> PathBuf {
    header_path.with_extension("raw")
}

/// Co-registered hyperspectral cube and single-band LiDAR image.
#[derive(Clone, Debug, PartialEq)]
pub struct RasterScene {
    pub hsi: Raster,
    pub lidar: Raster,
}

impl RasterScene {
    pub fn new(hsi: Raster, lidar: Raster) -> Result<Self> {
        if hsi.height != lidar.height || hsi.width != lidar.width {
            return Err(shape_err!(
                "hyperspectral {}x{} and LiDAR {}x{} rasters do not cover the same grid",
                hsi.height,
                hsi.width,
                lidar.height,
                lidar.width
            ));
        }
        if lidar.bands != 1 {
            return Err(shape_err!(
                "LiDAR raster must have one band, got {}",
                lidar.bands
            ));
        }
        if !hsi.data.iter().chain(&lidar.data).all(|v| v.is_finite()) {
            return Err(format_err!("scene contains non-finite values"));
        }
        Ok(Self { hsi, lidar })
    }

    pub fn height(&self) -> usize {
        self.hsi.height
    }

    pub fn width(&self) -> usize {
        self.hsi.width
    }

    pub fn band_count(&self) -> usize {
        self.hsi.bands
    }
}
