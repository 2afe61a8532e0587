use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

use super::{LabeledPixel, Raster, RasterScene};

pub const SPECTRAL_NOISE: f32 = 0.05;
pub const HEIGHT_NOISE: f32 = 0.1;
const HEIGHT_STEP: f32 = 1.0;
const MIN_SIGNATURE_RMS: f32 = 0.15;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub classes: usize,
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub seed: u64,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Samples are drawn only from pixels whose `(2 * margin + 1)` square
    /// neighbourhood lies inside one class region.
    pub margin: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            classes: 4,
            height: 64,
            width: 64,
            bands: 30,
            seed: 7,
            train_per_class: 40,
            test_per_class: 200,
            margin: 2,
        }
    }
}

/// Generated scene with its full ground truth and the sampled label lists.
#[derive(Clone, Debug)]
pub struct SyntheticScene {
    pub scene: RasterScene,
    /// Row-major class id per pixel.
    pub truth: Vec<usize>,
    pub train: Vec<LabeledPixel>,
    pub test: Vec<LabeledPixel>,
    /// Noise-free spectrum per class (index `class_id - 1`).
    pub signatures: Vec<Vec<f32>>,
    pub heights: Vec<f32>,
    /// Classes with identical spectra but different heights.
    pub spectral_twins: (usize, usize),
    /// Classes with identical heights but different spectra, when `classes >= 3`.
    pub height_twins: Option<(usize, usize)>,
}

fn signature(rng: &mut ChaCha8Rng, bands: usize) -> Vec<f32> {
    let base = rng.random_range(0.2..0.5f32);
    let bumps: Vec<(f32, f32, f32)> = (0..rng.random_range(2..=3))
        .map(|_| {
            (
                rng.random_range(0.0..1.0f32),
                rng.random_range(0.08..0.25f32),
                rng.random_range(0.2..0.6f32),
            )
        })
        .collect();
    (0..bands)
        .map(|b| {
            let t = if bands > 1 {
                b as f32 / (bands - 1) as f32
            } else {
                0.5
            };
            base + bumps
                .iter()
                .map(|&(c, w, a)| a * (-0.5 * ((t - c) / w).powi(2)).exp())
                .sum::<f32>()
        })
        .collect()
}

fn rms(a: &[f32], b: &[f32]) -> f32 {
    (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f32>() / a.len() as f32).sqrt()
}

/// Builds a Voronoi-partitioned scene where classes 1 and 2 share a spectrum
/// and classes 3 and 4 share a height.
pub fn generate_synthetic_scene(spec: &SynthSpec) -> Result<SyntheticScene> {
    let c = spec.classes;
    if c < 2 {
        return Err(config_err!(
            "synthetic scene needs at least 2 classes, got {c}"
        ));
    }
    if spec.height < 8 || spec.width < 8 || spec.bands < 2 {
        return Err(config_err!(
            "degenerate synthetic size {}x{}x{} (need at least 8x8 and 2 bands)",
            spec.height,
            spec.width,
            spec.bands
        ));
    }
    if spec.train_per_class == 0 || spec.test_per_class == 0 {
        return Err(config_err!("per-class sample counts must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (h, w) = (spec.height, spec.width);

    // one jittered site per grid cell; each class owns at least two cells
    let g = ((2 * c) as f64).sqrt().ceil() as usize;
    let mut owners: Vec<usize> = (1..=c).chain(1..=c).collect();
    while owners.len() < g * g {
        owners.push(rng.random_range(1..=c));
    }
    owners.shuffle(&mut rng);
    let (ch, cw) = (h as f32 / g as f32, w as f32 / g as f32);
    let mut sites = Vec::with_capacity(g * g);
    for gy in 0..g {
        for gx in 0..g {
            let y = (gy as f32 + 0.5 + rng.random_range(-0.3..0.3f32)) * ch;
            let x = (gx as f32 + 0.5 + rng.random_range(-0.3..0.3f32)) * cw;
            sites.push((y, x, owners[gy * g + gx]));
        }
    }
    let mut truth = vec![0usize; h * w];
    for r in 0..h {
        for col in 0..w {
            let (mut best, mut dist) = (0, f32::INFINITY);
            for (i, &(y, x, _)) in sites.iter().enumerate() {
                let d = (r as f32 + 0.5 - y).powi(2) + (col as f32 + 0.5 - x).powi(2);
                if d < dist {
                    best = i;
                    dist = d;
                }
            }
            truth[r * w + col] = sites[best].2;
        }
    }

    let spectral_twins = (1, 2);
    let height_twins = match c {
        2 => None,
        3 => Some((2, 3)),
        _ => Some((3, 4)),
    };

    let mut signatures: Vec<Vec<f32>> = Vec::with_capacity(c);
    for class in 1..=c {
        if class == spectral_twins.1 {
            signatures.push(signatures[spectral_twins.0 - 1].clone());
            continue;
        }
        let mut attempts = 0;
        loop {
            let s = signature(&mut rng, spec.bands);
            attempts += 1;
            if attempts > 1000 || signatures.iter().all(|o| rms(o, &s) >= MIN_SIGNATURE_RMS) {
                signatures.push(s);
                break;
            }
        }
    }

    let mut levels: Vec<f32> = (0..c).map(|i| i as f32 * HEIGHT_STEP).collect();
    levels.shuffle(&mut rng);
    let mut heights = levels;
    if let Some((a, b)) = height_twins {
        heights[b - 1] = heights[a - 1];
    }

    let spec_noise = Normal::new(0.0, SPECTRAL_NOISE).expect("valid sigma");
    let height_noise = Normal::new(0.0, HEIGHT_NOISE).expect("valid sigma");
    let n = h * w;
    let mut hsi = vec![0.0f32; n * spec.bands];
    let mut lidar = vec![0.0f32; n];
    for p in 0..n {
        let class = truth[p];
        for b in 0..spec.bands {
            hsi[b * n + p] = signatures[class - 1][b] + spec_noise.sample(&mut rng);
        }
        lidar[p] = heights[class - 1] + height_noise.sample(&mut rng);
    }

    let m = spec.margin.max(1);
    let mut pure: Vec<Vec<LabeledPixel>> = vec![Vec::new(); c];
    for r in m..h.saturating_sub(m) {
        for col in m..w.saturating_sub(m) {
            let class = truth[r * w + col];
            let uniform =
                (r - m..=r + m).all(|rr| (col - m..=col + m).all(|cc| truth[rr * w + cc] == class));
            if uniform {
                pure[class - 1].push(LabeledPixel {
                    row: r,
                    col,
                    class_id: class,
                });
            }
        }
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (i, pixels) in pure.iter_mut().enumerate() {
        if pixels.len() < 2 {
            return Err(config_err!(
                "synthetic size {h}x{w} leaves class {} without enough interior pixels",
                i + 1
            ));
        }
        pixels.shuffle(&mut rng);
        let n_train = spec.train_per_class.min(pixels.len() / 2);
        let n_test = spec.test_per_class.min(pixels.len() - n_train);
        train.extend_from_slice(&pixels[..n_train]);
        test.extend_from_slice(&pixels[n_train..n_train + n_test]);
    }
    train.sort();
    test.sort();

    let scene = RasterScene::new(
        Raster::new(h, w, spec.bands, hsi)?,
        Raster::new(h, w, 1, lidar)?,
    )?;
    Ok(SyntheticScene {
        scene,
        truth,
        train,
        test,
        signatures,
        heights,
        spectral_twins,
        height_twins,
    })
}
