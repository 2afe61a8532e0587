//! Two-branch convolutional feature extractor with optionally shared upper
//! blocks.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::check_patch_size;
use crate::error::{config_err, shape_err, Result};
use crate::fusion::FusionStrategy;
use crate::tensor::{Graph, Mode, ParamId, ParamStore, Real, StatsId, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Hyperspectral input channels after PCA.
    pub k: usize,
    /// Patch side length.
    pub p: usize,
    pub widths: [usize; 3],
    pub classes: usize,
    pub coupled: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            k: 20,
            p: 11,
            widths: [32, 64, 128],
            classes: 2,
            coupled: true,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        check_patch_size(self.p)?;
        if self.k == 0 {
            return Err(config_err!("k must be at least 1"));
        }
        if self.widths.contains(&0) {
            return Err(config_err!(
                "channel widths must be positive, got {:?}",
                self.widths
            ));
        }
        if self.classes < 2 {
            return Err(config_err!("need at least 2 classes, got {}", self.classes));
        }
        if self.final_spatial() == 0 {
            return Err(config_err!(
                "patch size {} does not survive three 2x2 poolings (need p >= 8)",
                self.p
            ));
        }
        Ok(())
    }

    /// Spatial side after each of the three pooling stages.
    pub fn spatial_sizes(&self) -> [usize; 3] {
        let s1 = self.p / 2;
        let s2 = s1 / 2;
        [s1, s2, s2 / 2]
    }

    pub fn final_spatial(&self) -> usize {
        self.spatial_sizes()[2]
    }

    /// Length of each branch's flattened output.
    pub fn feature_len(&self) -> usize {
        let s = self.final_spatial();
        self.widths[2] * s * s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Hs,
    Lidar,
}

impl Branch {
    fn tag(self) -> &'static str {
        match self {
            Branch::Hs => "hs",
            Branch::Lidar => "lidar",
        }
    }
}

/// Which branches a model instantiates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branches {
    Both,
    HsOnly,
    LidarOnly,
}

impl Branches {
    pub fn has(self, b: Branch) -> bool {
        matches!(
            (self, b),
            (Branches::Both, _)
                | (Branches::HsOnly, Branch::Hs)
                | (Branches::LidarOnly, Branch::Lidar)
        )
    }
}

/// Conv 3x3 -> batch norm -> ReLU -> 2x2 max pool.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvBlock {
    pub weight: ParamId,
    pub bias: ParamId,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub stats: StatsId,
}

impl ConvBlock {
    fn init<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        index: usize,
        tag: &str,
        c_in: usize,
        c_out: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = c_in * 9;
        let bound = (6.0 / fan_in as f64).sqrt();
        let w: Vec<T> = (0..c_out * fan_in)
            .map(|_| T::from_f64_lossy(rng.random_range(-bound..bound)))
            .collect();
        let weight = store.add(
            format!("conv{index}_{tag}.weight"),
            Tensor::new(&[c_out, c_in, 3, 3], w).expect("shape matches"),
        );
        let bias = store.add(format!("conv{index}_{tag}.bias"), Tensor::zeros(&[c_out]));
        let gamma = store.add(
            format!("bn{index}_{tag}.gamma"),
            Tensor::full(&[c_out], T::one()),
        );
        let beta = store.add(format!("bn{index}_{tag}.beta"), Tensor::zeros(&[c_out]));
        let stats = store.add_stats(format!("bn{index}_{tag}"), c_out);
        Self {
            weight,
            bias,
            gamma,
            beta,
            stats,
        }
    }

    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &mut ParamStore<T>,
        x: Var,
        mode: Mode,
    ) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        let y = g.conv2d_same(x, w, Some(b))?;
        let y = g.batch_norm2d(y, gamma, beta, store.stats_mut(self.stats), mode)?;
        let y = g.relu(y);
        g.max_pool2(y)
    }
}

/// Conv blocks of each branch. With coupling, blocks 2 and 3 of both branches
/// hold the same ids and therefore the same storage.
#[derive(Clone, Debug, PartialEq)]
pub struct CoupledExtractor {
    pub config: NetworkConfig,
    pub branches: Branches,
    pub hs: Option<[ConvBlock; 3]>,
    pub lidar: Option<[ConvBlock; 3]>,
}

impl CoupledExtractor {
    pub fn init<T: Real, R: Rng>(
        config: &NetworkConfig,
        branches: Branches,
        store: &mut ParamStore<T>,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let [w1, w2, w3] = config.widths;
        let share = config.coupled && branches == Branches::Both;
        let make = |b: Branch, rng: &mut R, store: &mut ParamStore<T>| {
            let c_in = match b {
                Branch::Hs => config.k,
                Branch::Lidar => 1,
            };
            ConvBlock::init(store, 1, b.tag(), c_in, w1, rng)
        };
        let hs1 = branches
            .has(Branch::Hs)
            .then(|| make(Branch::Hs, rng, store));
        let lidar1 = branches
            .has(Branch::Lidar)
            .then(|| make(Branch::Lidar, rng, store));

        let upper = |tag: &str, store: &mut ParamStore<T>, rng: &mut R| {
            [
                ConvBlock::init(store, 2, tag, w1, w2, rng),
                ConvBlock::init(store, 3, tag, w2, w3, rng),
            ]
        };
        let (hs_up, lidar_up) = if share {
            let shared = upper("shared", store, rng);
            (Some(shared), Some(shared))
        } else {
            (
                hs1.map(|_| upper("hs", store, rng)),
                lidar1.map(|_| upper("lidar", store, rng)),
            )
        };
        let join = |first: Option<ConvBlock>, up: Option<[ConvBlock; 2]>| {
            first.zip(up).map(|(a, [b, c])| [a, b, c])
        };
        Ok(Self {
            config: config.clone(),
            branches,
            hs: join(hs1, hs_up),
            lidar: join(lidar1, lidar_up),
        })
    }

    pub fn blocks(&self, branch: Branch) -> Option<&[ConvBlock; 3]> {
        match branch {
            Branch::Hs => self.hs.as_ref(),
            Branch::Lidar => self.lidar.as_ref(),
        }
    }

    pub fn is_shared(&self) -> bool {
        matches!((&self.hs, &self.lidar), (Some(a), Some(b)) if a[1] == b[1])
    }

    /// `[N, c, p, p]` patches to `[N, feature_len]` features.
    pub fn forward_branch<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &mut ParamStore<T>,
        branch: Branch,
        x: Var,
        mode: Mode,
    ) -> Result<Var> {
        let blocks = self
            .blocks(branch)
            .ok_or_else(|| config_err!("model has no {} branch", branch.tag()))?;
        let c_in = match branch {
            Branch::Hs => self.config.k,
            Branch::Lidar => 1,
        };
        let p = self.config.p;
        let s = g.shape(x);
        if s.len() != 4 || s[1] != c_in || s[2] != p || s[3] != p {
            return Err(shape_err!(
                "{} branch expects [N, {c_in}, {p}, {p}] patches, got {s:?}",
                branch.tag()
            ));
        }
        let mut y = x;
        for block in blocks {
            y = block.forward(g, store, y, mode)?;
        }
        g.flatten(y)
    }

    /// Runs both branches on one graph, so shared blocks accumulate gradient
    /// from both.
    pub fn forward_pair<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &mut ParamStore<T>,
        hs: Var,
        lidar: Var,
        mode: Mode,
    ) -> Result<(Var, Var)> {
        let rh = self.forward_branch(g, store, Branch::Hs, hs, mode)?;
        let rl = self.forward_branch(g, store, Branch::Lidar, lidar, mode)?;
        Ok((rh, rl))
    }
}

/// Convolution and head weight counts (biases and batch-norm terms excluded).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCounts {
    pub coupled: usize,
    pub uncoupled: usize,
}

/// Weight counts of the two-branch, three-head model.
pub fn count_params(config: &NetworkConfig, fusion: FusionStrategy) -> ParamCounts {
    let [w1, w2, w3] = config.widths;
    let private = 9 * (config.k * w1 + w1);
    let shared = 9 * (w1 * w2 + w2 * w3);
    let feat = config.feature_len();
    let heads = config.classes * (2 * feat + fusion.fused_dim(feat));
    ParamCounts {
        coupled: private + shared + heads,
        uncoupled: private + 2 * shared + heads,
    }
}
