//! Model variants, the assembled network with its heads, and checkpoints.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{PatchBatch, Preprocessor};
use crate::error::{config_err, format_err, shape_err, Error, Result};
use crate::fusion::{
    argmax, decision_fuse, fuse_features, head_forward, DecisionWeights, FusionStrategy,
};
use crate::network::{Branch, Branches, CoupledExtractor, NetworkConfig};
use crate::tensor::{Graph, Mode, ParamId, ParamStore, Real, Tensor, Var};

/// The eight configurations compared in the experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Variant {
    Hs,
    Lidar,
    /// Feature-level fusion, classified by the fused head alone.
    Feature(FusionStrategy),
    /// Feature-level fusion plus decision fusion over all three heads.
    Decision(FusionStrategy),
}

impl Variant {
    pub const ALL: [Variant; 8] = [
        Variant::Hs,
        Variant::Lidar,
        Variant::Feature(FusionStrategy::Concat),
        Variant::Feature(FusionStrategy::Max),
        Variant::Feature(FusionStrategy::Sum),
        Variant::Decision(FusionStrategy::Concat),
        Variant::Decision(FusionStrategy::Max),
        Variant::Decision(FusionStrategy::Sum),
    ];

    pub fn branches(self) -> Branches {
        match self {
            Variant::Hs => Branches::HsOnly,
            Variant::Lidar => Branches::LidarOnly,
            _ => Branches::Both,
        }
    }

    pub fn fusion(self) -> Option<FusionStrategy> {
        match self {
            Variant::Feature(s) | Variant::Decision(s) => Some(s),
            _ => None,
        }
    }

    pub fn decision_fusion(self) -> bool {
        matches!(self, Variant::Decision(_))
    }

    /// Same family with a different fusion rule; single-branch variants are
    /// returned unchanged.
    pub fn with_fusion(self, s: FusionStrategy) -> Self {
        match self {
            Variant::Feature(_) => Variant::Feature(s),
            Variant::Decision(_) => Variant::Decision(s),
            v => v,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::Hs => f.write_str("CNN-HS"),
            Variant::Lidar => f.write_str("CNN-LiDAR"),
            Variant::Feature(s) => write!(f, "CNN-F-{}", s.letter()),
            Variant::Decision(s) => write!(f, "CNN-DF-{}", s.letter()),
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let up = s.trim().to_ascii_uppercase();
        let rest = up.strip_prefix("CNN-").unwrap_or(&up);
        let fused = |tail: &str| {
            let mut chars = tail.chars();
            match (chars.next(), chars.next()) {
                (Some(c), None) => FusionStrategy::from_letter(c),
                _ => None,
            }
        };
        let v = match rest {
            "HS" => Some(Variant::Hs),
            "LIDAR" => Some(Variant::Lidar),
            r if r.starts_with("DF-") => fused(&r[3..]).map(Variant::Decision),
            r if r.starts_with("F-") => fused(&r[2..]).map(Variant::Feature),
            _ => None,
        };
        v.ok_or_else(|| {
            config_err!(
                "unknown variant '{s}' (expected one of {})",
                Variant::ALL.map(|v| v.to_string()).join(", ")
            )
        })
    }
}

impl From<Variant> for String {
    fn from(v: Variant) -> Self {
        v.to_string()
    }
}

impl TryFrom<String> for Variant {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub network: NetworkConfig,
    pub variant: Variant,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Heads {
    pub w1: Option<ParamId>,
    pub w2: Option<ParamId>,
    pub w3: ParamId,
}

/// Head outputs on a graph; `y1`/`y2` exist only for decision-fusion variants.
#[derive(Clone, Copy, Debug)]
pub struct HeadOutputs {
    pub y1: Option<Var>,
    pub y2: Option<Var>,
    pub y3: Var,
}

/// Row-major `[n, C]` probabilities of each head.
#[derive(Clone, Debug, PartialEq)]
pub struct Probabilities {
    pub classes: usize,
    pub y1: Option<Vec<f64>>,
    pub y2: Option<Vec<f64>>,
    pub y3: Vec<f64>,
}

impl Probabilities {
    pub fn len(&self) -> usize {
        self.y3.len() / self.classes
    }

    pub fn is_empty(&self) -> bool {
        self.y3.is_empty()
    }

    fn row(v: &[f64], c: usize, i: usize) -> &[f64] {
        &v[i * c..(i + 1) * c]
    }

    /// 1-based argmax class of one head (`0..3`) per sample.
    pub fn head_classes(&self, head: usize) -> Option<Vec<usize>> {
        let v = match head {
            0 => self.y1.as_ref()?,
            1 => self.y2.as_ref()?,
            _ => &self.y3,
        };
        Some(v.chunks(self.classes).map(|r| argmax(r) + 1).collect())
    }

    /// Decision-fused scores for each sample.
    pub fn fused(&self, weights: &DecisionWeights) -> Result<Vec<Vec<f64>>> {
        let (Some(y1), Some(y2)) = (&self.y1, &self.y2) else {
            return Err(config_err!("decision fusion needs all three heads"));
        };
        let c = self.classes;
        (0..self.len())
            .map(|i| {
                decision_fuse(
                    [
                        Self::row(y1, c, i),
                        Self::row(y2, c, i),
                        Self::row(&self.y3, c, i),
                    ],
                    weights,
                )
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub store: ParamStore<T>,
    pub extractor: CoupledExtractor,
    pub heads: Heads,
    pub decision: Option<DecisionWeights>,
    pub preprocessor: Option<Preprocessor>,
}

fn head_init<T: Real, R: Rng>(
    store: &mut ParamStore<T>,
    name: &str,
    classes: usize,
    dim: usize,
    rng: &mut R,
) -> ParamId {
    let bound = 1.0 / (dim as f64).sqrt();
    let w = (0..classes * dim)
        .map(|_| T::from_f64_lossy(rng.random_range(-bound..bound)))
        .collect();
    store.add(
        name,
        Tensor::new(&[classes, dim], w).expect("shape matches"),
    )
}

impl<T: Real> Model<T> {
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let net = &config.network;
        let extractor =
            CoupledExtractor::init(net, config.variant.branches(), &mut store, &mut rng)?;
        let feat = net.feature_len();
        let c = net.classes;
        let heads = if config.variant.decision_fusion() {
            Heads {
                w1: Some(head_init(&mut store, "head1.weight", c, feat, &mut rng)),
                w2: Some(head_init(&mut store, "head2.weight", c, feat, &mut rng)),
                w3: head_init(
                    &mut store,
                    "head3.weight",
                    c,
                    config.variant.fusion().unwrap().fused_dim(feat),
                    &mut rng,
                ),
            }
        } else {
            let dim = config.variant.fusion().map_or(feat, |s| s.fused_dim(feat));
            Heads {
                w1: None,
                w2: None,
                w3: head_init(&mut store, "head3.weight", c, dim, &mut rng),
            }
        };
        Ok(Self {
            config: config.clone(),
            store,
            extractor,
            heads,
            decision: None,
            preprocessor: None,
        })
    }

    pub fn classes(&self) -> usize {
        self.config.network.classes
    }

    /// Records the forward pass of a batch. Inputs a branch does not use may be
    /// `None`.
    pub fn forward(
        &mut self,
        g: &mut Graph<T>,
        hs: Option<Var>,
        lidar: Option<Var>,
        mode: Mode,
    ) -> Result<HeadOutputs> {
        let variant = self.config.variant;
        let need =
            |v: Option<Var>, b: &str| v.ok_or_else(|| config_err!("{variant} needs {b} patches"));
        let ex = &self.extractor;
        let store = &mut self.store;
        match variant {
            Variant::Hs | Variant::Lidar => {
                let (branch, x) = if variant == Variant::Hs {
                    (Branch::Hs, need(hs, "hyperspectral")?)
                } else {
                    (Branch::Lidar, need(lidar, "LiDAR")?)
                };
                let r = ex.forward_branch(g, store, branch, x, mode)?;
                let y3 = head_forward(g, store, r, self.heads.w3)?;
                Ok(HeadOutputs {
                    y1: None,
                    y2: None,
                    y3,
                })
            }
            Variant::Feature(s) | Variant::Decision(s) => {
                let (rh, rl) = ex.forward_pair(
                    g,
                    store,
                    need(hs, "hyperspectral")?,
                    need(lidar, "LiDAR")?,
                    mode,
                )?;
                let fused = fuse_features(g, rh, rl, s)?;
                let y3 = head_forward(g, store, fused, self.heads.w3)?;
                let (y1, y2) = match (self.heads.w1, self.heads.w2) {
                    (Some(w1), Some(w2)) => (
                        Some(head_forward(g, store, rh, w1)?),
                        Some(head_forward(g, store, rl, w2)?),
                    ),
                    _ => (None, None),
                };
                Ok(HeadOutputs { y1, y2, y3 })
            }
        }
    }

    /// Places a batch's patches on the graph as constants, skipping unused
    /// modalities.
    pub fn inputs(&self, g: &mut Graph<T>, batch: &PatchBatch<T>) -> (Option<Var>, Option<Var>) {
        let b = self.config.variant.branches();
        let hs = b.has(Branch::Hs).then(|| g.input(batch.hsi.clone()));
        let lidar = b.has(Branch::Lidar).then(|| g.input(batch.lidar.clone()));
        (hs, lidar)
    }

    /// Inference-mode head probabilities for a batch.
    pub fn predict_probs(&mut self, batch: &PatchBatch<T>) -> Result<Probabilities> {
        let mut g = Graph::new();
        let (hs, lidar) = self.inputs(&mut g, batch);
        let out = self.forward(&mut g, hs, lidar, Mode::Infer)?;
        let read = |v: Var| {
            g.value(v)
                .data()
                .iter()
                .map(|x| x.to_f64_lossy())
                .collect::<Vec<_>>()
        };
        Ok(Probabilities {
            classes: self.classes(),
            y1: out.y1.map(read),
            y2: out.y2.map(read),
            y3: read(out.y3),
        })
    }

    /// Final 1-based class per sample: decision-fused scores when
    /// `decision_fusion` is set, the fused head otherwise.
    pub fn classify(&self, probs: &Probabilities, decision_fusion: bool) -> Result<Vec<usize>> {
        if !decision_fusion {
            return Ok(probs.head_classes(2).expect("fused head always present"));
        }
        let w = self
            .decision
            .as_ref()
            .ok_or_else(|| config_err!("{} model has no decision weights", self.config.variant))?;
        Ok(probs.fused(w)?.iter().map(|o| argmax(o) + 1).collect())
    }
}

const MAGIC: &[u8; 4] = b"CCNN";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    model: ModelConfig,
    preprocessor: Option<Preprocessor>,
}

/// Named `f32` array inside a checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

fn put_u32(buf: &mut Vec<u8>, v: usize) {
    buf.extend_from_slice(&(v as u32).to_le_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(format_err!("checkpoint truncated at byte {}", self.pos));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self) -> Result<usize> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()) as usize)
    }
}

impl Model<f32> {
    pub fn records(&self) -> Vec<Record> {
        let mut out: Vec<Record> = self
            .store
            .params()
            .iter()
            .map(|p| Record {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                data: p.value.data().to_vec(),
            })
            .collect();
        for (name, s) in self.store.stats_entries() {
            let c = s.channels();
            out.push(Record {
                name: format!("{name}.running_mean"),
                shape: vec![c],
                data: s.mean.clone(),
            });
            out.push(Record {
                name: format!("{name}.running_var"),
                shape: vec![c],
                data: s.var.clone(),
            });
        }
        if let Some(w) = &self.decision {
            let flat = |m: &[[f64; 3]]| m.iter().flatten().map(|&v| v as f32).collect();
            let c = w.classes();
            out.push(Record {
                name: "decision.U".into(),
                shape: vec![c, 3],
                data: flat(&w.u),
            });
            out.push(Record {
                name: "decision.accuracy".into(),
                shape: vec![c, 3],
                data: flat(&w.accuracy),
            });
        }
        out
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&CheckpointHeader {
            model: self.config.clone(),
            preprocessor: self.preprocessor.clone(),
        })?;
        let records = self.records();
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        put_u32(&mut buf, VERSION as usize);
        put_u32(&mut buf, header.len());
        buf.extend_from_slice(&header);
        put_u32(&mut buf, records.len());
        for r in &records {
            put_u32(&mut buf, r.name.len());
            buf.extend_from_slice(r.name.as_bytes());
            put_u32(&mut buf, r.shape.len());
            for &d in &r.shape {
                buf.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in &r.data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(format_err!("not a model checkpoint (bad magic)"));
        }
        let version = r.u32()?;
        if version != VERSION as usize {
            return Err(format_err!("unsupported checkpoint version {version}"));
        }
        let len = r.u32()?;
        let header: CheckpointHeader = serde_json::from_slice(r.take(len)?)?;
        let mut model = Model::<f32>::init(&header.model, 0)?;
        model.preprocessor = header.preprocessor;

        let count = r.u32()?;
        let mut records = Vec::with_capacity(count);
        for _ in 0..count {
            let len = r.u32()?;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| format_err!("record name is not UTF-8"))?;
            let ndim = r.u32()?;
            let shape = (0..ndim).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            let data = r
                .take(
                    numel
                        .checked_mul(4)
                        .ok_or_else(|| format_err!("record {name} too large"))?,
                )?
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            records.push(Record { name, shape, data });
        }
        if r.pos != bytes.len() {
            return Err(format_err!(
                "{} trailing bytes after checkpoint",
                bytes.len() - r.pos
            ));
        }
        model.load_records(records)?;
        Ok(model)
    }

    fn load_records(&mut self, records: Vec<Record>) -> Result<()> {
        let mut by_name: HashMap<String, Record> =
            records.into_iter().map(|r| (r.name.clone(), r)).collect();
        fn take(
            by_name: &mut HashMap<String, Record>,
            name: &str,
            shape: &[usize],
        ) -> Result<Vec<f32>> {
            let r = by_name
                .remove(name)
                .ok_or_else(|| format_err!("checkpoint lacks record {name}"))?;
            if r.shape != shape {
                return Err(shape_err!(
                    "record {name} has shape {:?}, model expects {shape:?}",
                    r.shape
                ));
            }
            Ok(r.data)
        }
        for p in self.store.params_mut() {
            let shape = p.value.shape().to_vec();
            p.value = Tensor::new(&shape, take(&mut by_name, &p.name, &shape)?)?;
        }
        for (name, s) in self.store.stats_entries_mut() {
            let c = s.channels();
            s.mean = take(&mut by_name, &format!("{name}.running_mean"), &[c])?;
            s.var = take(&mut by_name, &format!("{name}.running_var"), &[c])?;
        }
        let c = self.classes();
        if self.config.variant.decision_fusion() && by_name.contains_key("decision.U") {
            let rows = |v: Vec<f32>| {
                v.chunks(3)
                    .map(|r| [r[0] as f64, r[1] as f64, r[2] as f64])
                    .collect::<Vec<_>>()
            };
            let u = rows(take(&mut by_name, "decision.U", &[c, 3])?);
            let accuracy = rows(take(&mut by_name, "decision.accuracy", &[c, 3])?);
            self.decision = Some(DecisionWeights { u, accuracy });
        }
        if let Some(extra) = by_name.keys().next() {
            return Err(format_err!("checkpoint has unexpected record {extra}"));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| {
            Error::Io(std::io::Error::new(
                e.kind(),
                format!("{}: {e}", path.display()),
            ))
        })?;
        Self::from_bytes(&bytes)
    }
}
