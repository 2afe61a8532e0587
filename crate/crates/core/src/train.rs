//! Training with the three-head composite loss, prediction and evaluation.

use serde::{Deserialize, Serialize};

use crate::data::{
    epoch_seed, make_batches, one_hot, LabeledPixel, PatchBatch, PreparedScene, Preprocessor,
    RasterScene,
};
use crate::error::{config_err, shape_err, Error, Result};
use crate::fusion::{argmax, compute_decision_weights};
use crate::metrics::MetricsReport;
use crate::model::{HeadOutputs, Model, ModelConfig, Probabilities};
use crate::tensor::{AdamConfig, AdamState, Graph, Mode, Real, Tensor, Var};

/// Samples per inference chunk.
const PREDICT_CHUNK: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda1: 0.01,
            lambda2: 0.01,
            batch_size: 64,
            learning_rate: 1e-3,
            epochs: 200,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return Err(config_err!("lambda1 and lambda2 must be non-negative"));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(config_err!("batch size and epochs must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(config_err!("learning rate must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub l: f64,
}

impl LossBreakdown {
    pub fn combine(l1: f64, l2: f64, l3: f64, lambda1: f64, lambda2: f64) -> Self {
        Self {
            l1,
            l2,
            l3,
            l: lambda1 * l1 + lambda2 * l2 + l3,
        }
    }
}

/// Loss terms on the graph. Missing heads contribute nothing.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub l: Var,
    pub l1: Option<Var>,
    pub l2: Option<Var>,
    pub l3: Var,
}

impl LossVars {
    pub fn breakdown<T: Real>(&self, g: &Graph<T>) -> LossBreakdown {
        let read = |v: Option<Var>| v.map_or(0.0, |v| g.value(v).item().to_f64_lossy());
        LossBreakdown {
            l1: read(self.l1),
            l2: read(self.l2),
            l3: read(Some(self.l3)),
            l: read(Some(self.l)),
        }
    }
}

/// `lambda1 * L1 + lambda2 * L2 + L3` with each term a cross-entropy against
/// the one-hot `target`.
pub fn total_loss<T: Real>(
    g: &mut Graph<T>,
    out: &HeadOutputs,
    target: &Tensor<T>,
    lambda1: f64,
    lambda2: f64,
) -> Result<LossVars> {
    let l3 = g.bce_loss(out.y3, target)?;
    let l1 = out.y1.map(|y| g.bce_loss(y, target)).transpose()?;
    let l2 = out.y2.map(|y| g.bce_loss(y, target)).transpose()?;
    let mut terms = vec![(l3, T::one())];
    if let Some(v) = l1 {
        terms.push((v, T::from_f64_lossy(lambda1)));
    }
    if let Some(v) = l2 {
        terms.push((v, T::from_f64_lossy(lambda2)));
    }
    let l = if terms.len() == 1 {
        l3
    } else {
        g.lin_comb(&terms)?
    };
    Ok(LossVars { l, l1, l2, l3 })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    #[serde(rename = "L")]
    pub l: f64,
    #[serde(rename = "L1")]
    pub l1: f64,
    #[serde(rename = "L2")]
    pub l2: f64,
    #[serde(rename = "L3")]
    pub l3: f64,
    pub train_oa: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    /// Total loss of the last optimizer step.
    pub final_loss: f64,
}

impl TrainLog {
    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["epoch", "L", "L1", "L2", "L3", "train_OA"])?;
        for e in &self.epochs {
            w.write_record([
                e.epoch.to_string(),
                e.l.to_string(),
                e.l1.to_string(),
                e.l2.to_string(),
                e.l3.to_string(),
                e.train_oa.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn check_classes(labels: &[usize], classes: usize) -> Result<()> {
    let mut seen = vec![false; classes];
    for &l in labels {
        if l == 0 || l > classes {
            return Err(config_err!("label {l} outside 1..={classes}"));
        }
        seen[l - 1] = true;
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(config_err!("class {} has no training samples", i + 1));
    }
    Ok(())
}

/// One optimizer step on `batch`; returns the loss terms and the number of
/// samples the fused head classified correctly.
pub fn train_step<T: Real>(
    model: &mut Model<T>,
    adam: &mut AdamState<T>,
    batch: &PatchBatch<T>,
    config: &TrainConfig,
) -> Result<(LossBreakdown, usize)> {
    let target = one_hot::<T>(&batch.labels, model.classes())?;
    let mut g = Graph::new();
    let (hs, lidar) = model.inputs(&mut g, batch);
    let out = model.forward(&mut g, hs, lidar, Mode::Train)?;
    let loss = total_loss(&mut g, &out, &target, config.lambda1, config.lambda2)?;
    let b = loss.breakdown(&g);
    if ![b.l, b.l1, b.l2, b.l3].iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite(format!(
            "loss became non-finite (L={}, L1={}, L2={}, L3={})",
            b.l, b.l1, b.l2, b.l3
        )));
    }
    let c = model.classes();
    let correct = g
        .value(out.y3)
        .data()
        .chunks(c)
        .zip(&batch.labels)
        .filter(|(row, &l)| argmax(row) + 1 == l)
        .count();
    model.store.zero_grads();
    g.backward(loss.l, &mut model.store)?;
    adam.step(&mut model.store)?;
    Ok((b, correct))
}

/// Runs every epoch over shuffled mini-batches of `data`, then derives the
/// decision weights on the full training set for decision-fusion variants.
pub fn train<T: Real>(
    model: &mut Model<T>,
    data: &PatchBatch<T>,
    config: &TrainConfig,
) -> Result<TrainLog> {
    config.validate()?;
    check_classes(&data.labels, model.classes())?;
    let mut adam = AdamState::new(
        &model.store,
        AdamConfig {
            lr: config.learning_rate,
            ..AdamConfig::default()
        },
    );
    let mut log = TrainLog::default();
    let n = data.len();
    for epoch in 1..=config.epochs {
        let mut sums = [0.0f64; 4];
        let mut correct = 0;
        for idx in make_batches(n, config.batch_size, epoch_seed(config.seed, epoch))? {
            let batch = data.select(&idx)?;
            let (b, ok) = train_step(model, &mut adam, &batch, config).map_err(|e| match e {
                Error::NonFinite(m) => Error::NonFinite(format!("epoch {epoch}: {m}")),
                e => e,
            })?;
            let w = idx.len() as f64;
            for (s, v) in sums.iter_mut().zip([b.l, b.l1, b.l2, b.l3]) {
                *s += w * v;
            }
            correct += ok;
            log.final_loss = b.l;
        }
        let m = n as f64;
        log.epochs.push(EpochLog {
            epoch,
            l: sums[0] / m,
            l1: sums[1] / m,
            l2: sums[2] / m,
            l3: sums[3] / m,
            train_oa: correct as f64 / m,
        });
    }
    if model.config.variant.decision_fusion() {
        let probs = predict_batch(model, data)?;
        let heads: Vec<Vec<usize>> = (0..3).map(|j| probs.head_classes(j).unwrap()).collect();
        model.decision = Some(compute_decision_weights(
            [&heads[0], &heads[1], &heads[2]],
            &data.labels,
            model.classes(),
        )?);
    }
    Ok(log)
}

fn concat_probs(parts: Vec<Probabilities>) -> Probabilities {
    let classes = parts[0].classes;
    let join = |f: &dyn Fn(&Probabilities) -> Option<&Vec<f64>>| -> Option<Vec<f64>> {
        let mut out = Vec::new();
        for p in &parts {
            out.extend_from_slice(f(p)?);
        }
        Some(out)
    };
    Probabilities {
        classes,
        y1: join(&|p| p.y1.as_ref()),
        y2: join(&|p| p.y2.as_ref()),
        y3: join(&|p| Some(&p.y3)).unwrap(),
    }
}

/// Inference-mode probabilities for an already gathered batch, in chunks.
pub fn predict_batch<T: Real>(model: &mut Model<T>, data: &PatchBatch<T>) -> Result<Probabilities> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut parts = Vec::new();
    for chunk in idx.chunks(PREDICT_CHUNK) {
        parts.push(model.predict_probs(&data.select(chunk)?)?);
    }
    if parts.is_empty() {
        return Err(shape_err!("nothing to predict"));
    }
    Ok(concat_probs(parts))
}

/// Inference-mode probabilities for arbitrary pixels of a prepared scene.
pub fn predict_pixels<T: Real>(
    model: &mut Model<T>,
    scene: &PreparedScene,
    pixels: &[LabeledPixel],
) -> Result<Probabilities> {
    let p = model.config.network.p;
    let mut parts = Vec::new();
    for chunk in pixels.chunks(PREDICT_CHUNK) {
        let batch = scene.gather::<T>(chunk, p)?;
        parts.push(model.predict_probs(&batch)?);
    }
    if parts.is_empty() {
        return Err(shape_err!("nothing to predict"));
    }
    Ok(concat_probs(parts))
}

/// Metrics on `test`; decision-fused scores when `decision_fusion` is set,
/// the fused head otherwise.
pub fn evaluate<T: Real>(
    model: &mut Model<T>,
    scene: &PreparedScene,
    test: &[LabeledPixel],
    decision_fusion: bool,
) -> Result<MetricsReport> {
    let c = model.classes();
    if let Some(bad) = test.iter().find(|l| l.class_id == 0 || l.class_id > c) {
        return Err(config_err!(
            "test label {} at ({},{}) is not a class of this {c}-class model",
            bad.class_id,
            bad.row,
            bad.col
        ));
    }
    let probs = predict_pixels(model, scene, test)?;
    let pred = model.classify(&probs, decision_fusion)?;
    let truth: Vec<usize> = test.iter().map(|l| l.class_id).collect();
    MetricsReport::from_pairs(&truth, &pred, c)
}

/// Predicted class id for every pixel, row-major.
pub fn predict_map<T: Real>(model: &mut Model<T>, scene: &PreparedScene) -> Result<Vec<usize>> {
    let decision = model.config.variant.decision_fusion();
    let pixels: Vec<LabeledPixel> = (0..scene.height())
        .flat_map(|row| {
            (0..scene.width()).map(move |col| LabeledPixel {
                row,
                col,
                class_id: 0,
            })
        })
        .collect();
    let probs = predict_pixels(model, scene, &pixels)?;
    model.classify(&probs, decision)
}

/// Fits preprocessing on `scene`, initializes a model from `config.seed`
/// and trains it on `train_labels`.
pub fn fit(
    scene: &RasterScene,
    train_labels: &[LabeledPixel],
    model_config: &ModelConfig,
    config: &TrainConfig,
) -> Result<(Model<f32>, PreparedScene, TrainLog)> {
    let (pre, prepared) = Preprocessor::fit(scene, model_config.network.k)?;
    let mut model = Model::<f32>::init(model_config, config.seed)?;
    model.preprocessor = Some(pre);
    let data = prepared.gather::<f32>(train_labels, model_config.network.p)?;
    let log = train(&mut model, &data, config)?;
    Ok((model, prepared, log))
}
