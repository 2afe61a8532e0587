//! Feature-level fusion, the softmax output heads and accuracy-weighted
//! decision fusion.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, shape_err, Error, Result};
use crate::tensor::{Graph, ParamId, ParamStore, Real, Var};

/// Smoothing constant of the decision weights.
pub const DECISION_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionStrategy {
    Concat,
    Max,
    Sum,
}

impl FusionStrategy {
    pub const ALL: [FusionStrategy; 3] = [Self::Concat, Self::Max, Self::Sum];

    pub fn fused_dim(self, feature_len: usize) -> usize {
        match self {
            Self::Concat => 2 * feature_len,
            Self::Max | Self::Sum => feature_len,
        }
    }

    /// Single-letter suffix used in variant tags.
    pub fn letter(self) -> char {
        match self {
            Self::Concat => 'C',
            Self::Max => 'M',
            Self::Sum => 'S',
        }
    }

    pub fn from_letter(c: char) -> Option<Self> {
        match c {
            'C' => Some(Self::Concat),
            'M' => Some(Self::Max),
            'S' => Some(Self::Sum),
            _ => None,
        }
    }
}

impl fmt::Display for FusionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Concat => "concat",
            Self::Max => "max",
            Self::Sum => "sum",
        })
    }
}

impl FromStr for FusionStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "concat" | "c" => Ok(Self::Concat),
            "max" | "m" => Ok(Self::Max),
            "sum" | "s" => Ok(Self::Sum),
            _ => Err(config_err!(
                "unknown fusion strategy '{s}' (concat, max, sum)"
            )),
        }
    }
}

/// Fuses `[N, D]` branch features on the graph.
pub fn fuse_features<T: Real>(
    g: &mut Graph<T>,
    rh: Var,
    rl: Var,
    strategy: FusionStrategy,
) -> Result<Var> {
    if g.shape(rh) != g.shape(rl) {
        return Err(shape_err!(
            "fusion inputs differ: {:?} vs {:?}",
            g.shape(rh),
            g.shape(rl)
        ));
    }
    match strategy {
        FusionStrategy::Concat => g.concat(rh, rl),
        FusionStrategy::Max => g.elem_max(rh, rl),
        FusionStrategy::Sum => g.add(rh, rl),
    }
}

/// Plain-vector counterpart of [`fuse_features`].
pub fn fuse_vectors(rh: &[f64], rl: &[f64], strategy: FusionStrategy) -> Result<Vec<f64>> {
    if rh.len() != rl.len() {
        return Err(shape_err!(
            "fusion inputs differ: {} vs {}",
            rh.len(),
            rl.len()
        ));
    }
    Ok(match strategy {
        FusionStrategy::Concat => rh.iter().chain(rl).copied().collect(),
        FusionStrategy::Max => rh.iter().zip(rl).map(|(a, b)| a.max(*b)).collect(),
        FusionStrategy::Sum => rh.iter().zip(rl).map(|(a, b)| a + b).collect(),
    })
}

/// `softmax(feature * W^T)` for a bias-free head `W [C, D]`.
pub fn head_forward<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    feature: Var,
    weight: ParamId,
) -> Result<Var> {
    let w = g.param(store, weight);
    let logits = g.linear(feature, w)?;
    g.softmax(logits)
}

/// Per-class weights of the three heads together with the training accuracies
/// they were derived from. Rows are classes, columns are heads.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionWeights {
    pub u: Vec<[f64; 3]>,
    pub accuracy: Vec<[f64; 3]>,
}

impl DecisionWeights {
    pub fn classes(&self) -> usize {
        self.u.len()
    }

    pub fn from_accuracy(accuracy: Vec<[f64; 3]>) -> Self {
        let u = accuracy
            .iter()
            .map(|a| {
                let denom = a[0] + a[1] + a[2] + DECISION_EPS;
                [
                    (a[0] + DECISION_EPS) / denom,
                    (a[1] + DECISION_EPS) / denom,
                    (a[2] + DECISION_EPS) / denom,
                ]
            })
            .collect();
        Self { u, accuracy }
    }
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax<T: PartialOrd>(v: &[T]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

/// 1-based class of the largest entry.
pub fn predict_class<T: PartialOrd>(o: &[T]) -> usize {
    argmax(o) + 1
}

/// Per-class accuracies of each head on the training set and the weights
/// derived from them. Predictions and truth are 1-based class ids.
pub fn compute_decision_weights(
    predictions: [&[usize]; 3],
    truth: &[usize],
    classes: usize,
) -> Result<DecisionWeights> {
    if predictions.iter().any(|p| p.len() != truth.len()) {
        return Err(shape_err!(
            "head predictions are not aligned with the labels"
        ));
    }
    let mut support = vec![0usize; classes];
    let mut correct = vec![[0usize; 3]; classes];
    for (i, &t) in truth.iter().enumerate() {
        if t == 0 || t > classes {
            return Err(config_err!("label {t} outside 1..={classes}"));
        }
        support[t - 1] += 1;
        for j in 0..3 {
            if predictions[j][i] == t {
                correct[t - 1][j] += 1;
            }
        }
    }
    if let Some(missing) = support.iter().position(|&s| s == 0) {
        return Err(config_err!(
            "class {} has no training samples; its accuracy is undefined",
            missing + 1
        ));
    }
    let accuracy = correct
        .iter()
        .zip(&support)
        .map(|(c, &s)| {
            let s = s as f64;
            [c[0] as f64 / s, c[1] as f64 / s, c[2] as f64 / s]
        })
        .collect();
    Ok(DecisionWeights::from_accuracy(accuracy))
}

/// `O = u1 * y1 + u2 * y2 + u3 * y3`, elementwise per class, not renormalized.
pub fn decision_fuse(y: [&[f64]; 3], weights: &DecisionWeights) -> Result<Vec<f64>> {
    let c = weights.classes();
    if y.iter().any(|v| v.len() != c) {
        return Err(shape_err!(
            "decision fusion expects {c} class scores per head"
        ));
    }
    Ok((0..c)
        .map(|i| {
            let u = weights.u[i];
            u[0] * y[0][i] + u[1] * y[1][i] + u[2] * y[2][i]
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn vector_fusion_rules() {
        let a = [1.0, -2.0, 3.0];
        let z = [0.0; 3];
        assert_eq!(fuse_vectors(&a, &z, FusionStrategy::Sum).unwrap(), a);
        assert_eq!(fuse_vectors(&a, &a, FusionStrategy::Max).unwrap(), a);
        let c = fuse_vectors(&a, &z, FusionStrategy::Concat).unwrap();
        assert_eq!(c.len(), 6);
        assert_eq!(&c[..3], &a);
        assert!(fuse_vectors(&a, &[1.0], FusionStrategy::Sum).is_err());
    }

    #[test]
    fn head_examples() {
        let mut store = ParamStore::<f64>::new();
        let w = store.add("w", Tensor::from_f64(&[2, 1], &[3f64.ln(), 0.0]).unwrap());
        let mut g = Graph::new();
        let x = g.input(Tensor::from_f64(&[1, 1], &[1.0]).unwrap());
        let y = head_forward(&mut g, &store, x, w).unwrap();
        let v = g.value(y).data();
        assert!((v[0] - 0.75).abs() < 1e-12 && (v[1] - 0.25).abs() < 1e-12);

        let zero = store.add("z", Tensor::zeros(&[4, 3]));
        let x = g.input(Tensor::from_f64(&[1, 3], &[1.0, 2.0, 3.0]).unwrap());
        let y = head_forward(&mut g, &store, x, zero).unwrap();
        assert!(g.value(y).data().iter().all(|&p| (p - 0.25).abs() < 1e-12));
    }

    #[test]
    fn decision_weight_examples() {
        let w = DecisionWeights::from_accuracy(vec![[1.0, 0.0, 0.0], [1.0; 3], [0.0; 3]]);
        assert_eq!(w.u[0][0], 1.0);
        let small = DECISION_EPS / (1.0 + DECISION_EPS);
        assert!((w.u[0][1] - small).abs() < 1e-15);
        assert!((w.u[1][0] - (1.0 + DECISION_EPS) / (3.0 + DECISION_EPS)).abs() < 1e-15);
        assert_eq!(w.u[2], [1.0, 1.0, 1.0]);
    }

    #[test]
    fn accuracies_from_predictions() {
        let truth = [1, 1, 2, 2];
        let p1 = [1, 1, 1, 1];
        let p2 = [2, 2, 2, 2];
        let p3 = [1, 2, 2, 1];
        let w = compute_decision_weights([&p1, &p2, &p3], &truth, 2).unwrap();
        assert_eq!(w.accuracy, vec![[1.0, 0.0, 0.5], [0.0, 1.0, 0.5]]);
        assert!(compute_decision_weights([&p1, &p2, &p3], &truth, 3).is_err());
    }

    #[test]
    fn hand_fused_output() {
        let w = DecisionWeights {
            u: vec![[1.0, 0.5, 0.25]; 2],
            accuracy: vec![[0.0; 3]; 2],
        };
        let o = decision_fuse([&[0.9, 0.1], &[0.2, 0.8], &[0.6, 0.4]], &w).unwrap();
        assert!((o[0] - 1.15).abs() < 1e-12 && (o[1] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn class_prediction_ties() {
        assert_eq!(predict_class(&[0.1, 0.7, 0.2]), 2);
        assert_eq!(predict_class(&[0.5, 0.5]), 1);
    }

    #[test]
    fn strategy_parsing() {
        assert_eq!(
            "SUM".parse::<FusionStrategy>().unwrap(),
            FusionStrategy::Sum
        );
        assert!("mean".parse::<FusionStrategy>().is_err());
        for s in FusionStrategy::ALL {
            assert_eq!(FusionStrategy::from_letter(s.letter()), Some(s));
            assert_eq!(s.to_string().parse::<FusionStrategy>().unwrap(), s);
        }
    }
}
