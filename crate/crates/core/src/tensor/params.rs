use crate::error::{shape_err, Error, Result};

use super::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StatsId(pub(crate) usize);

/// A learned array. `grad` is present exactly when `requires_grad` is set and
/// always matches the value's shape.
#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub requires_grad: bool,
    pub grad: Option<Tensor<T>>,
}

/// Per-channel running statistics of a batch-normalization layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub momentum: T,
    pub eps: T,
}

impl<T: Real> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
            momentum: T::from_f64_lossy(0.1),
            eps: T::from_f64_lossy(1e-5),
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    /// Exponential moving average update from one batch; `var` is the biased
    /// batch variance over `count` values per channel.
    pub fn update(&mut self, mean: &[T], var: &[T], count: usize) {
        let m = self.momentum;
        let keep = T::one() - m;
        let unbias = if count > 1 {
            T::from_usize(count).unwrap() / T::from_usize(count - 1).unwrap()
        } else {
            T::one()
        };
        for c in 0..self.mean.len() {
            self.mean[c] = keep * self.mean[c] + m * mean[c];
            self.var[c] = keep * self.var[c] + m * var[c] * unbias;
        }
    }
}

/// Owns every parameter and running-statistics buffer of a model.
///
/// Layers refer to storage by id, so sharing a layer between two branches is
/// just two blocks holding the same id.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    stats: Vec<(String, RunningStats<T>)>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            stats: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let grad = Some(Tensor::zeros(value.shape()));
        self.params.push(Param {
            name: name.into(),
            value,
            requires_grad: true,
            grad,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn add_stats(&mut self, name: impl Into<String>, channels: usize) -> StatsId {
        self.stats.push((name.into(), RunningStats::new(channels)));
        StatsId(self.stats.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params[id.0].grad.as_ref()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn stats(&self, id: StatsId) -> &RunningStats<T> {
        &self.stats[id.0].1
    }

    pub fn stats_mut(&mut self, id: StatsId) -> &mut RunningStats<T> {
        &mut self.stats[id.0].1
    }

    pub fn stats_entries(&self) -> &[(String, RunningStats<T>)] {
        &self.stats
    }

    pub fn stats_entries_mut(&mut self) -> &mut [(String, RunningStats<T>)] {
        &mut self.stats
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            if let Some(g) = &mut p.grad {
                g.data_mut().iter_mut().for_each(|x| *x = T::zero());
            }
        }
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, grad: &[T]) -> Result<()> {
        let p = &mut self.params[id.0];
        let Some(g) = &mut p.grad else {
            return Err(Error::Usage(format!(
                "parameter {} does not require grad",
                p.name
            )));
        };
        if g.numel() != grad.len() {
            return Err(shape_err!(
                "gradient for {} has {} values, expected {}",
                p.name,
                grad.len(),
                g.numel()
            ));
        }
        for (dst, &src) in g.data_mut().iter_mut().zip(grad) {
            *dst = *dst + src;
        }
        Ok(())
    }

    /// Converts every buffer to another precision, keeping ids stable.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    requires_grad: p.requires_grad,
                    grad: p.grad.as_ref().map(|g| g.cast()),
                })
                .collect(),
            stats: self
                .stats
                .iter()
                .map(|(name, s)| {
                    let conv = |v: &[T]| {
                        v.iter()
                            .map(|x| U::from_f64_lossy(x.to_f64_lossy()))
                            .collect()
                    };
                    (
                        name.clone(),
                        RunningStats {
                            mean: conv(&s.mean),
                            var: conv(&s.var),
                            momentum: U::from_f64_lossy(s.momentum.to_f64_lossy()),
                            eps: U::from_f64_lossy(s.eps.to_f64_lossy()),
                        },
                    )
                })
                .collect(),
        }
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.requires_grad)
            .map(|p| p.value.numel())
            .sum()
    }
}
