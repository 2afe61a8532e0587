//! Central finite-difference verification of reverse-mode gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::PatchBatch;
use crate::error::Result;
use crate::model::Model;
use crate::tensor::{Graph, Mode, Tensor, Var};
use crate::train::total_loss;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tolerance {
    pub rel: f64,
    /// Floor below which differences count as zero.
    pub abs: f64,
    pub step: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self {
            rel: 1e-3,
            abs: 1e-6,
            step: 1e-6,
        }
    }
}

impl Tolerance {
    pub fn accepts(&self, analytic: f64, numeric: f64) -> bool {
        (analytic - numeric).abs() <= self.rel * analytic.abs().max(numeric.abs()) + self.abs
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    /// Coordinates where a perturbation crossed a kink (ReLU, max, clamp).
    pub skipped: usize,
    pub max_rel_err: f64,
    pub failures: Vec<String>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.checked > 0
    }

    fn record(&mut self, what: &str, analytic: f64, numeric: f64, tol: &Tolerance) {
        self.checked += 1;
        let scale = analytic.abs().max(numeric.abs());
        if scale > tol.abs {
            self.max_rel_err = self.max_rel_err.max((analytic - numeric).abs() / scale);
        }
        if !tol.accepts(analytic, numeric) {
            self.failures.push(format!(
                "{what}: analytic {analytic:e} vs numeric {numeric:e}"
            ));
        }
    }

    pub fn merge(&mut self, other: GradCheckReport) {
        self.checked += other.checked;
        self.skipped += other.skipped;
        self.max_rel_err = self.max_rel_err.max(other.max_rel_err);
        self.failures.extend(other.failures);
    }
}

/// Reduces a non-scalar output to a scalar through a fixed random projection
/// so that every output element influences the checked loss.
fn project(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    if g.value(y).numel() == 1 && g.shape(y).is_empty() {
        return Ok(y);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let shape = g.shape(y).to_vec();
    let n = g.value(y).numel();
    let r = Tensor::new(
        &shape,
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )?;
    let r = g.input(r);
    let z = g.mul(y, r)?;
    Ok(g.sum(z))
}

/// Checks `d loss / d input` for every element of every input, where `build`
/// records an operation on the given leaves.
pub fn check_op<F>(
    inputs: &[Tensor<f64>],
    seed: u64,
    tol: Tolerance,
    build: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<(f64, Vec<u32>, Graph<f64>, Vec<Var>, Var)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values
            .iter()
            .map(|t| g.input_with_grad(t.clone()))
            .collect();
        let y = build(&mut g, &vars)?;
        let loss = project(&mut g, y, seed)?;
        Ok((g.value(loss).item(), g.branch_signature(), g, vars, loss))
    };
    let (_, sig, mut g, vars, loss) = eval(inputs)?;
    g.backward(loss, &mut crate::tensor::ParamStore::new())?;
    let mut report = GradCheckReport::default();
    for (which, v) in vars.iter().enumerate() {
        let analytic = g
            .grad(*v)
            .map(|t| t.into_data())
            .unwrap_or_else(|| vec![0.0; inputs[which].numel()]);
        for i in 0..inputs[which].numel() {
            let mut plus = inputs.to_vec();
            plus[which].data_mut()[i] += tol.step;
            let mut minus = inputs.to_vec();
            minus[which].data_mut()[i] -= tol.step;
            let (fp, sp, ..) = eval(&plus)?;
            let (fm, sm, ..) = eval(&minus)?;
            if sp != sig || sm != sig {
                report.skipped += 1;
                continue;
            }
            let numeric = (fp - fm) / (2.0 * tol.step);
            report.record(&format!("input {which}[{i}]"), analytic[i], numeric, &tol);
        }
    }
    Ok(report)
}

/// Loss and branch signature of one train-mode forward pass.
fn model_loss(
    model: &mut Model<f64>,
    batch: &PatchBatch<f64>,
    target: &Tensor<f64>,
    lambdas: (f64, f64),
) -> Result<(f64, Vec<u32>)> {
    let mut g = Graph::new();
    let (hs, lidar) = model.inputs(&mut g, batch);
    let out = model.forward(&mut g, hs, lidar, Mode::Train)?;
    let l = total_loss(&mut g, &out, target, lambdas.0, lambdas.1)?;
    Ok((g.value(l.l).item(), g.branch_signature()))
}

/// Checks the composite loss gradient for every parameter element of `model`.
pub fn check_model(
    model: &mut Model<f64>,
    batch: &PatchBatch<f64>,
    target: &Tensor<f64>,
    lambdas: (f64, f64),
    tol: Tolerance,
) -> Result<GradCheckReport> {
    let mut g = Graph::new();
    let (hs, lidar) = model.inputs(&mut g, batch);
    let out = model.forward(&mut g, hs, lidar, Mode::Train)?;
    let l = total_loss(&mut g, &out, target, lambdas.0, lambdas.1)?;
    let sig = g.branch_signature();
    model.store.zero_grads();
    g.backward(l.l, &mut model.store)?;

    let ids: Vec<_> = model.store.ids().collect();
    let mut report = GradCheckReport::default();
    for id in ids {
        let analytic = model.store.grad(id).expect("trainable").data().to_vec();
        let name = model.store.get(id).name.clone();
        for (i, &a) in analytic.iter().enumerate() {
            let orig = model.store.value(id).data()[i];
            model.store.get_mut(id).value.data_mut()[i] = orig + tol.step;
            let (fp, sp) = model_loss(model, batch, target, lambdas)?;
            model.store.get_mut(id).value.data_mut()[i] = orig - tol.step;
            let (fm, sm) = model_loss(model, batch, target, lambdas)?;
            model.store.get_mut(id).value.data_mut()[i] = orig;
            if sp != sig || sm != sig {
                report.skipped += 1;
                continue;
            }
            report.record(
                &format!("{name}[{i}]"),
                a,
                (fp - fm) / (2.0 * tol.step),
                &tol,
            );
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_passes_and_wrong_gradient_fails() {
        let x = Tensor::from_f64(&[3], &[0.5, -1.0, 2.0]).unwrap();
        let ok = check_op(std::slice::from_ref(&x), 0, Tolerance::default(), |g, v| {
            g.mul(v[0], v[0])
        })
        .unwrap();
        assert!(ok.passed(), "{:?}", ok.failures);
        assert_eq!(ok.checked, 3);

        let t = Tolerance::default();
        assert!(t.accepts(1.0, 1.0005));
        assert!(!t.accepts(1.0, 1.01));
        assert!(t.accepts(0.0, 5e-7));
    }
}
