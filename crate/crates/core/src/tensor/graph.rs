use std::collections::BTreeMap;

use crate::error::{shape_err, Error, Result};

use super::kernels::{col2im_3x3, im2col_3x3, max_pool2, Dims4};
use super::{ParamId, ParamStore, Real, RunningStats, Tensor};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Infer,
}

/// Probability clamp applied before the logarithms of the cross-entropy.
pub const BCE_EPS: f64 = 1e-7;

enum Op<T> {
    Input,
    Param,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        cols: Vec<T>,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    Relu(Var),
    MaxPool2 {
        input: Var,
        argmax: Vec<usize>,
    },
    Linear {
        input: Var,
        weight: Var,
    },
    Softmax(Var),
    Bce {
        pred: Var,
        target: Vec<T>,
        clamped: Vec<bool>,
    },
    Add(Var, Var),
    Mul(Var, Var),
    ElemMax(Var, Var),
    Concat(Var, Var),
    Reshape(Var),
    Sum(Var),
    LinComb(Vec<(Var, T)>),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Tape of the operations applied during one forward pass.
///
/// Nodes are appended in execution order, which is a topological order of the
/// computation; [`Graph::backward`] walks them in exact reverse and may be
/// called once.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    params: BTreeMap<ParamId, Var>,
    grads: Vec<Option<Vec<T>>>,
    consumed: bool,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: BTreeMap::new(),
            grads: Vec::new(),
            consumed: false,
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant leaf.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Input, false)
    }

    /// Leaf whose gradient is kept on the graph (see [`Graph::grad`]).
    pub fn input_with_grad(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Input, true)
    }

    /// Leaf bound to a stored parameter. Repeated calls with the same id return
    /// the same variable, so every use accumulates into one gradient.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let p = store.get(id);
        let v = self.push(p.value.clone(), Op::Param, p.requires_grad);
        self.params.insert(id, v);
        v
    }

    /// Gradient of the last backward pass with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Tensor::new(self.shape(v), g.clone()).ok()
    }

    pub fn conv2d_same(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        let ws = self.shape(weight).to_vec();
        if xs.len() != 4 || ws.len() != 4 {
            return Err(shape_err!(
                "conv2d expects rank-4 input and weight, got {xs:?} and {ws:?}"
            ));
        }
        if ws[2] != 3 || ws[3] != 3 {
            return Err(shape_err!(
                "conv2d kernel must be 3x3, got {}x{}",
                ws[2],
                ws[3]
            ));
        }
        if ws[1] != xs[1] {
            return Err(shape_err!(
                "conv2d channel mismatch: input has {}, weight expects {}",
                xs[1],
                ws[1]
            ));
        }
        let c_out = ws[0];
        if let Some(b) = bias {
            if self.shape(b) != [c_out] {
                return Err(shape_err!("conv2d bias must have shape [{c_out}]"));
            }
        }
        let d = Dims4::from_shape(&xs);
        let hw = d.plane();
        let cols_n = d.n * hw;
        let k = d.c * 9;
        let cols = im2col_3x3(self.value(input).data(), d);
        let mut mat = vec![T::zero(); c_out * cols_n];
        T::gemm(
            c_out,
            k,
            cols_n,
            T::one(),
            self.value(weight).data(),
            (k as isize, 1),
            &cols,
            (cols_n as isize, 1),
            T::zero(),
            &mut mat,
            (cols_n as isize, 1),
        );
        let bias_vals = bias.map(|b| self.value(b).data().to_vec());
        let mut out = vec![T::zero(); d.n * c_out * hw];
        for co in 0..c_out {
            let b = bias_vals.as_ref().map_or(T::zero(), |bv| bv[co]);
            for n in 0..d.n {
                let src = &mat[co * cols_n + n * hw..co * cols_n + (n + 1) * hw];
                let dst = &mut out[(n * c_out + co) * hw..(n * c_out + co + 1) * hw];
                for (o, &s) in dst.iter_mut().zip(src) {
                    *o = s + b;
                }
            }
        }
        let mut deps = vec![input, weight];
        deps.extend(bias);
        let rg = self.needs(&deps);
        let value = Tensor::new(&[d.n, c_out, d.h, d.w], out)?;
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
                cols: if rg { cols } else { Vec::new() },
            },
            rg,
        ))
    }

    /// Per-channel batch normalization over `N*H*W`. Train mode normalizes with
    /// the batch statistics and folds them into `stats`; infer mode uses the
    /// running statistics.
    pub fn batch_norm2d(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        stats: &mut RunningStats<T>,
        mode: Mode,
    ) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        if xs.len() != 4 {
            return Err(shape_err!("batch_norm2d expects rank-4 input, got {xs:?}"));
        }
        let d = Dims4::from_shape(&xs);
        if self.shape(gamma) != [d.c] || self.shape(beta) != [d.c] || stats.channels() != d.c {
            return Err(shape_err!(
                "batch_norm2d parameters must have {} channels",
                d.c
            ));
        }
        let count = d.n * d.plane();
        if mode == Mode::Train && count < 2 {
            return Err(shape_err!(
                "batch_norm2d in train mode needs at least 2 values per channel, got {count}"
            ));
        }
        let x = self.value(input).data();
        let hw = d.plane();
        let (mean, var) = match mode {
            Mode::Train => {
                let inv_count = T::one() / T::from_usize(count).unwrap();
                let mut mean = vec![T::zero(); d.c];
                let mut var = vec![T::zero(); d.c];
                for c in 0..d.c {
                    let mut s = T::zero();
                    for n in 0..d.n {
                        let plane = &x[(n * d.c + c) * hw..(n * d.c + c + 1) * hw];
                        s = s + plane.iter().copied().sum::<T>();
                    }
                    let m = s * inv_count;
                    let mut ss = T::zero();
                    for n in 0..d.n {
                        for &v in &x[(n * d.c + c) * hw..(n * d.c + c + 1) * hw] {
                            ss = ss + (v - m) * (v - m);
                        }
                    }
                    mean[c] = m;
                    var[c] = ss * inv_count;
                }
                (mean, var)
            }
            Mode::Infer => (stats.mean.clone(), stats.var.clone()),
        };
        let inv_std: Vec<T> = var
            .iter()
            .map(|&v| T::one() / (v + stats.eps).sqrt())
            .collect();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![T::zero(); x.len()];
        let mut out = vec![T::zero(); x.len()];
        for n in 0..d.n {
            for c in 0..d.c {
                for i in (n * d.c + c) * hw..(n * d.c + c + 1) * hw {
                    let h = (x[i] - mean[c]) * inv_std[c];
                    xhat[i] = h;
                    out[i] = g[c] * h + b[c];
                }
            }
        }
        if mode == Mode::Train {
            stats.update(&mean, &var, count);
        }
        let rg = self.needs(&[input, gamma, beta]);
        let value = Tensor::new(&xs, out)?;
        Ok(self.push(
            value,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats: mode == Mode::Train,
            },
            rg,
        ))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let v = self.value(input);
        let data = v
            .data()
            .iter()
            .map(|&x| if x > T::zero() { x } else { T::zero() })
            .collect();
        let value = Tensor::new(v.shape(), data).expect("same shape");
        let rg = self.needs(&[input]);
        self.push(value, Op::Relu(input), rg)
    }

    pub fn max_pool2(&mut self, input: Var) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        if xs.len() != 4 {
            return Err(shape_err!("max_pool2 expects rank-4 input, got {xs:?}"));
        }
        if xs[2] < 2 || xs[3] < 2 {
            return Err(shape_err!(
                "max_pool2 needs spatial extents of at least 2, got {}x{}",
                xs[2],
                xs[3]
            ));
        }
        let d = Dims4::from_shape(&xs);
        let (out, argmax) = max_pool2(self.value(input).data(), d);
        let value = Tensor::new(&[d.n, d.c, d.h / 2, d.w / 2], out)?;
        let rg = self.needs(&[input]);
        Ok(self.push(value, Op::MaxPool2 { input, argmax }, rg))
    }

    /// `input [N, D]` times `weight [C, D]` transposed.
    pub fn linear(&mut self, input: Var, weight: Var) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        let ws = self.shape(weight).to_vec();
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(shape_err!(
                "linear: input {xs:?} incompatible with weight {ws:?}"
            ));
        }
        let (n, dim, c) = (xs[0], xs[1], ws[0]);
        let mut out = vec![T::zero(); n * c];
        T::gemm(
            n,
            dim,
            c,
            T::one(),
            self.value(input).data(),
            (dim as isize, 1),
            self.value(weight).data(),
            (1, dim as isize),
            T::zero(),
            &mut out,
            (c as isize, 1),
        );
        let rg = self.needs(&[input, weight]);
        Ok(self.push(Tensor::new(&[n, c], out)?, Op::Linear { input, weight }, rg))
    }

    /// Row-wise softmax of a `[N, C]` input.
    pub fn softmax(&mut self, input: Var) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        if xs.len() != 2 {
            return Err(shape_err!("softmax expects [N, C], got {xs:?}"));
        }
        let c = xs[1];
        let mut out = self.value(input).data().to_vec();
        for row in out.chunks_mut(c) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut s = T::zero();
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s = s + *v;
            }
            for v in row.iter_mut() {
                *v = *v / s;
            }
        }
        let rg = self.needs(&[input]);
        Ok(self.push(Tensor::new(&xs, out)?, Op::Softmax(input), rg))
    }

    /// Elementwise binary cross-entropy summed over outputs and averaged over
    /// samples: `-(1/N) sum [y log p + (1 - y) log(1 - p)]`, with `p` clamped
    /// to `[BCE_EPS, 1 - BCE_EPS]`.
    pub fn bce_loss(&mut self, pred: Var, target: &Tensor<T>) -> Result<Var> {
        let ps = self.shape(pred).to_vec();
        if ps.len() != 2 || ps.as_slice() != target.shape() {
            return Err(shape_err!(
                "bce_loss: prediction {ps:?} and target {:?} differ",
                target.shape()
            ));
        }
        let n = T::from_usize(ps[0]).unwrap();
        let lo = T::from_f64_lossy(BCE_EPS);
        let hi = T::one() - lo;
        let mut clamped = Vec::with_capacity(target.numel());
        let mut total = T::zero();
        for (&p, &y) in self.value(pred).data().iter().zip(target.data()) {
            let q = p.max(lo).min(hi);
            clamped.push(p < lo || p > hi);
            total = total + y * q.ln() + (T::one() - y) * (T::one() - q).ln();
        }
        let value = Tensor::scalar(-total / n);
        let rg = self.needs(&[pred]);
        Ok(self.push(
            value,
            Op::Bce {
                pred,
                target: target.data().to_vec(),
                clamped,
            },
            rg,
        ))
    }

    fn zip_with(
        &mut self,
        a: Var,
        b: Var,
        what: &str,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if shape.as_slice() != self.shape(b) {
            return Err(shape_err!(
                "{what}: shapes {shape:?} and {:?} differ",
                self.shape(b)
            ));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let rg = self.needs(&[a, b]);
        Ok(self.push(Tensor::new(&shape, data)?, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// Elementwise maximum; on exact ties the gradient is split evenly.
    pub fn elem_max(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "elem_max", |x, y| x.max(y), Op::ElemMax(a, b))
    }

    /// Feature-axis concatenation of `[N, D1]` and `[N, D2]`.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() != 2 || sb.len() != 2 || sa[0] != sb[0] {
            return Err(shape_err!(
                "concat: shapes {sa:?} and {sb:?} are incompatible"
            ));
        }
        let (n, d1, d2) = (sa[0], sa[1], sb[1]);
        let mut out = Vec::with_capacity(n * (d1 + d2));
        for i in 0..n {
            out.extend_from_slice(&self.value(a).data()[i * d1..(i + 1) * d1]);
            out.extend_from_slice(&self.value(b).data()[i * d2..(i + 1) * d2]);
        }
        let rg = self.needs(&[a, b]);
        Ok(self.push(Tensor::new(&[n, d1 + d2], out)?, Op::Concat(a, b), rg))
    }

    /// `[N, ...]` to `[N, prod(...)]`.
    pub fn flatten(&mut self, input: Var) -> Result<Var> {
        let s = self.shape(input).to_vec();
        if s.is_empty() {
            return Err(shape_err!("flatten of a scalar"));
        }
        let rest: usize = s[1..].iter().product();
        let value = self.value(input).clone().reshape(&[s[0], rest])?;
        let rg = self.needs(&[input]);
        Ok(self.push(value, Op::Reshape(input), rg))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let total = self.value(input).data().iter().copied().sum();
        let rg = self.needs(&[input]);
        self.push(Tensor::scalar(total), Op::Sum(input), rg)
    }

    /// `sum_i coeff_i * var_i` over same-shaped variables.
    pub fn lin_comb(&mut self, terms: &[(Var, T)]) -> Result<Var> {
        let Some(&(first, _)) = terms.first() else {
            return Err(shape_err!("lin_comb needs at least one term"));
        };
        let shape = self.shape(first).to_vec();
        let mut out = vec![T::zero(); self.value(first).numel()];
        for &(v, c) in terms {
            if self.shape(v) != shape.as_slice() {
                return Err(shape_err!(
                    "lin_comb: mixed shapes {shape:?} and {:?}",
                    self.shape(v)
                ));
            }
            for (o, &x) in out.iter_mut().zip(self.value(v).data()) {
                *o = *o + c * x;
            }
        }
        let vars: Vec<Var> = terms.iter().map(|t| t.0).collect();
        let rg = self.needs(&vars);
        Ok(self.push(Tensor::new(&shape, out)?, Op::LinComb(terms.to_vec()), rg))
    }

    /// Discrete choices made by the non-smooth operations (ReLU masks, pooling
    /// argmaxes, max-fusion sides, probability clamps). Two evaluations with
    /// equal signatures lie on the same smooth piece of the function.
    pub fn branch_signature(&self) -> Vec<u32> {
        let mut sig = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(x) => sig.extend(
                    self.value(*x)
                        .data()
                        .iter()
                        .map(|&v| u32::from(v > T::zero())),
                ),
                Op::MaxPool2 { argmax, .. } => sig.extend(argmax.iter().map(|&i| i as u32)),
                Op::ElemMax(a, b) => {
                    sig.extend(self.value(*a).data().iter().zip(self.value(*b).data()).map(
                        |(x, y)| match x.partial_cmp(y) {
                            Some(std::cmp::Ordering::Greater) => 0,
                            Some(std::cmp::Ordering::Less) => 2,
                            _ => 1,
                        },
                    ))
                }
                Op::Bce { clamped, .. } => sig.extend(clamped.iter().map(|&c| u32::from(c))),
                _ => {}
            }
        }
        sig
    }

    /// Reverse-mode sweep from a scalar `loss`. Gradients of parameter leaves
    /// are added into `store`; gradients of every other node stay queryable via
    /// [`Graph::grad`]. The graph is consumed.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore<T>) -> Result<()> {
        if self.consumed {
            return Err(Error::Usage(
                "backward called twice on the same graph".into(),
            ));
        }
        if self.value(loss).numel() != 1 {
            return Err(shape_err!(
                "backward needs a scalar loss, got {:?}",
                self.shape(loss)
            ));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..self.nodes.len()).rev() {
            let Some(gout) = grads[i].take() else {
                continue;
            };
            if self.nodes[i].requires_grad {
                self.backward_node(i, &gout, &mut grads);
            }
            grads[i] = Some(gout);
        }

        for (&id, &v) in &self.params {
            if !self.nodes[v.0].requires_grad {
                continue;
            }
            if let Some(g) = &grads[v.0] {
                store.accumulate_grad(id, g)?;
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn backward_node(&self, i: usize, gout: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [T])| {
            let len = self.nodes[v.0].value.numel();
            f(grads[v.0].get_or_insert_with(|| vec![T::zero(); len]));
        };

        match &node.op {
            Op::Input | Op::Param => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                cols,
            } => {
                let d = Dims4::from_shape(self.shape(*input));
                let c_out = self.shape(*weight)[0];
                let hw = d.plane();
                let cols_n = d.n * hw;
                let k = d.c * 9;
                let mut dmat = vec![T::zero(); c_out * cols_n];
                for n in 0..d.n {
                    for co in 0..c_out {
                        dmat[co * cols_n + n * hw..co * cols_n + (n + 1) * hw].copy_from_slice(
                            &gout[(n * c_out + co) * hw..(n * c_out + co + 1) * hw],
                        );
                    }
                }
                if wants(*weight) {
                    acc(*weight, &mut |gw| {
                        T::gemm(
                            c_out,
                            cols_n,
                            k,
                            T::one(),
                            &dmat,
                            (cols_n as isize, 1),
                            cols,
                            (1, cols_n as isize),
                            T::one(),
                            gw,
                            (k as isize, 1),
                        )
                    });
                }
                if let Some(b) = bias {
                    if wants(*b) {
                        acc(*b, &mut |gb| {
                            for (co, g) in gb.iter_mut().enumerate() {
                                let row = &dmat[co * cols_n..(co + 1) * cols_n];
                                *g = *g + row.iter().copied().sum::<T>();
                            }
                        });
                    }
                }
                if wants(*input) {
                    let mut dcols = vec![T::zero(); k * cols_n];
                    T::gemm(
                        k,
                        c_out,
                        cols_n,
                        T::one(),
                        self.value(*weight).data(),
                        (1, k as isize),
                        &dmat,
                        (cols_n as isize, 1),
                        T::zero(),
                        &mut dcols,
                        (cols_n as isize, 1),
                    );
                    acc(*input, &mut |gx| col2im_3x3(&dcols, d, gx));
                }
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let d = Dims4::from_shape(self.shape(*input));
                let hw = d.plane();
                let m = T::from_usize(d.n * hw).unwrap();
                let g = self.value(*gamma).data();
                let mut sum_dy = vec![T::zero(); d.c];
                let mut sum_dy_xhat = vec![T::zero(); d.c];
                for n in 0..d.n {
                    for c in 0..d.c {
                        for j in (n * d.c + c) * hw..(n * d.c + c + 1) * hw {
                            sum_dy[c] = sum_dy[c] + gout[j];
                            sum_dy_xhat[c] = sum_dy_xhat[c] + gout[j] * xhat[j];
                        }
                    }
                }
                if wants(*gamma) {
                    acc(*gamma, &mut |gg| {
                        for c in 0..d.c {
                            gg[c] = gg[c] + sum_dy_xhat[c];
                        }
                    });
                }
                if wants(*beta) {
                    acc(*beta, &mut |gb| {
                        for c in 0..d.c {
                            gb[c] = gb[c] + sum_dy[c];
                        }
                    });
                }
                if wants(*input) {
                    acc(*input, &mut |gx| {
                        for n in 0..d.n {
                            for c in 0..d.c {
                                let scale = g[c] * inv_std[c];
                                let mean_dy = sum_dy[c] / m;
                                let mean_dy_xhat = sum_dy_xhat[c] / m;
                                for j in (n * d.c + c) * hw..(n * d.c + c + 1) * hw {
                                    let delta = if *batch_stats {
                                        scale * (gout[j] - mean_dy - xhat[j] * mean_dy_xhat)
                                    } else {
                                        scale * gout[j]
                                    };
                                    gx[j] = gx[j] + delta;
                                }
                            }
                        }
                    });
                }
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                acc(*x, &mut |gx| {
                    for j in 0..gx.len() {
                        if xv[j] > T::zero() {
                            gx[j] = gx[j] + gout[j];
                        }
                    }
                });
            }
            Op::MaxPool2 { input, argmax } => {
                acc(*input, &mut |gx| {
                    for (o, &src) in argmax.iter().enumerate() {
                        gx[src] = gx[src] + gout[o];
                    }
                });
            }
            Op::Linear { input, weight } => {
                let xs = self.shape(*input);
                let (n, dim) = (xs[0], xs[1]);
                let c = self.shape(*weight)[0];
                if wants(*input) {
                    acc(*input, &mut |gx| {
                        T::gemm(
                            n,
                            c,
                            dim,
                            T::one(),
                            gout,
                            (c as isize, 1),
                            self.value(*weight).data(),
                            (dim as isize, 1),
                            T::one(),
                            gx,
                            (dim as isize, 1),
                        )
                    });
                }
                if wants(*weight) {
                    acc(*weight, &mut |gw| {
                        T::gemm(
                            c,
                            n,
                            dim,
                            T::one(),
                            gout,
                            (1, c as isize),
                            self.value(*input).data(),
                            (dim as isize, 1),
                            T::one(),
                            gw,
                            (dim as isize, 1),
                        )
                    });
                }
            }
            Op::Softmax(x) => {
                let y = node.value.data();
                let c = node.value.shape()[1];
                acc(*x, &mut |gx| {
                    for r in 0..y.len() / c {
                        let row = r * c..(r + 1) * c;
                        let dot: T = row.clone().map(|j| gout[j] * y[j]).sum();
                        for j in row {
                            gx[j] = gx[j] + y[j] * (gout[j] - dot);
                        }
                    }
                });
            }
            Op::Bce {
                pred,
                target,
                clamped,
            } => {
                let p = self.value(*pred).data();
                let n = T::from_usize(self.shape(*pred)[0]).unwrap();
                let scale = gout[0] / n;
                acc(*pred, &mut |gp| {
                    for j in 0..gp.len() {
                        if clamped[j] {
                            continue;
                        }
                        let y = target[j];
                        let d = (T::one() - y) / (T::one() - p[j]) - y / p[j];
                        gp[j] = gp[j] + scale * d;
                    }
                });
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if wants(v) {
                        acc(v, &mut |g| {
                            g.iter_mut().zip(gout).for_each(|(g, &d)| *g = *g + d)
                        });
                    }
                }
            }
            Op::Mul(a, b) => {
                for (v, other) in [(*a, *b), (*b, *a)] {
                    if wants(v) {
                        let o = self.value(other).data();
                        acc(v, &mut |g| {
                            for j in 0..g.len() {
                                g[j] = g[j] + gout[j] * o[j];
                            }
                        });
                    }
                }
            }
            Op::ElemMax(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                let half = T::from_f64_lossy(0.5);
                for (v, is_a) in [(*a, true), (*b, false)] {
                    if wants(v) {
                        acc(v, &mut |g| {
                            for j in 0..g.len() {
                                let share = if av[j] == bv[j] {
                                    half
                                } else if (av[j] > bv[j]) == is_a {
                                    T::one()
                                } else {
                                    T::zero()
                                };
                                g[j] = g[j] + share * gout[j];
                            }
                        });
                    }
                }
            }
            Op::Concat(a, b) => {
                let n = self.shape(*a)[0];
                let d1 = self.shape(*a)[1];
                let d2 = self.shape(*b)[1];
                let width = d1 + d2;
                if wants(*a) {
                    acc(*a, &mut |g| {
                        for r in 0..n {
                            for j in 0..d1 {
                                g[r * d1 + j] = g[r * d1 + j] + gout[r * width + j];
                            }
                        }
                    });
                }
                if wants(*b) {
                    acc(*b, &mut |g| {
                        for r in 0..n {
                            for j in 0..d2 {
                                g[r * d2 + j] = g[r * d2 + j] + gout[r * width + d1 + j];
                            }
                        }
                    });
                }
            }
            Op::Reshape(x) => {
                acc(*x, &mut |g| {
                    g.iter_mut().zip(gout).for_each(|(g, &d)| *g = *g + d)
                });
            }
            Op::Sum(x) => {
                acc(*x, &mut |g| g.iter_mut().for_each(|g| *g = *g + gout[0]));
            }
            Op::LinComb(terms) => {
                for &(v, c) in terms {
                    if wants(v) {
                        acc(v, &mut |g| {
                            g.iter_mut().zip(gout).for_each(|(g, &d)| *g = *g + c * d)
                        });
                    }
                }
            }
        }
    }
}
