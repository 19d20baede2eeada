use std::collections::BTreeMap;

use super::kernels;
use super::Tensor;
use crate::error::{AsiError, Result};
use crate::scalar::Scalar;

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Batch-norm behaviour for one call.
#[derive(Clone, Copy, Debug)]
pub enum BnMode<'a, T> {
    /// Normalise with batch statistics.
    Train { eps: T },
    /// Normalise with stored running statistics.
    Eval { mean: &'a [T], var: &'a [T], eps: T },
}

/// Per-channel statistics of one training-mode batch-norm call. `var` is the
/// unbiased estimate, ready to be folded into running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

enum Op<T> {
    Leaf,
    Conv2d {
        x: Var,
        weight: Var,
        bias: Option<Var>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor<T>,
        inv_std: Vec<T>,
        train: bool,
    },
    AvgPool2(Var),
    Upsample2(Var),
    LeakyRelu {
        x: Var,
        slope: T,
    },
    Sigmoid(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Mean(Var),
    Mse(Var, Var),
    Concat(Vec<Var>),
    Narrow {
        x: Var,
        start: usize,
    },
    SepFilter {
        x: Var,
        kernel: Vec<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    grad: Option<Tensor<T>>,
}

/// Tape of recorded operations. Nodes are appended in execution order and
/// `backward` visits them in exact reverse order.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    params: BTreeMap<String, Var>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: BTreeMap::new(),
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Constant input; no gradient is tracked.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Leaf that accumulates a gradient but is not a named parameter.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Named trainable parameter. Registering the same name twice returns the
    /// existing handle.
    pub fn param(&mut self, name: &str, t: &Tensor<T>) -> Var {
        if let Some(&v) = self.params.get(name) {
            return v;
        }
        let v = self.push(t.clone(), Op::Leaf, true);
        self.params.insert(name.to_owned(), v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn shape(&self, v: Var) -> [usize; 4] {
        self.nodes[v.0].value.shape()
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(AsiError::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    /// 3×3 cross-correlation, stride 1, zero padding 1.
    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let xs = self.shape(x);
        let ws = self.shape(weight);
        if ws[2] != 3 || ws[3] != 3 {
            return Err(AsiError::Shape(format!(
                "conv2d supports 3x3 kernels only, got {ws:?}"
            )));
        }
        if ws[1] != xs[1] {
            return Err(AsiError::Shape(format!(
                "conv2d channel mismatch: input has {} channels, weight expects {}",
                xs[1], ws[1]
            )));
        }
        if let Some(b) = bias {
            if self.shape(b) != [1, ws[0], 1, 1] {
                return Err(AsiError::Shape(format!(
                    "conv2d bias shape {:?}",
                    self.shape(b)
                )));
            }
        }
        let out = kernels::conv3x3_forward(
            self.value(x),
            self.value(weight),
            bias.map(|b| self.value(b)),
        );
        let mut deps = vec![x, weight];
        deps.extend(bias);
        let rg = self.needs(&deps);
        Ok(self.push(out, Op::Conv2d { x, weight, bias }, rg))
    }

    /// Per-channel batch normalisation over `(N, H, W)`. In training mode the
    /// batch statistics are returned for the caller to fold into running
    /// statistics; a zero-variance channel falls back on the `eps` floor.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BnMode<'_, T>,
    ) -> Result<(Var, Option<BatchStats<T>>)> {
        let [n, c, h, w] = self.shape(x);
        for p in [gamma, beta] {
            if self.shape(p) != [1, c, 1, 1] {
                return Err(AsiError::Shape(format!(
                    "batch_norm affine shape {:?} for {c} channels",
                    self.shape(p)
                )));
            }
        }
        let count = n * h * w;
        let hw = h * w;
        let xv = self.value(x);
        let (mean, var, eps, train) = match mode {
            BnMode::Train { eps } => {
                let mut mean = vec![T::zero(); c];
                let mut var = vec![T::zero(); c];
                for ch in 0..c {
                    let mut s = T::zero();
                    for b in 0..n {
                        let o = (b * c + ch) * hw;
                        s = s + xv.data()[o..o + hw].iter().copied().sum::<T>();
                    }
                    let m = s / T::c(count as f64);
                    let mut v = T::zero();
                    for b in 0..n {
                        let o = (b * c + ch) * hw;
                        for &e in &xv.data()[o..o + hw] {
                            v = v + (e - m) * (e - m);
                        }
                    }
                    mean[ch] = m;
                    var[ch] = v / T::c(count as f64);
                }
                (mean, var, eps, true)
            }
            BnMode::Eval { mean, var, eps } => {
                if mean.len() != c || var.len() != c {
                    return Err(AsiError::Shape("batch_norm running stats length".into()));
                }
                (mean.to_vec(), var.to_vec(), eps, false)
            }
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut xhat = Tensor::zeros([n, c, h, w]);
        let mut out = Tensor::zeros([n, c, h, w]);
        let g = self.value(gamma).data().to_vec();
        let bt = self.value(beta).data().to_vec();
        for b in 0..n {
            for ch in 0..c {
                let o = (b * c + ch) * hw;
                for i in o..o + hw {
                    let z = (xv.data()[i] - mean[ch]) * inv_std[ch];
                    xhat.data_mut()[i] = z;
                    out.data_mut()[i] = z * g[ch] + bt[ch];
                }
            }
        }
        let stats = train.then(|| {
            let unbias = if count > 1 {
                T::c(count as f64 / (count - 1) as f64)
            } else {
                T::one()
            };
            BatchStats {
                mean: mean.clone(),
                var: var.iter().map(|&v| v * unbias).collect(),
            }
        });
        let rg = self.needs(&[x, gamma, beta]);
        let v = self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            },
            rg,
        );
        Ok((v, stats))
    }

    /// 2×2 average pooling, stride 2.
    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s[2] % 2 != 0 || s[3] % 2 != 0 {
            return Err(AsiError::Shape(format!(
                "avg_pool2 needs even spatial dims, got {s:?}"
            )));
        }
        let out = kernels::avg_pool2_forward(self.value(x));
        let rg = self.needs(&[x]);
        Ok(self.push(out, Op::AvgPool2(x), rg))
    }

    /// 2×2 nearest-neighbour upsampling.
    pub fn upsample_nearest2(&mut self, x: Var) -> Var {
        let out = kernels::upsample2_forward(self.value(x));
        let rg = self.needs(&[x]);
        self.push(out, Op::Upsample2(x), rg)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Var {
        let out = self
            .value(x)
            .map(|v| if v > T::zero() { v } else { v * slope });
        let rg = self.needs(&[x]);
        self.push(out, Op::LeakyRelu { x, slope }, rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| T::one() / (T::one() + (-v).exp()));
        let rg = self.needs(&[x]);
        self.push(out, Op::Sigmoid(x), rg)
    }

    fn zip(&mut self, a: Var, b: Var, what: &str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        self.same_shape(a, b, what)?;
        let (av, bv) = (self.value(a), self.value(b));
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::from_vec(av.shape(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip(a, b, "add", |x, y| x + y)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip(a, b, "sub", |x, y| x - y)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip(a, b, "mul", |x, y| x * y)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip(a, b, "div", |x, y| x / y)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, Op::Div(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let out = self.value(x).map(|v| v * c);
        let rg = self.needs(&[x]);
        self.push(out, Op::Scale(x, c), rg)
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Var {
        let out = self.value(x).map(|v| v + c);
        let rg = self.needs(&[x]);
        self.push(out, Op::AddScalar(x), rg)
    }

    /// Mean over every element; the result has shape `[1, 1, 1, 1]`.
    pub fn mean(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).mean());
        let rg = self.needs(&[x]);
        self.push(out, Op::Mean(x), rg)
    }

    /// Mean squared error over every element.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mse")?;
        let (av, bv) = (self.value(a), self.value(b));
        let s: T = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum();
        let out = Tensor::scalar(s / T::c(av.numel() as f64));
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, Op::Mse(a, b), rg))
    }

    /// Concatenation along the batch axis.
    pub fn concat_batch(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Tensor::concat_batch(&tensors)?;
        let rg = self.needs(parts);
        Ok(self.push(out, Op::Concat(parts.to_vec()), rg))
    }

    /// Batch items `start..start + len`.
    pub fn narrow_batch(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let out = self.value(x).narrow_batch(start, len)?;
        let rg = self.needs(&[x]);
        Ok(self.push(out, Op::Narrow { x, start }, rg))
    }

    /// Per-plane "valid" correlation with the separable kernel `k ⊗ k`.
    pub fn sep_filter_valid(&mut self, x: Var, kernel: &[T]) -> Result<Var> {
        let s = self.shape(x);
        if kernel.is_empty() || kernel.len() > s[2] || kernel.len() > s[3] {
            return Err(AsiError::Shape(format!(
                "filter of width {} does not fit {s:?}",
                kernel.len()
            )));
        }
        let out = kernels::sep_filter_valid(self.value(x), kernel);
        let rg = self.needs(&[x]);
        Ok(self.push(
            out,
            Op::SepFilter {
                x,
                kernel: kernel.to_vec(),
            },
            rg,
        ))
    }

    /// Reverse-mode sweep from a single-element `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(AsiError::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.nodes[loss.0].grad = Some(Tensor::full(self.shape(loss), T::one()));
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = self.nodes[idx].grad.take() else {
                continue;
            };
            let op = std::mem::replace(&mut self.nodes[idx].op, Op::Leaf);
            self.backprop_node(idx, &op, &g);
            self.nodes[idx].op = op;
            self.nodes[idx].grad = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, g: Tensor<T>) {
        let node = &mut self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        match node.grad.as_mut() {
            Some(acc) => {
                for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a = *a + *b;
                }
            }
            None => node.grad = Some(g),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop_node(&mut self, idx: usize, op: &Op<T>, g: &Tensor<T>) {
        match *op {
            Op::Leaf => {}
            Op::Conv2d { x, weight, bias } => {
                let (dx, dw, db) =
                    kernels::conv3x3_backward(self.value(x), self.value(weight), g, self.wants(x));
                if let Some(dx) = dx {
                    self.accumulate(x, dx);
                }
                self.accumulate(weight, dw);
                if let Some(b) = bias {
                    self.accumulate(b, db);
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                ref xhat,
                ref inv_std,
                train,
            } => {
                let [n, c, h, w] = g.shape();
                let hw = h * w;
                let m = T::c((n * hw) as f64);
                let gam = self.value(gamma).data().to_vec();
                let mut dgamma = Tensor::zeros([1, c, 1, 1]);
                let mut dbeta = Tensor::zeros([1, c, 1, 1]);
                for ch in 0..c {
                    let (mut sg, mut sgx) = (T::zero(), T::zero());
                    for b in 0..n {
                        let o = (b * c + ch) * hw;
                        for i in o..o + hw {
                            sg = sg + g.data()[i];
                            sgx = sgx + g.data()[i] * xhat.data()[i];
                        }
                    }
                    dbeta.data_mut()[ch] = sg;
                    dgamma.data_mut()[ch] = sgx;
                }
                if self.wants(x) {
                    let mut dx = Tensor::zeros(g.shape());
                    for ch in 0..c {
                        let k = gam[ch] * inv_std[ch];
                        let (sg, sgx) = (dbeta.data()[ch], dgamma.data()[ch]);
                        for b in 0..n {
                            let o = (b * c + ch) * hw;
                            for i in o..o + hw {
                                dx.data_mut()[i] = if train {
                                    k * (g.data()[i] - sg / m - xhat.data()[i] * sgx / m)
                                } else {
                                    k * g.data()[i]
                                };
                            }
                        }
                    }
                    self.accumulate(x, dx);
                }
                self.accumulate(gamma, dgamma);
                self.accumulate(beta, dbeta);
            }
            Op::AvgPool2(x) => {
                let dx = kernels::avg_pool2_backward(g, self.shape(x));
                self.accumulate(x, dx);
            }
            Op::Upsample2(x) => {
                let dx = kernels::upsample2_backward(g, self.shape(x));
                self.accumulate(x, dx);
            }
            Op::LeakyRelu { x, slope } => {
                // slope is used as the subgradient at exactly zero
                let xv = self.value(x);
                let data = xv
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&v, &gv)| if v > T::zero() { gv } else { gv * slope })
                    .collect();
                let dx = Tensor::from_vec(xv.shape(), data).expect("shape");
                self.accumulate(x, dx);
            }
            Op::Sigmoid(x) => {
                let y = &self.nodes[idx].value;
                let data = y
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&s, &gv)| gv * s * (T::one() - s))
                    .collect();
                let dx = Tensor::from_vec(y.shape(), data).expect("shape");
                self.accumulate(x, dx);
            }
            Op::Add(a, b) => {
                self.accumulate(a, g.clone());
                self.accumulate(b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(a, g.clone());
                self.accumulate(b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(a), self.value(b));
                let da = zip_map(g, bv, |gv, y| gv * y);
                let db = zip_map(g, av, |gv, x| gv * x);
                self.accumulate(a, da);
                self.accumulate(b, db);
            }
            Op::Div(a, b) => {
                let (av, bv) = (self.value(a), self.value(b));
                let da = zip_map(g, bv, |gv, y| gv / y);
                let mut db = zip_map(g, av, |gv, x| -gv * x);
                for (d, &y) in db.data_mut().iter_mut().zip(bv.data()) {
                    *d = *d / (y * y);
                }
                self.accumulate(a, da);
                self.accumulate(b, db);
            }
            Op::Scale(x, c) => self.accumulate(x, g.map(|v| v * c)),
            Op::AddScalar(x) => self.accumulate(x, g.clone()),
            Op::Mean(x) => {
                let s = self.shape(x);
                let n = T::c(self.value(x).numel() as f64);
                self.accumulate(x, Tensor::full(s, g.item() / n));
            }
            Op::Mse(a, b) => {
                let (av, bv) = (self.value(a), self.value(b));
                let k = T::c(2.0) * g.item() / T::c(av.numel() as f64);
                let da = zip_map(av, bv, |x, y| k * (x - y));
                let db = da.map(|v| -v);
                self.accumulate(a, da);
                self.accumulate(b, db);
            }
            Op::Concat(ref parts) => {
                let mut start = 0;
                for &p in parts {
                    let len = self.shape(p)[0];
                    let piece = g.narrow_batch(start, len).expect("concat grad");
                    start += len;
                    self.accumulate(p, piece);
                }
            }
            Op::Narrow { x, start } => {
                let s = self.shape(x);
                let mut dx = Tensor::zeros(s);
                let per = s[1] * s[2] * s[3];
                dx.data_mut()[start * per..start * per + g.numel()].copy_from_slice(g.data());
                self.accumulate(x, dx);
            }
            Op::SepFilter { x, ref kernel } => {
                let dx = kernels::sep_filter_valid_backward(g, kernel, self.shape(x));
                self.accumulate(x, dx);
            }
        }
    }

    /// Gradient of every registered parameter after [`Graph::backward`],
    /// in lexicographic name order. Parameters the loss does not reach get
    /// an all-zero gradient.
    pub fn param_grads(&self) -> BTreeMap<String, Tensor<T>> {
        self.params
            .iter()
            .map(|(name, &v)| {
                let g = self
                    .grad(v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(self.shape(v)));
                (name.clone(), g)
            })
            .collect()
    }
}

fn zip_map<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::from_vec(a.shape(), data).expect("same shape")
}
